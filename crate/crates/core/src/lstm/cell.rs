use super::{check_len, LstmError, LstmParams, LstmState, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One step without shape checks; callers validate dimensions.
pub(crate) fn step_unchecked(x: &[f64], state: &LstmState, p: &LstmParams) -> (LstmState, StepCache) {
    let h = p.hidden_size;
    let width = p.concat_size();
    let mut z = Vec::with_capacity(width);
    z.extend_from_slice(x);
    z.extend_from_slice(&state.hidden);

    let mut i = vec![0.0; h];
    let mut f = vec![0.0; h];
    let mut o = vec![0.0; h];
    let mut g = vec![0.0; h];
    for r in 0..h {
        let row = r * width..(r + 1) * width;
        let dot = |w: &[f64]| w[row.clone()].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        i[r] = sigmoid(dot(&p.w_i) + p.b_i[r]);
        f[r] = sigmoid(dot(&p.w_f) + p.b_f[r]);
        o[r] = sigmoid(dot(&p.w_o) + p.b_o[r]);
        g[r] = (dot(&p.w_g) + p.b_g[r]).tanh();
    }
    let cell: Vec<f64> = (0..h).map(|r| f[r] * state.cell[r] + i[r] * g[r]).collect();
    let tanh_c: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
    let hidden: Vec<f64> = (0..h).map(|r| o[r] * tanh_c[r]).collect();
    let cache = StepCache {
        z,
        i,
        f,
        o,
        g,
        c_prev: state.cell.clone(),
        tanh_c,
    };
    (LstmState { hidden, cell }, cache)
}

fn check_params(p: &LstmParams) -> Result<()> {
    if p.shapes_consistent() {
        Ok(())
    } else {
        Err(LstmError::InvalidArgument("parameter tensors inconsistent with (d, h, F)".into()))
    }
}

fn check_state(state: &LstmState, p: &LstmParams) -> Result<()> {
    check_len("hidden state", p.hidden_size, state.hidden.len())?;
    check_len("cell state", p.hidden_size, state.cell.len())
}

/// Advances the cell by one input vector.
pub fn cell_step(x: &[f64], state: &LstmState, params: &LstmParams) -> Result<LstmState> {
    check_params(params)?;
    check_len("input", params.input_size, x.len())?;
    check_state(state, params)?;
    Ok(step_unchecked(x, state, params).0)
}

/// Folds [`cell_step`] over `xs` from the zero state. Returns the final
/// state and the hidden vector after every step.
pub fn forward_sequence(xs: &[Vec<f64>], params: &LstmParams) -> Result<(LstmState, Vec<Vec<f64>>)> {
    forward_from(LstmState::zeros(params.hidden_size), xs, params)
}

/// Like [`forward_sequence`] but starting from an arbitrary state.
pub fn forward_from(start: LstmState, xs: &[Vec<f64>], params: &LstmParams) -> Result<(LstmState, Vec<Vec<f64>>)> {
    check_params(params)?;
    check_state(&start, params)?;
    for x in xs {
        check_len("input", params.input_size, x.len())?;
    }
    let mut state = start;
    let mut trace = Vec::with_capacity(xs.len());
    for x in xs {
        state = step_unchecked(x, &state, params).0;
        trace.push(state.hidden.clone());
    }
    Ok((state, trace))
}

/// `W_y h + b_y`
pub fn readout(hidden: &[f64], params: &LstmParams) -> Vec<f64> {
    let h = params.hidden_size;
    (0..params.output_size)
        .map(|j| {
            params.w_y[j * h..(j + 1) * h]
                .iter()
                .zip(hidden)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + params.b_y[j]
        })
        .collect()
}

/// Forecasts `steps` frames after `window`. The first forecast reads out the
/// state after the window; each later one feeds the previous forecast back
/// in as the next input.
pub fn predict_horizon(window: &[Vec<f64>], params: &LstmParams, steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(LstmError::InvalidArgument("horizon must be at least 1".into()));
    }
    if steps > 1 {
        check_len("autoregressive output", params.input_size, params.output_size)?;
    }
    let (mut state, _) = forward_sequence(window, params)?;
    let mut out = Vec::with_capacity(steps);
    let mut y = readout(&state.hidden, params);
    out.push(y.clone());
    for _ in 1..steps {
        state = step_unchecked(&y, &state, params).0;
        y = readout(&state.hidden, params);
        out.push(y.clone());
    }
    Ok(out)
}
