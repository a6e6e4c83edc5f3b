use super::cell::{step_unchecked, StepCache};
use super::{check_len, readout, LstmError, LstmParams, LstmState, Result};

/// One supervised example: an input window and the frame it should predict.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub window: &'a [Vec<f64>],
    pub target: &'a [f64],
}

impl<'a> Sample<'a> {
    pub fn new(window: &'a [Vec<f64>], target: &'a [f64]) -> Self {
        Sample { window, target }
    }
}

/// Gradient of the mean batch loss, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub grads: LstmParams,
}

pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    check_len("target", predicted.len(), target.len())?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predicted.len() as f64)
}

fn check_sample(s: &Sample<'_>, p: &LstmParams) -> Result<()> {
    check_len("target", p.output_size, s.target.len())?;
    for x in s.window {
        check_len("input", p.input_size, x.len())?;
    }
    Ok(())
}

fn check_batch(batch: &[Sample<'_>], p: &LstmParams) -> Result<()> {
    if batch.is_empty() {
        return Err(LstmError::InvalidArgument("empty batch".into()));
    }
    if !p.shapes_consistent() {
        return Err(LstmError::InvalidArgument("parameter tensors inconsistent with (d, h, F)".into()));
    }
    batch.iter().try_for_each(|s| check_sample(s, p))
}

/// Mean over the batch of each sample's MSE.
pub fn batch_loss(batch: &[Sample<'_>], params: &LstmParams) -> Result<f64> {
    check_batch(batch, params)?;
    let mut total = 0.0;
    for s in batch {
        let mut state = LstmState::zeros(params.hidden_size);
        for x in s.window {
            state = step_unchecked(x, &state, params).0;
        }
        total += mse_loss(&readout(&state.hidden, params), s.target)?;
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample loss and gradient accumulation into `acc`, scaled by `weight`.
pub(crate) fn accumulate_sample(s: &Sample<'_>, p: &LstmParams, weight: f64, acc: &mut LstmParams) -> f64 {
    let (d, h, out) = (p.input_size, p.hidden_size, p.output_size);
    let width = d + h;

    let mut state = LstmState::zeros(h);
    let mut caches: Vec<StepCache> = Vec::with_capacity(s.window.len());
    for x in s.window {
        let (next, cache) = step_unchecked(x, &state, p);
        caches.push(cache);
        state = next;
    }
    let y = readout(&state.hidden, p);
    let loss = y.iter().zip(s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out as f64;

    // dL/dy for the mean-square loss, times the batch weight.
    let dy: Vec<f64> = y
        .iter()
        .zip(s.target)
        .map(|(a, b)| 2.0 * (a - b) / out as f64 * weight)
        .collect();
    let mut dh = vec![0.0; h];
    for j in 0..out {
        acc.b_y[j] += dy[j];
        for r in 0..h {
            acc.w_y[j * h + r] += dy[j] * state.hidden[r];
            dh[r] += p.w_y[j * h + r] * dy[j];
        }
    }

    let mut dc = vec![0.0; h];
    let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for cache in caches.iter().rev() {
        for r in 0..h {
            let tc = cache.tanh_c[r];
            let d_o = dh[r] * tc;
            dc[r] += dh[r] * cache.o[r] * (1.0 - tc * tc);
            let d_i = dc[r] * cache.g[r];
            let d_g = dc[r] * cache.i[r];
            let d_f = dc[r] * cache.c_prev[r];
            da[0][r] = d_i * cache.i[r] * (1.0 - cache.i[r]);
            da[1][r] = d_f * cache.f[r] * (1.0 - cache.f[r]);
            da[2][r] = d_o * cache.o[r] * (1.0 - cache.o[r]);
            da[3][r] = d_g * (1.0 - cache.g[r] * cache.g[r]);
            dc[r] *= cache.f[r];
        }
        let mut dz = vec![0.0; width];
        let weights = [&p.w_i, &p.w_f, &p.w_o, &p.w_g];
        let [gw_i, gw_f, gw_o, gw_g, gb_i, gb_f, gb_o, gb_g, _, _] = acc.tensors_mut();
        let gws = [gw_i, gw_f, gw_o, gw_g];
        let gbs = [gb_i, gb_f, gb_o, gb_g];
        for k in 0..4 {
            for r in 0..h {
                let a = da[k][r];
                if a == 0.0 {
                    continue;
                }
                gbs[k][r] += a;
                let row = r * width;
                let gw = &mut gws[k][row..row + width];
                let w = &weights[k][row..row + width];
                for c in 0..width {
                    gw[c] += a * cache.z[c];
                    dz[c] += w[c] * a;
                }
            }
        }
        dh.copy_from_slice(&dz[d..]);
    }
    loss
}

/// Exact gradient of the mean batch MSE by backpropagation through time.
pub fn bptt_gradients(batch: &[Sample<'_>], params: &LstmParams) -> Result<Gradients> {
    check_batch(batch, params)?;
    let mut grads = LstmParams::zeros(params.input_size, params.hidden_size, params.output_size);
    let weight = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        loss += accumulate_sample(s, params, weight, &mut grads);
    }
    Ok(Gradients {
        loss: loss * weight,
        grads,
    })
}

/// Central finite differences of [`batch_loss`] for every parameter.
pub fn numeric_gradients(params: &LstmParams, batch: &[Sample<'_>], fd_step: f64) -> Result<LstmParams> {
    if !(fd_step > 0.0) {
        return Err(LstmError::InvalidArgument(format!("fd_step {fd_step} must be positive")));
    }
    let mut probe = params.clone();
    let mut out = LstmParams::zeros(params.input_size, params.hidden_size, params.output_size);
    for k in 0..params.param_count() {
        let orig = probe.get_flat(k);
        probe.set_flat(k, orig + fd_step);
        let plus = batch_loss(batch, &probe)?;
        probe.set_flat(k, orig - fd_step);
        let minus = batch_loss(batch, &probe)?;
        probe.set_flat(k, orig);
        out.set_flat(k, (plus - minus) / (2.0 * fd_step));
    }
    Ok(out)
}

/// Largest `|a - n| / max(|a|, |n|, 1e-12)` over all parameters.
pub fn max_relative_error(analytic: &LstmParams, numeric: &LstmParams) -> f64 {
    analytic
        .to_flat()
        .iter()
        .zip(numeric.to_flat())
        .map(|(&a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-12);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}

/// Compares BPTT against finite differences and returns the worst relative error.
pub fn grad_check(params: &LstmParams, batch: &[Sample<'_>], fd_step: f64) -> Result<f64> {
    let analytic = bptt_gradients(batch, params)?.grads;
    let numeric = numeric_gradients(params, batch, fd_step)?;
    Ok(max_relative_error(&analytic, &numeric))
}
