use rand::Rng;

/// All trainable tensors of the forecaster.
///
/// Gate matrices are `hidden x (input + hidden)` and the read-out is
/// `output x hidden`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    pub w_i: Vec<f64>,
    pub w_f: Vec<f64>,
    pub w_o: Vec<f64>,
    pub w_g: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: Vec<f64>,
}

/// Hidden and cell state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden_size],
            cell: vec![0.0; hidden_size],
        }
    }
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize, output_size: usize) -> Self {
        let gate = hidden_size * (input_size + hidden_size);
        LstmParams {
            input_size,
            hidden_size,
            output_size,
            w_i: vec![0.0; gate],
            w_f: vec![0.0; gate],
            w_o: vec![0.0; gate],
            w_g: vec![0.0; gate],
            b_i: vec![0.0; hidden_size],
            b_f: vec![0.0; hidden_size],
            b_o: vec![0.0; hidden_size],
            b_g: vec![0.0; hidden_size],
            w_y: vec![0.0; output_size * hidden_size],
            b_y: vec![0.0; output_size],
        }
    }

    /// Weights uniform in `[-1/sqrt(h), 1/sqrt(h)]`, forget-gate bias 1, other
    /// biases 0.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, output_size: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input_size, hidden_size, output_size);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_g, &mut p.w_y] {
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p.b_f.fill(1.0);
        p
    }

    /// Width of the concatenated `[x; h]` vector.
    pub fn concat_size(&self) -> usize {
        self.input_size + self.hidden_size
    }

    /// `4·h·(d+h) + 4·h + F·h + F`
    pub fn param_count(&self) -> usize {
        let (d, h, f) = (self.input_size, self.hidden_size, self.output_size);
        4 * h * (d + h) + 4 * h + f * h + f
    }

    /// Tensors in serialization order.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.w_i, &self.w_f, &self.w_o, &self.w_g, &self.b_i, &self.b_f, &self.b_o, &self.b_g, &self.w_y,
            &self.b_y,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
            &mut self.w_y,
            &mut self.b_y,
        ]
    }

    pub fn expected_lengths(&self) -> [usize; 10] {
        let (d, h, f) = (self.input_size, self.hidden_size, self.output_size);
        let gate = h * (d + h);
        [gate, gate, gate, gate, h, h, h, h, f * h, f]
    }

    pub fn shapes_consistent(&self) -> bool {
        self.tensors()
            .iter()
            .zip(self.expected_lengths())
            .all(|(t, n)| t.len() == n)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Flat view of every parameter in serialization order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range")
    }

    /// Euclidean norm over every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &LstmParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}
