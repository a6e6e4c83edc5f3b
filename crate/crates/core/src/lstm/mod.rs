//! Single-layer LSTM forecaster written from scratch.
//!
//! Each step concatenates the input with the previous hidden state,
//! `z = [x; h_prev]`, and evaluates four gate blocks over it:
//!
//! ```text
//! i = σ(W_i z + b_i)    f = σ(W_f z + b_f)
//! o = σ(W_o z + b_o)    g = tanh(W_g z + b_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```
//!
//! A linear read-out `y = W_y h_T + b_y` maps the last hidden state to the
//! next frame. Gradients come from exact backpropagation through time and
//! are checked against central finite differences in the test suite.

mod cell;
mod grad;
mod io;
mod params;
mod train;

use std::io as stdio;

use thiserror::Error;

pub use cell::{cell_step, forward_from, forward_sequence, predict_horizon, readout};
pub use grad::{
    batch_loss, bptt_gradients, grad_check, max_relative_error, mse_loss, numeric_gradients, Gradients,
    Sample,
};
pub(crate) use io::fnv1a64;
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use params::{LstmParams, LstmState};
pub use train::{clip_global_norm, evaluate_mse, train, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("io error: {0}")]
    Io(#[from] stdio::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported model version {0}")]
    Version(u16),
    #[error("corrupt model file: {0}")]
    Corruption(String),
}

pub type Result<T> = std::result::Result<T, LstmError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(LstmError::Dimension { what, expected, got })
    }
}
