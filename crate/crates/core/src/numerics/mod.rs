//! Dense rank-two tensors, a reverse-mode tape over them, trainable
//! parameters, plain SGD, and a finite-difference gradient checker.
//!
//! Only the operations the pipeline needs exist: matrix products, bias rows,
//! elementwise products, GELU, sigmoid, masked row softmax, feature
//! normalization, column concatenation, and the two losses.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_FLOOR};
pub use param::{Param, ParamId, ParamSet};
pub use tape::{masked_row_softmax, Gradients, Tape, Var};
pub use tensor::{Mask, Tensor2};

pub(crate) use tape::sigmoid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows × cols` tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor2::from_vec(rows, cols, data).expect("shape")
}

/// A fully connected layer `x · w + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = ps.add_xavier(format!("{name}.w"), fan_in, fan_out, rng);
        let b = ps.add_zeros(format!("{name}.b"), 1, fan_out);
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> crate::Result<Var> {
        let w = tape.param(ps, self.w);
        let b = tape.param(ps, self.b);
        tape.linear(x, w, b)
    }

    pub fn fan_in(&self, ps: &ParamSet) -> usize {
        ps.value(self.w).rows()
    }
}

/// Learned per-feature scale and shift around a normalization.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor2::filled(1, dim, 1.0));
        let beta = ps.add_zeros(format!("{name}.beta"), 1, dim);
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> crate::Result<Var> {
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        tape.layer_norm(x, g, b)
    }
}
