//! Minimal dense numeric kernel.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use gradcheck::{finite_diff_gradient, relative_error};
pub use matrix::Matrix;
pub use mlp::{Dense, Gradients, LayerGrad, Mlp, NetworkFile, Trace, ACTIVATION_TAG};

use rand::seq::SliceRandom;
use rand::Rng;

/// Shuffled index batches covering `0..len`; the last batch may be short.
pub fn minibatches<R: Rng + ?Sized>(len: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Copies the selected rows of `m` into a new matrix.
pub fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (dst, &src) in rows.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(src));
    }
    out
}
