//! Zero-access perturbations from partial Hadamard matrices.
//!
//! Rows of a Sylvester Hadamard matrix are ±1 and mutually orthogonal, so
//! scaling the first `n` rows by `ε` gives perturbations that are exactly
//! orthogonal and sit on the L∞ budget. When `d` is not a power of two the
//! matrix is built at `d̃ = 2^⌊log₂ d⌋` and padded with zero columns.

use super::align::{select_victims, AlignModel};
use super::PerturbationMatrix;
use crate::numkit::Matrix;
use crate::{Error, Result};

/// Largest power of two not exceeding `d` (`d ≥ 1`).
pub fn largest_power_of_two_at_most(d: usize) -> usize {
    assert!(d >= 1, "dimension must be positive");
    1 << (usize::BITS - 1 - d.leading_zeros())
}

/// ±1 entries of the `size × size` Sylvester matrix, built by repeated doubling
/// `H₂ₖ = [[Hₖ, Hₖ], [Hₖ, −Hₖ]]`.
pub fn sylvester_signs(size: usize) -> Result<Vec<Vec<i8>>> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::contract(format!(
            "Sylvester construction needs a power of two, got {size}"
        )));
    }
    let mut h: Vec<Vec<i8>> = vec![vec![1]];
    while h.len() < size {
        let k = h.len();
        let mut next = vec![Vec::with_capacity(2 * k); 2 * k];
        for (i, row) in h.iter().enumerate() {
            next[i].extend_from_slice(row);
            next[i].extend_from_slice(row);
            next[k + i].extend_from_slice(row);
            next[k + i].extend(row.iter().map(|v| -v));
        }
        h = next;
    }
    Ok(h)
}

/// Entry `(i, j)` of any Sylvester matrix large enough to contain it:
/// `(−1)^popcount(i & j)`, the closed form of the doubling recursion.
#[inline]
pub fn sylvester_entry(i: usize, j: usize) -> i8 {
    if (i & j).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

pub fn sylvester_hadamard(size: usize) -> Result<Matrix> {
    let signs = sylvester_signs(size)?;
    let rows: Vec<Vec<f64>> = signs
        .iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Places `ε · H[k]` on the `k`-th victim (ascending index), zero elsewhere.
pub fn hadamard_for_victims(
    victims: &[usize],
    n: usize,
    d: usize,
    epsilon: f64,
) -> Result<PerturbationMatrix> {
    if d == 0 {
        return Err(Error::contract("observation dimension must be positive"));
    }
    let width = largest_power_of_two_at_most(d);
    if victims.len() > width {
        return Err(Error::Infeasible(format!(
            "{} orthogonal rows do not fit in {width} Hadamard columns (d = {d})",
            victims.len()
        )));
    }
    let mut sorted = victims.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != victims.len() || sorted.last().is_some_and(|&v| v >= n) {
        return Err(Error::contract("victims must be distinct agent indices"));
    }
    let mut delta = Matrix::zeros(n, d);
    for (k, &agent) in sorted.iter().enumerate() {
        // Row k of the Sylvester matrix by doubling: bit b of k flips the second half.
        let row = &mut delta.row_mut(agent)[..width];
        row[0] = epsilon;
        let mut len = 1;
        while len < width {
            let (head, tail) = row.split_at_mut(len);
            let flip = if k & len != 0 { -1.0 } else { 1.0 };
            for (dst, &src) in tail[..len].iter_mut().zip(head.iter()) {
                *dst = flip * src;
            }
            len *= 2;
        }
    }
    Ok(PerturbationMatrix::exact(delta, epsilon))
}

/// First `n` Sylvester rows scaled by `ε`, zero-padded to width `d`.
pub fn hadamard_perturbation(n: usize, d: usize, epsilon: f64) -> Result<PerturbationMatrix> {
    let all: Vec<usize> = (0..n).collect();
    hadamard_for_victims(&all, n, d, epsilon)
}

/// Hadamard rows on the `m` agents the alignment network reconstructs best.
pub fn targeted_hadamard(
    model: &AlignModel,
    obs: &Matrix,
    m: usize,
    epsilon: f64,
) -> Result<PerturbationMatrix> {
    let victims = select_victims(model, obs, m)?;
    hadamard_for_victims(&victims, model.n, model.d, epsilon)
}
