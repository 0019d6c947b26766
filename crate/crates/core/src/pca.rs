//! Leading eigenpairs of small symmetric positive semi-definite matrices by
//! power iteration with deflation.

use crate::rng;

pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 10_000;

/// Dense row-major `dim × dim` symmetric matrix.
#[derive(Clone, Debug)]
pub(crate) struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Adds `weight · x xᵀ`.
    pub fn add_outer(&mut self, x: &[f64], weight: f64) {
        let d = self.dim;
        for i in 0..d {
            let xi = weight * x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * d..(i + 1) * d];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += xi * xj;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::space::dot(&self.data[i * d..(i + 1) * d], v);
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub converged: bool,
}

/// Up to `k` leading eigenpairs, ordered by eigenvalue. Stops early once the
/// remaining spectrum is numerically zero, so the result may be shorter than `k`.
pub(crate) fn leading_eigenpairs(m: &SymMatrix, k: usize, seed: u64) -> Vec<EigenPair> {
    let d = m.dim;
    let floor = 1e-12 * m.trace().abs().max(f64::MIN_POSITIVE);
    let mut found: Vec<EigenPair> = Vec::with_capacity(k);
    let mut scratch = vec![0.0; d];
    for j in 0..k.min(d) {
        let mut r = rng::stream(seed, j as u64);
        let mut v = rng::random_unit_vector(&mut r, d);
        if !orthonormalize(&mut v, &found) {
            break;
        }
        let mut converged = false;
        let mut value = 0.0;
        for _ in 0..MAX_ITERATIONS {
            m.apply(&v, &mut scratch);
            let mut next = scratch.clone();
            value = crate::space::dot(&v, &next);
            if !orthonormalize(&mut next, &found) || value <= floor {
                value = 0.0;
                break;
            }
            let delta: f64 = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            v = next;
            if delta < TOLERANCE {
                converged = true;
                break;
            }
        }
        if value <= floor {
            break;
        }
        m.apply(&v, &mut scratch);
        value = crate::space::dot(&v, &scratch);
        found.push(EigenPair {
            value,
            vector: v,
            converged,
        });
    }
    found.sort_by(|a, b| b.value.total_cmp(&a.value));
    found
}

/// Gram-Schmidt against `basis`, then normalise. Returns false if nothing is left.
fn orthonormalize(v: &mut [f64], basis: &[EigenPair]) -> bool {
    let before = crate::space::norm(v);
    // two passes keep the components orthogonal to ~1e-15
    for _ in 0..2 {
        for b in basis {
            let p = crate::space::dot(v, &b.vector);
            v.iter_mut().zip(&b.vector).for_each(|(x, y)| *x -= p * y);
        }
    }
    let n = crate::space::norm(v);
    if n <= 1e-12 * before.max(f64::MIN_POSITIVE) || n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_spectrum() {
        let mut m = SymMatrix::zeros(3);
        m.data[0] = 1.0;
        m.data[4] = 5.0;
        m.data[8] = 3.0;
        let pairs = leading_eigenpairs(&m, 3, 1);
        let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        for (v, want) in values.iter().zip([5.0, 3.0, 1.0]) {
            assert!((v - want).abs() < 1e-9, "{values:?}");
        }
        assert!((pairs[0].vector[1].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rank_one_matrix_stops_after_one_component() {
        let mut m = SymMatrix::zeros(3);
        m.add_outer(&[0.0, 4.0, 0.0], 1.0);
        let pairs = leading_eigenpairs(&m, 3, 9);
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].value - 16.0).abs() < 1e-9);
    }
}
