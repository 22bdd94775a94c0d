//! Spectral normalization by power iteration with persistent singular
//! vector estimates.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::rng::{standard_normal, StreamRng};

/// Lower bound applied to the singular-value estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Left/right singular vector estimates carried across training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerIterState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PowerIterState {
    /// Random unit vectors for a `rows × cols` weight.
    pub fn random(rows: usize, cols: usize, rng: &mut StreamRng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| standard_normal(rng)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| standard_normal(rng)).collect();
        normalize(&mut u);
        normalize(&mut v);
        Self { u, v }
    }

    /// Runs `iters` power iterations on `weight` and returns `uᵀ W v`.
    pub fn iterate(&mut self, weight: &Matrix, iters: usize) -> f64 {
        for _ in 0..iters {
            // v ← Wᵀu / |Wᵀu|, u ← Wv / |Wv|
            let wt_u = Matrix::from_vec(1, self.u.len(), self.u.clone()).matmul(weight);
            self.v = wt_u.data;
            if normalize(&mut self.v) == 0.0 {
                break;
            }
            let w_v = weight.matmul_t(&Matrix::from_vec(1, self.v.len(), self.v.clone()));
            self.u = w_v.data;
            if normalize(&mut self.u) == 0.0 {
                break;
            }
        }
        self.sigma(weight)
    }

    /// Current estimate `uᵀ W v`, floored at [`SIGMA_FLOOR`].
    pub fn sigma(&self, weight: &Matrix) -> f64 {
        let w_v = weight.matmul_t(&Matrix::from_vec(1, self.v.len(), self.v.clone()));
        dot(&self.u, &w_v.data).max(SIGMA_FLOOR)
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = norm(x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Divides `weight` by its top singular value estimated with `iters`
/// power iterations from the persistent `state`. A zero matrix is returned
/// unchanged.
pub fn spectral_normalize(weight: &Matrix, state: &mut PowerIterState, iters: usize) -> Matrix {
    let sigma = state.iterate(weight, iters.max(1));
    weight.scale(1.0 / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    /// Top singular value via power iteration on WᵀW run to convergence
    /// with a fixed dense start, independent of the persistent-state path.
    fn svd_top(w: &Matrix) -> f64 {
        let wtw = w.transpose().matmul(w);
        let mut v = vec![1.0; w.cols];
        for (i, x) in v.iter_mut().enumerate() {
            *x += 0.01 * i as f64;
        }
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let next = wtw.matmul_t(&Matrix::from_vec(1, v.len(), v.clone())).data;
            lambda = norm(&next);
            v = next.iter().map(|x| x / lambda).collect();
        }
        lambda.sqrt()
    }

    #[test]
    fn diagonal_matrix_is_normalized_by_largest_entry() {
        let w = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let mut rng = stream(1, Stream::Init, 0);
        let mut st = PowerIterState::random(2, 2, &mut rng);
        let n = spectral_normalize(&w, &mut st, 50);
        let expect = [1.0, 0.0, 0.0, 0.5];
        for (a, b) in n.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_unchanged() {
        let w = Matrix::identity(3);
        let mut rng = stream(2, Stream::Init, 0);
        let mut st = PowerIterState::random(3, 3, &mut rng);
        let n = spectral_normalize(&w, &mut st, 1);
        for (a, b) in n.data.iter().zip(&w.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_exact_after_one_iteration() {
        let u = [0.6, 0.0, 0.8];
        let v = [0.0, 1.0];
        let mut w = Matrix::zeros(3, 2);
        for r in 0..3 {
            for c in 0..2 {
                w.set(r, c, u[r] * v[c]);
            }
        }
        let mut rng = stream(3, Stream::Init, 0);
        let mut st = PowerIterState::random(3, 2, &mut rng);
        let n = spectral_normalize(&w, &mut st, 1);
        for (a, b) in n.data.iter().zip(&w.data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_stays_zero() {
        let w = Matrix::zeros(2, 3);
        let mut rng = stream(4, Stream::Init, 0);
        let mut st = PowerIterState::random(2, 3, &mut rng);
        let n = spectral_normalize(&w, &mut st, 5);
        assert!(n.data.iter().all(|&x| x == 0.0));
        assert_eq!(st.sigma(&w), SIGMA_FLOOR);
    }

    #[test]
    fn normalized_random_matrices_have_unit_top_singular_value() {
        let mut rng = stream(5, Stream::Init, 0);
        for trial in 0..20 {
            let (r, c) = (2 + trial % 5, 3 + trial % 4);
            // Rows scaled geometrically keep the condition number moderate.
            let mut w = Matrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    w.set(i, j, standard_normal(&mut rng) * 10f64.powf(-(i as f64) * 0.5));
                }
            }
            let mut st = PowerIterState::random(r, c, &mut rng);
            let n = spectral_normalize(&w, &mut st, 50);
            let top = svd_top(&n);
            assert!((top - 1.0).abs() < 1e-3, "trial {trial}: {top}");
        }
    }
}
