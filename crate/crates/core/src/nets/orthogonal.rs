//! Classical Gram–Schmidt over expert feature rows, with its reverse-mode
//! derivative.
//!
//! `v_1 = u_1`, `v_i = u_i − Σ_{j<i} ⟨v_j, u_i⟩ / (⟨v_j, v_j⟩ + ε) · v_j`.
//! Rows are not rescaled unless `unit_normalize` is set.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabiliser added to every projector's squared norm.
pub const GRAM_SCHMIDT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramSchmidt {
    pub eps: f64,
    pub unit_normalize: bool,
}

impl Default for GramSchmidt {
    fn default() -> Self {
        Self {
            eps: GRAM_SCHMIDT_EPS,
            unit_normalize: false,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl GramSchmidt {
    pub fn normalized() -> Self {
        Self {
            unit_normalize: true,
            ..Self::default()
        }
    }

    /// Orthogonalises the `n` rows of width `d` stored row-major in `u`,
    /// writing the un-normalised result into `v` and the (optionally
    /// normalised) output into `out`.
    pub(crate) fn forward_rows(&self, u: &[f64], d: usize, v: &mut [f64], out: &mut [f64]) {
        let n = u.len() / d;
        v.copy_from_slice(u);
        for i in 0..n {
            let (done, rest) = v.split_at_mut(i * d);
            let vi = &mut rest[..d];
            let ui = &u[i * d..(i + 1) * d];
            for j in 0..i {
                let vj = &done[j * d..(j + 1) * d];
                let c = dot(vj, ui) / (dot(vj, vj) + self.eps);
                axpy(-c, vj, vi);
            }
        }
        if self.unit_normalize {
            for i in 0..n {
                let vi = &v[i * d..(i + 1) * d];
                let s = (dot(vi, vi) + self.eps).sqrt();
                for (o, x) in out[i * d..(i + 1) * d].iter_mut().zip(vi) {
                    *o = x / s;
                }
            }
        } else {
            out.copy_from_slice(v);
        }
    }

    /// Gradient with respect to `u` given the gradient of the output.
    pub(crate) fn backward_rows(&self, u: &[f64], v: &[f64], d: usize, grad_out: &[f64], grad_u: &mut [f64]) {
        let n = u.len() / d;
        let mut gv = grad_out.to_vec();
        if self.unit_normalize {
            for i in 0..n {
                let vi = &v[i * d..(i + 1) * d];
                let s2 = dot(vi, vi) + self.eps;
                let s = s2.sqrt();
                let gi = &mut gv[i * d..(i + 1) * d];
                let proj = dot(vi, gi) / (s2 * s);
                for (g, x) in gi.iter_mut().zip(vi) {
                    *g = *g / s - proj * x;
                }
            }
        }
        grad_u.fill(0.0);
        for i in (0..n).rev() {
            let ui = &u[i * d..(i + 1) * d];
            let gvi = gv[i * d..(i + 1) * d].to_vec();
            axpy(1.0, &gvi, &mut grad_u[i * d..(i + 1) * d]);
            for j in 0..i {
                let vj = &v[j * d..(j + 1) * d];
                let num = dot(vj, ui);
                let den = dot(vj, vj) + self.eps;
                let c = num / den;
                let gc = -dot(&gvi, vj);
                let dnum = gc / den;
                let dden = -gc * num / (den * den);
                let gvj = &mut gv[j * d..(j + 1) * d];
                axpy(-c, &gvi, gvj);
                axpy(dnum, ui, gvj);
                axpy(2.0 * dden, vj, gvj);
                axpy(dnum, vj, &mut grad_u[i * d..(i + 1) * d]);
            }
        }
    }

    pub fn apply(&self, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, d) = u.dim();
        if d < n {
            return Err(Error::Domain(format!(
                "cannot orthogonalise {n} vectors in dimension {d}"
            )));
        }
        let u = u.as_standard_layout();
        let flat = u.as_slice().expect("standard layout");
        crate::error::ensure_finite(flat, "Gram-Schmidt input")?;
        let mut v = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        self.forward_rows(flat, d, &mut v, &mut out);
        Ok(Array2::from_shape_vec((n, d), out).expect("shape"))
    }

    /// Vector-Jacobian product at `u` for an upstream gradient on the output.
    pub fn vjp(&self, u: ArrayView2<f64>, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, d) = u.dim();
        if grad_out.dim() != (n, d) {
            return Err(Error::Layout("gradient shape differs from input".into()));
        }
        let u = u.as_standard_layout();
        let flat = u.as_slice().expect("standard layout");
        let g = grad_out.as_standard_layout();
        let mut v = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        self.forward_rows(flat, d, &mut v, &mut out);
        let mut gu = vec![0.0; n * d];
        self.backward_rows(flat, &v, d, g.as_slice().expect("standard layout"), &mut gu);
        Ok(Array2::from_shape_vec((n, d), gu).expect("shape"))
    }
}

/// Orthogonalises the rows of `u` with the default stabiliser and no
/// normalisation.
pub fn gram_schmidt(u: ArrayView2<f64>) -> Result<Array2<f64>> {
    GramSchmidt::default().apply(u)
}

/// Largest `|⟨v_i, v_j⟩| / (‖v_i‖‖v_j‖ + ε)` over distinct rows.
pub fn max_normalized_off_diagonal(v: ArrayView2<f64>) -> f64 {
    let n = v.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (v.row(i), v.row(j));
            let c = a.dot(&b).abs() / (a.dot(&a).sqrt() * b.dot(&b).sqrt() + GRAM_SCHMIDT_EPS);
            worst = worst.max(c);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textbook_pair() {
        let v = gram_schmidt(array![[1.0, 0.0], [1.0, 1.0]].view()).unwrap();
        assert!((v[[0, 0]] - 1.0).abs() < 1e-12 && v[[0, 1]] == 0.0);
        assert!(v[[1, 0]].abs() < 1e-7 && (v[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows_are_a_fixed_point() {
        let u = array![[2.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, 0.5]];
        assert_eq!(gram_schmidt(u.view()).unwrap(), u);
    }

    #[test]
    fn parallel_row_collapses_without_blowup() {
        let u = array![[1.0, 2.0, -1.0], [2.0, 4.0, -2.0]];
        let v = gram_schmidt(u.view()).unwrap();
        let n2 = v.row(1).dot(&v.row(1)).sqrt();
        let nu = u.row(1).dot(&u.row(1)).sqrt();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(n2 <= 1e-6 * nu, "residual norm {n2}");
    }

    #[test]
    fn random_six_by_sixty_four_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let u = Array2::from_shape_fn((6, 64), |_| rng.random_range(-1.0..1.0));
            let v = gram_schmidt(u.view()).unwrap();
            // Oracle: direct dot products.
            let mut worst: f64 = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        let (mut dij, mut ii, mut jj) = (0.0, 0.0, 0.0);
                        for k in 0..64 {
                            dij += v[[i, k]] * v[[j, k]];
                            ii += v[[i, k]] * v[[i, k]];
                            jj += v[[j, k]] * v[[j, k]];
                        }
                        worst = worst.max(dij.abs() / (ii.sqrt() * jj.sqrt() + 1e-8));
                    }
                }
            }
            assert!(worst < 1e-5, "{worst}");
        }
    }

    #[test]
    fn span_is_preserved() {
        // u_i = v_i + Σ_{j<i} c_ij v_j with the same coefficients as forward.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Array2::from_shape_fn((5, 12), |_| rng.random_range(-1.0..1.0));
        let v = gram_schmidt(u.view()).unwrap();
        for i in 0..5 {
            let mut rec = v.row(i).to_owned();
            for j in 0..i {
                let vj = v.row(j);
                let c = vj.dot(&u.row(i)) / vj.dot(&vj);
                rec += &(&vj * c);
            }
            let resid = (&rec - &u.row(i)).mapv(|x| x * x).sum().sqrt();
            assert!(resid < 1e-6 * u.row(i).dot(&u.row(i)).sqrt());
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));
        let v = GramSchmidt::normalized().apply(u.view()).unwrap();
        for r in v.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-6);
        }
        assert!(max_normalized_off_diagonal(v.view()) < 1e-5);
    }

    #[test]
    fn rejects_too_many_rows_and_nan() {
        assert!(matches!(gram_schmidt(Array2::<f64>::ones((3, 2)).view()), Err(Error::Domain(_))));
        let mut u = Array2::<f64>::ones((2, 3));
        u[[1, 2]] = f64::NAN;
        assert!(matches!(gram_schmidt(u.view()), Err(Error::Numeric(_))));
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for gs in [GramSchmidt::default(), GramSchmidt::normalized()] {
            let u = Array2::from_shape_fn((4, 7), |_| rng.random_range(-1.0..1.0));
            let w = Array2::from_shape_fn((4, 7), |_| rng.random_range(-1.0..1.0));
            let g = gs.vjp(u.view(), w.view()).unwrap();
            let h = 1e-6;
            for idx in 0..28 {
                let (r, c) = (idx / 7, idx % 7);
                let mut p = u.clone();
                p[[r, c]] += h;
                let up = (gs.apply(p.view()).unwrap() * &w).sum();
                p[[r, c]] -= 2.0 * h;
                let down = (gs.apply(p.view()).unwrap() * &w).sum();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[[r, c]]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[[r, c]]);
            }
        }
    }
}
