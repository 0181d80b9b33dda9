//! Finite differences, Gauss–Legendre quadrature and SVD-based inverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Base step for central differences, scaled per coordinate by `max(1, |x_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Relative singular value cutoff used by every pseudo-inverse in the crate.
pub const PINV_RCOND: f64 = 1e-12;

/// Quadrature order used for the integrals along the backbone.
pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

fn scaled_step(h: f64, x: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, q: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "h",
            value: h,
            reason: "finite-difference step must be positive",
        });
    }
    let mut grad = DVector::zeros(q.len());
    let mut probe = q.clone();
    for i in 0..q.len() {
        let step = scaled_step(h, q[i]);
        let (hi, lo) = (q[i] + step, q[i] - step);
        probe[i] = hi;
        let plus = f(&probe);
        probe[i] = lo;
        let minus = f(&probe);
        probe[i] = q[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite {
                what: "finite-difference probe",
            });
        }
        // divide by the step actually realized in floating point
        grad[i] = (plus - minus) / (hi - lo);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function, `out.len() × q.len()`.
pub fn fd_jacobian<F>(f: F, q: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut probe = q.clone();
    let mut columns = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        let step = scaled_step(h, q[i]);
        let (hi, lo) = (q[i] + step, q[i] - step);
        probe[i] = hi;
        let plus = f(&probe);
        probe[i] = lo;
        let minus = f(&probe);
        probe[i] = q[i];
        let col = (plus - minus) / (hi - lo);
        if !col.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "finite-difference probe",
            });
        }
        columns.push(col);
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, q.len(), |r, c| columns[c][r]))
}

/// Central difference of a matrix-valued function along direction `v`:
/// `d/dε F(q + ε v)` at `ε = 0`.
pub fn fd_directional<F>(f: F, q: &DVector<f64>, v: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let norm = v.norm();
    if norm == 0.0 {
        let shape = f(q).shape();
        return DMatrix::zeros(shape.0, shape.1);
    }
    let eps = scaled_step(h, q.amax()) / norm;
    let plus = f(&(q + v * eps));
    let minus = f(&(q - v * eps));
    (plus - minus) / (2.0 * eps)
}

/// Gauss–Legendre rule mapped onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter {
                name: "order",
                value: 0.0,
                reason: "quadrature needs at least one node",
            });
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Newton iteration on P_n from the Chebyshev-like initial guesses;
        // roots are symmetric so only half are computed.
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes().map(|(s, w)| w * f(s)).sum()
    }

    pub fn integrate_vector<F: Fn(f64) -> DVector<f64>>(&self, f: F) -> DVector<f64> {
        let mut acc: Option<DVector<f64>> = None;
        for (s, w) in self.nodes() {
            let v = f(s) * w;
            match acc.as_mut() {
                Some(a) => *a += v,
                None => acc = Some(v),
            }
        }
        acc.unwrap_or_else(|| DVector::zeros(0))
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature of a vector-valued function over `[0, 1]`.
pub fn gauss_legendre<F: Fn(f64) -> DVector<f64>>(f: F, order: usize) -> Result<DVector<f64>> {
    let rule = GaussLegendre::new(order)?;
    let v = rule.integrate_vector(f);
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "quadrature integrand",
        })
    }
}

/// Moore–Penrose pseudo-inverse with singular values below
/// `rcond · σ_max` treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let smax = svd.singular_values.max();
    let cutoff = rcond * smax;
    let mut sigma_inv = DMatrix::zeros(svd.singular_values.len(), svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sigma_inv * u.transpose()
}

/// Damped least-squares inverse `Aᵀ(AAᵀ + λ²I)⁻¹`.
pub fn damped_pseudo_inverse(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let rows = a.nrows();
    let gram = a * a.transpose() + DMatrix::identity(rows, rows) * (lambda * lambda);
    match gram.cholesky() {
        Some(ch) => a.transpose() * ch.inverse(),
        None => pseudo_inverse(a, PINV_RCOND),
    }
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with the crate-wide relative cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter()
        .filter(|&&v| v > PINV_RCOND * smax && v > 0.0)
        .count()
}

/// Moore–Penrose left inverse `(AᵀA)⁻¹Aᵀ`; fails when `A` lacks full column rank.
pub fn left_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rank(a) < a.ncols() {
        return Err(Error::RankDeficient {
            singular_values: singular_values(a),
        });
    }
    Ok(pseudo_inverse(a, PINV_RCOND))
}

/// Smallest and largest eigenvalue of the symmetric part of `h`.
pub fn symmetric_eigen_range(h: &DMatrix<f64>) -> (f64, f64) {
    let sym = symmetrize(h);
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gradient_of_quadratic_is_exact() {
        let q = DVector::from_vec(vec![1.0, 2.0]);
        // quadratic is exact under central differences; a larger step only reduces round-off
        let g = fd_gradient(|q| 0.5 * q.dot(q), &q, 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10);
        assert!((g[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let q = DVector::from_vec(vec![0.3, -4.0, 7.0]);
        let g = fd_gradient(|_| 3.5, &q, DEFAULT_FD_STEP).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn gradient_reports_nonfinite_probe() {
        let q = DVector::from_vec(vec![0.0]);
        let err = fd_gradient(|q| 1.0 / q[0].max(0.0) - 1.0 / q[0].max(0.0), &q, 1e-6);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert!(fd_gradient(|q| q[0], &q, 0.0).is_err());
    }

    #[test]
    fn quadrature_constant_and_cubic() {
        let one = gauss_legendre(|_| DVector::from_element(1, 1.0), 5).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-15);
        let cubic = gauss_legendre(|s| DVector::from_element(1, s.powi(3)), 2).unwrap();
        assert!((cubic[0] - 0.25).abs() < 1e-16);
    }

    #[test]
    fn quadrature_sine() {
        let v = gauss_legendre(|s| DVector::from_element(1, (PI * s).sin()), 16).unwrap();
        assert!((v[0] - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn quadrature_is_exact_to_degree_2n_minus_1() {
        for order in 1..12 {
            let rule = GaussLegendre::new(order).unwrap();
            let deg = 2 * order - 1;
            let v = rule.integrate(|s| s.powi(deg as i32));
            assert!(
                (v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14,
                "order {order}"
            );
            let w: f64 = rule.nodes().map(|(_, w)| w).sum();
            assert!((w - 1.0).abs() < 1e-14);
        }
        assert!(GaussLegendre::new(0).is_err());
    }

    #[test]
    fn left_inverse_requires_full_column_rank() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(left_inverse(&a), Err(Error::RankDeficient { .. })));
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let bl = left_inverse(&b).unwrap();
        assert!((bl * &b - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_penrose_conditions() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let p = pseudo_inverse(&a, PINV_RCOND);
        assert!((&a * &p * &a - &a).norm() < 1e-12);
        assert!((&p * &a * &p - &p).norm() < 1e-12);
        let ap = &a * &p;
        assert!((&ap - ap.transpose()).norm() < 1e-12);
    }
}
