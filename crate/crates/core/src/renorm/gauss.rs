//! Derivatives of Gaussian expectations along a covariance path `M(t) = M0 + t M1 + t^2/2 M2`.
//!
//! With `x = M^{1/2} g`, `S = M^{-1/2} M1 M^{-1/2}` and `T = M^{-1/2} M2 M^{-1/2}`:
//! `d/dt E F = E[F P1]` and `d^2/dt^2 E F = E[F P2]` where
//! `P1 = (g^T S g - tr S) / 2` and `P2 = P1^2 + (g^T (T - 2 S^2) g - tr T + tr S^2) / 2`.
//! For quadratic `F` both are evaluated exactly from Gaussian moment identities; otherwise by
//! Monte Carlo.

use std::sync::Arc;

use nalgebra::{DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{par, FrdError, RMat, Result};

/// `M(t) = m0 + t m1 + t^2 / 2 m2`.
#[derive(Clone, Debug)]
pub struct GaussianPath {
    pub m0: RMat,
    pub m1: RMat,
    pub m2: RMat,
}

impl GaussianPath {
    pub fn at(&self, t: f64) -> RMat {
        &self.m0 + &self.m1 * t + &self.m2 * (0.5 * t * t)
    }
    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }
}

/// Square roots of `M0` and the whitened derivatives.
#[derive(Clone, Debug)]
pub struct Whitened {
    pub sqrt: RMat,
    pub inv_sqrt: RMat,
    pub s: RMat,
    pub t: RMat,
}

fn sym_fn(m: &RMat, f: impl Fn(f64) -> f64) -> RMat {
    let e = SymmetricEigen::new(m.clone());
    let d = RMat::from_diagonal(&e.eigenvalues.map(f));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fails when `M0` has an eigenvalue below `1e-12 tr(M0)`.
pub fn whiten(path: &GaussianPath) -> Result<Whitened> {
    let sym = (&path.m0 + path.m0.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym.clone());
    let lo = e.eigenvalues.min();
    let tr = sym.trace();
    if lo < 1e-12 * tr.abs() || lo <= 0.0 {
        return Err(FrdError::NotPositive { scale: 0, index: 0, min_eig: lo });
    }
    let sqrt = sym_fn(&sym, f64::sqrt);
    let inv_sqrt = sym_fn(&sym, |v| 1.0 / v.sqrt());
    let s = &inv_sqrt * &path.m1 * &inv_sqrt;
    let t = &inv_sqrt * &path.m2 * &inv_sqrt;
    Ok(Whitened { sqrt, inv_sqrt, s: (&s + s.transpose()) * 0.5, t: (&t + t.transpose()) * 0.5 })
}

/// Test functionals of the whole vector `x`.
#[derive(Clone)]
pub enum TestFunctional {
    Constant(f64),
    Linear(DVector<f64>),
    /// `x^T H x + c`.
    Quadratic(RMat, f64),
    /// Any bounded measurable function.
    Custom(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Linear(_) => write!(f, "Linear"),
            Self::Quadratic(..) => write!(f, "Quadratic"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TestFunctional {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Linear(b) => b.dot(x),
            Self::Quadratic(h, c) => (x.transpose() * h * x)[(0, 0)] + c,
            Self::Custom(f) => f(x),
        }
    }

    fn is_exact(&self) -> bool {
        !matches!(self, Self::Custom(_))
    }
}

fn tr(a: &RMat) -> f64 {
    a.trace()
}

/// `E[Q_A Q_B]` for `Q_X = g^T X g`, symmetric `A, B`.
fn m2(a: &RMat, b: &RMat) -> f64 {
    tr(a) * tr(b) + 2.0 * tr(&(a * b))
}

/// `E[Q_A Q_B Q_C]`.
fn m3(a: &RMat, b: &RMat, c: &RMat) -> f64 {
    tr(a) * tr(b) * tr(c)
        + 2.0 * (tr(a) * tr(&(b * c)) + tr(b) * tr(&(a * c)) + tr(c) * tr(&(a * b)))
        + 4.0 * (tr(&(a * b * c)) + tr(&(a * c * b)))
}

/// `E[(g^T H g) P_ell]` from moment identities, `ell` in `{1, 2}`.
fn quadratic_weight_moment(h: &RMat, w: &Whitened, ell: u32) -> f64 {
    let s = &w.s;
    let trs = tr(s);
    let p1 = 0.5 * (m2(h, s) - tr(h) * trs);
    if ell == 1 {
        return p1;
    }
    // E[Q_H P1^2] = (E[Q_H Q_S^2] - 2 trS E[Q_H Q_S] + trS^2 trH) / 4
    let p1sq = 0.25 * (m3(h, s, s) - 2.0 * trs * m2(h, s) + trs * trs * tr(h));
    let s2 = s * s;
    let u = &w.t - &s2 * 2.0;
    let w2 = 0.5 * (m2(h, &u) - tr(h) * tr(&w.t) + tr(h) * tr(&s2));
    p1sq + w2
}

/// `P1(g)` and `P2(g)`.
pub fn weights(w: &Whitened, g: &DVector<f64>) -> (f64, f64) {
    let qs = (g.transpose() * &w.s * g)[(0, 0)];
    let s2 = &w.s * &w.s;
    let qt = (g.transpose() * &w.t * g)[(0, 0)];
    let qs2 = (g.transpose() * &s2 * g)[(0, 0)];
    let p1 = 0.5 * (qs - tr(&w.s));
    let p2 = p1 * p1 + 0.5 * (qt - 2.0 * qs2 - tr(&w.t) + tr(&s2));
    (p1, p2)
}

/// `||P1||_2 = sqrt(tr S^2 / 2)`.
pub fn weight_norm1(w: &Whitened) -> f64 {
    (0.5 * tr(&(&w.s * &w.s))).sqrt()
}

/// `||P2||_2^2 = 3 tr S^4 + (tr S^2)^2 / 2 + 4 tr(S^2 G) + 2 tr G^2`, `G = T/2 - S^2`.
pub fn weight_norm2(w: &Whitened) -> f64 {
    let s2 = &w.s * &w.s;
    let g = &w.t * 0.5 - &s2;
    let v = 3.0 * tr(&(&s2 * &s2)) + 0.5 * tr(&s2).powi(2) + 4.0 * tr(&(&s2 * &g)) + 2.0 * tr(&(&g * &g));
    v.max(0.0).sqrt()
}

/// Result of [`gauss_expectation_deriv`].
#[derive(Clone, Debug)]
pub struct DerivReport {
    pub ell: u32,
    pub analytic: f64,
    /// Zero for exact evaluation.
    pub analytic_std_error: f64,
    pub finite_difference: f64,
    pub fd_std_error: f64,
    /// `||S||_HS` and `||T||_HS`.
    pub hs_norms: [f64; 2],
    /// `||P_ell||_2`.
    pub weight_norm: f64,
    /// `||F||_2` (exact for quadratic functionals, Monte Carlo otherwise).
    pub f_norm: f64,
    /// `||F||_2 ||S||_HS` for `ell = 1`, `||F||_2 ||P_2||_2` for `ell = 2`.
    pub bound: f64,
}

impl DerivReport {
    pub fn relative_gap(&self) -> f64 {
        (self.analytic - self.finite_difference).abs() / self.finite_difference.abs().max(f64::MIN_POSITIVE)
    }
}

/// Options for the Monte Carlo and finite-difference parts.
#[derive(Clone, Debug)]
pub struct DerivOptions {
    pub samples: usize,
    pub seed: u64,
    pub fd_step: f64,
}

impl Default for DerivOptions {
    fn default() -> Self {
        Self { samples: 20_000, seed: 1, fd_step: 1e-3 }
    }
}

fn normals(dim: usize, seed: u64, count: usize) -> Vec<DVector<f64>> {
    par::map_range(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Exact `E F` under `N(0, M)` for the closed-form functionals.
fn exact_expectation(f: &TestFunctional, m: &RMat) -> Option<f64> {
    match f {
        TestFunctional::Constant(c) => Some(*c),
        TestFunctional::Linear(_) => Some(0.0),
        TestFunctional::Quadratic(h, c) => Some(tr(&(h * m)) + c),
        TestFunctional::Custom(_) => None,
    }
}

/// `d^ell/dt^ell E_{M(t)} F` at `t = 0`, analytically and by central differences.
pub fn gauss_expectation_deriv(path: &GaussianPath, f: &TestFunctional, ell: u32, opts: &DerivOptions) -> Result<DerivReport> {
    if !(ell == 1 || ell == 2) {
        return Err(FrdError::Argument(format!("derivative order {ell} not in {{1, 2}}")));
    }
    let w = whiten(path)?;
    let hs = [w.s.norm(), w.t.norm()];
    let weight_norm = if ell == 1 { weight_norm1(&w) } else { weight_norm2(&w) };
    let h = opts.fd_step;

    let (analytic, analytic_se, f_norm) = if f.is_exact() {
        let val = match f {
            TestFunctional::Quadratic(hm, _) => {
                let hw = &w.sqrt * hm * &w.sqrt;
                let hw = (&hw + hw.transpose()) * 0.5;
                quadratic_weight_moment(&hw, &w, ell)
            }
            _ => 0.0,
        };
        (val, 0.0, exact_l2(f, &w))
    } else {
        let gs = normals(path.dim(), opts.seed, opts.samples);
        let vals: Vec<(f64, f64)> = par::map_slice(&gs, |g| {
            let x = &w.sqrt * g;
            let fx = f.eval(&x);
            let (p1, p2) = weights(&w, g);
            (fx * if ell == 1 { p1 } else { p2 }, fx * fx)
        });
        let prods: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let (m, se) = mean_se(&prods);
        let f2 = vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64;
        (m, se, f2.sqrt())
    };

    let (fd, fd_se) = match (exact_expectation(f, &path.at(h)), exact_expectation(f, &path.at(-h))) {
        (Some(p), Some(mn)) => {
            let c = exact_expectation(f, &path.m0).unwrap_or(0.0);
            if ell == 1 {
                ((p - mn) / (2.0 * h), 0.0)
            } else {
                ((p - 2.0 * c + mn) / (h * h), 0.0)
            }
        }
        _ => {
            // common random numbers on both sides
            let gs = normals(path.dim(), opts.seed ^ 0x9e37_79b9_7f4a_7c15, opts.samples);
            let roots: Vec<RMat> =
                [-h, 0.0, h].iter().map(|&t| sym_fn(&((path.at(t) + path.at(t).transpose()) * 0.5), f64::sqrt)).collect();
            let diffs: Vec<f64> = par::map_slice(&gs, |g| {
                let e: Vec<f64> = roots.iter().map(|r| f.eval(&(r * g))).collect();
                if ell == 1 {
                    (e[2] - e[0]) / (2.0 * h)
                } else {
                    (e[2] - 2.0 * e[1] + e[0]) / (h * h)
                }
            });
            mean_se(&diffs)
        }
    };
    let bound = if ell == 1 { f_norm * hs[0] } else { f_norm * weight_norm };
    Ok(DerivReport {
        ell,
        analytic,
        analytic_std_error: analytic_se,
        finite_difference: fd,
        fd_std_error: fd_se,
        hs_norms: hs,
        weight_norm,
        f_norm,
        bound,
    })
}

/// `||F||_2` for the closed-form functionals.
fn exact_l2(f: &TestFunctional, w: &Whitened) -> f64 {
    match f {
        TestFunctional::Constant(c) => c.abs(),
        TestFunctional::Linear(b) => {
            let v = w.sqrt.transpose() * b;
            v.norm()
        }
        TestFunctional::Quadratic(h, c) => {
            let hw = &w.sqrt * h * &w.sqrt;
            let hw = (&hw + hw.transpose()) * 0.5;
            // E (Q + c)^2 = E Q^2 + 2 c trH + c^2
            (m2(&hw, &hw) + 2.0 * c * tr(&hw) + c * c).max(0.0).sqrt()
        }
        TestFunctional::Custom(_) => f64::NAN,
    }
}

/// `(|tr M^{-1/2} M1 M^{-1} M1 M^{-1/2}|, ||S||_HS^2)`; the first never exceeds the second.
pub fn trace_chain(path: &GaussianPath) -> Result<(f64, f64)> {
    let w = whiten(path)?;
    let lhs = tr(&(&w.s * &w.s)).abs();
    Ok((lhs, w.s.norm().powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_path(n: usize, seed: u64) -> GaussianPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = |scale: f64| {
            let a = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            (&a + a.transpose()) * (0.5 * scale)
        };
        let b = rnd(1.0);
        let m0 = &b * &b + RMat::identity(n, n);
        GaussianPath { m0, m1: rnd(0.3), m2: rnd(0.2) }
    }

    #[test]
    fn constant_functional_has_zero_derivative() {
        let p = random_path(4, 1);
        for ell in [1, 2] {
            let r = gauss_expectation_deriv(&p, &TestFunctional::Constant(3.0), ell, &DerivOptions::default()).unwrap();
            assert!(r.analytic.abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_functional_matches_closed_form() {
        let p = random_path(5, 2);
        let h = random_path(5, 3).m1;
        let f = TestFunctional::Quadratic(h.clone(), 0.7);
        let r1 = gauss_expectation_deriv(&p, &f, 1, &DerivOptions::default()).unwrap();
        assert!((r1.analytic - (&h * &p.m1).trace()).abs() < 1e-12);
        assert!(r1.relative_gap() < 1e-6);
        let r2 = gauss_expectation_deriv(&p, &f, 2, &DerivOptions::default()).unwrap();
        assert!((r2.analytic - (&h * &p.m2).trace()).abs() < 1e-12);
        assert!(r2.relative_gap() < 1e-4);
    }

    #[test]
    fn weight_norms_match_monte_carlo() {
        let p = random_path(3, 4);
        let w = whiten(&p).unwrap();
        let gs = normals(3, 9, 200_000);
        let (mut e1, mut e2) = (0.0, 0.0);
        for g in &gs {
            let (a, b) = weights(&w, g);
            e1 += a * a;
            e2 += b * b;
        }
        let n = gs.len() as f64;
        assert!(((e1 / n).sqrt() / weight_norm1(&w) - 1.0).abs() < 0.02);
        assert!(((e2 / n).sqrt() / weight_norm2(&w) - 1.0).abs() < 0.05);
    }

    #[test]
    fn bounded_functional_respects_hs_bound_and_finite_differences() {
        let p = random_path(4, 5);
        let f = TestFunctional::Custom(Arc::new(|x: &DVector<f64>| (-x.norm_squared()).exp()));
        let opts = DerivOptions { samples: 40_000, seed: 3, fd_step: 1e-3 };
        let r = gauss_expectation_deriv(&p, &f, 1, &opts).unwrap();
        assert!(r.analytic.abs() <= r.bound);
        let se = (r.analytic_std_error.powi(2) + r.fd_std_error.powi(2)).sqrt();
        assert!((r.analytic - r.finite_difference).abs() <= 5.0 * se, "{r:?}");
    }

    #[test]
    fn trace_chain_holds() {
        let (lhs, rhs) = trace_chain(&random_path(6, 8)).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn rejects_singular_covariance() {
        let mut p = random_path(3, 1);
        p.m0 = RMat::zeros(3, 3);
        assert!(whiten(&p).is_err());
    }
}
