//! Growth of `d^ell/dt^ell E F` with the support size of `F`.
//!
//! For a block `X` of side `D`, the restricted coarse covariance `M(t)` of scale `k` along
//! `A + t Adot` determines every derivative of `E F` through the weights of
//! [`super::gauss`]. By Cauchy–Schwarz the largest derivative over `||F||_2 = 1` is
//! `||P_ell||_2`, which is what the suite measures and fits against `(D L^{-k})^{d ell / 2}`.

use std::sync::Arc;

use nalgebra::DVector;

use super::gauss::{gauss_expectation_deriv, weight_norm1, weight_norm2, whiten, DerivOptions, GaussianPath, TestFunctional};
use super::{block_support, coarse_from_parts, coarse_kernel, n_bar_for_block, CoarseKernel};
use crate::frd_base::Decomposition;
use crate::report::{fit_line, BoundsReport};
use crate::{RMat, Result};

#[derive(Clone, Debug)]
pub struct SmoothnessOptions {
    pub k: usize,
    /// Block sides `D`.
    pub sides: Vec<usize>,
    pub ells: Vec<u32>,
    /// Relative tolerance on the fitted exponents.
    pub exponent_tol: f64,
    /// Monte Carlo draws per bounded test functional; zero skips that part.
    pub bounded_samples: usize,
    pub seed: u64,
}

impl SmoothnessOptions {
    /// `D in {L^k, 3 L^k, L^{k+1}}`.
    pub fn standard(l: usize, k: usize) -> Self {
        let lk = l.pow(k as u32);
        Self { k, sides: vec![lk, 3 * lk, lk * l], ells: vec![1, 2], exponent_tol: 0.25, bounded_samples: 4000, seed: 11 }
    }
}

/// Block covariance `[K(pi(x_a - x_b))]` over the sites of `support`, ordered (site, component).
pub fn block_matrix(ck: &CoarseKernel, support: &[Vec<i64>]) -> RMat {
    let g = &ck.coarse;
    let m = g.m();
    let n = support.len();
    let mut out = RMat::zeros(n * m, n * m);
    for a in 0..n {
        for b in 0..n {
            let diff: Vec<i64> = support[a].iter().zip(&support[b]).map(|(x, y)| x - y).collect();
            let v = &ck.kernel.values[g.index_of(&diff)];
            out.view_mut((a * m, b * m), (m, m)).copy_from(v);
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Covariance path of the coarse Gaussian restricted to a `side^d` block.
pub fn block_path(dec: &Decomposition, first: &[crate::lattice::SpectralKernel], second: &[crate::lattice::SpectralKernel], k: usize, side: usize) -> Result<(GaussianPath, u32)> {
    let g = &dec.geometry;
    let n_bar = n_bar_for_block(g.l(), g.n(), k, side);
    let coarse = g.with_n(n_bar)?;
    let c0 = coarse_kernel(dec, k, n_bar)?;
    let c1 = coarse_from_parts(&first[k - 1], &first[k - 1].to_position().0, None, &coarse, k)?;
    let c2 = coarse_from_parts(&second[k - 1], &second[k - 1].to_position().0, None, &coarse, k)?;
    let support = block_support(g.d(), side);
    Ok((
        GaussianPath { m0: block_matrix(&c0, &support), m1: block_matrix(&c1, &support), m2: block_matrix(&c2, &support) },
        n_bar,
    ))
}

/// Bounded test functionals of the whole block vector.
fn bounded_ensemble(dim: usize) -> Vec<(String, TestFunctional)> {
    let bump: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync> = Arc::new(move |x: &DVector<f64>| (-x.norm_squared() / dim as f64).exp());
    let step: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync> =
        Arc::new(move |x: &DVector<f64>| 1.0 / (1.0 + (-x.sum() / (dim as f64).sqrt()).exp()));
    let cosine: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync> = Arc::new(|x: &DVector<f64>| x.norm().cos());
    vec![("bump".into(), TestFunctional::Custom(bump)), ("step".into(), TestFunctional::Custom(step)), ("cosine".into(), TestFunctional::Custom(cosine))]
}

/// Measures `||P_ell||_2` on blocks of every side in `opts`, fits the growth exponent in `D`,
/// and checks a bounded-functional ensemble against the fitted constant.
///
/// Rows use `j` for the block side `D`.
pub fn smoothness_suite(dec: &Decomposition, direction: &RMat, opts: &SmoothnessOptions) -> Result<BoundsReport> {
    let g = &dec.geometry;
    let l = g.l() as f64;
    let d = g.d() as f64;
    let k = opts.k;
    let first = dec.spectral_derivative(direction, 1)?;
    let second = dec.spectral_derivative(direction, 2)?;
    let mut rep = BoundsReport::new();
    let mut per_ell: Vec<(u32, Vec<f64>, Vec<f64>)> = opts.ells.iter().map(|&e| (e, Vec::new(), Vec::new())).collect();
    let mut paths = Vec::new();
    for &side in &opts.sides {
        let (path, n_bar) = block_path(dec, &first, &second, k, side)?;
        let w = whiten(&path)?;
        for (ell, xs, ys) in per_ell.iter_mut() {
            let norm = if *ell == 1 { weight_norm1(&w) } else { weight_norm2(&w) };
            let env = (side as f64 * l.powi(-(k as i32))).powf(d * *ell as f64 / 2.0);
            rep.push(
                "smoothness",
                Some(k),
                Some(side),
                &format!("ell={ell} nbar={n_bar} ||P||/envelope"),
                norm / env,
                1.0,
                norm.is_finite(),
            );
            xs.push((side as f64).ln());
            ys.push(norm.ln());
        }
        paths.push((side, path));
    }
    let mut slopes = Vec::new();
    for (ell, xs, ys) in &per_ell {
        let target = d * *ell as f64 / 2.0;
        let (slope, _) = fit_line(xs, ys);
        let ok = (slope - target).abs() <= opts.exponent_tol * target;
        rep.push("smoothness_exponent", Some(k), None, &format!("ell={ell}"), slope, target, ok);
        rep.fit(&format!("smooth_exponent_ell{ell}"), slope);
        let c = rep
            .rows_for("smoothness")
            .filter(|r| r.quantity.starts_with(&format!("ell={ell} ")))
            .map(|r| r.measured)
            .fold(0.0, f64::max);
        rep.fit(&format!("smooth_C_ell{ell}"), c);
        slopes.push((*ell, slope));
    }
    if let (Some(s1), Some(s2)) = (slopes.iter().find(|s| s.0 == 1), slopes.iter().find(|s| s.0 == 2)) {
        let ratio = s2.1 / s1.1;
        rep.push("smoothness_exponent", Some(k), None, "ell2/ell1", ratio, 2.0, (ratio - 2.0).abs() <= opts.exponent_tol * 2.0);
        rep.fit("smooth_exponent_ratio", ratio);
    }

    if opts.bounded_samples > 0 {
        let c1 = rep.fitted.get("smooth_C_ell1").copied().unwrap_or(f64::INFINITY);
        let dopts = DerivOptions { samples: opts.bounded_samples, seed: opts.seed, fd_step: 1e-3 };
        for (side, path) in &paths {
            let env = (*side as f64 * l.powi(-(k as i32))).powf(d / 2.0);
            for (name, f) in bounded_ensemble(path.dim()) {
                let r = gauss_expectation_deriv(path, &f, 1, &dopts)?;
                // Cauchy–Schwarz holds for the population; allow three standard errors
                let allowed = c1 * env * r.f_norm + 3.0 * r.analytic_std_error;
                rep.push(
                    "smoothness_bounded",
                    Some(k),
                    Some(*side),
                    &format!("{name} |dEF|/(||F|| envelope)"),
                    r.analytic.abs() / (r.f_norm * env),
                    c1,
                    r.analytic.abs() <= allowed,
                );
            }
        }
    }
    Ok(rep)
}
