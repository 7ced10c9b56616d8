//! Coarse-torus localization, derivatives of Gaussian expectations in the covariance, and the
//! Hilbert–Schmidt sums that control them.
//!
//! A functional supported on a block `X` of the fine torus `T_N` only sees the covariance
//! `C_k(x - y)` for `x, y` in `X`. When `diam_inf(X) <= (L^nbar - 1) / 2` the same
//! restricted covariance is produced by a Gaussian on the coarse torus `T_nbar` with kernel
//! `D(xbar) = sum_{pi(y) = xbar} C_k(y) - lambda M_k`, `lambda = L^{(N - nbar) d} - 1`,
//! where `M_k` is the far-field value of `C_k`. Its Fourier modes are those of `C_k` on the
//! coarse dual lattice plus a positive zero mode `-lambda V_nbar M_k`.

pub mod gauss;
pub mod smooth;
pub mod whittle;

use crate::elliptic::HermEig;
use crate::frd_base::Decomposition;
use crate::lattice::{op_norm_real, Field, MatrixKernel, SpectralKernel, TorusGeometry};
use crate::sampler::{mean_with_error, one_sample, spectral_sqrt};
use crate::{par, FrdError, RMat, Result, C64};

pub use gauss::{gauss_expectation_deriv, DerivOptions, DerivReport, GaussianPath, TestFunctional};
pub use smooth::{smoothness_suite, SmoothnessOptions};
pub use whittle::{whittle_check, WhittleOptions};

/// Allowed relative gap between the two constructions of the coarse kernel.
pub const ROUTE_TOL: f64 = 1e-9;

/// Kernel of the coarse Gaussian for scale `k` on `T_nbar`.
#[derive(Clone, Debug)]
pub struct CoarseKernel {
    pub coarse: TorusGeometry,
    pub k: usize,
    /// `L^{(N - nbar) d} - 1`.
    pub lambda_tail: f64,
    /// Far-field matrix of the parent scale (zero for derivative kernels).
    pub parent_tail: RMat,
    pub kernel: MatrixKernel,
    pub spectral: SpectralKernel,
    /// Relative gap between the subsampled-Fourier and fibre-sum constructions.
    pub route_gap: f64,
    /// Smallest mode eigenvalue relative to the largest.
    pub min_relative_mode: f64,
}

/// Fine dual index of each coarse dual point.
pub fn dual_embedding(fine: &TorusGeometry, coarse: &TorusGeometry) -> Vec<usize> {
    let factor = (fine.l() as i64).pow(fine.n() - coarse.n());
    (0..coarse.volume())
        .map(|c| {
            let a: Vec<i64> = coarse.residues(c).iter().map(|&r| r as i64 * factor).collect();
            fine.index_of(&a)
        })
        .collect()
}

/// Smallest `nbar` with `L^nbar >= 2 D`, clamped to `[k, N]`.
pub fn n_bar_for_block(l: usize, n: u32, k: usize, block: usize) -> u32 {
    let mut nb = 0u32;
    while (l as u64).pow(nb) < 2 * block as u64 && nb < n {
        nb += 1;
    }
    nb.max(k as u32).min(n)
}

/// Coarse kernel of a fine kernel given by both its multiplier and its position values.
pub fn coarse_from_parts(
    fine_spec: &SpectralKernel,
    fine_pos: &MatrixKernel,
    tail: Option<&RMat>,
    coarse: &TorusGeometry,
    k: usize,
) -> Result<CoarseKernel> {
    let fine = &fine_spec.geometry;
    let m = fine.m();
    let lambda = ((fine.l() as f64).powi(((fine.n() - coarse.n()) as usize * fine.d()) as i32)) - 1.0;
    let tail = tail.cloned().unwrap_or_else(|| RMat::zeros(m, m));
    let vbar = coarse.volume() as f64;

    // subsampled Fourier route
    let emb = dual_embedding(fine, coarse);
    let mut spectral = SpectralKernel::zeros(coarse);
    for (c, &f) in emb.iter().enumerate() {
        spectral.values[c] = if c == 0 { (&tail * (-lambda * vbar)).map(|v| C64::new(v, 0.0)) } else { fine_spec.values[f].clone() };
    }
    let (via_fourier, _) = spectral.to_position();

    // fibre sum route
    let proj = fine.projection_table(coarse)?;
    let mut via_fibres = MatrixKernel::zeros(coarse);
    for (site, &c) in proj.iter().enumerate() {
        via_fibres.values[c] += &fine_pos.values[site];
    }
    for v in via_fibres.values.iter_mut() {
        *v -= &tail * lambda;
    }

    let scale = via_fibres.sup_norm().max(f64::MIN_POSITIVE);
    let gap = via_fourier
        .values
        .iter()
        .zip(&via_fibres.values)
        .map(|(a, b)| op_norm_real(&(a - b)))
        .fold(0.0, f64::max)
        / scale;
    if gap > ROUTE_TOL {
        return Err(FrdError::RouteMismatch(format!(
            "coarse kernel for scale {k} on level {}: relative gap {gap:e}",
            coarse.n()
        )));
    }
    let eigs: Vec<(f64, f64)> = par::map_slice(&spectral.values, |v| {
        let e = HermEig::new(v);
        (e.min(), e.max())
    });
    let top = eigs.iter().map(|e| e.1.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let low = eigs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let mut kernel = via_fibres;
    kernel.tail = None;
    Ok(CoarseKernel {
        coarse: coarse.clone(),
        k,
        lambda_tail: lambda,
        parent_tail: tail,
        kernel,
        spectral,
        route_gap: gap,
        min_relative_mode: low / top,
    })
}

/// Coarse kernel of scale `k` of `dec` on `T_nbar`; requires `k <= nbar <= N`.
pub fn coarse_kernel(dec: &Decomposition, k: usize, n_bar: u32) -> Result<CoarseKernel> {
    let g = &dec.geometry;
    if k == 0 || k > n_bar as usize || n_bar > g.n() {
        return Err(FrdError::Argument(format!("need 1 <= k <= nbar <= N, got k = {k}, nbar = {n_bar}, N = {}", g.n())));
    }
    let scale = dec.scale(k);
    let coarse = g.with_n(n_bar)?;
    let ck = coarse_from_parts(&scale.spectral, &scale.position, scale.tail.as_ref(), &coarse, k)?;
    if ck.min_relative_mode < -1e-10 {
        return Err(FrdError::NotPositive { scale: k, index: 0, min_eig: ck.min_relative_mode });
    }
    Ok(ck)
}

/// `max |D(pi z) - C_k(z)| / max |C_k|` over fine sites with `|z|_inf <= (L^nbar - 1) / 2`.
pub fn local_identity_defect(dec: &Decomposition, ck: &CoarseKernel) -> Result<f64> {
    let g = &dec.geometry;
    let pos = &dec.scale(ck.k).position;
    let radius = ((g.l() as i64).pow(ck.coarse.n()) - 1) / 2;
    let proj = g.projection_table(&ck.coarse)?;
    let worst = (0..g.volume())
        .filter(|&s| g.dist_inf(s) <= radius)
        .map(|s| op_norm_real(&(&ck.kernel.values[proj[s]] - &pos.values[s])))
        .fold(0.0, f64::max);
    Ok(worst / pos.sup_norm().max(f64::MIN_POSITIVE))
}

/// What a local functional computes from the field values on its support.
#[derive(Clone, Debug)]
pub enum FunctionalKind {
    Constant(f64),
    /// `phi_i(x_a) phi_j(x_b)` for support sites `a, b`.
    Pair { a: usize, b: usize, i: usize, j: usize },
    /// `v^T H v` with `v` the restricted field, ordered (site, component).
    Quadratic(RMat),
    /// `exp(-scale |phi|_X|^2)`.
    GaussianBump { scale: f64 },
    /// Logistic step in the block average of one component.
    SmoothIndicator { comp: usize, threshold: f64, width: f64 },
}

/// A functional measurable with respect to the field on a finite support.
#[derive(Clone, Debug)]
pub struct LocalFunctional {
    /// Representative coordinates of the support sites (unwrapped).
    pub support: Vec<Vec<i64>>,
    pub kind: FunctionalKind,
    pub bounded: bool,
}

/// Sites of the box `{0, ..., side - 1}^d`, axis 0 fastest.
pub fn block_support(d: usize, side: usize) -> Vec<Vec<i64>> {
    let total = side.pow(d as u32);
    (0..total)
        .map(|mut i| {
            (0..d)
                .map(|_| {
                    let c = (i % side) as i64;
                    i /= side;
                    c
                })
                .collect()
        })
        .collect()
}

impl LocalFunctional {
    pub fn new(support: Vec<Vec<i64>>, kind: FunctionalKind) -> Self {
        let bounded = matches!(
            kind,
            FunctionalKind::Constant(_) | FunctionalKind::GaussianBump { .. } | FunctionalKind::SmoothIndicator { .. }
        );
        Self { support, kind, bounded }
    }

    /// `max_axis (max - min)` of the support coordinates.
    pub fn diameter(&self) -> i64 {
        let Some(first) = self.support.first() else { return 0 };
        (0..first.len())
            .map(|ax| {
                let vals = self.support.iter().map(|x| x[ax]);
                vals.clone().max().unwrap_or(0) - vals.min().unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Evaluates on the restricted values, ordered (site, component).
    pub fn eval_restricted(&self, v: &[f64], m: usize) -> f64 {
        match &self.kind {
            FunctionalKind::Constant(c) => *c,
            FunctionalKind::Pair { a, b, i, j } => v[a * m + i] * v[b * m + j],
            FunctionalKind::Quadratic(h) => {
                let x = nalgebra::DVector::from_column_slice(v);
                (x.transpose() * h * &x)[(0, 0)]
            }
            FunctionalKind::GaussianBump { scale } => (-scale * v.iter().map(|x| x * x).sum::<f64>()).exp(),
            FunctionalKind::SmoothIndicator { comp, threshold, width } => {
                let n = v.len() / m;
                let avg = (0..n).map(|s| v[s * m + comp]).sum::<f64>() / n as f64;
                1.0 / (1.0 + (-(avg - threshold) / width).exp())
            }
        }
    }

    /// Field values on the support; sites are wrapped onto the field's torus.
    pub fn restrict(&self, field: &Field) -> Vec<f64> {
        let g = &field.geometry;
        let m = g.m();
        let mut out = Vec::with_capacity(self.support.len() * m);
        for x in &self.support {
            let s = g.index_of(x);
            out.extend_from_slice(&field.values[s * m..(s + 1) * m]);
        }
        out
    }

    pub fn eval(&self, field: &Field) -> f64 {
        self.eval_restricted(&self.restrict(field), field.geometry.m())
    }

    /// Exact Gaussian expectation under the translation-invariant covariance `kernel`, for the
    /// constant and quadratic kinds.
    pub fn exact_expectation(&self, kernel: &MatrixKernel) -> Option<f64> {
        let g = &kernel.geometry;
        let m = g.m();
        let cov = |a: usize, b: usize| -> &RMat {
            let diff: Vec<i64> = self.support[a].iter().zip(&self.support[b]).map(|(x, y)| x - y).collect();
            &kernel.values[g.index_of(&diff)]
        };
        match &self.kind {
            FunctionalKind::Constant(c) => Some(*c),
            FunctionalKind::Pair { a, b, i, j } => Some(cov(*a, *b)[(*i, *j)]),
            FunctionalKind::Quadratic(h) => {
                let n = self.support.len();
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let c = cov(a, b);
                        for i in 0..m {
                            for j in 0..m {
                                s += h[(a * m + i, b * m + j)] * c[(i, j)];
                            }
                        }
                    }
                }
                Some(s)
            }
            _ => None,
        }
    }
}

/// Fine-versus-coarse comparison of one local functional.
#[derive(Clone, Debug)]
pub struct LocalizationReport {
    pub k: usize,
    pub n_bar: u32,
    pub fine_mean: f64,
    pub fine_se: f64,
    pub coarse_mean: f64,
    pub coarse_se: f64,
    /// Exact fine and coarse expectations where available.
    pub exact: Option<(f64, f64)>,
    pub route_gap: f64,
    pub pass: bool,
}

impl LocalizationReport {
    /// Difference in units of the combined standard error.
    pub fn z_score(&self) -> f64 {
        let se = (self.fine_se.powi(2) + self.coarse_se.powi(2)).sqrt();
        if se > 0.0 {
            (self.fine_mean - self.coarse_mean).abs() / se
        } else {
            0.0
        }
    }

    pub fn exact_gap(&self) -> Option<f64> {
        self.exact.map(|(f, c)| (f - c).abs() / f.abs().max(1e-300))
    }
}

/// Compares `E F` under scale `k` on `T_N` with `E F(tau psi)` under the coarse Gaussian on
/// `T_nbar`, by Monte Carlo with `samples` draws per side and exactly for quadratic `F`.
pub fn localization_check(
    dec: &Decomposition,
    k: usize,
    n_bar: u32,
    f: &LocalFunctional,
    samples: usize,
    seed: u64,
) -> Result<LocalizationReport> {
    let g = &dec.geometry;
    let limit = ((g.l() as i64).pow(n_bar) - 1) / 2;
    if f.diameter() > limit {
        return Err(FrdError::Argument(format!(
            "support diameter {} exceeds (L^nbar - 1) / 2 = {limit}",
            f.diameter()
        )));
    }
    let ck = coarse_kernel(dec, k, n_bar)?;
    let exact = f
        .exact_expectation(&dec.scale(k).position)
        .zip(f.exact_expectation(&ck.kernel));

    let (fine_mean, fine_se, coarse_mean, coarse_se) = if samples > 0 {
        let fine_root = spectral_sqrt(&dec.scale(k).spectral)?;
        let coarse_root = spectral_sqrt(&ck.spectral)?;
        let fv = par::map_range(samples, |i| f.eval(&one_sample(&fine_root, seed, i as u64)));
        let cv = par::map_range(samples, |i| f.eval(&one_sample(&coarse_root, seed.wrapping_add(1), i as u64)));
        let (a, b) = mean_with_error(&fv);
        let (c, d) = mean_with_error(&cv);
        (a, b, c, d)
    } else {
        let (a, c) = exact.unwrap_or((f64::NAN, f64::NAN));
        (a, 0.0, c, 0.0)
    };
    let se = (fine_se.powi(2) + coarse_se.powi(2)).sqrt();
    let mc_ok = (fine_mean - coarse_mean).abs() <= 3.0 * se || (se == 0.0 && (fine_mean - coarse_mean).abs() <= 1e-9);
    let exact_ok = exact.is_none_or(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(dec.scale(k).position.sup_norm()));
    Ok(LocalizationReport {
        k,
        n_bar,
        fine_mean,
        fine_se,
        coarse_mean,
        coarse_se,
        exact,
        route_gap: ck.route_gap,
        pass: mc_ok && exact_ok,
    })
}

/// `C^{-1/2} X C^{-1/2}` and its squared Hilbert–Schmidt norm; infinite when `C` is singular.
fn quotient_hs2(c: &crate::CMat, x: &crate::CMat) -> f64 {
    let e = HermEig::new(c);
    if e.min() <= 1e-14 * e.max().abs() {
        return f64::INFINITY;
    }
    let inv: Vec<f64> = e.values.iter().map(|v| 1.0 / v.sqrt()).collect();
    let r = e.reconstruct(&inv);
    (&r * x * &r).norm_squared()
}

/// Coarse dual points other than zero, as fine dual indices.
fn coarse_points(dec: &Decomposition, n_bar: u32) -> Result<Vec<usize>> {
    let coarse = dec.geometry.with_n(n_bar)?;
    Ok(dual_embedding(&dec.geometry, &coarse).into_iter().skip(1).collect())
}

/// `sum_{p in T_nbar^*, p != 0} || C_k(p)^{-1/2} dC_k(p) C_k(p)^{-1/2} ||_HS^2` for the derivative
/// along `direction`. The zero mode is left out: the far-field matrix does not depend on the
/// generator.
pub fn hs_quotient_sum(dec: &Decomposition, direction: &RMat, k: usize, n_bar: u32) -> Result<f64> {
    let pts = coarse_points(dec, n_bar)?;
    let derivs = dec.derivative_at_points(direction, 1, &pts)?;
    let spec = &dec.scale(k).spectral;
    let terms = par::map_range(pts.len(), |i| quotient_hs2(&spec.values[pts[i]], &derivs[i][k - 1]));
    Ok(terms.iter().sum())
}

/// The same sum for the scaled family `C_{k, tA} = C_{k, A} / t` at `t = 1`, where
/// `dC_k = -C_k` and every mode contributes `m`.
pub fn hs_quotient_sum_scaled_toy(dec: &Decomposition, k: usize, n_bar: u32) -> Result<f64> {
    let pts = coarse_points(dec, n_bar)?;
    let spec = &dec.scale(k).spectral;
    let terms = par::map_slice(&pts, |&p| quotient_hs2(&spec.values[p], &(-&spec.values[p])));
    Ok(terms.iter().sum())
}
