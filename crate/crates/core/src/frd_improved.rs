//! Recombined decompositions.
//!
//! The improved decomposition mixes base scales, `D_k = sum_{j <= k} lambda_{k,j} C_j`, which
//! gives every scale a Fourier lower bound. The final decomposition
//! `C_{A,k} = D^{n~}_{A,k} - eps D^{n~}_{ref,k} + eps D^{n}_{ref,k}` keeps the kernel decay of
//! order `n` while its generator derivatives decay with order `n~`; the reference generator is
//! the Laplacian and `eps = L^{-2(d+n~)-1} / K`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::{Generator, HermEig, MultiIndex};
use crate::frd_base::bounds::{annulus_partition, slope_within};
use crate::frd_base::{base_decomposition, Decomposition, DecompositionKind, ScaleFunctions, ScaleMix};
use crate::lattice::{op_norm, TorusGeometry};
use crate::report::{fit_line, BoundsReport};
use crate::{par, FrdError, RMat, Result};

/// Safety factor applied to the measured quotient when fixing `K`.
pub const K_SAFETY: f64 = 1.1;

/// `lambda_{k,j}` for `1 <= j <= k <= N+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixCoefficients {
    pub n: u32,
    pub big_n: u32,
    pub l: usize,
    pub d: usize,
    /// `table[k-1][j-1]`, zero for `j > k`.
    pub table: Vec<Vec<f64>>,
}

impl MixCoefficients {
    pub fn new(l: usize, big_n: u32, d: usize, n: u32) -> Self {
        let count = big_n as usize + 1;
        let rate = (l as f64).powi(-(d as i32) + 1 - n as i32);
        let mut table = vec![vec![0.0; count]; count];
        for k in 0..count {
            for j in 0..k {
                table[k][j] = rate.powi((k - j) as i32);
            }
        }
        for j in 0..count {
            let below: f64 = (j + 1..count).map(|k| table[k][j]).sum();
            table[j][j] = 1.0 - below;
        }
        Self { n, big_n, l, d, table }
    }

    /// 1-based access.
    pub fn lambda(&self, k: usize, j: usize) -> f64 {
        self.table[k - 1][j - 1]
    }

    /// `max_j | sum_{l >= j} lambda_{l,j} - 1 |`.
    pub fn column_sum_defect(&self) -> f64 {
        let count = self.table.len();
        (0..count)
            .map(|j| ((j..count).map(|k| self.table[k][j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn require_base(base: &Decomposition) -> Result<()> {
    if base.kind != DecompositionKind::Base {
        return Err(FrdError::Argument(format!("expected a base decomposition, got {}", base.kind.label())));
    }
    Ok(())
}

fn mix_rows(mix: &MixCoefficients) -> Vec<Vec<f64>> {
    mix.table.clone()
}

/// `D_k = sum_j lambda_{k,j} C_j` from a base decomposition.
pub fn improved_decomposition(base: &Decomposition, n: u32) -> Result<Decomposition> {
    require_base(base)?;
    let g = &base.geometry;
    let mix = MixCoefficients::new(g.l(), g.n(), g.d(), n);
    let count = base.count();
    let mixes = mix_rows(&mix).into_iter().map(|a| ScaleMix { a, r: vec![0.0; count] }).collect();
    Decomposition::build(
        &base.generator,
        None,
        g,
        base.funcs.clone(),
        mixes,
        DecompositionKind::Improved { n },
    )
}

/// Improved decomposition straight from a generator.
pub fn improved_for(a: &Generator, geom: &TorusGeometry, funcs: Arc<ScaleFunctions>, n: u32) -> Result<Decomposition> {
    improved_decomposition(&base_decomposition(a, geom, funcs)?, n)
}

/// The Laplacian on the generator's index set, with the same class constants.
pub fn reference_generator(a: &Generator) -> Result<Generator> {
    Generator::laplacian(a.set(), a.m(), a.omega0(), a.big_omega0())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalParams {
    pub n: u32,
    pub n_tilde: u32,
    pub k_const: f64,
}

impl FinalParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_tilde <= self.n {
            return Err(FrdError::Argument(format!(
                "need 1 <= n < n_tilde, got n = {}, n_tilde = {}",
                self.n, self.n_tilde
            )));
        }
        if !(self.k_const > 0.0 && self.k_const.is_finite()) {
            return Err(FrdError::Argument(format!("K must be positive, got {}", self.k_const)));
        }
        Ok(())
    }

    /// `L^{-2(d + n~) - 1} / K`.
    pub fn epsilon(&self, l: usize, d: usize) -> f64 {
        (l as f64).powi(-2 * (d as i32 + self.n_tilde as i32) - 1) / self.k_const
    }
}

/// Outcome of [`estimate_k`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    /// Largest `|| D~_ref,k(p) || / lambda_min(D~_A,k(p))` over the ensemble.
    pub max_ratio: f64,
    pub k_const: f64,
    pub epsilon: f64,
}

/// `K = 1.1 max_{A,k,p} ||D_ref,k(p)|| / (lambda_min(D_A,k(p)) L^{2(d+n~)+1})` over pairs of
/// improved decompositions of order `n~` (generator, reference).
pub fn estimate_k(pairs: &[(&Decomposition, &Decomposition)], n_tilde: u32) -> Result<KEstimate> {
    let mut max_ratio = 0.0f64;
    let mut geom = None;
    for (da, dr) in pairs {
        let g = &da.geometry;
        geom = Some(g.clone());
        for k in 1..=da.count() {
            let sa = &da.scale(k).spectral;
            let sr = &dr.scale(k).spectral;
            let ratios = par::map_range(g.volume(), |i| {
                if g.dual_point(i).is_zero() {
                    return Ok(0.0);
                }
                let lo = HermEig::new(&sa.values[i]).min();
                if lo <= 0.0 {
                    return Err(FrdError::NotPositive { scale: k, index: i, min_eig: lo });
                }
                Ok(op_norm(&sr.values[i]) / lo)
            });
            for r in ratios {
                max_ratio = max_ratio.max(r?);
            }
        }
    }
    let g = geom.ok_or_else(|| FrdError::Argument("empty ensemble".into()))?;
    let scale = (g.l() as f64).powi(2 * (g.d() as i32 + n_tilde as i32) + 1);
    let k_const = K_SAFETY * max_ratio / scale;
    Ok(KEstimate { max_ratio, k_const, epsilon: 1.0 / (K_SAFETY * max_ratio) })
}

/// `K` for a generator ensemble on `geom`.
pub fn estimate_k_for(ensemble: &[Generator], geom: &TorusGeometry, funcs: Arc<ScaleFunctions>, n_tilde: u32) -> Result<KEstimate> {
    let first = ensemble.first().ok_or_else(|| FrdError::Argument("empty ensemble".into()))?;
    let lap = improved_for(&reference_generator(first)?, geom, funcs.clone(), n_tilde)?;
    let decs = ensemble
        .iter()
        .map(|a| improved_for(a, geom, funcs.clone(), n_tilde))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&Decomposition, &Decomposition)> = decs.iter().map(|d| (d, &lap)).collect();
    estimate_k(&pairs, n_tilde)
}

/// The final decomposition for `a` with the given `(n, n~, K)`.
pub fn final_decomposition(a: &Generator, geom: &TorusGeometry, funcs: Arc<ScaleFunctions>, params: &FinalParams) -> Result<Decomposition> {
    params.validate()?;
    let reference = reference_generator(a)?;
    let count = funcs.count();
    let hi = MixCoefficients::new(geom.l(), geom.n(), geom.d(), params.n_tilde);
    let lo = MixCoefficients::new(geom.l(), geom.n(), geom.d(), params.n);
    let eps = params.epsilon(geom.l(), geom.d());
    let mixes = (0..count)
        .map(|k| ScaleMix {
            a: hi.table[k].clone(),
            r: (0..count).map(|j| eps * (lo.table[k][j] - hi.table[k][j])).collect(),
        })
        .collect();
    let kind = DecompositionKind::Final { n: params.n, n_tilde: params.n_tilde, k_const: params.k_const };
    let dec = Decomposition::build(a, Some(&reference), geom, funcs, mixes, kind)?;
    for k in 1..=dec.count() {
        let worst = dec.min_relative_mode(k);
        if worst < -1e-10 {
            return Err(FrdError::NotPositive { scale: k, index: usize::MAX, min_eig: worst });
        }
    }
    Ok(dec)
}

/// Options for [`verify_final_bounds`].
#[derive(Clone, Debug)]
pub struct FinalOptions {
    pub ell_max: u32,
    pub alphas: Vec<MultiIndex>,
    pub slope_tol: f64,
    /// Allowed max/min spread of the quotient over cells with `j >= k`.
    pub spread_max: f64,
}

impl FinalOptions {
    /// Difference orders `|alpha| <= n` up to two, in the first two axes.
    pub fn for_params(d: usize, n: u32) -> Self {
        let mut alphas = vec![vec![0; d]];
        if n >= 1 {
            let mut e1 = vec![0; d];
            e1[0] = 1;
            alphas.push(e1);
        }
        if n >= 2 {
            let mut e12 = vec![0; d];
            e12[0] = 1;
            e12[1] = 1;
            alphas.push(e12);
        }
        Self { ell_max: 1, alphas, slope_tol: 0.2, spread_max: 10.0 }
    }
}

/// Lower envelope of the final decomposition, without the constant `c`.
pub fn final_lower_envelope(l: f64, d: usize, n: u32, n_tilde: u32, k: usize, j: usize) -> f64 {
    let pre = l.powi(-2 * (d as i32 + n_tilde as i32) - 1);
    pre * mixed_envelope(l, d, n, k, j)
}

/// `L^{2j} L^{(k-j)(-d+1-n)}` for `j < k`, `L^{2k}` otherwise.
pub fn mixed_envelope(l: f64, d: usize, n: u32, k: usize, j: usize) -> f64 {
    if j < k {
        l.powi(2 * j as i32) * l.powi((k - j) as i32 * (-(d as i32) + 1 - n as i32))
    } else {
        l.powi(2 * k as i32)
    }
}

/// Fourier lower/upper envelopes, derivative envelopes, quotient decay and position decay.
pub fn verify_final_bounds(dec: &Decomposition, directions: &[RMat], opts: &FinalOptions) -> Result<BoundsReport> {
    let (n, n_tilde) = match dec.kind {
        DecompositionKind::Final { n, n_tilde, .. } => (n, n_tilde),
        _ => return Err(FrdError::Argument("expected a final decomposition".into())),
    };
    let g = &dec.geometry;
    let l = g.l() as f64;
    let d = g.d();
    let big = l.powi(2 * (d as i32 + n_tilde as i32) + 1);
    let annuli = annulus_partition(g);
    let mut rep = BoundsReport::new();

    let mut derivs = Vec::new();
    for ell in 1..=opts.ell_max {
        for dir in directions {
            derivs.push((ell, dec.spectral_derivative(dir, ell)?));
        }
    }

    let mut quotient_cells: Vec<(u32, usize, usize, f64)> = Vec::new();
    let mut norm_cells = Vec::new();
    for k in 1..=dec.count() {
        let sk = &dec.scale(k).spectral;
        for (j, pts) in annuli.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let stats = par::map_slice(pts, |&i| {
                let e = HermEig::new(&sk.values[i]);
                (e.min(), e.max())
            });
            let lo = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let hi = stats.iter().map(|s| s.1).fold(0.0, f64::max);
            let env_lo = final_lower_envelope(l, d, n, n_tilde, k, j);
            rep.push("final_lower", Some(k), Some(j), "min_eig/envelope", lo / env_lo, 0.0, lo > 0.0);
            let env_hi = if j < k { big * mixed_envelope(l, d, n, k, j) } else { mixed_envelope(l, d, n, k, j) };
            rep.push("final_upper", Some(k), Some(j), "norm/envelope", hi / env_hi, 1.0, hi.is_finite());
            if j < k {
                norm_cells.push(((k - j) as f64, hi.ln()));
            }
            for ell in 1..=opts.ell_max {
                let mut dmax = 0.0f64;
                let mut qmax = 0.0f64;
                for (e, dk) in derivs.iter().filter(|(e, _)| *e == ell) {
                    let _ = e;
                    for (s, &i) in pts.iter().enumerate() {
                        let dn = op_norm(&dk[k - 1].values[i]);
                        dmax = dmax.max(dn);
                        qmax = qmax.max(dn / stats[s].0);
                    }
                }
                let env_d = if j < k { big * mixed_envelope(l, d, n_tilde, k, j) } else { mixed_envelope(l, d, n_tilde, k, j) };
                rep.push("final_derivative", Some(k), Some(j), &format!("ell={ell} norm/envelope"), dmax / env_d, 1.0, dmax.is_finite());
                rep.push("final_quotient", Some(k), Some(j), &format!("ell={ell}"), qmax, f64::NAN, qmax.is_finite());
                quotient_cells.push((ell, k, j, qmax));
            }
        }
    }
    rep.fit("final_lower_c", rep.min_ratio("final_lower", "min_eig/envelope"));
    rep.fit("final_upper_C", rep.max_ratio("final_upper", "norm/envelope"));

    for ell in 1..=opts.ell_max {
        let cells: Vec<&(u32, usize, usize, f64)> = quotient_cells.iter().filter(|c| c.0 == ell).collect();
        let below: Vec<(f64, f64)> =
            cells.iter().filter(|c| c.2 < c.1).map(|c| ((c.1 - c.2) as f64 * l.ln(), c.3.ln())).collect();
        if below.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = below.into_iter().unzip();
            let (slope, _) = fit_line(&xs, &ys);
            let target = n as f64 - n_tilde as f64;
            let pass = slope_within(slope, target, opts.slope_tol);
            rep.push("final_quotient_slope", None, None, &format!("ell={ell}"), slope, target, pass);
            rep.fit(&format!("final_quotient_slope_ell{ell}"), slope);
        }
        let above: Vec<f64> = cells.iter().filter(|c| c.2 >= c.1).map(|c| c.3).collect();
        if !above.is_empty() {
            let mx = above.iter().copied().fold(0.0, f64::max);
            let mn = above.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = mx / mn;
            rep.push("final_quotient_spread", None, None, &format!("ell={ell}"), spread, opts.spread_max, spread <= opts.spread_max);
            rep.fit(&format!("final_quotient_xi_ell{ell}"), mx);
        }
    }
    if norm_cells.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = norm_cells.into_iter().unzip();
        let (slope, _) = fit_line(&xs, &ys);
        rep.fit("final_norm_slope_per_log_l", slope / l.ln());
    }

    for alpha in &opts.alphas {
        let order: u32 = alpha.iter().sum();
        let expo = d as f64 - 2.0 + order as f64;
        let label = format!("alpha={alpha:?}");
        let mut logs = Vec::new();
        for k in 1..=g.n() as usize {
            let sup = dec.scale(k).position.multi_diff(alpha).sup_norm();
            logs.push(sup.ln());
            let env = l.powf(-(k as f64 - 1.0) * expo);
            rep.push("final_position", Some(k), None, &label, sup / env, 1.0, sup.is_finite());
        }
        if logs.len() >= 2 {
            let ks: Vec<f64> = (1..=logs.len()).map(|k| k as f64).collect();
            let (slope, _) = fit_line(&ks, &logs);
            let measured = slope / l.ln();
            rep.push("final_position_slope", None, None, &label, measured, -expo, slope_within(measured, -expo, opts.slope_tol));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::MultiIndexSet;

    #[test]
    fn mixing_examples() {
        let m = MixCoefficients::new(3, 4, 2, 1);
        assert!((m.lambda(3, 2) - 1.0 / 9.0).abs() < 1e-15);
        let expected = 1.0 - (1..=4).map(|i| 9f64.powi(-i)).sum::<f64>();
        assert!((m.lambda(1, 1) - expected).abs() < 1e-15);
        assert!((m.lambda(1, 1) - 0.875019).abs() < 1e-6);
        assert!(m.column_sum_defect() < 1e-14);
        for k in 1..=5 {
            assert!(m.lambda(k, k) > 0.5 && m.lambda(k, k) <= 1.0);
        }
    }

    fn lap_setup(n: u32) -> (Generator, TorusGeometry, Arc<ScaleFunctions>) {
        let set = MultiIndexSet::first_order(2);
        let a = Generator::laplacian(&set, 1, 0.5, 2.0).unwrap();
        let g = TorusGeometry::new(3, n, 2, 1).unwrap();
        let f = Arc::new(ScaleFunctions::for_generator(&a, 3, n));
        (a, g, f)
    }

    #[test]
    fn improved_keeps_sum_and_orders_scales() {
        let (a, g, f) = lap_setup(3);
        let dec = improved_for(&a, &g, f, 1).unwrap();
        assert!(dec.sum_defect() < 1e-10);
        let rate = 3f64.powi(-2);
        for k in 1..dec.count() {
            for i in 1..g.volume() {
                let diff = &dec.scale(k + 1).spectral.values[i] - &dec.scale(k).spectral.values[i] * crate::C64::new(rate, 0.0);
                assert!(HermEig::new(&diff).min() >= -1e-12, "k = {k}, i = {i}");
            }
        }
    }

    #[test]
    fn laplacian_self_comparison_gives_unit_ratio() {
        let (a, g, f) = lap_setup(2);
        let est = estimate_k_for(std::slice::from_ref(&a), &g, f, 3).unwrap();
        assert!((est.max_ratio - 1.0).abs() < 1e-9);
        assert!(est.k_const <= 1.1);
    }

    #[test]
    fn final_for_laplacian_is_positive_and_sums() {
        let (a, g, f) = lap_setup(2);
        let est = estimate_k_for(std::slice::from_ref(&a), &g, f.clone(), 3).unwrap();
        let params = FinalParams { n: 1, n_tilde: 3, k_const: est.k_const };
        let dec = final_decomposition(&a, &g, f, &params).unwrap();
        assert!(dec.sum_defect() < 1e-10);
        for k in 1..=dec.count() {
            assert!(dec.min_relative_mode(k) > 0.0);
        }
    }

    #[test]
    fn final_params_validation() {
        assert!(FinalParams { n: 2, n_tilde: 2, k_const: 1.0 }.validate().is_err());
        assert!(FinalParams { n: 1, n_tilde: 3, k_const: 0.0 }.validate().is_err());
        assert!(FinalParams { n: 1, n_tilde: 3, k_const: 0.5 }.validate().is_ok());
    }
}
