//! Envelope measurements for the base decomposition, per scale `k` and annulus `j`.

use crate::elliptic::{HermEig, MultiIndex};
use crate::frd_base::Decomposition;
use crate::lattice::{op_norm, TorusGeometry};
use crate::report::{fit_line, BoundsReport};
use crate::{par, RMat, Result};

#[derive(Clone, Debug)]
pub struct AkmOptions {
    /// Decay order in the `j < k` Fourier envelope `|p|^{-2} (|p| L^{k-1})^{-n_bar}`.
    pub n_bar: u32,
    /// Highest derivative order in the generator.
    pub ell_max: u32,
    /// Difference orders for the position-space decay rows.
    pub alphas: Vec<MultiIndex>,
    /// Relative tolerance for the fitted position-space slope.
    pub slope_tol: f64,
}

impl AkmOptions {
    pub fn for_dim(d: usize) -> Self {
        let mut e1 = vec![0; d];
        e1[0] = 1;
        let mut e12 = e1.clone();
        e12[1] = 1;
        Self { n_bar: 2, ell_max: 1, alphas: vec![vec![0; d], e1, e12], slope_tol: 0.2 }
    }
}

/// Dual point indices grouped by annulus `0..=N`; `p = 0` is left out.
pub fn annulus_partition(geom: &TorusGeometry) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); geom.n() as usize + 1];
    for i in 0..geom.volume() {
        let dp = geom.dual_point(i);
        if let Ok(j) = geom.annulus_index(&dp) {
            out[j].push(i);
        }
    }
    out
}

/// `|p|^{-2} (|p| L^{k-1})^{-n_bar}` for `j < k`, `L^{2k}` otherwise.
pub fn upper_envelope(l: f64, k: usize, j: usize, p_norm: f64, n_bar: u32) -> f64 {
    if j < k {
        p_norm.powi(-2) * (p_norm * l.powi(k as i32 - 1)).powi(-(n_bar as i32))
    } else {
        l.powi(2 * k as i32)
    }
}

/// Measures the Fourier envelopes, lower bounds and position-space decay of every scale.
pub fn verify_akm_bounds(dec: &Decomposition, directions: &[RMat], opts: &AkmOptions) -> Result<BoundsReport> {
    let g = &dec.geometry;
    let l = g.l() as f64;
    let n = g.n() as usize;
    let d = g.d();
    let annuli = annulus_partition(g);
    let mut rep = BoundsReport::new();
    let mut derivs = Vec::new();
    for ell in 1..=opts.ell_max {
        for dir in directions {
            derivs.push((ell, dec.spectral_derivative(dir, ell)?));
        }
    }

    for k in 1..=dec.count() {
        let sk = &dec.scale(k).spectral;
        for (j, pts) in annuli.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let stats = par::map_slice(pts, |&i| {
                let pn = g.dual_point(i).norm();
                let env = upper_envelope(l, k, j, pn, opts.n_bar);
                (op_norm(&sk.values[i]) / env, HermEig::new(&sk.values[i]).min())
            });
            let upper = stats.iter().map(|s| s.0).fold(0.0, f64::max);
            rep.push("akm_fourier_upper", Some(k), Some(j), "norm/envelope", upper, 1.0, upper.is_finite());
            let lower_region = j >= k.min(n) || (k == 1 && j == 0);
            if lower_region {
                let floor = if j >= k { l.powi(2 * k as i32) } else if k == 1 { 1.0 } else { l.powi(2 * n as i32) };
                let lo = stats.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) / floor;
                rep.push("akm_fourier_lower", Some(k), Some(j), "min_eig/floor", lo, 0.0, lo > 0.0);
            }
            for (ell, dk) in &derivs {
                let r = pts
                    .iter()
                    .map(|&i| {
                        let env = upper_envelope(l, k, j, g.dual_point(i).norm(), opts.n_bar);
                        op_norm(&dk[k - 1].values[i]) / env
                    })
                    .fold(0.0, f64::max);
                rep.push(
                    "akm_fourier_derivative",
                    Some(k),
                    Some(j),
                    &format!("ell={ell} norm/envelope"),
                    r,
                    1.0,
                    r.is_finite(),
                );
            }
        }
    }
    rep.fit("akm_upper_C", rep.max_ratio("akm_fourier_upper", "norm/envelope"));
    rep.fit("akm_lower_c", rep.min_ratio("akm_fourier_lower", "min_eig/floor"));

    // position space
    let mut pos_derivs = Vec::new();
    for (ell, dk) in &derivs {
        pos_derivs.push((*ell, dk.iter().map(|s| s.to_position().0).collect::<Vec<_>>()));
    }
    for alpha in &opts.alphas {
        let order: u32 = alpha.iter().sum();
        let expo = d as f64 - 2.0 + order as f64;
        let label = format!("alpha={alpha:?}");
        let mut logs = Vec::new();
        for k in 1..=n {
            let env = l.powf(-(k as f64 - 1.0) * expo);
            let sup = dec.scale(k).position.multi_diff(alpha).sup_norm();
            logs.push(sup.ln());
            rep.push("akm_position", Some(k), None, &format!("{label} ell=0"), sup / env, 1.0, sup.is_finite());
            for ell in 1..=opts.ell_max {
                let sup_d = pos_derivs
                    .iter()
                    .filter(|(e, _)| *e == ell)
                    .map(|(_, ks)| ks[k - 1].multi_diff(alpha).sup_norm())
                    .fold(0.0, f64::max);
                rep.push("akm_position", Some(k), None, &format!("{label} ell={ell}"), sup_d / env, 1.0, sup_d.is_finite());
            }
        }
        if n >= 2 {
            let ks: Vec<f64> = (1..=n).map(|k| k as f64).collect();
            let (slope, _) = fit_line(&ks, &logs);
            let measured = slope / l.ln();
            let pass = slope_within(measured, -expo, opts.slope_tol);
            rep.push("akm_position_slope", None, None, &label, measured, -expo, pass);
            rep.fit(&format!("akm_slope_{label}"), measured);
        }
    }
    Ok(rep)
}

/// `measured` within `tol` of `target` relatively, or absolutely in units of one when the
/// target is zero.
pub fn slope_within(measured: f64, target: f64, tol: f64) -> bool {
    if target == 0.0 {
        measured.abs() <= tol
    } else {
        (measured - target).abs() <= tol * target.abs()
    }
}
