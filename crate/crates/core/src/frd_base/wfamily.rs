//! The scale-indexed polynomial family `W_t`.
//!
//! With `kappa-hat` a smooth bump on `[-1/2, 1/2]`, `kappa` its inverse Fourier transform and
//! `phi = kappa^2`, the periodized function `theta -> sum_n phi(t (theta - 2 pi n))` has the
//! cosine series `(1 / (2 pi t)) (phi-hat(0) + 2 sum_{j >= 1} phi-hat(j / t) cos(j theta))`.
//! Because `phi-hat = kappa-hat * kappa-hat / (2 pi)` vanishes outside `[-1, 1]` only
//! `j <= t` contribute, and with `cos(theta) = 1 - lambda / (2B)` the series is a Chebyshev
//! polynomial of degree at most `t` in `lambda`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::elliptic::ScalarFn;

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch via Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|v| a + h * (v + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Parameters of the family.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WFamilyConfig {
    /// Spectral cap `B`; the family is used for `lambda in [0, B]`.
    pub b: f64,
    /// `s` in `kappa-hat(u) = exp(-s / (1 - 4 u^2))`.
    pub bump_sharpness: f64,
    /// Gauss-Legendre nodes per unit of `log2(L^k)` in the scale integrals.
    pub t_nodes_per_log2: f64,
    /// Nodes for the autocorrelation integral defining `phi-hat`.
    pub convolution_nodes: usize,
    /// `lambda_ref / B` for the normalization.
    pub calibration_fraction: f64,
}

impl WFamilyConfig {
    pub fn with_cap(b: f64) -> Self {
        Self { b, bump_sharpness: 1.0, t_nodes_per_log2: 8.0, convolution_nodes: 200, calibration_fraction: 0.1 }
    }
}

const TABLE_INTERVALS: usize = 16384;
const KAPPA_NODES: usize = 600;

/// The profile `kappa-hat`, `kappa`, `phi` and a tabulated `phi-hat`.
#[derive(Clone, Debug)]
pub struct BumpProfile {
    sharpness: f64,
    kappa_nodes: Vec<f64>,
    kappa_weights: Vec<f64>,
    phihat_table: Vec<f64>,
}

impl BumpProfile {
    pub fn new(sharpness: f64, convolution_nodes: usize) -> Self {
        let (u, w) = gauss_legendre_on(KAPPA_NODES, 0.0, 0.5);
        let kw: Vec<f64> = u.iter().zip(&w).map(|(&ui, &wi)| wi * bump(sharpness, ui)).collect();
        let (cx, cw) = gauss_legendre(convolution_nodes);
        let table = (0..=TABLE_INTERVALS)
            .map(|i| phihat_quadrature(sharpness, i as f64 / TABLE_INTERVALS as f64, &cx, &cw))
            .collect();
        Self { sharpness, kappa_nodes: u, kappa_weights: kw, phihat_table: table }
    }

    pub fn kappa_hat(&self, u: f64) -> f64 {
        bump(self.sharpness, u)
    }

    /// `kappa(x) = (1 / pi) int_0^{1/2} kappa-hat(u) cos(u x) du`.
    pub fn kappa(&self, x: f64) -> f64 {
        self.kappa_nodes.iter().zip(&self.kappa_weights).map(|(u, w)| w * (u * x).cos()).sum::<f64>() / PI
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.kappa(x).powi(2)
    }

    /// Tabulated `phi-hat(omega)`, zero for `|omega| >= 1`.
    pub fn phi_hat(&self, omega: f64) -> f64 {
        let w = omega.abs();
        if w >= 1.0 {
            return 0.0;
        }
        let pos = w * TABLE_INTERVALS as f64;
        let i = (pos.floor() as usize).min(TABLE_INTERVALS - 1);
        let f = pos - i as f64;
        // four-point Lagrange, mirrored at 0 and zero-extended past 1
        let at = |k: isize| -> f64 {
            let k = k.unsigned_abs();
            if k > TABLE_INTERVALS {
                0.0
            } else {
                self.phihat_table[k]
            }
        };
        let i = i as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let (a, b, c, d) = (f + 1.0, f, f - 1.0, f - 2.0);
        -p0 * b * c * d / 6.0 + p1 * a * c * d / 2.0 - p2 * a * b * d / 2.0 + p3 * a * b * c / 6.0
    }

    /// `phi-hat` by direct quadrature of the autocorrelation.
    pub fn phi_hat_direct(&self, omega: f64, nodes: usize) -> f64 {
        let (cx, cw) = gauss_legendre(nodes);
        phihat_quadrature(self.sharpness, omega.abs(), &cx, &cw)
    }

    /// `int_0^inf s phi(s) ds` from `phi-hat` through the finite-part identity
    /// `int |s| phi = -(1/pi) f.p. int phi-hat(w) / w^2 dw`.
    pub fn first_moment(&self) -> f64 {
        let (x, w) = gauss_legendre_on(400, 0.0, 1.0);
        let f0 = self.phi_hat(0.0);
        let integral: f64 = x.iter().zip(&w).map(|(&v, &wi)| wi * (self.phi_hat(v) - f0) / (v * v)).sum();
        -(2.0 * integral - 2.0 * f0) / (2.0 * PI)
    }
}

fn bump(s: f64, u: f64) -> f64 {
    let r = 1.0 - 4.0 * u * u;
    if r <= 0.0 {
        0.0
    } else {
        (-s / r).exp()
    }
}

fn phihat_quadrature(s: f64, w: f64, cx: &[f64], cw: &[f64]) -> f64 {
    if w >= 1.0 {
        return 0.0;
    }
    let (lo, hi) = (w - 0.5, 0.5);
    let h = 0.5 * (hi - lo);
    let mut acc = 0.0;
    for (x, wt) in cx.iter().zip(cw) {
        let u = lo + h * (x + 1.0);
        acc += wt * bump(s, u) * bump(s, w - u);
    }
    acc * h / (2.0 * PI)
}

/// Chebyshev coefficients of `W_t` (unnormalized), `c_j = 0` for `j > t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebCoeffs {
    pub t: f64,
    pub coeffs: Vec<f64>,
}

impl ChebCoeffs {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}

/// Chebyshev series `sum_j a_j T_j(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebSeries {
    pub coeffs: Vec<f64>,
}

impl ChebSeries {
    /// Clenshaw evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let (mut b1, mut b2) = (0.0, 0.0);
        for &a in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + a;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coeffs.first().copied().unwrap_or(0.0)
    }

    /// Coefficients of the derivative in `x`.
    pub fn derivative(&self) -> ChebSeries {
        let n = self.coeffs.len();
        if n <= 1 {
            return ChebSeries { coeffs: vec![0.0] };
        }
        let mut b = vec![0.0; n + 1];
        for j in (1..n).rev() {
            b[j - 1] = b[j + 1] + 2.0 * j as f64 * self.coeffs[j];
        }
        b[0] *= 0.5;
        b.truncate(n - 1);
        ChebSeries { coeffs: b }
    }
}

/// A Chebyshev series in `x = 1 - lambda / (2B)`, evaluated as a function of `lambda`.
#[derive(Clone, Debug)]
pub struct LambdaSeries {
    b: f64,
    value: ChebSeries,
    first: ChebSeries,
    second: ChebSeries,
}

impl LambdaSeries {
    pub fn new(b: f64, coeffs: Vec<f64>) -> Self {
        let value = ChebSeries { coeffs };
        let first = value.derivative();
        let second = first.derivative();
        Self { b, value, first, second }
    }

    pub fn degree(&self) -> usize {
        self.value.coeffs.len().saturating_sub(1)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.value.coeffs
    }

    fn x(&self, lambda: f64) -> f64 {
        1.0 - lambda / (2.0 * self.b)
    }
}

impl ScalarFn for LambdaSeries {
    fn value(&self, lambda: f64) -> f64 {
        self.value.eval(self.x(lambda))
    }
    fn d1(&self, lambda: f64) -> f64 {
        -self.first.eval(self.x(lambda)) / (2.0 * self.b)
    }
    fn d2(&self, lambda: f64) -> f64 {
        self.second.eval(self.x(lambda)) / (4.0 * self.b * self.b)
    }
}

/// The calibrated family: `W_t(lambda) / c_norm` integrates to `1 / lambda` against `t dt`.
#[derive(Clone, Debug)]
pub struct WFamily {
    config: WFamilyConfig,
    profile: Arc<BumpProfile>,
    c_norm: f64,
}

type ProfileKey = (u64, usize);
type NormKey = (u64, usize, u64);

fn profile_cache() -> &'static Mutex<HashMap<ProfileKey, Arc<BumpProfile>>> {
    static CACHE: OnceLock<Mutex<HashMap<ProfileKey, Arc<BumpProfile>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn norm_cache() -> &'static Mutex<HashMap<NormKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<NormKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

impl WFamily {
    /// Builds and calibrates the family. `W_t` depends on `lambda` only through `lambda / B`,
    /// so `c_norm / B` is computed once per profile and calibration fraction.
    pub fn new(config: WFamilyConfig) -> Self {
        let pkey = (config.bump_sharpness.to_bits(), config.convolution_nodes);
        let profile = profile_cache()
            .lock()
            .expect("profile cache")
            .entry(pkey)
            .or_insert_with(|| Arc::new(BumpProfile::new(config.bump_sharpness, config.convolution_nodes)))
            .clone();
        let nkey = (pkey.0, pkey.1, config.calibration_fraction.to_bits());
        let cached = norm_cache().lock().expect("norm cache").get(&nkey).copied();
        let mut fam = Self { config, profile, c_norm: 1.0 };
        let per_b = match cached {
            Some(v) => v,
            None => {
                let lambda_ref = fam.config.calibration_fraction * fam.config.b;
                let v = lambda_ref * fam.t_integral_raw(lambda_ref) / fam.config.b;
                norm_cache().lock().expect("norm cache").insert(nkey, v);
                v
            }
        };
        fam.c_norm = per_b * fam.config.b;
        fam
    }

    pub fn config(&self) -> &WFamilyConfig {
        &self.config
    }
    pub fn b(&self) -> f64 {
        self.config.b
    }
    pub fn profile(&self) -> &BumpProfile {
        &self.profile
    }
    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    /// `c_norm` from the closed form `B int_0^inf s phi(s) ds`, for cross-checking.
    pub fn c_norm_closed_form(&self) -> f64 {
        self.config.b * self.profile.first_moment()
    }

    /// Unnormalized coefficients of `W_t`.
    pub fn cheb_coeffs(&self, t: f64) -> ChebCoeffs {
        let coeffs = self.t_times_coeffs(t).into_iter().map(|c| c / t).collect();
        ChebCoeffs { t, coeffs }
    }

    /// `t c_j(t)`, finite as `t -> 0`.
    fn t_times_coeffs(&self, t: f64) -> Vec<f64> {
        let jmax = t.floor() as usize;
        let mut out = Vec::with_capacity(jmax + 1);
        out.push(self.profile.phi_hat(0.0) / (2.0 * PI));
        for j in 1..=jmax {
            out.push(self.profile.phi_hat(j as f64 / t) / PI);
        }
        out
    }

    fn x(&self, lambda: f64) -> f64 {
        1.0 - lambda / (2.0 * self.config.b)
    }

    /// Normalized `W_t(lambda)`.
    pub fn w_eval(&self, t: f64, lambda: f64) -> f64 {
        self.t_w_raw(t, lambda) / (t * self.c_norm)
    }

    fn t_w_raw(&self, t: f64, lambda: f64) -> f64 {
        ChebSeries { coeffs: self.t_times_coeffs(t) }.eval(self.x(lambda))
    }

    /// `int_0^inf t W_t(lambda) dt` without normalization, by composite Gauss-Legendre in `t`
    /// up to where `phi` has decayed below double precision relevance.
    fn t_integral_raw(&self, lambda: f64) -> f64 {
        let theta = self.x(lambda).clamp(-1.0, 1.0).acos();
        let t_max = 320.0 / theta.max(1e-12);
        let width = (0.1 / theta).min(1.0);
        let panels = (t_max / width).ceil() as usize;
        let (gx, gw) = gauss_legendre(32);
        let sums = crate::par::map_range(panels, |p| {
            let a = p as f64 * width;
            let h = 0.5 * width;
            gx.iter().zip(&gw).map(|(x, w)| w * h * self.t_w_raw(a + h * (x + 1.0), lambda)).sum::<f64>()
        });
        sums.iter().sum()
    }

    /// Normalized `int_0^inf t W_t(lambda) dt`; equals `1 / lambda` after calibration.
    pub fn t_integral(&self, lambda: f64) -> f64 {
        self.t_integral_raw(lambda) / self.c_norm
    }

    /// `sum_i w_i t_i W_{t_i}` over Gauss-Legendre nodes on `[t_lo, t_hi]`, as one
    /// normalized Chebyshev series of degree at most `t_hi`.
    pub fn scale_series(&self, t_lo: f64, t_hi: f64, nodes: usize) -> LambdaSeries {
        let (ts, ws) = gauss_legendre_on(nodes, t_lo, t_hi);
        let mut coeffs = vec![0.0; t_hi.floor() as usize + 1];
        for (t, w) in ts.iter().zip(&ws) {
            for (j, c) in self.t_times_coeffs(*t).into_iter().enumerate() {
                coeffs[j] += w * c / self.c_norm;
            }
        }
        LambdaSeries::new(self.config.b, coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family() -> WFamily {
        WFamily::new(WFamilyConfig::with_cap(8.0))
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        let (x, w) = gauss_legendre_on(7, 0.0, 3.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((s - 9.0).abs() < 1e-13);
    }

    #[test]
    fn chebyshev_derivative() {
        // T_3 = 4x^3 - 3x, derivative 12x^2 - 3 = 6 T_2 + 3 T_0
        let s = ChebSeries { coeffs: vec![0.0, 0.0, 0.0, 1.0] };
        let d = s.derivative();
        assert!((d.eval(0.3) - (12.0 * 0.09 - 3.0)).abs() < 1e-14);
        assert!((d.derivative().eval(0.3) - 24.0 * 0.3).abs() < 1e-13);
    }

    #[test]
    fn phi_is_nonnegative_and_kappa_positive_at_zero() {
        let f = family();
        assert!(f.profile().kappa(0.0) > 0.0);
        for i in 0..10_000 {
            assert!(f.profile().phi(-50.0 + 0.01 * i as f64) >= 0.0);
        }
    }

    #[test]
    fn phi_hat_table_matches_quadrature() {
        let f = family();
        let scale = f.profile().phi_hat(0.0);
        for i in 0..=200 {
            let w = i as f64 / 200.0 * 0.999;
            let a = f.profile().phi_hat(w);
            let b = f.profile().phi_hat_direct(w, 400);
            assert!((a - b).abs() <= 1e-12 * scale, "w = {w}: {a} vs {b}");
        }
        assert_eq!(f.profile().phi_hat(1.0), 0.0);
        assert_eq!(f.profile().phi_hat(-1.5), 0.0);
    }

    #[test]
    fn coefficients_vanish_beyond_t() {
        let f = family();
        for &t in &[0.4, 1.0, 5.5, 12.25] {
            let c = f.cheb_coeffs(t);
            assert_eq!(c.degree(), t.floor() as usize);
        }
    }

    #[test]
    fn closed_form_normalization_agrees() {
        let f = family();
        let rel = (f.c_norm() - f.c_norm_closed_form()).abs() / f.c_norm();
        assert!(rel < 1e-9, "{} vs {}", f.c_norm(), f.c_norm_closed_form());
    }

    #[test]
    fn lambda_series_derivatives() {
        let f = family();
        let s = f.scale_series(1.5, 4.5, 16);
        let h = 1e-4;
        for &l in &[0.3, 2.0, 6.0] {
            let fd1 = (s.value(l + h) - s.value(l - h)) / (2.0 * h);
            let fd2 = (s.value(l + h) - 2.0 * s.value(l) + s.value(l - h)) / (h * h);
            assert!((fd1 - s.d1(l)).abs() < 1e-7 * (1.0 + s.d1(l).abs()));
            assert!((fd2 - s.d2(l)).abs() < 1e-4 * (1.0 + s.d2(l).abs()));
        }
    }
}
