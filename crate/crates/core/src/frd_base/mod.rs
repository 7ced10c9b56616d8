//! Base finite range decomposition `C = sum_{k=1}^{N+1} C_k`.
//!
//! Scale `k <= N` is the matrix function `G_k(A-hat(p))` where `G_k` is the t-quadrature of
//! `t W_t` over `[L^{k-1}/2R, L^k/2R]` (from `t = 0` for `k = 1`). Each `G_k` is a polynomial of
//! degree at most `L^k / 2R`, so `G_k(A)` has range at most `L^k / 2` and the kernel of `C_k`
//! is constant beyond it. Scale `N+1` is the remainder `A-hat^{-1} - sum_k C_k-hat`.
//!
//! Improved and final decompositions reuse the same scalar functions with other coefficient
//! tables, so all kinds share one [`Decomposition`] type.

pub mod bounds;
mod export;
pub mod wfamily;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bounds::{verify_akm_bounds, AkmOptions};
pub use export::{decomposition_from_text, decomposition_to_text, format_hex, parse_hex, ExportedDecomposition};
pub use wfamily::{ChebCoeffs, ChebSeries, LambdaSeries, WFamily, WFamilyConfig};

use crate::elliptic::{Generator, HermEig, ScalarFn};
use crate::lattice::{op_norm, op_norm_real, MatrixKernel, SpectralKernel, TorusGeometry};
use crate::{par, CMat, FrdError, RMat, Result};

/// Relative floor below which a mode counts as non-positive during construction.
pub const PSD_FAIL: f64 = 1e-8;

/// The scalar functions `f_1, ..., f_{N+1}` with `sum_k f_k(lambda) = 1 / lambda`.
#[derive(Clone, Debug)]
pub struct ScaleFunctions {
    l: usize,
    n: u32,
    range: u32,
    family: WFamily,
    series: Vec<LambdaSeries>,
}

impl ScaleFunctions {
    pub fn new(family: WFamily, l: usize, n: u32, range: u32) -> Self {
        let per_log2 = family.config().t_nodes_per_log2;
        let series = (1..=n)
            .map(|k| {
                let hi = (l as f64).powi(k as i32) / (2.0 * range as f64);
                let lo = if k == 1 { 0.0 } else { (l as f64).powi(k as i32 - 1) / (2.0 * range as f64) };
                let nodes = (per_log2 * (k as f64) * (l as f64).log2()).ceil().max(2.0) as usize;
                family.scale_series(lo, hi, nodes)
            })
            .collect();
        Self { l, n, range, family, series }
    }

    /// Functions for a generator's index set and `Omega0`, with default family parameters.
    pub fn for_generator(a: &Generator, l: usize, n: u32) -> Self {
        Self::with_config(a, l, n, WFamilyConfig::with_cap(spectral_cap(a)))
    }

    pub fn with_config(a: &Generator, l: usize, n: u32, config: WFamilyConfig) -> Self {
        Self::new(WFamily::new(config), l, n, a.set().range())
    }

    pub fn l(&self) -> usize {
        self.l
    }
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn range(&self) -> u32 {
        self.range
    }
    pub fn b(&self) -> f64 {
        self.family.b()
    }
    pub fn family(&self) -> &WFamily {
        &self.family
    }
    /// Number of scales, `N + 1`.
    pub fn count(&self) -> usize {
        self.n as usize + 1
    }
    /// Polynomial series of scale `k` (1-based, `k <= N`).
    pub fn series(&self, k: usize) -> &LambdaSeries {
        &self.series[k - 1]
    }

    /// `f_k(lambda)` for all `k`, index `k - 1`.
    pub fn values(&self, lambda: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.series.iter().map(|s| s.value(lambda)).collect();
        let rest: f64 = out.iter().sum();
        out.push(1.0 / lambda - rest);
        out
    }

    fn value(&self, idx: usize, lambda: f64) -> f64 {
        if idx < self.series.len() {
            self.series[idx].value(lambda)
        } else {
            1.0 / lambda - self.series.iter().map(|s| s.value(lambda)).sum::<f64>()
        }
    }
    fn d1(&self, idx: usize, lambda: f64) -> f64 {
        if idx < self.series.len() {
            self.series[idx].d1(lambda)
        } else {
            -1.0 / (lambda * lambda) - self.series.iter().map(|s| s.d1(lambda)).sum::<f64>()
        }
    }
    fn d2(&self, idx: usize, lambda: f64) -> f64 {
        if idx < self.series.len() {
            self.series[idx].d2(lambda)
        } else {
            2.0 / (lambda * lambda * lambda) - self.series.iter().map(|s| s.d2(lambda)).sum::<f64>()
        }
    }

    /// `G_k(0)` for `k <= N`; the constant term that sets the far-field value.
    pub fn constant_terms(&self) -> Vec<f64> {
        self.series.iter().map(|s| s.value(0.0)).collect()
    }
}

/// `B = Omega0 sum_alpha 4^{|alpha|_1}`, an upper bound for every eigenvalue of `A-hat(p)`.
pub fn spectral_cap(a: &Generator) -> f64 {
    a.big_omega0() * a.set().symbol_sup()
}

/// A linear combination `sum_j c_j f_j` as a scalar function.
pub struct Combination<'a> {
    pub funcs: &'a ScaleFunctions,
    pub coeffs: &'a [f64],
}

impl ScalarFn for Combination<'_> {
    fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| c * self.funcs.value(j, x)).sum()
    }
    fn d1(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| c * self.funcs.d1(j, x)).sum()
    }
    fn d2(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| c * self.funcs.d2(j, x)).sum()
    }
}

/// Coefficients of one output scale: `a` multiplies the base functions of the generator,
/// `r` those of the reference generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMix {
    pub a: Vec<f64>,
    pub r: Vec<f64>,
}

impl ScaleMix {
    fn has_reference(&self) -> bool {
        self.r.iter().any(|v| *v != 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecompositionKind {
    Base,
    Improved { n: u32 },
    Final { n: u32, n_tilde: u32, k_const: f64 },
}

impl DecompositionKind {
    pub fn label(&self) -> String {
        match self {
            Self::Base => "base".into(),
            Self::Improved { n } => format!("improved(n={n})"),
            Self::Final { n, n_tilde, k_const } => format!("final(n={n},n_tilde={n_tilde},K={k_const:e})"),
        }
    }
}

/// One scale: Fourier multiplier, position kernel and far-field matrix.
#[derive(Clone, Debug)]
pub struct ScaleKernel {
    pub spectral: SpectralKernel,
    pub position: MatrixKernel,
    /// Value beyond the range; `None` for the remainder scale.
    pub tail: Option<RMat>,
}

/// Scales `1..=N+1` of a decomposition together with what is needed to differentiate it.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub geometry: TorusGeometry,
    pub kind: DecompositionKind,
    pub generator: Generator,
    pub reference: Option<Generator>,
    pub funcs: Arc<ScaleFunctions>,
    pub mixes: Vec<ScaleMix>,
    pub scales: Vec<ScaleKernel>,
}

/// The base decomposition of `A^{-1}` on `geom`.
pub fn base_decomposition(a: &Generator, geom: &TorusGeometry, funcs: Arc<ScaleFunctions>) -> Result<Decomposition> {
    let count = funcs.count();
    let mixes = (0..count)
        .map(|k| {
            let mut e = vec![0.0; count];
            e[k] = 1.0;
            ScaleMix { a: e, r: vec![0.0; count] }
        })
        .collect();
    Decomposition::build(a, None, geom, funcs, mixes, DecompositionKind::Base)
}

/// Reference site `(ceil(L^k / 2), 0, ..., 0)` used to read off the far-field value.
pub fn tail_reference_site(geom: &TorusGeometry, k: u32) -> usize {
    let mut x = vec![0i64; geom.d()];
    x[0] = (geom.l() as i64).pow(k).div_euclid(2) + 1;
    geom.index_of(&x)
}

impl Decomposition {
    /// Builds every scale from coefficient tables over the base functions.
    pub fn build(
        a: &Generator,
        reference: Option<&Generator>,
        geom: &TorusGeometry,
        funcs: Arc<ScaleFunctions>,
        mixes: Vec<ScaleMix>,
        kind: DecompositionKind,
    ) -> Result<Self> {
        a.check_geometry(geom)?;
        if geom.l() != funcs.l() || geom.n() != funcs.n() {
            return Err(FrdError::Geometry(format!(
                "scale functions built for L = {}, N = {} but torus has L = {}, N = {}",
                funcs.l(),
                funcs.n(),
                geom.l(),
                geom.n()
            )));
        }
        if mixes.len() != funcs.count() {
            return Err(FrdError::Argument(format!("{} coefficient rows for {} scales", mixes.len(), funcs.count())));
        }
        let uses_ref = mixes.iter().any(ScaleMix::has_reference);
        let reference = if uses_ref {
            let r = reference.ok_or_else(|| FrdError::Argument("reference generator missing".into()))?;
            r.check_geometry(geom)?;
            Some(r.clone())
        } else {
            None
        };
        let mut out = Self {
            geometry: geom.clone(),
            kind,
            generator: a.clone(),
            reference,
            funcs,
            mixes,
            scales: Vec::new(),
        };
        let per_point = par::map_range(geom.volume(), |i| out.modes_at(i));
        let per_point = per_point.into_iter().collect::<Result<Vec<_>>>()?;
        let count = out.funcs.count();
        let m = geom.m();
        let mut spectral: Vec<SpectralKernel> = (0..count).map(|_| SpectralKernel::zeros(geom)).collect();
        for (i, mats) in per_point.into_iter().enumerate() {
            for (k, mat) in mats.into_iter().enumerate() {
                spectral[k].values[i] = mat;
            }
        }
        let consts = out.funcs.constant_terms();
        let vol = geom.volume() as f64;
        out.scales = spectral
            .into_iter()
            .enumerate()
            .map(|(idx, spectral)| {
                let k = idx as u32 + 1;
                let (mut position, _) = spectral.to_position();
                let tail = if k > geom.n() {
                    None
                } else if k < geom.n() {
                    Some(position.values[tail_reference_site(geom, k)].clone())
                } else {
                    let mix = &out.mixes[idx];
                    let c: f64 = consts.iter().enumerate().map(|(j, g)| (mix.a[j] + mix.r[j]) * g).sum();
                    Some(RMat::identity(m, m) * (-c / vol))
                };
                position.tail = tail.clone();
                ScaleKernel { spectral, position, tail }
            })
            .collect();
        Ok(out)
    }

    /// All scale multipliers at dual point `i`, with the construction checks.
    fn modes_at(&self, i: usize) -> Result<Vec<CMat>> {
        let g = &self.geometry;
        let m = g.m();
        let count = self.funcs.count();
        let dp = g.dual_point(i);
        if dp.is_zero() {
            return Ok(vec![CMat::zeros(m, m); count]);
        }
        let b = self.funcs.b();
        let eig = self.checked_eig(&self.generator, &dp.p, i)?;
        let base: Vec<Vec<f64>> = eig.values.iter().map(|&l| self.funcs.values(l)).collect();
        let ref_parts = match &self.reference {
            Some(r) => {
                let e = self.checked_eig(r, &dp.p, i)?;
                let v: Vec<Vec<f64>> = e.values.iter().map(|&l| self.funcs.values(l)).collect();
                Some((e, v))
            }
            None => None,
        };
        let scale = 1.0 / eig.min();
        let mut out = Vec::with_capacity(count);
        for (k, mix) in self.mixes.iter().enumerate() {
            let w: Vec<f64> = base.iter().map(|fv| dot(&mix.a, fv)).collect();
            let mut mat = eig.reconstruct(&w);
            let mut min_eig = w.iter().copied().fold(f64::INFINITY, f64::min);
            if mix.has_reference() {
                let (e, v) = ref_parts.as_ref().expect("reference present");
                let wr: Vec<f64> = v.iter().map(|fv| dot(&mix.r, fv)).collect();
                mat += e.reconstruct(&wr);
                min_eig = HermEig::new(&mat).min();
            }
            if min_eig < -PSD_FAIL * scale {
                return Err(FrdError::NotPositive { scale: k + 1, index: i, min_eig });
            }
            out.push(mat);
        }
        debug_assert!(eig.max() <= b * (1.0 + 1e-12));
        Ok(out)
    }

    fn checked_eig(&self, gen: &Generator, p: &[f64], i: usize) -> Result<HermEig> {
        let eig = HermEig::new(&gen.symbol(p));
        let b = self.funcs.b();
        if eig.max() > b * (1.0 + 1e-12) {
            return Err(FrdError::Argument(format!(
                "symbol eigenvalue {} exceeds the spectral cap B = {b}",
                eig.max()
            )));
        }
        let omega = 4.0 * gen.omega0() / (std::f64::consts::PI * std::f64::consts::PI);
        let p2: f64 = p.iter().map(|v| v * v).sum();
        let floor = 0.5 * omega * p2;
        if eig.min() < floor {
            return Err(FrdError::Ellipticity { index: i, min_eig: eig.min(), floor });
        }
        Ok(eig)
    }

    pub fn n(&self) -> u32 {
        self.geometry.n()
    }
    pub fn count(&self) -> usize {
        self.scales.len()
    }
    /// Scale `k`, 1-based.
    pub fn scale(&self, k: usize) -> &ScaleKernel {
        &self.scales[k - 1]
    }

    /// `max_p || sum_k C_k-hat(p) - A-hat(p)^{-1} || / || A-hat(p)^{-1} ||`.
    pub fn sum_defect(&self) -> f64 {
        let g = &self.geometry;
        let worst = par::map_range(g.volume(), |i| {
            let dp = g.dual_point(i);
            if dp.is_zero() {
                return 0.0;
            }
            let eig = HermEig::new(&self.generator.symbol(&dp.p));
            let inv = eig.reconstruct(&eig.values.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
            let mut sum = CMat::zeros(g.m(), g.m());
            for s in &self.scales {
                sum += &s.spectral.values[i];
            }
            op_norm(&(sum - &inv)) / op_norm(&inv)
        });
        worst.into_iter().fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `C_k-hat(p)` relative to `|| A-hat(p)^{-1} ||`, over all `p != 0`.
    pub fn min_relative_mode(&self, k: usize) -> f64 {
        let g = &self.geometry;
        let sym = &self.scale(k).spectral;
        par::map_range(g.volume(), |i| {
            if g.dual_point(i).is_zero() {
                return f64::INFINITY;
            }
            let inv_norm = 1.0 / HermEig::new(&self.generator.symbol(&g.dual_point(i).p)).min();
            HermEig::new(&sym.values[i]).min() / inv_norm
        })
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    /// `max_{d_inf(x) >= L^k / 2} || C_k(x) - C_k(x_ref) || / max_x || C_k(x) ||` and the number
    /// of far sites (zero for `k = N`, where no site is that far).
    pub fn range_defect(&self, k: usize) -> (f64, usize) {
        let g = &self.geometry;
        let pos = &self.scale(k).position;
        let half = (g.l() as f64).powi(k as i32) / 2.0;
        let reference = match &pos.tail {
            Some(t) => t.clone(),
            None => return (f64::NAN, 0),
        };
        let sup = pos.sup_norm();
        let mut worst = 0.0f64;
        let mut far = 0;
        for site in 0..g.volume() {
            if (g.dist_inf(site) as f64) >= half {
                far += 1;
                worst = worst.max(op_norm_real(&(&pos.values[site] - &reference)));
            }
        }
        (if sup > 0.0 { worst / sup } else { worst }, far)
    }

    /// Difference between the read-off far-field value and `-(1/V) sum_j c_j G_j(0) Id`.
    pub fn tail_defect(&self, k: usize) -> f64 {
        let Some(tail) = &self.scale(k).tail else { return 0.0 };
        let consts = self.funcs.constant_terms();
        let mix = &self.mixes[k - 1];
        let c: f64 = consts.iter().enumerate().map(|(j, g)| (mix.a[j] + mix.r[j]) * g).sum();
        let m = self.geometry.m();
        let expected = RMat::identity(m, m) * (-c / self.geometry.volume() as f64);
        op_norm_real(&(tail - &expected)) / op_norm_real(&expected).max(f64::MIN_POSITIVE)
    }

    /// `d^order/ds^order C_k-hat(p)` along `A + s direction`, for every scale. Only the
    /// generator-dependent part of each scale moves.
    pub fn spectral_derivative(&self, direction: &RMat, order: u32) -> Result<Vec<SpectralKernel>> {
        let g = &self.geometry;
        let idx: Vec<usize> = (0..g.volume()).collect();
        let per_point = self.derivative_at_points(direction, order, &idx)?;
        let mut out: Vec<SpectralKernel> = (0..self.count()).map(|_| SpectralKernel::zeros(g)).collect();
        for (i, mats) in per_point.into_iter().enumerate() {
            for (k, mat) in mats.into_iter().enumerate() {
                out[k].values[i] = mat;
            }
        }
        Ok(out)
    }

    /// Derivatives of all scales at the listed dual points, indexed `[point][scale]`.
    pub fn derivative_at_points(&self, direction: &RMat, order: u32, points: &[usize]) -> Result<Vec<Vec<CMat>>> {
        let g = &self.geometry;
        let m = g.m();
        let n = self.generator.matrix().nrows();
        if direction.nrows() != n || direction.ncols() != n {
            return Err(FrdError::Argument(format!("direction must be {n}x{n}")));
        }
        Ok(par::map_slice(points, |&i| {
            let dp = g.dual_point(i);
            if dp.is_zero() {
                return vec![CMat::zeros(m, m); self.count()];
            }
            let eig = HermEig::new(&self.generator.symbol(&dp.p));
            let bdot = self.generator.symbol_of(direction, &dp.p);
            self.mixes
                .iter()
                .map(|mix| eig.derivative(&bdot, &Combination { funcs: &self.funcs, coeffs: &mix.a }, order))
                .collect()
        }))
    }

    /// Position kernels of the derivative of every scale.
    pub fn position_derivative(&self, direction: &RMat, order: u32) -> Result<Vec<MatrixKernel>> {
        Ok(self.spectral_derivative(direction, order)?.iter().map(|s| s.to_position().0).collect())
    }

    /// The same decomposition rebuilt for `A + s direction`.
    pub fn rebuilt_for(&self, generator: &Generator) -> Result<Self> {
        Self::build(
            generator,
            self.reference.as_ref(),
            &self.geometry,
            self.funcs.clone(),
            self.mixes.clone(),
            self.kind.clone(),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::MultiIndexSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: u32, m: usize) -> (Generator, TorusGeometry, Arc<ScaleFunctions>) {
        let set = MultiIndexSet::first_order(2);
        let a = Generator::laplacian(&set, m, 0.5, 2.0).unwrap();
        let geom = TorusGeometry::new(3, n, 2, m).unwrap();
        let f = Arc::new(ScaleFunctions::for_generator(&a, 3, n));
        (a, geom, f)
    }

    #[test]
    fn scale_functions_sum_to_inverse() {
        let (_, _, f) = setup(3, 1);
        for &l in &[0.01, 0.5, 3.0, 7.9] {
            let s: f64 = f.values(l).iter().sum();
            assert!((s * l - 1.0).abs() < 1e-13);
        }
        assert_eq!(f.series(1).degree(), 1);
        assert_eq!(f.series(3).degree(), 13);
    }

    #[test]
    fn laplacian_base_properties() {
        let (a, geom, f) = setup(3, 1);
        let dec = base_decomposition(&a, &geom, f).unwrap();
        assert_eq!(dec.count(), 4);
        assert!(dec.sum_defect() < 1e-10);
        for k in 1..=3 {
            let (defect, far) = dec.range_defect(k);
            if k < 3 {
                assert!(far > 0);
                assert!(defect < 1e-9, "k = {k}: {defect}");
                assert!(dec.tail_defect(k) < 1e-8);
            }
            let t = dec.scale(k).tail.as_ref().unwrap();
            assert!(t[(0, 0)] <= 1e-14);
        }
        for k in 1..=4 {
            assert!(dec.min_relative_mode(k) > -1e-10);
            assert!(dec.scale(k).position.mean_defect() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let set = MultiIndexSet::next_nearest(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Generator::random(&set, 2, 0.5, 2.0, &mut rng).unwrap();
        let geom = TorusGeometry::new(3, 2, 2, 2).unwrap();
        let f = Arc::new(ScaleFunctions::for_generator(&a, 3, 2));
        let dec = base_decomposition(&a, &geom, f).unwrap();
        let dir = a.random_direction(&mut rng) * 0.1;
        let d1 = dec.spectral_derivative(&dir, 1).unwrap();
        let h = 1e-4;
        let plus = dec.rebuilt_for(&a.perturbed(&dir, h)).unwrap();
        let minus = dec.rebuilt_for(&a.perturbed(&dir, -h)).unwrap();
        for k in 1..=3 {
            for i in 1..geom.volume() {
                let fd = (&plus.scale(k).spectral.values[i] - &minus.scale(k).spectral.values[i]) / crate::C64::new(2.0 * h, 0.0);
                let an = &d1[k - 1].values[i];
                let err = op_norm(&(fd - an));
                assert!(err <= 1e-6 * (1.0 + op_norm(an)), "k={k} i={i} err={err}");
            }
        }
    }

    #[test]
    fn tails_do_not_depend_on_generator() {
        let set = MultiIndexSet::first_order(2);
        let geom = TorusGeometry::new(3, 3, 2, 1).unwrap();
        let lap = Generator::laplacian(&set, 1, 0.5, 2.0).unwrap();
        let f = Arc::new(ScaleFunctions::for_generator(&lap, 3, 3));
        let aniso = Generator::anisotropic(&set, 1, &[0.7, 1.6], 0.5, 2.0).unwrap();
        let d1 = base_decomposition(&lap, &geom, f.clone()).unwrap();
        let d2 = base_decomposition(&aniso, &geom, f).unwrap();
        for k in 1..=2 {
            let t1 = d1.scale(k).tail.as_ref().unwrap();
            let t2 = d2.scale(k).tail.as_ref().unwrap();
            assert!(op_norm_real(&(t1 - t2)) <= 1e-9 * op_norm_real(t1));
        }
    }
}
