//! Gaussian fields with a prescribed translation-invariant covariance.
//!
//! With `K-hat(p) = S(p)^2` and `z(p)` complex standard normal (`E|z|^2 = 1`, `E z^2 = 0`),
//! `xi-hat(p) = sqrt(V) S(p) z(p)` on one point of each `{p, -p}` pair, `xi-hat(-p)` its
//! conjugate and `xi-hat(0) = sqrt(V) S(0) g` with `g` real standard normal (zero for the
//! zero-mean kernels of a decomposition). Then `xi = idft(xi-hat)` is real with
//! `E xi(x) xi(y)^T = (1/V) sum_p e^{ip(x-y)} K-hat(p) = K(x - y)`.
//!
//! Random numbers come from ChaCha8 with the sample index as stream and a word offset fixed by
//! the dual point, so each sample is a pure function of `(seed, index)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::HermEig;
use crate::lattice::{dft_in_place, Field, MatrixKernel, SpectralKernel, TorusGeometry, TOL_MEAN};
use crate::report::BoundsReport;
use crate::{par, FrdError, Result, C64};

/// Relative floor for PSD modes.
pub const PSD_TOL: f64 = 1e-10;

/// `count` fields drawn with `seed`.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub geometry: TorusGeometry,
    pub seed: u64,
    pub fields: Vec<Field>,
}

impl SampleBatch {
    pub fn count(&self) -> usize {
        self.fields.len()
    }
}

/// PSD square root of every mode; fails on a mode below `-1e-10` times its norm.
pub fn spectral_sqrt(kernel: &SpectralKernel) -> Result<SpectralKernel> {
    let roots = par::map_range(kernel.values.len(), |i| {
        let k = &kernel.values[i];
        let e = HermEig::new(k);
        let scale = e.max().abs().max(f64::MIN_POSITIVE);
        if e.min() < -PSD_TOL * scale {
            return Err(FrdError::NotPositive { scale: 0, index: i, min_eig: e.min() });
        }
        Ok(e.reconstruct(&e.values.iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>()))
    });
    let values = roots.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SpectralKernel { geometry: kernel.geometry.clone(), values })
}

/// Draws `count` samples from the covariance with multiplier `kernel`.
pub fn sample(kernel: &SpectralKernel, seed: u64, count: usize) -> Result<SampleBatch> {
    Ok(sample_with_root(&spectral_sqrt(kernel)?, seed, count))
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-u1.ln()).sqrt();
    let a = 2.0 * PI * u2;
    C64::new(r * a.cos(), r * a.sin())
}

/// Draws samples given a precomputed square root.
pub fn sample_with_root(root: &SpectralKernel, seed: u64, count: usize) -> SampleBatch {
    let g = &root.geometry;
    let fields = par::map_range(count, |s| one_sample(root, seed, s as u64));
    SampleBatch { geometry: g.clone(), seed, fields }
}

/// Sample number `index` of the stream for `seed`.
pub fn one_sample(root: &SpectralKernel, seed: u64, index: u64) -> Field {
    let g = &root.geometry;
    let m = g.m();
    let v = g.volume();
    let s = (v as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut spec = vec![C64::new(0.0, 0.0); v * m];
    if root.values[0].iter().any(|z| *z != C64::new(0.0, 0.0)) {
        rng.set_word_pos(0);
        let z = nalgebra::DVector::from_iterator(
            m,
            (0..m).map(|_| C64::new(complex_normal(&mut rng).re * std::f64::consts::SQRT_2, 0.0)),
        );
        let xi = &root.values[0] * z;
        for c in 0..m {
            spec[c] = C64::new(xi[c].re * s, 0.0);
        }
    }
    for i in 1..v {
        let neg = g.neg_index(i);
        if neg < i {
            continue;
        }
        rng.set_word_pos((i as u128) * 4 * m as u128);
        let z = nalgebra::DVector::from_iterator(m, (0..m).map(|_| complex_normal(&mut rng)));
        let xi = &root.values[i] * z;
        for c in 0..m {
            let val = xi[c] * s;
            spec[i * m + c] = val;
            spec[neg * m + c] = val.conj();
        }
    }
    let mut values = vec![0.0; v * m];
    for c in 0..m {
        let mut buf: Vec<C64> = (0..v).map(|i| spec[i * m + c]).collect();
        dft_in_place(g, &mut buf, true);
        for (i, z) in buf.into_iter().enumerate() {
            values[i * m + c] = z.re;
        }
    }
    Field { geometry: g.clone(), values }
}

/// Largest `|sum_x xi(x)| / (V max |xi|)` over a batch.
pub fn max_mean_defect(batch: &SampleBatch) -> f64 {
    batch
        .fields
        .iter()
        .map(|f| {
            let mx = f.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            f.mean().iter().fold(0.0f64, |a, v| a.max(v.abs())) / mx
        })
        .fold(0.0, f64::max)
}

/// Whether every sample has zero mean within the lattice tolerance.
pub fn all_zero_mean(batch: &SampleBatch) -> bool {
    max_mean_defect(batch) <= TOL_MEAN
}

/// Empirical `E[a b]` with its standard error for paired observations with known zero mean.
pub fn mean_with_error(products: &[f64]) -> (f64, f64) {
    let n = products.len() as f64;
    let mean = products.iter().sum::<f64>() / n;
    let var = products.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One covariance entry `E xi_i(x) xi_j(y)`: estimate, standard error, exact value.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceProbe {
    pub x: usize,
    pub y: usize,
    pub i: usize,
    pub j: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
}

impl CovarianceProbe {
    /// Residual in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.exact).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

pub fn covariance_probe(batch: &SampleBatch, kernel: &MatrixKernel, x: usize, y: usize, i: usize, j: usize) -> CovarianceProbe {
    let g = &batch.geometry;
    let m = g.m();
    let prods: Vec<f64> = batch.fields.iter().map(|f| f.values[x * m + i] * f.values[y * m + j]).collect();
    let (estimate, std_error) = mean_with_error(&prods);
    let exact = kernel.values[g.sub_index(x, y)][(i, j)];
    CovarianceProbe { x, y, i, j, estimate, std_error, exact }
}

/// Covariance probes at `count` pseudo-random `(x, y, i, j)` chosen from `seed`.
pub fn covariance_probes(batch: &SampleBatch, kernel: &MatrixKernel, count: usize, seed: u64) -> Vec<CovarianceProbe> {
    let g = &batch.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = rng.random_range(0..g.volume());
            let y = rng.random_range(0..g.volume());
            let i = rng.random_range(0..g.m());
            let j = rng.random_range(0..g.m());
            covariance_probe(batch, kernel, x, y, i, j)
        })
        .collect()
}

/// `E[grad_a xi(x) grad_b xi(y)^T]` from the kernel:
/// `K(z + e_a - e_b) - K(z + e_a) - K(z - e_b) + K(z)` with `z = x - y`.
pub fn exact_gradient_covariance(kernel: &MatrixKernel, z: usize, a: usize, b: usize) -> crate::RMat {
    let g = &kernel.geometry;
    let mut zc = g.coords(z);
    let at = |v: &[i64]| kernel.values[g.index_of(v)].clone();
    let k0 = at(&zc);
    zc[a] += 1;
    let ka = at(&zc);
    zc[b] -= 1;
    let kab = at(&zc);
    zc[a] -= 1;
    let kb = at(&zc);
    kab - ka - kb + k0
}

/// Gradient decorrelation beyond range `L^k / 2` at up to `max_pairs` far offsets.
///
/// For each tested offset `z` with `d_inf(z) >= L^k/2 + 1`, every direction pair and component
/// pair is compared with zero within `4 / sqrt(count)` times the product of the empirical
/// standard deviations; the exact covariance is recorded too.
pub fn gradient_range_check(batch: &SampleBatch, kernel: &MatrixKernel, k: u32, max_pairs: usize) -> BoundsReport {
    let g = &batch.geometry;
    let m = g.m();
    let d = g.d();
    let n = batch.count() as f64;
    let threshold = (g.l() as f64).powi(k as i32) / 2.0 + 1.0;
    let far: Vec<usize> = (0..g.volume()).filter(|&z| g.dist_inf(z) as f64 >= threshold).collect();
    let stride = (far.len() / max_pairs.max(1)).max(1);
    let tested: Vec<usize> = far.iter().copied().step_by(stride).take(max_pairs).collect();
    let origin = 0usize;
    let grads: Vec<Vec<Field>> = batch.fields.iter().map(|f| (0..d).map(|a| f.forward_diff(a)).collect()).collect();
    let mut rep = BoundsReport::new();
    let mut worst_exact = 0.0f64;
    let mut worst_band = 0.0f64;
    for &z in &tested {
        // z = x - y with x = z, y = origin
        for a in 0..d {
            for b in 0..d {
                let exact = exact_gradient_covariance(kernel, z, a, b);
                worst_exact = worst_exact.max(exact.amax());
                for r in 0..m {
                    for s in 0..m {
                        let xs: Vec<f64> = grads.iter().map(|gr| gr[a].values[z * m + r]).collect();
                        let ys: Vec<f64> = grads.iter().map(|gr| gr[b].values[origin * m + s]).collect();
                        let sx = (xs.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                        let sy = (ys.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                        let cov = xs.iter().zip(&ys).map(|(u, v)| u * v).sum::<f64>() / n;
                        let band = 4.0 / n.sqrt() * sx * sy;
                        worst_band = worst_band.max(cov.abs() / band);
                        rep.push(
                            "gradient_range",
                            Some(k as usize),
                            Some(z),
                            &format!("a={a} b={b} r={r} s={s}"),
                            cov.abs(),
                            band,
                            cov.abs() <= band,
                        );
                    }
                }
            }
        }
    }
    rep.fit("gradient_range_exact_max", worst_exact);
    rep.fit("gradient_range_band_ratio_max", worst_band);
    rep.fit("gradient_range_pairs", tested.len() as f64);
    rep
}

/// Site-major text form of a batch with shortest round-trip decimals.
pub fn batch_to_text(batch: &SampleBatch) -> String {
    let g = &batch.geometry;
    let mut out = format!(
        "frd-sample-batch 1\nseed {}\ncount {}\ngeometry L={} N={} d={} m={}\n",
        batch.seed,
        batch.count(),
        g.l(),
        g.n(),
        g.d(),
        g.m()
    );
    for (s, f) in batch.fields.iter().enumerate() {
        out.push_str(&format!("sample {s}\n"));
        for site in 0..g.volume() {
            let row: Vec<String> = (0..g.m()).map(|c| format!("{:?}", f.get(site, c))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{green_spectral, Generator, MultiIndexSet};
    use crate::CMat;

    fn green(m: usize) -> SpectralKernel {
        let set = MultiIndexSet::first_order(2);
        let a = Generator::anisotropic(&set, m, &[0.8, 1.5], 0.5, 2.0).unwrap();
        green_spectral(&a, &TorusGeometry::new(3, 1, 2, m).unwrap()).unwrap()
    }

    #[test]
    fn square_root_squares_back() {
        let k = green(2);
        let r = spectral_sqrt(&k).unwrap();
        assert_eq!(r.values[0], CMat::zeros(2, 2));
        for (a, b) in r.values.iter().zip(&k.values) {
            assert!((a * a - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn rejects_indefinite_mode() {
        let mut k = green(1);
        k.values[1][(0, 0)] = C64::new(-1.0, 0.0);
        assert!(spectral_sqrt(&k).is_err());
    }

    #[test]
    fn samples_are_real_zero_mean_and_reproducible() {
        let k = green(2);
        let a = sample(&k, 7, 20).unwrap();
        let b = sample(&k, 7, 20).unwrap();
        let c = sample(&k, 8, 20).unwrap();
        assert!(all_zero_mean(&a));
        assert_eq!(a.fields[3].values, b.fields[3].values);
        assert_ne!(a.fields[3].values, c.fields[3].values);
        // sample i does not depend on how many were drawn
        let root = spectral_sqrt(&k).unwrap();
        assert_eq!(one_sample(&root, 7, 3).values, a.fields[3].values);
    }

    #[test]
    fn lag_zero_covariance_within_five_errors() {
        let k = green(1);
        let pos = k.to_position().0;
        let batch = sample(&k, 11, 10_000).unwrap();
        let probe = covariance_probe(&batch, &pos, 0, 0, 0, 0);
        assert!(probe.z_score() <= 5.0, "{probe:?}");
    }

    #[test]
    fn exact_gradient_covariance_of_constant_kernel_vanishes() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let mut k = MatrixKernel::zeros(&g);
        for v in &mut k.values {
            v[(0, 0)] = 0.25;
        }
        assert_eq!(exact_gradient_covariance(&k, 4, 0, 1)[(0, 0)], 0.0);
    }
}
