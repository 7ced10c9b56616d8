//! Moments of centred Gaussian quadratic forms, `E |<x, A x> - tr A|^s / ||A||_HS^s`.
//!
//! For `s <= 4` every ratio is at most `60^{s/4}`: the fourth moment equals
//! `12 (tr B^2)^2 + 48 tr B^4 <= 60 ||B||_HS^4` for the symmetric part `B`, with equality for
//! rank one, and lower moments follow by monotonicity of `L^s` norms.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::report::BoundsReport;
use crate::sampler::mean_with_error;
use crate::{par, RMat};

#[derive(Clone, Debug)]
pub struct WhittleOptions {
    pub sizes: Vec<usize>,
    pub matrices: usize,
    pub s_grid: Vec<f64>,
    pub samples: usize,
    pub identity_size: usize,
    pub identity_samples: usize,
    pub seed: u64,
}

impl Default for WhittleOptions {
    fn default() -> Self {
        Self {
            sizes: vec![4, 16, 64],
            matrices: 100,
            s_grid: vec![1.0, 2.0, 3.0, 4.0],
            samples: 20_000,
            identity_size: 16,
            identity_samples: 40_000,
            seed: 5,
        }
    }
}

/// Ceiling `60^{s/4}` on the ratio.
pub fn universal_bound(s: f64) -> f64 {
    60f64.powf(s / 4.0)
}

/// Centred quadratic form values `<x, A x> - tr A` for `samples` standard normal `x`.
pub fn centred_forms(a: &RMat, samples: usize, seed: u64) -> Vec<f64> {
    let n = a.nrows();
    let tr = a.trace();
    par::map_range(samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        x.dot(&(a * &x)) - tr
    })
}

/// Monte Carlo `(ratio, standard error)` for each `s`.
pub fn whittle_ratio(a: &RMat, s_grid: &[f64], samples: usize, seed: u64) -> Vec<(f64, f64)> {
    let hs = a.norm();
    let q = centred_forms(a, samples, seed);
    s_grid
        .iter()
        .map(|&s| {
            let v: Vec<f64> = q.iter().map(|y| (y.abs() / hs).powf(s)).collect();
            mean_with_error(&v)
        })
        .collect()
}

fn random_matrix(n: usize, seed: u64, index: usize) -> RMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | index as u64);
    // alternate dense Gaussian and low-rank matrices so the ensemble reaches the rank-one regime
    if index % 3 == 2 {
        let u = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        &u * u.transpose()
    } else {
        RMat::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng))
    }
}

/// Ratios over a random ensemble, the identity case and the Hölder and skew checks.
///
/// Rows use `j` for the matrix index.
pub fn whittle_check(opts: &WhittleOptions) -> BoundsReport {
    let mut rep = BoundsReport::new();
    let mut fitted = 0.0f64;
    let mut fitted_se = 0.0f64;
    for idx in 0..opts.matrices {
        let n = opts.sizes[idx % opts.sizes.len()];
        let a = random_matrix(n, opts.seed, idx);
        let ratios = whittle_ratio(&a, &opts.s_grid, opts.samples, opts.seed.wrapping_add(idx as u64 + 1));
        for (&s, &(r, se)) in opts.s_grid.iter().zip(&ratios) {
            let bound = universal_bound(s);
            rep.push("whittle", None, Some(idx), &format!("n={n} s={s}"), r, bound, r <= bound + 3.0 * se);
            if r > fitted {
                fitted = r;
                fitted_se = se;
            }
        }
        let find = |t: f64| opts.s_grid.iter().position(|&s| s == t).map(|i| ratios[i].0);
        if let (Some(r1), Some(r2)) = (find(1.0), find(2.0)) {
            // exact on the empirical measure as well
            rep.push("whittle_holder", None, Some(idx), &format!("n={n} s1/sqrt(s2)"), r1 / r2.sqrt(), 1.0, r1 <= r2.sqrt() * (1.0 + 1e-12));
        }
    }
    rep.fit("whittle_C", fitted);
    let ok = fitted <= universal_bound(4.0) + 3.0 * fitted_se;
    rep.push("whittle_constant", None, None, "max ratio", fitted, universal_bound(4.0), ok);

    let id = RMat::identity(opts.identity_size, opts.identity_size);
    let (r, se) = whittle_ratio(&id, &[2.0], opts.identity_samples, opts.seed ^ 0xabcdef)[0];
    // ratio uses ||Id||_HS^2 = n, so the chi-square variance gives exactly 2
    rep.push("whittle_identity", None, None, "s=2", r, 2.0, (r - 2.0).abs() <= 3.0 * se);
    rep.fit("whittle_identity_s2", r);
    rep.fit("whittle_identity_se", se);

    let skew = {
        let b = random_matrix(8, opts.seed, usize::MAX >> 1);
        &b - b.transpose()
    };
    let q = centred_forms(&skew, 200, opts.seed);
    let worst = q.iter().map(|v| v.abs()).fold(0.0, f64::max) / skew.norm();
    rep.push("whittle_skew", None, None, "|<x,Ax>|/||A||", worst, 1e-12, worst <= 1e-12);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_ratio_two() {
        let (r, se) = whittle_ratio(&RMat::identity(8, 8), &[2.0], 40_000, 2)[0];
        assert!((r - 2.0).abs() <= 4.0 * se, "{r} {se}");
    }

    #[test]
    fn rank_one_fourth_moment_is_sixty() {
        let mut a = RMat::zeros(3, 3);
        a[(0, 0)] = 1.0;
        let (r, se) = whittle_ratio(&a, &[4.0], 200_000, 4)[0];
        assert!((r - 60.0).abs() <= 4.0 * se, "{r} {se}");
    }

    #[test]
    fn small_ensemble_passes() {
        let opts = WhittleOptions { matrices: 9, samples: 1000, identity_samples: 10_000, ..Default::default() };
        let rep = whittle_check(&opts);
        assert!(rep.all_pass(), "{:?}", rep.failures().collect::<Vec<_>>());
    }
}
