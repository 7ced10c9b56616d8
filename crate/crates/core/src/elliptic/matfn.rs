//! Functions of Hermitian matrices and their directional derivatives.
//!
//! `f(H)` is evaluated through the eigendecomposition `H = U diag(lambda) U^*`. Directional
//! derivatives use the Daleckii-Krein formulas: the first derivative along `B` is
//! `U (f[lambda_i, lambda_j] * Bt_ij) U^*` with `Bt = U^* B U`, the second is
//! `U (2 sum_k f[lambda_i, lambda_k, lambda_j] Bt_ik Bt_kj) U^*`.

use crate::{CMat, C64};
use nalgebra::SymmetricEigen;

/// Relative gap below which two eigenvalues are treated as equal in divided differences.
pub const DEGENERACY_GAP: f64 = 1e-7;

/// A scalar function with its first two derivatives.
pub trait ScalarFn: Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// Closure-backed [`ScalarFn`].
pub struct FnTriple<F, G, H> {
    pub f: F,
    pub df: G,
    pub ddf: H,
}

impl<F, G, H> ScalarFn for FnTriple<F, G, H>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
    H: Fn(f64) -> f64 + Sync,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (self.df)(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (self.ddf)(x)
    }
}

/// Eigendecomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermEig {
    pub fn new(h: &CMat) -> Self {
        let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let n = order.len();
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `U diag(w) U^*`.
    pub fn reconstruct(&self, w: &[f64]) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for c in 0..n {
            let s = C64::new(w[c], 0.0);
            for r in 0..n {
                scaled[(r, c)] *= s;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn apply<F: ScalarFn + ?Sized>(&self, f: &F) -> CMat {
        let w: Vec<f64> = self.values.iter().map(|&x| f.value(x)).collect();
        self.reconstruct(&w)
    }

    /// First or second derivative of `s -> f(H + s B)` at `s = 0`.
    pub fn derivative<F: ScalarFn + ?Sized>(&self, b: &CMat, f: &F, order: u32) -> CMat {
        let u = &self.vectors;
        let bt = u.adjoint() * b * u;
        let n = self.values.len();
        let lam = &self.values;
        let inner = match order {
            0 => return self.apply(f),
            1 => CMat::from_fn(n, n, |i, j| bt[(i, j)] * divided_difference1(f, lam[i], lam[j])),
            2 => CMat::from_fn(n, n, |i, j| {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += bt[(i, k)] * bt[(k, j)] * divided_difference2(f, lam[i], lam[k], lam[j]);
                }
                acc * 2.0
            }),
            _ => panic!("derivative order {order} not supported"),
        };
        u * inner * u.adjoint()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < DEGENERACY_GAP * (1.0 + a.abs().max(b.abs()))
}

/// `f[a, b]`, replaced by `f'((a+b)/2)` for nearly equal arguments.
pub fn divided_difference1<F: ScalarFn + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    if close(a, b) {
        f.d1(0.5 * (a + b))
    } else {
        (f.value(a) - f.value(b)) / (a - b)
    }
}

/// `f[a, b, c]`, symmetric in its arguments; `f''/2` at the mean when all three coalesce.
pub fn divided_difference2<F: ScalarFn + ?Sized>(f: &F, a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    let (x, y, z) = (v[0], v[1], v[2]);
    if close(x, z) {
        return 0.5 * f.d2((x + y + z) / 3.0);
    }
    (divided_difference1(f, z, y) - divided_difference1(f, y, x)) / (z - x)
}

/// `f(H)` for Hermitian `H`.
pub fn mat_fn<F: ScalarFn + ?Sized>(h: &CMat, f: &F) -> CMat {
    HermEig::new(h).apply(f)
}

/// `d^order/ds^order f(H + s B)` at `s = 0`, `order` in `{1, 2}`.
pub fn mat_fn_deriv<F: ScalarFn + ?Sized>(h: &CMat, b: &CMat, f: &F, order: u32) -> CMat {
    HermEig::new(h).derivative(b, f, order)
}

/// Ratio `|| d^l f(H+sB) || / (sup_{[lambda_1, lambda_m]} |f^(l)| * ||B||^l)`.
#[derive(Clone, Debug)]
pub struct MatFnBoundReport {
    pub derivative_norm: f64,
    pub sup_fl: f64,
    pub b_norm: f64,
    pub ratio: f64,
}

pub fn verify_matfn_bound<F: ScalarFn + ?Sized>(h: &CMat, b: &CMat, f: &F, order: u32) -> MatFnBoundReport {
    let eig = HermEig::new(h);
    let der = eig.derivative(b, f, order);
    let derivative_norm = crate::lattice::op_norm(&der);
    let (lo, hi) = (eig.min(), eig.max());
    let grid = 400;
    let sup_fl = (0..=grid)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / grid as f64;
            match order {
                1 => f.d1(x).abs(),
                _ => f.d2(x).abs(),
            }
        })
        .fold(0.0, f64::max);
    let b_norm = crate::lattice::op_norm(b);
    let denom = sup_fl * b_norm.powi(order as i32);
    let ratio = if derivative_norm == 0.0 { 0.0 } else { derivative_norm / denom };
    MatFnBoundReport { derivative_norm, sup_fl, b_norm, ratio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_herm(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    fn fd<F: ScalarFn>(h: &CMat, b: &CMat, f: &F, order: u32, step: f64) -> CMat {
        let at = |s: f64| mat_fn(&(h + b * C64::new(s, 0.0)), f);
        match order {
            1 => (at(step) - at(-step)) * C64::new(0.5 / step, 0.0),
            _ => (at(step) - at(0.0) * C64::new(2.0, 0.0) + at(-step)) * C64::new(1.0 / (step * step), 0.0),
        }
    }

    fn identity_fn() -> impl ScalarFn {
        FnTriple { f: |x: f64| x, df: |_| 1.0, ddf: |_| 0.0 }
    }

    #[test]
    fn identity_derivative_is_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_herm(3, &mut rng);
        let b = random_herm(3, &mut rng);
        let d = mat_fn_deriv(&h, &b, &identity_fn(), 1);
        assert!((d - &b).norm() < 1e-12);
        let d2 = mat_fn_deriv(&h, &b, &identity_fn(), 2);
        assert!(d2.norm() < 1e-12);
    }

    #[test]
    fn square_derivative_is_anticommutator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_herm(4, &mut rng);
        let b = random_herm(4, &mut rng);
        let sq = FnTriple { f: |x: f64| x * x, df: |x: f64| 2.0 * x, ddf: |_| 2.0 };
        let d = mat_fn_deriv(&h, &b, &sq, 1);
        let expect = &h * &b + &b * &h;
        assert!((d - expect).norm() < 1e-11);
        let d2 = mat_fn_deriv(&h, &b, &sq, 2);
        let expect2 = &b * &b * C64::new(2.0, 0.0);
        assert!((d2 - expect2).norm() < 1e-11);
    }

    #[test]
    fn degenerate_eigenvalues_use_derivatives() {
        // H = Id has fully degenerate spectrum; exp derivative along B is exp(1) B
        let h = CMat::identity(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_herm(3, &mut rng);
        let ex = FnTriple { f: f64::exp, df: f64::exp, ddf: f64::exp };
        let d = mat_fn_deriv(&h, &b, &ex, 1);
        assert!((d - &b * C64::new(1f64.exp(), 0.0)).norm() < 1e-12);
        let d2 = mat_fn_deriv(&h, &b, &ex, 2);
        assert!((d2 - &b * &b * C64::new(1f64.exp(), 0.0)).norm() < 1e-11);
    }

    #[test]
    fn smooth_function_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = FnTriple {
            f: |x: f64| (0.7 * x).sin() + x * x * x,
            df: |x: f64| 0.7 * (0.7 * x).cos() + 3.0 * x * x,
            ddf: |x: f64| -0.49 * (0.7 * x).sin() + 6.0 * x,
        };
        for _ in 0..10 {
            let h = random_herm(3, &mut rng);
            let b = random_herm(3, &mut rng);
            let a = mat_fn_deriv(&h, &b, &f, 1);
            let n = fd(&h, &b, &f, 1, 1e-4);
            assert!((&a - &n).norm() <= 1e-6 * a.norm());
            let a2 = mat_fn_deriv(&h, &b, &f, 2);
            let n2 = fd(&h, &b, &f, 2, 1e-3);
            assert!((&a2 - &n2).norm() <= 1e-4 * a2.norm());
        }
    }

    #[test]
    fn scalar_bound_ratio_at_most_one() {
        let f = FnTriple { f: |x: f64| (x).sin(), df: |x: f64| x.cos(), ddf: |x: f64| -x.sin() };
        let h = CMat::from_element(1, 1, C64::new(0.3, 0.0));
        let b = CMat::from_element(1, 1, C64::new(-0.8, 0.0));
        let r = verify_matfn_bound(&h, &b, &f, 1);
        assert!(r.ratio <= 1.0 + 1e-12);
        let lin = FnTriple { f: |x: f64| 2.0 * x + 1.0, df: |_| 2.0, ddf: |_| 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h3 = random_herm(3, &mut rng);
        let b3 = random_herm(3, &mut rng);
        assert_eq!(verify_matfn_bound(&h3, &b3, &lin, 2).derivative_norm, 0.0);
    }

    proptest! {
        #[test]
        fn first_derivative_linear_in_direction(seed in 0u64..1000, s in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_herm(3, &mut rng);
            let b1 = random_herm(3, &mut rng);
            let b2 = random_herm(3, &mut rng);
            let f = FnTriple { f: f64::exp, df: f64::exp, ddf: f64::exp };
            let lhs = mat_fn_deriv(&h, &(&b1 + &b2 * C64::new(s, 0.0)), &f, 1);
            let rhs = mat_fn_deriv(&h, &b1, &f, 1) + mat_fn_deriv(&h, &b2, &f, 1) * C64::new(s, 0.0);
            prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
        }

        #[test]
        fn unitary_covariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_herm(3, &mut rng);
            let g = random_herm(3, &mut rng);
            // unitary from the eigenvectors of a random Hermitian matrix
            let u = HermEig::new(&g).vectors;
            let f = FnTriple { f: |x: f64| 1.0 / (1.0 + x * x), df: |x: f64| -2.0 * x / (1.0 + x * x).powi(2), ddf: |x: f64| (6.0 * x * x - 2.0) / (1.0 + x * x).powi(3) };
            let lhs = mat_fn(&(&u * &h * u.adjoint()), &f);
            let rhs = &u * mat_fn(&h, &f) * u.adjoint();
            prop_assert!((&lhs - &rhs).norm() < 1e-12);
        }
    }
}
