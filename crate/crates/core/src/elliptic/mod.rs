//! Elliptic finite difference operators `sum_{alpha,beta} (grad^alpha)^* A_{alpha beta} grad^beta`
//! with vector-valued fields, their Fourier symbols and Green's functions.

mod io;
pub mod matfn;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{DualPoint, Field, SpectralKernel, TorusGeometry, TOL_HERM};
use crate::{par, CMat, FrdError, RMat, Result, C64};

pub use io::{generator_from_text, generator_to_text};
pub use matfn::{mat_fn, mat_fn_deriv, verify_matfn_bound, FnTriple, HermEig, ScalarFn};

/// A multi-index: one non-negative exponent per axis.
pub type MultiIndex = Vec<u32>;

/// Finite set of non-zero multi-indices containing all first-order ones,
/// kept in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    d: usize,
    indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    pub fn new(d: usize, mut indices: Vec<MultiIndex>) -> Result<Self> {
        if d < 1 {
            return Err(FrdError::MultiIndex("dimension must be positive".into()));
        }
        for a in &indices {
            if a.len() != d {
                return Err(FrdError::MultiIndex(format!("index {a:?} has wrong length for d = {d}")));
            }
            if a.iter().all(|&v| v == 0) {
                return Err(FrdError::MultiIndex("the zero multi-index is not allowed".into()));
            }
        }
        indices.sort();
        indices.dedup();
        for i in 0..d {
            let e = unit(d, i);
            if !indices.contains(&e) {
                return Err(FrdError::MultiIndex(format!("missing first-order index {e:?}")));
            }
        }
        Ok(Self { d, indices })
    }

    /// `{e_1, ..., e_d}`.
    pub fn first_order(d: usize) -> Self {
        Self::new(d, (0..d).map(|i| unit(d, i)).collect()).expect("first-order set is valid")
    }

    /// `{e_1, ..., e_d, e_1 + e_2, 2 e_1}`.
    pub fn next_nearest(d: usize) -> Self {
        let mut v: Vec<MultiIndex> = (0..d).map(|i| unit(d, i)).collect();
        let mut mixed = vec![0; d];
        mixed[0] = 1;
        mixed[1] = 1;
        v.push(mixed);
        let mut twice = vec![0; d];
        twice[0] = 2;
        v.push(twice);
        Self::new(d, v).expect("next-nearest set is valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// `R = max_alpha |alpha|_inf`.
    pub fn range(&self) -> u32 {
        self.indices.iter().flat_map(|a| a.iter().copied()).max().unwrap_or(0)
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.indices.iter().position(|a| a.as_slice() == alpha)
    }

    pub fn is_first_order(&self, i: usize) -> bool {
        self.indices[i].iter().sum::<u32>() == 1
    }

    /// `sup_p sum_alpha |q(p)^alpha|^2 = sum_alpha 4^{|alpha|_1}`.
    pub fn symbol_sup(&self) -> f64 {
        self.indices.iter().map(|a| 4f64.powi(a.iter().sum::<u32>() as i32)).sum()
    }
}

fn unit(d: usize, i: usize) -> MultiIndex {
    let mut e = vec![0; d];
    e[i] = 1;
    e
}

/// `q(p)^alpha = prod_i (e^{i p_i} - 1)^{alpha_i}`.
pub fn q_factor(p: &[f64], alpha: &[u32]) -> C64 {
    let mut acc = C64::new(1.0, 0.0);
    for (pi, &ai) in p.iter().zip(alpha) {
        let q = C64::new(pi.cos() - 1.0, pi.sin());
        for _ in 0..ai {
            acc *= q;
        }
    }
    acc
}

/// The generator `A` on `G = (R^m)^M`, stored as its full symmetric `(m|M|) x (m|M|)` matrix
/// with blocks ordered lexicographically in `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    set: MultiIndexSet,
    m: usize,
    matrix: RMat,
    omega0: f64,
    big_omega0: f64,
}

impl Generator {
    /// Validates symmetry and `||A|| <= Omega_0`; ellipticity is checked separately.
    pub fn new(set: MultiIndexSet, m: usize, matrix: RMat, omega0: f64, big_omega0: f64) -> Result<Self> {
        let n = m * set.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(FrdError::Generator(format!(
                "matrix is {}x{}, expected {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(omega0 > 0.0) || big_omega0 < omega0 {
            return Err(FrdError::Generator(format!(
                "need 0 < omega0 <= Omega0, got {omega0}, {big_omega0}"
            )));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(FrdError::Generator(format!("generator is not symmetric (defect {asym:e})")));
        }
        let g = Self { set, m, matrix, omega0, big_omega0 };
        let norm = g.op_norm();
        if norm > big_omega0 * (1.0 + 1e-12) {
            return Err(FrdError::Generator(format!("||A|| = {norm} exceeds Omega0 = {big_omega0}")));
        }
        Ok(g)
    }

    /// `A_{alpha alpha} = Id` for first-order `alpha`, zero otherwise.
    pub fn laplacian(set: &MultiIndexSet, m: usize, omega0: f64, big_omega0: f64) -> Result<Self> {
        Self::anisotropic(set, m, &vec![1.0; set.d()], omega0, big_omega0)
    }

    /// Diagonal first-order couplings `A_{e_i e_i} = w_i Id`.
    pub fn anisotropic(set: &MultiIndexSet, m: usize, weights: &[f64], omega0: f64, big_omega0: f64) -> Result<Self> {
        if weights.len() != set.d() {
            return Err(FrdError::Generator("one weight per axis required".into()));
        }
        let n = m * set.len();
        let mut a = RMat::zeros(n, n);
        for i in 0..set.d() {
            let b = set.position(&unit(set.d(), i)).expect("first-order index present");
            for c in 0..m {
                a[(b * m + c, b * m + c)] = weights[i];
            }
        }
        Self::new(set.clone(), m, a, omega0, big_omega0)
    }

    /// A random element of the admissible class: `omega0 P + (Omega0 - omega0) X / ||X||` with `P`
    /// the projection onto first-order components and `X` a random positive semi-definite matrix.
    pub fn random<R: Rng>(set: &MultiIndexSet, m: usize, omega0: f64, big_omega0: f64, rng: &mut R) -> Result<Self> {
        let n = m * set.len();
        let r = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let x = &r * r.transpose();
        let xn = crate::lattice::op_norm_real(&x);
        let mut a = x * ((big_omega0 - omega0) / xn);
        for (b, _) in set.indices().iter().enumerate() {
            if set.is_first_order(b) {
                for c in 0..m {
                    a[(b * m + c, b * m + c)] += omega0;
                }
            }
        }
        a = (&a + a.transpose()) * 0.5;
        Self::new(set.clone(), m, a, omega0, big_omega0)
    }

    /// A symmetric direction with operator norm 1, supported like a random generator.
    pub fn random_direction<R: Rng>(&self, rng: &mut R) -> RMat {
        let n = self.matrix.nrows();
        let r = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let s = (&r + r.transpose()) * 0.5;
        let norm = crate::lattice::op_norm_real(&s);
        s / norm
    }

    pub fn set(&self) -> &MultiIndexSet {
        &self.set
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.set.d()
    }
    pub fn matrix(&self) -> &RMat {
        &self.matrix
    }
    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn big_omega0(&self) -> f64 {
        self.big_omega0
    }

    /// Block `A_{alpha beta}` by positions in the ordered set.
    pub fn block(&self, a: usize, b: usize) -> RMat {
        self.matrix.view((a * self.m, b * self.m), (self.m, self.m)).into_owned()
    }

    /// Largest singular value of the full block matrix.
    pub fn op_norm(&self) -> f64 {
        crate::lattice::op_norm_real(&self.matrix)
    }

    /// Same multi-index set and class, different matrix.
    pub fn with_matrix(&self, matrix: RMat) -> Result<Self> {
        Self::new(self.set.clone(), self.m, matrix, self.omega0, self.big_omega0)
    }

    /// `A + s Adot` without class validation (used for derivative stencils).
    pub fn perturbed(&self, direction: &RMat, s: f64) -> Self {
        let mut g = self.clone();
        g.matrix = &self.matrix + direction * s;
        g
    }

    /// `Q(z) = (z, A z)`.
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(z);
        v.dot(&(&self.matrix * &v))
    }

    /// `|z^grad|^2`, the squared first-order components.
    pub fn first_order_norm2(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for b in 0..self.set.len() {
            if self.set.is_first_order(b) {
                for c in 0..self.m {
                    s += z[b * self.m + c].powi(2);
                }
            }
        }
        s
    }

    /// Checks `Q(z) >= omega0 |z^grad|^2` on `samples` random vectors; returns the worst margin ratio.
    pub fn check_q_sampled<R: Rng>(&self, samples: usize, rng: &mut R) -> f64 {
        let n = self.matrix.nrows();
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = self.first_order_norm2(&z);
            if g > 0.0 {
                worst = worst.min(self.quadratic_form(&z) / (self.omega0 * g));
            }
        }
        worst
    }

    /// `A-hat(p) = sum_{alpha,beta} conj(q^alpha) A_{alpha beta} q^beta`.
    pub fn symbol(&self, p: &[f64]) -> CMat {
        let qs: Vec<C64> = self.set.indices().iter().map(|a| q_factor(p, a)).collect();
        self.symbol_from_q(&qs, &self.matrix)
    }

    /// Symbol of an arbitrary block matrix on the same index set (used for directions).
    pub fn symbol_of(&self, matrix: &RMat, p: &[f64]) -> CMat {
        let qs: Vec<C64> = self.set.indices().iter().map(|a| q_factor(p, a)).collect();
        self.symbol_from_q(&qs, matrix)
    }

    fn symbol_from_q(&self, qs: &[C64], matrix: &RMat) -> CMat {
        let m = self.m;
        let mut out = CMat::zeros(m, m);
        for (a, qa) in qs.iter().enumerate() {
            for (b, qb) in qs.iter().enumerate() {
                let w = qa.conj() * qb;
                for r in 0..m {
                    for c in 0..m {
                        out[(r, c)] += w * matrix[(a * m + r, b * m + c)];
                    }
                }
            }
        }
        out
    }

    /// Symbol at every dual point; rejects non-Hermitian output.
    pub fn symbol_kernel(&self, geom: &TorusGeometry) -> Result<SpectralKernel> {
        self.check_geometry(geom)?;
        let values = par::map_range(geom.volume(), |i| self.symbol(&geom.dual_point(i).p));
        for (index, v) in values.iter().enumerate() {
            let n = v.norm();
            let defect = (v - v.adjoint()).norm();
            if defect > TOL_HERM * n.max(1.0) {
                return Err(FrdError::NonHermitian { index, defect });
            }
        }
        Ok(SpectralKernel { geometry: geom.clone(), values })
    }

    pub fn check_geometry(&self, geom: &TorusGeometry) -> Result<()> {
        if geom.d() != self.d() || geom.m() != self.m {
            return Err(FrdError::Geometry(format!(
                "generator has d = {}, m = {} but torus has d = {}, m = {}",
                self.d(),
                self.m,
                geom.d(),
                geom.m()
            )));
        }
        Ok(())
    }

    /// Position-space action `sum (grad^alpha)^* A_{alpha beta} grad^beta phi`.
    pub fn apply(&self, phi: &Field) -> Result<Field> {
        let g = &phi.geometry;
        self.check_geometry(g)?;
        let m = self.m;
        let diffs: Vec<Field> = self.set.indices().iter().map(|b| phi.multi_diff(b)).collect();
        let mut out = Field::zeros(g);
        for (a, alpha) in self.set.indices().iter().enumerate() {
            let mut mixed = Field::zeros(g);
            for (b, db) in diffs.iter().enumerate() {
                let blk = self.block(a, b);
                if blk.amax() == 0.0 {
                    continue;
                }
                for site in 0..g.volume() {
                    for r in 0..m {
                        let mut acc = 0.0;
                        for c in 0..m {
                            acc += blk[(r, c)] * db.values[site * m + c];
                        }
                        mixed.values[site * m + r] += acc;
                    }
                }
            }
            let back = mixed.multi_diff_adjoint(alpha);
            out.values.iter_mut().zip(&back.values).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// Smallest and largest eigenvalue of `A-hat(p) / |p|^2` over the torus, with the
    /// ellipticity constants they should respect.
    pub fn symbol_bounds(&self, geom: &TorusGeometry) -> Result<SymbolBounds> {
        let sym = self.symbol_kernel(geom)?;
        let pts = geom.dual_points();
        let ratios = par::map_range(geom.volume(), |i| {
            if pts[i].is_zero() {
                return None;
            }
            let p2 = pts[i].norm().powi(2);
            let e = HermEig::new(&sym.values[i]);
            Some((e.min() / p2, e.max() / p2))
        });
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (a, b) in ratios.into_iter().flatten() {
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Ok(SymbolBounds {
            omega: 4.0 * self.omega0 / (PI * PI),
            big_omega: self.big_omega0
                * self.set.len() as f64
                * (self.d() as f64 * PI * PI).powi(self.d() as i32 * self.set.range() as i32),
            measured_min: lo,
            measured_max: hi,
        })
    }

    /// Symbol lower bound `a^* A-hat(p) a >= omega0 |q(p)|^2 |a|^2` on all `p` and `samples`
    /// directions `a`; returns the worst ratio.
    pub fn check_symbol_lower<R: Rng>(&self, geom: &TorusGeometry, samples: usize, rng: &mut R) -> Result<f64> {
        let sym = self.symbol_kernel(geom)?;
        let m = self.m;
        let mut worst = f64::INFINITY;
        for (i, dp) in geom.dual_points().iter().enumerate() {
            if dp.is_zero() {
                continue;
            }
            let q2: f64 = dp.p.iter().map(|&pi| 2.0 - 2.0 * pi.cos()).sum();
            for _ in 0..samples {
                let a = nalgebra::DVector::from_fn(m, |_, _| {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                });
                let val = (a.adjoint() * &sym.values[i] * &a)[(0, 0)].re;
                worst = worst.min(val / (self.omega0 * q2 * a.norm_squared()));
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SymbolBounds {
    /// `4 omega0 / pi^2`.
    pub omega: f64,
    /// `Omega0 |M| (d pi^2)^{dR}`.
    pub big_omega: f64,
    pub measured_min: f64,
    pub measured_max: f64,
}

impl SymbolBounds {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.measured_min >= self.omega * (1.0 - rel_tol) && self.measured_max <= self.big_omega * (1.0 + rel_tol)
    }
}

/// `C-hat(p) = A-hat(p)^{-1}` for `p != 0`, zero at `p = 0`. Fails if an eigenvalue drops
/// below `omega |p|^2 / 2`.
pub fn green_spectral(a: &Generator, geom: &TorusGeometry) -> Result<SpectralKernel> {
    let sym = a.symbol_kernel(geom)?;
    let omega = 4.0 * a.omega0() / (PI * PI);
    let pts: Vec<DualPoint> = geom.dual_points();
    let out = par::map_range(geom.volume(), |i| {
        if pts[i].is_zero() {
            return Ok(CMat::zeros(a.m(), a.m()));
        }
        let e = HermEig::new(&sym.values[i]);
        let floor = 0.5 * omega * pts[i].norm().powi(2);
        if e.min() < floor {
            return Err(FrdError::Ellipticity { index: i, min_eig: e.min(), floor });
        }
        Ok(e.reconstruct(&e.values.iter().map(|v| 1.0 / v).collect::<Vec<_>>()))
    });
    let values = out.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SpectralKernel { geometry: geom.clone(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multi_index_validation() {
        assert!(MultiIndexSet::new(2, vec![vec![1, 0]]).is_err());
        assert!(MultiIndexSet::new(2, vec![vec![1, 0], vec![0, 1], vec![0, 0]]).is_err());
        assert!(MultiIndexSet::new(2, vec![vec![1, 0, 0], vec![0, 1]]).is_err());
        let s = MultiIndexSet::next_nearest(2);
        assert_eq!(s.len(), 4);
        assert_eq!(s.range(), 2);
        assert_eq!(MultiIndexSet::first_order(3).range(), 1);
        // lexicographic order
        assert_eq!(s.indices(), &[vec![0, 1], vec![1, 0], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn q_factor_examples() {
        let p = [2.0 * PI / 3.0, 0.0];
        let q = q_factor(&p, &[1, 0]);
        let expect = C64::new((2.0 * PI / 3.0).cos() - 1.0, (2.0 * PI / 3.0).sin());
        assert!((q - expect).norm() < 1e-15);
        assert!((q.norm_sqr() - 3.0).abs() < 1e-14);
        let q2 = q_factor(&p, &[2, 0]);
        assert!((q2 - expect * expect).norm() < 1e-15);
    }

    #[test]
    fn laplacian_symbol() {
        let set = MultiIndexSet::first_order(2);
        let a = Generator::laplacian(&set, 2, 1.0, 1.0).unwrap();
        let s = a.symbol(&[2.0 * PI / 3.0, 0.0]);
        assert!((s - CMat::identity(2, 2) * C64::new(3.0, 0.0)).norm() < 1e-14);
        assert!(a.symbol(&[0.0, 0.0]).norm() == 0.0);
    }

    #[test]
    fn generator_validation() {
        let set = MultiIndexSet::first_order(2);
        let mut bad = RMat::identity(2, 2);
        bad[(0, 1)] = 0.3;
        assert!(Generator::new(set.clone(), 1, bad, 0.5, 2.0).is_err());
        assert!(Generator::new(set.clone(), 1, RMat::identity(2, 2) * 3.0, 0.5, 2.0).is_err());
        assert!(Generator::new(set.clone(), 1, RMat::identity(3, 3), 0.5, 2.0).is_err());
        assert!(Generator::new(set, 1, RMat::identity(2, 2), 2.0, 1.0).is_err());
    }

    #[test]
    fn random_generators_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = MultiIndexSet::next_nearest(2);
        let geom = TorusGeometry::new(3, 2, 2, 2).unwrap();
        for _ in 0..5 {
            let a = Generator::random(&set, 2, 0.5, 2.0, &mut rng).unwrap();
            assert!(a.op_norm() <= 2.0 + 1e-12);
            assert!(a.check_q_sampled(200, &mut rng) >= 1.0 - 1e-12);
            assert!(a.check_symbol_lower(&geom, 4, &mut rng).unwrap() >= 1.0 - 1e-12);
            let b = a.symbol_bounds(&geom).unwrap();
            assert!(b.holds(1e-12), "{b:?}");
        }
    }

    #[test]
    fn position_and_spectral_application_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = MultiIndexSet::next_nearest(2);
        let geom = TorusGeometry::new(3, 1, 2, 2).unwrap();
        let a = Generator::random(&set, 2, 0.5, 2.0, &mut rng).unwrap();
        let phi = Field::from_values(&geom, (0..geom.volume() * 2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let direct = a.apply(&phi).unwrap();
        let spectral = a.symbol_kernel(&geom).unwrap().apply(&phi);
        for (x, y) in direct.values.iter().zip(&spectral.values) {
            assert!((x - y).abs() < 1e-10);
        }
        // positivity: <phi, A phi> >= omega0 <grad phi, grad phi>
        let grad2: f64 = (0..2).map(|j| phi.forward_diff(j).dot(&phi.forward_diff(j))).sum();
        assert!(phi.dot(&direct) >= a.omega0() * grad2 * (1.0 - 1e-12));
    }

    #[test]
    fn operator_has_finite_range() {
        let set = MultiIndexSet::next_nearest(2);
        let geom = TorusGeometry::new(3, 2, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Generator::random(&set, 1, 0.5, 2.0, &mut rng).unwrap();
        let mut delta = Field::zeros(&geom);
        delta.values[0] = 1.0;
        let col = a.apply(&delta).unwrap();
        for site in 0..geom.volume() {
            if geom.dist_inf(site) > set.range() as i64 {
                assert_eq!(col.values[site], 0.0);
            }
        }
    }

    #[test]
    fn green_inverts_operator() {
        let set = MultiIndexSet::first_order(2);
        let geom = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let a = Generator::laplacian(&set, 1, 1.0, 1.0).unwrap();
        let c = green_spectral(&a, &geom).unwrap();
        let i = geom.index_of(&[1, 0]);
        assert!((c.values[i][(0, 0)].re - 1.0 / 3.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut phi =
            Field::from_values(&geom, (0..geom.volume()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        phi.center();
        let back = a.apply(&c.apply(&phi)).unwrap();
        for (x, y) in back.values.iter().zip(&phi.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn symbol_conjugate_symmetry() {
        let set = MultiIndexSet::next_nearest(2);
        let geom = TorusGeometry::new(3, 2, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Generator::random(&set, 2, 0.5, 2.0, &mut rng).unwrap();
        let s = a.symbol_kernel(&geom).unwrap();
        assert!(s.conjugate_symmetry_defect() < 1e-12);
        assert!(s.hermitian_defect() < 1e-12);
    }
}
