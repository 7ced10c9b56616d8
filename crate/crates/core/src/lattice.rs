//! Discrete torus `T_N = (Z / L^N Z)^d`, its dual, fields and kernels on it.
//!
//! Sites are stored by their non-negative residues `r_c in [0, side)` in row-major order with
//! axis 0 varying fastest. The canonical representative of a site is the centered window
//! `[-(side-1)/2, (side-1)/2]`, which is unambiguous because `side` is odd. Dual points use
//! the same indexing: index `a` corresponds to momentum `2 pi a / side`.

use std::f64::consts::PI;

use crate::{par, CMat, FrdError, RMat, Result, C64};

/// Mean tolerance for zero-mean fields, relative to `volume * max |phi|`.
pub const TOL_MEAN: f64 = 1e-12;
/// Hermiticity tolerance relative to the matrix norm.
pub const TOL_HERM: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TorusGeometry {
    l: usize,
    n: u32,
    d: usize,
    m: usize,
    side: usize,
    volume: usize,
}

impl TorusGeometry {
    pub fn new(l: usize, n: u32, d: usize, m: usize) -> Result<Self> {
        if l < 3 || l.is_multiple_of(2) {
            return Err(FrdError::Geometry(format!("L must be odd and >= 3, got {l}")));
        }
        if n < 1 {
            return Err(FrdError::Geometry("N must be >= 1".into()));
        }
        if d < 2 {
            return Err(FrdError::Geometry(format!("d must be >= 2, got {d}")));
        }
        if m < 1 {
            return Err(FrdError::Geometry("m must be >= 1".into()));
        }
        let side = l
            .checked_pow(n)
            .ok_or_else(|| FrdError::Geometry("side overflows".into()))?;
        let volume = side
            .checked_pow(d as u32)
            .ok_or_else(|| FrdError::Geometry("volume overflows".into()))?;
        Ok(Self { l, n, d, m, side, volume })
    }

    pub fn l(&self) -> usize {
        self.l
    }
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn volume(&self) -> usize {
        self.volume
    }
    pub fn half(&self) -> i64 {
        (self.side as i64 - 1) / 2
    }

    /// Same `L, d, m` with `N` replaced.
    pub fn with_n(&self, n: u32) -> Result<Self> {
        Self::new(self.l, n, self.d, self.m)
    }

    /// Same torus with a different number of field components.
    pub fn with_m(&self, m: usize) -> Result<Self> {
        Self::new(self.l, self.n, self.d, m)
    }

    /// Non-negative residues of site (or dual) index `idx`.
    pub fn residues(&self, idx: usize) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.d);
        let mut rem = idx;
        for _ in 0..self.d {
            r.push(rem % self.side);
            rem /= self.side;
        }
        r
    }

    /// Canonical centered coordinates of index `idx`.
    pub fn coords(&self, idx: usize) -> Vec<i64> {
        let h = self.half();
        self.residues(idx)
            .into_iter()
            .map(|r| {
                let r = r as i64;
                if r > h {
                    r - self.side as i64
                } else {
                    r
                }
            })
            .collect()
    }

    /// Index of an arbitrary integer tuple after reduction mod `side`.
    pub fn index_of(&self, x: &[i64]) -> usize {
        debug_assert_eq!(x.len(), self.d);
        let s = self.side as i64;
        let mut idx = 0usize;
        for c in (0..self.d).rev() {
            idx = idx * self.side + x[c].rem_euclid(s) as usize;
        }
        idx
    }

    pub fn wrap(&self, x: &[i64]) -> LatticePoint {
        LatticePoint { coords: self.coords(self.index_of(x)) }
    }

    /// Index of `-x`.
    pub fn neg_index(&self, idx: usize) -> usize {
        let x: Vec<i64> = self.coords(idx).into_iter().map(|c| -c).collect();
        self.index_of(&x)
    }

    /// Index of `x + y`.
    pub fn add_index(&self, a: usize, b: usize) -> usize {
        let x = self.coords(a);
        let y = self.coords(b);
        let s: Vec<i64> = x.iter().zip(&y).map(|(u, v)| u + v).collect();
        self.index_of(&s)
    }

    /// Index of `x - y`.
    pub fn sub_index(&self, a: usize, b: usize) -> usize {
        let x = self.coords(a);
        let y = self.coords(b);
        let s: Vec<i64> = x.iter().zip(&y).map(|(u, v)| u - v).collect();
        self.index_of(&s)
    }

    /// Sup-distance of site `idx` to the origin.
    pub fn dist_inf(&self, idx: usize) -> i64 {
        self.coords(idx).into_iter().map(i64::abs).max().unwrap_or(0)
    }

    pub fn dual_point(&self, idx: usize) -> DualPoint {
        let a = self.coords(idx);
        let p = a.iter().map(|&ai| 2.0 * PI * ai as f64 / self.side as f64).collect();
        DualPoint { a, p }
    }

    /// All dual points in index order.
    pub fn dual_points(&self) -> Vec<DualPoint> {
        (0..self.volume).map(|i| self.dual_point(i)).collect()
    }

    /// Dual annulus index of a non-zero momentum.
    pub fn annulus_index(&self, p: &DualPoint) -> Result<usize> {
        if p.is_zero() {
            return Err(FrdError::Argument("annulus index of p = 0".into()));
        }
        Ok(annulus_of_norm(p.norm(), self.l, self.n as usize))
    }

    /// Projection `pi: T_N -> T_nbar`, reducing coordinates mod `L^nbar`.
    pub fn coarse_project(&self, coarse: &TorusGeometry, idx: usize) -> Result<usize> {
        self.check_coarse(coarse)?;
        Ok(coarse.index_of(&self.coords(idx)))
    }

    fn check_coarse(&self, coarse: &TorusGeometry) -> Result<()> {
        if coarse.l != self.l || coarse.d != self.d || coarse.m != self.m {
            return Err(FrdError::Geometry("coarse torus must share L, d, m".into()));
        }
        if coarse.n > self.n {
            return Err(FrdError::Geometry(format!(
                "coarse level {} exceeds fine level {}",
                coarse.n, self.n
            )));
        }
        Ok(())
    }

    /// Fine-site map `x -> pi(x)` for every site.
    pub fn projection_table(&self, coarse: &TorusGeometry) -> Result<Vec<usize>> {
        self.check_coarse(coarse)?;
        Ok((0..self.volume).map(|i| coarse.index_of(&self.coords(i))).collect())
    }
}

/// Annulus index for `|p| = norm`: the `j` with `L^{-j-1} < |p| <= L^{-j}`, capped at `n`,
/// and 0 whenever `|p| > 1/L`.
pub fn annulus_of_norm(norm: f64, l: usize, n: usize) -> usize {
    let lf = l as f64;
    let mut j = 0usize;
    // largest j with |p| <= L^{-j}
    while j < n && norm <= lf.powi(-(j as i32 + 1)) * (1.0 + 1e-14) {
        j += 1;
    }
    j
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticePoint {
    pub coords: Vec<i64>,
}

impl LatticePoint {
    pub fn dist_inf(&self) -> i64 {
        self.coords.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint {
    /// Integer frequencies in the centered window.
    pub a: Vec<i64>,
    /// Momenta `2 pi a / side`.
    pub p: Vec<f64>,
}

impl DualPoint {
    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0)
    }
    pub fn norm(&self) -> f64 {
        self.p.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Real `m`-vector field, stored site-major (`site * m + component`).
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub geometry: TorusGeometry,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(geometry: &TorusGeometry) -> Self {
        Self { geometry: geometry.clone(), values: vec![0.0; geometry.volume() * geometry.m()] }
    }

    pub fn from_values(geometry: &TorusGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.volume() * geometry.m() {
            return Err(FrdError::Argument(format!(
                "field length {} != volume * m = {}",
                values.len(),
                geometry.volume() * geometry.m()
            )));
        }
        Ok(Self { geometry: geometry.clone(), values })
    }

    pub fn get(&self, site: usize, comp: usize) -> f64 {
        self.values[site * self.geometry.m() + comp]
    }

    pub fn component(&self, comp: usize) -> Vec<f64> {
        let m = self.geometry.m();
        self.values.iter().skip(comp).step_by(m).copied().collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.geometry.m();
        let v = self.geometry.volume() as f64;
        (0..m).map(|c| self.component(c).iter().sum::<f64>() / v).collect()
    }

    /// True if every component sums to zero within [`TOL_MEAN`].
    pub fn is_zero_mean(&self) -> bool {
        let max = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let vol = self.geometry.volume() as f64;
        self.mean().iter().all(|mu| (mu * vol).abs() <= TOL_MEAN * vol * max.max(f64::MIN_POSITIVE))
    }

    /// Subtracts the mean of each component.
    pub fn center(&mut self) {
        let mean = self.mean();
        let m = self.geometry.m();
        for (i, v) in self.values.iter_mut().enumerate() {
            *v -= mean[i % m];
        }
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    fn shifted(&self, axis: usize, step: i64) -> Field {
        let g = &self.geometry;
        let m = g.m();
        let mut out = Field::zeros(g);
        for site in 0..g.volume() {
            let mut x = g.coords(site);
            x[axis] += step;
            let src = g.index_of(&x);
            out.values[site * m..(site + 1) * m].copy_from_slice(&self.values[src * m..(src + 1) * m]);
        }
        out
    }

    /// `(grad_j phi)(x) = phi(x + e_j) - phi(x)`, axis `j` zero-based.
    pub fn forward_diff(&self, axis: usize) -> Field {
        let mut out = self.shifted(axis, 1);
        out.values.iter_mut().zip(&self.values).for_each(|(a, b)| *a -= b);
        out
    }

    /// `(grad_j^* phi)(x) = phi(x - e_j) - phi(x)`.
    pub fn backward_diff(&self, axis: usize) -> Field {
        let mut out = self.shifted(axis, -1);
        out.values.iter_mut().zip(&self.values).for_each(|(a, b)| *a -= b);
        out
    }

    /// Composition of forward differences, `alpha[c]` times along axis `c`.
    pub fn multi_diff(&self, alpha: &[u32]) -> Field {
        let mut out = self.clone();
        for (axis, &times) in alpha.iter().enumerate() {
            for _ in 0..times {
                out = out.forward_diff(axis);
            }
        }
        out
    }

    /// Composition of backward differences, the adjoint of [`Field::multi_diff`].
    pub fn multi_diff_adjoint(&self, alpha: &[u32]) -> Field {
        let mut out = self.clone();
        for (axis, &times) in alpha.iter().enumerate() {
            for _ in 0..times {
                out = out.backward_diff(axis);
            }
        }
        out
    }

    /// Fourier transform, one complex `m`-vector per dual point.
    pub fn dft(&self) -> SpectralField {
        let g = &self.geometry;
        let m = g.m();
        let mut data = vec![C64::new(0.0, 0.0); g.volume() * m];
        for c in 0..m {
            let mut comp: Vec<C64> = self.component(c).into_iter().map(|v| C64::new(v, 0.0)).collect();
            dft_in_place(g, &mut comp, false);
            for (i, v) in comp.into_iter().enumerate() {
                data[i * m + c] = v;
            }
        }
        SpectralField { geometry: g.clone(), values: data }
    }

    /// Pullback `tau` from a coarse torus: `(tau phi)(x) = phi(pi x)`.
    pub fn pullback(&self, fine: &TorusGeometry) -> Result<Field> {
        let table = fine.projection_table(&self.geometry)?;
        let m = fine.m();
        let mut out = Field::zeros(fine);
        for (site, &c) in table.iter().enumerate() {
            out.values[site * m..(site + 1) * m].copy_from_slice(&self.values[c * m..(c + 1) * m]);
        }
        Ok(out)
    }

    /// Adjoint of the pullback: sums fine values over each fibre `pi^{-1}(xbar)`.
    pub fn pushforward_sum(&self, coarse: &TorusGeometry) -> Result<Field> {
        let table = self.geometry.projection_table(coarse)?;
        let m = coarse.m();
        let mut out = Field::zeros(coarse);
        for (site, &c) in table.iter().enumerate() {
            for k in 0..m {
                out.values[c * m + k] += self.values[site * m + k];
            }
        }
        Ok(out)
    }
}

/// Complex `m`-vector per dual point, dual-index-major.
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub geometry: TorusGeometry,
    pub values: Vec<C64>,
}

impl SpectralField {
    /// Inverse transform; the imaginary residue is dropped and returned.
    pub fn idft(&self) -> (Field, f64) {
        let g = &self.geometry;
        let m = g.m();
        let mut out = Field::zeros(g);
        let mut resid = 0.0f64;
        for c in 0..m {
            let mut comp: Vec<C64> = (0..g.volume()).map(|i| self.values[i * m + c]).collect();
            dft_in_place(g, &mut comp, true);
            for (i, v) in comp.into_iter().enumerate() {
                out.values[i * m + c] = v.re;
                resid = resid.max(v.im.abs());
            }
        }
        (out, resid)
    }

    pub fn get(&self, idx: usize, comp: usize) -> C64 {
        self.values[idx * self.geometry.m() + comp]
    }
}

/// Separable dense DFT over all `d` axes of a scalar array of length `volume`.
/// Forward: `sum_x e^{-i p x} f(x)`. Inverse: `volume^{-1} sum_p e^{i p x} f(p)`.
pub fn dft_in_place(g: &TorusGeometry, data: &mut [C64], inverse: bool) {
    let side = g.side();
    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddle: Vec<C64> = (0..side)
        .map(|k| C64::from_polar(1.0, sign * 2.0 * PI * k as f64 / side as f64))
        .collect();
    let mut line = vec![C64::new(0.0, 0.0); side];
    let mut out = vec![C64::new(0.0, 0.0); side];
    let mut stride = 1usize;
    for _axis in 0..g.d() {
        let block = stride * side;
        for start_block in (0..g.volume()).step_by(block) {
            for offset in 0..stride {
                let base = start_block + offset;
                for r in 0..side {
                    line[r] = data[base + r * stride];
                }
                for (a, o) in out.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    let mut k = 0usize;
                    for v in line.iter() {
                        acc += v * twiddle[k];
                        k += a;
                        if k >= side {
                            k -= side;
                        }
                    }
                    *o = acc;
                }
                for r in 0..side {
                    data[base + r * stride] = out[r];
                }
            }
        }
        stride *= side;
    }
    if inverse {
        let s = 1.0 / g.volume() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Real `m x m` matrix per site; optional far-field constant.
#[derive(Clone, Debug)]
pub struct MatrixKernel {
    pub geometry: TorusGeometry,
    pub values: Vec<RMat>,
    pub tail: Option<RMat>,
}

impl MatrixKernel {
    pub fn zeros(geometry: &TorusGeometry) -> Self {
        let m = geometry.m();
        Self { geometry: geometry.clone(), values: vec![RMat::zeros(m, m); geometry.volume()], tail: None }
    }

    /// `delta_0 * Id`, the identity operator kernel on all fields.
    pub fn delta(geometry: &TorusGeometry) -> Self {
        let mut k = Self::zeros(geometry);
        k.values[0] = RMat::identity(geometry.m(), geometry.m());
        k
    }

    /// Largest entry-wise deviation of the average from zero.
    pub fn mean_defect(&self) -> f64 {
        let m = self.geometry.m();
        let mut sum = RMat::zeros(m, m);
        for v in &self.values {
            sum += v;
        }
        sum.amax() / self.geometry.volume() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(op_norm_real).fold(0.0, f64::max)
    }

    /// Applies the operator to a field: `(K phi)(x) = sum_y K(x - y) phi(y)`.
    pub fn apply(&self, phi: &Field) -> Field {
        let g = &self.geometry;
        let m = g.m();
        let vals = par::map_range(g.volume(), |x| {
            let mut acc = vec![0.0; m];
            for y in 0..g.volume() {
                let k = &self.values[g.sub_index(x, y)];
                for r in 0..m {
                    for c in 0..m {
                        acc[r] += k[(r, c)] * phi.values[y * m + c];
                    }
                }
            }
            acc
        });
        Field { geometry: g.clone(), values: vals.into_iter().flatten().collect() }
    }

    /// Fourier transform entry-wise.
    pub fn to_spectral(&self) -> SpectralKernel {
        let g = &self.geometry;
        let m = g.m();
        let mut values = vec![CMat::zeros(m, m); g.volume()];
        for r in 0..m {
            for c in 0..m {
                let mut buf: Vec<C64> = self.values.iter().map(|k| C64::new(k[(r, c)], 0.0)).collect();
                dft_in_place(g, &mut buf, false);
                for (i, v) in buf.into_iter().enumerate() {
                    values[i][(r, c)] = v;
                }
            }
        }
        SpectralKernel { geometry: g.clone(), values }
    }

    /// Convolution by the direct double sum.
    pub fn convolve_direct(&self, other: &MatrixKernel) -> MatrixKernel {
        let g = &self.geometry;
        let m = g.m();
        let values = par::map_range(g.volume(), |x| {
            let mut acc = RMat::zeros(m, m);
            for y in 0..g.volume() {
                acc += &self.values[g.sub_index(x, y)] * &other.values[y];
            }
            acc
        });
        MatrixKernel { geometry: g.clone(), values, tail: None }
    }

    /// Convolution through the Fourier transform.
    pub fn convolve(&self, other: &MatrixKernel) -> MatrixKernel {
        let a = self.to_spectral();
        let b = other.to_spectral();
        let prod = SpectralKernel {
            geometry: a.geometry.clone(),
            values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
        };
        prod.to_position().0
    }

    /// Discrete forward difference of the kernel along `alpha`.
    pub fn multi_diff(&self, alpha: &[u32]) -> MatrixKernel {
        let g = &self.geometry;
        let mut out = self.clone();
        for (axis, &times) in alpha.iter().enumerate() {
            for _ in 0..times {
                let prev = out.values.clone();
                for site in 0..g.volume() {
                    let mut x = g.coords(site);
                    x[axis] += 1;
                    out.values[site] = &prev[g.index_of(&x)] - &prev[site];
                }
            }
        }
        out.tail = None;
        out
    }
}

/// Complex `m x m` matrix per dual point. Translation-invariant operators are diagonal here.
#[derive(Clone, Debug)]
pub struct SpectralKernel {
    pub geometry: TorusGeometry,
    pub values: Vec<CMat>,
}

impl SpectralKernel {
    pub fn zeros(geometry: &TorusGeometry) -> Self {
        let m = geometry.m();
        Self { geometry: geometry.clone(), values: vec![CMat::zeros(m, m); geometry.volume()] }
    }

    /// Inverse transform to a position kernel; returns the largest dropped imaginary part.
    pub fn to_position(&self) -> (MatrixKernel, f64) {
        let g = &self.geometry;
        let m = g.m();
        let mut values = vec![RMat::zeros(m, m); g.volume()];
        let entries: Vec<(usize, usize)> = (0..m).flat_map(|r| (0..m).map(move |c| (r, c))).collect();
        let cols = par::map_slice(&entries, |&(r, c)| {
            let mut buf: Vec<C64> = self.values.iter().map(|k| k[(r, c)]).collect();
            dft_in_place(g, &mut buf, true);
            buf
        });
        let mut resid = 0.0f64;
        for (&(r, c), col) in entries.iter().zip(cols) {
            for (i, v) in col.into_iter().enumerate() {
                values[i][(r, c)] = v.re;
                resid = resid.max(v.im.abs());
            }
        }
        (MatrixKernel { geometry: g.clone(), values, tail: None }, resid)
    }

    /// Largest relative Hermiticity defect over all points.
    pub fn hermitian_defect(&self) -> f64 {
        self.values
            .iter()
            .map(|k| {
                let n = k.norm().max(f64::MIN_POSITIVE);
                (k - k.adjoint()).norm() / n
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative defect of `K(-p) = conj(K(p))`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let g = &self.geometry;
        (0..g.volume())
            .map(|i| {
                let a = &self.values[i];
                let b = &self.values[g.neg_index(i)];
                let n = a.norm().max(f64::MIN_POSITIVE);
                (a - b.conjugate()).norm() / n
            })
            .fold(0.0, f64::max)
    }

    /// Applies the multiplier to a field.
    pub fn apply(&self, phi: &Field) -> Field {
        let g = &self.geometry;
        let m = g.m();
        let mut f = phi.dft();
        for i in 0..g.volume() {
            let v = nalgebra::DVector::from_iterator(m, (0..m).map(|c| f.values[i * m + c]));
            let w = &self.values[i] * v;
            for c in 0..m {
                f.values[i * m + c] = w[c];
            }
        }
        f.idft().0
    }
}

/// Largest singular value of a real matrix.
pub fn op_norm_real(a: &RMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Largest singular value of a complex matrix.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: &TorusGeometry, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.volume() * g.m()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::from_values(g, v).unwrap()
    }

    #[test]
    fn geometry_rejects_bad_parameters() {
        assert!(TorusGeometry::new(4, 1, 2, 1).is_err());
        assert!(TorusGeometry::new(1, 1, 2, 1).is_err());
        assert!(TorusGeometry::new(3, 0, 2, 1).is_err());
        assert!(TorusGeometry::new(3, 1, 1, 1).is_err());
        assert!(TorusGeometry::new(3, 1, 2, 0).is_err());
        let g = TorusGeometry::new(3, 2, 3, 2).unwrap();
        assert_eq!(g.side(), 9);
        assert_eq!(g.volume(), 729);
    }

    #[test]
    fn wrap_examples() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        assert_eq!(g.wrap(&[4, -4]).coords, vec![1, -1]);
        assert_eq!(g.wrap(&[0, 0]).coords, vec![0, 0]);
        let g2 = TorusGeometry::new(3, 2, 2, 1).unwrap();
        let p = g2.wrap(&[5, 13]);
        // side 9: 5 -> -4, 13 -> 4
        assert_eq!(p.coords, vec![-4, 4]);
        assert_eq!(p.dist_inf(), 4);
    }

    #[test]
    fn forward_diff_of_delta() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let mut phi = Field::zeros(&g);
        phi.values[0] = 1.0;
        let d = phi.forward_diff(0);
        for site in 0..g.volume() {
            let x = g.coords(site);
            let expect = match (x[0], x[1]) {
                (0, 0) => -1.0,
                (-1, 0) => 1.0,
                _ => 0.0,
            };
            assert_eq!(d.values[site], expect, "site {x:?}");
        }
    }

    #[test]
    fn constant_field_has_zero_differences() {
        let g = TorusGeometry::new(3, 2, 2, 2).unwrap();
        let phi = Field::from_values(&g, vec![0.7; g.volume() * 2]).unwrap();
        assert!(phi.forward_diff(1).values.iter().all(|&v| v == 0.0));
        assert!(phi.multi_diff(&[1, 2]).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_adjointness() {
        let g = TorusGeometry::new(3, 2, 2, 2).unwrap();
        let phi = random_field(&g, 1);
        let psi = random_field(&g, 2);
        for j in 0..2 {
            let lhs = phi.forward_diff(j).dot(&psi);
            let rhs = phi.dot(&psi.backward_diff(j));
            assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn dft_roundtrip_and_parseval() {
        let g = TorusGeometry::new(3, 2, 2, 2).unwrap();
        let phi = random_field(&g, 3);
        let psi = random_field(&g, 4);
        let (back, resid) = phi.dft().idft();
        assert!(resid < 1e-12);
        let err = back.values.iter().zip(&phi.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let fp = phi.dft();
        let fq = psi.dft();
        let spec: f64 = fp.values.iter().zip(&fq.values).map(|(a, b)| (a * b.conj()).re).sum::<f64>()
            / g.volume() as f64;
        let direct = phi.dot(&psi);
        assert!((spec - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn dft_of_plane_wave() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let q = g.dual_point(5);
        let re: Vec<f64> = (0..g.volume())
            .map(|s| {
                let x = g.coords(s);
                (q.p[0] * x[0] as f64 + q.p[1] * x[1] as f64).cos()
            })
            .collect();
        let im: Vec<f64> = (0..g.volume())
            .map(|s| {
                let x = g.coords(s);
                (q.p[0] * x[0] as f64 + q.p[1] * x[1] as f64).sin()
            })
            .collect();
        let mut buf: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
        dft_in_place(&g, &mut buf, false);
        for (i, v) in buf.iter().enumerate() {
            let expect = if i == 5 { g.volume() as f64 } else { 0.0 };
            assert!((v - C64::new(expect, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn annulus_examples() {
        assert_eq!(annulus_of_norm(1.0, 3, 4), 0);
        assert_eq!(annulus_of_norm(1.0 / 9.0, 3, 4), 2);
        assert_eq!(annulus_of_norm(0.34, 3, 4), 0);
        assert_eq!(annulus_of_norm(0.3, 3, 4), 1);
        assert_eq!(annulus_of_norm(1e-9, 3, 4), 4);
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        assert!(g.annulus_index(&g.dual_point(0)).is_err());
    }

    #[test]
    fn convolution_routes_agree() {
        let g = TorusGeometry::new(3, 1, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_kernel = || {
            let mut k = MatrixKernel::zeros(&g);
            for v in k.values.iter_mut() {
                *v = RMat::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            }
            k
        };
        let a = rand_kernel();
        let b = rand_kernel();
        let direct = a.convolve_direct(&b);
        let spectral = a.convolve(&b);
        for (x, y) in direct.values.iter().zip(&spectral.values) {
            assert!((x - y).amax() < 1e-10);
        }
    }

    #[test]
    fn convolution_with_projected_identity() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let mut id = MatrixKernel::delta(&g);
        let v = g.volume() as f64;
        for k in id.values.iter_mut() {
            k[(0, 0)] -= 1.0 / v;
        }
        let mut a = MatrixKernel::zeros(&g);
        for (i, k) in a.values.iter_mut().enumerate() {
            k[(0, 0)] = (i as f64 * 0.37).sin();
        }
        let mean: f64 = a.values.iter().map(|k| k[(0, 0)]).sum::<f64>() / v;
        let c = a.convolve(&id);
        for (x, y) in a.values.iter().zip(&c.values) {
            assert!((x[(0, 0)] - mean - y[(0, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_convolution_commutes() {
        let g = TorusGeometry::new(3, 1, 2, 1).unwrap();
        let mut a = MatrixKernel::zeros(&g);
        let mut b = MatrixKernel::zeros(&g);
        for i in 0..g.volume() {
            a.values[i][(0, 0)] = (i as f64).cos();
            b.values[i][(0, 0)] = (0.3 * i as f64).sin();
        }
        let ab = a.convolve_direct(&b);
        let ba = b.convolve_direct(&a);
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert!((x - y).amax() < 1e-12);
        }
    }

    #[test]
    fn coarse_projection_and_pullback() {
        let fine = TorusGeometry::new(3, 2, 2, 1).unwrap();
        let same = fine.clone();
        for i in 0..fine.volume() {
            assert_eq!(fine.coarse_project(&same, i).unwrap(), i);
        }
        let coarse = TorusGeometry::new(3, 1, 2, 1).unwrap();
        assert!(coarse.coarse_project(&fine, 0).is_err());
        let c = Field::from_values(&coarse, vec![2.5; coarse.volume()]).unwrap();
        assert!(c.pullback(&fine).unwrap().values.iter().all(|&v| v == 2.5));
        // adjoint identity
        let phi = random_field(&fine, 5);
        let xi = random_field(&coarse, 6);
        let lhs = phi.dot(&xi.pullback(&fine).unwrap());
        let rhs = phi.pushforward_sum(&coarse).unwrap().dot(&xi);
        assert!((lhs - rhs).abs() < 1e-12);
        // zero mean preserved
        let mut z = random_field(&coarse, 7);
        z.center();
        assert!(z.pullback(&fine).unwrap().is_zero_mean());
    }

    #[test]
    fn negation_pairs_nonzero_modes() {
        let g = TorusGeometry::new(3, 2, 2, 1).unwrap();
        for i in 1..g.volume() {
            assert_ne!(g.neg_index(i), i);
            assert_eq!(g.neg_index(g.neg_index(i)), i);
        }
    }
}
