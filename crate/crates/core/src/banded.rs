//! Band matrices: storage, LU with partial pivoting, and symmetric inertia counts.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialEq
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct Band<T> {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<T>,
}

impl<T: Scalar> Band<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![T::zero(); n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || i >= self.n || j >= self.n {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + j + self.kl - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |k| self.data[k])
    }

    /// Adds `v` at `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("({i},{j}) outside band"));
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("({i},{j}) outside band"));
        self.data[k] = v;
    }

    pub fn add_diagonal(&mut self, d: &[T]) {
        for (i, &v) in d.iter().enumerate() {
            self.add(i, i, v);
        }
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        let w = self.kl + self.ku + 1;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            let row = &self.data[i * w..(i + 1) * w];
            for j in self.row_range(i) {
                acc += row[j + self.kl - i] * x[j];
            }
            *yi = acc;
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Band<U> {
        Band {
            n: self.n,
            kl: self.kl,
            ku: self.ku,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scales row `i` by `left[i]` and column `j` by `right[j]`.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in self.row_range(i) {
                let k = out.slot(i, j).unwrap();
                out.data[k] = out.data[k] * T::from_real(left[i] * right[j]);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn lu(&self) -> Result<BandLu<T>> {
        BandLu::factor(self)
    }
}

/// `P A = L U` for a band matrix; `U` gains `kl` extra super-diagonals.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j + self.kl - i
    }

    pub fn factor(a: &Band<T>) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            width,
            data: vec![T::zero(); n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            for j in a.row_range(i) {
                let k = lu.idx(i, j);
                lu.data[k] = a.get(i, j);
            }
        }
        let reach = kl + ku;
        let mut scale = 0.0f64;
        for v in &a.data {
            scale = scale.max(v.modulus());
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.idx(k, k)].modulus();
            for i in k + 1..=last_row {
                let v = lu.data[lu.idx(i, k)].modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || best <= scale * 1e-300 {
                return Err(Error::SingularSystem(format!("zero pivot in column {k}")));
            }
            lu.piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (x, y) = (lu.idx(k, j), lu.idx(p, j));
                    lu.data.swap(x, y);
                }
            }
            let pivot = lu.data[lu.idx(k, k)];
            let count = last_col - k;
            for i in k + 1..=last_row {
                let (head, tail) = lu.data.split_at_mut(i * width);
                let row_k = &head[k * width + kl + 1..k * width + kl + 1 + count];
                let row_i = &mut tail[..width];
                let ik = k + kl - i;
                let l = row_i[ik] / pivot;
                row_i[ik] = l;
                if l == T::zero() {
                    continue;
                }
                let start = ik + 1;
                for (a, &b) in row_i[start..start + count].iter_mut().zip(row_k) {
                    *a -= l * b;
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.data[self.idx(i, k)] * bk;
            }
        }
        let reach = self.width - self.kl - 1;
        for i in (0..n).rev() {
            let end = (i + reach).min(n - 1);
            let row = &self.data[i * self.width..(i + 1) * self.width];
            let mut s = b[i];
            for (a, &x) in row[self.kl + 1..self.kl + 1 + end - i].iter().zip(&b[i + 1..=end]) {
                s -= *a * x;
            }
            b[i] = s / row[self.kl];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Number of eigenvalues of the symmetric band matrix `a` below `shift`,
/// via `LDL^T` of `a - shift I` (Sylvester's law of inertia).
pub fn count_below(a: &Band<f64>, shift: f64) -> usize {
    let n = a.n;
    let p = a.kl;
    // l[i][k] = L(i, i - 1 - k)
    let mut l = vec![0.0; n * p.max(1)];
    let mut d = vec![0.0; n];
    let mut negatives = 0;
    let tiny = f64::EPSILON * a.data.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        let j0 = i.saturating_sub(p);
        for j in j0..i {
            // L(i,j) d_j = A(i,j) - sum_k L(i,k) d_k L(j,k)
            let mut s = a.get(i, j);
            for k in j0.max(j.saturating_sub(p))..j {
                s -= l[i * p + (i - 1 - k)] * d[k] * l[j * p + (j - 1 - k)];
            }
            l[i * p + (i - 1 - j)] = s / d[j];
        }
        let mut s = a.get(i, i) - shift;
        for k in j0..i {
            let lik = l[i * p + (i - 1 - k)];
            s -= lik * lik * d[k];
        }
        if s.abs() < tiny {
            s = -tiny;
        }
        if s < 0.0 {
            negatives += 1;
        }
        d[i] = s;
    }
    negatives
}

/// Eigenvalues of a symmetric band matrix that lie below `upper`, by bisection
/// on inertia counts; `lower` must bound the spectrum from below.
pub fn eigenvalues_below(a: &Band<f64>, lower: f64, upper: f64, tol: f64) -> Vec<f64> {
    let total = count_below(a, upper);
    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        // smallest x with count_below(x) > k
        let (mut lo, mut hi) = (lower, upper);
        while hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if count_below(a, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

/// Gershgorin lower bound for the spectrum of a symmetric band matrix.
pub fn gershgorin_lower(a: &Band<f64>) -> f64 {
    (0..a.n)
        .map(|i| {
            let off: f64 = a
                .row_range(i)
                .filter(|&j| j != i)
                .map(|j| a.get(i, j).abs())
                .sum();
            a.get(i, i) - off
        })
        .fold(f64::INFINITY, f64::min)
}

/// Inverse iteration for the eigenvector of symmetric `a` nearest `shift`.
pub fn inverse_iteration(a: &Band<f64>, shift: f64, iterations: usize) -> Result<Vec<f64>> {
    let mut m = a.clone();
    let nudge = 1e-10 * (1.0 + shift.abs());
    let d = vec![-(shift + nudge); a.n];
    m.add_diagonal(&d);
    let lu = m.lu()?;
    let mut x: Vec<f64> = (0..a.n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    for _ in 0..iterations {
        lu.solve_in_place(&mut x);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> Band<f64> {
        let mut b = Band::zeros(n, kl, ku);
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for i in 0..n {
            for j in b.row_range(i) {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                b.set(i, j, v);
            }
        }
        b
    }

    #[test]
    fn lu_solves_against_dense() {
        let a = random_band(40, 3, 2, 7);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x);
        let got = a.lu().unwrap().solve(&b);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn complex_lu() {
        let a = random_band(30, 2, 2, 3).map(|v| Complex64::new(v, 0.3 * v));
        let x: Vec<Complex64> = (0..30).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let got = a.lu().unwrap().solve(&a.matvec(&x));
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).norm() < 1e-8);
        }
    }

    #[test]
    fn singular_detected() {
        let a: Band<f64> = Band::zeros(5, 1, 1);
        assert!(matches!(a.lu(), Err(Error::SingularSystem(_))));
    }

    fn sym_band(n: usize, p: usize, seed: u64) -> Band<f64> {
        let r = random_band(n, p, p, seed);
        let mut s = Band::zeros(n, p, p);
        for i in 0..n {
            for j in s.row_range(i) {
                s.set(i, j, r.get(i, j) + r.get(j, i));
            }
        }
        s
    }

    proptest! {
        #[test]
        fn inertia_matches_dense_eigenvalues(seed in 0u64..1000, shift in -1.0f64..1.0) {
            let a = sym_band(25, 2, seed);
            let dense = DMatrix::from_fn(25, 25, |i, j| a.get(i, j));
            let eig = dense.symmetric_eigenvalues();
            let want = eig.iter().filter(|&&e| e < shift).count();
            let margin = eig.iter().map(|e| (e - shift).abs()).fold(f64::INFINITY, f64::min);
            prop_assume!(margin > 1e-8);
            prop_assert_eq!(count_below(&a, shift), want);
        }
    }

    #[test]
    fn bisection_and_inverse_iteration() {
        let a = sym_band(30, 2, 11);
        let dense = DMatrix::from_fn(30, 30, |i, j| a.get(i, j));
        let mut eig: Vec<f64> = dense.symmetric_eigenvalues().iter().cloned().collect();
        eig.sort_by(f64::total_cmp);
        let got = eigenvalues_below(&a, gershgorin_lower(&a), 0.0, 1e-14);
        let want: Vec<f64> = eig.iter().cloned().filter(|&e| e < 0.0).collect();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        let v = inverse_iteration(&a, got[0], 3).unwrap();
        let av = a.matvec(&v);
        let res: f64 = av.iter().zip(&v).map(|(x, y)| (x - got[0] * y).powi(2)).sum();
        assert!(res.sqrt() < 1e-8);
    }
}
