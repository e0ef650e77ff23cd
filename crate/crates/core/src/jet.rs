//! Truncated polynomials in `(z, conj z)` with radial-field or scalar coefficients.
//!
//! `z` and `conj z` are independent variables; the conjugate of a series maps the
//! coefficient at `m` to the coefficient at `conj(m)`. All coefficients are real.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nonlinearity::NonlinearitySpec;
use crate::resonance::{enumerate_indices, MultiIndex};

/// Highest Taylor order of the nonlinearity available for composition.
pub const MAX_COMPOSITION_ORDER: u32 = 4;

#[derive(Debug)]
pub struct IndexSet {
    modes: usize,
    k_max: u32,
    indices: Vec<MultiIndex>,
    degree: Vec<u32>,
    pos: HashMap<MultiIndex, usize>,
    conj: Vec<usize>,
    /// `(a, b, a + b)` with total degree at most `k_max`.
    products: Vec<(usize, usize, usize)>,
    /// `raise[v][i]`: position of `m_i + e_v` when within the truncation.
    raise: Vec<Vec<Option<usize>>>,
}

impl IndexSet {
    pub fn new(modes: usize, k_max: u32) -> Arc<Self> {
        let indices = enumerate_indices(modes, k_max);
        let degree: Vec<u32> = indices.iter().map(|m| m.norm()).collect();
        let pos: HashMap<MultiIndex, usize> =
            indices.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let conj = indices.iter().map(|m| pos[&m.conj()]).collect();
        let mut products = Vec::new();
        for (a, ma) in indices.iter().enumerate() {
            for (b, mb) in indices.iter().enumerate() {
                if degree[a] + degree[b] <= k_max {
                    products.push((a, b, pos[&ma.add(mb)]));
                }
            }
        }
        let raise = (0..2 * modes)
            .map(|v| {
                indices
                    .iter()
                    .map(|m| {
                        let mut e = m.exponents();
                        e[v] += 1;
                        pos.get(&MultiIndex::from_exponents(&e)).copied()
                    })
                    .collect()
            })
            .collect();
        Arc::new(Self {
            modes,
            k_max,
            indices,
            degree,
            pos,
            conj,
            products,
            raise,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }
    pub fn k_max(&self) -> u32 {
        self.k_max
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
    pub fn position(&self, m: &MultiIndex) -> Option<usize> {
        self.pos.get(m).copied()
    }
    pub fn degree(&self, i: usize) -> u32 {
        self.degree[i]
    }

    fn locate(&self, m: &MultiIndex) -> Result<usize> {
        if m.modes() != self.modes {
            return Err(Error::InvalidInput(format!("index {m} has the wrong number of modes")));
        }
        self.position(m)
            .ok_or_else(|| Error::InvalidInput(format!("index {m} beyond truncation {}", self.k_max)))
    }
}

/// Scalar-coefficient series, e.g. a phase or frequency flow.
#[derive(Debug, Clone)]
pub struct ScalarJet {
    set: Arc<IndexSet>,
    coeffs: Vec<f64>,
}

impl ScalarJet {
    pub fn zeros(set: Arc<IndexSet>) -> Self {
        let coeffs = vec![0.0; set.len()];
        Self { set, coeffs }
    }

    pub fn get(&self, m: &MultiIndex) -> f64 {
        self.set.position(m).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn set(&mut self, m: &MultiIndex, v: f64) -> Result<()> {
        let i = self.set.locate(m)?;
        self.coeffs[i] = v;
        Ok(())
    }

    /// Nonzero coefficients.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.set
            .indices
            .iter()
            .zip(self.coeffs.iter().copied())
            .filter(|(_, c)| *c != 0.0)
    }

    pub fn conj(&self) -> Self {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[self.set.conj[i]] = *c;
        }
        Self {
            set: self.set.clone(),
            coeffs,
        }
    }
}

/// Field-coefficient series; absent coefficients are zero.
#[derive(Debug, Clone)]
pub struct JetField {
    set: Arc<IndexSet>,
    len: usize,
    coeffs: Vec<Option<Vec<f64>>>,
}

impl JetField {
    pub fn zeros(set: Arc<IndexSet>, len: usize) -> Self {
        let coeffs = vec![None; set.len()];
        Self { set, len, coeffs }
    }

    pub fn constant(set: Arc<IndexSet>, f: Vec<f64>) -> Self {
        let mut j = Self::zeros(set, f.len());
        j.coeffs[0] = Some(f);
        j
    }

    pub fn index_set(&self) -> &Arc<IndexSet> {
        &self.set
    }

    /// Length of each coefficient field.
    pub fn field_len(&self) -> usize {
        self.len
    }

    pub fn get(&self, m: &MultiIndex) -> Option<&[f64]> {
        self.set
            .position(m)
            .and_then(|i| self.coeffs[i].as_deref())
    }

    pub fn get_at(&self, i: usize) -> Option<&[f64]> {
        self.coeffs[i].as_deref()
    }

    pub fn set(&mut self, m: &MultiIndex, f: Vec<f64>) -> Result<()> {
        if f.len() != self.len {
            return Err(Error::IncompatibleGrids);
        }
        let i = self.set.locate(m)?;
        self.coeffs[i] = Some(f);
        Ok(())
    }

    pub fn clear(&mut self, m: &MultiIndex) {
        if let Some(i) = self.set.position(m) {
            self.coeffs[i] = None;
        }
    }

    /// Iterator over the present coefficients.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &[f64])> {
        self.set
            .indices
            .iter()
            .zip(&self.coeffs)
            .filter_map(|(m, c)| c.as_deref().map(|c| (m, c)))
    }

    fn check(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.set, &other.set) || self.len != other.len {
            return Err(Error::IncompatibleGrids);
        }
        Ok(())
    }

    fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl Fn(usize) -> f64) {
        let v = slot.get_or_insert_with(|| vec![0.0; len]);
        for (k, x) in v.iter_mut().enumerate() {
            *x += f(k);
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (i, c) in other.coeffs.iter().enumerate() {
            if let Some(c) = c {
                Self::accumulate(&mut out.coeffs[i], self.len, |k| c[k]);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().flatten() {
            c.iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// Truncated pointwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = Self::zeros(self.set.clone(), self.len);
        for &(a, b, c) in &self.set.products {
            if let (Some(x), Some(y)) = (&self.coeffs[a], &other.coeffs[b]) {
                Self::accumulate(&mut out.coeffs[c], self.len, |k| x[k] * y[k]);
            }
        }
        Ok(out)
    }

    pub fn mul_scalar(&self, s: &ScalarJet) -> Result<Self> {
        if !Arc::ptr_eq(&self.set, &s.set) {
            return Err(Error::IncompatibleGrids);
        }
        let mut out = Self::zeros(self.set.clone(), self.len);
        for &(a, b, c) in &self.set.products {
            let w = s.coeffs[b];
            if w == 0.0 {
                continue;
            }
            if let Some(x) = &self.coeffs[a] {
                Self::accumulate(&mut out.coeffs[c], self.len, |k| w * x[k]);
            }
        }
        Ok(out)
    }

    /// Multiplies every coefficient pointwise by a fixed field.
    pub fn mul_field(&self, f: &[f64]) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().flatten() {
            c.iter_mut().zip(f).for_each(|(x, y)| *x *= y);
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut coeffs = vec![None; self.coeffs.len()];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[self.set.conj[i]] = c.clone();
        }
        Self {
            set: self.set.clone(),
            len: self.len,
            coeffs,
        }
    }

    /// Partial derivative in variable `v` (`v < N` is `z_v`, otherwise `conj z_{v-N}`);
    /// the top degree is lost.
    pub fn derivative(&self, v: usize) -> Self {
        let mut out = Self::zeros(self.set.clone(), self.len);
        for (i, m) in self.set.indices.iter().enumerate() {
            if let Some(t) = self.set.raise[v][i] {
                if let Some(c) = &self.coeffs[t] {
                    let e = m.exponents()[v] as f64 + 1.0;
                    out.coeffs[i] = Some(c.iter().map(|x| e * x).collect());
                }
            }
        }
        out
    }

    /// Composition `sum_k c_k(x) (self - self_0)^k` with pointwise Taylor coefficients.
    pub fn compose(&self, taylor: &[Vec<f64>]) -> Result<Self> {
        if taylor.is_empty() {
            return Ok(Self::zeros(self.set.clone(), self.len));
        }
        let mut delta = self.clone();
        delta.coeffs[0] = None;
        let top = taylor.len() - 1;
        let mut acc = Self::constant(self.set.clone(), taylor[top].clone());
        for c in taylor[..top].iter().rev() {
            acc = acc.mul(&delta)?;
            Self::accumulate(&mut acc.coeffs[0], self.len, |k| c[k]);
        }
        Ok(acc)
    }

    /// Applies a linear map to every present coefficient.
    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().flatten() {
            *c = f(c);
        }
        out
    }

    /// Maximum over present coefficients of the weighted norm.
    pub fn max_norm(&self, norm: impl Fn(&[f64]) -> f64) -> f64 {
        self.coeffs.iter().flatten().map(|c| norm(c)).fold(0.0, f64::max)
    }
}

/// `g(|phi|^2) phi` for a series `phi` with strictly positive base coefficient.
pub fn expand_nonlinearity(phi: &JetField, nl: &NonlinearitySpec) -> Result<JetField> {
    let base = phi
        .get_at(0)
        .ok_or_else(|| Error::InvalidInput("series without base coefficient".into()))?;
    if base.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("base coefficient must be strictly positive".into()));
    }
    let k = phi.set.k_max;
    if k > MAX_COMPOSITION_ORDER {
        return Err(Error::KTooLarge(k as usize));
    }
    let s = phi.mul(&phi.conj())?;
    let s0 = s.get_at(0).expect("positive base");
    let order = k as usize;
    let mut taylor = vec![vec![0.0; phi.len]; order + 1];
    for (x, &sv) in s0.iter().enumerate() {
        let t = nl.taylor4(sv);
        for (o, row) in taylor.iter_mut().enumerate() {
            row[x] = t[o];
        }
    }
    s.compose(&taylor)?.mul(phi)
}
