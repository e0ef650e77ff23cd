//! Cell-centred radial grid, quadrature and the radial Laplacian.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::banded::Band;
use crate::error::{Error, Result};

/// Behaviour of a field under `r -> -r` (only meaningful in one dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dimension: usize,
    #[serde(rename = "R")]
    pub extent: f64,
    pub h: f64,
    pub order: usize,
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    spec: GridSpec,
    n: usize,
    r: Vec<f64>,
    w: Vec<f64>,
    sqrt_w: Vec<f64>,
}

pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

/// Suggested outer radius so that `e^{-sqrt(omega) R}` is below round-off.
pub fn default_extent(omega: f64) -> f64 {
    30.0 / omega.sqrt()
}

/// Spacing resolving the shortest wavelength at spectral parameter `e_max`
/// with `points` samples per wavelength.
pub fn default_spacing(e_max: f64, points: f64) -> f64 {
    let k = e_max.max(1e-12).sqrt();
    (2.0 * std::f64::consts::PI / (k * points)).min(0.05)
}

impl RadialGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if !(1..=3).contains(&spec.dimension) {
            return Err(Error::InvalidInput(format!(
                "dimension {} not in 1..=3",
                spec.dimension
            )));
        }
        if spec.order != 2 && spec.order != 4 {
            return Err(Error::InvalidInput(format!("stencil order {}", spec.order)));
        }
        if spec.dimension == 2 && spec.order != 2 {
            return Err(Error::InvalidInput(
                "two-dimensional grids support order 2 only".into(),
            ));
        }
        if !(spec.h > 0.0 && spec.extent > 4.0 * spec.h) {
            return Err(Error::InvalidInput("need h > 0 and R > 4h".into()));
        }
        let n = (spec.extent / spec.h - 1e-9).ceil() as usize;
        let spec = GridSpec {
            extent: n as f64 * spec.h,
            ..spec
        };
        let area = sphere_area(spec.dimension);
        let r: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * spec.h).collect();
        let w: Vec<f64> = r
            .iter()
            .map(|&ri| area * ri.powi(spec.dimension as i32 - 1) * spec.h)
            .collect();
        let sqrt_w = w.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            spec,
            n,
            r,
            w,
            sqrt_w,
        })
    }

    pub fn with(dimension: usize, extent: f64, h: f64, order: usize) -> Result<Self> {
        Self::new(GridSpec {
            dimension,
            extent,
            h,
            order,
        })
    }

    /// Same spacing and stencil, outer radius at least `extent`.
    pub fn extended(&self, extent: f64) -> Result<Self> {
        Self::new(GridSpec {
            extent: extent.max(self.spec.extent),
            ..self.spec
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }
    pub fn dim(&self) -> usize {
        self.spec.dimension
    }
    pub fn h(&self) -> f64 {
        self.spec.h
    }
    pub fn order(&self) -> usize {
        self.spec.order
    }
    pub fn extent(&self) -> f64 {
        self.spec.extent
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    pub fn weights(&self) -> &[f64] {
        &self.w
    }
    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }

    /// Hex digest identifying the discretization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.spec.dimension as u64).to_le_bytes());
        hasher.update((self.n as u64).to_le_bytes());
        hasher.update(self.spec.h.to_bits().to_le_bytes());
        hasher.update((self.spec.order as u64).to_le_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        self.n == other.n
            && self.spec.dimension == other.spec.dimension
            && self.spec.h == other.spec.h
            && self.spec.order == other.spec.order
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n {
            Ok(())
        } else {
            Err(Error::IncompatibleGrids)
        }
    }

    /// Half stencil width.
    pub fn half_width(&self) -> usize {
        self.spec.order / 2
    }

    /// Banded matrix of the discrete radial Laplacian acting on samples.
    pub fn laplacian_band(&self, parity: Parity) -> Band<f64> {
        let n = self.n;
        let h2 = self.spec.h * self.spec.h;
        let p = self.half_width();
        let mut band = Band::zeros(n, p, p);
        if self.spec.dimension == 2 {
            for i in 0..n {
                let ri = self.r[i];
                let rm = if i == 0 { 0.0 } else { ri - 0.5 * self.spec.h };
                let rp = ri + 0.5 * self.spec.h;
                band.add(i, i, -(rm + rp) / (ri * h2));
                if i > 0 {
                    band.add(i, i - 1, rm / (ri * h2));
                }
                if i + 1 < n {
                    band.add(i, i + 1, rp / (ri * h2));
                } else {
                    // Dirichlet ghost u_n = -u_{n-1}
                    band.add(i, i, -rp / (ri * h2));
                }
            }
            return band;
        }
        let coeffs: &[f64] = if p == 1 {
            &[1.0, -2.0, 1.0]
        } else {
            &[-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0]
        };
        // v = rho * u with rho = 1 (d = 1) or r (d = 3); v's parity at the origin
        let three = self.spec.dimension == 3;
        let origin_sign = match (three, parity) {
            (true, _) => -1.0,
            (false, Parity::Even) => 1.0,
            (false, Parity::Odd) => -1.0,
        };
        let rho = |j: usize| if three { self.r[j] } else { 1.0 };
        for i in 0..n {
            for (k, &c) in coeffs.iter().enumerate() {
                let j = i as isize + k as isize - p as isize;
                let (node, sign) = if j < 0 {
                    ((-1 - j) as usize, origin_sign)
                } else if j as usize >= n {
                    (2 * n - 1 - j as usize, -1.0)
                } else {
                    (j as usize, 1.0)
                };
                band.add(i, node, sign * c / h2 * rho(node) / rho(i));
            }
        }
        band
    }

    /// Wavenumber `k > 0` with `-Lap_h e^{ikx} = e e^{ikx}` for the interior stencil.
    pub fn discrete_wavenumber(&self, e: f64) -> Result<f64> {
        let h = self.spec.h;
        let c = if self.spec.order == 2 {
            1.0 - 0.5 * e * h * h
        } else {
            4.0 - (9.0 + 3.0 * e * h * h).sqrt()
        };
        if !(e > 0.0) || c.abs() > 1.0 {
            return Err(Error::InvalidInput(format!("energy {e} outside the discrete band")));
        }
        Ok(c.acos() / h)
    }

    /// Laplacian band whose ghost values at the outer edge continue the samples as an
    /// outgoing wave `e^{ikr} r^{-(d-1)/2}` (dimensions 1 and 3).
    pub fn laplacian_band_outgoing(&self, k: f64) -> Result<Band<Complex64>> {
        if self.spec.dimension == 2 {
            return Err(Error::InvalidInput(
                "outgoing edge condition needs the order-4 stencil (d = 1 or 3)".into(),
            ));
        }
        let n = self.n;
        let h = self.spec.h;
        let p = self.half_width();
        let coeffs: &[f64] = if p == 1 {
            &[1.0, -2.0, 1.0]
        } else {
            &[-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0]
        };
        let three = self.spec.dimension == 3;
        let rho = |j: usize| if three { self.r[j] } else { 1.0 };
        let mut band = Band::zeros(n, p, p);
        for i in 0..n {
            for (q, &c) in coeffs.iter().enumerate() {
                let j = i as isize + q as isize - p as isize;
                let w = c / (h * h);
                if j < 0 {
                    let node = (-1 - j) as usize;
                    let sign = if three { -1.0 } else { 1.0 };
                    band.add(i, node, Complex64::new(sign * w * rho(node) / rho(i), 0.0));
                } else if (j as usize) < n {
                    let node = j as usize;
                    band.add(i, node, Complex64::new(w * rho(node) / rho(i), 0.0));
                } else {
                    // v_j = v_{n-1} e^{ik(j - n + 1)h} for v = rho u
                    let steps = (j as usize - (n - 1)) as f64;
                    let phase = Complex64::from_polar(1.0, k * steps * h);
                    band.add(i, n - 1, phase * (w * rho(n - 1) / rho(i)));
                }
            }
        }
        Ok(band)
    }

    /// `S = W^{1/2} L W^{-1/2}`: symmetric form of a weighted-self-adjoint band operator.
    pub fn symmetrize(&self, op: &Band<f64>) -> Band<f64> {
        let inv: Vec<f64> = self.sqrt_w.iter().map(|s| 1.0 / s).collect();
        op.scaled(&self.sqrt_w, &inv)
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.laplacian_band(Parity::Even).matvec(f)
    }

    pub fn laplacian_c(&self, f: &[Complex64]) -> Vec<Complex64> {
        let band = self.laplacian_band(Parity::Even);
        let re: Vec<f64> = f.iter().map(|z| z.re).collect();
        let im: Vec<f64> = f.iter().map(|z| z.im).collect();
        band.matvec(&re)
            .into_iter()
            .zip(band.matvec(&im))
            .map(|(a, b)| Complex64::new(a, b))
            .collect()
    }

    /// Fourth-order first derivative of an even one-dimensional field.
    pub fn derivative_even(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let at = |j: isize| -> f64 {
            if j < 0 {
                f[(-1 - j) as usize]
            } else if j as usize >= n {
                -f[2 * n - 1 - j as usize]
            } else {
                f[j as usize]
            }
        };
        let h = self.spec.h;
        (0..n as isize)
            .map(|i| (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h))
            .collect()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.w.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// `Re sum w f conj(g)`.
    pub fn inner_c(&self, f: &[Complex64], g: &[Complex64]) -> f64 {
        self.w
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * (a.re * b.re + a.im * b.im))
            .sum()
    }

    /// `sum w f conj(g)`.
    pub fn hermitian(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        self.w
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| a * b.conj() * *w)
            .sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn norm_c(&self, f: &[Complex64]) -> f64 {
        self.inner_c(f, f).sqrt()
    }

    /// `|| <r>^sigma f ||_{H^2}` realised as `|| (1 - Lap)(<r>^sigma f) ||`.
    pub fn sigma_norm(&self, f: &[Complex64], sigma: f64) -> f64 {
        let g: Vec<Complex64> = f
            .iter()
            .zip(&self.r)
            .map(|(v, r)| v * (1.0 + r * r).powf(0.5 * sigma))
            .collect();
        let lap = self.laplacian_c(&g);
        let h2: Vec<Complex64> = g.iter().zip(&lap).map(|(a, b)| a - b).collect();
        self.norm_c(&h2)
    }

    pub fn sigma_norm_real(&self, f: &[f64], sigma: f64) -> f64 {
        let c: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.sigma_norm(&c, sigma)
    }

    /// Samples of `f(r)`.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.r.iter().map(|&r| f(r)).collect()
    }

    /// Zero-pads a field defined on a smaller grid with the same spacing.
    pub fn pad<T: Copy + Default>(&self, f: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.n];
        out[..f.len().min(self.n)].copy_from_slice(&f[..f.len().min(self.n)]);
        out
    }
}

/// Real field container used for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub grid_hash: String,
    pub values: Vec<Complex64>,
}

impl RadialField {
    pub fn real(grid: &RadialGrid, values: &[f64]) -> Self {
        Self {
            grid_hash: grid.hash(),
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn complex(grid: &RadialGrid, values: Vec<Complex64>) -> Self {
        Self {
            grid_hash: grid.hash(),
            values,
        }
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    /// CSV with columns `r, re, im`.
    pub fn to_csv(&self, grid: &RadialGrid) -> Result<String> {
        if self.grid_hash != grid.hash() {
            return Err(Error::IncompatibleGrids);
        }
        let mut s = String::from("r,re,im\n");
        for (r, v) in grid.r().iter().zip(&self.values) {
            s.push_str(&format!("{r:.16e},{:.16e},{:.16e}\n", v.re, v.im));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_mass_three_d() {
        let g = RadialGrid::with(3, 12.0, 0.05, 4).unwrap();
        let f = g.sample(|r| (-r * r / 2.0).exp());
        assert!((g.inner(&f, &f) - PI.powf(1.5)).abs() < 1e-10);
    }

    #[test]
    fn inner_properties() {
        let g = RadialGrid::with(2, 10.0, 0.1, 2).unwrap();
        let f: Vec<Complex64> = g
            .r()
            .iter()
            .map(|&r| Complex64::new((-r).exp(), r.sin() * (-r).exp()))
            .collect();
        let i_f: Vec<Complex64> = f.iter().map(|z| z * Complex64::i()).collect();
        assert!(g.inner_c(&f, &f) > 0.0);
        assert!(g.inner_c(&f, &i_f).abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_gaussian_three_d() {
        for (order, tol) in [(2, 3e-3), (4, 3e-5)] {
            let g = RadialGrid::with(3, 10.0, 0.02, order).unwrap();
            let f = g.sample(|r| (-r * r / 2.0).exp());
            let lap = g.laplacian(&f);
            let err = g
                .r()
                .iter()
                .zip(&lap)
                .map(|(&r, l)| (l - (r * r - 3.0) * (-r * r / 2.0).exp()).abs())
                .fold(0.0, f64::max);
            assert!(err < tol, "order {order}: {err}");
        }
    }

    #[test]
    fn quadratic_exact_in_one_d() {
        let g = RadialGrid::with(1, 5.0, 0.1, 2).unwrap();
        let f = g.sample(|r| r * r);
        let lap = g.laplacian(&f);
        for l in &lap[..lap.len() - 2] {
            assert!((l - 2.0).abs() < 1e-10);
        }
        let c = vec![1.0; g.len()];
        assert!(g.laplacian(&c)[..g.len() - 3].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn refinement_order() {
        for (dim, order) in [(1, 2), (1, 4), (3, 2), (3, 4), (2, 2)] {
            let err = |h: f64| {
                let g = RadialGrid::with(dim, 12.0, h, order).unwrap();
                let f = g.sample(|r| (-r * r).exp());
                let d = dim as f64;
                g.r()
                    .iter()
                    .zip(g.laplacian(&f))
                    .map(|(&r, l)| (l - (4.0 * r * r - 2.0 * d) * (-r * r).exp()).abs())
                    .fold(0.0, f64::max)
            };
            let rate = (err(0.04) / err(0.02)).log2();
            assert!(rate > order as f64 - 0.3, "d={dim} order={order} rate={rate}");
        }
    }

    #[test]
    fn weighted_symmetry() {
        for (dim, order) in [(1, 4), (2, 2), (3, 4)] {
            let g = RadialGrid::with(dim, 8.0, 0.1, order).unwrap();
            let lap = g.laplacian_band(Parity::Even);
            let s = g.symmetrize(&lap);
            for i in 0..g.len() {
                for j in s.row_range(i) {
                    assert!((s.get(i, j) - s.get(j, i)).abs() < 1e-9 * s.get(i, i).abs());
                }
            }
        }
    }

    #[test]
    fn sigma_norm_basics() {
        let g = RadialGrid::with(3, 14.0, 0.02, 4).unwrap();
        assert_eq!(g.sigma_norm(&vec![Complex64::new(0.0, 0.0); g.len()], 4.0), 0.0);
        let f = g.sample(|r| (-r * r / 2.0).exp());
        let lap = g.laplacian(&f);
        let h2: Vec<f64> = f.iter().zip(&lap).map(|(a, b)| a - b).collect();
        assert!((g.sigma_norm_real(&f, 0.0) - g.norm(&h2)).abs() < 1e-14);
    }

    #[test]
    fn sigma_norm_gaussian_weight_two() {
        // (1 - Lap)[(1 + r^2) e^{-r^2/2}] = (-r^4 + 7 r^2 - 2) e^{-r^2/2}
        let g = RadialGrid::with(3, 14.0, 0.01, 4).unwrap();
        let f = g.sample(|r| (-r * r / 2.0).exp());
        let got = g.sigma_norm_real(&f, 2.0);
        let want = SIGMA2_GAUSSIAN_3D;
        assert!((got - want).abs() < 1e-3 * want, "{got} vs {want}");
    }

    // sqrt(577 pi^{3/2} / 16)
    const SIGMA2_GAUSSIAN_3D: f64 = 14.170_667_887_779_442;

    #[test]
    fn grid_mismatch() {
        let g = RadialGrid::with(1, 5.0, 0.1, 4).unwrap();
        assert!(g.check_len(3).is_err());
        let h = RadialGrid::with(1, 6.0, 0.1, 4).unwrap();
        assert!(!g.same_as(&h));
        assert!(RadialField::real(&g, &vec![0.0; g.len()]).to_csv(&h).is_err());
    }

    #[test]
    fn two_d_rejects_order_four() {
        assert!(RadialGrid::with(2, 5.0, 0.1, 4).is_err());
    }
}
