//! Radiation-damping Gram matrices of the sources `G_m` at each resonant threshold.
//!
//! Two routes: the limiting absorption value `Im <(H - r - i eps)^{-1} sigma3 G_n, G_n'>`
//! extrapolated to `eps -> 0`, and the far-field amplitude of the outgoing solution of
//! `(H - r) u = -sigma3 G`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::Band;
use crate::error::{Error, Result};
use crate::grid::{sphere_area, Parity, RadialGrid};
use crate::linearization::{MatrixHamiltonian, Pair};
use crate::profile::RefinedProfile;
use crate::resonance::{MultiIndex, ResonanceGroup};
use crate::status::Status;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FgrOptions {
    /// Number of absorption offsets `eps_i = eps_0 2^{-i}`.
    pub steps: usize,
    /// `eps_0 = eps_fraction (r - omega)`.
    pub eps_fraction: f64,
    /// Richardson elimination levels.
    pub richardson: usize,
    /// Largest relative change between the last two extrapolants.
    pub unresolved: f64,
    /// Attenuation of the damped outgoing wave at the edge of the extended domain.
    pub decay: f64,
    pub tau_fgr: f64,
    /// Length of the far-field matching window in wavelengths.
    pub window_wavelengths: f64,
    pub matching_tol: f64,
    pub lin_tol: f64,
}

impl Default for FgrOptions {
    fn default() -> Self {
        Self {
            steps: 6,
            eps_fraction: 0.1,
            richardson: 2,
            unresolved: 0.05,
            decay: 1e-8,
            tau_fgr: 1e-2,
            window_wavelengths: 4.0,
            matching_tol: 1e-3,
            lin_tol: 1e-8,
        }
    }
}

fn complexify(p: &Pair<f64>) -> Pair<Complex64> {
    p.complexify()
}

/// `(H - (lambda + i eps))^{-1} f` by banded factorization.
pub fn resolvent_apply(
    h: &MatrixHamiltonian,
    lambda: f64,
    eps: f64,
    f: &Pair<Complex64>,
    tol: f64,
) -> Result<Pair<Complex64>> {
    let z = Complex64::new(lambda, eps);
    let u = h.factor_shifted(z)?.solve(f);
    let mut r = h.apply_c(&u);
    let norm = |p: &Pair<Complex64>| {
        p.plus
            .iter()
            .chain(&p.minus)
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    for (x, (a, b)) in r
        .plus
        .iter_mut()
        .chain(r.minus.iter_mut())
        .zip(u.plus.iter().chain(&u.minus).zip(f.plus.iter().chain(&f.minus)))
    {
        *x -= z * a + b;
    }
    let rel = norm(&r) / norm(f).max(f64::MIN_POSITIVE);
    if !(rel <= tol) {
        return Err(Error::IllConditioned(format!(
            "resolvent residual {rel:e} at {lambda} + {eps}i"
        )));
    }
    Ok(u)
}

/// Richardson table over offsets halving at each step; returns the last two extrapolants.
pub fn richardson(values: &[f64], levels: usize) -> Result<(f64, f64)> {
    if values.len() < levels + 2 {
        return Err(Error::InsufficientData(format!(
            "{} offsets for {} Richardson levels",
            values.len(),
            levels
        )));
    }
    let mut col: Vec<f64> = values.to_vec();
    for k in 1..=levels {
        let f = 2f64.powi(k as i32);
        col = col.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
    }
    let n = col.len();
    Ok((col[n - 1], col[n - 2]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsorptionRoute {
    pub eps: Vec<f64>,
    /// Raw `Im` pairings per offset.
    pub raw: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<f64>>,
    /// Relative Frobenius change between the last two extrapolants.
    pub change: f64,
}

/// Limiting-absorption Gram matrix at threshold `r` for real source pairs.
pub fn absorption_gram(h: &MatrixHamiltonian, r: f64, sources: &[Pair<f64>], opts: FgrOptions) -> Result<AbsorptionRoute> {
    let e = r - h.omega;
    if !(e > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {r} inside the gap")));
    }
    let grid = &h.grid;
    let m = sources.len();
    let eps: Vec<f64> = (0..opts.steps)
        .map(|i| opts.eps_fraction * e * 0.5f64.powi(i as i32))
        .collect();
    let raw: Vec<Vec<Vec<f64>>> = eps
        .par_iter()
        .map(|&ep| -> Result<Vec<Vec<f64>>> {
            let im_k = Complex64::new(e, ep).sqrt().im;
            let extent = grid.extent() + (-opts.decay.ln()) / im_k;
            let ext = Arc::new(grid.extended(extent)?);
            let hx = h.extended(ext.clone())?;
            let solver = hx.factor_shifted(Complex64::new(r, ep))?;
            let us: Vec<Pair<Complex64>> = sources
                .iter()
                .map(|g| {
                    let padded = Pair::new(ext.pad(&g.plus), ext.pad(&g.minus));
                    solver.solve(&complexify(&padded.sigma3()))
                })
                .collect();
            let w = grid.weights();
            let mut out = vec![vec![0.0; m]; m];
            for (a, u) in us.iter().enumerate() {
                for (b, g) in sources.iter().enumerate() {
                    let s: Complex64 = (0..grid.len())
                        .map(|i| (u.plus[i] * g.plus[i] + u.minus[i] * g.minus[i]) * w[i])
                        .sum();
                    out[a][b] = s.im;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut gamma = vec![vec![0.0; m]; m];
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..m {
        for b in 0..m {
            let series: Vec<f64> = raw.iter().map(|x| 0.5 * (x[a][b] + x[b][a])).collect();
            let (last, prev) = richardson(&series, opts.richardson)?;
            gamma[a][b] = last;
            num += (last - prev).powi(2);
            den += last * last;
        }
    }
    let change = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    if change > opts.unresolved {
        return Err(Error::FgrUnresolved(format!(
            "extrapolants differ by {:.2}% at threshold {r}",
            100.0 * change
        )));
    }
    Ok(AbsorptionRoute {
        eps,
        raw,
        gamma,
        change,
    })
}

/// Interleaved band of `H - r` with the upper channel radiating at the outer edge.
fn outgoing_band(h: &MatrixHamiltonian, r: f64, k: f64) -> Result<Band<Complex64>> {
    let grid = &h.grid;
    let n = grid.len();
    let out = grid.laplacian_band_outgoing(k)?;
    let dir = grid.laplacian_band(Parity::Even);
    let w = 2 * grid.half_width();
    let mut m = Band::zeros(2 * n, w, w);
    for i in 0..n {
        for j in out.row_range(i) {
            m.add(2 * i, 2 * j, -out.get(i, j));
            m.add(2 * i + 1, 2 * j + 1, Complex64::new(dir.get(i, j), 0.0));
        }
        let a = h.diag_a[i];
        let b = h.coupling[i];
        m.add(2 * i, 2 * i, Complex64::new(a - r, 0.0));
        m.add(2 * i, 2 * i + 1, Complex64::new(b, 0.0));
        m.add(2 * i + 1, 2 * i, Complex64::new(-b, 0.0));
        m.add(2 * i + 1, 2 * i + 1, Complex64::new(-a - r, 0.0));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FarField {
    pub amplitude: Complex64,
    /// Largest relative deviation from a pure outgoing wave over the matching window.
    pub mismatch: f64,
}

/// Outgoing amplitude `A` of `u+ ~ A e^{i rho r} r^{-(d-1)/2}` solving `(H - r) u = -sigma3 G`.
pub fn farfield_amplitude(h: &MatrixHamiltonian, r: f64, g: &Pair<f64>, opts: FgrOptions) -> Result<FarField> {
    let grid = &h.grid;
    let e = r - h.omega;
    if !(e > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {r} inside the gap")));
    }
    let k = grid.discrete_wavenumber(e)?;
    let lu = outgoing_band(h, r, k)?.lu()?;
    let rhs = complexify(&g.sigma3().scale(-1.0));
    let u = Pair::deinterleave(&lu.solve(&rhs.interleave()));
    let n = grid.len();
    let len = ((opts.window_wavelengths * 2.0 * std::f64::consts::PI / k / grid.h()).ceil() as usize)
        .clamp(2, n / 4);
    let half = (grid.dim() as f64 - 1.0) / 2.0;
    let vals: Vec<Complex64> = (n - len..n)
        .map(|i| {
            let ri = grid.r()[i];
            u.plus[i] * ri.powf(half) * Complex64::from_polar(1.0, -k * ri)
        })
        .collect();
    let amplitude = vals.iter().sum::<Complex64>() / len as f64;
    if amplitude.norm() == 0.0 {
        return Ok(FarField {
            amplitude,
            mismatch: 0.0,
        });
    }
    let mismatch = vals
        .iter()
        .map(|v| (v - amplitude).norm() / amplitude.norm())
        .fold(0.0, f64::max);
    if mismatch > opts.matching_tol {
        return Err(Error::UnreliableAmplitude(format!(
            "outgoing-wave mismatch {mismatch:e} at threshold {r}"
        )));
    }
    Ok(FarField { amplitude, mismatch })
}

/// `|S^{d-1}| rho A_n conj(A_n')`.
pub fn farfield_gram(grid: &RadialGrid, r: f64, omega: f64, amps: &[Complex64]) -> DMatrix<Complex64> {
    let rho = (r - omega).sqrt();
    let c = sphere_area(grid.dim()) * rho;
    DMatrix::from_fn(amps.len(), amps.len(), |a, b| amps[a] * amps[b].conj() * c)
}

/// Eigenvalues of a Hermitian matrix through its real symmetric embedding.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let n = m.nrows();
    let big = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<f64> = big.symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.into_iter().step_by(2).collect()
}

/// `resolution` is the error estimate of the Gram entries; eigenvalues below it count as zero.
pub fn h7_status(min_eigenvalue: f64, trace: f64, size: usize, tau: f64, resolution: f64) -> Status {
    let resolution = resolution.max(1e-10 * trace.abs());
    if min_eigenvalue > tau * trace / size as f64 {
        Status::Pass
    } else if min_eigenvalue <= resolution {
        Status::Fail
    } else {
        Status::Indeterminate
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgrGram {
    pub group: usize,
    pub threshold: f64,
    pub members: Vec<MultiIndex>,
    pub size: usize,
    pub gamma: Vec<Vec<f64>>,
    pub absorption: AbsorptionRoute,
    pub farfield: Option<Vec<FarField>>,
    /// Relative Frobenius difference between the two routes.
    pub route_agreement: Option<f64>,
    pub hermitian_defect: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub status: Status,
}

pub fn fgr_gram(
    rp: &RefinedProfile,
    h: &MatrixHamiltonian,
    group: &ResonanceGroup,
    index: usize,
    opts: FgrOptions,
) -> Result<FgrGram> {
    let r = group.threshold;
    if !(r > h.omega) {
        return Err(Error::InvalidInput(format!("threshold {r} not beyond omega")));
    }
    let sources: Vec<Pair<f64>> = group
        .members
        .iter()
        .map(|m| {
            rp.sources
                .iter()
                .find(|s| &s.index == m)
                .map(|s| s.field.clone())
                .ok_or_else(|| Error::RecursionOrder(format!("no source for {m}")))
        })
        .collect::<Result<_>>()?;
    let absorption = absorption_gram(h, r, &sources, opts)?;
    let size = sources.len();
    let mut defect: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for x in &absorption.raw {
        for a in 0..size {
            for b in 0..size {
                defect = defect.max((x[a][b] - x[b][a]).abs());
                scale = scale.max(x[a][b].abs());
            }
        }
    }
    let hermitian_defect = if scale > 0.0 { defect / scale } else { 0.0 };
    let gamma = absorption.gamma.clone();
    let g = DMatrix::from_fn(size, size, |a, b| gamma[a][b]);
    let min_eigenvalue = g
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let trace = g.trace();
    let resolution = absorption.change * g.norm();
    let (farfield, route_agreement) = if h.grid.dim() == 2 {
        (None, None)
    } else {
        let ff: Vec<FarField> = sources
            .iter()
            .map(|s| farfield_amplitude(h, r, s, opts))
            .collect::<Result<_>>()?;
        let amps: Vec<Complex64> = ff.iter().map(|f| f.amplitude).collect();
        let gf = farfield_gram(&h.grid, r, h.omega, &amps);
        let diff: f64 = (0..size)
            .flat_map(|a| (0..size).map(move |b| (a, b)))
            .map(|(a, b)| (gf[(a, b)].re - gamma[a][b]).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = g.norm();
        (Some(ff), Some(if norm > 0.0 { diff / norm } else { diff }))
    };
    Ok(FgrGram {
        group: index,
        threshold: r,
        members: group.members.clone(),
        size,
        gamma,
        absorption,
        farfield,
        route_agreement,
        hermitian_defect,
        min_eigenvalue,
        trace,
        status: h7_status(min_eigenvalue, trace, size, opts.tau_fgr, resolution),
    })
}

/// Overall positivity verdict over all thresholds.
pub fn check_h7(grams: &[FgrGram]) -> Status {
    if grams.iter().any(|g| g.status == Status::Fail) {
        Status::Fail
    } else if grams.iter().all(|g| g.status == Status::Pass) {
        Status::Pass
    } else {
        Status::Indeterminate
    }
}
