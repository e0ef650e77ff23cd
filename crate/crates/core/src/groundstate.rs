//! Positive radial ground states of `-Lap phi + omega phi + g(phi^2) phi = 0`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::Band;
use crate::error::{Error, Result};
use crate::grid::{Parity, RadialGrid};
use crate::nonlinearity::NonlinearitySpec;
use crate::status::Status;

#[derive(Debug, Clone)]
pub struct GroundState {
    pub omega: f64,
    pub grid: Arc<RadialGrid>,
    pub phi: Vec<f64>,
    /// `d phi / d omega`, from `L+ dphi = -phi`.
    pub dphi: Vec<f64>,
    /// `||F(phi)|| / (omega ||phi||)`.
    pub residual: f64,
    pub mass: f64,
    /// `d ||phi||^2 / d omega = 2 <phi, dphi>`.
    pub vk_slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_newton: 60,
        }
    }
}

/// `-Lap u + omega u + g(u^2) u`.
pub fn residual_vector(nl: &NonlinearitySpec, omega: f64, lap: &Band<f64>, u: &[f64]) -> Vec<f64> {
    let lu = lap.matvec(u);
    u.iter()
        .zip(lu)
        .map(|(&v, l)| -l + (omega + nl.value(v * v)) * v)
        .collect()
}

/// Band matrix of `L+ = -Lap + omega + g(u^2) + 2 g'(u^2) u^2`.
pub fn linearized_plus(nl: &NonlinearitySpec, omega: f64, lap: &Band<f64>, u: &[f64]) -> Band<f64> {
    let mut j = lap.map(|v| -v);
    let d: Vec<f64> = u
        .iter()
        .map(|&v| {
            let (g, dg) = nl.value_and_slope(v * v);
            omega + g + 2.0 * dg * v * v
        })
        .collect();
    j.add_diagonal(&d);
    j
}

enum Fate {
    Overshoot,
    Undershoot,
    Undecided,
}

/// Radial ODE `u'' = -(d-1)/r u' + (omega + g(u^2)) u` integrated from the centre
/// with RK4 and sampled at the grid nodes until it leaves the monotone positive regime.
struct Shooter<'a> {
    nl: &'a NonlinearitySpec,
    omega: f64,
    grid: &'a RadialGrid,
    substeps: usize,
}

impl<'a> Shooter<'a> {
    fn rhs(&self, r: f64, u: f64, du: f64) -> (f64, f64) {
        let d = self.grid.dim() as f64;
        (du, -(d - 1.0) / r * du + (self.omega + self.nl.value(u * u)) * u)
    }

    fn run(&self, a: f64, mut record: impl FnMut(usize, f64)) -> (Fate, usize) {
        let r = self.grid.r();
        let d = self.grid.dim() as f64;
        let c = (self.omega + self.nl.value(a * a)) * a / (2.0 * d);
        let (mut u, mut du) = (a + c * r[0] * r[0], 2.0 * c * r[0]);
        record(0, u);
        let dr = self.grid.h() / self.substeps as f64;
        for i in 1..r.len() {
            let mut x = r[i - 1];
            for _ in 0..self.substeps {
                let (k1u, k1v) = self.rhs(x, u, du);
                let (k2u, k2v) = self.rhs(x + dr / 2.0, u + dr / 2.0 * k1u, du + dr / 2.0 * k1v);
                let (k3u, k3v) = self.rhs(x + dr / 2.0, u + dr / 2.0 * k2u, du + dr / 2.0 * k2v);
                let (k4u, k4v) = self.rhs(x + dr, u + dr * k3u, du + dr * k3v);
                u += dr / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
                du += dr / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
                x += dr;
            }
            if u <= 0.0 {
                return (Fate::Overshoot, i);
            }
            if du > 0.0 {
                return (Fate::Undershoot, i);
            }
            record(i, u);
        }
        (Fate::Undecided, r.len())
    }

    fn fate(&self, a: f64) -> Fate {
        self.run(a, |_, _| {}).0
    }

    /// Bisection on the central value.
    fn bracket(&self) -> Result<f64> {
        let mut hi = 1.0;
        let mut found = false;
        for _ in 0..80 {
            if let Fate::Overshoot = self.fate(hi) {
                found = true;
                break;
            }
            hi *= 2.0;
            if !hi.is_finite() {
                break;
            }
        }
        if !found {
            return Err(Error::NoGroundState(format!(
                "no overshooting central value up to {hi:e} at omega = {}",
                self.omega
            )));
        }
        let mut lo = hi / 2.0;
        let mut found_lo = false;
        for _ in 0..200 {
            match self.fate(lo) {
                Fate::Undershoot => {
                    found_lo = true;
                    break;
                }
                Fate::Overshoot => {
                    hi = lo;
                    lo /= 2.0;
                }
                Fate::Undecided => {
                    found_lo = true;
                    break;
                }
            }
        }
        if !found_lo {
            return Err(Error::NoGroundState("no undershooting central value".into()));
        }
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match self.fate(mid) {
                Fate::Overshoot => hi = mid,
                Fate::Undershoot => lo = mid,
                Fate::Undecided => return Ok(mid),
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Initial profile: shooting trajectory patched with an exponential tail.
    fn profile(&self, a: f64) -> Vec<f64> {
        let r = self.grid.r();
        let mut u = vec![0.0; r.len()];
        let (_, stop) = self.run(a, |i, v| u[i] = v);
        // cut where the trajectory starts to depart from the decaying branch
        let floor = 1e-6 * a;
        let mut last = stop.min(r.len()).max(1) - 1;
        while last > 0 && u[last] < floor {
            last -= 1;
        }
        let k = self.omega.sqrt();
        let dm = (self.grid.dim() as f64 - 1.0) / 2.0;
        for i in last + 1..r.len() {
            u[i] = u[last] * (-k * (r[i] - r[last])).exp() * (r[last] / r[i]).powf(dm);
        }
        u
    }
}

pub fn solve_ground_state(
    nl: &NonlinearitySpec,
    omega: f64,
    grid: Arc<RadialGrid>,
    init: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<GroundState> {
    if !(omega > 0.0) {
        return Err(Error::InvalidInput(format!("omega = {omega} must be positive")));
    }
    nl.validate()?;
    let lap = grid.laplacian_band(Parity::Even);
    let mut u = match init {
        Some(f) => {
            grid.check_len(f.len())?;
            f.to_vec()
        }
        None => {
            let stiff = omega + nl.value(1.0).abs();
            let substeps = ((grid.h() * stiff.sqrt() / 0.02).ceil() as usize).max(1);
            let shooter = Shooter {
                nl,
                omega,
                grid: &grid,
                substeps,
            };
            let a = shooter.bracket()?;
            shooter.profile(a)
        }
    };
    let wnorm = |v: &[f64]| grid.norm(v);
    let mut f = residual_vector(nl, omega, &lap, &u);
    let mut fnorm = wnorm(&f);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_newton {
        iterations = it;
        let scale = omega * wnorm(&u);
        if fnorm <= 1e-3 * opts.tol * scale {
            converged = true;
            break;
        }
        let j = linearized_plus(nl, omega, &lap, &u);
        let step = j.lu()?.solve(&f);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            let ft = residual_vector(nl, omega, &lap, &trial);
            let nt = wnorm(&ft);
            if nt < (1.0 - 1e-4 * alpha) * fnorm {
                u = trial;
                f = ft;
                fnorm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        let step_norm = alpha * wnorm(&step);
        if !accepted || step_norm <= 1e-15 * wnorm(&u) {
            // stagnated at round-off
            converged = fnorm <= opts.tol * omega * wnorm(&u);
            break;
        }
    }
    let residual = fnorm / (omega * wnorm(&u));
    if !converged && residual > opts.tol {
        return Err(Error::ConvergenceFailure {
            what: "ground-state Newton (try a finer grid or another omega)",
            iterations,
            residual,
        });
    }
    if residual > opts.tol {
        return Err(Error::ConvergenceFailure {
            what: "ground-state Newton",
            iterations,
            residual,
        });
    }
    let peak = u.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 || u.iter().any(|&v| v < -1e-12 * peak) {
        return Err(Error::NoGroundState("converged profile is not positive".into()));
    }
    let j = linearized_plus(nl, omega, &lap, &u);
    let rhs: Vec<f64> = u.iter().map(|v| -v).collect();
    let dphi = j.lu()?.solve(&rhs);
    let mass = grid.inner(&u, &u);
    let vk_slope = 2.0 * grid.inner(&u, &dphi);
    Ok(GroundState {
        omega,
        grid,
        phi: u,
        dphi,
        residual,
        mass,
        vk_slope,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VkPoint {
    pub omega: f64,
    pub mass: f64,
    /// Finite-difference slope of the mass along the sweep.
    pub slope: f64,
    /// `2 <phi, dphi>` at the same frequency.
    pub slope_linearized: f64,
    pub status: Status,
}

/// Second-order slopes of `mass(omega)` on a nonuniform sweep.
pub fn mass_slopes(omegas: &[f64], masses: &[f64]) -> Result<Vec<f64>> {
    let n = omegas.len();
    if n < 3 || masses.len() != n {
        return Err(Error::InvalidInput("need at least three sweep points".into()));
    }
    if omegas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("sweep must be increasing".into()));
    }
    // derivative of the quadratic through three points, evaluated at x
    let quad = |i: usize, x: f64| {
        let (x0, x1, x2) = (omegas[i], omegas[i + 1], omegas[i + 2]);
        let (y0, y1, y2) = (masses[i], masses[i + 1], masses[i + 2]);
        y0 * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
            + y1 * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
            + y2 * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
    };
    Ok((0..n)
        .map(|k| {
            let i = k.saturating_sub(1).min(n - 3);
            quad(i, omegas[k])
        })
        .collect())
}

pub fn vk_status(slope: f64, tau: f64) -> Status {
    Status::from_bool(slope > tau)
}

/// Ground states across `omegas` (solved in parallel) and the resulting mass slopes.
pub fn vk_check(
    nl: &NonlinearitySpec,
    omegas: &[f64],
    grid: Arc<RadialGrid>,
    opts: SolverOptions,
    tau: f64,
) -> Result<Vec<VkPoint>> {
    let states = omegas
        .par_iter()
        .map(|&w| solve_ground_state(nl, w, grid.clone(), None, opts))
        .collect::<Result<Vec<_>>>()?;
    let masses: Vec<f64> = states.iter().map(|s| s.mass).collect();
    let slopes = mass_slopes(omegas, &masses)?;
    Ok(states
        .iter()
        .zip(slopes)
        .map(|(s, slope)| VkPoint {
            omega: s.omega,
            mass: s.mass,
            slope,
            slope_linearized: s.vk_slope,
            status: vk_status(slope, tau),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(omega: f64, extent: f64, h: f64) -> GroundState {
        let grid = Arc::new(RadialGrid::with(1, extent, h, 4).unwrap());
        solve_ground_state(&NonlinearitySpec::cubic(), omega, grid, None, SolverOptions::default())
            .unwrap()
    }

    #[test]
    fn sech_soliton() {
        let gs = cubic(1.0, 30.0, 0.01);
        let err = gs
            .grid
            .r()
            .iter()
            .zip(&gs.phi)
            .map(|(&x, p)| (p - 2f64.sqrt() / x.cosh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        assert!((gs.mass - 4.0).abs() < 1e-8);
        assert!((gs.vk_slope - 2.0).abs() < 1e-6);
        assert!(gs.residual < 1e-10);
    }

    #[test]
    fn warm_start_is_a_fixed_point() {
        let gs = cubic(0.7, 20.0, 0.05);
        let again = solve_ground_state(
            &NonlinearitySpec::cubic(),
            0.7,
            gs.grid.clone(),
            Some(&gs.phi),
            SolverOptions::default(),
        )
        .unwrap();
        let diff = gs
            .phi
            .iter()
            .zip(&again.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-13);
        assert!(again.residual <= gs.residual * 1.01 + 1e-15);
    }

    #[test]
    fn dphi_matches_frequency_difference() {
        let d = 1e-4;
        let grid = Arc::new(RadialGrid::with(3, 25.0, 0.05, 4).unwrap());
        let nl = NonlinearitySpec::saturated_quintic(1.0);
        let solve = |w: f64| {
            solve_ground_state(&nl, w, grid.clone(), None, SolverOptions::default()).unwrap()
        };
        let (lo, mid, hi) = (solve(1.0 - d), solve(1.0), solve(1.0 + d));
        let err = (0..grid.len())
            .map(|i| ((hi.phi[i] - lo.phi[i]) / (2.0 * d) - mid.dphi[i]).abs())
            .fold(0.0, f64::max);
        let scale = mid.dphi.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-6 * scale, "{err}");
    }

    #[test]
    fn virial_pairing() {
        // <r phi, phi'> = -(d/2) ||phi||^2
        for (dim, nl) in [
            (1, NonlinearitySpec::cubic()),
            (3, NonlinearitySpec::saturated_quintic(1.0)),
        ] {
            let grid = Arc::new(RadialGrid::with(dim, 25.0, 0.02, 4).unwrap());
            let gs = solve_ground_state(&nl, 1.0, grid.clone(), None, SolverOptions::default())
                .unwrap();
            let dp = grid.derivative_even(&gs.phi);
            let rphi: Vec<f64> = grid.r().iter().zip(&gs.phi).map(|(r, p)| r * p).collect();
            let lhs = grid.inner(&rphi, &dp);
            let want = -(dim as f64) / 2.0 * gs.mass;
            // fourth-order derivative error dominates
            assert!((lhs - want).abs() < 1e-6 * want.abs(), "d={dim}: {lhs} vs {want}");
        }
    }

    #[test]
    fn positive_monotone_tail() {
        let gs = cubic(2.0, 15.0, 0.02);
        assert!(gs.phi.iter().all(|&v| v > 0.0));
        let r = gs.grid.r();
        let (i, j) = (r.len() / 3, r.len() / 2);
        let slope = (gs.phi[j].ln() - gs.phi[i].ln()) / (r[j] - r[i]);
        assert!((slope + 2f64.sqrt()).abs() < 1e-3, "{slope}");
    }

    #[test]
    fn vk_slope_sech_family() {
        let grid = Arc::new(RadialGrid::with(1, 30.0, 0.02, 4).unwrap());
        let err = |d: f64| {
            let pts = vk_check(
                &NonlinearitySpec::cubic(),
                &[1.0 - d, 1.0, 1.0 + d],
                grid.clone(),
                SolverOptions::default(),
                1e-8,
            )
            .unwrap();
            assert_eq!(pts[1].status, Status::Pass);
            (pts[1].slope - 2.0).abs()
        };
        let (e1, e2) = (err(0.2), err(0.1));
        assert!(e1 < 2e-2);
        let rate = (e1 / e2).log2();
        assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
    }

    #[test]
    fn constant_mass_fails_vk() {
        let slopes = mass_slopes(&[0.9, 1.0, 1.1], &[3.0, 3.0, 3.0]).unwrap();
        assert!(slopes.iter().all(|&s| s.abs() < 1e-12));
        assert_eq!(vk_status(slopes[1], 1e-8), Status::Fail);
        assert!(mass_slopes(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn defocusing_has_no_ground_state() {
        let grid = Arc::new(RadialGrid::with(1, 10.0, 0.1, 4).unwrap());
        let r = solve_ground_state(
            &NonlinearitySpec::polynomial(vec![1.0]),
            1.0,
            grid,
            None,
            SolverOptions::default(),
        );
        assert!(matches!(r, Err(Error::NoGroundState(_))));
    }
}
