//! Radial NLS time evolution, modulation decomposition and damping diagnostics.
//!
//! The field is evolved in the frame rotating at `frame`: `v = e^{-i frame t} u` solves
//! `i v_t = -Lap v + frame v + g(|v|^2) v`, so a soliton at `omega = frame` is stationary.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::banded::{Band, BandLu};
use crate::error::{Error, Result};
use crate::grid::{Parity, RadialGrid};
use crate::nonlinearity::NonlinearitySpec;
use crate::profile::RefinedProfile;
use crate::resonance::MultiIndex;
use crate::status::Status;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sponge {
    /// Radius where damping starts.
    pub onset: f64,
    /// Damping rate reached at the outer edge.
    pub strength: f64,
}

impl Sponge {
    /// Quadratic ramp over the outer fifth of the domain.
    pub fn outer_fifth(extent: f64, strength: f64) -> Self {
        Self {
            onset: 0.8 * extent,
            strength,
        }
    }

    pub fn rate(&self, r: f64, extent: f64) -> f64 {
        if r <= self.onset {
            0.0
        } else {
            let x = (r - self.onset) / (extent - self.onset);
            self.strength * x * x
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Arc<RadialGrid>,
    pub nl: NonlinearitySpec,
    pub dt: f64,
    pub horizon: f64,
    pub sponge: Option<Sponge>,
    /// Record every `stride` steps.
    pub stride: usize,
    /// Rotation frequency of the evolution frame.
    pub frame: f64,
    pub max_inner: usize,
    pub inner_tol: f64,
    /// Exponent of the local weight `<r>^{-2 local_weight}` in the radiation norm.
    pub local_weight: f64,
}

impl SimConfig {
    pub fn new(grid: Arc<RadialGrid>, nl: NonlinearitySpec, dt: f64, horizon: f64) -> Self {
        Self {
            grid,
            nl,
            dt,
            horizon,
            sponge: None,
            stride: 1,
            frame: 0.0,
            max_inner: 8,
            inner_tol: 1e-12,
            local_weight: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.dt > 0.0) || !(self.horizon >= 0.0) || self.stride == 0 {
            return bad(format!("dt {} horizon {} stride {}", self.dt, self.horizon, self.stride));
        }
        if let Some(s) = self.sponge {
            if !(s.onset < self.grid.extent()) || !(s.strength >= 0.0) {
                return bad(format!("sponge onset {} strength {}", s.onset, s.strength));
            }
        }
        // CN is unconditionally stable; the bound keeps the fixed point contractive
        let h = self.grid.h();
        let spectral = 4.0 / (h * h) + self.frame.abs();
        if self.dt * spectral.sqrt() > 10.0 {
            return bad(format!("dt {} too large for grid spacing {h}", self.dt));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    /// Field in the rotating frame.
    pub v: Vec<Complex64>,
    pub q0: f64,
    pub energy: f64,
}

impl SimState {
    /// Lab-frame field `e^{i frame t} v`.
    pub fn lab_field(&self, frame: f64) -> Vec<Complex64> {
        let p = Complex64::from_polar(1.0, frame * self.t);
        self.v.iter().map(|x| x * p).collect()
    }
}

/// Crank–Nicolson propagator with the energy-conserving average of the nonlinearity.
///
/// The implicit step `F(v+) = 0` is resolved by a chord iteration whose real Jacobian is
/// frozen at a recent state and refactored when convergence slows down.
pub struct Integrator {
    cfg: SimConfig,
    lap: Band<f64>,
    /// `1 + i dt/2 A` and `1 - i dt/2 A`, `A = -Lap + frame`.
    lhs: Band<Complex64>,
    rhs: Band<Complex64>,
    chord: Option<BandLu<f64>>,
    damping: Vec<f64>,
    history: Vec<Vec<Complex64>>,
    last_iterations: usize,
}

impl Integrator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let lap = cfg.grid.laplacian_band(Parity::Even);
        let half = 0.5 * cfg.dt;
        let n = cfg.grid.len();
        let mut lhs = lap.map(|x| Complex64::new(0.0, -half * x));
        let mut rhs = lap.map(|x| Complex64::new(0.0, half * x));
        lhs.add_diagonal(&vec![Complex64::new(1.0, half * cfg.frame); n]);
        rhs.add_diagonal(&vec![Complex64::new(1.0, -half * cfg.frame); n]);
        let damping = cfg
            .grid
            .r()
            .iter()
            .map(|&r| match cfg.sponge {
                Some(s) => (-cfg.dt * s.rate(r, cfg.grid.extent())).exp(),
                None => 1.0,
            })
            .collect();
        Ok(Self {
            lhs,
            rhs,
            lap,
            chord: None,
            damping,
            history: Vec::new(),
            last_iterations: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Inner iterations used by the last step.
    pub fn last_iterations(&self) -> usize {
        self.last_iterations
    }

    pub fn state(&self, t: f64, v: Vec<Complex64>) -> SimState {
        SimState {
            t,
            q0: self.mass(&v),
            energy: self.energy(&v),
            v,
        }
    }

    /// `Q0 = ||v||^2 / 2`.
    pub fn mass(&self, v: &[Complex64]) -> f64 {
        0.5 * self.cfg.grid.inner_c(v, v)
    }

    /// `E = <-Lap v, v>/2 + int G(|v|^2)/2` (lab-frame energy).
    pub fn energy(&self, v: &[Complex64]) -> f64 {
        let g = &self.cfg.grid;
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v.iter().map(|z| z.im).collect();
        let (lr, li) = (self.lap.matvec(&re), self.lap.matvec(&im));
        let kinetic = -(g.inner(&lr, &re) + g.inner(&li, &im));
        let potential: f64 = g
            .weights()
            .iter()
            .zip(v)
            .map(|(w, z)| w * self.cfg.nl.antiderivative(z.norm_sqr()))
            .sum();
        0.5 * (kinetic + potential)
    }

    /// Forget the predictor history and the frozen Jacobian.
    pub fn reset(&mut self) {
        self.history.clear();
        self.chord = None;
    }

    /// Real Jacobian of `F` at `v+ = v = v0`, unknowns interleaved as `(Re, Im)` per node.
    fn factor_chord(&mut self, v0: &[Complex64]) -> Result<()> {
        let n = v0.len();
        let p = self.lap.kl();
        let w = 2 * p + 1;
        let c = 0.5 * self.cfg.dt;
        let mut j = Band::zeros(2 * n, w, w);
        for k in 0..n {
            let (g, dg) = self.cfg.nl.value_and_slope(v0[k].norm_sqr());
            let (a, b) = (v0[k].re, v0[k].im);
            j.add(2 * k, 2 * k, 1.0);
            j.add(2 * k + 1, 2 * k + 1, 1.0);
            for m in self.lap.row_range(k) {
                let mut t = -self.lap.get(k, m);
                if m == k {
                    t += self.cfg.frame + g;
                }
                // Re row gets -c Im(M d), Im row gets +c Re(M d)
                j.add(2 * k, 2 * m + 1, -c * t);
                j.add(2 * k + 1, 2 * m, c * t);
            }
            let s = 2.0 * dg;
            j.add(2 * k, 2 * k, -c * s * a * b);
            j.add(2 * k, 2 * k + 1, -c * s * b * b);
            j.add(2 * k + 1, 2 * k, c * s * a * a);
            j.add(2 * k + 1, 2 * k + 1, c * s * a * b);
        }
        self.chord = Some(j.lu()?);
        Ok(())
    }

    fn predict(&self, v: &[Complex64]) -> Vec<Complex64> {
        match self.history.as_slice() {
            [.., a, b] => v.iter().zip(a).zip(b).map(|((x, a), b)| 3.0 * x - 3.0 * b + a).collect(),
            [b] => v.iter().zip(b).map(|(x, b)| 2.0 * x - b).collect(),
            [] => v.to_vec(),
        }
    }

    fn step_field(&mut self, t: f64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let dt = self.cfg.dt;
        if self.chord.is_none() || self.last_iterations > 4 {
            self.factor_chord(v)?;
        }
        let base = self.rhs.matvec(v);
        let mut next = self.predict(v);
        let scale = v.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let mut change = f64::INFINITY;
        let mut iterations = 0;
        while iterations < self.cfg.max_inner {
            iterations += 1;
            let lv = self.lhs.matvec(&next);
            let mut x: Vec<f64> = Vec::with_capacity(2 * v.len());
            for k in 0..v.len() {
                let (a, c) = (v[k], next[k]);
                let mean = self.cfg.nl.mean_between(a.norm_sqr(), c.norm_sqr());
                let f = lv[k] - base[k] + I * dt * mean * 0.5 * (a + c);
                x.push(-f.re);
                x.push(-f.im);
            }
            self.chord.as_ref().expect("factored above").solve_in_place(&mut x);
            let previous = change;
            change = 0.0;
            for (k, z) in next.iter_mut().enumerate() {
                let d = Complex64::new(x[2 * k], x[2 * k + 1]);
                *z += d;
                change = change.max(d.norm());
            }
            // remaining error of a contraction with ratio q is at most change q / (1 - q)
            let q = change / previous;
            if change <= self.cfg.inner_tol * scale
                || (previous.is_finite() && q < 0.5 && change * q / (1.0 - q) <= self.cfg.inner_tol * scale)
            {
                change = change.min(change * q / (1.0 - q));
                break;
            }
        }
        self.last_iterations = iterations;
        if !(change <= self.cfg.inner_tol * scale) {
            self.chord = None;
            return Err(Error::StepFailure {
                t,
                reason: format!("nonlinear update {change:e} after {iterations} iterations; reduce dt"),
            });
        }
        if self.cfg.sponge.is_some() {
            for (x, d) in next.iter_mut().zip(&self.damping) {
                *x *= d;
            }
        }
        if self.history.len() == 2 {
            self.history.remove(0);
        }
        self.history.push(v.to_vec());
        Ok(next)
    }

    pub fn step(&mut self, state: &SimState) -> Result<SimState> {
        let next = self.step_field(state.t, &state.v)?;
        Ok(self.state(state.t + self.cfg.dt, next))
    }

    /// Advance `steps` times.
    pub fn advance(&mut self, state: SimState, steps: usize) -> Result<SimState> {
        let mut v = state.v;
        for k in 0..steps {
            v = self.step_field(state.t + k as f64 * self.cfg.dt, &v)?;
        }
        Ok(self.state(state.t + steps as f64 * self.cfg.dt, v))
    }
}

/// Radial modulation parameters: gauge `theta`, `varpi = omega - omega*`, mode amplitudes `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub theta: f64,
    pub varpi: f64,
    pub z: Vec<Complex64>,
}

impl Modulation {
    pub fn zero(modes: usize) -> Self {
        Self {
            theta: 0.0,
            varpi: 0.0,
            z: vec![Complex64::new(0.0, 0.0); modes],
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut x = vec![self.theta, self.varpi];
        for z in &self.z {
            x.push(z.re);
            x.push(z.im);
        }
        x
    }

    fn from_vec(x: &[f64]) -> Self {
        Self {
            theta: x[0],
            varpi: x[1],
            z: x[2..].chunks(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct ModulationResult {
    pub params: Modulation,
    pub eta: Vec<Complex64>,
    pub iterations: usize,
    /// Largest `|<i eta, T_a>| / ||T_a||` over the tangent directions.
    pub defect: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ModulationOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Largest `||u - e^{i theta} phi|| / ||phi||` accepted before iterating.
    pub basin: f64,
    /// Largest `|varpi| / omega*` accepted at convergence.
    pub varpi_max: f64,
}

impl Default for ModulationOptions {
    fn default() -> Self {
        Self {
            max_iter: 25,
            tol: 1e-12,
            basin: 0.2,
            varpi_max: 0.1,
        }
    }
}

/// `e^{i theta} phi[omega* + varpi, z]`.
pub fn synthesize(rp: &RefinedProfile, p: &Modulation) -> Result<Vec<Complex64>> {
    let st = rp.assemble(rp.omega + p.varpi, &p.z)?;
    let ph = Complex64::from_polar(1.0, p.theta);
    Ok(st.field.iter().map(|v| v * ph).collect())
}

/// Newton iteration on `<i(e^{-i theta} u - phi[omega, z]), T_a> = 0`.
pub fn decompose(
    u: &[Complex64],
    rp: &RefinedProfile,
    guess: &Modulation,
    opts: ModulationOptions,
) -> Result<ModulationResult> {
    let grid = &rp.grid;
    grid.check_len(u.len())?;
    if guess.z.len() != rp.modes_count() {
        return Err(Error::InvalidInput(format!(
            "{} amplitudes for {} modes",
            guess.z.len(),
            rp.modes_count()
        )));
    }
    // the gauge is an exact symmetry, so the guessed phase is aligned first
    let start = synthesize(rp, guess)?;
    let shift = grid.hermitian(u, &start).arg();
    let rot = Complex64::from_polar(1.0, shift);
    let diff: Vec<Complex64> = u.iter().zip(&start).map(|(a, b)| a - b * rot).collect();
    let rel = grid.norm_c(&diff) / grid.norm_c(&start);
    if !(rel <= opts.basin) {
        return Err(Error::OutsideBasin(format!(
            "distance {rel:.3e} from the guessed profile"
        )));
    }
    let mut x = guess.to_vec();
    x[0] += shift;
    let dim = x.len();
    // conditions <i(e^{-i theta} u - phi), T_a> at parameters x
    let conditions = |x: &[f64]| -> Result<DVector<f64>> {
        let p = Modulation::from_vec(x);
        let st = rp.assemble(rp.omega + p.varpi, &p.z)?;
        let back = Complex64::from_polar(1.0, -p.theta);
        let ieta: Vec<Complex64> = u.iter().zip(&st.field).map(|(a, f)| I * (a * back - f)).collect();
        Ok(DVector::from_iterator(
            dim,
            RefinedProfile::tangents(&st).iter().map(|t| grid.inner_c(&ieta, t)),
        ))
    };
    let jacobian = |x: &[f64]| -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(dim, dim);
        for b in 0..dim {
            let h = 1e-6 * (1.0 + x[b].abs().min(1.0));
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[b] += h;
            xm[b] -= h;
            let col = (conditions(&xp)? - conditions(&xm)?) / (2.0 * h);
            jac.set_column(b, &col);
        }
        Ok(jac)
    };
    // chord Newton: the Jacobian is refreshed only when the steps stop shrinking
    let mut residual = f64::NAN;
    let mut jac = jacobian(&x)?.lu();
    let mut last_size = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let f = conditions(&x)?;
        residual = f.amax();
        let step = jac
            .solve(&(-&f))
            .ok_or_else(|| Error::SingularSystem("modulation Jacobian".into()))?;
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi += s;
        }
        let size = step.amax();
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        if size > 0.25 * last_size {
            jac = jacobian(&x)?.lu();
        }
        last_size = size;
        if size <= opts.tol {
            let params = Modulation::from_vec(&x);
            let st = rp.assemble(rp.omega + params.varpi, &params.z)?;
            if !st.within_validity || params.varpi.abs() > opts.varpi_max * rp.omega {
                return Err(Error::OutsideBasin(format!(
                    "converged outside the profile's validity region (|varpi| = {:.3e})",
                    params.varpi.abs()
                )));
            }
            let ph = Complex64::from_polar(1.0, params.theta);
            let eta: Vec<Complex64> = u.iter().zip(&st.field).map(|(a, f)| a - f * ph).collect();
            let ieta: Vec<Complex64> = eta.iter().map(|v| I * v).collect();
            let defect = RefinedProfile::tangents(&st)
                .iter()
                .map(|t| {
                    let t: Vec<Complex64> = t.iter().map(|v| v * ph).collect();
                    grid.inner_c(&ieta, &t).abs() / grid.norm_c(&t)
                })
                .fold(0.0, f64::max);
            return Ok(ModulationResult {
                params,
                eta,
                iterations: it,
                defect,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        what: "modulation",
        iterations: opts.max_iter,
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub t: f64,
    pub theta: f64,
    pub varpi: f64,
    pub z: Vec<Complex64>,
    /// `|z^m|` for `m` in the minimal resonant set.
    pub monomials: Vec<f64>,
    pub eta_local: f64,
    pub q0: f64,
    pub energy: f64,
    pub iterations: usize,
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeSeries {
    pub r_min: Vec<MultiIndex>,
    pub samples: Vec<Sample>,
    /// Running `sum_m int_0^t |z^m|^2`.
    pub s_integral: Vec<f64>,
    pub q0_drift: f64,
    pub energy_drift: f64,
}

fn monomial_abs(z: &[Complex64], m: &MultiIndex) -> f64 {
    m.plus
        .iter()
        .zip(&m.minus)
        .zip(z)
        .map(|((&a, &b), v)| v.norm().powi((a + b) as i32))
        .product()
}

impl TimeSeries {
    /// Builds a series and its running `S(t)` by the trapezoidal rule.
    pub fn from_samples(r_min: Vec<MultiIndex>, samples: Vec<Sample>, q0_drift: f64, energy_drift: f64) -> Self {
        let mut s_integral = Vec::with_capacity(samples.len());
        if !samples.is_empty() {
            s_integral.push(0.0);
        }
        let f = |s: &Sample| s.monomials.iter().map(|x| x * x).sum::<f64>();
        for w in samples.windows(2) {
            let last = *s_integral.last().expect("seeded");
            s_integral.push(last + 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])));
        }
        Self {
            r_min,
            samples,
            s_integral,
            q0_drift,
            energy_drift,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// `t, theta, varpi, Re z_j..., Im z_j..., |z^m|..., eta_local, Q0, E`.
    pub fn to_csv(&self) -> String {
        let modes = self.samples.first().map_or(0, |s| s.z.len());
        let mut head = vec!["t".to_string(), "theta".into(), "varpi".into()];
        head.extend((1..=modes).map(|j| format!("re_z{j}")));
        head.extend((1..=modes).map(|j| format!("im_z{j}")));
        head.extend(self.r_min.iter().map(|m| format!("abs_z^{m}")));
        head.extend(["eta_local".into(), "Q0".into(), "E".into()]);
        let mut out = head.join(",");
        out.push('\n');
        for s in &self.samples {
            let mut row = vec![s.t, s.theta, s.varpi];
            row.extend(s.z.iter().map(|v| v.re));
            row.extend(s.z.iter().map(|v| v.im));
            row.extend(&s.monomials);
            row.extend([s.eta_local, s.q0, s.energy]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn local_norm(grid: &RadialGrid, f: &[Complex64], weight: f64) -> f64 {
    grid.weights()
        .iter()
        .zip(grid.r())
        .zip(f)
        .map(|((w, r), v)| w * v.norm_sqr() * (1.0 + r * r).powf(-weight))
        .sum::<f64>()
        .sqrt()
}

/// Evolves `u0` (lab frame at `t = 0`) and decomposes every `stride`-th state.
pub fn run(cfg: &SimConfig, rp: &RefinedProfile, u0: Vec<Complex64>) -> Result<TimeSeries> {
    if !rp.grid.same_as(&cfg.grid) {
        return Err(Error::IncompatibleGrids);
    }
    let mut cfg = cfg.clone();
    cfg.frame = rp.omega;
    let mut integ = Integrator::new(cfg.clone())?;
    let mut state = integ.state(0.0, u0);
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let opts = ModulationOptions::default();
    let r_min: Vec<MultiIndex> = rp.sources.iter().map(|s| s.index.clone()).collect();
    let mut guess = Modulation::zero(rp.modes_count());
    let mut samples = Vec::with_capacity(steps / cfg.stride + 1);
    let (q_start, e_start) = (state.q0, state.energy);
    let mut k = 0;
    loop {
        let m = decompose(&state.v, rp, &guess, opts).map_err(|e| Error::Stage {
            stage: format!("modulation at t = {:.3}", state.t),
            source: Box::new(e),
        })?;
        samples.push(Sample {
            t: state.t,
            theta: m.params.theta,
            varpi: m.params.varpi,
            monomials: r_min.iter().map(|idx| monomial_abs(&m.params.z, idx)).collect(),
            z: m.params.z.clone(),
            eta_local: local_norm(&cfg.grid, &m.eta, cfg.local_weight),
            q0: state.q0,
            energy: state.energy,
            iterations: m.iterations,
            defect: m.defect,
        });
        guess = m.params;
        if k >= steps {
            break;
        }
        let n = cfg.stride.min(steps - k);
        state = integ.advance(state, n)?;
        k += n;
    }
    let q0_drift = (state.q0 - q_start).abs() / q_start.abs().max(f64::MIN_POSITIVE);
    let energy_drift = (state.energy - e_start).abs() / e_start.abs().max(f64::MIN_POSITIVE);
    Ok(TimeSeries::from_samples(r_min, samples, q0_drift, energy_drift))
}

#[derive(Debug, Clone, Copy)]
pub struct DecayOptions {
    /// Fraction of the horizon discarded as transient.
    pub transient: f64,
    pub windows: usize,
    /// Allowed relative rise of the envelope above its running minimum.
    pub tolerance: f64,
    pub floor: f64,
    pub max_share: f64,
    pub max_varpi_oscillation: f64,
    /// Required envelope reduction over the run.
    pub min_drop: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            transient: 0.1,
            windows: 20,
            tolerance: 0.05,
            floor: 1e-12,
            max_share: 0.25,
            max_varpi_oscillation: 0.1,
            min_drop: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// Per mode, the largest `|z_j|` in each window after the transient.
    pub envelope: Vec<Vec<f64>>,
    /// Largest relative rise of an envelope above its running minimum.
    pub monotonicity_defect: f64,
    /// Largest `|z_j|` in the first window of the run over the last envelope value,
    /// smallest over the modes.
    pub drop: f64,
    /// `sup_windows |z_j' + i lambda_j z_j| / max(|z_j|^2, floor)`.
    pub phase_consistency: f64,
    pub s_total: f64,
    pub last_quarter_share: f64,
    /// Spread of the windowed `varpi` means over the final quarter relative to the
    /// excursion of those means and the initial value.
    pub varpi_oscillation: f64,
    pub decaying: Status,
    pub saturating: Status,
    pub varpi_converging: Status,
}

fn value_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&s| s < t);
    if k == 0 {
        values[0]
    } else if k >= times.len() {
        values[values.len() - 1]
    } else {
        let a = (t - times[k - 1]) / (times[k] - times[k - 1]);
        values[k - 1] + a * (values[k] - values[k - 1])
    }
}

fn hann_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.enumerate() {
        let w = (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin().powi(2);
        num += w * v;
        den += w;
    }
    if den > 0.0 { num / den } else { 0.0 }
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Damping signatures of a recorded run.
pub fn fgr_decay_report(ts: &TimeSeries, lambdas: &[f64], opts: DecayOptions) -> Result<DecayReport> {
    let s = &ts.samples;
    if s.len() < 4 * opts.windows.max(1) {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} windows",
            s.len(),
            opts.windows
        )));
    }
    let times = ts.times();
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let start = s.partition_point(|x| x.t < t0 + opts.transient * (t1 - t0));
    let body = &s[start..];
    let per = body.len() / opts.windows;
    let chunks: Vec<&[Sample]> = body.chunks(per).filter(|c| c.len() == per).collect();
    let modes = lambdas.len();
    let mut envelope = vec![Vec::with_capacity(chunks.len()); modes];
    let mut phase_consistency: f64 = 0.0;
    for c in &chunks {
        for j in 0..modes {
            envelope[j].push(c.iter().map(|x| x.z[j].norm()).fold(0.0, f64::max));
            // |z' + i lambda z| = |w'| for the demodulated w = z e^{i lambda t}
            let demod = |x: &Sample| x.z[j] * Complex64::from_polar(1.0, lambdas[j] * x.t);
            let mut num = 0.0;
            let mut den = 0.0;
            for w in c.windows(3) {
                num += ((demod(&w[2]) - demod(&w[0])) / (w[2].t - w[0].t)).norm();
                den += w[1].z[j].norm_sqr();
            }
            let k = (c.len().saturating_sub(2)).max(1) as f64;
            phase_consistency = phase_consistency.max((num / k) / (den / k).max(opts.floor));
        }
    }
    // the drop is measured from the envelope of the first window of the full run
    let lead = &s[..per.min(s.len())];
    let mut defect: f64 = 0.0;
    let mut drop = f64::INFINITY;
    for (j, env) in envelope.iter().enumerate() {
        let mut low = f64::INFINITY;
        for &e in env {
            if low.is_finite() && low > 0.0 {
                defect = defect.max(e / low - 1.0);
            }
            low = low.min(e);
        }
        let first = lead.iter().map(|x| x.z[j].norm()).fold(0.0, f64::max);
        let last = env[env.len() - 1];
        drop = drop.min(if first > 0.0 { first / last.max(opts.floor) } else { 1.0 });
    }
    let quiet = envelope.iter().flatten().all(|&e| e == 0.0);
    if modes == 0 {
        drop = 1.0;
    }
    let s_total = *ts.s_integral.last().unwrap_or(&0.0);
    let s_quarter = value_at(&times, &ts.s_integral, t0 + 0.75 * (t1 - t0));
    let last_quarter_share = if s_total > 0.0 { (s_total - s_quarter) / s_total } else { 0.0 };
    // fast oscillations of varpi are removed by Hann-weighted window means
    let full: Vec<&[Sample]> = s.chunks(per).filter(|c| c.len() == per).collect();
    let means: Vec<(f64, f64)> = full
        .iter()
        .map(|c| (c[0].t, hann_mean(c.iter().map(|x| x.varpi))))
        .collect();
    let mut all: Vec<f64> = means.iter().map(|m| m.1).collect();
    all.push(s[0].varpi);
    let tail: Vec<f64> = means
        .iter()
        .filter(|m| m.0 >= t0 + 0.75 * (t1 - t0))
        .map(|m| m.1)
        .collect();
    let total = spread(&all);
    let varpi_oscillation = if total > 0.0 { spread(&tail) / total } else { 0.0 };
    Ok(DecayReport {
        envelope,
        monotonicity_defect: defect,
        drop,
        phase_consistency,
        s_total,
        last_quarter_share,
        varpi_oscillation,
        decaying: Status::from_bool(quiet || (defect <= opts.tolerance && drop >= opts.min_drop)),
        saturating: Status::from_bool(last_quarter_share < opts.max_share),
        varpi_converging: Status::from_bool(varpi_oscillation <= opts.max_varpi_oscillation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::{solve_ground_state, SolverOptions};
    use crate::linearization::{build_operators, discrete_spectrum, SpectralOptions};
    use crate::profile::{build_refined_profile, ProfileOptions};
    use crate::resonance::classify;
    use std::sync::OnceLock;

    fn reference() -> &'static RefinedProfile {
        static RP: OnceLock<RefinedProfile> = OnceLock::new();
        RP.get_or_init(|| {
            let nl = NonlinearitySpec::saturated_quintic(0.2);
            let grid = Arc::new(RadialGrid::with(1, 40.0, 0.1, 4).unwrap());
            let gs = solve_ground_state(&nl, 1.0, grid, None, SolverOptions::default()).unwrap();
            let ops = build_operators(&gs, &nl);
            let (rep, modes) = discrete_spectrum(&gs, &ops, SpectralOptions::default()).unwrap();
            let rs = classify(&rep.lambda, 1.0, 1e-9).unwrap();
            build_refined_profile(&gs, &ops, &modes, &rs, &nl, ProfileOptions::default()).unwrap()
        })
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn free_gaussian_spreads_as_closed_form() {
        let grid = Arc::new(RadialGrid::with(1, 40.0, 0.05, 4).unwrap());
        let exact = |t: f64| -> Vec<Complex64> {
            let a = Complex64::new(1.0, 2.0 * t);
            grid.r().iter().map(|&x| (-x * x / (2.0 * a)).exp() / a.sqrt()).collect()
        };
        let cfg = SimConfig::new(grid.clone(), NonlinearitySpec::zero(), 0.005, 1.0);
        let mut integ = Integrator::new(cfg).unwrap();
        let mut st = integ.state(0.0, exact(0.0));
        for _ in 0..4 {
            st = integ.advance(st, 50).unwrap();
            let err = max_diff(&st.v, &exact(st.t));
            assert!(err < 1e-3, "t = {} error {err:e}", st.t);
        }
        assert!((st.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_conserved_per_step() {
        let rp = reference();
        let mut u = synthesize(rp, &Modulation { theta: 0.0, varpi: 0.0, z: vec![Complex64::new(0.05, 0.02)] }).unwrap();
        // a non-stationary bump on top
        for (x, r) in u.iter_mut().zip(rp.grid.r()) {
            *x += 0.1 * (-(r - 3.0).powi(2)).exp();
        }
        let mut cfg = SimConfig::new(rp.grid.clone(), rp.nl.clone(), 0.05, 10.0);
        cfg.frame = rp.omega;
        let mut integ = Integrator::new(cfg).unwrap();
        let mut st = integ.state(0.0, u);
        let q_start = st.q0;
        for _ in 0..200 {
            let next = integ.step(&st).unwrap();
            assert!((next.q0 - st.q0).abs() / q_start <= 1e-10, "{:e}", (next.q0 - st.q0).abs() / q_start);
            st = next;
        }
        assert!((st.q0 - q_start).abs() / q_start <= 1e-8);
    }

    #[test]
    fn soliton_modulus_is_constant() {
        let rp = reference();
        let phi: Vec<Complex64> = synthesize(rp, &Modulation::zero(1)).unwrap();
        let cfg = SimConfig::new(rp.grid.clone(), rp.nl.clone(), 0.05, 10.0);
        let mut integ = Integrator::new(cfg).unwrap();
        let mut st = integ.state(0.0, phi.clone());
        for _ in 0..20 {
            st = integ.advance(st, 10).unwrap();
            let dev = st.v.iter().zip(&phi).map(|(a, b)| (a.norm() - b.norm()).abs()).fold(0.0, f64::max);
            assert!(dev <= 1e-8, "t = {} deviation {dev:e}", st.t);
        }
        // the phase advances at omega
        let ph = (st.v[0] / phi[0]).arg();
        let expected = (rp.omega * st.t).rem_euclid(2.0 * std::f64::consts::PI);
        let expected = if expected > std::f64::consts::PI { expected - 2.0 * std::f64::consts::PI } else { expected };
        assert!((ph - expected).abs() < 1e-2, "{ph} vs {expected}");
    }

    #[test]
    fn gauge_covariance() {
        let rp = reference();
        let u0 = synthesize(rp, &Modulation { theta: 0.0, varpi: 0.0, z: vec![Complex64::new(0.05, 0.0)] }).unwrap();
        let rot = Complex64::from_polar(1.0, 0.7);
        let u1: Vec<Complex64> = u0.iter().map(|x| x * rot).collect();
        let cfg = SimConfig::new(rp.grid.clone(), rp.nl.clone(), 0.05, 2.0);
        let mut a = Integrator::new(cfg.clone()).unwrap();
        let mut b = Integrator::new(cfg).unwrap();
        let sa = a.advance(a.state(0.0, u0), 40).unwrap();
        let sb = b.advance(b.state(0.0, u1), 40).unwrap();
        let rotated: Vec<Complex64> = sa.v.iter().map(|x| x * rot).collect();
        assert!(max_diff(&rotated, &sb.v) < 1e-10, "{:e}", max_diff(&rotated, &sb.v));
    }

    #[test]
    fn sponge_absorbs_outgoing_waves() {
        let grid = Arc::new(RadialGrid::with(1, 40.0, 0.1, 4).unwrap());
        let u0: Vec<Complex64> = grid
            .r()
            .iter()
            .map(|&x| Complex64::from_polar((-(x - 10.0).powi(2) / 16.0).exp(), 2.0 * x))
            .collect();
        let mut cfg = SimConfig::new(grid.clone(), NonlinearitySpec::zero(), 0.05, 60.0);
        cfg.sponge = Some(Sponge::outer_fifth(grid.extent(), 1.0));
        let mut integ = Integrator::new(cfg).unwrap();
        let st = integ.state(0.0, u0);
        let q = st.q0;
        // the packet (group velocity 4) crosses the ramp twice before t = 60
        let end = integ.advance(st, 1200).unwrap();
        assert!(end.q0 < 0.01 * q, "{} of {}", end.q0, q);
    }

    #[test]
    fn sponge_profile() {
        let s = Sponge::outer_fifth(50.0, 2.0);
        assert_eq!(s.rate(10.0, 50.0), 0.0);
        assert_eq!(s.rate(40.0, 50.0), 0.0);
        assert!(s.rate(45.0, 50.0) > 0.0);
        assert!(s.rate(49.0, 50.0) > s.rate(45.0, 50.0));
    }

    #[test]
    fn bare_ground_state_decomposes_to_zero() {
        let rp = reference();
        let phi = synthesize(rp, &Modulation::zero(1)).unwrap();
        let m = decompose(&phi, rp, &Modulation::zero(1), ModulationOptions::default()).unwrap();
        assert!(m.params.theta.abs() < 1e-12 && m.params.varpi.abs() < 1e-12);
        assert!(m.params.z[0].norm() < 1e-12);
        assert!(rp.grid.norm_c(&m.eta) < 1e-12);
    }

    #[test]
    fn decompose_inverts_synthesize() {
        let rp = reference();
        for p in [
            Modulation { theta: 0.3, varpi: 1e-2, z: vec![Complex64::new(6e-3, -7e-3)] },
            Modulation { theta: -0.2, varpi: -1e-2, z: vec![Complex64::new(-1e-2, 0.0)] },
            Modulation { theta: 0.05, varpi: 3e-3, z: vec![Complex64::new(1e-4, 2e-3)] },
        ] {
            let u = synthesize(rp, &p).unwrap();
            let m = decompose(&u, rp, &Modulation::zero(1), ModulationOptions::default()).unwrap();
            assert!(m.params.distance(&p) < 1e-8, "{:?} vs {:?}", m.params, p);
            assert!(m.defect < 1e-10);
        }
    }

    #[test]
    fn remainder_is_lipschitz_in_the_distance() {
        let rp = reference();
        let p = Modulation { theta: 0.1, varpi: 2e-3, z: vec![Complex64::new(4e-3, 1e-3)] };
        let base = synthesize(rp, &p).unwrap();
        let bump: Vec<Complex64> = rp.grid.r().iter().map(|r| Complex64::new((-(r - 2.0).powi(2)).exp(), 0.3)).collect();
        let bn = rp.grid.norm_c(&bump);
        for eps in [1e-3, 1e-4] {
            let u: Vec<Complex64> = base.iter().zip(&bump).map(|(a, b)| a + eps / bn * b).collect();
            let m = decompose(&u, rp, &p, ModulationOptions::default()).unwrap();
            let ratio = rp.grid.norm_c(&m.eta) / eps;
            assert!(ratio < 3.0, "{ratio}");
        }
    }

    #[test]
    fn far_states_are_rejected() {
        let rp = reference();
        let phi = synthesize(rp, &Modulation::zero(1)).unwrap();
        let bump: Vec<Complex64> = rp.grid.r().iter().map(|r| Complex64::new((-r * r / 4.0).exp(), 0.0)).collect();
        let bn = rp.grid.norm_c(&bump);
        let u: Vec<Complex64> = phi.iter().zip(&bump).map(|(a, b)| a + 0.5 / bn * b).collect();
        let err = decompose(&u, rp, &Modulation::zero(1), ModulationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::OutsideBasin(_) | Error::ConvergenceFailure { .. }), "{err}");
    }

    fn build(sigma: f64) -> RefinedProfile {
        let nl = NonlinearitySpec::saturated_quintic(sigma);
        let grid = Arc::new(RadialGrid::with(1, 40.0, 0.1, 4).unwrap());
        let gs = solve_ground_state(&nl, 1.0, grid, None, SolverOptions::default()).unwrap();
        let ops = build_operators(&gs, &nl);
        let (rep, modes) = discrete_spectrum(&gs, &ops, SpectralOptions::default()).unwrap();
        let rs = classify(&rep.lambda, 1.0, 1e-9).unwrap();
        build_refined_profile(&gs, &ops, &modes, &rs, &nl, ProfileOptions::default()).unwrap()
    }

    /// `phi + eps (xi+ + xi-)`: the field component of the pair perturbation
    /// `eps xi + eps sigma1 xi`, i.e. the linear part of the profile at `z = eps`.
    fn injected(rp: &RefinedProfile, eps: f64) -> Vec<Complex64> {
        let xi = &rp.modes[0].xi;
        let phi = synthesize(rp, &Modulation::zero(1)).unwrap();
        phi.iter()
            .zip(xi.plus.iter().zip(&xi.minus))
            .map(|(a, (p, m))| a + eps * (p + m))
            .collect()
    }

    #[test]
    fn mode_injection_recovers_amplitude() {
        let rp = build(0.3);
        let m = decompose(&injected(&rp, 0.01), &rp, &Modulation::zero(1), ModulationOptions::default()).unwrap();
        let z = m.params.z[0];
        assert!((z.norm() - 0.01).abs() <= 1e-3, "{z}");
    }

    #[test]
    fn mode_injection_error_is_second_order() {
        // the injected state lacks the degree-2 profile terms
        let rp = reference();
        let dev: Vec<f64> = [0.005, 0.0025, 0.00125]
            .iter()
            .map(|&e| {
                let m = decompose(&injected(rp, e), rp, &Modulation::zero(1), ModulationOptions::default()).unwrap();
                (m.params.z[0].norm() - e).abs()
            })
            .collect();
        for w in dev.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.4..4.6).contains(&ratio), "{dev:?}");
        }
    }

    #[test]
    fn bare_upper_component_matches_linear_oracle() {
        // u = phi + eps xi+ splits as varpi dphi + a (xi+ + xi-) + radiation, with
        // varpi = <w, phi> / <dphi, phi> and a = <w, xi+ - xi-> / <xi+ + xi-, xi+ - xi->
        let rp = reference();
        let g = &rp.grid;
        let xi = &rp.modes[0].xi;
        let phi = rp.series.get(&MultiIndex::zero(1)).unwrap().to_vec();
        let eps = 1e-4;
        let sum: Vec<f64> = xi.plus.iter().zip(&xi.minus).map(|(p, m)| p + m).collect();
        let diff: Vec<f64> = xi.plus.iter().zip(&xi.minus).map(|(p, m)| p - m).collect();
        let varpi = eps * g.inner(&xi.plus, &phi) / g.inner(&rp.dphi, &phi);
        let a = eps * g.inner(&xi.plus, &diff) / g.inner(&sum, &diff);
        let u: Vec<Complex64> = phi.iter().zip(&xi.plus).map(|(f, p)| Complex64::new(f + eps * p, 0.0)).collect();
        let m = decompose(&u, rp, &Modulation::zero(1), ModulationOptions::default()).unwrap();
        assert!((m.params.varpi / varpi - 1.0).abs() < 2e-2, "{} vs {varpi}", m.params.varpi);
        assert!((m.params.z[0].re / a - 1.0).abs() < 2e-2, "{} vs {a}", m.params.z[0]);
        assert!(m.params.z[0].im.abs() < 1e-10 && m.params.theta.abs() < 1e-10);
    }

    #[test]
    fn stationary_orbit_stays_put() {
        let rp = reference();
        let phi = synthesize(rp, &Modulation::zero(1)).unwrap();
        let mut cfg = SimConfig::new(rp.grid.clone(), rp.nl.clone(), 0.05, 10.0);
        cfg.stride = 10;
        let ts = run(&cfg, rp, phi).unwrap();
        assert_eq!(ts.samples.len(), 21);
        for s in &ts.samples {
            assert!(s.z[0].norm() <= 1e-6, "{}", s.z[0]);
            assert!(s.varpi.abs() <= 1e-6);
        }
        assert!(ts.q0_drift <= 1e-8);
    }

    #[test]
    fn csv_header_and_rows() {
        let rp = reference();
        let phi = synthesize(rp, &Modulation::zero(1)).unwrap();
        let mut cfg = SimConfig::new(rp.grid.clone(), rp.nl.clone(), 0.1, 0.5);
        cfg.stride = 5;
        let ts = run(&cfg, rp, phi).unwrap();
        let csv = ts.to_csv();
        let mut lines = csv.lines();
        let head = lines.next().unwrap();
        assert!(head.starts_with("t,theta,varpi,re_z1,im_z1,abs_z^"), "{head}");
        assert!(head.ends_with(",eta_local,Q0,E"));
        let cols = head.split(',').count();
        assert_eq!(cols, 3 + 2 + ts.r_min.len() + 3);
        for l in lines {
            assert_eq!(l.split(',').count(), cols);
        }
    }

    fn synthetic(lambda: f64, envelope: impl Fn(f64) -> f64, horizon: f64, n: usize) -> TimeSeries {
        let r_min = vec![MultiIndex::new(vec![2], vec![0])];
        let samples = (0..=n)
            .map(|k| {
                let t = horizon * k as f64 / n as f64;
                let z = Complex64::from_polar(envelope(t), -lambda * t);
                Sample {
                    t,
                    theta: 0.0,
                    varpi: -1e-3 * (1.0 - (-t).exp()),
                    monomials: vec![z.norm_sqr()],
                    z: vec![z],
                    eta_local: 0.0,
                    q0: 1.0,
                    energy: 0.0,
                    iterations: 1,
                    defect: 0.0,
                }
            })
            .collect();
        TimeSeries::from_samples(r_min, samples, 0.0, 0.0)
    }

    #[test]
    fn synthetic_decay_saturates() {
        let (gamma, horizon, z0) = (0.05, 1000.0, 1e-2);
        let ts = synthetic(0.7, |t| z0 / (1.0 + gamma * t).sqrt(), horizon, 100_000);
        let rep = fgr_decay_report(&ts, &[0.7], DecayOptions::default()).unwrap();
        assert_eq!(rep.decaying, Status::Pass);
        assert_eq!(rep.monotonicity_defect, 0.0);
        assert_eq!(rep.saturating, Status::Pass);
        // S(T) = z0^4 / gamma (1 - 1/(1 + gamma T))
        let gt = gamma * horizon;
        let exact_total = z0.powi(4) / gamma * (1.0 - 1.0 / (1.0 + gt));
        assert!((rep.s_total / exact_total - 1.0).abs() < 1e-6);
        let exact_share = (1.0 / (1.0 + 0.75 * gt) - 1.0 / (1.0 + gt)) / (1.0 - 1.0 / (1.0 + gt));
        assert!((rep.last_quarter_share - exact_share).abs() < 1e-6, "{}", rep.last_quarter_share);
        assert!(rep.last_quarter_share < 0.25);
        // exact rotation at lambda: the demodulated amplitude varies only through the envelope
        assert!(rep.phase_consistency < 1.0, "{}", rep.phase_consistency);
        assert_eq!(rep.varpi_converging, Status::Pass);
    }

    #[test]
    fn zero_series_is_vacuous() {
        let ts = synthetic(0.7, |_| 0.0, 100.0, 1000);
        let rep = fgr_decay_report(&ts, &[0.7], DecayOptions::default()).unwrap();
        assert_eq!(rep.decaying, Status::Pass);
        assert_eq!(rep.s_total, 0.0);
        assert_eq!(rep.last_quarter_share, 0.0);
        assert_eq!(rep.phase_consistency, 0.0);
    }

    #[test]
    fn growing_envelope_flagged() {
        let ts = synthetic(0.7, |t| 1e-3 * (1.0 + 0.05 * t).sqrt(), 1000.0, 20_000);
        let rep = fgr_decay_report(&ts, &[0.7], DecayOptions::default()).unwrap();
        assert!(rep.monotonicity_defect > 0.05);
        assert_eq!(rep.decaying, Status::Fail);
    }

    #[test]
    fn short_series_is_insufficient() {
        let ts = synthetic(0.7, |_| 1e-3, 10.0, 10);
        assert!(matches!(
            fgr_decay_report(&ts, &[0.7], DecayOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
