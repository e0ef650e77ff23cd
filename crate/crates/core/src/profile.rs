//! Refined near-soliton profile `phi[omega, z] = sum_m z^m phi_m`, built degree by degree
//! at an anchor frequency, together with the radiation sources `G_m` at the minimal
//! resonant indices.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::banded::Band;
use crate::error::{Error, Result};
use crate::grid::{Parity, RadialGrid};
use crate::groundstate::GroundState;
use crate::jet::{expand_nonlinearity, IndexSet, JetField, ScalarJet};
use crate::linearization::{krein, pair_inner, pair_norm, InternalMode, Operators, Pair};
use crate::nonlinearity::NonlinearitySpec;
use crate::resonance::{MultiIndex, ResonanceStructure};

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    /// Relative residual required of every coefficient equation.
    pub tol: f64,
    /// Closest admissible distance (relative to `omega`) of `lambda(m)` to the spectrum.
    pub tau_res: f64,
    /// Shift (relative to `omega`) used when solving on the range of a singular operator.
    pub shift: f64,
    pub max_refine: usize,
    /// Weight exponent of the localization norm.
    pub sigma: f64,
    /// Largest `|z|` at which the assembled series is trusted.
    pub z_max: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            tau_res: 1e-6,
            shift: 1e-3,
            max_refine: 60,
            sigma: 4.0,
            z_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveCase {
    Root,
    /// `lambda(m) = 0`: phase-type index.
    Phase,
    /// `lambda(m) = lambda_j`: frequency-correction index.
    Frequency,
    Generic,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileCoefficient {
    pub index: MultiIndex,
    #[serde(skip)]
    pub field: Vec<f64>,
    pub case: SolveCase,
    pub lambda: f64,
    /// Phase-flow coefficient, present for `lambda(m) = 0`.
    pub theta: Option<f64>,
    /// `(j, coefficient)` of the frequency flows `z_j' = -i (lambda_j z_j + ...)`.
    pub flow: Vec<(usize, f64)>,
    /// Relative residual of the coefficient equation.
    pub residual: f64,
}

/// Two-component radiation source `(G_m, G_conj(m))`.
#[derive(Debug, Clone, Serialize)]
pub struct RadiationSource {
    pub index: MultiIndex,
    /// `lambda(m)`, beyond the gap edge.
    pub frequency: f64,
    #[serde(skip)]
    pub raw: Pair<f64>,
    #[serde(skip)]
    pub field: Pair<f64>,
    /// Largest normalized pairing with the tangent test directions after projection.
    pub orthogonality: f64,
}

#[derive(Debug, Clone)]
pub struct RefinedProfile {
    pub omega: f64,
    pub grid: Arc<RadialGrid>,
    pub nl: NonlinearitySpec,
    pub lambdas: Vec<f64>,
    pub modes: Vec<InternalMode>,
    pub dphi: Vec<f64>,
    /// `d^2 phi / d omega^2` at the anchor.
    pub d2phi: Vec<f64>,
    pub series: JetField,
    pub theta: ScalarJet,
    pub flows: Vec<ScalarJet>,
    pub coefficients: BTreeMap<MultiIndex, ProfileCoefficient>,
    pub sources: Vec<RadiationSource>,
    /// Largest relative coefficient of the reassembled equation over the solved indices.
    pub series_residual: f64,
    pub options: ProfileOptions,
    lap: Band<f64>,
}

/// Solves `A x = b` on the complement of a one-dimensional kernel: corrections with the
/// shifted factorization `(A + eta)^{-1}` followed by projection along the kernel.
fn refine_on_range(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    shifted: &crate::banded::BandLu<f64>,
    project: impl Fn(&mut Vec<f64>),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; b.len()];
    let mut res = f64::INFINITY;
    for _ in 0..max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        res = norm(&r) / bn;
        if res <= tol {
            return Ok(x);
        }
        let dx = shifted.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
        project(&mut x);
    }
    if res <= 1e3 * tol {
        return Ok(x);
    }
    Err(Error::ConvergenceFailure {
        what: "range-restricted solve",
        iterations: max_iter,
        residual: res,
    })
}

struct Context<'a> {
    omega: f64,
    grid: &'a RadialGrid,
    phi: &'a [f64],
    ops: &'a Operators,
    modes: &'a [InternalMode],
    rs: &'a ResonanceStructure,
    opts: ProfileOptions,
}

/// Solution of one coefficient pair `(m, conj m)`.
struct PairSolution {
    fields: Pair<f64>,
    case: SolveCase,
    lambda: f64,
    theta: Option<(f64, f64)>,
    flow: Vec<(usize, f64)>,
}

impl<'a> Context<'a> {
    fn inner_tol(&self) -> f64 {
        1e-3 * self.opts.tol
    }

    /// `L- u = b` with `u` orthogonal to `phi`; `b` must be orthogonal to `phi`.
    fn solve_lminus(&self, b: &[f64]) -> Result<Vec<f64>> {
        let grid = self.grid;
        let phi = self.phi;
        let pp = grid.inner(phi, phi);
        let mut band = self.ops.lminus.band().clone();
        band.add_diagonal(&vec![self.opts.shift * self.omega; grid.len()]);
        let lu = band.lu()?;
        refine_on_range(
            |x| self.ops.lminus.apply(x),
            &lu,
            |x| {
                let c = grid.inner(x, phi) / pp;
                x.iter_mut().zip(phi).for_each(|(a, p)| *a -= c * p);
            },
            b,
            self.inner_tol(),
            self.opts.max_refine,
        )
    }

    /// `(H - lambda_k) u = b` with `(u, sigma3 xi_k) = 0` for the listed modes.
    fn solve_on_mode_range(&self, lambda: f64, kernel: &[usize], b: &Pair<f64>) -> Result<Pair<f64>> {
        let h = &self.ops.hamiltonian;
        let lu = h.shifted_band_real(lambda - self.opts.shift * self.omega).lu()?;
        let grid = self.grid;
        let x = refine_on_range(
            |x| {
                let p = Pair::deinterleave(x);
                let mut hp = h.apply(&p);
                hp.axpy(-lambda, &p);
                hp.interleave()
            },
            &lu,
            |x| {
                let mut p = Pair::deinterleave(x);
                for &k in kernel {
                    let xi = &self.modes[k].xi;
                    let c = krein(grid, &p, xi);
                    p.axpy(-c, xi);
                }
                *x = p.interleave();
            },
            &b.interleave(),
            self.inner_tol(),
            self.opts.max_refine,
        )?;
        Ok(Pair::deinterleave(&x))
    }

    fn check_separation(&self, m: &MultiIndex, lam: f64, exempt_zero: bool, exempt: &[usize]) -> Result<()> {
        let mut targets = vec![self.omega, -self.omega];
        if !exempt_zero {
            targets.push(0.0);
        }
        for (k, mode) in self.modes.iter().enumerate() {
            if !exempt.contains(&k) {
                targets.push(mode.lambda);
            }
            targets.push(-mode.lambda);
        }
        for t in targets {
            let d = (lam - t).abs();
            if d < self.opts.tau_res * self.omega {
                return Err(Error::NearResonance {
                    index: m.to_string(),
                    distance: d,
                });
            }
        }
        Ok(())
    }

    /// Solves the coefficient equations of the pair `(m, conj m)` with known terms `k`.
    fn solve_pair(&self, m: &MultiIndex, k: &Pair<f64>) -> Result<PairSolution> {
        let lam = self.rs.lam(m);
        let n = self.grid.len();
        if self.rs.in_lambda0(m) {
            self.check_separation(m, lam, true, &[])?;
            let kp: Vec<f64> = k.plus.iter().zip(&k.minus).map(|(a, b)| 0.5 * (a + b)).collect();
            let km: Vec<f64> = k.plus.iter().zip(&k.minus).map(|(a, b)| 0.5 * (a - b)).collect();
            let up = self.ops.lplus.solve(&kp.iter().map(|v| -v).collect::<Vec<_>>())?;
            let (um, t) = if m.is_self_conjugate() {
                (vec![0.0; n], 0.0)
            } else {
                let t = -self.grid.inner(&km, self.phi) / self.grid.inner(self.phi, self.phi);
                let rhs: Vec<f64> = km.iter().zip(self.phi).map(|(a, p)| -(a + t * p)).collect();
                (self.solve_lminus(&rhs)?, t)
            };
            let plus = up.iter().zip(&um).map(|(a, b)| a + b).collect();
            let minus = up.iter().zip(&um).map(|(a, b)| a - b).collect();
            return Ok(PairSolution {
                fields: Pair::new(plus, minus),
                case: SolveCase::Phase,
                lambda: lam,
                theta: Some((t, -t)),
                flow: Vec::new(),
            });
        }
        let sets = self.rs.lambda_sets_of(m);
        if !sets.is_empty() {
            self.check_separation(m, lam, false, &sets)?;
            let mut rhs = k.sigma3().scale(-1.0);
            let mut flow = Vec::new();
            for &j in &sets {
                let xi = &self.modes[j].xi;
                let c = self.grid.inner(&k.plus, &xi.plus) + self.grid.inner(&k.minus, &xi.minus);
                rhs.axpy(c, xi);
                flow.push((j, c));
            }
            let fields = self.solve_on_mode_range(lam, &sets, &rhs)?;
            return Ok(PairSolution {
                fields,
                case: SolveCase::Frequency,
                lambda: lam,
                theta: None,
                flow,
            });
        }
        self.check_separation(m, lam, false, &[])?;
        let fields = self
            .ops
            .hamiltonian
            .solve_real(lam, &k.sigma3().scale(-1.0))?;
        Ok(PairSolution {
            fields,
            case: SolveCase::Generic,
            lambda: lam,
            theta: None,
            flow: Vec::new(),
        })
    }

    /// Relative residual of `(H - lambda) Phi + sigma3 (K + theta phi - flow xi) = 0`.
    fn pair_residual(&self, k: &Pair<f64>, s: &PairSolution) -> f64 {
        let mut aug = k.clone();
        if let Some((a, b)) = s.theta {
            aug.plus.iter_mut().zip(self.phi).for_each(|(x, p)| *x += a * p);
            aug.minus.iter_mut().zip(self.phi).for_each(|(x, p)| *x += b * p);
        }
        for &(j, c) in &s.flow {
            aug.axpy(-c, &self.modes[j].xi.sigma3());
        }
        let hp = self.ops.hamiltonian.apply(&s.fields);
        let mut e = hp.clone();
        e.axpy(-s.lambda, &s.fields);
        e.axpy(1.0, &aug.sigma3());
        let scale = pair_norm(self.grid, &aug)
            .max(pair_norm(self.grid, &hp))
            .max(f64::MIN_POSITIVE);
        pair_norm(self.grid, &e) / scale
    }
}

/// Coefficients of `-Lap phi + g(|phi|^2) phi + theta phi - sum_j (d_zj phi Lambda_j - d_conj(zj) phi conj Lambda_j)`.
pub fn residual_series(
    series: &JetField,
    theta: &ScalarJet,
    flows: &[ScalarJet],
    nl: &NonlinearitySpec,
    lap: &Band<f64>,
) -> Result<JetField> {
    let n = series.index_set().modes();
    let mut out = expand_nonlinearity(series, nl)?;
    out = out.add(&series.map(|f| lap.matvec(f).into_iter().map(|v| -v).collect()))?;
    out = out.add(&series.mul_scalar(theta)?)?;
    for (j, flow) in flows.iter().enumerate() {
        out = out.add(&series.derivative(j).mul_scalar(flow)?.scale(-1.0))?;
        out = out.add(&series.derivative(n + j).mul_scalar(&flow.conj())?)?;
    }
    Ok(out)
}

/// `d^2 phi / d omega^2` from `L+ phi'' = -2 phi' - (6 g' phi + 4 g'' phi^3) phi'^2`.
pub fn second_frequency_derivative(gs: &GroundState, ops: &Operators, nl: &NonlinearitySpec) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = gs
        .phi
        .iter()
        .zip(&gs.dphi)
        .map(|(&p, &d)| {
            let t = nl.taylor4(p * p);
            let (g1, g2) = (t[1], 2.0 * t[2]);
            -2.0 * d - (6.0 * g1 * p + 4.0 * g2 * p * p * p) * d * d
        })
        .collect();
    ops.lplus.solve(&rhs)
}

/// Tangent test pairs and correction pairs of the projection onto the radiation sector.
fn projection_frame(grid: &RadialGrid, phi: &[f64], dphi: &[f64], modes: &[InternalMode]) -> (Vec<Pair<f64>>, Vec<Pair<f64>>) {
    let _ = grid;
    let big_phi = Pair::new(phi.to_vec(), phi.to_vec());
    let big_dphi = Pair::new(dphi.to_vec(), dphi.to_vec());
    let mut tests = vec![big_phi.sigma3(), big_dphi.clone()];
    let mut corrections = vec![big_phi, big_dphi.sigma3()];
    for mode in modes {
        let xi = &mode.xi;
        let s1 = xi.sigma1();
        let mut sum = xi.clone();
        sum.axpy(1.0, &s1);
        let mut diff = xi.clone();
        diff.axpy(-1.0, &s1);
        tests.push(sum);
        tests.push(diff);
        corrections.push(xi.sigma3());
        corrections.push(s1.sigma3().scale(-1.0));
    }
    (tests, corrections)
}

fn solve_small(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::SingularSystem(format!("{what}: singular values {smin:e} / {smax:e}")));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem(what.to_string()))
}

/// Adds the unique combination of correction pairs making `raw` orthogonal to the tests;
/// returns the projected pair and its largest normalized test pairing.
fn project_source(grid: &RadialGrid, raw: &Pair<f64>, tests: &[Pair<f64>], corrections: &[Pair<f64>]) -> Result<(Pair<f64>, f64)> {
    let k = tests.len();
    let a = DMatrix::from_fn(k, k, |l, c| pair_inner(grid, &corrections[c], &tests[l]));
    let b = DVector::from_fn(k, |l, _| -pair_inner(grid, raw, &tests[l]));
    let c = solve_small(a, b, "source projection")?;
    let mut out = raw.clone();
    for (ci, v) in c.iter().zip(corrections) {
        out.axpy(*ci, v);
    }
    let on = pair_norm(grid, &out).max(f64::MIN_POSITIVE);
    let defect = tests
        .iter()
        .map(|t| pair_inner(grid, &out, t).abs() / (on * pair_norm(grid, t)))
        .fold(0.0, f64::max);
    Ok((out, defect))
}

pub fn build_refined_profile(
    gs: &GroundState,
    ops: &Operators,
    modes: &[InternalMode],
    rs: &ResonanceStructure,
    nl: &NonlinearitySpec,
    opts: ProfileOptions,
) -> Result<RefinedProfile> {
    if !rs.ambiguous.is_empty() {
        let list: Vec<String> = rs.ambiguous.iter().map(|m| m.to_string()).collect();
        return Err(Error::ClassificationAmbiguous(list.join(", ")));
    }
    let n_modes = modes.len();
    if rs.modes != n_modes {
        return Err(Error::InvalidInput(format!(
            "{} internal modes but a classification over {}",
            n_modes, rs.modes
        )));
    }
    let grid = gs.grid.clone();
    let omega = gs.omega;
    let k_max = if n_modes == 0 { 0 } else { rs.k_max };
    let set = IndexSet::new(n_modes, k_max);
    let lap = grid.laplacian_band(Parity::Even);
    let mut series = JetField::constant(set.clone(), gs.phi.clone());
    let mut theta = ScalarJet::zeros(set.clone());
    theta.set(&MultiIndex::zero(n_modes), omega)?;
    let mut flows = Vec::with_capacity(n_modes);
    let mut coefficients = BTreeMap::new();
    coefficients.insert(
        MultiIndex::zero(n_modes),
        ProfileCoefficient {
            index: MultiIndex::zero(n_modes),
            field: gs.phi.clone(),
            case: SolveCase::Root,
            lambda: 0.0,
            theta: Some(0.0),
            flow: Vec::new(),
            residual: gs.residual,
        },
    );
    for (j, mode) in modes.iter().enumerate() {
        let ep = MultiIndex::unit_plus(j, n_modes);
        let em = MultiIndex::unit_minus(j, n_modes);
        series.set(&ep, mode.xi.plus.clone())?;
        series.set(&em, mode.xi.minus.clone())?;
        let mut flow = ScalarJet::zeros(set.clone());
        flow.set(&ep, mode.lambda)?;
        flows.push(flow);
        let mut e = ops.hamiltonian.apply(&mode.xi);
        e.axpy(-mode.lambda, &mode.xi);
        let res = pair_norm(&grid, &e) / (mode.lambda * pair_norm(&grid, &mode.xi));
        for (m, f, lam) in [(ep, &mode.xi.plus, mode.lambda), (em, &mode.xi.minus, -mode.lambda)] {
            coefficients.insert(
                m.clone(),
                ProfileCoefficient {
                    index: m.clone(),
                    field: f.clone(),
                    case: SolveCase::Root,
                    lambda: lam,
                    theta: None,
                    flow: if lam > 0.0 { vec![(j, lam)] } else { Vec::new() },
                    residual: res,
                },
            );
        }
    }
    let ctx = Context {
        omega,
        grid: &grid,
        phi: &gs.phi,
        ops,
        modes,
        rs,
        opts,
    };
    let mut scales: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for deg in 2..=k_max {
        let known = residual_series(&series, &theta, &flows, nl, &lap)?;
        let zeros = vec![0.0; grid.len()];
        let todo: Vec<&MultiIndex> = rs.nr.iter().filter(|m| m.norm() == deg).collect();
        for m in todo {
            if coefficients.contains_key(m) {
                continue;
            }
            let mut m = m.clone();
            let mut mb = m.conj();
            if rs.lambda_sets_of(&m).is_empty() && !rs.lambda_sets_of(&mb).is_empty() {
                std::mem::swap(&mut m, &mut mb);
            }
            let k = Pair::new(
                known.get(&m).unwrap_or(&zeros).to_vec(),
                known.get(&mb).unwrap_or(&zeros).to_vec(),
            );
            let sol = ctx.solve_pair(&m, &k)?;
            let residual = ctx.pair_residual(&k, &sol);
            if !(residual <= opts.tol) {
                return Err(Error::ConvergenceFailure {
                    what: "profile coefficient",
                    iterations: 1,
                    residual,
                });
            }
            let kn = pair_norm(&grid, &k);
            let scale = kn.max(omega * pair_norm(&grid, &sol.fields)).max(f64::MIN_POSITIVE);
            series.set(&m, sol.fields.plus.clone())?;
            series.set(&mb, sol.fields.minus.clone())?;
            if let Some((a, b)) = sol.theta {
                theta.set(&m, a)?;
                theta.set(&mb, b)?;
            }
            for &(j, c) in &sol.flow {
                flows[j].set(&m, c)?;
            }
            let pairs = [
                (m.clone(), sol.fields.plus.clone(), sol.lambda, sol.theta.map(|t| t.0), sol.flow.clone()),
                (mb.clone(), sol.fields.minus.clone(), -sol.lambda, sol.theta.map(|t| t.1), Vec::new()),
            ];
            for (idx, field, lambda, th, flow) in pairs {
                scales.insert(idx.clone(), scale);
                coefficients.entry(idx.clone()).or_insert(ProfileCoefficient {
                    index: idx,
                    field,
                    case: sol.case,
                    lambda,
                    theta: th,
                    flow,
                    residual,
                });
            }
        }
    }
    let full = residual_series(&series, &theta, &flows, nl, &lap)?;
    let series_residual = scales
        .iter()
        .map(|(m, s)| full.get(m).map_or(0.0, |f| grid.norm(f)) / s)
        .fold(0.0, f64::max);
    let (tests, corrections) = projection_frame(&grid, &gs.phi, &gs.dphi, modes);
    let zeros = vec![0.0; grid.len()];
    let mut sources = Vec::new();
    for m in &rs.r_min {
        let mb = m.conj();
        let raw = Pair::new(
            full.get(m).unwrap_or(&zeros).to_vec(),
            full.get(&mb).unwrap_or(&zeros).to_vec(),
        );
        let (field, orthogonality) = project_source(&grid, &raw, &tests, &corrections)?;
        sources.push(RadiationSource {
            index: m.clone(),
            frequency: rs.lam(m),
            raw,
            field,
            orthogonality,
        });
    }
    let d2phi = second_frequency_derivative(gs, ops, nl)?;
    Ok(RefinedProfile {
        omega,
        grid,
        nl: nl.clone(),
        lambdas: modes.iter().map(|m| m.lambda).collect(),
        modes: modes.to_vec(),
        dphi: gs.dphi.clone(),
        d2phi,
        series,
        theta,
        flows,
        coefficients,
        sources,
        series_residual,
        options: opts,
        lap,
    })
}

fn monomial(m: &MultiIndex, z: &[Complex64]) -> Complex64 {
    let mut w = Complex64::new(1.0, 0.0);
    for (j, zj) in z.iter().enumerate() {
        w *= zj.powu(m.plus[j]) * zj.conj().powu(m.minus[j]);
    }
    w
}

/// Profile and flow values at a point `(omega, z)`.
#[derive(Debug, Clone)]
pub struct AssembledState {
    pub omega: f64,
    pub field: Vec<Complex64>,
    /// Phase velocity `theta(omega, z)`.
    pub theta: Complex64,
    /// `z_j' = -i Lambda_j(z)`.
    pub z_dot: Vec<Complex64>,
    /// `d phi / d omega` at `(omega, z)`.
    pub d_omega: Vec<f64>,
    pub d_z: Vec<Vec<Complex64>>,
    pub d_zbar: Vec<Vec<Complex64>>,
    pub within_validity: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub omega: f64,
    pub z_norm: f64,
    /// Localization norm of the corrected residual.
    pub residual_norm: f64,
    /// Localization norm of the residual minus the radiation sources.
    pub remainder_norm: f64,
    /// Largest normalized pairing of the corrected residual with the tangent directions.
    pub orthogonality: f64,
    pub corrections: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub scales: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub omega: f64,
    pub k_max: u32,
    pub coefficients: Vec<ProfileCoefficient>,
    pub sources: Vec<RadiationSource>,
    pub series_residual: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl RefinedProfile {
    pub fn modes_count(&self) -> usize {
        self.lambdas.len()
    }

    pub fn k_max(&self) -> u32 {
        self.series.index_set().k_max()
    }

    /// Smallest degree among the radiation sources.
    pub fn min_source_degree(&self) -> Option<u32> {
        self.sources.iter().map(|s| s.index.norm()).min()
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            omega: self.omega,
            k_max: self.k_max(),
            coefficients: self.coefficients.values().cloned().collect(),
            sources: self.sources.clone(),
            series_residual: self.series_residual,
        }
    }

    fn evaluate(&self, j: &JetField, z: &[Complex64], skip_base: bool) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); j.field_len()];
        for (m, c) in j.terms() {
            if skip_base && m.is_zero() {
                continue;
            }
            let w = monomial(m, z);
            out.iter_mut().zip(c).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    fn evaluate_scalar(s: &ScalarJet, z: &[Complex64]) -> Complex64 {
        s.terms().map(|(m, c)| c * monomial(m, z)).sum()
    }

    pub fn assemble(&self, omega: f64, z: &[Complex64]) -> Result<AssembledState> {
        let n_modes = self.modes_count();
        if z.len() != n_modes {
            return Err(Error::InvalidInput(format!(
                "{} amplitudes for {} internal modes",
                z.len(),
                n_modes
            )));
        }
        let dw = omega - self.omega;
        let phi0 = self.series.get(&MultiIndex::zero(n_modes)).expect("base coefficient");
        let mut field = self.evaluate(&self.series, z, true);
        let mut d_omega = Vec::with_capacity(phi0.len());
        for (i, f) in field.iter_mut().enumerate() {
            *f += phi0[i] + dw * self.dphi[i] + 0.5 * dw * dw * self.d2phi[i];
            d_omega.push(self.dphi[i] + dw * self.d2phi[i]);
        }
        let theta = omega + Self::evaluate_scalar(&self.theta, z) - self.omega;
        let i = Complex64::new(0.0, 1.0);
        let z_dot = self
            .flows
            .iter()
            .map(|f| -i * Self::evaluate_scalar(f, z))
            .collect();
        let d_z = (0..n_modes)
            .map(|j| self.evaluate(&self.series.derivative(j), z, false))
            .collect();
        let d_zbar = (0..n_modes)
            .map(|j| self.evaluate(&self.series.derivative(n_modes + j), z, false))
            .collect();
        let zn = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        Ok(AssembledState {
            omega,
            field,
            theta,
            z_dot,
            d_omega,
            d_z,
            d_zbar,
            within_validity: zn <= self.options.z_max,
        })
    }

    /// Tangent directions `{i phi, d_omega phi, d_{Re z_j} phi, d_{Im z_j} phi}` at a state.
    pub fn tangents(state: &AssembledState) -> Vec<Vec<Complex64>> {
        let i = Complex64::new(0.0, 1.0);
        let mut t = vec![
            state.field.iter().map(|v| i * v).collect::<Vec<_>>(),
            state.d_omega.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        ];
        for (dz, dzb) in state.d_z.iter().zip(&state.d_zbar) {
            t.push(dz.iter().zip(dzb).map(|(a, b)| a + b).collect());
            t.push(dz.iter().zip(dzb).map(|(a, b)| i * (a - b)).collect());
        }
        t
    }

    /// Residual of the profile equation at `(omega, z)` after the tangential correction.
    pub fn residual(&self, omega: f64, z: &[Complex64]) -> Result<ResidualReport> {
        let grid = &self.grid;
        let st = self.assemble(omega, z)?;
        let i = Complex64::new(0.0, 1.0);
        let re: Vec<f64> = st.field.iter().map(|v| v.re).collect();
        let im: Vec<f64> = st.field.iter().map(|v| v.im).collect();
        let (lre, lim) = (self.lap.matvec(&re), self.lap.matvec(&im));
        let flows: Vec<Complex64> = st.z_dot.iter().map(|v| i * v).collect();
        let mut r: Vec<Complex64> = (0..grid.len())
            .map(|k| {
                let u = st.field[k];
                -Complex64::new(lre[k], lim[k]) + (self.nl.value(u.norm_sqr()) + st.theta) * u
            })
            .collect();
        for (j, lam) in flows.iter().enumerate() {
            for (k, rk) in r.iter_mut().enumerate() {
                *rk -= st.d_z[j][k] * lam - st.d_zbar[j][k] * lam.conj();
            }
        }
        let tests = Self::tangents(&st);
        let columns: Vec<Vec<Complex64>> = tests
            .iter()
            .enumerate()
            .map(|(l, t)| {
                if l == 0 {
                    st.field.clone()
                } else {
                    t.iter().map(|v| -i * v).collect()
                }
            })
            .collect();
        let k = tests.len();
        let a = DMatrix::from_fn(k, k, |l, c| grid.inner_c(&columns[c], &tests[l]));
        let b = DVector::from_fn(k, |l, _| -grid.inner_c(&r, &tests[l]));
        let c = solve_small(a, b, "tangential correction")?;
        for (ck, col) in c.iter().zip(&columns) {
            r.iter_mut().zip(col).for_each(|(x, y)| *x += ck * y);
        }
        let rn = grid.norm_c(&r).max(f64::MIN_POSITIVE);
        let orthogonality = tests
            .iter()
            .map(|t| grid.inner_c(&r, t).abs() / (rn * grid.norm_c(t)))
            .fold(0.0, f64::max);
        let mut r1 = r.clone();
        for src in &self.sources {
            let w = monomial(&src.index, z);
            r1.iter_mut().zip(&src.field.plus).for_each(|(x, g)| *x -= w * g);
        }
        Ok(ResidualReport {
            omega,
            z_norm: z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(),
            residual_norm: grid.sigma_norm(&r, self.options.sigma),
            remainder_norm: grid.sigma_norm(&r1, self.options.sigma),
            orthogonality,
            corrections: c.iter().cloned().collect(),
        })
    }

    /// Slope of the remainder norm along `s z0`, `s = 1, 1/2, ...`, at the anchor.
    pub fn residual_scaling(&self, z0: &[Complex64], points: usize) -> Result<ScalingFit> {
        if points < 2 {
            return Err(Error::InsufficientData("scaling fit needs two points".into()));
        }
        let mut scales = Vec::with_capacity(points);
        let mut norms = Vec::with_capacity(points);
        for p in 0..points {
            let s = 0.5f64.powi(p as i32);
            let z: Vec<Complex64> = z0.iter().map(|v| v * s).collect();
            scales.push(s);
            norms.push(self.residual(self.omega, &z)?.remainder_norm);
        }
        let slope = log_slope(&scales, &norms);
        let required = self.min_source_degree().map_or(1.0, |d| d as f64 + 1.0) - 0.1;
        Ok(ScalingFit {
            scales,
            norms,
            slope,
            required,
            pass: slope >= required,
        })
    }
}
