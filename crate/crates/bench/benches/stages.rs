use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use rpl_core::dynamics::{decompose, synthesize, Integrator, Modulation, ModulationOptions, SimConfig, Sponge};
use rpl_core::fgr::{fgr_gram, FgrOptions};
use rpl_core::groundstate::{solve_ground_state, SolverOptions};
use rpl_core::linearization::{build_operators, discrete_spectrum, SpectralOptions};
use rpl_core::profile::{build_refined_profile, ProfileOptions};
use rpl_core::resonance::classify;
use rpl_core::{NonlinearitySpec, RadialGrid};

fn grid(r: f64, h: f64) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::with(1, r, h, 4).unwrap())
}

fn ground(c: &mut Criterion) {
    let nl = NonlinearitySpec::saturated_quintic(0.2);
    let g = grid(40.0, 0.05);
    c.bench_function("ground_state_n800", |b| {
        b.iter(|| solve_ground_state(&nl, 1.0, g.clone(), None, SolverOptions::default()).unwrap())
    });
}

fn spectrum(c: &mut Criterion) {
    let nl = NonlinearitySpec::saturated_quintic(0.2);
    let gs = solve_ground_state(&nl, 1.0, grid(40.0, 0.1), None, SolverOptions::default()).unwrap();
    c.bench_function("discrete_spectrum_n400", |b| {
        b.iter(|| {
            let ops = build_operators(&gs, &nl);
            discrete_spectrum(&gs, &ops, SpectralOptions::default()).unwrap()
        })
    });
}

fn profile_and_fgr(c: &mut Criterion) {
    let nl = NonlinearitySpec::saturated_quintic(0.2);
    let gs = solve_ground_state(&nl, 1.0, grid(60.0, 0.1), None, SolverOptions::default()).unwrap();
    let ops = build_operators(&gs, &nl);
    let (rep, modes) = discrete_spectrum(&gs, &ops, SpectralOptions::default()).unwrap();
    let rs = classify(&rep.lambda, 1.0, 1e-9).unwrap();
    c.bench_function("refined_profile", |b| {
        b.iter(|| build_refined_profile(&gs, &ops, &modes, &rs, &nl, ProfileOptions::default()).unwrap())
    });
    let rp = build_refined_profile(&gs, &ops, &modes, &rs, &nl, ProfileOptions::default()).unwrap();
    let mut group = c.benchmark_group("fgr");
    group.sample_size(10);
    group.bench_function("gram_both_routes", |b| {
        b.iter(|| fgr_gram(&rp, &ops.hamiltonian, &rs.groups[0], 0, FgrOptions::default()).unwrap())
    });
    group.finish();

    let p = Modulation {
        theta: 0.1,
        varpi: 1e-3,
        z: vec![Complex64::new(5e-3, -2e-3)],
    };
    let u = synthesize(&rp, &p).unwrap();
    c.bench_function("decompose", |b| {
        b.iter(|| decompose(&u, &rp, &Modulation::zero(1), ModulationOptions::default()).unwrap())
    });
}

fn integrator(c: &mut Criterion) {
    let nl = NonlinearitySpec::saturated_quintic(0.15);
    let g = grid(60.0, 0.25);
    let gs = solve_ground_state(&nl, 1.0, g.clone(), None, SolverOptions::default()).unwrap();
    let mut cfg = SimConfig::new(g, nl, 0.2, 1.0);
    cfg.frame = 1.0;
    cfg.sponge = Some(Sponge::outer_fifth(60.0, 1.0));
    let mut integ = Integrator::new(cfg).unwrap();
    let v: Vec<Complex64> = gs.phi.iter().map(|&x| Complex64::new(1.01 * x, 0.0)).collect();
    let start = integ.state(0.0, v);
    c.bench_function("cn_step_n240", |b| b.iter(|| integ.step(&start).unwrap()));
}

criterion_group!(benches, ground, spectrum, profile_and_fgr, integrator);
criterion_main!(benches);
