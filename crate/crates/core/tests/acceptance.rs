//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! with the measured quantity before asserting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajflow::diagram::FrozenInvariant;
use trajflow::diffusion::{diffusion_step, stable_dt, Domain2D};
use trajflow::emissions::{emission_exp_micro, emission_max_micro, EmissionCoefficients, ExpMatrix};
use trajflow::gsom::{GsomConfig, GsomLeft, GsomSolver, MacroState2};
use trajflow::lagrangian::{simulate_ftl, FtlConfig, FtlState, TrajectorySample};
use trajflow::lwr::{
    critical_point, max_dt, monotone_dt, Embedding, EmbeddingMode, FluxSamplingConfig, LeftBoundary, LwrConfig,
    LwrSolver, MacroState1, RightBoundary,
};
use trajflow::network::{
    diverge_fluxes, merge_fluxes, motorway_topology, Network, RoadFleets, SensorSeries, SensorSet,
};
use trajflow::scenario::{spreading_trio, PlatoonStudy};
use trajflow::{CgarzDiagram, CutoffShape, Fleet, GreenshieldsDiagram, SpatialGrid, SpeedLaw, Trajectory};

fn report(name: &str, pass: bool, detail: String) {
    println!("{name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn shape() -> CutoffShape {
    CutoffShape::new(0.2, 0.6).unwrap()
}

fn greenshields() -> GreenshieldsDiagram {
    GreenshieldsDiagram::new(100.0, 90.0).unwrap()
}

fn cgarz() -> CgarzDiagram {
    CgarzDiagram::with_standard_invariant_range(100.0, 10.0, 90.0).unwrap()
}

fn lwr(mode: EmbeddingMode, grid: SpatialGrid) -> LwrSolver<GreenshieldsDiagram> {
    let config = LwrConfig {
        mode,
        shape: shape(),
        sampling: FluxSamplingConfig::default(),
    };
    LwrSolver::new(greenshields(), grid, config).unwrap()
}

/// Vehicle with piecewise-constant random speeds in `[0, v_cap]`, changing
/// every `segment` hours.
fn random_vehicle(rng: &mut impl Rng, id: usize, x0: f64, horizon: f64, segment: f64, v_cap: f64) -> Trajectory {
    let mut samples = vec![TrajectorySample { t: 0.0, x: x0, v: None }];
    let (mut t, mut x) = (0.0, x0);
    while t < horizon {
        let v = rng.random_range(0.0..=v_cap);
        t += segment;
        x += v * segment;
        samples.push(TrajectorySample { t, x, v: None });
    }
    Trajectory::new(format!("r{id}"), 1, samples).unwrap()
}

#[test]
fn density_stays_in_bounds_under_random_fleets() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let law = greenshields();
    let grid = SpatialGrid::with_spacing(0.0, 5.0, 0.1).unwrap();
    let (runs, steps) = (1000, 200);
    let mut bad_runs = 0;
    let mut bad_cells = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for run in 0..runs {
        let mode = if run % 2 == 0 {
            EmbeddingMode::ClosestVehicle
        } else {
            EmbeddingMode::AverageClosestVehicles
        };
        let solver = lwr(mode, grid);
        let n_vehicles = rng.random_range(1..=5);
        // a horizon guess long enough for 200 steps at the smallest bound
        let horizon = steps as f64 * 0.1 / law.u_max;
        let fleet = Fleet::new(
            (0..n_vehicles)
                .map(|i| {
                    let x0 = rng.random_range(0.0..5.0);
                    random_vehicle(&mut rng, i, x0, horizon, horizon / 20.0, 1.2 * law.u_max)
                })
                .collect(),
        );
        let dt = max_dt(&fleet, &law, &grid);
        let mut state = MacroState1 {
            rho: (0..grid.n_cells()).map(|_| rng.random_range(0.0..=law.rho_max)).collect(),
        };
        let left = LeftBoundary::Density(rng.random_range(0.0..=law.rho_max));
        let right = RightBoundary::Density(rng.random_range(0.0..=law.rho_max));
        let mut violated = false;
        for n in 0..steps {
            state = solver.step(&state, n as f64 * dt, &fleet, dt, left, right).unwrap();
            for &r in &state.rho {
                lo = lo.min(r);
                hi = hi.max(r);
                if !(0.0..=law.rho_max).contains(&r) {
                    bad_cells += 1;
                    violated = true;
                }
            }
        }
        bad_runs += usize::from(violated);
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = bad_runs == 0 && secs < 60.0;
    report(
        "density bounds with dt = max_dt",
        pass,
        format!("{bad_runs}/{runs} runs violated, {bad_cells} cell-steps, range [{lo:.6}, {hi:.6}], {secs:.1} s"),
    );
    assert!(pass);
}

/// Exact entropy solution of the Greenshields Riemann problem.
fn riemann_exact(rho_l: f64, rho_r: f64, x0: f64, t: f64, x: f64) -> f64 {
    let (rm, um) = (100.0, 90.0);
    let speed = |r: f64| um * (1.0 - 2.0 * r / rm);
    if rho_l < rho_r {
        let s = um * (1.0 - (rho_l + rho_r) / rm);
        if x < x0 + s * t {
            rho_l
        } else {
            rho_r
        }
    } else {
        let xi = (x - x0) / t;
        if xi <= speed(rho_l) {
            rho_l
        } else if xi >= speed(rho_r) {
            rho_r
        } else {
            0.5 * rm * (1.0 - xi / um)
        }
    }
}

fn cell_average(grid: &SpatialGrid, j: usize, f: impl Fn(f64) -> f64) -> f64 {
    let m = 2000;
    let a = grid.center(j) - 0.5 * grid.dx();
    (0..m).map(|k| f(a + (k as f64 + 0.5) * grid.dx() / m as f64)).sum::<f64>() / m as f64
}

#[test]
fn riemann_problems_match_exact_solutions() {
    let grid = SpatialGrid::with_spacing(0.0, 3.0, 0.1).unwrap();
    let solver = lwr(EmbeddingMode::None, grid);
    let dt = 0.2 / 3600.0;
    let horizon: f64 = 1.0 / 60.0;
    let steps = (horizon / dt).round() as usize;
    let mut ok = true;
    let mut details = Vec::new();
    for (rho_l, rho_r) in [(20.0, 40.0), (45.0, 30.0)] {
        let mut state = MacroState1 {
            rho: grid.centers().iter().map(|&x| if x < 1.5 { rho_l } else { rho_r }).collect(),
        };
        for n in 0..steps {
            state = solver
                .step(&state, n as f64 * dt, &Fleet::empty(), dt, LeftBoundary::Density(rho_l), RightBoundary::Free)
                .unwrap();
        }
        let t = steps as f64 * dt;
        let l1: f64 = (0..grid.n_cells())
            .map(|j| (state.rho[j] - cell_average(&grid, j, |x| riemann_exact(rho_l, rho_r, 1.5, t, x))).abs())
            .sum::<f64>()
            * grid.dx();
        let bound = 3.0 * grid.dx() * (rho_l - rho_r).abs();
        ok &= l1 <= bound;
        details.push(format!("L1 {l1:.4} <= {bound:.2}"));
        if rho_l < rho_r {
            let mid = 0.5 * (rho_l + rho_r);
            let j = (0..grid.n_cells() - 1)
                .find(|&j| state.rho[j] < mid && state.rho[j + 1] >= mid)
                .unwrap();
            let (x0, x1) = (grid.center(j), grid.center(j + 1));
            let x_num = x0 + (mid - state.rho[j]) / (state.rho[j + 1] - state.rho[j]) * (x1 - x0);
            let x_exact = 1.5 + 90.0 * (1.0 - (rho_l + rho_r) / 100.0) * t;
            let err = (x_num - x_exact).abs();
            ok &= err <= 2.0 * grid.dx();
            details.push(format!("shock position error {err:.4} km"));
        }
    }
    report("Riemann problems against exact solutions", ok, details.join(", "));
    assert!(ok);
}

/// Run CV and ACV side by side and return, per step, the largest density
/// difference and the largest speed difference on a common state.
fn cv_acv_differences(fleet: &Fleet, grid: &SpatialGrid, rho0: &[f64], dt: f64, steps: usize) -> Vec<(f64, f64, f64)> {
    let cv = lwr(EmbeddingMode::ClosestVehicle, *grid);
    let acv = lwr(EmbeddingMode::AverageClosestVehicles, *grid);
    let mut a = MacroState1 { rho: rho0.to_vec() };
    let mut b = a.clone();
    let mut out = Vec::with_capacity(steps);
    for n in 0..steps {
        let t = n as f64 * dt;
        let snap = fleet.snapshot(t);
        let pa = cv.prepare(&a.rho, &snap);
        let pb = acv.prepare(&a.rho, &snap);
        let dv = pa.speed.iter().zip(&pb.speed).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let left = LeftBoundary::Density(rho0[0]);
        a = cv.step_unchecked(&a, &snap, dt, left, RightBoundary::Free).unwrap();
        b = acv.step_unchecked(&b, &snap, dt, left, RightBoundary::Free).unwrap();
        let dr = a.rho.iter().zip(&b.rho).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let positions: Vec<f64> = snap.vehicles.iter().map(|v| v.position).collect();
        let min_gap = positions
            .iter()
            .enumerate()
            .flat_map(|(i, p)| positions[i + 1..].iter().map(move |q| (p - q).abs()))
            .fold(f64::INFINITY, f64::min);
        out.push((min_gap, dr, dv));
    }
    out
}

#[test]
fn closest_and_average_embeddings_agree_for_separated_vehicles() {
    let grid = SpatialGrid::with_spacing(0.0, 10.0, 0.1).unwrap();
    let dt = 0.2 / 3600.0;
    let steps = 1500;
    let horizon = steps as f64 * dt;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_separated: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        let v: f64 = rng.random_range(5.0..60.0);
        // same speed, spaced more than 2L apart for the whole run
        let fleet = Fleet::new(
            (0..n)
                .map(|i| {
                    let x0 = 0.5 + 1.5 * i as f64;
                    let samples = [0.0, horizon]
                        .iter()
                        .map(|&t| TrajectorySample { t, x: x0 + v * t, v: Some(v) })
                        .collect();
                    Trajectory::new(format!("s{i}"), 1, samples).unwrap()
                })
                .collect(),
        );
        let rho0: Vec<f64> = (0..grid.n_cells()).map(|_| rng.random_range(0.0..100.0)).collect();
        for (_, dr, _) in cv_acv_differences(&fleet, &grid, &rho0, dt, steps) {
            worst_separated = worst_separated.max(dr);
        }
    }
    let two_l = 2.0 * shape().big_l;
    let trio = spreading_trio(0.1).unwrap();
    let rho0: Vec<f64> = grid.centers().iter().map(|&x| if x < 1.5 { 45.0 } else { 30.0 }).collect();
    let steps = (0.095 / dt) as usize;
    let diffs = cv_acv_differences(&trio, &grid, &rho0, dt, steps);
    let clustered_rho = diffs.iter().filter(|d| d.0 < two_l).map(|d| d.1).fold(0.0, f64::max);
    let clustered_speed = diffs.iter().filter(|d| d.0 < two_l - 2.0 * grid.dx()).map(|d| d.2).fold(f64::INFINITY, f64::min);
    let apart_speed = diffs.iter().filter(|d| d.0 > two_l).map(|d| d.2).fold(0.0, f64::max);
    let apart_steps = diffs.iter().filter(|d| d.0 > two_l).count();
    let final_rho = diffs.last().unwrap().1;
    let pass = worst_separated <= 1e-14 && clustered_rho > 0.0 && clustered_speed > 0.0 && apart_steps > 0 && apart_speed <= 1e-14;
    report(
        "closest vs averaged embedding",
        pass,
        format!(
            "separated max diff {worst_separated:.1e}; clustered density diff {clustered_rho:.3}, min speed diff {clustered_speed:.3e}; \
             after separation speed diff {apart_speed:.1e} over {apart_steps} steps, final density diff {final_rho:.3}"
        ),
    );
    assert!(pass);
}

#[test]
fn sampled_critical_density_matches_fine_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = FluxSamplingConfig::default().n_rho_samples;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for case in 0..500 {
        let p_dot = rng.random_range(0.0..150.0);
        let chi = rng.random_range(0.0..=1.0);
        let (rho_max, speed): (f64, Box<dyn Fn(f64) -> f64>) = if case % 2 == 0 {
            let rm = rng.random_range(50.0..200.0);
            let um = rng.random_range(30.0..150.0);
            (rm, Box::new(move |r: f64| um * (1.0 - r / rm)))
        } else {
            let d = CgarzDiagram::with_standard_invariant_range(
                rng.random_range(80.0..150.0),
                rng.random_range(5.0..20.0),
                rng.random_range(60.0..130.0),
            )
            .unwrap();
            let w = rng.random_range(d.w_l..=d.w_r);
            (d.rho_max, Box::new(move |r: f64| FrozenInvariant { diagram: d, w }.speed(r)))
        };
        let law: Box<dyn SpeedLaw> = if case % 2 == 0 {
            let um = speed(0.0);
            Box::new(GreenshieldsDiagram::new(rho_max, um).unwrap())
        } else {
            struct Law<F: Fn(f64) -> f64>(f64, F);
            impl<F: Fn(f64) -> f64> SpeedLaw for Law<F> {
                fn rho_max(&self) -> f64 {
                    self.0
                }
                fn speed(&self, rho: f64) -> f64 {
                    (self.1)(rho)
                }
                fn max_speed(&self) -> f64 {
                    (self.1)(0.0)
                }
            }
            Box::new(Law(rho_max, &speed))
        };
        let sigma = critical_point(law.as_ref(), &Embedding::Closest { chi, speed: p_dot }, n).sigma;
        let fine = 10 * (n - 1) + 1;
        let flux = |r: f64| {
            let u = speed(r);
            let harmonic = if p_dot + u == 0.0 { 0.0 } else { 2.0 * p_dot * u / (p_dot + u) };
            r * (chi * harmonic + (1.0 - chi) * u)
        };
        let (mut best_r, mut best_f) = (0.0, f64::NEG_INFINITY);
        for k in 0..fine {
            let r = rho_max * k as f64 / (fine - 1) as f64;
            let f = flux(r);
            if f > best_f {
                best_f = f;
                best_r = r;
            }
        }
        let spacing = rho_max / (n - 1) as f64;
        let err = (sigma - best_r).abs() / spacing;
        worst = worst.max(err);
        if err > 1.0 + 1e-9 {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(
        "sampled critical density vs 10x finer search",
        pass,
        format!("{failures}/500 off by more than one sample, worst {worst:.3} samples"),
    );
    assert!(pass);
}

#[test]
fn constant_invariant_reduces_to_first_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let diag = cgarz();
    let grid = SpatialGrid::with_spacing(0.0, 5.0, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let w = rng.random_range(diag.w_l..=diag.w_r);
        let fleet = Fleet::new(
            (0..3)
                .map(|i| random_vehicle(&mut rng, i, 0.5 + 1.5 * i as f64, 0.02, 0.002, 80.0))
                .collect(),
        );
        let shape = shape();
        let sampling = FluxSamplingConfig::default();
        let second = GsomSolver::new(
            diag,
            grid,
            GsomConfig {
                mode: EmbeddingMode::ClosestVehicle,
                shape,
                sampling,
            },
        )
        .unwrap();
        let first = LwrSolver::new(
            FrozenInvariant { diagram: diag, w },
            grid,
            LwrConfig {
                mode: EmbeddingMode::ClosestVehicle,
                shape,
                sampling,
            },
        )
        .unwrap();
        let rho: Vec<f64> = (0..grid.n_cells()).map(|_| rng.random_range(0.0..100.0)).collect();
        let mut s2 = MacroState2 { rho: rho.clone(), w: vec![w; rho.len()] };
        let mut s1 = MacroState1 { rho };
        let q_in = rng.random_range(0.0..2000.0);
        let dt = 0.2 / 3600.0;
        for n in 0..200 {
            let t = n as f64 * dt;
            s2 = second
                .step(&s2, t, &fleet, dt, GsomLeft::Flux { flux: q_in, w }, RightBoundary::Free)
                .unwrap();
            s1 = first.step(&s1, t, &fleet, dt, LeftBoundary::Flux(q_in), RightBoundary::Free).unwrap();
            let d = s1.rho.iter().zip(&s2.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    let pass = worst <= 1e-12;
    report("second-order model with constant w vs first-order", pass, format!("max |diff| {worst:.1e}"));
    assert!(pass);
}

#[test]
fn emission_point_values() {
    let c = EmissionCoefficients::petrol_car_nox();
    let e00 = emission_max_micro(0.0, 0.0, &c);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let decel_ok = (0..1000).all(|_| {
        let v = rng.random_range(0.0..40.0);
        let a = rng.random_range(-10.0..-0.5000001);
        emission_max_micro(v, a, &c) == 2.17e-4
    });
    let exp00 = emission_exp_micro(0.0, 0.0, &ExpMatrix::default()).unwrap();
    let exp_rel = (exp00 - (-14.8831f64).exp()).abs() / (-14.8831f64).exp();
    let pass = e00 == 6.19e-4 && decel_ok && exp_rel <= 1e-12;
    report(
        "emission point values",
        pass,
        format!("E-max(0,0) = {e00:e}, E-max(v, a < -0.5) constant: {decel_ok}, E-exp(0,0) rel err {exp_rel:.1e}"),
    );
    assert!(pass);
}

#[test]
fn tracked_vehicles_improve_platoon_emission_estimate() {
    let started = std::time::Instant::now();
    let study = PlatoonStudy::default();
    let without = study.compare(None).unwrap().l1_error;
    let mut with = Vec::new();
    for k in [1, 2, 4] {
        let r = study.compare(Some(k)).unwrap();
        with.push((r.tracked, r.l1_error));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = with
        .iter()
        .all(|&(_, e)| 2.0 * e <= without && (1e-3..=2e-2).contains(&e))
        && secs < 300.0;
    let listed: Vec<String> = with.iter().map(|(n, e)| format!("{n} tracked: {e:.2e}")).collect();
    report(
        "platoon emissions, with vs without tracked vehicles",
        pass,
        format!("{}; without: {without:.2e}; {secs:.1} s", listed.join(", ")),
    );
    assert!(pass);
}

fn spatial_std(rho: &[f64]) -> f64 {
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    (rho.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rho.len() as f64).sqrt()
}

#[test]
fn car_following_fleet_triggers_stop_and_go() {
    let cfg = FtlConfig::default();
    let ftl_dt = 0.1 / 3600.0;
    let horizon: f64 = 6.0 / 60.0;
    let steps = (horizon / ftl_dt).round() as usize;
    let fleet = simulate_ftl(&cfg, FtlState::perturbed(&cfg, 1.0, 0.05, 8), ftl_dt, steps, 10, 1).unwrap();
    let subsample = fleet.select(|i| i % 10 == 9);
    let grid = SpatialGrid::with_spacing(0.0, 10.0, 0.05).unwrap();
    let rho0 = 40.0;
    let run = |mode: EmbeddingMode, fleet: &Fleet| -> (f64, f64) {
        let solver = lwr(mode, grid);
        let dt = monotone_dt(fleet, &greenshields(), &grid).min(0.2 / 3600.0);
        let n_steps = (horizon / dt) as usize;
        let mut state = MacroState1 { rho: vec![rho0; grid.n_cells()] };
        let (mut max_std, mut max_dev): (f64, f64) = (0.0, 0.0);
        for n in 0..n_steps {
            state = solver
                .step(&state, n as f64 * dt, fleet, dt, LeftBoundary::Density(rho0), RightBoundary::Free)
                .unwrap();
            max_std = max_std.max(spatial_std(&state.rho));
            max_dev = state.rho.iter().map(|r| (r - rho0).abs()).fold(max_dev, f64::max);
        }
        (max_std, max_dev)
    };
    let (std_full, _) = run(EmbeddingMode::ClosestVehicle, &fleet);
    let (std_sub, _) = run(EmbeddingMode::ClosestVehicle, &subsample);
    let (_, dev_none) = run(EmbeddingMode::None, &fleet);
    let pass = std_full > 0.05 * rho0 && std_sub > 0.05 * rho0 && dev_none <= 1e-12;
    report(
        "stop-and-go from an embedded car-following fleet",
        pass,
        format!(
            "max spatial std {:.1}% of rho0 (50 vehicles), {:.1}% (5 vehicles); without embedding max |rho - rho0| {dev_none:.1e}",
            100.0 * std_full / rho0,
            100.0 * std_sub / rho0
        ),
    );
    assert!(pass);
}

#[test]
fn network_conserves_vehicles_and_junction_rules_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let config = GsomConfig {
        mode: EmbeddingMode::ClosestVehicle,
        shape: shape(),
        sampling: FluxSamplingConfig::default(),
    };
    let diag = CgarzDiagram::with_standard_invariant_range(56.0, 10.0, 90.0).unwrap();
    let mut net = Network::new(&motorway_topology([4.0, 3.0, 2.5, 3.5, 2.0, 3.0]), diag, config, 0.1).unwrap();
    let mut sensors = SensorSet::new();
    for road in [1, 3, 5] {
        let records = (0..60)
            .map(|minute| trajflow::network::SensorRecord {
                minute,
                flux: rng.random_range(500.0..2500.0),
                speed: rng.random_range(20.0..90.0),
            })
            .collect();
        sensors.insert(road, SensorSeries::new(road, records).unwrap());
    }
    let mut fleets = RoadFleets::new();
    fleets.insert(1, Fleet::new(vec![random_vehicle(&mut rng, 0, 0.5, 1.0, 0.02, 60.0)]));
    fleets.insert(2, Fleet::new(vec![random_vehicle(&mut rng, 1, 0.2, 1.0, 0.02, 30.0)]));
    let dt = 0.2 / 3600.0;
    let mut worst_rel: f64 = 0.0;
    let steps = (0.5 / dt) as usize;
    for n in 0..steps {
        let before = net.mass();
        let rep = net.step(n as f64 * dt, &fleets, &sensors, dt).unwrap();
        let after = net.mass();
        let expected = before + (rep.inflow - rep.outflow) * dt;
        let rel = (after - expected).abs() / after.max(before).max(1.0);
        worst_rel = worst_rel.max(rel);
    }
    let mass_ok = worst_rel <= 1e-10;

    let mut junction_failures = 0;
    let tol = 1e-9;
    for _ in 0..10_000 {
        let s = rng.random_range(0.0..3000.0);
        let (r1, r2) = (rng.random_range(0.0..3000.0), rng.random_range(0.0..3000.0));
        let alpha = rng.random_range(0.0..=1.0);
        let (q1, q2) = diverge_fluxes(s, r1, r2, alpha);
        let ratio_ok = (q1 * (1.0 - alpha) - q2 * alpha).abs() <= tol * s.max(1.0);
        let caps_ok = q1 <= r1 + tol && q2 <= r2 + tol && q1 + q2 <= s + tol && q1 >= 0.0 && q2 >= 0.0;
        let maximal = (q1 + q2 - s).abs() <= tol * s.max(1.0)
            || (alpha > 0.0 && (q1 - r1).abs() <= tol * r1.max(1.0))
            || (alpha < 1.0 && (q2 - r2).abs() <= tol * r2.max(1.0));
        let (sm, ss, r) = (rng.random_range(0.0..3000.0), rng.random_range(0.0..3000.0), rng.random_range(0.0..3000.0));
        let beta = rng.random_range(0.0..=1.0);
        let (qm, qs) = merge_fluxes(sm, ss, r, beta);
        let merge_ok = if sm + ss <= r {
            qm == sm && qs == ss
        } else {
            let mut m = [sm, r - ss, beta * r];
            m.sort_by(f64::total_cmp);
            (qm - m[1].clamp(0.0, sm)).abs() <= tol * r.max(1.0)
                && (qm + qs - r).abs() <= tol * r.max(1.0)
                && qs <= ss + tol
                && qs >= 0.0
        };
        if !(ratio_ok && caps_ok && maximal && merge_ok) {
            junction_failures += 1;
        }
    }
    let pass = mass_ok && junction_failures == 0;
    report(
        "network conservation and junction rules",
        pass,
        format!("worst relative mass defect {worst_rel:.1e} over {steps} steps; {junction_failures}/10000 junction cases wrong"),
    );
    assert!(pass);
}

#[test]
fn diffusion_balances_mass_and_stays_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let domain = Domain2D::new(0.2, 0.15, 0.01, 0.01, Vec::new()).unwrap();
    let mu = 0.5;
    let dt = 0.9 * stable_dt(mu, domain.dx(), domain.dy());
    let mut psi = vec![0.0; domain.len()];
    let mut injected = 0.0;
    let mut negative = 0usize;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..10_000 {
        let source: Vec<f64> = (0..domain.len())
            .map(|_| if rng.random_bool(0.1) { rng.random_range(0.0..5.0) } else { 0.0 })
            .collect();
        injected += domain.integral(&source) * dt;
        psi = diffusion_step(&psi, &source, mu, dt, &domain).unwrap();
        negative += psi.iter().filter(|&&p| p < 0.0).count();
        worst_rel = worst_rel.max((domain.integral(&psi) - injected).abs() / injected.max(f64::MIN_POSITIVE));
    }
    let pass = worst_rel <= 1e-10 && negative == 0;
    report(
        "diffusion mass balance and positivity",
        pass,
        format!("worst relative mass defect {worst_rel:.1e}, {negative} negative values"),
    );
    assert!(pass);
}

/// Linear interpolation of cell values at `x`.
fn sample(grid: &SpatialGrid, values: &[f64], x: f64) -> f64 {
    let s = (x - grid.a()) / grid.dx() - 0.5;
    let j = (s.floor().max(0.0) as usize).min(values.len() - 2);
    let f = s - j as f64;
    values[j] * (1.0 - f) + values[j + 1] * f
}

/// Mean |acceleration field - probe acceleration| over probes, for one
/// resolution.
fn acceleration_gap(dx: f64) -> f64 {
    let diag = cgarz();
    let grid = SpatialGrid::with_spacing(0.0, 10.0, dx).unwrap();
    let solver = GsomSolver::new(
        diag,
        grid,
        GsomConfig {
            mode: EmbeddingMode::None,
            shape: shape(),
            sampling: FluxSamplingConfig::default(),
        },
    )
    .unwrap();
    let dt = dx / (2.0 * diag.v_max);
    let rho: Vec<f64> = grid.centers().iter().map(|&x| 40.0 + 15.0 * (0.5 * x).sin()).collect();
    let w: Vec<f64> = grid
        .centers()
        .iter()
        .map(|&x| diag.w_mid() + 0.3 * (diag.w_r - diag.w_l) * (0.4 * x + 1.0).cos())
        .collect();
    let mut state = MacroState2 { rho, w };
    let empty = Fleet::empty().snapshot(0.0);
    let t_probe: f64 = 0.5 / 60.0;
    let steps = (t_probe / dt).round() as usize;
    let left = GsomLeft::Density { rho: state.rho[0], w: state.w[0] };
    for _ in 0..steps {
        state = solver.step_unchecked(&state, &empty, dt, left, RightBoundary::Free).unwrap();
    }
    let v0 = solver.speed_field(&state, &empty);
    let a0 = solver.acceleration_field(&state, &empty);
    let next = solver.step_unchecked(&state, &empty, dt, left, RightBoundary::Free).unwrap();
    let v1 = solver.speed_field(&next, &empty);
    let probes: Vec<f64> = (0..40).map(|k| 3.0 + 0.1 * k as f64).collect();
    probes
        .iter()
        .map(|&x| {
            let v = sample(&grid, &v0, x);
            let x1 = x + v * dt;
            let a_probe = (sample(&grid, &v1, x1) - v) / dt;
            (sample(&grid, &a0, x) - a_probe).abs()
        })
        .sum::<f64>()
        / probes.len() as f64
}

#[test]
fn acceleration_field_converges_to_probe_derivative() {
    let gaps: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&dx| acceleration_gap(dx)).collect();
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    let pass = ratios.iter().all(|r| (1.6..=2.5).contains(r));
    report(
        "acceleration field vs probe finite differences",
        pass,
        format!(
            "mean gaps {:.3e}, {:.3e}, {:.3e} km/h²; ratios {:.2}, {:.2}",
            gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]
        ),
    );
    assert!(pass);
}
