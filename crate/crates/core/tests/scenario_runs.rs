use std::path::Path;

use trajflow::io::{read_field, write_sensors, write_trajectories};
use trajflow::network::{SensorSeries, SensorSet};
use trajflow::scenario::{run_scenario, simulate, spreading_trio, ScenarioConfig};
use trajflow::Error;

const FTL_GSOM: &str = r#"
model = "gsom"
seed = 11

[diagram]
kind = "cgarz"
rho_max = 100.0
rho_f = 10.0
v_max = 90.0

[road]
a = 0.0
b = 3.0
dx = 0.1

[time]
horizon_h = 0.02
record_every = 5

[initial]
kind = "uniform"
rho = 30.0

[boundary.left]
kind = "flux"
flux = 1500.0

[fleet]
kind = "ftl"
x0 = 1.0
amplitude = 0.1

[emissions]
formula = "max"
"#;

const RAREFACTION: &str = r#"
model = "lwr"

[diagram]
kind = "greenshields"
rho_max = 100.0
u_max = 90.0

[embedding]
mode = "MODE"
ell = 0.2
big_l = 0.6

[road]
a = 0.0
b = 3.0
dx = 0.01

[time]
horizon_h = 0.02

[initial]
kind = "riemann"
rho_left = 100.0
rho_right = 0.0
x_split = 1.0

[boundary.left]
kind = "density"
rho = 100.0

[fleet]
kind = "file"
path = "trio.csv"
"#;

const NETWORK: &str = r#"
model = "network"

[diagram]
kind = "cgarz"
rho_max = 100.0
rho_f = 10.0
v_max = 90.0

[time]
horizon_h = 0.02
record_every = 4

[network]
dx = 0.1
sensors = "sensors.csv"
warm_start_h = 0.01
roads = [{ id = 1, length = 1.0 }, { id = 2, length = 1.5 }, { id = 3, length = 0.8 }]
diverges = [{ id = "D", in_road = 1, out_main = { road = 2 }, out_side = { road = 3 }, alpha = 0.7 }]

[emissions]
formula = "max"

[diffusion]
lx = 2.0
ly = 1.0
dx = 0.05
dy = 0.05
mu = 0.5
strips = [
    { road_id = 1, x_start = -1.5, y = 0.0 },
    { road_id = 2, x_start = -0.5, y = 0.3 },
    { road_id = 3, x_start = -0.5, y = -0.3 },
]
"#;

fn config(text: &str, base: &Path) -> ScenarioConfig {
    ScenarioConfig::parse(text, &base.join("scenario.toml")).unwrap()
}

#[test]
fn identical_configs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(FTL_GSOM, dir.path());
    let a = run_scenario(&cfg, &dir.path().join("a")).unwrap();
    let b = run_scenario(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.files, b.files);
    for f in &a.files {
        let x = std::fs::read(dir.path().join("a").join(&f.path)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(&f.path)).unwrap();
        assert_eq!(x, y, "{}", f.quantity);
    }
    let names: Vec<&str> = a.files.iter().map(|f| f.quantity.as_str()).collect();
    assert_eq!(names, ["rho", "w", "speed", "accel", "emission"]);
    assert!(dir.path().join("a/manifest.json").is_file());
}

#[test]
fn seed_changes_the_perturbed_fleet() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&config(FTL_GSOM, dir.path())).unwrap();
    let b = simulate(&config(&FTL_GSOM.replace("seed = 11", "seed = 12"), dir.path())).unwrap();
    assert_ne!(a.dumps[0].rows, b.dumps[0].rows);
    let c = simulate(&config(&FTL_GSOM.replace("amplitude = 0.1", "amplitude = 0.0"), dir.path())).unwrap();
    let d = simulate(&config(
        &FTL_GSOM.replace("amplitude = 0.1", "amplitude = 0.0").replace("seed = 11", "seed = 12"),
        dir.path(),
    ))
    .unwrap();
    assert_eq!(c.dumps, d.dumps);
}

#[test]
fn embeddings_differ_only_while_vehicles_cluster() {
    let dir = tempfile::tempdir().unwrap();
    write_trajectories(&spreading_trio(0.1).unwrap(), &dir.path().join("trio.csv")).unwrap();
    let cv = simulate(&config(&RAREFACTION.replace("MODE", "cv"), dir.path())).unwrap();
    let acv = simulate(&config(&RAREFACTION.replace("MODE", "acv"), dir.path())).unwrap();
    let none = simulate(&config(&RAREFACTION.replace("MODE", "none"), dir.path())).unwrap();
    let rho = |r: &trajflow::scenario::RunOutput| r.dumps[0].rows.clone();
    assert_ne!(rho(&cv), rho(&acv));
    assert_ne!(rho(&cv), rho(&none));
    let first = |r: &trajflow::scenario::RunOutput| r.dumps[0].rows[0].clone();
    assert_eq!(first(&cv), first(&acv));
    for row in rho(&cv).iter().chain(rho(&acv).iter()) {
        assert!(row.iter().all(|&r| (0.0..=100.0).contains(&r)));
    }
}

#[test]
fn network_run_writes_every_road_and_the_concentration() {
    let dir = tempfile::tempdir().unwrap();
    let mut sensors = SensorSet::new();
    sensors.insert(1, SensorSeries::constant(1, 1800.0, 70.0, 5).unwrap());
    write_sensors(&sensors, &dir.path().join("sensors.csv")).unwrap();
    let cfg = config(NETWORK, dir.path());
    let out = dir.path().join("out");
    let m = run_scenario(&cfg, &out).unwrap();
    assert!(m.warm_start_steps > 0);
    let names: Vec<&str> = m.files.iter().map(|f| f.quantity.as_str()).collect();
    assert_eq!(
        names,
        [
            "emission_road1",
            "rho_road1",
            "w_road1",
            "emission_road2",
            "rho_road2",
            "w_road2",
            "emission_road3",
            "rho_road3",
            "w_road3",
            "psi"
        ]
    );
    let rho2 = read_field(&out.join("rho_road2.csv")).unwrap();
    let t0 = rho2.meta_f64("t0_h").unwrap();
    assert!((rho2.times[0] - t0).abs() < 1e-15);
    assert!(rho2.rows.last().unwrap().iter().any(|&r| r > 0.0));
    let psi = read_field(&out.join("psi.csv")).unwrap();
    assert!(psi.rows.iter().flatten().all(|&p| p >= 0.0));
    assert!(psi.rows.last().unwrap().iter().any(|&p| p > 0.0));
    assert!(m.diffusion_dt_bound_h.unwrap() >= m.dt_h);
}

#[test]
fn missing_inputs_and_bad_blocks_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&RAREFACTION.replace("MODE", "cv"), dir.path());
    let err = simulate(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("fleet.path"));
    let err = ScenarioConfig::parse(&FTL_GSOM.replace("[emissions]", "[emission]"), Path::new("s.toml")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    let cfg = config(&FTL_GSOM.replace("model = \"gsom\"", "model = \"network\""), dir.path());
    assert!(cfg.validate().unwrap_err().to_string().contains("network"));
}
