use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trajflow::diffusion::{build_source, diffusion_step, refine_emissions, stable_dt, Domain2D};
use trajflow::emissions::{emission_field, EmissionCoefficients, EmissionFormula, ExpMatrix};
use trajflow::gsom::emission_kinematics;
use trajflow::io::{read_field, write_field, write_trajectories, FieldDump};
use trajflow::scenario::{run_scenario, ScenarioConfig};
use trajflow::{Error, Result};

#[derive(Parser)]
#[command(name = "trajflow", version, about = "Traffic flow simulation driven by vehicle trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its fields and manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the configured `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        record_every: Option<usize>,
    },
    /// Write the fleet described by a scenario to a trajectory file.
    GenerateTrajectories {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute emission rates from dumped rho, speed and accel fields.
    Emissions {
        /// Directory holding rho.csv, speed.csv and accel.csv.
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Formula::Max)]
        formula: Formula,
        /// Coefficient table; the petrol-car NOx set is used when absent.
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Spread dumped emission rates over the 2D domain of a scenario.
    Diffuse {
        /// Scenario whose `diffusion` block describes the domain.
        #[arg(long)]
        config: PathBuf,
        /// Directory holding emission.csv or emission_road{id}.csv files.
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario and every file it refers to.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Formula {
    Max,
    Exp,
}

impl From<Formula> for EmissionFormula {
    fn from(f: Formula) -> Self {
        match f {
            Formula::Max => EmissionFormula::Max,
            Formula::Exp => EmissionFormula::Exp,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            out,
            seed,
            record_every,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(k) = record_every {
                cfg.time.record_every = k;
            }
            let out = out.unwrap_or_else(|| cfg.resolve(&cfg.output_dir));
            let m = run_scenario(&cfg, &out)?;
            println!(
                "{} steps of {:.3e} h (bound {:.3e} h), {} files in {}",
                m.steps,
                m.dt_h,
                m.cfl_bound_h,
                m.files.len(),
                out.display()
            );
            if m.clamped_accelerations > 0 {
                println!("{} accelerations clamped", m.clamped_accelerations);
            }
            println!("digest {}", m.digest);
            Ok(())
        }
        Command::GenerateTrajectories { config, out, seed } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let fleet = cfg.build_fleet()?;
            write_trajectories(&fleet, &out)?;
            println!("{} vehicles written to {}", fleet.len(), out.display());
            Ok(())
        }
        Command::Emissions {
            fields,
            out,
            formula,
            coefficients,
        } => {
            let coeffs = match coefficients {
                Some(p) => EmissionCoefficients::load(&p)?,
                None => EmissionCoefficients::petrol_car_nox(),
            };
            let dump = emissions(&fields, formula.into(), &coeffs)?;
            let path = out.join(dump.file_name());
            write_field(&dump, &path)?;
            println!("{} rows written to {}", dump.rows.len(), path.display());
            Ok(())
        }
        Command::Diffuse { config, fields, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let dump = diffuse(&cfg, &fields)?;
            let path = out.join(dump.file_name());
            write_field(&dump, &path)?;
            println!("{} rows written to {}", dump.rows.len(), path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            cfg.validate()?;
            let fleet = cfg.build_fleet()?;
            println!("{}: ok ({} vehicles)", config.display(), fleet.len());
            Ok(())
        }
    }
}

fn same_shape(a: &FieldDump, b: &FieldDump) -> Result<()> {
    if a.columns != b.columns || a.times != b.times {
        return Err(Error::config(format!(
            "fields {} and {} are recorded on different grids",
            a.quantity, b.quantity
        )));
    }
    Ok(())
}

fn emissions(dir: &Path, formula: EmissionFormula, coeffs: &EmissionCoefficients) -> Result<FieldDump> {
    let rho = read_field(&dir.join("rho.csv"))?;
    let speed = read_field(&dir.join("speed.csv"))?;
    let accel = read_field(&dir.join("accel.csv"))?;
    same_shape(&rho, &speed)?;
    same_shape(&rho, &accel)?;
    let dx = rho
        .meta_f64("dx_km")
        .ok_or_else(|| Error::config("rho.csv: missing dx_km"))?;
    let matrix = ExpMatrix::default();
    let mut dump = FieldDump::new("emission", "g/s", rho.columns);
    dump.meta = rho.meta.clone();
    let mut clamped = 0;
    for ((t, r), (s, a)) in rho.times.iter().zip(&rho.rows).zip(speed.rows.iter().zip(&accel.rows)) {
        let (v, acc, c) = emission_kinematics(s, a);
        clamped += c;
        dump.push(*t, emission_field(formula, r, &v, &acc, dx, coeffs, &matrix)?)?;
    }
    if clamped > 0 {
        log::warn!("{clamped} accelerations clamped");
    }
    Ok(dump)
}

fn emission_dump(dir: &Path, road_id: u32) -> Result<FieldDump> {
    let per_road = dir.join(format!("emission_road{road_id}.csv"));
    if per_road.is_file() {
        return read_field(&per_road);
    }
    read_field(&dir.join("emission.csv"))
}

fn diffuse(cfg: &ScenarioConfig, dir: &Path) -> Result<FieldDump> {
    let d = cfg
        .diffusion
        .as_ref()
        .ok_or_else(|| Error::config("diffusion: block required"))?;
    let domain = Domain2D::new(d.lx, d.ly, d.dx, d.dy, d.strips.clone())?;
    let dumps = d
        .strips
        .iter()
        .map(|s| emission_dump(dir, s.road_id))
        .collect::<Result<Vec<_>>>()?;
    let first = dumps.first().ok_or_else(|| Error::config("diffusion.strips: empty"))?;
    for other in &dumps[1..] {
        if other.times != first.times {
            return Err(Error::config("emission fields are recorded at different times"));
        }
    }
    let bound = stable_dt(d.mu, d.dx, d.dy);
    let mut psi = vec![0.0; domain.len()];
    let mut out = FieldDump::new("psi", "", domain.len());
    out.set_meta("lx_km", domain.lx);
    out.set_meta("ly_km", domain.ly);
    out.set_meta("nx", domain.nx);
    out.set_meta("ny", domain.ny);
    for k in 0..first.times.len() {
        out.push(first.times[k], psi.clone())?;
        let Some(&next) = first.times.get(k + 1) else {
            break;
        };
        let rows = dumps
            .iter()
            .map(|e| {
                let dx = e
                    .meta_f64("dx_km")
                    .ok_or_else(|| Error::config(format!("{}: missing dx_km", e.file_name())))?;
                refine_emissions(&e.rows[k], dx, domain.dx())
            })
            .collect::<Result<Vec<_>>>()?;
        let source = build_source(&rows, &domain, d.scaling)?;
        let span = next - first.times[k];
        let substeps = (span / bound).ceil().max(1.0) as usize;
        let dt = span / substeps as f64;
        for _ in 0..substeps {
            psi = diffusion_step(&psi, &source, d.mu, dt, &domain)?;
        }
    }
    Ok(out)
}
