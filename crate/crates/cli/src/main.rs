//! `paircert <command> --in <path> --out <path> [--seed N] [--opt key=val ...]`
//!
//! Exit codes: 0 success, 2 input error, 3 numerical non-convergence,
//! 4 physicality violation.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use paircert_core::car::{car_fit, CarFitConfig};
use paircert_core::io::{self, CarFitReport, StateFile};
use paircert_core::keyrate::{keyrate_grid, linear_axis, log_axis, BackgroundSpec, LinkModel};
use paircert_core::metrics::certify;
use paircert_core::quantum::StateVector4;
use paircert_core::tomography::{mc_uncertainty_many, mle_reconstruct, synth_dataset, McOptions, MeasurementSetting, Metric, MleOptions};
use paircert_core::Error;

#[derive(Parser)]
#[command(name = "paircert", version, about = "Entanglement certification for polarization-entangled photon pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a density matrix from a 36-setting counts CSV.
    Tomo(RunArgs),
    /// Compute the full certification report for a density matrix JSON.
    Certify(RunArgs),
    /// Key-rate grids over (mu, eta), one CSV per background wavelength.
    Keyrate(RunArgs),
    /// Fit the lumped efficiency to CAR-versus-singles data.
    CarFit(RunArgs),
    /// Generate Poisson counts for a density matrix JSON.
    Synth(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Command-specific option, repeatable.
    #[arg(long = "opt", value_name = "KEY=VAL", value_parser = parse_kv)]
    opts: Vec<(String, String)>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=val, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

enum Failure {
    Input(String),
    NonConvergence(String),
    Unphysical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::NonConvergence(_) => 3,
            Failure::Unphysical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::NonConvergence(m) | Failure::Unphysical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Unphysical(_) | Error::NotNormalized { .. } => Failure::Unphysical(msg),
            Error::NonConvergence(_) => Failure::NonConvergence(msg),
            _ => Failure::Input(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Opts(BTreeMap<String, String>);

impl Opts {
    fn new(pairs: &[(String, String)]) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if map.insert(k.clone(), v.clone()).is_some() {
                return Err(Failure::Input(format!("option `{k}` given twice")));
            }
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, Failure> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::Input(format!("invalid value `{v}` for option `{key}`"))),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.0.remove(key).map(PathBuf::from)
    }

    /// Rejects options no step consumed.
    fn finish(self) -> Outcome {
        match self.0.keys().next() {
            None => Ok(()),
            Some(k) => Err(Failure::Input(format!("unknown option `{k}`"))),
        }
    }
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Input(format!("input file {} does not exist", path.display())))
    }
}

fn cmd_tomo(args: &RunArgs) -> Outcome {
    let mut opts = Opts::new(&args.opts)?;
    let defaults = MleOptions::default();
    let mle = MleOptions {
        max_iter: opts.get("max_iter", defaults.max_iter)?,
        tol: opts.get("tol", defaults.tol)?,
        restarts: opts.get("restarts", defaults.restarts)?,
        seed: args.seed,
    };
    opts.finish()?;
    require_file(&args.input)?;
    let dataset = io::read_counts(io::open(&args.input)?)?;
    let result = mle_reconstruct(&dataset, &mle)?;
    io::write_json(io::create(&args.out)?, &StateFile::from_reconstruction(&result))?;
    if !result.converged {
        return Err(Failure::NonConvergence(format!(
            "likelihood minimization stopped after {} iterations without converging; output written",
            result.iterations
        )));
    }
    Ok(())
}

fn cmd_certify(args: &RunArgs) -> Outcome {
    let mut opts = Opts::new(&args.opts)?;
    let counts = opts.path("counts");
    let samples = opts.get("samples", McOptions::default().n_samples)?;
    opts.finish()?;
    require_file(&args.input)?;
    let rho = io::read_density_matrix(io::open(&args.input)?)?;
    let mut report = certify(&rho)?;
    if let Some(counts) = counts {
        require_file(&counts)?;
        let dataset = io::read_counts(io::open(&counts)?)?;
        let mc = McOptions {
            n_samples: samples,
            seed: args.seed,
            ..Default::default()
        };
        let metrics = [Metric::Chsh, Metric::Concurrence, Metric::Fidelity(StateVector4::singlet())];
        report.uncertainty = Some(mc_uncertainty_many(&dataset, &metrics, &mc)?);
    }
    Ok(io::write_json(io::create(&args.out)?, &report)?)
}

fn cmd_keyrate(args: &RunArgs) -> Outcome {
    let mut opts = Opts::new(&args.opts)?;
    let mu_min: f64 = opts.get("mu_min", 1e-4)?;
    let mu_max: f64 = opts.get("mu_max", 1.0)?;
    let eta_min: f64 = opts.get("eta_min", 1e-3)?;
    let eta_max: f64 = opts.get("eta_max", 1.0)?;
    let steps: usize = opts.get("steps", 50)?;
    let axis: String = opts.get("axis", "log".to_string())?;
    let model: LinkModel = opts.get("model", LinkModel::default())?;
    let base = BackgroundSpec::default();
    let spec = BackgroundSpec {
        bandwidth_nm: opts.get("bandwidth_nm", base.bandwidth_nm)?,
        aperture_m2: opts.get("aperture_m2", base.aperture_m2)?,
        fov_sr: opts.get("fov_sr", base.fov_sr)?,
        gate_s: opts.get("gate_s", base.gate_s)?,
        det_eff: opts.get("det_eff", base.det_eff)?,
        ..base
    };
    opts.finish()?;

    if steps == 0 {
        return Err(Failure::Input("steps must be at least 1".into()));
    }
    if !(mu_min <= mu_max) || !(eta_min <= eta_max) {
        return Err(Failure::Input(format!(
            "invalid bounds: mu [{mu_min}, {mu_max}], eta [{eta_min}, {eta_max}]"
        )));
    }
    let (mu_axis, eta_axis) = match axis.as_str() {
        "log" => {
            if !(mu_min > 0.0) || !(eta_min > 0.0) {
                return Err(Failure::Input("log axes need positive lower bounds".into()));
            }
            (log_axis(mu_min, mu_max, steps), log_axis(eta_min, eta_max, steps))
        }
        "linear" => (linear_axis(mu_min, mu_max, steps), linear_axis(eta_min, eta_max, steps)),
        other => return Err(Failure::Input(format!("axis must be `log` or `linear`, got `{other}`"))),
    };
    if steps > 1 && (mu_min == mu_max || eta_min == eta_max) {
        return Err(Failure::Input("axis bounds must differ when steps > 1".into()));
    }

    require_file(&args.input)?;
    let rows = io::read_background(io::open(&args.input)?)?;
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    for row in rows {
        let grid = keyrate_grid(&mu_axis, &eta_axis, &BackgroundSpec { flux_density: row.flux_density, ..spec }, model)?;
        let path = args.out.join(format!("keyrate_{}nm.csv", row.wavelength_nm));
        io::write_grid(io::create(&path)?, &grid)?;
    }
    Ok(())
}

fn cmd_synth(args: &RunArgs) -> Outcome {
    let mut opts = Opts::new(&args.opts)?;
    let flux: f64 = opts.get("flux", 1e6)?;
    let accidentals: f64 = opts.get("accidentals", 0.0)?;
    opts.finish()?;
    require_file(&args.input)?;
    let rho = io::read_density_matrix(io::open(&args.input)?)?;
    if flux == 0.0 {
        eprintln!("warning: flux is 0, every count will be zero");
    }
    let dataset = synth_dataset(&rho, flux, &MeasurementSetting::all(), args.seed, accidentals)?;
    Ok(io::write_counts(io::create(&args.out)?, &dataset)?)
}

fn cmd_car_fit(args: &RunArgs) -> Outcome {
    let mut opts = Opts::new(&args.opts)?;
    let base = CarFitConfig::default();
    let config = CarFitConfig {
        dark_hz: opts.get("dark_hz", base.dark_hz)?,
        rep_rate_hz: opts.get("rep_rate_hz", base.rep_rate_hz)?,
        symmetric: opts.get("symmetric", base.symmetric)?,
        singles_rel_err: opts.get("singles_rel_err", base.singles_rel_err)?,
    };
    opts.finish()?;
    require_file(&args.input)?;
    let points = io::read_car_points(io::open(&args.input)?)?;
    let fit = car_fit(&points, &config)?;
    Ok(io::write_json(io::create(&args.out)?, &CarFitReport::from(&fit))?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Tomo(a) => cmd_tomo(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Keyrate(a) => cmd_keyrate(a),
        Command::CarFit(a) => cmd_car_fit(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
