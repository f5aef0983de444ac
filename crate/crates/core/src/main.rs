//! `toda-hydro`: command-line front end for the simulations and kernel computations.
//!
//! Exit status: 0 on success, 1 when a numerical check or tolerance fails,
//! 2 on usage errors (bad flags, unreadable or invalid configuration).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use toda_hydro::config::{apply_overrides, parse_config};
use toda_hydro::ghd::GhdKernels;
use toda_hydro::lattice::{charge_at_slot, evolve, sample_equilibrium, TodaState};
use toda_hydro::mc::{write_stats_csv, EnsembleStats, ExperimentConfig, Harness, Observable};
use toda_hydro::validation::validate_suite;
use toda_hydro::Error;

#[derive(Parser)]
#[command(
    name = "toda-hydro",
    version,
    about = "Toda lattice hydrodynamics: simulation, kernels and fluctuation tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults are used for absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration entry, e.g. `--set lattice.beta=2` or `--set beta=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory for CSV/JSON files and the configuration echo.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed of every random stream (overrides `base_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensembles [env: TODA_HYDRO_THREADS].
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Draw one equilibrium state.
    Sample,
    /// Draw one state, evolve it to τ·T and report conservation defects.
    Evolve,
    /// Eigenvalue histogram against the density of states.
    Dos,
    /// Write the spectral kernels on the grid.
    Kernels,
    /// Write the effective velocity on the grid.
    Veff,
    /// Two-point sums for every (m, n, τ).
    Twopoint,
    /// Integrated-current variances for every (m, 𝔮, τ).
    Current,
    /// Tracer residual variance in the configured spectral bin for every τ.
    Tracer,
    /// Height of site 0: variance, kurtosis and increment independence for every τ.
    Q0,
    /// Variance of a polynomial linear statistic of the eigenvalues.
    Linstat,
    /// Scattering-relation residuals for every τ.
    Scattering,
    /// Deterministic identity checks of the kernels.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Evolve => "evolve",
            Self::Dos => "dos",
            Self::Kernels => "kernels",
            Self::Veff => "veff",
            Self::Twopoint => "twopoint",
            Self::Current => "current",
            Self::Tracer => "tracer",
            Self::Q0 => "q0",
            Self::Linstat => "linstat",
            Self::Scattering => "scattering",
            Self::Validate => "validate",
        }
    }
}

/// Why a run stopped.
enum Failure {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// A numerical check or tolerance failed: exit 1.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::NegativeTau(_) | Error::Window(_) | Error::OutOfRange { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o: {e}"))
    }
}

type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let base = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let mut cfg = apply_overrides(&base, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn workers(common: &Common) -> Result<Option<usize>, Failure> {
    let n = match common.workers {
        Some(n) => Some(n),
        None => match std::env::var("TODA_HYDRO_THREADS") {
            Ok(v) => {
                Some(v.trim().parse().map_err(|_| Failure::Usage(format!("TODA_HYDRO_THREADS=`{v}` is not a count")))?)
            }
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Failure::Usage("workers must be positive".into()));
    }
    Ok(n)
}

fn run(cli: &Cli) -> Outcome {
    let mut cfg = load_config(&cli.common)?;
    cfg.experiment = match cli.command {
        Command::Dos => toda_hydro::mc::Experiment::Dos,
        Command::Twopoint => toda_hydro::mc::Experiment::Twopoint,
        Command::Current => toda_hydro::mc::Experiment::Current,
        Command::Tracer => toda_hydro::mc::Experiment::Tracer,
        Command::Q0 => toda_hydro::mc::Experiment::Q0,
        Command::Linstat => toda_hydro::mc::Experiment::Linstat,
        Command::Scattering => toda_hydro::mc::Experiment::Scattering,
        Command::Evolve => toda_hydro::mc::Experiment::Conservation,
        _ => cfg.experiment,
    };
    // Kernel-only commands accept θ = 0, where the dressing is the identity.
    match cli.command {
        Command::Kernels | Command::Veff | Command::Validate => cfg.ghd_config().validate()?,
        _ => cfg.validate()?,
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers(&cli.common)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    let out = Output::new(cli.common.out.as_deref(), &cfg)?;
    let start = Instant::now();
    pool.install(|| dispatch(cli.command, &cfg, &out, start))
}

/// Output directory, or nothing when `--out` was not given.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<&Path>, cfg: &ExperimentConfig) -> Result<Self, Failure> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
            let echo = serde_json::to_string_pretty(cfg).map_err(|e| Failure::Usage(e.to_string()))?;
            fs::write(d.join("config.json"), echo + "\n")?;
        }
        Ok(Self { dir: dir.map(Path::to_path_buf) })
    }

    fn write<F>(&self, name: &str, f: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        if let Some(d) = &self.dir {
            let mut w = BufWriter::new(File::create(d.join(name))?);
            f(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    fn stats(
        &self,
        experiment: &str,
        cfg: &ExperimentConfig,
        stats: &[EnsembleStats],
        start: Instant,
    ) -> Result<(), Failure> {
        self.write("results.csv", |w| write_stats_csv(experiment, stats, w))?;
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            mean: f64,
            variance: f64,
            std_error: f64,
            predicted: Option<f64>,
            z_score: Option<f64>,
        }
        let rows: Vec<Row> = stats
            .iter()
            .map(|s| Row {
                id: &s.id,
                mean: s.mean,
                variance: s.variance,
                std_error: s.std_error,
                predicted: s.predicted,
                z_score: s.z_score,
            })
            .collect();
        let summary = json!({
            "config": cfg,
            "seed": cfg.base_seed,
            "results": rows,
            "runtime_seconds": start.elapsed().as_secs_f64(),
        });
        self.write("summary.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &summary)?;
            writeln!(w)
        })
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_stats(s: &EnsembleStats, ok: bool, extra: &str) {
    let pred = s.predicted.map_or_else(|| "-".to_string(), |p| format!("{p:.6}"));
    let z = s.z_score.map_or_else(|| "-".to_string(), |z| format!("{z:.2}"));
    println!(
        "{}: mean={:.6} se={:.3e} n={} predicted={pred} z={z}{extra} {}",
        s.id,
        s.mean,
        s.std_error,
        s.count,
        verdict(ok)
    );
}

/// Relative-tolerance check that also accepts an exact zero prediction met exactly.
fn relative_ok(s: &EnsembleStats, tol: f64) -> bool {
    match s.predicted {
        Some(0.0) => s.mean == 0.0,
        Some(_) => s.relative_error() <= tol,
        None => true,
    }
}

fn dispatch(command: Command, cfg: &ExperimentConfig, out: &Output, start: Instant) -> Outcome {
    let tol = &cfg.tolerances;
    let name = command.name();
    match command {
        Command::Sample => {
            let s = sample_equilibrium(&cfg.lattice, cfg.base_seed)?;
            out.write("state.csv", |w| write_state(&s, w))?;
            let mean_r = (0..s.len() - 1).map(|k| s.spacing(k)).sum::<f64>() / (s.len() - 1) as f64;
            let mean_p2 = s.p().iter().map(|p| p * p).sum::<f64>() / s.len() as f64;
            println!("sample: N={} seed={} mean spacing={mean_r:.6} mean p^2={mean_p2:.6}", s.len(), cfg.base_seed);
            Ok(true)
        }
        Command::Evolve => {
            let t = cfg.tau_list.first().copied().unwrap_or(1.0) * cfg.t_scale;
            let s0 = sample_equilibrium(&cfg.lattice, cfg.base_seed)?;
            let st = evolve(&s0, t, cfg.lattice.dt, cfg.lattice.integrator)?;
            out.write("state.csv", |w| write_state(&st, w))?;
            let rows: Vec<(usize, f64, f64, f64)> = (1..=4)
                .map(|m| {
                    let scale: f64 = (0..s0.len()).map(|k| charge_at_slot(&s0.a, &s0.b, m, k).abs()).sum();
                    let (a, b) = (s0.trace_power(m), st.trace_power(m));
                    (m, a, b, (b - a).abs() / scale)
                })
                .collect();
            out.write("conservation.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["m", "initial", "final", "relative_drift"])?;
                for r in &rows {
                    c.serialize(r)?;
                }
                c.flush()
            })?;
            for (m, _, _, d) in &rows {
                println!("evolve: t={t} trace L^{m} relative drift {d:.3e}");
            }
            Ok(true)
        }
        Command::Kernels | Command::Veff => {
            let k = GhdKernels::new(&cfg.ghd_config())?;
            if command == Command::Kernels {
                out.write("kernels.csv", |w| k.write_csv(w))?;
            } else {
                out.write("veff.csv", |w| {
                    let mut c = csv::Writer::from_writer(w);
                    c.write_record(["lambda", "v_eff", "v_eff_derivative"])?;
                    for (i, &x) in k.nodes().iter().enumerate() {
                        c.serialize((x, k.dressed.v_eff[i], k.v_eff_derivative(x)))?;
                    }
                    c.flush()
                })?;
            }
            println!(
                "{name}: {} nodes on [-{}, {}], stretch {:.6}, condition estimate {:.3e}",
                k.len(),
                k.grid.lambda_max,
                k.grid.lambda_max,
                k.alpha(),
                k.dressed.condition_estimate
            );
            Ok(true)
        }
        Command::Validate => {
            let checks = match validate_suite(&cfg.ghd_config(), tol) {
                Ok(c) => c,
                Err(e) => {
                    println!("validate: kernel construction failed at theta = {}: {e}", cfg.lattice.theta);
                    return Err(Failure::Check(e.to_string()));
                }
            };
            out.write("validate.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                for check in &checks {
                    c.serialize(check)?;
                }
                c.flush()
            })?;
            for c in &checks {
                println!(
                    "{:<16} residual={:.3e} tolerance={:.1e} {}",
                    c.name,
                    c.residual,
                    c.tolerance,
                    verdict(c.passed)
                );
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        _ => {
            let h = Harness::new(cfg.clone())?;
            let (stats, ok) = run_experiment(command, &h, out)?;
            out.stats(name, cfg, &stats, start)?;
            Ok(ok)
        }
    }
}

fn run_experiment(command: Command, h: &Harness, out: &Output) -> Result<(Vec<EnsembleStats>, bool), Failure> {
    let cfg = h.config();
    let tol = &cfg.tolerances;
    let mut stats = Vec::new();
    let mut all_ok = true;
    let mut record = |s: EnsembleStats, ok: bool, extra: String| {
        print_stats(&s, ok, &extra);
        all_ok &= ok;
        stats.push(s);
    };
    match command {
        Command::Dos => {
            let d = h.run_dos()?;
            let tv_ok = d.tv <= tol.dos_tv;
            let mom_ok = d.second_moment.z_score.is_some_and(|z| z.abs() <= tol.moment_se);
            out.write("dos.csv", |w| d.write_csv(w))?;
            record(d.second_moment, mom_ok && tv_ok, format!(" tv={:.4}", d.tv));
        }
        Command::Twopoint => {
            let mut obs = Vec::new();
            for &m in &cfg.m_list {
                for &n in &cfg.n_list {
                    for &tau in &cfg.tau_list {
                        obs.push(Observable::TwoPoint {
                            m,
                            n,
                            tau,
                            t_scale: cfg.t_scale,
                            f: cfg.test_function.clone(),
                        });
                    }
                }
            }
            for s in h.run_batch(&obs)? {
                let ok = s.z_score.is_some_and(|z| z.abs() <= tol.z_max)
                    || s.std_error == 0.0 && s.predicted == Some(s.mean);
                record(s, ok, String::new());
            }
        }
        Command::Current => {
            let mut obs = Vec::new();
            for &m in &cfg.m_list {
                for &q in &cfg.q_list {
                    for &tau in &cfg.tau_list {
                        obs.push(Observable::Current { m, q, q_prime: q, tau, t_scale: cfg.t_scale });
                    }
                }
            }
            for s in h.run_batch(&obs)? {
                let ok = relative_ok(&s, tol.relative);
                record(s, ok, String::new());
            }
        }
        Command::Q0 => {
            let mut obs = Vec::new();
            for &tau in &cfg.tau_list {
                obs.push(Observable::Q0 { tau, t_scale: cfg.t_scale });
                obs.push(Observable::Q0Increment { tau, t_scale: cfg.t_scale });
            }
            for s in h.run_batch(&obs)? {
                let ok = if s.id.starts_with("q0_variance") {
                    relative_ok(&s, tol.relative)
                } else if s.id.starts_with("q0_increment") {
                    s.std_error == 0.0 || s.z_score.is_some_and(|z| z.abs() <= tol.increment_se)
                } else {
                    s.z_score.is_some_and(|z| z.abs() <= tol.moment_se)
                };
                record(s, ok, String::new());
            }
        }
        Command::Tracer => {
            let [center, half] = cfg.lambda_bin;
            for &tau in &cfg.tau_list {
                let s = h.run_tracer(center, half, tau)?;
                let ok = tau == 0.0 && s.mean == 0.0 || relative_ok(&s, tol.relative);
                record(s, ok, String::new());
            }
        }
        Command::Linstat => {
            let s = h.run_linstat()?;
            let ok =
                relative_ok(&s, tol.linstat_relative) || s.predicted.is_some_and(|p| p.abs() < 1e-12) && s.mean == 0.0;
            record(s, ok, String::new());
        }
        Command::Scattering => {
            for &tau in &cfg.tau_list {
                let sc = h.run_scattering(tau)?;
                let ok = sc.median <= tol.scattering_median;
                record(sc.stats, ok, format!(" median={:.4} p95={:.4} max={:.4}", sc.median, sc.p95, sc.max));
            }
        }
        _ => unreachable!("not an ensemble experiment"),
    }
    Ok((stats, all_ok))
}

fn write_state<W: Write>(s: &TodaState, w: W) -> std::io::Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["site", "q", "p", "a"])?;
    for k in 0..s.len() {
        let a = s.a.get(k).map(|v| v.to_string()).unwrap_or_default();
        c.write_record([(s.n1 + k as i64).to_string(), s.q[k].to_string(), s.p()[k].to_string(), a])?;
    }
    c.flush()
}
