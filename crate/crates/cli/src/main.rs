use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rwre_core::experiments::{emit, run_experiment, ExperimentConfig, ExperimentId};
use rwre_core::lattice::{
    disorder_of, read_environment_csv, sample_environment, validate_environment, write_environment_csv, AuditTarget,
    BoundaryPolicy, EnvLaw, LawField, SignVector, SiteKernel, Window,
};
use rwre_core::mgf::{lambda_a_boundary, legendre, product_grid};
use rwre_core::rate::{estimate_iq, U_LADDER};
use rwre_core::renewal::{simulate_qz, uz_theta};
use rwre_core::rng::{derive_seed, replica_rng};
use rwre_core::walk::{l1_speed, simulate_quenched};

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks in random environments: simulation, rates, tilts and experiment runs")]
struct Cli {
    /// Experiment config (TOML). Also supplies the law for other subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "RWRE_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, validate or audit environments.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Quenched walks in sampled environments.
    Simulate(SimulateArgs),
    /// Quenched rate estimate at one velocity.
    RateIq(RateArgs),
    /// Boundary log-MGFs, quenched and annealed.
    Mgf(MgfArgs),
    /// Legendre transform of a log-MGF table.
    Legendre(LegendreArgs),
    /// Tilt constants and a tilted walk with its renewals.
    Qz(QzArgs),
    /// The identity suite (experiment e3).
    Suite,
    /// Run an experiment by id (e1, e2, e3).
    Experiment { id: String },
}

#[derive(Args)]
struct LawArg {
    /// Law file in `key = value` format.
    #[arg(long)]
    law: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Draw the environment on a centered box.
    Sample {
        #[command(flatten)]
        law: LawArg,
        #[arg(long, default_value_t = 4)]
        radius: usize,
    },
    /// Check normalization and ellipticity of an environment CSV.
    Validate {
        input: PathBuf,
        #[arg(long)]
        kappa: f64,
    },
    /// Disorder of a law, or of an environment CSV.
    Disorder {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    law: LawArg,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    law: LawArg,
    /// Velocity, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "200")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    u: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
}

#[derive(Args)]
struct MgfArgs {
    #[command(flatten)]
    law: LawArg,
    /// Sign pattern, e.g. `1,-1`; defaults to all positive.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    signs: Vec<i8>,
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// `lo,hi,points` per axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,1,11")]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
}

#[derive(Args)]
struct LegendreArgs {
    /// Table with `theta_i` columns and an `estimate` column.
    input: PathBuf,
    /// `lo,hi,points` per axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0.5,11")]
    x: Vec<f64>,
}

#[derive(Args)]
struct QzArgs {
    /// Mean kernel, comma separated, `2d` entries.
    #[arg(long, value_delimiter = ',')]
    mean: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Vec<f64>,
    /// Steps of the tilted walk; 0 prints only the constants.
    #[arg(long, default_value_t = 0)]
    steps: usize,
    /// Renewal run length L; runs occur at rate about k^L.
    #[arg(long, default_value_t = 1)]
    run_length: usize,
    #[arg(long, default_value_t = 0.1)]
    zeta: f64,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    rwre_core::par::with_threads(threads, || dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Env(cmd) => env_command(cli, cmd, seed),
        Command::Simulate(a) => {
            let law = load_law(cli, &a.law)?;
            let mut w = sink(cli, "trajectories.csv")?;
            writeln!(w, "replica,step,{}", coords("x", law.dim()))?;
            for r in 0..a.replicas {
                let field = LawField::new(&law, derive_seed(seed, r as u64));
                let mut rng = replica_rng(seed, r as u64);
                let traj = simulate_quenched(&field, &vec![0; law.dim()], a.steps, &mut rng)?;
                for (k, x) in traj.positions().iter().enumerate() {
                    writeln!(w, "{r},{k},{}", join(x))?;
                }
                eprintln!("replica {r}: |X_n|_1 / n = {:.6}", l1_speed(&traj));
            }
            Ok(())
        }
        Command::RateIq(a) => {
            let law = load_law(cli, &a.law)?;
            let u = if a.u.is_empty() { U_LADDER.to_vec() } else { a.u.clone() };
            let est = estimate_iq(&law, &a.eta, &u, &a.n, a.replicas, seed)?;
            est.write_csv(sink(cli, "rate_iq.csv")?)?;
            eprintln!("I_q({:?}) ~ {} (stderr {})", est.eta, est.extrapolated, est.ci);
            Ok(())
        }
        Command::Mgf(a) => {
            let law = load_law(cli, &a.law)?;
            let s = if a.signs.is_empty() { SignVector::all_positive(law.dim()) } else { SignVector::new(a.signs.clone())? };
            let thetas = grid(&a.theta, s.dim() - 1)?;
            let mgf = lambda_a_boundary(&law, &s, &thetas, a.n, a.replicas, seed)?;
            mgf.annealed.write_csv(sink(cli, "mgf_annealed.csv")?)?;
            mgf.quenched_mean.write_csv(sink(cli, "mgf_quenched.csv")?)?;
            Ok(())
        }
        Command::Legendre(a) => {
            let (thetas, values) = read_mgf_table(&a.input)?;
            let k = thetas.first().map_or(0, Vec::len);
            let conj = legendre(&thetas, &values, &grid(&a.x, k)?)?;
            conj.write_csv(sink(cli, "legendre.csv")?)?;
            if conj.any_edge() {
                eprintln!("warning: some suprema sit on the theta-grid edge (flagged rows)");
            }
            Ok(())
        }
        Command::Qz(a) => {
            let mean = SiteKernel::new(a.mean.clone())?;
            let tilt = uz_theta(&mean, &a.z)?;
            let mut w = sink(cli, "qz.json")?;
            writeln!(
                w,
                "{}",
                serde_json::json!({
                    "z": tilt.z,
                    "c_z": tilt.c_z,
                    "u_z": tilt.u_z.as_slice(),
                    "d_z": tilt.d_z,
                    "theta_z": tilt.theta_z,
                    "max_residual": tilt.residuals().max(),
                })
            )?;
            if a.steps > 0 {
                let mut rng = replica_rng(seed, 0);
                let run = simulate_qz(&tilt, None, a.steps, None, a.run_length, a.zeta, &mut rng)?;
                run.renewals.write_csv(sink(cli, "renewals.csv")?)?;
                eprintln!("{} renewals, beta_0 infinite: {}", run.renewals.taus.len(), run.beta0_infinite);
            }
            Ok(())
        }
        Command::Suite => experiment(cli, ExperimentId::E3),
        Command::Experiment { id } => experiment(cli, id.parse()?),
    }
}

fn env_command(cli: &Cli, cmd: &EnvCommand, seed: u64) -> Result<()> {
    match cmd {
        EnvCommand::Sample { law, radius } => {
            let law = load_law(cli, law)?;
            let env = sample_environment(&law, &Window::centered(law.dim(), *radius), seed)?;
            write_environment_csv(&env, sink(cli, "environment.csv")?)?;
            if env.clamp_events() > 0 {
                eprintln!("warning: {} kernel entries were clamped at kappa", env.clamp_events());
            }
        }
        EnvCommand::Validate { input, kappa } => {
            let env = read_env(input)?;
            let report = validate_environment(&env, *kappa);
            for v in &report.violations {
                println!("{:?}: {:?}", v.site, v.kind);
            }
            if !report.is_valid() {
                bail!("{} violations", report.violations.len());
            }
            println!("valid: {} sites", env.window().len());
        }
        EnvCommand::Disorder { law, input } => {
            let m = match input {
                Some(p) => disorder_of(AuditTarget::Env { env: &read_env(p)?, mean: None }),
                None => disorder_of(AuditTarget::Law(&load_law(cli, law)?)),
            };
            println!("disorder = {}{}", m.value, if m.mean_estimated { " (mean estimated from the window)" } else { "" });
        }
    }
    Ok(())
}

fn experiment(cli: &Cli, id: ExperimentId) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default_for(id),
    };
    if cfg.id != id {
        bail!("config is for experiment {}, not {id}", cfg.id);
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.thread_count = t;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    let out = run_experiment(&cfg)?;
    let (csv, json) = emit(&out, &cfg.output_dir)?;
    let failed = out.rows.iter().filter(|r| r.pass == Some(false)).count();
    println!("{}: {} rows -> {} , {} (config {})", id, out.rows.len(), csv.display(), json.display(), &out.config_hash[..12]);
    if failed > 0 {
        bail!("{failed} checks failed");
    }
    Ok(())
}

fn load_law(cli: &Cli, arg: &LawArg) -> Result<EnvLaw<f64>> {
    if let Some(p) = &arg.law {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(EnvLaw::from_config_str(&text)?);
    }
    if let Some(p) = &cli.config {
        return Ok(ExperimentConfig::load(p)?.law.build()?);
    }
    Err(anyhow!("no law given: pass --law FILE or --config FILE"))
}

fn read_env(path: &Path) -> Result<rwre_core::lattice::Environment<f64>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_environment_csv(BufReader::new(f), BoundaryPolicy::Strict, None)?)
}

/// File under `--out`, or stdout.
fn sink(cli: &Cli, name: &str) -> Result<Box<dyn Write>> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Box::new(io::BufWriter::new(fs::File::create(dir.join(name))?)))
        }
        None => Ok(Box::new(io::stdout())),
    }
}

fn grid(spec: &[f64], dim: usize) -> Result<Vec<Vec<f64>>> {
    match spec {
        [lo, hi, pts] if *pts >= 1.0 && pts.fract() == 0.0 => Ok(product_grid(dim, *lo, *hi, *pts as usize)),
        _ => bail!("grid must be `lo,hi,points`, got {spec:?}"),
    }
}

fn read_mgf_table(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty table"))??;
    let cols: Vec<&str> = header.split(',').collect();
    let theta_cols: Vec<usize> = (0..cols.len()).filter(|&i| cols[i].starts_with("theta_")).collect();
    let est = cols.iter().position(|c| *c == "estimate").ok_or_else(|| anyhow!("no `estimate` column"))?;
    let (mut thetas, mut values) = (Vec::new(), Vec::new());
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let num = |i: usize| cells.get(i).ok_or_else(|| anyhow!("short row `{line}`"))?.trim().parse::<f64>().map_err(|e| anyhow!("{e} in `{line}`"));
        thetas.push(theta_cols.iter().map(|&i| num(i)).collect::<Result<Vec<_>>>()?);
        values.push(num(est)?);
    }
    Ok((thetas, values))
}

fn coords(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
}

fn join(x: &[i64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
