//! Declarative experiment runs.
//!
//! One TOML file fully determines a run. Every emitted row carries the hash of
//! the fields that can change a value (thread count and output directory are
//! excluded), so reruns at any thread count produce byte-identical CSV.

mod e1;
mod e2;
mod e3;

pub use e1::{run_e1_rate_gap, E1Delta, E1Report};
pub use e2::{classify_zero_set, run_e2_zero_set, E2Report, ZeroSet};
pub use e3::{run_e3_identity_suite, E3Check, E3Report};

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lattice::{make_iid_law, make_mixing_law, EnvLaw, MarginalFamily, SiteKernel};
use crate::{par, Error, Result};

/// Marker written by a green (or red) E3 run; E1/E2 read it when gated.
pub const E3_MARKER: &str = "e3_suite.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    E1,
    E2,
    E3,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::E1 => "e1",
            ExperimentId::E2 => "e2",
            ExperimentId::E3 => "e3",
        })
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" | "rate-gap" => Ok(ExperimentId::E1),
            "e2" | "zero-set" => Ok(ExperimentId::E2),
            "e3" | "suite" => Ok(ExperimentId::E3),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Environment law as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub d: usize,
    pub kappa: f64,
    /// Defaults to the uniform kernel.
    #[serde(default)]
    pub mean_kernel: Option<Vec<f64>>,
    /// `two-point` or `uniform-interval`.
    #[serde(default = "default_family")]
    pub family: String,
    pub delta: f64,
    /// Finite dependence range `L0`; absent means iid.
    #[serde(default)]
    pub mixing_range: Option<usize>,
    #[serde(default = "one")]
    pub mixing_decay: f64,
    #[serde(default = "half")]
    pub mixing_amplitude: f64,
}

fn default_family() -> String {
    "two-point".into()
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl LawSpec {
    pub fn iid(d: usize, kappa: f64, mean_kernel: Option<Vec<f64>>, delta: f64) -> Self {
        LawSpec {
            d,
            kappa,
            mean_kernel,
            family: default_family(),
            delta,
            mixing_range: None,
            mixing_decay: 1.0,
            mixing_amplitude: 0.5,
        }
    }

    pub fn build(&self) -> Result<EnvLaw<f64>> {
        self.build_with_delta(self.delta)
    }

    pub fn build_with_delta(&self, delta: f64) -> Result<EnvLaw<f64>> {
        let mean = match &self.mean_kernel {
            Some(p) => SiteKernel::new(p.clone())?,
            None => SiteKernel::uniform(self.d),
        };
        let family = match self.family.as_str() {
            "two-point" => MarginalFamily::two_point(),
            "uniform-interval" => MarginalFamily::uniform_interval(),
            other => return Err(Error::Config(format!("unknown family `{other}`"))),
        };
        match self.mixing_range {
            None => make_iid_law(self.d, self.kappa, mean, family, delta),
            Some(r) => make_mixing_law(self.d, self.kappa, mean, family, delta, r, self.mixing_decay, self.mixing_amplitude),
        }
    }
}

/// Uniform grid on `[lo, hi]^dim`; the dimension comes from the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        GridSpec { lo, hi, points }
    }

    pub fn step(&self) -> f64 {
        if self.points <= 1 {
            0.0
        } else {
            (self.hi - self.lo) / (self.points - 1) as f64
        }
    }

    pub fn build(&self, dim: usize) -> Vec<Vec<f64>> {
        crate::mgf::product_grid(dim, self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub law: LawSpec,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: GridSpec,
    #[serde(default = "default_eta_grid")]
    pub eta_grid: GridSpec,
    #[serde(default = "default_x_grid")]
    pub x_grid: GridSpec,
    #[serde(default = "default_u_ladder")]
    pub u_ladder: Vec<f64>,
    #[serde(default = "default_n_ladder")]
    pub n_ladder: Vec<usize>,
    #[serde(default = "default_delta_ladder")]
    pub delta_ladder: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
    /// 0 uses the rayon default.
    #[serde(default)]
    pub thread_count: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Zero-set thresholds; the first is the reported one, the rest form the
    /// stability sweep.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Refuse E1/E2 unless a passing E3 marker sits in `output_dir`.
    #[serde(default)]
    pub require_e3: bool,
    /// Sensitivity hook: added to every component of `theta_z` in E3.
    #[serde(default)]
    pub corrupt_theta_z: f64,
}

fn default_theta_grid() -> GridSpec {
    GridSpec::new(-1.0, 1.0, 11)
}

fn default_eta_grid() -> GridSpec {
    GridSpec::new(-0.8, 0.8, 5)
}

fn default_x_grid() -> GridSpec {
    GridSpec::new(-0.5, 0.5, 11)
}

fn default_u_ladder() -> Vec<f64> {
    crate::rate::U_LADDER.to_vec()
}

fn default_n_ladder() -> Vec<usize> {
    vec![64]
}

fn default_delta_ladder() -> Vec<f64> {
    vec![0.0, 0.05, 0.1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_thresholds() -> Vec<f64> {
    vec![0.02, 0.01, 0.03]
}

/// Fields hashed into `config_hash`.
#[derive(Serialize)]
struct Hashed<'a> {
    id: ExperimentId,
    law: &'a LawSpec,
    theta_grid: GridSpec,
    eta_grid: GridSpec,
    x_grid: GridSpec,
    u_ladder: &'a [f64],
    n_ladder: &'a [usize],
    delta_ladder: &'a [f64],
    replicas: usize,
    master_seed: u64,
    thresholds: &'a [f64],
    corrupt_theta_z: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("u_ladder", self.u_ladder.is_empty()),
            ("n_ladder", self.n_ladder.is_empty()),
            ("delta_ladder", self.delta_ladder.is_empty()),
            ("thresholds", self.thresholds.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("{name} must be nonempty")));
            }
        }
        if self.u_ladder.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::Config("u_ladder entries must be positive".into()));
        }
        if self.n_ladder.contains(&0) {
            return Err(Error::Config("n_ladder entries must be positive".into()));
        }
        for g in [&self.theta_grid, &self.eta_grid, &self.x_grid] {
            if g.points == 0 || !(g.lo <= g.hi) {
                return Err(Error::Config(format!("bad grid {g:?}")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the value-determining fields.
    pub fn config_hash(&self) -> String {
        let h = Hashed {
            id: self.id,
            law: &self.law,
            theta_grid: self.theta_grid,
            eta_grid: self.eta_grid,
            x_grid: self.x_grid,
            u_ladder: &self.u_ladder,
            n_ladder: &self.n_ladder,
            delta_ladder: &self.delta_ladder,
            replicas: self.replicas,
            master_seed: self.master_seed,
            thresholds: &self.thresholds,
            corrupt_theta_z: self.corrupt_theta_z,
        };
        let bytes = serde_json::to_vec(&h).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Small, fast defaults for each experiment.
    pub fn default_for(id: ExperimentId) -> Self {
        let (law, n_ladder, replicas) = match id {
            ExperimentId::E1 => (LawSpec::iid(2, 0.05, None, 0.05), vec![32], 100),
            ExperimentId::E2 => (LawSpec::iid(1, 0.1, None, 0.0), vec![250, 1000], 1),
            ExperimentId::E3 => (LawSpec::iid(2, 0.1, None, 0.1), vec![4], 10_000),
        };
        ExperimentConfig {
            id,
            law,
            theta_grid: default_theta_grid(),
            eta_grid: default_eta_grid(),
            x_grid: default_x_grid(),
            u_ladder: default_u_ladder(),
            n_ladder,
            delta_ladder: default_delta_ladder(),
            replicas,
            master_seed: 2024,
            thread_count: 0,
            output_dir: default_output_dir(),
            thresholds: default_thresholds(),
            require_e3: false,
            corrupt_theta_z: 0.0,
        }
    }
}

/// One output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub seed: u64,
    pub metric: String,
    /// `name=value` pairs joined by `;`.
    pub params: String,
    pub value: f64,
    /// Comparison value, when the row is a check.
    pub reference: Option<f64>,
    pub ci: Option<f64>,
    pub pass: Option<bool>,
    /// Free-form flags joined by `;`.
    pub flags: String,
    /// Seconds; JSON only, never in the CSV.
    pub wall_time: f64,
}

/// Builder used by the runners.
pub(crate) struct RowSink<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    start: Instant,
    pub rows: Vec<ResultRow>,
}

impl<'a> RowSink<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        RowSink { cfg, hash: cfg.config_hash(), start: Instant::now(), rows: Vec::new() }
    }

    pub fn push(&mut self, metric: &str, params: &[(&str, String)], value: f64) -> &mut ResultRow {
        let params = params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        self.push_joined(metric, params, value)
    }

    /// `params` already in `k=v;k=v` form.
    pub fn push_joined(&mut self, metric: &str, params: String, value: f64) -> &mut ResultRow {
        self.rows.push(ResultRow {
            experiment: self.cfg.id,
            config_hash: self.hash.clone(),
            seed: self.cfg.master_seed,
            metric: metric.into(),
            params,
            value,
            reference: None,
            ci: None,
            pass: None,
            flags: String::new(),
            wall_time: self.start.elapsed().as_secs_f64(),
        });
        self.rows.last_mut().unwrap()
    }
}

pub(crate) fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(" "))
}

/// Everything a run produced, ready for [`emit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub master_seed: u64,
    pub git_describe: String,
    pub rows: Vec<ResultRow>,
    /// Experiment-specific report.
    pub report: serde_json::Value,
}

impl ExperimentOutput {
    pub(crate) fn new<R: Serialize>(cfg: &ExperimentConfig, rows: Vec<ResultRow>, report: &R) -> Self {
        ExperimentOutput {
            experiment: cfg.id,
            config_hash: cfg.config_hash(),
            master_seed: cfg.master_seed,
            git_describe: git_describe().into(),
            rows,
            report: serde_json::to_value(report).expect("report serializes"),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "experiment,config_hash,seed,metric,params,value,reference,ci,pass,flags")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.experiment,
                r.config_hash,
                r.seed,
                r.metric,
                r.params,
                r.value,
                opt(r.reference),
                opt(r.ci),
                r.pass.map_or(String::new(), |p| p.to_string()),
                r.flags
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// `git describe` of the build, or `unknown`.
pub fn git_describe() -> &'static str {
    option_env!("RWRE_GIT_DESCRIBE").unwrap_or("unknown")
}

/// Writes `<id>.csv` and `<id>.json` into `dir`, creating it if needed.
pub fn emit(output: &ExperimentOutput, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", output.experiment));
    let json = dir.join(format!("{}.json", output.experiment));
    output.write_csv(std::io::BufWriter::new(fs::File::create(&csv)?))?;
    let text = serde_json::to_string_pretty(output).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&json, text)?;
    Ok((csv, json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct E3Marker {
    config_hash: String,
    master_seed: u64,
    all_pass: bool,
}

fn check_gate(dir: &Path) -> Result<()> {
    let path = dir.join(E3_MARKER);
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::GateFailed(format!("no identity-suite marker at {}; run e3 first", path.display())))?;
    let marker: E3Marker = serde_json::from_str(&text).map_err(|e| Error::GateFailed(format!("unreadable marker: {e}")))?;
    if !marker.all_pass {
        return Err(Error::GateFailed(format!("identity suite {} did not pass", marker.config_hash)));
    }
    Ok(())
}

/// Runs the configured experiment on a pool of `thread_count` workers,
/// enforcing the E3 gate when asked. Does not write files except the E3
/// marker; use [`emit`] for the tables.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if cfg.require_e3 && cfg.id != ExperimentId::E3 {
        check_gate(&cfg.output_dir)?;
    }
    par::with_threads(cfg.thread_count, || match cfg.id {
        ExperimentId::E1 => {
            let (report, rows) = run_e1_rate_gap(cfg)?;
            Ok(ExperimentOutput::new(cfg, rows, &report))
        }
        ExperimentId::E2 => {
            let (report, rows) = run_e2_zero_set(cfg)?;
            Ok(ExperimentOutput::new(cfg, rows, &report))
        }
        ExperimentId::E3 => {
            let (report, rows) = run_e3_identity_suite(cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let marker = E3Marker { config_hash: cfg.config_hash(), master_seed: cfg.master_seed, all_pass: report.all_pass };
            fs::write(cfg.output_dir.join(E3_MARKER), serde_json::to_string_pretty(&marker).unwrap())?;
            Ok(ExperimentOutput::new(cfg, rows, &report))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let text = r#"
            id = "e2"
            replicas = 1
            master_seed = 5
            [law]
            d = 1
            kappa = 0.1
            mean_kernel = [0.7, 0.3]
            delta = 0.0
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.id, ExperimentId::E2);
        assert_eq!(cfg.u_ladder, crate::rate::U_LADDER.to_vec());
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.law.build().unwrap().mean_kernel().as_slice(), &[0.7, 0.3]);
    }

    #[test]
    fn empty_ladder_rejected() {
        let mut cfg = ExperimentConfig::default_for(ExperimentId::E1);
        cfg.n_ladder.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml_str("id = \"e9\"").is_err());
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = ExperimentConfig::default_for(ExperimentId::E3);
        let mut b = a.clone();
        b.thread_count = 8;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.master_seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn gate_blocks_without_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default_for(ExperimentId::E2);
        cfg.output_dir = dir.path().join("fresh");
        cfg.require_e3 = true;
        assert!(matches!(run_experiment(&cfg), Err(Error::GateFailed(_))));
        fs::create_dir_all(&cfg.output_dir).unwrap();
        let m = E3Marker { config_hash: "x".into(), master_seed: 0, all_pass: false };
        fs::write(cfg.output_dir.join(E3_MARKER), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(run_experiment(&cfg), Err(Error::GateFailed(_))));
    }

    #[test]
    fn emit_creates_missing_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default_for(ExperimentId::E1);
        let mut sink = RowSink::new(&cfg);
        sink.push("probe", &[("a", "1".into())], 0.5).ci = Some(0.1);
        let out = ExperimentOutput::new(&cfg, sink.rows, &());
        let (csv, json) = emit(&out, &dir.path().join("a/b")).unwrap();
        let text = fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("experiment,config_hash,seed,metric"));
        assert!(text.contains("e1,") && text.contains(",probe,a=1,0.5,,0.1,,"));
        assert!(!text.contains("wall"));
        let parsed: ExperimentOutput = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(parsed.rows.len(), 1);
    }
}
