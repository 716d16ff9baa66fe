//! Text formats: the law config file and the environment CSV table.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{make_iid_law, make_mixing_law, Atom, BoundaryPolicy, Direction, EnvLaw, Environment, MarginalFamily, Mixing, SiteKernel, Window};
use crate::{Error, Real, Result};

fn join<T: Real>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_num<T: Real>(s: &str) -> Result<T> {
    s.trim().parse::<f64>().map(T::lit).map_err(|_| Error::Parse(format!("number `{}`", s.trim())))
}

fn parse_list<T: Real>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(parse_num).collect()
}

impl<T: Real> EnvLaw<T> {
    /// Serializes to `key = value` lines.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out += &format!("d = {}\n", self.dim());
        out += &format!("kappa = {}\n", self.kappa());
        out += &format!("mean_kernel = {}\n", join(self.mean_kernel().as_slice()));
        out += &format!("family = {}\n", self.family().name());
        out += &format!("delta = {}\n", self.delta());
        match self.family() {
            MarginalFamily::TwoPoint { pattern } | MarginalFamily::UniformInterval { pattern } => {
                out += &format!("pattern = {}\n", join(pattern));
            }
            MarginalFamily::FiniteSupport { atoms } => {
                let a: Vec<String> = atoms.iter().map(|a| format!("{}: {}", a.weight, join(&a.shape))).collect();
                out += &format!("atoms = {}\n", a.join("; "));
            }
        }
        match self.mixing() {
            Mixing::Iid => out += "mixing = iid\n",
            Mixing::Block { range, decay, amplitude, .. } => {
                out += "mixing = block\n";
                out += &format!("mixing.L0 = {range}\nmixing.g = {decay}\nmixing.C = {amplitude}\n");
            }
        }
        out
    }

    /// Parses the `key = value` format; `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
        }
        Self::from_config_map(&kv)
    }

    pub fn from_config_map(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Config(format!("missing key `{k}`")));
        let d: usize = get("d")?.parse().map_err(|_| Error::Parse("d".into()))?;
        let kappa: T = parse_num(get("kappa")?)?;
        let mean = SiteKernel::new(parse_list(get("mean_kernel")?)?)?;
        let delta: T = kv.get("delta").map(|s| parse_num(s)).transpose()?.unwrap_or(T::zero());
        let pattern: Vec<T> = kv.get("pattern").map(|s| parse_list(s)).transpose()?.unwrap_or_default();
        let family = match kv.get("family").map(String::as_str).unwrap_or("two-point") {
            "two-point" => MarginalFamily::TwoPoint { pattern },
            "uniform-interval" => MarginalFamily::UniformInterval { pattern },
            "finite-support" => {
                let atoms = get("atoms")?
                    .split(';')
                    .map(|a| {
                        let (w, s) = a.split_once(':').ok_or_else(|| Error::Parse(format!("atom `{a}`")))?;
                        Ok(Atom { weight: parse_num(w)?, shape: parse_list(s)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                MarginalFamily::FiniteSupport { atoms }
            }
            other => return Err(Error::Config(format!("unknown family `{other}`"))),
        };
        let block = match kv.get("mixing").map(String::as_str) {
            Some("iid") => false,
            Some("block") => true,
            Some(other) => return Err(Error::Config(format!("unknown mixing `{other}`"))),
            None => kv.contains_key("mixing.L0"),
        };
        if block {
            let range: usize = get("mixing.L0")?.parse().map_err(|_| Error::Parse("mixing.L0".into()))?;
            let g = parse_num(get("mixing.g")?)?;
            let c = parse_num(get("mixing.C")?)?;
            make_mixing_law(d, kappa, mean, family, delta, range, g, c)
        } else {
            make_iid_law(d, kappa, mean, family, delta)
        }
    }
}

/// Writes `x_1..x_d, p_+1, p_-1, ..., p_+d, p_-d`, one row per window site.
pub fn write_environment_csv<T: Real, W: Write>(env: &Environment<T>, mut w: W) -> Result<()> {
    let d = env.window().dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    header.extend(Direction::all(d).map(|e| format!("p_{e}")));
    writeln!(w, "{}", header.join(","))?;
    for (x, k) in env.sites() {
        let row: Vec<String> = x.iter().map(|c| c.to_string()).chain(k.iter().map(|p| p.to_string())).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads the CSV table back. The window is the bounding box of the rows,
/// which must cover it completely.
pub fn read_environment_csv<T: Real, R: BufRead>(
    r: R,
    policy: BoundaryPolicy,
    fill: Option<SiteKernel<T>>,
) -> Result<Environment<T>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty environment file".into()))??;
    let ncol = header.split(',').count();
    if ncol % 3 != 0 || ncol == 0 {
        return Err(Error::Parse(format!("header has {ncol} columns, expected 3d")));
    }
    let d = ncol / 3;
    let mut rows: Vec<(Vec<i64>, Vec<T>)> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != ncol {
            return Err(Error::Parse(format!("row `{line}` has {} cells", cells.len())));
        }
        let x = cells[..d]
            .iter()
            .map(|c| c.trim().parse::<i64>().map_err(|_| Error::Parse(format!("coordinate `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        let p = cells[d..].iter().map(|c| parse_num(c)).collect::<Result<Vec<T>>>()?;
        rows.push((x, p));
    }
    if rows.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let lo: Vec<i64> = (0..d).map(|k| rows.iter().map(|r| r.0[k]).min().unwrap()).collect();
    let hi: Vec<i64> = (0..d).map(|k| rows.iter().map(|r| r.0[k]).max().unwrap()).collect();
    let window = Window::new(lo.clone(), lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as usize).collect())?;
    if window.len() != rows.len() {
        return Err(Error::Parse(format!("{} rows do not tile a {}-site window", rows.len(), window.len())));
    }
    let mut probs = vec![T::nan(); window.len() * 2 * d];
    for (x, p) in rows {
        let i = window.index_of(&x).expect("inside bounding box");
        probs[i * 2 * d..(i + 1) * 2 * d].copy_from_slice(&p);
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::Parse("duplicate sites in environment table".into()));
    }
    Environment::from_table(window, probs, policy, fill)
}
