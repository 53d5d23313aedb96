//! Sweep configuration: flat `key = value` text.
//!
//! ```text
//! # comment
//! mode = theory                 # theory | simulate | glm-baseline | sample-complexity | check
//! rho = relu                    # relu | tanh | identity | hermite:[c1,c2,...]
//! sigma = identity
//! lambda = 1e-4
//! t = [0.001, 0.1]              # scalar or list
//! psi_d = [0.1, 0.5]
//! psi_n = 10
//! sweep = psi_p                 # psi_p | psi_n | t
//! grid = log(0.1, 100, 41)      # log(min, max, count) | linear(min, max, count) | [v1, v2, ...]
//! ```
//!
//! Simulation keys: `d`, `seeds`, `noise` (`exact` | `sampled`), `n_z`,
//! `mehler_order`, `n_test`, `n_mc_score`, `score`. Sample-complexity keys:
//! `epsilon`, `t_grid`. Others: `out`, `quick`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsm_curves::sim::NoiseAverage;
use dsm_curves::ActivationProfile;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Theory,
    Simulate,
    GlmBaseline,
    SampleComplexity,
    Check,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Theory => "theory",
            Mode::Simulate => "simulate",
            Mode::GlmBaseline => "glm-baseline",
            Mode::SampleComplexity => "sample-complexity",
            Mode::Check => "check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    PsiP,
    PsiN,
    T,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::PsiP => "psi_p",
            Axis::PsiN => "psi_n",
            Axis::T => "t",
        }
    }
}

/// Simulation block.
#[derive(Debug, Clone, Serialize)]
pub struct SimBlock {
    pub d: usize,
    pub seeds: Vec<u64>,
    pub noise: NoiseAverage,
    pub n_test: usize,
    pub n_mc_score: usize,
    pub score: bool,
}

/// A validated sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub mode: Mode,
    pub rho_spec: String,
    pub sigma_spec: String,
    #[serde(skip)]
    pub rho: ActivationProfile,
    #[serde(skip)]
    pub sigma: ActivationProfile,
    pub lambda: f64,
    /// Fixed t values; empty when t is swept.
    pub t: Vec<f64>,
    pub psi_d: Vec<f64>,
    pub psi_n: Option<f64>,
    pub psi_p: Option<f64>,
    pub axis: Option<Axis>,
    pub grid: Vec<f64>,
    pub sim: Option<SimBlock>,
    pub epsilon: f64,
    pub t_grid: Vec<f64>,
    pub out: Option<PathBuf>,
    pub quick: bool,
    /// Raw key/value pairs as written.
    pub source: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "mode",
    "rho",
    "sigma",
    "lambda",
    "t",
    "psi_d",
    "psi_n",
    "psi_p",
    "sweep",
    "grid",
    "d",
    "seeds",
    "noise",
    "n_z",
    "mehler_order",
    "n_test",
    "n_mc_score",
    "score",
    "epsilon",
    "t_grid",
    "out",
    "quick",
];

/// Default t grid of the sample-complexity criterion.
pub const DEFAULT_T_GRID: [f64; 3] = [0.001, 0.1, 0.5];

struct Entry {
    line: usize,
    value: String,
}

fn err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config { line, msg: msg.into() }
}

fn parse_f64(line: usize, key: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s.trim().parse().map_err(|_| err(line, format!("{key}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, format!("{key}: must be finite")));
    }
    Ok(v)
}

fn parse_usize(line: usize, key: &str, s: &str) -> Result<usize, CliError> {
    s.trim().parse().map_err(|_| err(line, format!("{key}: '{s}' is not a nonnegative integer")))
}

/// A scalar or `[a, b, ...]`.
fn parse_list(line: usize, key: &str, s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    match s.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
        Some(body) if body.trim().is_empty() => Ok(Vec::new()),
        Some(body) => body.split(',').map(|v| parse_f64(line, key, v)).collect(),
        None => Ok(vec![parse_f64(line, key, s)?]),
    }
}

/// `log(min, max, count)`, `linear(min, max, count)` or a list.
pub fn parse_grid(line: usize, s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    for (name, log) in [("log", true), ("linear", false)] {
        if let Some(body) =
            s.strip_prefix(name).and_then(|b| b.trim().strip_prefix('(')).and_then(|b| b.strip_suffix(')'))
        {
            let parts: Vec<&str> = body.split(',').collect();
            if parts.len() != 3 {
                return Err(err(line, format!("grid: {name}(min, max, count) takes three arguments")));
            }
            let lo = parse_f64(line, "grid", parts[0])?;
            let hi = parse_f64(line, "grid", parts[1])?;
            let count = parse_usize(line, "grid count", parts[2])?;
            if count == 0 {
                return Err(err(line, "grid: count must be >= 1"));
            }
            if log && !(lo > 0.0 && hi > 0.0) {
                return Err(err(line, "grid: log spacing needs positive bounds"));
            }
            if hi < lo {
                return Err(err(line, "grid: max < min"));
            }
            if count == 1 {
                return Ok(vec![lo]);
            }
            let step = |i: usize| i as f64 / (count - 1) as f64;
            return Ok((0..count)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == count - 1 {
                        hi
                    } else if log {
                        (lo.ln() + step(i) * (hi.ln() - lo.ln())).exp()
                    } else {
                        lo + step(i) * (hi - lo)
                    }
                })
                .collect());
        }
    }
    parse_list(line, "grid", s)
}

fn parse_bool(line: usize, key: &str, s: &str) -> Result<bool, CliError> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(err(line, format!("{key}: expected true/false, got '{other}'"))),
    }
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('"').and_then(|b| b.strip_suffix('"')).unwrap_or(s)
}

/// Splits text into key/value entries; rejects unknown and duplicate keys.
fn entries(text: &str) -> Result<BTreeMap<String, Entry>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(err(line, format!("unknown key '{key}'")));
        }
        if let Some(prev) = out.get(&key) {
            let prev: &Entry = prev;
            return Err(err(line, format!("duplicate key '{key}' (first set on line {})", prev.line)));
        }
        out.insert(key, Entry { line, value: unquote(value).to_string() });
    }
    Ok(out)
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let e = entries(text)?;
        let end = text.lines().count().max(1);
        let line_of = |k: &str| e.get(k).map_or(end, |x| x.line);
        let get = |k: &str| e.get(k).map(|x| (x.line, x.value.as_str()));

        let mode = match get("mode") {
            None => return Err(err(end, "missing key 'mode'")),
            Some((l, v)) => match v {
                "theory" => Mode::Theory,
                "simulate" => Mode::Simulate,
                "glm-baseline" => Mode::GlmBaseline,
                "sample-complexity" => Mode::SampleComplexity,
                "check" => Mode::Check,
                other => return Err(err(l, format!("mode: unknown mode '{other}'"))),
            },
        };
        let activation = |key: &str, default: &str| -> Result<(String, ActivationProfile), CliError> {
            let (l, spec) = get(key).unwrap_or((end, default));
            let p = ActivationProfile::parse(spec).map_err(|x| err(l, format!("{key}: {x}")))?;
            Ok((spec.to_string(), p))
        };
        let (rho_spec, rho) = activation("rho", "relu")?;
        let (sigma_spec, sigma) = activation("sigma", "identity")?;
        let scalar = |k: &str| get(k).map(|(l, v)| parse_f64(l, k, v)).transpose();
        let list = |k: &str| get(k).map(|(l, v)| parse_list(l, k, v)).transpose();
        let lambda = scalar("lambda")?.unwrap_or(1e-4);
        let axis = match get("sweep") {
            None => None,
            Some((l, v)) => Some(match v {
                "psi_p" => Axis::PsiP,
                "psi_n" => Axis::PsiN,
                "t" => Axis::T,
                other => return Err(err(l, format!("sweep: unknown axis '{other}' (psi_p | psi_n | t)"))),
            }),
        };
        let grid = match get("grid") {
            Some((l, v)) => parse_grid(l, v)?,
            None => Vec::new(),
        };
        let sim = if mode == Mode::Simulate {
            let (dl, dv) = get("d").ok_or_else(|| err(end, "simulate mode needs 'd'"))?;
            let d = parse_usize(dl, "d", dv)?;
            let seeds = match get("seeds") {
                None => return Err(err(end, "simulate mode needs 'seeds'")),
                Some((l, v)) => parse_list(l, "seeds", v)?
                    .into_iter()
                    .map(|s| {
                        if s >= 0.0 && s.fract() == 0.0 && s < 2f64.powi(53) {
                            Ok(s as u64)
                        } else {
                            Err(err(l, "seeds: need nonnegative integers"))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            let usize_key = |k: &str, default: usize| -> Result<usize, CliError> {
                get(k).map_or(Ok(default), |(l, v)| parse_usize(l, k, v))
            };
            let noise = match get("noise") {
                None | Some((_, "exact")) => NoiseAverage::Exact { order: usize_key("mehler_order", 3)? },
                Some((_, "sampled")) => NoiseAverage::Sampled { draws: usize_key("n_z", 8)? },
                Some((l, other)) => return Err(err(l, format!("noise: unknown '{other}' (exact | sampled)"))),
            };
            Some(SimBlock {
                d,
                seeds,
                noise,
                n_test: usize_key("n_test", 4096)?,
                n_mc_score: usize_key("n_mc_score", 4096)?,
                score: get("score").map_or(Ok(false), |(l, v)| parse_bool(l, "score", v))?,
            })
        } else {
            None
        };
        let cfg = SweepConfig {
            mode,
            rho_spec,
            sigma_spec,
            rho,
            sigma,
            lambda,
            t: list("t")?.unwrap_or_default(),
            psi_d: list("psi_d")?.unwrap_or_default(),
            psi_n: scalar("psi_n")?,
            psi_p: scalar("psi_p")?,
            axis,
            grid,
            sim,
            epsilon: scalar("epsilon")?.unwrap_or(0.2),
            t_grid: list("t_grid")?.unwrap_or_else(|| DEFAULT_T_GRID.to_vec()),
            out: get("out").map(|(_, v)| PathBuf::from(v)),
            quick: get("quick").map_or(Ok(false), |(l, v)| parse_bool(l, "quick", v))?,
            source: e.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect(),
        };
        cfg.validate(&line_of)?;
        Ok(cfg)
    }

    fn validate(&self, line_of: &dyn Fn(&str) -> usize) -> Result<(), CliError> {
        if self.mode == Mode::Check {
            return Ok(());
        }
        if !(self.lambda > 0.0) {
            return Err(err(line_of("lambda"), "lambda: must be > 0"));
        }
        let axis = self.axis.ok_or_else(|| err(line_of("sweep"), "missing key 'sweep' (exactly one swept axis)"))?;
        if self.grid.is_empty() {
            return Err(err(line_of("grid"), "grid: empty"));
        }
        if self.grid.iter().any(|&v| !(v > 0.0)) {
            return Err(err(line_of("grid"), "grid: values must be > 0"));
        }
        let fixed = |key: &str, present: bool, needed: bool| -> Result<(), CliError> {
            if axis.as_str() == key && present {
                return Err(err(line_of(key), format!("{key}: is the swept axis and cannot also be fixed")));
            }
            if axis.as_str() != key && needed && !present {
                return Err(err(line_of("sweep"), format!("missing key '{key}'")));
            }
            Ok(())
        };
        let needs_np = matches!(self.mode, Mode::Theory | Mode::Simulate);
        fixed("t", !self.t.is_empty(), self.mode != Mode::SampleComplexity)?;
        fixed("psi_n", self.psi_n.is_some(), needs_np)?;
        fixed("psi_p", self.psi_p.is_some(), needs_np || self.mode == Mode::SampleComplexity)?;
        if self.psi_d.is_empty() {
            return Err(err(line_of("psi_d"), "missing key 'psi_d'"));
        }
        for (key, vals) in [("t", &self.t), ("psi_d", &self.psi_d)] {
            if vals.iter().any(|&v| !(v > 0.0)) {
                return Err(err(line_of(key), format!("{key}: values must be > 0")));
            }
        }
        for (key, v) in [("psi_n", self.psi_n), ("psi_p", self.psi_p)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return Err(err(line_of(key), format!("{key}: must be > 0")));
            }
        }
        match self.mode {
            Mode::SampleComplexity => {
                if axis != Axis::PsiN {
                    return Err(err(line_of("sweep"), "sample-complexity mode sweeps psi_n"));
                }
                if self.grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(err(line_of("grid"), "grid: psi_n grid must be strictly ascending"));
                }
                if !(self.epsilon > 0.0) || self.t_grid.is_empty() || self.t_grid.iter().any(|&t| !(t > 0.0)) {
                    return Err(err(
                        line_of("epsilon"),
                        "epsilon must be > 0 and t_grid a nonempty list of positive times",
                    ));
                }
            }
            Mode::GlmBaseline if axis != Axis::T => {
                return Err(err(line_of("sweep"), "glm-baseline mode sweeps t"));
            }
            Mode::Simulate => {
                let s = self.sim.as_ref().expect("simulate block parsed");
                if axis == Axis::T {
                    return Err(err(line_of("sweep"), "simulate mode sweeps psi_p or psi_n"));
                }
                if s.d == 0 || s.seeds.is_empty() || s.n_test == 0 || s.n_mc_score == 0 {
                    return Err(err(line_of("d"), "d, n_test, n_mc_score must be >= 1 and seeds nonempty"));
                }
                if let NoiseAverage::Sampled { draws: 0 } = s.noise {
                    return Err(err(line_of("n_z"), "n_z: must be >= 1"));
                }
                if s.score && !self.sigma.is_identity() {
                    return Err(err(line_of("score"), "score: the empirical score error needs sigma = identity"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Grid values as seen by the t axis or the fixed t list.
    pub fn t_values(&self) -> &[f64] {
        if self.axis == Some(Axis::T) {
            &self.grid
        } else {
            &self.t
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "mode = theory\nrho = relu\nsigma = identity\nt = [0.1]\npsi_d = 0.5\npsi_n = 10\nsweep = psi_p\ngrid = log(0.1, 10, 3)\n";

    #[test]
    fn parses_a_theory_sweep() {
        let c = SweepConfig::parse(BASE).unwrap();
        assert_eq!(c.mode, Mode::Theory);
        assert_eq!(c.axis, Some(Axis::PsiP));
        assert_eq!(c.grid.len(), 3);
        assert!((c.grid[0] - 0.1).abs() < 1e-15 && (c.grid[1] - 1.0).abs() < 1e-12 && c.grid[2] == 10.0);
        assert_eq!(c.lambda, 1e-4);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_lines() {
        match SweepConfig::parse(&format!("{BASE}bogus = 1\n")) {
            Err(CliError::Config { line, msg }) => {
                assert_eq!(line, 9);
                assert!(msg.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        match SweepConfig::parse(&format!("{BASE}t = 0.5\n")) {
            Err(CliError::Config { line: 9, msg }) => assert!(msg.contains("line 4")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_empty_grid_and_double_axis() {
        assert!(SweepConfig::parse(&BASE.replace("log(0.1, 10, 3)", "[]")).is_err());
        assert!(SweepConfig::parse(&format!("{BASE}psi_p = 2\n")).is_err());
        assert!(SweepConfig::parse(&BASE.replace("sweep = psi_p\n", "")).is_err());
    }

    #[test]
    fn simulate_block() {
        let text = BASE.replace("theory", "simulate") + "d = 100\nseeds = [1, 2]\nnoise = sampled\nn_z = 4\n";
        let c = SweepConfig::parse(&text).unwrap();
        let s = c.sim.unwrap();
        assert_eq!(s.seeds, vec![1, 2]);
        assert_eq!(s.noise, NoiseAverage::Sampled { draws: 4 });
        assert!(SweepConfig::parse(&BASE.replace("theory", "simulate")).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid(1, "linear(1, 3, 3)").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid(1, "[1, 2.5]").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid(1, "log(0, 1, 3)").is_err());
        assert!(parse_grid(1, "log(1, 2)").is_err());
    }

    #[test]
    fn hermite_activation_and_comments() {
        let text = BASE.replace("sigma = identity", "sigma = hermite:[0.975, 0.223]  # weakly nonlinear");
        let c = SweepConfig::parse(&text).unwrap();
        assert_eq!(c.sigma_spec, "hermite:[0.975, 0.223]");
        assert!((c.sigma.mu1() - 0.975).abs() < 1e-3);
    }
}
