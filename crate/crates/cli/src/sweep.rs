//! Runs a sweep and writes the CSV table and its JSON sidecar.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dsm_curves::curves::{self, BaselineMethod, CurvePoint};
use dsm_curves::glm;
use dsm_curves::sim::{self, NoiseAverage, SimConfig, SimResult};
use dsm_curves::ModelPoint;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Axis, Mode, SweepConfig};
use crate::CliError;

/// Version line of the CSV format.
pub const SCHEMA: &str = "# schema=1";

/// Per-run options that do not belong to the sweep itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub jobs: usize,
    pub out: PathBuf,
    pub mem_budget: u64,
}

/// A rendered table: header plus string rows in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// `(row index, message)` for every failed grid point.
    pub errors: Vec<(usize, String)>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new(), errors: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>, error: Option<String>) {
        debug_assert_eq!(row.len() + 1, self.header.len());
        let mut row = row;
        if let Some(e) = &error {
            self.errors.push((self.rows.len(), e.clone()));
        }
        row.push(error.unwrap_or_default());
        self.rows.push(row);
    }

    /// CSV text: schema line, header, rows.
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?)
            .expect("csv writer emits UTF-8");
        Ok(format!("{SCHEMA}\n{body}"))
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

/// Summary written next to the CSV.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub version: &'static str,
    pub schema: u32,
    pub config: &'a SweepConfig,
    pub csv: String,
    pub rows: usize,
    pub failed_points: Vec<FailedPoint>,
    pub jobs: usize,
    pub mem_budget_bytes: u64,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct FailedPoint {
    pub row: usize,
    pub error: String,
}

/// Outcome of [`run`].
#[derive(Debug)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub rows: usize,
    pub errors: Vec<(usize, String)>,
}

/// Sidecar path: the CSV path with a `.json` extension.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Computes the table, then writes the CSV and sidecar.
pub fn run(cfg: &SweepConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let table = compute(cfg, opts)?;
    let csv_text = table.to_csv()?;
    if let Some(dir) = opts.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&opts.out, csv_text)?;
    let json_path = sidecar_path(&opts.out);
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION"),
        schema: 1,
        config: cfg,
        csv: opts.out.display().to_string(),
        rows: table.rows.len(),
        failed_points: table
            .errors
            .iter()
            .map(|(row, error)| FailedPoint { row: *row, error: error.clone() })
            .collect(),
        jobs: opts.jobs,
        mem_budget_bytes: opts.mem_budget,
        started_unix_s: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(RunSummary { csv_path: opts.out.clone(), json_path, rows: table.rows.len(), errors: table.errors })
}

/// Builds the table on a pool of `opts.jobs` workers; row order follows the grid.
pub fn compute(cfg: &SweepConfig, opts: &RunOptions) -> Result<Table, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Invalid(format!("worker pool: {e}")))?;
    pool.install(|| match cfg.mode {
        Mode::Theory => Ok(theory(cfg)),
        Mode::Simulate => simulate(cfg, opts.mem_budget),
        Mode::GlmBaseline => Ok(glm_baseline(cfg)),
        Mode::SampleComplexity => Ok(sample_complexity(cfg)),
        Mode::Check => Err(CliError::Invalid("check mode has no table; use `curves check`".into())),
    })
}

/// One theory grid point.
#[derive(Debug, Clone, Copy)]
struct GridPoint {
    t: f64,
    psi_d: f64,
    psi_n: f64,
    psi_p: f64,
}

fn grid_points(cfg: &SweepConfig) -> Vec<GridPoint> {
    let axis = cfg.axis.expect("validated");
    let mut out = Vec::new();
    let ts: Vec<f64> = if axis == Axis::T { vec![f64::NAN] } else { cfg.t.clone() };
    for &t in &ts {
        for &psi_d in &cfg.psi_d {
            for &x in &cfg.grid {
                let mut g =
                    GridPoint { t, psi_d, psi_n: cfg.psi_n.unwrap_or(f64::NAN), psi_p: cfg.psi_p.unwrap_or(f64::NAN) };
                match axis {
                    Axis::T => g.t = x,
                    Axis::PsiN => g.psi_n = x,
                    Axis::PsiP => g.psi_p = x,
                }
                out.push(g);
            }
        }
    }
    out
}

fn model_point(cfg: &SweepConfig, g: &GridPoint) -> dsm_curves::Result<ModelPoint> {
    ModelPoint::new(g.t, cfg.lambda, g.psi_d, g.psi_n, g.psi_p, cfg.rho.clone(), cfg.sigma.clone())
}

/// Baselines for each distinct (t, ψ_D), computed once.
fn baselines(cfg: &SweepConfig, points: &[GridPoint]) -> Vec<Result<(f64, BaselineMethod), String>> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for g in points {
        if !keys.iter().any(|&(t, d)| t == g.t && d == g.psi_d) {
            keys.push((g.t, g.psi_d));
        }
    }
    let computed: Vec<_> = keys
        .par_iter()
        .map(|&(t, psi_d)| {
            let g = GridPoint { t, psi_d, psi_n: 1.0, psi_p: 1.0 };
            model_point(cfg, &g).and_then(|p| curves::exact_test_error(&p)).map_err(|e| e.to_string())
        })
        .collect();
    points
        .iter()
        .map(|g| {
            let i = keys.iter().position(|&(t, d)| t == g.t && d == g.psi_d).expect("key present");
            computed[i].clone()
        })
        .collect()
}

const THEORY_HEADER: [&str; 17] = [
    "mode",
    "index",
    "rho",
    "sigma",
    "lambda",
    "t",
    "psi_d",
    "psi_n",
    "psi_p",
    "a",
    "h",
    "e_test",
    "e_train",
    "e_test_star",
    "e_score",
    "baseline_method",
    "residual",
];

fn theory_cells(cfg: &SweepConfig, index: usize, g: &GridPoint, c: Option<&CurvePoint>) -> Vec<String> {
    let a = (-g.t).exp();
    let mut row = vec![
        cfg.mode.as_str().to_string(),
        index.to_string(),
        cfg.rho_spec.clone(),
        cfg.sigma_spec.clone(),
        fmt_f64(cfg.lambda),
        fmt_f64(g.t),
        fmt_f64(g.psi_d),
        fmt_f64(g.psi_n),
        fmt_f64(g.psi_p),
        fmt_f64(a),
        fmt_f64(1.0 - a * a),
    ];
    match c {
        Some(c) => row.extend([
            fmt_f64(c.e_test),
            fmt_f64(c.e_train),
            fmt_f64(c.e_test_star),
            fmt_f64(c.e_score),
            c.baseline_method.as_str().to_string(),
            fmt_f64(c.residual),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 6)),
    }
    row
}

fn curve_points(cfg: &SweepConfig, points: &[GridPoint]) -> Vec<Result<CurvePoint, String>> {
    let bl = baselines(cfg, points);
    points
        .par_iter()
        .zip(bl.par_iter())
        .map(|(g, b)| {
            let b = b.clone().map_err(|e| format!("baseline: {e}"))?;
            let p = model_point(cfg, g).map_err(|e| e.to_string())?;
            CurvePoint::with_baseline(&p, b).map_err(|e| e.to_string())
        })
        .collect()
}

fn theory(cfg: &SweepConfig) -> Table {
    let points = grid_points(cfg);
    let curves = curve_points(cfg, &points);
    let mut header = THEORY_HEADER.to_vec();
    header.push("error");
    let mut table = Table::new(header);
    for (i, (g, c)) in points.iter().zip(&curves).enumerate() {
        table.push(theory_cells(cfg, i, g, c.as_ref().ok()), c.as_ref().err().cloned());
    }
    table
}

fn glm_baseline(cfg: &SweepConfig) -> Table {
    let points = grid_points(cfg);
    let rows: Vec<_> = points
        .par_iter()
        .map(|g| {
            let est = glm::mmse_details(g.t, g.psi_d, &cfg.sigma).map_err(|e| e.to_string());
            let linear = if cfg.sigma.is_identity() {
                let p = model_point(cfg, &GridPoint { psi_n: 1.0, psi_p: 1.0, ..*g });
                p.and_then(|p| curves::exact_test_error_linear(&p)).ok()
            } else {
                None
            };
            (est, linear)
        })
        .collect();
    let mut table = Table::new(vec![
        "mode",
        "index",
        "sigma",
        "t",
        "psi_d",
        "a",
        "h",
        "eta",
        "q_star",
        "boundary",
        "mmse_per_d",
        "e_test_star_glm",
        "e_test_star_mp",
        "error",
    ]);
    for (i, (g, (est, linear))) in points.iter().zip(rows).enumerate() {
        let a = (-g.t).exp();
        let h = 1.0 - a * a;
        let mut row = vec![
            cfg.mode.as_str().to_string(),
            i.to_string(),
            cfg.sigma_spec.clone(),
            fmt_f64(g.t),
            fmt_f64(g.psi_d),
            fmt_f64(a),
            fmt_f64(h),
        ];
        match &est {
            Ok(e) => row.extend([
                fmt_f64(e.eta),
                fmt_f64(e.saddle.q_star),
                e.saddle.boundary.to_string(),
                fmt_f64(e.mmse),
                fmt_f64(a * a / h * e.mmse),
            ]),
            Err(_) => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row.push(opt(linear));
        table.push(row, est.err());
    }
    table
}

fn sample_complexity(cfg: &SweepConfig) -> Table {
    let psi_p = cfg.psi_p.expect("validated");
    let results: Vec<_> = cfg
        .psi_d
        .par_iter()
        .map(|&psi_d| {
            let base = ModelPoint::new(
                cfg.t_grid[0],
                cfg.lambda,
                psi_d,
                cfg.grid[0],
                psi_p,
                cfg.rho.clone(),
                cfg.sigma.clone(),
            );
            base.and_then(|b| curves::sample_complexity(&b, cfg.epsilon, &cfg.t_grid, &cfg.grid))
                .map_err(|e| e.to_string())
        })
        .collect();
    let t_grid = cfg.t_grid.iter().map(|&t| fmt_f64(t)).collect::<Vec<_>>().join(";");
    let mut table = Table::new(vec![
        "mode",
        "index",
        "rho",
        "sigma",
        "lambda",
        "psi_d",
        "psi_p",
        "epsilon",
        "t_grid",
        "psi_n",
        "worst_h2_e_score",
        "meets",
        "psi_n_star",
        "stable",
        "error",
    ]);
    let mut index = 0;
    for (&psi_d, res) in cfg.psi_d.iter().zip(results) {
        for (j, &psi_n) in cfg.grid.iter().enumerate() {
            let mut row = vec![
                cfg.mode.as_str().to_string(),
                index.to_string(),
                cfg.rho_spec.clone(),
                cfg.sigma_spec.clone(),
                fmt_f64(cfg.lambda),
                fmt_f64(psi_d),
                fmt_f64(psi_p),
                fmt_f64(cfg.epsilon),
                t_grid.clone(),
                fmt_f64(psi_n),
            ];
            match &res {
                Ok(sc) => row.extend([
                    fmt_f64(sc.worst[j]),
                    (sc.worst[j] < cfg.epsilon).to_string(),
                    opt(sc.psi_n),
                    sc.stable.to_string(),
                ]),
                Err(_) => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            table.push(row, res.as_ref().err().cloned());
            index += 1;
        }
    }
    table
}

/// One simulation task: a fixed (t, ψ_D) and either one ψ_n with the whole
/// nested ψ_p grid, or one ψ_p.
struct SimTask {
    points: Vec<GridPoint>,
    config: SimConfig,
}

fn sim_tasks(cfg: &SweepConfig, mem_budget: u64) -> Vec<SimTask> {
    let s = cfg.sim.as_ref().expect("validated");
    let points = grid_points(cfg);
    let mut tasks: Vec<SimTask> = Vec::new();
    for g in points {
        let nested = cfg.axis == Some(Axis::PsiP);
        if let Some(task) = tasks.last_mut().filter(|t| nested && t.points[0].t == g.t && t.points[0].psi_d == g.psi_d)
        {
            task.points.push(g);
            continue;
        }
        tasks.push(SimTask {
            points: vec![g],
            config: SimConfig::from_ratios(s.d, 1.0, 1.0, &[1.0], 1.0, 1.0, cfg.rho.clone(), cfg.sigma.clone()),
        });
    }
    for task in &mut tasks {
        let g = task.points[0];
        let ps: Vec<f64> = task.points.iter().map(|p| p.psi_p).collect();
        let mut c =
            SimConfig::from_ratios(s.d, g.psi_d, g.psi_n, &ps, g.t, cfg.lambda, cfg.rho.clone(), cfg.sigma.clone());
        c.noise = s.noise;
        c.n_test = s.n_test;
        c.n_mc_score = s.n_mc_score;
        c.score = s.score;
        c.mem_budget = mem_budget;
        task.config = c;
    }
    tasks
}

fn noise_label(n: NoiseAverage) -> String {
    match n {
        NoiseAverage::Exact { order } => format!("exact:{order}"),
        NoiseAverage::Sampled { draws } => format!("sampled:{draws}"),
    }
}

fn simulate(cfg: &SweepConfig, mem_budget: u64) -> Result<Table, CliError> {
    let s = cfg.sim.as_ref().expect("validated");
    let tasks = sim_tasks(cfg, mem_budget);
    for t in &tasks {
        t.config.validate()?;
    }
    let all_points: Vec<GridPoint> = tasks.iter().flat_map(|t| t.points.iter().copied()).collect();
    let theory = curve_points(cfg, &all_points);
    let sims: Vec<Result<Vec<SimResult>, String>> =
        tasks.par_iter().map(|t| sim::simulate(&t.config, &s.seeds).map_err(|e| e.to_string())).collect();
    let mut header = THEORY_HEADER.to_vec();
    header.extend([
        "d",
        "big_d",
        "n",
        "p",
        "noise",
        "n_test",
        "n_mc_score",
        "seed",
        "e_test_mc",
        "e_test_mc_se",
        "e_train_mc",
        "e_train_mc_se",
        "e_score_mc",
        "e_score_mc_se",
        "e_star_mc",
        "e_star_mc_se",
        "error",
    ]);
    let mut table = Table::new(header);
    let mut flat = 0;
    let mut index = 0;
    for (task, res) in tasks.iter().zip(&sims) {
        for (k, g) in task.points.iter().enumerate() {
            let th = &theory[flat];
            flat += 1;
            let c = &task.config;
            let prefix = |seed: String| -> Vec<String> {
                let mut row = theory_cells(cfg, index, g, th.as_ref().ok());
                row.extend([
                    c.d.to_string(),
                    c.big_d.to_string(),
                    c.n.to_string(),
                    c.p[k].to_string(),
                    noise_label(c.noise),
                    c.n_test.to_string(),
                    c.n_mc_score.to_string(),
                    seed,
                ]);
                row
            };
            let theory_err = th.as_ref().err().map(|e| format!("theory: {e}"));
            match res {
                Ok(r) => {
                    let r = &r[k];
                    for (seed, sp) in r.seeds.iter().zip(&r.per_seed) {
                        let mut row = prefix(seed.to_string());
                        row.extend([
                            fmt_f64(sp.e_test.mean),
                            fmt_f64(sp.e_test.se),
                            fmt_f64(sp.e_train.mean),
                            fmt_f64(sp.e_train.se),
                            opt(sp.score.map(|x| x.e_score.mean)),
                            opt(sp.score.map(|x| x.e_score.se)),
                            opt(sp.score.map(|x| x.e_star.mean)),
                            opt(sp.score.map(|x| x.e_star.se)),
                        ]);
                        table.push(row, theory_err.clone());
                    }
                    let mut row = prefix("all".into());
                    row.extend([
                        fmt_f64(r.e_test.mean),
                        fmt_f64(r.e_test.se),
                        fmt_f64(r.e_train.mean),
                        fmt_f64(r.e_train.se),
                        opt(r.e_score.map(|x| x.mean)),
                        opt(r.e_score.map(|x| x.se)),
                        opt(r.e_star.map(|x| x.mean)),
                        opt(r.e_star.map(|x| x.se)),
                    ]);
                    table.push(row, theory_err.clone());
                }
                Err(e) => {
                    let mut row = prefix("all".into());
                    row.extend(std::iter::repeat_n(String::new(), 8));
                    table.push(row, Some(format!("simulation: {e}")));
                }
            }
            index += 1;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "");
        let v: f64 = fmt_f64(std::f64::consts::PI).parse().unwrap();
        assert_eq!(v, std::f64::consts::PI);
    }

    #[test]
    fn csv_quotes_activation_specs() {
        let mut t = Table::new(vec!["sigma", "error"]);
        t.push(vec!["hermite:[0.975,0.223]".into()], None);
        let text = t.to_csv().unwrap();
        assert_eq!(text, "# schema=1\nsigma,error\n\"hermite:[0.975,0.223]\",\n");
    }
}
