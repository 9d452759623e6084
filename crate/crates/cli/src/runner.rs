use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mvpp_core::diagnostics::{seed_sweep, tv_to_reference, w1_to_reference, GridCdf, W1_GRID_POINTS, W1_GRID_SDS};
use mvpp_core::format::{f17, to_json_string};
use mvpp_core::models::{self_interacting_qsd, ModelSpec, SelfInteractingRun};
use mvpp_core::qsd::{power_iteration_qsd, ReferenceDistribution, Support, DEFAULT_MAX_ITER, DEFAULT_TOL};
use mvpp_core::{MvppState, RngStream, Space, StepRecord, WeightedMeasure};
use serde_json::{json, Value};

use crate::config::{parse_config, parse_suite, ExperimentConfig, Mode, SuiteEntry};
use crate::error::{CliError, Result, EXIT_OK, EXIT_TOLERANCE};
use crate::zoo::{build, matrix_from_json, Built, Model};

/// Environment variable capping the replica thread pool.
pub const THREADS_ENV: &str = "MVPP_THREADS";

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paranoid: bool,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn threads_from_env() -> Result<Option<usize>> {
        match std::env::var(THREADS_ENV) {
            Err(_) => Ok(None),
            Ok(s) => s
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|t| *t > 0)
                .map(Some)
                .ok_or_else(|| CliError::param(THREADS_ENV, format!("expected a positive integer, got `{s}`"))),
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub model: String,
    pub seeds: Vec<u64>,
    pub final_distances: Vec<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Summary {
    fn new(model: &str, seeds: Vec<u64>, final_distances: Vec<f64>, tolerance: Option<f64>) -> Self {
        let (mean, max) = if final_distances.is_empty() {
            (None, None)
        } else {
            let mean = final_distances.iter().sum::<f64>() / final_distances.len() as f64;
            (Some(mean), Some(final_distances.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        };
        // No tolerance means nothing to fail; a tolerance without a distance
        // cannot pass.
        let pass = match (tolerance, max) {
            (None, _) => true,
            (Some(t), Some(m)) => m < t,
            (Some(_), None) => false,
        };
        Self { model: model.to_string(), seeds, final_distances, mean, max, tolerance, pass }
    }

    pub fn to_json(&self) -> String {
        to_json_string(&json!({
            "model": self.model,
            "seeds": self.seeds,
            "final_distances": self.final_distances,
            "mean": self.mean,
            "max": self.max,
            "tolerance": self.tolerance,
            "pass": self.pass,
        }))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: Some(e.line()),
            field: None,
            message: e.to_string(),
        })?;
        let field = |k: &str| v.get(k).ok_or_else(|| CliError::field(k, "missing from summary"));
        let floats = |k: &str| -> Result<Vec<f64>> {
            field(k)?
                .as_array()
                .ok_or_else(|| CliError::field(k, "expected an array"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| CliError::field(k, "expected numbers")))
                .collect()
        };
        let seeds = field("seeds")?
            .as_array()
            .ok_or_else(|| CliError::field("seeds", "expected an array"))?
            .iter()
            .map(|x| x.as_u64().ok_or_else(|| CliError::field("seeds", "expected integers")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: field("model")?.as_str().ok_or_else(|| CliError::field("model", "expected a string"))?.to_string(),
            seeds,
            final_distances: floats("final_distances")?,
            mean: field("mean")?.as_f64(),
            max: field("max")?.as_f64(),
            tolerance: field("tolerance")?.as_f64(),
            pass: field("pass")?.as_bool().ok_or_else(|| CliError::field("pass", "expected a boolean"))?,
        })
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_TOLERANCE
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&read_file(path)?)
}

/// Distance from the normalized composition to the reference: TV on
/// discrete spaces, W1 on the line.
pub fn distance(m: &WeightedMeasure, reference: &ReferenceDistribution) -> Result<f64> {
    match (m.space(), &reference.support) {
        (Space::Discrete, _) => Ok(tv_to_reference(&m.normalize()?, reference)?),
        (Space::Euclidean { dim: 1 }, Support::Gaussian { mean, sd }) => {
            // Grid quadrature straight from the atoms; avoids copying a
            // measure with millions of path points.
            let mut grid = GridCdf::new(mean - W1_GRID_SDS * sd, mean + W1_GRID_SDS * sd, W1_GRID_POINTS)?;
            for (p, w) in m.atoms() {
                grid.add(p.coords().map_or(f64::NAN, |c| c[0]), w);
            }
            Ok(grid.w1(|x| reference.cdf(x)))
        }
        _ => Ok(w1_to_reference(&m.normalize()?, reference)?),
    }
}

fn trace_header(with_distance: bool) -> String {
    let mut h = StepRecord::CSV_HEADER.to_string();
    if with_distance {
        h.push_str(",distance");
    }
    h.push('\n');
    h
}

fn trace_line(r: &StepRecord, distance: Option<f64>) -> String {
    let mut line =
        format!("{},{},{},{},{}", r.n, r.drawn_color.csv_field(), f17(r.delta_mass), f17(r.m_mass), f17(r.mp_mass));
    if let Some(d) = distance {
        line.push(',');
        line.push_str(&f17(d));
    }
    line.push('\n');
    line
}

/// Run one urn replica; with a sink, every `observe_stride`-th step (and
/// the last) is written as a trace row.
fn simulate_urn(
    spec: &ModelSpec,
    reference: Option<&ReferenceDistribution>,
    cfg: &ExperimentConfig,
    seed: u64,
    paranoid: bool,
    mut sink: Option<&mut dyn Write>,
    sink_path: &Path,
) -> Result<(MvppState, Option<f64>)> {
    let mut s = spec.init(seed)?.with_paranoid(paranoid);
    let io = |e| CliError::io(sink_path, e);
    if let Some(w) = sink.as_deref_mut() {
        w.write_all(trace_header(reference.is_some()).as_bytes()).map_err(io)?;
    }
    let mut last = None;
    for n in 1..=cfg.n_steps {
        let r = s.step()?;
        let observed = n % cfg.observe_stride == 0 || n == cfg.n_steps;
        if let (Some(w), true) = (sink.as_deref_mut(), observed) {
            let d = reference.map(|re| distance(s.m(), re)).transpose()?;
            last = d;
            w.write_all(trace_line(&r, d).as_bytes()).map_err(io)?;
        }
    }
    let final_distance = match (last, reference) {
        (Some(d), _) => Some(d),
        (None, Some(re)) => Some(distance(s.m(), re)?),
        (None, None) => None,
    };
    Ok((s, final_distance))
}

fn simulate_self_interacting(
    spec: &mvpp_core::models::KilledDiffusionSpec,
    start: &[f64],
    reference: Option<&ReferenceDistribution>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SelfInteractingRun> {
    if cfg.n_steps == 0 {
        return Err(CliError::field("n_steps", "the self-interacting process needs at least one step"));
    }
    let mut rng = RngStream::new(seed);
    let t_max = cfg.n_steps as f64 * spec.dt;
    let checkpoints = (cfg.n_steps / cfg.observe_stride).max(1) as usize;
    Ok(self_interacting_qsd(spec, t_max, start, &mut rng, reference, checkpoints)?)
}

fn occupation_json(run: &SelfInteractingRun) -> String {
    const BINS: usize = 200;
    let occ = &run.occupation;
    let xs = &occ.positions;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / BINS as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; BINS];
    for &x in xs {
        counts[(((x - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    to_json_string(&json!({
        "space": "euclidean",
        "dim": occ.dim,
        "points": occ.len(),
        "point_weight": occ.weight,
        "jumps": run.jumps,
        "histogram": {"lo": lo, "hi": hi, "counts": counts},
    }))
}

fn final_distance_only(model: &Model, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let reference = model.reference.as_ref().ok_or_else(|| CliError::param("reference", "model has no reference"))?;
    match &model.built {
        Built::Urn(spec) => {
            let (_, d) = simulate_urn(spec, Some(reference), cfg, seed, false, None, Path::new(""))?;
            Ok(d.expect("reference present"))
        }
        Built::SelfInteracting { spec, start } => {
            let run = simulate_self_interacting(spec, start, Some(reference), cfg, seed)?;
            Ok(run.trace.rows.last().map_or(f64::NAN, |r| r.distance))
        }
    }
}

/// Single replica: writes `trace.csv`, `final_measure.json` and
/// `summary.json` to the output directory.
pub fn run(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<Summary> {
    ov.apply(&mut cfg);
    let model = build(&cfg)?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let trace_path = dir.join("trace.csv");
    let reference = model.reference.as_ref();
    let (final_measure, d) = match &model.built {
        Built::Urn(spec) => {
            let file = File::create(&trace_path).map_err(|e| CliError::io(&trace_path, e))?;
            let mut w = BufWriter::new(file);
            let (s, d) = simulate_urn(spec, reference, &cfg, cfg.seed, ov.paranoid, Some(&mut w), &trace_path)?;
            w.flush().map_err(|e| CliError::io(&trace_path, e))?;
            (s.m().to_json(), d)
        }
        Built::SelfInteracting { spec, start } => {
            let run = simulate_self_interacting(spec, start, reference, &cfg, cfg.seed)?;
            let mut csv = String::from("step,time,jumps,distance\n");
            for r in &run.trace.rows {
                let jumps = r.extra.get("jumps").copied().unwrap_or(0.0);
                csv.push_str(&format!("{},{},{},{}\n", r.step, f17(r.mass_per_step), jumps, f17(r.distance)));
            }
            write_file(&trace_path, csv.as_bytes())?;
            let d = reference.and_then(|_| run.trace.rows.last().map(|r| r.distance));
            (occupation_json(&run), d)
        }
    };
    write_file(&dir.join("final_measure.json"), final_measure.as_bytes())?;
    let summary = Summary::new(&cfg.model, vec![cfg.seed], d.into_iter().collect(), cfg.tolerance);
    write_file(&dir.join("summary.json"), summary.to_json().as_bytes())?;
    Ok(summary)
}

/// Replicas over the configured seeds, in parallel; writes `summary.json`.
pub fn sweep(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<Summary> {
    ov.apply(&mut cfg);
    if cfg.mode != Mode::Accept {
        cfg.mode = Mode::Sweep;
    }
    let model = build(&cfg)?;
    let seeds = cfg.replica_seeds();
    // A self-interacting replica stores its whole path; run those one at a time.
    let threads = match model.built {
        Built::SelfInteracting { .. } => Some(1),
        Built::Urn(_) => ov.threads,
    };
    let sweep = seed_sweep(&seeds, threads, |seed| {
        final_distance_only(&model, &cfg, seed).map_err(|e| match e {
            CliError::Model(inner) => inner,
            other => mvpp_core::Error::InvalidParams(other.to_string()),
        })
    })?;
    let summary = Summary::new(&cfg.model, sweep.seeds, sweep.final_distances, cfg.tolerance);
    write_file(&cfg.output_dir.join("summary.json"), summary.to_json().as_bytes())?;
    Ok(summary)
}

/// A sweep that must meet its tolerance.
pub fn accept(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<Summary> {
    if cfg.tolerance.is_none() {
        return Err(CliError::field("tolerance", "accept mode needs a tolerance"));
    }
    cfg.mode = Mode::Accept;
    sweep(cfg, ov)
}

/// Run every experiment of a suite into `<out>/<name>/`, printing one table
/// row per experiment. Failures (including model errors) are recorded and
/// the suite carries on; the exit code is 3 if anything failed.
pub fn accept_suite(entries: &[SuiteEntry], ov: &Overrides, table: &mut dyn Write) -> Result<i32> {
    let base = ov.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let stdout = |e| CliError::io("<stdout>", e);
    writeln!(table, "{:<24} {:>6} {:>12} {:>12} {:>9}  result", "experiment", "seeds", "max", "tolerance", "time")
        .map_err(stdout)?;
    let mut all = true;
    for entry in entries {
        let t = Instant::now();
        let per = Overrides { out: Some(base.join(&entry.name)), ..ov.clone() };
        let line = match accept(entry.config.clone(), &per) {
            Ok(s) => {
                all &= s.pass;
                format!(
                    "{:<24} {:>6} {:>12} {:>12} {:>8.1}s  {}",
                    entry.name,
                    s.seeds.len(),
                    s.max.map_or("-".into(), |m| format!("{m:.6}")),
                    s.tolerance.map_or("-".into(), |t| format!("{t}")),
                    t.elapsed().as_secs_f64(),
                    if s.pass { "PASS" } else { "FAIL" }
                )
            }
            Err(e) => {
                all = false;
                format!(
                    "{:<24} {:>6} {:>12} {:>12} {:>8.1}s  FAIL ({e})",
                    entry.name,
                    "-",
                    "-",
                    "-",
                    t.elapsed().as_secs_f64()
                )
            }
        };
        writeln!(table, "{line}").map_err(stdout)?;
    }
    writeln!(table, "{} experiments, {}", entries.len(), if all { "all passed" } else { "some failed" })
        .map_err(stdout)?;
    Ok(if all { EXIT_OK } else { EXIT_TOLERANCE })
}

/// `accept --config PATH`: a suite document (with `experiments`) or a
/// single experiment config.
pub fn accept_path(path: &Path, ov: &Overrides, table: &mut dyn Write) -> Result<i32> {
    let text = read_file(path)?;
    let is_suite = serde_json::from_str::<Value>(&text).map(|v| v.get("experiments").is_some()).unwrap_or(false);
    if is_suite {
        accept_suite(&parse_suite(&text)?, ov, table)
    } else {
        let summary = accept(parse_config(&text)?, ov)?;
        writeln!(table, "{}", summary.to_json()).map_err(|e| CliError::io("<stdout>", e))?;
        Ok(summary.exit_code())
    }
}

/// Quasi-stationary law and eigenvalue of a sub-stochastic matrix read from
/// a CSV file (one row per line) or from `params.matrix` of a JSON config.
pub fn qsd_oracle(path: &Path) -> Result<String> {
    let text = read_file(path)?;
    let g = if path.extension().is_some_and(|e| e == "json") {
        let cfg = parse_config(&text)?;
        let m =
            cfg.params.get("matrix").ok_or_else(|| CliError::param("params.matrix", "missing required parameter"))?;
        matrix_from_json(m).map_err(|msg| CliError::param("params.matrix", msg))?
    } else {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        reader
            .records()
            .enumerate()
            .map(|(i, rec)| {
                let rec =
                    rec.map_err(|e| CliError::Parse { line: Some(i + 1), field: None, message: e.to_string() })?;
                rec.iter()
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| CliError::Parse {
                            line: Some(i + 1),
                            field: None,
                            message: format!("`{s}` is not a number"),
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?
    };
    let r = power_iteration_qsd(&g, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(to_json_string(&json!({
        "nu": r.pmf_vec().unwrap_or(&[]),
        "theta0": r.eigenvalue,
        "warnings": r.warnings,
    })))
}
