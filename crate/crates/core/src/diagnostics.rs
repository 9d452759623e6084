//! Distances between simulated and reference measures, convergence traces,
//! runtime assumption probes and goodness-of-fit tests.

use std::collections::BTreeMap;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::MvppState;
use crate::error::{Error, Result};
use crate::kernels::LyapunovSpec;
use crate::measure::{ColorPoint, Space, WeightedMeasure};
use crate::qsd::{ReferenceDistribution, Support};

/// Slack on "is a probability measure" checks.
pub const NORMALIZATION_SLACK: f64 = 1e-6;

/// Grid resolution for W1 against a continuous cdf.
pub const W1_GRID_POINTS: usize = 10_000;

/// Half-width of that grid in standard deviations.
pub const W1_GRID_SDS: f64 = 8.0;

fn check_normalized(m: &WeightedMeasure) -> Result<()> {
    let mass = m.total_mass();
    if (mass - 1.0).abs() > NORMALIZATION_SLACK {
        return Err(Error::NotNormalized { mass });
    }
    Ok(())
}

fn label(p: &ColorPoint) -> Result<u64> {
    p.as_discrete().ok_or(Error::SpaceMismatch { point: p.clone(), expected: "discrete".into() })
}

/// `½ Σ_x |p(x) − q(x)|` over the union of supports.
pub fn tv_distance(p: &WeightedMeasure, q: &WeightedMeasure) -> Result<f64> {
    check_normalized(p)?;
    check_normalized(q)?;
    let mut diff: BTreeMap<u64, f64> = BTreeMap::new();
    for (x, w) in p.atoms() {
        *diff.entry(label(x)?).or_default() += w;
    }
    for (x, w) in q.atoms() {
        *diff.entry(label(x)?).or_default() -= w;
    }
    Ok((0.5 * diff.values().map(|d| d.abs()).sum::<f64>()).min(1.0))
}

/// TV between a normalized discrete measure and a discrete reference pmf.
pub fn tv_to_reference(p: &WeightedMeasure, reference: &ReferenceDistribution) -> Result<f64> {
    let pmf = reference.pmf_vec().ok_or(Error::DimensionUnsupported { dim: 1 })?;
    check_normalized(p)?;
    let mut diff: BTreeMap<u64, f64> = pmf.iter().enumerate().map(|(x, w)| (x as u64, -w)).collect();
    for (x, w) in p.atoms() {
        *diff.entry(label(x)?).or_default() += w;
    }
    Ok((0.5 * diff.values().map(|d| d.abs()).sum::<f64>()).min(1.0))
}

/// Points of a one-dimensional measure as reals.
fn real_atoms(m: &WeightedMeasure) -> Result<Vec<(f64, f64)>> {
    match m.space() {
        Space::Discrete => m.atoms().map(|(p, w)| Ok((label(p)? as f64, w))).collect(),
        Space::Euclidean { dim: 1 } => Ok(m.atoms().map(|(p, w)| (p.coords().unwrap()[0], w)).collect()),
        Space::Euclidean { dim } => Err(Error::DimensionUnsupported { dim }),
    }
}

/// `∫ |F_p − F_q|` computed exactly from the sorted atoms.
pub fn wasserstein1_1d(p: &WeightedMeasure, q: &WeightedMeasure) -> Result<f64> {
    check_normalized(p)?;
    check_normalized(q)?;
    let mut events: Vec<(f64, f64)> = real_atoms(p)?;
    events.extend(real_atoms(q)?.into_iter().map(|(x, w)| (x, -w)));
    Ok(w1_from_signed_atoms(events))
}

/// `∫ |F|` for the cdf difference `F` of a zero-mass signed atomic measure.
fn w1_from_signed_atoms(mut events: Vec<(f64, f64)>) -> f64 {
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gap_cdf = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        gap_cdf += pair[0].1;
        total += gap_cdf.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// W1 between a normalized one-dimensional measure and a reference: exact
/// for discrete references, by trapezoidal quadrature over a grid of
/// [`W1_GRID_POINTS`] spanning ±[`W1_GRID_SDS`] standard deviations for
/// Gaussian ones.
pub fn w1_to_reference(p: &WeightedMeasure, reference: &ReferenceDistribution) -> Result<f64> {
    check_normalized(p)?;
    let atoms = real_atoms(p)?;
    match &reference.support {
        Support::Discrete(pmf) => {
            let mut events = atoms;
            events.extend(pmf.iter().enumerate().map(|(x, w)| (x as f64, -w)));
            Ok(w1_from_signed_atoms(events))
        }
        Support::Gaussian { mean, sd } => {
            let mut grid = GridCdf::new(mean - W1_GRID_SDS * sd, mean + W1_GRID_SDS * sd, W1_GRID_POINTS)?;
            for (x, w) in atoms {
                grid.add(x, w);
            }
            Ok(grid.w1(|x| reference.cdf(x)))
        }
    }
}

/// Empirical cdf tabulated on a fixed grid, updated in O(1) per atom.
/// Lets long runs report W1 against a continuous cdf without sorting.
#[derive(Clone, Debug)]
pub struct GridCdf {
    lo: f64,
    step: f64,
    /// `bins[i]` holds the weight in `(g_{i−1}, g_i]`; `bins[0]` everything
    /// up to `g_0`.
    bins: Vec<f64>,
    total: f64,
}

impl GridCdf {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(hi > lo) || points < 2 {
            return Err(Error::InvalidParams(format!("bad grid [{lo}, {hi}] with {points} points")));
        }
        Ok(Self { lo, step: (hi - lo) / (points - 1) as f64, bins: vec![0.0; points], total: 0.0 })
    }

    pub fn add(&mut self, x: f64, w: f64) {
        self.total += w;
        let pos = ((x - self.lo) / self.step).ceil();
        if pos < self.bins.len() as f64 {
            self.bins[pos.max(0.0) as usize] += w;
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `∫ |F_emp − F|` over the grid, with `F_emp` normalized by the total.
    pub fn w1(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        if self.total <= 0.0 {
            return f64::NAN;
        }
        let mut acc = 0.0;
        let mut prev = None;
        let mut cum = 0.0;
        for (i, b) in self.bins.iter().enumerate() {
            cum += b;
            let x = self.lo + i as f64 * self.step;
            let d = (cum / self.total - cdf(x)).abs();
            if let Some(pd) = prev {
                acc += 0.5 * (pd + d) * self.step;
            }
            prev = Some(d);
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub distance: f64,
    pub mass_per_step: f64,
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::InvalidParams(format!(
                    "trace steps must increase: {} after {}",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn window(&self, tail: bool) -> &[TraceRow] {
        let k = (self.rows.len() / 10).max(1).min(self.rows.len());
        if tail {
            &self.rows[self.rows.len() - k..]
        } else {
            &self.rows[..k]
        }
    }

    /// Mean distance over the first and last 10% of rows.
    pub fn head_tail_distance(&self) -> Result<(f64, f64)> {
        if self.rows.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.distance).sum::<f64>() / rows.len() as f64;
        Ok((mean(self.window(false)), mean(self.window(true))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassRate {
    pub last: f64,
    /// Mean of `m_n(E)/n` over the last 10% of rows.
    pub tail_mean: f64,
}

pub fn mass_rate(trace: &ConvergenceTrace) -> Result<MassRate> {
    let last = trace.rows.last().ok_or(Error::EmptyTrace)?.mass_per_step;
    let tail = trace.window(true);
    Ok(MassRate { last, tail_mean: tail.iter().map(|r| r.mass_per_step).sum::<f64>() / tail.len() as f64 })
}

#[derive(Clone, Debug)]
pub struct LyapunovProbe {
    /// Largest `Q_x·V − θV(x) − K` over the support of `m_n P`.
    pub max_margin: f64,
    pub max_relative_margin: f64,
    pub worst: Option<ColorPoint>,
    /// `m_n P · V^{1/q} / n`.
    pub running: f64,
}

pub fn lyapunov_probe(state: &MvppState, spec: &LyapunovSpec) -> Result<LyapunovProbe> {
    let kernel = state.kernel();
    let mut out = LyapunovProbe {
        max_margin: f64::NEG_INFINITY,
        max_relative_margin: f64::NEG_INFINITY,
        worst: None,
        running: 0.0,
    };
    for (x, w) in state.mp().atoms() {
        if w <= 0.0 {
            continue;
        }
        let (margin, relative) = spec.margin(kernel, x)?;
        if margin > out.max_margin {
            out.max_margin = margin;
        }
        if relative > out.max_relative_margin {
            out.max_relative_margin = relative;
            out.worst = Some(x.clone());
        }
    }
    let n = state.step_count().max(1) as f64;
    out.running = state.mp().integrate(|x| spec.eval(x).powf(1.0 / spec.q)) / n;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub final_distances: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Run `replica(seed)` for every seed in parallel and aggregate the final
/// distances. `threads` caps the pool size when given.
pub fn seed_sweep<F>(seeds: &[u64], threads: Option<usize>, replica: F) -> Result<SweepSummary>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::InvalidParams("seed sweep needs at least one seed".into()));
    }
    let run = || -> Vec<Result<f64>> {
        seeds
            .par_iter()
            .map(|&seed| replica(seed).map_err(|e| Error::ReplicaFailed { seed, source: Box::new(e) }))
            .collect()
    };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let final_distances = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mean = final_distances.iter().sum::<f64>() / final_distances.len() as f64;
    let max = final_distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepSummary { seeds: seeds.to_vec(), final_distances, mean, max })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_square_p(statistic: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson goodness-of-fit of `counts` against cell probabilities `probs`.
/// Cells with zero probability must be empty.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<ChiSquareResult> {
    if counts.len() != probs.len() {
        return Err(Error::InvalidParams("counts and probabilities differ in length".into()));
    }
    let n: u64 = counts.iter().sum();
    let mut statistic = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return Ok(ChiSquareResult { statistic: f64::INFINITY, dof: cells, p_value: 0.0 });
            }
            continue;
        }
        let e = p * n as f64;
        statistic += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    Ok(ChiSquareResult { statistic, dof, p_value: chi_square_p(statistic, dof)? })
}

/// Two-sample chi-square homogeneity test. Trailing cells are pooled until
/// every pooled cell has at least `min_expected` expected count in both
/// samples.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_expected: f64) -> Result<ChiSquareResult> {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let (na, nb): (f64, f64) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidParams("both samples need observations".into()));
    }
    let (fa, fb) = (na / (na + nb), nb / (na + nb));
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pending = (0.0, 0.0);
    for i in 0..len {
        pending.0 += get(a, i);
        pending.1 += get(b, i);
        let pooled = pending.0 + pending.1;
        if pooled * fa.min(fb) >= min_expected {
            cells.push(pending);
            pending = (0.0, 0.0);
        }
    }
    if pending.0 + pending.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += pending.0;
                last.1 += pending.1;
            }
            None => cells.push(pending),
        }
    }
    let mut statistic = 0.0;
    for &(ca, cb) in &cells {
        let pooled = ca + cb;
        let (ea, eb) = (pooled * fa, pooled * fb);
        statistic += (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb;
    }
    let dof = cells.len().saturating_sub(1);
    Ok(ChiSquareResult { statistic, dof, p_value: chi_square_p(statistic, dof)? })
}
