//! Killed diffusions `dX = dB + b(X) dt` with soft killing at rate `κ(X)`:
//! the continuous sample-path urn and the self-interacting relocation
//! process.
//!
//! Paths are discretized by Euler–Maruyama with step `Δt`. Killing uses
//! thinning: candidate events arrive at rate `κ_max` and are accepted with
//! probability `κ(X)/κ_max`, evaluated at the left end of the step.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Exp, StandardNormal};

use super::{params, LimitForm, ModelSpec, PATH_CAP};
use crate::diagnostics::{ConvergenceTrace, GridCdf, TraceRow, W1_GRID_POINTS, W1_GRID_SDS};
use crate::error::{Error, Result};
use crate::kernels::{compose, rescale, ReplacementKernel, WeightKernel};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::qsd::{analytic_reference, ReferenceDistribution, Support};
use crate::rng::RngStream;

pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type RateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub const DEFAULT_DT: f64 = 1e-3;

/// Law of the time horizon `T` on `[0, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeHorizon {
    Infinite,
    Deterministic(f64),
    Exponential(f64),
}

/// How a discretized path is turned into an occupation measure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    /// Atom `δ_{X_{kΔt}}` of weight `Δt` for every step started before death.
    #[default]
    LeftRiemann,
    /// Half weights on the first and last grid points.
    Trapezoid,
}

#[derive(Clone)]
pub struct KilledDiffusionSpec {
    pub dim: usize,
    pub drift: DriftFn,
    pub kill_rate: RateFn,
    pub kappa_max: f64,
    pub dt: f64,
    pub horizon: TimeHorizon,
    pub quadrature: Quadrature,
    pub cap: usize,
    /// Known `sup_x E[R_x(E)]`, used instead of a pilot estimate.
    pub mean_mass_bound: Option<f64>,
    /// Quasi-stationary law, when known in closed form.
    pub reference: Option<ReferenceDistribution>,
}

impl fmt::Debug for KilledDiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KilledDiffusionSpec")
            .field("dim", &self.dim)
            .field("kappa_max", &self.kappa_max)
            .field("dt", &self.dt)
            .field("horizon", &self.horizon)
            .field("quadrature", &self.quadrature)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct DriftReport {
    pub radius: f64,
    /// `⟨b(x), x⟩/|x|` at each shell probe.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `−(3/2)√κ_max`.
    pub threshold: f64,
    pub ok: bool,
}

impl KilledDiffusionSpec {
    pub fn new(dim: usize, drift: DriftFn, kill_rate: RateFn, kappa_max: f64, dt: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if !(kappa_max > 0.0 && kappa_max.is_finite()) {
            return Err(Error::InvalidParams(format!("kappa_max must be positive, got {kappa_max}")));
        }
        Ok(Self {
            dim,
            drift,
            kill_rate,
            kappa_max,
            dt,
            horizon: TimeHorizon::Infinite,
            quadrature: Quadrature::LeftRiemann,
            cap: PATH_CAP,
            mean_mass_bound: None,
            reference: None,
        })
    }

    /// One-dimensional `dX = dB − cX dt` killed at constant rate `kill`.
    /// Constant killing is independent of the path, so the quasi-stationary
    /// law is the stationary law `N(0, 1/(2c))`.
    pub fn ornstein_uhlenbeck(c: f64, kill: f64, dt: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParams(format!("mean reversion must be positive, got {c}")));
        }
        let mut spec = Self::new(1, Arc::new(move |x, out| out[0] = -c * x[0]), Arc::new(move |_| kill), kill, dt)?;
        spec.mean_mass_bound = Some(1.0 / kill);
        let p = [("mean".to_string(), 0.0), ("var".to_string(), 1.0 / (2.0 * c))].into_iter().collect();
        spec.reference = Some(analytic_reference("gaussian", &p)?);
        Ok(spec)
    }

    pub fn with_horizon(mut self, horizon: TimeHorizon) -> Self {
        if horizon != TimeHorizon::Infinite {
            self.mean_mass_bound = None;
        }
        self.horizon = horizon;
        self
    }

    pub fn with_quadrature(mut self, quadrature: Quadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn rate(&self, x: &[f64]) -> Result<f64> {
        let k = (self.kill_rate)(x);
        if !(k >= 0.0 && k <= self.kappa_max * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!("kill rate {k} outside [0, {}]", self.kappa_max)));
        }
        Ok(k)
    }

    fn shell(&self, radius: f64) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut points = Vec::with_capacity(2 * d + 2);
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut x = vec![0.0; d];
                x[i] = sign * radius;
                points.push(x);
            }
        }
        if d > 1 {
            let c = radius / (d as f64).sqrt();
            points.push(vec![c; d]);
            points.push(vec![-c; d]);
        }
        points
    }

    /// Probe `⟨b(x), x⟩/|x| < −(3/2)√κ_max` on the sphere of the given
    /// radius. The condition is asymptotic, so a failure is a warning.
    pub fn drift_condition(&self, radius: f64) -> DriftReport {
        let mut b = vec![0.0; self.dim];
        let ratios: Vec<f64> = self
            .shell(radius)
            .iter()
            .map(|x| {
                (self.drift)(x, &mut b);
                let dot: f64 = b.iter().zip(x).map(|(bi, xi)| bi * xi).sum();
                dot / x.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = -1.5 * self.kappa_max.sqrt();
        DriftReport { radius, ratios, ok: max_ratio < threshold, max_ratio, threshold }
    }
}

/// Euler–Maruyama path with a thinning clock.
struct PathSim<'a> {
    spec: &'a KilledDiffusionSpec,
    x: Vec<f64>,
    b: Vec<f64>,
    clock: Exp<f64>,
    /// Absolute time of the next candidate killing event.
    next_event: f64,
    sqrt_dt: f64,
}

impl<'a> PathSim<'a> {
    fn new(spec: &'a KilledDiffusionSpec, start: &[f64], rng: &mut RngStream) -> Result<Self> {
        let clock = Exp::new(spec.kappa_max).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let next_event = clock.sample(rng);
        Ok(Self { spec, x: start.to_vec(), b: vec![0.0; spec.dim], clock, next_event, sqrt_dt: spec.dt.sqrt() })
    }

    /// Whether an accepted event falls in `[t, t + Δt)`, using `κ` at the
    /// current position.
    fn killed_before(&mut self, t_next: f64, rng: &mut RngStream) -> Result<bool> {
        while self.next_event < t_next {
            self.next_event += self.clock.sample(rng);
            let accept = self.spec.rate(&self.x)? / self.spec.kappa_max;
            if rng.uniform() < accept {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn advance(&mut self, rng: &mut RngStream) {
        (self.spec.drift)(&self.x, &mut self.b);
        let dt = self.spec.dt;
        for (xi, bi) in self.x.iter_mut().zip(&self.b) {
            let z: f64 = StandardNormal.sample(rng);
            *xi += bi * dt + self.sqrt_dt * z;
        }
    }
}

fn horizon_draw(h: TimeHorizon, rng: &mut RngStream) -> Result<f64> {
    Ok(match h {
        TimeHorizon::Infinite => f64::INFINITY,
        TimeHorizon::Deterministic(t) => t,
        TimeHorizon::Exponential(rate) => Exp::new(rate).map_err(|e| Error::InvalidParams(e.to_string()))?.sample(rng),
    })
}

/// Simulate one killed path from `start` and feed each grid point with its
/// quadrature weight to `visit`. Returns the number of steps taken.
fn killed_path(
    spec: &KilledDiffusionSpec,
    start: &[f64],
    rng: &mut RngStream,
    mut visit: impl FnMut(&[f64], f64),
) -> Result<usize> {
    let horizon = horizon_draw(spec.horizon, rng)?;
    let mut sim = PathSim::new(spec, start, rng)?;
    let dt = spec.dt;
    let trapezoid = spec.quadrature == Quadrature::Trapezoid;
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if t >= horizon {
            break;
        }
        let w = if trapezoid && k == 0 { 0.5 * dt } else { dt };
        visit(&sim.x, w);
        k += 1;
        if sim.killed_before(t + dt, rng)? {
            break;
        }
        sim.advance(rng);
        if k >= spec.cap {
            return Err(Error::HorizonCapExceeded { cap: spec.cap });
        }
    }
    if trapezoid && k > 0 {
        visit(&sim.x, 0.5 * dt);
    }
    Ok(k)
}

/// `R⁽ⁱ⁾_x = ∫_0^{T∧τ_∂} δ_{X_t} dt`, discretized.
#[derive(Debug)]
pub struct KilledDiffusionKernel {
    spec: KilledDiffusionSpec,
}

impl KilledDiffusionKernel {
    pub fn new(spec: KilledDiffusionSpec) -> Self {
        Self { spec }
    }

    /// Mass of one draw, without materializing the atoms.
    pub fn sample_mass(&self, x: &[f64], rng: &mut RngStream) -> Result<f64> {
        let mut mass = 0.0;
        killed_path(&self.spec, x, rng, |_, w| mass += w)?;
        Ok(mass)
    }
}

impl ReplacementKernel for KilledDiffusionKernel {
    fn sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        let start = x.coords().filter(|c| c.len() == self.spec.dim).ok_or_else(|| Error::SpaceMismatch {
            point: x.clone(),
            expected: Space::Euclidean { dim: self.spec.dim }.to_string(),
        })?;
        let mut d = SignedDelta::new();
        let mut bad = None;
        killed_path(&self.spec, start, rng, |p, w| match ColorPoint::euclidean(p.to_vec()) {
            Ok(point) => d.push(point, w),
            Err(e) => bad = Some(e),
        })?;
        match bad {
            Some(e) => Err(e),
            None => Ok(d),
        }
    }

    fn mean(&self, _: &ColorPoint) -> Option<SignedDelta> {
        None
    }

    fn has_exact_mean(&self) -> bool {
        false
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn is_signed(&self) -> bool {
        false
    }
}

/// Continuous sample-path urn started from `δ_start`, rescaled by the known
/// mean-mass bound or by a pilot estimate (see the sample-path urn).
pub fn killed_diffusion_urn(spec: KilledDiffusionSpec, start: &[f64], pilot_seed: u64) -> Result<ModelSpec> {
    if start.len() != spec.dim {
        return Err(Error::InvalidParams(format!("start has dimension {}, expected {}", start.len(), spec.dim)));
    }
    let mut notes = Vec::new();
    let drift = spec.drift_condition(10.0);
    if !drift.ok {
        notes.push(format!(
            "drift condition fails on the radius-10 shell: max ratio {} vs threshold {}",
            drift.max_ratio, drift.threshold
        ));
    }
    notes.push("return-from-infinity (uniform exponential moment of the killing time) is assumed".into());
    let kernel = KilledDiffusionKernel::new(spec.clone());
    let (sup, exact) = match spec.mean_mass_bound {
        Some(b) => (b, true),
        None => {
            let mut rng = RngStream::new(pilot_seed);
            let mut sup: f64 = 0.0;
            for _ in 0..super::sample_path::PILOT_DRAWS {
                sup = sup.max(kernel.sample_mass(start, &mut rng)?);
            }
            (sup * super::sample_path::PILOT_SAFETY, false)
        }
    };
    let composed = rescale(&compose(Arc::new(kernel), WeightKernel::Identity), sup)?;
    let m0 = WeightedMeasure::dirac(ColorPoint::euclidean(start.to_vec())?, 1.0)?;
    Ok(ModelSpec {
        name: "killed_diffusion".into(),
        space: Space::Euclidean { dim: spec.dim },
        m0,
        kernel: Arc::new(composed),
        lyapunov: None,
        reference_key: spec.reference.as_ref().map(|_| "gaussian".to_string()),
        reference: spec.reference.clone(),
        limit: LimitForm::Nu,
        params: params(&[
            ("dt", spec.dt),
            ("kappa_max", spec.kappa_max),
            ("kappa", sup),
            ("kappa_exact", if exact { 1.0 } else { 0.0 }),
        ]),
        notes,
    })
}

/// Occupation measure of a discretized path: every stored point carries the
/// same weight.
#[derive(Clone, Debug)]
pub struct OccupationMeasure {
    pub dim: usize,
    pub weight: f64,
    /// Flat `len × dim` coordinates.
    pub positions: Vec<f64>,
}

impl OccupationMeasure {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_time(&self) -> f64 {
        self.len() as f64 * self.weight
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Normalized copy as a general measure (one atom per stored point).
    pub fn to_weighted_measure(&self) -> Result<WeightedMeasure> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        let atoms = (0..n).map(|i| ColorPoint::euclidean(self.point(i).to_vec()).map(|p| (p, 1.0 / n as f64)));
        WeightedMeasure::from_atoms(Space::Euclidean { dim: self.dim }, atoms.collect::<Result<Vec<_>>>()?)
    }

    /// W1 of the normalized occupation measure against a one-dimensional
    /// reference, on the same grid quadrature as the diagnostics.
    pub fn w1_to_reference(&self, reference: &ReferenceDistribution) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::DimensionUnsupported { dim: self.dim });
        }
        if self.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let mut grid = reference_grid(reference)?;
        for &x in &self.positions {
            grid.add(x, 1.0);
        }
        Ok(grid.w1(|x| reference.cdf(x)))
    }
}

fn reference_grid(reference: &ReferenceDistribution) -> Result<GridCdf> {
    match reference.support {
        Support::Gaussian { mean, sd } => {
            GridCdf::new(mean - W1_GRID_SDS * sd, mean + W1_GRID_SDS * sd, W1_GRID_POINTS)
        }
        Support::Discrete(ref p) => GridCdf::new(-0.5, p.len() as f64 + 0.5, W1_GRID_POINTS),
    }
}

#[derive(Clone, Debug)]
pub struct SelfInteractingRun {
    pub occupation: OccupationMeasure,
    /// W1 to the reference (NaN without one) at evenly spaced checkpoints;
    /// `mass_per_step` holds the elapsed time.
    pub trace: ConvergenceTrace,
    pub jumps: u64,
    /// Step index of the first relocation.
    pub first_jump: Option<usize>,
}

/// Run the self-interacting process up to `t_max`: a diffusion that,
/// instead of dying, jumps to a point drawn from its own occupation
/// measure.
pub fn self_interacting_qsd(
    spec: &KilledDiffusionSpec,
    t_max: f64,
    start: &[f64],
    rng: &mut RngStream,
    reference: Option<&ReferenceDistribution>,
    checkpoints: usize,
) -> Result<SelfInteractingRun> {
    if start.len() != spec.dim || start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("start point has wrong dimension or is not finite".into()));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidParams(format!("t_max must be positive, got {t_max}")));
    }
    let mut probes = vec![start.to_vec()];
    for r in 1..=5 {
        probes.extend(spec.shell(r as f64));
    }
    for p in &probes {
        let k = spec.rate(p)?;
        if k < 1.0 {
            return Err(Error::InvalidParams(format!("kill rate {k} < 1 at {p:?}")));
        }
    }
    let steps = (t_max / spec.dt).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidParams("t_max shorter than one step".into()));
    }
    let mut grid = match reference {
        Some(r) if spec.dim == 1 => Some(reference_grid(r)?),
        _ => None,
    };
    let stride = (steps / checkpoints.max(1)).max(1);
    let mut positions = Vec::with_capacity(steps * spec.dim);
    let mut trace = ConvergenceTrace::default();
    let mut sim = PathSim::new(spec, start, rng)?;
    let mut jumps = 0u64;
    let mut first_jump = None;

    for k in 0..steps {
        positions.extend_from_slice(&sim.x);
        if let Some(g) = grid.as_mut() {
            g.add(sim.x[0], 1.0);
        }
        let t_next = (k + 1) as f64 * spec.dt;
        while sim.killed_before(t_next, rng)? {
            let stored = positions.len() / spec.dim;
            let j = ((rng.uniform() * stored as f64) as usize).min(stored - 1);
            sim.x.copy_from_slice(&positions[j * spec.dim..(j + 1) * spec.dim]);
            jumps += 1;
            first_jump.get_or_insert(k);
        }
        sim.advance(rng);
        if (k + 1) % stride == 0 || k + 1 == steps {
            let distance = match (grid.as_ref(), reference) {
                (Some(g), Some(r)) => g.w1(|x| r.cdf(x)),
                _ => f64::NAN,
            };
            let mut extra = BTreeMap::new();
            extra.insert("jumps".to_string(), jumps as f64);
            trace.push(TraceRow { step: (k + 1) as u64, distance, mass_per_step: t_next, extra })?;
        }
    }
    Ok(SelfInteractingRun {
        occupation: OccupationMeasure { dim: spec.dim, weight: spec.dt, positions },
        trace,
        jumps,
        first_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_ratio_for_linear_drift() {
        let spec = KilledDiffusionSpec::ornstein_uhlenbeck(2.0, 1.0, DEFAULT_DT).unwrap();
        for r in [0.5, 3.0, 10.0] {
            let rep = spec.drift_condition(r);
            for ratio in &rep.ratios {
                assert!((ratio + 2.0 * r).abs() <= 1e-12 * r, "{ratio} at {r}");
            }
        }
        assert!(spec.drift_condition(10.0).ok);
        assert!(!spec.drift_condition(0.5).ok);
    }

    #[test]
    fn masses_are_multiples_of_dt() {
        let spec = KilledDiffusionSpec::ornstein_uhlenbeck(2.0, 5.0, 0.01).unwrap();
        let k = KilledDiffusionKernel::new(spec);
        let mut rng = RngStream::new(5);
        for _ in 0..200 {
            let d = k.sample(&ColorPoint::euclidean(vec![0.3]).unwrap(), &mut rng).unwrap();
            let steps = d.mass() / 0.01;
            assert!((steps - steps.round()).abs() < 1e-9 && d.len() >= 1);
            assert!(d.entries().iter().all(|(_, w)| *w == 0.01));
        }
    }

    #[test]
    fn trapezoid_halves_the_ends() {
        let spec =
            KilledDiffusionSpec::ornstein_uhlenbeck(2.0, 5.0, 0.01).unwrap().with_quadrature(Quadrature::Trapezoid);
        let k = KilledDiffusionKernel::new(spec);
        let d = k.sample(&ColorPoint::euclidean(vec![0.0]).unwrap(), &mut RngStream::new(2)).unwrap();
        let e = d.entries();
        assert_eq!(e[0].1, 0.005);
        assert_eq!(e[e.len() - 1].1, 0.005);
        let steps = d.mass() / 0.01;
        assert!((steps - steps.round()).abs() < 1e-9);
    }

    #[test]
    fn self_interacting_before_first_jump_is_raw_path() {
        let spec = KilledDiffusionSpec::ornstein_uhlenbeck(2.0, 1.0, 0.01).unwrap();
        let run =
            self_interacting_qsd(&spec, 50.0, &[0.0], &mut RngStream::new(9), spec.reference.as_ref(), 10).unwrap();
        let j = run.first_jump.expect("a jump within 50 time units");
        // Replaying the same stream without relocation reproduces the prefix.
        let mut rng = RngStream::new(9);
        let mut sim = PathSim::new(&spec, &[0.0], &mut rng).unwrap();
        for k in 0..=j {
            assert_eq!(sim.x[0], run.occupation.positions[k]);
            if k < j {
                assert!(!sim.killed_before((k + 1) as f64 * spec.dt, &mut rng).unwrap());
                sim.advance(&mut rng);
            }
        }
        assert_eq!(run.trace.rows.len(), 10);
        assert!(run.jumps > 0);
    }

    #[test]
    fn low_kill_rate_rejected() {
        let spec = KilledDiffusionSpec::ornstein_uhlenbeck(2.0, 0.5, 0.01).unwrap();
        assert!(self_interacting_qsd(&spec, 1.0, &[0.0], &mut RngStream::new(0), None, 1).is_err());
    }
}
