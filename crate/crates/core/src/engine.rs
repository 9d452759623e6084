//! The measure-valued Pólya chain.
//!
//! At each step a color `Y` is drawn proportionally to `m_n P`, a replacement
//! measure `R⁽ⁿ⁺¹⁾_Y` is drawn and added to `m_n`, and `P` applied to that
//! draw is added to the sampling measure. The occupation counts
//! `η_n = Σ δ_{Y_i}` are kept alongside.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::ComposedKernel;
use crate::measure::{ColorPoint, Space, WeightedMeasure};
use crate::rng::RngStream;

/// Steps between two full recomputations of `m_n P` in paranoid mode.
pub const PARANOID_INTERVAL: u64 = 10_000;

/// Relative tolerance of the paranoid `m_n P` comparison.
pub const PARANOID_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub n: u64,
    pub drawn_color: ColorPoint,
    /// `R⁽ⁿ⁾_{Y_n}(E)`.
    pub delta_mass: f64,
    pub m_mass: f64,
    pub mp_mass: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,drawn_color,delta_mass,m_mass,mP_mass";
}

#[derive(Clone, Debug)]
pub struct MvppState {
    m: WeightedMeasure,
    /// `None` when `P` is the identity, in which case `m_n P = m_n`.
    mp: Option<WeightedMeasure>,
    eta: WeightedMeasure,
    step: u64,
    rng: RngStream,
    kernel: Arc<ComposedKernel>,
    m0_mass: f64,
    delta_mass_sum: f64,
    min_mp_rate: f64,
    last_drawn: Option<ColorPoint>,
    paranoid: bool,
}

impl MvppState {
    pub fn init(m0: WeightedMeasure, kernel: Arc<ComposedKernel>, seed: u64) -> Result<Self> {
        Self::init_with_rng(m0, kernel, RngStream::new(seed))
    }

    pub fn init_with_rng(m0: WeightedMeasure, kernel: Arc<ComposedKernel>, rng: RngStream) -> Result<Self> {
        if !m0.is_nonnegative() {
            return Err(Error::InvalidParams("initial composition must be flagged nonnegative".into()));
        }
        if !(m0.exact_mass() > 0.0) {
            return Err(Error::EmptyMeasure);
        }
        let mp = if kernel.weight_kernel().is_identity() {
            None
        } else {
            let mp = kernel.weight_kernel().apply_measure(&m0)?;
            if !(mp.exact_mass() > 0.0) {
                return Err(Error::EmptyMeasure);
            }
            Some(mp)
        };
        let eta = WeightedMeasure::new(m0.space());
        Ok(Self {
            m0_mass: m0.total_mass(),
            m: m0,
            mp,
            eta,
            step: 0,
            rng,
            kernel,
            delta_mass_sum: 0.0,
            min_mp_rate: f64::INFINITY,
            last_drawn: None,
            paranoid: false,
        })
    }

    /// Recompute `m_n P` every [`PARANOID_INTERVAL`] steps and fail on drift.
    pub fn with_paranoid(mut self, on: bool) -> Self {
        self.paranoid = on;
        self
    }

    pub fn m(&self) -> &WeightedMeasure {
        &self.m
    }

    pub fn mp(&self) -> &WeightedMeasure {
        self.mp.as_ref().unwrap_or(&self.m)
    }

    pub fn eta(&self) -> &WeightedMeasure {
        &self.eta
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn kernel(&self) -> &Arc<ComposedKernel> {
        &self.kernel
    }

    pub fn space(&self) -> Space {
        self.m.space()
    }

    pub fn last_drawn(&self) -> Option<&ColorPoint> {
        self.last_drawn.as_ref()
    }

    pub fn initial_mass(&self) -> f64 {
        self.m0_mass
    }

    /// `Σ_{i≤n} R⁽ⁱ⁾_{Y_i}(E)`.
    pub fn delta_mass_sum(&self) -> f64 {
        self.delta_mass_sum
    }

    /// `min_{k≤n} m_k P(E) / k` over the run so far.
    pub fn min_mp_rate(&self) -> f64 {
        self.min_mp_rate
    }

    /// One transition. On error the measures, counters and RNG are left as
    /// they were before the call.
    pub fn step(&mut self) -> Result<StepRecord> {
        let rng_before = self.rng.clone();
        match self.try_step() {
            Ok(rec) => Ok(rec),
            Err(e) => {
                self.rng = rng_before;
                Err(e)
            }
        }
    }

    fn try_step(&mut self) -> Result<StepRecord> {
        let sampler = self.mp.as_ref().unwrap_or(&self.m);
        let j = sampler.sample_index(&mut self.rng)?;
        let y = sampler.point(j).clone();
        let d = self.kernel.r_sample(&y, &mut self.rng)?;
        let dirac = crate::measure::SignedDelta::dirac(y.clone(), 1.0);

        let prep_m = self.m.prepare(&d)?;
        let prep_mp = match &self.mp {
            Some(mp) => Some(mp.prepare(&self.kernel.weight_kernel().apply(&d))?),
            None => None,
        };
        let prep_eta = self.eta.prepare(&dirac)?;
        self.m.commit(prep_m);
        if let (Some(mp), Some(prep)) = (self.mp.as_mut(), prep_mp) {
            mp.commit(prep);
        }
        self.eta.commit(prep_eta);

        let delta_mass = d.mass();
        self.step += 1;
        self.delta_mass_sum += delta_mass;
        let mp_mass = self.mp().total_mass();
        self.min_mp_rate = self.min_mp_rate.min(mp_mass / self.step as f64);

        if self.paranoid && self.step % PARANOID_INTERVAL == 0 {
            let discrepancy = self.mp_discrepancy()?;
            if discrepancy > PARANOID_TOLERANCE {
                return Err(Error::ParanoidMismatch { step: self.step, discrepancy });
            }
        }

        self.last_drawn = Some(y.clone());
        Ok(StepRecord { n: self.step, drawn_color: y, delta_mass, m_mass: self.m.total_mass(), mp_mass })
    }

    /// Largest atomwise gap between the incremental `m_n P` and `P(m_n)`
    /// recomputed from scratch, relative to `max(1, m_n P(E))`. For the
    /// identity weight kernel this compares the cached total mass with the
    /// exact sum instead.
    pub fn mp_discrepancy(&self) -> Result<f64> {
        let Some(mp) = &self.mp else {
            let exact = self.m.exact_mass();
            return Ok((self.m.total_mass() - exact).abs() / exact.abs().max(1.0));
        };
        let fresh = self.kernel.weight_kernel().apply_measure(&self.m)?;
        let scale = mp.total_mass().abs().max(1.0);
        let gap = match self.space() {
            Space::Discrete => mp
                .atoms()
                .map(|(p, w)| (w - fresh.weight_of(p)).abs())
                .chain(fresh.atoms().map(|(p, w)| (w - mp.weight_of(p)).abs()))
                .fold(0.0, f64::max),
            Space::Euclidean { .. } => {
                if fresh.len() != mp.len() {
                    return Ok(f64::INFINITY);
                }
                (0..fresh.len()).map(|j| (fresh.weight_at(j) - mp.weight_at(j)).abs()).fold(0.0, f64::max)
            }
        };
        Ok(gap / scale)
    }

    /// Apply [`step`](Self::step) `n_steps` times, feeding every observer at
    /// its stride.
    pub fn run(&mut self, n_steps: u64, observers: &mut [&mut dyn Observer]) -> Result<Trace> {
        let mut trace = Trace { rows: vec![Vec::new(); observers.len()] };
        for _ in 0..n_steps {
            let rec = self.step().map_err(|e| Error::StepFailed { step: self.step + 1, source: Box::new(e) })?;
            for (k, obs) in observers.iter_mut().enumerate() {
                if rec.n % obs.stride().max(1) == 0 {
                    let values = obs.observe(self, &rec)?;
                    trace.rows[k].push(ObservedRow { record: rec.clone(), values });
                }
            }
        }
        Ok(trace)
    }

    /// `m_n / n`, `m_n / m_n(E)` and `η_n / n` as fresh snapshots.
    pub fn normalized_views(&self) -> Result<NormalizedViews> {
        if self.step == 0 {
            return Err(Error::EmptyMeasure);
        }
        Ok(NormalizedViews {
            m_over_n: self.m.scaled(1.0 / self.step as f64),
            m_tilde: self.m.normalize()?,
            eta_tilde: self.eta.normalize()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct NormalizedViews {
    pub m_over_n: WeightedMeasure,
    pub m_tilde: WeightedMeasure,
    pub eta_tilde: WeightedMeasure,
}

/// Pulls a row of values from the state every `stride` steps.
pub trait Observer {
    fn stride(&self) -> u64;

    fn observe(&mut self, state: &MvppState, record: &StepRecord) -> Result<Vec<f64>>;
}

/// Records the step itself and nothing else.
pub struct RecordObserver {
    pub stride: u64,
}

impl Observer for RecordObserver {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, _: &MvppState, _: &StepRecord) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// Observer backed by a closure.
pub struct FnObserver<F> {
    pub stride: u64,
    pub f: F,
}

impl<F> Observer for FnObserver<F>
where
    F: FnMut(&MvppState, &StepRecord) -> Result<Vec<f64>>,
{
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, state: &MvppState, record: &StepRecord) -> Result<Vec<f64>> {
        (self.f)(state, record)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservedRow {
    pub record: StepRecord,
    pub values: Vec<f64>,
}

/// One row list per observer, in observer order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<Vec<ObservedRow>>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }
}

/// Terms of the stochastic-approximation step
/// `η̃_{n+1} − η̃_n = γ_{n+1} (F(η̃_n) + U_{n+1})`, each tested against `f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaTerms {
    pub gamma: f64,
    /// `F(η̃_n)·f = η̃_n Q·f − η̃_n Q(E) η̃_n·f`.
    pub f_dot: f64,
    /// `U_{n+1}·f = η̃_n Q(E) f(Y_{n+1}) − η̃_n Q·f`.
    pub u_dot: f64,
    /// `(η̃_{n+1} − η̃_n)·f` computed directly.
    pub increment: f64,
    pub residual: f64,
}

/// Decompose the step from `before` to `after` (exactly one transition apart).
pub fn sa_diagnostic(before: &MvppState, after: &MvppState, f: &dyn Fn(&ColorPoint) -> f64) -> Result<SaTerms> {
    let n = before.step_count();
    if n == 0 {
        return Err(Error::InvalidParams("stochastic-approximation terms need at least one prior step".into()));
    }
    if after.step_count() != n + 1 {
        return Err(Error::InvalidParams("states must be exactly one step apart".into()));
    }
    let y = after.last_drawn().ok_or(Error::EmptyMeasure)?;
    let kernel = before.kernel();
    let n_f = n as f64;

    let mut eq_f = 0.0;
    let mut eq_mass = 0.0;
    for (x, count) in before.eta().atoms() {
        if count == 0.0 {
            continue;
        }
        let q = kernel.q_mean(x)?;
        let share = count / n_f;
        eq_f += share * q.integrate(f);
        eq_mass += share * q.mass();
    }
    let eta_f = before.eta().integrate(f) / n_f;
    let gamma = 1.0 / ((n_f + 1.0) * eq_mass);
    let f_dot = eq_f - eq_mass * eta_f;
    let u_dot = eq_mass * f(y) - eq_f;
    let increment = after.eta().integrate(f) / (n_f + 1.0) - eta_f;
    let residual = increment - gamma * (f_dot + u_dot);
    Ok(SaTerms { gamma, f_dot, u_dot, increment, residual })
}
