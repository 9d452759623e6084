//! Replacement kernels `R⁽ⁱ⁾`, weight kernels `P`, and their composition
//! `Q = RP`, with spot-checkers for the mass bounds and Lyapunov drift
//! condition that the convergence theory relies on.
//!
//! Checks run on finite probe sets. A passing report says nothing about
//! points outside the probe.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::rng::RngStream;

/// Absolute/relative slack on every bound check.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// An i.i.d. family of random replacement measures `x ↦ R⁽ⁱ⁾_x`.
pub trait ReplacementKernel: Send + Sync + fmt::Debug {
    /// One draw of `R⁽ⁱ⁾_x`.
    fn sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta>;

    /// The mean measure `R_x`, when it has an exact finite representation.
    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta>;

    fn is_deterministic(&self) -> bool;

    fn is_signed(&self) -> bool;

    /// Whether [`mean`](Self::mean) returns `Some` on valid points.
    fn has_exact_mean(&self) -> bool {
        true
    }
}

pub type PointFn = Arc<dyn Fn(&ColorPoint) -> f64 + Send + Sync>;

/// `P_x = δ_x` or `P_x = w(x) δ_x`.
#[derive(Clone)]
pub enum WeightKernel {
    Identity,
    Scalar(PointFn),
}

impl fmt::Debug for WeightKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKernel::Identity => write!(f, "Identity"),
            WeightKernel::Scalar(_) => write!(f, "Scalar(..)"),
        }
    }
}

impl WeightKernel {
    pub fn scalar(w: impl Fn(&ColorPoint) -> f64 + Send + Sync + 'static) -> Self {
        WeightKernel::Scalar(Arc::new(w))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, WeightKernel::Identity)
    }

    pub fn weight(&self, x: &ColorPoint) -> f64 {
        match self {
            WeightKernel::Identity => 1.0,
            WeightKernel::Scalar(w) => w(x),
        }
    }

    /// `dP` for a signed point-mass list.
    pub fn apply(&self, d: &SignedDelta) -> SignedDelta {
        match self {
            WeightKernel::Identity => d.clone(),
            WeightKernel::Scalar(w) => d.entries().iter().map(|(p, a)| (p.clone(), a * w(p))).collect(),
        }
    }

    /// `mP` recomputed from scratch.
    pub fn apply_measure(&self, m: &WeightedMeasure) -> Result<WeightedMeasure> {
        let mut out = WeightedMeasure::new(m.space());
        if !m.is_nonnegative() {
            out = out.into_signed();
        }
        let d: SignedDelta = m.atoms().map(|(p, a)| (p.clone(), a * self.weight(p))).collect();
        out.add_delta(&d)?;
        Ok(out)
    }
}

/// `Q⁽ⁱ⁾ = R⁽ⁱ⁾P` together with an overall scale factor and the declared
/// bounds `c_1 ≤ Q_x(E) ≤ κ`.
#[derive(Clone, Debug)]
pub struct ComposedKernel {
    replacement: Arc<dyn ReplacementKernel>,
    weight: WeightKernel,
    scale: f64,
    c1: f64,
    kappa: f64,
}

pub fn compose(r: Arc<dyn ReplacementKernel>, p: WeightKernel) -> ComposedKernel {
    ComposedKernel { replacement: r, weight: p, scale: 1.0, c1: 0.0, kappa: 1.0 }
}

/// The kernel of `m̂_n = m_n / κ`: every draw and mean divided by `kappa`.
pub fn rescale(k: &ComposedKernel, kappa: f64) -> Result<ComposedKernel> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParams(format!("rescale factor must be positive, got {kappa}")));
    }
    let mut out = k.clone();
    out.scale /= kappa;
    out.c1 /= kappa;
    out.kappa /= kappa;
    Ok(out)
}

impl ComposedKernel {
    pub fn with_mass_bounds(mut self, c1: f64, kappa: f64) -> Self {
        self.c1 = c1;
        self.kappa = kappa;
        self
    }

    /// `(c_1, κ)`.
    pub fn mass_bounds(&self) -> (f64, f64) {
        (self.c1, self.kappa)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn replacement(&self) -> &Arc<dyn ReplacementKernel> {
        &self.replacement
    }

    pub fn weight_kernel(&self) -> &WeightKernel {
        &self.weight
    }

    pub fn has_exact_mean(&self) -> bool {
        self.replacement.has_exact_mean()
    }

    fn scaled(&self, d: SignedDelta) -> SignedDelta {
        if self.scale == 1.0 {
            d
        } else {
            d.scaled(self.scale)
        }
    }

    /// A draw of the (rescaled) replacement measure.
    pub fn r_sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        Ok(self.scaled(self.replacement.sample(x, rng)?))
    }

    pub fn r_mean(&self, x: &ColorPoint) -> Result<SignedDelta> {
        self.replacement.mean(x).map(|d| self.scaled(d)).ok_or(Error::MeanUnavailable)
    }

    pub fn q_sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        Ok(self.weight.apply(&self.r_sample(x, rng)?))
    }

    pub fn q_mean(&self, x: &ColorPoint) -> Result<SignedDelta> {
        Ok(self.weight.apply(&self.r_mean(x)?))
    }
}

#[derive(Clone, Debug)]
pub struct MassBoundsReport {
    pub min_mass: f64,
    pub max_mass: f64,
    pub argmin: Option<ColorPoint>,
    pub argmax: Option<ColorPoint>,
    pub ok: bool,
}

/// Probe `c_1 ≤ Q_x(E) ≤ κ` on a finite set of points.
pub fn check_mass_bounds(k: &ComposedKernel, probe: &[ColorPoint]) -> Result<MassBoundsReport> {
    let (c1, kappa) = k.mass_bounds();
    let mut rep =
        MassBoundsReport { min_mass: f64::INFINITY, max_mass: f64::NEG_INFINITY, argmin: None, argmax: None, ok: true };
    for x in probe {
        let mass = k.q_mean(x)?.mass();
        if mass < rep.min_mass {
            rep.min_mass = mass;
            rep.argmin = Some(x.clone());
        }
        if mass > rep.max_mass {
            rep.max_mass = mass;
            rep.argmax = Some(x.clone());
        }
        if mass < c1 - BOUND_TOLERANCE || mass > kappa * (1.0 + BOUND_TOLERANCE) {
            rep.ok = false;
        }
    }
    Ok(rep)
}

/// Exponents of the moment condition `E[R(E)^r] ∨ E[Q(E)^p] ≤ A V(x)`.
/// Recorded only; nothing checks them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentBounds {
    pub r: f64,
    pub p: f64,
    pub a: f64,
}

/// A drift function `V ≥ 1` with constants for `Q_x·V ≤ θ V(x) + K`.
#[derive(Clone)]
pub struct LyapunovSpec {
    pub v: PointFn,
    pub theta: f64,
    pub k: f64,
    pub c1: f64,
    /// Conjugate exponent `q = p / (p - 1)`.
    pub q: f64,
    pub moments: Option<MomentBounds>,
}

impl fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("theta", &self.theta)
            .field("k", &self.k)
            .field("c1", &self.c1)
            .field("q", &self.q)
            .finish()
    }
}

impl LyapunovSpec {
    pub fn new(
        v: impl Fn(&ColorPoint) -> f64 + Send + Sync + 'static,
        theta: f64,
        k: f64,
        c1: f64,
        q: f64,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta < c1) {
            return Err(Error::InvalidParams(format!("need 0 < theta < c1, got theta={theta}, c1={c1}")));
        }
        if !(q > 1.0) {
            return Err(Error::InvalidParams(format!("conjugate exponent q must exceed 1, got {q}")));
        }
        Ok(Self { v: Arc::new(v), theta, k, c1, q, moments: None })
    }

    pub fn with_moments(mut self, moments: MomentBounds) -> Self {
        self.moments = Some(moments);
        self
    }

    pub fn eval(&self, x: &ColorPoint) -> f64 {
        (self.v)(x)
    }

    /// `Q_x·V − θV(x) − K` and the same quantity divided by `max(1, θV(x)+K)`.
    pub fn margin(&self, k: &ComposedKernel, x: &ColorPoint) -> Result<(f64, f64)> {
        let q = k.q_mean(x)?;
        let qv = q.integrate(|y| self.eval(y));
        let bound = self.theta * self.eval(x) + self.k;
        let excess = qv - bound;
        Ok((excess, excess / bound.abs().max(1.0)))
    }
}

#[derive(Clone, Debug)]
pub struct LyapunovReport {
    /// Largest `Q_x·V − θV(x) − K` over the probe.
    pub max_excess: f64,
    /// Largest excess relative to `max(1, θV(x) + K)`.
    pub max_relative_excess: f64,
    pub worst: Option<ColorPoint>,
    pub v_below_one: Vec<ColorPoint>,
    pub ok: bool,
}

/// Probe `Q_x·V ≤ θV(x) + K`. The tolerance is relative to the size of the
/// right-hand side so that `e^x`-scale values compare sensibly.
pub fn check_lyapunov(k: &ComposedKernel, spec: &LyapunovSpec, probe: &[ColorPoint]) -> Result<LyapunovReport> {
    let mut rep = LyapunovReport {
        max_excess: f64::NEG_INFINITY,
        max_relative_excess: f64::NEG_INFINITY,
        worst: None,
        v_below_one: Vec::new(),
        ok: true,
    };
    for x in probe {
        if spec.eval(x) < 1.0 {
            rep.v_below_one.push(x.clone());
        }
        let (excess, relative) = spec.margin(k, x)?;
        if !relative.is_finite() {
            return Err(Error::InvalidParams(format!("Lyapunov function not finite near {x}")));
        }
        if excess > rep.max_excess {
            rep.max_excess = excess;
        }
        if relative > rep.max_relative_excess {
            rep.max_relative_excess = relative;
            rep.worst = Some(x.clone());
        }
    }
    rep.ok = rep.max_relative_excess <= BOUND_TOLERANCE && rep.v_below_one.is_empty();
    Ok(rep)
}

/// Per-atom comparison of a Monte-Carlo mean against the exact mean.
#[derive(Clone, Debug)]
pub struct AtomMeanCheck {
    pub label: u64,
    pub exact: f64,
    pub empirical: f64,
    pub std_error: f64,
}

impl AtomMeanCheck {
    /// Deviation in standard errors (0 when both agree exactly).
    pub fn z(&self) -> f64 {
        let d = (self.empirical - self.exact).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Draw `draws` replacement measures at `x` and compare their atomwise mean
/// with the kernel's exact mean. Discrete kernels only.
pub fn mean_consistency(
    r: &dyn ReplacementKernel,
    x: &ColorPoint,
    draws: usize,
    rng: &mut RngStream,
) -> Result<Vec<AtomMeanCheck>> {
    use std::collections::BTreeMap;
    let exact = r.mean(x).ok_or(Error::MeanUnavailable)?;
    let mut sums: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for (label, _) in exact.aggregated()? {
        sums.insert(label, (0.0, 0.0));
    }
    let mut samples: Vec<Vec<(u64, f64)>> = Vec::with_capacity(draws);
    for _ in 0..draws {
        let d = r.sample(x, rng)?.aggregated()?;
        for &(label, _) in &d {
            sums.entry(label).or_insert((0.0, 0.0));
        }
        samples.push(d);
    }
    for d in &samples {
        let mut it = d.iter().peekable();
        for (label, (s, s2)) in sums.iter_mut() {
            let mut v = 0.0;
            while let Some(&&(l, w)) = it.peek() {
                if l < *label {
                    it.next();
                } else {
                    if l == *label {
                        v = w;
                    }
                    break;
                }
            }
            *s += v;
            *s2 += v * v;
        }
    }
    let exact: std::collections::HashMap<u64, f64> = exact.aggregated()?.into_iter().collect();
    let n = draws as f64;
    Ok(sums
        .into_iter()
        .map(|(label, (s, s2))| {
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            AtomMeanCheck {
                label,
                exact: exact.get(&label).copied().unwrap_or(0.0),
                empirical: mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Labels `0..=max` as probe points.
pub fn discrete_probe(max: u64) -> Vec<ColorPoint> {
    (0..=max).map(ColorPoint::Discrete).collect()
}

/// Convenience: the measure `Σ_j weight_j δ_{x_j}` of a delta, aggregated.
pub fn delta_to_measure(d: &SignedDelta, space: Space) -> Result<WeightedMeasure> {
    let mut m = WeightedMeasure::new(space).into_signed();
    m.add_delta(d)?;
    Ok(m)
}
