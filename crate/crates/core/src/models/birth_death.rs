//! Urns whose replacement kernel is a birth–death transition kernel on ℕ.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use super::{params, LimitForm, ModelSpec};
use crate::error::{Error, Result};
use crate::kernels::{compose, LyapunovSpec, MomentBounds, ReplacementKernel, WeightKernel};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::qsd::{analytic_reference, bd_qsd};
use crate::rng::RngStream;

/// Rate sequence `x ↦ λ_x`.
pub type Rates = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

/// `R_x = up(x) δ_{x+1} + down(x) δ_{x−1}`.
#[derive(Clone)]
pub struct BirthDeathKernel {
    up: Rates,
    down: Rates,
}

impl fmt::Debug for BirthDeathKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BirthDeathKernel")
    }
}

impl BirthDeathKernel {
    pub fn new(up: Rates, down: Rates) -> Self {
        Self { up, down }
    }

    fn row(&self, x: &ColorPoint) -> Option<SignedDelta> {
        let x = x.as_discrete()?;
        let mut d = SignedDelta::with_capacity(2);
        let up = (self.up)(x);
        if up != 0.0 {
            d.push(x + 1, up);
        }
        if x > 0 {
            let down = (self.down)(x);
            if down != 0.0 {
                d.push(x - 1, down);
            }
        }
        Some(d)
    }
}

impl ReplacementKernel for BirthDeathKernel {
    fn sample(&self, x: &ColorPoint, _: &mut RngStream) -> Result<SignedDelta> {
        self.row(x).ok_or_else(|| Error::SpaceMismatch { point: x.clone(), expected: "discrete".into() })
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        self.row(x)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn is_signed(&self) -> bool {
        false
    }
}

/// The urn driven by the M/M/∞ jump chain,
/// `R_x = λ/(xμ+λ) δ_{x+1} + xμ/(xμ+λ) δ_{x−1}`, `R_0 = δ_1`.
///
/// The reference is keyed `poisson(λ/μ)`. Note that the invariant law of `R`
/// itself is `∝ γ(x)(λ + μx)` (key `mm_infty_embedded`); see the acceptance
/// suite for which of the two the urn actually approaches.
pub fn mm_infty_urn(lambda: f64, mu: f64) -> Result<ModelSpec> {
    if !(lambda > 0.0 && lambda < mu && mu.is_finite()) {
        return Err(Error::InvalidParams(format!("need 0 < lambda < mu, got lambda={lambda}, mu={mu}")));
    }
    let up: Rates = Arc::new(move |x| lambda / (x as f64 * mu + lambda));
    let down: Rates = Arc::new(move |x| x as f64 * mu / (x as f64 * mu + lambda));
    let kernel = compose(Arc::new(BirthDeathKernel::new(up, down)), WeightKernel::Identity).with_mass_bounds(1.0, 1.0);

    // R_x·V = (λe^{x+1} + μx e^{x−1}) / (λ + μx) with V = e^x.
    let rv = |x: f64| (lambda * (x + 1.0).exp() + mu * x * (x - 1.0).exp()) / (lambda + mu * x);
    let threshold = lambda * (E * E - 2.0) / mu;
    let k = (0..=threshold.floor() as u64).map(|x| rv(x as f64)).fold(0.0, f64::max);
    let lyapunov = LyapunovSpec::new(|x| (x.as_discrete().unwrap_or(0) as f64).exp(), 2.0 / E, k, 1.0, 1.5)?
        .with_moments(MomentBounds { r: 2.0, p: 2.0, a: 1.0 });

    let p = params(&[("lambda", lambda), ("mu", mu), ("rate", lambda / mu)]);
    let reference = analytic_reference("poisson", &p)?;
    Ok(ModelSpec {
        name: "mm_infty".into(),
        space: Space::Discrete,
        m0: WeightedMeasure::dirac(ColorPoint::Discrete(0), 1.0)?,
        kernel: Arc::new(kernel),
        lyapunov: Some(lyapunov),
        reference_key: Some(format!("poisson({})", lambda / mu)),
        reference: Some(reference),
        limit: LimitForm::Nu,
        params: p,
        notes: vec!["the invariant law of R is the jump-chain law mm_infty_embedded, not poisson".into()],
    })
}

/// Quasi-ergodic urn `R_x = λ_x δ_{x+1} + μ_x δ_{x−1}` with `μ_0 = 0`.
///
/// Rates are divided by `max_{x ≤ probe} (λ_x + μ_x)` so that `Q_x(E) ≤ 1`
/// on the probe. The reference is the truncated quasi-stationary law at
/// level `truncation`.
pub fn bd_quasi_ergodic_urn(lambda: Rates, mu: Rates, probe: u64, truncation: usize) -> Result<ModelSpec> {
    if mu(0) != 0.0 {
        return Err(Error::InvalidParams(format!("mu_0 must be 0, got {}", mu(0))));
    }
    if !(lambda(0) > 0.0) {
        return Err(Error::InvalidParams("lambda_0 must be positive".into()));
    }
    let probe = probe.max(2);
    for x in 0..=probe {
        let (l, m) = (lambda(x), mu(x));
        if !(l >= 0.0 && m >= 0.0 && l.is_finite() && m.is_finite()) {
            return Err(Error::InvalidParams(format!("rates at {x} must be finite and nonnegative")));
        }
        if x >= 1 && m <= 0.0 {
            return Err(Error::InvalidParams(format!("mu_{x} must be positive")));
        }
    }
    let s = (0..=probe).map(|x| lambda(x) + mu(x)).fold(0.0, f64::max);
    let (l0, m0) = (lambda.clone(), mu.clone());
    let up: Rates = Arc::new(move |x| l0(x) / s);
    let down: Rates = Arc::new(move |x| m0(x) / s);

    let c1 = (0..=probe).map(|x| up(x) + down(x)).fold(f64::INFINITY, f64::min);
    let kernel = compose(Arc::new(BirthDeathKernel::new(up.clone(), down.clone())), WeightKernel::Identity)
        .with_mass_bounds(c1, 1.0);

    // V = e^{ax} with e^{−a} = c_1/4, θ = c_1/2; K is the largest drift excess
    // on the part of the probe where V is representable.
    let a = (4.0 / c1).ln();
    let theta = c1 / 2.0;
    let v = move |x: u64| (a * x as f64).exp();
    let k_probe = probe.min((600.0 / a) as u64);
    let k = (0..=k_probe)
        .map(|x| {
            let qv = up(x) * v(x + 1) + if x > 0 { down(x) * v(x - 1) } else { 0.0 };
            (qv - theta * v(x)).max(0.0)
        })
        .fold(0.0, f64::max);
    let lyapunov = LyapunovSpec::new(move |x| v(x.as_discrete().unwrap_or(0)), theta, k, c1, 1.5)?;

    let mut notes = Vec::new();
    let ratio = |x: u64| lambda(x) / mu(x);
    if ratio(probe) >= ratio(1) {
        notes.push(format!(
            "lambda/mu does not decrease on the probe ({} at 1, {} at {probe})",
            ratio(1),
            ratio(probe)
        ));
    }
    let reference = bd_qsd(|x| up(x), |x| down(x), truncation)?;
    notes.extend(reference.warnings.iter().cloned());

    Ok(ModelSpec {
        name: "bd_quasi_ergodic".into(),
        space: Space::Discrete,
        m0: WeightedMeasure::dirac(ColorPoint::Discrete(0), 1.0)?,
        kernel: Arc::new(kernel),
        lyapunov: Some(lyapunov),
        reference_key: Some("bd_qsd".into()),
        reference: Some(reference),
        limit: LimitForm::Nu,
        params: params(&[("normalization", s), ("c1", c1), ("a", a), ("truncation", truncation as f64)]),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{check_lyapunov, check_mass_bounds, discrete_probe};

    #[test]
    fn mm_infty_rows() {
        let spec = mm_infty_urn(1.0, 2.0).unwrap();
        let r0 = spec.kernel.r_mean(&ColorPoint::Discrete(0)).unwrap();
        assert_eq!(r0.entries(), &[(ColorPoint::Discrete(1), 1.0)]);
        let r1 = spec.kernel.r_mean(&ColorPoint::Discrete(1)).unwrap();
        assert_eq!(r1.entries(), &[(ColorPoint::Discrete(2), 1.0 / 3.0), (ColorPoint::Discrete(0), 2.0 / 3.0)]);
        assert!((r1.mass() - 1.0).abs() < 1e-15);
        assert!(mm_infty_urn(2.0, 1.0).is_err());
    }

    #[test]
    fn mm_infty_assumptions_hold_on_probe() {
        let spec = mm_infty_urn(1.0, 2.0).unwrap();
        let rep = check_mass_bounds(&spec.kernel, &discrete_probe(100)).unwrap();
        assert!(rep.ok && (rep.min_mass - 1.0).abs() < 1e-12 && (rep.max_mass - 1.0).abs() < 1e-12);
        let lyap = check_lyapunov(&spec.kernel, spec.lyapunov.as_ref().unwrap(), &discrete_probe(200)).unwrap();
        assert!(lyap.ok, "{lyap:?}");
    }

    #[test]
    fn bd_normalizes_rates() {
        let spec = bd_quasi_ergodic_urn(
            Arc::new(|x| 0.1 / (x as f64 + 1.0)),
            Arc::new(|x| if x == 0 { 0.0 } else { 0.9 }),
            200,
            200,
        )
        .unwrap();
        let rep = check_mass_bounds(&spec.kernel, &discrete_probe(200)).unwrap();
        assert!((rep.max_mass - 1.0).abs() < 1e-12);
        assert!((rep.min_mass - 0.1 / 0.95).abs() < 1e-12);
        assert!(rep.ok);
        let lyap = check_lyapunov(&spec.kernel, spec.lyapunov.as_ref().unwrap(), &discrete_probe(100)).unwrap();
        assert!(lyap.ok, "{lyap:?}");
        assert!(bd_quasi_ergodic_urn(Arc::new(|_| 0.1), Arc::new(|_| 0.9), 10, 10).is_err());
    }
}
