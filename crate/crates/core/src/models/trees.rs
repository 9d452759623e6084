//! Out-degree and leaf-children profiles of random recursive trees and
//! forests. All kernels here are signed: a drawn node leaves its class.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{params, LimitForm, ModelSpec};
use crate::error::{Error, Result};
use crate::kernels::{compose, rescale, LyapunovSpec, ReplacementKernel, WeightKernel};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::qsd::analytic_reference;
use crate::rng::RngStream;

fn discrete(x: &ColorPoint) -> Result<u64> {
    x.as_discrete().ok_or_else(|| Error::SpaceMismatch { point: x.clone(), expected: "discrete".into() })
}

/// `R_x = −δ_x + δ_0 + δ_{x+1}`: the chosen node gains a child, which is a
/// new leaf.
#[derive(Debug)]
pub struct RrtKernel;

impl ReplacementKernel for RrtKernel {
    fn sample(&self, x: &ColorPoint, _: &mut RngStream) -> Result<SignedDelta> {
        let x = discrete(x)?;
        Ok([(x, -1.0), (0, 1.0), (x + 1, 1.0)].into_iter().map(|(p, w)| (ColorPoint::Discrete(p), w)).collect())
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        self.sample(x, &mut RngStream::new(0)).ok()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn is_signed(&self) -> bool {
        true
    }
}

pub fn rrt_outdegree_urn() -> Result<ModelSpec> {
    const EPS: f64 = 0.25;
    let kernel = compose(Arc::new(RrtKernel), WeightKernel::Identity).with_mass_bounds(1.0, 1.0);
    let lyapunov =
        LyapunovSpec::new(|x| (2.0 - EPS).powi(x.as_discrete().unwrap_or(0) as i32), 1.0 - EPS, 1.0, 1.0, 1.5)?;
    Ok(ModelSpec {
        name: "rrt".into(),
        space: Space::Discrete,
        m0: WeightedMeasure::dirac(ColorPoint::Discrete(0), 1.0)?,
        kernel: Arc::new(kernel),
        lyapunov: Some(lyapunov),
        reference_key: Some("geometric_half".into()),
        reference: Some(analytic_reference("geometric_half", &BTreeMap::new())?),
        limit: LimitForm::Nu,
        params: params(&[("epsilon", EPS)]),
        notes: Vec::new(),
    })
}

/// Random recursive forest with multiple children. At an internal node
/// (`x ≥ 1`): with probability `α_{−1}` an edge to a child is cut
/// (`−δ_x + δ_{x−1}`), with probability `α_k` `k` leaves are added
/// (`−δ_x + kδ_0 + δ_{x+k}`). At a leaf, `k ~ β` leaves are added
/// (`(k−1)δ_0 + δ_k`).
#[derive(Debug)]
pub struct RrfKernel {
    /// `(k, α_k)` with `k ∈ {−1, 1, 2, …}`, cumulative order.
    alpha: Vec<(i64, f64)>,
    beta: Vec<(u64, f64)>,
}

fn pick<T: Copy>(table: &[(T, f64)], u: f64) -> T {
    let mut acc = 0.0;
    for &(k, p) in table {
        acc += p;
        if u < acc {
            return k;
        }
    }
    table.iter().rev().find(|(_, p)| *p > 0.0).map(|&(k, _)| k).unwrap_or(table[0].0)
}

impl RrfKernel {
    fn draw(x: u64, k: i64) -> SignedDelta {
        let mut d = SignedDelta::with_capacity(3);
        if x == 0 {
            let k = k as u64;
            if k > 1 {
                d.push(0, (k - 1) as f64);
            }
            d.push(k, 1.0);
        } else if k == -1 {
            d.push(x, -1.0);
            d.push(x - 1, 1.0);
        } else {
            d.push(x, -1.0);
            d.push(0, k as f64);
            d.push(x + k as u64, 1.0);
        }
        d
    }
}

impl ReplacementKernel for RrfKernel {
    fn sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        let x = discrete(x)?;
        let u = rng.uniform();
        let k = if x == 0 { pick(&self.beta, u) as i64 } else { pick(&self.alpha, u) };
        Ok(Self::draw(x, k))
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        let x = x.as_discrete()?;
        let mut d = SignedDelta::new();
        if x == 0 {
            for &(k, p) in &self.beta {
                for (pt, w) in Self::draw(0, k as i64).entries() {
                    d.push(pt.clone(), p * w);
                }
            }
        } else {
            for &(k, p) in &self.alpha {
                for (pt, w) in Self::draw(x, k).entries() {
                    d.push(pt.clone(), p * w);
                }
            }
        }
        Some(d)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn is_signed(&self) -> bool {
        true
    }
}

fn check_law<T: Copy + Into<i64>>(name: &str, law: &[(T, f64)], allowed: impl Fn(i64) -> bool) -> Result<()> {
    if law.is_empty() {
        return Err(Error::InvalidParams(format!("{name} is empty")));
    }
    let mut total = 0.0;
    for &(k, p) in law {
        if !allowed(k.into()) {
            return Err(Error::InvalidParams(format!("{name} puts mass on {}", k.into())));
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::InvalidParams(format!("{name}_{} = {p} is not a probability", k.into())));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// Forest urn for finitely supported `α` on `{−1, 1, 2, …}` and `β` on
/// `{1, 2, …}`, rescaled by `M = M_α ∨ M_β` with `M_α = Σ|k|α_k` and
/// `M_β = Σ kβ_k`.
pub fn rrf_urn(alpha: &[(i64, f64)], beta: &[(u64, f64)]) -> Result<ModelSpec> {
    check_law("alpha", alpha, |k| k == -1 || k >= 1)?;
    let beta_i: Vec<(i64, f64)> = beta.iter().map(|&(k, p)| (k as i64, p)).collect();
    check_law("beta", &beta_i, |k| k >= 1)?;
    let a_minus = alpha.iter().filter(|(k, _)| *k == -1).map(|(_, p)| p).sum::<f64>();
    if !(a_minus > 0.0 && a_minus < 1.0) {
        return Err(Error::InvalidParams(format!("need 0 < alpha_-1 < 1, got {a_minus}")));
    }
    let m_alpha: f64 = alpha.iter().map(|&(k, p)| k.unsigned_abs() as f64 * p).sum();
    let m_beta: f64 = beta.iter().map(|&(k, p)| k as f64 * p).sum();
    let m = m_alpha.max(m_beta);
    // Actual mean masses: Σ_{k≥1} kα_k at internal nodes, M_β at leaves.
    let internal_mass = m_alpha - a_minus;
    let (lo, hi) = (internal_mass.min(m_beta) / m, internal_mass.max(m_beta) / m);

    let kernel = RrfKernel { alpha: alpha.to_vec(), beta: beta.to_vec() };
    let composed = rescale(&compose(Arc::new(kernel), WeightKernel::Identity), m)?.with_mass_bounds(lo, hi);
    Ok(ModelSpec {
        name: "rrf".into(),
        space: Space::Discrete,
        m0: WeightedMeasure::dirac(ColorPoint::Discrete(0), 1.0)?,
        kernel: Arc::new(composed),
        lyapunov: None,
        reference_key: None,
        reference: None,
        limit: LimitForm::NuR,
        params: params(&[("M_alpha", m_alpha), ("M_beta", m_beta), ("M", m), ("internal_mass", internal_mass)]),
        notes: vec!["no closed-form limit; compare against a long-run estimate".into()],
    })
}

/// Leaf-children counts of internal nodes: at `x ≥ 1`, with probability
/// `1/(x+1)` the node itself receives the new leaf, otherwise one of its
/// leaves does.
#[derive(Debug)]
pub struct ProtectedNodesKernel;

impl ProtectedNodesKernel {
    fn draw(x: u64, own: bool) -> SignedDelta {
        let mut d = SignedDelta::with_capacity(3);
        d.push(x, -1.0);
        if x == 0 || own {
            d.push(x + 1, 1.0);
        } else {
            d.push(x - 1, 1.0);
            d.push(1, 1.0);
        }
        d
    }
}

impl ReplacementKernel for ProtectedNodesKernel {
    fn sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        let x = discrete(x)?;
        let own = rng.uniform() < 1.0 / (x as f64 + 1.0);
        Ok(Self::draw(x, own))
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        let x = x.as_discrete()?;
        if x == 0 {
            return Some(Self::draw(0, true));
        }
        let p = 1.0 / (x as f64 + 1.0);
        let mut d = Self::draw(x, true).scaled(p);
        for (pt, w) in Self::draw(x, false).entries() {
            d.push(pt.clone(), (1.0 - p) * w);
        }
        Some(d)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn is_signed(&self) -> bool {
        true
    }
}

pub fn protected_nodes_urn() -> Result<ModelSpec> {
    const EPS: f64 = 0.5;
    const Q: f64 = 1.5;
    let kernel =
        compose(Arc::new(ProtectedNodesKernel), WeightKernel::scalar(|x| x.as_discrete().unwrap_or(0) as f64 + 1.0))
            .with_mass_bounds(1.0, 1.0);

    // V(0) = V(1) = 1, V(x) = Π_{i=2..x} (i − ε).
    let v = |x: u64| (2..=x).map(|i| i as f64 - EPS).product::<f64>();
    let theta = 1.0 - EPS / 2.0;
    let qv = |x: u64, pow: f64| {
        ProtectedNodesKernel
            .mean(&ColorPoint::Discrete(x))
            .unwrap()
            .integrate(|y| (y.as_discrete().unwrap_or(0) as f64 + 1.0) * v(y.as_discrete().unwrap_or(0)).powf(pow))
    };
    // x_0: past it the drift ratio stays below θ; x_1: past it Q_x·V^{1/q} ≤ 0.
    let probe = 150;
    let x0 = (0..probe).rev().find(|&x| qv(x, 1.0) > theta * v(x)).map_or(0, |x| x + 1);
    let x1 = (0..probe).rev().find(|&x| qv(x, 1.0 / Q) > 0.0).map_or(0, |x| x + 1);
    let k = (0..=x0).map(|x| qv(x, 1.0)).fold(0.0, f64::max) + (0..=x1).map(|x| qv(x, 1.0 / Q)).fold(0.0, f64::max);
    let lyapunov = LyapunovSpec::new(move |x| v(x.as_discrete().unwrap_or(0)), theta, k, 1.0, Q)?;

    Ok(ModelSpec {
        name: "protected_nodes".into(),
        space: Space::Discrete,
        m0: WeightedMeasure::dirac(ColorPoint::Discrete(1), 1.0)?,
        kernel: Arc::new(kernel),
        lyapunov: Some(lyapunov),
        reference_key: Some("protected_pi".into()),
        reference: Some(analytic_reference("protected_pi", &BTreeMap::new())?),
        limit: LimitForm::NuR,
        params: params(&[("epsilon", EPS), ("x0", x0 as f64), ("x1", x1 as f64)]),
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{check_lyapunov, check_mass_bounds, discrete_probe};

    fn disc(entries: &[(u64, f64)]) -> Vec<(u64, f64)> {
        entries.to_vec()
    }

    #[test]
    fn rrt_kernel_cancels_at_root() {
        let spec = rrt_outdegree_urn().unwrap();
        let r0 = spec.kernel.r_mean(&ColorPoint::Discrete(0)).unwrap().aggregated().unwrap();
        assert_eq!(r0, disc(&[(0, 0.0), (1, 1.0)]));
        let rep = check_mass_bounds(&spec.kernel, &discrete_probe(100)).unwrap();
        assert!(rep.ok && rep.min_mass == 1.0 && rep.max_mass == 1.0);
        let lyap = check_lyapunov(&spec.kernel, spec.lyapunov.as_ref().unwrap(), &discrete_probe(100)).unwrap();
        assert!(lyap.ok, "{lyap:?}");
    }

    #[test]
    fn protected_q_matches_closed_form() {
        let spec = protected_nodes_urn().unwrap();
        for x in 1..=50u64 {
            let q = spec.kernel.q_mean(&ColorPoint::Discrete(x)).unwrap().aggregated().unwrap();
            let xf = x as f64;
            let mut want: BTreeMap<u64, f64> = BTreeMap::new();
            *want.entry(x + 1).or_default() += (xf + 2.0) / (xf + 1.0);
            *want.entry(x - 1).or_default() += xf / (xf + 1.0) * xf;
            *want.entry(1).or_default() += xf / (xf + 1.0) * 2.0;
            *want.entry(x).or_default() -= xf + 1.0;
            for (label, w) in q {
                assert!((w - want.get(&label).copied().unwrap_or(0.0)).abs() < 1e-12, "x={x} label={label}");
            }
            let mass = spec.kernel.q_mean(&ColorPoint::Discrete(x)).unwrap().mass();
            assert!((mass - 1.0).abs() < 1e-12);
        }
        let lyap = check_lyapunov(&spec.kernel, spec.lyapunov.as_ref().unwrap(), &discrete_probe(100)).unwrap();
        assert!(lyap.ok, "{lyap:?}");
    }

    #[test]
    fn rrf_draws_and_masses() {
        let spec = rrf_urn(&[(-1, 0.3), (1, 0.7)], &[(1, 1.0)]).unwrap();
        assert_eq!(spec.params["M"], 1.0);
        let cut = RrfKernel::draw(3, -1);
        assert_eq!(cut.aggregated().unwrap(), disc(&[(2, 1.0), (3, -1.0)]));
        assert_eq!(cut.mass(), 0.0);
        let mean = spec.kernel.r_mean(&ColorPoint::Discrete(4)).unwrap();
        assert!((mean.mass() - 0.7).abs() < 1e-12);
        assert!(rrf_urn(&[(1, 1.0)], &[(1, 1.0)]).is_err());
        assert!(rrf_urn(&[(-1, 0.5), (0, 0.5)], &[(1, 1.0)]).is_err());
    }
}
