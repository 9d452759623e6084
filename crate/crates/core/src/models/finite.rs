//! Finitely-many-color urns with replacement matrix `M`.

use std::sync::Arc;

use super::{params, LimitForm, ModelSpec};
use crate::error::{Error, Result};
use crate::kernels::{compose, ComposedKernel, ReplacementKernel, WeightKernel};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::qsd::{power_iteration_qsd, Matrix, ReferenceDistribution, ReferenceKind, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::RngStream;

/// `R_x = (1/S) Σ_i M_{x,i} δ_i` on colors `1..=d`.
#[derive(Debug)]
pub struct FiniteUrnKernel {
    rows: Vec<SignedDelta>,
    signed: bool,
}

impl FiniteUrnKernel {
    fn row(&self, x: &ColorPoint) -> Result<&SignedDelta> {
        x.as_discrete()
            .filter(|&l| l >= 1 && (l as usize) <= self.rows.len())
            .map(|l| &self.rows[l as usize - 1])
            .ok_or_else(|| Error::InvalidParams(format!("color {x} outside 1..={}", self.rows.len())))
    }
}

impl ReplacementKernel for FiniteUrnKernel {
    fn sample(&self, x: &ColorPoint, _: &mut RngStream) -> Result<SignedDelta> {
        self.row(x).cloned()
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        self.row(x).ok().cloned()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn is_signed(&self) -> bool {
        self.signed
    }
}

fn check_shape(m: &Matrix, w: &[f64]) -> Result<usize> {
    let d = m.len();
    if d == 0 || m.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidMatrix("replacement matrix must be square and non-empty".into()));
    }
    if w.len() != d {
        return Err(Error::InvalidParams(format!("{} weights for {d} colors", w.len())));
    }
    if let Some(i) = w.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParams(format!("weight of color {} must be positive", i + 1)));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("entries must be finite".into()));
    }
    Ok(d)
}

/// Urn with replacement matrix `M` (nonnegative, no zero row) and color
/// weights `w`. `m0` defaults to one ball of each color.
pub fn finite_polya_urn(m: &Matrix, w: &[f64], m0: Option<WeightedMeasure>) -> Result<ModelSpec> {
    check_shape(m, w)?;
    for (i, row) in m.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidMatrix(format!("entry ({},{}) is negative", i + 1, j + 1)));
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidMatrix(format!("row {} is zero", i + 1)));
        }
    }
    build(m, w, m0, false)
}

/// As [`finite_polya_urn`] but entries may be negative; tenability is then
/// the caller's responsibility and is enforced at run time.
pub fn finite_signed_urn(m: &Matrix, w: &[f64], m0: Option<WeightedMeasure>) -> Result<ModelSpec> {
    check_shape(m, w)?;
    build(m, w, m0, true)
}

fn build(m: &Matrix, w: &[f64], m0: Option<WeightedMeasure>, signed: bool) -> Result<ModelSpec> {
    let d = m.len();
    let s = m.iter().map(|row| row.iter().sum::<f64>()).fold(f64::NEG_INFINITY, f64::max);
    if !(s > 0.0) {
        return Err(Error::InvalidMatrix("no row has positive sum".into()));
    }
    let rows = m
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (ColorPoint::Discrete(i as u64 + 1), v / s))
                .collect()
        })
        .collect();
    let kernel = FiniteUrnKernel { rows, signed };
    let weights = w.to_vec();
    let weight = if w.iter().all(|v| *v == 1.0) {
        WeightKernel::Identity
    } else {
        WeightKernel::scalar(move |x| x.as_discrete().and_then(|l| weights.get(l as usize - 1)).copied().unwrap_or(0.0))
    };
    // Q_{x,i} = M_{x,i} w_i / S.
    let q: Matrix = m.iter().map(|row| row.iter().zip(w).map(|(v, wi)| v * wi / s).collect()).collect();
    let q_mass: Vec<f64> = q.iter().map(|row| row.iter().sum()).collect();
    let c1 = q_mass.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = q_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let composed = compose(Arc::new(kernel), weight).with_mass_bounds(c1, kappa);

    let mut notes = Vec::new();
    let reference = if signed || q.iter().flatten().any(|v| *v < 0.0) {
        notes.push("signed replacement matrix: no eigen reference".to_string());
        None
    } else {
        Some(limit_reference(&q, &composed, kappa)?)
    };
    if let Some(r) = &reference {
        notes.extend(r.warnings.iter().cloned());
    }

    let m0 = match m0 {
        Some(m0) => m0,
        None => WeightedMeasure::from_atoms(Space::Discrete, (1..=d as u64).map(|i| (ColorPoint::Discrete(i), 1.0)))?,
    };
    Ok(ModelSpec {
        name: "finite_urn".into(),
        space: Space::Discrete,
        m0,
        kernel: Arc::new(composed),
        lyapunov: None,
        reference_key: reference.as_ref().map(|_| "eigen".to_string()),
        reference,
        limit: LimitForm::NuR,
        params: params(&[("d", d as f64), ("S", s)]),
        notes,
    })
}

/// `νR / νR(E)` with `ν` the left Perron vector of `Q`, relabelled onto `1..=d`.
fn limit_reference(q: &Matrix, k: &ComposedKernel, kappa: f64) -> Result<ReferenceDistribution> {
    let scaled: Matrix = q.iter().map(|row| row.iter().map(|v| v / kappa).collect()).collect();
    let oracle = power_iteration_qsd(&scaled, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let nu = oracle.pmf_vec().unwrap_or_default();
    let d = q.len();
    let mut pmf = vec![0.0; d + 1];
    for (x, &weight) in nu.iter().enumerate() {
        for (p, v) in k.r_mean(&ColorPoint::Discrete(x as u64 + 1))?.entries() {
            pmf[p.as_discrete().unwrap_or(0) as usize] += weight * v;
        }
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    Ok(ReferenceDistribution {
        kind: ReferenceKind::Eigen { n: d },
        support: crate::qsd::Support::Discrete(pmf),
        eigenvalue: oracle.eigenvalue.map(|t| t * kappa),
        warnings: oracle.warnings,
    })
}
