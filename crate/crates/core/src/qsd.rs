//! Reference limits: closed-form distributions and the left Perron vector of
//! finite sub-stochastic matrices.

use std::collections::BTreeMap;
use std::f64::consts::E;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::ReplacementKernel;
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Discrete supports stop once the remaining tail mass is below this.
pub const TAIL_CUTOFF: f64 = 1e-12;

/// Dense row-major square matrix.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceKind {
    Analytic {
        key: String,
        params: BTreeMap<String, f64>,
    },
    /// Left eigenvector of an `n × n` sub-stochastic matrix.
    Eigen {
        n: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    /// `pmf[x]` for `x = 0..pmf.len()`; zero beyond.
    Discrete(Vec<f64>),
    Gaussian {
        mean: f64,
        sd: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution {
    pub kind: ReferenceKind,
    pub support: Support,
    /// `θ_0 = (νG)(E)` for eigen references.
    pub eigenvalue: Option<f64>,
    pub warnings: Vec<String>,
}

impl ReferenceDistribution {
    pub fn discrete(kind: ReferenceKind, pmf: Vec<f64>) -> Self {
        Self { kind, support: Support::Discrete(pmf), eigenvalue: None, warnings: Vec::new() }
    }

    pub fn pmf_vec(&self) -> Option<&[f64]> {
        match &self.support {
            Support::Discrete(p) => Some(p),
            Support::Gaussian { .. } => None,
        }
    }

    /// Point mass at `x` (0 for continuous references).
    pub fn pmf(&self, x: u64) -> f64 {
        match &self.support {
            Support::Discrete(p) => p.get(x as usize).copied().unwrap_or(0.0),
            Support::Gaussian { .. } => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match &self.support {
            Support::Discrete(p) => {
                if x < 0.0 {
                    return 0.0;
                }
                let upto = (x.floor() as usize).min(p.len().saturating_sub(1));
                p[..=upto].iter().sum()
            }
            Support::Gaussian { mean, sd } => Normal::new(*mean, *sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.support {
            Support::Discrete(p) => p.iter().enumerate().map(|(x, w)| x as f64 * w).sum(),
            Support::Gaussian { mean, .. } => *mean,
        }
    }

    /// The discrete pmf as a measure.
    pub fn to_measure(&self) -> Result<WeightedMeasure> {
        match &self.support {
            Support::Discrete(p) => WeightedMeasure::from_pmf(p),
            Support::Gaussian { .. } => Err(Error::DimensionUnsupported { dim: 1 }),
        }
    }
}

fn validate_substochastic(g: &Matrix) -> Result<()> {
    let n = g.len();
    if n == 0 {
        return Err(Error::InvalidMatrix("matrix is empty".into()));
    }
    for (i, row) in g.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMatrix(format!("entry ({i},{j}) = {} is negative or not finite", row[j])));
        }
        let s: f64 = row.iter().sum();
        if s > 1.0 + 1e-12 {
            return Err(Error::InvalidMatrix(format!("row {i} sums to {s} > 1")));
        }
    }
    if g.iter().all(|row| row.iter().all(|v| *v == 0.0)) {
        return Err(Error::InvalidMatrix("matrix is identically zero".into()));
    }
    Ok(())
}

/// Irreducibility and period of the support graph of `g`, as warnings.
fn structure_warnings(g: &Matrix) -> Vec<String> {
    let n = g.len();
    let reach = |start: usize, forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { g[i][j] } else { g[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let mut warnings = Vec::new();
    if !(reach(0, true).iter().all(|&s| s) && reach(0, false).iter().all(|&s| s)) {
        warnings.push("matrix is reducible; the quasi-stationary distribution need not be unique".to_string());
        return warnings;
    }
    // Period = gcd over edges of level(i) + 1 − level(j) with BFS levels.
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if g[i][j] > 0.0 && level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut period = 0usize;
    for i in 0..n {
        for j in 0..n {
            if g[i][j] > 0.0 {
                period = gcd(period, (level[i] + 1).abs_diff(level[j]));
            }
        }
    }
    if period > 1 {
        warnings.push(format!("matrix is periodic with period {period}"));
    }
    warnings
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Normalized left eigenvector of a sub-stochastic matrix for its Perron
/// root, by power iteration.
///
/// Iterates with the lazy matrix `(G + I)/2`, which has the same left
/// eigenvectors as `G` but no periodic part, so birth–death truncations and
/// 2-cycles converge. `θ_0 = (νG)(E)` is computed from `G` itself.
pub fn power_iteration_qsd(g: &Matrix, tol: f64, max_iter: usize) -> Result<ReferenceDistribution> {
    validate_substochastic(g)?;
    let warnings = structure_warnings(g);
    let n = g.len();
    let rows: Vec<Vec<(usize, f64)>> = g
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
        .collect();
    let left_mul = |nu: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in rows.iter().enumerate() {
            let a = nu[i];
            if a != 0.0 {
                for &(j, v) in row {
                    out[j] += a * v;
                }
            }
        }
    };

    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        left_mul(&nu, &mut next);
        for (o, a) in next.iter_mut().zip(&nu) {
            *o = 0.5 * (*o + a);
        }
        let s: f64 = next.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidMatrix("iteration lost all mass".into()));
        }
        change = 0.0;
        for (o, a) in next.iter_mut().zip(&nu) {
            *o /= s;
            change += (*o - a).abs();
        }
        std::mem::swap(&mut nu, &mut next);
        if change < tol {
            break;
        }
    }
    if !(change < tol) {
        return Err(Error::NoConvergence { iterations, change });
    }
    left_mul(&nu, &mut next);
    let theta0: f64 = next.iter().sum();
    Ok(ReferenceDistribution {
        kind: ReferenceKind::Eigen { n },
        support: Support::Discrete(nu),
        eigenvalue: Some(theta0),
        warnings,
    })
}

/// `‖νG − θ_0 ν‖_1`.
pub fn fixed_point_residual(g: &Matrix, reference: &ReferenceDistribution) -> Result<f64> {
    let nu = reference.pmf_vec().ok_or(Error::DimensionUnsupported { dim: 1 })?;
    let theta = reference.eigenvalue.ok_or_else(|| Error::InvalidParams("reference has no eigenvalue".into()))?;
    let n = g.len();
    if nu.len() != n {
        return Err(Error::InvalidMatrix(format!("vector of length {} against {n}×{n} matrix", nu.len())));
    }
    Ok((0..n).map(|j| ((0..n).map(|i| nu[i] * g[i][j]).sum::<f64>() - theta * nu[j]).abs()).sum())
}

/// Birth–death rows `R_x = λ_x δ_{x+1} + μ_x δ_{x−1}` restricted to
/// `{0, …, n−1}`. Mass pushed past `n−1` is dropped, i.e. killed.
pub fn truncate_bd_kernel(lambda: impl Fn(u64) -> f64, mu: impl Fn(u64) -> f64, n: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("truncation level must be at least 2, got {n}")));
    }
    let mut g = vec![vec![0.0; n]; n];
    for (x, row) in g.iter_mut().enumerate() {
        let (l, m) = (lambda(x as u64), mu(x as u64));
        if !(l >= 0.0 && m >= 0.0 && l.is_finite() && m.is_finite()) {
            return Err(Error::InvalidParams(format!("rates at {x} must be finite and nonnegative")));
        }
        if x + 1 < n {
            row[x + 1] = l;
        }
        if x > 0 {
            row[x - 1] = m;
        }
    }
    Ok(g)
}

/// Quasi-stationary distribution of the birth–death kernel, truncated at `n`.
pub fn bd_qsd(lambda: impl Fn(u64) -> f64, mu: impl Fn(u64) -> f64, n: usize) -> Result<ReferenceDistribution> {
    power_iteration_qsd(&truncate_bd_kernel(lambda, mu, n)?, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

fn param(params: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    params.get(name).copied().ok_or_else(|| Error::InvalidParams(format!("missing parameter `{name}`")))
}

/// `Σ_{i > x} 1/i!` for `x = 0..len`, summed from the far tail inward.
fn factorial_tails(len: usize) -> Vec<f64> {
    let top = len + 30;
    let mut inv_fact = vec![1.0; top + 1];
    for i in 1..=top {
        inv_fact[i] = inv_fact[i - 1] / i as f64;
    }
    let mut tails = vec![0.0; top + 1];
    for i in (0..top).rev() {
        tails[i] = tails[i + 1] + inv_fact[i + 1];
    }
    tails.truncate(len);
    tails
}

/// Extend `pmf(x)` until the remaining mass `1 − Σ` is below the cutoff,
/// or until the terms themselves fall below it past `min_len`.
fn tabulate(min_len: usize, mut pmf: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut total = 0.0;
    loop {
        let x = out.len();
        let p = pmf(x);
        out.push(p);
        total += p;
        if x + 1 >= min_len && (1.0 - total < TAIL_CUTOFF || p < TAIL_CUTOFF * 1e-3) {
            break out;
        }
        if x > 100_000 {
            break out;
        }
    }
}

/// Closed-form references by key.
///
/// - `poisson` (`rate`, or `lambda` and `mu` with rate `λ/μ`)
/// - `geometric_half`: `2^{−x−1}`
/// - `protected_pi`: leaf-children counts of internal nodes in the random
///   recursive tree
/// - `protected_nu`: the stationary law of the protected-nodes `Q − I`
/// - `mm_infty_embedded` (`lambda`, `mu`): stationary law of the jump chain
///   of the M/M/∞ queue, `∝ γ(x)(λ + μx)`
/// - `gaussian` (`mean`, and `sd` or `var`)
pub fn analytic_reference(key: &str, params: &BTreeMap<String, f64>) -> Result<ReferenceDistribution> {
    let kind = ReferenceKind::Analytic { key: key.to_string(), params: params.clone() };
    let pmf = match key {
        "poisson" => {
            let rate = match params.get("rate") {
                Some(r) => *r,
                None => param(params, "lambda")? / param(params, "mu")?,
            };
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidParams(format!("poisson rate must be positive, got {rate}")));
            }
            let mut p = (-rate).exp();
            tabulate(rate.ceil() as usize + 1, |x| {
                if x > 0 {
                    p *= rate / x as f64;
                }
                p
            })
        }
        "mm_infty_embedded" => {
            let (lambda, mu) = (param(params, "lambda")?, param(params, "mu")?);
            if !(lambda > 0.0 && mu > 0.0) {
                return Err(Error::InvalidParams("need lambda, mu > 0".into()));
            }
            let rate = lambda / mu;
            let mut g = (-rate).exp();
            tabulate(rate.ceil() as usize + 1, |x| {
                if x > 0 {
                    g *= rate / x as f64;
                }
                g * (lambda + mu * x as f64) / (2.0 * lambda)
            })
        }
        "geometric_half" => tabulate(1, |x| 0.5f64.powi(x as i32 + 1)),
        "protected_pi" => {
            let tails = factorial_tails(40);
            tabulate(2, |x| match x {
                0 => 1.0 - 2.0 / E,
                1 => 2.0 - 4.0 / E,
                _ => 2.0 / E * tails.get(x).copied().unwrap_or(0.0),
            })
        }
        "protected_nu" => {
            // The closed form has total mass 2e/(1+2e); rescale to a
            // probability (with z = 2e instead of 1+2e).
            let tails = factorial_tails(40);
            let z = 2.0 * E;
            tabulate(2, |x| match x {
                0 => (E - 2.0) / z,
                1 => 4.0 * (E - 2.0) / z,
                _ => 2.0 * (x as f64 + 1.0) / z * tails.get(x).copied().unwrap_or(0.0),
            })
        }
        "gaussian" => {
            let mean = param(params, "mean")?;
            let sd = match params.get("sd") {
                Some(sd) => *sd,
                None => param(params, "var")?.sqrt(),
            };
            if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                return Err(Error::InvalidParams(format!("gaussian needs finite mean and sd > 0, got {mean}, {sd}")));
            }
            return Ok(ReferenceDistribution {
                kind,
                support: Support::Gaussian { mean, sd },
                eigenvalue: None,
                warnings: Vec::new(),
            });
        }
        other => return Err(Error::UnknownReference(other.to_string())),
    };
    Ok(ReferenceDistribution::discrete(kind, pmf))
}

/// `νR = Σ_x ν(x) R_x` over `x ≤ cap`, as a signed measure.
pub fn nu_r(nu: &ReferenceDistribution, r: &dyn ReplacementKernel, cap: u64) -> Result<WeightedMeasure> {
    let pmf = nu.pmf_vec().ok_or(Error::DimensionUnsupported { dim: 1 })?;
    let mut acc = SignedDelta::new();
    for (x, &w) in pmf.iter().enumerate().take(cap as usize + 1) {
        if w == 0.0 {
            continue;
        }
        let rx = r.mean(&ColorPoint::Discrete(x as u64)).ok_or(Error::MeanUnavailable)?;
        for (p, v) in rx.entries() {
            acc.push(p.clone(), w * v);
        }
    }
    let mut m = WeightedMeasure::new(Space::Discrete).into_signed();
    m.add_delta(&acc)?;
    Ok(m)
}
