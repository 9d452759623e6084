//! Urns that add the occupation measure of a killed Markov chain path.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Geometric};

use super::{params, LimitForm, ModelSpec, PATH_CAP};
use crate::error::{Error, Result};
use crate::kernels::{compose, rescale, ReplacementKernel, WeightKernel};
use crate::measure::{ColorPoint, SignedDelta, Space, WeightedMeasure};
use crate::qsd::{power_iteration_qsd, Matrix, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::RngStream;

/// Pilot draws used to estimate `sup_x R_x(E)` when no exact mean exists.
pub const PILOT_DRAWS: usize = 10_000;

/// Safety factor on the pilot estimate.
pub const PILOT_SAFETY: f64 = 1.5;

/// Law of the path horizon `T` on `ℕ ∪ {∞}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HorizonLaw {
    Infinite,
    Deterministic(u64),
    /// `P(T = k) = p(1 − p)^k` for `k ≥ 0`.
    Geometric(f64),
}

impl HorizonLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            HorizonLaw::Deterministic(0) => Err(Error::InvalidParams("horizon T = 0 almost surely".into())),
            HorizonLaw::Geometric(p) if !(p > 0.0 && p < 1.0) => {
                Err(Error::InvalidParams(format!("geometric horizon needs 0 < p < 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> u64 {
        match *self {
            HorizonLaw::Infinite => u64::MAX,
            HorizonLaw::Deterministic(t) => t,
            HorizonLaw::Geometric(p) => Geometric::new(p).map(|g| g.sample(rng)).unwrap_or(u64::MAX),
        }
    }
}

/// One transition `x ↦ next state`, with `None` standing for the cemetery.
pub type Transition = Arc<dyn Fn(u64, &mut RngStream) -> Option<u64> + Send + Sync>;

#[derive(Clone)]
pub struct AbsorbedChainSpec {
    pub transition: Transition,
    /// Sub-stochastic matrix on `{0, …, n−1}` when the chain is finite;
    /// row deficits are the killing probabilities.
    pub matrix: Option<Matrix>,
    pub horizon: HorizonLaw,
    pub cap: usize,
    /// Start points used by the pilot estimate of `sup_x R_x(E)`.
    pub probe: Vec<u64>,
}

impl fmt::Debug for AbsorbedChainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AbsorbedChainSpec")
            .field("matrix", &self.matrix)
            .field("horizon", &self.horizon)
            .field("cap", &self.cap)
            .finish()
    }
}

/// Three-state birth–death chain used as the worked example; every row
/// loses mass 0.2 to the cemetery.
pub fn three_state_chain() -> Matrix {
    vec![vec![0.5, 0.3, 0.0], vec![0.2, 0.4, 0.2], vec![0.0, 0.3, 0.5]]
}

impl AbsorbedChainSpec {
    /// Finite chain driven by a sub-stochastic matrix.
    pub fn from_matrix(g: Matrix, horizon: HorizonLaw) -> Result<Self> {
        let n = g.len();
        for (i, row) in g.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidMatrix(format!("row {i} has a negative or non-finite entry")));
            }
            if row.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::InvalidMatrix(format!("row {i} sums above 1")));
            }
        }
        let rows = g.clone();
        let transition: Transition = Arc::new(move |x, rng| {
            let row = rows.get(x as usize)?;
            let u = rng.uniform();
            let mut acc = 0.0;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Some(j as u64);
                }
            }
            None
        });
        Ok(Self { transition, matrix: Some(g), horizon, cap: PATH_CAP, probe: (0..n as u64).collect() })
    }

    pub fn from_transition(transition: Transition, horizon: HorizonLaw, probe: Vec<u64>) -> Self {
        Self { transition, matrix: None, horizon, cap: PATH_CAP, probe }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }
}

/// `R⁽ⁱ⁾_x = Σ_{n=0}^{T∧(τ_∂−1)} δ_{X_n}` for a fresh path started at `x`.
#[derive(Debug)]
pub struct SamplePathKernel {
    chain: AbsorbedChainSpec,
}

impl SamplePathKernel {
    pub fn new(chain: AbsorbedChainSpec) -> Result<Self> {
        chain.horizon.validate()?;
        Ok(Self { chain })
    }

    /// `Σ_k c_k δ_x G^k` with `c_k = P(T ≥ k)`, summed until negligible.
    fn exact_mean(&self, x: u64) -> Option<SignedDelta> {
        let g = self.chain.matrix.as_ref()?;
        let n = g.len();
        if x as usize >= n {
            return None;
        }
        let mut row = vec![0.0; n];
        row[x as usize] = 1.0;
        let mut acc = vec![0.0; n];
        let mut survive = 1.0;
        let mut k = 0u64;
        loop {
            let mass: f64 = row.iter().sum();
            if survive * mass < 1e-17 || k as usize > self.chain.cap {
                break;
            }
            acc.iter_mut().zip(&row).for_each(|(a, r)| *a += survive * r);
            match self.chain.horizon {
                HorizonLaw::Deterministic(t) if k >= t => break,
                HorizonLaw::Geometric(p) => survive *= 1.0 - p,
                _ => {}
            }
            let mut next = vec![0.0; n];
            for (i, &ri) in row.iter().enumerate() {
                if ri != 0.0 {
                    for (j, &gij) in g[i].iter().enumerate() {
                        next[j] += ri * gij;
                    }
                }
            }
            row = next;
            k += 1;
        }
        Some(
            acc.into_iter()
                .enumerate()
                .filter(|(_, w)| *w != 0.0)
                .map(|(j, w)| (ColorPoint::Discrete(j as u64), w))
                .collect(),
        )
    }
}

impl ReplacementKernel for SamplePathKernel {
    fn sample(&self, x: &ColorPoint, rng: &mut RngStream) -> Result<SignedDelta> {
        let mut state =
            x.as_discrete().ok_or_else(|| Error::SpaceMismatch { point: x.clone(), expected: "discrete".into() })?;
        let horizon = self.chain.horizon.draw(rng);
        let mut d = SignedDelta::new();
        let mut n = 0u64;
        loop {
            d.push(state, 1.0);
            if n >= horizon {
                break;
            }
            match (self.chain.transition)(state, rng) {
                Some(next) => state = next,
                None => break,
            }
            n += 1;
            if d.len() >= self.chain.cap {
                return Err(Error::HorizonCapExceeded { cap: self.chain.cap });
            }
        }
        Ok(d)
    }

    fn mean(&self, x: &ColorPoint) -> Option<SignedDelta> {
        self.exact_mean(x.as_discrete()?)
    }

    fn has_exact_mean(&self) -> bool {
        self.chain.matrix.is_some()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn is_signed(&self) -> bool {
        false
    }
}

/// `sup_x R_x(E)`: exact over the states when the mean is available,
/// otherwise the largest of [`PILOT_DRAWS`] pilot masses times
/// [`PILOT_SAFETY`].
fn mass_sup(kernel: &dyn ReplacementKernel, probe: &[u64], pilot_seed: u64) -> Result<(f64, bool)> {
    if probe.is_empty() {
        return Err(Error::InvalidParams("no probe states".into()));
    }
    if kernel.has_exact_mean() {
        let mut sup: f64 = 0.0;
        for &x in probe {
            sup = sup.max(kernel.mean(&ColorPoint::Discrete(x)).ok_or(Error::MeanUnavailable)?.mass());
        }
        return Ok((sup, true));
    }
    let mut rng = RngStream::new(pilot_seed);
    let mut sup: f64 = 0.0;
    for i in 0..PILOT_DRAWS {
        let x = ColorPoint::Discrete(probe[i % probe.len()]);
        sup = sup.max(kernel.sample(&x, &mut rng)?.mass());
    }
    Ok((sup * PILOT_SAFETY, false))
}

/// Sample-path urn for `chain`, rescaled by `sup_x R_x(E)`. For finite
/// chains the reference is the left Perron vector of the matrix.
pub fn discrete_sample_path_urn(
    chain: AbsorbedChainSpec,
    m0: Option<WeightedMeasure>,
    pilot_seed: u64,
) -> Result<ModelSpec> {
    let probe = chain.probe.clone();
    let matrix = chain.matrix.clone();
    let horizon = chain.horizon;
    let kernel = SamplePathKernel::new(chain)?;
    let (sup, exact) = mass_sup(&kernel, &probe, pilot_seed)?;
    if !(sup > 0.0 && sup.is_finite()) {
        return Err(Error::InvalidParams(format!("bad path mass bound {sup}")));
    }
    let mut composed = rescale(&compose(Arc::new(kernel), WeightKernel::Identity), sup)?;
    let mut p = params(&[("kappa", sup), ("kappa_exact", if exact { 1.0 } else { 0.0 })]);
    let mut notes = vec!["local Dobrushin / Lyapunov conditions on the chain are assumed, not checked".to_string()];

    let reference = match &matrix {
        Some(g) => {
            let r = power_iteration_qsd(g, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            notes.extend(r.warnings.iter().cloned());
            if let (Some(theta), HorizonLaw::Infinite) = (r.eigenvalue, horizon) {
                // ν(I − G)⁻¹ = ν/(1 − θ), so m_n(E)/n → 1/((1 − θ)κ).
                p.insert("theta0".into(), theta);
                p.insert("mass_rate".into(), 1.0 / ((1.0 - theta) * sup));
            }
            let masses: Vec<f64> = (0..g.len() as u64)
                .map(|x| composed.r_mean(&ColorPoint::Discrete(x)).map(|d| d.mass()))
                .collect::<Result<_>>()?;
            let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = masses.iter().copied().fold(0.0, f64::max);
            composed = composed.with_mass_bounds(lo, hi);
            Some(r)
        }
        None => None,
    };
    let m0 = match (m0, &matrix) {
        (Some(m0), _) => m0,
        (None, Some(g)) => {
            WeightedMeasure::from_atoms(Space::Discrete, (0..g.len() as u64).map(|x| (ColorPoint::Discrete(x), 1.0)))?
        }
        (None, None) => {
            WeightedMeasure::from_atoms(Space::Discrete, probe.iter().map(|&x| (ColorPoint::Discrete(x), 1.0)))?
        }
    };
    Ok(ModelSpec {
        name: "sample_path".into(),
        space: Space::Discrete,
        m0,
        kernel: Arc::new(composed),
        lyapunov: None,
        reference_key: reference.as_ref().map(|_| "eigen".to_string()),
        reference,
        limit: LimitForm::Nu,
        params: p,
        notes,
    })
}
