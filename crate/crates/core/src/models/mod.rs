//! The model zoo: finite urns, birth–death urns, random-tree profiles and
//! sample-path urns, each bundled with its initial composition, kernel,
//! drift metadata and the reference limit of `m_n / m_n(E)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::engine::MvppState;
use crate::error::Result;
use crate::kernels::{ComposedKernel, LyapunovSpec};
use crate::measure::{Space, WeightedMeasure};
use crate::qsd::ReferenceDistribution;
use crate::rng::RngStream;

mod birth_death;
mod diffusion;
mod finite;
mod sample_path;
mod trees;

pub use birth_death::{bd_quasi_ergodic_urn, mm_infty_urn, BirthDeathKernel, Rates};
pub use diffusion::{
    killed_diffusion_urn, self_interacting_qsd, DriftReport, KilledDiffusionKernel, KilledDiffusionSpec,
    OccupationMeasure, Quadrature, SelfInteractingRun, TimeHorizon, DEFAULT_DT,
};
pub use finite::{finite_polya_urn, finite_signed_urn, FiniteUrnKernel};
pub use sample_path::{
    discrete_sample_path_urn, three_state_chain, AbsorbedChainSpec, HorizonLaw, SamplePathKernel, Transition,
};
pub use trees::{protected_nodes_urn, rrf_urn, rrt_outdegree_urn, ProtectedNodesKernel, RrfKernel, RrtKernel};

/// Hard cap on the length of one simulated sample path.
pub const PATH_CAP: usize = 10_000_000;

/// Which measure the reference describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitForm {
    /// `m̃_n → ν`: here `νR ∝ ν`, or the model is balanced and ergodic.
    Nu,
    /// `m̃_n → νR / νR(E)` with `ν` the quasi-stationary law of `Q − I`.
    NuR,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub space: Space,
    pub m0: WeightedMeasure,
    pub kernel: Arc<ComposedKernel>,
    pub lyapunov: Option<LyapunovSpec>,
    pub reference_key: Option<String>,
    /// The limit of `m_n / m_n(E)`, when one is known.
    pub reference: Option<ReferenceDistribution>,
    pub limit: LimitForm,
    pub params: BTreeMap<String, f64>,
    /// Conditions recorded but not checked, and construction-time warnings.
    pub notes: Vec<String>,
}

impl ModelSpec {
    pub fn init(&self, seed: u64) -> Result<MvppState> {
        MvppState::init(self.m0.clone(), self.kernel.clone(), seed)
    }

    pub fn init_replica(&self, master_seed: u64, replica: u64) -> Result<MvppState> {
        MvppState::init_with_rng(self.m0.clone(), self.kernel.clone(), RngStream::for_replica(master_seed, replica))
    }
}

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
