//! Model names accepted in configs and the parameters each one reads.
//!
//! | model              | params (default)                                                        |
//! |--------------------|-------------------------------------------------------------------------|
//! | `mm_infty`         | `lambda`, `mu` (required)                                               |
//! | `finite_urn`       | `matrix` (required), `weights` (ones), `signed` (false), `m0` (ones)    |
//! | `bd_quasi_ergodic` | `lambda` (0.1), `lambda_power` (1), `mu` (0.9), `truncation` (200), `probe` |
//! | `rrt_outdegree`    | —                                                                       |
//! | `rrf`              | `alpha` (`{"-1":0.3,"1":0.7}`), `beta` (`{"1":1}`)                      |
//! | `protected_nodes`  | —                                                                       |
//! | `sample_path`      | `matrix` (three-state chain), `horizon` (`"infinite"`), `horizon_param`, `pilot_seed` (0) |
//! | `killed_diffusion` | `c` (2), `kill` (1), `dt` (1e-3), `start` (0), `horizon`, `horizon_param`, `quadrature` (`"left"`), `pilot_seed` (0) |
//! | `self_interacting` | `c` (2), `kill` (1), `dt` (1e-3), `start` (0); runs `n_steps` Euler steps |

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use mvpp_core::models::{
    bd_quasi_ergodic_urn, discrete_sample_path_urn, finite_polya_urn, finite_signed_urn, killed_diffusion_urn,
    mm_infty_urn, protected_nodes_urn, rrf_urn, rrt_outdegree_urn, three_state_chain, AbsorbedChainSpec, HorizonLaw,
    KilledDiffusionSpec, ModelSpec, Quadrature, TimeHorizon, DEFAULT_DT,
};
use mvpp_core::qsd::{analytic_reference, Matrix, ReferenceDistribution};
use mvpp_core::{ColorPoint, Space, WeightedMeasure};
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MODELS: [&str; 9] = [
    "mm_infty",
    "finite_urn",
    "bd_quasi_ergodic",
    "rrt_outdegree",
    "rrf",
    "protected_nodes",
    "sample_path",
    "killed_diffusion",
    "self_interacting",
];

pub enum Built {
    Urn(ModelSpec),
    /// Not an urn: a single diffusion path relocated onto its own past.
    SelfInteracting {
        spec: KilledDiffusionSpec,
        start: Vec<f64>,
    },
}

pub struct Model {
    pub built: Built,
    pub reference: Option<ReferenceDistribution>,
}

/// Typed access to `params` that remembers which keys were read, so that
/// leftovers (typos) can be rejected.
struct Params<'a> {
    map: &'a Map<String, Value>,
    used: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    fn new(map: &'a Map<String, Value>) -> Self {
        Self { map, used: BTreeSet::new() }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.insert(key);
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn num_opt(&mut self, key: &'static str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| bad(key, format!("expected a number, got {v}"))),
        }
    }

    fn num(&mut self, key: &'static str, default: f64) -> Result<f64> {
        Ok(self.num_opt(key)?.unwrap_or(default))
    }

    fn required(&mut self, key: &'static str) -> Result<f64> {
        self.num_opt(key)?.ok_or_else(|| bad(key, "missing required parameter"))
    }

    fn count(&mut self, key: &'static str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| bad(key, format!("expected a nonnegative integer, got {v}"))),
        }
    }

    fn text(&mut self, key: &'static str, default: &'static str) -> Result<&'a str> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_str().ok_or_else(|| bad(key, format!("expected a string, got {v}"))),
        }
    }

    fn flag(&mut self, key: &'static str) -> Result<bool> {
        match self.get(key) {
            None => Ok(false),
            Some(v) => v.as_bool().ok_or_else(|| bad(key, format!("expected true or false, got {v}"))),
        }
    }

    fn vector(&mut self, key: &'static str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let arr = v.as_array().ok_or_else(|| bad(key, "expected an array of numbers"))?;
        arr.iter()
            .map(|x| x.as_f64().ok_or_else(|| bad(key, format!("expected numbers, got {x}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn matrix(&mut self, key: &'static str) -> Result<Option<Matrix>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        matrix_from_json(v).map(Some).map_err(|m| bad(key, m))
    }

    /// `{"<label>": weight, ...}` as sorted pairs.
    fn law<T: std::str::FromStr + Ord>(&mut self, key: &'static str, default: &[(T, f64)]) -> Result<Vec<(T, f64)>>
    where
        T: Copy,
    {
        let Some(v) = self.get(key) else { return Ok(default.to_vec()) };
        let obj = v.as_object().ok_or_else(|| bad(key, "expected an object mapping integer labels to weights"))?;
        let mut out = obj
            .iter()
            .map(|(k, w)| {
                let label =
                    k.trim().parse::<T>().map_err(|_| bad(key, format!("label `{k}` is not a valid integer")))?;
                let w = w.as_f64().ok_or_else(|| bad(key, format!("weight for `{k}` is not a number")))?;
                Ok((label, w))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => Err(bad(k, "unknown parameter for this model")),
            None => Ok(()),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::param(format!("params.{key}"), message)
}

pub fn matrix_from_json(v: &Value) -> std::result::Result<Matrix, String> {
    let rows = v.as_array().ok_or("expected an array of rows")?;
    rows.iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| "each row must be an array".to_string())?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| format!("matrix entry {x} is not a number")))
                .collect()
        })
        .collect()
}

fn horizon_law(p: &mut Params) -> Result<HorizonLaw> {
    let kind = p.text("horizon", "infinite")?;
    let param = p.num_opt("horizon_param")?;
    Ok(match (kind, param) {
        ("infinite", _) => HorizonLaw::Infinite,
        ("deterministic", Some(t)) if t >= 1.0 && t.fract() == 0.0 => HorizonLaw::Deterministic(t as u64),
        ("geometric", Some(q)) => HorizonLaw::Geometric(q),
        ("deterministic" | "geometric", _) => return Err(bad("horizon_param", format!("needed for a {kind} horizon"))),
        _ => return Err(bad("horizon", format!("unknown horizon `{kind}`"))),
    })
}

fn time_horizon(p: &mut Params) -> Result<TimeHorizon> {
    let kind = p.text("horizon", "infinite")?;
    let param = p.num_opt("horizon_param")?;
    Ok(match (kind, param) {
        ("infinite", _) => TimeHorizon::Infinite,
        ("deterministic", Some(t)) => TimeHorizon::Deterministic(t),
        ("exponential", Some(r)) => TimeHorizon::Exponential(r),
        ("deterministic" | "exponential", _) => {
            return Err(bad("horizon_param", format!("needed for a {kind} horizon")))
        }
        _ => return Err(bad("horizon", format!("unknown horizon `{kind}`"))),
    })
}

fn ou(p: &mut Params) -> Result<(KilledDiffusionSpec, Vec<f64>)> {
    let (c, kill, dt) = (p.num("c", 2.0)?, p.num("kill", 1.0)?, p.num("dt", DEFAULT_DT)?);
    let start = vec![p.num("start", 0.0)?];
    Ok((KilledDiffusionSpec::ornstein_uhlenbeck(c, kill, dt)?, start))
}

pub fn build(cfg: &ExperimentConfig) -> Result<Model> {
    let mut p = Params::new(&cfg.params);
    let built = match cfg.model.as_str() {
        "mm_infty" => Built::Urn(mm_infty_urn(p.required("lambda")?, p.required("mu")?)?),
        "finite_urn" => {
            let m = p.matrix("matrix")?.ok_or_else(|| bad("matrix", "missing required parameter"))?;
            let w = p.vector("weights")?.unwrap_or_else(|| vec![1.0; m.len()]);
            let m0 = match p.vector("m0")? {
                Some(counts) => Some(WeightedMeasure::from_atoms(
                    Space::Discrete,
                    counts.iter().enumerate().map(|(i, c)| (ColorPoint::Discrete(i as u64 + 1), *c)),
                )?),
                None => None,
            };
            Built::Urn(if p.flag("signed")? { finite_signed_urn(&m, &w, m0)? } else { finite_polya_urn(&m, &w, m0)? })
        }
        "bd_quasi_ergodic" => {
            let (l, power, mu) = (p.num("lambda", 0.1)?, p.num("lambda_power", 1.0)?, p.num("mu", 0.9)?);
            let truncation = p.count("truncation", 200)?;
            let probe = p.count("probe", truncation)?;
            Built::Urn(bd_quasi_ergodic_urn(
                Arc::new(move |x| l / (x as f64 + 1.0).powf(power)),
                Arc::new(move |x| if x == 0 { 0.0 } else { mu }),
                probe,
                truncation as usize,
            )?)
        }
        "rrt_outdegree" => Built::Urn(rrt_outdegree_urn()?),
        "rrf" => {
            let alpha = p.law::<i64>("alpha", &[(-1, 0.3), (1, 0.7)])?;
            let beta = p.law::<u64>("beta", &[(1, 1.0)])?;
            Built::Urn(rrf_urn(&alpha, &beta)?)
        }
        "protected_nodes" => Built::Urn(protected_nodes_urn()?),
        "sample_path" => {
            let g = p.matrix("matrix")?.unwrap_or_else(three_state_chain);
            let chain = AbsorbedChainSpec::from_matrix(g, horizon_law(&mut p)?)?;
            Built::Urn(discrete_sample_path_urn(chain, None, p.count("pilot_seed", 0)?)?)
        }
        "killed_diffusion" => {
            let (spec, start) = ou(&mut p)?;
            let quadrature = match p.text("quadrature", "left")? {
                "left" => Quadrature::LeftRiemann,
                "trapezoid" => Quadrature::Trapezoid,
                other => return Err(bad("quadrature", format!("unknown quadrature `{other}`"))),
            };
            let spec = spec.with_horizon(time_horizon(&mut p)?).with_quadrature(quadrature);
            Built::Urn(killed_diffusion_urn(spec, &start, p.count("pilot_seed", 0)?)?)
        }
        "self_interacting" => {
            let (spec, start) = ou(&mut p)?;
            Built::SelfInteracting { spec, start }
        }
        other => return Err(CliError::UnknownModel(other.to_string())),
    };
    p.finish()?;

    let (own, own_params) = match &built {
        Built::Urn(spec) => (spec.reference.clone(), spec.params.clone()),
        Built::SelfInteracting { spec, .. } => (spec.reference.clone(), BTreeMap::new()),
    };
    let reference = match cfg.reference.as_deref() {
        None | Some("model") => own,
        Some(key) => {
            // Analytic references read numeric config params, falling back
            // to the model's own derived parameters.
            let mut params = own_params;
            params.extend(cfg.params.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x))));
            Some(analytic_reference(key, &params)?)
        }
    };
    Ok(Model { built, reference })
}
