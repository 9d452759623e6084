//! Experiment configuration documents.
//!
//! ```json
//! {"model": "mm_infty", "params": {"lambda": 1, "mu": 2}, "n_steps": 200000, "seed": 42}
//! ```

use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::error::{CliError, Result};
use crate::zoo::MODELS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Run,
    Sweep,
    Accept,
    QsdOracle,
}

impl Mode {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "run" => Mode::Run,
            "sweep" => Mode::Sweep,
            "accept" => Mode::Accept,
            "qsd-oracle" => Mode::QsdOracle,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: String,
    pub params: Map<String, Value>,
    pub n_steps: u64,
    pub seed: u64,
    pub observe_stride: u64,
    /// Reference key; the model's own reference when absent.
    pub reference: Option<String>,
    pub output_dir: PathBuf,
    pub mode: Mode,
    pub tolerance: Option<f64>,
    /// Replica seeds for sweep and accept; defaults depend on the mode.
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn default_stride(n_steps: u64) -> u64 {
        (n_steps / 1000).max(1)
    }

    /// Seeds used by sweep/accept: the configured list, else five
    /// consecutive seeds (sweep) or the single seed (accept).
    pub fn replica_seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.mode) {
            (Some(s), _) => s.clone(),
            (None, Mode::Sweep) => (0..5).map(|i| self.seed.wrapping_add(i)).collect(),
            (None, _) => vec![self.seed],
        }
    }
}

fn syntax(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: Some(e.line()),
        field: None,
        message: e.to_string(),
    })
}

fn as_u64(obj: &Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0 && *f < 2f64.powi(64)).map(|f| f as u64))
            .map(Some)
            .ok_or_else(|| CliError::field(key, format!("expected a nonnegative integer, got {v}"))),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    config_from_value(&syntax(text)?)
}

pub fn config_from_value(value: &Value) -> Result<ExperimentConfig> {
    let obj = value.as_object().ok_or_else(|| CliError::Parse {
        line: Some(1),
        field: None,
        message: "configuration must be a JSON object".into(),
    })?;
    const KNOWN: [&str; 10] = [
        "model",
        "params",
        "n_steps",
        "seed",
        "observe_stride",
        "reference",
        "output_dir",
        "mode",
        "tolerance",
        "seeds",
    ];
    if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(CliError::field(k.clone(), "unknown field"));
    }
    let model = match obj.get("model") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(CliError::field("model", "expected a string")),
        None => return Err(CliError::field("model", "missing required field")),
    };
    if !MODELS.contains(&model.as_str()) {
        return Err(CliError::UnknownModel(model));
    }
    let params = match obj.get("params") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(CliError::field("params", "expected an object")),
    };
    let n_steps = as_u64(obj, "n_steps")?.ok_or_else(|| CliError::field("n_steps", "missing required field"))?;
    let seed = as_u64(obj, "seed")?.unwrap_or(0);
    let observe_stride = match as_u64(obj, "observe_stride")? {
        Some(0) => return Err(CliError::field("observe_stride", "must be at least 1")),
        Some(s) => s,
        None => ExperimentConfig::default_stride(n_steps),
    };
    let reference = match obj.get("reference") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(CliError::field("reference", "expected a string")),
    };
    let output_dir = match obj.get("output_dir") {
        None | Some(Value::Null) => PathBuf::from("out"),
        Some(Value::String(s)) => PathBuf::from(s),
        Some(_) => return Err(CliError::field("output_dir", "expected a string")),
    };
    let mode = match obj.get("mode") {
        None | Some(Value::Null) => Mode::Run,
        Some(Value::String(s)) => {
            Mode::parse(s).ok_or_else(|| CliError::field("mode", format!("unknown mode `{s}`")))?
        }
        Some(_) => return Err(CliError::field("mode", "expected a string")),
    };
    let tolerance = match obj.get("tolerance") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_f64()
                .filter(|t| *t > 0.0)
                .ok_or_else(|| CliError::field("tolerance", "expected a positive number"))?,
        ),
    };
    let seeds = match obj.get("seeds") {
        None | Some(Value::Null) => None,
        Some(Value::Array(a)) if !a.is_empty() => Some(
            a.iter()
                .map(|v| v.as_u64().ok_or_else(|| CliError::field("seeds", format!("expected integers, got {v}"))))
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => return Err(CliError::field("seeds", "expected a non-empty array of integers")),
    };
    Ok(ExperimentConfig { model, params, n_steps, seed, observe_stride, reference, output_dir, mode, tolerance, seeds })
}

/// One named experiment of an acceptance suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub config: ExperimentConfig,
}

/// `{"experiments": [{"name": ..., "config": {...}}, ...]}`. Every
/// experiment must carry a tolerance.
pub fn parse_suite(text: &str) -> Result<Vec<SuiteEntry>> {
    let value = syntax(text)?;
    let list = match value.get("experiments") {
        Some(Value::Array(a)) => a,
        _ => return Err(CliError::field("experiments", "expected an array of experiments")),
    };
    list.iter()
        .enumerate()
        .map(|(i, e)| {
            let name = e
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| CliError::field(format!("experiments[{i}].name"), "expected a string"))?
                .to_string();
            let config =
                e.get("config").ok_or_else(|| CliError::field(format!("experiments[{i}].config"), "missing"))?;
            let mut config = config_from_value(config).map_err(|err| match err {
                CliError::Parse { line, field, message } => CliError::Parse {
                    line,
                    field: Some(format!("experiments[{i}].config.{}", field.unwrap_or_default())),
                    message,
                },
                other => other,
            })?;
            if config.tolerance.is_none() {
                return Err(CliError::field(
                    format!("experiments[{i}].config.tolerance"),
                    "accept suites need a tolerance",
                ));
            }
            config.mode = Mode::Accept;
            Ok(SuiteEntry { name, config })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_filled() {
        let c =
            parse_config(r#"{"model":"mm_infty","params":{"lambda":1,"mu":2},"n_steps":200000,"seed":42}"#).unwrap();
        assert_eq!((c.n_steps, c.seed, c.observe_stride, c.mode), (200_000, 42, 200, Mode::Run));
        let c = parse_config(r#"{"model":"rrt_outdegree","n_steps":10}"#).unwrap();
        assert_eq!((c.seed, c.observe_stride), (0, 1));
    }

    #[test]
    fn errors_name_the_field() {
        match parse_config(r#"{"model":"mm_infty","params":{}}"#) {
            Err(CliError::Parse { field: Some(f), .. }) => assert_eq!(f, "n_steps"),
            other => panic!("{other:?}"),
        }
        assert!(
            matches!(parse_config(r#"{"model":"nope","n_steps":1}"#), Err(CliError::UnknownModel(m)) if m == "nope")
        );
        match parse_config("{\n\"model\": \"mm_infty\",\n\"n_steps\": }") {
            Err(CliError::Parse { line: Some(3), .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_config(r#"{"model":"mm_infty","n_steps":-3}"#).is_err());
        assert!(parse_config(r#"{"model":"mm_infty","n_steps":3,"observe_stride":0}"#).is_err());
    }
}
