//! The resolved configuration: defaults, then the config file, then `--set`
//! overrides and `--seed`, validated against the shipped JSON schema before
//! deserialization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hipponet::data::{AugmentParams, ClassPair, Diagnosis, RoiCenters, SynthConfig};
use hipponet::harness::{DatasetSpec, IntervalConfig, RunConfig, TABLE_MODES};
use hipponet::model::{InputMode, NetworkConfig, Preset};
use hipponet::optim::OptimConfig;
use hipponet::seed::{derive, SubSeeds};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SCHEMA: &str = include_str!("../schema/config.schema.json");

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HIPPONET_OUT";
pub const DEFAULT_OUT_DIR: &str = "runs";

/// File name of the config echo written by every command that takes a config.
pub const ECHO_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pair")]
    pub classifier_pair: ClassPair,
    pub roi: RoiSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub interval: IntervalConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Filled from `seed` on load; present in echoes for reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_seeds: Option<SubSeeds>,
}

fn default_pair() -> ClassPair {
    ClassPair::AdNc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    pub centers: RoiCenters,
    #[serde(default = "default_roi_size")]
    pub size: usize,
}

fn default_roi_size() -> usize {
    28
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub preset: Preset,
    pub input_mode: InputMode,
    pub dropout_rate: f64,
    pub shared_weights: bool,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_kernel_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_filter_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_units: Option<Vec<usize>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::preset(Preset::C1, default_roi_size(), InputMode::SmriLr);
        NetworkSection {
            preset: Preset::C1,
            input_mode: InputMode::SmriLr,
            dropout_rate: n.dropout_rate,
            shared_weights: n.shared_weights,
            bn_epsilon: n.bn_epsilon,
            bn_momentum: n.bn_momentum,
            conv_kernel_sizes: None,
            conv_filter_counts: None,
            fc_units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub iterations: u64,
    pub q: usize,
    pub mini_group_size: usize,
    pub resplit_period: u64,
    pub eval_period: u64,
    pub validation_fraction: f64,
    pub top_mean_window: u64,
    pub eval_batch: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let r = RunConfig::new(
            default_pair(),
            NetworkConfig::preset(Preset::C1, default_roi_size(), InputMode::SmriLr),
            0,
        );
        TrainingSection {
            iterations: r.iterations,
            q: r.q,
            mini_group_size: r.mini_group_size,
            resplit_period: r.resplit_period,
            eval_period: r.eval_period,
            validation_fraction: r.validation_fraction,
            top_mean_window: r.top_mean_window,
            eval_batch: r.eval_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub k: usize,
    pub test_copies: usize,
    pub test_per_class: usize,
    pub augment: AugmentParams,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let spec = DatasetSpec::default();
        DatasetSection {
            manifest: None,
            k: spec.k,
            test_copies: spec.test_copies,
            test_per_class: 12,
            augment: spec.augment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub subjects_per_class: BTreeMap<Diagnosis, usize>,
    pub shape: [usize; 3],
    pub separation: f64,
    pub noise: f64,
    pub radii: [f64; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            // 12 test subjects per class leave 36 / 96 / 46 for training.
            subjects_per_class: [(Diagnosis::AD, 48), (Diagnosis::MCI, 108), (Diagnosis::NC, 58)]
                .into_iter()
                .collect(),
            shape: s.shape,
            separation: s.separation,
            noise: s.noise,
            radii: s.radii,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub pairs: Vec<ClassPair>,
    pub modes: Vec<InputMode>,
    pub parallel: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            pairs: ClassPair::ALL.to_vec(),
            modes: TABLE_MODES.to_vec(),
            parallel: false,
        }
    }
}

impl Config {
    pub fn sub_seeds(&self) -> SubSeeds {
        SubSeeds::from_master(self.seed)
    }

    pub fn network_for(&self, roi_size: usize, input_mode: InputMode, preset: Preset) -> NetworkConfig {
        let n = &self.network;
        let mut c = NetworkConfig::preset(preset, roi_size, input_mode);
        c.dropout_rate = n.dropout_rate;
        c.shared_weights = n.shared_weights;
        c.bn_epsilon = n.bn_epsilon;
        c.bn_momentum = n.bn_momentum;
        if let Some(k) = &n.conv_kernel_sizes {
            c.conv_kernel_sizes = k.clone();
        }
        if let Some(f) = &n.conv_filter_counts {
            c.conv_filter_counts = f.clone();
        }
        if let Some(u) = &n.fc_units {
            c.fc_units = u.clone();
        }
        c
    }

    /// The training run described by this config.
    pub fn run_config(&self) -> RunConfig {
        let network = self.network_for(self.roi.size, self.network.input_mode, self.network.preset);
        let t = &self.training;
        RunConfig {
            optimizer: self.optimizer.clone(),
            iterations: t.iterations,
            q: t.q,
            mini_group_size: t.mini_group_size,
            resplit_period: t.resplit_period,
            eval_period: t.eval_period,
            validation_fraction: t.validation_fraction,
            top_mean_window: t.top_mean_window,
            interval: self.interval,
            eval_batch: t.eval_batch,
            ..RunConfig::new(self.classifier_pair, network, self.seed)
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            subjects_per_class: self.synth.subjects_per_class.clone(),
            shape: self.synth.shape,
            centers: self.roi.centers,
            separation: self.synth.separation,
            noise: self.synth.noise,
            radii: self.synth.radii,
            seed: derive(self.seed, "synth"),
        }
    }

    /// Checks that the schema cannot express, such as the network shape ladder.
    fn validate(&self) -> Result<(), CliError> {
        self.run_config().validate()?;
        if self.roi.size < 1 {
            return Err(CliError::config("roi.size", "must be at least 1"));
        }
        Ok(())
    }
}

fn schema_validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(SCHEMA).expect("shipped schema is valid JSON");
    jsonschema::validator_for(&schema).expect("shipped schema compiles")
}

/// Dotted key path of a schema error, e.g. `roi.centers` for a missing
/// required property of `roi`.
fn key_path(error: &jsonschema::ValidationError) -> String {
    let base: Vec<String> = error
        .instance_path()
        .to_string()
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| s.replace("~1", "/").replace("~0", "~"))
        .collect();
    let leaf = match error.kind() {
        jsonschema::error::ValidationErrorKind::Required { property } => property.as_str().map(str::to_string),
        jsonschema::error::ValidationErrorKind::AdditionalProperties { unexpected } => unexpected.first().cloned(),
        _ => None,
    };
    let mut parts = base;
    parts.extend(leaf);
    if parts.is_empty() {
        "(root)".into()
    } else {
        parts.join(".")
    }
}

/// Validates a raw config value against the shipped schema. Returns the
/// first violation with its dotted key path.
pub fn check_schema(value: &Value) -> Result<(), CliError> {
    let validator = schema_validator();
    let mut errors: Vec<(String, String)> = validator
        .iter_errors(value)
        .map(|e| (key_path(&e), e.to_string()))
        .collect();
    errors.sort();
    match errors.into_iter().next() {
        None => Ok(()),
        Some((path, message)) => Err(CliError::Config {
            path: Some(path),
            message: format!("schema violation: {message}"),
        }),
    }
}

/// Sets `key` (dotted) in `root` to `raw`, parsed as JSON when it parses and
/// taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(assignment, "override must have the form key.path=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(key, "empty segment in override key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(segments[..i].join("."), "cannot set a key inside a non-object value"))?;
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        node = obj.entry(seg.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split always yields at least one segment")
}

/// Reads the config file (if any), applies overrides and the seed, checks
/// the schema and deserializes.
pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Config, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: None,
                message: format!("{}: line {} column {}: {e}", p.display(), e.line(), e.column()),
            })?
        }
        None => Value::Object(Map::new()),
    };
    if !value.is_object() {
        return Err(CliError::config("(root)", "config must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(s) = seed {
        value["seed"] = Value::from(s);
    }
    if let Some(obj) = value.as_object_mut() {
        obj.remove("sub_seeds");
    }
    check_schema(&value)?;
    let mut config: Config = serde_json::from_value(value).map_err(|e| CliError::Config {
        path: None,
        message: e.to_string(),
    })?;
    config.validate()?;
    config.sub_seeds = Some(config.sub_seeds());
    Ok(config)
}

/// Writes the fully resolved config into `dir`.
pub fn write_echo(config: &Config, dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(ECHO_FILE);
    let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Value {
        serde_json::json!({
            "roi": { "centers": { "left_hippocampus": [42, 72, 50], "right_hippocampus": [78, 72, 50] } }
        })
    }

    fn resolve_value(v: &Value, overrides: &[&str]) -> Result<Config, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, v.to_string()).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        resolve(Some(&p), &o, None)
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let c = resolve_value(&minimal(), &[]).unwrap();
        assert_eq!(c.roi.size, 28);
        assert_eq!(c.optimizer, OptimConfig::default());
        assert_eq!(c.run_config().network, NetworkConfig::preset(Preset::C1, 28, InputMode::SmriLr));
        assert_eq!(c.sub_seeds, Some(SubSeeds::from_master(0)));
    }

    #[test]
    fn echo_passes_its_own_schema() {
        let c = resolve_value(&minimal(), &["network.fc_units=[4]"]).unwrap();
        let echoed = serde_json::to_value(&c).unwrap();
        check_schema(&echoed).unwrap();
        assert_eq!(resolve_value(&echoed, &[]).unwrap(), c);
    }

    #[test]
    fn override_precedence() {
        let mut v = minimal();
        v["optimizer"] = serde_json::json!({ "mu0": 0.02 });
        assert_eq!(resolve_value(&v, &[]).unwrap().optimizer.mu0, 0.02);
        assert_eq!(resolve_value(&v, &["optimizer.mu0=0.005"]).unwrap().optimizer.mu0, 0.005);
        let c = resolve_value(&v, &["classifier_pair=AD/MCI"]).unwrap();
        assert_eq!(c.classifier_pair, ClassPair::AdMci);
    }

    #[test]
    fn missing_centers_names_the_key() {
        let err = resolve_value(&serde_json::json!({ "roi": { "size": 28 } }), &[]).unwrap_err();
        assert!(matches!(&err, CliError::Config { path: Some(p), .. } if p == "roi.centers"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal();
        v["optimizer"] = serde_json::json!({ "mu_0": 0.02 });
        let err = resolve_value(&v, &[]).unwrap_err();
        assert!(matches!(&err, CliError::Config { path: Some(p), .. } if p == "optimizer.mu_0"), "{err}");
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        let err = resolve_value(&minimal(), &["training.q=21"]).unwrap_err();
        assert_eq!(err.code(), crate::error::exit::CONFIG);
    }

    #[test]
    fn overrides_cannot_descend_into_scalars() {
        let mut v = minimal();
        assert!(apply_override(&mut v, "seed=3").is_ok());
        assert!(apply_override(&mut v, "seed.x=3").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }
}
