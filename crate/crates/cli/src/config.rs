//! Experiment configuration: a flat key-value text format with typed
//! sections.
//!
//! ```text
//! # top-level keys describe the experiment
//! method   = intact            # intact | ewc | finetune
//! dataset  = mnist             # mnist | fmnist | gaussian
//! scenario = dil               # cil | dil
//! n_tasks  = 5
//! batch_size = 512
//! epochs   = 5
//! seeds    = 0,1,2
//! output_dir = runs
//! # data_root = data           # optional; INTACT_DATA_ROOT overrides
//!
//! [model]
//! hidden = 400,400,400
//!
//! [optimizer]
//! kind = adam                  # adam | sgd
//! lr   = 1e-4
//!
//! [regularizer]
//! lambda_feat      = 602
//! lambda_int_drift = 634
//! lambda_var       = 4.0
//! lambda_align     = 0
//! # eps_align / eps_feat default to 1e-8
//! # mask = all_ones | random_fraction:0.5
//! # dil_class_scaling = 10
//!
//! [hypercube]
//! coverage_p = 90
//! # layers = 1,3,5             # defaults to every post-ReLU layer
//!
//! [ewc]                        # required iff method = ewc
//! lambda = 500
//! fisher_samples = 2000
//!
//! [gaussian]                   # used iff dataset = gaussian
//! points_per_task = 256
//! noise_sd = 0.01
//! ```
//!
//! Unknown keys and unknown sections are rejected. Every field is
//! validated before a run starts.

use intact_core::data::Scenario;
use intact_core::nn::OptimizerKind;
use intact_core::regularizers::RegularizerConfig;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Intact,
    Ewc,
    Finetune,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Intact => "intact",
            Method::Ewc => "ewc",
            Method::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Gaussian,
}

impl DatasetKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    AllOnes,
    RandomFraction(f64),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub dataset: DatasetKind,
    pub scenario: Scenario,
    pub n_tasks: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data_root: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub reg: RegularizerConfig,
    pub mask_policy: MaskPolicy,
    pub coverage_p: f64,
    /// Tracked layer indices; `None` means every post-ReLU layer.
    pub hypercube_layers: Option<Vec<usize>>,
    pub ewc_lambda: f64,
    pub ewc_fisher_samples: usize,
    pub gaussian_points_per_task: usize,
    pub gaussian_noise_sd: f64,
    /// FNV-1a hash of the source text, for provenance in run records.
    pub config_hash: String,
}

/// 64-bit FNV-1a over the raw config text.
pub fn fnv1a_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new(); // top level
        map.insert(String::new(), BTreeMap::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let name = stripped
                    .strip_suffix(']')
                    .ok_or_else(|| bad(format!("line {}: unterminated section", lineno + 1)))?
                    .trim()
                    .to_string();
                if name.is_empty() {
                    return Err(bad(format!("line {}: empty section name", lineno + 1)));
                }
                map.entry(name.clone()).or_default();
                current = name;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = k.trim().to_string();
            let val = v.trim().to_string();
            if key.is_empty() {
                return Err(bad(format!("line {}: empty key", lineno + 1)));
            }
            let section = map.get_mut(&current).unwrap();
            if section.insert(key.clone(), val).is_some() {
                return Err(bad(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Sections { map })
    }

    fn section(&mut self, name: &str) -> BTreeMap<String, String> {
        self.map.remove(name).unwrap_or_default()
    }

    fn reject_leftovers(self) -> Result<(), ConfigError> {
        for (name, keys) in self.map {
            if !keys.is_empty() {
                let display = if name.is_empty() { "top level" } else { &name };
                return Err(bad(format!(
                    "unknown keys in {display}: {}",
                    keys.keys().cloned().collect::<Vec<_>>().join(", ")
                )));
            }
            if !name.is_empty() {
                return Err(bad(format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }
}

struct Keys {
    name: &'static str,
    map: BTreeMap<String, String>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String, ConfigError> {
        self.take(key)
            .ok_or_else(|| bad(format!("{}: missing required key `{key}`", self.name)))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| bad(format!("{}: cannot parse `{key} = {v}`", self.name))),
        }
    }

    fn parse_required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        let v = self.required(key)?;
        v.parse::<T>()
            .map_err(|_| bad(format!("{}: cannot parse `{key} = {v}`", self.name)))
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(k) = self.map.keys().next() {
            return Err(bad(format!("{}: unknown key `{k}`", self.name)));
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(name: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| bad(format!("cannot parse `{s}` in `{name}`")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "experiment".into());
        Self::from_str_named(&text, &name)
    }

    pub fn from_str_named(text: &str, name: &str) -> Result<Self, ConfigError> {
        let hash = format!("{:016x}", fnv1a_hash(text.as_bytes()));
        let mut sections = Sections::parse(text)?;

        let mut top = Keys {
            name: "top level",
            map: sections.section(""),
        };
        let method = match top.required("method")?.as_str() {
            "intact" => Method::Intact,
            "ewc" => Method::Ewc,
            "finetune" => Method::Finetune,
            other => return Err(bad(format!("unknown method `{other}`"))),
        };
        let dataset = match top.required("dataset")?.as_str() {
            "mnist" => DatasetKind::Mnist,
            "fmnist" => DatasetKind::Fmnist,
            "gaussian" => DatasetKind::Gaussian,
            other => return Err(bad(format!("unknown dataset `{other}`"))),
        };
        let scenario = match top.required("scenario")?.as_str() {
            "cil" => Scenario::Cil,
            "dil" => Scenario::Dil,
            other => return Err(bad(format!("unknown scenario `{other}`"))),
        };
        let n_tasks: usize = top.parse_required("n_tasks")?;
        let batch_size: usize = top.parse_required("batch_size")?;
        let epochs: usize = top.parse_required("epochs")?;
        let seeds: Vec<u64> = parse_list("seeds", &top.required("seeds")?)?;
        let output_dir = PathBuf::from(top.parse::<String>("output_dir", "runs".into())?);
        let data_root = top.take("data_root").map(PathBuf::from);
        top.finish()?;

        let mut model = Keys {
            name: "[model]",
            map: sections.section("model"),
        };
        let hidden: Vec<usize> = parse_list("hidden", &model.required("hidden")?)?;
        model.finish()?;

        let mut opt = Keys {
            name: "[optimizer]",
            map: sections.section("optimizer"),
        };
        let optimizer = match opt.parse::<String>("kind", "adam".into())?.as_str() {
            "adam" => OptimizerKind::adam_default(),
            "sgd" => OptimizerKind::Sgd,
            other => return Err(bad(format!("unknown optimizer `{other}`"))),
        };
        let learning_rate: f64 = opt.parse_required("lr")?;
        opt.finish()?;

        let mut reg_keys = Keys {
            name: "[regularizer]",
            map: sections.section("regularizer"),
        };
        let mask_policy = match reg_keys.take("mask") {
            None => MaskPolicy::AllOnes,
            Some(v) if v == "all_ones" => MaskPolicy::AllOnes,
            Some(v) => match v.strip_prefix("random_fraction:") {
                Some(frac) => {
                    let rho: f64 = frac
                        .parse()
                        .map_err(|_| bad(format!("cannot parse mask fraction `{frac}`")))?;
                    if !(rho > 0.0 && rho <= 1.0) {
                        return Err(bad("mask fraction must be in (0, 1]"));
                    }
                    MaskPolicy::RandomFraction(rho)
                }
                None => return Err(bad(format!("unknown mask policy `{v}`"))),
            },
        };
        let dil_class_scaling = match reg_keys.take("dil_class_scaling") {
            None => None,
            Some(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| bad(format!("cannot parse dil_class_scaling `{v}`")))?,
            ),
        };
        let reg = RegularizerConfig {
            lambda_int_drift: reg_keys.parse("lambda_int_drift", 0.0)?,
            lambda_var: reg_keys.parse("lambda_var", 0.0)?,
            lambda_align: reg_keys.parse("lambda_align", 0.0)?,
            lambda_feat: reg_keys.parse("lambda_feat", 0.0)?,
            eps_align: reg_keys.parse("eps_align", 1e-8)?,
            eps_feat: reg_keys.parse("eps_feat", 1e-8)?,
            dil_class_scaling,
        };
        reg_keys.finish()?;

        let mut hc = Keys {
            name: "[hypercube]",
            map: sections.section("hypercube"),
        };
        let coverage_p: f64 = hc.parse("coverage_p", 90.0)?;
        let hypercube_layers = match hc.take("layers") {
            None => None,
            Some(v) => Some(parse_list("layers", &v)?),
        };
        hc.finish()?;

        let mut ewc = Keys {
            name: "[ewc]",
            map: sections.section("ewc"),
        };
        let ewc_lambda: f64 = ewc.parse("lambda", 0.0)?;
        let ewc_fisher_samples: usize = ewc.parse("fisher_samples", 2000)?;
        ewc.finish()?;

        let mut gauss = Keys {
            name: "[gaussian]",
            map: sections.section("gaussian"),
        };
        let gaussian_points_per_task: usize = gauss.parse("points_per_task", 256)?;
        let gaussian_noise_sd: f64 = gauss.parse("noise_sd", 0.01)?;
        gauss.finish()?;

        sections.reject_leftovers()?;

        let cfg = ExperimentConfig {
            name: name.to_string(),
            method,
            dataset,
            scenario,
            n_tasks,
            batch_size,
            epochs,
            seeds,
            output_dir,
            data_root,
            hidden,
            optimizer,
            learning_rate,
            reg,
            mask_policy,
            coverage_p,
            hypercube_layers,
            ewc_lambda,
            ewc_fisher_samples,
            gaussian_points_per_task,
            gaussian_noise_sd,
            config_hash: hash,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_tasks == 0 {
            return Err(bad("n_tasks must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(bad("batch_size and epochs must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(bad("at least one seed required"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(bad("model needs at least one nonzero hidden width"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(bad("learning rate must be positive"));
        }
        if !(self.coverage_p > 0.0 && self.coverage_p <= 100.0) {
            return Err(bad("coverage_p must satisfy 0 < p <= 100"));
        }
        self.reg
            .validate()
            .map_err(|e| bad(format!("regularizer: {e}")))?;
        match self.method {
            Method::Finetune => {
                let r = &self.reg;
                if r.lambda_int_drift != 0.0
                    || r.lambda_var != 0.0
                    || r.lambda_align != 0.0
                    || r.lambda_feat != 0.0
                {
                    return Err(bad("finetune must not set regularizer weights"));
                }
                if self.ewc_lambda != 0.0 {
                    return Err(bad("finetune must not set [ewc] lambda"));
                }
            }
            Method::Ewc => {
                if !(self.ewc_lambda >= 0.0) || !self.ewc_lambda.is_finite() {
                    return Err(bad("method ewc requires a finite [ewc] lambda >= 0"));
                }
                if self.ewc_fisher_samples == 0 {
                    return Err(bad("fisher_samples must be positive"));
                }
                let r = &self.reg;
                if r.lambda_int_drift != 0.0
                    || r.lambda_var != 0.0
                    || r.lambda_align != 0.0
                    || r.lambda_feat != 0.0
                {
                    return Err(bad("method ewc must not set consolidation weights"));
                }
            }
            Method::Intact => {
                if self.ewc_lambda != 0.0 {
                    return Err(bad("method intact must not set [ewc] lambda"));
                }
            }
        }
        if self.dataset == DatasetKind::Gaussian {
            if self.scenario != Scenario::Dil {
                return Err(bad("the gaussian toy is domain-incremental; use scenario = dil"));
            }
            if self.method == Method::Ewc {
                return Err(bad("ewc supports classification datasets only"));
            }
            if self.gaussian_points_per_task < 2 {
                return Err(bad("points_per_task must be at least 2"));
            }
            if self.gaussian_noise_sd < 0.0 {
                return Err(bad("noise_sd must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Data directory for file-backed datasets:
    /// `INTACT_DATA_ROOT` > `data_root` key > `./data`, plus the dataset
    /// name.
    pub fn dataset_dir(&self) -> PathBuf {
        let root = std::env::var_os("INTACT_DATA_ROOT")
            .map(PathBuf::from)
            .or_else(|| self.data_root.clone())
            .unwrap_or_else(|| PathBuf::from("data"));
        root.join(self.dataset.dir_name())
    }

    /// Per-run output directory: `<output_dir>/<name>/seed_<seed>`.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(&self.name).join(format!("seed_{seed}"))
    }

    pub fn config_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
method = intact
dataset = mnist
scenario = dil
n_tasks = 5
batch_size = 512
epochs = 5
seeds = 0, 1, 2
output_dir = runs

[model]
hidden = 400,400,400

[optimizer]
kind = adam
lr = 1e-4

[regularizer]
lambda_feat = 602
lambda_int_drift = 634
lambda_var = 4.0

[hypercube]
coverage_p = 90
";

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::from_str_named(GOOD, "splitmnist_dil_intact").unwrap();
        assert_eq!(cfg.method, Method::Intact);
        assert_eq!(cfg.dataset, DatasetKind::Mnist);
        assert_eq!(cfg.scenario, Scenario::Dil);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.hidden, vec![400, 400, 400]);
        assert_eq!(cfg.reg.lambda_feat, 602.0);
        assert_eq!(cfg.reg.lambda_int_drift, 634.0);
        assert_eq!(cfg.reg.lambda_var, 4.0);
        assert_eq!(cfg.reg.lambda_align, 0.0);
        assert_eq!(cfg.coverage_p, 90.0);
        assert_eq!(cfg.config_hash.len(), 16);
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let with_unknown = format!("{GOOD}\nnot_a_key = 3\n");
        assert!(ExperimentConfig::from_str_named(&with_unknown, "x").is_err());
        let with_unknown_section = format!("{GOOD}\n[nope]\nfoo = 1\n");
        assert!(ExperimentConfig::from_str_named(&with_unknown_section, "x").is_err());
        let with_bad_reg = GOOD.replace("lambda_var = 4.0", "lambda_var = -1");
        assert!(ExperimentConfig::from_str_named(&with_bad_reg, "x").is_err());
        let dup = format!("{GOOD}\n[model]\nhidden = 10\n");
        assert!(ExperimentConfig::from_str_named(&dup, "x").is_err());
    }

    #[test]
    fn method_constraints_are_enforced() {
        let ft_with_lambda = GOOD.replace("method = intact", "method = finetune");
        assert!(ExperimentConfig::from_str_named(&ft_with_lambda, "x").is_err());

        // ewc with consolidation weights set is rejected; a zero anchor
        // weight is allowed (it is the fine-tuning limit)
        let ewc_with_consolidation = GOOD.replace("method = intact", "method = ewc");
        assert!(ExperimentConfig::from_str_named(&ewc_with_consolidation, "x").is_err());
        let ewc_base = ewc_with_consolidation
            .replace("lambda_feat = 602", "lambda_feat = 0")
            .replace("lambda_int_drift = 634", "lambda_int_drift = 0")
            .replace("lambda_var = 4.0", "lambda_var = 0");
        let zero = ExperimentConfig::from_str_named(&ewc_base, "x").unwrap();
        assert_eq!(zero.ewc_lambda, 0.0);
        let ewc_ok = format!("{ewc_base}\n[ewc]\nlambda = 100\n");
        let cfg = ExperimentConfig::from_str_named(&ewc_ok, "x").unwrap();
        assert_eq!(cfg.method, Method::Ewc);
        assert_eq!(cfg.ewc_lambda, 100.0);
    }

    #[test]
    fn mask_policy_parses() {
        let masked = GOOD.replace(
            "lambda_var = 4.0",
            "lambda_var = 4.0\nmask = random_fraction:0.25",
        );
        let cfg = ExperimentConfig::from_str_named(&masked, "x").unwrap();
        assert_eq!(cfg.mask_policy, MaskPolicy::RandomFraction(0.25));
        let bad_mask = GOOD.replace("lambda_var = 4.0", "lambda_var = 4.0\nmask = nope");
        assert!(ExperimentConfig::from_str_named(&bad_mask, "x").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_str_named(GOOD, "x").unwrap();
        let b = ExperimentConfig::from_str_named(GOOD, "x").unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c =
            ExperimentConfig::from_str_named(&GOOD.replace("634", "633"), "x").unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn gaussian_constraints() {
        let g = "\
method = intact
dataset = gaussian
scenario = dil
n_tasks = 3
batch_size = 32
epochs = 40
seeds = 0
[model]
hidden = 64,64
[optimizer]
lr = 1e-3
[regularizer]
lambda_int_drift = 10
[gaussian]
points_per_task = 128
noise_sd = 0.01
";
        let cfg = ExperimentConfig::from_str_named(g, "gaussian_intact").unwrap();
        assert_eq!(cfg.dataset, DatasetKind::Gaussian);
        assert_eq!(cfg.gaussian_points_per_task, 128);
        let cil = g.replace("scenario = dil", "scenario = cil");
        assert!(ExperimentConfig::from_str_named(&cil, "x").is_err());
    }
}
