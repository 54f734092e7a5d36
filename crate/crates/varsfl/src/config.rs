//! Experiment configuration: a flat dotted-key text format
//! (`training.rounds = 100`), parsed strictly — unknown or duplicate keys
//! are fatal, because a silently ignored typo is the fastest way to ruin a
//! reproducibility run. `parse(serialize(config))` round-trips exactly.
//!
//! Also home of the complexity report derived from a config: forward-pass
//! MACs, server-side scoring MACs per round, uplink bytes, and ledger
//! memory.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::data::{PartitionScheme, PartitionSpec, ValidationMode};
use crate::error::{Error, Result};
use crate::nn::ArchitectureSpec;
use crate::selection::{ClientsPerRound, Policy, SelectorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// One entry per class; a single value in the config broadcasts.
    pub samples_per_class: Vec<usize>,
    pub cluster_spread: f64,
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    pub drop_columns: Vec<String>,
    pub class_names: Option<Vec<String>>,
    pub cap_class: Option<String>,
    pub cap_fraction: f64,
    pub split_fractions: (f64, f64, f64),
    pub stratified_split: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            num_classes: 15,
            feature_dim: 43,
            samples_per_class: vec![2000; 15],
            cluster_spread: 1.0,
            csv_path: None,
            label_column: "label".into(),
            drop_columns: Vec::new(),
            class_names: None,
            cap_class: None,
            cap_fraction: 0.18,
            split_fractions: (0.70, 0.15, 0.15),
            stratified_split: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    ClassInventory,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub scheme: SchemeKind,
    pub dirichlet_alpha: f64,
    pub min_classes: usize,
    /// `None` means "all classes".
    pub max_classes: Option<usize>,
    /// `None` means no lower clamp beyond 1.
    pub min_samples: Option<usize>,
    /// `None` means no upper clamp.
    pub max_samples: Option<usize>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            scheme: SchemeKind::ClassInventory,
            dirichlet_alpha: 0.5,
            min_classes: 1,
            max_classes: None,
            min_samples: None,
            max_samples: None,
        }
    }
}

impl PartitionConfig {
    /// Concrete partitioner knobs for a training set of `n` samples with
    /// `num_classes` classes.
    pub fn resolve(&self, n: usize, num_classes: usize, seed: u64) -> PartitionSpec {
        PartitionSpec {
            num_clients: self.num_clients,
            min_classes: self.min_classes,
            max_classes: self.max_classes.unwrap_or(num_classes).min(num_classes),
            min_samples: self.min_samples.unwrap_or(1),
            max_samples: self.max_samples.unwrap_or(n),
            scheme: match self.scheme {
                SchemeKind::ClassInventory => PartitionScheme::ClassInventory,
                SchemeKind::Dirichlet => PartitionScheme::Dirichlet {
                    alpha: self.dirichlet_alpha,
                },
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layer_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub dropout_layers: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![43, 128, 64, 32, 15],
            dropout_rate: 0.3,
            dropout_layers: vec![1, 2],
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        ArchitectureSpec::new(
            self.layer_dims.clone(),
            self.dropout_rate,
            self.dropout_layers.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub rounds: u64,
    pub clients_per_round: ClientsPerRound,
    pub local_epochs: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            clients_per_round: ClientsPerRound::Fraction(0.10),
            local_epochs: 3,
            learning_rate: 1e-3,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorSection {
    pub policies: Vec<Policy>,
    pub exploration_rate: f64,
    pub cold_start_rounds: u64,
    pub window: usize,
    pub quality_floor: f64,
    pub stability_constant: f64,
    pub poc_candidate_factor: usize,
    pub oort_exploration_weight: f64,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let base = SelectorConfig::default();
        Self {
            policies: vec![Policy::VarsFl],
            exploration_rate: base.exploration_rate,
            cold_start_rounds: base.cold_start_rounds,
            window: base.window,
            quality_floor: base.quality_floor,
            stability_constant: base.stability_constant,
            poc_candidate_factor: base.poc_candidate_factor,
            oort_exploration_weight: base.oort_exploration_weight,
        }
    }
}

impl SelectorSection {
    pub fn selector_config(
        &self,
        policy: Policy,
        clients_per_round: ClientsPerRound,
    ) -> SelectorConfig {
        SelectorConfig {
            policy,
            clients_per_round,
            exploration_rate: self.exploration_rate,
            cold_start_rounds: self.cold_start_rounds,
            window: self.window,
            quality_floor: self.quality_floor,
            stability_constant: self.stability_constant,
            poc_candidate_factor: self.poc_candidate_factor,
            oort_exploration_weight: self.oort_exploration_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub mode: ValidationMode,
    pub per_class: Option<usize>,
    /// Fraction of the validation set used for per-round scoring; values
    /// below 1 are a desk-scale speed knob and get recorded in round reports.
    pub subsample_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            mode: ValidationMode::Stratified,
            per_class: None,
            subsample_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Test-set evaluation cadence in rounds; the final round always runs.
    pub eval_cadence: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![7, 42, 123],
            output_dir: PathBuf::from("out"),
            eval_cadence: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub selector: SelectorSection,
    pub validation: ValidationConfig,
    pub run: RunConfig,
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected true/false, got '{other}'"
        ))),
    }
}

/// `10%` and float literals are fractions, bare integers are counts.
fn parse_clients_per_round(key: &str, value: &str) -> Result<ClientsPerRound> {
    let v = value.trim();
    if let Some(pct) = v.strip_suffix('%') {
        let f: f64 = parse_scalar(key, pct)?;
        return Ok(ClientsPerRound::Fraction(f / 100.0));
    }
    if v.contains('.') {
        return Ok(ClientsPerRound::Fraction(parse_scalar(key, v)?));
    }
    Ok(ClientsPerRound::Count(parse_scalar(key, v)?))
}

impl ExperimentConfig {
    /// Parses the dotted-key format. Full-line `#` comments and blank lines
    /// are ignored; unknown and duplicate keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut samples_override: Option<Vec<usize>> = None;
        let mut seen: HashSet<String> = HashSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }

            match key {
                "dataset.kind" => {
                    cfg.dataset.kind = match value {
                        "synthetic" => DatasetKind::Synthetic,
                        "csv" => DatasetKind::Csv,
                        other => {
                            return Err(Error::Config(format!(
                                "dataset.kind: expected synthetic or csv, got '{other}'"
                            )))
                        }
                    }
                }
                "dataset.num_classes" => cfg.dataset.num_classes = parse_scalar(key, value)?,
                "dataset.feature_dim" => cfg.dataset.feature_dim = parse_scalar(key, value)?,
                "dataset.samples_per_class" => samples_override = Some(parse_list(key, value)?),
                "dataset.cluster_spread" => cfg.dataset.cluster_spread = parse_scalar(key, value)?,
                "dataset.csv_path" => cfg.dataset.csv_path = Some(PathBuf::from(value)),
                "dataset.label_column" => cfg.dataset.label_column = value.to_string(),
                "dataset.drop_columns" => {
                    cfg.dataset.drop_columns = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "dataset.class_names" => {
                    cfg.dataset.class_names = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    )
                }
                "dataset.cap_class" => cfg.dataset.cap_class = Some(value.to_string()),
                "dataset.cap_fraction" => cfg.dataset.cap_fraction = parse_scalar(key, value)?,
                "dataset.split" => {
                    let fracs: Vec<f64> = parse_list(key, value)?;
                    if fracs.len() != 3 {
                        return Err(Error::Config("dataset.split needs 3 fractions".into()));
                    }
                    cfg.dataset.split_fractions = (fracs[0], fracs[1], fracs[2]);
                }
                "dataset.stratified_split" => {
                    cfg.dataset.stratified_split = parse_bool(key, value)?
                }

                "partition.num_clients" => cfg.partition.num_clients = parse_scalar(key, value)?,
                "partition.scheme" => {
                    cfg.partition.scheme = match value {
                        "class-inventory" => SchemeKind::ClassInventory,
                        "dirichlet" => SchemeKind::Dirichlet,
                        other => {
                            return Err(Error::Config(format!(
                                "partition.scheme: expected class-inventory or dirichlet, got '{other}'"
                            )))
                        }
                    }
                }
                "partition.dirichlet_alpha" => {
                    cfg.partition.dirichlet_alpha = parse_scalar(key, value)?
                }
                "partition.min_classes" => cfg.partition.min_classes = parse_scalar(key, value)?,
                "partition.max_classes" => {
                    cfg.partition.max_classes = Some(parse_scalar(key, value)?)
                }
                "partition.min_samples" => {
                    cfg.partition.min_samples = Some(parse_scalar(key, value)?)
                }
                "partition.max_samples" => {
                    cfg.partition.max_samples = Some(parse_scalar(key, value)?)
                }

                "model.layer_dims" => cfg.model.layer_dims = parse_list(key, value)?,
                "model.dropout_rate" => cfg.model.dropout_rate = parse_scalar(key, value)?,
                "model.dropout_layers" => cfg.model.dropout_layers = parse_list(key, value)?,

                "training.rounds" => cfg.training.rounds = parse_scalar(key, value)?,
                "training.clients_per_round" => {
                    cfg.training.clients_per_round = parse_clients_per_round(key, value)?
                }
                "training.local_epochs" => cfg.training.local_epochs = parse_scalar(key, value)?,
                "training.learning_rate" => cfg.training.learning_rate = parse_scalar(key, value)?,
                "training.batch_size" => cfg.training.batch_size = parse_scalar(key, value)?,

                "selector.policies" => {
                    let mut policies = Vec::new();
                    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        policies.push(name.parse::<Policy>()?);
                    }
                    cfg.selector.policies = policies;
                }
                "selector.exploration_rate" => {
                    cfg.selector.exploration_rate = parse_scalar(key, value)?
                }
                "selector.cold_start_rounds" => {
                    cfg.selector.cold_start_rounds = parse_scalar(key, value)?
                }
                "selector.window" => cfg.selector.window = parse_scalar(key, value)?,
                "selector.quality_floor" => cfg.selector.quality_floor = parse_scalar(key, value)?,
                "selector.stability_constant" => {
                    cfg.selector.stability_constant = parse_scalar(key, value)?
                }
                "selector.poc_candidate_factor" => {
                    cfg.selector.poc_candidate_factor = parse_scalar(key, value)?
                }
                "selector.oort_exploration_weight" => {
                    cfg.selector.oort_exploration_weight = parse_scalar(key, value)?
                }

                "validation.mode" => {
                    cfg.validation.mode = match value {
                        "stratified" => ValidationMode::Stratified,
                        "uniform" => ValidationMode::Uniform,
                        other => {
                            return Err(Error::Config(format!(
                                "validation.mode: expected stratified or uniform, got '{other}'"
                            )))
                        }
                    }
                }
                "validation.per_class" => {
                    cfg.validation.per_class = Some(parse_scalar(key, value)?)
                }
                "validation.subsample_fraction" => {
                    cfg.validation.subsample_fraction = parse_scalar(key, value)?
                }

                "run.seeds" => cfg.run.seeds = parse_list(key, value)?,
                "run.output_dir" => cfg.run.output_dir = PathBuf::from(value),
                "run.eval_cadence" => cfg.run.eval_cadence = parse_scalar(key, value)?,

                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }

        // a single samples_per_class entry broadcasts over all classes
        match samples_override {
            Some(list) if list.len() == 1 => {
                cfg.dataset.samples_per_class = vec![list[0]; cfg.dataset.num_classes]
            }
            Some(list) => cfg.dataset.samples_per_class = list,
            None => {
                if cfg.dataset.samples_per_class.len() != cfg.dataset.num_classes {
                    let fill = cfg.dataset.samples_per_class[0];
                    cfg.dataset.samples_per_class = vec![fill; cfg.dataset.num_classes];
                }
            }
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Emits every key in a fixed order; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };

        kv(
            "dataset.kind",
            match self.dataset.kind {
                DatasetKind::Synthetic => "synthetic".into(),
                DatasetKind::Csv => "csv".into(),
            },
        );
        kv("dataset.num_classes", self.dataset.num_classes.to_string());
        kv("dataset.feature_dim", self.dataset.feature_dim.to_string());
        kv(
            "dataset.samples_per_class",
            join(&self.dataset.samples_per_class),
        );
        kv(
            "dataset.cluster_spread",
            self.dataset.cluster_spread.to_string(),
        );
        if let Some(p) = &self.dataset.csv_path {
            kv("dataset.csv_path", p.display().to_string());
        }
        kv("dataset.label_column", self.dataset.label_column.clone());
        if !self.dataset.drop_columns.is_empty() {
            kv("dataset.drop_columns", self.dataset.drop_columns.join(","));
        }
        if let Some(names) = &self.dataset.class_names {
            kv("dataset.class_names", names.join(","));
        }
        if let Some(c) = &self.dataset.cap_class {
            kv("dataset.cap_class", c.clone());
        }
        kv("dataset.cap_fraction", self.dataset.cap_fraction.to_string());
        let (a, b, c) = self.dataset.split_fractions;
        kv("dataset.split", format!("{a},{b},{c}"));
        kv(
            "dataset.stratified_split",
            self.dataset.stratified_split.to_string(),
        );

        kv(
            "partition.num_clients",
            self.partition.num_clients.to_string(),
        );
        kv(
            "partition.scheme",
            match self.partition.scheme {
                SchemeKind::ClassInventory => "class-inventory".into(),
                SchemeKind::Dirichlet => "dirichlet".into(),
            },
        );
        kv(
            "partition.dirichlet_alpha",
            self.partition.dirichlet_alpha.to_string(),
        );
        kv(
            "partition.min_classes",
            self.partition.min_classes.to_string(),
        );
        if let Some(v) = self.partition.max_classes {
            kv("partition.max_classes", v.to_string());
        }
        if let Some(v) = self.partition.min_samples {
            kv("partition.min_samples", v.to_string());
        }
        if let Some(v) = self.partition.max_samples {
            kv("partition.max_samples", v.to_string());
        }

        kv("model.layer_dims", join(&self.model.layer_dims));
        kv("model.dropout_rate", self.model.dropout_rate.to_string());
        kv("model.dropout_layers", join(&self.model.dropout_layers));

        kv("training.rounds", self.training.rounds.to_string());
        kv(
            "training.clients_per_round",
            match self.training.clients_per_round {
                ClientsPerRound::Count(c) => c.to_string(),
                ClientsPerRound::Fraction(f) => f.to_string(),
            },
        );
        kv(
            "training.local_epochs",
            self.training.local_epochs.to_string(),
        );
        kv(
            "training.learning_rate",
            self.training.learning_rate.to_string(),
        );
        kv("training.batch_size", self.training.batch_size.to_string());

        kv(
            "selector.policies",
            self.selector
                .policies
                .iter()
                .map(Policy::as_str)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "selector.exploration_rate",
            self.selector.exploration_rate.to_string(),
        );
        kv(
            "selector.cold_start_rounds",
            self.selector.cold_start_rounds.to_string(),
        );
        kv("selector.window", self.selector.window.to_string());
        kv(
            "selector.quality_floor",
            self.selector.quality_floor.to_string(),
        );
        kv(
            "selector.stability_constant",
            self.selector.stability_constant.to_string(),
        );
        kv(
            "selector.poc_candidate_factor",
            self.selector.poc_candidate_factor.to_string(),
        );
        kv(
            "selector.oort_exploration_weight",
            self.selector.oort_exploration_weight.to_string(),
        );

        kv(
            "validation.mode",
            match self.validation.mode {
                ValidationMode::Stratified => "stratified".into(),
                ValidationMode::Uniform => "uniform".into(),
            },
        );
        if let Some(v) = self.validation.per_class {
            kv("validation.per_class", v.to_string());
        }
        kv(
            "validation.subsample_fraction",
            self.validation.subsample_fraction.to_string(),
        );

        kv(
            "run.seeds",
            self.run
                .seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("run.output_dir", self.run.output_dir.display().to_string());
        kv("run.eval_cadence", self.run.eval_cadence.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Synthetic => {
                if d.num_classes < 2 {
                    return Err(Error::Config("dataset.num_classes must be >= 2".into()));
                }
                if d.samples_per_class.len() != d.num_classes {
                    return Err(Error::Config(format!(
                        "dataset.samples_per_class has {} entries for {} classes",
                        d.samples_per_class.len(),
                        d.num_classes
                    )));
                }
                if d.samples_per_class.contains(&0) {
                    return Err(Error::Config(
                        "dataset.samples_per_class entries must be >= 1".into(),
                    ));
                }
                if !(d.cluster_spread.is_finite() && d.cluster_spread >= 0.0) {
                    return Err(Error::Config("dataset.cluster_spread must be >= 0".into()));
                }
                let arch = self.model.architecture()?;
                if arch.input_dim() != d.feature_dim {
                    return Err(Error::Config(format!(
                        "model.layer_dims input {} != dataset.feature_dim {}",
                        arch.input_dim(),
                        d.feature_dim
                    )));
                }
                if arch.output_dim() != d.num_classes {
                    return Err(Error::Config(format!(
                        "model.layer_dims output {} != dataset.num_classes {}",
                        arch.output_dim(),
                        d.num_classes
                    )));
                }
            }
            DatasetKind::Csv => {
                if d.csv_path.is_none() {
                    return Err(Error::Config(
                        "dataset.csv_path is required for csv datasets".into(),
                    ));
                }
                self.model.architecture()?;
            }
        }
        let (a, b, c) = d.split_fractions;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::Config("dataset.split fractions must sum to 1".into()));
        }
        if !(d.cap_fraction > 0.0 && d.cap_fraction < 1.0) {
            return Err(Error::Config("dataset.cap_fraction must be in (0,1)".into()));
        }

        if self.partition.num_clients == 0 {
            return Err(Error::Config("partition.num_clients must be >= 1".into()));
        }
        if self.partition.scheme == SchemeKind::Dirichlet && self.partition.dirichlet_alpha <= 0.0 {
            return Err(Error::Config("partition.dirichlet_alpha must be > 0".into()));
        }

        if self.training.learning_rate <= 0.0 {
            return Err(Error::Config("training.learning_rate must be > 0".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }

        if self.selector.policies.is_empty() {
            return Err(Error::Config(
                "selector.policies must name at least one policy".into(),
            ));
        }
        let mut seen = HashSet::new();
        for p in &self.selector.policies {
            if !seen.insert(*p) {
                return Err(Error::Config(format!("selector.policies repeats '{p}'")));
            }
        }
        self.selector
            .selector_config(self.selector.policies[0], self.training.clients_per_round)
            .validate()?;

        if self.validation.mode == ValidationMode::Uniform && self.validation.per_class.is_none() {
            return Err(Error::Config(
                "validation.per_class is required when validation.mode = uniform".into(),
            ));
        }
        if !(self.validation.subsample_fraction > 0.0 && self.validation.subsample_fraction <= 1.0)
        {
            return Err(Error::Config(
                "validation.subsample_fraction must be in (0,1]".into(),
            ));
        }

        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must name at least one seed".into()));
        }
        if self.run.eval_cadence == 0 {
            return Err(Error::Config("run.eval_cadence must be >= 1".into()));
        }
        Ok(())
    }

    /// Expected split sizes without touching data — only possible for
    /// synthetic datasets, where class counts are part of the config.
    pub fn expected_split_sizes(&self) -> Option<(usize, usize, usize)> {
        if self.dataset.kind != DatasetKind::Synthetic {
            return None;
        }
        let counts = &self.dataset.samples_per_class;
        let total: usize = match &self.dataset.cap_class {
            Some(name) => {
                let class = (0..counts.len()).find(|&c| format!("class_{c:02}") == *name);
                match class {
                    Some(c) => {
                        let majority = counts[c];
                        let other: usize = counts.iter().sum::<usize>() - majority;
                        let kept = crate::data::capped_majority_count(other, self.dataset.cap_fraction)
                            .min(majority);
                        other + kept
                    }
                    None => counts.iter().sum(),
                }
            }
            None => counts.iter().sum(),
        };
        let (a, b, c) = self.dataset.split_fractions;
        let sizes = crate::data::largest_remainder(total, &[a, b, c]);
        Some((sizes[0], sizes[1], sizes[2]))
    }
}

/// Computation/communication accounting for a configuration, no training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    /// Forward-pass multiply-accumulates per sample.
    pub c_fwd_macs_per_sample: u64,
    pub clients_per_round: u64,
    pub validation_size: u64,
    /// Extra server-side scoring cost per round: `m * |val| * c_fwd`.
    pub delta_c_server_macs_per_round: u64,
    pub param_count: u64,
    /// Wire size of one update at 32-bit precision.
    pub uplink_bytes_per_client_per_round: u64,
    pub uplink_bytes_per_round: u64,
    /// Server-side reputation memory: one scalar per client per window slot.
    pub ledger_scalars: u64,
}

impl ComplexityReport {
    pub fn compute(
        arch: &ArchitectureSpec,
        clients_per_round: usize,
        validation_size: usize,
        num_clients: usize,
        window: usize,
    ) -> Self {
        let c_fwd = arch.forward_macs();
        let params = arch.param_count() as u64;
        let per_client = params * 4;
        Self {
            c_fwd_macs_per_sample: c_fwd,
            clients_per_round: clients_per_round as u64,
            validation_size: validation_size as u64,
            delta_c_server_macs_per_round: clients_per_round as u64
                * validation_size as u64
                * c_fwd,
            param_count: params,
            uplink_bytes_per_client_per_round: per_client,
            uplink_bytes_per_round: clients_per_round as u64 * per_client,
            ledger_scalars: num_clients as u64 * window as u64,
        }
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<42} {:>16}", "quantity", "value")?;
        writeln!(f, "{:-<59}", "")?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "forward MACs / sample (C_fwd)", self.c_fwd_macs_per_sample
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "clients per round (m)", self.clients_per_round
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "validation samples", self.validation_size
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "server scoring MACs / round", self.delta_c_server_macs_per_round
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "trainable parameters", self.param_count
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "uplink bytes / client / round", self.uplink_bytes_per_client_per_round
        )?;
        writeln!(
            f,
            "{:<42} {:>16}",
            "uplink bytes / round", self.uplink_bytes_per_round
        )?;
        write!(
            f,
            "{:<42} {:>16}",
            "ledger scalars (N x W)", self.ledger_scalars
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.serialize();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn parse_overrides_and_percent_budget() {
        let text = "\
# experiment setup
dataset.kind = synthetic
dataset.num_classes = 4
dataset.feature_dim = 6
dataset.samples_per_class = 50
model.layer_dims = 6,8,4
model.dropout_layers = 1
training.rounds = 3
training.clients_per_round = 25%
selector.policies = fedavg-random,vars-fl
run.seeds = 1,2
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset.num_classes, 4);
        assert_eq!(cfg.dataset.samples_per_class, vec![50; 4]);
        assert_eq!(
            cfg.training.clients_per_round,
            ClientsPerRound::Fraction(0.25)
        );
        assert_eq!(
            cfg.selector.policies,
            vec![Policy::FedAvgRandom, Policy::VarsFl]
        );
        assert_eq!(cfg.run.seeds, vec![1, 2]);
        // round trip
        assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_fatal() {
        let err = ExperimentConfig::parse("training.runds = 5\n").unwrap_err();
        assert!(err.to_string().contains("training.runds"), "{err}");
        let err =
            ExperimentConfig::parse("training.rounds = 5\ntraining.rounds = 6\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_policy_lists_valid_names() {
        let err = ExperimentConfig::parse("selector.policies = fancy-new\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fancy-new"));
        for p in Policy::ALL {
            assert!(msg.contains(p.as_str()), "{msg} missing {p}");
        }
    }

    #[test]
    fn validation_rules_fire() {
        assert!(ExperimentConfig::parse("dataset.split = 0.5,0.2,0.2\n").is_err());
        assert!(ExperimentConfig::parse("validation.mode = uniform\n").is_err());
        assert!(
            ExperimentConfig::parse("validation.mode = uniform\nvalidation.per_class = 50\n")
                .is_ok()
        );
        assert!(ExperimentConfig::parse("model.layer_dims = 10,5\n").is_err()); // mismatched dims
        assert!(ExperimentConfig::parse("run.seeds = \n").is_err());
        assert!(ExperimentConfig::parse("dataset.kind = csv\n").is_err()); // missing path
    }

    #[test]
    fn complexity_report_reference_values() {
        let arch = ArchitectureSpec::new(vec![43, 128, 64, 32, 15], 0.3, vec![1, 2]).unwrap();
        let report = ComplexityReport::compute(&arch, 10, 110_407, 100, 5);
        assert_eq!(report.c_fwd_macs_per_sample, 16_224);
        assert_eq!(report.delta_c_server_macs_per_round, 10 * 110_407 * 16_224);
        assert_eq!(report.delta_c_server_macs_per_round, 17_912_431_680);
        assert_eq!(report.param_count, 16_463);
        assert_eq!(report.uplink_bytes_per_client_per_round, 65_852);
        assert_eq!(report.ledger_scalars, 500);
    }

    #[test]
    fn expected_split_sizes_account_for_capping() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.samples_per_class = vec![100; 15];
        let (tr, va, te) = cfg.expected_split_sizes().unwrap();
        assert_eq!(tr + va + te, 1500);

        cfg.dataset.cap_class = Some("class_00".into());
        cfg.dataset.samples_per_class[0] = 1000;
        // other = 1400, kept = ceil(0.18/0.82*1400) = 308
        let (tr2, va2, te2) = cfg.expected_split_sizes().unwrap();
        assert_eq!(tr2 + va2 + te2, 1400 + 308);
    }
}
