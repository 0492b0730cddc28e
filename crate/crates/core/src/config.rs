//! Declarative experiment description: dataset construction, model, hyper
//! parameters, participation, and run settings. Parsing is strict (unknown
//! keys are rejected by the deserializer) and validation reports every
//! offending field at once.

use crate::data::{self, FederatedDataset};
use crate::error::{Error, Result};
use crate::fedcore::{
    Algorithm, AggregationScheme, HyperParams, LrSchedule, ParticipationSpec, RoundMetrics,
    SimOptions,
};
use crate::models::{Activation, ModelKind, ModelSpec};
use crate::numkit::{Purpose, RngStream, SERVER};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_split_ratio() -> f64 {
    0.8
}

fn default_eval_every() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid,
    ByClasses { m: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX image/label files partitioned across clients. Relative paths are
    /// resolved against the data root directory.
    Idx {
        train_images: String,
        train_labels: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_images: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_labels: Option<String>,
        clients: usize,
        partition: PartitionConfig,
        /// Cap on samples kept per class (applied to train and test).
        #[serde(skip_serializing_if = "Option::is_none")]
        per_class_cap: Option<usize>,
        #[serde(default = "default_split_ratio")]
        split_ratio: f64,
        /// Declared class count; checked against the labels found on load.
        #[serde(skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
    /// Heterogeneous synthetic classification data.
    SyntheticClassification {
        alpha: f64,
        beta: f64,
        clients: usize,
        samples_per_client: [usize; 2],
        input_dim: usize,
        classes: usize,
        #[serde(default = "default_split_ratio")]
        split_ratio: f64,
    },
    /// Strongly convex synthetic least-squares data.
    SyntheticRegression {
        clients: usize,
        samples_per_client: usize,
        input_dim: usize,
        noise_sd: f64,
        #[serde(default = "default_split_ratio")]
        split_ratio: f64,
    },
}

impl DatasetConfig {
    pub fn n_clients(&self) -> usize {
        match self {
            DatasetConfig::Idx { clients, .. }
            | DatasetConfig::SyntheticClassification { clients, .. }
            | DatasetConfig::SyntheticRegression { clients, .. } => *clients,
        }
    }

    fn declared_classes(&self) -> Option<usize> {
        match self {
            DatasetConfig::Idx { classes, .. } => *classes,
            DatasetConfig::SyntheticClassification { classes, .. } => Some(*classes),
            DatasetConfig::SyntheticRegression { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearRegression {
        input_dim: usize,
        #[serde(default)]
        l2: f64,
    },
    SoftmaxRegression {
        input_dim: usize,
        classes: usize,
        #[serde(default)]
        l2: f64,
    },
    Mlp1Hidden {
        input_dim: usize,
        classes: usize,
        hidden: usize,
        activation: ActivationConfig,
        #[serde(default)]
        l2: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationConfig {
    Tanh,
    Relu,
}

impl ModelConfig {
    pub fn to_spec(&self) -> ModelSpec {
        match *self {
            ModelConfig::LinearRegression { input_dim, l2 } => ModelSpec {
                kind: ModelKind::LinearRegression,
                input_dim,
                l2,
            },
            ModelConfig::SoftmaxRegression {
                input_dim,
                classes,
                l2,
            } => ModelSpec {
                kind: ModelKind::SoftmaxRegression { classes },
                input_dim,
                l2,
            },
            ModelConfig::Mlp1Hidden {
                input_dim,
                classes,
                hidden,
                activation,
                l2,
            } => ModelSpec {
                kind: ModelKind::Mlp1Hidden {
                    classes,
                    hidden,
                    activation: match activation {
                        ActivationConfig::Tanh => Activation::Tanh,
                        ActivationConfig::Relu => Activation::Relu,
                    },
                },
                input_dim,
                l2,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "schedule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrConfig {
    Constant { eta0: f64 },
    InverseTime { eta0: f64, gamma0: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Efl,
    Fedavg,
    Fedprox { mu: f64 },
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationConfig {
    #[default]
    Static,
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub rounds: u32,
    pub local_steps: u32,
    pub batch_size: usize,
    #[serde(default)]
    pub lambda: f64,
    pub lr: LrConfig,
    /// Cap on adaptive aggregation coefficients; defaults to `local_steps`
    /// (the cap never binds for uniform step distributions).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_down: Option<f64>,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher_samples: Option<usize>,
}

impl HyperConfig {
    pub fn to_hyper_params(&self) -> HyperParams {
        HyperParams {
            rounds: self.rounds,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            lambda: self.lambda,
            lr: match self.lr {
                LrConfig::Constant { eta0 } => LrSchedule::Constant { eta0 },
                LrConfig::InverseTime { eta0, gamma0 } => LrSchedule::InverseTime { eta0, gamma0 },
            },
            theta: self.theta.unwrap_or(self.local_steps as f64),
            q_up: self.q_up,
            q_down: self.q_down,
            algorithm: match self.algorithm {
                AlgorithmConfig::Efl => Algorithm::Efl,
                AlgorithmConfig::Fedavg => Algorithm::FedAvg,
                AlgorithmConfig::Fedprox { mu } => Algorithm::FedProx { mu },
            },
            aggregation: match self.aggregation {
                AggregationConfig::Static => AggregationScheme::Static,
                AggregationConfig::Adaptive => AggregationScheme::Adaptive,
            },
            fisher_samples: self.fisher_samples,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ParticipationEntry {
    AlwaysFull,
    Inactive {
        prob: f64,
    },
    Incomplete {
        #[serde(default)]
        inactive_prob: f64,
        min_steps: u32,
        max_steps: u32,
    },
    Depart {
        at: u32,
    },
    Arrive {
        at: u32,
    },
}

impl ParticipationEntry {
    fn to_spec(&self) -> ParticipationSpec {
        match *self {
            ParticipationEntry::AlwaysFull => ParticipationSpec::AlwaysFull,
            ParticipationEntry::Inactive { prob } => ParticipationSpec::Inactive { prob },
            ParticipationEntry::Incomplete {
                inactive_prob,
                min_steps,
                max_steps,
            } => ParticipationSpec::Incomplete {
                inactive_prob,
                min_steps,
                max_steps,
            },
            ParticipationEntry::Depart { at } => ParticipationSpec::Depart { at },
            ParticipationEntry::Arrive { at } => ParticipationSpec::Arrive { at },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParticipationOverride {
    pub clients: Vec<u32>,
    #[serde(flatten)]
    pub entry: ParticipationEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParticipationConfig {
    #[serde(default = "default_participation")]
    pub default: ParticipationEntry,
    #[serde(default)]
    pub overrides: Vec<ParticipationOverride>,
}

fn default_participation() -> ParticipationEntry {
    ParticipationEntry::AlwaysFull
}

impl Default for ParticipationConfig {
    fn default() -> Self {
        ParticipationConfig {
            default: default_participation(),
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: String,
    #[serde(default = "default_eval_every")]
    pub eval_every: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub hyper: HyperConfig,
    #[serde(default)]
    pub participation: ParticipationConfig,
    pub run: RunConfig,
}

fn prob_ok(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl ExperimentConfig {
    /// Check every invariant that does not require loading data, collecting
    /// all violations. `data_root` resolves relative IDX paths; referenced
    /// files must exist.
    pub fn validate(&self, data_root: Option<&Path>) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut err = |field: &str, reason: String| errs.push(format!("{field}: {reason}"));

        let n_clients = self.dataset.n_clients();
        match &self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                clients,
                partition,
                per_class_cap,
                split_ratio,
                classes,
            } => {
                if *clients == 0 {
                    err("dataset.clients", "must be at least 1".into());
                }
                for (field, path) in [
                    ("dataset.train_images", Some(train_images)),
                    ("dataset.train_labels", Some(train_labels)),
                    ("dataset.test_images", test_images.as_ref()),
                    ("dataset.test_labels", test_labels.as_ref()),
                ] {
                    if let Some(p) = path {
                        if !resolve_path(p, data_root).exists() {
                            err(field, format!("file not found: {}", resolve_path(p, data_root).display()));
                        }
                    }
                }
                if test_images.is_some() != test_labels.is_some() {
                    err("dataset.test_images", "test images and labels must be given together".into());
                }
                if let PartitionConfig::ByClasses { m } = partition {
                    if *m == 0 {
                        err("dataset.partition.m", "must be at least 1".into());
                    }
                    if let Some(c) = classes {
                        if m > c {
                            err("dataset.partition.m", format!("m = {m} exceeds class count {c}"));
                        }
                    }
                }
                if let Some(cap) = per_class_cap {
                    if *cap == 0 {
                        err("dataset.per_class_cap", "must be at least 1".into());
                    }
                }
                if !(*split_ratio > 0.0 && *split_ratio <= 1.0) {
                    err("dataset.split_ratio", format!("must be in (0, 1], got {split_ratio}"));
                }
            }
            DatasetConfig::SyntheticClassification {
                alpha,
                beta,
                clients,
                samples_per_client,
                input_dim,
                classes,
                split_ratio,
            } => {
                if *alpha < 0.0 {
                    err("dataset.alpha", format!("must be nonnegative, got {alpha}"));
                }
                if *beta < 0.0 {
                    err("dataset.beta", format!("must be nonnegative, got {beta}"));
                }
                if *clients == 0 {
                    err("dataset.clients", "must be at least 1".into());
                }
                if samples_per_client[0] == 0 || samples_per_client[0] > samples_per_client[1] {
                    err(
                        "dataset.samples_per_client",
                        format!("bad range [{}, {}]", samples_per_client[0], samples_per_client[1]),
                    );
                }
                if *input_dim == 0 {
                    err("dataset.input_dim", "must be at least 1".into());
                }
                if *classes < 2 {
                    err("dataset.classes", "need at least 2 classes".into());
                }
                if !(*split_ratio > 0.0 && *split_ratio <= 1.0) {
                    err("dataset.split_ratio", format!("must be in (0, 1], got {split_ratio}"));
                }
            }
            DatasetConfig::SyntheticRegression {
                clients,
                samples_per_client,
                input_dim,
                noise_sd,
                split_ratio,
            } => {
                if *clients == 0 {
                    err("dataset.clients", "must be at least 1".into());
                }
                if *samples_per_client == 0 {
                    err("dataset.samples_per_client", "must be at least 1".into());
                }
                if *input_dim == 0 {
                    err("dataset.input_dim", "must be at least 1".into());
                }
                if *noise_sd < 0.0 {
                    err("dataset.noise_sd", format!("must be nonnegative, got {noise_sd}"));
                }
                if !(*split_ratio > 0.0 && *split_ratio <= 1.0) {
                    err("dataset.split_ratio", format!("must be in (0, 1], got {split_ratio}"));
                }
            }
        }

        // Model/dataset compatibility.
        let spec = self.model.to_spec();
        match (&self.dataset, spec.classes()) {
            (DatasetConfig::SyntheticRegression { .. }, Some(_)) => err(
                "model.kind",
                "classification model on a regression dataset".into(),
            ),
            (DatasetConfig::SyntheticRegression { .. }, None) => {}
            (_, None) => err("model.kind", "regression model on a classification dataset".into()),
            (_, Some(c)) => {
                if let Some(dc) = self.dataset.declared_classes() {
                    if c != dc {
                        err("model.classes", format!("model has {c} classes, dataset {dc}"));
                    }
                }
            }
        }
        match &self.dataset {
            DatasetConfig::SyntheticClassification { input_dim, .. }
            | DatasetConfig::SyntheticRegression { input_dim, .. } => {
                if *input_dim != spec.input_dim {
                    err(
                        "model.input_dim",
                        format!("model expects {}, dataset provides {input_dim}", spec.input_dim),
                    );
                }
            }
            DatasetConfig::Idx { .. } => {} // checked after load
        }
        if spec.l2 < 0.0 {
            err("model.l2", format!("must be nonnegative, got {}", spec.l2));
        }
        if let ModelKind::Mlp1Hidden { hidden, .. } = spec.kind {
            if hidden == 0 {
                err("model.hidden", "must be at least 1".into());
            }
        }

        let h = &self.hyper;
        if h.local_steps == 0 {
            err("hyper.local_steps", "must be at least 1".into());
        }
        if h.batch_size == 0 {
            err("hyper.batch_size", "must be at least 1".into());
        }
        if h.lambda < 0.0 {
            err("hyper.lambda", format!("must be nonnegative, got {}", h.lambda));
        }
        match h.lr {
            LrConfig::Constant { eta0 } => {
                if eta0 <= 0.0 {
                    err("hyper.lr.eta0", format!("must be positive, got {eta0}"));
                }
            }
            LrConfig::InverseTime { eta0, gamma0 } => {
                if eta0 <= 0.0 {
                    err("hyper.lr.eta0", format!("must be positive, got {eta0}"));
                }
                if gamma0 <= 0.0 {
                    err("hyper.lr.gamma0", format!("must be positive, got {gamma0}"));
                }
            }
        }
        if let Some(theta) = h.theta {
            if theta < 1.0 {
                err("hyper.theta", format!("must be at least 1, got {theta}"));
            }
        }
        for (field, q) in [("hyper.q_up", h.q_up), ("hyper.q_down", h.q_down)] {
            if let Some(q) = q {
                if !(q > 0.0 && q <= 1.0) {
                    err(field, format!("must be in (0, 1], got {q}"));
                }
            }
        }
        if let AlgorithmConfig::Fedprox { mu } = h.algorithm {
            if mu < 0.0 {
                err("hyper.algorithm.mu", format!("must be nonnegative, got {mu}"));
            }
        }
        if let Some(fs) = h.fisher_samples {
            if fs == 0 {
                err("hyper.fisher_samples", "must be at least 1".into());
            }
        }

        fn check_entry(
            errs: &mut Vec<String>,
            field: &str,
            e: &ParticipationEntry,
            rounds: u32,
            local_steps: u32,
        ) {
            match *e {
                ParticipationEntry::Inactive { prob } => {
                    if !prob_ok(prob) {
                        errs.push(format!("{field}.prob: must be in [0, 1], got {prob}"));
                    }
                }
                ParticipationEntry::Incomplete {
                    inactive_prob,
                    min_steps,
                    max_steps,
                } => {
                    if !prob_ok(inactive_prob) {
                        errs.push(format!(
                            "{field}.inactive_prob: must be in [0, 1], got {inactive_prob}"
                        ));
                    }
                    if min_steps == 0 || min_steps > max_steps || max_steps > local_steps {
                        errs.push(format!(
                            "{field}: step range [{min_steps}, {max_steps}] not within [1, {local_steps}]"
                        ));
                    }
                }
                ParticipationEntry::Depart { at } | ParticipationEntry::Arrive { at } => {
                    if at >= rounds && rounds > 0 {
                        errs.push(format!("{field}.at: round {at} outside 0..{rounds}"));
                    }
                }
                ParticipationEntry::AlwaysFull => {}
            }
        }
        check_entry(
            &mut errs,
            "participation.default",
            &self.participation.default,
            h.rounds,
            h.local_steps,
        );
        for (i, o) in self.participation.overrides.iter().enumerate() {
            check_entry(
                &mut errs,
                &format!("participation.overrides[{i}]"),
                &o.entry,
                h.rounds,
                h.local_steps,
            );
            for &c in &o.clients {
                if c as usize >= n_clients {
                    errs.push(format!(
                        "participation.overrides[{i}].clients: client {c} outside 0..{n_clients}"
                    ));
                }
            }
        }

        if self.run.seeds.is_empty() {
            errs.push("run.seeds: must not be empty".into());
        }
        if self.run.eval_every == 0 {
            errs.push("run.eval_every: must be at least 1".into());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    /// Per-client participation specs, with overrides applied in order.
    pub fn participation_specs(&self) -> Vec<ParticipationSpec> {
        let n = self.dataset.n_clients();
        let mut specs = vec![self.participation.default.to_spec(); n];
        for o in &self.participation.overrides {
            for &c in &o.clients {
                if (c as usize) < n {
                    specs[c as usize] = o.entry.to_spec();
                }
            }
        }
        specs
    }

    /// Materialize the dataset for one seed.
    pub fn build_dataset(&self, seed: u64, data_root: Option<&Path>) -> Result<FederatedDataset> {
        match &self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                clients,
                partition,
                per_class_cap,
                split_ratio,
                classes,
            } => {
                let mut train = data::load_idx(
                    resolve_path(train_images, data_root).to_str().unwrap(),
                    resolve_path(train_labels, data_root).to_str().unwrap(),
                )?;
                if let Some(cap) = per_class_cap {
                    let mut s = RngStream::new(seed, SERVER, 0, Purpose::Subset);
                    train = data::cap_per_class(&train, *cap, &mut s);
                }
                let spec = self.model.to_spec();
                if train.input_dim() != spec.input_dim {
                    return Err(Error::config(
                        "model.input_dim",
                        format!(
                            "model expects {}, idx data provides {}",
                            spec.input_dim,
                            train.input_dim()
                        ),
                    ));
                }
                let mut stream = RngStream::new(seed, SERVER, 0, Purpose::Partition);
                let mut fd = match partition {
                    PartitionConfig::Iid => {
                        data::partition_iid(&train, *clients, *split_ratio, &mut stream)?
                    }
                    PartitionConfig::ByClasses { m } => {
                        data::partition_by_classes(&train, *clients, *m, *split_ratio, &mut stream)?
                    }
                };
                if let Some(c) = classes {
                    if fd.class_count > *c {
                        return Err(Error::config(
                            "dataset.classes",
                            format!("declared {c} classes but labels reach {}", fd.class_count),
                        ));
                    }
                    fd.class_count = *c;
                }
                if let (Some(ti), Some(tl)) = (test_images, test_labels) {
                    let mut test = data::load_idx(
                        resolve_path(ti, data_root).to_str().unwrap(),
                        resolve_path(tl, data_root).to_str().unwrap(),
                    )?;
                    if let Some(cap) = per_class_cap {
                        let mut s = RngStream::new(seed, SERVER, 1, Purpose::Subset);
                        test = data::cap_per_class(&test, *cap, &mut s);
                    }
                    fd = fd.with_global_test(test);
                }
                Ok(fd)
            }
            DatasetConfig::SyntheticClassification {
                alpha,
                beta,
                clients,
                samples_per_client,
                input_dim,
                classes,
                split_ratio,
            } => data::gen_synthetic(
                *alpha,
                *beta,
                *clients,
                (samples_per_client[0], samples_per_client[1]),
                *input_dim,
                *classes,
                *split_ratio,
                seed,
            ),
            DatasetConfig::SyntheticRegression {
                clients,
                samples_per_client,
                input_dim,
                noise_sd,
                split_ratio,
            } => data::gen_synthetic_regression(
                *clients,
                *samples_per_client,
                *input_dim,
                *noise_sd,
                *split_ratio,
                seed,
            ),
        }
    }

    /// Validate, build, and run one seed end to end.
    pub fn run_seed(
        &self,
        seed: u64,
        data_root: Option<&Path>,
        options: SimOptions,
    ) -> Result<Vec<RoundMetrics>> {
        self.validate(data_root)?;
        let dataset = self.build_dataset(seed, data_root)?;
        Ok(crate::fedcore::run_rounds(
            dataset,
            self.model.to_spec(),
            self.hyper.to_hyper_params(),
            self.participation_specs(),
            seed,
            self.run.eval_every,
            options,
        ))
    }
}

pub fn resolve_path(path: &str, data_root: Option<&Path>) -> PathBuf {
    let p = Path::new(path);
    match data_root {
        Some(root) if p.is_relative() => root.join(p),
        _ => p.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::SyntheticClassification {
                alpha: 0.5,
                beta: 0.5,
                clients: 4,
                samples_per_client: [20, 30],
                input_dim: 6,
                classes: 3,
                split_ratio: 0.8,
            },
            model: ModelConfig::SoftmaxRegression {
                input_dim: 6,
                classes: 3,
                l2: 0.0,
            },
            hyper: HyperConfig {
                rounds: 3,
                local_steps: 2,
                batch_size: 8,
                lambda: 0.01,
                lr: LrConfig::Constant { eta0: 0.1 },
                theta: None,
                q_up: None,
                q_down: None,
                algorithm: AlgorithmConfig::Efl,
                aggregation: AggregationConfig::Static,
                fisher_samples: None,
            },
            participation: ParticipationConfig::default(),
            run: RunConfig {
                seeds: vec![1],
                output_dir: "runs/test".into(),
                eval_every: 1,
            },
        }
    }

    #[test]
    fn minimal_config_validates_and_runs() {
        let cfg = minimal_config();
        cfg.validate(None).unwrap();
        let metrics = cfg.run_seed(1, None, SimOptions::default()).unwrap();
        assert_eq!(metrics.len(), 3);
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let mut cfg = minimal_config();
        cfg.hyper.lambda = -1.0;
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("hyper.lambda"), "{msg}");
    }

    #[test]
    fn all_violations_reported_at_once() {
        let mut cfg = minimal_config();
        cfg.hyper.lambda = -1.0;
        cfg.hyper.batch_size = 0;
        cfg.run.seeds.clear();
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("hyper.lambda"));
        assert!(msg.contains("hyper.batch_size"));
        assert!(msg.contains("run.seeds"));
    }

    #[test]
    fn m_exceeding_classes_fails_before_loading() {
        let cfg = ExperimentConfig {
            dataset: DatasetConfig::Idx {
                train_images: "/nonexistent/img.idx".into(),
                train_labels: "/nonexistent/lab.idx".into(),
                test_images: None,
                test_labels: None,
                clients: 10,
                partition: PartitionConfig::ByClasses { m: 15 },
                per_class_cap: None,
                split_ratio: 0.8,
                classes: Some(10),
            },
            ..minimal_config()
        };
        let cfg = ExperimentConfig {
            model: ModelConfig::SoftmaxRegression {
                input_dim: 784,
                classes: 10,
                l2: 0.0,
            },
            ..cfg
        };
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("dataset.partition.m"), "{msg}");
    }

    #[test]
    fn participation_overrides_apply_in_order() {
        let mut cfg = minimal_config();
        cfg.participation.overrides = vec![
            ParticipationOverride {
                clients: vec![1, 2],
                entry: ParticipationEntry::Inactive { prob: 0.5 },
            },
            ParticipationOverride {
                clients: vec![2],
                entry: ParticipationEntry::Depart { at: 1 },
            },
        ];
        let specs = cfg.participation_specs();
        assert_eq!(specs[0], ParticipationSpec::AlwaysFull);
        assert_eq!(specs[1], ParticipationSpec::Inactive { prob: 0.5 });
        assert_eq!(specs[2], ParticipationSpec::Depart { at: 1 });
    }

    #[test]
    fn incomplete_range_validated_against_local_steps() {
        let mut cfg = minimal_config();
        cfg.participation.default = ParticipationEntry::Incomplete {
            inactive_prob: 0.0,
            min_steps: 1,
            max_steps: 99,
        };
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("participation.default"), "{msg}");
    }

    #[test]
    fn model_dataset_compatibility_checked() {
        let mut cfg = minimal_config();
        cfg.model = ModelConfig::LinearRegression {
            input_dim: 6,
            l2: 0.0,
        };
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("model.kind"), "{msg}");

        let mut cfg = minimal_config();
        cfg.model = ModelConfig::SoftmaxRegression {
            input_dim: 9,
            classes: 3,
            l2: 0.0,
        };
        let msg = cfg.validate(None).unwrap_err().to_string();
        assert!(msg.contains("model.input_dim"), "{msg}");
    }
}
