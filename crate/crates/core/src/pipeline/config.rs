use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::confidence::ConfidenceMode;
use crate::datasets::{
    generate_toy_with, load_benchmark_partition, ImageShape, LabeledSet, Partition, SplitSpec,
    ToyParams,
};
use crate::error::{Error, Result};
use crate::mixmatch::MixMatchConfig;
use crate::models::ClassifierSpec;
use crate::rng::derive_seed;
use crate::supervised::TrainConfig;
use crate::vae_augment::VaeTrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetConfig {
    pub num_classes: usize,
    /// Images per class in the pool that is split into D_L / D_V / D_REF.
    pub per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub hue_jitter: f64,
    pub distractor_prob: f64,
    /// Images per class in the separately generated test set.
    pub test_per_class: usize,
    /// Class count and size of the auxiliary set used to pretrain the encoder.
    pub aux_num_classes: usize,
    pub aux_per_class: usize,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        let p = ToyParams::new(4, 125, 16);
        ToyDatasetConfig {
            num_classes: p.num_classes,
            per_class: p.per_class,
            image_size: p.image_size,
            noise_std: p.noise_std,
            hue_jitter: p.hue_jitter,
            distractor_prob: p.distractor_prob,
            test_per_class: 100,
            aux_num_classes: 8,
            aux_per_class: 40,
        }
    }
}

impl ToyDatasetConfig {
    fn params(&self, num_classes: usize, per_class: usize) -> ToyParams {
        ToyParams {
            num_classes,
            per_class,
            image_size: self.image_size,
            noise_std: self.noise_std,
            hue_jitter: self.hue_jitter,
            distractor_prob: self.distractor_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSource {
    /// `stl10`, `cifar10` or `cifar100`.
    pub name: String,
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDatasetConfig {
    pub name: String,
    pub root: PathBuf,
    /// Auxiliary dataset for encoder pretraining; pretraining is skipped without one.
    #[serde(default)]
    pub aux: Option<BenchmarkSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Toy(ToyDatasetConfig),
    Benchmark(BenchmarkDatasetConfig),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Toy(ToyDatasetConfig::default())
    }
}

/// What the SSL stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Labeled D_L ∪ D_Rec, unlabeled D_Synth.
    #[default]
    Generated,
    /// Labeled D_L, unlabeled raw D_REF.
    RawRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            enabled: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Independent repetitions; seed `i` runs with `seed + i`.
    pub num_seeds: usize,
    pub dataset: DatasetConfig,
    /// `toy`, `wrn-D-W` or `wrn-50`.
    pub backbone: String,
    /// Overrides the backbone's first-stage channel count.
    pub base_channels: Option<usize>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub vae: VaeTrainConfig,
    pub mixmatch: MixMatchConfig,
    pub confidence_mode: ConfidenceMode,
    /// Number of synthetic samples drawn from the VAE prior.
    pub k_synth: usize,
    pub num_iterations: usize,
    pub ablation_mode: AblationMode,
    pub run_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            num_seeds: 1,
            dataset: DatasetConfig::default(),
            backbone: "toy".into(),
            base_channels: None,
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            vae: VaeTrainConfig::default(),
            mixmatch: MixMatchConfig::default(),
            confidence_mode: ConfidenceMode::default(),
            k_synth: 5000,
            num_iterations: 2,
            ablation_mode: AblationMode::default(),
            run_dir: None,
        }
    }
}

/// The bundled desk-scale configuration (`configs/toy.json`).
pub const TOY_CONFIG: &str = include_str!("../../configs/toy.json");

/// Full-scale setups: WideResNet-50 on STL-10 and CIFAR-100, encoder
/// pretrained on CIFAR-10. Data roots are relative and usually overridden.
pub const BUNDLED_CONFIGS: [(&str, &str); 3] = [
    ("toy", TOY_CONFIG),
    ("stl10", include_str!("../../configs/stl10.json")),
    ("cifar100", include_str!("../../configs/cifar100.json")),
];

impl PipelineConfig {
    /// A bundled config by name (`toy`, `stl10`, `cifar100`).
    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED_CONFIGS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled config parses"))
    }

    pub fn toy() -> Self {
        Self::from_json(TOY_CONFIG).expect("bundled toy config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "config file not found".into(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.num_iterations < 1 {
            return bad("num_iterations must be at least 1".into());
        }
        if self.num_seeds < 1 {
            return bad("num_seeds must be at least 1".into());
        }
        self.split
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.train.validate()?;
        self.pretrain.train.validate()?;
        self.vae.validate()?;
        self.mixmatch.validate()?;
        self.classifier_spec()?;
        Ok(())
    }

    /// Apply a `dotted.key=value` override. The value is parsed as JSON when
    /// possible and taken as a string otherwise; keys must already exist.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        let cfg: PipelineConfig = serde_json::from_value(doc)
            .map_err(|e| Error::InvalidConfig(format!("override `{assignment}`: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Toy(t) => t.num_classes,
            DatasetConfig::Benchmark(b) => match b.name.as_str() {
                "cifar100" | "cifar-100" => 100,
                _ => 10,
            },
        }
    }

    pub fn image_shape(&self) -> ImageShape {
        match &self.dataset {
            DatasetConfig::Toy(t) => ImageShape::new(t.image_size, t.image_size, 3),
            DatasetConfig::Benchmark(b) => match b.name.as_str() {
                "cifar100" | "cifar-100" | "cifar10" | "cifar-10" => ImageShape::new(32, 32, 3),
                _ => ImageShape::new(96, 96, 3),
            },
        }
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec> {
        let mut spec = ClassifierSpec::named(&self.backbone, self.num_classes(), self.image_shape())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let Some(c) = self.base_channels {
            spec.base_channels = c;
        }
        spec.validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(spec)
    }

    /// The pool that gets split into D_L / D_V / D_REF.
    pub fn load_train_pool(&self, seed: u64) -> Result<LabeledSet> {
        match &self.dataset {
            DatasetConfig::Toy(t) => generate_toy_with(
                &t.params(t.num_classes, t.per_class),
                derive_seed(seed, "toy.pool"),
            ),
            DatasetConfig::Benchmark(b) => load_benchmark_partition(&b.name, &b.root, Partition::Train),
        }
    }

    pub fn load_test(&self, seed: u64) -> Result<LabeledSet> {
        match &self.dataset {
            DatasetConfig::Toy(t) => generate_toy_with(
                &t.params(t.num_classes, t.test_per_class),
                derive_seed(seed, "toy.test"),
            ),
            DatasetConfig::Benchmark(b) => load_benchmark_partition(&b.name, &b.root, Partition::Test),
        }
    }

    /// Auxiliary data for encoder pretraining, if any, resized to the
    /// classifier's input size.
    pub fn load_aux(&self, seed: u64) -> Result<Option<LabeledSet>> {
        match &self.dataset {
            DatasetConfig::Toy(t) => Ok(Some(generate_toy_with(
                &t.params(t.aux_num_classes, t.aux_per_class),
                derive_seed(seed, "toy.aux"),
            )?)),
            DatasetConfig::Benchmark(b) => match &b.aux {
                Some(src) => {
                    let aux = load_benchmark_partition(&src.name, &src.root, Partition::Train)?;
                    let shape = self.image_shape();
                    let samples = aux
                        .samples()
                        .iter()
                        .map(|s| s.resized(shape.height, shape.width))
                        .collect();
                    Ok(Some(LabeledSet::new(samples, aux.labels().to_vec(), aux.num_classes())?))
                }
                None => Ok(None),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_round_trip_and_reject_unknown_keys() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_override("mixmatch.beta=50").unwrap();
        cfg.apply_override("dataset.per_class=30").unwrap();
        cfg.apply_override("ablation_mode=raw-ref").unwrap();
        assert_eq!(cfg.mixmatch.beta, 50.0);
        assert_eq!(cfg.ablation_mode, AblationMode::RawRef);
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.apply_override("mixmatch.nope=1").is_err());
        assert!(cfg.apply_override("num_iterations=0").is_err());
        assert!(cfg.apply_override("novalue").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"dataset": {"kind": "toy", "bogus": 1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"train": {"seed": 3}}"#).is_err());
    }

    #[test]
    fn bundled_full_scale_configs() {
        for name in ["stl10", "cifar100"] {
            let cfg = PipelineConfig::bundled(name).unwrap();
            let spec = cfg.classifier_spec().unwrap();
            assert_eq!(spec.block, crate::models::BlockKind::Bottleneck);
            assert_eq!(cfg.mixmatch.beta, 100.0);
            assert_eq!(cfg.k_synth, 5000);
            let DatasetConfig::Benchmark(b) = &cfg.dataset else { panic!("{name}") };
            assert_eq!(b.aux.as_ref().unwrap().name, "cifar10");
        }
        let c = PipelineConfig::bundled("cifar100").unwrap();
        assert_eq!((c.num_classes(), c.image_shape().height), (100, 32));
        let s = PipelineConfig::bundled("stl10").unwrap();
        assert_eq!((s.num_classes(), s.image_shape().height), (10, 96));
        assert!(PipelineConfig::bundled("imagenet").is_none());
    }

    #[test]
    fn bundled_toy_config_is_valid() {
        let cfg = PipelineConfig::toy();
        assert_eq!(cfg.num_classes(), 4);
        assert_eq!(cfg.image_shape(), ImageShape::new(16, 16, 3));
    }
}
