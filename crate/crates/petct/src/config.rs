//! JSON pipeline configuration.

use std::path::PathBuf;

use petct_core::nn::ModelSpec;
use petct_core::preprocess::PreprocessConfig;
use petct_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModelName {
    Segresnet,
    Resenc,
    DensenetCls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Profile {
    PaperSegresnet,
    PaperResenc,
    PaperClassifier,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum AllWord {
    #[serde(rename = "all")]
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum FoldRepr {
    Index(usize),
    Word(AllWord),
}

/// A single fold index or every fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "FoldRepr", into = "FoldRepr")]
pub enum FoldSelect {
    All,
    One(usize),
}

impl From<FoldRepr> for FoldSelect {
    fn from(r: FoldRepr) -> Self {
        match r {
            FoldRepr::Index(i) => FoldSelect::One(i),
            FoldRepr::Word(_) => FoldSelect::All,
        }
    }
}

impl From<FoldSelect> for FoldRepr {
    fn from(f: FoldSelect) -> Self {
        match f {
            FoldSelect::One(i) => FoldRepr::Index(i),
            FoldSelect::All => FoldRepr::Word(AllWord::All),
        }
    }
}

impl std::str::FromStr for FoldSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(FoldSelect::All);
        }
        s.parse()
            .map(FoldSelect::One)
            .map_err(|_| format!("fold must be an index or \"all\", got {s:?}"))
    }
}

/// Optional replacements for profile hyperparameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub iters_per_epoch: Option<usize>,
    pub val_iters_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<[usize; 3]>,
    pub lr: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.iters_per_epoch {
            cfg.iters_per_epoch = Some(v);
        }
        if let Some(v) = self.val_iters_per_epoch {
            cfg.val_iters_per_epoch = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr_initial = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Preprocessed cohort used for training.
    pub input_dir: PathBuf,
    /// Checkpoints, logs and fold assignments go here.
    pub work_dir: PathBuf,
    pub preprocess: PreprocessConfig,
    /// Segmenter architecture; the classifier is always `densenet_cls`.
    pub model: ModelName,
    pub profile: Profile,
    pub seed: u64,
    pub fold: FoldSelect,
    pub overlap: f64,
    /// When false, `wall_ms` is written as 0 so logs are reproducible.
    pub log_wall_time: bool,
    pub segmenter: TrainOverrides,
    pub classifier: TrainOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("data/preprocessed"),
            work_dir: PathBuf::from("work"),
            preprocess: PreprocessConfig::default(),
            model: ModelName::Resenc,
            profile: Profile::Desk,
            seed: 0,
            fold: FoldSelect::All,
            overlap: petct_core::eval::DEFAULT_OVERLAP,
            log_wall_time: true,
            segmenter: TrainOverrides::default(),
            classifier: TrainOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn segmenter_spec(&self) -> Result<ModelSpec, String> {
        let paper = self.profile != Profile::Desk;
        Ok(match (self.model, paper) {
            (ModelName::Segresnet, true) => ModelSpec::paper_segresnet(),
            (ModelName::Segresnet, false) => ModelSpec::desk_segresnet(),
            (ModelName::Resenc, true) => ModelSpec::paper_resenc(),
            (ModelName::Resenc, false) => ModelSpec::desk_resenc(),
            (ModelName::DensenetCls, _) => return Err("densenet_cls is not a segmenter".into()),
        })
    }

    pub fn classifier_spec(&self) -> ModelSpec {
        if self.profile == Profile::Desk {
            ModelSpec::desk_densenet()
        } else {
            ModelSpec::paper_densenet121()
        }
    }

    pub fn segmenter_train(&self) -> Result<TrainConfig, String> {
        let mut cfg = match self.profile {
            Profile::PaperSegresnet => TrainConfig::paper_segresnet(),
            Profile::PaperResenc => TrainConfig::paper_resenc(),
            Profile::Desk => TrainConfig::desk_segmenter(),
            Profile::PaperClassifier => return Err("paper_classifier has no segmenter profile".into()),
        };
        cfg.seed = self.seed;
        self.segmenter.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn classifier_train(&self) -> TrainConfig {
        let mut cfg = if self.profile == Profile::Desk {
            TrainConfig::desk_classifier()
        } else {
            TrainConfig::paper_classifier()
        };
        cfg.seed = self.seed;
        self.classifier.apply(&mut cfg);
        cfg
    }
}
