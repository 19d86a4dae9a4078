use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticWorldSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::retrieval::{RetrieverTag, DEFAULT_B, DEFAULT_K1, DEFAULT_RQA_K, DEFAULT_RQA_MAX_CHARS};
use crate::teacher::{RemoteTeacherConfig, DEFAULT_MAX_IN_FLIGHT};
use crate::training::{TrainConfig, DEFAULT_M, DEFAULT_N};

/// Query split fractions, applied per language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.7,
            dev: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: f64,
    pub b: f64,
    pub rqa_k: usize,
    pub rqa_max_chars: usize,
    /// BM25 hits per training query turned into pseudo pairs.
    pub pseudo_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            rqa_k: DEFAULT_RQA_K,
            rqa_max_chars: DEFAULT_RQA_MAX_CHARS,
            pseudo_k: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Oracle,
    Model,
    Remote,
}

/// The external teacher used by `label` and `train-ebr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    /// Softmax temperature of the oracle teacher.
    pub temperature: f64,
    /// Relevance checkpoint for `kind = "model"`.
    pub checkpoint: Option<PathBuf>,
    pub remote: RemoteTeacherConfig,
    pub prompt_template: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            kind: TeacherKind::Oracle,
            temperature: 1.0,
            checkpoint: None,
            remote: RemoteTeacherConfig::default(),
            prompt_template: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl TeacherConfig {
    /// Whether the selected teacher can estimate CVR.
    pub fn has_cvr(&self) -> bool {
        self.kind != TeacherKind::Remote
    }
}

/// Which data a `train` or `self-distill` run sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    /// Interleave translation-alignment batches (weight `train.mt_weight`).
    pub mt: bool,
    /// Append retrieved titles to queries.
    pub rqa: bool,
    /// Retriever whose features are used when `rqa` is on.
    pub rqa_retriever: RetrieverTag,
    /// Add the (noisy) target-market training pairs and select on target-market dev.
    pub target_market: bool,
    /// Train on teacher soft labels written by `label` (blended with hard labels).
    pub soft_labels: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            mt: true,
            rqa: true,
            rqa_retriever: RetrieverTag::Ebr,
            target_market: false,
            soft_labels: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineTeacher {
    /// Best round of the last `self-distill` run.
    BestRound,
    /// The `teacher` section.
    Configured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub m: usize,
    pub n: usize,
    pub teacher: OnlineTeacher,
    pub train: TrainConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            m: DEFAULT_M,
            n: DEFAULT_N,
            teacher: OnlineTeacher::BestRound,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    pub addr: String,
    pub defect_threshold: f64,
    pub cache_capacity: usize,
    pub score_path: String,
    pub refresh_path: String,
    pub health_path: String,
}

impl Default for ServingConfig {
    fn default() -> Self {
        ServingConfig {
            addr: "127.0.0.1:8080".into(),
            defect_threshold: 0.5,
            cache_capacity: 10_000,
            score_path: "/score".into(),
            refresh_path: "/refresh".into(),
            health_path: "/healthz".into(),
        }
    }
}

/// Everything a pipeline run needs. Loaded from one JSON file; only the seed
/// and the output directory can be overridden on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    /// Master seed; `resolved` copies it into every nested seed.
    pub seed: u64,
    pub world: SyntheticWorldSpec,
    pub splits: SplitConfig,
    pub retrieval: RetrievalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ebr_train: TrainConfig,
    pub online: OnlineConfig,
    pub teacher: TeacherConfig,
    pub stages: StageToggles,
    pub serving: ServingConfig,
    /// Parent of run directories; a run lives in `<runs_dir>/<name>`.
    pub runs_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            name: "desk".into(),
            seed: 42,
            world: SyntheticWorldSpec {
                n_queries: 960,
                ..SyntheticWorldSpec::default()
            },
            splits: SplitConfig::default(),
            retrieval: RetrievalConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                sd_rounds: 3,
                ..TrainConfig::default()
            },
            ebr_train: TrainConfig {
                max_steps: 1500,
                eval_every: 250,
                ..TrainConfig::default()
            },
            online: OnlineConfig::default(),
            teacher: TeacherConfig::default(),
            stages: StageToggles::default(),
            serving: ServingConfig::default(),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl PipelineConfig {
    /// Parses JSON; schema violations name the offending field path.
    pub fn from_json(raw: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(raw);
        serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Validation(format!(
                "{}: config field `{}`: {}",
                origin.display(),
                e.path(),
                e.inner()
            ))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw, path)
    }

    /// Copy with the master seed pushed into the world, split and training seeds.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.world.seed = c.seed;
        c.train.seed = c.seed;
        c.ebr_train.seed = c.seed.wrapping_add(1);
        c.online.train.seed = c.seed.wrapping_add(2);
        c
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(5)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        for (name, t) in [
            ("train", &self.train),
            ("ebr_train", &self.ebr_train),
            ("online.train", &self.online.train),
        ] {
            t.validate()
                .map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        }
        let s = &self.splits;
        if [s.train, s.dev, s.test].iter().any(|f| !(*f > 0.0))
            || ((s.train + s.dev + s.test) - 1.0).abs() > 1e-9
        {
            return Err(Error::validation(
                "splits: fractions must be positive and sum to 1",
            ));
        }
        let r = &self.retrieval;
        if r.rqa_k == 0 || r.pseudo_k == 0 || r.rqa_max_chars == 0 {
            return Err(Error::validation(
                "retrieval: rqa_k, pseudo_k and rqa_max_chars must be positive",
            ));
        }
        if !(r.k1 >= 0.0) || !(0.0..=1.0).contains(&r.b) {
            return Err(Error::validation(
                "retrieval: k1 must be >= 0 and b in [0, 1]",
            ));
        }
        if self.online.m + self.online.n == 0 {
            return Err(Error::validation("online: m + n must be at least 1"));
        }
        if !(self.teacher.temperature > 0.0) {
            return Err(Error::validation("teacher: temperature must be positive"));
        }
        if self.teacher.max_in_flight == 0 {
            return Err(Error::validation(
                "teacher: max_in_flight must be at least 1",
            ));
        }
        if self.teacher.kind == TeacherKind::Model && self.teacher.checkpoint.is_none() {
            return Err(Error::validation(
                "teacher: kind \"model\" needs a checkpoint path",
            ));
        }
        if !(0.0..=1.0).contains(&self.serving.defect_threshold) {
            return Err(Error::validation(
                "serving: defect_threshold must lie in [0, 1]",
            ));
        }
        if self.serving.cache_capacity == 0 {
            return Err(Error::validation(
                "serving: cache_capacity must be at least 1",
            ));
        }
        for p in [
            &self.serving.score_path,
            &self.serving.refresh_path,
            &self.serving.health_path,
        ] {
            if !p.starts_with('/') {
                return Err(Error::validation(format!(
                    "serving: path {p:?} must start with '/'"
                )));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::validation(
                "name must be a non-empty single path component",
            ));
        }
        Ok(())
    }

    pub fn serving_options(&self) -> crate::serving::ServingOptions {
        crate::serving::ServingOptions {
            defect_threshold: self.serving.defect_threshold,
            cache_capacity: self.serving.cache_capacity,
            scale: self.online.train.scale,
        }
    }

    /// `sha256` of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        crate::model::config_hash(
            &serde_json::to_value(self.resolved()).expect("config serializes"),
        )
    }
}
