use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::corpus::files;
use crate::error::{Error, Result};
use crate::retrieval::RetrieverTag;

pub const MANIFEST_VERSION: u32 = 1;

/// A pipeline step that writes artifacts into a run directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Index,
    TrainEbr { local: bool },
    Rqa(RetrieverTag),
    Label,
    Train,
    SelfDistill,
    DistillOnline,
    Ablation,
}

impl Stage {
    /// How to invoke the stage from the command line.
    pub fn command(self) -> String {
        match self {
            Stage::Gen => "gen".into(),
            Stage::Index => "index".into(),
            Stage::TrainEbr { local: false } => "train-ebr".into(),
            Stage::TrainEbr { local: true } => "train-ebr --local".into(),
            Stage::Rqa(tag) => format!("rqa --retriever {}", tag.as_str()),
            Stage::Label => "label".into(),
            Stage::Train => "train".into(),
            Stage::SelfDistill => "self-distill".into(),
            Stage::DistillOnline => "distill-online".into(),
            Stage::Ablation => "ablation".into(),
        }
    }

    fn manifest_name(self) -> String {
        match self {
            Stage::TrainEbr { local: true } => "train-ebr-local".into(),
            Stage::Rqa(tag) => format!("rqa-{}", tag.as_str()),
            other => other.command(),
        }
    }
}

/// Digest of one file, by path relative to the run root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to a stage's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Paths of every artifact inside one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_files(&self) -> Vec<PathBuf> {
        [
            files::WORLD,
            files::PRODUCTS,
            files::QUERIES,
            files::PAIRS,
            files::TRANSLATIONS,
            files::IMPRESSIONS,
        ]
        .iter()
        .map(|f| self.corpus_dir().join(f))
        .collect()
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn bm25(&self) -> PathBuf {
        self.root.join("index").join("bm25.json")
    }

    fn ebr_dir(&self, local: bool) -> PathBuf {
        self.root.join(if local { "ebr_local" } else { "ebr" })
    }

    pub fn ebr_checkpoint(&self, local: bool) -> PathBuf {
        self.ebr_dir(local).join("towers.ckpt")
    }

    pub fn ebr_metrics(&self, local: bool) -> PathBuf {
        self.ebr_dir(local).join("metrics.json")
    }

    pub fn rqa(&self, tag: RetrieverTag) -> PathBuf {
        self.root
            .join("rqa")
            .join(format!("{}.jsonl", tag.as_str()))
    }

    pub fn teacher_cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn soft_labels(&self) -> PathBuf {
        self.root.join("labels").join("soft_labels.jsonl")
    }

    /// Output directory of `train`.
    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join(format!("round_{round}"))
    }

    pub fn round_checkpoint(&self, round: usize) -> PathBuf {
        checkpoint_in(&self.round_dir(round))
    }

    /// Pointer to the best self-distillation round.
    pub fn best_round(&self) -> PathBuf {
        self.root.join("best_round.json")
    }

    pub fn em_checkpoint(&self) -> PathBuf {
        self.root.join("online").join("em.ckpt")
    }

    pub fn defect_checkpoint(&self) -> PathBuf {
        self.root.join("online").join("defect.ckpt")
    }

    pub fn online_metrics(&self) -> PathBuf {
        self.root.join("online").join("metrics.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root
            .join("manifests")
            .join(format!("{}.json", stage.manifest_name()))
    }

    fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn digest(&self, path: &Path) -> Result<ArtifactDigest> {
        let (sha256, bytes) = sha256_file(path)?;
        Ok(ArtifactDigest {
            path: self.relative(path),
            sha256,
            bytes,
        })
    }

    pub fn load_manifest(&self, stage: Stage) -> Result<RunManifest> {
        let path = self.manifest(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                producer: stage.command(),
            });
        }
        let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Checks that `path` exists and still matches the digest its producer recorded.
    pub fn require(&self, producer: Stage, path: &Path) -> Result<ArtifactDigest> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                producer: producer.command(),
            });
        }
        let manifest = self.load_manifest(producer)?;
        let digest = self.digest(path)?;
        match manifest.outputs.iter().find(|d| d.path == digest.path) {
            None => Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                producer: producer.command(),
            }),
            Some(d) if d.sha256 != digest.sha256 => Err(Error::validation(format!(
                "{} changed after `csrm {}` wrote it (recorded {}, found {}); rerun that stage",
                path.display(),
                producer.command(),
                &d.sha256[..12],
                &digest.sha256[..12]
            ))),
            Some(_) => Ok(digest),
        }
    }

    pub fn require_all(&self, producer: Stage, paths: &[PathBuf]) -> Result<Vec<ArtifactDigest>> {
        paths.iter().map(|p| self.require(producer, p)).collect()
    }

    pub fn write_manifest(
        &self,
        stage: Stage,
        config: &PipelineConfig,
        started_unix_ms: u128,
        inputs: Vec<ArtifactDigest>,
        outputs: &[PathBuf],
    ) -> Result<RunManifest> {
        let outputs = outputs
            .iter()
            .map(|p| self.digest(p))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            format_version: MANIFEST_VERSION,
            command: stage.command(),
            config_hash: config.hash(),
            seed: config.seed,
            tool_version: format!("csrm {}", env!("CARGO_PKG_VERSION")),
            started_unix_ms,
            finished_unix_ms: now_ms(),
            inputs,
            outputs,
        };
        let path = self.manifest(stage);
        write_json(&path, &manifest)?;
        Ok(manifest)
    }
}

/// Relevance checkpoint inside a `train` or round directory.
pub fn checkpoint_in(dir: &Path) -> PathBuf {
    dir.join("checkpoint.ckpt")
}

pub fn soft_labels_in(dir: &Path) -> PathBuf {
    dir.join("soft_labels.jsonl")
}

pub fn metrics_in(dir: &Path) -> PathBuf {
    dir.join("metrics.json")
}

/// Pretty JSON with a trailing newline; creates parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let raw = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, raw).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn require_reports_producer_and_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::new(tmp.path());
        let cfg = PipelineConfig::default();
        let err = run.require(Stage::Index, &run.bm25()).unwrap_err();
        match err {
            Error::MissingArtifact { producer, .. } => assert_eq!(producer, "index"),
            other => panic!("{other}"),
        }
        write_json(&run.bm25(), &"index").unwrap();
        assert!(matches!(
            run.require(Stage::Index, &run.bm25()),
            Err(Error::MissingArtifact { .. })
        ));
        run.write_manifest(Stage::Index, &cfg, now_ms(), Vec::new(), &[run.bm25()])
            .unwrap();
        let d = run.require(Stage::Index, &run.bm25()).unwrap();
        assert_eq!(d.path, "index/bm25.json");
        std::fs::write(run.bm25(), "tampered").unwrap();
        let err = run.require(Stage::Index, &run.bm25()).unwrap_err();
        assert!(
            err.to_string().contains("changed after `csrm index`"),
            "{err}"
        );
    }

    #[test]
    fn stage_commands() {
        assert_eq!(
            Stage::TrainEbr { local: true }.command(),
            "train-ebr --local"
        );
        assert_eq!(
            Stage::Rqa(RetrieverTag::EbrLocal).command(),
            "rqa --retriever ebr_local"
        );
        assert_ne!(
            Stage::TrainEbr { local: true }.manifest_name(),
            Stage::TrainEbr { local: false }.manifest_name()
        );
    }
}
