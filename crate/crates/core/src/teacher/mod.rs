//! Teachers: scorers that emit three-class soft labels and conversion
//! estimates for query/product pairs, plus a persistent label cache.

mod cache;
mod remote;

use sha2::{Digest, Sha256};

use crate::corpus::{true_label, Product, Query, RelevanceLabel, SoftLabel};
use crate::error::{Error, Result};
use crate::model::{
    calibrate, encode, fnv1a64, predict_relevance, softmax3, Checkpoint, RelevanceModel, Tower,
    DEFAULT_SCALE,
};
use crate::retrieval::RqaFeature;

pub use cache::{batch_cvr, batch_label, CacheEntry, LabelCache, DEFAULT_MAX_IN_FLIGHT};
pub use remote::{PromptTemplate, RemoteTeacher, RemoteTeacherConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub soft_label: bool,
    pub cvr: bool,
}

/// One pair to be scored.
#[derive(Clone, Copy, Debug)]
pub struct PairRequest<'a> {
    pub query: &'a Query,
    pub rqa: Option<&'a RqaFeature>,
    pub product: &'a Product,
}

impl PairRequest<'_> {
    pub fn pair_id(&self) -> String {
        crate::corpus::pair_id(&self.query.id, &self.product.id)
    }
}

pub trait TeacherScorer: Send + Sync {
    /// Stable name used to key cached labels.
    fn identity(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn soft_label(&self, req: &PairRequest<'_>) -> Result<SoftLabel>;

    /// Estimated conversion likelihood in `[0, 1]`.
    fn cvr(&self, req: &PairRequest<'_>) -> Result<f64> {
        Err(Error::Capability(format!(
            "teacher {} cannot estimate cvr for {}",
            self.identity(),
            req.pair_id()
        )))
    }
}

/// Conversion base rate per true label.
pub fn cvr_base_rate(label: RelevanceLabel) -> f64 {
    match label {
        RelevanceLabel::Exact => 0.30,
        RelevanceLabel::Substitute => 0.10,
        RelevanceLabel::Irrelevant => 0.01,
    }
}

/// Ground-truth teacher built from the world's labeling rule.
///
/// Soft labels are a tempered softmax over ordinal affinities: 1 for the true
/// class, 0.4 for classes one grade away, 0 otherwise.
#[derive(Clone, Debug)]
pub struct OracleTeacher {
    temperature: f64,
    seed: u64,
}

pub fn oracle_teacher(temperature: f64, seed: u64) -> Result<OracleTeacher> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::validation(format!(
            "temperature {temperature} must be positive"
        )));
    }
    Ok(OracleTeacher { temperature, seed })
}

impl OracleTeacher {
    pub fn affinities(label: RelevanceLabel) -> [f64; 3] {
        let t = label.code() as i32;
        [
            RelevanceLabel::Exact,
            RelevanceLabel::Substitute,
            RelevanceLabel::Irrelevant,
        ]
        .map(|c| match (c.code() as i32 - t).abs() {
            0 => 1.0,
            1 => 0.4,
            _ => 0.0,
        })
    }

    fn jitter(&self, req: &PairRequest<'_>) -> f64 {
        let key = format!("{}\u{0}{}\u{0}{}", self.seed, req.query.id, req.product.id);
        let u = (fnv1a64(key.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64;
        1.0 + 0.2 * (2.0 * u - 1.0)
    }
}

impl TeacherScorer for OracleTeacher {
    fn identity(&self) -> String {
        format!("oracle-t{}-s{}", self.temperature, self.seed)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            soft_label: true,
            cvr: true,
        }
    }

    fn soft_label(&self, req: &PairRequest<'_>) -> Result<SoftLabel> {
        let a = Self::affinities(true_label(req.query, req.product));
        let p = softmax3(a.map(|v| v / self.temperature));
        SoftLabel::new(p[0], p[1], p[2])
    }

    fn cvr(&self, req: &PairRequest<'_>) -> Result<f64> {
        let base = cvr_base_rate(true_label(req.query, req.product));
        Ok((base * self.jitter(req)).clamp(0.0, 1.0))
    }
}

/// Teacher wrapping a trained relevance checkpoint.
#[derive(Clone, Debug)]
pub struct ModelTeacher {
    model: RelevanceModel,
    identity: String,
    scale: f64,
}

pub fn model_teacher(checkpoint: &Checkpoint) -> Result<ModelTeacher> {
    let model = checkpoint.relevance()?.clone();
    model.validate()?;
    let digest = Sha256::digest(checkpoint.to_bytes()?);
    Ok(ModelTeacher {
        model,
        identity: format!("model-{}", &hex::encode(digest)[..16]),
        scale: DEFAULT_SCALE,
    })
}

impl ModelTeacher {
    pub fn model(&self) -> &RelevanceModel {
        &self.model
    }
}

impl TeacherScorer for ModelTeacher {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            soft_label: true,
            cvr: true,
        }
    }

    fn soft_label(&self, req: &PairRequest<'_>) -> Result<SoftLabel> {
        predict_relevance(
            &self.model,
            &req.query.text,
            req.rqa,
            &req.product.relevance_text(),
        )
    }

    fn cvr(&self, req: &PairRequest<'_>) -> Result<f64> {
        let eq = encode(&self.model.towers, Tower::Query, &req.query.text, req.rqa)?;
        let ep = encode(
            &self.model.towers,
            Tower::Product,
            &req.product.relevance_text(),
            None,
        )?;
        Ok(calibrate(eq.cosine(&ep), self.scale))
    }
}
