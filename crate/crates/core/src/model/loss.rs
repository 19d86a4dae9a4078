use super::head::{calibrate, sigmoid};
use crate::corpus::{RelevanceLabel, SoftLabel};
use crate::error::{Error, Result};

/// Lower clamp applied to every probability before taking its log.
pub const LOG_EPS: f64 = 1e-7;

/// Default weight of the hard-label term in [`blended_loss`].
pub const DEFAULT_ALPHA: f64 = 0.5;

/// `−Σ t_c ln(max(p_c, ε))`.
pub fn soft_ce(target: &SoftLabel, pred: &SoftLabel) -> Result<f64> {
    target.validate(1e-6)?;
    Ok(soft_ce_array(&target.to_array(), &pred.to_array()))
}

pub(crate) fn soft_ce_array(target: &[f64; 3], pred: &[f64; 3]) -> f64 {
    -target
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            if *t == 0.0 {
                0.0
            } else {
                t * p.clamp(LOG_EPS, 1.0).ln()
            }
        })
        .sum::<f64>()
}

/// `α·CE(one_hot(hard), pred) + (1−α)·CE(soft, pred)`.
pub fn blended_loss(
    hard: RelevanceLabel,
    soft: &SoftLabel,
    pred: &SoftLabel,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let h = soft_ce(&hard.one_hot(), pred)?;
    let s = soft_ce(soft, pred)?;
    Ok(alpha * h + (1.0 - alpha) * s)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Cross-entropy target equivalent to the blended loss: CE is linear in the target.
pub fn blended_target(hard: RelevanceLabel, soft: Option<&SoftLabel>, alpha: f64) -> [f64; 3] {
    let h = hard.one_hot().to_array();
    match soft {
        None => h,
        Some(s) => {
            let s = s.to_array();
            [0, 1, 2].map(|c| alpha * h[c] + (1.0 - alpha) * s[c])
        }
    }
}

/// Binary cross-entropy of a student probability against a teacher probability.
pub fn binary_kd_loss(teacher_p: f64, student_p: f64) -> Result<f64> {
    for (name, p) in [("teacher", teacher_p), ("student", student_p)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation(format!(
                "{name} probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(binary_kd_unchecked(teacher_p, student_p))
}

pub(crate) fn binary_kd_unchecked(p: f64, q: f64) -> f64 {
    let q = q.clamp(LOG_EPS, 1.0 - LOG_EPS);
    -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
}

/// Derivative of [`binary_kd_unchecked`] with respect to the student probability.
pub(crate) fn binary_kd_dq(p: f64, q: f64) -> f64 {
    if !(LOG_EPS..=1.0 - LOG_EPS).contains(&q) {
        return 0.0;
    }
    -p / q + (1.0 - p) / (1.0 - q)
}

/// CVR-weighted InfoNCE over one query: `−cvr · ln softmax(pos | pos, negs)`.
///
/// Arguments are inner products of the query with the positive and with each negative.
pub fn contrastive_distill_loss(positive: f64, negatives: &[f64], cvr: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::validation(
            "contrastive loss needs at least one negative",
        ));
    }
    if cvr == 0.0 {
        return Ok(0.0);
    }
    Ok(cvr * (log_sum_exp(positive, negatives) - positive))
}

pub(crate) fn log_sum_exp(positive: f64, negatives: &[f64]) -> f64 {
    let m = negatives.iter().cloned().fold(positive, f64::max);
    let s = (positive - m).exp() + negatives.iter().map(|v| (v - m).exp()).sum::<f64>();
    m + s.ln()
}

/// `(cvr − σ(s·c))²`, or `(cvr − c)²` when `raw_inner_product` is set.
pub fn mse_distill_loss(inner: f64, cvr: f64, scale: f64, raw_inner_product: bool) -> f64 {
    let pred = if raw_inner_product {
        inner
    } else {
        calibrate(inner, scale)
    };
    (cvr - pred).powi(2)
}

/// Derivative of [`mse_distill_loss`] with respect to the inner product.
pub(crate) fn mse_distill_grad(inner: f64, cvr: f64, scale: f64, raw_inner_product: bool) -> f64 {
    if raw_inner_product {
        2.0 * (inner - cvr)
    } else {
        let q = sigmoid(scale * inner);
        2.0 * (q - cvr) * scale * q * (1.0 - q)
    }
}
