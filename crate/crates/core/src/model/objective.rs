use super::encoder::{backward, encode_ids, EncodeTrace, Tower};
use super::head::{head_logits, joint_features, sigmoid, softmax3};
use super::loss::{
    binary_kd_dq, binary_kd_unchecked, log_sum_exp, mse_distill_grad, mse_distill_loss, LOG_EPS,
};
use super::params::{ParamSet, RelevanceModel, TowerParams};
use super::tensor::dot;
use crate::error::{Error, Result};

/// A differentiable scalar function of a parameter set.
pub trait Objective<P: ParamSet> {
    /// Returns the loss and, when `grads` is given, adds its gradient into it.
    fn eval(&self, params: &P, grads: Option<&mut P>) -> Result<f64>;
}

pub fn loss<P: ParamSet, O: Objective<P> + ?Sized>(objective: &O, params: &P) -> Result<f64> {
    finite(objective.eval(params, None)?)
}

/// Loss and analytic gradient.
pub fn grad<P: ParamSet, O: Objective<P> + ?Sized>(objective: &O, params: &P) -> Result<(f64, P)> {
    let mut g = params.zeros_like();
    let l = finite(objective.eval(params, Some(&mut g))?)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((l, g))
}

fn finite(l: f64) -> Result<f64> {
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFinite(format!("loss evaluated to {l}")))
    }
}

/// Denominator floor of the relative error used by [`check_grad`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest component-wise relative error between the analytic gradient and
/// central finite differences `(f(x+h) − f(x−h)) / 2h`.
pub fn check_grad<P: ParamSet, O: Objective<P> + ?Sized>(
    objective: &O,
    params: &P,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::validation("finite-difference step must be positive"));
    }
    let (_, analytic) = grad(objective, params)?;
    let analytic: Vec<f64> = analytic
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter().copied())
        .collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].1.data.len();
        for i in 0..len {
            let orig = probe.tensors()[t].1.data[i];
            probe.tensors_mut()[t].data[i] = orig + h;
            let plus = loss(objective, &probe)?;
            probe.tensors_mut()[t].data[i] = orig - h;
            let minus = loss(objective, &probe)?;
            probe.tensors_mut()[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            k += 1;
        }
    }
    Ok(worst)
}

/// One query/product pair with a three-class target distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceExample {
    pub query: Vec<usize>,
    pub product: Vec<usize>,
    /// `(p_e, p_s, p_i)` target.
    pub target: [f64; 3],
}

/// Mean soft cross-entropy of the relevance head over a batch.
#[derive(Clone, Debug, Default)]
pub struct RelevanceObjective {
    pub examples: Vec<RelevanceExample>,
}

impl Objective<RelevanceModel> for RelevanceObjective {
    fn eval(&self, model: &RelevanceModel, mut grads: Option<&mut RelevanceModel>) -> Result<f64> {
        if self.examples.is_empty() {
            return Ok(0.0);
        }
        let inv = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        for ex in &self.examples {
            let tq = encode_ids(&model.towers, Tower::Query, &ex.query)?;
            let tp = encode_ids(&model.towers, Tower::Product, &ex.product)?;
            let p = softmax3(head_logits(model, &tq.output, &tp.output));
            total += super::loss::soft_ce_array(&ex.target, &p);
            if let Some(g) = grads.as_deref_mut() {
                // dL/dp, zero where the log clamp is active
                let gp: [f64; 3] = [0, 1, 2].map(|c| {
                    if p[c] > LOG_EPS {
                        -ex.target[c] / p[c]
                    } else {
                        0.0
                    }
                });
                let pg: f64 = (0..3).map(|c| p[c] * gp[c]).sum();
                let gz: Vec<f64> = (0..3).map(|c| p[c] * (gp[c] - pg) * inv).collect();
                head_backward(model, &tq, &tp, &gz, g);
            }
        }
        Ok(total * inv)
    }
}

fn head_backward(
    model: &RelevanceModel,
    tq: &EncodeTrace,
    tp: &EncodeTrace,
    gz: &[f64],
    g: &mut RelevanceModel,
) {
    let (eq, ep) = (&tq.output, &tp.output);
    let d = eq.len();
    let x = joint_features(eq, ep);
    g.head.add_outer(&x, gz);
    for (b, v) in g.head_bias.row_mut(0).iter_mut().zip(gz) {
        *b += v;
    }
    let gx = model.head.right_mul(gz);
    let mut g_eq = vec![0.0; d];
    let mut g_ep = vec![0.0; d];
    for i in 0..d {
        let sign = sign(eq[i] - ep[i]);
        g_eq[i] = gx[i] + gx[2 * d + i] * ep[i] + gx[3 * d + i] * sign;
        g_ep[i] = gx[d + i] + gx[2 * d + i] * eq[i] - gx[3 * d + i] * sign;
    }
    backward(&model.towers, tq, &g_eq, &mut g.towers);
    backward(&model.towers, tp, &g_ep, &mut g.towers);
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Translation-alignment surrogate: mean `1 − cos` between query-tower
/// encodings of a text and its translation.
#[derive(Clone, Debug, Default)]
pub struct AlignmentObjective {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

impl Objective<TowerParams> for AlignmentObjective {
    fn eval(&self, params: &TowerParams, mut grads: Option<&mut TowerParams>) -> Result<f64> {
        if self.pairs.is_empty() {
            return Ok(0.0);
        }
        let inv = 1.0 / self.pairs.len() as f64;
        let mut total = 0.0;
        for (src, tgt) in &self.pairs {
            let ts = encode_ids(params, Tower::Query, src)?;
            let tt = encode_ids(params, Tower::Query, tgt)?;
            total += 1.0 - dot(&ts.output, &tt.output);
            if let Some(g) = grads.as_deref_mut() {
                let gs: Vec<f64> = tt.output.iter().map(|v| -v * inv).collect();
                let gt: Vec<f64> = ts.output.iter().map(|v| -v * inv).collect();
                backward(params, &ts, &gs, g);
                backward(params, &tt, &gt, g);
            }
        }
        Ok(total * inv)
    }
}

impl Objective<RelevanceModel> for AlignmentObjective {
    fn eval(&self, model: &RelevanceModel, grads: Option<&mut RelevanceModel>) -> Result<f64> {
        self.eval(&model.towers, grads.map(|g| &mut g.towers))
    }
}

/// A pseudo-pair with its teacher conversion estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct CvrExample {
    pub query: Vec<usize>,
    pub product: Vec<usize>,
    pub cvr: f64,
}

/// Embedding distillation against teacher CVR: CVR-weighted InfoNCE with
/// in-batch negatives plus a squared error on the calibrated score, averaged
/// over the batch.
#[derive(Clone, Debug)]
pub struct EbrDistillObjective {
    pub examples: Vec<CvrExample>,
    /// Negatives per positive, taken from the following examples in the batch.
    pub negatives: usize,
    pub scale: f64,
    pub raw_inner_product: bool,
}

impl Objective<TowerParams> for EbrDistillObjective {
    fn eval(&self, params: &TowerParams, grads: Option<&mut TowerParams>) -> Result<f64> {
        let b = self.examples.len();
        if b == 0 {
            return Ok(0.0);
        }
        let k = self.negatives.min(b - 1);
        let inv = 1.0 / b as f64;
        let tq: Vec<EncodeTrace> = self
            .examples
            .iter()
            .map(|ex| encode_ids(params, Tower::Query, &ex.query))
            .collect::<Result<_>>()?;
        let tp: Vec<EncodeTrace> = self
            .examples
            .iter()
            .map(|ex| encode_ids(params, Tower::Product, &ex.product))
            .collect::<Result<_>>()?;
        let dim = params.d_out();
        let mut gq = vec![vec![0.0; dim]; b];
        let mut gp = vec![vec![0.0; dim]; b];
        let mut total = 0.0;
        for (i, ex) in self.examples.iter().enumerate() {
            let eq = &tq[i].output;
            let pos = dot(eq, &tp[i].output);
            let neg_idx: Vec<usize> = (1..=k).map(|o| (i + o) % b).collect();
            let negs: Vec<f64> = neg_idx.iter().map(|&j| dot(eq, &tp[j].output)).collect();
            let mse = mse_distill_loss(pos, ex.cvr, self.scale, self.raw_inner_product);
            let mut d_pos = mse_distill_grad(pos, ex.cvr, self.scale, self.raw_inner_product);
            let mut d_negs = vec![0.0; k];
            let mut con = 0.0;
            if k > 0 && ex.cvr != 0.0 {
                let lse = log_sum_exp(pos, &negs);
                con = ex.cvr * (lse - pos);
                d_pos += ex.cvr * ((pos - lse).exp() - 1.0);
                for (d, s) in d_negs.iter_mut().zip(&negs) {
                    *d = ex.cvr * (s - lse).exp();
                }
            }
            total += con + mse;
            if grads.is_some() {
                for c in 0..dim {
                    gq[i][c] += inv * d_pos * tp[i].output[c];
                    gp[i][c] += inv * d_pos * eq[c];
                }
                for (&j, d) in neg_idx.iter().zip(&d_negs) {
                    for c in 0..dim {
                        gq[i][c] += inv * d * tp[j].output[c];
                        gp[j][c] += inv * d * eq[c];
                    }
                }
            }
        }
        if let Some(g) = grads {
            for i in 0..b {
                backward(params, &tq[i], &gq[i], g);
                backward(params, &tp[i], &gp[i], g);
            }
        }
        Ok(total * inv)
    }
}

/// A pair with a teacher probability for one binary target.
#[derive(Clone, Debug, PartialEq)]
pub struct KdExample {
    pub query: Vec<usize>,
    pub product: Vec<usize>,
    pub target: f64,
}

/// Mean binary cross-entropy of `σ(s·cos)` against teacher probabilities.
#[derive(Clone, Debug)]
pub struct BinaryKdObjective {
    pub examples: Vec<KdExample>,
    pub scale: f64,
}

impl Objective<TowerParams> for BinaryKdObjective {
    fn eval(&self, params: &TowerParams, mut grads: Option<&mut TowerParams>) -> Result<f64> {
        if self.examples.is_empty() {
            return Ok(0.0);
        }
        let inv = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        for ex in &self.examples {
            let tq = encode_ids(params, Tower::Query, &ex.query)?;
            let tp = encode_ids(params, Tower::Product, &ex.product)?;
            let c = dot(&tq.output, &tp.output);
            let q = sigmoid(self.scale * c);
            total += binary_kd_unchecked(ex.target, q);
            if let Some(g) = grads.as_deref_mut() {
                let dc = inv * binary_kd_dq(ex.target, q) * self.scale * q * (1.0 - q);
                if dc != 0.0 {
                    let g_eq: Vec<f64> = tp.output.iter().map(|v| dc * v).collect();
                    let g_ep: Vec<f64> = tq.output.iter().map(|v| dc * v).collect();
                    backward(params, &tq, &g_eq, g);
                    backward(params, &tp, &g_ep, g);
                }
            }
        }
        Ok(total * inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::model::tensor::Matrix;

    struct Quadratic;

    impl Objective<Matrix> for Quadratic {
        fn eval(&self, x: &Matrix, grads: Option<&mut Matrix>) -> Result<f64> {
            if let Some(g) = grads {
                for (gi, xi) in g.data.iter_mut().zip(&x.data) {
                    *gi += 2.0 * xi;
                }
            }
            Ok(x.data.iter().map(|v| v * v).sum())
        }
    }

    struct Constant;

    impl Objective<Matrix> for Constant {
        fn eval(&self, _: &Matrix, _: Option<&mut Matrix>) -> Result<f64> {
            Ok(3.5)
        }
    }

    struct Nan;

    impl Objective<Matrix> for Nan {
        fn eval(&self, _: &Matrix, _: Option<&mut Matrix>) -> Result<f64> {
            Ok(f64::NAN)
        }
    }

    #[test]
    fn quadratic_gradient() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        let (l, g) = grad(&Quadratic, &x).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g.data, vec![2.0, 4.0]);
        assert!(check_grad(&Quadratic, &x, 1e-5).unwrap() <= 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]);
        let (_, g) = grad(&Constant, &x).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
        assert_eq!(check_grad(&Constant, &x, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let x = Matrix::zeros(1, 1);
        assert!(matches!(grad(&Nan, &x), Err(Error::NonFinite(_))));
        assert!(matches!(
            check_grad(&Quadratic, &x, 0.0),
            Err(Error::Validation(_))
        ));
    }

    fn tiny() -> RelevanceModel {
        let cfg = ModelConfig {
            vocab_size: 32,
            d_emb: 5,
            d_out: 4,
            init_std: 0.7,
        };
        let mut m = RelevanceModel::init(&cfg, 11).unwrap();
        for (i, v) in m.head.data.iter_mut().enumerate() {
            *v += 0.3 * ((i as f64) * 0.37).sin();
        }
        m
    }

    #[test]
    fn relevance_gradient_matches_finite_differences() {
        let m = tiny();
        let obj = RelevanceObjective {
            examples: vec![
                RelevanceExample {
                    query: vec![1, 2, 2],
                    product: vec![3, 4],
                    target: [0.6, 0.3, 0.1],
                },
                RelevanceExample {
                    query: vec![5],
                    product: vec![6, 7, 1],
                    target: [0.0, 0.0, 1.0],
                },
            ],
        };
        assert!(check_grad(&obj, &m, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn alignment_gradient_and_identity() {
        let m = tiny();
        let obj = AlignmentObjective {
            pairs: vec![(vec![1, 2], vec![8, 9]), (vec![3], vec![3, 4, 4])],
        };
        assert!(check_grad(&obj, &m.towers, 1e-5).unwrap() < 1e-4);
        let same = AlignmentObjective {
            pairs: vec![(vec![1, 2], vec![1, 2])],
        };
        assert!(loss(&same, &m.towers).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ebr_gradient_both_variants() {
        let m = tiny();
        for raw in [false, true] {
            let obj = EbrDistillObjective {
                examples: vec![
                    CvrExample {
                        query: vec![1, 2],
                        product: vec![3],
                        cvr: 0.3,
                    },
                    CvrExample {
                        query: vec![4],
                        product: vec![5, 6],
                        cvr: 0.1,
                    },
                    CvrExample {
                        query: vec![7, 8],
                        product: vec![9, 10],
                        cvr: 0.0,
                    },
                ],
                negatives: 2,
                scale: 8.0,
                raw_inner_product: raw,
            };
            assert!(check_grad(&obj, &m.towers, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn kd_gradient() {
        let m = tiny();
        let obj = BinaryKdObjective {
            examples: vec![
                KdExample {
                    query: vec![1, 2],
                    product: vec![3],
                    target: 0.8,
                },
                KdExample {
                    query: vec![4],
                    product: vec![5, 6],
                    target: 0.05,
                },
            ],
            scale: 8.0,
        };
        assert!(check_grad(&obj, &m.towers, 1e-5).unwrap() < 1e-4);
    }
}
