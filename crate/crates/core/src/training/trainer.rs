use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamW;
use super::sampler::MultitaskSampler;
use crate::error::{Error, Result};
use crate::model::{grad, Objective, ParamSet};

/// One data stream of a training loop and how to turn a batch of its item
/// indices into an objective.
pub struct Task<'a, P> {
    pub name: &'static str,
    pub len: usize,
    pub weight: f64,
    #[allow(clippy::type_complexity)]
    pub build: Box<dyn Fn(&[usize]) -> Box<dyn Objective<P> + 'a> + 'a>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub task: String,
    pub loss: f64,
}

/// Result of a training run: the best-dev parameters (rounded to `f32`) and
/// the curves that led to them.
#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    pub best: P,
    pub best_metric: f64,
    pub best_step: usize,
    pub evals: Vec<EvalPoint>,
    pub losses: Vec<LossPoint>,
}

impl<P> TrainOutcome<P> {
    /// Mean loss of `task` over the given step range.
    pub fn mean_loss(&self, task: &str, steps: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .losses
            .iter()
            .filter(|l| l.task == task && steps.contains(&l.step))
            .map(|l| l.loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// AdamW over interleaved task batches with best-dev selection.
///
/// The dev metric is evaluated on `f32`-rounded parameters at step 0, every
/// `eval_every` steps and after the last step; a later evaluation replaces the
/// best only if strictly better.
pub fn train_loop<P: ParamSet>(
    init: P,
    tasks: &[Task<'_, P>],
    evaluate: &dyn Fn(&P) -> Result<f64>,
    config: &TrainConfig,
) -> Result<TrainOutcome<P>> {
    config.validate()?;
    let spec: Vec<(usize, f64)> = tasks.iter().map(|t| (t.len, t.weight)).collect();
    let mut sampler = MultitaskSampler::new(&spec, config.batch_size, config.seed)?;
    let mut params = init;
    let mut opt = AdamW::new(&params, config);
    let mut outcome = TrainOutcome {
        best: params.clone(),
        best_metric: f64::NEG_INFINITY,
        best_step: 0,
        evals: Vec::new(),
        losses: Vec::new(),
    };
    let checkpoint = |params: &P, step: usize, outcome: &mut TrainOutcome<P>| -> Result<()> {
        let mut rounded = params.clone();
        rounded.round_to_f32();
        let metric = evaluate(&rounded)?;
        if !metric.is_finite() {
            return Err(Error::NonFinite(format!("dev metric at step {step}")));
        }
        outcome.evals.push(EvalPoint { step, metric });
        if metric > outcome.best_metric {
            outcome.best_metric = metric;
            outcome.best_step = step;
            outcome.best = rounded;
        }
        Ok(())
    };
    checkpoint(&params, 0, &mut outcome)?;
    for step in 1..=config.max_steps {
        let (task, batch) = sampler.next_batch();
        let objective = (tasks[task].build)(&batch);
        let (loss, g) = grad(objective.as_ref(), &params)?;
        opt.step(&mut params, &g, config.lr_at(step - 1));
        outcome.losses.push(LossPoint {
            step,
            task: tasks[task].name.to_string(),
            loss,
        });
        if step % config.eval_every == 0 || step == config.max_steps {
            checkpoint(&params, step, &mut outcome)?;
        }
    }
    if !outcome.best.is_finite() {
        return Err(Error::NonFinite("trained parameters".into()));
    }
    Ok(outcome)
}
