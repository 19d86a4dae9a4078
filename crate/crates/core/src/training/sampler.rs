use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Interleaves batches from several datasets.
///
/// Each batch comes from a single task chosen with probability proportional
/// to its weight. Within a task, items are drawn without replacement until the
/// epoch is exhausted; the final batch of an epoch may be short.
#[derive(Debug)]
pub struct MultitaskSampler {
    batch_size: usize,
    rng: ChaCha8Rng,
    choose: Option<WeightedIndex<f64>>,
    single: usize,
    streams: Vec<Stream>,
}

#[derive(Debug)]
struct Stream {
    order: Vec<usize>,
    cursor: usize,
}

impl MultitaskSampler {
    /// `tasks` holds `(dataset length, weight)` per task.
    pub fn new(tasks: &[(usize, f64)], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if tasks.is_empty() {
            return Err(Error::validation("sampler needs at least one task"));
        }
        for (i, &(len, w)) in tasks.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::validation(format!(
                    "task {i} has invalid weight {w}"
                )));
            }
            if w > 0.0 && len == 0 {
                return Err(Error::validation(format!(
                    "task {i} has positive weight but no data"
                )));
            }
        }
        let positive: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i].1 > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::validation("all task weights are zero"));
        }
        let choose = if positive.len() == 1 {
            None
        } else {
            Some(
                WeightedIndex::new(tasks.iter().map(|t| t.1))
                    .map_err(|e| Error::validation(e.to_string()))?,
            )
        };
        Ok(MultitaskSampler {
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            choose,
            single: positive[0],
            streams: tasks
                .iter()
                .map(|&(len, _)| Stream {
                    order: (0..len).collect(),
                    cursor: len,
                })
                .collect(),
        })
    }

    /// Next `(task index, item indices)`.
    pub fn next_batch(&mut self) -> (usize, Vec<usize>) {
        let task = match &self.choose {
            Some(d) => d.sample(&mut self.rng),
            None => self.single,
        };
        let s = &mut self.streams[task];
        if s.cursor >= s.order.len() {
            s.order.shuffle(&mut self.rng);
            s.cursor = 0;
        }
        let end = (s.cursor + self.batch_size).min(s.order.len());
        let batch = s.order[s.cursor..end].to_vec();
        s.cursor = end;
        (task, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_task_never_sampled() {
        let mut s = MultitaskSampler::new(&[(10, 1.0), (10, 0.0)], 3, 1).unwrap();
        for _ in 0..200 {
            assert_eq!(s.next_batch().0, 0);
        }
    }

    #[test]
    fn ratio_matches_weights() {
        let mut s = MultitaskSampler::new(&[(100, 1.0), (100, 0.1)], 4, 7).unwrap();
        let n = 11_000;
        let second = (0..n).filter(|_| s.next_batch().0 == 1).count();
        let frac = second as f64 / n as f64;
        assert!((frac - 1.0 / 11.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn deterministic_and_epoch_complete() {
        let run = |seed| {
            let mut s = MultitaskSampler::new(&[(7, 1.0)], 3, seed).unwrap();
            (0..6).map(|_| s.next_batch().1).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        let batches = run(5);
        let mut epoch: Vec<usize> = batches[..3].concat();
        assert_eq!(batches[2].len(), 1);
        epoch.sort();
        assert_eq!(epoch, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_inputs() {
        assert!(MultitaskSampler::new(&[(0, 1.0)], 2, 0).is_err());
        assert!(MultitaskSampler::new(&[(3, 0.0)], 2, 0).is_err());
        assert!(MultitaskSampler::new(&[(3, -1.0)], 2, 0).is_err());
        assert!(MultitaskSampler::new(&[(3, 1.0)], 0, 0).is_err());
        assert!(MultitaskSampler::new(&[(3, 1.0), (0, 0.0)], 2, 0).is_ok());
    }
}
