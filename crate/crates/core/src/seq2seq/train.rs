use rand::seq::SliceRandom;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::model::{ModelShape, Seq2Seq};
use super::NmtConfig;
use crate::corpora::EncodedPair;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Graph, OptimizerState, ParamStore, Rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_perplexity: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    /// Mean token loss of every update, in order.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    pub stopped: StopReason,
}

/// Length-grouped batches: shuffle, cut into pools of `8 × batch_size`,
/// sort each pool by source length, then shuffle the batch order.
fn epoch_batches(data: &[EncodedPair], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 8) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| (data[i].source.len(), i));
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Trains from a fresh initialization and returns the best-dev checkpoint.
pub fn train_nmt(
    train: &[EncodedPair],
    dev: &[EncodedPair],
    config: &NmtConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Input(format!(
            "training needs non-empty splits (train {}, dev {})",
            train.len(),
            dev.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut params = ParamStore::<f32>::new();
    let model = Seq2Seq::init(&mut params, &mut rng, ModelShape::from(config))?;
    let mut opt = OptimizerState::<f32>::new(config.optimizer, config.learning_rate);

    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut bad_evals = 0;
    let mut log = TrainLog { losses: Vec::new(), evals: Vec::new(), stopped: StopReason::MaxSteps };
    let mut step = 0;
    let mut batches = Vec::new().into_iter();

    let mut evaluate = |step: usize, params: &ParamStore<f32>, opt: &mut OptimizerState<f32>, log: &mut TrainLog| -> Result<bool> {
        let ppl = model.perplexity(params, dev, config.batch_size)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| ppl < *b);
        log.evals.push(EvalRecord { step, dev_perplexity: ppl, learning_rate: opt.learning_rate, improved });
        log::info!("step {step}: dev perplexity {ppl:.4}");
        if improved {
            best = Some((ppl, step, params.clone()));
            bad_evals = 0;
            Ok(false)
        } else {
            bad_evals += 1;
            opt.learning_rate *= config.lr_decay;
            Ok(bad_evals >= config.patience)
        }
    };

    while step < config.max_steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                batches = epoch_batches(train, config.batch_size, &mut rng).into_iter();
                continue;
            }
        };
        step += 1;
        let pairs: Vec<&EncodedPair> = batch.iter().map(|&i| &train[i]).collect();
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &params, &pairs)?;
        let value = g.scalar(loss.mean) as f64;
        if !value.is_finite() {
            return Err(Error::Training { step, loss: value });
        }
        log.losses.push(value);
        g.backward(loss.mean, &mut params)?;
        params.clip_grad_norm(config.clip_norm as f32);
        opt.step(&mut params)?;

        if step % config.eval_every == 0 && evaluate(step, &params, &mut opt, &mut log)? {
            log.stopped = StopReason::Patience;
            break;
        }
    }
    if log.stopped == StopReason::MaxSteps && log.evals.last().map(|e| e.step) != Some(step) {
        evaluate(step, &params, &mut opt, &mut log)?;
    }

    let (dev_metric, best_step, params) = best.expect("at least one evaluation ran");
    Ok((
        Checkpoint { params, config: config.clone(), dev_metric, step: best_step, seed },
        log,
    ))
}
