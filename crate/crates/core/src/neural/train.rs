use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::error::{domain, Error, Result};
use crate::membrane::derive_seed;

/// Loss, named loss components and gradient over one mini-batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub parts: Vec<f64>,
    pub grad: Vec<f64>,
}

/// A differentiable training problem over indexed samples.
pub trait Objective {
    fn n_samples(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]) -> Result<()>;
    /// Mean loss and gradient over the samples in `batch`.
    fn evaluate(&self, batch: &[usize]) -> Result<Evaluation>;
    fn part_names(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return domain("batch_size must be >= 1");
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub parts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub part_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss");
        for n in &self.part_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{:e}", e.epoch, e.loss));
            for p in &e.parts {
                s.push_str(&format!(",{p:e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: Adam,
    pub curve: LossCurve,
}

impl TrainState {
    pub fn start<O: Objective + ?Sized>(obj: &O, cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            adam: Adam::new(cfg.optimizer, obj.params().len()),
            curve: LossCurve {
                part_names: obj.part_names(),
                epochs: Vec::new(),
            },
        }
    }
}

/// Sample order of one epoch; a function of `(seed, epoch)` only, so resumed
/// runs replay the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7472_6169_6e, epoch as u64));
    order.shuffle(&mut rng);
    order
}

pub fn train<O: Objective + ?Sized>(obj: &mut O, cfg: &TrainConfig, frozen: Option<&[bool]>) -> Result<LossCurve> {
    let mut state = TrainState::start(obj, cfg);
    train_until(obj, cfg, frozen, &mut state, cfg.epochs)?;
    Ok(state.curve)
}

/// Run epochs `state.epoch..end_epoch`. On a non-finite loss the objective is
/// rolled back to the last parameters that evaluated finite.
pub fn train_until<O: Objective + ?Sized>(
    obj: &mut O,
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
    state: &mut TrainState,
    end_epoch: usize,
) -> Result<()> {
    cfg.validate()?;
    let n = obj.n_samples();
    if n == 0 {
        return domain("training needs at least one sample");
    }
    let mut params = obj.params();
    if state.adam.m.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer state holds {} parameters, objective has {}",
            state.adam.m.len(),
            params.len()
        )));
    }
    let n_parts = state.curve.part_names.len();
    while state.epoch < end_epoch {
        let order = epoch_order(n, cfg.seed, state.epoch);
        let mut total = 0.0;
        let mut parts = vec![0.0; n_parts];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let ev = obj.evaluate(batch)?;
            if !ev.loss.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
                let step = state.adam.t as usize;
                log::error!("training diverged at epoch {} batch {b}", state.epoch);
                return Err(Error::Diverged {
                    step,
                    detail: format!("epoch {} batch {b}: loss {}", state.epoch, ev.loss),
                });
            }
            let w = batch.len() as f64 / n as f64;
            total += w * ev.loss;
            for (acc, p) in parts.iter_mut().zip(&ev.parts) {
                *acc += w * p;
            }
            let before = params.clone();
            state.adam.step(&mut params, &ev.grad, frozen)?;
            if params.iter().any(|p| !p.is_finite()) {
                obj.set_params(&before)?;
                return Err(Error::Diverged {
                    step: state.adam.t as usize,
                    detail: format!("epoch {} batch {b}: parameters became non-finite", state.epoch),
                });
            }
            obj.set_params(&params)?;
        }
        log::debug!("epoch {} loss {total:e}", state.epoch);
        state.curve.epochs.push(EpochRecord {
            epoch: state.epoch,
            loss: total,
            parts,
        });
        state.epoch += 1;
    }
    Ok(())
}
