//! Shared minibatch loop for the autoencoder and the intent classifier.
//!
//! Per-example graphs are built in parallel and their gradients are summed in
//! example order, so results do not depend on thread scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Graph, Optimizer, OptimizerKind, ParamSet, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 16,
            grad_clip: 5.0,
            optimizer: OptimizerKind::default(),
        }
    }
}

/// Loss and number of prediction targets it sums over.
pub(crate) struct ExampleLoss {
    pub loss: Var,
    pub targets: usize,
}

/// Summed loss and gradients over `batch`.
pub(crate) fn batch_gradients<T, F>(
    params: &ParamSet,
    batch: &[T],
    loss_fn: &F,
) -> Result<(Gradients, f64, usize)>
where
    T: Sync,
    F: Fn(&mut Graph<'_>, &T) -> Result<ExampleLoss> + Sync,
{
    let per_example: Vec<Result<(Gradients, f64, usize)>> = batch
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(params);
            let out = loss_fn(&mut g, ex)?;
            let value = g.value(out.loss).data()[0];
            let grads = g.backward(out.loss)?;
            Ok((grads, value, out.targets))
        })
        .collect();
    let mut total = params.zero_grads();
    let mut loss = 0.0;
    let mut targets = 0;
    for r in per_example {
        let (g, l, t) = r?;
        total.add_assign(&g)?;
        loss += l;
        targets += t;
    }
    Ok((total, loss, targets))
}

/// Run `opts.epochs` epochs of shuffled minibatch training. Returns the mean
/// per-target loss of each epoch.
pub(crate) fn fit<T, F>(
    params: &mut ParamSet,
    data: &[T],
    opts: &TrainOptions,
    seed: u64,
    loss_fn: F,
) -> Result<Vec<f64>>
where
    T: Sync,
    F: Fn(&mut Graph<'_>, &T) -> Result<ExampleLoss> + Sync,
{
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Optimizer::new(opts.optimizer, opts.learning_rate, params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_targets = 0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&T> = chunk.iter().map(|&i| &data[i]).collect();
            let (mut grads, loss, targets) =
                batch_gradients(params, &batch, &|g: &mut Graph<'_>, ex: &&T| loss_fn(g, ex))?;
            grads.scale(1.0 / batch.len() as f64);
            if opts.grad_clip > 0.0 {
                grads.clip_global_norm(opts.grad_clip);
            }
            optimizer.step(params, &grads)?;
            epoch_loss += loss;
            epoch_targets += targets;
        }
        log.push(epoch_loss / epoch_targets.max(1) as f64);
    }
    Ok(log)
}
