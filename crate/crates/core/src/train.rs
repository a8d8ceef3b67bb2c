//! Plain stochastic gradient descent over the composite objective.
//!
//! Single-threaded and fully deterministic per seed: batch indices, dropout
//! masks, and parameter updates all derive from one seeded stream, in a
//! fixed order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{default_convention, evaluate_dataset, mean_dice, prepare_input};
use crate::grid::cached_grid;
use crate::loss::{total_loss, RmConfig};
use crate::nn::UNetLite;
use crate::tensor::{softmax_channels, Tensor};

/// Optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Training result: per-iteration batch-mean loss plus the final score on
/// the training split (computed through the shared evaluation path).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub loss_trace: Vec<f64>,
    pub final_train_dice: f64,
}

/// Train `model` in place. The loss is cross entropy + Dice + alpha * RM per
/// `loss_cfg`; alpha = 0 reduces to the plain segmentation objective.
pub fn train(
    model: &mut UNetLite,
    dataset: &Dataset,
    loss_cfg: &RmConfig,
    sgd: &SgdConfig,
) -> Result<TrainOutcome> {
    if dataset.samples.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if sgd.learning_rate.is_nan() || sgd.learning_rate <= 0.0 {
        return Err(Error::Config(format!(
            "learning_rate must be positive, got {}",
            sgd.learning_rate
        )));
    }
    if sgd.iterations == 0 || sgd.batch_size == 0 {
        return Err(Error::Config(
            "iterations and batch_size must be positive".into(),
        ));
    }
    loss_cfg.validate()?;
    let dims = dataset.dims();
    if model.spatial_rank() != dims {
        return Err(Error::DimensionMismatch(format!(
            "model is {}D but dataset is {}D",
            model.spatial_rank(),
            dims
        )));
    }
    if loss_cfg.rank() != dims {
        return Err(Error::Config(format!(
            "loss orders have rank {} but data is {}D",
            loss_cfg.rank(),
            dims
        )));
    }
    let spatial = dataset.samples[0].image.shape().to_vec();
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.image.shape() != spatial.as_slice() || s.mask.shape() != spatial.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} shape differs from the first sample"
            )));
        }
        if let Some(&label) = s.mask.data().iter().max() {
            if label as usize >= model.num_classes() {
                return Err(Error::Label(format!(
                    "sample {i} contains class {label} but the model has {} classes",
                    model.num_classes()
                )));
            }
        }
    }

    let grid = cached_grid(&spatial, loss_cfg.convention, loss_cfg.normalized)?;
    let inputs: Vec<Tensor> = dataset
        .samples
        .iter()
        .map(|s| prepare_input(dims, &s.image))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(sgd.seed);
    let n = dataset.samples.len();
    let mut loss_trace = Vec::with_capacity(sgd.iterations);

    for iteration in 0..sgd.iterations {
        let indices: Vec<usize> = (0..sgd.batch_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let dropout_seeds: Vec<u64> = indices.iter().map(|_| rng.random()).collect();

        let mut grad_acc: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        let mut loss_sum = 0.0;

        for (slot, &si) in indices.iter().enumerate() {
            let mut graph = Graph::new();
            let image_node = graph.leaf(inputs[si].clone(), false);
            let tape =
                model.build_graph(&mut graph, image_node, true, dropout_seeds[slot], true)?;
            let logits = graph.value(tape.logits).clone();
            let prob = softmax_channels(&logits)?;
            let lv = total_loss(&logits, &prob, &dataset.samples[si].mask, &grid, loss_cfg)?;
            loss_sum += lv.value;
            graph.backward_seeded(tape.logits, lv.gradient)?;
            for (acc, &pid) in grad_acc.iter_mut().zip(&tape.param_nodes) {
                if let Some(g) = graph.grad(pid) {
                    acc.axpy(1.0, g)?;
                }
            }
        }

        let mean_loss = loss_sum / sgd.batch_size as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        loss_trace.push(mean_loss);
        model.apply_update(&grad_acc, -sgd.learning_rate / sgd.batch_size as f64)?;
    }

    let rows = evaluate_dataset(model, dataset, default_convention(model.num_classes()))?;
    Ok(TrainOutcome {
        loss_trace,
        final_train_dice: mean_dice(&rows),
    })
}
