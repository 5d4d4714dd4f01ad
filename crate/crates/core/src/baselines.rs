//! The non-adversarial arms: a one-hidden-layer multi-label classifier
//! trained with binary cross-entropy, dropout and L2 regularization, and
//! the non-personalized item-popularity scorer.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::dataio::InteractionMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{LearningCurve, MetricsReport, SplitTag};
use crate::models::{self, MlpSpec};
use crate::rng::{self, Stream};
use crate::training::{adam_step, AdamState, EvalHook};

#[derive(Debug, Clone, PartialEq)]
pub struct MlcHyperParams {
    pub lr: f64,
    pub lambda_l2: f64,
    pub hidden: usize,
    /// Probability of zeroing a hidden unit during training.
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlcHyperParams {
    fn default() -> Self {
        MlcHyperParams {
            lr: 1e-4,
            lambda_l2: 1e-5,
            hidden: 256,
            dropout: 0.8,
            batch_size: 64,
            max_epochs: 1000,
            eval_every: 5,
            patience: 10,
            seed: 0,
        }
    }
}

impl MlcHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        if self.lambda_l2 < 0.0 {
            return Err(Error::Config(format!(
                "L2 weight must be non-negative, got {}",
                self.lambda_l2
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "hidden size, batch size and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inverted-scaling dropout masks for the hidden layers: entries are 0
/// with probability p, otherwise 1/(1−p), so the expected train-time
/// activation equals the inference activation.
pub fn dropout_masks(
    g: &mut Graph,
    spec: &MlpSpec,
    batch: usize,
    p: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    let keep_scale = 1.0 / (1.0 - p);
    spec.hidden
        .iter()
        .map(|&h| {
            let data: Vec<f64> = (0..batch * h)
                .map(|_| {
                    if p > 0.0 && rng.random_range(0.0..1.0) < p {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect();
            g.constant(Tensor::new(vec![batch, h], data)?)
        })
        .collect()
}

/// Mean binary cross-entropy between the target rows and M(c), plus
/// λ·Σ‖W‖² over the weight matrices. `xhat` must come from a sigmoid
/// output, so the guarded logs stay finite.
pub fn mlc_loss(
    g: &mut Graph,
    xhat: NodeId,
    targets: NodeId,
    weight_nodes: &[NodeId],
    lambda_l2: f64,
) -> Result<NodeId> {
    if lambda_l2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "L2 weight must be non-negative, got {lambda_l2}"
        )));
    }
    // x log x̂
    let log_p = g.ln(xhat)?;
    let pos = g.mul(targets, log_p)?;
    // (1−x) log(1−x̂)
    let one_minus_x = g.one_minus(targets)?;
    let one_minus_p = g.one_minus(xhat)?;
    let log_q = g.ln(one_minus_p)?;
    let neg = g.mul(one_minus_x, log_q)?;
    let both = g.add(pos, neg)?;
    let mean = g.mean(both)?;
    let mut loss = g.scale(mean, -1.0)?;
    if lambda_l2 > 0.0 {
        for &w in weight_nodes {
            let sq = g.square(w)?;
            let s = g.sum(sq)?;
            let term = g.scale(s, lambda_l2)?;
            loss = g.add(loss, term)?;
        }
    }
    Ok(loss)
}

/// Trained classifier plus its validation curve.
#[derive(Debug, Clone)]
pub struct TrainedMlc {
    pub params: ParamSet,
    pub spec: MlpSpec,
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub best_n20: f64,
    pub epochs_run: usize,
}

/// Minimize the BCE loss with Adam (β₁=0.9, β₂=0.999), dropout on the
/// hidden layer at train time only, early stopping on validation N@20.
/// Input and target are both the user's training interaction vector.
pub fn train_mlc(
    matrix: &InteractionMatrix,
    hp: &MlcHyperParams,
    mut eval_hook: Option<EvalHook<'_>>,
) -> Result<TrainedMlc> {
    hp.validate()?;
    let m = matrix.users();
    if m == 0 {
        return Err(Error::EmptyInput("no users to train on".into()));
    }
    let spec = MlpSpec::mlc(matrix.items(), vec![hp.hidden])?;
    let mut params = models::init_params(&spec, hp.seed, Stream::InitMlc)?;
    let mut adam = AdamState::new(&params);
    let steps_per_epoch = m.div_ceil(hp.batch_size);
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);

    let mut curve = LearningCurve::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut evals_since_best = 0usize;
    let mut epochs_run = 0usize;

    'training: for epoch in 1..=hp.max_epochs {
        for step in 0..steps_per_epoch {
            let numerical = |e: Error| match e {
                Error::NonFinite { op, context } => Error::NumericalAbort {
                    epoch,
                    step,
                    detail: format!("non-finite value in {op}: {context}"),
                },
                other => other,
            };
            let mut batch_rng =
                rng::stream(hp.seed, Stream::MlcBatch, &[epoch as u64, step as u64]);
            let users = {
                let mut pool: Vec<usize> = (0..m).collect();
                rng::sample_without_replacement(&mut pool, hp.batch_size.min(m), &mut batch_rng)
            };
            let rows: Vec<Vec<f64>> = users.iter().map(|&u| matrix.dense_row(u)).collect();
            let batch = Tensor::from_rows(&rows)?;

            let mut g = Graph::new();
            let binding = params.bind(&mut g)?;
            let input = g.constant(batch.clone())?;
            let masks = if hp.dropout > 0.0 {
                let mut drop_rng =
                    rng::stream(hp.seed, Stream::Dropout, &[epoch as u64, step as u64]);
                Some(dropout_masks(&mut g, &spec, users.len(), hp.dropout, &mut drop_rng)?)
            } else {
                None
            };
            let xhat = models::mlc_forward(&mut g, &spec, &binding, input, masks.as_deref())
                .map_err(numerical)?;
            let weight_nodes: Vec<NodeId> = (0..spec.n_layers())
                .map(|l| binding.node(&models::weight_name(l)))
                .collect::<Result<_>>()?;
            let loss = mlc_loss(&mut g, xhat, input, &weight_nodes, hp.lambda_l2)
                .map_err(numerical)?;
            let adj = g.backward(loss).map_err(numerical)?;
            let grads = binding.gradients(&g, &adj);
            adam_step(&mut params, &grads, &mut adam, hp.lr, beta1, beta2, adam_eps)
                .map_err(numerical)?;
        }
        epochs_run = epoch;

        if hp.eval_every > 0 && epoch % hp.eval_every == 0 {
            if let Some(hook) = eval_hook.as_mut() {
                let signal = hook(&params, epoch)?;
                let report = signal.report;
                curve.push(epoch, SplitTag::Valid, report)?;
                let improved = best
                    .as_ref()
                    .map_or(true, |(best_n20, ..)| report.n20 > *best_n20);
                if improved {
                    best = Some((report.n20, epoch, params.clone()));
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best >= hp.patience {
                        break 'training;
                    }
                }
                if signal.stop {
                    break 'training;
                }
            }
        }
    }

    let (best_n20, best_epoch, params) = match best {
        Some((n20, epoch, p)) => (n20, epoch, p),
        None => (f64::NAN, epochs_run, params),
    };
    Ok(TrainedMlc {
        params,
        spec,
        curve,
        best_epoch,
        best_n20,
        epochs_run,
    })
}

/// Item popularity: every user gets the same scores, the per-item training
/// interaction counts. Personalization enters only through the exclusion
/// of already-interacted items at ranking time.
pub fn itempop_scores(matrix: &InteractionMatrix) -> Vec<f64> {
    matrix.item_counts().into_iter().map(|c| c as f64).collect()
}
