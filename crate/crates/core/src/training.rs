//! Adversarial training: Wasserstein critic loss with gradient penalty,
//! the vanilla-GAN variant, zero-reconstruction and partial-masking
//! designs, mask sampling, Adam, and the alternating training loop.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, NodeId, ParamSet, Tensor};
use crate::dataio::InteractionMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{LearningCurve, MetricsReport, SplitTag};
use crate::models::{self, MlpSpec};
use crate::rng::{self, Stream};

/// Adversarial objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Wasserstein critic with gradient penalty; identity-output scores.
    WganGp,
    /// Original minimax GAN; critic scores pass through a sigmoid and the
    /// gradient-penalty weight is ignored.
    VanillaGan,
}

impl LossVariant {
    pub fn parse_name(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WGAN_GP" => Ok(LossVariant::WganGp),
            "VANILLA_GAN" => Ok(LossVariant::VanillaGan),
            other => Err(Error::Config(format!("unknown loss variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::WganGp => "WGAN_GP",
            LossVariant::VanillaGan => "VANILLA_GAN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanHyperParams {
    pub lr: f64,
    pub d_iter: usize,
    pub lambda_gp: f64,
    pub alpha: f64,
    pub p_zr: f64,
    pub p_pm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation cadence in epochs; 0 disables evaluation and early
    /// stopping (the run then lasts exactly `max_epochs`).
    pub eval_every: usize,
    /// Evaluations without improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub variant: LossVariant,
    pub use_zr: bool,
    pub use_pm: bool,
}

impl Default for GanHyperParams {
    fn default() -> Self {
        GanHyperParams {
            lr: 1e-4,
            d_iter: 5,
            lambda_gp: 10.0,
            alpha: 0.04,
            p_zr: 0.7,
            p_pm: 0.6,
            beta1: 0.0,
            beta2: 0.9,
            batch_size: 64,
            max_epochs: 1000,
            eval_every: 5,
            patience: 10,
            seed: 0,
            variant: LossVariant::WganGp,
            use_zr: true,
            use_pm: true,
        }
    }
}

impl GanHyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.d_iter < 1 {
            return bad("D_iter must be at least 1".into());
        }
        if self.lambda_gp < 0.0 {
            return bad(format!("lambda must be non-negative, got {}", self.lambda_gp));
        }
        if self.alpha < 0.0 {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        for (name, v) in [("p_ZR", self.p_zr), ("p_PM", self.p_pm)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.eval_every > 0 && self.patience == 0 {
            return bad("patience must be positive when evaluation is enabled".into());
        }
        Ok(())
    }
}

/// Fresh per-step negative-item subsets for one user. `zr` drives the
/// zero-reconstruction penalty, `pm` the partial-masking indicator.
#[derive(Debug, Clone)]
pub struct MaskSample {
    pub user: usize,
    pub zr: Vec<u32>,
    pub pm: Vec<u32>,
    /// Dense 0/1 indicator of `pm`.
    pub k_u: Vec<f64>,
}

/// Uniform subsets of the user's negative items, sampled independently
/// and without replacement; |ZR| = ⌊p_zr·|N_u|+0.5⌋ and likewise for PM.
pub fn sample_masks(
    matrix: &InteractionMatrix,
    user: usize,
    p_zr: f64,
    p_pm: f64,
    rng: &mut ChaCha8Rng,
) -> MaskSample {
    let negatives = matrix.negatives(user);
    let n_zr = ((p_zr * negatives.len() as f64) + 0.5).floor() as usize;
    let n_pm = ((p_pm * negatives.len() as f64) + 0.5).floor() as usize;
    let zr = rng::sample_without_replacement(&mut negatives.clone(), n_zr, rng);
    let pm = rng::sample_without_replacement(&mut negatives.clone(), n_pm, rng);
    let mut k_u = vec![0.0; matrix.items()];
    for &i in &pm {
        k_u[i as usize] = 1.0;
    }
    MaskSample {
        user,
        zr,
        pm,
        k_u,
    }
}

/// Dense per-batch tensors the losses consume. `cond` equals `real` here
/// (the condition vector is the interaction vector), kept separate so the
/// wiring stays explicit.
#[derive(Debug, Clone)]
pub struct GanBatch {
    pub users: Vec<usize>,
    pub real: Tensor,
    pub cond: Tensor,
    /// x_u + k_u; all-ones columns on positives and unmasked negatives.
    pub fake_mask: Tensor,
    /// 0/1 rows marking each user's ZR subset.
    pub zr_mask: Tensor,
}

/// Assemble batch tensors, drawing fresh masks per user from streams keyed
/// by (seed, purpose, counters..., user).
pub fn assemble_batch(
    matrix: &InteractionMatrix,
    users: &[usize],
    hp: &GanHyperParams,
    mask_stream: Stream,
    counters: &[u64],
) -> Result<GanBatch> {
    let n = matrix.items();
    let b = users.len();
    let mut real = Vec::with_capacity(b * n);
    let mut fake_mask = Vec::with_capacity(b * n);
    let mut zr_mask = vec![0.0; b * n];
    for (row, &u) in users.iter().enumerate() {
        let x_u = matrix.dense_row(u);
        let mut key = counters.to_vec();
        key.push(u as u64);
        let mut rng = rng::stream(hp.seed, mask_stream, &key);
        let p_zr = if hp.use_zr { hp.p_zr } else { 0.0 };
        let p_pm = if hp.use_pm { hp.p_pm } else { 0.0 };
        let mask = sample_masks(matrix, u, p_zr, p_pm, &mut rng);
        for &i in &mask.zr {
            zr_mask[row * n + i as usize] = 1.0;
        }
        fake_mask.extend(x_u.iter().zip(&mask.k_u).map(|(&x, &k)| x + k));
        real.extend_from_slice(&x_u);
    }
    let real = Tensor::new(vec![b, n], real)?;
    Ok(GanBatch {
        users: users.to_vec(),
        cond: real.clone(),
        real,
        fake_mask: Tensor::new(vec![b, n], fake_mask)?,
        zr_mask: Tensor::new(vec![b, n], zr_mask)?,
    })
}

/// λ · mean over rows of (‖∇_x̃ D(x̃|c)‖₂ − 1)², with x̃ = ε·real +
/// (1−ε)·fake per row and the condition held fixed. The returned node is
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty<C>(
    g: &mut Graph,
    critic: C,
    real: &Tensor,
    fake: &Tensor,
    cond: NodeId,
    lambda: f64,
    eps: &[f64],
) -> Result<NodeId>
where
    C: FnOnce(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
{
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gradient penalty weight must be non-negative, got {lambda}"
        )));
    }
    let (b, n) = (real.dim0(), real.dim1());
    if fake.shape() != real.shape() || eps.len() != b {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    let mut interp = Vec::with_capacity(b * n);
    for i in 0..b {
        let e = eps[i];
        for j in 0..n {
            interp.push(e * real.data()[i * n + j] + (1.0 - e) * fake.data()[i * n + j]);
        }
    }
    let x_tilde = g.constant(Tensor::new(vec![b, n], interp)?)?;
    let grad = g.grad_wrt_input(x_tilde, |g, x| critic(g, x, cond))?;
    let norms = g.l2_norm_rows(grad)?;
    let dev = g.add_const(norms, -1.0)?;
    let sq = g.square(dev)?;
    let mean = g.mean(sq)?;
    g.scale(mean, lambda)
}

/// Critic loss for one batch. Generator outputs arrive as plain values
/// (detached). WGAN-GP: mean D(fake) − mean D(real) + GP. Vanilla:
/// −mean log D(real) − mean log(1 − D(fake)) with sigmoid scores and
/// guarded logs; the GP weight is ignored.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<C>(
    g: &mut Graph,
    variant: LossVariant,
    critic: C,
    batch: &GanBatch,
    gen_output: &Tensor,
    lambda_gp: f64,
    gp_eps: &[f64],
) -> Result<NodeId>
where
    C: Fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
{
    let fake = gen_output.zip(&batch.fake_mask, "fake_masking", |x, m| x * m)?;
    let cond = g.constant(batch.cond.clone())?;
    let real_in = g.constant(batch.real.clone())?;
    let fake_in = g.constant(fake.clone())?;
    let d_real = critic(g, real_in, cond)?;
    let d_fake = critic(g, fake_in, cond)?;
    match variant {
        LossVariant::WganGp => {
            let m_fake = g.mean(d_fake)?;
            let m_real = g.mean(d_real)?;
            let diff = g.sub(m_fake, m_real)?;
            let gp = gradient_penalty(g, critic, &batch.real, &fake, cond, lambda_gp, gp_eps)?;
            g.add(diff, gp)
        }
        LossVariant::VanillaGan => {
            let p_real = g.sigmoid(d_real)?;
            let log_real = g.ln(p_real)?;
            let p_fake = g.sigmoid(d_fake)?;
            let one_minus_fake = g.one_minus(p_fake)?;
            let log_fake = g.ln(one_minus_fake)?;
            let a = g.mean(log_real)?;
            let b = g.mean(log_fake)?;
            let sum = g.add(a, b)?;
            g.scale(sum, -1.0)
        }
    }
}

/// Generator loss for one batch; `xhat` is the live generator output node.
/// WGAN-GP: −mean D(x̂⊙(x+k)|c); vanilla: mean log(1 − D(x̂⊙(x+k)|c)).
/// With the ZR design on, adds α · mean over users of Σ_{j∈ZR_u} x̂_j².
pub fn generator_loss<C>(
    g: &mut Graph,
    variant: LossVariant,
    critic: C,
    batch: &GanBatch,
    xhat: NodeId,
    cond: NodeId,
    alpha: f64,
    use_zr: bool,
) -> Result<NodeId>
where
    C: Fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
{
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ZR weight must be non-negative, got {alpha}"
        )));
    }
    let mask = g.constant(batch.fake_mask.clone())?;
    let fake = g.mul(xhat, mask)?;
    let score = critic(g, fake, cond)?;
    let base = match variant {
        LossVariant::WganGp => {
            let m = g.mean(score)?;
            g.scale(m, -1.0)?
        }
        LossVariant::VanillaGan => {
            let p = g.sigmoid(score)?;
            let om = g.one_minus(p)?;
            let lg = g.ln(om)?;
            g.mean(lg)?
        }
    };
    if use_zr {
        let sq = g.square(xhat)?;
        let zr = g.constant(batch.zr_mask.clone())?;
        let masked = g.mul(sq, zr)?;
        let per_user = g.sum_axis1(masked)?;
        let mean = g.mean(per_user)?;
        let term = g.scale(mean, alpha)?;
        g.add(base, term)
    } else {
        Ok(base)
    }
}

/// Adam moment buffers; shapes mirror the parameter set, one shared
/// timestep.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| {
            p.iter()
                .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for '{name}'")))?;
        let m = state.m.get_mut(name).expect("moment buffer");
        let v = state.v.get_mut(name).expect("moment buffer");
        let (pd, gd) = (p.data_mut(), grad.data());
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.check_finite("adam_step")?;
    }
    Ok(())
}

/// Outcome of one adversarial run: the best-validation parameters, the
/// validation curve, and where the best epoch fell.
#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: ParamSet,
    pub discriminator: ParamSet,
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub best_n20: f64,
    pub epochs_run: usize,
}

/// What an evaluation callback hands back to the trainer: the validation
/// report that drives early stopping, plus an explicit stop request for
/// callers that monitor their own criteria.
#[derive(Debug, Clone, Copy)]
pub struct EvalSignal {
    pub report: MetricsReport,
    pub stop: bool,
}

impl From<MetricsReport> for EvalSignal {
    fn from(report: MetricsReport) -> Self {
        EvalSignal {
            report,
            stop: false,
        }
    }
}

/// Evaluation callback: (generator parameters, epoch) → validation signal.
pub type EvalHook<'a> = &'a mut dyn FnMut(&ParamSet, usize) -> Result<EvalSignal>;

fn sample_batch_users(m: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..m).collect();
    rng::sample_without_replacement(&mut pool, batch.min(m), rng)
}

/// Alternating optimization: `d_iter` critic steps on fresh batches and
/// fresh PM masks, then one generator step on a fresh batch with fresh ZR
/// and PM masks; repeated ⌈m/batch⌉ times per epoch. Early stopping
/// tracks validation N@20 and restores the best parameters.
pub fn train_gan(
    matrix: &InteractionMatrix,
    gen_spec: &MlpSpec,
    disc_spec: &MlpSpec,
    hp: &GanHyperParams,
    mut eval_hook: Option<EvalHook<'_>>,
) -> Result<TrainedGan> {
    hp.validate()?;
    let m = matrix.users();
    if m == 0 {
        return Err(Error::EmptyInput("no users to train on".into()));
    }
    let mut gen_params = models::init_params(gen_spec, hp.seed, Stream::InitGenerator)?;
    let mut disc_params = models::init_discriminator_params(disc_spec, hp.seed, Stream::InitDiscriminator)?;
    let mut gen_adam = AdamState::new(&gen_params);
    let mut disc_adam = AdamState::new(&disc_params);
    let steps_per_epoch = m.div_ceil(hp.batch_size);
    let adam_eps = 1e-8;

    let mut curve = LearningCurve::new();
    let mut best: Option<(f64, usize, ParamSet, ParamSet)> = None;
    let mut evals_since_best = 0usize;
    let mut epochs_run = 0usize;

    'training: for epoch in 1..=hp.max_epochs {
        for step in 0..steps_per_epoch {
            let numerical = |e: Error, phase: &str| match e {
                Error::NonFinite { op, context } => Error::NumericalAbort {
                    epoch,
                    step,
                    detail: format!("{phase}: non-finite value in {op}: {context}"),
                },
                other => other,
            };

            for t in 0..hp.d_iter {
                let mut batch_rng = rng::stream(
                    hp.seed,
                    Stream::DiscriminatorBatch,
                    &[epoch as u64, step as u64, t as u64],
                );
                let users = sample_batch_users(m, hp.batch_size, &mut batch_rng);
                let batch = assemble_batch(
                    matrix,
                    &users,
                    hp,
                    Stream::DiscriminatorMask,
                    &[epoch as u64, step as u64, t as u64],
                )?;
                let cond_rows: Vec<Vec<f64>> =
                    users.iter().map(|&u| matrix.dense_row(u)).collect();
                let gen_out_rows = models::forward_values(gen_spec, &gen_params, &cond_rows)
                    .map_err(|e| numerical(e, "generator forward"))?;
                let gen_out = Tensor::from_rows(&gen_out_rows)?;

                let mut eps_rng = rng::stream(
                    hp.seed,
                    Stream::GpEpsilon,
                    &[epoch as u64, step as u64, t as u64],
                );
                let eps: Vec<f64> = (0..users.len())
                    .map(|_| eps_rng.random_range(0.0..1.0))
                    .collect();

                let mut g = Graph::new();
                let binding = disc_params.bind(&mut g)?;
                // One condition projection per graph: the critic scores the
                // real, fake and interpolated vectors against the same
                // condition rows.
                let cache = std::cell::RefCell::new(None::<(NodeId, models::CriticGraph)>);
                let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
                    let mut slot = cache.borrow_mut();
                    if slot.map_or(true, |(cached, _)| cached != c) {
                        *slot = Some((c, models::critic_graph(g, disc_spec, &binding, c)?));
                    }
                    let (_, cg) = slot.expect("cache populated");
                    models::critic_score(g, disc_spec, &binding, &cg, v)
                };
                let loss = discriminator_loss(
                    &mut g,
                    hp.variant,
                    critic,
                    &batch,
                    &gen_out,
                    hp.lambda_gp,
                    &eps,
                )
                .map_err(|e| numerical(e, "discriminator loss"))?;
                let adj = g.backward(loss).map_err(|e| numerical(e, "discriminator backward"))?;
                let grads = binding.gradients(&g, &adj);
                adam_step(
                    &mut disc_params,
                    &grads,
                    &mut disc_adam,
                    hp.lr,
                    hp.beta1,
                    hp.beta2,
                    adam_eps,
                )
                .map_err(|e| numerical(e, "discriminator update"))?;
            }

            let mut batch_rng = rng::stream(
                hp.seed,
                Stream::GeneratorBatch,
                &[epoch as u64, step as u64],
            );
            let users = sample_batch_users(m, hp.batch_size, &mut batch_rng);
            let batch = assemble_batch(
                matrix,
                &users,
                hp,
                Stream::GeneratorMask,
                &[epoch as u64, step as u64],
            )?;
            let mut g = Graph::new();
            let gen_binding = gen_params.bind(&mut g)?;
            let disc_binding = disc_params.bind_frozen(&mut g)?;
            let cond = g.constant(batch.cond.clone())?;
            let xhat = models::generator_forward(&mut g, gen_spec, &gen_binding, cond)
                .map_err(|e| numerical(e, "generator forward"))?;
            let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
                models::discriminator_forward(g, disc_spec, &disc_binding, v, c)
            };
            let loss = generator_loss(
                &mut g,
                hp.variant,
                critic,
                &batch,
                xhat,
                cond,
                hp.alpha,
                hp.use_zr,
            )
            .map_err(|e| numerical(e, "generator loss"))?;
            let adj = g.backward(loss).map_err(|e| numerical(e, "generator backward"))?;
            let grads = gen_binding.gradients(&g, &adj);
            adam_step(
                &mut gen_params,
                &grads,
                &mut gen_adam,
                hp.lr,
                hp.beta1,
                hp.beta2,
                adam_eps,
            )
            .map_err(|e| numerical(e, "generator update"))?;
        }
        epochs_run = epoch;

        if hp.eval_every > 0 && epoch % hp.eval_every == 0 {
            if let Some(hook) = eval_hook.as_mut() {
                let signal = hook(&gen_params, epoch)?;
                let report = signal.report;
                curve.push(epoch, SplitTag::Valid, report)?;
                let improved = best
                    .as_ref()
                    .map_or(true, |(best_n20, ..)| report.n20 > *best_n20);
                if improved {
                    best = Some((
                        report.n20,
                        epoch,
                        gen_params.clone(),
                        disc_params.clone(),
                    ));
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

    let (best_n20, best_epoch, generator, discriminator) = match best {
        Some((n20, epoch, g, d)) => (n20, epoch, g, d),
        None => (f64::NAN, epochs_run, gen_params, disc_params),
    };
    Ok(TrainedGan {
        generator,
        discriminator,
        curve,
        best_epoch,
        best_n20,
        epochs_run,
    })
}
