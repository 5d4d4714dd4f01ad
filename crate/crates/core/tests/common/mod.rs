//! Shared fixtures for the gradient-check and acceptance suites: small
//! random instances of every loss in the crate, each paired with a
//! closure that re-evaluates the loss from scratch for the
//! finite-difference oracle.

use cfwgan_core::autodiff::{
    finite_difference, max_relative_error, Gradients, Graph, NodeId, ParamSet, Tensor,
};
use cfwgan_core::dataio::InteractionMatrix;
use cfwgan_core::error::Result;
use cfwgan_core::models::{self, MlpSpec};
use cfwgan_core::rng::{self, Stream};
use cfwgan_core::training::{
    assemble_batch, discriminator_loss, generator_loss, GanBatch, GanHyperParams, LossVariant,
};
use rand::Rng;

pub struct LossCase {
    pub name: &'static str,
    pub params: ParamSet,
    pub analytic: Gradients,
    pub eval: Box<dyn Fn(&ParamSet) -> Result<f64>>,
}

/// Small random interaction matrix: `users` × `items`, 3 interactions per
/// user.
pub fn tiny_matrix(users: usize, items: usize, seed: u64) -> InteractionMatrix {
    let mut rng = rng::stream(seed, Stream::TestScorer, &[users as u64, items as u64]);
    let rows = (0..users)
        .map(|_| {
            let mut pool: Vec<u32> = (0..items as u32).collect();
            rng::sample_without_replacement(&mut pool, 3, &mut rng)
        })
        .collect();
    InteractionMatrix::new(users, items, rows).unwrap()
}

fn small_batch(matrix: &InteractionMatrix, hp: &GanHyperParams, seed_tag: u64) -> GanBatch {
    let users: Vec<usize> = (0..matrix.users().min(3)).collect();
    assemble_batch(matrix, &users, hp, Stream::GeneratorMask, &[seed_tag]).unwrap()
}

fn fixed_eps(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Stream::GpEpsilon, &[7]);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn gan_hp(variant: LossVariant, seed: u64) -> GanHyperParams {
    GanHyperParams {
        seed,
        variant,
        p_zr: 0.5,
        p_pm: 0.5,
        ..Default::default()
    }
}

/// Critic loss cases (Eqs. 6 and 13): parameters are the critic's, the
/// generator output is a detached constant.
fn critic_loss_case(variant: LossVariant, seed: u64, name: &'static str) -> LossCase {
    let items = 8;
    let matrix = tiny_matrix(4, items, seed);
    let hp = gan_hp(variant, seed);
    let batch = small_batch(&matrix, &hp, seed);
    let b = batch.users.len();

    let gen_spec = MlpSpec::generator(items, vec![5]).unwrap();
    let gen_params = models::init_params(&gen_spec, seed ^ 0xAB, Stream::InitGenerator).unwrap();
    let cond_rows: Vec<Vec<f64>> = batch.users.iter().map(|&u| matrix.dense_row(u)).collect();
    let gen_out =
        Tensor::from_rows(&models::forward_values(&gen_spec, &gen_params, &cond_rows).unwrap())
            .unwrap();

    let disc_spec = MlpSpec::discriminator(items, vec![6]).unwrap();
    let disc_params = models::init_discriminator_params(&disc_spec, seed, Stream::InitDiscriminator).unwrap();
    let eps = fixed_eps(b, seed);

    let spec = disc_spec.clone();
    let batch_c = batch.clone();
    let gen_out_c = gen_out.clone();
    let eval = move |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let binding = p.bind(&mut g)?;
        let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
            models::discriminator_forward(g, &spec, &binding, v, c)
        };
        let loss = discriminator_loss(&mut g, variant, critic, &batch_c, &gen_out_c, 10.0, &eps)?;
        g.scalar_value(loss)
    };

    let analytic = {
        let mut g = Graph::new();
        let binding = disc_params.bind(&mut g).unwrap();
        let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
            models::discriminator_forward(g, &disc_spec, &binding, v, c)
        };
        let eps = fixed_eps(b, seed);
        let loss =
            discriminator_loss(&mut g, variant, critic, &batch, &gen_out, 10.0, &eps).unwrap();
        let adj = g.backward(loss).unwrap();
        binding.gradients(&g, &adj)
    };

    LossCase {
        name,
        params: disc_params,
        analytic,
        eval: Box::new(eval),
    }
}

/// Generator loss cases (Eqs. 7 and 14): parameters are the generator's,
/// the critic is frozen.
fn generator_loss_case(
    variant: LossVariant,
    use_zr: bool,
    seed: u64,
    name: &'static str,
) -> LossCase {
    let items = 8;
    let matrix = tiny_matrix(4, items, seed);
    let hp = GanHyperParams {
        use_zr,
        ..gan_hp(variant, seed)
    };
    let batch = small_batch(&matrix, &hp, seed + 1);

    let gen_spec = MlpSpec::generator(items, vec![6]).unwrap();
    let gen_params = models::init_params(&gen_spec, seed, Stream::InitGenerator).unwrap();
    let disc_spec = MlpSpec::discriminator(items, vec![5]).unwrap();
    let disc_params =
        models::init_discriminator_params(&disc_spec, seed ^ 0xCD, Stream::InitDiscriminator).unwrap();
    let alpha = 0.04;

    let gspec = gen_spec.clone();
    let dspec = disc_spec.clone();
    let dparams = disc_params.clone();
    let batch_c = batch.clone();
    let eval = move |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let gb = p.bind(&mut g)?;
        let db = dparams.bind_frozen(&mut g)?;
        let cond = g.constant(batch_c.cond.clone())?;
        let xhat = models::generator_forward(&mut g, &gspec, &gb, cond)?;
        let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
            models::discriminator_forward(g, &dspec, &db, v, c)
        };
        let loss = generator_loss(&mut g, variant, critic, &batch_c, xhat, cond, alpha, use_zr)?;
        g.scalar_value(loss)
    };

    let analytic = {
        let mut g = Graph::new();
        let gb = gen_params.bind(&mut g).unwrap();
        let db = disc_params.bind_frozen(&mut g).unwrap();
        let cond = g.constant(batch.cond.clone()).unwrap();
        let xhat = models::generator_forward(&mut g, &gen_spec, &gb, cond).unwrap();
        let critic = |g: &mut Graph, v: NodeId, c: NodeId| {
            models::discriminator_forward(g, &disc_spec, &db, v, c)
        };
        let loss =
            generator_loss(&mut g, variant, critic, &batch, xhat, cond, alpha, use_zr).unwrap();
        let adj = g.backward(loss).unwrap();
        gb.gradients(&g, &adj)
    };

    LossCase {
        name,
        params: gen_params,
        analytic,
        eval: Box::new(eval),
    }
}

/// Multi-label classification loss (Eq. 15) with dropout and L2.
fn mlc_loss_case(seed: u64) -> LossCase {
    let items = 8;
    let matrix = tiny_matrix(4, items, seed);
    let spec = MlpSpec::mlc(items, vec![6]).unwrap();
    let params = models::init_params(&spec, seed, Stream::InitMlc).unwrap();
    let rows: Vec<Vec<f64>> = (0..3).map(|u| matrix.dense_row(u)).collect();
    let input = Tensor::from_rows(&rows).unwrap();
    let lambda = 1e-3;
    let dropout = 0.4;

    let spec_c = spec.clone();
    let input_c = input.clone();
    let eval = move |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let binding = p.bind(&mut g)?;
        let x = g.constant(input_c.clone())?;
        // Same keyed stream each evaluation → identical dropout masks.
        let mut drop_rng = rng::stream(seed, Stream::Dropout, &[3]);
        let masks =
            cfwgan_core::baselines::dropout_masks(&mut g, &spec_c, 3, dropout, &mut drop_rng)?;
        let xhat = models::mlc_forward(&mut g, &spec_c, &binding, x, Some(&masks))?;
        let weights: Vec<NodeId> = (0..spec_c.n_layers())
            .map(|l| binding.node(&models::weight_name(l)))
            .collect::<Result<_>>()?;
        let loss = cfwgan_core::baselines::mlc_loss(&mut g, xhat, x, &weights, lambda)?;
        g.scalar_value(loss)
    };

    let analytic = {
        let mut g = Graph::new();
        let binding = params.bind(&mut g).unwrap();
        let x = g.constant(input.clone()).unwrap();
        let mut drop_rng = rng::stream(seed, Stream::Dropout, &[3]);
        let masks =
            cfwgan_core::baselines::dropout_masks(&mut g, &spec, 3, dropout, &mut drop_rng)
                .unwrap();
        let xhat = models::mlc_forward(&mut g, &spec, &binding, x, Some(&masks)).unwrap();
        let weights: Vec<NodeId> = (0..spec.n_layers())
            .map(|l| binding.node(&models::weight_name(l)).unwrap())
            .collect();
        let loss = cfwgan_core::baselines::mlc_loss(&mut g, xhat, x, &weights, lambda).unwrap();
        let adj = g.backward(loss).unwrap();
        binding.gradients(&g, &adj)
    };

    LossCase {
        name: "mlc_bce",
        params,
        analytic,
        eval: Box::new(eval),
    }
}

pub fn wgan_gp_disc_case(seed: u64) -> LossCase {
    critic_loss_case(LossVariant::WganGp, seed, "wgan_gp_discriminator")
}

pub fn vanilla_disc_case(seed: u64) -> LossCase {
    critic_loss_case(LossVariant::VanillaGan, seed, "vanilla_discriminator")
}

pub fn wgan_gp_gen_case(seed: u64) -> LossCase {
    generator_loss_case(LossVariant::WganGp, true, seed, "wgan_gp_generator_zr")
}

pub fn vanilla_gen_case(seed: u64) -> LossCase {
    generator_loss_case(LossVariant::VanillaGan, false, seed, "vanilla_generator")
}

pub fn mlc_case(seed: u64) -> LossCase {
    mlc_loss_case(seed)
}

/// Norm of an input-gradient: checks that double backprop (gradient of a
/// gradient norm with respect to the critic parameters) is exact.
pub fn input_gradient_norm_case(seed: u64) -> LossCase {
    let items = 6;
    let disc_spec = MlpSpec::discriminator(items, vec![5]).unwrap();
    let disc_params = models::init_discriminator_params(&disc_spec, seed, Stream::InitDiscriminator).unwrap();
    let mut data_rng = rng::stream(seed, Stream::TestScorer, &[99]);
    let x = Tensor::new(
        vec![2, items],
        (0..2 * items)
            .map(|_| data_rng.random_range(0.0..1.0))
            .collect::<Vec<f64>>(),
    )
    .unwrap();
    let cond = Tensor::new(
        vec![2, items],
        (0..2 * items)
            .map(|_| data_rng.random_range(0.0..1.0))
            .collect::<Vec<f64>>(),
    )
    .unwrap();

    let spec = disc_spec.clone();
    let x_c = x.clone();
    let cond_c = cond.clone();
    let eval = move |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let binding = p.bind(&mut g)?;
        let xv = g.constant(x_c.clone())?;
        let cv = g.constant(cond_c.clone())?;
        let grad = g.grad_wrt_input(xv, |g, xv| {
            models::discriminator_forward(g, &spec, &binding, xv, cv)
        })?;
        let norm = g.l2_norm(grad)?;
        g.scalar_value(norm)
    };

    let analytic = {
        let mut g = Graph::new();
        let binding = disc_params.bind(&mut g).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let cv = g.constant(cond.clone()).unwrap();
        let grad = g
            .grad_wrt_input(xv, |g, xv| {
                models::discriminator_forward(g, &disc_spec, &binding, xv, cv)
            })
            .unwrap();
        let norm = g.l2_norm(grad).unwrap();
        let adj = g.backward(norm).unwrap();
        binding.gradients(&g, &adj)
    };

    LossCase {
        name: "input_gradient_norm",
        params: disc_params,
        analytic,
        eval: Box::new(eval),
    }
}

/// Largest per-parameter relative error between the analytic gradients and
/// the central finite-difference oracle.
pub fn gradcheck(case: &LossCase) -> f64 {
    let mut worst = 0.0f64;
    for (name, tensor) in case.params.iter() {
        let mut f = |probe: &Tensor| -> Result<f64> {
            let mut perturbed = case.params.clone();
            *perturbed.get_mut(name).unwrap() = probe.clone();
            (case.eval)(&perturbed)
        };
        let fd = finite_difference(&mut f, tensor, 1e-5).unwrap();
        let analytic = case.analytic.get(name).unwrap();
        let err = max_relative_error(analytic, &fd);
        if err > worst {
            worst = err;
        }
    }
    worst
}
