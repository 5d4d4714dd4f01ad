//! Gradient correctness against the finite-difference oracle, for every
//! loss in the crate, including second-order effects through the gradient
//! penalty.

mod common;

use cfwgan_core::autodiff::{finite_difference, max_relative_error, Graph, ParamSet, Tensor};
use cfwgan_core::models::{self, MlpSpec};
use cfwgan_core::rng::Stream;

const FIRST_ORDER_TOL: f64 = 1e-5;
const SECOND_ORDER_TOL: f64 = 1e-4;

#[test]
fn two_layer_mlp_backward_matches_finite_differences() {
    let spec = MlpSpec::generator(7, vec![6, 5]).unwrap();
    let params = models::init_params(&spec, 13, Stream::InitGenerator).unwrap();
    let input = Tensor::from_rows(&[
        vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
    ])
    .unwrap();
    let eval = |p: &ParamSet| {
        let mut g = Graph::new();
        let binding = p.bind(&mut g)?;
        let x = g.constant(input.clone())?;
        let out = models::generator_forward(&mut g, &spec, &binding, x)?;
        let sq = g.square(out)?;
        g.mean(sq)
            .and_then(|id| g.scalar_value(id))
    };
    let analytic = {
        let mut g = Graph::new();
        let binding = params.bind(&mut g).unwrap();
        let x = g.constant(input.clone()).unwrap();
        let out = models::generator_forward(&mut g, &spec, &binding, x).unwrap();
        let sq = g.square(out).unwrap();
        let loss = g.mean(sq).unwrap();
        let adj = g.backward(loss).unwrap();
        binding.gradients(&g, &adj)
    };
    for (name, tensor) in params.iter() {
        let mut f = |probe: &Tensor| {
            let mut p = params.clone();
            *p.get_mut(name).unwrap() = probe.clone();
            eval(&p)
        };
        let fd = finite_difference(&mut f, tensor, 1e-5).unwrap();
        let err = max_relative_error(analytic.get(name).unwrap(), &fd);
        assert!(err <= FIRST_ORDER_TOL, "{name}: rel err {err}");
    }
}

#[test]
fn vanilla_gan_discriminator_loss_gradcheck() {
    for seed in [3u64, 17] {
        let case = common::vanilla_disc_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= FIRST_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}

#[test]
fn vanilla_gan_generator_loss_gradcheck() {
    for seed in [5u64, 23] {
        let case = common::vanilla_gen_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= FIRST_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}

#[test]
fn wgan_gp_generator_loss_gradcheck() {
    for seed in [7u64, 29] {
        let case = common::wgan_gp_gen_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= FIRST_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}

#[test]
fn mlc_loss_gradcheck() {
    for seed in [9u64, 31] {
        let case = common::mlc_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= FIRST_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}

#[test]
fn wgan_gp_discriminator_loss_gradcheck_with_double_backprop() {
    for seed in [11u64, 37] {
        let case = common::wgan_gp_disc_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= SECOND_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}

#[test]
fn input_gradient_norm_gradcheck() {
    for seed in [13u64, 41] {
        let case = common::input_gradient_norm_case(seed);
        let err = common::gradcheck(&case);
        assert!(err <= SECOND_ORDER_TOL, "{} seed {seed}: {err}", case.name);
    }
}
