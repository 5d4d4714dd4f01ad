use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central finite differences of a scalar function, one coordinate at a
/// time: (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h. This is the independent
/// numerical route every backward pass in the crate is checked against;
/// it never touches the graph machinery.
pub fn finite_difference(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite_difference step must be positive, got {h}"
        )));
    }
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Relative error between an analytic gradient and its finite-difference
/// estimate: ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂). The norm form keeps rounding
/// noise on near-zero coordinates from dominating the ratio, and both
/// routes sitting below the central-difference noise floor (≈ machine
/// epsilon · |f| / h) counts as agreement.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    const FD_NOISE_FLOOR: f64 = 1e-8;
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < FD_NOISE_FLOOR {
        return 0.0;
    }
    diff / scale
}
