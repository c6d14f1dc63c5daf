//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::{loss, loss_and_gradients, Head, ModelConfig, Parameters, TrainingExample};
use crate::error::{Error, Result};
use crate::mixer::stream_rng;

const RANDOM_PER_TENSOR: usize = 20;
const LARGEST_PER_TENSOR: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates whose analytic and numeric values both lie inside the
    /// finite-difference rounding noise. A relative error is meaningless
    /// there, so they are checked for absolute agreement within the noise
    /// and left out of `max_relative_error`.
    pub below_noise: usize,
    /// Absolute rounding noise of a central difference at this loss and step.
    pub noise_floor: f64,
}

/// Multiple of `f64::EPSILON · max(|L|, 1) / epsilon` treated as noise.
const NOISE_ULPS: f64 = 16.0;

/// Relative error `|g − ĝ| / max(|g|, |ĝ|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `loss_and_gradients` with central differences on a fixed sample
/// of coordinates: 20 drawn at random from each tensor (all of a smaller
/// tensor) plus its 5 largest-magnitude analytic entries.
///
/// Gradients that vanish exactly, such as those of a bias that shifts every
/// span logit alike, are reported in `below_noise` rather than as a
/// relative error of one.
pub fn gradient_check(config: &ModelConfig, params: &Parameters, batch: &[TrainingExample], head: Head, epsilon: f64) -> Result<GradientCheckReport> {
    let (_, grads) = loss_and_gradients(config, params, batch, head)?;
    compare_gradients(config, params, batch, head, epsilon, &grads)
}

/// Like [`gradient_check`] but against caller-supplied gradients.
pub fn compare_gradients(
    config: &ModelConfig,
    params: &Parameters,
    batch: &[TrainingExample],
    head: Head,
    epsilon: f64,
    analytic: &Parameters,
) -> Result<GradientCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let plan: Vec<(String, Vec<usize>, Vec<f64>)> = analytic
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, tensor)| {
            let coords = coordinates(tensor.data, t as u64);
            let values = coords.iter().map(|&i| tensor.data[i]).collect();
            (tensor.name.clone(), coords, values)
        })
        .collect();

    let base = loss(config, params, batch, head)?;
    let noise_floor = NOISE_ULPS * f64::EPSILON * base.abs().max(1.0) / epsilon;
    let mut probe = params.clone();
    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        below_noise: 0,
        noise_floor,
    };
    for (t, (name, coords, values)) in plan.iter().enumerate() {
        for (&i, &g) in coords.iter().zip(values) {
            let original = probe.tensors()[t].data[i];
            probe.tensors_mut()[t].data[i] = original + epsilon;
            let up = loss(config, &probe, batch, head)?;
            probe.tensors_mut()[t].data[i] = original - epsilon;
            let down = loss(config, &probe, batch, head)?;
            probe.tensors_mut()[t].data[i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            report.coordinates += 1;
            if g.abs() <= noise_floor && numeric.abs() <= noise_floor {
                report.below_noise += 1;
                continue;
            }
            let err = relative_error(g, numeric);
            if err > report.max_relative_error || report.worst_tensor.is_empty() {
                report.max_relative_error = err;
                report.worst_tensor = name.clone();
                report.worst_index = i;
                report.analytic = g;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn coordinates(grad: &[f64], stream: u64) -> Vec<usize> {
    let n = grad.len();
    if n <= RANDOM_PER_TENSOR {
        return (0..n).collect();
    }
    let mut rng = stream_rng(0x6772_6164, stream);
    let mut picked: Vec<usize> = sample(&mut rng, n, RANDOM_PER_TENSOR).into_vec();
    let mut by_size: Vec<usize> = (0..n).collect();
    by_size.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    picked.extend(by_size.into_iter().take(LARGEST_PER_TENSOR));
    picked.sort_unstable();
    picked.dedup();
    picked
}
