//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::HasParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (sampled).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckConfig {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must zero the gradients, compute the loss, run the
/// backward pass and return the loss. It is called once for the analytic
/// gradient and twice per checked coordinate.
pub fn grad_check<M, F>(model: &mut M, mut loss_and_grad: F, config: GradCheckConfig) -> GradCheckReport
where
    M: HasParams + ?Sized,
    F: FnMut(&mut M) -> f64,
{
    loss_and_grad(model);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: config.tolerance,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = match config.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for k in coords {
            let original = model.params()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = original + config.step;
            let plus = loss_and_grad(model);
            model.params_mut()[pi].value.data_mut()[k] = original - config.step;
            let minus = loss_and_grad(model);
            model.params_mut()[pi].value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let a = grads[k];
            let scale = a.abs().max(numeric.abs()).max(config.abs_floor);
            let rel = (a - numeric).abs() / scale;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((names[pi].clone(), k));
            }
        }
    }
    // leave the analytic gradient in place
    loss_and_grad(model);
    report
}
