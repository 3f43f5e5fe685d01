use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{total_loss, EncodedExample, LossConfig, Result};
use crate::backend::{Gradients, TrainableBackend};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Absolute error accepted when both gradients are near zero.
    pub abs_tol: f64,
    /// Check every parameter up to this many, otherwise sample.
    pub exhaustive_limit: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub report_worst: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            abs_tol: 1e-7,
            exhaustive_limit: 10_000,
            sample_size: 1_000,
            seed: 0,
            report_worst: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub num_params: usize,
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub loss: f64,
    pub options: GradCheckOptions,
    /// Largest relative errors first.
    pub worst: Vec<GradCheckEntry>,
}

/// Compares the analytic gradient of [`total_loss`] against central differences.
pub fn finite_diff_check<B: TrainableBackend + Clone>(
    backend: &B,
    batch: &[EncodedExample],
    config: &LossConfig,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = total_loss(backend, batch, config)?.grads;
    check_gradients(backend, batch, config, &analytic, options)
}

/// Like [`finite_diff_check`] with a caller-supplied analytic gradient.
pub fn check_gradients<B: TrainableBackend + Clone>(
    backend: &B,
    batch: &[EncodedExample],
    config: &LossConfig,
    analytic: &Gradients,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let n = backend.num_params();
    let indices: Vec<usize> = if n <= options.exhaustive_limit {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut v = sample(&mut rng, n, options.sample_size.min(n)).into_vec();
        v.sort_unstable();
        v
    };
    let loss = total_loss(backend, batch, config)?.total;
    let mut probe = backend.clone();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in &indices {
        let theta = probe.param(i);
        probe.set_param(i, theta + options.h);
        let plus = total_loss(&probe, batch, config)?.total;
        probe.set_param(i, theta - options.h);
        let minus = total_loss(&probe, batch, config)?.total;
        probe.set_param(i, theta);
        let numeric = (plus - minus) / (2.0 * options.h);
        let a = analytic.as_slice()[i];
        let abs_error = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
        let passed = abs_error < options.abs_tol || rel_error < options.tol;
        entries.push(GradCheckEntry {
            index: i,
            label: backend.param_label(i),
            analytic: a,
            numeric,
            abs_error,
            rel_error,
            passed,
        });
    }
    let failures = entries.iter().filter(|e| !e.passed).count();
    let max_abs_error = entries.iter().map(|e| e.abs_error).fold(0.0, f64::max);
    // Relative error is only meaningful where the absolute test did not already pass.
    let max_rel_error = entries
        .iter()
        .filter(|e| e.abs_error >= options.abs_tol)
        .map(|e| e.rel_error)
        .fold(0.0, f64::max);
    entries.sort_by(|a, b| {
        a.passed
            .cmp(&b.passed)
            .then(b.rel_error.total_cmp(&a.rel_error))
            .then(b.abs_error.total_cmp(&a.abs_error))
            .then(a.index.cmp(&b.index))
    });
    entries.truncate(options.report_worst);
    Ok(GradCheckReport {
        passed: failures == 0,
        num_params: n,
        checked: indices.len(),
        failures,
        max_rel_error,
        max_abs_error,
        loss,
        options: *options,
        worst: entries,
    })
}
