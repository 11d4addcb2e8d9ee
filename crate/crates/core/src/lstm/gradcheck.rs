use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss, bptt_gradients, LstmParams};
use super::window::WindowedDataset;
use super::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub hidden_size: usize,
    pub n_features: usize,
    pub n_windows: usize,
    pub steps: usize,
    pub fd_step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { hidden_size: 4, n_features: 3, n_windows: 3, steps: 23, fd_step: 1e-5 }
    }
}

/// Seeded random model and batch used by the check.
pub fn gradcheck_problem(config: &GradCheckConfig, seed: u64) -> (LstmParams, WindowedDataset) {
    let params = LstmParams::init(config.hidden_size, config.n_features, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_da7a);
    let n = config.n_windows;
    let d = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let ds = WindowedDataset {
        feature_names: (0..config.n_features).map(|i| format!("x{i}")).collect(),
        target_name: "y".into(),
        steps: config.steps,
        n_features: config.n_features,
        inputs: (0..n * config.steps * config.n_features).map(|_| rng.random_range(-1.0..1.0)).collect(),
        targets: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        start_dates: vec![d; n],
        target_dates: vec![d; n],
        row_spans: (0..n).map(|k| k..k + config.steps + 1).collect(),
    };
    (params, ds)
}

/// Max relative error between `grad_fn` and central differences of the
/// batch loss, over every parameter.
pub fn gradient_check_with<G>(params: &LstmParams, batch: &WindowedDataset, fd_step: f64, grad_fn: G) -> Result<f64>
where
    G: Fn(&LstmParams, &WindowedDataset) -> Result<LstmParams>,
{
    let analytic = grad_fn(params, batch)?.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..base.len() {
        flat[idx] = base[idx] + fd_step;
        probe.set_flat(&flat);
        let up = batch_loss(&probe, batch)?;
        flat[idx] = base[idx] - fd_step;
        probe.set_flat(&flat);
        let down = batch_loss(&probe, batch)?;
        flat[idx] = base[idx];
        let numeric = (up - down) / (2.0 * fd_step);
        let rel = (analytic[idx] - numeric).abs() / analytic[idx].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn gradient_check(config: &GradCheckConfig, seed: u64) -> Result<f64> {
    let (params, batch) = gradcheck_problem(config, seed);
    gradient_check_with(&params, &batch, config.fd_step, |p, b| bptt_gradients(p, b).map(|(g, _)| g))
}
