//! Central finite-difference check of the analytic backward pass.
//!
//! The probe loss is `sum(G ⊙ mop_forward(I))` for a random `G`, evaluated
//! with zero noise and the top-k selection pinned to the one recorded by the
//! unperturbed forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layer::{backward_from_cache, forward_cached};
use super::{Matrix2D, Mode, MopConfig, MopError, MopParams};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub config: MopConfig,
    pub tokens: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `projector[1].w2[7]`.
    pub worst_entry: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub cases: Vec<GradCheckCase>,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn probe_loss(
    input: &Matrix2D,
    params: &MopParams,
    cfg: &MopConfig,
    selection: &[Vec<usize>],
    probe: &Matrix2D,
) -> Result<f64, MopError> {
    let cache = forward_cached(input, params, cfg, 0, Some(selection))?;
    Ok(cache
        .output()
        .as_slice()
        .iter()
        .zip(probe.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}

fn tensor_name(n_projectors: usize, tensor: usize) -> String {
    const PARTS: [&str; 4] = ["w1", "b1", "w2", "b2"];
    let owner = tensor / 4;
    if owner < n_projectors {
        format!("projector[{owner}].{}", PARTS[tensor % 4])
    } else {
        format!("router.{}", PARTS[tensor % 4])
    }
}

/// Checks every parameter and input gradient of one configuration.
pub fn check_config(cfg: &MopConfig, tokens: usize, seed: u64) -> Result<GradCheckCase, MopError> {
    let cfg = MopConfig {
        noise_sigma: 0.0,
        mode: Mode::Inference,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MopParams::init(&cfg, rng.random())?;
    // Nonzero biases so every code path carries signal.
    // Tensors alternate weight, bias, weight, bias.
    for t in params.tensors_mut().into_iter().skip(1).step_by(2) {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let mut input = Matrix2D::from_fn(tokens, cfg.c_in, |_, _| rng.random_range(-1.0..1.0));
    let probe = Matrix2D::from_fn(tokens, cfg.c_out, |_, _| rng.random_range(-1.0..1.0));

    let cache = forward_cached(&input, &params, &cfg, 0, None)?;
    let selection = cache.decision().selected.clone();
    let grads = backward_from_cache(&cache, &input, &params, &cfg, &probe)?;

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    let mut record = |rel: f64, name: String| {
        if rel > max_rel || worst.is_empty() {
            max_rel = max_rel.max(rel);
            worst = name;
        }
    };

    let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, grad_t) in analytic.iter().enumerate() {
        for i in 0..grad_t.len() {
            let orig = params.tensors()[ti][i];
            params.tensors_mut()[ti][i] = orig + FD_STEP;
            let plus = probe_loss(&input, &params, &cfg, &selection, &probe)?;
            params.tensors_mut()[ti][i] = orig - FD_STEP;
            let minus = probe_loss(&input, &params, &cfg, &selection, &probe)?;
            params.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            record(
                relative_error(grad_t[i], numeric),
                format!("{}[{i}]", tensor_name(cfg.n_projectors, ti)),
            );
            checked += 1;
        }
    }
    for i in 0..input.as_slice().len() {
        let orig = input.as_slice()[i];
        input.as_mut_slice()[i] = orig + FD_STEP;
        let plus = probe_loss(&input, &params, &cfg, &selection, &probe)?;
        input.as_mut_slice()[i] = orig - FD_STEP;
        let minus = probe_loss(&input, &params, &cfg, &selection, &probe)?;
        input.as_mut_slice()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        record(
            relative_error(grads.input.as_slice()[i], numeric),
            format!("input[{i}]"),
        );
        checked += 1;
    }

    Ok(GradCheckCase {
        config: cfg,
        tokens,
        checked,
        max_rel_error: max_rel,
        worst_entry: worst,
    })
}

/// Random small configurations: `N` from {1, 2, 4, 8}, `1 <= K <= N`,
/// every dimension in `1..=16`, one to four tokens.
pub fn random_configs(seed: u64, count: usize) -> Vec<(MopConfig, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = [1, 2, 4, 8][i % 4];
            let cfg = MopConfig {
                n_projectors: n,
                top_k: rng.random_range(1..=n),
                noise_sigma: 0.0,
                c_in: rng.random_range(1..=16),
                hidden: rng.random_range(1..=16),
                c_out: rng.random_range(1..=16),
                router_hidden: rng.random_range(1..=16),
                mode: Mode::Inference,
            };
            (cfg, rng.random_range(1..=4))
        })
        .collect()
}

/// Runs [`check_config`] on `count` random configurations.
pub fn gradcheck(seed: u64, count: usize) -> Result<GradCheckReport, MopError> {
    let mut cases = Vec::with_capacity(count);
    for (i, (cfg, tokens)) in random_configs(seed, count).into_iter().enumerate() {
        cases.push(check_config(&cfg, tokens, seed.wrapping_add(i as u64 + 1))?);
    }
    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed,
        cases,
        max_rel_error,
    })
}
