use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::gelu;
use super::matrix::affine;
use super::{Matrix2D, MopConfig, MopError, RouterParams};

/// Per-token routing weights over the projectors.
///
/// Each row of `weights` has exactly `top_k` nonzero entries, which sum to one.
/// `selected[t]` lists the chosen projector indices for token `t` in
/// descending logit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub weights: Matrix2D,
    pub selected: Vec<Vec<usize>>,
}

/// Intermediate router values for one token, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct RouterRow {
    pub noisy_input: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct RouterPass {
    pub rows: Vec<RouterRow>,
    pub decision: RoutingDecision,
}

/// Gaussian noise `N(0, sigma^2)` for an `rows x cols` router input, drawn
/// row-major from a ChaCha8 stream seeded with `seed`.
pub fn routing_noise(rows: usize, cols: usize, sigma: f64, seed: u64) -> Matrix2D {
    if sigma == 0.0 {
        return Matrix2D::zeros(rows, cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite and >= 0");
    Matrix2D::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
}

/// Indices of the `k` largest values, largest first. Ties go to the lower index.
pub fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Softmax restricted to `selected`; every other entry is exactly zero.
pub fn masked_softmax(logits: &[f64], selected: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    let max = selected
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in selected {
        let e = (logits[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in selected {
        out[i] /= total;
    }
    out
}

/// Router logits for every token, without noise. Useful for diagnostics.
pub fn router_logits(input: &Matrix2D, router: &RouterParams) -> Result<Matrix2D, MopError> {
    if input.cols() != router.w1.rows() {
        return Err(MopError::ShapeMismatch {
            what: "router input columns".into(),
            expected: router.w1.rows(),
            found: input.cols(),
        });
    }
    let rows: Vec<Vec<f64>> = input
        .iter_rows()
        .map(|x| {
            let act: Vec<f64> = affine(x, &router.w1, &router.b1).into_iter().map(gelu).collect();
            affine(&act, &router.w2, &router.b2)
        })
        .collect();
    let mut m = Matrix2D::zeros(input.rows(), router.n_outputs());
    for (r, row) in rows.iter().enumerate() {
        m.row_mut(r).copy_from_slice(row);
    }
    Ok(m)
}

pub(crate) fn router_pass(
    input: &Matrix2D,
    router: &RouterParams,
    cfg: &MopConfig,
    seed: u64,
    fixed: Option<&[Vec<usize>]>,
) -> Result<RouterPass, MopError> {
    cfg.validate()?;
    router.validate(cfg)?;
    if input.cols() != cfg.c_in {
        return Err(MopError::ShapeMismatch {
            what: "input columns (c_in)".into(),
            expected: cfg.c_in,
            found: input.cols(),
        });
    }
    if let Some(sel) = fixed {
        if sel.len() != input.rows() {
            return Err(MopError::ShapeMismatch {
                what: "fixed selection rows".into(),
                expected: input.rows(),
                found: sel.len(),
            });
        }
        for s in sel {
            if s.len() != cfg.top_k || s.iter().any(|&i| i >= cfg.n_projectors) {
                return Err(MopError::InvalidConfig(format!(
                    "fixed selection {s:?} is not a top_k={} subset of {} projectors",
                    cfg.top_k, cfg.n_projectors
                )));
            }
        }
    }

    let noise = routing_noise(input.rows(), input.cols(), cfg.effective_sigma(), seed);
    let mut rows = Vec::with_capacity(input.rows());
    let mut weights = Matrix2D::zeros(input.rows(), cfg.n_projectors);
    let mut selected = Vec::with_capacity(input.rows());

    for t in 0..input.rows() {
        let noisy_input: Vec<f64> = input
            .row(t)
            .iter()
            .zip(noise.row(t))
            .map(|(x, n)| x + n)
            .collect();
        let pre = affine(&noisy_input, &router.w1, &router.b1);
        let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let logits = affine(&act, &router.w2, &router.b2);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(MopError::NonFinite(format!("router logits for token {t}")));
        }
        let chosen = match fixed {
            Some(sel) => sel[t].clone(),
            None => top_k_indices(&logits, cfg.top_k),
        };
        weights
            .row_mut(t)
            .copy_from_slice(&masked_softmax(&logits, &chosen));
        selected.push(chosen);
        rows.push(RouterRow {
            noisy_input,
            pre,
            act,
        });
    }

    Ok(RouterPass {
        rows,
        decision: RoutingDecision { weights, selected },
    })
}

/// Computes per-token routing weights.
///
/// In training mode the router sees `input + noise` with noise drawn from
/// `N(0, sigma^2)` using `rng_seed`; in inference mode it sees `input`.
/// The `top_k` largest logits are kept and softmax-normalized among
/// themselves, so non-selected projectors receive a weight of exactly zero.
pub fn route(
    input: &Matrix2D,
    router: &RouterParams,
    cfg: &MopConfig,
    rng_seed: u64,
) -> Result<RoutingDecision, MopError> {
    Ok(router_pass(input, router, cfg, rng_seed, None)?.decision)
}
