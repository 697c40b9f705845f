use super::activation::{gelu, gelu_grad};
use super::matrix::{affine, mat_vec_t_acc, outer_acc};
use super::router::{router_pass, RouterPass};
use super::{Matrix2D, MopConfig, MopError, MopParams, ProjectorParams, RoutingDecision};

/// Hidden activations of one projector evaluated on one token.
#[derive(Debug, Clone)]
struct ProjectorTrace {
    index: usize,
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

fn projector_row(x: &[f64], p: &ProjectorParams, index: usize) -> ProjectorTrace {
    let pre = affine(x, &p.w1, &p.b1);
    let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let out = affine(&act, &p.w2, &p.b2);
    ProjectorTrace {
        index,
        pre,
        act,
        out,
    }
}

/// Applies one projector to every token row: `gelu(x W1 + b1) W2 + b2`.
pub fn projector_forward(input: &Matrix2D, p: &ProjectorParams) -> Result<Matrix2D, MopError> {
    if input.cols() != p.c_in() {
        return Err(MopError::ShapeMismatch {
            what: "input columns (c_in)".into(),
            expected: p.c_in(),
            found: input.cols(),
        });
    }
    if p.b1.len() != p.w1.cols() || p.w2.rows() != p.w1.cols() || p.b2.len() != p.w2.cols() {
        return Err(MopError::ShapeMismatch {
            what: "projector hidden width".into(),
            expected: p.w1.cols(),
            found: p.w2.rows(),
        });
    }
    let mut out = Matrix2D::zeros(input.rows(), p.c_out());
    for (t, x) in input.iter_rows().enumerate() {
        out.row_mut(t).copy_from_slice(&projector_row(x, p, 0).out);
    }
    Ok(out)
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    router: RouterPass,
    tokens: Vec<Vec<ProjectorTrace>>,
    output: Matrix2D,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix2D {
        &self.output
    }

    pub fn decision(&self) -> &RoutingDecision {
        &self.router.decision
    }
}

/// Full forward pass, optionally with a pinned top-k selection per token.
pub fn forward_cached(
    input: &Matrix2D,
    params: &MopParams,
    cfg: &MopConfig,
    rng_seed: u64,
    selection: Option<&[Vec<usize>]>,
) -> Result<ForwardCache, MopError> {
    params.validate(cfg)?;
    let router = router_pass(input, &params.router, cfg, rng_seed, selection)?;
    let mut output = Matrix2D::zeros(input.rows(), cfg.c_out);
    let mut tokens = Vec::with_capacity(input.rows());
    for (t, x) in input.iter_rows().enumerate() {
        let weights = router.decision.weights.row(t);
        let mut traces = Vec::with_capacity(cfg.top_k);
        let dst = output.row_mut(t);
        for &k in &router.decision.selected[t] {
            let trace = projector_row(x, &params.projectors[k], k);
            for (d, o) in dst.iter_mut().zip(&trace.out) {
                *d += weights[k] * o;
            }
            traces.push(trace);
        }
        tokens.push(traces);
    }
    if !output.is_finite() {
        return Err(MopError::NonFinite("mixture output".into()));
    }
    Ok(ForwardCache {
        router,
        tokens,
        output,
    })
}

/// Mixture-of-projectors forward pass.
///
/// Each token is routed independently; its output is the routing-weighted sum
/// of the outputs of its selected projectors. Unselected projectors are not
/// evaluated.
pub fn mop_forward(
    input: &Matrix2D,
    params: &MopParams,
    cfg: &MopConfig,
    rng_seed: u64,
) -> Result<(Matrix2D, RoutingDecision), MopError> {
    let cache = forward_cached(input, params, cfg, rng_seed, None)?;
    Ok((cache.output, cache.router.decision))
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MopGrads {
    pub params: MopParams,
    pub input: Matrix2D,
}

/// Reverse-mode pass through a cached forward evaluation.
///
/// The top-k selection is held fixed; the softmax over the selected logits is
/// differentiated exactly.
pub fn backward_from_cache(
    cache: &ForwardCache,
    input: &Matrix2D,
    params: &MopParams,
    cfg: &MopConfig,
    upstream: &Matrix2D,
) -> Result<MopGrads, MopError> {
    if upstream.shape() != cache.output.shape() {
        return Err(MopError::ShapeMismatch {
            what: "upstream gradient rows x cols vs recorded forward".into(),
            expected: cache.output.rows() * cache.output.cols(),
            found: upstream.rows() * upstream.cols(),
        });
    }
    let mut grads = MopParams::zeros_like(cfg);
    let mut d_input = Matrix2D::zeros(input.rows(), input.cols());

    for (t, traces) in cache.tokens.iter().enumerate() {
        let g = upstream.row(t);
        let weights = cache.router.decision.weights.row(t);
        let x = input.row(t);
        let dx = d_input.row_mut(t);

        // d loss / d weight_k = <g, P_k(x)>
        let mut d_weight = vec![0.0; cfg.n_projectors];
        for tr in traces {
            let k = tr.index;
            d_weight[k] = g.iter().zip(&tr.out).map(|(a, b)| a * b).sum();

            let d_out: Vec<f64> = g.iter().map(|v| v * weights[k]).collect();
            let gp = &mut grads.projectors[k];
            let p = &params.projectors[k];
            outer_acc(&mut gp.w2, &tr.act, &d_out);
            for (b, d) in gp.b2.iter_mut().zip(&d_out) {
                *b += d;
            }
            let mut d_act = vec![0.0; tr.act.len()];
            mat_vec_t_acc(&p.w2, &d_out, &mut d_act);
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&tr.pre)
                .map(|(da, &z)| da * gelu_grad(z))
                .collect();
            outer_acc(&mut gp.w1, x, &d_pre);
            for (b, d) in gp.b1.iter_mut().zip(&d_pre) {
                *b += d;
            }
            mat_vec_t_acc(&p.w1, &d_pre, dx);
        }

        // Softmax over the selected logits: dz_j = w_j (dw_j - sum_i w_i dw_i).
        let selected = &cache.router.decision.selected[t];
        let mean: f64 = selected.iter().map(|&i| weights[i] * d_weight[i]).sum();
        let mut d_logits = vec![0.0; cfg.n_projectors];
        for &j in selected {
            d_logits[j] = weights[j] * (d_weight[j] - mean);
        }

        let row = &cache.router.rows[t];
        let r = &params.router;
        let gr = &mut grads.router;
        outer_acc(&mut gr.w2, &row.act, &d_logits);
        for (b, d) in gr.b2.iter_mut().zip(&d_logits) {
            *b += d;
        }
        let mut d_act = vec![0.0; row.act.len()];
        mat_vec_t_acc(&r.w2, &d_logits, &mut d_act);
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&row.pre)
            .map(|(da, &z)| da * gelu_grad(z))
            .collect();
        // The noise is additive, so d/d(input) equals d/d(noisy input).
        outer_acc(&mut gr.w1, &row.noisy_input, &d_pre);
        for (b, d) in gr.b1.iter_mut().zip(&d_pre) {
            *b += d;
        }
        mat_vec_t_acc(&r.w1, &d_pre, dx);
    }

    Ok(MopGrads {
        params: grads,
        input: d_input,
    })
}

/// Gradients of `sum(upstream ⊙ mop_forward(input))` for every parameter and
/// the input. The forward pass is re-run with the same seed and mode, so the
/// routing noise and selection match the original forward.
pub fn mop_backward(
    input: &Matrix2D,
    params: &MopParams,
    cfg: &MopConfig,
    rng_seed: u64,
    upstream: &Matrix2D,
) -> Result<MopGrads, MopError> {
    let cache = forward_cached(input, params, cfg, rng_seed, None)?;
    backward_from_cache(&cache, input, params, cfg, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mop::{Mode, RouterParams};

    fn small_cfg(n: usize, k: usize) -> MopConfig {
        MopConfig {
            n_projectors: n,
            top_k: k,
            noise_sigma: 0.0,
            c_in: 3,
            hidden: 5,
            c_out: 2,
            router_hidden: 4,
            mode: Mode::Inference,
        }
    }

    fn input() -> Matrix2D {
        Matrix2D::from_fn(6, 3, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin())
    }

    #[test]
    fn zero_projector_gives_zero() {
        let p = ProjectorParams::zeros(3, 4, 5);
        let out = projector_forward(&input(), &p).unwrap();
        assert_eq!(out, Matrix2D::zeros(6, 5));
    }

    #[test]
    fn identity_projector_applies_gelu() {
        let mut p = ProjectorParams::zeros(2, 2, 2);
        for i in 0..2 {
            p.w1.set(i, i, 1.0);
            p.w2.set(i, i, 1.0);
        }
        let x = Matrix2D::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let out = projector_forward(&x, &p).unwrap();
        assert!((out.get(0, 0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((out.get(0, 1) + 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn projector_matches_naive_loops() {
        let cfg = small_cfg(1, 1);
        let params = MopParams::init(&cfg, 11).unwrap();
        let p = &params.projectors[0];
        let x = input();
        let got = projector_forward(&x, p).unwrap();
        for t in 0..x.rows() {
            for o in 0..cfg.c_out {
                let mut acc = p.b2[o];
                for h in 0..cfg.hidden {
                    let mut z = p.b1[h];
                    for i in 0..cfg.c_in {
                        z += x.get(t, i) * p.w1.get(i, h);
                    }
                    let a = z * 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
                    acc += a * p.w2.get(h, o);
                }
                assert!((acc - got.get(t, o)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_shape_error_names_dimension() {
        let p = ProjectorParams::zeros(4, 2, 2);
        let err = projector_forward(&Matrix2D::zeros(1, 3), &p).unwrap_err();
        assert!(err.to_string().contains("c_in"));
    }

    #[test]
    fn single_projector_mixture_is_plain_projector() {
        let cfg = small_cfg(1, 1);
        let params = MopParams::init(&cfg, 5).unwrap();
        let (out, d) = mop_forward(&input(), &params, &cfg, 0).unwrap();
        assert_eq!(out, projector_forward(&input(), &params.projectors[0]).unwrap());
        assert!(d.weights.as_slice().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn equal_logits_average_two_linear_maps() {
        // gelu(u) - gelu(-u) = u, so [W, -W] / [V; -V] realizes x -> x W V exactly.
        let cfg = MopConfig {
            n_projectors: 2,
            top_k: 2,
            noise_sigma: 0.0,
            c_in: 2,
            hidden: 4,
            c_out: 2,
            router_hidden: 1,
            mode: Mode::Inference,
        };
        let linear = |a: [[f64; 2]; 2]| {
            let mut p = ProjectorParams::zeros(2, 4, 2);
            for i in 0..2 {
                p.w1.set(i, i, 1.0);
                p.w1.set(i, i + 2, -1.0);
                for j in 0..2 {
                    p.w2.set(i, j, a[i][j]);
                    p.w2.set(i + 2, j, -a[i][j]);
                }
            }
            p
        };
        let a = [[1.0, 2.0], [0.0, -1.0]];
        let b = [[-3.0, 0.5], [1.0, 1.0]];
        let params = MopParams {
            projectors: vec![linear(a), linear(b)],
            router: RouterParams::zeros(2, 1, 2),
        };
        let x = Matrix2D::from_rows(&[vec![0.4, -1.2], vec![2.0, 0.1]]).unwrap();
        let (out, _) = mop_forward(&x, &params, &cfg, 0).unwrap();
        for t in 0..2 {
            for j in 0..2 {
                let expect = (0..2)
                    .map(|i| x.get(t, i) * (a[i][j] + b[i][j]))
                    .sum::<f64>()
                    / 2.0;
                assert!((out.get(t, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = small_cfg(4, 2);
        let params = MopParams::init(&cfg, 9).unwrap();
        let g = mop_backward(&input(), &params, &cfg, 0, &Matrix2D::zeros(6, 2)).unwrap();
        assert_eq!(g.params, MopParams::zeros_like(&cfg));
        assert_eq!(g.input, Matrix2D::zeros(6, 3));
    }

    #[test]
    fn unrouted_projectors_get_no_gradient() {
        let cfg = small_cfg(4, 1);
        let mut params = MopParams::init(&cfg, 9).unwrap();
        params.router.b2 = vec![50.0, 0.0, -50.0, -50.0];
        let up = Matrix2D::from_fn(6, 2, |r, c| (r + c) as f64 + 0.5);
        let g = mop_backward(&input(), &params, &cfg, 0, &up).unwrap();
        for k in 1..4 {
            assert_eq!(g.params.projectors[k], ProjectorParams::zeros(3, 5, 2));
        }
        assert!(g.params.projectors[0].w2.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn upstream_shape_checked() {
        let cfg = small_cfg(2, 1);
        let params = MopParams::init(&cfg, 1).unwrap();
        let err = mop_backward(&input(), &params, &cfg, 0, &Matrix2D::zeros(6, 3)).unwrap_err();
        assert!(matches!(err, MopError::ShapeMismatch { .. }));
    }
}
