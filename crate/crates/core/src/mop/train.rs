use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{backward_from_cache, forward_cached};
use super::loss::mse_with_grad;
use super::{mop_forward, Matrix2D, Mode, MopConfig, MopError, MopParams};

/// One training example: visual token embeddings and the embeddings the
/// language side expects for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub input: Matrix2D,
    pub target: Matrix2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub steps: usize,
    /// Number of pairs per step.
    pub batch: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 2000,
            batch: 8,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MopParams,
    /// Training-mode batch loss recorded before each update.
    pub loss_curve: Vec<f64>,
    /// Inference-mode mean squared error over the full dataset after training.
    pub final_loss: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &MopParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MopParams, grads: &MopParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn check_dataset(dataset: &[TrainPair], cfg: &MopConfig) -> Result<(), MopError> {
    if dataset.is_empty() {
        return Err(MopError::EmptyDataset);
    }
    for (i, pair) in dataset.iter().enumerate() {
        if pair.input.cols() != cfg.c_in {
            return Err(MopError::ShapeMismatch {
                what: format!("dataset[{i}].input columns (c_in)"),
                expected: cfg.c_in,
                found: pair.input.cols(),
            });
        }
        if pair.target.shape() != (pair.input.rows(), cfg.c_out) {
            return Err(MopError::ShapeMismatch {
                what: format!("dataset[{i}].target columns (c_out)"),
                expected: cfg.c_out,
                found: pair.target.cols(),
            });
        }
    }
    Ok(())
}

/// Mean squared error of the layer over `dataset` with routing noise off.
pub fn evaluate_mse(dataset: &[TrainPair], params: &MopParams, cfg: &MopConfig) -> Result<f64, MopError> {
    check_dataset(dataset, cfg)?;
    let cfg = cfg.with_mode(Mode::Inference);
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in dataset {
        let (out, _) = mop_forward(&pair.input, params, &cfg, 0)?;
        let (mse, _) = mse_with_grad(&out, &pair.target)?;
        let n = out.as_slice().len();
        sum += mse * n as f64;
        count += n;
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains a freshly initialized layer by minimizing mean squared error to the
/// targets. Routing noise is active (training mode) during updates.
///
/// Every random choice, including initialization, batch sampling and routing
/// noise, derives from `hyper.seed`, so a fixed seed reproduces the loss
/// curve bit for bit.
pub fn train_mop(dataset: &[TrainPair], cfg: &MopConfig, hyper: &TrainHyper) -> Result<TrainOutcome, MopError> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    if hyper.batch == 0 || hyper.steps == 0 {
        return Err(MopError::InvalidConfig("batch and steps must be at least 1".into()));
    }
    if !(hyper.lr.is_finite() && hyper.lr > 0.0) {
        return Err(MopError::InvalidConfig(format!("learning rate must be positive, got {}", hyper.lr)));
    }

    let train_cfg = cfg.with_mode(Mode::Training);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = MopParams::init(cfg, rng.next_u64())?;
    let mut adam = Adam::new(&params);
    let mut loss_curve = Vec::with_capacity(hyper.steps);

    for step in 0..hyper.steps {
        let picks: Vec<&TrainPair> = (0..hyper.batch)
            .map(|_| &dataset[rng.random_range(0..dataset.len())])
            .collect();
        let input = Matrix2D::vstack(&picks.iter().map(|p| &p.input).collect::<Vec<_>>())?;
        let target = Matrix2D::vstack(&picks.iter().map(|p| &p.target).collect::<Vec<_>>())?;
        let noise_seed = rng.next_u64();

        let cache = forward_cached(&input, &params, &train_cfg, noise_seed, None).map_err(|e| match e {
            MopError::NonFinite(what) => MopError::Diverged {
                step,
                detail: format!("non-finite {what}; last loss {:?}", loss_curve.last()),
            },
            other => other,
        })?;
        let (loss, grad) = mse_with_grad(cache.output(), &target)?;
        if !loss.is_finite() {
            return Err(MopError::Diverged {
                step,
                detail: format!("loss {loss}; last finite loss {:?}", loss_curve.last()),
            });
        }
        loss_curve.push(loss);
        let grads = backward_from_cache(&cache, &input, &params, &train_cfg, &grad)?;
        match hyper.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.params.tensors()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= hyper.lr * gi;
                    }
                }
            }
            Optimizer::Adam => adam.step(&mut params, &grads.params, hyper.lr),
        }
        if !params.is_finite() {
            return Err(MopError::Diverged {
                step,
                detail: format!("parameters became non-finite after loss {loss}"),
            });
        }
    }

    let final_loss = evaluate_mse(dataset, &params, cfg)?;
    Ok(TrainOutcome {
        params,
        loss_curve,
        final_loss,
    })
}

/// Writes a loss curve as CSV with header `step,loss`.
pub fn write_loss_curve<W: Write>(curve: &[f64], out: W) -> Result<(), MopError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss"])?;
    for (step, loss) in curve.iter().enumerate() {
        w.write_record([step.to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic alignment data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    /// Input width, including the domain flag column when `two_domain`.
    pub c_in: usize,
    pub c_out: usize,
    pub pairs: usize,
    pub tokens_per_pair: usize,
    /// When set, the last input column is a domain flag (+1 or -1, shared by
    /// all tokens of a pair) and the target uses one of two linear maps
    /// depending on it. Otherwise every target is one linear map of the input.
    pub two_domain: bool,
    pub seed: u64,
}

impl SyntheticTask {
    /// Two-domain task used for the projector-count sweep.
    pub fn two_domain(seed: u64) -> Self {
        Self {
            c_in: 9,
            c_out: 8,
            pairs: 64,
            tokens_per_pair: 8,
            two_domain: true,
            seed,
        }
    }

    pub fn single_linear(seed: u64) -> Self {
        Self {
            c_in: 4,
            c_out: 4,
            pairs: 64,
            tokens_per_pair: 8,
            two_domain: false,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Vec<TrainPair>, MopError> {
        let features = if self.two_domain { self.c_in - 1 } else { self.c_in };
        if features == 0 || self.c_out == 0 {
            return Err(MopError::InvalidConfig("synthetic task needs at least one feature column".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut map = || Matrix2D::from_fn(features, self.c_out, |_, _| rng.random_range(-1.0..1.0));
        let (a, b) = (map(), map());
        let mut pairs = Vec::with_capacity(self.pairs);
        for i in 0..self.pairs {
            let flag = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = Matrix2D::from_fn(self.tokens_per_pair, features, |_, _| rng.random_range(-1.0..1.0));
            let target = if self.two_domain && flag < 0.0 { x.matmul(&b)? } else { x.matmul(&a)? };
            let input = if self.two_domain {
                Matrix2D::from_fn(self.tokens_per_pair, self.c_in, |r, c| {
                    if c < features {
                        x.get(r, c)
                    } else {
                        flag
                    }
                })
            } else {
                x
            };
            pairs.push(TrainPair { input, target });
        }
        Ok(pairs)
    }
}
