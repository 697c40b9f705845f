use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix2D, MopConfig, MopError};

/// Two-layer projector `W2 · gelu(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorParams {
    pub w1: Matrix2D,
    pub b1: Vec<f64>,
    pub w2: Matrix2D,
    pub b2: Vec<f64>,
}

/// Router MLP producing one contribution logit per projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterParams {
    pub w1: Matrix2D,
    pub b1: Vec<f64>,
    pub w2: Matrix2D,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopParams {
    pub projectors: Vec<ProjectorParams>,
    pub router: RouterParams,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix2D {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix2D::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..=a))
}

fn check_layer(
    what: &str,
    w: &Matrix2D,
    b: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(), MopError> {
    let mismatch = |part: &str, expected: usize, found: usize| MopError::ShapeMismatch {
        what: format!("{what}.{part}"),
        expected,
        found,
    };
    if w.rows() != rows {
        return Err(mismatch("w rows", rows, w.rows()));
    }
    if w.cols() != cols {
        return Err(mismatch("w cols", cols, w.cols()));
    }
    if b.len() != cols {
        return Err(mismatch("b len", cols, b.len()));
    }
    Ok(())
}

impl ProjectorParams {
    pub fn zeros(c_in: usize, hidden: usize, c_out: usize) -> Self {
        Self {
            w1: Matrix2D::zeros(c_in, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix2D::zeros(hidden, c_out),
            b2: vec![0.0; c_out],
        }
    }

    pub fn init(rng: &mut ChaCha8Rng, c_in: usize, hidden: usize, c_out: usize) -> Self {
        Self {
            w1: xavier(rng, c_in, hidden),
            b1: vec![0.0; hidden],
            w2: xavier(rng, hidden, c_out),
            b2: vec![0.0; c_out],
        }
    }

    pub fn c_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn c_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self, c_in: usize, hidden: usize, c_out: usize) -> Result<(), MopError> {
        check_layer("projector.layer1", &self.w1, &self.b1, c_in, hidden)?;
        check_layer("projector.layer2", &self.w2, &self.b2, hidden, c_out)
    }

    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

impl RouterParams {
    pub fn zeros(c_in: usize, hidden: usize, n: usize) -> Self {
        Self {
            w1: Matrix2D::zeros(c_in, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix2D::zeros(hidden, n),
            b2: vec![0.0; n],
        }
    }

    pub fn init(rng: &mut ChaCha8Rng, c_in: usize, hidden: usize, n: usize) -> Self {
        Self {
            w1: xavier(rng, c_in, hidden),
            b1: vec![0.0; hidden],
            w2: xavier(rng, hidden, n),
            b2: vec![0.0; n],
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self, cfg: &MopConfig) -> Result<(), MopError> {
        check_layer("router.layer1", &self.w1, &self.b1, cfg.c_in, cfg.router_hidden)?;
        check_layer(
            "router.layer2",
            &self.w2,
            &self.b2,
            cfg.router_hidden,
            cfg.n_projectors,
        )
    }
}

impl MopParams {
    /// Xavier-uniform weights and zero biases, reproducible per seed.
    pub fn init(cfg: &MopConfig, seed: u64) -> Result<Self, MopError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projectors = (0..cfg.n_projectors)
            .map(|_| ProjectorParams::init(&mut rng, cfg.c_in, cfg.hidden, cfg.c_out))
            .collect();
        let router = RouterParams::init(&mut rng, cfg.c_in, cfg.router_hidden, cfg.n_projectors);
        Ok(Self { projectors, router })
    }

    pub fn zeros_like(cfg: &MopConfig) -> Self {
        Self {
            projectors: (0..cfg.n_projectors)
                .map(|_| ProjectorParams::zeros(cfg.c_in, cfg.hidden, cfg.c_out))
                .collect(),
            router: RouterParams::zeros(cfg.c_in, cfg.router_hidden, cfg.n_projectors),
        }
    }

    pub fn validate(&self, cfg: &MopConfig) -> Result<(), MopError> {
        if self.projectors.len() != cfg.n_projectors {
            return Err(MopError::ShapeMismatch {
                what: "projector count".into(),
                expected: cfg.n_projectors,
                found: self.projectors.len(),
            });
        }
        for p in &self.projectors {
            p.validate(cfg.c_in, cfg.hidden, cfg.c_out)?;
        }
        self.router.validate(cfg)
    }

    /// All parameter tensors in a fixed order: each projector's
    /// `w1, b1, w2, b2`, then the router's.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * (self.projectors.len() + 1));
        for p in &self.projectors {
            out.extend(p.slices());
        }
        let r = &self.router;
        out.extend([r.w1.as_slice(), &r.b1[..], r.w2.as_slice(), &r.b2[..]]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * (self.projectors.len() + 1));
        for p in &mut self.projectors {
            out.extend(p.slices_mut());
        }
        let r = &mut self.router;
        out.extend([
            r.w1.as_mut_slice(),
            &mut r.b1[..],
            r.w2.as_mut_slice(),
            &mut r.b2[..],
        ]);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = MopConfig::standard(6, 10, 4);
        let a = MopParams::init(&cfg, 3).unwrap();
        let b = MopParams::init(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MopParams::init(&cfg, 4).unwrap());
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.projectors[0].w1.as_slice().iter().all(|v| v.abs() <= bound));
        assert!(a.projectors[0].b1.iter().all(|&v| v == 0.0));
        a.validate(&cfg).unwrap();
    }

    #[test]
    fn wrong_projector_count_detected() {
        let cfg = MopConfig::standard(2, 2, 2);
        let mut p = MopParams::zeros_like(&cfg);
        p.projectors.pop();
        assert!(matches!(
            p.validate(&cfg),
            Err(MopError::ShapeMismatch { expected: 8, found: 7, .. })
        ));
    }
}
