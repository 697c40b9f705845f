use serde::{Deserialize, Serialize};

use super::MopError;

/// Whether routing noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    #[default]
    Inference,
}

/// Hyperparameters and dimensions of a mixture-of-projectors layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MopConfig {
    pub n_projectors: usize,
    pub top_k: usize,
    /// Standard deviation of the Gaussian noise added to the router input.
    /// Only used in [`Mode::Training`].
    pub noise_sigma: f64,
    pub c_in: usize,
    pub hidden: usize,
    pub c_out: usize,
    pub router_hidden: usize,
    #[serde(default)]
    pub mode: Mode,
}

impl MopConfig {
    /// Eight projectors, two active per token, unit routing noise.
    pub fn standard(c_in: usize, hidden: usize, c_out: usize) -> Self {
        Self {
            n_projectors: 8,
            top_k: 2,
            noise_sigma: 1.0,
            c_in,
            hidden,
            c_out,
            router_hidden: hidden,
            mode: Mode::Training,
        }
    }

    pub fn validate(&self) -> Result<(), MopError> {
        let bad = |msg: String| Err(MopError::InvalidConfig(msg));
        if self.n_projectors == 0 {
            return bad("n_projectors must be at least 1".into());
        }
        if self.top_k == 0 || self.top_k > self.n_projectors {
            return bad(format!(
                "top_k must satisfy 1 <= top_k <= n_projectors ({}), got {}",
                self.n_projectors, self.top_k
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        for (name, v) in [
            ("c_in", self.c_in),
            ("hidden", self.hidden),
            ("c_out", self.c_out),
            ("router_hidden", self.router_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    /// Noise standard deviation actually applied under the current mode.
    pub fn effective_sigma(&self) -> f64 {
        match self.mode {
            Mode::Training => self.noise_sigma,
            Mode::Inference => 0.0,
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_above_n_rejected() {
        let mut cfg = MopConfig::standard(4, 4, 4);
        cfg.top_k = 9;
        assert!(matches!(cfg.validate(), Err(MopError::InvalidConfig(_))));
        cfg.top_k = 0;
        assert!(cfg.validate().is_err());
        cfg.top_k = 8;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn sigma_only_in_training() {
        let cfg = MopConfig::standard(2, 2, 2);
        assert_eq!(cfg.effective_sigma(), 1.0);
        assert_eq!(cfg.with_mode(Mode::Inference).effective_sigma(), 0.0);
    }
}
