use serde::{Deserialize, Serialize};

use super::RoutingDecision;

/// How often each projector was chosen across a set of routing decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterUtilization {
    /// Share of all `tokens x top_k` selections per projector; sums to one.
    pub selection_share: Vec<f64>,
    /// Share of tokens whose selected set includes the projector; sums to `top_k`.
    pub token_share: Vec<f64>,
    pub tokens: usize,
}

/// Histogram of projector selections over `decisions`.
pub fn router_utilization(decisions: &[RoutingDecision]) -> RouterUtilization {
    let n = decisions.first().map_or(0, |d| d.weights.cols());
    let mut counts = vec![0usize; n];
    let mut selections = 0usize;
    let mut tokens = 0usize;
    for d in decisions {
        for sel in &d.selected {
            tokens += 1;
            for &k in sel {
                counts[k] += 1;
                selections += 1;
            }
        }
    }
    let share = |denom: usize| -> Vec<f64> {
        counts
            .iter()
            .map(|&c| if denom == 0 { 0.0 } else { c as f64 / denom as f64 })
            .collect()
    };
    RouterUtilization {
        selection_share: share(selections),
        token_share: share(tokens),
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mop::router::{masked_softmax, top_k_indices};
    use crate::mop::Matrix2D;

    #[test]
    fn all_to_first_projector() {
        let d = RoutingDecision {
            weights: Matrix2D::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            selected: vec![vec![0], vec![0]],
        };
        let u = router_utilization(&[d]);
        assert_eq!(u.selection_share, vec![1.0, 0.0]);
        assert_eq!(u.token_share, vec![1.0, 0.0]);
    }

    #[test]
    fn uniform_random_router_spreads_load() {
        use rand::{Rng, SeedableRng};
        let (n, k, tokens) = (8, 2, 10_000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut weights = Matrix2D::zeros(tokens, n);
        let mut selected = Vec::with_capacity(tokens);
        for t in 0..tokens {
            let logits: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let sel = top_k_indices(&logits, k);
            weights.row_mut(t).copy_from_slice(&masked_softmax(&logits, &sel));
            selected.push(sel);
        }
        let u = router_utilization(&[RoutingDecision { weights, selected }]);
        let total: f64 = u.selection_share.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for &s in &u.token_share {
            assert!((s - k as f64 / n as f64).abs() < 0.05, "{:?}", u.token_share);
        }
    }
}
