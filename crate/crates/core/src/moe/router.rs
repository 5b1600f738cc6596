//! Top-k routing with masked candidate sets and renormalized gates.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub token_index: usize,
    pub layer: usize,
    pub expert_indices: Vec<usize>,
    pub gate_weights: Vec<f64>,
}

/// Picks the top `min(k, |active|)` experts by logit among the active set
/// (ties go to the lower index) and softmaxes over the selected logits only.
///
/// `active == None` means every expert is a candidate.
pub fn select_experts(logits: &[f64], k: usize, active: Option<&[bool]>) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut candidates: Vec<usize> = match active {
        Some(mask) => {
            if mask.len() != logits.len() {
                return Err(Error::Config(format!(
                    "active mask has {} entries for {} experts",
                    mask.len(),
                    logits.len()
                )));
            }
            (0..logits.len()).filter(|&e| mask[e]).collect()
        }
        None => (0..logits.len()).collect(),
    };
    if candidates.is_empty() {
        return Err(Error::Config("active expert set is empty".into()));
    }
    // stable sort keeps ascending index order among equal logits
    candidates.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    candidates.truncate(k.min(candidates.len()));
    let mut gates: Vec<f64> = candidates.iter().map(|&e| logits[e]).collect();
    softmax_in_place(&mut gates);
    Ok((candidates, gates))
}

/// Routes one hidden vector through a `d_model × E` router matrix.
pub fn route(
    hidden: ArrayView1<f64>,
    router: &Mat,
    k: usize,
    active: Option<&[bool]>,
    layer: usize,
    token_index: usize,
) -> Result<RoutingDecision> {
    let logits = hidden.dot(router);
    let (expert_indices, gate_weights) = select_experts(logits.as_slice().expect("contiguous"), k, active)?;
    Ok(RoutingDecision { token_index, layer, expert_indices, gate_weights })
}

/// Switch-style auxiliary balance loss, `E · Σᵢ fᵢ·Pᵢ`, where `fᵢ` is the
/// fraction of tokens whose top-1 expert is `i` and `Pᵢ` the mean router
/// probability of expert `i`. `top1_counts` and `prob_sums` are per expert.
pub fn load_balance_loss(top1_counts: &[f64], prob_sums: &[f64], n_tokens: usize) -> f64 {
    if n_tokens == 0 {
        return 0.0;
    }
    let n = n_tokens as f64;
    let e = top1_counts.len() as f64;
    e * top1_counts.iter().zip(prob_sums).map(|(c, p)| (c / n) * (p / n)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOGITS: [f64; 4] = [2.0, 1.0, 0.5, 0.1];

    #[test]
    fn top_two_of_four() {
        let (idx, g) = select_experts(&LOGITS, 2, None).unwrap();
        assert_eq!(idx, vec![0, 1]);
        let e2 = 2f64.exp();
        let e1 = 1f64.exp();
        assert!((g[0] - e2 / (e2 + e1)).abs() < 1e-12);
        assert!((g[0] - 0.7311).abs() < 1e-4 && (g[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn single_expert_gets_unit_gate() {
        let (idx, g) = select_experts(&LOGITS, 1, None).unwrap();
        assert_eq!((idx, g), (vec![0], vec![1.0]));
    }

    #[test]
    fn full_k_equals_full_softmax() {
        let (idx, g) = select_experts(&LOGITS, 4, None).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let mut full = LOGITS.to_vec();
        softmax_in_place(&mut full);
        for (a, b) in g.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_candidates() {
        let mask = [false, false, true, true];
        let (idx, g) = select_experts(&LOGITS, 2, Some(&mask)).unwrap();
        assert_eq!(idx, vec![2, 3]);
        assert!((g[0] - 0.5987).abs() < 1e-4 && (g[1] - 0.4013).abs() < 1e-4);
        // k larger than the active set shrinks to the set size
        let (idx, g) = select_experts(&LOGITS, 2, Some(&[false, true, false, false])).unwrap();
        assert_eq!((idx, g), (vec![1], vec![1.0]));
    }

    #[test]
    fn empty_active_set_is_a_config_error() {
        assert!(matches!(select_experts(&LOGITS, 2, Some(&[false; 4])), Err(Error::Config(_))));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let (idx, _) = select_experts(&[1.0, 3.0, 3.0, 3.0], 2, None).unwrap();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn route_uses_router_matrix() {
        let router = Mat::from_shape_vec((2, 4), vec![2.0, 1.0, 0.5, 0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let h = ndarray::arr1(&[1.0, 5.0]);
        let d = route(h.view(), &router, 2, None, 3, 7).unwrap();
        assert_eq!((d.layer, d.token_index, d.expert_indices.clone()), (3, 7, vec![0, 1]));
    }

    #[test]
    fn balance_loss_anchor_values() {
        // uniform routing over 8 experts and 80 tokens
        let counts = vec![10.0; 8];
        let probs = vec![10.0; 8];
        assert!((load_balance_loss(&counts, &probs, 80) - 1.0).abs() < 1e-12);
        // everything on expert 0 with probability 1
        let mut counts = vec![0.0; 8];
        counts[0] = 80.0;
        assert!((load_balance_loss(&counts, &counts, 80) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn balance_loss_matches_hand_computation() {
        // 3 tokens, 2 experts: router probs (0.7,0.3), (0.4,0.6), (0.9,0.1)
        let probs = [[0.7, 0.3], [0.4, 0.6], [0.9, 0.1]];
        let mut top1 = [0.0; 2];
        let mut psum = [0.0; 2];
        for p in probs {
            top1[if p[0] >= p[1] { 0 } else { 1 }] += 1.0;
            psum[0] += p[0];
            psum[1] += p[1];
        }
        // f = (2/3, 1/3), P = (2/3, 1/3) → 2 · (4/9 + 1/9) = 10/9
        assert!((load_balance_loss(&top1, &psum, 3) - 10.0 / 9.0).abs() < 1e-12);
    }
}
