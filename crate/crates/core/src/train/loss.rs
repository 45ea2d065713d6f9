use super::TrainError;
use crate::model::{is_weight_matrix, BoundParams, ParamStore, HEAD_WEIGHTS};
use crate::tensor::{Graph, Var};

/// Names of the parameters the squared-norm penalty covers.
pub fn l2_targets(params: &ParamStore, all_weights: bool) -> Vec<String> {
    params
        .names()
        .iter()
        .filter(|n| {
            if all_weights {
                is_weight_matrix(n)
            } else {
                HEAD_WEIGHTS.contains(&n.as_str())
            }
        })
        .cloned()
        .collect()
}

/// Mean cross-entropy of 1-based `labels` under `logits[B, n]`, plus
/// `l2 · Σ‖W‖²` over the named weights.
pub fn cross_entropy_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[u16],
    params: &BoundParams,
    penalized: &[String],
    l2: f64,
) -> Result<Var, TrainError> {
    let n = g.shape(logits)[1];
    let targets = labels
        .iter()
        .map(|&l| {
            if l == 0 || l as usize > n {
                Err(TrainError::Label { label: l, n_classes: n })
            } else {
                Ok(l as usize - 1)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut loss = g.softmax_cross_entropy(logits, &targets)?;
    if l2 > 0.0 {
        for name in penalized {
            let w = params.var(name);
            let sq = g.mul(w, w)?;
            let s = g.sum(sq)?;
            let term = g.scale(s, l2)?;
            loss = g.add(loss, term)?;
        }
    }
    Ok(loss)
}
