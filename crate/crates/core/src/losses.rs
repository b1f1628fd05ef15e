//! Loss terms of the joint objective.
//!
//! * supervised cross-entropy over the next-item softmax,
//! * one-step TD error with a double Q-learning target,
//! * the joint sum `ce + td`,
//! * the critic-weighted actor term `ce · Q(s, a)` with `Q` held constant.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Softmax probabilities, computed with max-subtraction.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut p = logits.mapv(|x| (x - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

/// `-log softmax(logits)[action]` and its gradient `p - onehot(action)`.
pub fn cross_entropy_with_grad(logits: ArrayView1<f64>, action: usize) -> Result<(f64, Array1<f64>)> {
    if action >= logits.len() {
        return Err(Error::ItemOutOfRange {
            id: action,
            n_items: logits.len(),
        });
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[action];
    let mut grad = logits.mapv(|x| (x - log_z).exp());
    grad[action] -= 1.0;
    Ok((loss, grad))
}

pub fn cross_entropy_loss(logits: ArrayView1<f64>, action: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, action).map(|(l, _)| l)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Double Q-learning target. The selector picks `a*` on the next state, the
/// evaluator scores it. Terminal transitions drop the bootstrap term.
pub fn double_q_target(
    reward: f64,
    gamma: f64,
    q_next_selector: ArrayView1<f64>,
    q_next_evaluator: ArrayView1<f64>,
    terminal: bool,
) -> Result<f64> {
    if q_next_selector.len() != q_next_evaluator.len() {
        return Err(Error::Shape(format!(
            "selector has {} actions, evaluator {}",
            q_next_selector.len(),
            q_next_evaluator.len()
        )));
    }
    if terminal || gamma == 0.0 {
        return Ok(reward);
    }
    let best = argmax(q_next_selector);
    Ok(reward + gamma * q_next_evaluator[best])
}

/// Squared TD error; the target is a constant.
pub fn td_loss(q_pred: f64, target: f64) -> f64 {
    let e = target - q_pred;
    e * e
}

/// `d td_loss / d q_pred`.
pub fn td_grad(q_pred: f64, target: f64) -> f64 {
    -2.0 * (target - q_pred)
}

pub fn sqn_loss(ce: f64, td: f64) -> f64 {
    ce + td
}

/// Actor term `ce · q`. `q` is a detached number: callers pass the value,
/// never a quantity they differentiate through.
pub fn sac_actor_loss(ce: f64, q_of_taken_action: f64) -> f64 {
    ce * q_of_taken_action
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_fixtures() {
        let l = cross_entropy_loss(array![0.0, 0.0, 0.0, 0.0].view(), 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);

        let l = cross_entropy_loss(array![10.0, -10.0].view(), 0).unwrap();
        assert!((l - 2.061153618190204e-9).abs() < 1e-15);

        // direct evaluation: -ln(e^2 / (e + e^2 + e^3))
        let direct = -(2f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let l = cross_entropy_loss(array![1.0, 2.0, 3.0].view(), 1).unwrap();
        assert!((l - direct).abs() < 1e-12);
        assert!((l - 1.407606).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_errors() {
        assert!(matches!(
            cross_entropy_loss(array![1.0, f64::NAN].view(), 0),
            Err(Error::NonFinite(_))
        ));
        assert!(cross_entropy_loss(array![1.0, 2.0].view(), 2).is_err());
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let l = cross_entropy_loss(array![1000.0, 999.0].view(), 1).unwrap();
        assert!((l - 1.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn non_taken_items_get_positive_gradient() {
        let (_, g) = cross_entropy_with_grad(array![0.3, -1.0, 2.0, 0.0].view(), 1).unwrap();
        for (j, &gj) in g.iter().enumerate() {
            if j == 1 {
                assert!(gj < 0.0);
            } else {
                assert!(gj > 0.0);
            }
        }
        assert!(g.sum().abs() < 1e-12);
    }

    #[test]
    fn double_q_fixtures() {
        let sel = array![1.0, 3.0, 2.0];
        let ev = array![10.0, 20.0, 30.0];
        assert_eq!(double_q_target(1.0, 0.5, sel.view(), ev.view(), false).unwrap(), 11.0);
        assert_eq!(double_q_target(1.0, 0.0, sel.view(), ev.view(), false).unwrap(), 1.0);
        assert_eq!(double_q_target(5.0, 0.5, sel.view(), ev.view(), true).unwrap(), 5.0);
        assert!(double_q_target(1.0, 0.5, sel.view(), array![1.0].view(), false).is_err());
    }

    #[test]
    fn equal_vectors_reduce_to_max_target() {
        let q = array![0.5, 4.0, -1.0, 4.0];
        let t = double_q_target(2.0, 0.9, q.view(), q.view(), false).unwrap();
        assert_eq!(t, 2.0 + 0.9 * 4.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0, 0.0].view()), 1);
        assert_eq!(argmax(array![2.0, 2.0].view()), 0);
    }

    #[test]
    fn td_and_joint() {
        assert_eq!(td_loss(9.0, 9.0), 0.0);
        assert_eq!(td_loss(9.0, 11.0), 4.0);
        assert!((sqn_loss(1.386, 4.0) - 5.386).abs() < 1e-12);
        assert_eq!(sqn_loss(0.0, 0.0), 0.0);
        let ce = [0.3, 1.2, 2.5];
        let td = [4.0, 0.1, 0.7];
        let per: f64 = ce.iter().zip(&td).map(|(c, t)| sqn_loss(*c, *t)).sum::<f64>() / 3.0;
        let means = ce.iter().sum::<f64>() / 3.0 + td.iter().sum::<f64>() / 3.0;
        assert!((per - means).abs() < 1e-12);
    }

    #[test]
    fn actor_fixtures() {
        assert_eq!(sac_actor_loss(1.386, 1.0), 1.386);
        assert!((sac_actor_loss(1.386, 2.5) - 3.465).abs() < 1e-12);
    }

    #[test]
    fn td_grad_matches_central_difference() {
        for &(q, t) in &[(0.3, 1.7), (-2.0, 5.0), (4.0, 4.5)] {
            let h = 1e-5;
            let fd = (td_loss(q + h, t) - td_loss(q - h, t)) / (2.0 * h);
            let an = td_grad(q, t);
            assert!(((fd - an) / an).abs() < 1e-6, "{fd} vs {an}");
        }
    }
}
