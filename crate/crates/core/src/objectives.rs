//! Concordance correlation: the evaluation metric and the training loss.

use crate::autodiff::{CccStats, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Guard added to the CCC denominator. Constant predictions score 0.
pub const DEFAULT_EPS: f64 = 1e-8;

/// `2·cov / (σx² + σy² + (μx − μy)² + ε)` with population statistics.
pub fn ccc(pred: &[f64], label: &[f64]) -> Result<f64> {
    ccc_with_eps(pred, label, DEFAULT_EPS)
}

pub fn ccc_with_eps(pred: &[f64], label: &[f64], eps: f64) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::Dimension {
            op: "ccc",
            lhs: vec![pred.len()],
            rhs: vec![label.len()],
        });
    }
    if pred.len() < 2 {
        return Err(Error::BatchSize(pred.len()));
    }
    Ok(CccStats::compute(pred, label, eps).ccc())
}

/// Mean over tasks of `1 − ccc(pred[:, t], labels[:, t])`.
pub fn multitask_loss<T: Real>(g: &mut Graph<T>, pred: Var, labels: &Tensor<T>, eps: f64) -> Result<Var> {
    let s = labels.shape();
    if s.len() != 2 || g.value(pred).shape() != s {
        return Err(Error::Dimension {
            op: "multitask_loss",
            lhs: g.value(pred).shape().to_vec(),
            rhs: s.to_vec(),
        });
    }
    let (b, tasks) = (s[0], s[1]);
    let mut total: Option<Var> = None;
    for t in 0..tasks {
        let col: Vec<T> = (0..b).map(|i| labels.data()[i * tasks + t]).collect();
        let p = g.column(pred, t)?;
        let l = g.ccc_loss(p, &col, eps)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.ok_or(Error::EmptyDimension { op: "multitask_loss" })?;
    Ok(g.scale(total, T::from_f64(1.0 / tasks as f64)))
}

/// Per-task CCC of a prediction matrix against labels, both `[N×tasks]`.
pub fn ccc_per_task(pred: &Tensor<f64>, labels: &Tensor<f64>) -> Result<Vec<f64>> {
    if pred.shape() != labels.shape() || pred.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "ccc_per_task",
            lhs: pred.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    let (n, tasks) = (pred.shape()[0], pred.shape()[1]);
    (0..tasks)
        .map(|t| {
            let p: Vec<f64> = (0..n).map(|i| pred.data()[i * tasks + t]).collect();
            let l: Vec<f64> = (0..n).map(|i| labels.data()[i * tasks + t]).collect();
            ccc(&p, &l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert!((ccc(&[0.2, 0.5, 0.9], &[0.2, 0.5, 0.9]).unwrap() - 1.0).abs() < 1e-6);
        assert!((ccc(&[0.0, 1.0], &[1.0, 0.0]).unwrap() + 1.0).abs() < 1e-7);
        // 4/11 from exact rational arithmetic, ε shifts it by < 1e-8.
        assert!((ccc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 4.0 / 11.0).abs() < 1e-8);
        assert_eq!(ccc(&[0.3, 0.3, 0.3], &[0.1, 0.5, 0.9]).unwrap(), 0.0);
        assert!(matches!(ccc(&[1.0], &[1.0]), Err(Error::BatchSize(1))));
    }

    #[test]
    fn multitask_is_mean_of_task_losses() {
        let pred = Tensor::<f64>::new(vec![3, 2], vec![0.1, 0.5, 0.4, 0.5, 0.8, 0.5]).unwrap();
        let labels = Tensor::<f64>::new(vec![3, 2], vec![0.1, 0.2, 0.4, 0.6, 0.8, 0.9]).unwrap();
        let mut g = Graph::<f64>::new();
        let p = g.input(pred);
        let l = multitask_loss(&mut g, p, &labels, DEFAULT_EPS).unwrap();
        // activation perfect (0), valence constant (1)
        assert!((g.value(l).data()[0] - 0.5).abs() < 1e-7);
    }

    fn direct(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
        let c = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        2.0 * c / (vx + vy + (mx - my).powi(2) + DEFAULT_EPS)
    }

    #[test]
    fn all_small_integer_batches_match_direct_formula() {
        let vals = [0.0, 1.0, 2.0];
        for i in 0..729usize {
            let d: Vec<f64> = (0..6).map(|k| vals[(i / 3usize.pow(k)) % 3]).collect();
            let (x, y) = d.split_at(3);
            assert!((ccc(x, y).unwrap() - direct(x, y)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(
            pairs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..20),
            rot in 0usize..20,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let c = ccc(&x, &y).unwrap();
            prop_assert_eq!(c, ccc(&y, &x).unwrap());
            prop_assert!(c.abs() <= 1.0);
            let k = rot % x.len();
            let (mut xr, mut yr) = (x.clone(), y.clone());
            xr.rotate_left(k);
            yr.rotate_left(k);
            prop_assert!((ccc(&xr, &yr).unwrap() - c).abs() < 1e-12);
        }
    }
}
