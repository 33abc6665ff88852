use ndarray::Array2;

use crate::cloud::{nearest_neighbors, Point3};
use crate::error::{domain, Result};

/// Mean squared error over every element, with its gradient w.r.t. `pred`.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return domain(format!("mse shapes differ: {:?} vs {:?}", pred.dim(), target.dim()));
    }
    if pred.is_empty() {
        return domain("mse of an empty batch");
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Symmetric Chamfer loss and its gradient w.r.t. every `pred` point, with
/// nearest-neighbour assignments held fixed.
pub fn chamfer_loss_grad(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    if pred.is_empty() || target.is_empty() {
        return domain("chamfer loss needs two non-empty clouds");
    }
    let np = pred.len() as f64;
    let nt = target.len() as f64;
    let mut grad = vec![[0.0; 3]; pred.len()];
    let mut forward = 0.0;
    for (i, (j, d)) in nearest_neighbors(pred, target).into_iter().enumerate() {
        forward += d;
        for k in 0..3 {
            grad[i][k] += 2.0 * (pred[i][k] - target[j][k]) / np;
        }
    }
    let mut backward = 0.0;
    for (j, (i, d)) in nearest_neighbors(target, pred).into_iter().enumerate() {
        backward += d;
        for k in 0..3 {
            grad[i][k] += 2.0 * (pred[i][k] - target[j][k]) / nt;
        }
    }
    Ok((forward / np + backward / nt, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_at_target_is_zero() {
        let a = array![[1.0, 2.0], [3.0, -4.0]];
        let (l, g) = mse(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_value() {
        let (l, g) = mse(&array![[1.0, 3.0]], &array![[0.0, 0.0]]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, array![[1.0, 3.0]]);
        assert!(mse(&array![[1.0]], &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn chamfer_singletons() {
        let (l, g) = chamfer_loss_grad(&[[0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![[-4.0, 0.0, 0.0]]);
    }

    #[test]
    fn chamfer_identical_is_zero() {
        let p = vec![[0.0, 1.0, 2.0], [3.0, -1.0, 0.5], [2.0, 2.0, 2.0]];
        let (l, g) = chamfer_loss_grad(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
        assert!(chamfer_loss_grad(&[], &p).is_err());
    }
}
