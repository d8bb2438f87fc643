use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

/// Objective value split into its parts; `total = data + penalty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub data: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `(λ/2)·Σ‖W‖²` over the parameters flagged for decay. Biases are skipped.
pub fn l2_penalty(params: &[&Param], lambda: f64) -> f64 {
    let sq: f64 = params.iter().filter(|p| p.decay).map(|p| p.value.sq_norm()).sum();
    0.5 * lambda * sq
}

/// Mean squared error plus the L2 penalty.
pub fn loss(pred: &Tensor, target: &Tensor, params: &[&Param], lambda: f64) -> Result<LossValue> {
    check_pair(pred, target)?;
    let n = pred.len().max(1) as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n;
    let penalty = l2_penalty(params, lambda);
    Ok(LossValue {
        data,
        penalty,
        total: data + penalty,
    })
}

/// Gradient of the mean squared error with respect to `pred`.
pub fn mse_gradient(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(pred, target)?;
    let scale = 2.0 / pred.len().max(1) as f64;
    let g = pred.data().iter().zip(target.data()).map(|(p, y)| scale * (p - y)).collect();
    Tensor::new(pred.shape(), g)
}

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_of_single_matrix() {
        let w = Param::weight("w", Tensor::from_rows(&[&[1.0, 1.0]]));
        let b = Param::bias("b", Tensor::vector(&[5.0]));
        assert_eq!(l2_penalty(&[&w, &b], 2.0), 2.0);
        let v = loss(&Tensor::vector(&[1.0]), &Tensor::vector(&[1.0]), &[&w, &b], 2.0).unwrap();
        assert_eq!((v.data, v.penalty, v.total), (0.0, 2.0, 2.0));
    }

    #[test]
    fn mse_and_gradient() {
        let p = Tensor::vector(&[1.0, 2.0]);
        let y = Tensor::vector(&[0.0, 4.0]);
        let v = loss(&p, &y, &[], 0.0).unwrap();
        assert_eq!(v.data, 2.5);
        assert_eq!(mse_gradient(&p, &y).unwrap().data(), &[1.0, -2.0]);
        assert!(loss(&p, &Tensor::vector(&[1.0]), &[], 0.0).is_err());
    }
}
