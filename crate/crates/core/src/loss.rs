//! Sequence supervision: exponentially weighted masked L1 over the
//! refinement iterates.

use crate::error::TrainError;
use crate::geometry::GeoField;
use crate::tensor::{Element, Tensor};

/// Sequence-loss hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Weighting factor; iterate `t` of `T` is weighted `gamma^(T-t)`.
    pub gamma: f64,
    pub iters: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.9,
            iters: 6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Param(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.iters == 0 {
            return Err(TrainError::Param("iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Masked mean of the per-pixel L1 norm (sum of per-channel absolute
/// differences), as a scalar graph tensor.
pub fn masked_l1<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<Tensor<T>, TrainError> {
    if pred.shape() != target.shape() || pred.rank() != 3 {
        return Err(TrainError::Tensor(crate::error::TensorError::Shape {
            op: "masked_l1",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }));
    }
    let (h, w) = (pred.shape()[1], pred.shape()[2]);
    if mask.len() != h * w {
        return Err(TrainError::Param(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            h * w
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(TrainError::EmptyMask);
    }
    let m: Vec<T> = mask
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let m = Tensor::from_vec(m, &[1, h, w])?;
    let per_pixel = pred.sub(target)?.abs().sum_axis(0, true)?;
    Ok(per_pixel
        .mul(&m)?
        .sum_all()?
        .scale(T::from_f64(1.0 / count as f64)))
}

/// `sum_t gamma^(T-t) * masked_l1(g_t, y)` over full-resolution iterates.
/// The mask is the ground truth's validity intersected with `extra_mask`.
pub fn sequence_loss<T: Element>(
    preds: &[Tensor<T>],
    gt: &GeoField<T>,
    extra_mask: Option<&[bool]>,
    gamma: f64,
) -> Result<Tensor<T>, TrainError> {
    LossConfig {
        gamma,
        iters: preds.len(),
    }
    .validate()?;
    let mut mask = gt.valid_or_all();
    if let Some(extra) = extra_mask {
        for (m, &e) in mask.iter_mut().zip(extra) {
            *m = *m && e;
        }
    }
    let t_total = preds.len();
    let mut total: Option<Tensor<T>> = None;
    for (i, pred) in preds.iter().enumerate() {
        let weight = gamma.powi((t_total - 1 - i) as i32);
        let term = masked_l1(pred, &gt.data, &mask)?.scale(T::from_f64(weight));
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("validated: at least one iterate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FieldKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow(data: Vec<f64>, h: usize, w: usize) -> GeoField<f64> {
        GeoField::new(FieldKind::Flow, Tensor::from_vec(data, &[2, h, w]).unwrap()).unwrap()
    }

    #[test]
    fn single_term_is_plain_masked_l1() {
        let gt = flow(vec![0.0; 8], 2, 2);
        let pred = Tensor::from_vec(vec![1.0, -1.0, 2.0, 0.0, 0.5, 0.5, -0.5, 0.0], &[2, 2, 2])
            .unwrap();
        // per-pixel L1: |u|+|v| = [1.5, 1.5, 2.5, 0.0] -> mean 1.375
        let loss = sequence_loss(&[pred.clone()], &gt, None, 0.5).unwrap();
        assert!((loss.item() - 1.375).abs() < 1e-12);
        // gamma-independent for a single iterate
        let loss2 = sequence_loss(&[pred], &gt, None, 1.0).unwrap();
        assert_eq!(loss.item(), loss2.item());
    }

    #[test]
    fn two_term_expansion_with_default_gamma() {
        // per-step L1 distances 2.0 then 1.0, gamma 0.9 -> 0.9*2 + 1 = 2.8
        let gt = flow(vec![0.0; 2], 1, 1);
        let p1 = Tensor::from_vec(vec![2.0, 0.0], &[2, 1, 1]).unwrap();
        let p2 = Tensor::from_vec(vec![0.0, 1.0], &[2, 1, 1]).unwrap();
        let loss = sequence_loss(&[p1, p2], &gt, None, 0.9).unwrap();
        assert!((loss.item() - 2.8).abs() < 1e-12);
    }

    #[test]
    fn gamma_one_weights_all_iterates_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt_data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gt = flow(gt_data, 2, 2);
        let preds: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::randn(&[2, 2, 2], &mut rng))
            .collect();
        let loss = sequence_loss(&preds, &gt, None, 1.0).unwrap();
        let sum: f64 = preds
            .iter()
            .map(|p| masked_l1(p, &gt.data, &[true; 4]).unwrap().item())
            .sum();
        assert!((loss.item() - sum).abs() < 1e-12);

        // closed-form recomputation for gamma = 0.9 differs accordingly
        let loss9 = sequence_loss(&preds, &gt, None, 0.9).unwrap();
        let want: f64 = preds
            .iter()
            .enumerate()
            .map(|(i, p)| {
                0.9f64.powi((2 - i) as i32)
                    * masked_l1(p, &gt.data, &[true; 4]).unwrap().item()
            })
            .sum();
        assert!((loss9.item() - want).abs() < 1e-12);
    }

    #[test]
    fn loss_is_zero_iff_predictions_match_on_mask() {
        let gt = flow(vec![1.0; 8], 2, 2);
        let exact = gt.data.clone();
        let loss = sequence_loss(&[exact.clone(), exact], &gt, None, 0.9).unwrap();
        assert_eq!(loss.item(), 0.0);

        let mut off = gt.data.data().to_vec();
        off[0] += 0.5;
        let off = Tensor::from_vec(off, &[2, 2, 2]).unwrap();
        let loss = sequence_loss(&[off.clone()], &gt, None, 0.9).unwrap();
        assert!(loss.item() > 0.0);
        // masking out the perturbed pixel restores zero
        let mask = vec![false, true, true, true];
        let loss = sequence_loss(&[off], &gt, Some(&mask), 0.9).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = flow(vec![0.0; 2], 1, 1);
        let pred = Tensor::zeros(&[2, 1, 1]);
        assert!(matches!(
            sequence_loss(&[pred], &gt, Some(&[false]), 0.9),
            Err(TrainError::EmptyMask)
        ));
    }

    #[test]
    fn invalid_gamma_is_rejected() {
        let gt = flow(vec![0.0; 2], 1, 1);
        let pred = Tensor::zeros(&[2, 1, 1]);
        assert!(sequence_loss(&[pred.clone()], &gt, None, 0.0).is_err());
        assert!(sequence_loss(&[pred], &gt, None, 1.5).is_err());
    }
}
