//! Segmentation losses: soft Dice, pixel cross-entropy, and their 0.6/0.4
//! combination.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DICE_SMOOTH: f64 = 1e-5;
pub const DICE_WEIGHT: f64 = 0.6;
pub const CE_WEIGHT: f64 = 0.4;

pub fn one_hot<T: Real>(targets: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::dim(format!("target class {bad} out of range 0..{classes}")));
    }
    let mut data = vec![T::ZERO; targets.len() * classes];
    for (i, &t) in targets.iter().enumerate() {
        data[i * classes + t] = T::ONE;
    }
    Tensor::new(vec![targets.len(), classes], data)
}

/// Soft Dice over softmax probabilities, averaged over classes.
/// Zero iff the predicted mass matches the target exactly per class.
pub fn dice_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    target_onehot: &Tensor<T>,
    smooth: f64,
) -> Result<Var> {
    let sh = tape.shape(logits).to_vec();
    if sh.len() != 2 || target_onehot.shape() != sh.as_slice() {
        return Err(Error::dim(format!(
            "dice_loss wants logits [N,K] matching one-hot target, got {sh:?} and {:?}",
            target_onehot.shape()
        )));
    }
    let classes = sh[1];
    let probs = tape.softmax(logits, 1)?;
    let target = tape.input(target_onehot);
    let joint = tape.mul(probs, target)?;
    let inter = tape.sum_axis(joint, 0)?;
    let psum = tape.sum_axis(probs, 0)?;
    let tsum = tape.sum_axis(target, 0)?;
    let numer = tape.scale(inter, 2.0);
    let numer = tape.add_scalar(numer, smooth);
    let denom = tape.add(psum, tsum)?;
    let denom = tape.add_scalar(denom, smooth);
    let score = tape.div(numer, denom)?;
    let total = tape.sum_all(score);
    let mean_score = tape.scale(total, 1.0 / classes as f64);
    let neg = tape.scale(mean_score, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Mean pixelwise negative log softmax of the target class.
pub fn ce_loss<T: Real>(tape: &mut Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}

pub struct CombinedLoss {
    pub total: Var,
    pub dice: Var,
    pub ce: Var,
}

/// `w_dice * dice + w_ce * ce` with the weights from the training recipe.
pub fn combined_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    w_dice: f64,
    w_ce: f64,
) -> Result<CombinedLoss> {
    let classes = tape.shape(logits)[1];
    let onehot = one_hot::<T>(targets, classes)?;
    let dice = dice_loss(tape, logits, &onehot, DICE_SMOOTH)?;
    let ce = ce_loss(tape, logits, targets)?;
    let wd = tape.scale(dice, w_dice);
    let wc = tape.scale(ce, w_ce);
    let total = tape.add(wd, wc)?;
    Ok(CombinedLoss { total, dice, ce })
}
