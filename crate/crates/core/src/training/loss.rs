use crate::error::{Error, Result};
use crate::network::{softmax_backward, softmax_probabilities, Real, Tensor};

const FOREGROUND: usize = 1;

fn check<T: Real>(probs: &Tensor<T>, target: &[u8]) -> Result<()> {
    if probs.c != 2 {
        return Err(Error::Shape(format!("dice loss expects 2 class channels, got {}", probs.c)));
    }
    if target.len() != probs.n * probs.plane() {
        return Err(Error::Shape(format!(
            "target has {} pixels, probabilities {}x{}x{}",
            target.len(),
            probs.n,
            probs.h,
            probs.w
        )));
    }
    if let Some(v) = target.iter().find(|&&v| v > 1) {
        return Err(Error::Contract(format!("dice target must be binary, found label {v}")));
    }
    Ok(())
}

/// Per-group sums `(intersection, prediction, target)`; one group for batch dice, else one per sample.
fn sums<T: Real>(probs: &Tensor<T>, target: &[u8], batch_dice: bool) -> Vec<(f64, f64, f64)> {
    let p = probs.plane();
    let mut out = vec![(0.0, 0.0, 0.0); if batch_dice { 1 } else { probs.n }];
    for n in 0..probs.n {
        let fg = probs.channel(n, FOREGROUND);
        let t = &target[n * p..(n + 1) * p];
        let g = &mut out[if batch_dice { 0 } else { n }];
        for (&pv, &tv) in fg.iter().zip(t) {
            let pv = pv.as_f64();
            let tv = f64::from(tv);
            g.0 += pv * tv;
            g.1 += pv;
            g.2 += tv;
        }
    }
    out
}

/// `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)` on the foreground channel.
///
/// With `batch_dice` the sums run over the whole batch jointly; otherwise the
/// loss is the mean of per-sample losses.
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, target: &[u8], smooth: f64, batch_dice: bool) -> Result<f64> {
    check(probs, target)?;
    let groups = sums(probs, target, batch_dice);
    let total: f64 = groups.iter().map(|&(i, p, t)| 1.0 - (2.0 * i + smooth) / (p + t + smooth)).sum();
    Ok(total / groups.len() as f64)
}

/// Loss and its gradient with respect to the probabilities.
pub fn soft_dice_loss_grad<T: Real>(
    probs: &Tensor<T>,
    target: &[u8],
    smooth: f64,
    batch_dice: bool,
) -> Result<(f64, Tensor<T>)> {
    check(probs, target)?;
    let groups = sums(probs, target, batch_dice);
    let k = groups.len() as f64;
    let loss = groups.iter().map(|&(i, p, t)| 1.0 - (2.0 * i + smooth) / (p + t + smooth)).sum::<f64>() / k;
    let mut grad = Tensor::zeros(probs.n, probs.c, probs.h, probs.w);
    let plane = probs.plane();
    for n in 0..probs.n {
        let (i, p, t) = groups[if batch_dice { 0 } else { n }];
        let den = p + t + smooth;
        let num = 2.0 * i + smooth;
        // d/dp_j of -(num/den) = -(2 t_j den - num) / den^2
        let on = T::from_f64_lossy(-2.0 / (den * k));
        let base = T::from_f64_lossy(num / (den * den * k));
        let start = (n * probs.c + FOREGROUND) * plane;
        for (j, g) in grad.data[start..start + plane].iter_mut().enumerate() {
            *g = base + if target[n * plane + j] == 1 { on } else { T::zero() };
        }
    }
    Ok((loss, grad))
}

/// Loss and gradient with respect to the logits, through a per-pixel softmax.
pub fn dice_loss_with_logits<T: Real>(
    logits: &Tensor<T>,
    target: &[u8],
    smooth: f64,
    batch_dice: bool,
) -> Result<(f64, Tensor<T>)> {
    let probs = softmax_probabilities(logits);
    let (loss, dprobs) = soft_dice_loss_grad(&probs, target, smooth, batch_dice)?;
    Ok((loss, softmax_backward(&probs, &dprobs)))
}
