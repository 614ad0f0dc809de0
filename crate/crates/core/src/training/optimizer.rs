use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Real;

/// Stochastic gradient descent with momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

/// One SGD update in place.
///
/// `g' = g + wd p`, `m <- mu m + g'`, then `p <- p - lr m`, or with Nesterov
/// `p <- p - lr (g' + mu m)`.
pub fn optimizer_step<T: Real>(params: &mut [T], momentum: &mut [T], grads: &[T], lr: f64, sgd: &Sgd) -> Result<()> {
    if params.len() != grads.len() || params.len() != momentum.len() {
        return Err(Error::Shape(format!(
            "{} params, {} gradients, {} momentum slots",
            params.len(),
            grads.len(),
            momentum.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let bad = grads.iter().filter(|g| !g.is_finite()).count();
        return Err(Error::Divergence(format!(
            "{bad} non-finite gradient values, first at index {i} ({:?})",
            grads[i]
        )));
    }
    let (mu, wd, lr) = (T::from_f64_lossy(sgd.momentum), T::from_f64_lossy(sgd.weight_decay), T::from_f64_lossy(lr));
    for ((p, m), &g) in params.iter_mut().zip(momentum.iter_mut()).zip(grads) {
        let g = g + wd * *p;
        *m = mu * *m + g;
        let step = if sgd.nesterov { g + mu * *m } else { *m };
        *p = *p - lr * step;
    }
    Ok(())
}
