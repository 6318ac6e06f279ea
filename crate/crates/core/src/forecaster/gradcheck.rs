use super::model::{mae_loss, CnnModel};
use crate::error::Result;

/// Largest disagreement between backprop and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// `(tensor, element)` of the worst component.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares every parameter gradient of the MAE loss on one sample against
/// `(L(p + h) - L(p - h)) / 2h`, with dropout off. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`; `floor` keeps round-off on vanishing
/// components from dominating.
pub fn gradient_check(
    model: &CnnModel,
    window: &[f64],
    target: &[f64],
    step: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let (_, grads) = model.loss_and_gradients(window, target, None)?;
    let mut probe = model.clone();
    let mut result = GradientCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (t, analytic) in grads.tensors.iter().enumerate() {
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe.parameters()[t][k];
            probe.parameters_mut()[t][k] = original + step;
            let plus = mae_loss(&probe.predict(window)?, target)?;
            probe.parameters_mut()[t][k] = original - step;
            let minus = mae_loss(&probe.predict(window)?, target)?;
            probe.parameters_mut()[t][k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > result.max_relative_error {
                result.max_relative_error = rel;
                result.worst = (t, k);
            }
            result.checked += 1;
        }
    }
    Ok(result)
}
