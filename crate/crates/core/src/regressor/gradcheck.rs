//! Finite-difference check of the analytic gradients.

use super::mlp::{Mlp, Mode};
use crate::geometry::Velocity2D;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Parameters compared.
    pub checked: usize,
    /// Largest `|fd - analytic| / max(|fd|, |analytic|)`; pairs that are both
    /// exactly zero count as zero.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Distance of the closest hidden pre-activation from the CReLU kink.
    pub min_preactivation: f64,
}

/// Compares every weight and bias gradient of `||m(x) - target||^2` with a
/// central difference of step `h`. Dropout is off. The network is restored
/// before returning.
pub fn check_gradients(m: &mut Mlp, x: &[f64], target: Velocity2D, h: f64) -> Result<GradCheck> {
    let (_, cache) = m.forward(x, Mode::Eval)?;
    let min_preactivation = Mlp::min_abs_preactivation(&cache);
    let analytic = m.backward(&cache, target)?;
    let loss = |m: &Mlp| m.eval(x).map(|v| v.sub(&target).norm_sq());

    let mut out = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        min_preactivation,
    };
    let mut record = |fd: f64, an: f64| {
        let abs = (fd - an).abs();
        let scale = fd.abs().max(an.abs());
        let rel = if scale == 0.0 { 0.0 } else { abs / scale };
        out.checked += 1;
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(rel);
    };

    for k in 0..m.layers().len() {
        for i in 0..m.layers()[k].weights.len() {
            let orig = m.layers()[k].weights[i];
            m.layers_mut()[k].weights[i] = orig + h;
            let up = loss(m)?;
            m.layers_mut()[k].weights[i] = orig - h;
            let down = loss(m)?;
            m.layers_mut()[k].weights[i] = orig;
            record((up - down) / (2.0 * h), analytic.layers[k].weights[i]);
        }
        for i in 0..m.layers()[k].bias.len() {
            let orig = m.layers()[k].bias[i];
            m.layers_mut()[k].bias[i] = orig + h;
            let up = loss(m)?;
            m.layers_mut()[k].bias[i] = orig - h;
            let down = loss(m)?;
            m.layers_mut()[k].bias[i] = orig;
            record((up - down) / (2.0 * h), analytic.layers[k].bias[i]);
        }
    }
    Ok(out)
}
