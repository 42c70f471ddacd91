//! Central finite-difference checks of the analytic network gradient.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::net::{loss_and_grad_with, NetworkWeights};
use crate::objective::Objective;

/// Floor on the denominator of the relative error, so that parameters whose
/// true derivative is ~0 are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub layer: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Picks `count` parameter indices, at least one from every layer when
/// `count` allows, the rest uniformly at random without repetition.
pub fn sample_indices(w: &NetworkWeights, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for layer in w.layers() {
        if picked.len() == count {
            break;
        }
        picked.push(layer.offset + rng.random_range(0..layer.len()));
    }
    let remaining = count.saturating_sub(picked.len());
    let extra = sample(rng, w.n_params(), (remaining * 2 + picked.len()).min(w.n_params()));
    for i in extra.into_iter() {
        if picked.len() == count {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

/// Compares the analytic gradient with `(f(w + h e_i) - f(w - h e_i)) / 2h`
/// at each requested index.
pub fn check_gradient(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    objective: &dyn Objective,
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradCheckEntry>> {
    let (_, grad) = loss_and_grad_with(w, x, y, objective)?;
    let mut probe = w.clone();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let original = w.params()[i];
        probe.params_mut()[i] = original + h;
        let (up, _) = loss_and_grad_with(&probe, x, y, objective)?;
        probe.params_mut()[i] = original - h;
        let (down, _) = loss_and_grad_with(&probe, x, y, objective)?;
        probe.params_mut()[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.params()[i];
        entries.push(GradCheckEntry {
            index: i,
            layer: w.layer_of(i).name.clone(),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }
}
