use rand::seq::index;

use super::mlp::{Mlp, MlpGrads};
use crate::error::Result;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

pub const DEFAULT_FLOOR: f64 = 1e-8;
const SAMPLED_COORDS: usize = 128;
const COORD_SEED: u64 = 0x6772_6164_6368_6b00;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences on a seeded subset of coordinates (all of them when the
/// network has at most 128 parameters).
///
/// Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<T, F>(loss_fn: F, params: &Mlp<T>, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&Mlp<T>) -> Result<(T, MlpGrads<T>)>,
{
    grad_check_with_floor(loss_fn, params, tolerance, DEFAULT_FLOOR)
}

/// Like [`grad_check`] with a custom denominator floor. Losses of large
/// magnitude carry central-difference noise around `1e-16 * |L| / FD_STEP`,
/// so coordinates with gradients near that level need a larger floor.
pub fn grad_check_with_floor<T, F>(
    mut loss_fn: F,
    params: &Mlp<T>,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&Mlp<T>) -> Result<(T, MlpGrads<T>)>,
{
    let (_, analytic) = loss_fn(params)?;
    let flat: Vec<f64> = analytic.iter_flat().map(|v| v.to_f64_lossy()).collect();
    let n = params.param_count();
    let coords: Vec<usize> = if n <= SAMPLED_COORDS {
        (0..n).collect()
    } else {
        let mut rng = rng_from_seed(COORD_SEED);
        let mut picked = index::sample(&mut rng, n, SAMPLED_COORDS).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &i in &coords {
        let orig = probe.param(i);
        probe.set_param(i, orig + T::lit(FD_STEP));
        let (plus, _) = loss_fn(&probe)?;
        probe.set_param(i, orig - T::lit(FD_STEP));
        let (minus, _) = loss_fn(&probe)?;
        probe.set_param(i, orig);
        let numeric = (plus.to_f64_lossy() - minus.to_f64_lossy()) / (2.0 * FD_STEP);
        let a = flat[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        coordinates_checked: coords.len(),
        passed: worst < tolerance,
    })
}
