//! Univariate slice sampling with stepping out and shrinkage.

use rand::Rng;

/// Tuning for [`slice_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceConfig {
    /// Initial bracket width.
    pub width: f64,
    /// Maximum number of width-sized steps taken while stepping out (shared by both ends).
    pub max_steps: u32,
    /// Support of the target; points outside are never proposed.
    pub lower: f64,
    pub upper: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            width: 1.0,
            max_steps: 50,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }
}

const MAX_SHRINKS: usize = 500;

/// One slice-sampling transition from `x0` targeting the unnormalized log density `log_density`.
///
/// `x0` must lie inside `[lower, upper]` with a finite log density.
pub fn slice_step<R, F>(x0: f64, log_density: F, config: &SliceConfig, rng: &mut R) -> f64
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let f = |x: f64| {
        if x < config.lower || x > config.upper {
            f64::NEG_INFINITY
        } else {
            log_density(x)
        }
    };
    let level = f(x0) + rng.random::<f64>().ln();

    let w = config.width;
    let mut left = x0 - rng.random::<f64>() * w;
    let mut right = left + w;
    let m = config.max_steps.max(1);
    let mut steps_left = (rng.random::<f64>() * m as f64).floor() as u32;
    let mut steps_right = m - 1 - steps_left;
    while steps_left > 0 && left > config.lower && level < f(left) {
        left -= w;
        steps_left -= 1;
    }
    while steps_right > 0 && right < config.upper && level < f(right) {
        right += w;
        steps_right -= 1;
    }
    left = left.max(config.lower);
    right = right.min(config.upper);

    for _ in 0..MAX_SHRINKS {
        let x1 = left + rng.random::<f64>() * (right - left);
        if level < f(x1) {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    x0
}
