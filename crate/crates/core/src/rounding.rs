//! The mean-preserving random rounding operator `<z>`.
//!
//! `<z>` equals `floor(z) + 1` with probability `frac(z)` and `floor(z)`
//! otherwise, so `E<z> = z` and `Var<z> = frac(z) (1 - frac(z))`. For an
//! integer random variable `X`, the law of `<alpha X>` (rounding drawn
//! independently of `X`) is a finite convolution handled by
//! [`scaled_round_pmf`] and [`scaled_round_dist`].

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::pmf::IntPmf;

/// Fractional parts closer than this to 0 or 1 are treated as integers.
pub const SNAP_TOL: f64 = 1e-12;

/// Largest magnitude accepted by [`split`]; beyond it every `f64` is an
/// integer and the floor no longer fits comfortably in `i64`.
const MAX_MAGNITUDE: f64 = 4.0e18;

/// Integer floor and fractional part of a real number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalSplit {
    pub floor: i64,
    /// In `[0, 1)`; exactly zero for (snapped) integers.
    pub frac: f64,
}

impl FractionalSplit {
    pub fn is_integer(&self) -> bool {
        self.frac == 0.0
    }

    /// `frac (1 - frac)`, the variance of the rounding.
    pub fn rounding_variance(&self) -> f64 {
        self.frac * (1.0 - self.frac)
    }
}

/// Split `z` into `floor(z)` and `z - floor(z)`.
pub fn split(z: f64) -> Result<FractionalSplit> {
    if !z.is_finite() {
        return Err(domain(format!("cannot round non-finite value {z}")));
    }
    if z.abs() > MAX_MAGNITUDE {
        return Err(domain(format!("value {z} too large to round")));
    }
    Ok(split_unchecked(z))
}

#[inline]
pub(crate) fn split_unchecked(z: f64) -> FractionalSplit {
    let fl = z.floor();
    let frac = z - fl;
    if frac < SNAP_TOL {
        FractionalSplit { floor: fl as i64, frac: 0.0 }
    } else if frac > 1.0 - SNAP_TOL {
        FractionalSplit { floor: fl as i64 + 1, frac: 0.0 }
    } else {
        FractionalSplit { floor: fl as i64, frac }
    }
}

/// Law of `<z>`: mass `lower_prob` on `lower_value`, `upper_prob` on
/// `lower_value + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointDist {
    pub lower_value: i64,
    pub lower_prob: f64,
    pub upper_prob: f64,
}

impl TwoPointDist {
    pub fn from_split(s: FractionalSplit) -> Self {
        TwoPointDist { lower_value: s.floor, lower_prob: 1.0 - s.frac, upper_prob: s.frac }
    }

    pub fn upper_value(&self) -> i64 {
        self.lower_value + 1
    }

    pub fn pmf(&self, y: i64) -> f64 {
        if y == self.lower_value {
            self.lower_prob
        } else if y == self.lower_value + 1 {
            self.upper_prob
        } else {
            0.0
        }
    }

    pub fn mean(&self) -> f64 {
        self.lower_value as f64 + self.upper_prob
    }

    pub fn variance(&self) -> f64 {
        self.lower_prob * self.upper_prob
    }

    /// `(1 - frac) s^floor + frac s^(floor + 1)`.
    pub fn pgf(&self, s: f64) -> f64 {
        let base = s.powf(self.lower_value as f64);
        base * (self.lower_prob + self.upper_prob * s)
    }

    pub fn to_pmf(&self) -> IntPmf {
        IntPmf::unnormalized(self.lower_value, vec![self.lower_prob, self.upper_prob])
            .expect("two-point probabilities are valid")
    }
}

pub fn round_dist(z: f64) -> Result<TwoPointDist> {
    split(z).map(TwoPointDist::from_split)
}

/// Draw one realization of `<z>`.
pub fn round_sample<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<i64> {
    let s = split(z)?;
    Ok(sample_split(s, rng))
}

#[inline]
pub(crate) fn sample_split<R: Rng + ?Sized>(s: FractionalSplit, rng: &mut R) -> i64 {
    if s.frac > 0.0 && rng.random::<f64>() < s.frac {
        s.floor + 1
    } else {
        s.floor
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha.abs() >= 1.0 {
        return Err(domain(format!("scaling factor {alpha} must lie in (-1, 1)")));
    }
    Ok(())
}

/// Range of `x` for which `<alpha x> = y` is possible: `alpha x` must lie in
/// `(y - 1, y + 1)`.
fn preimage_range(alpha: f64, y: i64) -> (i64, i64) {
    let y = y as f64;
    let (lo, hi) = if alpha > 0.0 {
        (((y - 1.0) / alpha).floor() + 1.0, ((y + 1.0) / alpha).ceil() - 1.0)
    } else {
        (((y + 1.0) / alpha).floor() + 1.0, ((y - 1.0) / alpha).ceil() - 1.0)
    };
    // One state of slack on each side absorbs floating-point error in the
    // quotients; out-of-range states contribute zero below.
    (lo as i64 - 1, hi as i64 + 1)
}

/// `P(<alpha X> = y)` for integer `X ~ x_pmf`, rounding independent of `X`.
///
/// Sums only over the preimage window of `y`, so the cost is `O(1 / |alpha|)`
/// per `y`. Each state `x` contributes `frac(alpha x)` when `alpha x < y`
/// (rounding up is required) and `1 - frac(alpha x)` when `alpha x >= y`.
pub fn scaled_round_pmf(alpha: f64, x_pmf: &IntPmf, y: i64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(if y == 0 { 1.0 } else { 0.0 });
    }
    let (lo, hi) = preimage_range(alpha, y);
    let lo = lo.max(x_pmf.lo());
    let hi = hi.min(x_pmf.hi());
    let mut total = 0.0;
    for x in lo..=hi {
        let px = x_pmf.pmf(x);
        if px == 0.0 {
            continue;
        }
        let s = split_unchecked(alpha * x as f64);
        let w = if s.floor == y {
            1.0 - s.frac
        } else if s.floor + 1 == y {
            s.frac
        } else {
            0.0
        };
        total += w * px;
    }
    Ok(total)
}

/// Full law of `<alpha X>` over its reachable window.
pub fn scaled_round_dist(alpha: f64, x_pmf: &IntPmf) -> Result<IntPmf> {
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(IntPmf::point_mass(0));
    }
    let a = alpha * x_pmf.lo() as f64;
    let b = alpha * x_pmf.hi() as f64;
    let lo = a.min(b).floor() as i64;
    let hi = a.max(b).floor() as i64 + 1;
    let probs = (lo..=hi).map(|y| scaled_round_pmf(alpha, x_pmf, y)).collect::<Result<Vec<_>>>()?;
    IntPmf::unnormalized(lo, probs)
}

impl From<FractionalSplit> for TwoPointDist {
    fn from(s: FractionalSplit) -> Self {
        TwoPointDist::from_split(s)
    }
}

impl TryFrom<f64> for TwoPointDist {
    type Error = Error;
    fn try_from(z: f64) -> Result<Self> {
        round_dist(z)
    }
}
