//! Domain-randomization parameter sampling.
//!
//! Each physical parameter is drawn either from a Gaussian-kernel density
//! fitted to measured samples (truncated to the sample range) or, when no
//! measurements are supplied, from a tent-shaped fallback over the published
//! (min, mean, max) range. A classic triangular density over those three
//! numbers cannot reproduce the published means for the mass-offset rates
//! (they sit below the triangular-feasible mean range), so the fallback is a
//! two-piece linear density peaked at the published mean whose piece weights
//! are chosen to match that mean exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::stability::PhysicsParams;

pub const DYNAMIC_FRICTION: &str = "dynamic_friction";
pub const STATIC_FRICTION: &str = "static_friction";
pub const X_OFFSET_RATE: &str = "x_offset_rate";
pub const Y_OFFSET_RATE: &str = "y_offset_rate";
pub const Z_OFFSET_RATE: &str = "z_offset_rate";
pub const DROP_HEIGHT: &str = "drop_height";

#[derive(Debug, Error, PartialEq)]
pub enum RandomizerError {
    #[error("need at least two samples to fit a density, got {0}")]
    InsufficientSamples(usize),
}

/// Published range of one randomized parameter. Offset rates are percentages
/// of the corresponding side length; drop height is in centimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRange {
    pub name: &'static str,
    pub min: f64,
    pub mean: Option<f64>,
    pub max: f64,
}

/// Measured parameter ranges used for domain randomization.
pub fn default_ranges() -> Vec<ParamRange> {
    vec![
        ParamRange {
            name: DYNAMIC_FRICTION,
            min: 0.12,
            mean: Some(0.27),
            max: 0.45,
        },
        ParamRange {
            name: STATIC_FRICTION,
            min: 0.16,
            mean: Some(0.34),
            max: 0.53,
        },
        ParamRange {
            name: X_OFFSET_RATE,
            min: 0.0,
            mean: Some(7.23),
            max: 25.35,
        },
        ParamRange {
            name: Y_OFFSET_RATE,
            min: 0.0,
            mean: Some(5.17),
            max: 18.68,
        },
        ParamRange {
            name: Z_OFFSET_RATE,
            min: 0.0,
            mean: Some(5.12),
            max: 21.77,
        },
        ParamRange {
            name: DROP_HEIGHT,
            min: 0.0,
            mean: None,
            max: 5.0,
        },
    ]
}

pub fn lookup_range(name: &str) -> Option<ParamRange> {
    default_ranges().into_iter().find(|r| r.name == name)
}

/// Gaussian-kernel density over measured samples, truncated and renormalized
/// to the sample range, with a cached monotone CDF grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedDistribution {
    lo: f64,
    hi: f64,
    bandwidth: f64,
    xs: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
}

const CDF_GRID: usize = 513;

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| -> f64 {
        let idx = f * (sorted.len() - 1) as f64;
        let i = idx.floor() as usize;
        let frac = idx - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        } else {
            sorted[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        ((sorted[sorted.len() - 1] - sorted[0]) / 100.0).max(1e-9)
    }
}

/// Fits a Gaussian KDE to the samples. `bandwidth` must be positive; use
/// [`silverman_bandwidth`] when none is prescribed.
pub fn fit_kde(samples: &[f64], bandwidth: f64) -> Result<FittedDistribution, RandomizerError> {
    if samples.len() < 2 {
        return Err(RandomizerError::InsufficientSamples(samples.len()));
    }
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON {
        // Degenerate sample set: all mass at the common value.
        return Ok(FittedDistribution {
            lo,
            hi,
            bandwidth,
            xs: vec![lo],
            cdf: vec![1.0],
            mean: lo,
        });
    }
    let mut xs = Vec::with_capacity(CDF_GRID);
    let mut density = Vec::with_capacity(CDF_GRID);
    for i in 0..CDF_GRID {
        let x = lo + (hi - lo) * i as f64 / (CDF_GRID - 1) as f64;
        let d: f64 = samples
            .iter()
            .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
            .sum();
        xs.push(x);
        density.push(d);
    }
    let mut cdf = vec![0.0; CDF_GRID];
    for i in 1..CDF_GRID {
        cdf[i] = cdf[i - 1] + 0.5 * (density[i] + density[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = cdf[CDF_GRID - 1];
    for v in &mut cdf {
        *v /= total;
    }
    let mut mean = 0.0;
    for i in 1..CDF_GRID {
        mean += 0.5 * (xs[i] + xs[i - 1]) * (cdf[i] - cdf[i - 1]);
    }
    Ok(FittedDistribution {
        lo,
        hi,
        bandwidth,
        xs,
        cdf,
        mean,
    })
}

impl FittedDistribution {
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// CDF at `x`, linearly interpolated on the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if self.xs.len() == 1 {
            return if x < self.lo { 0.0 } else { 1.0 };
        }
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let step = (self.hi - self.lo) / (self.xs.len() - 1) as f64;
        let idx = ((x - self.lo) / step).floor() as usize;
        let idx = idx.min(self.xs.len() - 2);
        let frac = (x - self.xs[idx]) / (self.xs[idx + 1] - self.xs[idx]);
        self.cdf[idx] + frac * (self.cdf[idx + 1] - self.cdf[idx])
    }

    /// Inverse CDF for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        if self.xs.len() == 1 {
            return self.lo;
        }
        let u = u.clamp(0.0, 1.0);
        let mut lo = 0;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.cdf[hi] - self.cdf[lo];
        let frac = if span <= f64::EPSILON {
            0.0
        } else {
            (u - self.cdf[lo]) / span
        };
        self.xs[lo] + frac * (self.xs[hi] - self.xs[lo])
    }
}

/// Sampling distribution for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamDist {
    Kde(FittedDistribution),
    /// Two-piece linear density on `[min, max]` peaked at `peak`, with the
    /// left-piece weight chosen so the mean equals `peak`.
    Tent {
        min: f64,
        peak: f64,
        max: f64,
    },
    Uniform {
        min: f64,
        max: f64,
    },
}

impl ParamDist {
    /// Fallback distribution for a published range: tent when a mean is
    /// given, uniform otherwise. Degenerate ranges become constants.
    pub fn fallback(range: &ParamRange) -> Self {
        match range.mean {
            Some(mean) if range.max > range.min => ParamDist::Tent {
                min: range.min,
                peak: mean,
                max: range.max,
            },
            _ => ParamDist::Uniform {
                min: range.min,
                max: range.max,
            },
        }
    }

    /// Inverse-CDF sample for `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            ParamDist::Kde(kde) => kde.quantile(u),
            ParamDist::Tent { min, peak, max } => {
                let (a, m, b) = (*min, *peak, *max);
                let w = ((b - m) / (b - a)).clamp(0.0, 1.0);
                if u < w {
                    let v = if w > 0.0 { u / w } else { 0.0 };
                    a + (m - a) * v.sqrt()
                } else {
                    let v = if w < 1.0 { (u - w) / (1.0 - w) } else { 1.0 };
                    b - (b - m) * (1.0 - v).sqrt()
                }
            }
            ParamDist::Uniform { min, max } => min + (max - min) * u,
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        self.sample(rng.gen::<f64>())
    }

    /// Analytic or cached mean of the distribution.
    pub fn mean(&self) -> f64 {
        match self {
            ParamDist::Kde(kde) => kde.mean(),
            // By construction of the piece weight, the tent mean is the peak.
            ParamDist::Tent { peak, .. } => *peak,
            ParamDist::Uniform { min, max } => 0.5 * (min + max),
        }
    }
}

/// Per-parameter distributions used to sample `PhysicsParams`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    pub static_friction: ParamDist,
    pub dynamic_friction: ParamDist,
    /// Offset-rate distributions (percent of side length) per axis.
    pub offset_rates: [ParamDist; 3],
    pub drop_height: ParamDist,
    /// No published range exists for restitution; defaults to U[0, 0.3].
    pub restitution: ParamDist,
}

impl ParamTable {
    /// Fallback table over the published ranges.
    pub fn defaults() -> Self {
        let get = |name: &str| ParamDist::fallback(&lookup_range(name).expect("known parameter"));
        ParamTable {
            static_friction: get(STATIC_FRICTION),
            dynamic_friction: get(DYNAMIC_FRICTION),
            offset_rates: [get(X_OFFSET_RATE), get(Y_OFFSET_RATE), get(Z_OFFSET_RATE)],
            drop_height: get(DROP_HEIGHT),
            restitution: ParamDist::Uniform { min: 0.0, max: 0.3 },
        }
    }

    /// Builds a table from measurement fixtures, falling back to the
    /// published ranges for parameters without samples. Bandwidths follow
    /// Silverman's rule.
    pub fn from_fixture(samples: &BTreeMap<String, Vec<f64>>) -> Result<Self, RandomizerError> {
        let mut table = ParamTable::defaults();
        let fit = |name: &str, slot: &mut ParamDist| -> Result<(), RandomizerError> {
            if let Some(values) = samples.get(name) {
                let kde = fit_kde(values, silverman_bandwidth(values))?;
                *slot = ParamDist::Kde(kde);
            }
            Ok(())
        };
        fit(STATIC_FRICTION, &mut table.static_friction)?;
        fit(DYNAMIC_FRICTION, &mut table.dynamic_friction)?;
        let mut offs = table.offset_rates.clone();
        fit(X_OFFSET_RATE, &mut offs[0])?;
        fit(Y_OFFSET_RATE, &mut offs[1])?;
        fit(Z_OFFSET_RATE, &mut offs[2])?;
        table.offset_rates = offs;
        fit(DROP_HEIGHT, &mut table.drop_height)?;
        Ok(table)
    }
}

/// Draws one item's physics, deterministically for a given seed.
///
/// `mu_dynamic <= mu_static` is enforced by rejection-resampling the dynamic
/// coefficient. Offset rates are drawn as magnitudes and given a random sign.
pub fn sample_params(table: &ParamTable, seed: u64) -> PhysicsParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu_static = table.static_friction.draw(&mut rng);
    let mut mu_dynamic = table.dynamic_friction.draw(&mut rng);
    let mut tries = 0;
    while mu_dynamic > mu_static {
        mu_dynamic = table.dynamic_friction.draw(&mut rng);
        tries += 1;
        if tries > 1000 {
            mu_dynamic = mu_static;
            break;
        }
    }
    let mut mass_center_offset = [0.0; 3];
    for (axis, slot) in mass_center_offset.iter_mut().enumerate() {
        let rate = table.offset_rates[axis].draw(&mut rng);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        *slot = sign * rate / 100.0;
    }
    let drop_height_cm = table.drop_height.draw(&mut rng);
    let restitution = table.restitution.draw(&mut rng);
    PhysicsParams {
        mu_static,
        mu_dynamic,
        mass_center_offset,
        drop_height_cm,
        restitution,
    }
}
