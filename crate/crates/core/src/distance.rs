//! Kolmogorov distance to the standard normal: Monte Carlo estimates with a DKW
//! band, exact values for finite laws, and log-log rate fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal::std_normal_cdf;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistanceError {
    #[error("no samples")]
    Empty,
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("support has {support} points but {probs} probabilities")]
    LengthMismatch { support: usize, probs: usize },
    #[error("probability {index} is invalid ({value})")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, not 1")]
    ProbabilitySum(f64),
    #[error("rate fit needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("abscissa {0} is not positive")]
    NonPositiveAbscissa(f64),
    #[error("reference functional is not positive at abscissa {0}")]
    BadReference(f64),
}

/// Half-width of the DKW band: `sqrt(ln(2/α) / (2M))`.
pub fn dkw_band(sample_count: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * sample_count as f64)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KolmogorovEstimate {
    pub d_hat: f64,
    pub sample_count: usize,
    pub dkw_band: f64,
    pub alpha: f64,
}

impl KolmogorovEstimate {
    pub fn lower(&self) -> f64 {
        (self.d_hat - self.dkw_band).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.d_hat + self.dkw_band).min(1.0)
    }
}

fn check_alpha(alpha: f64) -> Result<(), DistanceError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DistanceError::InvalidAlpha(alpha))
    }
}

/// `sup_x |F̂_M(x) - Φ(x)|` for the empirical CDF of `samples`.
pub fn kolmogorov_distance(samples: &[f64], alpha: f64) -> Result<KolmogorovEstimate, DistanceError> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(DistanceError::Empty);
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DistanceError::NonFinite { index, value });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(KolmogorovEstimate {
        d_hat: sup_distance_sorted(&sorted),
        sample_count: samples.len(),
        dkw_band: dkw_band(samples.len(), alpha),
        alpha,
    })
}

/// Sup scan over sorted samples. The extreme indices of a tied block carry the
/// left and right limits.
fn sup_distance_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .fold(0.0, |acc: f64, (i, &x)| {
            let phi = std_normal_cdf(x);
            let above = ((i + 1) as f64 / m - phi).abs();
            let below = (i as f64 / m - phi).abs();
            acc.max(above).max(below)
        })
        .min(1.0)
}

/// Exact Kolmogorov distance of a finite law: the sup is attained at a left or
/// right limit of the CDF at some support point.
pub fn exact_kolmogorov_discrete(support: &[f64], probs: &[f64]) -> Result<f64, DistanceError> {
    if support.len() != probs.len() {
        return Err(DistanceError::LengthMismatch {
            support: support.len(),
            probs: probs.len(),
        });
    }
    if support.is_empty() {
        return Err(DistanceError::Empty);
    }
    for (index, (&v, &p)) in support.iter().zip(probs).enumerate() {
        if !v.is_finite() {
            return Err(DistanceError::NonFinite { index, value: v });
        }
        if !p.is_finite() || p < 0.0 {
            return Err(DistanceError::InvalidProbability { index, value: p });
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(DistanceError::ProbabilitySum(total));
    }
    let mut atoms: Vec<(f64, f64)> = support.iter().copied().zip(probs.iter().copied()).collect();
    atoms.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut d: f64 = 0.0;
    let mut cdf = 0.0;
    let mut i = 0;
    while i < atoms.len() {
        let x = atoms[i].0;
        let left = cdf;
        while i < atoms.len() && atoms[i].0 == x {
            cdf += atoms[i].1;
            i += 1;
        }
        let phi = std_normal_cdf(x);
        d = d.max((left - phi).abs()).max((cdf.min(1.0) - phi).abs());
    }
    Ok(d)
}

/// One grid point of a rate experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// `n` or `ε`.
    pub abscissa: f64,
    pub estimate: KolmogorovEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// `d_hat = 0` has no logarithm.
    ZeroEstimate,
    /// DKW half-width exceeds half of `d_hat`.
    BandTooWide,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub abscissa: f64,
    pub reason: ExclusionReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `(abscissa, d_hat)` pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Defined for three or more fitted points.
    pub r_squared: Option<f64>,
    /// `max/min` of `d_hat / reference(abscissa)` over fitted points.
    pub ratio_spread: Option<f64>,
    pub excluded: Vec<Exclusion>,
}

/// Least-squares line through `(ln abscissa, ln d_hat)`.
pub fn fit_rate(points: &[RatePoint], reference: Option<&dyn Fn(f64) -> f64>) -> Result<RateFit, DistanceError> {
    if points.len() < 3 {
        return Err(DistanceError::TooFewPoints {
            need: 3,
            got: points.len(),
        });
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        if !(p.abscissa > 0.0) {
            return Err(DistanceError::NonPositiveAbscissa(p.abscissa));
        }
        let e = &p.estimate;
        let reason = if e.d_hat <= 0.0 {
            Some(ExclusionReason::ZeroEstimate)
        } else if e.dkw_band > 0.5 * e.d_hat {
            Some(ExclusionReason::BandTooWide)
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(Exclusion {
                abscissa: p.abscissa,
                reason,
            }),
            None => kept.push((p.abscissa, e.d_hat)),
        }
    }
    if kept.len() < 2 {
        return Err(DistanceError::TooFewPoints {
            need: 2,
            got: kept.len(),
        });
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    let ratio_spread = match reference {
        Some(f) => {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for &(x, d) in &kept {
                let r = f(x);
                if !(r > 0.0) || !r.is_finite() {
                    return Err(DistanceError::BadReference(x));
                }
                lo = lo.min(d / r);
                hi = hi.max(d / r);
            }
            Some(hi / lo)
        }
        None => None,
    };
    Ok(RateFit {
        points: kept,
        slope,
        intercept,
        r_squared: (xs.len() >= 3).then_some(r_squared),
        ratio_spread,
        excluded,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    (slope, intercept, r_squared)
}
