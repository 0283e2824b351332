//! Extreme-value analytics for the peak-AoI series.
//!
//! Two routes to a block-maxima law are provided: a direct
//! probability-weighted-moment fit of the maxima ([`fit_gev_block_maxima`])
//! and a peaks-over-threshold fit lifted to block maxima through the
//! extremal index ([`gev_from_pot`]).

use std::f64::consts::LN_2;

use rand::Rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude the shape is treated as exactly zero (Gumbel).
pub const SHAPE_ZERO_TOL: f64 = 1e-8;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvtError {
    #[error("GEV scale must be positive and finite, got {0}")]
    Scale(f64),
    #[error("GEV parameters must be finite")]
    NonFinite,
    #[error("not enough tail data: {0}")]
    InsufficientTail(String),
    #[error("sample is degenerate (zero spread)")]
    Degenerate,
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("empty sample")]
    Empty,
    #[error("quantile level must lie in (0, 1), got {0}")]
    Quantile(f64),
    #[error("run gap must be at least 1")]
    RunGap,
    #[error("no exceedances of the threshold")]
    NoExceedances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self, EvtError> {
        if !(location.is_finite() && shape.is_finite()) {
            return Err(EvtError::NonFinite);
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(EvtError::Scale(scale));
        }
        Ok(Self {
            location,
            scale,
            shape,
        })
    }

    pub fn is_gumbel(&self) -> bool {
        self.shape.abs() < SHAPE_ZERO_TOL
    }

    /// Finite upper endpoint `mu - sigma/xi` of a short-tailed law.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.shape <= -SHAPE_ZERO_TOL).then(|| self.location - self.scale / self.shape)
    }

    /// Finite lower endpoint of a heavy-tailed law.
    pub fn lower_endpoint(&self) -> Option<f64> {
        (self.shape >= SHAPE_ZERO_TOL).then(|| self.location - self.scale / self.shape)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let s = (z - self.location) / self.scale;
        if self.is_gumbel() {
            return (-(-s).exp()).exp();
        }
        let t = 1.0 + self.shape * s;
        if t <= 0.0 {
            // beyond the upper endpoint (xi < 0) or below the lower one (xi > 0)
            return if self.shape < 0.0 { 1.0 } else { 0.0 };
        }
        (-t.powf(-1.0 / self.shape)).exp()
    }

    pub fn ccdf(&self, z: f64) -> f64 {
        // -expm1 keeps precision deep in the upper tail
        let s = (z - self.location) / self.scale;
        if self.is_gumbel() {
            return -(-(-s).exp()).exp_m1();
        }
        let t = 1.0 + self.shape * s;
        if t <= 0.0 {
            return if self.shape < 0.0 { 0.0 } else { 1.0 };
        }
        -(-t.powf(-1.0 / self.shape)).exp_m1()
    }

    pub fn density(&self, z: f64) -> f64 {
        let s = (z - self.location) / self.scale;
        if self.is_gumbel() {
            let e = (-s).exp();
            return e * (-e).exp() / self.scale;
        }
        let t = 1.0 + self.shape * s;
        if t <= 0.0 {
            return 0.0;
        }
        let u = t.powf(-1.0 / self.shape);
        u * (-u).exp() / (self.scale * t)
    }

    /// Inverse CDF for `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        let y = -p.ln();
        if self.is_gumbel() {
            self.location - self.scale * y.ln()
        } else {
            self.location + self.scale * (y.powf(-self.shape) - 1.0) / self.shape
        }
    }

    /// Affine map `z -> (z - mu) / sigma` onto the standard form GEV(0, 1, xi).
    pub fn normalize(&self, z: f64) -> f64 {
        (z - self.location) / self.scale
    }

    pub fn standardized(&self) -> Self {
        Self {
            location: 0.0,
            scale: 1.0,
            shape: self.shape,
        }
    }
}

/// CCDF of the GEV law at `z`.
pub fn gev_ccdf(params: &GevParams, z: f64) -> Result<f64, EvtError> {
    let p = GevParams::new(params.location, params.scale, params.shape)?;
    Ok(p.ccdf(z))
}

/// Streaming first and second moments of the excesses over a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceMoments {
    pub threshold: f64,
    pub count: u64,
    /// Running mean of Y = X - q over X > q.
    pub mean_excess: f64,
    /// Running mean of Y^2 over X > q.
    pub second_moment: f64,
}

impl ExceedanceMoments {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            count: 0,
            mean_excess: 0.0,
            second_moment: 0.0,
        }
    }

    pub fn from_samples(threshold: f64, samples: &[f64]) -> Self {
        let mut acc = Self::new(threshold);
        samples.iter().for_each(|&x| acc.push(x));
        acc
    }

    /// Feeds one observation; values at or below the threshold are ignored.
    pub fn push(&mut self, x: f64) {
        if x > self.threshold {
            self.push_excess(x - self.threshold);
        }
    }

    pub fn push_excess(&mut self, y: f64) {
        self.count += 1;
        let n = self.count as f64;
        self.mean_excess += (y - self.mean_excess) / n;
        self.second_moment += (y * y - self.second_moment) / n;
    }

    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean_excess * self.mean_excess
    }
}

/// Moment estimator of the tail shape:
/// `(E[Y^2] - 2 E[Y]^2) / (2 Var(Y))`.
pub fn shape_from_moments(stats: &ExceedanceMoments) -> Result<f64, EvtError> {
    if stats.count < 2 {
        return Err(EvtError::InsufficientTail(format!(
            "{} exceedances, need at least 2",
            stats.count
        )));
    }
    let var = stats.variance();
    if !(var > f64::EPSILON * stats.second_moment.abs()) {
        return Err(EvtError::InsufficientTail(
            "excess variance vanishes".into(),
        ));
    }
    let m1 = stats.mean_excess;
    Ok((stats.second_moment - 2.0 * m1 * m1) / (2.0 * var))
}

/// Peaks-over-threshold fit of a generalized Pareto tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotFit {
    pub threshold: f64,
    pub shape: f64,
    pub scale: f64,
    pub exceedances: u64,
    /// Fraction of the sample above the threshold.
    pub exceed_rate: f64,
}

/// Minimum number of exceedances accepted by [`fit_gpd_pot`].
pub const MIN_EXCEEDANCES: usize = 30;

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64, EvtError> {
    if samples.is_empty() {
        return Err(EvtError::Empty);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(EvtError::Quantile(p));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_gpd_pot(samples: &[f64], quantile: f64) -> Result<PotFit, EvtError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(EvtError::Quantile(quantile));
    }
    let expected = ((1.0 - quantile) * samples.len() as f64).ceil() as usize;
    if expected < MIN_EXCEEDANCES {
        return Err(EvtError::TooFew {
            need: (MIN_EXCEEDANCES as f64 / (1.0 - quantile)).ceil() as usize,
            got: samples.len(),
        });
    }
    let threshold = empirical_quantile(samples, quantile)?;
    let stats = ExceedanceMoments::from_samples(threshold, samples);
    let shape = shape_from_moments(&stats)?;
    Ok(PotFit {
        threshold,
        shape,
        scale: stats.mean_excess * (1.0 - shape),
        exceedances: stats.count,
        exceed_rate: stats.count as f64 / samples.len() as f64,
    })
}

/// Outcome of a block-maxima fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub params: GevParams,
    /// Samples beyond the fitted finite upper endpoint (short-tailed fits).
    pub endpoint_violations: usize,
}

/// Minimum number of maxima accepted by [`fit_gev_block_maxima`].
pub const MIN_MAXIMA: usize = 50;

/// Probability-weighted-moment fit of a GEV law to block maxima.
pub fn fit_gev_block_maxima(maxima: &[f64]) -> Result<GevFit, EvtError> {
    let n = maxima.len();
    if n < MIN_MAXIMA {
        return Err(EvtError::TooFew {
            need: MIN_MAXIMA,
            got: n,
        });
    }
    let mut x = maxima.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let i = i as f64;
        b0 += v;
        b1 += v * i / (nf - 1.0);
        b2 += v * i * (i - 1.0) / ((nf - 1.0) * (nf - 2.0));
    }
    b0 /= nf;
    b1 /= nf;
    b2 /= nf;
    let l2 = 2.0 * b1 - b0;
    let spread = x[n - 1] - x[0];
    if !(l2 > 1e-14 * spread.abs().max(b0.abs())) || spread == 0.0 {
        return Err(EvtError::Degenerate);
    }
    let ratio = (3.0 * b2 - b0) / l2;
    let k = solve_pwm_shape(ratio);
    let (location, scale) = if k.abs() < SHAPE_ZERO_TOL {
        let scale = l2 / LN_2;
        (b0 - EULER_GAMMA * scale, scale)
    } else {
        let g = libm::tgamma(1.0 + k);
        let scale = l2 * k / (g * (1.0 - 2f64.powf(-k)));
        (b0 + scale * (g - 1.0) / k, scale)
    };
    let params = GevParams::new(location, scale, -k)?;
    let endpoint_violations = params.upper_endpoint().map_or(0, |end| {
        let tol = 1e-9 * (end.abs() + scale);
        x.iter().filter(|&&v| v > end + tol).count()
    });
    Ok(GevFit {
        params,
        endpoint_violations,
    })
}

// (1 - 3^-k) / (1 - 2^-k), continuous at k = 0
fn pwm_ratio(k: f64) -> f64 {
    if k.abs() < 1e-6 {
        let (l2, l3) = (LN_2, 3f64.ln());
        // second-order expansion around 0
        return l3 / l2 * (1.0 + k * (l2 - l3) / 2.0);
    }
    (-(-k * 3f64.ln()).exp_m1()) / (-(-k * LN_2).exp_m1())
}

// Solves pwm_ratio(k) = ratio for k in (-1, 60]; the ratio is decreasing in k.
fn solve_pwm_shape(ratio: f64) -> f64 {
    let c = 1.0 / ratio - LN_2 / 3f64.ln();
    let guess = 7.859 * c + 2.9554 * c * c;
    let (mut lo, mut hi) = (-0.999_999, 60.0);
    if ratio >= pwm_ratio(lo) {
        return lo;
    }
    if ratio <= pwm_ratio(hi) {
        return hi;
    }
    let mut k = guess.clamp(lo, hi);
    for _ in 0..200 {
        if pwm_ratio(k) > ratio {
            lo = k;
        } else {
            hi = k;
        }
        if hi - lo < 1e-14 {
            break;
        }
        k = 0.5 * (lo + hi);
    }
    0.5 * (lo + hi)
}

/// GEV law of maxima of `block_size` consecutive observations implied by a
/// generalized Pareto tail above `pot.threshold` and an extremal index.
///
/// With `lambda = theta * M * zeta` (expected number of independent
/// exceedance clusters per block), the maxima follow GEV with the same shape,
/// scale `sigma_u * lambda^xi` and location `q + sigma_u (lambda^xi - 1)/xi`.
pub fn gev_from_pot(
    pot: &PotFit,
    extremal_index: f64,
    block_size: usize,
) -> Result<GevParams, EvtError> {
    let lambda = extremal_index * block_size as f64 * pot.exceed_rate;
    if !(lambda > 0.0) {
        return Err(EvtError::NoExceedances);
    }
    let xi = pot.shape;
    if xi.abs() < SHAPE_ZERO_TOL {
        GevParams::new(pot.threshold + pot.scale * lambda.ln(), pot.scale, 0.0)
    } else {
        let lx = lambda.powf(xi);
        GevParams::new(
            pot.threshold + pot.scale * (lx - 1.0) / xi,
            pot.scale * lx,
            xi,
        )
    }
}

/// Runs estimator of the extremal index: the share of exceedances that open
/// a new cluster, a cluster ending after `run_gap` consecutive
/// non-exceedances.
pub fn runs_extremal_index(
    series: &[f64],
    threshold: f64,
    run_gap: usize,
) -> Result<f64, EvtError> {
    if run_gap == 0 {
        return Err(EvtError::RunGap);
    }
    let mut exceedances = 0usize;
    let mut clusters = 0usize;
    // non-exceedances seen since the last exceedance; the first one always opens
    let mut quiet = usize::MAX;
    for &x in series {
        if x > threshold {
            exceedances += 1;
            if quiet >= run_gap {
                clusters += 1;
            }
            quiet = 0;
        } else {
            quiet = quiet.saturating_add(1);
        }
    }
    if exceedances == 0 {
        return Err(EvtError::NoExceedances);
    }
    Ok((clusters as f64 / exceedances as f64).clamp(f64::MIN_POSITIVE, 1.0))
}

/// Empirical CCDF evaluated at the ascending order statistics, using the
/// plotting position `1 - i/(n+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCcdf {
    pub values: Vec<f64>,
    pub ccdf: Vec<f64>,
}

impl EmpiricalCcdf {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Step-function value at `z`: plotting position of the largest order
    /// statistic not exceeding `z`, or 1 below the sample.
    pub fn at(&self, z: f64) -> f64 {
        let i = self.values.partition_point(|&v| v <= z);
        if i == 0 {
            1.0
        } else {
            self.ccdf[i - 1]
        }
    }
}

pub fn empirical_ccdf(samples: &[f64]) -> Result<EmpiricalCcdf, EvtError> {
    if samples.is_empty() {
        return Err(EvtError::Empty);
    }
    let mut values = samples.to_vec();
    values.sort_by(f64::total_cmp);
    let n1 = (values.len() + 1) as f64;
    let ccdf = (1..=values.len()).map(|i| 1.0 - i as f64 / n1).collect();
    Ok(EmpiricalCcdf { values, ccdf })
}

/// Kolmogorov-Smirnov distance between the sample and a GEV law.
pub fn ks_distance(samples: &[f64], params: &GevParams) -> Result<f64, EvtError> {
    if samples.is_empty() {
        return Err(EvtError::Empty);
    }
    let params = GevParams::new(params.location, params.scale, params.shape)?;
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < x.len() {
        // ties share one jump of the empirical CDF
        let mut j = i;
        while j + 1 < x.len() && x[j + 1] == x[i] {
            j += 1;
        }
        let f = params.cdf(x[i]);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    Ok(d)
}

/// `n` generalized Pareto excesses by inversion.
pub fn sample_gpd<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            if shape.abs() < SHAPE_ZERO_TOL {
                -scale * u.ln()
            } else {
                scale * (u.powf(-shape) - 1.0) / shape
            }
        })
        .collect()
}
