//! The eight basic time-series transforms.
//!
//! Every operation is a pure function `(series, params, stream) -> series`:
//! the output shape is always `T x C`, the label is always carried over, and
//! identical inputs (including the [`RngStream`]) produce identical output.
//! Randomness is drawn in a fixed, documented order per operation so that
//! results are reproducible across platforms.
//!
//! Magnitude conventions per operation:
//!
//! * `jitter` — i.i.d. `Normal(0, sigma^2)` noise added per element.
//! * `scale` — one `Normal(1, sigma^2)` factor per channel.
//! * `rotate` — sign flip of the whole series (the rotation surrogate for
//!   sensor data); no parameters.
//! * `permute` — split into `N` contiguous segments, shuffle uniformly.
//! * `magnitude_warp` — multiply each channel by a smooth curve interpolating
//!   `Normal(1, sigma^2)` knots with a natural cubic spline.
//! * `time_warp` — resample along a smooth random monotone re-mapping of the
//!   time axis, shared across channels.
//! * `window_slice` — crop a random window of `round(frac*T)` steps and
//!   stretch it back to `T`.
//! * `window_warp` — stretch (or contract) a random window by `K`, then
//!   resample the whole series back to `T`.

mod magnitude;

pub use magnitude::{MagnitudeRange, MagnitudeTable, LEVEL_MAX};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::series::TimeSeries;
use crate::spline::{lerp_at, resample_values, CubicSpline};

/// Identity of one augmentation operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOpKind {
    Jitter,
    Scale,
    Rotate,
    Permute,
    MagWarp,
    TimeWarp,
    WindowSlice,
    WindowWarp,
}

impl AugOpKind {
    /// All eight operations, in canonical order.
    pub const ALL: [AugOpKind; 8] = [
        AugOpKind::Jitter,
        AugOpKind::Scale,
        AugOpKind::Rotate,
        AugOpKind::Permute,
        AugOpKind::MagWarp,
        AugOpKind::TimeWarp,
        AugOpKind::WindowSlice,
        AugOpKind::WindowWarp,
    ];

    /// Stable snake_case name, used in CSV artifacts and config files.
    pub fn name(&self) -> &'static str {
        match self {
            AugOpKind::Jitter => "jitter",
            AugOpKind::Scale => "scale",
            AugOpKind::Rotate => "rotate",
            AugOpKind::Permute => "permute",
            AugOpKind::MagWarp => "magnitude_warp",
            AugOpKind::TimeWarp => "time_warp",
            AugOpKind::WindowSlice => "window_slice",
            AugOpKind::WindowWarp => "window_warp",
        }
    }
}

impl std::fmt::Display for AugOpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AugOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown augmentation op `{s}`")))
    }
}

/// Parameters for one operation; each op reads only the fields it uses.
///
/// The default value is the identity member of every family (zero noise, one
/// segment, full window, unit stretch), so `..OpParams::default()` updates
/// stay inert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpParams {
    /// Noise / curve standard deviation (jitter, scale, both warps).
    pub sigma: f64,
    /// Segment count `N` for permute.
    pub num_segments: usize,
    /// Equal-sized segments (permute); otherwise random distinct cut points.
    pub equal_sized: bool,
    /// Spline knot count `I` for the warping curves.
    pub num_knots: usize,
    /// Window fraction of `T` for the window ops.
    pub window_frac: f64,
    /// Stretch factor `K` for window warping.
    pub stretch: f64,
}

impl Default for OpParams {
    fn default() -> Self {
        OpParams {
            sigma: 0.0,
            num_segments: 1,
            equal_sized: true,
            num_knots: 4,
            window_frac: 1.0,
            stretch: 1.0,
        }
    }
}

/// One link of an augmentation chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOp {
    pub kind: AugOpKind,
    pub params: OpParams,
}

impl ChainOp {
    pub fn new(kind: AugOpKind, params: OpParams) -> Self {
        ChainOp { kind, params }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

fn check_knots(i: usize) -> Result<()> {
    if i < 2 {
        return Err(Error::InvalidParameter(format!(
            "warp needs at least 2 knots, got {i}"
        )));
    }
    Ok(())
}

/// Add i.i.d. `Normal(0, sigma^2)` noise to every element.
///
/// Draws in row-major order (time outer, channel inner).
pub fn jitter(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    check_sigma(params.sigma)?;
    let noise = Normal::new(0.0, params.sigma)
        .map_err(|e| Error::InvalidParameter(format!("jitter noise: {e}")))?;
    let mut rng = stream.rng();
    let mut values = x.values().clone();
    for v in values.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    x.with_values(values)
}

/// Multiply each channel by one `Normal(1, sigma^2)` factor.
///
/// Factors are drawn in channel order.
pub fn scale(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    check_sigma(params.sigma)?;
    let dist = Normal::new(1.0, params.sigma)
        .map_err(|e| Error::InvalidParameter(format!("scale factor: {e}")))?;
    let mut rng = stream.rng();
    let factors: Vec<f64> = (0..x.num_channels()).map(|_| dist.sample(&mut rng)).collect();
    let mut values = x.values().clone();
    for mut row in values.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v *= factors[c];
        }
    }
    x.with_values(values)
}

/// Negate the whole series (the flipping form of "rotation").
pub fn rotate_flip(x: &TimeSeries) -> TimeSeries {
    x.with_values(x.values().mapv(|v| -v))
        .expect("negation preserves shape and finiteness")
}

/// Cut into `N` contiguous segments and shuffle them uniformly.
///
/// Equal-sized mode makes the segment lengths differ by at most one, giving
/// the remainder to the earliest segments. Variable mode draws `N - 1`
/// distinct cut points uniformly (minimum segment length 1), then shuffles.
/// Draw order: cut points (variable mode only), then the shuffle.
pub fn permute(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    let t = x.num_steps();
    let n = params.num_segments;
    if n == 0 || n > t {
        return Err(Error::InvalidParameter(format!(
            "segment count must be in 1..={t}, got {n}"
        )));
    }
    if n == 1 {
        return Ok(x.clone());
    }
    let mut rng = stream.rng();

    // Segment boundaries as cut positions in (0, t), always sorted.
    let cuts: Vec<usize> = if params.equal_sized {
        let base = t / n;
        let rem = t % n;
        let mut acc = 0;
        (0..n - 1)
            .map(|i| {
                acc += base + usize::from(i < rem);
                acc
            })
            .collect()
    } else {
        let mut picks = rand::seq::index::sample(&mut rng, t - 1, n - 1).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|p| p + 1).collect()
    };

    let mut segments: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut start = 0;
    for &cut in &cuts {
        segments.push((start, cut));
        start = cut;
    }
    segments.push((start, t));
    segments.shuffle(&mut rng);

    let values = x.values();
    let mut out = Array2::zeros((t, x.num_channels()));
    let mut row_idx = 0;
    for &(s, e) in &segments {
        for r in s..e {
            out.row_mut(row_idx).assign(&values.row(r));
            row_idx += 1;
        }
    }
    x.with_values(out)
}

/// Knot positions: `I` uniform points over `[0, T-1]` including both ends.
fn knot_positions(t: usize, i: usize) -> Vec<f64> {
    let step = (t - 1) as f64 / (i - 1) as f64;
    (0..i).map(|k| k as f64 * step).collect()
}

/// Multiply each channel by a smooth random curve.
///
/// Per channel, `I` knot values are drawn from `Normal(1, sigma^2)` at
/// uniformly spaced time positions and interpolated with a natural cubic
/// spline; the series is multiplied point-wise by the curve. Knots are drawn
/// channel by channel, so different channels get independent curves.
pub fn magnitude_warp(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    check_sigma(params.sigma)?;
    check_knots(params.num_knots)?;
    let dist = Normal::new(1.0, params.sigma)
        .map_err(|e| Error::InvalidParameter(format!("warp knots: {e}")))?;
    let t = x.num_steps();
    let positions = knot_positions(t, params.num_knots);
    let mut rng = stream.rng();
    let mut values = x.values().clone();
    for ch in 0..x.num_channels() {
        let knots: Vec<f64> = (0..params.num_knots).map(|_| dist.sample(&mut rng)).collect();
        let spline = CubicSpline::fit_natural(&positions, &knots)?;
        for (step, v) in values.column_mut(ch).iter_mut().enumerate() {
            *v *= spline.eval(step as f64);
        }
    }
    x.with_values(values)
}

/// Smallest admissible warp speed; keeps the cumulative warp strictly
/// increasing even when the random curve dips to or below zero.
const MIN_WARP_SPEED: f64 = 0.01;

/// Resample along a smooth random monotone re-mapping of the time axis.
///
/// A speed curve is built exactly like the magnitude-warp curve (one shared
/// curve for all channels, since they sample the same instants), clamped to
/// at least `0.01`, and integrated into a cumulative warp rescaled to span
/// `[0, T-1]`. Each output step takes the linear interpolation of the input
/// at the warped position. Endpoints map to endpoints.
pub fn time_warp(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    check_sigma(params.sigma)?;
    check_knots(params.num_knots)?;
    let dist = Normal::new(1.0, params.sigma)
        .map_err(|e| Error::InvalidParameter(format!("warp knots: {e}")))?;
    let t = x.num_steps();
    let positions = knot_positions(t, params.num_knots);
    let mut rng = stream.rng();
    let knots: Vec<f64> = (0..params.num_knots).map(|_| dist.sample(&mut rng)).collect();
    let spline = CubicSpline::fit_natural(&positions, &knots)?;

    let mut cumulative = Vec::with_capacity(t);
    let mut acc = 0.0;
    for step in 0..t {
        acc += spline.eval(step as f64).max(MIN_WARP_SPEED);
        cumulative.push(acc);
    }
    let span = (t - 1) as f64 / (cumulative[t - 1] - cumulative[0]);
    let warped: Vec<f64> = cumulative.iter().map(|c| (c - cumulative[0]) * span).collect();

    let values = x.values();
    let mut out = Array2::zeros((t, x.num_channels()));
    let mut col = vec![0.0; t];
    for ch in 0..x.num_channels() {
        for (i, v) in values.column(ch).iter().enumerate() {
            col[i] = *v;
        }
        for (step, w) in warped.iter().enumerate() {
            out[[step, ch]] = lerp_at(&col, *w);
        }
    }
    x.with_values(out)
}

fn window_len(t: usize, frac: f64) -> usize {
    ((frac * t as f64).round() as usize).max(2).min(t)
}

/// Crop a random window of `round(frac*T)` steps and stretch it back to `T`.
///
/// The window offset is drawn uniformly from `{0, ..., T - W}`; the crop is
/// restored to full length by per-channel linear resampling so model input
/// shapes stay fixed.
pub fn window_slice(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    if !(params.window_frac > 0.0 && params.window_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction must be in (0, 1], got {}",
            params.window_frac
        )));
    }
    let t = x.num_steps();
    let w = window_len(t, params.window_frac);
    let mut rng = stream.rng();
    let offset = rng.random_range(0..=t - w);
    let window = x.values().slice(ndarray::s![offset..offset + w, ..]);
    x.with_values(resample_values(&window, t))
}

/// Stretch or contract a random window by `K`, then restore length `T`.
///
/// The window is drawn exactly as in [`window_slice`]; a fair coin then picks
/// stretching to `round(K*W)` or contracting to `round(W/K)` (never below 2
/// steps). The untouched prefix and suffix are concatenated around the warped
/// window and the whole series is linearly resampled back to `T`. Draw order:
/// offset, then the coin.
pub fn window_warp(x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    if !(params.window_frac > 0.0 && params.window_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction must be in (0, 1), got {}",
            params.window_frac
        )));
    }
    if !(params.stretch > 0.0) || !params.stretch.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "stretch factor must be finite and > 0, got {}",
            params.stretch
        )));
    }
    let t = x.num_steps();
    let c = x.num_channels();
    let w = window_len(t, params.window_frac);
    let mut rng = stream.rng();
    let offset = rng.random_range(0..=t - w);
    let stretch = rng.random_bool(0.5);
    let new_w = if stretch {
        ((params.stretch * w as f64).round() as usize).max(2)
    } else {
        ((w as f64 / params.stretch).round() as usize).max(2)
    };

    let values = x.values();
    let warped = resample_values(&values.slice(ndarray::s![offset..offset + w, ..]), new_w);

    let mut joined = Array2::zeros((t - w + new_w, c));
    let mut row_idx = 0;
    for r in 0..offset {
        joined.row_mut(row_idx).assign(&values.row(r));
        row_idx += 1;
    }
    for r in 0..new_w {
        joined.row_mut(row_idx).assign(&warped.row(r));
        row_idx += 1;
    }
    for r in offset + w..t {
        joined.row_mut(row_idx).assign(&values.row(r));
        row_idx += 1;
    }
    x.with_values(resample_values(&joined.view(), t))
}

/// Apply one operation identified by `kind`.
pub fn apply(kind: AugOpKind, x: &TimeSeries, params: &OpParams, stream: RngStream) -> Result<TimeSeries> {
    match kind {
        AugOpKind::Jitter => jitter(x, params, stream),
        AugOpKind::Scale => scale(x, params, stream),
        AugOpKind::Rotate => Ok(rotate_flip(x)),
        AugOpKind::Permute => permute(x, params, stream),
        AugOpKind::MagWarp => magnitude_warp(x, params, stream),
        AugOpKind::TimeWarp => time_warp(x, params, stream),
        AugOpKind::WindowSlice => window_slice(x, params, stream),
        AugOpKind::WindowWarp => window_warp(x, params, stream),
    }
}

/// Apply a non-empty chain of operations left to right.
///
/// Each link runs on its own derived child stream, so the chain's output is a
/// pure function of `(x, ops, stream)` and op order matters.
pub fn apply_chain(x: &TimeSeries, ops: &[ChainOp], stream: RngStream) -> Result<TimeSeries> {
    if ops.is_empty() {
        return Err(Error::InvalidParameter("augmentation chain is empty".into()));
    }
    let mut out = x.clone();
    for (i, op) in ops.iter().enumerate() {
        out = apply(op.kind, &out, &op.params, stream.derive(i as u64))?;
    }
    Ok(out)
}
