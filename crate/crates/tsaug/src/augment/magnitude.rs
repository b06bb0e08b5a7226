//! Per-operation magnitude ranges and the integer-level mapping.
//!
//! Each operation has a `[lo, hi]` range and a default value for its primary
//! magnitude parameter, shipped as a versioned JSON file and embedded at build
//! time. Random and learned augmentation address magnitudes through a single
//! integer level `m` in `[0, 30]` that maps linearly onto each op's range:
//! `param = lo + (m / 30) * (hi - lo)`. The permute segment count rounds to
//! the nearest integer (at least 1); window fractions are floored at 0.01 so
//! a level-0 window is still non-empty.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;

use super::{AugOpKind, OpParams};
use crate::error::{Error, Result};

/// Ceiling of the shared magnitude-level scale.
pub const LEVEL_MAX: f64 = 30.0;

/// Default spline knot count for the warping curves.
const DEFAULT_KNOTS: usize = 4;

/// Default stretch factor for window warping.
const DEFAULT_STRETCH: f64 = 2.0;

/// Smallest window fraction the level mapping will produce.
const MIN_WINDOW_FRAC: f64 = 0.01;

/// Magnitude range of one operation's primary parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudeRange {
    pub range_lo: f64,
    pub range_hi: f64,
    pub default: f64,
}

impl MagnitudeRange {
    fn at_level(&self, level: f64) -> f64 {
        self.range_lo + (level / LEVEL_MAX) * (self.range_hi - self.range_lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpRanges {
    jitter: MagnitudeRange,
    scale: MagnitudeRange,
    rotate: Option<MagnitudeRange>,
    permute: MagnitudeRange,
    magnitude_warp: MagnitudeRange,
    time_warp: MagnitudeRange,
    window_slice: MagnitudeRange,
    window_warp: MagnitudeRange,
}

/// Versioned per-op magnitude table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudeTable {
    version: u32,
    ops: OpRanges,
}

static BUILTIN: OnceLock<MagnitudeTable> = OnceLock::new();

impl MagnitudeTable {
    /// The table shipped with the crate (`data/magnitude_table.json`).
    pub fn builtin() -> &'static MagnitudeTable {
        BUILTIN.get_or_init(|| {
            serde_json::from_str(include_str!("../../data/magnitude_table.json"))
                .expect("embedded magnitude table is valid")
        })
    }

    /// Load a replacement table from a JSON file.
    pub fn load(path: &Path) -> Result<MagnitudeTable> {
        let text = std::fs::read_to_string(path)?;
        let table: MagnitudeTable = serde_json::from_str(&text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::InvalidParameter(format!(
                "unsupported magnitude table version {}",
                self.version
            )));
        }
        for kind in AugOpKind::ALL {
            if let Some(r) = self.range(kind) {
                if !(r.range_lo <= r.range_hi)
                    || !(r.default >= r.range_lo && r.default <= r.range_hi)
                {
                    return Err(Error::InvalidParameter(format!(
                        "bad magnitude range for {kind}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Magnitude range for an op; `None` for ops without a magnitude.
    pub fn range(&self, kind: AugOpKind) -> Option<&MagnitudeRange> {
        match kind {
            AugOpKind::Jitter => Some(&self.ops.jitter),
            AugOpKind::Scale => Some(&self.ops.scale),
            AugOpKind::Rotate => self.ops.rotate.as_ref(),
            AugOpKind::Permute => Some(&self.ops.permute),
            AugOpKind::MagWarp => Some(&self.ops.magnitude_warp),
            AugOpKind::TimeWarp => Some(&self.ops.time_warp),
            AugOpKind::WindowSlice => Some(&self.ops.window_slice),
            AugOpKind::WindowWarp => Some(&self.ops.window_warp),
        }
    }

    fn params_from_primary(kind: AugOpKind, value: f64) -> OpParams {
        let mut params = OpParams {
            num_knots: DEFAULT_KNOTS,
            ..OpParams::default()
        };
        match kind {
            AugOpKind::Jitter | AugOpKind::Scale | AugOpKind::MagWarp | AugOpKind::TimeWarp => {
                params.sigma = value.max(0.0);
            }
            AugOpKind::Rotate => {}
            AugOpKind::Permute => {
                params.num_segments = (value.round() as i64).max(1) as usize;
            }
            AugOpKind::WindowSlice => {
                params.window_frac = value.clamp(MIN_WINDOW_FRAC, 1.0);
            }
            AugOpKind::WindowWarp => {
                params.window_frac = value.clamp(MIN_WINDOW_FRAC, 1.0 - MIN_WINDOW_FRAC);
                params.stretch = DEFAULT_STRETCH;
            }
        }
        params
    }

    /// Parameters at an op's default magnitude.
    pub fn default_params(&self, kind: AugOpKind) -> OpParams {
        let value = self.range(kind).map(|r| r.default).unwrap_or(0.0);
        Self::params_from_primary(kind, value)
    }

    /// Parameters for a magnitude level in `[0, 30]`.
    pub fn params_for_level(&self, kind: AugOpKind, level: f64) -> Result<OpParams> {
        if !(0.0..=LEVEL_MAX).contains(&level) {
            return Err(Error::InvalidParameter(format!(
                "magnitude level must be in [0, {LEVEL_MAX}], got {level}"
            )));
        }
        let value = self.range(kind).map(|r| r.at_level(level)).unwrap_or(0.0);
        Ok(Self::params_from_primary(kind, value))
    }
}
