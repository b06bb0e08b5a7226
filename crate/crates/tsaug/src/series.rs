//! Core data model: a single series, labeled datasets, and normalization.
//!
//! A [`TimeSeries`] is a time-major `T x C` grid of finite doubles (rows are
//! time steps, columns are channels) with an optional class label. A
//! [`Dataset`] is an ordered, shape-homogeneous collection of labeled series.
//! Both are immutable after construction and cheap to share across threads.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which split of an experiment a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Val => write!(f, "val"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// One sample: `T` time steps by `C` channels, plus an optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Array2<f64>,
    label: Option<usize>,
}

impl TimeSeries {
    /// Build a series, enforcing `T >= 2`, `C >= 1`, and finite values.
    pub fn new(values: Array2<f64>, label: Option<usize>) -> Result<Self> {
        let (t, c) = values.dim();
        if t < 2 {
            return Err(Error::InvalidSeries(format!(
                "need at least 2 time steps, got {t}"
            )));
        }
        if c < 1 {
            return Err(Error::InvalidSeries("need at least 1 channel".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSeries("non-finite value in series".into()));
        }
        Ok(TimeSeries { values, label })
    }

    /// Same shape as `self` but with new values; the label is carried over.
    ///
    /// Transforms use this so the label can never be dropped or altered.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        TimeSeries::new(values, self.label)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Number of time steps `T`.
    pub fn num_steps(&self) -> usize {
        self.values.nrows()
    }

    /// Number of channels `C`.
    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// View of one channel across all time steps.
    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.column(c)
    }

    /// Max absolute element-wise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &TimeSeries) -> Option<f64> {
        if self.values.dim() != other.values.dim() {
            return None;
        }
        Some(
            self.values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Ordered collection of same-shape labeled series.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<TimeSeries>,
    num_classes: usize,
    split_tag: SplitTag,
}

impl Dataset {
    /// Build a dataset, enforcing shape homogeneity and label range.
    ///
    /// Every sample must be labeled with a class below `num_classes`, and all
    /// samples must share one `(T, C)` shape.
    pub fn new(samples: Vec<TimeSeries>, num_classes: usize, split_tag: SplitTag) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSeries("dataset has no samples".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be positive".into()));
        }
        let shape = samples[0].values.dim();
        for (i, s) in samples.iter().enumerate() {
            if s.values.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    s.values.dim(),
                    shape
                )));
            }
            match s.label {
                Some(l) if l < num_classes => {}
                Some(l) => {
                    return Err(Error::InvalidSeries(format!(
                        "sample {i} has label {l} >= num_classes {num_classes}"
                    )))
                }
                None => {
                    return Err(Error::InvalidSeries(format!("sample {i} is unlabeled")));
                }
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            split_tag,
        })
    }

    pub fn samples(&self) -> &[TimeSeries] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// `(T, C)` shared by every sample.
    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].values.dim()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.unwrap()).collect()
    }

    /// Rebuild with transformed samples, keeping class count and split tag.
    pub fn map_samples<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(usize, &TimeSeries) -> Result<TimeSeries>,
    {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| f(i, s))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.num_classes, self.split_tag)
    }

    /// Same dataset under a different split tag.
    pub fn with_split_tag(&self, split_tag: SplitTag) -> Dataset {
        Dataset {
            samples: self.samples.clone(),
            num_classes: self.num_classes,
            split_tag,
        }
    }
}

/// Per-channel mean/std fitted on one dataset, applicable to another.
///
/// Standardization uses the population standard deviation (divide by `N`).
/// Channels with zero spread are mapped to zero rather than dividing by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Fit per-channel moments over all samples and time steps.
    pub fn fit(d: &Dataset) -> ChannelStats {
        let (t, c) = d.shape();
        let n = (d.len() * t) as f64;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for s in d.samples() {
            for row in s.values().rows() {
                for (ch, v) in row.iter().enumerate() {
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        for ch in 0..c {
            mean[ch] /= n;
            let var = (sq[ch] / n - mean[ch] * mean[ch]).max(0.0);
            sq[ch] = var.sqrt();
        }
        ChannelStats { mean, std: sq }
    }

    /// Standardize every sample with these statistics.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let (_, c) = d.shape();
        if c != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "stats fitted on {} channels, dataset has {c}",
                self.mean.len()
            )));
        }
        d.map_samples(|_, s| {
            let mut values = s.values().clone();
            for mut row in values.rows_mut() {
                for (ch, v) in row.iter_mut().enumerate() {
                    *v = if self.std[ch] > 0.0 {
                        (*v - self.mean[ch]) / self.std[ch]
                    } else {
                        0.0
                    };
                }
            }
            s.with_values(values)
        })
    }
}

/// Z-score a dataset against its own per-channel moments.
///
/// Constant channels map to all zeros; shapes and labels are unchanged.
pub fn normalize_zscore(d: &Dataset) -> Result<Dataset> {
    ChannelStats::fit(d).apply(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn series(values: Array2<f64>, label: usize) -> TimeSeries {
        TimeSeries::new(values, Some(label)).unwrap()
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(TimeSeries::new(Array2::zeros((1, 3)), None).is_err());
        assert!(TimeSeries::new(Array2::zeros((4, 0)), None).is_err());
        assert!(TimeSeries::new(array![[1.0], [f64::NAN]], None).is_err());
    }

    #[test]
    fn dataset_enforces_homogeneity_and_labels() {
        let a = series(Array2::zeros((4, 2)), 0);
        let b = series(Array2::zeros((5, 2)), 1);
        assert!(Dataset::new(vec![a.clone(), b], 2, SplitTag::Train).is_err());

        let c = series(Array2::zeros((4, 2)), 7);
        assert!(Dataset::new(vec![a.clone(), c], 2, SplitTag::Train).is_err());

        let unlabeled = TimeSeries::new(Array2::zeros((4, 2)), None).unwrap();
        assert!(Dataset::new(vec![a, unlabeled], 2, SplitTag::Train).is_err());
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let s = series(array![[1.0], [1.0], [1.0]], 0);
        let d = Dataset::new(vec![s], 1, SplitTag::Train).unwrap();
        let n = normalize_zscore(&d).unwrap();
        for v in n.samples()[0].values() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn two_point_channel_maps_to_unit_deviations() {
        let s = series(array![[0.0], [2.0]], 0);
        let d = Dataset::new(vec![s], 1, SplitTag::Train).unwrap();
        let n = normalize_zscore(&d).unwrap();
        let out = n.samples()[0].values();
        assert!((out[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((out[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_moments_vanish() {
        // Oracle: recompute the moments of the normalized output directly.
        let mut rng = crate::rng::RngStream::new(11).rng();
        let samples: Vec<_> = (0..50)
            .map(|i| {
                let values =
                    Array2::from_shape_fn((20, 3), |_| rng.random::<f64>() * 4.0 - 1.0);
                series(values, i % 2)
            })
            .collect();
        let d = Dataset::new(samples, 2, SplitTag::Train).unwrap();
        let n = normalize_zscore(&d).unwrap();

        let total = (n.len() * 20) as f64;
        for ch in 0..3 {
            let mut mean = 0.0;
            let mut sq = 0.0;
            for s in n.samples() {
                for v in s.channel(ch) {
                    mean += v;
                    sq += v * v;
                }
            }
            mean /= total;
            let var = sq / total - mean * mean;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "channel {ch} var {var}");
        }
    }

    #[test]
    fn stats_fitted_on_train_leave_val_shifted() {
        let train = Dataset::new(
            vec![series(array![[0.0], [2.0]], 0)],
            1,
            SplitTag::Train,
        )
        .unwrap();
        let val = Dataset::new(
            vec![series(array![[10.0], [12.0]], 0)],
            1,
            SplitTag::Val,
        )
        .unwrap();
        let stats = ChannelStats::fit(&train);
        let nv = stats.apply(&val).unwrap();
        let mean: f64 = nv.samples()[0].channel(0).iter().sum::<f64>() / 2.0;
        assert!((mean - 10.0).abs() < 1e-12);
    }
}
