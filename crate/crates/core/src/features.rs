//! Regression target and input features.
//!
//! The target is the pigging indicator: long-term head loss rescaled to
//! `[0, 1]` between two percentiles of the training span and clamped outside.
//! The inputs are nine trailing statistics of the short-term head loss: mean,
//! minimum and maximum over 8, 16 and 24 hours.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::{slice_interval, SegmentMeta, Timestamp, UniformSeries};

/// Rolling window lengths in hours, in contract order.
pub const WINDOW_HOURS: [u32; 3] = [8, 16, 24];

/// Feature columns in contract order.
pub const FEATURE_NAMES: [&str; 9] = [
    "mean8", "min8", "max8", "mean16", "min16", "max16", "mean24", "min24", "max24",
];

pub const FEATURE_COUNT: usize = 9;

/// Header of the dataset CSV.
pub const DATASET_CSV_HEADER: &str = "t_us,mean8,min8,max8,mean16,min16,max16,mean24,min24,max24,target";

/// Minimum present bins in the training span for fitting the mapping.
pub const MIN_TRAINING_BINS: usize = 1000;

/// Minimum fraction of present bins for a rolling statistic.
pub const MIN_FEATURE_COVERAGE: f64 = 0.5;

/// Linear rescaling between two percentiles of the training long-term head loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingConfig {
    pub lo_percentile: f64,
    pub hi_percentile: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl MappingConfig {
    /// Percentiles only; `h_lo`/`h_hi` are filled by [`fit_mapping`].
    pub fn percentiles(lo: f64, hi: f64) -> Self {
        MappingConfig {
            lo_percentile: lo,
            hi_percentile: hi,
            h_lo: f64::NAN,
            h_hi: f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..100.0).contains(&p);
        if !(p_ok(self.lo_percentile) && p_ok(self.hi_percentile) && self.lo_percentile < self.hi_percentile) {
            return Err(Error::invalid(format!(
                "percentiles must satisfy 0 <= lo < hi < 100, got {} and {}",
                self.lo_percentile, self.hi_percentile
            )));
        }
        if !(self.h_lo < self.h_hi) {
            return Err(Error::Degenerate(format!(
                "mapping anchors must satisfy h_lo < h_hi, got {} and {}",
                self.h_lo, self.h_hi
            )));
        }
        Ok(())
    }

    /// `clamp((h - h_lo) / (h_hi - h_lo), 0, 1)`.
    pub fn apply(&self, h: f64) -> f64 {
        ((h - self.h_lo) / (self.h_hi - self.h_lo)).clamp(0.0, 1.0)
    }
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig::percentiles(1.0, 99.0)
    }
}

/// Percentile of sorted data by linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Anchors the mapping at the configured percentiles of present long-term
/// values in `[train_from, train_to)`.
pub fn fit_mapping(
    long_term: &UniformSeries,
    train_from: Timestamp,
    train_to: Timestamp,
    cfg: &MappingConfig,
) -> Result<MappingConfig> {
    let span = slice_interval(long_term, train_from, train_to)?;
    let mut values: Vec<f64> = span.values().iter().flatten().copied().collect();
    if values.len() < MIN_TRAINING_BINS {
        return Err(Error::InsufficientData(format!(
            "{} present bins in the training span, need {MIN_TRAINING_BINS}",
            values.len()
        )));
    }
    values.sort_by(f64::total_cmp);
    let fitted = MappingConfig {
        h_lo: percentile(&values, cfg.lo_percentile),
        h_hi: percentile(&values, cfg.hi_percentile),
        ..*cfg
    };
    fitted.validate()?;
    Ok(fitted)
}

/// Per-segment pigging indicator in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PigIndicatorSeries {
    pub segment: SegmentMeta,
    pub y: UniformSeries,
}

pub fn build_pig_indicator(long_term: &UniformSeries, m: &MappingConfig, segment: &SegmentMeta) -> Result<PigIndicatorSeries> {
    m.validate()?;
    Ok(PigIndicatorSeries {
        segment: segment.clone(),
        y: long_term.map_present(|h| m.apply(h)),
    })
}

/// Nine trailing statistics at time `t`, plus the target once joined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub t: Timestamp,
    pub values: [f64; FEATURE_COUNT],
    pub target: Option<f64>,
}

/// Mean/min/max over the trailing `n` bins ending at each bin, `None` below
/// the coverage threshold.
fn trailing_stats(values: &[Option<f64>], n: usize) -> Vec<Option<[f64; 3]>> {
    let need = (MIN_FEATURE_COVERAGE * n as f64).ceil() as usize;
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut mins: VecDeque<(usize, f64)> = VecDeque::new();
    let mut maxs: VecDeque<(usize, f64)> = VecDeque::new();
    for k in 0..values.len() {
        if let Some(v) = values[k] {
            sum += v;
            count += 1;
            while mins.back().is_some_and(|&(_, m)| m >= v) {
                mins.pop_back();
            }
            mins.push_back((k, v));
            while maxs.back().is_some_and(|&(_, m)| m <= v) {
                maxs.pop_back();
            }
            maxs.push_back((k, v));
        }
        if k >= n {
            if let Some(v) = values[k - n] {
                sum -= v;
                count -= 1;
            }
        }
        let oldest = (k + 1).saturating_sub(n);
        while mins.front().is_some_and(|&(i, _)| i < oldest) {
            mins.pop_front();
        }
        while maxs.front().is_some_and(|&(i, _)| i < oldest) {
            maxs.pop_front();
        }
        if count == 0 {
            sum = 0.0;
        }
        out.push((count >= need.max(1)).then(|| {
            let min = mins.front().expect("present values in window").1;
            let max = maxs.front().expect("present values in window").1;
            [(sum / count as f64).clamp(min, max), min, max]
        }));
    }
    out
}

/// Trailing 8/16/24 h statistics of the short-term head loss.
///
/// A statistic needs at least half of its window present; a bin is emitted
/// only when all nine are available.
pub fn rolling_features(short_term: &UniformSeries) -> Result<Vec<FeatureRow>> {
    let step = short_term.step_us();
    let mut per_window = Vec::with_capacity(3);
    for hours in WINDOW_HOURS {
        let window_us = hours as i64 * 3600 * 1_000_000;
        if window_us % step != 0 {
            return Err(Error::invalid(format!(
                "grid step {} s does not divide the {hours} h window",
                short_term.step_s()
            )));
        }
        per_window.push(trailing_stats(short_term.values(), (window_us / step) as usize));
    }
    let rows = (0..short_term.len())
        .filter_map(|k| {
            let mut values = [0.0; FEATURE_COUNT];
            for (w, stats) in per_window.iter().enumerate() {
                values[3 * w..3 * w + 3].copy_from_slice(&stats[k]?);
            }
            Some(FeatureRow {
                t: short_term.time_at(k),
                values,
                target: None,
            })
        })
        .collect();
    Ok(rows)
}

/// One supervised example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub t: Timestamp,
    pub features: [f64; FEATURE_COUNT],
    pub target: f64,
}

/// Chronologically ordered examples for one segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub segment: String,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Rows with `from <= t < to`.
    pub fn slice(&self, from: Timestamp, to: Timestamp) -> Dataset {
        Dataset {
            segment: self.segment.clone(),
            rows: self.rows.iter().filter(|r| r.t >= from && r.t < to).copied().collect(),
        }
    }

    /// Every `stride`-th row, starting with the first.
    pub fn thinned(&self, stride: usize) -> Dataset {
        Dataset {
            segment: self.segment.clone(),
            rows: self.rows.iter().step_by(stride.max(1)).copied().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{DATASET_CSV_HEADER}")?;
        for r in &self.rows {
            write!(w, "{}", r.t.micros())?;
            for v in &r.features {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", r.target)?;
        }
        Ok(())
    }
}

/// Reads a dataset CSV; the header must match the contract order exactly.
pub fn load_dataset_csv(path: impl AsRef<Path>, segment: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim_end()) != Some(DATASET_CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{DATASET_CSV_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURE_COUNT + 2 {
            return Err(err(format!("expected {} fields, found {}", FEATURE_COUNT + 2, fields.len())));
        }
        let t: i64 = fields[0].parse().map_err(|_| err(format!("bad timestamp `{}`", fields[0])))?;
        let mut nums = [0.0; FEATURE_COUNT + 1];
        for (slot, f) in nums.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
        }
        let mut features = [0.0; FEATURE_COUNT];
        features.copy_from_slice(&nums[..FEATURE_COUNT]);
        rows.push(DatasetRow {
            t: Timestamp::from_micros(t),
            features,
            target: nums[FEATURE_COUNT],
        });
    }
    Ok(Dataset {
        segment: segment.to_string(),
        rows,
    })
}

/// Inner join of feature rows and indicator on timestamp.
///
/// Rows whose indicator bin is missing or outside the series are dropped.
pub fn assemble_dataset(features: &[FeatureRow], y: &PigIndicatorSeries) -> Result<Dataset> {
    let rows: Vec<DatasetRow> = features
        .iter()
        .filter_map(|f| {
            let k = y.y.index_of(f.t)?;
            if y.y.time_at(k) != f.t {
                return None;
            }
            Some(DatasetRow {
                t: f.t,
                features: f.values,
                target: y.y.get(k)?,
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Segment {
            segment: y.segment.name(),
            message: "no timestamps shared by features and indicator".into(),
        });
    }
    Ok(Dataset {
        segment: y.segment.name(),
        rows,
    })
}
