//! Acoustic PIG tracking from two hydrophones.
//!
//! The pump at the upstream station is a broadband noise source. The
//! downstream hydrophone hears it after the travel time `D/c`, which shows up
//! in the windowed cross-correlation as a stationary ridge at the
//! direct-arrival lag `tau0 = -D/c` (lags are measured as the delay of the
//! upstream channel relative to the downstream one). A PIG inside the line
//! reflects part of the pump noise back upstream, so the upstream channel
//! also carries a copy delayed by `2x/c`, where `x` is the PIG's distance
//! from the upstream station. That copy produces a second ridge at
//!
//! ```text
//! tau(t) = tau0 + 2 x(t) / c
//! ```
//!
//! which starts on the direct-arrival ridge when the PIG is launched and
//! climbs to `+D/c` as it reaches the downstream station.
//!
//! [`build_correlation_map`] computes the time-by-lag map,
//! [`extract_trajectory`] finds the slanted ridge with a dynamic-programming
//! path search.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::series::{SegmentMeta, Timestamp, UniformSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub max_lag_s: f64,
    pub sound_speed_m_s: f64,
    /// Half-width of the band around the direct-arrival lag where no track
    /// candidates are taken.
    pub baseline_exclusion_s: f64,
    /// Upper bound on PIG speed used by the continuity constraint.
    pub max_speed_m_s: f64,
    /// Correlation peaks below this value are not track candidates.
    pub min_peak_score: f64,
    /// A track whose mean score is below this is rejected.
    pub min_mean_score: f64,
    /// A track must span at least this many map columns.
    pub min_track_columns: usize,
    pub max_candidates_per_column: usize,
    /// Columns the path may skip (flagged or faded columns).
    pub max_skipped_columns: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            window_s: 300.0,
            hop_s: 30.0,
            max_lag_s: 120.0,
            sound_speed_m_s: 1186.14,
            baseline_exclusion_s: 2.0,
            max_speed_m_s: 5.0,
            min_peak_score: 0.2,
            min_mean_score: 0.3,
            min_track_columns: 10,
            max_candidates_per_column: 8,
            max_skipped_columns: 4,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(Error::invalid("hop must satisfy 0 < hop <= window"));
        }
        if !(self.max_lag_s > 0.0) {
            return Err(Error::invalid("max lag must be positive"));
        }
        if !(self.sound_speed_m_s > 0.0) {
            return Err(Error::invalid("sound speed must be positive"));
        }
        if !(self.baseline_exclusion_s >= 0.0 && self.max_speed_m_s > 0.0) {
            return Err(Error::invalid("exclusion must be >= 0 and max speed > 0"));
        }
        Ok(())
    }
}

/// Correlation coefficients for lags `-max_lag..=max_lag` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCorrelation {
    pub values: Vec<f64>,
    /// Set when either window has zero variance; `values` are then all zero.
    pub degenerate: bool,
}

impl LagCorrelation {
    pub fn max_lag(&self) -> usize {
        self.values.len() / 2
    }

    /// Coefficient at signed lag `lag` (in samples).
    pub fn at(&self, lag: isize) -> f64 {
        self.values[(lag + self.max_lag() as isize) as usize]
    }

    /// Signed lag of the largest coefficient; ties go to the most negative lag.
    pub fn argmax_lag(&self) -> isize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best as isize - self.max_lag() as isize
    }
}

/// FFT-backed normalized cross-correlation for a fixed window length.
pub struct Correlator {
    len: usize,
    max_lag: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buf_a: Vec<Complex<f64>>,
    buf_b: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Correlator {
    pub fn new(len: usize, max_lag: usize) -> Result<Self> {
        if len <= 2 * max_lag {
            return Err(Error::invalid(format!(
                "window of {len} samples must exceed twice the {max_lag}-sample max lag"
            )));
        }
        let padded = (len + max_lag).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(padded);
        let ifft = planner.plan_fft_inverse(padded);
        let scratch_len = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        Ok(Correlator {
            len,
            max_lag,
            fft,
            ifft,
            buf_a: vec![Complex::default(); padded],
            buf_b: vec![Complex::default(); padded],
            scratch: vec![Complex::default(); scratch_len],
        })
    }

    /// `R(l) = sum_n a'[n] b'[n+l] / sqrt(sum a'^2 * sum b'^2)` with `a'`, `b'`
    /// the mean-removed windows. Positive `l` means `b` lags `a`.
    pub fn correlate(&mut self, a: &[f64], b: &[f64]) -> Result<LagCorrelation> {
        if a.len() != self.len || b.len() != self.len {
            return Err(Error::invalid(format!(
                "windows of {} and {} samples, expected {}",
                a.len(),
                b.len(),
                self.len
            )));
        }
        let out_len = 2 * self.max_lag + 1;
        let n = self.len as f64;
        let mean_a = a.iter().sum::<f64>() / n;
        let mean_b = b.iter().sum::<f64>() / n;
        let energy_a: f64 = a.iter().map(|x| (x - mean_a).powi(2)).sum();
        let energy_b: f64 = b.iter().map(|x| (x - mean_b).powi(2)).sum();
        let norm = (energy_a * energy_b).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Ok(LagCorrelation {
                values: vec![0.0; out_len],
                degenerate: true,
            });
        }
        let padded = self.buf_a.len();
        for i in 0..padded {
            self.buf_a[i] = Complex::new(if i < self.len { a[i] - mean_a } else { 0.0 }, 0.0);
            self.buf_b[i] = Complex::new(if i < self.len { b[i] - mean_b } else { 0.0 }, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf_a, &mut self.scratch);
        self.fft.process_with_scratch(&mut self.buf_b, &mut self.scratch);
        for (x, y) in self.buf_a.iter_mut().zip(&self.buf_b) {
            *x = x.conj() * y;
        }
        self.ifft.process_with_scratch(&mut self.buf_a, &mut self.scratch);
        let scale = 1.0 / (padded as f64 * norm);
        let values = (0..out_len)
            .map(|i| {
                let lag = i as isize - self.max_lag as isize;
                let idx = lag.rem_euclid(padded as isize) as usize;
                (self.buf_a[idx].re * scale).clamp(-1.0, 1.0)
            })
            .collect();
        Ok(LagCorrelation {
            values,
            degenerate: false,
        })
    }
}

/// Normalized cross-correlation of two equal-length windows.
pub fn windowed_xcorr(a: &[f64], b: &[f64], max_lag_samples: usize) -> Result<LagCorrelation> {
    if a.len() != b.len() {
        return Err(Error::invalid("windows must have equal length"));
    }
    Correlator::new(a.len(), max_lag_samples)?.correlate(a, b)
}

/// Time-by-lag grid of correlation coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    /// Centre of each analysis window.
    pub time_bins: Vec<Timestamp>,
    /// Lag step in seconds; lag index `i` is `(i - max_lag) * lag_step_s`.
    pub lag_step_s: f64,
    pub max_lag: usize,
    /// One column of `2*max_lag+1` coefficients per time bin.
    pub columns: Vec<Vec<f64>>,
    /// Columns zero-filled because of missing data or silence.
    pub flagged: Vec<bool>,
}

impl CorrelationMap {
    pub fn lag_count(&self) -> usize {
        2 * self.max_lag + 1
    }

    pub fn lag_s(&self, idx: usize) -> f64 {
        (idx as f64 - self.max_lag as f64) * self.lag_step_s
    }

    pub fn lag_axis_s(&self) -> Vec<f64> {
        (0..self.lag_count()).map(|i| self.lag_s(i)).collect()
    }

    /// Index of the lag bin nearest to `lag_s`, clamped to the axis.
    pub fn lag_index(&self, lag_s: f64) -> usize {
        let i = (lag_s / self.lag_step_s).round() + self.max_lag as f64;
        i.clamp(0.0, (self.lag_count() - 1) as f64) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// The stationary ridge: lag with the largest mean over unflagged columns.
    pub fn direct_arrival_index(&self) -> Option<usize> {
        let live: Vec<&Vec<f64>> = self
            .columns
            .iter()
            .zip(&self.flagged)
            .filter(|(_, f)| !**f)
            .map(|(c, _)| c)
            .collect();
        if live.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.lag_count()];
        for c in &live {
            for (m, v) in mean.iter_mut().zip(c.iter()) {
                *m += v;
            }
        }
        let mut best = 0;
        for i in 0..mean.len() {
            if mean[i] > mean[best] {
                best = i;
            }
        }
        Some(best)
    }

    /// CSV matrix: header `time_us,<lag_s>...`, one row per time bin.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "time_us")?;
        for lag in self.lag_axis_s() {
            write!(w, ",{lag}")?;
        }
        writeln!(w)?;
        for (t, col) in self.time_bins.iter().zip(&self.columns) {
            write!(w, "{}", t.micros())?;
            for v in col {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Correlation map of two dynamic channels on the same grid.
///
/// Each column correlates `downstream` against `upstream` over one window, so
/// a component that reaches the upstream hydrophone first appears at a
/// negative lag. Windows touching missing data are zero-filled and flagged.
pub fn build_correlation_map(
    upstream: &UniformSeries,
    downstream: &UniformSeries,
    cfg: &TrackerConfig,
) -> Result<CorrelationMap> {
    cfg.validate()?;
    if upstream.step_us() != downstream.step_us() || !upstream.same_phase(downstream) {
        return Err(Error::GridMismatch(
            "dynamic channels must share sample grid".into(),
        ));
    }
    let start = upstream.start().max(downstream.start());
    let end = upstream.end().min(downstream.end());
    if end <= start {
        return Err(Error::invalid("dynamic channels do not overlap in time"));
    }
    let step_s = upstream.step_s();
    let to_samples = |s: f64| (s / step_s).round() as usize;
    let (win, hop, max_lag) = (to_samples(cfg.window_s), to_samples(cfg.hop_s), to_samples(cfg.max_lag_s));
    if hop == 0 || max_lag == 0 {
        return Err(Error::invalid("hop and max lag must span at least one sample"));
    }
    // validates win > 2*max_lag
    Correlator::new(win, max_lag)?;

    let n = ((end.micros() - start.micros()) / upstream.step_us()) as usize;
    let up0 = ((start.micros() - upstream.start().micros()) / upstream.step_us()) as usize;
    let down0 = ((start.micros() - downstream.start().micros()) / downstream.step_us()) as usize;
    let up = &upstream.values()[up0..up0 + n];
    let down = &downstream.values()[down0..down0 + n];
    let starts: Vec<usize> = (0..).map(|j| j * hop).take_while(|s| s + win <= n).collect();

    let results: Vec<(Vec<f64>, bool)> = starts
        .par_iter()
        .map_init(
            || Correlator::new(win, max_lag).expect("validated above"),
            |corr, &s| {
                let a: Option<Vec<f64>> = down[s..s + win].iter().copied().collect();
                let b: Option<Vec<f64>> = up[s..s + win].iter().copied().collect();
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let row = corr.correlate(&a, &b).expect("window length fixed");
                        (row.values, row.degenerate)
                    }
                    _ => (vec![0.0; 2 * max_lag + 1], true),
                }
            },
        )
        .collect();

    let half = win as i64 * upstream.step_us() / 2;
    let time_bins = starts
        .iter()
        .map(|&s| Timestamp::from_micros(start.micros() + s as i64 * upstream.step_us() + half))
        .collect();
    let (columns, flagged) = results.into_iter().unzip();
    Ok(CorrelationMap {
        time_bins,
        lag_step_s: step_s,
        max_lag,
        columns,
        flagged,
    })
}

/// PIG distance from the upstream station for an echo at `lag_s`:
/// `x = c * (lag - tau0) / 2`, clamped to `[0, segment_m]`.
pub fn lag_to_position(lag_s: f64, baseline_lag_s: f64, cfg: &TrackerConfig, segment_m: f64) -> f64 {
    (cfg.sound_speed_m_s * (lag_s - baseline_lag_s) / 2.0).clamp(0.0, segment_m)
}

/// Inverse of [`lag_to_position`] on `[0, segment_m]`.
pub fn position_to_lag(x_m: f64, baseline_lag_s: f64, cfg: &TrackerConfig) -> f64 {
    baseline_lag_s + 2.0 * x_m / cfg.sound_speed_m_s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: Timestamp,
    pub lag_s: f64,
    pub score: f64,
    pub position_m: f64,
}

/// An extracted PIG path through a correlation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub segment: SegmentMeta,
    /// Direct-arrival lag the echo positions are measured from.
    pub baseline_lag_s: f64,
    /// Points in time order, including the lead-in that merges with the
    /// direct-arrival ridge.
    pub points: Vec<TrackPoint>,
    /// Mean score of the detected ridge (lead-in excluded).
    pub mean_score: f64,
    /// Least-squares speed over the detected ridge.
    pub velocity_m_s: f64,
    /// When the fitted motion reaches the downstream station.
    pub eta: Option<Timestamp>,
    /// When the fitted motion leaves the upstream station.
    pub departure: Option<Timestamp>,
}

impl Trajectory {
    pub fn first(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrackPoint {
        self.points.last().expect("trajectory has points")
    }

    /// `time_us,lag_s,position_m,score`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_us,lag_s,position_m,score")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.t.micros(), p.lag_s, p.position_m, p.score)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    lag: usize,
    score: f64,
}

/// Finds the slanted echo ridge of a travelling PIG.
///
/// Per column, local maxima at or above `min_peak_score` that lie between
/// the exclusion band around the direct-arrival lag and the downstream
/// station's echo lag become candidates. A dynamic-programming search chains
/// candidates across columns maximizing the summed `score - min_peak_score`
/// subject to non-decreasing lag, a per-hop lag increase of at most
/// `2*max_speed/c*hop`, and at most `max_skipped_columns` skipped columns.
/// Returns `None` when the best chain is shorter than `min_track_columns`
/// or its mean score is below `min_mean_score`.
///
/// A detected ridge is then followed backwards, under the same continuity
/// constraint, until it merges with the direct-arrival ridge; those lead-in
/// points are part of the returned path but not of its score or velocity.
pub fn extract_trajectory(map: &CorrelationMap, cfg: &TrackerConfig, seg: &SegmentMeta) -> Option<Trajectory> {
    let baseline = map.direct_arrival_index()?;
    let lag_step = map.lag_step_s;
    let segment_m = seg.length_km * 1000.0;
    let excl = (cfg.baseline_exclusion_s / lag_step).round() as usize;
    let lo = baseline + excl + 1;
    let far = position_to_lag(segment_m, map.lag_s(baseline), cfg);
    let hi = (map.lag_index(far) + 1).min(map.lag_count() - 1);
    if lo > hi {
        return None;
    }
    let hop_s = if map.time_bins.len() > 1 {
        map.time_bins[1].secs_since(map.time_bins[0])
    } else {
        cfg.hop_s
    };
    let max_step_per_hop = (2.0 * cfg.max_speed_m_s / cfg.sound_speed_m_s * hop_s / lag_step)
        .ceil()
        .max(1.0) as usize;

    let candidates: Vec<Vec<Candidate>> = map
        .columns
        .iter()
        .zip(&map.flagged)
        .map(|(col, &flag)| {
            if flag {
                return Vec::new();
            }
            let mut peaks: Vec<Candidate> = (lo..=hi)
                .filter(|&i| {
                    let v = col[i];
                    v >= cfg.min_peak_score
                        && (i == 0 || v >= col[i - 1])
                        && (i + 1 >= col.len() || v >= col[i + 1])
                })
                .map(|i| Candidate { lag: i, score: col[i] })
                .collect();
            peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.lag.cmp(&b.lag)));
            peaks.truncate(cfg.max_candidates_per_column);
            peaks.sort_by_key(|c| c.lag);
            peaks
        })
        .collect();

    // best[c][i]: (accumulated gain, length, predecessor)
    let mut best: Vec<Vec<(f64, usize, Option<(usize, usize)>)>> = Vec::with_capacity(candidates.len());
    for (c, cands) in candidates.iter().enumerate() {
        let mut row = Vec::with_capacity(cands.len());
        for cand in cands {
            let gain = cand.score - cfg.min_peak_score;
            let mut acc = (gain, 1usize, None);
            for gap in 1..=cfg.max_skipped_columns + 1 {
                let Some(p) = c.checked_sub(gap) else { break };
                let reach = max_step_per_hop * gap;
                for (pi, prev) in candidates[p].iter().enumerate() {
                    if prev.lag <= cand.lag && cand.lag - prev.lag <= reach {
                        let (g, len, _) = best[p][pi];
                        let total = g + gain;
                        if total > acc.0 || (total == acc.0 && len + 1 > acc.1) {
                            acc = (total, len + 1, Some((p, pi)));
                        }
                    }
                }
            }
            row.push(acc);
        }
        best.push(row);
    }

    let mut end: Option<(usize, usize)> = None;
    for (c, row) in best.iter().enumerate() {
        for (i, entry) in row.iter().enumerate() {
            if end.is_none_or(|(ec, ei)| entry.0 > best[ec][ei].0) {
                end = Some((c, i));
            }
        }
    }
    let (mut c, mut i) = end?;
    let mut chain = vec![(c, candidates[c][i])];
    while let Some((pc, pi)) = best[c][i].2 {
        c = pc;
        i = pi;
        chain.push((c, candidates[c][i]));
    }
    chain.reverse();
    if chain.len() < cfg.min_track_columns {
        return None;
    }
    let mean_score = chain.iter().map(|(_, k)| k.score).sum::<f64>() / chain.len() as f64;
    if mean_score < cfg.min_mean_score {
        return None;
    }

    let tau0 = map.lag_s(baseline);
    let point = |col: usize, lag: usize| TrackPoint {
        t: map.time_bins[col],
        lag_s: map.lag_s(lag),
        score: map.columns[col][lag],
        position_m: lag_to_position(map.lag_s(lag), tau0, cfg, segment_m),
    };

    // least squares x = a + b t over the detected ridge
    let t_ref = map.time_bins[chain[0].0];
    let ts: Vec<f64> = chain.iter().map(|(col, _)| map.time_bins[*col].secs_since(t_ref)).collect();
    let xs: Vec<f64> = chain.iter().map(|(col, k)| point(*col, k.lag).position_m).collect();
    let n = ts.len() as f64;
    let (mt, mx) = (ts.iter().sum::<f64>() / n, xs.iter().sum::<f64>() / n);
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&xs).map(|(t, x)| (t - mt) * (x - mx)).sum();
    let velocity = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mx - velocity * mt;
    let (eta, departure) = if velocity > 0.0 {
        (
            Some(t_ref.offset_secs((segment_m - intercept) / velocity)),
            Some(t_ref.offset_secs(-intercept / velocity)),
        )
    } else {
        (None, None)
    };

    // lead-in: follow the strongest admissible lag back to the direct ridge
    let mut lead = Vec::new();
    let (mut col, mut lag) = (chain[0].0, chain[0].1.lag);
    while lag > baseline && col > 0 {
        col -= 1;
        if map.flagged[col] {
            continue;
        }
        let from = lag.saturating_sub(max_step_per_hop).max(baseline);
        let column = &map.columns[col];
        let mut pick = lag;
        for k in (from..=lag).rev() {
            if column[k] > column[pick] {
                pick = k;
            }
        }
        lag = pick;
        lead.push(point(col, lag));
    }
    lead.reverse();

    let mut points = lead;
    points.extend(chain.iter().map(|(col, k)| point(*col, k.lag)));
    Some(Trajectory {
        segment: seg.clone(),
        baseline_lag_s: tau0,
        points,
        mean_score,
        velocity_m_s: velocity,
        eta,
        departure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Direct evaluation of the normalized correlation sum.
    fn xcorr_direct(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
        let n = a.len();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let ea: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let eb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
        let norm = (ea * eb).sqrt();
        (-(max_lag as isize)..=max_lag as isize)
            .map(|l| {
                let mut s = 0.0;
                for i in 0..n as isize {
                    let j = i + l;
                    if j >= 0 && (j as usize) < n {
                        s += (a[i as usize] - ma) * (b[j as usize] - mb);
                    }
                }
                s / norm
            })
            .collect()
    }

    #[test]
    fn autocorrelation_peak() {
        let a = noise(1, 512);
        let r = windowed_xcorr(&a, &a, 50).unwrap();
        assert!((r.at(0) - 1.0).abs() < 1e-9);
        assert_eq!(r.argmax_lag(), 0);
    }

    #[test]
    fn pure_delay() {
        let src = noise(2, 1100);
        let a = src[100..1100].to_vec();
        let b = src[93..1093].to_vec();
        // b[n] = a[n-7]
        let r = windowed_xcorr(&a, &b, 40).unwrap();
        assert_eq!(r.argmax_lag(), 7);
        assert!(r.at(7) > 0.98);
    }

    #[test]
    fn independent_noise_bound() {
        let n = 4800;
        let bound = 5.0 / (n as f64).sqrt();
        let mut corr = Correlator::new(n, 200).unwrap();
        for draw in 0..100u64 {
            let a = noise(1000 + draw, n);
            let b = noise(5000 + draw, n);
            let r = corr.correlate(&a, &b).unwrap();
            let peak = r.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak < bound, "draw {draw}: {peak} >= {bound}");
        }
    }

    #[test]
    fn zero_variance_is_flagged() {
        let r = windowed_xcorr(&[3.0; 64], &noise(3, 64), 5).unwrap();
        assert!(r.degenerate);
        assert!(r.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_too_short() {
        assert!(windowed_xcorr(&[1.0; 10], &[1.0; 10], 5).is_err());
        assert!(windowed_xcorr(&[1.0; 10], &[1.0; 11], 2).is_err());
    }

    #[test]
    fn fft_matches_direct_sum() {
        let a = noise(4, 200);
        let b = noise(5, 200).iter().zip(&a).map(|(x, y)| 0.3 * x + y).collect::<Vec<_>>();
        let fast = windowed_xcorr(&a, &b, 60).unwrap();
        let slow = xcorr_direct(&a, &b, 60);
        for (f, s) in fast.values.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-12);
        }
    }

    #[test]
    fn positions() {
        let cfg = TrackerConfig::default();
        let d = 59_307.0;
        let tau0 = -d / cfg.sound_speed_m_s;
        assert_eq!(lag_to_position(tau0, tau0, &cfg, d), 0.0);
        assert!((lag_to_position(tau0 + 2.0 * d / cfg.sound_speed_m_s, tau0, &cfg, d) - d).abs() < 1e-9);
        assert!((lag_to_position(0.0, -50.0, &cfg, d) - 29_653.5).abs() < 1e-9);
        assert_eq!(lag_to_position(tau0 - 5.0, tau0, &cfg, d), 0.0);
        assert_eq!(lag_to_position(500.0, tau0, &cfg, d), d);
    }

    fn uniform(values: Vec<f64>) -> UniformSeries {
        UniformSeries::from_values(Timestamp::from_micros(0), 0.5, values).unwrap()
    }

    #[test]
    fn map_of_missing_input_is_flagged() {
        let cfg = TrackerConfig::default();
        let empty = UniformSeries::new(Timestamp::from_micros(0), 0.5, vec![None; 4000]).unwrap();
        let map = build_correlation_map(&empty, &empty, &cfg).unwrap();
        assert!(!map.is_empty());
        assert!(map.flagged.iter().all(|f| *f));
        assert!(map.columns.iter().flatten().all(|v| *v == 0.0));
        let seg = SegmentMeta {
            upstream: "A".into(),
            downstream: "B".into(),
            length_km: 59.307,
        };
        assert!(extract_trajectory(&map, &cfg, &seg).is_none());
    }

    #[test]
    fn map_requires_overlap() {
        let cfg = TrackerConfig::default();
        let a = uniform(vec![0.0; 100]);
        let b = UniformSeries::from_values(Timestamp::from_micros(3_600_000_000), 0.5, vec![0.0; 100]).unwrap();
        assert!(build_correlation_map(&a, &b, &cfg).is_err());
    }

    #[test]
    fn map_delay_ridge() {
        let cfg = TrackerConfig::default();
        let src = noise(6, 8000);
        // downstream hears the upstream signal 20 samples (10 s) later
        let up = uniform(src[100..7100].to_vec());
        let down = uniform(src[80..7080].to_vec());
        let map = build_correlation_map(&up, &down, &cfg).unwrap();
        let ridge = map.direct_arrival_index().unwrap();
        assert!((map.lag_s(ridge) - -10.0).abs() < 1e-12);
        for col in &map.columns {
            let r = LagCorrelation {
                values: col.clone(),
                degenerate: false,
            };
            assert_eq!(r.argmax_lag(), -20);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn correlation_bounded(seed in 0u64..10_000, n in 20usize..300, gain in -3.0f64..3.0) {
            let a = noise(seed, n);
            let b: Vec<f64> = noise(seed + 1, n).iter().zip(&a).map(|(x, y)| x + gain * y).collect();
            let r = windowed_xcorr(&a, &b, (n - 1) / 2).unwrap();
            prop_assert!(r.values.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn delay_covariance(seed in 0u64..10_000, k in 0usize..30) {
            let src = noise(seed, 700);
            let a = src[50..650].to_vec();
            let base = windowed_xcorr(&a, &src[50..650], 80).unwrap().argmax_lag();
            let b = src[50 - k..650 - k].to_vec();
            let shifted = windowed_xcorr(&a, &b, 80).unwrap().argmax_lag();
            prop_assert_eq!(shifted, base + k as isize);
        }

        #[test]
        fn position_lag_inverse(x in 0.0f64..59_307.0, tau0 in -60.0f64..0.0) {
            let cfg = TrackerConfig::default();
            let back = lag_to_position(position_to_lag(x, tau0, &cfg), tau0, &cfg, 59_307.0);
            prop_assert!((back - x).abs() < 1e-6);
        }
    }
}
