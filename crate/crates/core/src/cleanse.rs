//! Outlier removal and operating-regime masking.
//!
//! Two cleansing passes run on every static channel before head loss is
//! computed:
//!
//! 1. Samples outside fixed physical bounds are dropped ([`remove_outliers`]).
//! 2. Ten-minute windows are summarised by their mean and standard deviation,
//!    clustered with a three-component Gaussian mixture, and every window that
//!    is not in steady transport is masked out ([`fit_gmm`],
//!    [`classify_states`], [`mask_series`]).

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::series::{step_to_micros, ChannelKind, PressureSeries, Timestamp, UniformSeries};

/// Closed acceptance bounds per channel; values outside are sensor glitches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPolicy {
    pub static_min_bar: f64,
    pub static_max_bar: f64,
    pub dynamic_min_kpa: f64,
    pub dynamic_max_kpa: f64,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        OutlierPolicy {
            static_min_bar: 0.5,
            static_max_bar: 80.0,
            dynamic_min_kpa: -200.0,
            dynamic_max_kpa: 200.0,
        }
    }
}

impl OutlierPolicy {
    pub fn bounds(&self, channel: ChannelKind) -> (f64, f64) {
        match channel {
            ChannelKind::StaticBar => (self.static_min_bar, self.static_max_bar),
            ChannelKind::DynamicKpa => (self.dynamic_min_kpa, self.dynamic_max_kpa),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for channel in [ChannelKind::StaticBar, ChannelKind::DynamicKpa] {
            let (lo, hi) = self.bounds(channel);
            if !(lo < hi) {
                return Err(Error::invalid(format!(
                    "{} outlier bounds must satisfy min < max, got [{lo}, {hi}]",
                    channel.file_tag()
                )));
            }
        }
        Ok(())
    }

    pub fn accepts(&self, channel: ChannelKind, value: f64) -> bool {
        let (lo, hi) = self.bounds(channel);
        (lo..=hi).contains(&value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub series: PressureSeries,
    pub removed: usize,
}

/// Drops samples outside the policy bounds for the series' channel.
///
/// Bounds are inclusive: a static reading of exactly 0.5 bar is kept.
pub fn remove_outliers(s: &PressureSeries, policy: &OutlierPolicy) -> Result<OutlierReport> {
    policy.validate()?;
    let channel = s.channel();
    let series = s.filtered(|x| policy.accepts(channel, x.value));
    let removed = s.len() - series.len();
    Ok(OutlierReport { series, removed })
}

/// Operating regime of the line during one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateLabel {
    Off,
    Regulation,
    Transport,
}

impl StateLabel {
    pub const ALL: [StateLabel; 3] = [StateLabel::Off, StateLabel::Regulation, StateLabel::Transport];

    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::Off => "OFF",
            StateLabel::Regulation => "REGULATION",
            StateLabel::Transport => "TRANSPORT",
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "OFF" => Ok(StateLabel::Off),
            "REGULATION" => Ok(StateLabel::Regulation),
            "TRANSPORT" => Ok(StateLabel::Transport),
            other => Err(Error::invalid(format!("unknown state label `{other}`"))),
        }
    }
}

/// Mean and population standard deviation of one complete window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateFeatureRow {
    pub window_start: Timestamp,
    pub mean_bar: f64,
    pub std_bar: f64,
}

impl StateFeatureRow {
    pub fn point(&self) -> [f64; 2] {
        [self.mean_bar, self.std_bar]
    }
}

/// Default classification window: ten minutes.
pub const STATE_WINDOW_S: f64 = 600.0;

/// Summarises non-overlapping windows of `window_s` seconds.
///
/// Windows are aligned to multiples of `window_s` since the epoch so that
/// every station sees the same window boundaries. Windows that are partly
/// outside the series or contain a missing bin produce no row.
pub fn state_features(u: &UniformSeries, window_s: f64) -> Result<Vec<StateFeatureRow>> {
    let window_us = step_to_micros(window_s)?;
    if window_us < u.step_us() || window_us % u.step_us() != 0 {
        return Err(Error::invalid(format!(
            "window {window_s} s must be a whole multiple of the {} s grid step",
            u.step_s()
        )));
    }
    let bins_per_window = (window_us / u.step_us()) as usize;
    let mut rows = Vec::new();
    let mut w_start = u.start().micros().div_euclid(window_us) * window_us;
    if w_start < u.start().micros() {
        w_start += window_us;
    }
    loop {
        let Some(first) = u.index_of(Timestamp::from_micros(w_start)) else {
            break;
        };
        let last = first + bins_per_window;
        if last > u.len() {
            break;
        }
        let window = &u.values()[first..last];
        if window.iter().all(Option::is_some) {
            let n = bins_per_window as f64;
            let mean = window.iter().flatten().sum::<f64>() / n;
            let var = window.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            rows.push(StateFeatureRow {
                window_start: Timestamp::from_micros(w_start),
                mean_bar: mean,
                std_bar: var.sqrt(),
            });
        }
        w_start += window_us;
    }
    Ok(rows)
}

/// Lower bound on every standardized variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 200;
pub const EM_RELATIVE_TOLERANCE: f64 = 1e-6;

/// A fitted two-dimensional diagonal Gaussian mixture.
///
/// Parameters live in standardized coordinates; `center` and `scale` map raw
/// features into that space. Standardization is a positive affine map per
/// dimension, so orderings of component means are the same in both spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub variances: Vec<[f64; 2]>,
    pub center: [f64; 2],
    pub scale: [f64; 2],
    pub converged: bool,
    pub log_likelihood: f64,
    /// Log-likelihood evaluated at the start of every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    fn standardize(&self, x: [f64; 2]) -> [f64; 2] {
        [
            (x[0] - self.center[0]) / self.scale[0],
            (x[1] - self.center[1]) / self.scale[1],
        ]
    }

    /// Component means in raw feature units.
    pub fn means_raw(&self) -> Vec<[f64; 2]> {
        self.means
            .iter()
            .map(|m| [m[0] * self.scale[0] + self.center[0], m[1] * self.scale[1] + self.center[1]])
            .collect()
    }

    /// Component variances in raw feature units.
    pub fn variances_raw(&self) -> Vec<[f64; 2]> {
        self.variances
            .iter()
            .map(|v| [v[0] * self.scale[0].powi(2), v[1] * self.scale[1].powi(2)])
            .collect()
    }

    fn log_joint(&self, z: [f64; 2], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.weights[j].ln() + log_normal_diag(z, self.means[j], self.variances[j]);
        }
    }

    /// Posterior component probabilities for a raw feature point.
    pub fn responsibilities(&self, x: [f64; 2]) -> Vec<f64> {
        let mut lj = vec![0.0; self.k];
        self.log_joint(self.standardize(x), &mut lj);
        let lse = log_sum_exp(&lj);
        lj.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Index of the most responsible component; ties go to the lower index.
    pub fn predict(&self, x: [f64; 2]) -> usize {
        let mut lj = vec![0.0; self.k];
        self.log_joint(self.standardize(x), &mut lj);
        argmax(&lj)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_normal_diag(z: [f64; 2], mean: [f64; 2], var: [f64; 2]) -> f64 {
    let mut acc = -std::f64::consts::LN_2 - std::f64::consts::PI.ln();
    for d in 0..2 {
        let r = z[d] - mean[d];
        acc -= 0.5 * (var[d].ln() + r * r / var[d]);
    }
    acc
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn point_cmp(a: &[f64; 2], b: &[f64; 2]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

fn farthest_point_means(points: &[[f64; 2]], z: &[[f64; 2]], k: usize) -> Vec<[f64; 2]> {
    let first = (0..z.len()).min_by(|&a, &b| point_cmp(&points[a], &points[b])).expect("non-empty");
    let mut means = vec![z[first]];
    let mut dist: Vec<f64> = z.iter().map(|p| sq_dist(*p, z[first])).collect();
    while means.len() < k {
        let mut best = 0;
        for i in 1..z.len() {
            let ord = dist[i].total_cmp(&dist[best]).then_with(|| point_cmp(&points[best], &points[i]));
            if ord.is_gt() {
                best = i;
            }
        }
        let m = z[best];
        means.push(m);
        for (d, p) in dist.iter_mut().zip(z) {
            *d = d.min(sq_dist(*p, m));
        }
    }
    means
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Fits a `k`-component mixture to the `(mean, std)` features of `rows`.
pub fn fit_gmm(rows: &[StateFeatureRow], k: usize) -> Result<GmmModel> {
    let points: Vec<[f64; 2]> = rows.iter().map(StateFeatureRow::point).collect();
    fit_gmm_points(&points, k)
}

/// EM for a diagonal Gaussian mixture on arbitrary 2-D points.
///
/// Points are standardized per dimension. The first component mean starts at
/// the point with the lowest first coordinate; each further one starts at the
/// point farthest from all means chosen so far (ties go to the
/// lexicographically smallest point). Variances start at one and weights are
/// equal, so the fit involves no randomness and ignores row order.
/// Iteration stops when the relative log-likelihood change drops below
/// [`EM_RELATIVE_TOLERANCE`] or after [`EM_MAX_ITERATIONS`] iterations.
pub fn fit_gmm_points(points: &[[f64; 2]], k: usize) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if points.len() < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{} rows for {k} components; need at least {}",
            points.len(),
            10 * k
        )));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("feature rows must be finite"));
    }
    let n = points.len() as f64;
    let mut center = [0.0; 2];
    let mut scale = [0.0; 2];
    for d in 0..2 {
        center[d] = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[d] - center[d]).powi(2)).sum::<f64>() / n;
        scale[d] = var.sqrt();
    }
    // exact duplicates of the first row means nothing can be separated
    if points.iter().all(|p| *p == points[0]) {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }
    for s in &mut scale {
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    let z: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [(p[0] - center[0]) / scale[0], (p[1] - center[1]) / scale[1]])
        .collect();

    let init = farthest_point_means(points, &z, k);
    let mut model = GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means: init,
        variances: vec![[1.0, 1.0]; k],
        center,
        scale,
        converged: false,
        log_likelihood: f64::NEG_INFINITY,
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = vec![0.0; z.len() * k];
    let mut lj = vec![0.0; k];
    for _ in 0..EM_MAX_ITERATIONS {
        // E-step
        let mut ll = 0.0;
        for (i, zi) in z.iter().enumerate() {
            model.log_joint(*zi, &mut lj);
            let lse = log_sum_exp(&lj);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (lj[j] - lse).exp();
            }
        }
        if let Some(&prev) = model.log_likelihood_trace.last() {
            debug_assert!(
                ll >= prev - 1e-9 * prev.abs().max(1.0),
                "EM log-likelihood decreased: {prev} -> {ll}"
            );
        }
        model.log_likelihood_trace.push(ll);
        let prev = model.log_likelihood;
        model.log_likelihood = ll;
        if prev.is_finite() && ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < EM_RELATIVE_TOLERANCE {
            model.converged = true;
            break;
        }

        // M-step
        for j in 0..k {
            let nk: f64 = (0..z.len()).map(|i| resp[i * k + j]).sum();
            if nk <= f64::MIN_POSITIVE {
                model.weights[j] = 0.0;
                continue;
            }
            let mut mean = [0.0; 2];
            for (i, zi) in z.iter().enumerate() {
                let r = resp[i * k + j];
                mean[0] += r * zi[0];
                mean[1] += r * zi[1];
            }
            mean[0] /= nk;
            mean[1] /= nk;
            let mut var = [0.0; 2];
            for (i, zi) in z.iter().enumerate() {
                let r = resp[i * k + j];
                var[0] += r * (zi[0] - mean[0]).powi(2);
                var[1] += r * (zi[1] - mean[1]).powi(2);
            }
            model.weights[j] = nk / n;
            model.means[j] = mean;
            model.variances[j] = [
                (var[0] / nk).max(VARIANCE_FLOOR),
                (var[1] / nk).max(VARIANCE_FLOOR),
            ];
        }
        let total: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= total;
        }
    }
    Ok(model)
}

/// Maps each component of a three-component model to a regime.
///
/// The component with the lowest mean pressure is `Off`; of the other two,
/// the one with the larger mean standard deviation is `Regulation`.
pub fn component_labels(model: &GmmModel) -> Result<Vec<StateLabel>> {
    if model.k != 3 {
        return Err(Error::invalid(format!(
            "regime classification needs a 3-component model, got {}",
            model.k
        )));
    }
    let m = &model.means;
    let off = (0..3)
        .min_by(|&a, &b| m[a][0].total_cmp(&m[b][0]).then(a.cmp(&b)))
        .expect("three components");
    let rest: Vec<usize> = (0..3).filter(|&j| j != off).collect();
    let (reg, transport) = if m[rest[1]][1] > m[rest[0]][1] {
        (rest[1], rest[0])
    } else {
        (rest[0], rest[1])
    };
    let mut labels = vec![StateLabel::Transport; 3];
    labels[off] = StateLabel::Off;
    labels[reg] = StateLabel::Regulation;
    labels[transport] = StateLabel::Transport;
    Ok(labels)
}

/// Per-window regime labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSegmentation {
    pub window_s: f64,
    pub windows: Vec<(Timestamp, StateLabel)>,
}

impl StateSegmentation {
    pub fn new(window_s: f64, windows: Vec<(Timestamp, StateLabel)>) -> Result<Self> {
        step_to_micros(window_s)?;
        if windows.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("window starts must be strictly increasing"));
        }
        Ok(StateSegmentation { window_s, windows })
    }

    /// Label of the window containing `t`, if any.
    pub fn label_at(&self, t: Timestamp) -> Option<StateLabel> {
        let window_us = (self.window_s * 1e6).round() as i64;
        let idx = self.windows.partition_point(|(s, _)| *s <= t);
        let (start, label) = *self.windows.get(idx.checked_sub(1)?)?;
        (t.micros() < start.micros() + window_us).then_some(label)
    }

    pub fn count(&self, label: StateLabel) -> usize {
        self.windows.iter().filter(|(_, l)| *l == label).count()
    }

    /// Windows labeled by both segmentations; `Transport` only where both agree
    /// on transport, otherwise the first non-transport label.
    pub fn joint(&self, other: &StateSegmentation) -> Result<StateSegmentation> {
        if self.window_s != other.window_s {
            return Err(Error::GridMismatch(format!(
                "segmentation windows differ: {} s vs {} s",
                self.window_s, other.window_s
            )));
        }
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.windows.len() && j < other.windows.len() {
            let (ta, la) = self.windows[i];
            let (tb, lb) = other.windows[j];
            match ta.cmp(&tb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let label = if la != StateLabel::Transport { la } else { lb };
                    out.push((ta, label));
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(StateSegmentation {
            window_s: self.window_s,
            windows: out,
        })
    }

    /// Writes `window_start_us,label`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "window_start_us,label")?;
        for (t, l) in &self.windows {
            writeln!(w, "{},{}", t.micros(), l)?;
        }
        Ok(())
    }
}

/// Reads a segmentation CSV; the window length is not stored in the file.
pub fn load_segmentation_csv(path: impl AsRef<Path>, window_s: f64) -> Result<StateSegmentation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim_end()) != Some("window_start_us,label") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header `window_start_us,label`".into(),
        });
    }
    let mut windows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (t, l) = line.split_once(',').ok_or_else(|| err("expected two fields".into()))?;
        let t: i64 = t.parse().map_err(|_| err(format!("bad timestamp `{t}`")))?;
        let l: StateLabel = l.parse().map_err(|e: Error| err(e.to_string()))?;
        windows.push((Timestamp::from_micros(t), l));
    }
    StateSegmentation::new(window_s, windows)
}

/// Labels every feature row with its most responsible component's regime.
pub fn classify_states(model: &GmmModel, rows: &[StateFeatureRow], window_s: f64) -> Result<StateSegmentation> {
    let labels = component_labels(model)?;
    let windows = rows
        .iter()
        .map(|r| (r.window_start, labels[model.predict(r.point())]))
        .collect();
    StateSegmentation::new(window_s, windows)
}

/// Keeps only bins inside windows labeled `keep`.
///
/// Bins in windows with another label, and bins no window covers (windows
/// skipped for containing gaps, partial windows at the edges), become missing.
/// Retained values are copied unchanged.
pub fn mask_series(u: &UniformSeries, seg: &StateSegmentation, keep: StateLabel) -> UniformSeries {
    let values = u
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| match seg.label_at(u.time_at(k)) {
            Some(label) if label == keep => *v,
            _ => None,
        })
        .collect();
    u.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Sample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn static_series(values: &[f64]) -> PressureSeries {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Sample::new(Timestamp::from_micros(i as i64 * 1_000_000), v))
            .collect();
        PressureSeries::new("A", ChannelKind::StaticBar, samples, 1.0).unwrap()
    }

    #[test]
    fn static_thresholds() {
        let r = remove_outliers(&static_series(&[0.3, 45.0, 81.0]), &OutlierPolicy::default()).unwrap();
        assert_eq!(r.series.values().collect::<Vec<_>>(), vec![45.0]);
        assert_eq!(r.removed, 2);
    }

    #[test]
    fn dynamic_thresholds() {
        let samples = [-250.0, 0.0, 150.0, 220.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| Sample::new(Timestamp::from_micros(i as i64), v))
            .collect();
        let s = PressureSeries::new("A", ChannelKind::DynamicKpa, samples, 1e6).unwrap();
        let r = remove_outliers(&s, &OutlierPolicy::default()).unwrap();
        assert_eq!(r.series.values().collect::<Vec<_>>(), vec![0.0, 150.0]);
    }

    #[test]
    fn in_range_is_identity() {
        let s = static_series(&[0.5, 10.0, 80.0]);
        let r = remove_outliers(&s, &OutlierPolicy::default()).unwrap();
        assert_eq!(r.series, s);
        assert_eq!(r.removed, 0);
    }

    #[test]
    fn inverted_policy_rejected() {
        let p = OutlierPolicy {
            static_min_bar: 5.0,
            static_max_bar: 1.0,
            ..Default::default()
        };
        assert!(remove_outliers(&static_series(&[1.0]), &p).is_err());
    }

    fn grid(values: Vec<Option<f64>>) -> UniformSeries {
        UniformSeries::new(Timestamp::from_micros(0), 60.0, values).unwrap()
    }

    #[test]
    fn features_constant() {
        let rows = state_features(&grid(vec![Some(40.0); 30]), 600.0).unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert_eq!((r.mean_bar, r.std_bar), (40.0, 0.0));
        }
    }

    #[test]
    fn features_population_std() {
        let vals = (0..10).map(|i| Some(if i % 2 == 0 { 39.0 } else { 41.0 })).collect();
        let rows = state_features(&grid(vals), 600.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].mean_bar, rows[0].std_bar), (40.0, 1.0));
    }

    #[test]
    fn features_skip_gaps() {
        let mut vals = vec![Some(40.0); 20];
        vals[13] = None;
        let rows = state_features(&grid(vals), 600.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].window_start, Timestamp::from_micros(0));
    }

    #[test]
    fn features_reject_bad_window() {
        assert!(state_features(&grid(vec![Some(1.0); 10]), 90.0).is_err());
        assert!(state_features(&grid(vec![Some(1.0); 10]), 30.0).is_err());
    }

    fn sample_mixture(seed: u64, comps: &[([f64; 2], f64, usize)]) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for &(mean, sd, n) in comps {
            let nx = Normal::new(mean[0], sd).unwrap();
            let ny = Normal::new(mean[1], sd).unwrap();
            for _ in 0..n {
                pts.push([nx.sample(&mut rng), ny.sample(&mut rng)]);
            }
        }
        pts
    }

    #[test]
    fn recovers_two_clouds() {
        let pts = sample_mixture(7, &[([0.0, 0.0], 1.0, 600), ([10.0, 10.0], 1.0, 400)]);
        let m = fit_gmm_points(&pts, 2).unwrap();
        assert!(m.converged);
        let means = m.means_raw();
        let (lo, hi) = if means[0][0] < means[1][0] { (0, 1) } else { (1, 0) };
        for d in 0..2 {
            assert!((means[lo][d] - 0.0).abs() < 0.1, "{means:?}");
            assert!((means[hi][d] - 10.0).abs() < 0.1, "{means:?}");
        }
        assert!((m.weights[lo] - 0.6).abs() < 0.01);
        assert!((m.weights[hi] - 0.4).abs() < 0.01);
    }

    #[test]
    fn single_component_closed_form() {
        let pts = sample_mixture(3, &[([2.0, -1.0], 0.7, 250)]);
        let m = fit_gmm_points(&pts, 1).unwrap();
        let n = pts.len() as f64;
        for d in 0..2 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = pts.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((m.means_raw()[0][d] - mean).abs() < 1e-12);
            assert!((m.variances_raw()[0][d] - var).abs() < 1e-12 * var.max(1.0));
        }
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn nested_model_likelihood() {
        let cloud = sample_mixture(11, &[([5.0, 1.0], 0.5, 200)]);
        let mut pts = cloud.clone();
        pts.extend(cloud);
        let one = fit_gmm_points(&pts, 1).unwrap();
        let two = fit_gmm_points(&pts, 2).unwrap();
        assert!((two.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(two.log_likelihood >= one.log_likelihood - 1e-9 * one.log_likelihood.abs());
    }

    #[test]
    fn too_few_rows_and_degenerate() {
        let pts = vec![[1.0, 2.0]; 25];
        assert!(matches!(fit_gmm_points(&pts, 3), Err(Error::InsufficientData(_))));
        let pts = vec![[1.0, 2.0]; 40];
        assert!(matches!(fit_gmm_points(&pts, 3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let pts = sample_mixture(
            5,
            &[([1.0, 0.05], 0.3, 100), ([30.0, 3.0], 2.0, 150), ([40.0, 0.3], 0.5, 800)],
        );
        let m = fit_gmm_points(&pts, 3).unwrap();
        for w in m.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    fn regime_rows(seed: u64) -> (Vec<StateFeatureRow>, Vec<StateLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..1500 {
            let u: f64 = rng.random();
            let (label, mean, std) = if u < 0.1 {
                (StateLabel::Off, 1.0 + 0.05 * rng.random::<f64>(), 0.05 * (0.8 + 0.4 * rng.random::<f64>()))
            } else if u < 0.25 {
                (StateLabel::Regulation, 30.0 + 3.0 * rng.random::<f64>(), 3.0 * (0.7 + 0.6 * rng.random::<f64>()))
            } else {
                (StateLabel::Transport, 40.0 + 0.5 * rng.random::<f64>(), 0.3 * (0.8 + 0.4 * rng.random::<f64>()))
            };
            rows.push(StateFeatureRow {
                window_start: Timestamp::from_micros(i * 600_000_000),
                mean_bar: mean,
                std_bar: std,
            });
            truth.push(label);
        }
        (rows, truth)
    }

    #[test]
    fn classifies_injected_regimes() {
        let (rows, truth) = regime_rows(42);
        let m = fit_gmm(&rows, 3).unwrap();
        let seg = classify_states(&m, &rows, 600.0).unwrap();
        let agree = seg.windows.iter().zip(&truth).filter(|((_, a), b)| a == *b).count();
        assert!(agree as f64 / truth.len() as f64 >= 0.95, "{agree}");
    }

    #[test]
    fn transport_only_trace_stays_transport() {
        let (rows, _) = regime_rows(1);
        let m = fit_gmm(&rows, 3).unwrap();
        let steady: Vec<_> = (0..50)
            .map(|i| StateFeatureRow {
                window_start: Timestamp::from_micros(i * 600_000_000),
                mean_bar: 40.2,
                std_bar: 0.3,
            })
            .collect();
        let seg = classify_states(&m, &steady, 600.0).unwrap();
        assert_eq!(seg.count(StateLabel::Transport), 50);
    }

    #[test]
    fn window_at_component_mean() {
        let (rows, _) = regime_rows(2);
        let m = fit_gmm(&rows, 3).unwrap();
        let labels = component_labels(&m).unwrap();
        for (j, mean) in m.means_raw().into_iter().enumerate() {
            let row = StateFeatureRow {
                window_start: Timestamp::from_micros(0),
                mean_bar: mean[0],
                std_bar: mean[1],
            };
            let seg = classify_states(&m, &[row], 600.0).unwrap();
            assert_eq!(seg.windows[0].1, labels[j]);
        }
    }

    #[test]
    fn labels_invariant_to_component_order() {
        let (rows, _) = regime_rows(9);
        let m = fit_gmm(&rows, 3).unwrap();
        let base = classify_states(&m, &rows, 600.0).unwrap();
        for perm in [[1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0]] {
            let mut p = m.clone();
            p.weights = perm.iter().map(|&j| m.weights[j]).collect();
            p.means = perm.iter().map(|&j| m.means[j]).collect();
            p.variances = perm.iter().map(|&j| m.variances[j]).collect();
            assert_eq!(classify_states(&p, &rows, 600.0).unwrap(), base);
        }
    }

    #[test]
    fn classify_needs_three_components() {
        let pts = sample_mixture(1, &[([0.0, 0.0], 1.0, 100)]);
        let m = fit_gmm_points(&pts, 2).unwrap();
        assert!(classify_states(&m, &[], 600.0).is_err());
    }

    fn seg_of(labels: &[StateLabel]) -> StateSegmentation {
        StateSegmentation::new(
            600.0,
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| (Timestamp::from_micros(i as i64 * 600_000_000), *l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn masking() {
        let u = grid((0..40).map(|i| Some(i as f64)).collect());
        let all_t = seg_of(&[StateLabel::Transport; 4]);
        assert_eq!(mask_series(&u, &all_t, StateLabel::Transport), u);

        let all_off = seg_of(&[StateLabel::Off; 4]);
        assert_eq!(mask_series(&u, &all_off, StateLabel::Transport).present_count(), 0);

        let alt = seg_of(&[StateLabel::Transport, StateLabel::Off, StateLabel::Transport, StateLabel::Off]);
        let m = mask_series(&u, &alt, StateLabel::Transport);
        let gaps = crate::series::detect_gaps(&m);
        assert_eq!(gaps, vec![(10, 19), (30, 39)]);
        assert_eq!(m.get(25), Some(25.0));
    }

    #[test]
    fn uncovered_bins_are_masked() {
        let u = grid(vec![Some(1.0); 25]);
        let m = mask_series(&u, &seg_of(&[StateLabel::Transport, StateLabel::Transport]), StateLabel::Transport);
        assert_eq!(m.present_count(), 20);
    }

    #[test]
    fn joint_requires_both_transport() {
        use StateLabel::*;
        let a = seg_of(&[Transport, Transport, Off, Regulation]);
        let b = seg_of(&[Transport, Regulation, Transport, Transport]);
        let j = a.joint(&b).unwrap();
        let labels: Vec<_> = j.windows.iter().map(|w| w.1).collect();
        assert_eq!(labels, vec![Transport, Regulation, Off, Regulation]);
    }

    #[test]
    fn segmentation_csv_roundtrip() {
        use StateLabel::*;
        let seg = seg_of(&[Transport, Off, Regulation]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut buf = Vec::new();
        seg.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains("600000000,OFF"));
        std::fs::write(&p, buf).unwrap();
        assert_eq!(load_segmentation_csv(&p, 600.0).unwrap(), seg);
    }

    proptest! {
        #[test]
        fn outlier_removal_idempotent(values in prop::collection::vec(-10.0f64..100.0, 0..100)) {
            let p = OutlierPolicy::default();
            let once = remove_outliers(&static_series(&values), &p).unwrap().series;
            let twice = remove_outliers(&once, &p).unwrap();
            prop_assert_eq!(twice.removed, 0);
            prop_assert_eq!(twice.series, once);
        }

        #[test]
        fn mask_never_changes_values(vals in prop::collection::vec(prop::option::of(-5.0f64..5.0), 0..80),
                                     labels in prop::collection::vec(0usize..3, 8)) {
            let u = grid(vals);
            let seg = seg_of(&labels.iter().map(|&i| StateLabel::ALL[i]).collect::<Vec<_>>());
            let m = mask_series(&u, &seg, StateLabel::Transport);
            for (a, b) in u.values().iter().zip(m.values()) {
                if let Some(b) = b {
                    prop_assert_eq!(Some(*b), *a);
                }
            }
        }
    }
}
