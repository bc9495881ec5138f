//! Time-series representations shared by every stage.
//!
//! Raw recordings arrive as [`PressureSeries`] (irregular, timestamped
//! samples). Everything downstream works on a [`UniformSeries`]: a regular
//! grid whose bins are either a value or explicitly missing. Grids are
//! aligned to integer multiples of the step counted from the Unix epoch, so
//! two stations resampled with the same step always share bin boundaries.
//!
//! Missing bins are never filled in. A gap in the input stays a gap in every
//! derived series.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};

pub const MICROS_PER_SECOND: i64 = 1_000_000;

/// Header of the raw sample CSV format.
pub const SERIES_CSV_HEADER: &str = "timestamp_us,value";

/// Header of the uniform-grid CSV format.
pub const UNIFORM_CSV_HEADER: &str = "bin_start_us,value";

/// Microseconds since 1970-01-01T00:00:00 UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_micros(us: i64) -> Self {
        Timestamp(us)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * MICROS_PER_SECOND as f64).round() as i64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SECOND as f64
    }

    /// Shift by a (possibly fractional) number of seconds, rounded to the microsecond.
    pub fn offset_secs(self, secs: f64) -> Self {
        Timestamp(self.0 + (secs * MICROS_PER_SECOND as f64).round() as i64)
    }

    /// Seconds from `earlier` to `self`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MICROS_PER_SECOND as f64
    }

    /// Parses `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM:SS` (taken as UTC) or a full
    /// RFC 3339 timestamp with offset.
    pub fn parse_iso8601(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.with_timezone(&Utc).timestamp_micros()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(naive.and_utc().timestamp_micros()));
            }
        }
        if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            let naive = date.and_hms_opt(0, 0, 0).expect("midnight is valid");
            return Ok(Timestamp(naive.and_utc().timestamp_micros()));
        }
        Err(Error::invalid(format!("not an ISO-8601 UTC timestamp: `{s}`")))
    }

    pub fn to_iso8601(self) -> String {
        match DateTime::<Utc>::from_timestamp_micros(self.0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            None => format!("{}us", self.0),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Timestamp::parse_iso8601(s)
    }
}

/// Which sensor a series comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    /// Absolute pressure transducer, values in bar.
    StaticBar,
    /// Hydrophone, small dynamic fluctuations in kPa.
    DynamicKpa,
}

impl ChannelKind {
    /// Tag used in file names: `<station>_<tag>.csv`.
    pub fn file_tag(self) -> &'static str {
        match self {
            ChannelKind::StaticBar => "static",
            ChannelKind::DynamicKpa => "dynamic",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ChannelKind::StaticBar => "bar",
            ChannelKind::DynamicKpa => "kPa",
        }
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" | "staticbar" | "static_bar" => Ok(ChannelKind::StaticBar),
            "dynamic" | "dynamickpa" | "dynamic_kpa" => Ok(ChannelKind::DynamicKpa),
            other => Err(Error::UnknownChannel(other.to_string())),
        }
    }
}

/// File name used by the CLI for a raw channel recording.
pub fn series_file_name(station: &str, channel: ChannelKind) -> String {
    format!("{station}_{}.csv", channel.file_tag())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: Timestamp,
    pub value: f64,
}

impl Sample {
    pub fn new(t: Timestamp, value: f64) -> Self {
        Sample { t, value }
    }
}

/// Timestamped samples of one channel at one station.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSeries {
    station: String,
    channel: ChannelKind,
    samples: Vec<Sample>,
    nominal_rate_hz: f64,
}

impl PressureSeries {
    /// Builds a series, checking that timestamps strictly increase and
    /// values are finite.
    pub fn new(
        station: impl Into<String>,
        channel: ChannelKind,
        samples: Vec<Sample>,
        nominal_rate_hz: f64,
    ) -> Result<Self> {
        if !(nominal_rate_hz > 0.0 && nominal_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "nominal rate must be positive, got {nominal_rate_hz}"
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(Error::invalid(format!(
                    "sample {} at {} does not follow {}",
                    i + 1,
                    w[1].t.micros(),
                    w[0].t.micros()
                )));
            }
        }
        if let Some(bad) = samples.iter().position(|s| !s.value.is_finite()) {
            return Err(Error::invalid(format!("sample {bad} is not finite")));
        }
        Ok(PressureSeries {
            station: station.into(),
            channel,
            samples,
            nominal_rate_hz,
        })
    }

    pub fn station(&self) -> &str {
        &self.station
    }

    pub fn channel(&self) -> ChannelKind {
        self.channel
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn nominal_rate_hz(&self) -> f64 {
        self.nominal_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.value)
    }

    /// Keeps the samples matching `keep`; order and metadata are preserved.
    pub fn filtered(&self, mut keep: impl FnMut(&Sample) -> bool) -> PressureSeries {
        PressureSeries {
            station: self.station.clone(),
            channel: self.channel,
            samples: self.samples.iter().copied().filter(|s| keep(s)).collect(),
            nominal_rate_hz: self.nominal_rate_hz,
        }
    }

    /// Writes the series in the `timestamp_us,value` CSV format.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SERIES_CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(w, "{},{}", s.t.micros(), s.value)?;
        }
        Ok(())
    }
}

/// Reads a raw series from `path` (`timestamp_us,value`, one sample per line).
///
/// Rows must be strictly increasing in time; the first offending data row is
/// reported by its 1-based position after the header. The nominal rate is
/// estimated from the median sample spacing.
pub fn load_csv_series(
    path: impl AsRef<Path>,
    station: &str,
    channel: ChannelKind,
) -> Result<PressureSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_series(file, path, station, channel)
}

/// Same as [`load_csv_series`] but from any reader; `origin` labels errors.
pub fn read_csv_series<R: Read>(
    reader: R,
    origin: &Path,
    station: &str,
    channel: ChannelKind,
) -> Result<PressureSeries> {
    let reader = BufReader::new(reader);
    let mut samples: Vec<Sample> = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim_end_matches('\r') != SERIES_CSV_HEADER {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: 1,
                    message: format!("expected header `{SERIES_CSV_HEADER}`, found `{line}`"),
                });
            }
        }
        None => {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                message: "missing header".into(),
            })
        }
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let row = idx;
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let (ts, value) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected two fields, found `{line}`")))?;
        let ts: i64 = ts
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{ts}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad value `{value}`")))?;
        if !value.is_finite() {
            return Err(parse_err(format!("value `{value}` is not finite")));
        }
        let t = Timestamp::from_micros(ts);
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(Error::NonMonotonic {
                    path: origin.to_path_buf(),
                    row,
                });
            }
        }
        samples.push(Sample { t, value });
    }

    let rate = estimate_rate_hz(&samples);
    PressureSeries::new(station, channel, samples, rate)
}

fn estimate_rate_hz(samples: &[Sample]) -> f64 {
    if samples.len() < 2 {
        return 1.0;
    }
    let mut gaps: Vec<i64> = samples
        .windows(2)
        .map(|w| w[1].t.micros() - w[0].t.micros())
        .collect();
    let mid = gaps.len() / 2;
    let (_, median, _) = gaps.select_nth_unstable(mid);
    MICROS_PER_SECOND as f64 / *median as f64
}

/// A regular grid of optional values.
///
/// Bin `k` covers `[start + k*step, start + (k+1)*step)`. `None` marks a
/// missing bin.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    start: Timestamp,
    step_us: i64,
    values: Vec<Option<f64>>,
}

impl UniformSeries {
    pub fn new(start: Timestamp, step_s: f64, values: Vec<Option<f64>>) -> Result<Self> {
        Ok(Self::from_step_us(start, step_to_micros(step_s)?, values))
    }

    /// Panics if `step_us` is not positive.
    pub fn from_step_us(start: Timestamp, step_us: i64, values: Vec<Option<f64>>) -> Self {
        assert!(step_us > 0, "grid step must be positive");
        UniformSeries {
            start,
            step_us,
            values,
        }
    }

    /// A series with every bin present.
    pub fn from_values(start: Timestamp, step_s: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(start, step_s, values.into_iter().map(Some).collect())
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    /// Exclusive end of the last bin.
    pub fn end(&self) -> Timestamp {
        self.time_at(self.values.len())
    }

    pub fn step_s(&self) -> f64 {
        self.step_us as f64 / MICROS_PER_SECOND as f64
    }

    pub fn step_us(&self) -> i64 {
        self.step_us
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Option<f64>> {
        self.values
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.values.get(k).copied().flatten()
    }

    /// Start of bin `k`.
    pub fn time_at(&self, k: usize) -> Timestamp {
        Timestamp(self.start.0 + k as i64 * self.step_us)
    }

    /// Index of the bin containing `t`, if inside the series.
    pub fn index_of(&self, t: Timestamp) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let k = ((t.0 - self.start.0) / self.step_us) as usize;
        (k < self.values.len()).then_some(k)
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Present `(bin start, value)` pairs.
    pub fn iter_present(&self) -> impl Iterator<Item = (Timestamp, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| (self.time_at(k), v)))
    }

    /// Applies `f` to every present value; missing bins stay missing.
    pub fn map_present(&self, mut f: impl FnMut(f64) -> f64) -> UniformSeries {
        UniformSeries {
            start: self.start,
            step_us: self.step_us,
            values: self.values.iter().map(|v| v.map(&mut f)).collect(),
        }
    }

    /// A series on the same grid with new values.
    pub fn with_values(&self, values: Vec<Option<f64>>) -> UniformSeries {
        assert_eq!(values.len(), self.values.len(), "length must match grid");
        UniformSeries {
            start: self.start,
            step_us: self.step_us,
            values,
        }
    }

    /// True when both series use the same step and bin boundaries line up.
    pub fn same_phase(&self, other: &UniformSeries) -> bool {
        self.step_us == other.step_us
            && (self.start.0 - other.start.0).rem_euclid(self.step_us) == 0
    }

    /// Writes `bin_start_us,value` with an empty field for missing bins.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{UNIFORM_CSV_HEADER}")?;
        for (k, v) in self.values.iter().enumerate() {
            match v {
                Some(v) => writeln!(w, "{},{}", self.time_at(k).micros(), v)?,
                None => writeln!(w, "{},", self.time_at(k).micros())?,
            }
        }
        Ok(())
    }
}

pub(crate) fn step_to_micros(step_s: f64) -> Result<i64> {
    if !(step_s > 0.0 && step_s.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step_s}")));
    }
    let us = (step_s * MICROS_PER_SECOND as f64).round() as i64;
    if us < 1 {
        return Err(Error::invalid(format!("step {step_s} s is below 1 us")));
    }
    Ok(us)
}

/// Reads a uniform series written by [`UniformSeries::write_csv`].
///
/// The step is taken from the first two rows; every row must sit on that grid.
pub fn load_uniform_csv(path: impl AsRef<Path>) -> Result<UniformSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = text.lines().enumerate();
    let header = rows.next().map(|(_, l)| l).unwrap_or_default();
    if header.trim_end_matches('\r') != UNIFORM_CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{UNIFORM_CSV_HEADER}`"),
        });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in rows {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| err(format!("expected two fields, found `{line}`")))?;
        let t: i64 = t.parse().map_err(|_| err(format!("bad timestamp `{t}`")))?;
        let v = v.trim();
        let v = if v.is_empty() {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| err(format!("bad value `{v}`")))?)
        };
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Ok(UniformSeries::from_step_us(Timestamp(0), MICROS_PER_SECOND, vec![]));
    }
    let step = if times.len() > 1 { times[1] - times[0] } else { MICROS_PER_SECOND };
    if step <= 0 {
        return Err(Error::NonMonotonic {
            path: path.to_path_buf(),
            row: 2,
        });
    }
    for (k, t) in times.iter().enumerate() {
        if *t != times[0] + k as i64 * step {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                message: "row is off the uniform grid".into(),
            });
        }
    }
    Ok(UniformSeries::from_step_us(Timestamp(times[0]), step, values))
}

/// Per-bin reduction applied by [`resample_uniform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reducer {
    #[default]
    Mean,
    Min,
    Max,
}

/// Raw accumulation for one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub count: usize,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

impl BinStats {
    const EMPTY: BinStats = BinStats {
        count: 0,
        sum: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn reduce(&self, reducer: Reducer) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        Some(match reducer {
            Reducer::Mean => self.sum / self.count as f64,
            Reducer::Min => self.min,
            Reducer::Max => self.max,
        })
    }
}

/// Accumulates samples into epoch-aligned bins of `step_s` seconds.
///
/// Returns the first bin start and per-bin statistics. An empty series gives
/// an empty vector.
pub fn bin_statistics(s: &PressureSeries, step_s: f64) -> Result<(Timestamp, Vec<BinStats>)> {
    let step = step_to_micros(step_s)?;
    let (Some(first), Some(last)) = (s.samples.first(), s.samples.last()) else {
        return Ok((Timestamp(0), Vec::new()));
    };
    let start = first.t.0.div_euclid(step) * step;
    let n = ((last.t.0 - start) / step + 1) as usize;
    let mut bins = vec![BinStats::EMPTY; n];
    for sample in &s.samples {
        let k = ((sample.t.0 - start) / step) as usize;
        bins[k].push(sample.value);
    }
    Ok((Timestamp(start), bins))
}

/// Resamples onto an epoch-aligned grid of `step_s` seconds.
///
/// Bins without samples are missing; nothing is interpolated.
pub fn resample_uniform(s: &PressureSeries, step_s: f64, reducer: Reducer) -> Result<UniformSeries> {
    let step = step_to_micros(step_s)?;
    let (start, bins) = bin_statistics(s, step_s)?;
    let values = bins.iter().map(|b| b.reduce(reducer)).collect();
    Ok(UniformSeries::from_step_us(start, step, values))
}

/// Maximal runs of missing bins as inclusive `(first, last)` index pairs.
pub fn detect_gaps(u: &UniformSeries) -> Vec<(usize, usize)> {
    let mut gaps = Vec::new();
    let mut open: Option<usize> = None;
    for (k, v) in u.values.iter().enumerate() {
        match (v, open) {
            (None, None) => open = Some(k),
            (Some(_), Some(from)) => {
                gaps.push((from, k - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(from) = open {
        gaps.push((from, u.values.len() - 1));
    }
    gaps
}

/// Bins whose start lies in `[from, to)`.
///
/// A range that misses the series yields an empty series anchored on the
/// grid point at or after `from`.
pub fn slice_interval(u: &UniformSeries, from: Timestamp, to: Timestamp) -> Result<UniformSeries> {
    if from >= to {
        return Err(Error::invalid(format!(
            "empty interval: {from} is not before {to}"
        )));
    }
    let step = u.step_us;
    // first bin index with start >= from, last with start < to
    let lo = (from.0 - u.start.0 + step - 1).div_euclid(step).max(0);
    let hi = (to.0 - u.start.0 + step - 1).div_euclid(step).min(u.values.len() as i64);
    if hi <= lo {
        let anchor = u.start.0 + lo * step;
        return Ok(UniformSeries::from_step_us(Timestamp(anchor), step, Vec::new()));
    }
    let (lo, hi) = (lo as usize, hi as usize);
    Ok(UniformSeries {
        start: u.time_at(lo),
        step_us: step,
        values: u.values[lo..hi].to_vec(),
    })
}

/// A monitoring station's position along the line.
#[derive(Debug, Clone, PartialEq)]
pub struct StationMeta {
    pub id: String,
    pub chainage_km: f64,
    pub altitude_m: f64,
}

impl StationMeta {
    pub fn new(id: impl Into<String>, chainage_km: f64, altitude_m: f64) -> Self {
        StationMeta {
            id: id.into(),
            chainage_km,
            altitude_m,
        }
    }
}

/// Checks chainages are non-negative and exactly one station sits at 0 km.
pub fn validate_stations(stations: &[StationMeta]) -> Result<()> {
    if let Some(s) = stations.iter().find(|s| !(s.chainage_km >= 0.0)) {
        return Err(Error::invalid(format!(
            "station {} has negative chainage {}",
            s.id, s.chainage_km
        )));
    }
    let origins = stations.iter().filter(|s| s.chainage_km == 0.0).count();
    if origins != 1 {
        return Err(Error::invalid(format!(
            "exactly one station must sit at chainage 0, found {origins}"
        )));
    }
    for (i, a) in stations.iter().enumerate() {
        if stations[i + 1..].iter().any(|b| b.id == a.id) {
            return Err(Error::invalid(format!("duplicate station id {}", a.id)));
        }
    }
    Ok(())
}

/// The reference station (chainage 0).
pub fn reference_station(stations: &[StationMeta]) -> Option<&StationMeta> {
    stations.iter().find(|s| s.chainage_km == 0.0)
}

/// An ordered pair of stations.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeta {
    pub upstream: String,
    pub downstream: String,
    pub length_km: f64,
}

impl SegmentMeta {
    pub fn between(up: &StationMeta, down: &StationMeta) -> Result<Self> {
        let length_km = (down.chainage_km - up.chainage_km).abs();
        if !(length_km > 0.0) {
            return Err(Error::invalid(format!(
                "segment {}-{} has zero length",
                up.id, down.id
            )));
        }
        Ok(SegmentMeta {
            upstream: up.id.clone(),
            downstream: down.id.clone(),
            length_km,
        })
    }

    /// Resolves a `UP-DOWN` name against a station list.
    pub fn from_name(name: &str, stations: &[StationMeta]) -> Result<Self> {
        let (up, down) = name
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("segment `{name}` is not UP-DOWN")))?;
        let find = |id: &str| {
            stations
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::invalid(format!("unknown station `{id}` in `{name}`")))
        };
        SegmentMeta::between(find(up)?, find(down)?)
    }

    /// `UP-DOWN`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.upstream, self.downstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<PressureSeries> {
        read_csv_series(Cursor::new(text), Path::new("mem.csv"), "A", ChannelKind::StaticBar)
    }

    fn series(points: &[(f64, f64)]) -> PressureSeries {
        let samples = points
            .iter()
            .map(|&(t, v)| Sample::new(Timestamp::from_secs_f64(t), v))
            .collect();
        PressureSeries::new("A", ChannelKind::StaticBar, samples, 20.0).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let s = read("timestamp_us,value\n0,10.0\n1000000,10.5\n2000000,11.0\n").unwrap();
        assert_eq!(s.values().collect::<Vec<_>>(), vec![10.0, 10.5, 11.0]);
        assert_eq!(s.nominal_rate_hz(), 1.0);
    }

    #[test]
    fn backwards_timestamp_names_row() {
        let err = read("timestamp_us,value\n5,1.0\n3,2.0\n").unwrap_err();
        match err {
            Error::NonMonotonic { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_timestamp_rejected() {
        assert!(matches!(
            read("timestamp_us,value\n5,1.0\n5,2.0\n"),
            Err(Error::NonMonotonic { row: 2, .. })
        ));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read("timestamp_us,value\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        match read("timestamp_us,value\n0,1\nabc,2\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_channel() {
        assert!(matches!("vibration".parse::<ChannelKind>(), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn resample_constant() {
        let pts: Vec<_> = (0..20 * 600).map(|i| (i as f64 / 20.0, 7.0)).collect();
        let u = resample_uniform(&series(&pts), 60.0, Reducer::Mean).unwrap();
        assert_eq!(u.len(), 10);
        assert!(u.values().iter().all(|v| *v == Some(7.0)));
    }

    #[test]
    fn resample_two_sample_mean() {
        let u = resample_uniform(&series(&[(0.0, 1.0), (30.0, 3.0)]), 60.0, Reducer::Mean).unwrap();
        assert_eq!(u.values(), &[Some(2.0)]);
    }

    #[test]
    fn resample_min_max() {
        let s = series(&[(0.0, 1.0), (30.0, 3.0), (61.0, 5.0)]);
        let lo = resample_uniform(&s, 60.0, Reducer::Min).unwrap();
        let hi = resample_uniform(&s, 60.0, Reducer::Max).unwrap();
        assert_eq!(lo.values(), &[Some(1.0), Some(5.0)]);
        assert_eq!(hi.values(), &[Some(3.0), Some(5.0)]);
    }

    #[test]
    fn resample_marks_silence_missing() {
        let mut pts: Vec<_> = (0..120).map(|i| (i as f64, 1.0)).collect();
        pts.extend((720..840).map(|i| (i as f64, 1.0)));
        let u = resample_uniform(&series(&pts), 60.0, Reducer::Mean).unwrap();
        assert_eq!(u.len(), 14);
        assert_eq!(detect_gaps(&u), vec![(2, 11)]);
    }

    #[test]
    fn resample_empty() {
        let s = PressureSeries::new("A", ChannelKind::StaticBar, vec![], 1.0).unwrap();
        assert!(resample_uniform(&s, 60.0, Reducer::Mean).unwrap().is_empty());
    }

    #[test]
    fn resample_grid_is_epoch_aligned() {
        let u = resample_uniform(&series(&[(90.0, 1.0)]), 60.0, Reducer::Mean).unwrap();
        assert_eq!(u.start(), Timestamp::from_secs_f64(60.0));
    }

    #[test]
    fn gaps() {
        let t0 = Timestamp::from_micros(0);
        let full = UniformSeries::from_values(t0, 1.0, vec![1.0; 5]).unwrap();
        assert!(detect_gaps(&full).is_empty());

        let mut v = vec![Some(1.0); 10];
        v[3] = None;
        v[4] = None;
        v[5] = None;
        assert_eq!(detect_gaps(&UniformSeries::new(t0, 1.0, v).unwrap()), vec![(3, 5)]);

        let mut v = vec![Some(1.0); 10];
        v[0] = None;
        v[1] = None;
        v[9] = None;
        assert_eq!(
            detect_gaps(&UniformSeries::new(t0, 1.0, v).unwrap()),
            vec![(0, 1), (9, 9)]
        );
    }

    #[test]
    fn slicing() {
        let u = UniformSeries::from_values(Timestamp::from_micros(0), 1.0, (0..10).map(f64::from).collect())
            .unwrap();
        let all = slice_interval(&u, u.start(), u.end()).unwrap();
        assert_eq!(all, u);

        let part = slice_interval(&u, Timestamp::from_secs_f64(2.0), Timestamp::from_secs_f64(5.0)).unwrap();
        assert_eq!(part.values(), &[Some(2.0), Some(3.0), Some(4.0)]);
        assert_eq!(part.start(), Timestamp::from_secs_f64(2.0));

        let none = slice_interval(&u, Timestamp::from_secs_f64(100.0), Timestamp::from_secs_f64(200.0)).unwrap();
        assert!(none.is_empty());

        assert!(slice_interval(&u, u.end(), u.start()).is_err());
    }

    #[test]
    fn iso_timestamps() {
        let t = Timestamp::parse_iso8601("2013-06-01T00:00:00Z").unwrap();
        assert_eq!(t.micros(), 1_370_044_800_000_000);
        assert_eq!(Timestamp::parse_iso8601("2013-06-01").unwrap(), t);
        assert_eq!(Timestamp::parse_iso8601("2013-06-01T02:00:00+02:00").unwrap(), t);
        assert_eq!(t.to_iso8601(), "2013-06-01T00:00:00Z");
        assert!(Timestamp::parse_iso8601("June 1st").is_err());
    }

    #[test]
    fn stations_and_segments() {
        let st = vec![
            StationMeta::new("A", 0.0, 179.0),
            StationMeta::new("B", 59.307, 359.0),
            StationMeta::new("C", 100.486, 558.0),
        ];
        validate_stations(&st).unwrap();
        let ac = SegmentMeta::from_name("A-C", &st).unwrap();
        assert_eq!(ac.length_km, 100.486);
        assert_eq!(ac.name(), "A-C");
        assert!(SegmentMeta::from_name("A-A", &st).is_err());
        assert!(SegmentMeta::from_name("A-Z", &st).is_err());
        assert!(validate_stations(&st[1..]).is_err());
    }

    #[test]
    fn uniform_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let u = UniformSeries::new(
            Timestamp::from_micros(60_000_000),
            60.0,
            vec![Some(1.5), None, Some(-0.25)],
        )
        .unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(load_uniform_csv(&path).unwrap(), u);
    }

    fn irregular() -> impl Strategy<Value = PressureSeries> {
        prop::collection::vec((1i64..90_000_000, -50.0f64..50.0), 0..200).prop_map(|steps| {
            let mut t = 0i64;
            let samples = steps
                .into_iter()
                .map(|(dt, v)| {
                    t += dt;
                    Sample::new(Timestamp::from_micros(t), v)
                })
                .collect();
            PressureSeries::new("A", ChannelKind::StaticBar, samples, 1.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn constant_invariance(n in 1usize..300, c in -100.0f64..100.0, step in 1.0f64..600.0) {
            let pts: Vec<_> = (0..n).map(|i| (i as f64 * 7.3, c)).collect();
            for r in [Reducer::Mean, Reducer::Min, Reducer::Max] {
                let u = resample_uniform(&series(&pts), step, r).unwrap();
                for v in u.values().iter().flatten() {
                    prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
                }
            }
        }

        #[test]
        fn mean_preserves_mass(s in irregular(), step in 1.0f64..300.0) {
            let (_, bins) = bin_statistics(&s, step).unwrap();
            let u = resample_uniform(&s, step, Reducer::Mean).unwrap();
            let raw: f64 = s.values().sum();
            let binned: f64 = u
                .values()
                .iter()
                .zip(&bins)
                .filter_map(|(v, b)| v.map(|v| v * b.count as f64))
                .sum();
            prop_assert!((raw - binned).abs() <= 1e-9 * (1.0 + raw.abs()) + 1e-9 * s.len() as f64 * 50.0);
        }

        #[test]
        fn missing_iff_no_sample(s in irregular(), step in 1.0f64..300.0) {
            let (_, bins) = bin_statistics(&s, step).unwrap();
            let u = resample_uniform(&s, step, Reducer::Mean).unwrap();
            let gap_bins: Vec<usize> = detect_gaps(&u).into_iter().flat_map(|(a, b)| a..=b).collect();
            let empty: Vec<usize> = bins.iter().enumerate().filter(|(_, b)| b.count == 0).map(|(k, _)| k).collect();
            prop_assert_eq!(gap_bins, empty);
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), s.len());
        }

        #[test]
        fn reslice_idempotent(n in 0usize..200, a in -50i64..250, len in 1i64..250) {
            let u = UniformSeries::from_values(Timestamp::from_micros(0), 1.0, vec![1.0; n]).unwrap();
            let from = Timestamp::from_micros(a * 1_000_000 + 300_000);
            let to = Timestamp::from_micros((a + len) * 1_000_000);
            let once = slice_interval(&u, from, to).unwrap();
            let twice = slice_interval(&once, from, to).unwrap();
            prop_assert_eq!(once.values(), twice.values());
        }
    }
}
