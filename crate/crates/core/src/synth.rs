//! Seeded scenario generator with known ground truth.
//!
//! The static scenario produces one absolute-pressure trace per station. The
//! last station is held at the delivery pressure; every upstream station sits
//! higher by the frictional head loss of the line between them and is
//! shifted by its altitude, so compensating the traces and differencing them
//! recovers the true head loss. Head loss is a per-km baseline plus a fouling
//! term that grows linearly in time and is cut by `removal_fraction` whenever
//! a PIG passes the middle of an elementary segment. Operating regimes follow
//! a Markov chain over fixed windows.
//!
//! The acoustic scenario produces the two dynamic traces of one segment: a
//! band-limited pump noise at the upstream station, heard downstream after
//! `D/c`, and echoed back upstream from a moving PIG after `2x/c`.
//!
//! All randomness comes from one ChaCha8 stream seeded by
//! [`ScenarioConfig::seed`].

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::artifact::{write_atomic, write_string_atomic};
use crate::cleanse::{OutlierPolicy, StateLabel, StateSegmentation, STATE_WINDOW_S};
use crate::error::{Error, Result};
use crate::hydraulics::{hydrostatic_dp, FluidProps, PA_PER_BAR};
use crate::series::{
    reference_station, series_file_name, validate_stations, ChannelKind, PressureSeries, Sample,
    SegmentMeta, StationMeta, Timestamp, UniformSeries,
};

pub const DAY_S: f64 = 86_400.0;

/// Name of the RNG recorded in scenario metadata.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PigEvent {
    /// Departure from the first station.
    pub launch: Timestamp,
    pub removal_fraction: f64,
    pub velocity_m_s: f64,
}

impl PigEvent {
    /// Time the PIG reaches `chainage_km`.
    pub fn time_at(&self, chainage_km: f64) -> Timestamp {
        self.launch.offset_secs(chainage_km * 1000.0 / self.velocity_m_s)
    }
}

/// Mean dwell time per regime, indexed by [`StateLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeConfig {
    pub off_dwell_s: f64,
    pub regulation_dwell_s: f64,
    pub transport_dwell_s: f64,
    /// Pressure everywhere while the line is off.
    pub off_pressure_bar: f64,
    /// Regulation pressure as a fraction of the transport pressure.
    pub regulation_level: f64,
    /// Standard deviation of the regulation pressure swings.
    pub regulation_swing_bar: f64,
    pub regulation_period_s: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            off_dwell_s: 6.0 * 3600.0,
            regulation_dwell_s: 4.0 * 3600.0,
            transport_dwell_s: 3.0 * DAY_S,
            off_pressure_bar: 1.0,
            regulation_level: 0.75,
            regulation_swing_bar: 3.0,
            regulation_period_s: 300.0,
        }
    }
}

impl RegimeConfig {
    /// Only transport, no switching.
    pub fn transport_only() -> Self {
        RegimeConfig {
            transport_dwell_s: f64::INFINITY,
            ..Default::default()
        }
    }

    fn dwell(&self, label: StateLabel) -> f64 {
        match label {
            StateLabel::Off => self.off_dwell_s,
            StateLabel::Regulation => self.regulation_dwell_s,
            StateLabel::Transport => self.transport_dwell_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub stations: Vec<StationMeta>,
    pub start: Timestamp,
    pub span_days: f64,
    pub static_step_s: f64,
    pub density_kg_m3: f64,
    pub delivery_pressure_bar: f64,
    pub baseline_head_loss_bar_per_km: f64,
    pub fouling_rate_bar_per_km_per_day: f64,
    /// Fouling already present at `start`, bar/km.
    pub initial_fouling_bar_per_km: f64,
    pub pig_events: Vec<PigEvent>,
    pub regimes: RegimeConfig,
    /// Noise of each emitted sample. A sample stands for a one-step mean of
    /// the raw transducer signal, so this is far below the raw sensor noise.
    pub static_noise_std_bar: f64,
    /// Samples replaced by out-of-range values.
    pub injected_outliers: usize,
    pub seed: u64,
}

pub fn default_stations() -> Vec<StationMeta> {
    vec![
        StationMeta::new("A", 0.0, 179.0),
        StationMeta::new("B", 59.307, 359.0),
        StationMeta::new("C", 100.486, 558.0),
    ]
}

impl Default for ScenarioConfig {
    /// 540 days from 2013-06-01 with four full-removal PIG runs every 135
    /// days. The initial fouling makes every cycle identical.
    fn default() -> Self {
        let start = Timestamp::parse_iso8601("2013-06-01T00:00:00Z").expect("valid literal");
        let rate = 0.0003;
        let first_day = 90.0;
        let interval_days = 135.0;
        ScenarioConfig {
            stations: default_stations(),
            start,
            span_days: 540.0,
            static_step_s: 60.0,
            density_kg_m3: 900.0,
            delivery_pressure_bar: 36.0,
            baseline_head_loss_bar_per_km: 0.03,
            fouling_rate_bar_per_km_per_day: rate,
            initial_fouling_bar_per_km: rate * (interval_days - first_day),
            pig_events: (0..4)
                .map(|i| PigEvent {
                    launch: start.offset_secs((first_day + interval_days * i as f64) * DAY_S),
                    removal_fraction: 1.0,
                    velocity_m_s: 1.163,
                })
                .collect(),
            regimes: RegimeConfig::default(),
            static_noise_std_bar: 0.005,
            injected_outliers: 0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn end(&self) -> Timestamp {
        self.start.offset_secs(self.span_days * DAY_S)
    }

    pub fn fluid(&self) -> FluidProps {
        FluidProps::with_density(self.density_kg_m3)
    }

    pub fn validate(&self) -> Result<()> {
        validate_stations(&self.stations)?;
        if self.stations.len() < 2 {
            return Err(Error::invalid("a scenario needs at least two stations"));
        }
        if self.stations.windows(2).any(|w| w[1].chainage_km <= w[0].chainage_km) {
            return Err(Error::invalid("stations must be ordered by increasing chainage"));
        }
        self.fluid().validate()?;
        let positive = [self.span_days, self.static_step_s];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("span and step must be positive"));
        }
        if (STATE_WINDOW_S / self.static_step_s).fract() != 0.0 {
            return Err(Error::invalid("static step must divide the regime window"));
        }
        let non_negative = [
            self.baseline_head_loss_bar_per_km,
            self.fouling_rate_bar_per_km_per_day,
            self.initial_fouling_bar_per_km,
            self.static_noise_std_bar,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("rates, fouling and noise must be non-negative"));
        }
        for e in &self.pig_events {
            if !(0.0..=1.0).contains(&e.removal_fraction) {
                return Err(Error::invalid("removal fraction must lie in [0, 1]"));
            }
            if !(e.velocity_m_s > 0.0) {
                return Err(Error::invalid("PIG velocity must be positive"));
            }
        }
        let r = &self.regimes;
        if [r.off_dwell_s, r.regulation_dwell_s, r.transport_dwell_s]
            .iter()
            .any(|d| !(*d >= STATE_WINDOW_S))
        {
            return Err(Error::invalid("regime dwell times must be at least one window"));
        }
        Ok(())
    }

    /// Consecutive station pairs.
    pub fn elementary_segments(&self) -> Vec<SegmentMeta> {
        self.stations
            .windows(2)
            .map(|w| SegmentMeta::between(&w[0], &w[1]).expect("validated chainages"))
            .collect()
    }

    /// Every ordered station pair, upstream first.
    pub fn all_segments(&self) -> Vec<SegmentMeta> {
        let mut out = Vec::new();
        for (i, a) in self.stations.iter().enumerate() {
            for b in &self.stations[i + 1..] {
                out.push(SegmentMeta::between(a, b).expect("validated chainages"));
            }
        }
        out.sort_by_key(|s| s.name());
        out
    }

    /// `key = value` lines describing the full configuration.
    pub fn to_meta(&self) -> String {
        let mut m = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(m, "{k} = {v}");
        };
        kv("rng", RNG_NAME.into());
        kv("seed", self.seed.to_string());
        kv("start", self.start.to_iso8601());
        kv("span_days", self.span_days.to_string());
        kv("static_step_s", self.static_step_s.to_string());
        for s in &self.stations {
            kv(&format!("station.{}", s.id), format!("{} {}", s.chainage_km, s.altitude_m));
        }
        kv("density_kg_m3", self.density_kg_m3.to_string());
        kv("delivery_pressure_bar", self.delivery_pressure_bar.to_string());
        kv("baseline_head_loss_bar_per_km", self.baseline_head_loss_bar_per_km.to_string());
        kv("fouling_rate_bar_per_km_per_day", self.fouling_rate_bar_per_km_per_day.to_string());
        kv("initial_fouling_bar_per_km", self.initial_fouling_bar_per_km.to_string());
        for (i, e) in self.pig_events.iter().enumerate() {
            kv(
                &format!("pig.{i}"),
                format!("{} {} {}", e.launch.to_iso8601(), e.removal_fraction, e.velocity_m_s),
            );
        }
        let r = &self.regimes;
        kv("regime.off_dwell_s", r.off_dwell_s.to_string());
        kv("regime.regulation_dwell_s", r.regulation_dwell_s.to_string());
        kv("regime.transport_dwell_s", r.transport_dwell_s.to_string());
        kv("regime.off_pressure_bar", r.off_pressure_bar.to_string());
        kv("regime.regulation_level", r.regulation_level.to_string());
        kv("regime.regulation_swing_bar", r.regulation_swing_bar.to_string());
        kv("regime.regulation_period_s", r.regulation_period_s.to_string());
        kv("static_noise_std_bar", self.static_noise_std_bar.to_string());
        kv("injected_outliers", self.injected_outliers.to_string());
        m
    }
}

/// Fouling of one elementary segment over time.
#[derive(Debug, Clone)]
struct FoulingTrack {
    rate_per_s: f64,
    origin: Timestamp,
    initial: f64,
    /// `(time, fouling just after the reset)`, in time order.
    resets: Vec<(Timestamp, f64)>,
}

impl FoulingTrack {
    fn new(cfg: &ScenarioConfig, seg_mid_km: f64) -> Self {
        let rate_per_s = cfg.fouling_rate_bar_per_km_per_day / DAY_S;
        let mut passes: Vec<(Timestamp, f64)> = cfg
            .pig_events
            .iter()
            .map(|e| (e.time_at(seg_mid_km), e.removal_fraction))
            .collect();
        passes.sort_by_key(|p| p.0);
        let mut track = FoulingTrack {
            rate_per_s,
            origin: cfg.start,
            initial: cfg.initial_fouling_bar_per_km,
            resets: Vec::with_capacity(passes.len()),
        };
        for (t, removal) in passes {
            let before = track.at(t);
            track.resets.push((t, before * (1.0 - removal)));
        }
        track
    }

    fn at(&self, t: Timestamp) -> f64 {
        let idx = self.resets.partition_point(|(r, _)| *r <= t);
        let (t0, f0) = match idx {
            0 => (self.origin, self.initial),
            i => self.resets[i - 1],
        };
        f0 + self.rate_per_s * t.secs_since(t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PigPassage {
    pub segment: String,
    pub event: usize,
    /// Time the PIG crosses the segment midpoint, where fouling is reset.
    pub time: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: StateSegmentation,
    /// Noise-free head loss per segment name, bar/km, on the static grid.
    pub head_loss: BTreeMap<String, UniformSeries>,
    pub passages: Vec<PigPassage>,
    /// `(station, time)` of each injected outlier.
    pub outliers: Vec<(String, Timestamp)>,
}

#[derive(Debug, Clone)]
pub struct StaticScenario {
    pub series: Vec<PressureSeries>,
    pub truth: GroundTruth,
}

impl StaticScenario {
    pub fn station(&self, id: &str) -> Option<&PressureSeries> {
        self.series.iter().find(|s| s.station() == id)
    }
}

fn regime_chain(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, n_windows: usize) -> Vec<StateLabel> {
    let mut labels = Vec::with_capacity(n_windows);
    let mut state = StateLabel::Transport;
    for _ in 0..n_windows {
        labels.push(state);
        let leave = STATE_WINDOW_S / cfg.regimes.dwell(state);
        let u: f64 = rng.random();
        let pick: bool = rng.random();
        if u < leave {
            let others: Vec<StateLabel> = StateLabel::ALL.into_iter().filter(|l| *l != state).collect();
            state = others[pick as usize];
        }
    }
    labels
}

/// Generates the static-pressure traces and their ground truth.
pub fn generate_static_scenario(cfg: &ScenarioConfig) -> Result<StaticScenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let window_us = (STATE_WINDOW_S * 1e6) as i64;
    let start = Timestamp::from_micros(cfg.start.micros().div_euclid(window_us) * window_us);
    let step_us = (cfg.static_step_s * 1e6).round() as i64;
    let n = ((cfg.end().micros() - start.micros()) / step_us) as usize;
    let per_window = (window_us / step_us) as usize;
    let n_windows = n.div_ceil(per_window);

    let labels = regime_chain(&mut rng, cfg, n_windows);
    let phases: Vec<f64> = (0..n_windows).map(|_| rng.random::<f64>() * 2.0 * PI).collect();

    let segments = cfg.elementary_segments();
    let tracks: Vec<FoulingTrack> = cfg
        .stations
        .windows(2)
        .map(|w| FoulingTrack::new(cfg, (w[0].chainage_km + w[1].chainage_km) / 2.0))
        .collect();

    let fluid = cfg.fluid();
    let reference = reference_station(&cfg.stations).expect("validated");
    let offset_bar: Vec<f64> = cfg
        .stations
        .iter()
        .map(|s| hydrostatic_dp(&fluid, s.altitude_m - reference.altitude_m) / PA_PER_BAR)
        .collect();
    let last = cfg.stations.len() - 1;
    let delivery_comp = cfg.delivery_pressure_bar - offset_bar[last];

    let mut elementary = vec![vec![0.0; n]; segments.len()];
    let mut transport = vec![vec![0.0; cfg.stations.len()]; n];
    for k in 0..n {
        let t = Timestamp::from_micros(start.micros() + k as i64 * step_us);
        let mut comp = delivery_comp;
        for i in (0..segments.len()).rev() {
            let h = cfg.baseline_head_loss_bar_per_km + tracks[i].at(t);
            elementary[i][k] = h;
            transport[k][i + 1] = comp + offset_bar[i + 1];
            comp += h * segments[i].length_km;
        }
        transport[k][0] = comp + offset_bar[0];
    }

    let r = &cfg.regimes;
    let swing = r.regulation_swing_bar * SQRT_2;
    let mut values = vec![Vec::with_capacity(n); cfg.stations.len()];
    for k in 0..n {
        let w = k / per_window;
        let t_in = (k % per_window) as f64 * cfg.static_step_s;
        for (s, col) in values.iter_mut().enumerate() {
            let clean = match labels[w] {
                StateLabel::Transport => transport[k][s],
                StateLabel::Off => r.off_pressure_bar,
                StateLabel::Regulation => {
                    r.regulation_level * transport[k][s] + swing * (2.0 * PI * t_in / r.regulation_period_s + phases[w]).sin()
                }
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            col.push(clean + cfg.static_noise_std_bar * z);
        }
    }

    let policy = OutlierPolicy::default();
    let mut outliers = Vec::with_capacity(cfg.injected_outliers);
    let mut hit = std::collections::BTreeSet::new();
    while outliers.len() < cfg.injected_outliers.min(n * cfg.stations.len()) {
        let s = rng.random_range(0..cfg.stations.len());
        let k = rng.random_range(0..n);
        let high: bool = rng.random();
        if !hit.insert((s, k)) {
            continue;
        }
        values[s][k] = if high {
            policy.static_max_bar + 5.0
        } else {
            policy.static_min_bar / 2.0
        };
        outliers.push((cfg.stations[s].id.clone(), Timestamp::from_micros(start.micros() + k as i64 * step_us)));
    }
    outliers.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));

    let series = cfg
        .stations
        .iter()
        .zip(values)
        .map(|(st, vals)| {
            let samples = vals
                .into_iter()
                .enumerate()
                .map(|(k, v)| Sample::new(Timestamp::from_micros(start.micros() + k as i64 * step_us), v))
                .collect();
            PressureSeries::new(st.id.clone(), ChannelKind::StaticBar, samples, 1.0 / cfg.static_step_s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut head_loss = BTreeMap::new();
    for seg in cfg.all_segments() {
        let i0 = cfg.stations.iter().position(|s| s.id == seg.upstream).expect("known");
        let i1 = cfg.stations.iter().position(|s| s.id == seg.downstream).expect("known");
        let vals = (0..n)
            .map(|k| {
                let drop: f64 = (i0..i1).map(|i| elementary[i][k] * segments[i].length_km).sum();
                Some(drop / seg.length_km)
            })
            .collect();
        head_loss.insert(seg.name(), UniformSeries::from_step_us(start, step_us, vals));
    }

    let mut passages = Vec::new();
    for (e, ev) in cfg.pig_events.iter().enumerate() {
        for (seg, w) in segments.iter().zip(cfg.stations.windows(2)) {
            passages.push(PigPassage {
                segment: seg.name(),
                event: e,
                time: ev.time_at((w[0].chainage_km + w[1].chainage_km) / 2.0),
            });
        }
    }

    let windows = labels
        .into_iter()
        .enumerate()
        .map(|(w, l)| (Timestamp::from_micros(start.micros() + w as i64 * window_us), l))
        .collect();
    Ok(StaticScenario {
        series,
        truth: GroundTruth {
            labels: StateSegmentation::new(STATE_WINDOW_S, windows)?,
            head_loss,
            passages,
            outliers,
        },
    })
}

/// Acoustic channel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticConfig {
    pub sample_rate_hz: f64,
    pub sound_speed_m_s: f64,
    pub source_std_kpa: f64,
    pub direct_gain: f64,
    pub echo_gain: f64,
    pub noise_std_kpa: f64,
    /// Recording before the PIG enters and after it leaves the segment.
    pub margin_s: f64,
    /// Recording length when there is no PIG.
    pub control_duration_s: f64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            sample_rate_hz: 2.0,
            sound_speed_m_s: 1186.14,
            source_std_kpa: 20.0,
            direct_gain: 0.8,
            echo_gain: 0.7,
            noise_std_kpa: 5.0,
            margin_s: 3600.0,
            control_duration_s: 6.0 * 3600.0,
        }
    }
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.sample_rate_hz, self.sound_speed_m_s, self.control_duration_s];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("sample rate, sound speed and duration must be positive"));
        }
        let non_negative = [self.source_std_kpa, self.direct_gain, self.echo_gain, self.noise_std_kpa, self.margin_s];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("acoustic gains, levels and margin must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticTruth {
    pub segment: String,
    pub segment_m: f64,
    /// `D/c`: delay of the downstream copy.
    pub direct_delay_s: f64,
    /// PIG entry into and exit from the segment.
    pub transit: Option<(Timestamp, Timestamp)>,
    pub velocity_m_s: Option<f64>,
}

impl AcousticTruth {
    /// PIG distance from the upstream station while it is in the segment.
    pub fn position_at(&self, t: Timestamp) -> Option<f64> {
        let (t0, t1) = self.transit?;
        (t >= t0 && t <= t1).then(|| self.velocity_m_s.unwrap_or(0.0) * t.secs_since(t0))
    }

    /// Sampled `(time, position)` pairs of the transit.
    pub fn trajectory(&self, step_s: f64) -> Vec<(Timestamp, f64)> {
        let Some((t0, t1)) = self.transit else {
            return Vec::new();
        };
        let n = (t1.secs_since(t0) / step_s).floor() as usize;
        (0..=n)
            .filter_map(|i| {
                let t = t0.offset_secs(i as f64 * step_s);
                self.position_at(t).map(|x| (t, x))
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, step_s: f64) -> std::io::Result<()> {
        writeln!(w, "time_us,position_m")?;
        for (t, x) in self.trajectory(step_s) {
            writeln!(w, "{},{}", t.micros(), x)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AcousticScenario {
    pub upstream: PressureSeries,
    pub downstream: PressureSeries,
    pub truth: AcousticTruth,
}

/// Linear interpolation of `s` at fractional index `x`.
fn sample_at(s: &[f64], x: f64) -> f64 {
    let i = x.floor();
    let f = x - i;
    let i = i as usize;
    s[i] * (1.0 - f) + s[(i + 1).min(s.len() - 1)] * f
}

/// Generates the dynamic traces of `segment` during one PIG run.
///
/// With `event == None` the recording covers `control_duration_s` from the
/// scenario start and contains no echo.
pub fn generate_acoustic_scenario(
    cfg: &ScenarioConfig,
    acoustic: &AcousticConfig,
    segment: &SegmentMeta,
    event: Option<&PigEvent>,
) -> Result<AcousticScenario> {
    acoustic.validate()?;
    let find = |id: &str| {
        cfg.stations.iter().find(|s| s.id == id).ok_or_else(|| Error::Segment {
            segment: segment.name(),
            message: format!("unknown station {id}"),
        })
    };
    let (up, down) = (find(&segment.upstream)?, find(&segment.downstream)?);
    if down.chainage_km <= up.chainage_km {
        return Err(Error::Segment {
            segment: segment.name(),
            message: "downstream station must lie further along the line".into(),
        });
    }
    let d_m = (down.chainage_km - up.chainage_km) * 1000.0;
    let c = acoustic.sound_speed_m_s;
    let transit = event.map(|e| {
        if let Some(bad) = [e.velocity_m_s].iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(format!("PIG velocity {bad} must be positive")));
        }
        Ok((e.time_at(up.chainage_km), e.time_at(down.chainage_km), e.velocity_m_s))
    });
    let transit = transit.transpose()?;
    let (t_begin, t_end) = match transit {
        Some((t0, t1, _)) => (t0.offset_secs(-acoustic.margin_s), t1.offset_secs(acoustic.margin_s)),
        None => (cfg.start, cfg.start.offset_secs(acoustic.control_duration_s)),
    };
    let step_s = 1.0 / acoustic.sample_rate_hz;
    let step_us = (step_s * 1e6).round() as i64;
    let t_begin = Timestamp::from_micros(t_begin.micros().div_euclid(step_us) * step_us);
    let n = ((t_end.micros() - t_begin.micros()) / step_us) as usize + 1;

    // source history long enough for the longest echo
    let lead = ((3.0 * d_m / c) / step_s).ceil() as usize + 4;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00ac_0057_1c00);
    let white: Vec<f64> = (0..lead + n + 2).map(|_| StandardNormal.sample(&mut rng)).collect();
    let smooth_gain = acoustic.source_std_kpa / (0.375f64).sqrt();
    let source: Vec<f64> = (0..lead + n)
        .map(|i| smooth_gain * (0.25 * white[i] + 0.5 * white[i + 1] + 0.25 * white[i + 2]))
        .collect();
    let noise_up: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise_down: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let direct = d_m / c;
    let truth = AcousticTruth {
        segment: segment.name(),
        segment_m: d_m,
        direct_delay_s: direct,
        transit: transit.map(|(a, b, _)| (a, b)),
        velocity_m_s: transit.map(|t| t.2),
    };
    let mut up_samples = Vec::with_capacity(n);
    let mut down_samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = Timestamp::from_micros(t_begin.micros() + k as i64 * step_us);
        let idx = (lead + k) as f64;
        let mut u = source[lead + k];
        if let Some(x) = truth.position_at(t) {
            u += acoustic.echo_gain * sample_at(&source, idx - 2.0 * x / c / step_s);
        }
        let d = acoustic.direct_gain * sample_at(&source, idx - direct / step_s);
        up_samples.push(Sample::new(t, u + acoustic.noise_std_kpa * noise_up[k]));
        down_samples.push(Sample::new(t, d + acoustic.noise_std_kpa * noise_down[k]));
    }
    Ok(AcousticScenario {
        upstream: PressureSeries::new(up.id.clone(), ChannelKind::DynamicKpa, up_samples, acoustic.sample_rate_hz)?,
        downstream: PressureSeries::new(down.id.clone(), ChannelKind::DynamicKpa, down_samples, acoustic.sample_rate_hz)?,
        truth,
    })
}

pub const LABELS_FILE: &str = "ground_truth_labels.csv";
pub const HEAD_LOSS_FILE: &str = "ground_truth_head_loss.csv";
pub const PASSAGES_FILE: &str = "ground_truth_passages.csv";
pub const OUTLIERS_FILE: &str = "ground_truth_outliers.csv";
pub const TRAJECTORY_FILE: &str = "ground_truth_trajectory.csv";
pub const META_FILE: &str = "scenario.meta";

/// Writes the station traces, ground-truth tables and `scenario.meta`.
pub fn write_static_scenario(dir: &Path, cfg: &ScenarioConfig, sc: &StaticScenario) -> Result<()> {
    for s in &sc.series {
        write_atomic(dir.join(series_file_name(s.station(), s.channel())), |w| s.write_csv(w))?;
    }
    write_atomic(dir.join(LABELS_FILE), |w| sc.truth.labels.write_csv(w))?;
    write_atomic(dir.join(HEAD_LOSS_FILE), |w| {
        let names: Vec<&String> = sc.truth.head_loss.keys().collect();
        write!(w, "bin_start_us")?;
        for n in &names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        let first = sc.truth.head_loss.values().next();
        for k in 0..first.map_or(0, |u| u.len()) {
            write!(w, "{}", first.expect("non-empty").time_at(k).micros())?;
            for n in &names {
                write!(w, ",{}", sc.truth.head_loss[*n].get(k).expect("complete truth"))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    write_atomic(dir.join(PASSAGES_FILE), |w| {
        writeln!(w, "segment,event,time_us")?;
        for p in &sc.truth.passages {
            writeln!(w, "{},{},{}", p.segment, p.event, p.time.micros())?;
        }
        Ok(())
    })?;
    write_atomic(dir.join(OUTLIERS_FILE), |w| {
        writeln!(w, "station,time_us")?;
        for (s, t) in &sc.truth.outliers {
            writeln!(w, "{s},{}", t.micros())?;
        }
        Ok(())
    })?;
    write_string_atomic(dir.join(META_FILE), &cfg.to_meta())
}

/// Writes the two dynamic traces and the PIG trajectory at one point per second.
pub fn write_acoustic_scenario(dir: &Path, sc: &AcousticScenario) -> Result<()> {
    for s in [&sc.upstream, &sc.downstream] {
        write_atomic(dir.join(series_file_name(s.station(), s.channel())), |w| s.write_csv(w))?;
    }
    write_atomic(dir.join(TRAJECTORY_FILE), |w| sc.truth.write_csv(w, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cleanse::remove_outliers;
    use crate::hydraulics::{compensate, compensation_table, head_loss};
    use crate::series::{resample_uniform, Reducer};

    fn quiet(days: f64) -> ScenarioConfig {
        ScenarioConfig {
            span_days: days,
            regimes: RegimeConfig::transport_only(),
            static_noise_std_bar: 0.0,
            fouling_rate_bar_per_km_per_day: 0.0,
            initial_fouling_bar_per_km: 0.0,
            pig_events: vec![],
            ..Default::default()
        }
    }

    #[test]
    fn steady_state() {
        let sc = generate_static_scenario(&quiet(2.0)).unwrap();
        for u in sc.truth.head_loss.values() {
            assert!(u.values().iter().all(|v| (v.unwrap() - 0.03).abs() < 1e-15));
        }
        let c = sc.station("C").unwrap();
        assert!(c.values().all(|v| (v - 36.0).abs() < 1e-9));
        let table = compensation_table(&quiet(1.0).stations, &FluidProps::default()).unwrap();
        let comp = |id: &str| {
            let u = resample_uniform(sc.station(id).unwrap(), 60.0, Reducer::Mean).unwrap();
            let dp = table.iter().find(|e| e.station == id).unwrap().dp_pa;
            compensate(&u, dp)
        };
        let (a, cc) = (comp("A"), comp("C"));
        let diffs: Vec<f64> = a.values().iter().zip(cc.values()).map(|(x, y)| x.unwrap() - y.unwrap()).collect();
        assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-9));
        assert!((diffs[0] - 0.03 * 100.486).abs() < 1e-9);
    }

    #[test]
    fn sawtooth_closed_form() {
        let mut cfg = quiet(120.0);
        cfg.fouling_rate_bar_per_km_per_day = 0.001;
        // PIG crosses the middle of every segment exactly 100 days in
        cfg.stations = vec![StationMeta::new("A", 0.0, 0.0), StationMeta::new("B", 50.0, 0.0)];
        cfg.pig_events = vec![PigEvent {
            launch: cfg.start.offset_secs(100.0 * DAY_S - 25_000.0),
            removal_fraction: 1.0,
            velocity_m_s: 1.0,
        }];
        let sc = generate_static_scenario(&cfg).unwrap();
        let h = &sc.truth.head_loss["A-B"];
        let at = |days: f64| h.get(h.index_of(cfg.start.offset_secs(days * DAY_S)).unwrap()).unwrap();
        assert!((at(100.0) - 0.03).abs() < 1e-12);
        let peak = h.get(h.index_of(cfg.start.offset_secs(100.0 * DAY_S - 60.0)).unwrap()).unwrap();
        assert!((peak - 0.13).abs() < 1e-6, "{peak}");
        assert!((at(50.0) - 0.08).abs() < 1e-12);
        assert!((at(110.0) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn partial_removal() {
        let mut cfg = quiet(40.0);
        cfg.fouling_rate_bar_per_km_per_day = 0.001;
        cfg.stations = vec![StationMeta::new("A", 0.0, 0.0), StationMeta::new("B", 50.0, 0.0)];
        cfg.pig_events = vec![PigEvent {
            launch: cfg.start.offset_secs(20.0 * DAY_S - 25_000.0),
            removal_fraction: 0.25,
            velocity_m_s: 1.0,
        }];
        let sc = generate_static_scenario(&cfg).unwrap();
        let h = &sc.truth.head_loss["A-B"];
        let after = h.get(h.index_of(cfg.start.offset_secs(20.0 * DAY_S)).unwrap()).unwrap();
        assert!((after - (0.03 + 0.75 * 0.02)).abs() < 1e-12);
    }

    #[test]
    fn composite_segment_is_length_weighted() {
        let cfg = ScenarioConfig {
            span_days: 200.0,
            static_noise_std_bar: 0.0,
            ..Default::default()
        };
        let sc = generate_static_scenario(&cfg).unwrap();
        let h = &sc.truth.head_loss;
        let (ab, bc, ac) = (&h["A-B"], &h["B-C"], &h["A-C"]);
        for k in (0..ac.len()).step_by(997) {
            let w = (ab.get(k).unwrap() * 59.307 + bc.get(k).unwrap() * (100.486 - 59.307)) / 100.486;
            assert!((w - ac.get(k).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = ScenarioConfig {
            span_days: 20.0,
            injected_outliers: 5,
            ..Default::default()
        };
        let a = generate_static_scenario(&cfg).unwrap();
        let b = generate_static_scenario(&cfg).unwrap();
        let c = generate_static_scenario(&ScenarioConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.series, c.series);

        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_static_scenario(d1.path(), &cfg, &a).unwrap();
        write_static_scenario(d2.path(), &cfg, &b).unwrap();
        for f in ["A_static.csv", HEAD_LOSS_FILE, LABELS_FILE, META_FILE, OUTLIERS_FILE] {
            assert_eq!(
                std::fs::read(d1.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert!(std::fs::read_to_string(d1.path().join(META_FILE)).unwrap().contains("rng = chacha8"));
    }

    #[test]
    fn values_within_policy_except_injected() {
        let cfg = ScenarioConfig {
            span_days: 60.0,
            injected_outliers: 12,
            ..Default::default()
        };
        let sc = generate_static_scenario(&cfg).unwrap();
        assert_eq!(sc.truth.outliers.len(), 12);
        let mut removed = 0;
        for s in &sc.series {
            let r = remove_outliers(s, &OutlierPolicy::default()).unwrap();
            removed += r.removed;
        }
        assert_eq!(removed, 12);
    }

    #[test]
    fn regime_mix() {
        let sc = generate_static_scenario(&ScenarioConfig {
            span_days: 120.0,
            ..Default::default()
        })
        .unwrap();
        let l = &sc.truth.labels;
        let total = l.windows.len() as f64;
        let transport = l.count(StateLabel::Transport) as f64 / total;
        assert!(transport > 0.75 && transport < 0.97, "{transport}");
        assert!(l.count(StateLabel::Off) > 0 && l.count(StateLabel::Regulation) > 0);
    }

    #[test]
    fn noise_free_head_loss_matches_truth() {
        let cfg = ScenarioConfig {
            span_days: 30.0,
            static_noise_std_bar: 0.0,
            regimes: RegimeConfig::transport_only(),
            ..Default::default()
        };
        let sc = generate_static_scenario(&cfg).unwrap();
        let table = compensation_table(&cfg.stations, &cfg.fluid()).unwrap();
        let comp = |id: &str| {
            let u = resample_uniform(sc.station(id).unwrap(), 60.0, Reducer::Mean).unwrap();
            compensate(&u, table.iter().find(|e| e.station == id).unwrap().dp_pa)
        };
        for seg in cfg.all_segments() {
            let h = head_loss(&comp(&seg.upstream), &comp(&seg.downstream), &seg).unwrap();
            let truth = &sc.truth.head_loss[&seg.name()];
            for (a, b) in h.values().iter().zip(truth.values()) {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ScenarioConfig {
                pig_events: vec![PigEvent {
                    launch: Timestamp::default(),
                    removal_fraction: 1.5,
                    velocity_m_s: 1.0,
                }],
                ..Default::default()
            },
            ScenarioConfig {
                fouling_rate_bar_per_km_per_day: -1.0,
                ..Default::default()
            },
            ScenarioConfig {
                stations: vec![StationMeta::new("B", 59.0, 0.0), StationMeta::new("A", 0.0, 0.0)],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(generate_static_scenario(&cfg).is_err());
        }
    }

    #[test]
    fn acoustic_delays() {
        let cfg = ScenarioConfig::default();
        let ac = AcousticConfig {
            noise_std_kpa: 0.0,
            control_duration_s: 600.0,
            ..Default::default()
        };
        let seg = SegmentMeta::from_name("A-B", &cfg.stations).unwrap();
        let sc = generate_acoustic_scenario(&cfg, &ac, &seg, None).unwrap();
        assert!((sc.truth.direct_delay_s - 50.0).abs() < 1e-3);
        // downstream is the upstream trace 100 samples later, scaled
        let up: Vec<f64> = sc.upstream.values().collect();
        let down: Vec<f64> = sc.downstream.values().collect();
        let shift = (sc.truth.direct_delay_s * 2.0).round() as usize;
        let frac = sc.truth.direct_delay_s * 2.0 - shift as f64;
        for k in shift + 1..up.len() {
            let expect = 0.8 * (up[k - shift] * (1.0 - frac.abs()) + up[k - shift - 1] * frac.abs().max(0.0));
            if frac >= 0.0 {
                assert!((down[k] - expect).abs() < 1e-6, "{k}");
            }
        }
    }

    #[test]
    fn zero_echo_equals_no_pig_samples() {
        let cfg = ScenarioConfig::default();
        let seg = SegmentMeta::from_name("A-B", &cfg.stations).unwrap();
        let event = PigEvent {
            launch: cfg.start,
            removal_fraction: 1.0,
            velocity_m_s: 20.0,
        };
        let silent = AcousticConfig {
            echo_gain: 0.0,
            ..Default::default()
        };
        let a = generate_acoustic_scenario(&cfg, &silent, &seg, Some(&event)).unwrap();
        let b = generate_acoustic_scenario(&cfg, &AcousticConfig::default(), &seg, Some(&event)).unwrap();
        assert_eq!(a.downstream, b.downstream);
        assert_ne!(a.upstream, b.upstream);
        let (t0, t1) = a.truth.transit.unwrap();
        let outside = |s: &PressureSeries| -> Vec<f64> {
            s.samples().iter().filter(|x| x.t < t0 || x.t > t1).map(|x| x.value).collect()
        };
        assert_eq!(outside(&a.upstream), outside(&b.upstream));
        assert!((t1.secs_since(t0) - 59_307.0 / 20.0).abs() < 1e-3);
    }

    #[test]
    fn unknown_segment_station() {
        let cfg = ScenarioConfig::default();
        let seg = SegmentMeta {
            upstream: "A".into(),
            downstream: "Z".into(),
            length_km: 1.0,
        };
        let err = generate_acoustic_scenario(&cfg, &AcousticConfig::default(), &seg, None).unwrap_err();
        assert!(err.to_string().contains("A-Z"));
    }
}
