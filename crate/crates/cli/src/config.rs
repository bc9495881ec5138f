//! `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [stations]
//! A = 0 179          # chainage_km altitude_m
//! B = 59.307 359
//!
//! [training]
//! train_from = 2013-06-01
//! ```
//!
//! Unknown sections and keys are rejected so typos surface immediately.

use std::path::{Path, PathBuf};

use pigline::cleanse::OutlierPolicy;
use pigline::hydraulics::FluidProps;
use pigline::pigtrack::TrackerConfig;
use pigline::pipeline::PipelineConfig;
use pigline::series::{validate_stations, StationMeta, Timestamp};
use pigline::synth::{AcousticConfig, ScenarioConfig};
use pigline::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub tracker: TrackerConfig,
    pub scenario: ScenarioConfig,
    pub acoustic: AcousticConfig,
    /// Segment the synthetic PIG run is recorded on.
    pub acoustic_segment: String,
    pub output_dir: PathBuf,
    /// Raw traces; defaults to `<output>/raw`.
    pub input_dir: Option<PathBuf>,
    pub report_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            tracker: TrackerConfig::default(),
            scenario: ScenarioConfig::default(),
            acoustic: AcousticConfig::default(),
            acoustic_segment: "A-B".into(),
            output_dir: PathBuf::from("pigline-out"),
            input_dir: None,
            report_threshold: 0.8,
        }
    }
}

impl RunConfig {
    pub fn input_dir(&self) -> PathBuf {
        self.input_dir.clone().unwrap_or_else(|| self.output_dir.join("raw"))
    }

    pub fn load(path: &Path) -> pigline::Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        parse(&text, path)
    }

    pub fn validate(&self) -> pigline::Result<()> {
        validate_stations(&self.pipeline.stations)?;
        self.pipeline.fluid.validate()?;
        self.pipeline.outliers.validate()?;
        self.pipeline.protocol.validate()?;
        self.tracker.validate()?;
        let mut names = vec![self.pipeline.protocol.train_segment.clone(), self.acoustic_segment.clone()];
        names.extend(self.pipeline.protocol.other_segments.iter().cloned());
        for n in names {
            self.pipeline.segment(&n)?;
        }
        if !(0.0..=1.0).contains(&self.report_threshold) {
            return Err(Error::InvalidArgument(format!(
                "report threshold {} is outside [0, 1]",
                self.report_threshold
            )));
        }
        Ok(())
    }
}

fn parse(text: &str, path: &Path) -> pigline::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    let mut stations: Vec<StationMeta> = Vec::new();
    let mut scenario_stations = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !SECTIONS.contains(&section.as_str()) {
                return Err(err(format!("unknown section [{section}]")));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        if section.is_empty() {
            return Err(err("key outside of any [section]".into()));
        }
        apply(&mut cfg, &section, key, value, &mut stations).map_err(err)?;
        scenario_stations |= section == "stations";
    }
    if scenario_stations {
        cfg.pipeline.stations = stations.clone();
        cfg.scenario.stations = stations;
    }
    cfg.validate()?;
    Ok(cfg)
}

const SECTIONS: [&str; 9] = [
    "stations", "paths", "fluid", "cleanse", "tracker", "mapping", "training", "report", "synth",
];

fn num(v: &str) -> Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("`{v}` is not a finite number"))
}

fn int(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn time(v: &str) -> Result<Timestamp, String> {
    Timestamp::parse_iso8601(v).map_err(|e| e.to_string())
}

fn apply(cfg: &mut RunConfig, section: &str, key: &str, v: &str, stations: &mut Vec<StationMeta>) -> Result<(), String> {
    let unknown = || format!("unknown key `{key}` in [{section}]");
    match section {
        "stations" => {
            let parts: Vec<&str> = v.split_whitespace().collect();
            let [chainage, altitude] = parts.as_slice() else {
                return Err(format!("station {key} needs `chainage_km altitude_m`"));
            };
            stations.push(StationMeta::new(key, num(chainage)?, num(altitude)?));
        }
        "paths" => match key {
            "output" => cfg.output_dir = PathBuf::from(v),
            "input" => cfg.input_dir = Some(PathBuf::from(v)),
            _ => return Err(unknown()),
        },
        "fluid" => match key {
            "density" => {
                cfg.pipeline.fluid = FluidProps::with_density(num(v)?);
                cfg.scenario.density_kg_m3 = num(v)?;
            }
            "gravity" => cfg.pipeline.fluid.gravity_m_s2 = num(v)?,
            _ => return Err(unknown()),
        },
        "cleanse" => {
            let p: &mut OutlierPolicy = &mut cfg.pipeline.outliers;
            match key {
                "static_min_bar" => p.static_min_bar = num(v)?,
                "static_max_bar" => p.static_max_bar = num(v)?,
                "dynamic_min_kpa" => p.dynamic_min_kpa = num(v)?,
                "dynamic_max_kpa" => p.dynamic_max_kpa = num(v)?,
                "step_s" => cfg.pipeline.static_step_s = num(v)?,
                "state_window_s" => cfg.pipeline.state_window_s = num(v)?,
                "long_term_window_s" => cfg.pipeline.long_term_window_s = num(v)?,
                _ => return Err(unknown()),
            }
        }
        "tracker" => {
            let t = &mut cfg.tracker;
            match key {
                "window_s" => t.window_s = num(v)?,
                "hop_s" => t.hop_s = num(v)?,
                "max_lag_s" => t.max_lag_s = num(v)?,
                "sound_speed_m_s" => t.sound_speed_m_s = num(v)?,
                "baseline_exclusion_s" => t.baseline_exclusion_s = num(v)?,
                "max_speed_m_s" => t.max_speed_m_s = num(v)?,
                "min_peak_score" => t.min_peak_score = num(v)?,
                "min_mean_score" => t.min_mean_score = num(v)?,
                "min_track_columns" => t.min_track_columns = int(v)?,
                "max_skipped_columns" => t.max_skipped_columns = int(v)?,
                _ => return Err(unknown()),
            }
        }
        "mapping" => match key {
            "lo_percentile" => cfg.pipeline.mapping.lo_percentile = num(v)?,
            "hi_percentile" => cfg.pipeline.mapping.hi_percentile = num(v)?,
            _ => return Err(unknown()),
        },
        "training" => {
            let p = &mut cfg.pipeline.protocol;
            match key {
                "train_segment" => p.train_segment = v.to_string(),
                "other_segments" => p.other_segments = v.split_whitespace().map(str::to_string).collect(),
                "train_from" => p.train_from = time(v)?,
                "train_to" => p.train_to = time(v)?,
                "test_from" => p.test_from = time(v)?,
                "test_to" => p.test_to = time(v)?,
                "max_depth" => p.tree.max_depth = int(v)?,
                "min_samples_leaf" => p.tree.min_samples_leaf = int(v)?,
                "min_mse_decrease" => p.tree.min_mse_decrease = num(v)?,
                _ => return Err(unknown()),
            }
        }
        "report" => match key {
            "threshold" => cfg.report_threshold = num(v)?,
            _ => return Err(unknown()),
        },
        "synth" => {
            let s = &mut cfg.scenario;
            match key {
                "seed" => s.seed = v.parse().map_err(|_| format!("`{v}` is not a seed"))?,
                "start" => s.start = time(v)?,
                "span_days" => s.span_days = num(v)?,
                "static_noise_std_bar" => s.static_noise_std_bar = num(v)?,
                "injected_outliers" => s.injected_outliers = int(v)?,
                "delivery_pressure_bar" => s.delivery_pressure_bar = num(v)?,
                "baseline_head_loss_bar_per_km" => s.baseline_head_loss_bar_per_km = num(v)?,
                "fouling_rate_bar_per_km_per_day" => s.fouling_rate_bar_per_km_per_day = num(v)?,
                "initial_fouling_bar_per_km" => s.initial_fouling_bar_per_km = num(v)?,
                "acoustic_segment" => cfg.acoustic_segment = v.to_string(),
                "acoustic_sample_rate_hz" => cfg.acoustic.sample_rate_hz = num(v)?,
                "acoustic_noise_std_kpa" => cfg.acoustic.noise_std_kpa = num(v)?,
                "echo_gain" => cfg.acoustic.echo_gain = num(v)?,
                _ => return Err(unknown()),
            }
        }
        _ => return Err(unknown()),
    }
    Ok(())
}
