//! One function per subcommand. Each reads the artifacts of the previous
//! stage from the output directory and writes its own under a fixed name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pigline::artifact::{write_atomic, write_string_atomic};
use pigline::cleanse::StateLabel;
use pigline::eval::{run_protocol, write_reports_csv};
use pigline::features::{load_dataset_csv, Dataset};
use pigline::hydraulics::load_head_loss_csv;
use pigline::pigtrack::{build_correlation_map, extract_trajectory, CorrelationMap, Trajectory};
use pigline::pipeline::{cleanse_station, rank_segments, segment_dataset, segment_head_loss};
use pigline::series::{
    load_csv_series, load_uniform_csv, resample_uniform, series_file_name, slice_interval, ChannelKind,
    PressureSeries, Reducer, SegmentMeta, Timestamp, UniformSeries,
};
use pigline::synth::{generate_acoustic_scenario, generate_static_scenario, write_acoustic_scenario, write_static_scenario};
use pigline::tree::DecisionTree;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::svg::{decimate, Heatmap, Line, LineChart};

/// Points per plotted line.
const PLOT_POINTS: usize = 2000;
const MAP_PLOT_COLUMNS: usize = 400;
const MAP_PLOT_LAGS: usize = 160;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input {}; run `pigline {stage}` first", path.display())]
    MissingInput { path: PathBuf, stage: &'static str },
    #[error(transparent)]
    Core(#[from] pigline::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Optional `[from, to)` restriction from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

impl Span {
    fn contains(&self, t: Timestamp) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t < e)
    }

    fn filter(&self, s: &PressureSeries) -> PressureSeries {
        s.filtered(|x| self.contains(x.t))
    }

    fn slice(&self, u: &UniformSeries) -> pigline::Result<UniformSeries> {
        if self.from.is_none() && self.to.is_none() {
            return Ok(u.clone());
        }
        let from = self.from.unwrap_or(u.start());
        let to = self.to.unwrap_or(u.end());
        slice_interval(u, from, to)
    }

    fn dataset(&self, d: &Dataset) -> Dataset {
        Dataset {
            segment: d.segment.clone(),
            rows: d.rows.iter().filter(|r| self.contains(r.t)).copied().collect(),
        }
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput { path, stage })
    }
}

fn days_since(t: Timestamp, origin: Timestamp) -> f64 {
    t.secs_since(origin) / 86_400.0
}

fn uniform_line(name: &str, u: &UniformSeries, origin: Timestamp) -> Line {
    let pts: Vec<(f64, Option<f64>)> = (0..u.len()).map(|k| (days_since(u.time_at(k), origin), u.get(k))).collect();
    Line {
        name: name.into(),
        points: decimate(&pts, PLOT_POINTS),
    }
}

/// Segments named on the command line, or every one of `all`.
fn pick_segments(cfg: &RunConfig, only: Option<&str>, all: Vec<String>) -> pigline::Result<Vec<SegmentMeta>> {
    match only {
        Some(name) => Ok(vec![cfg.pipeline.segment(name)?]),
        None => all.iter().map(|n| cfg.pipeline.segment(n)).collect(),
    }
}

fn evaluated_segments(cfg: &RunConfig) -> Vec<String> {
    let p = &cfg.pipeline.protocol;
    let mut names = vec![p.train_segment.clone()];
    for s in &p.other_segments {
        if !names.contains(s) {
            names.push(s.clone());
        }
    }
    names.sort();
    names
}

pub fn synth(cfg: &RunConfig, span: Span) -> Result<()> {
    let mut sc = cfg.scenario.clone();
    if let Some(from) = span.from {
        sc.start = from;
    }
    if let Some(to) = span.to {
        sc.span_days = to.secs_since(sc.start) / 86_400.0;
    }
    let end = sc.end();
    sc.pig_events.retain(|e| e.launch < end);
    let dir = cfg.input_dir();
    let scenario = generate_static_scenario(&sc)?;
    write_static_scenario(&dir, &sc, &scenario)?;

    let seg = cfg.pipeline.segment(&cfg.acoustic_segment)?;
    let event = sc.pig_events.first();
    let acoustic = generate_acoustic_scenario(&sc, &cfg.acoustic, &seg, event)?;
    write_acoustic_scenario(&dir, &acoustic)?;

    let lines = scenario
        .series
        .iter()
        .map(|s| {
            let u = resample_uniform(s, 3600.0, Reducer::Mean)?;
            Ok(uniform_line(s.station(), &u, sc.start))
        })
        .collect::<pigline::Result<Vec<_>>>()?;
    LineChart {
        title: "Raw static pressure (hourly means)",
        x_label: "days since start",
        y_label: "pressure (bar)",
        lines,
    }
    .write(&dir, "static_pressure")?;
    println!(
        "synth: {} stations, {} days, {} PIG runs, seed {} -> {}",
        sc.stations.len(),
        sc.span_days,
        sc.pig_events.len(),
        sc.seed,
        dir.display()
    );
    Ok(())
}

pub fn cleanse(cfg: &RunConfig, span: Span) -> Result<()> {
    let input = cfg.input_dir();
    let dir = cfg.output_dir.join("cleanse");
    let raw: Vec<PressureSeries> = cfg
        .pipeline
        .stations
        .iter()
        .map(|st| {
            let path = require(input.join(series_file_name(&st.id, ChannelKind::StaticBar)), "synth")?;
            Ok(span.filter(&load_csv_series(&path, &st.id, ChannelKind::StaticBar)?))
        })
        .collect::<Result<_>>()?;
    let cleansed = raw
        .par_iter()
        .map(|s| cleanse_station(s, &cfg.pipeline))
        .collect::<pigline::Result<Vec<_>>>()?;

    let mut summary = String::from("station,samples,removed,off_windows,regulation_windows,transport_windows\n");
    for (c, r) in cleansed.iter().zip(&raw) {
        write_atomic(dir.join(format!("{}_grid.csv", c.station)), |w| c.grid.write_csv(w))?;
        write_atomic(dir.join(format!("{}_labels.csv", c.station)), |w| c.labels.write_csv(w))?;
        write_atomic(dir.join(format!("{}_transport.csv", c.station)), |w| c.transport.write_csv(w))?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            c.station,
            r.len(),
            c.removed,
            c.labels.count(StateLabel::Off),
            c.labels.count(StateLabel::Regulation),
            c.labels.count(StateLabel::Transport)
        );
        let origin = c.grid.start();
        LineChart {
            title: &format!("Station {}: cleansed pressure and transport regime", c.station),
            x_label: "days since start",
            y_label: "pressure (bar)",
            lines: vec![uniform_line("cleansed", &c.grid, origin), uniform_line("transport", &c.transport, origin)],
        }
        .write(&dir, &format!("{}_states", c.station))?;
    }
    write_string_atomic(dir.join("summary.csv"), &summary)?;
    print!("cleanse:\n{summary}");
    Ok(())
}

pub fn headloss(cfg: &RunConfig, span: Span, only: Option<&str>) -> Result<()> {
    let src = cfg.output_dir.join("cleanse");
    let dir = cfg.output_dir.join("headloss");
    let all = cfg.pipeline.segments().iter().map(|s| s.name()).collect();
    let segments = pick_segments(cfg, only, all)?;
    let mut transport = BTreeMap::new();
    for seg in &segments {
        for id in [&seg.upstream, &seg.downstream] {
            if !transport.contains_key(id) {
                let path = require(src.join(format!("{id}_transport.csv")), "cleanse")?;
                transport.insert(id.clone(), span.slice(&load_uniform_csv(path)?)?);
            }
        }
    }
    let results = segments
        .par_iter()
        .map(|seg| segment_head_loss(&transport, seg, &cfg.pipeline))
        .collect::<pigline::Result<Vec<_>>>()?;
    for hl in &results {
        let name = hl.segment.name();
        write_atomic(dir.join(format!("{name}.csv")), |w| hl.write_csv(w))?;
        let origin = hl.short_term.start();
        LineChart {
            title: &format!("Segment {name}: head loss"),
            x_label: "days since start",
            y_label: "head loss (bar/km)",
            lines: vec![
                uniform_line("short term", &hl.short_term, origin),
                uniform_line("7-day mean", &hl.long_term, origin),
            ],
        }
        .write(&dir, &format!("{name}_plot"))?;
        println!(
            "headloss: {name} {} bins, {} with head loss",
            hl.short_term.len(),
            hl.short_term.present_count()
        );
    }
    Ok(())
}

fn load_dynamic(input: &Path, station: &str, span: Span) -> Result<UniformSeries> {
    let path = require(input.join(series_file_name(station, ChannelKind::DynamicKpa)), "synth")?;
    let s = span.filter(&load_csv_series(&path, station, ChannelKind::DynamicKpa)?);
    Ok(resample_uniform(&s, 1.0 / s.nominal_rate_hz(), Reducer::Mean)?)
}

/// Max-pools the map into at most `MAP_PLOT_COLUMNS x MAP_PLOT_LAGS` cells.
fn map_heatmap<'a>(map: &CorrelationMap, title: &'a str) -> Heatmap<'a> {
    let origin = map.time_bins.first().copied().unwrap_or(Timestamp::from_micros(0));
    let cs = map.columns.len().div_ceil(MAP_PLOT_COLUMNS).max(1);
    let ls = map.lag_count().div_ceil(MAP_PLOT_LAGS).max(1);
    let lags = map.lag_axis_s();
    let mut xs = Vec::new();
    let mut cells = Vec::new();
    for (ci, chunk) in map.columns.chunks(cs).enumerate() {
        xs.push(map.time_bins[ci * cs].secs_since(origin) / 3600.0);
        let col: Vec<f64> = (0..lags.len())
            .step_by(ls)
            .map(|l0| {
                chunk
                    .iter()
                    .flat_map(|c| c[l0..(l0 + ls).min(c.len())].iter())
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            })
            .collect();
        cells.push(col);
    }
    Heatmap {
        title,
        x_label: "hours since start",
        y_label: "lag (s)",
        xs,
        ys: lags.iter().step_by(ls).copied().collect(),
        cells,
        overlay: Vec::new(),
    }
}

fn track_result_csv(seg: &str, traj: Option<&Trajectory>) -> String {
    let mut out = String::from("segment,detected,velocity_m_s,mean_score,departure_us,eta_us,points\n");
    let opt = |t: Option<Timestamp>| t.map(|t| t.micros().to_string()).unwrap_or_default();
    match traj {
        Some(t) => {
            let _ = writeln!(
                out,
                "{seg},true,{},{},{},{},{}",
                t.velocity_m_s,
                t.mean_score,
                opt(t.departure),
                opt(t.eta),
                t.points.len()
            );
        }
        None => {
            let _ = writeln!(out, "{seg},false,,,,,0");
        }
    }
    out
}

pub fn track(cfg: &RunConfig, span: Span, only: Option<&str>) -> Result<()> {
    let seg = cfg.pipeline.segment(only.unwrap_or(&cfg.acoustic_segment))?;
    let name = seg.name();
    let input = cfg.input_dir();
    let dir = cfg.output_dir.join("track");
    let up = load_dynamic(&input, &seg.upstream, span)?;
    let down = load_dynamic(&input, &seg.downstream, span)?;
    let map = build_correlation_map(&up, &down, &cfg.tracker)?;
    let traj = extract_trajectory(&map, &cfg.tracker, &seg);

    write_atomic(dir.join(format!("{name}_map.csv")), |w| map.write_csv(w))?;
    write_atomic(dir.join(format!("{name}_trajectory.csv")), |w| match &traj {
        Some(t) => t.write_csv(w),
        None => writeln!(w, "time_us,lag_s,position_m,score"),
    })?;
    write_string_atomic(dir.join(format!("{name}_result.csv")), &track_result_csv(&name, traj.as_ref()))?;

    let title = format!("Segment {name}: normalized cross-correlation");
    let mut heat = map_heatmap(&map, &title);
    if let (Some(t), Some(origin)) = (&traj, map.time_bins.first()) {
        heat.overlay = t.points.iter().map(|p| (p.t.secs_since(*origin) / 3600.0, p.lag_s)).collect();
    }
    heat.write(&dir, &format!("{name}_map_plot"))?;

    match &traj {
        Some(t) => println!(
            "track: {name} PIG detected, velocity {:.4} m/s, mean score {:.3}, {} points",
            t.velocity_m_s,
            t.mean_score,
            t.points.len()
        ),
        None => println!("track: {name} NONE"),
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, span: Span) -> Result<()> {
    let mut pcfg = cfg.pipeline.clone();
    if let Some(f) = span.from {
        pcfg.protocol.train_from = f;
    }
    if let Some(t) = span.to {
        pcfg.protocol.train_to = t;
    }
    pcfg.protocol.validate()?;
    let src = cfg.output_dir.join("headloss");
    let names = evaluated_segments(cfg);
    let head_loss = names
        .iter()
        .map(|n| {
            let seg = pcfg.segment(n)?;
            let path = require(src.join(format!("{n}.csv")), "headloss")?;
            Ok(load_head_loss_csv(path, seg)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let built = head_loss
        .par_iter()
        .map(|hl| segment_dataset(hl, &pcfg))
        .collect::<pigline::Result<Vec<_>>>()?;

    let dir = cfg.output_dir.join("datasets");
    let mut mapping = String::from("segment,lo_percentile,hi_percentile,h_lo_bar_per_km,h_hi_bar_per_km\n");
    let mut datasets = BTreeMap::new();
    for (name, sd) in names.iter().zip(built) {
        write_atomic(dir.join(format!("{name}.csv")), |w| sd.dataset.write_csv(w))?;
        let m = sd.mapping;
        let _ = writeln!(mapping, "{name},{},{},{},{}", m.lo_percentile, m.hi_percentile, m.h_lo, m.h_hi);
        datasets.insert(name.clone(), sd.dataset);
    }
    write_string_atomic(dir.join("mapping.csv"), &mapping)?;

    let outcome = run_protocol(&datasets, &pcfg.protocol)?;
    write_string_atomic(cfg.output_dir.join("model").join("tree.txt"), &outcome.model.to_text())?;
    write_atomic(cfg.output_dir.join("eval").join("reports.csv"), |w| write_reports_csv(&outcome.reports, w))?;
    println!(
        "train: tree depth {}, {} leaves",
        outcome.model.root.depth(),
        outcome.model.root.leaf_count()
    );
    for r in &outcome.reports {
        println!(
            "eval: {} {} .. {} rms {:.4} accuracy {:.2}%",
            r.segment,
            r.from,
            r.to,
            r.rms_error(),
            r.accuracy_pct()
        );
    }
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<DecisionTree> {
    let path = require(cfg.output_dir.join("model").join("tree.txt"), "train")?;
    Ok(DecisionTree::load(path)?)
}

fn load_datasets(cfg: &RunConfig, only: Option<&str>, span: Span) -> Result<BTreeMap<String, Dataset>> {
    let dir = cfg.output_dir.join("datasets");
    pick_segments(cfg, only, evaluated_segments(cfg))?
        .iter()
        .map(|seg| {
            let name = seg.name();
            let path = require(dir.join(format!("{name}.csv")), "train")?;
            let d = span.dataset(&load_dataset_csv(path, &name)?);
            Ok((name, d))
        })
        .collect()
}

pub fn predict(cfg: &RunConfig, span: Span, only: Option<&str>) -> Result<()> {
    let model = load_model(cfg)?;
    let datasets = load_datasets(cfg, only, span)?;
    let dir = cfg.output_dir.join("predict");
    for (name, d) in &datasets {
        let y_hat = model.predict_dataset(d)?;
        write_atomic(dir.join(format!("{name}.csv")), |w| {
            writeln!(w, "t_us,predicted,target")?;
            for (r, p) in d.rows.iter().zip(&y_hat) {
                writeln!(w, "{},{p},{}", r.t.micros(), r.target)?;
            }
            Ok(())
        })?;
        let origin = d.rows.first().map_or(Timestamp::from_micros(0), |r| r.t);
        let series = |vals: Vec<f64>| -> Vec<(f64, Option<f64>)> {
            let pts: Vec<_> = d.rows.iter().zip(vals).map(|(r, v)| (days_since(r.t, origin), Some(v))).collect();
            decimate(&pts, PLOT_POINTS)
        };
        LineChart {
            title: &format!("Segment {name}: PIG indicator"),
            x_label: "days since start",
            y_label: "indicator",
            lines: vec![
                Line {
                    name: "target".into(),
                    points: series(d.targets()),
                },
                Line {
                    name: "predicted".into(),
                    points: series(y_hat.clone()),
                },
            ],
        }
        .write(&dir, &format!("{name}_plot"))?;
        println!("predict: {name} {} rows", d.len());
    }
    Ok(())
}

pub fn report(cfg: &RunConfig, span: Span, only: Option<&str>, threshold: f64) -> Result<()> {
    let model = load_model(cfg)?;
    let datasets = load_datasets(cfg, only, span)?;
    let ranking = rank_segments(&model, &datasets, threshold)?;
    let mut out = String::from("rank,segment,time,probability,flagged\n");
    for (i, r) in ranking.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", i + 1, r.segment, r.t, r.probability, r.flagged);
    }
    write_string_atomic(cfg.output_dir.join("report").join("report.csv"), &out)?;
    let flagged = ranking.iter().filter(|r| r.flagged).count();
    println!("report: threshold {threshold}, {flagged} of {} segments flagged", ranking.len());
    for (i, r) in ranking.iter().enumerate() {
        println!(
            "{:>2}. {:<6} {:.3} at {}{}",
            i + 1,
            r.segment,
            r.probability,
            r.t,
            if r.flagged { "  FLAGGED" } else { "" }
        );
    }
    Ok(())
}
