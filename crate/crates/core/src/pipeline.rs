//! End-to-end chaining of the stages.
//!
//! ```text
//! raw static traces
//!   -> outlier removal -> 60 s grid -> regime labels (transport mask)
//!   -> altitude compensation -> head loss per segment (short and long term)
//!   -> indicator mapping + rolling features -> datasets
//!   -> tree training and evaluation
//! ```

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cleanse::{
    classify_states, component_labels, fit_gmm, mask_series, remove_outliers, state_features, GmmModel, OutlierPolicy,
    StateLabel, StateSegmentation, STATE_WINDOW_S,
};
use crate::error::{Error, Result};
use crate::eval::{run_protocol, ProtocolConfig, ProtocolOutcome};
use crate::features::{assemble_dataset, build_pig_indicator, fit_mapping, rolling_features, Dataset, MappingConfig, PigIndicatorSeries};
use crate::hydraulics::{compensate, compensation_table, FluidProps, HeadLossSeries, LONG_TERM_WINDOW_S};
use crate::series::{resample_uniform, PressureSeries, Reducer, SegmentMeta, StationMeta, UniformSeries};
use crate::tree::DecisionTree;

pub const STATIC_STEP_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stations: Vec<StationMeta>,
    pub fluid: FluidProps,
    pub outliers: OutlierPolicy,
    pub static_step_s: f64,
    pub state_window_s: f64,
    pub long_term_window_s: f64,
    pub mapping: MappingConfig,
    pub protocol: ProtocolConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stations: crate::synth::default_stations(),
            fluid: FluidProps::default(),
            outliers: OutlierPolicy::default(),
            static_step_s: STATIC_STEP_S,
            state_window_s: STATE_WINDOW_S,
            long_term_window_s: LONG_TERM_WINDOW_S,
            mapping: MappingConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn segment(&self, name: &str) -> Result<SegmentMeta> {
        SegmentMeta::from_name(name, &self.stations)
    }

    /// Every station pair, named `UP-DOWN`, in name order.
    pub fn segments(&self) -> Vec<SegmentMeta> {
        let mut out = Vec::new();
        for a in &self.stations {
            for b in &self.stations {
                if a.chainage_km < b.chainage_km {
                    out.push(SegmentMeta::between(a, b).expect("distinct chainages"));
                }
            }
        }
        out.sort_by_key(|s| s.name());
        out
    }
}

#[derive(Debug, Clone)]
pub struct CleansedStation {
    pub station: String,
    pub removed: usize,
    /// Outlier-free trace on the static grid.
    pub grid: UniformSeries,
    pub model: GmmModel,
    pub labels: StateSegmentation,
    /// `grid` with every non-transport bin missing.
    pub transport: UniformSeries,
}

/// Outlier removal, resampling and regime masking for one station.
pub fn cleanse_station(raw: &PressureSeries, cfg: &PipelineConfig) -> Result<CleansedStation> {
    let report = remove_outliers(raw, &cfg.outliers)?;
    let grid = resample_uniform(&report.series, cfg.static_step_s, Reducer::Mean)?;
    let rows = state_features(&grid, cfg.state_window_s)?;
    let model = fit_gmm(&rows, 3)?;
    let labels = classify_states(&model, &rows, cfg.state_window_s)?;
    component_labels(&model)?;
    let transport = mask_series(&grid, &labels, StateLabel::Transport);
    Ok(CleansedStation {
        station: raw.station().to_string(),
        removed: report.removed,
        grid,
        model,
        labels,
        transport,
    })
}

/// Compensated head loss of `seg` from transport-masked station series.
pub fn segment_head_loss(
    transport: &BTreeMap<String, UniformSeries>,
    seg: &SegmentMeta,
    cfg: &PipelineConfig,
) -> Result<HeadLossSeries> {
    let table = compensation_table(&cfg.stations, &cfg.fluid)?;
    let comp = |id: &str| -> Result<UniformSeries> {
        let u = transport.get(id).ok_or_else(|| Error::Segment {
            segment: seg.name(),
            message: format!("no cleansed series for station {id}"),
        })?;
        let entry = table.iter().find(|e| e.station == id).ok_or_else(|| Error::Segment {
            segment: seg.name(),
            message: format!("station {id} is not configured"),
        })?;
        Ok(compensate(u, entry.dp_pa))
    };
    HeadLossSeries::compute(&comp(&seg.upstream)?, &comp(&seg.downstream)?, seg, cfg.long_term_window_s)
}

#[derive(Debug, Clone)]
pub struct SegmentDataset {
    pub mapping: MappingConfig,
    pub indicator: PigIndicatorSeries,
    pub dataset: Dataset,
}

/// Indicator mapping fitted on the training span, then features joined to it.
pub fn segment_dataset(hl: &HeadLossSeries, cfg: &PipelineConfig) -> Result<SegmentDataset> {
    let seg_err = |e: Error| match e {
        Error::Segment { .. } => e,
        other => Error::Segment {
            segment: hl.segment.name(),
            message: other.to_string(),
        },
    };
    let mapping = fit_mapping(&hl.long_term, cfg.protocol.train_from, cfg.protocol.train_to, &cfg.mapping).map_err(seg_err)?;
    let indicator = build_pig_indicator(&hl.long_term, &mapping, &hl.segment)?;
    let features = rolling_features(&hl.short_term)?;
    let mut dataset = assemble_dataset(&features, &indicator)?;
    dataset.segment = hl.segment.name();
    Ok(SegmentDataset {
        mapping,
        indicator,
        dataset,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cleansed: Vec<CleansedStation>,
    pub head_loss: BTreeMap<String, HeadLossSeries>,
    pub datasets: BTreeMap<String, SegmentDataset>,
    pub outcome: ProtocolOutcome,
}

/// Runs every stage on raw static traces.
pub fn run_static_pipeline(raw: &[PressureSeries], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let cleansed: Vec<CleansedStation> = raw.par_iter().map(|s| cleanse_station(s, cfg)).collect::<Result<_>>()?;
    let transport: BTreeMap<String, UniformSeries> =
        cleansed.iter().map(|c| (c.station.clone(), c.transport.clone())).collect();
    let head_loss: BTreeMap<String, HeadLossSeries> = cfg
        .segments()
        .par_iter()
        .map(|seg| Ok((seg.name(), segment_head_loss(&transport, seg, cfg)?)))
        .collect::<Result<_>>()?;
    let datasets: BTreeMap<String, SegmentDataset> = head_loss
        .par_iter()
        .map(|(name, hl)| Ok((name.clone(), segment_dataset(hl, cfg)?)))
        .collect::<Result<_>>()?;
    let plain: BTreeMap<String, Dataset> = datasets.iter().map(|(k, v)| (k.clone(), v.dataset.clone())).collect();
    let outcome = run_protocol(&plain, &cfg.protocol)?;
    Ok(PipelineOutput {
        cleansed,
        head_loss,
        datasets,
        outcome,
    })
}

/// Latest prediction of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRisk {
    pub segment: String,
    pub t: crate::series::Timestamp,
    pub probability: f64,
    pub flagged: bool,
}

/// Predicts each segment's latest row and ranks segments by probability,
/// highest first, ties by name.
pub fn rank_segments(model: &DecisionTree, datasets: &BTreeMap<String, Dataset>, threshold: f64) -> Result<Vec<SegmentRisk>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} is outside [0, 1]")));
    }
    let mut out = Vec::new();
    for (name, d) in datasets {
        let Some(last) = d.rows.last() else {
            continue;
        };
        let probability = model.predict_row(&last.features);
        out.push(SegmentRisk {
            segment: name.clone(),
            t: last.t,
            probability,
            flagged: probability > threshold,
        });
    }
    out.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.segment.cmp(&b.segment)));
    Ok(out)
}
