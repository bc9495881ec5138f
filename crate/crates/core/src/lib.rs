//! Pipeline fouling indicators from multi-station pressure recordings.
//!
//! The static chain cleans raw traces ([`cleanse`]), compensates station
//! altitude and forms per-segment head loss ([`hydraulics`]), maps it to a
//! `[0, 1]` PIG indicator with rolling features ([`features`]) and learns it
//! with a regression tree ([`tree`], [`eval`]). [`pipeline`] chains the stages.
//! [`pigtrack`] follows a PIG in flight from hydrophone cross-correlation, and
//! [`synth`] generates scenarios with full ground truth.
//!
//! ```
//! use pigline::hydraulics::{hydrostatic_dp, FluidProps};
//!
//! let dp_bar = hydrostatic_dp(&FluidProps::default(), 180.0) / 1e5;
//! assert!((dp_bar + 15.8922).abs() < 1e-4);
//! ```

pub mod artifact;
pub mod cleanse;
pub mod error;
pub mod eval;
pub mod features;
pub mod hydraulics;
pub mod pigtrack;
pub mod pipeline;
pub mod series;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/series.md")]
    mod series {}
    #[doc = include_str!("../../../book/src/cleansing.md")]
    mod cleansing {}
    #[doc = include_str!("../../../book/src/hydraulics.md")]
    mod hydraulics {}
    #[doc = include_str!("../../../book/src/indicator.md")]
    mod indicator {}
    #[doc = include_str!("../../../book/src/tree.md")]
    mod tree {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/synth.md")]
    mod synth {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
