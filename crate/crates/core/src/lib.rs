//! Point-prompt refinement of whole-slide segmentation masks.
//!
//! A coarse label mask is refined by removing likely in-situ lesions
//! ([`postprocess`]), its components are turned into point prompts
//! ([`prompting`]), a point-promptable model answers each prompt on a patch
//! ([`predictor`]) and the answers are merged back with the refined mask
//! ([`pipeline`]).
//!
//! ```
//! use slideprompt::fixtures::{preset, synth_slide, Preset};
//! use slideprompt::pipeline::{run_pipeline, PipelineConfig};
//! use slideprompt::predictor::MockOracle;
//! use slideprompt::raster::Class;
//!
//! let slide = synth_slide(&preset(Preset::EpidermisAdjacent, 1, 512, 512)?)?;
//! let oracle = MockOracle::new(&slide.ground_truth);
//! let out = run_pipeline(&slide.initial, &slide.probmap, &oracle, &PipelineConfig::default())?;
//! assert_eq!(out.final_mask, slide.ground_truth.class_plane(Class::Melanoma));
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! Remote models plug in through the line protocol in [`predictor::wire`].

pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod geometry;
pub mod pipeline;
pub mod postprocess;
pub mod predictor;
pub mod prompting;
pub mod raster;
pub mod tiling;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/postprocess.md")]
    mod postprocess {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/predictors.md")]
    mod predictors {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/tiling.md")]
    mod tiling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/fixtures.md")]
    mod fixtures {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
