//! Deterministic test data: a fixed-algorithm PRNG, synthetic slides and
//! point-prompt datasets.

mod dataset;
mod rng;
mod synth;

pub use dataset::{
    prompt_dataset, read_records, write_records, PromptRecord, RecordPoint, Stage, MAX_BACKGROUND_FRACTION,
};
pub use rng::{splitmix64, XorShift64Star};
pub use synth::{
    preset, synth_slide, Band, Lobe, Preset, Recipe, Shape, SynthSlide, SynthSpec, BACKGROUND_RANGE, HIGH_RANGE,
    LOW_RANGE,
};
