//! Mask refinement before prompting.
//!
//! Melanoma components that touch epidermis and are small next to it are
//! treated as likely in-situ lesions. Those candidates survive only if a
//! large enough share of their pixels is predicted with high probability.
//! Everything else passes through unchanged, so the output is always a subset
//! of the melanoma plane.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    connected_components, touches, BinaryMask, Class, ComponentSet, Connectivity, LabelMask, ProbabilityMap,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Area ratio (melanoma / touched epidermis) below which a touching
    /// component becomes an in-situ candidate.
    pub alpha_m: f64,
    /// Pixels count as high-confidence when `P(x) > beta`. Kept in `f32` so
    /// a stored probability equal to `beta` compares equal.
    pub beta: f32,
    /// Candidates keep when the high-confidence share is at least this.
    pub alpha_c: f64,
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            alpha_m: 0.1,
            beta: 0.8,
            alpha_c: 0.4,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        // alpha_m = 0 is allowed and disables in-situ detection
        if !(0.0..1.0).contains(&self.alpha_m) {
            return Err(Error::validation(format!(
                "alpha_m must be in [0, 1), got {}",
                self.alpha_m
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::validation(format!("beta must be in (0, 1), got {}", self.beta)));
        }
        if !(self.alpha_c > 0.0 && self.alpha_c < 1.0) {
            return Err(Error::validation(format!(
                "alpha_c must be in (0, 1), got {}",
                self.alpha_c
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Invasive,
    InSituKept,
    InSituDropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchedRegion {
    pub id: u32,
    pub area: u64,
}

/// Per-component touch analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchDetail {
    pub id: u32,
    pub area: u64,
    /// Every touched epidermis component, ascending by ID.
    pub touched: Vec<TouchedRegion>,
    /// Area over the largest touched epidermis area; `None` when nothing is touched.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InSituSplit {
    /// Estimated in-situ component IDs, ascending.
    pub in_situ: Vec<u32>,
    /// Remaining invasive component IDs, ascending.
    pub invasive: Vec<u32>,
    pub details: Vec<TouchDetail>,
}

fn check_grid(what: &str, got: (u32, u32), want: (u32, u32)) -> Result<()> {
    if got != want {
        return Err(Error::validation(format!(
            "{what} is {}x{} but the melanoma mask is {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// Splits melanoma components into estimated in-situ candidates and the rest.
pub fn detect_in_situ(melanoma: &ComponentSet, epidermis: &BinaryMask, cfg: &PostprocessConfig) -> Result<InSituSplit> {
    check_grid("epidermis mask", epidermis.dims(), melanoma.dims())?;
    let epi = connected_components(epidermis, cfg.connectivity);

    let mut split = InSituSplit {
        in_situ: Vec::new(),
        invasive: Vec::new(),
        details: Vec::with_capacity(melanoma.count()),
    };
    for comp in melanoma {
        let report = touches(comp, &epi, cfg.connectivity)?;
        let touched: Vec<TouchedRegion> = report
            .touched
            .iter()
            .map(|&id| TouchedRegion {
                id,
                area: epi.get(id).expect("touched id comes from the same set").area(),
            })
            .collect();
        let largest = touched.iter().map(|t| t.area).max();
        let ratio = largest.map(|a| comp.area() as f64 / a as f64);
        match ratio {
            Some(r) if r < cfg.alpha_m => split.in_situ.push(comp.id()),
            _ => split.invasive.push(comp.id()),
        }
        split.details.push(TouchDetail {
            id: comp.id(),
            area: comp.area(),
            touched,
            ratio,
        });
    }
    Ok(split)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceSplit {
    pub kept: Vec<u32>,
    pub dropped: Vec<u32>,
    /// `(id, high-confidence share)` for every examined component.
    pub ratios: Vec<(u32, f64)>,
}

/// Share of a component's pixels with `P(x) > beta`.
pub fn confidence_ratio(comp: &crate::raster::Component, probmap: &ProbabilityMap, beta: f32) -> f64 {
    let high = comp.pixels().filter(|p| probmap.get(p.x, p.y) > beta).count();
    high as f64 / comp.area() as f64
}

/// Keeps candidates whose high-confidence share reaches `alpha_c`.
pub fn confidence_filter(
    melanoma: &ComponentSet,
    candidates: &[u32],
    probmap: &ProbabilityMap,
    cfg: &PostprocessConfig,
) -> Result<ConfidenceSplit> {
    check_grid("probability map", probmap.dims(), melanoma.dims())?;
    let mut out = ConfidenceSplit {
        kept: Vec::new(),
        dropped: Vec::new(),
        ratios: Vec::with_capacity(candidates.len()),
    };
    for &id in candidates {
        let comp = melanoma
            .get(id)
            .ok_or_else(|| Error::validation(format!("no melanoma component {id}")))?;
        let ratio = confidence_ratio(comp, probmap, cfg.beta);
        if ratio < cfg.alpha_c {
            out.dropped.push(id);
        } else {
            out.kept.push(id);
        }
        out.ratios.push((id, ratio));
    }
    Ok(out)
}

/// Audit record of one melanoma component.
///
/// Serialized as one JSON object per line with fields in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: u32,
    pub area: u64,
    pub touched: Vec<TouchedRegion>,
    pub ratio: Option<f64>,
    pub class: Classification,
    /// High-confidence share; only computed for in-situ candidates.
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PostprocessReport {
    pub records: Vec<ComponentRecord>,
}

impl PostprocessReport {
    pub fn count(&self, class: Classification) -> usize {
        self.records.iter().filter(|r| r.class == class).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::Internal(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::format(format!("report line: {e}")))?);
        }
        Ok(PostprocessReport { records })
    }
}

/// Result of [`postprocess_mask`].
#[derive(Clone, Debug)]
pub struct Postprocessed {
    /// Refined melanoma mask: invasive components plus confident candidates.
    pub mask: BinaryMask,
    pub report: PostprocessReport,
}

pub fn postprocess_mask(mask: &LabelMask, probmap: &ProbabilityMap, cfg: &PostprocessConfig) -> Result<Postprocessed> {
    cfg.validate()?;
    check_grid("probability map", probmap.dims(), mask.dims())?;
    let melanoma = connected_components(&mask.class_plane(Class::Melanoma), cfg.connectivity);
    let epidermis = mask.class_plane(Class::Epidermis);

    let split = detect_in_situ(&melanoma, &epidermis, cfg)?;
    let conf = confidence_filter(&melanoma, &split.in_situ, probmap, cfg)?;

    let mut class = vec![Classification::Invasive; melanoma.count()];
    let mut confidence = vec![None; melanoma.count()];
    for &id in &conf.kept {
        class[id as usize - 1] = Classification::InSituKept;
    }
    for &id in &conf.dropped {
        class[id as usize - 1] = Classification::InSituDropped;
    }
    for &(id, r) in &conf.ratios {
        confidence[id as usize - 1] = Some(r);
    }

    let (w, h) = mask.dims();
    let keep: Vec<bool> = class.iter().map(|&c| c != Classification::InSituDropped).collect();
    let data = melanoma
        .labels()
        .iter()
        .map(|&l| l != 0 && keep[l as usize - 1])
        .collect();
    let out = BinaryMask::new(w, h, data)?;

    let records = split
        .details
        .into_iter()
        .map(|d| ComponentRecord {
            id: d.id,
            area: d.area,
            touched: d.touched,
            ratio: d.ratio,
            class: class[d.id as usize - 1],
            confidence: confidence[d.id as usize - 1],
        })
        .collect();
    Ok(Postprocessed {
        mask: out,
        report: PostprocessReport { records },
    })
}
