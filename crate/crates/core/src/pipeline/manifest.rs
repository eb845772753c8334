//! Run manifests: one JSON object per line recording inputs, configuration,
//! every predictor exchange and the outcome of a pipeline run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::predictor::wire::pack_bytes;
use crate::predictor::{PredictRequest, PredictResponse};
use crate::raster::{BinaryMask, LabelMask, Point, ProbabilityMap};
use crate::tiling::PatchWindow;

pub const MANIFEST_FORMAT: u32 = 1;

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn dims_bytes(w: u32, h: u32) -> [u8; 8] {
    let mut b = [0u8; 8];
    b[..4].copy_from_slice(&w.to_le_bytes());
    b[4..].copy_from_slice(&h.to_le_bytes());
    b
}

/// SHA-256 of width and height (u32 little endian) followed by the packed
/// mask bits as sent on the wire.
pub fn mask_digest(mask: &BinaryMask) -> String {
    sha256_hex(&[&dims_bytes(mask.width(), mask.height()), &pack_bytes(mask)])
}

/// SHA-256 of the dims followed by one class byte per pixel.
pub fn label_digest(mask: &LabelMask) -> String {
    sha256_hex(&[&dims_bytes(mask.width(), mask.height()), mask.data()])
}

/// SHA-256 of the dims followed by little-endian `f32` samples.
pub fn probmap_digest(map: &ProbabilityMap) -> String {
    let bytes: Vec<u8> = map.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&[&dims_bytes(map.width(), map.height()), &bytes])
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    sha256_hex(&[bytes])
}

/// SHA-256 of the request's JSON encoding.
pub fn request_digest(req: &PredictRequest) -> String {
    sha256_hex(&[&serde_json::to_vec(req).expect("requests serialize")])
}

/// Mask digest input extended with the score's IEEE bits.
pub fn response_digest(resp: &PredictResponse) -> String {
    let m = &resp.mask;
    sha256_hex(&[
        &dims_bytes(m.width(), m.height()),
        &pack_bytes(m),
        &resp.score.to_bits().to_le_bytes(),
    ])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigests {
    pub mask: String,
    pub probmap: String,
    pub image: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: u32,
    pub tool: String,
    pub width: u32,
    pub height: u32,
    /// Grid the run worked on after padding small slides up to one patch.
    pub work_width: u32,
    pub work_height: u32,
    pub inputs: InputDigests,
    pub config: PipelineConfig,
    pub backend: String,
    pub nondeterministic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStatus {
    Ok,
    Skipped,
    Failed,
    /// Never answered because the run stopped first.
    Pending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub id: u64,
    pub component: u32,
    /// Prompt points in slide coordinates.
    pub points: Vec<Point>,
    pub window: PatchWindow,
    pub request: String,
    pub response: Option<String>,
    pub score: Option<f32>,
    pub mask_pixels: Option<u64>,
    pub status: PromptStatus,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub postprocess_ms: f64,
    pub plan_ms: f64,
    pub predict_ms: f64,
    pub merge_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub status: RunStatus,
    pub error: Option<String>,
    pub requests: usize,
    pub answered: usize,
    pub skipped: usize,
    pub refined_pixels: u64,
    pub predicted_pixels: u64,
    pub final_pixels: u64,
    pub final_digest: Option<String>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(ManifestHeader),
    Prompt(PromptEntry),
    Summary(ManifestSummary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub header: ManifestHeader,
    pub prompts: Vec<PromptEntry>,
    pub summary: Option<ManifestSummary>,
}

fn write_line<W: Write>(out: &mut W, line: &Line) -> Result<()> {
    serde_json::to_writer(&mut *out, line).map_err(|e| Error::Internal(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

impl RunManifest {
    /// Header line, one line per prompt, then the summary line if present.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        write_line(&mut out, &Line::Header(self.header.clone()))?;
        for p in &self.prompts {
            write_line(&mut out, &Line::Prompt(p.clone()))?;
        }
        if let Some(s) = &self.summary {
            write_line(&mut out, &Line::Summary(s.clone()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut prompts = Vec::new();
        let mut summary = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| Error::format(format!("manifest line {}: {e}", n + 1)))?;
            match (parsed, header.is_some(), summary.is_some()) {
                (Line::Header(h), false, _) => header = Some(h),
                (Line::Prompt(p), true, false) => prompts.push(p),
                (Line::Summary(s), true, false) => summary = Some(s),
                _ => {
                    return Err(Error::format(format!(
                        "manifest line {}: expected header, prompts, summary in that order",
                        n + 1
                    )))
                }
            }
        }
        let header = header.ok_or_else(|| Error::format("manifest has no header line"))?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::format(format!("unsupported manifest format {}", header.format)));
        }
        Ok(RunManifest {
            header,
            prompts,
            summary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_digest_depends_on_dims() {
        let a = BinaryMask::empty(4, 2);
        let b = BinaryMask::empty(2, 4);
        assert_ne!(mask_digest(&a), mask_digest(&b));
        assert_eq!(mask_digest(&a), mask_digest(&BinaryMask::empty(4, 2)));
    }

    #[test]
    fn known_digest() {
        // sha256 of the empty string
        assert_eq!(
            bytes_digest(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn out_of_order_lines_rejected() {
        let text = r#"{"kind":"summary","status":"complete","error":null,"requests":0,"answered":0,"skipped":0,"refined_pixels":0,"predicted_pixels":0,"final_pixels":0,"final_digest":null,"timing":{"postprocess_ms":0,"plan_ms":0,"predict_ms":0,"merge_ms":0,"total_ms":0}}"#;
        assert!(matches!(
            RunManifest::read_jsonl(text.as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(RunManifest::read_jsonl(&b""[..]).is_err());
    }
}
