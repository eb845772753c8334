//! Ground-truth backed test predictors.

use std::str::FromStr;

use super::{PredictRequest, PredictResponse, PredictorBackend};
use crate::error::{Error, Result};
use crate::fixtures::{splitmix64, XorShift64Star};
use crate::raster::{connected_components, BinaryMask, Class, ComponentSet, Connectivity, LabelMask, Point};

/// Returns the 8-connected ground-truth melanoma component under each prompt
/// point, clipped to the request patch.
///
/// Patch pixels outside the ground-truth raster count as background, so
/// windows hanging over the slide edge are fine.
#[derive(Clone, Debug)]
pub struct MockOracle {
    components: ComponentSet,
}

impl MockOracle {
    pub fn new(ground_truth: &LabelMask) -> Self {
        MockOracle {
            components: connected_components(&ground_truth.class_plane(Class::Melanoma), Connectivity::Eight),
        }
    }

    /// Component id under a slide pixel, 0 for background.
    fn label(&self, x: u64, y: u64) -> u32 {
        let (w, h) = self.components.dims();
        if x < w as u64 && y < h as u64 {
            self.components.label_at(x as u32, y as u32)
        } else {
            0
        }
    }

    fn oracle_mask(&self, req: &PredictRequest) -> BinaryMask {
        let mut ids: Vec<u32> = req
            .points
            .iter()
            .map(|p| self.label(req.origin.x as u64 + p.x as u64, req.origin.y as u64 + p.y as u64))
            .filter(|&id| id != 0)
            .collect();
        ids.sort_unstable();
        ids.dedup();

        let mut mask = BinaryMask::empty(req.width, req.height);
        let (x0, y0) = (req.origin.x as u64, req.origin.y as u64);
        let (x1, y1) = (x0 + req.width as u64, y0 + req.height as u64);
        for id in ids {
            let comp = self.components.get(id).expect("label refers to a component");
            for span in comp.spans() {
                let (y, sx, ex) = (span.y as u64, span.x_start as u64, span.x_end as u64);
                if y < y0 || y >= y1 {
                    continue;
                }
                for x in sx.max(x0)..ex.min(x1) {
                    mask.set((x - x0) as u32, (y - y0) as u32, true);
                }
            }
        }
        mask
    }
}

impl PredictorBackend for MockOracle {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        req.validate()?;
        let mask = self.oracle_mask(req);
        let score = if mask.is_empty() { 0.0 } else { 1.0 };
        Ok(PredictResponse {
            id: req.id,
            mask,
            score,
        })
    }
}

/// Perturbations applied by [`NoisyMock`] on top of the oracle mask.
///
/// Parsed from `key=value` pairs separated by commas: `dilate`, `erode`,
/// `fp` (false-positive blob count), `fp-radius` and `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseConfig {
    /// Disk radius of the dilation, applied after erosion.
    pub dilate: u32,
    pub erode: u32,
    /// Number of spurious disks added per response.
    pub false_positives: u32,
    pub fp_radius: u32,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            dilate: 2,
            erode: 0,
            false_positives: 0,
            fp_radius: 3,
            seed: 0,
        }
    }
}

impl FromStr for NoiseConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = NoiseConfig {
            dilate: 0,
            ..NoiseConfig::default()
        };
        for pair in s.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("noise option {pair:?} is not key=value")))?;
            let bad = |_| Error::validation(format!("noise option {key} has a bad value {value:?}"));
            match key {
                "dilate" => cfg.dilate = value.parse().map_err(bad)?,
                "erode" => cfg.erode = value.parse().map_err(bad)?,
                "fp" => cfg.false_positives = value.parse().map_err(bad)?,
                "fp-radius" => cfg.fp_radius = value.parse().map_err(bad)?,
                "seed" => cfg.seed = value.parse().map_err(bad)?,
                _ => return Err(Error::validation(format!("unknown noise option {key:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// [`MockOracle`] with morphological noise and false-positive blobs.
///
/// Deterministic: the blob positions depend only on the seed and the request
/// geometry (origin, size and points), not on the request id.
#[derive(Clone, Debug)]
pub struct NoisyMock {
    oracle: MockOracle,
    noise: NoiseConfig,
}

impl NoisyMock {
    pub fn new(oracle: MockOracle, noise: NoiseConfig) -> Self {
        NoisyMock { oracle, noise }
    }

    fn request_seed(&self, req: &PredictRequest) -> u64 {
        let mut h = splitmix64(self.noise.seed);
        let words = [req.origin.x, req.origin.y, req.width, req.height]
            .into_iter()
            .chain(req.points.iter().flat_map(|p| [p.x, p.y]));
        for w in words {
            h = splitmix64(h ^ w as u64);
        }
        h
    }
}

impl PredictorBackend for NoisyMock {
    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        req.validate()?;
        let mut mask = self.oracle.oracle_mask(req);
        if self.noise.erode > 0 {
            mask = erode(&mask, self.noise.erode);
        }
        if self.noise.dilate > 0 {
            mask = dilate(&mask, self.noise.dilate);
        }
        if self.noise.false_positives > 0 {
            let mut rng = XorShift64Star::new(self.request_seed(req));
            let mut blobs = BinaryMask::empty(req.width, req.height);
            for _ in 0..self.noise.false_positives {
                let c = Point::new(rng.range_u32(0, req.width - 1), rng.range_u32(0, req.height - 1));
                blobs.set(c.x, c.y, true);
            }
            mask.union_with(&dilate(&blobs, self.noise.fp_radius))?;
        }
        let score = if mask.is_empty() { 0.0 } else { 0.5 };
        Ok(PredictResponse {
            id: req.id,
            mask,
            score,
        })
    }
}

/// Half-widths of the disk of radius `r`, one per row offset `-r..=r`.
fn disk_rows(r: u32) -> Vec<(i64, i64)> {
    let r = r as i64;
    (-r..=r)
        .map(|dy| {
            let mut hw = 0;
            while (hw + 1) * (hw + 1) + dy * dy <= r * r {
                hw += 1;
            }
            (dy, hw)
        })
        .collect()
}

/// Prefix counts of set pixels for each row, `w + 1` entries per row.
fn row_prefix(mask: &BinaryMask) -> Vec<u32> {
    let w = mask.width() as usize;
    let mut out = Vec::with_capacity((w + 1) * mask.height() as usize);
    for row in mask.data().chunks(w.max(1)) {
        let mut acc = 0;
        out.push(0);
        for &v in row {
            acc += v as u32;
            out.push(acc);
        }
    }
    out
}

fn morph(mask: &BinaryMask, r: u32, erosion: bool) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let prefix = row_prefix(mask);
    let rows = disk_rows(r);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let mut hit = false;
        let mut all = true;
        for &(dy, hw) in &rows {
            let yy = y + dy;
            if yy < 0 || yy >= h {
                continue;
            }
            let lo = (x - hw).max(0) as usize;
            let hi = (x + hw + 1).min(w) as usize;
            let base = yy as usize * (w as usize + 1);
            let n = prefix[base + hi] - prefix[base + lo];
            hit |= n > 0;
            all &= n as usize == hi - lo;
        }
        if erosion {
            all
        } else {
            hit
        }
    })
}

/// Dilation by a disk of radius `r`.
pub fn dilate(mask: &BinaryMask, r: u32) -> BinaryMask {
    morph(mask, r, false)
}

/// Erosion by a disk of radius `r`; pixels beyond the mask edge are ignored.
pub fn erode(mask: &BinaryMask, r: u32) -> BinaryMask {
    morph(mask, r, true)
}
