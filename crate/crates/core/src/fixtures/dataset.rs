//! Point-prompt training records cut from labeled slides.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::rng::XorShift64Star;
use crate::error::{Error, Result};
use crate::geometry::centroid;
use crate::raster::{connected_components, Class, Component, Connectivity, LabelMask, Point};
use crate::tiling::{centered_window, dataset_patches, PatchWindow};

/// Tiles whose background share reaches this fraction are skipped.
pub const MAX_BACKGROUND_FRACTION: f64 = 0.97;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "stage")]
pub enum Stage {
    /// Non-overlapping tiles; one uniform random point per component inside
    /// each tile, the target being that component only.
    RandomPoint,
    /// Windows centered on each prompt: the centroid of every slide
    /// component whose centroid falls inside it, plus `random_points`
    /// uniform random points per component.
    Centered { random_points: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordPoint {
    Random,
    Centroid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub window: PatchWindow,
    /// Prompt in slide coordinates.
    pub point: Point,
    pub kind: RecordPoint,
    /// Target component id; numbered within the tile for the random-point
    /// stage and within the slide for the centered stage.
    pub component: u32,
    /// Target pixels inside the window.
    pub target_area: u64,
}

/// Uniform pixel of a component by index into its spans.
fn pixel_at(comp: &Component, mut k: u64) -> Point {
    for s in comp.spans() {
        let n = s.len() as u64;
        if k < n {
            return Point::new(s.x_start + k as u32, s.y);
        }
        k -= n;
    }
    unreachable!("index within component area")
}

fn random_pixel(comp: &Component, rng: &mut XorShift64Star) -> Point {
    pixel_at(comp, rng.below(comp.area()))
}

fn area_in(comp: &Component, w: &PatchWindow) -> u64 {
    comp.spans()
        .iter()
        .filter(|s| s.y >= w.y0 && s.y < w.y0 + w.side)
        .map(|s| {
            let lo = s.x_start.max(w.x0);
            let hi = s.x_end.min(w.x0 + w.side);
            hi.saturating_sub(lo) as u64
        })
        .sum()
}

/// Builds prompt records over the melanoma plane with 8-connectivity.
pub fn prompt_dataset(mask: &LabelMask, side: u32, stage: Stage, seed: u64) -> Result<Vec<PromptRecord>> {
    let mut rng = XorShift64Star::new(seed);
    let mut out = Vec::new();
    match stage {
        Stage::RandomPoint => {
            for tile in dataset_patches(mask, side, MAX_BACKGROUND_FRACTION)? {
                let crop = mask.crop(tile.x0, tile.y0, side, side)?;
                let set = connected_components(&crop.class_plane(Class::Melanoma), Connectivity::Eight);
                for comp in set.iter() {
                    let local = random_pixel(comp, &mut rng);
                    out.push(PromptRecord {
                        window: PatchWindow {
                            prompt_local: local,
                            ..tile
                        },
                        point: Point::new(tile.x0 + local.x, tile.y0 + local.y),
                        kind: RecordPoint::Random,
                        component: comp.id(),
                        target_area: comp.area(),
                    });
                }
            }
        }
        Stage::Centered { random_points } => {
            let (w, h) = mask.dims();
            let set = connected_components(&mask.class_plane(Class::Melanoma), Connectivity::Eight);
            for comp in set.iter() {
                let c = centroid(comp)?;
                let mut points = Vec::new();
                if c.inside {
                    points.push((c.rounded(), RecordPoint::Centroid));
                }
                for _ in 0..random_points {
                    points.push((random_pixel(comp, &mut rng), RecordPoint::Random));
                }
                for (point, kind) in points {
                    let window = centered_window(point, side, w, h)?;
                    out.push(PromptRecord {
                        window,
                        point,
                        kind,
                        component: comp.id(),
                        target_area: area_in(comp, &window),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[PromptRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Internal(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::format(format!("record line: {e}")))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{preset, synth_slide, Preset};

    #[test]
    fn single_pixel_component_gets_that_pixel() {
        let mut m = LabelMask::filled(8, 8, Class::Epidermis);
        m.set(5, 2, Class::Melanoma);
        for seed in 0..5 {
            let recs = prompt_dataset(&m, 8, Stage::RandomPoint, seed).unwrap();
            assert_eq!(recs.len(), 1);
            assert_eq!(recs[0].point, Point::new(5, 2));
            assert_eq!(recs[0].target_area, 1);
        }
    }

    #[test]
    fn background_tiles_are_skipped() {
        let mut m = LabelMask::filled(64, 32, Class::Other);
        m.set(40, 10, Class::Melanoma);
        // left tile all background, right tile 1/1024 foreground
        assert!(prompt_dataset(&m, 32, Stage::RandomPoint, 1).unwrap().is_empty());
        for y in 0..32 {
            m.set(33, y, Class::Epidermis);
            m.set(34, y, Class::Epidermis);
        }
        let recs = prompt_dataset(&m, 32, Stage::RandomPoint, 1).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].window.x0, 32);
    }

    #[test]
    fn points_lie_in_their_components() {
        let spec = preset(Preset::Blobs, 4, 512, 512).unwrap();
        let gt = synth_slide(&spec).unwrap().ground_truth;
        for stage in [Stage::RandomPoint, Stage::Centered { random_points: 3 }] {
            let recs = prompt_dataset(&gt, 128, stage, 9).unwrap();
            assert!(!recs.is_empty());
            for r in &recs {
                assert_eq!(gt.get(r.point.x, r.point.y), Class::Melanoma);
                assert!(r.window.contains(r.point));
                assert_eq!(r.window.to_local(r.point), Some(r.window.prompt_local));
                assert!(r.target_area >= 1);
            }
        }
    }

    #[test]
    fn centered_record_count() {
        let spec = preset(Preset::Blobs, 8, 512, 512).unwrap();
        let gt = synth_slide(&spec).unwrap().ground_truth;
        let set = connected_components(&gt.class_plane(Class::Melanoma), Connectivity::Eight);
        // count inside-centroids by direct pixel lookup
        let inside = set
            .iter()
            .filter(|c| {
                let n = c.area() as f64;
                let cx = c.pixels().map(|p| p.x as f64).sum::<f64>() / n;
                let cy = c.pixels().map(|p| p.y as f64).sum::<f64>() / n;
                c.contains(Point::new((cx + 0.5).floor() as u32, (cy + 0.5).floor() as u32))
            })
            .count();
        let k = 2;
        let recs = prompt_dataset(&gt, 128, Stage::Centered { random_points: k }, 1).unwrap();
        assert_eq!(recs.len(), inside + k as usize * set.count());
    }

    #[test]
    fn records_round_trip() {
        let spec = preset(Preset::Streaks, 2, 800, 800).unwrap();
        let gt = synth_slide(&spec).unwrap().ground_truth;
        let recs = prompt_dataset(&gt, 256, Stage::Centered { random_points: 1 }, 5).unwrap();
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
    }
}
