//! Point-prompt planning.
//!
//! Each component is prompted either with its centroid or with a grid of
//! points. A component goes to the grid when its axis-aligned box does not
//! fit a patch, or when its minimum-area box is elongated beyond `alpha_b`.
//! Grid-prompted components also get their centroid when it falls inside.
//! If any grid-class component covers more than a quarter of a patch, the
//! whole slide switches to grid prompts.
//!
//! Grid points sit on a lattice anchored at the slide origin with spacing
//! `grid_gap`. A component that misses every lattice site is prompted at its
//! pixel nearest to the centroid so that no component goes unprompted.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_dims, centroid, BoxDims, Centroid};
use crate::raster::{connected_components, BinaryMask, Component, Connectivity, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Side of the square patch fed to the predictor.
    pub patch_side: u32,
    /// Long/short side ratio of the minimum-area box above which a component
    /// is grid-prompted.
    pub alpha_b: f64,
    /// Lattice spacing of grid prompts.
    pub grid_gap: u32,
    /// Fraction of the patch area a grid-class component must exceed to
    /// switch the whole slide to grid prompts.
    pub escalation_fraction: f64,
    pub connectivity: Connectivity,
    /// Emit the rounded centroid in centroid mode even when it lies outside
    /// the component, as the bare algorithm does. Off by default, in which
    /// case the nearest component pixel is used instead.
    pub strict_centroid: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            patch_side: 512,
            alpha_b: 3.0,
            grid_gap: 64,
            escalation_fraction: 0.25,
            connectivity: Connectivity::Eight,
            strict_centroid: false,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 {
            return Err(Error::validation("patch side must be positive"));
        }
        if self.alpha_b.is_nan() || self.alpha_b < 1.0 {
            return Err(Error::validation(format!(
                "alpha_b must be at least 1, got {}",
                self.alpha_b
            )));
        }
        if self.grid_gap == 0 || self.grid_gap > self.patch_side {
            return Err(Error::validation(format!(
                "grid gap must be in 1..={}, got {}",
                self.patch_side, self.grid_gap
            )));
        }
        if self.escalation_fraction.is_nan() || self.escalation_fraction <= 0.0 {
            return Err(Error::validation("escalation fraction must be positive"));
        }
        Ok(())
    }

    fn escalation_area(&self) -> f64 {
        self.escalation_fraction * self.patch_side as f64 * self.patch_side as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "centroid")]
    Centroid,
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "grid+centroid")]
    GridCentroid,
}

impl PromptMode {
    pub fn is_grid(self) -> bool {
        !matches!(self, PromptMode::Centroid)
    }
}

/// How a prompt point was derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSource {
    /// Rounded centroid.
    Centroid,
    /// Lattice site inside the component.
    Grid,
    /// Component pixel nearest to the centroid, used when the lattice misses
    /// the component or the centroid falls outside it.
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PromptPoint {
    pub point: Point,
    pub source: PointSource,
}

/// Geometry and mode decided for one component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dispatch {
    pub mode: PromptMode,
    /// The box tests alone call for grid prompts.
    pub grid_class: bool,
    pub dims: BoxDims,
    pub centroid: Centroid,
}

fn grid_mode(c: &Centroid) -> PromptMode {
    if c.inside {
        PromptMode::GridCentroid
    } else {
        PromptMode::Grid
    }
}

pub fn dispatch(comp: &Component, cfg: &PromptConfig) -> Result<Dispatch> {
    let dims = box_dims(comp)?;
    let center = centroid(comp)?;
    let s = cfg.patch_side;
    let grid_class = dims.w_s > s || dims.h_s > s || dims.aspect_ratio() > cfg.alpha_b;
    let mode = if grid_class {
        grid_mode(&center)
    } else {
        PromptMode::Centroid
    };
    Ok(Dispatch {
        mode,
        grid_class,
        dims,
        centroid: center,
    })
}

pub fn decide_mode(comp: &Component, cfg: &PromptConfig) -> Result<PromptMode> {
    Ok(dispatch(comp, cfg)?.mode)
}

/// Component pixel closest to `(x, y)`; ties go to the first in raster order.
pub fn nearest_pixel(comp: &Component, x: f64, y: f64) -> Option<Point> {
    let mut best: Option<(f64, Point)> = None;
    for p in comp.pixels() {
        let d = (p.x as f64 - x).powi(2) + (p.y as f64 - y).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p));
        }
    }
    best.map(|(_, p)| p)
}

/// Component pixel nearest to the centroid, compared in exact integer
/// arithmetic so that ties always go to the first pixel in raster order.
pub fn nearest_to_centroid(comp: &Component) -> Option<Point> {
    let n = comp.area() as i128;
    let (sx, sy) = comp
        .pixels()
        .fold((0i128, 0i128), |(a, b), p| (a + p.x as i128, b + p.y as i128));
    let mut best: Option<(i128, Point)> = None;
    for p in comp.pixels() {
        let dx = n * p.x as i128 - sx;
        let dy = n * p.y as i128 - sy;
        let d = dx * dx + dy * dy;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p));
        }
    }
    best.map(|(_, p)| p)
}

/// Lattice sites `(i * gap, j * gap)` covered by the component, in raster
/// order, or the pixel nearest the centroid when none is covered.
pub fn grid_points(comp: &Component, cfg: &PromptConfig) -> Result<Vec<PromptPoint>> {
    let gap = cfg.grid_gap;
    let mut out = Vec::new();
    for s in comp.spans().iter().filter(|s| s.y % gap == 0) {
        let first = s.x_start.div_ceil(gap) * gap;
        for x in (first..s.x_end).step_by(gap as usize) {
            out.push(PromptPoint {
                point: Point::new(x, s.y),
                source: PointSource::Grid,
            });
        }
    }
    if out.is_empty() {
        let p = nearest_to_centroid(comp).ok_or_else(|| Error::validation("grid points of an empty component"))?;
        out.push(PromptPoint {
            point: p,
            source: PointSource::Nearest,
        });
    }
    Ok(out)
}

/// Prompts for one component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentPrompts {
    pub id: u32,
    pub area: u64,
    pub mode: PromptMode,
    pub grid_class: bool,
    pub dims: BoxDims,
    pub centroid: Centroid,
    pub points: Vec<PromptPoint>,
    /// Centroid mode was chosen but the centroid lies outside the component.
    pub centroid_outside: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptPlan {
    pub width: u32,
    pub height: u32,
    pub components: Vec<ComponentPrompts>,
    pub slide_escalated: bool,
}

/// One serialized plan line: a single prompt point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub component: u32,
    pub mode: PromptMode,
    pub x: u32,
    pub y: u32,
    pub source: PointSource,
    pub escalated: bool,
}

impl PromptPlan {
    pub fn point_count(&self) -> usize {
        self.components.iter().map(|c| c.points.len()).sum()
    }

    /// Every prompt point with its component, in plan order.
    pub fn lines(&self) -> Vec<PlanLine> {
        self.components
            .iter()
            .flat_map(|c| {
                c.points.iter().map(move |p| PlanLine {
                    component: c.id,
                    mode: c.mode,
                    x: p.point.x,
                    y: p.point.y,
                    source: p.source,
                    escalated: self.slide_escalated,
                })
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut out, &line).map_err(|e| Error::Internal(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn read_plan_lines<R: BufRead>(input: R) -> Result<Vec<PlanLine>> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|e| Error::format(format!("plan line: {e}")))?);
    }
    Ok(lines)
}

fn points_for(
    comp: &Component,
    d: &Dispatch,
    mode: PromptMode,
    cfg: &PromptConfig,
) -> Result<(Vec<PromptPoint>, bool)> {
    let c = d.centroid;
    if mode.is_grid() {
        let mut pts = grid_points(comp, cfg)?;
        if c.inside {
            let center = c.rounded();
            if !pts.iter().any(|p| p.point == center) {
                pts.push(PromptPoint {
                    point: center,
                    source: PointSource::Centroid,
                });
            }
        }
        return Ok((pts, false));
    }
    let point = if c.inside || cfg.strict_centroid {
        PromptPoint {
            point: c.rounded(),
            source: PointSource::Centroid,
        }
    } else {
        PromptPoint {
            point: nearest_to_centroid(comp).expect("component is nonempty"),
            source: PointSource::Nearest,
        }
    };
    Ok((vec![point], !c.inside))
}

/// Plans prompts for every connected component of `mask`.
pub fn plan_prompts(mask: &BinaryMask, cfg: &PromptConfig) -> Result<PromptPlan> {
    cfg.validate()?;
    let set = connected_components(mask, cfg.connectivity);
    let dispatches = set.iter().map(|c| dispatch(c, cfg)).collect::<Result<Vec<_>>>()?;

    let threshold = cfg.escalation_area();
    let slide_escalated = set
        .iter()
        .zip(&dispatches)
        .any(|(c, d)| d.grid_class && c.area() as f64 > threshold);

    let mut components = Vec::with_capacity(set.count());
    for (comp, d) in set.iter().zip(&dispatches) {
        let mode = if slide_escalated {
            grid_mode(&d.centroid)
        } else {
            d.mode
        };
        let (points, centroid_outside) = points_for(comp, d, mode, cfg)?;
        components.push(ComponentPrompts {
            id: comp.id(),
            area: comp.area(),
            mode,
            grid_class: d.grid_class,
            dims: d.dims,
            centroid: d.centroid,
            points,
            centroid_outside,
        });
    }
    Ok(PromptPlan {
        width: mask.width(),
        height: mask.height(),
        components,
        slide_escalated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: u32, y0: u32, w: u32, h: u32) -> Component {
        Component::from_pixels(
            1,
            (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| Point::new(x, y))),
        )
    }

    fn paint(mask: &mut BinaryMask, c: &Component) {
        for p in c.pixels() {
            mask.set(p.x, p.y, true);
        }
    }

    #[test]
    fn wide_component_is_grid_class() {
        let d = dispatch(&rect(0, 0, 600, 100), &PromptConfig::default()).unwrap();
        assert!(d.grid_class);
        assert_eq!(d.mode, PromptMode::GridCentroid);
    }

    #[test]
    fn square_gets_centroid() {
        let mode = decide_mode(&rect(50, 50, 100, 100), &PromptConfig::default()).unwrap();
        assert_eq!(mode, PromptMode::Centroid);
    }

    #[test]
    fn bar_is_grid_class_by_aspect() {
        let d = dispatch(&rect(10, 10, 300, 20), &PromptConfig::default()).unwrap();
        // corner hull of an axis-aligned bar is the bar itself
        assert_eq!((d.dims.w_m, d.dims.h_m), (20.0, 300.0));
        assert_eq!(d.mode, PromptMode::GridCentroid);
    }

    #[test]
    fn grid_points_of_square_at_origin() {
        let pts = grid_points(&rect(0, 0, 128, 128), &PromptConfig::default()).unwrap();
        let got: Vec<Point> = pts.iter().map(|p| p.point).collect();
        assert_eq!(
            got,
            vec![
                Point::new(0, 0),
                Point::new(64, 0),
                Point::new(0, 64),
                Point::new(64, 64)
            ]
        );
    }

    #[test]
    fn grid_fallback_for_component_between_sites() {
        let comp = rect(70, 70, 10, 10);
        let pts = grid_points(&comp, &PromptConfig::default()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].source, PointSource::Nearest);
        assert!(comp.contains(pts[0].point));
    }

    #[test]
    fn nearest_pixel_tie_break_is_raster_order() {
        let comp = Component::from_pixels(1, [Point::new(0, 1), Point::new(2, 1)]);
        assert_eq!(nearest_pixel(&comp, 1.0, 1.0), Some(Point::new(0, 1)));
    }

    #[test]
    fn nearest_to_centroid_ties_survive_translation() {
        // centroid (10/3, 4/3) is equidistant from (3, 0) and (2, 1) after any shift
        let pts = [(0, 0), (3, 0), (2, 1), (5, 1), (2, 2), (8, 4)];
        let base = Component::from_pixels(1, pts.iter().map(|&(x, y)| Point::new(x, y)));
        let first = nearest_to_centroid(&base).unwrap();
        for (dx, dy) in [(8, 0), (24, 16), (1000, 3), (4096, 4096)] {
            let moved = base.translated(dx, dy);
            assert_eq!(
                nearest_to_centroid(&moved),
                Some(Point::new(first.x + dx, first.y + dy))
            );
        }
    }

    #[test]
    fn single_blob_no_escalation() {
        let mut m = BinaryMask::empty(300, 300);
        paint(&mut m, &rect(100, 100, 50, 50));
        let plan = plan_prompts(&m, &PromptConfig::default()).unwrap();
        assert!(!plan.slide_escalated);
        assert_eq!(plan.components.len(), 1);
        assert_eq!(plan.components[0].mode, PromptMode::Centroid);
        assert_eq!(plan.point_count(), 1);
    }

    #[test]
    fn large_grid_class_component_escalates_slide() {
        // 600x300 is grid-class (w_s > 512) with area 180000 > 65536
        let mut m = BinaryMask::empty(1000, 800);
        paint(&mut m, &rect(0, 0, 600, 300));
        paint(&mut m, &rect(800, 600, 20, 20));
        let plan = plan_prompts(&m, &PromptConfig::default()).unwrap();
        assert!(plan.slide_escalated);
        assert!(plan.components.iter().all(|c| c.mode.is_grid()));
    }

    #[test]
    fn large_compact_component_does_not_escalate() {
        let mut m = BinaryMask::empty(700, 700);
        paint(&mut m, &rect(10, 10, 300, 300));
        paint(&mut m, &rect(500, 500, 20, 20));
        let plan = plan_prompts(&m, &PromptConfig::default()).unwrap();
        assert!(!plan.slide_escalated);
        assert!(plan.components.iter().all(|c| c.mode == PromptMode::Centroid));
    }

    #[test]
    fn outside_centroid_substitutes_nearest_pixel() {
        // C shape: centroid falls in the opening
        let comp = Component::from_pixels(
            1,
            (0..30u32)
                .flat_map(|y| (0..30u32).map(move |x| Point::new(x, y)))
                .filter(|p| p.x < 5 || p.y < 5 || p.y >= 25),
        );
        let mut m = BinaryMask::empty(40, 40);
        paint(&mut m, &comp);
        let plan = plan_prompts(&m, &PromptConfig::default()).unwrap();
        let c = &plan.components[0];
        assert_eq!(c.mode, PromptMode::Centroid);
        assert!(c.centroid_outside);
        assert_eq!(c.points[0].source, PointSource::Nearest);
        assert!(m.get(c.points[0].point.x, c.points[0].point.y));

        let strict = PromptConfig {
            strict_centroid: true,
            ..Default::default()
        };
        let plan = plan_prompts(&m, &strict).unwrap();
        let p = plan.components[0].points[0];
        assert_eq!(p.source, PointSource::Centroid);
        assert!(!m.get(p.point.x, p.point.y));
    }

    #[test]
    fn grid_centroid_not_duplicated() {
        // centroid of a 129x1 bar at the origin is (64, 0), a lattice site
        let pts = {
            let mut m = BinaryMask::empty(200, 10);
            paint(&mut m, &rect(0, 0, 129, 1));
            plan_prompts(&m, &PromptConfig::default()).unwrap().components[0]
                .points
                .clone()
        };
        assert_eq!(pts.len(), 3);
    }

    #[test]
    fn plan_lines_round_trip() {
        let mut m = BinaryMask::empty(700, 200);
        paint(&mut m, &rect(0, 0, 600, 20));
        paint(&mut m, &rect(650, 100, 10, 10));
        let plan = plan_prompts(&m, &PromptConfig::default()).unwrap();
        let mut buf = Vec::new();
        plan.write_jsonl(&mut buf).unwrap();
        assert_eq!(read_plan_lines(&buf[..]).unwrap(), plan.lines());
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"component":1,"mode":"grid+centroid","x":0,"y":0,"source":"grid","escalated":false}"#
        );
    }

    #[test]
    fn config_validation() {
        let cfg = PromptConfig {
            grid_gap: 1024,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PromptConfig {
            alpha_b: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
