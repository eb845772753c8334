//! Patch geometry: prompt-centered windows, sliding-window tiling and
//! Gaussian-weighted stitching of overlapping patch predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Class, LabelMask, Point, ProbabilityMap};

/// Square window fully inside the slide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchWindow {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    /// Offset of the prompt inside the window; `(0, 0)` for windows without one.
    pub prompt_local: Point,
}

impl PatchWindow {
    pub fn new(x0: u32, y0: u32, side: u32) -> Self {
        PatchWindow {
            x0,
            y0,
            side,
            prompt_local: Point::new(0, 0),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.y >= self.y0 && p.x - self.x0 < self.side && p.y - self.y0 < self.side
    }

    /// Slide-to-window coordinates.
    pub fn to_local(&self, p: Point) -> Option<Point> {
        self.contains(p).then(|| Point::new(p.x - self.x0, p.y - self.y0))
    }
}

/// Window of `side` centered on `point`, shifted back inside the slide when it
/// would cross an edge.
pub fn centered_window(point: Point, side: u32, slide_w: u32, slide_h: u32) -> Result<PatchWindow> {
    if side == 0 {
        return Err(Error::validation("patch side must be positive"));
    }
    if side > slide_w || side > slide_h {
        return Err(Error::validation(format!(
            "patch side {side} exceeds the {slide_w}x{slide_h} slide; pad the slide first"
        )));
    }
    if point.x >= slide_w || point.y >= slide_h {
        return Err(Error::validation(format!(
            "prompt ({}, {}) lies outside the {slide_w}x{slide_h} slide",
            point.x, point.y
        )));
    }
    let half = side / 2;
    let x0 = point.x.saturating_sub(half).min(slide_w - side);
    let y0 = point.y.saturating_sub(half).min(slide_h - side);
    Ok(PatchWindow {
        x0,
        y0,
        side,
        prompt_local: Point::new(point.x - x0, point.y - y0),
    })
}

/// Unnormalized isotropic Gaussian with peak 1 and `sigma = side / 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    side: u32,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(side: u32) -> Result<Self> {
        if side == 0 {
            return Err(Error::validation("kernel side must be positive"));
        }
        let sigma = side as f64 / 4.0;
        let center = (side as f64 - 1.0) / 2.0;
        // separable: w(x, y) = g(x) g(y)
        let g: Vec<f64> = (0..side)
            .map(|i| {
                let d = i as f64 - center;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let mut weights = Vec::with_capacity(side as usize * side as usize);
        for gy in &g {
            for gx in &g {
                weights.push(gx * gy);
            }
        }
        Ok(GaussianKernel { side, weights })
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn weight(&self, x: u32, y: u32) -> f64 {
        self.weights[y as usize * self.side as usize + x as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn gaussian_kernel(side: u32) -> Result<GaussianKernel> {
    GaussianKernel::new(side)
}

/// Window origins along one axis: multiples of `stride`, plus a last window
/// flush with the far edge.
pub fn axis_origins(len: u32, side: u32, stride: u32) -> Vec<u32> {
    if side >= len {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut o = 0;
    while o + side < len {
        out.push(o);
        o += stride;
    }
    out.push(len - side);
    out
}

/// Sliding windows covering every pixel of the slide. A slide smaller than
/// `side` along an axis gets a single window at origin 0 that overhangs it.
pub fn sliding_windows(slide_w: u32, slide_h: u32, side: u32, stride: u32) -> Result<Vec<PatchWindow>> {
    if side == 0 || stride == 0 {
        return Err(Error::validation("side and stride must be positive"));
    }
    let xs = axis_origins(slide_w, side, stride);
    let ys = axis_origins(slide_h, side, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| PatchWindow::new(x, y, side)))
        .collect())
}

/// Running weighted sums for Gaussian-weighted stitching. Sums are `f64`;
/// the finished map is `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct StitchAccumulator {
    width: u32,
    height: u32,
    weighted: Vec<f64>,
    weight: Vec<f64>,
}

impl StitchAccumulator {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        StitchAccumulator {
            width,
            height,
            weighted: vec![0.0; n],
            weight: vec![0.0; n],
        }
    }

    pub fn weight_sums(&self) -> &[f64] {
        &self.weight
    }

    /// Adds one patch of probabilities. Parts of the window beyond the slide
    /// are ignored.
    pub fn add(&mut self, window: &PatchWindow, probs: &[f32], kernel: &GaussianKernel) -> Result<()> {
        let side = window.side;
        if kernel.side() != side || probs.len() != side as usize * side as usize {
            return Err(Error::validation(format!(
                "patch of {} values and kernel of side {} do not match window side {side}",
                probs.len(),
                kernel.side()
            )));
        }
        if window.x0 >= self.width || window.y0 >= self.height {
            return Err(Error::validation("window origin outside the slide"));
        }
        let w_end = (window.x0 + side).min(self.width);
        let h_end = (window.y0 + side).min(self.height);
        for y in window.y0..h_end {
            let ly = y - window.y0;
            let row = y as usize * self.width as usize;
            for x in window.x0..w_end {
                let lx = x - window.x0;
                let li = ly as usize * side as usize + lx as usize;
                let w = kernel.weights()[li];
                self.weighted[row + x as usize] += w * probs[li] as f64;
                self.weight[row + x as usize] += w;
            }
        }
        Ok(())
    }

    /// Folds in a partial accumulator built over the same slide.
    pub fn merge(&mut self, other: &StitchAccumulator) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::validation("accumulators cover different slides"));
        }
        for (a, b) in self.weighted.iter_mut().zip(&other.weighted) {
            *a += b;
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        Ok(())
    }

    /// Per-pixel weighted mean. Fails if any pixel was never covered.
    pub fn finalize(&self) -> Result<ProbabilityMap> {
        let mut out = Vec::with_capacity(self.weight.len());
        for (i, (&num, &den)) in self.weighted.iter().zip(&self.weight).enumerate() {
            if den <= 0.0 {
                return Err(Error::Internal(format!(
                    "pixel ({}, {}) has no window coverage",
                    i % self.width as usize,
                    i / self.width as usize
                )));
            }
            out.push(((num / den) as f32).clamp(0.0, 1.0));
        }
        ProbabilityMap::new(self.width, self.height, out)
    }
}

/// Runs `predict` on every sliding window and stitches the results.
pub fn stitch_sliding<F>(slide_w: u32, slide_h: u32, side: u32, stride: u32, mut predict: F) -> Result<ProbabilityMap>
where
    F: FnMut(&PatchWindow) -> Result<Vec<f32>>,
{
    let kernel = GaussianKernel::new(side)?;
    let mut acc = StitchAccumulator::new(slide_w, slide_h);
    for window in sliding_windows(slide_w, slide_h, side, stride)? {
        let probs = predict(&window)?;
        acc.add(&window, &probs, &kernel)?;
    }
    acc.finalize()
}

/// Non-overlapping full tiles whose share of [`Class::Other`] pixels is below
/// `background_fraction_max`. Partial tiles at the right and bottom edges are
/// not emitted.
pub fn dataset_patches(mask: &LabelMask, side: u32, background_fraction_max: f64) -> Result<Vec<PatchWindow>> {
    if side == 0 {
        return Err(Error::validation("patch side must be positive"));
    }
    let (w, h) = mask.dims();
    let total = side as f64 * side as f64;
    let mut out = Vec::new();
    for ty in 0..h / side {
        for tx in 0..w / side {
            let (x0, y0) = (tx * side, ty * side);
            let mut background = 0u64;
            for y in y0..y0 + side {
                let row = &mask.data()[(y * w + x0) as usize..(y * w + x0 + side) as usize];
                background += row.iter().filter(|&&v| v == Class::Other.index()).count() as u64;
            }
            if (background as f64 / total) < background_fraction_max {
                out.push(PatchWindow::new(x0, y0, side));
            }
        }
    }
    Ok(out)
}
