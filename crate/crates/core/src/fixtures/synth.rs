//! Synthetic slides: ground truth, a simulated initial segmentation and a
//! melanoma probability map, generated from a seeded recipe list.
//!
//! Shapes are rasterized with integer arithmetic only, so outputs are
//! byte-identical on every platform.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rng::XorShift64Star;
use crate::error::{Error, Result};
use crate::raster::{Class, LabelMask, ProbabilityMap};

/// Disk of radius `r` offset from the recipe center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lobe {
    pub dx: i32,
    pub dy: i32,
    pub r: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Union of disks.
    Blob { lobes: Vec<Lobe> },
    /// Rectangle of `length` along the direction `(dx, dy)` and `thickness`
    /// across it.
    Bar {
        length: u32,
        thickness: u32,
        dx: i32,
        dy: i32,
    },
    /// Annulus with `inner < d <= outer`.
    Ring { outer: u32, inner: u32 },
}

impl Shape {
    pub fn disk(r: u32) -> Self {
        Shape::Blob {
            lobes: vec![Lobe { dx: 0, dy: 0, r }],
        }
    }

    /// Half-extent of a box around the center that holds every pixel.
    fn reach(&self) -> i64 {
        match self {
            Shape::Blob { lobes } => lobes
                .iter()
                .map(|l| (l.dx.unsigned_abs().max(l.dy.unsigned_abs()) + l.r) as i64)
                .max()
                .unwrap_or(0),
            Shape::Bar { length, thickness, .. } => (*length as i64 + *thickness as i64) / 2 + 1,
            Shape::Ring { outer, .. } => *outer as i64,
        }
    }

    /// Membership of the pixel at offset `(px, py)` from the center.
    pub fn contains(&self, px: i64, py: i64) -> bool {
        match self {
            Shape::Blob { lobes } => lobes.iter().any(|l| {
                let (x, y) = (px - l.dx as i64, py - l.dy as i64);
                x * x + y * y <= l.r as i64 * l.r as i64
            }),
            Shape::Bar {
                length,
                thickness,
                dx,
                dy,
            } => {
                let (a, b) = (*dx as i64, *dy as i64);
                let norm2 = a * a + b * b;
                let along = px * a + py * b;
                let across = px * b - py * a;
                4 * along * along <= (*length as i64).pow(2) * norm2
                    && 4 * across * across <= (*thickness as i64).pow(2) * norm2
            }
            Shape::Ring { outer, inner } => {
                let d2 = px * px + py * py;
                d2 > (*inner as i64).pow(2) && d2 <= (*outer as i64).pow(2)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Blob { lobes } => !lobes.is_empty(),
            Shape::Bar {
                length,
                thickness,
                dx,
                dy,
            } => *length > 0 && *thickness > 0 && (*dx, *dy) != (0, 0),
            Shape::Ring { outer, inner } => outer > inner,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("degenerate shape {self:?}")))
        }
    }
}

/// One painted component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub shape: Shape,
    pub x: u32,
    pub y: u32,
    /// Class painted into the ground truth.
    pub class: Class,
    /// Class painted into the simulated initial mask. A recipe with
    /// `class = Epidermis` and `initial = Melanoma` is an in-situ confuser.
    pub initial: Class,
    /// Fraction of the recipe's initial-melanoma pixels with probability
    /// above 0.8.
    pub high: f64,
}

impl Recipe {
    pub fn melanoma(shape: Shape, x: u32, y: u32, high: f64) -> Self {
        Recipe {
            shape,
            x,
            y,
            class: Class::Melanoma,
            initial: Class::Melanoma,
            high,
        }
    }

    pub fn is_confuser(&self) -> bool {
        self.initial == Class::Melanoma && self.class != Class::Melanoma
    }

    /// Pixels of the recipe in raster order. Errors when any falls outside a
    /// `width` x `height` slide.
    pub fn pixels(&self, width: u32, height: u32) -> Result<Vec<(u32, u32)>> {
        self.shape.validate()?;
        let r = self.shape.reach();
        let (cx, cy) = (self.x as i64, self.y as i64);
        let mut out = Vec::new();
        for py in -r..=r {
            for px in -r..=r {
                if !self.shape.contains(px, py) {
                    continue;
                }
                let (x, y) = (cx + px, cy + py);
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    return Err(Error::validation(format!(
                        "recipe at ({}, {}) leaves the {width}x{height} slide",
                        self.x, self.y
                    )));
                }
                out.push((x as u32, y as u32));
            }
        }
        out.sort_unstable_by_key(|&(x, y)| (y, x));
        Ok(out)
    }
}

/// Full-width epidermis band of rows `y0 .. y0 + thickness`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub y0: u32,
    pub thickness: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub band: Option<Band>,
    /// Painted in order; later recipes overwrite earlier ones.
    pub recipes: Vec<Recipe>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSlide {
    pub ground_truth: LabelMask,
    pub initial: LabelMask,
    pub probmap: ProbabilityMap,
}

/// Probability ranges of the generated map.
pub const HIGH_RANGE: (f64, f64) = (0.81, 1.0);
pub const LOW_RANGE: (f64, f64) = (0.5, 0.79);
pub const BACKGROUND_RANGE: (f64, f64) = (0.0, 0.3);

/// Renders a spec. Melanoma pixels of the initial mask get exactly
/// `round(high * n)` values from [`HIGH_RANGE`] per recipe and the rest from
/// [`LOW_RANGE`]; every other pixel gets a value from [`BACKGROUND_RANGE`].
pub fn synth_slide(spec: &SynthSpec) -> Result<SynthSlide> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::validation("synthetic slide must not be empty"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut gt = LabelMask::filled(w, h, Class::Other);
    let mut initial = LabelMask::filled(w, h, Class::Other);
    if let Some(band) = spec.band {
        if band.thickness == 0 || band.y0 as u64 + band.thickness as u64 > h as u64 {
            return Err(Error::validation("epidermis band leaves the slide"));
        }
        for y in band.y0..band.y0 + band.thickness {
            for x in 0..w {
                gt.set(x, y, Class::Epidermis);
                initial.set(x, y, Class::Epidermis);
            }
        }
    }

    let mut owner = vec![usize::MAX; w as usize * h as usize];
    let mut painted = Vec::with_capacity(spec.recipes.len());
    for (i, r) in spec.recipes.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.high) {
            return Err(Error::validation(format!(
                "recipe {i}: high fraction {} outside [0, 1]",
                r.high
            )));
        }
        let px = r.pixels(w, h)?;
        for &(x, y) in &px {
            gt.set(x, y, r.class);
            initial.set(x, y, r.initial);
            owner[(y * w + x) as usize] = i;
        }
        painted.push(px);
    }

    let mut rng = XorShift64Star::new(spec.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut prob: Vec<f32> = vec![-1.0; owner.len()];
    for (i, (r, px)) in spec.recipes.iter().zip(&painted).enumerate() {
        let idx: Vec<usize> = px
            .iter()
            .map(|&(x, y)| (y * w + x) as usize)
            .filter(|&k| owner[k] == i && initial.data()[k] == Class::Melanoma.index())
            .collect();
        let n_high = (r.high * idx.len() as f64).round() as usize;
        let mut is_high = vec![false; idx.len()];
        for j in rng.sample_indices(idx.len(), n_high) {
            is_high[j] = true;
        }
        for (&k, &hi) in idx.iter().zip(&is_high) {
            let (lo, up) = if hi { HIGH_RANGE } else { LOW_RANGE };
            prob[k] = rng.range_f64(lo, up) as f32;
        }
    }
    for p in prob.iter_mut().filter(|p| **p < 0.0) {
        *p = rng.range_f64(BACKGROUND_RANGE.0, BACKGROUND_RANGE.1) as f32;
    }
    Ok(SynthSlide {
        ground_truth: gt,
        initial,
        probmap: ProbabilityMap::new(w, h, prob)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Long thin bars, 600 x 20 on slides of at least 700 pixels.
    Streaks,
    /// Irregular blobs of several sizes.
    Blobs,
    /// An epidermis band with low-confidence in-situ confusers touching it,
    /// invasive blobs away from it and sometimes one large invasive blob
    /// touching it.
    EpidermisAdjacent,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streaks" => Ok(Preset::Streaks),
            "blobs" => Ok(Preset::Blobs),
            "epidermis-adjacent" => Ok(Preset::EpidermisAdjacent),
            _ => Err(Error::validation(format!(
                "unknown preset {s:?}; expected streaks, blobs or epidermis-adjacent"
            ))),
        }
    }
}

/// Axis-aligned boxes already taken, used to keep recipes apart.
struct Placer {
    width: u32,
    height: u32,
    /// Rows kept free of ordinary recipes.
    reserved: Option<(i64, i64)>,
    taken: Vec<(i64, i64, i64, i64)>,
}

const GAP: i64 = 3;

impl Placer {
    fn fits(&self, x: i64, y: i64, reach: i64, respect_reserved: bool) -> bool {
        let (x0, y0, x1, y1) = (x - reach - GAP, y - reach - GAP, x + reach + GAP, y + reach + GAP);
        let clear_rows = match self.reserved {
            Some((r0, r1)) if respect_reserved => y1 < r0 || r1 < y0,
            _ => true,
        };
        clear_rows
            && self
                .taken
                .iter()
                .all(|&(a0, b0, a1, b1)| x1 < a0 || a1 < x0 || y1 < b0 || b1 < y0)
    }

    /// Draws centers with rows in `[ylo, yhi]` until the shape fits, at most
    /// 200 tries. A single-row range places across the reserved rows.
    fn place(&mut self, rng: &mut XorShift64Star, shape: &Shape, ylo: i64, yhi: i64) -> Option<(u32, u32)> {
        let reach = shape.reach();
        let (xlo, xhi) = (reach, self.width as i64 - 1 - reach);
        let (ylo, yhi) = (ylo.max(reach), yhi.min(self.height as i64 - 1 - reach));
        if xlo > xhi || ylo > yhi {
            return None;
        }
        let respect = ylo != yhi;
        for _ in 0..200 {
            let x = xlo + rng.below((xhi - xlo + 1) as u64) as i64;
            let y = ylo + rng.below((yhi - ylo + 1) as u64) as i64;
            if self.fits(x, y, reach, respect) {
                self.taken.push((x - reach, y - reach, x + reach, y + reach));
                return Some((x as u32, y as u32));
            }
        }
        None
    }
}

fn random_blob(rng: &mut XorShift64Star, radius: u32) -> Shape {
    let mut lobes = vec![Lobe {
        dx: 0,
        dy: 0,
        r: radius,
    }];
    let half = (radius / 2) as i32;
    for _ in 0..rng.below(4) {
        let dx = rng.range_u32(0, 2 * half as u32) as i32 - half;
        let dy = rng.range_u32(0, 2 * half as u32) as i32 - half;
        lobes.push(Lobe {
            dx,
            dy,
            r: rng.range_u32(radius.div_ceil(2), radius),
        });
    }
    Shape::Blob { lobes }
}

const DIRECTIONS: [(i32, i32); 8] = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)];

/// Builds the recipe list of a preset. Placement is seeded by `seed`; the
/// same seed gives the same spec.
pub fn preset(preset: Preset, seed: u64, width: u32, height: u32) -> Result<SynthSpec> {
    if width < 64 || height < 64 {
        return Err(Error::validation("presets need slides of at least 64x64"));
    }
    let mut rng = XorShift64Star::new(seed);
    let mut placer = Placer {
        width,
        height,
        reserved: None,
        taken: Vec::new(),
    };
    let mut recipes = Vec::new();
    let mut band = None;
    let small = width.min(height);
    let h = height as i64;
    match preset {
        Preset::Streaks => {
            let length = if small >= 700 { 600 } else { small * 6 / 10 };
            let thickness = (length / 30).max(3);
            for _ in 0..3 + rng.below(3) {
                let (dx, dy) = DIRECTIONS[rng.below(DIRECTIONS.len() as u64) as usize];
                let shape = Shape::Bar {
                    length,
                    thickness,
                    dx,
                    dy,
                };
                if let Some((x, y)) = placer.place(&mut rng, &shape, 0, h) {
                    recipes.push(Recipe::melanoma(shape, x, y, 0.9));
                }
            }
        }
        Preset::Blobs => {
            let rmax = (small / 30).max(6);
            for _ in 0..5 + rng.below(8) {
                let radius = rng_range(&mut rng, rmax / 6 + 2, rmax);
                let shape = random_blob(&mut rng, radius);
                if let Some((x, y)) = placer.place(&mut rng, &shape, 0, h) {
                    recipes.push(Recipe::melanoma(shape, x, y, 0.9));
                }
            }
        }
        Preset::EpidermisAdjacent => {
            let t = (height / 50).max(8);
            let b = Band {
                y0: height / 8,
                thickness: t,
            };
            band = Some(b);
            let band_area = width as f64 * t as f64;
            placer.reserved = Some((b.y0 as i64, (b.y0 + t) as i64 - 1));
            let below = (b.y0 + t) as i64;

            // in-situ confusers: small, low confidence, overlapping the band edge
            let rc_max = ((0.02 * band_area / std::f64::consts::PI).sqrt() as u32).clamp(3, 16);
            for _ in 0..2 + rng.below(3) {
                let r = rng_range(&mut rng, (rc_max / 2).max(2), rc_max);
                let overlap = (t / 2).min(r / 2).max(1) as i64;
                let shape = Shape::disk(r);
                let y = below - overlap + r as i64;
                if let Some((x, y)) = placer.place(&mut rng, &shape, y, y) {
                    recipes.push(Recipe {
                        shape,
                        x,
                        y,
                        class: Class::Epidermis,
                        initial: Class::Melanoma,
                        high: 0.1,
                    });
                }
            }

            // one large invasive blob through the band edge, low confidence
            if rng.below(2) == 1 {
                let r = (0.25 * band_area / std::f64::consts::PI).sqrt().ceil() as u32;
                let overlap = (t / 2).max(1) as i64;
                let shape = Shape::disk(r);
                let y = below - overlap + r as i64;
                if let Some((x, y)) = placer.place(&mut rng, &shape, y, y) {
                    recipes.push(Recipe::melanoma(shape, x, y, 0.3));
                }
            }

            let rmax = (small / 40).max(5);
            for _ in 0..3 + rng.below(5) {
                let radius = rng_range(&mut rng, rmax / 3 + 2, rmax);
                let shape = random_blob(&mut rng, radius);
                if let Some((x, y)) = placer.place(&mut rng, &shape, below + GAP, h) {
                    recipes.push(Recipe::melanoma(shape, x, y, 0.9));
                }
            }
        }
    }
    Ok(SynthSpec {
        seed,
        width,
        height,
        band,
        recipes,
    })
}

fn rng_range(rng: &mut XorShift64Star, lo: u32, hi: u32) -> u32 {
    rng.range_u32(lo.min(hi), hi)
}
