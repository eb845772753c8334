//! Raster containers for label masks, binary masks and probability maps.
//!
//! All rasters are row-major with `(x, y)` addressing, `x` along a row. They
//! are immutable once shared; the mutating helpers exist for construction.

mod components;
mod io;

pub use components::{connected_components, touches, Component, ComponentSet, Connectivity, Span, TouchReport};
pub use io::{load_mask, load_probmap, read_pfm, read_pgm, save_mask, save_probmap, write_pfm, write_pgm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel position in slide coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Point { x, y }
    }
}

/// Semantic classes carried by a [`LabelMask`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    /// Air, background cells and everything else.
    Other = 0,
    Epidermis = 1,
    /// Invasive melanoma, the segmentation target.
    Melanoma = 2,
}

impl Class {
    pub fn from_index(value: u8) -> Option<Self> {
        match value {
            0 => Some(Class::Other),
            1 => Some(Class::Epidermis),
            2 => Some(Class::Melanoma),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

fn check_len(width: u32, height: u32, len: usize) -> Result<()> {
    let expected = width as usize * height as usize;
    if len != expected {
        return Err(Error::validation(format!(
            "raster of {width}x{height} needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Per-pixel class raster of a slide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(pos) = data.iter().position(|&v| v > 2) {
            return Err(Error::validation(format!(
                "class value {} at ({}, {}) is not one of 0, 1, 2",
                data[pos],
                pos % width as usize,
                pos / width as usize
            )));
        }
        Ok(LabelMask { width, height, data })
    }

    pub fn filled(width: u32, height: u32, class: Class) -> Self {
        LabelMask {
            width,
            height,
            data: vec![class.index(); width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> Class {
        // values are validated on every write
        Class::from_index(self.data[self.index(x, y)]).unwrap()
    }

    pub fn set(&mut self, x: u32, y: u32, class: Class) {
        let i = self.index(x, y);
        self.data[i] = class.index();
    }

    fn index(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "({x}, {y}) out of bounds");
        y as usize * self.width as usize + x as usize
    }

    /// Binary plane that is true exactly where the mask holds `class`.
    pub fn class_plane(&self, class: Class) -> BinaryMask {
        let c = class.index();
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v == c).collect(),
        }
    }

    /// Sub-raster of the `w x h` window at `(x0, y0)`, which must lie inside the mask.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<LabelMask> {
        let data = crop_rows(&self.data, self.width, self.height, x0, y0, w, h)?;
        Ok(LabelMask {
            width: w,
            height: h,
            data,
        })
    }

    /// Grows the canvas to at least `min_w x min_h`, filling new pixels with
    /// [`Class::Other`]. Existing pixels keep their coordinates.
    pub fn padded(&self, min_w: u32, min_h: u32) -> LabelMask {
        let (w, h) = (self.width.max(min_w), self.height.max(min_h));
        LabelMask {
            width: w,
            height: h,
            data: pad_rows(&self.data, self.width, self.height, w, h, 0),
        }
    }
}

/// Row-major boolean raster.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(BinaryMask { width, height, data })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    /// Builds a mask from a predicate over pixel coordinates.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[self.index(x, y)]
    }

    /// Like [`get`](Self::get) but false outside the raster.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < self.width as i64
            && y < self.height as i64
            && self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    fn index(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "({x}, {y}) out of bounds");
        y as usize * self.width as usize + x as usize
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&v| v).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixels in raster order.
    pub fn ones(&self) -> impl Iterator<Item = Point> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| Point::new((i % w) as u32, (i / w) as u32))
    }

    pub fn check_same_grid(&self, width: u32, height: u32, what: &str) -> Result<()> {
        if self.dims() != (width, height) {
            return Err(Error::validation(format!(
                "{what}: grid {}x{} does not match {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// In-place union with a mask on the same grid.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        other.check_same_grid(self.width, self.height, "union")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<BinaryMask> {
        let data = crop_rows(&self.data, self.width, self.height, x0, y0, w, h)?;
        Ok(BinaryMask {
            width: w,
            height: h,
            data,
        })
    }

    pub fn padded(&self, min_w: u32, min_h: u32) -> BinaryMask {
        let (w, h) = (self.width.max(min_w), self.height.max(min_h));
        BinaryMask {
            width: w,
            height: h,
            data: pad_rows(&self.data, self.width, self.height, w, h, false),
        }
    }

    /// Label mask holding `class` on foreground and [`Class::Other`] elsewhere.
    pub fn to_label_mask(&self, class: Class) -> LabelMask {
        LabelMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { class.index() } else { 0 }).collect(),
        }
    }
}

/// Per-pixel invasive-melanoma probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!(
                "probability {} at ({}, {}) is outside [0, 1]",
                data[pos],
                pos % width.max(1) as usize,
                pos / width.max(1) as usize
            )));
        }
        Ok(ProbabilityMap { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        assert!(x < self.width && y < self.height, "({x}, {y}) out of bounds");
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn padded(&self, min_w: u32, min_h: u32) -> ProbabilityMap {
        let (w, h) = (self.width.max(min_w), self.height.max(min_h));
        ProbabilityMap {
            width: w,
            height: h,
            data: pad_rows(&self.data, self.width, self.height, w, h, 0.0),
        }
    }
}

fn crop_rows<T: Copy>(data: &[T], width: u32, height: u32, x0: u32, y0: u32, w: u32, h: u32) -> Result<Vec<T>> {
    if x0 as u64 + w as u64 > width as u64 || y0 as u64 + h as u64 > height as u64 {
        return Err(Error::validation(format!(
            "crop {w}x{h} at ({x0}, {y0}) leaves the {width}x{height} raster"
        )));
    }
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in y0..y0 + h {
        let start = y as usize * width as usize + x0 as usize;
        out.extend_from_slice(&data[start..start + w as usize]);
    }
    Ok(out)
}

fn pad_rows<T: Copy>(data: &[T], width: u32, height: u32, w: u32, h: u32, fill: T) -> Vec<T> {
    let mut out = vec![fill; w as usize * h as usize];
    for y in 0..height as usize {
        let src = &data[y * width as usize..(y + 1) * width as usize];
        out[y * w as usize..y * w as usize + width as usize].copy_from_slice(src);
    }
    out
}
