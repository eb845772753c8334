//! Connected-component labeling over run-length spans.
//!
//! Labeling is a two-pass union-find over horizontal runs. IDs are handed out
//! in raster order of each component's first pixel, so the result does not
//! depend on how the union-find merged runs.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Point};
use crate::error::{Error, Result};

/// Pixel adjacency used for labeling and touch tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    /// Edge neighbors only.
    #[serde(rename = "4")]
    Four,
    /// Edge and corner neighbors.
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::validation(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }

    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    /// Widening applied to a run when testing overlap with an adjacent row.
    fn reach(self) -> u32 {
        match self {
            Connectivity::Four => 0,
            Connectivity::Eight => 1,
        }
    }
}

/// Horizontal run of foreground pixels `[x_start, x_end)` on row `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub y: u32,
    pub x_start: u32,
    pub x_end: u32,
}

impl Span {
    pub fn len(&self) -> u32 {
        self.x_end - self.x_start
    }

    pub fn is_empty(&self) -> bool {
        self.x_end == self.x_start
    }
}

/// Inclusive pixel bounds of a nonempty component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

/// A pixel set stored as raster-ordered, non-overlapping spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    id: u32,
    area: u64,
    spans: Vec<Span>,
}

impl Component {
    /// Builds a component from arbitrary pixels. Duplicates are merged.
    pub fn from_pixels(id: u32, pixels: impl IntoIterator<Item = Point>) -> Self {
        let mut pts: Vec<Point> = pixels.into_iter().collect();
        pts.sort_unstable_by_key(|p| (p.y, p.x));
        pts.dedup();
        let mut spans: Vec<Span> = Vec::new();
        for p in pts {
            match spans.last_mut() {
                Some(s) if s.y == p.y && s.x_end == p.x => s.x_end += 1,
                _ => spans.push(Span {
                    y: p.y,
                    x_start: p.x,
                    x_end: p.x + 1,
                }),
            }
        }
        Self::from_sorted_spans(id, spans)
    }

    /// Pixels of `mask` that are set, as a single component regardless of
    /// connectivity.
    pub fn from_mask(id: u32, mask: &BinaryMask) -> Self {
        Self::from_pixels(id, mask.ones())
    }

    fn from_sorted_spans(id: u32, spans: Vec<Span>) -> Self {
        let area = spans.iter().map(|s| s.len() as u64).sum();
        Component { id, area, spans }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn pixels(&self) -> impl Iterator<Item = Point> + '_ {
        self.spans
            .iter()
            .flat_map(|s| (s.x_start..s.x_end).map(move |x| Point::new(x, s.y)))
    }

    pub fn bounds(&self) -> Option<Bounds> {
        let first = self.spans.first()?;
        let last = self.spans.last()?;
        let min_x = self.spans.iter().map(|s| s.x_start).min()?;
        let max_x = self.spans.iter().map(|s| s.x_end - 1).max()?;
        Some(Bounds {
            min_x,
            min_y: first.y,
            max_x,
            max_y: last.y,
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        let lo = self.spans.partition_point(|s| s.y < p.y);
        self.spans[lo..]
            .iter()
            .take_while(|s| s.y == p.y)
            .any(|s| s.x_start <= p.x && p.x < s.x_end)
    }

    /// Same pixel set shifted by `(dx, dy)`.
    pub fn translated(&self, dx: u32, dy: u32) -> Self {
        let spans = self
            .spans
            .iter()
            .map(|s| Span {
                y: s.y + dy,
                x_start: s.x_start + dx,
                x_end: s.x_end + dx,
            })
            .collect();
        Component {
            id: self.id,
            area: self.area,
            spans,
        }
    }

    /// Rasterizes the component onto a `width x height` grid.
    pub fn to_mask(&self, width: u32, height: u32) -> Result<BinaryMask> {
        let mut mask = BinaryMask::empty(width, height);
        for s in &self.spans {
            if s.y >= height || s.x_end > width {
                return Err(Error::validation(format!(
                    "component {} leaves the {width}x{height} grid",
                    self.id
                )));
            }
            for x in s.x_start..s.x_end {
                mask.set(x, s.y, true);
            }
        }
        Ok(mask)
    }
}

/// Labeled connected components of a binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentSet {
    width: u32,
    height: u32,
    connectivity: Connectivity,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentSet {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn count(&self) -> usize {
        self.components.len()
    }

    /// Row-major component IDs, `0` for background.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Component by 1-based ID.
    pub fn get(&self, id: u32) -> Option<&Component> {
        id.checked_sub(1).and_then(|i| self.components.get(i as usize))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Component> {
        self.components.iter()
    }
}

impl<'a> IntoIterator for &'a ComponentSet {
    type Item = &'a Component;
    type IntoIter = std::slice::Iter<'a, Component>;

    fn into_iter(self) -> Self::IntoIter {
        self.components.iter()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Labels the foreground of `mask` into connected components.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let (width, height) = mask.dims();
    let data = mask.data();
    let reach = connectivity.reach();

    let mut runs: Vec<Span> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut prev_row = 0..0;
    for y in 0..height {
        let row = &data[y as usize * width as usize..(y as usize + 1) * width as usize];
        let row_start = runs.len();
        let mut x = 0;
        while x < width {
            if !row[x as usize] {
                x += 1;
                continue;
            }
            let start = x;
            while x < width && row[x as usize] {
                x += 1;
            }
            runs.push(Span {
                y,
                x_start: start,
                x_end: x,
            });
            parent.push(parent.len());
        }

        // merge with overlapping runs of the previous row, both lists sorted by x
        let mut j = prev_row.start;
        for i in row_start..runs.len() {
            let cur = runs[i];
            while j < prev_row.end && runs[j].x_end + reach <= cur.x_start {
                j += 1;
            }
            let mut k = j;
            while k < prev_row.end && runs[k].x_start < cur.x_end + reach {
                union(&mut parent, i, k);
                k += 1;
            }
        }
        prev_row = row_start..runs.len();
    }

    let mut id_of_root = vec![0u32; runs.len()];
    let mut spans_by_id: Vec<Vec<Span>> = Vec::new();
    let mut labels = vec![0u32; width as usize * height as usize];
    for (i, run) in runs.iter().enumerate() {
        let root = find(&mut parent, i);
        if id_of_root[root] == 0 {
            spans_by_id.push(Vec::new());
            id_of_root[root] = spans_by_id.len() as u32;
        }
        let id = id_of_root[root];
        spans_by_id[id as usize - 1].push(*run);
        let base = run.y as usize * width as usize;
        labels[base + run.x_start as usize..base + run.x_end as usize].fill(id);
    }

    let components = spans_by_id
        .into_iter()
        .enumerate()
        .map(|(i, spans)| Component::from_sorted_spans(i as u32 + 1, spans))
        .collect();

    ComponentSet {
        width,
        height,
        connectivity,
        labels,
        components,
    }
}

/// Which components of another mask a component is adjacent to.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchReport {
    /// IDs of touched components, ascending.
    pub touched: Vec<u32>,
}

impl TouchReport {
    pub fn is_touching(&self) -> bool {
        !self.touched.is_empty()
    }
}

/// Tests whether any pixel of `a` neighbors (or coincides with) a foreground
/// pixel of `other`.
pub fn touches(a: &Component, other: &ComponentSet, connectivity: Connectivity) -> Result<TouchReport> {
    let (w, h) = other.dims();
    let mut touched = Vec::new();
    for s in a.spans() {
        if s.y >= h || s.x_end > w {
            return Err(Error::validation(format!(
                "component {} does not fit the {w}x{h} grid it is tested against",
                a.id()
            )));
        }
        let row_lo = s.y.saturating_sub(1);
        let row_hi = (s.y + 1).min(h - 1);
        for y in row_lo..=row_hi {
            let (x_lo, x_hi) = if y == s.y || connectivity == Connectivity::Eight {
                (s.x_start.saturating_sub(1), s.x_end.min(w - 1))
            } else {
                (s.x_start, s.x_end - 1)
            };
            let base = y as usize * w as usize;
            for &label in &other.labels()[base + x_lo as usize..=base + x_hi as usize] {
                if label != 0 {
                    touched.push(label);
                }
            }
        }
    }
    touched.sort_unstable();
    touched.dedup();
    Ok(TouchReport { touched })
}
