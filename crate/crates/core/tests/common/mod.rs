//! Reference implementations written without the library's algorithms.
#![allow(dead_code)]

use std::collections::VecDeque;

use slideprompt::fixtures::XorShift64Star;
use slideprompt::raster::{BinaryMask, Class, LabelMask, Point, ProbabilityMap};

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

pub fn neighbors(eight: bool) -> &'static [(i64, i64)] {
    if eight {
        &N8
    } else {
        &N4
    }
}

/// Breadth-first flood fill from each unlabeled pixel in raster order.
/// Returns labels (0 = background) and the component count.
pub fn flood_labels(w: u32, h: u32, fg: &[bool], eight: bool) -> (Vec<u32>, u32) {
    let (wi, hi) = (w as i64, h as i64);
    let mut labels = vec![0u32; fg.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i as i64) % wi, (i as i64) / wi);
            for &(dx, dy) in neighbors(eight) {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= wi || ny >= hi {
                    continue;
                }
                let j = (ny * wi + nx) as usize;
                if fg[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

pub fn mask_labels(mask: &BinaryMask, eight: bool) -> (Vec<u32>, u32) {
    flood_labels(mask.width(), mask.height(), mask.data(), eight)
}

/// Pixel lists of every component, indexed by label - 1.
pub fn groups(w: u32, labels: &[u32], count: u32) -> Vec<Vec<Point>> {
    let mut out = vec![Vec::new(); count as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            out[l as usize - 1].push(Point::new(i as u32 % w, i as u32 / w));
        }
    }
    out
}

/// Melanoma plane after dropping small, low-confidence components that
/// touch epidermis, computed pixel by pixel with 8-adjacency.
pub fn naive_refine(mask: &LabelMask, prob: &ProbabilityMap, alpha_m: f64, beta: f32, alpha_c: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let plane = |c: Class| -> Vec<bool> { mask.data().iter().map(|&v| v == c.index()).collect() };
    let mel = plane(Class::Melanoma);
    let epi = plane(Class::Epidermis);
    let (ml, mn) = flood_labels(w, h, &mel, true);
    let (el, en) = flood_labels(w, h, &epi, true);

    let mut epi_area = vec![0u64; en as usize + 1];
    for &l in &el {
        epi_area[l as usize] += 1;
    }
    let mut area = vec![0u64; mn as usize + 1];
    let mut high = vec![0u64; mn as usize + 1];
    let mut largest_touch = vec![0u64; mn as usize + 1];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = (y * w as i64 + x) as usize;
            let m = ml[i] as usize;
            if m == 0 {
                continue;
            }
            area[m] += 1;
            if prob.data()[i] > beta {
                high[m] += 1;
            }
            for &(dx, dy) in &N8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let e = el[(ny * w as i64 + nx) as usize] as usize;
                if e != 0 {
                    largest_touch[m] = largest_touch[m].max(epi_area[e]);
                }
            }
        }
    }
    let drop: Vec<bool> = (0..=mn as usize)
        .map(|m| {
            m != 0
                && largest_touch[m] > 0
                && (area[m] as f64 / largest_touch[m] as f64) < alpha_m
                && (high[m] as f64 / area[m] as f64) < alpha_c
        })
        .collect();
    let data = ml.iter().map(|&l| l != 0 && !drop[l as usize]).collect();
    BinaryMask::new(w, h, data).unwrap()
}

/// Corners of boundary pixels, hulled by gift wrapping.
pub fn jarvis_hull(pixels: &[Point]) -> Vec<(f64, f64)> {
    use std::collections::HashSet;
    let set: HashSet<(i64, i64)> = pixels.iter().map(|p| (p.x as i64, p.y as i64)).collect();
    let mut pts: Vec<(i64, i64)> = Vec::new();
    for &(x, y) in &set {
        if N4.iter().any(|&(dx, dy)| !set.contains(&(x + dx, y + dy))) {
            pts.extend_from_slice(&[(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]);
        }
    }
    pts.sort_unstable();
    pts.dedup();
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let dist = |a: (i64, i64), b: (i64, i64)| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
    let start = pts[0];
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut cand = pts[0];
        for &p in &pts {
            if cand == cur {
                cand = p;
                continue;
            }
            let c = cross(cur, cand, p);
            if c < 0 || (c == 0 && dist(cur, p) > dist(cur, cand)) {
                cand = p;
            }
        }
        if cand == start {
            break;
        }
        hull.push(cand);
        cur = cand;
    }
    hull.into_iter().map(|(x, y)| (x as f64, y as f64)).collect()
}

/// Smallest bounding-rectangle area and its side lengths over `steps`
/// evenly spaced angles in `[0, pi/2)`.
pub fn sweep_min_rect(hull: &[(f64, f64)], steps: usize) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 0..steps {
        let t = k as f64 * std::f64::consts::FRAC_PI_2 / steps as f64;
        let (c, s) = (t.cos(), t.sin());
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in hull {
            let u = x * c + y * s;
            let v = -x * s + y * c;
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let (a, b) = (u1 - u0, v1 - v0);
        if a * b < best.0 {
            best = (a * b, a.min(b), a.max(b));
        }
    }
    best
}

/// Mean pixel index rounded half up, and whether that pixel is in the set.
pub fn centroid_pixel(pixels: &[Point]) -> (Point, bool) {
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|p| p.x as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| p.y as f64).sum::<f64>() / n;
    let p = Point::new((cx + 0.5).floor() as u32, (cy + 0.5).floor() as u32);
    (p, pixels.contains(&p))
}

pub fn aabb(pixels: &[Point]) -> (u32, u32) {
    let x0 = pixels.iter().map(|p| p.x).min().unwrap();
    let x1 = pixels.iter().map(|p| p.x).max().unwrap();
    let y0 = pixels.iter().map(|p| p.y).min().unwrap();
    let y1 = pixels.iter().map(|p| p.y).max().unwrap();
    (x1 - x0 + 1, y1 - y0 + 1)
}

pub fn random_mask(rng: &mut XorShift64Star, w: u32, h: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.next_f64() < density)
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
