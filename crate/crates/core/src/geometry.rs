//! Region geometry for prompt dispatch: centroid, axis-aligned box and the
//! minimum-area oriented box.
//!
//! Pixel `(x, y)` covers the unit square `[x, x+1) x [y, y+1)`. The centroid
//! is the mean of pixel *indices* (so a pixel's "center" is its integer
//! coordinate), while the oriented box is fitted to pixel *corners*, which
//! keeps one-pixel-thick streaks from collapsing to zero width.

use crate::error::{Error, Result};
use crate::raster::{Component, Point};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
    /// Whether the rounded centroid pixel belongs to the component.
    pub inside: bool,
}

impl Centroid {
    /// Nearest pixel, rounding halves up.
    pub fn rounded(&self) -> Point {
        Point::new(round_half_up(self.x), round_half_up(self.y))
    }
}

fn round_half_up(v: f64) -> u32 {
    (v + 0.5).floor() as u32
}

fn nonempty(c: &Component, what: &str) -> Result<()> {
    if c.is_empty() {
        return Err(Error::validation(format!("{what} of an empty component")));
    }
    Ok(())
}

pub fn centroid(c: &Component) -> Result<Centroid> {
    nonempty(c, "centroid")?;
    // twice the coordinate sums, kept integral
    let (mut sx2, mut sy2) = (0u128, 0u128);
    for s in c.spans() {
        let (a, b, n) = (s.x_start as u128, s.x_end as u128, s.len() as u128);
        sx2 += (a + b - 1) * n;
        sy2 += 2 * s.y as u128 * n;
    }
    let denom = 2.0 * c.area() as f64;
    let x = sx2 as f64 / denom;
    let y = sy2 as f64 / denom;
    let mut out = Centroid { x, y, inside: false };
    out.inside = c.contains(out.rounded());
    Ok(out)
}

/// Axis-aligned box size `(w_s, h_s)` in pixels, counting both end pixels.
pub fn aabb(c: &Component) -> Result<(u32, u32)> {
    nonempty(c, "bounding box")?;
    let b = c.bounds().expect("nonempty component has bounds");
    Ok((b.max_x - b.min_x + 1, b.max_y - b.min_y + 1))
}

/// Minimum-area enclosing rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinAreaRect {
    pub short_side: f64,
    pub long_side: f64,
    /// Direction of the long side in radians, in `[0, pi)`.
    pub angle: f64,
}

impl MinAreaRect {
    pub fn area(&self) -> f64 {
        self.short_side * self.long_side
    }

    /// `long / short`, always `>= 1`.
    pub fn aspect_ratio(&self) -> f64 {
        self.long_side / self.short_side
    }
}

/// Convex hull (counter-clockwise in a y-up frame, no collinear vertices) of
/// the corners of every pixel in the component.
///
/// Only the outermost corners of each row can be hull vertices, so the input
/// to the hull is four points per row rather than per pixel.
pub fn corner_hull(c: &Component) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    let spans = c.spans();
    let mut i = 0;
    while i < spans.len() {
        let y = spans[i].y;
        let mut lo = spans[i].x_start;
        let mut hi = spans[i].x_end;
        while i < spans.len() && spans[i].y == y {
            lo = lo.min(spans[i].x_start);
            hi = hi.max(spans[i].x_end);
            i += 1;
        }
        let (y, lo, hi) = (y as i64, lo as i64, hi as i64);
        pts.extend_from_slice(&[(lo, y), (hi, y), (lo, y + 1), (hi, y + 1)]);
    }
    convex_hull(pts)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i128 {
    (a.0 - o.0) as i128 * (b.1 - o.1) as i128 - (a.1 - o.1) as i128 * (b.0 - o.0) as i128
}

/// Andrew's monotone chain.
pub fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn dot(e: (i64, i64), p: (i64, i64)) -> i128 {
    e.0 as i128 * p.0 as i128 + e.1 as i128 * p.1 as i128
}

/// Minimum-area rectangle of a convex polygon by rotating calipers.
///
/// One side of the optimal rectangle is collinear with a hull edge, so each
/// edge is tried in turn while three support pointers (farthest from the
/// edge, extreme forward and extreme backward along it) advance around the
/// hull. All support comparisons are exact integer arithmetic.
pub fn min_area_rect_of_hull(hull: &[(i64, i64)]) -> MinAreaRect {
    let n = hull.len();
    assert!(n >= 3, "hull of pixel corners has at least 4 vertices");
    let next = |k: usize| (k + 1) % n;
    let edge = |i: usize| {
        let (a, b) = (hull[i], hull[next(i)]);
        (b.0 - a.0, b.1 - a.1)
    };

    let e0 = edge(0);
    let argbest = |f: &dyn Fn(usize) -> i128| (0..n).max_by_key(|&k| (f(k), std::cmp::Reverse(k))).unwrap();
    let mut far = argbest(&|k| cross(hull[0], hull[1], hull[k]));
    let mut fwd = argbest(&|k| dot(e0, hull[k]));
    let mut back = argbest(&|k| -dot(e0, hull[k]));

    let mut best: Option<(f64, MinAreaRect)> = None;
    for i in 0..n {
        let e = edge(i);
        let (p, q) = (hull[i], hull[next(i)]);
        for _ in 0..n {
            if cross(p, q, hull[next(far)]) > cross(p, q, hull[far]) {
                far = next(far);
            } else {
                break;
            }
        }
        for _ in 0..n {
            if dot(e, hull[next(fwd)]) > dot(e, hull[fwd]) {
                fwd = next(fwd);
            } else {
                break;
            }
        }
        for _ in 0..n {
            if dot(e, hull[next(back)]) < dot(e, hull[back]) {
                back = next(back);
            } else {
                break;
            }
        }

        let len2 = dot(e, e) as f64;
        let len = len2.sqrt();
        let along = (dot(e, hull[fwd]) - dot(e, hull[back])) as f64 / len;
        let across = cross(p, q, hull[far]) as f64 / len;
        let area = along * across;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let edge_angle = (e.1 as f64).atan2(e.0 as f64);
            let (short_side, long_side, angle) = if along >= across {
                (across, along, edge_angle)
            } else {
                (along, across, edge_angle + std::f64::consts::FRAC_PI_2)
            };
            let angle = angle.rem_euclid(std::f64::consts::PI);
            best = Some((
                area,
                MinAreaRect {
                    short_side,
                    long_side,
                    angle,
                },
            ));
        }
    }
    best.expect("hull has edges").1
}

pub fn min_area_bbox(c: &Component) -> Result<MinAreaRect> {
    nonempty(c, "minimum-area box")?;
    Ok(min_area_rect_of_hull(&corner_hull(c)))
}

/// The four box measurements used by prompt dispatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDims {
    /// Axis-aligned width.
    pub w_s: u32,
    /// Axis-aligned height.
    pub h_s: u32,
    /// Minimum-area box, short side.
    pub w_m: f64,
    /// Minimum-area box, long side.
    pub h_m: f64,
}

impl BoxDims {
    pub fn aspect_ratio(&self) -> f64 {
        self.h_m / self.w_m
    }
}

pub fn box_dims(c: &Component) -> Result<BoxDims> {
    let (w_s, h_s) = aabb(c)?;
    let r = min_area_bbox(c)?;
    Ok(BoxDims {
        w_s,
        h_s,
        w_m: r.short_side,
        h_m: r.long_side,
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

    /// Pixels whose centers fall in a rectangle of size `len x thick` centered
    /// at `(cx, cy)` and rotated by `deg`.
    fn rotated_rect(cx: f64, cy: f64, len: f64, thick: f64, deg: f64) -> Component {
        let (s, c) = deg.to_radians().sin_cos();
        let r = (len + thick) as u32;
        let mut px = Vec::new();
        for y in (cy as u32).saturating_sub(r)..(cy as u32 + r) {
            for x in (cx as u32).saturating_sub(r)..(cx as u32 + r) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if u.abs() <= len / 2.0 && v.abs() <= thick / 2.0 {
                    px.push(Point::new(x, y));
                }
            }
        }
        Component::from_pixels(1, px)
    }

    fn brute_force_min_area(hull: &[(i64, i64)]) -> f64 {
        // try every hull edge direction with all points projected
        let n = hull.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let (ex, ey) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
            let len = (ex * ex + ey * ey).sqrt();
            let (ux, uy) = (ex / len, ey / len);
            let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for &(px, py) in hull {
                let u = px as f64 * ux + py as f64 * uy;
                let v = -(px as f64) * uy + py as f64 * ux;
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
            best = best.min((umax - umin) * (vmax - vmin));
        }
        best
    }

    #[test]
    fn centroid_of_square() {
        let c = centroid(&rect(0, 0, 4, 4)).unwrap();
        assert_eq!((c.x, c.y), (1.5, 1.5));
        assert!(c.inside);
        assert_eq!(c.rounded(), Point::new(2, 2));
    }

    #[test]
    fn centroid_of_ring_is_outside() {
        let ring = Component::from_pixels(
            1,
            (0..21u32)
                .flat_map(|y| (0..21u32).map(move |x| Point::new(x, y)))
                .filter(|p| {
                    let d2 = (p.x as i64 - 10).pow(2) + (p.y as i64 - 10).pow(2);
                    (36..=100).contains(&d2)
                }),
        );
        let c = centroid(&ring).unwrap();
        assert_eq!((c.x, c.y), (10.0, 10.0));
        assert!(!c.inside);
    }

    #[test]
    fn centroid_equals_direct_mean() {
        let mut s = 12345u64;
        let mut px = Vec::new();
        for _ in 0..300 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            px.push(Point::new(((s >> 33) % 50) as u32, ((s >> 17) % 40) as u32));
        }
        let comp = Component::from_pixels(1, px);
        let pts: Vec<Point> = comp.pixels().collect();
        let mx = pts.iter().map(|p| p.x as f64).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.y as f64).sum::<f64>() / pts.len() as f64;
        let c = centroid(&comp).unwrap();
        assert!((c.x - mx).abs() < 1e-9 && (c.y - my).abs() < 1e-9);
    }

    #[test]
    fn centroid_translation_equivariant() {
        let comp = rotated_rect(40.0, 40.0, 30.0, 7.0, 20.0);
        let a = centroid(&comp).unwrap();
        let b = centroid(&comp.translated(13, 101)).unwrap();
        assert_eq!(b.x - a.x, 13.0);
        assert_eq!(b.y - a.y, 101.0);
    }

    #[test]
    fn empty_component_errors() {
        let empty = Component::from_pixels(1, []);
        assert!(matches!(centroid(&empty), Err(Error::Validation(_))));
        assert!(aabb(&empty).is_err());
        assert!(min_area_bbox(&empty).is_err());
    }

    #[test]
    fn aabb_conventions() {
        assert_eq!(aabb(&rect(7, 3, 1, 1)).unwrap(), (1, 1));
        assert_eq!(aabb(&rect(0, 9, 600, 1)).unwrap(), (600, 1));
    }

    #[test]
    fn axis_aligned_rectangle_box() {
        let r = min_area_bbox(&rect(5, 5, 10, 3)).unwrap();
        assert!((r.short_side - 3.0).abs() < 1e-6);
        assert!((r.long_side - 10.0).abs() < 1e-6);
        assert!(r.angle.abs() < 1e-9);
    }

    #[test]
    fn single_pixel_box_is_unit_square() {
        let r = min_area_bbox(&rect(0, 0, 1, 1)).unwrap();
        assert_eq!((r.short_side, r.long_side), (1.0, 1.0));
        let r = min_area_bbox(&rect(0, 0, 2, 1)).unwrap();
        assert_eq!((r.short_side, r.long_side), (1.0, 2.0));
    }

    #[test]
    fn rotated_rectangle_beats_its_aabb() {
        let comp = rotated_rect(60.0, 60.0, 80.0, 10.0, 45.0);
        let (w, h) = aabb(&comp).unwrap();
        let r = min_area_bbox(&comp).unwrap();
        assert!(r.area() <= (w * h) as f64);
        assert!((r.angle - std::f64::consts::FRAC_PI_4).abs() < 0.05);
    }

    #[test]
    fn aspect_survives_rotation() {
        for deg in [0.0, 15.0, 30.0, 45.0] {
            let comp = rotated_rect(100.0, 100.0, 120.0, 30.0, deg);
            let r = min_area_bbox(&comp).unwrap();
            let err = (r.aspect_ratio() / 4.0 - 1.0).abs();
            assert!(err < 0.15, "{deg} deg: aspect {}", r.aspect_ratio());
        }
    }

    #[test]
    fn calipers_match_quadratic_edge_scan() {
        let mut s = 99u64;
        for _ in 0..100 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let len = 5.0 + (s >> 40) as f64 % 60.0;
            let thick = 1.0 + (s >> 20) as f64 % 20.0;
            let deg = (s >> 8) as f64 % 180.0;
            let comp = rotated_rect(100.0, 100.0, len, thick, deg);
            if comp.is_empty() {
                continue;
            }
            let hull = corner_hull(&comp);
            let fast = min_area_rect_of_hull(&hull).area();
            let slow = brute_force_min_area(&hull);
            assert!((fast - slow).abs() <= 1e-9 * slow, "{fast} vs {slow}");
        }
    }

    #[test]
    fn hull_drops_collinear_points() {
        let hull = convex_hull(vec![(0, 0), (1, 0), (2, 0), (2, 2), (0, 2), (1, 1)]);
        assert_eq!(hull, vec![(0, 0), (2, 0), (2, 2), (0, 2)]);
    }
}
