//! Rendering of the vector map into an RGB raster.
//!
//! The raster is a square, scenario-centered window. Polygon kinds are
//! filled by an even-odd test at pixel centers; line kinds are stroked two
//! pixels wide, with `LaneLineDotted` dashed by arc length. Later kinds in
//! the fixed draw order overdraw earlier ones, so the image is a function
//! of the map alone and golden hashes stay stable.

use std::io::Write as IoWrite;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{MapElement, MapElementKind, Point2, Scenario, SemanticMap};
use crate::tensor::{Tape, Tensor};

pub const BACKGROUND: [u8; 3] = [0, 0, 0];

/// Dash and gap length of dotted lines, in pixels of arc length.
const DASH_PX: f64 = 4.0;

/// Half-width of stroked lines, in pixels.
const STROKE_HALF_PX: f64 = 1.0;

pub fn color_code(kind: MapElementKind) -> [u8; 3] {
    match kind {
        MapElementKind::UnmovableObstacle => [255, 105, 180],
        MapElementKind::RoadBoundary => [255, 255, 0],
        MapElementKind::PedestrianCrossing => [128, 128, 128],
        MapElementKind::BicycleLane => [220, 220, 220],
        MapElementKind::LaneCenterline => [0, 255, 0],
        MapElementKind::MovableObstacleBox => [0, 0, 255],
        MapElementKind::LaneLineDotted | MapElementKind::EdgeLineSolid => [255, 255, 255],
    }
}

/// Back-to-front paint position; higher ranks overdraw lower ones.
fn draw_rank(kind: MapElementKind) -> u8 {
    match kind {
        MapElementKind::BicycleLane => 0,
        MapElementKind::PedestrianCrossing => 1,
        MapElementKind::UnmovableObstacle => 2,
        MapElementKind::LaneCenterline => 3,
        MapElementKind::LaneLineDotted => 4,
        MapElementKind::EdgeLineSolid => 5,
        MapElementKind::RoadBoundary => 6,
        MapElementKind::MovableObstacleBox => 7,
    }
}

/// RGB image over a world-aligned window. Row 0 is the top of the image;
/// `origin` is the world coordinate of the bottom-left corner, so +y in
/// the world points up in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// World units per pixel.
    pub resolution: f64,
    /// World coordinate of the bottom-left corner.
    pub origin: Point2,
    /// Row-major RGB, `3 * width * height` bytes.
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, resolution: f64, origin: Point2, color: [u8; 3]) -> RasterImage {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        RasterImage { width, height, resolution, origin, data }
    }

    /// Pixel containing `p`. May lie outside `0..width` x `0..height`;
    /// callers that index must check `in_bounds`.
    pub fn world_to_pixel(&self, p: Point2) -> (i64, i64) {
        let px = ((p.x - self.origin.x) / self.resolution).floor() as i64;
        let py = ((p.y - self.origin.y) / self.resolution).floor() as i64;
        (px, self.height as i64 - 1 - py)
    }

    /// World coordinate of the center of pixel `(px, py)`.
    pub fn pixel_center(&self, px: i64, py: i64) -> Point2 {
        Point2::new(
            self.origin.x + (px as f64 + 0.5) * self.resolution,
            self.origin.y + ((self.height as i64 - 1 - py) as f64 + 0.5) * self.resolution,
        )
    }

    pub fn in_bounds(&self, px: i64, py: i64) -> bool {
        px >= 0 && py >= 0 && (px as usize) < self.width && (py as usize) < self.height
    }

    pub fn get(&self, px: usize, py: usize) -> [u8; 3] {
        let i = 3 * (py * self.width + px);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, px: usize, py: usize, color: [u8; 3]) {
        let i = 3 * (py * self.width + px);
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// `[3, H, W]` tensor with channel values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; 3 * h * w];
        for py in 0..h {
            for px in 0..w {
                let i = 3 * (py * w + px);
                for c in 0..3 {
                    out[c * h * w + py * w + px] = self.data[i + c] as f64 / 255.0;
                }
            }
        }
        Tensor::new(&[3, h, w], out).expect("shape matches construction")
    }

    /// Binary PPM (P6).
    pub fn write_ppm<W: IoWrite>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::InvalidValue(format!("writing {}: {e}", path.display())))
    }
}

/// Renders `map` into a `size` x `size` image whose window spans
/// `size * resolution` world units centered on `center`. Elements outside
/// the window are clipped; an empty map renders as all background.
pub fn rasterize(map: &SemanticMap, center: Point2, size: usize, resolution: f64) -> Result<RasterImage> {
    if size == 0 {
        return Err(Error::InvalidValue("raster size must be > 0".into()));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::InvalidValue(format!("raster resolution {resolution} must be > 0")));
    }
    let half = 0.5 * size as f64 * resolution;
    let origin = Point2::new(center.x - half, center.y - half);
    let mut img = RasterImage::filled(size, size, resolution, origin, BACKGROUND);

    let mut order: Vec<&MapElement> = map.elements.iter().collect();
    order.sort_by_key(|el| draw_rank(el.kind));
    for el in order {
        if el.kind.is_polygon() {
            fill_polygon(&mut img, &el.points, color_code(el.kind));
        } else {
            stroke_polyline(&mut img, &el.points, color_code(el.kind), el.kind == MapElementKind::LaneLineDotted);
        }
    }
    Ok(img)
}

/// Even-odd crossing test at `p` against the closed polygon `poly`.
fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Pixel rows/columns whose centers can fall inside the world interval
/// `[lo, hi]` along one axis, clamped to `0..n`.
fn pixel_span(lo: f64, hi: f64, offset: f64, resolution: f64, n: usize) -> std::ops::Range<i64> {
    let first = ((lo - offset) / resolution - 0.5).floor() as i64;
    let last = ((hi - offset) / resolution - 0.5).ceil() as i64;
    first.clamp(0, n as i64)..(last + 1).clamp(0, n as i64)
}

fn fill_polygon(img: &mut RasterImage, poly: &[Point2], color: [u8; 3]) {
    if poly.len() < 3 {
        return;
    }
    let xs = poly.iter().map(|p| p.x);
    let ys = poly.iter().map(|p| p.y);
    let (min_x, max_x) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (min_y, max_y) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let cols = pixel_span(min_x, max_x, img.origin.x, img.resolution, img.width);
    let rows = pixel_span(min_y, max_y, img.origin.y, img.resolution, img.height);
    for row in rows {
        let py = img.height as i64 - 1 - row;
        for px in cols.clone() {
            if point_in_polygon(img.pixel_center(px, py), poly) {
                img.put(px as usize, py as usize, color);
            }
        }
    }
}

fn stroke_polyline(img: &mut RasterImage, pts: &[Point2], color: [u8; 3], dotted: bool) {
    if pts.len() < 2 {
        return;
    }
    let radius = STROKE_HALF_PX * img.resolution;
    let dash = DASH_PX * img.resolution;
    let mut walked = 0.0;
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len = dx.hypot(dy);
        let cols = pixel_span(a.x.min(b.x) - radius, a.x.max(b.x) + radius, img.origin.x, img.resolution, img.width);
        let rows = pixel_span(a.y.min(b.y) - radius, a.y.max(b.y) + radius, img.origin.y, img.resolution, img.height);
        for row in rows {
            let py = img.height as i64 - 1 - row;
            for px in cols.clone() {
                let c = img.pixel_center(px, py);
                // Project the pixel center onto the segment.
                let t = if len == 0.0 {
                    0.0
                } else {
                    (((c.x - a.x) * dx + (c.y - a.y) * dy) / (len * len)).clamp(0.0, 1.0)
                };
                let closest = Point2::new(a.x + t * dx, a.y + t * dy);
                if c.distance(closest) > radius {
                    continue;
                }
                if dotted {
                    let arc = walked + t * len;
                    if (arc / dash).floor() as i64 % 2 != 0 {
                        continue;
                    }
                }
                img.put(px as usize, py as usize, color);
            }
        }
        walked += len;
    }
}

/// Window center for a scenario: the centroid of agent positions at the
/// last observed step, or the map bounds center when no agent covers it.
pub fn scenario_center(scenario: &Scenario) -> Point2 {
    let mut sum = Point2::new(0.0, 0.0);
    let mut n = 0usize;
    for track in &scenario.agents {
        if let Some(p) = track.position_at(scenario.t_ob) {
            sum.x += p.x;
            sum.y += p.y;
            n += 1;
        }
    }
    if n > 0 {
        return Point2::new(sum.x / n as f64, sum.y / n as f64);
    }
    let b = scenario.map.bounds;
    Point2::new(0.5 * (b.min_x + b.max_x), 0.5 * (b.min_y + b.max_y))
}

/// `[3, k, k]` patch of the rendered map centered on `agent`, in one call.
/// The heavy path (shared CNN over the full raster) lives in the model;
/// this is the raw-raster variant used when the encoder keeps resolution.
pub fn agent_patch(tape: &mut Tape, img: &RasterImage, agent: Point2, k: usize) -> Result<Tensor> {
    let (px, py) = img.world_to_pixel(agent);
    let full = img.to_tensor();
    tape.extract_patch(&full, px, py, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Rect;
    use proptest::prelude::*;

    fn square(kind: MapElementKind, cx: f64, cy: f64, half: f64) -> MapElement {
        MapElement {
            kind,
            points: vec![
                Point2::new(cx - half, cy - half),
                Point2::new(cx + half, cy - half),
                Point2::new(cx + half, cy + half),
                Point2::new(cx - half, cy + half),
            ],
        }
    }

    fn window_map(elements: Vec<MapElement>) -> SemanticMap {
        let mut map = SemanticMap { elements, bounds: Rect::new(-50.0, -50.0, 50.0, 50.0) };
        map.reconcile_bounds();
        map
    }

    #[test]
    fn empty_map_is_all_background() {
        let img = rasterize(&window_map(vec![]), Point2::new(0.0, 0.0), 64, 0.5).unwrap();
        assert!(img.data.iter().all(|&b| b == 0));
    }

    #[test]
    fn center_obstacle_is_pink_corners_background() {
        let map = window_map(vec![square(MapElementKind::UnmovableObstacle, 0.0, 0.0, 5.0)]);
        let img = rasterize(&map, Point2::new(0.0, 0.0), 200, 0.5).unwrap();
        assert_eq!(img.get(100, 100), [255, 105, 180]);
        assert_eq!(img.get(99, 99), [255, 105, 180]);
        assert_eq!(img.get(0, 0), BACKGROUND);
        assert_eq!(img.get(199, 0), BACKGROUND);
        assert_eq!(img.get(0, 199), BACKGROUND);
        assert_eq!(img.get(199, 199), BACKGROUND);
    }

    #[test]
    fn world_to_pixel_matches_floor_convention() {
        let img = RasterImage::filled(4, 4, 0.5, Point2::new(0.0, 0.0), BACKGROUND);
        assert_eq!(img.world_to_pixel(Point2::new(1.0, 0.0)), (2, 3));
        assert_eq!(img.world_to_pixel(Point2::new(0.0, 0.0)), (0, 3));
    }

    #[test]
    fn pixel_center_round_trips_within_half_resolution() {
        let img = RasterImage::filled(16, 16, 0.25, Point2::new(-3.0, 7.0), BACKGROUND);
        for py in [0i64, 5, 15] {
            for px in [0i64, 9, 15] {
                let c = img.pixel_center(px, py);
                assert_eq!(img.world_to_pixel(c), (px, py));
                let back = img.pixel_center(px, py);
                assert!(c.distance(back) <= img.resolution / 2.0);
            }
        }
    }

    #[test]
    fn later_kinds_overdraw_earlier() {
        let map = window_map(vec![
            square(MapElementKind::MovableObstacleBox, 0.0, 0.0, 2.0),
            square(MapElementKind::UnmovableObstacle, 0.0, 0.0, 5.0),
        ]);
        let img = rasterize(&map, Point2::new(0.0, 0.0), 100, 0.5).unwrap();
        assert_eq!(img.get(50, 50), [0, 0, 255]);
        assert_eq!(img.get(43, 50), [255, 105, 180]);
    }

    #[test]
    fn solid_stroke_is_two_pixels_wide() {
        let map = window_map(vec![MapElement {
            kind: MapElementKind::EdgeLineSolid,
            points: vec![Point2::new(0.0, -10.0), Point2::new(0.0, 10.0)],
        }]);
        let img = rasterize(&map, Point2::new(0.0, 0.0), 100, 0.5).unwrap();
        for py in [30usize, 50, 70] {
            let painted: Vec<usize> =
                (0..100).filter(|&px| img.get(px, py) == [255, 255, 255]).collect();
            assert_eq!(painted, vec![49, 50], "row {py}");
        }
    }

    #[test]
    fn dotted_line_alternates_by_arc_length() {
        let map = window_map(vec![MapElement {
            kind: MapElementKind::LaneLineDotted,
            points: vec![Point2::new(-25.0, 0.0), Point2::new(25.0, 0.0)],
        }]);
        let img = rasterize(&map, Point2::new(0.0, 0.0), 100, 0.5).unwrap();
        let row: Vec<bool> = (0..100).map(|px| img.get(px, 50) == [255, 255, 255]).collect();
        assert!(row.iter().any(|&b| b));
        assert!(row.iter().any(|&b| !b));
        // Arc length starts at the left endpoint, so the pattern along the
        // row is 4 on, 4 off, anchored at pixel 0.
        for (px, &on) in row.iter().enumerate() {
            assert_eq!(on, (px / 4) % 2 == 0, "pixel {px}");
        }
    }

    #[test]
    fn fully_outside_elements_do_not_change_the_image() {
        let inside = window_map(vec![square(MapElementKind::UnmovableObstacle, 3.0, -2.0, 4.0)]);
        let mut with_outside = inside.clone();
        with_outside.elements.push(square(MapElementKind::MovableObstacleBox, 500.0, 500.0, 3.0));
        with_outside.elements.push(MapElement {
            kind: MapElementKind::RoadBoundary,
            points: vec![Point2::new(-400.0, 300.0), Point2::new(400.0, 300.0)],
        });
        with_outside.reconcile_bounds();
        let a = rasterize(&inside, Point2::new(0.0, 0.0), 128, 0.5).unwrap();
        let b = rasterize(&with_outside, Point2::new(0.0, 0.0), 128, 0.5).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn rendering_is_deterministic() {
        let map = window_map(vec![
            square(MapElementKind::BicycleLane, -10.0, -10.0, 8.0),
            square(MapElementKind::PedestrianCrossing, 5.0, 5.0, 6.0),
            MapElement {
                kind: MapElementKind::LaneCenterline,
                points: vec![Point2::new(-20.0, 0.0), Point2::new(20.0, 15.0)],
            },
        ]);
        let a = rasterize(&map, Point2::new(0.0, 0.0), 200, 0.5).unwrap();
        let b = rasterize(&map, Point2::new(0.0, 0.0), 200, 0.5).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn to_tensor_is_channel_major_and_scaled() {
        let map = window_map(vec![square(MapElementKind::UnmovableObstacle, 0.0, 0.0, 10.0)]);
        let img = rasterize(&map, Point2::new(0.0, 0.0), 8, 4.0).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 8, 8]);
        let hw = 64;
        let at = |c: usize, py: usize, px: usize| t.data()[c * hw + py * 8 + px];
        assert_eq!(at(0, 4, 4), 1.0);
        assert!((at(1, 4, 4) - 105.0 / 255.0).abs() < 1e-15);
        assert!((at(2, 4, 4) - 180.0 / 255.0).abs() < 1e-15);
        assert_eq!(at(0, 0, 0), 0.0);
    }

    #[test]
    fn ppm_header_and_payload() {
        let img = RasterImage::filled(2, 3, 1.0, Point2::new(0.0, 0.0), [7, 8, 9]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(buf.len(), 11 + 2 * 3 * 3);
    }

    #[test]
    fn zero_size_and_bad_resolution_are_rejected() {
        let map = window_map(vec![]);
        assert!(rasterize(&map, Point2::new(0.0, 0.0), 0, 0.5).is_err());
        assert!(rasterize(&map, Point2::new(0.0, 0.0), 10, 0.0).is_err());
        assert!(rasterize(&map, Point2::new(0.0, 0.0), 10, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn clipping_ignores_out_of_window_geometry(
            cx in -20.0f64..20.0,
            cy in -20.0f64..20.0,
            far_x in 200.0f64..1000.0,
            half in 0.5f64..10.0,
        ) {
            let base = window_map(vec![square(MapElementKind::UnmovableObstacle, cx, cy, half)]);
            let mut extended = base.clone();
            extended.elements.push(square(MapElementKind::MovableObstacleBox, far_x, 0.0, 5.0));
            extended.reconcile_bounds();
            let a = rasterize(&base, Point2::new(0.0, 0.0), 100, 0.5).unwrap();
            let b = rasterize(&extended, Point2::new(0.0, 0.0), 100, 0.5).unwrap();
            prop_assert_eq!(a.data, b.data);
        }

        #[test]
        fn shifted_patches_agree_on_overlap(dx in 1i64..6) {
            let map = window_map(vec![
                square(MapElementKind::UnmovableObstacle, 2.0, -3.0, 6.0),
                square(MapElementKind::PedestrianCrossing, -8.0, 6.0, 5.0),
            ]);
            let img = rasterize(&map, Point2::new(0.0, 0.0), 64, 0.5).unwrap();
            let full = img.to_tensor();
            let mut tape = Tape::inactive();
            let k = 11usize;
            let a = tape.extract_patch(&full, 30, 30, k).unwrap();
            let b = tape.extract_patch(&full, 30 + dx, 30, k).unwrap();
            // Column c of the shifted patch shows the same world content as
            // column c + dx of the original wherever both are in range.
            for c in 0..3 {
                for r in 0..k {
                    for col in 0..(k - dx as usize) {
                        let lhs = b.data()[c * k * k + r * k + col];
                        let rhs = a.data()[c * k * k + r * k + col + dx as usize];
                        prop_assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }
}
