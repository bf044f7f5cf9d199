//! Coordinate-frame math shared by every other module: yaw rotations,
//! polar decomposition, oriented-box containment and BEV overlap.
//!
//! Angle convention: every angle is wrapped to `[-PI, PI)` and all angle
//! comparisons go through wrapped differences.

use std::f64::consts::PI;
use std::ops::Deref;

use crate::error::{Error, Result};

/// Wrap an angle to `[-PI, PI)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = (a + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can round up to exactly 2*PI for tiny negative inputs.
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

/// Wrapped difference `a - b` in `[-PI, PI)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// One LiDAR return: position in the ego frame plus reflectivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectivity in [0, 1].
    pub r: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, r: f64) -> Self {
        Point { x, y, z, r }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.r.is_finite()
    }
}

/// Flat record array of LiDAR returns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new() -> Self {
        PointCloud { points: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            points: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, p: Point) {
        self.points.push(p);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

impl From<Vec<Point>> for PointCloud {
    fn from(points: Vec<Point>) -> Self {
        PointCloud { points }
    }
}

impl Deref for PointCloud {
    type Target = [Point];

    fn deref(&self) -> &[Point] {
        &self.points
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

/// Yaw-only oriented 3D bounding box. `l` runs along the heading, `w`
/// lateral, `h` vertical; `yaw` is stored wrapped to `[-PI, PI)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Validating constructor: extents must be strictly positive and all
    /// fields finite. The yaw is wrapped.
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        for (name, v) in [
            ("cx", cx),
            ("cy", cy),
            ("cz", cz),
            ("l", l),
            ("w", w),
            ("h", h),
            ("yaw", yaw),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "box field {name} is not finite: {v}"
                )));
            }
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::Validation(format!(
                "box extents must be positive: l={l} w={w} h={h}"
            )));
        }
        Ok(Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: wrap_angle(yaw),
        })
    }

    /// Express a point in the box frame: translate by the center, rotate by
    /// `-yaw`. Returns (along-heading, lateral, vertical) offsets.
    pub fn to_local(&self, p: &Point) -> (f64, f64, f64) {
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        let (sin_t, cos_t) = self.yaw.sin_cos();
        let u = dx * cos_t + dy * sin_t;
        let v = -dx * sin_t + dy * cos_t;
        (u, v, p.z - self.cz)
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: &Point) -> bool {
        let (u, v, s) = self.to_local(p);
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0 && s.abs() <= self.h / 2.0
    }

    /// Boundary-inclusive containment of the BEV footprint only.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let (u, v, _) = self.to_local(&Point::new(x, y, 0.0, 0.0));
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0
    }

    /// The four BEV corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (sin_t, cos_t) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let mut out = [[0.0; 2]; 4];
        for (i, (su, sv)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            let u: f64 = su * hl;
            let v: f64 = sv * hw;
            out[i] = [
                self.cx + u * cos_t - v * sin_t,
                self.cy + u * sin_t + v * cos_t,
            ];
        }
        out
    }
}

/// Range and azimuth of a BEV position relative to the sensor origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarPosition {
    pub range: f64,
    /// Four-quadrant azimuth in `[-PI, PI)`.
    pub azimuth: f64,
}

/// Rotate the XY components of a point about the origin; z and r pass through.
pub fn yaw_rotate(p: Point, delta: f64) -> Point {
    let (sin_d, cos_d) = delta.sin_cos();
    Point {
        x: p.x * cos_d - p.y * sin_d,
        y: p.x * sin_d + p.y * cos_d,
        z: p.z,
        r: p.r,
    }
}

/// Polar decomposition of a BEV position. `(0, 0)` maps to range 0,
/// azimuth 0 by convention.
pub fn to_polar(x: f64, y: f64) -> PolarPosition {
    if x == 0.0 && y == 0.0 {
        return PolarPosition {
            range: 0.0,
            azimuth: 0.0,
        };
    }
    // atan2 already lands in [-PI, PI]; only the closed end needs remapping.
    let a = y.atan2(x);
    PolarPosition {
        range: x.hypot(y),
        azimuth: if a == PI { -PI } else { a },
    }
}

/// Heading plus azimuth, wrapped: the quantity preserved when an object is
/// relocated so the sensor keeps seeing the same faces. Undefined for a box
/// centered on the sensor origin.
pub fn observing_angle(b: &Box3D) -> Result<f64> {
    if b.cx == 0.0 && b.cy == 0.0 {
        return Err(Error::Validation(
            "observing angle undefined for a box centered at the origin".into(),
        ));
    }
    Ok(wrap_angle(b.yaw + b.cy.atan2(b.cx)))
}

/// Indices of points inside the box, boundary inclusive.
pub fn points_in_box(cloud: &PointCloud, b: &Box3D) -> Vec<usize> {
    let (sin_t, cos_t) = b.yaw.sin_cos();
    let hl = b.l / 2.0;
    let hw = b.w / 2.0;
    let hh = b.h / 2.0;
    cloud
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let dx = p.x - b.cx;
            let dy = p.y - b.cy;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let s = p.z - b.cz;
            if u.abs() <= hl && v.abs() <= hw && s.abs() <= hh {
                Some(i)
            } else {
                None
            }
        })
        .collect()
}

fn project(corners: &[[f64; 2]; 4], ax: f64, ay: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c[0] * ax + c[1] * ay;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// True iff the BEV footprints intersect with positive area, decided by the
/// separating-axis test over the four edge normals. Boxes that merely touch
/// along an edge or corner do not overlap.
pub fn bev_overlap(a: &Box3D, b: &Box3D) -> bool {
    let ca = a.bev_corners();
    let cb = b.bev_corners();
    for corners in [&ca, &cb] {
        // Opposite rectangle edges are parallel, so two normals per box suffice.
        for i in 0..2 {
            let j = i + 1;
            let ex = corners[j][0] - corners[i][0];
            let ey = corners[j][1] - corners[i][1];
            let (ax, ay) = (-ey, ex);
            let (lo_a, hi_a) = project(&ca, ax, ay);
            let (lo_b, hi_b) = project(&cb, ax, ay);
            if hi_a <= lo_b || hi_b <= lo_a {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_angle_convention() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), -PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(2.0 * PI + 0.5), 0.5, epsilon = 1e-12);
        assert!(wrap_angle(-1e-18) < PI);
    }

    #[test]
    fn yaw_rotate_quarter_turn() {
        let p = yaw_rotate(Point::new(1.0, 0.0, 0.0, 0.3), PI / 2.0);
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-9);
        assert_eq!(p.z, 0.0);
        assert_eq!(p.r, 0.3);
    }

    #[test]
    fn yaw_rotate_identity() {
        let p = Point::new(-2.5, 7.25, 1.5, 0.75);
        assert_eq!(yaw_rotate(p, 0.0), p);
    }

    #[test]
    fn yaw_rotate_matches_matrix_oracle() {
        // Independent 2x2 rotation-matrix multiply.
        let p = Point::new(0.3, -1.2, 0.5, 0.9);
        let delta = 0.7f64;
        let m = [[delta.cos(), -delta.sin()], [delta.sin(), delta.cos()]];
        let expect_x = m[0][0] * p.x + m[0][1] * p.y;
        let expect_y = m[1][0] * p.x + m[1][1] * p.y;
        let q = yaw_rotate(p, delta);
        assert_abs_diff_eq!(q.x, expect_x, epsilon = 1e-9);
        assert_abs_diff_eq!(q.y, expect_y, epsilon = 1e-9);
    }

    #[test]
    fn yaw_rotate_preserves_norm_and_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point> = (0..64)
            .map(|_| {
                Point::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-3.0..3.0),
                    rng.random(),
                )
            })
            .collect();
        for _ in 0..16 {
            let delta = rng.random_range(-10.0..10.0);
            let rotated: Vec<Point> = pts.iter().map(|&p| yaw_rotate(p, delta)).collect();
            for (p, q) in pts.iter().zip(&rotated) {
                assert_abs_diff_eq!(p.x.hypot(p.y), q.x.hypot(q.y), epsilon = 1e-9);
            }
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    let d0 = (pts[i].x - pts[j].x).hypot(pts[i].y - pts[j].y);
                    let d1 = (rotated[i].x - rotated[j].x).hypot(rotated[i].y - rotated[j].y);
                    assert_abs_diff_eq!(d0, d1, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn to_polar_cases() {
        let p = to_polar(3.0, 4.0);
        assert_eq!(p.range, 5.0);
        assert_eq!(p.azimuth, 4.0f64.atan2(3.0));

        let p = to_polar(-1.0, 0.0);
        assert_eq!(p.range, 1.0);
        assert_eq!(p.azimuth, -PI); // PI wraps to -PI under the [-PI, PI) convention

        let p = to_polar(0.0, 0.0);
        assert_eq!(p.range, 0.0);
        assert_eq!(p.azimuth, 0.0);
    }

    #[test]
    fn to_polar_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let range = rng.random_range(0.01..80.0);
            let azimuth = rng.random_range(-PI..PI);
            let p = to_polar(range * azimuth.cos(), range * azimuth.sin());
            assert_abs_diff_eq!(p.range, range, epsilon = 1e-9);
            assert_abs_diff_eq!(angle_diff(p.azimuth, azimuth), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn observing_angle_cases() {
        let b = Box3D::new(5.0, 0.0, 0.0, 4.0, 2.0, 1.5, PI / 4.0).unwrap();
        assert_abs_diff_eq!(observing_angle(&b).unwrap(), PI / 4.0, epsilon = 1e-12);

        let b = Box3D::new(0.0, 5.0, 0.0, 4.0, 2.0, 1.5, -PI / 2.0).unwrap();
        assert_abs_diff_eq!(observing_angle(&b).unwrap(), 0.0, epsilon = 1e-12);

        // Direct evaluation oracle: theta + atan2(y, x).
        let b = Box3D::new(3.0, 4.0, 0.0, 4.0, 2.0, 1.5, 0.2).unwrap();
        let expect = 0.2 + 4.0f64.atan2(3.0);
        assert_abs_diff_eq!(
            observing_angle(&b).unwrap(),
            wrap_angle(expect),
            epsilon = 1e-9
        );

        let b = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap();
        assert!(observing_angle(&b).is_err());
    }

    #[test]
    fn box_rejects_bad_extents() {
        assert!(Box3D::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn box_normalizes_yaw() {
        let b = Box3D::new(1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 3.0 * PI).unwrap();
        assert!((-PI..PI).contains(&b.yaw));
    }

    #[test]
    fn points_in_box_center_and_boundary() {
        let b = Box3D::new(2.0, -1.0, 0.5, 4.0, 2.0, 1.0, 0.6).unwrap();
        let center = Point::new(2.0, -1.0, 0.5, 0.0);
        assert!(b.contains(&center));

        // Just outside along the heading axis, expressed in the box frame.
        let over = yaw_rotate(Point::new(b.l / 2.0 + 1e-3, 0.0, 0.0, 0.0), b.yaw);
        let outside = Point::new(b.cx + over.x, b.cy + over.y, b.cz, 0.0);
        assert!(!b.contains(&outside));

        let cloud = PointCloud::from(vec![center, outside]);
        assert_eq!(points_in_box(&cloud, &b), vec![0]);
    }

    #[test]
    fn points_in_box_matches_halfspace_oracle() {
        // Corner-derived halfspace oracle: a point is inside iff its signed
        // distance along each face normal is within the half extent.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let b = Box3D::new(1.5, -2.0, 0.25, 3.0, 1.4, 1.8, 1.1).unwrap();
        let cloud: PointCloud = (0..1000)
            .map(|_| {
                Point::new(
                    rng.random_range(-3.0..6.0),
                    rng.random_range(-6.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random(),
                )
            })
            .collect();

        let axes = [
            (b.yaw.cos(), b.yaw.sin(), b.l / 2.0),
            (-b.yaw.sin(), b.yaw.cos(), b.w / 2.0),
        ];
        let oracle: Vec<usize> = cloud
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let inside_bev = axes
                    .iter()
                    .all(|&(ax, ay, half)| ((p.x - b.cx) * ax + (p.y - b.cy) * ay).abs() <= half);
                if inside_bev && (p.z - b.cz).abs() <= b.h / 2.0 {
                    Some(i)
                } else {
                    None
                }
            })
            .collect();

        assert_eq!(points_in_box(&cloud, &b), oracle);
    }

    #[test]
    fn points_in_box_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Box3D::new(4.0, 2.0, -0.5, 2.5, 1.2, 1.6, -0.8).unwrap();
        let cloud: PointCloud = (0..500)
            .map(|_| {
                Point::new(
                    rng.random_range(0.0..8.0),
                    rng.random_range(-2.0..6.0),
                    rng.random_range(-2.0..1.0),
                    rng.random(),
                )
            })
            .collect();
        let base = points_in_box(&cloud, &b);

        for _ in 0..8 {
            let delta = rng.random_range(-PI..PI);
            let tx = rng.random_range(-20.0..20.0);
            let ty = rng.random_range(-20.0..20.0);
            let moved: PointCloud = cloud
                .iter()
                .map(|&p| {
                    let q = yaw_rotate(p, delta);
                    Point::new(q.x + tx, q.y + ty, q.z, q.r)
                })
                .collect();
            let rc = yaw_rotate(Point::new(b.cx, b.cy, 0.0, 0.0), delta);
            let moved_box = Box3D::new(
                rc.x + tx,
                rc.y + ty,
                b.cz,
                b.l,
                b.w,
                b.h,
                wrap_angle(b.yaw + delta),
            )
            .unwrap();
            assert_eq!(points_in_box(&moved, &moved_box), base);
        }
    }

    #[test]
    fn bev_overlap_basic() {
        let a = Box3D::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.3).unwrap();
        assert!(bev_overlap(&a, &a), "a box overlaps itself");

        let b = Box3D::new(10.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(!bev_overlap(&a, &b));

        // Edge contact has zero area and does not count.
        let c = Box3D::new(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let d = Box3D::new(2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(!bev_overlap(&c, &d));
    }

    #[test]
    fn bev_overlap_symmetric_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let v = bev_overlap(&a, &b);
            assert_eq!(v, bev_overlap(&b, &a));
            let (tx, ty) = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
            let at = Box3D {
                cx: a.cx + tx,
                cy: a.cy + ty,
                ..a
            };
            let bt = Box3D {
                cx: b.cx + tx,
                cy: b.cy + ty,
                ..b
            };
            assert_eq!(v, bev_overlap(&at, &bt));
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
        Box3D::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            0.0,
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..3.0),
            1.0,
            rng.random_range(-PI..PI),
        )
        .unwrap()
    }

    /// Monte-Carlo area-sampling oracle for the separating-axis verdicts.
    /// Near-tangent pairs (tiny overlap area and tiny separation margin)
    /// are skipped.
    #[test]
    fn bev_overlap_matches_monte_carlo_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0usize;
        for _ in 0..500 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);

            // Sampling window: joint axis-aligned bounds of both footprints.
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in a.bev_corners().iter().chain(b.bev_corners().iter()) {
                for k in 0..2 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
            let window = (hi[0] - lo[0]) * (hi[1] - lo[1]);
            let samples = 100_000;
            let mut inside_both = 0u32;
            for _ in 0..samples {
                let x = rng.random_range(lo[0]..hi[0]);
                let y = rng.random_range(lo[1]..hi[1]);
                if a.footprint_contains(x, y) && b.footprint_contains(x, y) {
                    inside_both += 1;
                }
            }
            let est_area = window * inside_both as f64 / samples as f64;

            // Separation margin: the widest gap over the four SAT axes,
            // recomputed here from corner projections.
            let ca = a.bev_corners();
            let cb = b.bev_corners();
            let mut margin = f64::NEG_INFINITY;
            for corners in [&ca, &cb] {
                for i in 0..2 {
                    let ex = corners[i + 1][0] - corners[i][0];
                    let ey = corners[i + 1][1] - corners[i][1];
                    let n = ex.hypot(ey);
                    let (ax, ay) = (-ey / n, ex / n);
                    let (lo_a, hi_a) = project(&ca, ax, ay);
                    let (lo_b, hi_b) = project(&cb, ax, ay);
                    margin = margin.max((lo_b - hi_a).max(lo_a - hi_b));
                }
            }

            let verdict = bev_overlap(&a, &b);
            if est_area > 1e-3 {
                assert!(verdict, "area {est_area} but no overlap reported");
                checked += 1;
            } else if margin > 1e-3 {
                assert!(!verdict, "margin {margin} but overlap reported");
                checked += 1;
            }
        }
        assert!(checked > 400, "oracle skipped too many pairs: {checked}");
    }
}
