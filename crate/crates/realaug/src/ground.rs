//! Per-point ground labeling by sector-wise iterative plane fitting. The
//! BEV plane is partitioned into concentric rings and azimuth sectors; each
//! cell fits a plane seeded from its lowest points and keeps the points
//! within a vertical residual band.

use std::f64::consts::PI;

use crate::geometry::{to_polar, PointCloud};

/// Per-point placeability mask (true = ground).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundLabels {
    pub mask: Vec<bool>,
}

impl GroundLabels {
    pub fn all(len: usize, value: bool) -> Self {
        GroundLabels {
            mask: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count_true(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug)]
pub struct GroundFitConfig {
    /// Outer radius of each concentric ring, ascending. Points beyond the
    /// last radius are labeled non-ground.
    pub ring_radii: Vec<f64>,
    pub sectors: usize,
    /// Vertical residual band: a point is ground iff |z - plane(x, y)| <= epsilon.
    pub epsilon: f64,
    pub iterations: usize,
    /// Cells with fewer points inherit the nearest fitted plane in their sector.
    pub min_cell_points: usize,
    /// Fraction of lowest-z points used to seed the first fit.
    pub seed_fraction: f64,
}

impl Default for GroundFitConfig {
    fn default() -> Self {
        GroundFitConfig {
            ring_radii: vec![10.0, 20.0, 40.0, 80.0],
            sectors: 16,
            epsilon: 0.2,
            iterations: 3,
            min_cell_points: 10,
            seed_fraction: 0.2,
        }
    }
}

impl GroundFitConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        use crate::error::Error;
        if self.ring_radii.is_empty() {
            return Err(Error::Validation(
                "ground.ring_radii must not be empty".into(),
            ));
        }
        let mut prev = 0.0;
        for &r in &self.ring_radii {
            if !r.is_finite() || r <= prev {
                return Err(Error::Validation(format!(
                    "ground.ring_radii must be positive and strictly increasing: {:?}",
                    self.ring_radii
                )));
            }
            prev = r;
        }
        if self.sectors == 0 {
            return Err(Error::Validation("ground.sectors must be >= 1".into()));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Validation(format!(
                "ground.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Validation("ground.iterations must be >= 1".into()));
        }
        if self.seed_fraction <= 0.0 || self.seed_fraction > 1.0 {
            return Err(Error::Validation(format!(
                "ground.seed_fraction must be in (0, 1], got {}",
                self.seed_fraction
            )));
        }
        Ok(())
    }
}

/// Plane z = a*x + b*y + c.
#[derive(Clone, Copy, Debug)]
struct Plane {
    a: f64,
    b: f64,
    c: f64,
}

impl Plane {
    fn residual(&self, x: f64, y: f64, z: f64) -> f64 {
        z - (self.a * x + self.b * y + self.c)
    }
}

/// Least-squares plane through the given points. Falls back to a horizontal
/// plane at the mean height when the normal equations are singular
/// (collinear points).
#[allow(clippy::needless_range_loop)] // elimination indexes two rows at once
fn fit_plane(points: &PointCloud, idxs: &[usize]) -> Plane {
    let n = idxs.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in idxs {
        let p = &points[i];
        sx += p.x;
        sy += p.y;
        sz += p.z;
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
        sxz += p.x * p.z;
        syz += p.y * p.z;
    }
    let mut m = [[sxx, sxy, sx, sxz], [sxy, syy, sy, syz], [sx, sy, n, sz]];

    // Gaussian elimination with partial pivoting on the 3x3 system.
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-9 * n.max(1.0) {
            let c = if idxs.is_empty() { 0.0 } else { sz / n };
            return Plane { a: 0.0, b: 0.0, c };
        }
        m.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let c = m[2][3] / m[2][2];
    let b = (m[1][3] - m[1][2] * c) / m[1][1];
    let a = (m[0][3] - m[0][1] * b - m[0][2] * c) / m[0][0];
    Plane { a, b, c }
}

/// Label every point as ground or not. Cells below `min_cell_points`
/// inherit the nearest fitted ring neighbor in the same sector, preferring
/// the inner ring on ties; sectors with no fitted cell at all label their
/// points non-ground.
pub fn ground_fit(cloud: &PointCloud, cfg: &GroundFitConfig) -> GroundLabels {
    let n = cloud.len();
    let mut mask = vec![false; n];
    if n == 0 || cfg.ring_radii.is_empty() || cfg.sectors == 0 {
        return GroundLabels { mask };
    }

    let rings = cfg.ring_radii.len();
    let sector_width = 2.0 * PI / cfg.sectors as f64;
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); rings * cfg.sectors];
    for (i, p) in cloud.iter().enumerate() {
        let polar = to_polar(p.x, p.y);
        let Some(ring) = cfg.ring_radii.iter().position(|&r| polar.range < r) else {
            continue;
        };
        let sector = (((polar.azimuth + PI) / sector_width).floor() as usize).min(cfg.sectors - 1);
        cells[ring * cfg.sectors + sector].push(i);
    }

    let mut planes: Vec<Option<Plane>> = vec![None; rings * cfg.sectors];
    for (cell, idxs) in cells.iter().enumerate() {
        if idxs.len() < cfg.min_cell_points {
            continue;
        }
        // Seed with the lowest-z slice of the cell.
        let mut by_height: Vec<usize> = idxs.clone();
        by_height.sort_by(|&a, &b| cloud[a].z.partial_cmp(&cloud[b].z).unwrap());
        let seed_len = ((idxs.len() as f64 * cfg.seed_fraction).ceil() as usize)
            .clamp(3.min(idxs.len()), idxs.len());
        let mut current: Vec<usize> = by_height[..seed_len].to_vec();

        let mut plane = fit_plane(cloud, &current);
        for it in 0..cfg.iterations {
            if it > 0 {
                plane = fit_plane(cloud, &current);
            }
            let inliers: Vec<usize> = idxs
                .iter()
                .copied()
                .filter(|&i| {
                    plane.residual(cloud[i].x, cloud[i].y, cloud[i].z).abs() <= cfg.epsilon
                })
                .collect();
            if inliers.len() < 3 {
                break;
            }
            current = inliers;
        }
        planes[cell] = Some(plane);
    }

    for ring in 0..rings {
        for sector in 0..cfg.sectors {
            let cell = ring * cfg.sectors + sector;
            if cells[cell].is_empty() {
                continue;
            }
            let plane = planes[cell].or_else(|| {
                // Nearest fitted ring in the same sector, inner ring on ties.
                (1..rings)
                    .flat_map(|d| [ring.checked_sub(d), Some(ring + d)])
                    .flatten()
                    .filter(|&r| r < rings)
                    .find_map(|r| planes[r * cfg.sectors + sector])
            });
            if let Some(plane) = plane {
                for &i in &cells[cell] {
                    mask[i] =
                        plane.residual(cloud[i].x, cloud[i].y, cloud[i].z).abs() <= cfg.epsilon;
                }
            }
        }
    }
    GroundLabels { mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn disk_cloud<F: FnMut(f64, f64) -> f64>(
        rng: &mut ChaCha8Rng,
        n: usize,
        max_r: f64,
        mut height: F,
    ) -> PointCloud {
        (0..n)
            .map(|_| {
                let range = (rng.random::<f64>()).sqrt() * max_r;
                let az = rng.random_range(-PI..PI);
                let (x, y) = (range * az.cos(), range * az.sin());
                Point::new(x, y, height(x, y), 0.5)
            })
            .collect()
    }

    #[test]
    fn perfect_plane_is_all_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = disk_cloud(&mut rng, 10_000, 70.0, |_, _| -1.8);
        let labels = ground_fit(&cloud, &GroundFitConfig::default());
        assert_eq!(labels.count_true(), cloud.len());
    }

    #[test]
    fn elevated_cluster_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cloud = disk_cloud(&mut rng, 8_000, 40.0, |_, _| -1.8);
        let plane_len = cloud.len();
        // 2 m tall box cluster whose lowest point sits a full meter above
        // the plane, far outside the residual band.
        let mut points = cloud.into_points();
        for _ in 0..500 {
            points.push(Point::new(
                10.0 + rng.random_range(-1.0..1.0),
                5.0 + rng.random_range(-1.0..1.0),
                rng.random_range(-0.8..1.2),
                0.5,
            ));
        }
        cloud = points.into();
        let labels = ground_fit(&cloud, &GroundFitConfig::default());
        for i in 0..plane_len {
            assert!(labels.mask[i], "plane point {i} mislabeled");
        }
        for i in plane_len..cloud.len() {
            assert!(!labels.mask[i], "cluster point {i} mislabeled");
        }
    }

    #[test]
    fn tilted_noisy_plane_matches_residual_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noise = ChaCha8Rng::seed_from_u64(4);
        let cloud = disk_cloud(&mut rng, 10_000, 60.0, |x, _| {
            0.05 * x - 1.8 + noise.random_range(-0.09..0.09)
        });
        let labels = ground_fit(&cloud, &GroundFitConfig::default());

        // Closed-form oracle: every point is within epsilon of the true
        // plane by construction (|noise| < 0.09, epsilon = 0.2), so at
        // least 99% must be labeled ground.
        let frac = labels.count_true() as f64 / cloud.len() as f64;
        assert!(frac >= 0.99, "ground fraction {frac}");
    }

    #[test]
    fn sparse_cells_inherit_ring_neighbor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Dense inner disk, plus a handful of points in an outer ring cell.
        let mut points = disk_cloud(&mut rng, 4_000, 9.0, |_, _| -1.5).into_points();
        let sparse_start = points.len();
        for i in 0..4 {
            points.push(Point::new(25.0 + i as f64 * 0.3, 0.1, -1.5, 0.5));
        }
        let cloud: PointCloud = points.into();
        let labels = ground_fit(&cloud, &GroundFitConfig::default());
        for i in sparse_start..cloud.len() {
            assert!(
                labels.mask[i],
                "sparse cell point {i} should inherit the inner plane"
            );
        }
    }

    #[test]
    fn empty_sector_with_no_neighbor_is_non_ground() {
        // All points beyond the outermost ring radius: nothing is labeled.
        let cloud: PointCloud = (0..20)
            .map(|i| Point::new(100.0 + i as f64, 0.0, -1.8, 0.5))
            .collect();
        let labels = ground_fit(&cloud, &GroundFitConfig::default());
        assert_eq!(labels.count_true(), 0);
    }

    #[test]
    fn config_validation_rejects_degenerate_grids() {
        let ok = GroundFitConfig::default();
        assert!(ok.validate().is_ok());
        assert!(GroundFitConfig {
            ring_radii: vec![],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(GroundFitConfig {
            ring_radii: vec![10.0, 10.0],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(GroundFitConfig {
            sectors: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(GroundFitConfig {
            epsilon: 0.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(GroundFitConfig {
            iterations: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(GroundFitConfig {
            seed_fraction: 1.5,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mask_invariant_under_z_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut noise = ChaCha8Rng::seed_from_u64(7);
        let mut points = disk_cloud(&mut rng, 6_000, 50.0, |x, y| {
            -1.8 + 0.02 * x - 0.01 * y + noise.random_range(-0.05..0.05)
        })
        .into_points();
        for _ in 0..300 {
            points.push(Point::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.0..2.0),
                0.5,
            ));
        }
        let cloud: PointCloud = points.into();
        let labels = ground_fit(&cloud, &GroundFitConfig::default());
        let shifted: PointCloud = cloud
            .iter()
            .map(|p| Point::new(p.x, p.y, p.z + 4.0, p.r))
            .collect();
        let shifted_labels = ground_fit(&shifted, &GroundFitConfig::default());
        assert_eq!(labels, shifted_labels);
    }
}
