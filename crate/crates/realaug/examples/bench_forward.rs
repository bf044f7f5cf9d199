use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use realaug::geometry::Point;
use realaug::placeability::{infer_mask, PlaceabilityModel};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud: realaug::geometry::PointCloud = (0..30_000)
        .map(|_| {
            Point::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-3.0..3.0),
                rng.random(),
            )
        })
        .collect();
    let model = PlaceabilityModel::init(10, 3);
    let _ = infer_mask(&model, &cloud, 0.5);
    for _ in 0..5 {
        let t = Instant::now();
        let m = infer_mask(&model, &cloud, 0.5);
        println!("infer 30k: {:?} ({} true)", t.elapsed(), m.count_true());
    }
}
