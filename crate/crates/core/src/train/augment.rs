use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;

/// Training-time augmentation switches. A `None` disables that transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Upper bound of the random fraction of points replaced by the first
    /// point.
    pub dropout_max_ratio: Option<f64>,
    /// Per-axis shift drawn from `uniform(-s, s)`.
    pub shift_range: Option<f64>,
    /// Global scale drawn from `uniform(lo, hi)`.
    pub scale_range: Option<(f64, f64)>,
}

impl AugmentConfig {
    pub fn standard() -> Self {
        AugmentConfig {
            dropout_max_ratio: Some(0.875),
            shift_range: Some(0.1),
            scale_range: Some((0.8, 1.25)),
        }
    }

    pub fn none() -> Self {
        AugmentConfig { dropout_max_ratio: None, shift_range: None, scale_range: None }
    }
}

/// Applies point dropout, then scaling, then shifting. Dropped points take
/// the coordinates, attributes and part label of point 0.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut R) -> PointCloud {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    if let Some(max) = cfg.dropout_max_ratio {
        let ratio = rng.random::<f64>() * max;
        for slot in order.iter_mut() {
            if rng.random::<f64>() < ratio {
                *slot = 0;
            }
        }
    }
    let mut out = if order.iter().enumerate().all(|(i, &j)| i == j) {
        cloud.clone()
    } else {
        cloud.subset(&order).expect("indices are in range")
    };
    let scale = cfg.scale_range.map_or(1.0, |(lo, hi)| if lo < hi { rng.random_range(lo..hi) } else { lo });
    let shift: [f64; 3] = match cfg.shift_range {
        Some(s) if s > 0.0 => std::array::from_fn(|_| rng.random_range(-s..s)),
        _ => [0.0; 3],
    };
    if scale != 1.0 || shift != [0.0; 3] {
        for p in out.coords_mut() {
            for i in 0..3 {
                p[i] = p[i] * scale + shift[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud() -> PointCloud {
        let pts = (0..50).map(|i| [i as f64, 0.5 * i as f64, -1.0]).collect();
        PointCloud::new(pts).unwrap().with_point_labels((0..50).collect()).unwrap()
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let c = cloud();
        assert_eq!(augment(&c, &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(1)), c);
        let neutral = AugmentConfig {
            dropout_max_ratio: Some(0.0),
            shift_range: Some(0.0),
            scale_range: Some((1.0, 1.0)),
        };
        assert_eq!(augment(&c, &neutral, &mut ChaCha8Rng::seed_from_u64(1)), c);
    }

    #[test]
    fn same_seed_same_cloud() {
        let c = cloud();
        let cfg = AugmentConfig::standard();
        let a = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dropped_points_copy_the_first_point() {
        let c = cloud();
        let cfg = AugmentConfig { dropout_max_ratio: Some(0.875), ..AugmentConfig::none() };
        let a = augment(&c, &cfg, &mut ChaCha8Rng::seed_from_u64(11));
        let labels = a.point_labels().unwrap();
        for (i, p) in a.coords().iter().enumerate() {
            assert!(*p == c.coords()[i] || *p == c.coords()[0]);
            assert_eq!(c.coords()[labels[i] as usize], *p);
        }
    }
}
