//! Primitive surfaces and the synthetic shape catalogue.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// A surface patch that can be sampled uniformly by area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Sphere { radius: f64 },
    /// Closed axis-aligned box.
    Box { center: Point3, half: Point3 },
    /// Lateral surface of a vertical cylinder.
    Tube { center: [f64; 2], radius: f64, z0: f64, z1: f64 },
    /// Horizontal disk at height `z`.
    Disk { center: [f64; 2], radius: f64, z: f64 },
    /// Lateral surface of a vertical truncated cone, radius `r0` at `z0` and
    /// `r1` at `z1`.
    Frustum { r0: f64, r1: f64, z0: f64, z1: f64 },
    /// Torus section with the ring angle in `[phi0, phi1]`. `upright` puts the
    /// ring in the xz plane, otherwise in the xy plane.
    Torus { center: Point3, major: f64, minor: f64, phi0: f64, phi1: f64, upright: bool },
}

impl Surface {
    pub fn area(&self) -> f64 {
        match *self {
            Surface::Sphere { radius } => 4.0 * PI * radius * radius,
            Surface::Box { half: [a, b, c], .. } => 8.0 * (a * b + b * c + a * c),
            Surface::Tube { radius, z0, z1, .. } => 2.0 * PI * radius * (z1 - z0).abs(),
            Surface::Disk { radius, .. } => PI * radius * radius,
            Surface::Frustum { r0, r1, z0, z1 } => {
                PI * (r0 + r1) * ((r1 - r0).powi(2) + (z1 - z0).powi(2)).sqrt()
            }
            Surface::Torus { major, minor, phi0, phi1, .. } => (phi1 - phi0) * major * 2.0 * PI * minor,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        match *self {
            Surface::Sphere { radius } => loop {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break v.map(|x| radius * x / n);
                }
            },
            Surface::Box { center, half } => {
                let [a, b, c] = half;
                let areas = [b * c, a * c, a * b];
                let mut pick = rng.random::<f64>() * (areas[0] + areas[1] + areas[2]);
                let mut axis = 2;
                for (i, &w) in areas.iter().enumerate() {
                    if pick < w {
                        axis = i;
                        break;
                    }
                    pick -= w;
                }
                let mut p: Point3 = std::array::from_fn(|i| half[i] * rng.random_range(-1.0..=1.0));
                p[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
                std::array::from_fn(|i| center[i] + p[i])
            }
            Surface::Tube { center, radius, z0, z1 } => {
                let t = rng.random_range(0.0..2.0 * PI);
                [center[0] + radius * t.cos(), center[1] + radius * t.sin(), rng.random_range(z0..=z1)]
            }
            Surface::Disk { center, radius, z } => {
                let r = radius * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..2.0 * PI);
                [center[0] + r * t.cos(), center[1] + r * t.sin(), z]
            }
            Surface::Frustum { r0, r1, z0, z1 } => {
                let rmax = r0.max(r1);
                let s = loop {
                    let s: f64 = rng.random();
                    if rng.random::<f64>() * rmax <= r0 + (r1 - r0) * s {
                        break s;
                    }
                };
                let r = r0 + (r1 - r0) * s;
                let t = rng.random_range(0.0..2.0 * PI);
                [r * t.cos(), r * t.sin(), z0 + (z1 - z0) * s]
            }
            Surface::Torus { center, major, minor, phi0, phi1, upright } => {
                // tube angle density is proportional to the local ring radius
                let theta = loop {
                    let th = rng.random_range(0.0..2.0 * PI);
                    if rng.random::<f64>() * (major + minor) <= major + minor * th.cos() {
                        break th;
                    }
                };
                let phi = rng.random_range(phi0..=phi1);
                let ring = major + minor * theta.cos();
                let (u, v, w) = (ring * phi.cos(), ring * phi.sin(), minor * theta.sin());
                let local = if upright { [u, w, v] } else { [u, v, w] };
                std::array::from_fn(|i| center[i] + local[i])
            }
        }
    }
}

fn pick_surface<'a, R: Rng + ?Sized>(surfaces: &'a [Surface], rng: &mut R) -> &'a Surface {
    let total: f64 = surfaces.iter().map(Surface::area).sum();
    let mut pick = rng.random::<f64>() * total;
    for s in surfaces {
        if pick < s.area() {
            return s;
        }
        pick -= s.area();
    }
    surfaces.last().expect("non-empty surface list")
}

/// Classification primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }

    /// Surfaces before rotation and normalization. All are symmetric under
    /// `p -> -p`.
    pub fn surfaces(self) -> Vec<Surface> {
        match self {
            ShapeKind::Sphere => vec![Surface::Sphere { radius: 1.0 }],
            ShapeKind::Cube => vec![Surface::Box { center: [0.0; 3], half: [1.0; 3] }],
            ShapeKind::Cylinder => vec![
                Surface::Tube { center: [0.0; 2], radius: 0.6, z0: -1.0, z1: 1.0 },
                Surface::Disk { center: [0.0; 2], radius: 0.6, z: 1.0 },
                Surface::Disk { center: [0.0; 2], radius: 0.6, z: -1.0 },
            ],
            ShapeKind::Torus => vec![Surface::Torus {
                center: [0.0; 3],
                major: 1.0,
                minor: 0.35,
                phi0: 0.0,
                phi1: 2.0 * PI,
                upright: false,
            }],
        }
    }
}

/// Part-segmentation categories with globally numbered part labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Mug,
    Lamp,
    Table,
}

pub const PART_NAMES: [&str; 7] = ["body", "handle", "base", "pole", "shade", "top", "legs"];

impl PartKind {
    pub const ALL: [PartKind; 3] = [PartKind::Mug, PartKind::Lamp, PartKind::Table];

    pub fn name(self) -> &'static str {
        match self {
            PartKind::Mug => "mug",
            PartKind::Lamp => "lamp",
            PartKind::Table => "table",
        }
    }

    /// Global labels of this category's parts.
    pub fn part_labels(self) -> &'static [u16] {
        match self {
            PartKind::Mug => &[0, 1],
            PartKind::Lamp => &[2, 3, 4],
            PartKind::Table => &[5, 6],
        }
    }

    /// `(label, surfaces)` for every part, in label order.
    pub fn parts(self) -> Vec<(u16, Vec<Surface>)> {
        match self {
            PartKind::Mug => vec![
                (
                    0,
                    vec![
                        Surface::Tube { center: [0.0; 2], radius: 0.5, z0: -0.6, z1: 0.6 },
                        Surface::Disk { center: [0.0; 2], radius: 0.5, z: -0.6 },
                    ],
                ),
                (
                    1,
                    vec![Surface::Torus {
                        center: [0.5, 0.0, 0.0],
                        major: 0.35,
                        minor: 0.1,
                        phi0: -PI / 2.0,
                        phi1: PI / 2.0,
                        upright: true,
                    }],
                ),
            ],
            PartKind::Lamp => vec![
                (
                    2,
                    vec![
                        Surface::Tube { center: [0.0; 2], radius: 0.6, z0: -1.0, z1: -0.9 },
                        Surface::Disk { center: [0.0; 2], radius: 0.6, z: -0.9 },
                        Surface::Disk { center: [0.0; 2], radius: 0.6, z: -1.0 },
                    ],
                ),
                (3, vec![Surface::Tube { center: [0.0; 2], radius: 0.08, z0: -0.9, z1: 0.3 }]),
                (4, vec![Surface::Frustum { r0: 0.6, r1: 0.25, z0: 0.3, z1: 0.8 }]),
            ],
            PartKind::Table => {
                let legs = [[-0.85, -0.45], [-0.85, 0.45], [0.85, -0.45], [0.85, 0.45]]
                    .iter()
                    .map(|&c| Surface::Tube { center: c, radius: 0.06, z0: -0.5, z1: 0.45 })
                    .collect();
                vec![
                    (5, vec![Surface::Box { center: [0.0, 0.0, 0.5], half: [1.0, 0.6, 0.05] }]),
                    (6, legs),
                ]
            }
        }
    }
}

/// Splits `n` into integer counts proportional to `weights` (largest
/// remainder; ties go to the earlier entry).
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Raw surface samples of a primitive: no noise, rotation or normalization.
/// Points come in antithetic pairs `p, -p`; an odd count ends with one
/// unpaired point.
pub fn sample_surface<R: Rng + ?Sized>(kind: ShapeKind, n: usize, rng: &mut R) -> Vec<Point3> {
    let surfaces = kind.surfaces();
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = pick_surface(&surfaces, rng).sample(rng);
        pts.push(p);
        if pts.len() < n {
            pts.push(p.map(|x| -x));
        }
    }
    pts
}

/// Rotates about the up (z) axis.
pub fn rotate_z(points: &mut [Point3], angle: f64) {
    let (s, c) = angle.sin_cos();
    for p in points {
        let [x, y, z] = *p;
        *p = [c * x - s * y, s * x + c * y, z];
    }
}

/// Moves the centroid to the origin and scales the farthest point to radius 1.
pub fn normalize(points: &mut [Point3]) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points.iter() {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    let c = c.map(|v| v / n);
    let mut r2: f64 = 0.0;
    for p in points.iter_mut() {
        for i in 0..3 {
            p[i] -= c[i];
        }
        r2 = r2.max(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    }
    let r = r2.sqrt();
    if r > 0.0 {
        for p in points.iter_mut() {
            *p = p.map(|v| v / r);
        }
    }
}

pub const MIN_POINTS: usize = 32;

/// Samples a labelled primitive: uniform surface points, Gaussian jitter of
/// standard deviation `noise_sigma`, a random rotation about z, then
/// normalization.
pub fn gen_shape<R: Rng + ?Sized>(kind: ShapeKind, n_points: usize, noise_sigma: f64, rng: &mut R) -> Result<PointCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::contract(format!("shapes need at least {MIN_POINTS} points")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::contract("noise sigma must be finite and non-negative"));
    }
    let mut pts = sample_surface(kind, n_points, rng);
    if noise_sigma > 0.0 {
        for p in &mut pts {
            for v in p.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += noise_sigma * e;
            }
        }
    }
    rotate_z(&mut pts, rng.random_range(0.0..2.0 * PI));
    normalize(&mut pts);
    let label = ShapeKind::ALL.iter().position(|&k| k == kind).unwrap() as u16;
    Ok(PointCloud::new(pts)?.with_cloud_label(label))
}

/// Samples a part-labelled object. Part point counts follow the part surface
/// areas (largest remainder). The cloud label is the category index.
pub fn gen_part_shape<R: Rng + ?Sized>(kind: PartKind, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::contract(format!("shapes need at least {MIN_POINTS} points")));
    }
    let parts = kind.parts();
    let areas: Vec<f64> = parts.iter().map(|(_, s)| s.iter().map(Surface::area).sum()).collect();
    let counts = largest_remainder(n_points, &areas);
    let mut pts = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for ((label, surfaces), &count) in parts.iter().zip(&counts) {
        for _ in 0..count {
            pts.push(pick_surface(surfaces, rng).sample(rng));
            labels.push(*label);
        }
    }
    rotate_z(&mut pts, rng.random_range(0.0..2.0 * PI));
    normalize(&mut pts);
    let category = PartKind::ALL.iter().position(|&k| k == kind).unwrap() as u16;
    PointCloud::new(pts)?.with_point_labels(labels).map(|c| c.with_cloud_label(category))
}

/// Target fraction of points for each part of `kind`, in label order.
pub fn part_area_ratios(kind: PartKind) -> Vec<f64> {
    let areas: Vec<f64> = kind.parts().iter().map(|(_, s)| s.iter().map(Surface::area).sum()).collect();
    let total: f64 = areas.iter().sum();
    areas.iter().map(|a| a / total).collect()
}
