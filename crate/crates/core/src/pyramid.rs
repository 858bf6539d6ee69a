//! Point-wise feature pyramid: three parallel paths over farthest-point
//! subsets of decreasing resolution. Each path stacks three grouping layers
//! (ball query, shared MLP, max-pool over the group) that keep the path's
//! resolution fixed and return low, mid and high level features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_query, farthest_point_sample, farthest_point_sample_from, Point3, PointCloud};
use crate::params::{bind_mlp, init_mlp, shared_mlp, BoundParams, Dense, ModelParams};
use crate::tensor::{Graph, Tensor, Var};

/// One grouping layer: ball query `NN(radius, neighbors)` and its MLP widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub radius: f64,
    pub neighbors: usize,
    /// Output widths of the shared MLP; the input width is implied.
    pub mlp: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Points kept by farthest point sampling for this path.
    pub resolution: usize,
    pub layers: Vec<LayerSpec>,
}

impl LayerSpec {
    pub fn new(radius: f64, neighbors: usize, mlp: &[usize]) -> Self {
        LayerSpec {
            radius,
            neighbors,
            mlp: mlp.to_vec(),
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.mlp.last().expect("validated: non-empty mlp")
    }
}

impl PathConfig {
    /// Channel width shared by the three level features.
    pub fn channels(&self) -> usize {
        self.layers[0].out_channels()
    }

    /// Width of the per-neighbour input to layer `l` (0-based).
    pub fn layer_input(&self, l: usize, attr_dim: usize) -> usize {
        if l == 0 {
            3 + attr_dim
        } else {
            2 * self.layers[l - 1].out_channels()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Config("path resolution must be positive".into()));
        }
        if self.layers.len() != 3 {
            return Err(Error::Config(format!(
                "a path needs exactly 3 layers (low/mid/high), got {}",
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if !(layer.radius > 0.0) || layer.neighbors == 0 || layer.mlp.is_empty() {
                return Err(Error::Config(format!(
                    "layer {} needs radius > 0, K >= 1 and a non-empty MLP",
                    l + 1
                )));
            }
            if layer.mlp.contains(&0) {
                return Err(Error::Config(format!("layer {} has a zero-width MLP layer", l + 1)));
            }
        }
        if self.layers.windows(2).any(|w| w[1].radius <= w[0].radius) {
            return Err(Error::Config(
                "ball-query radii must strictly increase along a path".into(),
            ));
        }
        let c = self.channels();
        if self.layers.iter().any(|l| l.out_channels() != c) {
            return Err(Error::Config(
                "all three levels of a path must share one channel width".into(),
            ));
        }
        Ok(())
    }
}

/// Checks the three-path structure: strictly decreasing resolutions and a
/// common level width.
pub fn validate_paths(paths: &[PathConfig]) -> Result<()> {
    if paths.len() != 3 {
        return Err(Error::Config(format!("expected 3 pyramid paths, got {}", paths.len())));
    }
    for p in paths {
        p.validate()?;
    }
    if paths.windows(2).any(|w| w[1].resolution >= w[0].resolution) {
        return Err(Error::Config(
            "path resolutions must strictly decrease".into(),
        ));
    }
    if paths.iter().any(|p| p.channels() != paths[0].channels()) {
        return Err(Error::Config("all paths must share one channel width".into()));
    }
    Ok(())
}

/// Low, mid and high level features of one path, all `N_i x C`.
#[derive(Clone, Debug)]
pub struct LevelFeatures {
    pub low: Var,
    pub mid: Var,
    pub high: Var,
    /// Coordinates of the path's points, in sampling order.
    pub points: Vec<Point3>,
    /// Indices of those points in the input cloud.
    pub indices: Vec<usize>,
}

impl LevelFeatures {
    pub fn levels(&self) -> [Var; 3] {
        [self.low, self.mid, self.high]
    }
}

fn all_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// First grouping layer. Each neighbour contributes its offset from the
/// centroid (plus its extra attributes); the shared MLP runs per neighbour and
/// the result is max-pooled over the group.
pub fn group_and_pool_first(
    g: &mut Graph,
    path_pts: &[Point3],
    path_attrs: &[f64],
    attr_dim: usize,
    layer: &LayerSpec,
    mlp: &[Dense],
) -> Result<Var> {
    let n = path_pts.len();
    if path_attrs.len() != n * attr_dim {
        return Err(Error::Shape {
            op: "group_and_pool_first",
            lhs: vec![n, attr_dim],
            rhs: vec![path_attrs.len()],
        });
    }
    let k = layer.neighbors;
    let groups = ball_query(path_pts, &all_indices(n), layer.radius, k)?;
    let width = 3 + attr_dim;
    let mut input = Vec::with_capacity(n * k * width);
    for grp in &groups {
        for (&m, off) in grp.members.iter().zip(&grp.offsets) {
            input.extend_from_slice(off);
            input.extend_from_slice(&path_attrs[m * attr_dim..(m + 1) * attr_dim]);
        }
    }
    let x = g.constant(Tensor::matrix(n * k, width, input)?);
    let h = shared_mlp(g, x, mlp)?;
    g.group_max(h, k)
}

/// Deeper grouping layer. Each neighbour contributes
/// `concat(neighbour feature, centroid feature)`.
pub fn group_and_pool_deeper(
    g: &mut Graph,
    path_pts: &[Point3],
    feats: Var,
    layer: &LayerSpec,
    mlp: &[Dense],
) -> Result<Var> {
    let n = path_pts.len();
    if g.value(feats).rows() != n {
        return Err(Error::Shape {
            op: "group_and_pool_deeper",
            lhs: g.shape(feats).to_vec(),
            rhs: vec![n, 3],
        });
    }
    let k = layer.neighbors;
    let groups = ball_query(path_pts, &all_indices(n), layer.radius, k)?;
    let members: Vec<usize> = groups.iter().flat_map(|grp| grp.members.iter().copied()).collect();
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let nb = g.gather_rows(feats, &members)?;
    let ct = g.gather_rows(feats, &centers)?;
    let x = g.concat_cols(&[nb, ct])?;
    let h = shared_mlp(g, x, mlp)?;
    g.group_max(h, k)
}

/// Farthest point sampling for one path.
pub fn sample_path(cloud: &PointCloud, resolution: usize, fps_start: Option<usize>) -> Result<Vec<usize>> {
    if resolution > cloud.len() {
        return Err(Error::contract(format!(
            "path resolution {resolution} exceeds the {} input points",
            cloud.len()
        )));
    }
    match fps_start {
        None => farthest_point_sample(cloud.coords(), resolution),
        Some(seed) => farthest_point_sample_from(cloud.coords(), resolution, seed % cloud.len()),
    }
}

/// Runs one path's three grouping layers on its sampled points.
pub fn run_path(
    g: &mut Graph,
    cloud: &PointCloud,
    indices: Vec<usize>,
    cfg: &PathConfig,
    params: &BoundParams,
    prefix: &str,
    standardize: bool,
) -> Result<LevelFeatures> {
    let sub = cloud.subset(&indices)?;
    let pts = sub.coords().to_vec();
    let mut levels = Vec::with_capacity(3);
    for (l, layer) in cfg.layers.iter().enumerate() {
        let mlp = bind_mlp(params, &format!("{prefix}.layer{}", l + 1), layer.mlp.len(), standardize)?;
        let out = match levels.last() {
            None => group_and_pool_first(g, &pts, sub.attrs(), sub.attr_dim(), layer, &mlp)?,
            Some(&prev) => group_and_pool_deeper(g, &pts, prev, layer, &mlp)?,
        };
        levels.push(out);
    }
    Ok(LevelFeatures {
        low: levels[0],
        mid: levels[1],
        high: levels[2],
        points: pts,
        indices,
    })
}

/// Samples each path independently from the input cloud and runs it.
pub fn build_pyramid(
    g: &mut Graph,
    cloud: &PointCloud,
    paths: &[PathConfig],
    params: &BoundParams,
    fps_start: Option<usize>,
    standardize: bool,
) -> Result<Vec<LevelFeatures>> {
    paths
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let idx = sample_path(cloud, cfg.resolution, fps_start)?;
            run_path(g, cloud, idx, cfg, params, &format!("path{}", i + 1), standardize)
        })
        .collect()
}

pub(crate) fn init_path_params<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    cfg: &PathConfig,
    attr_dim: usize,
    standardize: bool,
    rng: &mut R,
) -> Result<()> {
    for (l, layer) in cfg.layers.iter().enumerate() {
        init_mlp(
            params,
            &format!("{prefix}.layer{}", l + 1),
            cfg.layer_input(l, attr_dim),
            &layer.mlp,
            standardize,
            rng,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_path(c: usize) -> PathConfig {
        PathConfig {
            resolution: 4,
            layers: vec![
                LayerSpec::new(0.5, 3, &[c]),
                LayerSpec::new(1.0, 3, &[c]),
                LayerSpec::new(2.0, 3, &[c]),
            ],
        }
    }

    fn dense_const(g: &mut Graph, w: Tensor, b: Tensor) -> Dense {
        Dense {
            w: g.constant(w),
            b: Some(g.constant(b)),
            standardize: false,
        }
    }

    #[test]
    fn isolated_point_sees_only_zero_offsets() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::uniform(&[3, 5], 1.0, &mut rng);
        let b = Tensor::uniform(&[5], 1.0, &mut rng);
        let layer = dense_const(&mut g, w, b.clone());
        let spec = LayerSpec::new(0.1, 4, &[5]);
        let out = group_and_pool_first(&mut g, &[[0.0, 0.0, 0.0]], &[], 0, &spec, &[layer]).unwrap();
        // MLP of the zero vector is relu(b).
        let expected: Vec<f64> = b.data().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(g.value(out).data(), &expected[..]);
    }

    #[test]
    fn first_layer_matches_worksheet() {
        // Points on a line, r = 0.6, K = 2.
        let pts = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let w = Tensor::from_rows(&[
            [1.0, -1.0, 0.5, 0.0],
            [0.0, 2.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, -1.0],
        ])
        .unwrap();
        let b = Tensor::vector(vec![0.1, 0.2, -0.3, 0.0]).unwrap();
        let mut g = Graph::new();
        let layer = dense_const(&mut g, w.clone(), b.clone());
        let spec = LayerSpec::new(0.6, 2, &[4]);
        let out = group_and_pool_first(&mut g, &pts, &[], 0, &spec, &[layer]).unwrap();
        // Groups: p0 -> {p0, p1}; p1 -> {p1, p0} (p0 lexicographically first
        // of the two at distance 0.5); p2 -> {p2, p1}; p3 -> {p3, p3}.
        let offsets: [[f64; 2]; 4] = [[0.0, 0.5], [0.0, -0.5], [0.0, -0.5], [0.0, 0.0]];
        let mut expected = Vec::new();
        for offs in offsets {
            for c in 0..4 {
                let f = |dx: f64| (dx * w.at(0, c) + b.data()[c]).max(0.0);
                expected.push(f(offs[0]).max(f(offs[1])));
            }
        }
        let got = g.value(out).data();
        for (a, e) in got.iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-12, "{got:?} vs {expected:?}");
        }
    }

    #[test]
    fn deeper_layer_with_single_neighbor_is_pointwise() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let feats = Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]]).unwrap();
        let w = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.25]).unwrap();
        let mut g = Graph::new();
        let f = g.constant(feats.clone());
        let layer = dense_const(&mut g, w.clone(), b.clone());
        let spec = LayerSpec::new(0.5, 1, &[2]);
        let out = group_and_pool_deeper(&mut g, &pts, f, &spec, &[layer]).unwrap();
        for i in 0..3 {
            let x: Vec<f64> = feats.row(i).iter().chain(feats.row(i)).copied().collect();
            for c in 0..2 {
                let z: f64 = (0..4).map(|r| x[r] * w.at(r, c)).sum::<f64>() + b.data()[c];
                assert!((g.value(out).at(i, c) - z.max(0.0)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn deeper_layer_worksheet_with_two_neighbors() {
        let pts = [[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let feats = Tensor::from_rows(&[[1.0], [3.0], [-2.0]]).unwrap();
        // z = 2*neighbour - centroid
        let w = Tensor::from_rows(&[[2.0], [-1.0]]).unwrap();
        let b = Tensor::vector(vec![0.0]).unwrap();
        let mut g = Graph::new();
        let f = g.constant(feats);
        let layer = dense_const(&mut g, w, b);
        let spec = LayerSpec::new(0.5, 2, &[1]);
        let out = group_and_pool_deeper(&mut g, &pts, f, &spec, &[layer]).unwrap();
        // p0: max(2*1-1, 2*3-1) = 5; p1: max(2*3-3, 2*1-3) = 3; p2: relu(2*-2+2) = 0
        assert_eq!(g.value(out).data(), &[5.0, 3.0, 0.0]);
    }

    #[test]
    fn deeper_layer_rejects_channel_mismatch() {
        let pts = [[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]];
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(&[2, 3]));
        let layer = dense_const(&mut g, Tensor::zeros(&[4, 2]), Tensor::zeros(&[2]));
        let spec = LayerSpec::new(0.5, 2, &[2]);
        let err = group_and_pool_deeper(&mut g, &pts, f, &spec, &[layer]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn pooling_ignores_member_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = Tensor::uniform(&[6, 3], 1.0, &mut rng);
        let mut shuffled = Vec::new();
        for grp in 0..2 {
            for r in [2, 0, 1] {
                shuffled.extend_from_slice(x.row(grp * 3 + r));
            }
        }
        let a = g.constant(x);
        let b = g.constant(Tensor::matrix(6, 3, shuffled).unwrap());
        let pa = g.group_max(a, 3).unwrap();
        let pb = g.group_max(b, 3).unwrap();
        assert_eq!(g.value(pa), g.value(pb));
    }

    #[test]
    fn path_validation() {
        assert!(toy_path(4).validate().is_ok());
        let mut bad = toy_path(4);
        bad.layers[2].radius = 0.5;
        assert!(bad.validate().is_err());
        let mut short = toy_path(4);
        short.layers.pop();
        assert!(short.validate().is_err());
        let paths = vec![toy_path(4), toy_path(4), toy_path(4)];
        assert!(validate_paths(&paths).is_err());
    }

    #[test]
    fn build_pyramid_requires_enough_points() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = toy_path(2);
        init_path_params(&mut params, "path1", &cfg, 0, false, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let err = build_pyramid(&mut g, &cloud, &[toy_path(2)], &bound, None, false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn full_resolution_paths_see_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: Vec<Point3> = (0..6)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0])
            .collect();
        let cloud = PointCloud::new(coords).unwrap();
        let mut cfg = toy_path(4);
        cfg.resolution = 6;
        let mut params = ModelParams::new();
        for i in 1..=3 {
            init_path_params(&mut params, &format!("path{i}"), &cfg, 0, false, &mut rng).unwrap();
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let paths = vec![cfg.clone(), cfg.clone(), cfg];
        let levels = build_pyramid(&mut g, &cloud, &paths, &bound, None, false).unwrap();
        for lv in &levels {
            let mut idx = lv.indices.clone();
            idx.sort();
            assert_eq!(idx, (0..6).collect::<Vec<_>>());
            assert_eq!(g.shape(lv.high), &[6, 4]);
        }
    }
}
