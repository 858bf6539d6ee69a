//! Deterministic geometric kernels: farthest point sampling, ball query,
//! k-nearest-neighbour search and inverse-distance feature interpolation.
//!
//! Every kernel breaks ties by `(distance, lexicographic coordinates)`, never
//! by input position, so results depend only on the point *set*. That is what
//! makes the networks built on top invariant to input permutation.
//!
//! Everything here is brute force, `O(N * M)`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub type Point3 = [f64; 3];

/// Guards the inverse-distance weight of a query that coincides with a source.
pub const INTERPOLATION_EPS: f64 = 1e-8;

/// `N` points with optional per-point attributes and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    coords: Vec<Point3>,
    /// Row-major `N x attr_dim`.
    attrs: Vec<f64>,
    attr_dim: usize,
    point_labels: Option<Vec<u16>>,
    cloud_label: Option<u16>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>) -> Result<Self> {
        PointCloud::with_attrs(coords, Vec::new(), 0)
    }

    pub fn with_attrs(coords: Vec<Point3>, attrs: Vec<f64>, attr_dim: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::contract("a point cloud needs at least one point"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("point coordinates must be finite"));
        }
        if attrs.len() != coords.len() * attr_dim {
            return Err(Error::Shape {
                op: "point attributes",
                lhs: vec![coords.len(), attr_dim],
                rhs: vec![attrs.len()],
            });
        }
        Ok(PointCloud {
            coords,
            attrs,
            attr_dim,
            point_labels: None,
            cloud_label: None,
        })
    }

    pub fn with_point_labels(mut self, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != self.coords.len() {
            return Err(Error::Shape {
                op: "point labels",
                lhs: vec![self.coords.len()],
                rhs: vec![labels.len()],
            });
        }
        self.point_labels = Some(labels);
        Ok(self)
    }

    pub fn with_cloud_label(mut self, label: u16) -> Self {
        self.cloud_label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn attrs(&self) -> &[f64] {
        &self.attrs
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn point_labels(&self) -> Option<&[u16]> {
        self.point_labels.as_deref()
    }

    pub fn cloud_label(&self) -> Option<u16> {
        self.cloud_label
    }

    pub fn attr_row(&self, i: usize) -> &[f64] {
        &self.attrs[i * self.attr_dim..(i + 1) * self.attr_dim]
    }

    /// Coordinates as an `N x 3` tensor.
    pub fn coord_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), 3, self.coords.iter().flatten().copied().collect())
            .expect("N x 3 by construction")
    }

    /// Applies `order` to every per-point field: point `i` of the result is
    /// point `order[i]` of `self`.
    pub fn reordered(&self, order: &[usize]) -> Result<PointCloud> {
        let n = self.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::contract("reordering must be a permutation of the points"));
        }
        self.subset(order)
    }

    /// Keeps the listed points (repetitions allowed), in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let attrs = indices.iter().flat_map(|&i| self.attr_row(i).iter().copied()).collect();
        let mut pc = PointCloud::with_attrs(coords, attrs, self.attr_dim)?;
        if let Some(labels) = &self.point_labels {
            pc.point_labels = Some(indices.iter().map(|&i| labels[i]).collect());
        }
        pc.cloud_label = self.cloud_label;
        Ok(pc)
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [Point3] {
        &mut self.coords
    }

    pub(crate) fn from_parts(
        coords: Vec<Point3>,
        attrs: Vec<f64>,
        attr_dim: usize,
        point_labels: Option<Vec<u16>>,
        cloud_label: Option<u16>,
    ) -> Result<Self> {
        let mut pc = PointCloud::with_attrs(coords, attrs, attr_dim)?;
        if let Some(labels) = point_labels {
            pc = pc.with_point_labels(labels)?;
        }
        pc.cloud_label = cloud_label;
        Ok(pc)
    }
}

pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn lex_cmp(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Orders candidates by `(squared distance, coordinates)`; the index only
/// separates exact duplicates, whose coordinates are identical anyway.
fn canonical_cmp(points: &[Point3], (da, ia): (f64, usize), (db, ib): (f64, usize)) -> Ordering {
    da.total_cmp(&db)
        .then_with(|| lex_cmp(&points[ia], &points[ib]))
        .then(ia.cmp(&ib))
}

/// Greedy farthest point sampling seeded at the lexicographically smallest
/// point. Returns `m` indices in pick order.
pub fn farthest_point_sample(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    let seed = (0..points.len())
        .min_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)))
        .ok_or_else(|| Error::contract("farthest point sampling needs a non-empty cloud"))?;
    farthest_point_sample_from(points, m, seed)
}

/// Farthest point sampling from an explicit first pick.
pub fn farthest_point_sample_from(points: &[Point3], m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "farthest point sampling needs 1 <= M <= N, got M={m}, N={n}"
        )));
    }
    if seed >= n {
        return Err(Error::contract(format!("FPS seed {seed} out of range for {n} points")));
    }
    let mut chosen = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut picks = Vec::with_capacity(m);
    let mut current = seed;
    loop {
        picks.push(current);
        chosen[current] = true;
        if picks.len() == m {
            return Ok(picks);
        }
        let anchor = points[current];
        let mut best: Option<usize> = None;
        for j in 0..n {
            if chosen[j] {
                continue;
            }
            let d = squared_distance(&points[j], &anchor);
            if d < min_d[j] {
                min_d[j] = d;
            }
            best = match best {
                None => Some(j),
                Some(b) => {
                    let better = min_d[j]
                        .total_cmp(&min_d[b])
                        .then_with(|| lex_cmp(&points[b], &points[j]));
                    Some(if better == Ordering::Greater { j } else { b })
                }
            };
        }
        current = best.expect("m <= n leaves an unchosen point");
    }
}

/// `K` neighbours of one centroid, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGroup {
    pub centroid: usize,
    pub members: Vec<usize>,
    /// `member - centroid` for each member.
    pub offsets: Vec<Point3>,
}

/// For each centroid, the points within distance `radius` sorted by
/// `(distance, coordinates)` and truncated to `k`. Short groups are padded by
/// repeating their nearest member; the centroid itself always qualifies.
pub fn ball_query(
    points: &[Point3],
    centroids: &[usize],
    radius: f64,
    k: usize,
) -> Result<Vec<NeighborGroup>> {
    if !(radius > 0.0) || k == 0 {
        return Err(Error::contract(format!(
            "ball query needs radius > 0 and K >= 1, got r={radius}, K={k}"
        )));
    }
    let r2 = radius * radius;
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    centroids
        .iter()
        .map(|&c| {
            let center = *points
                .get(c)
                .ok_or_else(|| Error::contract(format!("centroid {c} out of range")))?;
            candidates.clear();
            candidates.extend(
                points
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (squared_distance(p, &center), j))
                    .filter(|&(d, _)| d <= r2),
            );
            candidates.sort_unstable_by(|&a, &b| canonical_cmp(points, a, b));
            let mut members: Vec<usize> = candidates.iter().take(k).map(|&(_, j)| j).collect();
            let nearest = members[0];
            members.resize(k, nearest);
            let offsets = members
                .iter()
                .map(|&j| {
                    let p = points[j];
                    [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
                })
                .collect();
            Ok(NeighborGroup {
                centroid: c,
                members,
                offsets,
            })
        })
        .collect()
}

/// `k` nearest sources for each query, flattened row-major (`Q x k`).
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl KnnResult {
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn distances_of(&self, q: usize) -> &[f64] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }
}

pub fn knn(query: &[Point3], source: &[Point3], k: usize) -> Result<KnnResult> {
    if k == 0 || k > source.len() {
        return Err(Error::contract(format!(
            "knn needs 1 <= k <= S, got k={k}, S={}",
            source.len()
        )));
    }
    let mut indices = Vec::with_capacity(query.len() * k);
    let mut distances = Vec::with_capacity(query.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(source.len());
    for q in query {
        cand.clear();
        cand.extend(source.iter().enumerate().map(|(j, s)| (squared_distance(q, s), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| canonical_cmp(source, *a, *b);
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        for &(d2, j) in &cand {
            indices.push(j);
            distances.push(d2.sqrt());
        }
    }
    Ok(KnnResult {
        k,
        indices,
        distances,
    })
}

/// Neighbour indices and normalised inverse-distance weights that map
/// features on `source` points onto `query` points.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPlan {
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl InterpolationPlan {
    /// `w_j = (d_j + eps)^-1 / sum_l (d_l + eps)^-1` over the `k` nearest.
    pub fn new(source: &[Point3], query: &[Point3], k: usize) -> Result<Self> {
        let nn = knn(query, source, k)?;
        let mut weights = Vec::with_capacity(nn.distances.len());
        for q in 0..query.len() {
            let inv: Vec<f64> = nn
                .distances_of(q)
                .iter()
                .map(|d| 1.0 / (d + INTERPOLATION_EPS))
                .collect();
            let total: f64 = inv.iter().sum();
            weights.extend(inv.iter().map(|w| w / total));
        }
        Ok(InterpolationPlan {
            k,
            indices: nn.indices,
            weights,
        })
    }

    pub fn weights_of(&self, q: usize) -> &[f64] {
        &self.weights[q * self.k..(q + 1) * self.k]
    }

    /// Applies the plan on a graph; differentiable in `features` only.
    pub fn apply(&self, g: &mut Graph, features: Var) -> Result<Var> {
        g.weighted_gather(features, self.k, self.indices.clone(), self.weights.clone())
    }
}

/// Interpolates `S x D` source features onto the query points (`Q x D`).
pub fn interpolate_knn(
    g: &mut Graph,
    source_feats: Var,
    source_pts: &[Point3],
    query_pts: &[Point3],
    k: usize,
) -> Result<Var> {
    let rows = g.value(source_feats).rows();
    if rows != source_pts.len() {
        return Err(Error::Shape {
            op: "interpolate_knn",
            lhs: g.shape(source_feats).to_vec(),
            rhs: vec![source_pts.len(), 3],
        });
    }
    InterpolationPlan::new(source_pts, query_pts, k)?.apply(g, source_feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Vec<Point3> {
        xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    /// Re-evaluates every candidate from scratch each round.
    fn fps_oracle(points: &[Point3], m: usize) -> Vec<Point3> {
        let mut sorted = points.to_vec();
        sorted.sort_by(lex_cmp);
        let mut picked = vec![sorted[0]];
        let mut used = vec![false; points.len()];
        used[points.iter().position(|p| *p == sorted[0]).unwrap()] = true;
        while picked.len() < m {
            let mut best: Option<(f64, usize)> = None;
            for (j, p) in points.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let d = picked
                    .iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                let take = match best {
                    None => true,
                    Some((bd, bj)) => d > bd || (d == bd && lex_cmp(p, &points[bj]) == Ordering::Less),
                };
                if take {
                    best = Some((d, j));
                }
            }
            let (_, j) = best.unwrap();
            used[j] = true;
            picked.push(points[j]);
        }
        picked
    }

    #[test]
    fn fps_single_pick_is_lexicographic_minimum() {
        let pts = vec![[0.5, 0.0, 0.0], [-1.0, 2.0, 0.0], [-1.0, -3.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 1).unwrap(), vec![2]);
    }

    #[test]
    fn fps_exhaustion_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 17);
        let mut picks = farthest_point_sample(&pts, 17).unwrap();
        picks.sort();
        assert_eq!(picks, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn fps_on_a_line_picks_both_ends() {
        let pts = line(&[0.0, 0.1, 0.5, 1.0]);
        let picks = farthest_point_sample(&pts, 2).unwrap();
        assert_eq!(picks, vec![0, 3]);
        let coords: Vec<Point3> = picks.iter().map(|&i| pts[i]).collect();
        assert_eq!(coords, fps_oracle(&pts, 2));
    }

    #[test]
    fn fps_rejects_oversized_requests() {
        let pts = line(&[0.0, 1.0]);
        assert!(matches!(farthest_point_sample(&pts, 3), Err(Error::Contract(_))));
        assert!(farthest_point_sample(&pts, 0).is_err());
    }

    #[test]
    fn fps_with_duplicates_never_repeats_an_index() {
        let pts = line(&[0.0, 0.0, 0.0, 1.0]);
        let mut picks = farthest_point_sample(&pts, 4).unwrap();
        picks.sort();
        assert_eq!(picks, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..=32);
            let m = rng.random_range(1..=n);
            let pts = random_points(&mut rng, n);
            let got: Vec<Point3> = farthest_point_sample(&pts, m)
                .unwrap()
                .iter()
                .map(|&i| pts[i])
                .collect();
            assert_eq!(got, fps_oracle(&pts, m));
        }
    }

    #[test]
    fn ball_query_covering_radius_sorts_everything() {
        let pts = line(&[0.4, -0.1, 0.0, 0.25]);
        let groups = ball_query(&pts, &[2], 10.0, 4).unwrap();
        assert_eq!(groups[0].members, vec![2, 1, 3, 0]);
        assert_eq!(groups[0].offsets[3], [0.4, 0.0, 0.0]);
    }

    #[test]
    fn isolated_centroid_pads_with_itself() {
        let pts = line(&[0.0, 5.0, 9.0]);
        let groups = ball_query(&pts, &[1], 0.5, 4).unwrap();
        assert_eq!(groups[0].members, vec![1; 4]);
        assert!(groups[0].offsets.iter().all(|o| *o == [0.0; 3]));
    }

    #[test]
    fn ball_query_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 5);
        let groups = ball_query(&pts, &[0, 1, 2, 3, 4], 0.3, 3).unwrap();
        for grp in &groups {
            let c = pts[grp.centroid];
            let mut inside: Vec<(f64, Point3)> = pts
                .iter()
                .map(|p| (((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt(), *p))
                .filter(|(d, _)| *d <= 0.3)
                .collect();
            inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(lex_cmp(&a.1, &b.1)));
            let mut expected: Vec<Point3> = inside.iter().take(3).map(|x| x.1).collect();
            while expected.len() < 3 {
                expected.push(expected[0]);
            }
            let got: Vec<Point3> = grp.members.iter().map(|&i| pts[i]).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn ball_query_rejects_bad_parameters() {
        let pts = line(&[0.0]);
        assert!(ball_query(&pts, &[0], 0.0, 2).is_err());
        assert!(ball_query(&pts, &[0], 1.0, 0).is_err());
        assert!(ball_query(&pts, &[3], 1.0, 1).is_err());
    }

    #[test]
    fn knn_finds_coincident_point() {
        let src = line(&[0.0, 1.0, 2.0]);
        let r = knn(&[[1.0, 0.0, 0.0]], &src, 1).unwrap();
        assert_eq!(r.indices, vec![1]);
        assert_eq!(r.distances, vec![0.0]);
    }

    #[test]
    fn knn_with_k_equal_to_sources_sorts_all() {
        let src = line(&[3.0, -1.0, 0.5]);
        let r = knn(&[[0.0; 3]], &src, 3).unwrap();
        assert_eq!(r.indices, vec![2, 1, 0]);
        assert!(knn(&[[0.0; 3]], &src, 4).is_err());
    }

    #[test]
    fn knn_matches_sorting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = random_points(&mut rng, 8);
        let q = random_points(&mut rng, 4);
        let r = knn(&q, &src, 3).unwrap();
        for (qi, qp) in q.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = src
                .iter()
                .enumerate()
                .map(|(j, s)| (((s[0] - qp[0]).powi(2) + (s[1] - qp[1]).powi(2) + (s[2] - qp[2]).powi(2)).sqrt(), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            let expected: Vec<usize> = all.iter().take(3).map(|x| x.1).collect();
            assert_eq!(r.neighbors(qi), &expected[..]);
        }
    }

    fn interp(src_feat: Tensor, src: &[Point3], q: &[Point3], k: usize) -> Tensor {
        let mut g = Graph::new();
        let f = g.constant(src_feat);
        let out = interpolate_knn(&mut g, f, src, q, k).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn interpolation_at_a_source_returns_its_feature() {
        let src = line(&[0.0, 1.0, 3.0]);
        let feat = Tensor::from_rows(&[[1.0, -2.0], [4.0, 0.5], [7.0, 7.0]]).unwrap();
        let out = interp(feat, &src, &[[1.0, 0.0, 0.0]], 3);
        assert!((out.at(0, 0) - 4.0).abs() < 1e-6);
        assert!((out.at(0, 1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn interpolation_preserves_constant_fields() {
        let src = line(&[0.0, 0.3, 0.9, 2.0]);
        let feat = Tensor::full(&[4, 2], 2.5);
        let out = interp(feat, &src, &line(&[0.1, 1.3, -4.0]), 3);
        assert!(out.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn interpolation_midpoint_is_average() {
        let src = line(&[0.0, 1.0]);
        let feat = Tensor::from_rows(&[[0.0], [1.0]]).unwrap();
        let out = interp(feat, &src, &line(&[0.5]), 2);
        assert!((out.item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_points(&mut rng, 10);
        let q = random_points(&mut rng, 20);
        let plan = InterpolationPlan::new(&src, &q, 3).unwrap();
        for qi in 0..q.len() {
            let w = plan.weights_of(qi);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
