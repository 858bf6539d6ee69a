use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckLine;
use crate::error::Result;
use crate::geometry::{ball_query, farthest_point_sample, knn, InterpolationPlan, Point3};
use crate::train::{confusion_matrix, mean_class_accuracy, overall_accuracy, shape_iou};

fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn lex(a: &Point3, b: &Point3) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Half the clouds sit on a coarse grid so that distance and coordinate ties
/// (including duplicate points) occur often.
fn cloud(rng: &mut ChaCha8Rng, n: usize, quantized: bool) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            std::array::from_fn(|_| {
                if quantized {
                    rng.random_range(-2i32..=2) as f64 * 0.5
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
        })
        .collect()
}

fn fps_oracle(pts: &[Point3], m: usize) -> Vec<usize> {
    let order = |a: usize, b: usize| lex(&pts[a], &pts[b]).then(a.cmp(&b));
    let mut picks = vec![(0..pts.len()).min_by(|&a, &b| order(a, b)).expect("non-empty")];
    while picks.len() < m {
        let dist = |j: usize| picks.iter().map(|&p| d2(&pts[j], &pts[p])).fold(f64::INFINITY, f64::min);
        let next = (0..pts.len())
            .filter(|j| !picks.contains(j))
            .max_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(order(b, a)))
            .expect("m <= n");
        picks.push(next);
    }
    picks
}

fn sorted_by_distance(pts: &[Point3], center: &Point3) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(j, p)| (d2(p, center), j)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(lex(&pts[a.1], &pts[b.1])).then(a.1.cmp(&b.1)));
    all
}

fn ball_oracle(pts: &[Point3], c: usize, r: f64, k: usize) -> Vec<usize> {
    let mut members: Vec<usize> =
        sorted_by_distance(pts, &pts[c]).into_iter().filter(|&(d, _)| d <= r * r).map(|(_, j)| j).take(k).collect();
    let nearest = members[0];
    members.resize(k, nearest);
    members
}

fn mismatch_line(name: &str, instances: usize, mismatches: usize, extra: &str) -> CheckLine {
    CheckLine::new(name, mismatches == 0, format!("{mismatches} of {instances} instances differ{extra}"))
}

/// Compares sampling, grouping, neighbour search and interpolation with
/// brute-force references on `instances` random clouds of at most 32 points.
pub fn geometry_oracle_checks(instances: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let (mut fps_bad, mut ball_bad, mut knn_bad, mut interp_bad) = (0, 0, 0, 0);
    let mut interp_err = 0.0f64;
    for i in 0..instances {
        let n = rng.random_range(1..=32);
        let pts = cloud(&mut rng, n, i % 2 == 1);

        let m = rng.random_range(1..=n);
        fps_bad += (farthest_point_sample(&pts, m)? != fps_oracle(&pts, m)) as usize;

        let r = rng.random_range(0.1..1.5);
        let k = rng.random_range(1..=8);
        let centroids: Vec<usize> = (0..n).collect();
        let groups = ball_query(&pts, &centroids, r, k)?;
        ball_bad += groups.iter().any(|g| g.members != ball_oracle(&pts, g.centroid, r, k)) as usize;

        let q = rng.random_range(1..=8);
        let query = cloud(&mut rng, q, i % 2 == 1);
        let kk = rng.random_range(1..=n.min(4));
        let got = knn(&query, &pts, kk)?;
        let mut differs = false;
        for (qi, p) in query.iter().enumerate() {
            let want: Vec<(f64, usize)> = sorted_by_distance(&pts, p).into_iter().take(kk).collect();
            let idx: Vec<usize> = want.iter().map(|w| w.1).collect();
            let dist: Vec<f64> = want.iter().map(|w| w.0.sqrt()).collect();
            differs |= got.neighbors(qi) != idx.as_slice() || got.distances_of(qi) != dist.as_slice();
        }
        knn_bad += differs as usize;

        let ik = n.min(3);
        let plan = InterpolationPlan::new(&pts, &query, ik)?;
        let mut bad = false;
        for (qi, p) in query.iter().enumerate() {
            let near: Vec<(f64, usize)> = sorted_by_distance(&pts, p).into_iter().take(ik).collect();
            let inv: Vec<f64> = near.iter().map(|(d, _)| 1.0 / (d.sqrt() + 1e-8)).collect();
            let total: f64 = inv.iter().sum();
            bad |= plan.indices[qi * ik..(qi + 1) * ik] != *near.iter().map(|w| w.1).collect::<Vec<_>>();
            for (w, v) in plan.weights_of(qi).iter().zip(&inv) {
                interp_err = interp_err.max((w - v / total).abs());
            }
        }
        interp_bad += bad as usize;
    }
    let weight_ok = interp_err <= 1e-12;
    Ok(vec![
        mismatch_line("oracle farthest point sampling", instances, fps_bad, ""),
        mismatch_line("oracle ball query", instances, ball_bad, ""),
        mismatch_line("oracle knn", instances, knn_bad, ""),
        CheckLine::new(
            "oracle interpolation",
            interp_bad == 0 && weight_ok,
            format!("{interp_bad} of {instances} neighbour sets differ, max weight error {interp_err:.2e}"),
        ),
    ])
}

/// Compares the confusion matrix, OA, ACC and per-shape IoU with direct
/// set-based definitions.
pub fn metric_oracle_checks(instances: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(12);
    let (mut cm_bad, mut iou_bad) = (0, 0);
    let mut err = 0.0f64;
    for _ in 0..instances {
        let classes = rng.random_range(1..=6);
        let len = rng.random_range(1..=40);
        let truth: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes)).collect();

        let cm = confusion_matrix(&pred, &truth, classes)?;
        let cell = |t: usize, p: usize| truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count();
        cm_bad += (0..classes).any(|t| (0..classes).any(|p| cm[t][p] != cell(t, p))) as usize;
        let oa = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / len as f64;
        err = err.max((overall_accuracy(&cm) - oa).abs());
        let present: Vec<usize> = (0..classes).filter(|c| truth.contains(c)).collect();
        let acc = present
            .iter()
            .map(|&c| {
                let of_c: Vec<usize> = (0..len).filter(|&i| truth[i] == c).collect();
                of_c.iter().filter(|&&i| pred[i] == c).count() as f64 / of_c.len() as f64
            })
            .sum::<f64>()
            / present.len() as f64;
        err = err.max((mean_class_accuracy(&cm) - acc).abs());

        let parts: Vec<usize> = (0..classes).collect();
        let want = parts
            .iter()
            .map(|&p| {
                let a: std::collections::BTreeSet<usize> = (0..len).filter(|&i| pred[i] == p).collect();
                let b: std::collections::BTreeSet<usize> = (0..len).filter(|&i| truth[i] == p).collect();
                let union = a.union(&b).count();
                if union == 0 {
                    1.0
                } else {
                    a.intersection(&b).count() as f64 / union as f64
                }
            })
            .sum::<f64>()
            / classes as f64;
        iou_bad += ((shape_iou(&pred, &truth, &parts)? - want).abs() > 1e-12) as usize;
    }
    Ok(vec![
        mismatch_line("oracle confusion matrix", instances, cm_bad, ""),
        CheckLine::new("oracle accuracy", err <= 1e-12, format!("max OA/ACC error {err:.2e} over {instances} instances")),
        mismatch_line("oracle shape iou", instances, iou_bad, ""),
    ])
}
