use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_attention_trio, fuse_three, self_attention, AttentionOptions, AttentionParams, FusionWeights};
use crate::data::{gen_part_shape, gen_shape, PartKind, ShapeKind};
use crate::error::Result;
use crate::geometry::PointCloud;
use crate::model::{Network, NetworkConfig, Task};
use crate::tensor::{Graph, Tensor, Var};

const SHAPES: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus];
const PART_SHAPES: [PartKind; 3] = [PartKind::Mug, PartKind::Lamp, PartKind::Table];

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Largest deviation between the desk network's output on a cloud and on a
/// shuffled copy. Classification logits must match exactly; segmentation
/// rows must follow the points.
pub fn network_permutation_check(task: Task, clouds: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = match task {
        Task::Classification => NetworkConfig::desk_classification(SHAPES.len()),
        Task::Segmentation => NetworkConfig::desk_segmentation(7),
    };
    let points = cfg.input_points;
    let net = Network::new(cfg, &mut rng)?;
    let mut worst = 0.0f64;
    for i in 0..clouds {
        let cloud: PointCloud = match task {
            Task::Classification => gen_shape(SHAPES[i % SHAPES.len()], points, 0.02, &mut rng)?,
            Task::Segmentation => gen_part_shape(PART_SHAPES[i % PART_SHAPES.len()], points, &mut rng)?,
        };
        let perm = permutation(&mut rng, cloud.len());
        let shuffled = cloud.reordered(&perm)?;
        let a = net.logits(&cloud)?;
        let b = net.logits(&shuffled)?;
        let expect = match task {
            Task::Classification => a,
            Task::Segmentation => a.select_rows(&perm),
        };
        worst = worst.max(expect.max_abs_diff(&b));
    }
    Ok(worst)
}

fn values(g: &Graph, v: Var) -> Tensor {
    g.value(v).clone()
}

/// Equivariance of self-attention, the cross-attention trio and the full
/// fusion block under a shared row permutation of their inputs.
pub fn attention_permutation_check(instances: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut worst = [0.0f64; 3];
    for _ in 0..instances {
        let n = rng.random_range(1..=32);
        let c = 4 * rng.random_range(1..=4);
        let inputs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[n, c], 1.0, &mut rng)).collect();
        let params: Vec<AttentionParams> =
            (0..4).map(|_| AttentionParams::random(c, false, &mut rng)).collect::<Result<_>>()?;
        let perm = permutation(&mut rng, n);
        let opts = AttentionOptions::default();

        let run = |xs: &[Tensor]| -> Result<[Tensor; 3]> {
            let mut g = Graph::new();
            let v: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            let w = FusionWeights {
                selfs: [params[0].bind_self(&mut g), params[1].bind_self(&mut g), params[2].bind_self(&mut g)],
                cross: params[3].bind_cross(&mut g),
            };
            let sa = self_attention(&mut g, v[0], &w.selfs[0])?;
            let ca = cross_attention_trio(&mut g, v[0], v[1], v[2], &w.cross, opts)?;
            let fused = fuse_three(&mut g, [v[0], v[1], v[2]], &w, opts, "check")?;
            Ok([values(&g, sa), values(&g, ca), values(&g, fused)])
        };
        let base = run(&inputs)?;
        let permuted: Vec<Tensor> = inputs.iter().map(|t| t.select_rows(&perm)).collect();
        let moved = run(&permuted)?;
        for i in 0..3 {
            worst[i] = worst[i].max(base[i].select_rows(&perm).max_abs_diff(&moved[i]));
        }
    }
    Ok(["self_attention", "cross_attention", "fusion"]
        .into_iter()
        .map(String::from)
        .zip(worst)
        .collect())
}
