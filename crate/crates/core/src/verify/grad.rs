use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    cross_attention_trio, fuse_three, self_attention, upsample, AttentionOptions, CrossAttentionWeights,
    FusionWeights, SelfAttentionWeights,
};
use crate::data::{gen_part_shape, gen_shape, PartKind, ShapeKind};
use crate::error::Result;
use crate::geometry::{Point3, PointCloud};
use crate::model::{Mode, Network, NetworkConfig, Task};
use crate::params::Dense;
use crate::pyramid::{group_and_pool_deeper, group_and_pool_first, LayerSpec};
use crate::tensor::{finite_diff_check, GradCheck, GradCheckReport, Graph, Tensor, Var};

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One randomized instance: inputs and the op applied to them.
struct Case {
    inputs: Vec<Tensor>,
    op: OpFn,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::uniform(&[rows, cols], 1.0, rng)
}

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

fn case(inputs: Vec<Tensor>, op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { inputs, op: Box::new(op) }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=8))
}

fn attention_width(rng: &mut ChaCha8Rng) -> usize {
    if rng.random::<bool>() {
        4
    } else {
        8
    }
}

fn self_weights(v: &[Var]) -> SelfAttentionWeights {
    SelfAttentionWeights { wq: v[0], wk: v[1], wv: v[2] }
}

fn cross_weights(v: &[Var]) -> CrossAttentionWeights {
    CrossAttentionWeights { w1: v[0], w2: v[1], w3: v[2] }
}

fn attention_mats(rng: &mut ChaCha8Rng, c: usize) -> Vec<Tensor> {
    vec![uniform(rng, c, c / 4), uniform(rng, c, c / 4), uniform(rng, c, c)]
}

/// Weight (and bias, unless standardised) of one shared-MLP layer, laid out
/// like the network does it.
fn dense_inputs(rng: &mut ChaCha8Rng, fan_in: usize, out: usize, standardize: bool) -> Vec<Tensor> {
    let mut v = vec![uniform(rng, fan_in, out)];
    if !standardize {
        v.push(Tensor::uniform(&[out], 1.0, rng));
    }
    v
}

fn dense(v: &[Var], standardize: bool) -> Dense {
    Dense { w: v[0], b: (!standardize).then(|| v[1]), standardize }
}

fn build(name: &str, rng: &mut ChaCha8Rng) -> Case {
    match name {
        "matmul" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..=8);
            case(vec![uniform(rng, m, k), uniform(rng, k, n)], |g, v| g.matmul(v[0], v[1]))
        }
        "matmul_nt" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..=4);
            case(vec![uniform(rng, m, k), uniform(rng, n, k)], |g, v| g.matmul_nt(v[0], v[1]))
        }
        "linear" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..=8);
            let b = Tensor::uniform(&[n], 1.0, rng);
            case(vec![uniform(rng, m, k), uniform(rng, k, n), b], |g, v| g.linear(v[0], v[1], Some(v[2])))
        }
        "add" | "mul" => {
            let (m, n) = dims(rng);
            let mul = name == "mul";
            case(vec![uniform(rng, m, n), uniform(rng, m, n)], move |g, v| {
                if mul {
                    g.mul(v[0], v[1])
                } else {
                    g.add(v[0], v[1])
                }
            })
        }
        "scale" => {
            let (m, n) = dims(rng);
            let s = rng.random_range(-2.0..2.0);
            case(vec![uniform(rng, m, n)], move |g, v| Ok(g.scale(v[0], s)))
        }
        "relu" => {
            let (m, n) = dims(rng);
            case(vec![uniform(rng, m, n)], |g, v| Ok(g.relu(v[0])))
        }
        "transpose" => {
            let (m, n) = dims(rng);
            case(vec![uniform(rng, m, n)], |g, v| g.transpose(v[0]))
        }
        "concat_cols" => {
            let (m, a) = dims(rng);
            let b = rng.random_range(1..=8);
            case(vec![uniform(rng, m, a), uniform(rng, m, b)], |g, v| g.concat_cols(&[v[0], v[1]]))
        }
        "max_over_rows" | "mean_over_rows" | "softmax_rows" | "sum" | "standardize_cols" => {
            let (m, n) = dims(rng);
            let which = name.to_string();
            case(vec![uniform(rng, m, n)], move |g, v| match which.as_str() {
                "max_over_rows" => g.max_over_rows(v[0]),
                "mean_over_rows" => g.mean_over_rows(v[0]),
                "softmax_rows" => g.softmax_rows(v[0]),
                "sum" => Ok(g.sum(v[0])),
                _ => g.standardize_cols(v[0], 1e-5),
            })
        }
        "gather_rows" => {
            let (m, n) = dims(rng);
            let index: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..m)).collect();
            case(vec![uniform(rng, m, n)], move |g, v| g.gather_rows(v[0], &index))
        }
        "group_max" => {
            let group = rng.random_range(1..=4);
            let groups = rng.random_range(1..=4 / group);
            let n = rng.random_range(1..=8);
            case(vec![uniform(rng, group * groups, n)], move |g, v| g.group_max(v[0], group))
        }
        "weighted_gather" => {
            let (s, n) = dims(rng);
            let k = rng.random_range(1..=s);
            let q = rng.random_range(1..=4);
            let index: Vec<usize> = (0..q * k).map(|_| rng.random_range(0..s)).collect();
            let weight: Vec<f64> = (0..q * k).map(|_| rng.random_range(0.0..1.0)).collect();
            case(vec![uniform(rng, s, n)], move |g, v| g.weighted_gather(v[0], k, index.clone(), weight.clone()))
        }
        "mask_mul" => {
            let (m, n) = dims(rng);
            let mask: Vec<f64> = (0..m * n).map(|_| if rng.random::<f64>() < 0.4 { 0.0 } else { 1.0 / 0.6 }).collect();
            case(vec![uniform(rng, m, n)], move |g, v| g.mask_mul(v[0], mask.clone()))
        }
        "cross_entropy" => {
            let m = rng.random_range(1..=4);
            let c = rng.random_range(2..=8);
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
            let mean = rng.random::<bool>();
            case(vec![uniform(rng, m, c)], move |g, v| g.cross_entropy(v[0], &targets, mean))
        }
        "self_attention" => {
            let n = rng.random_range(1..=4);
            let c = attention_width(rng);
            let mut inputs = vec![uniform(rng, n, c)];
            inputs.extend(attention_mats(rng, c));
            case(inputs, |g, v| self_attention(g, v[0], &self_weights(&v[1..4])))
        }
        "cross_attention" => {
            let n = rng.random_range(1..=4);
            let c = attention_width(rng);
            let opts = AttentionOptions { scale_cross_scores: rng.random() };
            let mut inputs = vec![uniform(rng, n, c), uniform(rng, n, c), uniform(rng, n, c)];
            inputs.extend(attention_mats(rng, c));
            case(inputs, move |g, v| cross_attention_trio(g, v[0], v[1], v[2], &cross_weights(&v[3..6]), opts))
        }
        "fusion" => {
            let n = rng.random_range(1..=4);
            let c = attention_width(rng);
            let mut inputs = vec![uniform(rng, n, c), uniform(rng, n, c), uniform(rng, n, c)];
            for _ in 0..4 {
                inputs.extend(attention_mats(rng, c));
            }
            case(inputs, |g, v| {
                let w = FusionWeights {
                    selfs: [self_weights(&v[3..6]), self_weights(&v[6..9]), self_weights(&v[9..12])],
                    cross: cross_weights(&v[12..15]),
                };
                fuse_three(g, [v[0], v[1], v[2]], &w, AttentionOptions::default(), "fusion")
            })
        }
        "upsample" => {
            let s = rng.random_range(1..=4);
            let q = rng.random_range(1..=4);
            let c = rng.random_range(1..=8);
            let out = rng.random_range(1..=8);
            let k = rng.random_range(1..=3.min(s));
            let append = rng.random::<bool>();
            let standardize = q >= 2 && (s >= 2 || append) && rng.random::<bool>();
            let (src, dst) = (points(rng, s), points(rng, q));
            let width = c + if append { 3 } else { 0 };
            let mut inputs = vec![uniform(rng, s, c)];
            inputs.extend(dense_inputs(rng, width, out, standardize));
            case(inputs, move |g, v| upsample(g, v[0], &src, &dst, k, append, &[dense(&v[1..], standardize)]))
        }
        "pyramid_first" | "pyramid_deeper" => {
            let n = rng.random_range(1..=4);
            let k = rng.random_range(1..=4);
            let c = rng.random_range(1..=8);
            let out = rng.random_range(1..=8);
            let standardize = n >= 2 && rng.random::<bool>();
            let pts = points(rng, n);
            let layer = LayerSpec::new(rng.random_range(0.3..2.0), k, &[out]);
            if name == "pyramid_first" {
                let inputs = dense_inputs(rng, 3, out, standardize);
                case(inputs, move |g, v| group_and_pool_first(g, &pts, &[], 0, &layer, &[dense(v, standardize)]))
            } else {
                let mut inputs = vec![uniform(rng, n, c)];
                inputs.extend(dense_inputs(rng, 2 * c, out, standardize));
                case(inputs, move |g, v| group_and_pool_deeper(g, &pts, v[0], &layer, &[dense(&v[1..], standardize)]))
            }
        }
        other => unreachable!("no gradient case for `{other}`"),
    }
}

/// Every op and block covered by [`op_gradient_checks`].
pub const OP_NAMES: [&str; 25] = [
    "matmul",
    "matmul_nt",
    "linear",
    "add",
    "mul",
    "scale",
    "relu",
    "transpose",
    "concat_cols",
    "max_over_rows",
    "mean_over_rows",
    "softmax_rows",
    "sum",
    "standardize_cols",
    "gather_rows",
    "group_max",
    "weighted_gather",
    "mask_mul",
    "cross_entropy",
    "self_attention",
    "cross_attention",
    "fusion",
    "upsample",
    "pyramid_first",
    "pyramid_deeper",
];

/// Central-difference checks of every op and attention block over
/// `instances` random inputs each (at most 4 rows and 8 channels). The
/// scalar under test is `sum(op(x) * R)` for a fixed random `R`.
pub fn op_gradient_checks(instances: usize, seed: u64, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let check = GradCheck::with_tol(tol);
    let mut out = Vec::with_capacity(OP_NAMES.len());
    for (i, name) in OP_NAMES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut report: Option<GradCheckReport> = None;
        for _ in 0..instances {
            let Case { inputs, op } = build(name, &mut rng);
            let readout_seed: u64 = rng.random();
            let f = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
                let y = op(g, v)?;
                let r = Tensor::uniform(g.shape(y), 1.0, &mut ChaCha8Rng::seed_from_u64(readout_seed));
                let r = g.constant(r);
                let weighted = g.mul(y, r)?;
                Ok(g.sum(weighted))
            };
            let r = finite_diff_check(f, &inputs, &check)?;
            report = Some(match report {
                None => r,
                Some(acc) => acc.merge(r),
            });
        }
        if let Some(r) = report {
            out.push((name.to_string(), r));
        }
    }
    Ok(out)
}

fn loss_value(net: &Network, cloud: &PointCloud) -> Result<f64> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, cloud, Mode::Eval)?;
    let loss = net.loss(&mut g, out.logits, cloud)?;
    Ok(g.value(loss).item())
}

/// Finite-difference check of the loss of the miniature network (64 points,
/// 8 channels) with respect to every weight.
pub fn network_gradient_check(task: Task, standardize: bool, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (classes, cloud) = match task {
        Task::Classification => (4, gen_shape(ShapeKind::Torus, 64, 0.02, &mut rng)?),
        Task::Segmentation => (7, gen_part_shape(PartKind::Lamp, 64, &mut rng)?),
    };
    let mut cfg = NetworkConfig::miniature(task, classes);
    cfg.standardize_features = standardize;
    let mut net = Network::new(cfg, &mut rng)?;

    let mut g = Graph::new();
    let out = net.forward(&mut g, &cloud, Mode::Eval)?;
    let loss = net.loss(&mut g, out.logits, &cloud)?;
    g.backward(loss)?;
    let analytic = out.params.gradients(&g);

    let check = GradCheck::with_tol(tol);
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0, tol };
    let names: Vec<String> = net.params().names().map(str::to_string).collect();
    for (pi, name) in names.iter().enumerate() {
        let len = net.params().get(name).map_or(0, Tensor::len);
        for e in 0..len {
            let orig = net.params().get(name).expect("listed above").data()[e];
            let at = |v: f64, net: &mut Network| -> Result<f64> {
                net.params_mut().get_mut(name).expect("listed above").data_mut()[e] = v;
                loss_value(net, &cloud)
            };
            let plus = at(orig + check.step, &mut net)?;
            let minus = at(orig - check.step, &mut net)?;
            at(orig, &mut net)?;
            let numeric = (plus - minus) / (2.0 * check.step);
            let a = analytic[name][e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(check.floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, e);
            }
        }
    }
    Ok(report)
}
