//! Attention blocks over point features.
//!
//! * [`self_attention`]: `softmax(Q K^T / sqrt(C')) V + F` with
//!   `Q = F Wq`, `K = F Wk`, `V = F Wv` and `C' = C / 4`.
//! * [`cross_attention_trio`]: queries from the first input, keys from the
//!   second, values from the third.
//! * [`clca`] fuses the three levels of one pyramid path; [`csca`] fuses the
//!   three upsampled scales. Both are "self-attend each input, cross-attend
//!   the trio, add the three self-attended inputs back" ([`fuse_three`]).
//! * [`upsample`] carries a path's features back to every input point.
//!
//! Row permutations commute with every block: a permutation applied to all
//! inputs permutes the output rows the same way.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{InterpolationPlan, Point3};
use crate::params::{init_bound, shared_mlp, BoundParams, Dense, ModelParams};
use crate::tensor::{Graph, Tensor, Var};

/// Switches that change attention arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionOptions {
    /// Divide cross-attention scores by `sqrt(C')` like self-attention does.
    /// When false the cross scores are used unscaled.
    pub scale_cross_scores: bool,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        AttentionOptions {
            scale_cross_scores: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SelfAttentionWeights {
    /// `C x C'`
    pub wq: Var,
    /// `C x C'`
    pub wk: Var,
    /// `C x C`
    pub wv: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossAttentionWeights {
    /// `C x C'`, applied to the query input.
    pub w1: Var,
    /// `C x C'`, applied to the key input.
    pub w2: Var,
    /// `C x C`, applied to the value input.
    pub w3: Var,
}

/// Weights of a three-way fusion block (one CLCA or the CSCA).
#[derive(Clone, Copy, Debug)]
pub struct FusionWeights {
    pub selfs: [SelfAttentionWeights; 3],
    pub cross: CrossAttentionWeights,
}

/// Names of the three inputs of a fusion block, used in parameter names.
pub const LEVEL_NAMES: [&str; 3] = ["low", "mid", "high"];
pub const SCALE_NAMES: [&str; 3] = ["s1", "s2", "s3"];

impl FusionWeights {
    /// Binds `{prefix}.sa_{name}.{wq,wk,wv}` and `{prefix}.ca.{w1,w2,w3}`.
    pub fn bind(params: &BoundParams, prefix: &str, names: [&str; 3]) -> Result<Self> {
        let sa = |n: &str| -> Result<SelfAttentionWeights> {
            Ok(SelfAttentionWeights {
                wq: params.get(&format!("{prefix}.sa_{n}.wq"))?,
                wk: params.get(&format!("{prefix}.sa_{n}.wk"))?,
                wv: params.get(&format!("{prefix}.sa_{n}.wv"))?,
            })
        };
        Ok(FusionWeights {
            selfs: [sa(names[0])?, sa(names[1])?, sa(names[2])?],
            cross: CrossAttentionWeights {
                w1: params.get(&format!("{prefix}.ca.w1"))?,
                w2: params.get(&format!("{prefix}.ca.w2"))?,
                w3: params.get(&format!("{prefix}.ca.w3"))?,
            },
        })
    }
}

/// Raw weight matrices of one attention block, before they are put on a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub w3: Tensor,
}

impl AttentionParams {
    /// Draws every matrix from `uniform(±1/sqrt(C))`; `Wv` and `W3` start at
    /// zero when `zero_values` is set, which makes the block a plain sum.
    pub fn random<R: Rng + ?Sized>(channels: usize, zero_values: bool, rng: &mut R) -> Result<Self> {
        let reduced = reduced_channels(channels)?;
        let bound = init_bound(channels);
        let square = |rng: &mut R| {
            if zero_values {
                Tensor::zeros(&[channels, channels])
            } else {
                Tensor::uniform(&[channels, channels], bound, rng)
            }
        };
        Ok(AttentionParams {
            wq: Tensor::uniform(&[channels, reduced], bound, rng),
            wk: Tensor::uniform(&[channels, reduced], bound, rng),
            wv: square(rng),
            w1: Tensor::uniform(&[channels, reduced], bound, rng),
            w2: Tensor::uniform(&[channels, reduced], bound, rng),
            w3: square(rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.wv.shape()[0];
        let reduced = reduced_channels(c)?;
        let expect = [
            (&self.wq, [c, reduced]),
            (&self.wk, [c, reduced]),
            (&self.wv, [c, c]),
            (&self.w1, [c, reduced]),
            (&self.w2, [c, reduced]),
            (&self.w3, [c, c]),
        ];
        for (t, shape) in expect {
            if t.shape() != shape {
                return Err(Error::Shape {
                    op: "attention params",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::contract("attention weights must be finite"));
            }
        }
        Ok(())
    }

    /// Puts the self-attention triple on `g` as trainable leaves.
    pub fn bind_self(&self, g: &mut Graph) -> SelfAttentionWeights {
        SelfAttentionWeights {
            wq: g.param(self.wq.clone()),
            wk: g.param(self.wk.clone()),
            wv: g.param(self.wv.clone()),
        }
    }

    pub fn bind_cross(&self, g: &mut Graph) -> CrossAttentionWeights {
        CrossAttentionWeights {
            w1: g.param(self.w1.clone()),
            w2: g.param(self.w2.clone()),
            w3: g.param(self.w3.clone()),
        }
    }
}

/// `C' = C / 4`.
pub fn reduced_channels(channels: usize) -> Result<usize> {
    if channels == 0 || channels % 4 != 0 {
        return Err(Error::Config(format!(
            "attention width {channels} must be a positive multiple of 4"
        )));
    }
    Ok(channels / 4)
}

fn check_same_shape(g: &Graph, op: &'static str, vars: &[Var]) -> Result<()> {
    let first = g.shape(vars[0]);
    if first.len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: first.to_vec(),
            rhs: vec![0, 0],
        });
    }
    for v in &vars[1..] {
        if g.shape(*v) != first {
            return Err(Error::Shape {
                op,
                lhs: first.to_vec(),
                rhs: g.shape(*v).to_vec(),
            });
        }
    }
    Ok(())
}

/// `softmax(queries * keys^T * scale) * values`. The attention matrix is
/// recorded as a graph mark under `label`.
fn attend(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    scale: f64,
    label: &str,
) -> Result<Var> {
    let scores = g.matmul_nt(queries, keys)?;
    let scores = if scale == 1.0 { scores } else { g.scale(scores, scale) };
    let weights = g.softmax_rows(scores)?;
    g.mark(|| label.to_string(), weights);
    g.matmul(weights, values)
}

fn inv_sqrt_reduced(g: &Graph, w_reduced: Var) -> f64 {
    1.0 / (g.shape(w_reduced)[1] as f64).sqrt()
}

/// Intra-level (or intra-scale) self-attention with the residual `+ F`.
pub fn self_attention(g: &mut Graph, f: Var, w: &SelfAttentionWeights) -> Result<Var> {
    self_attention_labeled(g, f, w, "self_attention")
}

fn self_attention_labeled(
    g: &mut Graph,
    f: Var,
    w: &SelfAttentionWeights,
    label: &str,
) -> Result<Var> {
    let q = g.matmul(f, w.wq)?;
    let k = g.matmul(f, w.wk)?;
    let v = g.matmul(f, w.wv)?;
    let scale = inv_sqrt_reduced(g, w.wq);
    let mixed = attend(g, q, k, v, scale, label)?;
    g.add(mixed, f)
}

/// Cross-attention: `softmax((A W1)(B W2)^T / sqrt(C')) (G W3)`, no residual.
pub fn cross_attention_trio(
    g: &mut Graph,
    a: Var,
    b: Var,
    values: Var,
    w: &CrossAttentionWeights,
    opts: AttentionOptions,
) -> Result<Var> {
    cross_attention_labeled(g, [a, b, values], w, opts, "cross_attention")
}

fn cross_attention_labeled(
    g: &mut Graph,
    [a, b, values]: [Var; 3],
    w: &CrossAttentionWeights,
    opts: AttentionOptions,
    label: &str,
) -> Result<Var> {
    check_same_shape(g, "cross_attention_trio", &[a, b, values])?;
    let q = g.matmul(a, w.w1)?;
    let k = g.matmul(b, w.w2)?;
    let v = g.matmul(values, w.w3)?;
    let scale = if opts.scale_cross_scores {
        inv_sqrt_reduced(g, w.w1)
    } else {
        1.0
    };
    attend(g, q, k, v, scale, label)
}

/// Self-attends each input, cross-attends the trio and adds the three
/// self-attended inputs: `AT(S1, S2, S3) + S1 + S2 + S3`.
pub fn fuse_three(
    g: &mut Graph,
    inputs: [Var; 3],
    w: &FusionWeights,
    opts: AttentionOptions,
    label: &str,
) -> Result<Var> {
    check_same_shape(g, label_op(label), &inputs)?;
    let mut sc = [inputs[0]; 3];
    for i in 0..3 {
        sc[i] = self_attention_labeled(g, inputs[i], &w.selfs[i], &format!("{label}.sa{}", i + 1))?;
    }
    let at = cross_attention_labeled(g, sc, &w.cross, opts, &format!("{label}.ca"))?;
    g.add_all(&[at, sc[0], sc[1], sc[2]])
}

fn label_op(label: &str) -> &'static str {
    if label.starts_with("csca") {
        "csca"
    } else {
        "clca"
    }
}

/// Cross-level cross-attention over the low, mid and high features of one path.
pub fn clca(
    g: &mut Graph,
    levels: [Var; 3],
    w: &FusionWeights,
    opts: AttentionOptions,
) -> Result<Var> {
    fuse_three(g, levels, w, opts, "clca")
}

/// Cross-scale cross-attention over the three upsampled path features.
pub fn csca(
    g: &mut Graph,
    scales: [Var; 3],
    w: &FusionWeights,
    opts: AttentionOptions,
) -> Result<Var> {
    fuse_three(g, scales, w, opts, "csca")
}

/// Interpolates path features `F` (`N_i x C`) onto all `N` input points with
/// `k`-nearest inverse-distance weights, optionally appends the input
/// coordinates, and applies a shared MLP.
pub fn upsample(
    g: &mut Graph,
    f: Var,
    path_pts: &[Point3],
    full_pts: &[Point3],
    k: usize,
    append_coords: bool,
    mlp: &[Dense],
) -> Result<Var> {
    if g.value(f).rows() != path_pts.len() {
        return Err(Error::Shape {
            op: "upsample",
            lhs: g.shape(f).to_vec(),
            rhs: vec![path_pts.len(), 3],
        });
    }
    let k = k.min(path_pts.len());
    let plan = InterpolationPlan::new(path_pts, full_pts, k)?;
    let mut x = plan.apply(g, f)?;
    if append_coords {
        let coords = Tensor::matrix(
            full_pts.len(),
            3,
            full_pts.iter().flatten().copied().collect(),
        )?;
        let c = g.constant(coords);
        x = g.concat_cols(&[x, c])?;
    }
    shared_mlp(g, x, mlp)
}

/// Inserts the weights of one fusion block under `prefix`.
pub(crate) fn init_fusion_params<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    names: [&str; 3],
    channels: usize,
    zero_values: bool,
    rng: &mut R,
) -> Result<()> {
    let reduced = reduced_channels(channels)?;
    let bound = init_bound(channels);
    let mut matrix = |params: &mut ModelParams, name: String, cols: usize, zero: bool| {
        let t = if zero {
            Tensor::zeros(&[channels, cols])
        } else {
            Tensor::uniform(&[channels, cols], bound, rng)
        };
        params.insert(name, t)
    };
    for n in names {
        let p = format!("{prefix}.sa_{n}");
        matrix(params, format!("{p}.wq"), reduced, false)?;
        matrix(params, format!("{p}.wk"), reduced, false)?;
        matrix(params, format!("{p}.wv"), channels, zero_values)?;
    }
    matrix(params, format!("{prefix}.ca.w1"), reduced, false)?;
    matrix(params, format!("{prefix}.ca.w2"), reduced, false)?;
    matrix(params, format!("{prefix}.ca.w3"), channels, zero_values)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bind(g: &mut Graph, p: &AttentionParams) -> (SelfAttentionWeights, CrossAttentionWeights) {
        (p.bind_self(g), p.bind_cross(g))
    }

    /// Direct dense evaluation of softmax(a b^T * s) v.
    fn attend_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], s: f64) -> Vec<Vec<f64>> {
        q.iter()
            .map(|qr| {
                let scores: Vec<f64> = k
                    .iter()
                    .map(|kr| qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() * s)
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..v[0].len())
                    .map(|c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum())
                    .collect()
            })
            .collect()
    }

    fn mm(a: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
        a.iter()
            .map(|r| (0..w.cols()).map(|c| r.iter().enumerate().map(|(i, x)| x * w.at(i, c)).sum()).collect())
            .collect()
    }

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
    }

    fn self_oracle(f: &Tensor, p: &AttentionParams) -> Vec<Vec<f64>> {
        let fr = rows(f);
        let s = 1.0 / ((p.wq.cols()) as f64).sqrt();
        let out = attend_oracle(&mm(&fr, &p.wq), &mm(&fr, &p.wk), &mm(&fr, &p.wv), s);
        out.iter().zip(&fr).map(|(o, x)| o.iter().zip(x).map(|(a, b)| a + b).collect()).collect()
    }

    fn cross_oracle(a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>], p: &AttentionParams) -> Vec<Vec<f64>> {
        let s = 1.0 / ((p.w1.cols()) as f64).sqrt();
        attend_oracle(&mm(a, &p.w1), &mm(b, &p.w2), &mm(c, &p.w3), s)
    }

    fn assert_close(got: &Tensor, want: &[Vec<f64>], tol: f64) {
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((got.at(r, c) - v).abs() <= tol, "({r},{c}): {} vs {v}", got.at(r, c));
            }
        }
    }

    #[test]
    fn single_point_self_attention_is_value_plus_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::random(4, false, &mut rng).unwrap();
        let f = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let mut g = Graph::new();
        let (sw, _) = bind(&mut g, &p);
        let fv = g.constant(f.clone());
        let out = self_attention(&mut g, fv, &sw).unwrap();
        for c in 0..4 {
            let v: f64 = (0..4).map(|i| f.at(0, i) * p.wv.at(i, c)).sum();
            assert!((g.value(out).at(0, c) - (v + f.at(0, c))).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_features_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::random(8, false, &mut rng).unwrap();
        let mut g = Graph::new();
        let (sw, cw) = bind(&mut g, &p);
        let z = g.constant(Tensor::zeros(&[5, 8]));
        let out = self_attention(&mut g, z, &sw).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        let w = FusionWeights {
            selfs: [sw, sw, sw],
            cross: cw,
        };
        let fused = clca(&mut g, [z, z, z], &w, AttentionOptions::default()).unwrap();
        assert!(g.value(fused).data().iter().all(|&v| v == 0.0));
        let fused = csca(&mut g, [z, z, z], &w, AttentionOptions::default()).unwrap();
        assert!(g.value(fused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn self_attention_worksheet() {
        // N = 2, C = 4, C' = 1. Wq = Wk pick 2x the first channel, Wv = I.
        let mut wq = Tensor::zeros(&[4, 1]);
        wq.data_mut()[0] = 2.0;
        let p = AttentionParams {
            wq: wq.clone(),
            wk: wq,
            wv: Tensor::identity(4),
            w1: Tensor::zeros(&[4, 1]),
            w2: Tensor::zeros(&[4, 1]),
            w3: Tensor::zeros(&[4, 4]),
        };
        p.validate().unwrap();
        let f = Tensor::from_rows(&[[1.0, 0.0, 2.0, -1.0], [0.5, 1.0, 0.0, 3.0]]).unwrap();
        // q = k = [2, 1]; scores = [[4, 2], [2, 1]] (sqrt(C') = 1)
        let a0 = [4f64.exp() / (4f64.exp() + 2f64.exp()), 2f64.exp() / (4f64.exp() + 2f64.exp())];
        let a1 = [2f64.exp() / (2f64.exp() + 1f64.exp()), 1f64.exp() / (2f64.exp() + 1f64.exp())];
        let mut want = vec![vec![0.0; 4]; 2];
        for c in 0..4 {
            want[0][c] = a0[0] * f.at(0, c) + a0[1] * f.at(1, c) + f.at(0, c);
            want[1][c] = a1[0] * f.at(0, c) + a1[1] * f.at(1, c) + f.at(1, c);
        }
        let mut g = Graph::new();
        let (sw, _) = bind(&mut g, &p);
        let fv = g.constant(f);
        let out = self_attention(&mut g, fv, &sw).unwrap();
        assert_close(g.value(out), &want, 1e-10);
    }

    #[test]
    fn constant_keys_give_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::random(4, false, &mut rng).unwrap();
        let a = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let row = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let b = Tensor::from_rows(&[row.row(0), row.row(0), row.row(0)]).unwrap();
        let gv = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let mut g = Graph::new();
        let (_, cw) = bind(&mut g, &p);
        let (av, bv, gvv) = (g.constant(a), g.constant(b), g.constant(gv.clone()));
        let out = cross_attention_trio(&mut g, av, bv, gvv, &cw, AttentionOptions::default()).unwrap();
        let proj = mm(&rows(&gv), &p.w3);
        for c in 0..4 {
            let mean = (proj[0][c] + proj[1][c] + proj[2][c]) / 3.0;
            for r in 0..3 {
                assert!((g.value(out).at(r, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_cross_attention_is_projected_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::random(4, false, &mut rng).unwrap();
        let t: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[1, 4], 1.0, &mut rng)).collect();
        let mut g = Graph::new();
        let (_, cw) = bind(&mut g, &p);
        let v: Vec<Var> = t.iter().map(|x| g.constant(x.clone())).collect();
        let out = cross_attention_trio(&mut g, v[0], v[1], v[2], &cw, AttentionOptions::default()).unwrap();
        let want = mm(&rows(&t[2]), &p.w3);
        assert_close(g.value(out), &want, 1e-14);
    }

    #[test]
    fn cross_attention_worksheet() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AttentionParams::random(4, false, &mut rng).unwrap();
        let t: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[2, 4], 1.0, &mut rng)).collect();
        let mut g = Graph::new();
        let (_, cw) = bind(&mut g, &p);
        let v: Vec<Var> = t.iter().map(|x| g.constant(x.clone())).collect();
        let out = cross_attention_trio(&mut g, v[0], v[1], v[2], &cw, AttentionOptions::default()).unwrap();
        let want = cross_oracle(&rows(&t[0]), &rows(&t[1]), &rows(&t[2]), &p);
        assert_close(g.value(out), &want, 1e-10);
    }

    #[test]
    fn unscaled_cross_attention_option() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = AttentionParams::random(8, false, &mut rng).unwrap();
        let t: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[3, 8], 1.0, &mut rng)).collect();
        let mut g = Graph::new();
        let (_, cw) = bind(&mut g, &p);
        let v: Vec<Var> = t.iter().map(|x| g.constant(x.clone())).collect();
        let opts = AttentionOptions {
            scale_cross_scores: false,
        };
        let out = cross_attention_trio(&mut g, v[0], v[1], v[2], &cw, opts).unwrap();
        let want = attend_oracle(
            &mm(&rows(&t[0]), &p.w1),
            &mm(&rows(&t[1]), &p.w2),
            &mm(&rows(&t[2]), &p.w3),
            1.0,
        );
        assert_close(g.value(out), &want, 1e-12);
    }

    fn fusion_oracle(inputs: &[Tensor; 3], ps: &[AttentionParams; 3], cross: &AttentionParams) -> Vec<Vec<f64>> {
        let sc: Vec<Vec<Vec<f64>>> = (0..3).map(|i| self_oracle(&inputs[i], &ps[i])).collect();
        let at = cross_oracle(&sc[0], &sc[1], &sc[2], cross);
        at.iter()
            .enumerate()
            .map(|(r, row)| row.iter().enumerate().map(|(c, v)| v + sc[0][r][c] + sc[1][r][c] + sc[2][r][c]).collect())
            .collect()
    }

    #[test]
    fn clca_matches_composed_worksheet() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps: [AttentionParams; 3] = std::array::from_fn(|_| AttentionParams::random(4, false, &mut rng).unwrap());
        let cross = AttentionParams::random(4, false, &mut rng).unwrap();
        let inputs: [Tensor; 3] = std::array::from_fn(|_| Tensor::uniform(&[3, 4], 1.0, &mut rng));
        let mut g = Graph::new();
        let w = FusionWeights {
            selfs: std::array::from_fn(|i| ps[i].bind_self(&mut g)),
            cross: cross.bind_cross(&mut g),
        };
        let v: [Var; 3] = std::array::from_fn(|i| g.constant(inputs[i].clone()));
        let out = clca(&mut g, v, &w, AttentionOptions::default()).unwrap();
        assert_close(g.value(out), &fusion_oracle(&inputs, &ps, &cross), 1e-10);
    }

    #[test]
    fn csca_matches_composed_worksheet_and_identity_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ps: [AttentionParams; 3] = std::array::from_fn(|_| AttentionParams::random(4, false, &mut rng).unwrap());
        let cross = AttentionParams::random(4, false, &mut rng).unwrap();
        let inputs: [Tensor; 3] = std::array::from_fn(|_| Tensor::uniform(&[2, 4], 1.0, &mut rng));
        let mut g = Graph::new();
        let w = FusionWeights {
            selfs: std::array::from_fn(|i| ps[i].bind_self(&mut g)),
            cross: cross.bind_cross(&mut g),
        };
        let v: [Var; 3] = std::array::from_fn(|i| g.constant(inputs[i].clone()));
        let out = csca(&mut g, v, &w, AttentionOptions::default()).unwrap();
        assert_close(g.value(out), &fusion_oracle(&inputs, &ps, &cross), 1e-10);

        // Identical scales with zeroed value projections reduce to 3S.
        let zero = AttentionParams::random(4, true, &mut rng).unwrap();
        let mut g = Graph::new();
        let wz = FusionWeights {
            selfs: std::array::from_fn(|_| zero.bind_self(&mut g)),
            cross: zero.bind_cross(&mut g),
        };
        let s = g.constant(inputs[0].clone());
        let out = csca(&mut g, [s, s, s], &wz, AttentionOptions::default()).unwrap();
        for (o, x) in g.value(out).data().iter().zip(inputs[0].data()) {
            assert!((o - 3.0 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_value_weights_make_self_attention_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = AttentionParams::random(8, true, &mut rng).unwrap();
        let f = Tensor::uniform(&[4, 8], 2.0, &mut rng);
        let mut g = Graph::new();
        let sw = p.bind_self(&mut g);
        let fv = g.constant(f.clone());
        let out = self_attention(&mut g, fv, &sw).unwrap();
        assert_eq!(g.value(out), &f);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ps: [AttentionParams; 3] = std::array::from_fn(|_| AttentionParams::random(8, false, &mut rng).unwrap());
        let mut g = Graph::new();
        g.enable_marks();
        let w = FusionWeights {
            selfs: std::array::from_fn(|i| ps[i].bind_self(&mut g)),
            cross: ps[0].bind_cross(&mut g),
        };
        let v: [Var; 3] = std::array::from_fn(|_| g.constant(Tensor::uniform(&[6, 8], 30.0, &mut rng)));
        clca(&mut g, v, &w, AttentionOptions::default()).unwrap();
        assert_eq!(g.marks().len(), 4);
        for (_, m) in g.marks() {
            let t = g.value(*m);
            for r in 0..t.rows() {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = AttentionParams::random(4, false, &mut rng).unwrap();
        let mut g = Graph::new();
        let (_, cw) = bind(&mut g, &p);
        let a = g.constant(Tensor::zeros(&[3, 4]));
        let b = g.constant(Tensor::zeros(&[2, 4]));
        let err = cross_attention_trio(&mut g, a, b, a, &cw, AttentionOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(AttentionParams::random(6, false, &mut rng).is_err());
    }

    #[test]
    fn upsample_at_full_resolution_is_mlp_of_features() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let f = Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let id = Dense {
            w: g.constant(Tensor::identity(2)),
            b: None,
            standardize: false,
        };
        let out = upsample(&mut g, fv, &pts, &pts, 3, false, &[id]).unwrap();
        let want: Vec<f64> = f.data().iter().map(|v| v.max(0.0)).collect();
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_hand_arithmetic() {
        // Sources at x=0 (feature 1) and x=1 (feature 3); queries at 0.25, 0.5, 0.8.
        let src = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let q = [[0.25, 0.0, 0.0], [0.5, 0.0, 0.0], [0.8, 0.0, 0.0]];
        let mut g = Graph::new();
        let fv = g.constant(Tensor::from_rows(&[[1.0], [3.0]]).unwrap());
        let id = Dense {
            w: g.constant(Tensor::identity(1)),
            b: None,
            standardize: false,
        };
        let out = upsample(&mut g, fv, &src, &q, 3, false, &[id]).unwrap();
        // weights (1/d0, 1/d1) normalised: 0.25 -> (0.75, 0.25); 0.5 -> (0.5, 0.5); 0.8 -> (0.2, 0.8)
        let want = [0.75 * 1.0 + 0.25 * 3.0, 2.0, 0.2 * 1.0 + 0.8 * 3.0];
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(g.shape(out), &[3, 1]);
    }

    #[test]
    fn fusion_params_use_plain_matrix_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = ModelParams::new();
        init_fusion_params(&mut params, "csca", SCALE_NAMES, 8, false, &mut rng).unwrap();
        let names: Vec<&str> = params.names().collect();
        assert!(names.contains(&"csca.sa_s1.wq"));
        assert!(names.contains(&"csca.ca.w3"));
        assert_eq!(params.len(), 12);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        FusionWeights::bind(&bound, "csca", SCALE_NAMES).unwrap();
    }
}
