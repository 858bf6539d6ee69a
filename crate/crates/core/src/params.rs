//! Named parameter storage and the shared-MLP building block.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Every trainable tensor of a network, keyed by a stable hierarchical name
/// such as `path1.layer2.mlp0.w`. Iteration order is the name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Param {
                name,
                msg: "duplicate parameter name".into(),
            });
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Puts every tensor on `g`, as trainable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Checks that `self` has exactly the names and shapes of `expected`.
    pub fn check_layout(&self, expected: &ModelParams) -> Result<()> {
        for (name, t) in &expected.tensors {
            match self.tensors.get(name) {
                None => {
                    return Err(Error::Param {
                        name: name.clone(),
                        msg: "missing from checkpoint".into(),
                    })
                }
                Some(have) if have.shape() != t.shape() => {
                    return Err(Error::Param {
                        name: name.clone(),
                        msg: format!("shape {:?}, config expects {:?}", have.shape(), t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.tensors.contains_key(*k)) {
            return Err(Error::Param {
                name: extra.clone(),
                msg: "not part of this network config".into(),
            });
        }
        Ok(())
    }
}

/// Parameters placed on one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Param {
            name: name.to_string(),
            msg: "not bound on this graph".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Reads back the gradient of every parameter after `backward`.
    /// Parameters the loss did not reach get zeros.
    pub fn gradients(&self, g: &Graph) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let grad = g
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()]);
                (name.clone(), grad)
            })
            .collect()
    }
}

/// One fully connected layer: `x * w + b`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: Var,
    pub b: Option<Var>,
    /// Inside [`shared_mlp`], standardise each output column over the rows
    /// before the relu.
    pub standardize: bool,
}

/// Variance floor of feature standardisation.
pub const STANDARDIZE_EPS: f64 = 1e-5;

impl Dense {
    /// Looks up `{prefix}.w` and, if bound, `{prefix}.b`.
    pub fn bind(params: &BoundParams, prefix: &str) -> Result<Dense> {
        Ok(Dense {
            w: params.get(&format!("{prefix}.w"))?,
            b: params.get(&format!("{prefix}.b")).ok(),
            standardize: false,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.w, self.b)
    }
}

/// Binds `{prefix}.mlp0`, `{prefix}.mlp1`, ... for `depth` layers.
pub fn bind_mlp(params: &BoundParams, prefix: &str, depth: usize, standardize: bool) -> Result<Vec<Dense>> {
    (0..depth)
        .map(|i| {
            let mut d = Dense::bind(params, &format!("{prefix}.mlp{i}"))?;
            d.standardize = standardize;
            Ok(d)
        })
        .collect()
}

/// Point-wise shared MLP: every layer is linear (optionally standardised)
/// followed by relu.
pub fn shared_mlp(g: &mut Graph, x: Var, layers: &[Dense]) -> Result<Var> {
    layers.iter().try_fold(x, |h, layer| {
        let mut z = layer.forward(g, h)?;
        if layer.standardize {
            z = g.standardize_cols(z, STANDARDIZE_EPS)?;
        }
        Ok(g.relu(z))
    })
}

/// Standard fan-in bound `1 / sqrt(fan_in)` used for every weight and bias.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Inserts `{prefix}.w` (and `{prefix}.b`) drawn from `uniform(±1/sqrt(fan_in))`.
pub fn init_dense<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    rng: &mut R,
) -> Result<()> {
    let bound = init_bound(fan_in);
    params.insert(format!("{prefix}.w"), Tensor::uniform(&[fan_in, fan_out], bound, rng))?;
    if bias {
        params.insert(format!("{prefix}.b"), Tensor::uniform(&[fan_out], bound, rng))?;
    }
    Ok(())
}

/// Inserts `{prefix}.mlp{i}` layers for the chain `input -> widths[0] -> ...`.
/// Standardised layers get no bias: the column mean removal cancels it.
pub fn init_mlp<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    input: usize,
    widths: &[usize],
    standardize: bool,
    rng: &mut R,
) -> Result<()> {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        init_dense(params, &format!("{prefix}.mlp{i}"), fan_in, w, !standardize, rng)?;
        fan_in = w;
    }
    Ok(())
}
