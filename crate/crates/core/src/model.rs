//! Classification and segmentation networks assembled from the pyramid,
//! cross-level fusion, upsampling, cross-scale fusion and a fully connected
//! head.
//!
//! Data flow for one cloud of `N` points:
//!
//! 1. three pyramid paths give low/mid/high features per path (`N_i x C`);
//! 2. each level is lifted to the fusion width by a point-wise linear map and
//!    the three are fused by CLCA (or summed, for ablations without it);
//! 3. each path's fused features are interpolated back to all `N` points and
//!    passed through the upsampling MLP, giving three `N x D` scales;
//! 4. CSCA fuses the scales (or they are summed);
//! 5. classification pools `concat(max, mean)` over points and runs the head,
//!    segmentation runs the head on every point.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    clca, csca, init_fusion_params, reduced_channels, upsample, AttentionOptions, FusionWeights,
    LEVEL_NAMES, SCALE_NAMES,
};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::params::{bind_mlp, init_dense, init_mlp, BoundParams, Dense, ModelParams};
use crate::pyramid::{build_pyramid, init_path_params, validate_paths, LayerSpec, PathConfig};
use crate::tensor::{Graph, Tensor, Var};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

/// Which fusion modules are active. `Baseline` replaces both CLCA and CSCA
/// by plain summation of their inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Clca,
    Csca,
    Full,
}

impl Variant {
    pub fn uses_clca(self) -> bool {
        matches!(self, Variant::Clca | Variant::Full)
    }

    pub fn uses_csca(self) -> bool {
        matches!(self, Variant::Csca | Variant::Full)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "clca" => Ok(Variant::Clca),
            "csca" => Ok(Variant::Csca),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown ablation variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Average over points (segmentation) so the loss does not scale with N.
    Mean,
    Sum,
}

/// Declarative description of a whole network. Serialised as the JSON
/// network config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub version: u32,
    pub task: Task,
    pub num_classes: usize,
    pub input_points: usize,
    /// Extra per-point channels beyond xyz.
    #[serde(default)]
    pub attr_dim: usize,
    pub paths: Vec<PathConfig>,
    /// Width the level features are lifted to before cross-level fusion.
    pub clca_channels: usize,
    /// Width `D` of the upsampled scales and the cross-scale fusion.
    pub csca_channels: usize,
    /// Widths of the upsampling MLP; the last one must equal `csca_channels`.
    pub upsample_mlp: Vec<usize>,
    /// Append the xyz of every point to the interpolated features.
    pub upsample_append_coords: bool,
    pub interpolation_k: usize,
    /// Fully connected widths, the last one being `num_classes`.
    pub head: Vec<usize>,
    /// Drop probability after each hidden head layer (training only).
    pub dropout: f64,
    pub variant: Variant,
    pub attention: AttentionOptions,
    /// Start `Wv` and `W3` at zero so fusion blocks begin as summation.
    pub zero_init_values: bool,
    pub loss_reduction: LossReduction,
    /// Seed farthest point sampling at a random point during training.
    pub random_fps_start: bool,
    /// Standardise every shared-MLP layer's pre-activations over the points
    /// of the sample (pyramid and upsampling MLPs).
    #[serde(default)]
    pub standardize_features: bool,
}

fn path(resolution: usize, layers: [(f64, usize, &[usize]); 3]) -> PathConfig {
    PathConfig {
        resolution,
        layers: layers.iter().map(|&(r, k, mlp)| LayerSpec::new(r, k, mlp)).collect(),
    }
}

/// Like [`path`], with radii given for 512 path points and widened by
/// `sqrt(512 / resolution)` so a ball keeps about the same number of
/// neighbours on the sparser path. Radii are rounded to 3 decimals.
fn density_scaled_path(resolution: usize, layers: [(f64, usize, &[usize]); 3]) -> PathConfig {
    let f = (512.0 / resolution as f64).sqrt();
    path(resolution, layers.map(|(r, k, mlp)| ((r * f * 1000.0).round() / 1000.0, k, mlp)))
}

impl NetworkConfig {
    /// Full-size classification network (512/256/128 points, 128 channels,
    /// fusion widths 256 and 512, head 1024-512-256-C).
    pub fn standard_classification(num_classes: usize) -> Self {
        let layers = |_| {
            [
                (0.2, 16, &[64, 128, 128][..]),
                (0.4, 32, &[128, 128][..]),
                (0.8, 64, &[128, 128][..]),
            ]
        };
        NetworkConfig {
            version: CONFIG_VERSION,
            task: Task::Classification,
            num_classes,
            input_points: 1024,
            attr_dim: 0,
            paths: [512, 256, 128].iter().map(|&n| path(n, layers(n))).collect(),
            clca_channels: 256,
            csca_channels: 512,
            upsample_mlp: vec![512],
            upsample_append_coords: false,
            interpolation_k: 3,
            head: vec![512, 256, num_classes],
            dropout: 0.4,
            variant: Variant::Full,
            attention: AttentionOptions::default(),
            zero_init_values: false,
            loss_reduction: LossReduction::Mean,
            random_fps_start: false,
            standardize_features: false,
        }
    }

    /// Full-size segmentation network (2048 input points, radii 0.1/0.2/0.4,
    /// upsampling MLP 259-512-256-128, head 128-C).
    pub fn standard_segmentation(num_classes: usize) -> Self {
        let layers = |_| {
            [
                (0.1, 16, &[64, 128, 128][..]),
                (0.2, 32, &[128, 128][..]),
                (0.4, 64, &[128, 128][..]),
            ]
        };
        NetworkConfig {
            task: Task::Segmentation,
            input_points: 2048,
            paths: [512, 256, 128].iter().map(|&n| path(n, layers(n))).collect(),
            csca_channels: 128,
            upsample_mlp: vec![512, 256, 128],
            upsample_append_coords: true,
            head: vec![128, num_classes],
            ..NetworkConfig::standard_classification(num_classes)
        }
    }

    /// Scaled-down classification network for 256-point clouds on one core
    /// (paths of 128/64/32 points, 32 channels, standardised features).
    pub fn desk_classification(num_classes: usize) -> Self {
        NetworkConfig {
            input_points: 256,
            paths: vec![
                density_scaled_path(128, [(0.2, 8, &[16, 32]), (0.4, 12, &[32]), (0.8, 16, &[32])]),
                density_scaled_path(64, [(0.2, 8, &[16, 32]), (0.4, 12, &[32]), (0.8, 16, &[32])]),
                density_scaled_path(32, [(0.2, 8, &[16, 32]), (0.4, 12, &[32]), (0.8, 16, &[32])]),
            ],
            clca_channels: 32,
            csca_channels: 32,
            upsample_mlp: vec![32],
            head: vec![64, 32, num_classes],
            standardize_features: true,
            ..NetworkConfig::standard_classification(num_classes)
        }
    }

    /// Scaled-down segmentation network for 512-point clouds on one core
    /// (paths of 128/64/32 points, 32 channels, standardised features).
    pub fn desk_segmentation(num_classes: usize) -> Self {
        NetworkConfig {
            input_points: 512,
            paths: vec![
                density_scaled_path(128, [(0.1, 8, &[16, 32]), (0.2, 12, &[32]), (0.4, 16, &[32])]),
                density_scaled_path(64, [(0.1, 8, &[16, 32]), (0.2, 12, &[32]), (0.4, 16, &[32])]),
                density_scaled_path(32, [(0.1, 8, &[16, 32]), (0.2, 12, &[32]), (0.4, 16, &[32])]),
            ],
            clca_channels: 32,
            csca_channels: 32,
            upsample_mlp: vec![64, 32],
            head: vec![32, num_classes],
            standardize_features: true,
            ..NetworkConfig::standard_segmentation(num_classes)
        }
    }

    /// Tiny network (64 points, 8 channels) for end-to-end gradient checks.
    pub fn miniature(task: Task, num_classes: usize) -> Self {
        let base = match task {
            Task::Classification => NetworkConfig::standard_classification(num_classes),
            Task::Segmentation => NetworkConfig::standard_segmentation(num_classes),
        };
        NetworkConfig {
            input_points: 64,
            paths: vec![
                path(16, [(0.7, 4, &[8]), (1.0, 4, &[8]), (1.5, 4, &[8])]),
                path(8, [(0.9, 4, &[8]), (1.3, 4, &[8]), (2.0, 4, &[8])]),
                path(4, [(1.2, 3, &[8]), (1.8, 3, &[8]), (2.5, 3, &[8])]),
            ],
            clca_channels: 8,
            csca_channels: 8,
            upsample_mlp: vec![8],
            head: vec![8, num_classes],
            ..base
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "network config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        validate_paths(&self.paths)?;
        if self.paths[0].resolution > self.input_points {
            return Err(Error::Config(format!(
                "first path resolution {} exceeds input_points {}",
                self.paths[0].resolution, self.input_points
            )));
        }
        reduced_channels(self.clca_channels)?;
        reduced_channels(self.csca_channels)?;
        if self.upsample_mlp.last() != Some(&self.csca_channels) {
            return Err(Error::Config(format!(
                "upsample MLP must end at csca_channels = {}",
                self.csca_channels
            )));
        }
        if self.head.last() != Some(&self.num_classes) {
            return Err(Error::Config(format!(
                "head must end at num_classes = {}",
                self.num_classes
            )));
        }
        if self.upsample_mlp.contains(&0) || self.head.contains(&0) || self.interpolation_k == 0 {
            return Err(Error::Config("layer widths and interpolation k must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Width entering the head.
    pub fn head_input(&self) -> usize {
        match self.task {
            Task::Classification => 2 * self.csca_channels,
            Task::Segmentation => self.csca_channels,
        }
    }

    pub fn upsample_input(&self) -> usize {
        self.clca_channels + if self.upsample_append_coords { 3 } else { 0 }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NetworkConfig::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Whether a forward pass is for training (dropout, optional random FPS seed)
/// or evaluation.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Logits and the parameter bindings of one forward pass.
pub struct Forward {
    /// `1 x C_cls` for classification, `N x C_cls` for segmentation.
    pub logits: Var,
    pub params: BoundParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: ModelParams,
}

/// Creates every parameter of `cfg` in a fixed order.
pub fn init_params<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<ModelParams> {
    cfg.validate()?;
    let mut p = ModelParams::new();
    let c = cfg.paths[0].channels();
    for (i, path_cfg) in cfg.paths.iter().enumerate() {
        let prefix = format!("path{}", i + 1);
        init_path_params(&mut p, &prefix, path_cfg, cfg.attr_dim, cfg.standardize_features, rng)?;
        for name in LEVEL_NAMES {
            init_dense(&mut p, &format!("{prefix}.clca.lift_{name}"), c, cfg.clca_channels, true, rng)?;
        }
        if cfg.variant.uses_clca() {
            init_fusion_params(
                &mut p,
                &format!("{prefix}.clca"),
                LEVEL_NAMES,
                cfg.clca_channels,
                cfg.zero_init_values,
                rng,
            )?;
        }
        init_mlp(&mut p, &format!("{prefix}.up"), cfg.upsample_input(), &cfg.upsample_mlp, cfg.standardize_features, rng)?;
    }
    if cfg.variant.uses_csca() {
        init_fusion_params(&mut p, "csca", SCALE_NAMES, cfg.csca_channels, cfg.zero_init_values, rng)?;
    }
    let mut fan_in = cfg.head_input();
    for (j, &w) in cfg.head.iter().enumerate() {
        init_dense(&mut p, &format!("head.fc{j}"), fan_in, w, true, rng)?;
        fan_in = w;
    }
    Ok(p)
}

impl Network {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let params = init_params(&config, rng)?;
        Ok(Network { config, params })
    }

    /// Wraps existing parameters after checking their names and shapes.
    pub fn with_params(config: NetworkConfig, params: ModelParams) -> Result<Self> {
        let template = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        params.check_layout(&template)?;
        Ok(Network { config, params })
    }

    /// Loads a CLCW checkpoint and validates it against `config`.
    pub fn load(config: NetworkConfig, path: &Path) -> Result<Self> {
        Network::with_params(config, checkpoint::load_params(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.params)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    /// Records the full forward pass for `cloud` on `g`.
    pub fn forward(&self, g: &mut Graph, cloud: &PointCloud, mode: Mode<'_>) -> Result<Forward> {
        let cfg = &self.config;
        if cloud.len() < cfg.paths[0].resolution {
            return Err(Error::contract(format!(
                "cloud has {} points, the network samples {}",
                cloud.len(),
                cfg.paths[0].resolution
            )));
        }
        if cloud.attr_dim() != cfg.attr_dim {
            return Err(Error::contract(format!(
                "cloud has {} attribute channels, the network expects {}",
                cloud.attr_dim(),
                cfg.attr_dim
            )));
        }
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        let fps_start = match &mut rng {
            Some(r) if cfg.random_fps_start => Some(r.random_range(0..cloud.len())),
            _ => None,
        };

        let params = self.params.bind(g, true);
        let levels = build_pyramid(g, cloud, &cfg.paths, &params, fps_start, cfg.standardize_features)?;
        let mut scales = Vec::with_capacity(3);
        for (i, lv) in levels.iter().enumerate() {
            let prefix = format!("path{}", i + 1);
            let mut lifted = [lv.low; 3];
            for (slot, (&level, name)) in lifted.iter_mut().zip(lv.levels().iter().zip(LEVEL_NAMES)) {
                let lift = Dense::bind(&params, &format!("{prefix}.clca.lift_{name}"))?;
                *slot = lift.forward(g, level)?;
            }
            let fused = if cfg.variant.uses_clca() {
                let w = FusionWeights::bind(&params, &format!("{prefix}.clca"), LEVEL_NAMES)?;
                clca(g, lifted, &w, cfg.attention)?
            } else {
                g.add_all(&lifted)?
            };
            let up = bind_mlp(&params, &format!("{prefix}.up"), cfg.upsample_mlp.len(), cfg.standardize_features)?;
            scales.push(upsample(
                g,
                fused,
                &lv.points,
                cloud.coords(),
                cfg.interpolation_k,
                cfg.upsample_append_coords,
                &up,
            )?);
        }
        let scales = [scales[0], scales[1], scales[2]];
        let fused = if cfg.variant.uses_csca() {
            let w = FusionWeights::bind(&params, "csca", SCALE_NAMES)?;
            csca(g, scales, &w, cfg.attention)?
        } else {
            g.add_all(&scales)?
        };

        let mut x = match cfg.task {
            Task::Classification => {
                let mx = g.max_over_rows(fused)?;
                let mean = g.mean_over_rows(fused)?;
                g.concat_cols(&[mx, mean])?
            }
            Task::Segmentation => fused,
        };
        let last = cfg.head.len() - 1;
        for j in 0..=last {
            let fc = Dense::bind(&params, &format!("head.fc{j}"))?;
            x = fc.forward(g, x)?;
            if j < last {
                x = g.relu(x);
                if let Some(r) = rng.as_deref_mut() {
                    x = dropout(g, x, cfg.dropout, r)?;
                }
            }
        }
        Ok(Forward { logits: x, params })
    }

    /// Class logits for one cloud (`1 x C_cls`).
    pub fn classify_forward(&self, g: &mut Graph, cloud: &PointCloud, mode: Mode<'_>) -> Result<Forward> {
        if self.task() != Task::Classification {
            return Err(Error::contract("classify_forward on a segmentation network"));
        }
        self.forward(g, cloud, mode)
    }

    /// Per-point logits (`N x C_cls`).
    pub fn segment_forward(&self, g: &mut Graph, cloud: &PointCloud, mode: Mode<'_>) -> Result<Forward> {
        if self.task() != Task::Segmentation {
            return Err(Error::contract("segment_forward on a classification network"));
        }
        self.forward(g, cloud, mode)
    }

    /// Evaluation-mode logits as a plain tensor.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, cloud, Mode::Eval)?;
        Ok(g.value(out.logits).clone())
    }

    /// Evaluates every cloud independently; results keep input order.
    pub fn logits_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Tensor>> {
        clouds.par_iter().map(|c| self.logits(c)).collect()
    }

    /// Cross-entropy against the labels carried by `cloud`.
    pub fn loss(&self, g: &mut Graph, logits: Var, cloud: &PointCloud) -> Result<Var> {
        let targets = targets_of(self.task(), cloud)?;
        cross_entropy(g, logits, &targets, self.task(), self.config.loss_reduction)
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    g.mask_mul(x, mask)
}

/// Target class indices for `cloud`: its cloud label (classification) or its
/// point labels (segmentation).
pub fn targets_of(task: Task, cloud: &PointCloud) -> Result<Vec<usize>> {
    match task {
        Task::Classification => cloud
            .cloud_label()
            .map(|l| vec![l as usize])
            .ok_or_else(|| Error::Data("classification sample without a cloud label".into())),
        Task::Segmentation => cloud
            .point_labels()
            .map(|l| l.iter().map(|&v| v as usize).collect())
            .ok_or_else(|| Error::Data("segmentation sample without point labels".into())),
    }
}

/// Softmax cross-entropy. Classification expects one logit row; segmentation
/// averages (or sums) the per-point terms.
pub fn cross_entropy(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    task: Task,
    reduction: LossReduction,
) -> Result<Var> {
    match task {
        Task::Classification => {
            if g.value(logits).rows() != 1 || targets.len() != 1 {
                return Err(Error::contract(
                    "classification loss takes one logit row and one target",
                ));
            }
            g.cross_entropy(logits, targets, false)
        }
        Task::Segmentation => g.cross_entropy(logits, targets, reduction == LossReduction::Mean),
    }
}

/// Row-wise argmax; the smallest index wins ties.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| argmax_among(logits.row(r), 0..logits.cols()))
        .collect()
}

/// Row-wise argmax restricted to `allowed` classes (part labels of a known
/// category); the smallest index wins ties.
pub fn predict_among(logits: &Tensor, allowed: &[usize]) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| argmax_among(logits.row(r), allowed.iter().copied()))
        .collect()
}

fn argmax_among(row: &[f64], candidates: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for c in candidates {
        if best.map_or(true, |b| row[c] > row[b] || (row[c] == row[b] && c < b)) {
            best = Some(c);
        }
    }
    best.expect("at least one candidate class")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_loss(classes: usize) -> f64 {
        let mut g = Graph::new();
        let l = g.constant(Tensor::full(&[1, classes], 0.3));
        let loss = cross_entropy(&mut g, l, &[classes - 1], Task::Classification, LossReduction::Mean).unwrap();
        g.value(loss).item()
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        for c in [2, 4, 40] {
            assert!((uniform_loss(c) - (c as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::from_rows(&[[0.0, 800.0, -50.0]]).unwrap());
        let loss = cross_entropy(&mut g, l, &[1], Task::Classification, LossReduction::Mean).unwrap();
        assert!(g.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn segmentation_loss_averages_points() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 2]));
        let mean = cross_entropy(&mut g, l, &[0, 1], Task::Segmentation, LossReduction::Mean).unwrap();
        let sum = cross_entropy(&mut g, l, &[0, 1], Task::Segmentation, LossReduction::Sum).unwrap();
        assert!((g.value(mean).item() - 2f64.ln()).abs() < 1e-12);
        assert!((g.value(sum).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[1, 3]));
        let err = cross_entropy(&mut g, l, &[3], Task::Classification, LossReduction::Mean).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn predict_prefers_lowest_index_on_ties() {
        let t = Tensor::from_rows(&[[0.1, 0.9], [0.5, 0.5]]).unwrap();
        assert_eq!(predict(&t), vec![1, 0]);
        let shifted = Tensor::from_rows(&[[10.1, 10.9], [-3.5, -3.5]]).unwrap();
        assert_eq!(predict(&shifted), vec![1, 0]);
        let t = Tensor::from_rows(&[[5.0, 0.2, 0.1, 0.3]]).unwrap();
        assert_eq!(predict_among(&t, &[1, 2, 3]), vec![3]);
    }

    #[test]
    fn standard_configs_validate_and_match_reference_widths() {
        let c = NetworkConfig::standard_classification(40);
        c.validate().unwrap();
        let res: Vec<usize> = c.paths.iter().map(|p| p.resolution).collect();
        assert_eq!(res, vec![512, 256, 128]);
        assert_eq!(c.head, vec![512, 256, 40]);
        assert_eq!(c.head_input(), 1024);

        let s = NetworkConfig::standard_segmentation(50);
        s.validate().unwrap();
        let radii: Vec<f64> = s.paths[0].layers.iter().map(|l| l.radius).collect();
        assert_eq!(radii, vec![0.1, 0.2, 0.4]);
        assert_eq!(s.upsample_input(), 259);
        assert_eq!(s.upsample_mlp, vec![512, 256, 128]);

        NetworkConfig::desk_classification(4).validate().unwrap();
        NetworkConfig::desk_segmentation(7).validate().unwrap();
        NetworkConfig::miniature(Task::Classification, 3).validate().unwrap();
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let c = NetworkConfig::desk_segmentation(7).with_variant(Variant::Csca);
        let back = NetworkConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let mut bad = c.clone();
        bad.csca_channels = 30;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.version = 99;
        assert!(NetworkConfig::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn ablation_variants_own_only_their_modules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = NetworkConfig::miniature(Task::Classification, 3);
        let count = |v: Variant, name: &str| {
            init_params(&base.clone().with_variant(v), &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap()
                .names()
                .filter(|n| n.contains(name))
                .count()
        };
        assert_eq!(count(Variant::Baseline, "sa_"), 0);
        assert_eq!(count(Variant::Clca, "csca."), 0);
        assert!(count(Variant::Csca, "csca.") > 0);
        assert!(count(Variant::Full, ".clca.sa_") > 0);
        Network::new(base, &mut rng).unwrap();
    }

    #[test]
    fn mismatched_checkpoint_names_the_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let small = Network::new(NetworkConfig::miniature(Task::Classification, 3), &mut rng).unwrap();
        let other = NetworkConfig::miniature(Task::Classification, 5);
        match Network::with_params(other, small.params().clone()) {
            Err(Error::Param { name, .. }) => assert!(name.starts_with("head.")),
            other => panic!("expected a parameter error, got {other:?}"),
        }
    }
}
