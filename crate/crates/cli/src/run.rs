use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clcsca::data::{load_dataset, make_dataset, write_dataset, Dataset, DatasetSpec, Split};
use clcsca::model::{Network, NetworkConfig, Task};
use clcsca::train::{
    evaluate_classification, evaluate_row, evaluate_segmentation, format_g9, lr_at_epoch, run_training,
    TrainConfig, CSV_HEADER,
};
use clcsca::verify::run_suite;
use clcsca::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{suites, CheckArgs, EvalArgs, GenDataArgs, SplitArg, TrainArgs};

pub const RUN_MANIFEST_FILE: &str = "manifest.json";
pub const NETWORK_FILE: &str = "network.json";

/// Everything needed to repeat a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// `sha256` of `"blob <len>\0" + canonical JSON of {network, train}`.
    pub config_hash: String,
    pub seed: u64,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub started_at: String,
    pub finished_at: String,
    pub best_epoch: usize,
    pub best_score: f64,
    pub final_score: f64,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    network: &'a NetworkConfig,
    train: &'a TrainConfig,
}

pub fn config_hash(network: &NetworkConfig, train: &TrainConfig) -> Result<String> {
    let body = serde_json::to_string(&HashedConfig { network, train })?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()));
    h.update(body.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

pub fn gen_data(a: GenDataArgs) -> Result<bool> {
    let task: Task = a.task.into();
    let mut spec = match task {
        Task::Classification => DatasetSpec::classification(),
        Task::Segmentation => DatasetSpec::segmentation(),
    };
    spec.classes = a.classes.unwrap_or(spec.classes);
    spec.per_class_train = a.train_per_class.unwrap_or(spec.per_class_train);
    spec.per_class_test = a.test_per_class.unwrap_or(spec.per_class_test);
    spec.points = a.points.unwrap_or(spec.points);
    spec.noise = a.noise.unwrap_or(spec.noise);
    let (train, test) = make_dataset(&spec, a.seed)?;
    write_dataset(&a.out, &spec, a.seed, &[&train, &test])?;
    println!(
        "wrote {} train + {} test clouds ({} classes, {} points) to {}",
        train.len(),
        test.len(),
        train.class_names.len(),
        spec.points,
        a.out.display()
    );
    Ok(true)
}

/// Resolves `--config` into network and training settings for `data`.
fn resolve_config(config: &str, data: &Dataset) -> Result<(NetworkConfig, TrainConfig)> {
    let task = data.task;
    let outputs = data.num_outputs();
    let standard_train = || match task {
        Task::Classification => TrainConfig::standard_classification(),
        Task::Segmentation => TrainConfig::standard_segmentation(),
    };
    match config {
        "desk" => Ok((
            match task {
                Task::Classification => NetworkConfig::desk_classification(outputs),
                Task::Segmentation => NetworkConfig::desk_segmentation(outputs),
            },
            standard_train(),
        )),
        "standard" => Ok((
            match task {
                Task::Classification => NetworkConfig::standard_classification(outputs),
                Task::Segmentation => NetworkConfig::standard_segmentation(outputs),
            },
            standard_train(),
        )),
        path => {
            let path = Path::new(path);
            let text = read_text(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("network").is_some() && value.get("train").is_some() {
                let m: RunManifest = serde_json::from_value(value)?;
                Ok((m.network, m.train))
            } else {
                let net = NetworkConfig::from_json(&text)?;
                let train = match net.task {
                    Task::Classification => TrainConfig::standard_classification(),
                    Task::Segmentation => TrainConfig::standard_segmentation(),
                };
                Ok((net, train))
            }
        }
    }
}

pub fn train(a: TrainArgs) -> Result<bool> {
    let train_set = load_dataset(&a.data, Split::Train)?;
    let test_set = load_dataset(&a.data, Split::Test)?;
    let (mut net_cfg, mut train_cfg) = resolve_config(&a.config, &train_set)?;
    if let Some(path) = &a.train_config {
        train_cfg = serde_json::from_str(&read_text(path)?)?;
    }
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    if let Some(v) = a.ablate {
        net_cfg = net_cfg.with_variant(v.into());
    }
    net_cfg.validate()?;
    train_cfg.validate()?;
    let hash = config_hash(&net_cfg, &train_cfg)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    net_cfg.save(&a.out.join(NETWORK_FILE))?;
    write_json(&a.out.join("train.json"), &train_cfg)?;
    let started_at = now();
    println!("{CSV_HEADER}");
    let outcome = run_training(&net_cfg, &train_cfg, &train_set, &test_set, Some(&a.out), |tr, te| {
        println!("{}", tr.to_csv_line());
        println!("{}", te.to_csv_line());
    })?;
    let manifest = RunManifest {
        version: 1,
        seed: train_cfg.seed,
        network: net_cfg,
        train: train_cfg,
        config_hash: hash,
        data: a.data.clone(),
        out_dir: a.out.clone(),
        started_at,
        finished_at: now(),
        best_epoch: outcome.best_epoch,
        best_score: outcome.best_score,
        final_score: outcome.final_score,
    };
    write_json(&a.out.join(RUN_MANIFEST_FILE), &manifest)?;
    println!(
        "final test score {} (best {} at epoch {}); outputs in {}",
        format_g9(outcome.final_score),
        format_g9(outcome.best_score),
        outcome.best_epoch,
        a.out.display()
    );
    Ok(true)
}

pub fn eval(a: EvalArgs) -> Result<bool> {
    let dir = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let config_path = a.config.clone().unwrap_or_else(|| dir.join(NETWORK_FILE));
    let cfg = NetworkConfig::load(&config_path)?;
    let net = Network::load(cfg, &a.checkpoint)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let data = load_dataset(&a.data, split)?;
    if data.task != net.task() {
        return Err(Error::Config(format!("checkpoint is for {:?}, data is {:?}", net.task(), data.task)));
    }
    if data.num_outputs() != net.config().num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, the network predicts {}",
            data.num_outputs(),
            net.config().num_classes
        )));
    }

    match net.task() {
        Task::Classification => {
            let m = evaluate_classification(&net, &data)?;
            println!("OA  {}", format_g9(m.oa));
            println!("ACC {}", format_g9(m.acc));
            println!("confusion (rows = truth, columns = prediction):");
            let width = data.class_names.iter().map(String::len).max().unwrap_or(0);
            for (name, row) in data.class_names.iter().zip(&m.confusion) {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:5}")).collect();
                println!("  {name:width$} {}", cells.join(""));
            }
        }
        Task::Segmentation => {
            let m = evaluate_segmentation(&net, &data)?;
            println!("instance mIoU {}", format_g9(m.instance_miou));
            for (name, iou) in &m.category_iou {
                println!("  {name:8} {}", iou.map(format_g9).unwrap_or_else(|| "-".into()));
            }
        }
    }

    // Same epoch and learning rate as the run's last CSV row, when known.
    let (epoch, lr) = match read_text(&dir.join(RUN_MANIFEST_FILE)) {
        Ok(text) => {
            let m: RunManifest = serde_json::from_str(&text)?;
            let last = m.train.epochs - 1;
            (last, lr_at_epoch(&m.train, last))
        }
        Err(_) => (0, 0.0),
    };
    let row = evaluate_row(&net, &data, epoch, lr)?;
    println!("{CSV_HEADER}");
    println!("{}", row.to_csv_line());
    Ok(true)
}

pub fn check(a: CheckArgs) -> Result<bool> {
    let mut all = true;
    for suite in suites(a.suite) {
        let report = run_suite(suite, a.seed)?;
        for line in &report.lines {
            println!("{line}");
        }
        let failed = report.lines.iter().filter(|l| !l.passed).count();
        println!("suite {}: {} checks, {failed} failed", suite.name(), report.lines.len());
        all &= report.passed();
    }
    Ok(all)
}
