use std::time::Instant;

use clcsca::data::{make_dataset, DatasetSpec};
use clcsca::model::{NetworkConfig, Task, Variant};
use clcsca::train::{run_training, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let task = if args.get(1).map(String::as_str) == Some("seg") { Task::Segmentation } else { Task::Classification };
    let variant: Variant = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(Variant::Full);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(60);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
    let (spec, net, cfg) = match task {
        Task::Classification => (
            DatasetSpec::classification(),
            NetworkConfig::desk_classification(4),
            TrainConfig::standard_classification(),
        ),
        Task::Segmentation => (
            DatasetSpec::segmentation(),
            NetworkConfig::desk_segmentation(7),
            TrainConfig::standard_segmentation(),
        ),
    };
    let (train, test) = make_dataset(&spec, seed).unwrap();
    let net = net.with_variant(variant);
    let cfg = cfg.with_epochs(epochs).with_seed(seed);
    let t0 = Instant::now();
    let out = run_training(&net, &cfg, &train, &test, None, |tr, te| {
        println!(
            "epoch {:3} loss {:.4} test loss {:.4} score {:.4} ({:.1}s)",
            tr.epoch,
            tr.loss,
            te.loss,
            te.oa.or(te.miou).unwrap(),
            t0.elapsed().as_secs_f64()
        );
    })
    .unwrap();
    println!("final {:.4} best {:.4} @ {}", out.final_score, out.best_score, out.best_epoch);
}
