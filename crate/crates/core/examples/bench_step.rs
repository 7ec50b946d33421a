use csiyolo_core::dataset::{generate, GenSpec};
use csiyolo_core::net::DetectorConfig;
use csiyolo_core::train::{train, TrainConfig};
use csiyolo_core::SystemConfig;
use std::time::Instant;

fn main() {
    let sys = SystemConfig::default();
    let mk = |seed, count| {
        generate::<f32>(&GenSpec {
            seed, count, split: "desk".into(), n_s_range: (5, 10), snr_db: None, sys: sys.clone(),
        }).unwrap()
    };
    let train_set = mk(1000, 2000);
    let val_set = mk(2000, 500);
    let test_set = mk(3000, 500);
    let det = DetectorConfig::default();
    let cfg = TrainConfig { epochs: 60, learning_rate: 0.1, batch_size: 8, ..TrainConfig::default() };
    let t = Instant::now();
    let out = train(&train_set, &val_set, &det, &cfg, 7).unwrap();
    for r in out.log.iter().filter(|r| r.val_f1.is_some()) {
        println!("epoch {:2} f1 {:.4} pd {:.4} rmse {:?}", r.epoch, r.val_f1.unwrap(), r.val_pd.unwrap(),
            r.val_rmse.map(|v| (v * 1000.0).round() / 1000.0));
    }
    println!("best val f1 {:.4}, elapsed {:?}", out.best_val_f1, t.elapsed());

    // Test-split evaluation with the best checkpoint.
    let plan = csiyolo_core::net::NetPlan::new(&det).unwrap();
    let metrics = csiyolo_core::train::validate_split(&plan, &out.params, &test_set, 1.0).unwrap();
    let report = csiyolo_core::metrics::aggregate(&metrics, Default::default());
    println!(
        "TEST: f1 {:.4} pd {:.4} precision {:.4} rmse {:?} |p-r| {:.4}",
        report.f1, report.pd, report.precision, report.rmse, report.mean_abs_precision_minus_recall
    );
}
