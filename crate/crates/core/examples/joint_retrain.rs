//! Retrains every extracted mask over one shared weight vector and prints
//! the per-subnetwork loss after each epoch.

use adaptive_tickets::baseline::Method;
use adaptive_tickets::experiment::{method_init, method_task, ClassificationConfig, SyntheticSpec};
use adaptive_tickets::extract::extract_tickets;
use adaptive_tickets::retrain::{balance_batches, joint_retrain};

fn main() -> adaptive_tickets::error::Result<()> {
    let seed = 1;
    let data = SyntheticSpec {
        clusters: 3,
        per_cluster: 150,
        test_per_cluster: None,
        dim: 6,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(seed)?;
    let mut cfg = ClassificationConfig::desk(0.6).seeded(seed);
    cfg.retrain.epochs = 5;
    cfg.retrain.batch_size = 32;
    let task = method_task(&data, Method::Rtl)?;
    let init = method_init(&data, &cfg, Method::Rtl, seed);
    let (masks, _) = extract_tickets(&init, &task, &cfg.extraction)?;

    let plan = balance_batches(&task.partition, cfg.retrain.batch_size, cfg.retrain.seed)?;
    println!("natural batch counts {:?}, cycled to {}", plan.natural_counts(), plan.batches_per_epoch());
    let out = joint_retrain(&init, &masks, &task, &plan, &cfg.retrain)?;
    for r in &out.trace {
        println!("epoch {} subset {}: loss {:.4}", r.epoch, r.subset_id, r.loss);
    }
    println!("updates per subnetwork: {:?}", out.updates);
    Ok(())
}
