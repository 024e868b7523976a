//! Extracts one detector mask per cluster from a shared initialization and
//! prints how far apart the masks ended up.

use adaptive_tickets::analysis::{similarity_matrix, Scope};
use adaptive_tickets::baseline::Method;
use adaptive_tickets::experiment::{method_init, method_task, ClassificationConfig, SyntheticSpec};
use adaptive_tickets::extract::extract_tickets;
use adaptive_tickets::mask::sparsity_of;

fn main() -> adaptive_tickets::error::Result<()> {
    let seed = 0;
    let data = SyntheticSpec {
        clusters: 4,
        per_cluster: 200,
        test_per_cluster: None,
        dim: 8,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(seed)?;
    let cfg = ClassificationConfig::desk(0.75).seeded(seed);
    let task = method_task(&data, Method::Rtl)?;
    let init = method_init(&data, &cfg, Method::Rtl, seed);
    let (masks, trace) = extract_tickets(&init, &task, &cfg.extraction)?;

    println!("{} rounds, {} optimizer steps", trace.records.len() / masks.len(), trace.total_steps);
    for (id, mask) in masks.subset_ids().iter().zip(masks.masks()) {
        println!("subset {id}: sparsity {:.3}, {} weights kept", sparsity_of(mask), mask.count_ones());
    }
    let sim = similarity_matrix(&masks, Scope::Global)?;
    for row in &sim.values {
        println!("{}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("  "));
    }
    Ok(())
}
