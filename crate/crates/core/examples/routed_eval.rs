//! Runs the routed method and both comparison arms on one seed and prints
//! the comparison table.

use adaptive_tickets::experiment::{run_all, ClassificationConfig, SyntheticSpec};

fn main() -> adaptive_tickets::error::Result<()> {
    let seed = 2;
    let target = 0.75;
    let data = SyntheticSpec {
        clusters: 4,
        per_cluster: 200,
        test_per_cluster: None,
        dim: 8,
        spread: 1.0,
        separation: 4.0,
    }
    .generate(seed)?;
    let runs = run_all(&data, &ClassificationConfig::desk(target), seed)?;
    println!("{:<11} {:>9} {:>9} {:>9} {:>7}", "method", "bal.acc", "precision", "recall", "params");
    for run in &runs {
        let row = run.table_row(target);
        println!(
            "{:<11} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            row.method, row.balanced_accuracy, row.precision, row.recall, row.params
        );
    }
    for s in &runs[0].metrics.subsets {
        println!("routed detector {}: {:?}", s.subset_id, s.confusion);
    }
    Ok(())
}
