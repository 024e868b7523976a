//! Sweeps sparsity for one seed and prints accuracy next to mean mask
//! similarity, with the level the collapse rule flags.

use adaptive_tickets::bench::{collapse_run, CollapseSpec};

fn main() -> adaptive_tickets::error::Result<()> {
    let spec = CollapseSpec::desk();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let run = collapse_run(&spec, seed)?;
    println!("{:>8} {:>9} {:>8}", "sparsity", "bal.acc", "jaccard");
    for i in 0..run.sparsity.len() {
        println!("{:>8.2} {:>9.4} {:>8.4}", run.sparsity[i], run.balanced_accuracy[i], run.mean_jaccard[i]);
    }
    println!(
        "flagged {:?}, accuracy onset {:?}, drop to last level {:.3}, early warning: {}",
        run.flagged, run.onset, run.final_drop, run.early_warning
    );
    Ok(())
}
