//! Runs every desk-scale experiment and writes the reports.
//!
//! Usage: `cargo run --release --example benchmark [out_dir]`

use std::path::PathBuf;

use adaptive_tickets::bench::{run_benchmark, BenchmarkSpec};

fn main() -> adaptive_tickets::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bench_out".into()));
    let report = run_benchmark(&BenchmarkSpec::desk())?;
    report.write(&out)?;
    if let Some(c) = &report.comparison {
        for row in &c.table {
            println!(
                "{:<11} sparsity {:.2}: balanced accuracy {:.4} [{:.4}, {:.4}], params {:.0}",
                row.method, row.sparsity, row.balanced_accuracy, row.balanced_accuracy_min, row.balanced_accuracy_max, row.params
            );
        }
    }
    for v in report.verdicts() {
        println!("{}", v.line());
    }
    Ok(())
}
