//! Fits region subnetworks and a single-mask baseline to the two-region
//! fixture and writes both reconstructions as PPM files.
//!
//! Usage: `cargo run --release --example inr_fit [out_dir]`

use std::path::PathBuf;

use adaptive_tickets::data::{save_pixmap, two_region_fixture};
use adaptive_tickets::inr::{inr_sweep, InrConfig};

fn main() -> adaptive_tickets::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "inr_out".into()));
    let seed = 0;
    let (image, regions) = two_region_fixture(16, seed)?;
    let sweep = inr_sweep(&image, &regions, &[0.25, 0.5], &InrConfig::default().seeded(seed))?;
    std::fs::create_dir_all(&out)?;
    save_pixmap(&image, out.join("target.ppm"))?;
    for level in &sweep.levels {
        println!(
            "sparsity {:.2}: routed {:.2} dB, single mask {:.2} dB, per region {:?}",
            level.sparsity,
            level.psnr_rtl,
            level.psnr_baseline,
            level.region_psnr.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>()
        );
        save_pixmap(&level.rtl, out.join(format!("routed_{}.ppm", level.sparsity)))?;
        save_pixmap(&level.baseline, out.join(format!("single_{}.ppm", level.sparsity)))?;
    }
    println!("images written to {}", out.display());
    Ok(())
}
