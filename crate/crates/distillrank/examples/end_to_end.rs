//! The full two-stage loop on the bundled dataset with the mock oracle:
//! synthesize records, train the distillation stage, collect pairwise
//! preferences, train the alignment stage, and compare nDCG on the held-out
//! split at every stage.
//!
//! Run with: cargo run --release --example end_to_end

use distillrank::pipeline::{format_demo_report, run_demo, DemoOptions};

fn main() -> anyhow::Result<()> {
    let out_dir = std::env::temp_dir().join("distillrank-end-to-end");
    let started = std::time::Instant::now();
    let report = run_demo(&DemoOptions::new(7, out_dir.clone()))?;
    print!("{}", format_demo_report(&report));
    println!("\nartifacts under {}", out_dir.display());
    println!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
