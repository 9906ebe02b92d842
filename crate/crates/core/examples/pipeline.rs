//! Runs every stage on the built-in preset and prints the artifacts.
//! Usage: `cargo run --release --example pipeline [output_dir]`

use capmatch::pipeline::{run_pipeline, PipelineConfig};

fn main() -> capmatch::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example".into());
    let mut config = PipelineConfig::preset("synthetic-small", &out)?;
    config.assign = true;
    let (submission, metrics) = run_pipeline(&config)?;
    println!("{}", metrics.to_key_values());
    println!("first rows of the submission:");
    for (q, ids) in submission.rows.iter().take(3) {
        println!("  {q}: {ids:?}");
    }
    let mut files: Vec<_> = std::fs::read_dir(&out)
        .map_err(|e| capmatch::Error::Config(e.to_string()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    println!("artifacts in {out}: {}", files.join(", "));
    Ok(())
}
