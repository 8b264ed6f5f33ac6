//! Scratch calibration probe for the standard experiment (ignored).

use tada_cli::config::ExperimentConfig;
use tada_cli::experiment::run_experiment;

#[test]
#[ignore]
fn probe_gap_closing() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
        output_dir = "{}"
        seeds = [1]
        strategies = ["tgt-only", "src-only", "tada"]
        [sets]
        train_pairs = 120
        eval_pairs = 100
        tgt_train_pairs = 120
        tada_pool = 48
        [target]
        pipeline = "sharpen-s"
        quality = 85
        [source]
        pipeline = "half-sharpen-s"
        [operational]
        balances = ["full-cover"]
        size = 64
        [emulator]
        max_epochs = 150
    "#,
        dir.path().display()
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let t = std::time::Instant::now();
    let rows = run_experiment(&cfg).unwrap();
    eprintln!("standard run took {:?}", t.elapsed());
    for r in &rows {
        eprintln!(
            "{:12} -> {:.3}  [{}] {}",
            r.strategy,
            r.accuracy.unwrap_or(f64::NAN),
            r.diagnostics,
            r.error
        );
    }
}
