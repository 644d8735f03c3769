//! Manifest-driven experiments: a seed sweep over baselines and learned
//! policies, a comparison table and plotting data.
//!
//! Run with `cargo run --release --example experiment`. Output goes under
//! `$MULTIDDS_OUTPUT_ROOT` (or the system temp directory).

use multidds::harness::{
    compare_runs, discover_runs, emit_figures_data, sweep, ExperimentManifest, ExperimentOptions,
    OUTPUT_ROOT_ENV,
};

const MANIFEST: &str = r#"
name = "related"
output_dir = "multidds-example"

[suite]
builtin = "related"
seed = 0

[defaults]
total_steps = 6000

[[runs]]
name = "uniform"
policy = "uniform"

[[runs]]
name = "temperature-5"
policy = "temperature:5"

[[runs]]
name = "proportional"
policy = "proportional"

[[runs]]
name = "multidds"
policy = "multidds"

[[runs]]
name = "multidds-s"
policy = "multidds-s"
"#;

fn main() -> multidds::Result<()> {
    let manifest = ExperimentManifest::from_toml(MANIFEST)?;
    let output_dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(_) => None,
        None => Some(std::env::temp_dir().join("multidds-example")),
    };
    let options = ExperimentOptions {
        output_dir,
        ..ExperimentOptions::default()
    };
    let report = sweep(&manifest, &[0, 1, 2], &options)?;
    for s in &report.summary {
        println!(
            "{:<14} mean dev ppl {:.4} (variance {:.2e})",
            s.run, s.mean_dev_ppl, s.variance
        );
    }

    let seed0 = report.output_dir.join("seed-0");
    let comparison = compare_runs(&[seed0.join("summary.csv")], Some("proportional"))?;
    print!("{}", comparison.to_text());

    let figures = emit_figures_data(
        &discover_runs(std::slice::from_ref(&seed0))?,
        &seed0.join("figures"),
        10,
    )?;
    println!(
        "\nplotting data in {}",
        figures
            .usage
            .parent()
            .expect("file in a directory")
            .display()
    );
    Ok(())
}
