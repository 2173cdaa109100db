//! Runs the k sweep on the built-in six-archetype synthetic dataset and
//! prints the curve.
//!
//! cargo run --release -p archetype-core --example sweep_demo -- [seed] [max_k] [synth.json]

use std::time::Instant;

use archetype_core::{sweep_k, ClusterSettings, SplitSpec, SynthSpec, TrainConfig, WindowSpec};

fn main() -> archetype_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let max_k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let spec = match args.next() {
        Some(path) => SynthSpec {
            seed,
            ..SynthSpec::from_json_file(std::path::Path::new(&path))?
        },
        None => SynthSpec::with_default_templates(40, 365, seed),
    };
    let (data, _) = archetype_core::generate_dataset(&spec)?;
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let split = SplitSpec {
        seed,
        ..SplitSpec::default()
    };
    let cluster = ClusterSettings {
        seed,
        ..ClusterSettings::default()
    };
    let ks: Vec<usize> = (1..=max_k).collect();

    let t = Instant::now();
    let result = sweep_k(&data, &ks, &cfg, &split, &WindowSpec::default(), &cluster)?;
    println!("k,smape,rmse");
    for p in &result.curve.points {
        println!("{},{:.3},{:.2}", p.k, p.smape, p.rmse);
    }
    let base = result.curve.point(1).map(|p| p.smape).unwrap_or(f64::NAN);
    let best = result
        .curve
        .point(result.curve.argmin_smape)
        .map(|p| p.smape)
        .unwrap_or(f64::NAN);
    println!(
        "argmin k = {} ({:.1}% below k=1), {:.1}s",
        result.curve.argmin_smape,
        100.0 * (base - best) / base,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
