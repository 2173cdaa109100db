//! Fixtures shared by the benchmarks.

use archetype_core::forecaster::WindowSample;
use archetype_core::synthgen::SynthSpec;
use archetype_core::{build_windows, generate_dataset, Dataset, WindowSpec};

/// The default six-template dataset with `sites_per_template` sites each.
pub fn dataset(sites_per_template: usize, days: usize) -> Dataset {
    let spec = SynthSpec::with_default_templates(sites_per_template, days, 42);
    generate_dataset(&spec).expect("default spec is valid").0
}

/// Up to `per_site` training windows from every site of `d`.
pub fn windows(d: &Dataset, per_site: usize) -> Vec<WindowSample> {
    build_windows(d, &WindowSpec::default(), per_site, 7)
}

/// `n` points in `dim` dimensions drawn around `centers` well-separated means.
pub fn blobs(n: usize, dim: usize, centers: usize) -> Vec<Vec<f64>> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..n)
        .map(|i| {
            let c = (i % centers) as f64 * 4.0;
            (0..dim).map(|_| c + next()).collect()
        })
        .collect()
}
