//! Benchmark fixtures shared by the criterion benches.

use storymoral_core::corpus::synthetic::{fixture_corpus, FixtureSpec};
use storymoral_core::lmm::synthetic::SyntheticDesign;
use storymoral_core::lmm::{build_design, DesignMatrices};
use storymoral_core::Corpus;

/// Full 14 × 14 grid with two models.
pub fn reference_corpus() -> Corpus {
    fixture_corpus(&FixtureSpec::reference_shaped(1).with_models(&["gpt-4o", "gemini"]))
}

/// n = 5000 simulated design with `k` crossed factors (1..=4).
pub fn reml_design(k: usize) -> DesignMatrices {
    let levels = [100, 70, 50, 30];
    let var = [0.004, 0.002, 0.003, 0.001];
    let sd = SyntheticDesign::new(5000, &levels[..k], &var[..k]);
    build_design(&sd.simulate(0).expect("simulate"), &sd.formula()).expect("design")
}
