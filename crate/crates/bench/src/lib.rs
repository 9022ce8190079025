//! Seeded fixtures shared by the benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hemsmeta_core::energy_env::{synth_year, EnvConfig, HomeEnv, Regime};
use hemsmeta_core::numcore::{Activation, LayerShape, MlpParams};
use hemsmeta_core::SolutionSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Q-network sized MLP: 4 features plus 2 weights in, 2 actions x 2 objectives out.
pub fn q_mlp(hidden: &[usize], seed: u64) -> MlpParams {
    let shape = LayerShape::mlp(6, hidden, 4, Activation::ReluLinear).expect("valid shape");
    MlpParams::init(shape, &mut rng(seed))
}

pub fn inputs(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Random points in the box spanned by typical annual (neg_cost, comfort) values.
pub fn annual_points(n: usize, seed: u64) -> SolutionSet {
    let mut r = rng(seed);
    SolutionSet::from_values((0..n).map(|_| vec![r.random_range(-1200.0..-100.0), r.random_range(0.0..1460.0)]))
}

/// Anti-correlated points, so that most of them are non-dominated.
pub fn tradeoff_points(n: usize, seed: u64) -> SolutionSet {
    let mut r = rng(seed);
    SolutionSet::from_values((0..n).map(|_| {
        let t: f64 = r.random_range(0.0..1.0);
        vec![
            -1200.0 + 1100.0 * t + r.random_range(0.0..30.0),
            1460.0 * (1.0 - t) + r.random_range(0.0..30.0),
        ]
    }))
}

pub fn home_env() -> HomeEnv {
    let regimes = [Regime {
        start_day: 1,
        solar_scale: 1.0,
        noise: 0.05,
    }];
    let data = synth_year(0, &regimes).expect("synthetic year");
    HomeEnv::new(Arc::new(data), EnvConfig::default()).expect("valid env")
}
