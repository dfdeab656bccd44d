//! Fixtures shared by the benchmarks: seeded binary graphs and untrained
//! score networks of a fixed size.

use ndarray::Array2;
use rand::Rng;

use gsdm_core::datasets::{degree_features, DEFAULT_D_MAX};
use gsdm_core::scorenet::Arch;
use gsdm_core::{rng, Graph, ScoreNetParams, Variant};

pub const HIDDEN: usize = 32;
pub const TIME_DIM: usize = 16;

/// Erdős–Rényi graph with edge probability `p`, degree one-hot features.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut r = rng::seeded(seed);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    Graph::new(degree_features(&a, DEFAULT_D_MAX), a, false).expect("valid graph")
}

/// Seeded symmetric matrix with standard normal entries.
pub fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = rng::normal(&mut r);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

pub fn network(variant: Variant, feature_dim: usize, seed: u64) -> ScoreNetParams {
    ScoreNetParams::init(Arch::new(variant, feature_dim, HIDDEN, TIME_DIM), &mut rng::seeded(seed)).expect("valid arch")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_density_tracks_p() {
        let g = random_graph(120, 0.1, 1);
        let density = g.edge_count() as f64 / (120.0 * 119.0 / 2.0);
        assert!((density - 0.1).abs() < 0.02, "{density}");
    }
}
