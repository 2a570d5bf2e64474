//! Synthetic instance generators used by sweeps, property checks, and tests.

use crate::mdp::{PolicyTable, TabularMdp};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Deterministic sub-seed derivation so parallel sweep cells never share
/// RNG streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn simplex_point(rng: &mut ChaCha20Rng, len: usize) -> Vec<f64> {
    // Normalized Exp(1) draws are a Dirichlet(1, ..., 1) sample.
    let raw: Vec<f64> = (0..len).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|x| x / sum).collect()
}

/// Dense random MDP: Dirichlet(1) transition rows, uniform rewards,
/// Dirichlet(1) initial distribution.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, gamma: f64) -> TabularMdp {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut t = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            let row = simplex_point(&mut rng, num_states);
            for (sp, &p) in row.iter().enumerate() {
                t[[s, a, sp]] = p;
            }
        }
    }
    let reward = Array2::from_shape_fn((num_states, num_actions), |_| rng.gen::<f64>());
    let d0 = Array1::from_vec(simplex_point(&mut rng, num_states));
    TabularMdp::new(t, reward, gamma, d0).expect("generated MDP is valid")
}

/// Random stochastic policy with Dirichlet(1) rows.
pub fn random_policy(seed: u64, num_states: usize, num_actions: usize) -> PolicyTable {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((num_states, num_actions));
    for s in 0..num_states {
        let row = simplex_point(&mut rng, num_actions);
        for (a, &p) in row.iter().enumerate() {
            probs[[s, a]] = p;
        }
    }
    PolicyTable::new(probs).expect("generated policy is valid")
}

/// Softened one-hot policy: probability `1 - eps` on the given action,
/// the rest spread uniformly.
pub fn soft_deterministic(actions: &[usize], num_actions: usize, eps: f64) -> PolicyTable {
    let mut probs = Array2::from_elem(
        (actions.len(), num_actions),
        eps / num_actions as f64,
    );
    for (s, &a) in actions.iter().enumerate() {
        probs[[s, a]] += 1.0 - eps;
    }
    PolicyTable::new(probs).expect("softened policy is valid")
}
