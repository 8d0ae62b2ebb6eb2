//! Named reference laws and a seeded generator of random finite laws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::law::{Atom, FiniteLaw};

/// Largest offspring count drawn by [`random_finite_law`].
pub const RANDOM_MAX_COUNT: usize = 3;
/// Displacements drawn by [`random_finite_law`] lie in `[-R, R]`.
pub const RANDOM_DISPLACEMENT_RANGE: f64 = 2.0;

/// Two children at the parent's position with probability one: `W_n ≡ 1`.
pub fn binary() -> FiniteLaw {
    FiniteLaw::new(vec![Atom::new(1.0, vec![0.0, 0.0])]).expect("valid law")
}

/// Critical law: no children or two children at the parent's position.
pub fn law_b_prime() -> FiniteLaw {
    FiniteLaw::new(vec![Atom::new(0.5, vec![]), Atom::new(0.5, vec![0.0, 0.0])]).expect("valid law")
}

/// `{0.2: (), 0.8: (0, 1)}`, extinction probability 1/4.
pub fn law_c() -> FiniteLaw {
    FiniteLaw::new(vec![Atom::new(0.2, vec![]), Atom::new(0.8, vec![0.0, 1.0])]).expect("valid law")
}

/// `{0.5: (0, 1, 1, 1), 0.5: (1, 1)}`; the drift gap changes sign near α = 3.275.
pub fn law_d() -> FiniteLaw {
    FiniteLaw::new(vec![
        Atom::new(0.5, vec![0.0, 1.0, 1.0, 1.0]),
        Atom::new(0.5, vec![1.0, 1.0]),
    ])
    .expect("valid law")
}

/// Named supercritical laws used by the identity and dichotomy suites.
pub fn standard_laws() -> Vec<(&'static str, FiniteLaw)> {
    vec![("binary", binary()), ("law_c", law_c()), ("law_d", law_d())]
}

/// A random finite law: one to four atoms with offspring counts in
/// `0..=3`, displacements uniform on `[-2, 2]` and probabilities
/// proportional to uniform weights on `[0.05, 1)`.
pub fn random_finite_law<R: Rng + ?Sized>(rng: &mut R) -> FiniteLaw {
    let atoms = rng.random_range(1..=4usize);
    let weights: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let head: f64 = probabilities[..atoms - 1].iter().sum();
    probabilities[atoms - 1] = 1.0 - head;
    let atoms = probabilities
        .into_iter()
        .map(|p| {
            let count = rng.random_range(0..=RANDOM_MAX_COUNT);
            let displacements = (0..count)
                .map(|_| rng.random_range(-RANDOM_DISPLACEMENT_RANGE..=RANDOM_DISPLACEMENT_RANGE))
                .collect();
            Atom::new(p, displacements)
        })
        .collect();
    FiniteLaw::new(atoms).expect("normalized by construction")
}

/// The first `count` laws of the random suite for `seed`.
pub fn random_suite(seed: u64, count: usize) -> Vec<FiniteLaw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_finite_law(&mut rng)).collect()
}
