//! Size-biased trees with a distinguished ray.
//!
//! The spine particle at level `k` reproduces according to the size-biased
//! law; the next spine particle is one of its children, picked with
//! probability `e^{-α X_j} / ⟨α, Λ̂_k⟩`. Every other child starts an
//! ordinary branching random walk.
//!
//! Sampling happens in two passes over one rng: first the whole spine
//! ([`sample_spine_path`]), then the off-spine particles generation by
//! generation. The ray of a [`SpinedTree`] therefore coincides with the
//! spine-only path drawn from the same rng state, and a population cap only
//! ever truncates the off-spine bulk.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::law::{FiniteLaw, LawError, LawSpec};
use crate::numerics::log_sum_exp;
use crate::tree::{w_trajectory, GrowthCaps, LabelledTree, WTrajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpineError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("population cap of {max_nodes} nodes reached after {generation_reached} complete generations")]
    PopulationCap {
        max_nodes: usize,
        generation_reached: usize,
        partial: Box<SpinedTree>,
    },
    #[error("requested depth {depth} exceeds the depth cap {max_depth}")]
    DepthExceedsCap { depth: usize, max_depth: usize },
    #[error("level {level} outside 0..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
}

/// The spine alone: per level, the size-biased atom, the chosen child and the
/// resulting displacement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpinePath {
    pub alpha: f64,
    pub log_m: f64,
    /// Atom index (in the original law) realized by spine particle `k`.
    pub atoms: Vec<usize>,
    /// Birth-order index of `v_{k+1}` among the children of `v_k`.
    pub choices: Vec<usize>,
    /// `S(v_0), …, S(v_n)`.
    pub positions: Vec<f64>,
    /// `log(e^{-α S(v_k)} / m(α)^k)`, accumulated one step at a time.
    pub log_weights: Vec<f64>,
}

impl SpinePath {
    pub fn depth(&self) -> usize {
        self.atoms.len()
    }
}

/// Precomputed samplers for the spine: cumulative size-biased atom weights and
/// per-atom child-selection log weights.
#[derive(Debug, Clone)]
pub struct SpineSampler<'a> {
    law: &'a FiniteLaw,
    alpha: f64,
    log_m: f64,
    atom_index: Vec<usize>,
    cumulative: Vec<f64>,
}

impl<'a> SpineSampler<'a> {
    pub fn new(law: &'a FiniteLaw, alpha: f64) -> Result<Self, LawError> {
        let weights = law.size_biased_weights(alpha)?;
        let m = LawSpec::Finite(law.clone()).tilted_mass(alpha)?;
        let mut acc = 0.0;
        let mut atom_index = Vec::with_capacity(weights.len());
        let mut cumulative = Vec::with_capacity(weights.len());
        for (i, p) in weights {
            acc += p;
            atom_index.push(i);
            cumulative.push(acc);
        }
        Ok(Self {
            law,
            alpha,
            log_m: m.ln(),
            atom_index,
            cumulative,
        })
    }

    pub fn log_m(&self) -> f64 {
        self.log_m
    }

    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let k = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        self.atom_index[k]
    }

    /// Child `j` with probability `e^{-α x_j} / ⟨α, ℓ⟩`, normalized in log space.
    pub fn sample_child<R: Rng + ?Sized>(&self, atom: usize, rng: &mut R) -> usize {
        let xs = &self.law.atoms()[atom].displacements;
        let logs: Vec<f64> = xs.iter().map(|x| -self.alpha * x).collect();
        let log_total = log_sum_exp(&logs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, l) in logs.iter().enumerate() {
            acc += (l - log_total).exp();
            if u < acc {
                return j;
            }
        }
        xs.len() - 1
    }
}

/// Samples the spine only: positions and weights of `v_0, …, v_depth`.
pub fn sample_spine_path<R: Rng + ?Sized>(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
    rng: &mut R,
) -> Result<SpinePath, LawError> {
    let sampler = SpineSampler::new(law, alpha)?;
    Ok(sample_with(&sampler, depth, rng))
}

fn sample_with<R: Rng + ?Sized>(
    sampler: &SpineSampler<'_>,
    depth: usize,
    rng: &mut R,
) -> SpinePath {
    let mut atoms = Vec::with_capacity(depth);
    let mut choices = Vec::with_capacity(depth);
    let mut positions = Vec::with_capacity(depth + 1);
    let mut log_weights = Vec::with_capacity(depth + 1);
    positions.push(0.0);
    log_weights.push(0.0);
    for k in 0..depth {
        let atom = sampler.sample_atom(rng);
        let j = sampler.sample_child(atom, rng);
        let x = sampler.law.atoms()[atom].displacements[j];
        atoms.push(atom);
        choices.push(j);
        positions.push(positions[k] + x);
        log_weights.push(log_weights[k] + (-sampler.alpha * x - sampler.log_m));
    }
    SpinePath {
        alpha: sampler.alpha,
        log_m: sampler.log_m,
        atoms,
        choices,
        positions,
        log_weights,
    }
}

/// A labelled tree with a distinguished ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinedTree {
    pub tree: LabelledTree,
    /// Node indices `v_0, v_1, …` within `tree` (only the grown part).
    pub ray: Vec<usize>,
    pub path: SpinePath,
}

impl SpinedTree {
    pub fn alpha(&self) -> f64 {
        self.path.alpha
    }

    pub fn spine_log_weight(&self) -> &[f64] {
        &self.path.log_weights
    }
}

/// Grows the size-biased tree with spine to `depth` generations.
pub fn grow_spined_tree<R: Rng + ?Sized>(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
    caps: GrowthCaps,
    rng: &mut R,
) -> Result<SpinedTree, SpineError> {
    if depth > caps.max_depth {
        return Err(SpineError::DepthExceedsCap {
            depth,
            max_depth: caps.max_depth,
        });
    }
    let sampler = SpineSampler::new(law, alpha)?;
    let path = sample_with(&sampler, depth, rng);
    let ordinary = LawSpec::Finite(law.clone());

    let mut tree = LabelledTree::root();
    let mut ray = vec![0usize];
    for generation in 0..depth {
        let spine_node = ray[generation];
        let grown = tree.extend_generation(caps.max_nodes, |parent, out| {
            if parent == spine_node {
                out.extend_from_slice(&law.atoms()[path.atoms[generation]].displacements);
            } else {
                ordinary.sample_into(rng, out);
            }
        });
        if grown.is_err() {
            return Err(SpineError::PopulationCap {
                max_nodes: caps.max_nodes,
                generation_reached: generation,
                partial: Box::new(SpinedTree { tree, ray, path }),
            });
        }
        let next = tree.node(spine_node).children.start + path.choices[generation];
        ray.push(next);
    }
    Ok(SpinedTree { tree, ray, path })
}

/// `S(v_0), …, S(v_n)` read off the ray.
pub fn spine_positions(spined: &SpinedTree) -> Vec<f64> {
    spined
        .ray
        .iter()
        .map(|&i| spined.tree.node(i).position)
        .collect()
}

/// `log(dμ̂*_n / dμ*_n) = -α S(v_n) - n log m(α)`, from the incremental recursion.
pub fn rn_weight(spined: &SpinedTree, level: usize) -> Result<f64, SpineError> {
    spined
        .path
        .log_weights
        .get(level)
        .copied()
        .ok_or(SpineError::LevelOutOfRange {
            level,
            depth: spined.path.depth(),
        })
}

/// `log(1 / W_n)` of the embedded tree for every grown generation.
pub fn importance_weights(spined: &SpinedTree, alpha: f64, log_m: f64) -> Vec<f64> {
    w_trajectory(&spined.tree, alpha, log_m)
        .log_w
        .into_iter()
        .map(|l| -l)
        .collect()
}

/// `W_n` trajectory of the whole spined tree.
pub fn embedded_trajectory(spined: &SpinedTree) -> WTrajectory {
    w_trajectory(&spined.tree, spined.path.alpha, spined.path.log_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::fixtures::*;
    use crate::numerics::mean_and_se;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binary_spined_tree_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = grow_spined_tree(&binary(), 0.8, 4, GrowthCaps::default(), &mut rng).unwrap();
        assert_eq!(st.tree.generation_sizes(), vec![1, 2, 4, 8, 16]);
        assert!(spine_positions(&st).iter().all(|&s| s == 0.0));
        assert_eq!(st.ray.len(), 5);
        assert!(importance_weights(&st, 0.8, 2f64.ln())
            .iter()
            .all(|v| v.abs() < 1e-12));
        for n in 0..=4 {
            assert!((rn_weight(&st, n).unwrap() + n as f64 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_is_a_line_of_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = grow_spined_tree(&law_d(), 1.0, 5, GrowthCaps::default(), &mut rng).unwrap();
        assert_eq!(st.ray[0], 0);
        for k in 0..5 {
            assert_eq!(st.tree.node(st.ray[k + 1]).parent, Some(st.ray[k]));
        }
        let pos = spine_positions(&st);
        assert_eq!(pos, st.path.positions);
        for k in 0..5 {
            assert_eq!(
                pos[k + 1] - pos[k],
                st.tree.node(st.ray[k + 1]).displacement.unwrap()
            );
        }
    }

    #[test]
    fn level_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = grow_spined_tree(&law_c(), 1.0, 3, GrowthCaps::default(), &mut rng).unwrap();
        assert_eq!(rn_weight(&st, 0).unwrap(), 0.0);
        assert!(matches!(
            rn_weight(&st, 4),
            Err(SpineError::LevelOutOfRange { level: 4, depth: 3 })
        ));
    }

    #[test]
    fn incremental_and_recomputed_weights_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = grow_spined_tree(&law_c(), 1.0, 8, GrowthCaps::default(), &mut rng).unwrap();
        let log_m = (0.8 * (1.0 + (-1.0_f64).exp())).ln();
        for (k, s) in spine_positions(&st).iter().enumerate() {
            let direct = -s - k as f64 * log_m;
            assert!((rn_weight(&st, k).unwrap() - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn law_c_spine_increments_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let path = sample_spine_path(&law_c(), 1.0, 500, &mut rng).unwrap();
        assert!(path
            .positions
            .windows(2)
            .all(|w| w[1] - w[0] == 0.0 || w[1] - w[0] == 1.0));
    }

    #[test]
    fn spine_only_path_matches_spined_tree_ray() {
        let path = sample_spine_path(&law_c(), 1.0, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let st = grow_spined_tree(
            &law_c(),
            1.0,
            6,
            GrowthCaps::default(),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(st.path, path);
    }

    #[test]
    fn first_spine_step_frequencies() {
        let exact = law_c().spine_step_law(1.0).unwrap();
        let n = 100_000;
        let mut ones = 0usize;
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let path = sample_spine_path(&law_c(), 1.0, 1, &mut rng).unwrap();
            if path.positions[1] == 1.0 {
                ones += 1;
            }
        }
        let p1 = exact[1].1;
        let sigma = (p1 * (1.0 - p1) / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - p1).abs() <= 4.0 * sigma);
    }

    #[test]
    fn spine_offspring_distribution_matches_size_biased_support() {
        let sb = law_d().size_biased_law(1.0).unwrap();
        let n = 20_000;
        let mut four = 0usize;
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = grow_spined_tree(&law_d(), 1.0, 1, GrowthCaps::default(), &mut rng).unwrap();
            match st.tree.generation_sizes()[1] {
                4 => four += 1,
                2 => {}
                other => panic!("count {other} outside the size-biased support"),
            }
        }
        let p = sb.atoms()[0].probability;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((four as f64 / n as f64 - p).abs() <= 4.0 * sigma);
    }

    #[test]
    fn inverse_w_mean_is_survival_probability() {
        // E_μ̂[1/W_n] = μ(Z_n > 0), which is 1 - f^{(n)}(0) for a law that can die out.
        let law = law_c();
        let spec = LawSpec::Finite(law.clone());
        let log_m = spec.tilted_mass(1.0).unwrap().ln();
        let values: Vec<f64> = (0..10_000u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let st = grow_spined_tree(&law, 1.0, 8, GrowthCaps::default(), &mut rng).unwrap();
                importance_weights(&st, 1.0, log_m)[8].exp()
            })
            .collect();
        let (mean, se) = mean_and_se(&values);
        let survival = 1.0 - spec.extinction_by_generation(8);
        assert!(
            (mean - survival).abs() <= 4.0 * se,
            "{mean} ± {se} vs {survival}"
        );
    }

    #[test]
    fn embedded_w_dominates_spine_term() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = grow_spined_tree(&law_d(), 0.5, 5, GrowthCaps::default(), &mut rng).unwrap();
            let traj = embedded_trajectory(&st);
            for n in 0..=5 {
                assert!(traj.log_w[n] >= st.path.log_weights[n] - 1e-12);
                assert!(traj.log_w[n].is_finite());
            }
        }
    }

    #[test]
    fn population_cap_keeps_full_spine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = grow_spined_tree(
            &law_d(),
            1.0,
            30,
            GrowthCaps::with_max_nodes(1000),
            &mut rng,
        )
        .unwrap_err();
        match err {
            SpineError::PopulationCap {
                generation_reached,
                partial,
                ..
            } => {
                assert_eq!(partial.path.positions.len(), 31);
                assert_eq!(partial.ray.len(), generation_reached + 1);
                assert_eq!(partial.tree.depth_grown(), generation_reached);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spine_slope_law_c() {
        let drift = law_c()
            .spine_step_law(1.0)
            .unwrap()
            .iter()
            .map(|(x, p)| x * p)
            .sum::<f64>();
        let slopes: Vec<f64> = (0..200u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = sample_spine_path(&law_c(), 1.0, 2000, &mut rng).unwrap();
                p.positions[2000] / 2000.0
            })
            .collect();
        let (mean, se) = mean_and_se(&slopes);
        assert!((mean - drift).abs() <= 4.0 * se);
        assert!((drift - 0.26894).abs() < 1e-5);
    }
}
