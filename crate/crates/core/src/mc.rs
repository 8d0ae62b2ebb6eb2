//! Seeded, parallel Monte Carlo estimators.
//!
//! Replicate `r` draws from `ChaCha8Rng::seed_from_u64(replicate_seed(master, r))`,
//! where [`replicate_seed`] is the SplitMix64 finalizer applied to
//! `master + (r + 1) * 0x9E3779B97F4A7C15`. Replicates run on a rayon pool,
//! results are collected in replicate-index order and every accumulation runs
//! in that order, so a summary is bit-identical for any worker count.
//!
//! Acceptance bands are `|estimate - reference| ≤ 4 · SE`, plus a rounding
//! allowance of `1e-12 · max(1, |reference|)` so that zero-variance cases
//! (e.g. `W_n ≡ 1`) compare equal.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::law::{Classification, FiniteLaw, LawError, LawSpec};
use crate::numerics::{log_sum_exp, mean_and_se, median, neumaier, serialize_extended};
use crate::oracle::{self, OracleError};
use crate::spine::{grow_spined_tree, sample_spine_path, SpineError};
use crate::tree::{grow_tree, w_trajectory, GrowthCaps, GrowthError, LabelledTree};

/// Largest fraction of replicates that may be discarded on a population cap.
pub const MAX_DISCARD_FRACTION: f64 = 0.01;
pub const SIGMA_BAND: f64 = 4.0;
const ROUNDING_ALLOWANCE: f64 = 1e-12;

/// Counts up to this value are exactly representable and split with exact
/// binomial draws in the aggregated simulator.
const EXACT_COUNT_LIMIT: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{discarded} of {replicates} replicates hit the population cap (limit 1%)")]
    TooManyDiscarded {
        discarded: usize,
        replicates: usize,
        summary: Box<McSummary>,
    },
    #[error("at least two replicates are required, got {0}")]
    TooFewReplicates(usize),
    #[error("law is not supercritical: m(0) = {0} <= 1")]
    NotSupercritical(f64),
    #[error("m(alpha) is not finite at alpha = {0}")]
    MassInfinite(f64),
    #[error("depth grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("depth {depth} exceeds the depth cap {max_depth}")]
    DepthExceedsCap { depth: usize, max_depth: usize },
    #[error("could not build a worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub replicates: usize,
    pub depth: usize,
    pub master_seed: u64,
    pub caps: GrowthCaps,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl McConfig {
    pub fn new(replicates: usize, depth: usize, master_seed: u64) -> Self {
        Self {
            replicates,
            depth,
            master_seed,
            caps: GrowthCaps::default(),
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn with_caps(mut self, caps: GrowthCaps) -> Self {
        self.caps = caps;
        self
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replicate_seed(master, index))
}

/// Runs `job` for every replicate index and returns the results in index order.
pub fn run_replicates<T, F>(
    replicates: usize,
    master_seed: u64,
    threads: Option<usize>,
    job: F,
) -> Result<Vec<T>, McError>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    let work = || {
        (0..replicates)
            .into_par_iter()
            .map(|r| job(r, &mut replicate_rng(master_seed, r as u64)))
            .collect::<Vec<T>>()
    };
    match threads {
        None => Ok(work()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .map_err(|e| McError::Pool(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub estimator: String,
    #[serde(serialize_with = "serialize_extended")]
    pub estimate: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub se: f64,
    /// Replicates that entered the estimate.
    pub n: usize,
    pub discarded: usize,
    pub seed: u64,
    #[serde(serialize_with = "serialize_extended")]
    pub reference_value: f64,
    /// Standard error of the reference when it is itself a Monte Carlo estimate.
    #[serde(serialize_with = "serialize_extended")]
    pub reference_se: f64,
    pub pass: bool,
    /// Set when the estimator is known to be unreliable for this input, e.g.
    /// the mean of `W_n` for a law whose martingale limit is degenerate.
    pub unreliable: bool,
}

/// A summary together with the per-replicate terminal values (`None` for
/// discarded replicates).
#[derive(Debug, Clone, PartialEq)]
pub struct McRun {
    pub summary: McSummary,
    pub values: Vec<Option<f64>>,
}

fn within_band(estimate: f64, se: f64, reference: f64, reference_se: f64) -> bool {
    let combined = (se * se + reference_se * reference_se).sqrt();
    (estimate - reference).abs()
        <= SIGMA_BAND * combined + ROUNDING_ALLOWANCE * reference.abs().max(1.0)
}

struct Finish<'a> {
    estimator: &'a str,
    cfg: &'a McConfig,
    reference: f64,
    reference_se: f64,
    unreliable: bool,
}

impl Finish<'_> {
    fn run(self, values: Vec<Option<f64>>) -> Result<McRun, McError> {
        let kept: Vec<f64> = values.iter().flatten().copied().collect();
        let discarded = values.len() - kept.len();
        let (estimate, se) = mean_and_se(&kept);
        let summary = McSummary {
            estimator: self.estimator.to_string(),
            estimate,
            se,
            n: kept.len(),
            discarded,
            seed: self.cfg.master_seed,
            reference_value: self.reference,
            reference_se: self.reference_se,
            pass: kept.len() >= 2 && within_band(estimate, se, self.reference, self.reference_se),
            unreliable: self.unreliable,
        };
        if discarded as f64 > MAX_DISCARD_FRACTION * values.len() as f64 {
            return Err(McError::TooManyDiscarded {
                discarded,
                replicates: values.len(),
                summary: Box::new(summary),
            });
        }
        Ok(McRun { summary, values })
    }
}

fn check_replicates(cfg: &McConfig) -> Result<(), McError> {
    if cfg.replicates < 2 {
        Err(McError::TooFewReplicates(cfg.replicates))
    } else {
        Ok(())
    }
}

fn finite_log_m(law: &LawSpec, alpha: f64) -> Result<(f64, Classification), McError> {
    let profile = law.classify(alpha);
    if !profile.m.is_finite() {
        return Err(McError::MassInfinite(alpha));
    }
    Ok((profile.log_m, profile.classification))
}

/// Mean of `W_depth` over ordinary trees; reference 1.
pub fn mc_mean_w(law: &LawSpec, alpha: f64, cfg: &McConfig) -> Result<McRun, McError> {
    check_replicates(cfg)?;
    let (log_m, class) = finite_log_m(law, alpha)?;
    if cfg.depth > cfg.caps.max_depth {
        return Err(McError::DepthExceedsCap {
            depth: cfg.depth,
            max_depth: cfg.caps.max_depth,
        });
    }
    let values =
        run_replicates(
            cfg.replicates,
            cfg.master_seed,
            cfg.threads,
            |_, rng| match grow_tree(law, cfg.depth, cfg.caps, rng) {
                Ok(tree) => Some(w_trajectory(&tree, alpha, log_m).w(cfg.depth)),
                Err(GrowthError::PopulationCap { .. }) => None,
                Err(e @ GrowthError::DepthExceedsCap { .. }) => panic!("{e}"),
            },
        )?;
    Finish {
        estimator: "mean_w",
        cfg,
        reference: 1.0,
        reference_se: 0.0,
        unreliable: class != Classification::Nontrivial,
    }
    .run(values)
}

/// Mean of `S(v_depth) / depth` along the spine; reference `-m'(α)/m(α)`.
pub fn mc_spine_slope(law: &FiniteLaw, alpha: f64, cfg: &McConfig) -> Result<McRun, McError> {
    check_replicates(cfg)?;
    let spec = LawSpec::Finite(law.clone());
    let profile = spec.classify(alpha);
    if !profile.m.is_finite() {
        return Err(McError::MassInfinite(alpha));
    }
    // Validate once up front so the workers cannot fail.
    law.size_biased_weights(alpha)?;
    let depth = cfg.depth.max(1);
    let values = run_replicates(cfg.replicates, cfg.master_seed, cfg.threads, |_, rng| {
        let path = sample_spine_path(law, alpha, depth, rng).expect("validated law");
        Some(path.positions[depth] / depth as f64)
    })?;
    Finish {
        estimator: "spine_slope",
        cfg,
        reference: profile.drift,
        reference_se: 0.0,
        unreliable: false,
    }
    .run(values)
}

/// Extinction by generation `depth` of the offspring-count process, drawn
/// without building trees: generation sizes are split across atoms by
/// sequential binomial draws. Returns `None` if the count overflows `u64`.
pub fn count_process_extinct<R: Rng + ?Sized>(
    law: &LawSpec,
    depth: usize,
    rng: &mut R,
) -> Option<bool> {
    let no_death = law.empty_probability() == 0.0;
    let mut z: u64 = 1;
    for _ in 0..depth {
        if z == 0 {
            return Some(true);
        }
        if no_death {
            return Some(false);
        }
        z = match law {
            LawSpec::Finite(f) => {
                let mut remaining = z;
                let mut rest_mass = 1.0;
                let mut next: u64 = 0;
                for atom in f.atoms() {
                    if remaining == 0 {
                        break;
                    }
                    let p = (atom.probability / rest_mass).clamp(0.0, 1.0);
                    let k = Binomial::new(remaining, p)
                        .expect("p in [0, 1]")
                        .sample(rng);
                    remaining -= k;
                    rest_mass -= atom.probability;
                    next = next.checked_add(k.checked_mul(atom.offspring() as u64)?)?;
                }
                next
            }
            LawSpec::LogDivergent(_) => unreachable!("log-divergent laws have no childless atom"),
        };
    }
    Some(z == 0)
}

/// Fraction of replicates extinct by `depth`; reference `f^{(depth)}(0)`.
pub fn mc_extinction(law: &LawSpec, cfg: &McConfig) -> Result<McRun, McError> {
    check_replicates(cfg)?;
    if !law.is_supercritical() {
        return Err(McError::NotSupercritical(law.mean_offspring()));
    }
    let values = run_replicates(cfg.replicates, cfg.master_seed, cfg.threads, |_, rng| {
        count_process_extinct(law, cfg.depth, rng).map(|e| f64::from(u8::from(e)))
    })?;
    Finish {
        estimator: "extinction",
        cfg,
        reference: law.extinction_by_generation(cfg.depth),
        reference_se: 0.0,
        unreliable: false,
    }
    .run(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Decaying,
    Stable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthStats {
    pub depth: usize,
    pub surviving_fraction: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub median_log_w: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub mean_log_w: f64,
}

/// Behaviour of `log W_n` among surviving replicates across a depth grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrivialityReport {
    pub alpha: f64,
    pub depth_grid: Vec<usize>,
    pub per_depth: Vec<DepthStats>,
    pub verdict: Verdict,
    pub classification: Classification,
    pub replicates: usize,
    pub discarded: usize,
    pub seed: u64,
    /// Per replicate, `log W_n` at each grid depth (`None` if discarded).
    #[serde(skip)]
    pub values: Vec<Option<Vec<f64>>>,
}

impl TrivialityReport {
    /// Whether the heuristic verdict is compatible with the exact classification.
    pub fn agrees_with_classification(&self) -> bool {
        match self.classification {
            Classification::Nontrivial => self.verdict != Verdict::Decaying,
            c if c.is_trivial() => self.verdict != Verdict::Stable,
            _ => true,
        }
    }
}

/// Verdict rules: DECAYING if the survivors' median `log W_n` drops by at
/// least one nat from the first to the last grid depth and never increases
/// along the grid; STABLE if it stays within ±0.5 nat of its first value;
/// INCONCLUSIVE otherwise or when some grid depth has no survivors.
pub fn triviality_verdict(medians: &[f64]) -> Verdict {
    if medians.is_empty() || medians.iter().any(|m| !m.is_finite()) {
        return Verdict::Inconclusive;
    }
    let first = medians[0];
    let last = medians[medians.len() - 1];
    if last - first <= -1.0 && medians.windows(2).all(|w| w[1] <= w[0]) {
        Verdict::Decaying
    } else if medians.iter().all(|m| (m - first).abs() <= 0.5) {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    }
}

/// The aggregated walk would need more than `max_states` distinct states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("more than {max_states} distinct particle states")]
pub struct StateCapExceeded {
    pub max_states: usize,
}

/// Branching random walk aggregated by displacement type counts.
///
/// Particles whose root paths contain the same number of steps of each
/// distinct displacement value share a position and reproduce
/// exchangeably, so a generation is a map from count vectors to particle
/// numbers. Reproduction of `N` identical particles is a multinomial split
/// of `N` over the atoms, drawn as sequential binomials; counts beyond
/// 2^53 use the normal approximation to the binomial.
pub struct AggregatedWalk<'a> {
    law: &'a FiniteLaw,
    values: Vec<f64>,
    child_types: Vec<Vec<usize>>,
    generation: usize,
    states: BTreeMap<Vec<u32>, f64>,
}

impl<'a> AggregatedWalk<'a> {
    pub fn new(law: &'a FiniteLaw) -> Self {
        let mut values: Vec<f64> = Vec::new();
        for a in law.atoms() {
            for &x in &a.displacements {
                if !values.contains(&x) {
                    values.push(x);
                }
            }
        }
        values.sort_by(f64::total_cmp);
        let child_types = law
            .atoms()
            .iter()
            .map(|a| {
                a.displacements
                    .iter()
                    .map(|x| values.iter().position(|v| v == x).expect("collected above"))
                    .collect()
            })
            .collect();
        let mut states = BTreeMap::new();
        states.insert(vec![0u32; values.len()], 1.0);
        Self {
            law,
            values,
            child_types,
            generation: 0,
            states,
        }
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn distinct_states(&self) -> usize {
        self.states.len()
    }

    pub fn population(&self) -> f64 {
        neumaier(self.states.values().copied())
    }

    fn position(&self, counts: &[u32]) -> f64 {
        neumaier(
            counts
                .iter()
                .zip(&self.values)
                .map(|(&k, v)| f64::from(k) * v),
        )
    }

    pub fn log_w(&self, alpha: f64, log_m: f64) -> f64 {
        let terms: Vec<f64> = self
            .states
            .iter()
            .map(|(k, &n)| n.ln() - alpha * self.position(k))
            .collect();
        if terms.is_empty() {
            f64::NEG_INFINITY
        } else {
            log_sum_exp(&terms) - self.generation as f64 * log_m
        }
    }

    fn split<R: Rng + ?Sized>(n: f64, p: f64, rng: &mut R) -> f64 {
        if p >= 1.0 {
            return n;
        }
        if p <= 0.0 || n == 0.0 {
            return 0.0;
        }
        if n <= EXACT_COUNT_LIMIT {
            Binomial::new(n as u64, p).expect("p in (0, 1)").sample(rng) as f64
        } else {
            let z: f64 = StandardNormal.sample(rng);
            (n * p + z * (n * p * (1.0 - p)).sqrt())
                .round()
                .clamp(0.0, n)
        }
    }

    /// Advances one generation; fails if the number of distinct states
    /// would exceed `max_states`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        max_states: usize,
        rng: &mut R,
    ) -> Result<(), StateCapExceeded> {
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (counts, &n) in &self.states {
            let mut remaining = n;
            let mut rest_mass = 1.0;
            for (a, atom) in self.law.atoms().iter().enumerate() {
                if remaining == 0.0 {
                    break;
                }
                let p = (atom.probability / rest_mass).clamp(0.0, 1.0);
                let k = Self::split(remaining, p, rng);
                remaining -= k;
                rest_mass -= atom.probability;
                if k == 0.0 {
                    continue;
                }
                for &t in &self.child_types[a] {
                    let mut child = counts.clone();
                    child[t] += 1;
                    *next.entry(child).or_insert(0.0) += k;
                }
            }
            if next.len() > max_states {
                return Err(StateCapExceeded { max_states });
            }
        }
        self.states = next;
        self.generation += 1;
        Ok(())
    }
}

/// Tracks the survivors' median of `log W_n` over `depth_grid` and compares
/// the resulting verdict with the exact classification. Uses
/// [`AggregatedWalk`]; `cfg.caps.max_nodes` bounds the number of distinct
/// states, and replicates that exceed it are discarded.
pub fn mc_triviality_scan(
    law: &FiniteLaw,
    alpha: f64,
    depth_grid: &[usize],
    cfg: &McConfig,
) -> Result<TrivialityReport, McError> {
    check_replicates(cfg)?;
    if depth_grid.is_empty() || depth_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(McError::InvalidGrid);
    }
    let spec = LawSpec::Finite(law.clone());
    let (log_m, classification) = finite_log_m(&spec, alpha)?;
    let last = *depth_grid.last().expect("non-empty");
    let values = run_replicates(cfg.replicates, cfg.master_seed, cfg.threads, |_, rng| {
        let mut walk = AggregatedWalk::new(law);
        let mut out = Vec::with_capacity(depth_grid.len());
        let mut grid = depth_grid.iter().peekable();
        while grid.peek() == Some(&&0) {
            out.push(walk.log_w(alpha, log_m));
            grid.next();
        }
        for g in 1..=last {
            walk.step(cfg.caps.max_nodes, rng).ok()?;
            if grid.peek() == Some(&&g) {
                out.push(walk.log_w(alpha, log_m));
                grid.next();
            }
        }
        Some(out)
    })?;
    let kept: Vec<&Vec<f64>> = values.iter().flatten().collect();
    let discarded = values.len() - kept.len();
    let per_depth: Vec<DepthStats> = depth_grid
        .iter()
        .enumerate()
        .map(|(i, &depth)| {
            let alive: Vec<f64> = kept
                .iter()
                .map(|v| v[i])
                .filter(|l| l.is_finite())
                .collect();
            DepthStats {
                depth,
                surviving_fraction: alive.len() as f64 / kept.len().max(1) as f64,
                median_log_w: median(&alive).unwrap_or(f64::NEG_INFINITY),
                mean_log_w: if alive.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    neumaier(alive.iter().copied()) / alive.len() as f64
                },
            }
        })
        .collect();
    let medians: Vec<f64> = per_depth.iter().map(|d| d.median_log_w).collect();
    let report = TrivialityReport {
        alpha,
        depth_grid: depth_grid.to_vec(),
        per_depth,
        verdict: triviality_verdict(&medians),
        classification,
        replicates: cfg.replicates,
        discarded,
        seed: cfg.master_seed,
        values,
    };
    if discarded as f64 > MAX_DISCARD_FRACTION * cfg.replicates as f64 {
        let summary = McSummary {
            estimator: "triviality_scan".to_string(),
            estimate: f64::NAN,
            se: f64::NAN,
            n: cfg.replicates - discarded,
            discarded,
            seed: cfg.master_seed,
            reference_value: f64::NAN,
            reference_se: f64::NAN,
            pass: false,
            unreliable: true,
        };
        return Err(McError::TooManyDiscarded {
            discarded,
            replicates: cfg.replicates,
            summary: Box::new(summary),
        });
    }
    Ok(report)
}

/// Bounded `F_n`-measurable test functionals of generation `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    One,
    /// `1{Z_n = k}`.
    PopulationEquals(usize),
    /// `min(Z_n, K)`.
    PopulationMin(usize),
    /// `exp(-β max_{|σ|=n} S(σ))`, taken as 0 on an empty generation.
    ExpNegMaxPosition(f64),
}

impl Functional {
    pub fn name(&self) -> String {
        match self {
            Functional::One => "one".to_string(),
            Functional::PopulationEquals(k) => format!("z_eq_{k}"),
            Functional::PopulationMin(k) => format!("z_min_{k}"),
            Functional::ExpNegMaxPosition(b) => format!("exp_neg_max_{b}"),
        }
    }

    /// Evaluates on the positions of generation `n`.
    pub fn eval(&self, positions: &[f64]) -> f64 {
        let z = positions.len();
        match *self {
            Functional::One => 1.0,
            Functional::PopulationEquals(k) => f64::from(u8::from(z == k)),
            Functional::PopulationMin(k) => z.min(k) as f64,
            Functional::ExpNegMaxPosition(beta) => {
                if z == 0 {
                    0.0
                } else {
                    let max = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (-beta * max).exp()
                }
            }
        }
    }

    /// `f · 1{Z_n > 0}`: the μ-side of the importance identity, since μ̂
    /// puts no mass on trees that die out.
    pub fn eval_surviving(&self, positions: &[f64]) -> f64 {
        if positions.is_empty() {
            0.0
        } else {
            self.eval(positions)
        }
    }

    fn eval_tree(&self, tree: &LabelledTree, n: usize) -> f64 {
        let positions: Vec<f64> = tree.positions(n).collect();
        self.eval(&positions)
    }
}

/// Estimates `E_μ̂[f / W_n]` from spined trees and compares it with
/// `E_μ[f · 1{Z_n > 0}]`, which is what the change of measure
/// `dμ̂_n/dμ_n = W_n` gives (`μ̂` never sees extinct trees). The reference is
/// exact from enumeration when feasible, otherwise an ordinary-tree Monte
/// Carlo estimate on an independent seed stream.
pub fn mc_importance_identity(
    law: &FiniteLaw,
    alpha: f64,
    cfg: &McConfig,
    functional: Functional,
) -> Result<McRun, McError> {
    check_replicates(cfg)?;
    let spec = LawSpec::Finite(law.clone());
    let (log_m, _) = finite_log_m(&spec, alpha)?;
    law.size_biased_weights(alpha)?;
    let n = cfg.depth;
    let values =
        run_replicates(
            cfg.replicates,
            cfg.master_seed,
            cfg.threads,
            |_, rng| match grow_spined_tree(law, alpha, n, cfg.caps, rng) {
                Ok(st) => {
                    let log_w = w_trajectory(&st.tree, alpha, log_m).log_w[n];
                    Some(functional.eval_tree(&st.tree, n) * (-log_w).exp())
                }
                Err(SpineError::PopulationCap { .. }) => None,
                Err(e) => panic!("{e}"),
            },
        )?;
    let (reference, reference_se) =
        match oracle::exact_expectation(law, n, |t| functional.eval_surviving(&t.positions[n])) {
            Ok(v) => (v, 0.0),
            Err(OracleError::TooLarge { .. }) => {
                let direct = run_replicates(
                    cfg.replicates,
                    splitmix64(cfg.master_seed ^ 0xA5A5_A5A5_A5A5_A5A5),
                    cfg.threads,
                    |_, rng| match grow_tree(&spec, n, cfg.caps, rng) {
                        Ok(tree) => {
                            let positions: Vec<f64> = tree.positions(n).collect();
                            Some(functional.eval_surviving(&positions))
                        }
                        Err(_) => None,
                    },
                )?;
                let kept: Vec<f64> = direct.into_iter().flatten().collect();
                mean_and_se(&kept)
            }
            Err(e) => return Err(e.into()),
        };
    Finish {
        estimator: &format!("importance_{}", functional.name()),
        cfg,
        reference,
        reference_se,
        unreliable: false,
    }
    .run(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::fixtures::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..1000).map(|i| replicate_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 1000);
        assert_eq!(replicate_seed(42, 7), replicate_seed(42, 7));
        assert_ne!(replicate_seed(42, 7), replicate_seed(43, 7));
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(triviality_verdict(&[0.0, 0.0]), Verdict::Stable);
        assert_eq!(triviality_verdict(&[0.0, 0.4, -0.3]), Verdict::Stable);
        assert_eq!(triviality_verdict(&[0.0, -0.5, -1.2]), Verdict::Decaying);
        assert_eq!(
            triviality_verdict(&[0.0, -1.5, -1.2]),
            Verdict::Inconclusive
        );
        assert_eq!(triviality_verdict(&[0.0, -0.8]), Verdict::Inconclusive);
        assert_eq!(
            triviality_verdict(&[0.0, f64::NEG_INFINITY]),
            Verdict::Inconclusive
        );
    }

    #[test]
    fn binary_mean_w_is_exactly_one() {
        let law = LawSpec::Finite(binary());
        let run = mc_mean_w(&law, 1.0, &McConfig::new(50, 6, 1)).unwrap();
        assert!((run.summary.estimate - 1.0).abs() < 1e-12);
        assert!(run.summary.se < 1e-12);
        assert!(run.summary.pass);
    }

    #[test]
    fn mean_w_flags_trivial_inputs() {
        let law = LawSpec::Finite(law_d());
        let run = mc_mean_w(&law, 5.0, &McConfig::new(20, 4, 1)).unwrap();
        assert!(run.summary.unreliable);
        let run = mc_mean_w(&LawSpec::Finite(law_c()), 1.0, &McConfig::new(20, 4, 1)).unwrap();
        assert!(!run.summary.unreliable);
    }

    #[test]
    fn discards_are_reported() {
        let law = LawSpec::Finite(law_d());
        let cfg = McConfig::new(20, 8, 3).with_caps(GrowthCaps::with_max_nodes(200));
        match mc_mean_w(&law, 1.0, &cfg) {
            Err(McError::TooManyDiscarded {
                discarded, summary, ..
            }) => {
                assert_eq!(discarded, 20);
                assert_eq!(summary.discarded, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_replicates() {
        let law = LawSpec::Finite(law_c());
        assert_eq!(
            mc_mean_w(&law, 1.0, &McConfig::new(1, 2, 0)).unwrap_err(),
            McError::TooFewReplicates(1)
        );
    }

    #[test]
    fn critical_law_rejected_for_extinction() {
        let law = LawSpec::Finite(law_b_prime());
        assert!(matches!(
            mc_extinction(&law, &McConfig::new(10, 5, 0)),
            Err(McError::NotSupercritical(_))
        ));
    }

    #[test]
    fn binary_extinction_and_slope() {
        let run = mc_extinction(&LawSpec::Finite(binary()), &McConfig::new(100, 30, 2)).unwrap();
        assert_eq!(run.summary.estimate, 0.0);
        assert!(run.summary.pass);
        let run = mc_spine_slope(&binary(), 1.0, &McConfig::new(10, 50, 2)).unwrap();
        assert_eq!(run.summary.estimate, 0.0);
        assert!(run.summary.pass);
    }

    #[test]
    fn spine_slope_alpha_zero_law_c() {
        // Uniform child choice over (0, 1).
        let run = mc_spine_slope(&law_c(), 0.0, &McConfig::new(200, 2000, 11)).unwrap();
        assert!((run.summary.reference_value - 0.5).abs() < 1e-15);
        assert!(run.summary.pass, "{:?}", run.summary);
    }

    #[test]
    fn count_process_matches_tree_extinction_rate() {
        let law = LawSpec::Finite(law_c());
        let run = mc_extinction(&law, &McConfig::new(20_000, 12, 5)).unwrap();
        assert!(run.summary.pass, "{:?}", run.summary);
    }

    #[test]
    fn aggregated_walk_matches_exact_tree_counts() {
        // Binary law: one state with 2^n particles, W ≡ 1.
        let law = binary();
        let mut walk = AggregatedWalk::new(&law);
        let mut rng = replicate_rng(0, 0);
        for _ in 0..60 {
            walk.step(10, &mut rng).unwrap();
        }
        assert_eq!(walk.population(), 2f64.powi(60));
        assert!(walk.log_w(2.0, 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aggregated_walk_mean_w_is_one() {
        let law = law_c();
        let log_m = LawSpec::Finite(law.clone()).tilted_mass(1.0).unwrap().ln();
        let values: Vec<f64> = run_replicates(5000, 17, None, |_, rng| {
            let mut walk = AggregatedWalk::new(&law);
            for _ in 0..10 {
                walk.step(1000, rng).unwrap();
            }
            walk.log_w(1.0, log_m).exp()
        })
        .unwrap();
        let (mean, se) = mean_and_se(&values);
        assert!((mean - 1.0).abs() <= 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn binary_triviality_scan_is_stable() {
        let report =
            mc_triviality_scan(&binary(), 1.0, &[10, 100], &McConfig::new(20, 0, 3)).unwrap();
        assert_eq!(report.verdict, Verdict::Stable);
        assert!(report.per_depth.iter().all(|d| d.median_log_w.abs() < 1e-9));
        assert!(report.agrees_with_classification());
    }

    #[test]
    fn invalid_grid() {
        assert_eq!(
            mc_triviality_scan(&binary(), 1.0, &[10, 10], &McConfig::new(20, 0, 3)).unwrap_err(),
            McError::InvalidGrid
        );
    }

    #[test]
    fn functionals() {
        assert_eq!(Functional::One.eval(&[]), 1.0);
        assert_eq!(Functional::PopulationEquals(2).eval(&[0.0, 1.0]), 1.0);
        assert_eq!(Functional::PopulationMin(2).eval(&[0.0, 1.0, 1.0]), 2.0);
        assert_eq!(Functional::ExpNegMaxPosition(1.0).eval(&[]), 0.0);
        assert!(
            (Functional::ExpNegMaxPosition(0.5).eval(&[0.0, 2.0]) - (-1.0f64).exp()).abs() < 1e-15
        );
    }

    #[test]
    fn importance_identity_law_c_exp_functional() {
        let cfg = McConfig::new(20_000, 2, 8);
        let run = mc_importance_identity(&law_c(), 1.0, &cfg, Functional::ExpNegMaxPosition(0.7))
            .unwrap();
        assert!(run.summary.pass, "{:?}", run.summary);
    }

    #[test]
    fn importance_identity_law_c_constant_functional() {
        // E_μ̂[1 / W_2] = P(Z_2 > 0) = 1 - f(f(0)) = 1 - 0.232.
        let cfg = McConfig::new(20_000, 2, 9);
        let run = mc_importance_identity(&law_c(), 1.0, &cfg, Functional::One).unwrap();
        assert!((run.summary.reference_value - 0.768).abs() < 1e-12);
        assert!(run.summary.pass, "{:?}", run.summary);
    }

    #[test]
    fn importance_identity_falls_back_to_direct_mc() {
        let cfg = McConfig::new(4000, 9, 8);
        let run =
            mc_importance_identity(&law_c(), 1.0, &cfg, Functional::PopulationMin(3)).unwrap();
        assert!(run.summary.reference_se > 0.0);
        assert!(run.summary.pass, "{:?}", run.summary);
    }
}
