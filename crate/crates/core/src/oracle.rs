//! Exhaustive enumeration of labelled trees (under `μ`) and of labelled trees
//! with a distinguished ray (under `μ̂*`) to a small depth, and exact checks of
//! the change-of-measure identities that relate them.
//!
//! Children are distinguishable and kept in birth order, so an outcome is
//! identified by the atom realized by each particle in breadth-first order.
//! The `μ̂*` enumeration is built from the spine construction itself
//! (size-biased atom for the spine particle, `e^{-αx_j}/⟨α,ℓ⟩` child
//! selection, ordinary atoms elsewhere); it never uses the density it is
//! checked against.
//!
//! Discrepancies are `|a - b| / max(1, |b|)`. Products of many probabilities
//! accumulate rounding, so identity checks use [`IDENTITY_TOLERANCE`] and
//! total-mass style checks use [`MASS_TOLERANCE`].

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::law::{FiniteLaw, LawError, LawSpec};
use crate::numerics::{log_sum_exp, neumaier};

/// Largest number of outcomes the pre-flight estimate may announce.
pub const OUTCOME_CAP: f64 = 1e7;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(
        "enumeration refused: estimated 10^{log10_estimate:.2} outcomes exceeds the cap of 10^7"
    )]
    TooLarge { log10_estimate: f64 },
    #[error(transparent)]
    Law(#[from] LawError),
}

/// One labelled tree truncated at the enumeration depth.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTree {
    /// Atom index realized by each particle of generations `0..depth`.
    pub choices: Vec<Vec<usize>>,
    /// Displacements of generation `g` particles (empty for `g = 0`).
    pub displacements: Vec<Vec<f64>>,
    /// Positions of generations `0..=depth`.
    pub positions: Vec<Vec<f64>>,
}

impl OutcomeTree {
    fn root() -> Self {
        Self {
            choices: Vec::new(),
            displacements: vec![Vec::new()],
            positions: vec![vec![0.0]],
        }
    }

    pub fn depth(&self) -> usize {
        self.choices.len()
    }

    pub fn population(&self, n: usize) -> usize {
        self.positions[n].len()
    }

    /// Canonical key of the first `levels` generations of reproduction.
    pub fn prefix_key(&self, levels: usize) -> Vec<u32> {
        self.choices[..levels]
            .iter()
            .flatten()
            .map(|&c| c as u32)
            .collect()
    }

    pub fn key(&self) -> Vec<u32> {
        self.prefix_key(self.depth())
    }

    pub fn log_w(&self, n: usize, alpha: f64, log_m: f64) -> f64 {
        let terms: Vec<f64> = self.positions[n].iter().map(|s| -alpha * s).collect();
        if terms.is_empty() {
            f64::NEG_INFINITY
        } else {
            log_sum_exp(&terms) - n as f64 * log_m
        }
    }

    pub fn w(&self, n: usize, alpha: f64, log_m: f64) -> f64 {
        self.log_w(n, alpha, log_m).exp()
    }

    fn push_generation(&mut self, law: &FiniteLaw, assignment: &[usize]) {
        let g = self.depth();
        let mut disp = Vec::new();
        let mut pos = Vec::new();
        for (i, &a) in assignment.iter().enumerate() {
            let base = self.positions[g][i];
            for &x in &law.atoms()[a].displacements {
                disp.push(x);
                pos.push(base + x);
            }
        }
        self.choices.push(assignment.to_vec());
        self.displacements.push(disp);
        self.positions.push(pos);
    }

    fn pop_generation(&mut self) {
        self.choices.pop();
        self.displacements.pop();
        self.positions.pop();
    }
}

/// `log10` of an upper bound on the number of `μ` outcomes to `depth`:
/// `Σ_g (max L)^g log10(#atoms)`.
pub fn outcome_estimate_log10(law: &FiniteLaw, depth: usize) -> f64 {
    let atoms = (law.atoms().len() as f64).log10();
    let max_l = law.max_offspring().max(1) as f64;
    (0..depth).map(|g| max_l.powi(g as i32) * atoms).sum()
}

fn preflight(log10_estimate: f64) -> Result<(), OracleError> {
    if log10_estimate > OUTCOME_CAP.log10() {
        Err(OracleError::TooLarge { log10_estimate })
    } else {
        Ok(())
    }
}

// Odometer over assignments: each slot ranges over `0..radix[slot]`.
fn advance(assign: &mut [usize], radix: &[usize]) -> bool {
    for (slot, r) in assign.iter_mut().zip(radix).rev() {
        *slot += 1;
        if *slot < *r {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Visits every `μ` outcome to `depth` exactly once with its probability.
/// Returns the number of outcomes.
pub fn enumerate_mu<F>(law: &FiniteLaw, depth: usize, mut visit: F) -> Result<usize, OracleError>
where
    F: FnMut(&OutcomeTree, f64),
{
    preflight(outcome_estimate_log10(law, depth))?;
    let mut state = OutcomeTree::root();
    let mut count = 0;
    mu_rec(law, depth, &mut state, 1.0, &mut visit, &mut count);
    Ok(count)
}

fn mu_rec<F: FnMut(&OutcomeTree, f64)>(
    law: &FiniteLaw,
    depth: usize,
    state: &mut OutcomeTree,
    prob: f64,
    visit: &mut F,
    count: &mut usize,
) {
    let g = state.depth();
    if g == depth {
        visit(state, prob);
        *count += 1;
        return;
    }
    let z = state.population(g);
    let radix = vec![law.atoms().len(); z];
    let mut assign = vec![0usize; z];
    loop {
        let p = assign
            .iter()
            .fold(prob, |acc, &a| acc * law.atoms()[a].probability);
        state.push_generation(law, &assign);
        mu_rec(law, depth, state, p, visit, count);
        state.pop_generation();
        if !advance(&mut assign, &radix) {
            break;
        }
    }
}

/// Visits every `(tree, ray)` outcome of `μ̂*` to `depth` with its probability.
/// The ray is given as the within-generation index of `ξ_0, …, ξ_depth`.
pub fn enumerate_mu_hat_star<F>(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
    mut visit: F,
) -> Result<usize, OracleError>
where
    F: FnMut(&OutcomeTree, &[usize], f64),
{
    let max_l = law.max_offspring().max(1) as f64;
    preflight(outcome_estimate_log10(law, depth) + depth as f64 * max_l.log10())?;
    let biased = law.size_biased_weights(alpha)?;
    let mut state = OutcomeTree::root();
    let mut ray = vec![0usize];
    let mut count = 0;
    let ctx = StarContext {
        law,
        alpha,
        depth,
        biased: &biased,
    };
    star_rec(&ctx, &mut state, &mut ray, 1.0, &mut visit, &mut count);
    Ok(count)
}

struct StarContext<'a> {
    law: &'a FiniteLaw,
    alpha: f64,
    depth: usize,
    biased: &'a [(usize, f64)],
}

fn star_rec<F: FnMut(&OutcomeTree, &[usize], f64)>(
    ctx: &StarContext<'_>,
    state: &mut OutcomeTree,
    ray: &mut Vec<usize>,
    prob: f64,
    visit: &mut F,
    count: &mut usize,
) {
    let law = ctx.law;
    let g = state.depth();
    if g == ctx.depth {
        visit(state, ray, prob);
        *count += 1;
        return;
    }
    let z = state.population(g);
    let spine = ray[g];
    let radix: Vec<usize> = (0..z)
        .map(|i| {
            if i == spine {
                ctx.biased.len()
            } else {
                law.atoms().len()
            }
        })
        .collect();
    let mut slots = vec![0usize; z];
    let mut assign = vec![0usize; z];
    loop {
        let mut p = prob;
        for (i, &s) in slots.iter().enumerate() {
            if i == spine {
                let (atom, pb) = ctx.biased[s];
                assign[i] = atom;
                p *= pb;
            } else {
                assign[i] = s;
                p *= law.atoms()[s].probability;
            }
        }
        let spine_atom = &law.atoms()[assign[spine]];
        let offset: usize = assign[..spine]
            .iter()
            .map(|&a| law.atoms()[a].offspring())
            .sum();
        let total = spine_atom.tilted_sum(ctx.alpha);
        state.push_generation(law, &assign);
        for (j, x) in spine_atom.displacements.iter().enumerate() {
            let select = (-ctx.alpha * x).exp() / total;
            ray.push(offset + j);
            star_rec(ctx, state, ray, p * select, visit, count);
            ray.pop();
        }
        state.pop_generation();
        if !advance(&mut slots, &radix) {
            break;
        }
    }
}

/// `E_μ[f]` over generations `0..=depth` by exhaustive enumeration.
pub fn exact_expectation<F>(law: &FiniteLaw, depth: usize, f: F) -> Result<f64, OracleError>
where
    F: Fn(&OutcomeTree) -> f64,
{
    let mut terms = Vec::new();
    enumerate_mu(law, depth, |t, p| terms.push(p * f(t)))?;
    Ok(neumaier(terms))
}

fn discrepancy(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub outcomes: usize,
    pub pass: bool,
}

impl CheckResult {
    fn new(check: &str, max_discrepancy: f64, tolerance: f64, outcomes: usize) -> Self {
        Self {
            check: check.to_string(),
            max_discrepancy,
            tolerance,
            outcomes,
            pass: max_discrepancy <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationReport {
    pub law: String,
    pub alpha: f64,
    pub depth: usize,
    pub checks: Vec<CheckResult>,
}

/// One row of the report JSON array.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub check: String,
    pub law: String,
    pub alpha: f64,
    pub depth: usize,
    pub max_discrepancy: f64,
    pub outcomes: usize,
    pub pass: bool,
}

impl EnumerationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn entries(&self) -> Vec<ReportEntry> {
        self.checks
            .iter()
            .map(|c| ReportEntry {
                check: c.check.clone(),
                law: self.law.clone(),
                alpha: self.alpha,
                depth: self.depth,
                max_discrepancy: c.max_discrepancy,
                outcomes: c.outcomes,
                pass: c.pass,
            })
            .collect()
    }
}

fn log_m(law: &FiniteLaw, alpha: f64) -> Result<f64, OracleError> {
    Ok(LawSpec::Finite(law.clone()).tilted_mass(alpha)?.ln())
}

/// `dμ̂*_n/dμ*_n (t, ξ) = e^{-α S(ξ_n)} / m(α)^n` for every tree and ray.
pub fn check_goal(law: &FiniteLaw, alpha: f64, depth: usize) -> Result<CheckResult, OracleError> {
    let lm = log_m(law, alpha)?;
    let mut predicted: HashMap<(Vec<u32>, usize), f64> = HashMap::new();
    enumerate_mu(law, depth, |t, p| {
        let key = t.key();
        for (r, s) in t.positions[depth].iter().enumerate() {
            let density = (-alpha * s - depth as f64 * lm).exp();
            predicted.insert((key.clone(), r), p * density);
        }
    })?;
    let mut worst = 0.0_f64;
    let mut pairs = 0;
    enumerate_mu_hat_star(law, alpha, depth, |t, ray, p| {
        pairs += 1;
        let expected = predicted.remove(&(t.key(), ray[depth])).unwrap_or(0.0);
        worst = worst.max(discrepancy(p, expected));
    })?;
    for (_, leftover) in predicted.drain() {
        pairs += 1;
        worst = worst.max(leftover.abs());
    }
    Ok(CheckResult::new("goal", worst, IDENTITY_TOLERANCE, pairs))
}

/// `dμ̂_n/dμ_n (t) = W_n(t)`: summing `μ̂*` over rays gives `μ(t) W_n(t)`.
pub fn check_rn(law: &FiniteLaw, alpha: f64, depth: usize) -> Result<CheckResult, OracleError> {
    let lm = log_m(law, alpha)?;
    let mut predicted: HashMap<Vec<u32>, f64> = HashMap::new();
    let trees = enumerate_mu(law, depth, |t, p| {
        predicted.insert(t.key(), p * t.w(depth, alpha, lm));
    })?;
    let mut marginal: HashMap<Vec<u32>, Vec<f64>> = HashMap::new();
    enumerate_mu_hat_star(law, alpha, depth, |t, _, p| {
        marginal.entry(t.key()).or_default().push(p);
    })?;
    let mut worst = 0.0_f64;
    for (key, expected) in &predicted {
        let got = marginal.remove(key).map(neumaier).unwrap_or(0.0);
        worst = worst.max(discrepancy(got, *expected));
    }
    // Trees charged by μ̂ but absent under μ.
    for (_, ps) in marginal {
        worst = worst.max(neumaier(ps));
    }
    Ok(CheckResult::new("rn", worst, IDENTITY_TOLERANCE, trees))
}

/// `E_μ[W_n] = 1` for every `n ≤ depth`.
pub fn check_mean_w(law: &FiniteLaw, alpha: f64, depth: usize) -> Result<CheckResult, OracleError> {
    let lm = log_m(law, alpha)?;
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
    let trees = enumerate_mu(law, depth, |t, p| {
        for (n, acc) in per_level.iter_mut().enumerate() {
            acc.push(p * t.w(n, alpha, lm));
        }
    })?;
    let worst = per_level
        .into_iter()
        .map(|terms| discrepancy(neumaier(terms), 1.0))
        .fold(0.0, f64::max);
    Ok(CheckResult::new("mean_w", worst, MASS_TOLERANCE, trees))
}

/// Per conditioning prefix: left-hand terms, right-hand terms, prefix mass.
type Group = (Vec<f64>, Vec<f64>, f64);

/// `E_μ[W_{n+1} | first n levels] = W_n` on every outcome, `n < depth`.
pub fn check_martingale(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
) -> Result<CheckResult, OracleError> {
    let lm = log_m(law, alpha)?;
    // (Σ μ W_{n+1}, Σ μ, W_n) per (n, prefix).
    let mut groups: HashMap<(usize, Vec<u32>), Group> = HashMap::new();
    enumerate_mu(law, depth, |t, p| {
        for n in 0..depth {
            let entry = groups
                .entry((n, t.prefix_key(n)))
                .or_insert_with(|| (Vec::new(), Vec::new(), t.w(n, alpha, lm)));
            entry.0.push(p * t.w(n + 1, alpha, lm));
            entry.1.push(p);
        }
    })?;
    let outcomes = groups.len();
    let worst = groups
        .into_values()
        .map(|(num, den, w_n)| discrepancy(neumaier(num) / neumaier(den), w_n))
        .fold(0.0, f64::max);
    Ok(CheckResult::new(
        "martingale",
        worst,
        IDENTITY_TOLERANCE,
        outcomes,
    ))
}

/// Conditional mean of `1/W_{n+1}` under `μ̂` given the first `n` levels.
///
/// Since `dμ̂_{n+1}/dμ_{n+1} = W_{n+1}`, the conditional mean equals
/// `μ(Z_{n+1} > 0 | first n levels) / W_n = (1 - P[L=0]^{Z_n}) / W_n`. For
/// laws without childless atoms the survival factor is one and `1/W_n` is a
/// `μ̂`-martingale; otherwise it is a strict supermartingale. The right-hand
/// side is computed from the offspring law alone, the left-hand side from the
/// `μ̂*` enumeration.
pub fn check_inverse_martingale(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
) -> Result<CheckResult, OracleError> {
    let lm = log_m(law, alpha)?;
    let p_empty = law.empty_probability();
    // (Σ μ̂ / W_{n+1}, Σ μ̂, expected) per (n, prefix).
    let mut groups: HashMap<(usize, Vec<u32>), Group> = HashMap::new();
    enumerate_mu_hat_star(law, alpha, depth, |t, _, p| {
        for n in 0..depth {
            let entry = groups.entry((n, t.prefix_key(n))).or_insert_with(|| {
                let survival = 1.0 - p_empty.powi(t.population(n) as i32);
                (Vec::new(), Vec::new(), survival / t.w(n, alpha, lm))
            });
            entry.0.push(p / t.w(n + 1, alpha, lm));
            entry.1.push(p);
        }
    })?;
    let outcomes = groups.len();
    let worst = groups
        .into_values()
        .filter(|(_, den, _)| den.iter().any(|&p| p > 0.0))
        .map(|(num, den, expected)| discrepancy(neumaier(num) / neumaier(den), expected))
        .fold(0.0, f64::max);
    Ok(CheckResult::new(
        "inverse_martingale",
        worst,
        IDENTITY_TOLERANCE,
        outcomes,
    ))
}

/// The strict form `E_μ̂[1/W_{n+1} | first n levels] = 1/W_n`, without the
/// survival factor. Holds exactly when the law has no childless atom.
pub fn inverse_martingale_strict_defect(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
) -> Result<f64, OracleError> {
    let lm = log_m(law, alpha)?;
    let mut groups: HashMap<(usize, Vec<u32>), Group> = HashMap::new();
    enumerate_mu_hat_star(law, alpha, depth, |t, _, p| {
        for n in 0..depth {
            let entry = groups
                .entry((n, t.prefix_key(n)))
                .or_insert_with(|| (Vec::new(), Vec::new(), 1.0 / t.w(n, alpha, lm)));
            entry.0.push(p / t.w(n + 1, alpha, lm));
            entry.1.push(p);
        }
    })?;
    Ok(groups
        .into_values()
        .map(|(num, den, expected)| discrepancy(neumaier(num) / neumaier(den), expected))
        .fold(0.0, f64::max))
}

/// `∫ X(v_{k+1}) dμ̂* = -m'(α)/m(α)` for every `k < depth`, and the full
/// marginal law of `X(v_{k+1})` equals the spine step law.
pub fn check_spine_mean(
    law: &FiniteLaw,
    alpha: f64,
    depth: usize,
) -> Result<CheckResult, OracleError> {
    let spec = LawSpec::Finite(law.clone());
    let drift = -spec.tilted_derivative(alpha)? / spec.tilted_mass(alpha)?;
    let step_law = law.spine_step_law(alpha)?;
    let mut means: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut marginals: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); depth];
    let pairs = enumerate_mu_hat_star(law, alpha, depth, |t, ray, p| {
        for k in 0..depth {
            let x = t.displacements[k + 1][ray[k + 1]];
            means[k].push(p * x);
            let m = &mut marginals[k];
            match m.iter_mut().find(|(v, _)| *v == x) {
                Some((_, ps)) => ps.push(p),
                None => m.push((x, vec![p])),
            }
        }
    })?;
    let mut worst = 0.0_f64;
    for k in 0..depth {
        worst = worst.max(discrepancy(neumaier(means[k].drain(..)), drift));
        let empirical: Vec<(f64, f64)> = marginals[k]
            .drain(..)
            .map(|(v, ps)| (v, neumaier(ps)))
            .collect();
        for &(v, p) in &step_law {
            let got = empirical
                .iter()
                .find(|(x, _)| *x == v)
                .map_or(0.0, |(_, q)| *q);
            worst = worst.max(discrepancy(got, p));
        }
        for &(v, q) in &empirical {
            if !step_law.iter().any(|(x, _)| *x == v) {
                worst = worst.max(q);
            }
        }
    }
    Ok(CheckResult::new(
        "spine_mean",
        worst,
        IDENTITY_TOLERANCE,
        pairs,
    ))
}

/// Total probability of both enumerations to `depth`.
pub fn total_masses(law: &FiniteLaw, alpha: f64, depth: usize) -> Result<(f64, f64), OracleError> {
    let mut mu = Vec::new();
    enumerate_mu(law, depth, |_, p| mu.push(p))?;
    let mut star = Vec::new();
    enumerate_mu_hat_star(law, alpha, depth, |_, _, p| star.push(p))?;
    Ok((neumaier(mu), neumaier(star)))
}

/// Runs the six identity checks.
pub fn run_all(
    law: &FiniteLaw,
    label: &str,
    alpha: f64,
    depth: usize,
) -> Result<EnumerationReport, OracleError> {
    let max_l = law.max_offspring().max(1) as f64;
    preflight(outcome_estimate_log10(law, depth) + depth as f64 * max_l.log10())?;
    let checks = vec![
        check_goal(law, alpha, depth)?,
        check_rn(law, alpha, depth)?,
        check_mean_w(law, alpha, depth)?,
        check_martingale(law, alpha, depth)?,
        check_inverse_martingale(law, alpha, depth)?,
        check_spine_mean(law, alpha, depth)?,
    ];
    Ok(EnumerationReport {
        law: label.to_string(),
        alpha,
        depth,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::fixtures::*;

    fn collect_mu(law: &FiniteLaw, depth: usize) -> Vec<(OutcomeTree, f64)> {
        let mut out = Vec::new();
        enumerate_mu(law, depth, |t, p| out.push((t.clone(), p))).unwrap();
        out
    }

    #[test]
    fn binary_depth_two_single_outcome() {
        let out = collect_mu(&binary(), 2);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1, 1.0);
        assert_eq!(out[0].0.population(2), 4);
    }

    #[test]
    fn law_c_depth_one_and_two() {
        let out = collect_mu(&law_c(), 1);
        let mut ps: Vec<f64> = out.iter().map(|(_, p)| *p).collect();
        ps.sort_by(f64::total_cmp);
        assert_eq!(ps, vec![0.2, 0.8]);

        let out = collect_mu(&law_c(), 2);
        assert_eq!(out.len(), 5);
        let mut ps: Vec<f64> = out.iter().map(|(_, p)| *p).collect();
        ps.sort_by(f64::total_cmp);
        let mut hand = vec![0.2, 0.8 * 0.04, 0.8 * 0.16, 0.8 * 0.16, 0.8 * 0.64];
        hand.sort_by(f64::total_cmp);
        for (a, b) in ps.iter().zip(&hand) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((neumaier(ps) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mu_hat_star_examples() {
        let mut out = Vec::new();
        enumerate_mu_hat_star(&binary(), 0.3, 1, |t, ray, p| {
            out.push((t.clone(), ray.to_vec(), p))
        })
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(_, _, p)| (*p - 0.5).abs() < 1e-15));
        assert_ne!(out[0].1, out[1].1);

        let mut ps = Vec::new();
        enumerate_mu_hat_star(&law_c(), 1.0, 1, |_, _, p| ps.push(p)).unwrap();
        ps.sort_by(f64::total_cmp);
        let step = law_c().spine_step_law(1.0).unwrap();
        assert!((ps[0] - step[1].1).abs() < 1e-15);
        assert!((ps[1] - step[0].1).abs() < 1e-15);
        assert!((ps[1] - 0.73106).abs() < 1e-5);

        let (mu, star) = total_masses(&law_c(), 1.0, 2).unwrap();
        assert!((mu - 1.0).abs() <= MASS_TOLERANCE);
        assert!((star - 1.0).abs() <= MASS_TOLERANCE);
    }

    #[test]
    fn too_large_is_refused() {
        assert!(matches!(
            enumerate_mu(&law_c(), 9, |_, _| {}),
            Err(OracleError::TooLarge { .. })
        ));
        assert!(matches!(
            run_all(&law_c(), "C", 1.0, 9),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn all_checks_pass_on_fixtures() {
        for (name, law, alphas) in [
            ("binary", binary(), vec![0.0, 1.0, -0.5]),
            ("C", law_c(), vec![0.0, 1.0, -0.5]),
            ("D", law_d(), vec![0.0, 1.0, -0.5, 5.0]),
        ] {
            for alpha in alphas {
                for depth in 1..=2 {
                    let report = run_all(&law, name, alpha, depth).unwrap();
                    for c in &report.checks {
                        assert!(c.pass, "{name} alpha={alpha} depth={depth}: {c:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn binary_depth_three_passes() {
        let report = run_all(&binary(), "binary", 1.0, 3).unwrap();
        assert!(report.all_pass());
        assert!(report.checks.iter().all(|c| c.max_discrepancy < 1e-14));
    }

    #[test]
    fn mean_w_law_c_depth_one_by_hand() {
        // 0.2·0 + 0.8·(1 + e^{-1})/m(1) = 1 with (1 + e^{-1})/m(1) = 1.25.
        let m = 0.8 * (1.0 + (-1.0_f64).exp());
        assert!(((1.0 + (-1.0_f64).exp()) / m - 1.25).abs() < 1e-15);
        let c = check_mean_w(&law_c(), 1.0, 1).unwrap();
        assert!(c.pass);
        assert_eq!(c.outcomes, 2);
    }

    #[test]
    fn strict_inverse_martingale_fails_when_extinction_possible() {
        // Law C: at n = 0, E_μ̂[1/W_1] = μ(Z_1 > 0) = 0.8.
        let defect = inverse_martingale_strict_defect(&law_c(), 1.0, 1).unwrap();
        assert!((defect - 0.2).abs() < 1e-12);
        // No childless atoms: the strict identity holds.
        assert!(inverse_martingale_strict_defect(&law_d(), 5.0, 2).unwrap() < 1e-10);
        assert!(check_inverse_martingale(&law_c(), 1.0, 2).unwrap().pass);
    }

    #[test]
    fn spine_mean_level_independent() {
        let c = check_spine_mean(&law_c(), 1.0, 2).unwrap();
        assert!(c.pass);
        let c = check_spine_mean(&binary(), 0.5, 2).unwrap();
        assert!(c.max_discrepancy < 1e-15);
    }

    #[test]
    fn exact_expectations_law_c_depth_two() {
        let p4 = exact_expectation(&law_c(), 2, |t| f64::from(t.population(2) == 4)).unwrap();
        assert!((p4 - 0.512).abs() < 1e-15);
        let alive = exact_expectation(&law_c(), 2, |t| f64::from(t.population(2) > 0)).unwrap();
        assert!((alive - 0.8 * (1.0 - 0.04)).abs() < 1e-15);
    }

    #[test]
    fn report_entries_flatten() {
        let r = run_all(&law_c(), "C", 1.0, 1).unwrap();
        let e = r.entries();
        assert_eq!(e.len(), 6);
        assert!(e.iter().all(|x| x.law == "C" && x.depth == 1));
    }
}
