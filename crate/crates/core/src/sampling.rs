//! Clone pools, stopping times and the random-group experiment.
//!
//! Agents are drawn i.i.d. from a full-support distribution over the pool
//! (clones are unlimited). A draw sequence stops at the first index where a
//! target set of agents has fully appeared; that index is the stopping time
//! `N1`. Three targets are supported: the whole pool, an outperforming subset,
//! and the witness pair made of the best agent and a helper that improves on
//! one of its failures.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::binomial;
use num_traits::{One, Signed, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deliberation::{
    compose_clones, group_over, verify_basic_theorem, DeliberationError, SchedulerPolicy,
};
use crate::model::{
    check_assumptions, Agent, AgentSet, Assumption, BestAgent, Landscape, ModelError, StateIx,
    Witness,
};
use crate::rational::{fmt_rational, harmonic, int, ratio, sum, to_f64, Rational};
use crate::seeding::{derive_seed, rng_from_seed, Rng};
use crate::table::to_csv;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Deliberation(#[from] DeliberationError),
    #[error("invalid draw distribution: {0}")]
    InvalidDistribution(String),
    #[error("stopping target must not be empty")]
    EmptyTarget,
    #[error("stopping rule does not match its variant: {0}")]
    RuleMismatch(String),
    #[error("target `{0}` is not in the agent pool")]
    UnknownTarget(String),
    #[error("stopping rule not met after {cap} draws")]
    TrialCapExceeded { cap: usize },
    #[error("best agent is not unique: {}", .0.join(", "))]
    BestTie(Vec<String>),
    #[error("group size must be positive")]
    ZeroGroupSize,
    #[error("target of {0} agents is too large for inclusion-exclusion")]
    TargetTooLarge(usize),
    #[error("theorem not applicable: {assumption} fails ({witness:?})")]
    NotApplicable {
        assumption: Assumption,
        witness: Witness,
    },
}

/// Draw distribution over the pool plus the stream seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSpec {
    pub draw_dist: Vec<(String, Rational)>,
    pub seed: u64,
    pub trial_cap: usize,
}

pub const DEFAULT_TRIAL_CAP: usize = 1_000_000;

impl SamplingSpec {
    pub fn uniform<S: AsRef<str>>(ids: &[S], seed: u64) -> Self {
        let p = ratio(1, ids.len().max(1) as i64);
        SamplingSpec {
            draw_dist: ids
                .iter()
                .map(|id| (id.as_ref().to_string(), p.clone()))
                .collect(),
            seed,
            trial_cap: DEFAULT_TRIAL_CAP,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.draw_dist.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn prob(&self, id: &str) -> Option<&Rational> {
        self.draw_dist.iter().find(|(a, _)| a == id).map(|(_, p)| p)
    }

    /// Full support, normalization, distinct ids, positive cap.
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: String| Err(SamplingError::InvalidDistribution(m));
        if self.draw_dist.is_empty() {
            return bad("empty".into());
        }
        let mut seen = BTreeSet::new();
        for (id, p) in &self.draw_dist {
            if !seen.insert(id) {
                return bad(format!("`{id}` listed twice"));
            }
            if !p.is_positive() {
                return bad(format!("`{id}` has probability {}", fmt_rational(p)));
            }
        }
        let total = sum(self.draw_dist.iter().map(|(_, p)| p));
        if !total.is_one() {
            return bad(format!("sums to {}", fmt_rational(&total)));
        }
        if self.trial_cap == 0 {
            return bad("trial cap must be positive".into());
        }
        Ok(())
    }

    /// Checks that the distribution covers exactly the pool.
    pub fn validate_for(&self, agents: &AgentSet) -> Result<(), SamplingError> {
        self.validate()?;
        let ids: BTreeSet<&str> = self.ids().into_iter().collect();
        let pool: BTreeSet<String> = agents.ids().into_iter().collect();
        if ids.len() != pool.len() || pool.iter().any(|id| !ids.contains(id.as_str())) {
            return Err(SamplingError::InvalidDistribution(
                "support differs from the agent pool".into(),
            ));
        }
        Ok(())
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(self.draw_dist.iter().map(|(_, p)| to_f64(p)))
            .expect("validated weights are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingVariant {
    /// Stop once every pool member has appeared.
    AllOfPhi,
    /// Stop once a subset that beats the best agent has appeared.
    OutperformSet,
    /// Stop once the best agent and its helper have appeared.
    WitnessPair,
}

impl StoppingVariant {
    pub fn number(self) -> u8 {
        match self {
            StoppingVariant::AllOfPhi => 1,
            StoppingVariant::OutperformSet => 2,
            StoppingVariant::WitnessPair => 3,
        }
    }
}

impl FromStr for StoppingVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "all" | "all-of-phi" => Ok(StoppingVariant::AllOfPhi),
            "2" | "outperform" | "outperform-set" => Ok(StoppingVariant::OutperformSet),
            "3" | "pair" | "witness-pair" => Ok(StoppingVariant::WitnessPair),
            other => Err(format!(
                "unknown stopping rule `{other}` (all-of-phi | outperform-set | witness-pair)"
            )),
        }
    }
}

impl fmt::Display for StoppingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoppingVariant::AllOfPhi => "all-of-phi",
            StoppingVariant::OutperformSet => "outperform-set",
            StoppingVariant::WitnessPair => "witness-pair",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRule {
    pub variant: StoppingVariant,
    pub target: BTreeSet<String>,
}

impl StoppingRule {
    pub fn all_of(agents: &AgentSet) -> Self {
        StoppingRule {
            variant: StoppingVariant::AllOfPhi,
            target: agents.ids().into_iter().collect(),
        }
    }

    pub fn outperform_set<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        StoppingRule {
            variant: StoppingVariant::OutperformSet,
            target: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn witness_pair(best: impl Into<String>, helper: impl Into<String>) -> Self {
        StoppingRule {
            variant: StoppingVariant::WitnessPair,
            target: [best.into(), helper.into()].into_iter().collect(),
        }
    }

    /// Derives the rule's target from the instance.
    pub fn for_instance(
        variant: StoppingVariant,
        landscape: &Landscape,
        agents: &AgentSet,
        policy: SchedulerPolicy,
    ) -> Result<Self, SamplingError> {
        Ok(match variant {
            StoppingVariant::AllOfPhi => StoppingRule::all_of(agents),
            StoppingVariant::OutperformSet => {
                let verdict = verify_basic_theorem(landscape, agents, policy)
                    .map_err(refusal_from_deliberation)?;
                StoppingRule::outperform_set(verdict.outperforming_subset)
            }
            StoppingVariant::WitnessPair => {
                let pair = find_witness_pair(landscape, agents)?;
                StoppingRule::witness_pair(pair.best, pair.helper)
            }
        })
    }

    pub fn validate_for(&self, agents: &AgentSet) -> Result<(), SamplingError> {
        if self.target.is_empty() {
            return Err(SamplingError::EmptyTarget);
        }
        if let Some(id) = self.target.iter().find(|id| agents.position(id).is_none()) {
            return Err(SamplingError::UnknownTarget(id.clone()));
        }
        match self.variant {
            StoppingVariant::AllOfPhi if self.target.len() != agents.len() => Err(
                SamplingError::RuleMismatch("all-of-phi must target the whole pool".into()),
            ),
            StoppingVariant::WitnessPair if self.target.len() != 2 => Err(
                SamplingError::RuleMismatch("witness-pair must target two agents".into()),
            ),
            _ => Ok(()),
        }
    }
}

fn refusal_from_deliberation(e: DeliberationError) -> SamplingError {
    match e {
        DeliberationError::NotApplicable {
            assumption,
            witness,
        } => SamplingError::NotApplicable {
            assumption,
            witness,
        },
        other => SamplingError::Deliberation(other),
    }
}

/// The best agent, a state where it misses the optimum, and an agent that
/// strictly improves on its answer there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessPair {
    pub best: String,
    pub helper: String,
    pub state: StateIx,
}

pub fn find_witness_pair(
    landscape: &Landscape,
    agents: &AgentSet,
) -> Result<WitnessPair, SamplingError> {
    let report = check_assumptions(landscape, agents);
    let best_id = match &report.best_agent {
        BestAgent::Unique(id) => id.clone(),
        BestAgent::Tie(ids) => return Err(SamplingError::BestTie(ids.clone())),
    };
    let best = agents.by_id(&best_id)?;
    for x in 0..landscape.len() {
        let y = best.apply(x);
        if y == landscape.optimum() {
            continue;
        }
        if let Some(helper) = agents
            .iter()
            .find(|a| landscape.value(a.apply(y)) > landscape.value(y))
        {
            return Ok(WitnessPair {
                best: best_id,
                helper: helper.id.clone(),
                state: x,
            });
        }
    }
    let (assumption, witness) = report
        .first_failure()
        .map(|(a, w)| (a, w.clone()))
        .unwrap_or((
            Assumption::Difficulty,
            Witness::AlwaysSolves {
                agent: best_id.clone(),
            },
        ));
    Err(SamplingError::NotApplicable {
        assumption,
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStats {
    pub draws: Vec<String>,
    pub n1: usize,
    /// Frequency of each pool member among the `n1` draws.
    pub empirical_freq: BTreeMap<String, Rational>,
    pub seed: u64,
}

impl SampleStats {
    /// Distinct drawn ids in pool order.
    pub fn dedup(&self, agents: &AgentSet) -> Vec<String> {
        agents
            .ids()
            .into_iter()
            .filter(|id| self.empirical_freq.get(id).is_some_and(|f| f.is_positive()))
            .collect()
    }
}

/// Index-level draw loop shared by every sampler.
fn draw_until(
    rng: &mut Rng,
    sampler: &WeightedIndex<f64>,
    target: &[bool],
    cap: usize,
) -> Result<Vec<usize>, SamplingError> {
    let mut missing = target.iter().filter(|&&t| t).count();
    let mut seen = vec![false; target.len()];
    let mut draws = Vec::new();
    while missing > 0 {
        if draws.len() == cap {
            return Err(SamplingError::TrialCapExceeded { cap });
        }
        let i = sampler.sample(rng);
        draws.push(i);
        if target[i] && !seen[i] {
            seen[i] = true;
            missing -= 1;
        }
    }
    Ok(draws)
}

fn target_mask(spec: &SamplingSpec, rule: &StoppingRule) -> Vec<bool> {
    spec.draw_dist
        .iter()
        .map(|(id, _)| rule.target.contains(id))
        .collect()
}

/// Draws from the clone pool until the rule's target has fully appeared.
pub fn draw_random_group(
    agents: &AgentSet,
    spec: &SamplingSpec,
    rule: &StoppingRule,
) -> Result<SampleStats, SamplingError> {
    spec.validate_for(agents)?;
    rule.validate_for(agents)?;
    let mut rng = rng_from_seed(spec.seed);
    let idx = draw_until(
        &mut rng,
        &spec.sampler(),
        &target_mask(spec, rule),
        spec.trial_cap,
    )?;
    Ok(stats_from_indices(spec, &idx, spec.seed))
}

fn stats_from_indices(spec: &SamplingSpec, idx: &[usize], seed: u64) -> SampleStats {
    let n1 = idx.len();
    let mut counts = vec![0i64; spec.draw_dist.len()];
    for &i in idx {
        counts[i] += 1;
    }
    SampleStats {
        draws: idx.iter().map(|&i| spec.draw_dist[i].0.clone()).collect(),
        n1,
        empirical_freq: spec
            .draw_dist
            .iter()
            .zip(&counts)
            .map(|((id, _), &c)| (id.clone(), ratio(c, n1.max(1) as i64)))
            .collect(),
        seed,
    }
}

/// `N1` copies of the unique best agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloneGroup {
    pub agent: String,
    pub multiplicity: usize,
    pub endpoints: Vec<StateIx>,
    pub expected_value: Rational,
}

pub fn best_clone_group(
    agents: &AgentSet,
    landscape: &Landscape,
    n1: usize,
    policy: SchedulerPolicy,
) -> Result<CloneGroup, SamplingError> {
    if n1 == 0 {
        return Err(SamplingError::ZeroGroupSize);
    }
    let report = check_assumptions(landscape, agents);
    let id = match report.best_agent {
        BestAgent::Unique(id) => id,
        BestAgent::Tie(ids) => return Err(SamplingError::BestTie(ids)),
    };
    let best = agents.by_id(&id)?;
    let endpoints = compose_clones(landscape, best, n1, policy)?;
    let expected_value = landscape.average_value(&endpoints);
    Ok(CloneGroup {
        agent: id,
        multiplicity: n1,
        endpoints,
        expected_value,
    })
}

/// Exact `E[N1]` for drawing from `spec` until `rule.target` has appeared.
///
/// Uniform distributions use `n · H_k`; anything else goes through
/// inclusion–exclusion over the target, `Σ_{∅≠S⊆T} (-1)^{|S|+1} / μ(S)`.
pub fn expected_stopping_time_oracle(
    spec: &SamplingSpec,
    rule: &StoppingRule,
) -> Result<Rational, SamplingError> {
    spec.validate()?;
    if rule.target.is_empty() {
        return Err(SamplingError::EmptyTarget);
    }
    let probs = rule
        .target
        .iter()
        .map(|id| {
            spec.prob(id)
                .cloned()
                .ok_or_else(|| SamplingError::UnknownTarget(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let first = &spec.draw_dist[0].1;
    if spec.draw_dist.iter().all(|(_, p)| p == first) {
        let n = int(spec.draw_dist.len() as i64);
        return Ok(n * harmonic(probs.len() as u64));
    }
    stopping_time_inclusion_exclusion(&probs)
}

/// `Σ_{∅≠S} (-1)^{|S|+1} / Σ_{i∈S} p_i` over subsets of the target probabilities.
pub fn stopping_time_inclusion_exclusion(probs: &[Rational]) -> Result<Rational, SamplingError> {
    if probs.is_empty() {
        return Err(SamplingError::EmptyTarget);
    }
    if probs.len() > 24 {
        return Err(SamplingError::TargetTooLarge(probs.len()));
    }
    let mut total = Rational::zero();
    for mask in 1u32..(1 << probs.len()) {
        let mass = probs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .fold(Rational::zero(), |acc, (_, p)| acc + p);
        let term = Rational::one() / mass;
        if mask.count_ones() % 2 == 1 {
            total += term;
        } else {
            total -= term;
        }
    }
    Ok(total)
}

/// Monte Carlo mean and standard error of `N1` over `trials` independent streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingEstimate {
    pub trials: usize,
    pub mean: f64,
    pub std_err: f64,
}

pub fn monte_carlo_stopping_time(
    spec: &SamplingSpec,
    rule: &StoppingRule,
    trials: usize,
) -> Result<StoppingEstimate, SamplingError> {
    spec.validate()?;
    if let Some(id) = rule.target.iter().find(|id| spec.prob(id).is_none()) {
        return Err(SamplingError::UnknownTarget(id.clone()));
    }
    let sampler = spec.sampler();
    let mask = target_mask(spec, rule);
    let lengths = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(spec.seed, "stopping-time", t as u64));
            draw_until(&mut rng, &sampler, &mask, spec.trial_cap).map(|d| d.len() as f64)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (mean, std_err) = mean_and_std_err(&lengths);
    Ok(StoppingEstimate {
        trials,
        mean,
        std_err,
    })
}

pub(crate) fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Probability that a size-`n1` sample drawn without replacement from a
/// finite pool contains at least one copy of every target member.
///
/// `counts[i]` is the number of copies of agent `i` in the pool.
pub fn same_pool_inclusion_probability(counts: &[u64], target: &[usize], n1: u64) -> Rational {
    let pool: u64 = counts.iter().sum();
    let denom = binomial(BigInt::from(pool), BigInt::from(n1));
    if denom.is_zero() {
        return Rational::zero();
    }
    let mut num = BigInt::zero();
    for mask in 0u32..(1 << target.len()) {
        let removed: u64 = target
            .iter()
            .enumerate()
            .filter(|(j, _)| mask & (1 << j) != 0)
            .map(|(_, &i)| counts[i])
            .sum();
        let ways = if pool - removed >= n1 {
            binomial(BigInt::from(pool - removed), BigInt::from(n1))
        } else {
            BigInt::zero()
        };
        if mask.count_ones() % 2 == 0 {
            num += ways;
        } else {
            num -= ways;
        }
    }
    Rational::new(num, denom)
}

/// One row of the random-group experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRow {
    pub trial: usize,
    pub n1: usize,
    pub dedup_size: usize,
    pub contains_best: bool,
    pub random_group_value: Rational,
    pub best_clone_value: Rational,
    pub solves_all: bool,
    pub unanimous: bool,
    /// Size of the independent second draw (faithful mode only).
    pub second_group_size: Option<usize>,
}

impl TrialRow {
    pub fn outperforms(&self) -> bool {
        self.random_group_value > self.best_clone_value
    }
}

/// What the stopping rule guarantees once it fires, computed without sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleCertificate {
    pub target: Vec<String>,
    pub target_value: Rational,
    pub best_value: Rational,
    pub target_outperforms: bool,
    pub target_solves_all: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpReport {
    pub variant: StoppingVariant,
    pub rows: Vec<TrialRow>,
    pub certificate: RuleCertificate,
    pub outperform_count: usize,
    pub solve_all_count: usize,
    pub unanimous_count: usize,
    pub contains_best_count: usize,
    pub mean_n1: f64,
    pub oracle_mean_n1: Rational,
}

impl HpReport {
    pub fn trials(&self) -> usize {
        self.rows.len()
    }

    fn fraction(&self, count: usize) -> f64 {
        if self.rows.is_empty() {
            f64::NAN
        } else {
            count as f64 / self.rows.len() as f64
        }
    }

    pub fn outperform_fraction(&self) -> f64 {
        self.fraction(self.outperform_count)
    }

    pub fn solve_all_fraction(&self) -> f64 {
        self.fraction(self.solve_all_count)
    }

    pub fn unanimity_fraction(&self) -> f64 {
        self.fraction(self.unanimous_count)
    }

    /// `trial,N1,dedup_size,contains_best,random_group_ev,best_clone_ev,solves_all`.
    pub fn to_csv(&self) -> String {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.trial.to_string(),
                r.n1.to_string(),
                r.dedup_size.to_string(),
                r.contains_best.to_string(),
                fmt_rational(&r.random_group_value),
                fmt_rational(&r.best_clone_value),
                r.solves_all.to_string(),
            ]
        });
        to_csv(
            &[
                "trial",
                "N1",
                "dedup_size",
                "contains_best",
                "random_group_ev",
                "best_clone_ev",
                "solves_all",
            ],
            rows,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HpOptions {
    pub trials: usize,
    pub policy: SchedulerPolicy,
    /// Also draw the independent second group of size `N` until it holds
    /// `N1` copies of the best agent.
    pub faithful: bool,
}

/// Random group versus `N1` clones of the best agent, over many draws.
pub fn hp_experiment(
    landscape: &Landscape,
    agents: &AgentSet,
    spec: &SamplingSpec,
    rule: &StoppingRule,
    options: HpOptions,
) -> Result<HpReport, SamplingError> {
    for a in agents {
        landscape.check_agent(a)?;
    }
    let report = check_assumptions(landscape, agents);
    if let Some((assumption, witness)) = report.first_failure() {
        return Err(SamplingError::NotApplicable {
            assumption,
            witness: witness.clone(),
        });
    }
    spec.validate_for(agents)?;
    rule.validate_for(agents)?;
    let best_id = report
        .best_agent
        .unique()
        .expect("unique-best holds")
        .to_string();
    let best_pool_ix = spec
        .draw_dist
        .iter()
        .position(|(id, _)| *id == best_id)
        .expect("spec covers the pool");
    let best_value = report.performance(&best_id).cloned().expect("reported");

    let target: Vec<String> = agents
        .ids()
        .into_iter()
        .filter(|id| rule.target.contains(id))
        .collect();
    let target_group = agents.restrict(&target)?;
    let target_outcome = group_over(landscape, target_group.agents(), options.policy)?;
    let certificate = RuleCertificate {
        target,
        target_outperforms: target_outcome.expected_value > best_value,
        target_solves_all: target_outcome.solves_all(landscape),
        target_value: target_outcome.expected_value,
        best_value: best_value.clone(),
    };

    let sampler = spec.sampler();
    let mask = target_mask(spec, rule);
    let draws = (0..options.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(spec.seed, "hp-trial", t as u64));
            let idx = draw_until(&mut rng, &sampler, &mask, spec.trial_cap)?;
            let second = if options.faithful {
                let n1 = idx.len();
                let mut rng = rng_from_seed(derive_seed(spec.seed, "hp-second-group", t as u64));
                let mut copies = 0usize;
                let mut size = 0usize;
                while copies < n1 {
                    if size == spec.trial_cap {
                        return Err(SamplingError::TrialCapExceeded {
                            cap: spec.trial_cap,
                        });
                    }
                    size += 1;
                    if sampler.sample(&mut rng) == best_pool_ix {
                        copies += 1;
                    }
                }
                Some(size)
            } else {
                None
            };
            Ok((idx, second))
        })
        .collect::<Result<Vec<_>, SamplingError>>()?;

    // Deduplicated groups repeat a lot; evaluate each one once.
    let mut group_cache: HashMap<Vec<bool>, (Rational, bool, bool)> = HashMap::new();
    let mut clone_cache: HashMap<usize, Rational> = HashMap::new();
    let mut rows = Vec::with_capacity(draws.len());
    for (trial, (idx, second)) in draws.into_iter().enumerate() {
        let mut present = vec![false; spec.draw_dist.len()];
        for &i in &idx {
            present[i] = true;
        }
        let members: Vec<Agent> = agents
            .iter()
            .filter(|a| {
                spec.draw_dist
                    .iter()
                    .position(|(id, _)| *id == a.id)
                    .is_some_and(|i| present[i])
            })
            .cloned()
            .collect();
        let (random_value, solves_all, unanimous) = match group_cache.get(&present) {
            Some(hit) => hit.clone(),
            None => {
                let outcome = group_over(landscape, &members, options.policy)?;
                let entry = (
                    outcome.expected_value.clone(),
                    outcome.solves_all(landscape),
                    outcome.unanimous(),
                );
                group_cache.insert(present.clone(), entry.clone());
                entry
            }
        };
        let n1 = idx.len();
        let best_clone_value = match clone_cache.get(&n1) {
            Some(v) => v.clone(),
            None => {
                let v = best_clone_group(agents, landscape, n1, options.policy)?.expected_value;
                clone_cache.insert(n1, v.clone());
                v
            }
        };
        rows.push(TrialRow {
            trial,
            n1,
            dedup_size: members.len(),
            contains_best: present[best_pool_ix],
            random_group_value: random_value,
            best_clone_value,
            solves_all,
            unanimous,
            second_group_size: second,
        });
    }

    let mean_n1 = if rows.is_empty() {
        f64::NAN
    } else {
        rows.iter().map(|r| r.n1 as f64).sum::<f64>() / rows.len() as f64
    };
    Ok(HpReport {
        variant: rule.variant,
        outperform_count: rows.iter().filter(|r| r.outperforms()).count(),
        solve_all_count: rows.iter().filter(|r| r.solves_all).count(),
        unanimous_count: rows.iter().filter(|r| r.unanimous).count(),
        contains_best_count: rows.iter().filter(|r| r.contains_best).count(),
        mean_n1,
        oracle_mean_n1: expected_stopping_time_oracle(spec, rule)?,
        certificate,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_landscape, RawTable};

    fn hp() -> (Landscape, AgentSet) {
        let l = validate_landscape(RawTable::new([
            ("a", ratio(1, 4)),
            ("b", ratio(1, 2)),
            ("c", ratio(3, 4)),
            ("d", int(1)),
        ]))
        .unwrap();
        let agents = AgentSet::new(vec![
            Agent::from_labels(&l, "phi_1", &["b", "b", "d", "d"]).unwrap(),
            Agent::from_labels(&l, "phi_2", &["a", "c", "c", "d"]).unwrap(),
            Agent::from_labels(&l, "phi_3", &["b", "b", "c", "d"]).unwrap(),
        ])
        .unwrap();
        (l, agents)
    }

    fn twelve() -> (Vec<String>, SamplingSpec) {
        let ids: Vec<String> = (1..=12).map(|i| format!("g{i}")).collect();
        let spec = SamplingSpec::uniform(&ids, 11);
        (ids, spec)
    }

    #[test]
    fn uniform_oracle_values() {
        let (ids, spec) = twelve();
        let all = StoppingRule::outperform_set(ids.clone());
        assert_eq!(
            expected_stopping_time_oracle(&spec, &all).unwrap(),
            int(12) * harmonic(12)
        );
        let six = StoppingRule::outperform_set(ids[..6].to_vec());
        assert_eq!(
            expected_stopping_time_oracle(&spec, &six).unwrap(),
            ratio(147, 5)
        );
        let pair = StoppingRule::witness_pair(ids[0].clone(), ids[1].clone());
        assert_eq!(
            expected_stopping_time_oracle(&spec, &pair).unwrap(),
            int(18)
        );
    }

    #[test]
    fn inclusion_exclusion_agrees_with_harmonic_formula() {
        for n in 1..=8i64 {
            for k in 1..=n as usize {
                let probs = vec![ratio(1, n); k];
                assert_eq!(
                    stopping_time_inclusion_exclusion(&probs).unwrap(),
                    int(n) * harmonic(k as u64)
                );
            }
        }
    }

    #[test]
    fn single_target_is_geometric() {
        let spec = SamplingSpec {
            draw_dist: vec![("x".into(), ratio(1, 5)), ("y".into(), ratio(4, 5))],
            seed: 0,
            trial_cap: 100,
        };
        let rule = StoppingRule::outperform_set(["x"]);
        assert_eq!(expected_stopping_time_oracle(&spec, &rule).unwrap(), int(5));
    }

    #[test]
    fn draws_are_reproducible_and_stop_at_first_full_target() {
        let (_, agents) = hp();
        let spec = SamplingSpec::uniform(&agents.ids(), 42);
        let rule = StoppingRule::all_of(&agents);
        let a = draw_random_group(&agents, &spec, &rule).unwrap();
        let b = draw_random_group(&agents, &spec, &rule).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.len(), a.n1);
        let distinct_before: BTreeSet<&String> = a.draws[..a.n1 - 1].iter().collect();
        assert!(distinct_before.len() < 3);
        assert_eq!(sum(a.empirical_freq.values()), int(1));
    }

    #[test]
    fn zero_probability_is_rejected() {
        let spec = SamplingSpec {
            draw_dist: vec![
                ("phi_1".into(), ratio(1, 1)),
                ("phi_2".into(), ratio(0, 1)),
                ("phi_3".into(), ratio(0, 1)),
            ],
            seed: 0,
            trial_cap: 10,
        };
        assert!(matches!(
            spec.validate(),
            Err(SamplingError::InvalidDistribution(_))
        ));
    }

    #[test]
    fn earliest_stop_equals_target_size() {
        let (_, agents) = hp();
        let rule = StoppingRule::all_of(&agents);
        let n1s: Vec<usize> = (0..200)
            .map(|seed| {
                let spec = SamplingSpec::uniform(&agents.ids(), seed);
                draw_random_group(&agents, &spec, &rule).unwrap().n1
            })
            .collect();
        assert!(n1s.iter().all(|&n| n >= 3));
        assert!(n1s.contains(&3));
    }

    #[test]
    fn trial_cap_is_reported() {
        let (_, agents) = hp();
        let mut spec = SamplingSpec::uniform(&agents.ids(), 3);
        spec.trial_cap = 2;
        let rule = StoppingRule::all_of(&agents);
        assert_eq!(
            draw_random_group(&agents, &spec, &rule).unwrap_err(),
            SamplingError::TrialCapExceeded { cap: 2 }
        );
    }

    #[test]
    fn rule_validation() {
        let (_, agents) = hp();
        assert_eq!(
            StoppingRule::outperform_set(Vec::<String>::new()).validate_for(&agents),
            Err(SamplingError::EmptyTarget)
        );
        assert!(matches!(
            StoppingRule::outperform_set(["nope"]).validate_for(&agents),
            Err(SamplingError::UnknownTarget(_))
        ));
        let mut partial = StoppingRule::all_of(&agents);
        partial.target.remove("phi_1");
        assert!(matches!(
            partial.validate_for(&agents),
            Err(SamplingError::RuleMismatch(_))
        ));
    }

    #[test]
    fn witness_pair_on_worked_example() {
        let (l, agents) = hp();
        let pair = find_witness_pair(&l, &agents).unwrap();
        assert_eq!(pair.best, "phi_1");
        assert_eq!(pair.helper, "phi_2");
        assert_eq!(pair.state, 0);
    }

    #[test]
    fn best_clone_group_collapses_to_the_best_agent() {
        let (l, agents) = hp();
        let g = best_clone_group(&agents, &l, 5, SchedulerPolicy::default()).unwrap();
        assert_eq!(g.agent, "phi_1");
        assert_eq!(g.expected_value, ratio(3, 4));
        assert_eq!(g.endpoints, agents.get(0).map);
        let one = best_clone_group(&agents, &l, 1, SchedulerPolicy::default()).unwrap();
        assert_eq!(one.endpoints, g.endpoints);
        assert_eq!(
            best_clone_group(&agents, &l, 0, SchedulerPolicy::default()),
            Err(SamplingError::ZeroGroupSize)
        );
    }

    #[test]
    fn hp_experiment_zero_trials_is_empty() {
        let (l, agents) = hp();
        let spec = SamplingSpec::uniform(&agents.ids(), 1);
        let rule = StoppingRule::all_of(&agents);
        let r = hp_experiment(
            &l,
            &agents,
            &spec,
            &rule,
            HpOptions {
                trials: 0,
                policy: SchedulerPolicy::default(),
                faithful: false,
            },
        )
        .unwrap();
        assert!(r.rows.is_empty());
        assert!(r.certificate.target_solves_all);
    }

    #[test]
    fn hp_experiment_witness_pair_always_outperforms() {
        let (l, agents) = hp();
        let spec = SamplingSpec::uniform(&agents.ids(), 5);
        let rule = StoppingRule::for_instance(
            StoppingVariant::WitnessPair,
            &l,
            &agents,
            SchedulerPolicy::default(),
        )
        .unwrap();
        let r = hp_experiment(
            &l,
            &agents,
            &spec,
            &rule,
            HpOptions {
                trials: 500,
                policy: SchedulerPolicy::default(),
                faithful: true,
            },
        )
        .unwrap();
        assert_eq!(r.outperform_count, 500);
        assert!(r.certificate.target_outperforms);
        assert!(r
            .rows
            .iter()
            .all(|row| row.second_group_size.unwrap() >= row.n1));
        assert_eq!(r.contains_best_count, 500);
    }

    #[test]
    fn same_pool_probability_matches_enumeration() {
        // Pool: 1 copy of agent 0, 2 of agent 1, 3 of agent 2; target {0, 1}.
        let counts = [1u64, 2, 3];
        let target = [0usize, 1];
        let pool: Vec<usize> = vec![0, 1, 1, 2, 2, 2];
        for n1 in 0..=6u64 {
            let mut hits = 0i64;
            let mut total = 0i64;
            for mask in 0u32..(1 << pool.len()) {
                if mask.count_ones() as u64 != n1 {
                    continue;
                }
                total += 1;
                let chosen: BTreeSet<usize> = (0..pool.len())
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| pool[i])
                    .collect();
                if target.iter().all(|t| chosen.contains(t)) {
                    hits += 1;
                }
            }
            assert_eq!(
                same_pool_inclusion_probability(&counts, &target, n1),
                ratio(hits, total),
                "n1 = {n1}"
            );
        }
    }

    #[test]
    fn variant_names_parse() {
        for v in [
            StoppingVariant::AllOfPhi,
            StoppingVariant::OutperformSet,
            StoppingVariant::WitnessPair,
        ] {
            assert_eq!(v.to_string().parse::<StoppingVariant>().unwrap(), v);
            assert_eq!(
                v.number().to_string().parse::<StoppingVariant>().unwrap(),
                v
            );
        }
    }
}
