//! Stochastic deliberation with disagreement, and the ability/diversity groups.
//!
//! At each step an agent is drawn from the current state's selection measure.
//! A draw that leaves the state unchanged is a pass. A move that immediately
//! undoes the previous move, made by a different agent, is a disagreement: the
//! walk stops and returns the state before the undone move. The walk also
//! stops at a state every agent fixes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::{One, Signed, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::deliberation::{DeliberationTrace, Step, StopReason};
use crate::model::{Agent, AgentSet, Landscape, ModelError, StateIx};
use crate::rational::{fmt_rational, int, ratio, sum, to_f64, Rational};
use crate::sampling::mean_and_std_err;
use crate::seeding::{derive_seed, rng_from_seed, Rng};
use crate::table::to_csv;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StochasticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("selection measure at state {state}: {message}")]
    Family { state: StateIx, message: String },
    #[error("start state {0} is out of range")]
    StartOutOfRange(StateIx),
    #[error("infeasible group: {0}")]
    Infeasible(GroupViolation),
    #[error("chain from start {start} is not absorbed (closed class without exit)")]
    NotAbsorbing { start: StateIx },
}

/// Per-state selection measures `μ_x` over a group, aligned with group order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionFamily {
    ids: Vec<String>,
    dists: Vec<Vec<Rational>>,
}

impl SelectionFamily {
    pub fn uniform(landscape: &Landscape, group: &AgentSet) -> Self {
        let p = ratio(1, group.len() as i64);
        SelectionFamily {
            ids: group.ids(),
            dists: vec![vec![p; group.len()]; landscape.len()],
        }
    }

    /// Random full-support measures with integer weights in `1..=4`.
    pub fn skewed(landscape: &Landscape, group: &AgentSet, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, "selection-family", 0));
        let dists = (0..landscape.len())
            .map(|_| {
                let w: Vec<i64> = (0..group.len()).map(|_| rng.gen_range(1..=4)).collect();
                let total: i64 = w.iter().sum();
                w.into_iter().map(|k| ratio(k, total)).collect()
            })
            .collect();
        SelectionFamily {
            ids: group.ids(),
            dists,
        }
    }

    pub fn from_table(
        landscape: &Landscape,
        group: &AgentSet,
        dists: Vec<Vec<Rational>>,
    ) -> Result<Self, StochasticError> {
        let family = SelectionFamily {
            ids: group.ids(),
            dists,
        };
        family.validate(landscape, group)?;
        Ok(family)
    }

    pub fn validate(&self, landscape: &Landscape, group: &AgentSet) -> Result<(), StochasticError> {
        let bad = |state, message: String| Err(StochasticError::Family { state, message });
        if self.ids != group.ids() {
            return bad(0, "agent ids differ from the group".into());
        }
        if self.dists.len() != landscape.len() {
            return bad(
                0,
                format!(
                    "{} measures for {} states",
                    self.dists.len(),
                    landscape.len()
                ),
            );
        }
        for (x, dist) in self.dists.iter().enumerate() {
            if dist.len() != group.len() {
                return bad(
                    x,
                    format!("{} weights for {} agents", dist.len(), group.len()),
                );
            }
            if let Some(i) = dist.iter().position(|p| !p.is_positive()) {
                return bad(x, format!("agent `{}` is silenced", self.ids[i]));
            }
            let total = sum(dist);
            if !total.is_one() {
                return bad(x, format!("sums to {}", fmt_rational(&total)));
            }
        }
        Ok(())
    }

    pub fn prob(&self, state: StateIx, agent: usize) -> &Rational {
        &self.dists[state][agent]
    }
}

/// Chain state: current solution plus the last real move `(from, agent)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainState {
    pub current: StateIx,
    pub last_move: Option<(StateIx, usize)>,
}

fn fixed_by_all(group: &[Agent], x: StateIx) -> bool {
    group.iter().all(|a| a.apply(x) == x)
}

/// Draw cap for [`stochastic_deliberate`].
pub fn default_stochastic_cap(landscape: &Landscape, group: &AgentSet) -> usize {
    1000 * landscape.len() * group.len()
}

struct Walk {
    steps: Vec<(usize, StateIx, StateIx)>,
    endpoint: StateIx,
    reason: StopReason,
}

fn walk(
    group: &[Agent],
    samplers: &[WeightedIndex<f64>],
    start: StateIx,
    cap: usize,
    rng: &mut Rng,
    record: bool,
) -> Walk {
    let mut steps = Vec::new();
    let mut cur = start;
    let mut last: Option<(StateIx, usize)> = None;
    for _ in 0..cap {
        if fixed_by_all(group, cur) {
            return Walk {
                steps,
                endpoint: cur,
                reason: StopReason::CommonFixedPoint,
            };
        }
        let i = samplers[cur].sample(rng);
        let next = group[i].apply(cur);
        if next == cur {
            continue;
        }
        if let Some((prev, j)) = last {
            if next == prev && i != j {
                return Walk {
                    steps,
                    endpoint: prev,
                    reason: StopReason::Disagreement,
                };
            }
        }
        if record {
            steps.push((i, cur, next));
        }
        last = Some((cur, i));
        cur = next;
    }
    Walk {
        steps,
        endpoint: cur,
        reason: StopReason::StepCap,
    }
}

fn samplers(family: &SelectionFamily) -> Vec<WeightedIndex<f64>> {
    family
        .dists
        .iter()
        .map(|d| WeightedIndex::new(d.iter().map(to_f64)).expect("validated weights"))
        .collect()
}

/// One seeded path of the disagreement-aware deliberation.
pub fn stochastic_deliberate(
    landscape: &Landscape,
    group: &AgentSet,
    family: &SelectionFamily,
    start: StateIx,
    seed: u64,
) -> Result<DeliberationTrace, StochasticError> {
    validate_inputs(landscape, group, family)?;
    if start >= landscape.len() {
        return Err(StochasticError::StartOutOfRange(start));
    }
    let mut rng = rng_from_seed(seed);
    let w = walk(
        group.agents(),
        &samplers(family),
        start,
        default_stochastic_cap(landscape, group),
        &mut rng,
        true,
    );
    Ok(DeliberationTrace {
        start,
        steps: w
            .steps
            .into_iter()
            .map(|(i, from, to)| Step {
                agent: group.get(i).id.clone(),
                from,
                to,
            })
            .collect(),
        endpoint: w.endpoint,
        stop_reason: w.reason,
    })
}

fn validate_inputs(
    landscape: &Landscape,
    group: &AgentSet,
    family: &SelectionFamily,
) -> Result<(), StochasticError> {
    for a in group {
        landscape.check_agent(a)?;
    }
    family.validate(landscape, group)
}

/// Exact distribution of the returned state for each start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsorptionReport {
    /// `returned[x][y]`: probability that deliberation from `x` returns `y`.
    pub returned: Vec<Vec<Rational>>,
    pub per_start: Vec<Rational>,
    pub average: Rational,
    /// Number of transient chain states.
    pub chain_size: usize,
}

enum Outcome {
    Absorbed(StateIx),
    Move(ChainState),
}

fn transitions(
    group: &[Agent],
    family: &SelectionFamily,
    s: ChainState,
) -> Vec<(Rational, Outcome)> {
    let x = s.current;
    let movers: Vec<usize> = (0..group.len())
        .filter(|&i| group[i].apply(x) != x)
        .collect();
    let mass = movers
        .iter()
        .fold(Rational::zero(), |acc, &i| acc + family.prob(x, i));
    movers
        .into_iter()
        .map(|i| {
            let p = family.prob(x, i) / &mass;
            let y = group[i].apply(x);
            let outcome = match s.last_move {
                Some((prev, j)) if y == prev && i != j => Outcome::Absorbed(prev),
                _ => Outcome::Move(ChainState {
                    current: y,
                    last_move: Some((x, i)),
                }),
            };
            (p, outcome)
        })
        .collect()
}

/// Solves the absorbing chain over [`ChainState`] exactly.
///
/// Passes are dropped by conditioning each step on a real move, which leaves
/// the returned state's law unchanged.
pub fn absorption_expected_value(
    landscape: &Landscape,
    group: &AgentSet,
    family: &SelectionFamily,
) -> Result<AbsorptionReport, StochasticError> {
    validate_inputs(landscape, group, family)?;
    let agents = group.agents();
    let n = landscape.len();

    let mut index: HashMap<ChainState, usize> = HashMap::new();
    let mut order: Vec<ChainState> = Vec::new();
    let mut queue: VecDeque<ChainState> = VecDeque::new();
    for x in 0..n {
        let s = ChainState {
            current: x,
            last_move: None,
        };
        index.insert(s, order.len());
        order.push(s);
        queue.push_back(s);
    }
    while let Some(s) = queue.pop_front() {
        for (_, outcome) in transitions(agents, family, s) {
            if let Outcome::Move(t) = outcome {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(t) {
                    e.insert(order.len());
                    order.push(t);
                    queue.push_back(t);
                }
            }
        }
    }

    // (I - Q) H = B, one column per returned state.
    let m = order.len();
    let mut a = vec![vec![Rational::zero(); m]; m];
    let mut b = vec![vec![Rational::zero(); n]; m];
    for (r, &s) in order.iter().enumerate() {
        a[r][r] = Rational::one();
        if fixed_by_all(agents, s.current) {
            b[r][s.current] = Rational::one();
            continue;
        }
        for (p, outcome) in transitions(agents, family, s) {
            match outcome {
                Outcome::Absorbed(y) => b[r][y] += p,
                Outcome::Move(t) => a[r][index[&t]] -= p,
            }
        }
    }
    let h = solve(a, b).map_err(|row| StochasticError::NotAbsorbing {
        start: order[row].current,
    })?;

    let returned: Vec<Vec<Rational>> = h.into_iter().take(n).collect();
    for (x, dist) in returned.iter().enumerate() {
        if !sum(dist).is_one() {
            return Err(StochasticError::NotAbsorbing { start: x });
        }
    }
    let per_start: Vec<Rational> = returned
        .iter()
        .map(|dist| {
            dist.iter()
                .enumerate()
                .fold(Rational::zero(), |acc, (y, p)| acc + p * landscape.value(y))
        })
        .collect();
    let average = per_start
        .iter()
        .enumerate()
        .fold(Rational::zero(), |acc, (x, v)| {
            acc + v * landscape.start_prob(x)
        });
    Ok(AbsorptionReport {
        returned,
        per_start,
        average,
        chain_size: m,
    })
}

/// Gauss–Jordan elimination; on a singular system returns the offending row.
fn solve(
    mut a: Vec<Vec<Rational>>,
    mut b: Vec<Vec<Rational>>,
) -> Result<Vec<Vec<Rational>>, usize> {
    let m = a.len();
    for col in 0..m {
        let pivot = (col..m).find(|&r| !a[r][col].is_zero()).ok_or(col)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = Rational::one() / &a[col][col];
        for v in a[col].iter_mut() {
            *v *= &inv;
        }
        for v in b[col].iter_mut() {
            *v *= &inv;
        }
        let (pivot_a, pivot_b) = (a[col].clone(), b[col].clone());
        for r in 0..m {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for (v, p) in a[r].iter_mut().zip(&pivot_a).skip(col) {
                *v -= &f * p;
            }
            for (v, p) in b[r].iter_mut().zip(&pivot_b) {
                *v -= &f * p;
            }
        }
    }
    Ok(b)
}

/// A violated group constraint, as reported by the independent checkers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupViolation {
    #[error("group needs at least 2 agents, got {0}")]
    TooSmall(usize),
    #[error("the optimum is not in the common-knowledge set")]
    OptimumOutsideCk,
    #[error("state {0} is not a landscape state")]
    UnknownState(StateIx),
    #[error("agent {agent} lowers the value at state {state}")]
    Ability { agent: String, state: StateIx },
    #[error("agent {agent} does not return the optimum at common-knowledge state {state}")]
    CkNotSolved { agent: String, state: StateIx },
    #[error("state {state} is moved by {movers} agents, expected exactly one")]
    Deviators { state: StateIx, movers: usize },
    #[error("agent {agent} deviates at {load} states, bound is |X|/{size} + 1")]
    Overloaded {
        agent: String,
        load: usize,
        size: usize,
    },
    #[error("assignment names agent index {0}, outside the group")]
    UnknownAgentIndex(usize),
    #[error("landscape needs at least 3 states, got {0}")]
    TooFewStates(usize),
    #[error("the bad state must not be the optimum")]
    BadStateIsOptimum,
    #[error("no state has a lower value than the bad state {0}")]
    NoLowerState(StateIx),
    #[error("regressed state {regressed} is not below the bad state {bad}")]
    NotARegression { bad: StateIx, regressed: StateIx },
    #[error("the bad agent does not lower the value at the bad state")]
    MissingRegression,
    #[error("no agent moves state {0}")]
    Unmoved(StateIx),
    #[error("improving state {0} is never an agent's improving answer")]
    Uncovered(StateIx),
    #[error("no agent moves the regressed state {regressed} to the bad state {bad}")]
    NoReturnMove { regressed: StateIx, bad: StateIx },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbilityGroupSpec {
    pub ck_set: BTreeSet<StateIx>,
    /// Deviating agent index per off-common-knowledge state; round-robin in
    /// value order when absent.
    pub assignment: Option<BTreeMap<StateIx, usize>>,
}

impl AbilityGroupSpec {
    pub fn new(ck_set: impl IntoIterator<Item = StateIx>) -> Self {
        AbilityGroupSpec {
            ck_set: ck_set.into_iter().collect(),
            assignment: None,
        }
    }
}

/// Independent predicate for the ability group constraints.
pub fn check_ability_group(
    landscape: &Landscape,
    group: &AgentSet,
    ck_set: &BTreeSet<StateIx>,
) -> Result<(), GroupViolation> {
    let n = landscape.len();
    let opt = landscape.optimum();
    if group.len() < 2 {
        return Err(GroupViolation::TooSmall(group.len()));
    }
    if let Some(&x) = ck_set.iter().find(|&&x| x >= n) {
        return Err(GroupViolation::UnknownState(x));
    }
    if !ck_set.contains(&opt) {
        return Err(GroupViolation::OptimumOutsideCk);
    }
    for a in group {
        if let Some(x) = (0..n).find(|&x| landscape.value(a.apply(x)) < landscape.value(x)) {
            return Err(GroupViolation::Ability {
                agent: a.id.clone(),
                state: x,
            });
        }
        if let Some(&x) = ck_set.iter().find(|&&x| a.apply(x) != opt) {
            return Err(GroupViolation::CkNotSolved {
                agent: a.id.clone(),
                state: x,
            });
        }
    }
    let mut load = vec![0usize; group.len()];
    for x in (0..n).filter(|x| !ck_set.contains(x)) {
        let movers: Vec<usize> = (0..group.len())
            .filter(|&i| group.get(i).apply(x) != x)
            .collect();
        if movers.len() != 1 {
            return Err(GroupViolation::Deviators {
                state: x,
                movers: movers.len(),
            });
        }
        load[movers[0]] += 1;
    }
    let size = group.len();
    if let Some(i) = (0..size).find(|&i| load[i] * size > n + size) {
        return Err(GroupViolation::Overloaded {
            agent: group.get(i).id.clone(),
            load: load[i],
            size,
        });
    }
    Ok(())
}

/// Agents `a1..a<size>`: everyone solves the common-knowledge states; each
/// other state has one deviator who moves it to the next higher value.
pub fn build_ability_group(
    landscape: &Landscape,
    spec: &AbilityGroupSpec,
    size: usize,
) -> Result<AgentSet, StochasticError> {
    let n = landscape.len();
    let opt = landscape.optimum();
    let infeasible = |v| Err(StochasticError::Infeasible(v));
    if size < 2 {
        return infeasible(GroupViolation::TooSmall(size));
    }
    if let Some(&x) = spec.ck_set.iter().find(|&&x| x >= n) {
        return infeasible(GroupViolation::UnknownState(x));
    }
    if !spec.ck_set.contains(&opt) {
        return infeasible(GroupViolation::OptimumOutsideCk);
    }
    let mut maps: Vec<Vec<StateIx>> = vec![(0..n).collect(); size];
    for &x in &spec.ck_set {
        for map in maps.iter_mut() {
            map[x] = opt;
        }
    }
    let off_ck = landscape
        .by_value()
        .into_iter()
        .filter(|x| !spec.ck_set.contains(x));
    for (k, x) in off_ck.enumerate() {
        let deviator = match &spec.assignment {
            Some(table) => match table.get(&x) {
                Some(&i) if i < size => i,
                Some(&i) => return infeasible(GroupViolation::UnknownAgentIndex(i)),
                None => {
                    return infeasible(GroupViolation::Deviators {
                        state: x,
                        movers: 0,
                    })
                }
            },
            None => k % size,
        };
        maps[deviator][x] = landscape.improving_states(x)[0];
    }
    let group = AgentSet::new(
        maps.into_iter()
            .enumerate()
            .map(|(i, map)| Agent::new(format!("a{}", i + 1), map))
            .collect(),
    )?;
    check_ability_group(landscape, &group, &spec.ck_set).map_err(StochasticError::Infeasible)?;
    Ok(group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiversityGroupSpec {
    pub bad_state: StateIx,
    /// Index of the agent that regresses; its id is `d<index + 1>`.
    pub bad_agent: usize,
    /// Where the bad agent sends the bad state; defaults to the highest state
    /// below it.
    pub regressed: Option<StateIx>,
}

fn default_regressed(landscape: &Landscape, bad: StateIx) -> Option<StateIx> {
    landscape
        .by_value()
        .into_iter()
        .rfind(|&y| landscape.value(y) < landscape.value(bad))
}

/// Independent predicate for the diversity group constraints.
///
/// Coverage is the weak reading: every state that improves on some input
/// outside `{bad, x*}` must be some agent's improving answer somewhere.
pub fn check_diversity_group(
    landscape: &Landscape,
    group: &AgentSet,
    bad_state: StateIx,
    bad_agent: usize,
) -> Result<(), GroupViolation> {
    let n = landscape.len();
    let opt = landscape.optimum();
    if n < 3 {
        return Err(GroupViolation::TooFewStates(n));
    }
    if group.len() < 2 {
        return Err(GroupViolation::TooSmall(group.len()));
    }
    if bad_state >= n {
        return Err(GroupViolation::UnknownState(bad_state));
    }
    if bad_state == opt {
        return Err(GroupViolation::BadStateIsOptimum);
    }
    if bad_agent >= group.len() {
        return Err(GroupViolation::UnknownAgentIndex(bad_agent));
    }
    for (i, a) in group.iter().enumerate() {
        for x in 0..n {
            let lowers = landscape.value(a.apply(x)) < landscape.value(x);
            if lowers && (i, x) != (bad_agent, bad_state) {
                return Err(GroupViolation::Ability {
                    agent: a.id.clone(),
                    state: x,
                });
            }
        }
    }
    let regressed = group.get(bad_agent).apply(bad_state);
    if landscape.value(regressed) >= landscape.value(bad_state) {
        return Err(GroupViolation::MissingRegression);
    }
    let inputs: Vec<StateIx> = (0..n).filter(|&x| x != bad_state && x != opt).collect();
    if let Some(&x) = inputs.iter().find(|&&x| fixed_by_all(group.agents(), x)) {
        return Err(GroupViolation::Unmoved(x));
    }
    let needed: BTreeSet<StateIx> = inputs
        .iter()
        .flat_map(|&x| landscape.improving_states(x))
        .collect();
    let answered: BTreeSet<StateIx> = group
        .iter()
        .flat_map(|a| {
            (0..n)
                .filter(|&x| x != opt)
                .map(|x| (x, a.apply(x)))
                .filter(|&(x, y)| landscape.value(y) > landscape.value(x))
                .map(|(_, y)| y)
                .collect::<Vec<_>>()
        })
        .collect();
    if let Some(&y) = needed.iter().find(|y| !answered.contains(y)) {
        return Err(GroupViolation::Uncovered(y));
    }
    if !group
        .iter()
        .enumerate()
        .any(|(i, a)| i != bad_agent && a.apply(regressed) == bad_state)
    {
        return Err(GroupViolation::NoReturnMove {
            regressed,
            bad: bad_state,
        });
    }
    Ok(())
}

/// Agents `d1..d<size>` spreading their answers over the improving states,
/// with a single regression at `(bad_agent, bad_state)`.
pub fn build_diversity_group(
    landscape: &Landscape,
    spec: &DiversityGroupSpec,
    size: usize,
) -> Result<AgentSet, StochasticError> {
    let n = landscape.len();
    let opt = landscape.optimum();
    let infeasible = |v| Err(StochasticError::Infeasible(v));
    if n < 3 {
        return infeasible(GroupViolation::TooFewStates(n));
    }
    if size < 2 {
        return infeasible(GroupViolation::TooSmall(size));
    }
    let x0 = spec.bad_state;
    if x0 >= n {
        return infeasible(GroupViolation::UnknownState(x0));
    }
    if x0 == opt {
        return infeasible(GroupViolation::BadStateIsOptimum);
    }
    if spec.bad_agent >= size {
        return infeasible(GroupViolation::UnknownAgentIndex(spec.bad_agent));
    }
    let regressed = match spec.regressed {
        Some(y) if y >= n => return infeasible(GroupViolation::UnknownState(y)),
        Some(y) if landscape.value(y) >= landscape.value(x0) => {
            return infeasible(GroupViolation::NotARegression {
                bad: x0,
                regressed: y,
            })
        }
        Some(y) => y,
        None => match default_regressed(landscape, x0) {
            Some(y) => y,
            None => return infeasible(GroupViolation::NoLowerState(x0)),
        },
    };

    let mut maps: Vec<Vec<StateIx>> = vec![(0..n).collect(); size];
    let mut covered: BTreeSet<StateIx> = BTreeSet::new();
    for x in landscape.by_value().into_iter().filter(|&x| x != opt) {
        let improving = landscape.improving_states(x);
        let mut answers: Vec<StateIx> = Vec::with_capacity(improving.len());
        if x == regressed {
            answers.push(x0);
        }
        let (fresh, seen): (Vec<StateIx>, Vec<StateIx>) = improving
            .iter()
            .copied()
            .filter(|y| !answers.contains(y))
            .partition(|y| !covered.contains(y));
        answers.extend(fresh);
        answers.extend(seen);
        // The bad agent answers last so the return move to x0 goes to someone else.
        let mut takers: Vec<usize> = (0..size).filter(|&i| i != spec.bad_agent).collect();
        if x != x0 {
            takers.push(spec.bad_agent);
        }
        for (k, &i) in takers.iter().enumerate() {
            let y = answers[k % answers.len()];
            maps[i][x] = y;
            covered.insert(y);
        }
        if x == x0 {
            maps[spec.bad_agent][x] = regressed;
        }
    }
    let group = AgentSet::new(
        maps.into_iter()
            .enumerate()
            .map(|(i, map)| Agent::new(format!("d{}", i + 1), map))
            .collect(),
    )?;
    check_diversity_group(landscape, &group, x0, spec.bad_agent)
        .map_err(StochasticError::Infeasible)?;
    Ok(group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    Uniform,
    /// Random integer weights drawn from the given seed.
    Skewed(u64),
}

impl FamilyChoice {
    pub fn build(self, landscape: &Landscape, group: &AgentSet) -> SelectionFamily {
        match self {
            FamilyChoice::Uniform => SelectionFamily::uniform(landscape, group),
            FamilyChoice::Skewed(seed) => SelectionFamily::skewed(landscape, group, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtdConfig {
    pub ability: AbilityGroupSpec,
    pub ability_size: usize,
    pub diversity: DiversityGroupSpec,
    pub diversity_size: usize,
    pub family: FamilyChoice,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub label: &'static str,
    pub group: AgentSet,
    pub exact: AbsorptionReport,
    /// Empty when no trials were run.
    pub monte_carlo: Vec<McEstimate>,
    /// Starts whose estimate misses the exact value by more than 3 standard errors.
    pub breaches: Vec<StateIx>,
    pub disagreement_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtdReport {
    pub ability: GroupResult,
    pub diversity: GroupResult,
    pub trials: usize,
    pub seed: u64,
}

impl AtdReport {
    pub fn ability_wins(&self) -> bool {
        self.ability.exact.average > self.diversity.exact.average
    }

    pub fn monte_carlo_agrees(&self) -> bool {
        self.ability.breaches.is_empty() && self.diversity.breaches.is_empty()
    }

    /// `group,state,exact,exact_f64,mc_mean,mc_std_err,within_3se`.
    pub fn to_csv(&self, landscape: &Landscape) -> String {
        let mut rows = Vec::new();
        for g in [&self.ability, &self.diversity] {
            for x in 0..landscape.len() {
                let exact = &g.exact.per_start[x];
                let (mean, se) = g
                    .monte_carlo
                    .get(x)
                    .map(|e| (format!("{:.6}", e.mean), format!("{:.6}", e.std_err)))
                    .unwrap_or_default();
                rows.push(vec![
                    g.label.to_string(),
                    landscape.label(x).to_string(),
                    fmt_rational(exact),
                    format!("{:.6}", to_f64(exact)),
                    mean,
                    se,
                    (!g.breaches.contains(&x)).to_string(),
                ]);
            }
        }
        to_csv(
            &[
                "group",
                "state",
                "exact",
                "exact_f64",
                "mc_mean",
                "mc_std_err",
                "within_3se",
            ],
            rows,
        )
    }
}

fn run_group(
    landscape: &Landscape,
    label: &'static str,
    group: AgentSet,
    family: &SelectionFamily,
    trials: usize,
    seed: u64,
) -> Result<GroupResult, StochasticError> {
    let exact = absorption_expected_value(landscape, &group, family)?;
    let samplers = samplers(family);
    let cap = default_stochastic_cap(landscape, &group);
    let mut monte_carlo = Vec::new();
    let mut breaches = Vec::new();
    let mut disagreement_paths = 0;
    if trials > 0 {
        for x in 0..landscape.len() {
            let purpose = format!("atd-{label}-{x}");
            let outcomes: Vec<(f64, bool)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = rng_from_seed(derive_seed(seed, &purpose, t as u64));
                    let w = walk(group.agents(), &samplers, x, cap, &mut rng, false);
                    (
                        to_f64(landscape.value(w.endpoint)),
                        w.reason == StopReason::Disagreement,
                    )
                })
                .collect();
            disagreement_paths += outcomes.iter().filter(|o| o.1).count();
            let values: Vec<f64> = outcomes.into_iter().map(|o| o.0).collect();
            let (mean, std_err) = mean_and_std_err(&values);
            let target = to_f64(&exact.per_start[x]);
            let within = if std_err == 0.0 {
                (mean - target).abs() <= 1e-12
            } else {
                (mean - target).abs() <= 3.0 * std_err
            };
            if !within {
                breaches.push(x);
            }
            monte_carlo.push(McEstimate { mean, std_err });
        }
    }
    Ok(GroupResult {
        label,
        group,
        exact,
        monte_carlo,
        breaches,
        disagreement_paths,
    })
}

/// Builds both groups, solves them exactly and checks Monte Carlo against the
/// exact values.
pub fn atd_experiment(
    landscape: &Landscape,
    config: &AtdConfig,
) -> Result<AtdReport, StochasticError> {
    let a = build_ability_group(landscape, &config.ability, config.ability_size)?;
    let d = build_diversity_group(landscape, &config.diversity, config.diversity_size)?;
    let fa = config.family.build(landscape, &a);
    let fd = config.family.build(landscape, &d);
    Ok(AtdReport {
        ability: run_group(landscape, "ability", a, &fa, config.trials, config.seed)?,
        diversity: run_group(landscape, "diversity", d, &fd, config.trials, config.seed)?,
        trials: config.trials,
        seed: config.seed,
    })
}

/// States `x1..x5` with `V(xk) = k/6`, plus `x*`.
pub fn demo_landscape() -> Landscape {
    let rows: Vec<(String, Rational)> = (1..=5)
        .map(|k| (format!("x{k}"), ratio(k, 6)))
        .chain(std::iter::once(("x*".to_string(), int(1))))
        .collect();
    crate::model::validate_landscape(crate::model::RawTable::new(rows)).expect("valid demo")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_landscape, RawTable};

    fn hp_landscape() -> Landscape {
        validate_landscape(RawTable::new([
            ("a", ratio(1, 4)),
            ("b", ratio(1, 2)),
            ("c", ratio(3, 4)),
            ("d", int(1)),
        ]))
        .unwrap()
    }

    #[test]
    fn ability_group_on_four_states() {
        let l = hp_landscape();
        let g = build_ability_group(&l, &AbilityGroupSpec::new([3]), 2).unwrap();
        assert_eq!(g.get(0).map, vec![1, 1, 3, 3]);
        assert_eq!(g.get(1).map, vec![0, 2, 2, 3]);
        let fam = SelectionFamily::uniform(&l, &g);
        let r = absorption_expected_value(&l, &g, &fam).unwrap();
        assert!(r.per_start.iter().all(|v| v.is_one()));
        assert!(r.average.is_one());
    }

    #[test]
    fn full_ck_set_gives_constant_agents() {
        let l = hp_landscape();
        let g = build_ability_group(&l, &AbilityGroupSpec::new(0..4), 3).unwrap();
        assert!(g.iter().all(|a| a.map == vec![3, 3, 3, 3]));
    }

    #[test]
    fn ability_group_errors() {
        let l = hp_landscape();
        assert_eq!(
            build_ability_group(&l, &AbilityGroupSpec::new([3]), 1),
            Err(StochasticError::Infeasible(GroupViolation::TooSmall(1)))
        );
        assert_eq!(
            build_ability_group(&l, &AbilityGroupSpec::new([2]), 2),
            Err(StochasticError::Infeasible(
                GroupViolation::OptimumOutsideCk
            ))
        );
        let heavy = AbilityGroupSpec {
            ck_set: [3].into(),
            assignment: Some([(0, 0), (1, 0), (2, 0)].into()),
        };
        // 3 deviations for agent a1 with |X| = 4 and size 2: 3·2 ≤ 4 + 2 holds.
        assert!(build_ability_group(&l, &heavy, 2).is_ok());
        let big = demo_landscape();
        let lopsided = AbilityGroupSpec {
            ck_set: [5].into(),
            assignment: Some((0..5).map(|x| (x, 0)).collect()),
        };
        assert!(matches!(
            build_ability_group(&big, &lopsided, 3),
            Err(StochasticError::Infeasible(
                GroupViolation::Overloaded { .. }
            ))
        ));
    }

    #[test]
    fn diversity_group_on_four_states() {
        let l = hp_landscape();
        let spec = DiversityGroupSpec {
            bad_state: 2,
            bad_agent: 0,
            regressed: Some(1),
        };
        let g = build_diversity_group(&l, &spec, 2).unwrap();
        assert_eq!(g.get(0).apply(2), 1);
        assert_eq!(
            g.iter().filter(|a| a.apply(1) == 2).count(),
            1,
            "return move b -> c exists"
        );
        let fam = SelectionFamily::uniform(&l, &g);
        let r = absorption_expected_value(&l, &g, &fam).unwrap();
        assert!(r.average < int(1));
        for dist in &r.returned {
            assert!(sum(dist).is_one());
        }
    }

    #[test]
    fn diversity_group_errors() {
        let l = hp_landscape();
        let at_opt = DiversityGroupSpec {
            bad_state: 3,
            bad_agent: 0,
            regressed: None,
        };
        assert_eq!(
            build_diversity_group(&l, &at_opt, 2),
            Err(StochasticError::Infeasible(
                GroupViolation::BadStateIsOptimum
            ))
        );
        let lowest = DiversityGroupSpec {
            bad_state: 0,
            bad_agent: 0,
            regressed: None,
        };
        assert_eq!(
            build_diversity_group(&l, &lowest, 2),
            Err(StochasticError::Infeasible(GroupViolation::NoLowerState(0)))
        );
        let two = validate_landscape(RawTable::new([("x", int(0)), ("y", int(1))])).unwrap();
        let spec = DiversityGroupSpec {
            bad_state: 0,
            bad_agent: 0,
            regressed: None,
        };
        assert_eq!(
            build_diversity_group(&two, &spec, 2),
            Err(StochasticError::Infeasible(GroupViolation::TooFewStates(2)))
        );
    }

    #[test]
    fn constant_agent_solves_everything() {
        let l = hp_landscape();
        let g = AgentSet::new(vec![Agent::constant("c", 4, 3)]).unwrap();
        let fam = SelectionFamily::uniform(&l, &g);
        let r = absorption_expected_value(&l, &g, &fam).unwrap();
        assert!(r.per_start.iter().all(|v| v.is_one()));
    }

    #[test]
    fn single_agent_walk_applies_its_closure() {
        let l = hp_landscape();
        let a = Agent::new("up", vec![1, 2, 3, 3]);
        let g = AgentSet::new(vec![a]).unwrap();
        let fam = SelectionFamily::uniform(&l, &g);
        for x in 0..4 {
            let t = stochastic_deliberate(&l, &g, &fam, x, 9).unwrap();
            assert_eq!(t.endpoint, 3);
            assert_eq!(t.stop_reason, StopReason::CommonFixedPoint);
            assert_eq!(t.steps.len(), 3 - x);
        }
    }

    #[test]
    fn same_agent_undoing_itself_is_not_a_disagreement() {
        // One agent swaps a and b forever; the exact chain has no exit.
        let l = hp_landscape();
        let g = AgentSet::new(vec![Agent::new("swap", vec![1, 0, 2, 3])]).unwrap();
        let fam = SelectionFamily::uniform(&l, &g);
        assert_eq!(
            absorption_expected_value(&l, &g, &fam),
            Err(StochasticError::NotAbsorbing { start: 0 })
        );
        let t = stochastic_deliberate(&l, &g, &fam, 0, 1).unwrap();
        assert_eq!(t.stop_reason, StopReason::StepCap);
    }

    #[test]
    fn two_agents_undoing_each_other_disagree() {
        let l = hp_landscape();
        let g = AgentSet::new(vec![
            Agent::new("up", vec![1, 1, 2, 3]),
            Agent::new("down", vec![0, 0, 2, 3]),
        ])
        .unwrap();
        let fam = SelectionFamily::uniform(&l, &g);
        let r = absorption_expected_value(&l, &g, &fam).unwrap();
        // From a: up moves to b, then only down moves b, back to a: disagreement, return a.
        assert_eq!(r.returned[0][0], int(1));
        // From b: down to a, then up returns to b: disagreement, return b.
        assert_eq!(r.returned[1][1], int(1));
        let t = stochastic_deliberate(&l, &g, &fam, 0, 5).unwrap();
        assert_eq!(t.stop_reason, StopReason::Disagreement);
        assert_eq!(t.endpoint, 0);
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn family_validation() {
        let l = hp_landscape();
        let g = build_ability_group(&l, &AbilityGroupSpec::new([3]), 2).unwrap();
        let mut dists = vec![vec![ratio(1, 2), ratio(1, 2)]; 4];
        dists[2] = vec![int(1), int(0)];
        assert!(matches!(
            SelectionFamily::from_table(&l, &g, dists),
            Err(StochasticError::Family { state: 2, .. })
        ));
        let skewed = SelectionFamily::skewed(&l, &g, 3);
        skewed.validate(&l, &g).unwrap();
    }

    #[test]
    fn small_experiment_agrees_with_exact() {
        let l = hp_landscape();
        let config = AtdConfig {
            ability: AbilityGroupSpec::new([3]),
            ability_size: 2,
            diversity: DiversityGroupSpec {
                bad_state: 2,
                bad_agent: 0,
                regressed: None,
            },
            diversity_size: 2,
            family: FamilyChoice::Uniform,
            trials: 2000,
            seed: 7,
        };
        let r = atd_experiment(&l, &config).unwrap();
        assert!(r.ability_wins());
        assert!(r.monte_carlo_agrees(), "{r:?}");
        assert!(r.diversity.disagreement_paths > 0);
        let csv = r.to_csv(&l);
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn trials_zero_is_exact_only() {
        let l = demo_landscape();
        let config = AtdConfig {
            ability: AbilityGroupSpec::new([4, 5]),
            ability_size: 3,
            diversity: DiversityGroupSpec {
                bad_state: 3,
                bad_agent: 0,
                regressed: None,
            },
            diversity_size: 3,
            family: FamilyChoice::Skewed(1),
            trials: 0,
            seed: 0,
        };
        let r = atd_experiment(&l, &config).unwrap();
        assert!(r.ability.monte_carlo.is_empty());
        assert!(r.ability.exact.average.is_one());
        assert!(r.diversity.exact.average < int(1));
    }
}
