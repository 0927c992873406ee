//! Random small instances with one assumption removed.
//!
//! Each instance satisfies every assumption except the dropped one, and the
//! fuzzer looks for an instance where the "group beats the best agent"
//! conclusion fails in the way the dropped assumption allows. With nothing
//! dropped the same search is a control: it must never find anything.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::deliberation::{group_over, verify_basic_theorem, SchedulerPolicy};
use crate::instance::{format_instance, Instance};
use crate::model::{
    check_assumptions, expected_performance, validate_landscape, Agent, AgentSet, Assumption,
    Landscape, RawTable, StateIx,
};
use crate::oracle::{
    best_case_value, endpoint_sets, enumerate_agents, exhaustive_endpoints, nonempty_subsets,
    solves_every_order, worst_case_value, AgentFilter, DEFAULT_BOUND,
};
use crate::rational::{fmt_rational, int, ratio, Rational};
use crate::seeding::{derived_rng, Rng};

const MIN_STATES: usize = 3;
const MAX_STATES: usize = 5;
const MIN_AGENTS: usize = 2;
const MAX_AGENTS: usize = 4;
const VALUE_DEN: i64 = 12;
const ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FuzzDrop {
    /// Control: all assumptions kept.
    Nothing,
    Injectivity,
    UniqueBest,
    /// Non-idempotent agents whose clones keep improving on each other.
    CloneIdempotenceAlternative,
    /// Best agents picked without repetition.
    NoRepetitionSelection,
}

impl FuzzDrop {
    pub const ALL: [FuzzDrop; 5] = [
        FuzzDrop::Nothing,
        FuzzDrop::Injectivity,
        FuzzDrop::UniqueBest,
        FuzzDrop::CloneIdempotenceAlternative,
        FuzzDrop::NoRepetitionSelection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuzzDrop::Nothing => "none",
            FuzzDrop::Injectivity => "injectivity",
            FuzzDrop::UniqueBest => "unique-best",
            FuzzDrop::CloneIdempotenceAlternative => "clone-idempotence-alternative",
            FuzzDrop::NoRepetitionSelection => "no-repetition-selection",
        }
    }

    /// The model assumption the generated instances violate, if any.
    pub fn assumption(self) -> Option<Assumption> {
        match self {
            FuzzDrop::Injectivity => Some(Assumption::Injectivity),
            FuzzDrop::UniqueBest => Some(Assumption::UniqueBest),
            FuzzDrop::CloneIdempotenceAlternative => Some(Assumption::Idempotence),
            FuzzDrop::Nothing | FuzzDrop::NoRepetitionSelection => None,
        }
    }
}

impl fmt::Display for FuzzDrop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FuzzDrop {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FuzzDrop::ALL
            .into_iter()
            .find(|d| d.name() == s || (s == "nothing" && *d == FuzzDrop::Nothing))
            .ok_or_else(|| {
                let names: Vec<&str> = FuzzDrop::ALL.iter().map(|d| d.name()).collect();
                format!(
                    "unknown assumption `{s}` (expected one of: {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub index: usize,
    pub instance: Instance,
    pub claim: String,
}

impl Counterexample {
    pub fn table(&self) -> String {
        format_instance(&self.instance.landscape, self.instance.agents.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzReport {
    pub drop: FuzzDrop,
    pub seed: u64,
    pub budget: usize,
    /// Instances generated and checked.
    pub tried: usize,
    /// Budget slots where no valid instance was found.
    pub rejected: usize,
    /// Checked instances per state count.
    pub by_size: BTreeMap<usize, usize>,
    pub counterexamples: Vec<Counterexample>,
}

impl FuzzReport {
    pub fn found(&self) -> Option<&Counterexample> {
        self.counterexamples.first()
    }
}

/// Searches up to `budget` instances. Drop modes stop at the first find; the
/// control runs the whole budget and collects every violation.
pub fn fuzz_counterexample(drop: FuzzDrop, budget: usize, seed: u64) -> FuzzReport {
    let mut report = FuzzReport {
        drop,
        seed,
        budget,
        tried: 0,
        rejected: 0,
        by_size: BTreeMap::new(),
        counterexamples: Vec::new(),
    };
    for index in 0..budget {
        let states = state_count(index, budget);
        let mut rng = derived_rng(seed, "fuzz", index as u64);
        let Some(instance) = (0..ATTEMPTS).find_map(|_| generate(drop, states, &mut rng)) else {
            report.rejected += 1;
            continue;
        };
        report.tried += 1;
        *report.by_size.entry(states).or_default() += 1;
        if let Some(claim) = thesis_failure(drop, &instance) {
            report.counterexamples.push(Counterexample {
                index,
                instance,
                claim,
            });
            if drop != FuzzDrop::Nothing {
                break;
            }
        }
    }
    report
}

/// Smaller landscapes first: the budget is split evenly over 3, 4 and 5 states.
fn state_count(index: usize, budget: usize) -> usize {
    let span = MAX_STATES - MIN_STATES + 1;
    let chunk = budget.div_ceil(span).max(1);
    MIN_STATES + (index / chunk).min(span - 1)
}

fn random_landscape(states: usize, merge: bool, rng: &mut Rng) -> Landscape {
    let mut numerators: Vec<i64> = (0..VALUE_DEN).collect();
    numerators.shuffle(rng);
    let mut values: Vec<Rational> = numerators[..states - 1]
        .iter()
        .map(|&k| ratio(k, VALUE_DEN))
        .collect();
    if merge {
        values[1] = values[0].clone();
    }
    values.push(int(1));
    values.shuffle(rng);
    let rows: Vec<(String, Rational)> = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (format!("s{i}"), v))
        .collect();
    validate_landscape(RawTable::new(rows)).expect("generated values are valid")
}

fn relabel(agents: Vec<Agent>) -> AgentSet {
    AgentSet::new(
        agents
            .into_iter()
            .enumerate()
            .map(|(i, a)| Agent::new(format!("phi_{}", i + 1), a.map))
            .collect(),
    )
    .expect("distinct maps, fresh ids")
}

fn generate(drop: FuzzDrop, states: usize, rng: &mut Rng) -> Option<Instance> {
    let landscape = random_landscape(states, drop == FuzzDrop::Injectivity, rng);
    let filter = AgentFilter {
        ability: true,
        idempotent: drop != FuzzDrop::CloneIdempotenceAlternative,
        fixes_optimum: true,
        imperfect: true,
    };
    let pool = enumerate_agents(&landscape, filter, DEFAULT_BOUND).ok()?;
    let k = rng.gen_range(MIN_AGENTS..=MAX_AGENTS);
    let chosen: Vec<Agent> = if drop == FuzzDrop::UniqueBest {
        tied_selection(&landscape, &pool, k, rng)?
    } else {
        if pool.len() < k {
            return None;
        }
        pool.choose_multiple(rng, k).cloned().collect()
    };
    let agents = relabel(chosen);
    let report = check_assumptions(&landscape, &agents);
    let ok = match drop.assumption() {
        Some(dropped) => report.all_hold_except(&[dropped]) && !report.holds(dropped),
        None => report.all_hold(),
    };
    ok.then_some(Instance {
        landscape,
        agents: Some(agents),
    })
}

/// Two agents tied at the top plus agents with strictly lower performance.
fn tied_selection(
    landscape: &Landscape,
    pool: &[Agent],
    k: usize,
    rng: &mut Rng,
) -> Option<Vec<Agent>> {
    let mut by_value: BTreeMap<Rational, Vec<&Agent>> = BTreeMap::new();
    for a in pool {
        by_value
            .entry(performance(landscape, a))
            .or_default()
            .push(a);
    }
    let tied: Vec<(&Rational, &Vec<&Agent>)> = by_value
        .iter()
        .filter(|(_, group)| group.len() >= 2)
        .collect();
    let (top, group) = tied.choose(rng)?;
    let mut chosen: Vec<Agent> = group
        .choose_multiple(rng, 2)
        .map(|a| (*a).clone())
        .collect();
    let lower: Vec<&Agent> = pool
        .iter()
        .filter(|a| performance(landscape, a) < **top)
        .collect();
    let extra = (k - 2).min(lower.len());
    chosen.extend(lower.choose_multiple(rng, extra).map(|a| (*a).clone()));
    chosen.shuffle(rng);
    Some(chosen)
}

fn performance(landscape: &Landscape, agent: &Agent) -> Rational {
    landscape.average_value(&agent.map)
}

/// Iterates `agent` until it stops changing the state.
fn iterate_closure(agent: &Agent) -> Vec<StateIx> {
    (0..agent.map.len())
        .map(|x| {
            let mut cur = x;
            for _ in 0..agent.map.len() {
                let next = agent.apply(cur);
                if next == cur {
                    break;
                }
                cur = next;
            }
            cur
        })
        .collect()
}

/// Best single performance (first in pool order on ties) and the tie set.
fn best_agents(landscape: &Landscape, agents: &AgentSet) -> (Rational, Vec<usize>) {
    let values: Vec<Rational> = agents.iter().map(|a| performance(landscape, a)).collect();
    let best = values.iter().max().expect("non-empty").clone();
    let ties = (0..values.len()).filter(|&i| values[i] == best).collect();
    (best, ties)
}

fn subset_agents(agents: &AgentSet, idx: &[usize]) -> Vec<Agent> {
    idx.iter().map(|&i| agents.get(i).clone()).collect()
}

/// Returns a description of the failed claim, or `None` when the group still
/// beats the best agent on this instance.
fn thesis_failure(drop: FuzzDrop, instance: &Instance) -> Option<String> {
    let landscape = &instance.landscape;
    let agents = instance.agents.as_ref().expect("generated with agents");
    let (best_value, ties) = best_agents(landscape, agents);
    let sets_of = |idx: &[usize]| {
        endpoint_sets(landscape, &subset_agents(agents, idx), DEFAULT_BOUND)
            .expect("fuzz instances are within the oracle bound")
    };
    match drop {
        FuzzDrop::Nothing => control_failure(landscape, agents, &best_value),
        FuzzDrop::Injectivity => {
            let beaten = nonempty_subsets(agents.len())
                .iter()
                .any(|s| best_case_value(landscape, &sets_of(s)) > best_value);
            (!beaten).then(|| {
                format!(
                    "no group beats the best agent's {} under any order",
                    fmt_rational(&best_value)
                )
            })
        }
        FuzzDrop::UniqueBest => {
            let value = worst_case_value(landscape, &sets_of(&ties));
            value.eq(&int(1)).then(|| {
                let ids: Vec<String> = ties.iter().map(|&i| agents.get(i).id.clone()).collect();
                format!(
                    "the tied best agents {{{}}} already solve every start",
                    ids.join(", ")
                )
            })
        }
        FuzzDrop::CloneIdempotenceAlternative => {
            let best = agents.get(ties[0]);
            let closure = iterate_closure(best);
            let solved = landscape.average_value(&closure) == int(1);
            (!best.is_idempotent() && solved).then(|| {
                format!(
                    "clones of {} that build on each other solve every start",
                    best.id
                )
            })
        }
        FuzzDrop::NoRepetitionSelection => {
            let ranked = ranked_agents(landscape, agents);
            let never = (1..=agents.len()).all(|n1| {
                let top = worst_case_value(landscape, &sets_of(&ranked[..n1]));
                nonempty_subsets(agents.len())
                    .iter()
                    .filter(|s| s.len() == n1)
                    .all(|s| best_case_value(landscape, &sets_of(s)) <= top)
            });
            never.then(|| {
                "for every group size the top distinct agents match or beat every other group"
                    .to_string()
            })
        }
    }
}

/// Agent indices by descending performance, pool order on ties.
fn ranked_agents(landscape: &Landscape, agents: &AgentSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..agents.len()).collect();
    idx.sort_by(|&a, &b| {
        performance(landscape, agents.get(b)).cmp(&performance(landscape, agents.get(a)))
    });
    idx
}

fn control_failure(landscape: &Landscape, agents: &AgentSet, best: &Rational) -> Option<String> {
    if *best >= int(1) {
        return Some("the best agent already solves every start".into());
    }
    let sets = endpoint_sets(landscape, agents.agents(), DEFAULT_BOUND).expect("within bound");
    if !solves_every_order(landscape, &sets) {
        return Some("some order of the full group misses the optimum".into());
    }
    let policy = SchedulerPolicy::default();
    let engine = match group_over(landscape, agents.agents(), policy) {
        Ok(outcome) => outcome,
        Err(e) => return Some(format!("engine error: {e}")),
    };
    for (x, &y) in engine.endpoints.iter().enumerate() {
        if !sets[x].contains(&y) {
            return Some(format!(
                "engine endpoint {y} from {x} is not an oracle endpoint"
            ));
        }
    }
    match verify_basic_theorem(landscape, agents, policy) {
        Ok(v) if v.subset_value > *best => None,
        Ok(v) => Some(format!(
            "returned subset scores {} against {}",
            fmt_rational(&v.subset_value),
            fmt_rational(best)
        )),
        Err(e) => Some(format!("theorem refused: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RevalidationError {
    #[error("instance {index}: assumptions other than the dropped one fail")]
    OtherAssumptionFails { index: usize },
    #[error("instance {index}: the dropped assumption actually holds")]
    DroppedHolds { index: usize },
    #[error("instance {index}: the claimed failure does not reproduce")]
    ClaimDoesNotHold { index: usize },
    #[error("instance {index}: exceeds the oracle bound")]
    TooLarge { index: usize },
}

/// Re-checks every counterexample from scratch, using the oracle only.
pub fn revalidate(report: &FuzzReport) -> Result<(), RevalidationError> {
    for c in &report.counterexamples {
        let index = c.index;
        let l = &c.instance.landscape;
        let agents = c
            .instance
            .agents
            .as_ref()
            .expect("counterexamples carry agents");
        let assumptions = check_assumptions(l, agents);
        match report.drop.assumption() {
            Some(a) => {
                if !assumptions.all_hold_except(&[a]) {
                    return Err(RevalidationError::OtherAssumptionFails { index });
                }
                if assumptions.holds(a) {
                    return Err(RevalidationError::DroppedHolds { index });
                }
            }
            None if !assumptions.all_hold() => {
                return Err(RevalidationError::OtherAssumptionFails { index })
            }
            None => {}
        }
        if l.len() > DEFAULT_BOUND {
            return Err(RevalidationError::TooLarge { index });
        }
        let reproduced = match report.drop {
            FuzzDrop::Nothing => control_failure(l, agents, &best_agents(l, agents).0).is_some(),
            drop => direct_claim(drop, l, agents),
        };
        if !reproduced {
            return Err(RevalidationError::ClaimDoesNotHold { index });
        }
    }
    Ok(())
}

/// `Σ ν(x) · extreme V over every order's endpoint`, straight from the definition.
fn direct_value(l: &Landscape, group: &[Agent], best: bool) -> Rational {
    (0..l.len()).fold(Rational::from_integer(0.into()), |acc, x| {
        let ends = exhaustive_endpoints(l, group, x, DEFAULT_BOUND).expect("bounded");
        let pick = ends.iter().map(|&y| l.value(y));
        let v = if best { pick.max() } else { pick.min() }
            .expect("non-empty")
            .clone();
        acc + v * l.start_prob(x)
    })
}

fn direct_claim(drop: FuzzDrop, l: &Landscape, agents: &AgentSet) -> bool {
    let perf: Vec<Rational> = agents
        .iter()
        .map(|a| expected_performance(l, a).expect("total agents"))
        .collect();
    let best = perf.iter().max().expect("non-empty").clone();
    let top: Vec<Agent> = agents
        .iter()
        .zip(&perf)
        .filter(|(_, p)| **p == best)
        .map(|(a, _)| a.clone())
        .collect();
    let subsets = nonempty_subsets(agents.len());
    match drop {
        FuzzDrop::Injectivity => subsets
            .iter()
            .all(|s| direct_value(l, &subset_agents(agents, s), true) <= best),
        FuzzDrop::UniqueBest => top.len() >= 2 && direct_value(l, &top, false) == int(1),
        FuzzDrop::CloneIdempotenceAlternative => {
            let b = &top[0];
            let mut map = b.map.clone();
            for _ in 0..l.len() {
                map = map.iter().map(|&y| b.apply(y)).collect();
            }
            !b.is_idempotent() && l.average_value(&map) == int(1)
        }
        FuzzDrop::NoRepetitionSelection => {
            let mut order: Vec<usize> = (0..agents.len()).collect();
            order.sort_by(|&a, &b| perf[b].cmp(&perf[a]));
            (1..=agents.len()).all(|n1| {
                let top = direct_value(l, &subset_agents(agents, &order[..n1]), false);
                subsets
                    .iter()
                    .filter(|s| s.len() == n1)
                    .all(|s| direct_value(l, &subset_agents(agents, s), true) <= top)
            })
        }
        FuzzDrop::Nothing => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in FuzzDrop::ALL {
            assert_eq!(d.name().parse::<FuzzDrop>().unwrap(), d);
        }
        assert!("bogus".parse::<FuzzDrop>().is_err());
    }

    #[test]
    fn sizes_go_small_to_large() {
        let sizes: Vec<usize> = (0..9).map(|i| state_count(i, 9)).collect();
        assert_eq!(sizes, vec![3, 3, 3, 4, 4, 4, 5, 5, 5]);
        assert_eq!(state_count(0, 1), 3);
    }

    #[test]
    fn finds_each_counterexample_and_revalidates() {
        for drop in [
            FuzzDrop::Injectivity,
            FuzzDrop::UniqueBest,
            FuzzDrop::CloneIdempotenceAlternative,
            FuzzDrop::NoRepetitionSelection,
        ] {
            let report = fuzz_counterexample(drop, 300, 17);
            assert!(report.found().is_some(), "{drop}: {report:?}");
            revalidate(&report).unwrap();
        }
    }

    #[test]
    fn control_finds_nothing() {
        let report = fuzz_counterexample(FuzzDrop::Nothing, 60, 3);
        assert!(
            report.counterexamples.is_empty(),
            "{:?}",
            report.counterexamples
        );
        assert!(report.tried > 0);
    }

    #[test]
    fn fuzzing_is_deterministic() {
        let a = fuzz_counterexample(FuzzDrop::UniqueBest, 50, 9);
        let b = fuzz_counterexample(FuzzDrop::UniqueBest, 50, 9);
        assert_eq!(a, b);
    }
}
