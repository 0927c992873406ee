//! Landscapes, agents and the assumption predicates.
//!
//! A [`Landscape`] is a finite state set with an exact value table and a
//! full-support start distribution. An [`Agent`] is a total self-map of the
//! states. States are addressed by their index into the landscape's label list.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{fmt_rational, in_unit_interval, sum, Rational};

/// Index of a state inside its [`Landscape`].
pub type StateIx = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("the value table is empty")]
    EmptyTable,
    #[error("state `{0}` appears more than once")]
    DuplicateState(String),
    #[error("value of state `{state}` is {value}, outside [0, 1]")]
    ValueOutOfRange { state: String, value: String },
    #[error("no state has value 1")]
    NoOptimum,
    #[error("more than one state has value 1: {}", .0.join(", "))]
    MultipleOptima(Vec<String>),
    #[error("start distribution has {got} entries for {expected} states")]
    StartDistLength { expected: usize, got: usize },
    #[error("start probability of state `{0}` is not strictly positive")]
    NonPositiveStart(String),
    #[error("start distribution sums to {0}, not 1")]
    StartNotNormalized(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("agent `{agent}` is defined on {got} states, landscape has {expected}")]
    AgentLength {
        agent: String,
        expected: usize,
        got: usize,
    },
    #[error("agent `{agent}` maps state #{from} to #{to}, which is not a state")]
    AgentTargetOutOfRange {
        agent: String,
        from: usize,
        to: usize,
    },
    #[error("an agent set must not be empty")]
    EmptyAgentSet,
    #[error("agent id `{0}` appears more than once")]
    DuplicateAgent(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
}

/// Unvalidated `state, value` rows plus an optional start distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub rows: Vec<(String, Rational)>,
    /// Start probabilities in row order. `None` means uniform.
    pub start_dist: Option<Vec<Rational>>,
}

impl RawTable {
    pub fn new<S: Into<String>>(rows: impl IntoIterator<Item = (S, Rational)>) -> Self {
        RawTable {
            rows: rows.into_iter().map(|(s, v)| (s.into(), v)).collect(),
            start_dist: None,
        }
    }

    pub fn with_start_dist(mut self, dist: Vec<Rational>) -> Self {
        self.start_dist = Some(dist);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Landscape {
    states: Vec<String>,
    values: Vec<Rational>,
    optimum: StateIx,
    start_dist: Vec<Rational>,
    injective: bool,
    index: HashMap<String, StateIx>,
}

/// Validates a raw value table into a [`Landscape`].
pub fn validate_landscape(raw: RawTable) -> Result<Landscape, ModelError> {
    if raw.rows.is_empty() {
        return Err(ModelError::EmptyTable);
    }
    let mut index = HashMap::with_capacity(raw.rows.len());
    for (i, (label, _)) in raw.rows.iter().enumerate() {
        if index.insert(label.clone(), i).is_some() {
            return Err(ModelError::DuplicateState(label.clone()));
        }
    }
    for (label, value) in &raw.rows {
        if !in_unit_interval(value) {
            return Err(ModelError::ValueOutOfRange {
                state: label.clone(),
                value: fmt_rational(value),
            });
        }
    }
    let optima: Vec<StateIx> = (0..raw.rows.len())
        .filter(|&i| raw.rows[i].1.is_one())
        .collect();
    let optimum = match optima.as_slice() {
        [] => return Err(ModelError::NoOptimum),
        [only] => *only,
        many => {
            return Err(ModelError::MultipleOptima(
                many.iter().map(|&i| raw.rows[i].0.clone()).collect(),
            ))
        }
    };
    let n = raw.rows.len();
    let start_dist = match raw.start_dist {
        None => vec![Rational::new(1.into(), (n as i64).into()); n],
        Some(dist) => {
            if dist.len() != n {
                return Err(ModelError::StartDistLength {
                    expected: n,
                    got: dist.len(),
                });
            }
            if let Some(i) = dist.iter().position(|p| !p.is_positive()) {
                return Err(ModelError::NonPositiveStart(raw.rows[i].0.clone()));
            }
            let total = sum(&dist);
            if !total.is_one() {
                return Err(ModelError::StartNotNormalized(fmt_rational(&total)));
            }
            dist
        }
    };
    let (states, values): (Vec<String>, Vec<Rational>) = raw.rows.into_iter().unzip();
    let distinct: HashSet<&Rational> = values.iter().collect();
    let injective = distinct.len() == values.len();
    Ok(Landscape {
        states,
        values,
        optimum,
        start_dist,
        injective,
        index,
    })
}

impl Landscape {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn label(&self, x: StateIx) -> &str {
        &self.states[x]
    }

    pub fn index_of(&self, label: &str) -> Option<StateIx> {
        self.index.get(label).copied()
    }

    pub fn require_state(&self, label: &str) -> Result<StateIx, ModelError> {
        self.index_of(label)
            .ok_or_else(|| ModelError::UnknownState(label.to_string()))
    }

    pub fn value(&self, x: StateIx) -> &Rational {
        &self.values[x]
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    pub fn optimum(&self) -> StateIx {
        self.optimum
    }

    pub fn start_prob(&self, x: StateIx) -> &Rational {
        &self.start_dist[x]
    }

    pub fn start_dist(&self) -> &[Rational] {
        &self.start_dist
    }

    /// True iff all values are pairwise distinct.
    pub fn is_injective(&self) -> bool {
        self.injective
    }

    /// State indices sorted by ascending value (ties keep table order).
    pub fn by_value(&self) -> Vec<StateIx> {
        let mut order: Vec<StateIx> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.values[a].cmp(&self.values[b]));
        order
    }

    /// States with strictly larger value than `x`, ascending by value.
    pub fn improving_states(&self, x: StateIx) -> Vec<StateIx> {
        self.by_value()
            .into_iter()
            .filter(|&y| self.values[y] > self.values[x])
            .collect()
    }

    /// Expected value of a state table under the start distribution.
    pub fn average_value(&self, endpoints: &[StateIx]) -> Rational {
        endpoints
            .iter()
            .enumerate()
            .fold(Rational::zero(), |acc, (x, &y)| {
                acc + &self.values[y] * &self.start_dist[x]
            })
    }

    pub fn min_value(&self) -> &Rational {
        self.values.iter().min().expect("landscape is non-empty")
    }

    /// Checks that `agent` is total over this landscape.
    pub fn check_agent(&self, agent: &Agent) -> Result<(), ModelError> {
        if agent.map.len() != self.len() {
            return Err(ModelError::AgentLength {
                agent: agent.id.clone(),
                expected: self.len(),
                got: agent.map.len(),
            });
        }
        if let Some((from, &to)) = agent.map.iter().enumerate().find(|(_, &y)| y >= self.len()) {
            return Err(ModelError::AgentTargetOutOfRange {
                agent: agent.id.clone(),
                from,
                to,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub map: Vec<StateIx>,
}

impl Agent {
    pub fn new(id: impl Into<String>, map: Vec<StateIx>) -> Self {
        Agent { id: id.into(), map }
    }

    /// Builds an agent from target labels listed in landscape state order.
    pub fn from_labels(
        landscape: &Landscape,
        id: impl Into<String>,
        targets: &[&str],
    ) -> Result<Self, ModelError> {
        let id = id.into();
        if targets.len() != landscape.len() {
            return Err(ModelError::AgentLength {
                agent: id,
                expected: landscape.len(),
                got: targets.len(),
            });
        }
        let map = targets
            .iter()
            .map(|t| landscape.require_state(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Agent { id, map })
    }

    pub fn identity(id: impl Into<String>, n: usize) -> Self {
        Agent::new(id, (0..n).collect())
    }

    pub fn constant(id: impl Into<String>, n: usize, target: StateIx) -> Self {
        Agent::new(id, vec![target; n])
    }

    #[inline]
    pub fn apply(&self, x: StateIx) -> StateIx {
        self.map[x]
    }

    /// First state where `φ(φ(x)) ≠ φ(x)`, if any.
    pub fn idempotence_violation(&self) -> Option<StateIx> {
        (0..self.map.len()).find(|&x| self.map[self.map[x]] != self.map[x])
    }

    pub fn is_idempotent(&self) -> bool {
        self.idempotence_violation().is_none()
    }
}

/// Non-empty ordered list of agents with distinct ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSet {
    agents: Vec<Agent>,
}

impl AgentSet {
    pub fn new(agents: Vec<Agent>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::EmptyAgentSet);
        }
        let mut seen = HashSet::new();
        for a in &agents {
            if !seen.insert(a.id.as_str()) {
                return Err(ModelError::DuplicateAgent(a.id.clone()));
            }
        }
        Ok(AgentSet { agents })
    }

    /// Like [`AgentSet::new`] but also checks totality against `landscape`.
    pub fn for_landscape(landscape: &Landscape, agents: Vec<Agent>) -> Result<Self, ModelError> {
        for a in &agents {
            landscape.check_agent(a)?;
        }
        AgentSet::new(agents)
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Agent> {
        self.agents.iter()
    }

    pub fn get(&self, i: usize) -> &Agent {
        &self.agents[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn by_id(&self, id: &str) -> Result<&Agent, ModelError> {
        self.position(id)
            .map(|i| &self.agents[i])
            .ok_or_else(|| ModelError::UnknownAgent(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    /// The agents at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<AgentSet, ModelError> {
        AgentSet::new(indices.iter().map(|&i| self.agents[i].clone()).collect())
    }

    /// The agents whose ids are in `ids`, kept in pool order.
    pub fn restrict(&self, ids: &[String]) -> Result<AgentSet, ModelError> {
        for id in ids {
            self.by_id(id)?;
        }
        AgentSet::new(
            self.agents
                .iter()
                .filter(|a| ids.contains(&a.id))
                .cloned()
                .collect(),
        )
    }
}

impl<'a> IntoIterator for &'a AgentSet {
    type Item = &'a Agent;
    type IntoIter = std::slice::Iter<'a, Agent>;
    fn into_iter(self) -> Self::IntoIter {
        self.agents.iter()
    }
}

/// `Σ_x V(φ(x)) ν(x)`.
pub fn expected_performance(landscape: &Landscape, agent: &Agent) -> Result<Rational, ModelError> {
    landscape.check_agent(agent)?;
    Ok(landscape.average_value(&agent.map))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    UniqueSolution,
    Injectivity,
    Ability,
    Idempotence,
    Difficulty,
    Diversity,
    UniqueBest,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::UniqueSolution,
        Assumption::Injectivity,
        Assumption::Ability,
        Assumption::Idempotence,
        Assumption::Difficulty,
        Assumption::Diversity,
        Assumption::UniqueBest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Assumption::UniqueSolution => "unique-solution",
            Assumption::Injectivity => "injectivity",
            Assumption::Ability => "ability",
            Assumption::Idempotence => "idempotence",
            Assumption::Difficulty => "difficulty",
            Assumption::Diversity => "diversity",
            Assumption::UniqueBest => "unique-best",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Concrete evidence that an assumption is violated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    /// The states carrying value 1.
    OptimumCount { states: Vec<StateIx> },
    /// Two distinct states with the same value.
    EqualValues { first: StateIx, second: StateIx },
    /// `V(φ(x)) < V(x)`.
    Degrades { agent: String, state: StateIx },
    /// `φ(φ(x)) ≠ φ(x)`.
    NotIdempotent { agent: String, state: StateIx },
    /// The agent returns the optimum from every state.
    AlwaysSolves { agent: String },
    /// A non-optimal state that every agent leaves in place.
    StuckState { state: StateIx },
    /// Agents sharing the maximal expected performance.
    Tie { agents: Vec<String> },
}

impl Witness {
    /// Re-derives the violation from scratch; true iff it is genuine.
    pub fn recheck(&self, landscape: &Landscape, agents: &AgentSet) -> bool {
        match self {
            Witness::OptimumCount { states } => {
                states.len() != 1 && states.iter().all(|&x| landscape.value(x).is_one())
            }
            Witness::EqualValues { first, second } => {
                first != second && landscape.value(*first) == landscape.value(*second)
            }
            Witness::Degrades { agent, state } => agents
                .by_id(agent)
                .map(|a| landscape.value(a.apply(*state)) < landscape.value(*state))
                .unwrap_or(false),
            Witness::NotIdempotent { agent, state } => agents
                .by_id(agent)
                .map(|a| a.apply(a.apply(*state)) != a.apply(*state))
                .unwrap_or(false),
            Witness::AlwaysSolves { agent } => agents
                .by_id(agent)
                .map(|a| a.map.iter().all(|&y| y == landscape.optimum()))
                .unwrap_or(false),
            Witness::StuckState { state } => {
                *state != landscape.optimum() && agents.iter().all(|a| a.apply(*state) == *state)
            }
            Witness::Tie { agents: tied } => {
                if tied.len() < 2 {
                    return false;
                }
                let perf: Vec<Rational> = agents
                    .iter()
                    .map(|a| landscape.average_value(&a.map))
                    .collect();
                let best = perf.iter().max().cloned().unwrap_or_default();
                tied.iter().all(|id| {
                    agents
                        .position(id)
                        .map(|i| perf[i] == best)
                        .unwrap_or(false)
                })
            }
        }
    }

    pub fn describe(&self, landscape: &Landscape) -> String {
        match self {
            Witness::OptimumCount { states } => format!(
                "optimal states: [{}]",
                states
                    .iter()
                    .map(|&x| landscape.label(x))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            Witness::EqualValues { first, second } => format!(
                "V({}) = V({}) = {}",
                landscape.label(*first),
                landscape.label(*second),
                fmt_rational(landscape.value(*first))
            ),
            Witness::Degrades { agent, state } => {
                format!("{agent} lowers the value at {}", landscape.label(*state))
            }
            Witness::NotIdempotent { agent, state } => {
                format!(
                    "{agent}∘{agent} differs from {agent} at {}",
                    landscape.label(*state)
                )
            }
            Witness::AlwaysSolves { agent } => {
                format!("{agent} reaches the optimum from every state")
            }
            Witness::StuckState { state } => {
                format!("every agent is stuck at {}", landscape.label(*state))
            }
            Witness::Tie { agents } => format!("tie for best: {}", agents.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails(Witness),
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Holds => None,
            Verdict::Fails(w) => Some(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BestAgent {
    Unique(String),
    Tie(Vec<String>),
}

impl BestAgent {
    pub fn unique(&self) -> Option<&str> {
        match self {
            BestAgent::Unique(id) => Some(id),
            BestAgent::Tie(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionReport {
    pub verdicts: Vec<(Assumption, Verdict)>,
    pub best_agent: BestAgent,
    /// Expected performance of every agent, in pool order.
    pub performances: Vec<(String, Rational)>,
}

impl AssumptionReport {
    pub fn verdict(&self, which: Assumption) -> &Verdict {
        &self
            .verdicts
            .iter()
            .find(|(a, _)| *a == which)
            .expect("every assumption is reported")
            .1
    }

    pub fn holds(&self, which: Assumption) -> bool {
        self.verdict(which).holds()
    }

    pub fn all_hold(&self) -> bool {
        self.verdicts.iter().all(|(_, v)| v.holds())
    }

    /// All hold except possibly `skip`.
    pub fn all_hold_except(&self, skip: &[Assumption]) -> bool {
        self.verdicts
            .iter()
            .all(|(a, v)| skip.contains(a) || v.holds())
    }

    pub fn failures(&self) -> impl Iterator<Item = (Assumption, &Witness)> {
        self.verdicts
            .iter()
            .filter_map(|(a, v)| v.witness().map(|w| (*a, w)))
    }

    pub fn first_failure(&self) -> Option<(Assumption, &Witness)> {
        self.failures().next()
    }

    pub fn performance(&self, id: &str) -> Option<&Rational> {
        self.performances
            .iter()
            .find(|(a, _)| a == id)
            .map(|(_, p)| p)
    }
}

/// Evaluates every assumption predicate, attaching a witness to each failure.
pub fn check_assumptions(landscape: &Landscape, agents: &AgentSet) -> AssumptionReport {
    let n = landscape.len();
    let opt = landscape.optimum();
    let v = |x: StateIx| landscape.value(x);

    let optima: Vec<StateIx> = (0..n).filter(|&x| v(x).is_one()).collect();
    let unique_solution = if optima.len() == 1 {
        Verdict::Holds
    } else {
        Verdict::Fails(Witness::OptimumCount { states: optima })
    };

    let injectivity = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .find(|&(a, b)| v(a) == v(b))
        .map_or(Verdict::Holds, |(first, second)| {
            Verdict::Fails(Witness::EqualValues { first, second })
        });

    let ability = agents
        .iter()
        .find_map(|a| {
            (0..n)
                .find(|&x| v(a.apply(x)) < v(x))
                .map(|state| Witness::Degrades {
                    agent: a.id.clone(),
                    state,
                })
        })
        .map_or(Verdict::Holds, Verdict::Fails);

    let idempotence = agents
        .iter()
        .find_map(|a| {
            a.idempotence_violation()
                .map(|state| Witness::NotIdempotent {
                    agent: a.id.clone(),
                    state,
                })
        })
        .map_or(Verdict::Holds, Verdict::Fails);

    let difficulty = agents
        .iter()
        .find(|a| a.map.iter().all(|&y| y == opt))
        .map_or(Verdict::Holds, |a| {
            Verdict::Fails(Witness::AlwaysSolves {
                agent: a.id.clone(),
            })
        });

    let diversity = (0..n)
        .filter(|&x| x != opt)
        .find(|&x| agents.iter().all(|a| a.apply(x) == x))
        .map_or(Verdict::Holds, |state| {
            Verdict::Fails(Witness::StuckState { state })
        });

    let performances: Vec<(String, Rational)> = agents
        .iter()
        .map(|a| (a.id.clone(), landscape.average_value(&a.map)))
        .collect();
    let best_value = performances
        .iter()
        .map(|(_, p)| p)
        .max()
        .cloned()
        .unwrap_or_default();
    let tied: Vec<String> = performances
        .iter()
        .filter(|(_, p)| *p == best_value)
        .map(|(id, _)| id.clone())
        .collect();
    let (best_agent, unique_best) = if tied.len() == 1 {
        (BestAgent::Unique(tied[0].clone()), Verdict::Holds)
    } else {
        (
            BestAgent::Tie(tied.clone()),
            Verdict::Fails(Witness::Tie { agents: tied }),
        )
    };

    AssumptionReport {
        verdicts: vec![
            (Assumption::UniqueSolution, unique_solution),
            (Assumption::Injectivity, injectivity),
            (Assumption::Ability, ability),
            (Assumption::Idempotence, idempotence),
            (Assumption::Difficulty, difficulty),
            (Assumption::Diversity, diversity),
            (Assumption::UniqueBest, unique_best),
        ],
        best_agent,
        performances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};
    use proptest::prelude::*;

    fn hp_landscape() -> Landscape {
        validate_landscape(RawTable::new([
            ("a", ratio(1, 4)),
            ("b", ratio(1, 2)),
            ("c", ratio(3, 4)),
            ("d", int(1)),
        ]))
        .unwrap()
    }

    fn hp_agents(l: &Landscape) -> AgentSet {
        AgentSet::new(vec![
            Agent::from_labels(l, "phi_1", &["b", "b", "d", "d"]).unwrap(),
            Agent::from_labels(l, "phi_2", &["a", "c", "c", "d"]).unwrap(),
            Agent::from_labels(l, "phi_3", &["b", "b", "c", "d"]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn worked_example_landscape_is_valid_and_injective() {
        let l = hp_landscape();
        assert!(l.is_injective());
        assert_eq!(l.label(l.optimum()), "d");
        assert_eq!(l.start_prob(0), &ratio(1, 4));
    }

    #[test]
    fn single_state_landscape() {
        let l = validate_landscape(RawTable::new([("x*", int(1))])).unwrap();
        assert!(l.is_injective());
        assert_eq!(l.optimum(), 0);
        assert_eq!(l.start_prob(0), &int(1));
    }

    #[test]
    fn equal_values_clear_the_injective_flag() {
        let l = validate_landscape(RawTable::new([
            ("a", ratio(1, 3)),
            ("b", ratio(2, 3)),
            ("c", ratio(2, 3)),
            ("d", int(1)),
        ]))
        .unwrap();
        assert!(!l.is_injective());
    }

    #[test]
    fn validation_errors() {
        let bad =
            |rows: Vec<(&str, Rational)>| validate_landscape(RawTable::new(rows)).unwrap_err();
        assert_eq!(
            validate_landscape(RawTable::default()).unwrap_err(),
            ModelError::EmptyTable
        );
        assert!(matches!(
            bad(vec![("a", ratio(3, 2)), ("b", int(1))]),
            ModelError::ValueOutOfRange { .. }
        ));
        assert!(matches!(
            bad(vec![("a", ratio(-1, 2)), ("b", int(1))]),
            ModelError::ValueOutOfRange { .. }
        ));
        assert_eq!(bad(vec![("a", ratio(1, 2))]), ModelError::NoOptimum);
        assert!(matches!(
            bad(vec![("a", int(1)), ("b", int(1))]),
            ModelError::MultipleOptima(_)
        ));
        assert!(matches!(
            bad(vec![("a", int(0)), ("a", int(1))]),
            ModelError::DuplicateState(_)
        ));
        let rows = || RawTable::new([("a", int(0)), ("b", int(1))]);
        assert!(matches!(
            validate_landscape(rows().with_start_dist(vec![int(0), int(1)])),
            Err(ModelError::NonPositiveStart(_))
        ));
        assert!(matches!(
            validate_landscape(rows().with_start_dist(vec![ratio(1, 2), ratio(1, 3)])),
            Err(ModelError::StartNotNormalized(_))
        ));
        assert!(matches!(
            validate_landscape(rows().with_start_dist(vec![int(1)])),
            Err(ModelError::StartDistLength { .. })
        ));
    }

    #[test]
    fn worked_example_performances() {
        let l = hp_landscape();
        let agents = hp_agents(&l);
        let perf: Vec<Rational> = agents
            .iter()
            .map(|a| expected_performance(&l, a).unwrap())
            .collect();
        assert_eq!(perf, vec![ratio(3, 4), ratio(11, 16), ratio(11, 16)]);
    }

    #[test]
    fn identity_agent_scores_the_mean_value() {
        let l = hp_landscape();
        let id = Agent::identity("id", l.len());
        assert_eq!(
            expected_performance(&l, &id).unwrap(),
            (ratio(1, 4) + ratio(1, 2) + ratio(3, 4) + int(1)) / int(4)
        );
    }

    #[test]
    fn performance_rejects_non_total_agents() {
        let l = hp_landscape();
        assert!(matches!(
            expected_performance(&l, &Agent::new("short", vec![0, 1])),
            Err(ModelError::AgentLength { .. })
        ));
        assert!(matches!(
            expected_performance(&l, &Agent::new("wild", vec![0, 1, 2, 9])),
            Err(ModelError::AgentTargetOutOfRange { .. })
        ));
    }

    #[test]
    fn worked_example_satisfies_every_assumption() {
        let l = hp_landscape();
        let report = check_assumptions(&l, &hp_agents(&l));
        assert!(report.all_hold(), "{report:?}");
        assert_eq!(report.best_agent, BestAgent::Unique("phi_1".into()));
    }

    #[test]
    fn agent_set_rejects_duplicates_and_empty() {
        assert_eq!(
            AgentSet::new(vec![]).unwrap_err(),
            ModelError::EmptyAgentSet
        );
        let a = Agent::identity("x", 2);
        assert!(matches!(
            AgentSet::new(vec![a.clone(), a]),
            Err(ModelError::DuplicateAgent(_))
        ));
    }

    fn arb_instance() -> impl Strategy<Value = (Landscape, AgentSet)> {
        (2usize..=5)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0u32..6, n - 1),
                    0..n,
                    proptest::collection::vec(proptest::collection::vec(0..n, n), 1..=4),
                )
            })
            .prop_map(|(vals, opt, maps)| {
                let n = vals.len() + 1;
                let mut rows = Vec::new();
                let mut it = vals.into_iter();
                for i in 0..n {
                    let value = if i == opt {
                        int(1)
                    } else {
                        ratio(it.next().unwrap() as i64, 6)
                    };
                    rows.push((format!("s{i}"), value));
                }
                let l = validate_landscape(RawTable::new(rows)).unwrap();
                let agents = maps
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| Agent::new(format!("phi_{i}"), m))
                    .collect();
                (l, AgentSet::new(agents).unwrap())
            })
    }

    proptest! {
        #[test]
        fn failures_carry_genuine_witnesses((l, agents) in arb_instance()) {
            let report = check_assumptions(&l, &agents);
            for (_, w) in report.failures() {
                prop_assert!(w.recheck(&l, &agents), "{w:?}");
            }
            prop_assert_eq!(report.clone(), check_assumptions(&l, &agents));
        }

        #[test]
        fn performance_bounds((l, agents) in arb_instance()) {
            for a in &agents {
                let p = expected_performance(&l, a).unwrap();
                prop_assert!(&p >= l.min_value() && p <= int(1));
                let solves_all = a.map.iter().all(|&y| y == l.optimum());
                prop_assert_eq!(p == int(1), solves_all);
            }
        }

        #[test]
        fn ability_and_injectivity_force_strict_moves((l, agents) in arb_instance()) {
            let report = check_assumptions(&l, &agents);
            if report.holds(Assumption::Ability) && report.holds(Assumption::Injectivity) {
                for a in &agents {
                    for x in 0..l.len() {
                        prop_assert!(a.apply(x) == x || l.value(a.apply(x)) > l.value(x));
                    }
                }
            }
        }

        #[test]
        fn only_the_optimum_is_fixed_by_all((l, agents) in arb_instance()) {
            let report = check_assumptions(&l, &agents);
            if report.holds(Assumption::Diversity)
                && report.holds(Assumption::Ability)
                && report.holds(Assumption::Injectivity)
            {
                let common: Vec<StateIx> = (0..l.len())
                    .filter(|&x| agents.iter().all(|a| a.apply(x) == x))
                    .collect();
                prop_assert_eq!(common, vec![l.optimum()]);
            }
        }
    }
}
