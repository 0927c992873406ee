//! In-series deliberation.
//!
//! Agents take turns; a turn must change the current state. The relay stops at
//! a state every agent fixes (unanimity). Which mover acts next is decided by a
//! [`SchedulerPolicy`]. If the relay re-enters a state it already visited it
//! stops there with [`StopReason::Cycle`]; this can only happen when ability or
//! injectivity fails.

use std::fmt;
use std::str::FromStr;

use num_traits::One;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_assumptions, Agent, AgentSet, Assumption, Landscape, ModelError, StateIx, Witness,
};
use crate::rational::{fmt_rational, Rational};
use crate::seeding::derived_rng;
use crate::table::to_csv;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeliberationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("start state #{0} is not in the landscape")]
    StartOutOfRange(StateIx),
    #[error("step cap must be positive")]
    ZeroStepCap,
    #[error("clone count must be positive")]
    ZeroClones,
    #[error("agent `{agent}` is not idempotent (witness state #{state})")]
    NotIdempotent { agent: String, state: StateIx },
    #[error("theorem not applicable: {assumption} fails ({witness:?})")]
    NotApplicable {
        assumption: Assumption,
        witness: Witness,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    LowestIndexFirst,
    RoundRobin,
    SeededRandom,
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lowest-index-first" => Ok(PolicyKind::LowestIndexFirst),
            "round-robin" => Ok(PolicyKind::RoundRobin),
            "seeded-random" => Ok(PolicyKind::SeededRandom),
            other => Err(format!(
                "unknown policy `{other}` (lowest-index-first | round-robin | seeded-random)"
            )),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::LowestIndexFirst => "lowest-index-first",
            PolicyKind::RoundRobin => "round-robin",
            PolicyKind::SeededRandom => "seeded-random",
        })
    }
}

/// Chooses which of the currently moving agents takes the next turn.
///
/// `seed` only matters for [`PolicyKind::SeededRandom`]; the stream for a
/// given start state is derived from it, so (policy, landscape, agents, start)
/// fixes the trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerPolicy {
    pub kind: PolicyKind,
    pub seed: u64,
}

impl SchedulerPolicy {
    pub fn lowest_index_first() -> Self {
        SchedulerPolicy::default()
    }

    pub fn round_robin() -> Self {
        SchedulerPolicy {
            kind: PolicyKind::RoundRobin,
            seed: 0,
        }
    }

    pub fn seeded_random(seed: u64) -> Self {
        SchedulerPolicy {
            kind: PolicyKind::SeededRandom,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Every agent fixes the endpoint.
    CommonFixedPoint,
    /// The relay re-entered a visited state; the endpoint is that state.
    Cycle,
    /// The step cap was exhausted.
    StepCap,
    /// A move was immediately undone by a different agent; the endpoint is
    /// the state before the undone move.
    Disagreement,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::CommonFixedPoint => "common-fixed-point",
            StopReason::Cycle => "cycle",
            StopReason::StepCap => "step-cap",
            StopReason::Disagreement => "disagreement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub agent: String,
    pub from: StateIx,
    pub to: StateIx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliberationTrace {
    pub start: StateIx,
    pub steps: Vec<Step>,
    pub endpoint: StateIx,
    pub stop_reason: StopReason,
}

impl DeliberationTrace {
    /// Values of the start state and of every state reached.
    pub fn values<'a>(&self, landscape: &'a Landscape) -> Vec<&'a Rational> {
        std::iter::once(self.start)
            .chain(self.steps.iter().map(|s| s.to))
            .map(|x| landscape.value(x))
            .collect()
    }

    pub fn is_unanimous(&self) -> bool {
        self.stop_reason == StopReason::CommonFixedPoint
    }
}

/// `|X| · |agents| + 1`.
pub fn default_step_cap(landscape: &Landscape, agents: usize) -> usize {
    landscape.len() * agents + 1
}

/// Runs the relay from `start`.
pub fn relay_deliberate(
    landscape: &Landscape,
    agents: &AgentSet,
    start: StateIx,
    policy: SchedulerPolicy,
    step_cap: usize,
) -> Result<DeliberationTrace, DeliberationError> {
    for a in agents {
        landscape.check_agent(a)?;
    }
    relay_over(landscape, agents.agents(), start, policy, step_cap)
}

/// Relay over a plain agent list, which may hold clones with equal maps.
pub(crate) fn relay_over(
    landscape: &Landscape,
    agents: &[Agent],
    start: StateIx,
    policy: SchedulerPolicy,
    step_cap: usize,
) -> Result<DeliberationTrace, DeliberationError> {
    if start >= landscape.len() {
        return Err(DeliberationError::StartOutOfRange(start));
    }
    if step_cap == 0 {
        return Err(DeliberationError::ZeroStepCap);
    }
    let mut rng = match policy.kind {
        PolicyKind::SeededRandom => Some(derived_rng(policy.seed, "relay", start as u64)),
        _ => None,
    };
    let mut visited = vec![false; landscape.len()];
    visited[start] = true;
    let mut cursor = 0usize;
    let mut current = start;
    let mut steps = Vec::new();

    loop {
        let movers: Vec<usize> = (0..agents.len())
            .filter(|&i| agents[i].apply(current) != current)
            .collect();
        if movers.is_empty() {
            return Ok(DeliberationTrace {
                start,
                steps,
                endpoint: current,
                stop_reason: StopReason::CommonFixedPoint,
            });
        }
        if steps.len() == step_cap {
            return Ok(DeliberationTrace {
                start,
                steps,
                endpoint: current,
                stop_reason: StopReason::StepCap,
            });
        }
        let chosen = match policy.kind {
            PolicyKind::LowestIndexFirst => movers[0],
            PolicyKind::RoundRobin => {
                let pick = movers
                    .iter()
                    .copied()
                    .find(|&i| i >= cursor)
                    .unwrap_or(movers[0]);
                cursor = (pick + 1) % agents.len();
                pick
            }
            PolicyKind::SeededRandom => {
                let rng = rng.as_mut().expect("seeded policy has a stream");
                movers[rng.gen_range(0..movers.len())]
            }
        };
        let next = agents[chosen].apply(current);
        steps.push(Step {
            agent: agents[chosen].id.clone(),
            from: current,
            to: next,
        });
        current = next;
        if visited[next] {
            return Ok(DeliberationTrace {
                start,
                steps,
                endpoint: current,
                stop_reason: StopReason::Cycle,
            });
        }
        visited[next] = true;
    }
}

/// The group map `x ↦ endpoint`, with its expected value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupOutcome {
    pub endpoints: Vec<StateIx>,
    pub expected_value: Rational,
    pub traces: Vec<DeliberationTrace>,
}

impl GroupOutcome {
    pub fn solves_all(&self, landscape: &Landscape) -> bool {
        self.endpoints.iter().all(|&y| y == landscape.optimum())
    }

    pub fn unanimous(&self) -> bool {
        self.traces.iter().all(DeliberationTrace::is_unanimous)
    }
}

/// Runs the relay from every start state.
pub fn group_operator(
    landscape: &Landscape,
    agents: &AgentSet,
    policy: SchedulerPolicy,
) -> Result<GroupOutcome, DeliberationError> {
    for a in agents {
        landscape.check_agent(a)?;
    }
    group_over(landscape, agents.agents(), policy)
}

pub(crate) fn group_over(
    landscape: &Landscape,
    agents: &[Agent],
    policy: SchedulerPolicy,
) -> Result<GroupOutcome, DeliberationError> {
    let cap = default_step_cap(landscape, agents.len());
    let traces = (0..landscape.len())
        .map(|x| relay_over(landscape, agents, x, policy, cap))
        .collect::<Result<Vec<_>, _>>()?;
    let endpoints: Vec<StateIx> = traces.iter().map(|t| t.endpoint).collect();
    let expected_value = landscape.average_value(&endpoints);
    Ok(GroupOutcome {
        endpoints,
        expected_value,
        traces,
    })
}

/// Endpoint map of `k` identical copies of an idempotent `agent`.
pub fn compose_clones(
    landscape: &Landscape,
    agent: &Agent,
    k: usize,
    policy: SchedulerPolicy,
) -> Result<Vec<StateIx>, DeliberationError> {
    landscape.check_agent(agent)?;
    if k == 0 {
        return Err(DeliberationError::ZeroClones);
    }
    if let Some(state) = agent.idempotence_violation() {
        return Err(DeliberationError::NotIdempotent {
            agent: agent.id.clone(),
            state,
        });
    }
    let clones: Vec<Agent> = (1..=k)
        .map(|j| Agent::new(format!("{}#{j}", agent.id), agent.map.clone()))
        .collect();
    Ok(group_over(landscape, &clones, policy)?.endpoints)
}

/// What the basic and deterministic group-versus-best results establish on
/// one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicTheoremVerdict {
    pub best_agent: String,
    pub best_value: Rational,
    /// A start from which the best agent alone misses the optimum.
    pub best_failure_state: StateIx,
    /// Endpoint map of the whole pool; constant at the optimum.
    pub full_group_endpoints: Vec<StateIx>,
    pub full_group_value: Rational,
    /// Inclusion-minimal subset (pool order) that strictly beats the best agent.
    pub outperforming_subset: Vec<String>,
    pub subset_value: Rational,
}

/// Checks the preconditions, then exhibits the three facts behind the
/// group-beats-best result: a failure state for the best agent, the whole
/// pool solving every start, and a small outperforming subset found by
/// greedy growth followed by pruning.
pub fn verify_basic_theorem(
    landscape: &Landscape,
    agents: &AgentSet,
    policy: SchedulerPolicy,
) -> Result<BasicTheoremVerdict, DeliberationError> {
    for a in agents {
        landscape.check_agent(a)?;
    }
    let report = check_assumptions(landscape, agents);
    if let Some((assumption, witness)) = report.first_failure() {
        return Err(DeliberationError::NotApplicable {
            assumption,
            witness: witness.clone(),
        });
    }
    let best_id = report
        .best_agent
        .unique()
        .expect("unique-best holds")
        .to_string();
    let best = agents.by_id(&best_id)?;
    let best_value = report.performance(&best_id).cloned().expect("reported");
    let best_failure_state = (0..landscape.len())
        .find(|&x| best.apply(x) != landscape.optimum())
        .expect("difficulty holds");

    let full = group_operator(landscape, agents, policy)?;
    debug_assert!(full.expected_value.is_one());

    let value_of = |members: &[usize]| -> Result<Rational, DeliberationError> {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        let group: Vec<Agent> = sorted.iter().map(|&i| agents.get(i).clone()).collect();
        Ok(group_over(landscape, &group, policy)?.expected_value)
    };

    let mut members: Vec<usize> = Vec::new();
    let mut current = Rational::from_integer(0.into());
    while current <= best_value {
        let mut pick: Option<(usize, Rational)> = None;
        for i in (0..agents.len()).filter(|i| !members.contains(i)) {
            let mut candidate = members.clone();
            candidate.push(i);
            let v = value_of(&candidate)?;
            if pick.as_ref().is_none_or(|(_, pv)| v > *pv) {
                pick = Some((i, v));
            }
        }
        let (i, v) = pick.expect("the full pool outperforms the best agent");
        members.push(i);
        current = v;
    }
    members.sort_unstable();
    let mut k = 0;
    while k < members.len() {
        let mut without = members.clone();
        without.remove(k);
        if !without.is_empty() {
            let v = value_of(&without)?;
            if v > best_value {
                members = without;
                current = v;
                continue;
            }
        }
        k += 1;
    }

    Ok(BasicTheoremVerdict {
        best_agent: best_id,
        best_value,
        best_failure_state,
        full_group_value: full.expected_value.clone(),
        full_group_endpoints: full.endpoints,
        outperforming_subset: members.iter().map(|&i| agents.get(i).id.clone()).collect(),
        subset_value: current,
    })
}

/// One row per step: `start,step,agent,from,to,value_to`.
pub fn traces_csv(landscape: &Landscape, traces: &[DeliberationTrace]) -> String {
    let rows = traces.iter().flat_map(|t| {
        t.steps.iter().enumerate().map(move |(i, s)| {
            vec![
                landscape.label(t.start).to_string(),
                (i + 1).to_string(),
                s.agent.clone(),
                landscape.label(s.from).to_string(),
                landscape.label(s.to).to_string(),
                fmt_rational(landscape.value(s.to)),
            ]
        })
    });
    to_csv(&["start", "step", "agent", "from", "to", "value_to"], rows)
}

/// Two columns: `state,endpoint`.
pub fn endpoints_csv(landscape: &Landscape, endpoints: &[StateIx]) -> String {
    let rows = endpoints
        .iter()
        .enumerate()
        .map(|(x, &y)| [landscape.label(x), landscape.label(y)]);
    to_csv(&["state", "endpoint"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_landscape, RawTable};
    use crate::rational::{int, ratio};

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

    fn non_injective() -> (Landscape, AgentSet) {
        let l = validate_landscape(RawTable::new([
            ("a", ratio(1, 3)),
            ("b", ratio(2, 3)),
            ("c", ratio(2, 3)),
            ("d", int(1)),
        ]))
        .unwrap();
        let agents = AgentSet::new(vec![
            Agent::from_labels(&l, "phi_1", &["d", "b", "c", "d"]).unwrap(),
            Agent::from_labels(&l, "phi_2", &["c", "c", "c", "d"]).unwrap(),
            Agent::from_labels(&l, "phi_3", &["b", "b", "b", "d"]).unwrap(),
        ])
        .unwrap();
        (l, agents)
    }

    #[test]
    fn worked_example_relay_from_a() {
        let (l, agents) = hp();
        let pair = agents.subset(&[0, 1]).unwrap();
        let t = relay_deliberate(&l, &pair, 0, SchedulerPolicy::lowest_index_first(), 100).unwrap();
        let moves: Vec<(&str, &str, &str)> = t
            .steps
            .iter()
            .map(|s| (s.agent.as_str(), l.label(s.from), l.label(s.to)))
            .collect();
        assert_eq!(
            moves,
            vec![
                ("phi_1", "a", "b"),
                ("phi_2", "b", "c"),
                ("phi_1", "c", "d")
            ]
        );
        assert_eq!(t.endpoint, 3);
        assert_eq!(t.stop_reason, StopReason::CommonFixedPoint);
    }

    #[test]
    fn non_injective_relay_from_b_returns_b() {
        let (l, agents) = non_injective();
        let t =
            relay_deliberate(&l, &agents, 1, SchedulerPolicy::lowest_index_first(), 100).unwrap();
        assert_eq!(t.endpoint, 1);
        assert_eq!(t.stop_reason, StopReason::Cycle);
        let group = group_operator(&l, &agents, SchedulerPolicy::default()).unwrap();
        assert_eq!(group.endpoints, agents.get(0).map);
    }

    #[test]
    fn optimum_start_takes_no_steps() {
        let (l, agents) = hp();
        for policy in [
            SchedulerPolicy::lowest_index_first(),
            SchedulerPolicy::round_robin(),
            SchedulerPolicy::seeded_random(9),
        ] {
            let t = relay_deliberate(&l, &agents, 3, policy, 10).unwrap();
            assert!(t.steps.is_empty());
            assert_eq!(t.endpoint, 3);
        }
    }

    #[test]
    fn step_cap_is_diagnostic() {
        let (l, agents) = hp();
        let t = relay_deliberate(&l, &agents, 0, SchedulerPolicy::default(), 1).unwrap();
        assert_eq!(t.stop_reason, StopReason::StepCap);
        assert_eq!(t.steps.len(), 1);
        assert_eq!(
            relay_deliberate(&l, &agents, 0, SchedulerPolicy::default(), 0),
            Err(DeliberationError::ZeroStepCap)
        );
        assert_eq!(
            relay_deliberate(&l, &agents, 7, SchedulerPolicy::default(), 3),
            Err(DeliberationError::StartOutOfRange(7))
        );
    }

    #[test]
    fn full_group_solves_and_best_agent_alone_does_not() {
        let (l, agents) = hp();
        let full = group_operator(&l, &agents, SchedulerPolicy::default()).unwrap();
        assert_eq!(full.endpoints, vec![3; 4]);
        assert_eq!(full.expected_value, int(1));
        assert!(full.unanimous());

        let best = agents.subset(&[0]).unwrap();
        let alone = group_operator(&l, &best, SchedulerPolicy::default()).unwrap();
        assert_eq!(alone.endpoints, vec![1, 1, 3, 3]);
        assert_eq!(alone.expected_value, ratio(3, 4));
    }

    #[test]
    fn one_state_group_is_identity() {
        let l = validate_landscape(RawTable::new([("only", int(1))])).unwrap();
        let agents = AgentSet::new(vec![Agent::identity("id", 1)]).unwrap();
        let g = group_operator(&l, &agents, SchedulerPolicy::default()).unwrap();
        assert_eq!(g.endpoints, vec![0]);
        assert_eq!(g.expected_value, int(1));
    }

    #[test]
    fn clone_groups_collapse() {
        let (l, agents) = hp();
        for k in [1, 2, 10] {
            for a in &agents {
                assert_eq!(
                    compose_clones(&l, a, k, SchedulerPolicy::default()).unwrap(),
                    a.map
                );
            }
        }
        let id = Agent::identity("id", 4);
        assert_eq!(
            compose_clones(&l, &id, 5, SchedulerPolicy::round_robin()).unwrap(),
            vec![0, 1, 2, 3]
        );
        let jumpy = Agent::from_labels(&l, "jumpy", &["b", "c", "d", "d"]).unwrap();
        assert!(matches!(
            compose_clones(&l, &jumpy, 2, SchedulerPolicy::default()),
            Err(DeliberationError::NotIdempotent { state: 0, .. })
        ));
        assert_eq!(
            compose_clones(&l, agents.get(0), 0, SchedulerPolicy::default()),
            Err(DeliberationError::ZeroClones)
        );
    }

    #[test]
    fn basic_theorem_on_worked_example() {
        let (l, agents) = hp();
        let v = verify_basic_theorem(&l, &agents, SchedulerPolicy::default()).unwrap();
        assert_eq!(v.best_agent, "phi_1");
        assert_eq!(v.best_value, ratio(3, 4));
        assert_ne!(agents.get(0).apply(v.best_failure_state), l.optimum());
        assert_eq!(v.full_group_endpoints, vec![3; 4]);
        assert_eq!(v.outperforming_subset, vec!["phi_1", "phi_2"]);
        assert_eq!(v.subset_value, int(1));
    }

    #[test]
    fn basic_theorem_refuses_non_injective() {
        let (l, agents) = non_injective();
        match verify_basic_theorem(&l, &agents, SchedulerPolicy::default()) {
            Err(DeliberationError::NotApplicable {
                assumption: Assumption::Injectivity,
                witness:
                    Witness::EqualValues {
                        first: 1,
                        second: 2,
                    },
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_exports() {
        let (l, agents) = hp();
        let pair = agents.subset(&[0, 1]).unwrap();
        let t = relay_deliberate(&l, &pair, 0, SchedulerPolicy::default(), 10).unwrap();
        assert_eq!(
            traces_csv(&l, &[t]),
            "start,step,agent,from,to,value_to\na,1,phi_1,a,b,1/2\na,2,phi_2,b,c,3/4\na,3,phi_1,c,d,1\n"
        );
        assert_eq!(
            endpoints_csv(&l, &[1, 1, 3, 3]),
            "state,endpoint\na,b\nb,b\nc,d\nd,d\n"
        );
    }

    #[test]
    fn policy_names_round_trip() {
        for k in [
            PolicyKind::LowestIndexFirst,
            PolicyKind::RoundRobin,
            PolicyKind::SeededRandom,
        ] {
            assert_eq!(k.to_string().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("fastest".parse::<PolicyKind>().is_err());
    }
}
