//! Brute-force oracles for small instances.
//!
//! Nothing here calls into [`crate::deliberation`]; the checks are written
//! from the definitions so they can be used to cross-examine the engine.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{Agent, Landscape, StateIx};
use crate::rational::Rational;

/// Default largest state count the exhaustive routines accept.
pub const DEFAULT_BOUND: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("instance has {size} states, oracle bound is {bound}")]
pub struct BoundExceeded {
    pub size: usize,
    pub bound: usize,
}

fn check_bound(landscape: &Landscape, bound: usize) -> Result<(), BoundExceeded> {
    if landscape.len() > bound {
        Err(BoundExceeded {
            size: landscape.len(),
            bound,
        })
    } else {
        Ok(())
    }
}

/// Per-map predicates for [`enumerate_agents`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentFilter {
    /// `V(φ(x)) ≥ V(x)` everywhere.
    pub ability: bool,
    /// `φ∘φ = φ`.
    pub idempotent: bool,
    /// `φ(x*) = x*`.
    pub fixes_optimum: bool,
    /// Some state is not sent to the optimum.
    pub imperfect: bool,
}

impl AgentFilter {
    pub fn none() -> Self {
        AgentFilter::default()
    }

    /// Ability, idempotence and a fixed optimum.
    pub fn standard() -> Self {
        AgentFilter {
            ability: true,
            idempotent: true,
            fixes_optimum: true,
            imperfect: false,
        }
    }

    pub fn accepts(&self, landscape: &Landscape, map: &[StateIx]) -> bool {
        let opt = landscape.optimum();
        (!self.ability || (0..map.len()).all(|x| landscape.value(map[x]) >= landscape.value(x)))
            && (!self.idempotent || (0..map.len()).all(|x| map[map[x]] == map[x]))
            && (!self.fixes_optimum || map[opt] == opt)
            && (!self.imperfect || map.iter().any(|&y| y != opt))
    }
}

/// Every total self-map of the states passing `filter`, in lexicographic
/// order of the image table. Ids are `m<k>` with `k` the rank among all maps.
pub fn enumerate_agents(
    landscape: &Landscape,
    filter: AgentFilter,
    bound: usize,
) -> Result<Vec<Agent>, BoundExceeded> {
    check_bound(landscape, bound)?;
    let n = landscape.len();
    let mut out = Vec::new();
    let mut map = vec![0usize; n];
    let mut rank = 0u64;
    loop {
        if filter.accepts(landscape, &map) {
            out.push(Agent::new(format!("m{rank}"), map.clone()));
        }
        rank += 1;
        // odometer, last position fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            map[pos] += 1;
            if map[pos] < n {
                break;
            }
            map[pos] = 0;
        }
    }
}

/// Endpoints of every maximal change-making sequence from `start`.
///
/// A sequence ends at a state no agent moves, or when a move re-enters a
/// state already on the sequence (the re-entered state is the endpoint).
pub fn exhaustive_endpoints(
    landscape: &Landscape,
    agents: &[Agent],
    start: StateIx,
    bound: usize,
) -> Result<BTreeSet<StateIx>, BoundExceeded> {
    check_bound(landscape, bound)?;
    let mut found = BTreeSet::new();
    let mut on_path = vec![false; landscape.len()];
    explore(agents, start, &mut on_path, &mut found);
    Ok(found)
}

fn explore(agents: &[Agent], x: StateIx, on_path: &mut [bool], found: &mut BTreeSet<StateIx>) {
    on_path[x] = true;
    let targets: BTreeSet<StateIx> = agents
        .iter()
        .map(|a| a.apply(x))
        .filter(|&y| y != x)
        .collect();
    if targets.is_empty() {
        found.insert(x);
    }
    for y in targets {
        if on_path[y] {
            found.insert(y);
        } else {
            explore(agents, y, on_path, found);
        }
    }
    on_path[x] = false;
}

/// Endpoint set for every start state.
pub fn endpoint_sets(
    landscape: &Landscape,
    agents: &[Agent],
    bound: usize,
) -> Result<Vec<BTreeSet<StateIx>>, BoundExceeded> {
    (0..landscape.len())
        .map(|x| exhaustive_endpoints(landscape, agents, x, bound))
        .collect()
}

/// `Σ_x ν(x) · max_{y ∈ E(x)} V(y)`: the group value under the kindest order.
pub fn best_case_value(landscape: &Landscape, sets: &[BTreeSet<StateIx>]) -> Rational {
    let picks: Vec<StateIx> = sets
        .iter()
        .map(|s| {
            *s.iter()
                .max_by(|&&a, &&b| landscape.value(a).cmp(landscape.value(b)))
                .expect("endpoint sets are non-empty")
        })
        .collect();
    landscape.average_value(&picks)
}

/// `Σ_x ν(x) · min_{y ∈ E(x)} V(y)`: the group value under the harshest order.
pub fn worst_case_value(landscape: &Landscape, sets: &[BTreeSet<StateIx>]) -> Rational {
    let picks: Vec<StateIx> = sets
        .iter()
        .map(|s| {
            *s.iter()
                .min_by(|&&a, &&b| landscape.value(a).cmp(landscape.value(b)))
                .expect("endpoint sets are non-empty")
        })
        .collect();
    landscape.average_value(&picks)
}

/// True iff every order of every start ends at the optimum.
pub fn solves_every_order(landscape: &Landscape, sets: &[BTreeSet<StateIx>]) -> bool {
    sets.iter()
        .all(|s| s.len() == 1 && s.contains(&landscape.optimum()))
}

/// All non-empty index subsets of `0..n`, smallest first.
pub fn nonempty_subsets(n: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by_key(|s| s.len());
    subsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_landscape, RawTable};
    use crate::rational::{int, ratio};

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
    fn two_state_able_idempotent_maps() {
        let l = validate_landscape(RawTable::new([("x*", int(1)), ("x", int(0))])).unwrap();
        let found = enumerate_agents(&l, AgentFilter::standard(), DEFAULT_BOUND).unwrap();
        let maps: Vec<Vec<usize>> = found.into_iter().map(|a| a.map).collect();
        assert_eq!(maps, vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn one_state_has_only_identity() {
        let l = validate_landscape(RawTable::new([("x*", int(1))])).unwrap();
        let found = enumerate_agents(&l, AgentFilter::none(), DEFAULT_BOUND).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].map, vec![0]);
    }

    #[test]
    fn four_state_count_matches_filtered_brute_force() {
        let l = hp_landscape();
        let all = enumerate_agents(&l, AgentFilter::none(), DEFAULT_BOUND).unwrap();
        assert_eq!(all.len(), 256);
        let filtered = all
            .iter()
            .filter(|a| AgentFilter::standard().accepts(&l, &a.map))
            .count();
        let direct = enumerate_agents(&l, AgentFilter::standard(), DEFAULT_BOUND).unwrap();
        assert_eq!(direct.len(), filtered);
        // Idempotent, monotone maps on a 4-chain with a fixed top: every state
        // maps to itself or to a fixed point above it. Counted by hand: 15.
        assert_eq!(direct.len(), 15);
    }

    #[test]
    fn bound_is_enforced() {
        let rows: Vec<(String, _)> = (0..6)
            .map(|i| (format!("s{i}"), if i == 5 { int(1) } else { ratio(i, 10) }))
            .collect();
        let l = validate_landscape(RawTable::new(rows)).unwrap();
        assert_eq!(
            enumerate_agents(&l, AgentFilter::none(), DEFAULT_BOUND).unwrap_err(),
            BoundExceeded { size: 6, bound: 5 }
        );
        assert!(exhaustive_endpoints(&l, &[], 0, DEFAULT_BOUND).is_err());
    }

    #[test]
    fn single_idempotent_agent_endpoint() {
        let l = hp_landscape();
        let a = Agent::new("phi_1", vec![1, 1, 3, 3]);
        for x in 0..4 {
            let e = exhaustive_endpoints(&l, std::slice::from_ref(&a), x, DEFAULT_BOUND).unwrap();
            assert_eq!(e, BTreeSet::from([a.apply(x)]));
        }
    }

    #[test]
    fn subsets_enumerated_smallest_first() {
        let s = nonempty_subsets(3);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], vec![0]);
        assert_eq!(s[6], vec![0, 1, 2]);
    }
}
