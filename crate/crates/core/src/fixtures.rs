//! Built-in instances with golden facts.
//!
//! Each fixture is an instance table plus a `key = value` list of facts
//! derived by hand. [`verify_fixture`] recomputes every fact with the engine
//! and the oracles and reports mismatches.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::deliberation::{
    group_operator, verify_basic_theorem, DeliberationError, SchedulerPolicy,
};
use crate::instance::{parse_instance, Instance, InstanceError};
use crate::model::{check_assumptions, AgentSet, BestAgent, Landscape, ModelError, StateIx};
use crate::oracle::{endpoint_sets, worst_case_value, DEFAULT_BOUND};
use crate::rational::{fmt_rational, Rational};
use crate::stochastic::{
    absorption_expected_value, build_ability_group, build_diversity_group, check_ability_group,
    check_diversity_group, AbilityGroupSpec, AtdConfig, DiversityGroupSpec, FamilyChoice,
    SelectionFamily, StochasticError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fixture {
    pub name: &'static str,
    pub table: &'static str,
    pub facts: &'static str,
}

pub const FIXTURES: [Fixture; 4] = [
    Fixture {
        name: "hp-example",
        table: include_str!("../fixtures/hp-example.txt"),
        facts: include_str!("../fixtures/hp-example.facts"),
    },
    Fixture {
        name: "non-injective",
        table: include_str!("../fixtures/non-injective.txt"),
        facts: include_str!("../fixtures/non-injective.facts"),
    },
    Fixture {
        name: "unique-best-tie",
        table: include_str!("../fixtures/unique-best-tie.txt"),
        facts: include_str!("../fixtures/unique-best-tie.facts"),
    },
    Fixture {
        name: "atd-demo",
        table: include_str!("../fixtures/atd-demo.txt"),
        facts: include_str!("../fixtures/atd-demo.facts"),
    },
];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture `{name}` (known: {known})")]
    Unknown { name: String, known: String },
    #[error("fixture {name}: {source}")]
    Instance {
        name: String,
        #[source]
        source: InstanceError,
    },
    #[error("fixture {name}, facts line {line}: expected `key = value`")]
    Facts { name: String, line: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Deliberation(#[from] DeliberationError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
}

pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}

pub fn fixture(name: &str) -> Result<&'static Fixture, FixtureError> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| FixtureError::Unknown {
            name: name.to_string(),
            known: fixture_names().join(", "),
        })
}

pub fn load_fixture(name: &str) -> Result<Instance, FixtureError> {
    let f = fixture(name)?;
    parse_instance(f.table).map_err(|source| FixtureError::Instance {
        name: name.to_string(),
        source,
    })
}

/// Golden facts in file order.
pub fn golden_facts(name: &str) -> Result<Vec<(String, String)>, FixtureError> {
    let f = fixture(name)?;
    f.facts
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| FixtureError::Facts {
                    name: name.to_string(),
                    line: i + 1,
                })
        })
        .collect()
}

/// Common-knowledge set, group sizes and bad state of the `atd-demo` groups.
pub fn atd_demo_config(
    landscape: &Landscape,
    family: FamilyChoice,
    trials: usize,
    seed: u64,
) -> Result<AtdConfig, FixtureError> {
    let ck = [
        landscape.require_state("x5")?,
        landscape.require_state("x*")?,
    ];
    Ok(AtdConfig {
        ability: AbilityGroupSpec::new(ck),
        ability_size: 3,
        diversity: DiversityGroupSpec {
            bad_state: landscape.require_state("x4")?,
            bad_agent: 0,
            regressed: None,
        },
        diversity_size: 3,
        family,
        trials,
        seed,
    })
}

fn labels(landscape: &Landscape, xs: &[StateIx]) -> String {
    xs.iter()
        .map(|&x| landscape.label(x))
        .collect::<Vec<_>>()
        .join(" ")
}

fn set_label(landscape: &Landscape, s: &BTreeSet<StateIx>) -> String {
    let inner: Vec<&str> = s.iter().map(|&x| landscape.label(x)).collect();
    format!("{{{}}}", inner.join(","))
}

fn same_maps(a: &AgentSet, b: &AgentSet) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.id == y.id && x.map == y.map)
}

fn pool_facts(
    landscape: &Landscape,
    agents: &AgentSet,
) -> Result<Vec<(String, String)>, FixtureError> {
    let mut facts = Vec::new();
    let mut put = |k: &str, v: String| facts.push((k.to_string(), v));
    put("injective", landscape.is_injective().to_string());

    let report = check_assumptions(landscape, agents);
    let failing: Vec<&str> = report.failures().map(|(a, _)| a.name()).collect();
    put(
        "failing-assumptions",
        if failing.is_empty() {
            "none".to_string()
        } else {
            failing.join(" ")
        },
    );
    put(
        "best",
        match &report.best_agent {
            BestAgent::Unique(id) => id.clone(),
            BestAgent::Tie(ids) => format!("tie {}", ids.join(" ")),
        },
    );
    for (id, v) in &report.performances {
        put(&format!("ev.{id}"), fmt_rational(v));
    }

    let policy = SchedulerPolicy::lowest_index_first();
    let group = group_operator(landscape, agents, policy)?;
    put("group.endpoints", labels(landscape, &group.endpoints));
    put("group.ev", fmt_rational(&group.expected_value));
    let equal = agents
        .iter()
        .find(|a| a.map == group.endpoints)
        .map_or("none".to_string(), |a| a.id.clone());
    put("group.equals", equal);

    if let Ok(sets) = endpoint_sets(landscape, agents.agents(), DEFAULT_BOUND) {
        let shown: Vec<String> = sets.iter().map(|s| set_label(landscape, s)).collect();
        put("oracle.endpoints", shown.join(" "));
    }

    match verify_basic_theorem(landscape, agents, policy) {
        Ok(v) => {
            put("theorem", "applies".to_string());
            put(
                "theorem.failure-state",
                landscape.label(v.best_failure_state).to_string(),
            );
            put("theorem.subset", v.outperforming_subset.join(" "));
            put("theorem.subset-ev", fmt_rational(&v.subset_value));
        }
        Err(DeliberationError::NotApplicable { assumption, .. }) => {
            put("theorem", format!("refused {assumption}"));
        }
        Err(e) => return Err(e.into()),
    }

    if let BestAgent::Tie(ids) = &report.best_agent {
        let tied = agents.restrict(ids)?;
        if let Ok(sets) = endpoint_sets(landscape, tied.agents(), DEFAULT_BOUND) {
            put(
                "tie.every-order-ev",
                fmt_rational(&worst_case_value(landscape, &sets)),
            );
        }
        if let (Some(a), Some(b)) = (landscape.index_of("a"), landscape.index_of("b")) {
            let bound = (landscape.value(a) + Rational::from_integer(1.into()))
                / Rational::from_integer(2.into());
            put(
                "tie.value-constraint",
                (landscape.value(b) < &bound).to_string(),
            );
        }
    }
    Ok(facts)
}

fn atd_facts(
    landscape: &Landscape,
    agents: &AgentSet,
) -> Result<Vec<(String, String)>, FixtureError> {
    let mut facts = Vec::new();
    let mut put = |k: &str, v: String| facts.push((k.to_string(), v));
    put("injective", landscape.is_injective().to_string());
    let config = atd_demo_config(landscape, FamilyChoice::Uniform, 0, 0)?;
    let ids = |p: char| -> Vec<String> {
        agents
            .ids()
            .into_iter()
            .filter(|id| id.starts_with(p))
            .collect()
    };
    let ability = agents.restrict(&ids('a'))?;
    let diversity = agents.restrict(&ids('d'))?;

    let check = |r: Result<(), _>| match r {
        Ok(()) => "ok".to_string(),
        Err(v) => format!("violated: {v}"),
    };
    put(
        "ability.check",
        check(check_ability_group(
            landscape,
            &ability,
            &config.ability.ck_set,
        )),
    );
    let built = build_ability_group(landscape, &config.ability, config.ability_size)?;
    put(
        "ability.matches-builder",
        same_maps(&built, &ability).to_string(),
    );
    let family = SelectionFamily::uniform(landscape, &ability);
    let a_ev = absorption_expected_value(landscape, &ability, &family)?.average;
    put("ability.ev", fmt_rational(&a_ev));

    put(
        "diversity.check",
        check(check_diversity_group(
            landscape,
            &diversity,
            config.diversity.bad_state,
            config.diversity.bad_agent,
        )),
    );
    let built = build_diversity_group(landscape, &config.diversity, config.diversity_size)?;
    put(
        "diversity.matches-builder",
        same_maps(&built, &diversity).to_string(),
    );
    let family = SelectionFamily::uniform(landscape, &diversity);
    let d_ev = absorption_expected_value(landscape, &diversity, &family)?.average;
    put("diversity.ev", fmt_rational(&d_ev));
    put(
        "diversity.ev-below-one",
        (d_ev < Rational::from_integer(1.into())).to_string(),
    );
    put("ability-wins", (a_ev > d_ev).to_string());
    Ok(facts)
}

/// Every fact the engine can state about a fixture; a superset of the golden keys.
pub fn compute_facts(name: &str) -> Result<Vec<(String, String)>, FixtureError> {
    let instance = load_fixture(name)?;
    let agents = instance.agent_set()?;
    if name == "atd-demo" {
        atd_facts(&instance.landscape, agents)
    } else {
        pool_facts(&instance.landscape, agents)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactCheck {
    pub key: String,
    pub expected: String,
    /// `None` when the engine produced no value for the key.
    pub actual: Option<String>,
}

impl FactCheck {
    pub fn passed(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Compares every golden fact with its recomputed value.
pub fn verify_fixture(name: &str) -> Result<Vec<FactCheck>, FixtureError> {
    let computed = compute_facts(name)?;
    Ok(golden_facts(name)?
        .into_iter()
        .map(|(key, expected)| {
            let actual = computed
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.clone());
            FactCheck {
                key,
                expected,
                actual,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_matches_its_golden_facts() {
        for name in fixture_names() {
            let checks = verify_fixture(name).unwrap();
            assert!(!checks.is_empty());
            for c in &checks {
                assert!(c.passed(), "{name}: {c:?}");
            }
        }
    }

    #[test]
    fn unknown_fixture_is_an_error() {
        assert!(matches!(
            load_fixture("nope"),
            Err(FixtureError::Unknown { .. })
        ));
    }

    #[test]
    fn demo_table_matches_demo_landscape() {
        let inst = load_fixture("atd-demo").unwrap();
        assert_eq!(inst.landscape, crate::stochastic::demo_landscape());
    }
}
