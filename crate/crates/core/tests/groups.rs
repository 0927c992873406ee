use std::collections::BTreeSet;

use hpverify_core::model::{validate_landscape, Agent, AgentSet, Landscape, RawTable};
use hpverify_core::oracle::{enumerate_agents, nonempty_subsets, AgentFilter, DEFAULT_BOUND};
use hpverify_core::rational::ratio;
use hpverify_core::stochastic::{
    absorption_expected_value, build_ability_group, build_diversity_group, check_ability_group,
    check_diversity_group, AbilityGroupSpec, DiversityGroupSpec, SelectionFamily,
};

fn ladder(n: usize) -> Landscape {
    validate_landscape(RawTable::new(
        (1..=n).map(|k| (format!("x{k}"), ratio(k as i64, n as i64))),
    ))
    .unwrap()
}

fn pairs(l: &Landscape, prefix: &str) -> impl Iterator<Item = AgentSet> {
    let maps = enumerate_agents(l, AgentFilter::none(), DEFAULT_BOUND).unwrap();
    let prefix = prefix.to_string();
    let all: Vec<(Agent, Agent)> = maps
        .iter()
        .flat_map(|a| maps.iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    all.into_iter().map(move |(a, b)| {
        AgentSet::new(vec![
            Agent::new(format!("{prefix}1"), a.map),
            Agent::new(format!("{prefix}2"), b.map),
        ])
        .unwrap()
    })
}

#[test]
fn ability_builder_succeeds_exactly_when_a_pair_exists() {
    for n in [3, 4] {
        let l = ladder(n);
        let opt = l.optimum();
        for subset in nonempty_subsets(n) {
            let ck: BTreeSet<usize> = subset.into_iter().collect();
            let exists = pairs(&l, "a").any(|g| check_ability_group(&l, &g, &ck).is_ok());
            let built = build_ability_group(&l, &AbilityGroupSpec::new(ck.clone()), 2);
            assert_eq!(built.is_ok(), exists, "n={n} ck={ck:?} opt={opt}");
            if let Ok(g) = built {
                let family = SelectionFamily::uniform(&l, &g);
                let ev = absorption_expected_value(&l, &g, &family).unwrap().average;
                assert_eq!(ev, ratio(1, 1), "n={n} ck={ck:?}");
            }
        }
    }
}

#[test]
fn diversity_builder_succeeds_exactly_when_a_pair_exists() {
    for n in [3, 4] {
        let l = ladder(n);
        for bad in 0..n {
            for bad_agent in 0..2 {
                let exists =
                    pairs(&l, "d").any(|g| check_diversity_group(&l, &g, bad, bad_agent).is_ok());
                let spec = DiversityGroupSpec {
                    bad_state: bad,
                    bad_agent,
                    regressed: None,
                };
                let built = build_diversity_group(&l, &spec, 2);
                assert_eq!(built.is_ok(), exists, "n={n} bad={bad} agent={bad_agent}");
                if let Ok(g) = built {
                    let family = SelectionFamily::uniform(&l, &g);
                    let ev = absorption_expected_value(&l, &g, &family).unwrap().average;
                    assert!(ev < ratio(1, 1), "n={n} bad={bad}");
                }
            }
        }
    }
}
