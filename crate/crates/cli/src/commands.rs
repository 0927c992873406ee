use std::fs;

use hpverify_core::deliberation::{
    default_step_cap, endpoints_csv, group_operator, relay_deliberate, traces_csv, PolicyKind,
    SchedulerPolicy,
};
use hpverify_core::fixtures::{atd_demo_config, load_fixture, verify_fixture};
use hpverify_core::fuzz::{fuzz_counterexample, revalidate, FuzzDrop};
use hpverify_core::instance::{parse_instance, Instance};
use hpverify_core::model::{check_assumptions, AgentSet, Landscape, StateIx, Verdict};
use hpverify_core::oracle::{best_case_value, endpoint_sets, worst_case_value, DEFAULT_BOUND};
use hpverify_core::prediction::{
    compare_two_signal, decompose, decomposition_csv, decomposition_svg, parse_ensemble,
    parse_ensemble_exact, se_max_monotonicity, two_signal_after, two_signal_before,
    PredictionEnsemble,
};
use hpverify_core::rational::{fmt_rational, int, to_f64, Rational};
use hpverify_core::sampling::{
    hp_experiment, HpOptions, SamplingSpec, StoppingRule, StoppingVariant,
};
use hpverify_core::stochastic::{
    atd_experiment, AbilityGroupSpec, AtdConfig, DiversityGroupSpec, FamilyChoice,
};
use hpverify_core::table::to_csv;

use crate::config::{ExperimentConfig, Family, DEFAULT_BUDGET};
use crate::error::CliError;
use crate::report::{bar_chart_svg, md_table, ReportBundle};

fn load(config: &ExperimentConfig) -> Result<Instance, CliError> {
    match (&config.instance, &config.fixture) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok(parse_instance(&text)?)
        }
        (None, Some(name)) => Ok(load_fixture(name)?),
        (None, None) => Err(CliError::Input(
            "an instance is required: pass --instance or --fixture".into(),
        )),
    }
}

fn with_agents(config: &ExperimentConfig) -> Result<(Landscape, AgentSet), CliError> {
    let inst = load(config)?;
    let agents = inst.agent_set()?.clone();
    Ok((inst.landscape, agents))
}

fn policy(config: &ExperimentConfig) -> SchedulerPolicy {
    SchedulerPolicy {
        kind: config.policy.unwrap_or_default(),
        seed: config.seed(),
    }
}

fn source(config: &ExperimentConfig) -> String {
    match (&config.instance, &config.fixture) {
        (Some(p), _) => format!("instance file `{}`", p.display()),
        (None, Some(f)) => format!("fixture `{f}`"),
        _ => "built-in data".into(),
    }
}

fn labels(l: &Landscape, xs: &[StateIx]) -> String {
    xs.iter().map(|&x| l.label(x)).collect::<Vec<_>>().join(" ")
}

pub fn check(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let (l, agents) = with_agents(config)?;
    let report = check_assumptions(&l, &agents);
    let mut b = ReportBundle::new("Assumption check");
    b.line(format!("Source: {}.\n", source(config)));
    let rows: Vec<Vec<String>> = report
        .verdicts
        .iter()
        .map(|(a, v)| {
            let (holds, witness) = match v {
                Verdict::Holds => ("yes", String::new()),
                Verdict::Fails(w) => ("no", w.describe(&l)),
            };
            vec![a.name().to_string(), holds.to_string(), witness]
        })
        .collect();
    b.line(md_table(&["assumption", "holds", "witness"], rows.clone()));
    b.table(
        "assumptions.csv",
        to_csv(&["assumption", "holds", "witness"], rows),
    );
    let perf: Vec<Vec<String>> = report
        .performances
        .iter()
        .map(|(id, v)| vec![id.clone(), fmt_rational(v), format!("{:.6}", to_f64(v))])
        .collect();
    b.line(md_table(
        &["agent", "expected value", "decimal"],
        perf.clone(),
    ));
    b.table("performance.csv", to_csv(&["agent", "ev", "ev_f64"], perf));
    b.line(if report.all_hold() {
        "All assumptions hold.".to_string()
    } else {
        let failing: Vec<&str> = report.failures().map(|(a, _)| a.name()).collect();
        format!("Failing: {}.", failing.join(", "))
    });
    Ok(b)
}

pub fn deliberate(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let (l, agents) = with_agents(config)?;
    let p = policy(config);
    let starts: Vec<StateIx> = match &config.start {
        Some(label) => vec![l.require_state(label)?],
        None => (0..l.len()).collect(),
    };
    let cap = default_step_cap(&l, agents.len());
    let traces = starts
        .iter()
        .map(|&x| relay_deliberate(&l, &agents, x, p, cap))
        .collect::<Result<Vec<_>, _>>()?;
    let oracle = endpoint_sets(&l, agents.agents(), DEFAULT_BOUND).ok();

    let mut b = ReportBundle::new("In-series deliberation");
    b.line(format!("Source: {}. Policy: {}.\n", source(config), p.kind));
    let mut rows = Vec::new();
    for t in &traces {
        let path: Vec<StateIx> = std::iter::once(t.start)
            .chain(t.steps.iter().map(|s| s.to))
            .collect();
        let in_oracle = oracle
            .as_ref()
            .map(|sets| sets[t.start].contains(&t.endpoint));
        if in_oracle == Some(false) {
            return Err(CliError::Breach(format!(
                "endpoint {} from {} is not reachable per the exhaustive oracle",
                l.label(t.endpoint),
                l.label(t.start)
            )));
        }
        rows.push(vec![
            l.label(t.start).to_string(),
            labels(&l, &path),
            l.label(t.endpoint).to_string(),
            fmt_rational(l.value(t.endpoint)),
            t.stop_reason.to_string(),
        ]);
    }
    b.line(md_table(
        &["start", "path", "endpoint", "value", "stop"],
        rows,
    ));
    if starts.len() == l.len() {
        let endpoints: Vec<StateIx> = traces.iter().map(|t| t.endpoint).collect();
        b.line(format!(
            "Group expected value: {}.",
            fmt_rational(&l.average_value(&endpoints))
        ));
        b.table("endpoints.csv", endpoints_csv(&l, &endpoints));
    }
    if oracle.is_some() {
        b.line("Every endpoint lies in the exhaustive oracle's endpoint set.");
    }
    b.table("traces.csv", traces_csv(&l, &traces));
    Ok(b)
}

pub fn expected_value(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let (l, agents) = with_agents(config)?;
    let report = check_assumptions(&l, &agents);
    let mut rows: Vec<(String, Rational)> = report.performances.clone();
    for kind in [
        PolicyKind::LowestIndexFirst,
        PolicyKind::RoundRobin,
        PolicyKind::SeededRandom,
    ] {
        let p = SchedulerPolicy {
            kind,
            seed: config.seed(),
        };
        let g = group_operator(&l, &agents, p)?;
        rows.push((format!("group ({kind})"), g.expected_value));
    }
    if let Ok(sets) = endpoint_sets(&l, agents.agents(), DEFAULT_BOUND) {
        rows.push(("group, kindest order".into(), best_case_value(&l, &sets)));
        rows.push(("group, harshest order".into(), worst_case_value(&l, &sets)));
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, v)| vec![k.clone(), fmt_rational(v), format!("{:.6}", to_f64(v))])
        .collect();
    let mut b = ReportBundle::new("Expected values");
    b.line(format!("Source: {}.\n", source(config)));
    b.line(md_table(
        &["who", "expected value", "decimal"],
        table.clone(),
    ));
    b.table(
        "expected_value.csv",
        to_csv(&["who", "ev", "ev_f64"], table),
    );
    let names: Vec<String> = rows.iter().map(|(k, _)| k.clone()).collect();
    let values: Vec<f64> = rows.iter().map(|(_, v)| to_f64(v)).collect();
    b.plot(
        "expected_value.svg",
        bar_chart_svg(&names, &[("expected value", "black", values)]),
    );
    Ok(b)
}

pub fn hp(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let (l, agents) = with_agents(config)?;
    let variant: StoppingVariant = config
        .rule
        .as_deref()
        .unwrap_or("all-of-phi")
        .parse()
        .map_err(CliError::Input)?;
    if let Some((a, w)) = check_assumptions(&l, &agents).first_failure() {
        return Err(CliError::Refused(format!("{a} fails: {}", w.describe(&l))));
    }
    let p = policy(config);
    let rule = StoppingRule::for_instance(variant, &l, &agents, p)?;
    let spec = SamplingSpec::uniform(&agents.ids(), config.seed());
    let options = HpOptions {
        trials: config.trials(),
        policy: p,
        faithful: config.faithful.unwrap_or(false),
    };
    let r = hp_experiment(&l, &agents, &spec, &rule, options)?;
    if !r.certificate.target_outperforms {
        return Err(CliError::Breach(
            "the stopping target does not outperform the best agent".into(),
        ));
    }
    if variant == StoppingVariant::AllOfPhi && r.solve_all_count != r.trials() {
        return Err(CliError::Breach(format!(
            "{} of {} full draws missed the optimum",
            r.trials() - r.solve_all_count,
            r.trials()
        )));
    }
    let mut b = ReportBundle::new("Random group versus best-agent clones");
    b.line(format!(
        "Source: {}. Stopping rule: {variant}. Policy: {}. Uniform draws, {} trials.\n",
        source(config),
        p.kind,
        r.trials()
    ));
    let c = &r.certificate;
    b.line(md_table(
        &["quantity", "value"],
        [
            vec!["stopping target".into(), c.target.join(", ")],
            vec!["target group value".into(), fmt_rational(&c.target_value)],
            vec!["best agent value".into(), fmt_rational(&c.best_value)],
            vec![
                "target solves every start".into(),
                c.target_solves_all.to_string(),
            ],
            vec!["mean N1 (sampled)".into(), format!("{:.4}", r.mean_n1)],
            vec![
                "mean N1 (exact)".into(),
                format!(
                    "{} = {:.4}",
                    fmt_rational(&r.oracle_mean_n1),
                    to_f64(&r.oracle_mean_n1)
                ),
            ],
            vec![
                "outperform fraction".into(),
                format!("{:.4}", r.outperform_fraction()),
            ],
            vec![
                "solve-all fraction".into(),
                format!("{:.4}", r.solve_all_fraction()),
            ],
            vec![
                "unanimity fraction".into(),
                format!("{:.4}", r.unanimity_fraction()),
            ],
        ],
    ));
    b.table("trials.csv", r.to_csv());
    Ok(b)
}

fn atd_config(config: &ExperimentConfig, l: &Landscape) -> Result<AtdConfig, CliError> {
    let family = match config.family.unwrap_or(Family::Uniform) {
        Family::Uniform => FamilyChoice::Uniform,
        Family::Skewed => FamilyChoice::Skewed(config.seed()),
    };
    let demo = config.fixture.as_deref() == Some("atd-demo");
    let mut c = if demo && config.ck.is_none() && config.bad_state.is_none() {
        atd_demo_config(l, family, config.trials(), config.seed())?
    } else {
        let ck = config
            .ck
            .as_ref()
            .ok_or_else(|| CliError::Input("--ck is required for this instance".into()))?
            .iter()
            .map(|s| l.require_state(s))
            .collect::<Result<Vec<_>, _>>()?;
        let bad = config
            .bad_state
            .as_deref()
            .ok_or_else(|| CliError::Input("--bad-state is required for this instance".into()))?;
        AtdConfig {
            ability: AbilityGroupSpec::new(ck),
            ability_size: 3,
            diversity: DiversityGroupSpec {
                bad_state: l.require_state(bad)?,
                bad_agent: 0,
                regressed: None,
            },
            diversity_size: 3,
            family,
            trials: config.trials(),
            seed: config.seed(),
        }
    };
    if let Some(s) = config.ability_size {
        c.ability_size = s;
    }
    if let Some(s) = config.diversity_size {
        c.diversity_size = s;
    }
    if let Some(i) = config.bad_agent {
        c.diversity.bad_agent = i;
    }
    Ok(c)
}

pub fn atd(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let l = load(config)?.landscape;
    let c = atd_config(config, &l)?;
    let r = atd_experiment(&l, &c)?;
    if r.ability.exact.average != int(1) {
        return Err(CliError::Breach(format!(
            "ability group value is {}, not 1",
            fmt_rational(&r.ability.exact.average)
        )));
    }
    if !r.ability_wins() {
        return Err(CliError::Breach(
            "diversity group does not fall below the ability group".into(),
        ));
    }
    let mut b = ReportBundle::new("Ability group versus diversity group");
    b.line(format!(
        "Source: {}. {} trials per start state.\n",
        source(config),
        r.trials
    ));
    for g in [&r.ability, &r.diversity] {
        b.line(format!("Group `{}`:\n", g.label));
        b.line(format!(
            "```\n{}```\n",
            hpverify_core::instance::format_instance(&l, Some(&g.group))
        ));
    }
    let rows: Vec<Vec<String>> = [&r.ability, &r.diversity]
        .iter()
        .map(|g| {
            vec![
                g.label.to_string(),
                fmt_rational(&g.exact.average),
                format!("{:.6}", to_f64(&g.exact.average)),
                g.exact.chain_size.to_string(),
                g.disagreement_paths.to_string(),
                g.breaches.len().to_string(),
            ]
        })
        .collect();
    b.line(md_table(
        &[
            "group",
            "exact value",
            "decimal",
            "chain states",
            "disagreement walks",
            "3-SE misses",
        ],
        rows,
    ));
    b.line(format!(
        "Monte Carlo agrees with the exact chain at every start: {}.",
        r.monte_carlo_agrees()
    ));
    b.table("atd.csv", r.to_csv(&l));
    let states: Vec<String> = l.states().to_vec();
    let values = |g: &hpverify_core::stochastic::GroupResult| {
        g.exact.per_start.iter().map(to_f64).collect::<Vec<_>>()
    };
    b.plot(
        "atd.svg",
        bar_chart_svg(
            &states,
            &[
                ("ability group", "black", values(&r.ability)),
                ("diversity group", "red", values(&r.diversity)),
            ],
        ),
    );
    Ok(b)
}

struct Case {
    label: String,
    float: PredictionEnsemble<f64>,
    exact: Option<PredictionEnsemble<Rational>>,
}

fn cases(config: &ExperimentConfig) -> Result<Vec<Case>, CliError> {
    match &config.ensemble {
        None => Ok(vec![
            Case {
                label: "before".into(),
                float: two_signal_before().to_f64(),
                exact: Some(two_signal_before()),
            },
            Case {
                label: "after".into(),
                float: two_signal_after(),
                exact: None,
            },
        ]),
        Some(paths) => paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                let exact = parse_ensemble_exact(&text).ok();
                Ok(Case {
                    label: p
                        .file_stem()
                        .map_or("ensemble".into(), |s| s.to_string_lossy().into_owned()),
                    float: match &exact {
                        Some(e) => e.to_f64(),
                        None => parse_ensemble(&text)?,
                    },
                    exact,
                })
            })
            .collect(),
    }
}

pub fn predict(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let cases = cases(config)?;
    let decs: Vec<_> = cases.iter().map(|c| decompose(&c.float)).collect();
    let mut b = ReportBundle::new("Prediction error decomposition");
    let mut rows = Vec::new();
    for (c, d) in cases.iter().zip(&decs) {
        let exact = c.exact.as_ref().map(decompose);
        if let Some(e) = &exact {
            if !e.identity_exact() {
                return Err(CliError::Breach(format!(
                    "{}: SE != MSE - diversity",
                    c.label
                )));
            }
        } else if !d.identity_within_tolerance() {
            return Err(CliError::Breach(format!(
                "{}: identity residual {}",
                c.label,
                d.residual()
            )));
        }
        if !d.crowd_beats_average() {
            return Err(CliError::Breach(format!("{}: SE exceeds MSE", c.label)));
        }
        rows.push(vec![
            c.label.clone(),
            format!("{:.6}", d.collective),
            format!("{:.6}", d.se),
            format!("{:.6}", d.mse),
            format!("{:.6}", d.diversity),
            exact.map_or("within 1e-12".into(), |e| {
                let se = fmt_rational(&e.se);
                if se.len() <= 24 {
                    format!("exact (SE = {se})")
                } else {
                    "exact".into()
                }
            }),
        ]);
    }
    b.line(md_table(
        &["case", "crowd", "SE", "MSE", "diversity", "identity"],
        rows,
    ));
    if let [first, second] = &cases[..] {
        let v = compare_two_signal(&first.float, &second.float);
        let m = se_max_monotonicity(&first.float, &second.float);
        b.line(format!(
            "SE ratio {:.2}, diversity ratio {:.2}. Error more than forty times larger while diversity more than triples: {}.",
            v.se_ratio,
            v.diversity_ratio,
            v.holds()
        ));
        if config.ensemble.is_none() {
            b.line(format!(
                "With the rounded SE values 0.1056 and 0.0025 the ratio is {:.2}.",
                v.rounded_ratio
            ));
        }
        b.line(format!(
            "Upper bound change {:+.6}; diversity rose and the error rose with it: {}.",
            m.delta_se_max, m.madness
        ));
    }
    let with_theta: Vec<(&str, f64, &_)> = cases
        .iter()
        .zip(&decs)
        .map(|(c, d)| (c.label.as_str(), *c.float.truth(), d))
        .collect();
    b.table("decomposition.csv", decomposition_csv(&with_theta));
    let labelled: Vec<(&str, &_)> = cases
        .iter()
        .zip(&decs)
        .map(|(c, d)| (c.label.as_str(), d))
        .collect();
    b.plot("decomposition.svg", decomposition_svg(&labelled));
    Ok(b)
}

pub fn fuzz(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let drop: FuzzDrop = config
        .drop
        .as_deref()
        .unwrap_or("none")
        .parse()
        .map_err(CliError::Input)?;
    let budget = config.budget.unwrap_or(DEFAULT_BUDGET);
    let r = fuzz_counterexample(drop, budget, config.seed());
    if drop == FuzzDrop::Nothing {
        if let Some(c) = r.found() {
            return Err(CliError::Breach(format!(
                "control instance {} contradicts the theorem: {}\n{}",
                c.index,
                c.claim,
                c.table()
            )));
        }
    }
    revalidate(&r).map_err(|e| CliError::Breach(e.to_string()))?;

    let mut b = ReportBundle::new("Counterexample search");
    b.line(format!(
        "Dropped assumption: {}. Budget {budget}, seed {}.\n",
        drop.name(),
        r.seed
    ));
    let sizes: Vec<Vec<String>> = r
        .by_size
        .iter()
        .map(|(n, k)| vec![n.to_string(), k.to_string()])
        .collect();
    b.line(md_table(&["states", "instances checked"], sizes.clone()));
    b.line(format!(
        "Checked {} instances; {} budget slots produced no valid instance.\n",
        r.tried, r.rejected
    ));
    b.table("fuzz.csv", to_csv(&["states", "instances"], sizes));
    match r.found() {
        Some(c) => {
            b.line(format!(
                "Counterexample at instance {} (re-validated independently): {}\n",
                c.index, c.claim
            ));
            b.line(format!("```\n{}```", c.table()));
            b.table(
                "counterexample.csv",
                to_csv(
                    &["index", "claim", "table"],
                    [vec![c.index.to_string(), c.claim.clone(), c.table()]],
                ),
            );
        }
        None if drop == FuzzDrop::Nothing => {
            b.line("No instance contradicts the theorem.");
        }
        None => b.line("No counterexample within the budget."),
    }
    Ok(b)
}

pub fn reproduce(config: &ExperimentConfig) -> Result<ReportBundle, CliError> {
    let name = config
        .fixture
        .as_deref()
        .ok_or_else(|| CliError::Input("reproduce needs a fixture name".into()))?;
    let inst = load_fixture(name)?;
    let checks = verify_fixture(name)?;
    let mut b = ReportBundle::new(format!("Fixture `{name}`"));
    b.line(format!(
        "```\n{}```\n",
        hpverify_core::instance::format_instance(&inst.landscape, inst.agents.as_ref())
    ));
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.key.clone(),
                c.expected.clone(),
                c.actual.clone().unwrap_or_else(|| "(missing)".into()),
                if c.passed() { "ok" } else { "MISMATCH" }.to_string(),
            ]
        })
        .collect();
    b.line(md_table(
        &["fact", "expected", "computed", "status"],
        rows.clone(),
    ));
    b.table(
        "facts.csv",
        to_csv(&["fact", "expected", "computed", "status"], rows),
    );
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.key.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Breach(format!(
            "{name}: facts differ from the golden file: {}",
            failed.join(", ")
        )));
    }
    b.line(format!("All {} facts reproduce.", checks.len()));
    Ok(b)
}
