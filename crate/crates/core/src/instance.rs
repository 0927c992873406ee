//! Plain-text instance tables.
//!
//! ```text
//! # anything after '#' is a comment, except the `# nu:` line
//! state  V    phi_1  phi_2  phi_3
//! # nu: 1/4 1/4 1/4 1/4
//! a      1/4  b      a      b
//! b      1/2  b      c      b
//! c      3/4  d      c      c
//! d      1    d      d      d
//! ```
//!
//! The header names the agent columns. The optional `# nu:` line lists start
//! probabilities in row order; it defaults to uniform. Values and
//! probabilities accept `p/q`, integers or decimals.

use thiserror::Error;

use crate::model::{validate_landscape, Agent, AgentSet, Landscape, ModelError, RawTable};
use crate::rational::{fmt_rational, parse_rational, Rational};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(line: usize, message: impl Into<String>) -> InstanceError {
    InstanceError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub landscape: Landscape,
    /// `None` when the table has no agent columns.
    pub agents: Option<AgentSet>,
}

impl Instance {
    pub fn agent_set(&self) -> Result<&AgentSet, ModelError> {
        self.agents.as_ref().ok_or(ModelError::EmptyAgentSet)
    }
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let mut header: Option<Vec<String>> = None;
    let mut nu: Option<(usize, Vec<Rational>)> = None;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim_start();
            if let Some(rest) = comment.strip_prefix("nu:") {
                if nu.is_some() {
                    return Err(parse_err(lineno, "duplicate `# nu:` line"));
                }
                let probs = rest
                    .split_whitespace()
                    .map(parse_rational)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
                nu = Some((lineno, probs));
            }
            continue;
        }
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if header.is_none() {
            if tokens.len() < 2 {
                return Err(parse_err(lineno, "header needs `state V` columns"));
            }
            header = Some(tokens);
        } else {
            rows.push((lineno, tokens));
        }
    }

    let header = header.ok_or_else(|| parse_err(0, "missing header row"))?;
    let agent_ids: Vec<String> = header[2..].to_vec();
    let width = header.len();
    let mut table = Vec::with_capacity(rows.len());
    for (lineno, tokens) in &rows {
        if tokens.len() != width {
            return Err(parse_err(
                *lineno,
                format!("expected {width} columns, found {}", tokens.len()),
            ));
        }
        let value = parse_rational(&tokens[1]).map_err(|e| parse_err(*lineno, e.to_string()))?;
        table.push((tokens[0].clone(), value));
    }
    let mut raw = RawTable::new(table);
    if let Some((_, probs)) = nu {
        raw = raw.with_start_dist(probs);
    }
    let landscape = validate_landscape(raw)?;

    let agents = if agent_ids.is_empty() {
        None
    } else {
        let mut agents = Vec::with_capacity(agent_ids.len());
        for (col, id) in agent_ids.iter().enumerate() {
            let mut map = Vec::with_capacity(rows.len());
            for (lineno, tokens) in &rows {
                let target = &tokens[col + 2];
                let y = landscape.index_of(target).ok_or_else(|| {
                    parse_err(*lineno, format!("unknown state `{target}` in column {id}"))
                })?;
                map.push(y);
            }
            agents.push(Agent::new(id.clone(), map));
        }
        Some(AgentSet::new(agents)?)
    };
    Ok(Instance { landscape, agents })
}

/// Renders an instance in the table format accepted by [`parse_instance`].
pub fn format_instance(landscape: &Landscape, agents: Option<&AgentSet>) -> String {
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut head = vec!["state".to_string(), "V".to_string()];
    if let Some(set) = agents {
        head.extend(set.ids());
    }
    grid.push(head);
    for x in 0..landscape.len() {
        let mut row = vec![
            landscape.label(x).to_string(),
            fmt_rational(landscape.value(x)),
        ];
        if let Some(set) = agents {
            row.extend(set.iter().map(|a| landscape.label(a.apply(x)).to_string()));
        }
        grid.push(row);
    }
    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let render = |row: &[String]| {
        row.iter()
            .enumerate()
            .map(|(c, cell)| {
                if c + 1 == cols {
                    cell.clone()
                } else {
                    format!("{cell:<w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = String::new();
    out.push_str(&render(&grid[0]));
    out.push('\n');
    let uniform = landscape
        .start_dist()
        .iter()
        .all(|p| p == landscape.start_prob(0));
    if !uniform {
        out.push_str("# nu:");
        for p in landscape.start_dist() {
            out.push(' ');
            out.push_str(&fmt_rational(p));
        }
        out.push('\n');
    }
    for row in &grid[1..] {
        out.push_str(&render(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    const HP: &str = "\
# worked example
state  V    phi_1  phi_2  phi_3
a      1/4  b      a      b
b      1/2  b      c      b
c      3/4  d      c      c
d      1    d      d      d
";

    #[test]
    fn parses_the_worked_example() {
        let inst = parse_instance(HP).unwrap();
        let l = &inst.landscape;
        assert_eq!(l.len(), 4);
        assert_eq!(l.value(2), &ratio(3, 4));
        let agents = inst.agent_set().unwrap();
        assert_eq!(agents.ids(), vec!["phi_1", "phi_2", "phi_3"]);
        assert_eq!(agents.get(1).map, vec![0, 2, 2, 3]);
        assert_eq!(l.start_prob(3), &ratio(1, 4));
    }

    #[test]
    fn reads_start_distribution_and_decimals() {
        let text = "state V f\n# nu: 0.5 1/4 0.25\nx 0.2 y\ny 0.5 z\nz 1 z\n";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.landscape.start_prob(0), &ratio(1, 2));
        assert_eq!(inst.landscape.value(0), &ratio(1, 5));
        assert_eq!(inst.landscape.value(2), &int(1));
    }

    #[test]
    fn landscape_only_tables_have_no_agents() {
        let inst = parse_instance("state V\nx 0\ny 1\n").unwrap();
        assert!(inst.agents.is_none());
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_instance("state V f\nx 0 y\ny 1 q\n").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 3, .. }), "{err}");
        let err = parse_instance("state V f\nx 0\n").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 2, .. }));
        let err = parse_instance("state V\nx zero\n").unwrap_err();
        assert!(matches!(err, InstanceError::Parse { line: 2, .. }));
        assert!(matches!(
            parse_instance("state V\nx 1/2\n").unwrap_err(),
            InstanceError::Model(ModelError::NoOptimum)
        ));
    }

    #[test]
    fn format_then_parse_is_identity() {
        let inst = parse_instance(HP).unwrap();
        let text = format_instance(&inst.landscape, inst.agents.as_ref());
        assert_eq!(parse_instance(&text).unwrap(), inst);

        let skewed = "state V f\n# nu: 1/2 1/3 1/6\nx 0 y\ny 1/2 z\nz 1 z\n";
        let inst = parse_instance(skewed).unwrap();
        let text = format_instance(&inst.landscape, inst.agents.as_ref());
        assert_eq!(parse_instance(&text).unwrap(), inst);
    }
}
