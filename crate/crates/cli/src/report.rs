use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

/// Output of one subcommand before it is written anywhere.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub title: String,
    /// Markdown body without the provenance block.
    pub summary: String,
    /// `(file name, CSV text)` in emission order.
    pub tables: Vec<(String, String)>,
    /// `(file name, SVG text)`.
    pub plots: Vec<(String, String)>,
}

impl ReportBundle {
    pub fn new(title: impl Into<String>) -> Self {
        ReportBundle {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.tables.push((name.to_string(), csv));
    }

    pub fn plot(&mut self, name: &str, svg: String) {
        self.plots.push((name.to_string(), svg));
    }

    pub fn render(&self, provenance: &Provenance) -> String {
        format!(
            "# {}\n\n{}\n{}",
            self.title,
            self.summary,
            provenance.markdown()
        )
    }

    /// Writes the selected artifacts under `dir` and returns their paths.
    pub fn write(
        &self,
        dir: &Path,
        config: &ExperimentConfig,
        provenance: &Provenance,
    ) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, text: &str| -> Result<(), CliError> {
            let path = dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
            Ok(())
        };
        if config.wants(Format::Md) {
            put("summary.md", &self.render(provenance))?;
        }
        if config.wants(Format::Csv) {
            for (name, csv) in &self.tables {
                put(name, csv)?;
            }
        }
        if config.wants(Format::Svg) {
            for (name, svg) in &self.plots {
                put(name, svg)?;
            }
        }
        put("provenance.toml", &provenance.toml())?;
        let mut portable = config.clone();
        portable.out = None;
        put("config.toml", &portable.to_toml())?;
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Vec<(&'static str, &'static str)>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Provenance {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Provenance {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed(),
            versions: vec![
                ("hpverify", env!("CARGO_PKG_VERSION")),
                ("hpverify-core", hpverify_core::VERSION),
            ],
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("## Provenance\n\n");
        let _ = writeln!(s, "- command: `{}`", self.command);
        let _ = writeln!(s, "- config sha256: `{}`", self.config_hash);
        let _ = writeln!(s, "- master seed: {}", self.seed);
        for (name, v) in &self.versions {
            let _ = writeln!(s, "- {name} {v}");
        }
        let _ = writeln!(s, "- generated at: {} (unix seconds)", self.timestamp);
        s
    }

    pub fn toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = \"{}\"", self.command);
        let _ = writeln!(s, "config_sha256 = \"{}\"", self.config_hash);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (name, v) in &self.versions {
            let _ = writeln!(s, "\"{name}\" = \"{v}\"");
        }
        let _ = writeln!(s, "timestamp = {}", self.timestamp);
        s
    }
}

/// Markdown table with a header row.
pub fn md_table<R, C>(header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = C>,
    C: IntoIterator<Item = String>,
{
    let mut s = format!(
        "| {} |\n|{}\n",
        header.join(" | "),
        "---|".repeat(header.len())
    );
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|c| c.replace('|', "\\|")).collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grouped bar chart with values in `[0, 1]`; one color per series.
pub fn bar_chart_svg(categories: &[String], series: &[(&str, &str, Vec<f64>)]) -> String {
    const BAR: f64 = 18.0;
    const GROUP_GAP: f64 = 24.0;
    const PLOT_H: f64 = 200.0;
    const LEFT: f64 = 40.0;
    const TOP: f64 = 30.0;
    let group_w = BAR * series.len() as f64 + GROUP_GAP;
    let width = LEFT + group_w * categories.len() as f64 + 20.0;
    let height = TOP + PLOT_H + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let base = TOP + PLOT_H;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
        width - 10.0
    );
    for tick in [0.0, 0.5, 1.0] {
        let y = base - tick * PLOT_H;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick:.1}</text>"#,
            LEFT - 4.0,
            y + 4.0
        );
    }
    for (c, label) in categories.iter().enumerate() {
        let x0 = LEFT + GROUP_GAP / 2.0 + c as f64 * group_w;
        for (k, (_, color, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let h = v * PLOT_H;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{BAR}" height="{h:.1}" fill="{color}"/>"#,
                x0 + k as f64 * BAR,
                base - h
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + BAR * series.len() as f64 / 2.0,
            base + 16.0,
            xml_escape(label)
        );
    }
    for (k, (name, color, _)) in series.iter().enumerate() {
        let x = LEFT + k as f64 * 120.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="8" width="10" height="10" fill="{color}"/><text x="{:.1}" y="17">{}</text>"#,
            x + 14.0,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md_table_escapes_pipes() {
        let t = md_table(&["a", "b"], [vec!["x|y".to_string(), "z".to_string()]]);
        assert!(t.contains("x\\|y"));
        assert_eq!(t.lines().count(), 3);
    }

    #[test]
    fn chart_has_one_bar_per_value() {
        let svg = bar_chart_svg(
            &["s1".into(), "s2".into()],
            &[("A", "black", vec![1.0, 0.5]), ("D", "red", vec![0.2, 0.4])],
        );
        assert_eq!(svg.matches("<rect").count(), 4 + 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
