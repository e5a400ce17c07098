//! SVG rendering of a summary file: one polyline of the mean `R_n/n` per
//! strategy with a ±1 std band polygon behind it.
//!
//! The root element carries `data-x-min`, `data-x-max`, `data-y-min` and
//! `data-y-max` together with the plot rectangle (`data-left`, `data-top`,
//! `data-width`, `data-height`) so coordinates can be mapped back to values.

use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 30.0;
const PLOT_W: f64 = 470.0;
const PLOT_H: f64 = 380.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("cannot read {0}: {1}")]
    Missing(String, std::io::Error),
    #[error("malformed summary: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rounds: Vec<f64>,
    /// `(label, mean, std)` per strategy.
    pub series: Vec<(String, Vec<f64>, Vec<f64>)>,
}

pub fn read_summary(path: &Path) -> Result<SummaryTable, PlotError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PlotError::Missing(path.display().to_string(), e))?;
    parse_summary(&text)
}

pub fn parse_summary(text: &str) -> Result<SummaryTable, PlotError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| PlotError::Malformed(e.to_string()))?
        .clone();
    if header.get(0) != Some("n") || header.len() < 3 || header.len() % 2 == 0 {
        return Err(PlotError::Malformed(
            "expected columns n,<label>_mean,<label>_std,...".into(),
        ));
    }
    let mut series = Vec::new();
    for pair in 0..(header.len() - 1) / 2 {
        let m = &header[1 + 2 * pair];
        let s = &header[2 + 2 * pair];
        let label = m
            .strip_suffix("_mean")
            .filter(|l| s.strip_suffix("_std") == Some(*l))
            .ok_or_else(|| PlotError::Malformed(format!("unpaired columns {m}, {s}")))?;
        series.push((label.to_string(), Vec::new(), Vec::new()));
    }
    let mut rounds = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| PlotError::Malformed(e.to_string()))?;
        let values: Vec<f64> = row
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| PlotError::Malformed(format!("{v}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        rounds.push(values[0]);
        for (k, s) in series.iter_mut().enumerate() {
            s.1.push(values[1 + 2 * k]);
            s.2.push(values[2 + 2 * k]);
        }
    }
    if rounds.is_empty() {
        return Err(PlotError::Malformed("summary has no rows".into()));
    }
    Ok(SummaryTable { rounds, series })
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * PLOT_W
    }

    fn py(&self, y: f64) -> f64 {
        TOP + (self.y_max - y) / (self.y_max - self.y_min) * PLOT_H
    }
}

fn points(xs: impl Iterator<Item = (f64, f64)>) -> String {
    xs.map(|(x, y)| format!("{x:.4},{y:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_svg(table: &SummaryTable, title: &str) -> String {
    let x_min = table.rounds[0];
    let mut x_max = *table.rounds.last().unwrap();
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, mean, std) in &table.series {
        for (m, s) in mean.iter().zip(std) {
            y_min = y_min.min(m - s);
            y_max = y_max.max(m + s);
        }
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-9);
    let frame = Frame {
        x_min,
        x_max,
        y_min: y_min - pad,
        y_max: y_max + pad,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-left="{LEFT}" data-top="{TOP}" data-width="{PLOT_W}" data-height="{PLOT_H}">"#,
        frame.x_min, frame.x_max, frame.y_min, frame.y_max
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + PLOT_W / 2.0,
        escape(title)
    );

    for (k, (label, mean, std)) in table.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper = table
            .rounds
            .iter()
            .zip(mean.iter().zip(std))
            .map(|(n, (m, s))| (frame.px(*n), frame.py(m + s)));
        let lower = table
            .rounds
            .iter()
            .zip(mean.iter().zip(std))
            .rev()
            .map(|(n, (m, s))| (frame.px(*n), frame.py(m - s)));
        let _ = writeln!(
            svg,
            r#"<polygon class="band" data-label="{}" points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            escape(label),
            points(upper.chain(lower))
        );
        let line = table
            .rounds
            .iter()
            .zip(mean)
            .map(|(n, m)| (frame.px(*n), frame.py(*m)));
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" data-label="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            escape(label),
            points(line)
        );
    }

    // axes and ticks
    let bottom = TOP + PLOT_H;
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#,
        LEFT + PLOT_W
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = frame.x_min + f * (frame.x_max - frame.x_min);
        let yv = frame.y_min + f * (frame.y_max - frame.y_min);
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            frame.px(xv),
            bottom + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            LEFT - 6.0,
            frame.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle" font-size="13">iteration</text>"#,
        LEFT + PLOT_W / 2.0,
        bottom + 40.0
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="20" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 20 {})">cumulative regret per round</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );

    let legend_x = LEFT + PLOT_W + 20.0;
    for (k, (label, _, _)) in table.series.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<g class="legend-entry"><line x1="{legend_x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{}</text></g>"#,
            legend_x + 20.0,
            legend_x + 26.0,
            y + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
