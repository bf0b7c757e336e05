//! Line charts of metric columns against `epoch`, as standalone SVG.

use std::fmt::Write as _;
use std::fs;

use densefold::Error;

use crate::{CliResult, PlotArgs};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(epoch, value)`; rows with an empty cell are left out.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub epochs: Vec<f64>,
    /// Per series, one cell per row.
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn series(&self) -> Vec<Series> {
        self.columns
            .iter()
            .map(|(name, cells)| Series {
                name: name.clone(),
                points: self
                    .epochs
                    .iter()
                    .zip(cells)
                    .filter_map(|(&x, y)| y.map(|y| (x, y)))
                    .collect(),
            })
            .collect()
    }

    /// Tab-separated echo of the plotted columns.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch");
        for (name, _) in &self.columns {
            s.push('\t');
            s.push_str(name);
        }
        s.push('\n');
        for (r, x) in self.epochs.iter().enumerate() {
            s.push_str(&x.to_string());
            for (_, cells) in &self.columns {
                s.push('\t');
                if let Some(v) = cells[r] {
                    s.push_str(&v.to_string());
                }
            }
            s.push('\n');
        }
        s
    }
}

fn parse_cell(raw: &str, column: &str, row: usize) -> densefold::Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::Input(format!("column {column}, row {row}: not a number: {raw:?}")))
}

/// Pull `epoch` and the named columns out of a CSV.
pub fn read_table(csv_text: &str, names: &[&str]) -> densefold::Result<Table> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("metrics header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column `{name}`")))
    };
    let x_col = find("epoch")?;
    let cols: Vec<usize> = names
        .iter()
        .map(|n| find(n))
        .collect::<densefold::Result<_>>()?;
    let mut table = Table {
        epochs: Vec::new(),
        columns: names.iter().map(|n| (n.to_string(), Vec::new())).collect(),
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("metrics row {}: {e}", r + 1)))?;
        let x = parse_cell(rec.get(x_col).unwrap_or(""), "epoch", r + 1)?
            .ok_or_else(|| Error::Input(format!("row {} has no epoch", r + 1)))?;
        table.epochs.push(x);
        for (i, &c) in cols.iter().enumerate() {
            let cell = parse_cell(rec.get(c).unwrap_or(""), names[i], r + 1)?;
            table.columns[i].1.push(cell);
        }
    }
    Ok(table)
}

/// Range padded so that a constant series still spans some height.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(series: &[Series]) -> String {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let (x0, x1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    // Larger values sit higher, i.e. at smaller y.
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let (bx, by) = (LEFT + pw, TOP + ph);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP} V{by} H{bx}" fill="none" stroke="black"/>"#
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{by}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            by + 5.0,
            by + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&names.join(", "))
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            bx + 15.0,
            bx + 35.0,
            bx + 40.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn run(a: &PlotArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.metrics).map_err(|e| Error::io(&a.metrics, e))?;
    let names: Vec<&str> = a
        .series
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(crate::CliError::Usage("--series names no columns".into()));
    }
    let table = read_table(&text, &names)?;
    let series = table.series();
    if let Some(empty) = series.iter().find(|s| s.points.is_empty()) {
        return Err(Error::Input(format!("column `{}` has no values", empty.name)).into());
    }
    fs::write(&a.out, render_svg(&series)).map_err(|e| Error::io(&a.out, e))?;
    print!("{}", table.to_text());
    Ok(())
}
