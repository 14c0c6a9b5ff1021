//! SVG plots from result CSVs, no plotting dependency.
//!
//! A width sweep becomes a log-log figure of corrected W2 (mean over
//! replicates) and the bound against width, with fitted slopes annotated.
//! A depth profile becomes a linear figure of the bound total against depth.

use crate::error::{Error, Result};
use crate::experiment;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Default)]
pub struct PlotOutput {
    pub paths: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

const WIDTH: f64 = 680.0;
const HEIGHT: f64 = 460.0;
const ML: f64 = 80.0; // left margin
const MR: f64 = 30.0;
const MT: f64 = 40.0;
const MB: f64 = 60.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>, // data coordinates
    slope: Option<f64>,
}

/// Least-squares slope of y against x (already transformed coordinates).
fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

struct Figure {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
}

impl Figure {
    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.log10()
        } else {
            x
        }
    }

    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.log10()
        } else {
            y
        }
    }

    fn render(&self) -> String {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                xs.push(self.tx(x));
                ys.push(self.ty(y));
            }
        }
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let px = |x: f64| ML + (self.tx(x) - x0) / (x1 - x0) * (WIDTH - ML - MR);
        let py = |y: f64| HEIGHT - MB - (self.ty(y) - y0) / (y1 - y0) * (HEIGHT - MT - MB);

        let mut svg = String::new();
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
             font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            WIDTH / 2.0,
            escape(&self.title)
        );

        // axes
        let _ = write!(
            svg,
            "<line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
             <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{0}\" stroke=\"black\"/>\n",
            HEIGHT - MB,
            WIDTH - MR
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            (ML + WIDTH - MR) / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = write!(
            svg,
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            (MT + HEIGHT - MB) / 2.0,
            (MT + HEIGHT - MB) / 2.0,
            escape(&self.y_label)
        );

        // ticks
        for t in ticks(x0, x1, self.log_x) {
            let xpix = ML + (t.0 - x0) / (x1 - x0) * (WIDTH - ML - MR);
            let _ = write!(
                svg,
                "<line x1=\"{xpix}\" y1=\"{0}\" x2=\"{xpix}\" y2=\"{1}\" stroke=\"black\"/>\n\
                 <text x=\"{xpix}\" y=\"{2}\" text-anchor=\"middle\">{3}</text>\n",
                HEIGHT - MB,
                HEIGHT - MB + 5.0,
                HEIGHT - MB + 20.0,
                t.1
            );
        }
        for t in ticks(y0, y1, self.log_y) {
            let ypix = HEIGHT - MB - (t.0 - y0) / (y1 - y0) * (HEIGHT - MT - MB);
            let _ = write!(
                svg,
                "<line x1=\"{0}\" y1=\"{ypix}\" x2=\"{ML}\" y2=\"{ypix}\" stroke=\"black\"/>\n\
                 <text x=\"{1}\" y=\"{2}\" text-anchor=\"end\">{3}</text>\n",
                ML - 5.0,
                ML - 8.0,
                ypix + 4.0,
                t.1
            );
        }

        // series
        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            if s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                    .collect();
                let _ = write!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    pts.join(" ")
                );
            }
            for &(x, y) in &s.points {
                let _ = write!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                    px(x),
                    py(y)
                );
            }
            let label = match s.slope {
                Some(sl) => format!("{} (slope \u{2248} {:.3})", s.name, sl),
                None => s.name.clone(),
            };
            let _ = write!(
                svg,
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
                ML + 10.0,
                MT + 16.0 * (si as f64 + 1.0),
                escape(&label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Tick positions and labels in transformed coordinates.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    let mut out = Vec::new();
    if log {
        let a = lo.floor() as i64;
        let b = hi.ceil() as i64;
        for d in a..=b {
            let t = d as f64;
            if t >= lo && t <= hi {
                out.push((t, format!("1e{d}")));
            }
        }
        if out.len() < 2 {
            // decade-free range: fall back to three plain ticks
            for i in 0..3 {
                let t = lo + (hi - lo) * i as f64 / 2.0;
                out.push((t, format!("{:.2}", 10f64.powf(t))));
            }
        }
    } else {
        for i in 0..5 {
            let t = lo + (hi - lo) * i as f64 / 4.0;
            out.push((t, format!("{t:.3}")));
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Table {
    header: Vec<String>,
    records: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn num(&self, row: &[String], idx: usize) -> Option<f64> {
        row.get(idx).and_then(|s| s.parse::<f64>().ok())
    }
}

/// Mean of `value_col` grouped by `key_col`, keys sorted ascending.
fn group_mean(table: &Table, key_col: usize, value_col: usize) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for row in &table.records {
        let (Some(k), Some(v)) = (table.num(row, key_col), table.num(row, value_col)) else {
            continue;
        };
        match acc.iter_mut().find(|(key, _, _)| *key == k) {
            Some((_, sum, n)) => {
                *sum += v;
                *n += 1;
            }
            None => acc.push((k, v, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    acc.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}

pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<PlotOutput> {
    let (header, records) = experiment::read_csv(csv_path)?;
    let records = match header.iter().position(|h| h == "status") {
        Some(si) => records
            .into_iter()
            .filter(|r| r.get(si).map(|s| s == "ok").unwrap_or(true))
            .collect(),
        None => records,
    };
    let table = Table { header, records };
    let mut out = PlotOutput::default();
    if table.records.is_empty() {
        out.warnings.push("no usable rows in the results file".into());
        return Ok(out);
    }
    let width_col = table
        .col("width")
        .ok_or_else(|| Error::Config("results file has no width column".into()))?;
    let depth_col = table
        .col("depth")
        .ok_or_else(|| Error::Config("results file has no depth column".into()))?;

    let distinct = |col: usize| {
        let mut vals: Vec<f64> = table
            .records
            .iter()
            .filter_map(|r| table.num(r, col))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        vals
    };
    let widths = distinct(width_col);
    let depths = distinct(depth_col);
    fs::create_dir_all(out_dir)?;

    if depths.len() > 1 {
        // depth profile: bound total against depth
        let Some(bound_col) = table.col("bound_total") else {
            out.warnings.push("no bound_total column; skipped depth figure".into());
            return Ok(out);
        };
        let points = group_mean(&table, depth_col, bound_col);
        let fig = Figure {
            title: "Bound total vs depth".into(),
            x_label: "depth L".into(),
            y_label: "bound total".into(),
            log_x: false,
            log_y: false,
            series: vec![Series {
                name: "bound_total".into(),
                slope: None,
                points,
            }],
        };
        let path = out_dir.join("bound_vs_depth.svg");
        fs::write(&path, fig.render())?;
        out.paths.push(path);
        return Ok(out);
    }

    // width sweep: corrected estimates and the bound, log-log
    let mut series = Vec::new();
    let corrected_cols: Vec<(String, usize)> = table
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_suffix("_corrected").map(|name| (name.to_string(), i))
        })
        .collect();
    if corrected_cols.is_empty() {
        out.warnings
            .push("no *_corrected columns; drawing the bound only".into());
    }
    for (name, col) in corrected_cols {
        let mut points = group_mean(&table, width_col, col);
        let before = points.len();
        points.retain(|&(_, y)| y > 0.0);
        if points.len() < before {
            out.warnings.push(format!(
                "{name}: dropped {} nonpositive value(s) from the log-log figure",
                before - points.len()
            ));
        }
        if points.is_empty() {
            out.warnings.push(format!("{name}: nothing to plot"));
            continue;
        }
        let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
        series.push(Series {
            name,
            slope: fit_slope(&logs),
            points,
        });
    }
    if let Some(bound_col) = table.col("bound_total") {
        let points: Vec<(f64, f64)> = group_mean(&table, width_col, bound_col)
            .into_iter()
            .filter(|&(_, y)| y > 0.0)
            .collect();
        if !points.is_empty() {
            let logs: Vec<(f64, f64)> =
                points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
            series.push(Series {
                name: "bound_total".into(),
                slope: fit_slope(&logs),
                points,
            });
        }
    } else {
        out.warnings.push("no bound_total column; skipped bound series".into());
    }
    if series.is_empty() {
        out.warnings.push("no plottable series; no figure written".into());
        return Ok(out);
    }
    if widths.len() < 2 {
        out.warnings
            .push("single width value: scatter only, no slope fits".into());
        for s in &mut series {
            s.slope = None;
        }
    }
    let fig = Figure {
        title: "W2 and bound vs width".into(),
        x_label: "hidden width".into(),
        y_label: "W2".into(),
        log_x: true,
        log_y: true,
        series,
    };
    let path = out_dir.join("w2_vs_width.svg");
    fs::write(&path, fig.render())?;
    out.paths.push(path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;
    use tempfile::TempDir;

    fn write_csv(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn width_figure_with_slopes() {
        let dir = TempDir::new().unwrap();
        let csv = write_csv(
            dir.path(),
            "sweep.csv",
            "config_hash,depth,width,replicate,sorted_1d_corrected,bound_total,duration_s,status\n\
             a,2,16,0,0.10,0.40,0.1,ok\n\
             a,2,16,1,0.12,0.40,0.1,ok\n\
             a,2,64,0,0.05,0.20,0.1,ok\n\
             a,2,64,1,0.06,0.20,0.1,ok\n\
             a,2,256,0,0.027,0.10,0.1,ok\n",
        );
        let out = emit_plots(&csv, dir.path()).unwrap();
        assert_eq!(out.paths.len(), 1);
        let svg = fs::read_to_string(&out.paths[0]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("slope"));
        assert!(svg.contains("sorted_1d"));
        assert!(svg.contains("bound_total"));
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    }

    #[test]
    fn single_width_is_scatter_with_warning() {
        let dir = TempDir::new().unwrap();
        let csv = write_csv(
            dir.path(),
            "sweep.csv",
            "config_hash,depth,width,replicate,sorted_1d_corrected,bound_total,duration_s,status\n\
             a,2,16,0,0.10,0.40,0.1,ok\n\
             a,2,16,1,0.12,0.40,0.1,ok\n",
        );
        let out = emit_plots(&csv, dir.path()).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert!(out.warnings.iter().any(|w| w.contains("single width")));
        let svg = fs::read_to_string(&out.paths[0]).unwrap();
        assert!(!svg.contains("slope"));
    }

    #[test]
    fn depth_figure() {
        let dir = TempDir::new().unwrap();
        let csv = write_csv(
            dir.path(),
            "depth.csv",
            "config_hash,depth,width,replicate,bound_total,duration_s,status\n\
             a,2,32,0,0.5,0.0,ok\n\
             a,3,32,0,0.8,0.0,ok\n\
             a,4,32,0,1.0,0.0,ok\n",
        );
        let out = emit_plots(&csv, dir.path()).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert!(out.paths[0].ends_with("bound_vs_depth.svg"));
        let svg = fs::read_to_string(&out.paths[0]).unwrap();
        assert!(svg.contains("depth"));
    }

    #[test]
    fn missing_estimator_columns_warns_but_draws_bound() {
        let dir = TempDir::new().unwrap();
        let csv = write_csv(
            dir.path(),
            "sweep.csv",
            "config_hash,depth,width,replicate,bound_total,duration_s,status\n\
             a,2,16,0,0.4,0.0,ok\n\
             a,2,64,0,0.2,0.0,ok\n",
        );
        let out = emit_plots(&csv, dir.path()).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert!(out.warnings.iter().any(|w| w.contains("_corrected")));
    }

    #[test]
    fn truncated_rows_are_ignored() {
        let dir = TempDir::new().unwrap();
        let csv = write_csv(
            dir.path(),
            "sweep.csv",
            "config_hash,depth,width,replicate,sorted_1d_corrected,bound_total,duration_s,status\n\
             a,2,16,0,0.10,0.40,0.1,ok\n\
             a,2,64,0,0.05,0.20,0.1,ok\n\
             ,,,,,,,truncated: boom\n",
        );
        let out = emit_plots(&csv, dir.path()).unwrap();
        assert_eq!(out.paths.len(), 1);
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = TempDir::new().unwrap();
        assert!(emit_plots(&dir.path().join("nope.csv"), dir.path()).is_err());
    }
}
