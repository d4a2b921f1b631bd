use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{Method, MetricRecord, Metrics, MetricsReport, TimeSeries, METRIC_NAMES};
use super::{io_error, BenchError};
use crate::model::TrainReport;

fn write(path: &Path, text: &str) -> Result<(), BenchError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes `metrics.csv`, `summary.csv` and `wls_failures.csv`, plus
/// `sweep.svg` and `timeseries.svg` when there is data to plot.
pub fn emit_report(report: &MetricsReport, out_dir: impl AsRef<Path>) -> Result<(), BenchError> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;

    let mut metrics = String::from("method,alpha,seed,metric,value\n");
    for r in &report.records {
        for (name, v) in METRIC_NAMES.iter().zip(r.metrics.values()) {
            writeln!(metrics, "{},{},{},{name},{v}", r.method, r.alpha, r.seed).unwrap();
        }
    }
    write(&out.join("metrics.csv"), &metrics)?;

    let mut failures = String::from("alpha,seed,attempts,rank_deficient,no_convergence\n");
    for (alpha, seed, f) in &report.wls_failures {
        writeln!(failures, "{alpha},{seed},{},{},{}", f.attempts, f.rank_deficient, f.no_convergence).unwrap();
    }
    write(&out.join("wls_failures.csv"), &failures)?;

    emit_summary(report, out)?;
    if let Some(ts) = &report.timeseries {
        write(&out.join("timeseries.svg"), &timeseries_svg(ts))?;
    }
    Ok(())
}

/// Writes `summary.csv`, and `sweep.svg` when the report has records.
pub fn emit_summary(report: &MetricsReport, out_dir: impl AsRef<Path>) -> Result<(), BenchError> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut summary = String::from("method,alpha,metric,n,min,mean,max\n");
    for s in report.summary() {
        writeln!(summary, "{},{},{},{},{},{},{}", s.method, s.alpha, s.metric, s.n, s.min, s.mean, s.max).unwrap();
    }
    write(&out.join("summary.csv"), &summary)?;
    if !report.records.is_empty() {
        write(&out.join("sweep.svg"), &sweep_svg(report))?;
    }
    Ok(())
}

/// Reads the records of a `metrics.csv` written by [`emit_report`].
pub fn parse_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let bad = |detail: String| BenchError::MalformedReport {
        path: path.display().to_string(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some("method,alpha,seed,metric,value") {
        return Err(bad("unexpected header".into()));
    }
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    if !rows.len().is_multiple_of(METRIC_NAMES.len()) {
        return Err(bad("row count is not a multiple of the metric count".into()));
    }
    let mut records = Vec::with_capacity(rows.len() / METRIC_NAMES.len());
    for (i, chunk) in rows.chunks(METRIC_NAMES.len()).enumerate() {
        let mut values = [0.0; 3];
        let first = &chunk[0];
        for (k, row) in chunk.iter().enumerate() {
            if row.len() != 5 || row[3] != METRIC_NAMES[k] || row[..3] != first[..3] {
                return Err(bad(format!("record {i} is not a complete metric group")));
            }
            values[k] = row[4].parse().map_err(|_| bad(format!("bad value `{}`", row[4])))?;
        }
        records.push(MetricRecord {
            method: Method::parse(first[0]).ok_or_else(|| bad(format!("unknown method `{}`", first[0])))?,
            alpha: first[1].parse().map_err(|_| bad(format!("bad alpha `{}`", first[1])))?,
            seed: first[2].parse().map_err(|_| bad(format!("bad seed `{}`", first[2])))?,
            metrics: Metrics {
                rmse_pct: values[0],
                mae_mag: values[1],
                mae_ang: values[2],
            },
        });
    }
    Ok(records)
}

/// Per-epoch losses as `model,epoch,train_loss,val_loss`; a blank
/// `val_loss` means there were no validation windows.
pub fn write_history_csv(path: impl AsRef<Path>, runs: &[(&str, &TrainReport)]) -> Result<(), BenchError> {
    let mut text = String::from("model,epoch,train_loss,val_loss\n");
    for (name, report) in runs {
        for h in &report.history {
            let val = h.validation.map(|v| v.to_string()).unwrap_or_default();
            writeln!(text, "{name},{},{},{val}", h.epoch, h.train).unwrap();
        }
    }
    write(path.as_ref(), &text)
}

const COLORS: [(Method, &str); 3] = [(Method::Dt, "#1f77b4"), (Method::Wls, "#d62728"), (Method::Ablation, "#2ca02c")];

fn color(m: Method) -> &'static str {
    COLORS.iter().find(|(k, _)| *k == m).map(|(_, c)| *c).unwrap()
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.xmax - self.xmin).max(1e-12);
        self.x0 + (x - self.xmin) / span * self.w
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.ymax - self.ymin).max(1e-12);
        self.y0 + self.h - (y - self.ymin) / span * self.h
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        writeln!(svg, r##"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#, x0 + w / 2.0, y0 - 8.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{xlabel}</text>"#, x0 + w / 2.0, y0 + h + 32.0).unwrap();
        for k in 0..=4 {
            let fy = self.ymin + (self.ymax - self.ymin) * k as f64 / 4.0;
            let fx = self.xmin + (self.xmax - self.xmin) * k as f64 / 4.0;
            writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="9">{fy:.3e}</text>"#, x0 - 4.0, self.py(fy) + 3.0).unwrap();
            writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="9">{}</text>"#, self.px(fx), y0 + h + 14.0, trim(fx)).unwrap();
        }
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        (lo - 0.5 * lo.abs().max(1e-9), hi + 0.5 * hi.abs().max(1e-9))
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// One panel per metric; mean over seeds as a polyline per method, with
/// min-max whiskers.
fn sweep_svg(report: &MetricsReport) -> String {
    let summary = report.summary();
    let alphas = report.alphas();
    let (pw, ph, margin) = (300.0, 220.0, 70.0);
    let width = margin + METRIC_NAMES.len() as f64 * (pw + margin);
    let height = ph + 2.0 * margin + 30.0;
    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#).unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (xmin, xmax) = if alphas.len() > 1 {
        range(alphas.iter().copied())
    } else {
        (alphas[0] - 0.05, alphas[0] + 0.05)
    };
    for (p, metric) in METRIC_NAMES.iter().enumerate() {
        let rows: Vec<_> = summary.iter().filter(|s| s.metric == *metric).collect();
        let (ymin, ymax) = range(rows.iter().flat_map(|r| [r.min, r.max]));
        let frame = Frame {
            x0: margin + p as f64 * (pw + margin),
            y0: margin,
            w: pw,
            h: ph,
            xmin,
            xmax,
            ymin: ymin.min(0.0f64.max(ymin)),
            ymax,
        };
        frame.axes(&mut svg, metric, "missing rate α");
        for method in Method::ALL {
            let pts: Vec<_> = rows.iter().filter(|r| r.method == method).collect();
            if pts.is_empty() {
                continue;
            }
            let c = color(method);
            for r in &pts {
                let x = frame.px(r.alpha);
                writeln!(svg, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}" stroke-opacity="0.5"/>"#, frame.py(r.min), frame.py(r.max)).unwrap();
            }
            let coords: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", frame.px(r.alpha), frame.py(r.mean))).collect();
            writeln!(
                svg,
                r#"<polyline class="series" data-method="{method}" data-metric="{metric}" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
                coords.join(" ")
            )
            .unwrap();
        }
    }
    for (i, method) in Method::ALL.iter().enumerate() {
        let x = margin + i as f64 * 110.0;
        let y = height - 16.0;
        writeln!(svg, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/>"#, y - 4.0, color(*method)).unwrap();
        writeln!(svg, r#"<text x="{}" y="{y}" font-size="11">{method}</text>"#, x + 18.0).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn path_data(frame: &Frame, steps: &[usize], values: impl Iterator<Item = Option<f64>>) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (s, v) in steps.iter().zip(values) {
        match v {
            Some(v) => {
                let cmd = if pen_down { 'L' } else { 'M' };
                write!(d, "{cmd}{:.1},{:.1} ", frame.px(*s as f64), frame.py(v)).unwrap();
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d.trim_end().to_string()
}

/// Estimated and true magnitude at one node over the scored steps.
fn timeseries_svg(ts: &TimeSeries) -> String {
    let (w, h, margin) = (720.0, 260.0, 70.0);
    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">"#, w + 2.0 * margin, h + 2.0 * margin + 20.0).unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let all = ts.truth.iter().chain(&ts.dt).copied().chain(ts.wls.iter().flatten().copied());
    let (ymin, ymax) = range(all);
    let (xmin, xmax) = (
        *ts.steps.first().unwrap_or(&0) as f64,
        (*ts.steps.last().unwrap_or(&1) as f64).max(ts.steps.first().map_or(1.0, |&s| s as f64 + 1.0)),
    );
    let frame = Frame {
        x0: margin,
        y0: margin,
        w,
        h,
        xmin,
        xmax,
        ymin,
        ymax,
    };
    let title = format!("|V| at {} (α = {}, seed {}) [p.u.]", ts.node, ts.alpha, ts.seed);
    frame.axes(&mut svg, &title, "time step");
    let series: [(&str, &str, Vec<Option<f64>>); 3] = [
        ("truth", "#000000", ts.truth.iter().map(|&v| Some(v)).collect()),
        ("dt", color(Method::Dt), ts.dt.iter().map(|&v| Some(v)).collect()),
        ("wls", color(Method::Wls), ts.wls.clone()),
    ];
    for (i, (name, c, values)) in series.iter().enumerate() {
        let d = path_data(&frame, &ts.steps, values.iter().copied());
        if !d.is_empty() {
            writeln!(svg, r#"<path class="series" data-series="{name}" d="{d}" fill="none" stroke="{c}" stroke-width="1.5"/>"#).unwrap();
        }
        let x = margin + i as f64 * 90.0;
        let y = h + 2.0 * margin + 4.0;
        writeln!(svg, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{c}"/>"#, y - 4.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{y}" font-size="11">{name}</text>"#, x + 18.0).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
