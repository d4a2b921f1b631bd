use std::fmt;

use super::BenchError;
use crate::wls::wrap_angle;

/// Metric column names, in report order.
pub const METRIC_NAMES: [&str; 3] = ["rmse_pct", "mae_mag_pu", "mae_ang_rad"];

/// Voltage errors over every phase-node and time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `100 * RMSE` of the magnitude in p.u.
    pub rmse_pct: f64,
    pub mae_mag: f64,
    /// Mean absolute angle error in rad, wrapped to (-π, π].
    pub mae_ang: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 3] {
        [self.rmse_pct, self.mae_mag, self.mae_ang]
    }
}

/// Compares rectangular state series `[Re...; Im...]` step by step.
pub fn compute_metrics(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Metrics, BenchError> {
    if estimate.len() != truth.len() {
        return Err(BenchError::LengthMismatch {
            what: "time steps",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(BenchError::LengthMismatch {
            what: "time steps",
            expected: 1,
            found: 0,
        });
    }
    let (mut sq, mut abs_mag, mut abs_ang, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (xh, x) in estimate.iter().zip(truth) {
        if xh.len() != x.len() || x.len() % 2 != 0 {
            return Err(BenchError::LengthMismatch {
                what: "state vector",
                expected: x.len(),
                found: xh.len(),
            });
        }
        let k = x.len() / 2;
        for i in 0..k {
            let (vh, v) = ((xh[i]).hypot(xh[k + i]), x[i].hypot(x[k + i]));
            let (th, t) = (xh[k + i].atan2(xh[i]), x[k + i].atan2(x[i]));
            sq += (vh - v) * (vh - v);
            abs_mag += (vh - v).abs();
            abs_ang += wrap_angle(th - t).abs();
            count += 1;
        }
    }
    let n = count as f64;
    Ok(Metrics {
        rmse_pct: 100.0 * (sq / n).sqrt(),
        mae_mag: abs_mag / n,
        mae_ang: abs_ang / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Dt,
    Wls,
    Ablation,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dt, Method::Wls, Method::Ablation];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dt => "dt",
            Method::Wls => "wls",
            Method::Ablation => "ablation",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metrics of one method at one (α, seed) point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
    pub metrics: Metrics,
}

/// WLS outcomes at one (α, seed) point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WlsFailures {
    pub attempts: usize,
    pub rank_deficient: usize,
    pub no_convergence: usize,
}

/// Magnitude trace at one phase-node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub node: String,
    pub alpha: f64,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub truth: Vec<f64>,
    pub dt: Vec<f64>,
    /// `None` where WLS failed.
    pub wls: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub records: Vec<MetricRecord>,
    pub wls_failures: Vec<(f64, u64, WlsFailures)>,
    pub timeseries: Option<TimeSeries>,
}

/// min/mean/max of one metric over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub alpha: f64,
    pub metric: &'static str,
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.wls_failures.is_empty() && self.timeseries.is_none()
    }

    /// Distinct α values in order of first appearance.
    pub fn alphas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.alpha) {
                out.push(r.alpha);
            }
        }
        out
    }

    /// Summary statistics per method, α and metric. The mean sums values in
    /// record order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for method in Method::ALL {
            for alpha in self.alphas() {
                let group: Vec<&MetricRecord> =
                    self.records.iter().filter(|r| r.method == method && r.alpha == alpha).collect();
                if group.is_empty() {
                    continue;
                }
                for (k, metric) in METRIC_NAMES.iter().enumerate() {
                    let values: Vec<f64> = group.iter().map(|r| r.metrics.values()[k]).collect();
                    rows.push(SummaryRow {
                        method,
                        alpha,
                        metric,
                        n: values.len(),
                        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
                        mean: values.iter().sum::<f64>() / values.len() as f64,
                        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    });
                }
            }
        }
        rows
    }

    /// Mean of one metric for `method` at `alpha`, if any record exists.
    pub fn mean(&self, method: Method, alpha: f64, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.method == method && r.alpha == alpha && r.metric == metric)
            .map(|r| r.mean)
    }

    /// Fraction of WLS attempts at `alpha` that were rank deficient.
    pub fn wls_rank_deficient_fraction(&self, alpha: f64) -> Option<f64> {
        let (mut bad, mut total) = (0, 0);
        for (a, _, f) in &self.wls_failures {
            if *a == alpha {
                bad += f.rank_deficient;
                total += f.attempts;
            }
        }
        (total > 0).then(|| bad as f64 / total as f64)
    }
}
