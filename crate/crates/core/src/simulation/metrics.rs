use serde::{Deserialize, Serialize};

use super::{Estimator, Population, ReplicationResult, SimConfig, SimParameter};

/// Monte Carlo summary of one (estimator, variable, parameter) cell. Bias,
/// SE and RMSE are multiplied by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: Estimator,
    pub variable: String,
    pub rho: f64,
    pub parameter: SimParameter,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub se: f64,
    /// `sqrt(bias^2 + se^2)`.
    pub rmse: f64,
    pub n_valid: usize,
    pub n_missing: usize,
    /// False when fewer than two estimates exist; `se` is then 0.
    pub se_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// Ordered by configured estimator, then parameter, then variable.
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, estimator: Estimator, variable: &str, parameter: SimParameter) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.variable == variable && r.parameter == parameter)
    }
}

/// Reduces replication results, which must be in replication order, into
/// one row per configured cell. Sums run in that order so the result does
/// not depend on how replications were scheduled.
pub fn summarize(pop: &Population, cfg: &SimConfig, results: &[ReplicationResult]) -> MetricsTable {
    let mut rows = Vec::new();
    for &estimator in &cfg.estimators {
        for &parameter in &cfg.parameters {
            for (j, truths) in pop.truths.iter().enumerate() {
                let values: Vec<f64> = results
                    .iter()
                    .flat_map(|res| {
                        res.cells
                            .iter()
                            .find(|c| c.estimator == estimator && c.parameter == parameter && c.y == j)
                    })
                    .filter_map(|c| c.value.as_ref().ok().copied())
                    .collect();
                let truth = parameter.truth(truths);
                rows.push(row(estimator, j, pop.rho[j], parameter, truth, &values, results.len()));
            }
        }
    }
    MetricsTable { rows }
}

fn row(
    estimator: Estimator,
    j: usize,
    rho: f64,
    parameter: SimParameter,
    truth: f64,
    values: &[f64],
    replications: usize,
) -> MetricRow {
    let k = values.len();
    let (mean_estimate, bias, se, se_defined) = if k == 0 {
        (f64::NAN, f64::NAN, f64::NAN, false)
    } else {
        let mean = values.iter().sum::<f64>() / k as f64;
        let se = if k >= 2 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        (mean, 100.0 * (mean - truth), 100.0 * se, k >= 2)
    };
    MetricRow {
        estimator,
        variable: format!("y{}", j + 1),
        rho,
        parameter,
        truth,
        mean_estimate,
        bias,
        se,
        rmse: (bias * bias + se * se).sqrt(),
        n_valid: k,
        n_missing: replications - k,
        se_defined,
    }
}
