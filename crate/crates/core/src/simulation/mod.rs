//! Design-based Monte Carlo comparison of estimators for a non-probability
//! sample drawn by Poisson sampling from a fixed synthetic population.

mod metrics;
mod population;
mod report;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::build_system;
use crate::domain::{derive_seed, DistanceSpec, SampleFrame, TargetSpec};
use crate::error::{CalibError, Result};
use crate::estimators::{est_mean, est_quantile_detailed, naive_estimate, Parameter};
use crate::propensity::{fit_propensity, inverse_probabilities};
use crate::solvers::{el_centered_constraints, solve_dual, solve_el, SolverOptions};

pub use metrics::{summarize, MetricRow, MetricsTable};
pub use population::{gen_population, poisson_sample, solve_sigma, solve_theta0, PoissonDraw, Population, Truths};
pub use report::{format_sig, metrics_csv, metrics_markdown, CSV_HEADER};

/// Quartiles 0.25 and 0.75 merged with the nine deciles.
pub const QUANTILE_ORDERS: [f64; 11] = [0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9];

const AUX_NAMES: [&str; 4] = ["x1", "x2", "x3", "x4"];
const POPULATION_STREAM: u64 = 0;
const REPLICATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    Naive,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "CAL")]
    Cal,
    #[serde(rename = "QCAL1")]
    Qcal1,
    #[serde(rename = "QCAL2")]
    Qcal2,
    #[serde(rename = "EL")]
    El,
    #[serde(rename = "QEL1")]
    Qel1,
    #[serde(rename = "QEL2")]
    Qel2,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Naive,
        Estimator::Ipw,
        Estimator::Cal,
        Estimator::Qcal1,
        Estimator::Qcal2,
        Estimator::El,
        Estimator::Qel1,
        Estimator::Qel2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Naive => "Naive",
            Estimator::Ipw => "IPW",
            Estimator::Cal => "CAL",
            Estimator::Qcal1 => "QCAL1",
            Estimator::Qcal2 => "QCAL2",
            Estimator::El => "EL",
            Estimator::Qel1 => "QEL1",
            Estimator::Qel2 => "QEL2",
        }
    }

    fn uses_totals(self) -> bool {
        matches!(self, Estimator::Cal | Estimator::Qcal2 | Estimator::El | Estimator::Qel2)
    }

    fn uses_quantiles(self) -> bool {
        matches!(self, Estimator::Qcal1 | Estimator::Qcal2 | Estimator::Qel1 | Estimator::Qel2)
    }

    fn is_calibration(self) -> bool {
        matches!(self, Estimator::Cal | Estimator::Qcal1 | Estimator::Qcal2)
    }

    fn is_el(self) -> bool {
        matches!(self, Estimator::El | Estimator::Qel1 | Estimator::Qel2)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SimParameter {
    #[serde(rename = "mean")]
    Mean,
    Q25,
    Q50,
    Q75,
}

impl SimParameter {
    pub const ALL: [SimParameter; 4] = [SimParameter::Mean, SimParameter::Q25, SimParameter::Q50, SimParameter::Q75];

    pub fn name(self) -> &'static str {
        match self {
            SimParameter::Mean => "mean",
            SimParameter::Q25 => "Q25",
            SimParameter::Q50 => "Q50",
            SimParameter::Q75 => "Q75",
        }
    }

    pub fn as_parameter(self) -> Parameter {
        match self {
            SimParameter::Mean => Parameter::Mean,
            SimParameter::Q25 => Parameter::Quantile { alpha: 0.25 },
            SimParameter::Q50 => Parameter::Quantile { alpha: 0.5 },
            SimParameter::Q75 => Parameter::Quantile { alpha: 0.75 },
        }
    }

    pub fn truth(self, t: &Truths) -> f64 {
        match self {
            SimParameter::Mean => t.mean,
            SimParameter::Q25 => t.q25,
            SimParameter::Q50 => t.q50,
            SimParameter::Q75 => t.q75,
        }
    }
}

impl fmt::Display for SimParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "N", default = "defaults::population_size")]
    pub population_size: usize,
    #[serde(rename = "n", default = "defaults::sample_size")]
    pub sample_size: usize,
    #[serde(default = "defaults::rho_list")]
    pub rho_list: Vec<f64>,
    #[serde(rename = "R", default = "defaults::replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "defaults::estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "defaults::parameters")]
    pub parameters: Vec<SimParameter>,
    #[serde(default = "DistanceSpec::raking")]
    pub distance: DistanceSpec,
    /// IPW uses the true inclusion probabilities instead of a fitted model.
    #[serde(default)]
    pub oracle_pi: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

mod defaults {
    use super::{Estimator, SimParameter};

    pub fn population_size() -> usize {
        20_000
    }
    pub fn sample_size() -> usize {
        10_000
    }
    pub fn rho_list() -> Vec<f64> {
        vec![0.3, 0.5, 0.8]
    }
    pub fn replications() -> usize {
        1000
    }
    pub fn estimators() -> Vec<Estimator> {
        Estimator::ALL.to_vec()
    }
    pub fn parameters() -> Vec<SimParameter> {
        SimParameter::ALL.to_vec()
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population_size: defaults::population_size(),
            sample_size: defaults::sample_size(),
            rho_list: defaults::rho_list(),
            replications: defaults::replications(),
            master_seed: 0,
            estimators: defaults::estimators(),
            parameters: defaults::parameters(),
            distance: DistanceSpec::raking(),
            oracle_pi: false,
            solver: SolverOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CalibError::InvalidOptions(m));
        if self.sample_size == 0 || self.sample_size >= self.population_size {
            return bad(format!(
                "need 0 < n < N for propensities in (0, 1), got n = {}, N = {}",
                self.sample_size, self.population_size
            ));
        }
        if self.rho_list.is_empty() {
            return bad("rho_list is empty".into());
        }
        if let Some(r) = self.rho_list.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
            return bad(format!("correlation {r} is not in (0, 1)"));
        }
        if self.replications == 0 {
            return bad("R must be at least 1".into());
        }
        if self.estimators.is_empty() || self.parameters.is_empty() {
            return bad("estimators and parameters must be non-empty".into());
        }
        if self.distance.q.is_some() {
            return bad("per-unit q factors are not supported in simulations".into());
        }
        self.distance.validate(0)?;
        self.solver.validate()
    }

    pub fn population_seed(&self) -> u64 {
        derive_seed(self.master_seed, POPULATION_STREAM)
    }

    pub fn replication_seed(&self, r: usize) -> u64 {
        derive_seed(derive_seed(self.master_seed, REPLICATION_STREAM), r as u64)
    }
}

/// One estimate, or the reason it is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEstimate {
    pub estimator: Estimator,
    /// Index into the study variables.
    pub y: usize,
    pub parameter: SimParameter,
    pub value: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replication: usize,
    pub sample_size: usize,
    pub redraws: usize,
    /// One entry per distinct configured estimator, parameter and variable,
    /// in configuration order.
    pub cells: Vec<CellEstimate>,
    /// Largest relative constraint residual of each converged calibration
    /// or EL weight vector.
    pub residuals: BTreeMap<Estimator, f64>,
    /// Quantile estimates whose inversion was clamped to the sample range.
    pub clamped: usize,
}

/// Weight vector in the population scale, or why none exists.
type Weights = std::result::Result<Vec<f64>, String>;

struct Sample<'a> {
    pop: &'a Population,
    idx: &'a [usize],
}

impl Sample<'_> {
    fn column(&self, v: &[f64]) -> Vec<f64> {
        self.idx.iter().map(|&k| v[k]).collect()
    }

    fn frame(&self) -> Result<SampleFrame> {
        let n = self.idx.len() as f64;
        let big_n = self.pop.size() as f64;
        let mut frame = SampleFrame::with_weights(vec![big_n / n; self.idx.len()]);
        for (j, name) in AUX_NAMES.iter().enumerate() {
            frame = frame.with_auxiliary(*name, self.column(&self.pop.x[j]))?;
        }
        Ok(frame)
    }

    fn targets(&self, estimator: Estimator) -> TargetSpec {
        let mut t = TargetSpec::new(self.pop.size() as f64).with_size();
        if estimator.uses_totals() {
            for (j, name) in AUX_NAMES.iter().enumerate() {
                t = t.total(*name, self.pop.x_totals[j]);
            }
        }
        if estimator.uses_quantiles() {
            for (j, name) in AUX_NAMES.iter().enumerate().skip(1) {
                for (i, &alpha) in QUANTILE_ORDERS.iter().enumerate() {
                    t = t.quantile(*name, alpha, self.pop.x_quantiles[j - 1][i]);
                }
            }
        }
        t
    }
}

fn ipw_weights_for(sample: &Sample, cfg: &SimConfig) -> Weights {
    let pi = if cfg.oracle_pi {
        sample.column(&sample.pop.pi)
    } else {
        let to_matrix = |rows: &[usize]| DMatrix::from_fn(rows.len(), 4, |k, j| sample.pop.x[j][rows[k]]);
        let all: Vec<usize> = (0..sample.pop.size()).collect();
        let fit = fit_propensity(&to_matrix(sample.idx), &to_matrix(&all), &cfg.solver).map_err(|e| e.to_string())?;
        if !fit.converged {
            return Err(format!("propensity fit did not converge (score residual {:e})", fit.score_residual));
        }
        fit.pi_sample
    };
    inverse_probabilities(&pi).map_err(|e| e.to_string())
}

fn calibrated_weights(
    sample: &Sample,
    frame: &SampleFrame,
    estimator: Estimator,
    cfg: &SimConfig,
) -> (Weights, Option<f64>) {
    let targets = sample.targets(estimator);
    let system = match build_system(frame, &targets) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), None),
    };
    if estimator.is_calibration() {
        match solve_dual(&system, frame.design_weights(), &cfg.distance, &cfg.solver) {
            Ok(ws) if ws.converged() => {
                let residual = ws.diagnostics.max_rel_residual;
                (Ok(ws.w), Some(residual))
            }
            Ok(ws) => (
                Err(ws.diagnostics.message.unwrap_or_else(|| "calibration did not converge".into())),
                None,
            ),
            Err(e) => (Err(e.to_string()), None),
        }
    } else {
        let u = match el_centered_constraints(frame, &targets) {
            Ok(u) => u,
            Err(e) => return (Err(e.to_string()), None),
        };
        match solve_el(&u, &cfg.solver) {
            Ok(el) if el.converged => {
                let big_n = sample.pop.size() as f64;
                let w: Vec<f64> = el.p.iter().map(|p| big_n * p).collect();
                let residual = system.max_rel_residual(&w).ok();
                (Ok(w), residual)
            }
            Ok(el) => (
                Err(el.message.unwrap_or_else(|| "empirical likelihood did not converge".into())),
                None,
            ),
            Err(e) => (Err(e.to_string()), None),
        }
    }
}

fn distinct<T: PartialEq + Copy>(items: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for &i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Draws replication `r` and evaluates every configured estimator on it.
pub fn run_replication(pop: &Population, cfg: &SimConfig, r: usize) -> Result<ReplicationResult> {
    let draw = poisson_sample(&pop.pi, cfg.replication_seed(r));
    if draw.indices.is_empty() {
        return Err(CalibError::EmptySample);
    }
    let sample = Sample { pop, idx: &draw.indices };
    let frame = sample.frame()?;
    let big_n = pop.size() as f64;
    let ys: Vec<Vec<f64>> = pop.y.iter().map(|y| sample.column(y)).collect();

    let mut cells = Vec::new();
    let mut residuals = BTreeMap::new();
    let mut clamped = 0;
    for estimator in distinct(&cfg.estimators) {
        let weights: Option<Weights> = match estimator {
            Estimator::Naive => None,
            Estimator::Ipw => Some(ipw_weights_for(&sample, cfg)),
            _ => {
                debug_assert!(estimator.is_calibration() || estimator.is_el());
                let (w, residual) = calibrated_weights(&sample, &frame, estimator, cfg);
                if let Some(res) = residual {
                    residuals.insert(estimator, res);
                }
                Some(w)
            }
        };
        for parameter in distinct(&cfg.parameters) {
            for (j, y) in ys.iter().enumerate() {
                let value = match &weights {
                    None => naive_estimate(y, parameter.as_parameter()).map_err(|e| e.to_string()),
                    Some(Err(reason)) => Err(reason.clone()),
                    Some(Ok(w)) => match parameter.as_parameter() {
                        Parameter::Quantile { alpha } => match est_quantile_detailed(w, y, alpha, big_n) {
                            Ok(q) => {
                                clamped += usize::from(q.clamped);
                                Ok(q.value)
                            }
                            Err(e) => Err(e.to_string()),
                        },
                        _ => est_mean(w, y, big_n).map_err(|e| e.to_string()),
                    },
                };
                cells.push(CellEstimate {
                    estimator,
                    y: j,
                    parameter,
                    value,
                });
            }
        }
    }
    Ok(ReplicationResult {
        replication: r,
        sample_size: draw.indices.len(),
        redraws: draw.redraws,
        cells,
        residuals,
        clamped,
    })
}

/// Run-level facts reported alongside the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    /// The population is generated once and held fixed over replications.
    pub fixed_population: bool,
    pub population_seed: u64,
    pub theta0: f64,
    pub sigma: Vec<f64>,
    pub truths: Vec<TruthRecord>,
    pub mean_sample_size: f64,
    pub empty_sample_redraws: usize,
    pub clamped_quantiles: usize,
    /// Per estimator, the largest relative constraint residual over all
    /// replications in which its weights were obtained.
    pub max_constraint_residual: BTreeMap<String, f64>,
    pub missing_reasons: BTreeMap<String, usize>,
    /// IPW means divide by `N`; IPW quantiles normalize by the weight sum.
    pub ipw_normalization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub variable: String,
    pub rho: f64,
    pub mean: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub table: MetricsTable,
    pub metadata: SimMetadata,
}

/// Generates the population once, runs all replications (in parallel on the
/// current rayon pool) and reduces them in replication order.
pub fn monte_carlo(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let pop = gen_population(cfg, cfg.population_seed())?;
    let results: Vec<ReplicationResult> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(&pop, cfg, r))
        .collect::<Result<_>>()?;
    let table = summarize(&pop, cfg, &results);

    let mut max_constraint_residual = BTreeMap::new();
    let mut missing_reasons = BTreeMap::new();
    for res in &results {
        for (e, &v) in &res.residuals {
            let entry = max_constraint_residual.entry(e.name().to_string()).or_insert(0.0f64);
            *entry = entry.max(v);
        }
        for cell in &res.cells {
            if let Err(reason) = &cell.value {
                *missing_reasons
                    .entry(format!("{}: {}", cell.estimator, reason))
                    .or_insert(0) += 1;
            }
        }
    }
    let metadata = SimMetadata {
        fixed_population: true,
        population_seed: cfg.population_seed(),
        theta0: pop.theta0,
        sigma: pop.sigma.clone(),
        truths: pop
            .truths
            .iter()
            .zip(&pop.rho)
            .enumerate()
            .map(|(j, (t, &rho))| TruthRecord {
                variable: format!("y{}", j + 1),
                rho,
                mean: t.mean,
                q25: t.q25,
                q50: t.q50,
                q75: t.q75,
            })
            .collect(),
        mean_sample_size: results.iter().map(|r| r.sample_size as f64).sum::<f64>() / results.len() as f64,
        empty_sample_redraws: results.iter().map(|r| r.redraws).sum(),
        clamped_quantiles: results.iter().map(|r| r.clamped).sum(),
        max_constraint_residual,
        missing_reasons,
        ipw_normalization: "mean: population size; quantile: sum of weights".into(),
    };
    Ok(SimOutput { table, metadata })
}
