use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use jointcal::constraints::ConstraintKind;
use jointcal::domain::{Bounds, DistanceKind, DistanceSpec, SampleFrame, TargetSpec, WeightSet};
use jointcal::simulation::format_sig;
use jointcal::{build_system, solve_dual, solve_quadratic, validate_frame, CalibError, SolverOptions};
use serde::Deserialize;
use serde_json::json;

use crate::manifest::{sha256_hex, FileDigest, RunManifest};
use crate::table::Table;
use crate::{Global, Outcome};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Sample CSV with a header row.
    pub sample: PathBuf,
    /// Targets JSON.
    pub targets: PathBuf,
    /// Column holding design weights.
    #[arg(long, default_value = "d")]
    pub weight_col: String,
    /// Column holding unit ids; row numbers are used when it is absent.
    #[arg(long, default_value = "id")]
    pub id_col: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsFile {
    #[serde(rename = "N")]
    population_size: f64,
    #[serde(default)]
    totals: BTreeMap<String, f64>,
    #[serde(default)]
    quantiles: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    include_size_constraint: bool,
    #[serde(default)]
    distance: Option<DistanceFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistanceFile {
    kind: DistanceKind,
    #[serde(rename = "L")]
    lower: Option<f64>,
    #[serde(rename = "U")]
    upper: Option<f64>,
}

impl TargetsFile {
    fn read(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let parsed = serde_json::from_slice(&bytes).map_err(|e| anyhow!("{}, line {}: {e}", path.display(), e.line()))?;
        Ok((parsed, bytes))
    }

    fn target_spec(&self) -> Result<TargetSpec> {
        let mut t = TargetSpec::new(self.population_size);
        if self.include_size_constraint {
            t = t.with_size();
        }
        for (variable, &value) in &self.totals {
            t = t.total(variable.clone(), value);
        }
        for (variable, orders) in &self.quantiles {
            let mut parsed = Vec::with_capacity(orders.len());
            for (key, &value) in orders {
                let alpha: f64 = key
                    .parse()
                    .map_err(|_| anyhow!("quantile target for `{variable}`: order '{key}' is not a number"))?;
                parsed.push((alpha, value));
            }
            parsed.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (alpha, value) in parsed {
                t = t.quantile(variable.clone(), alpha, value);
            }
        }
        Ok(t)
    }

    fn distance_spec(&self) -> Result<DistanceSpec> {
        let Some(d) = &self.distance else {
            return Ok(DistanceSpec::quadratic());
        };
        let bounds = match (d.lower, d.upper) {
            (None, None) => None,
            (Some(lower), Some(upper)) => Some(Bounds { lower, upper }),
            _ => bail!("distance: give both L and U or neither"),
        };
        Ok(DistanceSpec {
            kind: d.kind,
            bounds,
            q: None,
        })
    }

    fn variables(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.totals.keys().chain(self.quantiles.keys()).map(String::as_str).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn ids(table: &Table, id_col: &str) -> Result<Vec<String>> {
    if table.has(id_col) {
        table.text(id_col)
    } else {
        Ok((1..=table.len()).map(|k| k.to_string()).collect())
    }
}

pub fn run(args: &CalibrateArgs, global: &Global) -> Result<Outcome> {
    let start = Instant::now();
    let (file, target_bytes) = TargetsFile::read(&args.targets)?;
    let targets = file.target_spec()?;
    let distance = file.distance_spec()?;
    let opts = SolverOptions {
        max_iterations: args.max_iterations,
        tolerance: args.tolerance,
        ..SolverOptions::default()
    };
    opts.validate()?;

    let table = Table::read(&args.sample)?;
    let d = table.numeric(&args.weight_col)?;
    let ids = ids(&table, &args.id_col)?;
    let mut frame = SampleFrame::new(ids, d)?;
    for v in file.variables() {
        if !table.has(v) {
            bail!("target references unknown variable `{v}`: {} has no such column", table.path);
        }
        frame = frame.with_auxiliary(v, table.numeric(v)?)?;
    }
    validate_frame(&frame, &targets).into_result()?;
    distance.validate(frame.len())?;

    let system = build_system(&frame, &targets)?;
    let solved = match distance.kind {
        DistanceKind::Quadratic => solve_quadratic(&system, frame.design_weights(), None),
        _ => solve_dual(&system, frame.design_weights(), &distance, &opts),
    };
    let ws: WeightSet = match solved {
        Ok(ws) => ws,
        Err(e @ (CalibError::RankDeficient { .. } | CalibError::Infeasible(_))) => {
            return Ok(Outcome::NotConverged(format!("calibration failed: {e}")));
        }
        Err(e) => return Err(e.into()),
    };

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let weights_path = args.out_dir.join("weights.csv");
    let mut out = String::from("id,d,w,ratio\n");
    for ((id, &d), &w) in frame.ids().iter().zip(frame.design_weights()).zip(&ws.w) {
        let _ = writeln!(out, "{},{},{},{}", csv_field(id), format_sig(d, 10), format_sig(w, 10), format_sig(w / d, 10));
    }
    std::fs::write(&weights_path, out).with_context(|| format!("cannot write {}", weights_path.display()))?;

    let residuals_path = args.out_dir.join("residuals.csv");
    let r = system.residuals(&ws.w)?;
    let mut out = String::from("constraint,kind,variable,alpha,target,achieved,residual,relative_residual\n");
    for (j, meta) in system.columns.iter().enumerate() {
        let kind = match meta.kind {
            ConstraintKind::Total => "total",
            ConstraintKind::Size => "size",
            ConstraintKind::Quantile => "quantile",
        };
        let h = system.h[j];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&meta.to_string()),
            kind,
            csv_field(meta.variable.as_deref().unwrap_or("")),
            meta.alpha.map_or(String::new(), |a| format_sig(a, 10)),
            format_sig(h, 10),
            format_sig(h + r[j], 10),
            format_sig(r[j], 10),
            format_sig(r[j].abs() / h.abs().max(1.0), 10),
        );
    }
    std::fs::write(&residuals_path, out).with_context(|| format!("cannot write {}", residuals_path.display()))?;

    let diag = &ws.diagnostics;
    let manifest = RunManifest {
        command: "calibrate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        inputs: vec![FileDigest::of(&args.sample)?, FileDigest::of(&args.targets)?],
        config_digest: sha256_hex(&target_bytes),
        seed: global.seed,
        threads: None,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        diagnostics: json!({
            "distance": distance.kind.to_string(),
            "converged": diag.converged,
            "iterations": diag.iterations,
            "max_abs_residual": diag.max_abs_residual,
            "max_rel_residual": diag.max_rel_residual,
            "distance_value": diag.distance_value,
            "ratio_min": diag.ratio_min,
            "ratio_max": diag.ratio_max,
            "message": diag.message,
            "constraints": system.labels(),
        }),
        outputs: vec![FileDigest::of(&weights_path)?, FileDigest::of(&residuals_path)?],
    };
    manifest.write(&args.out_dir)?;

    let summary = format!(
        "{} units, {} constraints, {} distance: max relative residual {:.3e} after {} iterations",
        frame.len(),
        system.m(),
        distance.kind,
        diag.max_rel_residual,
        diag.iterations
    );
    Ok(if diag.converged {
        Outcome::Done(summary)
    } else {
        Outcome::NotConverged(format!(
            "{summary}; {}",
            diag.message.as_deref().unwrap_or("did not converge")
        ))
    })
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
