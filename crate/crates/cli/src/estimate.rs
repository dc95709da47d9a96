use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use jointcal::estimators::{estimate, EstimateRequest, Parameter, WeightsSource};
use jointcal::simulation::format_sig;
use serde_json::json;

use crate::calibrate::csv_field;
use crate::manifest::{sha256_hex, FileDigest, RunManifest};
use crate::table::Table;
use crate::{Global, Outcome};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Design,
    Calibrated,
    El,
    Ipw,
    Uniform,
}

impl From<SourceArg> for WeightsSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Design => WeightsSource::Design,
            SourceArg::Calibrated => WeightsSource::Calibrated,
            SourceArg::El => WeightsSource::El,
            SourceArg::Ipw => WeightsSource::Ipw,
            SourceArg::Uniform => WeightsSource::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Sample CSV with a header row.
    pub sample: PathBuf,
    /// Weights CSV with columns `id` and `w`, matched to the sample by id.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Requests such as `mean:y`, `total:y` or `quantile:0.5:y`.
    #[arg(long = "request", short = 'r', required = true)]
    pub requests: Vec<String>,
    /// Where the weights come from. Defaults to `calibrated` with
    /// `--weights`, otherwise `design` when the weight column exists and
    /// `uniform` when it does not.
    #[arg(long, value_enum)]
    pub weights_source: Option<SourceArg>,
    #[arg(long, default_value = "d")]
    pub weight_col: String,
    #[arg(long, default_value = "id")]
    pub id_col: String,
    /// Population size for means and quantiles; defaults to the weight sum.
    #[arg(long)]
    pub population_size: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// A parsed `kind[:alpha]:variable` request.
struct Request {
    text: String,
    inner: EstimateRequest,
}

impl FromStr for Request {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let (parameter, variable) = match parts.as_slice() {
            ["mean", v] => (Parameter::Mean, v),
            ["total", v] => (Parameter::Total, v),
            ["quantile", a, v] => {
                let alpha: f64 = a.parse().map_err(|_| anyhow!("request '{s}': order '{a}' is not a number"))?;
                (Parameter::Quantile { alpha }, v)
            }
            _ => bail!("request '{s}' must look like mean:VAR, total:VAR or quantile:ALPHA:VAR"),
        };
        if variable.is_empty() {
            bail!("request '{s}' names no variable");
        }
        let inner = EstimateRequest {
            parameter,
            variable: variable.to_string(),
            weights_source: WeightsSource::Uniform,
        };
        inner.validate().map_err(|e| anyhow!("request '{s}': {e}"))?;
        Ok(Self {
            text: s.to_string(),
            inner,
        })
    }
}

fn aligned_weights(sample_ids: &[String], weights: &Table, id_col: &str) -> Result<Vec<f64>> {
    let ids = weights.text(id_col)?;
    let w = weights.numeric("w")?;
    let mut by_id = HashMap::with_capacity(ids.len());
    for (id, &w) in ids.iter().zip(&w) {
        if by_id.insert(id.as_str(), w).is_some() {
            bail!("{}: duplicate id '{id}'", weights.path);
        }
    }
    let missing: Vec<&str> = sample_ids
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    let known: std::collections::HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
    let extra: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !known.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |v: &[&str]| {
            let shown: Vec<&str> = v.iter().take(20).copied().collect();
            let more = if v.len() > 20 { format!(" and {} more", v.len() - 20) } else { String::new() };
            format!("[{}]{more}", shown.join(", "))
        };
        bail!(
            "ids do not match: sample ids without weights {}; weight ids not in the sample {}",
            list(&missing),
            list(&extra)
        );
    }
    Ok(sample_ids.iter().map(|id| by_id[id.as_str()]).collect())
}

pub fn run(args: &EstimateArgs, global: &Global) -> Result<Outcome> {
    let start = Instant::now();
    let requests: Vec<Request> = args.requests.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let table = Table::read(&args.sample)?;
    let ids: Vec<String> = if table.has(&args.id_col) {
        table.text(&args.id_col)?
    } else {
        (1..=table.len()).map(|k| k.to_string()).collect()
    };

    let source = args.weights_source.map(WeightsSource::from).unwrap_or(if args.weights.is_some() {
        WeightsSource::Calibrated
    } else if table.has(&args.weight_col) {
        WeightsSource::Design
    } else {
        WeightsSource::Uniform
    });
    let w = match (source, &args.weights) {
        (WeightsSource::Uniform, _) => vec![1.0; table.len()],
        (WeightsSource::Design, _) => table.numeric(&args.weight_col)?,
        (_, Some(path)) => aligned_weights(&ids, &Table::read(path)?, &args.id_col)?,
        (_, None) => bail!("weights source '{}' needs --weights", source_name(source)),
    };
    let population = match args.population_size {
        Some(n) if n > 0.0 && n.is_finite() => n,
        Some(n) => bail!("population size {n} must be positive"),
        None => w.iter().sum(),
    };

    let mut out = String::from("request,parameter,alpha,variable,estimate,weights_source,population_size\n");
    for req in &requests {
        let y = table.numeric(&req.inner.variable)?;
        let value = estimate(&w, &y, req.inner.parameter, population).map_err(|e| anyhow!("request '{}': {e}", req.text))?;
        let (name, alpha) = match req.inner.parameter {
            Parameter::Total => ("total", String::new()),
            Parameter::Mean => ("mean", String::new()),
            Parameter::Quantile { alpha } => ("quantile", format_sig(alpha, 10)),
        };
        let _ = writeln!(
            out,
            "{},{name},{alpha},{},{},{},{}",
            csv_field(&req.text),
            csv_field(&req.inner.variable),
            format_sig(value, 10),
            source_name(source),
            format_sig(population, 10)
        );
    }

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let path = args.out_dir.join("estimates.csv");
    std::fs::write(&path, &out).with_context(|| format!("cannot write {}", path.display()))?;

    let mut inputs = vec![FileDigest::of(&args.sample)?];
    if let Some(p) = &args.weights {
        inputs.push(FileDigest::of(p)?);
    }
    RunManifest {
        command: "estimate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        inputs,
        config_digest: sha256_hex(args.requests.join("\n").as_bytes()),
        seed: global.seed,
        threads: None,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        diagnostics: json!({
            "requests": args.requests,
            "weights_source": source_name(source),
            "population_size": population,
        }),
        outputs: vec![FileDigest::of(&path)?],
    }
    .write(&args.out_dir)?;
    Ok(Outcome::Done(format!("{} estimates written to {}", requests.len(), path.display())))
}

fn source_name(s: WeightsSource) -> &'static str {
    match s {
        WeightsSource::Design => "design",
        WeightsSource::Calibrated => "calibrated",
        WeightsSource::El => "el",
        WeightsSource::Ipw => "ipw",
        WeightsSource::Uniform => "uniform",
    }
}
