use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use jointcal::simulation::{metrics_csv, metrics_markdown, monte_carlo, SimConfig};
use serde_json::json;

use crate::manifest::{sha256_hex, FileDigest, RunManifest, MANIFEST_NAME};
use crate::{Global, Outcome};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON.
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn run(args: &SimulateArgs, global: &Global) -> Result<Outcome> {
    let start = Instant::now();
    let bytes = std::fs::read(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut cfg: SimConfig =
        serde_json::from_slice(&bytes).map_err(|e| anyhow!("{}, line {}: {e}", args.config.display(), e.line()))?;
    if let Some(seed) = global.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let digest = sha256_hex(serde_json::to_string(&cfg)?.as_bytes());

    let threads = global.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let out = pool.install(|| monte_carlo(&cfg))?;

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let csv_path = args.out_dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(&out.table)).with_context(|| format!("cannot write {}", csv_path.display()))?;
    let footer = format!(
        "All numbers multiplied by 100. Produced by `jointcal simulate`; see {MANIFEST_NAME} (config sha256 {digest})."
    );
    let md_path = args.out_dir.join("table.md");
    std::fs::write(&md_path, metrics_markdown(&out.table, Some(&footer)))
        .with_context(|| format!("cannot write {}", md_path.display()))?;

    let missing: usize = out.table.rows.iter().map(|r| r.n_missing).sum();
    RunManifest {
        command: "simulate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        inputs: vec![FileDigest::of(&args.config)?],
        config_digest: digest,
        seed: Some(cfg.master_seed),
        threads: Some(threads),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        diagnostics: json!({
            "config": cfg,
            "missing_estimates": missing,
            "run": out.metadata,
        }),
        outputs: vec![FileDigest::of(&csv_path)?, FileDigest::of(&md_path)?],
    }
    .write(&args.out_dir)?;
    Ok(Outcome::Done(format!(
        "{} metric rows from {} replications; {missing} missing estimates",
        out.table.rows.len(),
        cfg.replications
    )))
}
