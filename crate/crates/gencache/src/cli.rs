use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gencache_bench::{run_bench, BenchOptions, Family, Strategy};
use serde_json::json;

use crate::config::ServiceConfig;
use crate::server;

#[derive(Debug, Parser)]
#[command(name = "gencache", version, about = "Generative cache for structurally similar LLM prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one strategy over a synthetic stream and write a JSON report.
    Bench {
        #[arg(long, value_parser = parse_family)]
        dataset: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the clusters and cache index stored in a data directory.
    Inspect {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Copy a data directory to `--out` after checking that it loads.
    Snapshot {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Install a snapshot into a data directory, replacing its contents.
    Restore {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn config_or_default(path: Option<&Path>) -> Result<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::load(p),
        None => {
            let mut cfg = ServiceConfig::default();
            cfg.apply_env(std::env::vars())?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn load_offline(cfg: &ServiceConfig, dir: &Path) -> Result<gencache_core::runtime::Runtime> {
    if !server::has_state(dir) {
        bail!("{} holds no saved state", dir.display());
    }
    let rt = server::offline_runtime(cfg)?;
    rt.restore(dir)
        .with_context(|| format!("loading {}", dir.display()))?;
    Ok(rt)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(server::serve(cfg))
        }
        Command::Bench {
            dataset,
            n,
            strategy,
            seed,
            report,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let r = run_bench(dataset, n, strategy, seed, &BenchOptions::default())?;
            eprintln!(
                "{dataset} {strategy}: hit rate {:.2}%, positive {:.2}%, negative {:.2}%, codegen calls {}",
                r.hit_rate, r.positive_hit_rate, r.negative_hit_rate, r.codegen_calls
            );
            match report {
                Some(path) => fs::write(&path, r.to_json())
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", r.to_json()),
            }
            Ok(())
        }
        Command::Inspect { data_dir, config } => {
            let cfg = config_or_default(config.as_deref())?;
            let rt = load_offline(&cfg, &data_dir)?;
            let doc = json!({
                "clusters": rt.clusters(),
                "cache": rt.cache_index(),
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(())
        }
        Command::Snapshot {
            data_dir,
            out,
            config,
        } => {
            let cfg = config_or_default(config.as_deref())?;
            let rt = load_offline(&cfg, &data_dir)?;
            rt.snapshot(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("saved {} clusters and {} programs to {}", rt.cluster_count(), rt.cache_len(), out.display());
            Ok(())
        }
        Command::Restore {
            from,
            data_dir,
            config,
        } => {
            let cfg = config_or_default(config.as_deref())?;
            let rt = load_offline(&cfg, &from)?;
            if data_dir.exists() {
                fs::remove_dir_all(&data_dir)
                    .with_context(|| format!("clearing {}", data_dir.display()))?;
            }
            rt.snapshot(&data_dir)
                .with_context(|| format!("writing {}", data_dir.display()))?;
            eprintln!("restored {} clusters into {}", rt.cluster_count(), data_dir.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bench_flags_parse() {
        let cli = Cli::try_parse_from([
            "gencache", "bench", "--dataset", "param-w-synonym", "--n", "10", "--strategy",
            "gencache-feedback", "--seed", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Bench { dataset, strategy, seed, report, .. } => {
                assert_eq!(dataset, Family::ParamWithSynonym);
                assert_eq!(strategy, Strategy::GencacheFeedback);
                assert_eq!(seed, 3);
                assert!(report.is_none());
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["gencache", "bench", "--dataset", "nope", "--n", "1", "--strategy", "exact"]).is_err());
    }
}
