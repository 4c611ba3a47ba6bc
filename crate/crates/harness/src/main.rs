use anyhow::{bail, Context, Result};
use bglab_core::par::Execution;
use bglab_harness::config::{ExperimentConfig, ExperimentKind};
use bglab_harness::experiments::{
    evolve_snapshot, run_covariance_experiment, run_scaling_study, run_trees, sample_snapshot,
};
use bglab_harness::verify::{all_passed, run_verification_suite, SuiteOptions};
use bglab_harness::{with_dimension, HarnessError, ResultTable};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bglab", version, about = "Low-density hard-sphere gas laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `replicas` from the config.
    #[arg(long)]
    replicas: Option<usize>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, env = "BGLAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one equilibrium configuration as a snapshot.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replica: u64,
    },
    /// Sample, evolve to `--time`, and write the snapshot with its collisions.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replica: u64,
        #[arg(long)]
        time: f64,
    },
    /// Covariance sweep with the limit prediction.
    Covariance {
        #[command(flatten)]
        common: Common,
    },
    /// Invariant suite; exits non-zero on any failure.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Recollision-measure and cluster-violation sweeps.
    Scaling {
        #[command(flatten)]
        common: Common,
    },
    /// Counting identities and the tree-graph inequality.
    Trees {
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> Result<(ExperimentConfig, String, Execution)> {
    let (mut cfg, text) = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    if let Some(r) = c.replicas {
        cfg.replicas = r;
    }
    cfg.validate()?;
    let exec = match c.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(1) => Execution::Sequential,
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    Ok((cfg, text, exec))
}

fn out_path(cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write(table: &ResultTable, path: &Path) -> Result<()> {
    table.write(path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Command::Sample { common, replica } => {
            let (cfg, _, _) = load(&common)?;
            let path = out_path(&cfg, "sample.snap");
            with_dimension!(cfg.dimension, D => {
                sample_snapshot::<D>(&cfg, replica)?.write(&path).map_err(HarnessError::from)
            })?;
            eprintln!("wrote {}", path.display());
        }
        Command::Evolve { common, replica, time } => {
            let (cfg, _, _) = load(&common)?;
            let path = out_path(&cfg, "evolve.snap");
            with_dimension!(cfg.dimension, D => {
                evolve_snapshot::<D>(&cfg, replica, time)?.write(&path).map_err(HarnessError::from)
            })?;
            eprintln!("wrote {}", path.display());
        }
        Command::Covariance { common } => {
            let (cfg, text, exec) = load(&common)?;
            let out = with_dimension!(cfg.dimension, D => run_covariance_experiment::<D>(&cfg, &text, exec))?;
            let path = out_path(&cfg, "covariance.csv");
            write(&out.table, &path)?;
            write(&out.prediction, &path.with_extension("prediction.csv"))?;
        }
        Command::Verify { common } => {
            let (cfg, text, exec) = load(&common)?;
            let table = with_dimension!(cfg.dimension, D => {
                run_verification_suite::<D>(&cfg, &text, &SuiteOptions::default(), exec)
            })?;
            write(&table, &out_path(&cfg, "verify.csv"))?;
            if !all_passed(&table) {
                bail!("{} invariant checks failed", table.get_meta("failed").unwrap_or("?"));
            }
        }
        Command::Scaling { common } => {
            let (cfg, text, exec) = load(&common)?;
            if !matches!(cfg.kind, ExperimentKind::GeometryScaling | ExperimentKind::Clusters) {
                bail!("`scaling` needs kind = geometry-scaling or clusters");
            }
            let table = with_dimension!(cfg.dimension, D => run_scaling_study::<D>(&cfg, &text, exec))?;
            write(&table, &out_path(&cfg, "scaling.csv"))?;
            if table.get_meta("underpowered") == Some("true") {
                eprintln!("warning: exponent fit is underpowered (interval wider than 0.5)");
            }
        }
        Command::Trees { common } => {
            let (cfg, text, exec) = load(&common)?;
            let table = with_dimension!(cfg.dimension, D => run_trees::<D>(&cfg, &text, exec))?;
            write(&table, &out_path(&cfg, "trees.csv"))?;
        }
    }
    Ok(())
}
