pub mod deidentify;
pub mod fixtures;
pub mod privacy;
pub mod report;
pub mod review;
pub mod triage;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

use deid_core::pipeline::Backends;

use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::run::RUN_FILE;

/// Run `f` over every case, `workers` at a time. Results come back in input
/// order whatever the scheduling, so output naming stays deterministic.
pub fn for_cases<I, T, F>(workers: usize, items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building case worker pool")?;
        return Ok(pool.install(|| items.par_iter().map(&f).collect()));
    }
    let _ = workers;
    Ok(items.iter().map(f).collect())
}

/// The manifest named by the config, else the one a `deidentify` run left
/// in the run directory.
pub fn load_manifest(cfg: &PipelineConfig, run_dir: &Path) -> Result<Manifest> {
    let path = match &cfg.manifest {
        Some(p) => p.clone(),
        None => {
            let derived = run_dir.join("manifest.json");
            if !derived.exists() {
                anyhow::bail!(
                    "no manifest: pass --manifest, or run `deid deidentify` into {} first",
                    run_dir.display()
                );
            }
            derived
        }
    };
    Manifest::load(&path)
}

pub fn ensure_run_dir(run_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let ledger = run_dir.join(RUN_FILE);
    if ledger.exists() && ledger.is_dir() {
        anyhow::bail!("{} is a directory", ledger.display());
    }
    Ok(())
}

/// `slot -> name@version` for the ledger.
pub fn backend_versions(backends: &Backends, cfg: &PipelineConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert(
        "landmark".into(),
        format!("{}@{}", backends.landmarks.name(), backends.landmarks.version()),
    );
    m.insert(
        "generator".into(),
        format!("{}@{}", backends.generator.name(), backends.generator.version()),
    );
    m.insert(
        "enhancer".into(),
        format!("{}@{}", backends.enhancer.name(), backends.enhancer.version()),
    );
    m.insert("quality".into(), backends.quality.name().to_string());
    m.insert("motion".into(), backends.motion.name().to_string());
    debug_assert_eq!(cfg.backends.motion, backends.motion.name());
    m
}

/// Build the backend stack the (validated) config selects.
pub fn make_backends(cfg: &PipelineConfig) -> Backends {
    // Validation only admits the reference stack's names.
    let _ = cfg;
    Backends::reference()
}
