use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use deid_review::model::ClipRef;
use deid_review::{ReviewService, Roster, RosterVideo};

use super::load_manifest;
use crate::config::PipelineConfig;
use crate::{ServeReviewArgs, Status};

pub const REVIEW_DIR: &str = "review";
pub const EVENT_LOG: &str = "events.jsonl";

fn absolute(p: PathBuf) -> Result<PathBuf> {
    Ok(if p.is_absolute() {
        p
    } else {
        std::env::current_dir()?.join(p)
    })
}

/// One roster video per de-identified case, paired with its real clip.
fn roster_from_run(cfg: &PipelineConfig, run_dir: &Path) -> Result<Roster> {
    let manifest = load_manifest(cfg, run_dir)?;
    let mut videos = Vec::new();
    for case in &manifest.cases {
        let Some(syn) = manifest.syn_path(case) else {
            continue;
        };
        videos.push(RosterVideo {
            id: case.case_id.clone(),
            path: absolute(syn)?,
            real: Some(ClipRef {
                id: format!("{}.real", case.case_id),
                path: absolute(manifest.real_path(case))?,
            }),
        });
    }
    if cfg.review.raters.is_empty() {
        bail!("no raters: pass --rater (repeatable) or set review.raters in the config");
    }
    Ok(Roster {
        seed: cfg.seed,
        raters: cfg.review.raters.clone(),
        clinicians: cfg.review.clinicians.clone(),
        videos,
    })
}

pub fn run(args: &ServeReviewArgs) -> Result<Status> {
    let mut cfg = args.common.resolve()?;
    if let Some(r) = &args.roster {
        cfg.review.roster = Some(r.clone());
    }
    if let Some(b) = &args.bind {
        cfg.review.bind = b.clone();
    }
    if let Some(p) = args.port {
        cfg.review.port = p;
    }
    cfg.review.raters.extend(args.raters.iter().cloned());
    cfg.review.clinicians.extend(args.clinicians.iter().cloned());
    let run_dir = cfg.out_dir()?.to_path_buf();

    let roster = match &cfg.review.roster {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading roster {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing roster {}", p.display()))?
        }
        None => roster_from_run(&cfg, &run_dir)?,
    };
    let review_dir = run_dir.join(REVIEW_DIR);
    std::fs::create_dir_all(&review_dir)?;
    let log = review_dir.join(EVENT_LOG);
    // A corrupt log stops startup here; its message carries the recovery hint.
    let service = Arc::new(ReviewService::open(roster, &log)?);

    let addr: SocketAddr = format!("{}:{}", cfg.review.bind, cfg.review.port)
        .parse()
        .with_context(|| format!("invalid bind address {}:{}", cfg.review.bind, cfg.review.port))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let bound = listener.local_addr()?;
        println!("listening on http://{bound}");
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        deid_review::http::serve_on(service, listener, shutdown).await?;
        anyhow::Ok(())
    })?;
    Ok(Status::Ok)
}
