//! Human review service for the de-identified videos: realism ratings,
//! the unanimity gate, paired diagnostic judgments and agreement reports,
//! persisted in an append-only event log and served over HTTP.

pub mod http;
pub mod model;
pub mod service;
pub mod stats;
pub mod store;

pub use model::{Answer, PairedJudgment, RatingRecord, RealismOption, Roster, RosterVideo, Side};
pub use service::{ReviewService, ServiceError, TaskKind};
pub use stats::{aggregate_scores, fleiss_kappa, gate_for_clinical_review, GateResult, Kappa};
