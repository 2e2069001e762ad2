//! Facial video de-identification: motion retargeting onto conditioned
//! pseudo-identities, plus privacy, triage and agreement evaluation.

pub mod detector;
pub mod exec;
pub mod features;
pub mod fixtures;
pub mod imaging;
pub mod landmarks;
pub mod motion;
pub mod pipeline;
pub mod privacy;
pub mod prompt;
pub mod synth;
pub mod tps;
pub mod triage;
pub mod video;
