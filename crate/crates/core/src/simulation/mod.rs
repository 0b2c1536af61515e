//! Synthetic fixed-camera domains, simulated detectors and a training
//! response model, so the curation loop can run end to end without models.
//!
//! All randomness flows from explicit seeds through [`rng::stream_rng`].

pub mod detector;
pub mod domain;
pub mod rng;
pub mod training;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use detector::{simulate_detector, simulate_detector_with_stats, DetectorProfile, DetectorStats, ScoreModel};
pub use domain::{generate_domain, generate_domain_with, DomainParams, SceneFrame, SceneObject, SyntheticDomain, HARD_CUTOFF};
pub use training::{apply_progress, simulate_training, training_signal, TrainingParams, TrainingSignal};

use crate::error::{Error, Result};

pub const SIM_SCHEMA_VERSION: &str = "distilcull-sim/1";

/// Detector seeds `(teacher, student)` derived from a run seed. The student
/// seed is reused after training so before/after snapshots share draws.
pub fn derive_training_seeds(seed: u64) -> (u64, u64) {
    (rng::derive_seed(seed, "teacher"), rng::derive_seed(seed, "student"))
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: String,
    #[serde(flatten)]
    body: T,
}

fn write_versioned<T: Serialize>(body: &T) -> Vec<u8> {
    let doc = Versioned { schema_version: SIM_SCHEMA_VERSION.to_string(), body };
    let mut out = serde_json::to_vec_pretty(&doc).expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

fn parse_versioned<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let doc: Versioned<T> = crate::ingest::parse_json(bytes)?;
    if doc.schema_version != SIM_SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion { found: doc.schema_version, expected: SIM_SCHEMA_VERSION });
    }
    Ok(doc.body)
}

pub fn write_profile(profile: &DetectorProfile) -> Vec<u8> {
    write_versioned(profile)
}

pub fn parse_profile(bytes: &[u8]) -> Result<DetectorProfile> {
    let p: DetectorProfile = parse_versioned(bytes)?;
    p.validate()?;
    Ok(p)
}

pub fn write_domain(domain: &SyntheticDomain) -> Vec<u8> {
    write_versioned(domain)
}

pub fn parse_domain(bytes: &[u8]) -> Result<SyntheticDomain> {
    let d: SyntheticDomain = parse_versioned(bytes)?;
    d.params.validate()?;
    Ok(d)
}
