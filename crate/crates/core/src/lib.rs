//! Teacher/student consistency scoring and difficult-frame curation for
//! compact, domain-specific object detectors.
//!
//! A large teacher labels frames from one fixed camera; a compact student is
//! matched against those labels frame by frame. Frames where the two disagree
//! score high under [`scoring::l_train`] and the top `n` become the student's
//! training set. [`evaluation::relative_map`] measures the student against
//! the teacher on held-out frames, and [`simulation`] provides synthetic
//! domains, detectors and a training response so the whole loop runs without
//! real models.
//!
//! ```
//! use distilcull::{l_train, ConfusionCounts};
//! let score = l_train(ConfusionCounts { tp: 2, fp: 1, fn_: 3 }, 0.5).unwrap();
//! assert!((score - 3.2).abs() < 1e-12);
//! ```

pub mod adapters;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod ingest;
pub mod matching;
pub mod pipeline;
pub mod scoring;
pub mod simulation;
pub mod types;

pub use error::{Error, Result};
pub use evaluation::{average_precision, pr_curve, relative_map, EvalReport, PrPoint};
pub use exec::Execution;
pub use matching::{confusion_counts, iou, match_frame, MatchConfig, MatchResult};
pub use pipeline::{run_pipeline, sweep, PipelineConfig, PipelineReport, SweepTable};
pub use scoring::{compile_dataset, l_train, score_stream, select_dds, select_simple, CurationConfig, ScoredFrame};
pub use types::{
    BoundingBox, ConfusionCounts, CuratedDataset, CuratedEntry, Detection, DetectionStream, FrameDetections, Provenance,
    Strategy,
};
