//! Token-based clone detection with license inference for Python corpora.

pub mod cache;
pub mod clock;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod license;
pub mod report;
pub mod stackexchange;
pub mod synth;
pub mod token;

pub use corpus::{CodeBlock, Corpus, Granularity, GranularitySet, SourceLocator};
pub use engine::{detect_clones, finalize_pairs, ClonePair, DetectionConfig, IndexedCorpus, Theta};
pub use license::{CompatibilityMatrix, LicenseId, LicenseTag, RuleSet, Verdict};
pub use report::{CloneReport, LicenseStats, RunConfig};
