//! Browser fingerprinting from encrypted TLS 1.3 traffic.
//!
//! Sessions are read from classic pcap captures, grouped into bidirectional
//! TCP flows, and turned into per-session message-length vectors (whole
//! frames or TLS records). Vectors are resampled to a common length by
//! piecewise-linear interpolation and compared with cosine
//! similarity/dissimilarity; labeled vectors live in a small fingerprint
//! database that produces pairwise browser reports and nearest-similarity
//! classification. A deterministic trace synthesizer emits ground-truth
//! sessions so every pipeline stage can be checked against closed-form
//! expectations.

pub mod db;
pub mod extract;
pub mod flow;
pub mod metrics;
mod net;
pub mod pcap;
pub mod report;
pub mod synth;
pub mod tls;

pub use db::{ClassificationResult, FingerprintDb, FingerprintRecord, PairReport};
pub use extract::{extract_sessions, ExtractOptions, ExtractReport};
pub use flow::{group_flows, Endpoint, Flow, FlowKey};
pub use metrics::{
    compare, cosine_dissimilarity, cosine_similarity, interpolate, LengthVector, VectorMode,
};
pub use pcap::{parse_pcap, CaptureFrame};
pub use synth::{serialize_pcap, synth_session, BrowserProfile, SynthPlan};
pub use tls::{parse_client_hello, parse_records, ClientHelloSummary, TlsRecord};
