//! One-call pipeline: pcap bytes in, per-session length vectors out.

use thiserror::Error;

use crate::flow::{self, DirectionMode, Flow, FlowKey, FrameSelection, SkippedTally};
use crate::metrics::{LengthVector, VectorMode};
use crate::pcap::{self, PcapError};
use crate::tls::{self, ClientHelloSummary, RecordTypeSet, TlsRecord};

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Keep only flows touching this port; `None` keeps every TCP flow.
    pub port_filter: Option<u16>,
    pub mode: VectorMode,
    pub direction: DirectionMode,
    /// Frame mode: drop frames without TCP payload (pure ACKs).
    pub tls_only: bool,
    /// Record mode: content types contributing to the vector.
    pub include: RecordTypeSet,
    /// Concatenate flows sharing a server endpoint into one session.
    pub merge_flows: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            port_filter: Some(443),
            mode: VectorMode::Frame,
            direction: DirectionMode::Both,
            tls_only: false,
            include: RecordTypeSet::default(),
            merge_flows: false,
        }
    }
}

/// One extracted session: its vector plus the ClientHello evidence.
#[derive(Debug, Clone)]
pub struct SessionExtract {
    pub flow_key: FlowKey,
    pub frame_count: usize,
    pub vector: LengthVector,
    pub client_hello: Option<ClientHelloSummary>,
    pub suite_fingerprint: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractDiagnostics {
    pub skipped: SkippedTally,
    pub truncation: Option<PcapError>,
    /// Flows before any merge step.
    pub flow_count: usize,
    /// Flows whose selection produced no lengths.
    pub empty_selections: usize,
    /// Flows with a reassembly gap.
    pub gap_flows: usize,
    /// Flows whose first client handshake record failed to parse as a
    /// ClientHello.
    pub client_hello_failures: usize,
}

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub sessions: Vec<SessionExtract>,
    pub diagnostics: ExtractDiagnostics,
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Pcap(#[from] PcapError),
}

/// Run the full pipeline over one capture file.
pub fn extract_sessions(
    bytes: &[u8],
    options: &ExtractOptions,
) -> Result<ExtractReport, ExtractError> {
    let capture = pcap::parse_pcap(bytes)?;
    let mut diagnostics = ExtractDiagnostics {
        truncation: capture.truncation,
        ..ExtractDiagnostics::default()
    };
    let table = flow::group_flows(capture.frames, options.port_filter);
    diagnostics.skipped = table.skipped;
    diagnostics.flow_count = table.flows.len();
    let flows: Vec<Flow> = if options.merge_flows {
        flow::merge_flows(&table, options.port_filter)
    } else {
        table.flows.into_values().collect()
    };

    let mut sessions = Vec::new();
    for flow in &flows {
        let session = tls::session_records(flow);
        if session.gap_detected {
            diagnostics.gap_flows += 1;
        }
        let client_hello = session
            .records
            .iter()
            .find(|(direction, record)| {
                *direction == session.client_direction
                    && record.content_type == tls::ContentType::Handshake
            })
            .and_then(|(_, record)| match tls::parse_client_hello(record) {
                Ok(summary) => Some(summary),
                Err(_) => {
                    diagnostics.client_hello_failures += 1;
                    None
                }
            });
        let vector = match options.mode {
            VectorMode::Frame => match flow::frame_length_vector(
                flow,
                FrameSelection {
                    direction: options.direction,
                    tls_only: options.tls_only,
                },
            ) {
                Ok(vector) => vector,
                Err(flow::FlowError::EmptySelection) => {
                    diagnostics.empty_selections += 1;
                    continue;
                }
            },
            VectorMode::Record => {
                let records: Vec<TlsRecord> = session
                    .records
                    .iter()
                    .filter(|(direction, _)| match options.direction {
                        DirectionMode::Both => true,
                        DirectionMode::ClientOnly => *direction == session.client_direction,
                        DirectionMode::ServerOnly => *direction != session.client_direction,
                    })
                    .map(|(_, record)| record.clone())
                    .collect();
                match tls::record_length_vector(&records, options.include) {
                    Ok(vector) => vector,
                    Err(tls::TlsError::EmptySelection) => {
                        diagnostics.empty_selections += 1;
                        continue;
                    }
                }
            }
        };
        let suite_fingerprint = client_hello.as_ref().map(tls::suite_list_fingerprint);
        sessions.push(SessionExtract {
            flow_key: flow.key,
            frame_count: flow.frames.len(),
            vector,
            client_hello,
            suite_fingerprint,
        });
    }
    Ok(ExtractReport {
        sessions,
        diagnostics,
    })
}
