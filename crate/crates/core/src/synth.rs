//! Deterministic session synthesis: browser-style TLS sessions emitted as
//! pcap bytes together with a ground-truth plan.
//!
//! Expected vectors are computed from closed-form header arithmetic
//! (Ethernet 14 + IPv4 20 + TCP 20 + payload), never measured back from the
//! emitted bytes, so the plan is a genuine oracle for the parsers that later
//! read the capture.

use std::net::{IpAddr, Ipv4Addr};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::flow::Endpoint;
use crate::metrics::LengthVector;
use crate::pcap::{CaptureFrame, LinkType};
use crate::tls::{ContentType, RECORD_HEADER_LEN};

/// Ethernet + IPv4 + TCP header bytes on every emitted frame.
pub const FRAME_OVERHEAD: u32 = 54;

const MAX_RECORD_PAYLOAD: usize = crate::tls::MAX_RECORD_PAYLOAD;
const CLIENT_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
const SERVER_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x02];
const BASE_TS_MICROS: u64 = 1_700_000_000_000_000;
const TS_STEP_MICROS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SessionDirection {
    #[default]
    Client,
    Server,
}

/// One scripted record: who sends it, its content type, and payload size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordStep {
    #[serde(default)]
    pub direction: SessionDirection,
    pub content_type: ContentType,
    pub payload_len: usize,
}

/// Scripted capture imperfections, applied to the emitted frame list in
/// order. Indices address the frame list as it stands when the directive
/// runs (a duplicate shifts everything after it by one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceDirective {
    /// Re-emit frame `index` immediately after itself (a retransmission).
    DuplicateFrame { index: usize },
    /// Swap the capture positions of two frames.
    SwapFrames { first: usize, second: usize },
}

/// A scripted browser behavior: the ClientHello contents plus the record
/// plan the session carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrowserProfile {
    pub name: String,
    #[serde(deserialize_with = "de_codes")]
    pub cipher_suites: Vec<u16>,
    #[serde(default, deserialize_with = "de_codes")]
    pub extension_codes: Vec<u16>,
    #[serde(default)]
    pub sni: Option<String>,
    #[serde(default)]
    pub alpn: Vec<String>,
    #[serde(default)]
    pub record_plan: Vec<RecordStep>,
    /// Largest TCP payload carried by one frame.
    #[serde(default = "default_segmentation")]
    pub segmentation: usize,
    /// Emit a pure ACK after every `ack_policy` data frames; 0 disables.
    #[serde(default)]
    pub ack_policy: u32,
    /// Emit the SYN / SYN-ACK / ACK opening.
    #[serde(default = "default_true")]
    pub tcp_handshake: bool,
    /// Emit a real ClientHello record before the plan steps. Off, the
    /// session carries only the scripted records (pure length scripting).
    #[serde(default = "default_true")]
    pub emit_client_hello: bool,
    /// Scripted duplication/reorder applied to the emitted frames.
    #[serde(default)]
    pub directives: Vec<TraceDirective>,
}

fn default_segmentation() -> usize {
    1460
}

fn default_true() -> bool {
    true
}

/// Accept suite/extension codes as integers or hex strings ("0x1301"/"1301").
fn de_codes<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u16>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Code {
        Num(u16),
        Hex(String),
    }
    let raw = Vec::<Code>::deserialize(deserializer)?;
    raw.into_iter()
        .map(|code| match code {
            Code::Num(n) => Ok(n),
            Code::Hex(s) => {
                let trimmed = s.trim_start_matches("0x");
                u16::from_str_radix(trimmed, 16).map_err(|e| {
                    serde::de::Error::custom(format!("bad 16-bit hex code {s:?}: {e}"))
                })
            }
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

impl BrowserProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.name.is_empty() {
            return Err(SynthError::InvalidProfile("name must not be empty".into()));
        }
        if self.cipher_suites.is_empty() {
            return Err(SynthError::InvalidProfile(
                "cipher suite list must not be empty".into(),
            ));
        }
        if self.segmentation == 0 {
            return Err(SynthError::InvalidProfile(
                "segmentation must be at least 1 byte".into(),
            ));
        }
        for (i, step) in self.record_plan.iter().enumerate() {
            if step.payload_len > MAX_RECORD_PAYLOAD {
                return Err(SynthError::InvalidProfile(format!(
                    "record step {i} payload {} exceeds the record bound {MAX_RECORD_PAYLOAD}",
                    step.payload_len
                )));
            }
        }
        if !self.emit_client_hello && self.record_plan.is_empty() {
            return Err(SynthError::InvalidProfile(
                "profile carries no TLS records".into(),
            ));
        }
        let ch = self.client_hello_len();
        if self.emit_client_hello && ch > MAX_RECORD_PAYLOAD {
            return Err(SynthError::InvalidProfile(format!(
                "ClientHello of {ch} bytes exceeds the record bound {MAX_RECORD_PAYLOAD}"
            )));
        }
        Ok(())
    }

    /// Closed-form ClientHello handshake-message size for this profile.
    ///
    /// Fixed parts: 4 (handshake header) + 2 (version) + 32 (random) +
    /// 1 + 32 (session id) + 2 (suite list length) + 1 + 1 (compression) +
    /// 2 (extension block length) = 77 bytes; plus 2 bytes per suite and
    /// 4 + body per extension.
    pub fn client_hello_len(&self) -> usize {
        let ext_bodies: usize = self
            .extension_codes
            .iter()
            .map(|&code| self.extension_body_len(code))
            .sum();
        77 + 2 * self.cipher_suites.len() + 4 * self.extension_codes.len() + ext_bodies
    }

    fn extension_body_len(&self, code: u16) -> usize {
        match code {
            0x0000 => self.sni.as_ref().map(|h| 5 + h.len()).unwrap_or(0),
            0x0010 if !self.alpn.is_empty() => {
                2 + self.alpn.iter().map(|p| 1 + p.len()).sum::<usize>()
            }
            0x002b => 3,
            _ => 0,
        }
    }
}

/// Ground truth for one synthesized session. Expected vectors are derived
/// arithmetically from the profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthPlan {
    pub profile: BrowserProfile,
    pub seed: u64,
    pub expected_frame_lengths: LengthVector,
    pub expected_record_lengths: LengthVector,
    #[serde(serialize_with = "ser_hex")]
    pub client_hello_bytes: Vec<u8>,
}

fn ser_hex<S: serde::Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    serializer.serialize_str(&hex)
}

impl SynthPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

struct Wire {
    frames: Vec<CaptureFrame>,
    ts: u64,
    ip_id: u16,
}

impl Wire {
    fn new() -> Self {
        Wire {
            frames: Vec::new(),
            ts: BASE_TS_MICROS,
            ip_id: 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push_tcp(
        &mut self,
        from_client: bool,
        client: Endpoint,
        server: Endpoint,
        seq: u32,
        ack: u32,
        flags: u8,
        payload: &[u8],
    ) {
        let (src, dst, src_mac, dst_mac) = if from_client {
            (client, server, CLIENT_MAC, SERVER_MAC)
        } else {
            (server, client, SERVER_MAC, CLIENT_MAC)
        };
        let bytes = build_tcp_frame(src_mac, dst_mac, src, dst, seq, ack, flags, self.ip_id, payload);
        self.ip_id = self.ip_id.wrapping_add(1);
        let frame = CaptureFrame {
            ts_micros: self.ts,
            wire_len: bytes.len() as u32,
            cap_len: bytes.len() as u32,
            link_type: LinkType::Ethernet,
            payload: bytes,
        };
        self.ts += TS_STEP_MICROS;
        self.frames.push(frame);
    }
}

fn ipv4_octets(ep: Endpoint) -> [u8; 4] {
    match ep.ip {
        IpAddr::V4(v4) => v4.octets(),
        IpAddr::V6(_) => unreachable!("synthesis uses IPv4 endpoints"),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_tcp_frame(
    src_mac: [u8; 6],
    dst_mac: [u8; 6],
    src: Endpoint,
    dst: Endpoint,
    seq: u32,
    ack: u32,
    flags: u8,
    ip_id: u16,
    payload: &[u8],
) -> Vec<u8> {
    let mut tcp = Vec::with_capacity(20 + payload.len());
    tcp.extend_from_slice(&src.port.to_be_bytes());
    tcp.extend_from_slice(&dst.port.to_be_bytes());
    tcp.extend_from_slice(&seq.to_be_bytes());
    tcp.extend_from_slice(&ack.to_be_bytes());
    tcp.push(5 << 4); // data offset, no options
    tcp.push(flags);
    tcp.extend_from_slice(&65535u16.to_be_bytes());
    tcp.extend_from_slice(&[0, 0]); // checksum patched below
    tcp.extend_from_slice(&[0, 0]); // urgent pointer
    tcp.extend_from_slice(payload);

    let src_ip = ipv4_octets(src);
    let dst_ip = ipv4_octets(dst);
    let tcp_checksum = tcp_checksum(src_ip, dst_ip, &tcp);
    tcp[16..18].copy_from_slice(&tcp_checksum.to_be_bytes());

    let total_len = (20 + tcp.len()) as u16;
    let mut ip = Vec::with_capacity(20);
    ip.push(0x45);
    ip.push(0);
    ip.extend_from_slice(&total_len.to_be_bytes());
    ip.extend_from_slice(&ip_id.to_be_bytes());
    ip.extend_from_slice(&0x4000u16.to_be_bytes()); // don't fragment
    ip.push(64);
    ip.push(6);
    ip.extend_from_slice(&[0, 0]); // checksum patched below
    ip.extend_from_slice(&src_ip);
    ip.extend_from_slice(&dst_ip);
    let ip_checksum = ones_complement_sum(&ip);
    ip[10..12].copy_from_slice(&ip_checksum.to_be_bytes());

    let mut frame = Vec::with_capacity(14 + ip.len() + tcp.len());
    frame.extend_from_slice(&dst_mac);
    frame.extend_from_slice(&src_mac);
    frame.extend_from_slice(&crate::net::ETHERTYPE_IPV4.to_be_bytes());
    frame.extend_from_slice(&ip);
    frame.extend_from_slice(&tcp);
    frame
}

fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in bytes.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn tcp_checksum(src_ip: [u8; 4], dst_ip: [u8; 4], tcp: &[u8]) -> u16 {
    let mut pseudo = Vec::with_capacity(12 + tcp.len());
    pseudo.extend_from_slice(&src_ip);
    pseudo.extend_from_slice(&dst_ip);
    pseudo.push(0);
    pseudo.push(6);
    pseudo.extend_from_slice(&(tcp.len() as u16).to_be_bytes());
    pseudo.extend_from_slice(tcp);
    ones_complement_sum(&pseudo)
}

fn encode_record(content_type: ContentType, version: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_HEADER_LEN + payload.len());
    out.push(content_type.byte());
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

fn build_client_hello(profile: &BrowserProfile, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&0x0303u16.to_be_bytes());
    let mut random = [0u8; 32];
    rng.fill_bytes(&mut random);
    body.extend_from_slice(&random);
    let mut session_id = [0u8; 32];
    rng.fill_bytes(&mut session_id);
    body.push(32);
    body.extend_from_slice(&session_id);
    body.extend_from_slice(&((profile.cipher_suites.len() * 2) as u16).to_be_bytes());
    for suite in &profile.cipher_suites {
        body.extend_from_slice(&suite.to_be_bytes());
    }
    body.push(1);
    body.push(0);
    let mut ext_block = Vec::new();
    for &code in &profile.extension_codes {
        let data = extension_body(profile, code);
        ext_block.extend_from_slice(&code.to_be_bytes());
        ext_block.extend_from_slice(&(data.len() as u16).to_be_bytes());
        ext_block.extend_from_slice(&data);
    }
    body.extend_from_slice(&(ext_block.len() as u16).to_be_bytes());
    body.extend_from_slice(&ext_block);

    let mut msg = Vec::with_capacity(4 + body.len());
    msg.push(0x01);
    msg.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    msg.extend_from_slice(&body);
    msg
}

fn extension_body(profile: &BrowserProfile, code: u16) -> Vec<u8> {
    match code {
        0x0000 => match &profile.sni {
            Some(host) => {
                let mut body = Vec::new();
                body.extend_from_slice(&((host.len() + 3) as u16).to_be_bytes());
                body.push(0);
                body.extend_from_slice(&(host.len() as u16).to_be_bytes());
                body.extend_from_slice(host.as_bytes());
                body
            }
            None => Vec::new(),
        },
        0x0010 if !profile.alpn.is_empty() => {
            let mut list = Vec::new();
            for proto in &profile.alpn {
                list.push(proto.len() as u8);
                list.extend_from_slice(proto.as_bytes());
            }
            let mut body = Vec::new();
            body.extend_from_slice(&(list.len() as u16).to_be_bytes());
            body.extend_from_slice(&list);
            body
        }
        0x002b => vec![2, 0x03, 0x04],
        _ => Vec::new(),
    }
}

/// Synthesize one complete Ethernet/IPv4/TCP session to port 443 carrying
/// the profile's records. Deterministic for `(profile, seed)`.
pub fn synth_session(
    profile: &BrowserProfile,
    seed: u64,
) -> Result<(Vec<u8>, SynthPlan), SynthError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let client = Endpoint {
        ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
        port: 40000 + (seed % 20000) as u16,
    };
    let server = Endpoint {
        ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
        port: 443,
    };
    let isn_client = rng.next_u32();
    let isn_server = rng.next_u32();

    let client_hello_bytes = if profile.emit_client_hello {
        build_client_hello(profile, &mut rng)
    } else {
        Vec::new()
    };
    if profile.emit_client_hello {
        debug_assert_eq!(client_hello_bytes.len(), profile.client_hello_len());
    }

    struct Emit {
        direction: SessionDirection,
        content_type: ContentType,
        version: u16,
        payload: Vec<u8>,
    }
    let mut emits = Vec::new();
    if profile.emit_client_hello {
        emits.push(Emit {
            direction: SessionDirection::Client,
            content_type: ContentType::Handshake,
            version: 0x0301,
            payload: client_hello_bytes.clone(),
        });
    }
    for step in &profile.record_plan {
        let mut filler = vec![0u8; step.payload_len];
        rng.fill_bytes(&mut filler);
        emits.push(Emit {
            direction: step.direction,
            content_type: step.content_type,
            version: 0x0303,
            payload: filler,
        });
    }

    let mut expected_frames: Vec<u32> = Vec::new();
    let mut expected_records: Vec<u32> = Vec::new();
    let mut wire = Wire::new();
    let mut seq_client;
    let mut seq_server;
    if profile.tcp_handshake {
        wire.push_tcp(true, client, server, isn_client, 0, 0x02, &[]);
        wire.push_tcp(
            false,
            client,
            server,
            isn_server,
            isn_client.wrapping_add(1),
            0x12,
            &[],
        );
        seq_client = isn_client.wrapping_add(1);
        seq_server = isn_server.wrapping_add(1);
        wire.push_tcp(true, client, server, seq_client, seq_server, 0x10, &[]);
        expected_frames.extend([FRAME_OVERHEAD; 3]);
    } else {
        seq_client = isn_client;
        seq_server = isn_server;
    }

    let mut data_frames = 0u32;
    for emit in &emits {
        expected_records.push((RECORD_HEADER_LEN + emit.payload.len()) as u32);
        let record = encode_record(emit.content_type, emit.version, &emit.payload);
        let chunk_count = record.chunks(profile.segmentation).count();
        for (ci, chunk) in record.chunks(profile.segmentation).enumerate() {
            let from_client = emit.direction == SessionDirection::Client;
            let flags = if ci + 1 == chunk_count { 0x18 } else { 0x10 };
            let (seq, ack) = if from_client {
                (seq_client, seq_server)
            } else {
                (seq_server, seq_client)
            };
            wire.push_tcp(from_client, client, server, seq, ack, flags, chunk);
            if from_client {
                seq_client = seq_client.wrapping_add(chunk.len() as u32);
            } else {
                seq_server = seq_server.wrapping_add(chunk.len() as u32);
            }
            expected_frames.push(FRAME_OVERHEAD + chunk.len() as u32);
            data_frames += 1;
            if profile.ack_policy > 0 && data_frames.is_multiple_of(profile.ack_policy) {
                let (ack_seq, ack_ack) = if from_client {
                    (seq_server, seq_client)
                } else {
                    (seq_client, seq_server)
                };
                wire.push_tcp(!from_client, client, server, ack_seq, ack_ack, 0x10, &[]);
                expected_frames.push(FRAME_OVERHEAD);
            }
        }
    }

    for directive in &profile.directives {
        match *directive {
            TraceDirective::DuplicateFrame { index } => {
                if index >= wire.frames.len() {
                    return Err(SynthError::InvalidProfile(format!(
                        "duplicate_frame index {index} out of range ({} frames)",
                        wire.frames.len()
                    )));
                }
                let frame = wire.frames[index].clone();
                wire.frames.insert(index + 1, frame);
                let len = expected_frames[index];
                expected_frames.insert(index + 1, len);
            }
            TraceDirective::SwapFrames { first, second } => {
                if first >= wire.frames.len() || second >= wire.frames.len() {
                    return Err(SynthError::InvalidProfile(format!(
                        "swap_frames indices {first}/{second} out of range ({} frames)",
                        wire.frames.len()
                    )));
                }
                wire.frames.swap(first, second);
                expected_frames.swap(first, second);
            }
        }
    }
    if !profile.directives.is_empty() {
        // re-stamp so capture order stays monotone after edits
        for (i, frame) in wire.frames.iter_mut().enumerate() {
            frame.ts_micros = BASE_TS_MICROS + i as u64 * TS_STEP_MICROS;
        }
    }

    let pcap = serialize_pcap(&wire.frames);
    let plan = SynthPlan {
        profile: profile.clone(),
        seed,
        expected_frame_lengths: LengthVector::new(expected_frames)
            .expect("a valid profile emits at least one frame"),
        expected_record_lengths: LengthVector::new(expected_records)
            .expect("a valid profile carries at least one record"),
        client_hello_bytes,
    };
    Ok((pcap, plan))
}

/// Write frames as a classic little-endian microsecond pcap file; the exact
/// inverse of the reader for files it produced.
pub fn serialize_pcap(frames: &[CaptureFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        24 + frames
            .iter()
            .map(|f| 16 + f.payload.len())
            .sum::<usize>(),
    );
    out.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&crate::pcap::LINKTYPE_ETHERNET.to_le_bytes());
    for frame in frames {
        out.extend_from_slice(&((frame.ts_micros / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((frame.ts_micros % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&frame.cap_len.to_le_bytes());
        out.extend_from_slice(&frame.wire_len.to_le_bytes());
        out.extend_from_slice(&frame.payload);
    }
    out
}
