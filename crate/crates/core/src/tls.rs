//! TLS record-layer parsing over reassembled TCP streams.
//!
//! Nothing is ever decrypted: encrypted handshake flights and application
//! data are opaque payloads whose only interesting property is their size.
//! The cleartext ClientHello (and the ServerHello's selected suite) are the
//! single place the parser looks inside a record.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::flow::{Flow, FlowDirection};
use crate::metrics::LengthVector;
use crate::net::{self, FrameClass};

/// Largest payload a TLS 1.3 record may carry (2^14 plaintext + 256
/// ciphertext expansion).
pub const MAX_RECORD_PAYLOAD: usize = (1 << 14) + 256;

/// Bytes of a record-layer header: type, legacy version, length.
pub const RECORD_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    #[serde(alias = "ccs")]
    ChangeCipherSpec,
    Alert,
    #[serde(alias = "hs")]
    Handshake,
    #[serde(alias = "app")]
    ApplicationData,
}

impl ContentType {
    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            20 => Some(ContentType::ChangeCipherSpec),
            21 => Some(ContentType::Alert),
            22 => Some(ContentType::Handshake),
            23 => Some(ContentType::ApplicationData),
            _ => None,
        }
    }

    pub fn byte(self) -> u8 {
        match self {
            ContentType::ChangeCipherSpec => 20,
            ContentType::Alert => 21,
            ContentType::Handshake => 22,
            ContentType::ApplicationData => 23,
        }
    }
}

/// One record-layer unit. The header's length field always equals
/// `payload.len()`, so it is not stored separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsRecord {
    pub content_type: ContentType,
    pub legacy_version: u16,
    pub payload: Vec<u8>,
}

impl TlsRecord {
    /// Payload length as carried in the record header.
    pub fn length(&self) -> usize {
        self.payload.len()
    }

    /// On-wire size: the 5-byte header plus payload.
    pub fn wire_len(&self) -> usize {
        RECORD_HEADER_LEN + self.payload.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordStreamError {
    #[error("invalid content type 0x{byte:02x} at offset {offset}: stream is not at a record boundary")]
    InvalidContentType { offset: usize, byte: u8 },
    #[error("record at offset {offset} claims {length} payload bytes, above the TLS 1.3 bound")]
    OversizeRecord { offset: usize, length: usize },
    #[error("{bytes} trailing bytes form an incomplete record")]
    TrailingPartialRecord { bytes: usize },
}

/// Outcome of scanning a byte stream for records: everything parsed before
/// the first defect, plus the defect itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordStream {
    pub records: Vec<TlsRecord>,
    pub error: Option<RecordStreamError>,
    /// Bytes consumed into complete records.
    pub consumed: usize,
}

impl RecordStream {
    pub fn trailing_partial(&self) -> usize {
        match self.error {
            Some(RecordStreamError::TrailingPartialRecord { bytes }) => bytes,
            _ => 0,
        }
    }
}

/// Parse consecutive records from a stream that starts at a record boundary.
/// A trailing partial record is reported, not silently dropped.
pub fn parse_records(stream: &[u8]) -> RecordStream {
    let mut records = Vec::new();
    let mut off = 0usize;
    while off < stream.len() {
        let byte = stream[off];
        let Some(content_type) = ContentType::from_byte(byte) else {
            return RecordStream {
                records,
                error: Some(RecordStreamError::InvalidContentType { offset: off, byte }),
                consumed: off,
            };
        };
        let remaining = stream.len() - off;
        if remaining < RECORD_HEADER_LEN {
            return RecordStream {
                records,
                error: Some(RecordStreamError::TrailingPartialRecord { bytes: remaining }),
                consumed: off,
            };
        }
        let length = u16::from_be_bytes([stream[off + 3], stream[off + 4]]) as usize;
        if length > MAX_RECORD_PAYLOAD {
            return RecordStream {
                records,
                error: Some(RecordStreamError::OversizeRecord {
                    offset: off,
                    length,
                }),
                consumed: off,
            };
        }
        if remaining < RECORD_HEADER_LEN + length {
            return RecordStream {
                records,
                error: Some(RecordStreamError::TrailingPartialRecord { bytes: remaining }),
                consumed: off,
            };
        }
        records.push(TlsRecord {
            content_type,
            legacy_version: u16::from_be_bytes([stream[off + 1], stream[off + 2]]),
            payload: stream[off + RECORD_HEADER_LEN..off + RECORD_HEADER_LEN + length].to_vec(),
        });
        off += RECORD_HEADER_LEN + length;
    }
    RecordStream {
        records,
        error: None,
        consumed: off,
    }
}

/// ClientHello fields relevant to fingerprinting, in wire order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHelloSummary {
    pub cipher_suites: Vec<u16>,
    pub extensions: Vec<u16>,
    pub sni: Option<String>,
    pub alpn: Option<Vec<String>>,
    pub supported_versions: Vec<u16>,
}

impl ClientHelloSummary {
    /// JSON export with hex-coded suites/extensions and the canonical
    /// fingerprint string.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "cipher_suites": self.cipher_suites.iter().map(|c| format!("{c:04x}")).collect::<Vec<_>>(),
            "extensions": self.extensions.iter().map(|c| format!("{c:04x}")).collect::<Vec<_>>(),
            "sni": self.sni,
            "alpn": self.alpn,
            "fingerprint": suite_list_fingerprint(self),
        })
    }
}

/// ServerHello fields: the selected suite and the negotiated version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHelloSummary {
    pub cipher_suite: u16,
    pub supported_versions: Vec<u16>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("record does not carry a ClientHello")]
    NotClientHello,
    #[error("record does not carry a ServerHello")]
    NotServerHello,
    #[error("malformed handshake: {0}")]
    MalformedHandshake(&'static str),
}

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, off: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.off
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], HandshakeError> {
        if self.remaining() < n {
            return Err(HandshakeError::MalformedHandshake(what));
        }
        let out = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, HandshakeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, HandshakeError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

fn handshake_body(
    record: &TlsRecord,
    msg_type: u8,
    wrong_type: HandshakeError,
) -> Result<&[u8], HandshakeError> {
    if record.content_type != ContentType::Handshake {
        return Err(wrong_type);
    }
    let p = &record.payload;
    if p.is_empty() || p[0] != msg_type {
        return Err(wrong_type);
    }
    if p.len() < 4 {
        return Err(HandshakeError::MalformedHandshake(
            "handshake header cut short",
        ));
    }
    let msg_len = u32::from_be_bytes([0, p[1], p[2], p[3]]) as usize;
    if p.len() < 4 + msg_len {
        return Err(HandshakeError::MalformedHandshake(
            "handshake length exceeds record payload",
        ));
    }
    // bytes past the first message are coalesced siblings; the record stays
    // the unit of length accounting, so they are simply not parsed here
    Ok(&p[4..4 + msg_len])
}

/// Extract the fingerprint-relevant ClientHello fields. Unknown extensions
/// are kept as codes; malformed bodies of known extensions degrade to
/// absent fields rather than errors.
pub fn parse_client_hello(record: &TlsRecord) -> Result<ClientHelloSummary, HandshakeError> {
    let body = handshake_body(record, 0x01, HandshakeError::NotClientHello)?;
    let mut r = Reader::new(body);
    r.u16("legacy version cut short")?;
    r.take(32, "random cut short")?;
    let sid_len = r.u8("session id length cut short")? as usize;
    if sid_len > 32 {
        return Err(HandshakeError::MalformedHandshake(
            "session id longer than 32 bytes",
        ));
    }
    r.take(sid_len, "session id cut short")?;
    let suites_len = r.u16("cipher suite list length cut short")? as usize;
    if !suites_len.is_multiple_of(2) {
        return Err(HandshakeError::MalformedHandshake(
            "cipher suite list length is odd",
        ));
    }
    let suite_bytes = r.take(suites_len, "cipher suite list exceeds payload")?;
    let cipher_suites: Vec<u16> = suite_bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    if cipher_suites.is_empty() {
        return Err(HandshakeError::MalformedHandshake(
            "empty cipher suite list",
        ));
    }
    let comp_len = r.u8("compression length cut short")? as usize;
    r.take(comp_len, "compression methods cut short")?;

    let mut extensions = Vec::new();
    let mut sni = None;
    let mut alpn = None;
    let mut supported_versions = Vec::new();
    if r.remaining() > 0 {
        let ext_total = r.u16("extension block length cut short")? as usize;
        let block = r.take(ext_total, "extension block exceeds payload")?;
        if r.remaining() > 0 {
            return Err(HandshakeError::MalformedHandshake(
                "trailing bytes after extensions",
            ));
        }
        let mut er = Reader::new(block);
        while er.remaining() > 0 {
            let code = er.u16("extension code cut short")?;
            let len = er.u16("extension length cut short")? as usize;
            let data = er.take(len, "extension length exceeds block")?;
            extensions.push(code);
            match code {
                0x0000 => sni = parse_sni(data),
                0x0010 => alpn = parse_alpn(data),
                0x002b => supported_versions = parse_supported_versions(data),
                _ => {}
            }
        }
    }
    Ok(ClientHelloSummary {
        cipher_suites,
        extensions,
        sni,
        alpn,
        supported_versions,
    })
}

/// Extract the selected cipher suite and negotiated version from a
/// ServerHello.
pub fn parse_server_hello(record: &TlsRecord) -> Result<ServerHelloSummary, HandshakeError> {
    let body = handshake_body(record, 0x02, HandshakeError::NotServerHello)?;
    let mut r = Reader::new(body);
    r.u16("legacy version cut short")?;
    r.take(32, "random cut short")?;
    let sid_len = r.u8("session id length cut short")? as usize;
    r.take(sid_len, "session id cut short")?;
    let cipher_suite = r.u16("cipher suite cut short")?;
    r.u8("compression method cut short")?;
    let mut supported_versions = Vec::new();
    if r.remaining() > 0 {
        let ext_total = r.u16("extension block length cut short")? as usize;
        let block = r.take(ext_total, "extension block exceeds payload")?;
        let mut er = Reader::new(block);
        while er.remaining() > 0 {
            let code = er.u16("extension code cut short")?;
            let len = er.u16("extension length cut short")? as usize;
            let data = er.take(len, "extension length exceeds block")?;
            // in a ServerHello this extension carries the single selected
            // version, without a list prefix
            if code == 0x002b && data.len() == 2 {
                supported_versions = vec![u16::from_be_bytes([data[0], data[1]])];
            }
        }
    }
    Ok(ServerHelloSummary {
        cipher_suite,
        supported_versions,
    })
}

fn parse_sni(data: &[u8]) -> Option<String> {
    let mut r = Reader::new(data);
    let list_len = r.u16("").ok()? as usize;
    let mut lr = Reader::new(r.take(list_len.min(r.remaining()), "").ok()?);
    while lr.remaining() >= 3 {
        let name_type = lr.u8("").ok()?;
        let len = lr.u16("").ok()? as usize;
        let name = lr.take(len, "").ok()?;
        if name_type == 0 {
            return String::from_utf8(name.to_vec()).ok();
        }
    }
    None
}

fn parse_alpn(data: &[u8]) -> Option<Vec<String>> {
    let mut r = Reader::new(data);
    let list_len = r.u16("").ok()? as usize;
    let mut lr = Reader::new(r.take(list_len.min(r.remaining()), "").ok()?);
    let mut protocols = Vec::new();
    while lr.remaining() > 0 {
        let len = lr.u8("").ok()? as usize;
        let proto = lr.take(len, "").ok()?;
        if let Ok(s) = String::from_utf8(proto.to_vec()) {
            protocols.push(s);
        }
    }
    Some(protocols)
}

fn parse_supported_versions(data: &[u8]) -> Vec<u16> {
    let mut r = Reader::new(data);
    let Ok(len) = r.u8("") else {
        return Vec::new();
    };
    let Ok(body) = r.take((len as usize).min(r.remaining()), "") else {
        return Vec::new();
    };
    body.chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect()
}

/// Canonical text form of a ClientHello's suite/extension lists: comma-joined
/// lowercase hex codes, suites then `;` then extensions. Order-preserving,
/// so reordered lists produce different strings.
pub fn suite_list_fingerprint(hello: &ClientHelloSummary) -> String {
    let suites = hello
        .cipher_suites
        .iter()
        .map(|c| format!("{c:04x}"))
        .collect::<Vec<_>>()
        .join(",");
    let exts = hello
        .extensions
        .iter()
        .map(|c| format!("{c:04x}"))
        .collect::<Vec<_>>()
        .join(",");
    format!("{suites};{exts}")
}

/// Set of record content types to keep in a record-length vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordTypeSet(u8);

impl RecordTypeSet {
    pub const fn empty() -> Self {
        RecordTypeSet(0)
    }

    pub const fn all() -> Self {
        RecordTypeSet(0b1111)
    }

    pub fn of(types: &[ContentType]) -> Self {
        let mut set = RecordTypeSet::empty();
        for &t in types {
            set.insert(t);
        }
        set
    }

    pub fn insert(&mut self, t: ContentType) {
        self.0 |= 1 << (t.byte() - 20);
    }

    pub fn contains(&self, t: ContentType) -> bool {
        self.0 & (1 << (t.byte() - 20)) != 0
    }
}

impl Default for RecordTypeSet {
    /// Handshake and application data, the two flights the length method
    /// is built on.
    fn default() -> Self {
        RecordTypeSet::of(&[ContentType::Handshake, ContentType::ApplicationData])
    }
}

impl FromStr for RecordTypeSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(RecordTypeSet::all());
        }
        let mut set = RecordTypeSet::empty();
        for part in s.split(',') {
            match part.trim() {
                "hs" | "handshake" => set.insert(ContentType::Handshake),
                "app" | "application_data" => set.insert(ContentType::ApplicationData),
                "ccs" | "change_cipher_spec" => set.insert(ContentType::ChangeCipherSpec),
                "alert" => set.insert(ContentType::Alert),
                other => return Err(format!("unknown record type {other:?}")),
            }
        }
        if set == RecordTypeSet::empty() {
            return Err("record type set must not be empty".into());
        }
        Ok(set)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlsError {
    #[error("selection removed every record")]
    EmptySelection,
}

/// On-wire lengths (header + payload) of the records whose type is in
/// `include`, in order.
pub fn record_length_vector(
    records: &[TlsRecord],
    include: RecordTypeSet,
) -> Result<LengthVector, TlsError> {
    let lengths: Vec<u32> = records
        .iter()
        .filter(|r| include.contains(r.content_type))
        .map(|r| r.wire_len() as u32)
        .collect();
    LengthVector::new(lengths).map_err(|_| TlsError::EmptySelection)
}

/// One direction of a flow reassembled into a contiguous byte stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DirectionStream {
    pub data: Vec<u8>,
    /// A sequence hole was found; the stream stops at the gap.
    pub gap_detected: bool,
    /// Segments dropped or trimmed because their bytes were already seen.
    pub duplicate_segments: usize,
    segments: Vec<SegmentSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SegmentSpan {
    start: usize,
    end: usize,
    frame_index: usize,
}

impl DirectionStream {
    pub fn bytes_recovered(&self) -> usize {
        self.data.len()
    }

    /// Index (within the flow's frame list) of the frame that carried the
    /// byte at `off`.
    pub fn frame_for_offset(&self, off: usize) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.end <= off);
        let span = self.segments.get(i)?;
        (span.start <= off && off < span.end).then_some(span.frame_index)
    }
}

/// Concatenate the TCP payload bytes of one direction in sequence order.
/// Duplicate segments are dropped and counted; a sequence gap terminates the
/// stream at the gap.
pub fn reassemble_direction(flow: &Flow, direction: FlowDirection) -> DirectionStream {
    let mut syn_base: Option<u32> = None;
    let mut segs: Vec<(u32, usize, &[u8])> = Vec::new();
    for (i, (dir, frame)) in flow.frames.iter().enumerate() {
        if *dir != direction {
            continue;
        }
        let FrameClass::Tcp(view) = net::classify(&frame.payload) else {
            continue;
        };
        if syn_base.is_none() && view.flags & net::TCP_SYN != 0 {
            // the SYN consumes one sequence number; payload starts after it
            syn_base = Some(view.seq.wrapping_add(1));
        }
        if !view.payload.is_empty() {
            segs.push((view.seq, i, view.payload));
        }
    }
    if segs.is_empty() {
        return DirectionStream::default();
    }
    let base = syn_base.unwrap_or_else(|| {
        // no SYN seen: anchor at the earliest sequence number, wrap-aware
        // around the first-captured segment
        let reference = segs[0].0;
        let min_delta = segs
            .iter()
            .map(|&(seq, ..)| seq.wrapping_sub(reference) as i32)
            .min()
            .expect("segs non-empty");
        reference.wrapping_add(min_delta as u32)
    });
    let mut rel: Vec<(u64, usize, &[u8])> = segs
        .into_iter()
        .map(|(seq, i, p)| (seq.wrapping_sub(base) as u64, i, p))
        .collect();
    rel.sort_by_key(|&(off, i, _)| (off, i));

    let mut out = DirectionStream::default();
    let mut expected = 0u64;
    for (off, frame_index, bytes) in rel {
        let end = off + bytes.len() as u64;
        if end <= expected {
            out.duplicate_segments += 1;
            continue;
        }
        if off > expected {
            out.gap_detected = true;
            break;
        }
        let skip = (expected - off) as usize;
        if skip > 0 {
            out.duplicate_segments += 1;
        }
        let slice = &bytes[skip..];
        out.segments.push(SegmentSpan {
            start: out.data.len(),
            end: out.data.len() + slice.len(),
            frame_index,
        });
        out.data.extend_from_slice(slice);
        expected = end;
    }
    out
}

/// Records of both directions in session order. A record is placed by the
/// capture position of the frame that completed it, which interleaves the
/// two directions the way the messages appeared on the wire.
#[derive(Debug, Clone)]
pub struct SessionRecords {
    pub records: Vec<(FlowDirection, TlsRecord)>,
    pub client_direction: FlowDirection,
    pub stream_errors: Vec<(FlowDirection, RecordStreamError)>,
    pub gap_detected: bool,
    pub duplicate_segments: usize,
}

pub fn session_records(flow: &Flow) -> SessionRecords {
    let client_direction = flow.client_direction();
    let mut stream_errors = Vec::new();
    let mut gap_detected = false;
    let mut duplicate_segments = 0;
    let mut tagged: Vec<(usize, usize, FlowDirection, TlsRecord)> = Vec::new();
    for direction in [FlowDirection::AToB, FlowDirection::BToA] {
        let stream = reassemble_direction(flow, direction);
        gap_detected |= stream.gap_detected;
        duplicate_segments += stream.duplicate_segments;
        if stream.data.is_empty() {
            continue;
        }
        let parsed = parse_records(&stream.data);
        if let Some(e) = parsed.error {
            stream_errors.push((direction, e));
        }
        let mut off = 0usize;
        for (k, record) in parsed.records.into_iter().enumerate() {
            let end = off + record.wire_len();
            let frame_index = stream
                .frame_for_offset(end - 1)
                .expect("record bytes lie within the reassembled stream");
            tagged.push((frame_index, k, direction, record));
            off = end;
        }
    }
    tagged.sort_by_key(|&(frame_index, k, ..)| (frame_index, k));
    SessionRecords {
        records: tagged
            .into_iter()
            .map(|(_, _, direction, record)| (direction, record))
            .collect(),
        client_direction,
        stream_errors,
        gap_detected,
        duplicate_segments,
    }
}
