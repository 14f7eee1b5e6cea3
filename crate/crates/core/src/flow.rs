//! Bidirectional TCP flow grouping and per-flow frame-length vectors.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;

use thiserror::Error;

use crate::metrics::LengthVector;
use crate::net::{self, FrameClass};
use crate::pcap::CaptureFrame;

/// One side of a TCP connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Canonical bidirectional TCP 4-tuple: `endpoint_a <= endpoint_b` under
/// lexicographic `(ip, port)` order, so both directions of a connection map
/// to the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
}

impl FlowKey {
    /// Canonicalize `(src, dst)` and report which direction `src -> dst`
    /// maps to under the canonical key.
    pub fn from_pair(src: Endpoint, dst: Endpoint) -> (Self, FlowDirection) {
        if src <= dst {
            (
                FlowKey {
                    endpoint_a: src,
                    endpoint_b: dst,
                },
                FlowDirection::AToB,
            )
        } else {
            (
                FlowKey {
                    endpoint_a: dst,
                    endpoint_b: src,
                },
                FlowDirection::BToA,
            )
        }
    }

    pub fn has_port(&self, port: u16) -> bool {
        self.endpoint_a.port == port || self.endpoint_b.port == port
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <-> {}", self.endpoint_a, self.endpoint_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowDirection {
    AToB,
    BToA,
}

impl FlowDirection {
    pub fn flipped(self) -> Self {
        match self {
            FlowDirection::AToB => FlowDirection::BToA,
            FlowDirection::BToA => FlowDirection::AToB,
        }
    }
}

/// Frames of one connection, in capture-file order (pcap order is
/// authoritative; frames are never re-sorted by timestamp).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flow {
    pub key: FlowKey,
    pub frames: Vec<(FlowDirection, CaptureFrame)>,
}

impl Flow {
    /// Direction the first captured frame travelled; treated as the
    /// client-to-server direction.
    pub fn client_direction(&self) -> FlowDirection {
        self.frames[0].0
    }

    pub fn first_ts(&self) -> u64 {
        self.frames[0].1.ts_micros
    }

    /// The server side: the endpoint matching `port_filter` when exactly one
    /// side does, otherwise the endpoint the first frame was sent to.
    pub fn server_endpoint(&self, port_filter: Option<u16>) -> Endpoint {
        let (a, b) = (self.key.endpoint_a, self.key.endpoint_b);
        if let Some(port) = port_filter {
            match (a.port == port, b.port == port) {
                (true, false) => return a,
                (false, true) => return b,
                _ => {}
            }
        }
        match self.client_direction() {
            FlowDirection::AToB => b,
            FlowDirection::BToA => a,
        }
    }

    fn direction_toward(&self, server: Endpoint) -> FlowDirection {
        if self.key.endpoint_b == server {
            FlowDirection::AToB
        } else {
            FlowDirection::BToA
        }
    }
}

/// Frames that were seen but not grouped, by reason.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SkippedTally {
    pub non_ip: usize,
    pub non_tcp: usize,
    pub malformed: usize,
    pub fragmented: usize,
    pub port_filtered: usize,
}

impl SkippedTally {
    pub fn total(&self) -> usize {
        self.non_ip + self.non_tcp + self.malformed + self.fragmented + self.port_filtered
    }
}

#[derive(Debug, Default, Clone)]
pub struct FlowTable {
    pub flows: BTreeMap<FlowKey, Flow>,
    pub skipped: SkippedTally,
}

/// Group frames into bidirectional TCP flows.
///
/// Non-IP, non-TCP, fragmented, and malformed frames are tallied and
/// skipped, never an error. When `port_filter` is set only flows with that
/// port on either side are kept.
pub fn group_flows(frames: Vec<CaptureFrame>, port_filter: Option<u16>) -> FlowTable {
    let mut table = FlowTable::default();
    for frame in frames {
        let (key, direction) = match net::classify(&frame.payload) {
            FrameClass::Tcp(view) => FlowKey::from_pair(view.src, view.dst),
            FrameClass::NonIp => {
                table.skipped.non_ip += 1;
                continue;
            }
            FrameClass::NonTcp => {
                table.skipped.non_tcp += 1;
                continue;
            }
            FrameClass::Fragmented => {
                table.skipped.fragmented += 1;
                continue;
            }
            FrameClass::Malformed => {
                table.skipped.malformed += 1;
                continue;
            }
        };
        if let Some(port) = port_filter {
            if !key.has_port(port) {
                table.skipped.port_filtered += 1;
                continue;
            }
        }
        table
            .flows
            .entry(key)
            .or_insert_with(|| Flow {
                key,
                frames: Vec::new(),
            })
            .frames
            .push((direction, frame));
    }
    table
}

/// Which frames of a flow contribute to its length vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionMode {
    #[default]
    Both,
    ClientOnly,
    ServerOnly,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameSelection {
    pub direction: DirectionMode,
    /// Keep only frames carrying TCP payload bytes, dropping pure ACKs and
    /// other empty segments.
    pub tls_only: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("selection removed every frame of the flow")]
    EmptySelection,
}

/// On-wire lengths of the selected frames, in flow order. The default
/// selection keeps every frame of both directions, pure ACKs included.
pub fn frame_length_vector(flow: &Flow, select: FrameSelection) -> Result<LengthVector, FlowError> {
    let client = flow.client_direction();
    let mut lengths = Vec::new();
    for (direction, frame) in &flow.frames {
        let keep = match select.direction {
            DirectionMode::Both => true,
            DirectionMode::ClientOnly => *direction == client,
            DirectionMode::ServerOnly => *direction != client,
        };
        if !keep {
            continue;
        }
        if select.tls_only && !carries_payload(frame) {
            continue;
        }
        lengths.push(frame.wire_len);
    }
    // wire_len > 0 is guaranteed by the pcap reader, so the only possible
    // constructor failure here is emptiness
    LengthVector::new(lengths).map_err(|_| FlowError::EmptySelection)
}

fn carries_payload(frame: &CaptureFrame) -> bool {
    matches!(net::classify(&frame.payload), FrameClass::Tcp(view) if !view.payload.is_empty())
}

/// Concatenate flows that share a server endpoint into one session flow per
/// server, component flows ordered by their first frame. The merged flow
/// keeps the key of its earliest component; directions of later components
/// are normalized against the shared server endpoint.
pub fn merge_flows(table: &FlowTable, port_filter: Option<u16>) -> Vec<Flow> {
    let mut by_server: BTreeMap<Endpoint, Vec<&Flow>> = BTreeMap::new();
    for flow in table.flows.values() {
        by_server
            .entry(flow.server_endpoint(port_filter))
            .or_default()
            .push(flow);
    }
    let mut merged = Vec::new();
    for (server, mut group) in by_server {
        group.sort_by_key(|f| (f.first_ts(), f.key));
        let base = group[0];
        let toward_server_merged = base.direction_toward(server);
        let mut frames = Vec::new();
        for flow in &group {
            let toward_server = flow.direction_toward(server);
            for (direction, frame) in &flow.frames {
                let mapped = if *direction == toward_server {
                    toward_server_merged
                } else {
                    toward_server_merged.flipped()
                };
                frames.push((mapped, frame.clone()));
            }
        }
        merged.push(Flow {
            key: base.key,
            frames,
        });
    }
    merged.sort_by_key(|f| (f.first_ts(), f.key));
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::testutil::tcp_frame;

    fn ep(last_octet: u8, port: u16) -> Endpoint {
        Endpoint {
            ip: IpAddr::V4(std::net::Ipv4Addr::new(10, 0, 0, last_octet)),
            port,
        }
    }

    #[test]
    fn empty_frame_list_yields_empty_map() {
        let table = group_flows(Vec::new(), Some(443));
        assert!(table.flows.is_empty());
        assert_eq!(table.skipped.total(), 0);
    }

    #[test]
    fn both_directions_map_to_one_flow() {
        let client = ep(2, 50000);
        let server = ep(1, 443);
        let frames = vec![
            tcp_frame(client, server, 1, 0, 0x18, b"hi", 0),
            tcp_frame(server, client, 9, 3, 0x18, b"yo", 1),
        ];
        let table = group_flows(frames, Some(443));
        assert_eq!(table.flows.len(), 1);
        let flow = table.flows.values().next().unwrap();
        assert_eq!(flow.frames.len(), 2);
        assert_ne!(flow.frames[0].0, flow.frames[1].0);
    }

    #[test]
    fn port_filter_drops_other_flows() {
        let frames = vec![
            tcp_frame(ep(2, 50000), ep(1, 443), 1, 0, 0x18, b"keep", 0),
            tcp_frame(ep(2, 50001), ep(1, 8080), 1, 0, 0x18, b"drop", 1),
        ];
        let table = group_flows(frames, Some(443));
        assert_eq!(table.flows.len(), 1);
        assert_eq!(table.skipped.port_filtered, 1);
    }

    #[test]
    fn non_tcp_frames_are_tallied_not_errors() {
        let mut junk = tcp_frame(ep(2, 50000), ep(1, 443), 1, 0, 0x18, b"x", 0);
        junk.payload[23] = 17; // claim UDP in the IPv4 protocol byte
        let mut arp = junk.clone();
        arp.payload[12] = 0x08;
        arp.payload[13] = 0x06;
        let short = CaptureFrame {
            ts_micros: 0,
            wire_len: 4,
            cap_len: 4,
            link_type: crate::pcap::LinkType::Ethernet,
            payload: vec![0, 1, 2, 3],
        };
        let table = group_flows(vec![junk, arp, short], None);
        assert!(table.flows.is_empty());
        assert_eq!(table.skipped.non_tcp, 1);
        assert_eq!(table.skipped.non_ip, 1);
        assert_eq!(table.skipped.malformed, 1);
    }

    #[test]
    fn frame_length_vector_is_identity_over_wire_lens() {
        let client = ep(2, 50000);
        let server = ep(1, 443);
        let frames = vec![
            tcp_frame(client, server, 1, 0, 0x18, &[0u8; 273], 0),
            tcp_frame(server, client, 1, 0, 0x18, &[0u8; 1460], 1),
            tcp_frame(client, server, 274, 0, 0x10, &[0u8; 16], 2),
        ];
        let table = group_flows(frames, Some(443));
        let flow = table.flows.values().next().unwrap();
        let v = frame_length_vector(flow, FrameSelection::default()).unwrap();
        assert_eq!(v.values(), &[327, 1514, 70]);
    }

    #[test]
    fn client_only_selects_initiator_frames() {
        let client = ep(2, 50000);
        let server = ep(1, 443);
        let frames = vec![
            tcp_frame(client, server, 1, 0, 0x18, &[0u8; 100], 0),
            tcp_frame(server, client, 1, 0, 0x18, &[0u8; 200], 1),
            tcp_frame(client, server, 101, 0, 0x18, &[0u8; 50], 2),
        ];
        let table = group_flows(frames, Some(443));
        let flow = table.flows.values().next().unwrap();
        let v = frame_length_vector(
            flow,
            FrameSelection {
                direction: DirectionMode::ClientOnly,
                tls_only: false,
            },
        )
        .unwrap();
        assert_eq!(v.values(), &[154, 104]);
        let err = frame_length_vector(
            &Flow {
                key: flow.key,
                frames: vec![flow.frames[1].clone()],
            },
            FrameSelection {
                direction: DirectionMode::ServerOnly,
                tls_only: false,
            },
        )
        .unwrap_err();
        assert_eq!(err, FlowError::EmptySelection);
    }

    #[test]
    fn tls_only_drops_pure_acks() {
        let client = ep(2, 50000);
        let server = ep(1, 443);
        let frames = vec![
            tcp_frame(client, server, 1, 0, 0x18, &[0u8; 100], 0),
            tcp_frame(server, client, 1, 101, 0x10, &[], 1),
        ];
        let table = group_flows(frames, Some(443));
        let flow = table.flows.values().next().unwrap();
        let v = frame_length_vector(
            flow,
            FrameSelection {
                direction: DirectionMode::Both,
                tls_only: true,
            },
        )
        .unwrap();
        assert_eq!(v.values(), &[154]);
    }

    #[test]
    fn grouping_is_invariant_under_direction_swap() {
        let client = ep(2, 50000);
        let server = ep(1, 443);
        let forward = vec![
            tcp_frame(client, server, 1, 0, 0x18, b"one", 0),
            tcp_frame(server, client, 9, 4, 0x18, b"two", 1),
            tcp_frame(client, server, 4, 0, 0x10, &[], 2),
        ];
        let swapped: Vec<CaptureFrame> = vec![
            tcp_frame(server, client, 1, 0, 0x18, b"one", 0),
            tcp_frame(client, server, 9, 4, 0x18, b"two", 1),
            tcp_frame(server, client, 4, 0, 0x10, &[], 2),
        ];
        let table = group_flows(forward, Some(443));
        let mirrored = group_flows(swapped, Some(443));
        assert_eq!(
            table.flows.keys().collect::<Vec<_>>(),
            mirrored.flows.keys().collect::<Vec<_>>()
        );
        for (flow, mirror) in table.flows.values().zip(mirrored.flows.values()) {
            assert_eq!(flow.frames.len(), mirror.frames.len());
            for ((dir, frame), (mdir, mframe)) in flow.frames.iter().zip(&mirror.frames) {
                assert_eq!(*mdir, dir.flipped());
                assert_eq!(frame.wire_len, mframe.wire_len);
            }
        }
        // and the default selection keeps one length per frame
        let flow = table.flows.values().next().unwrap();
        let v = frame_length_vector(flow, FrameSelection::default()).unwrap();
        assert_eq!(v.len(), flow.frames.len());
    }

    #[test]
    fn merge_concatenates_flows_sharing_the_server() {
        let server = ep(1, 443);
        let c1 = ep(2, 50000);
        let c2 = ep(2, 50001);
        let frames = vec![
            tcp_frame(c1, server, 1, 0, 0x18, &[0u8; 10], 0),
            tcp_frame(c2, server, 1, 0, 0x18, &[0u8; 20], 5),
            tcp_frame(server, c1, 1, 11, 0x18, &[0u8; 30], 10),
        ];
        let table = group_flows(frames, Some(443));
        assert_eq!(table.flows.len(), 2);
        let merged = merge_flows(&table, Some(443));
        assert_eq!(merged.len(), 1);
        let session = &merged[0];
        assert_eq!(session.frames.len(), 3);
        // first component's frames first, directions normalized to the server
        assert_eq!(session.frames[0].1.wire_len, 64);
        assert_eq!(session.frames[1].1.wire_len, 84);
        assert_eq!(session.frames[2].1.wire_len, 74);
        assert_eq!(session.frames[0].0, session.frames[2].0);
        assert_ne!(session.frames[0].0, session.frames[1].0);
    }
}
