//! Classic pcap capture files: a 24-byte global header followed by 16-byte
//! per-packet record headers and raw frame bytes.
//!
//! Both byte orders are accepted (magic `0xa1b2c3d4` and the byte-swapped
//! `0xd4c3b2a1`), as are nanosecond-precision files (`0xa1b23c4d`), whose
//! timestamps are truncated to microseconds. Only Ethernet captures are
//! usable downstream; other link types are rejected up front.

use thiserror::Error;

/// Link layer of a capture. Only Ethernet is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkType {
    Ethernet,
}

/// pcap network value for Ethernet.
pub const LINKTYPE_ETHERNET: u32 = 1;

/// One captured packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureFrame {
    /// Capture timestamp in microseconds since the Unix epoch.
    pub ts_micros: u64,
    /// Original on-wire frame length in bytes.
    pub wire_len: u32,
    /// Number of bytes actually captured; always equals `payload.len()`.
    pub cap_len: u32,
    pub link_type: LinkType,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PcapError {
    #[error("unknown magic 0x{0:08x}: not a pcap file")]
    UnknownMagic(u32),
    #[error("pcapng is not supported; convert the capture to classic pcap first")]
    PcapNg,
    #[error("truncated header: need {needed} bytes, only {available} available")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("truncated packet record #{index}: need {needed} payload bytes, only {available} available")]
    TruncatedPacket {
        index: usize,
        needed: usize,
        available: usize,
    },
    #[error("unsupported link type {0}: only Ethernet (1) captures are accepted")]
    UnsupportedLinkType(u32),
    #[error("invalid packet record #{index}: {reason}")]
    InvalidRecord { index: usize, reason: &'static str },
}

/// Parse outcome: every frame up to the first defect, plus the defect itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub frames: Vec<CaptureFrame>,
    /// Set when the file ends mid-record or a record header is inconsistent;
    /// `frames` still holds everything parsed before that point.
    pub truncation: Option<PcapError>,
}

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const MAGIC_PCAPNG: u32 = 0x0a0d_0d0a;

#[derive(Clone, Copy)]
struct Layout {
    big_endian: bool,
    nanos: bool,
}

fn read_u32(bytes: &[u8], off: usize, big_endian: bool) -> u32 {
    let b: [u8; 4] = bytes[off..off + 4].try_into().expect("bounds checked");
    if big_endian {
        u32::from_be_bytes(b)
    } else {
        u32::from_le_bytes(b)
    }
}

/// Parse a classic pcap file.
///
/// Fatal errors (not a pcap file, non-Ethernet link) return `Err`; a file
/// that starts well but ends mid-record returns the frames parsed so far with
/// the truncation signal in [`Capture::truncation`].
pub fn parse_pcap(bytes: &[u8]) -> Result<Capture, PcapError> {
    if bytes.len() < 4 {
        return Err(PcapError::TruncatedHeader {
            needed: GLOBAL_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().expect("len checked"));
    let magic_be = u32::from_be_bytes(bytes[0..4].try_into().expect("len checked"));
    let layout = if magic_le == MAGIC_MICROS {
        Layout {
            big_endian: false,
            nanos: false,
        }
    } else if magic_be == MAGIC_MICROS {
        Layout {
            big_endian: true,
            nanos: false,
        }
    } else if magic_le == MAGIC_NANOS {
        Layout {
            big_endian: false,
            nanos: true,
        }
    } else if magic_be == MAGIC_NANOS {
        Layout {
            big_endian: true,
            nanos: true,
        }
    } else if magic_be == MAGIC_PCAPNG {
        return Err(PcapError::PcapNg);
    } else {
        return Err(PcapError::UnknownMagic(magic_be));
    };

    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::TruncatedHeader {
            needed: GLOBAL_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let network = read_u32(bytes, 20, layout.big_endian);
    if network != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(network));
    }

    let mut frames = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    let mut index = 0usize;
    while off < bytes.len() {
        let available = bytes.len() - off;
        if available < RECORD_HEADER_LEN {
            return Ok(Capture {
                frames,
                truncation: Some(PcapError::TruncatedHeader {
                    needed: RECORD_HEADER_LEN,
                    available,
                }),
            });
        }
        let ts_sec = read_u32(bytes, off, layout.big_endian) as u64;
        let ts_frac = read_u32(bytes, off + 4, layout.big_endian) as u64;
        let incl_len = read_u32(bytes, off + 8, layout.big_endian);
        let orig_len = read_u32(bytes, off + 12, layout.big_endian);
        if orig_len == 0 {
            return Ok(Capture {
                frames,
                truncation: Some(PcapError::InvalidRecord {
                    index,
                    reason: "zero on-wire length",
                }),
            });
        }
        if incl_len > orig_len {
            return Ok(Capture {
                frames,
                truncation: Some(PcapError::InvalidRecord {
                    index,
                    reason: "captured length exceeds on-wire length",
                }),
            });
        }
        let data_off = off + RECORD_HEADER_LEN;
        let needed = incl_len as usize;
        if bytes.len() - data_off < needed {
            return Ok(Capture {
                frames,
                truncation: Some(PcapError::TruncatedPacket {
                    index,
                    needed,
                    available: bytes.len() - data_off,
                }),
            });
        }
        let ts_micros = if layout.nanos {
            ts_sec * 1_000_000 + ts_frac / 1_000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        frames.push(CaptureFrame {
            ts_micros,
            wire_len: orig_len,
            cap_len: incl_len,
            link_type: LinkType::Ethernet,
            payload: bytes[data_off..data_off + needed].to_vec(),
        });
        off = data_off + needed;
        index += 1;
    }
    Ok(Capture {
        frames,
        truncation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, big_endian: bool, network: u32) -> Vec<u8> {
        let mut out = Vec::new();
        let push32 = |out: &mut Vec<u8>, v: u32| {
            if big_endian {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let push16 = |out: &mut Vec<u8>, v: u16| {
            if big_endian {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        push32(&mut out, magic);
        push16(&mut out, 2);
        push16(&mut out, 4);
        push32(&mut out, 0);
        push32(&mut out, 0);
        push32(&mut out, 65535);
        push32(&mut out, network);
        out
    }

    fn record(ts_sec: u32, ts_frac: u32, incl: u32, orig: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ts_sec.to_le_bytes());
        out.extend_from_slice(&ts_frac.to_le_bytes());
        out.extend_from_slice(&incl.to_le_bytes());
        out.extend_from_slice(&orig.to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn header_only_file_yields_empty_list() {
        let capture = parse_pcap(&header(MAGIC_MICROS, false, 1)).unwrap();
        assert!(capture.frames.is_empty());
        assert!(capture.truncation.is_none());
    }

    #[test]
    fn big_endian_header_is_accepted() {
        let mut bytes = header(MAGIC_MICROS, true, 1);
        // one 4-byte frame, big-endian record header
        bytes.extend_from_slice(&7u32.to_be_bytes());
        bytes.extend_from_slice(&123u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&60u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let capture = parse_pcap(&bytes).unwrap();
        assert_eq!(capture.frames.len(), 1);
        let frame = &capture.frames[0];
        assert_eq!(frame.ts_micros, 7_000_123);
        assert_eq!(frame.cap_len, 4);
        assert_eq!(frame.wire_len, 60);
        assert_eq!(frame.payload, vec![1, 2, 3, 4]);
    }

    #[test]
    fn nanosecond_magic_truncates_to_micros() {
        let mut bytes = header(MAGIC_NANOS, false, 1);
        bytes.extend_from_slice(&record(1, 1_999, 2, 2, &[0xaa, 0xbb]));
        let capture = parse_pcap(&bytes).unwrap();
        assert_eq!(capture.frames[0].ts_micros, 1_000_001);
    }

    #[test]
    fn unknown_magic_is_rejected() {
        let err = parse_pcap(&[0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(err, PcapError::UnknownMagic(0xdeadbeef)));
    }

    #[test]
    fn pcapng_gets_a_dedicated_error() {
        let err = parse_pcap(&[0x0a, 0x0d, 0x0d, 0x0a, 0, 0, 0, 0]).unwrap_err();
        assert_eq!(err, PcapError::PcapNg);
    }

    #[test]
    fn non_ethernet_link_is_rejected() {
        let err = parse_pcap(&header(MAGIC_MICROS, false, 101)).unwrap_err();
        assert_eq!(err, PcapError::UnsupportedLinkType(101));
    }

    #[test]
    fn short_global_header_is_truncated_header() {
        let bytes = header(MAGIC_MICROS, false, 1);
        let err = parse_pcap(&bytes[..10]).unwrap_err();
        assert!(matches!(err, PcapError::TruncatedHeader { .. }));
    }

    #[test]
    fn file_cut_mid_payload_keeps_earlier_frames() {
        let mut bytes = header(MAGIC_MICROS, false, 1);
        bytes.extend_from_slice(&record(0, 0, 4, 4, &[9, 9, 9, 9]));
        bytes.extend_from_slice(&record(0, 1, 8, 8, &[1, 2, 3, 4, 5, 6, 7, 8]));
        let cut = &bytes[..bytes.len() - 4];
        let capture = parse_pcap(cut).unwrap();
        assert_eq!(capture.frames.len(), 1);
        assert!(matches!(
            capture.truncation,
            Some(PcapError::TruncatedPacket {
                index: 1,
                needed: 8,
                available: 4
            })
        ));
    }

    #[test]
    fn file_cut_mid_record_header_keeps_earlier_frames() {
        let mut bytes = header(MAGIC_MICROS, false, 1);
        bytes.extend_from_slice(&record(0, 0, 4, 4, &[9, 9, 9, 9]));
        bytes.extend_from_slice(&[0u8; 10]);
        let capture = parse_pcap(&bytes).unwrap();
        assert_eq!(capture.frames.len(), 1);
        assert!(matches!(
            capture.truncation,
            Some(PcapError::TruncatedHeader {
                needed: 16,
                available: 10
            })
        ));
    }

    #[test]
    fn captured_longer_than_wire_is_invalid() {
        let mut bytes = header(MAGIC_MICROS, false, 1);
        bytes.extend_from_slice(&record(0, 0, 4, 2, &[9, 9, 9, 9]));
        let capture = parse_pcap(&bytes).unwrap();
        assert!(capture.frames.is_empty());
        assert!(matches!(
            capture.truncation,
            Some(PcapError::InvalidRecord { index: 0, .. })
        ));
    }
}
