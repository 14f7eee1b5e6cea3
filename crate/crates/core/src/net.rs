//! Minimal Ethernet/IPv4/IPv6/TCP header views shared by flow grouping and
//! stream reassembly. Parsing is lenient: anything that does not look like a
//! whole TCP-over-IP frame is classified, not rejected.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use crate::flow::Endpoint;

pub(crate) const TCP_SYN: u8 = 0x02;

pub(crate) const ETHERTYPE_IPV4: u16 = 0x0800;
pub(crate) const ETHERTYPE_IPV6: u16 = 0x86dd;

pub(crate) struct TcpView<'a> {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub seq: u32,
    pub flags: u8,
    pub payload: &'a [u8],
}

pub(crate) enum FrameClass<'a> {
    Tcp(TcpView<'a>),
    NonIp,
    NonTcp,
    Fragmented,
    Malformed,
}

pub(crate) fn classify(frame: &[u8]) -> FrameClass<'_> {
    if frame.len() < 14 {
        return FrameClass::Malformed;
    }
    match u16::from_be_bytes([frame[12], frame[13]]) {
        ETHERTYPE_IPV4 => classify_ipv4(&frame[14..]),
        ETHERTYPE_IPV6 => classify_ipv6(&frame[14..]),
        _ => FrameClass::NonIp,
    }
}

fn classify_ipv4(ip: &[u8]) -> FrameClass<'_> {
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return FrameClass::Malformed;
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl {
        return FrameClass::Malformed;
    }
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if total_len < ihl {
        return FrameClass::Malformed;
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x2000 != 0 || frag & 0x1fff != 0 {
        return FrameClass::Fragmented;
    }
    if ip[9] != 6 {
        return FrameClass::NonTcp;
    }
    // total_len bounds the payload so Ethernet trailer padding is not
    // mistaken for TCP data
    let end = total_len.min(ip.len());
    let src = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    classify_tcp(&ip[ihl..end], src, dst)
}

fn classify_ipv6(ip: &[u8]) -> FrameClass<'_> {
    if ip.len() < 40 || ip[0] >> 4 != 6 {
        return FrameClass::Malformed;
    }
    // extension headers are not traversed; only TCP directly after the
    // fixed header counts
    if ip[6] != 6 {
        return FrameClass::NonTcp;
    }
    let payload_len = u16::from_be_bytes([ip[4], ip[5]]) as usize;
    let end = (40 + payload_len).min(ip.len());
    let src_bytes: [u8; 16] = ip[8..24].try_into().expect("length checked");
    let dst_bytes: [u8; 16] = ip[24..40].try_into().expect("length checked");
    let src = IpAddr::V6(Ipv6Addr::from(src_bytes));
    let dst = IpAddr::V6(Ipv6Addr::from(dst_bytes));
    classify_tcp(&ip[40..end], src, dst)
}

fn classify_tcp(tcp: &[u8], src_ip: IpAddr, dst_ip: IpAddr) -> FrameClass<'_> {
    if tcp.len() < 20 {
        return FrameClass::Malformed;
    }
    let data_off = ((tcp[12] >> 4) as usize) * 4;
    if data_off < 20 || tcp.len() < data_off {
        return FrameClass::Malformed;
    }
    FrameClass::Tcp(TcpView {
        src: Endpoint {
            ip: src_ip,
            port: u16::from_be_bytes([tcp[0], tcp[1]]),
        },
        dst: Endpoint {
            ip: dst_ip,
            port: u16::from_be_bytes([tcp[2], tcp[3]]),
        },
        seq: u32::from_be_bytes([tcp[4], tcp[5], tcp[6], tcp[7]]),
        flags: tcp[13],
        payload: &tcp[data_off..],
    })
}
