use alloc::vec::Vec;
use core::net::{IpAddr, Ipv4Addr};

use super::{Endpoint, NodeId, WireError};

const PEER_LEN: usize = 6;
const NODE_LEN: usize = 26;

fn push_peer(ep: &Endpoint, out: &mut Vec<u8>) -> Result<(), WireError> {
    let IpAddr::V4(v4) = ep.ip else {
        return Err(WireError::NotCompactable(*ep));
    };
    out.extend_from_slice(&v4.octets());
    out.extend_from_slice(&ep.port.to_be_bytes());
    Ok(())
}

fn read_peer(chunk: &[u8]) -> Endpoint {
    let ip = Ipv4Addr::new(chunk[0], chunk[1], chunk[2], chunk[3]);
    Endpoint::new(IpAddr::V4(ip), u16::from_be_bytes([chunk[4], chunk[5]]))
}

/// 4 octets IPv4 + 2 octets big-endian port per peer, order preserved.
pub fn encode_compact_peers(peers: &[Endpoint]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(peers.len() * PEER_LEN);
    for p in peers {
        push_peer(p, &mut out)?;
    }
    Ok(out)
}

pub fn decode_compact_peers(data: &[u8]) -> Result<Vec<Endpoint>, WireError> {
    if data.len() % PEER_LEN != 0 {
        return Err(WireError::Malformed("compact peer list length is not a multiple of 6"));
    }
    Ok(data.chunks_exact(PEER_LEN).map(read_peer).collect())
}

/// DHT compact node info: 20-octet id followed by a compact peer.
pub fn encode_compact_nodes(nodes: &[(NodeId, Endpoint)]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(nodes.len() * NODE_LEN);
    for (id, ep) in nodes {
        out.extend_from_slice(id.as_bytes());
        push_peer(ep, &mut out)?;
    }
    Ok(out)
}

pub fn decode_compact_nodes(data: &[u8]) -> Result<Vec<(NodeId, Endpoint)>, WireError> {
    if data.len() % NODE_LEN != 0 {
        return Err(WireError::Malformed("compact node list length is not a multiple of 26"));
    }
    data.chunks_exact(NODE_LEN)
        .map(|c| Ok((NodeId::from_slice(&c[..20])?, read_peer(&c[20..]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn golden_vectors() {
        let one = Endpoint::v4(10, 0, 0, 1, 6881);
        assert_eq!(encode_compact_peers(&[one]).unwrap(), [0x0A, 0x00, 0x00, 0x01, 0x1A, 0xE1]);
        assert_eq!(encode_compact_peers(&[]).unwrap(), Vec::<u8>::new());
        let bytes = [0x0A, 0x00, 0x00, 0x01, 0x1A, 0xE1, 0xC0, 0xA8, 0x00, 0x02, 0x00, 0x50];
        assert_eq!(
            decode_compact_peers(&bytes).unwrap(),
            vec![one, Endpoint::v4(192, 168, 0, 2, 80)]
        );
    }

    #[test]
    fn bad_length_and_ipv6() {
        assert!(decode_compact_peers(&[1, 2, 3, 4, 5]).is_err());
        assert!(decode_compact_nodes(&[0; 27]).is_err());
        let v6 = Endpoint::new("2001:db8::1".parse().unwrap(), 1);
        assert_eq!(encode_compact_peers(&[v6]), Err(WireError::NotCompactable(v6)));
    }
}
