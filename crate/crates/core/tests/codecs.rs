//! Round trips over generated messages, golden vectors and decoder fuzzing.

mod common;

use common::strategies::*;
use proptest::prelude::*;
use torswarm_core::bencode::{self, BValue};
use torswarm_core::wire::*;

const CASES: u32 = 10_000;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn bencode_round_trips(v in bvalue()) {
        let bytes = bencode::encode(&v);
        prop_assert_eq!(bencode::decode(&bytes).unwrap(), v);
    }

    #[test]
    fn announce_request_round_trips(r in announce_request()) {
        prop_assert_eq!(AnnounceRequest::parse(&r.encode()).unwrap(), r);
    }

    #[test]
    fn announce_response_round_trips(r in announce_response()) {
        prop_assert_eq!(AnnounceResponse::parse(&r.encode().unwrap()).unwrap(), r);
    }

    #[test]
    fn handshake_round_trips(h in handshake()) {
        prop_assert_eq!(Handshake::parse(&h.encode()).unwrap(), h);
    }

    #[test]
    fn extended_handshake_round_trips(h in extended_handshake()) {
        let bytes = h.encode();
        let (back, used) = ExtendedHandshake::parse(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, h);
    }

    #[test]
    fn krpc_round_trips(m in krpc()) {
        prop_assert_eq!(KrpcMessage::parse(&m.encode().unwrap()).unwrap(), m);
    }

    #[test]
    fn compact_lists_round_trip(peers in peer_list(), nodes in node_list()) {
        prop_assert_eq!(decode_compact_peers(&encode_compact_peers(&peers).unwrap()).unwrap(), peers);
        prop_assert_eq!(decode_compact_nodes(&encode_compact_nodes(&nodes).unwrap()).unwrap(), nodes);
    }

    #[test]
    fn decoder_is_total_and_canonical(data in proptest::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(v) = bencode::decode(&data) {
            prop_assert_eq!(bencode::encode(&v), data);
        }
    }

    #[test]
    fn mutated_encodings_are_canonical_or_rejected(v in bvalue(), at in any::<prop::sample::Index>(), b in any::<u8>()) {
        let mut data = bencode::encode(&v);
        let i = at.index(data.len());
        data[i] = b;
        if let Ok(w) = bencode::decode(&data) {
            prop_assert_eq!(bencode::encode(&w), data);
        }
    }

    #[test]
    fn parsers_never_panic(data in proptest::collection::vec(any::<u8>(), 0..160)) {
        let _ = AnnounceRequest::parse(&data);
        let _ = AnnounceResponse::parse(&data);
        let _ = Handshake::parse(&data);
        let _ = ExtendedHandshake::parse(&data);
        let _ = KrpcMessage::parse(&data);
    }
}

fn dict(pairs: &[(&str, BValue)]) -> BValue {
    BValue::Dict(pairs.iter().map(|(k, v)| (k.as_bytes().to_vec(), v.clone())).collect())
}

#[test]
fn bencode_golden() {
    let v = dict(&[("foo", BValue::Integer(42)), ("bar", BValue::bytes(*b"spam"))]);
    assert_eq!(bencode::encode(&v), b"d3:bar4:spam3:fooi42ee");
    let l = BValue::List(vec![BValue::Integer(-3), BValue::bytes(*b""), BValue::List(vec![])]);
    assert_eq!(bencode::encode(&l), b"li-3e0:lee");
    assert_eq!(bencode::encode(&BValue::Integer(0)), b"i0e");
    assert_eq!(bencode::encode(&BValue::Integer(i64::MIN)), b"i-9223372036854775808e");
}

#[test]
fn bencode_rejects_non_canonical_input() {
    for bad in [
        &b"i03e"[..],
        b"i-0e",
        b"ie",
        b"i1",
        b"01:a",
        b"2:a",
        b"d3:foo1:a3:bar1:be",
        b"d3:foo1:a3:foo1:be",
        b"d1:a",
        b"i1ei2e",
        b"di1e1:ae",
        b"l",
        b"",
        b"x",
        b"i9223372036854775808e",
    ] {
        assert!(bencode::decode(bad).is_err(), "accepted {:?}", String::from_utf8_lossy(bad));
    }
}

#[test]
fn deep_nesting_is_refused_without_overflow() {
    let mut deep = vec![b'l'; 100_000];
    deep.extend(vec![b'e'; 100_000]);
    assert!(bencode::decode(&deep).is_err());
}

#[test]
fn compact_peers_golden() {
    let peers = [Endpoint::v4(10, 0, 0, 1, 6881), Endpoint::v4(192, 168, 255, 254, 1)];
    let bytes = encode_compact_peers(&peers).unwrap();
    assert_eq!(bytes, [0x0a, 0x00, 0x00, 0x01, 0x1a, 0xe1, 0xc0, 0xa8, 0xff, 0xfe, 0x00, 0x01]);
    assert!(decode_compact_peers(&bytes[..7]).is_err());
    let v6 = Endpoint::new("::1".parse().unwrap(), 1);
    assert!(encode_compact_peers(&[v6]).is_err());
}

#[test]
fn handshake_golden() {
    let h = Handshake::new(InfoHash([0x11; 20]), PeerId(*b"-UT2210-abcdefghijkl"), EXTENSION_PROTOCOL_BIT);
    let mut expected = vec![19u8];
    expected.extend_from_slice(b"BitTorrent protocol");
    expected.extend_from_slice(&[0, 0, 0, 0, 0, 0x10, 0, 0]);
    expected.extend_from_slice(&[0x11; 20]);
    expected.extend_from_slice(b"-UT2210-abcdefghijkl");
    assert_eq!(h.encode().to_vec(), expected);
}

#[test]
fn extended_handshake_golden() {
    let h = ExtendedHandshake { listen_port: Some(6881), self_ip: None, client_version: None, extensions: Default::default() };
    let body = b"d1:mde1:pi6881ee";
    let mut expected = ((body.len() + 2) as u32).to_be_bytes().to_vec();
    expected.extend_from_slice(&[20, 0]);
    expected.extend_from_slice(body);
    assert_eq!(h.encode(), expected);
}

// Message examples from the mainline DHT protocol description.
const ID: &[u8; 20] = b"abcdefghij0123456789";
const OTHER: &[u8; 20] = b"mnopqrstuvwxyz123456";

#[test]
fn krpc_golden() {
    let cases: Vec<(KrpcMessage, &[u8])> = vec![
        (
            KrpcMessage::query(b"aa".to_vec(), NodeId(*ID), KrpcKind::GetPeersQuery { info_hash: InfoHash(*OTHER) }),
            b"d1:ad2:id20:abcdefghij01234567899:info_hash20:mnopqrstuvwxyz123456e1:q9:get_peers1:t2:aa1:y1:qe",
        ),
        (
            KrpcMessage::query(b"aa".to_vec(), NodeId(*ID), KrpcKind::FindNodeQuery { target: NodeId(*OTHER) }),
            b"d1:ad2:id20:abcdefghij01234567896:target20:mnopqrstuvwxyz123456e1:q9:find_node1:t2:aa1:y1:qe",
        ),
        (
            KrpcMessage::query(
                b"aa".to_vec(),
                NodeId(*ID),
                KrpcKind::AnnouncePeerQuery { info_hash: InfoHash(*OTHER), port: 6881, token: b"aoeusnth".to_vec() },
            ),
            b"d1:ad2:id20:abcdefghij01234567899:info_hash20:mnopqrstuvwxyz1234564:porti6881e5:token8:aoeusnthe1:q13:announce_peer1:t2:aa1:y1:qe",
        ),
        (
            KrpcMessage {
                transaction_id: b"aa".to_vec(),
                sender: Some(NodeId(*ID)),
                kind: KrpcKind::GetPeersResponse {
                    token: b"aoeusnth".to_vec(),
                    result: PeersOrNodes::Peers(vec![
                        Endpoint::v4(b'a', b'x', b'j', b'e', u16::from_be_bytes([b'.', b'u'])),
                        Endpoint::v4(b'i', b'd', b'h', b't', u16::from_be_bytes([b'n', b'm'])),
                    ]),
                },
            },
            b"d1:rd2:id20:abcdefghij01234567895:token8:aoeusnth6:valuesl6:axje.u6:idhtnmee1:t2:aa1:y1:re",
        ),
        (
            KrpcMessage { transaction_id: b"aa".to_vec(), sender: Some(NodeId(*OTHER)), kind: KrpcKind::AnnouncePeerResponse },
            b"d1:rd2:id20:mnopqrstuvwxyz123456e1:t2:aa1:y1:re",
        ),
        (KrpcMessage::error(b"aa".to_vec(), 201, "A Generic Error Ocurred"), b"d1:eli201e23:A Generic Error Ocurrede1:t2:aa1:y1:ee"),
    ];
    for (msg, wire) in cases {
        assert_eq!(msg.encode().unwrap(), wire, "{msg:?}");
        assert_eq!(KrpcMessage::parse(wire).unwrap(), msg);
    }
}

#[test]
fn announce_line_golden() {
    let mut r = AnnounceRequest::new(InfoHash(*b"aaaaaaaaaaaaaaaaaaa\x01"), PeerId(*b"-TR2220-0123456789ab"), 51413);
    r.event = Some(AnnounceEvent::Started);
    r.ip_field = Some(b"10.0.0.7".to_vec());
    assert_eq!(
        String::from_utf8(r.encode()).unwrap(),
        "GET /announce?info_hash=aaaaaaaaaaaaaaaaaaa%01&peer_id=-TR2220-0123456789ab&port=51413&ip=10.0.0.7\
         &uploaded=0&downloaded=0&left=0&event=started HTTP/1.1"
    );
}

#[test]
fn announce_response_rewrite_leaves_other_keys() {
    let mut r = AnnounceResponse::new(1800, vec![Endpoint::v4(1, 2, 3, 4, 5)]);
    r.extra.insert(b"complete".to_vec(), BValue::Integer(7));
    let wire = r.encode().unwrap();
    assert_eq!(wire, b"d8:completei7e8:intervali1800e5:peers6:\x01\x02\x03\x04\x00\x05e");
}
