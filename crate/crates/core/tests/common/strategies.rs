//! Generators for every wire message. Shared by the codec suite and the
//! acceptance runner.

#![allow(dead_code)]

use std::net::{IpAddr, Ipv4Addr};

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use torswarm_core::bencode::BValue;
use torswarm_core::wire::{
    AnnounceEvent, AnnounceRequest, AnnounceResponse, Endpoint, ExtendedHandshake, Handshake, InfoHash, KrpcKind,
    KrpcMessage, NodeId, PeerId, PeersOrNodes,
};

pub fn bvalue() -> impl Strategy<Value = BValue> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(BValue::Integer),
        vec(any::<u8>(), 0..24).prop_map(BValue::Bytes),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..6).prop_map(BValue::List),
            btree_map(vec(any::<u8>(), 0..8), inner, 0..6).prop_map(BValue::Dict),
        ]
    })
}

pub fn id20() -> impl Strategy<Value = [u8; 20]> {
    any::<[u8; 20]>()
}

pub fn endpoint_v4() -> impl Strategy<Value = Endpoint> {
    (any::<u32>(), any::<u16>()).prop_map(|(ip, port)| Endpoint::new(IpAddr::V4(Ipv4Addr::from(ip)), port))
}

const RESERVED_QUERY_KEYS: &[&[u8]] =
    &[b"info_hash", b"peer_id", b"port", b"ip", b"uploaded", b"downloaded", b"left", b"event"];

pub fn announce_request() -> impl Strategy<Value = AnnounceRequest> {
    let event = prop_oneof![
        Just(None),
        Just(Some(AnnounceEvent::Started)),
        Just(Some(AnnounceEvent::Stopped)),
        Just(Some(AnnounceEvent::Completed)),
    ];
    let extra_key = "[a-z_]{1,10}"
        .prop_map(String::into_bytes)
        .prop_filter("reserved key", |k| !RESERVED_QUERY_KEYS.contains(&k.as_slice()));
    (
        "/[a-z0-9/._-]{0,12}",
        id20(),
        id20(),
        any::<u16>(),
        proptest::option::of(vec(any::<u8>(), 0..20)),
        (any::<u64>(), any::<u64>(), any::<u64>()),
        event,
        vec((extra_key, vec(any::<u8>(), 0..12)), 0..3),
    )
        .prop_map(|(path, ih, pid, port, ip_field, (uploaded, downloaded, left), event, extra)| AnnounceRequest {
            path,
            info_hash: InfoHash(ih),
            peer_id: PeerId(pid),
            port,
            ip_field,
            uploaded,
            downloaded,
            left,
            event,
            extra,
        })
}

pub fn announce_response() -> impl Strategy<Value = AnnounceResponse> {
    let extra_key = vec(any::<u8>(), 0..10).prop_filter("reserved key", |k| k != b"interval" && k != b"peers");
    (1..=u32::MAX, vec(endpoint_v4(), 0..60), btree_map(extra_key, bvalue(), 0..3))
        .prop_map(|(interval, peers, extra)| AnnounceResponse { interval, peers, extra })
}

pub fn handshake() -> impl Strategy<Value = Handshake> {
    (id20(), id20(), any::<u64>()).prop_map(|(ih, pid, bits)| Handshake::new(InfoHash(ih), PeerId(pid), bits))
}

pub fn extended_handshake() -> impl Strategy<Value = ExtendedHandshake> {
    (
        proptest::option::of(any::<u16>()),
        proptest::option::of(vec(any::<u8>(), 0..18)),
        proptest::option::of("[ -~]{0,16}"),
        btree_map(vec(any::<u8>(), 0..10), bvalue(), 0..4),
    )
        .prop_map(|(listen_port, self_ip, client_version, extensions)| ExtendedHandshake {
            listen_port,
            self_ip,
            client_version,
            extensions,
        })
}

fn nodes() -> impl Strategy<Value = Vec<(NodeId, Endpoint)>> {
    vec((id20().prop_map(NodeId), endpoint_v4()), 0..9)
}

pub fn krpc() -> impl Strategy<Value = KrpcMessage> {
    let token = vec(any::<u8>(), 0..10);
    let kind = prop_oneof![
        id20().prop_map(|t| KrpcKind::FindNodeQuery { target: NodeId(t) }),
        nodes().prop_map(|nodes| KrpcKind::FindNodeResponse { nodes }),
        id20().prop_map(|ih| KrpcKind::GetPeersQuery { info_hash: InfoHash(ih) }),
        (token.clone(), vec(endpoint_v4(), 0..9))
            .prop_map(|(token, p)| KrpcKind::GetPeersResponse { token, result: PeersOrNodes::Peers(p) }),
        (token.clone(), nodes())
            .prop_map(|(token, n)| KrpcKind::GetPeersResponse { token, result: PeersOrNodes::Nodes(n) }),
        (id20(), any::<u16>(), token)
            .prop_map(|(ih, port, token)| KrpcKind::AnnouncePeerQuery { info_hash: InfoHash(ih), port, token }),
        Just(KrpcKind::AnnouncePeerResponse),
    ];
    let error = (vec(any::<u8>(), 0..4), any::<i64>(), ".{0,20}")
        .prop_map(|(tid, code, message)| KrpcMessage::error(tid, code, message));
    let normal = (vec(any::<u8>(), 0..4), id20(), kind)
        .prop_map(|(tid, id, kind)| KrpcMessage { transaction_id: tid, sender: Some(NodeId(id)), kind });
    prop_oneof![4 => normal, 1 => error]
}

pub fn peer_list() -> impl Strategy<Value = Vec<Endpoint>> {
    vec(endpoint_v4(), 0..80)
}

pub fn node_list() -> impl Strategy<Value = Vec<(NodeId, Endpoint)>> {
    nodes()
}

