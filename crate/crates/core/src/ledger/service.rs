//! Socket runtime: a ledger node serving peers and clients over TCP, and
//! the client side of the request API.
//!
//! Every connection speaks length-prefixed frames (u32 LE length, then
//! payload). The first payload byte selects the operation:
//!
//! ```text
//! peers    0x04 Hello{member_id u16}, then 0x01/0x02/0x03 consensus
//!          messages as encoded by ConsensusMessage
//! client   0x10 SubmitTx{record}  -> 0x90 SubmitAck{accepted u8}
//!          0x11 QueryDigest{stream_id 16B, frame_id u64}
//!                                 -> 0x91 QueryResult{count u16,
//!                                    (height u64, timestamp u64, record)*}
//!          0x12 ChainInfo         -> 0x92 {height u64, tip_hash 32B,
//!                                    members u16, quorum u16}
//! errors   0xFF utf8 message
//! ```
//!
//! The node itself is the sans-IO [`ConsensusNode`]; this module only
//! pumps sockets into it. Rounds are driven by a tick: the leader for
//! the next height proposes when its pool is non-empty, and any armed
//! round that outlives the round timeout is ended (transactions stay
//! pending and the next attempt rotates the leader).

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ed25519_dalek::SigningKey;
use log::{debug, info, warn};

use crate::digest::DigestRecord;
use crate::frame_io::StreamId;
use crate::wire::{decode_record, read_framed, record_bytes, write_framed, WireError};

use super::cluster::ClusterConfig;
use super::consensus::{ConsensusMessage, ConsensusNode, Outbound};
use super::store::{BlockStore, RecordHit};
use super::LedgerError;

pub const PEER_HELLO: u8 = 0x04;
pub const CLIENT_SUBMIT_TX: u8 = 0x10;
pub const CLIENT_QUERY_DIGEST: u8 = 0x11;
pub const CLIENT_CHAIN_INFO: u8 = 0x12;
pub const RESP_SUBMIT_ACK: u8 = 0x90;
pub const RESP_QUERY_RESULT: u8 = 0x91;
pub const RESP_CHAIN_INFO: u8 = 0x92;
pub const RESP_ERROR: u8 = 0xFF;

/// Microseconds since the Unix epoch.
pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_micros() as u64
}

/// Tuning for the node loop.
#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub round_timeout: Duration,
    pub tick_interval: Duration,
}

impl Default for NodeOptions {
    fn default() -> Self {
        NodeOptions {
            round_timeout: Duration::from_secs(2),
            tick_interval: Duration::from_millis(50),
        }
    }
}

enum NodeEvent {
    Peer { from: u16, msg: ConsensusMessage },
    Client { request: Vec<u8>, reply: Sender<Vec<u8>> },
}

/// Outgoing connections to the other members, reconnecting on demand.
struct PeerMesh {
    me: u16,
    addrs: HashMap<u16, String>,
    conns: HashMap<u16, TcpStream>,
}

impl PeerMesh {
    fn new(config: &ClusterConfig, me: u16) -> Self {
        PeerMesh {
            me,
            addrs: config
                .members
                .iter()
                .map(|m| (m.id, m.address.clone()))
                .collect(),
            conns: HashMap::new(),
        }
    }

    fn send(&mut self, outbound: &Outbound) {
        let payload = outbound.msg.encode();
        for attempt in 0..2 {
            if !self.conns.contains_key(&outbound.to) {
                let Some(addr) = self.addrs.get(&outbound.to) else {
                    return;
                };
                match TcpStream::connect_timeout(
                    &match addr.parse() {
                        Ok(a) => a,
                        Err(_) => return,
                    },
                    Duration::from_millis(500),
                ) {
                    Ok(mut stream) => {
                        let mut hello = vec![PEER_HELLO];
                        hello.extend_from_slice(&self.me.to_le_bytes());
                        if write_framed(&mut stream, &hello).is_err() {
                            continue;
                        }
                        self.conns.insert(outbound.to, stream);
                    }
                    Err(e) => {
                        if attempt == 1 {
                            debug!("peer {} unreachable: {e}", outbound.to);
                        }
                        continue;
                    }
                }
            }
            let stream = self.conns.get_mut(&outbound.to).expect("just inserted");
            match write_framed(stream, &payload) {
                Ok(()) => return,
                Err(_) => {
                    self.conns.remove(&outbound.to);
                }
            }
        }
    }
}

/// Handle to a node running on background threads.
pub struct NodeHandle {
    shutdown: Arc<AtomicBool>,
    main: Option<JoinHandle<()>>,
    pub addr: std::net::SocketAddr,
}

impl NodeHandle {
    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.main.take() {
            let _ = handle.join();
        }
    }
}

/// Spawns a node on a pre-bound listener; returns once serving.
pub fn spawn_node(
    config: ClusterConfig,
    me: u16,
    signing_key: SigningKey,
    data_dir: &Path,
    listener: TcpListener,
    options: NodeOptions,
) -> Result<NodeHandle, LedgerError> {
    let addr = listener.local_addr()?;
    let store = BlockStore::open(config.clone(), &data_dir.join("chain.log"))?;
    let node = ConsensusNode::new(config.clone(), me, signing_key, store);
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let main = thread::Builder::new()
        .name(format!("ledger-node-{me}"))
        .spawn(move || node_loop(node, listener, flag, options))
        .expect("spawn node thread");
    Ok(NodeHandle {
        shutdown,
        main: Some(main),
        addr,
    })
}

/// Runs a node until the shutdown flag is set. Blocking entry point used
/// by the CLI.
pub fn run_node(
    config: ClusterConfig,
    me: u16,
    signing_key: SigningKey,
    data_dir: &Path,
    options: NodeOptions,
    shutdown: Arc<AtomicBool>,
) -> Result<(), LedgerError> {
    let member = config
        .member(me)
        .ok_or(LedgerError::UnknownMember(me))?
        .clone();
    let listener = TcpListener::bind(&member.address)?;
    info!("node {me} ({}) listening on {}", member.name, member.address);
    let store = BlockStore::open(config.clone(), &data_dir.join("chain.log"))?;
    let node = ConsensusNode::new(config, me, signing_key, store);
    node_loop(node, listener, shutdown, options);
    Ok(())
}

fn node_loop(
    mut node: ConsensusNode,
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
    options: NodeOptions,
) {
    let me = node.id();
    let (event_tx, event_rx): (Sender<NodeEvent>, Receiver<NodeEvent>) = mpsc::channel();
    listener
        .set_nonblocking(true)
        .expect("listener nonblocking");
    let acceptor_shutdown = shutdown.clone();
    let acceptor_tx = event_tx.clone();
    let acceptor = thread::spawn(move || {
        while !acceptor_shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let tx = acceptor_tx.clone();
                    let flag = acceptor_shutdown.clone();
                    thread::spawn(move || connection_loop(stream, tx, flag));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(_) => break,
            }
        }
    });

    let mut mesh = PeerMesh::new(node.config(), me);
    let mut attempt = 0u32;
    let mut deadline: Option<Instant> = None;
    let mut out: Vec<Outbound> = Vec::new();

    while !shutdown.load(Ordering::SeqCst) {
        match event_rx.recv_timeout(options.tick_interval) {
            Ok(NodeEvent::Peer { from, msg }) => {
                node.handle(from, msg, &mut out);
                if node.round_complete() {
                    let outcome = node.end_round(&mut out);
                    debug!("node {me} round complete: {outcome:?}");
                    deadline = None;
                    attempt = 0;
                }
            }
            Ok(NodeEvent::Client { request, reply }) => {
                let response = handle_client_request(&mut node, &request);
                let _ = reply.send(response);
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }

        // Round driving.
        if node.in_round() {
            let deadline = *deadline.get_or_insert_with(|| Instant::now() + options.round_timeout);
            if Instant::now() >= deadline {
                let outcome = node.end_round(&mut out);
                debug!("node {me} round timed out: {outcome:?}");
                if matches!(outcome, super::consensus::RoundOutcome::Committed(_)) {
                    attempt = 0;
                } else {
                    attempt += 1;
                }
            }
        } else {
            deadline = None;
            if node.pending_len() > 0 && node.leads_next(attempt) {
                if node.propose(attempt, now_us(), &mut out) {
                    debug!("node {me} proposed at attempt {attempt}");
                    deadline = Some(Instant::now() + options.round_timeout);
                }
            }
        }
        if !node.in_round() {
            deadline = None;
        }
        for outbound in out.drain(..) {
            mesh.send(&outbound);
        }
    }
    drop(event_tx);
    let _ = acceptor.join();
}

fn handle_client_request(node: &mut ConsensusNode, request: &[u8]) -> Vec<u8> {
    let error = |msg: &str| {
        let mut resp = vec![RESP_ERROR];
        resp.extend_from_slice(msg.as_bytes());
        resp
    };
    let Some((&opcode, rest)) = request.split_first() else {
        return error("empty request");
    };
    match opcode {
        CLIENT_SUBMIT_TX => match decode_record(rest) {
            Ok((record, used)) if used == rest.len() => {
                let accepted = node.submit(record, now_us());
                vec![RESP_SUBMIT_ACK, accepted as u8]
            }
            Ok(_) => error("trailing bytes after record"),
            Err(e) => error(&format!("bad record: {e}")),
        },
        CLIENT_QUERY_DIGEST => {
            if rest.len() != 24 {
                return error("query needs stream_id 16B + frame_id u64");
            }
            let mut stream_id = [0u8; 16];
            stream_id.copy_from_slice(&rest[0..16]);
            let frame_id = u64::from_le_bytes(rest[16..24].try_into().unwrap());
            let hits = node.store().query_digest(StreamId(stream_id), frame_id);
            encode_query_result(&hits)
        }
        CLIENT_CHAIN_INFO => {
            let tip = node.tip();
            let mut resp = vec![RESP_CHAIN_INFO];
            resp.extend_from_slice(&tip.height.to_le_bytes());
            resp.extend_from_slice(&tip.hash);
            resp.extend_from_slice(&(node.config().n() as u16).to_le_bytes());
            resp.extend_from_slice(&(node.config().quorum() as u16).to_le_bytes());
            resp
        }
        other => error(&format!("unknown opcode {other:#x}")),
    }
}

fn encode_query_result(hits: &[RecordHit]) -> Vec<u8> {
    let mut resp = vec![RESP_QUERY_RESULT];
    resp.extend_from_slice(&(hits.len() as u16).to_le_bytes());
    for hit in hits {
        resp.extend_from_slice(&hit.height.to_le_bytes());
        resp.extend_from_slice(&hit.timestamp_us.to_le_bytes());
        resp.extend_from_slice(&record_bytes(&hit.record));
    }
    resp
}

fn decode_query_result(payload: &[u8]) -> Result<Vec<RecordHit>, WireError> {
    let Some((&opcode, rest)) = payload.split_first() else {
        return Err(WireError::EmptyPayload);
    };
    if opcode == RESP_ERROR {
        return Err(WireError::Io(io::Error::other(
            String::from_utf8_lossy(rest).to_string(),
        )));
    }
    if opcode != RESP_QUERY_RESULT {
        return Err(WireError::UnknownMessageType(opcode));
    }
    if rest.len() < 2 {
        return Err(WireError::Truncated {
            what: "hit count",
            offset: rest.len(),
        });
    }
    let count = u16::from_le_bytes(rest[0..2].try_into().unwrap());
    let mut offset = 2usize;
    let mut hits = Vec::with_capacity(count as usize);
    for _ in 0..count {
        if rest.len() < offset + 16 {
            return Err(WireError::Truncated {
                what: "query hit",
                offset: rest.len(),
            });
        }
        let height = u64::from_le_bytes(rest[offset..offset + 8].try_into().unwrap());
        let timestamp_us = u64::from_le_bytes(rest[offset + 8..offset + 16].try_into().unwrap());
        offset += 16;
        let (record, used) = decode_record(&rest[offset..])?;
        offset += used;
        hits.push(RecordHit {
            record,
            height,
            timestamp_us,
        });
    }
    if offset != rest.len() {
        return Err(WireError::TrailingBytes(rest.len() - offset));
    }
    Ok(hits)
}

fn connection_loop(stream: TcpStream, events: Sender<NodeEvent>, shutdown: Arc<AtomicBool>) {
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(_) => return,
    };
    reader
        .set_read_timeout(Some(Duration::from_millis(200)))
        .ok();
    let mut writer = stream;
    let mut peer_id: Option<u16> = None;
    while !shutdown.load(Ordering::SeqCst) {
        let payload = match read_framed_patient(&mut reader, &shutdown) {
            Ok(Some(p)) => p,
            Ok(None) => return, // clean close or shutdown
            Err(e) => {
                debug!("connection error: {e}");
                return;
            }
        };
        let Some((&opcode, rest)) = payload.split_first() else {
            continue;
        };
        match opcode {
            PEER_HELLO => {
                if rest.len() == 2 {
                    peer_id = Some(u16::from_le_bytes(rest.try_into().unwrap()));
                }
            }
            0x01..=0x03 => {
                let Some(from) = peer_id else {
                    warn!("consensus message before hello; dropping connection");
                    return;
                };
                match ConsensusMessage::decode(&payload) {
                    Ok(msg) => {
                        if events.send(NodeEvent::Peer { from, msg }).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        debug!("bad consensus message from {from}: {e}");
                    }
                }
            }
            _ => {
                let (reply_tx, reply_rx) = mpsc::channel();
                if events
                    .send(NodeEvent::Client {
                        request: payload,
                        reply: reply_tx,
                    })
                    .is_err()
                {
                    return;
                }
                let Ok(response) = reply_rx.recv() else {
                    return;
                };
                if write_framed(&mut writer, &response).is_err() {
                    return;
                }
            }
        }
    }
}

/// Like [`read_framed`] but tolerates read timeouts while idle between
/// frames, so connection threads can observe the shutdown flag.
fn read_framed_patient<R: Read>(
    source: &mut R,
    shutdown: &AtomicBool,
) -> Result<Option<Vec<u8>>, WireError> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0usize;
    while filled < 4 {
        match source.read(&mut len_buf[filled..]) {
            Ok(0) => {
                return if filled == 0 {
                    Ok(None)
                } else {
                    Err(WireError::Truncated {
                        what: "length prefix",
                        offset: filled,
                    })
                }
            }
            Ok(n) => filled += n,
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                if filled == 0 && shutdown.load(Ordering::SeqCst) {
                    return Ok(None);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len_buf);
    if len > crate::wire::MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge {
            got: len,
            limit: crate::wire::MAX_FRAME_LEN,
        });
    }
    let mut payload = vec![0u8; len as usize];
    let mut filled = 0usize;
    while filled < payload.len() {
        match source.read(&mut payload[filled..]) {
            Ok(0) => {
                return Err(WireError::Truncated {
                    what: "framed payload",
                    offset: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                if shutdown.load(Ordering::SeqCst) {
                    return Ok(None);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(payload))
}

/// Cluster head-of-chain summary returned by ChainInfo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainInfo {
    pub height: u64,
    pub tip_hash: [u8; 32],
    pub members: u16,
    pub quorum: u16,
}

/// Client for one node's request API.
pub struct LedgerClient {
    addr: String,
    stream: Option<TcpStream>,
}

impl LedgerClient {
    pub fn new(addr: impl Into<String>) -> Self {
        LedgerClient {
            addr: addr.into(),
            stream: None,
        }
    }

    fn request(&mut self, payload: &[u8]) -> Result<Vec<u8>, WireError> {
        for _ in 0..2 {
            if self.stream.is_none() {
                let stream = TcpStream::connect(&self.addr)?;
                stream.set_read_timeout(Some(Duration::from_secs(10))).ok();
                self.stream = Some(stream);
            }
            let stream = self.stream.as_mut().expect("just connected");
            let attempt = write_framed(stream, payload).and_then(|()| read_framed(stream));
            match attempt {
                Ok(Some(resp)) => return Ok(resp),
                Ok(None) | Err(_) => {
                    self.stream = None;
                }
            }
        }
        Err(WireError::Io(io::Error::other(format!(
            "no response from {}",
            self.addr
        ))))
    }

    /// Submits a record; returns whether the node accepted it.
    pub fn submit(&mut self, record: &DigestRecord) -> Result<bool, WireError> {
        let mut payload = vec![CLIENT_SUBMIT_TX];
        payload.extend_from_slice(&record_bytes(record));
        let resp = self.request(&payload)?;
        match resp.split_first() {
            Some((&RESP_SUBMIT_ACK, rest)) if rest.len() == 1 => Ok(rest[0] == 1),
            Some((&RESP_ERROR, rest)) => Err(WireError::Io(io::Error::other(
                String::from_utf8_lossy(rest).to_string(),
            ))),
            _ => Err(WireError::UnknownMessageType(
                resp.first().copied().unwrap_or(0),
            )),
        }
    }

    /// Every committed record covering the frame.
    pub fn query(&mut self, stream_id: StreamId, frame_id: u64) -> Result<Vec<RecordHit>, WireError> {
        let mut payload = vec![CLIENT_QUERY_DIGEST];
        payload.extend_from_slice(&stream_id.0);
        payload.extend_from_slice(&frame_id.to_le_bytes());
        let resp = self.request(&payload)?;
        decode_query_result(&resp)
    }

    pub fn chain_info(&mut self) -> Result<ChainInfo, WireError> {
        let resp = self.request(&[CLIENT_CHAIN_INFO])?;
        match resp.split_first() {
            Some((&RESP_CHAIN_INFO, rest)) if rest.len() == 8 + 32 + 2 + 2 => {
                let height = u64::from_le_bytes(rest[0..8].try_into().unwrap());
                let mut tip_hash = [0u8; 32];
                tip_hash.copy_from_slice(&rest[8..40]);
                let members = u16::from_le_bytes(rest[40..42].try_into().unwrap());
                let quorum = u16::from_le_bytes(rest[42..44].try_into().unwrap());
                Ok(ChainInfo {
                    height,
                    tip_hash,
                    members,
                    quorum,
                })
            }
            Some((&RESP_ERROR, rest)) => Err(WireError::Io(io::Error::other(
                String::from_utf8_lossy(rest).to_string(),
            ))),
            _ => Err(WireError::UnknownMessageType(
                resp.first().copied().unwrap_or(0),
            )),
        }
    }
}

/// Client that submits to every member, so any leader can include the
/// transaction on its next turn.
pub struct ClusterClient {
    clients: Vec<LedgerClient>,
}

impl ClusterClient {
    pub fn new(config: &ClusterConfig) -> Self {
        ClusterClient {
            clients: config
                .members
                .iter()
                .map(|m| LedgerClient::new(m.address.clone()))
                .collect(),
        }
    }

    pub fn from_addrs(addrs: &[String]) -> Self {
        ClusterClient {
            clients: addrs.iter().map(LedgerClient::new).collect(),
        }
    }

    /// Broadcasts a submission; succeeds if any member accepted.
    pub fn submit(&mut self, record: &DigestRecord) -> Result<bool, WireError> {
        let mut accepted = false;
        let mut last_err = None;
        for client in self.clients.iter_mut() {
            match client.submit(record) {
                Ok(a) => accepted |= a,
                Err(e) => last_err = Some(e),
            }
        }
        match (accepted, last_err) {
            (true, _) => Ok(true),
            (false, Some(e)) => Err(e),
            (false, None) => Ok(false),
        }
    }

    /// Queries members until one answers.
    pub fn query(&mut self, stream_id: StreamId, frame_id: u64) -> Result<Vec<RecordHit>, WireError> {
        let mut last_err = None;
        for client in self.clients.iter_mut() {
            match client.query(stream_id, frame_id) {
                Ok(hits) => return Ok(hits),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| WireError::Io(io::Error::other("no members configured"))))
    }

    pub fn chain_info(&mut self) -> Result<ChainInfo, WireError> {
        let mut last_err = None;
        for client in self.clients.iter_mut() {
            match client.chain_info() {
                Ok(info) => return Ok(info),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| WireError::Io(io::Error::other("no members configured"))))
    }

    /// Waits until the reported height reaches `height` or the timeout
    /// passes; returns the last seen info.
    pub fn wait_for_height(
        &mut self,
        height: u64,
        timeout: Duration,
    ) -> Result<ChainInfo, WireError> {
        let deadline = Instant::now() + timeout;
        loop {
            let info = self.chain_info()?;
            if info.height >= height || Instant::now() >= deadline {
                return Ok(info);
            }
            thread::sleep(Duration::from_millis(50));
        }
    }
}
