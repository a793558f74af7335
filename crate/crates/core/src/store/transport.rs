//! Transports carrying frames between clients and nodes: an in-process
//! loopback that still round-trips every frame through the codec, and TCP.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::model::NodeId;
use crate::store::frame::{Frame, Status, MAX_FRAME};
use crate::store::node::{Node, NodeConfig};

/// A client's private channel to every node of a cluster. Calls block until
/// the node replies.
pub trait Session: Send {
    fn call(&mut self, node: NodeId, request: &Frame) -> Result<Frame>;
}

/// Opens sessions to a cluster.
pub trait Connector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn Session>>;
    fn node_count(&self) -> u32;
}

/// Nodes hosted in this process.
#[derive(Clone)]
pub struct LoopbackCluster {
    nodes: Arc<[Arc<Node>]>,
}

impl LoopbackCluster {
    pub fn new(nodes: u32, buckets: u32, delay: Duration) -> Result<Self> {
        let nodes = (0..nodes)
            .map(|i| {
                Node::new(NodeConfig {
                    id: NodeId(i),
                    nodes,
                    buckets,
                    delay,
                })
                .map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_nodes(nodes))
    }

    pub fn from_nodes(nodes: Vec<Arc<Node>>) -> Self {
        LoopbackCluster { nodes: nodes.into() }
    }

    pub fn nodes(&self) -> &[Arc<Node>] {
        &self.nodes
    }
}

impl Connector for LoopbackCluster {
    fn connect(&self) -> Result<Box<dyn Session>> {
        Ok(Box::new(LoopbackSession { nodes: self.nodes.clone() }))
    }

    fn node_count(&self) -> u32 {
        self.nodes.len() as u32
    }
}

struct LoopbackSession {
    nodes: Arc<[Arc<Node>]>,
}

impl Session for LoopbackSession {
    fn call(&mut self, node: NodeId, request: &Frame) -> Result<Frame> {
        let target = self
            .nodes
            .get(node.0 as usize)
            .ok_or_else(|| Error::Config(format!("no such node {node}")))?;
        let reply = target.serve_bytes(&request.encode());
        Ok(Frame::decode(&reply)?)
    }
}

/// Nodes reached over TCP; endpoint `i` is node `i`.
#[derive(Debug, Clone)]
pub struct TcpConnector {
    endpoints: Vec<SocketAddr>,
}

impl TcpConnector {
    pub fn new(endpoints: Vec<SocketAddr>) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(Error::Config("no node endpoints given".into()));
        }
        Ok(TcpConnector { endpoints })
    }

    pub fn endpoints(&self) -> &[SocketAddr] {
        &self.endpoints
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> Result<Box<dyn Session>> {
        Ok(Box::new(TcpSession {
            endpoints: self.endpoints.clone(),
            streams: self.endpoints.iter().map(|_| None).collect(),
        }))
    }

    fn node_count(&self) -> u32 {
        self.endpoints.len() as u32
    }
}

struct TcpSession {
    endpoints: Vec<SocketAddr>,
    streams: Vec<Option<TcpStream>>,
}

impl TcpSession {
    fn exchange(stream: &mut TcpStream, request: &Frame) -> Result<Frame> {
        stream.write_all(&request.encode())?;
        let mut len = [0u8; 4];
        stream.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(Error::Protocol(format!("reply of {len} bytes exceeds frame limit")));
        }
        let mut payload = vec![0u8; len];
        stream.read_exact(&mut payload)?;
        Ok(Frame::decode_payload(&payload)?)
    }
}

impl Session for TcpSession {
    fn call(&mut self, node: NodeId, request: &Frame) -> Result<Frame> {
        let i = node.0 as usize;
        let addr = *self
            .endpoints
            .get(i)
            .ok_or_else(|| Error::Config(format!("no endpoint for {node}")))?;
        if self.streams[i].is_none() {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            self.streams[i] = Some(stream);
        }
        let result = Self::exchange(self.streams[i].as_mut().unwrap(), request);
        if result.is_err() {
            self.streams[i] = None;
        }
        result
    }
}

/// A cluster served over TCP on loopback ports by this process.
pub struct LocalTcpCluster {
    servers: Vec<NodeServer>,
    connector: TcpConnector,
}

impl LocalTcpCluster {
    pub fn start(nodes: u32, buckets: u32, delay: Duration) -> Result<Self> {
        let servers = LoopbackCluster::new(nodes, buckets, delay)?
            .nodes()
            .iter()
            .map(|n| NodeServer::bind(n.clone(), "127.0.0.1:0"))
            .collect::<Result<Vec<_>>>()?;
        let connector = TcpConnector::new(servers.iter().map(NodeServer::local_addr).collect())?;
        Ok(LocalTcpCluster { servers, connector })
    }

    pub fn endpoints(&self) -> &[SocketAddr] {
        self.connector.endpoints()
    }

    pub fn shutdown(self) {
        for s in self.servers {
            s.shutdown();
        }
    }
}

impl Connector for LocalTcpCluster {
    fn connect(&self) -> Result<Box<dyn Session>> {
        self.connector.connect()
    }

    fn node_count(&self) -> u32 {
        self.connector.node_count()
    }
}

/// TCP listener serving one node, one thread per connection.
pub struct NodeServer {
    addr: SocketAddr,
    node: Arc<Node>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    connections: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

const POLL: Duration = Duration::from_millis(20);

impl NodeServer {
    pub fn bind(node: Arc<Node>, addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (node, shutdown, connections) = (node.clone(), shutdown.clone(), connections.clone());
            thread::Builder::new()
                .name(format!("accept-{}", node.id()))
                .spawn(move || accept_loop(listener, node, shutdown, connections))?
        };
        Ok(NodeServer {
            addr,
            node,
            shutdown,
            acceptor: Some(acceptor),
            connections,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    /// Stops accepting, lets every connection finish the request it is
    /// serving, then closes all connections.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        let handles: Vec<_> = self.connections.lock().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, node: Arc<Node>, shutdown: Arc<AtomicBool>, connections: Arc<Mutex<Vec<JoinHandle<()>>>>) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("{} accepted {peer}", node.id());
                let (node, shutdown) = (node.clone(), shutdown.clone());
                let spawned = thread::Builder::new()
                    .name(format!("conn-{}", node.id()))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &node, &shutdown) {
                            debug!("connection from {peer} closed: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => {
                        let mut conns = connections.lock();
                        conns.retain(|h| !h.is_finished());
                        conns.push(h);
                    }
                    Err(e) => warn!("cannot spawn connection thread: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

/// Fills `buf`. Returns `Ok(false)` when shutdown is requested before the
/// first byte arrives or the peer closed cleanly; once a frame has started
/// it is always read to the end.
fn read_full(stream: &mut TcpStream, buf: &mut [u8], shutdown: &AtomicBool, idle_ok: bool) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match stream.read(&mut buf[got..]) {
            Ok(0) if got == 0 && idle_ok => return Ok(false),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if got == 0 && idle_ok && shutdown.load(Ordering::SeqCst) {
                    return Ok(false);
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn serve_connection(mut stream: TcpStream, node: &Node, shutdown: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    loop {
        let mut len = [0u8; 4];
        if !read_full(&mut stream, &mut len, shutdown, true)? {
            return Ok(());
        }
        let n = u32::from_be_bytes(len) as usize;
        if n > MAX_FRAME {
            let reply = Frame::error(0, Status::Oversized, "frame exceeds 16 MiB");
            stream.write_all(&reply.encode())?;
            return Ok(());
        }
        let mut bytes = Vec::with_capacity(4 + n);
        bytes.extend_from_slice(&len);
        bytes.resize(4 + n, 0);
        read_full(&mut stream, &mut bytes[4..], shutdown, false)?;
        let reply = node.serve_bytes(&bytes);
        stream.write_all(&reply)?;
    }
}
