use std::collections::{BTreeMap, VecDeque};
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Tags at or above this value belong to collectives and are not counted as
/// point-to-point traffic.
pub const COLLECTIVE_TAG: u32 = 0x8000_0000;

/// Point-to-point traffic seen by one rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub sends: usize,
    pub recvs: usize,
    pub bytes_sent: usize,
    pub bytes_received: usize,
    pub collectives: usize,
}

/// Message passing between the ranks of a fixed-size world. Messages from
/// one sender to one receiver arrive in the order they were posted; nothing
/// is promised across different pairs.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;

    /// Queue `payload` for `dst`. Never blocks on the receiver.
    fn post_send(&mut self, dst: usize, tag: u32, payload: Vec<u8>) -> Result<()>;

    /// Next message from `src`; fails if its tag is not `tag`.
    fn post_recv(&mut self, src: usize, tag: u32) -> Result<Vec<u8>>;

    fn counts(&self) -> CallCounts;

    /// Collective sequence number, advanced identically on every rank.
    fn next_collective(&mut self) -> u32;

    fn note_collective(&mut self);

    /// Every rank's `values`, indexed by rank.
    fn allgather(&mut self, values: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tag = COLLECTIVE_TAG | self.next_collective();
        self.note_collective();
        let (me, n) = (self.rank(), self.world_size());
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for dst in (0..n).filter(|&d| d != me) {
            self.post_send(dst, tag, bytes.clone())?;
        }
        let mut out = Vec::with_capacity(n);
        for src in 0..n {
            if src == me {
                out.push(values.to_vec());
                continue;
            }
            let b = self.post_recv(src, tag)?;
            if b.len() % 8 != 0 {
                return Err(Error::Comm { rank: me, peer: src, msg: format!("allgather payload of {} bytes", b.len()) });
            }
            out.push(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
        }
        Ok(out)
    }

    fn barrier(&mut self) -> Result<()> {
        self.allgather(&[]).map(|_| ())
    }

    /// Send `payload` to rank 0; rank 0 gets everyone's, indexed by rank.
    fn gather_bytes(&mut self, payload: Vec<u8>) -> Result<Option<Vec<Vec<u8>>>> {
        let tag = COLLECTIVE_TAG | self.next_collective();
        self.note_collective();
        let me = self.rank();
        if me != 0 {
            self.post_send(0, tag, payload)?;
            return Ok(None);
        }
        let mut out = vec![payload];
        for src in 1..self.world_size() {
            out.push(self.post_recv(src, tag)?);
        }
        Ok(Some(out))
    }
}

type Frame = (usize, u32, Vec<u8>);

/// Per-source FIFO reordering on top of a single incoming channel.
struct Inbox {
    rx: Receiver<Frame>,
    pending: BTreeMap<usize, VecDeque<(u32, Vec<u8>)>>,
    timeout: Duration,
}

impl Inbox {
    fn take(&mut self, me: usize, src: usize, tag: u32) -> Result<Vec<u8>> {
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some((t, bytes)) = self.pending.get_mut(&src).and_then(|q| q.pop_front()) {
                if t != tag {
                    return Err(Error::Comm { rank: me, peer: src, msg: format!("expected tag {tag:#x}, got {t:#x}") });
                }
                return Ok(bytes);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok((from, t, bytes)) => self.pending.entry(from).or_default().push_back((t, bytes)),
                Err(e) => return Err(Error::Comm { rank: me, peer: src, msg: format!("receive failed: {e}") }),
            }
        }
    }
}

fn tally(counts: &mut CallCounts, tag: u32, bytes: usize, sent: bool) {
    if tag >= COLLECTIVE_TAG {
        return;
    }
    if sent {
        counts.sends += 1;
        counts.bytes_sent += bytes;
    } else {
        counts.recvs += 1;
        counts.bytes_received += bytes;
    }
}

/// Options for [`inproc_world`].
#[derive(Debug, Clone, Copy)]
pub struct InProcOptions {
    /// Random delay of up to this many microseconds before each send, to
    /// shake out ordering assumptions.
    pub max_jitter_us: u64,
    pub seed: u64,
    pub timeout: Duration,
}

impl Default for InProcOptions {
    fn default() -> Self {
        InProcOptions { max_jitter_us: 0, seed: 0, timeout: Duration::from_secs(120) }
    }
}

/// Ranks living in one process, connected by unbounded channels.
pub struct InProcTransport {
    rank: usize,
    peers: Vec<Sender<Frame>>,
    inbox: Inbox,
    counts: CallCounts,
    collective: u32,
    jitter: Option<(ChaCha8Rng, u64)>,
}

pub fn inproc_world(n: usize, opts: InProcOptions) -> Vec<InProcTransport> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| channel::<Frame>()).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(rank, rx)| InProcTransport {
            rank,
            peers: txs.clone(),
            inbox: Inbox { rx, pending: BTreeMap::new(), timeout: opts.timeout },
            counts: CallCounts::default(),
            collective: 0,
            jitter: (opts.max_jitter_us > 0)
                .then(|| (ChaCha8Rng::seed_from_u64(opts.seed ^ (rank as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)), opts.max_jitter_us)),
        })
        .collect()
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.peers.len()
    }

    fn post_send(&mut self, dst: usize, tag: u32, payload: Vec<u8>) -> Result<()> {
        let Some(tx) = self.peers.get(dst) else {
            return Err(Error::Comm { rank: self.rank, peer: dst, msg: "no such rank".into() });
        };
        if let Some((rng, max)) = &mut self.jitter {
            std::thread::sleep(Duration::from_micros(rng.random_range(0..=*max)));
        }
        tally(&mut self.counts, tag, payload.len(), true);
        tx.send((self.rank, tag, payload))
            .map_err(|_| Error::Comm { rank: self.rank, peer: dst, msg: "peer hung up".into() })
    }

    fn post_recv(&mut self, src: usize, tag: u32) -> Result<Vec<u8>> {
        let bytes = self.inbox.take(self.rank, src, tag)?;
        tally(&mut self.counts, tag, bytes.len(), false);
        Ok(bytes)
    }

    fn counts(&self) -> CallCounts {
        self.counts
    }

    fn next_collective(&mut self) -> u32 {
        self.collective = (self.collective + 1) & !COLLECTIVE_TAG;
        self.collective
    }

    fn note_collective(&mut self) {
        self.counts.collectives += 1;
    }
}

/// One rank per process; rank `r` listens on `base_port + r`. Frames are
/// an 8-byte little-endian payload length, the 4-byte sender rank, the
/// 4-byte tag, then the payload.
pub struct TcpTransport {
    rank: usize,
    world: usize,
    out: Vec<Option<BufWriter<TcpStream>>>,
    inbox: Inbox,
    counts: CallCounts,
    collective: u32,
}

fn read_frame(r: &mut impl Read) -> std::io::Result<Frame> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    let len = u64::from_le_bytes(head[..8].try_into().unwrap()) as usize;
    let from = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let tag = u32::from_le_bytes(head[12..16].try_into().unwrap());
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok((from, tag, payload))
}

fn write_frame(w: &mut impl Write, from: usize, tag: u32, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&(from as u32).to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

impl TcpTransport {
    /// Listen, connect to every other rank (retrying until `timeout`) and
    /// start one reader thread per incoming connection.
    pub fn connect(rank: usize, world: usize, addr: &str, base_port: u16, timeout: Duration) -> Result<Self> {
        let comm = |peer: usize, msg: String| Error::Comm { rank, peer, msg };
        let port = |r: usize| -> Result<u16> {
            u16::try_from(base_port as usize + r).map_err(|_| comm(r, format!("port {base_port}+{r} out of range")))
        };
        let listener = TcpListener::bind((addr, port(rank)?)).map_err(|e| comm(rank, format!("bind: {e}")))?;
        let (tx, rx) = channel::<Frame>();

        let acceptor = {
            let tx = tx.clone();
            std::thread::spawn(move || -> std::io::Result<()> {
                for _ in 0..world.saturating_sub(1) {
                    let (stream, _) = listener.accept()?;
                    stream.set_nodelay(true)?;
                    let tx = tx.clone();
                    std::thread::spawn(move || {
                        let mut r = BufReader::new(stream);
                        while let Ok(frame) = read_frame(&mut r) {
                            if tx.send(frame).is_err() {
                                break;
                            }
                        }
                    });
                }
                Ok(())
            })
        };
        drop(tx);

        let deadline = Instant::now() + timeout;
        let mut out = Vec::with_capacity(world);
        for peer in 0..world {
            if peer == rank {
                out.push(None);
                continue;
            }
            let target = (addr, port(peer)?);
            let stream = loop {
                match TcpStream::connect(target) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => return Err(comm(peer, format!("connect: {e}"))),
                    Err(_) => std::thread::sleep(Duration::from_millis(20)),
                }
            };
            stream.set_nodelay(true).map_err(|e| comm(peer, e.to_string()))?;
            out.push(Some(BufWriter::new(stream)));
        }
        acceptor
            .join()
            .map_err(|_| comm(rank, "accept thread panicked".into()))?
            .map_err(|e| comm(rank, format!("accept: {e}")))?;
        Ok(TcpTransport {
            rank,
            world,
            out,
            inbox: Inbox { rx, pending: BTreeMap::new(), timeout },
            counts: CallCounts::default(),
            collective: 0,
        })
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn post_send(&mut self, dst: usize, tag: u32, payload: Vec<u8>) -> Result<()> {
        let rank = self.rank;
        let Some(Some(w)) = self.out.get_mut(dst) else {
            return Err(Error::Comm { rank, peer: dst, msg: "no connection".into() });
        };
        write_frame(w, rank, tag, &payload).map_err(|e| Error::Comm { rank, peer: dst, msg: e.to_string() })?;
        tally(&mut self.counts, tag, payload.len(), true);
        Ok(())
    }

    fn post_recv(&mut self, src: usize, tag: u32) -> Result<Vec<u8>> {
        let bytes = self.inbox.take(self.rank, src, tag)?;
        tally(&mut self.counts, tag, bytes.len(), false);
        Ok(bytes)
    }

    fn counts(&self) -> CallCounts {
        self.counts
    }

    fn next_collective(&mut self) -> u32 {
        self.collective = (self.collective + 1) & !COLLECTIVE_TAG;
        self.collective
    }

    fn note_collective(&mut self) {
        self.counts.collectives += 1;
    }
}

/// Run `f` on every rank of an in-process world, one thread each, and
/// return the per-rank results in rank order.
pub fn run_inproc<R, F>(n: usize, opts: InProcOptions, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&mut InProcTransport) -> Result<R> + Sync,
{
    let world = inproc_world(n, opts);
    std::thread::scope(|s| {
        let handles: Vec<_> = world
            .into_iter()
            .map(|mut t| {
                let f = &f;
                s.spawn(move || f(&mut t))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Comm { rank, peer: rank, msg: "rank thread panicked".into() }))
            })
            .collect()
    })
}
