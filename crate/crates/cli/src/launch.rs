//! Running a per-rank closure on in-process threads or on local tcp
//! processes started from this executable.

use std::env;
use std::net::TcpListener;
use std::process::Command;
use std::time::Duration;

use eqgnn::runtime::{run_inproc, InProcOptions, TcpTransport, Transport};

use crate::config::TransportKind;
use crate::{CliError, CliResult};

const TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq)]
struct RankEnv {
    rank: usize,
    world: usize,
    addr: String,
    port: u16,
}

fn var<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
    match env::var(name) {
        Ok(v) => v.parse().map(Some).map_err(|_| CliError::Usage(format!("{name}={v:?} is not valid"))),
        Err(_) => Ok(None),
    }
}

/// `Some` when this process was started as one rank of a tcp launch.
fn rank_env() -> CliResult<Option<RankEnv>> {
    let Some(rank) = var::<usize>("RANK")? else {
        return Ok(None);
    };
    let world = var::<usize>("WORLD_SIZE")?.ok_or_else(|| CliError::Usage("RANK set without WORLD_SIZE".into()))?;
    if rank >= world {
        return Err(CliError::Usage(format!("RANK {rank} outside WORLD_SIZE {world}")));
    }
    let addr = env::var("MASTER_ADDR").unwrap_or_else(|_| "127.0.0.1".into());
    let port = var::<u16>("MASTER_PORT")?.ok_or_else(|| CliError::Usage("RANK set without MASTER_PORT".into()))?;
    Ok(Some(RankEnv { rank, world, addr, port }))
}

/// Rank 0's own value plus the byte payload contributed by every rank.
pub struct Gathered<L> {
    pub local: L,
    pub shared: Vec<Vec<u8>>,
}

/// Run `f` on `world` ranks. Returns `None` in processes that are not the
/// reporting rank (the tcp launcher itself and tcp ranks other than 0).
pub fn run_ranks<L, F>(kind: TransportKind, world: usize, f: F) -> CliResult<Option<Gathered<L>>>
where
    L: Send,
    F: Fn(&mut dyn Transport) -> eqgnn::Result<(L, Vec<u8>)> + Sync,
{
    match kind {
        TransportKind::InProc => {
            let mut all = run_inproc(world, InProcOptions { timeout: TIMEOUT, ..Default::default() }, |t| f(t))?;
            let shared = all.iter_mut().map(|(_, b)| std::mem::take(b)).collect();
            let local = all.into_iter().next().expect("world ≥ 1").0;
            Ok(Some(Gathered { local, shared }))
        }
        TransportKind::Tcp => match rank_env()? {
            None => launch(world).map(|()| None),
            Some(env) => {
                if env.world != world {
                    return Err(CliError::Usage(format!(
                        "WORLD_SIZE {} does not match the {world} parts of the partition",
                        env.world
                    )));
                }
                let mut t = TcpTransport::connect(env.rank, world, &env.addr, env.port, TIMEOUT)?;
                let (local, bytes) = f(&mut t)?;
                Ok(t.gather_bytes(bytes)?.map(|shared| Gathered { local, shared }))
            }
        },
    }
}

fn free_base_port(world: usize) -> CliResult<u16> {
    let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
    if port as usize + world > u16::MAX as usize {
        // Ephemeral ports sit near the top of the range; fall back lower.
        return Ok(20_000);
    }
    Ok(port)
}

/// Start `world` copies of this executable with the same arguments and
/// wait for all of them.
fn launch(world: usize) -> CliResult<()> {
    let exe = env::current_exe()?;
    let args: Vec<String> = env::args().skip(1).collect();
    let addr = env::var("MASTER_ADDR").unwrap_or_else(|_| "127.0.0.1".into());
    let port = match var::<u16>("MASTER_PORT")? {
        Some(p) => p,
        None => free_base_port(world)?,
    };
    let mut children = Vec::with_capacity(world);
    for rank in 0..world {
        let child = Command::new(&exe)
            .args(&args)
            .env("RANK", rank.to_string())
            .env("WORLD_SIZE", world.to_string())
            .env("MASTER_ADDR", &addr)
            .env("MASTER_PORT", port.to_string())
            .spawn()?;
        children.push(child);
    }
    let mut failure = None;
    for mut c in children {
        let status = c.wait()?;
        if !status.success() && failure.is_none() {
            failure = Some(status.code().and_then(|c| u8::try_from(c).ok()).unwrap_or(3));
        }
    }
    match failure {
        Some(code) => Err(CliError::Child(code)),
        None => Ok(()),
    }
}

/// Length-prefixed concatenation of several byte strings.
pub fn frame(parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

pub fn unframe(mut bytes: &[u8]) -> CliResult<Vec<&[u8]>> {
    let bad = || CliError::Data(eqgnn::Error::Invalid("malformed rank payload".into()));
    let mut parts = Vec::new();
    while !bytes.is_empty() {
        let (head, rest) = bytes.split_at_checked(8).ok_or_else(bad)?;
        let n = u64::from_le_bytes(head.try_into().unwrap()) as usize;
        let (part, rest) = rest.split_at_checked(n).ok_or_else(bad)?;
        parts.push(part);
        bytes = rest;
    }
    Ok(parts)
}
