//! Line sources feeding the engine: file replay and a newline-delimited
//! TCP listener. One producer thread pushes lines into a bounded channel;
//! the engine consumes from the other end, so a fast producer blocks
//! rather than ballooning memory.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

pub const CHANNEL_CAPACITY: usize = 8192;

/// Where events come from: a JSONL file or a listening TCP socket
/// (`tcp:host:port`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSpec {
    File(PathBuf),
    Tcp(String),
}

impl InputSpec {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("tcp:") {
            Some(addr) => InputSpec::Tcp(addr.to_string()),
            None => InputSpec::File(PathBuf::from(s)),
        }
    }
}

/// Stream a file's lines into a bounded channel. The file is opened before
/// the thread spawns so a missing input fails fast.
pub fn spawn_file_reader(path: &Path) -> std::io::Result<(Receiver<String>, JoinHandle<std::io::Result<u64>>)> {
    let file = std::fs::File::open(path)?;
    let (tx, rx) = sync_channel::<String>(CHANNEL_CAPACITY);
    let handle = std::thread::spawn(move || {
        let reader = BufReader::new(file);
        let mut sent = 0u64;
        for line in reader.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if tx.send(line).is_err() {
                break; // consumer went away
            }
            sent += 1;
        }
        Ok(sent)
    });
    Ok((rx, handle))
}

/// Listen on `addr` and stream client lines into a bounded channel. A
/// client disconnect keeps the partially filled window intact; the next
/// connection simply continues the stream. With `max_conns` the reader
/// stops after that many connections have closed (handy for tests and
/// bounded replays); otherwise it accepts forever.
pub fn spawn_tcp_reader(
    addr: &str,
    max_conns: Option<usize>,
) -> std::io::Result<(SocketAddr, Receiver<String>, JoinHandle<std::io::Result<u64>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let (tx, rx) = sync_channel::<String>(CHANNEL_CAPACITY);
    let handle = std::thread::spawn(move || {
        let mut sent = 0u64;
        let mut served = 0usize;
        loop {
            if let Some(limit) = max_conns {
                if served >= limit {
                    break;
                }
            }
            let (conn, _) = listener.accept()?;
            served += 1;
            let reader = BufReader::new(conn);
            for line in reader.lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => break, // client dropped mid-line
                };
                if line.is_empty() {
                    continue;
                }
                if tx.send(line).is_err() {
                    return Ok(sent);
                }
                sent += 1;
            }
        }
        Ok(sent)
    });
    Ok((local, rx, handle))
}
