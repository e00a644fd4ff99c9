//! Reliable in-order frame delivery between two endpoints.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use log::{debug, warn};

use crate::error::{MpcError, Result};
use crate::frame::Frame;

pub trait Transport: Send {
    fn send(&mut self, frame: &Frame) -> Result<()>;
    fn recv(&mut self) -> Result<Frame>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        (**self).send(frame)
    }

    fn recv(&mut self) -> Result<Frame> {
        (**self).recv()
    }
}

/// In-process duplex channel. Frames travel as encoded bytes so the byte
/// stream is the same one a socket would carry.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        ChannelTransport { tx: tx_a, rx: rx_a },
        ChannelTransport { tx: tx_b, rx: rx_b },
    )
}

impl Transport for ChannelTransport {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        self.tx
            .send(frame.to_bytes())
            .map_err(|_| MpcError::Disconnected)
    }

    fn recv(&mut self) -> Result<Frame> {
        let bytes = self.rx.recv().map_err(|_| MpcError::Disconnected)?;
        Frame::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn from_stream(stream: TcpStream, timeout: Option<Duration>) -> Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        let reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
        let writer = BufWriter::with_capacity(1 << 16, stream);
        Ok(TcpTransport { reader, writer })
    }

    /// Connects with exponential backoff between attempts.
    pub fn connect<A: ToSocketAddrs + std::fmt::Debug>(
        addr: A,
        retry: RetryPolicy,
        timeout: Option<Duration>,
    ) -> Result<Self> {
        let mut backoff = retry.initial_backoff;
        let mut last = None;
        for attempt in 1..=retry.attempts.max(1) {
            match TcpStream::connect(&addr) {
                Ok(stream) => {
                    debug!("connected to {addr:?} on attempt {attempt}");
                    return TcpTransport::from_stream(stream, timeout);
                }
                Err(e) => {
                    warn!("connect to {addr:?} failed (attempt {attempt}): {e}");
                    last = Some(e);
                    if attempt < retry.attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(MpcError::Transport(last.unwrap_or_else(|| {
            std::io::Error::other("no connection attempts made")
        })))
    }

    pub fn accept(listener: &TcpListener, timeout: Option<Duration>) -> Result<Self> {
        let (stream, peer) = listener.accept()?;
        debug!("accepted connection from {peer}");
        TcpTransport::from_stream(stream, timeout)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        frame.write_to(&mut self.writer)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        Frame::read_from(&mut self.reader)
    }
}
