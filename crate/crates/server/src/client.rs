//! Blocking client for the app port: login handshake, then raw frames.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use greenhouse_core::protocol::{Codec, DecodeError, Frame, FrameScanner, Layer};

#[derive(Debug)]
pub struct AppClient {
    stream: TcpStream,
    scanner: FrameScanner,
    pub token: String,
}

impl AppClient {
    /// Connects and logs in. A refused login is returned as
    /// `PermissionDenied` carrying the server's error code.
    pub fn login(addr: SocketAddr, username: &str, password: &str) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        writeln!(stream, "AUTH {username} {password}")?;
        let token = read_reply(&stream)?;
        Ok(Self { stream, scanner: FrameScanner::new(Codec::for_layer(Layer::Application)), token })
    }

    pub fn resume(addr: SocketAddr, token: &str) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        writeln!(stream, "TOKEN {token}")?;
        let token = read_reply(&stream)?;
        Ok(Self { stream, scanner: FrameScanner::new(Codec::for_layer(Layer::Application)), token })
    }

    pub fn send_frame(&mut self, frame: &Frame) -> io::Result<()> {
        let bytes = Codec::for_layer(Layer::Application)
            .encode(frame)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.send_bytes(&bytes)
    }

    pub fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)
    }

    /// Reads whatever arrives until `timeout` passes or `want` frames are in hand.
    pub fn read_frames(&mut self, want: usize, timeout: Duration) -> io::Result<(Vec<Frame>, Vec<DecodeError>)> {
        let deadline = Instant::now() + timeout;
        let mut frames = Vec::new();
        let mut errors = Vec::new();
        let mut buf = [0u8; 4096];
        while frames.len() < want {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            self.stream.set_read_timeout(Some(left.min(Duration::from_millis(50))))?;
            match self.stream.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let out = self.scanner.push(&buf[..n]);
                    frames.extend(out.frames);
                    errors.extend(out.errors);
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e),
            }
        }
        Ok((frames, errors))
    }

    pub fn stream(&self) -> &TcpStream {
        &self.stream
    }
}

fn read_reply(stream: &TcpStream) -> io::Result<String> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    // Read byte by byte so no frame bytes after the reply line are consumed.
    let mut line = Vec::new();
    let mut reader = BufReader::with_capacity(1, stream);
    reader.read_until(b'\n', &mut line)?;
    let line = String::from_utf8_lossy(&line);
    let mut words = line.split_whitespace();
    match (words.next(), words.next()) {
        (Some("OK"), Some(token)) => Ok(token.to_string()),
        (Some("ERR"), Some(code)) => Err(io::Error::new(io::ErrorKind::PermissionDenied, code.to_string())),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, format!("unexpected reply {line:?}"))),
    }
}
