//! External denoisers over a byte stream.
//!
//! All integers are little-endian.
//!
//! ```text
//! handshake  client → server   "DDCMNET" version:u16 d:u32 T:u32
//!            server → client   "DDCMNET" version:u16 model_id:u64
//! request    client → server   opcode:u8 step:u32 [len:u32 utf8]  d × f32
//!                              (the condition is present for opcode 3 only)
//! response   server → client   status:u8 d × f32            when status = 0
//!                              status:u8 len:u32 utf8 error otherwise
//! ```
//!
//! Opcodes: `1` denoise (`x̂_0`), `2` score, `3` conditional score. `step` is
//! the model's own timestep label. A client holds one request in flight per
//! connection.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::error::{check_dim, Error, Result};
use crate::model::{score_to_x0_at, ScoreModel, Timestep};
use crate::schedule::Schedule;

pub const NET_MAGIC: &[u8; 7] = b"DDCMNET";
pub const PROTOCOL_VERSION: u16 = 1;

pub const OP_DENOISE: u8 = 1;
pub const OP_SCORE: u8 = 2;
pub const OP_COND_SCORE: u8 = 3;

/// A bidirectional byte stream to a denoiser.
pub trait Connection: Read + Write + Send {}
impl<T: Read + Write + Send> Connection for T {}

fn map_io(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Error::Timeout,
        io::ErrorKind::UnexpectedEof => Error::Protocol("connection closed mid-message".into()),
        _ => Error::Io(e),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(map_io)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_STRING: u32 = 1 << 20;

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)?;
    if n > MAX_STRING {
        return Err(Error::Protocol(format!("string of {n} bytes")));
    }
    let mut buf = vec![0u8; n as usize];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Protocol("string is not UTF-8".into()))
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_floats(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

/// Reads `d` floats. A stream that ends cleanly on a float boundary before
/// `d` values is reported as a dimension mismatch.
fn read_floats(r: &mut impl Read, d: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 4 * d];
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled % 4 == 0 => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: filled / 4,
                })
            }
            Ok(0) => return Err(Error::Protocol("connection closed mid-value".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(map_io(e)),
        }
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

/// Client side of the protocol.
pub struct RemoteDenoiser {
    conn: Mutex<Box<dyn Connection>>,
    dim: usize,
    steps: u32,
    model_id: u64,
    conditional: bool,
    _child: Option<ChildGuard>,
}

impl RemoteDenoiser {
    /// Performs the handshake over an established connection.
    pub fn handshake(mut conn: Box<dyn Connection>, dim: usize, steps: u32) -> Result<Self> {
        let mut msg = Vec::with_capacity(17);
        msg.extend_from_slice(NET_MAGIC);
        msg.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        msg.extend_from_slice(&(dim as u32).to_le_bytes());
        msg.extend_from_slice(&steps.to_le_bytes());
        conn.write_all(&msg).map_err(map_io)?;
        conn.flush().map_err(map_io)?;
        let mut magic = [0u8; 7];
        read_exact(&mut conn, &mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::Protocol("bad handshake magic".into()));
        }
        let version = read_u16(&mut conn)?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "server speaks version {version}, client {PROTOCOL_VERSION}"
            )));
        }
        let model_id = read_u64(&mut conn)?;
        Ok(Self {
            conn: Mutex::new(conn),
            dim,
            steps,
            model_id,
            conditional: true,
            _child: None,
        })
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs, dim: usize, steps: u32, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Self::handshake(Box::new(stream), dim, steps)
    }

    /// Spawns `program args...` and speaks the protocol over its stdio.
    pub fn spawn(program: &str, args: &[String], dim: usize, steps: u32, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().unwrap();
        let mut stdout = child.stdout.take().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match stdout.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        if tx.send(buf[..n].to_vec()).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        let conn = ChildConnection {
            stdin,
            rx,
            pending: Vec::new(),
            offset: 0,
            timeout,
        };
        let mut me = Self::handshake(Box::new(conn), dim, steps)?;
        me._child = Some(ChildGuard(child));
        Ok(me)
    }

    /// The identifier the server announced.
    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    fn request(&self, opcode: u8, step: u32, condition: Option<&str>, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut msg = Vec::with_capacity(9 + 4 * x.len());
        msg.push(opcode);
        msg.extend_from_slice(&step.to_le_bytes());
        if opcode == OP_COND_SCORE {
            write_string(&mut msg, condition.unwrap_or(""));
        }
        write_floats(&mut msg, x);
        let mut conn = self.conn.lock().map_err(|_| Error::Protocol("connection poisoned".into()))?;
        conn.write_all(&msg).map_err(map_io)?;
        conn.flush().map_err(map_io)?;
        let status = read_u8(&mut *conn)?;
        if status != 0 {
            let text = read_string(&mut *conn)?;
            return Err(Error::Remote(text));
        }
        let out = read_floats(&mut *conn, self.dim)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("remote response".into()));
        }
        Ok(out)
    }
}

impl ScoreModel for RemoteDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> u64 {
        self.model_id
    }

    fn denoise(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        match condition {
            None => self.request(OP_DENOISE, t.index, None, x),
            Some(c) => {
                let s = self.request(OP_COND_SCORE, t.index, Some(c), x)?;
                score_to_x0_at(x, &s, t.alpha_bar)
            }
        }
    }

    fn score(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        match condition {
            None => self.request(OP_SCORE, t.index, None, x),
            Some(c) => self.request(OP_COND_SCORE, t.index, Some(c), x),
        }
    }

    fn supports_conditioning(&self) -> bool {
        self.conditional
    }
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Child stdio with a bounded wait on every read.
struct ChildConnection {
    stdin: ChildStdin,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
    timeout: Duration,
}

impl Read for ChildConnection {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.offset == self.pending.len() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(RecvTimeoutError::Timeout) => return Err(io::ErrorKind::TimedOut.into()),
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for ChildConnection {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.stdin.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.stdin.flush()
    }
}

/// Server side: answers one connection until the peer closes it.
///
/// `sched` maps step labels to `ᾱ`. Request errors are answered with a
/// non-zero status and the connection stays usable.
pub fn serve<R: Read, W: Write>(model: &dyn ScoreModel, sched: &Schedule, mut r: R, mut w: W) -> Result<()> {
    let mut magic = [0u8; 7];
    read_exact(&mut r, &mut magic)?;
    if &magic != NET_MAGIC {
        return Err(Error::Protocol("bad handshake magic".into()));
    }
    let _version = read_u16(&mut r)?;
    let d = read_u32(&mut r)? as usize;
    let steps = read_u32(&mut r)?;
    let mut reply = Vec::with_capacity(17);
    reply.extend_from_slice(NET_MAGIC);
    reply.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    reply.extend_from_slice(&model.fingerprint().to_le_bytes());
    w.write_all(&reply)?;
    w.flush()?;

    loop {
        let mut op = [0u8; 1];
        match r.read(&mut op) {
            Ok(0) => return Ok(()),
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        let step = read_u32(&mut r)?;
        let condition = if op[0] == OP_COND_SCORE {
            Some(read_string(&mut r)?)
        } else {
            None
        };
        let x = read_floats(&mut r, d)?;
        let answer = answer(model, sched, op[0], step, steps, condition.as_deref(), &x);
        let mut out = Vec::new();
        match answer {
            Ok(v) => {
                out.push(0);
                write_floats(&mut out, &v);
            }
            Err(e) => {
                out.push(1);
                write_string(&mut out, &e);
            }
        }
        w.write_all(&out)?;
        w.flush()?;
    }
}

fn answer(
    model: &dyn ScoreModel,
    sched: &Schedule,
    op: u8,
    step: u32,
    steps: u32,
    condition: Option<&str>,
    x: &[f64],
) -> std::result::Result<Vec<f64>, String> {
    if x.len() != model.dim() {
        return Err("dimension mismatch".into());
    }
    if steps as usize != sched.len() {
        return Err("schedule mismatch".into());
    }
    if step == 0 || step as usize > sched.len() {
        return Err(format!("step {step} out of range"));
    }
    let t = sched.timestep(step as usize);
    let result = match op {
        OP_DENOISE => model.denoise(x, t, None),
        OP_SCORE => model.score(x, t, None),
        OP_COND_SCORE => model.score(x, t, condition),
        other => return Err(format!("unknown opcode {other}")),
    };
    result.map_err(|e| e.to_string())
}
