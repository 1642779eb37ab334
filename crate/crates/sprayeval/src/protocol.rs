//! Framed stdio protocol for inference engines running in a child process.
//!
//! All integers are little-endian.
//!
//! ```text
//! handshake  child → parent  "SPRYv1\n" u32 classes u32 channels
//! request    parent → child  u8 opcode  u32 n  n×u32 channel  u32 len  TNSR[len]
//! response   child → parent  u8 0  (u32 len TNSR[len]) × 3   main, aux, activations
//!                            u8 1  u32 len  utf-8[len]
//! ```
//!
//! Opcodes: 1 forward, 2 forward with ablation, 255 shutdown.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use sprayeval_core::{AblationRequest, EngineDescriptor, EngineError, InferenceEngine, ModelOutput, Tensor};

use crate::format::{decode_tensor, encode_tensor};

pub const MAGIC: &[u8; 7] = b"SPRYv1\n";
pub const OP_FORWARD: u8 = 1;
pub const OP_FORWARD_ABLATED: u8 = 2;
pub const OP_SHUTDOWN: u8 = 255;
pub const STATUS_OK: u8 = 0;
pub const STATUS_ERROR: u8 = 1;

#[derive(Debug)]
pub enum FrameError {
    /// Stream ended cleanly before the first byte of a frame.
    Closed,
    /// Stream ended inside a frame.
    Truncated(String),
    Malformed(String),
    Io(io::Error),
}

impl std::fmt::Display for FrameError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrameError::Closed => f.write_str("stream closed"),
            FrameError::Truncated(what) => write!(f, "stream ended inside {what}"),
            FrameError::Malformed(msg) => write!(f, "malformed frame: {msg}"),
            FrameError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FrameError {}

impl From<FrameError> for EngineError {
    fn from(e: FrameError) -> Self {
        EngineError::Transport(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Forward { image: Tensor, ablation: Vec<u32> },
    Shutdown,
}

/// A request whose image blob has not been decoded yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawRequest {
    Forward { opcode: u8, ablation: Vec<u32>, payload: Vec<u8> },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok { main: Tensor, aux: Tensor, activations: Tensor },
    Error(String),
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N], FrameError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated(what.to_string()),
        _ => FrameError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, FrameError> {
    read_array::<4>(r, what).map(u32::from_le_bytes)
}

/// Reads `len` bytes without trusting `len` for the allocation size.
fn read_blob(r: &mut impl Read, what: &str) -> Result<Vec<u8>, FrameError> {
    let len = read_u32(r, what)? as u64;
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf).map_err(FrameError::Io)?;
    if buf.len() as u64 != len {
        return Err(FrameError::Truncated(what.to_string()));
    }
    Ok(buf)
}

fn write_blob(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "blob over 4 GiB"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)
}

fn tensor_blob(r: &mut impl Read, what: &str) -> Result<Tensor, FrameError> {
    let bytes = read_blob(r, what)?;
    decode_tensor(&bytes).map_err(|e| FrameError::Malformed(format!("{what}: {e}")))
}

pub fn write_handshake(w: &mut impl Write, classes: u32, channels: u32) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&classes.to_le_bytes())?;
    w.write_all(&channels.to_le_bytes())
}

/// Returns `(classes, channels)`.
pub fn read_handshake(r: &mut impl Read) -> Result<(u32, u32), FrameError> {
    let magic = read_array::<7>(r, "handshake")?;
    if &magic != MAGIC {
        return Err(FrameError::Malformed(format!("bad handshake {:?}", String::from_utf8_lossy(&magic))));
    }
    Ok((read_u32(r, "handshake")?, read_u32(r, "handshake")?))
}

pub fn write_request(w: &mut impl Write, request: &Request) -> io::Result<()> {
    match request {
        Request::Shutdown => {
            w.write_all(&[OP_SHUTDOWN])?;
            w.write_all(&0u32.to_le_bytes())?;
            w.write_all(&0u32.to_le_bytes())
        }
        Request::Forward { image, ablation } => {
            let opcode = if ablation.is_empty() { OP_FORWARD } else { OP_FORWARD_ABLATED };
            w.write_all(&[opcode])?;
            w.write_all(&(ablation.len() as u32).to_le_bytes())?;
            for id in ablation {
                w.write_all(&id.to_le_bytes())?;
            }
            write_blob(w, &encode_tensor(image))
        }
    }
}

/// Reads one request frame. A shutdown opcode followed by end of stream is
/// accepted as a complete frame.
pub fn read_raw_request(r: &mut impl Read) -> Result<RawRequest, FrameError> {
    let mut op = [0u8; 1];
    loop {
        match r.read(&mut op) {
            Ok(0) => return Err(FrameError::Closed),
            Ok(_) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(FrameError::Io(e)),
        }
    }
    let opcode = op[0];
    if opcode == OP_SHUTDOWN {
        let mut rest = Vec::new();
        r.take(8).read_to_end(&mut rest).map_err(FrameError::Io)?;
        return Ok(RawRequest::Shutdown);
    }
    if opcode != OP_FORWARD && opcode != OP_FORWARD_ABLATED {
        return Err(FrameError::Malformed(format!("unknown opcode {opcode}")));
    }
    let n = read_u32(r, "ablation count")?;
    if opcode == OP_FORWARD && n != 0 {
        return Err(FrameError::Malformed(format!("plain forward carries {n} ablation ids")));
    }
    let mut ablation = Vec::new();
    for _ in 0..n {
        ablation.push(read_u32(r, "ablation ids")?);
    }
    let payload = read_blob(r, "image payload")?;
    Ok(RawRequest::Forward { opcode, ablation, payload })
}

pub fn read_request(r: &mut impl Read) -> Result<Request, FrameError> {
    match read_raw_request(r)? {
        RawRequest::Shutdown => Ok(Request::Shutdown),
        RawRequest::Forward { ablation, payload, .. } => {
            let image = decode_tensor(&payload).map_err(|e| FrameError::Malformed(format!("image: {e}")))?;
            Ok(Request::Forward { image, ablation })
        }
    }
}

pub fn write_response(w: &mut impl Write, response: &Response) -> io::Result<()> {
    match response {
        Response::Ok { main, aux, activations } => {
            w.write_all(&[STATUS_OK])?;
            for t in [main, aux, activations] {
                write_blob(w, &encode_tensor(t))?;
            }
            Ok(())
        }
        Response::Error(msg) => {
            w.write_all(&[STATUS_ERROR])?;
            write_blob(w, msg.as_bytes())
        }
    }
}

pub fn read_response(r: &mut impl Read) -> Result<Response, FrameError> {
    let status = read_array::<1>(r, "response status").map_err(|e| match e {
        FrameError::Truncated(_) => FrameError::Closed,
        other => other,
    })?[0];
    match status {
        STATUS_OK => {
            let main = tensor_blob(r, "main logits")?;
            let aux = tensor_blob(r, "aux logits")?;
            let activations = tensor_blob(r, "activations")?;
            Ok(Response::Ok { main, aux, activations })
        }
        STATUS_ERROR => {
            let bytes = read_blob(r, "error message")?;
            String::from_utf8(bytes)
                .map(Response::Error)
                .map_err(|_| FrameError::Malformed("error message is not UTF-8".into()))
        }
        other => Err(FrameError::Malformed(format!("unknown status {other}"))),
    }
}

/// Decodes a complete response held in memory.
pub fn decode_response(bytes: &[u8]) -> Result<Response, EngineError> {
    let mut cursor = io::Cursor::new(bytes);
    let response = read_response(&mut cursor)?;
    if (cursor.position() as usize) != bytes.len() {
        return Err(EngineError::Transport("trailing bytes after response".into()));
    }
    Ok(response)
}

/// Answers requests from `input` with `engine` until shutdown or end of input.
pub fn serve<E: InferenceEngine + ?Sized>(engine: &E, input: impl Read, output: impl Write) -> Result<(), FrameError> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let d = engine.descriptor();
    write_handshake(&mut output, d.classes as u32, d.channels as u32).map_err(FrameError::Io)?;
    output.flush().map_err(FrameError::Io)?;
    loop {
        let (ablation, payload) = match read_raw_request(&mut input) {
            Ok(RawRequest::Shutdown) | Err(FrameError::Closed) => return Ok(()),
            Ok(RawRequest::Forward { ablation, payload, .. }) => (ablation, payload),
            Err(e) => return Err(e),
        };
        let response = answer(engine, &d, &ablation, &payload);
        write_response(&mut output, &response).map_err(FrameError::Io)?;
        output.flush().map_err(FrameError::Io)?;
    }
}

fn answer<E: InferenceEngine + ?Sized>(engine: &E, d: &EngineDescriptor, ablation: &[u32], payload: &[u8]) -> Response {
    let image = match decode_tensor(payload) {
        Ok(t) => t,
        Err(e) => return Response::Error(format!("bad image: {e}")),
    };
    let request = match AblationRequest::new(ablation.iter().map(|&c| c as usize), d.channels) {
        Ok(r) => r,
        Err(e) => return Response::Error(e.to_string()),
    };
    match engine.forward_ablated(&image, &request) {
        Ok(out) => Response::Ok { main: out.main, aux: out.aux, activations: out.activations },
        Err(e) => Response::Error(e.to_string()),
    }
}

struct Channel {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    /// Set once the stream is out of sync or the child is gone.
    failed: Option<EngineError>,
}

impl Channel {
    fn exit_note(&mut self) -> String {
        // give a dying child a moment to be reaped
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return format!("engine process exited ({status})"),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return "engine process stopped responding".to_string(),
            }
        }
    }

    fn round_trip(&mut self, request: &Request) -> Result<Response, EngineError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| EngineError::Lost("stdin closed".into()))?;
        if let Err(e) = write_request(stdin, request).and_then(|_| stdin.flush()) {
            return Err(EngineError::Lost(format!("{}: {e}", self.exit_note())));
        }
        match read_response(&mut self.stdout) {
            Ok(r) => Ok(r),
            Err(e @ (FrameError::Closed | FrameError::Truncated(_))) => {
                Err(EngineError::Lost(format!("{}: {e}", self.exit_note())))
            }
            Err(FrameError::Io(e)) => Err(EngineError::Lost(format!("{}: {e}", self.exit_note()))),
            Err(e) => Err(e.into()),
        }
    }
}

/// An engine served by a child process over the framed stdio protocol.
///
/// Calls are serialized through an internal lock. After a transport failure
/// or the loss of the child every further call fails with the same error.
pub struct ExternalEngine {
    descriptor: EngineDescriptor,
    channel: Mutex<Channel>,
}

impl ExternalEngine {
    /// Runs `cmdline` through `sh -c`.
    pub fn spawn(cmdline: &str) -> Result<Self, EngineError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(cmdline);
        Self::from_command(cmd, format!("exec:{cmdline}"))
    }

    pub fn from_command(mut cmd: Command, name: String) -> Result<Self, EngineError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EngineError::Lost(format!("cannot start engine: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("stdin is piped"));
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let mut channel = Channel { child, stdin: Some(stdin), stdout, failed: None };
        let (classes, channels) = match read_handshake(&mut channel.stdout) {
            Ok(v) => v,
            Err(e @ (FrameError::Truncated(_) | FrameError::Closed | FrameError::Io(_))) => {
                let note = channel.exit_note();
                let _ = channel.child.kill();
                let _ = channel.child.wait();
                return Err(EngineError::Lost(format!("{note} during handshake: {e}")));
            }
            Err(e) => {
                let _ = channel.child.kill();
                let _ = channel.child.wait();
                return Err(e.into());
            }
        };
        if classes == 0 || channels == 0 {
            let _ = channel.child.kill();
            let _ = channel.child.wait();
            return Err(EngineError::Contract(format!("handshake declares {classes} classes, {channels} channels")));
        }
        let descriptor = EngineDescriptor { classes: classes as usize, channels: channels as usize, name };
        Ok(Self { descriptor, channel: Mutex::new(channel) })
    }
}

impl InferenceEngine for ExternalEngine {
    fn descriptor(&self) -> EngineDescriptor {
        self.descriptor.clone()
    }

    fn forward_ablated(&self, image: &Tensor, ablation: &AblationRequest) -> Result<ModelOutput, EngineError> {
        if let Some(&k) = ablation.channels().iter().find(|&&k| k >= self.descriptor.channels) {
            return Err(EngineError::Contract(format!("ablated channel {k} out of range")));
        }
        let mut channel = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(e) = &channel.failed {
            return Err(e.clone());
        }
        let request = Request::Forward {
            image: image.clone(),
            ablation: ablation.channels().iter().map(|&c| c as u32).collect(),
        };
        let response = match channel.round_trip(&request) {
            Ok(r) => r,
            Err(e) => {
                channel.failed = Some(e.clone());
                return Err(e);
            }
        };
        drop(channel);
        match response {
            Response::Error(msg) => Err(EngineError::Remote(msg)),
            Response::Ok { main, aux, activations } => {
                let out = ModelOutput::new(main, aux, activations).map_err(|e| EngineError::Contract(e.to_string()))?;
                out.check(&self.descriptor, image)?;
                Ok(out)
            }
        }
    }
}

impl Drop for ExternalEngine {
    fn drop(&mut self) {
        let channel = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        if let Some(mut stdin) = channel.stdin.take() {
            let _ = write_request(&mut stdin, &Request::Shutdown).and_then(|_| stdin.flush());
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match channel.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => break,
            }
        }
        let _ = channel.child.kill();
        let _ = channel.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], seed: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| i as f32 * 0.5 - seed).collect()).unwrap()
    }

    #[test]
    fn handshake_bytes() {
        let mut buf = Vec::new();
        write_handshake(&mut buf, 7, 8).unwrap();
        assert_eq!(buf, b"SPRYv1\n\x07\x00\x00\x00\x08\x00\x00\x00");
        assert_eq!(read_handshake(&mut buf.as_slice()).unwrap(), (7, 8));
    }

    #[test]
    fn request_frame_bytes() {
        let image = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, &Request::Forward { image: image.clone(), ablation: vec![3] }).unwrap();
        let blob = encode_tensor(&image);
        let mut want = vec![2, 1, 0, 0, 0, 3, 0, 0, 0];
        want.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        want.extend_from_slice(&blob);
        assert_eq!(buf, want);
        assert_eq!(read_request(&mut buf.as_slice()).unwrap(), Request::Forward { image, ablation: vec![3] });

        let mut buf = Vec::new();
        write_request(&mut buf, &Request::Shutdown).unwrap();
        assert_eq!(read_request(&mut buf.as_slice()).unwrap(), Request::Shutdown);
        assert_eq!(read_request(&mut &[255u8][..]).unwrap(), Request::Shutdown);
        assert!(matches!(read_request(&mut &[][..]), Err(FrameError::Closed)));
    }

    #[test]
    fn response_round_trip() {
        let ok = Response::Ok { main: tensor(&[2, 3, 3], 1.0), aux: tensor(&[2, 2, 2], 0.0), activations: tensor(&[4, 1, 1], 2.0) };
        for r in [ok, Response::Error("no model".into())] {
            let mut buf = Vec::new();
            write_response(&mut buf, &r).unwrap();
            assert_eq!(decode_response(&buf).unwrap(), r);
            assert!(decode_response(&buf[..buf.len() - 1]).is_err());
        }
    }

    #[test]
    fn bad_status_and_utf8() {
        assert!(matches!(decode_response(&[7]), Err(EngineError::Transport(_))));
        assert!(matches!(decode_response(&[1, 1, 0, 0, 0, 0xff]), Err(EngineError::Transport(_))));
    }
}
