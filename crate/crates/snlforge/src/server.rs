//! Virtual-board TCP service.
//!
//! Each connection is a session with its own copy of the pipeline, so
//! weight writes never leak between sessions. Frames within a session are
//! handled strictly in order. Replies go through a bounded queue drained by
//! a per-session writer thread; when a client stops reading, the queue fills
//! and the session stops reading too instead of buffering without limit.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use snlforge_core::sim::Pipeline;
use snlforge_core::Error as CoreError;

use crate::protocol::{
    decode_words, decode_writes, encode_infer_resp, ErrorCode, Frame, FrameReader, FrameType, Info, PayloadError,
    ReadEvent,
};

pub const DEFAULT_PORT: u16 = 8192;
/// Replies buffered per session before the session blocks.
pub const OUTBOUND_QUEUE: usize = 64;
const POLL_INTERVAL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// How long a partial frame may wait for its remaining bytes.
    pub frame_timeout: Duration,
    pub outbound_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            frame_timeout: Duration::from_millis(500),
            outbound_queue: OUTBOUND_QUEUE,
        }
    }
}

/// Running service; dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    sessions: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting, let sessions notice within one poll interval, join all.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        let sessions = std::mem::take(&mut *self.sessions.lock().expect("session list"));
        for s in sessions {
            let _ = s.join();
        }
    }

    /// Block until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

/// Bind and start serving. Every session starts from a clone of `template`,
/// including whatever weights it holds.
pub fn serve(template: Pipeline, model_name: &str, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let sessions: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
    let info = Info {
        model: model_name.to_string(),
        precision: template.plan().format.to_string(),
        words: template.word_count(),
        n_in: template.plan().input_len as u32,
        n_out: template.plan().output_len() as u32,
    };
    log::info!("serving {} at {} on {addr}", info.model, info.precision);
    let accept = {
        let stop = Arc::clone(&stop);
        let sessions = Arc::clone(&sessions);
        let next_id = AtomicU64::new(1);
        thread::Builder::new().name("snl-accept".into()).spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                let session = Session {
                    id,
                    pipeline: template.clone(),
                    info: info.clone(),
                    words_written: 0,
                    inferences: 0,
                };
                let (stop, config) = (Arc::clone(&stop), config.clone());
                let handle = thread::Builder::new()
                    .name(format!("snl-session-{id}"))
                    .spawn(move || session.run(stream, &stop, &config));
                match handle {
                    Ok(h) => {
                        let mut list = sessions.lock().expect("session list");
                        list.retain(|h| !h.is_finished());
                        list.push(h);
                    }
                    Err(e) => log::warn!("could not start session {id}: {e}"),
                }
            }
        })?
    };
    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        sessions,
    })
}

struct Session {
    id: u64,
    pipeline: Pipeline,
    info: Info,
    words_written: u64,
    inferences: u64,
}

impl Session {
    fn run(mut self, stream: TcpStream, stop: &AtomicBool, config: &ServerConfig) {
        let peer = stream.peer_addr().map_or_else(|_| "?".to_string(), |a| a.to_string());
        log::info!("session {}: opened by {peer}", self.id);
        if let Err(e) = self.serve_stream(stream, stop, config) {
            log::info!("session {}: {e}", self.id);
        }
        log::info!(
            "session {}: closed after {} words written, {} inferences",
            self.id,
            self.words_written,
            self.inferences
        );
    }

    fn serve_stream(&mut self, stream: TcpStream, stop: &AtomicBool, config: &ServerConfig) -> io::Result<()> {
        stream.set_read_timeout(Some(POLL_INTERVAL))?;
        stream.set_nodelay(true)?;
        let mut out = stream.try_clone()?;
        let (tx, rx) = sync_channel::<Frame>(config.outbound_queue);
        let writer = thread::Builder::new()
            .name(format!("snl-writer-{}", self.id))
            .spawn(move || {
                for frame in rx {
                    if out.write_all(&frame.encode()).is_err() {
                        break;
                    }
                }
                let _ = out.flush();
            })?;
        let mut reader = FrameReader::new(stream, config.frame_timeout);
        let result = loop {
            if stop.load(Ordering::SeqCst) {
                break Ok(());
            }
            let reply = match reader.poll() {
                Ok(ReadEvent::Idle) => continue,
                Ok(ReadEvent::Closed) => break Ok(()),
                Ok(ReadEvent::Frame(frame)) => self.handle(&frame),
                Ok(ReadEvent::Skipped(n)) => {
                    Frame::error(ErrorCode::Malformed, &format!("skipped {n} bytes before a frame start"))
                }
                Ok(ReadEvent::Oversize(len)) => Frame::error(
                    ErrorCode::Malformed,
                    &format!("declared payload length {len} too large"),
                ),
                Ok(ReadEvent::Truncated(n)) => {
                    Frame::error(ErrorCode::Malformed, &format!("truncated frame ({n} bytes)"))
                }
                Err(e) => break Err(e),
            };
            if !send(&tx, reply, stop) {
                break Ok(());
            }
        };
        let _ = reader.get_ref().shutdown(std::net::Shutdown::Read);
        drop(tx);
        let _ = writer.join();
        result
    }

    fn handle(&mut self, frame: &Frame) -> Frame {
        let Some(kind) = frame.frame_type() else {
            return Frame::error(
                ErrorCode::UnknownType,
                &format!("unknown frame type 0x{:02x}", frame.kind),
            );
        };
        let format = self.pipeline.plan().format;
        match kind {
            FrameType::Ping => Frame::new(FrameType::Ack, frame.payload.clone()),
            FrameType::Info => Frame::new(FrameType::Info, self.info.encode()),
            FrameType::WriteReg => {
                let writes = match decode_writes(&frame.payload, format) {
                    Ok(w) => w,
                    Err(e) => return payload_error(e),
                };
                match self.pipeline.load_weights(&writes) {
                    Ok(ack) => {
                        self.words_written += ack.words as u64;
                        Frame::new(FrameType::Ack, (ack.words as u32).to_le_bytes().to_vec())
                    }
                    Err(e @ CoreError::AddressOutOfRange { .. }) => {
                        Frame::error(ErrorCode::AddressOutOfRange, &e.to_string())
                    }
                    Err(e) => Frame::error(ErrorCode::BadPayload, &e.to_string()),
                }
            }
            FrameType::InferReq => {
                if !self.pipeline.fully_loaded() {
                    return Frame::error(ErrorCode::WeightsNotLoaded, "weights not fully loaded");
                }
                let input = match decode_words(&frame.payload, format) {
                    Ok(w) => w,
                    Err(e) => return payload_error(e),
                };
                if input.len() != self.info.n_in as usize {
                    return Frame::error(
                        ErrorCode::BadPayload,
                        &format!("expected {} input words, got {}", self.info.n_in, input.len()),
                    );
                }
                match self.pipeline.simulate_inference(&input) {
                    Ok(r) => {
                        self.inferences += 1;
                        Frame::new(
                            FrameType::InferResp,
                            encode_infer_resp(&r.output, r.latency_cycles, format),
                        )
                    }
                    Err(e) => Frame::error(ErrorCode::BadPayload, &e.to_string()),
                }
            }
            FrameType::InferResp | FrameType::Ack | FrameType::Error => Frame::error(
                ErrorCode::UnknownType,
                &format!("frame type 0x{:02x} is not a request", frame.kind),
            ),
        }
    }
}

fn payload_error(e: PayloadError) -> Frame {
    let code = match e {
        PayloadError::Range { .. } => ErrorCode::BadPayload,
        _ => ErrorCode::Malformed,
    };
    Frame::error(code, &e.to_string())
}

/// Queue a reply, waiting while the queue is full. `false` once the writer
/// is gone or the server is stopping.
fn send(tx: &SyncSender<Frame>, mut frame: Frame, stop: &AtomicBool) -> bool {
    loop {
        match tx.try_send(frame) {
            Ok(()) => return true,
            Err(TrySendError::Disconnected(_)) => return false,
            Err(TrySendError::Full(f)) => {
                if stop.load(Ordering::SeqCst) {
                    return false;
                }
                frame = f;
                thread::sleep(Duration::from_millis(2));
            }
        }
    }
}
