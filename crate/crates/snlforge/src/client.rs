//! Reference client for the virtual board.

use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use snlforge_core::fixed::quantize_raw;
use snlforge_core::sim::WeightWrite;
use snlforge_core::FixedFormat;
use thiserror::Error;

use crate::protocol::{
    decode_infer_resp, encode_words, encode_writes, Frame, FrameReader, FrameType, Info, PayloadError, ReadEvent,
};

/// Register writes per WRITE_REG frame.
pub const WRITES_PER_FRAME: usize = 4096;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Closed,
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("unexpected reply: {0}")]
    Protocol(String),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

pub struct Client {
    stream: TcpStream,
    reader: FrameReader<TcpStream>,
    info: Info,
    format: FixedFormat,
    timeout: Duration,
}

impl Client {
    /// Connect and fetch the board description.
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_millis(50)))?;
        let reader = FrameReader::new(stream.try_clone()?, timeout);
        let mut client = Client {
            stream,
            reader,
            info: Info {
                model: String::new(),
                precision: String::new(),
                words: 0,
                n_in: 0,
                n_out: 0,
            },
            format: FixedFormat::new(8, 3).expect("valid"),
            timeout,
        };
        let reply = client.request(&Frame::new(FrameType::Info, Vec::new()))?;
        client.info = Info::decode(&expect(reply, FrameType::Info)?.payload)?;
        client.format = client
            .info
            .precision
            .parse()
            .map_err(|e| ClientError::Protocol(format!("bad precision in INFO: {e}")))?;
        Ok(client)
    }

    pub fn info(&self) -> &Info {
        &self.info
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    /// Next frame from the server. Stream-level events other than frames
    /// are protocol errors on the client side.
    pub fn next_frame(&mut self) -> Result<Frame, ClientError> {
        let start = Instant::now();
        loop {
            match self.reader.poll()? {
                ReadEvent::Frame(f) => return Ok(f),
                ReadEvent::Idle if start.elapsed() < self.timeout => continue,
                ReadEvent::Idle => return Err(ClientError::Timeout(self.timeout)),
                ReadEvent::Closed => return Err(ClientError::Closed),
                other => return Err(ClientError::Protocol(format!("{other:?}"))),
            }
        }
    }

    /// Send one frame and return the reply as is, ERROR frames included.
    pub fn request(&mut self, frame: &Frame) -> Result<Frame, ClientError> {
        self.send_raw(&frame.encode())?;
        self.next_frame()
    }

    pub fn ping(&mut self, payload: &[u8]) -> Result<Vec<u8>, ClientError> {
        let reply = self.request(&Frame::new(FrameType::Ping, payload.to_vec()))?;
        Ok(expect(reply, FrameType::Ack)?.payload)
    }

    /// Write registers in frames of [`WRITES_PER_FRAME`]; returns the total
    /// acknowledged count.
    pub fn write_regs(&mut self, writes: &[WeightWrite]) -> Result<u64, ClientError> {
        let mut acked = 0;
        for chunk in writes.chunks(WRITES_PER_FRAME) {
            let reply = self.request(&Frame::new(FrameType::WriteReg, encode_writes(chunk, self.format)))?;
            let ack = expect(reply, FrameType::Ack)?;
            let count: [u8; 4] = ack
                .payload
                .as_slice()
                .try_into()
                .map_err(|_| ClientError::Protocol("ACK without a count".into()))?;
            acked += u64::from(u32::from_le_bytes(count));
        }
        Ok(acked)
    }

    /// Write a full register image from address 0.
    pub fn load_image(&mut self, image: &[i64]) -> Result<u64, ClientError> {
        let writes: Vec<WeightWrite> = image
            .iter()
            .enumerate()
            .map(|(i, &raw)| WeightWrite { address: i as u32, raw })
            .collect();
        self.write_regs(&writes)
    }

    /// One inference on raw input words: `(outputs, latency_cycles)`.
    pub fn infer(&mut self, input: &[i64]) -> Result<(Vec<i64>, u64), ClientError> {
        let reply = self.request(&Frame::new(FrameType::InferReq, encode_words(input, self.format)))?;
        let resp = expect(reply, FrameType::InferResp)?;
        Ok(decode_infer_resp(&resp.payload, self.format)?)
    }

    pub fn infer_f64(&mut self, input: &[f64]) -> Result<(Vec<i64>, u64), ClientError> {
        let raw: Vec<i64> = input.iter().map(|&v| quantize_raw(v, self.format)).collect();
        self.infer(&raw)
    }
}

fn expect(frame: Frame, kind: FrameType) -> Result<Frame, ClientError> {
    if let Some((code, message)) = frame.as_error() {
        return Err(ClientError::Server { code, message });
    }
    if frame.frame_type() != Some(kind) {
        return Err(ClientError::Protocol(format!(
            "expected {kind:?}, got type 0x{:02x}",
            frame.kind
        )));
    }
    Ok(frame)
}
