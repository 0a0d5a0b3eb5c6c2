//! Framed wire protocol of the virtual board.
//!
//! Every frame is `"SNLX" | type: u8 | length: u32 LE | payload`. Integers
//! are little-endian. A data word is a raw fixed-point value stored in
//! `ceil(X / 8)` bytes, two's complement.
//!
//! | type | name      | payload                                                    |
//! |------|-----------|------------------------------------------------------------|
//! | 0x01 | WRITE_REG | repeated `address: u32, word`                              |
//! | 0x02 | INFER_REQ | `n_in` words                                               |
//! | 0x03 | INFER_RESP| `n_out` words, `latency_cycles: u64`                       |
//! | 0x04 | ACK       | WRITE_REG: `count: u32`; PING: the echoed payload          |
//! | 0x05 | ERROR     | `code: u16`, UTF-8 message                                 |
//! | 0x06 | PING      | any bytes                                                  |
//! | 0x07 | INFO      | request: empty; reply: see [`Info`]                        |
//!
//! Bytes that do not start a frame are skipped up to the next `"SNLX"`.

use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use snlforge_core::sim::WeightWrite;
use snlforge_core::FixedFormat;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SNLX";
pub const HEADER_LEN: usize = 9;
/// Frames declaring a longer payload are rejected.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    WriteReg = 0x01,
    InferReq = 0x02,
    InferResp = 0x03,
    Ack = 0x04,
    Error = 0x05,
    Ping = 0x06,
    Info = 0x07,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => FrameType::WriteReg,
            0x02 => FrameType::InferReq,
            0x03 => FrameType::InferResp,
            0x04 => FrameType::Ack,
            0x05 => FrameType::Error,
            0x06 => FrameType::Ping,
            0x07 => FrameType::Info,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    /// Truncated frame, stray bytes or a payload that does not parse.
    Malformed = 1,
    AddressOutOfRange = 2,
    WeightsNotLoaded = 3,
    UnknownType = 4,
    /// Well-formed payload with the wrong element count or an out-of-range word.
    BadPayload = 5,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            1 => ErrorCode::Malformed,
            2 => ErrorCode::AddressOutOfRange,
            3 => ErrorCode::WeightsNotLoaded,
            4 => ErrorCode::UnknownType,
            5 => ErrorCode::BadPayload,
            _ => return None,
        })
    }
}

/// A frame with its raw type byte, which may be unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Frame {
            kind: kind as u8,
            payload,
        }
    }

    pub fn frame_type(&self) -> Option<FrameType> {
        FrameType::from_byte(self.kind)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.kind);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn error(code: ErrorCode, message: &str) -> Self {
        let mut payload = (code as u16).to_le_bytes().to_vec();
        payload.extend_from_slice(message.as_bytes());
        Frame::new(FrameType::Error, payload)
    }

    /// `(code, message)` of an ERROR frame.
    pub fn as_error(&self) -> Option<(u16, String)> {
        if self.frame_type() != Some(FrameType::Error) || self.payload.len() < 2 {
            return None;
        }
        let code = u16::from_le_bytes([self.payload[0], self.payload[1]]);
        Some((code, String::from_utf8_lossy(&self.payload[2..]).into_owned()))
    }
}

/// What the reader found next on the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadEvent {
    Frame(Frame),
    /// Bytes discarded while looking for the next frame start.
    Skipped(usize),
    /// A header declared a payload above [`MAX_PAYLOAD`]; its magic was dropped.
    Oversize(u32),
    /// A partial frame was dropped after the peer went quiet or closed.
    Truncated(usize),
    /// No complete frame yet (read timeout).
    Idle,
    Closed,
}

/// Incremental frame reader with resynchronization.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    last_progress: Instant,
    frame_timeout: Duration,
    closed: bool,
}

impl<R: Read> FrameReader<R> {
    /// `frame_timeout` bounds how long a partial frame may wait for the rest
    /// of its bytes; it only takes effect if `inner` has a read timeout.
    pub fn new(inner: R, frame_timeout: Duration) -> Self {
        FrameReader {
            inner,
            buf: Vec::new(),
            last_progress: Instant::now(),
            frame_timeout,
            closed: false,
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    pub fn poll(&mut self) -> io::Result<ReadEvent> {
        let mut chunk = [0u8; 8192];
        loop {
            if let Some(event) = self.parse_buffered() {
                return Ok(event);
            }
            if self.closed {
                return Ok(ReadEvent::Closed);
            }
            match self.inner.read(&mut chunk) {
                Ok(0) => {
                    self.closed = true;
                    if !self.buf.is_empty() {
                        let n = self.buf.len();
                        self.buf.clear();
                        return Ok(ReadEvent::Truncated(n));
                    }
                    return Ok(ReadEvent::Closed);
                }
                Ok(n) => {
                    self.buf.extend_from_slice(&chunk[..n]);
                    self.last_progress = Instant::now();
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if !self.buf.is_empty() && self.last_progress.elapsed() >= self.frame_timeout {
                        let n = self.buf.len();
                        self.buf.clear();
                        return Ok(ReadEvent::Truncated(n));
                    }
                    return Ok(ReadEvent::Idle);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }

    /// Blocks through idle ticks until a frame or a stream event arrives.
    pub fn next_event(&mut self) -> io::Result<ReadEvent> {
        loop {
            match self.poll()? {
                ReadEvent::Idle => continue,
                other => return Ok(other),
            }
        }
    }

    fn parse_buffered(&mut self) -> Option<ReadEvent> {
        if self.buf.is_empty() {
            return None;
        }
        if !self.buf.starts_with(&MAGIC) {
            let start = self
                .buf
                .windows(MAGIC.len())
                .position(|w| w == MAGIC)
                .unwrap_or_else(|| {
                    // Keep a tail that could still grow into the magic.
                    let keep = (1..MAGIC.len())
                        .rev()
                        .find(|&k| self.buf.len() >= k && self.buf.ends_with(&MAGIC[..k]))
                        .unwrap_or(0);
                    self.buf.len() - keep
                });
            if start == 0 {
                return None;
            }
            self.buf.drain(..start);
            return Some(ReadEvent::Skipped(start));
        }
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        let len = u32::from_le_bytes([self.buf[5], self.buf[6], self.buf[7], self.buf[8]]);
        if len > MAX_PAYLOAD {
            self.buf.drain(..MAGIC.len());
            return Some(ReadEvent::Oversize(len));
        }
        let total = HEADER_LEN + len as usize;
        if self.buf.len() < total {
            return None;
        }
        let kind = self.buf[4];
        let payload = self.buf[HEADER_LEN..total].to_vec();
        self.buf.drain(..total);
        Some(ReadEvent::Frame(Frame { kind, payload }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("payload of {len} bytes is not a whole number of {unit}-byte records")]
    Length { len: usize, unit: usize },
    #[error("word {value} does not fit {bits} bits")]
    Range { value: i64, bits: u32 },
    #[error("payload truncated")]
    Truncated,
    #[error("invalid UTF-8 in payload")]
    Utf8,
}

fn encode_word(out: &mut Vec<u8>, raw: i64, bytes: usize) {
    out.extend_from_slice(&raw.to_le_bytes()[..bytes]);
}

fn decode_word(bytes: &[u8], format: FixedFormat) -> Result<i64, PayloadError> {
    let mut full = [0u8; 8];
    full[..bytes.len()].copy_from_slice(bytes);
    let shift = 64 - 8 * bytes.len() as u32;
    let value = (i64::from_le_bytes(full) << shift) >> shift;
    if !format.contains_raw(value) {
        return Err(PayloadError::Range {
            value,
            bits: format.total_bits(),
        });
    }
    Ok(value)
}

pub fn encode_words(words: &[i64], format: FixedFormat) -> Vec<u8> {
    let wb = format.wire_bytes();
    let mut out = Vec::with_capacity(words.len() * wb);
    for &w in words {
        encode_word(&mut out, w, wb);
    }
    out
}

pub fn decode_words(bytes: &[u8], format: FixedFormat) -> Result<Vec<i64>, PayloadError> {
    let wb = format.wire_bytes();
    if bytes.len() % wb != 0 {
        return Err(PayloadError::Length {
            len: bytes.len(),
            unit: wb,
        });
    }
    bytes.chunks_exact(wb).map(|c| decode_word(c, format)).collect()
}

pub fn encode_writes(writes: &[WeightWrite], format: FixedFormat) -> Vec<u8> {
    let wb = format.wire_bytes();
    let mut out = Vec::with_capacity(writes.len() * (4 + wb));
    for w in writes {
        out.extend_from_slice(&w.address.to_le_bytes());
        encode_word(&mut out, w.raw, wb);
    }
    out
}

pub fn decode_writes(bytes: &[u8], format: FixedFormat) -> Result<Vec<WeightWrite>, PayloadError> {
    let unit = 4 + format.wire_bytes();
    if bytes.len() % unit != 0 {
        return Err(PayloadError::Length { len: bytes.len(), unit });
    }
    bytes
        .chunks_exact(unit)
        .map(|c| {
            Ok(WeightWrite {
                address: u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                raw: decode_word(&c[4..], format)?,
            })
        })
        .collect()
}

pub fn encode_infer_resp(outputs: &[i64], latency_cycles: u64, format: FixedFormat) -> Vec<u8> {
    let mut out = encode_words(outputs, format);
    out.extend_from_slice(&latency_cycles.to_le_bytes());
    out
}

pub fn decode_infer_resp(bytes: &[u8], format: FixedFormat) -> Result<(Vec<i64>, u64), PayloadError> {
    if bytes.len() < 8 {
        return Err(PayloadError::Truncated);
    }
    let (words, latency) = bytes.split_at(bytes.len() - 8);
    let latency = u64::from_le_bytes(latency.try_into().expect("8 bytes"));
    Ok((decode_words(words, format)?, latency))
}

/// Self-description returned for an INFO request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Info {
    pub model: String,
    /// Precision string, e.g. `16:6`.
    pub precision: String,
    pub words: u32,
    pub n_in: u32,
    pub n_out: u32,
}

impl Info {
    /// `name_len: u16, name, prec_len: u16, precision, words: u32, n_in: u32, n_out: u32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in [&self.model, &self.precision] {
            out.extend_from_slice(&(s.len() as u16).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for v in [self.words, self.n_in, self.n_out] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut cur = Cursor(bytes);
        let model = cur.string()?;
        let precision = cur.string()?;
        Ok(Info {
            model,
            precision,
            words: cur.u32()?,
            n_in: cur.u32()?,
            n_out: cur.u32()?,
        })
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.0.len() < n {
            return Err(PayloadError::Truncated);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, PayloadError> {
        let len = self.take(2)?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| PayloadError::Utf8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> FixedFormat {
        s.parse().unwrap()
    }

    fn read_all(bytes: &[u8]) -> Vec<ReadEvent> {
        let mut r = FrameReader::new(bytes, Duration::from_millis(10));
        let mut events = Vec::new();
        loop {
            match r.poll().unwrap() {
                ReadEvent::Closed => return events,
                e => events.push(e),
            }
        }
    }

    #[test]
    fn frame_round_trip() {
        let frame = Frame::new(FrameType::Ping, b"hello".to_vec());
        let bytes = frame.encode();
        assert_eq!(&bytes[..9], b"SNLX\x06\x05\x00\x00\x00");
        assert_eq!(read_all(&bytes), vec![ReadEvent::Frame(frame)]);
    }

    #[test]
    fn resync_after_garbage() {
        let ping = Frame::new(FrameType::Ping, vec![1]);
        let mut bytes = b"xxSNxSN".to_vec();
        bytes.extend(ping.encode());
        assert_eq!(read_all(&bytes), vec![ReadEvent::Skipped(7), ReadEvent::Frame(ping)]);
    }

    #[test]
    fn truncated_and_oversize() {
        let bytes = Frame::new(FrameType::Ping, vec![1, 2, 3]).encode();
        assert_eq!(read_all(&bytes[..10]), vec![ReadEvent::Truncated(10)]);
        let mut big = b"SNLX\x06".to_vec();
        big.extend_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(
            read_all(&big),
            vec![ReadEvent::Oversize(u32::MAX), ReadEvent::Skipped(5)]
        );
    }

    #[test]
    fn words_sign_extend() {
        let fmt = f("12:4");
        let words = [-2048, 2047, -1, 0, 5];
        let bytes = encode_words(&words, fmt);
        assert_eq!(bytes.len(), 10);
        assert_eq!(decode_words(&bytes, fmt).unwrap(), words);
        assert!(matches!(
            decode_words(&[0xff, 0x0f], fmt),
            Err(PayloadError::Range { .. })
        ));
        assert!(matches!(decode_words(&[0], fmt), Err(PayloadError::Length { .. })));
        let fmt = f("64:32");
        assert_eq!(
            decode_words(&encode_words(&[i64::MIN, i64::MAX], fmt), fmt).unwrap(),
            [i64::MIN, i64::MAX]
        );
    }

    #[test]
    fn writes_and_info() {
        let fmt = f("8:3");
        let writes = [
            WeightWrite { address: 7, raw: -3 },
            WeightWrite {
                address: 70000,
                raw: 127,
            },
        ];
        assert_eq!(decode_writes(&encode_writes(&writes, fmt), fmt).unwrap(), writes);
        let info = Info {
            model: "jet".into(),
            precision: "16:6".into(),
            words: 4389,
            n_in: 16,
            n_out: 5,
        };
        assert_eq!(Info::decode(&info.encode()).unwrap(), info);
        assert_eq!(Info::decode(&info.encode()[..5]), Err(PayloadError::Truncated));
        let (w, lat) = decode_infer_resp(&encode_infer_resp(&[1, -1], 89, fmt), fmt).unwrap();
        assert_eq!((w, lat), (vec![1, -1], 89));
    }

    #[test]
    fn error_frames() {
        let e = Frame::error(ErrorCode::AddressOutOfRange, "address 9 >= 4");
        assert_eq!(e.as_error(), Some((2, "address 9 >= 4".to_string())));
        assert_eq!(Frame::new(FrameType::Ack, vec![]).as_error(), None);
    }
}
