use std::io::{self, Read};

use bytes::Bytes;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"OOL1";
/// Largest accepted `total_len`.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;
/// Magic plus the `total_len` field.
pub const PREFIX_LEN: usize = 8;
/// Fixed part of the body: request id, code, table length, payload length.
const FIXED_BODY: usize = 8 + 1 + 2 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Get = 1,
    Put = 2,
    PutAtomic = 3,
    ListIds = 4,
    GetMeta = 5,
    Ping = 6,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Get,
            2 => Self::Put,
            3 => Self::PutAtomic,
            4 => Self::ListIds,
            5 => Self::GetMeta,
            6 => Self::Ping,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    BadRequest = 2,
    ServerError = 3,
}

impl Status {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Ok,
            1 => Self::NotFound,
            2 => Self::BadRequest,
            3 => Self::ServerError,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireRequest {
    pub request_id: u64,
    pub opcode: Opcode,
    pub table: String,
    pub payload: Bytes,
}

/// Responses are framed like requests with an empty table field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireResponse {
    pub request_id: u64,
    pub status: Status,
    pub payload: Bytes,
}

impl WireResponse {
    pub fn ok(request_id: u64, payload: impl Into<Bytes>) -> Self {
        Self { request_id, status: Status::Ok, payload: payload.into() }
    }

    pub fn error(request_id: u64, status: Status, msg: &str) -> Self {
        Self { request_id, status, payload: Bytes::copy_from_slice(msg.as_bytes()) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("length mismatch: header says {declared}, fields use {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("unknown opcode {0}")]
    BadOpcode(u8),
    #[error("unknown status {0}")]
    BadStatus(u8),
    #[error("table name is not utf-8")]
    BadTable,
    #[error("response carries a table name")]
    UnexpectedTable,
    #[error("malformed payload: {0}")]
    BadPayload(String),
}

fn encode_raw(request_id: u64, code: u8, table: &[u8], payload: &[u8]) -> Vec<u8> {
    assert!(table.len() <= u16::MAX as usize, "table name too long");
    let total = FIXED_BODY + table.len() + payload.len();
    assert!(total <= u32::MAX as usize, "payload too large");
    let mut out = Vec::with_capacity(PREFIX_LEN + total);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&request_id.to_le_bytes());
    out.push(code);
    out.extend_from_slice(&(table.len() as u16).to_le_bytes());
    out.extend_from_slice(table);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn encode_request(req: &WireRequest) -> Vec<u8> {
    encode_raw(req.request_id, req.opcode as u8, req.table.as_bytes(), &req.payload)
}

pub fn encode_response(resp: &WireResponse) -> Vec<u8> {
    encode_raw(resp.request_id, resp.status as u8, &[], &resp.payload)
}

struct RawFields<'a> {
    request_id: u64,
    code: u8,
    table: &'a [u8],
    payload: &'a [u8],
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], DecodeError> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or(DecodeError::Truncated {
        needed: pos.saturating_add(n),
        have: buf.len(),
    })?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

fn decode_raw(frame: &[u8], max_frame: usize) -> Result<RawFields<'_>, DecodeError> {
    let mut pos = 0;
    let magic: [u8; 4] = take(frame, &mut pos, 4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let declared = u32::from_le_bytes(take(frame, &mut pos, 4)?.try_into().unwrap()) as usize;
    if declared > max_frame {
        return Err(DecodeError::TooLarge(declared));
    }
    if frame.len() - PREFIX_LEN != declared {
        if frame.len() - PREFIX_LEN < declared {
            return Err(DecodeError::Truncated { needed: PREFIX_LEN + declared, have: frame.len() });
        }
        return Err(DecodeError::LengthMismatch { declared, actual: frame.len() - PREFIX_LEN });
    }
    let request_id = u64::from_le_bytes(take(frame, &mut pos, 8)?.try_into().unwrap());
    let code = take(frame, &mut pos, 1)?[0];
    let table_len = u16::from_le_bytes(take(frame, &mut pos, 2)?.try_into().unwrap()) as usize;
    let table = take(frame, &mut pos, table_len)?;
    let payload_len = u32::from_le_bytes(take(frame, &mut pos, 4)?.try_into().unwrap()) as usize;
    let payload = take(frame, &mut pos, payload_len)?;
    if pos != frame.len() {
        return Err(DecodeError::LengthMismatch { declared, actual: pos - PREFIX_LEN });
    }
    Ok(RawFields { request_id, code, table, payload })
}

/// Decodes exactly one request frame.
pub fn decode_request(frame: &[u8]) -> Result<WireRequest, DecodeError> {
    decode_request_with_limit(frame, DEFAULT_MAX_FRAME)
}

pub fn decode_request_with_limit(frame: &[u8], max_frame: usize) -> Result<WireRequest, DecodeError> {
    let raw = decode_raw(frame, max_frame)?;
    let opcode = Opcode::from_u8(raw.code).ok_or(DecodeError::BadOpcode(raw.code))?;
    let table = std::str::from_utf8(raw.table).map_err(|_| DecodeError::BadTable)?.to_owned();
    Ok(WireRequest {
        request_id: raw.request_id,
        opcode,
        table,
        payload: Bytes::copy_from_slice(raw.payload),
    })
}

/// Decodes exactly one response frame.
pub fn decode_response(frame: &[u8]) -> Result<WireResponse, DecodeError> {
    decode_response_bytes(Bytes::copy_from_slice(frame))
}

/// Like [`decode_response`], but the payload shares `frame`'s buffer.
pub fn decode_response_bytes(frame: Bytes) -> Result<WireResponse, DecodeError> {
    let (request_id, code, table_len, payload_range) = {
        let raw = decode_raw(&frame, DEFAULT_MAX_FRAME)?;
        let start = raw.payload.as_ptr() as usize - frame.as_ptr() as usize;
        (raw.request_id, raw.code, raw.table.len(), start..start + raw.payload.len())
    };
    let status = Status::from_u8(code).ok_or(DecodeError::BadStatus(code))?;
    if table_len != 0 {
        return Err(DecodeError::UnexpectedTable);
    }
    Ok(WireResponse { request_id, status, payload: frame.slice(payload_range) })
}

/// Best-effort request id of a frame that failed to decode, so the error
/// response can still be matched.
pub fn peek_request_id(frame: &[u8]) -> Option<u64> {
    frame.get(PREFIX_LEN..PREFIX_LEN + 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
}

/// Pulls whole frames off a byte stream.
///
/// Framing only depends on the 8-byte prefix, so a frame with bad magic is
/// still returned intact and left for the decoder to reject.
pub struct FrameReader<R> {
    inner: R,
    max_frame: usize,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_limit(inner, DEFAULT_MAX_FRAME)
    }

    pub fn with_limit(inner: R, max_frame: usize) -> Self {
        Self { inner, max_frame }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// `Ok(None)` on a clean end of stream between frames.
    pub fn read_frame(&mut self) -> Result<Option<Vec<u8>>, ReadError> {
        let mut prefix = [0u8; PREFIX_LEN];
        let mut got = 0;
        while got < PREFIX_LEN {
            match self.inner.read(&mut prefix[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let total = u32::from_le_bytes(prefix[4..8].try_into().unwrap()) as usize;
        if total > self.max_frame {
            return Err(ReadError::TooLarge(total));
        }
        let mut frame = vec![0u8; PREFIX_LEN + total];
        frame[..PREFIX_LEN].copy_from_slice(&prefix);
        self.inner.read_exact(&mut frame[PREFIX_LEN..])?;
        Ok(Some(frame))
    }
}
