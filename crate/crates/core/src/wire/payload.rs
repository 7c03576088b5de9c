use bytes::{BufMut, Bytes};

use super::frame::{DecodeError, Opcode, WireRequest};
use crate::model::{Label, LabelKind, MetadataRecord, SampleId, SampleRecord};

/// A request with its payload decoded.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Get { table: String, id: SampleId },
    Put { table: String, record: SampleRecord },
    /// `table` is the data table; the metadata table travels in the payload.
    PutAtomic { table: String, meta_table: String, record: SampleRecord, meta: MetadataRecord },
    ListIds { table: String },
    GetMeta { table: String, id: SampleId },
    Ping,
}

impl Request {
    pub fn opcode(&self) -> Opcode {
        match self {
            Self::Get { .. } => Opcode::Get,
            Self::Put { .. } => Opcode::Put,
            Self::PutAtomic { .. } => Opcode::PutAtomic,
            Self::ListIds { .. } => Opcode::ListIds,
            Self::GetMeta { .. } => Opcode::GetMeta,
            Self::Ping => Opcode::Ping,
        }
    }

    pub fn to_wire(&self, request_id: u64) -> WireRequest {
        let mut p = Vec::new();
        let table = match self {
            Self::Get { table, id } | Self::GetMeta { table, id } => {
                p.extend_from_slice(id.as_bytes());
                table.clone()
            }
            Self::Put { table, record } => {
                put_record(&mut p, record);
                table.clone()
            }
            Self::PutAtomic { table, meta_table, record, meta } => {
                put_str16(&mut p, meta_table);
                put_record(&mut p, record);
                put_metadata(&mut p, meta);
                table.clone()
            }
            Self::ListIds { table } => table.clone(),
            Self::Ping => String::new(),
        };
        WireRequest { request_id, opcode: self.opcode(), table, payload: p.into() }
    }

    pub fn from_wire(req: &WireRequest) -> Result<Self, DecodeError> {
        let mut c = Cursor::new(&req.payload);
        let table = req.table.clone();
        let out = match req.opcode {
            Opcode::Get => Self::Get { table, id: c.id()? },
            Opcode::GetMeta => Self::GetMeta { table, id: c.id()? },
            Opcode::Put => Self::Put { table, record: c.record()? },
            Opcode::PutAtomic => {
                let meta_table = c.str16()?;
                let record = c.record()?;
                let meta = c.metadata()?;
                Self::PutAtomic { table, meta_table, record, meta }
            }
            Opcode::ListIds => Self::ListIds { table },
            Opcode::Ping => Self::Ping,
        };
        c.finish()?;
        Ok(out)
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    assert!(s.len() <= u16::MAX as usize, "string field too long");
    out.put_u16_le(s.len() as u16);
    out.extend_from_slice(s.as_bytes());
}

fn put_record(out: &mut Vec<u8>, rec: &SampleRecord) {
    out.extend_from_slice(rec.id.as_bytes());
    put_sample_body(out, &rec.label, &rec.data);
}

/// `label_kind u8 | label_len u32 | label | data_len u32 | data`.
pub fn put_sample_body(out: &mut Vec<u8>, label: &Label, data: &[u8]) {
    out.put_u8(label.kind() as u8);
    match label {
        Label::IntClass(v) => {
            out.put_u32_le(4);
            out.put_i32_le(*v);
        }
        Label::Blob(b) => {
            out.put_u32_le(b.len() as u32);
            out.extend_from_slice(b);
        }
    }
    out.put_u32_le(data.len() as u32);
    out.extend_from_slice(data);
}

/// Encoded size of a GET response payload.
pub fn sample_payload_len(label: &Label, data: &[u8]) -> usize {
    let label_len = match label {
        Label::IntClass(_) => 4,
        Label::Blob(b) => b.len(),
    };
    1 + 4 + label_len + 4 + data.len()
}

/// Payload of a successful GET response.
pub fn encode_sample_payload(label: &Label, data: &[u8]) -> Bytes {
    let mut out = Vec::with_capacity(13 + data.len());
    put_sample_body(&mut out, label, data);
    out.into()
}

/// Inverse of [`encode_sample_payload`]. `data` shares the payload buffer.
pub fn decode_sample_payload(payload: &Bytes) -> Result<(Label, Bytes), DecodeError> {
    let mut c = Cursor::new(payload);
    let out = c.sample_body()?;
    c.finish()?;
    Ok(out)
}

pub fn put_metadata(out: &mut Vec<u8>, m: &MetadataRecord) {
    out.extend_from_slice(m.id.as_bytes());
    put_str16(out, &m.entity_id);
    put_str16(out, &m.group_key);
    out.put_i32_le(m.coord_x);
    out.put_i32_le(m.coord_y);
    out.put_i32_le(m.class_label);
}

pub fn encode_metadata_payload(m: &MetadataRecord) -> Bytes {
    let mut out = Vec::new();
    put_metadata(&mut out, m);
    out.into()
}

pub fn decode_metadata_payload(payload: &Bytes) -> Result<MetadataRecord, DecodeError> {
    let mut c = Cursor::new(payload);
    let m = c.metadata()?;
    c.finish()?;
    Ok(m)
}

/// `count u32 | count × 16-byte id`.
pub fn encode_id_list(ids: &[SampleId]) -> Bytes {
    let mut out = Vec::with_capacity(4 + ids.len() * 16);
    out.put_u32_le(ids.len() as u32);
    for id in ids {
        out.extend_from_slice(id.as_bytes());
    }
    out.into()
}

pub fn decode_id_list(payload: &Bytes) -> Result<Vec<SampleId>, DecodeError> {
    let mut c = Cursor::new(payload);
    let n = c.u32()? as usize;
    if n.checked_mul(16) != Some(payload.len() - 4) {
        return Err(DecodeError::BadPayload(format!("id list of {n} entries has {} bytes", payload.len() - 4)));
    }
    let ids = (0..n).map(|_| c.id()).collect::<Result<_, _>>()?;
    c.finish()?;
    Ok(ids)
}

struct Cursor<'a> {
    buf: &'a Bytes,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a Bytes) -> Self {
        Self { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<Bytes, DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            DecodeError::BadPayload(format!("need {n} bytes at offset {}, have {}", self.pos, self.buf.len()))
        })?;
        let out = self.buf.slice(self.pos..end);
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.bytes(N)?[..].try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, DecodeError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn id(&mut self) -> Result<SampleId, DecodeError> {
        Ok(SampleId::from_bytes(self.array()?))
    }

    fn str16(&mut self) -> Result<String, DecodeError> {
        let n = self.u16()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| DecodeError::BadPayload("string field is not utf-8".into()))
    }

    fn sample_body(&mut self) -> Result<(Label, Bytes), DecodeError> {
        let kind = self.u8()?;
        let label_len = self.u32()? as usize;
        let label = match LabelKind::from_u8(kind) {
            Some(LabelKind::IntClass) => {
                if label_len != 4 {
                    return Err(DecodeError::BadPayload(format!("integer label of length {label_len}")));
                }
                Label::IntClass(self.i32()?)
            }
            Some(LabelKind::Blob) => Label::Blob(self.bytes(label_len)?),
            None => return Err(DecodeError::BadPayload(format!("unknown label kind {kind}"))),
        };
        let data_len = self.u32()? as usize;
        Ok((label, self.bytes(data_len)?))
    }

    fn record(&mut self) -> Result<SampleRecord, DecodeError> {
        let id = self.id()?;
        let (label, data) = self.sample_body()?;
        SampleRecord::new(id, label, data).map_err(|e| DecodeError::BadPayload(e.to_string()))
    }

    fn metadata(&mut self) -> Result<MetadataRecord, DecodeError> {
        Ok(MetadataRecord {
            id: self.id()?,
            entity_id: self.str16()?,
            group_key: self.str16()?,
            coord_x: self.i32()?,
            coord_y: self.i32()?,
            class_label: self.i32()?,
        })
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(DecodeError::BadPayload(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}
