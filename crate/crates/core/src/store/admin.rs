use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::StoreError;
use crate::model::{MetadataRecord, SampleId, SampleRecord};
use crate::wire::{
    decode_id_list, decode_metadata_payload, decode_response, decode_sample_payload, encode_request, FrameReader,
    ReadError, Request, Status, WireResponse,
};

/// One connection, one request at a time. Used for ingestion, listing and
/// metadata reads, where pipelining buys nothing.
pub struct AdminClient {
    reader: FrameReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl AdminClient {
    pub fn connect(endpoint: &str) -> Result<Self, StoreError> {
        let addrs: Vec<_> = endpoint
            .to_socket_addrs()
            .map_err(|e| StoreError::Connect(format!("{endpoint}: {e}")))?
            .collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, Duration::from_secs(5)) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    let writer = s.try_clone()?;
                    return Ok(Self { reader: FrameReader::new(s), writer, next_id: 1 });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(StoreError::Connect(format!(
            "{endpoint}: {}",
            last.map(|e| e.to_string()).unwrap_or_else(|| "no addresses".into())
        )))
    }

    fn call(&mut self, req: Request) -> Result<WireResponse, StoreError> {
        let rid = self.next_id;
        self.next_id += 1;
        self.writer.write_all(&encode_request(&req.to_wire(rid)))?;
        let frame = match self.reader.read_frame() {
            Ok(Some(f)) => f,
            Ok(None) => return Err(StoreError::Connect("server closed the connection".into())),
            Err(ReadError::Io(e)) => return Err(e.into()),
            Err(e @ ReadError::TooLarge(_)) => return Err(StoreError::Protocol(e.to_string())),
        };
        let resp = decode_response(&frame).map_err(|e| StoreError::Protocol(e.to_string()))?;
        if resp.request_id != rid {
            return Err(StoreError::Protocol(format!("response id {} for request {rid}", resp.request_id)));
        }
        if resp.status != Status::Ok {
            return Err(StoreError::from_response(resp.status, &String::from_utf8_lossy(&resp.payload)));
        }
        Ok(resp)
    }

    pub fn ping(&mut self) -> Result<(), StoreError> {
        self.call(Request::Ping).map(|_| ())
    }

    pub fn get(&mut self, table: &str, id: SampleId) -> Result<SampleRecord, StoreError> {
        let resp = self.call(Request::Get { table: table.into(), id })?;
        let (label, data) = decode_sample_payload(&resp.payload).map_err(|e| StoreError::Protocol(e.to_string()))?;
        SampleRecord::new(id, label, data).map_err(|e| StoreError::Protocol(e.to_string()))
    }

    pub fn put(&mut self, table: &str, record: SampleRecord) -> Result<(), StoreError> {
        self.call(Request::Put { table: table.into(), record }).map(|_| ())
    }

    pub fn put_atomic(
        &mut self,
        data_table: &str,
        meta_table: &str,
        record: SampleRecord,
        meta: MetadataRecord,
    ) -> Result<(), StoreError> {
        super::check_pair(&record, &meta)?;
        self.call(Request::PutAtomic { table: data_table.into(), meta_table: meta_table.into(), record, meta })
            .map(|_| ())
    }

    pub fn list_ids(&mut self, table: &str) -> Result<Vec<SampleId>, StoreError> {
        let resp = self.call(Request::ListIds { table: table.into() })?;
        decode_id_list(&resp.payload).map_err(|e| StoreError::Protocol(e.to_string()))
    }

    pub fn get_metadata(&mut self, table: &str, id: SampleId) -> Result<MetadataRecord, StoreError> {
        let resp = self.call(Request::GetMeta { table: table.into(), id })?;
        decode_metadata_payload(&resp.payload).map_err(|e| StoreError::Protocol(e.to_string()))
    }
}
