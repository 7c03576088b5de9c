//! Length-prefixed binary protocol spoken between store and client.
//!
//! Every frame, request or response, is laid out little-endian as
//!
//! ```text
//! "OOL1" | total_len u32 | request_id u64 | opcode/status u8
//!        | table_len u16 | table utf-8 | payload_len u32 | payload
//! ```
//!
//! where `total_len` counts the bytes after itself. Responses carry an empty
//! table. A GET response payload is
//! `label_kind u8 | label_len u32 | label | data_len u32 | data`, with integer
//! labels stored as a 4-byte `i32`.

mod frame;
mod payload;

pub use frame::{
    decode_request, decode_request_with_limit, decode_response, decode_response_bytes, encode_request, encode_response,
    peek_request_id, DecodeError, FrameReader, Opcode, ReadError, Status, WireRequest, WireResponse,
    DEFAULT_MAX_FRAME, MAGIC, PREFIX_LEN,
};
pub use payload::{
    decode_id_list, decode_metadata_payload, decode_sample_payload, encode_id_list,
    encode_metadata_payload, encode_sample_payload, put_metadata, put_sample_body, sample_payload_len, Request,
};
