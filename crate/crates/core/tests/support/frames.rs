//! Golden frame corpus and an independent byte-layout builder for it.

use netloader::model::{Label, MetadataRecord, SampleId, SampleRecord};
use netloader::wire::{
    encode_id_list, encode_metadata_payload, encode_request, encode_response, encode_sample_payload,
    Request, Status, WireResponse,
};

pub const GOLDEN_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/frames.hex");

fn id(n: u8) -> SampleId {
    let mut b = [0u8; 16];
    for (i, x) in b.iter_mut().enumerate() {
        *x = n.wrapping_mul(17).wrapping_add(i as u8);
    }
    b[6] = (b[6] & 0x0f) | 0x40;
    b[8] = (b[8] & 0x3f) | 0x80;
    SampleId::from_bytes(b)
}

fn meta(n: u8) -> MetadataRecord {
    MetadataRecord {
        id: id(n),
        entity_id: format!("patient-{n}"),
        group_key: "slide-3".into(),
        coord_x: -12,
        coord_y: 4096,
        class_label: 2,
    }
}

/// Hand-assembled little-endian frame, written field by field without the
/// crate's encoder.
struct Hand(Vec<u8>);

impl Hand {
    fn frame(request_id: u64, code: u8, table: &str, payload: &[u8]) -> Vec<u8> {
        let body_len = 8 + 1 + 2 + table.len() + 4 + payload.len();
        let mut v = vec![b'O', b'O', b'L', b'1'];
        for i in 0..4 {
            v.push((body_len >> (8 * i)) as u8);
        }
        for i in 0..8 {
            v.push((request_id >> (8 * i)) as u8);
        }
        v.push(code);
        v.push(table.len() as u8);
        v.push((table.len() >> 8) as u8);
        v.extend(table.bytes());
        for i in 0..4 {
            v.push((payload.len() >> (8 * i)) as u8);
        }
        v.extend_from_slice(payload);
        v
    }

    fn new() -> Self {
        Hand(Vec::new())
    }
    fn u8(mut self, x: u8) -> Self {
        self.0.push(x);
        self
    }
    fn u16(mut self, x: u16) -> Self {
        self.0.extend([x as u8, (x >> 8) as u8]);
        self
    }
    fn u32(mut self, x: u32) -> Self {
        self.0.extend([x as u8, (x >> 8) as u8, (x >> 16) as u8, (x >> 24) as u8]);
        self
    }
    fn raw(mut self, b: &[u8]) -> Self {
        self.0.extend_from_slice(b);
        self
    }
    fn str16(self, s: &str) -> Self {
        self.u16(s.len() as u16).raw(s.as_bytes())
    }
    fn int_sample(self, class: i32, data: &[u8]) -> Self {
        self.u8(1).u32(4).u32(class as u32).u32(data.len() as u32).raw(data)
    }
    fn blob_sample(self, label: &[u8], data: &[u8]) -> Self {
        self.u8(2).u32(label.len() as u32).raw(label).u32(data.len() as u32).raw(data)
    }
    fn meta(self, m: &MetadataRecord) -> Self {
        self.raw(m.id.as_bytes())
            .str16(&m.entity_id)
            .str16(&m.group_key)
            .u32(m.coord_x as u32)
            .u32(m.coord_y as u32)
            .u32(m.class_label as u32)
    }
}

pub struct GoldenFrame {
    pub name: &'static str,
    /// Output of the crate's encoder.
    pub encoded: Vec<u8>,
    /// Independent hand layout of the same message.
    pub hand: Vec<u8>,
    pub is_request: bool,
}

fn req(name: &'static str, rid: u64, r: Request, hand: Vec<u8>) -> GoldenFrame {
    GoldenFrame { name, encoded: encode_request(&r.to_wire(rid)), hand, is_request: true }
}

fn resp(name: &'static str, r: WireResponse, hand: Vec<u8>) -> GoldenFrame {
    GoldenFrame { name, encoded: encode_response(&r), hand, is_request: false }
}

fn rec(n: u8, label: Label, data: &[u8]) -> SampleRecord {
    SampleRecord::new(id(n), label, data.to_vec()).unwrap()
}

pub fn corpus() -> Vec<GoldenFrame> {
    let big: Vec<u8> = (0..=255u8).collect();
    let ids3 = [id(1), id(2), id(3)];
    let mut ids3_hand = Hand::new().u32(3);
    for i in &ids3 {
        ids3_hand = ids3_hand.raw(i.as_bytes());
    }
    vec![
        req("ping_request", 1, Request::Ping, Hand::frame(1, 6, "", &[])),
        resp("ping_ok", WireResponse::ok(1, vec![]), Hand::frame(1, 0, "", &[])),
        req(
            "get_request",
            2,
            Request::Get { table: "imagenet.data".into(), id: id(1) },
            Hand::frame(2, 1, "imagenet.data", id(1).as_bytes()),
        ),
        resp(
            "get_ok_class7_abc",
            WireResponse::ok(2, encode_sample_payload(&Label::IntClass(7), b"abc")),
            Hand::frame(2, 0, "", &Hand::new().int_sample(7, b"abc").0),
        ),
        resp(
            "get_ok_blob_label",
            WireResponse::ok(3, encode_sample_payload(&Label::Blob(b"mask".to_vec().into()), b"xyz!")),
            Hand::frame(3, 0, "", &Hand::new().blob_sample(b"mask", b"xyz!").0),
        ),
        resp(
            "get_not_found",
            WireResponse::error(4, Status::NotFound, "no such id"),
            Hand::frame(4, 1, "", b"no such id"),
        ),
        resp(
            "bad_request",
            WireResponse::error(0, Status::BadRequest, "bad magic"),
            Hand::frame(0, 2, "", b"bad magic"),
        ),
        resp(
            "server_error",
            WireResponse::error(5, Status::ServerError, "boom"),
            Hand::frame(5, 3, "", b"boom"),
        ),
        req(
            "put_int_label",
            6,
            Request::Put { table: "ks.data".into(), record: rec(4, Label::IntClass(999), b"\x00\xff\x10") },
            Hand::frame(6, 2, "ks.data", &Hand::new().raw(id(4).as_bytes()).int_sample(999, b"\x00\xff\x10").0),
        ),
        req(
            "put_blob_label",
            7,
            Request::Put { table: "ks.seg".into(), record: rec(5, Label::Blob(vec![9, 8, 7].into()), b"q") },
            Hand::frame(7, 2, "ks.seg", &Hand::new().raw(id(5).as_bytes()).blob_sample(&[9, 8, 7], b"q").0),
        ),
        req(
            "put_atomic",
            8,
            Request::PutAtomic {
                table: "patches.data".into(),
                meta_table: "patches.metadata".into(),
                record: rec(6, Label::IntClass(2), b"tile"),
                meta: meta(6),
            },
            Hand::frame(
                8,
                3,
                "patches.data",
                &Hand::new()
                    .str16("patches.metadata")
                    .raw(id(6).as_bytes())
                    .int_sample(2, b"tile")
                    .meta(&meta(6))
                    .0,
            ),
        ),
        req("list_ids_request", 9, Request::ListIds { table: "ks.data".into() }, Hand::frame(9, 4, "ks.data", &[])),
        resp("list_ids_empty", WireResponse::ok(9, encode_id_list(&[])), Hand::frame(9, 0, "", &[0, 0, 0, 0])),
        resp("list_ids_three", WireResponse::ok(10, encode_id_list(&ids3)), Hand::frame(10, 0, "", &ids3_hand.0)),
        req(
            "get_meta_request",
            11,
            Request::GetMeta { table: "patches.metadata".into(), id: id(6) },
            Hand::frame(11, 5, "patches.metadata", id(6).as_bytes()),
        ),
        resp(
            "get_meta_ok",
            WireResponse::ok(11, encode_metadata_payload(&meta(6))),
            Hand::frame(11, 0, "", &Hand::new().meta(&meta(6)).0),
        ),
        req(
            "get_max_request_id",
            u64::MAX,
            Request::Get { table: "t".into(), id: id(7) },
            Hand::frame(u64::MAX, 1, "t", id(7).as_bytes()),
        ),
        resp(
            "get_ok_empty_blob_label",
            WireResponse::ok(12, encode_sample_payload(&Label::Blob(Default::default()), b"z")),
            Hand::frame(12, 0, "", &Hand::new().blob_sample(&[], b"z").0),
        ),
        req(
            "get_utf8_table",
            13,
            Request::Get { table: "ks.données".into(), id: id(8) },
            Hand::frame(13, 1, "ks.données", id(8).as_bytes()),
        ),
        resp(
            "get_ok_max_class_256b",
            WireResponse::ok(0x0102_0304_0506_0708, encode_sample_payload(&Label::IntClass(i32::MAX), &big)),
            Hand::frame(0x0102_0304_0506_0708, 0, "", &Hand::new().int_sample(i32::MAX, &big).0),
        ),
    ]
}

pub fn to_hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn from_hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

/// `(name, bytes)` pairs from the frozen golden file.
pub fn load_golden() -> Vec<(String, Vec<u8>)> {
    std::fs::read_to_string(GOLDEN_PATH)
        .expect("golden frames file")
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (name, hex) = l.split_once(' ').unwrap();
            (name.to_owned(), from_hex(hex.trim()))
        })
        .collect()
}
