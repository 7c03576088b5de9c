//! Proptest strategies for wire messages.

use bytes::Bytes;
use netloader::model::{Label, MetadataRecord, SampleId, SampleRecord};
use netloader::wire::{Request, Status, WireResponse};
use proptest::prelude::*;

pub fn sample_id() -> impl Strategy<Value = SampleId> {
    any::<[u8; 16]>().prop_map(SampleId::from_bytes)
}

pub fn table() -> impl Strategy<Value = String> {
    "[a-z]{1,8}(\\.[a-zé_]{1,12})?"
}

pub fn label() -> impl Strategy<Value = Label> {
    prop_oneof![
        (0..i32::MAX).prop_map(Label::IntClass),
        proptest::collection::vec(any::<u8>(), 0..32).prop_map(|v| Label::Blob(Bytes::from(v))),
    ]
}

pub fn record() -> impl Strategy<Value = SampleRecord> {
    (sample_id(), label(), proptest::collection::vec(any::<u8>(), 1..256))
        .prop_map(|(id, label, data)| SampleRecord::new(id, label, data).unwrap())
}

pub fn metadata() -> impl Strategy<Value = MetadataRecord> {
    (sample_id(), "[ -~]{0,20}", "[ -~]{0,20}", any::<i32>(), any::<i32>(), any::<i32>()).prop_map(
        |(id, entity_id, group_key, coord_x, coord_y, class_label)| MetadataRecord {
            id,
            entity_id,
            group_key,
            coord_x,
            coord_y,
            class_label,
        },
    )
}

pub fn request() -> impl Strategy<Value = Request> {
    prop_oneof![
        (table(), sample_id()).prop_map(|(table, id)| Request::Get { table, id }),
        (table(), record()).prop_map(|(table, record)| Request::Put { table, record }),
        (table(), table(), record(), metadata()).prop_map(|(table, meta_table, record, meta)| {
            Request::PutAtomic { table, meta_table, record, meta }
        }),
        table().prop_map(|table| Request::ListIds { table }),
        (table(), sample_id()).prop_map(|(table, id)| Request::GetMeta { table, id }),
        Just(Request::Ping),
    ]
}

pub fn response() -> impl Strategy<Value = WireResponse> {
    let status = prop_oneof![
        Just(Status::Ok),
        Just(Status::NotFound),
        Just(Status::BadRequest),
        Just(Status::ServerError)
    ];
    (any::<u64>(), status, proptest::collection::vec(any::<u8>(), 0..512))
        .prop_map(|(request_id, status, p)| WireResponse { request_id, status, payload: p.into() })
}
