use std::time::Duration;

use bytes::Bytes;
use rayon::prelude::*;

use super::{Label, SampleId};

/// Copies below this many bytes are done on the calling thread.
const PARALLEL_COPY_MIN_BYTES: usize = 1 << 20;

/// Identifies one planned batch request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BatchTag {
    pub epoch: u64,
    pub seq: u64,
}

impl BatchTag {
    pub fn new(epoch: u64, seq: u64) -> Self {
        Self { epoch, seq }
    }
}

/// One item as delivered by the store: label and data from a single response.
#[derive(Clone, Debug, PartialEq)]
pub struct FetchedItem {
    pub id: SampleId,
    pub label: Label,
    pub data: Bytes,
    /// Connection that carried the response.
    pub conn: usize,
    /// Arrival time on the fetcher's clock.
    pub arrived_at: Duration,
}

/// Directory entry of a [`BatchBuffer`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEntry {
    pub id: SampleId,
    pub label: Label,
    pub offset: usize,
    pub len: usize,
    pub conn: usize,
    pub arrived_at: Duration,
}

/// Borrowed view of one item in a [`BatchBuffer`].
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub id: SampleId,
    pub label: &'a Label,
    pub data: &'a [u8],
}

/// Item payloads packed into one allocation, with a directory of disjoint
/// `(offset, len)` ranges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchBuffer {
    storage: Vec<u8>,
    directory: Vec<BatchEntry>,
}

impl BatchBuffer {
    /// Allocates once and copies all items in, concurrently for large batches.
    pub fn assemble(items: &[FetchedItem]) -> Self {
        let mut directory = Vec::with_capacity(items.len());
        let mut offset = 0;
        for it in items {
            directory.push(BatchEntry {
                id: it.id,
                label: it.label.clone(),
                offset,
                len: it.data.len(),
                conn: it.conn,
                arrived_at: it.arrived_at,
            });
            offset += it.data.len();
        }
        let mut storage = vec![0u8; offset];

        let mut slots: Vec<&mut [u8]> = Vec::with_capacity(items.len());
        let mut rest = storage.as_mut_slice();
        for it in items {
            let (head, tail) = rest.split_at_mut(it.data.len());
            slots.push(head);
            rest = tail;
        }
        if offset >= PARALLEL_COPY_MIN_BYTES {
            slots
                .into_par_iter()
                .zip(items.par_iter())
                .for_each(|(dst, it)| dst.copy_from_slice(&it.data));
        } else {
            for (dst, it) in slots.into_iter().zip(items) {
                dst.copy_from_slice(&it.data);
            }
        }
        Self { storage, directory }
    }

    pub fn len(&self) -> usize {
        self.directory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directory.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.storage.len()
    }

    pub fn storage(&self) -> &[u8] {
        &self.storage
    }

    pub fn directory(&self) -> &[BatchEntry] {
        &self.directory
    }

    pub fn item(&self, i: usize) -> BatchItem<'_> {
        let e = &self.directory[i];
        BatchItem {
            id: e.id,
            label: &e.label,
            data: &self.storage[e.offset..e.offset + e.len],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = BatchItem<'_>> {
        (0..self.len()).map(move |i| self.item(i))
    }
}

/// A batch handed to the consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub epoch_index: u64,
    pub sequence_index: u64,
    pub buffer: BatchBuffer,
    /// Time the consumer waited for this batch to complete.
    pub assembly_time: Duration,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn ids(&self) -> Vec<SampleId> {
        self.buffer.directory().iter().map(|e| e.id).collect()
    }

    pub fn items(&self) -> impl Iterator<Item = BatchItem<'_>> {
        self.buffer.iter()
    }

    pub fn total_bytes(&self) -> usize {
        self.buffer.total_bytes()
    }

    /// Sum of [`item_checksum`] over the batch, wrapping.
    pub fn checksum(&self) -> u64 {
        self.items()
            .map(|it| u64::from(item_checksum(&it.id, it.label, it.data)))
            .fold(0u64, u64::wrapping_add)
    }
}

/// CRC-32 over id, label and data.
pub fn item_checksum(id: &SampleId, label: &Label, data: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(id.as_bytes());
    h.update(&[label.kind() as u8]);
    match label {
        Label::IntClass(v) => h.update(&v.to_le_bytes()),
        Label::Blob(b) => h.update(b),
    }
    h.update(data);
    h.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(n: u8, len: usize) -> FetchedItem {
        FetchedItem {
            id: SampleId::from_bytes([n; 16]),
            label: Label::IntClass(i32::from(n)),
            data: Bytes::from(vec![n; len]),
            conn: 0,
            arrived_at: Duration::ZERO,
        }
    }

    #[test]
    fn assemble_preserves_order_and_content() {
        let items: Vec<_> = (1..=5).map(|n| item(n, n as usize * 3)).collect();
        let buf = BatchBuffer::assemble(&items);
        assert_eq!(buf.len(), 5);
        assert_eq!(buf.total_bytes(), 3 * (1 + 2 + 3 + 4 + 5));
        for (i, it) in buf.iter().enumerate() {
            assert_eq!(it.id, items[i].id);
            assert_eq!(it.data, &items[i].data[..]);
            assert_eq!(*it.label, items[i].label);
        }
    }

    #[test]
    fn directory_ranges_are_disjoint_and_cover_storage() {
        let items: Vec<_> = (0..64).map(|n| item(n, 40_000 + n as usize)).collect();
        let buf = BatchBuffer::assemble(&items);
        assert!(buf.total_bytes() >= PARALLEL_COPY_MIN_BYTES);
        let mut end = 0;
        for e in buf.directory() {
            assert_eq!(e.offset, end);
            end += e.len;
        }
        assert_eq!(end, buf.total_bytes());
        for (i, it) in buf.iter().enumerate() {
            assert!(it.data.iter().all(|&b| b == i as u8));
        }
    }

    #[test]
    fn checksum_depends_on_label_and_data() {
        let id = SampleId::from_bytes([7; 16]);
        let a = item_checksum(&id, &Label::IntClass(1), b"abc");
        assert_ne!(a, item_checksum(&id, &Label::IntClass(2), b"abc"));
        assert_ne!(a, item_checksum(&id, &Label::IntClass(1), b"abd"));
        assert_ne!(a, item_checksum(&id, &Label::Blob(Bytes::from_static(b"\x01\0\0\0")), b"abc"));
    }

    #[test]
    fn batch_checksum_is_order_independent() {
        let items: Vec<_> = (1..=4).map(|n| item(n, 10)).collect();
        let mut rev = items.clone();
        rev.reverse();
        let mk = |v: &[FetchedItem]| Batch {
            epoch_index: 0,
            sequence_index: 0,
            buffer: BatchBuffer::assemble(v),
            assembly_time: Duration::ZERO,
        };
        assert_eq!(mk(&items).checksum(), mk(&rev).checksum());
    }
}
