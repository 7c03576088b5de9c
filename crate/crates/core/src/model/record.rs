use bytes::Bytes;

use super::{ModelError, SampleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LabelKind {
    IntClass = 1,
    Blob = 2,
}

impl LabelKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::IntClass),
            2 => Some(Self::Blob),
            _ => None,
        }
    }
}

/// Annotation stored next to a sample: a class index or an opaque blob
/// (serialized mask, multi-label tensor, ...).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    IntClass(i32),
    Blob(Bytes),
}

impl Label {
    pub fn kind(&self) -> LabelKind {
        match self {
            Label::IntClass(_) => LabelKind::IntClass,
            Label::Blob(_) => LabelKind::Blob,
        }
    }

    pub fn as_class(&self) -> Option<i32> {
        match self {
            Label::IntClass(c) => Some(*c),
            Label::Blob(_) => None,
        }
    }
}

/// One row of a data table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: SampleId,
    pub label: Label,
    pub data: Bytes,
}

impl SampleRecord {
    pub fn new(id: SampleId, label: Label, data: impl Into<Bytes>) -> Result<Self, ModelError> {
        let data = data.into();
        if data.is_empty() {
            return Err(ModelError::InvalidInput(format!("sample {id} has an empty data blob")));
        }
        if let Label::IntClass(c) = label {
            if c < 0 {
                return Err(ModelError::InvalidInput(format!("sample {id} has negative class {c}")));
            }
        }
        Ok(Self { id, label, data })
    }
}

/// One row of a metadata table. Only read when building splits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetadataRecord {
    pub id: SampleId,
    pub entity_id: String,
    pub group_key: String,
    pub coord_x: i32,
    pub coord_y: i32,
    pub class_label: i32,
}

impl MetadataRecord {
    pub const TEXT_FIELDS: [&'static str; 2] = ["entity_id", "group_key"];
    pub const INT_FIELDS: [&'static str; 3] = ["coord_x", "coord_y", "class_label"];

    /// Field lookup by column name; integer columns are rendered as text so
    /// they can also act as grouping keys.
    pub fn text_field(&self, name: &str) -> Option<String> {
        match name {
            "entity_id" => Some(self.entity_id.clone()),
            "group_key" => Some(self.group_key.clone()),
            _ => self.int_field(name).map(|v| v.to_string()),
        }
    }

    pub fn int_field(&self, name: &str) -> Option<i32> {
        match name {
            "coord_x" => Some(self.coord_x),
            "coord_y" => Some(self.coord_y),
            "class_label" => Some(self.class_label),
            _ => None,
        }
    }

    pub fn has_field(name: &str) -> bool {
        Self::TEXT_FIELDS.contains(&name) || Self::INT_FIELDS.contains(&name)
    }

    /// Checks this row against the data row it annotates.
    pub fn matches(&self, rec: &SampleRecord) -> bool {
        self.id == rec.id
            && match rec.label {
                Label::IntClass(c) => c == self.class_label,
                Label::Blob(_) => true,
            }
    }
}
