use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use uuid::Uuid;

use super::{ModelError, Rng};

/// 128-bit sample identifier.
///
/// The only accepted text form is the canonical 36-character lowercase
/// hyphenated one, so parsing followed by formatting is the identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId(Uuid);

impl SampleId {
    pub const LEN: usize = 16;

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(Uuid::from_bytes(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        self.0.as_bytes()
    }

    /// Random version-4 id drawn from `rng`.
    pub fn generate(rng: &mut Rng) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self(uuid::Builder::from_random_bytes(bytes).into_uuid())
    }

    pub fn version(&self) -> usize {
        self.0.get_version_num()
    }

    pub fn uuid(&self) -> Uuid {
        self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.hyphenated().fmt(f)
    }
}

impl fmt::Debug for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SampleId({})", self.0.hyphenated())
    }
}

impl FromStr for SampleId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canonical = s.len() == 36
            && s.bytes().enumerate().all(|(i, b)| match i {
                8 | 13 | 18 | 23 => b == b'-',
                _ => b.is_ascii_digit() || (b'a'..=b'f').contains(&b),
            });
        if !canonical {
            return Err(ModelError::BadId(s.to_string()));
        }
        Uuid::parse_str(s)
            .map(Self)
            .map_err(|_| ModelError::BadId(s.to_string()))
    }
}

/// Generates version-4 ids, refusing to hand out the same id twice.
#[derive(Debug)]
pub struct IdGenerator {
    rng: Rng,
    issued: HashSet<SampleId>,
}

impl IdGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Rng::new(seed, 0x1d5),
            issued: HashSet::new(),
        }
    }

    pub fn next_id(&mut self) -> SampleId {
        loop {
            let id = SampleId::generate(&mut self.rng);
            if self.issued.insert(id) {
                return id;
            }
        }
    }

    /// Registers an id derived elsewhere; false if it was already issued.
    pub fn claim(&mut self, id: SampleId) -> bool {
        self.issued.insert(id)
    }

    pub fn issued(&self) -> usize {
        self.issued.len()
    }
}
