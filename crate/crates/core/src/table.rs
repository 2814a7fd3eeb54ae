use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Packed binary action table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionTable {
    len: usize,
    words: Vec<u64>,
}

impl ActionTable {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Packed {
    len: usize,
    hex: String,
}

impl Serialize for ActionTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Packed {
            len: self.len,
            hex: hex::encode(self.to_bytes()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let packed = Packed::deserialize(d)?;
        let bytes = hex::decode(&packed.hex).map_err(D::Error::custom)?;
        if bytes.len() != packed.len.div_ceil(64) * 8 {
            return Err(D::Error::custom("action table length mismatch"));
        }
        let words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            len: packed.len,
            words,
        })
    }
}
