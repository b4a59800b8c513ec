//! Capacity-bounded replay buffer with most-represented-class eviction.
//!
//! Items are kept grouped by class (ascending id, insertion order within a
//! class after swap-removals). The serialized form preserves that layout, so
//! a reloaded buffer makes the same random choices as the original.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RBUF";
const VERSION: u32 = 1;
/// magic + version + capacity + item count + payload width.
pub const BUFFER_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

/// A fixed-width payload that can live in a serialized buffer.
pub trait Payload: Sized {
    fn width(&self) -> usize;
    fn write(&self, out: &mut Vec<u8>);
    fn read(bytes: &[u8]) -> Self;
}

impl Payload for Vec<f32> {
    fn width(&self) -> usize {
        self.len() * 4
    }

    fn write(&self, out: &mut Vec<u8>) {
        for v in self {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(bytes: &[u8]) -> Self {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<P> {
    capacity: usize,
    len: usize,
    classes: BTreeMap<u32, Vec<P>>,
}

impl<P> ReplayBuffer<P> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            len: 0,
            classes: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn class_count(&self, class: u32) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        self.classes.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&P, u32)> {
        self.classes
            .iter()
            .flat_map(|(&c, items)| items.iter().map(move |p| (p, c)))
    }

    /// Classes tied for the largest count, ascending.
    pub fn most_represented(&self) -> Vec<u32> {
        let max = self.classes.values().map(Vec::len).max().unwrap_or(0);
        self.classes
            .iter()
            .filter(|(_, v)| v.len() == max && max > 0)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Insert, evicting first when full. Returns the evicted item, if any.
    pub fn insert<R: Rng>(&mut self, payload: P, label: u32, rng: &mut R) -> Result<Option<(P, u32)>> {
        if self.capacity == 0 {
            return Err(Error::invalid("insert into a zero-capacity buffer"));
        }
        let evicted = if self.len >= self.capacity {
            let tied = self.most_represented();
            let class = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.random_range(0..tied.len())]
            };
            let items = self.classes.get_mut(&class).expect("tied class present");
            let victim = items.swap_remove(rng.random_range(0..items.len()));
            if items.is_empty() {
                self.classes.remove(&class);
            }
            self.len -= 1;
            Some((victim, class))
        } else {
            None
        };
        self.classes.entry(label).or_default().push(payload);
        self.len += 1;
        Ok(evicted)
    }

    /// `r` distinct items chosen uniformly at random (all items if `r >= len`).
    pub fn sample<R: Rng>(&self, r: usize, rng: &mut R) -> Vec<(&P, u32)> {
        let r = r.min(self.len);
        if r == 0 {
            return Vec::new();
        }
        let mut starts = Vec::with_capacity(self.classes.len());
        let mut acc = 0;
        for (&c, items) in &self.classes {
            starts.push((acc, c, items));
            acc += items.len();
        }
        index::sample(rng, self.len, r)
            .into_iter()
            .map(|g| {
                let at = starts.partition_point(|&(s, _, _)| s <= g) - 1;
                let (s, c, items) = starts[at];
                (&items[g - s], c)
            })
            .collect()
    }
}

impl<P: Payload> ReplayBuffer<P> {
    /// Header followed by `[u32 label][payload]` per item.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.iter().next().map_or(0, |(p, _)| p.width());
        let mut w = Writer::header(MAGIC, VERSION);
        w.u64(self.capacity as u64);
        w.u64(self.len as u64);
        w.u32(width as u32);
        for (p, c) in self.iter() {
            w.u32(c);
            p.write(&mut w.buf);
        }
        w.into_inner()
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        r.header(MAGIC, VERSION)?;
        let capacity = r.len_u64()?;
        let n = r.len_u64()?;
        let width = r.u32()? as usize;
        if n > capacity {
            return Err(r.err("buffer holds more items than its capacity"));
        }
        let mut buf = Self::new(capacity);
        for _ in 0..n {
            let label = r.u32()?;
            let payload = P::read(r.take(width)?);
            buf.classes.entry(label).or_default().push(payload);
            buf.len += 1;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let buf = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(buf)
    }
}
