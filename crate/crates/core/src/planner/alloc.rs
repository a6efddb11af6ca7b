use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// First-fit allocator over one Memtile address space, scanning from the
/// last allocation point and wrapping to the start. A tensor never wraps
/// around the end of the buffer.
#[derive(Debug, Clone)]
pub struct CircularBuffer {
    size: usize,
    cursor: usize,
    /// offset → (length, owner)
    blocks: BTreeMap<usize, (usize, String)>,
}

impl CircularBuffer {
    pub fn new(size: usize) -> Self {
        Self { size, cursor: 0, blocks: BTreeMap::new() }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn used(&self) -> usize {
        self.blocks.values().map(|(l, _)| l).sum()
    }

    pub fn free_bytes(&self) -> usize {
        self.size - self.used()
    }

    /// Free gaps as `(offset, length)` in address order.
    fn gaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        for (&off, &(len, _)) in &self.blocks {
            if off > at {
                out.push((at, off - at));
            }
            at = off + len;
        }
        if at < self.size {
            out.push((at, self.size - at));
        }
        out
    }

    /// Largest contiguous free region.
    pub fn largest_gap(&self) -> usize {
        self.gaps().iter().map(|g| g.1).max().unwrap_or(0)
    }

    pub fn alloc(&mut self, owner: &str, len: usize) -> Option<usize> {
        let len = len.max(1);
        let gaps = self.gaps();
        // Gaps at or after the cursor first (a gap straddling it may start at
        // the cursor), then the ones before it.
        let after = gaps.iter().filter_map(|&(o, l)| {
            let end = o + l;
            if end <= self.cursor {
                return None;
            }
            let start = o.max(self.cursor);
            Some((start, end - start))
        });
        let before = gaps.iter().copied().filter(|&(o, _)| o < self.cursor);
        let pick = after.chain(before).find(|&(_, l)| l >= len).map(|(o, _)| o)?;
        self.blocks.insert(pick, (len, owner.to_string()));
        self.cursor = pick + len;
        if self.cursor >= self.size {
            self.cursor = 0;
        }
        Some(pick)
    }

    pub fn free(&mut self, owner: &str) -> bool {
        let key = self.blocks.iter().find(|(_, (_, o))| o == owner).map(|(&k, _)| k);
        let found = key.map(|k| self.blocks.remove(&k)).is_some();
        // A drained buffer restarts at its base.
        if self.blocks.is_empty() {
            self.cursor = 0;
        }
        found
    }

    pub fn offset_of(&self, owner: &str) -> Option<usize> {
        self.blocks.iter().find(|(_, (_, o))| o == owner).map(|(&k, _)| k)
    }

    pub fn owners(&self) -> impl Iterator<Item = &str> {
        self.blocks.values().map(|(_, o)| o.as_str())
    }
}

/// One residency interval of a tensor in Memtile, identical in every Memtile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocRecord {
    pub tensor: String,
    pub offset: usize,
    /// Bytes per Memtile.
    pub bytes: usize,
    /// Schedule steps during which the tensor is resident, inclusive.
    pub first_step: usize,
    pub last_step: usize,
}

/// Where every tensor lives: a DDR home for all of them plus the Memtile
/// intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub ddr: BTreeMap<String, u64>,
    pub memtile: Vec<AllocRecord>,
}

impl Allocation {
    /// Verifies no two records overlap in address while both are live.
    pub fn check_disjoint(&self) -> Result<(), String> {
        for (i, a) in self.memtile.iter().enumerate() {
            for b in &self.memtile[i + 1..] {
                let time = a.first_step <= b.last_step && b.first_step <= a.last_step;
                let space = a.offset < b.offset + b.bytes && b.offset < a.offset + a.bytes;
                if time && space {
                    return Err(format!("`{}` and `{}` overlap", a.tensor, b.tensor));
                }
            }
        }
        Ok(())
    }
}
