//! Background-first run-length encoding of binary masks over row-major
//! flattened pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// One region proposal in run-length form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn encode(mask: &Mask) -> Self {
        RleMask {
            counts: encode_rle(&mask.bits),
        }
    }

    pub fn decode(&self, height: usize, width: usize) -> Result<Mask> {
        Ok(Mask {
            height,
            width,
            bits: decode_rle(&self.counts, height, width)?,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Foreground runs as `(start, len)` over flattened pixel indices.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as usize;
            (i % 2 == 1 && c > 0).then_some((start, c as usize))
        })
    }

    pub fn area(&self) -> usize {
        self.foreground_runs().map(|(_, n)| n).sum()
    }
}

/// Ordered list of region proposals for one view. Later masks take
/// precedence where masks overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionProposalSet {
    pub height: usize,
    pub width: usize,
    pub masks: Vec<RleMask>,
}

impl RegionProposalSet {
    pub fn empty(height: usize, width: usize) -> Self {
        RegionProposalSet {
            height,
            width,
            masks: Vec::new(),
        }
    }

    pub fn from_masks(height: usize, width: usize, masks: &[Mask]) -> Self {
        RegionProposalSet {
            height,
            width,
            masks: masks.iter().map(RleMask::encode).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = (self.height * self.width) as u64;
        for m in &self.masks {
            let sum = m.total();
            if sum != expected {
                return Err(Error::RleSumMismatch { sum, expected });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

pub fn decode_rle(counts: &[u32], height: usize, width: usize) -> Result<Vec<bool>> {
    let expected = (height * width) as u64;
    let sum: u64 = counts.iter().map(|&c| c as u64).sum();
    if sum != expected {
        return Err(Error::RleSumMismatch { sum, expected });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    for (i, &c) in counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Ok(bits)
}

/// Canonical encoding: a leading background run (possibly 0) followed by
/// strictly positive alternating runs.
pub fn encode_rle(bits: &[bool]) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in bits {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    if run > 0 || counts.is_empty() {
        counts.push(run);
    }
    counts
}
