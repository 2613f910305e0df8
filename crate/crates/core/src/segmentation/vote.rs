use serde::{Deserialize, Serialize};

use super::SegmentationError;
use crate::raster::BinaryMask;

/// How many of `n` votes a pixel needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    /// `count > n / 2`; with 10 members a pixel needs 6 votes.
    #[default]
    StrictMajority,
    /// `2 * count >= n`; ties are kept.
    AtLeastHalf,
}

impl VoteRule {
    #[inline]
    pub fn accepts(self, count: u32, n: u32) -> bool {
        match self {
            VoteRule::StrictMajority => 2 * count > n,
            VoteRule::AtLeastHalf => 2 * count >= n,
        }
    }
}

/// Per-pixel vote counts over `n` ensemble members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMap {
    width: u32,
    height: u32,
    counts: Vec<u32>,
    n: u32,
}

impl VoteMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![0; width as usize * height as usize],
            n: 0,
        }
    }

    pub fn add(&mut self, mask: &BinaryMask) -> Result<(), SegmentationError> {
        if mask.dims() != (self.width, self.height) {
            return Err(SegmentationError::Vote(format!(
                "sample {} is {:?}, expected {:?}",
                self.n,
                mask.dims(),
                (self.width, self.height)
            )));
        }
        for (c, &b) in self.counts.iter_mut().zip(mask.bits()) {
            *c += u32::from(b);
        }
        self.n += 1;
        Ok(())
    }

    pub fn members(&self) -> u32 {
        self.n
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn finalize(&self, rule: VoteRule) -> BinaryMask {
        BinaryMask::from_bits(
            self.width,
            self.height,
            self.counts.iter().map(|&c| rule.accepts(c, self.n)).collect(),
        )
        .expect("counts cover the frame")
    }

    pub fn stats(&self, rule: VoteRule) -> VoteStats {
        let mut s = VoteStats {
            members: self.n,
            any_vote_pixels: 0,
            unanimous_pixels: 0,
            selected_pixels: 0,
            contested_pixels: 0,
        };
        for &c in &self.counts {
            if c == 0 {
                continue;
            }
            s.any_vote_pixels += 1;
            if c == self.n {
                s.unanimous_pixels += 1;
            } else {
                s.contested_pixels += 1;
            }
            if rule.accepts(c, self.n) {
                s.selected_pixels += 1;
            }
        }
        s
    }
}

/// Agreement summary of one box's ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteStats {
    pub members: u32,
    /// Pixels with at least one vote.
    pub any_vote_pixels: usize,
    pub unanimous_pixels: usize,
    /// Pixels with some but not all votes.
    pub contested_pixels: usize,
    /// Pixels in the voted mask.
    pub selected_pixels: usize,
}

/// Pixel-wise vote over `samples` under `rule`.
pub fn majority_vote(samples: &[BinaryMask], rule: VoteRule) -> Result<BinaryMask, SegmentationError> {
    let first = samples
        .first()
        .ok_or_else(|| SegmentationError::Vote("no samples".into()))?;
    let mut map = VoteMap::new(first.width(), first.height());
    for s in samples {
        map.add(s)?;
    }
    Ok(map.finalize(rule))
}
