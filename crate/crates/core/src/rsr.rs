//! Region-vote refinement of label maps.
//!
//! Each proposal, in list order, takes the most frequent input label
//! inside its mask (ties to the lowest class) and paints it over the mask.
//! Votes always read the original input, so order only matters where
//! masks overlap: the later proposal wins. Pixels outside every proposal
//! keep their input label.

use std::collections::BTreeMap;

use crate::data::image::LabelMap;
use crate::data::rle::RegionProposalSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedMap {
    pub labels: LabelMap,
    /// Pixel lies inside at least one non-empty proposal.
    pub covered: Vec<bool>,
    /// Winning class per proposal; `None` for skipped empty masks.
    pub region_classes: Vec<Option<u16>>,
    /// Proposals skipped because they had no foreground pixels.
    pub skipped_empty: usize,
}

fn check_dims(input: &LabelMap, proposals: &RegionProposalSet) -> Result<()> {
    if (input.height, input.width) != (proposals.height, proposals.width) {
        return Err(Error::DimensionMismatch {
            what: "region proposals vs label map".into(),
            expected: vec![input.height, input.width],
            found: vec![proposals.height, proposals.width],
        });
    }
    proposals.validate()
}

/// Run-based refinement: votes and writes walk the RLE runs directly.
pub fn rsr_refine(input: &LabelMap, proposals: &RegionProposalSet) -> Result<RefinedMap> {
    check_dims(input, proposals)?;
    let classes = input.data.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut labels = input.data.clone();
    let mut covered = vec![false; input.len()];
    let mut region_classes = Vec::with_capacity(proposals.len());
    let mut skipped_empty = 0;
    let mut hist = vec![0u32; classes];
    for mask in &proposals.masks {
        hist.fill(0);
        let mut any = false;
        for (start, len) in mask.foreground_runs() {
            any = true;
            for &l in &input.data[start..start + len] {
                hist[l as usize] += 1;
            }
        }
        if !any {
            skipped_empty += 1;
            region_classes.push(None);
            continue;
        }
        let mut winner = 0usize;
        for (c, &n) in hist.iter().enumerate() {
            if n > hist[winner] {
                winner = c;
            }
        }
        let winner = winner as u16;
        for (start, len) in mask.foreground_runs() {
            labels[start..start + len].fill(winner);
            covered[start..start + len].fill(true);
        }
        region_classes.push(Some(winner));
    }
    if skipped_empty > 0 {
        log::debug!("rsr: skipped {skipped_empty} empty proposals");
    }
    Ok(RefinedMap {
        labels: LabelMap::new(input.height, input.width, labels),
        covered,
        region_classes,
        skipped_empty,
    })
}

/// Reference refiner: decodes every mask, builds an ordered histogram per
/// region, then resolves each pixel by the highest-index covering region.
/// Shares no code path with [`rsr_refine`] beyond RLE decoding.
pub fn rsr_refine_bruteforce(input: &LabelMap, proposals: &RegionProposalSet) -> Result<RefinedMap> {
    check_dims(input, proposals)?;
    let masks = proposals
        .masks
        .iter()
        .map(|m| m.decode(input.height, input.width))
        .collect::<Result<Vec<_>>>()?;
    let winners: Vec<Option<u16>> = masks
        .iter()
        .map(|m| {
            let mut votes: BTreeMap<u16, usize> = BTreeMap::new();
            for (p, &inside) in m.bits.iter().enumerate() {
                if inside {
                    *votes.entry(input.data[p]).or_default() += 1;
                }
            }
            let best = votes.values().copied().max()?;
            votes.iter().find(|(_, &n)| n == best).map(|(&c, _)| c)
        })
        .collect();
    let mut labels = Vec::with_capacity(input.len());
    let mut covered = Vec::with_capacity(input.len());
    for p in 0..input.len() {
        let owner = (0..masks.len())
            .rev()
            .find(|&k| masks[k].bits[p] && winners[k].is_some());
        match owner {
            Some(k) => {
                labels.push(winners[k].unwrap());
                covered.push(true);
            }
            None => {
                labels.push(input.data[p]);
                covered.push(false);
            }
        }
    }
    Ok(RefinedMap {
        labels: LabelMap::new(input.height, input.width, labels),
        covered,
        skipped_empty: winners.iter().filter(|w| w.is_none()).count(),
        region_classes: winners,
    })
}

/// Pixels each proposal still owns after later proposals overwrite it.
pub fn final_footprints(proposals: &RegionProposalSet) -> Vec<Vec<usize>> {
    let n = proposals.height * proposals.width;
    let mut owner = vec![usize::MAX; n];
    for (k, mask) in proposals.masks.iter().enumerate() {
        for (start, len) in mask.foreground_runs() {
            owner[start..start + len].fill(k);
        }
    }
    let mut out = vec![Vec::new(); proposals.len()];
    for (p, &k) in owner.iter().enumerate() {
        if k != usize::MAX {
            out[k].push(p);
        }
    }
    out
}
