//! Pairwise-offset features.
//!
//! A pairwise feature states "some block holds color k1 and the block at
//! relative offset (dc, dr) holds color k2". The same-screen family is
//! symmetric — (k1, k2, dc, dr) and (k2, k1, -dc, -dr) describe the same
//! geometric fact — so those ids are canonicalized before emission. The
//! temporal family anchors k1 on the previous decision point's screen and
//! k2 on the current one; both orientations are distinct and no
//! canonicalization applies.

use crate::screen::COLORS;
use crate::{Error, Result};

use super::{GridGeometry, PresenceGrid};

/// Inclusive offset bounds of a grid: every block pair of a `cols x rows`
/// grid has a column offset in `[-(cols-1), cols-1]` and a row offset in
/// `[-(rows-1), rows-1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OffsetRange {
    pub dc_max: i32,
    pub dr_max: i32,
}

impl OffsetRange {
    pub fn for_grid(geom: &GridGeometry) -> Self {
        OffsetRange {
            dc_max: geom.cols as i32 - 1,
            dr_max: geom.rows as i32 - 1,
        }
    }

    pub fn contains(&self, dc: i32, dr: i32) -> bool {
        dc.abs() <= self.dc_max && dr.abs() <= self.dr_max
    }

    /// Number of distinct offsets.
    pub fn offset_count(&self) -> u64 {
        (2 * self.dc_max as u64 + 1) * (2 * self.dr_max as u64 + 1)
    }

    /// Row-major position of (dc, dr) inside the offset rectangle.
    #[inline]
    fn offset_index(&self, dc: i32, dr: i32) -> u64 {
        debug_assert!(self.contains(dc, dr));
        let width = 2 * self.dc_max as u64 + 1;
        (dr + self.dr_max) as u64 * width + (dc + self.dc_max) as u64
    }
}

/// Map a same-screen pair onto its canonical orientation: the smaller color
/// first; between equal colors, the offset whose row (then column) component
/// is non-negative.
pub fn canonicalize_pros(k1: u8, k2: u8, dc: i32, dr: i32) -> (u8, u8, i32, i32) {
    if k1 > k2 {
        (k2, k1, -dc, -dr)
    } else if k1 == k2 && (dr < 0 || (dr == 0 && dc < 0)) {
        (k1, k2, -dc, -dr)
    } else {
        (k1, k2, dc, dr)
    }
}

#[inline]
pub(crate) fn pair_offset_id_unchecked(
    base: u64,
    range: &OffsetRange,
    k1: u8,
    k2: u8,
    dc: i32,
    dr: i32,
) -> u64 {
    let pair = k1 as u64 * COLORS as u64 + k2 as u64;
    base + pair * range.offset_count() + range.offset_index(dc, dr)
}

/// Feature id of the pair (k1, k2) at offset (dc, dr) within the family
/// starting at `base`. The orientation is taken as given; canonicalize
/// first when addressing the same-screen family.
pub fn pair_offset_id(
    base: u64,
    range: &OffsetRange,
    k1: u8,
    k2: u8,
    dc: i32,
    dr: i32,
) -> Result<u64> {
    for k in [k1, k2] {
        if k as usize >= COLORS {
            return Err(Error::ColorRange { color: k as u32 });
        }
    }
    if !range.contains(dc, dr) {
        return Err(Error::OffsetOutOfRange { dc, dr });
    }
    Ok(pair_offset_id_unchecked(base, range, k1, k2, dc, dr))
}

/// Canonical same-screen pair features over every pair of occupied cells,
/// self-pairs included. Sorted and duplicate-free.
pub fn pros_features(grid: &PresenceGrid, base: u64) -> Vec<u64> {
    let range = OffsetRange::for_grid(grid.geometry());
    let entries = grid.entries();
    let mut ids = Vec::with_capacity(entries.len() * (entries.len() + 1) / 2);
    for i in 0..entries.len() {
        let a = entries[i];
        for b in entries.iter().skip(i) {
            let (k1, k2, dc, dr) = canonicalize_pros(
                a.color,
                b.color,
                b.col as i32 - a.col as i32,
                b.row as i32 - a.row as i32,
            );
            ids.push(pair_offset_id_unchecked(base, &range, k1, k2, dc, dr));
        }
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Temporal pair features: k1 occupies the past grid at offset (dc, dr)
/// relative to a block of the current grid holding k2. Sorted and
/// duplicate-free.
pub fn prot_features(past: &PresenceGrid, current: &PresenceGrid, base: u64) -> Vec<u64> {
    assert_eq!(
        past.geometry(),
        current.geometry(),
        "temporal pairs need matching grids"
    );
    let range = OffsetRange::for_grid(current.geometry());
    let past_entries = past.entries();
    let current_entries = current.entries();
    let mut ids = Vec::with_capacity(past_entries.len() * current_entries.len());
    for p in &past_entries {
        for c in &current_entries {
            let dc = p.col as i32 - c.col as i32;
            let dr = p.row as i32 - c.row as i32;
            ids.push(pair_offset_id_unchecked(base, &range, p.color, c.color, dc, dr));
        }
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}
