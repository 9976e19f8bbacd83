//! Binary feature generation over presence grids.
//!
//! Feature ids are u64 values drawn from one global address space. Each
//! family occupies a contiguous base-offset range so that the union of
//! several families is just the union of their id sets:
//!
//! | family                    | base        | span        |
//! |---------------------------|-------------|-------------|
//! | basic (16x14 grid)        | 0           | 28,672      |
//! | pairwise offsets, basic   | 28,672      | 13,713,408  |
//! | temporal offsets, basic   | 13,742,080  | 13,713,408  |
//! | blob primitives (40x30)   | 27,455,488  | 153,600     |
//! | pairwise offsets, blob    | 27,609,088  | 76,365,824  |
//! | temporal offsets, blob    | 103,974,912 | 76,365,824  |
//!
//! Pairwise spans are not deduplicated at the address level; symmetric
//! duplicates are removed by canonicalization before ids are emitted, which
//! is why the distinct-feature counts reported by
//! [`FeatureSet::count_distinct_features`] are smaller than the spans.

mod basic;
mod offsets;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use basic::{basic_feature_id, basic_features, build_presence_grid};
pub use offsets::{
    canonicalize_pros, pair_offset_id, pros_features, prot_features, OffsetRange,
};

use crate::blobs;
use crate::screen::{subtract_background, BackgroundModel, Frame, COLORS};
use crate::{Error, Result};

/// How a screen is cut into blocks, and where the resulting presence
/// features live in the global id space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridGeometry {
    pub cols: u32,
    pub rows: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    /// First id of this grid's presence-feature family.
    pub id_base: u64,
}

impl GridGeometry {
    pub const fn blocks(&self) -> u32 {
        self.cols * self.rows
    }

    pub const fn presence_span(&self) -> u64 {
        self.blocks() as u64 * COLORS as u64
    }
}

pub const BASIC_GRID: GridGeometry = GridGeometry {
    cols: 16,
    rows: 14,
    tile_w: 10,
    tile_h: 15,
    id_base: BASIC_BASE,
};

pub const BLOB_GRID: GridGeometry = GridGeometry {
    cols: 40,
    rows: 30,
    tile_w: 4,
    tile_h: 7,
    id_base: BLOB_BASE,
};

const fn offset_span(grid: &GridGeometry) -> u64 {
    let offsets = (2 * grid.cols as u64 - 1) * (2 * grid.rows as u64 - 1);
    offsets * (COLORS * COLORS) as u64
}

pub const BASIC_BASE: u64 = 0;
pub const BPROS_BASE: u64 = BASIC_GRID.presence_span();
pub const BPROT_BASE: u64 = BPROS_BASE + offset_span(&BASIC_GRID);
pub const BLOB_BASE: u64 = BPROT_BASE + offset_span(&BASIC_GRID);
pub const BLOB_PROS_BASE: u64 = BLOB_BASE + BLOB_GRID.presence_span();
pub const BLOB_PROT_BASE: u64 = BLOB_PROS_BASE + offset_span(&BLOB_GRID);
/// One past the last assigned feature id.
pub const ID_SPACE_END: u64 = BLOB_PROT_BASE + offset_span(&BLOB_GRID);

/// Distinct canonical pairwise features inside one offset family span:
/// the 128 self-inverse features (equal colors, zero offset) map to
/// themselves, every other feature pairs up with its mirror image.
const fn pros_distinct(span: u64) -> u64 {
    (span - COLORS as u64) / 2 + COLORS as u64
}

/// Which blocks of a grid each color occupies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PresenceGrid {
    geom: GridGeometry,
    words_per_color: usize,
    bits: Vec<u64>,
}

/// One occupied (color, block) cell of a presence grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridEntry {
    pub color: u8,
    pub col: u32,
    pub row: u32,
}

impl PresenceGrid {
    pub fn new(geom: GridGeometry) -> Self {
        let words_per_color = (geom.blocks() as usize + 63) / 64;
        PresenceGrid {
            geom,
            words_per_color,
            bits: vec![0u64; words_per_color * COLORS],
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    #[inline]
    fn bit_pos(&self, color: u8, col: u32, row: u32) -> (usize, u64) {
        debug_assert!((color as usize) < COLORS);
        debug_assert!(col < self.geom.cols && row < self.geom.rows);
        let block = (row * self.geom.cols + col) as usize;
        (
            color as usize * self.words_per_color + block / 64,
            1u64 << (block % 64),
        )
    }

    #[inline]
    pub fn set(&mut self, color: u8, col: u32, row: u32) {
        let (word, mask) = self.bit_pos(color, col, row);
        self.bits[word] |= mask;
    }

    #[inline]
    pub fn contains(&self, color: u8, col: u32, row: u32) -> bool {
        let (word, mask) = self.bit_pos(color, col, row);
        self.bits[word] & mask != 0
    }

    /// All occupied cells, color-major then block-major.
    pub fn entries(&self) -> Vec<GridEntry> {
        let mut out = Vec::new();
        for color in 0..COLORS {
            let words = &self.bits[color * self.words_per_color..(color + 1) * self.words_per_color];
            for (w, &word) in words.iter().enumerate() {
                let mut bitset = word;
                while bitset != 0 {
                    let bit = bitset.trailing_zeros() as usize;
                    bitset &= bitset - 1;
                    let block = (w * 64 + bit) as u32;
                    out.push(GridEntry {
                        color: color as u8,
                        col: block % self.geom.cols,
                        row: block / self.geom.cols,
                    });
                }
            }
        }
        out
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// A sorted, duplicate-free set of active feature ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActiveFeatureSet {
    ids: Vec<u64>,
}

impl ActiveFeatureSet {
    pub fn empty() -> Self {
        ActiveFeatureSet { ids: Vec::new() }
    }

    pub fn from_unsorted(mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        ActiveFeatureSet { ids }
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// The four feature families an agent can run on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Basic,
    BPros,
    BProst,
    BlobProst,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::Basic,
        FeatureSet::BPros,
        FeatureSet::BProst,
        FeatureSet::BlobProst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Basic => "basic",
            FeatureSet::BPros => "bpros",
            FeatureSet::BProst => "bprost",
            FeatureSet::BlobProst => "blob-prost",
        }
    }

    /// Whether extraction subtracts a background model (the blob pipeline
    /// works on raw frames and needs none).
    pub fn requires_background(self) -> bool {
        !matches!(self, FeatureSet::BlobProst)
    }

    /// Number of distinct features the family can ever emit, counting
    /// canonical pairwise features once.
    pub fn count_distinct_features(self) -> u64 {
        let basic = BASIC_GRID.presence_span();
        let basic_pairs = pros_distinct(offset_span(&BASIC_GRID));
        match self {
            FeatureSet::Basic => basic,
            FeatureSet::BPros => basic + basic_pairs,
            FeatureSet::BProst => basic + basic_pairs + offset_span(&BASIC_GRID),
            FeatureSet::BlobProst => {
                BLOB_GRID.presence_span()
                    + pros_distinct(offset_span(&BLOB_GRID))
                    + offset_span(&BLOB_GRID)
            }
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(FeatureSet::Basic),
            "bpros" => Ok(FeatureSet::BPros),
            "bprost" => Ok(FeatureSet::BProst),
            "blob-prost" => Ok(FeatureSet::BlobProst),
            other => Err(Error::UnknownFeatureSet(other.to_string())),
        }
    }
}

/// Turns frames into active-feature sets for one configured family.
///
/// The extractor is stateful across an episode: temporal-offset features
/// relate the current presence grid to the grid of the previous decision
/// point. On the first decision of an episode the current grid doubles as
/// its own past.
pub struct Extractor {
    set: FeatureSet,
    background: Option<BackgroundModel>,
    blob_tolerance: u32,
    prev: Option<PresenceGrid>,
}

impl Extractor {
    pub fn new(
        set: FeatureSet,
        background: Option<BackgroundModel>,
        blob_tolerance: u32,
    ) -> Result<Self> {
        if set.requires_background() && background.is_none() {
            return Err(Error::MissingBackground(set.name()));
        }
        if blob_tolerance == 0 {
            return Err(Error::Config {
                detail: "blob tolerance must be at least 1".to_string(),
            });
        }
        Ok(Extractor {
            set,
            background,
            blob_tolerance,
            prev: None,
        })
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.set
    }

    /// Forget the previous decision point (call between episodes).
    pub fn begin_episode(&mut self) {
        self.prev = None;
    }

    /// Extract features for the next decision point of the running episode.
    pub fn extract_next(&mut self, frame: &Frame) -> ActiveFeatureSet {
        let grid = self.grid_for(frame);
        let out = match self.prev.take() {
            Some(past) => self.assemble(&grid, &past),
            None => self.assemble(&grid, &grid),
        };
        self.prev = Some(grid);
        out
    }

    /// Stateless extraction for an explicit (current, past) frame pair.
    pub fn extract_pair(&self, current: &Frame, past: &Frame) -> ActiveFeatureSet {
        let grid = self.grid_for(current);
        let past_grid = self.grid_for(past);
        self.assemble(&grid, &past_grid)
    }

    fn grid_for(&self, frame: &Frame) -> PresenceGrid {
        match self.set {
            FeatureSet::Basic | FeatureSet::BPros | FeatureSet::BProst => {
                let bg = self
                    .background
                    .as_ref()
                    .expect("background checked at construction");
                build_presence_grid(&subtract_background(frame, bg), BASIC_GRID)
            }
            FeatureSet::BlobProst => {
                let found = blobs::detect_blobs(frame, self.blob_tolerance);
                blobs::blob_presence_grid(&found)
            }
        }
    }

    fn assemble(&self, current: &PresenceGrid, past: &PresenceGrid) -> ActiveFeatureSet {
        let mut ids = basic_features(current);
        match self.set {
            FeatureSet::Basic => {}
            FeatureSet::BPros => {
                ids.extend(pros_features(current, BPROS_BASE));
            }
            FeatureSet::BProst => {
                ids.extend(pros_features(current, BPROS_BASE));
                ids.extend(prot_features(past, current, BPROT_BASE));
            }
            FeatureSet::BlobProst => {
                ids.extend(pros_features(current, BLOB_PROS_BASE));
                ids.extend(prot_features(past, current, BLOB_PROT_BASE));
            }
        }
        ActiveFeatureSet::from_unsorted(ids)
    }
}
