//! Presence features: one bit per (block, color) cell of a grid.

use crate::screen::{MaskedFrame, COLORS};
use crate::{Error, Result};

use super::{GridGeometry, PresenceGrid};

#[inline]
pub(crate) fn presence_id(geom: &GridGeometry, col: u32, row: u32, color: u8) -> u64 {
    geom.id_base + ((row * geom.cols + col) as u64 * COLORS as u64) + color as u64
}

/// Feature id of color `color` occupying block (`col`, `row`) of `geom`.
pub fn basic_feature_id(geom: &GridGeometry, col: u32, row: u32, color: u8) -> Result<u64> {
    if color as usize >= COLORS {
        return Err(Error::ColorRange {
            color: color as u32,
        });
    }
    if col >= geom.cols || row >= geom.rows {
        return Err(Error::BlockRange { column: col, row });
    }
    Ok(presence_id(geom, col, row, color))
}

/// Mark, for every colored pixel, the block its position falls into.
pub fn build_presence_grid(masked: &MaskedFrame, geom: GridGeometry) -> PresenceGrid {
    let mut grid = PresenceGrid::new(geom);
    for (x, y, color) in masked.colored_pixels() {
        grid.set(color, x as u32 / geom.tile_w, y as u32 / geom.tile_h);
    }
    grid
}

/// Ids of every occupied (block, color) cell.
pub fn basic_features(grid: &PresenceGrid) -> Vec<u64> {
    let geom = *grid.geometry();
    grid.entries()
        .into_iter()
        .map(|e| presence_id(&geom, e.col, e.row, e.color))
        .collect()
}
