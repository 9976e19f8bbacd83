//! Tolerance-based connected components ("blobs") over raw frames.
//!
//! Two pixels of the same color belong to the same blob when they are
//! linked by a chain of same-color pixels in which consecutive links are
//! at Chebyshev distance at most `s - 1` (each axis differs by less than
//! the tolerance `s`). Every pixel of the frame participates — there is no
//! background subtraction in this pipeline.

use crate::features::{PresenceGrid, BLOB_GRID};
use crate::screen::{Frame, HEIGHT, WIDTH};

/// A connected component and its tight bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blob {
    pub color: u8,
    pub x_min: u16,
    pub x_max: u16,
    pub y_min: u16,
    pub y_max: u16,
}

impl Blob {
    /// Center of the bounding box, rounded down.
    pub fn center(&self) -> (u32, u32) {
        (
            (self.x_min as u32 + self.x_max as u32) / 2,
            (self.y_min as u32 + self.y_max as u32) / 2,
        )
    }
}

/// Block of the blob grid the blob's center falls into.
pub fn blob_center_block(blob: &Blob) -> (u32, u32) {
    let (cx, cy) = blob.center();
    (cx / BLOB_GRID.tile_w, cy / BLOB_GRID.tile_h)
}

/// Presence grid over the blob grid geometry, one cell per blob center.
pub fn blob_presence_grid(blobs: &[Blob]) -> PresenceGrid {
    let mut grid = PresenceGrid::new(BLOB_GRID);
    for blob in blobs {
        let (col, row) = blob_center_block(blob);
        grid.set(blob.color, col, row);
    }
    grid
}

/// Blobs of a frame under tolerance `s`, in scan order of their first pixel.
pub fn detect_blobs(frame: &Frame, s: u32) -> Vec<Blob> {
    detect(frame, s, false).0
}

/// Like [`detect_blobs`], also returning a per-pixel map of blob indices
/// (row-major, indexing into the returned blob list).
pub fn detect_blobs_labeled(frame: &Frame, s: u32) -> (Vec<Blob>, Vec<u32>) {
    let (blobs, labels) = detect(frame, s, true);
    (blobs, labels.expect("labels requested"))
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let grand = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = grand;
            i = grand;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Run {
    x0: u16,
    x1: u16,
    y: u16,
    color: u8,
}

fn detect(frame: &Frame, s: u32, want_labels: bool) -> (Vec<Blob>, Option<Vec<u32>>) {
    assert!(s >= 1, "tolerance must be at least 1");
    if s == 1 {
        return detect_singletons(frame, want_labels);
    }
    let reach = (s - 1) as i32;

    // Decompose every row into maximal same-color runs. Runs partition the
    // row, so both endpoints are strictly increasing within a row.
    let bytes = frame.as_bytes();
    let mut runs: Vec<Run> = Vec::with_capacity(1024);
    let mut row_start = [0usize; HEIGHT + 1];
    for y in 0..HEIGHT {
        row_start[y] = runs.len();
        let row = &bytes[y * WIDTH..(y + 1) * WIDTH];
        let mut x0 = 0usize;
        while x0 < WIDTH {
            let color = row[x0];
            let mut x1 = x0;
            while x1 + 1 < WIDTH && row[x1 + 1] == color {
                x1 += 1;
            }
            runs.push(Run {
                x0: x0 as u16,
                x1: x1 as u16,
                y: y as u16,
                color,
            });
            x0 = x1 + 1;
        }
    }
    row_start[HEIGHT] = runs.len();

    let mut uf = UnionFind::new(runs.len());
    for ri in 0..runs.len() {
        let run = runs[ri];
        let lo = run.x0 as i32 - reach;
        let hi = run.x1 as i32 + reach;

        // Same row: earlier runs whose right end is within reach of ours.
        let mut j = ri;
        while j > row_start[run.y as usize] {
            j -= 1;
            let other = runs[j];
            if (other.x1 as i32) < lo {
                break;
            }
            if other.color == run.color {
                uf.union(ri as u32, j as u32);
            }
        }

        // Rows within vertical reach: runs whose expanded interval overlaps.
        let first_row = run.y.saturating_sub(reach as u16);
        for py in first_row..run.y {
            let slice = &runs[row_start[py as usize]..row_start[py as usize + 1]];
            // First candidate: right end within reach (right ends increase).
            let mut k = slice.partition_point(|r| (r.x1 as i32) < lo);
            while k < slice.len() && (slice[k].x0 as i32) <= hi {
                if slice[k].color == run.color {
                    uf.union(ri as u32, (row_start[py as usize] + k) as u32);
                }
                k += 1;
            }
        }
    }

    // Collect blobs in scan order of their first run.
    let mut blobs: Vec<Blob> = Vec::new();
    let mut slot: Vec<u32> = vec![u32::MAX; runs.len()];
    let mut run_slot: Vec<u32> = vec![0; runs.len()];
    for (ri, run) in runs.iter().enumerate() {
        let root = uf.find(ri as u32) as usize;
        let b = if slot[root] == u32::MAX {
            slot[root] = blobs.len() as u32;
            blobs.push(Blob {
                color: run.color,
                x_min: run.x0,
                x_max: run.x1,
                y_min: run.y,
                y_max: run.y,
            });
            slot[root]
        } else {
            let b = slot[root];
            let blob = &mut blobs[b as usize];
            blob.x_min = blob.x_min.min(run.x0);
            blob.x_max = blob.x_max.max(run.x1);
            // Runs are scanned top to bottom; only y_max can grow.
            blob.y_max = run.y;
            b
        };
        run_slot[ri] = b;
    }

    let labels = want_labels.then(|| {
        let mut labels = vec![0u32; WIDTH * HEIGHT];
        for (ri, run) in runs.iter().enumerate() {
            let base = run.y as usize * WIDTH;
            for x in run.x0 as usize..=run.x1 as usize {
                labels[base + x] = run_slot[ri];
            }
        }
        labels
    });
    (blobs, labels)
}

fn detect_singletons(frame: &Frame, want_labels: bool) -> (Vec<Blob>, Option<Vec<u32>>) {
    let bytes = frame.as_bytes();
    let mut blobs = Vec::with_capacity(bytes.len());
    for (p, &color) in bytes.iter().enumerate() {
        let (x, y) = ((p % WIDTH) as u16, (p / WIDTH) as u16);
        blobs.push(Blob {
            color,
            x_min: x,
            x_max: x,
            y_min: y,
            y_max: y,
        });
    }
    let labels = want_labels.then(|| (0..bytes.len() as u32).collect());
    (blobs, labels)
}
