//! MiniCatch: blocks fall from seeded random columns; the player slides a
//! bucket along the bottom to catch them. One point per catch, minus one
//! per miss, twenty drops per episode. The bucket is fast enough to reach
//! any column during a fall, so a perfect policy scores +20.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{splitmix64, Environment, StepOutcome};
use crate::screen::{Frame, HEIGHT, WIDTH};
use crate::{Error, Result};

const BACKGROUND: u8 = 0;
const BLOCK_COLOR: u8 = 40;
const BUCKET_COLOR: u8 = 50;

const BLOCK_SIZE: i32 = 2;
const BLOCK_X_MAX: i32 = WIDTH as i32 - BLOCK_SIZE; // 158
const FALL_SPEED: i32 = 4;
/// Row where a block meets the bucket's top edge and the drop resolves.
const CATCH_ROW: i32 = 200;

const BUCKET_W: i32 = 8;
const BUCKET_H: i32 = 4;
const BUCKET_Y: i32 = CATCH_ROW;
const BUCKET_X_MAX: i32 = WIDTH as i32 - BUCKET_W; // 152
const BUCKET_SPEED: i32 = 4;

const DROPS_PER_EPISODE: u32 = 20;
const SEED_SALT: u64 = 0x6d69_6e69_6361_7463; // "minicatc"

pub struct MiniCatch {
    bucket_x: i32,
    block_x: i32,
    block_y: i32,
    drops_done: u32,
    respawn_pending: bool,
    rng: ChaCha8Rng,
    over: bool,
}

impl MiniCatch {
    pub fn new() -> Self {
        MiniCatch {
            bucket_x: BUCKET_X_MAX / 2,
            block_x: 0,
            block_y: 0,
            drops_done: 0,
            respawn_pending: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            over: true,
        }
    }

    fn spawn_block(&mut self) {
        self.block_x = self.rng.gen_range(0..=BLOCK_X_MAX);
        self.block_y = 0;
    }

    fn block_overlaps_bucket(&self) -> bool {
        self.block_x + BLOCK_SIZE - 1 >= self.bucket_x
            && self.block_x <= self.bucket_x + BUCKET_W - 1
    }

    fn render(&self) -> Frame {
        let mut pixels = vec![BACKGROUND; WIDTH * HEIGHT];
        for row in BUCKET_Y..BUCKET_Y + BUCKET_H {
            let base = row as usize * WIDTH;
            for col in self.bucket_x..self.bucket_x + BUCKET_W {
                pixels[base + col as usize] = BUCKET_COLOR;
            }
        }
        // Drawn after the bucket so the block stays visible at contact.
        for row in self.block_y..self.block_y + BLOCK_SIZE {
            let base = row as usize * WIDTH;
            for col in self.block_x..self.block_x + BLOCK_SIZE {
                pixels[base + col as usize] = BLOCK_COLOR;
            }
        }
        Frame::from_pixels(pixels).expect("rendered frame is always valid")
    }
}

impl Default for MiniCatch {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MiniCatch {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        self.bucket_x = BUCKET_X_MAX / 2;
        self.drops_done = 0;
        self.respawn_pending = false;
        self.rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ SEED_SALT));
        self.spawn_block();
        self.over = false;
        Ok(self.render())
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        if action >= 18 {
            return Err(Error::Config {
                detail: format!("action {action} outside the 18-action set"),
            });
        }

        // Bucket: 1 = left, 2 = right, everything else holds still.
        self.bucket_x = match action {
            1 => (self.bucket_x - BUCKET_SPEED).max(0),
            2 => (self.bucket_x + BUCKET_SPEED).min(BUCKET_X_MAX),
            _ => self.bucket_x,
        };

        let mut reward = 0.0;
        if self.respawn_pending {
            self.respawn_pending = false;
            self.spawn_block();
        } else {
            self.block_y += FALL_SPEED;
            if self.block_y == CATCH_ROW {
                reward = if self.block_overlaps_bucket() { 1.0 } else { -1.0 };
                self.drops_done += 1;
                self.respawn_pending = true;
            }
        }

        let terminal = self.drops_done >= DROPS_PER_EPISODE;
        self.over = terminal;
        Ok(StepOutcome {
            frame: self.render(),
            reward,
            terminal,
            frames_elapsed: 1,
        })
    }

    fn minimal_actions(&self) -> &[u8] {
        &[0, 1, 2]
    }
}
