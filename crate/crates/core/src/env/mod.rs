//! Environment contract, decision-level wrappers, built-in toy games, and
//! the wire protocol client for external emulators.
//!
//! The wrapper stack is always composed in one order: a raw environment is
//! wrapped by no-op starts, then frame skip, then the episode cap. Use
//! [`standard_stack`] to build it; the harness relies on that composition.

mod minicatch;
mod minipong;
mod wire;

pub use minicatch::MiniCatch;
pub use minipong::MiniPong;
pub use wire::{serve_connection, WireEnv};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::screen::Frame;
use crate::{Error, Result};

/// Size of the full joystick action set.
pub const FULL_ACTION_COUNT: u32 = 18;

/// What one environment step produced. `frames_elapsed` counts raw frames,
/// so a frame-skipping wrapper reports the whole window it consumed.
pub struct StepOutcome {
    pub frame: Frame,
    pub reward: f64,
    pub terminal: bool,
    pub frames_elapsed: u32,
}

pub trait Environment {
    /// Start a new episode. Equal seeds and equal action sequences yield
    /// identical frame and reward streams.
    fn reset(&mut self, seed: u64) -> Result<Frame>;

    /// Apply one action. Stepping a finished episode is an error until the
    /// next reset.
    fn step(&mut self, action: u8) -> Result<StepOutcome>;

    /// The subset of raw actions with distinct effects in this game.
    fn minimal_actions(&self) -> &[u8];

    fn full_action_count(&self) -> u32 {
        FULL_ACTION_COUNT
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        (**self).step(action)
    }

    fn minimal_actions(&self) -> &[u8] {
        (**self).minimal_actions()
    }

    fn full_action_count(&self) -> u32 {
        (**self).full_action_count()
    }
}

/// splitmix64: decorrelates seeds derived from a shared base.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const NOOP_SALT: u64 = 0x6e6f_6f70_7374_7274; // "noopstrt"

/// Prepends a uniform-random number of no-op frames (1..=max) to each
/// episode. The draw is derived from the reset seed, so equal seeds still
/// produce identical episodes.
pub struct NoopStart<E> {
    inner: E,
    max_noops: u32,
}

impl<E: Environment> NoopStart<E> {
    pub fn new(inner: E, max_noops: u32) -> Self {
        assert!(max_noops >= 1, "need at least one no-op");
        NoopStart { inner, max_noops }
    }
}

impl<E: Environment> Environment for NoopStart<E> {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        let mut frame = self.inner.reset(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ NOOP_SALT));
        let n = rng.gen_range(1..=self.max_noops);
        for _ in 0..n {
            let outcome = self.inner.step(0)?;
            frame = outcome.frame;
            if outcome.terminal {
                break;
            }
        }
        Ok(frame)
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        self.inner.step(action)
    }

    fn minimal_actions(&self) -> &[u8] {
        self.inner.minimal_actions()
    }

    fn full_action_count(&self) -> u32 {
        self.inner.full_action_count()
    }
}

/// Repeats each chosen action for `x` raw frames (fewer when the episode
/// ends mid-window), summing the rewards. The frame seen at one decision is
/// therefore exactly `x` frames older than the next decision's frame.
pub struct FrameSkip<E> {
    inner: E,
    x: u32,
}

impl<E: Environment> FrameSkip<E> {
    pub fn new(inner: E, x: u32) -> Self {
        assert!(x >= 1, "frame skip must be at least 1");
        FrameSkip { inner, x }
    }
}

impl<E: Environment> Environment for FrameSkip<E> {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        let mut reward = 0.0;
        let mut frames = 0;
        loop {
            let outcome = self.inner.step(action)?;
            reward += outcome.reward;
            frames += outcome.frames_elapsed;
            if outcome.terminal || frames >= self.x {
                return Ok(StepOutcome {
                    frame: outcome.frame,
                    reward,
                    terminal: outcome.terminal,
                    frames_elapsed: frames,
                });
            }
        }
    }

    fn minimal_actions(&self) -> &[u8] {
        self.inner.minimal_actions()
    }

    fn full_action_count(&self) -> u32 {
        self.inner.full_action_count()
    }
}

/// Forces terminal once the episode has consumed `max_frames` raw frames.
/// The cap counts frames, not decisions; no-op start frames precede the
/// episode proper and are not counted.
pub struct EpisodeCap<E> {
    inner: E,
    max_frames: u32,
    frames: u32,
    over: bool,
}

impl<E: Environment> EpisodeCap<E> {
    pub fn new(inner: E, max_frames: u32) -> Self {
        assert!(max_frames >= 1, "episode cap must be at least 1");
        EpisodeCap {
            inner,
            max_frames,
            frames: 0,
            over: true,
        }
    }
}

impl<E: Environment> Environment for EpisodeCap<E> {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        let frame = self.inner.reset(seed)?;
        self.frames = 0;
        self.over = false;
        Ok(frame)
    }

    fn step(&mut self, action: u8) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        let mut outcome = self.inner.step(action)?;
        self.frames += outcome.frames_elapsed;
        if self.frames >= self.max_frames {
            outcome.terminal = true;
        }
        self.over = outcome.terminal;
        Ok(outcome)
    }

    fn minimal_actions(&self) -> &[u8] {
        self.inner.minimal_actions()
    }

    fn full_action_count(&self) -> u32 {
        self.inner.full_action_count()
    }
}

/// The fixed wrapper composition: raw env, then no-op starts, then frame
/// skip, then the episode cap.
pub fn standard_stack<E: Environment>(
    env: E,
    max_noops: u32,
    frame_skip: u32,
    episode_cap: u32,
) -> EpisodeCap<FrameSkip<NoopStart<E>>> {
    EpisodeCap::new(
        FrameSkip::new(NoopStart::new(env, max_noops), frame_skip),
        episode_cap,
    )
}

/// Build a raw environment from its name:
/// `minipong`, `minicatch`, `tcp:HOST:PORT` (wire protocol over TCP), or
/// `exec:CMD ARGS...` (wire protocol over a child process's stdio).
pub fn make_env(spec: &str) -> Result<Box<dyn Environment + Send>> {
    if spec == "minipong" {
        return Ok(Box::new(MiniPong::new()));
    }
    if spec == "minicatch" {
        return Ok(Box::new(MiniCatch::new()));
    }
    // Connection problems surface as handshake errors naming the address.
    let at_address = |e: Error| match e {
        Error::Handshake { detail } => Error::Handshake {
            detail: format!("{spec}: {detail}"),
        },
        other => Error::Handshake {
            detail: format!("{spec}: {other}"),
        },
    };
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Box::new(WireEnv::connect_tcp(addr).map_err(at_address)?));
    }
    if let Some(cmd) = spec.strip_prefix("exec:") {
        return Ok(Box::new(WireEnv::spawn(cmd).map_err(at_address)?));
    }
    Err(Error::UnknownEnv(spec.to_string()))
}
