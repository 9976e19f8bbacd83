//! MiniPong: a deterministic two-paddle toy game on the standard screen.
//!
//! The player's paddle (color 10) sits on the right, a scripted opponent
//! (color 20) on the left, and a 2x2 ball (color 30) bounces between them.
//! Serves always head toward the player and are aimed away from the court
//! center, so a paddle that never moves never touches the ball: the do-
//! nothing policy loses every rally. The opponent tracks the ball only over
//! the left half of the court at a capped speed. Player returns race back
//! at several columns per frame — and every further touch in the same rally
//! adds pace — while the opponent's returns drift back at serve speed, so
//! successful returns pay off quickly, defense stays easy, and the
//! opponent's shrinking reaction window guarantees every rally ends. First
//! side to five points ends the episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{splitmix64, Environment, StepOutcome};
use crate::screen::{Frame, HEIGHT, WIDTH};
use crate::{Error, Result};

const BACKGROUND: u8 = 0;
const PLAYER_COLOR: u8 = 10;
const OPPONENT_COLOR: u8 = 20;
const BALL_COLOR: u8 = 30;

const PADDLE_W: i32 = 4;
const PADDLE_H: i32 = 16;
const PLAYER_X: i32 = 150;
const OPPONENT_X: i32 = 6;
const PADDLE_TOP_MAX: i32 = HEIGHT as i32 - PADDLE_H; // 194
/// Two pixels per frame: across a five-frame action hold that is a 10-pixel
/// jump, comfortably inside the 17-row contact window, so a policy that
/// merely chases the ball can still stop on it.
const PLAYER_SPEED: i32 = 2;
const OPPONENT_SPEED: i32 = 2;
const CENTER_TOP: i32 = PADDLE_TOP_MAX / 2; // 97

const BALL_SIZE: i32 = 2;
const BALL_TOP_MAX: i32 = HEIGHT as i32 - BALL_SIZE; // 208
/// Ball columns where it meets a paddle face. The ball clamps to the plane
/// on the frame its flight reaches or passes it.
const PLAYER_PLANE: i32 = PLAYER_X - BALL_SIZE; // 148
const OPPONENT_PLANE: i32 = OPPONENT_X + PADDLE_W; // 10
const SERVE_X: i32 = 80;
const SERVE_SPEED: i32 = 1;
/// Player returns start at RETURN_SPEED_BASE + 1 columns per frame and each
/// further touch in the same rally adds one, up to this cap.
const RETURN_SPEED_BASE: i32 = 3;
const BALL_SPEED_MAX: i32 = 6;

const WINNING_SCORE: u32 = 5;
const SEED_SALT: u64 = 0x6d69_6e69_706f_6e67; // "minipong"

/// Serve placements (initial ball top, vertical velocity). Serves travel
/// right for PLAYER_PLANE - SERVE_X = 68 frames, so an untouched ball
/// arrives at top + 68 * vy — one of {138, 164, 64, 44, 70, 140, 68, 40}.
/// Every arrival sits at least 22 rows outside the centered paddle's
/// contact window [96, 112] (the do-nothing policy misses them all) yet
/// within 65 rows of the paddle center, close enough for a chasing paddle
/// to reach in time.
const SERVES: [(i32, i32); 8] = [
    (70, 1),
    (96, 1),
    (132, -1),
    (112, -1),
    (2, 1),
    (72, 1),
    (136, -1),
    (108, -1),
];

pub struct MiniPong {
    player_top: i32,
    opponent_top: i32,
    ball_x: i32,
    ball_y: i32,
    vx: i32,
    vy: i32,
    rally_touches: i32,
    player_score: u32,
    opponent_score: u32,
    rng: ChaCha8Rng,
    over: bool,
}

impl MiniPong {
    pub fn new() -> Self {
        MiniPong {
            player_top: CENTER_TOP,
            opponent_top: CENTER_TOP,
            ball_x: SERVE_X,
            ball_y: CENTER_TOP,
            vx: SERVE_SPEED,
            vy: 1,
            rally_touches: 0,
            player_score: 0,
            opponent_score: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            over: true,
        }
    }

    fn serve(&mut self) {
        let (top, vy) = SERVES[self.rng.gen_range(0..SERVES.len())];
        self.ball_x = SERVE_X;
        self.ball_y = top;
        self.vx = SERVE_SPEED;
        self.vy = vy;
        self.rally_touches = 0;
    }

    /// Vertical velocity after a paddle hit, from the contact offset
    /// (twice the ball center minus twice the paddle center): the middle of
    /// the paddle returns shallow balls, the edges steeper ones. Never
    /// zero, so every ball drifts and rallies cannot settle into a flat
    /// loop.
    fn spin(ball_y: i32, paddle_top: i32) -> i32 {
        let offset2 = (2 * ball_y + 1) - (2 * paddle_top + PADDLE_H - 1);
        if offset2 >= 10 {
            2
        } else if offset2 >= 0 {
            1
        } else if offset2 > -10 {
            -1
        } else {
            -2
        }
    }

    fn touches(ball_y: i32, paddle_top: i32) -> bool {
        ball_y + BALL_SIZE - 1 >= paddle_top && ball_y <= paddle_top + PADDLE_H - 1
    }

    fn move_toward(top: i32, target: i32, speed: i32) -> i32 {
        let step = (target - top).clamp(-speed, speed);
        (top + step).clamp(0, PADDLE_TOP_MAX)
    }

    fn render(&self) -> Frame {
        let mut pixels = vec![BACKGROUND; WIDTH * HEIGHT];
        draw_rect(
            &mut pixels,
            OPPONENT_X,
            self.opponent_top,
            PADDLE_W,
            PADDLE_H,
            OPPONENT_COLOR,
        );
        draw_rect(
            &mut pixels,
            PLAYER_X,
            self.player_top,
            PADDLE_W,
            PADDLE_H,
            PLAYER_COLOR,
        );
        draw_rect(
            &mut pixels,
            self.ball_x,
            self.ball_y,
            BALL_SIZE,
            BALL_SIZE,
            BALL_COLOR,
        );
        Frame::from_pixels(pixels).expect("rendered frame is always valid")
    }
}

impl Default for MiniPong {
    fn default() -> Self {
        Self::new()
    }
}

fn draw_rect(pixels: &mut [u8], x: i32, y: i32, w: i32, h: i32, color: u8) {
    for row in y..y + h {
        let base = row as usize * WIDTH;
        for col in x..x + w {
            pixels[base + col as usize] = color;
        }
    }
}

impl Environment for MiniPong {
    fn reset(&mut self, seed: u64) -> Result<Frame> {
        self.player_top = CENTER_TOP;
        self.opponent_top = CENTER_TOP;
        self.player_score = 0;
        self.opponent_score = 0;
        self.rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ SEED_SALT));
        self.serve();
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

        // Player: 1 = up, 2 = down, everything else holds still.
        self.player_top = match action {
            1 => (self.player_top - PLAYER_SPEED).max(0),
            2 => (self.player_top + PLAYER_SPEED).min(PADDLE_TOP_MAX),
            _ => self.player_top,
        };

        // Opponent: chases the ball while it approaches over the left half,
        // otherwise drifts back to center.
        let target = if self.vx < 0 && self.ball_x < 80 {
            (self.ball_y - PADDLE_H / 2 + 1).clamp(0, PADDLE_TOP_MAX)
        } else {
            CENTER_TOP
        };
        self.opponent_top = Self::move_toward(self.opponent_top, target, OPPONENT_SPEED);

        // Ball flight with wall reflection.
        self.ball_x += self.vx;
        self.ball_y += self.vy;
        if self.ball_y < 0 {
            self.ball_y = -self.ball_y;
            self.vy = -self.vy;
        } else if self.ball_y > BALL_TOP_MAX {
            self.ball_y = 2 * BALL_TOP_MAX - self.ball_y;
            self.vy = -self.vy;
        }

        let mut reward = 0.0;
        if self.vx > 0 && self.ball_x >= PLAYER_PLANE {
            self.ball_x = PLAYER_PLANE;
            if Self::touches(self.ball_y, self.player_top) {
                // A return races back much faster than it came in, and each
                // further touch in the rally adds pace, so the opponent's
                // reaction window keeps shrinking and the rally must end.
                self.rally_touches += 1;
                self.vx = -(RETURN_SPEED_BASE + self.rally_touches).min(BALL_SPEED_MAX);
                self.vy = Self::spin(self.ball_y, self.player_top);
            } else {
                self.opponent_score += 1;
                reward = -1.0;
                if self.opponent_score < WINNING_SCORE {
                    self.serve();
                }
            }
        } else if self.vx < 0 && self.ball_x <= OPPONENT_PLANE {
            self.ball_x = OPPONENT_PLANE;
            if Self::touches(self.ball_y, self.opponent_top) {
                // The opponent only ever lobs the ball back at serve pace,
                // leaving the player plenty of time to line up.
                self.vx = SERVE_SPEED;
                self.vy = Self::spin(self.ball_y, self.opponent_top);
            } else {
                self.player_score += 1;
                reward = 1.0;
                if self.player_score < WINNING_SCORE {
                    self.serve();
                }
            }
        }

        let terminal =
            self.player_score >= WINNING_SCORE || self.opponent_score >= WINNING_SCORE;
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

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(env: &mut MiniPong, seed: u64, mut policy: impl FnMut(&Frame) -> u8) -> (f64, u32) {
        let mut frame = env.reset(seed).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let out = env.step(policy(&frame)).unwrap();
            total += out.reward;
            steps += 1;
            if out.terminal {
                return (total, steps);
            }
            frame = out.frame;
            assert!(steps < 200_000, "episode did not terminate");
        }
    }

    /// Topmost row of the given color, or None if absent.
    fn top_of_color(frame: &Frame, color: u8) -> Option<usize> {
        (0..HEIGHT).find(|&y| (0..WIDTH).any(|x| frame.get(x, y) == color))
    }

    #[test]
    fn doing_nothing_loses_every_rally() {
        let mut env = MiniPong::new();
        for seed in [0u64, 1, 7, 99, 12345] {
            let (total, steps) = rollout(&mut env, seed, |_| 0);
            assert_eq!(total, -5.0, "seed {seed}");
            assert_eq!(steps, 340, "seed {seed}: 5 rallies of 68 frames each");
        }
    }

    /// Pixel-only policy that keeps the paddle centered on the ball.
    fn tracker(frame: &Frame) -> u8 {
        let ball = top_of_color(frame, BALL_COLOR);
        let paddle = top_of_color(frame, PLAYER_COLOR);
        match (ball, paddle) {
            (Some(b), Some(p)) => {
                let target = b as i32 - PADDLE_H / 2 + 1;
                if (p as i32) > target {
                    1
                } else if (p as i32) < target {
                    2
                } else {
                    0
                }
            }
            _ => 0,
        }
    }

    #[test]
    fn tracking_the_ball_beats_the_opponent() {
        let mut env = MiniPong::new();
        let mut total = 0.0;
        let mut longest = 0;
        for seed in 0..8u64 {
            let (score, steps) = rollout(&mut env, seed, tracker);
            assert!(score >= -3.0, "seed {seed}: tracker collapsed to {score}");
            total += score;
            longest = longest.max(steps);
        }
        assert!(
            total >= 8.0,
            "tracker averaged {} per episode",
            total / 8.0
        );
        assert!(longest < 50_000, "rallies must keep ending");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed: u64| {
            let mut env = MiniPong::new();
            let mut frames = vec![env.reset(seed).unwrap().as_bytes().to_vec()];
            let mut rewards = Vec::new();
            for i in 0..300u32 {
                let out = env.step((i % 3) as u8).unwrap();
                frames.push(out.frame.as_bytes().to_vec());
                rewards.push(out.reward);
                if out.terminal {
                    break;
                }
            }
            (frames, rewards)
        };
        assert_eq!(run(11), run(11));
        let (a, _) = run(11);
        let (b, _) = run(12);
        assert_ne!(a, b, "different seeds should serve differently");
    }

    #[test]
    fn frames_contain_exactly_the_three_sprites() {
        let mut env = MiniPong::new();
        let frame = env.reset(5).unwrap();
        let mut counts = [0u32; 128];
        for &p in frame.as_bytes() {
            counts[p as usize] += 1;
        }
        assert_eq!(counts[PLAYER_COLOR as usize], 64);
        assert_eq!(counts[OPPONENT_COLOR as usize], 64);
        assert_eq!(counts[BALL_COLOR as usize], 4);
        let total: u32 = counts.iter().sum();
        assert_eq!(counts[BACKGROUND as usize], total - 132);
    }

    #[test]
    fn sprites_stay_inside_the_court() {
        let mut env = MiniPong::new();
        env.reset(17).unwrap();
        let mut rng_action = 0u32;
        for _ in 0..20_000 {
            rng_action = rng_action.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            let out = env.step(((rng_action >> 16) % 3) as u8).unwrap();
            assert!((OPPONENT_PLANE..=PLAYER_PLANE).contains(&env.ball_x));
            assert!((0..=BALL_TOP_MAX).contains(&env.ball_y));
            assert!((0..=PADDLE_TOP_MAX).contains(&env.player_top));
            assert!((0..=PADDLE_TOP_MAX).contains(&env.opponent_top));
            if out.terminal {
                env.reset(rng_action as u64).unwrap();
            }
        }
    }

    #[test]
    fn serves_vary_with_the_seed() {
        let mut env = MiniPong::new();
        let mut tops = std::collections::BTreeSet::new();
        for seed in 0..50u64 {
            let frame = env.reset(seed).unwrap();
            tops.insert(top_of_color(&frame, BALL_COLOR).unwrap());
        }
        assert!(tops.len() >= 3, "only {} distinct serve rows", tops.len());
    }

    #[test]
    fn stepping_a_finished_episode_is_an_error() {
        let mut env = MiniPong::new();
        assert!(matches!(env.step(0), Err(Error::EpisodeOver)));
        env.reset(0).unwrap();
        loop {
            if env.step(0).unwrap().terminal {
                break;
            }
        }
        assert!(matches!(env.step(0), Err(Error::EpisodeOver)));
        env.reset(1).unwrap();
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn out_of_range_actions_are_rejected() {
        let mut env = MiniPong::new();
        env.reset(0).unwrap();
        assert!(matches!(env.step(18), Err(Error::Config { .. })));
        assert!(env.step(17).is_ok(), "action 17 aliases no-op");
    }
}
