//! Throughput benchmarks for the hot path: blob detection, feature
//! extraction, and the Sarsa update, measured on real game frames and on
//! synthetic loads sized like a busy arcade screen.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsa::agent::{Hyperparams, LinearQ, Transition, DEFAULT_TRACE_FLOOR};
use sparsa::blobs::detect_blobs;
use sparsa::env::make_env;
use sparsa::features::{ActiveFeatureSet, Extractor, FeatureSet};
use sparsa::screen::{BackgroundAccumulator, Frame, HEIGHT, WIDTH};

/// Frames of random play, restarting whenever an episode ends.
fn game_frames(env_name: &str, count: usize) -> Vec<Frame> {
    let mut env = make_env(env_name).expect("built-in game");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let actions = env.minimal_actions().to_vec();
    let mut frames = vec![env.reset(rng.gen()).expect("reset")];
    while frames.len() < count {
        let out = env
            .step(actions[rng.gen_range(0..actions.len())])
            .expect("step");
        let terminal = out.terminal;
        frames.push(out.frame);
        if terminal {
            frames.push(env.reset(rng.gen()).expect("reset"));
        }
    }
    frames.truncate(count);
    frames
}

/// A frame with `pixels` random colored pixels: a much busier screen than
/// any toy game produces, close to the blob detector's worst case.
fn scattered_frame(pixels: usize) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut data = vec![0u8; WIDTH * HEIGHT];
    for _ in 0..pixels {
        let x = rng.gen_range(0..WIDTH);
        let y = rng.gen_range(0..HEIGHT);
        data[y * WIDTH + x] = rng.gen_range(1..100);
    }
    Frame::from_pixels(data).expect("valid frame")
}

fn bench_blob_detection(c: &mut Criterion) {
    let mut group = c.benchmark_group("detect_blobs");
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(2));

    let pong = game_frames("minipong", 40);
    let mut i = 0;
    group.bench_function("minipong", |b| {
        b.iter(|| {
            i = (i + 1) % pong.len();
            black_box(detect_blobs(&pong[i], 6))
        })
    });

    let busy = scattered_frame(200);
    group.bench_function("scatter200", |b| b.iter(|| black_box(detect_blobs(&busy, 6))));
    group.finish();
}

fn extractor_for(set: FeatureSet, frames: &[Frame]) -> Extractor {
    let background = if set.requires_background() {
        let mut acc = BackgroundAccumulator::new();
        for frame in frames {
            acc.add(frame);
        }
        Some(acc.finish().expect("nonempty sample"))
    } else {
        None
    };
    Extractor::new(set, background, 6).expect("valid extractor")
}

fn bench_extraction(c: &mut Criterion) {
    let mut group = c.benchmark_group("extract_next");
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(2));

    let frames = game_frames("minipong", 256);
    for set in [FeatureSet::Basic, FeatureSet::BlobProst] {
        let mut extractor = extractor_for(set, &frames);
        extractor.begin_episode();
        let mut i = 0;
        group.bench_function(set.name(), |b| {
            b.iter(|| {
                i = (i + 1) % frames.len();
                black_box(extractor.extract_next(&frames[i]))
            })
        });
    }
    group.finish();
}

/// A sorted random feature set in the widest id space.
fn synthetic_state(rng: &mut ChaCha8Rng, active: usize) -> ActiveFeatureSet {
    let ids: Vec<u64> = (0..active)
        .map(|_| rng.gen_range(0..114_702_400u64))
        .collect();
    ActiveFeatureSet::from_unsorted(ids)
}

fn bench_sarsa_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("sarsa_update");
    group.warm_up_time(Duration::from_millis(500));
    group.measurement_time(Duration::from_secs(2));

    // Toy-game scale and arcade scale: actions x active features.
    for (label, actions, active) in [("3x20", 3usize, 20usize), ("18x600", 18, 600)] {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let states: Vec<ActiveFeatureSet> =
            (0..16).map(|_| synthetic_state(&mut rng, active)).collect();
        let mut agent = LinearQ::new(actions, Hyperparams::default(), true, DEFAULT_TRACE_FLOOR);
        let mut i = 0;
        group.bench_function(label, |b| {
            b.iter(|| {
                let state = &states[i % states.len()];
                let next = &states[(i + 1) % states.len()];
                agent.sarsa_update(&Transition {
                    state,
                    action: i % actions,
                    reward: if i % 64 == 0 { 1.0 } else { 0.0 },
                    next_state: next,
                    next_action: (i + 1) % actions,
                    terminal: i % 256 == 255,
                });
                i += 1;
                black_box(agent.slot_count())
            })
        });
    }
    group.finish();
}

criterion_group!(
    pipeline,
    bench_blob_detection,
    bench_extraction,
    bench_sarsa_update
);
criterion_main!(pipeline);
