//! Scene generators for fixtures and randomized tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Background, Person, SceneDescription};

fn distinct_codes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    let mut codes: Vec<u64> = (0..=0xFFFFu64).collect();
    codes.shuffle(rng);
    codes.truncate(n);
    codes
}

/// Seated classroom: rows of students 3 deg apart in elevation, spread
/// evenly over the span with a little seeded jitter. Every person carries an
/// identity label `student-NNN` and a distinct 16-bit appearance code.
pub fn generate_classroom(n: usize, span_deg: (f64, f64), seed: u64) -> SceneDescription {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = distinct_codes(&mut rng, n);
    let rows = ((n as f64 / 3.3).sqrt().round() as usize).clamp(1, 7);
    let cols = n.div_ceil(rows).max(1);
    let face = 2.0;
    let margin = 2.5;
    let (lo, hi) = span_deg;
    let az_step = if cols > 1 {
        (hi - lo - 2.0 * margin) / (cols - 1) as f64
    } else {
        0.0
    };
    let persons = (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let base_az = if cols > 1 {
                lo + margin + az_step * c as f64
            } else {
                (lo + hi) / 2.0
            };
            let el = (r as f64 - (rows - 1) as f64 / 2.0) * 3.0;
            Person {
                person_id: format!("p{i:03}"),
                azimuth_deg: base_az + rng.random_range(-0.3..0.3),
                elevation_deg: el + rng.random_range(-0.2..0.2),
                face_size_deg: face,
                identity_label: Some(format!("student-{i:03}")),
                appearance_seed: codes[i],
            }
        })
        .collect();
    SceneDescription {
        span_deg,
        background: Background::Procedural { seed },
        persons,
    }
}

/// Randomly placed faces whose azimuth extents are pairwise separated by at
/// least `min_gap_deg`. Sizes are drawn from `[1.5, 3.0]` deg. Placement gives
/// up after a bounded number of attempts, so fewer than `n` persons may be
/// returned for crowded requests.
pub fn random_scene(n: usize, span_deg: (f64, f64), min_gap_deg: f64, seed: u64) -> SceneDescription {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = distinct_codes(&mut rng, n);
    let (lo, hi) = span_deg;
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let mut persons = Vec::new();
    let mut attempts = 0;
    while persons.len() < n && attempts < 200 * n.max(1) {
        attempts += 1;
        let size: f64 = rng.random_range(1.5..3.0);
        let az: f64 = rng.random_range(lo + size..hi - size);
        let (a0, a1) = (az - size / 2.0, az + size / 2.0);
        if placed
            .iter()
            .any(|&(b0, b1)| a0 < b1 + min_gap_deg && b0 < a1 + min_gap_deg)
        {
            continue;
        }
        placed.push((a0, a1));
        let i = persons.len();
        persons.push(Person {
            person_id: format!("r{i:03}"),
            azimuth_deg: az,
            elevation_deg: rng.random_range(-7.0..7.0),
            face_size_deg: size,
            identity_label: Some(format!("id-{i:03}")),
            appearance_seed: codes[i],
        });
    }
    SceneDescription {
        span_deg,
        background: Background::Procedural { seed },
        persons,
    }
}
