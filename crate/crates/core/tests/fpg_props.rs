use std::collections::HashSet;

use proptest::prelude::*;
use tlp_core::fpg::{build_kernel_set, generate_prompt, scale_step, Mask, PromptConfig, ScaleMode};
use tlp_core::rng::Stream;

type Pixels = HashSet<(i64, i64)>;

fn pixels(m: &Mask) -> Pixels {
    let mut s = HashSet::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(y, x) {
                s.insert((y as i64, x as i64));
            }
        }
    }
    s
}

fn offsets(kernel: usize) -> Vec<(i64, i64)> {
    let k = build_kernel_set().get(kernel).to_owned();
    let mut o = Vec::new();
    for (i, row) in k.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == 1 {
                o.push((i as i64 - 1, j as i64 - 1));
            }
        }
    }
    o
}

/// Set morphology by counting offset hits; out-of-frame pixels are absent.
/// Erosion keeps only pixels already in the set.
fn oracle_step(set: &Pixels, h: usize, w: usize, kernel: usize, dilate: bool) -> Pixels {
    let offs = offsets(kernel);
    let need = if dilate { 1 } else { 2 };
    let mut out = HashSet::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let hits = offs.iter().filter(|(dy, dx)| set.contains(&(y + dy, x + dx))).count();
            if hits >= need && (dilate || set.contains(&(y, x))) {
                out.insert((y, x));
            }
        }
    }
    out
}

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..12, 1usize..12, any::<u64>(), 0.05f64..0.6).prop_map(|(h, w, seed, density)| {
        let mut s = Stream::new(seed);
        Mask::from_fn(h, w, |_, _| s.uniform() < density)
    })
}

proptest! {
    #[test]
    fn scale_step_matches_set_oracle(m in mask_strategy(), kernel in 0usize..9, dilate in any::<bool>()) {
        let mode = if dilate { ScaleMode::Dilate } else { ScaleMode::Erode };
        let got = scale_step(&m, build_kernel_set().get(kernel), mode);
        let want = oracle_step(&pixels(&m), m.height(), m.width(), kernel, dilate);
        prop_assert_eq!(pixels(&got), want);
        prop_assert_eq!((got.height(), got.width()), (m.height(), m.width()));
        prop_assert!(got.cells().iter().all(|&c| c <= 1));
    }

    #[test]
    fn pure_dilation_grows(m in mask_strategy(), seed in any::<u64>(), t in 0usize..7) {
        let cfg = PromptConfig { p: 1.0, q: 0.0, t, seed };
        prop_assert!(m.is_subset_of(&generate_prompt(&m, &cfg).unwrap()));
    }

    #[test]
    fn pure_erosion_shrinks(m in mask_strategy(), seed in any::<u64>(), t in 0usize..7) {
        let cfg = PromptConfig { p: 0.0, q: 0.0, t, seed };
        prop_assert!(generate_prompt(&m, &cfg).unwrap().is_subset_of(&m));
    }

    #[test]
    fn prompts_are_deterministic(m in mask_strategy(), seed in any::<u64>()) {
        let cfg = PromptConfig { seed, ..Default::default() };
        prop_assert_eq!(generate_prompt(&m, &cfg).unwrap(), generate_prompt(&m, &cfg).unwrap());
    }
}

#[test]
fn two_dilations_replay_the_documented_draw_order() {
    let label = Mask::from_fn(9, 9, |y, x| (3..5).contains(&y) && (4..6).contains(&x));
    for seed in [7u64, 8, 9, 1234] {
        let cfg = PromptConfig { p: 1.0, q: 0.0, t: 2, seed };
        // replay: drop draw, then (p draw, kernel draw) per round
        let mut s = Stream::new(seed);
        let _drop = s.uniform();
        let mut set = pixels(&label);
        for _ in 0..2 {
            let _p = s.uniform();
            let k = s.below(9);
            set = oracle_step(&set, 9, 9, k, true);
        }
        assert_eq!(pixels(&generate_prompt(&label, &cfg).unwrap()), set, "seed {seed}");
    }
}

#[test]
fn drop_rate_tracks_q() {
    let label = Mask::from_fn(6, 6, |y, x| y == 3 && x == 3);
    let trials = 10_000;
    let dropped = (0..trials)
        .filter(|&seed| {
            let cfg = PromptConfig { seed, t: 0, ..Default::default() };
            generate_prompt(&label, &cfg).unwrap().is_empty()
        })
        .count();
    let freq = dropped as f64 / trials as f64;
    assert!((freq - 0.5).abs() <= 0.02, "{freq}");
}
