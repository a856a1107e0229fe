//! Procedural multi-contrast phantoms.
//!
//! Every case shares one geometry across its three images: a skull ring, a
//! brain region with nested tissue ellipses, and one to three lesions. `x1`
//! and `x2` render the label map through different intensity tables; `y`
//! renders it through a remapped copy of the `x1` table and then brightens
//! the lesions, strongly on a two-pixel inner rim and mildly in the core.
//! Lesion contrast in `x1`/`x2` is drawn per lesion and can be faint, so the
//! inputs alone do not always reveal where enhancement happens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpg::Mask;
use crate::rng::{derive, Stream};
use crate::tensor::Tensor;

/// Tissue labels, in table order.
pub const BACKGROUND: usize = 0;
pub const SKULL: usize = 1;
pub const BRAIN: usize = 2;
pub const LESION: usize = 6;
pub const LABELS: usize = 7;

const RIM_WIDTH: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub resolution: usize,
    /// Tissue regions inside the skull, the brain itself included.
    pub tissue_count: (usize, usize),
    pub lesion_count: (usize, usize),
    /// Lesion semi-axis range in pixels.
    pub lesion_radius: (f64, f64),
    /// Lesion contrast in the inputs, as a fraction of the table contrast.
    pub lesion_visibility: (f64, f64),
    pub table_x1: [f64; LABELS],
    pub table_x2: [f64; LABELS],
    /// Target intensities outside lesions.
    pub table_y: [f64; LABELS],
    pub noise_std: f64,
    pub rim_gain: f64,
    pub core_gain: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            tissue_count: (2, 4),
            lesion_count: (1, 3),
            lesion_radius: (3.0, 6.5),
            lesion_visibility: (0.15, 1.0),
            table_x1: [-1.0, 0.6, 0.2, -0.1, 0.35, -0.3, -0.25],
            table_x2: [-1.0, -0.3, -0.1, 0.3, -0.2, 0.55, 0.5],
            table_y: [-1.0, 0.5, 0.3, -0.05, 0.45, -0.2, 0.0],
            noise_std: 0.02,
            rim_gain: 0.5,
            core_gain: 0.15,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.resolution < 16 {
            return bad("resolution must be at least 16");
        }
        let ranges = [self.tissue_count, self.lesion_count];
        if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) || self.tissue_count.1 > 4 {
            return bad("count ranges must satisfy 1 ≤ lo ≤ hi (at most 4 tissues)");
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 >= 1.0 && r0 <= r1 && r1 < self.resolution as f64 / 6.0) {
            return bad("lesion radius range must lie in [1, resolution/6)");
        }
        let (v0, v1) = self.lesion_visibility;
        if !(0.0..=1.0).contains(&v0) || !(v0..=1.0).contains(&v1) {
            return bad("lesion visibility range must lie in [0, 1]");
        }
        let tables = [&self.table_x1, &self.table_x2, &self.table_y];
        if tables.iter().flat_map(|t| t.iter()).any(|v| !(-1.0..=1.0).contains(v)) {
            return bad("intensity tables must map into [-1, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        if !(self.rim_gain.is_finite() && self.core_gain.is_finite()) {
            return bad("gains must be finite");
        }
        Ok(())
    }
}

/// One paired case. Images are `[1, 1, H, W]` in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub index: usize,
    pub x1: Tensor,
    pub x2: Tensor,
    pub y: Tensor,
    pub lesion: Mask,
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Self {
        Self { cx, cy, a, b, cos: theta.cos(), sin: theta.sin() }
    }

    fn scaled(&self, f: f64) -> Self {
        Self { a: self.a * f, b: self.b * f, ..*self }
    }

    /// Normalized radius squared; ≤ 1 inside.
    fn level(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }
}

/// Geometry of one case: a label per pixel plus per-lesion ids and
/// visibilities.
struct Layout {
    labels: Vec<usize>,
    lesion_id: Vec<usize>,
    visibility: Vec<f64>,
}

fn layout(spec: &PhantomSpec, s: &mut Stream) -> Layout {
    let n = spec.resolution;
    // pixel centres in [−1, 1]
    let coord = |i: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    let skull = Ellipse::new(
        s.uniform_in(-0.04, 0.04),
        s.uniform_in(-0.04, 0.04),
        s.uniform_in(0.82, 0.94),
        s.uniform_in(0.72, 0.88),
        s.uniform_in(-0.3, 0.3),
    );
    let brain = skull.scaled(s.uniform_in(0.84, 0.9));
    let mut tissues = Vec::new();
    let extra = s.range_inclusive(spec.tissue_count.0, spec.tissue_count.1) - 1;
    for k in 0..extra {
        let scale = s.uniform_in(0.3, 0.6);
        let (ox, oy) = (s.uniform_in(-0.3, 0.3), s.uniform_in(-0.3, 0.3));
        let e = Ellipse::new(
            brain.cx + ox * brain.a,
            brain.cy + oy * brain.b,
            brain.a * scale * s.uniform_in(0.7, 1.0),
            brain.b * scale * s.uniform_in(0.7, 1.0),
            s.uniform_in(0.0, std::f64::consts::PI),
        );
        tissues.push((BRAIN + 1 + k, e));
    }
    let mut labels = vec![BACKGROUND; n * n];
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (coord(c), coord(r));
            let mut l = BACKGROUND;
            if skull.contains(x, y) {
                l = SKULL;
            }
            if brain.contains(x, y) {
                l = BRAIN;
                for (lab, e) in &tissues {
                    if e.contains(x, y) {
                        l = *lab;
                    }
                }
            }
            labels[r * n + c] = l;
        }
    }
    let mut lesion_id = vec![0usize; n * n];
    let mut visibility = Vec::new();
    let count = s.range_inclusive(spec.lesion_count.0, spec.lesion_count.1);
    let px = 2.0 / n as f64;
    let interior = brain.scaled(0.85);
    for id in 1..=count {
        // rejection-sample a centre well inside the brain
        let (cx, cy) = loop {
            let (x, y) = (s.uniform_in(-1.0, 1.0), s.uniform_in(-1.0, 1.0));
            if interior.contains(x, y) {
                break (x, y);
            }
        };
        let ra = s.uniform_in(spec.lesion_radius.0, spec.lesion_radius.1) * px;
        let rb = ra * s.uniform_in(0.75, 1.0);
        let e = Ellipse::new(cx, cy, ra, rb, s.uniform_in(0.0, std::f64::consts::PI));
        visibility.push(s.uniform_in(spec.lesion_visibility.0, spec.lesion_visibility.1));
        for r in 0..n {
            for c in 0..n {
                let (x, y) = (coord(c), coord(r));
                if e.contains(x, y) && brain.contains(x, y) {
                    labels[r * n + c] = LESION;
                    lesion_id[r * n + c] = id;
                }
            }
        }
    }
    // a lesion smaller than a pixel would leave an empty mask
    if !labels.contains(&LESION) {
        let (r, c) = (n / 2, n / 2);
        labels[r * n + c] = LESION;
        lesion_id[r * n + c] = 1;
    }
    Layout { labels, lesion_id, visibility }
}

/// Lesion pixels within `RIM_WIDTH` 8-connected steps of a non-lesion pixel.
pub fn lesion_rim(lesion: &Mask) -> Mask {
    let (h, w) = (lesion.height(), lesion.width());
    let r = RIM_WIDTH as isize;
    Mask::from_fn(h, w, |y, x| {
        if !lesion.get(y, x) {
            return false;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize || !lesion.get(yy as usize, xx as usize) {
                    return true;
                }
            }
        }
        false
    })
}

/// Deterministic in `(spec.seed, index)`.
pub fn generate_case(spec: &PhantomSpec, index: usize) -> Result<PhantomCase> {
    spec.validate()?;
    let n = spec.resolution;
    let mut geo = Stream::new(derive(spec.seed, &[0x6765_6f6d, index as u64]));
    let lay = layout(spec, &mut geo);
    let lesion = Mask::from_fn(n, n, |r, c| lay.labels[r * n + c] == LESION);
    let rim = lesion_rim(&lesion);

    let render = |table: &[f64; LABELS], i: usize| -> f64 {
        let l = lay.labels[i];
        if l != LESION {
            return table[l];
        }
        // the lesion shows through with its own visibility over brain tissue
        let v = lay.visibility[lay.lesion_id[i] - 1];
        table[BRAIN] + v * (table[LESION] - table[BRAIN])
    };
    let clean_x1: Vec<f64> = (0..n * n).map(|i| render(&spec.table_x1, i)).collect();
    let clean_x2: Vec<f64> = (0..n * n).map(|i| render(&spec.table_x2, i)).collect();
    let clean_y: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            if !lesion.get(r, c) {
                spec.table_y[lay.labels[i]]
            } else if rim.get(r, c) {
                clean_x1[i] + spec.rim_gain
            } else {
                clean_x1[i] + spec.core_gain
            }
        })
        .collect();

    let noisy = |clean: &[f64], tag: u64| -> Tensor {
        let mut s = Stream::new(derive(spec.seed, &[0x6e6f_6973, index as u64, tag]));
        Tensor::from_fn([1, 1, n, n], |i| (clean[i] + spec.noise_std * s.normal()).clamp(-1.0, 1.0) as f32)
    };
    Ok(PhantomCase {
        id: case_id(index),
        index,
        x1: noisy(&clean_x1, 1),
        x2: noisy(&clean_x2, 2),
        y: noisy(&clean_y, 3),
        lesion,
    })
}

/// Affine map of `[min, max]` onto `[−1, 1]`, returned with `(min, max)`
/// for [`denormalize`].
pub fn normalize(img: &Tensor) -> Result<(Tensor, (f64, f64))> {
    img.check_finite("image")?;
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if hi <= lo {
        return Err(Error::ConstantImage);
    }
    Ok((img.map(|v| ((v as f64 - lo) / (hi - lo) * 2.0 - 1.0) as f32), (lo, hi)))
}

pub fn denormalize(img: &Tensor, range: (f64, f64)) -> Tensor {
    let (lo, hi) = range;
    img.map(|v| ((v as f64 + 1.0) / 2.0 * (hi - lo) + lo) as f32)
}
