//! Fuzzy prompt generation: random morphological scaling of lesion masks.
//!
//! A prompt is produced from a ground-truth lesion mask by either dropping
//! it entirely (probability `q`) or applying `t` rounds of dilation
//! (probability `p`) or erosion with a kernel drawn uniformly from a fixed
//! set of nine 3×3 binary kernels. Each round is a thresholded
//! cross-correlation with zero padding: `> 0` dilates, `> 1` erodes. Erosion
//! additionally keeps only pixels that were already set: for the eight
//! two-pixel kernels this changes nothing, and for the plus kernel it stops
//! an unset pixel with two set neighbours from switching on.
//!
//! Random draws come from [`Stream`] seeded with [`PromptConfig::seed`], in
//! this order: one uniform for the drop test, then per round one uniform for
//! the dilate/erode test followed by one `below(9)` kernel index. Kernel
//! indices 0..8 are the centre-plus-neighbour kernels in row-major order of
//! the neighbour; index 8 is the plus-shaped kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// An H×W binary grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mask {}x{} ({} set)", self.height, self.width, self.count())?;
        if self.height * self.width <= 256 {
            for row in self.cells.chunks(self.width) {
                let line: String = row.iter().map(|&c| if c == 1 { '#' } else { '.' }).collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    /// Builds a mask from cells that must all be 0 or 1.
    pub fn from_cells(height: usize, width: usize, cells: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || cells.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {height}x{width} mask",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|&&c| c > 1) {
            return Err(Error::InvalidConfig(format!("mask cell value {bad} is not binary")));
        }
        Ok(Self { height, width, cells })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(y, x) as u8);
            }
        }
        Self { height, width, cells }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.cells[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Pixel-set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| a <= b)
    }

    /// `[1, 1, H, W]` tensor with values in {0, 1}.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.cells.iter().map(|&c| c as f32).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("extent matches cells")
    }

    /// Reads a mask from a tensor whose trailing two axes are H×W and whose
    /// values are exactly 0 or 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let r = t.rank();
        if r < 2 || t.shape()[..r - 2].iter().any(|&d| d != 1) {
            return Err(Error::ShapeMismatch(format!("mask tensor shape {:?}", t.shape())));
        }
        let (h, w) = (t.shape()[r - 2], t.shape()[r - 1]);
        let mut cells = Vec::with_capacity(h * w);
        for &v in t.data() {
            cells.push(match v {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                other => {
                    return Err(Error::InvalidConfig(format!("mask value {other} is not 0 or 1")))
                }
            });
        }
        Self::from_cells(h, w, cells)
    }
}

pub type Kernel = [[u8; 3]; 3];

/// The nine structuring kernels: centre plus one of the eight neighbours
/// (row-major neighbour order), then the plus shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelSet {
    kernels: [Kernel; 9],
}

impl KernelSet {
    pub fn kernels(&self) -> &[Kernel; 9] {
        &self.kernels
    }

    pub fn get(&self, index: usize) -> &Kernel {
        &self.kernels[index]
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn build_kernel_set() -> KernelSet {
    let mut kernels = [[[0u8; 3]; 3]; 9];
    let mut n = 0;
    for i in 0..3 {
        for j in 0..3 {
            if (i, j) == (1, 1) {
                continue;
            }
            kernels[n][1][1] = 1;
            kernels[n][i][j] = 1;
            n += 1;
        }
    }
    // {1,2,3}² minus the four corners
    for (i, j) in [(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)] {
        kernels[8][i][j] = 1;
    }
    KernelSet { kernels }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Dilate,
    Erode,
}

/// One thresholded correlation of `mask` with `kernel` (zero padding).
/// Erosion never sets a pixel that is unset in `mask`.
pub fn scale_step(mask: &Mask, kernel: &Kernel, mode: ScaleMode) -> Mask {
    let threshold = match mode {
        ScaleMode::Dilate => 0,
        ScaleMode::Erode => 1,
    };
    let (h, w) = (mask.height as isize, mask.width as isize);
    let mut out = Mask::zeros(mask.height, mask.width);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0u8;
            for (ki, row) in kernel.iter().enumerate() {
                let yy = y + ki as isize - 1;
                if yy < 0 || yy >= h {
                    continue;
                }
                for (kj, &kv) in row.iter().enumerate() {
                    let xx = x + kj as isize - 1;
                    if kv == 1 && xx >= 0 && xx < w {
                        acc += mask.cells[(yy * w + xx) as usize];
                    }
                }
            }
            let at = (y * w + x) as usize;
            let keep = mode == ScaleMode::Dilate || mask.cells[at] == 1;
            out.cells[at] = (keep && acc > threshold) as u8;
        }
    }
    out
}

/// Parameters of one prompt draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Probability that a round dilates rather than erodes.
    pub p: f64,
    /// Probability that the prompt is dropped (all zeros).
    pub q: f64,
    /// Number of scaling rounds.
    pub t: usize,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            p: 0.9,
            q: 0.5,
            t: 5,
            seed: 0,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// One recorded scaling round, for inspection and replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleRound {
    pub mode: ScaleMode,
    pub kernel: usize,
}

/// Outcome of a prompt draw with the sequence of rounds that produced it.
#[derive(Clone, Debug)]
pub struct PromptTrace {
    pub prompt: Mask,
    pub dropped: bool,
    pub rounds: Vec<ScaleRound>,
}

pub fn generate_prompt(label: &Mask, cfg: &PromptConfig) -> Result<Mask> {
    Ok(generate_prompt_traced(label, cfg)?.prompt)
}

pub fn generate_prompt_traced(label: &Mask, cfg: &PromptConfig) -> Result<PromptTrace> {
    cfg.validate()?;
    let kernels = build_kernel_set();
    let mut rng = Stream::new(cfg.seed);
    if rng.uniform() < cfg.q {
        return Ok(PromptTrace {
            prompt: Mask::zeros(label.height, label.width),
            dropped: true,
            rounds: Vec::new(),
        });
    }
    let mut current = label.clone();
    let mut rounds = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        let mode = if rng.uniform() < cfg.p {
            ScaleMode::Dilate
        } else {
            ScaleMode::Erode
        };
        let kernel = rng.below(kernels.len());
        current = scale_step(&current, kernels.get(kernel), mode);
        rounds.push(ScaleRound { mode, kernel });
    }
    Ok(PromptTrace {
        prompt: current,
        dropped: false,
        rounds,
    })
}
