//! wasm-bindgen bindings for the browser demo in `www/`: fuzzy prompt
//! generation on a mask, phantom case rendering, and image metrics.
//!
//! Images cross the boundary as row-major `Float32Array`s in [−1, 1] and
//! masks as `Uint8Array`s of 0/1.

use tlp_core::fpg::{generate_prompt_traced, Mask, PromptConfig, ScaleMode};
use tlp_core::metrics::case_metrics;
use tlp_core::phantom::{generate_case, PhantomSpec};
use tlp_core::Tensor;
use wasm_bindgen::prelude::*;

fn js(e: tlp_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn mask_of(cells: &[u8], height: usize, width: usize) -> Result<Mask, JsError> {
    Mask::from_cells(height, width, cells.to_vec()).map_err(js)
}

fn plane(values: &[f32], height: usize, width: usize) -> Result<Tensor, JsError> {
    Tensor::new([1, 1, height, width], values.to_vec()).map_err(js)
}

#[wasm_bindgen]
pub struct Prompt {
    cells: Vec<u8>,
    dropped: bool,
    rounds: String,
}

#[wasm_bindgen]
impl Prompt {
    #[wasm_bindgen(getter)]
    pub fn cells(&self) -> Vec<u8> {
        self.cells.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dropped(&self) -> bool {
        self.dropped
    }

    /// Space-separated rounds such as `d3 e8`: mode initial and kernel index.
    #[wasm_bindgen(getter)]
    pub fn rounds(&self) -> String {
        self.rounds.clone()
    }
}

/// One prompt draw from `label` (0/1 cells, row-major).
#[wasm_bindgen]
pub fn fuzzy_prompt(label: &[u8], height: usize, width: usize, p: f64, q: f64, t: usize, seed: u32) -> Result<Prompt, JsError> {
    let mask = mask_of(label, height, width)?;
    let trace = generate_prompt_traced(&mask, &PromptConfig { p, q, t, seed: seed as u64 }).map_err(js)?;
    let rounds = trace
        .rounds
        .iter()
        .map(|r| format!("{}{}", if r.mode == ScaleMode::Dilate { 'd' } else { 'e' }, r.kernel))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Prompt { cells: trace.prompt.cells().to_vec(), dropped: trace.dropped, rounds })
}

#[wasm_bindgen]
pub struct Phantom {
    size: usize,
    x1: Vec<f32>,
    x2: Vec<f32>,
    y: Vec<f32>,
    lesion: Vec<u8>,
}

#[wasm_bindgen]
impl Phantom {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn x1(&self) -> Vec<f32> {
        self.x1.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn x2(&self) -> Vec<f32> {
        self.x2.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn y(&self) -> Vec<f32> {
        self.y.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn lesion(&self) -> Vec<u8> {
        self.lesion.clone()
    }
}

/// Renders case `index` of the default phantom family with `seed`.
#[wasm_bindgen]
pub fn phantom(index: u32, seed: u32, resolution: usize, noise_std: f64) -> Result<Phantom, JsError> {
    let spec = PhantomSpec { resolution, noise_std, seed: seed as u64, ..Default::default() };
    let c = generate_case(&spec, index as usize).map_err(js)?;
    Ok(Phantom {
        size: resolution,
        x1: c.x1.data().to_vec(),
        x2: c.x2.data().to_vec(),
        y: c.y.data().to_vec(),
        lesion: c.lesion.cells().to_vec(),
    })
}

/// PSNR, SSIM, NMSE and (with a non-empty `lesion`) lesion-region PSNR of
/// `y_hat` against `y`, as a JSON object.
#[wasm_bindgen]
pub fn metrics(y_hat: &[f32], y: &[f32], height: usize, width: usize, lesion: &[u8]) -> Result<String, JsError> {
    let (a, b) = (plane(y_hat, height, width)?, plane(y, height, width)?);
    let mask = if lesion.is_empty() { None } else { Some(mask_of(lesion, height, width)?) };
    let row = case_metrics("demo", &a, &b, mask.as_ref()).map_err(js)?;
    serde_json::to_string(&row).map_err(|e| JsError::new(&e.to_string()))
}

/// `y + sigma·n` with a deterministic standard normal `n`, clamped to [−1, 1].
#[wasm_bindgen]
pub fn perturb(y: &[f32], sigma: f64, seed: u32) -> Vec<f32> {
    let mut s = tlp_core::rng::Stream::new(seed as u64);
    y.iter().map(|&v| (v as f64 + sigma * s.normal()).clamp(-1.0, 1.0) as f32).collect()
}
