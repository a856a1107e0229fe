//! PSNR, SSIM and NMSE.
//!
//! PSNR and SSIM map both images from [−1, 1] to [0, 1] (no clipping) and
//! use a dynamic range of 1. PSNR is capped at 100 dB. SSIM averages the
//! local index over every valid 11×11 Gaussian window (σ = 1.5, K1 = 0.01,
//! K2 = 0.03); images with leading dimensions are treated as a stack of
//! planes. NMSE is `‖ŷ − y‖² / ‖y‖²` on the native scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpg::Mask;
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn unit(v: f32) -> f64 {
    (v as f64 + 1.0) / 2.0
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    same_shape(y_hat, y)?;
    let se: f64 = y_hat.data().iter().zip(y.data()).map(|(&a, &b)| (unit(a) - unit(b)).powi(2)).sum();
    Ok(psnr_from_mse(se / y.numel() as f64))
}

/// PSNR over the pixels selected by `mask` (the last two dimensions of the
/// images must match the mask). An empty mask yields the cap.
pub fn psnr_masked(y_hat: &Tensor, y: &Tensor, mask: &Mask) -> Result<f64> {
    same_shape(y_hat, y)?;
    let plane = mask.height() * mask.width();
    let r = y.rank();
    if r < 2 || y.shape()[r - 2] != mask.height() || y.shape()[r - 1] != mask.width() {
        return Err(Error::ShapeMismatch(format!("mask {}x{} for images {:?}", mask.height(), mask.width(), y.shape())));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for (i, (&a, &b)) in y_hat.data().iter().zip(y.data()).enumerate() {
        if mask.cells()[i % plane] != 0 {
            se += (unit(a) - unit(b)).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { PSNR_CAP_DB } else { psnr_from_mse(se / n as f64) })
}

pub fn nmse(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    same_shape(y_hat, y)?;
    let den: f64 = y.data().iter().map(|&v| (v as f64).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = y_hat.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(num / den)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut t = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in t.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = (0..k).map(|j| taps[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|i| taps[i] * rows[(r + i) * wo + c]).sum();
        }
    }
    out
}

pub fn ssim(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    same_shape(y_hat, y)?;
    let r = y.rank();
    if r < 2 {
        return Err(Error::ShapeMismatch(format!("ssim needs at least 2 dimensions, got {:?}", y.shape())));
    }
    let (h, w) = (y.shape()[r - 2], y.shape()[r - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall(h.min(w), SSIM_WINDOW));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let plane = h * w;
    let (mut total, mut count) = (0.0, 0usize);
    for p in 0..y.numel() / plane {
        let a: Vec<f64> = y_hat.data()[p * plane..(p + 1) * plane].iter().map(|&v| unit(v)).collect();
        let b: Vec<f64> = y.data()[p * plane..(p + 1) * plane].iter().map(|&v| unit(v)).collect();
        let prod = |f: &dyn Fn(usize) -> f64| (0..plane).map(f).collect::<Vec<f64>>();
        let mu_a = filter_valid(&a, h, w, &taps);
        let mu_b = filter_valid(&b, h, w, &taps);
        let aa = filter_valid(&prod(&|i| a[i] * a[i]), h, w, &taps);
        let bb = filter_valid(&prod(&|i| b[i] * b[i]), h, w, &taps);
        let ab = filter_valid(&prod(&|i| a[i] * b[i]), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Metrics of one case. `lesion_psnr_db` is filled when a lesion mask was
/// available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lesion_psnr_db: Option<f64>,
}

pub fn case_metrics(id: &str, y_hat: &Tensor, y: &Tensor, lesion: Option<&Mask>) -> Result<CaseMetrics> {
    Ok(CaseMetrics {
        id: id.to_string(),
        psnr_db: psnr(y_hat, y)?,
        ssim: ssim(y_hat, y)?,
        nmse: nmse(y_hat, y)?,
        lesion_psnr_db: lesion.map(|m| psnr_masked(y_hat, y, m)).transpose()?,
    })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    fn cell(&self, digits: usize) -> String {
        format!("{:.*}±{:.*}", digits, self.mean, digits, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub split: String,
    pub prompt: String,
    pub rows: Vec<CaseMetrics>,
    pub psnr_db: Aggregate,
    pub ssim: Aggregate,
    pub nmse: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lesion_psnr_db: Option<Aggregate>,
}

impl MetricReport {
    pub fn new(label: &str, split: &str, prompt: &str, rows: Vec<CaseMetrics>) -> Self {
        let col = |f: &dyn Fn(&CaseMetrics) -> f64| Aggregate::of(&rows.iter().map(f).collect::<Vec<_>>());
        let lesion: Option<Vec<f64>> = rows.iter().map(|r| r.lesion_psnr_db).collect();
        Self {
            label: label.to_string(),
            split: split.to_string(),
            prompt: prompt.to_string(),
            psnr_db: col(&|r| r.psnr_db),
            ssim: col(&|r| r.ssim),
            nmse: col(&|r| r.nmse),
            lesion_psnr_db: lesion.filter(|v| !v.is_empty()).map(|v| Aggregate::of(&v)),
            rows,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned "mean±std" table, one row per report.
    pub fn table(reports: &[&MetricReport]) -> String {
        let has_lesion = reports.iter().any(|r| r.lesion_psnr_db.is_some());
        let mut head = vec!["Method".to_string(), "Split".into(), "Prompt".into(), "PSNR (dB)".into(), "SSIM".into(), "NMSE".into()];
        if has_lesion {
            head.push("Lesion PSNR (dB)".into());
        }
        let mut lines = vec![head];
        for r in reports {
            let mut row = vec![
                r.label.clone(),
                format!("{} (n={})", r.split, r.rows.len()),
                r.prompt.clone(),
                r.psnr_db.cell(2),
                r.ssim.cell(3),
                r.nmse.cell(4),
            ];
            if has_lesion {
                row.push(r.lesion_psnr_db.map(|a| a.cell(2)).unwrap_or_else(|| "-".into()));
            }
            lines.push(row);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn img(n: usize, f: impl FnMut(usize) -> f32) -> Tensor {
        Tensor::from_fn([1, 1, n, n], f)
    }

    #[test]
    fn psnr_examples() {
        let mut s = Stream::new(1);
        let y = img(16, |_| s.uniform_in(-0.5, 0.5) as f32);
        assert_eq!(psnr(&y, &y).unwrap(), PSNR_CAP_DB);
        // +0.1 on [0,1] is +0.2 natively
        let shifted = y.map(|v| v + 0.2);
        assert!((psnr(&shifted, &y).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&y, &img(8, |_| 0.0)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut s = Stream::new(2);
        let y = img(20, |_| s.uniform_in(-1.0, 1.0) as f32);
        assert_eq!(ssim(&y, &y).unwrap(), 1.0);
        let checker = img(16, |i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { -1.0 });
        let inverse = checker.map(|v| -v);
        assert!(ssim(&checker, &inverse).unwrap() < 0.0);
        let (a, b) = (0.3f64, 0.4f64);
        let ca = img(12, |_| (2.0 * a - 1.0) as f32);
        let cb = img(12, |_| (2.0 * b - 1.0) as f32);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&ca, &cb).unwrap() - want).abs() < 1e-6);
        assert!(matches!(ssim(&img(10, |_| 0.0), &img(10, |_| 0.0)), Err(Error::TooSmall(10, 11))));
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut s = Stream::new(3);
        for _ in 0..10 {
            let a = img(16, |_| s.uniform_in(-1.0, 1.0) as f32);
            let b = img(16, |_| s.uniform_in(-1.0, 1.0) as f32);
            let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            assert!((x - y).abs() < 1e-6);
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn nmse_examples() {
        let mut s = Stream::new(4);
        let y = img(8, |_| s.uniform_in(-1.0, 1.0) as f32);
        assert_eq!(nmse(&y, &y).unwrap(), 0.0);
        assert!((nmse(&img(8, |_| 0.0), &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmse(&y.map(|v| 2.0 * v), &y).unwrap() - 1.0).abs() < 1e-6);
        assert!(matches!(nmse(&y, &img(8, |_| 0.0)), Err(Error::ZeroReference)));
        let a = y.map(|v| v * 0.7 + 0.05);
        let base = nmse(&a, &y).unwrap();
        let scaled = nmse(&a.map(|v| v * -3.0), &y.map(|v| v * -3.0)).unwrap();
        assert!((base - scaled).abs() < 1e-6 * base.max(1e-12));
    }

    #[test]
    fn masked_psnr_only_sees_the_mask() {
        let y = img(8, |_| 0.0);
        let y_hat = img(8, |i| if i < 8 { 0.2 } else { 0.0 });
        let top = Mask::from_fn(8, 8, |r, _| r == 0);
        let rest = Mask::from_fn(8, 8, |r, _| r > 0);
        assert!((psnr_masked(&y_hat, &y, &top).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr_masked(&y_hat, &y, &rest).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr_masked(&y_hat, &y, &Mask::zeros(8, 8)).unwrap(), PSNR_CAP_DB);
        assert!(psnr_masked(&y_hat, &y, &Mask::zeros(4, 4)).is_err());
    }

    #[test]
    fn report_aggregates_recompute() {
        let rows: Vec<CaseMetrics> = (0..5)
            .map(|i| CaseMetrics { id: format!("c{i}"), psnr_db: 20.0 + i as f64, ssim: 0.5, nmse: 0.1 * i as f64, lesion_psnr_db: None })
            .collect();
        let r = MetricReport::new("m", "test", "none", rows);
        assert!((r.psnr_db.mean - 22.0).abs() < 1e-12);
        assert!((r.psnr_db.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.ssim.std, 0.0);
        assert!(r.lesion_psnr_db.is_none());
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let t = MetricReport::table(&[&r]);
        assert!(t.contains("22.00±1.41"), "{t}");
    }
}
