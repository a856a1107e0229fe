//! Prompt modes, single-case synthesis and split evaluation.

use std::path::{Path, PathBuf};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fpg::Mask;
use crate::metrics::{case_metrics, MetricReport};
use crate::model::{GeneratorState, SynthesisInput};
use crate::phantom::PhantomCase;
use crate::pgm;
use crate::tensor::Tensor;

/// Where an inference-time prompt comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptMode {
    /// All-zero prompt.
    None,
    /// The case's own lesion mask.
    OracleLesion,
    /// A PGM mask file used for every case, or a directory of `<id>.pgm`.
    File(PathBuf),
}

impl PromptMode {
    pub fn label(&self) -> String {
        match self {
            PromptMode::None => "none".into(),
            PromptMode::OracleLesion => "oracle-lesion".into(),
            PromptMode::File(p) => format!("file:{}", p.display()),
        }
    }

    pub fn mask_for(&self, case: &PhantomCase) -> Result<Option<Mask>> {
        let mask = match self {
            PromptMode::None => return Ok(None),
            PromptMode::OracleLesion => case.lesion.clone(),
            PromptMode::File(p) if p.is_dir() => pgm::load(&p.join(format!("{}.pgm", case.id)))?,
            PromptMode::File(p) => pgm::load(p)?,
        };
        if (mask.height(), mask.width()) != (case.lesion.height(), case.lesion.width()) {
            return Err(Error::ShapeMismatch(format!(
                "prompt {}x{} for a {}x{} case",
                mask.height(),
                mask.width(),
                case.lesion.height(),
                case.lesion.width()
            )));
        }
        Ok(Some(mask))
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => PromptMode::None,
            "lesion" | "oracle-lesion" => PromptMode::OracleLesion,
            "" => return Err(Error::InvalidConfig("empty prompt mode".into())),
            path => PromptMode::File(Path::new(path).to_path_buf()),
        })
    }
}

pub fn synthesize_case(gen: &GeneratorState, case: &PhantomCase, prompt: Option<&Mask>) -> Result<Tensor> {
    gen.synthesize(&SynthesisInput {
        x1: case.x1.clone(),
        x2: Some(case.x2.clone()),
        prompt: prompt.map(Mask::to_tensor),
        prompt2: None,
    })
}

/// Synthesizes every case of `split` under `mode` and scores it against the
/// target; lesion-region PSNR is always reported.
pub fn evaluate_split(gen: &GeneratorState, ds: &Dataset, split: Split, mode: &PromptMode, label: &str) -> Result<MetricReport> {
    let cases = ds.load_split(split)?;
    evaluate_cases(gen, &cases, mode, label, split_name(split))
}

pub fn evaluate_cases(gen: &GeneratorState, cases: &[PhantomCase], mode: &PromptMode, label: &str, split: &str) -> Result<MetricReport> {
    let rows = cases
        .iter()
        .map(|c| {
            let prompt = mode.mask_for(c)?;
            let y_hat = synthesize_case(gen, c, prompt.as_ref())?;
            case_metrics(&c.id, &y_hat, &c.y, Some(&c.lesion))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(label, split, &mode.label(), rows))
}

/// The copy-x1 baseline: `ŷ = x1`.
pub fn copy_baseline(cases: &[PhantomCase], split: &str) -> Result<MetricReport> {
    let rows = cases
        .iter()
        .map(|c| case_metrics(&c.id, &c.x1, &c.y, Some(&c.lesion)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new("copy-x1", split, "-", rows))
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}
