//! Splits, case directories and the dataset manifest.
//!
//! A dataset root holds `manifest.json` and one directory per case:
//! `<id>/x1.tlpt`, `x2.tlpt`, `y.tlpt`, `lesion.pgm`, `meta.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::phantom::{case_id, generate_case, PhantomCase, PhantomSpec};
use crate::pgm;
use crate::rng::{derive, Stream};
use crate::tensor::io as tio;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.85, 0.02, 0.13];
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Shuffles `case_0000 … case_{n−1}` and cuts it into train/val/test of
/// `round(n·f0)`, `round(n·f1)` and the remainder. Each list is sorted.
pub fn make_splits(n_cases: usize, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(fractions.to_vec()));
    }
    let n_train = (n_cases as f64 * fractions[0]).round() as usize;
    let n_val = ((n_cases as f64 * fractions[1]).round() as usize).min(n_cases - n_train.min(n_cases));
    let mut idx: Vec<usize> = (0..n_cases).collect();
    Stream::new(derive(seed, &[0x7370_6c69])).shuffle(&mut idx);
    let ids = |r: &[usize]| {
        let mut v: Vec<String> = r.iter().map(|&i| case_id(i)).collect();
        v.sort();
        v
    };
    let n_train = n_train.min(n_cases);
    Ok(Splits {
        train: ids(&idx[..n_train]),
        val: ids(&idx[n_train..n_train + n_val]),
        test: ids(&idx[n_train + n_val..]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub id: String,
    pub index: usize,
    pub spec_seed: u64,
    pub resolution: usize,
    pub lesion_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: PhantomSpec,
    pub n_cases: usize,
    pub split_seed: u64,
    pub fractions: [f64; 3],
    pub splits: Splits,
}

pub fn write_case(root: &Path, case: &PhantomCase, spec_seed: u64) -> Result<()> {
    let dir = root.join(&case.id);
    tio::save(&dir.join("x1.tlpt"), &case.x1)?;
    tio::save(&dir.join("x2.tlpt"), &case.x2)?;
    tio::save(&dir.join("y.tlpt"), &case.y)?;
    pgm::save(&dir.join("lesion.pgm"), &case.lesion)?;
    let meta = CaseMeta {
        id: case.id.clone(),
        index: case.index,
        spec_seed,
        resolution: case.lesion.height(),
        lesion_pixels: case.lesion.count(),
    };
    fsutil::write_json(&dir.join("meta.json"), &meta)
}

pub fn read_case(root: &Path, id: &str) -> Result<PhantomCase> {
    let dir = root.join(id);
    if !dir.is_dir() {
        return Err(Error::UnknownCase(id.to_string()));
    }
    let meta: CaseMeta = fsutil::read_json(&dir.join("meta.json"))?;
    let x1 = tio::load(&dir.join("x1.tlpt"))?;
    let x2 = tio::load(&dir.join("x2.tlpt"))?;
    let y = tio::load(&dir.join("y.tlpt"))?;
    let lesion = pgm::load(&dir.join("lesion.pgm"))?;
    let n = meta.resolution;
    for (name, t) in [("x1", &x1), ("x2", &x2), ("y", &y)] {
        if t.shape() != [1, 1, n, n] {
            return Err(Error::corrupt(dir.join(format!("{name}.tlpt")), format!("expected [1, 1, {n}, {n}], found {:?}", t.shape())));
        }
    }
    if lesion.height() != n || lesion.width() != n {
        return Err(Error::corrupt(dir.join("lesion.pgm"), "mask extent differs from images"));
    }
    Ok(PhantomCase { id: meta.id, index: meta.index, x1, x2, y, lesion })
}

/// Generates `n_cases` phantoms under `root` and writes the manifest.
pub fn generate_dataset(root: &Path, spec: &PhantomSpec, n_cases: usize, fractions: [f64; 3], split_seed: u64) -> Result<Manifest> {
    spec.validate()?;
    let splits = make_splits(n_cases, fractions, split_seed)?;
    for i in 0..n_cases {
        write_case(root, &generate_case(spec, i)?, spec.seed)?;
    }
    let manifest = Manifest { spec: spec.clone(), n_cases, split_seed, fractions, splits };
    fsutil::write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A dataset directory with its manifest loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = fsutil::read_json(&root.join(MANIFEST))?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn ids(&self, split: Split) -> &[String] {
        self.manifest.splits.get(split)
    }

    pub fn contains(&self, id: &str) -> bool {
        [Split::Train, Split::Val, Split::Test]
            .iter()
            .any(|&s| self.ids(s).iter().any(|x| x == id))
    }

    /// Every case id, sorted.
    pub fn all_ids(&self) -> Vec<String> {
        let s = &self.manifest.splits;
        let mut v: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        v.sort();
        v
    }

    pub fn case(&self, id: &str) -> Result<PhantomCase> {
        if !self.contains(id) {
            return Err(Error::UnknownCase(id.to_string()));
        }
        read_case(&self.root, id)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PhantomCase>> {
        self.ids(split).iter().map(|id| read_case(&self.root, id)).collect()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.ids(s).iter().any(|x| x == id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_partition() {
        let s = make_splits(100, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (85, 2, 13));
        let s = make_splits(200, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (170, 4, 26));
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 200);
        assert_eq!(s, make_splits(200, DEFAULT_FRACTIONS, 1).unwrap());
        assert_ne!(s, make_splits(200, DEFAULT_FRACTIONS, 2).unwrap());
    }

    #[test]
    fn bad_fractions() {
        assert!(matches!(make_splits(10, [0.5, 0.5, 0.5], 0), Err(Error::BadFractions(_))));
        assert!(matches!(make_splits(10, [1.2, -0.2, 0.0], 0), Err(Error::BadFractions(_))));
        assert!(matches!(make_splits(10, [f64::NAN, 0.5, 0.5], 0), Err(Error::BadFractions(_))));
    }

    #[test]
    fn case_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec { seed: 11, ..Default::default() };
        let c = generate_case(&spec, 2).unwrap();
        write_case(dir.path(), &c, spec.seed).unwrap();
        let back = read_case(dir.path(), &c.id).unwrap();
        assert_eq!(back, c);
        let meta: CaseMeta = fsutil::read_json(&dir.path().join(&c.id).join("meta.json")).unwrap();
        assert_eq!(meta.spec_seed, 11);

        let p = dir.path().join(&c.id).join("y.tlpt");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_case(dir.path(), &c.id), Err(Error::CorruptHeader { .. })));
        assert!(matches!(read_case(dir.path(), "case_9999"), Err(Error::UnknownCase(_))));
    }

    #[test]
    fn dataset_generation_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec { seed: 5, resolution: 32, lesion_radius: (2.0, 4.0), ..Default::default() };
        let m = generate_dataset(dir.path(), &spec, 10, [0.6, 0.2, 0.2], 3).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(ds.all_ids().len(), 10);
        let id = &ds.ids(Split::Val)[0];
        assert_eq!(ds.split_of(id), Some(Split::Val));
        assert_eq!(ds.case(id).unwrap(), generate_case(&spec, ds.case(id).unwrap().index).unwrap());
        assert!(matches!(ds.case("nope"), Err(Error::UnknownCase(_))));
        assert_eq!(ds.load_split(Split::Train).unwrap().len(), 6);
    }
}
