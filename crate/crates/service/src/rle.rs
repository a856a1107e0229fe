//! Run-length mask encoding used by the HTTP API.
//!
//! A mask of `height × width` cells is read row-major and described by run
//! lengths that alternate between background and foreground, always
//! starting with a background run (which may be zero). The runs must sum
//! to `height × width`. The encoder emits the canonical form: no empty runs
//! except possibly the first.

use serde::{Deserialize, Serialize};
use tlp_core::fpg::Mask;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<u64>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum RleError {
    Empty,
    Length { expected: u64, found: u64 },
}

impl std::fmt::Display for RleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RleError::Empty => write!(f, "mask extents must be positive"),
            RleError::Length { expected, found } => {
                write!(f, "runs cover {found} cells but the mask has {expected}")
            }
        }
    }
}

pub fn encode(mask: &Mask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u64;
    for &c in mask.cells() {
        if c == current {
            len += 1;
        } else {
            runs.push(len);
            current = c;
            len = 1;
        }
    }
    runs.push(len);
    RleMask { height: mask.height(), width: mask.width(), runs }
}

pub fn decode(rle: &RleMask) -> Result<Mask, RleError> {
    if rle.height == 0 || rle.width == 0 {
        return Err(RleError::Empty);
    }
    let expected = (rle.height * rle.width) as u64;
    let found = rle.runs.iter().try_fold(0u64, |acc, &r| acc.checked_add(r)).unwrap_or(u64::MAX);
    if found != expected {
        return Err(RleError::Length { expected, found });
    }
    let mut cells = Vec::with_capacity(expected as usize);
    for (i, &r) in rle.runs.iter().enumerate() {
        cells.extend(std::iter::repeat((i % 2) as u8).take(r as usize));
    }
    Ok(Mask::from_cells(rle.height, rle.width, cells).expect("cells are binary and sized"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        let m = Mask::from_cells(2, 3, vec![1, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(encode(&m).runs, vec![0, 2, 3, 1]);
        assert_eq!(encode(&Mask::zeros(2, 2)).runs, vec![4]);
        let r = RleMask { height: 2, width: 2, runs: vec![1, 2] };
        assert!(matches!(decode(&r), Err(RleError::Length { expected: 4, found: 3 })));
        let r = RleMask { height: 0, width: 2, runs: vec![] };
        assert_eq!(decode(&r), Err(RleError::Empty));
        let r = RleMask { height: 1, width: 2, runs: vec![u64::MAX, 3] };
        assert!(decode(&r).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..20, w in 1usize..20, bits in proptest::collection::vec(any::<bool>(), 400)) {
            let m = Mask::from_fn(h, w, |r, c| bits[r * w + c]);
            let e = encode(&m);
            prop_assert_eq!(e.runs.iter().sum::<u64>(), (h * w) as u64);
            prop_assert!(e.runs.iter().skip(1).all(|&r| r > 0));
            prop_assert_eq!(decode(&e).unwrap(), m);
        }
    }
}
