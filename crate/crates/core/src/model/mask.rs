use std::fmt;

use crate::error::{Error, Result};

/// Binary keep-vector over the `N` patches of one layer. Bit 0 is the class token.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PatchMask {
    bits: Vec<bool>,
}

impl fmt::Debug for PatchMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PatchMask({})", self.to_bitstring())
    }
}

impl PatchMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(n: usize) -> Self {
        Self {
            bits: vec![true; n],
        }
    }

    pub fn none(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn class_only(n: usize) -> Self {
        let mut m = Self::none(n);
        m.bits[0] = true;
        m
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut m = Self::none(n);
        for &i in indices {
            m.bits[i] = true;
        }
        m
    }

    pub fn parse_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::InvalidMask(format!(
                    "unexpected character {other:?} in bitstring"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn to_bitstring(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// One mask per layer `l = 1..L`, stored at index `l - 1`. Deeper masks are subsets of shallower ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSchedule {
    masks: Vec<PatchMask>,
}

impl MaskSchedule {
    /// Validates nesting and non-emptiness against `n` patches.
    pub fn new(masks: Vec<PatchMask>, n: usize) -> Result<Self> {
        let s = Self { masks };
        s.validate(n)?;
        Ok(s)
    }

    pub fn all_ones(layers: usize, n: usize) -> Self {
        Self {
            masks: vec![PatchMask::all(n); layers],
        }
    }

    pub fn class_only(layers: usize, n: usize) -> Self {
        Self {
            masks: vec![PatchMask::class_only(n); layers],
        }
    }

    /// First offending layer (1-based) is reported on failure.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut prev = PatchMask::all(n);
        for (i, m) in self.masks.iter().enumerate() {
            let layer = i + 1;
            if m.len() != n {
                return Err(Error::InvalidMask(format!(
                    "layer {layer} mask has length {}, expected {n}",
                    m.len()
                )));
            }
            if m.count() == 0 {
                return Err(Error::InvalidMask(format!(
                    "layer {layer} mask keeps no patch"
                )));
            }
            if !m.is_subset_of(&prev) {
                return Err(Error::MaskNesting { layer });
            }
            prev = m.clone();
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.masks.len()
    }

    /// Mask of layer `l` (1-based); `l = 0` is the all-ones input mask.
    pub fn mask(&self, l: usize) -> PatchMask {
        if l == 0 {
            PatchMask::all(self.masks.first().map_or(0, PatchMask::len))
        } else {
            self.masks[l - 1].clone()
        }
    }

    pub fn masks(&self) -> &[PatchMask] {
        &self.masks
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.masks.iter().map(PatchMask::count).collect()
    }

    pub fn class_token_everywhere(&self) -> bool {
        self.masks.iter().all(|m| m.get(0))
    }
}
