use rayon::prelude::*;

use crate::error::{PsadError, Result};
use crate::featex::PatchGrid;
use crate::tensorio::{ByteReader, ByteWriter};

pub const BANK_MAGIC: &[u8; 4] = b"PMB1";

/// Floor on the normalization scale; an all-duplicate bank has scale 0.
pub const SCALE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BankKind {
    Hist,
    Comp,
    Patch,
}

impl BankKind {
    pub const ALL: [BankKind; 3] = [BankKind::Hist, BankKind::Comp, BankKind::Patch];

    pub fn name(self) -> &'static str {
        match self {
            BankKind::Hist => "hist",
            BankKind::Comp => "comp",
            BankKind::Patch => "patch",
        }
    }

    fn tag(self) -> u8 {
        match self {
            BankKind::Hist => 0,
            BankKind::Comp => 1,
            BankKind::Patch => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(BankKind::Hist),
            1 => Ok(BankKind::Comp),
            2 => Ok(BankKind::Patch),
            t => Err(PsadError::Format(format!("unknown bank kind {t}"))),
        }
    }
}

/// Immutable set of embeddings with its leave-one-out train scores.
///
/// Elements are grouped per training image: one element per image for the
/// histogram and composition banks, `N_P` patch vectors for the patch bank.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    kind: BankKind,
    dim: usize,
    group_size: usize,
    elements: Vec<f64>,
    loo: Vec<f64>,
    scale: f64,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn nearest(elements: &[f64], dim: usize, query: &[f64]) -> f64 {
    elements
        .chunks_exact(dim)
        .map(|e| sq_dist(query, e))
        .fold(f64::INFINITY, f64::min)
}

/// Leave-one-out train scores over groups of `group_size` consecutive
/// elements: each group is scored (max over its elements of the nearest
/// squared distance) against every element outside the group. Exclusion is
/// by position, so duplicated values still match each other.
pub fn loo_scores(elements: &[f64], dim: usize, group_size: usize) -> Result<Vec<f64>> {
    if dim == 0 || group_size == 0 || !elements.len().is_multiple_of(dim * group_size) {
        return Err(PsadError::Contract(format!(
            "{} values do not form groups of {group_size} x {dim}",
            elements.len()
        )));
    }
    let stride = dim * group_size;
    let n_groups = elements.len() / stride;
    if n_groups < 2 {
        return Err(PsadError::Contract(format!(
            "leave-one-out scoring needs at least 2 training images, got {n_groups}"
        )));
    }
    Ok((0..n_groups)
        .into_par_iter()
        .map(|k| {
            let (before, rest) = elements.split_at(k * stride);
            let (own, after) = rest.split_at(stride);
            own.chunks_exact(dim)
                .map(|q| nearest(before, dim, q).min(nearest(after, dim, q)))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

impl MemoryBank {
    /// Builds a bank and its train-score statistics from grouped elements.
    pub fn new(kind: BankKind, dim: usize, group_size: usize, elements: Vec<f64>) -> Result<Self> {
        if matches!(kind, BankKind::Hist | BankKind::Comp) && group_size != 1 {
            return Err(PsadError::Contract(format!(
                "{} bank stores one element per image",
                kind.name()
            )));
        }
        let loo = loo_scores(&elements, dim, group_size)?;
        let scale = loo.iter().copied().fold(0.0, f64::max);
        Ok(MemoryBank {
            kind,
            dim,
            group_size,
            elements,
            loo,
            scale,
        })
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn len(&self) -> usize {
        self.elements.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.loo.len()
    }

    pub fn elements(&self) -> impl Iterator<Item = &[f64]> {
        self.elements.chunks_exact(self.dim)
    }

    pub fn raw_elements(&self) -> &[f64] {
        &self.elements
    }

    /// Leave-one-out scores, one per training image.
    pub fn train_scores(&self) -> &[f64] {
        &self.loo
    }

    /// `max(train_scores)`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn encode_into(&self, w: &mut ByteWriter) {
        let elems: Vec<f32> = self.elements.iter().map(|&v| v as f32).collect();
        w.bytes(BANK_MAGIC)
            .u8(self.kind.tag())
            .u64(self.len() as u64)
            .u64(self.dim as u64)
            .u64(self.group_size as u64)
            .f32s(&elems)
            .u64(self.loo.len() as u64)
            .f64s(&self.loo)
            .f64s(&[self.scale]);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }

    pub fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(BANK_MAGIC)?;
        let kind = BankKind::from_tag(r.u8()?)?;
        let count = r.count(4)?;
        let dim = r.count(4)?;
        let group_size = r.count(1)?;
        if dim == 0 || group_size == 0 || count % group_size != 0 {
            return Err(PsadError::Format(format!(
                "bank of {count} elements cannot be split into groups of {group_size} (dim {dim})"
            )));
        }
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| PsadError::Format("bank size overflows".into()))?;
        let elements: Vec<f64> = r.f32s(total)?.into_iter().map(f64::from).collect();
        let n_loo = r.count(8)?;
        if n_loo != count / group_size {
            return Err(PsadError::Format(format!(
                "{n_loo} train scores for {} training images",
                count / group_size
            )));
        }
        let loo = r.f64s(n_loo)?;
        let scale = r.f64s(1)?[0];
        if scale != loo.iter().copied().fold(0.0, f64::max) {
            return Err(PsadError::Format("bank scale is not the maximum train score".into()));
        }
        Ok(MemoryBank {
            kind,
            dim,
            group_size,
            elements,
            loo,
            scale,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let bank = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(bank)
    }
}

fn check_query(bank: &MemoryBank, dim: usize) -> Result<()> {
    if bank.is_empty() {
        return Err(PsadError::Contract("memory bank is empty".into()));
    }
    if dim != bank.dim {
        return Err(PsadError::Contract(format!(
            "query dimension {dim} differs from bank dimension {}",
            bank.dim
        )));
    }
    Ok(())
}

/// Squared distance from `query` to its nearest bank element.
pub fn nn_score(bank: &MemoryBank, query: &[f64]) -> Result<f64> {
    check_query(bank, query.len())?;
    Ok(nearest(&bank.elements, bank.dim, query))
}

/// Largest nearest-neighbour squared distance over a test image's patches.
pub fn patch_score(bank: &MemoryBank, patches: &PatchGrid) -> Result<f64> {
    patch_score_flat(bank, patches.grid.data(), patches.dim())
}

pub(crate) fn patch_score_flat(bank: &MemoryBank, patches: &[f64], dim: usize) -> Result<f64> {
    check_query(bank, dim)?;
    if patches.is_empty() {
        return Err(PsadError::Contract("no test patches".into()));
    }
    Ok(patches
        .chunks_exact(dim)
        .map(|q| nearest(&bank.elements, dim, q))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Adaptive scaling: raw score over the bank's largest leave-one-out score.
pub fn normalize(raw: f64, bank: &MemoryBank) -> f64 {
    raw / bank.scale.max(SCALE_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_bank(values: &[f64]) -> MemoryBank {
        MemoryBank::new(BankKind::Hist, 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn nn_score_examples() {
        let bank = MemoryBank::new(BankKind::Comp, 2, 1, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(nn_score(&bank, &[3.0, 0.0]).unwrap(), 9.0);
        assert_eq!(nn_score(&bank, &[3.0, 4.0]).unwrap(), 0.0);
        assert!(nn_score(&bank, &[1.0]).is_err());
    }

    #[test]
    fn patch_score_example() {
        let bank = MemoryBank::new(BankKind::Patch, 2, 1, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(patch_score_flat(&bank, &[1.0, 0.0, 0.0, 2.0], 2).unwrap(), 4.0);
    }

    #[test]
    fn loo_examples() {
        let bank = scalar_bank(&[0.0, 10.0, 11.0]);
        assert_eq!(bank.train_scores(), &[100.0, 1.0, 1.0]);
        assert_eq!(bank.scale(), 100.0);

        let dup = scalar_bank(&[2.0, 2.0]);
        assert_eq!(dup.train_scores(), &[0.0, 0.0]);
        assert_eq!(normalize(0.0, &dup), 0.0);
    }

    #[test]
    fn loo_needs_two_images() {
        assert!(matches!(
            MemoryBank::new(BankKind::Hist, 1, 1, vec![1.0]),
            Err(PsadError::Contract(_))
        ));
        assert!(MemoryBank::new(BankKind::Patch, 1, 3, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let bank = MemoryBank::new(BankKind::Comp, 2, 1, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(bank.scale(), 8.0);
        assert_eq!(normalize(4.0, &bank), 0.5);
    }

    #[test]
    fn kind_specific_grouping() {
        assert!(MemoryBank::new(BankKind::Hist, 1, 2, vec![0.0; 4]).is_err());
    }

    #[test]
    fn bank_encoding_round_trips() {
        let bank = MemoryBank::new(BankKind::Patch, 2, 2, vec![0.5, 1.0, 2.0, -3.0, 0.25, 8.0, 1.5, 1.5]).unwrap();
        let bytes = bank.encode();
        assert_eq!(&bytes[..4], b"PMB1");
        assert_eq!(MemoryBank::decode(&bytes).unwrap(), bank);
    }
}
