use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::bank::{nn_score, normalize, patch_score_flat, BankKind, MemoryBank};
use super::embed::{embed_features, ImageEmbeddings};
use crate::error::{PsadError, Result};
use crate::featex::pixel_features;
use crate::segtrain::PixelClassifier;
use crate::tensorio::{read_file, with_path, write_file, ByteReader, ByteWriter, Tensor};

pub const BANKSET_MAGIC: &[u8; 4] = b"PBS1";

pub fn final_score(hist: f64, comp: f64, patch: f64) -> f64 {
    hist + comp + patch
}

/// Raw and normalized scores of one image, indexed like [`BankKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BankScores {
    pub raw: [f64; 3],
    pub normalized: [f64; 3],
}

impl BankScores {
    pub fn final_score(&self) -> f64 {
        final_score(self.normalized[0], self.normalized[1], self.normalized[2])
    }
}

/// The three banks plus what is needed to embed a new image: the segmenter
/// and the patch stride.
#[derive(Debug, Clone, PartialEq)]
pub struct BankSet {
    pub classifier: PixelClassifier,
    pub stride: usize,
    pub hist: MemoryBank,
    pub comp: MemoryBank,
    pub patch: MemoryBank,
}

/// Embeds every training image with `clf` and builds the three banks.
pub fn build_banks(images: &[Tensor<f32>], clf: &PixelClassifier, stride: usize) -> Result<BankSet> {
    let embeddings = images
        .par_iter()
        .map(|img| embed_features(clf, &pixel_features(img)?, stride))
        .collect::<Result<Vec<_>>>()?;
    BankSet::from_embeddings(clf.clone(), stride, &embeddings)
}

impl BankSet {
    /// Elements are rounded to `f32` so that a saved and reloaded set scores
    /// identically.
    pub fn from_embeddings(classifier: PixelClassifier, stride: usize, train: &[ImageEmbeddings]) -> Result<Self> {
        if train.len() < 2 {
            return Err(PsadError::Contract(format!(
                "building banks needs at least 2 training images, got {}",
                train.len()
            )));
        }
        let mut train = train.to_vec();
        train.iter_mut().for_each(ImageEmbeddings::round_to_f32);
        let first = &train[0];
        let n_patches = first.num_patches();
        if train
            .iter()
            .any(|e| e.num_patches() != n_patches || e.patch_dim != first.patch_dim)
        {
            return Err(PsadError::Contract("training images have differing patch grids".into()));
        }
        let flat =
            |f: fn(&ImageEmbeddings) -> &Vec<f64>| train.iter().flat_map(|e| f(e).iter().copied()).collect::<Vec<_>>();
        Ok(BankSet {
            hist: MemoryBank::new(BankKind::Hist, first.hist.len(), 1, flat(|e| &e.hist))?,
            comp: MemoryBank::new(BankKind::Comp, first.comp.len(), 1, flat(|e| &e.comp))?,
            patch: MemoryBank::new(BankKind::Patch, first.patch_dim, n_patches, flat(|e| &e.patches))?,
            classifier,
            stride,
        })
    }

    pub fn bank(&self, kind: BankKind) -> &MemoryBank {
        match kind {
            BankKind::Hist => &self.hist,
            BankKind::Comp => &self.comp,
            BankKind::Patch => &self.patch,
        }
    }

    pub fn embed(&self, image: &Tensor<f32>) -> Result<ImageEmbeddings> {
        embed_features(&self.classifier, &pixel_features(image)?, self.stride)
    }

    pub fn score_embeddings(&self, e: &ImageEmbeddings) -> Result<BankScores> {
        let raw = [
            nn_score(&self.hist, &e.hist)?,
            nn_score(&self.comp, &e.comp)?,
            patch_score_flat(&self.patch, &e.patches, e.patch_dim)?,
        ];
        let normalized = [
            normalize(raw[0], &self.hist),
            normalize(raw[1], &self.comp),
            normalize(raw[2], &self.patch),
        ];
        Ok(BankScores { raw, normalized })
    }

    pub fn score_image(&self, image: &Tensor<f32>) -> Result<BankScores> {
        self.score_embeddings(&self.embed(image)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(BANKSET_MAGIC).u32(self.stride as u32);
        self.hist.encode_into(&mut w);
        self.comp.encode_into(&mut w);
        self.patch.encode_into(&mut w);
        w.bytes(&self.classifier.encode());
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(BANKSET_MAGIC)?;
        let stride = r.u32()? as usize;
        let mut banks = Vec::with_capacity(3);
        for kind in BankKind::ALL {
            let bank = MemoryBank::decode_from(&mut r)?;
            if bank.kind() != kind {
                return Err(PsadError::Format(format!(
                    "expected {} bank, found {}",
                    kind.name(),
                    bank.kind().name()
                )));
            }
            banks.push(bank);
        }
        let classifier = PixelClassifier::decode_from(&mut r)?;
        r.finish()?;
        if stride == 0 {
            return Err(PsadError::Format("patch stride is zero".into()));
        }
        let patch = banks.pop().unwrap();
        let comp = banks.pop().unwrap();
        let hist = banks.pop().unwrap();
        Ok(BankSet {
            classifier,
            stride,
            hist,
            comp,
            patch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_file(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        Self::decode(&bytes).map_err(|e| with_path(e, path))
    }
}
