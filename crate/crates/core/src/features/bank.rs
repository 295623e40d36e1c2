//! Per-image descriptors cached for fold-internal reference refits.
//!
//! Only the six Bhattacharyya entries depend on labels (through the class
//! references). Everything else, including each image's own S/V histograms,
//! is computed once per image; a fold then rebuilds the references from its
//! training rows and re-derives the distances.

use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bhattacharyya_distance, glcm_features, hsv_stats, load_rgb, rgb_to_hsv, ChannelHistograms, ClassReferences,
    ClassicalConfig, Orientation, CLASSICAL_DIM, CLASSICAL_ENCODER_NAME,
};
use crate::dataset::{ClassId, EmbeddingSet, SpecimenRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    /// HSV statistics then (homogeneity, entropy) at 0° and 90°.
    pub base: [f64; 8],
    pub histograms: ChannelHistograms,
}

impl ImageDescriptor {
    pub fn compute(image: &RgbImage, cfg: &ClassicalConfig) -> Result<Self> {
        cfg.validate()?;
        let hsv = rgb_to_hsv(image)?;
        let [ms, ss, mv, sv] = hsv_stats(&hsv);
        let (h0, e0) = glcm_features(&hsv, Orientation::Deg0, cfg.glcm_levels, cfg.glcm_distance)?;
        let (h90, e90) = glcm_features(&hsv, Orientation::Deg90, cfg.glcm_levels, cfg.glcm_distance)?;
        Ok(ImageDescriptor {
            base: [ms, ss, mv, sv, h0, e0, h90, e90],
            histograms: ChannelHistograms::of(&hsv, cfg.histogram_bins)?,
        })
    }

    pub fn features(&self, refs: &ClassReferences) -> Result<[f64; CLASSICAL_DIM]> {
        let mut out = [0.0; CLASSICAL_DIM];
        out[..8].copy_from_slice(&self.base);
        for (k, r) in refs.per_class.iter().enumerate() {
            out[8 + k] = bhattacharyya_distance(&self.histograms.s, &r.s)?;
            out[11 + k] = bhattacharyya_distance(&self.histograms.v, &r.v)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBank {
    pub config: ClassicalConfig,
    pub ids: Vec<String>,
    pub descriptors: Vec<ImageDescriptor>,
}

/// Resolves a record's image path; relative paths are taken from `image_dir`.
pub fn resolve_image_path(record: &SpecimenRecord, image_dir: &Path) -> Result<PathBuf> {
    let p = record
        .image_path
        .as_ref()
        .ok_or_else(|| Error::Data(format!("specimen {} has no image_path", record.id)))?;
    Ok(if p.is_absolute() { p.clone() } else { image_dir.join(p) })
}

impl ClassicalBank {
    pub fn from_records(records: &[&SpecimenRecord], image_dir: &Path, cfg: &ClassicalConfig) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::Data("no images to describe".into()));
        }
        let descriptors = records
            .par_iter()
            .map(|r| {
                let path = resolve_image_path(r, image_dir)?;
                let img = load_rgb(&path)?;
                ImageDescriptor::compute(&img, cfg).map_err(|e| Error::Image {
                    path: path.clone(),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassicalBank {
            config: *cfg,
            ids: records.iter().map(|r| r.id.clone()).collect(),
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// References from `rows` under `labels` (indexed like the bank).
    pub fn references(&self, rows: &[usize], labels: &[ClassId]) -> Result<ClassReferences> {
        ClassReferences::from_histograms(rows.iter().map(|&r| (&self.descriptors[r].histograms, labels[r])))
    }

    /// Feature matrix of every image against the given references.
    pub fn matrix(&self, refs: &ClassReferences) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((self.len(), CLASSICAL_DIM));
        for (mut row, d) in x.rows_mut().into_iter().zip(&self.descriptors) {
            row.assign(&ndarray::ArrayView1::from(&d.features(refs)?));
        }
        Ok(x)
    }

    /// Features of every image with references fitted on `train_rows` only.
    pub fn fold_matrix(&self, train_rows: &[usize], labels: &[ClassId]) -> Result<Array2<f64>> {
        self.matrix(&self.references(train_rows, labels)?)
    }

    /// Embedding set with references built from all images.
    pub fn to_embeddings(&self, labels: &[ClassId]) -> Result<EmbeddingSet> {
        let all: Vec<usize> = (0..self.len()).collect();
        EmbeddingSet::new(CLASSICAL_ENCODER_NAME, self.ids.clone(), self.fold_matrix(&all, labels)?)
    }

    /// Reorders the bank to follow `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let descriptors = ids
            .iter()
            .map(|id| {
                self.ids
                    .iter()
                    .position(|x| x == id)
                    .map(|i| self.descriptors[i].clone())
                    .ok_or_else(|| Error::Data(format!("no image descriptor for specimen {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassicalBank {
            config: self.config,
            ids: ids.to_vec(),
            descriptors,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bank: ClassicalBank = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        if bank.ids.len() != bank.descriptors.len() {
            return Err(Error::Data(format!("{}: ids and descriptors differ in length", path.display())));
        }
        Ok(bank)
    }
}

/// Path of the histogram sidecar written next to a classical embedding file.
pub fn sidecar_path(embedding_path: &Path) -> PathBuf {
    let mut s = embedding_path.as_os_str().to_owned();
    s.push(".histograms.json");
    PathBuf::from(s)
}
