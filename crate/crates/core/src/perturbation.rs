//! Eye-clean margin of a frozen logistic probe over clean/perturbed pairs.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedDataset, ClassId, DatasetManifest, EmbeddingSet};
use crate::error::{Error, Result};
use crate::linear::{train_logistic, LogisticModel, TrainConfig};
use crate::metrics::argmax;

/// `z_0 − max_{k≠0} z_k`.
pub fn eye_clean_margin(z: ArrayView1<'_, f64>) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "margin needs at least 2 logits, got {}",
            z.len()
        )));
    }
    let rival = z.iter().skip(1).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(z[0] - rival)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub clean: Array1<f64>,
    pub perturbed: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddings {
    pub encoder_name: String,
    pub pairs: Vec<Pair>,
}

impl PairedEmbeddings {
    pub fn new(encoder_name: impl Into<String>, pairs: Vec<Pair>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let d = first.clean.len();
            for p in &pairs {
                if p.clean.len() != d || p.perturbed.len() != d {
                    return Err(Error::Data(format!(
                        "pair {:?}: vectors of length {} and {}, expected {d}",
                        p.id,
                        p.clean.len(),
                        p.perturbed.len()
                    )));
                }
                if p.clean.iter().chain(p.perturbed.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("pair {:?} has a non-finite value", p.id)));
                }
            }
        }
        Ok(PairedEmbeddings {
            encoder_name: encoder_name.into(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Linked pairs of a manifest, looked up in one embedding file holding both
/// sides. Eye-clean originals without a `pair_id` are skipped and returned.
pub fn paired_embeddings(manifest: &DatasetManifest, emb: &EmbeddingSet) -> Result<(PairedEmbeddings, Vec<String>)> {
    let mut missing = Vec::new();
    let mut pairs = Vec::new();
    for (clean, perturbed) in manifest.pairs() {
        match (emb.get(clean), emb.get(perturbed)) {
            (Some(c), Some(p)) => pairs.push(Pair {
                id: clean.to_string(),
                clean: c.to_owned(),
                perturbed: p.to_owned(),
            }),
            (c, p) => {
                if c.is_none() {
                    missing.push(clean);
                }
                if p.is_none() {
                    missing.push(perturbed);
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} paired specimen(s) missing from embeddings {:?}: {}",
            missing.len(),
            emb.encoder_name(),
            missing.join(", ")
        )));
    }
    let unpaired: Vec<String> = manifest
        .originals()
        .into_iter()
        .filter(|r| r.label == ClassId::EYE_CLEAN && r.pair_id.is_none())
        .map(|r| r.id.clone())
        .collect();
    if !unpaired.is_empty() {
        log::warn!("{} eye-clean specimen(s) have no perturbed counterpart and are skipped", unpaired.len());
    }
    Ok((PairedEmbeddings::new(emb.encoder_name(), pairs)?, unpaired))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenMargin {
    pub id: String,
    pub m_clean: f64,
    pub m_perturbed: f64,
    pub delta_m: f64,
    pub reclassified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub encoder: String,
    pub per_specimen: Vec<SpecimenMargin>,
    pub mean_delta: f64,
    /// Population standard deviation.
    pub std_delta: f64,
    pub reclass_rate: f64,
    /// Eye-clean specimens left out for lack of a perturbed counterpart.
    pub skipped_unpaired: Vec<String>,
}

impl MarginReport {
    /// Aggregates rows of `(id, clean logits, perturbed logits)`.
    pub fn from_logits<'a>(
        encoder: &str,
        rows: impl IntoIterator<Item = (String, ArrayView1<'a, f64>, ArrayView1<'a, f64>)>,
    ) -> Result<Self> {
        let per_specimen = rows
            .into_iter()
            .map(|(id, zc, zp)| {
                let m_clean = eye_clean_margin(zc)?;
                let m_perturbed = eye_clean_margin(zp)?;
                Ok(SpecimenMargin {
                    id,
                    m_clean,
                    m_perturbed,
                    delta_m: m_clean - m_perturbed,
                    reclassified: argmax(zp) != ClassId::EYE_CLEAN.index(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(encoder, per_specimen)
    }

    pub fn from_rows(encoder: &str, per_specimen: Vec<SpecimenMargin>) -> Result<Self> {
        if per_specimen.is_empty() {
            return Err(Error::Data("no clean/perturbed pairs to evaluate".into()));
        }
        let n = per_specimen.len() as f64;
        let mean_delta = per_specimen.iter().map(|r| r.delta_m).sum::<f64>() / n;
        let var = per_specimen
            .iter()
            .map(|r| (r.delta_m - mean_delta).powi(2))
            .sum::<f64>()
            / n;
        let reclassified = per_specimen.iter().filter(|r| r.reclassified).count();
        Ok(MarginReport {
            encoder: encoder.to_string(),
            mean_delta,
            std_delta: var.sqrt(),
            reclass_rate: reclassified as f64 / n,
            per_specimen,
            skipped_unpaired: Vec::new(),
        })
    }
}

pub fn margin_drop_report(probe: &LogisticModel, pairs: &PairedEmbeddings) -> Result<MarginReport> {
    let logits = pairs
        .pairs
        .par_iter()
        .map(|p| {
            let zc = probe.scores(p.clean.view()).map_err(|e| e.in_context(format!("pair {:?}", p.id)))?;
            let zp = probe.scores(p.perturbed.view()).map_err(|e| e.in_context(format!("pair {:?}", p.id)))?;
            Ok((p.id.clone(), zc, zp))
        })
        .collect::<Result<Vec<_>>>()?;
    MarginReport::from_logits(
        &pairs.encoder_name,
        logits.iter().map(|(id, zc, zp)| (id.clone(), zc.view(), zp.view())),
    )
}

/// One logistic model on every original specimen.
pub fn train_frozen_probe_for_perturbation(data: &AlignedDataset, cfg: &TrainConfig) -> Result<LogisticModel> {
    train_logistic(data.x.view(), &data.y, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn margin_cases() {
        assert_eq!(eye_clean_margin(array![2.0, 1.0, 0.0].view()).unwrap(), 1.0);
        assert_eq!(eye_clean_margin(array![0.0, 2.0, 1.0].view()).unwrap(), -2.0);
        assert_eq!(eye_clean_margin(array![0.7, 0.7, 0.7].view()).unwrap(), 0.0);
        assert!(eye_clean_margin(array![1.0].view()).is_err());
    }

    #[test]
    fn single_pair_report() {
        let zc = array![2.0, 1.0, 0.0];
        let zp = array![0.0, 2.0, 1.0];
        let r = MarginReport::from_logits("e", [("a".to_string(), zc.view(), zp.view())]).unwrap();
        assert_eq!(r.per_specimen[0].delta_m, 3.0);
        assert!(r.per_specimen[0].reclassified);
        assert_eq!((r.mean_delta, r.std_delta, r.reclass_rate), (3.0, 0.0, 1.0));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(MarginReport::from_rows("e", Vec::new()).is_err());
    }

    #[test]
    fn ragged_pairs_are_rejected() {
        let p = Pair {
            id: "a".into(),
            clean: array![1.0, 2.0],
            perturbed: array![1.0],
        };
        assert!(PairedEmbeddings::new("e", vec![p]).is_err());
    }
}
