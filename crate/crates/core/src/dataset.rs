//! Manifests, embedding files and their alignment into a design matrix.
//!
//! Manifest CSV: header `id,label,image_path,pair_id`; labels are the tokens
//! `eye-clean`, `moderate`, `heavy`. A non-empty `pair_id` links a clean
//! specimen to its perturbed counterpart, which must be another row of the
//! same manifest.
//!
//! Embedding CSV: header `id,f0,...,f{d-1}`, one row per specimen, values
//! written with Rust's shortest round-trip float formatting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::rng;
use crate::NUM_CLASSES;

pub const GAUSSIAN_CONTROL_NAME: &str = "gaussian-control";

/// Clarity grade. Class 0 is always eye-clean, the margin's reference class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(u8);

impl ClassId {
    pub const EYE_CLEAN: ClassId = ClassId(0);
    pub const MODERATE: ClassId = ClassId(1);
    pub const HEAVY: ClassId = ClassId(2);

    pub fn new(value: usize) -> Result<Self> {
        if value < NUM_CLASSES {
            Ok(ClassId(value as u8))
        } else {
            Err(Error::InvalidArgument(format!("class id {value} out of range")))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn token(self) -> &'static str {
        match self.0 {
            0 => "eye-clean",
            1 => "moderate",
            _ => "heavy",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "eye-clean" => Some(Self::EYE_CLEAN),
            "moderate" => Some(Self::MODERATE),
            "heavy" => Some(Self::HEAVY),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..NUM_CLASSES as u8).map(ClassId)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Per-class counts of a label vector.
pub fn class_counts(labels: &[ClassId]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for y in labels {
        counts[y.index()] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecimenRecord {
    pub id: String,
    pub label: ClassId,
    pub image_path: Option<PathBuf>,
    pub pair_id: Option<String>,
}

/// Validated list of specimens.
///
/// Records that are the target of some `pair_id` are perturbed counterparts;
/// everything else is an original specimen. `class_counts` covers the
/// originals only, since perturbed images never enter the probing study.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<SpecimenRecord>,
    class_counts: [usize; NUM_CLASSES],
}

impl DatasetManifest {
    pub fn new(records: Vec<SpecimenRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.id.is_empty() {
                return Err(Error::Data("empty specimen id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate id {:?}", r.id)));
            }
        }

        let index: HashMap<&str, &SpecimenRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut targets = HashSet::new();
        for r in &records {
            let Some(pair) = &r.pair_id else { continue };
            let Some(target) = index.get(pair.as_str()) else {
                return Err(Error::Data(format!(
                    "pair_id {:?} of {:?} does not name a record",
                    pair, r.id
                )));
            };
            if target.id == r.id {
                return Err(Error::Data(format!("{:?} is paired with itself", r.id)));
            }
            if target.pair_id.is_some() {
                return Err(Error::Data(format!(
                    "perturbed record {:?} must not carry its own pair_id",
                    target.id
                )));
            }
            if r.label != ClassId::EYE_CLEAN {
                return Err(Error::Data(format!(
                    "paired specimen {:?} is labelled {} but the clean side of a pair must be eye-clean",
                    r.id, r.label
                )));
            }
            if !targets.insert(pair.as_str()) {
                return Err(Error::Data(format!(
                    "perturbed record {pair:?} is claimed by more than one pair"
                )));
            }
        }

        let mut class_counts = [0; NUM_CLASSES];
        for r in records.iter().filter(|r| !targets.contains(r.id.as_str())) {
            class_counts[r.label.index()] += 1;
        }
        if let Some(k) = class_counts.iter().position(|&c| c < 2) {
            return Err(Error::Data(format!(
                "class {} has {} member(s); every class needs at least 2 (class with < 2 members)",
                ClassId(k as u8),
                class_counts[k]
            )));
        }

        Ok(DatasetManifest {
            records,
            class_counts,
        })
    }

    pub fn records(&self) -> &[SpecimenRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SpecimenRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn perturbed_ids(&self) -> HashSet<&str> {
        self.records
            .iter()
            .filter_map(|r| r.pair_id.as_deref())
            .collect()
    }

    /// Unperturbed specimens, in manifest order.
    pub fn originals(&self) -> Vec<&SpecimenRecord> {
        let perturbed = self.perturbed_ids();
        self.records
            .iter()
            .filter(|r| !perturbed.contains(r.id.as_str()))
            .collect()
    }

    pub fn has_pairs(&self) -> bool {
        self.records.iter().any(|r| r.pair_id.is_some())
    }

    /// (clean id, perturbed id) for every linked pair, in manifest order.
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        self.records
            .iter()
            .filter_map(|r| r.pair_id.as_deref().map(|p| (r.id.as_str(), p)))
            .collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_manifest(file, &path.display().to_string())
}

pub fn parse_manifest<R: Read>(reader: R, origin: &str) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        None => return Err(Error::parse(origin, 1, "empty manifest (missing header)")),
        Some(h) => h.map_err(|e| Error::parse(origin, 1, e.to_string()))?,
    };
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != ["id", "label", "image_path", "pair_id"] {
        return Err(Error::parse(
            origin,
            1,
            format!("expected header id,label,image_path,pair_id, found {}", header.join(",")),
        ));
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(origin, line, e.to_string()))?;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 4 {
            return Err(Error::parse(
                origin,
                line,
                format!("expected 4 fields, found {}", row.len()),
            ));
        }
        let id = row[0].trim();
        if id.is_empty() {
            return Err(Error::parse(origin, line, "empty id"));
        }
        let label = ClassId::from_token(row[1].trim()).ok_or_else(|| {
            Error::parse(origin, line, format!("unknown label token {:?}", row[1].trim()))
        })?;
        let opt = |s: &str| {
            let s = s.trim();
            (!s.is_empty()).then(|| s.to_string())
        };
        records.push(SpecimenRecord {
            id: id.to_string(),
            label,
            image_path: opt(&row[2]).map(PathBuf::from),
            pair_id: opt(&row[3]),
        });
    }
    if records.is_empty() {
        return Err(Error::parse(origin, 2, "manifest has no records"));
    }
    DatasetManifest::new(records)
}

pub fn write_manifest<W: Write>(manifest: &DatasetManifest, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "id,label,image_path,pair_id")?;
    for r in manifest.records() {
        writeln!(
            w,
            "{},{},{},{}",
            r.id,
            r.label.token(),
            r.image_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            r.pair_id.as_deref().unwrap_or("")
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Frozen encoder outputs keyed by specimen id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    encoder_name: String,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(encoder_name: impl Into<String>, ids: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: data.nrows(),
            });
        }
        if data.ncols() == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate embedding id {id:?}")));
            }
            if let Some(v) = data.row(i).iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite value {v} in row {id:?}")));
            }
        }
        Ok(EmbeddingSet {
            encoder_name: encoder_name.into(),
            ids,
            index,
            data,
        })
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(id).map(|&i| self.data.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        write!(w, "id")?;
        for j in 0..self.dim() {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for (id, row) in self.ids.iter().zip(self.data.rows()) {
            write!(w, "{id}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Loads an embedding CSV; the encoder name is the file stem.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "embeddings".into());
    parse_embeddings(std::fs::File::open(path)?, &path.display().to_string(), name)
}

pub fn parse_embeddings<R: Read>(
    reader: R,
    origin: &str,
    encoder_name: impl Into<String>,
) -> Result<EmbeddingSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(Error::parse(origin, 1, "empty embedding file")),
        Some(h) => h.map_err(|e| Error::parse(origin, 1, e.to_string()))?,
    };
    if header.len() < 2 || header[0].trim() != "id" {
        return Err(Error::parse(origin, 1, "expected header id,f0,f1,..."));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(Error::parse(
                origin,
                1,
                format!("column {} should be named f{j}, found {:?}", j + 1, name),
            ));
        }
    }
    let dim = header.len() - 1;

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(origin, line, e.to_string()))?;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        let id = row[0].trim().to_string();
        if row.len() != dim + 1 {
            return Err(Error::parse(
                origin,
                line,
                format!("row {id:?} has {} values, expected {dim}", row.len() - 1),
            ));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate id {id:?}")));
        }
        for cell in row.iter().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::parse(origin, line, format!("row {id:?}: non-numeric value {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("row {id:?}: non-finite value {cell:?}"),
                ));
            }
            values.push(v);
        }
        ids.push(id);
    }
    let data = Array2::from_shape_vec((ids.len(), dim), values)
        .map_err(|e| Error::parse(origin, 0, e.to_string()))?;
    EmbeddingSet::new(encoder_name, ids, data)
}

/// `n` vectors of i.i.d. standard normals, ids `g0`..`g{n-1}`.
pub fn generate_gaussian_control(n: usize, d: usize, seed: u64) -> Result<EmbeddingSet> {
    let ids = (0..n).map(|i| format!("g{i}")).collect();
    gaussian_control_for_ids(ids, d, seed)
}

/// Gaussian control keyed by caller-supplied ids; row `i` is the `i`-th
/// block of `d` draws from the seed's stream, so the matrix is identical to
/// [`generate_gaussian_control`] with the same `(n, d, seed)`.
pub fn gaussian_control_for_ids(ids: Vec<String>, d: usize, seed: u64) -> Result<EmbeddingSet> {
    if ids.is_empty() || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian control needs n >= 1 and d >= 1 (got n={}, d={d})",
            ids.len()
        )));
    }
    let mut values = vec![0.0; ids.len() * d];
    rng::fill_standard_normal(&mut rng::stream(seed), &mut values);
    let data = Array2::from_shape_vec((ids.len(), d), values).expect("shape matches buffer");
    EmbeddingSet::new(GAUSSIAN_CONTROL_NAME, ids, data)
}

/// Design matrix with labels; row `i` of `x` belongs to `ids[i]` and `y[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub x: Array2<f64>,
    pub y: Vec<ClassId>,
    pub ids: Vec<String>,
}

impl AlignedDataset {
    pub fn new(x: Array2<f64>, y: Vec<ClassId>, ids: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != ids.len() {
            return Err(Error::Data(format!(
                "row counts disagree: x has {}, y has {}, ids has {}",
                x.nrows(),
                y.len(),
                ids.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains non-finite values".into()));
        }
        Ok(AlignedDataset { x, y, ids })
    }

    /// Builds a dataset with placeholder ids `s0`, `s1`, ...
    pub fn from_xy(x: Array2<f64>, y: Vec<ClassId>) -> Result<Self> {
        let ids = (0..y.len()).map(|i| format!("s{i}")).collect();
        Self::new(x, y, ids)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub dataset: AlignedDataset,
    /// Embedding rows that matched no manifest record.
    pub ignored_ids: usize,
}

/// Aligns the manifest's original specimens with their embeddings, in
/// manifest order.
pub fn align(manifest: &DatasetManifest, emb: &EmbeddingSet) -> Result<Alignment> {
    align_records(&manifest.originals(), emb)
}

pub fn align_records(records: &[&SpecimenRecord], emb: &EmbeddingSet) -> Result<Alignment> {
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| !emb.contains(&r.id))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} specimen(s) missing from embeddings {:?}: {}",
            missing.len(),
            emb.encoder_name(),
            missing.join(", ")
        )));
    }
    let mut x = Array2::zeros((records.len(), emb.dim()));
    for (i, r) in records.iter().enumerate() {
        x.row_mut(i).assign(&emb.get(&r.id).expect("checked above"));
    }
    let wanted: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let ignored_ids = emb.ids().iter().filter(|id| !wanted.contains(id.as_str())).count();
    if ignored_ids > 0 {
        log::warn!(
            "{ignored_ids} embedding row(s) in {:?} match no manifest record and are ignored",
            emb.encoder_name()
        );
    }
    let dataset = AlignedDataset::new(
        x,
        records.iter().map(|r| r.label).collect(),
        records.iter().map(|r| r.id.clone()).collect(),
    )?;
    Ok(Alignment {
        dataset,
        ignored_ids,
    })
}

/// Content fingerprint of a file (SHA-256, lowercase hex).
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn describe_counts(counts: &[usize; NUM_CLASSES]) -> String {
    ClassId::all()
        .map(|c| format!("{}={}", c.token(), counts[c.index()]))
        .collect::<Vec<_>>()
        .join(" ")
}
