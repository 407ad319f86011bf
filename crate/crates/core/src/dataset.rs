//! Train/validation manifest construction.
//!
//! COVID and CAP patients are split patient-wise so no patient appears on
//! both sides. Normal patients are split the same way, but each validation
//! Normal patient can lend a small fraction of its slices to training.
//! Third-party images are capped at the primary image count and only ever
//! enter train or val.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::Class;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("no annotated {0} patients")]
    LabelWithZeroPatients(Class),
    #[error("train ratio for {class} must lie in (0, 1), got {ratio}")]
    InvalidRatio { class: Class, ratio: f64 },
    #[error("fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("no {0} images in the training split")]
    MissingClass(Class),
    #[error("patient {0:?} listed twice")]
    DuplicatePatient(String),
    #[error("annotated training patient {0:?} has no images")]
    NoImages(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Primary,
    ThirdParty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub slice_index: usize,
    pub window: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub label: Class,
    pub source: Source,
    pub annotated: bool,
    pub images: Vec<ImageRef>,
}

/// One line of the manifest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub split: Split,
    pub source: Source,
    pub patient_id: String,
    pub slice_index: usize,
    pub window: String,
    pub label: Class,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRatios {
    pub covid: f64,
    pub cap: f64,
    pub normal: f64,
}

impl Default for TrainRatios {
    fn default() -> Self {
        Self {
            covid: 0.7,
            cap: 0.9,
            normal: 0.7,
        }
    }
}

impl TrainRatios {
    pub fn get(&self, class: Class) -> f64 {
        match class {
            Class::Covid => self.covid,
            Class::Cap => self.cap,
            Class::Normal => self.normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: TrainRatios,
    pub seed: u64,
    /// Fraction of each validation Normal patient's slices moved to train.
    pub normal_shared_slice_fraction: f64,
    /// Third-party images admitted, as a multiple of the primary image count.
    pub third_party_cap_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: TrainRatios::default(),
            seed: 0,
            normal_shared_slice_fraction: 0.1,
            third_party_cap_ratio: 1.0,
        }
    }
}

impl SplitConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        for class in Class::ALL {
            let ratio = self.ratios.get(class);
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(DatasetError::InvalidRatio { class, ratio });
            }
        }
        if !(0.0..=1.0).contains(&self.normal_shared_slice_fraction) {
            return Err(DatasetError::InvalidFraction(self.normal_shared_slice_fraction));
        }
        if !(self.third_party_cap_ratio >= 0.0 && self.third_party_cap_ratio.is_finite()) {
            return Err(DatasetError::InvalidFraction(self.third_party_cap_ratio));
        }
        Ok(())
    }
}

// Independent RNG streams so that, e.g., adding third-party data never
// changes the primary split.
const STREAM_SHARED_SLICES: u64 = 16;
const STREAM_THIRD_PARTY_CAP: u64 = 17;
const STREAM_THIRD_PARTY_SPLIT: u64 = 32;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Train patient count for `n` patients: nearest integer to `ratio · n`,
/// adjusted so that validation keeps at least one patient.
pub fn train_count(n: usize, ratio: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
}

impl PatientSplit {
    pub fn side(&self, patient_id: &str) -> Option<Split> {
        if self.train.contains(patient_id) {
            Some(Split::Train)
        } else if self.val.contains(patient_id) {
            Some(Split::Val)
        } else {
            None
        }
    }
}

fn split_impl(
    records: &[PatientRecord],
    cfg: &SplitConfig,
    stream_base: u64,
    require_all_labels: bool,
) -> Result<PatientSplit, DatasetError> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.patient_id.as_str()) {
            return Err(DatasetError::DuplicatePatient(r.patient_id.clone()));
        }
    }
    let mut out = PatientSplit::default();
    for class in Class::ALL {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.annotated && r.label == class)
            .map(|r| r.patient_id.as_str())
            .collect();
        if ids.is_empty() {
            if require_all_labels {
                return Err(DatasetError::LabelWithZeroPatients(class));
            }
            continue;
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng(cfg.seed, stream_base + class.index() as u64));
        let n_train = train_count(ids.len(), cfg.ratios.get(class));
        out.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        out.val.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    Ok(out)
}

/// Patient-wise split of the annotated records, per label. Deterministic in
/// `cfg.seed` and independent of input order.
pub fn split_patients(records: &[PatientRecord], cfg: &SplitConfig) -> Result<PatientSplit, DatasetError> {
    split_impl(records, cfg, 0, true)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AdmittedImage {
    pub patient_id: String,
    pub image: ImageRef,
}

/// Selects at most `cap` third-party images uniformly at random (seeded).
/// Returned in sorted order.
pub fn cap_third_party(cap: usize, third_party: &[PatientRecord], seed: u64) -> Vec<AdmittedImage> {
    let mut all: Vec<AdmittedImage> = third_party
        .iter()
        .filter(|r| r.annotated)
        .flat_map(|r| {
            r.images.iter().map(|i| AdmittedImage {
                patient_id: r.patient_id.clone(),
                image: i.clone(),
            })
        })
        .collect();
    all.sort();
    if all.len() > cap {
        all.shuffle(&mut rng(seed, STREAM_THIRD_PARTY_CAP));
        all.truncate(cap);
        all.sort();
    }
    all
}

/// `total / (3 · count_c)` over the training images.
pub fn class_weights(records: &[ManifestRecord]) -> Result<BTreeMap<Class, f64>, DatasetError> {
    let mut counts = [0usize; 3];
    for r in records.iter().filter(|r| r.split == Split::Train) {
        counts[r.label.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    Class::ALL
        .into_iter()
        .map(|c| {
            let n = counts[c.index()];
            if n == 0 {
                return Err(DatasetError::MissingClass(c));
            }
            Ok((c, total as f64 / (3.0 * n as f64)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub class_weights: BTreeMap<Class, f64>,
    pub split_seed: u64,
    pub patient_split: PatientSplit,
    pub third_party_split: PatientSplit,
    /// Unannotated primary patients, left for patient-level validation.
    pub unannotated: Vec<String>,
}

#[derive(Serialize)]
struct ManifestMeta<'a> {
    class_weights: &'a BTreeMap<Class, f64>,
    split_seed: u64,
    train_images: usize,
    val_images: usize,
    primary_images: usize,
    third_party_images: usize,
    patient_split: &'a PatientSplit,
    third_party_split: &'a PatientSplit,
    unannotated: &'a [String],
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }

    /// One JSON object per image.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn meta_json(&self) -> String {
        let meta = ManifestMeta {
            class_weights: &self.class_weights,
            split_seed: self.split_seed,
            train_images: self.split(Split::Train).count(),
            val_images: self.split(Split::Val).count(),
            primary_images: self.count_source(Source::Primary),
            third_party_images: self.count_source(Source::ThirdParty),
            patient_split: &self.patient_split,
            third_party_split: &self.third_party_split,
            unannotated: &self.unannotated,
        };
        let mut s = serde_json::to_string_pretty(&meta).expect("manifest meta serializes");
        s.push('\n');
        s
    }
}

fn record(r: &PatientRecord, image: &ImageRef, split: Split) -> ManifestRecord {
    ManifestRecord {
        split,
        source: r.source,
        patient_id: r.patient_id.clone(),
        slice_index: image.slice_index,
        window: image.window.clone(),
        label: r.label,
        path: image.path.clone(),
    }
}

/// Builds the full manifest from primary and third-party patient records.
pub fn build_manifest(
    primary: &[PatientRecord],
    third_party: &[PatientRecord],
    cfg: &SplitConfig,
) -> Result<DatasetManifest, DatasetError> {
    let split = split_patients(primary, cfg)?;
    let mut shared_rng = rng(cfg.seed, STREAM_SHARED_SLICES);
    let mut records = Vec::new();

    let mut by_id: Vec<&PatientRecord> = primary.iter().filter(|r| r.annotated).collect();
    by_id.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    for r in by_id {
        let side = split.side(&r.patient_id).expect("every annotated patient is split");
        if side == Split::Train && r.images.is_empty() {
            return Err(DatasetError::NoImages(r.patient_id.clone()));
        }
        let lent: BTreeSet<usize> = if side == Split::Val && r.label == Class::Normal {
            let mut slices: Vec<usize> = r
                .images
                .iter()
                .map(|i| i.slice_index)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let k = (cfg.normal_shared_slice_fraction * slices.len() as f64).round() as usize;
            slices.shuffle(&mut shared_rng);
            slices.into_iter().take(k).collect()
        } else {
            BTreeSet::new()
        };
        for image in &r.images {
            let s = if lent.contains(&image.slice_index) { Split::Train } else { side };
            records.push(record(r, image, s));
        }
    }

    let primary_images = records.len();
    let cap = (cfg.third_party_cap_ratio * primary_images as f64).floor() as usize;
    let admitted = cap_third_party(cap, third_party, cfg.seed);
    let third_split = split_impl(third_party, cfg, STREAM_THIRD_PARTY_SPLIT, false)?;
    let tp_by_id: BTreeMap<&str, &PatientRecord> =
        third_party.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    for a in &admitted {
        let r = tp_by_id[a.patient_id.as_str()];
        let side = third_split.side(&a.patient_id).expect("admitted patients are split");
        records.push(record(r, &a.image, side));
    }

    records.sort();
    let class_weights = class_weights(&records)?;
    let mut unannotated: Vec<String> = primary
        .iter()
        .filter(|r| !r.annotated)
        .map(|r| r.patient_id.clone())
        .collect();
    unannotated.sort();
    Ok(DatasetManifest {
        records,
        class_weights,
        split_seed: cfg.seed,
        patient_split: split,
        third_party_split: third_split,
        unannotated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patients(class: Class, n: usize, source: Source, slices: usize) -> Vec<PatientRecord> {
        let tag = match source {
            Source::Primary => "p",
            Source::ThirdParty => "t",
        };
        (0..n)
            .map(|i| {
                let id = format!("{tag}-{class}-{i:03}");
                PatientRecord {
                    images: (0..slices)
                        .flat_map(|s| {
                            ["SPGC3", "SPGC4"].map(|w| ImageRef {
                                slice_index: s,
                                window: w.into(),
                                path: format!("{id}/{id}_{s:04}_{w}.png"),
                            })
                        })
                        .collect(),
                    patient_id: id,
                    label: class,
                    source,
                    annotated: true,
                }
            })
            .collect()
    }

    fn cohort(covid: usize, cap: usize, normal: usize) -> Vec<PatientRecord> {
        let mut v = patients(Class::Covid, covid, Source::Primary, 10);
        v.extend(patients(Class::Cap, cap, Source::Primary, 10));
        v.extend(patients(Class::Normal, normal, Source::Primary, 10));
        v
    }

    fn count(split: &PatientSplit, records: &[PatientRecord], class: Class) -> (usize, usize) {
        let of = |set: &BTreeSet<String>| {
            records
                .iter()
                .filter(|r| r.label == class && set.contains(&r.patient_id))
                .count()
        };
        (of(&split.train), of(&split.val))
    }

    #[test]
    fn published_ratios() {
        let recs = cohort(10, 10, 10);
        let s = split_patients(&recs, &SplitConfig { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(count(&s, &recs, Class::Covid), (7, 3));
        assert_eq!(count(&s, &recs, Class::Cap), (9, 1));
        assert_eq!(count(&s, &recs, Class::Normal), (7, 3));
    }

    #[test]
    fn validation_always_keeps_a_patient() {
        assert_eq!(train_count(1, 0.9), 0);
        assert_eq!(train_count(2, 0.9), 1);
        assert_eq!(train_count(3, 0.9), 2);
        assert_eq!(train_count(60, 0.9), 54);
        assert_eq!(train_count(171, 0.7), 120);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let recs = cohort(12, 5, 9);
        let cfg = SplitConfig { seed: 99, ..Default::default() };
        let a = split_patients(&recs, &cfg).unwrap();
        let mut reversed = recs.clone();
        reversed.reverse();
        assert_eq!(a, split_patients(&reversed, &cfg).unwrap());
        let other = split_patients(&recs, &SplitConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn split_errors() {
        assert_eq!(
            split_patients(&cohort(3, 0, 3), &SplitConfig::default()),
            Err(DatasetError::LabelWithZeroPatients(Class::Cap))
        );
        let bad = SplitConfig {
            ratios: TrainRatios { covid: 1.0, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(split_patients(&cohort(3, 3, 3), &bad), Err(DatasetError::InvalidRatio { .. })));
        let mut dup = cohort(2, 2, 2);
        dup.push(dup[0].clone());
        assert!(matches!(split_patients(&dup, &SplitConfig::default()), Err(DatasetError::DuplicatePatient(_))));
    }

    #[test]
    fn unannotated_patients_are_held_out() {
        let mut recs = cohort(4, 4, 4);
        recs[0].annotated = false;
        let m = build_manifest(&recs, &[], &SplitConfig::default()).unwrap();
        assert_eq!(m.unannotated, vec![recs[0].patient_id.clone()]);
        assert!(m.records.iter().all(|r| r.patient_id != recs[0].patient_id));
    }

    #[test]
    fn cap_examples() {
        let tp = patients(Class::Covid, 50, Source::ThirdParty, 50); // 5000 images
        let admitted = cap_third_party(1000, &tp, 3);
        assert_eq!(admitted.len(), 1000);
        assert_eq!(admitted, cap_third_party(1000, &tp, 3));
        let small = patients(Class::Covid, 4, Source::ThirdParty, 50); // 400 images
        assert_eq!(cap_third_party(1000, &small, 3).len(), 400);
    }

    #[test]
    fn class_weight_examples() {
        let mk = |counts: [usize; 3]| -> Vec<ManifestRecord> {
            Class::ALL
                .into_iter()
                .flat_map(|c| {
                    (0..counts[c.index()]).map(move |i| ManifestRecord {
                        split: Split::Train,
                        source: Source::Primary,
                        patient_id: format!("{c}{i}"),
                        slice_index: i,
                        window: "w".into(),
                        label: c,
                        path: String::new(),
                    })
                })
                .collect()
        };
        let w = class_weights(&mk([5, 5, 5])).unwrap();
        assert!(w.values().all(|&x| x == 1.0));
        let w = class_weights(&mk([100, 50, 50])).unwrap();
        assert!((w[&Class::Covid] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[&Class::Cap] - 4.0 / 3.0).abs() < 1e-12);
        assert!((w[&Class::Normal] - 4.0 / 3.0).abs() < 1e-12);
        let w = class_weights(&mk([1, 1, 2])).unwrap();
        assert!((w[&Class::Covid] - 4.0 / 3.0).abs() < 1e-12);
        assert!((w[&Class::Normal] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(class_weights(&mk([1, 0, 2])), Err(DatasetError::MissingClass(Class::Cap)));
    }

    #[test]
    fn manifest_invariants() {
        let recs = cohort(20, 6, 15);
        let tp = {
            let mut t = patients(Class::Covid, 40, Source::ThirdParty, 10);
            t.extend(patients(Class::Normal, 40, Source::ThirdParty, 10));
            t
        };
        let cfg = SplitConfig { seed: 5, ..Default::default() };
        let m = build_manifest(&recs, &tp, &cfg).unwrap();
        // Disjointness for COVID/CAP.
        for r in m.split(Split::Train).filter(|r| r.label != Class::Normal && r.source == Source::Primary) {
            assert!(!m.split(Split::Val).any(|v| v.patient_id == r.patient_id));
        }
        // Normal val patients lend 10% of their 10 slices (one slice, two windows).
        for id in m.patient_split.val.iter().filter(|id| id.contains("Normal")) {
            let lent = m.split(Split::Train).filter(|r| &r.patient_id == id).count();
            assert_eq!(lent, 2, "{id}");
        }
        assert!(m.count_source(Source::ThirdParty) <= m.count_source(Source::Primary));
        assert_eq!(m.count_source(Source::Primary), 41 * 20);
        let total = m.split(Split::Train).count() as f64;
        let weighted: f64 = Class::ALL
            .iter()
            .map(|c| m.class_weights[c] * m.split(Split::Train).filter(|r| r.label == *c).count() as f64)
            .sum();
        assert!((weighted - total).abs() <= 1e-9 * total);
        let again = build_manifest(&recs, &tp, &cfg).unwrap();
        assert_eq!(m.to_jsonl(), again.to_jsonl());
        assert_eq!(m.meta_json(), again.meta_json());
    }

    #[test]
    fn jsonl_schema() {
        let m = build_manifest(&cohort(2, 2, 2), &[], &SplitConfig::default()).unwrap();
        let line = m.to_jsonl().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in ["patient_id", "slice_index", "window", "label", "split", "source"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["split"], "train");
        assert_eq!(v["source"], "primary");
        assert!(m.meta_json().contains("\"COVID\""));
    }

    proptest! {
        #[test]
        fn third_party_cap_holds(
            primary_n in 1usize..6,
            tp_n in 0usize..30,
            tp_slices in 1usize..20,
            seed in any::<u64>(),
        ) {
            let recs = cohort(primary_n + 1, primary_n + 1, primary_n + 1);
            let tp = patients(Class::Covid, tp_n, Source::ThirdParty, tp_slices);
            let m = build_manifest(&recs, &tp, &SplitConfig { seed, ..Default::default() }).unwrap();
            prop_assert!(m.count_source(Source::ThirdParty) <= m.count_source(Source::Primary));
        }
    }
}
