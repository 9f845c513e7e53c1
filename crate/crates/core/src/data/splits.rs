use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::augment::{blur_with, gaussian_noise};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Proportional,
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Noise,
    Blur,
}

impl FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "blur" => Ok(Self::Blur),
            other => Err(Error::config(format!("unknown perturbation kind {other:?} (expected noise or blur)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub kind: PerturbKind,
    pub strength: f64,
}

/// Declarative description of a derived labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// 32 means 1:32, used by `proportional`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_denominator: Option<usize>,
    /// Per-class count, used by `few_shot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    #[serde(default)]
    pub label_noise_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
}

fn default_split_seed() -> u64 {
    10
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            kind: SplitKind::Proportional,
            ratio_denominator: Some(32),
            shots: None,
            label_noise_ratio: 0.0,
            perturbation: None,
            seed: default_split_seed(),
        }
    }
}

pub struct SplitOutcome {
    pub small: Dataset,
    pub rest: Dataset,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.ratio_denominator, self.shots) {
            (SplitKind::Proportional, Some(d), None) if d >= 1 => {}
            (SplitKind::FewShot, None, Some(s)) if s >= 1 => {}
            (SplitKind::Proportional, ..) => {
                return Err(Error::config("proportional split needs ratio_denominator >= 1 and no shots"))
            }
            (SplitKind::FewShot, ..) => return Err(Error::config("few_shot split needs shots >= 1 and no ratio_denominator")),
        }
        if !(0.0..1.0).contains(&self.label_noise_ratio) {
            return Err(Error::config(format!("label_noise_ratio must be in [0,1), got {}", self.label_noise_ratio)));
        }
        if let Some(p) = &self.perturbation {
            check_strength(p.kind, p.strength)?;
        }
        Ok(())
    }

    /// Select the small labeled subset, then apply label noise to it and the
    /// perturbation (if any) to both subsets.
    pub fn apply(&self, ds: &Dataset) -> Result<SplitOutcome> {
        self.validate()?;
        let (mut small, mut rest) = match self.kind {
            SplitKind::Proportional => proportional_split(ds, self.ratio_denominator.unwrap_or(1), self.seed)?,
            SplitKind::FewShot => few_shot_split(ds, self.shots.unwrap_or(1), self.seed)?,
        };
        if self.label_noise_ratio > 0.0 {
            small = inject_label_noise(&small, self.label_noise_ratio, self.seed)?;
        }
        if let Some(p) = &self.perturbation {
            small = perturb_dataset(&small, p.kind, p.strength, self.seed)?;
            rest = perturb_dataset(&rest, p.kind, p.strength, self.seed.wrapping_add(1))?;
        }
        Ok(SplitOutcome { small, rest })
    }
}

fn split_by(ds: &Dataset, seed: u64, count: impl Fn(usize) -> usize) -> (Dataset, Dataset) {
    let mut chosen = vec![false; ds.len()];
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        let take = count(idx.len());
        idx.shuffle(&mut stream(seed, &[tag::SPLIT, class as u64]));
        for &i in &idx[..take] {
            chosen[i] = true;
        }
    }
    let (small, rest): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| chosen[i]);
    (ds.subset(&small), ds.subset(&rest))
}

fn check_classes_nonempty(ds: &Dataset) -> Result<Vec<usize>> {
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::input(format!("class {} has no samples", ds.class_names()[c])));
    }
    Ok(counts)
}

/// Per class, `max(1, floor(n_c / denominator))` samples drawn uniformly
/// without replacement. Both halves keep dataset order.
pub fn proportional_split(ds: &Dataset, denominator: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if denominator == 0 {
        return Err(Error::config("ratio denominator must be at least 1"));
    }
    check_classes_nonempty(ds)?;
    Ok(split_by(ds, seed, |n| (n / denominator).max(1)))
}

/// Exactly `shots` samples per class.
pub fn few_shot_split(ds: &Dataset, shots: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let counts = check_classes_nonempty(ds)?;
    let smallest = counts.iter().copied().min().unwrap_or(0);
    if shots == 0 || shots > smallest {
        return Err(Error::input(format!("shots must be in [1, {smallest}] (smallest class), got {shots}")));
    }
    Ok(split_by(ds, seed, |_| shots))
}

/// Per class, `round(ratio * n_c)` items get a uniformly drawn different label.
pub fn inject_label_noise(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("noise ratio must be in [0,1), got {ratio}")));
    }
    let classes = ds.num_classes();
    if classes < 2 {
        return Err(Error::input("label noise needs at least two classes"));
    }
    let mut items: Vec<Sample> = ds.items().to_vec();
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        let flips = (ratio * idx.len() as f64).round() as usize;
        let mut rng = stream(seed, &[tag::LABEL_NOISE, class as u64]);
        idx.shuffle(&mut rng);
        for &i in &idx[..flips] {
            let draw = rng.gen_range(0..classes - 1);
            let new = if draw >= class { draw + 1 } else { draw };
            let s = &mut items[i];
            s.original_label = Some(s.original_label.unwrap_or(s.label));
            s.label = new;
        }
    }
    Dataset::new(items, ds.class_names().to_vec())
}

fn check_strength(kind: PerturbKind, strength: f64) -> Result<()> {
    let ok = match kind {
        PerturbKind::Noise => strength > 0.0 && strength <= 1.0,
        PerturbKind::Blur => strength > 0.0 && strength.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("invalid {kind:?} strength {strength}")))
    }
}

/// Gaussian noise with `density = strength`, or Gaussian blur with a fixed
/// radius `strength`, applied to every image. Labels are untouched.
pub fn perturb_dataset(ds: &Dataset, kind: PerturbKind, strength: f64, seed: u64) -> Result<Dataset> {
    check_strength(kind, strength)?;
    ds.map_items(|i, s| {
        let image = match kind {
            PerturbKind::Noise => gaussian_noise(&s.image, strength, &mut stream(seed, &[tag::PERTURB, i as u64]))?,
            PerturbKind::Blur => blur_with(&s.image, strength),
        };
        Ok(Sample { image, ..s.clone() })
    })
}

/// One line of a split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub class: String,
    pub subset: String,
    /// Original class of a relabeled sample; empty when the label is clean.
    pub relabeled_from: Option<String>,
}

pub fn write_split_manifest(path: &Path, subsets: &[(&str, &Dataset)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for (name, ds) in subsets {
        for s in ds.items() {
            w.serialize(ManifestRow {
                sample_id: s.id.clone(),
                class: ds.class_names()[s.label].clone(),
                subset: name.to_string(),
                relabeled_from: s.original_label.map(|l| ds.class_names()[l].clone()),
            })
            .map_err(|e| Error::Serde(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Serde(e.to_string()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::ImageGrid;
    use std::collections::HashSet;

    fn dataset(counts: &[usize]) -> Dataset {
        let mut items = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                items.push(Sample::new(ImageGrid::filled(4, 4, 0.5), c, format!("c{c}_{i}")));
            }
        }
        Dataset::new(items, (0..counts.len()).map(|c| format!("c{c}")).collect()).unwrap()
    }

    fn ids(ds: &Dataset) -> HashSet<String> {
        ds.items().iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn proportional_counts() {
        let (small, rest) = proportional_split(&dataset(&[233]), 32, 1).unwrap();
        assert_eq!(small.len(), 7);
        assert_eq!(rest.len(), 226);
        let (small, rest) = proportional_split(&dataset(&[50; 10]), 8, 1).unwrap();
        assert_eq!(small.len(), 60);
        assert!(small.class_counts().iter().all(|&c| c == 6));
        assert_eq!(rest.len(), 440);
        let (small, rest) = proportional_split(&dataset(&[5, 3]), 1, 1).unwrap();
        assert_eq!((small.len(), rest.len()), (8, 0));
        let (small, _) = proportional_split(&dataset(&[3, 40]), 32, 1).unwrap();
        assert_eq!(small.class_counts(), vec![1, 1]);
    }

    #[test]
    fn splits_partition_and_repeat() {
        let ds = dataset(&[20, 13, 9]);
        let (a, b) = proportional_split(&ds, 4, 7).unwrap();
        let (sa, sb) = (ids(&a), ids(&b));
        assert!(sa.is_disjoint(&sb));
        assert_eq!(sa.union(&sb).count(), ds.len());
        let (a2, _) = proportional_split(&ds, 4, 7).unwrap();
        assert_eq!(a.ids(), a2.ids());
        let (a3, _) = proportional_split(&ds, 4, 8).unwrap();
        assert_ne!(a.ids(), a3.ids());
    }

    #[test]
    fn few_shot_counts() {
        let ds = dataset(&[50; 10]);
        let (small, rest) = few_shot_split(&ds, 5, 3).unwrap();
        assert_eq!(small.len(), 50);
        assert!(small.class_counts().iter().all(|&c| c == 5));
        assert_eq!(rest.len(), 450);
        assert_eq!(few_shot_split(&dataset(&[1; 10]), 1, 0).unwrap().0.len(), 10);
        let (all, none) = few_shot_split(&dataset(&[4, 6]), 4, 0).unwrap();
        assert_eq!((all.class_counts()[0], none.class_counts()[0]), (4, 0));
        assert!(matches!(few_shot_split(&dataset(&[4, 6]), 5, 0), Err(Error::Input(_))));
        assert!(matches!(few_shot_split(&dataset(&[4, 0]), 1, 0), Err(Error::Input(_))));
    }

    #[test]
    fn label_noise_counts() {
        let ds = dataset(&[7, 7]);
        let noisy = inject_label_noise(&ds, 0.3, 2).unwrap();
        for class in 0..2 {
            let flipped = noisy.items().iter().filter(|s| s.original_label == Some(class)).count();
            assert_eq!(flipped, 2);
        }
        assert_eq!(inject_label_noise(&ds, 0.0, 2).unwrap(), ds);
        let ds = dataset(&[10, 10, 10]);
        let noisy = inject_label_noise(&ds, 0.5, 4).unwrap();
        let relabeled: Vec<_> = noisy.items().iter().filter(|s| s.original_label.is_some()).collect();
        assert_eq!(relabeled.len(), 15);
        assert!(relabeled.iter().all(|s| Some(s.label) != s.original_label));
        assert!(noisy.items().iter().zip(ds.items()).all(|(a, b)| a.image == b.image));
        assert!(matches!(inject_label_noise(&dataset(&[5]), 0.2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn perturbation_preserves_shape() {
        let ds = dataset(&[3, 2]);
        let noisy = perturb_dataset(&ds, PerturbKind::Noise, 0.2, 0).unwrap();
        assert_eq!(noisy.labels(), ds.labels());
        assert!(noisy.items().iter().all(|s| s.image.height() == 4));
        assert_ne!(noisy.get(0).image, ds.get(0).image);
        assert!(perturb_dataset(&ds, PerturbKind::Noise, 0.0, 0).is_err());
        assert!(perturb_dataset(&ds, PerturbKind::Blur, -1.0, 0).is_err());
        assert!(matches!("sharpen".parse::<PerturbKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn blur_matches_bruteforce_kernel() {
        let size = 41;
        let mut img = ImageGrid::filled(size, size, 0.0);
        img = ImageGrid::from_fn(size, size, |y, x| if (y, x) == (20, 20) { 1.0 } else { img.get(y, x) });
        let items = vec![Sample::new(img, 0, "impulse")];
        let ds = Dataset::new(items, vec!["a".into()]).unwrap();
        let out = perturb_dataset(&ds, PerturbKind::Blur, 3.0, 0).unwrap();
        let half = 9i64;
        let g: Vec<f64> = (-half..=half).map(|t| (-(t * t) as f64 / 18.0).exp()).collect();
        let norm: f64 = g.iter().sum();
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as i64 - 20, x as i64 - 20);
                let expect = if dy.abs() <= half && dx.abs() <= half {
                    g[(dy + half) as usize] * g[(dx + half) as usize] / (norm * norm)
                } else {
                    0.0
                };
                assert!((out.get(0).image.get(y, x) as f64 - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noise_strength_spread() {
        let items = vec![Sample::new(ImageGrid::filled(64, 64, 0.5), 0, "flat")];
        let ds = Dataset::new(items, vec!["a".into()]).unwrap();
        let out = perturb_dataset(&ds, PerturbKind::Noise, 0.5, 11).unwrap();
        let d: Vec<f64> = out.get(0).image.pixels().iter().map(|&p| p as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        // clamping at 0.5 +- 1 sigma: sd = 0.5 * sqrt(E[clamp(Z, -1, 1)^2]) = 0.3592
        assert!((std - 0.3592).abs() < 0.015, "{std}");
    }

    #[test]
    fn spec_apply_and_manifest() {
        let ds = dataset(&[14, 14]);
        let spec = SplitSpec {
            kind: SplitKind::Proportional,
            ratio_denominator: Some(2),
            label_noise_ratio: 0.3,
            ..SplitSpec::default()
        };
        let out = spec.apply(&ds).unwrap();
        assert_eq!(out.small.len(), 14);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_split_manifest(&path, &[("small", &out.small), ("rest", &out.rest)]).unwrap();
        let rows = read_split_manifest(&path).unwrap();
        assert_eq!(rows.len(), 28);
        assert_eq!(rows.iter().filter(|r| r.relabeled_from.is_some()).count(), 4);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("sample_id,class,subset,relabeled_from\n"));
        let bad = SplitSpec {
            kind: SplitKind::FewShot,
            ..SplitSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
