//! Labeled image datasets, their derived splits, and a synthetic generator.

mod folder;
mod splits;
mod synth;

use std::collections::HashSet;

use crate::augment::ImageGrid;
use crate::error::{Error, Result};

pub use folder::load_image_folder;
pub use splits::{
    few_shot_split, inject_label_noise, perturb_dataset, proportional_split, read_split_manifest, write_split_manifest,
    ManifestRow, PerturbKind, Perturbation, SplitKind, SplitOutcome, SplitSpec,
};
pub use synth::{synth_generate, SynthConfig, SHAPE_CATALOG};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageGrid,
    pub label: usize,
    pub id: String,
    /// Set when label noise replaced the true label.
    pub original_label: Option<usize>,
}

impl Sample {
    pub fn new(image: ImageGrid, label: usize, id: impl Into<String>) -> Self {
        Self {
            image,
            label,
            id: id.into(),
            original_label: None,
        }
    }
}

/// An ordered collection of labeled single-channel images of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<Sample>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &items {
            if s.label >= class_names.len() {
                return Err(Error::input(format!(
                    "sample {} has label {} but only {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::input(format!("duplicate sample id {}", s.id)));
            }
        }
        if let Some(first) = items.first() {
            let dims = (first.image.height(), first.image.width());
            if let Some(bad) = items.iter().find(|s| (s.image.height(), s.image.width()) != dims) {
                return Err(Error::input(format!(
                    "sample {} is {}x{}, expected {}x{}",
                    bad.id,
                    bad.image.height(),
                    bad.image.width(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(Self { items, class_names })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.items[i]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> Vec<&ImageGrid> {
        self.items.iter().map(|s| &s.image).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|s| s.id.as_str()).collect()
    }

    /// Number of items per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.items.iter().enumerate() {
            out[s.label].push(i);
        }
        out
    }

    /// Image side, if the dataset is nonempty and square.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.items.first().map(|s| (s.image.height(), s.image.width()))
    }

    /// Items at `indices`, in the given order, sharing class names.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub(crate) fn map_items(&self, f: impl Fn(usize, &Sample) -> Result<Sample>) -> Result<Dataset> {
        let items = self.items.iter().enumerate().map(|(i, s)| f(i, s)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            items,
            class_names: self.class_names.clone(),
        })
    }
}
