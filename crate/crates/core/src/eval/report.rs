use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Linear,
    FineTuned,
}

impl Protocol {
    pub fn code(self) -> &'static str {
        match self {
            Protocol::Linear => "linear",
            Protocol::FineTuned => "fine_tuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub classifier: String,
    /// Whether features were standardized (k-NN only).
    pub standardized: bool,
    pub class_names: Vec<String>,
    pub overall_accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion_matrix[true][predicted]`.
    pub confusion_matrix: Vec<Vec<usize>>,
    pub best_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub stable_accuracy: Option<f64>,
    /// Test accuracy after each fine-tuning epoch.
    pub epoch_accuracies: Vec<f64>,
    pub num_train: usize,
    pub num_test: usize,
    pub config_digest: String,
    pub checkpoint_digest: String,
    pub warnings: Vec<String>,
}

/// One line of the evaluation summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub protocol: String,
    pub classifier: String,
    pub overall_accuracy: f64,
    pub best_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub stable_accuracy: Option<f64>,
    pub num_train: usize,
    pub num_test: usize,
    pub config_digest: String,
    pub checkpoint_digest: String,
}

fn serde_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Serde(format!("{}: {e}", path.display()))
}

impl EvalReport {
    pub fn from_predictions(
        protocol: Protocol,
        classifier: &str,
        test: &Dataset,
        predicted: &[usize],
        warnings: Vec<String>,
    ) -> Self {
        let c = test.num_classes();
        let mut confusion = vec![vec![0usize; c]; c];
        for (s, &p) in test.items().iter().zip(predicted) {
            confusion[s.label][p.min(c - 1)] += 1;
        }
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        Self {
            protocol,
            classifier: classifier.to_string(),
            standardized: false,
            class_names: test.class_names().to_vec(),
            overall_accuracy: correct as f64 / test.len().max(1) as f64,
            per_class_accuracy: per_class,
            confusion_matrix: confusion,
            best_accuracy: None,
            final_accuracy: None,
            stable_accuracy: None,
            epoch_accuracies: Vec::new(),
            num_train: 0,
            num_test: test.len(),
            config_digest: String::new(),
            checkpoint_digest: String::new(),
            warnings,
        }
    }

    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            protocol: self.protocol.code().to_string(),
            classifier: self.classifier.clone(),
            overall_accuracy: self.overall_accuracy,
            best_accuracy: self.best_accuracy,
            final_accuracy: self.final_accuracy,
            stable_accuracy: self.stable_accuracy,
            num_train: self.num_train,
            num_test: self.num_test,
            config_digest: self.config_digest.clone(),
            checkpoint_digest: self.checkpoint_digest.clone(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    /// Append the summary row, writing the header if the file is new or empty.
    pub fn append_summary_csv(&self, path: &Path) -> Result<()> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(self.summary()).map_err(serde_err(path))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Confusion matrix with a `true\predicted` corner cell, class names as
    /// column headers and one row per true class.
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(serde_err(path))?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header).map_err(serde_err(path))?;
        for (name, row) in self.class_names.iter().zip(&self.confusion_matrix) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec).map_err(serde_err(path))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
