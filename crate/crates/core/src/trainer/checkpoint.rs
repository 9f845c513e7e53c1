//! Checkpoint archive: `metadata.json`, `trace.csv`, and one raw
//! little-endian f32 file per parameter array under `params/` or `ema/`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use super::{EpochRecord, PretrainConfig};
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderConfig, Param, ParamSet};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub augment: AugmentConfig,
    /// Completed epochs.
    pub epoch: u32,
    /// Live training weights.
    pub params: ParamSet,
    /// EMA shadow weights, when trained in shadow mode.
    pub ema: Option<ParamSet>,
    pub rng_digest: String,
    pub trace: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    epoch: u32,
    rng_digest: String,
    encoder: EncoderConfig,
    pretrain: PretrainConfig,
    augment: AugmentConfig,
    arrays: Vec<ArrayEntry>,
}

fn zip_err(path: &Path) -> impl Fn(zip::result::ZipError) -> Error + '_ {
    move |e| Error::Serde(format!("{}: {e}", path.display()))
}

fn read_entry(archive: &mut ZipArchive<File>, name: &str, path: &Path) -> Result<Vec<u8>> {
    let mut f = archive.by_name(name).map_err(zip_err(path))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

impl Checkpoint {
    /// A checkpoint holding freshly initialized weights and no history.
    pub fn from_encoder(enc: &Encoder, pretrain: PretrainConfig, augment: AugmentConfig) -> Self {
        Self {
            encoder: enc.config().clone(),
            pretrain,
            augment,
            epoch: 0,
            params: enc.params().clone(),
            ema: None,
            rng_digest: String::new(),
            trace: Vec::new(),
        }
    }

    /// Weights used for evaluation: the EMA shadow if present, else live.
    pub fn eval_params(&self) -> &ParamSet {
        self.ema.as_ref().unwrap_or(&self.params)
    }

    pub fn feature_extractor(&self) -> Result<Encoder> {
        Encoder::from_params(self.encoder.clone(), self.eval_params().clone())
    }

    pub fn live_encoder(&self) -> Result<Encoder> {
        Encoder::from_params(self.encoder.clone(), self.params.clone())
    }

    /// Digest of the evaluation weights.
    pub fn digest(&self) -> String {
        self.eval_params().digest()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut zip = ZipWriter::new(file);
        let opts = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
        let mut arrays = Vec::new();
        let groups = [("params", Some(&self.params)), ("ema", self.ema.as_ref())];
        for (group, set) in groups {
            let Some(set) = set else { continue };
            for p in set.iter() {
                let file = format!("{group}/{}.f32", p.name);
                zip.start_file(file.as_str(), opts).map_err(zip_err(path))?;
                let bytes: Vec<u8> = p.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                zip.write_all(&bytes).map_err(|e| Error::io(path, e))?;
                arrays.push(ArrayEntry {
                    name: p.name.clone(),
                    group: group.to_string(),
                    shape: p.shape.clone(),
                    file,
                });
            }
        }
        let meta = Metadata {
            format_version: CHECKPOINT_FORMAT_VERSION,
            epoch: self.epoch,
            rng_digest: self.rng_digest.clone(),
            encoder: self.encoder.clone(),
            pretrain: self.pretrain.clone(),
            augment: self.augment.clone(),
            arrays,
        };
        zip.start_file("metadata.json", opts).map_err(zip_err(path))?;
        let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
        zip.write_all(&json).map_err(|e| Error::io(path, e))?;
        zip.start_file("trace.csv", opts).map_err(zip_err(path))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "mean_ce", "mean_dwv", "weight"]).map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.trace {
            w.write_record([r.epoch.to_string(), r.mean_ce.to_string(), r.mean_dwv.to_string(), r.weight.to_string()])
                .map_err(|e| Error::Serde(e.to_string()))?;
        }
        let csv_bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        zip.write_all(&csv_bytes).map_err(|e| Error::io(path, e))?;
        zip.finish().map_err(zip_err(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut archive = ZipArchive::new(file).map_err(zip_err(path))?;
        let meta: Metadata = serde_json::from_slice(&read_entry(&mut archive, "metadata.json", path)?)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::input(format!(
                "{}: unsupported checkpoint format {}",
                path.display(),
                meta.format_version
            )));
        }
        let mut params = ParamSet::default();
        let mut ema = ParamSet::default();
        for a in &meta.arrays {
            let bytes = read_entry(&mut archive, &a.file, path)?;
            let expect = a.shape.iter().product::<usize>() * 4;
            if bytes.len() != expect {
                return Err(Error::input(format!("{}: {} holds {} bytes, expected {expect}", path.display(), a.file, bytes.len())));
            }
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let p = Param::new(a.name.clone(), a.shape.clone(), data);
            match a.group.as_str() {
                "params" => params.push(p),
                "ema" => ema.push(p),
                other => return Err(Error::input(format!("{}: unknown array group {other}", path.display()))),
            };
        }
        let trace_bytes = read_entry(&mut archive, "trace.csv", path)?;
        let trace = csv::Reader::from_reader(trace_bytes.as_slice())
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let ckpt = Self {
            encoder: meta.encoder,
            pretrain: meta.pretrain,
            augment: meta.augment,
            epoch: meta.epoch,
            params,
            ema: if ema.is_empty() { None } else { Some(ema) },
            rng_digest: meta.rng_digest,
            trace,
        };
        // the arrays must fit the declared architecture
        ckpt.live_encoder()?;
        ckpt.feature_extractor()?;
        Ok(ckpt)
    }

    /// SHA-256 of the archive bytes.
    pub fn file_digest(path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(format!("{:x}", Sha256::digest(bytes)))
    }
}
