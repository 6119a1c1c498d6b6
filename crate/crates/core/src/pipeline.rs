//! Glue between the stages: part-network directories, embedding labelled
//! samples, fitting the head set, and turning frame lists into video
//! descriptors.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auth::{video_descriptor, Role, VideoDescriptor};
use crate::checkpoint::read_checkpoint;
use crate::datapipe::{load_image, load_with_landmarks, Landmark, LabeledSample, PartTable, Split, ATTRIBUTES};
use crate::discovery::{discattr_features, Dictionary};
use crate::error::{Error, Result};
use crate::heads::{embed_parts, train_head, AttributeHead, HeadData, HeadSet, MissingPolicy};
use crate::netdef::Network;

pub type PartEmbeddings = BTreeMap<String, Option<Vec<f32>>>;

pub const CHECKPOINT_EXT: &str = "ckpt";
pub const DICTIONARY_EXT: &str = "dict";

pub fn part_checkpoint(dir: &Path, part: &str) -> PathBuf {
    dir.join(format!("{part}.{CHECKPOINT_EXT}"))
}

pub fn part_dictionary(dir: &Path, part: &str) -> PathBuf {
    dir.join(format!("{part}.{DICTIONARY_EXT}"))
}

/// Loads `<dir>/<part>.ckpt` for every part of the table that has one.
pub fn load_part_nets(dir: &Path, table: &PartTable) -> Result<BTreeMap<String, Network>> {
    let mut nets = BTreeMap::new();
    for part in &table.parts {
        let path = part_checkpoint(dir, &part.name);
        if path.exists() {
            let net = read_checkpoint(&path)?;
            let (h, w) = (net.spec.input_h, net.spec.input_w);
            if (h, w) != (part.window.h, part.window.w) {
                return Err(Error::Data(format!(
                    "{}: network expects {w}x{h} crops, part window is {}x{}",
                    path.display(),
                    part.window.w,
                    part.window.h
                )));
            }
            nets.insert(part.name.clone(), net);
        }
    }
    if nets.is_empty() {
        return Err(Error::Data(format!("no part checkpoints in {}", dir.display())));
    }
    Ok(nets)
}

/// Loads `<dir>/<part>.dict` in part-table order, skipping parts without one.
pub fn load_dictionaries(dir: &Path, table: &PartTable) -> Result<Vec<Dictionary>> {
    let dicts: Vec<Dictionary> = table
        .parts
        .iter()
        .map(|p| part_dictionary(dir, &p.name))
        .filter(|p| p.exists())
        .map(Dictionary::load)
        .collect::<Result<_>>()?;
    if dicts.is_empty() {
        return Err(Error::Data(format!("no dictionaries in {}", dir.display())));
    }
    Ok(dicts)
}

#[derive(Clone, Debug)]
pub struct EmbeddedSample {
    pub source: String,
    pub labels: Vec<u8>,
    pub embeddings: PartEmbeddings,
}

/// Part embeddings of every sample in `split`.
pub fn embed_samples(
    samples: &[LabeledSample],
    split: Split,
    table: &PartTable,
    nets: &BTreeMap<String, Network>,
) -> Result<Vec<EmbeddedSample>> {
    samples
        .par_iter()
        .filter(|s| s.split == split)
        .map(|s| {
            let (image, s) = load_with_landmarks(s)?;
            Ok(EmbeddedSample {
                source: s.image_ref.display().to_string(),
                embeddings: embed_parts(&image, &s.landmarks, table, nets)?,
                labels: s.labels,
            })
        })
        .collect()
}

fn head_data(samples: &[EmbeddedSample], parts: &[String], attr: usize) -> HeadData {
    let mut d = HeadData::default();
    for s in samples {
        let blocks: Option<Vec<&Vec<f32>>> = parts.iter().map(|p| s.embeddings.get(p).and_then(Option::as_ref)).collect();
        if let Some(blocks) = blocks {
            d.features.push(blocks.into_iter().flatten().map(|&v| v as f64).collect());
            d.labels.push(s.labels[attr]);
        }
    }
    d
}

/// One head per attribute that some loaded part predicts, over the
/// concatenated embeddings of those parts. Attributes whose train or dev data
/// lack a class are skipped with a warning.
pub fn fit_head_set(
    train: &[EmbeddedSample],
    dev: &[EmbeddedSample],
    table: &PartTable,
    grid: &[f64],
    seed: u64,
    missing: MissingPolicy,
) -> Result<HeadSet> {
    let available: Vec<&str> = train
        .first()
        .map(|s| s.embeddings.iter().filter(|(_, v)| v.is_some()).map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let jobs: Vec<(usize, &str, Vec<String>)> = ATTRIBUTES
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| {
            let parts: Vec<String> = table
                .parts_for(a)
                .into_iter()
                .filter(|p| available.contains(&p.name.as_str()))
                .map(|p| p.name.clone())
                .collect();
            (!parts.is_empty()).then_some((i, a, parts))
        })
        .collect();
    let heads: Vec<Option<AttributeHead>> = jobs
        .par_iter()
        .map(|(i, a, parts)| {
            let (tr, dv) = (head_data(train, parts, *i), head_data(dev, parts, *i));
            match train_head(a, parts.clone(), &tr, &dv, grid, seed) {
                Ok(h) => Ok(Some(h)),
                Err(Error::Data(msg)) => {
                    log::warn!("{a}: no head ({msg})");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let heads: Vec<AttributeHead> = heads.into_iter().flatten().collect();
    if heads.is_empty() {
        return Err(Error::Data("no attribute head could be trained".into()));
    }
    Ok(HeadSet { heads, missing })
}

/// Per-frame feature extractor for the verification protocol.
pub enum Extractor {
    /// Calibrated attribute probabilities; attributes without a usable head
    /// read 0.5.
    Attributes(HeadSet),
    /// Concatenated per-part cluster memberships.
    DiscAttrs { dictionaries: Vec<Dictionary>, sparsity: usize },
}

impl Extractor {
    /// `None` when no part of the frame could be embedded.
    pub fn frame_feature(&self, embeddings: &PartEmbeddings) -> Result<Option<Vec<f64>>> {
        if embeddings.values().all(Option::is_none) {
            return Ok(None);
        }
        Ok(Some(match self {
            Extractor::Attributes(heads) => heads.predict(embeddings)?.into_iter().map(|p| p.unwrap_or(0.5)).collect(),
            Extractor::DiscAttrs { dictionaries, sparsity } => discattr_features(embeddings, dictionaries, *sparsity)?,
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub image: PathBuf,
    pub landmarks: Vec<Landmark>,
}

/// One line of a video manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video: String,
    pub identity: String,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub sensor: String,
    #[serde(default)]
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub frames: Vec<FrameRef>,
}

/// JSON-lines video manifest; relative frame paths resolve against the
/// manifest's directory.
pub fn read_video_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: VideoRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        for f in &mut rec.frames {
            if f.image.is_relative() {
                f.image = base.join(&f.image);
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn frame_embeddings(frame: &FrameRef, table: &PartTable, nets: &BTreeMap<String, Network>) -> Result<PartEmbeddings> {
    let image = load_image(&frame.image)?;
    let (h, w, _) = image.dims3()?;
    let (mx, my) = ((w.max(1) - 1) as f32, (h.max(1) - 1) as f32);
    let marks: Vec<Landmark> = frame.landmarks.iter().map(|p| [p[0].clamp(0.0, mx), p[1].clamp(0.0, my)]).collect();
    embed_parts(&image, &marks, table, nets)
}

/// Mean frame feature of every video, in manifest order.
pub fn extract_descriptors(
    videos: &[VideoRecord],
    table: &PartTable,
    nets: &BTreeMap<String, Network>,
    extractor: &Extractor,
) -> Result<Vec<VideoDescriptor>> {
    videos
        .par_iter()
        .map(|v| {
            let frames = v
                .frames
                .iter()
                .map(|f| extractor.frame_feature(&frame_embeddings(f, table, nets)?))
                .collect::<Result<Vec<_>>>()?;
            let feature = video_descriptor(frames).map_err(|e| Error::Data(format!("video {}: {e}", v.video)))?;
            Ok(VideoDescriptor {
                video: v.video.clone(),
                identity: v.identity.clone(),
                session: v.session.clone(),
                sensor: v.sensor.clone(),
                site: v.site.clone(),
                role: v.role,
                feature,
            })
        })
        .collect()
}
