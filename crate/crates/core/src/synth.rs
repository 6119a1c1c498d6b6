//! Synthetic labelled faces for smoke tests and demos.
//!
//! A face is a dark noisy square with 68 landmarks in the usual iBUG layout.
//! Every positive attribute stamps a small coloured patch near the centroid
//! of the first part that predicts it. The part's attributes are laid out
//! in its list order, three per grid cell (one per colour channel), on a
//! square grid centred there, so crops of that part carry the signal.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::auth::Role;
use crate::datapipe::{write_manifest, Landmark, LabeledSample, PartTable, Split, ATTRIBUTES, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::pipeline::{FrameRef, VideoRecord};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    /// Image side in pixels.
    pub size: usize,
    /// Std-dev of the per-pixel noise.
    pub noise: f32,
    /// Max landmark displacement in pixels.
    pub jitter: f32,
    /// Side of each attribute patch; grid cells are one pixel apart.
    pub patch: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 64, noise: 0.05, jitter: 1.0, patch: 3 }
    }
}

/// Landmarks of an upright face filling a `size x size` image.
pub fn template_landmarks(size: usize) -> Vec<Landmark> {
    let s = size as f32;
    let mut p: Vec<[f32; 2]> = Vec::with_capacity(68);
    for i in 0..17 {
        let t = std::f32::consts::PI * i as f32 / 16.0;
        p.push([0.5 - 0.4 * t.cos(), 0.35 + 0.6 * t.sin()]);
    }
    for side in [0.2f32, 0.6] {
        for i in 0..5 {
            p.push([side + 0.05 * i as f32, 0.28]);
        }
    }
    for i in 0..4 {
        p.push([0.5, 0.35 + 0.2 * i as f32 / 3.0]);
    }
    for i in 0..5 {
        p.push([0.42 + 0.04 * i as f32, 0.6]);
    }
    for cx in [0.3f32, 0.7] {
        for i in 0..6 {
            let t = std::f32::consts::TAU * i as f32 / 6.0;
            p.push([cx + 0.06 * t.cos(), 0.38 + 0.03 * t.sin()]);
        }
    }
    for (n, rx, ry) in [(12, 0.15f32, 0.06f32), (8, 0.1, 0.03)] {
        for i in 0..n {
            let t = std::f32::consts::TAU * i as f32 / n as f32;
            p.push([0.5 + rx * t.cos(), 0.75 + ry * t.sin()]);
        }
    }
    p.into_iter().map(|[x, y]| [x * s, y * s]).collect()
}

/// Offset and channel of attribute `j` of `n` on a square grid of cells
/// with three channels each.
fn grid_slot(j: usize, n: usize, patch: usize) -> ([f32; 2], usize) {
    let step = (patch + 1) as f32;
    let (cell, cells) = (j / 3, n.div_ceil(3));
    let cols = (cells as f32).sqrt().ceil() as usize;
    let rows = cells.div_ceil(cols);
    let at = |i: usize, len: usize| (i as f32 - (len - 1) as f32 / 2.0) * step;
    ([at(cell % cols, cols), at(cell / cols, rows)], j % 3)
}

/// Where each attribute's patch goes: `(part index, (offset, channel))` or
/// `None` if no part predicts it.
fn patch_sites(table: &PartTable, patch: usize) -> Vec<Option<(usize, ([f32; 2], usize))>> {
    ATTRIBUTES
        .iter()
        .map(|a| {
            table.parts.iter().enumerate().find_map(|(pi, p)| {
                let j = p.attributes.iter().position(|x| x == a)?;
                Some((pi, grid_slot(j, p.attributes.len(), patch)))
            })
        })
        .collect()
}

/// Mean pixel value away from the patches.
pub const BACKGROUND: f32 = 0.1;

fn background(h: usize, w: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[h, w, 3], |_| BACKGROUND + cfg.noise * (rng.random::<f32>() * 2.0 - 1.0) * 1.732)
}

/// Adds 0.5 to `channel` over a `patch`-sided square centred at `at`.
fn stamp(img: &mut Tensor, at: [f32; 2], channel: usize, patch: usize) {
    let (h, w) = (img.shape()[0] as i64, img.shape()[1] as i64);
    let (x0, y0) = (at[0].round() as i64, at[1].round() as i64);
    let p = patch as i64;
    let data = img.data_mut();
    for dy in 0..p {
        for dx in 0..p {
            let (x, y) = (x0 + dx - p / 2, y0 + dy - p / 2);
            if (0..w).contains(&x) && (0..h).contains(&y) {
                data[(y * w + x) as usize * 3 + channel] += 0.5;
            }
        }
    }
}

/// A bare `h x w` crop with one grid slot per entry of `labels`, in the
/// grid layout [`synth_face`] uses around a part's centroid.
pub fn planted_crop(labels: &[u8], h: usize, w: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Tensor {
    let mut img = background(h, w, cfg, rng);
    let centre = [((w - 1) / 2) as f32, ((h - 1) / 2) as f32];
    for (j, &l) in labels.iter().enumerate() {
        if l == 1 {
            let (off, channel) = grid_slot(j, labels.len(), cfg.patch);
            stamp(&mut img, [centre[0] + off[0], centre[1] + off[1]], channel, cfg.patch);
        }
    }
    img.map(|v| v.clamp(0.0, 1.0))
}

fn centroid(marks: &[Landmark], idx: &[usize]) -> [f32; 2] {
    let n = idx.len().max(1) as f32;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(x, y), &i| (x + marks[i][0], y + marks[i][1]));
    [sx / n, sy / n]
}

/// One synthetic face with the given 40 labels.
pub fn synth_face(labels: &[u8], table: &PartTable, cfg: &SynthConfig, rng: &mut impl Rng) -> Result<(Tensor, Vec<Landmark>)> {
    if labels.len() != NUM_ATTRIBUTES {
        return Err(Error::InvalidArgument(format!("need {NUM_ATTRIBUTES} labels, got {}", labels.len())));
    }
    let n = cfg.size;
    let max = (n - 1) as f32;
    let marks: Vec<Landmark> = template_landmarks(n)
        .into_iter()
        .map(|[x, y]| {
            let dx = rng.random_range(-1.0..=1.0) * cfg.jitter;
            let dy = rng.random_range(-1.0..=1.0) * cfg.jitter;
            [(x + dx).clamp(0.0, max), (y + dy).clamp(0.0, max)]
        })
        .collect();
    let mut img = background(n, n, cfg, rng);
    let sites = patch_sites(table, cfg.patch);
    for (a, &l) in labels.iter().enumerate() {
        let Some((pi, (off, channel))) = sites[a] else { continue };
        if l == 1 {
            let c = centroid(&marks, &table.parts[pi].landmark_indices);
            stamp(&mut img, [c[0] + off[0], c[1] + off[1]], channel, cfg.patch);
        }
    }
    Ok((img.map(|v| v.clamp(0.0, 1.0)), marks))
}

/// Writes an `h x w x 3` tensor with values in [0, 1] as an 8-bit PNG.
pub fn save_png(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, c) = image.dims3()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("expected 3 channels, got {c}")));
    }
    let bytes: Vec<u8> = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

fn random_labels(rng: &mut impl Rng) -> Vec<u8> {
    (0..NUM_ATTRIBUTES).map(|_| u8::from(rng.random_bool(0.5))).collect()
}

/// Writes `counts = [train, dev, test]` labelled faces under `dir` plus
/// `dir/manifest.jsonl`, which is returned.
pub fn write_labeled_set(dir: &Path, table: &PartTable, counts: [usize; 3], cfg: &SynthConfig, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (split, count) in [Split::Train, Split::Dev, Split::Test].into_iter().zip(counts) {
        for _ in 0..count {
            let i = samples.len();
            let labels = random_labels(&mut rng);
            let (img, landmarks) = synth_face(&labels, table, cfg, &mut rng)?;
            let rel = PathBuf::from(format!("images/{i:05}.png"));
            save_png(&img, dir.join(&rel))?;
            samples.push(LabeledSample { image_ref: rel, labels, landmarks, identity: format!("s{}", i % 20), split });
        }
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &samples)?;
    Ok(manifest)
}

/// One video per identity and session, `frames` frames each. An identity's
/// attributes are fixed, so its videos share a signature. Returns the path
/// of `dir/videos.jsonl`.
pub fn write_video_set(
    dir: &Path,
    table: &PartTable,
    identities: usize,
    sessions: usize,
    frames: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    for id in 0..identities {
        let labels = random_labels(&mut rng);
        for s in 1..=sessions {
            let video = format!("id{id:02}_s{s}");
            let mut refs = Vec::new();
            for f in 0..frames {
                let (img, landmarks) = synth_face(&labels, table, cfg, &mut rng)?;
                let rel = PathBuf::from(format!("frames/{video}_{f:03}.png"));
                save_png(&img, dir.join(&rel))?;
                refs.push(FrameRef { image: rel, landmarks });
            }
            let rec = VideoRecord {
                video,
                identity: format!("id{id:02}"),
                session: s.to_string(),
                sensor: "synthetic".into(),
                site: String::new(),
                role: if s == 1 { Some(Role::Enroll) } else { None },
                frames: refs,
            };
            lines.push_str(&serde_json::to_string(&rec)?);
            lines.push('\n');
        }
    }
    let path = dir.join("videos.jsonl");
    std::fs::write(&path, lines)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{crop_part, load_image, read_manifest, PartDefinition, Window};

    fn small_table() -> PartTable {
        let mut t = PartTable::default_ibug68();
        for p in &mut t.parts {
            p.window = Window { w: 24, h: 24 };
        }
        t
    }

    #[test]
    fn template_has_68_points_inside() {
        let m = template_landmarks(64);
        assert_eq!(m.len(), 68);
        assert!(m.iter().flatten().all(|&v| (0.0..64.0).contains(&v)));
    }

    #[test]
    fn patches_land_in_their_part_crop() {
        let t = small_table();
        let cfg = SynthConfig { noise: 0.0, jitter: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = vec![0u8; NUM_ATTRIBUTES];
        let (blank, marks) = synth_face(&zeros, &t, &cfg, &mut rng).unwrap();
        let smiling = crate::datapipe::attribute_index("Smiling").unwrap();
        let mut labels = zeros.clone();
        labels[smiling] = 1;
        let (img, _) = synth_face(&labels, &t, &cfg, &mut rng).unwrap();
        // Smiling belongs to NoseMouth first; its patch must show in that crop.
        let home = t.parts_for("Smiling")[0];
        let diff = |p: &PartDefinition| -> f32 {
            let a = crop_part(&img, &marks, p).unwrap();
            let b = crop_part(&blank, &marks, p).unwrap();
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()
        };
        assert!(diff(home) > 1.0);
        assert!(diff(t.part("UpperHead").unwrap()) < 1e-6);
    }

    #[test]
    fn every_patch_fits_a_16_pixel_crop() {
        let mut t = PartTable::default_ibug68();
        for p in &mut t.parts {
            p.window = Window { w: 16, h: 16 };
        }
        let cfg = SynthConfig { noise: 0.0, jitter: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = vec![0u8; NUM_ATTRIBUTES];
        let (blank, marks) = synth_face(&zeros, &t, &cfg, &mut rng).unwrap();
        for (a, name) in ATTRIBUTES.iter().enumerate() {
            let Some(home) = t.parts_for(name).first().copied() else { continue };
            let mut labels = zeros.clone();
            labels[a] = 1;
            let (img, _) = synth_face(&labels, &t, &cfg, &mut rng).unwrap();
            let a = crop_part(&img, &marks, home).unwrap();
            let b = crop_part(&blank, &marks, home).unwrap();
            let mass: f32 = a.data().iter().zip(b.data()).map(|(x, y)| x - y).sum();
            assert!((mass - 0.5 * (cfg.patch * cfg.patch) as f32).abs() < 1e-4, "{name}: {mass}");
        }
    }

    #[test]
    fn planted_crop_marks_each_positive_label() {
        let cfg = SynthConfig { noise: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let blank = planted_crop(&[0; 21], 16, 16, &cfg, &mut rng);
        assert!(blank.data().iter().all(|&v| (v - BACKGROUND).abs() < 1e-6));
        for j in 0..21 {
            let mut labels = [0u8; 21];
            labels[j] = 1;
            let img = planted_crop(&labels, 16, 16, &cfg, &mut rng);
            let mass: f32 = img.data().iter().map(|v| v - BACKGROUND).sum();
            assert!((mass - 4.5).abs() < 1e-4, "slot {j}: {mass}");
        }
    }

    #[test]
    fn labeled_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = small_table();
        let m = write_labeled_set(dir.path(), &t, [3, 2, 1], &SynthConfig::default(), 1).unwrap();
        let s = read_manifest(&m).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.iter().filter(|x| x.split == Split::Dev).count(), 2);
        let img = load_image(&s[0].image_ref).unwrap();
        assert_eq!(img.shape(), &[64, 64, 3]);
    }
}
