use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::attributes::{attribute_index, ATTRIBUTES, NUM_ATTRIBUTES};
use super::Landmark;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image_ref: PathBuf,
    /// One 0/1 label per entry of [`ATTRIBUTES`].
    pub labels: Vec<u8>,
    pub landmarks: Vec<Landmark>,
    pub identity: String,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Record {
    image: String,
    attrs: BTreeMap<String, u8>,
    landmarks: Vec<Landmark>,
    identity: String,
    split: Split,
}

/// Reads a JSON-lines manifest. Relative image paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(from_record(rec, base).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?);
    }
    Ok(out)
}

fn from_record(rec: Record, base: &Path) -> Result<LabeledSample> {
    if rec.attrs.len() != NUM_ATTRIBUTES {
        return Err(Error::Data(format!("expected {NUM_ATTRIBUTES} attribute labels, found {}", rec.attrs.len())));
    }
    let mut labels = vec![0u8; NUM_ATTRIBUTES];
    for (name, v) in &rec.attrs {
        let idx = attribute_index(name).ok_or_else(|| Error::Data(format!("unknown attribute {name}")))?;
        if *v > 1 {
            return Err(Error::Data(format!("label for {name} must be 0 or 1, got {v}")));
        }
        labels[idx] = *v;
    }
    if rec.landmarks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite landmark".into()));
    }
    let image_ref = Path::new(&rec.image);
    let image_ref = if image_ref.is_absolute() { image_ref.to_path_buf() } else { base.join(image_ref) };
    Ok(LabeledSample { image_ref, labels, landmarks: rec.landmarks, identity: rec.identity, split: rec.split })
}

/// Writes samples as JSON lines with image paths as stored.
pub fn write_manifest(path: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let rec = Record {
            image: s.image_ref.to_string_lossy().into_owned(),
            attrs: ATTRIBUTES.iter().zip(&s.labels).map(|(a, &v)| (a.to_string(), v)).collect(),
            landmarks: s.landmarks.clone(),
            identity: s.identity.clone(),
            split: s.split,
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

impl LabeledSample {
    /// Clamps landmarks into a `w x h` image, warning when any had to move.
    pub fn clamp_landmarks(&mut self, w: usize, h: usize) {
        let (max_x, max_y) = ((w.max(1) - 1) as f32, (h.max(1) - 1) as f32);
        let mut moved = false;
        for p in &mut self.landmarks {
            let c = [p[0].clamp(0.0, max_x), p[1].clamp(0.0, max_y)];
            moved |= c != *p;
            *p = c;
        }
        if moved {
            log::warn!("{}: landmarks outside the {w}x{h} image were clamped", self.image_ref.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(attrs: &BTreeMap<String, u8>) -> String {
        serde_json::json!({
            "image": "img/a.png",
            "attrs": attrs,
            "landmarks": [[1.0, 2.0], [3.5, 4.0]],
            "identity": "p1",
            "split": "dev"
        })
        .to_string()
    }

    fn full_attrs() -> BTreeMap<String, u8> {
        ATTRIBUTES.iter().enumerate().map(|(i, a)| (a.to_string(), (i % 2) as u8)).collect()
    }

    #[test]
    fn reads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, format!("{}\n\n", line(&full_attrs()))).unwrap();
        let samples = read_manifest(&path).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].image_ref, dir.path().join("img/a.png"));
        assert_eq!(samples[0].labels[1], 1);
        assert_eq!(samples[0].split, Split::Dev);

        let out = dir.path().join("copy.jsonl");
        write_manifest(&out, &samples).unwrap();
        assert_eq!(read_manifest(&out).unwrap(), samples);
    }

    #[test]
    fn rejects_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut attrs = full_attrs();
        attrs.insert("Young".into(), 2);
        std::fs::write(&path, line(&attrs)).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
        let mut attrs = full_attrs();
        attrs.remove("Young");
        std::fs::write(&path, line(&attrs)).unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn clamps_out_of_bounds_landmarks() {
        let mut s = LabeledSample {
            image_ref: "x".into(),
            labels: vec![0; 40],
            landmarks: vec![[-3.0, 5.0], [12.0, 20.0]],
            identity: "a".into(),
            split: Split::Train,
        };
        s.clamp_landmarks(10, 10);
        assert_eq!(s.landmarks, vec![[0.0, 5.0], [9.0, 9.0]]);
    }
}
