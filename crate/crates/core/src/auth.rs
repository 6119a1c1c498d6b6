//! Video-level verification: descriptors, gallery x probe score matrices,
//! ROC curves and equal error rates.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Enroll,
    Test,
}

/// Mean per-frame feature of one video, with its protocol tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoDescriptor {
    pub video: String,
    pub identity: String,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub sensor: String,
    #[serde(default)]
    pub site: String,
    /// When absent the video may serve as gallery and probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub feature: Vec<f64>,
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<Vec<VideoDescriptor>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_descriptors(path: impl AsRef<Path>, descriptors: &[VideoDescriptor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in descriptors {
        serde_json::to_writer(&mut f, d)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Mean of the usable frame features; `None` frames are skipped.
pub fn video_descriptor(frames: impl IntoIterator<Item = Option<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for f in frames.into_iter().flatten() {
        match &mut sum {
            None => sum = Some(f),
            Some(s) => {
                if s.len() != f.len() {
                    return Err(shape_err!("frame features of length {} and {}", s.len(), f.len()));
                }
                for (a, b) in s.iter_mut().zip(&f) {
                    *a += b;
                }
            }
        }
        count += 1;
    }
    let sum = sum.ok_or_else(|| Error::Data("video has no usable frames".into()))?;
    Ok(sum.into_iter().map(|v| v / count as f64).collect())
}

/// Inner products between gallery rows and probe columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Vec<Vec<f64>>,
    pub genuine: Vec<Vec<bool>>,
    /// False for pairs that are left out (a video compared with itself).
    pub valid: Vec<Vec<bool>>,
}

impl ScoreMatrix {
    /// Genuine and impostor score lists over valid pairs.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut gen, mut imp) = (Vec::new(), Vec::new());
        for ((s, g), v) in self.scores.iter().flatten().zip(self.genuine.iter().flatten()).zip(self.valid.iter().flatten()) {
            if *v {
                if *g {
                    gen.push(*s);
                } else {
                    imp.push(*s);
                }
            }
        }
        (gen, imp)
    }

    pub fn roc(&self) -> Result<RocCurve> {
        let (g, i) = self.split();
        roc_eer(&g, &i)
    }
}

pub fn similarity_matrix(gallery: &[VideoDescriptor], probe: &[VideoDescriptor]) -> Result<ScoreMatrix> {
    let dim = gallery.first().or(probe.first()).map(|d| d.feature.len());
    if gallery.iter().chain(probe).any(|d| Some(d.feature.len()) != dim) {
        return Err(shape_err!("descriptor dimensions differ"));
    }
    let mut sm = ScoreMatrix { scores: Vec::new(), genuine: Vec::new(), valid: Vec::new() };
    for e in gallery {
        sm.scores.push(probe.iter().map(|t| e.feature.iter().zip(&t.feature).map(|(a, b)| a * b).sum()).collect());
        sm.genuine.push(probe.iter().map(|t| t.identity == e.identity).collect());
        sm.valid.push(probe.iter().map(|t| t.video != e.video).collect());
    }
    Ok(sm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this value are accepted.
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From the `+inf` threshold (0, 0) to `-inf` (1, 1).
    pub points: Vec<RocPoint>,
    pub eer: f64,
    pub eer_threshold: f64,
}

/// Sweeps thresholds placed at `+inf`, every midpoint between consecutive
/// distinct scores, and `-inf`. The EER is interpolated linearly between the
/// two points where `FAR - FRR` changes sign.
pub fn roc_eer(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Data("ROC needs genuine and impostor pairs".into()));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    // (score, is_genuine), descending
    let mut all: Vec<(f64, bool)> =
        genuine.iter().map(|&s| (s, true)).chain(impostor.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points = vec![RocPoint { threshold: f64::INFINITY, far: 0.0, tar: 0.0 }];
    let (mut acc_g, mut acc_i) = (0usize, 0usize);
    let mut k = 0;
    while k < all.len() {
        let s = all[k].0;
        while k < all.len() && all[k].0 == s {
            if all[k].1 {
                acc_g += 1;
            } else {
                acc_i += 1;
            }
            k += 1;
        }
        let threshold = if k < all.len() { 0.5 * (s + all[k].0) } else { f64::NEG_INFINITY };
        points.push(RocPoint { threshold, far: acc_i as f64 / ni, tar: acc_g as f64 / ng });
    }

    let diff = |p: &RocPoint| p.far - (1.0 - p.tar);
    let k = points.iter().position(|p| diff(p) >= 0.0).expect("last point has FAR - FRR = 1");
    let (eer, eer_threshold) = if diff(&points[k]) == 0.0 {
        (points[k].far, points[k].threshold)
    } else {
        let (a, b) = (&points[k - 1], &points[k]);
        let lambda = -diff(a) / (diff(b) - diff(a));
        let t = match (a.threshold.is_finite(), b.threshold.is_finite()) {
            (true, true) => a.threshold + lambda * (b.threshold - a.threshold),
            (true, false) => a.threshold,
            (false, true) => b.threshold,
            (false, false) => 0.0,
        };
        (a.far + lambda * (b.far - a.far), t)
    };
    Ok(RocCurve { points, eer, eer_threshold })
}

/// How gallery and probe sets are drawn from the tagged videos.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// `1->2,3`: gallery from the left sessions, probe from the right.
    Sessions { gallery: Vec<String>, probe: Vec<String> },
    /// One `s->s` row per session.
    SameSession,
    /// One `s->others` row per session.
    CrossSession,
    Altogether,
    /// `sensor:mobile->pc`.
    CrossSensor { gallery: String, probe: String },
    /// `site:NAME`: everything recorded at one site.
    Site(String),
    /// `per-site`: one row per site.
    PerSite,
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognised pairing {s:?}"));
        let list = |v: &str| -> Vec<String> { v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect() };
        match s.trim() {
            "same-session" => Ok(Self::SameSession),
            "cross-session" => Ok(Self::CrossSession),
            "altogether" => Ok(Self::Altogether),
            "per-site" => Ok(Self::PerSite),
            t => {
                if let Some(rest) = t.strip_prefix("sensor:") {
                    let (g, p) = rest.split_once("->").ok_or_else(bad)?;
                    Ok(Self::CrossSensor { gallery: g.trim().into(), probe: p.trim().into() })
                } else if let Some(site) = t.strip_prefix("site:") {
                    Ok(Self::Site(site.trim().into()))
                } else if let Some((g, p)) = t.split_once("->") {
                    let (gallery, probe) = (list(g), list(p));
                    if gallery.is_empty() || probe.is_empty() {
                        return Err(bad());
                    }
                    Ok(Self::Sessions { gallery, probe })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

fn in_gallery(d: &VideoDescriptor) -> bool {
    d.role != Some(Role::Test)
}

fn in_probe(d: &VideoDescriptor) -> bool {
    d.role != Some(Role::Enroll)
}

/// `(row label, gallery, probe)` sets of one pairing.
type Design<'a> = (String, Vec<&'a VideoDescriptor>, Vec<&'a VideoDescriptor>);

fn select<'a>(
    videos: &'a [VideoDescriptor],
    label: String,
    g: impl Fn(&VideoDescriptor) -> bool,
    p: impl Fn(&VideoDescriptor) -> bool,
) -> Design<'a> {
    let gallery = videos.iter().filter(|d| in_gallery(d) && g(d)).collect();
    let probe = videos.iter().filter(|d| in_probe(d) && p(d)).collect();
    (label, gallery, probe)
}

impl Pairing {
    fn designs<'a>(&self, videos: &'a [VideoDescriptor]) -> Vec<Design<'a>> {
        let sessions: BTreeSet<&str> = videos.iter().map(|d| d.session.as_str()).collect();
        let sites: BTreeSet<&str> = videos.iter().map(|d| d.site.as_str()).collect();
        match self {
            Self::Sessions { gallery, probe } => vec![select(
                videos,
                format!("{}->{}", gallery.join(","), probe.join(",")),
                |d| gallery.contains(&d.session),
                |d| probe.contains(&d.session),
            )],
            Self::SameSession => sessions
                .iter()
                .map(|&s| select(videos, format!("{s}->{s}"), |d| d.session == s, |d| d.session == s))
                .collect(),
            Self::CrossSession => sessions
                .iter()
                .map(|&s| {
                    let others: Vec<&str> = sessions.iter().copied().filter(|&o| o != s).collect();
                    select(videos, format!("{s}->{}", others.join(",")), |d| d.session == s, |d| d.session != s)
                })
                .collect(),
            Self::Altogether => vec![select(videos, "Altogether".into(), |_| true, |_| true)],
            Self::CrossSensor { gallery, probe } => vec![select(
                videos,
                format!("{gallery}-{probe}"),
                |d| &d.sensor == gallery,
                |d| &d.sensor == probe,
            )],
            Self::Site(site) => vec![select(videos, site.clone(), |d| &d.site == site, |d| &d.site == site)],
            Self::PerSite => {
                sites.iter().map(|&s| select(videos, s.to_string(), |d| d.site == s, |d| d.site == s)).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EerRow {
    pub pairing: String,
    pub eer: f64,
    pub eer_threshold: f64,
    pub gallery: usize,
    pub probe: usize,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub method: String,
    pub rows: Vec<EerRow>,
    #[serde(skip)]
    pub curves: Vec<RocCurve>,
}

pub fn run_protocol(method: &str, videos: &[VideoDescriptor], pairings: &[Pairing]) -> Result<ProtocolReport> {
    let mut report = ProtocolReport { method: method.to_string(), rows: Vec::new(), curves: Vec::new() };
    for pairing in pairings {
        for (label, gallery, probe) in pairing.designs(videos) {
            if gallery.is_empty() || probe.is_empty() {
                return Err(Error::Data(format!("pairing {label}: empty gallery or probe")));
            }
            let g: Vec<VideoDescriptor> = gallery.into_iter().cloned().collect();
            let p: Vec<VideoDescriptor> = probe.into_iter().cloned().collect();
            let sm = similarity_matrix(&g, &p)?;
            let (gen, imp) = sm.split();
            let curve = roc_eer(&gen, &imp).map_err(|e| Error::Data(format!("pairing {label}: {e}")))?;
            report.rows.push(EerRow {
                pairing: label,
                eer: curve.eer,
                eer_threshold: curve.eer_threshold,
                gallery: g.len(),
                probe: p.len(),
                genuine_pairs: gen.len(),
                impostor_pairs: imp.len(),
            });
            report.curves.push(curve);
        }
    }
    Ok(report)
}

/// `method,pairing,threshold,far,tar` rows.
pub fn write_roc_csv(reports: &[ProtocolReport], mut out: impl Write) -> Result<()> {
    writeln!(out, "method,pairing,threshold,far,tar")?;
    for r in reports {
        for (row, curve) in r.rows.iter().zip(&r.curves) {
            for p in &curve.points {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    csv_field(&r.method),
                    csv_field(&row.pairing),
                    p.threshold,
                    p.far,
                    p.tar
                )?;
            }
        }
    }
    Ok(())
}

/// EER table: one row per pairing, one column per method.
/// Quotes a CSV field when it holds a comma, quote or line break.
pub(crate) fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

pub fn write_eer_table(reports: &[ProtocolReport], mut out: impl Write) -> Result<()> {
    write!(out, "pairing")?;
    for r in reports {
        write!(out, ",{}", csv_field(&r.method))?;
    }
    writeln!(out)?;
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !labels.contains(&row.pairing.as_str()) {
                labels.push(&row.pairing);
            }
        }
    }
    for label in labels {
        write!(out, "{}", csv_field(label))?;
        for r in reports {
            match r.rows.iter().find(|row| row.pairing == label) {
                Some(row) => write!(out, ",{:.4}", row.eer)?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// FAR (x) against TAR (y) for each labelled curve, as a standalone SVG.
pub fn roc_svg(curves: &[(String, &RocCurve)]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{PAD}" x2="{}" y2="{}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        PAD + SIZE,
        PAD + SIZE
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let x = PAD + v * SIZE;
        let y = PAD + SIZE - v * SIZE;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.1}</text>"#, PAD + SIZE + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, PAD - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">False accept rate</text>"#, PAD + SIZE / 2.0, total - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True accept rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", PAD + p.far * SIZE, PAD + SIZE - p.tar * SIZE))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = PAD + SIZE - 20.0 - 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{} (EER {:.3})</text>"#,
            PAD + SIZE * 0.45,
            escape(label),
            curve.eer
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
