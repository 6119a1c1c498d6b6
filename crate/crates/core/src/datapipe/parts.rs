use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attributes::{attribute_index, ATTRIBUTES};
use super::manifest::{LabeledSample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDefinition {
    pub name: String,
    pub landmark_indices: Vec<usize>,
    pub window: Window,
    pub attributes: Vec<String>,
}

impl PartDefinition {
    /// Positions of this part's attributes in the canonical attribute list.
    pub fn attribute_indices(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| attribute_index(a).expect("validated part table")).collect()
    }
}

/// Landmark index sets of the two eyes, by image side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EyePoints {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartTable {
    pub scheme: String,
    pub eyes: EyePoints,
    pub parts: Vec<PartDefinition>,
}

fn range(r: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    r.collect()
}

impl PartTable {
    /// Ten face regions over the 68-point iBUG landmark scheme. Window sizes
    /// are the published ones; the attribute lists are an editable default
    /// that keeps the published per-part attribute counts.
    pub fn default_ibug68() -> Self {
        let part = |name: &str, idx: Vec<usize>, w, h, attrs: &[&str]| PartDefinition {
            name: name.into(),
            landmark_indices: idx,
            window: Window { w, h },
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        };
        let concat = |a: Vec<usize>, b: Vec<usize>| a.into_iter().chain(b).collect::<Vec<_>>();
        let parts = vec![
            part(
                "UpperHead",
                range(17..=26),
                128,
                52,
                &[
                    "Bald", "Bangs", "Black_Hair", "Blond_Hair", "Brown_Hair", "Gray_Hair", "Receding_Hairline",
                    "Straight_Hair", "Wavy_Hair", "Wearing_Hat", "Arched_Eyebrows", "Bushy_Eyebrows", "Attractive",
                    "Young", "Male",
                ],
            ),
            part(
                "BothEyes",
                range(36..=47),
                115,
                41,
                &[
                    "Arched_Eyebrows", "Bags_Under_Eyes", "Bushy_Eyebrows", "Eyeglasses", "Narrow_Eyes",
                    "Heavy_Makeup", "Attractive", "Young", "Male", "Blurry",
                ],
            ),
            part(
                "EyesNose",
                range(27..=47),
                90,
                62,
                &[
                    "Arched_Eyebrows", "Bags_Under_Eyes", "Bushy_Eyebrows", "Eyeglasses", "Narrow_Eyes", "Big_Nose",
                    "Pointy_Nose", "High_Cheekbones", "Rosy_Cheeks", "Heavy_Makeup", "Pale_Skin", "Attractive",
                    "Young", "Male", "Oval_Face", "Blurry",
                ],
            ),
            part(
                "Nose",
                range(27..=35),
                40,
                56,
                &["Big_Nose", "Pointy_Nose", "Rosy_Cheeks", "Pale_Skin", "Young", "Male", "Attractive"],
            ),
            part(
                "NoseMouth",
                concat(range(27..=35), range(48..=67)),
                55,
                82,
                &[
                    "Big_Nose", "Pointy_Nose", "Big_Lips", "Mouth_Slightly_Open", "Mustache", "Smiling",
                    "Wearing_Lipstick", "High_Cheekbones", "Rosy_Cheeks", "5_o_Clock_Shadow", "Goatee",
                    "Heavy_Makeup", "Attractive", "Young", "Male",
                ],
            ),
            part(
                "Mouth",
                range(48..=67),
                65,
                38,
                &[
                    "Big_Lips", "Mouth_Slightly_Open", "Mustache", "Smiling", "Wearing_Lipstick", "Heavy_Makeup",
                    "Attractive", "Young", "Male", "5_o_Clock_Shadow",
                ],
            ),
            part(
                "EyesNoseMouth",
                range(27..=67),
                115,
                107,
                &[
                    "Arched_Eyebrows", "Bags_Under_Eyes", "Eyeglasses", "Narrow_Eyes", "Big_Nose", "Pointy_Nose",
                    "Big_Lips", "Mouth_Slightly_Open", "Smiling", "Wearing_Lipstick", "High_Cheekbones",
                    "Rosy_Cheeks", "Heavy_Makeup", "Pale_Skin", "Oval_Face", "Chubby", "Attractive", "Young", "Male",
                    "Blurry", "No_Beard",
                ],
            ),
            part(
                "MouthChin",
                concat(range(48..=67), range(5..=11)),
                128,
                45,
                &[
                    "Big_Lips", "Mouth_Slightly_Open", "Mustache", "Smiling", "Wearing_Lipstick", "5_o_Clock_Shadow",
                    "Goatee", "No_Beard", "Double_Chin", "Chubby", "Oval_Face", "Wearing_Necktie",
                    "Wearing_Necklace", "Young", "Male",
                ],
            ),
            part(
                "Ear",
                range(0..=3),
                62,
                100,
                &[
                    "Wearing_Earrings", "Sideburns", "Black_Hair", "Blond_Hair", "Brown_Hair", "Gray_Hair",
                    "Straight_Hair", "Wavy_Hair", "Wearing_Hat", "Wearing_Necklace", "Bald", "5_o_Clock_Shadow",
                    "Young", "Male",
                ],
            ),
            part(
                "Eye",
                range(36..=41),
                53,
                39,
                &[
                    "Arched_Eyebrows", "Bags_Under_Eyes", "Bushy_Eyebrows", "Eyeglasses", "Narrow_Eyes",
                    "Heavy_Makeup", "Attractive", "Young", "Male", "Pale_Skin",
                ],
            ),
        ];
        Self { scheme: "ibug68".into(), eyes: EyePoints { left: range(36..=41), right: range(42..=47) }, parts }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        if self.eyes.left.is_empty() || self.eyes.right.is_empty() {
            return Err(Error::Data("part table must name landmarks for both eyes".into()));
        }
        for p in &self.parts {
            if !names.insert(p.name.as_str()) {
                return Err(Error::Data(format!("duplicate part {}", p.name)));
            }
            if p.landmark_indices.is_empty() {
                return Err(Error::Data(format!("part {} has no landmarks", p.name)));
            }
            if p.window.w == 0 || p.window.h == 0 {
                return Err(Error::Data(format!("part {} has an empty window", p.name)));
            }
            if p.attributes.is_empty() {
                return Err(Error::Data(format!("part {} has no attributes", p.name)));
            }
            let mut seen = BTreeSet::new();
            for a in &p.attributes {
                if attribute_index(a).is_none() {
                    return Err(Error::Data(format!("part {}: unknown attribute {a}", p.name)));
                }
                if !seen.insert(a) {
                    return Err(Error::Data(format!("part {}: attribute {a} listed twice", p.name)));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let table: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn part(&self, name: &str) -> Result<&PartDefinition> {
        self.parts.iter().find(|p| p.name == name).ok_or_else(|| Error::Data(format!("no part named {name}")))
    }

    /// Parts (in table order) whose attribute list contains `attribute`.
    pub fn parts_for(&self, attribute: &str) -> Vec<&PartDefinition> {
        self.parts.iter().filter(|p| p.attributes.iter().any(|a| a == attribute)).collect()
    }

    /// Attributes that no part predicts.
    pub fn uncovered_attributes(&self) -> Vec<&'static str> {
        ATTRIBUTES.iter().copied().filter(|a| self.parts_for(a).is_empty()).collect()
    }
}

/// Recomputes every part window as the largest landmark extent of that part
/// over the training split, scaled by `scale` and floored at `min_size`.
pub fn fit_windows(table: &PartTable, samples: &[LabeledSample], scale: f32, min_size: usize) -> Result<PartTable> {
    let train: Vec<_> = samples.iter().filter(|s| s.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Data("fitting windows needs training samples".into()));
    }
    let mut out = table.clone();
    for part in &mut out.parts {
        let (mut max_w, mut max_h) = (0.0f32, 0.0f32);
        for s in &train {
            let pts = part
                .landmark_indices
                .iter()
                .map(|&i| s.landmarks.get(i).copied())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Data(format!("sample {} lacks landmarks for {}", s.image_ref.display(), part.name)))?;
            let (lo_x, hi_x) = pts.iter().fold((f32::MAX, f32::MIN), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
            let (lo_y, hi_y) = pts.iter().fold((f32::MAX, f32::MIN), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
            max_w = max_w.max(hi_x - lo_x);
            max_h = max_h.max(hi_y - lo_y);
        }
        part.window = Window {
            w: ((max_w * scale).ceil() as usize + 1).max(min_size),
            h: ((max_h * scale).ceil() as usize + 1).max(min_size),
        };
    }
    Ok(out)
}
