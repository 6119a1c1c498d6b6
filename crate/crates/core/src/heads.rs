//! Per-attribute linear SVMs over concatenated part embeddings, sigmoid
//! calibration, attribute prediction and accuracy tables.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{crop_part, Landmark, PartTable, ATTRIBUTES};
use crate::error::{shape_err, Error, Result};
use crate::netdef::Network;
use crate::tensor::Tensor;
use crate::trainer::embed;

pub const C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// `w . x + b`. The bias is treated as the weight of a constant feature, so it
/// is regularised together with `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// `0.5 (|w|^2 + b^2) + c * sum hinge(y_i f(x_i))` with `y` in {-1, +1}.
    pub fn objective(&self, xs: &[Vec<f64>], labels: &[u8], c: f64) -> f64 {
        let reg = 0.5 * (dot(&self.weights, &self.weights) + self.bias * self.bias);
        let hinge: f64 = xs.iter().zip(labels).map(|(x, &l)| (1.0 - sign(l) * self.decision(x)).max(0.0)).sum();
        reg + c * hinge
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_two_classes(labels: &[u8]) -> Result<()> {
    if !labels.contains(&1) || !labels.iter().any(|&l| l != 1) {
        return Err(Error::Data("classifier needs positive and negative examples".into()));
    }
    Ok(())
}

/// Hinge-loss linear SVM by dual coordinate descent.
pub fn train_svm(xs: &[Vec<f64>], labels: &[u8], c: f64, seed: u64) -> Result<LinearSvm> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(shape_err!("{} feature rows for {} labels", xs.len(), labels.len()));
    }
    check_two_classes(labels)?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("regularisation constant must be positive, got {c}")));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(shape_err!("feature rows have differing lengths"));
    }
    const TOL: f64 = 1e-6;
    const MAX_EPOCHS: usize = 5000;

    let n = xs.len();
    let q: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let y: Vec<f64> = labels.iter().map(|&l| sign(l)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = y[i] * (dot(&w, &xs[i]) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                    *wj += step * xj;
                }
                b += step;
            }
        }
        if pg_max - pg_min < TOL {
            break;
        }
    }
    Ok(LinearSvm { weights: w, bias: b })
}

/// `p = 1 / (1 + exp(a f + b))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    pub fn probability(&self, decision: f64) -> f64 {
        let z = self.a * decision + self.b;
        // stays strictly inside (0, 1) for any finite decision value
        let p = if z >= 0.0 { (-z).exp() / (1.0 + (-z).exp()) } else { 1.0 / (1.0 + z.exp()) };
        p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    /// Decision value mapped to p = 0.5.
    pub fn midpoint(&self) -> f64 {
        -self.b / self.a
    }
}

/// Sigmoid fit of decision values by regularised maximum likelihood: targets
/// are smoothed to `(n+ + 1)/(n+ + 2)` and `1/(n- + 2)`, and the likelihood
/// is maximised by Newton's method with backtracking.
pub fn fit_calibration(decisions: &[f64], labels: &[u8]) -> Result<Calibration> {
    if decisions.len() != labels.len() {
        return Err(shape_err!("{} decision values for {} labels", decisions.len(), labels.len()));
    }
    check_two_classes(labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();

    let nll = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&t)
            .map(|(&f, &t)| {
                let z = a * f + b;
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, ((neg + 1.0) / (pos + 1.0)).ln());
    let mut value = nll(a, b);
    const SIGMA: f64 = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&t) {
            let z = a * f + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nv = nll(na, nb);
            if nv < value + 1e-4 * step * gd {
                (a, b, value) = (na, nb, nv);
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(Calibration { a, b })
}

/// One attribute's classifier over the concatenated embeddings of its parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeHead {
    pub attribute: String,
    /// Embedding concatenation order.
    pub parts: Vec<String>,
    pub svm: LinearSvm,
    pub calibration: Calibration,
    pub reg_c: f64,
}

impl AttributeHead {
    pub fn decision(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.svm.weights.len() {
            return Err(shape_err!(
                "{} head expects {} features, got {}",
                self.attribute,
                self.svm.weights.len(),
                features.len()
            ));
        }
        Ok(self.svm.decision(features))
    }

    pub fn probability(&self, features: &[f64]) -> Result<f64> {
        Ok(self.calibration.probability(self.decision(features)?))
    }

    /// Concatenates `embeddings[part]` in this head's part order; `None` if a
    /// part is missing.
    pub fn features(&self, embeddings: &BTreeMap<String, Option<Vec<f32>>>) -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for p in &self.parts {
            out.extend(embeddings.get(p)?.as_ref()?.iter().map(|&v| v as f64));
        }
        Some(out)
    }
}

/// Features and labels of one split for a single head.
#[derive(Clone, Debug, Default)]
pub struct HeadData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl HeadData {
    /// Row `i` is the concatenation of `per_part[k][i]` over the parts `k`.
    pub fn concat(per_part: &[&[Vec<f32>]], labels: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        if per_part.iter().any(|p| p.len() != n) {
            return Err(shape_err!("every part needs one embedding per labelled sample"));
        }
        let features = (0..n)
            .map(|i| per_part.iter().flat_map(|p| p[i].iter().map(|&v| v as f64)).collect())
            .collect();
        Ok(Self { features, labels })
    }
}

/// Fits one SVM per grid value on `train`, keeps the best dev accuracy (ties
/// go to the smaller constant) and calibrates on dev decision values.
pub fn train_head(
    attribute: &str,
    parts: Vec<String>,
    train: &HeadData,
    dev: &HeadData,
    grid: &[f64],
    seed: u64,
) -> Result<AttributeHead> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty regularisation grid".into()));
    }
    check_two_classes(&dev.labels)?;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, LinearSvm)> = None;
    for &c in &grid {
        let svm = train_svm(&train.features, &train.labels, c, seed)?;
        let correct = dev
            .features
            .iter()
            .zip(&dev.labels)
            .filter(|(x, &l)| u8::from(svm.decision(x) > 0.0) == l)
            .count();
        let acc = correct as f64 / dev.labels.len() as f64;
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, c, svm));
        }
    }
    let (_, reg_c, svm) = best.expect("non-empty grid");
    let decisions: Vec<f64> = dev.features.iter().map(|x| svm.decision(x)).collect();
    let calibration = fit_calibration(&decisions, &dev.labels)?;
    Ok(AttributeHead { attribute: attribute.to_string(), parts, svm, calibration, reg_c })
}

/// What to report for an attribute whose parts could not be embedded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Exclude,
    /// Report probability 0.5.
    Impute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub heads: Vec<AttributeHead>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

impl HeadSet {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// One entry per canonical attribute; `None` marks an attribute without a
    /// head or with a missing part under [`MissingPolicy::Exclude`].
    pub fn predict(&self, embeddings: &BTreeMap<String, Option<Vec<f32>>>) -> Result<Vec<Option<f64>>> {
        let mut out = vec![None; ATTRIBUTES.len()];
        for (slot, name) in out.iter_mut().zip(ATTRIBUTES) {
            let p = match self.heads.iter().find(|h| h.attribute == name) {
                Some(head) => match head.features(embeddings) {
                    Some(x) => Some(head.probability(&x)?),
                    None => None,
                },
                None => None,
            };
            *slot = p.or(match self.missing {
                MissingPolicy::Exclude => None,
                MissingPolicy::Impute => Some(0.5),
            });
        }
        Ok(out)
    }
}

/// Trains heads for every attribute in parallel. `data[k]` holds the
/// (train, dev) features of `specs[k] = (attribute, parts)`.
pub fn train_heads(
    specs: &[(String, Vec<String>)],
    data: &[(HeadData, HeadData)],
    grid: &[f64],
    seed: u64,
) -> Result<Vec<AttributeHead>> {
    if specs.len() != data.len() {
        return Err(shape_err!("{} head specs for {} datasets", specs.len(), data.len()));
    }
    specs
        .par_iter()
        .zip(data)
        .map(|((attr, parts), (train, dev))| train_head(attr, parts.clone(), train, dev, grid, seed))
        .collect()
}

/// Embeds every part of one frame with its network. Parts whose landmarks are
/// missing, or that have no network, map to `None`.
pub fn embed_parts(
    image: &Tensor,
    landmarks: &[Landmark],
    table: &PartTable,
    nets: &BTreeMap<String, Network>,
) -> Result<BTreeMap<String, Option<Vec<f32>>>> {
    table
        .parts
        .par_iter()
        .map(|part| {
            let Some(net) = nets.get(&part.name) else {
                return Ok((part.name.clone(), None));
            };
            let crop = match crop_part(image, landmarks, part) {
                Ok(c) => c,
                Err(Error::Data(_)) => return Ok((part.name.clone(), None)),
                Err(e) => return Err(e),
            };
            Ok((part.name.clone(), Some(embed(net, &crop)?.into_data())))
        })
        .collect()
}

/// Crops, embeds and classifies one frame.
pub fn predict_attributes(
    heads: &HeadSet,
    image: &Tensor,
    landmarks: &[Landmark],
    table: &PartTable,
    nets: &BTreeMap<String, Network>,
) -> Result<Vec<Option<f64>>> {
    heads.predict(&embed_parts(image, landmarks, table, nets)?)
}

/// Per-attribute accuracy of one method, in canonical attribute order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    /// `None` where no prediction was available.
    pub accuracy: Vec<Option<f64>>,
    pub average: f64,
}

/// Thresholds predictions at p > 0.5. Missing predictions are left out of an
/// attribute's denominator; the average runs over attributes with a value.
pub fn eval_accuracy(method: &str, predictions: &[Vec<Option<f64>>], labels: &[Vec<u8>]) -> Result<AccuracyRow> {
    if predictions.len() != labels.len() {
        return Err(shape_err!("{} predictions for {} labelled samples", predictions.len(), labels.len()));
    }
    let a = ATTRIBUTES.len();
    if predictions.iter().any(|p| p.len() != a) || labels.iter().any(|l| l.len() != a) {
        return Err(shape_err!("predictions and labels need {a} entries per sample"));
    }
    let accuracy: Vec<Option<f64>> = (0..a)
        .map(|k| {
            let (mut n, mut hit) = (0usize, 0usize);
            for (p, l) in predictions.iter().zip(labels) {
                if let Some(p) = p[k] {
                    n += 1;
                    hit += usize::from(u8::from(p > 0.5) == l[k]);
                }
            }
            (n > 0).then(|| hit as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = accuracy.iter().flatten().copied().collect();
    let average = if present.is_empty() { f64::NAN } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(AccuracyRow { method: method.to_string(), accuracy, average })
}

/// One row per method, one column per attribute, then `Average`.
pub fn write_accuracy_csv(rows: &[AccuracyRow], mut out: impl Write) -> Result<()> {
    write!(out, "Method")?;
    for a in ATTRIBUTES {
        write!(out, ",{a}")?;
    }
    writeln!(out, ",Average")?;
    for row in rows {
        write!(out, "{}", crate::auth::csv_field(&row.method))?;
        for v in &row.accuracy {
            match v {
                Some(v) => write!(out, ",{v:.4}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out, ",{:.4}", row.average)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn blobs(n: usize, seed: u64, gap: f64) -> HeadData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = HeadData::default();
        for i in 0..n {
            let l = (i % 2) as u8;
            let c = if l == 1 { gap } else { -gap };
            d.features.push(vec![c + rng.random_range(-1.0..1.0), 0.5 * c + rng.random_range(-1.0..1.0)]);
            d.labels.push(l);
        }
        d
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let d = blobs(40, 1, 3.0);
        let svm = train_svm(&d.features, &d.labels, 10.0, 0).unwrap();
        for (x, &l) in d.features.iter().zip(&d.labels) {
            assert_eq!(u8::from(svm.decision(x) > 0.0), l);
        }
    }

    #[test]
    fn flipping_labels_flips_the_hyperplane() {
        let d = blobs(30, 2, 0.5);
        let flipped: Vec<u8> = d.labels.iter().map(|l| 1 - l).collect();
        let a = train_svm(&d.features, &d.labels, 1.0, 0).unwrap();
        let b = train_svm(&d.features, &flipped, 1.0, 0).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa + wb).abs() < 1e-4, "{a:?} {b:?}");
        }
        for x in &d.features {
            let (da, db) = (a.decision(x), b.decision(x));
            if da.abs() > 1e-3 {
                assert!(da.signum() != db.signum());
            }
        }
    }

    #[test]
    fn beats_random_hyperplanes_on_the_hinge_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let labels: Vec<u8> = xs.iter().map(|x| u8::from(x[0] + 0.3 * x[1] + rng.random_range(-0.8..0.8) > 0.0)).collect();
        let c = 1.0;
        let svm = train_svm(&xs, &labels, c, 0).unwrap();
        let best = svm.objective(&xs, &labels, c);
        for _ in 0..1000 {
            let cand = LinearSvm {
                weights: (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
                bias: rng.random_range(-2.0..2.0),
            };
            assert!(best <= cand.objective(&xs, &labels, c) + 1e-9);
        }
    }

    #[test]
    fn points_outside_the_margin_do_not_matter() {
        let d = blobs(40, 4, 2.0);
        let svm = train_svm(&d.features, &d.labels, 1.0, 0).unwrap();
        let mut moved = d.clone();
        for (x, &l) in moved.features.iter_mut().zip(&d.labels) {
            let m = sign(l) * svm.decision(x);
            if m > 1.2 {
                // push further from the boundary, keeping it well outside
                let scale = 0.1 * sign(l) / dot(&svm.weights, &svm.weights).sqrt();
                for (xj, wj) in x.iter_mut().zip(&svm.weights) {
                    *xj += scale * wj;
                }
            }
        }
        let again = train_svm(&moved.features, &moved.labels, 1.0, 0).unwrap();
        for x in &d.features {
            assert!((svm.decision(x) - again.decision(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(train_svm(&[vec![1.0], vec![2.0]], &[1, 1], 1.0, 0).is_err());
        assert!(fit_calibration(&[1.0, 2.0], &[0, 0]).is_err());
    }

    #[test]
    fn calibration_midpoint_and_monotonicity() {
        let c = Calibration { a: -2.0, b: 0.0 };
        assert_eq!(c.probability(0.0), 0.5);
        let mut last = 0.0;
        for i in -50..50 {
            let p = c.probability(i as f64 * 0.7);
            assert!(p > 0.0 && p < 1.0 && p >= last);
            last = p;
        }
        assert!(c.probability(1e6) < 1.0 && c.probability(-1e6) > 0.0);
    }

    #[test]
    fn calibration_fit_recovers_a_known_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = (-1.5, 0.4);
        let truth = Calibration { a, b };
        let f: Vec<f64> = (0..4000).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y: Vec<u8> = f.iter().map(|&f| u8::from(rng.random::<f64>() < truth.probability(f))).collect();
        let fit = fit_calibration(&f, &y).unwrap();
        assert!((fit.a - a).abs() < 0.15 && (fit.b - b).abs() < 0.15, "{fit:?}");
        // p > 0.5 exactly beyond the midpoint
        let m = fit.midpoint();
        assert!(fit.probability(m + 1e-6) > 0.5 && fit.probability(m - 1e-6) < 0.5);
    }

    #[test]
    fn grid_prefers_smaller_c_on_ties() {
        let train = blobs(40, 5, 5.0);
        let dev = blobs(20, 6, 5.0);
        let head = train_head("Smiling", vec!["Mouth".into()], &train, &dev, &C_GRID, 0).unwrap();
        assert_eq!(head.reg_c, 0.01);
    }

    #[test]
    fn part_order_permutation_is_harmless() {
        let train = blobs(40, 7, 1.0);
        let dev = blobs(20, 8, 1.0);
        let head = train_head("Smiling", vec!["A".into(), "B".into()], &train, &dev, &[1.0], 0).unwrap();
        let mut swapped = head.clone();
        swapped.parts.reverse();
        swapped.svm.weights.reverse();
        let emb: BTreeMap<String, Option<Vec<f32>>> =
            [("A".to_string(), Some(vec![0.3])), ("B".to_string(), Some(vec![-1.2]))].into_iter().collect();
        let p = head.probability(&head.features(&emb).unwrap()).unwrap();
        let q = swapped.probability(&swapped.features(&emb).unwrap()).unwrap();
        assert!((p - q).abs() < 1e-12);
    }

    fn constant_head(attribute: &str, decision: f64) -> AttributeHead {
        AttributeHead {
            attribute: attribute.into(),
            parts: vec!["Mouth".into()],
            svm: LinearSvm { weights: vec![0.0], bias: decision },
            calibration: Calibration { a: -1.0, b: 0.0 },
            reg_c: 1.0,
        }
    }

    #[test]
    fn predictions_cover_all_attributes() {
        let heads = HeadSet {
            heads: ATTRIBUTES.iter().enumerate().map(|(i, a)| constant_head(a, i as f64 - 20.0)).collect(),
            missing: MissingPolicy::Exclude,
        };
        let emb = [("Mouth".to_string(), Some(vec![1.0]))].into_iter().collect();
        let p = heads.predict(&emb).unwrap();
        assert_eq!(p.len(), 40);
        assert!(p.iter().all(|p| p.is_some_and(|p| p > 0.0 && p < 1.0)));
        assert_eq!(p[20], Some(0.5));

        let missing = [("Mouth".to_string(), None)].into_iter().collect();
        assert!(heads.predict(&missing).unwrap().iter().all(Option::is_none));
        let imputed = HeadSet { missing: MissingPolicy::Impute, ..heads };
        assert!(imputed.predict(&missing).unwrap().iter().all(|&p| p == Some(0.5)));
    }

    #[test]
    fn constant_predictor_on_a_mostly_negative_attribute() {
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![u8::from(i < 10); 40]).collect();
        let preds = vec![vec![Some(0.5 + 1e-6); 40]; 100];
        let row = eval_accuracy("const", &preds, &labels).unwrap();
        assert!(row.accuracy.iter().all(|&a| (a.unwrap() - 0.1).abs() < 1e-12));
        let perfect: Vec<Vec<Option<f64>>> =
            labels.iter().map(|l| l.iter().map(|&v| Some(v as f64)).collect()).collect();
        assert_eq!(eval_accuracy("oracle", &perfect, &labels).unwrap().average, 1.0);
    }

    #[test]
    fn csv_layout() {
        let labels = vec![vec![1u8; 40], vec![0u8; 40]];
        let preds = vec![vec![Some(0.9); 40], vec![Some(0.8); 40]];
        let row = eval_accuracy("Ours", &preds, &labels).unwrap();
        let mut buf = Vec::new();
        write_accuracy_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("Method,5_o_Clock_Shadow,") && lines[0].ends_with(",Average"));
        assert_eq!(lines[1].split(',').count(), 42);
        assert!(lines[1].starts_with("Ours,0.5000"));
    }

    #[test]
    fn head_set_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heads.json");
        let set = HeadSet { heads: vec![constant_head("Young", 0.3)], missing: MissingPolicy::Impute };
        set.save(&path).unwrap();
        assert_eq!(HeadSet::load(&path).unwrap(), set);
    }

    proptest! {
        #[test]
        fn mean_row_is_the_mean(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<Vec<u8>> = (0..20).map(|_| (0..40).map(|_| rng.random_range(0..2u8)).collect()).collect();
            let preds: Vec<Vec<Option<f64>>> =
                (0..20).map(|_| (0..40).map(|_| Some(rng.random::<f64>())).collect()).collect();
            let row = eval_accuracy("r", &preds, &labels).unwrap();
            let mean = row.accuracy.iter().map(|a| a.unwrap()).sum::<f64>() / 40.0;
            prop_assert!((row.average - mean).abs() < 1e-12);
        }

        #[test]
        fn calibrated_outputs_are_open_unit_interval(a in -50.0f64..50.0, b in -50.0f64..50.0, f in -1e3f64..1e3) {
            let p = Calibration { a, b }.probability(f);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
