//! Browser bindings for three interactive pieces of the library: the
//! battery-life model, ROC/EER on synthetic scores, and subspace clustering
//! of planted data. Each export returns plain numbers or a JSON string.

use attrauth::auth::roc_eer;
use attrauth::budget::{battery_life, BudgetParams};
use attrauth::discovery::{normalize_columns, spectral_cluster, ssc_affinity};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on the planted clusters; matching labels is brute force.
pub const MAX_SUBSPACES: usize = 6;

fn params(capacity_wh: f64, p_n: f64, p_d: f64, alpha: f64, beta: f64) -> BudgetParams {
    BudgetParams { capacity_wh, p_n, p_d, alpha, beta, t_a: 1.0 }
}

/// Battery life in hours, NaN for invalid inputs.
#[wasm_bindgen]
pub fn battery_hours(capacity_wh: f64, p_n: f64, p_d: f64, alpha: f64, beta: f64) -> f64 {
    battery_life(&params(capacity_wh, p_n, p_d, alpha, beta)).unwrap_or(f64::NAN)
}

/// Battery life at `steps` evenly spaced authentication ratios in [0, 1].
#[wasm_bindgen]
pub fn battery_curve(capacity_wh: f64, p_n: f64, p_d: f64, beta: f64, steps: usize) -> Vec<f64> {
    let steps = steps.max(2);
    (0..steps)
        .map(|i| battery_hours(capacity_wh, p_n, p_d, i as f64 / (steps - 1) as f64, beta))
        .collect()
}

#[derive(Serialize)]
struct RocView {
    far: Vec<f64>,
    tar: Vec<f64>,
    eer: f64,
    eer_threshold: f64,
}

fn normals(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + z
        })
        .collect()
}

pub fn roc_json(separation: f64, genuine: usize, impostor: usize, seed: u32) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let g = normals(&mut rng, genuine, separation);
    let i = normals(&mut rng, impostor, 0.0);
    let curve = roc_eer(&g, &i).map_err(|e| e.to_string())?;
    let view = RocView {
        far: curve.points.iter().map(|p| p.far).collect(),
        tar: curve.points.iter().map(|p| p.tar).collect(),
        eer: curve.eer,
        eer_threshold: curve.eer_threshold,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// ROC curve and EER of unit-variance Gaussian genuine scores centred at
/// `separation` against impostor scores centred at 0.
#[wasm_bindgen]
pub fn roc_demo(separation: f64, genuine: usize, impostor: usize, seed: u32) -> Result<String, JsError> {
    roc_json(separation, genuine, impostor, seed).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct ClusterView {
    accuracy: f64,
    truth: Vec<usize>,
    labels: Vec<usize>,
    /// A random 2-D projection of the points, for plotting.
    points: Vec<[f64; 2]>,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, k - 1);
            out.push(q);
        }
    }
    out
}

/// Fraction of points whose label matches the truth under the best
/// relabelling.
pub fn matched_accuracy(truth: &[usize], labels: &[usize], k: usize) -> f64 {
    let best = permutations(k)
        .into_iter()
        .map(|perm| truth.iter().zip(labels).filter(|(&t, &l)| perm[l] == t).count())
        .max()
        .unwrap_or(0);
    best as f64 / truth.len().max(1) as f64
}

pub fn cluster_json(
    subspaces: usize,
    dim: usize,
    ambient: usize,
    per: usize,
    noise: f64,
    seed: u32,
) -> Result<String, String> {
    if !(2..=MAX_SUBSPACES).contains(&subspaces) || dim == 0 || dim >= ambient || per <= dim {
        return Err(format!("need 2..={MAX_SUBSPACES} subspaces, 0 < dim < ambient and more than dim points each"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut gauss = |r: usize, c: usize| DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let n = subspaces * per;
    let mut data = DMatrix::zeros(ambient, n);
    let mut truth = Vec::with_capacity(n);
    for s in 0..subspaces {
        let basis = gauss(ambient, dim);
        let coeffs = gauss(dim, per);
        let block = basis * coeffs + gauss(ambient, per) * noise;
        data.columns_mut(s * per, per).copy_from(&block);
        truth.extend(std::iter::repeat_n(s, per));
    }
    normalize_columns(&mut data).map_err(|e| e.to_string())?;
    let c = ssc_affinity(&data, dim.min(n - 1)).map_err(|e| e.to_string())?;
    let labels = spectral_cluster(&c, subspaces, seed as u64).map_err(|e| e.to_string())?;
    let proj = gauss(2, ambient);
    let flat = &proj * &data;
    let view = ClusterView {
        accuracy: matched_accuracy(&truth, &labels, subspaces),
        points: (0..n).map(|i| [flat[(0, i)], flat[(1, i)]]).collect(),
        truth,
        labels,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Plants `subspaces` random `dim`-dimensional subspaces in R^`ambient`,
/// draws `per` noisy points from each and clusters them.
#[wasm_bindgen]
pub fn cluster_demo(subspaces: usize, dim: usize, ambient: usize, per: usize, noise: f64, seed: u32) -> Result<String, JsError> {
    cluster_json(subspaces, dim, ambient, per, noise, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_curve_spans_alpha() {
        let c = battery_curve(8.74, 0.6, 0.78, 1.0, 5);
        assert_eq!(c.len(), 5);
        assert!((c[0] - 8.74 / 0.6).abs() < 1e-12);
        assert!((c[4] - 8.74 / 1.38).abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[1] < w[0]));
        assert!(battery_hours(8.74, 0.0, 0.0, 0.0, 0.0).is_nan());
    }

    #[test]
    fn roc_view_is_consistent() {
        let v: serde_json::Value = serde_json::from_str(&roc_json(10.0, 50, 50, 1).unwrap()).unwrap();
        assert!(v["eer"].as_f64().unwrap() < 1e-9);
        let far = v["far"].as_array().unwrap();
        assert_eq!(far.len(), v["tar"].as_array().unwrap().len());
        assert!(roc_json(1.0, 0, 5, 1).is_err());
    }

    #[test]
    fn clusters_are_recovered() {
        let v: serde_json::Value = serde_json::from_str(&cluster_json(3, 3, 20, 30, 0.0, 4).unwrap()).unwrap();
        assert!(v["accuracy"].as_f64().unwrap() > 0.95);
        // Two-sparse codes of planar data tend to split a plane into pieces.
        assert!(cluster_json(3, 2, 12, 30, 0.0, 4).is_ok());
        assert_eq!(v["points"].as_array().unwrap().len(), 90);
        assert!(cluster_json(9, 2, 12, 30, 0.0, 4).is_err());
    }

    #[test]
    fn accuracy_ignores_label_names() {
        assert_eq!(matched_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0], 2), 1.0);
        assert_eq!(matched_accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1], 2), 0.5);
    }
}
