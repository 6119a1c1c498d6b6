//! Attribute discovery: OMP sparse coding, sparse subspace clustering of
//! embedding dictionaries, and the cluster-membership feature map.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Kind, Reader, Writer};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Sparsity used for the feature map.
pub const FEATURE_SPARSITY: usize = 20;
pub const CLUSTERS_PER_PART: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    /// Atom indices in selection order.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    /// Residual norm after each selection, starting with the signal norm.
    pub residual_history: Vec<f64>,
}

impl SparseCode {
    /// Dense coefficient vector over `n` atoms.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &c) in self.support.iter().zip(&self.coefficients) {
            out[i] = c;
        }
        out
    }
}

const RESIDUAL_TOL: f64 = 1e-8;

/// Greedy OMP. `corr0` is `D^T x`, `gram_col(j)` returns `D^T d_j`.
fn omp_core(
    atoms: &DMatrix<f64>,
    signal: &DVector<f64>,
    corr0: &DVector<f64>,
    gram_col: impl Fn(usize) -> DVector<f64>,
    sparsity: usize,
    exclude: Option<usize>,
) -> SparseCode {
    let n = atoms.ncols();
    let mut support: Vec<usize> = Vec::new();
    let mut gram_cols: Vec<DVector<f64>> = Vec::new();
    let mut coefficients = DVector::<f64>::zeros(0);
    let mut residual_norm = signal.norm();
    let mut history = vec![residual_norm];
    let mut used = vec![false; n];
    if let Some(e) = exclude {
        used[e] = true;
    }
    while support.len() < sparsity && residual_norm >= RESIDUAL_TOL {
        // D^T r = D^T x - G[:, S] c
        let mut corr = corr0.clone();
        for (g, &c) in gram_cols.iter().zip(coefficients.iter()) {
            corr.axpy(-c, g, 1.0);
        }
        let best = (0..n).filter(|&j| !used[j]).max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()).then(b.cmp(&a)));
        let Some(j) = best else { break };
        if corr[j].abs() < 1e-12 {
            break;
        }
        let g = gram_col(j);
        let idx: Vec<usize> = support.iter().copied().chain(std::iter::once(j)).collect();
        let s = idx.len();
        let gss = DMatrix::from_fn(s, s, |a, b| if b + 1 == s { g[idx[a]] } else { gram_cols[b][idx[a]] });
        let rhs = DVector::from_iterator(s, idx.iter().map(|&i| corr0[i]));
        let Some(chol) = gss.cholesky() else { break };
        let c = chol.solve(&rhs);
        let mut residual = signal.clone();
        for (k, &i) in idx.iter().enumerate() {
            residual.axpy(-c[k], &atoms.column(i), 1.0);
        }
        let r = residual.norm();
        if r >= residual_norm {
            // numerically dependent atom; nothing more to gain
            break;
        }
        used[j] = true;
        support.push(j);
        gram_cols.push(g);
        coefficients = c;
        residual_norm = r;
        history.push(r);
    }
    SparseCode { support, coefficients: coefficients.iter().copied().collect(), residual_norm, residual_history: history }
}

fn check_sparsity(sparsity: usize, d: usize, n: usize) -> Result<()> {
    if sparsity == 0 || sparsity > d.min(n) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} must lie in 1..={}", d.min(n))));
    }
    Ok(())
}

/// Orthogonal matching pursuit over the unit-norm columns of `atoms`, with a
/// least-squares refit on the support after every selection. Stops after
/// `sparsity` atoms or once the residual norm drops below 1e-8.
pub fn omp(atoms: &DMatrix<f64>, signal: &[f64], sparsity: usize) -> Result<SparseCode> {
    let (d, n) = atoms.shape();
    if signal.len() != d {
        return Err(shape_err!("signal has length {}, atoms have dimension {d}", signal.len()));
    }
    check_sparsity(sparsity, d, n)?;
    let x = DVector::from_column_slice(signal);
    let corr0 = atoms.tr_mul(&x);
    Ok(omp_core(atoms, &x, &corr0, |j| atoms.tr_mul(&atoms.column(j)), sparsity, None))
}

/// Scales every column to unit L2 norm; zero columns are an error.
pub fn normalize_columns(m: &mut DMatrix<f64>) -> Result<()> {
    for (i, mut col) in m.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Data(format!("column {i} has zero or non-finite norm")));
        }
        col /= norm;
    }
    Ok(())
}

/// Self-expressive coefficients: column `i` of the result codes data point
/// `i` over every other point, so the diagonal is exactly zero.
pub fn ssc_affinity(data: &DMatrix<f64>, sparsity: usize) -> Result<DMatrix<f64>> {
    let (d, n) = data.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("subspace clustering needs at least two points".into()));
    }
    check_sparsity(sparsity, d, n)?;
    let sparsity = sparsity.min(n - 1);
    let gram = data.tr_mul(data);
    let columns: Vec<SparseCode> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = data.column(i).into_owned();
            let corr0 = gram.column(i).into_owned();
            omp_core(data, &x, &corr0, |j| gram.column(j).into_owned(), sparsity, Some(i))
        })
        .collect();
    let mut c = DMatrix::zeros(n, n);
    for (i, code) in columns.iter().enumerate() {
        for (&j, &v) in code.support.iter().zip(&code.coefficients) {
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Relative inertia change below which Lloyd iterations stop.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { n_init: 10, max_iter: 100, tol: 1e-6 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means with k-means++ seeding; the best of `n_init` runs by inertia.
/// Returns labels and inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, seed: u64) -> Result<(Vec<usize>, f64)> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.n_init.max(1) {
        let mut centers = vec![points[rng.random_range(0..n)].clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut t = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if t < w {
                        pick = i;
                        break;
                    }
                    t -= w;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
            for (d, p) in d2.iter_mut().zip(points) {
                *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
            }
        }
        let mut labels = vec![0; n];
        let mut inertia = f64::INFINITY;
        for _ in 0..cfg.max_iter {
            let mut new_inertia = 0.0;
            for (l, p) in labels.iter_mut().zip(points) {
                let (bi, bd) = centers
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, sq_dist(p, c)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("k >= 1");
                *l = bi;
                new_inertia += bd;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (&l, p) in labels.iter().zip(points) {
                counts[l] += 1;
                for (s, v) in sums[l].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for ((c, s), &m) in centers.iter_mut().zip(sums).zip(&counts) {
                if m > 0 {
                    *c = s.into_iter().map(|v| v / m as f64).collect();
                }
            }
            let converged = (inertia - new_inertia).abs() <= cfg.tol * new_inertia.max(f64::MIN_POSITIVE);
            inertia = new_inertia;
            if converged {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("at least one run"))
}

/// Normalised spectral clustering of the graph `|C| + |C|^T`.
pub fn spectral_cluster(c: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    spectral_cluster_with(c, k, &KMeansConfig::default(), seed)
}

pub fn spectral_cluster_with(c: &DMatrix<f64>, k: usize, cfg: &KMeansConfig, seed: u64) -> Result<Vec<usize>> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(shape_err!("affinity must be square, got {:?}", c.shape()));
    }
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("need 2 <= k <= {n}, got {k}")));
    }
    let abs = c.abs();
    let mut w = &abs + abs.transpose();
    // isolated vertices get a tiny self loop, relative to the graph's weight
    let self_loop = 1e-10 * w.amax().max(f64::MIN_POSITIVE);
    let degree: Vec<f64> = (0..n)
        .map(|i| {
            let d = w.row(i).sum();
            if d > 0.0 {
                d
            } else {
                w[(i, i)] = self_loop;
                self_loop
            }
        })
        .collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    // the bottom eigenvectors of I - D^-1/2 W D^-1/2 are the top ones of the
    // normalised affinity
    let norm = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(norm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..k].iter().map(|&j| eig.eigenvectors[(i, j)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    Ok(kmeans(&points, k, cfg, seed)?.0)
}

/// Unit-norm embedding atoms of one part, with their cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub part: String,
    pub k: usize,
    /// `embedding_dim x n`.
    pub atoms: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Where each atom came from (e.g. image paths); empty if unknown.
    pub sources: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    /// Points drawn uniformly at random (without replacement) from the pool.
    pub size: usize,
    pub clusters: usize,
    pub ssc_sparsity: usize,
    pub kmeans: KMeansConfig,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { size: 10_000, clusters: CLUSTERS_PER_PART, ssc_sparsity: FEATURE_SPARSITY, kmeans: KMeansConfig::default() }
    }
}

impl Dictionary {
    /// Selects up to `cfg.size` embeddings, drops all-zero ones, normalises
    /// them and clusters them by sparse subspace clustering.
    pub fn build(
        part: &str,
        embeddings: &[Vec<f32>],
        sources: &[String],
        cfg: &DictionaryConfig,
        seed: u64,
    ) -> Result<Self> {
        if !sources.is_empty() && sources.len() != embeddings.len() {
            return Err(shape_err!("{} sources for {} embeddings", sources.len(), embeddings.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = if embeddings.len() > cfg.size {
            sample_indices(&mut rng, embeddings.len(), cfg.size).into_vec()
        } else {
            (0..embeddings.len()).collect()
        };
        picked.sort_unstable();
        let before = picked.len();
        picked.retain(|&i| embeddings[i].iter().any(|&v| v != 0.0));
        if picked.len() < before {
            log::warn!("{part}: dropped {} all-zero embeddings", before - picked.len());
        }
        if picked.len() < cfg.clusters.max(2) {
            return Err(Error::Data(format!("{part}: only {} usable embeddings", picked.len())));
        }
        let d = embeddings[picked[0]].len();
        if picked.iter().any(|&i| embeddings[i].len() != d) {
            return Err(shape_err!("{part}: embeddings have differing lengths"));
        }
        let mut atoms = DMatrix::from_fn(d, picked.len(), |r, c| embeddings[picked[c]][r] as f64);
        normalize_columns(&mut atoms)?;
        let affinity = ssc_affinity(&atoms, cfg.ssc_sparsity.min(d).min(picked.len() - 1))?;
        let labels = spectral_cluster_with(&affinity, cfg.clusters, &cfg.kmeans, seed)?;
        let sources = if sources.is_empty() { Vec::new() } else { picked.iter().map(|&i| sources[i].clone()).collect() };
        Ok(Self { part: part.to_string(), k: cfg.clusters, atoms, labels, sources })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Kind::Dictionary);
        w.str(&self.part);
        w.u32(self.k);
        w.u32(self.sources.len());
        for s in &self.sources {
            w.str(s);
        }
        let (d, n) = self.atoms.shape();
        // column-major d x n is row-major n x d
        let atoms = Tensor::new(vec![n, d], self.atoms.iter().map(|&v| v as f32).collect()).expect("non-empty");
        let labels = Tensor::new(vec![n], self.labels.iter().map(|&l| l as f32).collect()).expect("non-empty");
        w.tensors([("atoms".to_string(), &atoms), ("labels".to_string(), &labels)].into_iter());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, Kind::Dictionary)?;
        let part = r.str()?;
        let k = r.u32()?;
        let count = r.u32()?;
        let sources = (0..count).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let tensors = r.tensors()?;
        r.finish()?;
        let [(an, atoms), (ln, labels)]: [(String, Tensor); 2] =
            tensors.try_into().map_err(|_| Error::Format("dictionary needs exactly two tensors".into()))?;
        if an != "atoms" || ln != "labels" || atoms.rank() != 2 || labels.rank() != 1 {
            return Err(Error::Format("dictionary tensors must be atoms [n, d] and labels [n]".into()));
        }
        let (n, d) = (atoms.shape()[0], atoms.shape()[1]);
        if labels.len() != n || (!sources.is_empty() && sources.len() != n) {
            return Err(Error::Format("dictionary tensor lengths disagree".into()));
        }
        let labels: Vec<usize> = labels
            .data()
            .iter()
            .map(|&l| {
                if l >= 0.0 && l.fract() == 0.0 && (l as usize) < k {
                    Ok(l as usize)
                } else {
                    Err(Error::Format(format!("cluster label {l} outside 0..{k}")))
                }
            })
            .collect::<Result<_>>()?;
        let atoms = DMatrix::from_iterator(d, n, atoms.data().iter().map(|&v| v as f64));
        Ok(Self { part, k, atoms, labels, sources })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Cluster membership probabilities of one embedding: code it over the
    /// dictionary, measure each cluster's share of the reconstruction
    /// `|D_i f_i|`, and softmax those norms.
    pub fn membership(&self, embedding: &[f32], sparsity: usize) -> Result<Vec<f64>> {
        let (d, n) = self.atoms.shape();
        if embedding.len() != d {
            return Err(shape_err!("{} dictionary has dimension {d}, embedding {}", self.part, embedding.len()));
        }
        let norm = embedding.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![1.0 / self.k as f64; self.k]);
        }
        let x: Vec<f64> = embedding.iter().map(|&v| v as f64 / norm).collect();
        let code = omp(&self.atoms, &x, sparsity.min(d).min(n))?;
        let mut partial = vec![DVector::<f64>::zeros(d); self.k];
        for (&i, &c) in code.support.iter().zip(&code.coefficients) {
            partial[self.labels[i]].axpy(c, &self.atoms.column(i), 1.0);
        }
        Ok(softmax(&partial.iter().map(|v| v.norm()).collect::<Vec<_>>()))
    }

    /// Sample sources grouped by cluster.
    pub fn montage(&self) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, Vec<String>> = (0..self.k).map(|c| (c, Vec::new())).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            let name = self.sources.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            out.entry(l).or_default().push(name);
        }
        out
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Concatenated per-part membership vectors, in dictionary order. A missing
/// embedding yields a uniform block.
pub fn discattr_features(
    embeddings: &BTreeMap<String, Option<Vec<f32>>>,
    dictionaries: &[Dictionary],
    sparsity: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for dict in dictionaries {
        match embeddings.get(&dict.part).and_then(Option::as_ref) {
            Some(e) => out.extend(dict.membership(e, sparsity)?),
            None => out.extend(std::iter::repeat_n(1.0 / dict.k as f64, dict.k)),
        }
    }
    Ok(out)
}
