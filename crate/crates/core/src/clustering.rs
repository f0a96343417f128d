//! Joint constraint clustering of trigger and argument candidates.
//!
//! Trigger similarity mixes semantic cosine, relation-wise structure cosine
//! and a constraint term over the current argument clusters; argument
//! similarity uses semantic cosine and the constraint term over the current
//! trigger clusters. Both sides are clustered spectrally and alternately,
//! keeping the pair of clusterings with the lowest objective.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::stream_rng;
use crate::par;
use crate::tensor::{cosine, Matrix};

/// One trigger or argument candidate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateContext {
    pub id: String,
    /// Semantic vector E_g.
    pub semantic: Vec<f64>,
    /// (relation, index of the counterpart in the other candidate list).
    pub links: Vec<(String, usize)>,
    /// Triggers: structure vector E_r per relation.
    pub relation_vectors: BTreeMap<String, Vec<f64>>,
    /// Triggers: structure vector of the whole graph, E_R.
    pub structure: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn singletons(n: usize) -> Self {
        ClusterAssignment {
            labels: (0..n).collect(),
            k: n,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Members of each cluster, in label order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Relabels clusters by order of first appearance.
    fn canonical(labels: Vec<usize>) -> Self {
        let mut map = HashMap::new();
        let labels: Vec<usize> = labels
            .into_iter()
            .map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
            .collect();
        ClusterAssignment { k: map.len(), labels }
    }
}

/// `log(1 + |L1 ∩ L2| / |L1 ∪ L2|)`, 0 when both sets are empty.
pub fn constraint_f<T: Ord>(l1: &BTreeSet<T>, l2: &BTreeSet<T>) -> f64 {
    let inter = l1.intersection(l2).count();
    let union = l1.len() + l2.len() - inter;
    if union == 0 {
        0.0
    } else {
        (1.0 + inter as f64 / union as f64).ln()
    }
}

/// Tuples `(relation, cluster of counterpart)` of a candidate under the
/// counterpart clustering.
pub fn context_tuples(c: &CandidateContext, counterpart: &ClusterAssignment) -> BTreeSet<(String, usize)> {
    c.links
        .iter()
        .map(|(r, j)| (r.clone(), counterpart.labels[*j]))
        .collect()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean structure cosine over relations both triggers have; 0 when none.
fn shared_relation_term(t1: &CandidateContext, t2: &CandidateContext) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for (r, v1) in &t1.relation_vectors {
        if let Some(v2) = t2.relation_vectors.get(r) {
            check_dims(v1, v2)?;
            total += cosine(v1, v2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

pub fn trigger_similarity(
    t1: &CandidateContext,
    t2: &CandidateContext,
    lambda: f64,
    arguments: &ClusterAssignment,
) -> Result<f64> {
    check_dims(&t1.semantic, &t2.semantic)?;
    let f = constraint_f(&context_tuples(t1, arguments), &context_tuples(t2, arguments));
    Ok(lambda * cosine(&t1.semantic, &t2.semantic) + f + (1.0 - lambda) * shared_relation_term(t1, t2)?)
}

pub fn argument_similarity(
    a1: &CandidateContext,
    a2: &CandidateContext,
    triggers: &ClusterAssignment,
) -> Result<f64> {
    check_dims(&a1.semantic, &a2.semantic)?;
    let f = constraint_f(&context_tuples(a1, triggers), &context_tuples(a2, triggers));
    Ok(cosine(&a1.semantic, &a2.semantic) + f)
}

/// `Σ_{u<v, split} sim + Σ_{u<v, together} (1 − sim)` for one side.
pub fn side_objective(sim: &Matrix, assign: &ClusterAssignment) -> f64 {
    let n = assign.len();
    let mut total = 0.0;
    for u in 0..n {
        for v in u + 1..n {
            let s = sim.get(u, v);
            total += if assign.labels[u] == assign.labels[v] { 1.0 - s } else { s };
        }
    }
    total
}

/// `D_inter(C^T) + D_intra(C^T) + D_inter(C^A) + D_intra(C^A)`.
pub fn objective_o(
    triggers: &[CandidateContext],
    arguments: &[CandidateContext],
    c_t: &ClusterAssignment,
    c_a: &ClusterAssignment,
    lambda: f64,
) -> Result<f64> {
    let space = SimilaritySpace::new(triggers, arguments, lambda)?;
    Ok(side_objective(&space.trigger_matrix(c_a), c_t) + side_objective(&space.argument_matrix(c_t), c_a))
}

/// Precomputed assignment-independent parts of both similarity matrices.
/// Only the constraint term is recomputed per clustering.
pub struct SimilaritySpace {
    trig_base: Matrix,
    arg_base: Matrix,
    trig_links: Vec<Vec<(usize, usize)>>,
    arg_links: Vec<Vec<(usize, usize)>>,
}

impl SimilaritySpace {
    pub fn new(triggers: &[CandidateContext], arguments: &[CandidateContext], lambda: f64) -> Result<Self> {
        let mut relations: BTreeMap<&str, usize> = BTreeMap::new();
        for c in triggers.iter().chain(arguments) {
            for (r, _) in &c.links {
                let next = relations.len();
                relations.entry(r.as_str()).or_insert(next);
            }
        }
        let intern = |cs: &[CandidateContext], other: usize| -> Result<Vec<Vec<(usize, usize)>>> {
            cs.iter()
                .map(|c| {
                    c.links
                        .iter()
                        .map(|(r, j)| {
                            if *j >= other {
                                Err(Error::InvalidArgument(format!(
                                    "candidate {} links to missing counterpart {j}",
                                    c.id
                                )))
                            } else {
                                Ok((relations[r.as_str()], *j))
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let trig_links = intern(triggers, arguments.len())?;
        let arg_links = intern(arguments, triggers.len())?;

        let nt = triggers.len();
        let rows = par::map_range(nt, |i| -> Result<Vec<f64>> {
            (0..nt)
                .map(|j| {
                    let (a, b) = (&triggers[i], &triggers[j]);
                    check_dims(&a.semantic, &b.semantic)?;
                    Ok(lambda * cosine(&a.semantic, &b.semantic) + (1.0 - lambda) * shared_relation_term(a, b)?)
                })
                .collect()
        });
        let trig_base = matrix_from_rows(nt, rows)?;
        let na = arguments.len();
        let rows = par::map_range(na, |i| -> Result<Vec<f64>> {
            (0..na)
                .map(|j| {
                    check_dims(&arguments[i].semantic, &arguments[j].semantic)?;
                    Ok(cosine(&arguments[i].semantic, &arguments[j].semantic))
                })
                .collect()
        });
        let arg_base = matrix_from_rows(na, rows)?;
        Ok(SimilaritySpace {
            trig_base,
            arg_base,
            trig_links,
            arg_links,
        })
    }

    pub fn trigger_matrix(&self, arguments: &ClusterAssignment) -> Matrix {
        with_constraint(&self.trig_base, &self.trig_links, arguments)
    }

    pub fn argument_matrix(&self, triggers: &ClusterAssignment) -> Matrix {
        with_constraint(&self.arg_base, &self.arg_links, triggers)
    }
}

fn matrix_from_rows(n: usize, rows: Vec<Result<Vec<f64>>>) -> Result<Matrix> {
    let mut m = Matrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).copy_from_slice(&r?);
    }
    Ok(m)
}

fn with_constraint(base: &Matrix, links: &[Vec<(usize, usize)>], counterpart: &ClusterAssignment) -> Matrix {
    let tuples: Vec<Vec<(usize, usize)>> = links
        .iter()
        .map(|l| {
            let mut t: Vec<(usize, usize)> = l.iter().map(|&(r, j)| (r, counterpart.labels[j])).collect();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let n = base.rows;
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| base.get(i, j) + sorted_jaccard_log(&tuples[i], &tuples[j]))
            .collect::<Vec<f64>>()
    });
    let mut m = Matrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).copy_from_slice(&r);
    }
    m
}

fn sorted_jaccard_log(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    (1.0 + inter as f64 / union as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub kmeans_restarts: usize,
    pub kmeans_iterations: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            kmeans_restarts: 5,
            kmeans_iterations: 100,
        }
    }
}

/// Normalized spectral clustering of a similarity matrix into `k` groups.
pub fn spectral_cluster(sim: &Matrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    spectral_cluster_with(sim, k, seed, &SpectralConfig::default())
}

pub fn spectral_cluster_with(sim: &Matrix, k: usize, seed: u64, cfg: &SpectralConfig) -> Result<ClusterAssignment> {
    check_k(sim, k)?;
    if !sim.is_finite() {
        return Err(Error::NonFinite("similarity matrix".into()));
    }
    if k == 1 {
        return Ok(ClusterAssignment {
            labels: vec![0; sim.rows],
            k: 1,
        });
    }
    let emb = spectral_embedding(sim, k)?;
    Ok(cluster_embedding(&emb, k, seed, cfg))
}

fn check_k(sim: &Matrix, k: usize) -> Result<()> {
    let n = sim.rows;
    if sim.cols != n {
        return Err(Error::Dimension(format!("similarity matrix is {}x{}", sim.rows, sim.cols)));
    }
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} items")));
    }
    Ok(())
}

/// Eigenvectors of the `dims` smallest eigenvalues of the symmetric
/// normalized Laplacian, as rows of an `n × dims` matrix.
fn spectral_embedding(sim: &Matrix, dims: usize) -> Result<Matrix> {
    let n = sim.rows;
    if !sim.is_finite() {
        return Err(Error::NonFinite("similarity matrix".into()));
    }
    let affinity = |i: usize, j: usize| {
        if i == j {
            0.0
        } else {
            (0.5 * (sim.get(i, j) + sim.get(j, i))).max(0.0)
        }
    };
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| affinity(i, j)).sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }
        })
        .collect();
    let norm_aff = DMatrix::from_fn(n, n, |i, j| inv_sqrt_deg[i] * affinity(i, j) * inv_sqrt_deg[j]);
    let dims = dims.min(n);
    let vectors = if n > EXACT_EIGEN_LIMIT {
        leading_eigenvectors(&norm_aff, dims)
    } else {
        None
    };
    let vectors = vectors.unwrap_or_else(|| exact_leading_eigenvectors(norm_aff, dims));
    let mut out = Matrix::zeros(n, dims);
    for i in 0..n {
        for c in 0..dims {
            out.set(i, c, vectors[(i, c)]);
        }
    }
    Ok(out)
}

/// Above this size the leading eigenvectors come from subspace iteration.
const EXACT_EIGEN_LIMIT: usize = 256;
const SUBSPACE_EXTRA: usize = 16;
const SUBSPACE_MAX_ITERS: usize = 400;
const SUBSPACE_TOL: f64 = 1e-8;

/// Eigenvectors of the `dims` largest eigenvalues of a symmetric matrix,
/// by full decomposition. Ties are broken by index.
fn exact_leading_eigenvectors(m: DMatrix<f64>, dims: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    DMatrix::from_fn(n, dims, |i, c| eig.eigenvectors[(i, order[c])])
}

/// Block subspace iteration with Rayleigh-Ritz on `m + I`, whose spectrum
/// lies in [0, 2] for a normalized affinity. `None` when the residuals do
/// not converge.
fn leading_eigenvectors(m: &DMatrix<f64>, dims: usize) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let b = (dims + SUBSPACE_EXTRA).min(n);
    let shifted = m + DMatrix::<f64>::identity(n, n);
    let mut rng = stream_rng(0, 0x5eed, n as u64);
    let start = DMatrix::from_fn(n, b, |_, _| rng.gen::<f64>() - 0.5);
    let mut q = start.qr().q();
    for _ in 0..SUBSPACE_MAX_ITERS {
        let z = &shifted * &q;
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let v = DMatrix::from_fn(b, b, |i, c| eig.eigenvectors[(i, order[c])]);
        let ritz = &q * &v;
        let image = &z * &v;
        let converged = (0..dims).all(|c| {
            let theta = eig.eigenvalues[order[c]];
            (image.column(c) - ritz.column(c) * theta).norm() <= SUBSPACE_TOL
        });
        if converged {
            return Some(ritz.columns(0, dims).into_owned());
        }
        q = image.qr().q();
    }
    None
}

/// k-means on the row-normalized leading `k` columns of an embedding.
fn cluster_embedding(emb: &Matrix, k: usize, seed: u64, cfg: &SpectralConfig) -> ClusterAssignment {
    let mut points: Vec<Vec<f64>> = (0..emb.rows).map(|i| emb.row(i)[..k].to_vec()).collect();
    for p in &mut points {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            p.iter_mut().for_each(|v| *v /= norm);
        }
    }
    ClusterAssignment::canonical(kmeans(&points, k, seed, cfg))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

/// Lloyd iterations from seeded k-means++ starts; best restart by within-
/// cluster sum of squares, then empty clusters are refilled.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, cfg: &SpectralConfig) -> Vec<usize> {
    let mut rng = stream_rng(seed, 0x6b6d, 0);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..cfg.kmeans_restarts.max(1) {
        let mut centers = kmeans_pp(points, k, &mut rng);
        let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        for _ in 0..cfg.kmeans_iterations {
            for (c, m) in centroids(points, &labels, k).into_iter().enumerate() {
                if let Some(m) = m {
                    centers[c] = m;
                }
            }
            let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
            if next == labels {
                break;
            }
            labels = next;
        }
        let sse: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &c)| sq_dist(p, &centers[c]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    let mut labels = best.expect("at least one restart").1;
    repair_empty(points, &mut labels, k);
    labels
}

fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// While a cluster is empty, move the point farthest from the centroid of
/// the largest cluster into it.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in labels.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("k > 0");
        let center = centroids(points, labels, k)[largest].clone().expect("largest is non-empty");
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &center)
                    .total_cmp(&sq_dist(&points[b], &center))
                    .then(b.cmp(&a))
            })
            .expect("largest is non-empty");
        labels[far] = empty;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    /// Inclusive `[min, max]` number of trigger clusters.
    pub k_triggers: [usize; 2],
    /// Inclusive `[min, max]` number of argument clusters.
    pub k_arguments: [usize; 2],
    pub lambda: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub spectral: SpectralConfig,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k_triggers: [2, 10],
            k_arguments: [2, 10],
            lambda: 0.5,
            max_iterations: 10,
            seed: 0,
            spectral: SpectralConfig::default(),
        }
    }
}

impl ClusteringConfig {
    /// Ranges clamped to the item counts.
    fn grid(&self, n_t: usize, n_a: usize) -> Result<Vec<(usize, usize)>> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        let clamp = |[lo, hi]: [usize; 2], n: usize, what: &str| -> Result<(usize, usize)> {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidArgument(format!("{what} cluster range [{lo}, {hi}] is invalid")));
            }
            let hi = hi.min(n);
            Ok((lo.min(hi), hi))
        };
        let (t0, t1) = clamp(self.k_triggers, n_t, "trigger")?;
        let (a0, a1) = clamp(self.k_arguments, n_a, "argument")?;
        Ok((t0..=t1).flat_map(|kt| (a0..=a1).map(move |ka| (kt, ka))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointClustering {
    pub k_triggers: usize,
    pub k_arguments: usize,
    pub objective: f64,
    pub triggers: ClusterAssignment,
    pub arguments: ClusterAssignment,
    /// Objective of every clustering pair evaluated, in evaluation order
    /// per grid point.
    pub history: Vec<f64>,
}

/// Serialized clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringOutput {
    #[serde(rename = "K_T")]
    pub k_t: usize,
    #[serde(rename = "K_A")]
    pub k_a: usize,
    #[serde(rename = "O")]
    pub objective: f64,
    pub triggers: BTreeMap<String, usize>,
    pub arguments: BTreeMap<String, usize>,
}

impl JointClustering {
    pub fn output(&self, triggers: &[CandidateContext], arguments: &[CandidateContext]) -> ClusteringOutput {
        let named = |cs: &[CandidateContext], a: &ClusterAssignment| {
            cs.iter().zip(&a.labels).map(|(c, &l)| (c.id.clone(), l)).collect()
        };
        ClusteringOutput {
            k_t: self.triggers.k,
            k_a: self.arguments.k,
            objective: self.objective,
            triggers: named(triggers, &self.triggers),
            arguments: named(arguments, &self.arguments),
        }
    }
}

/// Alternating spectral clustering over the `(K_T, K_A)` grid; returns the
/// lowest-objective pair seen, earliest on ties.
pub fn joint_cluster(
    triggers: &[CandidateContext],
    arguments: &[CandidateContext],
    config: &ClusteringConfig,
) -> Result<JointClustering> {
    if triggers.is_empty() || arguments.is_empty() {
        return Err(Error::NoCandidates);
    }
    let grid = config.grid(triggers.len(), arguments.len())?;
    let space = SimilaritySpace::new(triggers, arguments, config.lambda)?;
    let cache = EmbeddingCache {
        trigger_dims: grid.iter().map(|g| g.0).max().expect("non-empty grid"),
        argument_dims: grid.iter().map(|g| g.1).max().expect("non-empty grid"),
        triggers: Mutex::default(),
        arguments: Mutex::default(),
    };
    let results = par::map(&grid, |&(kt, ka)| run_grid_point(&space, &cache, kt, ka, config));
    let mut best: Option<JointClustering> = None;
    let mut history = Vec::new();
    for r in results {
        let r = r?;
        history.extend_from_slice(&r.history);
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let mut best = best.expect("grid is non-empty");
    best.history = history;
    Ok(best)
}

type SideCache = Mutex<HashMap<Vec<usize>, Arc<(Matrix, Matrix)>>>;

/// Similarity matrices and spectral embeddings keyed by the counterpart
/// clustering they were built from. Embeddings keep enough columns for the
/// largest `k` of the grid, so every grid point can reuse them.
struct EmbeddingCache {
    trigger_dims: usize,
    argument_dims: usize,
    triggers: SideCache,
    arguments: SideCache,
}

impl EmbeddingCache {
    fn get(
        cache: &SideCache,
        key: &ClusterAssignment,
        dims: usize,
        build: impl FnOnce() -> Matrix,
    ) -> Result<Arc<(Matrix, Matrix)>> {
        if let Some(hit) = cache.lock().expect("cache lock").get(&key.labels) {
            return Ok(hit.clone());
        }
        let sim = build();
        let emb = spectral_embedding(&sim, dims)?;
        let entry = Arc::new((sim, emb));
        cache
            .lock()
            .expect("cache lock")
            .insert(key.labels.clone(), entry.clone());
        Ok(entry)
    }

    fn triggers(&self, space: &SimilaritySpace, arguments: &ClusterAssignment) -> Result<Arc<(Matrix, Matrix)>> {
        Self::get(&self.triggers, arguments, self.trigger_dims, || space.trigger_matrix(arguments))
    }

    fn arguments(&self, space: &SimilaritySpace, triggers: &ClusterAssignment) -> Result<Arc<(Matrix, Matrix)>> {
        Self::get(&self.arguments, triggers, self.argument_dims, || space.argument_matrix(triggers))
    }
}

fn run_grid_point(
    space: &SimilaritySpace,
    cache: &EmbeddingCache,
    kt: usize,
    ka: usize,
    config: &ClusteringConfig,
) -> Result<JointClustering> {
    let n_t = space.trig_base.rows;
    let spectral = |entry: Arc<(Matrix, Matrix)>, k: usize| -> ClusterAssignment {
        if k == 1 {
            ClusterAssignment {
                labels: vec![0; entry.0.rows],
                k: 1,
            }
        } else {
            cluster_embedding(&entry.1, k, config.seed, &config.spectral)
        }
    };
    let evaluate = |ct: &ClusterAssignment, ca: &ClusterAssignment| -> Result<f64> {
        Ok(side_objective(&cache.triggers(space, ca)?.0, ct) + side_objective(&cache.arguments(space, ct)?.0, ca))
    };

    let mut c_a = spectral(cache.arguments(space, &ClusterAssignment::singletons(n_t))?, ka);
    let mut c_t = spectral(cache.triggers(space, &c_a)?, kt);
    let o = evaluate(&c_t, &c_a)?;
    let mut history = vec![o];
    let mut best = (o, c_t.clone(), c_a.clone());
    for _ in 0..config.max_iterations {
        let next_t = spectral(cache.triggers(space, &c_a)?, kt);
        let next_a = spectral(cache.arguments(space, &next_t)?, ka);
        if next_t == c_t && next_a == c_a {
            break;
        }
        c_t = next_t;
        c_a = next_a;
        let o = evaluate(&c_t, &c_a)?;
        history.push(o);
        if o < best.0 {
            best = (o, c_t.clone(), c_a.clone());
        }
    }
    Ok(JointClustering {
        k_triggers: kt,
        k_arguments: ka,
        objective: best.0,
        triggers: best.1,
        arguments: best.2,
        history,
    })
}
