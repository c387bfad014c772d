//! Region simplification: agglomerative clustering of local linear models
//! under a spatial connectivity constraint, absorption of undersized
//! clusters, and a per-cluster logistic refit.
//!
//! Distance between LLMs is the Euclidean norm over their coefficient
//! vectors with the bias appended. Connectivity is a mutualized
//! k-nearest-neighbor graph over region centroids in θ-space: only
//! clusters joined by at least one edge may merge, which keeps merges
//! spatially local even when coefficients happen to be close.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::accuracy;
use crate::model::{sigmoid, TextCnnModel};
use crate::unwrapper::{
    activation_bits, enumerate_regions_from_forwards, forward_dataset, region_stats,
    ActivationPattern, LocalLinearModel, RegionStats,
};

/// Merge hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Cluster-joining cutoff on average-linkage coefficient distance.
    pub distance_threshold: f64,
    /// Clusters smaller than this are absorbed into a nearby large cluster.
    pub min_region_size: usize,
    /// Degree of the k-nearest-neighbor connectivity graph.
    pub neighbor_k: usize,
    /// Gradient-descent iterations for the per-cluster logistic refit.
    pub refit_iterations: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            distance_threshold: 0.5,
            min_region_size: 30,
            neighbor_k: 5,
            refit_iterations: 200,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold >= 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "distance_threshold must be nonnegative, got {}",
                self.distance_threshold
            )));
        }
        if self.neighbor_k < 1 {
            return Err(Error::Config("neighbor_k must be >= 1".into()));
        }
        if self.min_region_size < 1 {
            return Err(Error::Config("min_region_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Euclidean distance between two LLMs' coefficients (bias appended).
pub fn llm_distance(a: &LocalLinearModel, b: &LocalLinearModel) -> f64 {
    debug_assert_eq!(a.w_eff.len(), b.w_eff.len());
    let mut sum = 0.0;
    for (&x, &y) in a.w_eff.iter().zip(&b.w_eff) {
        sum += (x - y) * (x - y);
    }
    sum += (a.b_eff - b.b_eff) * (a.b_eff - b.b_eff);
    sum.sqrt()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean θ over a set of documents.
fn mean_theta(members: &[usize], thetas: &[Vec<f64>]) -> Vec<f64> {
    let h = thetas[0].len();
    let mut c = vec![0.0; h];
    for &i in members {
        for (dst, &t) in c.iter_mut().zip(&thetas[i]) {
            *dst += t;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|x| *x /= n);
    c
}

/// Per-region centroids: mean member θ, in region order.
pub fn region_centroids(regions: &[LocalLinearModel], thetas: &[Vec<f64>]) -> Vec<Vec<f64>> {
    regions
        .iter()
        .map(|r| mean_theta(&r.member_ids, thetas))
        .collect()
}

/// Mutualized k-nearest-neighbor graph over centroids: regions i and j are
/// joined if either is among the other's k nearest. Edges come back as
/// (i, j) pairs with i < j, sorted.
pub fn connectivity_graph(centroids: &[Vec<f64>], neighbor_k: usize) -> Vec<(usize, usize)> {
    let n = centroids.len();
    let mut edges = Vec::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (euclidean(&centroids[i], &centroids[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(neighbor_k) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Average-linkage agglomeration over an explicit distance matrix,
/// restricted to cluster pairs connected by at least one graph edge.
/// Stops when no connected pair has linkage ≤ `threshold`. Returns
/// clusters of region indices, each sorted, ordered by smallest member.
pub fn agglomerative_merge_with_distances(
    dist: &Matrix,
    edges: &[(usize, usize)],
    threshold: f64,
) -> Vec<Vec<usize>> {
    let n = dist.rows();
    debug_assert_eq!(n, dist.cols());
    let mut adjacent = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adjacent[a][b] = true;
        adjacent[b][a] = true;
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    loop {
        // The candidate pair with minimal average linkage; ties resolved by
        // the smallest (min-id, max-id) pair of cluster representatives.
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let connected = clusters[i]
                    .iter()
                    .any(|&a| clusters[j].iter().any(|&b| adjacent[a][b]));
                if !connected {
                    continue;
                }
                let mut sum = 0.0;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        sum += dist.get(a, b);
                    }
                }
                let linkage = sum / (clusters[i].len() * clusters[j].len()) as f64;
                let ra = clusters[i][0];
                let rb = clusters[j][0];
                let key = (ra.min(rb), ra.max(rb));
                let better = match &best {
                    None => true,
                    Some((l, k, _, _)) => linkage < *l || (linkage == *l && key < *k),
                };
                if better {
                    best = Some((linkage, key, i, j));
                }
            }
        }
        match best {
            Some((linkage, _, i, j)) if linkage <= threshold => {
                let absorbed = clusters.remove(j);
                clusters[i].extend(absorbed);
                clusters[i].sort_unstable();
            }
            _ => break,
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Average-linkage agglomeration using [`llm_distance`] between regions.
pub fn agglomerative_merge(
    regions: &[LocalLinearModel],
    edges: &[(usize, usize)],
    threshold: f64,
) -> Vec<Vec<usize>> {
    let n = regions.len();
    let mut dist = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = llm_distance(&regions[i], &regions[j]);
            dist.set(i, j, d);
            dist.set(j, i, d);
        }
    }
    agglomerative_merge_with_distances(&dist, edges, threshold)
}

fn cluster_count(cluster: &[usize], regions: &[LocalLinearModel]) -> usize {
    cluster.iter().map(|&r| regions[r].member_ids.len()).sum()
}

fn cluster_members(cluster: &[usize], regions: &[LocalLinearModel]) -> Vec<usize> {
    let mut members: Vec<usize> = cluster
        .iter()
        .flat_map(|&r| regions[r].member_ids.iter().copied())
        .collect();
    members.sort_unstable();
    members
}

/// Repeatedly absorb the smallest cluster below `min_region_size` into the
/// large cluster with the nearest member-centroid, until every cluster is
/// large enough or only one remains. If no large cluster exists yet, small
/// clusters merge among themselves.
pub fn absorb_small_regions(
    mut clusters: Vec<Vec<usize>>,
    regions: &[LocalLinearModel],
    thetas: &[Vec<f64>],
    min_region_size: usize,
) -> Vec<Vec<usize>> {
    loop {
        if clusters.len() <= 1 {
            break;
        }
        let counts: Vec<usize> = clusters.iter().map(|c| cluster_count(c, regions)).collect();
        let victim = match (0..clusters.len())
            .filter(|&i| counts[i] < min_region_size)
            .min_by_key(|&i| (counts[i], clusters[i][0]))
        {
            Some(v) => v,
            None => break,
        };
        let victim_centroid = mean_theta(&cluster_members(&clusters[victim], regions), thetas);
        let mut candidates: Vec<usize> = (0..clusters.len())
            .filter(|&i| i != victim && counts[i] >= min_region_size)
            .collect();
        if candidates.is_empty() {
            candidates = (0..clusters.len()).filter(|&i| i != victim).collect();
        }
        let target = candidates
            .into_iter()
            .map(|i| {
                let c = mean_theta(&cluster_members(&clusters[i], regions), thetas);
                (euclidean(&victim_centroid, &c), clusters[i][0], i)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, _, i)| i)
            .expect("at least one candidate cluster");
        let absorbed = clusters.remove(victim);
        let target = if target > victim { target - 1 } else { target };
        clusters[target].extend(absorbed);
        clusters[target].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// One simplified region: merged members with refit linear coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergedRegion {
    /// 0-based indices into the original region list.
    pub source_region_ids: Vec<usize>,
    pub member_ids: Vec<usize>,
    pub refit_w: Vec<f64>,
    pub refit_b: f64,
    /// True when the cluster was single-class and the refit was skipped
    /// (weighted-mean coefficients kept).
    pub refit_skipped: bool,
    pub stats: RegionStats,
}

/// The simplified classifier: merged regions plus the routing needed to
/// score unseen documents (pattern map with nearest-centroid fallback).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergedModel {
    pub regions: Vec<MergedRegion>,
    /// Observed activation pattern → index into `regions`.
    pub patterns: Vec<(ActivationPattern, usize)>,
    /// Per-merged-region centroid in θ-space, for fallback routing.
    pub centroids: Vec<Vec<f64>>,
}

fn logistic_loss(w: &[f64], b: f64, members: &[usize], thetas: &[Vec<f64>], labels: &[u8]) -> f64 {
    let mut loss = 0.0;
    for &i in members {
        let eta = crate::linalg::dot(w, &thetas[i]) + b;
        let y = labels[i] as f64;
        loss += eta.max(0.0) - eta * y + (-eta.abs()).exp().ln_1p();
    }
    loss / members.len() as f64
}

fn logistic_gradient(
    w: &[f64],
    b: f64,
    members: &[usize],
    thetas: &[Vec<f64>],
    labels: &[u8],
) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    let n = members.len() as f64;
    for &i in members {
        let eta = crate::linalg::dot(w, &thetas[i]) + b;
        let d = (sigmoid(eta) - labels[i] as f64) / n;
        for (g, &t) in gw.iter_mut().zip(&thetas[i]) {
            *g += d * t;
        }
        gb += d;
    }
    (gw, gb)
}

/// Full-batch gradient descent with a halving line search, so the loss
/// decreases strictly on every accepted step.
fn refit_logistic(
    init_w: &[f64],
    init_b: f64,
    members: &[usize],
    thetas: &[Vec<f64>],
    labels: &[u8],
    iterations: usize,
) -> (Vec<f64>, f64) {
    let mut w = init_w.to_vec();
    let mut b = init_b;
    let mut loss = logistic_loss(&w, b, members, thetas, labels);
    for _ in 0..iterations {
        let (gw, gb) = logistic_gradient(&w, b, members, thetas, labels);
        let grad_norm = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if grad_norm == 0.0 {
            break;
        }
        let mut step = 1.0;
        loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(&x, &g)| x - step * g).collect();
            let cand_b = b - step * gb;
            let cand_loss = logistic_loss(&cand_w, cand_b, members, thetas, labels);
            if cand_loss < loss {
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return (w, b);
            }
        }
    }
    (w, b)
}

/// Refit each cluster's linear model on its member samples. Initialization
/// is the member-count-weighted mean of the source LLM coefficients;
/// single-class clusters keep that initialization and set `refit_skipped`.
pub fn refit_regions(
    clusters: &[Vec<usize>],
    regions: &[LocalLinearModel],
    thetas: &[Vec<f64>],
    labels: &[u8],
    refit_iterations: usize,
) -> Result<Vec<MergedRegion>> {
    let h = regions
        .first()
        .map(|r| r.w_eff.len())
        .ok_or(Error::Empty("no regions to refit"))?;
    let mut merged = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        let members = cluster_members(cluster, regions);
        let total = members.len() as f64;
        let mut w = vec![0.0; h];
        let mut b = 0.0;
        for &r in cluster {
            let weight = regions[r].member_ids.len() as f64 / total;
            for (dst, &x) in w.iter_mut().zip(&regions[r].w_eff) {
                *dst += weight * x;
            }
            b += weight * regions[r].b_eff;
        }

        let single_class = members
            .windows(2)
            .all(|pair| labels[pair[0]] == labels[pair[1]]);
        let (refit_w, refit_b, refit_skipped) = if single_class {
            (w, b, true)
        } else {
            let (rw, rb) = refit_logistic(&w, b, &members, thetas, labels, refit_iterations);
            (rw, rb, false)
        };

        let llm = LocalLinearModel {
            pattern: Vec::new(),
            w_eff: refit_w.clone(),
            b_eff: refit_b,
            member_ids: members.clone(),
        };
        let stats = region_stats(&llm, thetas, labels)?;
        merged.push(MergedRegion {
            source_region_ids: cluster.clone(),
            member_ids: members,
            refit_w,
            refit_b,
            refit_skipped,
            stats,
        });
    }
    Ok(merged)
}

impl MergedModel {
    /// Index of the merged region that handles the given activation
    /// pattern, falling back to the region with the nearest centroid.
    pub fn route(&self, pattern: &[bool], theta: &[f64]) -> usize {
        if let Some((_, cluster)) = self.patterns.iter().find(|(p, _)| p == pattern) {
            return *cluster;
        }
        self.centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (euclidean(theta, c), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i)
            .expect("merged model has at least one region")
    }

    /// Sigmoid score of one θ/pattern pair under the merged model.
    pub fn predict_theta(&self, pattern: &[bool], theta: &[f64]) -> f64 {
        let region = &self.regions[self.route(pattern, theta)];
        sigmoid(crate::linalg::dot(&region.refit_w, theta) + region.refit_b)
    }

    /// Sigmoid score of one document under the merged model.
    pub fn predict(&self, model: &TextCnnModel, ids: &[u32]) -> Result<f64> {
        let f = model.forward(ids)?;
        Ok(self.predict_theta(&activation_bits(&f.hidden_pre), &f.pooled.theta))
    }

    /// Scores for a whole dataset, in document order.
    pub fn scores(&self, model: &TextCnnModel, ds: &Dataset) -> Result<Vec<f64>> {
        let forwards = forward_dataset(model, ds)?;
        Ok(forwards
            .iter()
            .map(|f| self.predict_theta(&activation_bits(&f.hidden_pre), &f.pooled.theta))
            .collect())
    }
}

/// Run the whole simplification pipeline on one dataset: enumerate
/// regions, build the connectivity graph, agglomerate, absorb undersized
/// clusters, and refit. Merged regions come back ordered by descending
/// member count (ties → smallest source region id).
pub fn merge_regions(model: &TextCnnModel, ds: &Dataset, cfg: &MergeConfig) -> Result<MergedModel> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty("merge dataset is empty"));
    }
    let forwards = forward_dataset(model, ds)?;
    let thetas: Vec<Vec<f64>> = forwards.iter().map(|f| f.pooled.theta.clone()).collect();
    let labels = ds.labels();
    let regions = enumerate_regions_from_forwards(model, &forwards);

    let centroids = region_centroids(&regions, &thetas);
    let edges = connectivity_graph(&centroids, cfg.neighbor_k);
    let clusters = agglomerative_merge(&regions, &edges, cfg.distance_threshold);
    let mut clusters = absorb_small_regions(clusters, &regions, &thetas, cfg.min_region_size);
    clusters.sort_by_key(|c| (std::cmp::Reverse(cluster_count(c, &regions)), c[0]));
    let merged = refit_regions(&clusters, &regions, &thetas, &labels, cfg.refit_iterations)?;

    let mut patterns = Vec::with_capacity(regions.len());
    for (cluster_idx, region) in merged.iter().enumerate() {
        for &r in &region.source_region_ids {
            patterns.push((regions[r].pattern.clone(), cluster_idx));
        }
    }
    patterns.sort();
    let centroids = merged
        .iter()
        .map(|r| mean_theta(&r.member_ids, &thetas))
        .collect();
    Ok(MergedModel {
        regions: merged,
        patterns,
        centroids,
    })
}

/// Pick the distance threshold from a grid by validation accuracy of the
/// merged model (regions built on `fit_ds`, accuracy on `val_ds`); ties go
/// to the larger threshold (simpler model).
pub fn select_distance_threshold(
    model: &TextCnnModel,
    fit_ds: &Dataset,
    val_ds: &Dataset,
    grid: &[f64],
    cfg: &MergeConfig,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("distance threshold grid is empty"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &threshold in grid {
        let cell_cfg = MergeConfig {
            distance_threshold: threshold,
            ..cfg.clone()
        };
        let mm = merge_regions(model, fit_ds, &cell_cfg)?;
        let scores = mm.scores(model, val_ds)?;
        let acc = accuracy(&scores, &val_ds.labels(), 0.5)?;
        let better = match best {
            None => true,
            Some((best_acc, best_t)) => acc > best_acc || (acc == best_acc && threshold > best_t),
        };
        if better {
            best = Some((acc, threshold));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// Render the merge report CSV: one row per merged region (1-based ids;
/// source region ids are the 1-based ids of the unwrapped region table).
pub fn merge_report_csv(merged: &MergedModel) -> String {
    let mut out = String::from(
        "cluster_id,source_region_ids,count,local_accuracy,local_auc,global_accuracy,global_auc,refit_skipped\n",
    );
    for (idx, region) in merged.regions.iter().enumerate() {
        let sources = region
            .source_region_ids
            .iter()
            .map(|r| (r + 1).to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{:.6},{},{:.6},{},{}\n",
            idx + 1,
            sources,
            region.stats.count,
            region.stats.local_accuracy,
            crate::metrics::format_metric(region.stats.local_auc),
            region.stats.global_accuracy,
            crate::metrics::format_metric(region.stats.global_auc),
            region.refit_skipped,
        ));
    }
    out
}

/// Write the merged model as a JSON artifact (17-significant-digit reals).
pub fn save_merged(path: &std::path::Path, merged: &MergedModel) -> Result<()> {
    crate::checkpoint::save_json_precise(path, merged)
}

/// Load a merged-model artifact.
pub fn load_merged(path: &std::path::Path) -> Result<MergedModel> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let merged: MergedModel = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if merged.regions.is_empty() {
        return Err(Error::Checkpoint("merged model has no regions".into()));
    }
    if merged.centroids.len() != merged.regions.len() {
        return Err(Error::Checkpoint(
            "merged model centroid count does not match regions".into(),
        ));
    }
    for (_, cluster) in &merged.patterns {
        if *cluster >= merged.regions.len() {
            return Err(Error::Checkpoint(format!(
                "pattern routes to missing region {cluster}"
            )));
        }
    }
    Ok(merged)
}
