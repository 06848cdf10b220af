//! Spatio-temporal clustering of per-frame detections.
//!
//! Each detection becomes a point `(x, y, β·f)` where `(x, y)` is the box
//! centre and `f` the frame index. Points are merged bottom-up into a full
//! linkage tree, the tree is cut into `k` clusters with `k` proportional to
//! the video length, and each cluster becomes one proposal whose cuboid is
//! the envelope of its member boxes.
//!
//! The linkage is built with the primitive agglomerative rule: at every step
//! the closest pair of active clusters is merged, and cluster distances are
//! updated with the Lance-Williams recurrence. Each active cluster is stored
//! in the slot of its lowest leaf index, and the pair to merge is the
//! lexicographic minimum of `(distance, low slot, high slot)`. Ties are
//! therefore broken toward the lowest leaf indices and the output is fully
//! deterministic. Nearest neighbours are cached per slot, so a typical run
//! costs `O(n²)` time and the condensed distance matrix needs `O(n²)` memory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_cuboid, Cuboid};
use crate::ingest::{Detection, VideoMeta};
use crate::proposal::{Proposal, Provenance};

/// Cluster-distance update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Single,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub linkage: Linkage,
    /// Multiplier applied to the frame coordinate before distances are taken.
    pub temporal_scale: f64,
    /// Clusters per frame of video.
    pub k_ratio: f64,
    /// Clusters with fewer detections than this emit no proposal.
    pub min_cluster_size: usize,
    /// Cluster each object class on its own instead of jointly.
    pub per_class: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            linkage: Linkage::Ward,
            temporal_scale: 1.0,
            k_ratio: 0.028,
            min_cluster_size: 2,
            per_class: false,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temporal_scale.is_finite() && self.temporal_scale > 0.0) {
            return Err(Error::config("cluster.temporal_scale must be positive"));
        }
        if !(self.k_ratio.is_finite() && self.k_ratio > 0.0) {
            return Err(Error::config("cluster.k_ratio must be positive"));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::config("cluster.min_cluster_size must be at least 1"));
        }
        Ok(())
    }

    /// `k = max(1, ⌈ρ · num_frames⌉)`.
    pub fn num_clusters(&self, num_frames: i64) -> usize {
        ((self.k_ratio * num_frames as f64).ceil() as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeaturePoint {
    pub x: f64,
    pub y: f64,
    pub f: i64,
    /// Index of the source detection in the video's detection list.
    pub detection_ref: usize,
}

impl FeaturePoint {
    pub fn from_detection(det: &Detection, detection_ref: usize) -> Self {
        let (x, y) = det.bbox.center();
        FeaturePoint {
            x,
            y,
            f: det.frame,
            detection_ref,
        }
    }
}

/// One agglomeration step. Node ids follow the SciPy convention: leaves are
/// `0..n` and the cluster created by step `s` is `n + s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkageTree {
    num_points: usize,
    merges: Vec<Merge>,
}

impl LinkageTree {
    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

/// Point-index partition; clusters are ordered by their smallest member and
/// members are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub clusters: Vec<Vec<usize>>,
}

struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.n * a - a * (a + 1) / 2 + (b - a - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

fn lance_williams(
    linkage: Linkage,
    d_ki: f64,
    d_kj: f64,
    d_ij: f64,
    n_k: usize,
    n_i: usize,
    n_j: usize,
) -> f64 {
    match linkage {
        Linkage::Single => d_ki.min(d_kj),
        Linkage::Complete => d_ki.max(d_kj),
        Linkage::Average => (n_i as f64 * d_ki + n_j as f64 * d_kj) / (n_i + n_j) as f64,
        Linkage::Ward => {
            let (nk, ni, nj) = (n_k as f64, n_i as f64, n_j as f64);
            let sq = ((nk + ni) * d_ki * d_ki + (nk + nj) * d_kj * d_kj - nk * d_ij * d_ij) / (nk + ni + nj);
            sq.max(0.0).sqrt()
        }
    }
}

/// Builds the full merge tree over `points` with Euclidean distance on
/// `(x, y, temporal_scale · f)`.
pub fn build_linkage(points: &[FeaturePoint], params: &ClusterParams) -> Result<LinkageTree> {
    let n = points.len();
    if n == 0 {
        return Err(Error::validation("cannot build a linkage tree over zero points"));
    }
    let beta = params.temporal_scale;
    let mut dist = Condensed {
        n,
        data: Vec::with_capacity(n * (n - 1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i].x - points[j].x;
            let dy = points[i].y - points[j].y;
            let df = beta * (points[i].f - points[j].f) as f64;
            dist.data.push((dx * dx + dy * dy + df * df).sqrt());
        }
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let rescan = |k: usize, active: &[bool], dist: &Condensed, nn: &mut [usize], nn_dist: &mut [f64]| {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for m in k + 1..n {
            if active[m] {
                let d = dist.get(k, m);
                if best == usize::MAX || d < best_d {
                    best = m;
                    best_d = d;
                }
            }
        }
        nn[k] = best;
        nn_dist[k] = best_d;
    };

    for k in 0..n {
        rescan(k, &active, &dist, &mut nn, &mut nn_dist);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut i = usize::MAX;
        for k in 0..n {
            if active[k] && nn[k] != usize::MAX && (i == usize::MAX || nn_dist[k] < nn_dist[i]) {
                i = k;
            }
        }
        let j = nn[i];
        let d_ij = nn_dist[i];
        merges.push(Merge {
            left: node[i].min(node[j]),
            right: node[i].max(node[j]),
            distance: d_ij,
            size: size[i] + size[j],
        });

        for k in 0..n {
            if active[k] && k != i && k != j {
                let d = lance_williams(
                    params.linkage,
                    dist.get(k, i),
                    dist.get(k, j),
                    d_ij,
                    size[k],
                    size[i],
                    size[j],
                );
                dist.set(k, i, d);
            }
        }
        active[j] = false;
        size[i] += size[j];
        node[i] = n + step;

        for k in 0..j {
            if !active[k] {
                continue;
            }
            if k == i || nn[k] == i || nn[k] == j {
                rescan(k, &active, &dist, &mut nn, &mut nn_dist);
            } else if k < i {
                let d = dist.get(k, i);
                if d < nn_dist[k] || (d == nn_dist[k] && i < nn[k]) {
                    nn[k] = i;
                    nn_dist[k] = d;
                }
            }
        }
    }

    Ok(LinkageTree {
        num_points: n,
        merges,
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cuts the tree into `min(k, n)` clusters by replaying the first `n - k`
/// merges. `k` must be at least 1.
pub fn cut_tree(tree: &LinkageTree, k: usize) -> Result<Partition> {
    if k == 0 {
        return Err(Error::validation("cut_tree needs k >= 1"));
    }
    let n = tree.num_points;
    let k = k.min(n);
    let mut parent: Vec<usize> = (0..n).collect();
    // representative leaf of every node id
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &tree.merges[..n - k] {
        let a = find(&mut parent, rep[m.left]);
        let b = find(&mut parent, rep[m.right]);
        let root = a.min(b);
        parent[a.max(b)] = root;
        rep.push(root);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        groups.entry(root).or_default().push(leaf);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(Partition { clusters })
}

/// One clustering proposal per cluster of at least `min_cluster_size`
/// detections, with ids `{video_id}-c{n:05}` numbered in emission order.
pub fn clusters_to_proposals(
    partition: &Partition,
    detections: &[Detection],
    video: &VideoMeta,
    min_cluster_size: usize,
) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for members in &partition.clusters {
        if members.len() < min_cluster_size {
            continue;
        }
        let boxes = members
            .iter()
            .map(|&m| {
                detections
                    .get(m)
                    .map(|d| &d.bbox)
                    .ok_or_else(|| Error::validation(format!("cluster member {m} has no detection")))
            })
            .collect::<Result<Vec<&Cuboid>>>()?;
        let cuboid = bounding_cuboid(boxes)?;
        out.push(Proposal {
            id: format!("{}-c{:05}", video.video_id, out.len()),
            video_id: video.video_id.clone(),
            parent_id: None,
            provenance: Provenance::Clustering,
            cuboid,
        });
    }
    Ok(out)
}

/// Clusters one video's detections into clustering proposals.
pub fn cluster_video(detections: &[Detection], video: &VideoMeta, params: &ClusterParams) -> Result<Vec<Proposal>> {
    params.validate()?;
    if detections.is_empty() {
        return Ok(Vec::new());
    }
    let k = params.num_clusters(video.num_frames);
    let partition = if params.per_class {
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, d) in detections.iter().enumerate() {
            by_class.entry(d.object_class.as_str()).or_default().push(i);
        }
        let mut clusters = Vec::new();
        for indices in by_class.values() {
            let points: Vec<FeaturePoint> = indices
                .iter()
                .map(|&i| FeaturePoint::from_detection(&detections[i], i))
                .collect();
            let share = ((k * indices.len()) as f64 / detections.len() as f64).ceil() as usize;
            let tree = build_linkage(&points, params)?;
            for c in cut_tree(&tree, share.max(1))?.clusters {
                clusters.push(c.into_iter().map(|local| indices[local]).collect::<Vec<_>>());
            }
        }
        clusters.sort_by_key(|c| c[0]);
        Partition { clusters }
    } else {
        let points: Vec<FeaturePoint> = detections
            .iter()
            .enumerate()
            .map(|(i, d)| FeaturePoint::from_detection(d, i))
            .collect();
        let tree = build_linkage(&points, params)?;
        cut_tree(&tree, k)?
    };
    clusters_to_proposals(&partition, detections, video, params.min_cluster_size)
}
