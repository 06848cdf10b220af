//! Brute-force reference implementations shared by the integration tests.
//! Each recomputes its answer from first principles rather than reusing the
//! library's internals.

#![allow(dead_code)]

use tubelet_core::clustering::{FeaturePoint, Linkage};
use tubelet_core::geometry::Cuboid;
use tubelet_core::ingest::GroundTruthAction;
use tubelet_core::nms::{NmsParams, ScoredDetection};
use tubelet_core::scoring::MatchParams;

/// Volume IoU by counting voxel centres. Space is sampled on a grid of
/// `1 / res` units; each frame is one slab.
pub fn voxel_iou(a: &Cuboid, b: &Cuboid, res: usize) -> f64 {
    let step = 1.0 / res as f64;
    let x0 = a.x_min().min(b.x_min());
    let x1 = a.x_max().max(b.x_max());
    let y0 = a.y_min().min(b.y_min());
    let y1 = a.y_max().max(b.y_max());
    let inside = |c: &Cuboid, x: f64, y: f64| c.x_min() <= x && x < c.x_max() && c.y_min() <= y && y < c.y_max();
    let mut area_a = 0usize;
    let mut area_b = 0usize;
    let mut area_ab = 0usize;
    let nx = ((x1 - x0) / step).ceil() as usize;
    let ny = ((y1 - y0) / step).ceil() as usize;
    for ix in 0..nx {
        let x = x0 + (ix as f64 + 0.5) * step;
        for iy in 0..ny {
            let y = y0 + (iy as f64 + 0.5) * step;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            area_a += ia as usize;
            area_b += ib as usize;
            area_ab += (ia && ib) as usize;
        }
    }
    let (mut va, mut vb, mut vab) = (0usize, 0usize, 0usize);
    for f in a.f_start().min(b.f_start())..=a.f_end().max(b.f_end()) {
        let (fa, fb) = (a.f_start() <= f && f <= a.f_end(), b.f_start() <= f && f <= b.f_end());
        if fa {
            va += area_a;
        }
        if fb {
            vb += area_b;
        }
        if fa && fb {
            vab += area_ab;
        }
    }
    let union = va + vb - vab;
    if union == 0 {
        0.0
    } else {
        vab as f64 / union as f64
    }
}

/// Cluster distance straight from the linkage definitions.
fn cluster_distance(points: &[[f64; 3]], a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let d = |i: usize, j: usize| {
        let (p, q) = (points[i], points[j]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let pairs = || a.iter().flat_map(move |&i| b.iter().map(move |&j| d(i, j)));
    match linkage {
        Linkage::Single => pairs().fold(f64::INFINITY, f64::min),
        Linkage::Complete => pairs().fold(0.0, f64::max),
        Linkage::Average => pairs().sum::<f64>() / (a.len() * b.len()) as f64,
        Linkage::Ward => {
            let centroid = |c: &[usize]| {
                let mut m = [0.0; 3];
                for &i in c {
                    for k in 0..3 {
                        m[k] += points[i][k] / c.len() as f64;
                    }
                }
                m
            };
            let (ca, cb) = (centroid(a), centroid(b));
            let gap = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2) + (ca[2] - cb[2]).powi(2)).sqrt();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt() * gap
        }
    }
}

/// Naive agglomeration: at each step recompute every cluster distance and
/// merge the closest pair. Returns the merge heights and the partition left
/// after every step (clusters sorted by smallest member).
pub fn naive_agglomerate(points: &[FeaturePoint], linkage: Linkage, beta: f64) -> (Vec<f64>, Vec<Vec<Vec<usize>>>) {
    let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, beta * p.f as f64]).collect();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut heights = Vec::new();
    let mut partitions = vec![clusters.clone()];
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = cluster_distance(&coords, &clusters[i], &clusters[j], linkage);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (d, i, j) = best;
        let moved = clusters.remove(j);
        clusters[i].extend(moved);
        clusters[i].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
        heights.push(d);
        partitions.push(clusters.clone());
    }
    (heights, partitions)
}

fn ranks_above(a: &ScoredDetection, b: &ScoredDetection) -> bool {
    a.confidence > b.confidence || (a.confidence == b.confidence && a.proposal_id < b.proposal_id)
}

/// Greedy NMS characterized as a fixed point and found by exhaustive search:
/// the kept set is the subset `S` in which every detection is kept exactly
/// when no higher-ranked member of `S` of the same video and class overlaps
/// it. Returns kept indices, ascending.
pub fn brute_nms(dets: &[ScoredDetection], params: &NmsParams) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 16);
    let conflicts = |i: usize, j: usize| {
        dets[i].video_id == dets[j].video_id
            && dets[i].action_class == dets[j].action_class
            && params.overlaps(&dets[i].cuboid, &dets[j].cuboid)
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..n).any(|j| j != i && member(j) && ranks_above(&dets[j], &dets[i]) && conflicts(i, j));
            member(i) != suppressed
        });
        if consistent {
            found.push((0..n).filter(|&i| member(i)).collect::<Vec<_>>());
        }
    }
    assert_eq!(found.len(), 1, "greedy suppression has a unique fixed point");
    found.pop().unwrap()
}

/// Best one-to-one matching by enumerating every partial assignment:
/// maximum number of congruent pairs, then maximum temporal-IoU sum.
pub fn brute_match(dets: &[&ScoredDetection], gts: &[&GroundTruthAction], params: &MatchParams) -> (usize, f64) {
    fn go(
        d: usize,
        iou: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        count: usize,
        sum: f64,
        best: &mut (usize, f64),
    ) {
        if d == iou.len() {
            if count > best.0 || (count == best.0 && sum > best.1) {
                *best = (count, sum);
            }
            return;
        }
        go(d + 1, iou, used, count, sum, best);
        for g in 0..used.len() {
            if let (false, Some(t)) = (used[g], iou[d][g]) {
                used[g] = true;
                go(d + 1, iou, used, count + 1, sum + t, best);
                used[g] = false;
            }
        }
    }
    let iou: Vec<Vec<Option<f64>>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| params.congruence(d, g)).collect())
        .collect();
    let mut best = (0, 0.0);
    go(0, &iou, &mut vec![false; gts.len()], 0, 0.0, &mut best);
    best
}
