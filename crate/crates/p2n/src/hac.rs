//! Bottom-up hierarchical clustering over a similarity matrix.
//!
//! Entities start as singleton clusters `0..n`; each of the `n-1` merge
//! steps joins the two most similar clusters and the cluster created at
//! step `t` gets id `n-1+t`. Merging on similarity means taking the maximum
//! instead of the minimum, and each linkage rule rewrites the similarity of
//! the merged pair to every other cluster:
//!
//! * `single`: `max(s_ij, s_ik)`, so one close member is enough.
//! * `complete`: `min(s_ij, s_ik)`, so the whole cluster must be close.
//! * `wavg`: `(s_ij + s_ik) / 2`, the equal-weight mean of the two halves.
//! * `uavg`: `(s_ij*|j| + s_ik*|k|) / (|j|+|k|)`, the size-weighted mean,
//!   which works out to the plain mean over all cross-cluster entity pairs.
//!
//! Equal similarities are broken toward the lexicographically smallest
//! `(left, right)` cluster-id pair, so the merge sequence is a pure
//! function of the input matrix.

use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::metrics::SimilarityMatrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Linkage {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "wavg")]
    WeightedAverage,
    #[serde(rename = "uavg")]
    UnweightedAverage,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [
        Linkage::Single,
        Linkage::Complete,
        Linkage::WeightedAverage,
        Linkage::UnweightedAverage,
    ];
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::WeightedAverage => "wavg",
            Linkage::UnweightedAverage => "uavg",
        })
    }
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "wavg" => Ok(Linkage::WeightedAverage),
            "uavg" => Ok(Linkage::UnweightedAverage),
            other => Err(format!(
                "unknown linkage `{other}` (expected single, complete, wavg, or uavg)"
            )),
        }
    }
}

/// One merge step. `left < right` are the ids of the merged clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge<T> {
    /// 1-based step number; the merge creates cluster `n - 1 + step`.
    pub step: usize,
    pub left: usize,
    pub right: usize,
    /// Similarity at which the pair merged. Non-increasing across steps.
    pub similarity: T,
    /// Member count of the created cluster.
    pub new_size: usize,
}

/// The full merge history of one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram<T> {
    n: usize,
    linkage: Linkage,
    merges: Vec<Merge<T>>,
}

impl<T: Scalar> Dendrogram<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn linkage(&self) -> Linkage {
        self.linkage
    }

    pub fn merges(&self) -> &[Merge<T>] {
        &self.merges
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HacError {
    #[error("clustering needs at least 2 entities, got {0}")]
    TooFewEntities(usize),
    #[error("cut into {k} clusters is impossible for {n} entities")]
    InvalidK { k: usize, n: usize },
    #[error("cut threshold must be a positive finite similarity")]
    InvalidThreshold,
}

/// Similarity of a freshly merged cluster `j ∪ k` to another cluster `i`,
/// given the similarities `s_ij`, `s_ik` and the merged halves' sizes.
pub fn update_similarity<T: Scalar>(
    linkage: Linkage,
    s_ij: T,
    s_ik: T,
    size_j: usize,
    size_k: usize,
) -> T {
    match linkage {
        Linkage::Single => s_ij.max(s_ik),
        Linkage::Complete => s_ij.min(s_ik),
        Linkage::WeightedAverage => (s_ij + s_ik) / T::from_f64(2.0).unwrap(),
        Linkage::UnweightedAverage => {
            let wj = T::from_usize(size_j).unwrap();
            let wk = T::from_usize(size_k).unwrap();
            (s_ij * wj + s_ik * wk) / (wj + wk)
        }
    }
}

/// Runs the full agglomeration and returns the n-1 merges in order.
pub fn cluster<T: Scalar>(
    sim: &SimilarityMatrix<T>,
    linkage: Linkage,
) -> Result<Dendrogram<T>, HacError> {
    let n = sim.n();
    if n < 2 {
        return Err(HacError::TooFewEntities(n));
    }

    // Slot i carries the cluster currently occupying entity i's row of the
    // working matrix; a merge keeps the lower slot and retires the other.
    let mut s = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sim.sim(i, j);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    let mut alive = vec![true; n];
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];

    let mut merges = Vec::with_capacity(n - 1);
    for step in 1..n {
        let mut best: Option<(T, (usize, usize), (usize, usize))> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !alive[j] {
                    continue;
                }
                let v = s[i * n + j];
                let ids = if cluster_id[i] < cluster_id[j] {
                    (cluster_id[i], cluster_id[j])
                } else {
                    (cluster_id[j], cluster_id[i])
                };
                let better = match &best {
                    None => true,
                    Some((bv, bids, _)) => v > *bv || (v == *bv && ids < *bids),
                };
                if better {
                    best = Some((v, ids, (i, j)));
                }
            }
        }
        let (similarity, (left, right), (si, sj)) = best.expect("at least one live pair");

        // Orient the update on (left, right) ids, not slot order, so the
        // arithmetic never depends on which slot survives.
        let (left_slot, right_slot) = if cluster_id[si] == left { (si, sj) } else { (sj, si) };
        let (size_l, size_r) = (size[left_slot], size[right_slot]);
        for k in 0..n {
            if !alive[k] || k == si || k == sj {
                continue;
            }
            let updated = update_similarity(
                linkage,
                s[k * n + left_slot],
                s[k * n + right_slot],
                size_l,
                size_r,
            );
            s[k * n + si] = updated;
            s[si * n + k] = updated;
        }
        alive[sj] = false;
        cluster_id[si] = n - 1 + step;
        size[si] = size_l + size_r;
        merges.push(Merge {
            step,
            left,
            right,
            similarity,
            new_size: size[si],
        });
    }

    Ok(Dendrogram { n, linkage, merges })
}

/// Where to stop undoing merges when flattening a dendrogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutRule<T> {
    /// Keep exactly this many clusters (undo the last `k-1` merges).
    Clusters(usize),
    /// Keep every merge whose similarity is at least this value.
    MinSimilarity(T),
}

/// A flat partition of the entities into `k` clusters. Labels run `0..k`
/// and are assigned in order of each cluster's smallest entity index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

/// Flattens a dendrogram into a partition.
pub fn cut<T: Scalar>(
    dendrogram: &Dendrogram<T>,
    rule: CutRule<T>,
) -> Result<ClusterAssignment, HacError> {
    let n = dendrogram.n;
    let keep = match rule {
        CutRule::Clusters(k) => {
            if k < 1 || k > n {
                return Err(HacError::InvalidK { k, n });
            }
            n - k
        }
        CutRule::MinSimilarity(t) => {
            if !(t > T::zero()) || !t.is_finite() {
                return Err(HacError::InvalidThreshold);
            }
            // Merge similarities are non-increasing, so the kept merges
            // form a prefix.
            dendrogram
                .merges
                .iter()
                .take_while(|m| m.similarity >= t)
                .count()
        }
    };

    let mut parent: Vec<usize> = (0..n + keep).collect();
    for m in &dendrogram.merges[..keep] {
        let created = n - 1 + m.step;
        parent[m.left] = created;
        parent[m.right] = created;
    }

    let mut label_of_root = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let mut x = leaf;
        while parent[x] != x {
            x = parent[x];
        }
        let next = label_of_root.len();
        labels.push(*label_of_root.entry(x).or_insert(next));
    }
    let k = label_of_root.len();
    Ok(ClusterAssignment { labels, k })
}

/// Renders the dendrogram in Newick form, annotating every internal node
/// with its merge similarity: `((a,b):0.9,c):0.2;`.
pub fn to_newick<T: Scalar>(dendrogram: &Dendrogram<T>, leaf_labels: &[String]) -> String {
    let n = dendrogram.n;
    assert_eq!(leaf_labels.len(), n, "one label per leaf");
    // Siblings render smallest-member-first, matching the numbering that
    // cuts use for cluster labels.
    let mut min_member: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges {
        min_member.push(min_member[m.left].min(min_member[m.right]));
    }
    let mut out = String::new();
    render_newick(dendrogram, leaf_labels, &min_member, 2 * n - 2, &mut out);
    out.push(';');
    out
}

fn render_newick<T: Scalar>(
    d: &Dendrogram<T>,
    leaf_labels: &[String],
    min_member: &[usize],
    node: usize,
    out: &mut String,
) {
    if node < d.n {
        out.push_str(&quote_newick(&leaf_labels[node]));
        return;
    }
    let m = &d.merges[node - d.n];
    let (first, second) = if min_member[m.left] <= min_member[m.right] {
        (m.left, m.right)
    } else {
        (m.right, m.left)
    };
    out.push('(');
    render_newick(d, leaf_labels, min_member, first, out);
    out.push(',');
    render_newick(d, leaf_labels, min_member, second, out);
    out.push_str(&format!("):{}", m.similarity));
}

// Newick reserves these; labels containing them are quoted.
fn quote_newick(label: &str) -> String {
    if label.contains(|c| "(),:;'[] \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// Renders the dendrogram as a Graphviz digraph: one node per leaf and per
/// merge (2n-1 total), one edge from each merge to its two children.
pub fn to_dot<T: Scalar>(dendrogram: &Dendrogram<T>, leaf_labels: &[String]) -> String {
    let n = dendrogram.n;
    assert_eq!(leaf_labels.len(), n, "one label per leaf");
    let mut out = String::from("digraph dendrogram {\n");
    for (i, label) in leaf_labels.iter().enumerate() {
        out.push_str(&format!("  n{} [label=\"{}\"];\n", i, escape_dot(label)));
    }
    for m in &dendrogram.merges {
        out.push_str(&format!(
            "  n{} [label=\"step {} sim={}\"];\n",
            n - 1 + m.step,
            m.step,
            m.similarity
        ));
    }
    for m in &dendrogram.merges {
        let id = n - 1 + m.step;
        out.push_str(&format!("  n{id} -> n{};\n", m.left));
        out.push_str(&format!("  n{id} -> n{};\n", m.right));
    }
    out.push_str("}\n");
    out
}

fn escape_dot(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}
