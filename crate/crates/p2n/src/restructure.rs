//! Reads a recovered partition back against the declared design: how
//! complete each recovered node is, which entities look misplaced, and how
//! well the partition agrees with the declared module structure.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::hac::ClusterAssignment;
use crate::model::{EntityStatus, Node, NodePartition, SoftwareGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RestructureError {
    #[error("assignment covers {labels} entities but the graph has {entities}")]
    SizeMismatch { labels: usize, entities: usize },
    #[error("assignments must cover the same entities: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("agreement needs at least 2 entities, got {0}")]
    TooFewEntities(usize),
    #[error("node {0} has no members")]
    EmptyNode(usize),
    #[error("node member `{0}` is not in the graph")]
    UnknownMember(String),
    #[error("unknown quality `{0}`")]
    UnknownQuality(String),
}

/// Materializes an assignment into nodes with member entity ids.
pub fn partition_to_nodes(
    assignment: &ClusterAssignment,
    graph: &SoftwareGraph,
) -> Result<NodePartition, RestructureError> {
    if assignment.labels.len() != graph.entity_count() {
        return Err(RestructureError::SizeMismatch {
            labels: assignment.labels.len(),
            entities: graph.entity_count(),
        });
    }
    let mut nodes: Vec<Node> = (0..assignment.k)
        .map(|node_id| Node {
            node_id,
            members: Vec::new(),
        })
        .collect();
    for (i, &label) in assignment.labels.iter().enumerate() {
        nodes[label].members.push(graph.entity(i).id.clone());
    }
    debug_assert!(nodes.iter().all(|n| !n.members.is_empty()));
    Ok(NodePartition { nodes })
}

/// Fraction of a node's members whose status is `tested`.
pub fn saturation(node: &Node, graph: &SoftwareGraph) -> Result<f64, RestructureError> {
    if node.members.is_empty() {
        return Err(RestructureError::EmptyNode(node.node_id));
    }
    let mut tested = 0usize;
    for id in &node.members {
        let i = graph
            .entity_index(id)
            .ok_or_else(|| RestructureError::UnknownMember(id.clone()))?;
        if graph.entity(i).status == EntityStatus::Tested {
            tested += 1;
        }
    }
    Ok(tested as f64 / node.members.len() as f64)
}

/// A proposal to move one entity into the module where most of its cluster
/// mates already live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MoveSuggestion {
    pub entity_id: String,
    pub from_module: String,
    pub to_module: String,
}

/// Suggests moves toward each cluster's strict-majority declared module.
///
/// A module qualifies only when more than half of the cluster's members
/// declare it; clusters without such a module (including ties) suggest
/// nothing. Suggestions are ordered by cluster, then by entity index.
pub fn suggest_moves(
    graph: &SoftwareGraph,
    assignment: &ClusterAssignment,
) -> Result<Vec<MoveSuggestion>, RestructureError> {
    if assignment.labels.len() != graph.entity_count() {
        return Err(RestructureError::SizeMismatch {
            labels: assignment.labels.len(),
            entities: graph.entity_count(),
        });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.k];
    for (i, &label) in assignment.labels.iter().enumerate() {
        members[label].push(i);
    }

    let mut out = Vec::new();
    for cluster in &members {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for &i in cluster {
            *counts.entry(graph.entity(i).declared_module.as_str()).or_insert(0) += 1;
        }
        let majority = counts
            .iter()
            .find(|(_, &count)| 2 * count > cluster.len())
            .map(|(module, _)| module.to_string());
        let Some(majority) = majority else { continue };
        for &i in cluster {
            let e = graph.entity(i);
            if e.declared_module != majority {
                out.push(MoveSuggestion {
                    entity_id: e.id.clone(),
                    from_module: e.declared_module.clone(),
                    to_module: majority.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Partition induced by the declared modules, labeled in entity order.
pub fn declared_partition(graph: &SoftwareGraph) -> ClusterAssignment {
    let mut label_of: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(graph.entity_count());
    for e in graph.entities() {
        let next = label_of.len();
        labels.push(*label_of.entry(e.declared_module.as_str()).or_insert(next));
    }
    ClusterAssignment {
        k: label_of.len(),
        labels,
    }
}

/// Rand index between two assignments over the same entities: the fraction
/// of entity pairs on which the partitions agree (both together or both
/// apart). 1.0 means identical grouping.
pub fn agreement(
    a: &ClusterAssignment,
    b: &ClusterAssignment,
) -> Result<f64, RestructureError> {
    if a.labels.len() != b.labels.len() {
        return Err(RestructureError::LengthMismatch {
            left: a.labels.len(),
            right: b.labels.len(),
        });
    }
    let n = a.labels.len();
    if n < 2 {
        return Err(RestructureError::TooFewEntities(n));
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let together_a = a.labels[i] == a.labels[j];
            let together_b = b.labels[i] == b.labels[j];
            if together_a == together_b {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum MaintenanceCategory {
    Corrective,
    Adaptability,
    Perfection,
}

impl fmt::Display for MaintenanceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaintenanceCategory::Corrective => "corrective",
            MaintenanceCategory::Adaptability => "adaptability",
            MaintenanceCategory::Perfection => "perfection",
        })
    }
}

/// The seven tracked quality factors and the maintenance categories each
/// one drives. The table is fixed: nine marks in total.
pub const MAINTENANCE_TABLE: [(&str, &[MaintenanceCategory]); 7] = [
    ("intelligibility", &[MaintenanceCategory::Corrective]),
    ("testability", &[MaintenanceCategory::Corrective]),
    (
        "modifiability",
        &[MaintenanceCategory::Corrective, MaintenanceCategory::Adaptability],
    ),
    ("reliability", &[MaintenanceCategory::Corrective]),
    ("portability", &[MaintenanceCategory::Adaptability]),
    (
        "usability",
        &[MaintenanceCategory::Adaptability, MaintenanceCategory::Perfection],
    ),
    ("efficiency", &[MaintenanceCategory::Perfection]),
];

/// Maintenance categories affected by a quality factor.
pub fn classify_maintenance(
    quality: &str,
) -> Result<&'static [MaintenanceCategory], RestructureError> {
    MAINTENANCE_TABLE
        .iter()
        .find(|(name, _)| *name == quality)
        .map(|(_, categories)| *categories)
        .ok_or_else(|| RestructureError::UnknownQuality(quality.to_string()))
}

/// Per-node progress of one recovered partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeProgress {
    pub node_id: usize,
    pub member_count: usize,
    pub planned: usize,
    pub coded: usize,
    pub tested: usize,
    pub saturation: f64,
}

/// Development progress over a whole partition, ordered by node id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressReport {
    pub nodes: Vec<NodeProgress>,
    pub total_members: usize,
    pub total_planned: usize,
    pub total_coded: usize,
    pub total_tested: usize,
    /// Tested fraction over all entities; independent of the partition.
    pub total_saturation: f64,
}

pub fn progress_report(
    graph: &SoftwareGraph,
    partition: &NodePartition,
) -> Result<ProgressReport, RestructureError> {
    let mut nodes = Vec::with_capacity(partition.nodes.len());
    let mut totals = (0usize, 0usize, 0usize);
    for node in &partition.nodes {
        if node.members.is_empty() {
            return Err(RestructureError::EmptyNode(node.node_id));
        }
        let mut counts = (0usize, 0usize, 0usize);
        for id in &node.members {
            let i = graph
                .entity_index(id)
                .ok_or_else(|| RestructureError::UnknownMember(id.clone()))?;
            match graph.entity(i).status {
                EntityStatus::Planned => counts.0 += 1,
                EntityStatus::Coded => counts.1 += 1,
                EntityStatus::Tested => counts.2 += 1,
            }
        }
        totals.0 += counts.0;
        totals.1 += counts.1;
        totals.2 += counts.2;
        nodes.push(NodeProgress {
            node_id: node.node_id,
            member_count: node.members.len(),
            planned: counts.0,
            coded: counts.1,
            tested: counts.2,
            saturation: counts.2 as f64 / node.members.len() as f64,
        });
    }
    nodes.sort_by_key(|n| n.node_id);
    let total_members = totals.0 + totals.1 + totals.2;
    Ok(ProgressReport {
        nodes,
        total_members,
        total_planned: totals.0,
        total_coded: totals.1,
        total_tested: totals.2,
        total_saturation: totals.2 as f64 / total_members as f64,
    })
}

impl fmt::Display for ProgressReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>7} {:>8} {:>6} {:>7}  saturation",
            "node", "members", "planned", "coded", "tested"
        )?;
        for n in &self.nodes {
            writeln!(
                f,
                "{:<8} {:>7} {:>8} {:>6} {:>7}  {:?}",
                n.node_id, n.member_count, n.planned, n.coded, n.tested, n.saturation
            )?;
        }
        writeln!(
            f,
            "{:<8} {:>7} {:>8} {:>6} {:>7}  {:?}",
            "total",
            self.total_members,
            self.total_planned,
            self.total_coded,
            self.total_tested,
            self.total_saturation
        )
    }
}
