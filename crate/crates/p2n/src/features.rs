//! Turns a software graph into one numeric feature row per entity.
//!
//! Row `i` starts with the symmetric weighted adjacency row of entity `i`
//! (column `j` sums the weights of all relationships between `i` and `j`,
//! whichever direction they point) followed by one column per distinct user
//! attribute name. Distances between such rows are what drives clustering,
//! so the columns must be standardized first; raw adjacency counts and raw
//! attribute scales would otherwise dominate each other arbitrarily.

use crate::facts::UserAttribute;
use crate::model::{RelationKind, SoftwareGraph};
use crate::Scalar;

use std::collections::{BTreeSet, HashMap};

/// Column names of a feature matrix. Adjacency columns are `adj:<entity>`,
/// user attribute columns `attr:<name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    names: Vec<String>,
}

impl AttributeSchema {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dimension(&self) -> usize {
        self.names.len()
    }
}

/// Dense per-entity feature rows with their column schema.
///
/// Row order matches the entity order of the originating graph. The
/// `standardized` flag records whether columns have been z-scored; the
/// metric stage refuses matrices that have not been.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    schema: AttributeSchema,
    rows: Vec<Vec<T>>,
    standardized: bool,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps rows that are already standardized, inventing column names.
    /// Used on the worker side of the wire protocol, where only the numbers
    /// travel.
    pub fn from_standardized_rows(rows: Vec<Vec<T>>) -> FeatureMatrix<T> {
        let dim = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|r| r.len() == dim));
        FeatureMatrix {
            schema: AttributeSchema {
                names: (0..dim).map(|i| format!("f{i}")).collect(),
            },
            rows,
            standardized: true,
        }
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dimension(&self) -> usize {
        self.schema.dimension()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }
}

/// Per-relationship-kind multipliers applied on top of each edge's own
/// weight. `Default` weights every kind equally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationWeights<T> {
    pub part: T,
    pub subclass: T,
    pub reference: T,
}

impl<T: Scalar> Default for RelationWeights<T> {
    fn default() -> Self {
        RelationWeights {
            part: T::one(),
            subclass: T::one(),
            reference: T::one(),
        }
    }
}

impl<T: Scalar> RelationWeights<T> {
    fn for_kind(&self, kind: RelationKind) -> T {
        match kind {
            RelationKind::Part => self.part,
            RelationKind::Subclass => self.subclass,
            RelationKind::Ref => self.reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("no informative attributes: every feature column is constant")]
    NoInformativeAttributes,
    #[error("feature matrix is already standardized")]
    AlreadyStandardized,
}

/// Builds the raw (unstandardized) feature matrix for a validated graph.
///
/// The adjacency block is symmetric with a zero diagonal; `ref` self-loops
/// contribute nothing. Attribute columns appear in name order, with 0 where
/// an entity has no value. Output depends only on `(graph, weights,
/// attributes)`.
pub fn extract_structural_features<T: Scalar>(
    graph: &SoftwareGraph,
    weights: &RelationWeights<T>,
    attributes: &[UserAttribute],
) -> FeatureMatrix<T> {
    let n = graph.entity_count();
    let attr_names: BTreeSet<&str> = attributes.iter().map(|a| a.name.as_str()).collect();
    let dim = n + attr_names.len();

    let mut rows = vec![vec![T::zero(); dim]; n];
    for rel in graph.relationships() {
        let (Some(i), Some(j)) = (
            graph.entity_index(&rel.src),
            graph.entity_index(&rel.dst),
        ) else {
            debug_assert!(false, "extract called on graph with dangling endpoints");
            continue;
        };
        if i == j {
            continue;
        }
        let c = T::from_f64(rel.weight).unwrap() * weights.for_kind(rel.kind);
        rows[i][j] = rows[i][j] + c;
        rows[j][i] = rows[j][i] + c;
    }

    let column_of: HashMap<&str, usize> = attr_names
        .iter()
        .enumerate()
        .map(|(k, name)| (*name, n + k))
        .collect();
    for attr in attributes {
        let Some(i) = graph.entity_index(&attr.entity_id) else {
            debug_assert!(false, "extract called with attribute for unknown entity");
            continue;
        };
        rows[i][column_of[attr.name.as_str()]] = T::from_f64(attr.value).unwrap();
    }

    let names = graph
        .entities()
        .iter()
        .map(|e| format!("adj:{}", e.id))
        .chain(attr_names.iter().map(|name| format!("attr:{name}")))
        .collect();
    FeatureMatrix {
        schema: AttributeSchema { names },
        rows,
        standardized: false,
    }
}

/// A standardized matrix together with the names of the columns that were
/// dropped because they carried no information.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized<T> {
    pub matrix: FeatureMatrix<T>,
    pub dropped: Vec<String>,
}

/// Z-scores every column using the population standard deviation (divide
/// by n, not n-1). Columns whose values are all identical are removed and
/// reported in `dropped`; if that leaves nothing, the input cannot support
/// a distance metric and `NoInformativeAttributes` is returned.
pub fn standardize<T: Scalar>(m: FeatureMatrix<T>) -> Result<Standardized<T>, FeatureError> {
    if m.standardized {
        return Err(FeatureError::AlreadyStandardized);
    }
    let n = m.n_rows();
    let dim = m.dimension();

    // Constancy is decided by exact equality, not by a zero variance: a
    // column of identical values can still produce a tiny nonzero variance
    // through rounding of the mean, which would blow up the z-scores.
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for c in 0..dim {
        let first = m.rows[0][c];
        if m.rows.iter().all(|row| row[c] == first) {
            dropped.push(m.schema.names[c].clone());
        } else {
            keep.push(c);
        }
    }
    if keep.is_empty() {
        return Err(FeatureError::NoInformativeAttributes);
    }

    let count = T::from_usize(n).unwrap();
    let mut means = Vec::with_capacity(keep.len());
    let mut stds = Vec::with_capacity(keep.len());
    for &c in &keep {
        let mut sum = T::zero();
        for row in &m.rows {
            sum = sum + row[c];
        }
        let mean = sum / count;
        let mut sq = T::zero();
        for row in &m.rows {
            let d = row[c] - mean;
            sq = sq + d * d;
        }
        means.push(mean);
        stds.push((sq / count).sqrt());
    }

    let rows = m
        .rows
        .iter()
        .map(|row| {
            keep.iter()
                .enumerate()
                .map(|(k, &c)| (row[c] - means[k]) / stds[k])
                .collect()
        })
        .collect();
    let names = keep.iter().map(|&c| m.schema.names[c].clone()).collect();

    Ok(Standardized {
        matrix: FeatureMatrix {
            schema: AttributeSchema { names },
            rows,
            standardized: true,
        },
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Entity, EntityCoordinate, EntityStatus, Relationship};
    use proptest::prelude::*;

    fn graph_from(edges: &[(RelationKind, &str, &str, f64)], ids: &[&str]) -> SoftwareGraph {
        let entities = ids
            .iter()
            .map(|id| Entity {
                id: id.to_string(),
                coordinate: EntityCoordinate::Object {
                    object_id: id.to_string(),
                },
                declared_module: "m".into(),
                status: EntityStatus::Planned,
            })
            .collect();
        let rels = edges
            .iter()
            .map(|(kind, src, dst, weight)| Relationship {
                kind: *kind,
                src: src.to_string(),
                dst: dst.to_string(),
                weight: *weight,
            })
            .collect();
        SoftwareGraph::new(entities, rels)
    }

    fn raw(rows: Vec<Vec<f64>>) -> FeatureMatrix<f64> {
        let dim = rows[0].len();
        FeatureMatrix {
            schema: AttributeSchema {
                names: (0..dim).map(|i| format!("c{i}")).collect(),
            },
            rows,
            standardized: false,
        }
    }

    #[test]
    fn adjacency_rows_for_a_small_graph() {
        let g = graph_from(
            &[
                (RelationKind::Part, "a", "b", 1.0),
                (RelationKind::Ref, "a", "c", 1.0),
            ],
            &["a", "b", "c"],
        );
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &[]);
        assert_eq!(m.row(0), &[0.0, 1.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(m.row(2), &[1.0, 0.0, 0.0]);
        assert!(!m.is_standardized());
    }

    #[test]
    fn opposite_direction_edges_sum_into_one_entry() {
        let g = graph_from(
            &[
                (RelationKind::Part, "a", "b", 1.0),
                (RelationKind::Ref, "b", "a", 1.0),
            ],
            &["a", "b"],
        );
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &[]);
        assert_eq!(m.row(0)[1], 2.0);
        assert_eq!(m.row(1)[0], 2.0);
    }

    #[test]
    fn ref_self_loop_leaves_the_diagonal_at_zero() {
        let g = graph_from(&[(RelationKind::Ref, "a", "a", 3.0)], &["a", "b"]);
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &[]);
        assert_eq!(m.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn kind_weights_scale_their_edges() {
        let g = graph_from(
            &[
                (RelationKind::Part, "a", "b", 2.0),
                (RelationKind::Subclass, "b", "c", 1.0),
            ],
            &["a", "b", "c"],
        );
        let w = RelationWeights {
            part: 0.5,
            subclass: 4.0,
            reference: 1.0,
        };
        let m = extract_structural_features::<f64>(&g, &w, &[]);
        assert_eq!(m.row(0)[1], 1.0);
        assert_eq!(m.row(1)[2], 4.0);
    }

    #[test]
    fn attribute_columns_come_after_adjacency_in_name_order() {
        let g = graph_from(&[], &["a", "b", "c"]);
        let attrs = vec![
            UserAttribute {
                entity_id: "a".into(),
                name: "loc".into(),
                value: 7.0,
            },
            UserAttribute {
                entity_id: "b".into(),
                name: "cc".into(),
                value: 2.0,
            },
        ];
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &attrs);
        assert_eq!(
            m.schema().names(),
            &["adj:a", "adj:b", "adj:c", "attr:cc", "attr:loc"]
        );
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 0.0, 7.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 0.0, 2.0, 0.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardize_zscores_with_population_std() {
        // Oracle values computed independently from mean 2 and population
        // deviation sqrt(2/3).
        let out = standardize(raw(vec![vec![1.0], vec![2.0], vec![3.0]])).unwrap();
        let z: Vec<f64> = out.matrix.rows().iter().map(|r| r[0]).collect();
        let expected = 1.224_744_871_391_589_1;
        assert!((z[0] + expected).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - expected).abs() < 1e-12);
        assert!(out.matrix.is_standardized());
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn symmetric_column_keeps_an_exact_zero_mean() {
        let out = standardize(raw(vec![vec![-1.0], vec![0.0], vec![1.0]])).unwrap();
        let z: Vec<f64> = out.matrix.rows().iter().map(|r| r[0]).collect();
        assert_eq!(z[1], 0.0);
        let expected = 1.224_744_871_391_589_1;
        assert!((z[0] + expected).abs() < 1e-12);
        assert!((z[2] - expected).abs() < 1e-12);
        let mean: f64 = z.iter().sum::<f64>() / 3.0;
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn constant_column_is_dropped_and_named() {
        let out = standardize(raw(vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]])).unwrap();
        assert_eq!(out.dropped, vec!["c0".to_string()]);
        assert_eq!(out.matrix.dimension(), 1);
        assert_eq!(out.matrix.schema().names(), &["c1"]);
    }

    #[test]
    fn all_constant_columns_is_an_error() {
        let err = standardize(raw(vec![vec![5.0, 0.0], vec![5.0, 0.0]])).unwrap_err();
        assert_eq!(err, FeatureError::NoInformativeAttributes);
    }

    #[test]
    fn standardizing_twice_is_an_error() {
        let once = standardize(raw(vec![vec![1.0], vec![2.0]])).unwrap();
        assert_eq!(
            standardize(once.matrix).unwrap_err(),
            FeatureError::AlreadyStandardized
        );
    }

    #[test]
    fn attributes_only_graph_drops_all_adjacency_columns() {
        let g = graph_from(&[], &["a", "b", "c"]);
        let attrs = vec![
            UserAttribute {
                entity_id: "a".into(),
                name: "loc".into(),
                value: 7.0,
            },
        ];
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &attrs);
        let out = standardize(m).unwrap();
        assert_eq!(out.dropped, vec!["adj:a", "adj:b", "adj:c"]);
        assert_eq!(out.matrix.schema().names(), &["attr:loc"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adjacency_block_is_always_symmetric(
            edges in prop::collection::vec((0usize..6, 0usize..6, 0u8..3, 1u32..8), 0..15)
        ) {
            let ids = ["a", "b", "c", "d", "e", "f"];
            let named: Vec<(RelationKind, &str, &str, f64)> = edges
                .into_iter()
                .filter_map(|(s, d, k, w)| {
                    let kind = match k {
                        0 => RelationKind::Part,
                        1 => RelationKind::Subclass,
                        _ => RelationKind::Ref,
                    };
                    if kind != RelationKind::Ref && s == d {
                        return None;
                    }
                    Some((kind, ids[s], ids[d], f64::from(w)))
                })
                .collect();
            let g = graph_from(&named, &ids);
            let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &[]);
            for i in 0..6 {
                prop_assert_eq!(m.row(i)[i], 0.0);
                for j in 0..6 {
                    prop_assert_eq!(m.row(i)[j], m.row(j)[i]);
                }
            }
        }

        #[test]
        fn standardized_columns_have_zero_mean_and_unit_std(
            rows in prop::collection::vec(
                prop::collection::vec(-50.0f64..50.0, 4),
                3..20
            )
        ) {
            let out = match standardize(raw(rows)) {
                Ok(out) => out,
                // Random columns are almost never constant, but tolerate it.
                Err(FeatureError::NoInformativeAttributes) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let m = &out.matrix;
            let n = m.n_rows() as f64;
            for c in 0..m.dimension() {
                let mean: f64 = m.rows().iter().map(|r| r[c]).sum::<f64>() / n;
                let var: f64 = m.rows().iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
