//! Distance and similarity between feature rows.
//!
//! Similarity is the reciprocal of Euclidean distance, floored at
//! `d = 1e-12` so identical rows map to `1e12` instead of infinity. Rows of
//! the similarity matrix are independent, which is what lets [`crate::distnet`]
//! shard them across workers: any partition of the row range reassembles to
//! the bit-identical matrix.
//!
//! Bit-exactness contract: every distance accumulates its squared terms in
//! ascending column order. Identical inputs therefore produce identical
//! output bits no matter where or in how many pieces the rows are computed.

use rayon::prelude::*;

use crate::features::FeatureMatrix;
use crate::Scalar;

/// Distances below this are treated as this. Keeps similarity finite.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("row range {start}..{end} out of bounds for {n} rows")]
    RangeOutOfBounds { start: usize, end: usize, n: usize },
    #[error("feature matrix must be standardized before computing similarity")]
    NotStandardized,
    #[error("row block has wrong shape at row {row}: expected {expected} entries, found {found}")]
    BadRowShape {
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// Euclidean distance. Accumulates in ascending index order.
pub fn euclidean_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut sum = T::zero();
    for h in 0..u.len() {
        let d = u[h] - v[h];
        sum = sum + d * d;
    }
    Ok(sum.sqrt())
}

/// Similarity of two rows at distance `d`: `1 / max(d, 1e-12)`.
pub fn similarity<T: Scalar>(d: T) -> T {
    let floor = T::from_f64(DISTANCE_FLOOR).unwrap();
    T::one() / d.max(floor)
}

/// Pairwise similarities of all rows, stored as the upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    n: usize,
    // Entry (i, j) with i < j lives at i*(2n-i-1)/2 + (j-i-1).
    values: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Similarity between entities `i` and `j`. Symmetric; `i == j` is a
    /// caller bug.
    pub fn sim(&self, i: usize, j: usize) -> T {
        assert!(i != j, "similarity of an entity with itself is undefined");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        assert!(j < self.n);
        self.values[i * (2 * self.n - i - 1) / 2 + (j - i - 1)]
    }

    /// Reassembles a matrix from per-row blocks: `rows[i]` holds the
    /// similarities of row `i` to every `j > i` (so the last row is empty).
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<SimilarityMatrix<T>, MetricsError> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for (i, row) in rows.iter().enumerate() {
            let expected = n - i - 1;
            if row.len() != expected {
                return Err(MetricsError::BadRowShape {
                    row: i,
                    expected,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(SimilarityMatrix { n, values })
    }
}

fn one_row<T: Scalar>(m: &FeatureMatrix<T>, i: usize) -> Vec<T> {
    let n = m.n_rows();
    let mut row = Vec::with_capacity(n - i - 1);
    for j in (i + 1)..n {
        let d = euclidean_distance(m.row(i), m.row(j)).expect("rows share one schema");
        row.push(similarity(d));
    }
    row
}

/// Computes the similarity entries for rows `row_start..row_end`; block `i`
/// holds the pairs `(i, j)` for `j > i`. This is the unit of work the
/// distributed engine hands to workers.
pub fn similarity_rows<T: Scalar>(
    m: &FeatureMatrix<T>,
    row_start: usize,
    row_end: usize,
) -> Result<Vec<Vec<T>>, MetricsError> {
    if !m.is_standardized() {
        return Err(MetricsError::NotStandardized);
    }
    let n = m.n_rows();
    if row_start >= row_end || row_end > n {
        return Err(MetricsError::RangeOutOfBounds {
            start: row_start,
            end: row_end,
            n,
        });
    }
    Ok((row_start..row_end)
        .into_par_iter()
        .map(|i| one_row(m, i))
        .collect())
}

/// Full similarity matrix, computed locally.
pub fn similarity_matrix<T: Scalar>(
    m: &FeatureMatrix<T>,
) -> Result<SimilarityMatrix<T>, MetricsError> {
    if !m.is_standardized() {
        return Err(MetricsError::NotStandardized);
    }
    let n = m.n_rows();
    if n < 2 {
        return Err(MetricsError::RangeOutOfBounds {
            start: 0,
            end: n,
            n,
        });
    }
    let rows: Vec<Vec<T>> = (0..n).into_par_iter().map(|i| one_row(m, i)).collect();
    SimilarityMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_structural_features, standardize, RelationWeights};
    use crate::model::{Entity, EntityCoordinate, EntityStatus, RelationKind, Relationship, SoftwareGraph};
    use proptest::prelude::*;

    fn standardized(rows: Vec<Vec<f64>>) -> FeatureMatrix<f64> {
        FeatureMatrix::from_standardized_rows(rows)
    }

    #[test]
    fn euclidean_distance_of_a_345_triangle_is_exact() {
        let d = euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn distance_length_mismatch_is_an_error() {
        let err = euclidean_distance(&[0.0], &[1.0, 2.0]).unwrap_err();
        assert_eq!(err, MetricsError::LengthMismatch { left: 1, right: 2 });
    }

    #[test]
    fn similarity_values_from_the_definition() {
        assert_eq!(similarity(5.0f64), 0.2);
        assert_eq!(similarity(1.0f64), 1.0);
        assert_eq!(similarity(0.0f64), 1e12);
    }

    #[test]
    fn similarity_is_strictly_decreasing_in_distance() {
        assert!(similarity(2.0f64) > similarity(3.0f64));
        assert!(similarity(1e-12f64) >= similarity(2e-12f64));
    }

    #[test]
    fn identical_feature_rows_hit_the_similarity_cap() {
        // b and c have identical adjacency rows, which standardization
        // preserves, so their distance is exactly zero.
        let entities = ["a", "b", "c"]
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
        let rels = vec![
            Relationship {
                kind: RelationKind::Part,
                src: "a".into(),
                dst: "b".into(),
                weight: 1.0,
            },
            Relationship {
                kind: RelationKind::Ref,
                src: "a".into(),
                dst: "c".into(),
                weight: 1.0,
            },
        ];
        let graph = SoftwareGraph::new(entities, rels);
        let m = extract_structural_features::<f64>(&graph, &RelationWeights::default(), &[]);
        let m = standardize(m).unwrap().matrix;
        let sims = similarity_matrix(&m).unwrap();
        assert_eq!(sims.sim(1, 2), 1e12);
        assert_eq!(sims.sim(2, 1), 1e12);
    }

    #[test]
    fn unstandardized_input_is_refused() {
        let g = SoftwareGraph::new(
            vec![
                Entity {
                    id: "a".into(),
                    coordinate: EntityCoordinate::Object { object_id: "a".into() },
                    declared_module: "m".into(),
                    status: EntityStatus::Planned,
                },
                Entity {
                    id: "b".into(),
                    coordinate: EntityCoordinate::Object { object_id: "b".into() },
                    declared_module: "m".into(),
                    status: EntityStatus::Planned,
                },
            ],
            vec![],
        );
        let m = extract_structural_features::<f64>(&g, &RelationWeights::default(), &[]);
        assert_eq!(
            similarity_matrix(&m).unwrap_err(),
            MetricsError::NotStandardized
        );
    }

    #[test]
    fn row_range_bounds_are_checked() {
        let m = standardized(vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert!(similarity_rows(&m, 0, 4).is_err());
        assert!(similarity_rows(&m, 2, 2).is_err());
        assert!(similarity_rows(&m, 0, 3).is_ok());
    }

    #[test]
    fn from_rows_rejects_misshapen_blocks() {
        let err = SimilarityMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![]]).unwrap_err();
        assert_eq!(
            err,
            MetricsError::BadRowShape {
                row: 0,
                expected: 2,
                found: 1,
            }
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn any_row_partition_reassembles_bit_identically(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3..12),
            cut_seed in 0usize..100
        ) {
            let m = standardized(rows);
            let n = m.n_rows();
            let full = similarity_rows(&m, 0, n).unwrap();
            let cut = 1 + cut_seed % (n - 1);
            let mut pieces = similarity_rows(&m, 0, cut).unwrap();
            pieces.extend(similarity_rows(&m, cut, n).unwrap());
            // Bitwise equality, not approximate.
            prop_assert_eq!(full.len(), pieces.len());
            for (a, b) in full.iter().zip(&pieces) {
                prop_assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(b) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            let whole = SimilarityMatrix::from_rows(full).unwrap();
            let split = SimilarityMatrix::from_rows(pieces).unwrap();
            prop_assert_eq!(whole, split);
        }

        #[test]
        fn similarity_times_distance_is_one_within_an_ulp(
            mag in -12.0f64..6.0
        ) {
            let d = 10f64.powf(mag).max(1e-12);
            let s = similarity(d);
            prop_assert!((s * d - 1.0).abs() <= f64::EPSILON);
        }
    }
}
