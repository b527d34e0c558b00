use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Binary fine→coarse summation operator between two levels.
///
/// Each fine unit maps to exactly one coarse unit, so every column of the
/// dense matrix sums to 1. Stored as the per-column parent index; `to_dense`
/// materializes the 0/1 matrix when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    fine_level: String,
    coarse_level: String,
    coarse_dim: usize,
    parent_of: Vec<usize>,
}

impl AggregationMatrix {
    pub(crate) fn new(
        fine_level: String,
        coarse_level: String,
        coarse_dim: usize,
        parent_of: Vec<usize>,
    ) -> Self {
        debug_assert!(parent_of.iter().all(|&p| p < coarse_dim));
        AggregationMatrix {
            fine_level,
            coarse_level,
            coarse_dim,
            parent_of,
        }
    }

    pub fn fine_level(&self) -> &str {
        &self.fine_level
    }

    pub fn coarse_level(&self) -> &str {
        &self.coarse_level
    }

    pub fn fine_dim(&self) -> usize {
        self.parent_of.len()
    }

    pub fn coarse_dim(&self) -> usize {
        self.coarse_dim
    }

    /// Coarse unit that fine unit `c` descends from.
    pub fn parent(&self, fine_unit: usize) -> usize {
        self.parent_of[fine_unit]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent_of
    }

    /// Number of fine descendants per coarse unit.
    pub fn child_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.coarse_dim];
        for &p in &self.parent_of {
            counts[p] += 1;
        }
        counts
    }

    /// The d_coarse × d_fine 0/1 matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.coarse_dim, self.fine_dim()));
        for (c, &p) in self.parent_of.iter().enumerate() {
            m[(p, c)] = 1.0;
        }
        m
    }

    /// `y = M·x` for one fine count vector. Preserves total mass.
    pub fn apply_vec(&self, x_fine: &[f64]) -> Result<Vec<f64>> {
        if x_fine.len() != self.fine_dim() {
            return Err(Error::Shape(format!(
                "aggregate: vector has {} entries, matrix expects {} fine units",
                x_fine.len(),
                self.fine_dim()
            )));
        }
        let mut y = vec![0.0; self.coarse_dim];
        for (c, &v) in x_fine.iter().enumerate() {
            y[self.parent_of[c]] += v;
        }
        Ok(y)
    }

    /// Row-wise aggregation of an hours × d_fine matrix.
    pub fn apply(&self, x_fine: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_fine.ncols() != self.fine_dim() {
            return Err(Error::Shape(format!(
                "aggregate: matrix has {} columns, expected {} fine units",
                x_fine.ncols(),
                self.fine_dim()
            )));
        }
        let mut y = Array2::zeros((x_fine.nrows(), self.coarse_dim));
        for (c, &p) in self.parent_of.iter().enumerate() {
            for t in 0..x_fine.nrows() {
                y[(t, p)] += x_fine[(t, c)];
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{CellGrid, GeoHierarchy};
    use ndarray::array;

    fn two_parent_fixture() -> GeoHierarchy {
        // 2x4 grid; level0 = left/right halves {P0, P1}; level1 = four 2x1 columns
        // {a,b} under P0 and {c,d} under P1.
        GeoHierarchy::regular(
            CellGrid {
                rows: 2,
                cols: 4,
                cell_size_m: 10.0,
            },
            &[("parent", 1, 2), ("child", 1, 4)],
        )
        .unwrap()
    }

    #[test]
    fn single_root_matrix_is_all_ones() {
        let h = GeoHierarchy::regular(
            CellGrid {
                rows: 4,
                cols: 4,
                cell_size_m: 1.0,
            },
            &[("l0", 1, 1), ("l1", 2, 2)],
        )
        .unwrap();
        let m = h.aggregation_matrix("l1", "l0").unwrap();
        assert_eq!(m.to_dense(), Array2::<f64>::ones((1, 4)));
    }

    #[test]
    fn two_parent_matrix_matches_hand_enumeration() {
        let h = two_parent_fixture();
        let m = h.aggregation_matrix("child", "parent").unwrap();
        assert_eq!(
            m.to_dense(),
            array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]
        );
        assert_eq!(m.apply_vec(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(m.apply_vec(&[0.0; 4]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn skipping_levels_equals_composition() {
        let h = GeoHierarchy::regular(
            CellGrid {
                rows: 4,
                cols: 4,
                cell_size_m: 1.0,
            },
            &[("l0", 1, 1), ("l1", 2, 2), ("l2", 4, 4)],
        )
        .unwrap();
        let direct = h.aggregation_matrix("l2", "l0").unwrap();
        assert_eq!(direct.to_dense(), Array2::<f64>::ones((1, 16)));

        // Aggregating to the single root equals scalar summation.
        let x: Vec<f64> = (0..16).map(|i| (i * i) as f64 * 0.25).collect();
        let total: f64 = x.iter().sum();
        let y = direct.apply_vec(&x).unwrap();
        assert!((y[0] - total).abs() <= 1e-9 * total.abs());
    }

    #[test]
    fn wrong_direction_rejected() {
        let h = two_parent_fixture();
        assert!(h.aggregation_matrix("parent", "child").is_err());
        assert!(h.aggregation_matrix("parent", "parent").is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = two_parent_fixture();
        let m = h.aggregation_matrix("child", "parent").unwrap();
        assert!(matches!(
            m.apply_vec(&[1.0, 2.0]),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn column_sums_are_one() {
        let h = two_parent_fixture();
        let dense = h.aggregation_matrix("child", "parent").unwrap().to_dense();
        for col in dense.columns() {
            assert_eq!(col.sum(), 1.0);
        }
    }
}
