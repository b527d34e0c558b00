//! Training-light disaggregation baselines: Constant Weighting splits a
//! parent's value equally among its children, Areal Weighting proportionally
//! to child areas, and Historical Ratios proportionally to shares estimated
//! from training-period counts. All three conserve mass per parent.

use std::io;

use ndarray::{Array2, ArrayView2};

use crate::data::CountFrame;
use crate::error::{Error, Result};
use crate::geo::{AggregationMatrix, GeoHierarchy};

/// Per-fine-unit share of its parent's value, in [0, 1]; the shares of each
/// parent's children sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub fine_level: String,
    pub coarse_level: String,
    ratios: Vec<f64>,
    matrix: AggregationMatrix,
}

impl RatioTable {
    fn new(matrix: AggregationMatrix, ratios: Vec<f64>) -> Self {
        debug_assert_eq!(ratios.len(), matrix.fine_dim());
        RatioTable {
            fine_level: matrix.fine_level().to_string(),
            coarse_level: matrix.coarse_level().to_string(),
            ratios,
            matrix,
        }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// child value = ratio(child) × parent value.
    pub fn apply_vec(&self, x_coarse: &[f64]) -> Result<Vec<f64>> {
        if x_coarse.len() != self.matrix.coarse_dim() {
            return Err(Error::Shape(format!(
                "disaggregate: vector has {} entries, level '{}' has {} units",
                x_coarse.len(),
                self.coarse_level,
                self.matrix.coarse_dim()
            )));
        }
        Ok(self
            .ratios
            .iter()
            .enumerate()
            .map(|(c, r)| r * x_coarse[self.matrix.parent(c)])
            .collect())
    }

    /// Row-wise application to an hours × d_coarse matrix.
    pub fn apply(&self, x_coarse: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_coarse.ncols() != self.matrix.coarse_dim() {
            return Err(Error::Shape(format!(
                "disaggregate: matrix has {} columns, level '{}' has {} units",
                x_coarse.ncols(),
                self.coarse_level,
                self.matrix.coarse_dim()
            )));
        }
        let mut out = Array2::zeros((x_coarse.nrows(), self.ratios.len()));
        for (c, &r) in self.ratios.iter().enumerate() {
            let p = self.matrix.parent(c);
            for t in 0..x_coarse.nrows() {
                out[(t, c)] = r * x_coarse[(t, p)];
            }
        }
        Ok(out)
    }

    /// CSV `fine_unit,parent_unit,ratio` for inspection and reuse.
    pub fn write_csv<W: io::Write>(&self, h: &GeoHierarchy, writer: W) -> Result<()> {
        let fine = h.level(&self.fine_level)?;
        let coarse = h.level(&self.coarse_level)?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fine_unit", "parent_unit", "ratio"])?;
        for (c, &r) in self.ratios.iter().enumerate() {
            w.write_record(&[
                fine.unit_ids[c].clone(),
                coarse.unit_ids[self.matrix.parent(c)].clone(),
                r.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform shares: each coarse value split equally among its descendants.
pub fn cw_ratios(h: &GeoHierarchy, coarse: &str, fine: &str) -> Result<RatioTable> {
    let m = h.aggregation_matrix(fine, coarse)?;
    let counts = m.child_counts();
    let ratios = (0..m.fine_dim())
        .map(|c| 1.0 / counts[m.parent(c)] as f64)
        .collect();
    Ok(RatioTable::new(m, ratios))
}

/// Shares proportional to fine-unit areas within each parent.
pub fn aw_ratios(h: &GeoHierarchy, coarse: &str, fine: &str) -> Result<RatioTable> {
    let m = h.aggregation_matrix(fine, coarse)?;
    let areas = h.areas_m2(h.level_index(fine)?);
    let mut parent_area = vec![0.0f64; m.coarse_dim()];
    for (c, &a) in areas.iter().enumerate() {
        parent_area[m.parent(c)] += a;
    }
    let ratios = areas
        .iter()
        .enumerate()
        .map(|(c, &a)| a / parent_area[m.parent(c)])
        .collect();
    Ok(RatioTable::new(m, ratios))
}

/// Average disaggregation ratios from historical counts:
/// `ratio(child) = Σ_t fine[t, child] / Σ_t coarse[t, parent(child)]`.
///
/// Parents with zero historical total fall back to uniform shares. If the two
/// frames are not mass-consistent, shares are renormalized per parent so they
/// still sum to 1.
pub fn hr_fit(
    train_coarse: &CountFrame,
    train_fine: &CountFrame,
    h: &GeoHierarchy,
) -> Result<RatioTable> {
    if train_coarse.hours != train_fine.hours {
        return Err(Error::Data(format!(
            "historical frames misaligned: '{}' covers {} hours from {}, '{}' covers {} from {}",
            train_coarse.level,
            train_coarse.n_hours(),
            train_coarse.start_hour(),
            train_fine.level,
            train_fine.n_hours(),
            train_fine.start_hour()
        )));
    }
    let m = h.aggregation_matrix(&train_fine.level, &train_coarse.level)?;
    if m.fine_dim() != train_fine.n_units() || m.coarse_dim() != train_coarse.n_units() {
        return Err(Error::Shape(format!(
            "historical frames do not match levels '{}'→'{}'",
            train_coarse.level, train_fine.level
        )));
    }
    let fine_sums: Vec<f64> = (0..m.fine_dim())
        .map(|c| train_fine.counts.column(c).sum())
        .collect();
    let coarse_sums: Vec<f64> = (0..m.coarse_dim())
        .map(|p| train_coarse.counts.column(p).sum())
        .collect();
    let counts = m.child_counts();

    let mut ratios: Vec<f64> = fine_sums
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let p = m.parent(c);
            if coarse_sums[p] > 0.0 {
                s / coarse_sums[p]
            } else {
                1.0 / counts[p] as f64
            }
        })
        .collect();

    // Renormalize per parent; a no-op when history is mass-consistent.
    let mut share_sums = vec![0.0f64; m.coarse_dim()];
    for (c, &r) in ratios.iter().enumerate() {
        share_sums[m.parent(c)] += r;
    }
    for (c, r) in ratios.iter_mut().enumerate() {
        let p = m.parent(c);
        if share_sums[p] > 0.0 {
            *r /= share_sums[p];
        } else {
            *r = 1.0 / counts[p] as f64;
        }
    }
    Ok(RatioTable::new(m, ratios))
}

/// Equal split of each coarse value among its descendant fine units.
pub fn cw_disaggregate(
    x_coarse: &[f64],
    h: &GeoHierarchy,
    coarse: &str,
    fine: &str,
) -> Result<Vec<f64>> {
    cw_ratios(h, coarse, fine)?.apply_vec(x_coarse)
}

/// Split proportional to fine-unit areas.
pub fn aw_disaggregate(
    x_coarse: &[f64],
    h: &GeoHierarchy,
    coarse: &str,
    fine: &str,
) -> Result<Vec<f64>> {
    aw_ratios(h, coarse, fine)?.apply_vec(x_coarse)
}

/// Applies fitted historical ratios to unseen coarse data.
pub fn hr_disaggregate(x_coarse: &[f64], table: &RatioTable) -> Result<Vec<f64>> {
    table.apply_vec(x_coarse)
}
