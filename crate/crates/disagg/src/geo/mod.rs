//! Nested multi-level geography on a rectangular cell grid.
//!
//! Units at every level are unions of lattice cells, levels are strictly
//! nested coarse→fine, and exact aggregation operators are available between
//! any pair of levels. Areas are integer cell counts times the cell area, so
//! `area(parent) = Σ area(children)` holds exactly.

mod agg;

pub use agg::AggregationMatrix;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Rectangular lattice all units are defined on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    /// Edge length of one square cell, in meters.
    pub cell_size_m: f64,
}

impl CellGrid {
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.cell_size_m * self.cell_size_m
    }

    /// Cell index for a planar coordinate, half-open on cell boundaries:
    /// the cell `[k*s, (k+1)*s)` owns coordinate `x`.
    pub fn cell_at(&self, x_m: f64, y_m: f64) -> Option<usize> {
        if !x_m.is_finite() || !y_m.is_finite() || x_m < 0.0 || y_m < 0.0 {
            return None;
        }
        let col = (x_m / self.cell_size_m).floor() as usize;
        let row = (y_m / self.cell_size_m).floor() as usize;
        if col >= self.cols || row >= self.rows {
            return None;
        }
        Some(row * self.cols + col)
    }
}

/// One geographic level: a partition of the grid into named units.
#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub name: String,
    pub unit_ids: Vec<String>,
    /// Cell index (row-major) → unit index at this level.
    cell_to_unit: Vec<u32>,
    /// Cells per unit.
    cell_counts: Vec<u32>,
}

impl LevelSpec {
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn unit_of_cell(&self, cell: usize) -> usize {
        self.cell_to_unit[cell] as usize
    }

    pub fn cell_count(&self, unit: usize) -> usize {
        self.cell_counts[unit] as usize
    }
}

/// Subdivision of the grid into `rows × cols` equal rectangular tiles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Subdivision {
    pub rows: usize,
    pub cols: usize,
}

/// Explicit unit: an id plus the row-major cell indices it owns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitDescription {
    pub id: String,
    pub cells: Vec<usize>,
}

/// One level of a hierarchy description: either a regular subdivision or an
/// explicit unit→cells listing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelDescription {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivide: Option<Subdivision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<UnitDescription>>,
}

impl LevelDescription {
    pub fn subdivision(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        LevelDescription {
            name: name.into(),
            subdivide: Some(Subdivision { rows, cols }),
            units: None,
        }
    }
}

/// JSON-serializable description of a hierarchy, coarse→fine.
///
/// See `configs/hierarchy_example.json` for the documented schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyDescription {
    pub grid: CellGrid,
    pub levels: Vec<LevelDescription>,
}

impl HierarchyDescription {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("hierarchy description: {e}")))
    }

    pub fn build(&self) -> Result<GeoHierarchy> {
        GeoHierarchy::build(self)
    }
}

/// Validated nested geography: ordered levels (index 0 = coarsest), exact
/// memberships between adjacent levels, and per-unit areas.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct GeoHierarchy {
    grid: CellGrid,
    levels: Vec<LevelSpec>,
    /// `parents[l][child]` = parent index at level `l` of child unit at level `l+1`.
    parents: Vec<Vec<u32>>,
    hash: String,
}

impl GeoHierarchy {
    /// Validates a description and builds the hierarchy.
    ///
    /// Rejects fewer than 2 levels, uncovered or doubly-covered cells,
    /// non-increasing unit counts, and non-nested memberships.
    pub fn build(desc: &HierarchyDescription) -> Result<Self> {
        let grid = desc.grid;
        if grid.rows == 0 || grid.cols == 0 {
            return Err(Error::Config("grid must have positive dimensions".into()));
        }
        if !(grid.cell_size_m > 0.0) {
            return Err(Error::Config("cell_size_m must be positive".into()));
        }
        if desc.levels.len() < 2 {
            return Err(Error::Config(format!(
                "hierarchy needs at least 2 levels, got {}",
                desc.levels.len()
            )));
        }

        let mut levels = Vec::with_capacity(desc.levels.len());
        for ld in &desc.levels {
            levels.push(build_level(&grid, ld)?);
        }

        for pair in levels.windows(2) {
            if pair[0].n_units() >= pair[1].n_units() {
                return Err(Error::Config(format!(
                    "unit counts must strictly increase coarse→fine: level '{}' has {} units, '{}' has {}",
                    pair[0].name,
                    pair[0].n_units(),
                    pair[1].name,
                    pair[1].n_units()
                )));
            }
        }

        let mut parents = Vec::with_capacity(levels.len() - 1);
        for l in 0..levels.len() - 1 {
            parents.push(derive_memberships(&levels[l], &levels[l + 1])?);
        }

        let hash = hash_levels(&grid, &levels);
        Ok(GeoHierarchy {
            grid,
            levels,
            parents,
            hash,
        })
    }

    /// Convenience constructor: a chain of regular subdivisions.
    pub fn regular(grid: CellGrid, levels: &[(&str, usize, usize)]) -> Result<Self> {
        let desc = HierarchyDescription {
            grid,
            levels: levels
                .iter()
                .map(|(name, r, c)| LevelDescription::subdivision(*name, *r, *c))
                .collect(),
        };
        Self::build(&desc)
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Unit counts per level, coarse→fine.
    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.n_units()).collect()
    }

    /// SHA-256 over the grid and every level's cell assignment; identifies
    /// the geography in frame sidecars and checkpoints.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn level_index(&self, name: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("unknown level '{name}'")))
    }

    pub fn level(&self, name: &str) -> Result<&LevelSpec> {
        Ok(&self.levels[self.level_index(name)?])
    }

    /// Unit areas in m² at a level, indexed by unit.
    pub fn areas_m2(&self, level: usize) -> Vec<f64> {
        let cell_area = self.grid.cell_area_m2();
        self.levels[level]
            .cell_counts
            .iter()
            .map(|&c| c as f64 * cell_area)
            .collect()
    }

    /// Parent at level `l` of a unit at level `l+1`.
    pub fn parent_of(&self, child_level: usize, child: usize) -> usize {
        self.parents[child_level - 1][child] as usize
    }

    /// Exact summation operator from `fine` up to `coarse`.
    ///
    /// Errors unless `coarse` is strictly above `fine`.
    pub fn aggregation_matrix(&self, fine: &str, coarse: &str) -> Result<AggregationMatrix> {
        let fi = self.level_index(fine)?;
        let ci = self.level_index(coarse)?;
        if ci >= fi {
            return Err(Error::Config(format!(
                "'{coarse}' is not strictly above '{fine}' in the hierarchy"
            )));
        }
        // Compose adjacent memberships down from fine to coarse.
        let fine_dim = self.levels[fi].n_units();
        let mut parent_of: Vec<usize> = (0..fine_dim).collect();
        for l in (ci..fi).rev() {
            let step = &self.parents[l];
            for p in parent_of.iter_mut() {
                *p = step[*p] as usize;
            }
        }
        Ok(AggregationMatrix::new(
            fine.to_string(),
            coarse.to_string(),
            self.levels[ci].n_units(),
            parent_of,
        ))
    }

    /// Unit index at every level containing a planar coordinate, or an error
    /// for out-of-bounds coordinates (callers count those as dropped).
    pub fn assign_point(&self, x_m: f64, y_m: f64) -> Result<Vec<usize>> {
        let cell = self.grid.cell_at(x_m, y_m).ok_or_else(|| {
            Error::Data(format!("coordinate ({x_m}, {y_m}) outside grid bounds"))
        })?;
        Ok(self
            .levels
            .iter()
            .map(|level| level.unit_of_cell(cell))
            .collect())
    }

    /// Description that reproduces this hierarchy (explicit unit listings).
    pub fn describe(&self) -> HierarchyDescription {
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut units: Vec<UnitDescription> = level
                    .unit_ids
                    .iter()
                    .map(|id| UnitDescription {
                        id: id.clone(),
                        cells: Vec::new(),
                    })
                    .collect();
                for (cell, &unit) in level.cell_to_unit.iter().enumerate() {
                    units[unit as usize].cells.push(cell);
                }
                LevelDescription {
                    name: level.name.clone(),
                    subdivide: None,
                    units: Some(units),
                }
            })
            .collect();
        HierarchyDescription {
            grid: self.grid,
            levels,
        }
    }
}

fn build_level(grid: &CellGrid, desc: &LevelDescription) -> Result<LevelSpec> {
    match (&desc.subdivide, &desc.units) {
        (Some(sub), None) => build_subdivided(grid, &desc.name, *sub),
        (None, Some(units)) => build_explicit(grid, &desc.name, units),
        _ => Err(Error::Config(format!(
            "level '{}' must give exactly one of `subdivide` or `units`",
            desc.name
        ))),
    }
}

fn build_subdivided(grid: &CellGrid, name: &str, sub: Subdivision) -> Result<LevelSpec> {
    if sub.rows == 0 || sub.cols == 0 {
        return Err(Error::Config(format!(
            "level '{name}': subdivision factors must be positive"
        )));
    }
    if grid.rows % sub.rows != 0 || grid.cols % sub.cols != 0 {
        return Err(Error::Config(format!(
            "level '{name}': subdivision {}x{} does not divide the {}x{} grid",
            sub.rows, sub.cols, grid.rows, grid.cols
        )));
    }
    let tile_rows = grid.rows / sub.rows;
    let tile_cols = grid.cols / sub.cols;
    let n_units = sub.rows * sub.cols;
    let mut cell_to_unit = vec![0u32; grid.n_cells()];
    let mut cell_counts = vec![0u32; n_units];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let unit = (r / tile_rows) * sub.cols + (c / tile_cols);
            cell_to_unit[r * grid.cols + c] = unit as u32;
            cell_counts[unit] += 1;
        }
    }
    let unit_ids = (0..n_units).map(|i| format!("{name}-{i}")).collect();
    Ok(LevelSpec {
        name: name.to_string(),
        unit_ids,
        cell_to_unit,
        cell_counts,
    })
}

fn build_explicit(grid: &CellGrid, name: &str, units: &[UnitDescription]) -> Result<LevelSpec> {
    if units.is_empty() {
        return Err(Error::Config(format!("level '{name}' has no units")));
    }
    let mut seen_ids = std::collections::HashSet::new();
    for u in units {
        if !seen_ids.insert(u.id.as_str()) {
            return Err(Error::Config(format!(
                "level '{name}': duplicate unit id '{}'",
                u.id
            )));
        }
    }
    const UNASSIGNED: u32 = u32::MAX;
    let mut cell_to_unit = vec![UNASSIGNED; grid.n_cells()];
    let mut cell_counts = vec![0u32; units.len()];
    for (ui, u) in units.iter().enumerate() {
        for &cell in &u.cells {
            if cell >= grid.n_cells() {
                return Err(Error::Config(format!(
                    "level '{name}': unit '{}' references cell {cell} outside the {}x{} grid",
                    u.id, grid.rows, grid.cols
                )));
            }
            if cell_to_unit[cell] != UNASSIGNED {
                return Err(Error::Config(format!(
                    "level '{name}': cell {cell} covered by both '{}' and '{}'",
                    units[cell_to_unit[cell] as usize].id, u.id
                )));
            }
            cell_to_unit[cell] = ui as u32;
            cell_counts[ui] += 1;
        }
    }
    if let Some(cell) = cell_to_unit.iter().position(|&u| u == UNASSIGNED) {
        return Err(Error::Config(format!(
            "level '{name}': cell {cell} not covered by any unit"
        )));
    }
    if let Some(ui) = cell_counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!(
            "level '{name}': unit '{}' owns no cells",
            units[ui].id
        )));
    }
    Ok(LevelSpec {
        name: name.to_string(),
        unit_ids: units.iter().map(|u| u.id.clone()).collect(),
        cell_to_unit,
        cell_counts,
    })
}

/// Per-child parent at the coarser level; errors on non-nested membership
/// (a child whose cells span two parents).
fn derive_memberships(coarse: &LevelSpec, fine: &LevelSpec) -> Result<Vec<u32>> {
    const UNSET: u32 = u32::MAX;
    let mut parent = vec![UNSET; fine.n_units()];
    for (cell, &child) in fine.cell_to_unit.iter().enumerate() {
        let p = coarse.cell_to_unit[cell];
        let slot = &mut parent[child as usize];
        if *slot == UNSET {
            *slot = p;
        } else if *slot != p {
            return Err(Error::Config(format!(
                "non-nested membership: unit '{}' at level '{}' spans parents '{}' and '{}' at level '{}'",
                fine.unit_ids[child as usize],
                fine.name,
                coarse.unit_ids[*slot as usize],
                coarse.unit_ids[p as usize],
                coarse.name
            )));
        }
    }
    Ok(parent)
}

fn hash_levels(grid: &CellGrid, levels: &[LevelSpec]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(grid.rows.to_le_bytes());
    hasher.update(grid.cols.to_le_bytes());
    hasher.update(grid.cell_size_m.to_le_bytes());
    for level in levels {
        hasher.update(level.name.as_bytes());
        hasher.update([0u8]);
        for id in &level.unit_ids {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        for &u in &level.cell_to_unit {
            hasher.update(u.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
