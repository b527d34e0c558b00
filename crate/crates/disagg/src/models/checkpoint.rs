use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoHierarchy;
use crate::models::{Model, ModelSpec, Param};

#[derive(Debug, Serialize, Deserialize)]
struct ParamData {
    name: String,
    shape: [usize; 2],
    /// Row-major values.
    values: Vec<f64>,
}

/// JSON parameter manifest: architecture descriptor, hierarchy hash, and
/// row-major parameter values.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    architecture: ModelSpec,
    hierarchy_hash: String,
    params: Vec<ParamData>,
}

impl Checkpoint {
    pub fn save(model: &Model, h: &GeoHierarchy, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            architecture: model.spec.clone(),
            hierarchy_hash: h.hash().to_string(),
            params: model
                .params
                .iter()
                .map(|p| ParamData {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    values: p.value.iter().copied().collect(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    /// Rebuilds the model, rejecting hierarchy or shape mismatches.
    pub fn load(path: &Path, h: &GeoHierarchy) -> Result<Model> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.hierarchy_hash != h.hash() {
            return Err(Error::Data(format!(
                "checkpoint {} was trained on a different hierarchy",
                path.display()
            )));
        }
        let mut model = super::build_model(&ckpt.architecture, h, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} parameters, architecture expects {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        let mut params = Vec::with_capacity(ckpt.params.len());
        for (stored, expected) in ckpt.params.into_iter().zip(&model.params) {
            let dim = expected.value.dim();
            if stored.shape != [dim.0, dim.1] || stored.name != expected.name {
                return Err(Error::Shape(format!(
                    "checkpoint parameter '{}' is {:?}, expected '{}' of ({}, {})",
                    stored.name, stored.shape, expected.name, dim.0, dim.1
                )));
            }
            let value = Array2::from_shape_vec(dim, stored.values)
                .map_err(|e| Error::Shape(e.to_string()))?;
            params.push(Param {
                name: stored.name,
                value,
            });
        }
        model.params = params;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::CellGrid;
    use crate::models::build_model;

    #[test]
    fn save_load_round_trip() {
        let h = GeoHierarchy::regular(
            CellGrid { rows: 4, cols: 4, cell_size_m: 100.0 },
            &[("l0", 1, 1), ("l1", 2, 2), ("l2", 4, 4)],
        )
        .unwrap();
        let model = build_model(&ModelSpec::fnn("l0", "l2", true), &h, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::save(&model, &h, &path).unwrap();
        let back = Checkpoint::load(&path, &h).unwrap();
        for (a, b) in model.params.iter().zip(&back.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }

        // A different hierarchy is rejected.
        let other = GeoHierarchy::regular(
            CellGrid { rows: 4, cols: 4, cell_size_m: 50.0 },
            &[("l0", 1, 1), ("l1", 2, 2), ("l2", 4, 4)],
        )
        .unwrap();
        assert!(Checkpoint::load(&path, &other).is_err());
    }
}
