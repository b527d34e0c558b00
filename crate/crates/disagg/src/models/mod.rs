//! FNN and LSTM disaggregators, in plain form and in chained form whose
//! hidden widths equal the intermediate geographic level dimensions and whose
//! intermediate activations are exposed as predictions for those levels.

mod batch;
mod checkpoint;

pub use batch::{gather_rows, window_batches};
pub use checkpoint::Checkpoint;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geo::GeoHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Fnn,
    Lstm,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::Fnn => write!(f, "fnn"),
            ModelFamily::Lstm => write!(f, "lstm"),
        }
    }
}

/// Architecture description. With `cot` set, the dense head's hidden widths
/// are forced to the unit counts of the hierarchy levels strictly between
/// source and target; otherwise `hidden_widths` applies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub source_level: String,
    pub target_level: String,
    pub cot: bool,
    /// Hidden widths of the dense head in plain mode.
    pub hidden_widths: Vec<usize>,
    /// Recurrent state size (LSTM only).
    pub lstm_hidden: usize,
    /// Temporal window T: consecutive source hours ending at the labeled
    /// hour. 1 for the FNN.
    pub window: usize,
}

impl ModelSpec {
    pub fn fnn(source: impl Into<String>, target: impl Into<String>, cot: bool) -> Self {
        ModelSpec {
            family: ModelFamily::Fnn,
            source_level: source.into(),
            target_level: target.into(),
            cot,
            hidden_widths: vec![64],
            lstm_hidden: 0,
            window: 1,
        }
    }

    pub fn lstm(source: impl Into<String>, target: impl Into<String>, cot: bool) -> Self {
        ModelSpec {
            family: ModelFamily::Lstm,
            source_level: source.into(),
            target_level: target.into(),
            cot,
            hidden_widths: vec![64],
            lstm_hidden: 128,
            window: 5,
        }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

/// A built model: validated widths plus learnable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    /// Levels exposed by the chained head, coarse→fine (empty when plain or
    /// when source and target are adjacent).
    pub intermediate_levels: Vec<String>,
    /// Dense-head widths, input through output inclusive.
    pub head_widths: Vec<usize>,
    pub params: Vec<Param>,
}

/// Input batch: plain rows for the FNN, a window of `T` row-batches (oldest
/// first, each B × d_source) for the LSTM.
#[derive(Debug, Clone)]
pub enum ModelInput {
    Rows(Array2<f64>),
    Windows(Vec<Array2<f64>>),
}

/// Per-level predictions, ordered coarse→fine; the final entry is the target
/// level. Intermediate entries exist only for chained models.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub levels: Vec<(String, Var)>,
}

impl ModelOutput {
    pub fn target(&self) -> Var {
        self.levels.last().expect("output has a target level").1
    }

    pub fn get(&self, level: &str) -> Option<Var> {
        self.levels.iter().find(|(l, _)| l == level).map(|(_, v)| *v)
    }
}

/// Validates a spec against the hierarchy and initializes parameters.
///
/// Weights are uniform in ±1/√fan_in from the given seed; biases start at
/// zero. The same seed reproduces identical parameters.
pub fn build_model(spec: &ModelSpec, h: &GeoHierarchy, seed: u64) -> Result<Model> {
    let si = h.level_index(&spec.source_level)?;
    let ti = h.level_index(&spec.target_level)?;
    if si >= ti {
        return Err(Error::Config(format!(
            "model source '{}' must be strictly coarser than target '{}'",
            spec.source_level, spec.target_level
        )));
    }
    if spec.window < 1 {
        return Err(Error::Config("model window must be ≥ 1".into()));
    }
    if spec.family == ModelFamily::Fnn && spec.window != 1 {
        return Err(Error::Config(format!(
            "fnn consumes single hours; window {} is not valid",
            spec.window
        )));
    }
    if spec.family == ModelFamily::Lstm && spec.lstm_hidden == 0 {
        return Err(Error::Config("lstm_hidden must be positive".into()));
    }

    let dims = h.dims();
    let levels = h.levels();
    let intermediate_levels: Vec<String> = if spec.cot {
        (si + 1..ti).map(|l| levels[l].name.clone()).collect()
    } else {
        Vec::new()
    };

    let head_input = match spec.family {
        ModelFamily::Fnn => dims[si],
        ModelFamily::Lstm => spec.lstm_hidden,
    };
    let mut head_widths = vec![head_input];
    if spec.cot {
        head_widths.extend((si + 1..ti).map(|l| dims[l]));
    } else {
        head_widths.extend(spec.hidden_widths.iter().copied());
    }
    head_widths.push(dims[ti]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut init = |name: String, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (rows as f64).sqrt();
        Param {
            name,
            value: Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound)),
        }
    };
    if spec.family == ModelFamily::Lstm {
        let d_in = dims[si];
        let hd = spec.lstm_hidden;
        params.push(init("lstm.w_x".into(), d_in, 4 * hd, &mut rng));
        params.push(init("lstm.w_h".into(), hd, 4 * hd, &mut rng));
        params.push(Param {
            name: "lstm.bias".into(),
            value: Array2::zeros((1, 4 * hd)),
        });
    }
    for i in 0..head_widths.len() - 1 {
        params.push(init(
            format!("head.{i}.weight"),
            head_widths[i],
            head_widths[i + 1],
            &mut rng,
        ));
        params.push(Param {
            name: format!("head.{i}.bias"),
            value: Array2::zeros((1, head_widths[i + 1])),
        });
    }

    Ok(Model {
        spec: spec.clone(),
        intermediate_levels,
        head_widths,
        params,
    })
}

/// A model whose parameters are registered as gradient leaves on a tape.
pub struct BoundModel<'a> {
    model: &'a Model,
    tape: &'a Tape,
    param_vars: Vec<Var>,
}

impl Model {
    pub fn bind<'a>(&'a self, tape: &'a Tape) -> BoundModel<'a> {
        let param_vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), true))
            .collect();
        BoundModel {
            model: self,
            tape,
            param_vars,
        }
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| p.value.dim()).collect()
    }
}

impl BoundModel<'_> {
    /// Runs the network and exposes per-level predictions. Pure: the same
    /// parameters and batch always produce identical output.
    pub fn forward(&self, input: &ModelInput) -> Result<ModelOutput> {
        let head_in = match (self.model.spec.family, input) {
            (ModelFamily::Fnn, ModelInput::Rows(rows)) => self.tape.leaf(rows.clone(), false),
            (ModelFamily::Lstm, ModelInput::Windows(steps)) => {
                if steps.len() != self.model.spec.window {
                    return Err(Error::Shape(format!(
                        "lstm expects a window of {} steps, got {}",
                        self.model.spec.window,
                        steps.len()
                    )));
                }
                self.encode_window(steps)?
            }
            (ModelFamily::Fnn, ModelInput::Windows(_)) => {
                return Err(Error::Shape("fnn takes ModelInput::Rows".into()))
            }
            (ModelFamily::Lstm, ModelInput::Rows(_)) => {
                return Err(Error::Shape("lstm takes ModelInput::Windows".into()))
            }
        };
        self.head(head_in)
    }

    /// Dense head; hidden activations become intermediate-level predictions
    /// on chained models.
    fn head(&self, input: Var) -> Result<ModelOutput> {
        let n_layers = self.model.head_widths.len() - 1;
        let offset = if self.model.spec.family == ModelFamily::Lstm {
            3
        } else {
            0
        };
        let mut levels = Vec::new();
        let mut x = input;
        for i in 0..n_layers {
            let w = self.param_vars[offset + 2 * i];
            let b = self.param_vars[offset + 2 * i + 1];
            let z = self.tape.add_bias(self.tape.matmul(x, w)?, b)?;
            if i + 1 == n_layers {
                // Linear output; evaluation clamps at zero separately.
                x = z;
            } else {
                x = self.tape.relu(z);
                if self.model.spec.cot {
                    levels.push((self.model.intermediate_levels[i].clone(), x));
                }
            }
        }
        levels.push((self.model.spec.target_level.clone(), x));
        Ok(ModelOutput { levels })
    }

    fn encode_window(&self, steps: &[Array2<f64>]) -> Result<Var> {
        let batch = steps[0].nrows();
        let hd = self.model.spec.lstm_hidden;
        let w_x = self.param_vars[0];
        let w_h = self.param_vars[1];
        let bias = self.param_vars[2];
        let mut h = self.tape.leaf(Array2::zeros((batch, hd)), false);
        let mut c = self.tape.leaf(Array2::zeros((batch, hd)), false);
        for step in steps {
            if step.nrows() != batch {
                return Err(Error::Shape(format!(
                    "lstm window steps disagree on batch size: {} vs {}",
                    step.nrows(),
                    batch
                )));
            }
            let x = self.tape.leaf(step.clone(), false);
            (h, c) = lstm_cell(self.tape, x, h, c, w_x, w_h, bias, hd)?;
        }
        Ok(h)
    }

    /// Gradients accumulated on the parameters, aligned with `model.params`.
    pub fn grads(&self) -> Vec<Array2<f64>> {
        self.param_vars.iter().map(|&v| self.tape.grad(v)).collect()
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.param_vars
    }
}

/// Standard LSTM cell. Gate blocks in the 4H axis are ordered
/// input, forget, candidate, output.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell(
    tape: &Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w_x: Var,
    w_h: Var,
    bias: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let gates = tape.add_bias(
        tape.add(tape.matmul(x, w_x)?, tape.matmul(h_prev, w_h)?)?,
        bias,
    )?;
    let i = tape.sigmoid(tape.slice_cols(gates, 0, hidden)?);
    let f = tape.sigmoid(tape.slice_cols(gates, hidden, 2 * hidden)?);
    let g = tape.tanh(tape.slice_cols(gates, 2 * hidden, 3 * hidden)?);
    let o = tape.sigmoid(tape.slice_cols(gates, 3 * hidden, 4 * hidden)?);
    let c = tape.add(tape.mul(f, c_prev)?, tape.mul(i, g)?)?;
    let h = tape.mul(o, tape.tanh(c))?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::CellGrid;

    fn fixture() -> GeoHierarchy {
        GeoHierarchy::regular(
            CellGrid { rows: 4, cols: 4, cell_size_m: 100.0 },
            &[("l0", 1, 1), ("l1", 2, 2), ("l2", 4, 4)],
        )
        .unwrap()
    }

    #[test]
    fn cot_head_widths_follow_hierarchy() {
        let h = fixture();
        let m = build_model(&ModelSpec::fnn("l0", "l2", true), &h, 1).unwrap();
        assert_eq!(m.head_widths, vec![1, 4, 16]);
        assert_eq!(m.intermediate_levels, vec!["l1".to_string()]);
    }

    #[test]
    fn cot_adjacent_task_has_no_intermediates() {
        let h = fixture();
        let m = build_model(&ModelSpec::fnn("l0", "l1", true), &h, 1).unwrap();
        assert_eq!(m.head_widths, vec![1, 4]);
        assert!(m.intermediate_levels.is_empty());
        // Structurally identical to the plain direct map.
        let plain = build_model(
            &ModelSpec {
                hidden_widths: vec![],
                ..ModelSpec::fnn("l0", "l1", false)
            },
            &h,
            1,
        )
        .unwrap();
        assert_eq!(plain.head_widths, m.head_widths);
    }

    #[test]
    fn same_seed_same_parameters() {
        let h = fixture();
        let spec = ModelSpec::fnn("l0", "l2", true);
        let a = build_model(&spec, &h, 9).unwrap();
        let b = build_model(&spec, &h, 9).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value, pb.value);
        }
        let c = build_model(&spec, &h, 10).unwrap();
        assert_ne!(a.params[0].value, c.params[0].value);
    }

    #[test]
    fn invalid_specs_rejected() {
        let h = fixture();
        assert!(build_model(&ModelSpec::fnn("l2", "l0", false), &h, 1).is_err());
        assert!(build_model(&ModelSpec::fnn("l0", "nope", false), &h, 1).is_err());
        let mut bad_window = ModelSpec::fnn("l0", "l2", false);
        bad_window.window = 3;
        assert!(build_model(&bad_window, &h, 1).is_err());
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let h = fixture();
        let mut m = build_model(&ModelSpec::fnn("l0", "l2", true), &h, 1).unwrap();
        for p in &mut m.params {
            p.value.fill(0.0);
        }
        let tape = Tape::new();
        let bound = m.bind(&tape);
        let out = bound
            .forward(&ModelInput::Rows(Array2::from_elem((3, 1), 5.0)))
            .unwrap();
        for (_, v) in &out.levels {
            assert_eq!(tape.value(*v).sum(), 0.0);
        }
    }

    #[test]
    fn batch_size_is_preserved_per_level() {
        let h = fixture();
        let m = build_model(&ModelSpec::fnn("l0", "l2", true), &h, 3).unwrap();
        let tape = Tape::new();
        let out = m
            .bind(&tape)
            .forward(&ModelInput::Rows(Array2::from_elem((7, 1), 1.0)))
            .unwrap();
        assert_eq!(out.levels.len(), 2);
        for (level, v) in &out.levels {
            let (rows, cols) = tape.shape(*v);
            assert_eq!(rows, 7);
            assert_eq!(cols, h.level(level).unwrap().n_units());
        }
    }

    #[test]
    fn forward_is_pure() {
        let h = fixture();
        let m = build_model(&ModelSpec::lstm("l0", "l2", true), &h, 5).unwrap();
        let window: Vec<Array2<f64>> = (0..5)
            .map(|t| Array2::from_elem((2, 1), t as f64))
            .collect();
        let run = || {
            let tape = Tape::new();
            let out = m.bind(&tape).forward(&ModelInput::Windows(window.clone())).unwrap();
            tape.value(out.target())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lstm_zero_state_zero_params_gives_zero() {
        let tape = Tape::new();
        let hd = 4;
        let x = tape.leaf(Array2::zeros((1, 3)), false);
        let h0 = tape.leaf(Array2::zeros((1, hd)), false);
        let c0 = tape.leaf(Array2::zeros((1, hd)), false);
        let w_x = tape.leaf(Array2::zeros((3, 4 * hd)), true);
        let w_h = tape.leaf(Array2::zeros((hd, 4 * hd)), true);
        let b = tape.leaf(Array2::zeros((1, 4 * hd)), true);
        let (h1, c1) = lstm_cell(&tape, x, h0, c0, w_x, w_h, b, hd).unwrap();
        assert_eq!(tape.value(h1).sum(), 0.0);
        assert_eq!(tape.value(c1).sum(), 0.0);
    }

    #[test]
    fn saturated_forget_gate_carries_cell_state() {
        let tape = Tape::new();
        let hd = 2;
        let x = tape.leaf(Array2::zeros((1, 3)), false);
        let h0 = tape.leaf(Array2::zeros((1, hd)), false);
        let c_prev = ndarray::array![[0.3, -1.2]];
        let c0 = tape.leaf(c_prev.clone(), false);
        let w_x = tape.leaf(Array2::zeros((3, 4 * hd)), false);
        let w_h = tape.leaf(Array2::zeros((hd, 4 * hd)), false);
        let mut bias = Array2::zeros((1, 4 * hd));
        for j in hd..2 * hd {
            bias[(0, j)] = 100.0; // forget gate block
        }
        let b = tape.leaf(bias, false);
        let (_, c1) = lstm_cell(&tape, x, h0, c0, w_x, w_h, b, hd).unwrap();
        let c1 = tape.value(c1);
        for j in 0..hd {
            assert!((c1[(0, j)] - c_prev[(0, j)]).abs() < 1e-6);
        }
    }
}
