use ndarray::Array2;

use crate::error::Result;

/// Central finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Compares analytic gradients against central finite differences of `eval`
/// and returns the worst per-coordinate relative error.
///
/// The relative error of a coordinate is `|ad − fd| / max(|ad|, |fd|, 0.01)`;
/// the floor keeps finite-difference round-off on near-zero gradients from
/// dominating the ratio.
pub fn max_relative_error(
    params: &[Array2<f64>],
    analytic: &[Array2<f64>],
    mut eval: impl FnMut(&[Array2<f64>]) -> Result<f64>,
    step: f64,
) -> Result<f64> {
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        assert_eq!(params[i].dim(), analytic[i].dim());
        for idx in ndarray::indices(params[i].dim()) {
            let orig = work[i][idx];
            work[i][idx] = orig + step;
            let up = eval(&work)?;
            work[i][idx] = orig - step;
            let down = eval(&work)?;
            work[i][idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = analytic[i][idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// loss = mean(|W·x − y|) checked on random 5×7 problems.
    #[test]
    fn l1_of_linear_map_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let w = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
            let x = Array2::from_shape_fn((7, 1), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((5, 1), |_| rng.random_range(-1.0..1.0));

            let eval = |p: &[Array2<f64>]| {
                let tape = Tape::new();
                let wv = tape.leaf(p[0].clone(), true);
                let xv = tape.leaf(x.clone(), false);
                let yv = tape.leaf(y.clone(), false);
                let pred = tape.matmul(wv, xv)?;
                Ok(tape.scalar_value(tape.l1_loss(pred, yv)?))
            };

            let tape = Tape::new();
            let wv = tape.leaf(w.clone(), true);
            let xv = tape.leaf(x.clone(), false);
            let yv = tape.leaf(y.clone(), false);
            let pred = tape.matmul(wv, xv).unwrap();
            let loss = tape.l1_loss(pred, yv).unwrap();
            tape.backward(loss).unwrap();
            let analytic = vec![tape.grad(wv)];

            let err = max_relative_error(&[w], &analytic, eval, FD_STEP).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let w = array![[2.0]];
        let eval = |p: &[Array2<f64>]| Ok(p[0][(0, 0)] * p[0][(0, 0)]);
        let wrong = vec![array![[1.0]]]; // true gradient is 4
        let err = max_relative_error(&[w], &wrong, eval, FD_STEP).unwrap();
        assert!(err > 0.5);
    }
}
