use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::CountFrame;
use crate::error::{Error, Result};

/// Shuffled mini-batches of label rows for windowed training.
///
/// Each sample is the row index of a labeled hour; its input is the window of
/// `window` consecutive source rows ending there, so the first `window − 1`
/// rows are never used as labels. Pass a per-epoch seed to reshuffle.
pub fn window_batches(
    frame: &CountFrame,
    window: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if window == 0 || batch_size == 0 {
        return Err(Error::Config("window and batch size must be ≥ 1".into()));
    }
    if frame.n_hours() < window {
        return Err(Error::Data(format!(
            "frame has {} hours, shorter than the window {}",
            frame.n_hours(),
            window
        )));
    }
    let mut labels: Vec<usize> = (window - 1..frame.n_hours()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    Ok(labels.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Stacks the given frame rows into a batch matrix.
pub fn gather_rows(frame: &CountFrame, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), frame.n_units()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&frame.counts.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> CountFrame {
        CountFrame::new(
            "l",
            (0..n as i64).collect(),
            Array2::from_shape_fn((n, 2), |(r, c)| (r * 2 + c) as f64),
        )
        .unwrap()
    }

    #[test]
    fn window_five_on_ten_hours_gives_six_samples() {
        let batches = window_batches(&frame(10), 5, 8, 0).unwrap();
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 6);
        assert!(batches
            .iter()
            .flatten()
            .all(|&r| (4..10).contains(&r)));
    }

    #[test]
    fn window_one_is_plain_batching() {
        let batches = window_batches(&frame(6), 1, 2, 3).unwrap();
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn same_seed_same_order() {
        let a = window_batches(&frame(20), 3, 4, 7).unwrap();
        let b = window_batches(&frame(20), 3, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = window_batches(&frame(20), 3, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn short_frame_rejected() {
        assert!(window_batches(&frame(3), 5, 2, 0).is_err());
    }

    #[test]
    fn gather_rows_copies_in_order() {
        let f = frame(4);
        let m = gather_rows(&f, &[2, 0]);
        assert_eq!(m, ndarray::array![[4.0, 5.0], [0.0, 1.0]]);
    }
}
