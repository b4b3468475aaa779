use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

/// The two overlapping segments of a client's training series: steps
/// `[1, s]` feed the inner problem and steps `[s, L]` the outer problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSplit {
    pub inner: Array2<f64>,
    pub outer: Array2<f64>,
    pub s: usize,
}

impl ShardSplit {
    /// Column offset of the outer block inside the full series.
    pub fn outer_offset(&self) -> usize {
        self.s - 1
    }
}

pub fn split_shard(values: ArrayView2<f64>, s_fraction: f64) -> Result<ShardSplit> {
    if !(s_fraction > 0.0 && s_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {s_fraction}"
        )));
    }
    let len = values.ncols();
    let s = ((s_fraction * len as f64).floor() as usize).max(2);
    if s >= len {
        return Err(Error::Shape(format!(
            "series of {len} steps is too short to split at step {s}"
        )));
    }
    Ok(ShardSplit {
        inner: values.slice(s![.., ..s]).to_owned(),
        outer: values.slice(s![.., s - 1..]).to_owned(),
        s,
    })
}

/// Number of leading steps kept for training when the rest of a series is
/// held out for validation.
pub fn train_split_len(len: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let train_len = (train_fraction * len as f64).round() as usize;
    if train_len < 2 || len.saturating_sub(train_len) < 2 {
        return Err(Error::Shape(format!(
            "{len} steps leave no room for a {train_fraction} train/validation split"
        )));
    }
    Ok(train_len)
}

/// Aligned one-step pairs: column `j` of `x_t1` is the step right after
/// column `j` of `x_t`. `indices[j]` is the block column of `x_t[:, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub indices: Vec<usize>,
    pub x_t: Array2<f64>,
    pub x_t1: Array2<f64>,
}

/// Shuffles the pair start indices `0..n_pairs` and chunks them into batches
/// of at most `batch` elements.
pub fn pair_index_batches<R: Rng + ?Sized>(
    n_pairs: usize,
    batch: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let batch = batch.max(1);
    let mut idx: Vec<usize> = (0..n_pairs).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// One epoch of shuffled pair batches over every adjacent pair in `block`.
pub fn make_pair_batches<R: Rng + ?Sized>(
    block: ArrayView2<f64>,
    batch: usize,
    rng: &mut R,
) -> Vec<PairBatch> {
    let n_pairs = block.ncols().saturating_sub(1);
    pair_index_batches(n_pairs, batch, rng)
        .into_iter()
        .map(|indices| {
            let next: Vec<usize> = indices.iter().map(|i| i + 1).collect();
            PairBatch {
                x_t: block.select(Axis(1), &indices),
                x_t1: block.select(Axis(1), &next),
                indices,
            }
        })
        .collect()
}

/// A multi-step target window: `targets[:, 0]` is `y0` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub y0: Array1<f64>,
    pub targets: Array2<f64>,
    /// Block column of `y0`.
    pub start_index: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.targets.ncols()
    }
}

/// Tiles `block` with non-overlapping windows of `horizon` steps. A shorter
/// final window is kept when it has at least two steps.
pub fn make_trajectories(block: ArrayView2<f64>, horizon: usize) -> Result<Vec<Trajectory>> {
    if horizon < 2 {
        return Err(Error::InvalidParameter(format!(
            "trajectory horizon must be at least 2, got {horizon}"
        )));
    }
    let len = block.ncols();
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + horizon).min(len);
        if end - start >= 2 {
            let targets = block.slice(s![.., start..end]).to_owned();
            out.push(Trajectory {
                y0: targets.column(0).to_owned(),
                targets,
                start_index: start,
            });
        }
        start = end;
    }
    Ok(out)
}
