use std::ops::Range;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::seed::{self, Stream};
use crate::{Error, Result};

/// One line of a partition manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub client_id: usize,
    pub start: usize,
    pub end: usize,
}

/// Splits `len` time steps into `n_clients` contiguous blocks whose sizes
/// follow proportions drawn once from `Dirichlet(alpha, ..., alpha)`.
///
/// Sizes are rounded and then repaired so that they sum to `len` and every
/// client receives at least one step.
pub fn dirichlet_partition(
    len: usize,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Range<usize>>> {
    if n_clients == 0 {
        return Err(Error::InvalidParameter("need at least one client".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if len < n_clients {
        return Err(Error::InvalidParameter(format!(
            "cannot split {len} steps across {n_clients} clients"
        )));
    }

    let mut rng = seed::rng(seed, 0, 0, Stream::Partition);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|g| *g /= total);
    } else {
        // Every gamma draw underflowed (tiny alpha): fall back to uniform.
        draws.iter_mut().for_each(|g| *g = 1.0 / n_clients as f64);
    }

    let targets: Vec<f64> = draws.iter().map(|p| p * len as f64).collect();
    let mut sizes: Vec<usize> = targets
        .iter()
        .map(|t| (t.round() as usize).max(1))
        .collect();

    let mut assigned: usize = sizes.iter().sum();
    while assigned < len {
        // Grow the client furthest below its target.
        let i = argmax(n_clients, |i| targets[i] - sizes[i] as f64, |_| true);
        sizes[i] += 1;
        assigned += 1;
    }
    while assigned > len {
        let i = argmax(
            n_clients,
            |i| sizes[i] as f64 - targets[i],
            |i| sizes[i] > 1,
        );
        sizes[i] -= 1;
        assigned -= 1;
    }

    let mut start = 0;
    Ok(sizes
        .into_iter()
        .map(|size| {
            let r = start..start + size;
            start += size;
            r
        })
        .collect())
}

fn argmax(n: usize, key: impl Fn(usize) -> f64, eligible: impl Fn(usize) -> bool) -> usize {
    let mut best = None;
    for i in (0..n).filter(|&i| eligible(i)) {
        match best {
            Some((_, k)) if key(i) <= k => {}
            _ => best = Some((i, key(i))),
        }
    }
    best.expect("at least one eligible client").0
}

impl PartitionEntry {
    pub fn from_ranges(ranges: &[Range<usize>]) -> Vec<PartitionEntry> {
        ranges
            .iter()
            .enumerate()
            .map(|(client_id, r)| PartitionEntry {
                client_id,
                start: r.start,
                end: r.end,
            })
            .collect()
    }
}
