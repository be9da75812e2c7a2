use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::data::Dataset;
use crate::error::{Error, Result};

/// Draws one point from the symmetric Dirichlet distribution of the given dimension.
pub fn sample_dirichlet<R: Rng + ?Sized>(dim: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::contract(format!("dirichlet alpha: {e}")))?;
    let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        // all gammas underflowed (tiny alpha): put the mass on one random coordinate
        let mut q = vec![0.0; dim];
        q[rng.random_range(0..dim)] = 1.0;
        Ok(q)
    }
}

/// Splits `data` across `workers` non-i.i.d. shards.
///
/// Each worker draws `q_m ~ Dir(alpha)` over the classes; the samples of class
/// `k` are then dealt out in proportion to `q_{m,k}` (largest-remainder
/// rounding), so the shards partition the input exactly. A worker left empty
/// takes one sample from the currently largest shard.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    data: &Dataset,
    workers: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if workers == 0 {
        return Err(Error::contract("need at least one worker"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::contract("dirichlet alpha must be positive and finite"));
    }
    if workers > data.len() {
        return Err(Error::InfeasiblePartition {
            workers,
            samples: data.len(),
        });
    }
    let classes = data.classes();
    let q: Vec<Vec<f64>> = (0..workers)
        .map(|_| sample_dirichlet(classes, alpha, rng))
        .collect::<Result<_>>()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); workers];
    for (k, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let weights: Vec<f64> = q.iter().map(|qm| qm[k]).collect();
        let counts = apportion(members.len(), &weights);
        let mut start = 0;
        for (m, &count) in counts.iter().enumerate() {
            shards[m].extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..workers)
            .max_by_key(|&m| (shards[m].len(), std::cmp::Reverse(m)))
            .expect("workers >= 1");
        let moved = shards[donor].pop().expect("donor holds at least two samples");
        shards[empty].push(moved);
    }

    Ok(shards.iter().map(|idx| data.subset(idx)).collect())
}

/// Largest-remainder split of `total` items proportional to `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &m in order.iter().take(total.saturating_sub(assigned)) {
        counts[m] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_conserves_total() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(7, &[0.0, 0.0]).iter().sum::<usize>(), 7);
        assert_eq!(apportion(3, &[1e-300, 1.0, 1e-300]), vec![0, 3, 0]);
    }
}
