//! Synthetic drift-stream generation.
//!
//! A stream draws one global pair of factor matrices and controls each
//! batch's rank purely through the evolving factor: rows of `C` belonging to
//! a batch are uniform(0,1) on that batch's active concepts and exactly zero
//! elsewhere. The first batch activates the first `initial_rank` concepts,
//! the last batch activates all of them, and middle batches keep the initial
//! concepts as a persistent core plus a random complement (deterministic
//! nested prefixes when an explicit rank schedule is given).

use crate::error::{Error, Result};
use crate::model::{reconstruct_weighted, FactorModel};
use crate::scalar::{cast, Scalar};
use crate::tensor::DenseTensor3;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Optional control over per-batch concept activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    /// First batch = initial rank, last = full rank, middle sizes random.
    Auto,
    /// Explicit per-batch ranks; batch `b` activates concepts `0..rank[b]`.
    Ranks(Vec<usize>),
    /// Explicit per-batch concept index sets.
    ActiveSets(Vec<Vec<usize>>),
}

/// Parameters of one synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub dims: (usize, usize, usize),
    pub initial_rank: usize,
    pub full_rank: usize,
    /// Third-mode length of each batch; must divide `dims.2`.
    pub batch_size: usize,
    /// Per-entry Gaussian noise of scale
    /// `noise_sigma · ‖batch‖_F / sqrt(I·J·batch_size)`; 0 disables noise.
    pub noise_sigma: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl StreamSpec {
    pub fn num_batches(&self) -> usize {
        if self.batch_size == 0 {
            0
        } else {
            self.dims.2 / self.batch_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (i, j, k) = self.dims;
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidParameter("dims must be positive".into()));
        }
        if !(1 <= self.initial_rank
            && self.initial_rank <= self.full_rank
            && self.full_rank <= i.min(j))
        {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= initial_rank <= full_rank <= min(I,J); got {} <= {} <= {}",
                self.initial_rank,
                self.full_rank,
                i.min(j)
            )));
        }
        if self.batch_size == 0 || k % self.batch_size != 0 {
            return Err(Error::InvalidParameter(format!(
                "batch_size {} must divide K = {k}",
                self.batch_size
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        let n = self.num_batches();
        match &self.schedule {
            Schedule::Auto => {
                if n == 1 && self.initial_rank != self.full_rank {
                    return Err(Error::InvalidParameter(
                        "a single-batch stream needs initial_rank == full_rank".into(),
                    ));
                }
            }
            Schedule::Ranks(ranks) => {
                if ranks.len() != n {
                    return Err(Error::InvalidParameter(format!(
                        "schedule has {} ranks for {n} batches",
                        ranks.len()
                    )));
                }
                if ranks[0] != self.initial_rank || ranks[n - 1] != self.full_rank {
                    return Err(Error::InvalidParameter(
                        "scheduled ranks must start at initial_rank and end at full_rank".into(),
                    ));
                }
                if ranks
                    .iter()
                    .any(|&r| r < self.initial_rank || r > self.full_rank)
                {
                    return Err(Error::InvalidParameter(
                        "scheduled ranks must lie in [initial_rank, full_rank]".into(),
                    ));
                }
            }
            Schedule::ActiveSets(sets) => {
                if sets.len() != n {
                    return Err(Error::InvalidParameter(format!(
                        "schedule has {} active sets for {n} batches",
                        sets.len()
                    )));
                }
                let mut seen = vec![false; self.full_rank];
                for (b, set) in sets.iter().enumerate() {
                    if set.is_empty()
                        || set.len() < self.initial_rank
                        || set.len() > self.full_rank
                    {
                        return Err(Error::InvalidParameter(format!(
                            "active set {b} has size {} outside [{}, {}]",
                            set.len(),
                            self.initial_rank,
                            self.full_rank
                        )));
                    }
                    let mut sorted = set.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != set.len() || *sorted.last().unwrap() >= self.full_rank {
                        return Err(Error::InvalidParameter(format!(
                            "active set {b} has duplicate or out-of-range concepts"
                        )));
                    }
                    for &c in set {
                        seen[c] = true;
                    }
                }
                if sets[0].len() != self.initial_rank || sets[n - 1].len() != self.full_rank {
                    return Err(Error::InvalidParameter(
                        "first active set must have initial_rank concepts and the last all of them"
                            .into(),
                    ));
                }
                if !seen.iter().all(|&s| s) {
                    return Err(Error::InvalidParameter(
                        "active sets must jointly cover every concept".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A generated stream together with everything needed to score a method
/// against it.
#[derive(Debug, Clone)]
pub struct GroundTruth<T> {
    /// Global model: normalized `A`, `B`, the block-zero `C` and unit
    /// weights.
    pub factors: FactorModel<T>,
    pub batch_ranks: Vec<usize>,
    pub active_sets: Vec<Vec<usize>>,
    pub batches: Vec<DenseTensor3<T>>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Mode-3 concatenation of every batch.
    pub fn concatenated(&self) -> DenseTensor3<T> {
        crate::tensor::concat_all(&self.batches).expect("generated batches share I and J")
    }

    /// Whether batch `b`'s active set differs from the union of everything
    /// active before it — the drift a correctly tracking stream flags.
    pub fn expected_drift(&self, b: usize) -> bool {
        debug_assert!(b > 0 && b < self.batches.len());
        let mut seen = vec![false; self.factors.rank()];
        for set in &self.active_sets[..b] {
            for &c in set {
                seen[c] = true;
            }
        }
        let seen_count = seen.iter().filter(|&&s| s).count();
        let set = &self.active_sets[b];
        set.len() != seen_count || set.iter().any(|&c| !seen[c])
    }
}

/// Per-batch true rank (the oracle feed for known-rank experiments).
pub fn batch_oracle_rank<T: Scalar>(gt: &GroundTruth<T>, b: usize) -> Result<usize> {
    gt.batch_ranks
        .get(b)
        .copied()
        .ok_or_else(|| Error::InvalidParameter(format!("batch index {b} out of range")))
}

fn normalized_uniform<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| cast::<T>(rng.random::<f64>()));
    for mut col in m.columns_mut() {
        let norm = col.iter().map(|&x| x * x).sum::<T>().sqrt();
        col.mapv_inplace(|v| v / norm);
    }
    m
}

fn active_sets_for<T: Scalar>(spec: &StreamSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = spec.num_batches();
    match &spec.schedule {
        Schedule::ActiveSets(sets) => sets.clone(),
        Schedule::Ranks(ranks) => ranks.iter().map(|&r| (0..r).collect()).collect(),
        Schedule::Auto => {
            let mut sets = Vec::with_capacity(n);
            for b in 0..n {
                if b == 0 {
                    sets.push((0..spec.initial_rank).collect());
                } else if b == n - 1 {
                    sets.push((0..spec.full_rank).collect());
                } else {
                    let size = rng.random_range(spec.initial_rank..=spec.full_rank);
                    let mut set: Vec<usize> = (0..spec.initial_rank).collect();
                    let extras = size - spec.initial_rank;
                    let pool = spec.full_rank - spec.initial_rank;
                    if extras > 0 {
                        let chosen = rand::seq::index::sample(rng, pool, extras);
                        set.extend(chosen.iter().map(|i| spec.initial_rank + i));
                    }
                    set.sort_unstable();
                    sets.push(set);
                }
            }
            sets
        }
    }
}

/// Generates the stream. Deterministic per seed: factor entries, middle-batch
/// active sets, the per-batch `C` rows and the optional noise are all drawn
/// from one seeded generator in a fixed order.
pub fn generate_stream<T: Scalar>(spec: &StreamSpec) -> Result<GroundTruth<T>> {
    spec.validate()?;
    let (ni, nj, nk) = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = normalized_uniform::<T>(ni, spec.full_rank, &mut rng);
    let b = normalized_uniform::<T>(nj, spec.full_rank, &mut rng);
    let active_sets = active_sets_for::<T>(spec, &mut rng);
    let batch_ranks: Vec<usize> = active_sets.iter().map(|s| s.len()).collect();

    let n = spec.num_batches();
    let mut c_global = Array2::<T>::zeros((nk, spec.full_rank));
    for (bi, set) in active_sets.iter().enumerate() {
        let row0 = bi * spec.batch_size;
        for &col in set {
            for row in row0..row0 + spec.batch_size {
                c_global[(row, col)] = cast::<T>(rng.random::<f64>());
            }
        }
    }

    let ones = Array1::from_elem(spec.full_rank, T::one());
    let mut batches = Vec::with_capacity(n);
    for bi in 0..n {
        let rows = c_global.slice(ndarray::s![
            bi * spec.batch_size..(bi + 1) * spec.batch_size,
            ..
        ]);
        let mut batch = reconstruct_weighted(&a, &b, &rows.to_owned(), &ones);
        if spec.noise_sigma > 0.0 {
            let norm = batch.frobenius_norm();
            let scale = cast::<T>(spec.noise_sigma)
                * norm
                * (cast::<T>((ni * nj * spec.batch_size) as f64)).sqrt().recip();
            let dims = batch.dims();
            let mut values = batch.values().to_vec();
            for v in values.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += scale * cast::<T>(z);
            }
            batch = DenseTensor3::new(dims, values)?;
        }
        batches.push(batch);
    }

    let factors = FactorModel::new(a, b, c_global, ones, false)?;
    Ok(GroundTruth {
        factors,
        batch_ranks,
        active_sets,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cp::{cp_als, AlsOptions};
    use crate::tensor::relative_error;

    fn sds1_like() -> StreamSpec {
        // The 100³ design scaled down for unit-test speed: same initial/full
        // rank pattern and batch count.
        StreamSpec {
            dims: (30, 30, 50),
            initial_rank: 2,
            full_rank: 5,
            batch_size: 5,
            noise_sigma: 0.0,
            seed: 7,
            schedule: Schedule::Auto,
        }
    }

    #[test]
    fn first_and_last_batch_ranks_pin_the_design() {
        let gt: GroundTruth<f64> = generate_stream(&sds1_like()).unwrap();
        assert_eq!(gt.num_batches(), 10);
        assert_eq!(gt.batch_ranks[0], 2);
        assert_eq!(gt.batch_ranks[9], 5);
        for (set, &rank) in gt.active_sets.iter().zip(&gt.batch_ranks) {
            assert_eq!(set.len(), rank);
            assert!(rank >= 2 && rank <= 5);
        }
        // Union covers every concept.
        let mut seen = vec![false; 5];
        for set in &gt.active_sets {
            for &c in set {
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn explicit_schedule_is_verbatim() {
        let schedule = vec![2, 4, 3, 4, 3, 3, 5, 3, 3, 5];
        let spec = StreamSpec {
            schedule: Schedule::Ranks(schedule.clone()),
            ..sds1_like()
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        assert_eq!(gt.batch_ranks, schedule);
        assert_eq!(batch_oracle_rank(&gt, 0).unwrap(), 2);
        assert_eq!(batch_oracle_rank(&gt, 9).unwrap(), 5);
        assert!(batch_oracle_rank(&gt, 10).is_err());
    }

    #[test]
    fn noiseless_batches_are_exactly_low_rank() {
        let gt: GroundTruth<f64> = generate_stream(&sds1_like()).unwrap();
        let opts = AlsOptions {
            tol: 1e-13,
            max_iters: 300,
            ..AlsOptions::default()
        };
        for b in [0usize, 9] {
            let rank = gt.batch_ranks[b];
            let m = cp_als(&gt.batches[b], rank, &opts).unwrap();
            let err = relative_error(&gt.batches[b], &m.reconstruct()).unwrap();
            assert!(err < 1e-5, "batch {b} err {err}");
            if rank > 1 {
                let m = cp_als(&gt.batches[b], rank - 1, &AlsOptions::default()).unwrap();
                let err = relative_error(&gt.batches[b], &m.reconstruct()).unwrap();
                assert!(err > 1e-3, "batch {b} under-rank err {err} suspiciously low");
            }
        }
    }

    #[test]
    fn concatenation_equals_global_model() {
        let gt: GroundTruth<f64> = generate_stream(&sds1_like()).unwrap();
        let whole = gt.concatenated();
        let err = relative_error(&whole, &gt.factors.reconstruct()).unwrap();
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let spec = sds1_like();
        let g1: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let g2: GroundTruth<f64> = generate_stream(&spec).unwrap();
        assert_eq!(g1.batches, g2.batches);
        assert_eq!(g1.active_sets, g2.active_sets);
        let other = StreamSpec {
            seed: 8,
            ..spec
        };
        let g3: GroundTruth<f64> = generate_stream(&other).unwrap();
        assert_ne!(g1.batches[0], g3.batches[0]);
    }

    #[test]
    fn noise_scales_with_sigma() {
        let clean: GroundTruth<f64> = generate_stream(&sds1_like()).unwrap();
        let spec = StreamSpec {
            noise_sigma: 0.1,
            ..sds1_like()
        };
        let noisy: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let rel = relative_error(&clean.batches[0], &noisy.batches[0]).unwrap();
        assert!(rel > 0.05 && rel < 0.2, "noise level {rel} far from sigma");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = sds1_like();
        spec.batch_size = 7; // does not divide 50
        assert!(spec.validate().is_err());
        let mut spec = sds1_like();
        spec.full_rank = 40; // exceeds min(I, J)
        assert!(spec.validate().is_err());
        let mut spec = sds1_like();
        spec.schedule = Schedule::Ranks(vec![2; 10]); // last != full rank
        assert!(spec.validate().is_err());
    }

    #[test]
    fn expected_drift_tracks_set_changes() {
        let spec = StreamSpec {
            schedule: Schedule::Ranks(vec![2, 4, 3, 4, 3, 3, 5, 3, 3, 5]),
            ..sds1_like()
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let flags: Vec<bool> = (1..10).map(|b| gt.expected_drift(b)).collect();
        // Nested prefixes: no drift exactly when the batch re-activates
        // everything seen so far.
        assert_eq!(
            flags,
            vec![true, true, false, true, true, true, true, true, false]
        );
    }
}
