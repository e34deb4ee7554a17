//! Fixed-rank streaming baseline.
//!
//! Every batch is decomposed at one fixed rank, components are aligned to
//! the first batch by maximum-similarity assignment (no threshold — a match
//! is always forced), `A` and `B` are averaged across batches and the
//! evolving factor is stacked with each batch's weights folded in. This
//! isolates the fixed-rank assumption shared by conventional streaming
//! decompositions.

use crate::cp::{cp_als, AlsOptions};
use crate::error::{Error, Result};
use crate::matching::{best_assignment, similarity_matrix};
use crate::mix_seed;
use crate::model::FactorModel;
use crate::scalar::Scalar;
use crate::tensor::{concat_all, relative_error, DenseTensor3};
use ndarray::{concatenate, Array1, Array2, Axis};

/// Which experiment arm a fixed rank stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankChoice {
    /// The rank of the stream's first batch.
    InitialRank,
    /// The "oracle" rank of the full tensor.
    FullRank,
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    pub rank_mode: RankChoice,
    pub rank: usize,
    pub als: AlsOptions,
}

/// Decomposes each batch at `cfg.rank`, fuses the per-batch models into one
/// full-stream model and reports its relative error against the
/// concatenated stream.
pub fn fixed_rank_stream<T: Scalar>(
    batches: &[DenseTensor3<T>],
    cfg: &BaselineConfig,
) -> Result<(FactorModel<T>, T)> {
    if cfg.rank < 1 {
        return Err(Error::InvalidParameter("baseline rank must be >= 1".into()));
    }
    if batches.is_empty() {
        return Err(Error::InvalidParameter(
            "baseline needs at least one batch".into(),
        ));
    }
    let (ni, nj, _) = batches[0].dims();
    for (b, x) in batches.iter().enumerate() {
        let (bi, bj, _) = x.dims();
        if (bi, bj) != (ni, nj) {
            return Err(Error::DimensionMismatch(format!(
                "batch {b} dims ({bi}, {bj}) differ from ({ni}, {nj})"
            )));
        }
    }

    let mut reference_a: Option<Array2<T>> = None;
    let mut a_sum = Array2::<T>::zeros((ni, 0));
    let mut b_sum = Array2::<T>::zeros((nj, 0));
    let mut counts: Vec<usize> = Vec::new();
    let mut c_blocks: Vec<Array2<T>> = Vec::new();

    for (bi, x) in batches.iter().enumerate() {
        let als = AlsOptions {
            seed: mix_seed(cfg.als.seed, bi as u64),
            ..cfg.als
        };
        let model = cp_als(x, cfg.rank, &als)?;
        let k_new = x.dims().2;
        match &reference_a {
            None => {
                let r = model.rank();
                a_sum = model.a.clone();
                b_sum = model.b.clone();
                counts = vec![1; r];
                let mut block = Array2::<T>::zeros((k_new, r));
                for col in 0..r {
                    let l = model.lambda[col];
                    for row in 0..k_new {
                        block[(row, col)] = model.c[(row, col)] * l;
                    }
                }
                c_blocks.push(block);
                reference_a = Some(model.a);
            }
            Some(ref_a) => {
                let r = ref_a.ncols();
                let sim = similarity_matrix(ref_a, &model.a, true)?;
                let pairs = best_assignment(&sim);
                let mut block = Array2::<T>::zeros((k_new, r));
                for &(ref_col, batch_col) in &pairs {
                    let l = model.lambda[batch_col];
                    for row in 0..k_new {
                        block[(row, ref_col)] = model.c[(row, batch_col)] * l;
                    }
                    for row in 0..ni {
                        a_sum[(row, ref_col)] += model.a[(row, batch_col)];
                    }
                    for row in 0..nj {
                        b_sum[(row, ref_col)] += model.b[(row, batch_col)];
                    }
                    counts[ref_col] += 1;
                }
                c_blocks.push(block);
            }
        }
    }

    let r = a_sum.ncols();
    let mut lambda = Array1::<T>::zeros(r);
    for col in 0..r {
        let n = T::from_usize(counts[col]).expect("count fits the scalar");
        let mut na = T::zero();
        let mut nb = T::zero();
        for row in 0..ni {
            a_sum[(row, col)] /= n;
            na += a_sum[(row, col)] * a_sum[(row, col)];
        }
        for row in 0..nj {
            b_sum[(row, col)] /= n;
            nb += b_sum[(row, col)] * b_sum[(row, col)];
        }
        let (na, nb) = (na.sqrt(), nb.sqrt());
        if na == T::zero() || nb == T::zero() {
            return Err(Error::DegenerateComponent { index: col });
        }
        for row in 0..ni {
            a_sum[(row, col)] /= na;
        }
        for row in 0..nj {
            b_sum[(row, col)] /= nb;
        }
        lambda[col] = na * nb;
    }

    let c_views: Vec<_> = c_blocks.iter().map(|b| b.view()).collect();
    let c_full = concatenate(Axis(0), &c_views).expect("blocks share the column count");
    let model = FactorModel::new(a_sum, b_sum, c_full, lambda, false)?;
    let err = relative_error(&concat_all(batches)?, &model.reconstruct())?;
    Ok((model, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_stream, GroundTruth, Schedule, StreamSpec};
    use crate::stream::{init_state, RankSource, StreamOptions};

    fn cfg(rank: usize) -> BaselineConfig {
        BaselineConfig {
            rank_mode: RankChoice::InitialRank,
            rank,
            als: AlsOptions {
                tol: 1e-12,
                ..AlsOptions::default()
            },
        }
    }

    #[test]
    fn single_batch_matches_plain_decomposition() {
        let spec = StreamSpec {
            dims: (15, 15, 5),
            initial_rank: 2,
            full_rank: 2,
            batch_size: 5,
            noise_sigma: 0.0,
            seed: 3,
            schedule: Schedule::Auto,
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let (_, err) = fixed_rank_stream(&gt.batches, &cfg(2)).unwrap();
        let direct = cp_als(
            &gt.batches[0],
            2,
            &AlsOptions {
                seed: mix_seed(cfg(2).als.seed, 0),
                ..cfg(2).als
            },
        )
        .unwrap();
        let direct_err = relative_error(&gt.batches[0], &direct.reconstruct()).unwrap();
        assert!((err - direct_err).abs() < 1e-12);
    }

    #[test]
    fn constant_stream_at_true_rank_is_exact_for_both_methods() {
        // One fixed batch repeated: the exact-recovery regime equalizes the
        // baseline and the adaptive stream.
        let spec = StreamSpec {
            dims: (15, 15, 4),
            initial_rank: 3,
            full_rank: 3,
            batch_size: 4,
            noise_sigma: 0.0,
            seed: 11,
            schedule: Schedule::Auto,
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let batches = vec![gt.batches[0].clone(); 3];
        let (_, base_err) = fixed_rank_stream(&batches, &cfg(3)).unwrap();
        assert!(base_err < 1e-4, "baseline err {base_err}");

        let opts = StreamOptions {
            als: AlsOptions {
                tol: 1e-12,
                ..AlsOptions::default()
            },
            ..StreamOptions::default()
        };
        let (mut state, _) = init_state(&batches[0], RankSource::Oracle(3), &opts).unwrap();
        for b in &batches[1..] {
            state.process_batch(b, RankSource::Oracle(3), &opts).unwrap();
        }
        let adaptive_err =
            relative_error(&concat_all(&batches).unwrap(), &state.reconstruct_stream()).unwrap();
        assert!(adaptive_err < 1e-4, "adaptive err {adaptive_err}");
    }

    #[test]
    fn full_rank_on_always_active_stream_is_exact() {
        let spec = StreamSpec {
            dims: (20, 20, 12),
            initial_rank: 3,
            full_rank: 3,
            batch_size: 4,
            noise_sigma: 0.0,
            seed: 5,
            schedule: Schedule::Ranks(vec![3, 3, 3]),
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let config = BaselineConfig {
            rank_mode: RankChoice::FullRank,
            ..cfg(3)
        };
        let (model, err) = fixed_rank_stream(&gt.batches, &config).unwrap();
        assert_eq!(model.dims().2, 12);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn drifting_stream_hurts_initial_rank_baseline() {
        let spec = StreamSpec {
            dims: (25, 25, 40),
            initial_rank: 2,
            full_rank: 6,
            batch_size: 5,
            noise_sigma: 0.0,
            seed: 17,
            schedule: Schedule::Auto,
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let (_, base_err) = fixed_rank_stream(&gt.batches, &cfg(2)).unwrap();

        let opts = StreamOptions::default();
        let (mut state, _) =
            init_state(&gt.batches[0], RankSource::Oracle(gt.batch_ranks[0]), &opts).unwrap();
        for b in 1..gt.num_batches() {
            state
                .process_batch(&gt.batches[b], RankSource::Oracle(gt.batch_ranks[b]), &opts)
                .unwrap();
        }
        let adaptive_err =
            relative_error(&gt.concatenated(), &state.reconstruct_stream()).unwrap();
        assert!(
            adaptive_err < base_err,
            "adaptive {adaptive_err} should beat fixed-initial {base_err}"
        );
    }

    #[test]
    fn baseline_is_deterministic() {
        let spec = StreamSpec {
            dims: (12, 12, 9),
            initial_rank: 2,
            full_rank: 3,
            batch_size: 3,
            noise_sigma: 0.0,
            seed: 23,
            schedule: Schedule::Auto,
        };
        let gt: GroundTruth<f64> = generate_stream(&spec).unwrap();
        let (m1, e1) = fixed_rank_stream(&gt.batches, &cfg(2)).unwrap();
        let (m2, e2) = fixed_rank_stream(&gt.batches, &cfg(2)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(e1, e2);
    }
}
