//! Streaming decomposition state: per-batch rank estimation, decomposition,
//! concept matching, evolving-factor updates, scale bookkeeping and drift
//! flagging.
//!
//! Concepts keep their global column index forever; new concepts append at
//! the end in batch-column order. For every batch in which a concept is
//! missing, its rows of the evolving factor are exactly zero and its scale
//! accumulator receives zero.

use crate::cp::{cp_als, AlsOptions};
use crate::error::{Error, Result};
use crate::matching::{find_concept_overlap_with_b, MatchOptions, MatchResult};
use crate::mix_seed;
use crate::model::reconstruct_weighted;
use crate::rank::{estimate_rank, RankEstimate};
use crate::scalar::{cast, Scalar};
use crate::tensor::DenseTensor3;
use ndarray::{concatenate, s, Array1, Array2, Axis};
use std::io::{Read, Write};
use std::path::Path;

/// Where a batch's rank comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankSource {
    /// Core-consistency search up to `running_rank + rank_headroom`.
    Estimated,
    /// Ground-truth rank injected by the caller.
    Oracle(usize),
}

/// Options shared by every batch of a stream run.
#[derive(Debug, Clone, Copy)]
pub struct StreamOptions {
    /// Root ALS options; each batch derives its seed as
    /// `mix_seed(als.seed, batch_index)`.
    pub als: AlsOptions,
    pub matching: MatchOptions,
    /// Candidate sweep headroom over the running rank in estimated mode.
    pub rank_headroom: usize,
    /// Candidate sweep bound for the very first batch, where no running
    /// rank exists yet.
    pub init_max_rank: usize,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            als: AlsOptions::default(),
            matching: MatchOptions::default(),
            rank_headroom: 3,
            init_max_rank: 8,
        }
    }
}

/// Per-batch outcome. `batch_rank` is the rank of the fitted batch model
/// (it equals the estimated or injected rank unless degenerate components
/// were dropped); a skipped all-zero batch reports `batch_rank = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftReport {
    pub batch_index: usize,
    pub batch_rank: usize,
    pub new_count: usize,
    pub overlap_count: usize,
    /// Running rank at match time minus the overlap count.
    pub missing_count: usize,
    pub drift_detected: bool,
    pub running_rank_after: usize,
}

/// Accumulated global factors, scale sums and running rank of a stream.
///
/// Single-writer: batches are processed strictly in arrival order. The
/// state is plain data and can be cloned for concurrent readers between
/// updates.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState<T> {
    /// `I × running_rank`, unit columns.
    pub a_upd: Array2<T>,
    /// `J × running_rank`, unit columns.
    pub b_upd: Array2<T>,
    /// `K_total × running_rank`; per-batch blocks of the evolving mode.
    pub c_upd: Array2<T>,
    /// Per-concept sums of batch scales.
    pub rho: Array1<T>,
    pub running_rank: usize,
    pub batches_seen: usize,
    pub k_total: usize,
}

/// Decomposes the first batch and seeds the state. The first batch defines
/// the running rank; no drift is reported for it.
pub fn init_state<T: Scalar>(
    first_batch: &DenseTensor3<T>,
    rank: RankSource,
    opts: &StreamOptions,
) -> Result<(StreamState<T>, DriftReport)> {
    opts.matching.validate()?;
    let (ni, nj, nk) = first_batch.dims();
    if ni == 0 || nj == 0 || nk == 0 {
        return Err(Error::InvalidParameter(
            "the first batch must be nonempty".into(),
        ));
    }
    let als = AlsOptions {
        seed: mix_seed(opts.als.seed, 0),
        ..opts.als
    };
    let batch_rank = resolve_rank(first_batch, rank, opts.init_max_rank, &als)?;
    let model = cp_als(first_batch, batch_rank, &als)?;
    let running_rank = model.rank();
    let report = DriftReport {
        batch_index: 0,
        batch_rank: running_rank,
        new_count: 0,
        overlap_count: 0,
        missing_count: 0,
        drift_detected: false,
        running_rank_after: running_rank,
    };
    let state = StreamState {
        a_upd: model.a,
        b_upd: model.b,
        c_upd: model.c,
        rho: model.lambda,
        running_rank,
        batches_seen: 1,
        k_total: nk,
    };
    Ok((state, report))
}

fn resolve_rank<T: Scalar>(
    batch: &DenseTensor3<T>,
    rank: RankSource,
    max_rank: usize,
    als: &AlsOptions,
) -> Result<usize> {
    match rank {
        RankSource::Oracle(r) => {
            if r < 1 {
                return Err(Error::InvalidParameter("oracle rank must be >= 1".into()));
            }
            Ok(r)
        }
        RankSource::Estimated => {
            let est: RankEstimate<T> = estimate_rank(batch, max_rank.max(1), als)?;
            Ok(est.rank)
        }
    }
}

impl<T: Scalar> StreamState<T> {
    /// `(I, J)` of the non-evolving modes.
    pub fn dims_ij(&self) -> (usize, usize) {
        (self.a_upd.nrows(), self.b_upd.nrows())
    }

    /// Ingests one batch: estimate rank, decompose, match against the
    /// accumulated factors, grow the state and flag drift. An all-zero
    /// batch is skipped but still advances the time axis.
    pub fn process_batch(
        &mut self,
        x_new: &DenseTensor3<T>,
        rank: RankSource,
        opts: &StreamOptions,
    ) -> Result<DriftReport> {
        opts.matching.validate()?;
        let (ni, nj, k_new) = x_new.dims();
        if (ni, nj) != self.dims_ij() {
            return Err(Error::DimensionMismatch(format!(
                "batch dims ({ni}, {nj}) do not match stream dims {:?}",
                self.dims_ij()
            )));
        }
        let batch_index = self.batches_seen;
        if x_new.frobenius_norm() == T::zero() {
            // Skipped batch: the time axis must stay aligned with the
            // ingested slabs, so zero rows are appended and ρ is unchanged.
            let zeros = Array2::<T>::zeros((k_new, self.running_rank));
            self.c_upd = concatenate(Axis(0), &[self.c_upd.view(), zeros.view()])
                .expect("row counts are consistent");
            self.batches_seen += 1;
            self.k_total += k_new;
            return Ok(DriftReport {
                batch_index,
                batch_rank: 0,
                new_count: 0,
                overlap_count: 0,
                missing_count: self.running_rank,
                drift_detected: self.running_rank > 0,
                running_rank_after: self.running_rank,
            });
        }

        let als = AlsOptions {
            seed: mix_seed(opts.als.seed, batch_index as u64),
            ..opts.als
        };
        let requested =
            resolve_rank(x_new, rank, self.running_rank + opts.rank_headroom, &als)?;
        let model = cp_als(x_new, requested, &als)?;
        let rho_val = model.lambda.clone();
        let matched = find_concept_overlap_with_b(
            &self.a_upd,
            &self.b_upd,
            &model.a,
            &model.b,
            &opts.matching,
        )?;

        let new_count = matched.new_concepts.len();
        let overlap_count = matched.overlap_batch.len();
        let rr_before = self.running_rank;
        let rr_after = rr_before + new_count;

        if new_count > 0 {
            let new_a = select_columns(&model.a, &matched.new_concepts);
            let new_b = select_columns(&model.b, &matched.new_concepts);
            self.a_upd = concatenate(Axis(1), &[self.a_upd.view(), new_a.view()])
                .expect("row counts match");
            self.b_upd = concatenate(Axis(1), &[self.b_upd.view(), new_b.view()])
                .expect("row counts match");
        }
        self.c_upd = update_evolving_factor(&self.c_upd, &model.c, &matched, k_new, rr_after)?;
        self.rho = update_rho(&self.rho, &rho_val, &matched, rr_after)?;
        self.running_rank = rr_after;
        self.batches_seen += 1;
        self.k_total += k_new;

        Ok(DriftReport {
            batch_index,
            batch_rank: model.rank(),
            new_count,
            overlap_count,
            missing_count: rr_before - overlap_count,
            drift_detected: new_count > 0 || overlap_count < rr_before,
            running_rank_after: rr_after,
        })
    }

    /// Reconstructs the whole stream seen so far, re-scaling each concept by
    /// its accumulated scale averaged over the number of batches received.
    pub fn reconstruct_stream(&self) -> DenseTensor3<T> {
        let n = cast::<T>(self.batches_seen as f64);
        let weights = self.rho.mapv(|v| v / n);
        reconstruct_weighted(&self.a_upd, &self.b_upd, &self.c_upd, &weights)
    }
}

fn select_columns<T: Scalar>(m: &Array2<T>, cols: &[usize]) -> Array2<T> {
    let mut out = Array2::zeros((m.nrows(), cols.len()));
    for (dst, &src) in cols.iter().enumerate() {
        out.column_mut(dst).assign(&m.column(src));
    }
    out
}

/// Grows the evolving factor by one batch. The old block keeps its column
/// order; overlapping batch columns land in the bottom block at the matched
/// old index; new concepts occupy fresh columns whose old rows are zero;
/// old concepts missing from the batch get zero rows appended.
pub fn update_evolving_factor<T: Scalar>(
    c_old: &Array2<T>,
    norm_mat_c: &Array2<T>,
    matched: &MatchResult<T>,
    k_new: usize,
    running_rank_after: usize,
) -> Result<Array2<T>> {
    let k_old = c_old.nrows();
    let rr_before = c_old.ncols();
    let new_count = matched.new_concepts.len();
    if rr_before + new_count != running_rank_after {
        return Err(Error::InvalidParameter(format!(
            "running rank {running_rank_after} must equal {rr_before} + {new_count}"
        )));
    }
    if norm_mat_c.nrows() != k_new {
        return Err(Error::DimensionMismatch(format!(
            "batch C has {} rows, expected {k_new}",
            norm_mat_c.nrows()
        )));
    }
    let f = norm_mat_c.ncols();
    let index_ok = matched.overlap_old.iter().all(|&g| g < rr_before)
        && matched.overlap_batch.iter().all(|&j| j < f)
        && matched.new_concepts.iter().all(|&j| j < f);
    if !index_ok || matched.overlap_old.len() != matched.overlap_batch.len() {
        return Err(Error::InvalidParameter(
            "match index sets are inconsistent with the factor shapes".into(),
        ));
    }
    let mut c = Array2::<T>::zeros((k_old + k_new, running_rank_after));
    c.slice_mut(s![..k_old, ..rr_before]).assign(c_old);
    for (&g_old, &j_batch) in matched.overlap_old.iter().zip(&matched.overlap_batch) {
        c.slice_mut(s![k_old.., g_old])
            .assign(&norm_mat_c.column(j_batch));
    }
    for (offset, &j_new) in matched.new_concepts.iter().enumerate() {
        c.slice_mut(s![k_old.., rr_before + offset])
            .assign(&norm_mat_c.column(j_new));
    }
    Ok(c)
}

/// Accumulates the per-batch scales: overlapped concepts add at the matched
/// global index, new concepts initialize their slot, missing concepts add
/// zero.
pub fn update_rho<T: Scalar>(
    rho_old: &Array1<T>,
    rho_val: &Array1<T>,
    matched: &MatchResult<T>,
    running_rank_after: usize,
) -> Result<Array1<T>> {
    let rr_before = rho_old.len();
    if rr_before + matched.new_concepts.len() != running_rank_after {
        return Err(Error::InvalidParameter(format!(
            "running rank {running_rank_after} inconsistent with rho length {rr_before}"
        )));
    }
    let f = rho_val.len();
    if matched
        .overlap_batch
        .iter()
        .chain(&matched.new_concepts)
        .any(|&j| j >= f)
    {
        return Err(Error::DimensionMismatch(format!(
            "rho_val has {f} entries but match refers past them"
        )));
    }
    let mut rho = Array1::<T>::zeros(running_rank_after);
    rho.slice_mut(s![..rr_before]).assign(rho_old);
    for (&g_old, &j_batch) in matched.overlap_old.iter().zip(&matched.overlap_batch) {
        rho[g_old] += rho_val[j_batch];
    }
    for (offset, &j_new) in matched.new_concepts.iter().enumerate() {
        rho[rr_before + offset] = rho_val[j_new];
    }
    Ok(rho)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Magic header of the state checkpoint container.
pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SADST1\0";
const CHECKPOINT_VERSION: u32 = 1;

impl StreamState<f64> {
    /// Writes a versioned binary checkpoint: magic `SADST1\0`, a u32
    /// version, the u64 quintuple `(I, J, K_total, running_rank,
    /// batches_seen)`, then `rho`, `A`, `B`, `C` as little-endian f64
    /// (matrices column by column). Loading restores the exact bit
    /// patterns, so a resumed stream replays identically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let (ni, nj) = self.dims_ij();
        for v in [
            ni as u64,
            nj as u64,
            self.k_total as u64,
            self.running_rank as u64,
            self.batches_seen as u64,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut push_f64 = |x: f64| buf.extend_from_slice(&x.to_le_bytes());
        for &v in self.rho.iter() {
            push_f64(v);
        }
        for m in [&self.a_upd, &self.b_upd, &self.c_upd] {
            for col in m.columns() {
                for &v in col.iter() {
                    push_f64(v);
                }
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::format(path, "truncated checkpoint"));
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        if take(&mut cursor, 7)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let mut read_u64 = |cursor: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };
        let ni = read_u64(&mut cursor)? as usize;
        let nj = read_u64(&mut cursor)? as usize;
        let k_total = read_u64(&mut cursor)? as usize;
        let running_rank = read_u64(&mut cursor)? as usize;
        let batches_seen = read_u64(&mut cursor)? as usize;
        let mut read_f64s = |cursor: &mut usize, n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(f64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()));
            }
            Ok(out)
        };
        let rho = Array1::from_vec(read_f64s(&mut cursor, running_rank)?);
        let mut read_matrix = |cursor: &mut usize, rows: usize| -> Result<Array2<f64>> {
            let vals = read_f64s(cursor, rows * running_rank)?;
            let mut m = Array2::zeros((rows, running_rank));
            for col in 0..running_rank {
                for row in 0..rows {
                    m[(row, col)] = vals[col * rows + row];
                }
            }
            Ok(m)
        };
        let a_upd = read_matrix(&mut cursor, ni)?;
        let b_upd = read_matrix(&mut cursor, nj)?;
        let c_upd = read_matrix(&mut cursor, k_total)?;
        if cursor != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            a_upd,
            b_upd,
            c_upd,
            rho,
            running_rank,
            batches_seen,
            k_total,
        })
    }
}
