//! Batch CP decomposition by alternating least squares.
//!
//! Each sweep updates `A`, then `B`, then `C` through the normal equations
//! `G Xᵀ = Mᵀ`, where `G` is the Hadamard product of the other two Gram
//! matrices and `M` the matricized-tensor-times-Khatri-Rao product. The
//! returned model is column-normalized, sign-canonicalized and sorted by
//! descending weight, so identical inputs produce identical output bytes.

use crate::error::{Error, Result};
use crate::linalg::{gram, hadamard, solve_spd, symmetric_eig};
use crate::model::{canonicalize_signs, normalize_columns, FactorModel};
use crate::scalar::{cast, tol, Scalar};
use crate::tensor::DenseTensor3;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Factor initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Entries drawn uniform(0,1) from the seeded generator.
    Random,
    /// Leading eigenvectors of each unfolding's Gram matrix, padded with
    /// random columns when the rank exceeds a dimension.
    HosvdLike,
}

/// Solver options. `tol` is the stop threshold on the change of the relative
/// residual between sweeps.
#[derive(Debug, Clone, Copy)]
pub struct AlsOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            seed: 0,
            init: InitStrategy::Random,
        }
    }
}

impl AlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Matricized-tensor-times-Khatri-Rao product for one mode, computed slab by
/// slab so the Khatri-Rao factor is never materialized.
pub(crate) fn mttkrp<T: Scalar>(
    t: &DenseTensor3<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    c: &Array2<T>,
    mode: usize,
) -> Array2<T> {
    let (ni, nj, nk) = t.dims();
    let r = a.ncols();
    match mode {
        1 => {
            let mut m = Array2::<T>::zeros((ni, r));
            for k in 0..nk {
                let p = t.frontal_slab(k).dot(b); // I × R
                for col in 0..r {
                    let s = c[(k, col)];
                    for row in 0..ni {
                        m[(row, col)] += s * p[(row, col)];
                    }
                }
            }
            m
        }
        2 => {
            let mut m = Array2::<T>::zeros((nj, r));
            for k in 0..nk {
                let q = t.frontal_slab(k).t().dot(a); // J × R
                for col in 0..r {
                    let s = c[(k, col)];
                    for row in 0..nj {
                        m[(row, col)] += s * q[(row, col)];
                    }
                }
            }
            m
        }
        3 => {
            let mut m = Array2::<T>::zeros((nk, r));
            for k in 0..nk {
                let q = t.frontal_slab(k).t().dot(a); // J × R
                for col in 0..r {
                    let mut acc = T::zero();
                    for row in 0..nj {
                        acc += q[(row, col)] * b[(row, col)];
                    }
                    m[(k, col)] = acc;
                }
            }
            m
        }
        _ => unreachable!("internal mode is always 1..=3"),
    }
}

fn random_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| cast::<T>(rng.random::<f64>()))
}

fn hosvd_factor<T: Scalar>(
    t: &DenseTensor3<T>,
    mode: usize,
    rank: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<T>> {
    let unfolding = t.matricize(mode)?;
    let g = unfolding.dot(&unfolding.t());
    let (_, vecs) = symmetric_eig(&g);
    let n = g.nrows();
    let lead = rank.min(n);
    let mut out = Array2::<T>::zeros((n, rank));
    for col in 0..lead {
        out.column_mut(col).assign(&vecs.column(col));
    }
    for col in lead..rank {
        let extra = random_matrix::<T>(n, 1, rng);
        out.column_mut(col).assign(&extra.column(0));
    }
    Ok(out)
}

fn init_factors<T: Scalar>(
    t: &DenseTensor3<T>,
    rank: usize,
    opts: &AlsOptions,
) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
    let (ni, nj, nk) = t.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    match opts.init {
        InitStrategy::Random => Ok((
            random_matrix(ni, rank, &mut rng),
            random_matrix(nj, rank, &mut rng),
            random_matrix(nk, rank, &mut rng),
        )),
        InitStrategy::HosvdLike => Ok((
            hosvd_factor(t, 1, rank, &mut rng)?,
            hosvd_factor(t, 2, rank, &mut rng)?,
            hosvd_factor(t, 3, rank, &mut rng)?,
        )),
    }
}

fn remove_column<T: Scalar>(m: &Array2<T>, drop: usize) -> Array2<T> {
    let cols: Vec<usize> = (0..m.ncols()).filter(|&c| c != drop).collect();
    let mut out = Array2::zeros((m.nrows(), cols.len()));
    for (dst, &src) in cols.iter().enumerate() {
        out.column_mut(dst).assign(&m.column(src));
    }
    out
}

/// CP-ALS returning the per-sweep relative residual trace alongside the
/// model. The trace is non-increasing up to round-off.
pub fn cp_als_traced<T: Scalar>(
    t: &DenseTensor3<T>,
    rank: usize,
    opts: &AlsOptions,
) -> Result<(FactorModel<T>, Vec<T>)> {
    opts.validate()?;
    if rank < 1 {
        return Err(Error::InvalidParameter("rank must be >= 1".into()));
    }
    let (ni, nj, nk) = t.dims();
    if ni == 0 || nj == 0 || nk == 0 {
        return Err(Error::InvalidParameter(
            "cp_als requires a nonempty tensor".into(),
        ));
    }

    let (mut a, mut b, mut c) = init_factors(t, rank, opts)?;
    let mut gram_a = gram(&a);
    let mut gram_b = gram(&b);
    let mut gram_c = gram(&c);
    let norm_x = t.frobenius_norm();
    let norm_x_sq = norm_x * norm_x;
    let stop = cast::<T>(opts.tol);
    let slack = tol::<T>(1e-9);

    let mut history: Vec<T> = Vec::new();
    let mut prev_fit = T::infinity();
    for _ in 0..opts.max_iters {
        let g = hadamard(&gram_b, &gram_c);
        let m1 = mttkrp(t, &a, &b, &c, 1);
        a = solve_spd(&g, &m1.t().to_owned(), "ALS mode-1 update")?
            .t()
            .to_owned();
        gram_a = gram(&a);

        let g = hadamard(&gram_a, &gram_c);
        let m2 = mttkrp(t, &a, &b, &c, 2);
        b = solve_spd(&g, &m2.t().to_owned(), "ALS mode-2 update")?
            .t()
            .to_owned();
        gram_b = gram(&b);

        let g = hadamard(&gram_a, &gram_b);
        let m3 = mttkrp(t, &a, &b, &c, 3);
        c = solve_spd(&g, &m3.t().to_owned(), "ALS mode-3 update")?
            .t()
            .to_owned();
        gram_c = gram(&c);

        // ‖X − M‖² = ‖X‖² + ‖M‖² − 2⟨X, M⟩, with ⟨X, M⟩ from the cached
        // mode-3 MTTKRP (valid because it used this sweep's A and B).
        let model_sq = hadamard(&hadamard(&gram_a, &gram_b), &gram_c)
            .iter()
            .copied()
            .sum::<T>();
        let inner = m3
            .iter()
            .zip(c.iter())
            .map(|(&m, &x)| m * x)
            .sum::<T>();
        let res_sq = (norm_x_sq + model_sq - (inner + inner)).abs();
        let fit = if norm_x > T::zero() {
            res_sq.sqrt() / norm_x
        } else {
            res_sq.sqrt()
        };
        debug_assert!(
            fit <= prev_fit + slack || !prev_fit.is_finite(),
            "ALS residual increased: {prev_fit} -> {fit}"
        );
        history.push(fit);
        if prev_fit.is_finite() && (prev_fit - fit).abs() < stop {
            break;
        }
        prev_fit = fit;
    }

    // Normalize, dropping zero-norm components so the result stays
    // deterministic instead of re-randomizing.
    let normalized = loop {
        match normalize_columns(&a, &b, &c) {
            Ok(n) => break n,
            Err(Error::DegenerateComponent { index }) => {
                if a.ncols() <= 1 {
                    return Err(Error::DegenerateComponent { index });
                }
                a = remove_column(&a, index);
                b = remove_column(&b, index);
                c = remove_column(&c, index);
            }
            Err(e) => return Err(e),
        }
    };

    // Canonical component order: descending weight, index as tiebreak.
    let r = normalized.lambda.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| {
        normalized.lambda[y]
            .partial_cmp(&normalized.lambda[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let permute = |m: &Array2<T>| {
        let mut out = Array2::zeros((m.nrows(), r));
        for (dst, &src) in order.iter().enumerate() {
            out.column_mut(dst).assign(&m.column(src));
        }
        out
    };
    let lambda = Array1::from_iter(order.iter().map(|&i| normalized.lambda[i]));
    let model = FactorModel::new(
        permute(&normalized.a),
        permute(&normalized.b),
        permute(&normalized.c),
        lambda,
        true,
    )?;
    Ok((canonicalize_signs(model), history))
}

/// CP decomposition at the given rank. Deterministic for a fixed
/// `(tensor, rank, opts)` triple. The rank should not exceed the smallest
/// unfolding row count by much; this is not enforced, only documented.
pub fn cp_als<T: Scalar>(
    t: &DenseTensor3<T>,
    rank: usize,
    opts: &AlsOptions,
) -> Result<FactorModel<T>> {
    cp_als_traced(t, rank, opts).map(|(m, _)| m)
}
