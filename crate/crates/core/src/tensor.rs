//! Dense 3-mode tensor storage and the norms shared by every other module.
//!
//! # Linearization order
//!
//! A tensor of dimensions `(I, J, K)` stores entry `(i, j, k)` at flat index
//! `i + I·(j + J·k)`: mode 1 varies fastest, mode 3 slowest. Every unfolding
//! and the Khatri-Rao convention in [`crate::linalg`] are defined against
//! this order:
//!
//! * mode-1 unfolding is `I × (J·K)` with column index `j + J·k`,
//! * mode-2 unfolding is `J × (I·K)` with column index `i + I·k`,
//! * mode-3 unfolding is `K × (I·J)` with column index `i + I·j`,
//!
//! so that for a factor triple `(A, B, C)` the identities
//! `X₍₁₎ = A·(C ⊙ B)ᵀ`, `X₍₂₎ = B·(C ⊙ A)ᵀ`, `X₍₃₎ = C·(B ⊙ A)ᵀ` hold, with
//! `⊙` the column-wise Kronecker product whose *second* argument's row index
//! varies fastest.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use ndarray::{Array2, ArrayView2, ShapeBuilder};

/// Dense 3-mode tensor with explicit dimensions.
///
/// Entries are finite by construction. `K = 0` (an empty temporal mode) is
/// permitted so that mode-3 concatenation has an identity element; the
/// decomposition kernels require nonempty input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3<T> {
    dims: (usize, usize, usize),
    values: Vec<T>,
}

impl<T: Scalar> DenseTensor3<T> {
    /// Builds a tensor from values in the documented linearization order.
    pub fn new(dims: (usize, usize, usize), values: Vec<T>) -> Result<Self> {
        let (i, j, k) = dims;
        let expected = i * j * k;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "dims ({i}, {j}, {k}) need {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor entry at flat index {pos} is not finite"
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.0 * dims.1 * dims.2],
        }
    }

    /// Fills entry `(i, j, k)` from `f`. Panics only if `f` itself panics;
    /// the produced entries are assumed finite.
    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        let (ni, nj, nk) = dims;
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    let idx = t.flat_index(i, j, k);
                    t.values[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.flat_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.flat_index(i, j, k);
        self.values[idx] = v;
    }

    /// Frontal slab `X(:, :, k)` as an `I × J` view (no copy).
    pub fn frontal_slab(&self, k: usize) -> ArrayView2<'_, T> {
        let (i, j, _) = self.dims;
        let start = i * j * k;
        ArrayView2::from_shape((i, j).f(), &self.values[start..start + i * j])
            .expect("slab layout is contiguous by construction")
    }

    /// Mode-n unfolding into a matrix, `mode ∈ {1, 2, 3}`. Column ordering
    /// follows the module-level convention.
    pub fn matricize(&self, mode: usize) -> Result<Array2<T>> {
        let (ni, nj, nk) = self.dims;
        match mode {
            1 => {
                // Mode-1 layout coincides with storage: a plain reshape.
                Ok(Array2::from_shape_vec((ni, nj * nk).f(), self.values.clone())
                    .expect("mode-1 unfolding is a reshape"))
            }
            2 => {
                let mut m = Array2::zeros((nj, ni * nk));
                for k in 0..nk {
                    for j in 0..nj {
                        for i in 0..ni {
                            m[(j, i + ni * k)] = self.get(i, j, k);
                        }
                    }
                }
                Ok(m)
            }
            3 => {
                let mut m = Array2::zeros((nk, ni * nj));
                for k in 0..nk {
                    for j in 0..nj {
                        for i in 0..ni {
                            m[(k, i + ni * j)] = self.get(i, j, k);
                        }
                    }
                }
                Ok(m)
            }
            other => Err(Error::InvalidParameter(format!(
                "matricize mode must be 1, 2 or 3, got {other}"
            ))),
        }
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> T {
        self.values
            .iter()
            .map(|&v| v * v)
            .fold(T::zero(), |acc, v| acc + v)
            .sqrt()
    }

    /// Stacks `other` after `self` along mode 3. Requires equal `I`, `J`.
    pub fn concat_mode3(&self, other: &Self) -> Result<Self> {
        let (i, j, k) = self.dims;
        let (oi, oj, ok) = other.dims;
        if i != oi || j != oj {
            return Err(Error::DimensionMismatch(format!(
                "mode-3 concat needs equal I, J: ({i}, {j}) vs ({oi}, {oj})"
            )));
        }
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(Self {
            dims: (i, j, k + ok),
            values,
        })
    }
}

/// Concatenates a sequence of batches along mode 3.
pub fn concat_all<T: Scalar>(batches: &[DenseTensor3<T>]) -> Result<DenseTensor3<T>> {
    let first = batches
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot concatenate zero batches".into()))?;
    let mut acc = first.clone();
    for b in &batches[1..] {
        acc = acc.concat_mode3(b)?;
    }
    Ok(acc)
}

/// `‖original − computed‖_F / ‖original‖_F`.
pub fn relative_error<T: Scalar>(
    original: &DenseTensor3<T>,
    computed: &DenseTensor3<T>,
) -> Result<T> {
    if original.dims() != computed.dims() {
        return Err(Error::DimensionMismatch(format!(
            "relative_error dims {:?} vs {:?}",
            original.dims(),
            computed.dims()
        )));
    }
    let denom = original.frobenius_norm();
    if denom == T::zero() {
        return Err(Error::ZeroNormReference);
    }
    let num = original
        .values()
        .iter()
        .zip(computed.values())
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt();
    Ok(num / denom)
}

#[allow(dead_code)]
fn touch_cast<T: Scalar>() -> T {
    cast(0.0)
}
