//! Concept matching between an accumulated factor and a fresh batch factor.
//!
//! The batch columns are assigned one-to-one to accumulated columns by a
//! maximum-total-similarity matching (a linear assignment problem; explicit
//! permutation enumeration would be factorial). Assigned pairs at or above
//! the threshold are concept overlaps; everything else in the batch is a new
//! concept. Accumulated columns left unmatched are the batch-local missing
//! concepts, derived by the caller against its running rank.

use crate::error::{Error, Result};
use crate::scalar::{cast, tol, Scalar};
use ndarray::Array2;

/// Which factors feed the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilaritySource {
    /// Dot products of the A factors only (the default).
    AOnly,
    /// Elementwise product of A-similarity and B-similarity.
    AAndBProduct,
}

/// Matching options. `use_absolute` compensates for CP sign indeterminacy
/// that survives canonicalization in the evolving mode.
#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    pub threshold: f64,
    pub similarity_source: SimilaritySource,
    pub use_absolute: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            similarity_source: SimilaritySource::AOnly,
            use_absolute: true,
        }
    }
}

impl MatchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "matching threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Index sets produced by a match: new batch concepts, the overlap pairs
/// (batch side and accumulated side, aligned), and the similarity matrix
/// retained for diagnostics.
#[derive(Debug, Clone)]
pub struct MatchResult<T> {
    pub new_concepts: Vec<usize>,
    pub overlap_batch: Vec<usize>,
    pub overlap_old: Vec<usize>,
    pub similarity: Array2<T>,
}

fn check_normalized<T: Scalar>(m: &Array2<T>, name: &str) -> Result<()> {
    let unit_tol = tol::<T>(1e-8);
    for (idx, col) in m.columns().into_iter().enumerate() {
        let norm = col.iter().map(|&x| x * x).sum::<T>().sqrt();
        if (norm - T::one()).abs() > unit_tol {
            return Err(Error::NotNormalized(format!(
                "{name} column {idx} has norm {norm}"
            )));
        }
    }
    Ok(())
}

/// Pairwise column dot products of two unit-column matrices: entry `(i, j)`
/// is `⟨old(:,i), batch(:,j)⟩`, absolute-valued when requested. By
/// Cauchy-Schwarz every magnitude is at most 1.
pub fn similarity_matrix<T: Scalar>(
    a_old: &Array2<T>,
    a_batch: &Array2<T>,
    use_absolute: bool,
) -> Result<Array2<T>> {
    if a_old.nrows() != a_batch.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "similarity inputs have {} vs {} rows",
            a_old.nrows(),
            a_batch.nrows()
        )));
    }
    check_normalized(a_old, "a_old")?;
    check_normalized(a_batch, "a_batch")?;
    let mut sim = a_old.t().dot(a_batch);
    if use_absolute {
        sim.mapv_inplace(|v| v.abs());
    }
    Ok(sim)
}

/// Maximum-total-similarity one-to-one matching of `min(R, F)` pairs between
/// the `R` rows and `F` columns of `sim`. Returns `(row, column)` pairs
/// sorted by row. Exact ties are resolved toward the lexicographically
/// smallest pair list.
pub fn best_assignment<T: Scalar>(sim: &Array2<T>) -> Vec<(usize, usize)> {
    let (r, f) = sim.dim();
    if r == 0 || f == 0 {
        return Vec::new();
    }
    // Orient so rows are the smaller side; the solver matches every row.
    let transposed = r > f;
    let cost = if transposed {
        sim.t().mapv(|v| -v)
    } else {
        sim.mapv(|v| -v)
    };
    let mut pairs = min_cost_assignment(&cost);
    if transposed {
        for p in pairs.iter_mut() {
            *p = (p.1, p.0);
        }
    }
    pairs.sort_unstable_by_key(|p| p.0);
    polish_ties(sim, pairs)
}

/// Hungarian algorithm with potentials, O(n²·m) for an n × m cost matrix
/// with n ≤ m. Matches every row; scan order makes it deterministic.
fn min_cost_assignment<T: Scalar>(cost: &Array2<T>) -> Vec<(usize, usize)> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); m + 1];
    // matched row for each column; index m is the virtual start column
    let mut owner: Vec<Option<usize>> = vec![None; m + 1];
    for row in 0..n {
        owner[m] = Some(row);
        let mut j0 = m;
        let mut min_slack = vec![T::infinity(); m];
        let mut way = vec![m; m];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0].expect("scanned column always has an owner");
            let mut delta = T::infinity();
            let mut j1 = m;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0, j)] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    if let Some(i) = owner[j] {
                        u[i] += delta;
                    }
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0].is_none() {
                break;
            }
        }
        while j0 != m {
            let prev = way[j0];
            owner[j0] = owner[prev];
            j0 = prev;
        }
    }
    let mut pairs = Vec::with_capacity(n);
    for j in 0..m {
        if let Some(i) = owner[j] {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Rewrites the assignment toward the lexicographically smallest pair list
/// among solutions of exactly equal total weight. Only bitwise-equal local
/// exchanges are applied, so the total is untouched.
fn polish_ties<T: Scalar>(sim: &Array2<T>, mut pairs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let (r, f) = sim.dim();
    let cap = 4 * (pairs.len().max(1)) * (pairs.len().max(1));
    for _ in 0..cap {
        let mut changed = false;
        // Swap the columns of two pairs when the totals tie exactly.
        'outer: for p in 0..pairs.len() {
            for q in p + 1..pairs.len() {
                let (i1, j1) = pairs[p];
                let (i2, j2) = pairs[q];
                let cur = sim[(i1, j1)] + sim[(i2, j2)];
                let alt = sim[(i1, j2)] + sim[(i2, j1)];
                if alt == cur && j2 < j1 {
                    pairs[p] = (i1, j2);
                    pairs[q] = (i2, j1);
                    changed = true;
                    break 'outer;
                }
            }
        }
        if !changed {
            // Move a pair to an unused, smaller column of equal similarity.
            let used_cols: Vec<bool> = {
                let mut v = vec![false; f];
                for &(_, j) in &pairs {
                    v[j] = true;
                }
                v
            };
            'cols: for p in 0..pairs.len() {
                let (i, j) = pairs[p];
                for jp in 0..j {
                    if !used_cols[jp] && sim[(i, jp)] == sim[(i, j)] {
                        pairs[p] = (i, jp);
                        changed = true;
                        break 'cols;
                    }
                }
            }
        }
        if !changed {
            // Move a pair to an unused, smaller row of equal similarity.
            let used_rows: Vec<bool> = {
                let mut v = vec![false; r];
                for &(i, _) in &pairs {
                    v[i] = true;
                }
                v
            };
            'rows: for p in 0..pairs.len() {
                let (i, j) = pairs[p];
                for ip in 0..i {
                    if !used_rows[ip] && sim[(ip, j)] == sim[(i, j)] {
                        pairs[p] = (ip, j);
                        changed = true;
                        break 'rows;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        pairs.sort_unstable_by_key(|p| p.0);
    }
    pairs
}

/// Runs the assignment on the A-only similarity matrix and classifies the
/// batch columns by threshold.
pub fn find_concept_overlap<T: Scalar>(
    a_old: &Array2<T>,
    a_batch: &Array2<T>,
    opts: &MatchOptions,
) -> Result<MatchResult<T>> {
    opts.validate()?;
    let sim = similarity_matrix(a_old, a_batch, opts.use_absolute)?;
    classify(sim, opts)
}

/// Like [`find_concept_overlap`], with the B factors available so the
/// `AAndBProduct` similarity source can be honored.
pub fn find_concept_overlap_with_b<T: Scalar>(
    a_old: &Array2<T>,
    b_old: &Array2<T>,
    a_batch: &Array2<T>,
    b_batch: &Array2<T>,
    opts: &MatchOptions,
) -> Result<MatchResult<T>> {
    opts.validate()?;
    let sim = match opts.similarity_source {
        SimilaritySource::AOnly => similarity_matrix(a_old, a_batch, opts.use_absolute)?,
        SimilaritySource::AAndBProduct => {
            let sa = similarity_matrix(a_old, a_batch, opts.use_absolute)?;
            let sb = similarity_matrix(b_old, b_batch, opts.use_absolute)?;
            &sa * &sb
        }
    };
    classify(sim, opts)
}

fn classify<T: Scalar>(sim: Array2<T>, opts: &MatchOptions) -> Result<MatchResult<T>> {
    let f = sim.ncols();
    let threshold = cast::<T>(opts.threshold);
    let pairs = best_assignment(&sim);
    let mut overlap: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(i, j)| sim[(i, j)] >= threshold)
        .collect();
    overlap.sort_unstable_by_key(|p| p.1);
    let mut in_overlap = vec![false; f];
    for &(_, j) in &overlap {
        in_overlap[j] = true;
    }
    let new_concepts: Vec<usize> = (0..f).filter(|&j| !in_overlap[j]).collect();
    Ok(MatchResult {
        new_concepts,
        overlap_old: overlap.iter().map(|&(i, _)| i).collect(),
        overlap_batch: overlap.iter().map(|&(_, j)| j).collect(),
        similarity: sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_columns(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() - 0.5);
        for mut col in m.columns_mut() {
            let n = col.iter().map(|&x| x * x).sum::<f64>().sqrt();
            col.mapv_inplace(|v| v / n);
        }
        m
    }

    fn orthonormal3() -> Array2<f64> {
        array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0]
        ]
    }

    /// Largest total over all ordered placements of min(R,F) pairs, summed
    /// in row order — the enumeration the assignment must match exactly.
    fn brute_force_total(sim: &Array2<f64>) -> f64 {
        let (r, f) = sim.dim();
        let m = r.min(f);
        let mut best = f64::NEG_INFINITY;
        let rows: Vec<usize> = (0..r).collect();
        let cols: Vec<usize> = (0..f).collect();
        // choose m rows (in order) and every permutation of m columns
        fn combos(n: usize, m: usize) -> Vec<Vec<usize>> {
            if m == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == m {
                    out.push(cur.clone());
                    return;
                }
                for i in start..n {
                    cur.push(i);
                    rec(i + 1, n, m, cur, out);
                    cur.pop();
                }
            }
            rec(0, n, m, &mut Vec::new(), &mut out);
            out
        }
        fn perms(items: &[usize]) -> Vec<Vec<usize>> {
            if items.is_empty() {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for (i, &x) in items.iter().enumerate() {
                let mut rest = items.to_vec();
                rest.remove(i);
                for mut p in perms(&rest) {
                    p.insert(0, x);
                    out.push(p);
                }
            }
            out
        }
        for rsub in combos(rows.len(), m) {
            for csub in combos(cols.len(), m) {
                let chosen: Vec<usize> = csub.clone();
                for p in perms(&chosen) {
                    let mut total = 0.0;
                    for (ri, &row) in rsub.iter().enumerate() {
                        total += sim[(row, p[ri])];
                    }
                    if total > best {
                        best = total;
                    }
                }
            }
        }
        best
    }

    #[test]
    fn similarity_identity_for_equal_orthonormal() {
        let a = orthonormal3();
        let sim = similarity_matrix(&a, &a, true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((sim[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_zero_for_orthogonal_sets() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
        let b = array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let sim = similarity_matrix(&a, &b, true).unwrap();
        assert!(sim.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn similarity_matches_naive_dot_oracle() {
        let a = unit_columns(10, 3, 1);
        let b = unit_columns(10, 2, 2);
        let sim = similarity_matrix(&a, &b, true).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let dot: f64 = (0..10).map(|k| a[(k, i)] * b[(k, j)]).sum();
                assert!((sim[(i, j)] - dot.abs()).abs() < 1e-12);
                assert!(sim[(i, j)] <= 1.0 + 1e-8);
            }
        }
    }

    #[test]
    fn similarity_rejects_unnormalized() {
        let a = array![[2.0], [0.0]];
        let b = array![[1.0], [0.0]];
        assert!(matches!(
            similarity_matrix(&a, &b, true),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn assignment_identity_matrix() {
        let sim = Array2::<f64>::eye(4);
        let pairs = best_assignment(&sim);
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn assignment_two_by_two() {
        let sim = array![[0.9, 0.1], [0.2, 0.8]];
        let pairs = best_assignment(&sim);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        let total: f64 = pairs.iter().map(|&(i, j)| sim[(i, j)]).sum();
        assert!((total - 1.7).abs() < 1e-15);
    }

    #[test]
    fn assignment_ties_break_lexicographically() {
        let sim = array![[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(best_assignment(&sim), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn assignment_matches_brute_force_rectangular() {
        for seed in 0..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..=5);
            let f = rng.random_range(1..=5);
            let sim = Array2::from_shape_fn((r, f), |_| rng.random::<f64>());
            let pairs = best_assignment(&sim);
            assert_eq!(pairs.len(), r.min(f));
            let total: f64 = pairs.iter().map(|&(i, j)| sim[(i, j)]).sum();
            let oracle = brute_force_total(&sim);
            assert_eq!(total, oracle, "seed {seed}: {total} vs {oracle}");
        }
    }

    #[test]
    fn overlap_complete() {
        let a = orthonormal3();
        let res = find_concept_overlap(&a, &a, &MatchOptions::default()).unwrap();
        assert_eq!(res.overlap_batch.len(), 3);
        assert!(res.new_concepts.is_empty());
        assert_eq!(res.overlap_old, res.overlap_batch);
    }

    #[test]
    fn overlap_with_one_new_concept() {
        // Old has 2 concepts; batch has those 2 plus one orthogonal.
        let full = orthonormal3();
        let mut old = Array2::zeros((4, 2));
        old.column_mut(0).assign(&full.column(0));
        old.column_mut(1).assign(&full.column(1));
        let res = find_concept_overlap(&old, &full, &MatchOptions::default()).unwrap();
        assert_eq!(res.overlap_batch.len(), 2);
        assert_eq!(res.new_concepts, vec![2]);
    }

    #[test]
    fn overlap_with_one_missing_concept() {
        // Old has 3 concepts; batch has only two of them.
        let full = orthonormal3();
        let mut batch = Array2::zeros((4, 2));
        batch.column_mut(0).assign(&full.column(0));
        batch.column_mut(1).assign(&full.column(2));
        let res = find_concept_overlap(&full, &batch, &MatchOptions::default()).unwrap();
        assert_eq!(res.overlap_batch.len(), 2);
        assert!(res.new_concepts.is_empty());
        assert_eq!(res.overlap_old, vec![0, 2]);
    }

    #[test]
    fn below_threshold_pairs_become_new_concepts() {
        let old = array![[1.0], [0.0]];
        let batch = array![[0.5], [0.75f64.sqrt()]]; // similarity 0.5 < 0.6
        let res = find_concept_overlap(&old, &batch, &MatchOptions::default()).unwrap();
        assert!(res.overlap_batch.is_empty());
        assert_eq!(res.new_concepts, vec![0]);
    }

    #[test]
    fn partition_and_bound_invariants() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..=5);
            let f = rng.random_range(1..=5);
            let old = unit_columns(12, r, seed * 2 + 1);
            let batch = unit_columns(12, f, seed * 2 + 2);
            let res = find_concept_overlap(&old, &batch, &MatchOptions::default()).unwrap();
            assert_eq!(res.new_concepts.len() + res.overlap_batch.len(), f);
            assert!(res.overlap_batch.len() <= r.min(f));
            assert_eq!(res.overlap_batch.len(), res.overlap_old.len());
        }
    }
}
