//! Rank correlation and correlation-matrix repair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Kendall's tau-b between two equal-length samples, computed with
/// Knight's O(n log n) merge-sort algorithm. Ties are handled via the
/// tau-b normalization.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::validation(format!(
            "kendall_tau length mismatch: {n} vs {}",
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::validation(
            "kendall_tau needs at least 2 observations".to_string(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].partial_cmp(&y[b]).unwrap_or(std::cmp::Ordering::Equal))
    });

    let n0 = n as f64 * (n as f64 - 1.0) / 2.0;
    // Pairs tied on x, and tied on both x and y.
    let mut n1 = 0.0_f64;
    let mut n3 = 0.0_f64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && x[idx[j]] == x[idx[i]] {
                j += 1;
            }
            let t = (j - i) as f64;
            n1 += t * (t - 1.0) / 2.0;
            // Joint ties within the x-tied block.
            let mut k = i;
            while k < j {
                let mut m = k + 1;
                while m < j && y[idx[m]] == y[idx[k]] {
                    m += 1;
                }
                let u = (m - k) as f64;
                n3 += u * (u - 1.0) / 2.0;
                k = m;
            }
            i = j;
        }
    }
    // Pairs tied on y.
    let mut ys: Vec<f64> = y.to_vec();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut n2 = 0.0_f64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && ys[j] == ys[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            n2 += t * (t - 1.0) / 2.0;
            i = j;
        }
    }

    // Count swaps needed to sort the y-sequence (discordant pairs among
    // the x-ordered sequence) by merge sort.
    let mut seq: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0_f64; n];
    let swaps = merge_count(&mut seq, &mut buf) as f64;

    let num = n0 - n1 - n2 + n3 - 2.0 * swaps;
    let den = ((n0 - n1) * (n0 - n2)).sqrt();
    if den <= 0.0 {
        return Err(Error::data(
            "kendall_tau: a sample is entirely tied (zero variance)".to_string(),
        ));
    }
    Ok(num / den)
}

fn merge_count(seq: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = seq.split_at_mut(mid);
        merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            buf[k] = seq[i];
            i += 1;
        } else {
            buf[k] = seq[j];
            j += 1;
            swaps += (mid - i) as u64;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = seq[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = seq[j];
        j += 1;
        k += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    swaps
}

/// Pairwise Kendall-tau matrix of the columns of `data` mapped through
/// the elliptical inversion Σᵢⱼ = sin(π τᵢⱼ / 2).
pub fn kendall_correlation(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = data.ncols();
    let mut corr = DMatrix::identity(d, d);
    for i in 0..d {
        let ci: Vec<f64> = data.column(i).iter().copied().collect();
        for j in (i + 1)..d {
            let cj: Vec<f64> = data.column(j).iter().copied().collect();
            let tau = kendall_tau(&ci, &cj)?;
            let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
            corr[(i, j)] = rho;
            corr[(j, i)] = rho;
        }
    }
    Ok(corr)
}

/// Outcome of [`nearest_correlation`].
pub struct CorrelationRepair {
    pub corr: DMatrix<f64>,
    /// True when eigenvalue clipping was required.
    pub projected: bool,
    pub min_eigenvalue: f64,
}

/// Projects a symmetric matrix with unit diagonal to the nearest
/// positive-definite correlation matrix by clipping eigenvalues at
/// `clip_floor` and re-normalizing to unit diagonal.
pub fn nearest_correlation(mat: &DMatrix<f64>, clip_floor: f64) -> Result<CorrelationRepair> {
    let d = mat.nrows();
    if d != mat.ncols() {
        return Err(Error::validation("correlation matrix must be square".to_string()));
    }
    let mut current = 0.5 * (mat + mat.transpose());
    let mut projected = false;
    // The diagonal renormalization can push the smallest eigenvalue back
    // under the floor, so clip at a growing threshold until the output
    // clears it; re-running on the result is then a no-op.
    for pass in 0..8 {
        let eig = current.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig > clip_floor {
            return Ok(CorrelationRepair {
                corr: current,
                projected,
                min_eigenvalue: min_eig,
            });
        }
        projected = true;
        let threshold = clip_floor * 2.0_f64.powi(pass + 1);
        let clipped =
            DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(threshold)));
        let mut repaired =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let scale: Vec<f64> = (0..d).map(|i| repaired[(i, i)].sqrt()).collect();
        for i in 0..d {
            for j in 0..d {
                repaired[(i, j)] /= scale[i] * scale[j];
            }
        }
        for i in 0..d {
            repaired[(i, i)] = 1.0;
        }
        current = 0.5 * (&repaired + repaired.transpose());
    }
    Err(Error::solver(
        "correlation repair failed: eigenvalue floor not reached after clipping passes".to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n²) oracle for tau-b.
    fn kendall_brute(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    tx += 1;
                    ty += 1;
                } else if dx == 0.0 {
                    tx += 1;
                } else if dy == 0.0 {
                    ty += 1;
                } else if dx * dy > 0.0 {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as f64;
        ((conc - disc) as f64) / ((n0 - tx as f64) * (n0 - ty as f64)).sqrt()
    }

    #[test]
    fn tau_matches_brute_force() {
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..20 {
            let n = 5 + (trial * 13) % 90;
            let mut x: Vec<f64> = (0..n).map(|_| next()).collect();
            let mut y: Vec<f64> = x.iter().map(|&v| v + 0.5 * next()).collect();
            if trial % 3 == 0 {
                // Inject ties.
                for k in 0..n / 3 {
                    x[k] = 0.25;
                    y[(k + 1) % n] = 0.5;
                }
            }
            let fast = kendall_tau(&x, &y).unwrap();
            let slow = kendall_brute(&x, &y);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn tau_perfect_orderings() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((kendall_tau(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let yr: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((kendall_tau(&x, &yr).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_rejects_degenerate() {
        let x = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(kendall_tau(&x, &y).is_err());
        assert!(kendall_tau(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn nearest_correlation_passes_through_pd_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let rep = nearest_correlation(&m, 1e-8).unwrap();
        assert!(!rep.projected);
        assert!((rep.corr - m).abs().max() < 1e-15);
    }

    #[test]
    fn nearest_correlation_repairs_indefinite_input() {
        // Pairwise "correlations" that are jointly infeasible.
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0],
        );
        let rep = nearest_correlation(&m, 1e-8).unwrap();
        assert!(rep.projected);
        assert!(rep.min_eigenvalue > 0.0);
        for i in 0..3 {
            assert!((rep.corr[(i, i)] - 1.0).abs() < 1e-12);
        }
        // Still symmetric and close-ish to the input.
        assert!((rep.corr.clone() - rep.corr.transpose()).abs().max() < 1e-12);
        assert!((&rep.corr - &m).abs().max() < 0.6);
    }

    #[test]
    fn nearest_correlation_is_idempotent() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.95, -0.95, 0.95, 1.0, 0.95, -0.95, 0.95, 1.0],
        );
        let rep1 = nearest_correlation(&m, 1e-8).unwrap();
        let rep2 = nearest_correlation(&rep1.corr, 1e-8).unwrap();
        assert!(!rep2.projected);
        assert!((&rep2.corr - &rep1.corr).abs().max() < 1e-12);
    }
}
