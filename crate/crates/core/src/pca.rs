//! Reduced-order representation of the cage deformation field.
//!
//! Displacement snapshots are stacked into a matrix with one row per degree
//! of freedom (x1, y1, z1, ..., xN, yN, zN) and one column per retained time
//! step of every scenario. The eigenpairs of `M M^T` are computed through a
//! thin SVD of `M` (identical eigenpairs, better conditioning; no
//! mean-centering, the data matrix enters as-is). Projection onto the
//! leading eigenvectors gives per-step coefficients, per-scenario averages
//! of those give the compact deformation descriptors the surrogate models
//! regress on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("scenario {0} provides {1} nodes, expected {2}")]
    InconsistentNodeCount(usize, usize, usize),
    #[error("scenario {0} has no retained time steps")]
    EmptyScenario(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular value decomposition did not converge")]
    NumericalFailure,
    #[error("all eigenvalues are zero")]
    AllZeroVariance,
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

/// One scenario's displacement time series: each step is an N x 3 matrix of
/// per-node (x, y, z) displacements.
#[derive(Debug, Clone)]
pub struct ScenarioSeries {
    pub steps: Vec<DMatrix<f64>>,
}

/// Stacked displacement data: (3N) x t_n, columns ordered scenario-major
/// then time.
#[derive(Debug, Clone)]
pub struct DisplacementMatrix {
    pub values: DMatrix<f64>,
    /// Scenario id (1-based) of each column; nondecreasing, contiguous.
    pub scenario_index: Vec<usize>,
    pub node_count: usize,
}

impl DisplacementMatrix {
    pub fn total_steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn scenario_count(&self) -> usize {
        self.scenario_index.last().copied().unwrap_or(0)
    }
}

/// Stack per-scenario node time series into the data matrix, dropping the
/// leading `transient_fraction` of each scenario's steps.
///
/// Row layout: node 1 x, y, z, then node 2, and so on.
pub fn assemble_data_matrix(
    scenarios: &[ScenarioSeries],
    transient_fraction: f64,
) -> Result<DisplacementMatrix, PcaError> {
    let node_count = scenarios
        .first()
        .and_then(|s| s.steps.first())
        .map(|m| m.nrows())
        .unwrap_or(0);
    if node_count == 0 {
        return Err(PcaError::EmptyScenario(1));
    }
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut scenario_index = Vec::new();
    for (s, scen) in scenarios.iter().enumerate() {
        let drop = (scen.steps.len() as f64 * transient_fraction).floor() as usize;
        let retained = &scen.steps[drop..];
        if retained.is_empty() {
            return Err(PcaError::EmptyScenario(s + 1));
        }
        for step in retained {
            if step.nrows() != node_count || step.ncols() != 3 {
                return Err(PcaError::InconsistentNodeCount(s + 1, step.nrows(), node_count));
            }
            let mut col = DVector::zeros(3 * node_count);
            for i in 0..node_count {
                col[3 * i] = step[(i, 0)];
                col[3 * i + 1] = step[(i, 1)];
                col[3 * i + 2] = step[(i, 2)];
            }
            columns.push(col);
            scenario_index.push(s + 1);
        }
    }
    let values = DMatrix::from_columns(&columns);
    Ok(DisplacementMatrix {
        values,
        scenario_index,
        node_count,
    })
}

/// Orthonormal eigenvectors and eigenvalues of the (uncentered) covariance
/// structure, descending. `retained` is set via [`select_components`] and
/// [`PcaBasis::with_retention`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaBasis {
    /// (3N) x c orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// Descending, nonnegative.
    pub eigenvalues: DVector<f64>,
    /// Retained component count; defaults to all.
    pub retained: usize,
    pub threshold: Option<f64>,
}

impl PcaBasis {
    pub fn total_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn with_retention(mut self, k: usize, threshold: f64) -> Self {
        self.retained = k;
        self.threshold = Some(threshold);
        self
    }

    /// The leading `retained` eigenvectors.
    pub fn leading(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.retained).into_owned()
    }
}

/// Eigenpairs of `M M^T` via thin SVD of `M`: eigenvalues are squared
/// singular values. Signs are fixed so each eigenvector's largest-magnitude
/// entry is positive, making persisted bases reproducible.
pub fn eigen_decompose(m: &DisplacementMatrix) -> Result<PcaBasis, PcaError> {
    let svd = nalgebra::SVD::try_new(m.values.clone(), true, false, 1e-12, 0)
        .ok_or(PcaError::NumericalFailure)?;
    let u = svd.u.ok_or(PcaError::NumericalFailure)?;
    let c = svd.singular_values.len();

    // sort descending by singular value
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });

    let mut eigenvectors = DMatrix::zeros(u.nrows(), c);
    let mut eigenvalues = DVector::zeros(c);
    for (dst, &src) in order.iter().enumerate() {
        let sv = svd.singular_values[src];
        eigenvalues[dst] = sv * sv;
        let col = u.column(src);
        // sign convention: largest-magnitude entry positive
        let mut max_idx = 0;
        let mut max_abs = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_idx = i;
            }
        }
        let sign = if col[max_idx] < 0.0 { -1.0 } else { 1.0 };
        eigenvectors.set_column(dst, &(col * sign));
    }
    Ok(PcaBasis {
        eigenvectors,
        eigenvalues,
        retained: c,
        threshold: None,
    })
}

/// Smallest k whose cumulative explained variance ratio reaches `threshold`.
pub fn select_components(lambdas: &DVector<f64>, threshold: f64) -> Result<usize, PcaError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PcaError::BadThreshold(threshold));
    }
    let total: f64 = lambdas.sum();
    if total <= 0.0 {
        return Err(PcaError::AllZeroVariance);
    }
    let mut cum = 0.0;
    for (k, l) in lambdas.iter().enumerate() {
        cum += l / total;
        if cum >= threshold - 1e-12 {
            return Ok(k + 1);
        }
    }
    Ok(lambdas.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientKind {
    PerStep,
    PerScenario,
}

/// Per-step coefficients (k x t_n) or per-scenario means (k x s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    pub coefficients: DMatrix<f64>,
    pub kind: CoefficientKind,
}

/// Project the data matrix onto the retained components.
pub fn project(m: &DisplacementMatrix, basis: &PcaBasis) -> Result<CoefficientMatrix, PcaError> {
    if basis.eigenvectors.nrows() != m.values.nrows() {
        return Err(PcaError::DimensionMismatch {
            expected: basis.eigenvectors.nrows(),
            got: m.values.nrows(),
        });
    }
    let phi = basis.leading();
    Ok(CoefficientMatrix {
        coefficients: phi.transpose() * &m.values,
        kind: CoefficientKind::PerStep,
    })
}

/// Average per-step coefficients within each scenario.
pub fn mean_coefficients(
    b: &CoefficientMatrix,
    scenario_index: &[usize],
) -> Result<CoefficientMatrix, PcaError> {
    if scenario_index.len() != b.coefficients.ncols() {
        return Err(PcaError::DimensionMismatch {
            expected: b.coefficients.ncols(),
            got: scenario_index.len(),
        });
    }
    let s = scenario_index.last().copied().unwrap_or(0);
    let k = b.coefficients.nrows();
    let mut sums = DMatrix::zeros(k, s);
    let mut counts = vec![0usize; s];
    for (col, &scen) in scenario_index.iter().enumerate() {
        for r in 0..k {
            sums[(r, scen - 1)] += b.coefficients[(r, col)];
        }
        counts[scen - 1] += 1;
    }
    for (scen, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            return Err(PcaError::EmptyScenario(scen + 1));
        }
        for r in 0..k {
            sums[(r, scen)] /= cnt as f64;
        }
    }
    Ok(CoefficientMatrix {
        coefficients: sums,
        kind: CoefficientKind::PerScenario,
    })
}

/// Rebuild one deformation column from k coefficients:
/// `sum_j phi_j * b_j`, laid out like the data matrix rows.
pub fn reconstruct(coeffs: &DVector<f64>, basis: &PcaBasis) -> Result<DVector<f64>, PcaError> {
    if coeffs.len() != basis.retained {
        return Err(PcaError::DimensionMismatch {
            expected: basis.retained,
            got: coeffs.len(),
        });
    }
    Ok(basis.leading() * coeffs)
}

/// Reshape a stacked (3N) displacement column back to N x 3.
pub fn unstack_column(col: &DVector<f64>) -> DMatrix<f64> {
    let n = col.len() / 3;
    DMatrix::from_fn(n, 3, |i, j| col[3 * i + j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> DisplacementMatrix {
        assert_eq!(rows % 3, 0);
        DisplacementMatrix {
            values: DMatrix::from_fn(rows, cols, f),
            scenario_index: (0..cols).map(|_| 1).collect(),
            node_count: rows / 3,
        }
    }

    fn series(steps: usize, nodes: usize, f: impl Fn(usize, usize, usize) -> f64) -> ScenarioSeries {
        ScenarioSeries {
            steps: (0..steps)
                .map(|t| DMatrix::from_fn(nodes, 3, |i, j| f(t, i, j)))
                .collect(),
        }
    }

    #[test]
    fn assemble_row_layout_and_scenario_index() {
        let s1 = series(5, 321, |t, i, j| (t + i + j) as f64);
        let s2 = series(5, 321, |t, i, j| (t * i * j) as f64 * 0.1);
        let m = assemble_data_matrix(&[s1.clone(), s2], 0.0).unwrap();
        assert_eq!(m.values.nrows(), 963);
        assert_eq!(m.values.ncols(), 10);
        assert_eq!(m.scenario_index, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        // row 4 (index 3) is node 2's x displacement
        assert_eq!(m.values[(3, 0)], s1.steps[0][(1, 0)]);
    }

    #[test]
    fn assemble_drops_transient() {
        let s1 = series(5, 4, |t, _, _| t as f64);
        let m = assemble_data_matrix(&[s1], 0.2).unwrap();
        // floor(5 * 0.2) = 1 step dropped
        assert_eq!(m.values.ncols(), 4);
        assert_eq!(m.values[(0, 0)], 1.0);
    }

    #[test]
    fn assemble_rejects_inconsistent_nodes() {
        let good = series(2, 4, |_, _, _| 1.0);
        let bad = series(2, 5, |_, _, _| 1.0);
        assert!(matches!(
            assemble_data_matrix(&[good, bad], 0.0),
            Err(PcaError::InconsistentNodeCount(2, 5, 4))
        ));
    }

    #[test]
    fn rank_one_data_has_one_eigenvalue() {
        let v = DVector::from_fn(9, |i, _| (i as f64 + 1.0).sin());
        let m = toy_matrix(9, 4, |i, j| v[i] * (j as f64 + 1.0));
        let basis = eigen_decompose(&m).unwrap();
        assert!(basis.eigenvalues[0] > 0.0);
        for p in 1..basis.total_components() {
            assert!(basis.eigenvalues[p] < 1e-10 * basis.eigenvalues[0]);
        }
        // first eigenvector parallel to v
        let phi1 = basis.eigenvectors.column(0);
        let cos = phi1.dot(&v.normalize()).abs();
        assert!((cos - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eigenvalue_sum_matches_frobenius_norm() {
        let m = toy_matrix(12, 7, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let basis = eigen_decompose(&m).unwrap();
        let fro2 = m.values.norm_squared();
        assert!((basis.eigenvalues.sum() - fro2).abs() < 1e-8 * fro2);
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let m = toy_matrix(12, 7, |i, j| ((i * 5 + j * 2) as f64 * 0.21).cos());
        let basis = eigen_decompose(&m).unwrap();
        let gram = basis.eigenvectors.transpose() * &basis.eigenvectors;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn svd_route_matches_gram_eigen_route() {
        let m = toy_matrix(9, 6, |i, j| ((i + 2 * j) as f64 * 0.53).sin() + 0.1 * i as f64);
        let basis = eigen_decompose(&m).unwrap();
        let gram = &m.values * m.values.transpose();
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut evs: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        evs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for p in 0..6 {
            assert!(
                (basis.eigenvalues[p] - evs[p]).abs() < 1e-8 * evs[0].max(1.0),
                "eigenvalue {p}: {} vs {}",
                basis.eigenvalues[p],
                evs[p]
            );
        }
    }

    #[test]
    fn select_components_thresholds() {
        let l = DVector::from_vec(vec![9.0, 1.0]);
        assert_eq!(select_components(&l, 0.90).unwrap(), 1);
        assert_eq!(select_components(&l, 0.91).unwrap(), 2);
        assert_eq!(select_components(&l, 1.0).unwrap(), 2);
    }

    #[test]
    fn select_components_rejects_zero_variance() {
        let l = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            select_components(&l, 0.9),
            Err(PcaError::AllZeroVariance)
        ));
        assert!(matches!(
            select_components(&DVector::from_vec(vec![1.0]), 1.5),
            Err(PcaError::BadThreshold(_))
        ));
    }

    #[test]
    fn full_rank_round_trip() {
        let m = toy_matrix(9, 5, |i, j| ((i * 7 + j * 3) as f64 * 0.29).sin());
        let basis = eigen_decompose(&m).unwrap();
        let b = project(&m, &basis).unwrap();
        let rebuilt = basis.leading() * &b.coefficients;
        let err = (&rebuilt - &m.values).norm() / m.values.norm();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn single_eigenvector_column_projects_to_unit_coefficient() {
        let m0 = toy_matrix(9, 4, |i, j| ((i + j) as f64 * 0.41).cos());
        let basis0 = eigen_decompose(&m0).unwrap();
        let phi1 = basis0.eigenvectors.column(0).into_owned();
        let m = DisplacementMatrix {
            values: DMatrix::from_columns(&[phi1.clone()]),
            scenario_index: vec![1],
            node_count: 3,
        };
        let basis = eigen_decompose(&m).unwrap();
        let b = project(&m, &basis).unwrap();
        // single unit column: lambda_1 = 1, coefficient = sqrt(lambda)
        assert!((b.coefficients[(0, 0)] - basis.eigenvalues[0].sqrt()).abs() < 1e-10);
        for p in 1..basis.total_components() {
            assert!(b.coefficients[(p, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn zero_matrix_projects_to_zero() {
        let m0 = toy_matrix(9, 3, |i, j| ((i + j) as f64).sin());
        let basis = eigen_decompose(&m0).unwrap();
        let zero = toy_matrix(9, 3, |_, _| 0.0);
        let b = project(&zero, &basis).unwrap();
        assert!(b.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_coefficients_average_within_scenarios() {
        let b = CoefficientMatrix {
            coefficients: DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            kind: CoefficientKind::PerStep,
        };
        let mean = mean_coefficients(&b, &[1, 1, 1]).unwrap();
        assert_eq!(mean.coefficients[(0, 0)], 2.0);

        let b2 = CoefficientMatrix {
            coefficients: DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 5.0, 7.0, 2.0, 2.0, 0.0, 4.0]),
            kind: CoefficientKind::PerStep,
        };
        let mean2 = mean_coefficients(&b2, &[1, 1, 2, 2]).unwrap();
        assert_eq!(mean2.coefficients.ncols(), 2);
        assert_eq!(mean2.coefficients[(0, 1)], 6.0);
        assert_eq!(mean2.coefficients[(1, 1)], 2.0);
    }

    #[test]
    fn reconstruct_zero_and_round_trip() {
        let m = toy_matrix(9, 5, |i, j| ((i * 2 + j) as f64 * 0.61).sin());
        let basis = eigen_decompose(&m).unwrap();
        let zero = reconstruct(&DVector::zeros(basis.retained), &basis).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        // project a column, reconstruct with the full basis
        let col = m.values.column(2).into_owned();
        let coeffs = basis.leading().transpose() * &col;
        let back = reconstruct(&coeffs, &basis).unwrap();
        assert!((&back - &col).norm() < 1e-8 * col.norm().max(1.0));
    }

    #[test]
    fn truncation_energy_identity() {
        let m = toy_matrix(12, 8, |i, j| ((i * 3 + j * 5) as f64 * 0.17).sin() + 0.05 * j as f64);
        let basis = eigen_decompose(&m).unwrap();
        for k in 1..=basis.total_components() {
            let trunc = basis.clone().with_retention(k, 0.9);
            let b = project(&m, &trunc).unwrap();
            let rebuilt = trunc.leading() * &b.coefficients;
            let err2 = (&m.values - &rebuilt).norm_squared();
            let tail: f64 = (k..basis.total_components())
                .map(|p| basis.eigenvalues[p])
                .sum();
            assert!(
                (err2 - tail).abs() <= 1e-6 * basis.eigenvalues.sum().max(1.0),
                "k={k}: residual {err2} vs tail {tail}"
            );
        }
    }

    #[test]
    fn select_components_monotone_in_threshold() {
        let l = DVector::from_vec(vec![5.0, 3.0, 1.5, 0.4, 0.1]);
        let mut prev = 0;
        for t in [0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0] {
            let k = select_components(&l, t).unwrap();
            assert!(k >= prev, "threshold {t} gave k {k} < {prev}");
            prev = k;
        }
    }

    #[test]
    fn reconstruction_linearity_over_scenario_means() {
        let m = toy_matrix(9, 6, |i, j| ((i + j * j) as f64 * 0.31).sin());
        let mut m = m;
        m.scenario_index = vec![1, 1, 1, 2, 2, 2];
        let basis = eigen_decompose(&m).unwrap().with_retention(3, 0.9);
        let b = project(&m, &basis).unwrap();
        let means = mean_coefficients(&b, &m.scenario_index).unwrap();
        // reconstruct(mean coeffs) == mean of per-step reconstructions
        for scen in 0..2 {
            let rec_mean =
                reconstruct(&means.coefficients.column(scen).into_owned(), &basis).unwrap();
            let mut avg = DVector::zeros(9);
            for step in 0..3 {
                let col = scen * 3 + step;
                avg += reconstruct(&b.coefficients.column(col).into_owned(), &basis).unwrap();
            }
            avg /= 3.0;
            assert!((&rec_mean - &avg).norm() < 1e-10);
        }
    }

    #[test]
    fn unstack_restores_node_layout() {
        let col = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = unstack_column(&col);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 0)], 4.0);
    }
}
