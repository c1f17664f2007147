//! Second moments of a yield panel and the leading eigenpair of the
//! covariance or correlation matrix.
//!
//! For wide zones (`N` fields, `T` periods, `N > T`) the `N × N` matrices are
//! never formed: with `X` the scaled, demeaned `N × T` data, `X X'` and `X'X`
//! share their nonzero eigenvalues and trace, so the leading eigenpair comes
//! from the `T × T` Gram matrix and `v = X u / ‖X u‖`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::YieldPanel;

/// Relative standard deviation below which a field counts as constant.
const DEGENERATE_REL_SD: f64 = 1e-12;

/// Divisor used for sample covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Denominator {
    /// `T - 1`
    #[default]
    Unbiased,
    /// `T`
    Population,
}

impl Denominator {
    pub fn divisor(self, t: usize) -> f64 {
        match self {
            Denominator::Unbiased => (t - 1) as f64,
            Denominator::Population => t as f64,
        }
    }
}

impl std::str::FromStr for Denominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T-1" | "t-1" | "unbiased" => Ok(Denominator::Unbiased),
            "T" | "t" | "population" => Ok(Denominator::Population),
            other => Err(Error::InvalidArgument(format!(
                "unknown denominator `{other}` (expected T-1 or T)"
            ))),
        }
    }
}

/// Which second-moment matrix an eigen statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Correlation,
    Covariance,
}

/// Time-demeaned panel rows with per-field variances.
#[derive(Debug, Clone)]
pub struct CenteredPanel {
    /// Row-major `N × T` deviations from each field's time mean.
    pub deviations: Vec<f64>,
    pub means: Vec<f64>,
    /// Sum of squared deviations per field (`SST_i`).
    pub sst: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub n: usize,
    pub t: usize,
}

impl CenteredPanel {
    pub fn new(panel: &YieldPanel) -> Self {
        let n = panel.n_fields();
        let t = panel.n_periods();
        let mut deviations = Vec::with_capacity(n * t);
        let mut means = Vec::with_capacity(n);
        let mut sst = Vec::with_capacity(n);
        let mut degenerate = Vec::with_capacity(n);
        for row in panel.rows() {
            let (mean, ss, deg) = center_into(row, &mut deviations);
            means.push(mean);
            sst.push(ss);
            degenerate.push(deg);
        }
        CenteredPanel {
            deviations,
            means,
            sst,
            degenerate,
            n,
            t,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.deviations[i * self.t..(i + 1) * self.t]
    }

    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    /// `N × T` factor `Z` with `Z Z' = C`: unit-norm deviation rows, zero for
    /// constant fields.
    pub fn correlation_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.t, |i, s| {
            if self.degenerate[i] {
                0.0
            } else {
                self.deviations[i * self.t + s] / self.sst[i].sqrt()
            }
        })
    }

    /// `N × T` factor `X` with `X X' = Σ`.
    pub fn covariance_factor(&self, denom: Denominator) -> DMatrix<f64> {
        let scale = denom.divisor(self.t).sqrt();
        DMatrix::from_fn(self.n, self.t, |i, s| self.deviations[i * self.t + s] / scale)
    }

    pub fn factor(&self, target: Target, denom: Denominator) -> DMatrix<f64> {
        match target {
            Target::Correlation => self.correlation_factor(),
            Target::Covariance => self.covariance_factor(denom),
        }
    }
}

/// Appends `row - mean(row)` to `out`; returns `(mean, Σ dev², is_constant)`.
pub(crate) fn center_into(row: &[f64], out: &mut Vec<f64>) -> (f64, f64, bool) {
    let t = row.len() as f64;
    let mean = row.iter().sum::<f64>() / t;
    let mut ss = 0.0;
    let mut scale = 0.0f64;
    for &y in row {
        let d = y - mean;
        ss += d * d;
        scale = scale.max(y.abs());
        out.push(d);
    }
    let deg = ss == 0.0 || ss.sqrt() <= DEGENERATE_REL_SD * scale * t.sqrt();
    (mean, ss, deg)
}

/// Covariance, variance diagonal and correlation of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub sigma: DMatrix<f64>,
    pub var_diag: Vec<f64>,
    pub corr: DMatrix<f64>,
    /// Fields with zero variance; their correlation rows and columns are 0.
    pub degenerate: Vec<bool>,
    pub n: usize,
    pub t: usize,
    pub denominator: Denominator,
}

impl MomentSummary {
    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    pub fn n_effective(&self) -> usize {
        self.n - self.n_degenerate()
    }

    pub fn eigen(&self, target: Target) -> Result<EigenSummary> {
        match target {
            Target::Correlation => top_eigen(&self.corr),
            Target::Covariance => top_eigen(&self.sigma),
        }
    }
}

/// Sample covariance `Σ` (demeaned over time), its diagonal and `C = D^-1/2 Σ D^-1/2`.
pub fn compute_moments(panel: &YieldPanel, denom: Denominator) -> Result<MomentSummary> {
    let t = panel.n_periods();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 periods, got {t}"
        )));
    }
    let centered = CenteredPanel::new(panel);
    let x = centered.covariance_factor(denom);
    let sigma = &x * x.transpose();
    let sigma = symmetrize(sigma);
    let var_diag: Vec<f64> = (0..centered.n).map(|i| sigma[(i, i)]).collect();
    let z = centered.correlation_factor();
    let mut corr = symmetrize(&z * z.transpose());
    for i in 0..centered.n {
        if !centered.degenerate[i] {
            corr[(i, i)] = 1.0;
        }
    }
    Ok(MomentSummary {
        sigma,
        var_diag,
        corr,
        degenerate: centered.degenerate,
        n: centered.n,
        t,
        denominator: denom,
    })
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Leading eigen statistics of a symmetric PSD matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    /// Descending, clamped at 0. Length `min(N, k)` on the Gram path.
    pub eigenvalues: Vec<f64>,
    pub first_eigenvector: Vec<f64>,
    pub trace: f64,
    /// `λ₁ / Σλ`.
    pub top_share: f64,
}

impl EigenSummary {
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Flips `v` so that its entries sum to a nonnegative value; on a zero sum the
/// first nonzero entry is made positive.
pub fn normalize_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let flip = if sum.abs() > 1e-12 * l1 {
        sum < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
        }
    }
    if worst > 1e-10 {
        return Err(Error::Asymmetric(worst));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Sorted eigen-decomposition: descending eigenvalues and the top eigenvector.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let top = eig.eigenvectors.column(order[0]).into_owned();
    (values, top)
}

fn summarize(mut values: Vec<f64>, mut v: Vec<f64>, trace: f64) -> Result<EigenSummary> {
    if !(trace > 0.0) {
        return Err(Error::DegenerateZone(format!(
            "matrix trace is {trace}; no variation to decompose"
        )));
    }
    let floor = -1e-9 * trace;
    if let Some(bad) = values.iter().find(|l| **l < floor) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not positive semidefinite (eigenvalue {bad:e})"
        )));
    }
    values.iter_mut().for_each(|l| *l = l.max(0.0));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    normalize_sign(&mut v);
    let top_share = values[0] / trace;
    Ok(EigenSummary {
        eigenvalues: values,
        first_eigenvector: v,
        trace,
        top_share,
    })
}

/// Direct decomposition of a symmetric PSD matrix.
pub fn top_eigen(matrix: &DMatrix<f64>) -> Result<EigenSummary> {
    check_symmetric(matrix)?;
    let trace = matrix.trace();
    let (values, v) = sorted_eigen(symmetrize(matrix.clone()));
    summarize(values, v.iter().copied().collect(), trace)
}

/// Decomposition of `X X'` through the `k × k` Gram matrix `X'X` of an
/// `N × k` factor.
pub fn top_eigen_gram(factor: &DMatrix<f64>) -> Result<EigenSummary> {
    if factor.nrows() == 0 || factor.ncols() == 0 {
        return Err(Error::Dimension("empty factor".into()));
    }
    let gram = symmetrize(factor.tr_mul(factor));
    let trace = gram.trace();
    let (values, u) = sorted_eigen(gram);
    let v = factor * u;
    if !(v.norm() > 0.0) {
        return Err(Error::DegenerateZone(
            "leading eigenvalue is zero; no variation to decompose".into(),
        ));
    }
    summarize(values, v.iter().copied().collect(), trace)
}

/// Eigen statistics of `X X'`, via the Gram matrix when `N > k`.
pub fn top_eigen_factor(factor: &DMatrix<f64>) -> Result<EigenSummary> {
    if factor.nrows() > factor.ncols() {
        top_eigen_gram(factor)
    } else {
        top_eigen(&(factor * factor.transpose()))
    }
}

/// Eigen statistics of the panel's correlation or covariance matrix without
/// forming it when `N > T`.
pub fn panel_eigen(panel: &YieldPanel, target: Target, denom: Denominator) -> Result<EigenSummary> {
    let centered = CenteredPanel::new(panel);
    if target == Target::Correlation && centered.n_degenerate() == centered.n {
        return Err(Error::DegenerateZone(
            "every field has constant yields".into(),
        ));
    }
    top_eigen_factor(&centered.factor(target, denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> YieldPanel {
        YieldPanel::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 1.0, 4.0, 5.0],
            vec![3.0, 3.0, 1.0, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let panel = fixture();
        let m = compute_moments(&panel, Denominator::Unbiased).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (panel.series(i), panel.series(j));
                let ma = a.iter().sum::<f64>() / 4.0;
                let mb = b.iter().sum::<f64>() / 4.0;
                let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
                assert!((m.sigma[(i, j)] - s / 3.0).abs() < 1e-14);
            }
        }
        // hand values: var(f0) = 5/3, cov(f0,f1) = 2, cov(f0,f2) = -5/6
        assert!((m.sigma[(0, 0)] - 5.0 / 3.0).abs() < 1e-14);
        assert!((m.sigma[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((m.sigma[(0, 2)] + 5.0 / 6.0).abs() < 1e-14);
        let pop = compute_moments(&panel, Denominator::Population).unwrap();
        assert!((pop.sigma[(0, 0)] - 5.0 / 4.0).abs() < 1e-14);
        assert!((pop.corr[(0, 1)] - m.corr[(0, 1)]).abs() < 1e-14);
    }

    #[test]
    fn identical_series_fully_correlated() {
        let p = YieldPanel::from_rows(&[vec![1.0, 3.0, 2.0], vec![1.0, 3.0, 2.0]]).unwrap();
        let m = compute_moments(&p, Denominator::Unbiased).unwrap();
        for v in m.corr.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_field_is_degenerate() {
        let p = YieldPanel::from_rows(&[vec![0.1, 0.1, 0.1], vec![1.0, 3.0, 2.0]]).unwrap();
        let m = compute_moments(&p, Denominator::Unbiased).unwrap();
        assert_eq!(m.degenerate, vec![true, false]);
        assert!(m.var_diag[0].abs() < 1e-30);
        assert_eq!(m.corr[(0, 0)], 0.0);
        assert_eq!(m.corr[(0, 1)], 0.0);
        assert_eq!(m.n_effective(), 1);
    }

    #[test]
    fn identity_share() {
        let e = top_eigen(&DMatrix::identity(5, 5)).unwrap();
        assert!((e.lambda1() - 1.0).abs() < 1e-12);
        assert!((e.top_share - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rank_one_share() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let e = top_eigen(&(&v * v.transpose())).unwrap();
        assert!((e.top_share - 1.0).abs() < 1e-12);
        let norm = v.norm();
        for (a, b) in e.first_eigenvector.iter().zip(v.iter()) {
            assert!((a - b / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(top_eigen(&m).unwrap_err(), Error::Asymmetric(_)));
    }

    #[test]
    fn sign_rule() {
        let mut v = vec![-0.6, -0.8];
        normalize_sign(&mut v);
        assert_eq!(v, vec![0.6, 0.8]);
        let mut tie = vec![0.0, -1.0, 1.0];
        normalize_sign(&mut tie);
        assert_eq!(tie, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn too_few_periods() {
        // a one-period panel cannot be constructed at all
        assert!(YieldPanel::from_rows(&[vec![1.0]]).is_err());
    }
}
