//! Synthetic panels with known second moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{haversine_m, FieldMeta, YieldPanel};
use crate::rng::stream;

/// A scalar parameter distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Dist {
    Constant(f64),
    Uniform(f64, f64),
    Normal { mean: f64, sd: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Constant(v) => v,
            Dist::Uniform(lo, hi) if lo == hi => lo,
            Dist::Uniform(lo, hi) => Uniform::new(lo, hi).expect("valid range").sample(rng),
            Dist::Normal { sd: 0.0, mean } => mean,
            Dist::Normal { mean, sd } => Normal::new(mean, sd).expect("valid sd").sample(rng),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Dist::Constant(v) => v.is_finite(),
            Dist::Uniform(lo, hi) => lo.is_finite() && hi.is_finite() && lo <= hi,
            Dist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid {name} distribution {self:?}")))
        }
    }
}

/// `y_it = α_i + β_i F_t + σ_i ε_it` with `F_t ~ N(0, factor_sd)`, `ε_it ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneFactorSpec {
    pub n: usize,
    pub t: usize,
    pub intercept: Dist,
    pub loading: Dist,
    pub noise_sd: Dist,
    pub factor_sd: f64,
}

impl OneFactorSpec {
    /// Heterogeneous loadings `U(0.5, 1.5)`, unit noise and factor, intercept 100.
    pub fn new(n: usize, t: usize) -> Self {
        OneFactorSpec {
            n,
            t,
            intercept: Dist::Constant(100.0),
            loading: Dist::Uniform(0.5, 1.5),
            noise_sd: Dist::Constant(1.0),
            factor_sd: 1.0,
        }
    }

    pub fn loading(mut self, d: Dist) -> Self {
        self.loading = d;
        self
    }

    pub fn noise_sd(mut self, d: Dist) -> Self {
        self.noise_sd = d;
        self
    }

    pub fn intercept(mut self, d: Dist) -> Self {
        self.intercept = d;
        self
    }
}

/// A generated panel with its true parameters.
#[derive(Debug, Clone)]
pub struct OneFactorSample {
    pub panel: YieldPanel,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub factor: Vec<f64>,
    pub factor_sd: f64,
}

impl OneFactorSample {
    /// Population covariance `var(F) β βᵀ + diag(σ²)`.
    pub fn population_covariance(&self) -> DMatrix<f64> {
        let b = DVector::from_column_slice(&self.beta);
        let mut s = &b * b.transpose() * (self.factor_sd * self.factor_sd);
        for (i, sd) in self.sigma.iter().enumerate() {
            s[(i, i)] += sd * sd;
        }
        s
    }
}

/// Draws a one-factor panel. The factor uses stream 0 of `seed`; field `i`
/// draws its parameters and noise from stream `i + 1`.
pub fn generate_one_factor(spec: &OneFactorSpec, seed: u64) -> Result<OneFactorSample> {
    if spec.n == 0 || spec.t == 0 {
        return Err(Error::InvalidArgument("n and t must be at least 1".into()));
    }
    spec.intercept.validate("intercept")?;
    spec.loading.validate("loading")?;
    spec.noise_sd.validate("noise sd")?;
    let factor_dist = Dist::Normal {
        mean: 0.0,
        sd: spec.factor_sd,
    };
    factor_dist.validate("factor")?;

    let mut rng = stream(seed, 0);
    let factor: Vec<f64> = (0..spec.t).map(|_| factor_dist.sample(&mut rng)).collect();
    let (mut alpha, mut beta, mut sigma) = (vec![], vec![], vec![]);
    let mut values = Vec::with_capacity(spec.n * spec.t);
    for i in 0..spec.n {
        let mut rng = stream(seed, i as u64 + 1);
        let a = spec.intercept.sample(&mut rng);
        let b = spec.loading.sample(&mut rng);
        let s = spec.noise_sd.sample(&mut rng).abs();
        for f in &factor {
            let e: f64 = StandardNormal.sample(&mut rng);
            values.push(a + b * f + s * e);
        }
        alpha.push(a);
        beta.push(b);
        sigma.push(s);
    }
    let fields = (0..spec.n).map(|i| FieldMeta::new(format!("f{i}"))).collect();
    let periods = (0..spec.t).map(|k| format!("p{k:04}")).collect();
    let panel = YieldPanel::new(fields, periods, values)?;
    Ok(OneFactorSample {
        panel,
        alpha,
        beta,
        sigma,
        factor,
        factor_sd: spec.factor_sd,
    })
}

fn orthonormal_centered(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, 0);
    let mut z = DMatrix::<f64>::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
    for mut col in z.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    z.qr().q()
}

/// Panel whose sample correlation matrix is exactly `C = L Lᵀ`.
///
/// Needs `t >= n + 1`. Rows are `level + scale * (Q Lᵀ)ᵀ` with `Q` a `t × n`
/// orthonormal basis orthogonal to the constant vector.
pub fn panel_with_correlation(c: &DMatrix<f64>, t: usize, seed: u64) -> Result<YieldPanel> {
    let n = c.nrows();
    if n == 0 || c.ncols() != n {
        return Err(Error::Dimension("correlation matrix must be square".into()));
    }
    if t < n + 1 {
        return Err(Error::InvalidArgument(format!(
            "exact correlation for {n} fields needs at least {} periods, got {t}",
            n + 1
        )));
    }
    let l = c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("correlation matrix is not positive definite".into()))?
        .unpack();
    let q = orthonormal_centered(n, t, seed);
    let y = q * l.transpose();
    let values: Vec<f64> = (0..n)
        .flat_map(|i| y.column(i).iter().map(|v| 10.0 + v).collect::<Vec<_>>())
        .collect();
    let fields = (0..n).map(|i| FieldMeta::new(format!("f{i}"))).collect();
    let periods = (0..t).map(|k| format!("p{k:04}")).collect();
    YieldPanel::new(fields, periods, values)
}

/// Equicorrelation matrix with off-diagonal `rho`.
pub fn equicorrelation(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

/// Panel with exact sample equicorrelation `rho` over `t >= n + 1` periods.
pub fn equicorrelated_panel(n: usize, rho: f64, t: usize, seed: u64) -> Result<YieldPanel> {
    if !(rho > -1.0 / (n.max(2) - 1) as f64 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho {rho} does not give a positive definite equicorrelation"
        )));
    }
    panel_with_correlation(&equicorrelation(n, rho), t, seed)
}

/// Gaussian field with exponential correlation `exp(-d / range)`.
#[derive(Debug, Clone)]
pub struct SpatialSample {
    pub panel: YieldPanel,
    /// Population correlation between fields.
    pub correlation: DMatrix<f64>,
}

/// Scatters `n` fields uniformly over a square of side `extent_m` and draws
/// `t` independent periods with correlation `exp(-d / range_m)`.
pub fn spatial_exponential_panel(
    n: usize,
    t: usize,
    extent_m: f64,
    range_m: f64,
    seed: u64,
) -> Result<SpatialSample> {
    if n == 0 || t < 2 || !(extent_m > 0.0) || !(range_m > 0.0) {
        return Err(Error::InvalidArgument(
            "spatial panel needs n >= 1, t >= 2 and positive extent and range".into(),
        ));
    }
    const LAT0: f64 = 0.5;
    let m_per_deg = crate::panel::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let mut rng = stream(seed, 0);
    let side = Uniform::new(0.0, extent_m).expect("positive extent");
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let (dx, dy) = (side.sample(&mut rng), side.sample(&mut rng));
            (
                36.0 + dx / (m_per_deg * LAT0.to_radians().cos()),
                LAT0 + dy / m_per_deg,
            )
        })
        .collect();
    let corr = DMatrix::from_fn(n, n, |i, j| (-haversine_m(coords[i], coords[j]) / range_m).exp());
    let mut jittered = corr.clone();
    for i in 0..n {
        jittered[(i, i)] += 1e-10;
    }
    let l = jittered
        .cholesky()
        .ok_or_else(|| Error::Numeric {
            field: String::new(),
            message: "spatial kernel is not positive definite".into(),
        })?
        .unpack();
    let mut rng = stream(seed, 1);
    let z = DMatrix::<f64>::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng));
    let y = l * z;
    let values: Vec<f64> = y.transpose().iter().map(|v| 10.0 + v).collect();
    let fields = coords
        .iter()
        .enumerate()
        .map(|(i, &(lon, lat))| FieldMeta::new(format!("f{i}")).with_coords(lon, lat))
        .collect();
    let periods = (0..t).map(|k| format!("p{k:04}")).collect();
    Ok(SpatialSample {
        panel: YieldPanel::new(fields, periods, values)?,
        correlation: corr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{compute_moments, Denominator};

    #[test]
    fn exact_equicorrelation() {
        let panel = equicorrelated_panel(5, 0.3, 9, 1).unwrap();
        let m = compute_moments(&panel, Denominator::Unbiased).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.3 };
                assert!((m.corr[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_factor_is_reproducible() {
        let spec = OneFactorSpec::new(4, 6);
        let a = generate_one_factor(&spec, 3).unwrap();
        let b = generate_one_factor(&spec, 3).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn noiseless_equal_loadings_are_collinear() {
        let spec = OneFactorSpec::new(3, 8)
            .loading(Dist::Constant(1.0))
            .noise_sd(Dist::Constant(0.0));
        let s = generate_one_factor(&spec, 9).unwrap();
        let m = compute_moments(&s.panel, Denominator::Unbiased).unwrap();
        assert!(m.corr.iter().all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spatial_kernel_has_unit_diagonal() {
        let s = spatial_exponential_panel(10, 5, 2000.0, 1000.0, 4).unwrap();
        assert!((0..10).all(|i| s.correlation[(i, i)] == 1.0));
        assert!(s.panel.fields().iter().all(|f| f.coords().is_some()));
    }
}
