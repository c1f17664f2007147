#![allow(dead_code)]

use basisrisk::evaluation::synthetic::{generate_one_factor, Dist, OneFactorSpec};
use basisrisk::rng::{stream, StreamRng};
use basisrisk::YieldPanel;
use rand_distr::{Distribution, StandardNormal};

/// One-factor panel with mixed-sign loadings and uneven noise.
pub fn random_panel(n: usize, t: usize, seed: u64) -> YieldPanel {
    let spec = OneFactorSpec::new(n, t)
        .loading(Dist::Normal { mean: 0.8, sd: 1.0 })
        .noise_sd(Dist::Uniform(0.2, 2.0))
        .intercept(Dist::Uniform(50.0, 150.0));
    generate_one_factor(&spec, seed).unwrap().panel
}

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, 999)
}

/// Uniform draw on the unit sphere.
pub fn unit_vector(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Squared sample correlation computed from scratch.
pub fn r2(y: &[f64], f: &[f64]) -> f64 {
    let (my, mf) = (mean(y), mean(f));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(f) {
        sxy += (a - my) * (b - mf);
        sxx += (b - mf) * (b - mf);
        syy += (a - my) * (a - my);
    }
    sxy * sxy / (sxx * syy)
}

/// `(β, R², SSR, SST)` of `y` on `(1, f)` from scratch.
pub fn ols(y: &[f64], f: &[f64]) -> (f64, f64, f64, f64) {
    let (my, mf) = (mean(y), mean(f));
    let sxy: f64 = y.iter().zip(f).map(|(a, b)| (a - my) * (b - mf)).sum();
    let sff: f64 = f.iter().map(|b| (b - mf) * (b - mf)).sum();
    let sst: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    let beta = sxy / sff;
    let ssr: f64 = y
        .iter()
        .zip(f)
        .map(|(a, b)| {
            let e = (a - my) - beta * (b - mf);
            e * e
        })
        .sum();
    (beta, sxy * sxy / (sff * sst), ssr, sst)
}

pub fn weighted_index(panel: &YieldPanel, w: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; panel.n_periods()];
    for (i, wi) in w.iter().enumerate() {
        for (acc, y) in f.iter_mut().zip(panel.series(i)) {
            *acc += wi * y;
        }
    }
    f
}

pub fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}
