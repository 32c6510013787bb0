//! Luxemburg norms for the exponential Young pair
//! `θ(s) = e^|s| − |s| − 1` and `θ*(s) = (|s| + 1) log(1 + |s|) − |s|`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

use super::GridMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Young {
    ExpYoung,
    DualExpYoung,
}

impl Young {
    pub fn eval(self, s: f64) -> f64 {
        let a = s.abs();
        match self {
            Young::ExpYoung => a.exp_m1() - a,
            Young::DualExpYoung => (a + 1.0) * a.ln_1p() - a,
        }
    }
}

/// The positive root of `θ(s) = 1`.
pub fn young_unit_root(theta: Young) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while theta.eval(hi) < 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if theta.eval(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn modular(f: &[f64], mu: &GridMeasure, theta: Young, b: f64) -> f64 {
    f.iter()
        .zip(mu.masses())
        .filter(|(_, m)| **m > 0.0)
        .map(|(v, m)| m * theta.eval(v / b))
        .sum()
}

/// `inf { b > 0 : ∫ θ(f/b) dμ ≤ 1 }`; `+∞` if `f` is not finite on the support of `μ`.
pub fn luxemburg_norm(f: &[f64], mu: &GridMeasure, theta: Young) -> f64 {
    assert_eq!(f.len(), mu.len());
    let support = || f.iter().zip(mu.masses()).filter(|(_, m)| **m > 0.0);
    if support().any(|(v, _)| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sup = support().map(|(v, _)| v.abs()).fold(0.0, f64::max);
    if sup == 0.0 {
        return 0.0;
    }
    let root = young_unit_root(theta);
    let mean: f64 = support().map(|(v, m)| v.abs() * m).sum();
    // Jensen below, the sup bound above
    let (mut lo, mut hi) = (mean / root, sup / root);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if modular(f, mu, theta, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderYoungReport {
    /// `|∫ f g dμ|`.
    pub lhs: f64,
    /// `2 ‖f‖_θ ‖g‖_θ*`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

pub fn holder_young_check(f: &[f64], g: &[f64], mu: &GridMeasure) -> HolderYoungReport {
    let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    let lhs = mu.integrate(&prod).abs();
    let nf = luxemburg_norm(f, mu, Young::ExpYoung);
    let ng = luxemburg_norm(g, mu, Young::DualExpYoung);
    let rhs = if nf == 0.0 || ng == 0.0 { 0.0 } else { 2.0 * nf * ng };
    HolderYoungReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrliczSuiteReport {
    /// Largest relative gap between the norm of a constant and the scalar root.
    pub constant_error: f64,
    /// Largest relative violation of `‖λf‖ = |λ| ‖f‖`.
    pub homogeneity_error: f64,
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` over the pairs.
    pub min_slack: f64,
    pub pass: bool,
}

/// `b` with `θ(|c|/b) = 1`, by bisection on `b`.
fn constant_norm_oracle(c: f64, theta: Young) -> f64 {
    let a = c.abs();
    let (mut lo, mut hi) = (0.0f64, a.max(1.0));
    while theta.eval(a / hi) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if theta.eval(a / mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Constants, homogeneity and `pairs` random Hölder-Young pairs on `mu`.
pub fn orlicz_suite(mu: &GridMeasure, pairs: usize, root_seed: u64) -> OrliczSuiteReport {
    let n = mu.len();
    let mut constant_error: f64 = 0.0;
    let mut homogeneity_error: f64 = 0.0;
    for theta in [Young::ExpYoung, Young::DualExpYoung] {
        for c in [1e-3, 0.5, 1.0, -2.0, 7.5, 300.0] {
            let got = luxemburg_norm(&vec![c; n], mu, theta);
            let want = constant_norm_oracle(c, theta);
            constant_error = constant_error.max((got - want).abs() / want);
        }
    }
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for i in 0..pairs {
        let mut rng = seed::stream(root_seed, seed::PROBE, i as u64);
        let sf = 10f64.powf(rng.random_range(-2.0..1.0));
        let sg = 10f64.powf(rng.random_range(-2.0..1.0));
        let f: Vec<f64> = (0..n).map(|_| sf * rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| sg * rng.random_range(-1.0..1.0)).collect();
        if i < 50 {
            for theta in [Young::ExpYoung, Young::DualExpYoung] {
                let nf = luxemburg_norm(&f, mu, theta);
                for lambda in [0.25, -3.0, 40.0] {
                    let scaled: Vec<f64> = f.iter().map(|v| lambda * v).collect();
                    let ns = luxemburg_norm(&scaled, mu, theta);
                    homogeneity_error = homogeneity_error.max((ns - lambda.abs() * nf).abs() / (lambda.abs() * nf));
                }
            }
        }
        let r = holder_young_check(&f, &g, mu);
        if !r.holds {
            violations += 1;
        }
        min_slack = min_slack.min(r.slack);
    }
    OrliczSuiteReport {
        constant_error,
        homogeneity_error,
        pairs,
        violations,
        min_slack,
        pass: constant_error <= 1e-8 && homogeneity_error <= 1e-8 && violations == 0,
    }
}
