//! Negative-temperature stability: integrability of `e^{−β₀W}` under
//! refinement, the AM-GM constant `C_β = ∫∫ e^{−βW} dμ₀ dμ₀` that bounds
//! `Z_{N,β} ≤ C_β^{N−1}`, and trend tests on marginal densities.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::interaction::{HamiltonianSpec, Kernel, KernelForm};
use crate::space::{build_grid, StateSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Integrable,
    Divergent,
    Inconclusive,
}

/// Quadrature values at increasing resolutions with their verdict.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementReport {
    pub beta: f64,
    pub resolutions: Vec<usize>,
    pub values: Vec<f64>,
    /// Finest over second-finest value.
    pub growth: f64,
    /// Ratio of the last two increments.
    pub increment_ratio: Option<f64>,
    pub verdict: Verdict,
}

impl RefinementReport {
    /// Value at the finest resolution.
    pub fn value(&self) -> f64 {
        *self.values.last().expect("at least one resolution")
    }
}

/// Default refinement ladder for a space.
pub fn default_resolutions(space: &StateSpace) -> Vec<usize> {
    match space.dimension() {
        0 => vec![0],
        1 => vec![256, 1024, 4096],
        _ => vec![8, 16, 32],
    }
}

/// Divergent if the values double per refinement or their increments grow,
/// integrable if the increments shrink geometrically.
fn verdict(values: &[f64]) -> (f64, Option<f64>, Verdict) {
    if values.iter().any(|v| !v.is_finite()) {
        return (f64::INFINITY, None, Verdict::Divergent);
    }
    let k = values.len();
    if k == 1 {
        return (1.0, None, Verdict::Integrable);
    }
    let (fine, second) = (values[k - 1], values[k - 2]);
    let growth = fine / second;
    if growth >= 2.0 {
        return (growth, None, Verdict::Divergent);
    }
    if k == 2 {
        return (growth, None, Verdict::Inconclusive);
    }
    let (d_fine, d_coarse) = (fine - second, second - values[k - 3]);
    if d_fine.abs() <= 1e-9 * fine.abs() {
        return (growth, Some(0.0), Verdict::Integrable);
    }
    let q = d_fine.abs() / d_coarse.abs();
    let v = if q < 0.9 {
        Verdict::Integrable
    } else if q > 1.1 {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    };
    (growth, Some(q), v)
}

fn check_kernels(kernels: &[Kernel]) -> Result<bool> {
    if kernels.is_empty() {
        return Ok(false);
    }
    if kernels.iter().any(|k| k.order != 2) {
        return config("stability checks take pair kernels");
    }
    Ok(kernels.iter().any(Kernel::is_singular))
}

/// `(sup_x ∫ e^{−β W(x,·)} dμ₀, ∫∫ e^{−βW} dμ₀ dμ₀)` on one grid.
fn quadratures(space: &StateSpace, kernels: &[Kernel], beta: f64, res: usize) -> Result<(f64, f64)> {
    let grid = Arc::new(build_grid(space, res)?);
    let spec = HamiltonianSpec::new(grid, kernels.to_vec())?;
    let w = spec.grid().weights().to_vec();
    let g = |v: f64| {
        let e = -beta * v;
        if e == f64::NEG_INFINITY {
            0.0
        } else {
            e.exp()
        }
    };
    let rows: Vec<f64> = (0..w.len())
        .into_par_iter()
        .map(|a| (0..w.len()).map(|b| w[b] * spec.pair_cell_value(a, b, g)).sum())
        .collect();
    let sup = rows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let double = rows.iter().zip(&w).map(|(r, m)| r * m).sum();
    Ok((sup, double))
}

fn ladder(
    space: &StateSpace,
    kernels: &[Kernel],
    beta: f64,
    resolutions: &[usize],
    pick: impl Fn((f64, f64)) -> f64,
) -> Result<RefinementReport> {
    if resolutions.is_empty() {
        return config("empty resolution list");
    }
    let singular = check_kernels(kernels)?;
    let used: Vec<usize> = if !singular || space.is_finite() {
        vec![resolutions[0]]
    } else {
        resolutions.to_vec()
    };
    let values: Vec<f64> = if kernels.is_empty() {
        vec![1.0]
    } else {
        used.iter()
            .map(|&r| quadratures(space, kernels, beta, r).map(&pick))
            .collect::<Result<_>>()?
    };
    let (growth, increment_ratio, verdict) = verdict(&values);
    Ok(RefinementReport {
        beta,
        resolutions: used,
        values,
        growth,
        increment_ratio,
        verdict,
    })
}

/// `sup_x ∫ e^{−β₀ W(x,y)} dμ₀(y)` under grid refinement, for `β₀ < 0`.
pub fn integrability_check(
    space: &StateSpace,
    kernels: &[Kernel],
    beta0: f64,
    resolutions: &[usize],
) -> Result<RefinementReport> {
    if !(beta0 < 0.0) {
        return config("integrability_check needs beta0 < 0");
    }
    ladder(space, kernels, beta0, resolutions, |(sup, _)| sup)
}

/// `C_β = ∫∫ e^{−βW} dμ₀^{⊗2}` under grid refinement.
pub fn amgm_bound(
    space: &StateSpace,
    kernels: &[Kernel],
    beta: f64,
    resolutions: &[usize],
) -> Result<RefinementReport> {
    if !beta.is_finite() {
        return config("amgm_bound needs a finite beta");
    }
    ladder(space, kernels, beta, resolutions, |(_, c)| c)
}

/// Refuses negative temperatures whose AM-GM constant diverges; returns a
/// warning when the refinement verdict is inconclusive.
pub fn precheck(spec: &HamiltonianSpec, beta: f64) -> Result<Option<String>> {
    if beta >= 0.0 {
        return Ok(None);
    }
    let pairs: Vec<Kernel> = spec.terms().iter().filter(|k| k.order == 2).cloned().collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let report = if pairs.iter().any(|k| matches!(k.form, KernelForm::Tabulated(_))) {
        // tabulated kernels only have values on their own grid
        let w = spec.grid().weights();
        let n = w.len();
        let mut c = 0.0;
        for a in 0..n {
            for b in 0..n {
                c += w[a] * w[b] * spec.pair_cell_value(a, b, |v| (-beta * v).exp());
            }
        }
        let (growth, increment_ratio, verdict) = verdict(&[c]);
        RefinementReport {
            beta,
            resolutions: vec![spec.grid().resolution()],
            values: vec![c],
            growth,
            increment_ratio,
            verdict,
        }
    } else {
        amgm_bound(spec.space(), &pairs, beta, &default_resolutions(spec.space()))?
    };
    match report.verdict {
        Verdict::Integrable => Ok(None),
        Verdict::Inconclusive => Ok(Some(format!(
            "AM-GM constant at beta = {beta} is inconclusive under refinement (values {:?})",
            report.values
        ))),
        Verdict::Divergent => Err(Error::Stability(format!(
            "refusing beta = {beta}: C_beta = ∫∫ e^(-beta W) dμ0 dμ0 diverges under refinement (values {:?}), \
             so Z_N,beta <= C_beta^(N-1) gives no bound; e^(-beta W) fails the uniform integrability condition",
            report.values
        ))),
    }
}

/// One `j = 2` marginal density estimate at particle number `n`.
#[derive(Clone, Debug)]
pub struct MarginalSample {
    pub n: usize,
    /// Density on `grid²` with respect to `μ₀^{⊗2}`.
    pub density: Vec<f64>,
    pub effective_samples: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpReport {
    pub p: f64,
    pub norms: Vec<(usize, f64)>,
    /// Largest over smallest norm.
    pub spread: f64,
    pub verdict: Verdict,
    pub pass: bool,
}

/// `‖ρ‖_p` against `μ₀^{⊗2}` for a density on `grid²`, given the one-dimensional
/// cell weights (`p = ∞` is the cell maximum).
pub fn lp_norm(density: &[f64], weights: &[f64], p: f64) -> f64 {
    let n = weights.len();
    let mut acc: f64 = 0.0;
    for (i, r) in density.iter().enumerate() {
        let m = weights[i / n] * weights[i % n];
        if m > 0.0 {
            if p.is_infinite() {
                acc = acc.max(r.abs());
            } else {
                acc += m * r.abs().powf(p);
            }
        }
    }
    if p.is_infinite() {
        acc
    } else {
        acc.powf(1.0 / p)
    }
}

/// Pass when the norms vary by less than a factor 1.5 across `N`;
/// inconclusive when any estimate rests on fewer than 10 effective samples.
pub fn lp_marginal_check(samples: &[MarginalSample], weights: &[f64], p: f64) -> Result<LpReport> {
    if samples.is_empty() || !(p >= 1.0) {
        return config("lp_marginal_check needs samples and p >= 1");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| s.n);
    let norms: Vec<(usize, f64)> = sorted.iter().map(|s| (s.n, lp_norm(&s.density, weights, p))).collect();
    let hi = norms.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = norms.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    let pass = spread < 1.5;
    let verdict = if sorted.iter().any(|s| s.effective_samples < 10.0) {
        Verdict::Inconclusive
    } else if pass {
        Verdict::Integrable
    } else {
        Verdict::Divergent
    };
    Ok(LpReport {
        p,
        norms,
        spread,
        verdict,
        pass: pass && verdict != Verdict::Inconclusive,
    })
}

/// `C_β` for `W = −log d` (arc length) on the circle with uniform μ₀,
/// finite for `β > −1`: the mean of `d^β` with `d` uniform on `[0, π]`.
pub fn circle_log_amgm_constant(beta: f64) -> f64 {
    std::f64::consts::PI.powf(beta) / (beta + 1.0)
}
