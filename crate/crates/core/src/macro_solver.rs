//! Macroscopic free-energy functionals and their minimizers.
//!
//! For `β ∈ (0, ∞)` the objective is `F_β = E + D/β + Φ`; for `β < 0` it is the
//! signed rate `βE + D + βΦ`; for `β = ∞` it is `E + Φ`. Here `D = D(·|μ₀)` and
//! `Φ(μ) = ∫ u dμ` is an optional linear tilt.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Result};
use crate::interaction::{dot, macroscopic_energy, order_parameter, tilted, HamiltonianSpec};
use crate::measure::{relative_entropy, GridMeasure, TiltFunctional};
use crate::space::QuadratureGrid;

pub const FIXED_POINT_TOL: f64 = 1e-9;
pub const MAX_FIXED_POINT_ITERS: usize = 10_000;
pub const DUALITY_GAP_TOL: f64 = 1e-6;
pub const MAX_FRANK_WOLFE_ITERS: usize = 10_000_000;
/// Largest grid for which the convexity eigenvalue is computed.
pub const MAX_EIGEN_CELLS: usize = 1024;

#[derive(Clone, Debug)]
pub struct FreeEnergyProblem {
    spec: HamiltonianSpec,
    /// `spec` with the tilt folded in.
    effective: HamiltonianSpec,
    beta: f64,
    tilt: Option<TiltFunctional>,
}

impl FreeEnergyProblem {
    pub fn new(spec: HamiltonianSpec, beta: f64, tilt: Option<TiltFunctional>) -> Result<Self> {
        if beta == 0.0 || beta.is_nan() || beta == f64::NEG_INFINITY {
            return config(format!("beta must be nonzero and in (-inf, inf], got {beta}"));
        }
        let effective = match &tilt {
            Some(t) => tilted(&spec, &t.u)?,
            None => spec.clone(),
        };
        Ok(Self {
            spec,
            effective,
            beta,
            tilt,
        })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.spec.grid()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tilt(&self) -> Option<&TiltFunctional> {
        self.tilt.as_ref()
    }

    fn base(&self) -> GridMeasure {
        GridMeasure::base(self.grid())
    }

    /// `E(μ) + Φ(μ)`.
    pub fn energy(&self, mu: &GridMeasure) -> f64 {
        macroscopic_energy(&self.effective, mu)
    }

    /// `βE(μ) + D(μ) + βΦ(μ)`, defined for finite β.
    pub fn signed_rate(&self, mu: &GridMeasure) -> f64 {
        let d = relative_entropy(mu, &self.base());
        if d.is_infinite() {
            return d;
        }
        self.beta * self.energy(mu) + d
    }

    /// First variation of `E + Φ`.
    pub fn potential(&self, mu: &GridMeasure) -> Vec<f64> {
        self.effective.potential(mu)
    }
}

/// The free-energy objective at `mu` (the signed rate when `β < 0`).
pub fn objective(problem: &FreeEnergyProblem, mu: &GridMeasure) -> f64 {
    let b = problem.beta;
    if b == f64::INFINITY {
        problem.energy(mu)
    } else if b > 0.0 {
        let d = relative_entropy(mu, &problem.base());
        if d.is_infinite() {
            return d;
        }
        problem.energy(mu) + d / b
    } else {
        problem.signed_rate(mu)
    }
}

/// `δE/δμ` at `mu`, fields and tilt included.
pub fn potential(spec: &HamiltonianSpec, mu: &GridMeasure) -> Vec<f64> {
    spec.potential(mu)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub minimizer: GridMeasure,
    pub value: f64,
    pub iterations: usize,
    /// Sup-norm residual of the self-consistency map, or the final duality gap.
    pub residual: f64,
    pub converged: bool,
    /// Sup-norm deviation of `log(dμ/dμ₀) + β·potential` from a constant.
    pub stationarity: Option<f64>,
    /// Number of step-size halvings triggered by an objective increase.
    pub halvings: usize,
    /// Frank-Wolfe duality gap at termination.
    pub certificate: Option<f64>,
    /// Smallest eigenvalue of the pair matrix on mass-zero directions.
    pub convexity: Option<f64>,
    pub disclaimer: Option<String>,
    pub stability_failure: Option<String>,
    pub order_parameter: Option<f64>,
}

impl SolverReport {
    fn finish(problem: &FreeEnergyProblem, minimizer: GridMeasure, iterations: usize, residual: f64) -> Self {
        let value = objective(problem, &minimizer);
        let order_parameter = order_parameter(problem.grid(), &minimizer);
        Self {
            minimizer,
            value,
            iterations,
            residual,
            converged: false,
            stationarity: None,
            halvings: 0,
            certificate: None,
            convexity: None,
            disclaimer: None,
            stability_failure: None,
            order_parameter,
        }
    }
}

/// `Normalize(μ₀ · e^{−β·pot})`, or `None` if the weights are not finite.
fn gibbs_map(mu0: &[f64], pot: &[f64], beta: f64) -> Option<Vec<f64>> {
    let logw: Vec<f64> = mu0
        .iter()
        .zip(pot)
        .map(|(&m, &p)| if m > 0.0 { m.ln() - beta * p } else { f64::NEG_INFINITY })
        .collect();
    if logw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return None;
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / total).collect())
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn stationarity(problem: &FreeEnergyProblem, mu: &GridMeasure) -> f64 {
    let pot = problem.potential(mu);
    let mu0 = problem.base();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((m, q), p) in mu.masses().iter().zip(mu0.masses()).zip(&pot) {
        if *q > 0.0 {
            let v = (m / q).ln() + problem.beta * p;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    0.5 * (hi - lo)
}

/// Symmetry-breaking start for negative temperatures.
fn perturbed_start(grid: &QuadratureGrid, mu0: &GridMeasure) -> GridMeasure {
    let n = grid.len() as f64;
    let w: Vec<f64> = mu0
        .masses()
        .iter()
        .zip(grid.nodes())
        .enumerate()
        .map(|(c, (m, x))| {
            let phase = x.angle().unwrap_or(TAU * (c as f64 + 0.5) / n);
            m * (0.1 * phase.cos()).exp()
        })
        .collect();
    GridMeasure::new(w).expect("positive base masses")
}

/// Damped mean-field iteration `μ ← (1−α)μ + α·Normalize(μ₀ e^{−β·potential(μ)})`.
pub fn minimize_fixed_point(problem: &FreeEnergyProblem) -> Result<SolverReport> {
    minimize_fixed_point_with(problem, 0.5)
}

pub fn minimize_fixed_point_with(problem: &FreeEnergyProblem, damping: f64) -> Result<SolverReport> {
    let beta = problem.beta;
    if !beta.is_finite() {
        return config("the fixed-point solver needs a finite beta");
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return config("damping must lie in (0, 1]");
    }
    let mu0 = problem.base();
    let mut mu = if beta < 0.0 {
        perturbed_start(problem.grid(), &mu0)
    } else {
        mu0.clone()
    };
    let mut alpha = damping;
    let mut value = objective(problem, &mu);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut halvings = 0;
    let mut failure = None;
    while iterations < MAX_FIXED_POINT_ITERS {
        iterations += 1;
        let pot = problem.potential(&mu);
        let Some(target) = gibbs_map(mu0.masses(), &pot, beta) else {
            failure = Some("Gibbs weights e^{-beta*potential} are not finite".to_string());
            break;
        };
        residual = sup_diff(&target, mu.masses());
        if residual < FIXED_POINT_TOL {
            break;
        }
        let target = GridMeasure::new(target).expect("normalized");
        let candidate = mu.mix(&target, alpha);
        let cand_value = objective(problem, &candidate);
        if beta > 0.0 && cand_value > value + 1e-14 * (1.0 + value.abs()) {
            alpha *= 0.5;
            halvings += 1;
            if alpha < 1e-12 {
                break;
            }
            continue;
        }
        mu = candidate;
        value = cand_value;
    }
    let converged = failure.is_none() && residual < FIXED_POINT_TOL;
    let mut report = SolverReport::finish(problem, mu, iterations, residual);
    // the base measure is always a feasible competitor
    if objective(problem, &mu0) < report.value {
        report = SolverReport::finish(problem, mu0, iterations, residual);
    }
    report.converged = converged;
    report.halvings = halvings;
    report.stationarity = Some(stationarity(problem, &report.minimizer));
    if failure.is_none() && beta < 0.0 && problem.spec.has_singular_kernel() {
        let peak = report.minimizer.masses().iter().cloned().fold(0.0, f64::max);
        if peak > 0.5 {
            failure = Some(format!(
                "iterates collapse onto one cell (mass {peak:.3}); beta is past the integrability threshold"
            ));
        }
    }
    if failure.is_some() {
        report.converged = false;
    }
    report.stability_failure = failure;
    Ok(report)
}

/// Smallest eigenvalue of the pair matrix restricted to `{v : Σ v = 0}`.
pub fn convexity_eigenvalue(spec: &HamiltonianSpec) -> Option<f64> {
    let n = spec.grid().len();
    let Some(mat) = spec.pair_matrix() else {
        return Some(0.0);
    };
    if n > MAX_EIGEN_CELLS || mat.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if n == 1 {
        return Some(0.0);
    }
    let m = DMatrix::from_row_slice(n, n, mat);
    let nf = n as f64;
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / nf);
    let bound = mat.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
    let restricted = &proj * m * &proj + DMatrix::from_element(n, n, bound / nf);
    let eig = restricted.symmetric_eigen().eigenvalues;
    Some(eig.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Frank-Wolfe on the simplex of grid measures for `β = ∞`.
pub fn minimize_zero_temperature(problem: &FreeEnergyProblem) -> Result<SolverReport> {
    if problem.beta != f64::INFINITY {
        return config("the zero-temperature solver needs beta = inf");
    }
    let spec = &problem.effective;
    let n = problem.grid().len();
    let mut mu = problem.base().masses().to_vec();
    let mut pot = spec.potential(&GridMeasure::new(mu.clone()).expect("base"));
    let incremental = spec.max_order() < 3 && pot.iter().all(|p| p.is_finite());
    let field = spec.field_values().to_vec();
    let mat = spec.pair_matrix();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_FRANK_WOLFE_ITERS {
        let mut v = 0;
        for c in 1..n {
            if pot[c] < pot[v] {
                v = c;
            }
        }
        gap = dot(&pot, &mu) - pot[v];
        if gap < DUALITY_GAP_TOL {
            break;
        }
        let gamma = 2.0 / (iterations as f64 + 2.0);
        for (c, m) in mu.iter_mut().enumerate() {
            *m *= 1.0 - gamma;
            if c == v {
                *m += gamma;
            }
        }
        iterations += 1;
        if incremental {
            for (c, p) in pot.iter_mut().enumerate() {
                let col = mat.map_or(0.0, |m| 2.0 * m[c * n + v]);
                *p = (1.0 - gamma) * *p + gamma * (field[c] + col);
            }
        } else {
            pot = spec.potential(&GridMeasure::new(mu.clone()).expect("simplex point"));
        }
    }
    let minimizer = GridMeasure::new(mu).expect("simplex point");
    let mut report = SolverReport::finish(problem, minimizer, iterations, gap);
    report.converged = gap < DUALITY_GAP_TOL;
    report.certificate = Some(gap);
    report.convexity = if spec.max_order() < 3 {
        convexity_eigenvalue(spec)
    } else {
        None
    };
    let scale = mat.map_or(1.0, |m| m.iter().map(|v| v.abs()).fold(1.0, f64::max));
    report.disclaimer = match report.convexity {
        Some(l) if l >= -1e-10 * scale => None,
        Some(l) => Some(format!(
            "pair matrix is not positive semidefinite on mass-zero directions (eigenvalue {l:.3e}); the result is a stationary point"
        )),
        None => Some("convexity not certified; the result is a stationary point".into()),
    };
    Ok(report)
}

/// Dispatches on β.
pub fn solve(problem: &FreeEnergyProblem) -> Result<SolverReport> {
    if problem.beta == f64::INFINITY {
        minimize_zero_temperature(problem)
    } else {
        minimize_fixed_point(problem)
    }
}

/// Independent problems for each β, solved concurrently; results keep input order.
pub fn scan_beta(
    spec: &HamiltonianSpec,
    betas: &[f64],
    tilt: Option<&TiltFunctional>,
) -> Result<Vec<(f64, SolverReport)>> {
    if betas.is_empty() {
        return config("empty beta list");
    }
    betas
        .par_iter()
        .map(|&b| {
            let p = FreeEnergyProblem::new(spec.clone(), b, tilt.cloned())?;
            Ok((b, solve(&p)?))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DualValue {
    /// `f(Φ) = −inf_μ (F_β(μ) − Φ(μ))`.
    pub value: f64,
    pub converged: bool,
    pub minimizer: GridMeasure,
}

/// Legendre-Fenchel transform of the free energy at the tilt `u`.
pub fn dual_value(problem: &FreeEnergyProblem, u: &TiltFunctional) -> Result<DualValue> {
    if !(problem.beta > 0.0 && problem.beta.is_finite()) {
        return config("dual_value needs beta in (0, inf)");
    }
    let combined = match problem.tilt() {
        Some(t) => TiltFunctional::new(t.u.iter().zip(&u.u).map(|(a, b)| a - b).collect())?,
        None => u.scaled(-1.0),
    };
    let shifted = FreeEnergyProblem::new(problem.spec.clone(), problem.beta, Some(combined))?;
    let r = minimize_fixed_point(&shifted)?;
    Ok(DualValue {
        value: -r.value,
        converged: r.converged,
        minimizer: r.minimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{Kernel, KernelForm};
    use crate::measure::wasserstein1;
    use crate::space::{build_grid, StateSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn spec_on(space: StateSpace, res: usize, terms: Vec<Kernel>) -> HamiltonianSpec {
        HamiltonianSpec::new(Arc::new(build_grid(&space, res).unwrap()), terms).unwrap()
    }

    fn cosine(res: usize) -> HamiltonianSpec {
        spec_on(StateSpace::circle(), res, vec![Kernel::pair(KernelForm::Cosine, 1.0)])
    }

    /// `I₁(x)/I₀(x)` by the trapezoid rule on the periodic integrand.
    fn bessel_ratio(x: f64) -> f64 {
        let n = 2000;
        let (mut i0, mut i1) = (0.0, 0.0);
        for k in 0..n {
            let t = TAU * k as f64 / n as f64;
            let w = (x * (t.cos() - 1.0)).exp();
            i0 += w;
            i1 += w * t.cos();
        }
        i1 / i0
    }

    /// Positive root of `m = I₁(2|β|m)/I₀(2|β|m)` for `|β| > 1`.
    fn kuramoto_root(beta: f64) -> f64 {
        let g = |m: f64| bessel_ratio(2.0 * beta.abs() * m) - m;
        let (mut lo, mut hi) = (1e-6, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn kuramoto_oracle_values() {
        assert!((kuramoto_root(-2.0) - 0.831_462).abs() < 1e-5);
        for m in [0.1, 0.5, 0.9] {
            assert!(bessel_ratio(2.0 * 0.5 * m) < m);
        }
    }

    #[test]
    fn objective_examples() {
        let zero = spec_on(StateSpace::circle(), 16, vec![]);
        let p = FreeEnergyProblem::new(zero.clone(), 1.0, None).unwrap();
        assert_eq!(objective(&p, &GridMeasure::base(zero.grid())), 0.0);
        let c = cosine(64);
        let p = FreeEnergyProblem::new(c.clone(), 1.0, None).unwrap();
        assert!(objective(&p, &GridMeasure::base(c.grid())).abs() < 1e-14);
        let k = spec_on(
            StateSpace::circle(),
            16,
            vec![Kernel::pair(KernelForm::Constant(2.5), 1.0)],
        );
        let p = FreeEnergyProblem::new(k.clone(), f64::INFINITY, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = GridMeasure::new((0..16).map(|_| rng.random::<f64>()).collect()).unwrap();
        assert!((objective(&p, &mu) - 2.5).abs() < 1e-12);
        assert!(FreeEnergyProblem::new(k, 0.0, None).is_err());
    }

    #[test]
    fn potential_examples_and_finite_differences() {
        let k = spec_on(
            StateSpace::circle(),
            16,
            vec![Kernel::pair(KernelForm::Constant(1.5), 1.0)],
        );
        let mu0 = GridMeasure::base(k.grid());
        assert!(potential(&k, &mu0).iter().all(|p| (p - 3.0).abs() < 1e-12));
        let c = cosine(64);
        assert!(potential(&c, &GridMeasure::base(c.grid()))
            .iter()
            .all(|p| p.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let table: Vec<f64> = (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pair: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = spec_on(
            StateSpace::finite_uniform(n).unwrap(),
            0,
            vec![
                Kernel::field(field, 1.0),
                Kernel::pair(KernelForm::Tabulated(pair), 0.7),
                Kernel::new(3, KernelForm::Tabulated(table), 0.3),
            ],
        );
        let t = 1e-4;
        for _ in 0..10 {
            let mu = GridMeasure::new((0..n).map(|_| rng.random::<f64>() + 0.1).collect()).unwrap();
            let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shift = |s: f64| {
                let w: Vec<f64> = mu.masses().iter().zip(&dir).map(|(m, d)| m + s * d).collect();
                energy_poly(&spec, &w)
            };
            let fd = (shift(t) - shift(-t)) / (2.0 * t);
            let exact = dot(&potential(&spec, &mu), &dir);
            assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }

    /// Energy polynomial at an arbitrary (not necessarily normalized) vector.
    fn energy_poly(spec: &HamiltonianSpec, w: &[f64]) -> f64 {
        let n = w.len();
        let mut e = dot(spec.field_values(), w);
        let mat = spec.pair_matrix().unwrap();
        for a in 0..n {
            e += w[a] * dot(&mat[a * n..(a + 1) * n], w);
        }
        for k in spec.terms().iter().filter(|k| k.order == 3) {
            if let KernelForm::Tabulated(t) = &k.form {
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            e += k.coefficient * t[(a * n + b) * n + c] * w[a] * w[b] * w[c];
                        }
                    }
                }
            }
        }
        e
    }

    #[test]
    fn zero_kernel_converges_in_one_iteration() {
        let spec = spec_on(StateSpace::interval(), 32, vec![]);
        let r = minimize_fixed_point(&FreeEnergyProblem::new(spec.clone(), 2.0, None).unwrap()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.minimizer, GridMeasure::base(spec.grid()));
    }

    #[test]
    fn kuramoto_below_and_above_the_bifurcation() {
        let spec = cosine(128);
        let below = minimize_fixed_point(&FreeEnergyProblem::new(spec.clone(), -0.5, None).unwrap()).unwrap();
        assert!(below.converged);
        assert!(below.order_parameter.unwrap() < 1e-3);
        let above = minimize_fixed_point(&FreeEnergyProblem::new(spec.clone(), -2.0, None).unwrap()).unwrap();
        assert!(above.converged, "residual {}", above.residual);
        let m = above.order_parameter.unwrap();
        assert!((m - kuramoto_root(-2.0)).abs() < 1e-3, "{m}");
        assert!(above.value < objective(&FreeEnergyProblem::new(spec, -2.0, None).unwrap(), &below.minimizer));
    }

    #[test]
    fn positive_beta_is_monotone_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 24;
        let field: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spec = spec_on(
            StateSpace::circle(),
            n,
            vec![Kernel::field(field, 1.0), Kernel::pair(KernelForm::Cosine, 1.0)],
        );
        let p = FreeEnergyProblem::new(spec.clone(), 1.5, None).unwrap();
        let r = minimize_fixed_point(&p).unwrap();
        assert!(r.converged);
        assert!(r.stationarity.unwrap() < 1e-6);
        assert!(r.value <= objective(&p, &GridMeasure::base(spec.grid())) + 1e-12);
        for _ in 0..20 {
            let mu = GridMeasure::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
            assert!(r.value <= objective(&p, &mu) + 1e-10);
        }
    }

    #[test]
    fn singular_kernel_on_atoms_is_a_stability_failure() {
        let spec = spec_on(
            StateSpace::finite_uniform(3).unwrap(),
            0,
            vec![Kernel::pair(KernelForm::LogDistance, 1.0)],
        );
        let r = minimize_fixed_point(&FreeEnergyProblem::new(spec, -1.0, None).unwrap()).unwrap();
        assert!(r.stability_failure.is_some());
        assert!(!r.converged);
    }

    #[test]
    fn zero_temperature_examples() {
        let k = spec_on(
            StateSpace::circle(),
            16,
            vec![Kernel::pair(KernelForm::Constant(0.7), 1.0)],
        );
        let r = minimize_zero_temperature(&FreeEnergyProblem::new(k, f64::INFINITY, None).unwrap()).unwrap();
        assert!(r.converged && (r.value - 0.7).abs() < 1e-12);

        let log = spec_on(
            StateSpace::circle(),
            256,
            vec![Kernel::pair(KernelForm::LogDistance, 1.0)],
        );
        let r = minimize_zero_temperature(&FreeEnergyProblem::new(log.clone(), f64::INFINITY, None).unwrap()).unwrap();
        assert!(r.converged);
        let w = wasserstein1(log.grid(), &r.minimizer, &GridMeasure::base(log.grid())).unwrap();
        assert!(w <= 0.02, "{w}");
        assert!(r.disclaimer.is_none(), "{:?}", r.convexity);
    }

    #[test]
    fn riesz_with_confinement_certifies_its_gap() {
        let space = StateSpace::interval();
        let grid = build_grid(&space, 32).unwrap();
        let v: Vec<f64> = grid.nodes().iter().map(|x| (x.coords()[0] - 0.5).powi(2)).collect();
        let spec = HamiltonianSpec::new(
            Arc::new(grid),
            vec![Kernel::pair(KernelForm::Riesz { s: 0.5 }, 1.0), Kernel::field(v, 1.0)],
        )
        .unwrap();
        let r = minimize_zero_temperature(&FreeEnergyProblem::new(spec, f64::INFINITY, None).unwrap()).unwrap();
        assert!(r.converged);
        assert!(r.certificate.unwrap() < 1e-6);
    }

    #[test]
    fn non_psd_kernel_gets_a_disclaimer() {
        let spec = spec_on(StateSpace::circle(), 16, vec![Kernel::pair(KernelForm::Cosine, -1.0)]);
        let r = minimize_zero_temperature(&FreeEnergyProblem::new(spec, f64::INFINITY, None).unwrap()).unwrap();
        assert!(r.disclaimer.is_some());
        assert!(r.convexity.unwrap() < 0.0);
    }

    #[test]
    fn dual_value_examples_and_fenchel_young() {
        let spec = cosine(64);
        let p = FreeEnergyProblem::new(spec.clone(), 1.0, None).unwrap();
        let inf = minimize_fixed_point(&p).unwrap();
        let zero = TiltFunctional::new(vec![0.0; 64]).unwrap();
        let f0 = dual_value(&p, &zero).unwrap();
        assert!((f0.value + inf.value).abs() < 1e-12);
        let c = TiltFunctional::new(vec![0.3; 64]).unwrap();
        let fc = dual_value(&p, &c).unwrap();
        assert!((fc.value - (f0.value + 0.3)).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes = spec.grid().nodes().to_vec();
        for _ in 0..5 {
            let (a, b, k) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1..4),
            );
            let u: Vec<f64> = nodes
                .iter()
                .map(|x| {
                    let t = x.angle().unwrap() * k as f64;
                    a * t.cos() + b * t.sin()
                })
                .collect();
            let phi = TiltFunctional::new(u).unwrap();
            let f = dual_value(&p, &phi).unwrap();
            assert!(f.converged);
            let lhs = phi.apply(&inf.minimizer) - f.value;
            assert!(lhs <= objective(&p, &inf.minimizer) - inf.value + 1e-4);
        }
    }

    #[test]
    fn scan_keeps_order_and_rejects_empty_lists() {
        let spec = cosine(64);
        let out = scan_beta(&spec, &[-2.0, -0.5, 1.0], None).unwrap();
        let m: Vec<f64> = out.iter().map(|(_, r)| r.order_parameter.unwrap()).collect();
        assert!(m[0] > 0.5 && m[1] < 1e-3 && m[2] < 1e-3);
        assert!(scan_beta(&spec, &[], None).is_err());
    }

    #[test]
    fn convexity_of_cosine_and_log_kernels() {
        assert!(convexity_eigenvalue(&cosine(32)).unwrap() > -1e-12);
        let log = spec_on(
            StateSpace::circle(),
            64,
            vec![Kernel::pair(KernelForm::LogDistance, 1.0)],
        );
        assert!(convexity_eigenvalue(&log).unwrap() > 0.0);
    }
}
