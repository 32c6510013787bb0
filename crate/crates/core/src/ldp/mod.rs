//! Partition functions, exact finite-space laws, the Gibbs identity, LDP
//! rates of half-space events and Gamma-convergence recovery probes.

pub mod stability;

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, domain, Error, Result};
use crate::interaction::{
    hamiltonian, macroscopic_energy, product_mean_energy, Configuration, HamiltonianSpec, KernelForm,
};
use crate::macro_solver::{minimize_fixed_point, minimize_zero_temperature, FreeEnergyProblem};
use crate::measure::{relative_entropy, GridMeasure};
use crate::sampler::{self, RunConfig, TemperatureSchedule};
use crate::seed;
use crate::space::SpaceKind;

pub use stability::{
    amgm_bound, default_resolutions, integrability_check, lp_marginal_check, lp_norm, LpReport, MarginalSample,
    RefinementReport, Verdict,
};

/// Largest number of types or tuples enumerated exactly.
pub const ENUMERATION_LIMIT: f64 = 1e7;
pub const LDP_TOLERANCE: f64 = 0.15;

/// Occupation counts over the atoms of a finite set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TypeVector {
    pub counts: Vec<u32>,
}

impl TypeVector {
    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All type vectors with `k` entries summing to `n`, in lexicographic order.
pub fn enumerate_types(k: usize, n: usize) -> Result<Vec<TypeVector>> {
    if k == 0 {
        return config("finite set needs at least one atom");
    }
    let count = binomial((n + k - 1) as u64, (k - 1) as u64);
    if count > ENUMERATION_LIMIT {
        return Err(Error::Size(format!(
            "{count:.3e} type vectors exceed the limit {ENUMERATION_LIMIT:.0e}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0u32; k];
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<TypeVector>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(TypeVector { counts: cur.clone() });
            return;
        }
        for c in (0..=left).rev() {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, out);
        }
    }
    rec(0, n as u32, &mut cur, &mut out);
    Ok(out)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Exact law of the type vector under `μ_β^(N)` on a finite set.
#[derive(Clone, Debug)]
pub struct ExactLaw {
    pub types: Vec<TypeVector>,
    pub log_probs: Vec<f64>,
    /// `log Q(n)` under `μ₀^{⊗N}` (the multinomial law).
    pub log_base: Vec<f64>,
    pub energies: Vec<f64>,
    /// `log Z_{N,β}`.
    pub log_z: f64,
}

impl ExactLaw {
    pub fn prob(&self, i: usize) -> f64 {
        self.log_probs[i].exp()
    }

    /// `E[H]` under the law.
    pub fn mean_energy(&self) -> f64 {
        self.energies
            .iter()
            .zip(&self.log_probs)
            .filter(|(_, lp)| **lp > f64::NEG_INFINITY)
            .map(|(h, lp)| h * lp.exp())
            .sum()
    }
}

fn require_finite_set(spec: &HamiltonianSpec) -> Result<usize> {
    match spec.space().kind() {
        SpaceKind::FiniteSet { points, .. } => Ok(*points),
        _ => config("exact enumeration needs a finite state space"),
    }
}

pub fn exact_law_finite(spec: &HamiltonianSpec, n: usize, beta: f64) -> Result<ExactLaw> {
    let k = require_finite_set(spec)?;
    if n == 0 || !beta.is_finite() {
        return config("exact law needs N >= 1 and a finite beta");
    }
    let types = enumerate_types(k, n)?;
    let lnw: Vec<f64> = spec.grid().weights().iter().map(|w| w.ln()).collect();
    let lnn = ln_factorial(n as u32);
    let rows: Vec<(f64, f64)> = types
        .par_iter()
        .map(|t| {
            let mut lq = lnn;
            for (c, lw) in t.counts.iter().zip(&lnw) {
                if *c > 0 {
                    lq += *c as f64 * lw - ln_factorial(*c);
                }
            }
            (lq, spec.type_energy(&t.counts))
        })
        .collect();
    let mut log_w = Vec::with_capacity(rows.len());
    for &(lq, h) in &rows {
        let v = if lq == f64::NEG_INFINITY || beta == 0.0 {
            lq
        } else if h == f64::INFINITY {
            if beta < 0.0 {
                return Err(Error::Stability(format!(
                    "a type of positive base probability has H = +inf at beta = {beta}: Z is infinite"
                )));
            }
            f64::NEG_INFINITY
        } else {
            lq - beta * h
        };
        log_w.push(v);
    }
    let log_z = log_sum_exp(&log_w);
    Ok(ExactLaw {
        types,
        log_probs: log_w.iter().map(|v| v - log_z).collect(),
        log_base: rows.iter().map(|r| r.0).collect(),
        energies: rows.iter().map(|r| r.1).collect(),
        log_z,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThermoBudget {
    pub rungs: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for ThermoBudget {
    fn default() -> Self {
        Self {
            rungs: 16,
            sweeps: 20_000,
            burn_in: 2_000,
            chains: 2,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    ExactEnum,
    TensorQuadrature,
    ThermoIntegration(ThermoBudget),
}

#[derive(Clone, Debug, Serialize)]
pub struct Rung {
    pub beta: f64,
    pub mean_energy: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionEstimate {
    /// `(1/N) log Z_{N,β}`.
    pub value: f64,
    pub stderr: f64,
    pub method: PartitionMethod,
    pub rungs: Vec<Rung>,
}

/// Joint law on `grid^N` for `N ≤ 3`: `(log weights, log base, energies)`.
fn tensor_law(spec: &HamiltonianSpec, n: usize, beta: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 3 {
        return config("tensor quadrature needs 1 <= N <= 3");
    }
    let cells = spec.grid().len();
    if (cells as f64).powi(n as i32) > ENUMERATION_LIMIT {
        return Err(Error::Size(format!("{cells}^{n} tuples exceed the enumeration limit")));
    }
    let lnw: Vec<f64> = spec.grid().weights().iter().map(|w| w.ln()).collect();
    let total = cells.pow(n as u32);
    let rows: Vec<(f64, f64)> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut tuple = [0usize; 3];
            for slot in (0..n).rev() {
                tuple[slot] = idx % cells;
                idx /= cells;
            }
            let tuple = &tuple[..n];
            let lq: f64 = tuple.iter().map(|&c| lnw[c]).sum();
            (lq, spec.tuple_energy(tuple))
        })
        .collect();
    let mut log_w = Vec::with_capacity(total);
    for &(lq, h) in &rows {
        let v = if beta == 0.0 {
            lq
        } else if h == f64::INFINITY {
            if beta < 0.0 {
                return Err(Error::Stability("H = +inf on a charged tuple at negative beta".into()));
            }
            f64::NEG_INFINITY
        } else {
            lq - beta * h
        };
        log_w.push(v);
    }
    Ok((
        log_w,
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    ))
}

/// `(1/N) log Z_{N,β}` by the requested method.
pub fn log_partition(
    spec: &HamiltonianSpec,
    n: usize,
    beta: f64,
    method: PartitionMethod,
) -> Result<PartitionEstimate> {
    if !beta.is_finite() {
        return config("log_partition needs a finite beta");
    }
    let nf = n as f64;
    let exact = |value: f64| PartitionEstimate {
        value,
        stderr: 0.0,
        method,
        rungs: Vec::new(),
    };
    if beta == 0.0 {
        if n == 0 {
            return config("N must be at least 1");
        }
        return Ok(exact(0.0));
    }
    match method {
        PartitionMethod::ExactEnum => Ok(exact(exact_law_finite(spec, n, beta)?.log_z / nf)),
        PartitionMethod::TensorQuadrature => {
            let (log_w, _, _) = tensor_law(spec, n, beta)?;
            Ok(exact(log_sum_exp(&log_w) / nf))
        }
        PartitionMethod::ThermoIntegration(budget) => thermo_integration(spec, n, beta, budget),
    }
}

/// `(1/N) log Z_β = −∫₀^β ⟨H/N⟩_{β'} dβ'` by the trapezoid rule over a uniform ladder.
fn thermo_integration(spec: &HamiltonianSpec, n: usize, beta: f64, budget: ThermoBudget) -> Result<PartitionEstimate> {
    if budget.rungs < 16 {
        return config("thermodynamic integration needs at least 16 rungs");
    }
    // integrability at β covers every rung between 0 and β
    stability::precheck(spec, beta)?;
    let m = budget.rungs;
    let betas: Vec<f64> = (0..m).map(|k| beta * k as f64 / (m - 1) as f64).collect();
    let rungs: Vec<Rung> = betas
        .par_iter()
        .enumerate()
        .map(|(k, &b)| {
            let cfg = RunConfig {
                n,
                schedule: TemperatureSchedule::Fixed(b),
                sweeps: budget.sweeps,
                burn_in: budget.burn_in,
                thinning: 1,
                chains: budget.chains,
                seed: seed::derive(budget.seed, seed::RUNG, k as u64),
                keep_samples: false,
            };
            let out = sampler::run_unchecked(spec, &cfg, 1)?;
            Ok(Rung {
                beta: b,
                mean_energy: out.mean_energy,
                stderr: out.stderr,
            })
        })
        .collect::<Result<_>>()?;
    let h = beta / (m - 1) as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    for (k, r) in rungs.iter().enumerate() {
        let w = if k == 0 || k == m - 1 { 0.5 * h } else { h };
        value -= w * r.mean_energy;
        var += (w * r.stderr).powi(2);
    }
    Ok(PartitionEstimate {
        value,
        stderr: var.sqrt(),
        method: PartitionMethod::ThermoIntegration(budget),
        rungs,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsIdentityReport {
    pub n: usize,
    pub beta: f64,
    /// `E^(N)(μ_β^(N))`.
    pub mean_energy: f64,
    /// `D^(N)(μ_β^(N))`.
    pub mean_entropy: f64,
    /// `F^(N) = E^(N) + D^(N)/β`.
    pub free_energy: f64,
    /// `(1/N) log Z_{N,β}`.
    pub log_partition: f64,
    /// `|F^(N) + (1/(Nβ)) log Z|`.
    pub residual: f64,
    pub method: PartitionMethod,
}

/// Evaluates both sides of `F^(N)(μ_β^(N)) = −(1/(Nβ)) log Z_{N,β}` exactly.
pub fn gibbs_identity_check(spec: &HamiltonianSpec, n: usize, beta: f64) -> Result<GibbsIdentityReport> {
    if beta == 0.0 || !beta.is_finite() {
        return config("the Gibbs identity needs a finite nonzero beta");
    }
    let (log_w, log_q, energies, method) = if spec.space().is_finite() {
        let law = exact_law_finite(spec, n, beta)?;
        let lw: Vec<f64> = law.log_probs.iter().map(|p| p + law.log_z).collect();
        (lw, law.log_base, law.energies, PartitionMethod::ExactEnum)
    } else {
        let (lw, lq, e) = tensor_law(spec, n, beta)?;
        (lw, lq, e, PartitionMethod::TensorQuadrature)
    };
    let log_z = log_sum_exp(&log_w);
    let nf = n as f64;
    let (mut e, mut d) = (0.0, 0.0);
    for ((lw, lq), h) in log_w.iter().zip(&log_q).zip(&energies) {
        if *lw == f64::NEG_INFINITY {
            continue;
        }
        let lp = lw - log_z;
        let p = lp.exp();
        e += p * h;
        d += p * (lp - lq);
    }
    let (e, d) = (e / nf, d / nf);
    let free_energy = e + d / beta;
    let log_partition = log_z / nf;
    Ok(GibbsIdentityReport {
        n,
        beta,
        mean_energy: e,
        mean_entropy: d,
        free_energy,
        log_partition,
        residual: (free_energy + log_partition / beta).abs(),
        method,
    })
}

/// Closed half-space constraints `Σ_a c_a μ_a ≥ rhs` on cell masses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HalfSpaceEvent {
    pub constraints: Vec<(Vec<f64>, f64)>,
}

impl HalfSpaceEvent {
    pub fn whole() -> Self {
        Self {
            constraints: Vec::new(),
        }
    }

    /// `μ(cell) ≥ level` on `k` cells.
    pub fn mass_at_least(k: usize, cell: usize, level: f64) -> Self {
        let mut c = vec![0.0; k];
        c[cell] = 1.0;
        Self {
            constraints: vec![(c, level)],
        }
    }

    pub fn contains(&self, freq: &[f64]) -> bool {
        self.constraints
            .iter()
            .all(|(c, rhs)| c.iter().zip(freq).map(|(a, b)| a * b).sum::<f64>() >= rhs - 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    /// `N`: entropy only (`β = 0`) or negative temperature.
    N,
    /// `β_N · N`.
    BetaN,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub beta_n: f64,
    pub log_probability: f64,
    pub rate: f64,
    pub residual: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpReport {
    pub speed: Speed,
    pub rows: Vec<RateRow>,
    /// `inf_A I` with `I` normalized to vanish at its minimum.
    pub target: f64,
    /// Unconstrained infimum of the unnormalized functional, by scan.
    pub scan_infimum: f64,
    /// Same infimum from the macroscopic solver.
    pub solver_infimum: Option<f64>,
    pub monotone: bool,
    pub pass: bool,
}

/// Simplex points for `k ≤ 3`, including the points where constraints bind.
fn simplex_scan(k: usize, event: &HalfSpaceEvent) -> Result<Vec<Vec<f64>>> {
    let mut pts = Vec::new();
    match k {
        1 => pts.push(vec![1.0]),
        2 => {
            let steps = 100_000;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                pts.push(vec![t, 1.0 - t]);
            }
            for (c, rhs) in &event.constraints {
                let denom = c[0] - c[1];
                if denom != 0.0 {
                    let t = (rhs - c[1]) / denom;
                    if (0.0..=1.0).contains(&t) {
                        pts.push(vec![t, 1.0 - t]);
                    }
                }
            }
        }
        3 => {
            let steps = 600;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
                    pts.push(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
        _ => return config("rate scans support at most 3 atoms"),
    }
    Ok(pts)
}

/// Exact `−(1/speed) log Γ_N(A)` against `inf_A I` for a finite set.
pub fn ball_rate(
    spec: &HamiltonianSpec,
    schedule: TemperatureSchedule,
    event: &HalfSpaceEvent,
    ns: &[usize],
) -> Result<LdpReport> {
    let k = require_finite_set(spec)?;
    schedule.validate()?;
    if ns.is_empty() {
        return config("empty N list");
    }
    if event.constraints.iter().any(|(c, _)| c.len() != k) {
        return config(format!("event constraints need {k} coefficients"));
    }
    let limit = schedule.limit();
    let speed = if limit > 0.0 { Speed::BetaN } else { Speed::N };
    let mu0 = GridMeasure::base(spec.grid());
    // rate functional before normalization
    let raw = |m: &[f64]| -> f64 {
        let mu = GridMeasure::new(m.to_vec()).expect("simplex point");
        let e = macroscopic_energy(spec, &mu);
        let d = relative_entropy(&mu, &mu0);
        if limit == f64::INFINITY {
            e
        } else if limit > 0.0 {
            e + d / limit
        } else if limit == 0.0 {
            d
        } else {
            limit * e + d
        }
    };
    let pts = simplex_scan(k, event)?;
    let values: Vec<f64> = pts.par_iter().map(|p| raw(p)).collect();
    let scan_infimum = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let constrained = pts
        .iter()
        .zip(&values)
        .filter(|(p, _)| event.contains(p))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if constrained == f64::INFINITY {
        return domain("the event contains no point of the simplex");
    }
    let target = constrained - scan_infimum;
    let solver_infimum = if limit == 0.0 {
        Some(0.0)
    } else {
        let p = FreeEnergyProblem::new(spec.clone(), limit, None)?;
        let r = if limit == f64::INFINITY {
            minimize_zero_temperature(&p)?
        } else {
            minimize_fixed_point(&p)?
        };
        r.converged.then_some(r.value)
    };
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let beta_n = schedule.beta_n(n);
        let law = exact_law_finite(spec, n, beta_n)?;
        let inside: Vec<f64> = law
            .types
            .iter()
            .zip(&law.log_probs)
            .filter(|(t, _)| event.contains(&t.frequencies()))
            .map(|(_, lp)| *lp)
            .collect();
        let log_probability = log_sum_exp(&inside).min(0.0);
        let s = match speed {
            Speed::BetaN => beta_n * n as f64,
            Speed::N => n as f64,
        };
        let rate = -log_probability / s;
        let residual = rate - target;
        rows.push(RateRow {
            n,
            beta_n,
            log_probability,
            rate,
            residual,
            relative_error: if target > 0.0 {
                residual.abs() / target
            } else {
                residual.abs()
            },
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].rate <= w[0].rate + 1e-12);
    let last = rows.last().expect("nonempty");
    let pass = last.residual.abs() <= LDP_TOLERANCE * target || last.residual.abs() <= 1e-9;
    Ok(LdpReport {
        speed,
        rows,
        target,
        scan_infimum,
        solver_infimum,
        monotone,
        pass,
    })
}

/// `N,empirical_rate,target,residual` rows.
pub fn write_rate_csv<W: Write>(out: W, report: &LdpReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "empirical_rate", "target", "residual"])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            r.rate.to_string(),
            report.target.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryRow {
    pub n: usize,
    /// Mean of `H^(N)/N` over the draws.
    pub mean: f64,
    pub stderr: f64,
    pub spread: f64,
    /// Median of `|H^(N)/N − E(μ)|`.
    pub median_gap: f64,
    /// Fraction of draws with `H^(N)/N ≥ E(μ) − ε`.
    pub lower_bound_frequency: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryReport {
    pub energy: f64,
    pub recoverable: bool,
    pub reason: Option<String>,
    pub epsilon: f64,
    pub rows: Vec<RecoveryRow>,
}

pub const RECOVERY_EPSILON: f64 = 0.05;

/// Draws configurations i.i.d. from `μ` (cell by mass, then uniform within
/// the cell) and compares `H^(N)/N` with `E(μ)`.
pub fn gamma_recovery(
    spec: &HamiltonianSpec,
    mu: &GridMeasure,
    ns: &[usize],
    draws: usize,
    root_seed: u64,
) -> Result<RecoveryReport> {
    if draws < 2 || ns.is_empty() {
        return config("gamma_recovery needs at least 2 draws and one N");
    }
    let energy = macroscopic_energy(spec, mu);
    let dim = spec.space().dimension() as f64;
    let mut reason = None;
    if !energy.is_finite() {
        reason = Some("E(mu) is infinite".to_string());
    }
    for k in spec.terms() {
        if let (KernelForm::Riesz { s }, true) = (&k.form, k.is_singular()) {
            if dim > 0.0 && *s >= dim {
                reason = Some(format!("Riesz exponent {s} >= dimension: E(mu) = +inf"));
            } else if dim > 0.0 && 2.0 * s >= dim {
                reason = Some(format!("Riesz exponent {s}: the kernel has no finite second moment"));
            }
        }
    }
    if reason.is_some() {
        return Ok(RecoveryReport {
            energy,
            recoverable: false,
            reason,
            epsilon: RECOVERY_EPSILON,
            rows: Vec::new(),
        });
    }
    let grid = spec.grid();
    let cells = WeightedIndex::new(mu.masses()).map_err(|e| Error::Config(format!("measure: {e}")))?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let values: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = seed::stream(root_seed, seed::DRAW, ((n as u64) << 32) + d as u64);
                let pts = (0..n)
                    .map(|_| grid.sample_in_cell(cells.sample(&mut rng), &mut rng))
                    .collect();
                let config = Configuration::new(spec.space(), pts).expect("cell points lie in the space");
                hamiltonian(spec, &config) / n as f64
            })
            .collect();
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let mut gaps: Vec<f64> = values.iter().map(|v| (v - energy).abs()).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_gap = if gaps.len() % 2 == 1 {
            gaps[gaps.len() / 2]
        } else {
            0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
        };
        let lower = values.iter().filter(|v| **v >= energy - RECOVERY_EPSILON).count() as f64 / m;
        rows.push(RecoveryRow {
            n,
            mean,
            stderr: (var / m).sqrt(),
            spread: var.sqrt(),
            median_gap,
            lower_bound_frequency: lower,
        });
    }
    Ok(RecoveryReport {
        energy,
        recoverable: true,
        reason: None,
        epsilon: RECOVERY_EPSILON,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductEnergyRow {
    pub measure: usize,
    pub n: usize,
    pub energy: f64,
    /// Closed form `E^(N)(μ^{⊗N})`.
    pub mean_energy: f64,
    /// `(1/N) E[H^(N)]` by exact enumeration, when feasible.
    pub oracle: Option<f64>,
    pub residual: Option<f64>,
    /// `|E^(N)(μ^{⊗N}) − E(μ)|`.
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductEnergyReport {
    pub rows: Vec<ProductEnergyRow>,
    /// Log-log slope of the gap against `N`, per measure (`None` when `E(μ) = 0`).
    pub slopes: Vec<Option<f64>>,
    pub max_residual: f64,
    pub pass: bool,
}

/// `(1/N) E[H^(N)]` under `μ^{⊗N}`, summing over type vectors or tuples.
fn enumerated_mean_energy(spec: &HamiltonianSpec, mu: &GridMeasure, n: usize) -> Result<Option<f64>> {
    let nf = n as f64;
    if spec.space().is_finite() {
        let types = match enumerate_types(mu.len(), n) {
            Ok(t) => t,
            Err(Error::Size(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let lnm: Vec<f64> = mu.masses().iter().map(|m| m.ln()).collect();
        let lnn = ln_factorial(n as u32);
        let total: f64 = types
            .par_iter()
            .map(|t| {
                let mut lp = lnn;
                for (c, l) in t.counts.iter().zip(&lnm) {
                    if *c > 0 {
                        lp += *c as f64 * l - ln_factorial(*c);
                    }
                }
                if lp == f64::NEG_INFINITY {
                    0.0
                } else {
                    lp.exp() * spec.type_energy(&t.counts)
                }
            })
            .sum();
        return Ok(Some(total / nf));
    }
    let cells = mu.len();
    if n > 3 || (cells as f64).powi(n as i32) > ENUMERATION_LIMIT {
        return Ok(None);
    }
    let m = mu.masses();
    let total: f64 = (0..cells.pow(n as u32))
        .into_par_iter()
        .map(|mut idx| {
            let mut tuple = [0usize; 3];
            let mut p = 1.0;
            for slot in (0..n).rev() {
                tuple[slot] = idx % cells;
                p *= m[idx % cells];
                idx /= cells;
            }
            if p == 0.0 {
                0.0
            } else {
                p * spec.tuple_energy(&tuple[..n])
            }
        })
        .sum();
    Ok(Some(total / nf))
}

/// Random grid measures with masses bounded away from zero.
pub fn random_measures(cells: usize, count: usize, root_seed: u64) -> Vec<GridMeasure> {
    use rand::Rng;
    (0..count)
        .map(|i| {
            let mut rng = seed::stream(root_seed, seed::PROBE, i as u64);
            GridMeasure::new((0..cells).map(|_| 0.05 + rng.random::<f64>()).collect()).expect("positive masses")
        })
        .collect()
}

/// Closed form `E^(N)(μ^{⊗N}) = (1 − 1/N) E(μ)` for pair kernels and the `1/N` decay of the gap.
pub fn product_energy_rate(
    spec: &HamiltonianSpec,
    measures: &[GridMeasure],
    ns: &[usize],
) -> Result<ProductEnergyReport> {
    if spec.max_order() > 2 || measures.is_empty() || ns.len() < 2 {
        return config("product_energy_rate needs pair kernels, one measure and two values of N");
    }
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut max_residual: f64 = 0.0;
    for (i, mu) in measures.iter().enumerate() {
        if mu.len() != spec.grid().len() {
            return config("measure length differs from the grid");
        }
        let energy = macroscopic_energy(spec, mu);
        let field = spec.field_values();
        let field_part = mu.integrate(field);
        let mut points = Vec::new();
        for &n in ns {
            let mean_energy = product_mean_energy(spec, mu, n)?;
            let oracle = enumerated_mean_energy(spec, mu, n)?;
            let nf = n as f64;
            let residual = oracle.map(|o| (o - (field_part + (1.0 - 1.0 / nf) * (energy - field_part))).abs());
            if let Some(r) = residual {
                max_residual = max_residual.max(r);
            }
            let gap = (oracle.unwrap_or(mean_energy) - energy).abs();
            if gap > 0.0 {
                points.push((nf.ln(), gap.ln()));
            }
            rows.push(ProductEnergyRow {
                measure: i,
                n,
                energy,
                mean_energy,
                oracle,
                residual,
                gap,
            });
        }
        slopes.push((points.len() == ns.len()).then(|| least_squares_slope(&points)));
    }
    let any_slope = slopes.iter().any(|s| s.is_some());
    let pass = max_residual < 1e-12 && any_slope && slopes.iter().flatten().all(|s| (s + 1.0).abs() <= 0.2);
    Ok(ProductEnergyReport {
        rows,
        slopes,
        max_residual,
        pass,
    })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::Kernel;
    use crate::space::{build_grid, Point, StateSpace};
    use std::sync::Arc;

    fn finite(k: usize, terms: Vec<Kernel>) -> HamiltonianSpec {
        HamiltonianSpec::new(
            Arc::new(build_grid(&StateSpace::finite_uniform(k).unwrap(), 0).unwrap()),
            terms,
        )
        .unwrap()
    }

    fn circle(res: usize, terms: Vec<Kernel>) -> HamiltonianSpec {
        HamiltonianSpec::new(Arc::new(build_grid(&StateSpace::circle(), res).unwrap()), terms).unwrap()
    }

    #[test]
    fn type_enumeration() {
        let t = enumerate_types(3, 4).unwrap();
        assert_eq!(t.len(), 15);
        assert!(t.iter().all(|v| v.n() == 4));
        assert!(matches!(enumerate_types(10, 200), Err(Error::Size(_))));
    }

    #[test]
    fn infinite_temperature_law_is_multinomial() {
        let spec = HamiltonianSpec::new(
            Arc::new(build_grid(&StateSpace::finite(vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap()),
            vec![Kernel::pair(KernelForm::Constant(1.0), 1.0)],
        )
        .unwrap();
        let law = exact_law_finite(&spec, 5, 0.0).unwrap();
        let p: [f64; 3] = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        let mut total = 0.0;
        for (i, t) in law.types.iter().enumerate() {
            let c = &t.counts;
            let fact = |n: u32| (1..=n).product::<u32>() as f64;
            let m = fact(5) / (fact(c[0]) * fact(c[1]) * fact(c[2]))
                * p[0].powi(c[0] as i32)
                * p[1].powi(c[1] as i32)
                * p[2].powi(c[2] as i32);
            assert!((law.prob(i) - m).abs() < 1e-14);
            total += law.prob(i);
        }
        assert!((total - 1.0).abs() < 1e-12);
        let single = exact_law_finite(&finite(1, vec![]), 7, 2.0).unwrap();
        assert_eq!(single.types.len(), 1);
        assert!((single.prob(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_law_matches_brute_force_configurations() {
        let spec = finite(
            2,
            vec![Kernel::pair(KernelForm::Tabulated(vec![0.0, 1.0, 1.0, 0.0]), 1.0)],
        );
        let law = exact_law_finite(&spec, 3, 1.0).unwrap();
        let space = spec.space();
        let mut by_type = [0.0; 4];
        let mut z = 0.0;
        for code in 0..8usize {
            let pts: Vec<Point> = (0..3).map(|i| Point::Atom((code >> i) & 1)).collect();
            let ones = pts.iter().filter(|p| **p == Point::Atom(1)).count();
            let w = (-hamiltonian(&spec, &Configuration::new(space, pts).unwrap())).exp() / 8.0;
            by_type[ones] += w;
            z += w;
        }
        for (i, t) in law.types.iter().enumerate() {
            assert!((law.prob(i) - by_type[t.counts[1] as usize] / z).abs() < 1e-14);
        }
        assert!((law.log_z - z.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_partition_at_zero_is_exactly_zero() {
        let spec = finite(3, vec![Kernel::pair(KernelForm::Constant(2.0), 1.0)]);
        for m in [
            PartitionMethod::ExactEnum,
            PartitionMethod::TensorQuadrature,
            PartitionMethod::ThermoIntegration(ThermoBudget::default()),
        ] {
            assert_eq!(log_partition(&spec, 3, 0.0, m).unwrap().value, 0.0);
        }
    }

    #[test]
    fn tensor_quadrature_matches_direct_double_sum() {
        let spec = circle(128, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let est = log_partition(&spec, 2, 1.0, PartitionMethod::TensorQuadrature).unwrap();
        let nodes = spec.grid().nodes();
        let w = spec.grid().weights();
        let mut z = 0.0;
        for a in 0..128 {
            for b in 0..128 {
                z += w[a] * w[b] * (-(nodes[a].angle().unwrap() - nodes[b].angle().unwrap()).cos()).exp();
            }
        }
        assert!((est.value - z.ln() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn gibbs_identity_examples() {
        let zero = circle(16, vec![]);
        let r = gibbs_identity_check(&zero, 2, 1.0).unwrap();
        assert!(r.free_energy.abs() < 1e-15 && r.log_partition.abs() < 1e-15);
        let cos = circle(128, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        assert!(gibbs_identity_check(&cos, 2, 1.0).unwrap().residual < 1e-8);
        let bounded = finite(
            2,
            vec![Kernel::pair(KernelForm::Tabulated(vec![1.0, 0.0, 0.0, 1.0]), 1.0)],
        );
        let r = gibbs_identity_check(&bounded, 10, -0.3).unwrap();
        assert!(r.residual < 1e-10, "{}", r.residual);
        let three = circle(12, vec![Kernel::pair(KernelForm::Gaussian { bandwidth: 0.5 }, 1.0)]);
        assert!(gibbs_identity_check(&three, 3, 2.0).unwrap().residual < 1e-10);
    }

    #[test]
    fn sanov_and_bounded_rates() {
        let sanov = finite(2, vec![]);
        let event = HalfSpaceEvent::mass_at_least(2, 0, 0.7);
        let r = ball_rate(&sanov, TemperatureSchedule::Fixed(0.0), &event, &[25, 50, 100, 200]).unwrap();
        let exact = 0.7 * (0.7f64 / 0.5).ln() + 0.3 * (0.3f64 / 0.5).ln();
        assert!((r.target - exact).abs() < 1e-12);
        assert!((r.target - 0.0823).abs() < 1e-4);
        assert!(r.pass && r.speed == Speed::N);

        let whole = ball_rate(
            &sanov,
            TemperatureSchedule::Fixed(0.0),
            &HalfSpaceEvent::whole(),
            &[10, 40],
        )
        .unwrap();
        assert!(whole.rows.iter().all(|row| row.rate.abs() < 1e-12));

        let bounded = finite(
            2,
            vec![Kernel::pair(KernelForm::Tabulated(vec![1.0, 0.0, 0.0, 1.0]), 1.0)],
        );
        let r = ball_rate(&bounded, TemperatureSchedule::Fixed(1.0), &event, &[25, 50, 100, 200]).unwrap();
        assert!(r.pass && r.monotone && r.speed == Speed::BetaN, "{:?}", r.rows);
        assert!((r.solver_infimum.unwrap() - r.scan_infimum).abs() < 1e-8);

        let empty = HalfSpaceEvent {
            constraints: vec![(vec![1.0, 1.0], 2.0)],
        };
        assert!(matches!(
            ball_rate(&sanov, TemperatureSchedule::Fixed(0.0), &empty, &[10]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn thermodynamic_integration_matches_enumeration() {
        let w: Vec<f64> = vec![0.0, 1.0, -0.5, 1.0, 0.3, 0.2, -0.5, 0.2, 0.8];
        let spec = finite(3, vec![Kernel::pair(KernelForm::Tabulated(w), 1.0)]);
        let (n, beta) = (20, 1.0);
        let exact = log_partition(&spec, n, beta, PartitionMethod::ExactEnum).unwrap();
        let budget = ThermoBudget {
            rungs: 16,
            sweeps: 20_000,
            burn_in: 1_000,
            chains: 2,
            seed: 3,
        };
        let ti = log_partition(&spec, n, beta, PartitionMethod::ThermoIntegration(budget)).unwrap();
        // trapezoid bias is included in the comparison
        assert!(
            (ti.value - exact.value).abs() <= 2.0 * ti.stderr + 2e-3,
            "{} ± {} vs {}",
            ti.value,
            ti.stderr,
            exact.value
        );
        // interior rungs: d/dβ (1/N) log Z = −⟨H/N⟩
        for r in &ti.rungs[1..15] {
            let law = exact_law_finite(&spec, n, r.beta).unwrap();
            let exact_mean = law.mean_energy() / n as f64;
            assert!(
                (r.mean_energy - exact_mean).abs() <= 3.0 * r.stderr + 1e-9,
                "{} vs {exact_mean}",
                r.mean_energy
            );
        }
    }

    #[test]
    fn recovery_for_constant_and_cosine_kernels() {
        let spec = circle(32, vec![Kernel::pair(KernelForm::Constant(1.5), 1.0)]);
        let mu = GridMeasure::base(spec.grid());
        let r = gamma_recovery(&spec, &mu, &[4, 16], 5, 1).unwrap();
        for row in &r.rows {
            let exact = product_mean_energy(&spec, &mu, row.n).unwrap();
            assert!((row.mean - exact).abs() < 1e-12);
            assert!(row.spread < 1e-12);
        }
        let vm: Vec<f64> = spec
            .grid()
            .nodes()
            .iter()
            .map(|x| (x.angle().unwrap().cos()).exp())
            .collect();
        let mu = GridMeasure::new(vm).unwrap();
        let cos = circle(32, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let r = gamma_recovery(&cos, &mu, &[512], 100, 2).unwrap();
        let row = &r.rows[0];
        assert!((row.mean - r.energy).abs() <= 3.0 * row.stderr + 2e-3);
        assert!(row.lower_bound_frequency > 0.9);
    }

    #[test]
    fn infinite_energy_is_not_recoverable() {
        let spec = finite(3, vec![Kernel::pair(KernelForm::LogDistance, 1.0)]);
        let r = gamma_recovery(&spec, &GridMeasure::base(spec.grid()), &[8], 10, 1).unwrap();
        assert!(!r.recoverable);
        let riesz = circle(32, vec![Kernel::pair(KernelForm::Riesz { s: 0.7 }, 1.0)]);
        assert!(
            !gamma_recovery(&riesz, &GridMeasure::base(riesz.grid()), &[8], 10, 1)
                .unwrap()
                .recoverable
        );
    }

    #[test]
    fn h1_closed_form_against_enumeration() {
        let w = vec![
            0.3, -1.0, 0.5, 2.0, -1.0, 0.1, 0.7, 0.0, 0.5, 0.7, -0.4, 1.2, 2.0, 0.0, 1.2, 0.9,
        ];
        let spec = finite(
            4,
            vec![
                Kernel::pair(KernelForm::Tabulated(w), 1.0),
                Kernel::field(vec![0.1, 0.0, -0.2, 0.3], 1.0),
            ],
        );
        let r = product_energy_rate(&spec, &random_measures(4, 5, 9), &[4, 8, 16, 32]).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.rows.iter().all(|row| row.oracle.is_some()));
        let cos = circle(64, vec![Kernel::pair(KernelForm::Gaussian { bandwidth: 0.7 }, 1.0)]);
        let r = product_energy_rate(&cos, &random_measures(64, 2, 3), &[2, 3]).unwrap();
        assert!(r.max_residual < 1e-12 && r.pass, "{r:?}");
    }
}
