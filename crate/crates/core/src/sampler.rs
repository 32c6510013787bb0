//! Metropolis sampling of `μ_β^(N) ∝ e^{−β_N H^(N)} μ₀^{⊗N}`.
//!
//! One sweep proposes a move for every particle in index order. Proposals are
//! uniform in a geodesic ball whose radius is tuned during burn-in toward 30%
//! acceptance and frozen afterwards; finite sets propose a different atom.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::interaction::{hamiltonian, Configuration, EnergyTracker, HamiltonianSpec};
use crate::ldp::stability;
use crate::seed;
use crate::space::QuadratureGrid;

pub const ENERGY_REFRESH: usize = 100;
pub const MAX_SENTINELS: usize = 10;
pub const TARGET_ACCEPTANCE: f64 = 0.3;
pub const BATCHES: usize = 20;
const REDRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureSchedule {
    /// `β_N = β`.
    Fixed(f64),
    /// `β_N = cN`, `c > 0`.
    Proportional(f64),
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemperatureSchedule::Fixed(b) if !b.is_finite() => config("fixed beta must be finite"),
            TemperatureSchedule::Proportional(c) if !(c > 0.0 && c.is_finite()) => {
                config("proportional schedule needs c > 0")
            }
            _ => Ok(()),
        }
    }

    pub fn beta_n(&self, n: usize) -> f64 {
        match *self {
            TemperatureSchedule::Fixed(b) => b,
            TemperatureSchedule::Proportional(c) => c * n as f64,
        }
    }

    pub fn limit(&self) -> f64 {
        match *self {
            TemperatureSchedule::Fixed(b) => b,
            TemperatureSchedule::Proportional(_) => f64::INFINITY,
        }
    }
}

/// A Markov chain on configurations with a cached energy.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: Configuration,
    /// Cached `H^(N)(config)`.
    pub energy: f64,
    pub sweep: usize,
    pub radius: f64,
    pub sentinels: usize,
    tracker: EnergyTracker,
}

/// Draws the initial configuration i.i.d. from μ₀ after the stability precheck.
pub fn init(
    spec: &HamiltonianSpec,
    n: usize,
    schedule: TemperatureSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ChainState> {
    schedule.validate()?;
    stability::precheck(spec, schedule.beta_n(n))?;
    init_unchecked(spec, n, schedule.beta_n(n), rng)
}

fn init_unchecked(spec: &HamiltonianSpec, n: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    if n == 0 {
        return config("N must be at least 1");
    }
    let space = spec.space();
    let mut points = Vec::with_capacity(n);
    let singular = spec.has_singular_kernel() && beta > 0.0;
    for _ in 0..n {
        let mut x = space.draw(rng);
        let mut tries = 0;
        // coincident points carry zero Gibbs weight
        while singular && points.contains(&x) {
            tries += 1;
            if tries > REDRAWS {
                return config("cannot place distinct points: the base measure has too few atoms");
            }
            x = space.draw(rng);
        }
        points.push(x);
    }
    let config = Configuration::new(space, points)?;
    let energy = hamiltonian(spec, &config);
    let tracker = EnergyTracker::new(spec, &config);
    Ok(ChainState {
        config,
        energy,
        sweep: 0,
        radius: 0.25 * space.diameter(),
        sentinels: 0,
        tracker,
    })
}

/// Accept/reject in log space, with `+∞` deltas handled by the sign of β.
fn accept(beta: f64, delta: f64, log_density_ratio: f64, rng: &mut ChaCha8Rng) -> (bool, bool) {
    if delta == f64::INFINITY {
        return match beta {
            b if b > 0.0 => (false, false),
            b if b < 0.0 => (true, true),
            _ => (true, false),
        };
    }
    if delta == f64::NEG_INFINITY {
        return (beta >= 0.0, false);
    }
    let log_a = if beta == 0.0 { 0.0 } else { -beta * delta } + log_density_ratio;
    if log_a >= 0.0 {
        return (true, false);
    }
    (rng.random::<f64>().ln() < log_a, false)
}

impl ChainState {
    /// One systematic-scan sweep. Returns the acceptance rate of the sweep.
    pub fn sweep(&mut self, spec: &HamiltonianSpec, beta: f64, rng: &mut ChaCha8Rng) -> f64 {
        let space = spec.space();
        let uniform = space.is_uniform();
        let n = self.config.len();
        let mut accepted = 0;
        for i in 0..n {
            let old = self.config.points()[i];
            let Some(x) = space.propose(&old, self.radius, rng) else {
                continue;
            };
            let ratio = if uniform {
                0.0
            } else {
                let (p, q) = (space.density_at(&x), space.density_at(&old));
                if p <= 0.0 {
                    continue;
                }
                (p / q).ln()
            };
            let delta = self.tracker.delta(spec, &self.config, i, &x);
            let (ok, sentinel) = accept(beta, delta, ratio, rng);
            if ok {
                self.tracker.commit(spec, &self.config, i, &x);
                self.config.set(i, x);
                accepted += 1;
                if self.energy.is_finite() && delta.is_finite() {
                    self.energy += delta;
                } else {
                    self.energy = hamiltonian(spec, &self.config);
                }
            }
            if sentinel {
                self.sentinels += 1;
            }
        }
        self.sweep += 1;
        if self.sweep.is_multiple_of(ENERGY_REFRESH) {
            self.energy = hamiltonian(spec, &self.config);
        }
        accepted as f64 / n as f64
    }

    /// Stochastic-approximation update of the proposal radius.
    fn adapt(&mut self, spec: &HamiltonianSpec, acceptance: f64) {
        if spec.space().is_finite() {
            return;
        }
        let diam = spec.space().diameter();
        let gain = 1.0 / (self.sweep as f64 + 1.0).powf(0.6);
        self.radius = (self.radius * (gain * (acceptance - TARGET_ACCEPTANCE)).exp()).clamp(1e-6 * diam, diam);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub schedule: TemperatureSchedule,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    /// Keep thinned configurations (memory grows as `chains · sweeps / thinning · N`).
    pub keep_samples: bool,
}

impl RunConfig {
    pub fn new(n: usize, schedule: TemperatureSchedule, sweeps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            n,
            schedule,
            sweeps,
            burn_in,
            thinning: 1,
            chains: 1,
            seed,
            keep_samples: true,
        }
    }

    pub fn thinning(mut self, t: usize) -> Self {
        self.thinning = t;
        self
    }

    pub fn chains(mut self, c: usize) -> Self {
        self.chains = c;
        self
    }

    pub fn keep_samples(mut self, keep: bool) -> Self {
        self.keep_samples = keep;
        self
    }

    fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.n == 0 {
            return config("N must be at least 1");
        }
        if self.sweeps <= self.burn_in {
            return config("sweeps must exceed burn_in");
        }
        if self.sweeps - self.burn_in < BATCHES {
            return config(format!("need at least {BATCHES} post-burn-in sweeps"));
        }
        if self.thinning == 0 || self.chains == 0 {
            return config("thinning and chains must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainDiagnostics {
    /// Mean acceptance over the post-burn-in sweeps.
    pub acceptance: f64,
    pub radius: f64,
    pub sentinels: usize,
    /// Mean and batch-means standard error of `H/N` after burn-in.
    pub mean_energy: f64,
    pub stderr: f64,
    pub autocorrelation_time: f64,
    pub effective_samples: f64,
    /// `max |cached − recomputed| / (1 + |H|)` at the end of the chain.
    pub energy_drift: f64,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub chain: usize,
    /// `H/N` after every sweep, burn-in included.
    pub energy_trace: Vec<f64>,
    /// Acceptance of every sweep.
    pub acceptance_trace: Vec<f64>,
    /// Thinned post-burn-in samples with their sweep numbers.
    pub samples: Vec<(usize, Configuration)>,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub beta: f64,
    pub chains: Vec<ChainOutput>,
    pub mean_energy: f64,
    pub stderr: f64,
    pub effective_samples: f64,
    pub autocorrelation_time: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub beta: f64,
    pub mean_energy: f64,
    pub stderr: f64,
    pub effective_samples: f64,
    pub autocorrelation_time: f64,
    pub warning: Option<String>,
    pub chains: Vec<ChainDiagnostics>,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            beta: self.beta,
            mean_energy: self.mean_energy,
            stderr: self.stderr,
            effective_samples: self.effective_samples,
            autocorrelation_time: self.autocorrelation_time,
            warning: self.warning.clone(),
            chains: self.chains.iter().map(|c| c.diagnostics.clone()).collect(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &Configuration> {
        self.chains.iter().flat_map(|c| c.samples.iter().map(|(_, s)| s))
    }

    pub fn total_sentinels(&self) -> usize {
        self.chains.iter().map(|c| c.diagnostics.sentinels).sum()
    }
}

/// Batch means of a series: `(mean, variance of the mean, per-sample variance)`.
fn batch_means(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    let size = n / BATCHES;
    let batches: Vec<f64> = (0..BATCHES)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = batches.iter().sum::<f64>() / BATCHES as f64;
    let bvar = batches.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
    (mean, bvar / BATCHES as f64, var)
}

fn run_chain(spec: &HamiltonianSpec, cfg: &RunConfig, beta: f64, chain: usize) -> Result<ChainOutput> {
    let mut rng = seed::stream(cfg.seed, seed::CHAIN, chain as u64);
    let mut state = init_unchecked(spec, cfg.n, beta, &mut rng)?;
    let nf = cfg.n as f64;
    let mut energy_trace = Vec::with_capacity(cfg.sweeps);
    let mut acceptance_trace = Vec::with_capacity(cfg.sweeps);
    let mut samples = Vec::new();
    let mut drift: f64 = 0.0;
    for s in 0..cfg.sweeps {
        let acc = state.sweep(spec, beta, &mut rng);
        if s < cfg.burn_in {
            state.adapt(spec, acc);
        }
        if state.sentinels >= MAX_SENTINELS {
            return Err(Error::Stability(format!(
                "chain {chain} hit {} singular moves at beta = {beta}: e^(-beta W) is not integrable, \
                 so the partition function is not bounded by C^N",
                state.sentinels
            )));
        }
        energy_trace.push(state.energy / nf);
        acceptance_trace.push(acc);
        if s >= cfg.burn_in && (s - cfg.burn_in + 1).is_multiple_of(cfg.thinning) && cfg.keep_samples {
            samples.push((s + 1, state.config.clone()));
        }
        if state.sweep % ENERGY_REFRESH == ENERGY_REFRESH - 1 {
            let exact = hamiltonian(spec, &state.config);
            if exact.is_finite() {
                drift = drift.max((state.energy - exact).abs() / (1.0 + exact.abs()));
            }
        }
    }
    let post = &energy_trace[cfg.burn_in..];
    let (mean, var_mean, var) = batch_means(post);
    let stderr = var_mean.sqrt();
    let ess = if var_mean > 0.0 {
        var / var_mean
    } else {
        post.len() as f64
    };
    let post_len = post.len() as f64;
    let acceptance = acceptance_trace[cfg.burn_in..].iter().sum::<f64>() / post_len;
    Ok(ChainOutput {
        chain,
        energy_trace,
        acceptance_trace,
        samples,
        diagnostics: ChainDiagnostics {
            acceptance,
            radius: state.radius,
            sentinels: state.sentinels,
            mean_energy: mean,
            stderr,
            autocorrelation_time: post_len / ess.max(1e-300),
            effective_samples: ess,
            energy_drift: drift,
        },
    })
}

/// Runs `chains` independent chains on `workers` threads (`0` = rayon default).
pub fn run(spec: &HamiltonianSpec, cfg: &RunConfig, workers: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let warning = stability::precheck(spec, cfg.schedule.beta_n(cfg.n))?;
    let mut out = run_unchecked(spec, cfg, workers)?;
    if out.warning.is_none() {
        out.warning = warning;
    }
    Ok(out)
}

/// [`run`] without the integrability precheck, for callers that already ran it.
pub(crate) fn run_unchecked(spec: &HamiltonianSpec, cfg: &RunConfig, workers: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let beta = cfg.schedule.beta_n(cfg.n);
    let mut warning = None;
    let chains: Vec<ChainOutput> = if workers == 1 {
        (0..cfg.chains)
            .map(|c| run_chain(spec, cfg, beta, c))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..cfg.chains)
                .into_par_iter()
                .map(|c| run_chain(spec, cfg, beta, c))
                .collect::<Result<_>>()
        })?
    };
    let k = chains.len() as f64;
    let mean_energy = chains.iter().map(|c| c.diagnostics.mean_energy).sum::<f64>() / k;
    let stderr = chains.iter().map(|c| c.diagnostics.stderr.powi(2)).sum::<f64>().sqrt() / k;
    let effective_samples: f64 = chains.iter().map(|c| c.diagnostics.effective_samples).sum();
    let total = (cfg.sweeps - cfg.burn_in) as f64 * k;
    if effective_samples < 10.0 {
        warning = Some(format!("effective sample size {effective_samples:.1} is below 10"));
    }
    Ok(RunOutput {
        beta,
        chains,
        mean_energy,
        stderr,
        effective_samples,
        autocorrelation_time: total / effective_samples.max(1e-300),
        warning,
    })
}

/// Density of the `j`-th marginal (`j ∈ {1, 2}`) with respect to `μ₀^{⊗j}`,
/// averaging over all ordered `j`-tuples of distinct particles.
pub fn marginal_density<'a>(
    samples: impl IntoIterator<Item = &'a Configuration>,
    j: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    let n = grid.len();
    let w = grid.weights();
    let mut hist = vec![0.0; n.pow(j as u32)];
    let mut total = 0.0;
    let mut counts = vec![0.0; n];
    for config in samples {
        if j == 0 || j > 2 || j > config.len() {
            return config_error(j, config.len());
        }
        counts.iter_mut().for_each(|c| *c = 0.0);
        for x in config.points() {
            counts[grid.locate(x)] += 1.0;
        }
        let nn = config.len() as f64;
        if j == 1 {
            hist.iter_mut().zip(&counts).for_each(|(h, c)| *h += c);
            total += nn;
        } else {
            for a in 0..n {
                if counts[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    let pairs = counts[a] * (counts[b] - if a == b { 1.0 } else { 0.0 });
                    hist[a * n + b] += pairs;
                }
            }
            total += nn * (nn - 1.0);
        }
    }
    if total == 0.0 {
        return config("no samples for the marginal estimate");
    }
    Ok(hist
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let mass = if j == 1 { w[idx] } else { w[idx / n] * w[idx % n] };
            if mass > 0.0 {
                h / total / mass
            } else {
                0.0
            }
        })
        .collect())
}

fn config_error<T>(j: usize, n: usize) -> Result<T> {
    config(format!("marginal order {j} needs 1 <= j <= min(2, N = {n})"))
}

/// `sweep,chain,energy,acceptance` rows (energy is `H/N`).
pub fn write_trace<W: Write>(out: W, run: &RunOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep", "chain", "energy", "acceptance"])?;
    for c in &run.chains {
        for (s, (e, a)) in c.energy_trace.iter().zip(&c.acceptance_trace).enumerate() {
            w.write_record([(s + 1).to_string(), c.chain.to_string(), e.to_string(), a.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sweep,chain,particle,<coordinates>` rows of the kept samples.
pub fn write_samples<W: Write>(out: W, run: &RunOutput, coordinate_names: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sweep", "chain", "particle"];
    header.extend_from_slice(coordinate_names);
    w.write_record(&header)?;
    for c in &run.chains {
        for (s, config) in &c.samples {
            for (i, x) in config.points().iter().enumerate() {
                let mut row = vec![s.to_string(), c.chain.to_string(), i.to_string()];
                row.extend(x.coords().iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{product_mean_energy, Kernel, KernelForm};
    use crate::measure::GridMeasure;
    use crate::space::{build_grid, Point, StateSpace};
    use rand::SeedableRng;
    use std::sync::Arc;

    fn spec_on(space: StateSpace, res: usize, terms: Vec<Kernel>) -> HamiltonianSpec {
        HamiltonianSpec::new(Arc::new(build_grid(&space, res).unwrap()), terms).unwrap()
    }

    #[test]
    fn schedules() {
        assert_eq!(TemperatureSchedule::Fixed(1.5).limit(), 1.5);
        assert_eq!(TemperatureSchedule::Proportional(2.0).beta_n(8), 16.0);
        assert_eq!(TemperatureSchedule::Proportional(2.0).limit(), f64::INFINITY);
        assert!(TemperatureSchedule::Proportional(-1.0).validate().is_err());
    }

    #[test]
    fn zero_kernel_accepts_everything() {
        let spec = spec_on(StateSpace::circle(), 16, vec![]);
        let out = run(
            &spec,
            &RunConfig::new(8, TemperatureSchedule::Fixed(1.0), 200, 50, 1),
            1,
        )
        .unwrap();
        assert_eq!(out.chains[0].diagnostics.acceptance, 1.0);
        assert_eq!(out.mean_energy, 0.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let spec = spec_on(StateSpace::circle(), 16, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let cfg = RunConfig::new(10, TemperatureSchedule::Fixed(2.0), 300, 100, 9).chains(3);
        let a = run(&spec, &cfg, 1).unwrap();
        let b = run(&spec, &cfg, 3).unwrap();
        for (x, y) in a.chains.iter().zip(&b.chains) {
            assert_eq!(x.energy_trace, y.energy_trace);
            assert_eq!(x.samples, y.samples);
        }
    }

    /// Single-site Metropolis kernel on `{0,1}²` for particle `i`.
    fn site_kernel(spec: &HamiltonianSpec, beta: f64, i: usize) -> [[f64; 4]; 4] {
        let space = spec.space();
        let h = |s: usize| {
            let c = Configuration::new(space, vec![Point::Atom(s >> 1), Point::Atom(s & 1)]).unwrap();
            hamiltonian(spec, &c)
        };
        let mut p = [[0.0; 4]; 4];
        for s in 0..4 {
            let t = s ^ if i == 0 { 2 } else { 1 };
            let a = (-beta * (h(t) - h(s))).exp().min(1.0);
            p[s][t] = a;
            p[s][s] = 1.0 - a;
        }
        p
    }

    fn two_state_spec() -> HamiltonianSpec {
        spec_on(
            StateSpace::finite_uniform(2).unwrap(),
            0,
            vec![
                Kernel::pair(KernelForm::Tabulated(vec![0.0, 1.0, 1.0, 0.0]), 1.0),
                Kernel::field(vec![0.0, 0.4], 1.0),
            ],
        )
    }

    #[test]
    fn detailed_balance_of_the_site_kernels() {
        let spec = two_state_spec();
        let beta = 1.3;
        let space = spec.space();
        let pi: Vec<f64> = (0..4)
            .map(|s: usize| {
                let c = Configuration::new(space, vec![Point::Atom(s >> 1), Point::Atom(s & 1)]).unwrap();
                (-beta * hamiltonian(&spec, &c)).exp()
            })
            .collect();
        for i in 0..2 {
            let p = site_kernel(&spec, beta, i);
            for a in 0..4 {
                for b in 0..4 {
                    assert!((pi[a] * p[a][b] - pi[b] * p[b][a]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn sweep_transitions_match_the_exact_matrix() {
        let spec = two_state_spec();
        let beta = 1.3;
        let (p0, p1) = (site_kernel(&spec, beta, 0), site_kernel(&spec, beta, 1));
        let mut p = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                p[a][b] = (0..4).map(|c| p0[a][c] * p1[c][b]).sum();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = init_unchecked(&spec, 2, beta, &mut rng).unwrap();
        let code = |c: &Configuration| match c.points() {
            [Point::Atom(a), Point::Atom(b)] => a * 2 + b,
            _ => unreachable!(),
        };
        let mut counts = [[0.0f64; 4]; 4];
        let mut s = code(&state.config);
        for _ in 0..100_000 {
            state.sweep(&spec, beta, &mut rng);
            let t = code(&state.config);
            counts[s][t] += 1.0;
            s = t;
        }
        for a in 0..4 {
            let row: f64 = counts[a].iter().sum();
            for b in 0..4 {
                let q = p[a][b];
                let sigma = (row * q * (1.0 - q)).sqrt().max(1.0);
                assert!(
                    (counts[a][b] - row * q).abs() <= 4.0 * sigma,
                    "{a}->{b}: {} vs {}",
                    counts[a][b],
                    row * q
                );
            }
        }
    }

    #[test]
    fn infinite_temperature_mean_energy_matches_product_formula() {
        let spec = spec_on(
            StateSpace::circle(),
            32,
            vec![Kernel::pair(KernelForm::Gaussian { bandwidth: 0.7 }, 1.0)],
        );
        let n = 12;
        let out = run(
            &spec,
            &RunConfig::new(n, TemperatureSchedule::Fixed(0.0), 20_000, 1000, 3).chains(2),
            2,
        )
        .unwrap();
        // uniform draws on the continuum: compare against fine-grid quadrature
        let fine = spec_on(
            StateSpace::circle(),
            1024,
            vec![Kernel::pair(KernelForm::Gaussian { bandwidth: 0.7 }, 1.0)],
        );
        let exact = product_mean_energy(&fine, &GridMeasure::base(fine.grid()), n).unwrap();
        assert!(
            (out.mean_energy - exact).abs() <= 3.0 * out.stderr,
            "{} ± {} vs {exact}",
            out.mean_energy,
            out.stderr
        );
        let rho = marginal_density(out.samples(), 1, spec.grid()).unwrap();
        let w = spec.grid().weights();
        assert!((rho.iter().zip(w).map(|(r, w)| r * w).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_marginal_integrates_to_one() {
        let spec = spec_on(StateSpace::circle(), 8, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let out = run(
            &spec,
            &RunConfig::new(6, TemperatureSchedule::Fixed(1.0), 400, 100, 4).thinning(10),
            1,
        )
        .unwrap();
        let rho = marginal_density(out.samples(), 2, spec.grid()).unwrap();
        let w = spec.grid().weights();
        let total: f64 = (0..64).map(|i| rho[i] * w[i / 8] * w[i % 8]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(marginal_density(out.samples(), 3, spec.grid()).is_err());
    }

    #[test]
    fn adaptation_reaches_the_acceptance_band() {
        let spec = spec_on(StateSpace::circle(), 16, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let cfg = RunConfig::new(32, TemperatureSchedule::Proportional(1.0), 4000, 2000, 6).keep_samples(false);
        let out = run(&spec, &cfg, 1).unwrap();
        let acc = out.chains[0].diagnostics.acceptance;
        assert!((0.2..=0.5).contains(&acc), "{acc}");
    }

    #[test]
    fn energy_cache_stays_consistent() {
        let spec = spec_on(
            StateSpace::interval(),
            16,
            vec![Kernel::pair(KernelForm::Riesz { s: 0.5 }, 1.0)],
        );
        let cfg = RunConfig::new(20, TemperatureSchedule::Fixed(2.0), 10_000, 100, 8).keep_samples(false);
        let out = run(&spec, &cfg, 1).unwrap();
        assert!(out.chains[0].diagnostics.energy_drift < 1e-6);
    }

    #[test]
    fn singular_attraction_past_the_threshold_is_refused() {
        let spec = spec_on(
            StateSpace::circle(),
            64,
            vec![Kernel::pair(KernelForm::LogDistance, 1.0)],
        );
        let cfg = RunConfig::new(16, TemperatureSchedule::Fixed(-1.5), 200, 50, 1);
        assert!(matches!(run(&spec, &cfg, 1), Err(Error::Stability(_))));
    }

    #[test]
    fn sentinels_abort_a_chain() {
        // atoms under a singular kernel at negative temperature
        let spec = spec_on(
            StateSpace::finite_uniform(3).unwrap(),
            0,
            vec![Kernel::pair(KernelForm::LogDistance, 1.0)],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = init_unchecked(&spec, 12, -1.0, &mut rng).unwrap();
        for _ in 0..50 {
            state.sweep(&spec, -1.0, &mut rng);
        }
        assert!(state.sentinels >= MAX_SENTINELS || state.energy == f64::INFINITY);
        let cfg = RunConfig::new(12, TemperatureSchedule::Fixed(-1.0), 200, 50, 1);
        assert!(matches!(run(&spec, &cfg, 1), Err(Error::Stability(_))));
    }

    #[test]
    fn csv_writers_emit_headers_and_rows() {
        let spec = spec_on(StateSpace::circle(), 8, vec![Kernel::pair(KernelForm::Cosine, 1.0)]);
        let out = run(
            &spec,
            &RunConfig::new(3, TemperatureSchedule::Fixed(1.0), 40, 10, 4).thinning(10),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sweep,chain,energy,acceptance\n"));
        assert_eq!(text.lines().count(), 41);
        let mut buf = Vec::new();
        write_samples(&mut buf, &out, spec.space().coordinate_names()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sweep,chain,particle,theta\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }
}
