//! Wasserstein-1 distances between grid measures.
//!
//! One-dimensional grids use the cumulative-mass formula, finite sets an exact
//! min-cost flow, and two-dimensional grids entropic transport. The cost
//! `⟨C, π_ε⟩` of the entropic plan overestimates `W₁` by at most
//! `ε · min(H(μ), H(ν))` (Shannon entropies), which is reported as `bias_bound`.

use std::f64::consts::TAU;

use serde::Serialize;

use super::GridMeasure;
use crate::error::{domain, Result};
use crate::space::{QuadratureGrid, SpaceKind};

const SHIFT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct EntropicTransport {
    /// Transport cost `⟨C, π_ε⟩` of the entropic plan.
    pub cost: f64,
    pub epsilon: f64,
    pub bias_bound: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

fn check(grid: &QuadratureGrid, mu: &GridMeasure, nu: &GridMeasure) -> Result<()> {
    if mu.len() != grid.len() || nu.len() != grid.len() {
        return domain(format!(
            "measures with {} and {} cells on a grid of {}",
            mu.len(),
            nu.len(),
            grid.len()
        ));
    }
    Ok(())
}

fn cumulative_difference(mu: &GridMeasure, nu: &GridMeasure) -> Vec<f64> {
    let mut acc = 0.0;
    mu.masses()
        .iter()
        .zip(nu.masses())
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect()
}

/// `W₁(μ, ν)` on the grid metric.
pub fn wasserstein1(grid: &QuadratureGrid, mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    check(grid, mu, nu)?;
    let n = grid.len();
    match grid.space().kind() {
        SpaceKind::Interval => {
            let h = 1.0 / n as f64;
            let d = cumulative_difference(mu, nu);
            Ok(h * d[..n - 1].iter().map(|v| v.abs()).sum::<f64>())
        }
        SpaceKind::Circle => {
            let h = TAU / n as f64;
            let d = cumulative_difference(mu, nu);
            let objective = |c: f64| d.iter().map(|v| (v - c).abs()).sum::<f64>();
            let (mut lo, mut hi) = d
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            // convex in the shift
            while hi - lo > SHIFT_TOL {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if objective(m1) <= objective(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            Ok(h * objective(0.5 * (lo + hi)))
        }
        SpaceKind::FiniteSet { .. } => Ok(exact_transport_cost(&cost_matrix(grid), mu.masses(), nu.masses())),
        SpaceKind::Torus2 | SpaceKind::Sphere2 => {
            let eps = 0.01 * grid.space().diameter();
            Ok(entropic_wasserstein1(grid, mu, nu, eps)?.cost)
        }
    }
}

fn cost_matrix(grid: &QuadratureGrid) -> Vec<f64> {
    let space = grid.space();
    let nodes = grid.nodes();
    let mut c = Vec::with_capacity(nodes.len() * nodes.len());
    for x in nodes {
        for y in nodes {
            c.push(space.dist(x, y));
        }
    }
    c
}

fn shannon(m: &[f64]) -> f64 {
    -m.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with regularization `eps` against `μ ⊗ ν`.
pub fn entropic_wasserstein1(
    grid: &QuadratureGrid,
    mu: &GridMeasure,
    nu: &GridMeasure,
    eps: f64,
) -> Result<EntropicTransport> {
    check(grid, mu, nu)?;
    let cost = cost_matrix(grid);
    let n = grid.len();
    let ia: Vec<usize> = (0..n).filter(|&i| mu.masses()[i] > 0.0).collect();
    let jb: Vec<usize> = (0..n).filter(|&j| nu.masses()[j] > 0.0).collect();
    let (a, b) = (mu.masses(), nu.masses());
    let la: Vec<f64> = ia.iter().map(|&i| a[i].ln()).collect();
    let lb: Vec<f64> = jb.iter().map(|&j| b[j].ln()).collect();
    let mut f = vec![0.0; ia.len()];
    let mut g = vec![0.0; jb.len()];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < 20_000 && err > 1e-10 {
        for (p, &i) in ia.iter().enumerate() {
            f[p] = -eps
                * log_sum_exp(
                    jb.iter()
                        .enumerate()
                        .map(|(q, &j)| (g[q] - cost[i * n + j]) / eps + lb[q]),
                );
        }
        for (q, &j) in jb.iter().enumerate() {
            g[q] = -eps
                * log_sum_exp(
                    ia.iter()
                        .enumerate()
                        .map(|(p, &i)| (f[p] - cost[i * n + j]) / eps + la[p]),
                );
        }
        iterations += 1;
        if iterations % 10 == 0 {
            err = ia
                .iter()
                .enumerate()
                .map(|(p, &i)| {
                    let row: f64 = jb
                        .iter()
                        .enumerate()
                        .map(|(q, &j)| ((f[p] + g[q] - cost[i * n + j]) / eps + la[p] + lb[q]).exp())
                        .sum();
                    (row - a[i]).abs()
                })
                .sum();
        }
    }
    let mut total = 0.0;
    for (p, &i) in ia.iter().enumerate() {
        for (q, &j) in jb.iter().enumerate() {
            let c = cost[i * n + j];
            total += ((f[p] + g[q] - c) / eps + la[p] + lb[q]).exp() * c;
        }
    }
    Ok(EntropicTransport {
        cost: total,
        epsilon: eps,
        bias_bound: eps * shannon(a).min(shannon(b)),
        iterations,
        marginal_error: err,
    })
}

/// Exact optimal transport cost by successive shortest paths on the
/// bipartite supply/demand network (`cost` is `n × n`, row-major).
pub fn exact_transport_cost(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * n];
    let tiny = 1e-15;
    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= tiny || demand.iter().sum::<f64>() <= tiny {
            break;
        }
        // Bellman-Ford over supply nodes 0..n and demand nodes n..2n
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut prev = vec![usize::MAX; 2 * n];
        for i in 0..n {
            if supply[i] > tiny {
                dist[i] = 0.0;
            }
        }
        for _ in 0..2 * n {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let d = dist[i] + cost[i * n + j];
                        if d < dist[n + j] - 1e-15 {
                            dist[n + j] = d;
                            prev[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i * n + j] > tiny {
                            let d = dist[n + j] - cost[i * n + j];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                prev[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(sink) = (0..n)
            .filter(|&j| demand[j] > tiny && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].partial_cmp(&dist[n + y]).unwrap())
        else {
            break;
        };
        // walk back to a source, collecting the bottleneck
        let mut path = vec![n + sink];
        let mut node = n + sink;
        while prev[node] != usize::MAX {
            node = prev[node];
            path.push(node);
        }
        let source = node;
        let mut amount = supply[source].min(demand[sink]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= n {
                // backward arc demand `from - n` → supply `to`
                amount = amount.min(flow[to * n + (from - n)]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                flow[from * n + (to - n)] += amount;
            } else {
                flow[to * n + (from - n)] -= amount;
            }
        }
        supply[source] -= amount;
        demand[sink] -= amount;
    }
    flow.iter().zip(cost).map(|(f, c)| f.max(0.0) * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_grid, StateSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(n: usize, rng: &mut ChaCha8Rng) -> GridMeasure {
        GridMeasure::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for space in [
            StateSpace::circle(),
            StateSpace::interval(),
            StateSpace::finite_uniform(5).unwrap(),
        ] {
            let g = build_grid(&space, 32).unwrap();
            let mu = random_measure(g.len(), &mut rng);
            assert!(wasserstein1(&g, &mu, &mu).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn interval_endpoint_masses() {
        for res in [2usize, 10, 100] {
            let g = build_grid(&StateSpace::interval(), res).unwrap();
            let w = wasserstein1(&g, &GridMeasure::dirac(res, 0), &GridMeasure::dirac(res, res - 1)).unwrap();
            // node separation of the extreme cells; → 1 under refinement
            assert!((w - (1.0 - 1.0 / res as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_dirac_distance_is_arc_length() {
        let g = build_grid(&StateSpace::circle(), 12).unwrap();
        for shift in 0..12 {
            let w = wasserstein1(&g, &GridMeasure::dirac(12, 0), &GridMeasure::dirac(12, shift)).unwrap();
            let arc = g.space().dist(&g.nodes()[0], &g.nodes()[shift]);
            assert!((w - arc).abs() < 1e-8, "{shift}: {w} vs {arc}");
        }
    }

    #[test]
    fn circle_matches_exact_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = build_grid(&StateSpace::circle(), 8).unwrap();
        for _ in 0..20 {
            let (mu, nu) = (random_measure(8, &mut rng), random_measure(8, &mut rng));
            let flow = exact_transport_cost(&cost_matrix(&g), mu.masses(), nu.masses());
            let cdf = wasserstein1(&g, &mu, &nu).unwrap();
            assert!((flow - cdf).abs() < 1e-8, "{flow} vs {cdf}");
        }
    }

    #[test]
    fn finite_set_flow_matches_line_oracle_and_entropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = [0.0, 0.3, 1.1, 1.5, 2.6];
        let space = StateSpace::finite_uniform(5)
            .unwrap()
            .with_positions(xs.iter().map(|x| vec![*x]).collect())
            .unwrap();
        let g = build_grid(&space, 0).unwrap();
        for _ in 0..20 {
            let (mu, nu) = (random_measure(5, &mut rng), random_measure(5, &mut rng));
            // points on a line: W1 = Σ |F − G| · gap
            let d = cumulative_difference(&mu, &nu);
            let oracle: f64 = (0..4).map(|i| d[i].abs() * (xs[i + 1] - xs[i])).sum();
            let exact = wasserstein1(&g, &mu, &nu).unwrap();
            assert!((exact - oracle).abs() < 1e-12, "{exact} vs {oracle}");
            let ent = entropic_wasserstein1(&g, &mu, &nu, 0.01 * space.diameter()).unwrap();
            assert!((ent.cost - exact).abs() <= 0.05 * exact, "{} vs {exact}", ent.cost);
            assert!(ent.cost >= exact - 1e-9 && ent.cost <= exact + ent.bias_bound + 1e-9);
        }
    }

    #[test]
    fn discrete_metric_gives_total_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = build_grid(&StateSpace::finite_uniform(5).unwrap(), 0).unwrap();
        for _ in 0..20 {
            let (mu, nu) = (random_measure(5, &mut rng), random_measure(5, &mut rng));
            let tv = super::super::total_variation(&mu, &nu);
            assert!((wasserstein1(&g, &mu, &nu).unwrap() - tv).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for space in [
            StateSpace::circle(),
            StateSpace::interval(),
            StateSpace::finite_uniform(6).unwrap(),
        ] {
            let g = build_grid(&space, 24).unwrap();
            for _ in 0..50 {
                let (a, b, c) = (
                    random_measure(g.len(), &mut rng),
                    random_measure(g.len(), &mut rng),
                    random_measure(g.len(), &mut rng),
                );
                let ab = wasserstein1(&g, &a, &b).unwrap();
                assert!((ab - wasserstein1(&g, &b, &a).unwrap()).abs() < 1e-9);
                assert!(ab <= wasserstein1(&g, &a, &c).unwrap() + wasserstein1(&g, &c, &b).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn torus_entropic_is_within_bias() {
        let g = build_grid(&StateSpace::torus2(), 6).unwrap();
        let n = g.len();
        let mu = GridMeasure::dirac(n, 0);
        let nu = GridMeasure::dirac(n, 7);
        let w = wasserstein1(&g, &mu, &nu).unwrap();
        let d = g.space().dist(&g.nodes()[0], &g.nodes()[7]);
        assert!((w - d).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (random_measure(n, &mut rng), random_measure(n, &mut rng));
        let ent = entropic_wasserstein1(&g, &a, &b, 0.01 * g.space().diameter()).unwrap();
        let exact = exact_transport_cost(&cost_matrix(&g), a.masses(), b.masses());
        assert!(ent.cost >= exact - 1e-9 && ent.cost <= exact + ent.bias_bound + 1e-9);
    }

    #[test]
    fn grid_mismatch_is_a_domain_error() {
        let g = build_grid(&StateSpace::circle(), 8).unwrap();
        let r = wasserstein1(&g, &GridMeasure::dirac(8, 0), &GridMeasure::dirac(9, 0));
        assert!(matches!(r, Err(crate::Error::Domain(_))));
    }
}
