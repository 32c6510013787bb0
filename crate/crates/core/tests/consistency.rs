use std::collections::HashMap;
use std::sync::Arc;

use gibbslab::interaction::{HamiltonianSpec, Kernel, KernelForm};
use gibbslab::ldp::{exact_law_finite, log_partition, PartitionMethod, ThermoBudget, TypeVector};
use gibbslab::sampler::{run, RunConfig, TemperatureSchedule};
use gibbslab::space::{build_grid, Point, StateSpace};

fn three_state(weights: Vec<f64>) -> HamiltonianSpec {
    let w = vec![0.0, 1.0, -0.5, 1.0, 0.3, 0.2, -0.5, 0.2, 0.8];
    let grid = build_grid(&StateSpace::finite(weights).unwrap(), 0).unwrap();
    HamiltonianSpec::new(
        Arc::new(grid),
        vec![
            Kernel::pair(KernelForm::Tabulated(w), 1.0),
            Kernel::field(vec![0.2, -0.1, 0.0], 1.0),
        ],
    )
    .unwrap()
}

fn type_of(points: &[Point], k: usize) -> TypeVector {
    let mut counts = vec![0u32; k];
    for p in points {
        if let Point::Atom(a) = p {
            counts[*a] += 1;
        }
    }
    TypeVector { counts }
}

fn stationary_law_matches(beta: f64) {
    let spec = three_state(vec![1.0, 2.0, 1.5]);
    let n = 6;
    let law = exact_law_finite(&spec, n, beta).unwrap();
    let cfg = RunConfig::new(n, TemperatureSchedule::Fixed(beta), 60_000, 2_000, 21)
        .chains(4)
        .thinning(5);
    let out = run(&spec, &cfg, 0).unwrap();
    let mut counts: HashMap<TypeVector, f64> = HashMap::new();
    let mut total = 0.0;
    for c in out.samples() {
        *counts.entry(type_of(c.points(), 3)).or_default() += 1.0;
        total += 1.0;
    }
    let mut tv = 0.0;
    for (i, t) in law.types.iter().enumerate() {
        tv += (counts.get(t).copied().unwrap_or(0.0) / total - law.prob(i)).abs();
    }
    tv *= 0.5;
    assert!(tv < 0.02, "beta {beta}: total variation {tv}");
    let exact = law.mean_energy() / n as f64;
    assert!(
        (out.mean_energy - exact).abs() < 4.0 * out.stderr + 1e-3,
        "beta {beta}: {} ± {} vs {exact}",
        out.mean_energy,
        out.stderr
    );
}

#[test]
fn sampler_reaches_the_exact_gibbs_law() {
    for beta in [0.0, 0.8, -0.6] {
        stationary_law_matches(beta);
    }
}

#[test]
fn partition_methods_agree() {
    let spec = three_state(vec![1.0, 1.0, 1.0]);
    let exact = log_partition(&spec, 3, 1.3, PartitionMethod::ExactEnum).unwrap();
    let tensor = log_partition(&spec, 3, 1.3, PartitionMethod::TensorQuadrature).unwrap();
    assert!((exact.value - tensor.value).abs() < 1e-13);
    let budget = ThermoBudget {
        rungs: 16,
        sweeps: 20_000,
        burn_in: 1_000,
        chains: 2,
        seed: 5,
    };
    let ti = log_partition(&spec, 12, -0.7, PartitionMethod::ThermoIntegration(budget)).unwrap();
    let ex = log_partition(&spec, 12, -0.7, PartitionMethod::ExactEnum).unwrap();
    assert!(
        (ti.value - ex.value).abs() < 3.0 * ti.stderr + 2e-3,
        "{} vs {}",
        ti.value,
        ex.value
    );
}
