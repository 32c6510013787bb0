//! Probability measures on grids: empirical measures, relative entropy,
//! transport distances, linear tilts and Orlicz norms.

mod orlicz;
mod transport;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use orlicz::{
    holder_young_check, luxemburg_norm, orlicz_suite, young_unit_root, HolderYoungReport, OrliczSuiteReport, Young,
};
pub use transport::{entropic_wasserstein1, exact_transport_cost, wasserstein1, EntropicTransport};

use crate::error::{config, Result};
use crate::interaction::Configuration;
use crate::space::{Point, QuadratureGrid};

/// A probability vector over grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    masses: Vec<f64>,
}

impl GridMeasure {
    /// Normalizes nonnegative finite weights to total mass one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return config("empty measure");
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return config("measure weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return config("measure has zero total mass");
        }
        Ok(Self {
            masses: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// The base measure μ₀ of a grid.
    pub fn base(grid: &QuadratureGrid) -> Self {
        Self {
            masses: grid.weights().to_vec(),
        }
    }

    /// Unit mass on one cell.
    pub fn dirac(len: usize, cell: usize) -> Self {
        let mut masses = vec![0.0; len];
        masses[cell] = 1.0;
        Self { masses }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.len());
        self.masses
            .iter()
            .zip(f)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, v)| m * v)
            .sum()
    }

    /// `(1 − t)·self + t·other`.
    pub fn mix(&self, other: &GridMeasure, t: f64) -> GridMeasure {
        GridMeasure {
            masses: self
                .masses
                .iter()
                .zip(&other.masses)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        }
    }

    /// Reads `cell,mass` rows.
    pub fn read_csv<R: Read>(input: R, len: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut masses = vec![0.0; len];
        for row in rdr.deserialize() {
            let (cell, mass): (usize, f64) = row?;
            if cell >= len {
                return config(format!("cell {cell} outside a grid of {len} cells"));
            }
            masses[cell] = mass;
        }
        Self::new(masses)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell", "mass"])?;
        for (c, m) in self.masses.iter().enumerate() {
            w.write_record([c.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical measure `(1/N) Σ δ_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<Point>,
}

impl EmpiricalMeasure {
    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }

    /// Distinct locations with their total masses, sorted by location.
    pub fn support(&self) -> Vec<(Point, f64)> {
        let mut pts = self.atoms.clone();
        pts.sort_by(|a, b| a.coords().partial_cmp(&b.coords()).unwrap());
        let w = self.weight();
        let mut out: Vec<(Point, f64)> = Vec::new();
        for p in pts {
            match out.last_mut() {
                Some((q, m)) if *q == p => *m += w,
                _ => out.push((p, w)),
            }
        }
        out
    }
}

pub fn empirical(config: &Configuration) -> EmpiricalMeasure {
    EmpiricalMeasure {
        atoms: config.points().to_vec(),
    }
}

/// Assigns each atom to the grid cell containing it.
pub fn bin(emp: &EmpiricalMeasure, grid: &QuadratureGrid) -> GridMeasure {
    let mut counts = vec![0.0; grid.len()];
    for x in emp.atoms() {
        counts[grid.locate(x)] += 1.0;
    }
    GridMeasure::new(counts).expect("at least one atom")
}

/// `D(μ|μ₀) = Σ μ log(μ/μ₀)` in nats; `+∞` when μ charges a μ₀-null cell.
pub fn relative_entropy(mu: &GridMeasure, mu0: &GridMeasure) -> f64 {
    debug_assert_eq!(mu.len(), mu0.len());
    let mut d = 0.0;
    for (&p, &q) in mu.masses().iter().zip(mu0.masses()) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            d += p * (p / q).ln();
        }
    }
    d.max(0.0)
}

pub fn total_variation(mu: &GridMeasure, nu: &GridMeasure) -> f64 {
    0.5 * mu
        .masses()
        .iter()
        .zip(nu.masses())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Linear tilt `Φ(μ) = ∫ u dμ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltFunctional {
    pub u: Vec<f64>,
    pub lipschitz: Option<f64>,
}

impl TiltFunctional {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.iter().any(|v| !v.is_finite()) {
            return config("tilt values must be finite");
        }
        Ok(Self { u, lipschitz: None })
    }

    pub fn apply(&self, mu: &GridMeasure) -> f64 {
        mu.integrate(&self.u)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: self.u.iter().map(|v| v * factor).collect(),
            lipschitz: self.lipschitz.map(|l| l * factor.abs()),
        }
    }
}

/// Joint measure `μ^{⊗n}` on `grid^n`, row-major with the first factor slowest.
pub fn tensor_power(mu: &GridMeasure, n: usize) -> Vec<f64> {
    let mut joint = vec![1.0];
    for _ in 0..n {
        joint = joint
            .iter()
            .flat_map(|a| mu.masses().iter().map(move |b| a * b))
            .collect();
    }
    joint
}

/// `D^(n)(p) = (1/n) D(p | μ₀^{⊗n})` of a joint vector on `grid^n`.
pub fn mean_entropy(joint: &[f64], mu0: &GridMeasure, n: usize) -> f64 {
    let base = tensor_power(mu0, n);
    let mut d = 0.0;
    for (&p, &q) in joint.iter().zip(&base) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            d += p * (p / q).ln();
        }
    }
    d / n as f64
}

/// Marginal of a joint vector on `grid^n` onto its first `j` factors.
pub fn marginal(joint: &[f64], cells: usize, n: usize, j: usize) -> Vec<f64> {
    let tail = cells.pow((n - j) as u32);
    joint.chunks(tail).map(|c| c.iter().sum()).collect()
}
