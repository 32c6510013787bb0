//! Compact state spaces, their geodesic metrics, base measures and quadrature grids.
//!
//! Continuous spaces are partitioned into equal-area cells:
//!
//! | space    | coordinates           | cells              |
//! |----------|-----------------------|--------------------|
//! | Circle   | angle in `[0, 2π)`    | `r` arcs           |
//! | Interval | `x` in `[0, 1]`       | `r` segments       |
//! | Torus2   | two angles            | `r × r` squares    |
//! | Sphere2  | unit vector           | `r` z-bands × `r` azimuth sectors |
//! | FiniteSet| atom index            | one cell per atom  |
//!
//! A non-uniform base measure is a density that is constant on the cells of
//! some resolution (continuous densities are tabulated at cell midpoints).

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::seed;

/// A point of one of the supported spaces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Point {
    Angle(f64),
    Unit(f64),
    Torus([f64; 2]),
    Sphere([f64; 3]),
    Atom(usize),
}

impl Point {
    pub fn coords(&self) -> Vec<f64> {
        match *self {
            Point::Angle(a) | Point::Unit(a) => vec![a],
            Point::Torus(t) => t.to_vec(),
            Point::Sphere(v) => v.to_vec(),
            Point::Atom(i) => vec![i as f64],
        }
    }

    /// Angle of a circle point.
    pub fn angle(&self) -> Option<f64> {
        match *self {
            Point::Angle(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpaceKind {
    Circle,
    Torus2,
    Sphere2,
    Interval,
    /// `points` atoms. Without positions the metric is discrete (distance 1
    /// between distinct atoms); with positions it is the Euclidean distance
    /// of the embedding.
    FiniteSet {
        points: usize,
        positions: Option<Vec<Vec<f64>>>,
    },
}

/// Density of μ₀ relative to the uniform measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseDensity {
    Uniform,
    /// Piecewise constant on the cells of `resolution` (atom weights for finite sets).
    Cells {
        resolution: usize,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    kind: SpaceKind,
    density: BaseDensity,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

impl StateSpace {
    pub fn new(kind: SpaceKind) -> Result<Self> {
        if let SpaceKind::FiniteSet { points, positions } = &kind {
            if *points == 0 {
                return config("finite set needs at least one point");
            }
            if let Some(pos) = positions {
                if pos.len() != *points {
                    return config("finite set positions must match the number of points");
                }
                let dim = pos[0].len();
                if dim == 0 || pos.iter().any(|p| p.len() != dim || p.iter().any(|c| !c.is_finite())) {
                    return config("finite set positions must be finite vectors of one dimension");
                }
            }
        }
        Ok(Self {
            kind,
            density: BaseDensity::Uniform,
        })
    }

    pub fn circle() -> Self {
        Self::new(SpaceKind::Circle).unwrap()
    }

    pub fn torus2() -> Self {
        Self::new(SpaceKind::Torus2).unwrap()
    }

    pub fn sphere2() -> Self {
        Self::new(SpaceKind::Sphere2).unwrap()
    }

    pub fn interval() -> Self {
        Self::new(SpaceKind::Interval).unwrap()
    }

    /// Finite set with the discrete metric and μ₀ proportional to `weights`.
    pub fn finite(weights: Vec<f64>) -> Result<Self> {
        Self::new(SpaceKind::FiniteSet {
            points: weights.len(),
            positions: None,
        })?
        .with_cell_density(weights.len(), weights)
    }

    pub fn finite_uniform(k: usize) -> Result<Self> {
        Self::finite(vec![1.0; k])
    }

    /// Attach embedding coordinates to a finite set.
    pub fn with_positions(mut self, positions: Vec<Vec<f64>>) -> Result<Self> {
        match &self.kind {
            SpaceKind::FiniteSet { points, .. } => {
                let points = *points;
                self = Self {
                    kind: Self::new(SpaceKind::FiniteSet {
                        points,
                        positions: Some(positions),
                    })?
                    .kind,
                    density: self.density,
                };
                Ok(self)
            }
            _ => config("positions only apply to finite sets"),
        }
    }

    /// Base density given as values on the cells of `resolution`.
    pub fn with_cell_density(mut self, resolution: usize, values: Vec<f64>) -> Result<Self> {
        let cells = self.cell_count(resolution)?;
        if values.len() != cells {
            return config(format!("base density has {} values, expected {cells}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return config("base density must be finite and nonnegative");
        }
        if values.iter().sum::<f64>() <= 0.0 {
            return config("base density has zero total mass");
        }
        self.density = BaseDensity::Cells { resolution, values };
        Ok(self)
    }

    /// Tabulate a continuous density at the cell midpoints of `resolution`.
    pub fn with_density_fn(self, resolution: usize, density: impl Fn(&Point) -> f64) -> Result<Self> {
        let cells = self.cell_count(resolution)?;
        let values = (0..cells).map(|c| density(&self.cell_center(resolution, c))).collect();
        self.with_cell_density(resolution, values)
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn density(&self) -> &BaseDensity {
        &self.density
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, SpaceKind::FiniteSet { .. })
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.density, BaseDensity::Uniform)
    }

    /// Topological dimension (0 for finite sets).
    pub fn dimension(&self) -> usize {
        match self.kind {
            SpaceKind::Circle | SpaceKind::Interval => 1,
            SpaceKind::Torus2 | SpaceKind::Sphere2 => 2,
            SpaceKind::FiniteSet { .. } => 0,
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.kind {
            SpaceKind::Circle | SpaceKind::Sphere2 => PI,
            SpaceKind::Interval => 1.0,
            SpaceKind::Torus2 => PI * 2f64.sqrt(),
            SpaceKind::FiniteSet { points, positions } => match positions {
                None => {
                    if *points > 1 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Some(pos) => {
                    let mut best: f64 = 0.0;
                    for a in pos {
                        for b in pos {
                            best = best.max(euclid(a, b));
                        }
                    }
                    best
                }
            },
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        let angle_ok = |a: f64| a.is_finite() && (0.0..TAU).contains(&a);
        match (&self.kind, x) {
            (SpaceKind::Circle, Point::Angle(a)) => angle_ok(*a),
            (SpaceKind::Interval, Point::Unit(u)) => u.is_finite() && (0.0..=1.0).contains(u),
            (SpaceKind::Torus2, Point::Torus(t)) => angle_ok(t[0]) && angle_ok(t[1]),
            (SpaceKind::Sphere2, Point::Sphere(v)) => {
                let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                n2.is_finite() && (n2.sqrt() - 1.0).abs() < 1e-9
            }
            (SpaceKind::FiniteSet { points, .. }, Point::Atom(i)) => i < points,
            _ => false,
        }
    }

    /// Geodesic distance.
    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        for p in [x, y] {
            if !self.contains(p) {
                return domain(format!("point {p:?} is not in {:?}", self.kind));
            }
        }
        Ok(self.dist(x, y))
    }

    /// Distance without membership checks.
    pub(crate) fn dist(&self, x: &Point, y: &Point) -> f64 {
        match (x, y) {
            (Point::Angle(a), Point::Angle(b)) => arc(*a, *b),
            (Point::Unit(a), Point::Unit(b)) => (a - b).abs(),
            (Point::Torus(a), Point::Torus(b)) => arc(a[0], b[0]).hypot(arc(a[1], b[1])),
            (Point::Sphere(a), Point::Sphere(b)) => {
                let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                let cx = a[1] * b[2] - a[2] * b[1];
                let cy = a[2] * b[0] - a[0] * b[2];
                let cz = a[0] * b[1] - a[1] * b[0];
                (cx * cx + cy * cy + cz * cz).sqrt().atan2(dot)
            }
            (Point::Atom(i), Point::Atom(j)) => match &self.kind {
                SpaceKind::FiniteSet {
                    positions: Some(pos), ..
                } => euclid(&pos[*i], &pos[*j]),
                _ => {
                    if i == j {
                        0.0
                    } else {
                        1.0
                    }
                }
            },
            _ => f64::NAN,
        }
    }

    pub fn cell_count(&self, resolution: usize) -> Result<usize> {
        match &self.kind {
            SpaceKind::FiniteSet { points, .. } => Ok(*points),
            _ if resolution < 2 => config(format!("resolution must be at least 2, got {resolution}")),
            SpaceKind::Circle | SpaceKind::Interval => Ok(resolution),
            SpaceKind::Torus2 | SpaceKind::Sphere2 => resolution
                .checked_mul(resolution)
                .ok_or_else(|| Error::Config("resolution overflow".into())),
        }
    }

    /// Map unit-square coordinates `u` into cell `c` (area-preserving).
    pub(crate) fn cell_point(&self, resolution: usize, c: usize, u: [f64; 2]) -> Point {
        let r = resolution as f64;
        match &self.kind {
            SpaceKind::Circle => Point::Angle(wrap_angle((c as f64 + u[0]) / r * TAU)),
            SpaceKind::Interval => Point::Unit(((c as f64 + u[0]) / r).clamp(0.0, 1.0)),
            SpaceKind::Torus2 => {
                let (i, j) = (c / resolution, c % resolution);
                Point::Torus([
                    wrap_angle((i as f64 + u[0]) / r * TAU),
                    wrap_angle((j as f64 + u[1]) / r * TAU),
                ])
            }
            SpaceKind::Sphere2 => {
                let (band, sector) = (c / resolution, c % resolution);
                let z = (-1.0 + 2.0 * (band as f64 + u[0]) / r).clamp(-1.0, 1.0);
                let phi = (sector as f64 + u[1]) / r * TAU;
                sphere_point(z, phi)
            }
            SpaceKind::FiniteSet { .. } => Point::Atom(c),
        }
    }

    pub(crate) fn cell_center(&self, resolution: usize, c: usize) -> Point {
        self.cell_point(resolution, c, [0.5, 0.5])
    }

    pub(crate) fn cell_of(&self, resolution: usize, x: &Point) -> usize {
        let r = resolution as f64;
        let bucket = |t: f64| ((t * r).floor().max(0.0) as usize).min(resolution - 1);
        match x {
            Point::Angle(a) => bucket(wrap_angle(*a) / TAU),
            Point::Unit(u) => bucket(*u),
            Point::Torus(t) => bucket(wrap_angle(t[0]) / TAU) * resolution + bucket(wrap_angle(t[1]) / TAU),
            Point::Sphere(v) => {
                let band = bucket((v[2] + 1.0) / 2.0);
                let sector = bucket(wrap_angle(v[1].atan2(v[0])) / TAU);
                band * resolution + sector
            }
            Point::Atom(i) => *i,
        }
    }

    /// Relative density of μ₀ at `x`.
    pub fn density_at(&self, x: &Point) -> f64 {
        match &self.density {
            BaseDensity::Uniform => 1.0,
            BaseDensity::Cells { resolution, values } => values[self.cell_of(*resolution, x)],
        }
    }

    /// One draw from μ₀.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.density {
            BaseDensity::Cells { resolution, values } => {
                let c = WeightedIndex::new(values).expect("validated density").sample(rng);
                self.cell_point(*resolution, c, [rng.random(), rng.random()])
            }
            BaseDensity::Uniform => match &self.kind {
                SpaceKind::Circle => Point::Angle(wrap_angle(rng.random::<f64>() * TAU)),
                SpaceKind::Interval => Point::Unit(rng.random()),
                SpaceKind::Torus2 => Point::Torus([
                    wrap_angle(rng.random::<f64>() * TAU),
                    wrap_angle(rng.random::<f64>() * TAU),
                ]),
                SpaceKind::Sphere2 => {
                    let z = 2.0 * rng.random::<f64>() - 1.0;
                    sphere_point(z, rng.random::<f64>() * TAU)
                }
                SpaceKind::FiniteSet { points, .. } => Point::Atom(rng.random_range(0..*points)),
            },
        }
    }

    /// Uniform proposal in the geodesic ball of radius `r` around `x`.
    /// Finite sets propose a uniformly chosen different atom. The result may
    /// leave the Interval, in which case the caller rejects it.
    pub(crate) fn propose<R: Rng + ?Sized>(&self, x: &Point, r: f64, rng: &mut R) -> Option<Point> {
        match (&self.kind, x) {
            (SpaceKind::Circle, Point::Angle(a)) => {
                Some(Point::Angle(wrap_angle(a + r * (2.0 * rng.random::<f64>() - 1.0))))
            }
            (SpaceKind::Interval, Point::Unit(u)) => {
                let y = u + r * (2.0 * rng.random::<f64>() - 1.0);
                (0.0..=1.0).contains(&y).then_some(Point::Unit(y))
            }
            (SpaceKind::Torus2, Point::Torus(t)) => {
                let rho = r * rng.random::<f64>().sqrt();
                let phi = rng.random::<f64>() * TAU;
                Some(Point::Torus([
                    wrap_angle(t[0] + rho * phi.cos()),
                    wrap_angle(t[1] + rho * phi.sin()),
                ]))
            }
            (SpaceKind::Sphere2, Point::Sphere(v)) => {
                let r = r.min(PI);
                let cos_t = 1.0 - rng.random::<f64>() * (1.0 - r.cos());
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                let phi = rng.random::<f64>() * TAU;
                let (e1, e2) = tangent_frame(v);
                let mut y = [0.0; 3];
                for k in 0..3 {
                    y[k] = cos_t * v[k] + sin_t * (phi.cos() * e1[k] + phi.sin() * e2[k]);
                }
                let n = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                Some(Point::Sphere([y[0] / n, y[1] / n, y[2] / n]))
            }
            (SpaceKind::FiniteSet { points, .. }, Point::Atom(i)) => {
                if *points == 1 {
                    return Some(*x);
                }
                let j = rng.random_range(0..points - 1);
                Some(Point::Atom(if j >= *i { j + 1 } else { j }))
            }
            _ => None,
        }
    }

    pub fn coordinate_names(&self) -> &'static [&'static str] {
        match self.kind {
            SpaceKind::Circle => &["theta"],
            SpaceKind::Interval => &["x"],
            SpaceKind::Torus2 => &["theta1", "theta2"],
            SpaceKind::Sphere2 => &["x", "y", "z"],
            SpaceKind::FiniteSet { .. } => &["index"],
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sphere_point(z: f64, phi: f64) -> Point {
    let s = (1.0 - z * z).max(0.0).sqrt();
    Point::Sphere([s * phi.cos(), s * phi.sin(), z])
}

fn tangent_frame(v: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if v[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let d = helper[0] * v[0] + helper[1] * v[1] + helper[2] * v[2];
    let mut e1 = [helper[0] - d * v[0], helper[1] - d * v[1], helper[2] - d * v[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|c| *c /= n);
    let e2 = [
        v[1] * e1[2] - v[2] * e1[1],
        v[2] * e1[0] - v[0] * e1[2],
        v[0] * e1[1] - v[1] * e1[0],
    ];
    (e1, e2)
}

/// Cell-centered quadrature of μ₀.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    space: StateSpace,
    resolution: usize,
    nodes: Vec<Point>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// μ₀-masses of the cells.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the cell containing `x`.
    pub fn locate(&self, x: &Point) -> usize {
        self.space.cell_of(self.resolution, x)
    }

    /// Uniform draw inside cell `c`.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Point {
        self.space.cell_point(self.resolution, c, [rng.random(), rng.random()])
    }

    /// Point of cell `c` at unit-square coordinates `u`.
    pub fn cell_point(&self, c: usize, u: [f64; 2]) -> Point {
        self.space.cell_point(self.resolution, c, u)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.space.coordinate_names().to_vec();
        header.push("weight");
        w.write_record(&header)?;
        for (node, weight) in self.nodes.iter().zip(&self.weights) {
            let mut row: Vec<String> = node.coords().iter().map(|c| c.to_string()).collect();
            row.push(weight.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell-centered grid with weights μ₀(cell) by midpoint quadrature, normalized to sum 1.
pub fn build_grid(space: &StateSpace, resolution: usize) -> Result<QuadratureGrid> {
    let cells = space.cell_count(resolution)?;
    let nodes: Vec<Point> = (0..cells).map(|c| space.cell_center(resolution, c)).collect();
    let raw: Vec<f64> = nodes.iter().map(|x| space.density_at(x)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return config("base measure has no mass on the grid");
    }
    let weights = raw.iter().map(|w| w / total).collect();
    Ok(QuadratureGrid {
        space: space.clone(),
        resolution,
        nodes,
        weights,
    })
}

/// `n` i.i.d. draws from μ₀, deterministic in `seed`.
pub fn sample_base(space: &StateSpace, seed: u64, n: usize) -> Result<Vec<Point>> {
    if n == 0 {
        return config("sample size must be at least 1");
    }
    let mut rng = seed::stream(seed, seed::DRAW, 0);
    Ok((0..n).map(|_| space.draw(&mut rng)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct FrostmanReport {
    pub exponent: f64,
    /// `(radius, max over nodes of μ₀(B_R(x)) / R^t)`.
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: f64,
    /// Ratio at the smallest radius over the ratio at the largest.
    pub growth: f64,
    pub pass: bool,
}

/// Scan μ₀(B_R(x)) / R^t over grid nodes and decreasing radii.
pub fn frostman_check(grid: &QuadratureGrid, t: f64, radii: &[f64]) -> Result<FrostmanReport> {
    if radii.is_empty() {
        return config("frostman check needs at least one radius");
    }
    if !(t > 0.0) {
        return config("frostman exponent must be positive");
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return config("radii must be positive and strictly decreasing");
    }
    let space = grid.space();
    let ratios: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            let worst = grid
                .nodes()
                .iter()
                .map(|x| {
                    grid.nodes()
                        .iter()
                        .zip(grid.weights())
                        .filter(|(y, _)| space.dist(x, y) <= r)
                        .map(|(_, w)| w)
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            (r, worst / r.powf(t))
        })
        .collect();
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let growth = ratios.last().unwrap().1 / ratios[0].1;
    Ok(FrostmanReport {
        exponent: t,
        pass: growth.is_finite() && growth <= 10.0,
        ratios,
        max_ratio,
        growth,
    })
}
