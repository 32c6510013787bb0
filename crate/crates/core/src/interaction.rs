//! Finite-order mean-field Hamiltonians.
//!
//! ```text
//! H(x_1..x_N) = Σ_m N^{-(m-1)} Σ_{I distinct} W_m(x_{i_1}, .., x_{i_m}) + Σ_i u(x_i)
//! ```
//!
//! The inner sum runs over ordered index tuples with pairwise distinct entries.
//! Kernel values live in `(-∞, +∞]`; `+∞` is absorbing in every sum.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::measure::GridMeasure;
use crate::space::{Point, QuadratureGrid, SpaceKind, StateSpace};

/// Closed-form or tabulated kernel shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelForm {
    Constant(f64),
    /// `cos(θ_x - θ_y)` on the circle.
    Cosine,
    /// `exp(-d² / 2σ²)`.
    Gaussian {
        bandwidth: f64,
    },
    /// `-log d`, `+∞` at coincident points.
    LogDistance,
    /// `d^{-s}`, `+∞` at coincident points.
    Riesz {
        s: f64,
    },
    /// Values on `grid^m`, row-major.
    Tabulated(Vec<f64>),
    /// One-body values on the grid.
    ExternalField(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub order: usize,
    pub form: KernelForm,
    pub coefficient: f64,
    /// Truncation level `R` of `W_R = min(W, R)`.
    pub truncation: Option<f64>,
}

pub const MAX_ORDER: usize = 3;

/// Number of sub-sample points per side used for singular diagonal cells.
const DIAGONAL_STRATA: usize = 5;

impl Kernel {
    pub fn new(order: usize, form: KernelForm, coefficient: f64) -> Self {
        Self {
            order,
            form,
            coefficient,
            truncation: None,
        }
    }

    pub fn pair(form: KernelForm, coefficient: f64) -> Self {
        Self::new(2, form, coefficient)
    }

    pub fn field(values: Vec<f64>, coefficient: f64) -> Self {
        Self::new(1, KernelForm::ExternalField(values), coefficient)
    }

    /// `W_R = min(W, R)`, a continuous minorant of a singular kernel.
    pub fn truncated(mut self, level: f64) -> Self {
        self.truncation = Some(level);
        self
    }

    /// Kernels with value `+∞` on the diagonal.
    pub fn is_singular(&self) -> bool {
        matches!(self.form, KernelForm::LogDistance | KernelForm::Riesz { .. }) && self.truncation.is_none()
    }

    fn has_singular_form(&self) -> bool {
        matches!(self.form, KernelForm::LogDistance | KernelForm::Riesz { .. })
    }

    /// Exponent `a` such that the kernel behaves like `d^{-a}` at the diagonal
    /// (`0` for the logarithm, `None` for bounded kernels).
    pub fn singularity_exponent(&self) -> Option<f64> {
        if !self.is_singular() {
            return None;
        }
        match self.form {
            KernelForm::Riesz { s } => Some(s),
            _ => Some(0.0),
        }
    }

    fn clip(&self, v: f64) -> f64 {
        match self.truncation {
            Some(r) => v.min(r),
            None => v,
        }
    }

    /// Pair value at two points; `cells` gives the grid cells for tabulated forms.
    fn pair_value(&self, space: &StateSpace, grid: &QuadratureGrid, x: &Point, y: &Point) -> f64 {
        let n = grid.len();
        let raw = match &self.form {
            KernelForm::Constant(c) => *c,
            KernelForm::Cosine => match (x, y) {
                (Point::Angle(a), Point::Angle(b)) => (a - b).cos(),
                _ => f64::NAN,
            },
            KernelForm::Gaussian { bandwidth } => {
                let d = space.dist(x, y);
                (-d * d / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelForm::LogDistance => {
                let d = space.dist(x, y);
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    -d.ln()
                }
            }
            KernelForm::Riesz { s } => {
                let d = space.dist(x, y);
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    d.powf(-s)
                }
            }
            KernelForm::Tabulated(t) => t[grid.locate(x) * n + grid.locate(y)],
            KernelForm::ExternalField(_) => f64::NAN,
        };
        self.clip(self.coefficient * raw)
    }

    fn field_value(&self, grid: &QuadratureGrid, x: &Point) -> f64 {
        let raw = match &self.form {
            KernelForm::Constant(c) => *c,
            KernelForm::ExternalField(v) | KernelForm::Tabulated(v) => v[grid.locate(x)],
            _ => f64::NAN,
        };
        self.clip(self.coefficient * raw)
    }

    fn triple_value(&self, grid: &QuadratureGrid, x: &Point, y: &Point, z: &Point) -> f64 {
        let n = grid.len();
        let raw = match &self.form {
            KernelForm::Constant(c) => *c,
            KernelForm::Tabulated(t) => t[(grid.locate(x) * n + grid.locate(y)) * n + grid.locate(z)],
            _ => f64::NAN,
        };
        self.clip(self.coefficient * raw)
    }
}

/// The 25 stratified point pairs of cell `c` used to regularize singular diagonals.
///
/// The two point sets sit at quarter offsets of a 5-stratum Latin hypercube, so
/// no pair coincides.
pub fn diagonal_pairs(grid: &QuadratureGrid, c: usize) -> Vec<(Point, Point)> {
    let k = DIAGONAL_STRATA;
    let strata = |i: usize, shift: f64| [(i as f64 + shift) / k as f64, (((2 * i) % k) as f64 + shift) / k as f64];
    let mut pairs = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            pairs.push((grid.cell_point(c, strata(i, 0.25)), grid.cell_point(c, strata(j, 0.75))));
        }
    }
    pairs
}

/// Order-three grid term.
#[derive(Debug)]
enum TripleTerm {
    Constant(f64),
    Table(Vec<f64>),
}

/// Kernels discretized on the grid: `E(μ) = fᵀμ + μᵀMμ + Σ T(μ,μ,μ)`.
#[derive(Debug)]
struct GridOperators {
    field: Vec<f64>,
    pair: Option<Vec<f64>>,
    triple: Vec<TripleTerm>,
}

/// A finite-order mean-field Hamiltonian over a quadrature grid.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    grid: Arc<QuadratureGrid>,
    terms: Vec<Kernel>,
    tilt: Option<Vec<f64>>,
    operators: Arc<OnceLock<GridOperators>>,
}

impl HamiltonianSpec {
    /// Validates the kernels against the grid and symmetrizes tabulated ones.
    pub fn new(grid: Arc<QuadratureGrid>, terms: Vec<Kernel>) -> Result<Self> {
        let n = grid.len();
        let circle = matches!(grid.space().kind(), SpaceKind::Circle);
        let mut checked = Vec::with_capacity(terms.len());
        for mut k in terms {
            if k.order == 0 || k.order > MAX_ORDER {
                return config(format!("kernel order {} not supported (1..={MAX_ORDER})", k.order));
            }
            if !k.coefficient.is_finite() {
                return config("kernel coefficient must be finite");
            }
            match &mut k.form {
                KernelForm::Constant(c) if !c.is_finite() => return config("constant kernel must be finite"),
                KernelForm::Cosine if !circle => return config("cosine kernel needs a circle"),
                KernelForm::Cosine | KernelForm::Gaussian { .. } if k.order != 2 => {
                    return config("cosine and gaussian kernels are pair kernels")
                }
                KernelForm::Gaussian { bandwidth } if !(*bandwidth > 0.0) => {
                    return config("gaussian bandwidth must be positive")
                }
                KernelForm::Riesz { s } if !(*s > 0.0) => return config("riesz exponent must be positive"),
                KernelForm::LogDistance | KernelForm::Riesz { .. } => {
                    if k.order != 2 {
                        return config("singular kernels are pair kernels");
                    }
                    if k.coefficient <= 0.0 {
                        return config("singular kernels need a positive coefficient");
                    }
                }
                KernelForm::ExternalField(v) => {
                    if k.order != 1 {
                        return config("external fields have order 1");
                    }
                    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                        return config(format!("external field needs {n} finite values"));
                    }
                }
                KernelForm::Tabulated(t) => {
                    let expected = n.pow(k.order as u32);
                    if t.len() != expected || t.iter().any(|x| !x.is_finite()) {
                        return config(format!(
                            "tabulated kernel of order {} needs {expected} finite values",
                            k.order
                        ));
                    }
                    symmetrize(t, n, k.order);
                }
                _ => {}
            }
            if k.order == 3 && !matches!(k.form, KernelForm::Constant(_) | KernelForm::Tabulated(_)) {
                return config("order-3 kernels must be constant or tabulated");
            }
            checked.push(k);
        }
        Ok(Self {
            grid,
            terms: checked,
            tilt: None,
            operators: Arc::new(OnceLock::new()),
        })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<QuadratureGrid> {
        self.grid.clone()
    }

    pub fn space(&self) -> &StateSpace {
        self.grid.space()
    }

    pub fn terms(&self) -> &[Kernel] {
        &self.terms
    }

    pub fn tilt(&self) -> Option<&[f64]> {
        self.tilt.as_deref()
    }

    pub fn max_order(&self) -> usize {
        self.terms.iter().map(|k| k.order).max().unwrap_or(0)
    }

    pub fn has_singular_kernel(&self) -> bool {
        self.terms.iter().any(Kernel::is_singular)
    }

    /// Pair terms only, as a new spec without fields or tilt.
    pub fn pair_part(&self) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.terms.iter().filter(|k| k.order == 2).cloned().collect(),
        )
    }

    /// Sum of all pair kernels at two points.
    pub fn pair_kernel(&self, x: &Point, y: &Point) -> f64 {
        let space = self.space();
        self.terms
            .iter()
            .filter(|k| k.order == 2)
            .map(|k| k.pair_value(space, &self.grid, x, y))
            .sum()
    }

    /// Pair kernel on cell pair `(a, b)` of the grid; singular diagonal cells
    /// are replaced by the mean of `g(W)` over [`diagonal_pairs`].
    pub fn pair_cell_value(&self, a: usize, b: usize, g: impl Fn(f64) -> f64) -> f64 {
        let nodes = self.grid.nodes();
        let singular = self.terms.iter().any(|k| k.order == 2 && k.has_singular_form());
        if a == b && singular && !self.space().is_finite() {
            let pairs = diagonal_pairs(&self.grid, a);
            pairs.iter().map(|(x, y)| g(self.pair_kernel(x, y))).sum::<f64>() / pairs.len() as f64
        } else {
            g(self.pair_kernel(&nodes[a], &nodes[b]))
        }
    }

    fn operators(&self) -> &GridOperators {
        self.operators.get_or_init(|| {
            let n = self.grid.len();
            let nodes = self.grid.nodes();
            let mut field = vec![0.0; n];
            for k in self.terms.iter().filter(|k| k.order == 1) {
                for (f, x) in field.iter_mut().zip(nodes) {
                    *f += k.field_value(&self.grid, x);
                }
            }
            if let Some(u) = &self.tilt {
                for (f, v) in field.iter_mut().zip(u) {
                    *f += v;
                }
            }
            let pair = self.terms.iter().any(|k| k.order == 2).then(|| {
                let mut m = vec![0.0; n * n];
                for a in 0..n {
                    for b in a..n {
                        let v = self.pair_cell_value(a, b, |w| w);
                        m[a * n + b] = v;
                        m[b * n + a] = v;
                    }
                }
                m
            });
            let triple = self
                .terms
                .iter()
                .filter(|k| k.order == 3)
                .map(|k| match &k.form {
                    KernelForm::Constant(c) => TripleTerm::Constant(k.clip(k.coefficient * c)),
                    KernelForm::Tabulated(t) => {
                        TripleTerm::Table(t.iter().map(|v| k.clip(k.coefficient * v)).collect())
                    }
                    _ => unreachable!("validated at construction"),
                })
                .collect();
            GridOperators { field, pair, triple }
        })
    }

    /// Regularized pair matrix on the grid (row-major), if any pair term exists.
    pub fn pair_matrix(&self) -> Option<&[f64]> {
        self.operators().pair.as_deref()
    }

    /// One-body potential on the grid: order-1 kernels plus the tilt.
    pub fn field_values(&self) -> &[f64] {
        &self.operators().field
    }

    fn check_grid(&self, mu: &GridMeasure) {
        assert_eq!(
            mu.len(),
            self.grid.len(),
            "measure does not live on the Hamiltonian grid"
        );
    }

    /// Per-order macroscopic energies `(field, pair, triple)`.
    fn energy_parts(&self, mu: &GridMeasure) -> (f64, f64, f64) {
        self.check_grid(mu);
        let ops = self.operators();
        let m = mu.masses();
        let n = m.len();
        let field = dot(&ops.field, m);
        let pair = match &ops.pair {
            Some(mat) => quadratic(mat, m),
            None => 0.0,
        };
        let mut triple = 0.0;
        for t in &ops.triple {
            triple += match t {
                TripleTerm::Constant(c) => *c,
                TripleTerm::Table(tab) => {
                    let mut s = 0.0;
                    for a in 0..n {
                        if m[a] == 0.0 {
                            continue;
                        }
                        for b in 0..n {
                            if m[b] == 0.0 {
                                continue;
                            }
                            let row = &tab[(a * n + b) * n..(a * n + b + 1) * n];
                            s += m[a] * m[b] * dot(row, m);
                        }
                    }
                    s
                }
            };
        }
        (field, pair, triple)
    }

    /// First variation `δE/δμ` on the grid.
    pub fn potential(&self, mu: &GridMeasure) -> Vec<f64> {
        self.check_grid(mu);
        let ops = self.operators();
        let m = mu.masses();
        let n = m.len();
        let mut pot = ops.field.clone();
        if let Some(mat) = &ops.pair {
            for (a, p) in pot.iter_mut().enumerate() {
                *p += 2.0 * dot(&mat[a * n..(a + 1) * n], m);
            }
        }
        for t in &ops.triple {
            match t {
                TripleTerm::Constant(c) => pot.iter_mut().for_each(|p| *p += 3.0 * c),
                TripleTerm::Table(tab) => {
                    for (a, p) in pot.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for b in 0..n {
                            if m[b] == 0.0 {
                                continue;
                            }
                            s += m[b] * dot(&tab[(a * n + b) * n..(a * n + b + 1) * n], m);
                        }
                        *p += 3.0 * s;
                    }
                }
            }
        }
        pot
    }

    /// `H^(N)` of the configuration placing particle `i` in cell `cells[i]`,
    /// with kernels replaced by their grid values.
    pub fn tuple_energy(&self, cells: &[usize]) -> f64 {
        let ops = self.operators();
        let n = self.grid.len();
        let nn = cells.len() as f64;
        let mut h: f64 = cells.iter().map(|&c| ops.field[c]).sum();
        if let Some(mat) = &ops.pair {
            let mut s = 0.0;
            for (i, &a) in cells.iter().enumerate() {
                for &b in &cells[i + 1..] {
                    s += mat[a * n + b];
                }
            }
            h += 2.0 * s / nn;
        }
        for t in &ops.triple {
            let mut s = 0.0;
            for i in 0..cells.len() {
                for j in i + 1..cells.len() {
                    for l in j + 1..cells.len() {
                        s += match t {
                            TripleTerm::Constant(v) => *v,
                            TripleTerm::Table(tab) => tab[(cells[i] * n + cells[j]) * n + cells[l]],
                        };
                    }
                }
            }
            h += 6.0 * s / (nn * nn);
        }
        h
    }

    /// `H^(N)` of any configuration with cell occupation `counts`, for
    /// kernels that are constant on cells (finite sets, tabulated kernels).
    ///
    /// ```text
    /// pair:   (1/N)  (Σ_{a,b} n_a n_b W_ab − Σ_a n_a W_aa)
    /// triple: (1/N²) (Σ n_a n_b n_c T_abc − 3 Σ n_a n_c T_aac + 2 Σ n_a T_aaa)
    /// ```
    ///
    /// with `0·∞ = 0`, so a singular diagonal only counts for doubly occupied cells.
    pub fn type_energy(&self, counts: &[u32]) -> f64 {
        let ops = self.operators();
        let n = counts.len();
        assert_eq!(n, self.grid.len(), "type vector does not match the grid");
        let nn: f64 = counts.iter().map(|&c| c as f64).sum();
        let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
        let mut h = dot(&ops.field, &c);
        if let Some(mat) = &ops.pair {
            let mut s = 0.0;
            for a in 0..n {
                if counts[a] == 0 {
                    continue;
                }
                for b in 0..n {
                    let pairs = if a == b { c[a] * (c[a] - 1.0) } else { c[a] * c[b] };
                    if pairs > 0.0 {
                        s += pairs * mat[a * n + b];
                    }
                }
            }
            h += s / nn;
        }
        for t in &ops.triple {
            h += match t {
                TripleTerm::Constant(v) => v * nn * (nn - 1.0) * (nn - 2.0) / (nn * nn),
                TripleTerm::Table(tab) => {
                    let idx = |a: usize, b: usize, d: usize| (a * n + b) * n + d;
                    let mut full = 0.0;
                    let mut once = 0.0;
                    let mut diag = 0.0;
                    for a in 0..n {
                        if counts[a] == 0 {
                            continue;
                        }
                        diag += c[a] * tab[idx(a, a, a)];
                        for b in 0..n {
                            if counts[b] == 0 {
                                continue;
                            }
                            once += c[a] * c[b] * tab[idx(a, a, b)];
                            full += c[a] * c[b] * dot(&tab[idx(a, b, 0)..idx(a, b, 0) + n], &c);
                        }
                    }
                    (full - 3.0 * once + 2.0 * diag) / (nn * nn)
                }
            };
        }
        h
    }
}

fn symmetrize(t: &mut [f64], n: usize, order: usize) {
    match order {
        2 => {
            for a in 0..n {
                for b in a + 1..n {
                    let v = 0.5 * (t[a * n + b] + t[b * n + a]);
                    t[a * n + b] = v;
                    t[b * n + a] = v;
                }
            }
        }
        3 => {
            let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
            for a in 0..n {
                for b in a..n {
                    for c in b..n {
                        let perms = [
                            idx(a, b, c),
                            idx(a, c, b),
                            idx(b, a, c),
                            idx(b, c, a),
                            idx(c, a, b),
                            idx(c, b, a),
                        ];
                        let mean = perms.iter().map(|&i| t[i]).sum::<f64>() / 6.0;
                        for i in perms {
                            t[i] = mean;
                        }
                    }
                }
            }
        }
        _ => {}
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quadratic(mat: &[f64], m: &[f64]) -> f64 {
    let n = m.len();
    let mut s = 0.0;
    for a in 0..n {
        if m[a] != 0.0 {
            s += m[a] * dot(&mat[a * n..(a + 1) * n], m);
        }
    }
    s
}

/// An ordered list of `N ≥ 1` points (a microstate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    points: Vec<Point>,
}

impl Configuration {
    pub fn new(space: &StateSpace, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return config("a configuration needs at least one point");
        }
        if let Some(p) = points.iter().find(|p| !space.contains(p)) {
            return domain(format!("configuration point {p:?} is outside the space"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn set(&mut self, i: usize, x: Point) {
        self.points[i] = x;
    }
}

/// `H^(N)(config)`, `+∞` when a singular kernel sees coincident points.
pub fn hamiltonian(spec: &HamiltonianSpec, config: &Configuration) -> f64 {
    let pts = config.points();
    let n = pts.len();
    let nf = n as f64;
    let grid = spec.grid();
    let space = spec.space();
    let mut h = 0.0;
    for k in spec.terms() {
        match k.order {
            1 => h += pts.iter().map(|x| k.field_value(grid, x)).sum::<f64>(),
            2 => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        s += k.pair_value(space, grid, &pts[i], &pts[j]);
                    }
                }
                h += 2.0 * s / nf;
            }
            _ => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        for l in j + 1..n {
                            s += k.triple_value(grid, &pts[i], &pts[j], &pts[l]);
                        }
                    }
                }
                h += 6.0 * s / (nf * nf);
            }
        }
        if h == f64::INFINITY {
            return h;
        }
    }
    if let Some(u) = spec.tilt() {
        h += pts.iter().map(|x| u[grid.locate(x)]).sum::<f64>();
    }
    h
}

/// `H(config with x_i ← x_new) − H(config)` in `O(N)` per pair term.
///
/// A singular hit at the new position gives `+∞`; leaving a singular
/// configuration for a regular one gives `−∞`.
pub fn move_delta(spec: &HamiltonianSpec, config: &Configuration, i: usize, x_new: &Point) -> f64 {
    let pts = config.points();
    let old = pts[i];
    if old == *x_new {
        return 0.0;
    }
    let n = pts.len();
    let nf = n as f64;
    let grid = spec.grid();
    let space = spec.space();
    let mut delta = 0.0;
    let mut left_singular = false;
    for k in spec.terms() {
        match k.order {
            1 => delta += k.field_value(grid, x_new) - k.field_value(grid, &old),
            2 => {
                let (mut s_new, mut s_old) = (0.0, 0.0);
                for (j, y) in pts.iter().enumerate() {
                    if j != i {
                        s_new += k.pair_value(space, grid, x_new, y);
                        s_old += k.pair_value(space, grid, &old, y);
                    }
                }
                if s_new == f64::INFINITY {
                    return f64::INFINITY;
                }
                if s_old == f64::INFINITY {
                    left_singular = true;
                } else {
                    delta += 2.0 * (s_new - s_old) / nf;
                }
            }
            _ => {
                let mut s = 0.0;
                for j in 0..n {
                    for l in j + 1..n {
                        if j != i && l != i {
                            s += k.triple_value(grid, x_new, &pts[j], &pts[l])
                                - k.triple_value(grid, &old, &pts[j], &pts[l]);
                        }
                    }
                }
                delta += 6.0 * s / (nf * nf);
            }
        }
    }
    if left_singular {
        return f64::NEG_INFINITY;
    }
    if let Some(u) = spec.tilt() {
        delta += u[grid.locate(x_new)] - u[grid.locate(&old)];
    }
    delta
}

/// `E(μ) = Σ_m ∫ W_m μ^{⊗m} + ∫ u dμ` by tensor quadrature.
pub fn macroscopic_energy(spec: &HamiltonianSpec, mu: &GridMeasure) -> f64 {
    let (f, p, t) = spec.energy_parts(mu);
    f + p + t
}

/// `E^(N)(μ^{⊗N}) = (1/N) ∫ H^(N) dμ^{⊗N}` in closed form.
pub fn product_mean_energy(spec: &HamiltonianSpec, mu: &GridMeasure, n: usize) -> Result<f64> {
    if n < spec.max_order().max(1) {
        return config(format!("N = {n} is smaller than the kernel order {}", spec.max_order()));
    }
    let nf = n as f64;
    let (f, p, t) = spec.energy_parts(mu);
    Ok(f + p * (nf - 1.0) / nf + t * (nf - 1.0) * (nf - 2.0) / (nf * nf))
}

/// Adds `Σ_i u(x_i)` to `H^(N)`, i.e. the linear tilt `∫ u dμ` macroscopically.
pub fn tilted(spec: &HamiltonianSpec, u: &[f64]) -> Result<HamiltonianSpec> {
    if u.len() != spec.grid().len() || u.iter().any(|v| !v.is_finite()) {
        return config(format!("tilt needs {} finite grid values", spec.grid().len()));
    }
    let combined = match &spec.tilt {
        Some(old) => old.iter().zip(u).map(|(a, b)| a + b).collect(),
        None => u.to_vec(),
    };
    Ok(HamiltonianSpec {
        grid: spec.grid.clone(),
        terms: spec.terms.clone(),
        tilt: Some(combined),
        operators: Arc::new(OnceLock::new()),
    })
}

/// Incremental energy bookkeeping for single-particle moves.
///
/// Cosine and tabulated pair terms keep collective sums (`Σ cos θ_j`,
/// `Σ sin θ_j`, cell counts) so their deltas cost `O(1)` or `O(cells)`;
/// other pair terms fall back to the `O(N)` scan of [`move_delta`].
#[derive(Clone, Debug)]
pub struct EnergyTracker {
    caches: Vec<TermCache>,
}

#[derive(Clone, Debug)]
enum TermCache {
    Field,
    Constant,
    Cosine { c: f64, s: f64 },
    Counts(Vec<u32>),
    Scan,
}

impl EnergyTracker {
    pub fn new(spec: &HamiltonianSpec, config: &Configuration) -> Self {
        let grid = spec.grid();
        let caches = spec
            .terms()
            .iter()
            .map(|k| match (k.order, &k.form, k.truncation) {
                (1, _, _) => TermCache::Field,
                (2, KernelForm::Constant(_), None) => TermCache::Constant,
                (2, KernelForm::Cosine, None) => {
                    let (mut c, mut s) = (0.0, 0.0);
                    for x in config.points() {
                        let a = x.angle().unwrap_or(f64::NAN);
                        c += a.cos();
                        s += a.sin();
                    }
                    TermCache::Cosine { c, s }
                }
                (2, KernelForm::Tabulated(_), _) => {
                    let mut counts = vec![0u32; grid.len()];
                    for x in config.points() {
                        counts[grid.locate(x)] += 1;
                    }
                    TermCache::Counts(counts)
                }
                _ => TermCache::Scan,
            })
            .collect();
        Self { caches }
    }

    /// Same contract as [`move_delta`].
    pub fn delta(&self, spec: &HamiltonianSpec, config: &Configuration, i: usize, x_new: &Point) -> f64 {
        if self.caches.iter().all(|c| matches!(c, TermCache::Scan)) {
            return move_delta(spec, config, i, x_new);
        }
        let pts = config.points();
        let old = pts[i];
        if old == *x_new {
            return 0.0;
        }
        let n = pts.len();
        let nf = n as f64;
        let grid = spec.grid();
        let space = spec.space();
        let mut delta = 0.0;
        let mut left_singular = false;
        for (k, cache) in spec.terms().iter().zip(&self.caches) {
            match cache {
                TermCache::Field => delta += k.field_value(grid, x_new) - k.field_value(grid, &old),
                TermCache::Constant => {}
                TermCache::Cosine { c, s } => {
                    let a_old = old.angle().unwrap_or(f64::NAN);
                    let a_new = x_new.angle().unwrap_or(f64::NAN);
                    let (c_rest, s_rest) = (c - a_old.cos(), s - a_old.sin());
                    let s_new = a_new.cos() * c_rest + a_new.sin() * s_rest;
                    let s_old = a_old.cos() * c_rest + a_old.sin() * s_rest;
                    delta += 2.0 * k.coefficient * (s_new - s_old) / nf;
                }
                TermCache::Counts(counts) => {
                    let (ca, cb) = (grid.locate(x_new), grid.locate(&old));
                    let mut s = 0.0;
                    for (cell, &cnt) in counts.iter().enumerate() {
                        let mut cnt = cnt as f64;
                        if cell == cb {
                            cnt -= 1.0;
                        }
                        if cnt != 0.0 {
                            let t = match &k.form {
                                KernelForm::Tabulated(t) => t,
                                _ => unreachable!(),
                            };
                            let n_cells = grid.len();
                            let w = |a: usize| k.clip(k.coefficient * t[a * n_cells + cell]);
                            s += cnt * (w(ca) - w(cb));
                        }
                    }
                    delta += 2.0 * s / nf;
                }
                TermCache::Scan => {
                    if k.order == 2 {
                        let (mut s_new, mut s_old) = (0.0, 0.0);
                        for (j, y) in pts.iter().enumerate() {
                            if j != i {
                                s_new += k.pair_value(space, grid, x_new, y);
                                s_old += k.pair_value(space, grid, &old, y);
                            }
                        }
                        if s_new == f64::INFINITY {
                            return f64::INFINITY;
                        }
                        if s_old == f64::INFINITY {
                            left_singular = true;
                        } else {
                            delta += 2.0 * (s_new - s_old) / nf;
                        }
                    } else {
                        let mut s = 0.0;
                        for j in 0..n {
                            for l in j + 1..n {
                                if j != i && l != i {
                                    s += k.triple_value(grid, x_new, &pts[j], &pts[l])
                                        - k.triple_value(grid, &old, &pts[j], &pts[l]);
                                }
                            }
                        }
                        delta += 6.0 * s / (nf * nf);
                    }
                }
            }
        }
        if left_singular {
            return f64::NEG_INFINITY;
        }
        if let Some(u) = spec.tilt() {
            delta += u[grid.locate(x_new)] - u[grid.locate(&old)];
        }
        delta
    }

    /// Record the move `x_i ← x_new` in the caches (call before mutating `config`).
    pub fn commit(&mut self, spec: &HamiltonianSpec, config: &Configuration, i: usize, x_new: &Point) {
        let old = config.points()[i];
        let grid = spec.grid();
        for cache in &mut self.caches {
            match cache {
                TermCache::Cosine { c, s } => {
                    let (a_old, a_new) = (old.angle().unwrap_or(0.0), x_new.angle().unwrap_or(0.0));
                    *c += a_new.cos() - a_old.cos();
                    *s += a_new.sin() - a_old.sin();
                }
                TermCache::Counts(counts) => {
                    counts[grid.locate(&old)] -= 1;
                    counts[grid.locate(x_new)] += 1;
                }
                _ => {}
            }
        }
    }
}

/// Mean-field order parameter `|∫ e^{iθ} dμ|` of a circle grid measure.
pub fn order_parameter(grid: &QuadratureGrid, mu: &GridMeasure) -> Option<f64> {
    let mut c = 0.0;
    let mut s = 0.0;
    for (x, m) in grid.nodes().iter().zip(mu.masses()) {
        let a = x.angle()?;
        c += m * a.cos();
        s += m * a.sin();
    }
    Some(c.hypot(s))
}

/// `|(1/N) Σ e^{iθ_j}|` of a circle configuration.
pub fn configuration_order_parameter(config: &Configuration) -> Option<f64> {
    let mut c = 0.0;
    let mut s = 0.0;
    for x in config.points() {
        let a = x.angle()?;
        c += a.cos();
        s += a.sin();
    }
    Some(c.hypot(s) / config.len() as f64)
}

/// `1 − log π`: log-energy of the uniform measure on the circle under arc length.
pub const CIRCLE_ARC_LOG_ENERGY: f64 = -0.144_729_885_849_400_2;
