//! The chaotic maps under study, trajectory generation over the invariant
//! measure, and Lyapunov-based metric-entropy oracles.
//!
//! Three discrete-time maps are supported:
//!
//! - logistic: `x' = r x (1 - x)` on the unit interval,
//! - Hénon: `x' = 1 - a x² + b y`, `y' = x`,
//! - Ikeda: `φ = κ - η / (1 + x² + y²)`,
//!   `x' = a + b (x cos φ - y sin φ)`, `y' = b (x sin φ + y cos φ)`.
//!
//! All map arithmetic is 64-bit: symbol sequences downstream feed entropy
//! estimators that are sensitive to tiny boundary shifts, so trajectory
//! statistics must not drift with the build.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

/// Any coordinate exceeding this magnitude counts as divergence; the three
/// attractors are bounded well below it.
pub const ESCAPE_THRESHOLD: f64 = 1e6;

/// Default number of discarded iterations before sampling the invariant
/// measure.
pub const DEFAULT_BURN_IN: usize = 1000;

const LN_2: f64 = std::f64::consts::LN_2;

/// A point in state space, dimension 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    coords: [f64; 2],
    dim: u8,
}

impl State {
    pub fn new_1d(x: f64) -> Self {
        State { coords: [x, 0.0], dim: 1 }
    }

    pub fn new_2d(x: f64, y: f64) -> Self {
        State { coords: [x, y], dim: 2 }
    }

    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        match coords {
            [x] => Ok(State::new_1d(*x)),
            [x, y] => Ok(State::new_2d(*x, *y)),
            _ => Err(Error::contract(format!(
                "state dimension must be 1 or 2, got {}",
                coords.len()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    /// Second coordinate; zero for one-dimensional states.
    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    fn max_abs(&self) -> f64 {
        self.coords().iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            1 => write!(f, "({})", self.coords[0]),
            _ => write!(f, "({}, {})", self.coords[0], self.coords[1]),
        }
    }
}

/// One of the three parameterized chaotic maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MapSpec {
    Logistic { r: f64 },
    Henon { a: f64, b: f64 },
    Ikeda { a: f64, b: f64, kappa: f64, eta: f64 },
}

impl MapSpec {
    /// Logistic map with parameter `r`; requires `0 < r <= 4` so the unit
    /// interval maps into itself.
    pub fn logistic(r: f64) -> Result<Self> {
        let m = MapSpec::Logistic { r };
        m.validate()?;
        Ok(m)
    }

    /// Hénon map; `b != 0` keeps the map invertible.
    pub fn henon(a: f64, b: f64) -> Result<Self> {
        let m = MapSpec::Henon { a, b };
        m.validate()?;
        Ok(m)
    }

    /// Ikeda map; `b != 0` keeps the map invertible.
    pub fn ikeda(a: f64, b: f64, kappa: f64, eta: f64) -> Result<Self> {
        let m = MapSpec::Ikeda { a, b, kappa, eta };
        m.validate()?;
        Ok(m)
    }

    /// The standard chaotic parameter sets.
    pub fn logistic_r4() -> Self {
        MapSpec::Logistic { r: 4.0 }
    }

    pub fn logistic_chaotic() -> Self {
        MapSpec::Logistic { r: 3.7115 }
    }

    pub fn henon_standard() -> Self {
        MapSpec::Henon { a: 1.4, b: 0.3 }
    }

    pub fn ikeda_standard() -> Self {
        MapSpec::Ikeda { a: 1.0, b: 0.9, kappa: 0.4, eta: 6.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MapSpec::Logistic { r } => {
                if !(r > 0.0 && r <= 4.0) {
                    return Err(Error::contract(format!(
                        "logistic map requires 0 < r <= 4, got r = {r}"
                    )));
                }
            }
            MapSpec::Henon { a, b } => {
                if !a.is_finite() || !b.is_finite() || b == 0.0 {
                    return Err(Error::contract(format!(
                        "henon map requires finite parameters and b != 0, got a = {a}, b = {b}"
                    )));
                }
            }
            MapSpec::Ikeda { a, b, kappa, eta } => {
                if ![a, b, kappa, eta].iter().all(|p| p.is_finite()) || b == 0.0 {
                    return Err(Error::contract(format!(
                        "ikeda map requires finite parameters and b != 0, got a = {a}, b = {b}, kappa = {kappa}, eta = {eta}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSpec::Logistic { .. } => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapSpec::Logistic { .. } => "logistic",
            MapSpec::Henon { .. } => "henon",
            MapSpec::Ikeda { .. } => "ikeda",
        }
    }

    /// Default initial condition, chosen inside the standard basin of
    /// attraction: logistic 0.3, Hénon (0.1, 0.1), Ikeda (0.1, 0.0).
    pub fn default_x0(&self) -> State {
        match self {
            MapSpec::Logistic { .. } => State::new_1d(0.3),
            MapSpec::Henon { .. } => State::new_2d(0.1, 0.1),
            MapSpec::Ikeda { .. } => State::new_2d(0.1, 0.0),
        }
    }

    /// Deterministically jittered initial condition: the default plus a
    /// small seeded perturbation, so independent datasets sample independent
    /// stretches of the invariant measure while staying in the basin.
    pub fn seeded_x0(&self, seed: u64) -> State {
        let mut rng = stream(seed, "initial-condition", 0);
        let jitter = 1e-3f64;
        match self {
            MapSpec::Logistic { .. } => {
                let x: f64 = 0.3 + rng.gen_range(-jitter..=jitter);
                State::new_1d(x.clamp(0.05, 0.95))
            }
            MapSpec::Henon { .. } => State::new_2d(
                0.1 + rng.gen_range(-jitter..=jitter),
                0.1 + rng.gen_range(-jitter..=jitter),
            ),
            MapSpec::Ikeda { .. } => State::new_2d(
                0.1 + rng.gen_range(-jitter..=jitter),
                rng.gen_range(-jitter..=jitter),
            ),
        }
    }

    fn check_input(&self, x: &State) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::contract(format!(
                "state dimension {} does not match {} map dimension {}",
                x.dim(),
                self.name(),
                self.dim()
            )));
        }
        if !x.is_finite() {
            return Err(Error::InvalidState(format!(
                "non-finite state {x} passed to {} map",
                self.name()
            )));
        }
        Ok(())
    }

    #[inline]
    fn step_raw(&self, c: [f64; 2]) -> [f64; 2] {
        match *self {
            MapSpec::Logistic { r } => [r * c[0] * (1.0 - c[0]), 0.0],
            MapSpec::Henon { a, b } => [1.0 - a * c[0] * c[0] + b * c[1], c[0]],
            MapSpec::Ikeda { a, b, kappa, eta } => {
                let (x, y) = (c[0], c[1]);
                let phi = kappa - eta / (1.0 + x * x + y * y);
                let (sin, cos) = phi.sin_cos();
                [a + b * (x * cos - y * sin), b * (x * sin + y * cos)]
            }
        }
    }

    /// One forward iteration.
    pub fn step(&self, x: &State) -> Result<State> {
        self.check_input(x)?;
        let c = self.step_raw(x.coords);
        Ok(State { coords: c, dim: self.dim() as u8 })
    }

    #[inline]
    fn jacobian_raw(&self, c: [f64; 2]) -> [[f64; 2]; 2] {
        match *self {
            MapSpec::Logistic { r } => [[r * (1.0 - 2.0 * c[0]), 0.0], [0.0, 0.0]],
            MapSpec::Henon { a, b } => [[-2.0 * a * c[0], b], [1.0, 0.0]],
            MapSpec::Ikeda { b, eta, kappa, .. } => {
                let (x, y) = (c[0], c[1]);
                let s = 1.0 + x * x + y * y;
                let phi = kappa - eta / s;
                let (sin, cos) = phi.sin_cos();
                // dphi/dx = 2 eta x / s^2, dphi/dy = 2 eta y / s^2
                let phi_x = 2.0 * eta * x / (s * s);
                let phi_y = 2.0 * eta * y / (s * s);
                let u = -x * sin - y * cos; // d/dphi of (x cos - y sin)
                let v = x * cos - y * sin; // d/dphi of (x sin + y cos)
                [
                    [b * (cos + u * phi_x), b * (-sin + u * phi_y)],
                    [b * (sin + v * phi_x), b * (cos + v * phi_y)],
                ]
            }
        }
    }

    /// Exact analytic Jacobian of the map at `x` (d×d).
    pub fn jacobian(&self, x: &State) -> Result<Jacobian> {
        self.check_input(x)?;
        Ok(Jacobian { m: self.jacobian_raw(x.coords), dim: self.dim() as u8 })
    }
}

impl fmt::Display for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapSpec::Logistic { r } => write!(f, "logistic(r={r})"),
            MapSpec::Henon { a, b } => write!(f, "henon(a={a}, b={b})"),
            MapSpec::Ikeda { a, b, kappa, eta } => {
                write!(f, "ikeda(a={a}, b={b}, kappa={kappa}, eta={eta})")
            }
        }
    }
}

/// Analytic Jacobian matrix, d×d with d in {1, 2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian {
    m: [[f64; 2]; 2],
    dim: u8,
}

impl Jacobian {
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.dim(), "jacobian row out of range");
        assert!(col < self.dim(), "jacobian col out of range");
        self.m[row][col]
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.m[0][0],
            _ => self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0],
        }
    }
}

/// A finite trajectory sampled after burn-in; states are stored row-major.
#[derive(Debug, Clone)]
pub struct Trajectory {
    data: Vec<f64>,
    dim: usize,
    map: MapSpec,
    x0: State,
    seed: u64,
    burn_in: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn map(&self) -> &MapSpec {
        &self.map
    }

    pub fn x0(&self) -> State {
        self.x0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn state(&self, i: usize) -> State {
        let at = i * self.dim;
        match self.dim {
            1 => State::new_1d(self.data[at]),
            _ => State::new_2d(self.data[at], self.data[at + 1]),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// Raw coordinates of state `i` (length = dim).
    pub fn coords(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major coordinate buffer.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Export as little-endian f64, row-major (n × d), with a plain-text
    /// sidecar header `<path>.meta` recording how to regenerate it.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        crate::artifacts::write_atomic(path, &buf)?;

        let mut meta = String::new();
        meta.push_str("format=symgen-trajectory-v1\n");
        meta.push_str(&format!("map={}\n", self.map.name()));
        match self.map {
            MapSpec::Logistic { r } => meta.push_str(&format!("r={r:?}\n")),
            MapSpec::Henon { a, b } => meta.push_str(&format!("a={a:?}\nb={b:?}\n")),
            MapSpec::Ikeda { a, b, kappa, eta } => {
                meta.push_str(&format!("a={a:?}\nb={b:?}\nkappa={kappa:?}\neta={eta:?}\n"))
            }
        }
        meta.push_str(&format!("dim={}\n", self.dim));
        meta.push_str(&format!("n={}\n", self.len()));
        meta.push_str(&format!("burn_in={}\n", self.burn_in));
        meta.push_str(&format!("seed={}\n", self.seed));
        let x0 = self
            .x0
            .coords()
            .iter()
            .map(|c| format!("{c:?}"))
            .collect::<Vec<_>>()
            .join(",");
        meta.push_str(&format!("x0={x0}\n"));
        let meta_path = path.with_extension(match path.extension() {
            Some(e) => format!("{}.meta", e.to_string_lossy()),
            None => "meta".to_string(),
        });
        let mut f = std::fs::File::create(meta_path)?;
        f.write_all(meta.as_bytes())?;
        Ok(())
    }
}

/// Iterate `map` from `x0`, discard `burn_in` states, then record `n`.
///
/// Deterministic given `(x0, n, burn_in)`; the recorded states satisfy
/// `states[i+1] == step(states[i])` bit-exactly.
pub fn generate_trajectory(map: &MapSpec, x0: &State, n: usize, burn_in: usize) -> Result<Trajectory> {
    generate_trajectory_seeded(map, x0, n, burn_in, 0)
}

/// Like [`generate_trajectory`] but records the seed that chose `x0` so the
/// sidecar header can reproduce the run.
pub fn generate_trajectory_seeded(
    map: &MapSpec,
    x0: &State,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::contract("trajectory length must be >= 1"));
    }
    map.check_input(x0)?;
    let dim = map.dim();
    let mut c = x0.coords;
    for i in 0..burn_in {
        if c[0].abs().max(c[1].abs()) > ESCAPE_THRESHOLD {
            return Err(Error::Escape { iteration: i, threshold: ESCAPE_THRESHOLD });
        }
        c = map.step_raw(c);
    }
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        if c[0].abs().max(c[1].abs()) > ESCAPE_THRESHOLD {
            return Err(Error::Escape { iteration: burn_in + i, threshold: ESCAPE_THRESHOLD });
        }
        data.extend_from_slice(&c[..dim]);
        c = map.step_raw(c);
    }
    Ok(Trajectory { data, dim, map: *map, x0: *x0, seed, burn_in })
}

/// Generate a trajectory whose initial condition is derived from `seed`.
pub fn sample_trajectory(map: &MapSpec, n: usize, burn_in: usize, seed: u64) -> Result<Trajectory> {
    let x0 = map.seeded_x0(seed);
    generate_trajectory_seeded(map, &x0, n, burn_in, seed)
}

/// The Lyapunov spectrum in bits/iteration, exponents descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub n_iterations: usize,
    /// Metric-entropy estimate: sum of the positive exponents.
    pub h_ks: f64,
}

/// Tangent-space iteration with Gram–Schmidt orthonormalization at every
/// step (cheap at d <= 2 and maximally stable). Log-stretch factors are
/// accumulated in nats and converted to bits at the end.
pub fn lyapunov_spectrum(map: &MapSpec, n: usize, seed: u64) -> Result<LyapunovSpectrum> {
    if n == 0 {
        return Err(Error::contract("lyapunov iteration count must be >= 1"));
    }
    let x0 = map.seeded_x0(seed);
    let mut c = x0.coords;
    for i in 0..DEFAULT_BURN_IN {
        if c[0].abs().max(c[1].abs()) > ESCAPE_THRESHOLD {
            return Err(Error::Escape { iteration: i, threshold: ESCAPE_THRESHOLD });
        }
        c = map.step_raw(c);
    }

    let dim = map.dim();
    let mut sums = [0.0f64; 2];
    if dim == 1 {
        for i in 0..n {
            if c[0].abs() > ESCAPE_THRESHOLD {
                return Err(Error::Escape {
                    iteration: DEFAULT_BURN_IN + i,
                    threshold: ESCAPE_THRESHOLD,
                });
            }
            let d = self_jac_1d(map, c[0]);
            sums[0] += d.abs().max(f64::MIN_POSITIVE).ln();
            c = map.step_raw(c);
        }
    } else {
        // Two tangent vectors, columns of q.
        let mut q = [[1.0f64, 0.0], [0.0, 1.0]]; // q[col][row]
        for i in 0..n {
            if c[0].abs().max(c[1].abs()) > ESCAPE_THRESHOLD {
                return Err(Error::Escape {
                    iteration: DEFAULT_BURN_IN + i,
                    threshold: ESCAPE_THRESHOLD,
                });
            }
            let j = map.jacobian_raw(c);
            let mut v0 = [
                j[0][0] * q[0][0] + j[0][1] * q[0][1],
                j[1][0] * q[0][0] + j[1][1] * q[0][1],
            ];
            let mut v1 = [
                j[0][0] * q[1][0] + j[0][1] * q[1][1],
                j[1][0] * q[1][0] + j[1][1] * q[1][1],
            ];
            let r0 = (v0[0] * v0[0] + v0[1] * v0[1]).sqrt();
            v0[0] /= r0;
            v0[1] /= r0;
            let proj = v0[0] * v1[0] + v0[1] * v1[1];
            v1[0] -= proj * v0[0];
            v1[1] -= proj * v0[1];
            let r1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
            v1[0] /= r1;
            v1[1] /= r1;
            sums[0] += r0.max(f64::MIN_POSITIVE).ln();
            sums[1] += r1.max(f64::MIN_POSITIVE).ln();
            q = [v0, v1];
            c = map.step_raw(c);
        }
    }

    let mut exponents: Vec<f64> = (0..dim).map(|k| sums[k] / n as f64 / LN_2).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let h_ks = exponents.iter().filter(|&&e| e > 0.0).sum();
    Ok(LyapunovSpectrum { exponents, n_iterations: n, h_ks })
}

fn self_jac_1d(map: &MapSpec, x: f64) -> f64 {
    map.jacobian_raw([x, 0.0])[0][0]
}
