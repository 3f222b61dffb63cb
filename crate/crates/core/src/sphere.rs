//! Velocity-sphere and energy discretization.
//!
//! The sphere is a tensor product of a half-range Gauss-Legendre rule in
//! `mu = omega_x` on each hemisphere and a uniform azimuth ring in
//! `psi`, with `omega_y = s cos(psi)`, `omega_z = s sin(psi)` and
//! `s = sqrt(1 - mu^2)`. Nodes are enumerated hemisphere first (`sigma = -1`
//! then `sigma = +1`), then `|mu|` ascending, then azimuth.

use crate::azimuth::Circulant;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_interval;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Hemisphere sign of `omega_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    Minus,
    Plus,
}

impl Hemisphere {
    pub fn sign(self) -> f64 {
        match self {
            Hemisphere::Minus => -1.0,
            Hemisphere::Plus => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Hemisphere::Minus => 0,
            Hemisphere::Plus => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Hemisphere::Minus => Hemisphere::Plus,
            Hemisphere::Plus => Hemisphere::Minus,
        }
    }

    pub const BOTH: [Hemisphere; 2] = [Hemisphere::Minus, Hemisphere::Plus];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    /// `|omega_x|` nodes of the half-range rule, ascending, in `(0, 1)`.
    mu_abs: Vec<f64>,
    /// Half-range weights, summing to 1.
    mu_weights: Vec<f64>,
    n_phi: usize,
}

impl SphereGrid {
    pub fn new(n_mu_per_hemisphere: usize, n_phi: usize) -> Result<Self> {
        if n_mu_per_hemisphere < 2 || !n_mu_per_hemisphere.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_mu_per_hemisphere must be a positive even integer >= 2, got {n_mu_per_hemisphere}"
            )));
        }
        if n_phi < 4 || !n_phi.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_phi must be an even integer >= 4, got {n_phi}"
            )));
        }
        let (mu_abs, mu_weights) = gauss_legendre_interval(n_mu_per_hemisphere, 0.0, 1.0);
        Ok(SphereGrid {
            mu_abs,
            mu_weights,
            n_phi,
        })
    }

    pub fn n_mu(&self) -> usize {
        self.mu_abs.len()
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    /// Nodes on one hemisphere.
    pub fn hemisphere_len(&self) -> usize {
        self.mu_abs.len() * self.n_phi
    }

    pub fn len(&self) -> usize {
        2 * self.hemisphere_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mu_abs(&self) -> &[f64] {
        &self.mu_abs
    }

    pub fn mu_weights(&self) -> &[f64] {
        &self.mu_weights
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_phi as f64
    }

    pub fn phi_weight(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    pub fn index(&self, hemi: Hemisphere, i: usize, k: usize) -> usize {
        (hemi.index() * self.mu_abs.len() + i) * self.n_phi + k
    }

    /// Hemisphere-local index of a node.
    pub fn local(&self, i: usize, k: usize) -> usize {
        i * self.n_phi + k
    }

    pub fn split(&self, idx: usize) -> (Hemisphere, usize, usize) {
        let k = idx % self.n_phi;
        let ring = idx / self.n_phi;
        let n_mu = self.mu_abs.len();
        let hemi = if ring < n_mu {
            Hemisphere::Minus
        } else {
            Hemisphere::Plus
        };
        (hemi, ring % n_mu, k)
    }

    pub fn omega(&self, hemi: Hemisphere, i: usize, k: usize) -> [f64; 3] {
        let mu = hemi.sign() * self.mu_abs[i];
        let s = (1.0 - self.mu_abs[i] * self.mu_abs[i]).sqrt();
        let p = self.phi(k);
        [mu, s * p.cos(), s * p.sin()]
    }

    pub fn omega_at(&self, idx: usize) -> [f64; 3] {
        let (h, i, k) = self.split(idx);
        self.omega(h, i, k)
    }

    /// Surface weight of a node (same on both hemispheres).
    pub fn weight(&self, i: usize) -> f64 {
        self.mu_weights[i] * self.phi_weight()
    }

    pub fn weight_at(&self, idx: usize) -> f64 {
        let (_, i, _) = self.split(idx);
        self.weight(i)
    }

    /// `|omega_x| dw` weights of one hemisphere in local order.
    pub fn flux_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.hemisphere_len());
        for i in 0..self.n_mu() {
            for _ in 0..self.n_phi {
                w.push(self.mu_abs[i] * self.weight(i));
            }
        }
        w
    }

    /// Surface weights of one hemisphere in local order.
    pub fn hemisphere_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.hemisphere_len());
        for i in 0..self.n_mu() {
            for _ in 0..self.n_phi {
                w.push(self.weight(i));
            }
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|idx| self.weight_at(idx)).collect()
    }

    /// Sample a function of `omega` at every node.
    pub fn sample<F: Fn([f64; 3]) -> f64>(&self, f: F) -> SphereFunction {
        SphereFunction {
            values: (0..self.len()).map(|idx| f(self.omega_at(idx))).collect(),
        }
    }

    /// Sample a function of `omega` on one hemisphere, local order.
    pub fn sample_hemisphere<F: Fn([f64; 3]) -> f64>(&self, hemi: Hemisphere, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.hemisphere_len());
        for i in 0..self.n_mu() {
            for k in 0..self.n_phi {
                out.push(f(self.omega(hemi, i, k)));
            }
        }
        out
    }
}

/// Values of a function on the nodes of a [`SphereGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFunction {
    pub values: Vec<f64>,
}

impl SphereFunction {
    pub fn new(values: Vec<f64>) -> Self {
        SphereFunction { values }
    }

    pub fn constant(grid: &SphereGrid, c: f64) -> Self {
        SphereFunction {
            values: vec![c; grid.len()],
        }
    }

    fn check(&self, grid: &SphereGrid) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "sphere function has {} values, grid has {} nodes",
                self.values.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn hemisphere(&self, grid: &SphereGrid, hemi: Hemisphere) -> &[f64] {
        let n = grid.hemisphere_len();
        let start = hemi.index() * n;
        &self.values[start..start + n]
    }

    /// Azimuthal Fourier coefficients per ring (`2 * n_mu` rings, each of
    /// length `n_phi`, FFT ordering, normalized by `1 / n_phi`).
    pub fn spectral(&self, grid: &SphereGrid) -> Result<Vec<Vec<Complex64>>> {
        self.check(grid)?;
        let n = grid.n_phi();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        Ok(self
            .values
            .chunks(n)
            .map(|ring| {
                let mut buf: Vec<Complex64> = ring.iter().map(|v| Complex64::new(*v, 0.0)).collect();
                fft.process(&mut buf);
                buf.iter_mut().for_each(|c| *c /= n as f64);
                buf
            })
            .collect())
    }

    pub fn from_spectral(grid: &SphereGrid, rings: &[Vec<Complex64>]) -> Result<Self> {
        let n = grid.n_phi();
        if rings.len() != 2 * grid.n_mu() || rings.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("spectral layout does not match grid".into()));
        }
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut values = Vec::with_capacity(grid.len());
        for ring in rings {
            let mut buf = ring.clone();
            ifft.process(&mut buf);
            values.extend(buf.iter().map(|c| c.re));
        }
        Ok(SphereFunction { values })
    }

    pub fn mul(&self, other: &SphereFunction) -> SphereFunction {
        SphereFunction {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Quadrature of `f` over the unit sphere.
pub fn quad_sphere(f: &SphereFunction, grid: &SphereGrid) -> Result<f64> {
    f.check(grid)?;
    Ok(f.values
        .iter()
        .enumerate()
        .map(|(idx, v)| v * grid.weight_at(idx))
        .sum())
}

/// `f` composed with the rotation of `(omega_y, omega_z)` by `angle` about
/// the x-axis. Exact for band-limited `f`; `omega_x` is untouched.
pub fn rotate_about_x(f: &SphereFunction, grid: &SphereGrid, angle: f64) -> Result<SphereFunction> {
    f.check(grid)?;
    let rot = Circulant::rotation(grid.n_phi(), angle);
    let mut values = vec![0.0; f.values.len()];
    for (src, dst) in f.values.chunks(grid.n_phi()).zip(values.chunks_mut(grid.n_phi())) {
        rot.apply_into(src, dst);
    }
    Ok(SphereFunction { values })
}

/// Uniform energy grid on `[0, eps_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    edges: Vec<f64>,
    centers: Vec<f64>,
    /// `N(eps) = sqrt(2 eps)` at the cell centers.
    dos_center: Vec<f64>,
    /// Cell average of `N` over each cell.
    dos_mean: Vec<f64>,
}

impl EnergyGrid {
    pub fn uniform(n_cells: usize, eps_max: f64) -> Result<Self> {
        if n_cells == 0 || eps_max <= 0.0 || !eps_max.is_finite() {
            return Err(Error::Config(format!(
                "energy grid needs n_cells > 0 and eps_max > 0 (got {n_cells}, {eps_max})"
            )));
        }
        let d = eps_max / n_cells as f64;
        let edges: Vec<f64> = (0..=n_cells).map(|i| i as f64 * d).collect();
        Self::from_edges(edges)
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges[0] != 0.0 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "energy edges must start at 0 and be strictly increasing".into(),
            ));
        }
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let dos_center = centers.iter().map(|e| (2.0 * e).sqrt()).collect();
        let dos_mean = edges
            .windows(2)
            .map(|w| {
                let a = (2.0 * w[0]).powf(1.5);
                let b = (2.0 * w[1]).powf(1.5);
                (b - a) / (3.0 * (w[1] - w[0]))
            })
            .collect();
        Ok(EnergyGrid {
            edges,
            centers,
            dos_center,
            dos_mean,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self, l: usize) -> f64 {
        self.edges[l + 1] - self.edges[l]
    }

    pub fn eps_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn dos_center(&self) -> &[f64] {
        &self.dos_center
    }

    pub fn dos_mean(&self) -> &[f64] {
        &self.dos_mean
    }

    /// Density of states at an arbitrary energy.
    pub fn dos(eps: f64) -> f64 {
        (2.0 * eps.max(0.0)).sqrt()
    }

    /// Cell containing `eps`, if inside the grid.
    pub fn locate(&self, eps: f64) -> Option<usize> {
        if !(eps >= 0.0 && eps < self.eps_max()) {
            return None;
        }
        let l = match self.edges.binary_search_by(|e| e.partial_cmp(&eps).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Some(l.min(self.len() - 1))
    }
}

/// Coarea quadrature of `int phi(v) dv = int int phi N(eps) d eps d omega`.
/// `phi` is evaluated at cell centers; the density of states is integrated
/// exactly over each cell.
pub fn coarea_integrate<F: Fn(f64, [f64; 3]) -> f64>(
    phi: F,
    grid: &SphereGrid,
    egrid: &EnergyGrid,
) -> Result<f64> {
    if egrid.is_empty() {
        return Err(Error::Config("empty energy grid".into()));
    }
    let mut total = 0.0;
    for l in 0..egrid.len() {
        let eps = egrid.centers()[l];
        let shell = egrid.dos_mean()[l] * egrid.width(l);
        let mut ang = 0.0;
        for idx in 0..grid.len() {
            ang += phi(eps, grid.omega_at(idx)) * grid.weight_at(idx);
        }
        total += ang * shell;
    }
    Ok(total)
}

/// Cartesian velocity gradient of a function given in the spherical
/// parameterization `(|v|, omega_y, omega_z)` on a fixed hemisphere.
///
/// `partials` are `(df/d|v|, df/d omega_y, df/d omega_z)` at the point.
pub fn velocity_derivatives(partials: [f64; 3], speed: f64, omega: [f64; 3]) -> Result<[f64; 3]> {
    if speed <= 0.0 {
        return Err(Error::SingularPoint("|v| = 0".into()));
    }
    if omega[0] == 0.0 {
        return Err(Error::SingularPoint("omega_x = 0 (chart boundary)".into()));
    }
    let [fr, fy, fz] = partials;
    let [wx, wy, wz] = omega;
    let inv = 1.0 / speed;
    Ok([
        fr * wx - fy * wx * wy * inv - fz * wx * wz * inv,
        fr * wy + fy * (1.0 - wy * wy) * inv - fz * wy * wz * inv,
        fr * wz - fy * wy * wz * inv + fz * (1.0 - wz * wz) * inv,
    ])
}
