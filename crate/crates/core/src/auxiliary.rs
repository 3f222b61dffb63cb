//! The auxiliary cell problem
//!
//! ```text
//! -|v| omega_x d_x chi - B d_psi chi = g     on (0, 1) x S^2
//! chi(outgoing) = K* chi(re-emitted)         at x = 0 and x = 1
//! ```
//!
//! solved by exact integration along the helical characteristics
//! `dx/dt = |v| omega_x`, `dpsi/dt = B`. Along a characteristic the azimuth
//! advances by `theta x` with `theta = B / (|v| omega_x)`, which acts on each
//! azimuthal Fourier mode as a phase. The only unknowns left are the
//! re-emitted traces at the two walls, fixed by a boundary linear system
//! whose null space is the constants.

use crate::azimuth::{phase_mean, phase_ramp_mean, Circulant};
use crate::error::{Error, Result};
use crate::kernel::BoundaryKernel;
use crate::sphere::{quad_sphere, Hemisphere, SphereFunction, SphereGrid};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SOLVABILITY_TOL: f64 = 1e-10;
const NULL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySolve {
    /// Closed-form reduction for the isotropic kernel, SVD otherwise.
    #[default]
    Auto,
    /// Minimum-norm least squares on the full boundary system.
    Svd,
    /// Boundary system bordered with the zero-flux-mean constraint.
    Bordered,
}

#[derive(Debug, Clone)]
pub struct AuxiliaryProblem<'a> {
    pub b_field: f64,
    pub speed: f64,
    pub kernel: &'a BoundaryKernel,
    /// Number of x cells used for output sampling and the residual check.
    pub n_x: usize,
    /// x-independent source.
    pub rhs: SphereFunction,
    pub solve: BoundarySolve,
}

impl<'a> AuxiliaryProblem<'a> {
    pub fn new(b_field: f64, speed: f64, kernel: &'a BoundaryKernel, rhs: SphereFunction) -> Self {
        AuxiliaryProblem {
            b_field,
            speed,
            kernel,
            n_x: 64,
            rhs,
            solve: BoundarySolve::Auto,
        }
    }

    pub fn grid(&self) -> &SphereGrid {
        self.kernel.grid()
    }

    fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(Error::Validation(format!("speed must be positive, got {}", self.speed)));
        }
        if !self.b_field.is_finite() {
            return Err(Error::Validation("magnetic field must be finite".into()));
        }
        if self.n_x < 2 {
            return Err(Error::Validation(format!("n_x must be >= 2, got {}", self.n_x)));
        }
        if self.rhs.values.len() != self.grid().len() {
            return Err(Error::Contract("source does not match the sphere grid".into()));
        }
        Ok(())
    }
}

/// One ring of constant `omega_x`: upstream wall data and source in
/// azimuthal Fourier form.
#[derive(Debug, Clone)]
struct Ring {
    hemi: Hemisphere,
    /// Transit time `1 / (|v| |omega_x|)` across the slab.
    tau: f64,
    wall_hat: Vec<Complex64>,
    src_hat: Vec<Complex64>,
}

/// Closed-form solution of an auxiliary problem, evaluable at any `x`.
#[derive(Debug, Clone)]
pub struct AuxiliaryField {
    grid: SphereGrid,
    b_field: f64,
    rings: Vec<Ring>,
    shift: f64,
}

fn mode_number(k: usize, n: usize) -> f64 {
    if n.is_multiple_of(2) && k == n / 2 {
        0.0
    } else if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn synthesize(coeffs: &[Complex64], out: &mut [f64]) {
    let n = coeffs.len();
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            let ph = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
            s += c.re * ph.cos() - c.im * ph.sin();
        }
        *o = s;
    }
}

impl AuxiliaryField {
    /// Time spent along the characteristic from `x` to the downstream wall.
    fn remaining(ring: &Ring, x: f64) -> f64 {
        match ring.hemi {
            Hemisphere::Plus => (1.0 - x) * ring.tau,
            Hemisphere::Minus => x * ring.tau,
        }
    }

    /// Values of `chi` at `x` on every sphere node.
    pub fn eval(&self, x: f64) -> SphereFunction {
        let n = self.grid.n_phi();
        let mut values = vec![0.0; self.grid.len()];
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for (r, ring) in self.rings.iter().enumerate() {
            let t = Self::remaining(ring, x);
            for k in 0..n {
                let m = mode_number(k, n);
                let rot = Complex64::from_polar(1.0, m * self.b_field * t);
                let path = t * phase_mean(m * self.b_field * t);
                coeffs[k] = rot * ring.wall_hat[k] + path * ring.src_hat[k];
            }
            synthesize(&coeffs, &mut values[r * n..(r + 1) * n]);
        }
        values.iter_mut().for_each(|v| *v -= self.shift);
        SphereFunction::new(values)
    }

    /// Exact x-average of `chi` on every sphere node.
    pub fn x_average(&self) -> SphereFunction {
        let n = self.grid.n_phi();
        let mut values = vec![0.0; self.grid.len()];
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for (r, ring) in self.rings.iter().enumerate() {
            let theta = self.b_field * ring.tau;
            for k in 0..n {
                let m = mode_number(k, n);
                coeffs[k] = phase_mean(m * theta) * ring.wall_hat[k]
                    + ring.tau * phase_ramp_mean(m * theta) * ring.src_hat[k];
            }
            synthesize(&coeffs, &mut values[r * n..(r + 1) * n]);
        }
        values.iter_mut().for_each(|v| *v -= self.shift);
        SphereFunction::new(values)
    }

    /// Largest x-frequency carried by the field (used to size the residual grid).
    fn max_frequency(&self) -> f64 {
        let n = self.grid.n_phi();
        let scale = self
            .rings
            .iter()
            .flat_map(|r| r.wall_hat.iter().chain(&r.src_hat))
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let mut fmax: f64 = 0.0;
        for ring in &self.rings {
            for k in 0..n {
                let c = ring.wall_hat[k].norm() + ring.src_hat[k].norm();
                if c > 1e-13 * scale {
                    fmax = fmax.max((mode_number(k, n) * self.b_field * ring.tau).abs());
                }
            }
        }
        fmax
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }
}

#[derive(Debug, Clone)]
pub struct AuxiliarySolution {
    pub field: AuxiliaryField,
    /// Uniform sample points `x_j = j / n_x`.
    pub x: Vec<f64>,
    /// `chi(x_j, .)` for each sample point.
    pub chi: Vec<SphereFunction>,
    pub chi_x_mean: SphereFunction,
    /// `(1 / 4 pi) int int chi dx d omega`.
    pub mean: f64,
    pub residual_norm: f64,
    pub boundary_defect: f64,
    /// `|2 int int chi g - |v| (|gamma_in chi|^2 - |gamma_out chi|^2)|`.
    pub green_defect: f64,
    pub residual_points: usize,
}

/// Solve the auxiliary problem. Fails with a solvability error if the
/// source has nonzero integral, and with a degenerate-kernel error if the
/// boundary system has more than the constants in its null space.
pub fn solve_auxiliary(problem: &AuxiliaryProblem) -> Result<AuxiliarySolution> {
    problem.validate()?;
    let field = build_field(problem)?;
    let chi_x_mean = field.x_average();
    let grid = problem.grid();
    let mean = quad_sphere(&chi_x_mean, grid)? / (4.0 * PI);
    let x: Vec<f64> = (0..=problem.n_x).map(|j| j as f64 / problem.n_x as f64).collect();
    let chi: Vec<SphereFunction> = x.iter().map(|&xj| field.eval(xj)).collect();
    let (residual_norm, residual_points) = field_residual(&field, problem);
    let boundary_defect = boundary_defect(|x| field.eval(x), problem.kernel);
    let green_defect = green_defect(&field, &chi_x_mean, problem)?;
    Ok(AuxiliarySolution {
        field,
        x,
        chi,
        chi_x_mean,
        mean,
        residual_norm,
        boundary_defect,
        green_defect,
        residual_points,
    })
}

fn ring_slice<'v>(values: &'v [f64], grid: &SphereGrid, hemi: Hemisphere, i: usize) -> &'v [f64] {
    let start = grid.index(hemi, i, 0);
    &values[start..start + grid.n_phi()]
}

/// Transit times per `|omega_x|` node.
fn transit_times(grid: &SphereGrid, speed: f64) -> Vec<f64> {
    grid.mu_abs().iter().map(|mu| 1.0 / (speed * mu)).collect()
}

/// Accumulated source along a full crossing, re-emitted trace ordering:
/// `p_plus` at x = 0 (sigma = +1), `p_minus` at x = 1 (sigma = -1).
fn crossing_sources(problem: &AuxiliaryProblem, tau: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let grid = problem.grid();
    let n = grid.n_phi();
    let b = problem.b_field;
    let mut plus = Vec::with_capacity(grid.hemisphere_len());
    let mut minus = Vec::with_capacity(grid.hemisphere_len());
    for (i, &t) in tau.iter().enumerate() {
        let op = Circulant::from_multiplier(n, |m| t * phase_mean(m * b * t));
        plus.extend(op.apply(ring_slice(&problem.rhs.values, grid, Hemisphere::Plus, i)));
        minus.extend(op.apply(ring_slice(&problem.rhs.values, grid, Hemisphere::Minus, i)));
    }
    (plus, minus)
}

/// `u0 = R K* u1 + p_plus`, `u1 = R K* u0 + p_minus`.
fn boundary_matrix(problem: &AuxiliaryProblem, tau: &[f64]) -> DMatrix<f64> {
    let grid = problem.grid();
    let kernel = problem.kernel;
    let nh = grid.hemisphere_len();
    let n = grid.n_phi();
    let w = kernel.flux_weights();
    let km = kernel.matrix();
    // K*[b, a] = K[a, b] W_a
    let kstar = DMatrix::from_fn(nh, nh, |b, a| km[(a, b)] * w[a]);
    let mut rk = DMatrix::zeros(nh, nh);
    for (i, &t) in tau.iter().enumerate() {
        let rot = Circulant::rotation(n, problem.b_field * t).matrix();
        let rows = kstar.rows(i * n, n);
        rk.rows_mut(i * n, n).copy_from(&(rot * rows));
    }
    let mut a = DMatrix::identity(2 * nh, 2 * nh);
    a.view_mut((0, nh), (nh, nh)).copy_from(&(-&rk));
    a.view_mut((nh, 0), (nh, nh)).copy_from(&(-&rk));
    a
}

fn solve_dense(problem: &AuxiliaryProblem, tau: &[f64], rhs: &DVector<f64>, bordered: bool) -> Result<DVector<f64>> {
    let a = boundary_matrix(problem, tau);
    let svd = a.clone().svd(true, true);
    let dim = svd.singular_values.iter().filter(|s| **s < NULL_TOL).count();
    if dim != 1 {
        return Err(Error::DegenerateKernel { dim });
    }
    if !bordered {
        return svd
            .solve(rhs, NULL_TOL)
            .map_err(|e| Error::Contract(format!("boundary solve failed: {e}")));
    }
    let nh = problem.grid().hemisphere_len();
    let w = problem.kernel.flux_weights();
    let m = 2 * nh;
    let mut big = DMatrix::zeros(m + 1, m + 1);
    big.view_mut((0, 0), (m, m)).copy_from(&a);
    for j in 0..m {
        let c = w[j % nh];
        big[(m, j)] = c;
        big[(j, m)] = c;
    }
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(rhs);
    let sol = big
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Contract("bordered boundary system is singular".into()))?;
    Ok(sol.rows(0, m).into_owned())
}

fn build_field(problem: &AuxiliaryProblem) -> Result<AuxiliaryField> {
    let grid = problem.grid();
    let integral = quad_sphere(&problem.rhs, grid)?;
    if integral.abs() > SOLVABILITY_TOL {
        return Err(Error::Solvability {
            mean: integral,
            tol: SOLVABILITY_TOL,
        });
    }
    let kernel = problem.kernel;
    let nh = grid.hemisphere_len();
    let tau = transit_times(grid, problem.speed);
    let (p_plus, p_minus) = crossing_sources(problem, &tau);

    // outgoing traces K* u0 (at x = 0) and K* u1 (at x = 1)
    let (out0, out1) = match (problem.solve, kernel.is_isotropic()) {
        (BoundarySolve::Auto, true) => {
            // K* maps onto constants: only two scalars are unknown
            let s_plus = kernel.adjoint_local(&p_plus)[0];
            let s_minus = kernel.adjoint_local(&p_minus)[0];
            let c0 = 0.5 * (s_plus - s_minus);
            (vec![c0; nh], vec![-c0; nh])
        }
        (method, _) => {
            let mut rhs = DVector::zeros(2 * nh);
            rhs.rows_mut(0, nh).copy_from_slice(&p_plus);
            rhs.rows_mut(nh, nh).copy_from_slice(&p_minus);
            let u = solve_dense(problem, &tau, &rhs, method == BoundarySolve::Bordered)?;
            let u0: Vec<f64> = u.rows(0, nh).iter().copied().collect();
            let u1: Vec<f64> = u.rows(nh, nh).iter().copied().collect();
            (kernel.adjoint_local(&u0), kernel.adjoint_local(&u1))
        }
    };

    let n = grid.n_phi();
    let src_hat = problem.rhs.spectral(grid)?;
    let wall = SphereFunction::new([out0.as_slice(), out1.as_slice()].concat());
    // hemisphere Minus travels to x = 0 and picks up K* u0; Plus picks up K* u1
    let wall_hat = wall.spectral(grid)?;
    let mut rings = Vec::with_capacity(2 * grid.n_mu());
    for hemi in Hemisphere::BOTH {
        for (i, &t) in tau.iter().enumerate() {
            let r = hemi.index() * grid.n_mu() + i;
            rings.push(Ring {
                hemi,
                tau: t,
                wall_hat: wall_hat[r].clone(),
                src_hat: src_hat[r].clone(),
            });
        }
    }
    debug_assert!(rings.iter().all(|r| r.wall_hat.len() == n));
    let mut field = AuxiliaryField {
        grid: grid.clone(),
        b_field: problem.b_field,
        rings,
        shift: 0.0,
    };
    field.shift = quad_sphere(&field.x_average(), grid)? / (4.0 * PI);
    Ok(field)
}

/// Chebyshev-Lobatto points on `[0, 1]` (ascending) and the matching
/// differentiation matrix.
pub fn chebyshev_lobatto(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let t: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| if j == 0 || j == n { 2.0 } else { 1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[(i, j)] = c(i) / c(j) * sign / (t[i] - t[j]);
            }
        }
    }
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|j| *j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    // x = (1 - t) / 2, so d/dx = -2 d/dt
    let x = t.iter().map(|ti| 0.5 * (1.0 - ti)).collect();
    (x, d * -2.0)
}

fn residual_points(n_x: usize, fmax: f64) -> usize {
    // frequency on the Chebyshev variable is half the x-frequency
    let needed = (0.65 * fmax).ceil() as usize + 48;
    n_x.max(needed).min(1536)
}

/// Max-norm of `-|v| omega_x d_x chi - B d_psi chi - g`, with `d_x` a
/// Chebyshev spectral derivative and `d_psi` the spectral azimuthal
/// derivative. Returns the norm and the number of x points used.
pub fn residual<F: Fn(f64) -> SphereFunction>(chi: F, problem: &AuxiliaryProblem) -> (f64, usize) {
    residual_with_points(chi, problem, None)
}

pub fn residual_with_points<F: Fn(f64) -> SphereFunction>(
    chi: F,
    problem: &AuxiliaryProblem,
    points: Option<usize>,
) -> (f64, usize) {
    let grid = problem.grid();
    let npts = points.unwrap_or_else(|| {
        let tau = transit_times(grid, problem.speed);
        let tmax = tau.iter().copied().fold(0.0, f64::max);
        let mmax = (grid.n_phi() / 2).saturating_sub(1) as f64;
        residual_points(problem.n_x, mmax * problem.b_field.abs() * tmax)
    });
    let (xs, dx) = chebyshev_lobatto(npts);
    let samples: Vec<SphereFunction> = xs.iter().map(|&x| chi(x)).collect();
    let dpsi = Circulant::derivative(grid.n_phi());
    let n = grid.n_phi();
    let speed = problem.speed;
    let mut worst: f64 = 0.0;
    for (j, s) in samples.iter().enumerate() {
        let mut d = vec![0.0; n];
        for r in 0..(grid.len() / n) {
            // differentiate deviations so constants map to exactly zero
            let ring = &s.values[r * n..(r + 1) * n];
            let centered: Vec<f64> = ring.iter().map(|v| v - ring[0]).collect();
            dpsi.apply_into(&centered, &mut d);
            for k in 0..n {
                let idx = r * n + k;
                let mut ddx = 0.0;
                for (l, sl) in samples.iter().enumerate() {
                    if l != j {
                        ddx += dx[(j, l)] * (sl.values[idx] - s.values[idx]);
                    }
                }
                let wx = grid.omega_at(idx)[0];
                let res = -speed * wx * ddx - problem.b_field * d[k] - problem.rhs.values[idx];
                worst = worst.max(res.abs());
            }
        }
    }
    (worst, npts)
}

/// Sized residual for a solved field.
pub fn field_residual(field: &AuxiliaryField, problem: &AuxiliaryProblem) -> (f64, usize) {
    let npts = residual_points(problem.n_x, field.max_frequency());
    residual_with_points(|x| field.eval(x), problem, Some(npts))
}

/// Max defect of `chi(outgoing) = K* chi(re-emitted)` over both walls.
pub fn boundary_defect<F: Fn(f64) -> SphereFunction>(chi: F, kernel: &BoundaryKernel) -> f64 {
    let grid = kernel.grid();
    let mut worst: f64 = 0.0;
    for (x, out, inn) in [
        (0.0, Hemisphere::Minus, Hemisphere::Plus),
        (1.0, Hemisphere::Plus, Hemisphere::Minus),
    ] {
        let c = chi(x);
        let want = kernel.adjoint_local(c.hemisphere(grid, inn));
        for (a, b) in c.hemisphere(grid, out).iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn green_defect(field: &AuxiliaryField, chi_bar: &SphereFunction, problem: &AuxiliaryProblem) -> Result<f64> {
    let grid = problem.grid();
    let kernel = problem.kernel;
    let lhs = 2.0 * quad_sphere(&chi_bar.mul(&problem.rhs), grid)?;
    let at0 = field.eval(0.0);
    let at1 = field.eval(1.0);
    let inflow = kernel.weighted_norm2(at0.hemisphere(grid, Hemisphere::Plus))
        + kernel.weighted_norm2(at1.hemisphere(grid, Hemisphere::Minus));
    let outflow = kernel.weighted_norm2(at0.hemisphere(grid, Hemisphere::Minus))
        + kernel.weighted_norm2(at1.hemisphere(grid, Hemisphere::Plus));
    let rhs = problem.speed * (inflow - outflow);
    Ok((lhs - rhs).abs())
}

/// Solutions for the sources `omega_y` and `omega_z` at energy `epsilon`.
pub fn chi_components(
    b_field: f64,
    epsilon: f64,
    kernel: &BoundaryKernel,
    n_x: usize,
) -> Result<(AuxiliarySolution, AuxiliarySolution)> {
    if !(epsilon > 0.0) {
        return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
    }
    let grid = kernel.grid();
    let speed = (2.0 * epsilon).sqrt();
    let mut py = AuxiliaryProblem::new(b_field, speed, kernel, grid.sample(|w| w[1]));
    py.n_x = n_x;
    let mut pz = py.clone();
    pz.rhs = grid.sample(|w| w[2]);
    Ok((solve_auxiliary(&py)?, solve_auxiliary(&pz)?))
}

/// x-averaged solutions for `omega_y`, `omega_z` without sampling or
/// residual checks. Used by tensor assembly.
pub fn chi_x_means(b_field: f64, speed: f64, kernel: &BoundaryKernel) -> Result<[SphereFunction; 2]> {
    let grid = kernel.grid();
    let py = AuxiliaryProblem::new(b_field, speed, kernel, grid.sample(|w| w[1]));
    py.validate()?;
    let mut pz = py.clone();
    pz.rhs = grid.sample(|w| w[2]);
    Ok([build_field(&py)?.x_average(), build_field(&pz)?.x_average()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SphereGrid, BoundaryKernel) {
        let g = SphereGrid::new(4, 16).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        (g, k)
    }

    #[test]
    fn constant_source_is_not_solvable() {
        let (g, k) = setup();
        let p = AuxiliaryProblem::new(1.0, 1.0, &k, SphereFunction::constant(&g, 1.0));
        match solve_auxiliary(&p) {
            Err(Error::Solvability { mean, .. }) => assert!((mean - 4.0 * PI).abs() < 1e-12),
            other => panic!("expected solvability error, got {other:?}"),
        }
    }

    #[test]
    fn omega_y_source_isotropic() {
        let (g, k) = setup();
        let p = AuxiliaryProblem::new(1.0, 1.0, &k, g.sample(|w| w[1]));
        let s = solve_auxiliary(&p).unwrap();
        assert!(s.residual_norm < 1e-8, "residual {}", s.residual_norm);
        assert!(s.boundary_defect < 1e-8, "bdry {}", s.boundary_defect);
        assert!(s.mean.abs() < 1e-12);
        assert!(s.green_defect < 1e-10, "green {}", s.green_defect);
        assert_eq!(s.chi.len(), p.n_x + 1);
    }

    #[test]
    fn zero_field_is_affine_along_characteristics() {
        let (g, k) = setup();
        let p = AuxiliaryProblem::new(0.0, 1.0, &k, g.sample(|w| w[1]));
        let s = solve_auxiliary(&p).unwrap();
        assert!(s.residual_norm < 1e-8);
        let a = s.field.eval(0.0);
        let b = s.field.eval(1.0);
        let m = s.field.eval(0.3);
        for idx in 0..g.len() {
            let lin = 0.7 * a.values[idx] + 0.3 * b.values[idx];
            assert!((m.values[idx] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_and_fast_paths_agree() {
        let (g, k) = setup();
        let mut p = AuxiliaryProblem::new(0.7, 1.3, &k, g.sample(|w| w[1] + 0.5 * w[0] * w[2]));
        let fast = solve_auxiliary(&p).unwrap();
        p.solve = BoundarySolve::Svd;
        let svd = solve_auxiliary(&p).unwrap();
        p.solve = BoundarySolve::Bordered;
        let bordered = solve_auxiliary(&p).unwrap();
        for x in [0.0, 0.25, 1.0] {
            let a = fast.field.eval(x);
            let b = svd.field.eval(x);
            let c = bordered.field.eval(x);
            for i in 0..g.len() {
                assert!((a.values[i] - b.values[i]).abs() < 1e-10);
                assert!((b.values[i] - c.values[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn custom_kernel_solution() {
        let g = SphereGrid::new(4, 8).unwrap();
        let k = BoundaryKernel::custom_from_fn(&g, |w, wp| 1.0 / PI + 0.1 * w[1] * wp[1] + 0.05 * w[0] * wp[0]).unwrap();
        let p = AuxiliaryProblem::new(0.8, 1.0, &k, g.sample(|w| w[1]));
        let s = solve_auxiliary(&p).unwrap();
        assert!(s.residual_norm < 1e-8, "residual {}", s.residual_norm);
        assert!(s.boundary_defect < 1e-10, "bdry {}", s.boundary_defect);
        assert!(s.mean.abs() < 1e-12);
    }

    #[test]
    fn specular_kernel_is_degenerate() {
        let g = SphereGrid::new(2, 8).unwrap();
        let k = BoundaryKernel::specular(&g);
        let p = AuxiliaryProblem::new(1.0, 1.0, &k, g.sample(|w| w[1]));
        assert!(matches!(solve_auxiliary(&p), Err(Error::DegenerateKernel { dim }) if dim > 1));
    }

    #[test]
    fn residual_sanity() {
        let (g, k) = setup();
        let p = AuxiliaryProblem::new(1.0, 1.0, &k, SphereFunction::constant(&g, 0.0));
        let (r, _) = residual(|_| SphereFunction::constant(&g, 2.0), &p);
        assert!(r < 1e-12);

        let p = AuxiliaryProblem::new(1.0, 1.0, &k, g.sample(|w| w[1]));
        let s = solve_auxiliary(&p).unwrap();
        let bump = g.sample(|w| 0.1 * w[1]);
        let (r, _) = residual(
            |x| {
                let mut c = s.field.eval(x);
                c.values.iter_mut().zip(&bump.values).for_each(|(a, b)| *a += b);
                c
            },
            &p,
        );
        assert!(r > 1e-2);
    }

    #[test]
    fn quarter_turn_covariance() {
        let (g, k) = setup();
        let (cy, cz) = chi_components(1.0, 0.5, &k, 16).unwrap();
        let n = g.n_phi();
        let q = n / 4;
        for (a, b) in cy.chi.iter().zip(&cz.chi) {
            for r in 0..(g.len() / n) {
                for j in 0..n {
                    // chi_z(psi) = chi_y(psi - pi/2)
                    let want = a.values[r * n + (j + n - q) % n];
                    assert!((b.values[r * n + j] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grazing_values_stay_bounded_with_field() {
        let mut maxes = vec![];
        for n_mu in [4, 8, 16, 32] {
            let g = SphereGrid::new(n_mu, 8).unwrap();
            let k = BoundaryKernel::isotropic(&g);
            let p = AuxiliaryProblem::new(1.0, 1.0, &k, g.sample(|w| w[1]));
            let f = build_field(&p).unwrap();
            let m = [0.0, 0.5, 1.0]
                .iter()
                .flat_map(|x| f.eval(*x).values)
                .fold(0.0f64, |a, v| a.max(v.abs()));
            maxes.push(m);
        }
        // |chi| <= |K* u| + 2 / B along every characteristic
        assert!(maxes.iter().all(|m| *m < 4.0), "{maxes:?}");
    }

    #[test]
    fn chebyshev_derivative_of_polynomial() {
        let (x, d) = chebyshev_lobatto(12);
        let f: Vec<f64> = x.iter().map(|x| x.powi(5) - 2.0 * x).collect();
        for (i, xi) in x.iter().enumerate() {
            let df: f64 = (0..x.len()).map(|j| d[(i, j)] * f[j]).sum();
            assert!((df - (5.0 * xi.powi(4) - 2.0)).abs() < 1e-11);
        }
        assert_eq!(x[0], 0.0);
    }
}
