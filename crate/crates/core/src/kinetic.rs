//! Finite-`alpha` kinetic dynamics.
//!
//! Particle mode integrates the scaled characteristics
//!
//! ```text
//! dx/dt  = v_x / alpha^2
//! dxi/dt = v_perp / alpha
//! dv_perp/dt = (B / alpha^2) J v_perp - E / alpha      (J = quarter turn)
//! ```
//!
//! exactly for `E` frozen over a macro step, with wall events resolved at
//! their exact hit times. Reduced mode advances the `(x, omega)` relaxation
//! problem on a sphere grid.

use crate::azimuth::{phase_mean, phase_ramp_mean, Circulant};
use crate::error::{Error, Result};
use crate::field::{ElectricField, ScalarProfile, XiGrid};
use crate::kernel::{BoundaryKernel, KernelKind, Wall};
use crate::sphere::{EnergyGrid, Hemisphere, SphereFunction, SphereGrid};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub speed: f64,
    /// `omega_x`.
    pub mu: f64,
    /// Azimuth of `(omega_y, omega_z)`.
    pub psi: f64,
    pub weight: f64,
}

impl Particle {
    pub fn omega(&self) -> [f64; 3] {
        let s = (1.0 - self.mu * self.mu).max(0.0).sqrt();
        [self.mu, s * self.psi.cos(), s * self.psi.sin()]
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.speed * self.speed
    }

    pub fn v_x(&self) -> f64 {
        self.speed * self.mu
    }

    /// `v_y + i v_z`.
    pub fn v_perp(&self) -> Complex64 {
        let s = (1.0 - self.mu * self.mu).max(0.0).sqrt();
        Complex64::from_polar(self.speed * s, self.psi)
    }
}

/// Parameters of one free flight.
#[derive(Debug, Clone, Copy)]
pub struct Flight {
    pub alpha: f64,
    pub b_field: f64,
    pub e: [f64; 2],
}

impl Flight {
    fn omega(&self) -> f64 {
        self.b_field / (self.alpha * self.alpha)
    }

    /// Time until the particle reaches a wall, if it moves in x at all.
    pub fn time_to_wall(&self, p: &Particle) -> Option<(f64, Wall)> {
        let vx = p.v_x();
        let a2 = self.alpha * self.alpha;
        if vx > 0.0 {
            Some(((1.0 - p.x) * a2 / vx, Wall::Right))
        } else if vx < 0.0 {
            Some((p.x * a2 / -vx, Wall::Left))
        } else {
            None
        }
    }

    /// Advance by `t` with no wall in between.
    pub fn drift(&self, p: &mut Particle, t: f64) {
        let a = self.alpha;
        let om = self.omega();
        p.x += p.v_x() * t / (a * a);
        let v0 = p.v_perp();
        let lam = om * t;
        let m1 = t * phase_mean(lam);
        if self.e == [0.0, 0.0] {
            let d = m1 * v0 / a;
            p.y += d.re;
            p.z += d.im;
            p.psi = (p.psi + lam).rem_euclid(2.0 * PI);
            return;
        }
        let e = Complex64::new(self.e[0], self.e[1]);
        let m2 = t * t * phase_ramp_mean(lam);
        let v = Complex64::from_polar(1.0, lam) * v0 - m1 * e / a;
        let d = (m1 * v0 - m2 * e / a) / a;
        p.y += d.re;
        p.z += d.im;
        let vx = p.v_x();
        let r2 = v.norm_sqr();
        p.speed = (vx * vx + r2).sqrt();
        p.mu = if p.speed > 0.0 { vx / p.speed } else { 0.0 };
        if r2 > 0.0 {
            p.psi = v.im.atan2(v.re).rem_euclid(2.0 * PI);
        }
    }
}

/// Advance over at most `dtau`; stops at a wall if one is reached first and
/// reports the time used and the wall.
pub fn advance_fast(p: &mut Particle, dtau: f64, flight: &Flight) -> (f64, Option<Wall>) {
    match flight.time_to_wall(p) {
        Some((t_hit, wall)) if t_hit <= dtau => {
            flight.drift(p, t_hit);
            p.x = wall.x();
            (t_hit, Some(wall))
        }
        _ => {
            flight.drift(p, dtau);
            p.x = p.x.clamp(0.0, 1.0);
            (dtau, None)
        }
    }
}

/// Re-emit a particle sitting on `wall` with an outgoing velocity.
pub fn wall_bounce<R: Rng + ?Sized>(p: &mut Particle, wall: Wall, kernel: &BoundaryKernel, rng: &mut R) -> Result<()> {
    if kernel.kind() == KernelKind::Specular {
        p.mu = -p.mu;
        return Ok(());
    }
    let w = kernel.sample_reemission(wall, p.omega(), rng)?;
    p.mu = w[0];
    p.psi = w[2].atan2(w[1]).rem_euclid(2.0 * PI);
    p.x = wall.x();
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub bounces: u64,
}

/// Move a particle through `dt` of macroscopic time, bouncing off the walls.
pub fn fly<R: Rng + ?Sized>(
    p: &mut Particle,
    dt: f64,
    flight: &Flight,
    kernel: &BoundaryKernel,
    rng: &mut R,
) -> Result<u64> {
    let mut left = dt;
    let mut bounces = 0;
    while left > 0.0 {
        let (used, hit) = advance_fast(p, left, flight);
        left -= used;
        match hit {
            Some(wall) => {
                wall_bounce(p, wall, kernel, rng)?;
                bounces += 1;
            }
            None => break,
        }
    }
    Ok(bounces)
}

/// Particles and their private random streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub rngs: Vec<ChaCha8Rng>,
    pub alpha: f64,
    pub t: f64,
    /// Number of independent stratified batches; below 2 the particles are
    /// independent draws.
    pub batches: usize,
}

/// Random stream of particle `index` under `seed`.
pub fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// Draw particles from `F_I(y, z, eps) N(eps)`, uniform in `x` and `omega`.
/// `F_I` is discretized as a constant on each `(xi, eps)` cell.
pub fn sample_initial<F: Fn(f64, f64, f64) -> f64 + Sync>(
    f_init: F,
    n_particles: usize,
    xi: &XiGrid,
    egrid: &EnergyGrid,
    alpha: f64,
    seed: u64,
) -> Result<ParticleEnsemble> {
    sample_initial_stratified(f_init, n_particles, xi, egrid, alpha, seed, 0)
}

/// Like [`sample_initial`], but split into `batches` independent batches,
/// each stratified in the `(cell, energy bin)` cumulative distribution.
/// Particle `i` belongs to batch `i % batches`. Standard errors of the
/// moments then come from the spread between batch estimates.
pub fn sample_initial_stratified<F: Fn(f64, f64, f64) -> f64 + Sync>(
    f_init: F,
    n_particles: usize,
    xi: &XiGrid,
    egrid: &EnergyGrid,
    alpha: f64,
    seed: u64,
    batches: usize,
) -> Result<ParticleEnsemble> {
    if n_particles == 0 {
        return Err(Error::Validation("particle count must be positive".into()));
    }
    if batches >= 2 && !n_particles.is_multiple_of(batches) {
        return Err(Error::Validation(format!(
            "{n_particles} particles do not split into {batches} equal batches"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let ne = egrid.len();
    let area = xi.cell_area();
    let mut cdf = Vec::with_capacity(xi.len() * ne);
    let mut total = 0.0;
    for (y, z) in xi.centers() {
        for l in 0..ne {
            let f = f_init(y, z, egrid.centers()[l]);
            if f < 0.0 || !f.is_finite() {
                return Err(Error::Validation(format!("initial data must be nonnegative, got {f}")));
            }
            total += f * 4.0 * PI * egrid.dos_mean()[l] * egrid.width(l) * area;
            cdf.push(total);
        }
    }
    if !(total > 0.0) {
        return Err(Error::Validation("initial data has zero total mass".into()));
    }
    let weight = total / n_particles as f64;
    let (particles, rngs): (Vec<Particle>, Vec<ChaCha8Rng>) = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let u = if batches >= 2 {
                let m = n_particles / batches;
                ((i / batches) as f64 + rng.random::<f64>()) / m as f64 * total
            } else {
                rng.random::<f64>() * total
            };
            let cell = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
            let (c, l) = (cell / ne, cell % ne);
            let (iy, iz) = (c / xi.nz, c % xi.nz);
            let y = (iy as f64 + rng.random::<f64>()) * xi.hy();
            let z = (iz as f64 + rng.random::<f64>()) * xi.hz();
            let (e0, e1) = (egrid.edges()[l], egrid.edges()[l + 1]);
            let (a, b) = (e0.powf(1.5), e1.powf(1.5));
            let eps = (a + rng.random::<f64>() * (b - a)).powf(2.0 / 3.0);
            let p = Particle {
                x: rng.random::<f64>(),
                y,
                z,
                speed: (2.0 * eps).sqrt(),
                mu: rng.random_range(-1.0..1.0),
                psi: 2.0 * PI * rng.random::<f64>(),
                weight,
            };
            (p, rng)
        })
        .unzip();
    Ok(ParticleEnsemble {
        particles,
        rngs,
        alpha,
        t: 0.0,
        batches: if batches >= 2 { batches } else { 0 },
    })
}

#[derive(Debug, Clone)]
pub struct KineticSetup<'a> {
    pub xi: &'a XiGrid,
    pub kernel: &'a BoundaryKernel,
    pub b_field: ScalarProfile,
    /// Bound on `dt max|E| / alpha`, the velocity kick per macro step.
    pub max_kick: f64,
}

/// One macro step: every particle flies for `dt` with `E` and `B` frozen at
/// the midpoint of a predicted trajectory.
pub fn step_kinetic(ens: &mut ParticleEnsemble, dt: f64, field: &ElectricField, setup: &KineticSetup) -> Result<StepStats> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let emax = field.max_norm(setup.xi);
    let kick = dt * emax / ens.alpha;
    if kick > setup.max_kick {
        return Err(Error::StepSize {
            dt,
            bound: setup.max_kick * ens.alpha / emax,
        });
    }
    let alpha = ens.alpha;
    let bounces = ens
        .particles
        .par_iter_mut()
        .zip(ens.rngs.par_iter_mut())
        .map(|(p, rng)| {
            // predictor with the field at the start, then the whole step
            // again from the same state and random stream with the field at
            // the midpoint
            let mut trial = *p;
            let mut trial_rng = rng.clone();
            let start = Flight {
                alpha,
                b_field: setup.b_field.eval(setup.xi, p.y, p.z),
                e: field.at(setup.xi, p.y, p.z),
            };
            fly(&mut trial, dt, &start, setup.kernel, &mut trial_rng)?;
            let (my, mz) = (0.5 * (p.y + trial.y), 0.5 * (p.z + trial.z));
            let mid = Flight {
                alpha,
                b_field: setup.b_field.eval(setup.xi, my, mz),
                e: field.at(setup.xi, my, mz),
            };
            fly(p, dt, &mid, setup.kernel, rng)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    for p in &mut ens.particles {
        let (y, z) = setup.xi.wrap(p.y, p.z);
        p.y = y;
        p.z = z;
    }
    ens.t += dt;
    Ok(StepStats { bounces })
}

/// Cloud-in-cell number density on the xi grid.
pub fn deposit_density(ens: &ParticleEnsemble, xi: &XiGrid) -> Vec<f64> {
    let mut n = vec![0.0; xi.len()];
    let inv_area = 1.0 / xi.cell_area();
    for p in &ens.particles {
        let (wy, wz) = xi.wrap(p.y, p.z);
        let sy = wy / xi.hy() - 0.5;
        let sz = wz / xi.hz() - 0.5;
        let (fy, fz) = (sy.floor(), sz.floor());
        let (ty, tz) = (sy - fy, sz - fz);
        let iy0 = (fy as isize).rem_euclid(xi.ny as isize) as usize;
        let iz0 = (fz as isize).rem_euclid(xi.nz as isize) as usize;
        for (iy, a) in [(iy0, 1.0 - ty), ((iy0 + 1) % xi.ny, ty)] {
            for (iz, b) in [(iz0, 1.0 - tz), ((iz0 + 1) % xi.nz, tz)] {
                n[xi.index(iy, iz)] += p.weight * a * b * inv_area;
            }
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFields {
    /// Layout `[cell * n_eps + l]`.
    pub f: Vec<f64>,
    pub f_se: Vec<f64>,
    pub j_y: Vec<f64>,
    pub j_z: Vec<f64>,
    pub j_y_se: Vec<f64>,
    pub j_z_se: Vec<f64>,
    pub counts: Vec<u64>,
    /// Particles above the energy grid, not binned.
    pub overflow: u64,
}

impl MomentFields {
    /// Bins with no particles have undefined relative error.
    pub fn empty_bins(&self) -> usize {
        self.counts.iter().filter(|c| **c == 0).count()
    }
}

/// Binned estimates of `F` and `J` with per-bin standard errors.
pub fn estimate_moments(ens: &ParticleEnsemble, xi: &XiGrid, egrid: &EnergyGrid) -> Result<MomentFields> {
    if ens.particles.is_empty() {
        return Err(Error::Validation("empty ensemble".into()));
    }
    let ne = egrid.len();
    let nb = xi.len() * ne;
    let k = ens.batches.max(1);
    // per batch: weight, current y, current z and their squares
    let mut sums = vec![[0.0; 6]; nb * k];
    let mut counts = vec![0u64; nb];
    let mut overflow = 0;
    for (i, p) in ens.particles.iter().enumerate() {
        let Some(l) = egrid.locate(p.energy()) else {
            overflow += 1;
            continue;
        };
        let (iy, iz) = xi.locate(p.y, p.z);
        let b = xi.index(iy, iz) * ne + l;
        let v = p.v_perp();
        let (w, jy, jz) = (p.weight, p.weight * v.re, p.weight * v.im);
        let s = &mut sums[b * k + i % k];
        s[0] += w;
        s[1] += jy;
        s[2] += jz;
        s[3] += w * w;
        s[4] += jy * jy;
        s[5] += jz * jz;
        counts[b] += 1;
    }
    let area = xi.cell_area();
    let mut m = MomentFields {
        f: vec![0.0; nb],
        f_se: vec![0.0; nb],
        j_y: vec![0.0; nb],
        j_z: vec![0.0; nb],
        j_y_se: vec![0.0; nb],
        j_z_se: vec![0.0; nb],
        counts,
        overflow,
    };
    for b in 0..nb {
        let l = b % ne;
        let nf = 4.0 * PI * egrid.dos_mean()[l] * egrid.width(l) * area;
        let nj = ens.alpha * egrid.width(l) * area;
        let batch = &sums[b * k..(b + 1) * k];
        let mut mean = [0.0; 3];
        let mut se = [0.0; 3];
        for q in 0..3 {
            mean[q] = batch.iter().map(|s| s[q]).sum::<f64>();
            se[q] = if k >= 2 {
                // batch totals scaled to the full ensemble are k * s
                let avg = mean[q] / k as f64;
                let var = batch.iter().map(|s| (s[q] - avg).powi(2)).sum::<f64>() / (k - 1) as f64;
                (k as f64 * var).sqrt()
            } else {
                batch.iter().map(|s| s[q + 3]).sum::<f64>().sqrt()
            };
        }
        m.f[b] = mean[0] / nf;
        m.f_se[b] = se[0] / nf;
        m.j_y[b] = mean[1] / nj;
        m.j_z[b] = mean[2] / nj;
        m.j_y_se[b] = se[1] / nj;
        m.j_z_se[b] = se[2] / nj;
    }
    Ok(m)
}

/// State of the reduced `(x, omega)` relaxation problem at fixed speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    /// Values per x cell: `f[j]` is a function on the sphere grid.
    pub f: Vec<SphereFunction>,
    pub t: f64,
    pub alpha: f64,
    pub speed: f64,
    pub b_field: f64,
}

impl ReducedState {
    pub fn new<F: Fn(f64, [f64; 3]) -> f64>(
        grid: &SphereGrid,
        n_x: usize,
        alpha: f64,
        speed: f64,
        b_field: f64,
        f0: F,
    ) -> Result<Self> {
        if n_x < 2 {
            return Err(Error::Validation("reduced mode needs n_x >= 2".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) || !(speed > 0.0) {
            return Err(Error::Validation("reduced mode needs alpha in (0, 1] and speed > 0".into()));
        }
        let h = 1.0 / n_x as f64;
        let f = (0..n_x)
            .map(|j| {
                let x = (j as f64 + 0.5) * h;
                grid.sample(|w| f0(x, w))
            })
            .collect();
        Ok(ReducedState {
            f,
            t: 0.0,
            alpha,
            speed,
            b_field,
        })
    }

    pub fn n_x(&self) -> usize {
        self.f.len()
    }

    pub fn l2_squared(&self, grid: &SphereGrid) -> f64 {
        let h = 1.0 / self.n_x() as f64;
        let w = grid.weights();
        self.f
            .iter()
            .map(|c| c.values.iter().zip(&w).map(|(v, wi)| v * v * wi).sum::<f64>() * h)
            .sum()
    }

    pub fn mean(&self, grid: &SphereGrid) -> f64 {
        let h = 1.0 / self.n_x() as f64;
        let w = grid.weights();
        let s: f64 = self
            .f
            .iter()
            .map(|c| c.values.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>() * h)
            .sum();
        s / (4.0 * PI)
    }

    /// `|f - <f>|` in the discrete L2 norm.
    pub fn anisotropy(&self, grid: &SphereGrid) -> f64 {
        let m = self.mean(grid);
        let h = 1.0 / self.n_x() as f64;
        let w = grid.weights();
        self.f
            .iter()
            .map(|c| c.values.iter().zip(&w).map(|(v, wi)| (v - m).powi(2) * wi).sum::<f64>() * h)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest stable step: the upwind Courant number stays at most one.
    pub fn max_dt(&self, grid: &SphereGrid) -> f64 {
        let mu_max = grid.mu_abs().iter().copied().fold(0.0, f64::max);
        self.alpha * self.alpha / (self.n_x() as f64 * self.speed * mu_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxDiagnostics {
    pub l2_before: f64,
    pub l2_after: f64,
    /// `(|v| dt / alpha^2) (|gamma_in|^2 - |gamma_out|^2)`, both walls.
    pub wall_term: f64,
    /// Upwind numerical dissipation, nonnegative.
    pub numerical_dissipation: f64,
    /// `|P gamma_out|^2` summed over the walls (weighted by `|omega_x|`).
    pub wall_anisotropy: f64,
}

impl RelaxDiagnostics {
    /// Defect of the discrete Green identity.
    pub fn green_defect(&self) -> f64 {
        ((self.l2_after - self.l2_before) - (self.wall_term - self.numerical_dissipation)).abs()
    }
}

/// One step of `d_t f + alpha^-2 (v_x d_x + B d_psi) f = 0` with
/// `gamma_in = K gamma_out`: upwind transport per ring, then exact
/// rotation of the azimuth.
pub fn relax_step(state: &mut ReducedState, dt: f64, kernel: &BoundaryKernel) -> Result<RelaxDiagnostics> {
    let grid = kernel.grid().clone();
    let bound = state.max_dt(&grid);
    if dt > bound * (1.0 + 1e-12) || !(dt > 0.0) {
        return Err(Error::StepSize { dt, bound });
    }
    let nx = state.n_x();
    let h = 1.0 / nx as f64;
    let a2 = state.alpha * state.alpha;
    let l2_before = state.l2_squared(&grid);

    // outgoing traces are the upwind values in the boundary cells
    let out_left = state.f[0].hemisphere(&grid, Hemisphere::Minus).to_vec();
    let out_right = state.f[nx - 1].hemisphere(&grid, Hemisphere::Plus).to_vec();
    let in_left = kernel.apply_local(&out_left);
    let in_right = kernel.apply_local(&out_right);
    let wall_anisotropy = kernel.weighted_norm2(&kernel.project_p(&out_left))
        + kernel.weighted_norm2(&kernel.project_p(&out_right));
    let wall_term = state.speed * dt / a2
        * (kernel.weighted_norm2(&in_left) + kernel.weighted_norm2(&in_right)
            - kernel.weighted_norm2(&out_left)
            - kernel.weighted_norm2(&out_right));

    let nh = grid.hemisphere_len();
    let mut numerical_dissipation = 0.0;
    for hemi in Hemisphere::BOTH {
        for i in 0..grid.n_mu() {
            let c = state.speed * grid.mu_abs()[i] * dt / (a2 * h);
            let w = grid.weight(i);
            for k in 0..grid.n_phi() {
                let idx = grid.index(hemi, i, k);
                let loc = grid.local(i, k);
                let col: Vec<f64> = state.f.iter().map(|cell| cell.values[idx]).collect();
                let (inflow, order): (f64, Vec<usize>) = match hemi {
                    Hemisphere::Plus => (in_left[loc], (0..nx).collect()),
                    Hemisphere::Minus => (in_right[loc], (0..nx).rev().collect()),
                };
                let mut upstream = inflow;
                for &j in &order {
                    let d = col[j] - upstream;
                    numerical_dissipation += h * w * c * (1.0 - c) * d * d;
                    state.f[j].values[idx] = col[j] - c * d;
                    upstream = col[j];
                }
            }
        }
    }
    debug_assert_eq!(nh * 2, grid.len());

    let angle = -state.b_field * dt / a2;
    if angle != 0.0 {
        let rot = Circulant::rotation(grid.n_phi(), angle);
        let n = grid.n_phi();
        let mut buf = vec![0.0; n];
        for cell in &mut state.f {
            for ring in cell.values.chunks_mut(n) {
                rot.apply_into(ring, &mut buf);
                ring.copy_from_slice(&buf);
            }
        }
    }
    state.t += dt;
    Ok(RelaxDiagnostics {
        l2_before,
        l2_after: state.l2_squared(&grid),
        wall_term,
        numerical_dissipation,
        wall_anisotropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn particle(mu: f64, psi: f64) -> Particle {
        Particle {
            x: 0.5,
            y: 0.0,
            z: 0.0,
            speed: 1.3,
            mu,
            psi,
            weight: 1.0,
        }
    }

    #[test]
    fn zero_field_flight_is_straight() {
        let mut p = particle(0.3, 0.7);
        let before = p;
        let f = Flight {
            alpha: 1.0,
            b_field: 0.0,
            e: [0.0, 0.0],
        };
        let (used, hit) = advance_fast(&mut p, 0.1, &f);
        assert_eq!(hit, None);
        assert_eq!(used, 0.1);
        let v = before.v_perp();
        assert!((p.y - 0.1 * v.re).abs() < 1e-15);
        assert!((p.z - 0.1 * v.im).abs() < 1e-15);
        assert_eq!(p.psi, before.psi);
        assert!((p.x - (0.5 + 0.1 * 1.3 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_speed_and_vx() {
        let mut p = particle(0.001, 0.2);
        let f = Flight {
            alpha: 0.3,
            b_field: 1.7,
            e: [0.0, 0.0],
        };
        let period = 2.0 * PI / f.omega();
        let psi0 = p.psi;
        let (speed, mu) = (p.speed, p.mu);
        advance_fast(&mut p, period, &f);
        assert_eq!(p.speed, speed);
        assert_eq!(p.mu, mu);
        let d = (p.psi - psi0).rem_euclid(2.0 * PI);
        assert!(d.min(2.0 * PI - d) < 1e-12);
        // a full gyration returns xi to the start
        assert!(p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn wall_hit_time_is_exact() {
        let mut p = particle(0.5, 0.0);
        let f = Flight {
            alpha: 0.5,
            b_field: 1.0,
            e: [0.0, 0.0],
        };
        let (used, hit) = advance_fast(&mut p, 10.0, &f);
        assert_eq!(hit, Some(Wall::Right));
        assert!((used - 0.5 * 0.25 / (1.3 * 0.5)).abs() < 1e-15);
        assert_eq!(p.x, 1.0);
    }

    #[test]
    fn field_flight_matches_fine_integration() {
        let f = Flight {
            alpha: 0.7,
            b_field: 0.9,
            e: [0.3, -0.2],
        };
        let mut p = particle(0.0, 0.4);
        p.mu = 0.0;
        let mut q = p;
        f.drift(&mut p, 0.8);
        // RK4 on the complex ODE
        let om = f.omega();
        let e = Complex64::new(f.e[0], f.e[1]);
        let mut v = q.v_perp();
        let mut xi = Complex64::new(0.0, 0.0);
        let n = 20000;
        let h = 0.8 / n as f64;
        let rhs = |v: Complex64| Complex64::new(0.0, om) * v - e / f.alpha;
        for _ in 0..n {
            let k1 = rhs(v);
            let k2 = rhs(v + 0.5 * h * k1);
            let k3 = rhs(v + 0.5 * h * k2);
            let k4 = rhs(v + h * k3);
            let x1 = v;
            let x2 = v + 0.5 * h * k1;
            let x3 = v + 0.5 * h * k2;
            let x4 = v + h * k3;
            xi += h / 6.0 * (x1 + 2.0 * x2 + 2.0 * x3 + x4) / f.alpha;
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        q.y = xi.re;
        q.z = xi.im;
        assert!((p.v_perp() - v).norm() < 1e-9);
        assert!((p.y - q.y).abs() < 1e-6 && (p.z - q.z).abs() < 1e-6);
    }

    #[test]
    fn energy_minus_potential_conserved_in_uniform_field() {
        // uniform E = -grad phi with phi = -E . xi
        let f = Flight {
            alpha: 0.4,
            b_field: 0.6,
            e: [0.2, 0.1],
        };
        let mut p = particle(0.2, 1.0);
        let w0 = p.energy() + (f.e[0] * p.y + f.e[1] * p.z);
        f.drift(&mut p, 1.3);
        let w1 = p.energy() + (f.e[0] * p.y + f.e[1] * p.z);
        assert!((w0 - w1).abs() < 1e-12, "{w0} {w1}");
    }

    #[test]
    fn bounce_preserves_speed() {
        let g = SphereGrid::new(2, 8).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        let mut rng = particle_rng(1, 0);
        let mut p = particle(-0.4, 0.0);
        p.x = 0.0;
        let s = p.speed;
        wall_bounce(&mut p, Wall::Left, &k, &mut rng).unwrap();
        assert_eq!(p.speed, s);
        assert!(p.mu > 0.0);
    }

    #[test]
    fn reduced_isotropic_fixed_point() {
        let g = SphereGrid::new(4, 8).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        let mut s = ReducedState::new(&g, 8, 1.0, 1.0, 1.0, |_, _| 1.0).unwrap();
        let dt = s.max_dt(&g);
        for _ in 0..20 {
            relax_step(&mut s, dt, &k).unwrap();
        }
        for c in &s.f {
            assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn reduced_green_identity_and_cfl() {
        let g = SphereGrid::new(4, 8).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        let mut s = ReducedState::new(&g, 16, 0.5, 1.0, 0.8, |x, w| 1.0 + w[1] + x * w[0]).unwrap();
        let dt = 0.7 * s.max_dt(&g);
        for _ in 0..50 {
            let d = relax_step(&mut s, dt, &k).unwrap();
            assert!(d.green_defect() < 1e-10, "{}", d.green_defect());
            assert!(d.l2_after <= d.l2_before + 1e-14);
        }
        let big = 2.0 * s.max_dt(&g);
        assert!(matches!(relax_step(&mut s, big, &k), Err(Error::StepSize { .. })));
    }

    fn mean_energy(ens: &ParticleEnsemble) -> (f64, f64) {
        let e: Vec<f64> = ens.particles.iter().map(|p| p.energy()).collect();
        let n = e.len() as f64;
        let m = e.iter().sum::<f64>() / n;
        let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn maxwellian_mean_energy() {
        let xi = XiGrid::new(1, 1, 1.0, 1.0).unwrap();
        let eg = EnergyGrid::uniform(400, 20.0).unwrap();
        let ens = sample_initial(|_, _, e| (-e).exp(), 20_000, &xi, &eg, 0.5, 4).unwrap();
        let (m, se) = mean_energy(&ens);
        assert!((m - 1.5).abs() < 3.0 * se, "{m} +- {se}");
        assert!(ens.particles.iter().all(|p| p.mu.abs() <= 1.0 && p.x >= 0.0 && p.x <= 1.0));
    }

    #[test]
    fn stratified_batches_fill_the_distribution() {
        let xi = XiGrid::new(4, 1, 1.0, 1.0).unwrap();
        let eg = EnergyGrid::uniform(8, 8.0).unwrap();
        let f = |y: f64, _: f64, e: f64| (-e).exp() * (1.0 + 0.5 * (2.0 * PI * y).cos());
        assert!(sample_initial_stratified(f, 1001, &xi, &eg, 0.5, 1, 10).is_err());
        let ens = sample_initial_stratified(f, 4000, &xi, &eg, 0.5, 1, 10).unwrap();
        assert_eq!(ens.batches, 10);
        let m = estimate_moments(&ens, &xi, &eg).unwrap();
        let iid = estimate_moments(&sample_initial(f, 4000, &xi, &eg, 0.5, 1).unwrap(), &xi, &eg).unwrap();
        // stratified bin counts are nearly exact, so the spread between
        // batches is far below the independent-draw error
        let (s, i): (f64, f64) = (m.f_se.iter().sum(), iid.f_se.iter().sum());
        assert!(s < 0.5 * i, "{s} vs {i}");
        for (b, v) in m.f.iter().enumerate().filter(|(b, _)| b % 8 < 5) {
            let (c, l) = (b / 8, b % 8);
            let (y, _) = xi.center(c / xi.nz, c % xi.nz);
            let exact = f(y, 0.0, eg.centers()[l]);
            assert!((v - exact).abs() < 0.1 * exact + 3.0 * iid.f_se[b], "bin {b}: {v} vs {exact}");
        }
    }

    #[test]
    fn ensemble_independent_of_thread_count() {
        let xi = XiGrid::new(4, 1, 1.0, 1.0).unwrap();
        let eg = EnergyGrid::uniform(8, 8.0).unwrap();
        let g = SphereGrid::new(4, 8).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        let field = ElectricField::Frozen(ScalarProfile::cosine_y(0.0, 0.2));
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = sample_initial(|_, _, e| (-e).exp(), 500, &xi, &eg, 0.3, 9).unwrap();
                let setup = KineticSetup {
                    xi: &xi,
                    kernel: &k,
                    b_field: ScalarProfile::constant(1.0),
                    max_kick: 0.25,
                };
                for _ in 0..10 {
                    step_kinetic(&mut ens, 0.01, &field, &setup).unwrap();
                }
                ens.particles
            })
        };
        assert_eq!(run(1), run(4));
    }
}
