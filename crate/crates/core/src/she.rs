//! Finite-volume solver for the SHE diffusion model
//!
//! ```text
//! 4 pi N(eps) dF/dt + (grad_xi - E d_eps) . J = 0,   J = -D (grad_xi - E d_eps) F
//! ```
//!
//! on a periodic `xi` box times a truncated energy interval with zero
//! energy flux at both ends.
//!
//! The discrete tilde-gradient lives on `xi` faces; its energy part is
//! upwinded. The divergence is its exact negative transpose, so mass is
//! conserved to roundoff and the weighted `L2` norm is dissipated when the
//! symmetric part of `D` is positive.

use crate::error::{Error, Result};
use crate::field::{charge_density, solve_poisson, ScalarProfile, XiGrid, NEUTRALITY_TOL};
use crate::sphere::EnergyGrid;
use crate::tensor::DiffTensorTable;
use log::warn;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const POSITIVITY_TOL: f64 = 1e-12;
pub const TRUNCATION_WARN: f64 = 1e-6;

/// Density of states used in the cell mass `4 pi N_l d eps_l d xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DosChoice {
    /// `sqrt(2 eps)` at the cell center.
    #[default]
    Midpoint,
    /// Exact cell average of `sqrt(2 eps)`; matches particle binning.
    CellAverage,
}

impl DosChoice {
    pub fn values(self, egrid: &EnergyGrid) -> Vec<f64> {
        match self {
            DosChoice::Midpoint => egrid.dos_center().to_vec(),
            DosChoice::CellAverage => egrid.dos_mean().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldMode {
    Zero,
    /// Prescribed potential.
    Frozen(ScalarProfile),
    /// Poisson re-solve after every step.
    SelfConsistent { doping: Vec<f64>, neutralize: bool },
}

type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
struct Stencil {
    /// Face rows indexed `[lower cell * n_eps + l]`; empty when the
    /// direction has a single cell.
    y: Vec<Row>,
    z: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct SheState {
    pub xi: XiGrid,
    pub egrid: EnergyGrid,
    /// Layout `[cell * n_eps + l]`.
    pub f: Vec<f64>,
    pub t: f64,
    /// Cell-centred potential.
    pub phi: Vec<f64>,
    pub tensor: DiffTensorTable,
    pub dos: Vec<f64>,
    pub mode: FieldMode,
    pub c_safe: f64,
    stencil: Stencil,
}

/// Face currents and their cell-centred reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SheCurrent {
    /// Total flux through the y-face above cell `c`, `[c * n_eps + l]`.
    pub face_y: Vec<f64>,
    pub face_z: Vec<f64>,
    pub j_y: Vec<f64>,
    pub j_z: Vec<f64>,
    /// `-E . J` at cell centres.
    pub j_eps: Vec<f64>,
}

fn neighbor(xi: &XiGrid, c: usize, dy: usize, dz: usize) -> usize {
    let (iy, iz) = (c / xi.nz, c % xi.nz);
    xi.index((iy + dy) % xi.ny, (iz + dz) % xi.nz)
}

/// One-sided energy difference at column `c`, level `l`, in direction
/// `dir`; falls back to the inward side at the ends.
fn eps_diff(row: &mut Row, egrid: &EnergyGrid, ne: usize, c: usize, l: usize, dir: f64, scale: f64) {
    if ne < 2 || scale == 0.0 {
        return;
    }
    let forward = if dir > 0.0 { l + 1 < ne } else { l == 0 };
    let (lo, hi) = if forward { (l, l + 1) } else { (l - 1, l) };
    let d = egrid.centers()[hi] - egrid.centers()[lo];
    row.push((c * ne + hi, scale / d));
    row.push((c * ne + lo, -scale / d));
}

fn build_stencil(xi: &XiGrid, egrid: &EnergyGrid, phi: &[f64]) -> Stencil {
    let ne = egrid.len();
    let dir = |n: usize, h: f64, dy: usize, dz: usize| -> Vec<Row> {
        if n < 2 {
            return Vec::new();
        }
        let mut rows = Vec::with_capacity(xi.len() * ne);
        for c0 in 0..xi.len() {
            let c1 = neighbor(xi, c0, dy, dz);
            let e = -(phi[c1] - phi[c0]) / h;
            for l in 0..ne {
                let mut r: Row = vec![(c1 * ne + l, 1.0 / h), (c0 * ne + l, -1.0 / h)];
                if e != 0.0 {
                    eps_diff(&mut r, egrid, ne, c1, l, -e, -0.5 * e);
                    eps_diff(&mut r, egrid, ne, c0, l, e, -0.5 * e);
                }
                rows.push(r);
            }
        }
        rows
    };
    Stencil {
        y: dir(xi.ny, xi.hy(), 1, 0),
        z: dir(xi.nz, xi.hz(), 0, 1),
    }
}

fn apply_row(r: &Row, f: &[f64]) -> f64 {
    r.iter().map(|(p, c)| c * f[*p]).sum()
}

fn l1(r: &Row) -> f64 {
    r.iter().map(|(_, c)| c.abs()).sum()
}

impl SheState {
    /// Sample `F_I` at cell centres and set up the field.
    pub fn new<F: Fn(f64, f64, f64) -> f64>(
        f_init: F,
        xi: XiGrid,
        egrid: EnergyGrid,
        tensor: DiffTensorTable,
        mode: FieldMode,
        dos: DosChoice,
    ) -> Result<Self> {
        let ne = egrid.len();
        if tensor.n_cells != xi.len() || tensor.n_eps != ne {
            return Err(Error::Contract("tensor table does not match the grids".into()));
        }
        let mut f = Vec::with_capacity(xi.len() * ne);
        for (y, z) in xi.centers() {
            for &eps in egrid.centers() {
                let v = f_init(y, z, eps);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "initial data must be nonnegative, got {v} at ({y}, {z}, {eps})"
                    )));
                }
                f.push(v);
            }
        }
        let mut s = SheState {
            dos: dos.values(&egrid),
            phi: vec![0.0; xi.len()],
            stencil: Stencil { y: Vec::new(), z: Vec::new() },
            xi,
            egrid,
            f,
            t: 0.0,
            tensor,
            mode,
            c_safe: 0.9,
        };
        s.update_field()?;
        Ok(s)
    }

    fn update_field(&mut self) -> Result<()> {
        match &self.mode {
            FieldMode::Zero => self.phi.iter_mut().for_each(|p| *p = 0.0),
            FieldMode::Frozen(p) => self.phi = p.sample(&self.xi),
            FieldMode::SelfConsistent { doping, neutralize } => {
                if doping.len() != self.xi.len() {
                    return Err(Error::Contract("doping profile does not match the grid".into()));
                }
                let rho = charge_density(&self.f, &self.dos, &self.egrid, doping)?;
                self.phi = solve_poisson(&rho, &self.xi, *neutralize, NEUTRALITY_TOL)?.phi;
            }
        }
        self.stencil = build_stencil(&self.xi, &self.egrid, &self.phi);
        Ok(())
    }

    pub fn n_eps(&self) -> usize {
        self.egrid.len()
    }

    fn cell_mass(&self, p: usize) -> f64 {
        let l = p % self.n_eps();
        4.0 * PI * self.dos[l] * self.egrid.width(l) * self.xi.cell_area()
    }

    fn link_measure(&self, face: usize) -> f64 {
        self.egrid.width(face % self.n_eps()) * self.xi.cell_area()
    }

    /// `sum 4 pi N F d eps d xi`.
    pub fn mass(&self) -> f64 {
        (0..self.f.len()).map(|p| self.cell_mass(p) * self.f[p]).sum()
    }

    /// `sum 4 pi N F^2 d eps d xi`.
    pub fn weighted_l2(&self) -> f64 {
        (0..self.f.len()).map(|p| self.cell_mass(p) * self.f[p] * self.f[p]).sum()
    }

    /// Mass fraction in the top tenth of the energy cells.
    pub fn truncation_fraction(&self) -> f64 {
        let ne = self.n_eps();
        let top = ne - (ne as f64 * 0.1).ceil().max(1.0) as usize;
        let total = self.mass();
        if total == 0.0 {
            return 0.0;
        }
        let upper: f64 = (0..self.f.len())
            .filter(|p| p % ne >= top)
            .map(|p| self.cell_mass(p) * self.f[p])
            .sum();
        upper / total
    }

    /// Cell-centred field `E = -grad phi` (centred differences).
    pub fn field_at_cells(&self) -> (Vec<f64>, Vec<f64>) {
        let xi = &self.xi;
        let mut ey = vec![0.0; xi.len()];
        let mut ez = vec![0.0; xi.len()];
        for c in 0..xi.len() {
            if xi.ny > 1 {
                let (up, dn) = (neighbor(xi, c, 1, 0), neighbor(xi, c, xi.ny - 1, 0));
                ey[c] = -(self.phi[up] - self.phi[dn]) / (2.0 * xi.hy());
            }
            if xi.nz > 1 {
                let (up, dn) = (neighbor(xi, c, 0, 1), neighbor(xi, c, 0, xi.nz - 1));
                ez[c] = -(self.phi[up] - self.phi[dn]) / (2.0 * xi.hz());
            }
        }
        (ey, ez)
    }

    /// Corner tensor: average of the four surrounding cells.
    fn corner_d(&self, c: usize, l: usize) -> (f64, f64) {
        let cells = [
            c,
            neighbor(&self.xi, c, 1, 0),
            neighbor(&self.xi, c, 0, 1),
            neighbor(&self.xi, c, 1, 1),
        ];
        let (mut yz, mut zy) = (0.0, 0.0);
        for k in cells {
            let d = self.tensor.get(k, l);
            yz += 0.25 * d.d_yz;
            zy += 0.25 * d.d_zy;
        }
        (yz, zy)
    }

    pub fn compute_current(&self) -> SheCurrent {
        let xi = &self.xi;
        let ne = self.n_eps();
        let n = self.f.len();
        let gy: Vec<f64> = self.stencil.y.iter().map(|r| apply_row(r, &self.f)).collect();
        let gz: Vec<f64> = self.stencil.z.iter().map(|r| apply_row(r, &self.f)).collect();
        let mut face_y = vec![0.0; if gy.is_empty() { 0 } else { n }];
        let mut face_z = vec![0.0; if gz.is_empty() { 0 } else { n }];
        for c in 0..xi.len() {
            for l in 0..ne {
                let p = c * ne + l;
                if !gy.is_empty() {
                    let d = 0.5 * (self.tensor.get(c, l).d_yy + self.tensor.get(neighbor(xi, c, 1, 0), l).d_yy);
                    face_y[p] = -d * gy[p];
                }
                if !gz.is_empty() {
                    let d = 0.5 * (self.tensor.get(c, l).d_zz + self.tensor.get(neighbor(xi, c, 0, 1), l).d_zz);
                    face_z[p] = -d * gz[p];
                }
            }
        }
        if !gy.is_empty() && !gz.is_empty() {
            for c in 0..xi.len() {
                let cy = neighbor(xi, c, 1, 0);
                let cz = neighbor(xi, c, 0, 1);
                for l in 0..ne {
                    let (yz, zy) = self.corner_d(c, l);
                    let g_y = 0.5 * (gy[c * ne + l] + gy[cz * ne + l]);
                    let g_z = 0.5 * (gz[c * ne + l] + gz[cy * ne + l]);
                    let jy = -yz * g_z;
                    let jz = -zy * g_y;
                    face_y[c * ne + l] += 0.5 * jy;
                    face_y[cz * ne + l] += 0.5 * jy;
                    face_z[c * ne + l] += 0.5 * jz;
                    face_z[cy * ne + l] += 0.5 * jz;
                }
            }
        }
        let (ey, ez) = self.field_at_cells();
        let mut j_y = vec![0.0; n];
        let mut j_z = vec![0.0; n];
        let mut j_eps = vec![0.0; n];
        for c in 0..xi.len() {
            for l in 0..ne {
                let p = c * ne + l;
                if !face_y.is_empty() {
                    j_y[p] = 0.5 * (face_y[p] + face_y[neighbor(xi, c, xi.ny - 1, 0) * ne + l]);
                }
                if !face_z.is_empty() {
                    j_z[p] = 0.5 * (face_z[p] + face_z[neighbor(xi, c, 0, xi.nz - 1) * ne + l]);
                }
                j_eps[p] = -(ey[c] * j_y[p] + ez[c] * j_z[p]);
            }
        }
        SheCurrent {
            face_y,
            face_z,
            j_y,
            j_z,
            j_eps,
        }
    }

    /// Rate `dF/dt` from face currents.
    fn divergence(&self, cur: &SheCurrent) -> Vec<f64> {
        let mut df = vec![0.0; self.f.len()];
        for (rows, flux) in [(&self.stencil.y, &cur.face_y), (&self.stencil.z, &cur.face_z)] {
            for (k, r) in rows.iter().enumerate() {
                let w = self.link_measure(k) * flux[k];
                for (p, c) in r {
                    df[*p] += c * w;
                }
            }
        }
        for (p, d) in df.iter_mut().enumerate() {
            *d /= self.cell_mass(p);
        }
        df
    }

    /// Gershgorin bound on stable explicit steps, scaled by `c_safe`.
    pub fn max_dt(&self) -> f64 {
        let xi = &self.xi;
        let ne = self.n_eps();
        let cmax_y = self.stencil.y.iter().map(l1).fold(0.0, f64::max);
        let cmax_z = self.stencil.z.iter().map(l1).fold(0.0, f64::max);
        let both = !self.stencil.y.is_empty() && !self.stencil.z.is_empty();
        let mut off = vec![0.0f64; ne];
        for c in 0..xi.len() {
            for (l, o) in off.iter_mut().enumerate() {
                let d = self.tensor.get(c, l);
                *o = o.max(d.d_yz.abs()).max(d.d_zy.abs());
            }
        }
        let mut rows = vec![0.0; self.f.len()];
        for (rows_k, other_max, dy, dz) in [(&self.stencil.y, cmax_z, 1, 0), (&self.stencil.z, cmax_y, 0, 1)] {
            for (k, r) in rows_k.iter().enumerate() {
                let (c, l) = (k / ne, k % ne);
                let c1 = neighbor(xi, c, dy, dz);
                let (d0, d1) = (self.tensor.get(c, l), self.tensor.get(c1, l));
                let diag = if dy == 1 {
                    0.5 * (d0.d_yy + d1.d_yy).abs()
                } else {
                    0.5 * (d0.d_zz + d1.d_zz).abs()
                };
                let mut s = diag * l1(r);
                if both {
                    // two corners, each split over two faces
                    s += off[l] * other_max;
                }
                let w = self.link_measure(k) * s;
                for (p, cp) in r {
                    rows[*p] += cp.abs() * w;
                }
            }
        }
        let mut rmax: f64 = 0.0;
        for (p, r) in rows.iter().enumerate() {
            rmax = rmax.max(r / self.cell_mass(p));
        }
        if rmax == 0.0 {
            f64::INFINITY
        } else {
            self.c_safe * 2.0 / rmax
        }
    }

    /// One explicit Euler step followed by a field update.
    pub fn step(&mut self, dt: f64) -> Result<StepReport> {
        let bound = self.max_dt();
        if !(dt > 0.0) || dt > bound {
            return Err(Error::StepSize { dt, bound });
        }
        let mass_before = self.mass();
        let l2_before = self.weighted_l2();
        let cur = self.compute_current();
        let df = self.divergence(&cur);
        for (f, d) in self.f.iter_mut().zip(&df) {
            *f += dt * d;
        }
        let min = self.f.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -POSITIVITY_TOL {
            return Err(Error::Positivity { min });
        }
        if matches!(self.mode, FieldMode::SelfConsistent { .. }) {
            self.update_field()?;
        }
        self.t += dt;
        let mass = self.mass();
        Ok(StepReport {
            t: self.t,
            mass,
            mass_drift: (mass - mass_before).abs() / mass_before.abs().max(f64::MIN_POSITIVE),
            l2: self.weighted_l2(),
            l2_before,
            cfl: dt / bound * self.c_safe,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: f64,
    pub mass: f64,
    /// Relative change of the mass over the step.
    pub mass_drift: f64,
    pub l2: f64,
    pub l2_before: f64,
    /// `dt` over the unscaled stability bound.
    pub cfl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub f: Vec<f64>,
    pub current: SheCurrent,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SheRunReport {
    pub steps: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub max_mass_drift: f64,
    pub l2: Vec<f64>,
    pub max_cfl: f64,
    pub truncation_fraction: f64,
    pub truncation_warning: bool,
}

pub fn snapshot(state: &SheState) -> Snapshot {
    Snapshot {
        t: state.t,
        f: state.f.clone(),
        current: state.compute_current(),
        phi: state.phi.clone(),
    }
}

/// Advance to `t_final` with a fixed step no larger than `dt`, taking a
/// snapshot every `snapshot_every` steps and at the end.
pub fn run_she(state: &mut SheState, t_final: f64, dt: f64, snapshot_every: usize) -> Result<(SheRunReport, Vec<Snapshot>)> {
    if !(t_final >= 0.0) || !(dt > 0.0) {
        return Err(Error::Validation("t_final must be >= 0 and dt > 0".into()));
    }
    let n_steps = (t_final / dt).ceil() as usize;
    let h = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };
    let mut rep = SheRunReport {
        dt: h,
        times: vec![state.t],
        mass: vec![state.mass()],
        l2: vec![state.weighted_l2()],
        ..Default::default()
    };
    let mut snaps = vec![snapshot(state)];
    for k in 1..=n_steps {
        let s = state.step(h)?;
        rep.steps += 1;
        rep.times.push(s.t);
        rep.mass.push(s.mass);
        rep.l2.push(s.l2);
        rep.max_mass_drift = rep.max_mass_drift.max(s.mass_drift);
        rep.max_cfl = rep.max_cfl.max(s.cfl);
        if ((snapshot_every > 0 && k % snapshot_every == 0) || k == n_steps)
            && snaps.last().map(|s| s.t) != Some(state.t) {
                snaps.push(snapshot(state));
            }
    }
    rep.truncation_fraction = state.truncation_fraction();
    rep.truncation_warning = rep.truncation_fraction > TRUNCATION_WARN;
    if rep.truncation_warning {
        warn!(
            "energy truncation: {:.3e} of the mass sits in the top tenth of the energy grid",
            rep.truncation_fraction
        );
    }
    Ok((rep, snaps))
}

/// Doping equal to the mean initial density, for a neutral start.
pub fn matched_doping(f: &[f64], dos: &[f64], egrid: &EnergyGrid, n_cells: usize) -> Result<Vec<f64>> {
    let n = charge_density(f, dos, egrid, &vec![0.0; n_cells])?;
    let m = n.iter().sum::<f64>() / n_cells as f64;
    Ok(vec![m; n_cells])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DiffTensor;

    fn grids(ny: usize, nz: usize, ne: usize) -> (XiGrid, EnergyGrid) {
        (XiGrid::new(ny, nz, 1.0, 1.0).unwrap(), EnergyGrid::uniform(ne, 8.0).unwrap())
    }

    fn table(d: DiffTensor, xi: &XiGrid, e: &EnergyGrid) -> DiffTensorTable {
        DiffTensorTable::uniform(d, xi.len(), e.len())
    }

    #[test]
    fn uniform_state_is_steady() {
        let (xi, e) = grids(6, 4, 5);
        let t = table(DiffTensor::from_matrix([[1.0, 0.3], [-0.3, 1.0]]), &xi, &e);
        let mut s = SheState::new(|_, _, _| 0.7, xi, e, t, FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let dt = s.max_dt();
        s.step(dt).unwrap();
        assert!(s.f.iter().all(|v| (v - 0.7).abs() < 1e-14));
        let c = s.compute_current();
        assert!(c.j_y.iter().chain(&c.j_z).all(|j| j.abs() < 1e-14));
    }

    #[test]
    fn energy_only_data_has_no_current() {
        let (xi, e) = grids(5, 3, 6);
        let t = table(DiffTensor::identity(), &xi, &e);
        let s = SheState::new(|_, _, eps| (-eps).exp(), xi, e, t, FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let c = s.compute_current();
        assert!(c.face_y.iter().chain(&c.face_z).all(|j| *j == 0.0));
    }

    #[test]
    fn linear_profile_gives_exact_interior_current() {
        let (xi, e) = grids(10, 1, 2);
        let d = DiffTensor::from_matrix([[1.7, 0.2], [0.4, 0.9]]);
        let t = table(d, &xi, &e);
        let s = SheState::new(|y, _, _| 2.0 + 3.0 * y, xi.clone(), e, t, FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let c = s.compute_current();
        // faces away from the periodic seam
        for iy in 0..xi.ny - 1 {
            for l in 0..2 {
                let j = c.face_y[xi.index(iy, 0) * 2 + l];
                assert!((j + 1.7 * 3.0).abs() < 1e-12, "{j}");
            }
        }
    }

    #[test]
    fn mass_conserved_and_l2_dissipated_with_field() {
        let (xi, e) = grids(8, 6, 10);
        let d = DiffTensor::from_matrix([[1.0, 0.4], [-0.1, 0.8]]);
        let t = table(d, &xi, &e);
        let phi = ScalarProfile::cosine_y(0.0, 0.3);
        let mut s = SheState::new(
            |y, z, eps| (-eps).exp() * (1.0 + 0.5 * (6.0 * y).sin() * (4.0 * z).cos()),
            xi,
            e,
            t,
            FieldMode::Frozen(phi),
            DosChoice::CellAverage,
        )
        .unwrap();
        let dt = s.max_dt();
        for _ in 0..200 {
            let r = s.step(dt).unwrap();
            assert!(r.mass_drift < 1e-12, "{}", r.mass_drift);
            assert!(r.l2 <= r.l2_before * (1.0 + 1e-14));
        }
    }

    #[test]
    fn step_size_and_negative_data_rejected() {
        let (xi, e) = grids(4, 4, 4);
        let t = table(DiffTensor::identity(), &xi, &e);
        assert!(matches!(
            SheState::new(|y, _, _| y - 0.5, xi.clone(), e.clone(), t.clone(), FieldMode::Zero, DosChoice::Midpoint),
            Err(Error::Validation(_))
        ));
        let mut s = SheState::new(|y, _, _| 1.0 + y, xi, e, t, FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let big = 1.5 * s.max_dt();
        assert!(matches!(s.step(big), Err(Error::StepSize { .. })));
    }

    #[test]
    fn self_consistent_neutral_start() {
        let (xi, e) = grids(8, 1, 8);
        let t = table(DiffTensor::identity(), &xi, &e);
        let f0 = |y: f64, _: f64, eps: f64| (-eps).exp() * (1.0 + 0.1 * (2.0 * PI * y).cos());
        let mut s = SheState::new(f0, xi.clone(), e.clone(), t.clone(), FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let doping = matched_doping(&s.f, &s.dos, &e, xi.len()).unwrap();
        s.mode = FieldMode::SelfConsistent {
            doping: doping.clone(),
            neutralize: false,
        };
        s.update_field().unwrap();
        assert!(s.phi.iter().sum::<f64>().abs() < 1e-12);
        assert!(s.phi.iter().any(|p| p.abs() > 1e-6));
        let m0 = s.mass();
        let dt = 0.5 * s.max_dt();
        for _ in 0..20 {
            s.step(dt).unwrap();
        }
        assert!(((s.mass() - m0) / m0).abs() < 1e-12);
        // a non-neutral doping is refused
        let bad = FieldMode::SelfConsistent {
            doping: vec![0.0; xi.len()],
            neutralize: false,
        };
        assert!(matches!(
            SheState::new(f0, xi, e, t, bad, DosChoice::Midpoint),
            Err(Error::Neutrality { .. })
        ));
    }

    #[test]
    fn run_reports_and_zero_time() {
        let (xi, e) = grids(8, 8, 8);
        let t = table(DiffTensor::identity(), &xi, &e);
        let mut s = SheState::new(|y, _, eps| (-eps).exp() * (1.0 + 0.2 * (2.0 * PI * y).cos()), xi, e, t, FieldMode::Zero, DosChoice::Midpoint).unwrap();
        let f0 = s.f.clone();
        let (rep, snaps) = run_she(&mut s, 0.0, 0.1, 1).unwrap();
        assert_eq!(rep.steps, 0);
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].f, f0);
        let dt = s.max_dt();
        let (rep, snaps) = run_she(&mut s, 10.0 * dt, dt, 5).unwrap();
        assert_eq!(rep.steps, 10);
        assert_eq!(snaps.len(), 3);
        assert!(rep.max_mass_drift < 1e-12);
        assert!(rep.truncation_warning);
    }

    #[test]
    fn explicit_step_is_first_order_in_time() {
        let (xi, e) = grids(8, 1, 6);
        let t = table(DiffTensor::identity(), &xi, &e);
        let phi = ScalarProfile::cosine_y(0.0, 0.2);
        let run = |k: usize| {
            let mut s = SheState::new(
                |y, _, eps| (-eps).exp() * (1.0 + 0.5 * (2.0 * PI * y).cos()),
                xi.clone(),
                e.clone(),
                t.clone(),
                FieldMode::Frozen(phi),
                DosChoice::Midpoint,
            )
            .unwrap();
            let dt = 0.5 * s.max_dt() / k as f64;
            for _ in 0..20 * k {
                s.step(dt).unwrap();
            }
            s.f
        };
        let (a, b, c) = (run(1), run(2), run(4));
        let diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }
}
