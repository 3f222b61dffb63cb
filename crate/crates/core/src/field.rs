//! Spectral Poisson solver on a periodic `(y, z)` box.

use crate::error::{Error, Result};
use crate::sphere::EnergyGrid;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const NEUTRALITY_TOL: f64 = 1e-10;

/// Periodic cell-centred grid in `xi = (y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiGrid {
    pub ny: usize,
    pub nz: usize,
    pub ly: f64,
    pub lz: f64,
}

impl XiGrid {
    pub fn new(ny: usize, nz: usize, ly: f64, lz: f64) -> Result<Self> {
        if ny == 0 || nz == 0 {
            return Err(Error::Config(format!("xi grid needs ny, nz >= 1 (got {ny}, {nz})")));
        }
        if !(ly > 0.0 && lz > 0.0) || !ly.is_finite() || !lz.is_finite() {
            return Err(Error::Config(format!("box lengths must be positive (got {ly}, {lz})")));
        }
        Ok(XiGrid { ny, nz, ly, lz })
    }

    pub fn len(&self) -> usize {
        self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn hz(&self) -> f64 {
        self.lz / self.nz as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hy() * self.hz()
    }

    pub fn index(&self, iy: usize, iz: usize) -> usize {
        iy * self.nz + iz
    }

    pub fn center(&self, iy: usize, iz: usize) -> (f64, f64) {
        ((iy as f64 + 0.5) * self.hy(), (iz as f64 + 0.5) * self.hz())
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        let mut c = Vec::with_capacity(self.len());
        for iy in 0..self.ny {
            for iz in 0..self.nz {
                c.push(self.center(iy, iz));
            }
        }
        c
    }

    /// Cell containing a point, after periodic wrapping.
    pub fn locate(&self, y: f64, z: f64) -> (usize, usize) {
        let wy = y.rem_euclid(self.ly);
        let wz = z.rem_euclid(self.lz);
        let iy = ((wy / self.hy()) as usize).min(self.ny - 1);
        let iz = ((wz / self.hz()) as usize).min(self.nz - 1);
        (iy, iz)
    }

    pub fn wrap(&self, y: f64, z: f64) -> (f64, f64) {
        (y.rem_euclid(self.ly), z.rem_euclid(self.lz))
    }

    /// Angular wavenumbers in FFT order for `n` points on a period `l`.
    fn wavenumbers(n: usize, l: f64) -> Vec<f64> {
        (0..n)
            .map(|k| {
                let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                2.0 * PI * m / l
            })
            .collect()
    }

    /// Wavenumbers used for first derivatives: the Nyquist mode is dropped.
    fn derivative_wavenumbers(n: usize, l: f64) -> Vec<f64> {
        let mut k = Self::wavenumbers(n, l);
        if n.is_multiple_of(2) {
            k[n / 2] = 0.0;
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub phi: Vec<f64>,
    pub e_y: Vec<f64>,
    pub e_z: Vec<f64>,
    pub rho: Vec<f64>,
    /// `max |-lap phi - rho|` for the (possibly neutralized) source.
    pub residual: f64,
    /// Mean removed from `rho` when neutralization was requested.
    pub removed_mean: f64,
}

impl FieldState {
    pub fn zero(grid: &XiGrid) -> Self {
        let n = grid.len();
        FieldState {
            phi: vec![0.0; n],
            e_y: vec![0.0; n],
            e_z: vec![0.0; n],
            rho: vec![0.0; n],
            residual: 0.0,
            removed_mean: 0.0,
        }
    }

    /// Field at an arbitrary point by periodic bilinear interpolation of the
    /// cell-centred values.
    pub fn sample_e(&self, grid: &XiGrid, y: f64, z: f64) -> [f64; 2] {
        let (wy, wz) = grid.wrap(y, z);
        let sy = wy / grid.hy() - 0.5;
        let sz = wz / grid.hz() - 0.5;
        let fy = sy.floor();
        let fz = sz.floor();
        let ty = sy - fy;
        let tz = sz - fz;
        let iy0 = (fy as isize).rem_euclid(grid.ny as isize) as usize;
        let iz0 = (fz as isize).rem_euclid(grid.nz as isize) as usize;
        let iy1 = (iy0 + 1) % grid.ny;
        let iz1 = (iz0 + 1) % grid.nz;
        let mut e = [0.0; 2];
        for (iy, wy) in [(iy0, 1.0 - ty), (iy1, ty)] {
            for (iz, wz) in [(iz0, 1.0 - tz), (iz1, tz)] {
                let idx = grid.index(iy, iz);
                e[0] += wy * wz * self.e_y[idx];
                e[1] += wy * wz * self.e_z[idx];
            }
        }
        e
    }
}

struct Fft2 {
    ny: usize,
    nz: usize,
    fy: std::sync::Arc<dyn rustfft::Fft<f64>>,
    fz: std::sync::Arc<dyn rustfft::Fft<f64>>,
    iy: std::sync::Arc<dyn rustfft::Fft<f64>>,
    iz: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(ny: usize, nz: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 {
            ny,
            nz,
            fy: p.plan_fft_forward(ny),
            fz: p.plan_fft_forward(nz),
            iy: p.plan_fft_inverse(ny),
            iz: p.plan_fft_inverse(nz),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (ay, az) = if inverse { (&self.iy, &self.iz) } else { (&self.fy, &self.fz) };
        // rows are contiguous in z
        for row in data.chunks_mut(self.nz) {
            az.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.ny];
        for iz in 0..self.nz {
            for iy in 0..self.ny {
                col[iy] = data[iy * self.nz + iz];
            }
            ay.process(&mut col);
            for iy in 0..self.ny {
                data[iy * self.nz + iz] = col[iy];
            }
        }
        if inverse {
            let s = 1.0 / (self.ny * self.nz) as f64;
            data.iter_mut().for_each(|c| *c *= s);
        }
    }

    fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.transform(&mut d, false);
        d
    }

    fn inverse_real(&self, mut d: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut d, true);
        d.iter().map(|c| c.re).collect()
    }
}

/// Spectral `-lap` applied to a periodic field.
pub fn neg_laplacian(v: &[f64], grid: &XiGrid) -> Vec<f64> {
    let fft = Fft2::new(grid.ny, grid.nz);
    let ky = XiGrid::wavenumbers(grid.ny, grid.ly);
    let kz = XiGrid::wavenumbers(grid.nz, grid.lz);
    let mut d = fft.forward(v);
    for iy in 0..grid.ny {
        for iz in 0..grid.nz {
            d[iy * grid.nz + iz] *= ky[iy] * ky[iy] + kz[iz] * kz[iz];
        }
    }
    fft.inverse_real(d)
}

/// Spectral curl `d_y E_z - d_z E_y` of a periodic vector field.
pub fn curl(e_y: &[f64], e_z: &[f64], grid: &XiGrid) -> Vec<f64> {
    let fft = Fft2::new(grid.ny, grid.nz);
    let ky = XiGrid::derivative_wavenumbers(grid.ny, grid.ly);
    let kz = XiGrid::derivative_wavenumbers(grid.nz, grid.lz);
    let a = fft.forward(e_z);
    let b = fft.forward(e_y);
    let mut d = vec![Complex64::new(0.0, 0.0); grid.len()];
    for iy in 0..grid.ny {
        for iz in 0..grid.nz {
            let i = iy * grid.nz + iz;
            d[i] = Complex64::new(0.0, ky[iy]) * a[i] - Complex64::new(0.0, kz[iz]) * b[i];
        }
    }
    fft.inverse_real(d)
}

/// Solve `-lap phi = rho` with `mean(phi) = 0` and `E = -grad phi`.
pub fn solve_poisson(rho: &[f64], grid: &XiGrid, neutralize: bool, tol: f64) -> Result<FieldState> {
    if rho.len() != grid.len() {
        return Err(Error::Contract(format!(
            "rho has {} values, grid has {} cells",
            rho.len(),
            grid.len()
        )));
    }
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    if mean.abs() > tol && !neutralize {
        return Err(Error::Neutrality { mean });
    }
    let removed_mean = if neutralize {
        if mean.abs() > tol {
            log::warn!("non-neutral charge density (mean {mean:e}) removed before the Poisson solve");
        }
        mean
    } else {
        0.0
    };
    let src: Vec<f64> = rho.iter().map(|r| r - removed_mean).collect();

    let fft = Fft2::new(grid.ny, grid.nz);
    let ky = XiGrid::wavenumbers(grid.ny, grid.ly);
    let kz = XiGrid::wavenumbers(grid.nz, grid.lz);
    let dky = XiGrid::derivative_wavenumbers(grid.ny, grid.ly);
    let dkz = XiGrid::derivative_wavenumbers(grid.nz, grid.lz);
    let rho_hat = fft.forward(&src);
    let mut phi_hat = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut ey_hat = phi_hat.clone();
    let mut ez_hat = phi_hat.clone();
    for iy in 0..grid.ny {
        for iz in 0..grid.nz {
            let i = iy * grid.nz + iz;
            let k2 = ky[iy] * ky[iy] + kz[iz] * kz[iz];
            if k2 > 0.0 {
                phi_hat[i] = rho_hat[i] / k2;
            }
            ey_hat[i] = -Complex64::new(0.0, dky[iy]) * phi_hat[i];
            ez_hat[i] = -Complex64::new(0.0, dkz[iz]) * phi_hat[i];
        }
    }
    let phi = fft.inverse_real(phi_hat);
    let e_y = fft.inverse_real(ey_hat);
    let e_z = fft.inverse_real(ez_hat);
    let lap = neg_laplacian(&phi, grid);
    let mean_src = src.iter().sum::<f64>() / src.len() as f64;
    let residual = lap
        .iter()
        .zip(&src)
        .map(|(a, b)| (a - (b - mean_src)).abs())
        .fold(0.0, f64::max);
    Ok(FieldState {
        phi,
        e_y,
        e_z,
        rho: rho.to_vec(),
        residual,
        removed_mean,
    })
}

/// `rho(xi) = sum_l 4 pi N_l F(xi, l) d eps_l - C(xi)` for `F` stored as
/// `F[cell * n_eps + l]`.
pub fn charge_density(f: &[f64], dos: &[f64], egrid: &EnergyGrid, doping: &[f64]) -> Result<Vec<f64>> {
    let ne = egrid.len();
    if dos.len() != ne || f.len() != doping.len() * ne {
        return Err(Error::Contract("charge density inputs have inconsistent sizes".into()));
    }
    Ok(doping
        .iter()
        .enumerate()
        .map(|(c, dop)| {
            let n: f64 = (0..ne).map(|l| 4.0 * PI * dos[l] * f[c * ne + l] * egrid.width(l)).sum();
            n - dop
        })
        .collect())
}

/// A scalar function of `xi` of the form
/// `mean + amplitude * cos(2 pi k y / L_y + 2 pi m z / L_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarProfile {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub k_y: f64,
    #[serde(default)]
    pub k_z: f64,
}

fn one() -> f64 {
    1.0
}

impl ScalarProfile {
    pub fn constant(value: f64) -> Self {
        ScalarProfile {
            mean: value,
            amplitude: 0.0,
            k_y: 1.0,
            k_z: 0.0,
        }
    }

    pub fn cosine_y(mean: f64, amplitude: f64) -> Self {
        ScalarProfile {
            mean,
            amplitude,
            k_y: 1.0,
            k_z: 0.0,
        }
    }

    fn phase(&self, grid: &XiGrid, y: f64, z: f64) -> f64 {
        2.0 * PI * (self.k_y * y / grid.ly + self.k_z * z / grid.lz)
    }

    pub fn eval(&self, grid: &XiGrid, y: f64, z: f64) -> f64 {
        self.mean + self.amplitude * self.phase(grid, y, z).cos()
    }

    pub fn gradient(&self, grid: &XiGrid, y: f64, z: f64) -> [f64; 2] {
        let s = -self.amplitude * self.phase(grid, y, z).sin();
        [s * 2.0 * PI * self.k_y / grid.ly, s * 2.0 * PI * self.k_z / grid.lz]
    }

    pub fn max_abs(&self) -> f64 {
        self.mean.abs() + self.amplitude.abs()
    }

    pub fn sample(&self, grid: &XiGrid) -> Vec<f64> {
        grid.centers().iter().map(|(y, z)| self.eval(grid, *y, *z)).collect()
    }
}

/// Field seen by particles.
#[derive(Debug, Clone)]
pub enum ElectricField {
    Zero,
    /// `E = -grad phi` of a prescribed potential.
    Frozen(ScalarProfile),
    /// Interpolated from a grid solution.
    Grid(FieldState),
}

impl ElectricField {
    pub fn at(&self, grid: &XiGrid, y: f64, z: f64) -> [f64; 2] {
        match self {
            ElectricField::Zero => [0.0, 0.0],
            ElectricField::Frozen(phi) => {
                let g = phi.gradient(grid, y, z);
                [-g[0], -g[1]]
            }
            ElectricField::Grid(state) => state.sample_e(grid, y, z),
        }
    }

    /// Upper bound on `|E|`.
    pub fn max_norm(&self, grid: &XiGrid) -> f64 {
        match self {
            ElectricField::Zero => 0.0,
            ElectricField::Frozen(phi) => {
                let ky = 2.0 * PI * phi.k_y / grid.ly;
                let kz = 2.0 * PI * phi.k_z / grid.lz;
                phi.amplitude.abs() * (ky * ky + kz * kz).sqrt()
            }
            ElectricField::Grid(s) => s
                .e_y
                .iter()
                .zip(&s.e_z)
                .map(|(a, b)| (a * a + b * b).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_manufactured_solution() {
        let g = XiGrid::new(16, 4, 3.0, 2.0).unwrap();
        let k = 2.0 * PI / g.ly;
        let rho: Vec<f64> = g.centers().iter().map(|(y, _)| (k * y).cos()).collect();
        let s = solve_poisson(&rho, &g, false, NEUTRALITY_TOL).unwrap();
        for (i, (y, _)) in g.centers().iter().enumerate() {
            assert!((s.phi[i] - (k * y).cos() / (k * k)).abs() < 1e-12);
            assert!((s.e_y[i] - (k * y).sin() / k).abs() < 1e-12);
            assert!(s.e_z[i].abs() < 1e-12);
        }
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn non_neutral_source_is_rejected() {
        let g = XiGrid::new(8, 8, 1.0, 1.0).unwrap();
        let rho = vec![1.0; g.len()];
        assert!(matches!(
            solve_poisson(&rho, &g, false, NEUTRALITY_TOL),
            Err(Error::Neutrality { .. })
        ));
        let s = solve_poisson(&rho, &g, true, NEUTRALITY_TOL).unwrap();
        assert!((s.removed_mean - 1.0).abs() < 1e-15);
        assert!(s.phi.iter().all(|p| p.abs() < 1e-15));
    }

    #[test]
    fn charge_density_examples() {
        let e = EnergyGrid::uniform(2000, 40.0).unwrap();
        let dos = e.dos_mean().to_vec();
        let f: Vec<f64> = e.centers().iter().map(|x| (-x).exp() / (4.0 * PI)).collect();
        let rho = charge_density(&f, &dos, &e, &[0.0]).unwrap();
        assert!((rho[0] - (PI / 2.0).sqrt()).abs() < 5e-5, "{}", rho[0] - (PI / 2.0).sqrt());
        let rho0 = charge_density(&vec![0.0; 2000], &dos, &e, &[0.0]).unwrap();
        assert_eq!(rho0, vec![0.0]);
    }

    #[test]
    fn field_sampling_is_periodic() {
        let g = XiGrid::new(8, 1, 2.0, 1.0).unwrap();
        let k = 2.0 * PI / g.ly;
        let rho: Vec<f64> = g.centers().iter().map(|(y, _)| (k * y).cos()).collect();
        let s = solve_poisson(&rho, &g, false, NEUTRALITY_TOL).unwrap();
        let a = s.sample_e(&g, 0.3, 0.1);
        let b = s.sample_e(&g, 0.3 + g.ly, 0.1 - 3.0 * g.lz);
        assert!((a[0] - b[0]).abs() < 1e-14);
        let (y0, _) = g.center(3, 0);
        let c = s.sample_e(&g, y0, 0.5);
        assert!((c[0] - s.e_y[3]).abs() < 1e-14);
    }
}
