//! Wall reflection operator and its verification suite.
//!
//! A kernel is stored as one `n_h x n_h` matrix `K[a, b] = K(omega'_b -> omega_a)`
//! in hemisphere-local indices, where `a` runs over directions re-emitted into
//! the slab and `b` over directions arriving at the wall. Local indices share
//! `|omega_x|` and the azimuth, so the specular mirror is the identity in
//! local coordinates and the same matrix serves both walls.
//!
//! Weighted inner products use `W_a = |omega_x| w_a`.

use crate::error::{Error, Result};
use crate::sphere::{Hemisphere, SphereFunction, SphereGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The two walls of the slab `x in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    Left,
    Right,
}

impl Wall {
    /// Hemisphere of directions leaving the slab through this wall.
    pub fn outgoing(self) -> Hemisphere {
        match self {
            Wall::Left => Hemisphere::Minus,
            Wall::Right => Hemisphere::Plus,
        }
    }

    /// Hemisphere of directions re-emitted into the slab.
    pub fn incoming(self) -> Hemisphere {
        self.outgoing().flip()
    }

    pub fn x(self) -> f64 {
        match self {
            Wall::Left => 0.0,
            Wall::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    Isotropic,
    Custom,
    /// Pure specular reflection. Violates strict positivity; kept to show
    /// what goes wrong without a contraction on non-constant traces.
    Specular,
    EtaPerturbed { eta: f64 },
}

/// Values on one hemisphere, in local order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub hemi: Hemisphere,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(hemi: Hemisphere, values: Vec<f64>) -> Self {
        Trace { hemi, values }
    }

    pub fn of(f: &SphereFunction, grid: &SphereGrid, hemi: Hemisphere) -> Self {
        Trace {
            hemi,
            values: f.hemisphere(grid, hemi).to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryKernel {
    grid: SphereGrid,
    matrix: DMatrix<f64>,
    kind: KernelKind,
    flux_w: Vec<f64>,
}

impl BoundaryKernel {
    fn from_matrix(grid: &SphereGrid, mut matrix: DMatrix<f64>, kind: KernelKind, rescale: bool) -> Self {
        let flux_w = grid.flux_weights();
        if rescale {
            for b in 0..matrix.ncols() {
                let s: f64 = (0..matrix.nrows()).map(|a| matrix[(a, b)] * flux_w[a]).sum();
                matrix.column_mut(b).iter_mut().for_each(|v| *v /= s);
            }
        }
        BoundaryKernel {
            grid: grid.clone(),
            matrix,
            kind,
            flux_w,
        }
    }

    /// Knudsen cosine law, `K = 1/pi`.
    pub fn isotropic(grid: &SphereGrid) -> Self {
        let n = grid.hemisphere_len();
        Self::from_matrix(grid, DMatrix::from_element(n, n, 1.0 / PI), KernelKind::Isotropic, true)
    }

    /// A kernel from raw positive values `raw[a, b] = K(omega'_b -> omega_a)`,
    /// rescaled per arriving direction so that the normal flux is conserved.
    pub fn custom(raw: DMatrix<f64>, grid: &SphereGrid) -> Result<Self> {
        let n = grid.hemisphere_len();
        if raw.nrows() != n || raw.ncols() != n {
            return Err(Error::Contract(format!(
                "kernel matrix is {}x{}, grid hemisphere has {n} nodes",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if let Some(v) = raw.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("kernel entries must be positive, found {v}")));
        }
        Ok(Self::from_matrix(grid, raw, KernelKind::Custom, true))
    }

    /// Build a custom kernel from a function of `(omega_in, omega_out)`, both
    /// given with the sign of `omega_x` of their own hemisphere at the left wall.
    pub fn custom_from_fn<F: Fn([f64; 3], [f64; 3]) -> f64>(grid: &SphereGrid, f: F) -> Result<Self> {
        let n = grid.hemisphere_len();
        let raw = DMatrix::from_fn(n, n, |a, b| {
            let (ia, ka) = (a / grid.n_phi(), a % grid.n_phi());
            let (ib, kb) = (b / grid.n_phi(), b % grid.n_phi());
            f(grid.omega(Hemisphere::Plus, ia, ka), grid.omega(Hemisphere::Minus, ib, kb))
        });
        Self::custom(raw, grid)
    }

    /// Specular reflection `omega -> (-omega_x, omega_y, omega_z)`.
    pub fn specular(grid: &SphereGrid) -> Self {
        let n = grid.hemisphere_len();
        let w = grid.flux_weights();
        let m = DMatrix::from_fn(n, n, |a, b| if a == b { 1.0 / w[a] } else { 0.0 });
        Self::from_matrix(grid, m, KernelKind::Specular, false)
    }

    /// `K_eta = K P + (1 / (1 + eta)) J Q`. Exempt from flux conservation.
    pub fn eta_perturbed(&self, eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Validation(format!("eta must be positive, got {eta}")));
        }
        let n = self.matrix.nrows();
        let w = &self.flux_w;
        let rows: Vec<f64> = (0..n)
            .map(|a| (0..n).map(|b| self.matrix[(a, b)] * w[b]).sum())
            .collect();
        let c = 1.0 / ((1.0 + eta) * PI);
        let m = DMatrix::from_fn(n, n, |a, b| self.matrix[(a, b)] - rows[a] / PI + c);
        Ok(BoundaryKernel {
            grid: self.grid.clone(),
            matrix: m,
            kind: KernelKind::EtaPerturbed { eta },
            flux_w: self.flux_w.clone(),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `|omega_x| w` on one hemisphere, local order.
    pub fn flux_weights(&self) -> &[f64] {
        &self.flux_w
    }

    pub fn is_isotropic(&self) -> bool {
        self.kind == KernelKind::Isotropic
    }

    /// `(K g)_a = sum_b K[a, b] W_b g_b` in local indices.
    pub fn apply_local(&self, g: &[f64]) -> Vec<f64> {
        let gw = DVector::from_iterator(g.len(), g.iter().zip(&self.flux_w).map(|(v, w)| v * w));
        (&self.matrix * gw).iter().copied().collect()
    }

    /// `(K* h)_b = sum_a K[a, b] W_a h_a` in local indices.
    pub fn adjoint_local(&self, h: &[f64]) -> Vec<f64> {
        let hw = DVector::from_iterator(h.len(), h.iter().zip(&self.flux_w).map(|(v, w)| v * w));
        (self.matrix.tr_mul(&hw)).iter().copied().collect()
    }

    fn check_trace(&self, t: &Trace, want: Hemisphere, what: &str) -> Result<()> {
        if t.hemi != want {
            return Err(Error::Contract(format!(
                "{what} expects a trace on the {want:?} hemisphere, got {:?}",
                t.hemi
            )));
        }
        if t.values.len() != self.grid.hemisphere_len() {
            return Err(Error::Contract(format!(
                "trace has {} values, hemisphere has {}",
                t.values.len(),
                self.grid.hemisphere_len()
            )));
        }
        Ok(())
    }

    /// Reflect the trace arriving at `wall` into the re-emitted trace.
    pub fn apply_k(&self, wall: Wall, g: &Trace) -> Result<Trace> {
        self.check_trace(g, wall.outgoing(), "apply_k")?;
        Ok(Trace::new(wall.incoming(), self.apply_local(&g.values)))
    }

    /// Adjoint of [`apply_k`](Self::apply_k) for the `|omega_x|`-weighted products.
    pub fn apply_k_adjoint(&self, wall: Wall, h: &Trace) -> Result<Trace> {
        self.check_trace(h, wall.incoming(), "apply_k_adjoint")?;
        Ok(Trace::new(wall.outgoing(), self.adjoint_local(&h.values)))
    }

    /// `Q f = (1/pi) int f |omega_x| d omega`, a constant.
    pub fn project_q(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.flux_w).map(|(v, w)| v * w).sum::<f64>() / PI
    }

    pub fn project_p(&self, f: &[f64]) -> Vec<f64> {
        let q = self.project_q(f);
        f.iter().map(|v| v - q).collect()
    }

    pub fn weighted_dot(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.flux_w).map(|((a, b), w)| a * b * w).sum()
    }

    pub fn weighted_norm2(&self, f: &[f64]) -> f64 {
        self.weighted_dot(f, f)
    }

    /// Matrix of `g -> K g` acting on plain local value vectors.
    fn action(&self) -> DMatrix<f64> {
        let w = DVector::from_column_slice(&self.flux_w);
        let mut a = self.matrix.clone();
        for (b, mut col) in a.column_iter_mut().enumerate() {
            col *= w[b];
        }
        a
    }

    fn q_matrix(&self) -> DMatrix<f64> {
        let n = self.flux_w.len();
        DMatrix::from_fn(n, n, |_, b| self.flux_w[b] / PI)
    }

    /// Singular values of `I - J K*` in the symmetrized weighted form.
    pub fn fixed_point_singular_values(&self) -> Vec<f64> {
        let n = self.flux_w.len();
        let s: Vec<f64> = self.flux_w.iter().map(|w| w.sqrt()).collect();
        let m = DMatrix::from_fn(n, n, |a, b| {
            let id = if a == b { 1.0 } else { 0.0 };
            id - s[a] * self.matrix[(b, a)] * s[b]
        });
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sv
    }

    /// Numerical null-space dimension of `I - J K*`.
    pub fn null_dim(&self, tol: f64) -> usize {
        self.fixed_point_singular_values().iter().filter(|s| **s < tol).count()
    }

    /// Largest singular value of `K P` in the weighted norms. Values below the
    /// numerical-rank threshold of the operator are reported as exactly zero.
    pub fn k0(&self) -> f64 {
        let n = self.flux_w.len();
        let s: Vec<f64> = self.flux_w.iter().map(|w| w.sqrt()).collect();
        let kp = self.action() * (DMatrix::identity(n, n) - self.q_matrix());
        let sym = DMatrix::from_fn(n, n, |a, b| s[a] * kp[(a, b)] / s[b]);
        let full = DMatrix::from_fn(n, n, |a, b| s[a] * self.matrix[(a, b)] * s[b]);
        let scale = full.singular_values().max();
        let top = sym.singular_values().max();
        if top <= n as f64 * f64::EPSILON * scale {
            0.0
        } else {
            top
        }
    }

    /// Draw a re-emitted direction for a particle arriving with direction
    /// `omega` at `wall`. Only kernels with a continuous sampler are supported.
    pub fn sample_reemission<R: Rng + ?Sized>(&self, wall: Wall, omega: [f64; 3], rng: &mut R) -> Result<[f64; 3]> {
        let sign = wall.incoming().sign();
        match self.kind {
            KernelKind::Isotropic => {
                let mu = rng.random::<f64>().sqrt();
                let psi = 2.0 * PI * rng.random::<f64>();
                let s = (1.0 - mu * mu).max(0.0).sqrt();
                Ok([sign * mu, s * psi.cos(), s * psi.sin()])
            }
            KernelKind::Specular => Ok([sign * omega[0].abs(), omega[1], omega[2]]),
            _ => Err(Error::Config(format!(
                "no particle sampler registered for kernel kind {:?}",
                self.kind
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraDefects {
    /// `max |K Q+ - Q- K|`
    pub kq_minus_qk: f64,
    /// `max |K Q+ - J Q+|`
    pub kq_minus_jq: f64,
    /// `max |K P+ - P- K|`
    pub kp_minus_pk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kind: KernelKind,
    pub flux_defect: f64,
    pub norm_defect: f64,
    pub reciprocity_defect: f64,
    /// Smallest Darrozes-Guiraud margin `|f|^2 - |K f|^2` over random traces.
    pub dg_min_margin: f64,
    /// Margin for the constant trace.
    pub dg_constant_margin: f64,
    pub k0: f64,
    pub null_dim: usize,
    pub algebra_defects: AlgebraDefects,
    pub adjoint_defect: f64,
    pub n_random_trials: usize,
}

pub const NULL_TOL: f64 = 1e-8;

pub fn check_kernel(kernel: &BoundaryKernel, n_random_trials: usize, seed: u64) -> KernelReport {
    let n = kernel.flux_w.len();
    let w = &kernel.flux_w;
    let m = &kernel.matrix;
    let n_phi = kernel.grid.n_phi();

    let flux_defect = (0..n)
        .map(|b| ((0..n).map(|a| m[(a, b)] * w[a]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let norm_defect = (0..n)
        .map(|a| ((0..n).map(|b| m[(a, b)] * w[b]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let tilde = |a: usize| {
        let (i, k) = (a / n_phi, a % n_phi);
        i * n_phi + (k + n_phi / 2) % n_phi
    };
    let mut reciprocity_defect: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            reciprocity_defect = reciprocity_defect.max((m[(a, b)] - m[(tilde(b), tilde(a))]).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dg_min_margin = f64::INFINITY;
    let mut adjoint_defect: f64 = 0.0;
    for _ in 0..n_random_trials {
        let offset = rng.random_range(-1.0..1.0);
        let f: Vec<f64> = (0..n).map(|_| offset + rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kf = kernel.apply_local(&f);
        let margin = kernel.weighted_norm2(&f) - kernel.weighted_norm2(&kf);
        dg_min_margin = dg_min_margin.min(margin);
        let lhs = kernel.weighted_dot(&kf, &g);
        let rhs = kernel.weighted_dot(&f, &kernel.adjoint_local(&g));
        adjoint_defect = adjoint_defect.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    if n_random_trials == 0 {
        dg_min_margin = 0.0;
    }
    let ones = vec![1.0; n];
    let dg_constant_margin = kernel.weighted_norm2(&ones) - kernel.weighted_norm2(&kernel.apply_local(&ones));

    let a = kernel.action();
    let q = kernel.q_matrix();
    let id = DMatrix::<f64>::identity(n, n);
    let p = &id - &q;
    let kq = &a * &q;
    let algebra_defects = AlgebraDefects {
        kq_minus_qk: (&kq - &q * &a).amax(),
        kq_minus_jq: (&kq - &q).amax(),
        kp_minus_pk: (&a * &p - &p * &a).amax(),
    };

    KernelReport {
        kind: kernel.kind,
        flux_defect,
        norm_defect,
        reciprocity_defect,
        dg_min_margin,
        dg_constant_margin,
        k0: kernel.k0(),
        null_dim: kernel.null_dim(NULL_TOL),
        algebra_defects,
        adjoint_defect,
        n_random_trials,
    }
}

/// Specular mirror `omega -> (-omega_x, omega_y, omega_z)` on a full sphere function.
pub fn apply_mirror(f: &SphereFunction, grid: &SphereGrid) -> Result<SphereFunction> {
    if f.values.len() != grid.len() {
        return Err(Error::Contract("sphere function does not match grid".into()));
    }
    let n = grid.hemisphere_len();
    let mut values = Vec::with_capacity(grid.len());
    values.extend_from_slice(&f.values[n..]);
    values.extend_from_slice(&f.values[..n]);
    Ok(SphereFunction::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SphereGrid {
        SphereGrid::new(4, 16).unwrap()
    }

    fn anisotropic(g: &SphereGrid) -> BoundaryKernel {
        BoundaryKernel::custom_from_fn(g, |w, wp| 1.0 / PI + 0.1 * w[1] * wp[1]).unwrap()
    }

    #[test]
    fn isotropic_examples() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        let n = g.hemisphere_len();
        let c = k.apply_local(&vec![2.5; n]);
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-13));
        let wy = g.sample_hemisphere(Hemisphere::Minus, |w| w[1]);
        assert!(k.apply_local(&wy).iter().all(|v| v.abs() < 1e-15));
        let mu = g.sample_hemisphere(Hemisphere::Minus, |w| w[0].abs());
        assert!(k.apply_local(&mu).iter().all(|v| (v - 2.0 / 3.0).abs() < 1e-13));
        let r = check_kernel(&k, 10, 1);
        assert!(r.flux_defect < 1e-12);
        assert_eq!(r.k0, 0.0);
        assert_eq!(r.null_dim, 1);
    }

    #[test]
    fn custom_examples() {
        let g = grid();
        let iso = BoundaryKernel::isotropic(&g);
        let n = g.hemisphere_len();
        let same = BoundaryKernel::custom(DMatrix::from_element(n, n, 1.0 / PI), &g).unwrap();
        assert!((same.matrix() - iso.matrix()).amax() < 1e-15);

        let k = anisotropic(&g);
        let r = check_kernel(&k, 50, 7);
        assert!(r.flux_defect < 1e-12);
        assert!(r.k0 > 0.0 && r.k0 < 1.0, "k0 = {}", r.k0);
        // rank one perturbation: 0.1 * int |mu| omega_y^2 over a hemisphere
        assert!((r.k0 - 0.1 * PI / 4.0).abs() < 1e-12);
        assert!(r.algebra_defects.kq_minus_qk < 1e-12);
        assert!(r.algebra_defects.kq_minus_jq < 1e-12);
        assert!(r.algebra_defects.kp_minus_pk < 1e-12);
        assert!(r.dg_min_margin >= -1e-12);
        assert_eq!(r.null_dim, 1);

        let mut bad = DMatrix::from_element(n, n, 1.0);
        bad[(3, 4)] = 0.0;
        assert!(matches!(BoundaryKernel::custom(bad, &g), Err(Error::Validation(_))));
    }

    #[test]
    fn hemisphere_contract() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        let n = g.hemisphere_len();
        let wrong = Trace::new(Hemisphere::Plus, vec![1.0; n]);
        assert!(matches!(k.apply_k(Wall::Left, &wrong), Err(Error::Contract(_))));
        assert!(k.apply_k(Wall::Right, &wrong).is_ok());
        assert!(matches!(k.apply_k_adjoint(Wall::Right, &wrong), Err(Error::Contract(_))));
        let out = k.apply_k_adjoint(Wall::Left, &wrong).unwrap();
        assert_eq!(out.hemi, Hemisphere::Minus);
        assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn adjoint_of_isotropic_is_constant() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        let h = g.sample_hemisphere(Hemisphere::Plus, |w| w[0] + w[1] * w[2] + 0.3);
        let out = k.adjoint_local(&h);
        assert!(out.iter().all(|v| (v - out[0]).abs() < 1e-14));
    }

    #[test]
    fn mirror_examples() {
        let g = grid();
        let wx = g.sample(|w| w[0]);
        let m = apply_mirror(&wx, &g).unwrap();
        let neg = g.sample(|w| -w[0]);
        assert_eq!(m, neg);
        let wy = g.sample(|w| w[1]);
        assert_eq!(apply_mirror(&wy, &g).unwrap(), wy);
        let f = g.sample(|w| w[0] * w[0] * w[2] + w[0]);
        assert_eq!(apply_mirror(&apply_mirror(&f, &g).unwrap(), &g).unwrap(), f);
    }

    #[test]
    fn projections() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        let n = g.hemisphere_len();
        assert!((k.project_q(&vec![3.0; n]) - 3.0).abs() < 1e-13);
        assert!(k.project_p(&vec![3.0; n]).iter().all(|v| v.abs() < 1e-13));
        let wy = g.sample_hemisphere(Hemisphere::Plus, |w| w[1]);
        assert!(k.project_q(&wy).abs() < 1e-15);
        let f: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let q = k.project_q(&f);
        assert!((k.project_q(&vec![q; n]) - q).abs() < 1e-12);
    }

    #[test]
    fn eta_kernel() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        assert!(k.eta_perturbed(0.0).is_err());
        assert!(k.eta_perturbed(-1.0).is_err());
        let n = g.hemisphere_len();
        let eta = 0.25;
        let ke = k.eta_perturbed(eta).unwrap();
        assert!(ke.apply_local(&vec![2.0; n]).iter().all(|v| (v - 2.0 / (1.0 + eta)).abs() < 1e-13));

        let a = anisotropic(&g);
        let mut prev = f64::INFINITY;
        for eta in [1e-1, 1e-2, 1e-3] {
            let d = (a.eta_perturbed(eta).unwrap().matrix() - a.matrix()).amax();
            assert!(d < eta / PI * 1.0001 && d < prev);
            prev = d;
        }
    }

    #[test]
    fn specular_has_large_null_space() {
        let g = SphereGrid::new(2, 4).unwrap();
        let k = BoundaryKernel::specular(&g);
        assert_eq!(k.null_dim(NULL_TOL), g.hemisphere_len());
        let f: Vec<f64> = (0..g.hemisphere_len()).map(|i| i as f64).collect();
        let out = k.apply_local(&f);
        for (a, b) in out.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flux_is_conserved_at_the_wall() {
        let g = grid();
        let k = anisotropic(&g);
        let f = g.sample_hemisphere(Hemisphere::Minus, |w| 1.0 + w[1] + 0.5 * w[0] * w[2]);
        let kf = k.apply_local(&f);
        let out: f64 = f.iter().zip(k.flux_weights()).map(|(a, w)| a * w).sum();
        let inn: f64 = kf.iter().zip(k.flux_weights()).map(|(a, w)| a * w).sum();
        assert!((out - inn).abs() < 1e-12);
    }

    #[test]
    fn cosine_law_sampler() {
        let g = grid();
        let k = BoundaryKernel::isotropic(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            let w = k.sample_reemission(Wall::Left, [-0.5, 0.5, std::f64::consts::FRAC_1_SQRT_2], &mut rng).unwrap();
            assert!(w[0] > 0.0);
            s += w[0];
        }
        let mean = s / n as f64;
        // std of mu under density 2 mu is sqrt(1/2 - 4/9)
        let se = (0.5f64 - 4.0 / 9.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 2.0 / 3.0).abs() < 4.0 * se);
        let custom = anisotropic(&g);
        assert!(matches!(
            custom.sample_reemission(Wall::Left, [-1.0, 0.0, 0.0], &mut rng),
            Err(Error::Config(_))
        ));
    }
}
