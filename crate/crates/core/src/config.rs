//! Run configuration, read from TOML.

use crate::error::{Error, Result};
use crate::field::{ScalarProfile, XiGrid};
use crate::kernel::BoundaryKernel;
use crate::she::DosChoice;
use crate::sphere::{EnergyGrid, SphereGrid};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub run: RunConfig,
    pub aux: AuxConfig,
    pub tensor: TensorConfig,
    pub converge: ConvergeConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Gauss nodes per hemisphere.
    pub n_mu: usize,
    pub n_phi: usize,
    pub n_x: usize,
    pub ny: usize,
    pub nz: usize,
    pub ly: f64,
    pub lz: f64,
    pub n_eps: usize,
    pub eps_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_mu: 8,
            n_phi: 16,
            n_x: 64,
            ny: 8,
            nz: 1,
            ly: 1.0,
            lz: 1.0,
            n_eps: 16,
            eps_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    #[default]
    Isotropic,
    Specular,
    /// Isotropic kernel with its constant part damped by `1 / (1 + eta)`.
    EtaPerturbed { eta: f64 },
    /// `K(omega' -> omega) = 1/pi + coefficient * omega_y omega'_y`, then
    /// normalized to conserve flux.
    Custom { coefficient: f64 },
}

impl KernelSpec {
    pub fn build(&self, grid: &SphereGrid) -> Result<BoundaryKernel> {
        match *self {
            KernelSpec::Isotropic => Ok(BoundaryKernel::isotropic(grid)),
            KernelSpec::Specular => Ok(BoundaryKernel::specular(grid)),
            KernelSpec::EtaPerturbed { eta } => BoundaryKernel::isotropic(grid).eta_perturbed(eta),
            KernelSpec::Custom { coefficient } => {
                BoundaryKernel::custom_from_fn(grid, |a, b| 1.0 / PI + coefficient * a[1] * b[1])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSpec {
    #[default]
    Zero,
    /// `E = -grad phi` with `phi` from `physics.potential`.
    Frozen,
    SelfConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DopingSpec {
    /// Constant, equal to the mean initial density.
    #[default]
    Matched,
    #[serde(untagged)]
    Profile(ScalarProfile),
}

/// `F_I = exp(-eps / temperature) (1 + amplitude cos(2 pi (k_y y / L_y + k_z z / L_z)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub temperature: f64,
    pub amplitude: f64,
    pub k_y: f64,
    pub k_z: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            temperature: 1.0,
            amplitude: 0.2,
            k_y: 1.0,
            k_z: 0.0,
        }
    }
}

impl InitialSpec {
    pub fn eval(&self, xi: &XiGrid, y: f64, z: f64, eps: f64) -> f64 {
        let ph = 2.0 * PI * (self.k_y * y / xi.ly + self.k_z * z / xi.lz);
        (-eps / self.temperature).exp() * (1.0 + self.amplitude * ph.cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub b_field: ScalarProfile,
    pub kernel: KernelSpec,
    pub alpha: Vec<f64>,
    pub field: FieldSpec,
    /// Potential for the frozen-field mode.
    pub potential: ScalarProfile,
    pub doping: DopingSpec,
    pub initial: InitialSpec,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            b_field: ScalarProfile::constant(1.0),
            kernel: KernelSpec::Isotropic,
            alpha: vec![0.4, 0.2, 0.1],
            field: FieldSpec::Zero,
            potential: ScalarProfile::constant(0.0),
            doping: DopingSpec::Matched,
            initial: InitialSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KineticMode {
    #[default]
    Mc,
    Reduced,
    McSelfconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub t_final: f64,
    /// Fixed SHE step; a fraction `c_safe` of the stability bound if absent.
    pub dt: Option<f64>,
    pub c_safe: f64,
    /// Steps between snapshots; 0 keeps only the first and last.
    pub snapshot_every: usize,
    pub seed: u64,
    pub n_particles: usize,
    /// Stratified batches for the initial sampling; 0 draws independently.
    pub batches: usize,
    pub mode: KineticMode,
    /// Macro step of the particle solver in units of `alpha`.
    pub dt_per_alpha: f64,
    /// Bound on `dt max|E| / alpha`.
    pub max_kick: f64,
    pub dos: DosChoice,
    pub neutralize: bool,
    /// Speed of the reduced relaxation problem.
    pub speed: f64,
    /// Reduced-mode step as a fraction of its CFL bound.
    pub reduced_cfl: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_final: 0.5,
            dt: None,
            c_safe: 0.9,
            snapshot_every: 0,
            seed: 1,
            n_particles: 10_000,
            batches: 0,
            mode: KineticMode::Mc,
            dt_per_alpha: 0.05,
            max_kick: 0.25,
            dos: DosChoice::Midpoint,
            neutralize: false,
            speed: 1.0,
            reduced_cfl: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxConfig {
    pub b: f64,
    pub epsilon: f64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig { b: 1.0, epsilon: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TensorConfig {
    pub oracle_particles: usize,
    pub oracle_t_final: f64,
}

impl Default for TensorConfig {
    fn default() -> Self {
        TensorConfig {
            oracle_particles: 20_000,
            oracle_t_final: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    /// The SHE reference and the initial sampling use a grid refined by
    /// these factors relative to the comparison bins.
    pub refine_xi: usize,
    pub refine_eps: usize,
    /// Sphere resolution of the tensor used by the SHE reference.
    pub tensor_n_mu: usize,
    /// Required separation, in combined standard errors.
    pub separation: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig {
            refine_xi: 4,
            refine_eps: 4,
            tensor_n_mu: 64,
            separation: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sphere_grid(&self) -> Result<SphereGrid> {
        SphereGrid::new(self.grid.n_mu, self.grid.n_phi)
    }

    pub fn xi_grid(&self) -> Result<XiGrid> {
        XiGrid::new(self.grid.ny, self.grid.nz, self.grid.ly, self.grid.lz)
    }

    pub fn energy_grid(&self) -> Result<EnergyGrid> {
        EnergyGrid::uniform(self.grid.n_eps, self.grid.eps_max)
    }

    pub fn kernel(&self) -> Result<BoundaryKernel> {
        self.physics.kernel.build(&self.sphere_grid()?)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let bad = |m: String| Err(Error::Validation(m));
        for (name, v) in [
            ("grid.n_mu", g.n_mu),
            ("grid.n_phi", g.n_phi),
            ("grid.n_x", g.n_x),
            ("grid.ny", g.ny),
            ("grid.nz", g.nz),
            ("grid.n_eps", g.n_eps),
            ("converge.refine_xi", self.converge.refine_xi),
            ("converge.refine_eps", self.converge.refine_eps),
            ("converge.tensor_n_mu", self.converge.tensor_n_mu),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("grid.ly", g.ly), ("grid.lz", g.lz), ("grid.eps_max", g.eps_max)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.physics.alpha.is_empty() {
            return bad("physics.alpha must list at least one value".into());
        }
        for a in &self.physics.alpha {
            if !(*a > 0.0 && *a <= 1.0) {
                return bad(format!("physics.alpha values must lie in (0, 1], got {a}"));
            }
        }
        let init = &self.physics.initial;
        if !(init.temperature > 0.0) || init.amplitude.abs() > 1.0 {
            return bad("physics.initial needs temperature > 0 and |amplitude| <= 1".into());
        }
        let r = &self.run;
        if !(r.t_final >= 0.0) || !r.t_final.is_finite() {
            return bad(format!("run.t_final must be >= 0, got {}", r.t_final));
        }
        if let Some(dt) = r.dt {
            if !(dt > 0.0) {
                return bad(format!("run.dt must be positive, got {dt}"));
            }
        }
        for (name, v) in [
            ("run.c_safe", r.c_safe),
            ("run.dt_per_alpha", r.dt_per_alpha),
            ("run.max_kick", r.max_kick),
            ("run.speed", r.speed),
            ("run.reduced_cfl", r.reduced_cfl),
            ("aux.epsilon", self.aux.epsilon),
            ("tensor.oracle_t_final", self.tensor.oracle_t_final),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if r.c_safe > 1.0 || r.reduced_cfl > 1.0 {
            return bad("run.c_safe and run.reduced_cfl must not exceed 1".into());
        }
        if r.n_particles == 0 {
            return bad("run.n_particles must be positive".into());
        }
        if r.batches == 1 || (r.batches > 1 && !r.n_particles.is_multiple_of(r.batches)) {
            return bad(format!(
                "run.batches must be 0 or at least 2 and divide run.n_particles, got {}",
                r.batches
            ));
        }
        Ok(())
    }
}

/// Read, parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    Config::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        let c = Config::from_toml("[grid]\nny = 4\n").unwrap();
        assert_eq!(c.grid.ny, 4);
        assert_eq!(c.grid.n_mu, 8);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Config::from_toml("[grid]\nnyy = 4\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("nyy"), "{e}");
    }

    #[test]
    fn zero_alpha_rejected() {
        let e = Config::from_toml("[physics]\nalpha = [0.0]\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn nested_specs_parse() {
        let c = Config::from_toml(
            r#"
            [physics]
            kernel = { kind = "eta-perturbed", eta = 0.5 }
            field = "frozen"
            potential = { amplitude = 0.3 }
            doping = { mean = 1.0 }
            b_field = { mean = 2.0 }
            [run]
            mode = "mc-selfconsistent"
            dos = "cell_average"
            "#,
        )
        .unwrap();
        assert_eq!(c.physics.kernel, KernelSpec::EtaPerturbed { eta: 0.5 });
        assert_eq!(c.physics.field, FieldSpec::Frozen);
        assert_eq!(c.physics.doping, DopingSpec::Profile(ScalarProfile::constant(1.0)));
        assert_eq!(c.run.mode, KineticMode::McSelfconsistent);
        assert_eq!(c.run.dos, DosChoice::CellAverage);
        let c = Config::from_toml("[physics]\ndoping = \"matched\"\n").unwrap();
        assert_eq!(c.physics.doping, DopingSpec::Matched);
    }
}
