//! Orchestration behind the command line: one function per subcommand,
//! each writing its CSV and JSON artifacts into the output directory.

use crate::auxiliary::chi_components;
use crate::config::{Config, DopingSpec, FieldSpec, KineticMode};
use crate::error::{Error, Result};
use crate::field::{solve_poisson, ElectricField, FieldState, XiGrid, NEUTRALITY_TOL};
use crate::io::{write_csv, write_json};
use crate::kernel::{check_kernel, BoundaryKernel, KernelReport};
use crate::kinetic::{
    deposit_density, estimate_moments, relax_step, sample_initial_stratified, step_kinetic, KineticSetup, MomentFields,
    ReducedState,
};
use crate::she::{matched_doping, run_she, DosChoice, FieldMode, SheRunReport, SheState, Snapshot};
use crate::sphere::{EnergyGrid, SphereGrid};
use crate::tensor::{assemble_d, check_positivity, msd_oracle, tabulate_d, DiffTensorTable, MsdEstimate};
use log::info;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Envelope written as `<command>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Config,
    pub wall_clock_s: f64,
    pub files: Vec<PathBuf>,
    pub result: T,
}

fn finish<T: Serialize>(command: &str, cfg: &Config, out: &Path, start: Instant, mut files: Vec<PathBuf>, result: T) -> Result<RunReport<T>> {
    let json = out.join(format!("{command}.json"));
    files.push(json.clone());
    let rep = RunReport {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.run.seed,
        config: cfg.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        files,
        result,
    };
    write_json(&json, &rep)?;
    Ok(rep)
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn cmd_check_kernel(cfg: &Config, out: &Path) -> Result<RunReport<KernelReport>> {
    let start = Instant::now();
    prepare(out)?;
    let report = check_kernel(&cfg.kernel()?, 100, cfg.run.seed);
    finish("check-kernel", cfg, out, start, Vec::new(), report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxComponentReport {
    pub mean: f64,
    pub residual_norm: f64,
    pub boundary_defect: f64,
    pub green_defect: f64,
    pub residual_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxReport {
    pub b: f64,
    pub epsilon: f64,
    pub chi_y: AuxComponentReport,
    pub chi_z: AuxComponentReport,
}

pub fn cmd_aux(cfg: &Config, out: &Path) -> Result<RunReport<AuxReport>> {
    let start = Instant::now();
    prepare(out)?;
    let kernel = cfg.kernel()?;
    let grid = kernel.grid();
    let (sy, sz) = chi_components(cfg.aux.b, cfg.aux.epsilon, &kernel, cfg.grid.n_x)?;
    let mut rows = Vec::with_capacity(sy.x.len() * grid.len());
    for (j, x) in sy.x.iter().enumerate() {
        for idx in 0..grid.len() {
            let (h, i, k) = grid.split(idx);
            rows.push(vec![
                *x,
                grid.mu_abs()[i],
                grid.phi(k),
                h.sign(),
                sy.chi[j].values[idx],
                sz.chi[j].values[idx],
            ]);
        }
    }
    let csv = out.join("aux.csv");
    write_csv(&csv, &["x", "mu", "phi", "sigma", "chi_y", "chi_z"], rows)?;
    let comp = |s: &crate::auxiliary::AuxiliarySolution| AuxComponentReport {
        mean: s.mean,
        residual_norm: s.residual_norm,
        boundary_defect: s.boundary_defect,
        green_defect: s.green_defect,
        residual_points: s.residual_points,
    };
    let rep = AuxReport {
        b: cfg.aux.b,
        epsilon: cfg.aux.epsilon,
        chi_y: comp(&sy),
        chi_z: comp(&sz),
    };
    finish("aux", cfg, out, start, vec![csv], rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleComparison {
    pub b: f64,
    pub epsilon: f64,
    pub estimate: MsdEstimate,
    pub target: [[f64; 2]; 2],
    /// Each component within `max(3 stderr, 10 % of |target|)`.
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorReport {
    pub n_entries: usize,
    pub min_lambda: f64,
    pub max_norm: f64,
    pub oracle: Vec<OracleComparison>,
}

/// Oracle agreement rule: `|est - target| <= max(3 se, 0.1 |target|)` per component.
pub fn oracle_agrees(est: &MsdEstimate, target: &[[f64; 2]; 2]) -> bool {
    (0..2).all(|i| {
        (0..2).all(|j| {
            let tol = (3.0 * est.stderr[i][j]).max(0.1 * target[i][j].abs());
            (est.mean[i][j] - target[i][j]).abs() <= tol
        })
    })
}

pub fn cmd_tensor(cfg: &Config, out: &Path, oracle: bool) -> Result<RunReport<TensorReport>> {
    let start = Instant::now();
    prepare(out)?;
    let kernel = cfg.kernel()?;
    let xi = cfg.xi_grid()?;
    let egrid = cfg.energy_grid()?;
    let table = tabulate_d(&cfg.physics.b_field, &xi, &egrid, &kernel)?;
    let mut comparisons: Vec<OracleComparison> = Vec::new();
    let mut header = vec!["xi_y", "xi_z", "epsilon", "D_yy", "D_yz", "D_zy", "D_zz", "lambda_min"];
    if oracle {
        header.extend([
            "msd_yy", "msd_yz", "msd_zz", "msd_se_yy", "msd_se_yz", "msd_se_zz", "target_yy", "target_yz", "target_zz",
            "agree",
        ]);
    }
    let mut rows = Vec::with_capacity(table.entries.len());
    for d in &table.entries {
        let mut row = vec![d.xi_y, d.xi_z, d.epsilon, d.d_yy, d.d_yz, d.d_zy, d.d_zz, check_positivity(d)];
        if oracle {
            let key = (d.b_field.to_bits(), d.epsilon.to_bits());
            let pos = comparisons
                .iter()
                .position(|c| (c.b.to_bits(), c.epsilon.to_bits()) == key);
            let c = match pos {
                Some(p) => &comparisons[p],
                None => {
                    let seed = cfg.run.seed.wrapping_add(comparisons.len() as u64);
                    let est = msd_oracle(
                        d.b_field,
                        d.epsilon,
                        &kernel,
                        cfg.tensor.oracle_particles,
                        cfg.tensor.oracle_t_final,
                        seed,
                    )?;
                    let target = crate::tensor::msd_target(d);
                    comparisons.push(OracleComparison {
                        b: d.b_field,
                        epsilon: d.epsilon,
                        agree: oracle_agrees(&est, &target),
                        estimate: est,
                        target,
                    });
                    comparisons.last().expect("just pushed")
                }
            };
            let (m, s, t) = (c.estimate.mean, c.estimate.stderr, c.target);
            row.extend([
                m[0][0],
                m[0][1],
                m[1][1],
                s[0][0],
                s[0][1],
                s[1][1],
                t[0][0],
                t[0][1],
                t[1][1],
                if c.agree { 1.0 } else { 0.0 },
            ]);
        }
        rows.push(row);
    }
    let csv = out.join("tensor.csv");
    write_csv(&csv, &header, rows)?;
    let rep = TensorReport {
        n_entries: table.entries.len(),
        min_lambda: table.min_lambda(),
        max_norm: table.entries.iter().map(|d| d.norm()).fold(0.0, f64::max),
        oracle: comparisons,
    };
    finish("tensor", cfg, out, start, vec![csv], rep)
}

fn field_mode(cfg: &Config, f: &[f64], dos: &[f64], xi: &XiGrid, egrid: &EnergyGrid) -> Result<FieldMode> {
    Ok(match cfg.physics.field {
        FieldSpec::Zero => FieldMode::Zero,
        FieldSpec::Frozen => FieldMode::Frozen(cfg.physics.potential),
        FieldSpec::SelfConsistent => FieldMode::SelfConsistent {
            doping: match cfg.physics.doping {
                DopingSpec::Matched => matched_doping(f, dos, egrid, xi.len())?,
                DopingSpec::Profile(p) => p.sample(xi),
            },
            neutralize: cfg.run.neutralize,
        },
    })
}

/// Build an SHE state for the configuration on the given grids.
pub fn she_state(cfg: &Config, xi: &XiGrid, egrid: &EnergyGrid, table: DiffTensorTable, dos: DosChoice) -> Result<SheState> {
    let init = cfg.physics.initial;
    let f0 = |y: f64, z: f64, e: f64| init.eval(xi, y, z, e);
    let mut s = SheState::new(f0, xi.clone(), egrid.clone(), table, FieldMode::Zero, dos)?;
    let mode = field_mode(cfg, &s.f, &s.dos, xi, egrid)?;
    s = SheState::new(f0, xi.clone(), egrid.clone(), s.tensor, mode, dos)?;
    s.c_safe = cfg.run.c_safe;
    Ok(s)
}

const SNAPSHOT_HEADER: [&str; 9] = ["t", "y", "z", "epsilon", "F", "J_y", "J_z", "J_eps", "phi"];

fn snapshot_rows(s: &Snapshot, xi: &XiGrid, egrid: &EnergyGrid) -> Vec<Vec<f64>> {
    let ne = egrid.len();
    let mut rows = Vec::with_capacity(s.f.len());
    for (c, (y, z)) in xi.centers().into_iter().enumerate() {
        for l in 0..ne {
            let p = c * ne + l;
            rows.push(vec![
                s.t,
                y,
                z,
                egrid.centers()[l],
                s.f[p],
                s.current.j_y[p],
                s.current.j_z[p],
                s.current.j_eps[p],
                s.phi[c],
            ]);
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SheReport {
    pub run: SheRunReport,
    pub min_lambda: f64,
    pub field_residual: f64,
    pub max_grad_e: f64,
    pub energy_closure: String,
    pub box_note: String,
}

pub fn cmd_she(cfg: &Config, out: &Path) -> Result<RunReport<SheReport>> {
    let start = Instant::now();
    prepare(out)?;
    let kernel = cfg.kernel()?;
    let xi = cfg.xi_grid()?;
    let egrid = cfg.energy_grid()?;
    let table = tabulate_d(&cfg.physics.b_field, &xi, &egrid, &kernel)?;
    let min_lambda = table.min_lambda();
    let mut state = she_state(cfg, &xi, &egrid, table, cfg.run.dos)?;
    let dt = cfg.run.dt.unwrap_or_else(|| state.max_dt());
    let (run, snaps) = run_she(&mut state, cfg.run.t_final, dt, cfg.run.snapshot_every)?;
    let csv = out.join("she.csv");
    write_csv(&csv, &SNAPSHOT_HEADER, snaps.iter().flat_map(|s| snapshot_rows(s, &xi, &egrid)))?;

    let field = potential_field(&state.phi, &xi)?;
    let fcsv = out.join("field.csv");
    write_csv(
        &fcsv,
        &["y", "z", "phi", "E_y", "E_z"],
        xi.centers()
            .into_iter()
            .enumerate()
            .map(|(c, (y, z))| vec![y, z, field.phi[c], field.e_y[c], field.e_z[c]]),
    )?;
    let rep = SheReport {
        run,
        min_lambda,
        field_residual: field.residual,
        max_grad_e: max_grad_e(&field, &xi),
        energy_closure: "zero energy flux at eps = 0 and at the truncation eps_max".into(),
        box_note: "Poisson solved on a periodic box with zero-mean potential".into(),
    };
    finish("she", cfg, out, start, vec![csv, fcsv], rep)
}

/// Spectral field of a cell-centred potential, via its Laplacian.
fn potential_field(phi: &[f64], xi: &XiGrid) -> Result<FieldState> {
    let rho = crate::field::neg_laplacian(phi, xi);
    let mut s = solve_poisson(&rho, xi, true, NEUTRALITY_TOL)?;
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    for (a, b) in s.phi.iter_mut().zip(phi) {
        *a = *b - mean;
    }
    Ok(s)
}

fn max_grad_e(f: &FieldState, xi: &XiGrid) -> f64 {
    let mut m: f64 = 0.0;
    for iy in 0..xi.ny {
        for iz in 0..xi.nz {
            let c = xi.index(iy, iz);
            let cy = xi.index((iy + 1) % xi.ny, iz);
            let cz = xi.index(iy, (iz + 1) % xi.nz);
            for e in [&f.e_y, &f.e_z] {
                m = m.max((e[cy] - e[c]).abs() / xi.hy());
                m = m.max((e[cz] - e[c]).abs() / xi.hz());
            }
        }
    }
    m
}

/// Refined grids used for initial sampling and the SHE reference.
pub fn refined_grids(cfg: &Config) -> Result<(XiGrid, EnergyGrid)> {
    let g = &cfg.grid;
    let r = cfg.converge.refine_xi;
    let rz = if g.nz > 1 { r } else { 1 };
    Ok((
        XiGrid::new(g.ny * r, g.nz * rz, g.ly, g.lz)?,
        EnergyGrid::uniform(g.n_eps * cfg.converge.refine_eps, g.eps_max)?,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McOutcome {
    pub alpha: f64,
    pub t: f64,
    pub steps: usize,
    pub dt: f64,
    pub bounces: u64,
    pub weight_drift: f64,
    /// Largest change of `eps - phi` over particles, for static fields.
    pub invariant_drift: Option<f64>,
    pub overflow: u64,
    pub empty_bins: usize,
    pub snapshots: Vec<(f64, MomentFields)>,
    pub phi: Vec<f64>,
    pub e_cells: (Vec<f64>, Vec<f64>),
}

fn seed_for(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Particle run for one `alpha`; moments binned on the configured grids.
pub fn run_mc(cfg: &Config, alpha: f64, seed: u64, self_consistent: bool) -> Result<McOutcome> {
    let xi = cfg.xi_grid()?;
    let egrid = cfg.energy_grid()?;
    let (fine_xi, fine_e) = refined_grids(cfg)?;
    let kernel = cfg.kernel()?;
    let init = cfg.physics.initial;
    let mut ens = sample_initial_stratified(
        |y, z, e| init.eval(&fine_xi, y, z, e),
        cfg.run.n_particles,
        &fine_xi,
        &fine_e,
        alpha,
        seed,
        cfg.run.batches,
    )?;
    let w0: f64 = ens.particles.iter().map(|p| p.weight).sum();
    // conserved along exact trajectories in a static potential
    let invariant = |p: &crate::kinetic::Particle| -> f64 {
        match cfg.physics.field {
            FieldSpec::Zero => p.energy(),
            _ => p.energy() - cfg.physics.potential.eval(&xi, p.y, p.z),
        }
    };
    let e0: Vec<f64> = ens.particles.iter().map(invariant).collect();
    let doping = if self_consistent {
        Some(match cfg.physics.doping {
            DopingSpec::Matched => {
                let n = deposit_density(&ens, &xi);
                vec![n.iter().sum::<f64>() / n.len() as f64; n.len()]
            }
            DopingSpec::Profile(p) => p.sample(&xi),
        })
    } else {
        None
    };
    let solve_field = |ens: &crate::kinetic::ParticleEnsemble, doping: &[f64]| -> Result<FieldState> {
        let n = deposit_density(ens, &xi);
        let rho: Vec<f64> = n.iter().zip(doping).map(|(a, b)| a - b).collect();
        solve_poisson(&rho, &xi, cfg.run.neutralize, NEUTRALITY_TOL)
    };
    let frozen = match cfg.physics.field {
        FieldSpec::Zero => ElectricField::Zero,
        FieldSpec::Frozen => ElectricField::Frozen(cfg.physics.potential),
        FieldSpec::SelfConsistent => ElectricField::Zero,
    };
    let mut field = match &doping {
        Some(d) => ElectricField::Grid(solve_field(&ens, d)?),
        None => frozen,
    };
    let setup = KineticSetup {
        xi: &xi,
        kernel: &kernel,
        b_field: cfg.physics.b_field,
        max_kick: cfg.run.max_kick,
    };
    let dt_max = cfg.run.dt_per_alpha * alpha;
    let steps = (cfg.run.t_final / dt_max).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { cfg.run.t_final / steps as f64 };
    let mut bounces = 0;
    let mut snapshots = vec![(0.0, estimate_moments(&ens, &xi, &egrid)?)];
    for k in 1..=steps {
        bounces += step_kinetic(&mut ens, dt, &field, &setup)?.bounces;
        if let Some(d) = &doping {
            field = ElectricField::Grid(solve_field(&ens, d)?);
        }
        if (cfg.run.snapshot_every > 0 && k % cfg.run.snapshot_every == 0) || k == steps {
            snapshots.push((ens.t, estimate_moments(&ens, &xi, &egrid)?));
        }
    }
    let w1: f64 = ens.particles.iter().map(|p| p.weight).sum();
    let invariant_drift = (!self_consistent).then(|| {
        ens.particles
            .iter()
            .zip(&e0)
            .map(|(p, e)| (invariant(p) - e).abs())
            .fold(0.0, f64::max)
    });
    let (phi, e_cells) = match &field {
        ElectricField::Zero => (vec![0.0; xi.len()], (vec![0.0; xi.len()], vec![0.0; xi.len()])),
        ElectricField::Frozen(p) => {
            let phi = p.sample(&xi);
            let e: Vec<[f64; 2]> = xi.centers().iter().map(|(y, z)| field.at(&xi, *y, *z)).collect();
            (phi, (e.iter().map(|v| v[0]).collect(), e.iter().map(|v| v[1]).collect()))
        }
        ElectricField::Grid(s) => (s.phi.clone(), (s.e_y.clone(), s.e_z.clone())),
    };
    let last = &snapshots.last().expect("initial snapshot").1;
    Ok(McOutcome {
        alpha,
        t: ens.t,
        steps,
        dt,
        bounces,
        weight_drift: (w1 - w0).abs() / w0,
        invariant_drift,
        overflow: last.overflow,
        empty_bins: last.empty_bins(),
        snapshots,
        phi,
        e_cells,
    })
}

const MOMENT_HEADER: [&str; 12] = [
    "t", "y", "z", "epsilon", "F", "J_y", "J_z", "J_eps", "phi", "F_se", "J_y_se", "J_z_se",
];

fn moment_rows(out: &McOutcome, xi: &XiGrid, egrid: &EnergyGrid) -> Vec<Vec<f64>> {
    let ne = egrid.len();
    let mut rows = Vec::new();
    for (t, m) in &out.snapshots {
        for (c, (y, z)) in xi.centers().into_iter().enumerate() {
            for l in 0..ne {
                let p = c * ne + l;
                let j_eps = -(out.e_cells.0[c] * m.j_y[p] + out.e_cells.1[c] * m.j_z[p]);
                rows.push(vec![
                    *t,
                    y,
                    z,
                    egrid.centers()[l],
                    m.f[p],
                    m.j_y[p],
                    m.j_z[p],
                    j_eps,
                    out.phi[c],
                    m.f_se[p],
                    m.j_y_se[p],
                    m.j_z_se[p],
                ]);
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub alpha: f64,
    pub steps: usize,
    pub dt: f64,
    pub bounces: u64,
    pub bounces_per_particle: f64,
    pub weight_drift: f64,
    pub invariant_drift: Option<f64>,
    pub overflow: u64,
    pub empty_bins: usize,
}

impl From<&McOutcome> for McSummary {
    fn from(o: &McOutcome) -> Self {
        McSummary {
            alpha: o.alpha,
            steps: o.steps,
            dt: o.dt,
            bounces: o.bounces,
            bounces_per_particle: 0.0,
            weight_drift: o.weight_drift,
            invariant_drift: o.invariant_drift,
            overflow: o.overflow,
            empty_bins: o.empty_bins,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedRun {
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    pub t: Vec<f64>,
    pub l2: Vec<f64>,
    pub anisotropy: Vec<f64>,
    pub wall_anisotropy: Vec<f64>,
    pub green_defect: Vec<f64>,
    /// `int |P gamma_out|^2 dt`.
    pub anisotropy_integral: f64,
    pub l2_non_increasing: bool,
    pub final_anisotropy_ratio: f64,
}

/// Relax `f0 = 1 + omega_y` until the anisotropy falls below `tol` times its
/// initial value or `max_steps` is reached.
pub fn run_reduced(
    kernel: &BoundaryKernel,
    n_x: usize,
    alpha: f64,
    speed: f64,
    b: f64,
    cfl: f64,
    tol: f64,
    max_steps: usize,
) -> Result<ReducedRun> {
    let grid: &SphereGrid = kernel.grid();
    let mut s = ReducedState::new(grid, n_x, alpha, speed, b, |_, w| 1.0 + w[1])?;
    let dt = cfl * s.max_dt(grid);
    let a0 = s.anisotropy(grid);
    let mut run = ReducedRun {
        alpha,
        dt,
        steps: 0,
        t: vec![0.0],
        l2: vec![s.l2_squared(grid)],
        anisotropy: vec![a0],
        wall_anisotropy: vec![0.0],
        green_defect: vec![0.0],
        anisotropy_integral: 0.0,
        l2_non_increasing: true,
        final_anisotropy_ratio: 1.0,
    };
    while run.steps < max_steps && *run.anisotropy.last().expect("nonempty") > tol * a0 {
        let d = relax_step(&mut s, dt, kernel)?;
        run.steps += 1;
        run.anisotropy_integral += d.wall_anisotropy * dt;
        if d.l2_after > d.l2_before {
            run.l2_non_increasing = false;
        }
        run.t.push(s.t);
        run.l2.push(d.l2_after);
        run.anisotropy.push(s.anisotropy(grid));
        run.wall_anisotropy.push(d.wall_anisotropy);
        run.green_defect.push(d.green_defect());
    }
    run.final_anisotropy_ratio = if a0 > 0.0 { run.anisotropy.last().copied().unwrap_or(0.0) / a0 } else { 0.0 };
    Ok(run)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KineticReport {
    pub mode: KineticMode,
    pub mc: Vec<McSummary>,
    pub reduced: Vec<ReducedSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedSummary {
    pub alpha: f64,
    pub steps: usize,
    pub dt: f64,
    pub l2_initial: f64,
    pub l2_final: f64,
    pub l2_non_increasing: bool,
    pub max_green_defect: f64,
    pub final_anisotropy_ratio: f64,
    pub anisotropy_integral: f64,
}

impl From<&ReducedRun> for ReducedSummary {
    fn from(r: &ReducedRun) -> Self {
        ReducedSummary {
            alpha: r.alpha,
            steps: r.steps,
            dt: r.dt,
            l2_initial: r.l2[0],
            l2_final: *r.l2.last().expect("nonempty"),
            l2_non_increasing: r.l2_non_increasing,
            max_green_defect: r.green_defect.iter().copied().fold(0.0, f64::max),
            final_anisotropy_ratio: r.final_anisotropy_ratio,
            anisotropy_integral: r.anisotropy_integral,
        }
    }
}

const REDUCED_TOL: f64 = 1e-8;
const REDUCED_MAX_STEPS: usize = 2_000_000;

fn alpha_tag(a: f64) -> String {
    format!("{a:?}")
}

pub fn cmd_kinetic(cfg: &Config, out: &Path) -> Result<RunReport<KineticReport>> {
    let start = Instant::now();
    prepare(out)?;
    let mut files = Vec::new();
    let mut rep = KineticReport {
        mode: cfg.run.mode,
        mc: Vec::new(),
        reduced: Vec::new(),
    };
    match cfg.run.mode {
        KineticMode::Reduced => {
            let kernel = cfg.kernel()?;
            let mut rows = Vec::new();
            for &alpha in &cfg.physics.alpha {
                let r = run_reduced(
                    &kernel,
                    cfg.grid.n_x,
                    alpha,
                    cfg.run.speed,
                    cfg.physics.b_field.mean,
                    cfg.run.reduced_cfl,
                    REDUCED_TOL,
                    REDUCED_MAX_STEPS,
                )?;
                for k in 0..r.t.len() {
                    rows.push(vec![
                        alpha,
                        k as f64,
                        r.t[k],
                        r.l2[k],
                        r.anisotropy[k],
                        r.wall_anisotropy[k],
                        r.green_defect[k],
                    ]);
                }
                rep.reduced.push((&r).into());
            }
            let csv = out.join("reduced.csv");
            write_csv(
                &csv,
                &["alpha", "step", "t", "l2", "anisotropy", "wall_anisotropy", "green_defect"],
                rows,
            )?;
            files.push(csv);
        }
        mode => {
            let xi = cfg.xi_grid()?;
            let egrid = cfg.energy_grid()?;
            let sc = mode == KineticMode::McSelfconsistent;
            if sc && cfg.physics.field != FieldSpec::SelfConsistent && cfg.physics.field != FieldSpec::Zero {
                return Err(Error::Config("mc-selfconsistent mode needs physics.field = \"self-consistent\"".into()));
            }
            for (k, &alpha) in cfg.physics.alpha.iter().enumerate() {
                let o = run_mc(cfg, alpha, seed_for(cfg.run.seed, k), sc)?;
                let csv = out.join(format!("kinetic_alpha_{}.csv", alpha_tag(alpha)));
                write_csv(&csv, &MOMENT_HEADER, moment_rows(&o, &xi, &egrid))?;
                files.push(csv);
                let mut s = McSummary::from(&o);
                s.bounces_per_particle = o.bounces as f64 / cfg.run.n_particles as f64;
                info!("alpha {alpha}: {} steps, {:.1} bounces per particle", o.steps, s.bounces_per_particle);
                rep.mc.push(s);
            }
        }
    }
    finish("kinetic", cfg, out, start, files, rep)
}

/// Average fine-grid values into the coarse bins, weighting by cell mass.
pub fn aggregate(f: &[f64], fine_xi: &XiGrid, fine_e: &EnergyGrid, xi: &XiGrid, egrid: &EnergyGrid) -> Result<Vec<f64>> {
    let (ne, nf) = (egrid.len(), fine_e.len());
    if !fine_xi.ny.is_multiple_of(xi.ny) || !fine_xi.nz.is_multiple_of(xi.nz) || nf % ne != 0 || fine_e.eps_max() != egrid.eps_max() {
        return Err(Error::Contract("fine grid does not nest in the coarse grid".into()));
    }
    let (ry, rz, re) = (fine_xi.ny / xi.ny, fine_xi.nz / xi.nz, nf / ne);
    let mut num = vec![0.0; xi.len() * ne];
    for fy in 0..fine_xi.ny {
        for fz in 0..fine_xi.nz {
            let fc = fine_xi.index(fy, fz);
            let c = xi.index(fy / ry, fz / rz);
            for lf in 0..nf {
                let w = fine_e.dos_mean()[lf] * fine_e.width(lf) * fine_xi.cell_area();
                num[c * ne + lf / re] += w * f[fc * nf + lf];
            }
        }
    }
    for c in 0..xi.len() {
        for l in 0..ne {
            num[c * ne + l] /= egrid.dos_mean()[l] * egrid.width(l) * xi.cell_area();
        }
    }
    Ok(num)
}

/// Debiased squared distance `sum w ((F_a - F)^2 - se^2)` with
/// `w = 4 pi N d eps d xi`, and its standard error.
pub fn weighted_distance(m: &MomentFields, reference: &[f64], xi: &XiGrid, egrid: &EnergyGrid) -> (f64, f64) {
    let ne = egrid.len();
    let (mut d2, mut var) = (0.0, 0.0);
    for (p, r) in reference.iter().enumerate() {
        let l = p % ne;
        let w = 4.0 * std::f64::consts::PI * egrid.dos_mean()[l] * egrid.width(l) * xi.cell_area();
        let diff2 = (m.f[p] - r).powi(2);
        let se2 = m.f_se[p].powi(2);
        d2 += w * (diff2 - se2);
        var += w * w * (4.0 * (diff2 - se2).max(0.0) * se2 + 2.0 * se2 * se2);
    }
    (d2, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Inconclusive,
    NotConverged,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Converged => 0,
            Verdict::Inconclusive => 4,
            Verdict::NotConverged => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub alpha: f64,
    pub t: f64,
    pub distance: f64,
    pub stderr: f64,
    pub squared: f64,
    pub squared_stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakEstimates {
    pub label: String,
    pub alphas: Vec<f64>,
    pub l2_non_increasing: Vec<bool>,
    pub sup_l2_over_initial: Vec<f64>,
    pub anisotropy_integral: Vec<f64>,
    pub slope: f64,
    pub isotropic_integral: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub rows: Vec<ConvergenceRow>,
    /// `(d2_i - d2_{i+1}) / sqrt(se_i^2 + se_{i+1}^2)` for consecutive alphas.
    pub separations: Vec<f64>,
    pub verdict: Verdict,
    pub she: SheRunReport,
    pub mc: Vec<McSummary>,
    pub weak: WeakEstimates,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Discrete mirrors of the a priori estimates over an `alpha` sweep of the
/// reduced relaxation problem.
pub fn diagnostics_weak_estimates(cfg: &Config) -> Result<WeakEstimates> {
    let kernel = cfg.kernel()?;
    let b = cfg.physics.b_field.mean;
    let mut w = WeakEstimates {
        label: "diagnostic".into(),
        alphas: cfg.physics.alpha.clone(),
        l2_non_increasing: Vec::new(),
        sup_l2_over_initial: Vec::new(),
        anisotropy_integral: Vec::new(),
        slope: f64::NAN,
        isotropic_integral: 0.0,
    };
    for &alpha in &cfg.physics.alpha {
        let r = run_reduced(
            &kernel,
            cfg.grid.n_x,
            alpha,
            cfg.run.speed,
            b,
            cfg.run.reduced_cfl,
            REDUCED_TOL,
            REDUCED_MAX_STEPS,
        )?;
        w.l2_non_increasing.push(r.l2_non_increasing);
        w.sup_l2_over_initial
            .push(r.l2.iter().copied().fold(0.0, f64::max) / r.l2[0]);
        w.anisotropy_integral.push(r.anisotropy_integral);
    }
    if w.alphas.len() >= 2 {
        w.slope = loglog_slope(&w.alphas, &w.anisotropy_integral);
    }
    // equilibrium: no anisotropy at the walls
    let grid = kernel.grid();
    let mut s = ReducedState::new(grid, cfg.grid.n_x, cfg.physics.alpha[0], cfg.run.speed, b, |_, _| 1.0)?;
    let dt = cfg.run.reduced_cfl * s.max_dt(grid);
    for _ in 0..10 {
        w.isotropic_integral += relax_step(&mut s, dt, &kernel)?.wall_anisotropy * dt;
    }
    Ok(w)
}

pub fn cmd_converge(cfg: &Config, out: &Path) -> Result<RunReport<ConvergeReport>> {
    let start = Instant::now();
    prepare(out)?;
    if cfg.physics.alpha.len() < 3 {
        return Err(Error::Config("converge needs at least three alpha values".into()));
    }
    if cfg.physics.field == FieldSpec::SelfConsistent {
        return Err(Error::Config("converge runs with a frozen (or zero) field".into()));
    }
    let xi = cfg.xi_grid()?;
    let egrid = cfg.energy_grid()?;
    let (fine_xi, fine_e) = refined_grids(cfg)?;
    let tgrid = SphereGrid::new(cfg.converge.tensor_n_mu, cfg.grid.n_phi)?;
    let tkernel = cfg.physics.kernel.build(&tgrid)?;
    let table = tabulate_d(&cfg.physics.b_field, &fine_xi, &fine_e, &tkernel)?;
    let mut state = she_state(cfg, &fine_xi, &fine_e, table, DosChoice::CellAverage)?;
    let dt = cfg.run.dt.unwrap_or_else(|| state.max_dt());
    let (she_rep, snaps) = run_she(&mut state, cfg.run.t_final, dt, 0)?;
    let reference = aggregate(&snaps.last().expect("final snapshot").f, &fine_xi, &fine_e, &xi, &egrid)?;

    let mut rows = Vec::new();
    let mut mc = Vec::new();
    for (k, &alpha) in cfg.physics.alpha.iter().enumerate() {
        let o = run_mc(cfg, alpha, seed_for(cfg.run.seed, k), false)?;
        let (t, m) = o.snapshots.last().expect("final moments");
        let (d2, se) = weighted_distance(m, &reference, &xi, &egrid);
        let distance = d2.max(0.0).sqrt();
        let stderr = if distance > 0.0 { se / (2.0 * distance) } else { se.sqrt() };
        rows.push(ConvergenceRow {
            alpha,
            t: *t,
            distance,
            stderr,
            squared: d2,
            squared_stderr: se,
        });
        let mut s = McSummary::from(&o);
        s.bounces_per_particle = o.bounces as f64 / cfg.run.n_particles as f64;
        mc.push(s);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|a, b| rows[*b].alpha.total_cmp(&rows[*a].alpha));
    let mut separations = Vec::new();
    let mut monotone = true;
    let mut separated = true;
    for w in order.windows(2) {
        let (a, b) = (&rows[w[0]], &rows[w[1]]);
        let sep = (a.squared - b.squared) / (a.squared_stderr.powi(2) + b.squared_stderr.powi(2)).sqrt();
        monotone &= a.squared > b.squared;
        separated &= sep >= cfg.converge.separation;
        separations.push(sep);
    }
    let verdict = if monotone && separated {
        Verdict::Converged
    } else if monotone || separations.iter().all(|s| *s > -cfg.converge.separation) {
        Verdict::Inconclusive
    } else {
        Verdict::NotConverged
    };
    let csv = out.join("converge.csv");
    write_csv(
        &csv,
        &["alpha", "t", "distance", "stderr"],
        rows.iter().map(|r| vec![r.alpha, r.t, r.distance, r.stderr]),
    )?;
    let weak = diagnostics_weak_estimates(cfg)?;
    let rep = ConvergeReport {
        rows,
        separations,
        verdict,
        she: she_rep,
        mc,
        weak,
    };
    finish("converge", cfg, out, start, vec![csv], rep)
}

/// Collect every JSON report in `out` into `report.json`.
pub fn cmd_report(out: &Path) -> Result<serde_json::Value> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "report.json"))
        .collect();
    entries.sort();
    let mut map = serde_json::Map::new();
    for p in entries {
        let text = std::fs::read_to_string(&p)?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        map.insert(name, v);
    }
    let v = serde_json::Value::Object(map);
    write_json(&out.join("report.json"), &v)?;
    Ok(v)
}

/// Assemble a single tensor, as used by the acceptance checks.
pub fn tensor_at(b: f64, eps: f64, n_mu: usize, n_phi: usize) -> Result<crate::tensor::DiffTensor> {
    let g = SphereGrid::new(n_mu, n_phi)?;
    assemble_d(b, eps, &BoundaryKernel::isotropic(&g))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.4, 0.2, 0.1];
        let y: Vec<f64> = x.iter().map(|a: &f64| 3.0 * a.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_preserves_mass() {
        let xi = XiGrid::new(2, 1, 1.0, 1.0).unwrap();
        let e = EnergyGrid::uniform(2, 4.0).unwrap();
        let fx = XiGrid::new(4, 1, 1.0, 1.0).unwrap();
        let fe = EnergyGrid::uniform(6, 4.0).unwrap();
        let f: Vec<f64> = (0..24).map(|k| 1.0 + k as f64 * 0.1).collect();
        let g = aggregate(&f, &fx, &fe, &xi, &e).unwrap();
        let mass = |v: &[f64], x: &XiGrid, e: &EnergyGrid| -> f64 {
            (0..v.len())
                .map(|p| v[p] * e.dos_mean()[p % e.len()] * e.width(p % e.len()) * x.cell_area())
                .sum()
        };
        assert!((mass(&f, &fx, &fe) - mass(&g, &xi, &e)).abs() < 1e-12);
        let c = aggregate(&[2.0; 24], &fx, &fe, &xi, &e).unwrap();
        assert!(c.iter().all(|v| (v - 2.0).abs() < 1e-14));
        assert!(aggregate(&f, &fx, &EnergyGrid::uniform(5, 4.0).unwrap(), &xi, &e).is_err());
    }

    #[test]
    fn reduced_sweep_scales_with_alpha_squared() {
        let g = SphereGrid::new(2, 8).unwrap();
        let k = BoundaryKernel::isotropic(&g);
        let ints: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|a| run_reduced(&k, 8, *a, 1.0, 1.0, 0.5, 1e-8, 100_000).unwrap().anisotropy_integral)
            .collect();
        let s = loglog_slope(&[0.4, 0.2, 0.1], &ints);
        assert!((s - 2.0).abs() < 1e-6, "{s}");
    }
}
