use std::path::{Path, PathBuf};
use std::time::Instant;

use gemtomo::calibration::{
    calibrate_axes, calibrate_focus, calibrate_focus_referenced, fit_decay, DecayMode, ThermalContext,
};
use gemtomo::forward::{apply_decay, forward, forward_fft, forward_splitstep};
use gemtomo::gemt::{self, Dtype};
use gemtomo::heterodyne::detect_signal;
use gemtomo::reconstruct::{masked_phase_rmse, normalize_and_mask, reconstruct};
use gemtomo::{CalibParams, ComplexField3D, ForwardOptions, GridSpec, KSpaceSignal, ReconstructOptions};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::render::{cut, to_image, write_profiles, RenderMode, SliceSpec};

pub fn write_json(path: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_signal(path: &Path) -> CliResult<KSpaceSignal> {
    Ok(gemt::signal_from_gemt(gemt::read_file(path)?)?)
}

fn write_signal(path: &Path, sig: &KSpaceSignal) -> CliResult<()> {
    Ok(gemt::write_file(path, &gemt::signal_to_gemt(sig, Dtype::Complex64))?)
}

fn read_field(path: &Path) -> CliResult<ComplexField3D> {
    Ok(gemt::field_from_gemt(gemt::read_file(path)?)?)
}

fn write_field(path: &Path, f: &ComplexField3D) -> CliResult<()> {
    Ok(gemt::write_file(path, &gemt::field_to_gemt(f, Dtype::Complex64))?)
}

/// `foo.gemt` → `foo.<ext>`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub struct Ctx {
    pub cfg: RunConfig,
    /// Relative scenario paths resolve against this directory.
    pub base_dir: PathBuf,
}

impl Ctx {
    fn spin_wave(&self, reference: bool) -> CliResult<ComplexField3D> {
        let c = &self.cfg;
        if reference {
            c.scenario.reference(&c.grid)
        } else {
            c.scenario.spin_wave(&c.grid, c.physics.beta_bar(), &self.base_dir)
        }
    }
}

pub fn scenario(ctx: &Ctx, out: &Path, reference: bool) -> CliResult<()> {
    write_field(out, &ctx.spin_wave(reference)?)
}

pub fn simulate(ctx: &Ctx, out: &Path, reference: bool, skip_detector: bool) -> CliResult<()> {
    let c = &ctx.cfg;
    let s = ctx.spin_wave(reference)?;
    let fopt = c.forward_options();
    let mut sig = forward(&s, &c.physics, &c.times, &fopt)?;
    if fopt.include_decay {
        sig = apply_decay(&sig, c.decoherence.as_ref().expect("validated"));
    }
    if !skip_detector {
        sig = run_detector(c, &sig)?;
    }
    write_signal(out, &sig)
}

fn run_detector(c: &RunConfig, sig: &KSpaceSignal) -> CliResult<KSpaceSignal> {
    let det = c.detector.build(&sig.kx, &sig.ky, c.physics.k0, c.seed)?;
    Ok(detect_signal(sig, &det)?)
}

pub fn detect(ctx: &Ctx, input: &Path, out: &Path) -> CliResult<()> {
    let sig = read_signal(input)?;
    write_signal(out, &run_detector(&ctx.cfg, &sig)?)
}

#[derive(Serialize)]
struct ReconstructReport {
    signal: PathBuf,
    reference: Option<PathBuf>,
    field: PathBuf,
    calib: CalibParams,
    grid: GridSpec,
    mask_threshold: f64,
    mask_fraction: Option<f64>,
    masked_phase_rmse_rad: Option<f64>,
    elapsed_s: f64,
}

fn recon_options(c: &RunConfig) -> ReconstructOptions {
    ReconstructOptions { decoherence: c.decoherence, z_axis: Some(c.grid.z) }
}

/// Writes the field and, with a reference signal, `ρ = S/S_ref` and its mask
/// beside it (`.rho.gemt`, `.mask.gemt`).
pub fn reconstruct_cmd(ctx: &Ctx, input: &Path, reference: Option<&Path>, out: &Path) -> CliResult<()> {
    let start = Instant::now();
    let c = &ctx.cfg;
    let opt = recon_options(c);
    let field = reconstruct(&read_signal(input)?, &c.physics, &c.calib, &opt)?;
    write_field(out, &field)?;
    let (mut fraction, mut rmse) = (None, None);
    if let Some(rpath) = reference {
        let r_ref = reconstruct(&read_signal(rpath)?, &c.physics, &c.calib, &opt)?;
        let (rho, mask) = normalize_and_mask(&field, &r_ref, c.mask_threshold)?;
        fraction = Some(mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64);
        if let Some(target) = c.scenario.target_phase(field.grid(), c.physics.beta_bar(), &ctx.base_dir)? {
            rmse = Some(masked_phase_rmse(&rho, &target, &mask)?);
        }
        write_field(&sibling(out, "rho.gemt"), &rho)?;
        gemt::write_file(sibling(out, "mask.gemt"), &gemt::mask_to_gemt(&mask, field.grid()))?;
    }
    write_json(
        Some(&sibling(out, "json")),
        &ReconstructReport {
            signal: input.to_path_buf(),
            reference: reference.map(Path::to_path_buf),
            field: out.to_path_buf(),
            calib: c.calib,
            grid: *field.grid(),
            mask_threshold: c.mask_threshold,
            mask_fraction: fraction,
            masked_phase_rmse_rad: rmse,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
    )
}

#[derive(Serialize)]
struct CalibrationReport {
    focus: gemtomo::calibration::FocusResult,
    axes: Option<gemtomo::calibration::AxesResult>,
    calib: CalibParams,
}

/// Focus search: against the reference signal when one is given, otherwise
/// on L4 sharpness alone. With a reference and a scenario that defines a
/// target phase, also the axis scales and rotation.
pub fn calibrate(ctx: &Ctx, input: &Path, reference: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let c = &ctx.cfg;
    let sig = read_signal(input)?;
    let sig_ref = reference.map(read_signal).transpose()?;
    let opt = recon_options(c);
    let focus = match &sig_ref {
        Some(r) => calibrate_focus_referenced(&sig, r, &c.physics, &c.calib, &opt, &c.focus_search)?,
        None => calibrate_focus(&sig, &c.physics, &c.calib, &opt, &c.focus_search)?,
    };
    let mut calib = CalibParams { z0: focus.z0, zeta: focus.zeta, ..c.calib };
    let mut axes = None;
    if let Some(sig_ref) = &sig_ref {
        if let Some(target) = c.scenario.target_phase(&c.grid, c.physics.beta_bar(), &ctx.base_dir)? {
            let r = reconstruct(&sig, &c.physics, &calib, &opt)?;
            let r_ref = reconstruct(sig_ref, &c.physics, &calib, &opt)?;
            let (rho, _) = normalize_and_mask(&r, &r_ref, c.mask_threshold)?;
            let a = calibrate_axes(&rho, &target, &c.axes_search)?;
            calib = CalibParams { sx: a.sx, sy: a.sy, sz: a.sz, rotation_xy: a.rotation, ..calib };
            axes = Some(a);
        }
    }
    write_json(out, &CalibrationReport { focus, axes, calib })
}

#[derive(Deserialize)]
struct DecayRow {
    t_s: f64,
    amplitude: f64,
}

pub fn read_decay_csv(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let headers = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_s", "amplitude"] {
        return Err(CliError::Io(format!("{}: header must be `t_s,amplitude`", path.display())));
    }
    let (mut t, mut a) = (Vec::new(), Vec::new());
    for row in r.deserialize::<DecayRow>() {
        let row = row.map_err(|e| CliError::io(path, e))?;
        t.push(row.t_s);
        a.push(row.amplitude);
    }
    Ok((t, a))
}

pub fn fit_decay_cmd(ctx: &Ctx, input: &Path, mode: DecayMode, out: Option<&Path>) -> CliResult<()> {
    let (t, a) = read_decay_csv(input)?;
    let c = &ctx.cfg;
    let thermal =
        ThermalContext { k_sw: c.thermal.k_sw_rad_per_m, beta_bar: c.physics.beta_bar(), mass: c.thermal.mass_kg };
    write_json(out, &fit_decay(&t, &a, mode, &thermal)?)
}

pub fn render(
    input: &Path,
    reference: Option<&Path>,
    slice: SliceSpec,
    mode: RenderMode,
    threshold: f64,
    out: &Path,
) -> CliResult<()> {
    let field = read_field(input)?;
    let (shown, mask) = match reference {
        Some(r) => normalize_and_mask(&field, &read_field(r)?, threshold)?,
        None => {
            let peak = field.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            let mask = field.values().mapv(|v| v.norm() > threshold * peak);
            (field, mask)
        }
    };
    let plane = cut(&shown, &mask, slice)?;
    to_image(&plane, mode).save(out).map_err(|e| CliError::io(out, e))?;
    write_profiles(&plane, &sibling(out, "csv"))
}

#[derive(Serialize)]
struct OracleReport {
    grid: GridSpec,
    n_times: usize,
    rel_diff_no_diffraction: f64,
    rel_diff_substeps: Vec<(usize, f64)>,
    convergence_ratio: f64,
    elapsed_s: f64,
}

/// forward_fft against the split-step integrator on the configured (small)
/// grid.
pub fn oracle(ctx: &Ctx, out: Option<&Path>) -> CliResult<()> {
    let start = Instant::now();
    let c = &ctx.cfg;
    let s = ctx.spin_wave(false)?;
    let base = ForwardOptions { decoherence: None, include_decay: false, ..c.forward };
    let off = ForwardOptions { include_diffraction: false, ..base };
    let rel = |o: &ForwardOptions| -> CliResult<f64> {
        let a = forward_splitstep(&s, &c.physics, &c.times, o)?;
        let b = forward_fft(&s, &c.physics, &c.times, o)?;
        Ok(a.relative_difference(&b))
    };
    let d_off = rel(&off)?;
    let mut steps = Vec::new();
    for n in [2, 4, 8] {
        steps.push((n, rel(&ForwardOptions { include_diffraction: true, z_substeps_per_cell: n, ..base })?));
    }
    write_json(
        out,
        &OracleReport {
            grid: c.grid,
            n_times: c.times.n,
            rel_diff_no_diffraction: d_off,
            convergence_ratio: steps[1].1 / steps[2].1,
            rel_diff_substeps: steps,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
    )
}
