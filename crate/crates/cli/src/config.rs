//! Run configuration: one JSON document, SI units in the key names.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use gemtomo::calibration::{AxesSearch, FocusObjective, FocusSearch};
use gemtomo::constants::RB87_MASS;
use gemtomo::forward::imprint_phase;
use gemtomo::scenarios::{
    bitmap_phase, checkerboard_phase, coil_phase_map, flat_spinwave, two_pulse_spinwave, CloudParams, CoilParams,
    PatternPlane, TwoPulseParams,
};
use gemtomo::{
    AxisSpec, CalibParams, ComplexField3D, DecoherenceParams, DetectorConfig, ForwardMethod, ForwardOptions, GridSpec,
    PhysicsParams, RealField3D,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Far-field camera geometry; the pixel grid follows the readout grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSetup {
    pub focal_length_m: f64,
    /// Transverse radius of the object, sets the side-band filter.
    pub support_radius_m: f64,
    pub lo_amplitude: f64,
    pub frames_per_delay: usize,
    pub shot_noise: bool,
}

impl Default for DetectorSetup {
    fn default() -> Self {
        Self {
            focal_length_m: 0.25,
            support_radius_m: 0.19e-3,
            lo_amplitude: 100.0,
            frames_per_delay: 100,
            shot_noise: true,
        }
    }
}

impl DetectorSetup {
    pub fn build(&self, kx: &AxisSpec, ky: &AxisSpec, k0: f64, seed: u64) -> CliResult<DetectorConfig> {
        let mut cfg =
            DetectorConfig::far_field(kx, ky, k0, self.focal_length_m, self.support_radius_m, self.lo_amplitude)?;
        cfg.frames_per_delay = self.frames_per_delay;
        cfg.shot_noise = self.shot_noise;
        cfg.rng_seed = seed;
        cfg.validate()?;
        cfg.check_band()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thermal {
    pub k_sw_rad_per_m: f64,
    pub mass_kg: f64,
}

impl Default for Thermal {
    fn default() -> Self {
        Self { k_sw_rad_per_m: 36355.0, mass_kg: RB87_MASS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Flat {
        #[serde(default)]
        cloud: CloudParams,
    },
    Checkerboard {
        #[serde(default)]
        cloud: CloudParams,
        tile_row_m: f64,
        tile_col_m: f64,
        amplitude_rad: f64,
        #[serde(default)]
        plane: PatternPlane,
    },
    /// 8-bit binary PGM, path relative to the config file.
    Bitmap {
        #[serde(default)]
        cloud: CloudParams,
        path: PathBuf,
        pixel_m: [f64; 2],
        amplitude_rad: f64,
        #[serde(default)]
        plane: PatternPlane,
    },
    TwoPulse {
        #[serde(default)]
        cloud: CloudParams,
        #[serde(default)]
        pulses: TwoPulseParams,
    },
    Coil {
        #[serde(default)]
        cloud: CloudParams,
        #[serde(default)]
        coil: CoilParams,
    },
}

impl Scenario {
    pub fn cloud(&self) -> &CloudParams {
        match self {
            Scenario::Flat { cloud }
            | Scenario::Checkerboard { cloud, .. }
            | Scenario::Bitmap { cloud, .. }
            | Scenario::TwoPulse { cloud, .. }
            | Scenario::Coil { cloud, .. } => cloud,
        }
    }

    /// The flat reference cloud.
    pub fn reference(&self, grid: &GridSpec) -> CliResult<ComplexField3D> {
        Ok(flat_spinwave(grid, self.cloud())?)
    }

    pub fn spin_wave(&self, grid: &GridSpec, beta_bar: f64, base_dir: &Path) -> CliResult<ComplexField3D> {
        let flat = self.reference(grid)?;
        match self {
            Scenario::Flat { .. } => Ok(flat),
            Scenario::TwoPulse { cloud, pulses } => Ok(two_pulse_spinwave(grid, cloud, pulses, beta_bar)?),
            _ => {
                let phase = self.target_phase(grid, beta_bar, base_dir)?.expect("phase scenario");
                Ok(imprint_phase(&flat, &phase)?)
            }
        }
    }

    /// Phase of `S/S_ref` the reconstruction should reproduce. For the coil
    /// this is the differential map with the uniform bias-field phase removed.
    pub fn target_phase(&self, grid: &GridSpec, beta_bar: f64, base_dir: &Path) -> CliResult<Option<RealField3D>> {
        Ok(match self {
            Scenario::Flat { .. } => None,
            Scenario::Checkerboard { tile_row_m, tile_col_m, amplitude_rad, plane, .. } => {
                Some(checkerboard_phase(grid, *tile_row_m, *tile_col_m, *amplitude_rad, *plane)?)
            }
            Scenario::Bitmap { path, pixel_m, amplitude_rad, plane, .. } => {
                let raster = read_pgm(&base_dir.join(path))?;
                Some(bitmap_phase(grid, &raster, *pixel_m, *amplitude_rad, *plane)?)
            }
            Scenario::TwoPulse { pulses, .. } => {
                let q = 2.0 * PI * pulses.delta_t * beta_bar;
                let a = pulses.alpha;
                Some(RealField3D::from_fn(*grid, |[_, _, z]| {
                    let th = q * z;
                    (a * th.sin()).atan2(1.0 + a * th.cos())
                }))
            }
            Scenario::Coil { coil, .. } => {
                let mut phi = coil_phase_map(grid, coil)?;
                let bias = coil_phase_map(grid, &CoilParams { current: 0.0, ..*coil })?;
                phi.values -= &bias.values;
                Some(phi)
            }
        })
    }
}

pub fn read_pgm(path: &Path) -> CliResult<Array2<u8>> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsParams,
    pub calib: CalibParams,
    pub detector: DetectorSetup,
    pub grid: GridSpec,
    /// Readout times in seconds.
    pub times: AxisSpec,
    pub scenario: Scenario,
    /// Applied to the forward signal when `forward.include_decay` is set and
    /// compensated in reconstruction.
    pub decoherence: Option<DecoherenceParams>,
    pub forward: ForwardOptions,
    pub focus_search: FocusSearch,
    pub axes_search: AxesSearch,
    pub thermal: Thermal,
    pub mask_threshold: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (beta0, dt, nt) = (1.4e8, 100e-9, 600);
        let physics = PhysicsParams::new(beta0, 0.0, 0.0, 2.0 * PI / 795e-9, gemtomo::Complex64::new(1.0e4, 0.0))
            .expect("default physics");
        let dz = 1.0 / (beta0 * dt * nt as f64);
        Self {
            physics,
            calib: CalibParams::matched(&physics, 0.0),
            detector: DetectorSetup::default(),
            grid: GridSpec::centered([64, 64, 256], [15e-6, 15e-6, dz]).expect("default grid"),
            times: AxisSpec::centered(nt, dt).expect("default times"),
            scenario: Scenario::Checkerboard {
                cloud: CloudParams::default(),
                tile_row_m: 1e-3,
                tile_col_m: 0.1e-3,
                amplitude_rad: 2.0,
                plane: PatternPlane::Zx,
            },
            decoherence: None,
            forward: ForwardOptions::default(),
            // L4 of a pure phase object (the default scenario) is smallest in focus
            focus_search: FocusSearch { objective: FocusObjective::Minimize, ..Default::default() },
            axes_search: AxesSearch::default(),
            thermal: Thermal::default(),
            mask_threshold: 0.1,
            seed: 1,
        }
    }
}

fn field(path: &str, r: gemtomo::Result<()>) -> CliResult<()> {
    r.map_err(|e| CliError::Validation(format!("{path}: {e}")))
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        field("physics", self.physics.validate())?;
        field("calib", self.calib.validate())?;
        field("grid", self.grid.validate())?;
        field("times", self.times.validate())?;
        field("forward", self.forward.validate())?;
        field("scenario.cloud", self.scenario.cloud().validate())?;
        if let Some(d) = &self.decoherence {
            field("decoherence", d.validate())?;
        }
        if self.forward.decoherence.is_some() {
            return Err(CliError::Validation(
                "forward.decoherence: set the top-level \"decoherence\" entry instead".into(),
            ));
        }
        if self.forward.include_decay && self.decoherence.is_none() {
            return Err(CliError::Validation("forward.include_decay: requires \"decoherence\"".into()));
        }
        let d = &self.detector;
        if !(d.focal_length_m > 0.0 && d.support_radius_m > 0.0 && d.lo_amplitude > 0.0) {
            return Err(CliError::Validation(
                "detector: focal_length_m, support_radius_m and lo_amplitude must be positive".into(),
            ));
        }
        if d.frames_per_delay == 0 {
            return Err(CliError::Validation("detector.frames_per_delay: must be at least 1".into()));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(CliError::Validation("mask_threshold: must lie in (0, 1)".into()));
        }
        match &self.scenario {
            Scenario::TwoPulse { pulses, .. } => field("scenario.pulses", pulses.validate())?,
            Scenario::Coil { coil, .. } => field("scenario.coil", coil.validate())?,
            _ => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Forward options with the configured decoherence attached.
    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions { decoherence: self.decoherence, ..self.forward }
    }

    /// `--grid NXxNYxNZ`: keeps the steps, recentres every axis.
    pub fn set_grid(&mut self, spec: &str) -> CliResult<()> {
        let n: Vec<usize> = spec
            .split('x')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Validation(format!("--grid {spec}: expected NXxNYxNZ")))?;
        if n.len() != 3 {
            return Err(CliError::Validation(format!("--grid {spec}: expected NXxNYxNZ")));
        }
        let g = self.grid;
        self.grid = GridSpec::centered([n[0], n[1], n[2]], [g.x.step, g.y.step, g.z.step])
            .map_err(|e| CliError::Validation(format!("--grid {spec}: {e}")))?;
        Ok(())
    }

    /// `--times N@DT`: centred readout window.
    pub fn set_times(&mut self, spec: &str) -> CliResult<()> {
        let bad = || CliError::Validation(format!("--times {spec}: expected N@DT, e.g. 600@100e-9"));
        let (n, dt) = spec.split_once('@').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        let dt: f64 = dt.trim().parse().map_err(|_| bad())?;
        self.times = AxisSpec::centered(n, dt).map_err(|e| CliError::Validation(format!("--times {spec}: {e}")))?;
        Ok(())
    }

    pub fn set_method(&mut self, method: ForwardMethod) {
        self.forward.method = method;
    }
}
