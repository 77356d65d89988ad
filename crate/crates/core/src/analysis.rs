//! The measurement-pair pipeline: stage sweeps, calibration, crossing-point
//! estimation, frame transforms, weak-value extraction and report emission.
//!
//! A sweep steps the M1 stage through its positions; each position sets the
//! coupling strength `γ(x) = -gain · (x - x_zero)`, runs the joint state
//! through the network, reads the R6 port on the camera and records the pair
//! `(x, ȳ)`. Four sweeps make a run: the three measurement classes plus the
//! shuttered calibration layout. The crossing of the class-1 and class-2
//! sweeps locates `γ = 0` and anchors the analysis frame; inside the frame
//! every data set is compared against the ideal displacement lines and the
//! per-class weak values are re-extracted by least squares.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::camera::{self, CameraConfig, CameraError};
use crate::pathspace::{
    ClassId, Mode, NetworkConfig, NetworkMatrices, PathState, PathspaceError, PlaneId,
};
use crate::pointerlab::{
    couple, propagate_joint, validity_check, FidelityMode, GaussianPointer, JointState,
    PointerReport, PointerlabError, WeakValueMoments, WEAK_MARGIN,
};

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Data-set label of the calibration sweep.
pub const CALIBRATION_CLASS: u8 = 3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("stage positions must be strictly increasing")]
    PositionsNotIncreasing,
    #[error("stage gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("need at least {need} stage positions, got {got}")]
    TooFewPositions { need: usize, got: usize },
    #[error("data sets do not share abscissas at index {index}: {a} vs {b}")]
    AbscissaMismatch { index: usize, a: f64, b: f64 },
    #[error("data sets have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("pairs are not in stage-position order")]
    UnorderedPairs,
    #[error("a middle measurement pair is flagged; crossing point undefined")]
    FlaggedCrossing,
    #[error("sweep lines are parallel (slope difference {0:.3e}); no crossing point")]
    NoCrossing(f64),
    #[error("only {got} usable pairs inside |x'| <= {window} µm; need at least 2")]
    WindowTooNarrow { window: f64, got: usize },
    #[error("fit needs at least two usable pairs with distinct abscissas")]
    FitUnderdetermined,
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Pointer(#[from] PointerlabError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Path(#[from] PathspaceError),
}

/// M1 stage schedule and the beam-shift gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStageConfig", into = "RawStageConfig")]
pub struct StageConfig {
    positions: Vec<f64>,
    x_zero: f64,
    gain: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStageConfig {
    #[serde(default = "default_positions")]
    positions_um: Vec<f64>,
    #[serde(default = "default_x_zero")]
    x_zero_um: f64,
    #[serde(default = "default_gain")]
    gain: f64,
}

fn default_positions() -> Vec<f64> {
    (0..14).map(|i| i as f64 * 100.0).collect()
}

fn default_x_zero() -> f64 {
    650.0
}

fn default_gain() -> f64 {
    1.5
}

impl From<StageConfig> for RawStageConfig {
    fn from(cfg: StageConfig) -> Self {
        RawStageConfig {
            positions_um: cfg.positions,
            x_zero_um: cfg.x_zero,
            gain: cfg.gain,
        }
    }
}

impl TryFrom<RawStageConfig> for StageConfig {
    type Error = AnalysisError;

    fn try_from(raw: RawStageConfig) -> Result<Self> {
        StageConfig::new(raw.positions_um, raw.x_zero_um, raw.gain)
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            positions: default_positions(),
            x_zero: default_x_zero(),
            gain: default_gain(),
        }
    }
}

impl StageConfig {
    pub fn new(positions: Vec<f64>, x_zero: f64, gain: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(AnalysisError::TooFewPositions { need: 1, got: 0 });
        }
        if positions.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(AnalysisError::PositionsNotIncreasing);
        }
        if gain <= 0.0 || !gain.is_finite() {
            return Err(AnalysisError::NonPositiveGain(gain));
        }
        Ok(StageConfig {
            positions,
            x_zero,
            gain,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn x_zero(&self) -> f64 {
        self.x_zero
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Coupling strength produced by stage position `x`.
    pub fn gamma_at(&self, x: f64) -> f64 {
        -self.gain * (x - self.x_zero)
    }
}

/// One `(x, ȳ)` record. Flagged pairs mark empty-port or off-sensor frames;
/// they are kept in place so abscissas stay shared across sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementPair {
    pub x_um: f64,
    pub y_bar_px: f64,
    pub flagged: bool,
}

/// Measurement pairs of one sweep, in stage-position order.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    pub class_id: u8,
    pairs: Vec<MeasurementPair>,
}

impl DataSet {
    pub fn new(class_id: u8, pairs: Vec<MeasurementPair>) -> Result<Self> {
        if pairs
            .windows(2)
            .any(|w| w[1].x_um.partial_cmp(&w[0].x_um) != Some(std::cmp::Ordering::Greater))
        {
            return Err(AnalysisError::UnorderedPairs);
        }
        Ok(DataSet { class_id, pairs })
    }

    pub fn pairs(&self) -> &[MeasurementPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn frame_camera(cam: &CameraConfig, class_label: u8, index: usize) -> CameraConfig {
    let mut per_frame = cam.clone();
    if let Some(noise) = &mut per_frame.noise {
        noise.seed = camera::derive_seed(noise.seed, class_label as u64, index as u64);
    }
    per_frame
}

fn sweep(
    net: &NetworkConfig,
    pre: &PathState,
    class_label: u8,
    stage: &StageConfig,
    pointer: &GaussianPointer,
    fidelity: FidelityMode,
    cam: &CameraConfig,
) -> Result<DataSet> {
    let base = JointState::product(pre, pointer);
    let mut pairs = Vec::with_capacity(stage.positions.len());
    for (index, &x) in stage.positions.iter().enumerate() {
        let gamma = stage.gamma_at(x);
        let coupled = couple(&base, gamma)?;
        let propagated = propagate_joint(net, &coupled, PlaneId::Plane6, fidelity)?;
        let pair = match propagated.port_field(Mode::R6) {
            Ok(report) => {
                let img = camera::render(&report, &frame_camera(cam, class_label, index))?;
                match camera::centroid_pixels(&img) {
                    Ok(y_bar) => MeasurementPair {
                        x_um: x,
                        y_bar_px: y_bar,
                        flagged: img.off_sensor(),
                    },
                    // Beam missed the sensor entirely; keep the abscissa.
                    Err(CameraError::EmptyImage) => MeasurementPair {
                        x_um: x,
                        y_bar_px: f64::NAN,
                        flagged: true,
                    },
                    Err(other) => return Err(other.into()),
                }
            }
            Err(PointerlabError::EmptyPort { .. }) => MeasurementPair {
                x_um: x,
                y_bar_px: f64::NAN,
                flagged: true,
            },
            Err(other) => return Err(other.into()),
        };
        pairs.push(pair);
    }
    DataSet::new(class_label, pairs)
}

/// Runs one measurement-class sweep over the stage schedule.
pub fn run_class_sweep(
    class: ClassId,
    stage: &StageConfig,
    pointer: &GaussianPointer,
    fidelity: FidelityMode,
    cam: &CameraConfig,
) -> Result<DataSet> {
    run_class_sweep_with(&NetworkMatrices::default(), class, stage, pointer, fidelity, cam)
}

pub fn run_class_sweep_with(
    matrices: &NetworkMatrices,
    class: ClassId,
    stage: &StageConfig,
    pointer: &GaussianPointer,
    fidelity: FidelityMode,
    cam: &CameraConfig,
) -> Result<DataSet> {
    let net = NetworkConfig::class_preset_with(matrices, class)?;
    let pre = crate::pathspace::forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane2)?;
    sweep(&net, &pre, class.index(), stage, pointer, fidelity, cam)
}

/// Runs the shuttered calibration sweep (L3 and R4 blocked): a single path
/// survives, so the stage drags the beam linearly across the sensor.
pub fn run_calibration_sweep(
    stage: &StageConfig,
    pointer: &GaussianPointer,
    cam: &CameraConfig,
) -> Result<DataSet> {
    run_calibration_sweep_with(&NetworkMatrices::default(), stage, pointer, cam)
}

pub fn run_calibration_sweep_with(
    matrices: &NetworkMatrices,
    stage: &StageConfig,
    pointer: &GaussianPointer,
    cam: &CameraConfig,
) -> Result<DataSet> {
    let net = NetworkConfig::calibration_preset_with(matrices)?;
    let pre = crate::pathspace::forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane2)?;
    sweep(
        &net,
        &pre,
        CALIBRATION_CLASS,
        stage,
        pointer,
        FidelityMode::Ideal,
        cam,
    )
}

/// Origin of the analysis frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub x0_um: f64,
    pub y0_px: f64,
}

fn line_through(a: &MeasurementPair, b: &MeasurementPair) -> (f64, f64) {
    let slope = (b.y_bar_px - a.y_bar_px) / (b.x_um - a.x_um);
    (slope, a.y_bar_px - slope * a.x_um)
}

fn check_shared_abscissas(s1: &DataSet, s2: &DataSet) -> Result<()> {
    if s1.len() != s2.len() {
        return Err(AnalysisError::LengthMismatch {
            a: s1.len(),
            b: s2.len(),
        });
    }
    for (index, (a, b)) in s1.pairs.iter().zip(&s2.pairs).enumerate() {
        if (a.x_um - b.x_um).abs() > 1e-9 {
            return Err(AnalysisError::AbscissaMismatch {
                index,
                a: a.x_um,
                b: b.x_um,
            });
        }
    }
    Ok(())
}

/// Intersects the line through one set's middle two pairs with the other's.
/// The intersection marks the stage position of vanishing coupling.
pub fn estimate_crossing(s1: &DataSet, s2: &DataSet) -> Result<Frame> {
    check_shared_abscissas(s1, s2)?;
    let n = s1.len();
    if n < 4 {
        return Err(AnalysisError::TooFewPositions { need: 4, got: n });
    }
    let (lo, hi) = (n / 2 - 1, n / 2);
    for set in [s1, s2] {
        if set.pairs[lo].flagged || set.pairs[hi].flagged {
            return Err(AnalysisError::FlaggedCrossing);
        }
    }
    let (m1, b1) = line_through(&s1.pairs[lo], &s1.pairs[hi]);
    let (m2, b2) = line_through(&s2.pairs[lo], &s2.pairs[hi]);
    intersect(m1, b1, m2, b2)
}

/// All-pairs least-squares alternative to the middle-pair estimator. Less
/// faithful to the published procedure, more robust to single-frame noise.
pub fn estimate_crossing_least_squares(s1: &DataSet, s2: &DataSet) -> Result<Frame> {
    check_shared_abscissas(s1, s2)?;
    let fit = |s: &DataSet| -> Result<(f64, f64)> {
        let pts: Vec<(f64, f64)> = s
            .pairs
            .iter()
            .filter(|p| !p.flagged)
            .map(|p| (p.x_um, p.y_bar_px))
            .collect();
        let (slope, intercept, _) = fit_line(&pts)?;
        Ok((slope, intercept))
    };
    let (m1, b1) = fit(s1)?;
    let (m2, b2) = fit(s2)?;
    intersect(m1, b1, m2, b2)
}

fn intersect(m1: f64, b1: f64, m2: f64, b2: f64) -> Result<Frame> {
    let dm = m1 - m2;
    if dm.abs() < 1e-12 {
        return Err(AnalysisError::NoCrossing(dm.abs()));
    }
    let x0 = (b2 - b1) / dm;
    Ok(Frame {
        x0_um: x0,
        y0_px: m1 * x0 + b1,
    })
}

/// Mean-centered least squares; returns `(slope, intercept, residual rms)`.
fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len();
    if n < 2 {
        return Err(AnalysisError::FitUnderdetermined);
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(AnalysisError::FitUnderdetermined);
    }
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    Ok((slope, intercept, (ss / n as f64).sqrt()))
}

/// A measurement pair expressed in the analysis frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub x_um: f64,
    pub x_prime_um: f64,
    pub y_bar_px: f64,
    pub displacement_um: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    pub class_id: u8,
    pub points: Vec<FramePoint>,
}

/// Pure coordinate change into the frame: `x' = x - x0`, displacement
/// `(ȳ - y0) · pitch`.
pub fn to_frame(s: &DataSet, frame: &Frame, pitch: f64) -> FrameSet {
    FrameSet {
        class_id: s.class_id,
        points: s
            .pairs
            .iter()
            .map(|p| FramePoint {
                x_um: p.x_um,
                x_prime_um: p.x_um - frame.x0_um,
                y_bar_px: p.y_bar_px,
                displacement_um: (p.y_bar_px - frame.y0_px) * pitch,
                flagged: p.flagged,
            })
            .collect(),
    }
}

/// The ideal displacement lines `ρ_i(x') = -gain · x' · N_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdealLines {
    gain: f64,
    weak_values: [f64; 3],
}

pub fn ideal_lines(gain: f64, weak_values: [f64; 3]) -> IdealLines {
    IdealLines { gain, weak_values }
}

impl IdealLines {
    pub fn displacement(&self, class: usize, x_prime: f64) -> f64 {
        -self.gain * x_prime * self.weak_values[class]
    }

    pub fn weak_values(&self) -> [f64; 3] {
        self.weak_values
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// Weak-regime extents, in both coupling strength and stage displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakRegime {
    pub gamma_bound_um: f64,
    pub x_prime_bound_um: f64,
    pub gamma_window_um: f64,
    pub x_prime_window_um: f64,
    pub margin: f64,
}

/// Raw weak-regime bound `|x'| < 2σ / gain` plus the margin-adjusted window.
pub fn weak_regime_bound(sigma: f64, gain: f64) -> WeakRegime {
    let gamma_bound = 2.0 * sigma;
    let x_prime_bound = gamma_bound / gain;
    WeakRegime {
        gamma_bound_um: gamma_bound,
        x_prime_bound_um: x_prime_bound,
        gamma_window_um: gamma_bound / WEAK_MARGIN,
        x_prime_window_um: x_prime_bound / WEAK_MARGIN,
        margin: WEAK_MARGIN,
    }
}

/// Per-class weak values re-extracted from framed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub n_hat: [f64; 3],
    pub residual_rms_um: [f64; 3],
    pub window_um: f64,
    pub points_used: [usize; 3],
    /// The theoretical ordering `N̂₀ < N̂₂ < N̂₁`.
    pub ordering_ok: bool,
}

/// Least-squares slope of displacement against `-gain · x'` inside the
/// window, per class.
pub fn extract_weak_values(
    sets: &[FrameSet; 3],
    gain: f64,
    window: f64,
) -> Result<Extraction> {
    let mut n_hat = [0.0; 3];
    let mut rms = [0.0; 3];
    let mut used = [0usize; 3];
    for (i, set) in sets.iter().enumerate() {
        let pts: Vec<(f64, f64)> = set
            .points
            .iter()
            .filter(|p| !p.flagged && p.x_prime_um.abs() <= window + 1e-9)
            .map(|p| (-gain * p.x_prime_um, p.displacement_um))
            .collect();
        if pts.len() < 2 {
            return Err(AnalysisError::WindowTooNarrow {
                window,
                got: pts.len(),
            });
        }
        let (slope, _, residual) = fit_line(&pts)?;
        n_hat[i] = slope;
        rms[i] = residual;
        used[i] = pts.len();
    }
    Ok(Extraction {
        n_hat,
        residual_rms_um: rms,
        window_um: window,
        points_used: used,
        ordering_ok: n_hat[0] < n_hat[2] && n_hat[2] < n_hat[1],
    })
}

/// Straight-line fit of the calibration sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub slope_px_per_um: f64,
    pub intercept_px: f64,
    /// `|slope| · pitch`: recovered beam shift per µm of stage travel.
    pub gain_estimate: f64,
    pub residual_rms_px: f64,
}

pub fn fit_calibration(s3: &DataSet, pitch: f64) -> Result<CalibrationFit> {
    let pts: Vec<(f64, f64)> = s3
        .pairs
        .iter()
        .filter(|p| !p.flagged)
        .map(|p| (p.x_um, p.y_bar_px))
        .collect();
    let (slope, intercept, residual) = fit_line(&pts)?;
    Ok(CalibrationFit {
        slope_px_per_um: slope,
        intercept_px: intercept,
        gain_estimate: slope.abs() * pitch,
        residual_rms_px: residual,
    })
}

/// Everything a full run needs.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub stage: StageConfig,
    pub camera: CameraConfig,
    pub pointer: GaussianPointer,
    pub fidelity: FidelityMode,
    pub matrices: NetworkMatrices,
    /// Extraction window in µm; defaults to the raw weak-regime bound, which
    /// is the widest window the stage schedule populates.
    pub extraction_window_um: Option<f64>,
    pub excited_threshold: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stage: StageConfig::default(),
            camera: CameraConfig::default(),
            pointer: GaussianPointer::default(),
            fidelity: FidelityMode::Ideal,
            matrices: NetworkMatrices::default(),
            extraction_window_um: None,
            excited_threshold: 10,
        }
    }
}

/// Excited-pixel comparison between the class-1 and class-2 frames nearest
/// to zero coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitedSummary {
    pub threshold: u32,
    pub gamma_um: f64,
    pub class1_pixels: usize,
    pub class2_pixels: usize,
    pub ratio: f64,
}

/// Pass/fail gates evaluated by a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunChecks {
    pub ordering_ok: bool,
    pub calibration_within_3pct: bool,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    /// Indexed by class id; entry 3 is the calibration sweep.
    pub sets: [DataSet; 4],
    pub frame: Frame,
    pub frame_sets: [FrameSet; 4],
    pub calibration: CalibrationFit,
    pub regime: WeakRegime,
    pub extraction: Extraction,
    pub excited: ExcitedSummary,
    pub checks: RunChecks,
    pub gain: f64,
    pub pitch: f64,
    pub sigma: f64,
}

fn excited_summary(cfg: &PipelineConfig) -> Result<ExcitedSummary> {
    let positions = cfg.stage.positions();
    let index = positions.len() / 2;
    let gamma = cfg.stage.gamma_at(positions[index]);
    let noiseless = cfg.camera.clone().with_noise(None);
    let count = |class: ClassId| -> Result<usize> {
        let net = NetworkConfig::class_preset_with(&cfg.matrices, class)?;
        let pre =
            crate::pathspace::forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane2)?;
        let joint = couple(&JointState::product(&pre, &cfg.pointer), gamma)?;
        let propagated = propagate_joint(&net, &joint, PlaneId::Plane6, FidelityMode::Ideal)?;
        let report: PointerReport = propagated.port_field(Mode::R6)?;
        let img = camera::render(&report, &noiseless)?;
        Ok(camera::excited_pixel_count(&img, cfg.excited_threshold))
    };
    let class1 = count(ClassId::Class1)?;
    let class2 = count(ClassId::Class2)?;
    Ok(ExcitedSummary {
        threshold: cfg.excited_threshold,
        gamma_um: gamma,
        class1_pixels: class1,
        class2_pixels: class2,
        ratio: class2 as f64 / class1 as f64,
    })
}

/// Runs calibration plus the three class sweeps and the whole analysis chain.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult> {
    let s0 = run_class_sweep_with(
        &cfg.matrices,
        ClassId::Class0,
        &cfg.stage,
        &cfg.pointer,
        cfg.fidelity,
        &cfg.camera,
    )?;
    let s1 = run_class_sweep_with(
        &cfg.matrices,
        ClassId::Class1,
        &cfg.stage,
        &cfg.pointer,
        cfg.fidelity,
        &cfg.camera,
    )?;
    let s2 = run_class_sweep_with(
        &cfg.matrices,
        ClassId::Class2,
        &cfg.stage,
        &cfg.pointer,
        cfg.fidelity,
        &cfg.camera,
    )?;
    let s3 = run_calibration_sweep_with(&cfg.matrices, &cfg.stage, &cfg.pointer, &cfg.camera)?;

    let frame = estimate_crossing(&s1, &s2)?;
    let pitch = cfg.camera.pitch;
    let frame_sets = [
        to_frame(&s0, &frame, pitch),
        to_frame(&s1, &frame, pitch),
        to_frame(&s2, &frame, pitch),
        to_frame(&s3, &frame, pitch),
    ];
    let calibration = fit_calibration(&s3, pitch)?;
    let regime = weak_regime_bound(cfg.pointer.sigma(), cfg.stage.gain());
    let window = cfg
        .extraction_window_um
        .unwrap_or(regime.x_prime_bound_um);
    let extraction = extract_weak_values(
        &[
            frame_sets[0].clone(),
            frame_sets[1].clone(),
            frame_sets[2].clone(),
        ],
        cfg.stage.gain(),
        window,
    )?;
    let excited = excited_summary(cfg)?;
    let calibration_within_3pct =
        (calibration.gain_estimate - cfg.stage.gain()).abs() <= 0.03 * cfg.stage.gain();
    let checks = RunChecks {
        ordering_ok: extraction.ordering_ok,
        calibration_within_3pct,
        passed: extraction.ordering_ok && calibration_within_3pct,
    };
    Ok(PipelineResult {
        sets: [s0, s1, s2, s3],
        frame,
        frame_sets,
        calibration,
        regime,
        extraction,
        excited,
        checks,
        gain: cfg.stage.gain(),
        pitch,
        sigma: cfg.pointer.sigma(),
    })
}

/// Validity verdict for the innermost sweep point, carried into the report.
fn innermost_validity(result: &PipelineResult) -> crate::pointerlab::ValidityReport {
    let moments: Vec<WeakValueMoments> = ClassId::ALL
        .iter()
        .map(|c| {
            WeakValueMoments::projector(num_complex::Complex64::new(
                c.theoretical_weak_value(),
                0.0,
            ))
        })
        .collect();
    validity_check(result.excited.gamma_um, result.sigma, &moments)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlaggedPoint {
    pub class_id: u8,
    pub index: usize,
    pub x_um: f64,
}

/// The versioned JSON report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub config: Value,
    pub weak_values_theory: [f64; 3],
    pub calibration: CalibrationFit,
    pub frame: Frame,
    pub weak_regime: WeakRegime,
    pub extraction: Extraction,
    pub excited_pixels: ExcitedSummary,
    pub innermost_validity: crate::pointerlab::ValidityReport,
    pub flagged: Vec<FlaggedPoint>,
    pub checks: RunChecks,
}

pub fn build_report(result: &PipelineResult, config_echo: &Value) -> Report {
    let mut flagged = Vec::new();
    for set in &result.sets {
        for (index, pair) in set.pairs().iter().enumerate() {
            if pair.flagged {
                flagged.push(FlaggedPoint {
                    class_id: set.class_id,
                    index,
                    x_um: pair.x_um,
                });
            }
        }
    }
    Report {
        schema: 1,
        config: config_echo.clone(),
        weak_values_theory: [0.0, 1.0, 0.5],
        calibration: result.calibration,
        frame: result.frame,
        weak_regime: result.regime,
        extraction: result.extraction.clone(),
        excited_pixels: result.excited,
        innermost_validity: innermost_validity(result),
        flagged,
        checks: result.checks,
    }
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug)]
pub struct ReportPaths {
    pub report_json: PathBuf,
    pub csvs: [PathBuf; 4],
    pub figure_svg: PathBuf,
}

fn write_frame_csv(set: &FrameSet, path: &Path) -> Result<()> {
    let io_err = |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    writeln!(out, "class_id,x_um,x_prime_um,y_bar_px,displacement_um").map_err(io_err)?;
    for p in &set.points {
        writeln!(
            out,
            "{},{},{},{},{}",
            set.class_id, p.x_um, p.x_prime_um, p.y_bar_px, p.displacement_um
        )
        .map_err(io_err)?;
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Writes `s0.csv`…`s3.csv`, `report.json` and `figure2.svg` into `out_dir`.
/// On failure every file already written by this call is removed.
pub fn emit_report(
    result: &PipelineResult,
    config_echo: &Value,
    out_dir: &Path,
) -> Result<ReportPaths> {
    std::fs::create_dir_all(out_dir).map_err(|source| AnalysisError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = (|| -> Result<ReportPaths> {
        let mut csvs = Vec::with_capacity(4);
        for (k, set) in result.frame_sets.iter().enumerate() {
            let path = out_dir.join(format!("s{k}.csv"));
            write_frame_csv(set, &path)?;
            written.push(path.clone());
            csvs.push(path);
        }
        let report_json = out_dir.join("report.json");
        let report = build_report(result, config_echo);
        let mut text =
            serde_json::to_string_pretty(&report).expect("report serialization is infallible");
        text.push('\n');
        std::fs::write(&report_json, text).map_err(|source| AnalysisError::Io {
            path: report_json.clone(),
            source,
        })?;
        written.push(report_json.clone());

        let figure_svg = out_dir.join("figure2.svg");
        let lines = ideal_lines(result.gain, [0.0, 1.0, 0.5]);
        let svg = figure2_svg(&result.frame_sets[..3], &lines, &result.regime);
        std::fs::write(&figure_svg, svg).map_err(|source| AnalysisError::Io {
            path: figure_svg.clone(),
            source,
        })?;
        written.push(figure_svg.clone());

        Ok(ReportPaths {
            report_json,
            csvs: [
                csvs[0].clone(),
                csvs[1].clone(),
                csvs[2].clone(),
                csvs[3].clone(),
            ],
            figure_svg,
        })
    })();
    if outcome.is_err() {
        for path in written {
            let _ = std::fs::remove_file(path);
        }
    }
    outcome
}

const CLASS_COLORS: [&str; 3] = ["#1f6fb4", "#c23b3b", "#2c9a44"];

/// Scatter of the framed class data with the three dashed ideal lines and the
/// boxed weak-measurement regime. Self-contained SVG.
pub fn figure2_svg(sets: &[FrameSet], lines: &IdealLines, regime: &WeakRegime) -> String {
    let width = 860.0;
    let height = 620.0;
    let (ml, mr, mt, mb) = (80.0, 24.0, 36.0, 58.0);

    let mut x_max = regime.x_prime_bound_um;
    let mut y_max = regime.gamma_bound_um;
    for set in sets {
        for p in &set.points {
            if p.flagged {
                continue;
            }
            x_max = x_max.max(p.x_prime_um.abs());
            y_max = y_max.max(p.displacement_um.abs());
        }
    }
    let x_max = (x_max / 100.0).ceil() * 100.0 + 50.0;
    let y_max = (y_max / 100.0).ceil() * 100.0 + 50.0;

    let sx = (width - ml - mr) / (2.0 * x_max);
    let sy = (height - mt - mb) / (2.0 * y_max);
    let px = |x: f64| ml + (x + x_max) * sx;
    let py = |y: f64| height - mb - (y + y_max) * sy;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));

    // Weak-measurement regime box.
    svg.push_str(&format!(
        "  <rect class=\"weak-regime\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"#f3e9c8\" fill-opacity=\"0.55\" stroke=\"#9a8a50\"/>\n",
        px(-regime.x_prime_bound_um),
        py(regime.gamma_bound_um),
        2.0 * regime.x_prime_bound_um * sx,
        2.0 * regime.gamma_bound_um * sy,
    ));

    // Axes through the frame origin.
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\n",
        px(-x_max),
        py(0.0),
        px(x_max),
        py(0.0)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\n",
        px(0.0),
        py(-y_max),
        px(0.0),
        py(y_max)
    ));

    let x_step = tick_step(x_max);
    let mut x = -(x_max / x_step).floor() * x_step;
    while x <= x_max + 1e-9 {
        svg.push_str(&format!(
            "  <line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"#444\"/>\n",
            px(x),
            py(0.0) - 4.0,
            py(0.0) + 4.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#333\">{}</text>\n",
            px(x),
            py(0.0) + 18.0,
            x
        ));
        x += x_step;
    }
    let y_step = tick_step(y_max);
    let mut y = -(y_max / y_step).floor() * y_step;
    while y <= y_max + 1e-9 {
        if y.abs() > 1e-9 {
            svg.push_str(&format!(
                "  <line x1=\"{1:.2}\" y1=\"{0:.2}\" x2=\"{2:.2}\" y2=\"{0:.2}\" stroke=\"#444\"/>\n",
                py(y),
                px(0.0) - 4.0,
                px(0.0) + 4.0
            ));
            svg.push_str(&format!(
                "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#333\">{}</text>\n",
                px(0.0) - 8.0,
                py(y) + 4.0,
                y
            ));
        }
        y += y_step;
    }

    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#111\">M1 displacement x' (um)</text>\n",
        px(0.0),
        height - 14.0
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#111\" \
         transform=\"rotate(-90 18 {:.2})\">pointer displacement (um)</text>\n",
        py(0.0),
        py(0.0)
    ));

    // Ideal lines, dashed.
    for (class, color) in CLASS_COLORS.iter().enumerate() {
        let y_lo = lines.displacement(class, -x_max);
        let y_hi = lines.displacement(class, x_max);
        svg.push_str(&format!(
            "  <line class=\"ideal-line\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.5\" stroke-dasharray=\"7 5\"/>\n",
            px(-x_max),
            py(y_lo),
            px(x_max),
            py(y_hi),
        ));
    }

    // Data points.
    for set in sets {
        let color = CLASS_COLORS[set.class_id.min(2) as usize];
        for p in &set.points {
            if p.flagged {
                continue;
            }
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.85\"/>\n",
                px(p.x_prime_um),
                py(p.displacement_um),
                color
            ));
        }
    }

    // Legend.
    let lx = ml + 12.0;
    let mut ly = mt + 6.0;
    for (class, color) in CLASS_COLORS.iter().enumerate() {
        svg.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
            lx, ly,
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#111\">gamma-N class {}</text>\n",
            lx + 10.0,
            ly + 4.0,
            class
        ));
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" \
             stroke-dasharray=\"7 5\"/>\n",
            lx + 150.0,
            ly,
            lx + 186.0,
            ly,
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#111\">rho class {}</text>\n",
            lx + 192.0,
            ly + 4.0,
            class
        ));
        ly += 20.0;
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#6b5d2c\">weak regime |x'| &lt; {} um</text>\n",
        px(-regime.x_prime_bound_um) + 6.0,
        py(regime.gamma_bound_um) + 16.0,
        regime.x_prime_bound_um
    ));

    svg.push_str("</svg>\n");
    svg
}

fn tick_step(extent: f64) -> f64 {
    for step in [50.0, 100.0, 200.0, 250.0, 500.0, 1000.0] {
        if extent / step <= 6.0 {
            return step;
        }
    }
    2000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: f64, y: f64) -> MeasurementPair {
        MeasurementPair {
            x_um: x,
            y_bar_px: y,
            flagged: false,
        }
    }

    fn line_set(class_id: u8, xs: &[f64], f: impl Fn(f64) -> f64) -> DataSet {
        DataSet::new(class_id, xs.iter().map(|&x| pair(x, f(x))).collect()).unwrap()
    }

    #[test]
    fn default_stage_matches_apparatus() {
        let stage = StageConfig::default();
        assert_eq!(stage.positions().len(), 14);
        assert_eq!(stage.positions()[0], 0.0);
        assert_eq!(stage.positions()[13], 1300.0);
        assert_eq!(stage.gain(), 1.5);
        assert_eq!(stage.gamma_at(650.0), 0.0);
        assert_eq!(stage.gamma_at(600.0), 75.0);
    }

    #[test]
    fn stage_rejects_bad_input() {
        assert!(matches!(
            StageConfig::new(vec![0.0, 0.0], 0.0, 1.5),
            Err(AnalysisError::PositionsNotIncreasing)
        ));
        assert!(matches!(
            StageConfig::new(vec![0.0, 1.0], 0.0, -1.0),
            Err(AnalysisError::NonPositiveGain(_))
        ));
    }

    #[test]
    fn synthetic_lines_cross_at_origin() {
        let xs: Vec<f64> = (-3..=4).map(|i| i as f64).collect();
        let s1 = line_set(1, &xs, |x| x);
        let s2 = line_set(2, &xs, |x| -x);
        let frame = estimate_crossing(&s1, &s2).unwrap();
        assert!(frame.x0_um.abs() < 1e-12);
        assert!(frame.y0_px.abs() < 1e-12);
    }

    #[test]
    fn crossing_is_affine_equivariant() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 10.0).collect();
        let s1 = line_set(1, &xs, |x| 0.3 * x + 1.0);
        let s2 = line_set(2, &xs, |x| -0.1 * x + 9.0);
        let base = estimate_crossing(&s1, &s2).unwrap();
        let c = 5.5;
        let s1_shift = line_set(1, &xs, |x| 0.3 * x + 1.0 + c);
        let s2_shift = line_set(2, &xs, |x| -0.1 * x + 9.0 + c);
        let shifted = estimate_crossing(&s1_shift, &s2_shift).unwrap();
        assert!((shifted.x0_um - base.x0_um).abs() < 1e-9);
        assert!((shifted.y0_px - (base.y0_px + c)).abs() < 1e-9);
    }

    #[test]
    fn parallel_lines_have_no_crossing() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let s1 = line_set(1, &xs, |x| 2.0 * x);
        let s2 = line_set(2, &xs, |x| 2.0 * x + 1.0);
        assert!(matches!(
            estimate_crossing(&s1, &s2),
            Err(AnalysisError::NoCrossing(_))
        ));
    }

    #[test]
    fn crossing_requires_shared_abscissas() {
        let s1 = line_set(1, &[0.0, 1.0, 2.0, 3.0], |x| x);
        let s2 = line_set(2, &[0.0, 1.0, 2.5, 3.0], |x| -x);
        assert!(matches!(
            estimate_crossing(&s1, &s2),
            Err(AnalysisError::AbscissaMismatch { .. })
        ));
    }

    #[test]
    fn frame_transform_round_trips() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 100.0).collect();
        let set = line_set(1, &xs, |x| -0.2 * x + 44.0);
        let frame = Frame {
            x0_um: 200.0,
            y0_px: 4.0,
        };
        let pitch = 7.4;
        let framed = to_frame(&set, &frame, pitch);
        for (orig, f) in set.pairs().iter().zip(&framed.points) {
            assert_eq!(f.x_um, orig.x_um);
            assert_eq!(f.x_prime_um + frame.x0_um, orig.x_um);
            let y_back = f.displacement_um / pitch + frame.y0_px;
            assert!((y_back - orig.y_bar_px).abs() < 1e-12);
        }
        // The crossing pair maps to the origin.
        let at_crossing = to_frame(
            &line_set(1, &[200.0, 300.0, 400.0, 500.0], |_| 4.0),
            &frame,
            pitch,
        );
        assert_eq!(at_crossing.points[0].x_prime_um, 0.0);
        assert_eq!(at_crossing.points[0].displacement_um, 0.0);
    }

    #[test]
    fn ideal_line_values() {
        let lines = ideal_lines(1.5, [0.0, 1.0, 0.5]);
        assert_eq!(lines.displacement(1, -100.0), 150.0);
        assert_eq!(lines.displacement(0, 123.0), 0.0);
        for x in [-300.0, -10.0, 55.0] {
            assert!((lines.displacement(2, x) - lines.displacement(1, x) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_regime_numbers() {
        let regime = weak_regime_bound(150.0, 1.5);
        assert_eq!(regime.x_prime_bound_um, 200.0);
        assert_eq!(regime.gamma_bound_um, 300.0);
        assert_eq!(regime.x_prime_window_um, 40.0);
        let doubled = weak_regime_bound(150.0, 3.0);
        assert_eq!(doubled.x_prime_bound_um, 100.0);
    }

    #[test]
    fn extraction_flags_identical_classes() {
        let xs: Vec<f64> = (-3..=4).map(|i| i as f64 * 50.0).collect();
        let mk = |class| FrameSet {
            class_id: class,
            points: xs
                .iter()
                .map(|&x| FramePoint {
                    x_um: x,
                    x_prime_um: x,
                    y_bar_px: 0.0,
                    displacement_um: -1.5 * x,
                    flagged: false,
                })
                .collect(),
        };
        let sets = [mk(0), mk(1), mk(2)];
        let extraction = extract_weak_values(&sets, 1.5, 200.0).unwrap();
        assert!(!extraction.ordering_ok);
    }

    #[test]
    fn extraction_requires_points_in_window() {
        let sets = [
            FrameSet {
                class_id: 0,
                points: vec![],
            },
            FrameSet {
                class_id: 1,
                points: vec![],
            },
            FrameSet {
                class_id: 2,
                points: vec![],
            },
        ];
        assert!(matches!(
            extract_weak_values(&sets, 1.5, 40.0),
            Err(AnalysisError::WindowTooNarrow { .. })
        ));
    }

    #[test]
    fn calibration_fit_recovers_slope_and_gain() {
        let xs: Vec<f64> = (0..14).map(|i| i as f64 * 100.0).collect();
        let set = line_set(3, &xs, |x| -0.2027027 * x + 451.3);
        let fit = fit_calibration(&set, 7.4).unwrap();
        assert!((fit.slope_px_per_um + 0.2027027).abs() < 1e-9);
        assert!((fit.gain_estimate - 1.5).abs() < 1e-5);
        assert!(fit.residual_rms_px < 1e-9);
    }

    #[test]
    fn svg_has_three_dashed_lines_and_one_box() {
        let sets: Vec<FrameSet> = (0..3)
            .map(|class| FrameSet {
                class_id: class,
                points: vec![FramePoint {
                    x_um: 0.0,
                    x_prime_um: -50.0,
                    y_bar_px: 0.0,
                    displacement_um: 75.0,
                    flagged: false,
                }],
            })
            .collect();
        let svg = figure2_svg(
            &sets,
            &ideal_lines(1.5, [0.0, 1.0, 0.5]),
            &weak_regime_bound(150.0, 1.5),
        );
        assert_eq!(svg.matches("stroke-dasharray").count(), 6); // 3 lines + 3 legend samples
        assert_eq!(svg.matches("class=\"ideal-line\"").count(), 3);
        assert_eq!(svg.matches("class=\"weak-regime\"").count(), 1);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
