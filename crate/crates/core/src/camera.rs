//! Synthetic machine-vision line camera.
//!
//! The beam profile only ever moves horizontally, so the sensor is reduced to
//! a single 640-pixel line; the vertical axis is integrated out. Rendering
//! integrates the pointer intensity exactly over each pixel's extent, scales
//! the brightest pixel to `peak_level`, optionally applies seeded
//! Poisson-like fluctuations, rounds half-to-even and clamps to the digital
//! depth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointerlab::PointerReport;

pub type Result<T> = std::result::Result<T, CameraError>;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("camera must have at least one pixel")]
    NoPixels,
    #[error("pixel pitch must be positive, got {0}")]
    NonPositivePitch(f64),
    #[error("peak level {peak} must lie in 1..={depth}")]
    PeakLevel { peak: u32, depth: u32 },
    #[error("noise rate must be positive, got {0}")]
    NonPositiveNoiseRate(f64),
    #[error("nothing to render: port probability {0:.3e}")]
    EmptyPort(f64),
    #[error("image is completely dark; no centroid")]
    EmptyImage,
}

/// Seeded Poisson-like perturbation. Each pixel value `v` is replaced by
/// `Poisson(v * photons_per_count) / photons_per_count`, so larger rates mean
/// gentler noise (relative fluctuation `1/sqrt(v * rate)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    #[serde(default = "default_photons_per_count")]
    pub photons_per_count: f64,
}

fn default_photons_per_count() -> f64 {
    50.0
}

impl NoiseConfig {
    pub fn seeded(seed: u64) -> Self {
        NoiseConfig {
            seed,
            photons_per_count: default_photons_per_count(),
        }
    }
}

/// Geometry and quantization of the line sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCameraConfig", into = "RawCameraConfig")]
pub struct CameraConfig {
    pub pixels: usize,
    /// µm per pixel.
    pub pitch: f64,
    pub depth_max: u32,
    /// Target value of the brightest pixel after scaling.
    pub peak_level: u32,
    /// Pointer coordinate (µm) imaged onto the sensor center.
    pub offset: f64,
    pub noise: Option<NoiseConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCameraConfig {
    #[serde(default = "default_pixels")]
    pixels: usize,
    #[serde(default = "default_pitch")]
    pitch_um: f64,
    #[serde(default = "default_depth")]
    depth_max: u32,
    #[serde(default = "default_peak")]
    peak_level: u32,
    #[serde(default)]
    offset_um: f64,
    #[serde(default)]
    noise: Option<NoiseConfig>,
}

fn default_pixels() -> usize {
    640
}
fn default_pitch() -> f64 {
    7.4
}
fn default_depth() -> u32 {
    255
}
fn default_peak() -> u32 {
    200
}

impl From<CameraConfig> for RawCameraConfig {
    fn from(cfg: CameraConfig) -> Self {
        RawCameraConfig {
            pixels: cfg.pixels,
            pitch_um: cfg.pitch,
            depth_max: cfg.depth_max,
            peak_level: cfg.peak_level,
            offset_um: cfg.offset,
            noise: cfg.noise,
        }
    }
}

impl TryFrom<RawCameraConfig> for CameraConfig {
    type Error = CameraError;

    fn try_from(raw: RawCameraConfig) -> Result<Self> {
        CameraConfig::new(
            raw.pixels,
            raw.pitch_um,
            raw.depth_max,
            raw.peak_level,
            raw.offset_um,
            raw.noise,
        )
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            pixels: default_pixels(),
            pitch: default_pitch(),
            depth_max: default_depth(),
            peak_level: default_peak(),
            offset: 0.0,
            noise: None,
        }
    }
}

impl CameraConfig {
    pub fn new(
        pixels: usize,
        pitch: f64,
        depth_max: u32,
        peak_level: u32,
        offset: f64,
        noise: Option<NoiseConfig>,
    ) -> Result<Self> {
        if pixels == 0 {
            return Err(CameraError::NoPixels);
        }
        if pitch <= 0.0 || !pitch.is_finite() {
            return Err(CameraError::NonPositivePitch(pitch));
        }
        if peak_level == 0 || peak_level > depth_max {
            return Err(CameraError::PeakLevel {
                peak: peak_level,
                depth: depth_max,
            });
        }
        if let Some(n) = &noise {
            if n.photons_per_count <= 0.0 || !n.photons_per_count.is_finite() {
                return Err(CameraError::NonPositiveNoiseRate(n.photons_per_count));
            }
        }
        Ok(CameraConfig {
            pixels,
            pitch,
            depth_max,
            peak_level,
            offset,
            noise,
        })
    }

    pub fn with_noise(mut self, noise: Option<NoiseConfig>) -> Self {
        self.noise = noise;
        self
    }

    /// Pixel boundaries. Pixel `i` spans `[edge(i), edge(i+1))`; computed so
    /// the grid is exactly mirror-symmetric about `offset`.
    pub fn pixel_edge(&self, i: usize) -> f64 {
        let half = self.pixels as f64 / 2.0;
        (i as f64 - half) * self.pitch + self.offset
    }

    pub fn pixel_center(&self, i: usize) -> f64 {
        let half = self.pixels as f64 / 2.0;
        (i as f64 + 0.5 - half) * self.pitch + self.offset
    }

    /// Pointer coordinate corresponding to a fractional pixel index.
    pub fn q_at(&self, y_bar: f64) -> f64 {
        let half = self.pixels as f64 / 2.0;
        (y_bar + 0.5 - half) * self.pitch + self.offset
    }
}

/// Quantized line image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    values: Vec<u32>,
    depth_max: u32,
    off_sensor: bool,
}

impl Image {
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn depth_max(&self) -> u32 {
        self.depth_max
    }

    /// True when the beam centroid fell outside the sensor during rendering.
    pub fn off_sensor(&self) -> bool {
        self.off_sensor
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }

    /// `pixel,count` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "pixel,count")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", i, v)?;
        }
        Ok(())
    }

    /// ASCII PGM (P2), one row high.
    pub fn write_pgm<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "P2")?;
        writeln!(out, "{} 1", self.values.len())?;
        writeln!(out, "{}", self.depth_max)?;
        let row: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
        Ok(())
    }
}

/// Integrates the report's intensity over every pixel, scales the maximum to
/// `peak_level`, applies seeded noise when configured, rounds half-to-even
/// and clamps to the digital depth.
pub fn render(report: &PointerReport, cfg: &CameraConfig) -> Result<Image> {
    if report.probability <= 1e-14 {
        return Err(CameraError::EmptyPort(report.probability));
    }
    let off_sensor =
        report.centroid < cfg.pixel_edge(0) || report.centroid > cfg.pixel_edge(cfg.pixels);

    let mut masses = Vec::with_capacity(cfg.pixels);
    let mut max_mass = 0.0f64;
    for i in 0..cfg.pixels {
        let m = report
            .field
            .band_mass(cfg.pixel_edge(i), cfg.pixel_edge(i + 1))
            .max(0.0);
        if m > max_mass {
            max_mass = m;
        }
        masses.push(m);
    }
    if max_mass <= 0.0 {
        // Nothing landed on the sensor at all.
        return Ok(Image {
            values: vec![0; cfg.pixels],
            depth_max: cfg.depth_max,
            off_sensor: true,
        });
    }

    let scale = cfg.peak_level as f64 / max_mass;
    let mut rng = cfg.noise.as_ref().map(|n| ChaCha8Rng::seed_from_u64(n.seed));
    let values = masses
        .into_iter()
        .map(|m| {
            let mut v = m * scale;
            if let (Some(rng), Some(noise)) = (rng.as_mut(), cfg.noise.as_ref()) {
                let lambda = v * noise.photons_per_count;
                if lambda > 0.0 {
                    let draw = Poisson::new(lambda).expect("positive lambda").sample(rng);
                    v = draw / noise.photons_per_count;
                }
            }
            let rounded = v.round_ties_even();
            (rounded.max(0.0) as u32).min(cfg.depth_max)
        })
        .collect();

    Ok(Image {
        values,
        depth_max: cfg.depth_max,
        off_sensor,
    })
}

/// Intensity-averaged horizontal pixel number.
pub fn centroid_pixels(img: &Image) -> Result<f64> {
    let total: f64 = img.values.iter().map(|&v| v as f64).sum();
    if total <= 0.0 {
        return Err(CameraError::EmptyImage);
    }
    let weighted: f64 = img
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| i as f64 * v as f64)
        .sum();
    Ok(weighted / total)
}

/// Number of pixels strictly above `threshold`.
pub fn excited_pixel_count(img: &Image, threshold: u32) -> usize {
    img.values.iter().filter(|&&v| v > threshold).count()
}

/// Deterministic per-frame seed derivation (splitmix64 over the inputs), so
/// sweep frames get decorrelated but reproducible noise streams.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut x = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    for _ in 0..2 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::{class_selection, ClassId, Mode, PlaneId};
    use crate::pointerlab::{
        couple, postselect, propagate_joint, FidelityMode, GaussianPointer, JointState,
        PropagatedJoint,
    };

    fn report_at(gamma: f64, class: ClassId) -> crate::pointerlab::PointerReport {
        let (net, pre, _) = class_selection(class);
        let pointer = GaussianPointer::default();
        let joint = couple(&JointState::product(&pre, &pointer), gamma).unwrap();
        let prop = propagate_joint(&net, &joint, PlaneId::Plane6, FidelityMode::Ideal).unwrap();
        let PropagatedJoint::Coherent(state) = prop else {
            panic!()
        };
        postselect(&state, Mode::R6).unwrap()
    }

    #[test]
    fn centered_gaussian_renders_symmetrically() {
        let cfg = CameraConfig::default();
        let img = render(&report_at(0.0, ClassId::Class1), &cfg).unwrap();
        assert!(!img.off_sensor());
        let n = img.values().len();
        for i in 0..n / 2 {
            assert_eq!(img.values()[i], img.values()[n - 1 - i], "pixel {i}");
        }
        let peak = img.values().iter().max().unwrap();
        assert_eq!(*peak, cfg.peak_level);
        // The flat top can round to the peak over several pixels; the set of
        // brightest pixels must straddle the sensor center.
        let first = img.values().iter().position(|v| v == peak).unwrap();
        let last = img.values().iter().rposition(|v| v == peak).unwrap();
        assert!((first as f64 + last as f64) / 2.0 - (n as f64 - 1.0) / 2.0 == 0.0);
        let centroid = centroid_pixels(&img).unwrap();
        assert!((centroid - (n as f64 - 1.0) / 2.0).abs() < 0.01);
    }

    #[test]
    fn rendering_is_deterministic_per_seed() {
        let cfg = CameraConfig::default().with_noise(Some(NoiseConfig::seeded(41)));
        let report = report_at(33.0, ClassId::Class1);
        let a = render(&report, &cfg).unwrap();
        let b = render(&report, &cfg).unwrap();
        assert_eq!(a, b);
        let other = CameraConfig::default().with_noise(Some(NoiseConfig::seeded(42)));
        let c = render(&report, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bimodal_peaks_sit_one_coupling_apart() {
        let gamma = 900.0;
        let cfg = CameraConfig::default();
        let img = render(&report_at(gamma, ClassId::Class2), &cfg).unwrap();
        let mid = ((cfg.pixels as f64 - 1.0) / 2.0 + gamma / cfg.pitch / 2.0) as usize;
        let left_peak = (0..mid)
            .max_by_key(|&i| img.values()[i])
            .unwrap();
        let right_peak = (mid..cfg.pixels)
            .max_by_key(|&i| img.values()[i])
            .unwrap();
        let separation = (right_peak - left_peak) as f64;
        assert!(
            (separation - gamma / cfg.pitch).abs() <= 1.0,
            "separation {separation} px vs {}",
            gamma / cfg.pitch
        );
    }

    #[test]
    fn centroid_tracks_a_74um_shift_by_ten_pixels() {
        let cfg = CameraConfig::default();
        let base = centroid_pixels(&render(&report_at(0.0, ClassId::Class1), &cfg).unwrap()).unwrap();
        let moved = centroid_pixels(&render(&report_at(74.0, ClassId::Class1), &cfg).unwrap()).unwrap();
        assert!(
            ((moved - base) - 10.0).abs() < 0.05,
            "shift = {}",
            moved - base
        );
    }

    #[test]
    fn centroid_maps_affinely_onto_pointer_position() {
        let cfg = CameraConfig::default();
        for gamma in [-900.0, -400.0, -74.0, 0.0, 33.0, 500.0, 975.0] {
            let report = report_at(gamma, ClassId::Class1);
            let img = render(&report, &cfg).unwrap();
            let y = centroid_pixels(&img).unwrap();
            let q = cfg.q_at(y);
            assert!(
                (q - gamma).abs() < 0.1 * cfg.pitch,
                "gamma = {gamma}: read {q}"
            );
        }
    }

    #[test]
    fn excited_count_is_monotone_in_threshold() {
        let cfg = CameraConfig::default();
        let img = render(&report_at(120.0, ClassId::Class2), &cfg).unwrap();
        let mut last = usize::MAX;
        for t in 0..=cfg.depth_max {
            let count = excited_pixel_count(&img, t);
            assert!(count <= last);
            last = count;
        }
        assert_eq!(excited_pixel_count(&img, cfg.depth_max), 0);
    }

    #[test]
    fn excited_count_trivial_cases() {
        let img = Image {
            values: vec![0; 16],
            depth_max: 255,
            off_sensor: false,
        };
        assert_eq!(excited_pixel_count(&img, 0), 0);
        assert!(matches!(centroid_pixels(&img), Err(CameraError::EmptyImage)));

        let mut delta = img.clone();
        delta.values[11] = 200;
        assert_eq!(centroid_pixels(&delta).unwrap(), 11.0);
    }

    #[test]
    fn near_equal_excitation_for_weak_coupling() {
        // With the coupling well inside a pointer width the two classes light
        // up nearly the same number of pixels.
        let cfg = CameraConfig::default();
        let one = render(&report_at(55.5, ClassId::Class1), &cfg).unwrap();
        let two = render(&report_at(55.5, ClassId::Class2), &cfg).unwrap();
        let ratio = excited_pixel_count(&two, 10) as f64 / excited_pixel_count(&one, 10) as f64;
        assert!((0.9..=1.1).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn off_sensor_beam_raises_the_flag() {
        let cfg = CameraConfig::default();
        let report = report_at(3000.0, ClassId::Class1);
        let img = render(&report, &cfg).unwrap();
        assert!(img.off_sensor());
    }

    #[test]
    fn saturation_clamps_to_depth() {
        let cfg = CameraConfig::new(64, 7.4, 255, 255, 0.0, Some(NoiseConfig::seeded(7))).unwrap();
        let img = render(&report_at(0.0, ClassId::Class1), &cfg).unwrap();
        assert!(img.values().iter().all(|&v| v <= cfg.depth_max));
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
    }

    #[test]
    fn pgm_and_csv_are_well_formed() {
        let cfg = CameraConfig::default();
        let img = render(&report_at(10.0, ClassId::Class1), &cfg).unwrap();
        let mut csv = Vec::new();
        img.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("pixel,count\n"));
        assert_eq!(text.lines().count(), cfg.pixels + 1);
        let mut pgm = Vec::new();
        img.write_pgm(&mut pgm).unwrap();
        let text = String::from_utf8(pgm).unwrap();
        assert!(text.starts_with("P2\n640 1\n255\n"));
    }
}
