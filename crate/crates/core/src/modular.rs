//! One-dimensional two-slit wavepacket model: translation-operator
//! expectations, momentum distributions folded modulo the slit period, and
//! free evolution on a periodic spectral grid.
//!
//! Units are dimensionless with ħ = m = 1, so the momentum period conjugate
//! to a slit separation `ℓ` is `2π/ℓ`. The packet lives on a uniform grid
//! over `[-L/2, L/2)` with a power-of-two sample count; the domain is sized
//! so wrap-around mass stays below 1e-10 for the packets in use.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ModularError>;

pub const DEFAULT_ELL: f64 = 20.0;
pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_SAMPLES: usize = 8192;
/// Domain length as a multiple of the slit separation.
pub const DEFAULT_DOMAIN_FACTOR: f64 = 16.0;
pub const DEFAULT_BINS: usize = 64;
/// Packets count as non-overlapping when their overlap integral is below this.
pub const OVERLAP_LIMIT: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModularError {
    #[error("sample count must be a power of two >= 16, got {0}")]
    BadSampleCount(usize),
    #[error("domain length must be positive, got {0}")]
    BadLength(f64),
    #[error("grid spacing {dx:.4} is coarser than sigma/8 = {limit:.4}")]
    GridTooCoarse { dx: f64, limit: f64 },
    #[error("packet at {center} spills outside the domain (needs ±6σ)")]
    GridTooSmall { center: f64 },
    #[error("packets overlap: exp(-l²/8σ²) = {overlap:.3e} exceeds {limit:.1e}")]
    OverlappingPackets { overlap: f64, limit: f64 },
    #[error("translation by {shift} exceeds half the domain ({half})")]
    ShiftOutOfRange { shift: f64, half: f64 },
    #[error("translation power must be a positive integer")]
    ZeroPower,
    #[error("slit separation must be positive, got {0}")]
    BadSeparation(f64),
    #[error("bin count must be positive")]
    NoBins,
    #[error("evolution time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("wavepacket spread beyond the grid: {mass:.3e} of the mass sits in the outer 5% of the domain")]
    DomainOverflow { mass: f64 },
    #[error("projection removed all probability mass")]
    EmptyProjection,
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
}

/// Uniform periodic grid specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub samples: usize,
}

impl GridSpec {
    pub fn new(length: f64, samples: usize) -> Result<Self> {
        if length <= 0.0 || !length.is_finite() {
            return Err(ModularError::BadLength(length));
        }
        if samples < 16 || !samples.is_power_of_two() {
            return Err(ModularError::BadSampleCount(samples));
        }
        Ok(GridSpec { length, samples })
    }

    /// Default domain for a slit separation: `16ℓ` long, 8192 samples.
    pub fn for_separation(ell: f64) -> Result<Self> {
        GridSpec::new(DEFAULT_DOMAIN_FACTOR * ell, DEFAULT_SAMPLES)
    }

    pub fn dx(&self) -> f64 {
        self.length / self.samples as f64
    }
}

/// Sampled complex wavefunction on a uniform periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavepacket1D {
    x0: f64,
    dx: f64,
    values: Vec<Complex64>,
}

impl Wavepacket1D {
    pub fn from_samples(x0: f64, dx: f64, values: Vec<Complex64>) -> Self {
        Wavepacket1D { x0, dx, values }
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn length(&self) -> f64 {
        self.dx * self.values.len() as f64
    }

    pub fn x_at(&self, index: usize) -> f64 {
        self.x0 + index as f64 * self.dx
    }

    pub fn squared_norm(&self) -> f64 {
        self.dx * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n2 = self.squared_norm();
        if n2 < 1e-300 {
            return Err(ModularError::EmptyProjection);
        }
        let scale = 1.0 / n2.sqrt();
        for v in &mut self.values {
            *v *= scale;
        }
        Ok(self)
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Probability mass in the outermost `fraction` of the domain (split
    /// evenly between the two edges).
    pub fn edge_mass(&self, fraction: f64) -> f64 {
        let n = self.values.len();
        let edge = ((n as f64 * fraction / 2.0).round() as usize).max(1);
        let mut sum = 0.0;
        for i in 0..edge {
            sum += self.values[i].norm_sqr();
            sum += self.values[n - 1 - i].norm_sqr();
        }
        sum * self.dx
    }

    /// Momentum-space probability masses `(p_k, m_k)`, normalized to 1, in
    /// FFT frequency order with signed momenta.
    pub fn momentum_masses(&self) -> Vec<(f64, f64)> {
        let spectrum = fft_forward(&self.values);
        let n = self.values.len();
        let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
        let dp = 2.0 * std::f64::consts::PI / self.length();
        spectrum
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                (signed * dp, c.norm_sqr() / total)
            })
            .collect()
    }

    /// `x,density` rows prefixed by a `# json` parameter header.
    pub fn write_density_csv<W: std::io::Write>(
        &self,
        mut out: W,
        params: &serde_json::Value,
    ) -> std::io::Result<()> {
        writeln!(out, "# {params}")?;
        writeln!(out, "x,density")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.x_at(i), v.norm_sqr())?;
        }
        Ok(())
    }
}

fn fft_forward(values: &[Complex64]) -> Vec<Complex64> {
    let mut buffer = values.to_vec();
    FftPlanner::new()
        .plan_fft_forward(buffer.len())
        .process(&mut buffer);
    buffer
}

fn fft_inverse(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buffer = spectrum.to_vec();
    FftPlanner::new()
        .plan_fft_inverse(buffer.len())
        .process(&mut buffer);
    let scale = 1.0 / buffer.len() as f64;
    for v in &mut buffer {
        *v *= scale;
    }
    buffer
}

/// Signed momentum of FFT bin `k`.
fn momentum_of_bin(k: usize, n: usize, length: f64) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    signed * 2.0 * std::f64::consts::PI / length
}

fn gaussian_profile(x: f64, center: f64, sigma: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    norm * (-((x - center) * (x - center)) / (4.0 * sigma * sigma)).exp()
}

fn check_packet_fits(grid: &GridSpec, center: f64, sigma: f64) -> Result<()> {
    let dx = grid.dx();
    if dx > sigma / 8.0 {
        return Err(ModularError::GridTooCoarse {
            dx,
            limit: sigma / 8.0,
        });
    }
    let half = grid.length / 2.0;
    if center - 6.0 * sigma < -half || center + 6.0 * sigma > half {
        return Err(ModularError::GridTooSmall { center });
    }
    Ok(())
}

/// A single normalized Gaussian packet centered at `center`.
pub fn single_packet(grid: &GridSpec, center: f64, sigma: f64) -> Result<Wavepacket1D> {
    check_packet_fits(grid, center, sigma)?;
    let dx = grid.dx();
    let x0 = -grid.length / 2.0;
    let values = (0..grid.samples)
        .map(|i| Complex64::new(gaussian_profile(x0 + i as f64 * dx, center, sigma), 0.0))
        .collect();
    Wavepacket1D::from_samples(x0, dx, values).normalized()
}

/// Equal superposition of packets behind the two slits, with the relative
/// phase on the packet at the origin.
#[derive(Clone, Debug)]
pub struct TwoSlitState {
    ell: f64,
    sigma: f64,
    alpha: f64,
    packet: Wavepacket1D,
}

impl TwoSlitState {
    /// Packets at `x = ℓ` (the left slit) and `x = 0` (the right slit),
    /// relative phase `alpha` on the right one. Rejects overlapping packets.
    pub fn new(ell: f64, sigma: f64, alpha: f64, grid: &GridSpec) -> Result<Self> {
        let overlap = (-(ell * ell) / (8.0 * sigma * sigma)).exp();
        if overlap > OVERLAP_LIMIT {
            return Err(ModularError::OverlappingPackets {
                overlap,
                limit: OVERLAP_LIMIT,
            });
        }
        Self::new_with_overlap(ell, sigma, alpha, grid)
    }

    /// Same construction without the non-overlap guard; the overlap then
    /// shows up as a norm correction absorbed by renormalization.
    pub fn new_with_overlap(ell: f64, sigma: f64, alpha: f64, grid: &GridSpec) -> Result<Self> {
        if ell <= 0.0 || !ell.is_finite() {
            return Err(ModularError::BadSeparation(ell));
        }
        check_packet_fits(grid, 0.0, sigma)?;
        check_packet_fits(grid, ell, sigma)?;
        let dx = grid.dx();
        let x0 = -grid.length / 2.0;
        let phase = Complex64::from_polar(1.0, alpha);
        let amp = 1.0 / 2.0f64.sqrt();
        let values = (0..grid.samples)
            .map(|i| {
                let x = x0 + i as f64 * dx;
                amp * (Complex64::new(gaussian_profile(x, ell, sigma), 0.0)
                    + phase * gaussian_profile(x, 0.0, sigma))
            })
            .collect();
        let packet = Wavepacket1D::from_samples(x0, dx, values).normalized()?;
        Ok(TwoSlitState {
            ell,
            sigma,
            alpha,
            packet,
        })
    }

    pub fn defaults(alpha: f64) -> Result<Self> {
        let grid = GridSpec::for_separation(DEFAULT_ELL)?;
        Self::new(DEFAULT_ELL, DEFAULT_SIGMA, alpha, &grid)
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn packet(&self) -> &Wavepacket1D {
        &self.packet
    }
}

/// `<ψ| T_d^n |ψ> = ∫ ψ*(x) ψ(x - n·d) dx`, evaluated spectrally: the
/// translation operator is diagonal in momentum with phase `e^{-i p n d}`.
pub fn translate_expectation(state: &Wavepacket1D, distance: f64, power: u32) -> Result<Complex64> {
    if power == 0 {
        return Err(ModularError::ZeroPower);
    }
    let total_shift = distance * power as f64;
    let half = state.length() / 2.0;
    if total_shift.abs() > half {
        return Err(ModularError::ShiftOutOfRange {
            shift: total_shift,
            half,
        });
    }
    let spectrum = fft_forward(&state.values);
    let n = state.len();
    let mut sum = Complex64::ZERO;
    for (k, c) in spectrum.iter().enumerate() {
        let p = momentum_of_bin(k, n, state.length());
        sum += c.norm_sqr() * Complex64::from_polar(1.0, -p * total_shift);
    }
    Ok(sum * state.dx / n as f64)
}

/// Momentum distribution folded modulo `2π/ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModularDistribution {
    period: f64,
    masses: Vec<f64>,
}

impl ModularDistribution {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bin_count(&self) -> usize {
        self.masses.len()
    }

    /// Largest relative deviation from the uniform distribution.
    pub fn uniformity_deviation(&self) -> f64 {
        let uniform = 1.0 / self.masses.len() as f64;
        self.masses
            .iter()
            .map(|m| (m - uniform).abs() / uniform)
            .fold(0.0, f64::max)
    }

    pub fn max_min_ratio(&self) -> f64 {
        let max = self.masses.iter().copied().fold(f64::MIN, f64::max);
        let min = self.masses.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }

    /// `p_mod,mass` rows prefixed by a `# json` parameter header.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        params: &serde_json::Value,
    ) -> std::io::Result<()> {
        writeln!(out, "# {params}")?;
        writeln!(out, "p_mod,mass")?;
        let width = self.period / self.masses.len() as f64;
        for (i, m) in self.masses.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 * width, m)?;
        }
        Ok(())
    }
}

/// Folds the momentum density into `[0, 2π/ℓ)`. Each discrete spectral mass
/// represents a `dp`-wide slice of the continuous density, so it is spread
/// uniformly over its slice before binning; otherwise a commensurate grid
/// (like the default, with period exactly 16 dp) would populate only a comb
/// of bins.
pub fn modular_distribution(state: &Wavepacket1D, ell: f64) -> Result<ModularDistribution> {
    modular_distribution_with_bins(state, ell, DEFAULT_BINS)
}

pub fn modular_distribution_with_bins(
    state: &Wavepacket1D,
    ell: f64,
    bins: usize,
) -> Result<ModularDistribution> {
    if ell <= 0.0 || !ell.is_finite() {
        return Err(ModularError::BadSeparation(ell));
    }
    if bins == 0 {
        return Err(ModularError::NoBins);
    }
    let period = 2.0 * std::f64::consts::PI / ell;
    let dp = 2.0 * std::f64::consts::PI / state.length();
    let mut masses = vec![0.0f64; bins];
    let bin_width = period / bins as f64;

    for (p, mass) in state.momentum_masses() {
        if mass == 0.0 {
            continue;
        }
        // The box [center - dp/2, center + dp/2) may stick out of the period;
        // bin indices are taken modulo the bin count, which folds it back.
        let center = p.rem_euclid(period);
        let lo = center - dp / 2.0;
        let hi = center + dp / 2.0;
        let first = (lo / bin_width).floor() as i64;
        let last = (hi / bin_width).ceil() as i64;
        for b in first..last {
            let seg_lo = lo.max(b as f64 * bin_width);
            let seg_hi = hi.min((b + 1) as f64 * bin_width);
            if seg_hi > seg_lo {
                let idx = b.rem_euclid(bins as i64) as usize;
                masses[idx] += mass * (seg_hi - seg_lo) / (hi - lo);
            }
        }
    }

    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    Ok(ModularDistribution { period, masses })
}

/// Joint verdict of the two sides of the complete-uncertainty criterion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub is_completely_uncertain: bool,
    pub max_overlap: f64,
    pub max_uniformity_deviation: f64,
    /// `|<T_ℓ^n>|` for n = 1..=n_max.
    pub overlaps: Vec<f64>,
    pub epsilon: f64,
}

/// Evaluates `|<T_ℓ^n>|` for n = 1..n_max together with the folded-momentum
/// uniformity deviation. The state is completely uncertain exactly when all
/// the translation expectations vanish; both sides are reported so the
/// equivalence can be probed from either direction.
pub fn complete_uncertainty_check(
    state: &Wavepacket1D,
    ell: f64,
    n_max: u32,
    epsilon: f64,
) -> Result<UncertaintyReport> {
    let mut overlaps = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max.max(1) {
        overlaps.push(translate_expectation(state, ell, n)?.norm());
    }
    let max_overlap = overlaps.iter().copied().fold(0.0, f64::max);
    let distribution = modular_distribution(state, ell)?;
    Ok(UncertaintyReport {
        is_completely_uncertain: overlaps.iter().all(|&o| o < epsilon),
        max_overlap,
        max_uniformity_deviation: distribution.uniformity_deviation(),
        overlaps,
        epsilon,
    })
}

/// Free evolution `exp(-i p² t / 2)` in momentum space. Errors out once a
/// non-negligible fraction of the mass reaches the domain edges, where the
/// periodic wrap-around would corrupt the pattern.
pub fn free_evolve(state: &Wavepacket1D, t: f64) -> Result<Wavepacket1D> {
    if t < 0.0 {
        return Err(ModularError::NegativeTime(t));
    }
    let mut spectrum = fft_forward(&state.values);
    let n = state.len();
    for (k, c) in spectrum.iter_mut().enumerate() {
        let p = momentum_of_bin(k, n, state.length());
        *c *= Complex64::from_polar(1.0, -0.5 * p * p * t);
    }
    let evolved = Wavepacket1D::from_samples(state.x0, state.dx, fft_inverse(&spectrum));
    let mass = evolved.edge_mass(0.05);
    if mass >= 1e-6 {
        return Err(ModularError::DomainOverflow { mass });
    }
    Ok(evolved)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slit {
    /// The packet at `x = ℓ`.
    Left,
    /// The packet at `x = 0`.
    Right,
}

/// Projects out the half-domain behind the closed slit and renormalizes —
/// the state after acquiring which-slit knowledge.
pub fn close_slit(packet: &Wavepacket1D, ell: f64, which: Slit) -> Result<Wavepacket1D> {
    if ell <= 0.0 || !ell.is_finite() {
        return Err(ModularError::BadSeparation(ell));
    }
    let boundary = ell / 2.0;
    let mut values = packet.values.clone();
    for (i, v) in values.iter_mut().enumerate() {
        let x = packet.x_at(i);
        let removed = match which {
            Slit::Left => x >= boundary,
            Slit::Right => x < boundary,
        };
        if removed {
            *v = Complex64::ZERO;
        }
    }
    let kept = Wavepacket1D::from_samples(packet.x0, packet.dx, values);
    if kept.squared_norm() < 1e-12 * packet.squared_norm() {
        return Err(ModularError::EmptyProjection);
    }
    kept.normalized()
}

impl TwoSlitState {
    pub fn close(&self, which: Slit) -> Result<Wavepacket1D> {
        close_slit(&self.packet, self.ell, which)
    }
}

/// Sampled `|ψ(x, t)|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenPattern {
    pub x0: f64,
    pub dx: f64,
    pub density: Vec<f64>,
}

impl ScreenPattern {
    pub fn total_mass(&self) -> f64 {
        self.dx * self.density.iter().sum::<f64>()
    }

    pub fn x_at(&self, index: usize) -> f64 {
        self.x0 + index as f64 * self.dx
    }

    /// `x,density` rows prefixed by a `# json` parameter header.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        params: &serde_json::Value,
    ) -> std::io::Result<()> {
        writeln!(out, "# {params}")?;
        writeln!(out, "x,density")?;
        for (i, d) in self.density.iter().enumerate() {
            writeln!(out, "{},{}", self.x_at(i), d)?;
        }
        Ok(())
    }
}

/// Evolves the state for time `t` and returns the spatial pattern an
/// ensemble would accumulate on a screen.
pub fn screen_pattern(state: &Wavepacket1D, t: f64) -> Result<ScreenPattern> {
    let evolved = free_evolve(state, t)?;
    Ok(ScreenPattern {
        x0: evolved.x0,
        dx: evolved.dx,
        density: evolved.density(),
    })
}
