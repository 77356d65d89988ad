//! Path-mode states and the twin Mach-Zehnder optical network.
//!
//! The interferometer is reduced to four transverse planes along the
//! propagation direction:
//!
//! ```text
//! plane1 (R1) --BS1--> plane2 (L2, R2) --first MZ--> plane4 (L4, R4)
//!                                      --second MZ--> plane6 (L6, R6)
//! ```
//!
//! Everything between consecutive planes folds into a single stage: BS1 is a
//! column vector, each Mach-Zehnder (mirrors, arm phases and the recombining
//! beam splitter) is one complex 2x2 transfer matrix, and shutters are mode
//! projectors. The phase window sits on the L4-derived arm between the two
//! interferometers. Shutters zero an amplitude outright, so evolution with
//! shutters is norm-decreasing; nothing is renormalized unless a caller asks.
//!
//! The concrete default matrices are one valid realization; any override must
//! satisfy the same constraints (unitarity, the bright-path condition
//! `u1 * bs1 = (0, -1)` and the output condition `<R6| u2 u1 = (-i, 0)`),
//! which is what actually pins the physics.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PathspaceError>;

/// Tolerance for unitarity and network-constraint checks.
pub const NETWORK_TOL: f64 = 1e-12;
/// Below this overlap magnitude a pre/post pair counts as orthogonal.
pub const ORTHOGONALITY_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum PathspaceError {
    #[error("target plane {to:?} is not reachable from {from:?} in this direction")]
    PlaneOrder { from: PlaneId, to: PlaneId },
    #[error("state lives at {state:?} but {other:?} was required")]
    PlaneMismatch { state: PlaneId, other: PlaneId },
    #[error("mode {mode:?} does not belong to plane {plane:?}")]
    ModeMismatch { mode: Mode, plane: PlaneId },
    #[error("amplitude vector has {got} entries but plane {plane:?} has {expected} modes")]
    AmplitudeCount {
        plane: PlaneId,
        expected: usize,
        got: usize,
    },
    #[error("non-finite amplitude at mode index {index}")]
    NonFiniteAmplitude { index: usize },
    #[error("{name} is not unitary within {tol:e}")]
    NotUnitary { name: &'static str, tol: f64 },
    #[error("bs1 column is not normalized")]
    UnnormalizedSplitter,
    #[error("network violates the bright-path constraint: u1 * bs1 must equal (0, -1)")]
    BrightPath,
    #[error("network violates the output constraint: <R6| u2 u1 must equal (-i, 0)")]
    OutputRow,
    #[error("pre- and post-selection are orthogonal (|<post|pre>| = {overlap:.3e}); weak value undefined")]
    OrthogonalSelection { overlap: f64 },
    #[error("projector moment must be a positive integer")]
    ZeroMoment,
    #[error("unknown measurement class {0}; expected 0, 1 or 2")]
    UnknownClass(u8),
}

/// Transverse planes of the network, ordered along the propagation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlaneId {
    Plane1,
    Plane2,
    Plane4,
    Plane6,
}

impl PlaneId {
    pub fn mode_count(self) -> usize {
        match self {
            PlaneId::Plane1 => 1,
            _ => 2,
        }
    }

    pub fn modes(self) -> &'static [Mode] {
        match self {
            PlaneId::Plane1 => &[Mode::R1],
            PlaneId::Plane2 => &[Mode::L2, Mode::R2],
            PlaneId::Plane4 => &[Mode::L4, Mode::R4],
            PlaneId::Plane6 => &[Mode::L6, Mode::R6],
        }
    }
}

/// Path labels of the planes, in the usual left/right notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    R1,
    L2,
    R2,
    L4,
    R4,
    L6,
    R6,
}

impl Mode {
    pub fn plane(self) -> PlaneId {
        match self {
            Mode::R1 => PlaneId::Plane1,
            Mode::L2 | Mode::R2 => PlaneId::Plane2,
            Mode::L4 | Mode::R4 => PlaneId::Plane4,
            Mode::L6 | Mode::R6 => PlaneId::Plane6,
        }
    }

    /// Position of the mode within its plane's amplitude vector (L before R).
    pub fn index(self) -> usize {
        match self {
            Mode::R1 => 0,
            Mode::L2 | Mode::L4 | Mode::L6 => 0,
            Mode::R2 | Mode::R4 | Mode::R6 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::R1 => "R1",
            Mode::L2 => "L2",
            Mode::R2 => "R2",
            Mode::L4 => "L4",
            Mode::R4 => "R4",
            Mode::L6 => "L6",
            Mode::R6 => "R6",
        }
    }
}

/// Complex amplitude vector over the path modes of one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    plane: PlaneId,
    amplitudes: Vec<Complex64>,
}

impl PathState {
    pub fn new(plane: PlaneId, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != plane.mode_count() {
            return Err(PathspaceError::AmplitudeCount {
                plane,
                expected: plane.mode_count(),
                got: amplitudes.len(),
            });
        }
        for (index, a) in amplitudes.iter().enumerate() {
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(PathspaceError::NonFiniteAmplitude { index });
            }
        }
        Ok(PathState { plane, amplitudes })
    }

    /// Unit amplitude in a single mode.
    pub fn basis(mode: Mode) -> Self {
        let plane = mode.plane();
        let mut amplitudes = vec![Complex64::ZERO; plane.mode_count()];
        amplitudes[mode.index()] = Complex64::ONE;
        PathState { plane, amplitudes }
    }

    pub fn zero(plane: PlaneId) -> Self {
        PathState {
            plane,
            amplitudes: vec![Complex64::ZERO; plane.mode_count()],
        }
    }

    pub fn plane(&self) -> PlaneId {
        self.plane
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, mode: Mode) -> Result<Complex64> {
        if mode.plane() != self.plane {
            return Err(PathspaceError::ModeMismatch {
                mode,
                plane: self.plane,
            });
        }
        Ok(self.amplitudes[mode.index()])
    }

    pub fn squared_norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.squared_norm() - 1.0).abs() <= NETWORK_TOL
    }

    /// `<self|other>` with the physics convention (conjugate on the left).
    pub fn inner(&self, other: &PathState) -> Result<Complex64> {
        if self.plane != other.plane {
            return Err(PathspaceError::PlaneMismatch {
                state: other.plane,
                other: self.plane,
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn normalized(&self) -> Option<PathState> {
        let n = self.norm();
        if n < 1e-150 {
            return None;
        }
        let amplitudes = self.amplitudes.iter().map(|a| a / n).collect();
        Some(PathState {
            plane: self.plane,
            amplitudes,
        })
    }
}

/// Row-major complex 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    rows: [[Complex64; 2]; 2],
}

impl Mat2 {
    pub const fn new(rows: [[Complex64; 2]; 2]) -> Self {
        Mat2 { rows }
    }

    pub fn rows(&self) -> &[[Complex64; 2]; 2] {
        &self.rows
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.rows[row][col]
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.rows[0][0] * v[0] + self.rows[0][1] * v[1],
            self.rows[1][0] * v[0] + self.rows[1][1] * v[1],
        ]
    }

    pub fn adjoint(&self) -> Mat2 {
        Mat2 {
            rows: [
                [self.rows[0][0].conj(), self.rows[1][0].conj()],
                [self.rows[0][1].conj(), self.rows[1][1].conj()],
            ],
        }
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let mut rows = [[Complex64::ZERO; 2]; 2];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = self.rows[i][0] * rhs.rows[0][j] + self.rows[i][1] * rhs.rows[1][j];
            }
        }
        Mat2 { rows }
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let product = self.mul(&self.adjoint());
        let id = [[Complex64::ONE, Complex64::ZERO], [Complex64::ZERO, Complex64::ONE]];
        product
            .rows
            .iter()
            .flatten()
            .zip(id.iter().flatten())
            .all(|(a, b)| (a - b).norm() <= tol)
    }
}

/// Shutter locations. L3 interrupts the R2-derived arm inside the first
/// Mach-Zehnder; L4 and R4 sit between the interferometers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Blocker {
    L3,
    L4,
    R4,
}

/// The three interferometer configurations used for weak measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassId {
    Class0,
    Class1,
    Class2,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Class0, ClassId::Class1, ClassId::Class2];

    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            0 => Ok(ClassId::Class0),
            1 => Ok(ClassId::Class1),
            2 => Ok(ClassId::Class2),
            other => Err(PathspaceError::UnknownClass(other)),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            ClassId::Class0 => 0,
            ClassId::Class1 => 1,
            ClassId::Class2 => 2,
        }
    }

    /// Theoretical weak value of the L2 projector for this configuration.
    pub fn theoretical_weak_value(self) -> f64 {
        match self {
            ClassId::Class0 => 0.0,
            ClassId::Class1 => 1.0,
            ClassId::Class2 => 0.5,
        }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The beam-splitter/mirror matrices of the network, without shutters or the
/// phase window. Overridable as a set; every override is validated against the
/// same constraints the defaults satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrices", into = "RawMatrices")]
pub struct NetworkMatrices {
    pub bs1: [Complex64; 2],
    pub u1: Mat2,
    pub u2: Mat2,
}

impl Default for NetworkMatrices {
    fn default() -> Self {
        let s = FRAC_1_SQRT_2;
        NetworkMatrices {
            // R1 -> (L2, R2)
            bs1: [c(0.0, s), c(s, 0.0)],
            // (L2, R2) -> (L4, R4)
            u1: Mat2::new([[c(s, 0.0), c(0.0, -s)], [c(0.0, s), c(-s, 0.0)]]),
            // (L4, R4) -> (L6, R6)
            u2: Mat2::new([[c(-s, 0.0), c(0.0, -s)], [c(0.0, -s), c(-s, 0.0)]]),
        }
    }
}

impl NetworkMatrices {
    pub fn validate(&self) -> Result<()> {
        let bs_norm: f64 = self.bs1.iter().map(|a| a.norm_sqr()).sum();
        if (bs_norm - 1.0).abs() > NETWORK_TOL {
            return Err(PathspaceError::UnnormalizedSplitter);
        }
        if !self.u1.is_unitary(NETWORK_TOL) {
            return Err(PathspaceError::NotUnitary {
                name: "u1",
                tol: NETWORK_TOL,
            });
        }
        if !self.u2.is_unitary(NETWORK_TOL) {
            return Err(PathspaceError::NotUnitary {
                name: "u2",
                tol: NETWORK_TOL,
            });
        }
        // Bright path: everything from R1 emerges along R4 as -|R4>.
        let after_first = self.u1.apply(self.bs1);
        if (after_first[0]).norm() > NETWORK_TOL || (after_first[1] + Complex64::ONE).norm() > NETWORK_TOL
        {
            return Err(PathspaceError::BrightPath);
        }
        // Output row: <R6| u2 u1 = (-i, 0).
        let total = self.u2.mul(&self.u1);
        let row = total.rows()[Mode::R6.index()];
        if (row[0] - c(0.0, -1.0)).norm() > NETWORK_TOL || row[1].norm() > NETWORK_TOL {
            return Err(PathspaceError::OutputRow);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrices {
    bs1: [[f64; 2]; 2],
    u1: [[f64; 2]; 4],
    u2: [[f64; 2]; 4],
}

fn mat_to_raw(m: &Mat2) -> [[f64; 2]; 4] {
    let r = m.rows();
    [
        [r[0][0].re, r[0][0].im],
        [r[0][1].re, r[0][1].im],
        [r[1][0].re, r[1][0].im],
        [r[1][1].re, r[1][1].im],
    ]
}

fn mat_from_raw(raw: &[[f64; 2]; 4]) -> Mat2 {
    Mat2::new([
        [c(raw[0][0], raw[0][1]), c(raw[1][0], raw[1][1])],
        [c(raw[2][0], raw[2][1]), c(raw[3][0], raw[3][1])],
    ])
}

impl From<NetworkMatrices> for RawMatrices {
    fn from(m: NetworkMatrices) -> Self {
        RawMatrices {
            bs1: [[m.bs1[0].re, m.bs1[0].im], [m.bs1[1].re, m.bs1[1].im]],
            u1: mat_to_raw(&m.u1),
            u2: mat_to_raw(&m.u2),
        }
    }
}

impl TryFrom<RawMatrices> for NetworkMatrices {
    type Error = PathspaceError;

    fn try_from(raw: RawMatrices) -> Result<Self> {
        let m = NetworkMatrices {
            bs1: [c(raw.bs1[0][0], raw.bs1[0][1]), c(raw.bs1[1][0], raw.bs1[1][1])],
            u1: mat_from_raw(&raw.u1),
            u2: mat_from_raw(&raw.u2),
        };
        m.validate()?;
        Ok(m)
    }
}

/// The full network: matrices plus shutters and the phase window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkConfig", into = "RawNetworkConfig")]
pub struct NetworkConfig {
    matrices: NetworkMatrices,
    blockers: BTreeSet<Blocker>,
    phase_window: f64,
    class_id: Option<ClassId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetworkConfig {
    bs1: [[f64; 2]; 2],
    u1: [[f64; 2]; 4],
    u2: [[f64; 2]; 4],
    #[serde(default)]
    blockers: Vec<Blocker>,
    #[serde(default)]
    phase_window: f64,
    #[serde(default)]
    class_id: Option<u8>,
}

impl From<NetworkConfig> for RawNetworkConfig {
    fn from(net: NetworkConfig) -> Self {
        let raw: RawMatrices = net.matrices.into();
        RawNetworkConfig {
            bs1: raw.bs1,
            u1: raw.u1,
            u2: raw.u2,
            blockers: net.blockers.into_iter().collect(),
            phase_window: net.phase_window,
            class_id: net.class_id.map(ClassId::index),
        }
    }
}

impl TryFrom<RawNetworkConfig> for NetworkConfig {
    type Error = PathspaceError;

    fn try_from(raw: RawNetworkConfig) -> Result<Self> {
        let matrices = NetworkMatrices::try_from(RawMatrices {
            bs1: raw.bs1,
            u1: raw.u1,
            u2: raw.u2,
        })?;
        let class_id = match raw.class_id {
            Some(i) => Some(ClassId::from_index(i)?),
            None => None,
        };
        Ok(NetworkConfig {
            matrices,
            blockers: raw.blockers.into_iter().collect(),
            phase_window: raw.phase_window,
            class_id,
        })
    }
}

impl NetworkConfig {
    pub fn new(
        matrices: NetworkMatrices,
        blockers: BTreeSet<Blocker>,
        phase_window: f64,
        class_id: Option<ClassId>,
    ) -> Result<Self> {
        matrices.validate()?;
        Ok(NetworkConfig {
            matrices,
            blockers,
            phase_window,
            class_id,
        })
    }

    /// Preset for one of the three measurement classes with default matrices.
    pub fn class_preset(class: ClassId) -> Self {
        Self::class_preset_with(&NetworkMatrices::default(), class)
            .expect("default matrices satisfy the network constraints")
    }

    pub fn class_preset_with(matrices: &NetworkMatrices, class: ClassId) -> Result<Self> {
        let (blockers, phase_window) = match class {
            ClassId::Class1 => (BTreeSet::new(), 0.0),
            ClassId::Class2 => ([Blocker::L4].into_iter().collect(), 0.0),
            ClassId::Class0 => (BTreeSet::new(), PI),
        };
        NetworkConfig::new(*matrices, blockers, phase_window, Some(class))
    }

    /// Calibration layout: L3 and R4 shuttered so a single path survives.
    pub fn calibration_preset() -> Self {
        Self::calibration_preset_with(&NetworkMatrices::default())
            .expect("default matrices satisfy the network constraints")
    }

    pub fn calibration_preset_with(matrices: &NetworkMatrices) -> Result<Self> {
        NetworkConfig::new(
            *matrices,
            [Blocker::L3, Blocker::R4].into_iter().collect(),
            0.0,
            None,
        )
    }

    pub fn matrices(&self) -> &NetworkMatrices {
        &self.matrices
    }

    pub fn blockers(&self) -> &BTreeSet<Blocker> {
        &self.blockers
    }

    pub fn is_blocked(&self, blocker: Blocker) -> bool {
        self.blockers.contains(&blocker)
    }

    pub fn phase_window(&self) -> f64 {
        self.phase_window
    }

    pub fn class_id(&self) -> Option<ClassId> {
        self.class_id
    }

    pub fn with_blockers(mut self, blockers: BTreeSet<Blocker>) -> Self {
        self.blockers = blockers;
        self
    }

    pub fn with_phase_window(mut self, phase: f64) -> Self {
        self.phase_window = phase;
        self
    }

    pub(crate) fn window_factor(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.phase_window)
    }
}

/// A path projector `|mode><mode|` with eigenvalues {0, 1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectorObservable {
    mode: Mode,
}

impl ProjectorObservable {
    pub fn new(mode: Mode) -> Self {
        ProjectorObservable { mode }
    }

    pub fn mode(self) -> Mode {
        self.mode
    }

    pub fn plane(self) -> PlaneId {
        self.mode.plane()
    }
}

/// Propagates a state forward through the network stages up to `to`.
///
/// Stage order is BS1, the L3 shutter, u1, the L4/R4 shutters, the phase
/// window, u2 — restricted to the plane range actually traversed.
pub fn forward_propagate(net: &NetworkConfig, state: &PathState, to: PlaneId) -> Result<PathState> {
    if state.plane > to {
        return Err(PathspaceError::PlaneOrder {
            from: state.plane,
            to,
        });
    }
    let mut plane = state.plane;
    let mut amps = state.amplitudes.clone();
    while plane < to {
        match plane {
            PlaneId::Plane1 => {
                let a = amps[0];
                amps = vec![net.matrices.bs1[0] * a, net.matrices.bs1[1] * a];
                plane = PlaneId::Plane2;
            }
            PlaneId::Plane2 => {
                if net.is_blocked(Blocker::L3) {
                    amps[Mode::R2.index()] = Complex64::ZERO;
                }
                let v = net.matrices.u1.apply([amps[0], amps[1]]);
                amps = v.to_vec();
                plane = PlaneId::Plane4;
            }
            PlaneId::Plane4 => {
                if net.is_blocked(Blocker::L4) {
                    amps[Mode::L4.index()] = Complex64::ZERO;
                }
                if net.is_blocked(Blocker::R4) {
                    amps[Mode::R4.index()] = Complex64::ZERO;
                }
                amps[Mode::L4.index()] *= net.window_factor();
                let v = net.matrices.u2.apply([amps[0], amps[1]]);
                amps = v.to_vec();
                plane = PlaneId::Plane6;
            }
            PlaneId::Plane6 => unreachable!("Plane6 is the last plane"),
        }
    }
    PathState::new(plane, amps)
}

/// Propagates a state backward by applying stage adjoints in reverse order.
/// Shutter projectors are self-adjoint and applied as-is, so the result may
/// be sub-normalized.
pub fn backward_propagate(net: &NetworkConfig, state: &PathState, to: PlaneId) -> Result<PathState> {
    if state.plane < to {
        return Err(PathspaceError::PlaneOrder {
            from: state.plane,
            to,
        });
    }
    let mut plane = state.plane;
    let mut amps = state.amplitudes.clone();
    while plane > to {
        match plane {
            PlaneId::Plane6 => {
                let v = net.matrices.u2.adjoint().apply([amps[0], amps[1]]);
                amps = v.to_vec();
                amps[Mode::L4.index()] *= net.window_factor().conj();
                if net.is_blocked(Blocker::L4) {
                    amps[Mode::L4.index()] = Complex64::ZERO;
                }
                if net.is_blocked(Blocker::R4) {
                    amps[Mode::R4.index()] = Complex64::ZERO;
                }
                plane = PlaneId::Plane4;
            }
            PlaneId::Plane4 => {
                let v = net.matrices.u1.adjoint().apply([amps[0], amps[1]]);
                amps = v.to_vec();
                if net.is_blocked(Blocker::L3) {
                    amps[Mode::R2.index()] = Complex64::ZERO;
                }
                plane = PlaneId::Plane2;
            }
            PlaneId::Plane2 => {
                let a = net.matrices.bs1[0].conj() * amps[0] + net.matrices.bs1[1].conj() * amps[1];
                amps = vec![a];
                plane = PlaneId::Plane1;
            }
            PlaneId::Plane1 => unreachable!("Plane1 is the first plane"),
        }
    }
    PathState::new(plane, amps)
}

/// `<post| P^m |pre> / <post|pre>` for a path projector P.
///
/// Projectors are idempotent, so the result is independent of the moment
/// order `m >= 1`; the argument exists so callers can assert exactly that.
pub fn weak_value(
    pre: &PathState,
    post: &PathState,
    obs: ProjectorObservable,
    moment: u32,
) -> Result<Complex64> {
    if moment == 0 {
        return Err(PathspaceError::ZeroMoment);
    }
    if pre.plane != obs.plane() {
        return Err(PathspaceError::PlaneMismatch {
            state: pre.plane,
            other: obs.plane(),
        });
    }
    if post.plane != obs.plane() {
        return Err(PathspaceError::PlaneMismatch {
            state: post.plane,
            other: obs.plane(),
        });
    }
    let denom = post.inner(pre)?;
    if denom.norm() < ORTHOGONALITY_THRESHOLD {
        return Err(PathspaceError::OrthogonalSelection {
            overlap: denom.norm(),
        });
    }
    let k = obs.mode().index();
    let numer = post.amplitudes[k].conj() * pre.amplitudes[k];
    Ok(numer / denom)
}

/// `<pre| P |pre>`; lies in [0, 1] for a normalized state.
pub fn expectation(pre: &PathState, obs: ProjectorObservable) -> Result<f64> {
    if pre.plane != obs.plane() {
        return Err(PathspaceError::PlaneMismatch {
            state: pre.plane,
            other: obs.plane(),
        });
    }
    Ok(pre.amplitudes[obs.mode().index()].norm_sqr())
}

/// Builds the class network plus the pre/post-selected states, both carried
/// to the coupling plane: the pre-selection forward from R1, the
/// post-selection backward from R6.
pub fn class_selection(class: ClassId) -> (NetworkConfig, PathState, PathState) {
    let net = NetworkConfig::class_preset(class);
    let pre = forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane2)
        .expect("forward preset propagation");
    let post = backward_propagate(&net, &PathState::basis(Mode::R6), PlaneId::Plane2)
        .expect("backward preset propagation");
    (net, pre, post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn assert_close(a: Complex64, b: Complex64, tol: f64) {
        assert!(
            (a - b).norm() <= tol,
            "expected {b}, got {a} (|diff| = {:.3e})",
            (a - b).norm()
        );
    }

    fn assert_state(state: &PathState, expected: &[Complex64], tol: f64) {
        assert_eq!(state.amplitudes().len(), expected.len());
        for (got, want) in state.amplitudes().iter().zip(expected) {
            assert_close(*got, *want, tol);
        }
    }

    #[test]
    fn default_matrices_satisfy_constraints() {
        NetworkMatrices::default().validate().unwrap();
    }

    #[test]
    fn forward_to_coupling_plane_splits_evenly() {
        let net = NetworkConfig::class_preset(ClassId::Class1);
        let out = forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane2).unwrap();
        let s = FRAC_1_SQRT_2;
        assert_state(&out, &[c(0.0, s), c(s, 0.0)], TOL);
    }

    #[test]
    fn forward_to_plane4_is_dark_on_l4() {
        let net = NetworkConfig::class_preset(ClassId::Class1);
        let out = forward_propagate(&net, &PathState::basis(Mode::R1), PlaneId::Plane4).unwrap();
        assert_state(&out, &[Complex64::ZERO, c(-1.0, 0.0)], TOL);
    }

    #[test]
    fn forward_zero_state_stays_zero() {
        let net = NetworkConfig::class_preset(ClassId::Class1);
        let out = forward_propagate(&net, &PathState::zero(PlaneId::Plane1), PlaneId::Plane6).unwrap();
        assert!(out.squared_norm() < 1e-30);
    }

    #[test]
    fn backward_class1_gives_il2() {
        let (net, _, _) = class_selection(ClassId::Class1);
        let post = backward_propagate(&net, &PathState::basis(Mode::R6), PlaneId::Plane2).unwrap();
        assert_state(&post, &[c(0.0, 1.0), Complex64::ZERO], TOL);
    }

    #[test]
    fn backward_class2_gives_half_sum() {
        let (net, _, _) = class_selection(ClassId::Class2);
        let post = backward_propagate(&net, &PathState::basis(Mode::R6), PlaneId::Plane2).unwrap();
        assert_state(&post, &[c(0.0, 0.5), c(0.5, 0.0)], TOL);
    }

    #[test]
    fn backward_class0_gives_r2() {
        let (net, _, _) = class_selection(ClassId::Class0);
        let post = backward_propagate(&net, &PathState::basis(Mode::R6), PlaneId::Plane2).unwrap();
        assert_state(&post, &[Complex64::ZERO, c(1.0, 0.0)], TOL);
    }

    #[test]
    fn blocked_and_windowed_rows_match_constraints() {
        // <R6| u2 diag(0,1) u1 = (-i/2, 1/2) and <R6| u2 diag(-1,1) u1 = (0, 1).
        let m = NetworkMatrices::default();
        let r6 = Mode::R6.index();
        let blocked = {
            let u1 = m.u1.rows();
            let row = m.u2.rows()[r6];
            [row[1] * u1[1][0], row[1] * u1[1][1]]
        };
        assert_close(blocked[0], c(0.0, -0.5), TOL);
        assert_close(blocked[1], c(0.5, 0.0), TOL);

        let windowed = {
            let u1 = m.u1.rows();
            let row = m.u2.rows()[r6];
            let neg = row[0] * c(-1.0, 0.0);
            [
                neg * u1[0][0] + row[1] * u1[1][0],
                neg * u1[0][1] + row[1] * u1[1][1],
            ]
        };
        assert_close(windowed[0], Complex64::ZERO, TOL);
        assert_close(windowed[1], Complex64::ONE, TOL);
    }

    #[test]
    fn weak_values_match_theory_for_all_classes() {
        let n_hat = ProjectorObservable::new(Mode::L2);
        let r_hat = ProjectorObservable::new(Mode::R2);
        let expected_n = [0.0, 1.0, 0.5];
        let expected_r = [1.0, 0.0, 0.5];
        for class in ClassId::ALL {
            let (_, pre, post) = class_selection(class);
            let i = class.index() as usize;
            let nv = weak_value(&pre, &post, n_hat, 1).unwrap();
            assert_close(nv, c(expected_n[i], 0.0), TOL);
            let rv = weak_value(&pre, &post, r_hat, 1).unwrap();
            assert_close(rv, c(expected_r[i], 0.0), TOL);
        }
    }

    #[test]
    fn weak_value_of_eigenstate_is_one() {
        let state = PathState::basis(Mode::L2);
        let wv = weak_value(&state, &state, ProjectorObservable::new(Mode::L2), 1).unwrap();
        assert_close(wv, Complex64::ONE, TOL);
    }

    #[test]
    fn weak_value_rejects_orthogonal_selection() {
        let pre = PathState::basis(Mode::L2);
        let post = PathState::basis(Mode::R2);
        let err = weak_value(&pre, &post, ProjectorObservable::new(Mode::L2), 1).unwrap_err();
        assert!(matches!(err, PathspaceError::OrthogonalSelection { .. }));
    }

    #[test]
    fn weak_value_rejects_zero_moment() {
        let pre = PathState::basis(Mode::L2);
        let err = weak_value(&pre, &pre, ProjectorObservable::new(Mode::L2), 0).unwrap_err();
        assert!(matches!(err, PathspaceError::ZeroMoment));
    }

    #[test]
    fn expectation_examples() {
        let s = FRAC_1_SQRT_2;
        let n_hat = ProjectorObservable::new(Mode::L2);
        let pre = PathState::new(PlaneId::Plane2, vec![c(0.0, s), c(s, 0.0)]).unwrap();
        assert!((expectation(&pre, n_hat).unwrap() - 0.5).abs() <= TOL);
        assert!((expectation(&PathState::basis(Mode::R2), n_hat).unwrap()).abs() <= TOL);
        assert!((expectation(&PathState::basis(Mode::L2), n_hat).unwrap() - 1.0).abs() <= TOL);
    }

    #[test]
    fn class_selection_returns_quoted_states() {
        let s = FRAC_1_SQRT_2;
        let (_, pre, post) = class_selection(ClassId::Class1);
        assert_state(&pre, &[c(0.0, s), c(s, 0.0)], TOL);
        assert_state(&post, &[c(0.0, 1.0), Complex64::ZERO], TOL);
        let (_, _, post2) = class_selection(ClassId::Class2);
        assert_state(&post2, &[c(0.0, 0.5), c(0.5, 0.0)], TOL);
        let (_, _, post0) = class_selection(ClassId::Class0);
        assert_state(&post0, &[Complex64::ZERO, Complex64::ONE], TOL);
    }

    #[test]
    fn class_weak_values_ordered() {
        let n = |class| {
            let (_, pre, post) = class_selection(class);
            weak_value(&pre, &post, ProjectorObservable::new(Mode::L2), 1)
                .unwrap()
                .re
        };
        let (n0, n1, n2) = (n(ClassId::Class0), n(ClassId::Class1), n(ClassId::Class2));
        assert!(n0 < n2 && n2 < n1);
    }

    #[test]
    fn propagation_rejects_wrong_direction() {
        let net = NetworkConfig::class_preset(ClassId::Class1);
        let at4 = PathState::basis(Mode::R4);
        assert!(matches!(
            forward_propagate(&net, &at4, PlaneId::Plane2),
            Err(PathspaceError::PlaneOrder { .. })
        ));
        assert!(matches!(
            backward_propagate(&net, &at4, PlaneId::Plane6),
            Err(PathspaceError::PlaneOrder { .. })
        ));
    }

    #[test]
    fn non_unitary_override_rejected_at_construction() {
        let m = NetworkMatrices {
            u1: Mat2::new([[c(1.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]),
            ..Default::default()
        };
        assert!(matches!(
            m.validate(),
            Err(PathspaceError::NotUnitary { name: "u1", .. })
        ));
    }

    #[test]
    fn network_config_json_round_trip() {
        let net = NetworkConfig::class_preset(ClassId::Class2);
        let text = serde_json::to_string(&net).unwrap();
        let back: NetworkConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(net, back);
    }

    fn arb_complex() -> impl Strategy<Value = Complex64> {
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| c(re, im))
    }

    fn arb_state_at(plane: PlaneId) -> impl Strategy<Value = PathState> {
        prop::collection::vec(arb_complex(), plane.mode_count())
            .prop_map(move |amps| PathState::new(plane, amps).unwrap())
    }

    fn arb_blockers() -> impl Strategy<Value = BTreeSet<Blocker>> {
        (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(l3, l4, r4)| {
            let mut set = BTreeSet::new();
            if l3 {
                set.insert(Blocker::L3);
            }
            if l4 {
                set.insert(Blocker::L4);
            }
            if r4 {
                set.insert(Blocker::R4);
            }
            set
        })
    }

    proptest! {
        #[test]
        fn blocker_free_propagation_preserves_norm(state in arb_state_at(PlaneId::Plane1)) {
            let net = NetworkConfig::class_preset(ClassId::Class1);
            let out = forward_propagate(&net, &state, PlaneId::Plane6).unwrap();
            prop_assert!((out.squared_norm() - state.squared_norm()).abs() <= 1e-12);
        }

        #[test]
        fn adjoint_consistency(
            pre in arb_state_at(PlaneId::Plane2),
            post in arb_state_at(PlaneId::Plane6),
            class in prop::sample::select(ClassId::ALL.to_vec()),
        ) {
            let net = NetworkConfig::class_preset(class);
            let forwarded = forward_propagate(&net, &pre, PlaneId::Plane6).unwrap();
            let backed = backward_propagate(&net, &post, PlaneId::Plane2).unwrap();
            let lhs = backed.inner(&pre).unwrap();
            let rhs = post.inner(&forwarded).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }

        #[test]
        fn projector_moments_coincide(class in prop::sample::select(ClassId::ALL.to_vec())) {
            let (_, pre, post) = class_selection(class);
            let obs = ProjectorObservable::new(Mode::L2);
            let first = weak_value(&pre, &post, obs, 1).unwrap();
            for m in 2..=4 {
                let higher = weak_value(&pre, &post, obs, m).unwrap();
                prop_assert!((first - higher).norm() <= 1e-14);
            }
        }

        #[test]
        fn blockers_never_increase_norm(
            state in arb_state_at(PlaneId::Plane1),
            blockers in arb_blockers(),
        ) {
            let open = NetworkConfig::class_preset(ClassId::Class1);
            let shut = open.clone().with_blockers(blockers);
            let free = forward_propagate(&open, &state, PlaneId::Plane6).unwrap();
            let clipped = forward_propagate(&shut, &state, PlaneId::Plane6).unwrap();
            prop_assert!(clipped.squared_norm() <= free.squared_norm() + 1e-12);
        }
    }
}
