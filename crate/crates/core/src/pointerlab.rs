//! Joint path–pointer dynamics with a Gaussian transverse pointer.
//!
//! The pointer starts as a single real Gaussian of width `sigma` (µm).
//! Every operation the network performs on it — the impulsive coupling at
//! L2, beam-splitter superpositions, shutters, phase windows — maps shifted
//! copies of that Gaussian to shifted copies, so the pointer wavefunction
//! attached to each path mode stays a finite mixture of `(weight, shift)`
//! terms and all norms, centroids and pixel integrals are closed-form.
//! Sampled grids appear only in test oracles and on the camera.
//!
//! Decoherence enters through [`FidelityMode`]: `Ideal` keeps everything
//! coherent, `Visibility { v1, v2 }` scales interference cross-terms formed
//! at the first and second recombination respectively, and `Collapsed` is
//! the which-path limit, identical to `Visibility { 0, 0 }`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathspace::{
    self, Blocker, Mode, NetworkConfig, PathState, PlaneId, ProjectorObservable,
};

pub type Result<T> = std::result::Result<T, PointerlabError>;

/// Port probabilities below this are treated as an empty port.
pub const EMPTY_PORT_THRESHOLD: f64 = 1e-14;
/// Operational margin turning the weak-regime "much less than" into a bound.
pub const WEAK_MARGIN: f64 = 5.0;

#[derive(Debug, Error)]
pub enum PointerlabError {
    #[error("pointer width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("coupling acts at Plane2 but the state is at {0:?}")]
    NotAtCouplingPlane(PlaneId),
    #[error("state lives at {state:?} but {other:?} was required")]
    PlaneMismatch { state: PlaneId, other: PlaneId },
    #[error("mode {mode:?} does not belong to plane {plane:?}")]
    ModeMismatch { mode: Mode, plane: PlaneId },
    #[error("post-selected port carries probability {probability:.3e}; nothing to read out")]
    EmptyPort { probability: f64 },
    #[error("visibility factors must lie in [0, 1], got {0}")]
    VisibilityRange(f64),
    #[error(transparent)]
    Path(#[from] pathspace::PathspaceError),
}

/// The transverse pointer profile: a real Gaussian with `<q> = 0` and
/// position uncertainty `sigma` in µm. Minimum-uncertainty is assumed
/// symbolically; validity checks only ever use the ratio `gamma / sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPointer {
    sigma: f64,
}

impl GaussianPointer {
    /// Pinhole-diameter default for the transverse position uncertainty.
    pub const DEFAULT_SIGMA_UM: f64 = 150.0;

    pub fn new(sigma: f64) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(PointerlabError::NonPositiveSigma(sigma));
        }
        Ok(GaussianPointer { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Default for GaussianPointer {
    fn default() -> Self {
        GaussianPointer {
            sigma: Self::DEFAULT_SIGMA_UM,
        }
    }
}

/// One shifted copy of the pointer profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureTerm {
    pub weight: Complex64,
    pub shift: f64,
}

/// A complex-weighted sum of shifted copies of one real Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    sigma: f64,
    terms: Vec<MixtureTerm>,
}

/// `∫ φ(q-a) φ(q-b) dq` for two shifted unit Gaussians of width `sigma`.
pub fn overlap(sigma: f64, a: f64, b: f64) -> f64 {
    let d = a - b;
    (-d * d / (8.0 * sigma * sigma)).exp()
}

/// The pointer profile `φ(x) = (2πσ²)^(-1/4) exp(-x²/4σ²)`.
pub fn profile(sigma: f64, x: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    norm * (-x * x / (4.0 * sigma * sigma)).exp()
}

/// `∫_a^b N(q; mu, sigma) dq` for the unit-mass Gaussian density.
fn gauss_band(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let scale = 1.0 / (sigma * std::f64::consts::SQRT_2);
    0.5 * (libm::erf((b - mu) * scale) - libm::erf((a - mu) * scale))
}

impl GaussianMixture {
    pub fn empty(sigma: f64) -> Self {
        GaussianMixture {
            sigma,
            terms: Vec::new(),
        }
    }

    pub fn single(sigma: f64, weight: Complex64, shift: f64) -> Self {
        if weight == Complex64::ZERO {
            return Self::empty(sigma);
        }
        GaussianMixture {
            sigma,
            terms: vec![MixtureTerm { weight, shift }],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn terms(&self) -> &[MixtureTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        if factor == Complex64::ZERO {
            return Self::empty(self.sigma);
        }
        GaussianMixture {
            sigma: self.sigma,
            terms: self
                .terms
                .iter()
                .map(|t| MixtureTerm {
                    weight: t.weight * factor,
                    shift: t.shift,
                })
                .collect(),
        }
    }

    /// Term-wise sum; terms with bit-identical shifts merge additively.
    pub fn add(&self, other: &GaussianMixture) -> Self {
        debug_assert_eq!(self.sigma, other.sigma, "mixture widths must agree");
        let mut terms = self.terms.clone();
        for t in &other.terms {
            match terms.iter_mut().find(|u| u.shift == t.shift) {
                Some(u) => u.weight += t.weight,
                None => terms.push(*t),
            }
        }
        terms.retain(|t| t.weight.norm_sqr() > 0.0);
        terms.sort_by(|a, b| a.shift.total_cmp(&b.shift));
        GaussianMixture {
            sigma: self.sigma,
            terms,
        }
    }

    /// Translates every term by `distance`.
    pub fn shifted(&self, distance: f64) -> Self {
        GaussianMixture {
            sigma: self.sigma,
            terms: self
                .terms
                .iter()
                .map(|t| MixtureTerm {
                    weight: t.weight,
                    shift: t.shift + distance,
                })
                .collect(),
        }
    }

    /// `<self|other>` via pairwise Gaussian overlaps.
    pub fn cross_overlap(&self, other: &GaussianMixture) -> Complex64 {
        let mut sum = Complex64::ZERO;
        for a in &self.terms {
            for b in &other.terms {
                sum += a.weight.conj() * b.weight * overlap(self.sigma, a.shift, b.shift);
            }
        }
        sum
    }

    /// `<self| q |other>` via pairwise midpoints.
    pub fn cross_q_moment(&self, other: &GaussianMixture) -> Complex64 {
        let mut sum = Complex64::ZERO;
        for a in &self.terms {
            for b in &other.terms {
                let mid = 0.5 * (a.shift + b.shift);
                sum += a.weight.conj() * b.weight * mid * overlap(self.sigma, a.shift, b.shift);
            }
        }
        sum
    }

    pub fn squared_norm(&self) -> f64 {
        self.cross_overlap(self).re
    }

    pub fn q_moment(&self) -> f64 {
        self.cross_q_moment(self).re
    }

    pub fn centroid(&self) -> Option<f64> {
        let norm = self.squared_norm();
        if norm < EMPTY_PORT_THRESHOLD {
            return None;
        }
        Some(self.q_moment() / norm)
    }

    /// Pointwise wavefunction value.
    pub fn amplitude(&self, q: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.weight * profile(self.sigma, q - t.shift))
            .sum()
    }

    pub fn intensity(&self, q: f64) -> f64 {
        self.amplitude(q).norm_sqr()
    }

    /// Exact `∫_a^b |ψ(q)|² dq`.
    pub fn band_mass(&self, a: f64, b: f64) -> f64 {
        let mut sum = 0.0;
        for s in &self.terms {
            for t in &self.terms {
                let mid = 0.5 * (s.shift + t.shift);
                let w = (s.weight.conj() * t.weight).re;
                sum += w * overlap(self.sigma, s.shift, t.shift) * gauss_band(mid, self.sigma, a, b);
            }
        }
        sum
    }

    fn cross_band_mass(&self, other: &GaussianMixture, a: f64, b: f64) -> Complex64 {
        let mut sum = Complex64::ZERO;
        for s in &self.terms {
            for t in &other.terms {
                let mid = 0.5 * (s.shift + t.shift);
                sum += s.weight.conj()
                    * t.weight
                    * overlap(self.sigma, s.shift, t.shift)
                    * gauss_band(mid, self.sigma, a, b);
            }
        }
        sum
    }
}

/// Pointer mixtures attached to every path mode of one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    plane: PlaneId,
    modes: Vec<GaussianMixture>,
}

impl JointState {
    /// `|path> ⊗ |pointer>` — every mode carries the unshifted profile
    /// weighted by its path amplitude.
    pub fn product(path: &PathState, pointer: &GaussianPointer) -> Self {
        let modes = path
            .amplitudes()
            .iter()
            .map(|&a| GaussianMixture::single(pointer.sigma(), a, 0.0))
            .collect();
        JointState {
            plane: path.plane(),
            modes,
        }
    }

    pub fn plane(&self) -> PlaneId {
        self.plane
    }

    pub fn modes(&self) -> &[GaussianMixture] {
        &self.modes
    }

    pub fn mode(&self, mode: Mode) -> Result<&GaussianMixture> {
        if mode.plane() != self.plane {
            return Err(PointerlabError::ModeMismatch {
                mode,
                plane: self.plane,
            });
        }
        Ok(&self.modes[mode.index()])
    }

    pub fn total_squared_norm(&self) -> f64 {
        self.modes.iter().map(|m| m.squared_norm()).sum()
    }
}

/// Impulsive von Neumann kick: every term of the L2 mixture is translated by
/// `gamma` (µm, either sign); the R2 mode carries eigenvalue 0 and is
/// untouched.
pub fn couple(joint: &JointState, gamma: f64) -> Result<JointState> {
    if joint.plane != PlaneId::Plane2 {
        return Err(PointerlabError::NotAtCouplingPlane(joint.plane));
    }
    let mut modes = joint.modes.clone();
    modes[Mode::L2.index()] = modes[Mode::L2.index()].shifted(gamma);
    Ok(JointState {
        plane: joint.plane,
        modes,
    })
}

/// Coherence model for the propagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityMode {
    /// Fully coherent propagation.
    Ideal,
    /// Which-path limit: branches separate at the coupling plane and at the
    /// inter-MZ split, and only intensities add afterwards. Identical to
    /// `Visibility { v1: 0, v2: 0 }`.
    Collapsed,
    /// Interference cross-terms formed at the first and second recombination
    /// are scaled by `v1` and `v2` respectively.
    Visibility { v1: f64, v2: f64 },
}

impl FidelityMode {
    pub fn validate(&self) -> Result<()> {
        if let FidelityMode::Visibility { v1, v2 } = self {
            for v in [*v1, *v2] {
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(PointerlabError::VisibilityRange(v));
                }
            }
        }
        Ok(())
    }

    fn contrast(&self) -> Option<(f64, f64)> {
        match self {
            FidelityMode::Ideal => None,
            FidelityMode::Collapsed => Some((0.0, 0.0)),
            FidelityMode::Visibility { v1, v2 } => Some((*v1, *v2)),
        }
    }
}

/// One which-path history: the plane-2 mode it came from and, once past the
/// inter-MZ split, the plane-4 mode it took.
#[derive(Clone, Debug)]
struct Branch {
    first: usize,
    second: Option<usize>,
    modes: Vec<GaussianMixture>,
}

/// Incoherent (or partially coherent) decomposition of the joint state into
/// which-path branches.
#[derive(Clone, Debug)]
pub struct BranchedJoint {
    plane: PlaneId,
    v1: f64,
    v2: f64,
    branches: Vec<Branch>,
}

impl BranchedJoint {
    pub fn plane(&self) -> PlaneId {
        self.plane
    }

    fn factor(&self, a: &Branch, b: &Branch) -> f64 {
        let f1 = if a.first == b.first { 1.0 } else { self.v1 };
        let f2 = match (a.second, b.second) {
            (Some(x), Some(y)) if x != y => self.v2,
            _ => 1.0,
        };
        f1 * f2
    }

    fn port_components(&self, index: usize) -> (Vec<GaussianMixture>, Vec<f64>) {
        let mixtures: Vec<&GaussianMixture> = self
            .branches
            .iter()
            .map(|b| &b.modes[index])
            .collect();
        let keep: Vec<usize> = (0..self.branches.len())
            .filter(|&k| !mixtures[k].is_empty())
            .collect();
        let n = keep.len();
        let mut coherence = vec![0.0; n * n];
        for (i, &bi) in keep.iter().enumerate() {
            for (j, &bj) in keep.iter().enumerate() {
                coherence[i * n + j] = self.factor(&self.branches[bi], &self.branches[bj]);
            }
        }
        let components = keep.iter().map(|&k| mixtures[k].clone()).collect();
        (components, coherence)
    }

    /// Pointer field of one output mode.
    pub fn port_field(&self, mode: Mode) -> Result<PointerField> {
        if mode.plane() != self.plane {
            return Err(PointerlabError::ModeMismatch {
                mode,
                plane: self.plane,
            });
        }
        let (components, coherence) = self.port_components(mode.index());
        Ok(PointerField::new(components, coherence))
    }

    /// Probability summed over every mode of the current plane.
    pub fn total_probability(&self) -> f64 {
        self.mode_indices()
            .map(|i| {
                let (c, f) = self.port_components(i);
                PointerField::new(c, f).probability()
            })
            .sum()
    }

    /// Intensity-weighted centroid over every mode — the no-post-selection
    /// readout.
    pub fn total_centroid(&self) -> Option<f64> {
        let mut prob = 0.0;
        let mut moment = 0.0;
        for i in self.mode_indices() {
            let (c, f) = self.port_components(i);
            let field = PointerField::new(c, f);
            prob += field.probability();
            moment += field.q_moment();
        }
        if prob < EMPTY_PORT_THRESHOLD {
            return None;
        }
        Some(moment / prob)
    }

    fn mode_indices(&self) -> std::ops::Range<usize> {
        0..self.plane.mode_count()
    }
}

/// Result of propagating a joint state: coherent states stay mode-indexed
/// mixtures; decohered ones become branch decompositions.
#[derive(Clone, Debug)]
pub enum PropagatedJoint {
    Coherent(JointState),
    Branched(BranchedJoint),
}

impl PropagatedJoint {
    pub fn plane(&self) -> PlaneId {
        match self {
            PropagatedJoint::Coherent(j) => j.plane(),
            PropagatedJoint::Branched(b) => b.plane(),
        }
    }

    /// Post-selects one output mode and reads the pointer out.
    pub fn port_field(&self, mode: Mode) -> Result<PointerReport> {
        let field = match self {
            PropagatedJoint::Coherent(joint) => PointerField::pure(joint.mode(mode)?.clone()),
            PropagatedJoint::Branched(branched) => branched.port_field(mode)?,
        };
        PointerReport::from_field(field)
    }
}

fn apply_mat2_mixtures(u: &crate::pathspace::Mat2, modes: &[GaussianMixture]) -> Vec<GaussianMixture> {
    let sigma = modes[0].sigma();
    (0..2)
        .map(|k| {
            let mut out = GaussianMixture::empty(sigma);
            for (j, m) in modes.iter().enumerate() {
                out = out.add(&m.scaled(u.entry(k, j)));
            }
            out
        })
        .collect()
}

fn first_mz_stage(net: &NetworkConfig, modes: &[GaussianMixture]) -> Vec<GaussianMixture> {
    let mut modes = modes.to_vec();
    if net.is_blocked(Blocker::L3) {
        modes[Mode::R2.index()] = GaussianMixture::empty(modes[0].sigma());
    }
    apply_mat2_mixtures(&net.matrices().u1, &modes)
}

/// Shutters and phase window applied at plane 4, before BS3.
fn plane4_elements(net: &NetworkConfig, modes: &mut [GaussianMixture]) {
    let sigma = modes[0].sigma();
    if net.is_blocked(Blocker::L4) {
        modes[Mode::L4.index()] = GaussianMixture::empty(sigma);
    }
    if net.is_blocked(Blocker::R4) {
        modes[Mode::R4.index()] = GaussianMixture::empty(sigma);
    }
    modes[Mode::L4.index()] = modes[Mode::L4.index()].scaled(net.window_factor());
}

fn propagate_coherent(net: &NetworkConfig, joint: &JointState, to: PlaneId) -> JointState {
    let mut plane = joint.plane;
    let mut modes = joint.modes.clone();
    while plane < to {
        match plane {
            PlaneId::Plane1 => {
                let bs1 = net.matrices().bs1;
                modes = vec![modes[0].scaled(bs1[0]), modes[0].scaled(bs1[1])];
                plane = PlaneId::Plane2;
            }
            PlaneId::Plane2 => {
                modes = first_mz_stage(net, &modes);
                plane = PlaneId::Plane4;
            }
            PlaneId::Plane4 => {
                plane4_elements(net, &mut modes);
                modes = apply_mat2_mixtures(&net.matrices().u2, &modes);
                plane = PlaneId::Plane6;
            }
            PlaneId::Plane6 => unreachable!(),
        }
    }
    JointState { plane, modes }
}

fn propagate_branched(
    net: &NetworkConfig,
    joint: &JointState,
    to: PlaneId,
    v1: f64,
    v2: f64,
) -> BranchedJoint {
    let sigma = joint.modes[0].sigma();
    // Carry the state coherently to the coupling plane, then split.
    let staged = if joint.plane == PlaneId::Plane1 && to > PlaneId::Plane1 {
        propagate_coherent(net, joint, PlaneId::Plane2)
    } else {
        joint.clone()
    };
    let mut plane = staged.plane;
    let splits_first = plane <= PlaneId::Plane2;
    let mut branches: Vec<Branch> = staged
        .modes
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(i, m)| {
            let mut modes = vec![GaussianMixture::empty(sigma); plane.mode_count()];
            modes[i] = m.clone();
            Branch {
                first: if splits_first { i } else { 0 },
                second: if splits_first { None } else { Some(i) },
                modes,
            }
        })
        .collect();
    while plane < to {
        match plane {
            PlaneId::Plane1 => unreachable!("handled by the coherent pre-stage"),
            PlaneId::Plane2 => {
                for b in &mut branches {
                    b.modes = first_mz_stage(net, &b.modes);
                }
                plane = PlaneId::Plane4;
            }
            PlaneId::Plane4 => {
                let mut next = Vec::with_capacity(branches.len() * 2);
                for b in &branches {
                    let mut modes = b.modes.clone();
                    plane4_elements(net, &mut modes);
                    for (j, m) in modes.iter().enumerate() {
                        if m.is_empty() {
                            continue;
                        }
                        let mut one_hot = vec![GaussianMixture::empty(sigma); 2];
                        one_hot[j] = m.clone();
                        next.push(Branch {
                            first: b.first,
                            second: Some(j),
                            modes: apply_mat2_mixtures(&net.matrices().u2, &one_hot),
                        });
                    }
                }
                branches = next;
                plane = PlaneId::Plane6;
            }
            PlaneId::Plane6 => unreachable!(),
        }
    }
    BranchedJoint {
        plane,
        v1,
        v2,
        branches,
    }
}

/// Linear extension of the network propagation to pointer-valued amplitudes.
pub fn propagate_joint(
    net: &NetworkConfig,
    joint: &JointState,
    to: PlaneId,
    mode: FidelityMode,
) -> Result<PropagatedJoint> {
    mode.validate()?;
    if joint.plane > to {
        return Err(PointerlabError::Path(pathspace::PathspaceError::PlaneOrder {
            from: joint.plane,
            to,
        }));
    }
    match mode.contrast() {
        None => Ok(PropagatedJoint::Coherent(propagate_coherent(net, joint, to))),
        Some((v1, v2)) => Ok(PropagatedJoint::Branched(propagate_branched(
            net, joint, to, v1, v2,
        ))),
    }
}

/// A pointer intensity field: one coherent mixture, or several branches with
/// pairwise coherence factors. The coherence matrix is symmetric, has unit
/// diagonal and is positive semidefinite, so the intensity is nonnegative.
#[derive(Clone, Debug)]
pub struct PointerField {
    components: Vec<GaussianMixture>,
    coherence: Vec<f64>,
}

impl PointerField {
    pub fn pure(mixture: GaussianMixture) -> Self {
        PointerField {
            components: vec![mixture],
            coherence: vec![1.0],
        }
    }

    fn new(components: Vec<GaussianMixture>, coherence: Vec<f64>) -> Self {
        debug_assert_eq!(coherence.len(), components.len() * components.len());
        PointerField {
            components,
            coherence,
        }
    }

    pub fn components(&self) -> &[GaussianMixture] {
        &self.components
    }

    /// The single coherent mixture, when the field is pure.
    pub fn as_pure(&self) -> Option<&GaussianMixture> {
        if self.components.len() == 1 {
            self.components.first()
        } else {
            None
        }
    }

    fn pairwise_sum(&self, f: impl Fn(&GaussianMixture, &GaussianMixture) -> Complex64) -> f64 {
        let n = self.components.len();
        let mut total = Complex64::ZERO;
        for i in 0..n {
            for j in 0..n {
                let w = self.coherence[i * n + j];
                if w != 0.0 {
                    total += w * f(&self.components[i], &self.components[j]);
                }
            }
        }
        total.re
    }

    pub fn probability(&self) -> f64 {
        self.pairwise_sum(|a, b| a.cross_overlap(b))
    }

    pub fn q_moment(&self) -> f64 {
        self.pairwise_sum(|a, b| a.cross_q_moment(b))
    }

    pub fn centroid(&self) -> Option<f64> {
        let p = self.probability();
        if p < EMPTY_PORT_THRESHOLD {
            return None;
        }
        Some(self.q_moment() / p)
    }

    pub fn intensity(&self, q: f64) -> f64 {
        let n = self.components.len();
        let amps: Vec<Complex64> = self.components.iter().map(|m| m.amplitude(q)).collect();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += self.coherence[i * n + j] * (amps[i].conj() * amps[j]).re;
            }
        }
        total
    }

    /// Exact intensity mass in `[a, b]`.
    pub fn band_mass(&self, a: f64, b: f64) -> f64 {
        self.pairwise_sum(|x, y| x.cross_band_mass(y, a, b))
    }
}

/// Post-selected pointer readout at one port.
#[derive(Clone, Debug)]
pub struct PointerReport {
    pub field: PointerField,
    /// Squared norm of the post-selected field.
    pub probability: f64,
    /// Intensity-averaged `<q>` in µm.
    pub centroid: f64,
}

impl PointerReport {
    fn from_field(field: PointerField) -> Result<Self> {
        let probability = field.probability();
        if probability < EMPTY_PORT_THRESHOLD {
            return Err(PointerlabError::EmptyPort { probability });
        }
        let centroid = field.q_moment() / probability;
        Ok(PointerReport {
            field,
            probability,
            centroid,
        })
    }

    pub fn intensity(&self, q: f64) -> f64 {
        self.field.intensity(q)
    }

    /// Samples the intensity profile to CSV with `q_um,intensity` rows.
    pub fn write_density_csv<W: std::io::Write>(
        &self,
        mut out: W,
        q_lo: f64,
        q_hi: f64,
        samples: usize,
    ) -> std::io::Result<()> {
        writeln!(out, "q_um,intensity")?;
        let n = samples.max(2);
        let dq = (q_hi - q_lo) / (n - 1) as f64;
        for i in 0..n {
            let q = q_lo + i as f64 * dq;
            writeln!(out, "{},{}", q, self.field.intensity(q))?;
        }
        Ok(())
    }
}

/// `<ψ_f|Φ>`: projects the joint state onto a path state of the same plane,
/// leaving the (sub-normalized) pointer state behind.
pub fn project_onto(joint: &JointState, selection: &PathState) -> Result<PointerReport> {
    if selection.plane() != joint.plane {
        return Err(PointerlabError::PlaneMismatch {
            state: joint.plane,
            other: selection.plane(),
        });
    }
    let sigma = joint.modes[0].sigma();
    let mut mixture = GaussianMixture::empty(sigma);
    for (amp, mode) in selection.amplitudes().iter().zip(&joint.modes) {
        mixture = mixture.add(&mode.scaled(amp.conj()));
    }
    PointerReport::from_field(PointerField::pure(mixture))
}

/// Post-selects one mode of a coherently propagated joint state.
pub fn postselect(joint: &JointState, mode: Mode) -> Result<PointerReport> {
    if mode.plane() != joint.plane {
        return Err(PointerlabError::ModeMismatch {
            mode,
            plane: joint.plane,
        });
    }
    PointerReport::from_field(PointerField::pure(joint.modes[mode.index()].clone()))
}

/// First-order readout: the post-selected pointer centroid `γ · Re A_w`.
pub fn weak_prediction(gamma: f64, weak_value: Complex64) -> f64 {
    gamma * weak_value.re
}

/// Collapse-limit readout without post-selection: `γ <pre|P|pre>`.
pub fn strong_prediction(pre: &PathState, obs: ProjectorObservable, gamma: f64) -> Result<f64> {
    Ok(gamma * pathspace::expectation(pre, obs)?)
}

/// Weak value plus its higher moments `(A^m)_w`, m = 2, 3, …
#[derive(Clone, Debug)]
pub struct WeakValueMoments {
    pub first: Complex64,
    pub higher: Vec<Complex64>,
}

impl WeakValueMoments {
    /// Moments of a projector: `(P^m)_w = P_w` for every m ≥ 1.
    pub fn projector(weak_value: Complex64) -> Self {
        WeakValueMoments {
            first: weak_value,
            higher: vec![weak_value; 3],
        }
    }
}

/// Outcome of the weak-regime inequalities for one coupling strength.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidityReport {
    pub gamma: f64,
    pub sigma: f64,
    /// Tightest raw bound on |γ| over all observables.
    pub raw_bound: f64,
    /// Margin-adjusted bound actually used for the verdict.
    pub weak_window: f64,
    pub margin: f64,
    pub is_weak: bool,
    /// Raw bound per observable, in input order.
    pub per_observable: Vec<f64>,
}

fn raw_bound(sigma: f64, moments: &WeakValueMoments) -> f64 {
    let mut bound = f64::INFINITY;
    let a = moments.first.norm();
    if a > 1e-300 {
        bound = bound.min(2.0 * sigma / a);
    }
    for (k, m_w) in moments.higher.iter().enumerate() {
        let m = (k + 2) as f64;
        let denom = m_w.norm();
        let ratio = if denom > 1e-300 {
            a / denom
        } else if a <= 1e-300 {
            // Projector-style degenerate case: every moment vanishes with the
            // weak value and the expansion truncates at the plain bound.
            1.0
        } else {
            continue;
        };
        bound = bound.min(2.0 * sigma * ratio.powf(1.0 / (m - 1.0)));
    }
    bound
}

/// Evaluates the weak-measurement inequalities with a minimum-uncertainty
/// pointer, so `Δp = ħ/(2Δq)` and every bound reduces to a multiple of
/// `sigma`. "Much less than" is operationalized as [`WEAK_MARGIN`].
pub fn validity_check(gamma: f64, sigma: f64, observables: &[WeakValueMoments]) -> ValidityReport {
    validity_check_with_margin(gamma, sigma, observables, WEAK_MARGIN)
}

pub fn validity_check_with_margin(
    gamma: f64,
    sigma: f64,
    observables: &[WeakValueMoments],
    margin: f64,
) -> ValidityReport {
    let per_observable: Vec<f64> = observables.iter().map(|m| raw_bound(sigma, m)).collect();
    let raw = per_observable
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let window = raw / margin;
    ValidityReport {
        gamma,
        sigma,
        raw_bound: raw,
        weak_window: window,
        margin,
        is_weak: gamma.abs() <= window,
        per_observable,
    }
}
