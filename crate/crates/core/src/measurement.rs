//! Pointer-register measurement models.
//!
//! A measurement couples an object register to a pointer register with a
//! controlled shift: object value `r` moves the pointer from `a` to
//! `(a + alpha_r) mod d`. Starting from pointer value 0 this realizes
//! `U|r>|0, m> = |r>|alpha_r, m>`, and by linearity a superposed object ends
//! up entangled with the pointer instead of being reduced to one branch.
//!
//! [`Mode::Collapse`] provides the textbook alternative for contrast: a Born
//! draw picks one branch and every other branch is discarded.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{max_modulus, HilbertError, Ket, SpaceLayout, ALGEBRA_TOL, C64};

/// Outcomes with probability at or below this are treated as impossible.
pub const MIN_OUTCOME_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid measurement model: {0}")]
    InvalidModel(String),
    #[error("operation requires {expected} mode but the model is in {found} mode")]
    ModeMismatch { expected: Mode, found: Mode },
    #[error("layout does not match the model: {0}")]
    LayoutMismatch(String),
    #[error("outcome {value} of `{label}` has probability {probability:e}")]
    ZeroProbability {
        label: String,
        value: usize,
        probability: f64,
    },
    #[error("matrix is not unitary (max |U^dag U - I| = {0:e})")]
    NotUnitary(f64),
}

pub type Result<T, E = MeasurementError> = std::result::Result<T, E>;

/// How a measurement acts on the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Entangling unitary only; the state never collapses.
    Unitary,
    /// Born draw followed by projection onto the drawn branch.
    Collapse,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Unitary, Mode::Collapse];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unitary => "unitary",
            Mode::Collapse => "collapse",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mode `{0}` (expected `unitary` or `collapse`)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unitary" => Ok(Mode::Unitary),
            "collapse" => Ok(Mode::Collapse),
            other => Err(UnknownMode(other.to_string())),
        }
    }
}

/// Square matrix acting on a whole layout, checked to satisfy `U^dag U = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

impl Unitary {
    pub fn new(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(HilbertError::DimensionMismatch {
                expected: n,
                found: matrix.nrows(),
            }
            .into());
        }
        let err = unitarity_error(&matrix);
        if err > ALGEBRA_TOL {
            return Err(MeasurementError::NotUnitary(err));
        }
        Ok(Self { layout, matrix })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    /// `self * other`, i.e. `other` acts first.
    pub fn compose(&self, other: &Unitary) -> Result<Unitary> {
        if self.layout != other.layout {
            return Err(HilbertError::LayoutMismatch.into());
        }
        Ok(Unitary {
            layout: self.layout.clone(),
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn apply(&self, k: &Ket) -> Result<Ket> {
        if k.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch.into());
        }
        Ok(Ket::from_parts_unchecked(
            self.layout.clone(),
            &self.matrix * k.amplitudes(),
        ))
    }
}

/// `max |U^dag U - I|`.
pub fn unitarity_error(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    max_modulus((m.adjoint() * m - DMatrix::<C64>::identity(n, n)).iter())
}

/// Dense matrix of a single-register operator embedded as `op (x) I`.
pub fn embed_local(layout: &SpaceLayout, label: &str, op: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let p = layout.position(label)?;
    let d = layout.subsystems()[p].dim;
    if op.nrows() != d || op.ncols() != d {
        return Err(HilbertError::DimensionMismatch {
            expected: d,
            found: op.nrows(),
        }
        .into());
    }
    let n = layout.total_dim();
    let stride = layout.stride(p);
    let mut m = DMatrix::zeros(n, n);
    for col in 0..n {
        let dc = layout.digit(col, p);
        let base = col - dc * stride;
        for dr in 0..d {
            m[(base + dr * stride, col)] = op[(dr, dc)];
        }
    }
    Ok(m)
}

/// Permutation `|c, t> -> |c, (t + shift[c]) mod d_t>` between two registers.
///
/// This is the building block of every pointer coupling in the crate. It is
/// applied as an index permutation, so it costs `O(dim)` per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlledShift {
    pub control: String,
    pub target: String,
    /// Shift applied to the target for each control value.
    pub shifts: Vec<usize>,
}

impl ControlledShift {
    pub fn new(control: impl Into<String>, target: impl Into<String>, shifts: Vec<usize>) -> Self {
        Self {
            control: control.into(),
            target: target.into(),
            shifts,
        }
    }

    /// The inverse permutation.
    pub fn inverse(&self, target_dim: usize) -> ControlledShift {
        ControlledShift {
            control: self.control.clone(),
            target: self.target.clone(),
            shifts: self
                .shifts
                .iter()
                .map(|s| (target_dim - s % target_dim) % target_dim)
                .collect(),
        }
    }

    fn positions(&self, layout: &SpaceLayout) -> Result<(usize, usize)> {
        let c = layout.position(&self.control)?;
        let t = layout.position(&self.target)?;
        if c == t {
            return Err(MeasurementError::LayoutMismatch(
                "control and target must be different registers".into(),
            ));
        }
        let cd = layout.subsystems()[c].dim;
        if self.shifts.len() != cd {
            return Err(MeasurementError::LayoutMismatch(format!(
                "`{}` has dimension {cd} but {} shifts were given",
                self.control,
                self.shifts.len()
            )));
        }
        Ok((c, t))
    }

    /// Image of basis index `idx`.
    fn map_index(&self, layout: &SpaceLayout, c: usize, t: usize, idx: usize) -> usize {
        let td = layout.subsystems()[t].dim;
        let cv = layout.digit(idx, c);
        let tv = layout.digit(idx, t);
        let nv = (tv + self.shifts[cv]) % td;
        idx - tv * layout.stride(t) + nv * layout.stride(t)
    }

    pub fn apply(&self, k: &Ket) -> Result<Ket> {
        let layout = k.layout();
        let (c, t) = self.positions(layout)?;
        let mut out = DVector::zeros(layout.total_dim());
        for (i, a) in k.amplitudes().iter().enumerate() {
            out[self.map_index(layout, c, t, i)] = *a;
        }
        Ok(Ket::from_parts_unchecked(layout.clone(), out))
    }

    pub fn to_unitary(&self, layout: &SpaceLayout) -> Result<Unitary> {
        let (c, t) = self.positions(layout)?;
        let n = layout.total_dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(self.map_index(layout, c, t, i), i)] = C64::new(1.0, 0.0);
        }
        Ok(Unitary {
            layout: layout.clone(),
            matrix: m,
        })
    }
}

/// Object register, pointer register with readout values `alpha_r`, and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    object_label: String,
    object_dim: usize,
    pointer_label: String,
    pointer_dim: usize,
    irrelevant_label: Option<String>,
    readout: Vec<usize>,
    mode: Mode,
    disturbance: Option<DMatrix<C64>>,
}

impl MeasurementModel {
    /// `readout[r]` is the pointer value `alpha_r` shown for object value `r`.
    /// Values must be distinct and lie in `1..pointer_dim` so that the
    /// ready value 0 is never a readout.
    pub fn new(
        object_label: impl Into<String>,
        object_dim: usize,
        pointer_label: impl Into<String>,
        pointer_dim: usize,
        readout: Vec<usize>,
        mode: Mode,
    ) -> Result<Self> {
        let object_label = object_label.into();
        let pointer_label = pointer_label.into();
        if object_label == pointer_label {
            return Err(MeasurementError::InvalidModel(
                "object and pointer must be different registers".into(),
            ));
        }
        if object_dim < 2 {
            return Err(MeasurementError::InvalidModel(format!(
                "object basis size {object_dim} < 2"
            )));
        }
        if pointer_dim < object_dim + 1 {
            return Err(MeasurementError::InvalidModel(format!(
                "pointer dimension {pointer_dim} cannot hold {object_dim} readouts plus the ready value"
            )));
        }
        if readout.len() != object_dim {
            return Err(MeasurementError::InvalidModel(format!(
                "{} readout values for {object_dim} object states",
                readout.len()
            )));
        }
        for (r, &a) in readout.iter().enumerate() {
            if a == 0 || a >= pointer_dim {
                return Err(MeasurementError::InvalidModel(format!(
                    "readout value {a} for object state {r} outside 1..{pointer_dim}"
                )));
            }
            if readout[..r].contains(&a) {
                return Err(MeasurementError::InvalidModel(format!(
                    "readout value {a} used twice"
                )));
            }
        }
        Ok(Self {
            object_label,
            object_dim,
            pointer_label,
            pointer_dim,
            irrelevant_label: None,
            readout,
            mode,
            disturbance: None,
        })
    }

    /// Declares a register of device quantum numbers that is carried along untouched.
    pub fn with_irrelevant(mut self, label: impl Into<String>) -> Self {
        self.irrelevant_label = Some(label.into());
        self
    }

    /// Unitary applied to the object register after the pointer coupling,
    /// for devices that disturb what they measure.
    pub fn with_disturbance(mut self, op: DMatrix<C64>) -> Result<Self> {
        if op.nrows() != self.object_dim || op.ncols() != self.object_dim {
            return Err(MeasurementError::InvalidModel(
                "disturbance must act on the object register".into(),
            ));
        }
        let err = unitarity_error(&op);
        if err > ALGEBRA_TOL {
            return Err(MeasurementError::NotUnitary(err));
        }
        self.disturbance = Some(op);
        Ok(self)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn object_label(&self) -> &str {
        &self.object_label
    }

    pub fn object_dim(&self) -> usize {
        self.object_dim
    }

    pub fn pointer_label(&self) -> &str {
        &self.pointer_label
    }

    pub fn pointer_dim(&self) -> usize {
        self.pointer_dim
    }

    pub fn irrelevant_label(&self) -> Option<&str> {
        self.irrelevant_label.as_deref()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn readout_values(&self) -> &[usize] {
        &self.readout
    }

    /// Object value indicated by pointer value `alpha`, if any.
    pub fn object_for_pointer(&self, alpha: usize) -> Option<usize> {
        self.readout.iter().position(|&a| a == alpha)
    }

    fn coupling(&self) -> ControlledShift {
        ControlledShift::new(
            self.object_label.clone(),
            self.pointer_label.clone(),
            self.readout.clone(),
        )
    }

    fn check_layout(&self, layout: &SpaceLayout) -> Result<()> {
        let check = |label: &str, dim: usize| -> Result<()> {
            match layout.dim_of(label) {
                Ok(d) if d == dim => Ok(()),
                Ok(d) => Err(MeasurementError::LayoutMismatch(format!(
                    "`{label}` has dimension {d}, model expects {dim}"
                ))),
                Err(_) => Err(MeasurementError::LayoutMismatch(format!(
                    "layout has no register `{label}`"
                ))),
            }
        };
        check(&self.object_label, self.object_dim)?;
        check(&self.pointer_label, self.pointer_dim)?;
        if let Some(m) = &self.irrelevant_label {
            if !layout.contains(m) {
                return Err(MeasurementError::LayoutMismatch(format!(
                    "layout has no register `{m}`"
                )));
            }
        }
        Ok(())
    }

    fn require_mode(&self, expected: Mode) -> Result<()> {
        if self.mode != expected {
            return Err(MeasurementError::ModeMismatch {
                expected,
                found: self.mode,
            });
        }
        Ok(())
    }

    /// Pointer coupling followed by the optional disturbance; mode is not checked.
    fn couple(&self, state: &Ket) -> Result<Ket> {
        let shifted = self.coupling().apply(state)?;
        match &self.disturbance {
            Some(op) => Ok(shifted.apply_local(&self.object_label, op)?),
            None => Ok(shifted),
        }
    }
}

/// Dense matrix of the measurement interaction on `layout`.
pub fn build_pointer_unitary(model: &MeasurementModel, layout: &SpaceLayout) -> Result<Unitary> {
    model.check_layout(layout)?;
    let shift = model.coupling().to_unitary(layout)?;
    match &model.disturbance {
        Some(op) => {
            let d = Unitary::new(
                layout.clone(),
                embed_local(layout, &model.object_label, op)?,
            )?;
            d.compose(&shift)
        }
        None => Ok(shift),
    }
}

/// Whether the pointer register sits at its ready value 0.
pub fn pointer_ready(state: &Ket, model: &MeasurementModel) -> Result<bool> {
    let p = state.marginal(&model.pointer_label)?;
    Ok(p[0] >= 1.0 - ALGEBRA_TOL)
}

/// Applies the measurement interaction and returns the entangled state
/// `sum_r c_r |r>|alpha_r>`.
///
/// A pointer that is not at its ready value only produces a warning: the
/// modular shift is still well defined, but the readout no longer maps
/// one-to-one onto the object's value.
pub fn apply_measurement(state: &Ket, model: &MeasurementModel) -> Result<Ket> {
    model.require_mode(Mode::Unitary)?;
    model.check_layout(state.layout())?;
    if !pointer_ready(state, model)? {
        log::warn!(
            "pointer `{}` is not at its ready value before measurement",
            model.pointer_label
        );
    }
    model.couple(state)
}

/// Born weights of the object register.
pub fn born_weights(state: &Ket, model: &MeasurementModel) -> Result<Vec<f64>> {
    model.check_layout(state.layout())?;
    Ok(state.marginal(&model.object_label)?)
}

/// Post-measurement state for a given collapse outcome: the object projected
/// onto `r` and the pointer moved to `alpha_r`. Other registers are untouched.
pub fn collapse_onto(state: &Ket, model: &MeasurementModel, r: usize) -> Result<Ket> {
    model.check_layout(state.layout())?;
    let projected = condition_on_outcome(state, &model.object_label, r)?;
    model.couple(&projected)
}

/// Draws an outcome with probability `|c_r|^2` and returns the collapsed state.
pub fn collapse_measurement<R: Rng + ?Sized>(
    state: &Ket,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<(usize, Ket)> {
    model.require_mode(Mode::Collapse)?;
    let weights = born_weights(state, model)?;
    let r = sample_discrete(&weights, rng.random::<f64>());
    Ok((r, collapse_onto(state, model, r)?))
}

/// Every collapse branch with nonzero probability: `(r, p_r, post_state)`.
pub fn collapse_branches(state: &Ket, model: &MeasurementModel) -> Result<Vec<(usize, f64, Ket)>> {
    born_weights(state, model)?
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > MIN_OUTCOME_PROBABILITY)
        .map(|(r, p)| Ok((r, p, collapse_onto(state, model, r)?)))
        .collect()
}

/// Ensemble summary of collapse mode: `sum_r p_r |post_r><post_r|`.
pub fn collapse_mixture(
    state: &Ket,
    model: &MeasurementModel,
) -> Result<crate::hilbert::DensityOperator> {
    let branches = collapse_branches(state, model)?;
    let terms: Vec<(f64, &Ket)> = branches.iter().map(|(_, p, k)| (*p, k)).collect();
    Ok(crate::hilbert::DensityOperator::mixture(&terms)?)
}

/// Born marginal of a register: entry `a` is the probability of reading `a`.
pub fn pointer_distribution(state: &Ket, pointer_label: &str) -> Result<Vec<f64>> {
    let mut p = state.marginal(pointer_label)?;
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(p)
}

/// Keeps only the part of the ensemble in which `label` reads `value`.
///
/// This is selection of a sub-ensemble, which amounts to a new preparation.
/// It is not a dynamical step; the unconditioned state is still the correct
/// description of the full ensemble.
pub fn condition_on_outcome(state: &Ket, label: &str, value: usize) -> Result<Ket> {
    let projected = state.project(label, value)?;
    let probability = projected.norm_squared();
    if probability <= MIN_OUTCOME_PROBABILITY {
        return Err(MeasurementError::ZeroProbability {
            label: label.to_string(),
            value,
            probability,
        });
    }
    Ok(Ket::normalized(state.layout().clone(), projected)?)
}

/// Inverse-CDF draw from a discrete distribution with a uniform `u in [0, 1)`.
/// Zero-weight entries are never returned.
pub fn sample_discrete(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{
        basis_ket, density_from_ket, fidelity_with_ket, ket_fidelity, schmidt_entanglement,
        superpose, DensityOperator,
    };
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn layout() -> SpaceLayout {
        SpaceLayout::new([("spin", 2), ("pointer", 3)]).unwrap()
    }

    fn model(mode: Mode) -> MeasurementModel {
        MeasurementModel::new("spin", 2, "pointer", 3, vec![1, 2], mode).unwrap()
    }

    fn ket(spin: usize, pointer: usize) -> Ket {
        basis_ket(&layout(), &[("spin", spin), ("pointer", pointer)]).unwrap()
    }

    fn right_ready() -> Ket {
        superpose(&[
            (c(FRAC_1_SQRT_2), &ket(0, 0)),
            (c(FRAC_1_SQRT_2), &ket(1, 0)),
        ])
        .unwrap()
    }

    #[test]
    fn model_validation() {
        let bad = |readout: Vec<usize>, pd: usize| {
            MeasurementModel::new("o", 2, "p", pd, readout, Mode::Unitary).is_err()
        };
        assert!(bad(vec![1, 1], 3));
        assert!(bad(vec![0, 1], 3));
        assert!(bad(vec![1, 3], 3));
        assert!(bad(vec![1, 2], 2));
        assert!(bad(vec![1], 3));
        assert!(MeasurementModel::new("o", 2, "o", 3, vec![1, 2], Mode::Unitary).is_err());
    }

    #[test]
    fn pointer_unitary_maps_ready_state_to_readout() {
        let u = build_pointer_unitary(&model(Mode::Unitary), &layout()).unwrap();
        let out = u.apply(&ket(0, 0)).unwrap();
        assert_eq!(out, ket(0, 1));
        let out = u.apply(&ket(1, 0)).unwrap();
        assert_eq!(out, ket(1, 2));
        assert!(unitarity_error(u.matrix()) < 1e-15);
        let id = u.matrix() * u.matrix().adjoint();
        assert!(max_modulus((id - DMatrix::<C64>::identity(6, 6)).iter()) < 1e-15);
    }

    #[test]
    fn pointer_unitary_checks_layout() {
        let wrong = SpaceLayout::new([("spin", 2), ("pointer", 4)]).unwrap();
        assert!(matches!(
            build_pointer_unitary(&model(Mode::Unitary), &wrong),
            Err(MeasurementError::LayoutMismatch(_))
        ));
        let missing = SpaceLayout::new([("spin", 2), ("other", 3)]).unwrap();
        assert!(build_pointer_unitary(&model(Mode::Unitary), &missing).is_err());
    }

    #[test]
    fn repeated_shift_composes_modularly() {
        // alpha = 1 applied twice on a 3-level pointer: 0 -> 1 -> 2.
        let l = SpaceLayout::new([("obj", 2), ("ptr", 3)]).unwrap();
        let m = MeasurementModel::new("obj", 2, "ptr", 3, vec![1, 2], Mode::Unitary).unwrap();
        let u = build_pointer_unitary(&m, &l).unwrap();
        let twice = u.compose(&u).unwrap();
        let start = basis_ket(&l, &[("obj", 0), ("ptr", 0)]).unwrap();
        let end = twice.apply(&start).unwrap();
        assert_eq!(
            pointer_distribution(&end, "ptr").unwrap(),
            vec![0.0, 0.0, 1.0]
        );
        // and by direct matrix multiplication on the r=1 column: 0 -> 2 -> 1
        let start = basis_ket(&l, &[("obj", 1), ("ptr", 0)]).unwrap();
        let end = twice.apply(&start).unwrap();
        assert_eq!(
            pointer_distribution(&end, "ptr").unwrap(),
            vec![0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn superposed_input_becomes_entangled() {
        let out = apply_measurement(&right_ready(), &model(Mode::Unitary)).unwrap();
        let expected = superpose(&[
            (c(FRAC_1_SQRT_2), &ket(0, 1)),
            (c(FRAC_1_SQRT_2), &ket(1, 2)),
        ])
        .unwrap();
        assert_abs_diff_eq!(ket_fidelity(&out, &expected).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(schmidt_entanglement(&out, &["pointer"]).unwrap(), 2);
        assert_abs_diff_eq!(out.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenstate_input_stays_product() {
        let out = apply_measurement(&ket(0, 0), &model(Mode::Unitary)).unwrap();
        assert_eq!(out, ket(0, 1));
        assert_eq!(schmidt_entanglement(&out, &["pointer"]).unwrap(), 1);
    }

    #[test]
    fn mode_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            apply_measurement(&ket(0, 0), &model(Mode::Collapse)),
            Err(MeasurementError::ModeMismatch { .. })
        ));
        assert!(matches!(
            collapse_measurement(&ket(0, 0), &model(Mode::Unitary), &mut rng),
            Err(MeasurementError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn unready_pointer_is_not_an_error() {
        let m = model(Mode::Unitary);
        assert!(!pointer_ready(&ket(0, 1), &m).unwrap());
        let out = apply_measurement(&ket(0, 1), &m).unwrap();
        assert_eq!(out, ket(0, 2));
    }

    #[test]
    fn disturbance_hook_rotates_object() {
        let flip = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let m = model(Mode::Unitary).with_disturbance(flip.clone()).unwrap();
        let out = apply_measurement(&ket(0, 0), &m).unwrap();
        // pointer still reports the pre-measurement value
        assert_eq!(out, ket(1, 1));
        let u = build_pointer_unitary(&m, &layout()).unwrap();
        assert_eq!(u.apply(&ket(0, 0)).unwrap(), ket(1, 1));
        let not_unitary = DMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(0.0), c(1.0)]);
        assert!(model(Mode::Unitary).with_disturbance(not_unitary).is_err());
    }

    #[test]
    fn irrelevant_register_is_carried_inertly() {
        let l = SpaceLayout::new([("obj", 2), ("ptr", 3), ("m", 2)]).unwrap();
        let m = MeasurementModel::new("obj", 2, "ptr", 3, vec![1, 2], Mode::Unitary)
            .unwrap()
            .with_irrelevant("m");
        let start = basis_ket(&l, &[("obj", 1), ("ptr", 0), ("m", 1)]).unwrap();
        let out = apply_measurement(&start, &m).unwrap();
        assert_eq!(
            out,
            basis_ket(&l, &[("obj", 1), ("ptr", 2), ("m", 1)]).unwrap()
        );
        let missing = m.clone();
        assert!(apply_measurement(&ket(0, 0), &missing).is_err());
    }

    #[test]
    fn collapse_on_eigenstate_is_deterministic() {
        let m = model(Mode::Collapse);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (r, post) = collapse_measurement(&ket(0, 0), &m, &mut rng).unwrap();
            assert_eq!(r, 0);
            assert_eq!(post, ket(0, 1));
        }
    }

    #[test]
    fn collapse_frequency_matches_born_weight() {
        let m = model(Mode::Collapse);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ups = (0..n)
            .filter(|_| {
                collapse_measurement(&right_ready(), &m, &mut rng)
                    .unwrap()
                    .0
                    == 0
            })
            .count();
        let freq = ups as f64 / n as f64;
        assert!(
            (freq - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(),
            "{freq}"
        );
    }

    #[test]
    fn collapse_is_reproducible_per_seed() {
        let m = model(Mode::Collapse);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| {
                    collapse_measurement(&right_ready(), &m, &mut rng)
                        .unwrap()
                        .0
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn collapse_mixture_has_no_cross_terms() {
        let mix = collapse_mixture(&right_ready(), &model(Mode::Collapse)).unwrap();
        let spin_only = crate::hilbert::partial_trace(&mix, &["spin"]).unwrap();
        let expected = DensityOperator::maximally_mixed(SpaceLayout::new([("spin", 2)]).unwrap());
        assert!(spin_only.max_abs_diff(&expected).unwrap() < 1e-15);
        // while the unitary account keeps a pure joint state
        let pure =
            density_from_ket(&apply_measurement(&right_ready(), &model(Mode::Unitary)).unwrap());
        assert_abs_diff_eq!(crate::hilbert::purity(&pure), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pointer_distribution_examples() {
        let out = apply_measurement(&right_ready(), &model(Mode::Unitary)).unwrap();
        let p = pointer_distribution(&out, "pointer").unwrap();
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.5, epsilon = 1e-15);
        assert_eq!(
            pointer_distribution(&ket(0, 1), "pointer").unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert!(pointer_distribution(&ket(0, 1), "nope").is_err());
        // equals the diagonal of the pointer's reduced density operator
        let diag = out.reduced_density(&["pointer"]).unwrap().diagonal();
        for (a, b) in p.iter().zip(diag) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditioning_examples() {
        let out = apply_measurement(&right_ready(), &model(Mode::Unitary)).unwrap();
        let up = condition_on_outcome(&out, "pointer", 1).unwrap();
        assert_eq!(up, ket(0, 1));
        assert_eq!(
            condition_on_outcome(&ket(0, 1), "spin", 0).unwrap(),
            ket(0, 1)
        );
        assert!(matches!(
            condition_on_outcome(&ket(0, 1), "spin", 1),
            Err(MeasurementError::ZeroProbability { .. })
        ));
        let rho = density_from_ket(&up);
        assert_abs_diff_eq!(fidelity_with_ket(&rho, &ket(0, 1)).unwrap(), 1.0);
    }

    #[test]
    fn sample_discrete_skips_empty_bins() {
        let w = [0.0, 0.0, 1.0, 0.0];
        for u in [0.0, 0.3, 0.999_999] {
            assert_eq!(sample_discrete(&w, u), 2);
        }
        assert_eq!(sample_discrete(&[0.5, 0.5], 0.49), 0);
        assert_eq!(sample_discrete(&[0.5, 0.5], 0.51), 1);
    }

    /// Object of size `r_dim`, pointer of size `r_dim + 1`, and a spectator.
    fn random_setup(r_dim: usize, amps: &[(f64, f64)]) -> (SpaceLayout, Ket, MeasurementModel) {
        let l = SpaceLayout::new([("obj", r_dim), ("ptr", r_dim + 1), ("env", 2)]).unwrap();
        let readout: Vec<usize> = (1..=r_dim).rev().collect();
        let m =
            MeasurementModel::new("obj", r_dim, "ptr", r_dim + 1, readout, Mode::Unitary).unwrap();
        let mut full = vec![C64::new(0.0, 0.0); l.total_dim()];
        for r in 0..r_dim {
            for e in 0..2 {
                let (re, im) = amps[r * 2 + e];
                full[l.encode(&[r, 0, e]).unwrap()] = C64::new(re, im);
            }
        }
        let k = Ket::from_amplitudes(l.clone(), full).unwrap();
        (l, k, m)
    }

    proptest! {
        #[test]
        fn measurement_is_linear(
            r_dim in 2usize..=4,
            coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
        ) {
            let l = SpaceLayout::new([("obj", r_dim), ("ptr", r_dim + 1)]).unwrap();
            let readout: Vec<usize> = (1..=r_dim).collect();
            let m = MeasurementModel::new("obj", r_dim, "ptr", r_dim + 1, readout, Mode::Unitary).unwrap();
            let eig: Vec<Ket> = (0..r_dim)
                .map(|r| basis_ket(&l, &[("obj", r), ("ptr", 0)]).unwrap())
                .collect();
            let cs: Vec<C64> = coeffs[..r_dim].iter().map(|&(a, b)| C64::new(a, b)).collect();
            let norm: f64 = cs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let terms: Vec<(C64, &Ket)> = cs.iter().copied().zip(eig.iter()).collect();
            let lhs = apply_measurement(&superpose(&terms).unwrap(), &m).unwrap();
            let mut rhs = DVector::zeros(l.total_dim());
            for (c, k) in cs.iter().zip(&eig) {
                rhs += apply_measurement(k, &m).unwrap().amplitudes() * (*c / norm);
            }
            prop_assert!(max_modulus((lhs.amplitudes() - rhs).iter()) < 1e-10);
        }

        #[test]
        fn unitary_pointer_statistics_equal_collapse_statistics(
            r_dim in 2usize..=3,
            amps in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
        ) {
            let (l, k, m) = random_setup(r_dim, &amps);
            prop_assume!(k.norm() > 0.5);
            prop_assert!(l.total_dim() <= 36);
            let unitary = pointer_distribution(&apply_measurement(&k, &m).unwrap(), "ptr").unwrap();
            // Exact enumeration of the collapse branches.
            let mut collapse = vec![0.0; r_dim + 1];
            for (r, p, post) in collapse_branches(&k, &m.clone().with_mode(Mode::Collapse)).unwrap() {
                let alpha = m.readout_values()[r];
                prop_assert!((pointer_distribution(&post, "ptr").unwrap()[alpha] - 1.0).abs() < 1e-12);
                collapse[alpha] += p;
            }
            for (a, b) in unitary.iter().zip(&collapse) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!((unitary.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn eigenstate_gives_point_mass_at_readout(r_dim in 2usize..=5, pick in 0usize..5) {
            let r = pick % r_dim;
            let l = SpaceLayout::new([("obj", r_dim), ("ptr", r_dim + 2)]).unwrap();
            let readout: Vec<usize> = (0..r_dim).map(|i| i + 2).collect();
            let m = MeasurementModel::new("obj", r_dim, "ptr", r_dim + 2, readout.clone(), Mode::Unitary).unwrap();
            let out = apply_measurement(&basis_ket(&l, &[("obj", r), ("ptr", 0)]).unwrap(), &m).unwrap();
            let p = pointer_distribution(&out, "ptr").unwrap();
            prop_assert_eq!(p[readout[r]], 1.0);
        }

        #[test]
        fn conditioning_then_reading_is_a_point_mass(
            amps in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
            pick in 0usize..4,
        ) {
            let (_, k, m) = random_setup(4, &amps);
            let out = apply_measurement(&k, &m).unwrap();
            let p = pointer_distribution(&out, "ptr").unwrap();
            let alpha = m.readout_values()[pick];
            prop_assume!(p[alpha] > 1e-6);
            let cond = condition_on_outcome(&out, "ptr", alpha).unwrap();
            let q = pointer_distribution(&cond, "ptr").unwrap();
            prop_assert!((q[alpha] - 1.0).abs() < 1e-12);
        }
    }
}
