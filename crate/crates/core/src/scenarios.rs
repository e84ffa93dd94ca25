//! Worked experiments built from controlled shifts on small registers.
//!
//! The Stern-Gerlach family lives on six registers (see [`sg`] for the basis
//! conventions):
//!
//! | register | dim | basis                               |
//! |----------|-----|-------------------------------------|
//! | `spin`   | 2   | up, down                            |
//! | `path`   | 3   | psi (unsplit), psi-up, psi-down     |
//! | `light`  | 2   | no-light, light                     |
//! | `friend` | 3   | unset, F-up, F-down                 |
//! | `record` | 3   | none, up, down                      |
//! | `wigner` | 2   | unset, set                          |
//!
//! All registers other than `spin` start at index 0. Every operation here is
//! a real permutation, so no phase bookkeeping is needed. The builders accept
//! any layout that contains the registers they act on; [`Protocol`]s use the
//! smallest such layout.
//!
//! The cat experiment uses a separate `cat` (live, dead) and `db` (unset,
//! cl, cd) pair, where `db` is the combined detector-and-brain pointer.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::hilbert::{
    basis_ket, density_from_ket, fidelity_with_ket, ket_fidelity, partial_trace, purity, superpose,
    DensityOperator, HilbertError, Ket, SpaceLayout, C64,
};
use crate::measurement::{
    apply_measurement, collapse_branches, collapse_measurement, condition_on_outcome,
    pointer_distribution, sample_discrete, ControlledShift, MeasurementError, MeasurementModel,
    Mode, MIN_OUTCOME_PROBABILITY,
};

/// Register names and basis indices of the Stern-Gerlach layout.
pub mod sg {
    pub const SPIN: &str = "spin";
    pub const PATH: &str = "path";
    pub const LIGHT: &str = "light";
    pub const FRIEND: &str = "friend";
    pub const RECORD: &str = "record";
    pub const WIGNER: &str = "wigner";

    pub const UP: usize = 0;
    pub const DOWN: usize = 1;

    pub const PSI: usize = 0;
    pub const PSI_UP: usize = 1;
    pub const PSI_DOWN: usize = 2;

    pub const NO_LIGHT: usize = 0;
    pub const LIGHT_SEEN: usize = 1;

    pub const FRIEND_UNSET: usize = 0;
    pub const FRIEND_UP: usize = 1;
    pub const FRIEND_DOWN: usize = 2;

    pub const RECORD_NONE: usize = 0;
    pub const RECORD_UP: usize = 1;
    pub const RECORD_DOWN: usize = 2;

    pub const WIGNER_UNSET: usize = 0;
    pub const WIGNER_SET: usize = 1;

    pub(super) const REGISTERS: [(&str, usize); 6] = [
        (SPIN, 2),
        (PATH, 3),
        (LIGHT, 2),
        (FRIEND, 3),
        (RECORD, 3),
        (WIGNER, 2),
    ];
}

/// Register names and basis indices of the cat experiment.
pub mod cat {
    pub const CAT: &str = "cat";
    pub const DB: &str = "db";

    pub const LIVE: usize = 0;
    pub const DEAD: usize = 1;

    pub const DB_UNSET: usize = 0;
    pub const DB_LIVE: usize = 1;
    pub const DB_DEAD: usize = 2;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

/// The full six-register Stern-Gerlach layout.
pub fn sg_layout() -> SpaceLayout {
    SpaceLayout::new(sg::REGISTERS).expect("static layout is valid")
}

/// Stern-Gerlach layout restricted to `labels` (kept in canonical order).
pub fn sg_sub_layout(labels: &[&str]) -> Result<SpaceLayout> {
    Ok(sg_layout().sub_layout(labels)?)
}

/// `|->>|psi>` with every environment register at index 0, on `layout`.
pub fn sg_prepare_on(layout: &SpaceLayout) -> Result<Ket> {
    let assign = |spin: usize| -> Vec<(&str, usize)> {
        layout
            .labels()
            .map(|l| (l, if l == sg::SPIN { spin } else { 0 }))
            .collect()
    };
    let up = basis_ket(layout, &assign(sg::UP))?;
    let down = basis_ket(layout, &assign(sg::DOWN))?;
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    Ok(superpose(&[(h, &up), (h, &down)])?)
}

/// `|->>|psi>` on the full Stern-Gerlach layout.
pub fn sg_prepare() -> Ket {
    sg_prepare_on(&sg_layout()).expect("full layout has every register")
}

fn require_register_value(state: &Ket, label: &str, value: usize, what: &str) -> Result<()> {
    let p = state.marginal(label)?;
    if (p[value] - 1.0).abs() > MIN_OUTCOME_PROBABILITY.sqrt() {
        return Err(ScenarioError::Precondition(format!(
            "{what}: `{label}` has weight {:.3e} outside index {value}",
            1.0 - p[value]
        )));
    }
    Ok(())
}

fn split_shift() -> ControlledShift {
    ControlledShift::new(sg::SPIN, sg::PATH, vec![sg::PSI_UP, sg::PSI_DOWN])
}

/// The Stern-Gerlach device viewed as a measurement with `path` as pointer.
pub fn sg_split_model(mode: Mode) -> MeasurementModel {
    MeasurementModel::new(
        sg::SPIN,
        2,
        sg::PATH,
        3,
        vec![sg::PSI_UP, sg::PSI_DOWN],
        mode,
    )
    .expect("static model is valid")
}

/// Sends spin-up along `psi-up` and spin-down along `psi-down`.
pub fn sg_split(state: &Ket) -> Result<Ket> {
    require_register_value(state, sg::PATH, sg::PSI, "split needs an unsplit beam")?;
    Ok(split_shift().apply(state)?)
}

/// Rejoins the two paths; the inverse of [`sg_split`] as a permutation.
pub fn sg_recombine(state: &Ket) -> Result<Ket> {
    Ok(split_shift().inverse(3).apply(state)?)
}

/// Copies the path branch into the `record` register.
pub fn sg_with_record(state: &Ket) -> Result<Ket> {
    require_register_value(
        state,
        sg::RECORD,
        sg::RECORD_NONE,
        "record must start empty",
    )?;
    let copy = ControlledShift::new(
        sg::PATH,
        sg::RECORD,
        vec![0, sg::RECORD_UP, sg::RECORD_DOWN],
    );
    Ok(copy.apply(state)?)
}

/// Light aimed at the upper path, then the friend's brain registering it.
///
/// `psi-up` flips `light` to light-seen; the friend then ends in F-up when
/// light was seen and F-down otherwise.
pub fn wigner_friend_measure(state: &Ket) -> Result<Ket> {
    require_register_value(state, sg::LIGHT, sg::NO_LIGHT, "light must start dark")?;
    require_register_value(
        state,
        sg::FRIEND,
        sg::FRIEND_UNSET,
        "friend must start unset",
    )?;
    let illuminate = ControlledShift::new(sg::PATH, sg::LIGHT, vec![0, 1, 0]);
    let mut see = vec![0; 2];
    see[sg::NO_LIGHT] = sg::FRIEND_DOWN;
    see[sg::LIGHT_SEEN] = sg::FRIEND_UP;
    let register = ControlledShift::new(sg::LIGHT, sg::FRIEND, see);
    Ok(register.apply(&illuminate.apply(state)?)?)
}

/// Reduced state of the particle (`spin`, `path`), tracing out everything else.
pub fn friend_reduced_state(state: &Ket) -> Result<DensityOperator> {
    Ok(partial_trace(
        &density_from_ket(state),
        &[sg::SPIN, sg::PATH],
    )?)
}

/// `(|up, psi-up> <up, psi-up| + |down, psi-down> <down, psi-down|) / 2` on `(spin, path)`.
pub fn decohered_particle_state() -> DensityOperator {
    let l = sg_sub_layout(&[sg::SPIN, sg::PATH]).expect("valid labels");
    let up = basis_ket(&l, &[(sg::SPIN, sg::UP), (sg::PATH, sg::PSI_UP)]).expect("valid");
    let down = basis_ket(&l, &[(sg::SPIN, sg::DOWN), (sg::PATH, sg::PSI_DOWN)]).expect("valid");
    DensityOperator::mixture(&[(0.5, &up), (0.5, &down)]).expect("valid mixture")
}

/// `|->` on a lone spin register.
pub fn spin_right() -> Ket {
    let l = SpaceLayout::new([(sg::SPIN, 2)]).expect("valid");
    let up = basis_ket(&l, &[(sg::SPIN, sg::UP)]).expect("valid");
    let down = basis_ket(&l, &[(sg::SPIN, sg::DOWN)]).expect("valid");
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    superpose(&[(h, &up), (h, &down)]).expect("valid")
}

/// Rows are `<->|` and `<-|`: applying it to `spin` rewrites the x basis as 0/1.
pub fn spin_x_basis() -> DMatrix<C64> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    DMatrix::from_row_slice(2, 2, &[h, h, h, -h])
}

pub fn cat_layout() -> SpaceLayout {
    SpaceLayout::new([(cat::CAT, 2), (cat::DB, 3)]).expect("valid")
}

/// `(|cat-live> + |cat-dead>)/sqrt2` with the detector-brain unset.
pub fn cat_prepare() -> Ket {
    let l = cat_layout();
    let live = basis_ket(&l, &[(cat::CAT, cat::LIVE), (cat::DB, cat::DB_UNSET)]).expect("valid");
    let dead = basis_ket(&l, &[(cat::CAT, cat::DEAD), (cat::DB, cat::DB_UNSET)]).expect("valid");
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    superpose(&[(h, &live), (h, &dead)]).expect("valid")
}

pub fn cat_model(mode: Mode) -> MeasurementModel {
    MeasurementModel::new(
        cat::CAT,
        2,
        cat::DB,
        3,
        vec![cat::DB_LIVE, cat::DB_DEAD],
        mode,
    )
    .expect("static model is valid")
}

/// Stable identifiers of the registered protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ScenarioId {
    #[serde(rename = "sg-basic")]
    SgBasic,
    #[serde(rename = "sg-recombine")]
    SgRecombine,
    #[serde(rename = "sg-record")]
    SgRecord,
    #[serde(rename = "wigner-friend")]
    WignerFriend,
    #[serde(rename = "cat")]
    Cat,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::SgBasic,
        ScenarioId::SgRecombine,
        ScenarioId::SgRecord,
        ScenarioId::WignerFriend,
        ScenarioId::Cat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::SgBasic => "sg-basic",
            ScenarioId::SgRecombine => "sg-recombine",
            ScenarioId::SgRecord => "sg-record",
            ScenarioId::WignerFriend => "wigner-friend",
            ScenarioId::Cat => "cat",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioId::SgBasic => "spin |-> through an up/down Stern-Gerlach device, read by path",
            ScenarioId::SgRecombine => {
                "split, intermediate path readout, recombine, then read spin along x"
            }
            ScenarioId::SgRecord => {
                "split, copy the path into a record, recombine, read spin along x and the record"
            }
            ScenarioId::WignerFriend => {
                "friend watches the upper path with light; Wigner stays outside"
            }
            ScenarioId::Cat => "cat in live+dead superposition read by a detector-brain register",
        }
    }

    pub fn registered_ids() -> String {
        Self::ALL.map(|s| s.as_str()).join(", ")
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scenario `{0}`; registered scenarios: {ids}", ids = ScenarioId::registered_ids())]
pub struct UnknownScenario(pub String);

impl FromStr for ScenarioId {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

/// Basis in which a register is read.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Computational,
    /// Rows are the bras of the reading basis.
    Rotated(DMatrix<C64>),
}

/// One named readout of a protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub name: &'static str,
    pub register: &'static str,
    pub basis: Basis,
    pub values: &'static [&'static str],
}

pub type StateOp = fn(&Ket) -> Result<Ket>;

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Step {
    /// Deterministic unitary acting on `touches`.
    Evolve {
        name: &'static str,
        touches: &'static [&'static str],
        op: StateOp,
    },
    /// Pointer measurement; the readout reports the object value.
    Measure {
        readout: Readout,
        model: MeasurementModel,
    },
    /// Direct joint reading of one or more registers.
    Observe { readouts: Vec<Readout> },
}

impl Step {
    fn touches(&self) -> Vec<&str> {
        match self {
            Step::Evolve { touches, .. } => touches.to_vec(),
            Step::Measure { model, .. } => vec![model.object_label(), model.pointer_label()],
            Step::Observe { .. } => Vec::new(),
        }
    }
}

/// A scenario as an initial state plus an ordered list of steps.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub id: ScenarioId,
    pub initial: Ket,
    pub steps: Vec<Step>,
}

const SPIN_VALUES: &[&str] = &["up", "down"];
const SPIN_X_VALUES: &[&str] = &["right", "left"];
const RECORD_VALUES: &[&str] = &["none", "up", "down"];
const FRIEND_VALUES: &[&str] = &["unset", "F-up", "F-down"];
const WIGNER_VALUES: &[&str] = &["unset", "set"];
const CAT_VALUES: &[&str] = &["live", "dead"];

fn spin_readout() -> Readout {
    Readout {
        name: "spin",
        register: sg::PATH,
        basis: Basis::Computational,
        values: SPIN_VALUES,
    }
}

fn spin_x_readout() -> Readout {
    Readout {
        name: "spin-x",
        register: sg::SPIN,
        basis: Basis::Rotated(spin_x_basis()),
        values: SPIN_X_VALUES,
    }
}

fn recombine_step() -> Step {
    Step::Evolve {
        name: "recombine",
        touches: &[sg::SPIN, sg::PATH],
        op: sg_recombine,
    }
}

impl Protocol {
    pub fn new(id: ScenarioId) -> Self {
        let sg_on = |labels: &[&str]| {
            sg_prepare_on(&sg_sub_layout(labels).expect("valid labels")).expect("valid layout")
        };
        let measure_spin = || Step::Measure {
            readout: spin_readout(),
            model: sg_split_model(Mode::Unitary),
        };
        match id {
            ScenarioId::SgBasic => Protocol {
                id,
                initial: sg_on(&[sg::SPIN, sg::PATH]),
                steps: vec![measure_spin()],
            },
            ScenarioId::SgRecombine => Protocol {
                id,
                initial: sg_on(&[sg::SPIN, sg::PATH]),
                steps: vec![
                    measure_spin(),
                    recombine_step(),
                    Step::Observe {
                        readouts: vec![spin_x_readout()],
                    },
                ],
            },
            ScenarioId::SgRecord => Protocol {
                id,
                initial: sg_on(&[sg::SPIN, sg::PATH, sg::RECORD]),
                steps: vec![
                    Step::Evolve {
                        name: "split",
                        touches: &[sg::SPIN, sg::PATH],
                        op: sg_split,
                    },
                    Step::Evolve {
                        name: "record",
                        touches: &[sg::PATH, sg::RECORD],
                        op: sg_with_record,
                    },
                    recombine_step(),
                    Step::Observe {
                        readouts: vec![
                            spin_x_readout(),
                            Readout {
                                name: "record",
                                register: sg::RECORD,
                                basis: Basis::Computational,
                                values: RECORD_VALUES,
                            },
                        ],
                    },
                ],
            },
            ScenarioId::WignerFriend => Protocol {
                id,
                initial: sg_on(&[sg::SPIN, sg::PATH, sg::LIGHT, sg::FRIEND, sg::WIGNER]),
                steps: vec![
                    Step::Evolve {
                        name: "split",
                        touches: &[sg::SPIN, sg::PATH],
                        op: sg_split,
                    },
                    Step::Evolve {
                        name: "friend-looks",
                        touches: &[sg::PATH, sg::LIGHT, sg::FRIEND],
                        op: wigner_friend_measure,
                    },
                    Step::Observe {
                        readouts: vec![
                            Readout {
                                name: "friend",
                                register: sg::FRIEND,
                                basis: Basis::Computational,
                                values: FRIEND_VALUES,
                            },
                            Readout {
                                name: "wigner",
                                register: sg::WIGNER,
                                basis: Basis::Computational,
                                values: WIGNER_VALUES,
                            },
                        ],
                    },
                ],
            },
            ScenarioId::Cat => Protocol {
                id,
                initial: cat_prepare(),
                steps: vec![Step::Measure {
                    readout: Readout {
                        name: "cat",
                        register: cat::DB,
                        basis: Basis::Computational,
                        values: CAT_VALUES,
                    },
                    model: cat_model(Mode::Unitary),
                }],
            },
        }
    }

    /// All readouts in execution order.
    pub fn readouts(&self) -> Vec<&Readout> {
        self.steps
            .iter()
            .flat_map(|s| match s {
                Step::Evolve { .. } => Vec::new(),
                Step::Measure { readout, .. } => vec![readout],
                Step::Observe { readouts } => readouts.iter().collect(),
            })
            .collect()
    }

    pub fn readout_index(&self, name: &str) -> Option<usize> {
        self.readouts().iter().position(|r| r.name == name)
    }

    /// Final state of the no-collapse account.
    pub fn unitary_final_state(&self) -> Result<Ket> {
        let mut state = self.initial.clone();
        for step in &self.steps {
            state = match step {
                Step::Evolve { op, .. } => op(&state)?,
                Step::Measure { model, .. } => {
                    apply_measurement(&state, &model.clone().with_mode(Mode::Unitary))?
                }
                Step::Observe { .. } => state,
            };
        }
        Ok(state)
    }

    /// Joint reading tables for the no-collapse account.
    ///
    /// Reading a pointer never changes the state. A readout whose register is
    /// left alone by every later step is still physically recorded at the end,
    /// so all such readouts are sampled jointly from the final state and keep
    /// their correlations. A readout whose register is acted on later (the
    /// path before recombination) only exists at its own stage and is sampled
    /// from that stage's state.
    pub fn unitary_tables(&self) -> Result<Vec<JointTable>> {
        let mut state = self.initial.clone();
        let mut slot = 0;
        let mut staged: Vec<JointTable> = Vec::new();
        let mut persistent: Vec<(usize, &Readout, Option<&MeasurementModel>)> = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            let (group, model): (Vec<&Readout>, Option<&MeasurementModel>) = match step {
                Step::Evolve { op, .. } => {
                    state = op(&state)?;
                    (Vec::new(), None)
                }
                Step::Measure { readout, model } => {
                    state = apply_measurement(&state, &model.clone().with_mode(Mode::Unitary))?;
                    (vec![readout], Some(model))
                }
                Step::Observe { readouts } => (readouts.iter().collect(), None),
            };
            let later: Vec<&str> = self.steps[i + 1..]
                .iter()
                .flat_map(|s| s.touches())
                .collect();
            let mut here = Vec::new();
            for r in group {
                if later.contains(&r.register) {
                    here.push((slot, r, model));
                } else {
                    persistent.push((slot, r, model));
                }
                slot += 1;
            }
            if !here.is_empty() {
                staged.push(JointTable::from_state(&state, &here)?);
            }
        }
        if !persistent.is_empty() {
            staged.push(JointTable::from_state(&state, &persistent)?);
        }
        Ok(staged)
    }

    /// Exact per-readout distributions. Unitary mode reads marginals without
    /// touching the state; collapse mode enumerates every branch.
    pub fn exact_distributions(&self, mode: Mode) -> Result<Vec<Vec<f64>>> {
        let readouts = self.readouts();
        let mut out: Vec<Vec<f64>> = readouts.iter().map(|r| vec![0.0; r.values.len()]).collect();
        match mode {
            Mode::Unitary => {
                for table in self.unitary_tables()? {
                    for (values, p) in &table.outcomes {
                        for (&slot, &v) in table.slots.iter().zip(values) {
                            out[slot][v] += p;
                        }
                    }
                }
            }
            Mode::Collapse => {
                for branch in self.collapse_branches()? {
                    for (slot, v) in branch.values.iter().enumerate() {
                        out[slot][*v] += branch.probability;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Every collapse-mode history with nonzero probability.
    pub fn collapse_branches(&self) -> Result<Vec<Branch>> {
        let mut branches = vec![Branch {
            probability: 1.0,
            state: self.initial.clone(),
            values: Vec::new(),
        }];
        for step in &self.steps {
            let mut next = Vec::new();
            for b in branches {
                match step {
                    Step::Evolve { op, .. } => next.push(Branch {
                        state: op(&b.state)?,
                        ..b
                    }),
                    Step::Measure { model, .. } => {
                        let model = model.clone().with_mode(Mode::Collapse);
                        for (r, p, post) in collapse_branches(&b.state, &model)? {
                            let mut values = b.values.clone();
                            values.push(r);
                            next.push(Branch {
                                probability: b.probability * p,
                                state: post,
                                values,
                            });
                        }
                    }
                    Step::Observe { readouts } => {
                        let group: Vec<(usize, &Readout, Option<&MeasurementModel>)> = readouts
                            .iter()
                            .enumerate()
                            .map(|(i, r)| (i, r, None))
                            .collect();
                        let table = JointTable::from_state(&b.state, &group)?;
                        for (values, p) in &table.outcomes {
                            let state = project_readouts(&b.state, readouts, values)?;
                            let mut all = b.values.clone();
                            all.extend(values);
                            next.push(Branch {
                                probability: b.probability * p,
                                state,
                                values: all,
                            });
                        }
                    }
                }
            }
            branches = next;
        }
        Ok(branches)
    }

    /// One collapse-mode history drawn with `rng`: readout values and final state.
    pub fn collapse_trial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<usize>, Ket)> {
        let mut state = self.initial.clone();
        let mut values = Vec::new();
        for step in &self.steps {
            match step {
                Step::Evolve { op, .. } => state = op(&state)?,
                Step::Measure { model, .. } => {
                    let (r, post) = collapse_measurement(
                        &state,
                        &model.clone().with_mode(Mode::Collapse),
                        rng,
                    )?;
                    values.push(r);
                    state = post;
                }
                Step::Observe { readouts } => {
                    let group: Vec<(usize, &Readout, Option<&MeasurementModel>)> = readouts
                        .iter()
                        .enumerate()
                        .map(|(i, r)| (i, r, None))
                        .collect();
                    let table = JointTable::from_state(&state, &group)?;
                    let drawn = table.sample(rng.random::<f64>()).to_vec();
                    state = project_readouts(&state, readouts, &drawn)?;
                    values.extend(drawn);
                }
            }
        }
        Ok((values, state))
    }
}

/// A collapse-mode history.
#[derive(Debug, Clone)]
pub struct Branch {
    pub probability: f64,
    pub state: Ket,
    pub values: Vec<usize>,
}

/// Joint distribution of a group of readouts.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    /// Position of each readout in [`Protocol::readouts`].
    pub slots: Vec<usize>,
    /// Joint values (in `slots` order) with their probabilities; zero entries dropped.
    pub outcomes: Vec<(Vec<usize>, f64)>,
}

impl JointTable {
    fn from_state(
        state: &Ket,
        group: &[(usize, &Readout, Option<&MeasurementModel>)],
    ) -> Result<Self> {
        let mut rotated = state.clone();
        for (_, r, _) in group {
            if let Basis::Rotated(m) = &r.basis {
                rotated = rotated.apply_local(r.register, m)?;
            }
        }
        let registers: Vec<&str> = group.iter().map(|(_, r, _)| r.register).collect();
        let dims: Vec<usize> = registers
            .iter()
            .map(|l| state.layout().dim_of(l))
            .collect::<std::result::Result<_, _>>()?;
        let joint = rotated.joint_marginal(&registers)?;
        let mut outcomes: Vec<(Vec<usize>, f64)> = Vec::new();
        for (flat, p) in joint.into_iter().enumerate() {
            if p <= MIN_OUTCOME_PROBABILITY {
                continue;
            }
            let mut digits = vec![0; dims.len()];
            let mut rest = flat;
            for k in (0..dims.len()).rev() {
                digits[k] = rest % dims[k];
                rest /= dims[k];
            }
            let mut values = Vec::with_capacity(digits.len());
            for ((_, r, model), d) in group.iter().zip(digits) {
                let v = match model {
                    Some(m) => m.object_for_pointer(d).ok_or_else(|| {
                        ScenarioError::Precondition(format!(
                            "pointer `{}` reads {d}, which no object value maps to",
                            r.register
                        ))
                    })?,
                    None => d,
                };
                values.push(v);
            }
            match outcomes.iter_mut().find(|(v, _)| *v == values) {
                Some((_, q)) => *q += p,
                None => outcomes.push((values, p)),
            }
        }
        Ok(Self {
            slots: group.iter().map(|(s, _, _)| *s).collect(),
            outcomes,
        })
    }

    pub fn sample(&self, u: f64) -> &[usize] {
        let weights: Vec<f64> = self.outcomes.iter().map(|(_, p)| *p).collect();
        &self.outcomes[sample_discrete(&weights, u)].0
    }
}

/// Projects each read register onto its drawn value, in the register's reading basis.
fn project_readouts(state: &Ket, readouts: &[Readout], values: &[usize]) -> Result<Ket> {
    let mut s = state.clone();
    for (r, &v) in readouts.iter().zip(values) {
        s = match &r.basis {
            Basis::Computational => condition_on_outcome(&s, r.register, v)?,
            Basis::Rotated(m) => {
                let rotated = s.apply_local(r.register, m)?;
                let cond = condition_on_outcome(&rotated, r.register, v)?;
                cond.apply_local(r.register, &m.adjoint())?
            }
        };
    }
    Ok(s)
}

/// Serializable snapshot of a density operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSummary {
    pub name: String,
    pub registers: Vec<String>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub purity: f64,
}

impl OperatorSummary {
    pub fn new(name: impl Into<String>, rho: &DensityOperator) -> Self {
        let m = rho.matrix();
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Self {
            name: name.into(),
            registers: rho.layout().labels().map(str::to_string).collect(),
            re: rows(|c| c.re),
            im: rows(|c| c.im),
            purity: purity(rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Amplitude {
    pub basis: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

/// Nonzero amplitudes of a ket with their basis digits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSummary {
    pub registers: Vec<String>,
    pub dims: Vec<usize>,
    pub amplitudes: Vec<Amplitude>,
}

impl StateSummary {
    pub fn new(k: &Ket) -> Self {
        let layout = k.layout();
        Self {
            registers: layout.labels().map(str::to_string).collect(),
            dims: layout.subsystems().iter().map(|s| s.dim).collect(),
            amplitudes: k
                .amplitudes()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.norm_sqr() > MIN_OUTCOME_PROBABILITY)
                .map(|(i, a)| Amplitude {
                    basis: layout.decode(i),
                    re: a.re,
                    im: a.im,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedDistribution {
    pub name: String,
    pub values: Vec<String>,
    pub probabilities: Vec<f64>,
}

/// Deterministic description of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioId,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub final_state: StateSummary,
    pub reduced: Vec<OperatorSummary>,
    pub fidelities: Vec<NamedValue>,
    pub distributions: Vec<NamedDistribution>,
}

/// Builds the report for `id`. Collapse mode draws one history from a
/// ChaCha8 stream seeded with `seed` (0 when absent).
pub fn scenario_report(id: ScenarioId, mode: Mode, seed: Option<u64>) -> Result<ScenarioReport> {
    use rand::SeedableRng;
    let protocol = Protocol::new(id);
    let final_state = match mode {
        Mode::Unitary => protocol.unitary_final_state()?,
        Mode::Collapse => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            protocol.collapse_trial(&mut rng)?.1
        }
    };
    let distributions = protocol
        .readouts()
        .iter()
        .zip(protocol.exact_distributions(mode)?)
        .map(|(r, p)| NamedDistribution {
            name: r.name.to_string(),
            values: r.values.iter().map(|v| v.to_string()).collect(),
            probabilities: p,
        })
        .collect();
    let mut reduced = Vec::new();
    let mut fidelities = Vec::new();
    if id == ScenarioId::Cat {
        let cat_rho = final_state.reduced_density(&[cat::CAT])?;
        reduced.push(OperatorSummary::new("cat", &cat_rho));
        for (name, db) in [("cat | db=cl", cat::DB_LIVE), ("cat | db=cd", cat::DB_DEAD)] {
            if let Ok(cond) = condition_on_outcome(&final_state, cat::DB, db) {
                reduced.push(OperatorSummary::new(
                    name,
                    &cond.reduced_density(&[cat::CAT])?,
                ));
            }
        }
    } else {
        let spin_rho = final_state.reduced_density(&[sg::SPIN])?;
        fidelities.push(NamedValue {
            name: "spin vs |->".into(),
            value: fidelity_with_ket(&spin_rho, &spin_right())?,
        });
        if matches!(id, ScenarioId::SgRecombine | ScenarioId::SgRecord) {
            fidelities.push(NamedValue {
                name: "final vs prepared".into(),
                value: ket_fidelity(&final_state, &protocol.initial)?,
            });
        }
        reduced.push(OperatorSummary::new("spin", &spin_rho));
        reduced.push(OperatorSummary::new(
            "spin,path",
            &final_state.reduced_density(&[sg::SPIN, sg::PATH])?,
        ));
    }
    Ok(ScenarioReport {
        scenario: id,
        mode,
        seed: if mode == Mode::Collapse {
            Some(seed.unwrap_or(0))
        } else {
            None
        },
        final_state: StateSummary::new(&final_state),
        reduced,
        fidelities,
        distributions,
    })
}

/// Cat experiment in the no-collapse account.
pub fn cat_scenario() -> Result<ScenarioReport> {
    scenario_report(ScenarioId::Cat, Mode::Unitary, None)
}

/// DB pointer distribution after the cat-detector interaction.
pub fn cat_db_distribution() -> Result<Vec<f64>> {
    let out = apply_measurement(&cat_prepare(), &cat_model(Mode::Unitary))?;
    Ok(pointer_distribution(&out, cat::DB)?)
}
