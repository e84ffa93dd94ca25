//! Seeded Monte Carlo trials over the registered protocols.
//!
//! Seed fan-out: trial `i` draws from `ChaCha8Rng::seed_from_u64(master_seed)`
//! switched to stream `i`. Streams are independent, so trials can run in any
//! order or in parallel and still reproduce bit for bit.
//!
//! Standard errors are normal-approximation binomial, `sqrt(p(1-p)/n)`; they
//! are meaningful from roughly `n >= 1000`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::measurement::Mode;
use crate::scenarios::{JointTable, Protocol, ScenarioError, ScenarioId};

/// Exact distributions further apart than this mark a divergence.
pub const DIVERGENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error("unknown readout `{label}`; known readouts: {known}")]
    UnknownReadout { label: String, known: String },
    #[error("readout `{readout}` has no value `{value}`; values: {known}")]
    UnknownValue {
        readout: String,
        value: String,
        known: String,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub readout: &'static str,
    pub value: &'static str,
}

/// One ensemble member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// ChaCha8 stream the trial drew from.
    pub stream: u64,
    pub mode: Mode,
    pub outcomes: Vec<Outcome>,
}

impl TrialRecord {
    pub fn value_of(&self, readout: &str) -> Option<&'static str> {
        self.outcomes
            .iter()
            .find(|o| o.readout == readout)
            .map(|o| o.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadoutStats {
    pub readout: String,
    pub values: Vec<String>,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lineage {
    pub predicate: String,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub id: String,
    pub scenario: ScenarioId,
    pub mode: Mode,
    pub seed: u64,
    pub n_trials: u64,
    /// Set when a post-selection matched nothing; frequencies are then all zero.
    pub empty: bool,
    pub readouts: Vec<ReadoutStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

impl EnsembleStats {
    pub fn readout(&self, name: &str) -> Option<&ReadoutStats> {
        self.readouts.iter().find(|r| r.readout == name)
    }

    /// Frequency of `value` on `readout`, if both exist.
    pub fn frequency(&self, readout: &str, value: &str) -> Option<f64> {
        let r = self.readout(readout)?;
        let i = r.values.iter().position(|v| v == value)?;
        Some(r.frequencies[i])
    }

    fn known_readouts(&self) -> String {
        self.readouts
            .iter()
            .map(|r| r.readout.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn tabulate(
    header: &[(String, Vec<String>)],
    records: &[&TrialRecord],
) -> (Vec<ReadoutStats>, u64) {
    let n = records.len() as u64;
    let stats = header
        .iter()
        .map(|(name, values)| {
            let mut counts = vec![0u64; values.len()];
            for rec in records {
                if let Some(v) = rec.value_of(name) {
                    if let Some(i) = values.iter().position(|x| x == v) {
                        counts[i] += 1;
                    }
                }
            }
            let frequencies: Vec<f64> = counts
                .iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect();
            let stderr = frequencies
                .iter()
                .map(|&p| {
                    if n == 0 {
                        0.0
                    } else {
                        (p * (1.0 - p) / n as f64).sqrt()
                    }
                })
                .collect();
            ReadoutStats {
                readout: name.clone(),
                values: values.clone(),
                counts,
                frequencies,
                stderr,
            }
        })
        .collect();
    (stats, n)
}

fn protocol_header(p: &Protocol) -> Vec<(String, Vec<String>)> {
    p.readouts()
        .iter()
        .map(|r| {
            (
                r.name.to_string(),
                r.values.iter().map(|v| v.to_string()).collect(),
            )
        })
        .collect()
}

fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

fn one_trial(
    protocol: &Protocol,
    tables: Option<&[JointTable]>,
    mode: Mode,
    master_seed: u64,
    trial: u64,
) -> Result<TrialRecord> {
    let mut rng = trial_rng(master_seed, trial);
    let readouts = protocol.readouts();
    let values: Vec<usize> = match (mode, tables) {
        (Mode::Unitary, Some(tables)) => {
            let mut values = vec![0; readouts.len()];
            for t in tables {
                let drawn = t.sample(rng.random::<f64>());
                for (&slot, &v) in t.slots.iter().zip(drawn) {
                    values[slot] = v;
                }
            }
            values
        }
        _ => protocol.collapse_trial(&mut rng)?.0,
    };
    Ok(TrialRecord {
        trial,
        stream: trial,
        mode,
        outcomes: readouts
            .iter()
            .zip(values)
            .map(|(r, v)| Outcome {
                readout: r.name,
                value: r.values[v],
            })
            .collect(),
    })
}

/// Runs `n` trials of `scenario` in `mode`.
///
/// Unitary mode never alters the state: each trial reads pointers from
/// precomputed Born tables (see [`Protocol::unitary_tables`]). Collapse mode
/// performs the sequential draws and projections of each history.
pub fn run_trials(
    scenario: ScenarioId,
    mode: Mode,
    n: u64,
    master_seed: u64,
    parallel: bool,
) -> Result<(Vec<TrialRecord>, EnsembleStats)> {
    if n == 0 {
        return Err(EnsembleError::ZeroTrials);
    }
    let protocol = Protocol::new(scenario);
    let tables = match mode {
        Mode::Unitary => Some(protocol.unitary_tables()?),
        Mode::Collapse => None,
    };
    let run = |i: u64| one_trial(&protocol, tables.as_deref(), mode, master_seed, i);
    let records: Vec<TrialRecord> = if parallel {
        (0..n).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..n).map(run).collect::<Result<_>>()?
    };
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let (readouts, n_trials) = tabulate(&protocol_header(&protocol), &refs);
    let stats = EnsembleStats {
        id: format!("{scenario}/{mode}/seed={master_seed}/n={n}"),
        scenario,
        mode,
        seed: master_seed,
        n_trials,
        empty: false,
        readouts,
        lineage: None,
    };
    Ok((records, stats))
}

/// Required `(readout, value)` pairs; all must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predicate(pub Vec<(String, String)>);

impl Predicate {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self(
            pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        )
    }

    pub fn describe(&self) -> String {
        if self.0.is_empty() {
            return "all".to_string();
        }
        self.0
            .iter()
            .map(|(r, v)| format!("{r}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn matches(&self, record: &TrialRecord) -> bool {
        self.0
            .iter()
            .all(|(r, v)| record.value_of(r) == Some(v.as_str()))
    }
}

/// Statistics of the sub-ensemble of `records` satisfying `predicate`.
pub fn post_select(
    records: &[TrialRecord],
    parent: &EnsembleStats,
    predicate: &Predicate,
) -> Result<EnsembleStats> {
    for (label, value) in &predicate.0 {
        let r = parent
            .readout(label)
            .ok_or_else(|| EnsembleError::UnknownReadout {
                label: label.clone(),
                known: parent.known_readouts(),
            })?;
        if !r.values.contains(value) {
            return Err(EnsembleError::UnknownValue {
                readout: label.clone(),
                value: value.clone(),
                known: r.values.join(", "),
            });
        }
    }
    let header: Vec<(String, Vec<String>)> = parent
        .readouts
        .iter()
        .map(|r| (r.readout.clone(), r.values.clone()))
        .collect();
    let selected: Vec<&TrialRecord> = records.iter().filter(|r| predicate.matches(r)).collect();
    let (readouts, n_trials) = tabulate(&header, &selected);
    Ok(EnsembleStats {
        id: format!("{}|{}", parent.id, predicate.describe()),
        scenario: parent.scenario,
        mode: parent.mode,
        seed: parent.seed,
        n_trials,
        empty: n_trials == 0,
        readouts,
        lineage: Some(Lineage {
            predicate: predicate.describe(),
            parent: parent.id.clone(),
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactComparison {
    pub readout: String,
    pub values: Vec<String>,
    pub unitary: Vec<f64>,
    pub collapse: Vec<f64>,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: ScenarioId,
    pub n: u64,
    pub seed: u64,
    pub unitary: EnsembleStats,
    pub collapse: EnsembleStats,
    pub exact: Vec<ExactComparison>,
    pub divergence_tolerance: f64,
    pub divergent: bool,
}

impl ComparisonReport {
    pub fn exact_for(&self, readout: &str) -> Option<&ExactComparison> {
        self.exact.iter().find(|e| e.readout == readout)
    }
}

/// Exact per-readout distributions of both modes, without sampling.
pub fn exact_comparison(scenario: ScenarioId) -> Result<(Vec<ExactComparison>, bool)> {
    let protocol = Protocol::new(scenario);
    let u = protocol.exact_distributions(Mode::Unitary)?;
    let c = protocol.exact_distributions(Mode::Collapse)?;
    let rows: Vec<ExactComparison> = protocol
        .readouts()
        .iter()
        .zip(u.into_iter().zip(c))
        .map(|(r, (u, c))| ExactComparison {
            readout: r.name.to_string(),
            values: r.values.iter().map(|v| v.to_string()).collect(),
            max_abs_diff: u
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            unitary: u,
            collapse: c,
        })
        .collect();
    let divergent = rows.iter().any(|r| r.max_abs_diff > DIVERGENCE_TOL);
    Ok((rows, divergent))
}

/// Samples both modes with the same master seed and sets the divergence flag
/// from the exact distributions.
pub fn compare_modes(
    scenario: ScenarioId,
    n: u64,
    master_seed: u64,
    parallel: bool,
) -> Result<ComparisonReport> {
    if n == 0 {
        return Err(EnsembleError::ZeroTrials);
    }
    let (_, unitary) = run_trials(scenario, Mode::Unitary, n, master_seed, parallel)?;
    let (_, collapse) = run_trials(scenario, Mode::Collapse, n, master_seed, parallel)?;
    let (exact, divergent) = exact_comparison(scenario)?;
    Ok(ComparisonReport {
        scenario,
        n,
        seed: master_seed,
        unitary,
        collapse,
        exact,
        divergence_tolerance: DIVERGENCE_TOL,
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{basis_ket, ket_fidelity};
    use crate::measurement::{apply_measurement, condition_on_outcome, pointer_distribution};
    use crate::scenarios::{sg, sg_prepare_on, sg_split_model, sg_sub_layout};

    fn within(freq: f64, p: f64, n: u64, sigmas: f64) -> bool {
        (freq - p).abs() < sigmas * (p * (1.0 - p) / n as f64).sqrt().max(1e-12)
    }

    #[test]
    fn sg_basic_born_frequency() {
        let (_, stats) = run_trials(ScenarioId::SgBasic, Mode::Unitary, 100_000, 7, true).unwrap();
        let f = stats.frequency("spin", "up").unwrap();
        assert!(within(f, 0.5, 100_000, 3.0), "{f}");
        let r = stats.readout("spin").unwrap();
        assert_eq!(r.counts.iter().sum::<u64>(), 100_000);
        assert!((r.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cat_live_frequency() {
        for mode in Mode::ALL {
            let (_, stats) = run_trials(ScenarioId::Cat, mode, 10_000, 5, true).unwrap();
            assert!(within(
                stats.frequency("cat", "live").unwrap(),
                0.5,
                10_000,
                3.0
            ));
        }
    }

    #[test]
    fn determinism_serial_and_parallel() {
        for mode in Mode::ALL {
            let a = run_trials(ScenarioId::SgRecord, mode, 2_000, 99, false).unwrap();
            let b = run_trials(ScenarioId::SgRecord, mode, 2_000, 99, true).unwrap();
            let c = run_trials(ScenarioId::SgRecord, mode, 2_000, 99, true).unwrap();
            assert_eq!(a, b);
            assert_eq!(b, c);
            let d = run_trials(ScenarioId::SgRecord, mode, 2_000, 100, true).unwrap();
            assert_ne!(a.0, d.0);
        }
    }

    #[test]
    fn zero_trials_rejected() {
        assert_eq!(
            run_trials(ScenarioId::Cat, Mode::Unitary, 0, 1, false).unwrap_err(),
            EnsembleError::ZeroTrials
        );
        assert!(compare_modes(ScenarioId::SgBasic, 0, 1, false).is_err());
    }

    #[test]
    fn post_select_examples() {
        let (records, stats) =
            run_trials(ScenarioId::SgBasic, Mode::Unitary, 5_000, 1, true).unwrap();
        let up = post_select(&records, &stats, &Predicate::new([("spin", "up")])).unwrap();
        assert_eq!(up.frequency("spin", "up"), Some(1.0));
        assert!(!up.empty);
        assert_eq!(up.lineage.as_ref().unwrap().parent, stats.id);
        assert_eq!(up.lineage.as_ref().unwrap().predicate, "spin=up");

        let all = post_select(&records, &stats, &Predicate::default()).unwrap();
        assert_eq!(all.readouts, stats.readouts);
        assert_eq!(all.n_trials, stats.n_trials);

        let (records, stats) =
            run_trials(ScenarioId::SgRecord, Mode::Unitary, 500, 1, true).unwrap();
        let none = post_select(&records, &stats, &Predicate::new([("record", "none")])).unwrap();
        assert!(none.empty);
        assert_eq!(none.n_trials, 0);

        assert!(matches!(
            post_select(&records, &stats, &Predicate::new([("colour", "red")])),
            Err(EnsembleError::UnknownReadout { .. })
        ));
        assert!(matches!(
            post_select(&records, &stats, &Predicate::new([("record", "sideways")])),
            Err(EnsembleError::UnknownValue { .. })
        ));
    }

    #[test]
    fn post_selection_matches_conditioned_state() {
        // record=up selects the up branch; its spin-x readout is then 50/50
        let (records, stats) =
            run_trials(ScenarioId::SgRecord, Mode::Unitary, 40_000, 3, true).unwrap();
        let sub = post_select(&records, &stats, &Predicate::new([("record", "up")])).unwrap();
        let n = sub.n_trials;
        assert!(within(
            sub.frequency("spin-x", "right").unwrap(),
            0.5,
            n,
            4.0
        ));
        assert_eq!(sub.frequency("record", "up"), Some(1.0));

        let l = sg_sub_layout(&[sg::SPIN, sg::PATH]).unwrap();
        let state =
            apply_measurement(&sg_prepare_on(&l).unwrap(), &sg_split_model(Mode::Unitary)).unwrap();
        let cond = condition_on_outcome(&state, sg::PATH, sg::PSI_UP).unwrap();
        let branch = basis_ket(&l, &[(sg::SPIN, sg::UP), (sg::PATH, sg::PSI_UP)]).unwrap();
        assert!((ket_fidelity(&cond, &branch).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            pointer_distribution(&cond, sg::PATH).unwrap()[sg::PSI_UP],
            1.0
        );
    }

    #[test]
    fn compare_modes_flags_recombination_only() {
        let r = compare_modes(ScenarioId::SgRecombine, 20_000, 4, true).unwrap();
        assert!(r.divergent);
        let x = r.exact_for("spin-x").unwrap();
        assert!((x.unitary[0] - 1.0).abs() < 1e-12);
        assert!((x.collapse[0] - 0.5).abs() < 1e-12);
        assert_eq!(r.unitary.frequency("spin-x", "right"), Some(1.0));
        assert!(within(
            r.collapse.frequency("spin-x", "right").unwrap(),
            0.5,
            20_000,
            4.0
        ));
        for id in [
            ScenarioId::SgBasic,
            ScenarioId::SgRecord,
            ScenarioId::WignerFriend,
            ScenarioId::Cat,
        ] {
            let (_, divergent) = exact_comparison(id).unwrap();
            assert!(!divergent, "{id}");
        }
    }

    #[test]
    fn frequencies_converge_for_every_scenario() {
        let n = 100_000;
        for id in ScenarioId::ALL {
            let (exact, _) = exact_comparison(id).unwrap();
            for mode in Mode::ALL {
                let (_, stats) = run_trials(id, mode, n, 2024, true).unwrap();
                for row in &exact {
                    let want = if mode == Mode::Unitary {
                        &row.unitary
                    } else {
                        &row.collapse
                    };
                    let got = &stats.readout(&row.readout).unwrap().frequencies;
                    for (g, w) in got.iter().zip(want) {
                        assert!(
                            within(*g, *w, n, 4.0),
                            "{id} {mode} {}: {g} vs {w}",
                            row.readout
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unitary_wigner_friend_keeps_correlations() {
        let (records, _) =
            run_trials(ScenarioId::WignerFriend, Mode::Unitary, 1_000, 8, true).unwrap();
        assert!(records
            .iter()
            .all(|r| r.value_of("wigner") == Some("unset")));
        assert!(records
            .iter()
            .all(|r| r.value_of("friend") != Some("unset")));
    }

    #[test]
    fn stats_serialize_with_documented_keys() {
        let (_, stats) = run_trials(ScenarioId::Cat, Mode::Collapse, 10, 1, false).unwrap();
        let v = serde_json::to_value(&stats).unwrap();
        for key in [
            "id", "scenario", "mode", "seed", "n_trials", "empty", "readouts",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["scenario"], "cat");
        assert_eq!(v["mode"], "collapse");
        let r = &v["readouts"][0];
        for key in ["readout", "values", "counts", "frequencies", "stderr"] {
            assert!(r.get(key).is_some(), "{key}");
        }
    }
}
