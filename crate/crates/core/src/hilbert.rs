//! Dense state algebra over labeled tensor-product spaces.
//!
//! A [`SpaceLayout`] is an ordered list of named registers. Basis indices are
//! encoded with the first-listed register as the most significant digit, so a
//! layout `[spin:2, path:3]` puts `(spin=1, path=2)` at index `1*3 + 2 = 5`.
//! Every state in this crate uses that ordering, which makes outputs
//! reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Tolerance for algebraic identities (norms, traces, hermiticity).
pub const ALGEBRA_TOL: f64 = 1e-10;

/// Singular values above this count toward the Schmidt rank.
pub const SCHMIDT_CUTOFF: f64 = 1e-9;

pub type C64 = Complex64;

/// Largest entry modulus of a complex matrix or vector.
pub fn max_modulus<'a>(entries: impl IntoIterator<Item = &'a C64>) -> f64 {
    entries.into_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HilbertError {
    #[error("layout has no registers")]
    EmptyLayout,
    #[error("duplicate register label `{0}`")]
    DuplicateLabel(String),
    #[error("register `{label}` has dimension {dim}; registers need dimension >= 2")]
    DimensionTooSmall { label: String, dim: usize },
    #[error("unknown register label `{0}`")]
    UnknownLabel(String),
    #[error("register `{0}` was not assigned a basis index")]
    UnassignedLabel(String),
    #[error("index {index} out of range for register `{label}` of dimension {dim}")]
    IndexOutOfRange {
        label: String,
        index: usize,
        dim: usize,
    },
    #[error("states live on different layouts")]
    LayoutMismatch,
    #[error("expected {expected} amplitudes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("linear combination has zero norm")]
    ZeroNorm,
    #[error("partial trace needs at least one kept register")]
    EmptyKeep,
    #[error("partition must be a proper, nonempty subset of the layout labels")]
    InvalidPartition,
    #[error("not a density operator: {0}")]
    InvalidDensity(String),
}

pub type Result<T, E = HilbertError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Subsystem {
    pub label: String,
    pub dim: usize,
}

/// Ordered registry of named registers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpaceLayout {
    subsystems: Vec<Subsystem>,
    strides: Vec<usize>,
    total: usize,
}

impl SpaceLayout {
    pub fn new<I, S>(subsystems: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let subsystems: Vec<Subsystem> = subsystems
            .into_iter()
            .map(|(label, dim)| Subsystem {
                label: label.into(),
                dim,
            })
            .collect();
        if subsystems.is_empty() {
            return Err(HilbertError::EmptyLayout);
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.dim < 2 {
                return Err(HilbertError::DimensionTooSmall {
                    label: s.label.clone(),
                    dim: s.dim,
                });
            }
            if subsystems[..i].iter().any(|o| o.label == s.label) {
                return Err(HilbertError::DuplicateLabel(s.label.clone()));
            }
        }
        let mut strides = vec![1; subsystems.len()];
        for i in (0..subsystems.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * subsystems[i + 1].dim;
        }
        let total = strides[0] * subsystems[0].dim;
        Ok(Self {
            subsystems,
            strides,
            total,
        })
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.subsystems.iter().map(|s| s.label.as_str())
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.subsystems.iter().any(|s| s.label == label)
    }

    /// Position of `label` in the register order.
    pub fn position(&self, label: &str) -> Result<usize> {
        self.subsystems
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| HilbertError::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.subsystems[self.position(label)?].dim)
    }

    pub fn stride(&self, position: usize) -> usize {
        self.strides[position]
    }

    /// Digit of register `position` within flat basis index `index`.
    #[inline]
    pub fn digit(&self, index: usize, position: usize) -> usize {
        (index / self.strides[position]) % self.subsystems[position].dim
    }

    pub fn encode(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.subsystems.len() {
            return Err(HilbertError::DimensionMismatch {
                expected: self.subsystems.len(),
                found: digits.len(),
            });
        }
        let mut index = 0;
        for ((s, &stride), &d) in self.subsystems.iter().zip(&self.strides).zip(digits) {
            if d >= s.dim {
                return Err(HilbertError::IndexOutOfRange {
                    label: s.label.clone(),
                    index: d,
                    dim: s.dim,
                });
            }
            index += d * stride;
        }
        Ok(index)
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        (0..self.subsystems.len())
            .map(|p| self.digit(index, p))
            .collect()
    }

    /// Layout restricted to `labels`, keeping this layout's register order.
    pub fn sub_layout(&self, labels: &[&str]) -> Result<SpaceLayout> {
        for l in labels {
            self.position(l)?;
        }
        SpaceLayout::new(
            self.subsystems
                .iter()
                .filter(|s| labels.contains(&s.label.as_str()))
                .map(|s| (s.label.clone(), s.dim)),
        )
    }

    /// Splits every flat index into (index within `keep`, index within the rest).
    /// Both halves keep this layout's relative register order.
    fn split_indices(&self, keep: &[usize]) -> Vec<(usize, usize)> {
        (0..self.total)
            .map(|idx| {
                let (mut a, mut b) = (0, 0);
                for (p, s) in self.subsystems.iter().enumerate() {
                    let d = self.digit(idx, p);
                    if keep.contains(&p) {
                        a = a * s.dim + d;
                    } else {
                        b = b * s.dim + d;
                    }
                }
                (a, b)
            })
            .collect()
    }

    fn positions_of(&self, labels: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(labels.len());
        for l in labels {
            let p = self.position(l)?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Normalized pure state over a [`SpaceLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ket {
    layout: SpaceLayout,
    amplitudes: DVector<C64>,
}

impl Ket {
    /// Builds a ket from raw amplitudes, normalizing them.
    pub fn from_amplitudes(layout: SpaceLayout, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: layout.total_dim(),
                found: amplitudes.len(),
            });
        }
        Self::normalized(layout, DVector::from_vec(amplitudes))
    }

    pub(crate) fn normalized(layout: SpaceLayout, amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm <= f64::EPSILON {
            return Err(HilbertError::ZeroNorm);
        }
        Ok(Self {
            layout,
            amplitudes: amplitudes.unscale(norm),
        })
    }

    /// Wraps amplitudes already known to be normalized (unitary images).
    pub(crate) fn from_parts_unchecked(layout: SpaceLayout, amplitudes: DVector<C64>) -> Self {
        debug_assert_eq!(layout.total_dim(), amplitudes.len());
        Self { layout, amplitudes }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amplitudes[index]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Multiplies every amplitude by `e^{i phase}`.
    pub fn with_global_phase(&self, phase: f64) -> Ket {
        Ket::from_parts_unchecked(
            self.layout.clone(),
            self.amplitudes.map(|a| a * C64::from_polar(1.0, phase)),
        )
    }

    /// Tensor product; `other`'s registers are appended after this ket's.
    pub fn tensor(&self, other: &Ket) -> Result<Ket> {
        let layout = SpaceLayout::new(
            self.layout
                .subsystems()
                .iter()
                .chain(other.layout.subsystems())
                .map(|s| (s.label.clone(), s.dim)),
        )?;
        let n = other.amplitudes.len();
        let amps = DVector::from_fn(layout.total_dim(), |i, _| {
            self.amplitudes[i / n] * other.amplitudes[i % n]
        });
        Ok(Ket::from_parts_unchecked(layout, amps))
    }

    /// Born probability of each flat basis index.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Born marginal of one register in its computational basis.
    pub fn marginal(&self, label: &str) -> Result<Vec<f64>> {
        let p = self.layout.position(label)?;
        let mut out = vec![0.0; self.layout.subsystems()[p].dim];
        for (i, a) in self.amplitudes.iter().enumerate() {
            out[self.layout.digit(i, p)] += a.norm_sqr();
        }
        Ok(out)
    }

    /// Joint Born distribution over several registers, indexed in the order given.
    pub fn joint_marginal(&self, labels: &[&str]) -> Result<Vec<f64>> {
        let positions: Vec<usize> = labels
            .iter()
            .map(|l| self.layout.position(l))
            .collect::<Result<_>>()?;
        let dims: Vec<usize> = positions
            .iter()
            .map(|&p| self.layout.subsystems()[p].dim)
            .collect();
        let mut out = vec![0.0; dims.iter().product()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let mut j = 0;
            for (&p, &d) in positions.iter().zip(&dims) {
                j = j * d + self.layout.digit(i, p);
            }
            out[j] += a.norm_sqr();
        }
        Ok(out)
    }

    /// Zeroes every amplitude whose `label` digit differs from `value`.
    /// The result is not normalized; its squared norm is the outcome probability.
    pub fn project(&self, label: &str, value: usize) -> Result<DVector<C64>> {
        let p = self.layout.position(label)?;
        let dim = self.layout.subsystems()[p].dim;
        if value >= dim {
            return Err(HilbertError::IndexOutOfRange {
                label: label.to_string(),
                index: value,
                dim,
            });
        }
        let mut out = self.amplitudes.clone();
        for (i, a) in out.iter_mut().enumerate() {
            if self.layout.digit(i, p) != value {
                *a = C64::new(0.0, 0.0);
            }
        }
        Ok(out)
    }

    /// Applies a `d x d` operator to register `label`, identity elsewhere.
    pub fn apply_local(&self, label: &str, op: &DMatrix<C64>) -> Result<Ket> {
        let p = self.layout.position(label)?;
        let dim = self.layout.subsystems()[p].dim;
        if op.nrows() != dim || op.ncols() != dim {
            return Err(HilbertError::DimensionMismatch {
                expected: dim,
                found: op.nrows(),
            });
        }
        let stride = self.layout.stride(p);
        let mut out = DVector::zeros(self.amplitudes.len());
        for (i, a) in self.amplitudes.iter().enumerate() {
            if *a == C64::new(0.0, 0.0) {
                continue;
            }
            let d = self.layout.digit(i, p);
            let base = i - d * stride;
            for row in 0..dim {
                out[base + row * stride] += op[(row, d)] * a;
            }
        }
        Ket::normalized(self.layout.clone(), out)
    }

    /// Reduced density operator of `keep`, computed straight from amplitudes.
    pub fn reduced_density(&self, keep: &[&str]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(HilbertError::EmptyKeep);
        }
        let positions = self.layout.positions_of(keep)?;
        let sub = self.layout.sub_layout(keep)?;
        let groups = traced_groups(&self.layout, &positions);
        let mut m = DMatrix::zeros(sub.total_dim(), sub.total_dim());
        for group in &groups {
            for &(fa, ka) in group {
                let a = self.amplitudes[fa];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for &(fb, kb) in group {
                    m[(ka, kb)] += a * self.amplitudes[fb].conj();
                }
            }
        }
        Ok(DensityOperator {
            layout: sub,
            matrix: m,
        })
    }
}

/// Computational basis vector; every register of `layout` must be assigned.
pub fn basis_ket(layout: &SpaceLayout, assignment: &[(&str, usize)]) -> Result<Ket> {
    for (label, _) in assignment {
        layout.position(label)?;
    }
    let mut digits = Vec::with_capacity(layout.len());
    for s in layout.subsystems() {
        let idx = assignment
            .iter()
            .find(|(l, _)| *l == s.label)
            .map(|(_, i)| *i)
            .ok_or_else(|| HilbertError::UnassignedLabel(s.label.clone()))?;
        digits.push(idx);
    }
    let index = layout.encode(&digits)?;
    let mut amps = DVector::zeros(layout.total_dim());
    amps[index] = C64::new(1.0, 0.0);
    Ok(Ket::from_parts_unchecked(layout.clone(), amps))
}

/// Normalized linear combination `sum_i c_i |k_i>`.
pub fn superpose(terms: &[(C64, &Ket)]) -> Result<Ket> {
    let (_, first) = terms.first().ok_or(HilbertError::ZeroNorm)?;
    let layout = first.layout.clone();
    let mut acc = DVector::zeros(layout.total_dim());
    for (c, k) in terms {
        if k.layout != layout {
            return Err(HilbertError::LayoutMismatch);
        }
        acc.axpy(*c, &k.amplitudes, C64::new(1.0, 0.0));
    }
    Ket::normalized(layout, acc)
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner(a: &Ket, b: &Ket) -> Result<C64> {
    if a.layout != b.layout {
        return Err(HilbertError::LayoutMismatch);
    }
    Ok(a.amplitudes.dotc(&b.amplitudes))
}

/// Phase-insensitive overlap `|<a|b>|^2`.
pub fn ket_fidelity(a: &Ket, b: &Ket) -> Result<f64> {
    Ok(inner(a, b)?.norm_sqr())
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    /// Validates hermiticity, unit trace and positivity to [`ALGEBRA_TOL`].
    pub fn from_matrix(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(HilbertError::DimensionMismatch {
                expected: n,
                found: matrix.nrows(),
            });
        }
        let herm_err = max_modulus((&matrix - matrix.adjoint()).iter());
        if herm_err > ALGEBRA_TOL {
            return Err(HilbertError::InvalidDensity(format!(
                "not Hermitian (max deviation {herm_err:e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > ALGEBRA_TOL || tr.im.abs() > ALGEBRA_TOL {
            return Err(HilbertError::InvalidDensity(format!("trace is {tr}")));
        }
        let rho = Self { layout, matrix };
        let min = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -ALGEBRA_TOL {
            return Err(HilbertError::InvalidDensity(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        Ok(rho)
    }

    /// `|k><k|`.
    pub fn from_ket(k: &Ket) -> Self {
        Self {
            layout: k.layout.clone(),
            matrix: &k.amplitudes * k.amplitudes.adjoint(),
        }
    }

    /// Convex combination `sum_i w_i |k_i><k_i|`; weights are renormalized.
    pub fn mixture(terms: &[(f64, &Ket)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or(HilbertError::ZeroNorm)?;
        let layout = first.layout.clone();
        let total: f64 = terms.iter().map(|(w, _)| *w).sum();
        if total <= 0.0 || terms.iter().any(|(w, _)| *w < 0.0) {
            return Err(HilbertError::InvalidDensity(
                "mixture weights must be nonnegative with positive sum".into(),
            ));
        }
        let n = layout.total_dim();
        let mut m = DMatrix::zeros(n, n);
        for (w, k) in terms {
            if k.layout != layout {
                return Err(HilbertError::LayoutMismatch);
            }
            m += (&k.amplitudes * k.amplitudes.adjoint()) * C64::from(*w / total);
        }
        Ok(Self { layout, matrix: m })
    }

    pub fn maximally_mixed(layout: SpaceLayout) -> Self {
        let n = layout.total_dim();
        Self {
            matrix: DMatrix::identity(n, n) * C64::from(1.0 / n as f64),
            layout,
        }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Number of eigenvalues above [`SCHMIDT_CUTOFF`].
    pub fn rank(&self) -> usize {
        self.eigenvalues()
            .into_iter()
            .filter(|&e| e > SCHMIDT_CUTOFF)
            .count()
    }

    /// Diagonal in the computational basis (Born weights of each basis state).
    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|c| c.re).collect()
    }

    pub fn max_abs_diff(&self, other: &DensityOperator) -> Result<f64> {
        if self.layout != other.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        Ok(max_modulus((&self.matrix - &other.matrix).iter()))
    }
}

/// `|k><k|`.
pub fn density_from_ket(k: &Ket) -> DensityOperator {
    DensityOperator::from_ket(k)
}

/// Groups full-space indices by their traced-out part. Each entry pairs the
/// full index with its index inside the kept sub-layout.
fn traced_groups(layout: &SpaceLayout, keep: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let split = layout.split_indices(keep);
    let kept_dim: usize = keep.iter().map(|&p| layout.subsystems()[p].dim).product();
    let traced_dim = layout.total_dim() / kept_dim;
    let mut groups = vec![Vec::with_capacity(kept_dim); traced_dim];
    for (full, (k, t)) in split.into_iter().enumerate() {
        groups[t].push((full, k));
    }
    groups
}

/// Traces out every register not in `keep`:
/// `rho_K[a, b] = sum_t rho[(a, t), (b, t)]`.
pub fn partial_trace(rho: &DensityOperator, keep: &[&str]) -> Result<DensityOperator> {
    if keep.is_empty() {
        return Err(HilbertError::EmptyKeep);
    }
    let positions = rho.layout.positions_of(keep)?;
    let sub = rho.layout.sub_layout(keep)?;
    let n = sub.total_dim();
    let mut m = DMatrix::zeros(n, n);
    for group in traced_groups(&rho.layout, &positions) {
        for &(fa, ka) in &group {
            for &(fb, kb) in &group {
                m[(ka, kb)] += rho.matrix[(fa, fb)];
            }
        }
    }
    Ok(DensityOperator {
        layout: sub,
        matrix: m,
    })
}

/// `tr(rho^2)`.
pub fn purity(rho: &DensityOperator) -> f64 {
    // tr(rho rho) = sum_ij |rho_ij|^2 for Hermitian rho
    rho.matrix.iter().map(|c| c.norm_sqr()).sum()
}

/// `<k|rho|k>`.
pub fn fidelity_with_ket(rho: &DensityOperator, k: &Ket) -> Result<f64> {
    if rho.layout != k.layout {
        return Err(HilbertError::LayoutMismatch);
    }
    let v = &rho.matrix * &k.amplitudes;
    Ok(k.amplitudes.dotc(&v).re)
}

/// Singular values of the amplitude matrix across the cut `partition | rest`,
/// sorted descending.
pub fn schmidt_coefficients(k: &Ket, partition: &[&str]) -> Result<Vec<f64>> {
    let layout = &k.layout;
    if partition.is_empty() {
        return Err(HilbertError::InvalidPartition);
    }
    let positions = layout.positions_of(partition)?;
    if positions.len() == layout.len() {
        return Err(HilbertError::InvalidPartition);
    }
    let rows: usize = positions
        .iter()
        .map(|&p| layout.subsystems()[p].dim)
        .product();
    let cols = layout.total_dim() / rows;
    let mut m = DMatrix::zeros(rows, cols);
    for (full, (a, b)) in layout.split_indices(&positions).into_iter().enumerate() {
        m[(a, b)] = k.amplitudes[full];
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Schmidt rank across `partition | rest`; 1 means a product state.
pub fn schmidt_entanglement(k: &Ket, partition: &[&str]) -> Result<usize> {
    Ok(schmidt_coefficients(k, partition)?
        .into_iter()
        .filter(|&s| s > SCHMIDT_CUTOFF)
        .count())
}
