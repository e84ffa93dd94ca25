//! Free-particle states on a periodic 1-D grid.
//!
//! Grid points are `x_j = x_min + j dx` with `dx = (x_max - x_min) / N`; the
//! point `x_max` itself is the periodic image of `x_min`.
//!
//! Transform convention (forward kernel `e^{-ikx}`, unitary in the continuum
//! limit):
//!
//! ```text
//! f(k_n) = dx / sqrt(2 pi) * sum_j psi_j e^{-i k_n x_j}
//! psi_j  = dk / sqrt(2 pi) * sum_n f(k_n) e^{+i k_n x_j}
//! k_n    = 2 pi n / (N dx),  n = -N/2 .. N/2 - 1,  dk = 2 pi / (N dx)
//! ```
//!
//! so that `sum |f|^2 dk = sum |psi|^2 dx` exactly. A Gaussian of width
//! `sigma0` transforms to `(2 sigma0^2 / pi)^{1/4} e^{-k^2 sigma0^2}`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::hilbert::C64;

/// Required ratio between boundary and peak amplitude.
pub const BOUNDARY_RATIO: f64 = 1e-8;

/// Half-width, in units of the packet's position spread, at which a Gaussian's
/// amplitude falls to [`BOUNDARY_RATIO`] of its peak.
pub fn boundary_half_width_factor() -> f64 {
    2.0 * (-BOUNDARY_RATIO.ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error(
        "grid too narrow: packet needs |x - {center}| <= {needed} inside [{x_min}, {x_max}) \
         to keep boundary amplitude below {BOUNDARY_RATIO:e} of peak"
    )]
    TooNarrow {
        center: f64,
        needed: f64,
        x_min: f64,
        x_max: f64,
    },
    #[error("grid too coarse: spectrum reaches |k| = {needed}, grid resolves |k| < {k_max}")]
    TooCoarse { needed: f64, k_max: f64 },
    #[error("wave vector {k} aliases on this grid (|k| must be below {k_max})")]
    Aliasing { k: f64, k_max: f64 },
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("state has zero norm")]
    ZeroNorm,
}

pub type Result<T, E = WaveError> = std::result::Result<T, E>;

/// Uniform periodic grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl GridSpec {
    pub const MIN_POINTS: usize = 64;
    pub const MAX_POINTS: usize = 1 << 22;

    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() || x_max <= x_min {
            return Err(WaveError::InvalidGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if !(Self::MIN_POINTS..=Self::MAX_POINTS).contains(&n_points) || !n_points.is_power_of_two()
        {
            return Err(WaveError::InvalidGrid(format!(
                "point count must be a power of two in [{}, {}], got {n_points}",
                Self::MIN_POINTS,
                Self::MAX_POINTS
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// `[-half_width, half_width)` with `n_points` samples.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n_points as f64
    }

    pub fn dk(&self) -> f64 {
        2.0 * PI / self.length()
    }

    /// Largest representable |k|.
    pub fn k_max(&self) -> f64 {
        PI / self.dx()
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Wave vectors in ascending order.
    pub fn ks(&self) -> Vec<f64> {
        let half = (self.n_points / 2) as i64;
        (0..self.n_points as i64)
            .map(|i| (i - half) as f64 * self.dk())
            .collect()
    }

    /// Checks that a packet of `params` at time `t` fits in space and in `k`.
    pub fn check_packet(&self, params: &PacketParams, t: f64) -> Result<()> {
        let center = params.group_velocity() * t;
        let needed = boundary_half_width_factor() * params.width_at(t);
        if center - needed < self.x_min || center + needed > self.x_max {
            return Err(WaveError::TooNarrow {
                center,
                needed,
                x_min: self.x_min,
                x_max: self.x_max,
            });
        }
        // |f(k)| ~ e^{-(k-k0)^2 sigma0^2}, so the same ratio in k space
        let k_reach = params.k0().abs() + 0.5 * boundary_half_width_factor() / params.sigma0;
        if k_reach >= self.k_max() {
            return Err(WaveError::TooCoarse {
                needed: k_reach,
                k_max: self.k_max(),
            });
        }
        Ok(())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::symmetric(60.0, 1024).expect("static grid is valid")
    }
}

/// Gaussian packet parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketParams {
    pub sigma0: f64,
    pub mass: f64,
    pub hbar: f64,
    pub p0: f64,
}

impl Default for PacketParams {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            mass: 1.0,
            hbar: 1.0,
            p0: 0.0,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(WaveError::InvalidParameter {
            field,
            reason: format!("must be a positive finite number, got {v}"),
        })
    }
}

impl PacketParams {
    pub fn new(sigma0: f64, mass: f64, hbar: f64, p0: f64) -> Result<Self> {
        let p = Self {
            sigma0,
            mass,
            hbar,
            p0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("sigma0", self.sigma0)?;
        positive("mass", self.mass)?;
        positive("hbar", self.hbar)?;
        if !self.p0.is_finite() {
            return Err(WaveError::InvalidParameter {
                field: "p0",
                reason: format!("must be finite, got {}", self.p0),
            });
        }
        Ok(())
    }

    /// Spreading time `2 m sigma0^2 / hbar`.
    pub fn tau0(&self) -> f64 {
        2.0 * self.mass * self.sigma0 * self.sigma0 / self.hbar
    }

    pub fn k0(&self) -> f64 {
        self.p0 / self.hbar
    }

    pub fn group_velocity(&self) -> f64 {
        self.p0 / self.mass
    }

    /// Complex width `sigma0 sqrt(1 + i t / tau0)` (principal branch).
    pub fn complex_width(&self, t: f64) -> C64 {
        self.sigma0 * C64::new(1.0, t / self.tau0()).sqrt()
    }

    /// Position standard deviation `sigma0 sqrt(1 + (t/tau0)^2)`.
    pub fn width_at(&self, t: f64) -> f64 {
        let r = t / self.tau0();
        self.sigma0 * (1.0 + r * r).sqrt()
    }

    /// Momentum-space standard deviation of `k`.
    pub fn k_width(&self) -> f64 {
        0.5 / self.sigma0
    }

    /// Closed-form amplitude at `(x, t)`.
    pub fn amplitude(&self, x: f64, t: f64) -> C64 {
        let s = self.complex_width(t);
        let k0 = self.k0();
        let omega0 = self.hbar * k0 * k0 / (2.0 * self.mass);
        let shifted = x - self.group_velocity() * t;
        let pref = self.sigma0.sqrt() / ((2.0 * PI).powf(0.25) * s);
        let envelope = (-(shifted * shifted) / (4.0 * s * s)).exp();
        pref * envelope * C64::from_polar(1.0, k0 * x - omega0 * t)
    }
}

/// Sampled wave function `psi(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveGrid {
    pub grid: GridSpec,
    pub amplitudes: Vec<C64>,
    pub hbar: f64,
    pub mass: f64,
    pub t: f64,
}

/// Sampled spectrum `f(k_n)` on the grid's reciprocal lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub grid: GridSpec,
    pub k: Vec<f64>,
    pub amplitudes: Vec<C64>,
    pub hbar: f64,
    pub mass: f64,
    pub t: f64,
}

impl WaveGrid {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n.is_nan() || n <= 0.0 {
            return Err(WaveError::ZeroNorm);
        }
        self.amplitudes.iter_mut().for_each(|a| *a /= n);
        Ok(self)
    }

    /// Emits `x,re,im,abs2` rows.
    pub fn to_csv(&self) -> String {
        curve_csv("x", &self.grid.xs(), &self.amplitudes)
    }
}

impl SpectrumGrid {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dk()
    }

    /// Emits `k,re,im,abs2` rows.
    pub fn to_csv(&self) -> String {
        curve_csv("k", &self.k, &self.amplitudes)
    }
}

fn curve_csv(axis: &str, coords: &[f64], amps: &[C64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([axis, "re", "im", "abs2"])
        .expect("writing to memory");
    for (c, a) in coords.iter().zip(amps) {
        w.write_record([
            c.to_string(),
            a.re.to_string(),
            a.im.to_string(),
            a.norm_sqr().to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii output")
}

/// Box-normalized `e^{ipx/hbar}` on `grid`.
pub fn plane_wave(p: f64, grid: &GridSpec, hbar: f64, mass: f64) -> Result<WaveGrid> {
    positive("hbar", hbar)?;
    positive("mass", mass)?;
    let k = p / hbar;
    if !k.is_finite() || k.abs() >= grid.k_max() {
        return Err(WaveError::Aliasing {
            k,
            k_max: grid.k_max(),
        });
    }
    let a = 1.0 / grid.length().sqrt();
    Ok(WaveGrid {
        grid: *grid,
        amplitudes: grid
            .xs()
            .into_iter()
            .map(|x| C64::from_polar(a, k * x))
            .collect(),
        hbar,
        mass,
        t: 0.0,
    })
}

/// Closed-form Gaussian packet sampled on `grid` at time `t`.
pub fn gaussian_packet(params: &PacketParams, t: f64, grid: &GridSpec) -> Result<WaveGrid> {
    params.validate()?;
    if !t.is_finite() {
        return Err(WaveError::InvalidParameter {
            field: "t",
            reason: format!("must be finite, got {t}"),
        });
    }
    grid.check_packet(params, t)?;
    Ok(WaveGrid {
        grid: *grid,
        amplitudes: grid
            .xs()
            .into_iter()
            .map(|x| params.amplitude(x, t))
            .collect(),
        hbar: params.hbar,
        mass: params.mass,
        t,
    })
}

fn planned(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Raw FFT slot holding wave number `k_n` for sorted index `i`.
fn raw_slot(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

pub fn fourier_decompose(w: &WaveGrid) -> SpectrumGrid {
    let g = w.grid;
    let n = g.n_points();
    let mut buf = w.amplitudes.clone();
    planned(n, false).process(&mut buf);
    let scale = g.dx() / (2.0 * PI).sqrt();
    let k = g.ks();
    let amplitudes = k
        .iter()
        .enumerate()
        .map(|(i, &kn)| buf[raw_slot(i, n)] * scale * C64::from_polar(1.0, -kn * g.x_min()))
        .collect();
    SpectrumGrid {
        grid: g,
        k,
        amplitudes,
        hbar: w.hbar,
        mass: w.mass,
        t: w.t,
    }
}

pub fn inverse_fourier(s: &SpectrumGrid) -> WaveGrid {
    let g = s.grid;
    let n = g.n_points();
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (i, (&kn, &f)) in s.k.iter().zip(&s.amplitudes).enumerate() {
        buf[raw_slot(i, n)] = f * C64::from_polar(1.0, kn * g.x_min());
    }
    planned(n, true).process(&mut buf);
    let scale = g.dk() / (2.0 * PI).sqrt();
    buf.iter_mut().for_each(|a| *a *= scale);
    WaveGrid {
        grid: g,
        amplitudes: buf,
        hbar: s.hbar,
        mass: s.mass,
        t: s.t,
    }
}

/// Free evolution by `dt`: each mode picks up `e^{-i hbar k^2 dt / 2m}`.
pub fn evolve_free(w: &WaveGrid, dt: f64) -> WaveGrid {
    let mut s = fourier_decompose(w);
    let c = w.hbar * dt / (2.0 * w.mass);
    for (a, &k) in s.amplitudes.iter_mut().zip(&s.k) {
        *a *= C64::from_polar(1.0, -c * k * k);
    }
    s.t = w.t + dt;
    inverse_fourier(&s)
}

/// Grid fidelity `|sum conj(a) b dx|^2`.
pub fn wave_fidelity(a: &WaveGrid, b: &WaveGrid) -> f64 {
    let dx = a.grid.dx();
    let overlap: C64 = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum::<C64>()
        * dx;
    overlap.norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub norm: f64,
}

fn weighted_moments(coords: &[f64], weights: &[f64], cell: f64) -> Moments {
    let norm: f64 = weights.iter().sum::<f64>() * cell;
    let mean = coords.iter().zip(weights).map(|(c, w)| c * w).sum::<f64>() * cell / norm;
    let var = coords
        .iter()
        .zip(weights)
        .map(|(c, w)| (c - mean) * (c - mean) * w)
        .sum::<f64>()
        * cell
        / norm;
    Moments {
        mean,
        std: var.sqrt(),
        norm,
    }
}

/// Moments of `|psi|^2 dx`.
pub fn position_stats(w: &WaveGrid) -> Moments {
    weighted_moments(&w.grid.xs(), &w.density(), w.grid.dx())
}

/// Moments of `|f|^2 dk` mapped through `v = hbar k / m`.
pub fn velocity_stats(s: &SpectrumGrid, mass: f64) -> Moments {
    let v: Vec<f64> = s.k.iter().map(|k| s.hbar * k / mass).collect();
    let w: Vec<f64> = s.amplitudes.iter().map(|a| a.norm_sqr()).collect();
    weighted_moments(&v, &w, s.grid.dk())
}

/// Moments of `|f|^2 dk` over `k`.
pub fn wavenumber_stats(s: &SpectrumGrid) -> Moments {
    let w: Vec<f64> = s.amplitudes.iter().map(|a| a.norm_sqr()).collect();
    weighted_moments(&s.k, &w, s.grid.dk())
}

/// Bins whose reference value is below this are left out of
/// [`spectrum_shape_deviation`]; relative error there is pure round-off.
pub const SHAPE_FLOOR: f64 = 1e-8;

/// RMS relative deviation of the peak-normalized `|f(k)|` from
/// `e^{-(k - k0)^2 sigma0^2}`, over bins where the reference exceeds [`SHAPE_FLOOR`].
pub fn spectrum_shape_deviation(s: &SpectrumGrid, params: &PacketParams) -> f64 {
    let peak = s.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let (sum, count) = s
        .k
        .iter()
        .zip(&s.amplitudes)
        .filter_map(|(k, a)| {
            let d = (k - params.k0()) * params.sigma0;
            let reference = (-d * d).exp();
            (reference >= SHAPE_FLOOR).then(|| ((a.norm() / peak - reference) / reference).powi(2))
        })
        .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
    (sum / count.max(1) as f64).sqrt()
}

/// `n` i.i.d. grid positions drawn from `|psi_j|^2` by inverse CDF, seeded
/// with a ChaCha8 stream.
pub fn sample_position(w: &WaveGrid, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(WaveError::EmptySample);
    }
    let dist = WeightedIndex::new(w.density()).map_err(|_| WaveError::ZeroNorm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| w.grid.x(dist.sample(&mut rng))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn default_packet(t: f64) -> WaveGrid {
        gaussian_packet(&PacketParams::default(), t, &GridSpec::default()).unwrap()
    }

    /// Composite Simpson over `[-l, l]`, independent of the grid sampling.
    fn simpson(f: impl Fn(f64) -> f64, l: f64, n: usize) -> f64 {
        let h = 2.0 * l / n as f64;
        let mut s = f(-l) + f(l);
        for i in 1..n {
            let x = -l + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 1.0, 63).is_err());
        assert!(GridSpec::new(0.0, 1.0, 96).is_err());
        assert!(GridSpec::new(0.0, 1.0, 1 << 23).is_err());
        assert!(GridSpec::new(1.0, 1.0, 64).is_err());
        assert!(GridSpec::new(0.0, f64::NAN, 64).is_err());
        let g = GridSpec::new(-1.0, 1.0, 64).unwrap();
        assert_relative_eq!(g.dx() * g.dk() * 64.0, 2.0 * PI, max_relative = 1e-14);
        assert_eq!(g.ks()[32], 0.0);
    }

    #[test]
    fn narrow_and_coarse_grids_rejected() {
        let p = PacketParams::default();
        let narrow = GridSpec::symmetric(5.0, 256).unwrap();
        assert!(matches!(
            gaussian_packet(&p, 0.0, &narrow),
            Err(WaveError::TooNarrow { .. })
        ));
        // fits at t=0 but not after spreading
        let mid = GridSpec::symmetric(12.0, 256).unwrap();
        assert!(gaussian_packet(&p, 0.0, &mid).is_ok());
        assert!(matches!(
            gaussian_packet(&p, 3.0 * p.tau0(), &mid),
            Err(WaveError::TooNarrow { .. })
        ));
        let coarse = GridSpec::symmetric(60.0, 64).unwrap();
        assert!(matches!(
            gaussian_packet(&p, 0.0, &coarse),
            Err(WaveError::TooCoarse { .. })
        ));
    }

    #[test]
    fn params_validated() {
        assert!(matches!(
            PacketParams::new(-1.0, 1.0, 1.0, 0.0),
            Err(WaveError::InvalidParameter {
                field: "sigma0",
                ..
            })
        ));
        assert!(PacketParams::new(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(PacketParams::new(1.0, 1.0, f64::INFINITY, 0.0).is_err());
        assert_eq!(PacketParams::new(0.5, 2.0, 1.0, 0.0).unwrap().tau0(), 1.0);
    }

    #[test]
    fn closed_form_matches_continuum_norm_and_width() {
        // Simpson quadrature of the analytic density, not the grid samples
        let p = PacketParams::default();
        for r in [0.0, 1.0, 3.0] {
            let t = r * p.tau0();
            let dens = |x: f64| p.amplitude(x, t).norm_sqr();
            let norm = simpson(dens, 80.0, 20_000);
            assert_relative_eq!(norm, 1.0, max_relative = 1e-10);
            let var = simpson(|x| x * x * dens(x), 80.0, 20_000);
            assert_relative_eq!(
                var.sqrt(),
                p.sigma0 * (1.0 + r * r).sqrt(),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn gaussian_examples() {
        let s0 = position_stats(&default_packet(0.0));
        assert!(s0.mean.abs() < 1e-12);
        assert_relative_eq!(s0.std, 1.0, max_relative = 1e-6);
        let tau = PacketParams::default().tau0();
        assert_relative_eq!(
            position_stats(&default_packet(2.0 * tau)).std,
            5f64.sqrt(),
            max_relative = 1e-6
        );
        assert_relative_eq!(
            position_stats(&default_packet(tau)).std,
            2f64.sqrt(),
            max_relative = 1e-6
        );
        let s3 = position_stats(&default_packet(3.0 * tau));
        assert!((s3.norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spreading_law() {
        let p = PacketParams::default();
        for r in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let s = position_stats(&default_packet(r * p.tau0()));
            assert_relative_eq!(s.std, p.width_at(r * p.tau0()), max_relative = 1e-6);
            assert!((s.norm - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn plane_wave_examples() {
        let g = GridSpec::default();
        let flat = plane_wave(0.0, &g, 1.0, 1.0).unwrap();
        assert!(flat
            .amplitudes
            .iter()
            .all(|a| (a - flat.amplitudes[0]).norm() < 1e-15));
        let k = 5.0 * g.dk();
        let s = fourier_decompose(&plane_wave(k, &g, 1.0, 1.0).unwrap());
        let total: f64 = s.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let (i, peak) = s
            .amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(peak / total >= 0.999);
        assert_relative_eq!(s.k[i], k, max_relative = 1e-12);
        let v = velocity_stats(&s, 1.0);
        assert_relative_eq!(v.mean, k, max_relative = 1e-10);
        assert!(v.std < 1e-6);

        let minus = plane_wave(-k, &g, 1.0, 1.0).unwrap();
        let both = WaveGrid {
            amplitudes: plane_wave(k, &g, 1.0, 1.0)
                .unwrap()
                .amplitudes
                .iter()
                .zip(&minus.amplitudes)
                .map(|(a, b)| a + b)
                .collect(),
            ..minus
        };
        let sb = fourier_decompose(&both);
        let mid = g.n_points() / 2;
        assert_relative_eq!(
            sb.amplitudes[mid + 5].norm_sqr(),
            sb.amplitudes[mid - 5].norm_sqr(),
            max_relative = 1e-10
        );
        assert!(plane_wave(g.k_max(), &g, 1.0, 1.0).is_err());
    }

    #[test]
    fn plane_wave_evolution_is_pure_phase() {
        let g = GridSpec::default();
        let w = plane_wave(3.0 * g.dk(), &g, 1.0, 1.0).unwrap();
        let e = evolve_free(&w, 7.3);
        for (a, b) in w.amplitudes.iter().zip(&e.amplitudes) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_matches_gaussian_shape() {
        let s = fourier_decompose(&default_packet(0.0));
        let peak = s.amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let mut acc = 0.0;
        let mut count = 0;
        for (k, a) in s.k.iter().zip(&s.amplitudes) {
            let reference = (-k * k).exp();
            if reference >= 1e-8 {
                let rel = (a.norm() / peak - reference) / reference;
                acc += rel * rel;
                count += 1;
            }
        }
        assert!(count > 50);
        assert!((acc / count as f64).sqrt() < 1e-6);
        assert!(spectrum_shape_deviation(&s, &PacketParams::default()) < 1e-6);
        // continuum value of the peak
        assert_relative_eq!(peak, (2.0 / PI).powf(0.25), max_relative = 1e-10);
    }

    #[test]
    fn parseval_and_round_trip() {
        let w = default_packet(1.3);
        let s = fourier_decompose(&w);
        assert!((s.norm_sqr() - w.norm_sqr()).abs() < 1e-8);
        let back = inverse_fourier(&s);
        for (a, b) in w.amplitudes.iter().zip(&back.amplitudes) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn velocity_and_uncertainty() {
        let p = PacketParams::default();
        let s = fourier_decompose(&default_packet(0.0));
        let v = velocity_stats(&s, p.mass);
        assert!(v.mean.abs() < 1e-12);
        // |f|^2 ~ e^{-2 k^2 sigma0^2}: quadrature of the continuum density
        let dens = |k: f64| (-2.0 * k * k * p.sigma0 * p.sigma0).exp();
        let oracle = (simpson(|k| k * k * dens(k), 20.0, 20_000) / simpson(dens, 20.0, 20_000))
            .sqrt()
            * p.hbar
            / p.mass;
        assert_relative_eq!(
            oracle,
            p.hbar / (2.0 * p.mass * p.sigma0),
            max_relative = 1e-10
        );
        assert_relative_eq!(v.std, oracle, max_relative = 1e-6);
        let x = position_stats(&default_packet(0.0));
        let k = wavenumber_stats(&s);
        assert_relative_eq!(x.std * p.hbar * k.std, p.hbar / 2.0, max_relative = 1e-5);
    }

    #[test]
    fn propagator_matches_closed_form() {
        let p = PacketParams::default();
        let start = default_packet(0.0);
        for r in [0.5, 1.0, 2.0, 5.0] {
            let t = r * p.tau0();
            let f = wave_fidelity(&evolve_free(&start, t), &default_packet(t));
            assert!(f >= 1.0 - 1e-8, "t/tau0 = {r}: fidelity {f}");
        }
        assert_eq!(evolve_free(&start, 0.0).t, 0.0);
        let id = evolve_free(&start, 0.0);
        for (a, b) in start.amplitudes.iter().zip(&id.amplitudes) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn moving_packet_tracks_group_velocity() {
        let p = PacketParams::new(1.0, 1.0, 1.0, 1.5).unwrap();
        let g = GridSpec::symmetric(60.0, 1024).unwrap();
        let t = 2.0;
        let w = gaussian_packet(&p, t, &g).unwrap();
        assert_relative_eq!(position_stats(&w).mean, 3.0, max_relative = 1e-9);
        let f = wave_fidelity(&evolve_free(&gaussian_packet(&p, 0.0, &g).unwrap(), t), &w);
        assert!(f >= 1.0 - 1e-8);
        assert_relative_eq!(
            velocity_stats(&fourier_decompose(&w), 1.0).mean,
            1.5,
            max_relative = 1e-9
        );
    }

    #[test]
    fn sampling_examples() {
        let w = default_packet(0.0);
        let xs = sample_position(&w, 100_000, 42).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // standard error of a Gaussian sample std is sigma / sqrt(2(n-1))
        assert!(
            (std - 1.0).abs() < 3.0 / (2.0 * (n - 1.0)).sqrt(),
            "std {std}"
        );
        assert_eq!(xs, sample_position(&w, 100_000, 42).unwrap());
        assert!(sample_position(&w, 0, 1).is_err());

        let mut spike = w.clone();
        spike
            .amplitudes
            .iter_mut()
            .for_each(|a| *a = C64::new(0.0, 0.0));
        spike.amplitudes[100] = C64::new(1.0, 0.0);
        let xs = sample_position(&spike, 1000, 3).unwrap();
        assert!(xs.iter().all(|&x| x == w.grid.x(100)));
    }

    #[test]
    fn csv_columns_and_round_trip() {
        let w = default_packet(0.0);
        let text = w.to_csv();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap(), vec!["x", "re", "im", "abs2"]);
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1024);
        let re: f64 = rows[512][1].parse().unwrap();
        assert_eq!(re, w.amplitudes[512].re);
        let s = fourier_decompose(&w).to_csv();
        assert!(s.starts_with("k,re,im,abs2\n"));
    }

    proptest! {
        #[test]
        fn evolution_preserves_norm(
            amps in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64),
            dt in -10.0f64..10.0,
        ) {
            let g = GridSpec::symmetric(8.0, 64).unwrap();
            let w = WaveGrid {
                grid: g,
                amplitudes: amps.into_iter().map(|(a, b)| C64::new(a, b)).collect(),
                hbar: 1.0,
                mass: 1.0,
                t: 0.0,
            };
            prop_assume!(w.norm_sqr() > 1e-6);
            let w = w.normalized().unwrap();
            let e = evolve_free(&w, dt);
            prop_assert!((e.norm_sqr() - 1.0).abs() < 1e-10);
            let s = fourier_decompose(&e);
            prop_assert!((s.norm_sqr() - e.norm_sqr()).abs() < 1e-8);
        }
    }
}
