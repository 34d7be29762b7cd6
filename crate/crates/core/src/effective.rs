//! Closed-form layer: effective Rabi frequency, driven-motion displacement,
//! effective spin rotation, displaced-frame Hamiltonian and lineshapes.

use num_complex::Complex;

use crate::dynamics::{check_time, ElectricDrive, EnvelopePiece, Frame, HamiltonianModel, PulseSequence, SpinAxis};
use crate::statespace::{FockSpace, SparseOperator};
use crate::{constants, Error, Real, Result};

/// Which gradient sideband drives the spin: `δ = +ω_e` or `δ = −ω_e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branch {
    #[default]
    Plus,
    Minus,
}

impl Branch {
    /// Branch selected by a signed gradient detuning.
    pub fn from_delta<T: Real>(delta: T) -> Self {
        if delta < T::zero() {
            Branch::Minus
        } else {
            Branch::Plus
        }
    }

    /// Equator angle of the rotation axis for electric phase `phi_e`.
    pub fn axis_angle<T: Real>(self, phi_e: T) -> T {
        match self {
            Branch::Plus => -phi_e,
            Branch::Minus => phi_e,
        }
    }
}

/// `Ω_g Ω_e ω_m / (ω_e² − ω_m²)`.
pub fn omega_eff<T: Real>(omega_g_rabi: T, omega_e_rabi: T, omega_m: T, omega_e: T) -> Result<T> {
    if omega_e == omega_m {
        return Err(Error::Singularity(format!("electric drive at {omega_e} rad/s is exactly resonant with the mode")));
    }
    Ok(omega_g_rabi * omega_e_rabi * omega_m / ((omega_e - omega_m) * (omega_e + omega_m)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRotation<T> {
    /// Signed, rad/s.
    pub omega_eff: T,
    pub axis_angle: T,
    pub branch: Branch,
}

impl<T: Real> EffectiveRotation<T> {
    pub fn new(omega_g_rabi: T, omega_e_rabi: T, omega_m: T, omega_e: T, phi_e: T, branch: Branch) -> Result<Self> {
        Ok(Self {
            omega_eff: omega_eff(omega_g_rabi, omega_e_rabi, omega_m, omega_e)?,
            axis_angle: branch.axis_angle(phi_e),
            branch,
        })
    }

    /// Duration of a π rotation, `π/|Ω_eff|`.
    pub fn pi_time(&self) -> T {
        T::PI() / self.omega_eff.abs()
    }

    pub fn unitary(&self, duration: T) -> SpinUnitary<T> {
        SpinUnitary::rotation(self.omega_eff * duration, self.axis_angle)
    }
}

/// `∫_a^b e^{iks} ds`, written to stay accurate for small `k(b − a)`.
pub(crate) fn phase_integral<T: Real>(k: T, a: T, b: T) -> Complex<T> {
    let len = b - a;
    let y = k * len;
    let start = Complex::new((k * a).cos(), (k * a).sin());
    let ratio = if y == T::zero() {
        Complex::new(T::one(), T::zero())
    } else {
        // (e^{iy} − 1)/(iy)
        let s = (y * T::c(0.5)).sin();
        Complex::new(y.sin() / y, T::c(2.0) * s * s / y)
    };
    start * ratio * len
}

/// `∫ env(s) e^{iks} ds` over the part of an envelope piece below `t`.
fn piece_integral<T: Real>(piece: &EnvelopePiece<T>, k: T, t: T) -> Complex<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let (from, to) = match *piece {
        EnvelopePiece::Flat { from, to }
        | EnvelopePiece::Rise { from, to, .. }
        | EnvelopePiece::Fall { from, to, .. } => (from, to.min(t)),
    };
    if !(to > from) {
        return zero;
    }
    match *piece {
        EnvelopePiece::Flat { .. } => phase_integral(k, from, to),
        EnvelopePiece::Rise { from: t0, ramp, .. } | EnvelopePiece::Fall { from: t0, ramp, .. } => {
            // sin² or cos² of π(s − t0)/(2τ) = ½ ∓ ¼(e^{iπ(s−t0)/τ} + e^{−iπ(s−t0)/τ})
            let sign = if matches!(piece, EnvelopePiece::Rise { .. }) { -T::one() } else { T::one() };
            let w = T::PI() / ramp;
            let up = Complex::new((w * t0).cos(), -(w * t0).sin()) * phase_integral(k + w, from, to);
            let down = Complex::new((w * t0).cos(), (w * t0).sin()) * phase_integral(k - w, from, to);
            phase_integral(k, from, to) * T::c(0.5) + (up + down) * (sign * T::c(0.25))
        }
    }
}

/// Coherent amplitude `α(t)` imparted by the electric drives, from the exact
/// integral `α(t) = −i ∫₀ᵗ f*(s) ds` of each drive's force over its envelope.
///
/// Valid at any detuning, including resonance.
pub fn displacement<T: Real>(electric: &[ElectricDrive<T>], omega_m: T, t: T) -> Complex<T> {
    let mut total = Complex::new(T::zero(), T::zero());
    for e in electric {
        let mut co = Complex::new(T::zero(), T::zero());
        let mut counter = Complex::new(T::zero(), T::zero());
        for piece in e.envelope.pieces() {
            co += piece_integral(&piece, omega_m - e.omega_e, t);
            counter += piece_integral(&piece, omega_m + e.omega_e, t);
        }
        let phase = Complex::new(e.phi_e.cos(), e.phi_e.sin());
        total += (phase * counter + phase.conj() * co) * e.omega_e_rabi * T::c(0.5);
    }
    total * Complex::new(T::zero(), -T::one())
}

/// Closed-form `α(t)` for a constant drive switched on at `t = 0`, including both
/// the `ω_e − ω_m` and `ω_e + ω_m` terms.
pub fn alpha_trajectory<T: Real>(t: T, omega_e_rabi: T, omega_e: T, phi_e: T, omega_m: T) -> Result<Complex<T>> {
    alpha_trajectory_terms(t, omega_e_rabi, omega_e, phi_e, omega_m, true)
}

/// As [`alpha_trajectory`]; `counter_rotating = false` drops the `ω_e + ω_m` term.
pub fn alpha_trajectory_terms<T: Real>(
    t: T,
    omega_e_rabi: T,
    omega_e: T,
    phi_e: T,
    omega_m: T,
    counter_rotating: bool,
) -> Result<Complex<T>> {
    if !(t >= T::zero()) {
        return Err(Error::Domain(format!("t = {t} s must be >= 0")));
    }
    if omega_e == omega_m {
        return Err(Error::Singularity("alpha_trajectory is undefined at exact resonance; use resonant_slope".into()));
    }
    let phase = Complex::new(phi_e.cos(), phi_e.sin());
    let mut sum = phase.conj() * phase_integral(omega_m - omega_e, T::zero(), t);
    if counter_rotating {
        sum += phase * phase_integral(omega_m + omega_e, T::zero(), t);
    }
    Ok(sum * Complex::new(T::zero(), -omega_e_rabi * T::c(0.5)))
}

/// Growth rate of `|α|` for a resonant drive, `qEr₀/(2ħ)`.
pub fn resonant_slope<T: Real>(e_field: T, space: &FockSpace<T>) -> T {
    space.charge() * e_field * space.r0() / (T::c(2.0) * constants::hbar::<T>())
}

/// A 2×2 unitary on the spin, rows/columns ordered `(↓, ↑)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinUnitary<T>(pub [[Complex<T>; 2]; 2]);

impl<T: Real> SpinUnitary<T> {
    pub fn identity() -> Self {
        let o = Complex::new(T::one(), T::zero());
        let z = Complex::new(T::zero(), T::zero());
        Self([[o, z], [z, o]])
    }

    /// `exp(−i(θ/2)(cos a σ_x + sin a σ_y))`.
    pub fn rotation(theta: T, axis_angle: T) -> Self {
        let half = theta * T::c(0.5);
        let c = Complex::new(half.cos(), T::zero());
        let s = half.sin();
        let e = Complex::new(axis_angle.cos(), axis_angle.sin());
        let mi_s = Complex::new(T::zero(), -s);
        Self([[c, mi_s * e], [mi_s * e.conj(), c]])
    }

    pub fn matrix(&self) -> &[[Complex<T>; 2]; 2] {
        &self.0
    }

    /// `self · rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Self) -> Self {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[Complex::new(T::zero(), T::zero()); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self(out)
    }

    pub fn apply(&self, v: [Complex<T>; 2]) -> [Complex<T>; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// Largest entry of `|U†U − 1|`.
    pub fn unitarity_error(&self) -> T {
        let m = &self.0;
        let mut worst = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                let mut v = m[0][i].conj() * m[0][j] + m[1][i].conj() * m[1][j];
                if i == j {
                    v -= Complex::new(T::one(), T::zero());
                }
                worst = worst.max(v.norm());
            }
        }
        worst
    }

    /// Rotation angle in `[0, 2π]`, after removing the global phase.
    pub fn rotation_angle(&self) -> T {
        let (u, _) = self.special();
        T::c(2.0) * u[0][0].re.max(-T::one()).min(T::one()).acos()
    }

    /// Equator angle of the rotation axis (meaningful for rotations about
    /// equatorial axes).
    pub fn axis_angle(&self) -> T {
        let (u, _) = self.special();
        // U₀₁ = −i sin(θ/2) e^{ia}
        let v = u[0][1] * Complex::new(T::zero(), T::one());
        v.im.atan2(v.re)
    }

    fn special(&self) -> ([[Complex<T>; 2]; 2], Complex<T>) {
        let m = &self.0;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let phase = det.sqrt();
        let inv = phase.inv();
        let mut u = *m;
        for row in u.iter_mut() {
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        // pick the representative with non-negative trace
        if (u[0][0] + u[1][1]).re < T::zero() {
            for row in u.iter_mut() {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        (u, phase)
    }
}

/// `exp(−i(Ω_eff·duration/2)(cos φ_e σ_x ∓ sin φ_e σ_y))`.
pub fn effective_unitary<T: Real>(phi_e: T, duration: T, omega_eff: T, branch: Branch) -> SpinUnitary<T> {
    SpinUnitary::rotation(omega_eff * duration, branch.axis_angle(phi_e))
}

/// Relative tolerance for treating `|δ|` as matching `ω_e`.
const BRANCH_MATCH: f64 = 1e-9;

/// Effective-model spin unitary of a whole sequence: each gradient window, in
/// time order, rotates under every electric drive whose frequency matches `|δ|`,
/// with the electric envelope taken at the window midpoint.
pub fn sequence_unitary<T: Real>(seq: &PulseSequence<T>, omega_m: T) -> Result<SpinUnitary<T>> {
    let mut windows: Vec<_> = seq.gradient.iter().collect();
    windows.sort_by(|a, b| a.t_on.partial_cmp(&b.t_on).unwrap());
    let mut total = SpinUnitary::identity();
    for g in windows {
        if g.spin_axis == SpinAxis::Z {
            continue;
        }
        let mid = (g.t_on + g.t_off) * T::c(0.5);
        let branch = Branch::from_delta(g.delta);
        let axis_offset = if g.spin_axis == SpinAxis::Y { T::FRAC_PI_2() } else { T::zero() };
        // H_eff = [[0, b], [b*, 0]]
        let mut b = Complex::new(T::zero(), T::zero());
        for e in &seq.electric {
            if (g.delta.abs() - e.omega_e).abs() > T::c(BRANCH_MATCH) * e.omega_e {
                continue;
            }
            let w = omega_eff(g.omega_g_rabi, e.omega_e_rabi * e.envelope.value(mid), omega_m, e.omega_e)?;
            let a = branch.axis_angle(e.phi_e) + axis_offset;
            b += Complex::new(a.cos(), a.sin()) * (w * T::c(0.5));
        }
        let r = b.norm();
        let step = if r == T::zero() {
            SpinUnitary::identity()
        } else {
            SpinUnitary::rotation(T::c(2.0) * r * g.duration(), b.im.atan2(b.re))
        };
        total = step.mul(&total);
    }
    Ok(total)
}

/// Displaced-frame Hamiltonian: the gradient term with `a → a + α(t)`, where
/// `α` is the drive-induced displacement. The electric term is absorbed by the
/// displacement and drops out apart from a global phase.
pub fn transformed_hamiltonian<T: Real>(
    t: T,
    seq: &PulseSequence<T>,
    space: &FockSpace<T>,
) -> Result<SparseOperator<T>> {
    check_time(t, seq)?;
    check_off_resonance(seq, space.omega_m())?;
    HamiltonianModel::new(seq, space, Frame::Displaced).operator_at(t)
}

pub(crate) fn check_off_resonance<T: Real>(seq: &PulseSequence<T>, omega_m: T) -> Result<()> {
    if let Some(e) = seq.electric.iter().find(|e| e.omega_e == omega_m) {
        return Err(Error::Singularity(format!(
            "electric drive at {} rad/s is exactly resonant with the mode",
            e.omega_e
        )));
    }
    Ok(())
}

/// Transfer probability of a detuned Rabi pulse.
pub fn rabi_lineshape<T: Real>(omega_eff: T, detuning: T, duration: T) -> T {
    let w2 = omega_eff * omega_eff;
    let gen2 = w2 + detuning * detuning;
    if w2 == T::zero() {
        return T::zero();
    }
    let s = (gen2.sqrt() * duration * T::c(0.5)).sin();
    w2 / gen2 * s * s
}

/// Motional modes contributing to the effective rotation, each with its
/// `Ω_g·Ω_e` coupling product.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResponse<T> {
    modes: Vec<(T, T)>,
}

impl<T: Real> ModeResponse<T> {
    pub fn new(modes: Vec<(T, T)>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Domain("mode response needs at least one mode".into()));
        }
        if modes.iter().any(|(w, _)| !(*w > T::zero())) {
            return Err(Error::Domain("mode frequencies must be > 0".into()));
        }
        if modes.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Domain("mode frequencies must be strictly increasing".into()));
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[(T, T)] {
        &self.modes
    }
}

/// `Σ_k P_k ω_k / (ω_e² − ω_k²)`.
pub fn two_mode_response<T: Real>(omega_e: T, response: &ModeResponse<T>) -> Result<T> {
    let mut sum = T::zero();
    for &(w, product) in &response.modes {
        if omega_e == w {
            return Err(Error::Singularity(format!("omega_e = {omega_e} rad/s is resonant with a mode")));
        }
        sum += product * w / ((omega_e - w) * (omega_e + w));
    }
    Ok(sum)
}
