//! Interaction-picture spin ⊗ motion dynamics.
//!
//! In the frame of `H₀ = ω₀σ_z/2 + ω_m a†a` (ħ = 1, rates in rad/s) a gradient
//! along `σ_x` detuned by `δ = ω_g − ω₀` and an electric drive give
//!
//! ```text
//! H_g(t) = (Ω_g/2)(σ₊e^{-iδt} + σ₋e^{iδt})(a e^{-iω_m t} + a† e^{iω_m t})
//! H_e(t) = Ω_e cos(ω_e t + φ_e) (a e^{-iω_m t} + a† e^{iω_m t})
//! ```
//!
//! each scaled by its envelope. The same machinery assembles the displaced-frame
//! Hamiltonian used by [`crate::effective::transformed_hamiltonian`].

use num_complex::Complex;
use rayon::prelude::*;

use crate::effective;
use crate::statespace::{spin_ladder, FockSpace, SparseOperator, Spin, SpinMotionState, SpinOp, ThermalDistribution};
use crate::{Error, Real, Result};

/// Largest allowed `dt · f_max` with `f_max` the fastest rate in the sequence (Hz).
pub const MAX_STEP_CYCLES: f64 = 0.02;
/// Norm drift that aborts a run.
pub const NORM_FAILURE_DRIFT: f64 = 1e-6;
/// Top-Fock population at or above which a run is flagged invalid.
pub const TRUNCATION_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeShape {
    Square,
    Sin2Ramp,
}

/// Amplitude envelope of a drive.
///
/// A square envelope is 1 on `[start, start + plateau)`. A `sin²` envelope rises as
/// `sin²(π t'/(2τ_r))` over `τ_r`, holds 1 for the plateau, and falls as the
/// mirror image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope<T> {
    pub shape: EnvelopeShape,
    pub ramp_duration: T,
    pub plateau_duration: T,
    pub start_time: T,
}

/// One piece of an envelope on `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EnvelopePiece<T> {
    Flat { from: T, to: T },
    Rise { from: T, to: T, ramp: T },
    Fall { from: T, to: T, ramp: T },
}

impl<T: Real> Envelope<T> {
    pub fn square(start_time: T, duration: T) -> Self {
        Self { shape: EnvelopeShape::Square, ramp_duration: T::zero(), plateau_duration: duration, start_time }
    }

    pub fn sin2(start_time: T, ramp_duration: T, plateau_duration: T) -> Self {
        Self { shape: EnvelopeShape::Sin2Ramp, ramp_duration, plateau_duration, start_time }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_duration >= T::zero()) || !(self.ramp_duration >= T::zero()) {
            return Err(Error::Domain("envelope durations must be >= 0".into()));
        }
        if self.shape == EnvelopeShape::Sin2Ramp && !(self.ramp_duration > T::zero()) {
            return Err(Error::Domain("sin2 envelope needs a positive ramp duration".into()));
        }
        Ok(())
    }

    /// Ramp length actually used by the shape (0 for square).
    pub fn effective_ramp(&self) -> T {
        match self.shape {
            EnvelopeShape::Square => T::zero(),
            EnvelopeShape::Sin2Ramp => self.ramp_duration,
        }
    }

    /// Time at which the rising edge has completed.
    pub fn ramp_end(&self) -> T {
        self.start_time + self.effective_ramp()
    }

    pub fn end(&self) -> T {
        self.start_time + T::c(2.0) * self.effective_ramp() + self.plateau_duration
    }

    pub fn value(&self, t: T) -> T {
        let rel = t - self.start_time;
        if rel < T::zero() || t >= self.end() {
            return T::zero();
        }
        match self.shape {
            EnvelopeShape::Square => T::one(),
            EnvelopeShape::Sin2Ramp => {
                let tau = self.ramp_duration;
                let fall_start = tau + self.plateau_duration;
                let half_pi = T::FRAC_PI_2();
                if rel < tau {
                    (half_pi * rel / tau).sin().powi(2)
                } else if rel < fall_start {
                    T::one()
                } else {
                    (half_pi * (rel - fall_start) / tau).cos().powi(2)
                }
            }
        }
    }

    /// Times where the envelope or its derivative changes form.
    pub fn breakpoints(&self) -> Vec<T> {
        match self.shape {
            EnvelopeShape::Square => vec![self.start_time, self.end()],
            EnvelopeShape::Sin2Ramp => {
                vec![self.start_time, self.ramp_end(), self.ramp_end() + self.plateau_duration, self.end()]
            }
        }
    }

    pub(crate) fn pieces(&self) -> Vec<EnvelopePiece<T>> {
        match self.shape {
            EnvelopeShape::Square => vec![EnvelopePiece::Flat { from: self.start_time, to: self.end() }],
            EnvelopeShape::Sin2Ramp => {
                let b = self.breakpoints();
                let ramp = self.ramp_duration;
                vec![
                    EnvelopePiece::Rise { from: b[0], to: b[1], ramp },
                    EnvelopePiece::Flat { from: b[1], to: b[2] },
                    EnvelopePiece::Fall { from: b[2], to: b[3], ramp },
                ]
            }
        }
    }
}

/// Spin operator the gradient couples through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinAxis {
    X,
    Y,
    /// `Ω_g σ_z cos(δ t)(a e^{-iω_m t} + h.c.)`; for this axis `delta` is the
    /// gradient frequency itself since no qubit transition is involved.
    Z,
}

/// Square-windowed spin-dependent gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDrive<T> {
    pub omega_g_rabi: T,
    /// `ω_g − ω₀`, rad/s. `+ω_e` selects the plus branch.
    pub delta: T,
    pub spin_axis: SpinAxis,
    pub t_on: T,
    pub t_off: T,
}

impl<T: Real> GradientDrive<T> {
    pub fn new(omega_g_rabi: T, delta: T, t_on: T, t_off: T) -> Result<Self> {
        let g = Self { omega_g_rabi, delta, spin_axis: SpinAxis::X, t_on, t_off };
        g.validate()?;
        Ok(g)
    }

    pub fn with_axis(mut self, axis: SpinAxis) -> Self {
        self.spin_axis = axis;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_g_rabi >= T::zero()) {
            return Err(Error::Domain("omega_g_rabi must be >= 0".into()));
        }
        if !(self.t_on < self.t_off) {
            return Err(Error::Domain("gradient window needs t_on < t_off".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn is_on(&self, t: T) -> bool {
        t >= self.t_on && t < self.t_off
    }

    pub fn duration(&self) -> T {
        self.t_off - self.t_on
    }
}

/// Oscillating electric field along the mode, `Ω_e = qEr₀/ħ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectricDrive<T> {
    pub omega_e_rabi: T,
    pub omega_e: T,
    pub phi_e: T,
    pub envelope: Envelope<T>,
}

impl<T: Real> ElectricDrive<T> {
    pub fn new(omega_e_rabi: T, omega_e: T, phi_e: T, envelope: Envelope<T>) -> Result<Self> {
        let d = Self { omega_e_rabi, omega_e, phi_e, envelope };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_e_rabi >= T::zero()) {
            return Err(Error::Domain("omega_e_rabi must be >= 0".into()));
        }
        if !(self.omega_e > T::zero()) {
            return Err(Error::Domain("omega_e must be > 0".into()));
        }
        self.envelope.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence<T> {
    pub electric: Vec<ElectricDrive<T>>,
    pub gradient: Vec<GradientDrive<T>>,
    pub total_duration: T,
    /// Skips the check that gradients start after the first electric ramp.
    pub allow_early_gradient: bool,
}

impl<T: Real> PulseSequence<T> {
    pub fn new(electric: Vec<ElectricDrive<T>>, gradient: Vec<GradientDrive<T>>, total_duration: T) -> Result<Self> {
        let seq = Self { electric, gradient, total_duration, allow_early_gradient: false };
        seq.validate()?;
        Ok(seq)
    }

    pub fn allowing_early_gradient(mut self) -> Result<Self> {
        self.allow_early_gradient = true;
        self.validate()?;
        Ok(self)
    }

    pub fn empty(total_duration: T) -> Self {
        Self { electric: Vec::new(), gradient: Vec::new(), total_duration, allow_early_gradient: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_duration >= T::zero()) {
            return Err(Error::Domain("total_duration must be >= 0".into()));
        }
        for e in &self.electric {
            e.validate()?;
        }
        for g in &self.gradient {
            g.validate()?;
        }
        if !self.allow_early_gradient {
            if let Some(first) =
                self.electric.iter().min_by(|a, b| a.envelope.start_time.partial_cmp(&b.envelope.start_time).unwrap())
            {
                let ready = first.envelope.ramp_end();
                if let Some(g) = self.gradient.iter().find(|g| g.t_on < ready) {
                    return Err(Error::Domain(format!(
                        "gradient window starting at {} s begins before the electric ramp ends at {} s",
                        g.t_on, ready
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fastest rate entering the interaction-picture Hamiltonian, in Hz.
    pub fn max_frequency(&self, omega_m: T) -> T {
        let mut w = omega_m;
        for e in &self.electric {
            w = w.max(e.omega_e).max(e.omega_e + omega_m);
        }
        for g in &self.gradient {
            w = w.max(g.delta.abs()).max(g.delta.abs() + omega_m);
        }
        w / T::two_pi()
    }

    fn breakpoints(&self) -> Vec<T> {
        let mut pts = Vec::new();
        for e in &self.electric {
            pts.extend(e.envelope.breakpoints());
        }
        for g in &self.gradient {
            pts.push(g.t_on);
            pts.push(g.t_off);
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegratorMethod {
    Rk4Fixed,
    MidpointExponential,
    /// Fourth-order commutator-free Magnus scheme (two exponentials per step).
    #[default]
    Magnus4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    pub dt: T,
    pub method: IntegratorMethod,
    pub norm_check_every: usize,
}

impl<T: Real> IntegratorConfig<T> {
    pub fn new(dt: T) -> Self {
        Self { dt, method: IntegratorMethod::default(), norm_check_every: 1000 }
    }

    pub fn with_method(mut self, method: IntegratorMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate_for(&self, seq: &PulseSequence<T>, omega_m: T) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::Domain("dt must be > 0".into()));
        }
        if self.norm_check_every == 0 {
            return Err(Error::Domain("norm_check_every must be >= 1".into()));
        }
        let cycles = self.dt * seq.max_frequency(omega_m);
        if cycles > T::c(MAX_STEP_CYCLES) {
            return Err(Error::Domain(format!(
                "dt = {} s resolves only {} cycles per step of the fastest rate (limit {MAX_STEP_CYCLES})",
                self.dt, cycles
            )));
        }
        Ok(())
    }
}

/// Which Hamiltonian a [`HamiltonianModel`] assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Frame {
    /// `H_g + H_e`.
    Full,
    /// `D†(α) H_g D(α)`: gradient terms with `a → a + α(t)`, no electric term.
    Displaced,
}

#[derive(Debug, Clone, Copy)]
enum Term {
    SpA,
    SpAd,
    SmA,
    SmAd,
    SzA,
    SzAd,
    A,
    Ad,
    Sp,
    Sm,
    Sz,
}

const FULL_TERMS: [Term; 8] = [Term::SpA, Term::SpAd, Term::SmA, Term::SmAd, Term::SzA, Term::SzAd, Term::A, Term::Ad];
const DISPLACED_TERMS: [Term; 9] =
    [Term::SpA, Term::SpAd, Term::SmA, Term::SmAd, Term::SzA, Term::SzAd, Term::Sp, Term::Sm, Term::Sz];

fn term_operator<T: Real>(n_max: usize, term: Term) -> SparseOperator<T> {
    let spin_only = |op: SpinOp| {
        let m = crate::statespace::spin_matrix::<T>(op);
        let mut trip = Vec::new();
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if v.norm() != T::zero() {
                    for n in 0..n_max {
                        trip.push((r * n_max + n, c * n_max + n, *v));
                    }
                }
            }
        }
        SparseOperator::from_triplets(2 * n_max, trip, false).expect("valid spin operator")
    };
    match term {
        Term::SpA => spin_ladder(n_max, SpinOp::Plus, false),
        Term::SpAd => spin_ladder(n_max, SpinOp::Plus, true),
        Term::SmA => spin_ladder(n_max, SpinOp::Minus, false),
        Term::SmAd => spin_ladder(n_max, SpinOp::Minus, true),
        Term::SzA => spin_ladder(n_max, SpinOp::Z, false),
        Term::SzAd => spin_ladder(n_max, SpinOp::Z, true),
        Term::A => spin_ladder(n_max, SpinOp::Identity, false),
        Term::Ad => spin_ladder(n_max, SpinOp::Identity, true),
        Term::Sp => spin_only(SpinOp::Plus),
        Term::Sm => spin_only(SpinOp::Minus),
        Term::Sz => spin_only(SpinOp::Z),
    }
}

/// Time-dependent Hamiltonian `Σ_j c_j(t) O_j` on a fixed sparsity pattern.
pub(crate) struct HamiltonianModel<'a, T> {
    seq: &'a PulseSequence<T>,
    omega_m: T,
    frame: Frame,
    terms: Vec<Term>,
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    /// `term_values[j][k]`: entry `k` of the pattern for term `j`.
    term_values: Vec<Vec<T>>,
}

impl<'a, T: Real> HamiltonianModel<'a, T> {
    pub(crate) fn new(seq: &'a PulseSequence<T>, space: &FockSpace<T>, frame: Frame) -> Self {
        let n_max = space.n_max();
        let dim = space.dim();
        let terms: Vec<Term> = match frame {
            Frame::Full => FULL_TERMS.to_vec(),
            Frame::Displaced => DISPLACED_TERMS.to_vec(),
        };
        let ops: Vec<SparseOperator<T>> = terms.iter().map(|t| term_operator(n_max, *t)).collect();

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for op in &ops {
            for (r, c, _) in op.entries() {
                rows[r].push(c);
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let term_values = ops
            .iter()
            .map(|op| {
                let mut v = vec![T::zero(); cols.len()];
                for (r, c, val) in op.entries() {
                    let slice = &cols[row_ptr[r]..row_ptr[r + 1]];
                    let k = row_ptr[r] + slice.binary_search(&c).expect("column in pattern");
                    // every ladder/Pauli entry used here is real
                    v[k] = val.re;
                }
                v
            })
            .collect();
        Self { seq, omega_m: space.omega_m(), frame, terms, dim, row_ptr, cols, term_values }
    }

    pub(crate) fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Coefficients `c_j(t)` in `self.terms` order.
    fn coefficients(&self, t: T) -> Vec<Complex<T>> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut sp_a = zero;
        let mut sp_ad = zero;
        let mut sz_a = zero;
        let mut a = zero;
        let mut sp = zero;
        let mut sz = zero;
        let wm = self.omega_m;
        let rot = |phase: T| Complex::new(phase.cos(), phase.sin());
        let half = T::c(0.5);

        let beta = match self.frame {
            Frame::Full => T::zero(),
            Frame::Displaced => {
                let alpha = effective::displacement(&self.seq.electric, wm, t);
                // α e^{-iω_m t} + c.c.
                T::c(2.0) * (alpha * rot(-wm * t)).re
            }
        };

        for g in &self.seq.gradient {
            if !g.is_on(t) {
                continue;
            }
            match g.spin_axis {
                SpinAxis::X | SpinAxis::Y => {
                    let h = g.omega_g_rabi * half;
                    let u = match g.spin_axis {
                        SpinAxis::X => Complex::new(T::one(), T::zero()),
                        _ => Complex::new(T::zero(), -T::one()),
                    };
                    let d = g.delta;
                    sp_a += u * rot(-(d + wm) * t) * h;
                    sp_ad += u * rot(-(d - wm) * t) * h;
                    sp += u * rot(-d * t) * (h * beta);
                }
                SpinAxis::Z => {
                    let amp = g.omega_g_rabi * (g.delta * t).cos();
                    sz_a += rot(-wm * t) * amp;
                    sz += Complex::new(amp * beta, T::zero());
                }
            }
        }
        if self.frame == Frame::Full {
            for e in &self.seq.electric {
                let env = e.envelope.value(t);
                if env == T::zero() {
                    continue;
                }
                let amp = e.omega_e_rabi * env * (e.omega_e * t + e.phi_e).cos();
                a += rot(-wm * t) * amp;
            }
        }
        // adjoint pairs carry exactly conjugate coefficients
        self.terms
            .iter()
            .map(|term| match term {
                Term::SpA => sp_a,
                Term::SpAd => sp_ad,
                Term::SmA => sp_ad.conj(),
                Term::SmAd => sp_a.conj(),
                Term::SzA => sz_a,
                Term::SzAd => sz_a.conj(),
                Term::A => a,
                Term::Ad => a.conj(),
                Term::Sp => sp,
                Term::Sm => sp.conj(),
                Term::Sz => sz,
            })
            .collect()
    }

    /// Values of `Σ_j w_j H(t_j)` on the pattern.
    fn assemble_into(&self, times_weights: &[(T, T)], out: &mut [Complex<T>]) {
        for v in out.iter_mut() {
            *v = Complex::new(T::zero(), T::zero());
        }
        for &(t, w) in times_weights {
            let coeffs = self.coefficients(t);
            for (c, vals) in coeffs.iter().zip(&self.term_values) {
                if c.re == T::zero() && c.im == T::zero() {
                    continue;
                }
                let cw = *c * w;
                for (o, v) in out.iter_mut().zip(vals) {
                    if *v != T::zero() {
                        *o += cw * *v;
                    }
                }
            }
        }
    }

    pub(crate) fn operator_at(&self, t: T) -> Result<SparseOperator<T>> {
        let mut vals = vec![Complex::new(T::zero(), T::zero()); self.nnz()];
        self.assemble_into(&[(t, T::one())], &mut vals);
        let triplets = (0..self.dim).flat_map(|r| {
            let vals = &vals;
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], vals[k]))
        });
        SparseOperator::from_triplets(self.dim, triplets, true)
    }

    fn matvec(&self, vals: &[Complex<T>], x: &[Complex<T>], y: &mut [Complex<T>]) {
        for r in 0..self.dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    fn norm_one(&self, vals: &[Complex<T>]) -> T {
        let mut col = vec![T::zero(); self.dim];
        for (k, c) in self.cols.iter().enumerate() {
            col[*c] += vals[k].norm();
        }
        col.into_iter().fold(T::zero(), T::max)
    }
}

/// Scratch buffers for one propagation.
struct Workspace<T> {
    vals: Vec<Complex<T>>,
    term: Vec<Complex<T>>,
    next: Vec<Complex<T>>,
    acc: Vec<Complex<T>>,
    k: [Vec<Complex<T>>; 4],
    tmp: Vec<Complex<T>>,
}

impl<T: Real> Workspace<T> {
    fn new(dim: usize, nnz: usize) -> Self {
        let z = Complex::new(T::zero(), T::zero());
        Self {
            vals: vec![z; nnz],
            term: vec![z; dim],
            next: vec![z; dim],
            acc: vec![z; dim],
            k: [vec![z; dim], vec![z; dim], vec![z; dim], vec![z; dim]],
            tmp: vec![z; dim],
        }
    }
}

fn vec_norm<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt()
}

/// `ψ ← exp(-i h H) ψ` with `H` given by `ws.vals`, via a substepped Taylor series.
fn expm_action<T: Real>(model: &HamiltonianModel<'_, T>, h: T, psi: &mut [Complex<T>], ws: &mut Workspace<T>) {
    let bound = model.norm_one(&ws.vals) * h.abs();
    if bound == T::zero() {
        return;
    }
    let substeps = bound.ceil().to_usize().unwrap_or(1).max(1);
    let tau = h / T::from_usize_lossy(substeps);
    let minus_i_tau = Complex::new(T::zero(), -tau);
    let tol = T::epsilon() * T::c(0.5);
    for _ in 0..substeps {
        ws.acc.copy_from_slice(psi);
        ws.term.copy_from_slice(psi);
        let scale = vec_norm(psi);
        for k in 1..=60 {
            model.matvec(&ws.vals, &ws.term, &mut ws.next);
            let f = minus_i_tau / T::from_usize_lossy(k);
            let mut norm = T::zero();
            for (t, n) in ws.term.iter_mut().zip(&ws.next) {
                *t = *n * f;
                norm += t.norm_sqr();
            }
            for (a, t) in ws.acc.iter_mut().zip(&ws.term) {
                *a += *t;
            }
            if norm.sqrt() <= tol * scale {
                break;
            }
        }
        psi.copy_from_slice(&ws.acc);
    }
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn step<T: Real>(
    model: &HamiltonianModel<'_, T>,
    method: IntegratorMethod,
    t: T,
    h: T,
    psi: &mut [Complex<T>],
    ws: &mut Workspace<T>,
) {
    match method {
        IntegratorMethod::MidpointExponential => {
            let mut vals = std::mem::take(&mut ws.vals);
            model.assemble_into(&[(t + h * T::c(0.5), T::one())], &mut vals);
            ws.vals = vals;
            expm_action(model, h, psi, ws);
        }
        IntegratorMethod::Magnus4 => {
            let t1 = t + h * T::c(0.5 - SQRT3 / 6.0);
            let t2 = t + h * T::c(0.5 + SQRT3 / 6.0);
            let a1 = T::c((3.0 - 2.0 * SQRT3) / 12.0);
            let a2 = T::c((3.0 + 2.0 * SQRT3) / 12.0);
            let mut vals = std::mem::take(&mut ws.vals);
            // the first factor weights the earlier node
            model.assemble_into(&[(t1, a2), (t2, a1)], &mut vals);
            ws.vals = vals;
            expm_action(model, h, psi, ws);
            let mut vals = std::mem::take(&mut ws.vals);
            model.assemble_into(&[(t1, a1), (t2, a2)], &mut vals);
            ws.vals = vals;
            expm_action(model, h, psi, ws);
        }
        IntegratorMethod::Rk4Fixed => {
            let minus_i = Complex::new(T::zero(), -T::one());
            let half = h * T::c(0.5);
            let nodes = [(t, T::zero()), (t + half, half), (t + half, half), (t + h, h)];
            let mut vals = std::mem::take(&mut ws.vals);
            for (stage, (ts, offset)) in nodes.iter().enumerate() {
                // tmp = ψ + offset · k_{stage-1}
                if stage == 0 {
                    ws.tmp.copy_from_slice(psi);
                } else {
                    let prev = &ws.k[stage - 1];
                    for ((tmp, p), k) in ws.tmp.iter_mut().zip(psi.iter()).zip(prev) {
                        *tmp = *p + *k * *offset;
                    }
                }
                model.assemble_into(&[(*ts, T::one())], &mut vals);
                model.matvec(&vals, &ws.tmp, &mut ws.next);
                for (k, n) in ws.k[stage].iter_mut().zip(&ws.next) {
                    *k = *n * minus_i;
                }
            }
            ws.vals = vals;
            let sixth = h / T::c(6.0);
            for (i, p) in psi.iter_mut().enumerate() {
                *p += (ws.k[0][i] + ws.k[1][i] * T::c(2.0) + ws.k[2][i] * T::c(2.0) + ws.k[3][i]) * sixth;
            }
        }
    }
}

/// Full interaction-picture Hamiltonian `H_g(t) + H_e(t)` (rad/s).
pub fn hamiltonian_at<T: Real>(t: T, seq: &PulseSequence<T>, space: &FockSpace<T>) -> Result<SparseOperator<T>> {
    check_time(t, seq)?;
    HamiltonianModel::new(seq, space, Frame::Full).operator_at(t)
}

pub(crate) fn check_time<T: Real>(t: T, seq: &PulseSequence<T>) -> Result<()> {
    if !(t >= T::zero() && t <= seq.total_duration) {
        return Err(Error::Domain(format!("t = {t} s outside sequence [0, {}] s", seq.total_duration)));
    }
    Ok(())
}

/// Output of [`evolve`].
#[derive(Debug, Clone)]
pub struct Evolution<T> {
    /// `(time, state)` for every requested sample time, in order.
    pub samples: Vec<(T, SpinMotionState<T>)>,
    pub final_state: SpinMotionState<T>,
    /// Largest top-Fock population seen at the samples and the final time.
    pub max_top_population: T,
    /// False when the top-Fock population reached [`TRUNCATION_LIMIT`].
    pub valid: bool,
    pub steps: usize,
    pub final_norm_drift: T,
}

impl<T: Real> Evolution<T> {
    pub fn ensure_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            let (time, population) = self
                .samples
                .iter()
                .map(|(t, s)| (*t, s.top_fock_population()))
                .chain(std::iter::once((T::nan(), self.final_state.top_fock_population())))
                .fold((T::nan(), T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            Err(Error::Truncation {
                time: time.to_f64().unwrap_or(f64::NAN),
                population: population.to_f64().unwrap_or(f64::NAN),
            })
        }
    }
}

/// Integrates the Schrödinger equation under [`hamiltonian_at`] from `t = 0` to
/// `seq.total_duration`, recording the state at each of `sample_times`.
///
/// Integration is split at every envelope/window edge and sample time, with
/// equal steps no longer than `cfg.dt` inside each segment.
pub fn evolve<T: Real>(
    initial: &SpinMotionState<T>,
    seq: &PulseSequence<T>,
    space: &FockSpace<T>,
    cfg: &IntegratorConfig<T>,
    sample_times: &[T],
) -> Result<Evolution<T>> {
    run(initial, seq, space, cfg, sample_times, Frame::Full)
}

/// As [`evolve`], but under the displaced-frame Hamiltonian of
/// [`effective::transformed_hamiltonian`]. The lab-frame state is recovered as
/// `D(α(t))ψ` (up to a global phase) with `α` from [`effective::displacement`].
///
/// Large drive-induced displacements never enter the Fock basis here, so this
/// needs far fewer Fock states than [`evolve`] for strongly driven motion.
pub fn evolve_transformed<T: Real>(
    initial: &SpinMotionState<T>,
    seq: &PulseSequence<T>,
    space: &FockSpace<T>,
    cfg: &IntegratorConfig<T>,
    sample_times: &[T],
) -> Result<Evolution<T>> {
    effective::check_off_resonance(seq, space.omega_m())?;
    run(initial, seq, space, cfg, sample_times, Frame::Displaced)
}

pub(crate) fn run<T: Real>(
    initial: &SpinMotionState<T>,
    seq: &PulseSequence<T>,
    space: &FockSpace<T>,
    cfg: &IntegratorConfig<T>,
    sample_times: &[T],
    frame: Frame,
) -> Result<Evolution<T>> {
    seq.validate()?;
    cfg.validate_for(seq, space.omega_m())?;
    if initial.dim() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), found: initial.dim() });
    }
    let norm0 = initial.norm();
    if (norm0 - T::one()).abs() > T::c(1e-9) {
        return Err(Error::Domain(format!("initial state norm {norm0} is not 1")));
    }
    for w in sample_times.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::Domain("sample times must be non-decreasing".into()));
        }
    }
    for &t in sample_times {
        check_time(t, seq)?;
    }

    let total = seq.total_duration;
    let mut cuts: Vec<T> = seq
        .breakpoints()
        .into_iter()
        .chain(sample_times.iter().copied())
        .filter(|t| *t > T::zero() && *t < total)
        .collect();
    cuts.push(total);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let model = HamiltonianModel::new(seq, space, frame);
    let mut ws = Workspace::new(space.dim(), model.nnz());
    let mut psi: Vec<Complex<T>> = initial.amplitudes().to_vec();
    let n_max = space.n_max();

    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    let record = |t: T, psi: &[Complex<T>], samples: &mut Vec<(T, SpinMotionState<T>)>, next: &mut usize| {
        while *next < sample_times.len() && sample_times[*next] <= t {
            samples.push((
                sample_times[*next],
                SpinMotionState::from_amplitudes(n_max, psi.to_vec()).expect("dimension checked"),
            ));
            *next += 1;
        }
    };
    record(T::zero(), &psi, &mut samples, &mut next_sample);

    let mut t = T::zero();
    let mut steps = 0usize;
    let failure = T::c(NORM_FAILURE_DRIFT);
    if total > T::zero() {
        for &end in &cuts {
            let len = end - t;
            if len <= T::zero() {
                continue;
            }
            let n = (len / cfg.dt).ceil().to_usize().unwrap_or(1).max(1);
            let h = len / T::from_usize_lossy(n);
            let seg_start = t;
            for i in 0..n {
                let ti = seg_start + h * T::from_usize_lossy(i);
                step(&model, cfg.method, ti, h, &mut psi, &mut ws);
                steps += 1;
                if steps.is_multiple_of(cfg.norm_check_every) {
                    let drift = (vec_norm(&psi) - T::one()).abs();
                    if !(drift <= failure) {
                        return Err(Error::Integrator {
                            time: (ti + h).to_f64().unwrap_or(f64::NAN),
                            reason: format!("norm drift {drift} exceeds {NORM_FAILURE_DRIFT}"),
                        });
                    }
                }
            }
            t = end;
            record(t, &psi, &mut samples, &mut next_sample);
        }
    }

    let final_norm_drift = (vec_norm(&psi) - T::one()).abs();
    if !(final_norm_drift <= failure) {
        return Err(Error::Integrator {
            time: total.to_f64().unwrap_or(f64::NAN),
            reason: format!("final norm drift {final_norm_drift} exceeds {NORM_FAILURE_DRIFT}"),
        });
    }
    let final_state = SpinMotionState::from_amplitudes(n_max, psi)?;
    let max_top_population =
        samples.iter().map(|(_, s)| s.top_fock_population()).fold(final_state.top_fock_population(), T::max);
    Ok(Evolution {
        samples,
        final_state,
        valid: max_top_population < T::c(TRUNCATION_LIMIT),
        max_top_population,
        steps,
        final_norm_drift,
    })
}

/// Per-Fock-branch outcome of a thermal average.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBranch<T> {
    pub n: usize,
    pub weight: T,
    /// Probability that the spin left `|↑⟩`.
    pub p_flip: T,
    /// `1 − |⟨ψ_target|ψ⟩|²` against the effective-model target.
    pub overlap_error: T,
    pub max_top_population: T,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFlipReport<T> {
    /// `1 − Σ p̃_n P(flip | n)` with weights renormalized over the retained branches.
    pub error_population: T,
    /// Weighted `1 − |⟨ψ_target|ψ⟩|²`.
    pub error_overlap: T,
    /// Probability mass dropped by the thermal cut before renormalization.
    pub renormalization: T,
    pub max_top_population: T,
    pub valid: bool,
    pub branches: Vec<FockBranch<T>>,
}

impl<T: Real> ThermalFlipReport<T> {
    pub fn ensure_valid(&self) -> Result<()> {
        if self.valid {
            return Ok(());
        }
        let worst = self.branches.iter().filter(|b| !b.valid).fold(T::zero(), |m, b| m.max(b.max_top_population));
        Err(Error::Truncation { time: f64::NAN, population: worst.to_f64().unwrap_or(f64::NAN) })
    }
}

/// Outcome of propagating one initial Fock state, as fed to [`thermal_average`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchOutcome<T> {
    pub p_flip: T,
    pub overlap_error: T,
    pub max_top_population: T,
    pub valid: bool,
}

/// Incoherent weighted average over Fock branches `n = 0..=n_cut`.
///
/// Branches run in parallel and are merged in index order.
pub fn thermal_average<T, F>(dist: &ThermalDistribution<T>, propagate: F) -> Result<ThermalFlipReport<T>>
where
    T: Real,
    F: Fn(usize) -> Result<BranchOutcome<T>> + Sync,
{
    let retained: Vec<(usize, T)> =
        dist.weights().iter().copied().enumerate().filter(|(_, w)| *w > T::zero()).collect();
    let outcomes: Vec<Result<BranchOutcome<T>>> = retained.par_iter().map(|(n, _)| propagate(*n)).collect();

    let total_weight: T = retained.iter().map(|(_, w)| *w).sum();
    let mut branches = Vec::with_capacity(retained.len());
    let mut flip = T::zero();
    let mut overlap = T::zero();
    for ((n, w), outcome) in retained.iter().zip(outcomes) {
        let o = outcome?;
        flip += *w * o.p_flip;
        overlap += *w * o.overlap_error;
        branches.push(FockBranch {
            n: *n,
            weight: *w,
            p_flip: o.p_flip,
            overlap_error: o.overlap_error,
            max_top_population: o.max_top_population,
            valid: o.valid,
        });
    }
    let valid = branches.iter().all(|b| b.valid);
    Ok(ThermalFlipReport {
        error_population: T::one() - flip / total_weight,
        error_overlap: overlap / total_weight,
        renormalization: T::one() - total_weight,
        max_top_population: branches.iter().fold(T::zero(), |m, b| m.max(b.max_top_population)),
        valid,
        branches,
    })
}

/// Thermal spin-flip error: each branch starts in `|↑⟩ ⊗ |n⟩` and is propagated
/// under the full Hamiltonian.
pub fn thermal_spin_flip_error<T: Real>(
    seq: &PulseSequence<T>,
    dist: &ThermalDistribution<T>,
    space: &FockSpace<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<ThermalFlipReport<T>> {
    if !(dist.tail_mass() < T::c(1e-6)) {
        return Err(Error::Domain(format!("thermal tail mass {} must be below 1e-6", dist.tail_mass())));
    }
    dist.check_fits(space)?;
    seq.validate()?;
    cfg.validate_for(seq, space.omega_m())?;
    let spin_target = effective::sequence_unitary(seq, space.omega_m())?
        .apply([Complex::new(T::zero(), T::zero()), Complex::new(T::one(), T::zero())]);
    let alpha_end = effective::displacement(&seq.electric, space.omega_m(), seq.total_duration);

    thermal_average(dist, |n| {
        let initial = SpinMotionState::basis(space.n_max(), Spin::Up, n)?;
        let ev = evolve(&initial, seq, space, cfg, &[])?;
        let p_flip = ev.final_state.spin_population(Spin::Down);

        let mut fock = vec![Complex::new(T::zero(), T::zero()); space.n_max()];
        fock[n] = Complex::new(T::one(), T::zero());
        let motion = displace_motion(&fock, alpha_end);
        let target = SpinMotionState::product(spin_target, &motion)?;
        let overlap = target.inner(&ev.final_state)?.norm_sqr();
        Ok(BranchOutcome {
            p_flip,
            overlap_error: T::one() - overlap,
            max_top_population: ev.max_top_population,
            valid: ev.valid,
        })
    })
}

/// `D(α)` applied to a motional vector on the truncated space.
pub fn displace_motion<T: Real>(motion: &[Complex<T>], alpha: Complex<T>) -> Vec<Complex<T>> {
    let n_max = motion.len();
    // D(α) = exp(-i G) with hermitian G = i(α a† − α* a)
    let ladder: Vec<T> = (0..n_max).map(|n| T::from_usize_lossy(n).sqrt()).collect();
    let i = Complex::new(T::zero(), T::one());
    let apply_g = |x: &[Complex<T>], y: &mut [Complex<T>]| {
        for n in 0..n_max {
            let mut acc = Complex::new(T::zero(), T::zero());
            if n > 0 {
                acc += alpha * ladder[n] * x[n - 1];
            }
            if n + 1 < n_max {
                acc -= alpha.conj() * ladder[n + 1] * x[n + 1];
            }
            y[n] = i * acc;
        }
    };
    let bound = T::c(2.0) * alpha.norm() * T::from_usize_lossy(n_max).sqrt();
    let substeps = bound.ceil().to_usize().unwrap_or(1).max(1);
    let frac = T::one() / T::from_usize_lossy(substeps);
    let mut psi = motion.to_vec();
    let mut term = vec![Complex::new(T::zero(), T::zero()); n_max];
    let mut next = term.clone();
    for _ in 0..substeps {
        let mut acc = psi.clone();
        term.copy_from_slice(&psi);
        for k in 1..=80 {
            apply_g(&term, &mut next);
            let f = Complex::new(T::zero(), -frac) / T::from_usize_lossy(k);
            let mut norm = T::zero();
            for (t, n) in term.iter_mut().zip(&next) {
                *t = *n * f;
                norm += t.norm_sqr();
            }
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += *t;
            }
            if norm.sqrt() <= T::epsilon() {
                break;
            }
        }
        psi = acc;
    }
    psi
}

/// `D(α) ⊗ 1_spin` applied to a composite state.
pub fn displace_state<T: Real>(state: &SpinMotionState<T>, alpha: Complex<T>) -> SpinMotionState<T> {
    let mut amps = displace_motion(state.block(Spin::Down), alpha);
    amps.extend(displace_motion(state.block(Spin::Up), alpha));
    SpinMotionState::from_amplitudes(state.n_max(), amps).expect("dimension preserved")
}

/// Residual coherent amplitude `⟨a⟩` and excess occupation `⟨n⟩ − |⟨a⟩|²`.
pub fn residual_excitation<T: Real>(state: &SpinMotionState<T>) -> (Complex<T>, T) {
    let n_max = state.n_max();
    let mut a = Complex::new(T::zero(), T::zero());
    let mut n_mean = T::zero();
    for spin in [Spin::Down, Spin::Up] {
        let b = state.block(spin);
        for n in 1..n_max {
            a += b[n - 1].conj() * b[n] * T::from_usize_lossy(n).sqrt();
        }
        for (n, c) in b.iter().enumerate() {
            n_mean += T::from_usize_lossy(n) * c.norm_sqr();
        }
    }
    (a, n_mean - a.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn space(n: usize, f_m: f64) -> FockSpace<f64> {
        FockSpace::for_ion(n, TAU * f_m, 40.0).unwrap()
    }

    #[test]
    fn sin2_envelope_is_smooth_at_junctions() {
        let env = Envelope::<f64>::sin2(1.0, 2.0, 3.0);
        assert_eq!(env.value(0.5), 0.0);
        assert_eq!(env.value(1.0), 0.0);
        assert!((env.value(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(env.value(4.0), 1.0);
        assert!((env.value(7.0) - 0.5).abs() < 1e-15);
        assert_eq!(env.value(8.0), 0.0);
        let h = 1e-6;
        for &junction in &[1.0, 3.0, 6.0, 8.0] {
            let left = env.value(junction - h);
            let right = env.value(junction + h);
            assert!((left - right).abs() < 1e-9, "value jump at {junction}");
            let d_left = (env.value(junction - h) - env.value(junction - 2.0 * h)) / h;
            let d_right = (env.value(junction + 2.0 * h) - env.value(junction + h)) / h;
            assert!((d_left - d_right).abs() < 1e-5, "slope jump at {junction}");
        }
    }

    #[test]
    fn square_envelope_is_half_open() {
        let env = Envelope::square(1.0, 2.0);
        assert_eq!(env.value(0.999), 0.0);
        assert_eq!(env.value(1.0), 1.0);
        assert_eq!(env.value(2.999), 1.0);
        assert_eq!(env.value(3.0), 0.0);
    }

    #[test]
    fn gradient_before_ramp_is_rejected_unless_allowed() {
        let e = ElectricDrive::new(1.0, 10.0, 0.0, Envelope::sin2(0.0, 1.0, 5.0)).unwrap();
        let g = GradientDrive::new(1.0, 10.0, 0.5, 2.0).unwrap();
        let seq = PulseSequence::new(vec![e], vec![g], 8.0);
        assert!(matches!(seq, Err(Error::Domain(_))));
        let seq =
            PulseSequence { electric: vec![e], gradient: vec![g], total_duration: 8.0, allow_early_gradient: true };
        assert!(seq.validate().is_ok());
    }

    #[test]
    fn hamiltonian_vanishes_before_windows() {
        let s = space(4, 1e6);
        let e = ElectricDrive::new(TAU * 1e5, TAU * 0.9e6, 0.3, Envelope::square(1e-6, 1e-6)).unwrap();
        let g = GradientDrive::new(TAU * 1e3, TAU * 0.9e6, 1e-6, 2e-6).unwrap();
        let seq = PulseSequence::new(vec![e], vec![g], 3e-6).unwrap();
        assert_eq!(hamiltonian_at(0.5e-6, &seq, &s).unwrap().nnz(), 0);
        assert!(hamiltonian_at(1.5e-6, &seq, &s).unwrap().nnz() > 0);
        assert!(matches!(hamiltonian_at(4e-6, &seq, &s), Err(Error::Domain(_))));
    }

    #[test]
    fn electric_only_hamiltonian_matches_hand_expansion() {
        let n_max = 3;
        let (wm, we, oe, phi) = (TAU * 1.3e6, TAU * 1.1e6, TAU * 0.2e6, 0.7);
        let s = FockSpace::for_ion(n_max, wm, 40.0).unwrap();
        let e = ElectricDrive::new(oe, we, phi, Envelope::square(0.0, 1e-5)).unwrap();
        let seq = PulseSequence::new(vec![e], vec![], 1e-5).unwrap();
        let t = 3.7e-7;
        let h = hamiltonian_at(t, &seq, &s).unwrap().to_dense();
        // (Ω_e/2)(e^{i(ω_e t+φ)} + e^{-i(ω_e t+φ)}) (a e^{-iω_m t} + a† e^{iω_m t})
        let drive = (oe / 2.0) * (c(0.0, we * t + phi).exp() + c(0.0, -(we * t + phi)).exp());
        for spin in 0..2 {
            for row in 0..n_max {
                for col in 0..n_max {
                    let mut expected = c(0.0, 0.0);
                    if col == row + 1 {
                        expected = drive * (col as f64).sqrt() * c(0.0, -wm * t).exp();
                    }
                    if row == col + 1 {
                        expected = drive * (row as f64).sqrt() * c(0.0, wm * t).exp();
                    }
                    let got = h[spin * n_max + row][spin * n_max + col];
                    assert!((got - expected).norm() < 1e-6 * oe, "({row},{col}) {got} vs {expected}");
                }
            }
            for other in 0..n_max {
                for row in 0..n_max {
                    assert_eq!(h[spin * n_max + row][(1 - spin) * n_max + other], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn hamiltonian_is_exactly_hermitian_at_random_times() {
        use rand::{Rng, SeedableRng};
        let s = space(6, 2.6e6);
        let e = ElectricDrive::new(TAU * 2e6, TAU * 2.5e6, 1.1, Envelope::sin2(0.0, 3e-6, 4e-6)).unwrap();
        let gx = GradientDrive::new(TAU * 5e3, TAU * 2.5e6, 3e-6, 7e-6).unwrap();
        let gy = GradientDrive::new(TAU * 3e3, -TAU * 2.5e6, 3e-6, 9e-6).unwrap().with_axis(SpinAxis::Y);
        let gz = GradientDrive::new(TAU * 2e3, TAU * 1e6, 4e-6, 9e-6).unwrap().with_axis(SpinAxis::Z);
        let seq = PulseSequence::new(vec![e], vec![gx, gy, gz], 10e-6).unwrap();
        let model = HamiltonianModel::new(&seq, &s, Frame::Full);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(0.0..10e-6);
            let h = model.operator_at(t).unwrap();
            assert!(h.hermitian_flag() && h.is_conjugate_symmetric());
        }
    }

    #[test]
    fn dt_limit_is_enforced() {
        let s = space(4, 7e6);
        let e = ElectricDrive::new(TAU * 1e6, TAU * 5e6, 0.0, Envelope::square(0.0, 1e-6)).unwrap();
        let seq = PulseSequence::new(vec![e], vec![], 1e-6).unwrap();
        let init = SpinMotionState::basis(4, Spin::Up, 0).unwrap();
        // f_max = 12 MHz → dt ≤ 1.67 ns
        assert!(evolve(&init, &seq, &s, &IntegratorConfig::new(2e-9), &[]).is_err());
        assert!(evolve(&init, &seq, &s, &IntegratorConfig::new(1.6e-9), &[]).is_ok());
    }

    #[test]
    fn zero_drive_leaves_state_unchanged() {
        let s = space(8, 1e6);
        let init = SpinMotionState::product(
            [c(0.6, 0.0), c(0.0, 0.8)],
            &crate::statespace::coherent_amplitudes(8, c(0.3, -0.2)),
        )
        .unwrap();
        let seq = PulseSequence::empty(5e-6);
        for method in [IntegratorMethod::Magnus4, IntegratorMethod::MidpointExponential, IntegratorMethod::Rk4Fixed] {
            let ev = evolve(&init, &seq, &s, &IntegratorConfig::new(1e-9).with_method(method), &[2e-6]).unwrap();
            assert!(ev.final_state.distance(&init).unwrap() < 1e-12);
            assert_eq!(ev.samples.len(), 1);
        }
    }

    #[test]
    fn electric_drive_produces_coherent_state_on_closed_form_trajectory() {
        let f_m = 1.0e6;
        let s = space(40, f_m);
        let (we, oe, phi) = (TAU * 1.15e6, TAU * 0.1e6, 0.4);
        let e = ElectricDrive::new(oe, we, phi, Envelope::square(0.0, 20e-6)).unwrap();
        let seq = PulseSequence::new(vec![e], vec![], 20e-6).unwrap();
        let init = SpinMotionState::basis(40, Spin::Up, 0).unwrap();
        let times: Vec<f64> = (1..=8).map(|k| k as f64 * 2.5e-6).collect();
        let ev = evolve(&init, &seq, &s, &IntegratorConfig::new(2e-9), &times).unwrap();
        assert!(ev.valid);
        for (t, state) in &ev.samples {
            let alpha = effective::alpha_trajectory(*t, oe, we, phi, TAU * f_m).unwrap();
            let coh = SpinMotionState::coherent(40, Spin::Up, alpha).unwrap();
            let overlap = coh.inner(state).unwrap().norm();
            assert!(overlap > 1.0 - 1e-6, "t = {t}: overlap {overlap}");
        }
    }

    #[test]
    fn methods_agree_and_magnus_converges_fast() {
        let s = space(20, 1e6);
        let e = ElectricDrive::new(TAU * 0.2e6, TAU * 1.2e6, 0.0, Envelope::square(0.0, 4e-6)).unwrap();
        let g = GradientDrive::new(TAU * 20e3, TAU * 1.2e6, 0.0, 4e-6).unwrap();
        let seq = PulseSequence::new(vec![e], vec![g], 4e-6).unwrap();
        let init = SpinMotionState::basis(20, Spin::Up, 1).unwrap();
        let run =
            |dt: f64, m| evolve(&init, &seq, &s, &IntegratorConfig::new(dt).with_method(m), &[]).unwrap().final_state;
        let reference = run(0.25e-9, IntegratorMethod::Magnus4);
        let coarse = run(4e-9, IntegratorMethod::Magnus4).distance(&reference).unwrap();
        let fine = run(2e-9, IntegratorMethod::Magnus4).distance(&reference).unwrap();
        assert!(coarse < 1e-8, "{coarse}");
        assert!(fine < coarse / 10.0, "fourth order: {coarse} -> {fine}");
        let mid = run(1e-9, IntegratorMethod::MidpointExponential).distance(&reference).unwrap();
        let rk4 = run(1e-9, IntegratorMethod::Rk4Fixed).distance(&reference).unwrap();
        assert!(mid < 1e-4 && rk4 < 1e-7, "{mid} {rk4}");
    }

    #[test]
    fn norm_is_preserved_over_many_steps() {
        let s = space(10, 1e6);
        let e = ElectricDrive::new(TAU * 0.05e6, TAU * 1.3e6, 0.0, Envelope::square(0.0, 1e-4)).unwrap();
        let g = GradientDrive::new(TAU * 10e3, TAU * 1.3e6, 0.0, 1e-4).unwrap();
        let seq = PulseSequence::new(vec![e], vec![g], 1e-4).unwrap();
        let init = SpinMotionState::basis(10, Spin::Up, 0).unwrap();
        let ev = evolve(
            &init,
            &seq,
            &s,
            &IntegratorConfig::new(1e-9).with_method(IntegratorMethod::MidpointExponential),
            &[],
        )
        .unwrap();
        assert!(ev.steps >= 100_000);
        assert!(ev.final_norm_drift < 1e-9, "{}", ev.final_norm_drift);
    }

    #[test]
    fn truncation_is_flagged() {
        let s = space(6, 1e6);
        let e = ElectricDrive::new(TAU * 0.5e6, TAU * 1.0e6 + 1.0, 0.0, Envelope::square(0.0, 3e-6)).unwrap();
        let seq = PulseSequence::new(vec![e], vec![], 3e-6).unwrap();
        let init = SpinMotionState::basis(6, Spin::Up, 0).unwrap();
        let ev = evolve(&init, &seq, &s, &IntegratorConfig::new(2e-9), &[3e-6]).unwrap();
        assert!(!ev.valid);
        assert!(matches!(ev.ensure_valid(), Err(Error::Truncation { .. })));
    }

    #[test]
    fn residual_excitation_examples() {
        let vac = SpinMotionState::<f64>::basis(10, Spin::Up, 0).unwrap();
        assert_eq!(residual_excitation(&vac), (c(0.0, 0.0), 0.0));
        let coh = SpinMotionState::coherent(20, Spin::Down, c(0.5, 0.0)).unwrap();
        let (a, dn) = residual_excitation(&coh);
        assert!((a - c(0.5, 0.0)).norm() < 1e-6);
        assert!(dn.abs() < 1e-6);
    }

    #[test]
    fn full_beat_square_pulse_leaves_little_motion() {
        let f_m = 1.0e6;
        let delta = TAU * 50e3;
        let oe = TAU * 20e3;
        let dur = TAU / delta;
        let s = space(20, f_m);
        let e = ElectricDrive::new(oe, TAU * f_m + delta, 0.0, Envelope::square(0.0, dur)).unwrap();
        let seq = PulseSequence::new(vec![e], vec![], dur).unwrap();
        let init = SpinMotionState::basis(20, Spin::Up, 0).unwrap();
        let ev = evolve(&init, &seq, &s, &IntegratorConfig::new(5e-9), &[]).unwrap();
        let (alpha, _) = residual_excitation(&ev.final_state);
        assert!(alpha.norm() < 1e-3 * oe / delta, "{}", alpha.norm());
    }

    #[test]
    fn thermal_average_edge_cases() {
        let dist = crate::statespace::thermal_weights(1.0, 25).unwrap();
        // zero-duration sequence: nothing flips
        let s = space(30, 1e6);
        let report =
            thermal_spin_flip_error(&PulseSequence::empty(0.0), &dist, &s, &IntegratorConfig::new(1e-9)).unwrap();
        assert_eq!(report.error_population, 1.0);
        assert!(report.valid);
        // ideal π rotation short-circuit
        let ideal = thermal_average(&dist, |_| {
            Ok(BranchOutcome { p_flip: 1.0, overlap_error: 0.0, max_top_population: 0.0, valid: true })
        })
        .unwrap();
        assert_eq!(ideal.error_population, 0.0);
        assert!((ideal.renormalization - dist.tail_mass()).abs() < 1e-15);
        // one poisoned branch
        let poisoned = thermal_average(&dist, |n| {
            Ok(BranchOutcome { p_flip: 1.0, overlap_error: 0.0, max_top_population: 0.0, valid: n != 3 })
        })
        .unwrap();
        assert!(!poisoned.valid && poisoned.ensure_valid().is_err());
        // cut too short
        let short = crate::statespace::thermal_weights(1.0, 5).unwrap();
        assert!(thermal_spin_flip_error(&PulseSequence::empty(0.0), &short, &s, &IntegratorConfig::new(1e-9)).is_err());
    }

    #[test]
    fn displacement_operator_matches_coherent_state() {
        let mut vac = vec![c(0.0, 0.0); 40];
        vac[0] = c(1.0, 0.0);
        let alpha = c(0.8, -1.1);
        let displaced = displace_motion(&vac, alpha);
        let expected = crate::statespace::coherent_amplitudes(40, alpha);
        for (a, b) in displaced.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-10);
        }
        let _ = PI;
    }
}
