//! Truncated spin ⊗ Fock Hilbert space.
//!
//! Basis ordering is spin-major: indices `0..n_max` hold the `|↓⟩` block and
//! `n_max..2·n_max` the `|↑⟩` block, each running over Fock number `n`.
//! `σ_z|↑⟩ = +|↑⟩` and `σ₊ = |↑⟩⟨↓|`.

use num_complex::Complex;

use crate::constants;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    #[inline]
    pub fn block(self) -> usize {
        match self {
            Spin::Down => 0,
            Spin::Up => 1,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Down => Spin::Up,
            Spin::Up => Spin::Down,
        }
    }
}

/// One motional mode of a single ion, truncated to `n_max` Fock states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockSpace<T> {
    n_max: usize,
    omega_m: T,
    mass: T,
    charge: T,
}

impl<T: Real> FockSpace<T> {
    pub fn new(n_max: usize, omega_m: T, mass: T, charge: T) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::Domain(format!("n_max must be >= 2, got {n_max}")));
        }
        if !(omega_m > T::zero()) || !omega_m.is_finite() {
            return Err(Error::Domain(format!("omega_m must be > 0, got {omega_m}")));
        }
        if !(mass > T::zero()) {
            return Err(Error::Domain(format!("mass must be > 0, got {mass}")));
        }
        if !(charge > T::zero()) {
            return Err(Error::Domain(format!("charge must be > 0, got {charge}")));
        }
        Ok(Self { n_max, omega_m, mass, charge })
    }

    /// Singly charged ion of `mass_amu` atomic mass units.
    pub fn for_ion(n_max: usize, omega_m: T, mass_amu: T) -> Result<Self> {
        Self::new(n_max, omega_m, mass_amu * constants::amu(), constants::elementary_charge())
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Dimension of the composite spin ⊗ motion space.
    #[inline]
    pub fn dim(&self) -> usize {
        2 * self.n_max
    }

    #[inline]
    pub fn omega_m(&self) -> T {
        self.omega_m
    }

    #[inline]
    pub fn mass(&self) -> T {
        self.mass
    }

    #[inline]
    pub fn charge(&self) -> T {
        self.charge
    }

    /// Ground-state extent `sqrt(ħ / (2 M ω_m))`.
    pub fn r0(&self) -> T {
        (constants::hbar::<T>() / (T::c(2.0) * self.mass * self.omega_m)).sqrt()
    }

    /// Electric coupling `Ω_e = q E r₀ / ħ` for a field amplitude `e_field` (V/m).
    pub fn omega_e_rabi(&self, e_field: T) -> T {
        self.charge * e_field * self.r0() / constants::hbar::<T>()
    }

    /// Inverse of [`FockSpace::omega_e_rabi`].
    pub fn field_for_omega_e(&self, omega_e_rabi: T) -> T {
        omega_e_rabi * constants::hbar::<T>() / (self.charge * self.r0())
    }

    /// Same mode with a different truncation.
    pub fn with_n_max(&self, n_max: usize) -> Result<Self> {
        Self::new(n_max, self.omega_m, self.mass, self.charge)
    }

    #[inline]
    pub fn index(&self, spin: Spin, n: usize) -> usize {
        spin.block() * self.n_max + n
    }
}

/// Sparse complex operator in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex<T>>,
    hermitian: bool,
}

impl<T: Real> SparseOperator<T> {
    /// Builds an operator from `(row, col, value)` triplets; duplicates are summed
    /// and exact zeros dropped. With `hermitian` set the entries must be exactly
    /// conjugate-symmetric.
    pub fn from_triplets<I>(dim: usize, triplets: I, hermitian: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Complex<T>)>,
    {
        let mut entries: Vec<(usize, usize, Complex<T>)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= dim || c >= dim {
                return Err(Error::Domain(format!("entry ({r}, {c}) outside {dim}x{dim} operator")));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(usize, usize, Complex<T>)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != Complex::new(T::zero(), T::zero()));

        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let op = Self {
            dim,
            row_ptr,
            cols: merged.iter().map(|e| e.1).collect(),
            vals: merged.iter().map(|e| e.2).collect(),
            hermitian: false,
        };
        if hermitian {
            if !op.is_conjugate_symmetric() {
                return Err(Error::Domain("operator flagged hermitian is not conjugate-symmetric".into()));
            }
            Ok(Self { hermitian: true, ..op })
        } else {
            Ok(op)
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new(), hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![Complex::new(T::one(), T::zero()); dim],
            hermitian: true,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn hermitian_flag(&self) -> bool {
        self.hermitian
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex<T>)> + '_ {
        (0..self.dim)
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => Complex::new(T::zero(), T::zero()),
        }
    }

    /// Exact conjugate symmetry `A[r][c] == conj(A[c][r])`.
    pub fn is_conjugate_symmetric(&self) -> bool {
        self.entries().all(|(r, c, v)| self.get(c, r) == v.conj())
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[Complex<T>], y: &mut [Complex<T>]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn apply(&self, x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let mut y = vec![Complex::new(T::zero(), T::zero()); self.dim];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    pub fn adjoint(&self) -> Self {
        let triplets = self.entries().map(|(r, c, v)| (c, r, v.conj()));
        let mut out = Self::from_triplets(self.dim, triplets, false).expect("adjoint of a valid operator is valid");
        out.hermitian = self.hermitian;
        out
    }

    pub fn scaled(&self, s: Complex<T>) -> Self {
        let hermitian = self.hermitian && s.im == T::zero();
        Self { vals: self.vals.iter().map(|v| *v * s).collect(), hermitian, ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let hermitian = self.hermitian && other.hermitian;
        let mut out = Self::from_triplets(self.dim, self.entries().chain(other.entries()), false)?;
        out.hermitian = hermitian && out.is_conjugate_symmetric();
        Ok(out)
    }

    /// Operator product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut triplets = Vec::new();
        for (r, k, a) in self.entries() {
            for j in other.row_ptr[k]..other.row_ptr[k + 1] {
                triplets.push((r, other.cols[j], a * other.vals[j]));
            }
        }
        Self::from_triplets(self.dim, triplets, false)
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        let ab = self.matmul(other)?;
        let ba = other.matmul(self)?;
        ab.add(&ba.scaled(Complex::new(-T::one(), T::zero())))
    }

    /// Largest absolute column sum, an upper bound on the spectral norm of a
    /// hermitian operator.
    pub fn norm_one(&self) -> T {
        let mut col = vec![T::zero(); self.dim];
        for (k, c) in self.cols.iter().enumerate() {
            col[*c] += self.vals[k].norm();
        }
        col.into_iter().fold(T::zero(), T::max)
    }

    /// Dense row-major copy, for small-dimension checks.
    pub fn to_dense(&self) -> Vec<Vec<Complex<T>>> {
        let mut m = vec![vec![Complex::new(T::zero(), T::zero()); self.dim]; self.dim];
        for (r, c, v) in self.entries() {
            m[r][c] = v;
        }
        m
    }
}

/// 2×2 spin matrix in the `(↓, ↑)` basis.
pub type SpinMatrix<T> = [[Complex<T>; 2]; 2];

pub(crate) fn spin_matrix<T: Real>(kind: SpinOp) -> SpinMatrix<T> {
    let z = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    match kind {
        SpinOp::Identity => [[one, z], [z, one]],
        SpinOp::X => [[z, one], [one, z]],
        // σ_y = -i σ₊ + i σ₋
        SpinOp::Y => [[z, i], [-i, z]],
        SpinOp::Z => [[-one, z], [z, one]],
        SpinOp::Plus => [[z, z], [one, z]],
        SpinOp::Minus => [[z, one], [z, z]],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SpinOp {
    Identity,
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Motional annihilation operator on `n_max` Fock states as triplets.
fn ladder_entries<T: Real>(n_max: usize) -> Vec<(usize, usize, Complex<T>)> {
    (1..n_max).map(|n| (n - 1, n, Complex::new(T::from_usize_lossy(n).sqrt(), T::zero()))).collect()
}

/// `spin ⊗ motion` on the composite space.
fn kron<T: Real>(
    n_max: usize,
    spin: &SpinMatrix<T>,
    motion: &[(usize, usize, Complex<T>)],
    hermitian: bool,
) -> SparseOperator<T> {
    let mut triplets = Vec::new();
    for (s_row, row) in spin.iter().enumerate() {
        for (s_col, s) in row.iter().enumerate() {
            if *s == Complex::new(T::zero(), T::zero()) {
                continue;
            }
            for &(r, c, m) in motion {
                triplets.push((s_row * n_max + r, s_col * n_max + c, *s * m));
            }
        }
    }
    SparseOperator::from_triplets(2 * n_max, triplets, hermitian).expect("kron of valid factors is valid")
}

/// Full operator set on the composite space of one [`FockSpace`].
#[derive(Debug, Clone)]
pub struct OperatorSet<T> {
    pub a: SparseOperator<T>,
    pub a_dag: SparseOperator<T>,
    pub n_hat: SparseOperator<T>,
    pub sigma_x: SparseOperator<T>,
    pub sigma_y: SparseOperator<T>,
    pub sigma_z: SparseOperator<T>,
    pub sigma_plus: SparseOperator<T>,
    pub sigma_minus: SparseOperator<T>,
    pub identity: SparseOperator<T>,
}

pub fn build_operators<T: Real>(space: &FockSpace<T>) -> OperatorSet<T> {
    let n = space.n_max();
    let a_m = ladder_entries::<T>(n);
    let a_dag_m: Vec<_> = a_m.iter().map(|&(r, c, v)| (c, r, v.conj())).collect();
    let n_m: Vec<_> = (0..n).map(|k| (k, k, Complex::new(T::from_usize_lossy(k), T::zero()))).collect();
    let id_m: Vec<_> = (0..n).map(|k| (k, k, Complex::new(T::one(), T::zero()))).collect();
    let id_s = spin_matrix::<T>(SpinOp::Identity);
    OperatorSet {
        a: kron(n, &id_s, &a_m, false),
        a_dag: kron(n, &id_s, &a_dag_m, false),
        n_hat: kron(n, &id_s, &n_m, true),
        sigma_x: kron(n, &spin_matrix(SpinOp::X), &id_m, true),
        sigma_y: kron(n, &spin_matrix(SpinOp::Y), &id_m, true),
        sigma_z: kron(n, &spin_matrix(SpinOp::Z), &id_m, true),
        sigma_plus: kron(n, &spin_matrix(SpinOp::Plus), &id_m, false),
        sigma_minus: kron(n, &spin_matrix(SpinOp::Minus), &id_m, false),
        identity: SparseOperator::identity(2 * n),
    }
}

/// Composite operator `spin ⊗ (a or a†)`; used by Hamiltonian assembly.
pub(crate) fn spin_ladder<T: Real>(n_max: usize, spin: SpinOp, raise: bool) -> SparseOperator<T> {
    let mut m = ladder_entries::<T>(n_max);
    if raise {
        m = m.into_iter().map(|(r, c, v)| (c, r, v)).collect();
    }
    kron(n_max, &spin_matrix(spin), &m, false)
}

/// Pure state on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinMotionState<T> {
    n_max: usize,
    amps: Vec<Complex<T>>,
}

impl<T: Real> SpinMotionState<T> {
    pub fn from_amplitudes(n_max: usize, amps: Vec<Complex<T>>) -> Result<Self> {
        if amps.len() != 2 * n_max {
            return Err(Error::DimensionMismatch { expected: 2 * n_max, found: amps.len() });
        }
        Ok(Self { n_max, amps })
    }

    /// `|spin⟩ ⊗ |n⟩`.
    pub fn basis(n_max: usize, spin: Spin, n: usize) -> Result<Self> {
        if n >= n_max {
            return Err(Error::Domain(format!("Fock index {n} outside 0..{n_max}")));
        }
        let mut amps = vec![Complex::new(T::zero(), T::zero()); 2 * n_max];
        amps[spin.block() * n_max + n] = Complex::new(T::one(), T::zero());
        Ok(Self { n_max, amps })
    }

    /// `(c↓|↓⟩ + c↑|↑⟩) ⊗ |motion⟩`, normalized.
    pub fn product(spin: [Complex<T>; 2], motion: &[Complex<T>]) -> Result<Self> {
        let n_max = motion.len();
        let mut amps = Vec::with_capacity(2 * n_max);
        for s in spin {
            amps.extend(motion.iter().map(|m| s * *m));
        }
        let state = Self { n_max, amps };
        state.normalized()
    }

    /// `|spin⟩ ⊗ |α⟩` with the coherent-state expansion truncated at `n_max`
    /// and renormalized.
    pub fn coherent(n_max: usize, spin: Spin, alpha: Complex<T>) -> Result<Self> {
        let motion = coherent_amplitudes(n_max, alpha);
        let mut s = [Complex::new(T::zero(), T::zero()); 2];
        s[spin.block()] = Complex::new(T::one(), T::zero());
        Self::product(s, &motion)
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    #[inline]
    pub fn amplitudes_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex<T>> {
        self.amps
    }

    pub fn norm(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero or non-finite state".into()));
        }
        let inv = norm.recip();
        for a in &mut self.amps {
            *a *= inv;
        }
        Ok(self)
    }

    pub fn amplitude(&self, spin: Spin, n: usize) -> Complex<T> {
        self.amps[spin.block() * self.n_max + n]
    }

    pub fn block(&self, spin: Spin) -> &[Complex<T>] {
        let start = spin.block() * self.n_max;
        &self.amps[start..start + self.n_max]
    }

    pub fn spin_population(&self, spin: Spin) -> T {
        self.block(spin).iter().map(|a| a.norm_sqr()).sum()
    }

    /// Population in Fock index `n_max - 1`, summed over both spin blocks.
    pub fn top_fock_population(&self) -> T {
        let top = self.n_max - 1;
        self.amps[top].norm_sqr() + self.amps[self.n_max + top].norm_sqr()
    }

    /// Motional Fock distribution with the spin traced out.
    pub fn fock_distribution(&self) -> Vec<T> {
        (0..self.n_max).map(|n| self.amps[n].norm_sqr() + self.amps[self.n_max + n].norm_sqr()).collect()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<Complex<T>> {
        if other.amps.len() != self.amps.len() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * *b))
    }

    /// `‖self - other‖`.
    pub fn distance(&self, other: &Self) -> Result<T> {
        if other.amps.len() != self.amps.len() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| (*a - *b).norm_sqr()).sum::<T>().sqrt())
    }

    /// `min_θ ‖self - e^{iθ} other‖` for normalized states.
    pub fn distance_up_to_phase(&self, other: &Self) -> Result<T> {
        let overlap = self.inner(other)?;
        let r = overlap.norm();
        // rotate `other` onto `self`, then measure the difference directly
        let phase = if r > T::zero() { overlap.conj() / r } else { Complex::new(T::one(), T::zero()) };
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| (*a - *b * phase).norm_sqr()).sum::<T>().sqrt())
    }

    /// Reduced spin density matrix in the `(↓, ↑)` basis.
    pub fn spin_density_matrix(&self) -> SpinMatrix<T> {
        let down = self.block(Spin::Down);
        let up = self.block(Spin::Up);
        let mut rho = [[Complex::new(T::zero(), T::zero()); 2]; 2];
        for (d, u) in down.iter().zip(up) {
            rho[0][0] += *d * d.conj();
            rho[0][1] += *d * u.conj();
            rho[1][0] += *u * d.conj();
            rho[1][1] += *u * u.conj();
        }
        rho
    }

    /// Spin Bloch vector `(⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩)`.
    pub fn bloch_vector(&self) -> [T; 3] {
        let rho = self.spin_density_matrix();
        // ⟨σ₊⟩ = Tr(ρ σ₊) = ρ[↓][↑]
        let plus = rho[0][1];
        [T::c(2.0) * plus.re, T::c(2.0) * plus.im, rho[1][1].re - rho[0][0].re]
    }
}

/// Truncated coherent-state amplitudes `e^{-|α|²/2} αⁿ/√n!`, not renormalized.
pub fn coherent_amplitudes<T: Real>(n_max: usize, alpha: Complex<T>) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(n_max);
    let mut c = Complex::new((-alpha.norm_sqr() / T::c(2.0)).exp(), T::zero());
    for n in 0..n_max {
        out.push(c);
        c = c * alpha / T::from_usize_lossy(n + 1).sqrt();
    }
    out
}

/// `⟨ψ|Ô|ψ⟩`.
pub fn expectation<T: Real>(state: &SpinMotionState<T>, op: &SparseOperator<T>) -> Result<Complex<T>> {
    let applied = op.apply(state.amplitudes())?;
    let mut acc = Complex::new(T::zero(), T::zero());
    for (a, b) in state.amplitudes().iter().zip(&applied) {
        acc += a.conj() * *b;
    }
    Ok(acc)
}

/// Geometric occupation distribution `p_n = n̄ⁿ/(n̄+1)ⁿ⁺¹` cut at `n_cut`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalDistribution<T> {
    nbar: T,
    weights: Vec<T>,
    tail_mass: T,
}

impl<T: Real> ThermalDistribution<T> {
    pub fn nbar(&self) -> T {
        self.nbar
    }

    /// `p_0..=p_{n_cut}`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Probability beyond `n_cut`, `(n̄/(n̄+1))^{n_cut+1}`.
    pub fn tail_mass(&self) -> T {
        self.tail_mass
    }

    pub fn n_cut(&self) -> usize {
        self.weights.len() - 1
    }

    /// Smallest cut whose tail mass is below `tol`.
    pub fn with_tail_below(nbar: T, tol: T) -> Result<Self> {
        if !(tol > T::zero()) {
            return Err(Error::Domain("tail tolerance must be positive".into()));
        }
        check_nbar(nbar)?;
        if nbar == T::zero() {
            return thermal_weights(nbar, 0);
        }
        let q = nbar / (nbar + T::one());
        // q^{n+1} < tol
        let n = ((tol.ln() / q.ln()).ceil() - T::one()).max(T::zero());
        let n_cut = n.to_usize().ok_or_else(|| Error::Domain("tail cut overflow".into()))?;
        thermal_weights(nbar, n_cut)
    }

    /// Error unless the distribution fits inside `space`.
    pub fn check_fits(&self, space: &FockSpace<T>) -> Result<()> {
        if self.n_cut() >= space.n_max() {
            return Err(Error::Domain(format!(
                "thermal cut {} exceeds Fock truncation {}",
                self.n_cut(),
                space.n_max()
            )));
        }
        Ok(())
    }
}

fn check_nbar<T: Real>(nbar: T) -> Result<()> {
    if !(nbar >= T::zero()) || !nbar.is_finite() {
        return Err(Error::Domain(format!("nbar must be finite and >= 0, got {nbar}")));
    }
    Ok(())
}

pub fn thermal_weights<T: Real>(nbar: T, n_cut: usize) -> Result<ThermalDistribution<T>> {
    check_nbar(nbar)?;
    let q = nbar / (nbar + T::one());
    let mut weights = Vec::with_capacity(n_cut + 1);
    let mut p = T::one() / (nbar + T::one());
    for _ in 0..=n_cut {
        weights.push(p);
        p *= q;
    }
    let tail_mass = q.powi((n_cut + 1) as i32);
    Ok(ThermalDistribution { nbar, weights, tail_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn space(n: usize) -> FockSpace<f64> {
        FockSpace::for_ion(n, std::f64::consts::TAU * 2.6e6, 40.0).unwrap()
    }

    #[test]
    fn rejects_invalid_spaces() {
        assert!(FockSpace::new(1, 1.0, 1.0, 1.0).is_err());
        assert!(FockSpace::new(4, 0.0, 1.0, 1.0).is_err());
        assert!(FockSpace::new(4, 1.0, -1.0, 1.0).is_err());
        assert!(FockSpace::new(4, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ground_state_extent_of_calcium_on_radial_mode() {
        let r0 = space(4).r0();
        assert!((r0 - 6.97e-9).abs() < 0.01e-9, "r0 = {r0}");
    }

    #[test]
    fn annihilation_kills_vacuum_in_both_spin_blocks() {
        let ops = build_operators(&space(5));
        for spin in [Spin::Down, Spin::Up] {
            let vac = SpinMotionState::<f64>::basis(5, spin, 0).unwrap();
            let out = ops.a.apply(vac.amplitudes()).unwrap();
            assert!(out.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn ladder_matrix_element() {
        let s = space(5);
        let ops = build_operators(&s);
        let v = ops.a.get(s.index(Spin::Up, 1), s.index(Spin::Up, 2));
        assert_abs_diff_eq!(v.re, std::f64::consts::SQRT_2, epsilon = 1e-8);
        assert_eq!(ops.a_dag, ops.a.adjoint());
    }

    #[test]
    fn commutator_is_identity_except_at_top() {
        let s = space(4);
        let ops = build_operators(&s);
        let comm = ops.a.commutator(&ops.a_dag).unwrap().to_dense();
        // explicit: [a, a†] = diag(1, 1, 1, -(n_max-1)) per spin block
        for spin in [Spin::Down, Spin::Up] {
            for n in 0..4 {
                let i = s.index(spin, n);
                let expected = if n < 3 { 1.0 } else { -3.0 };
                assert_abs_diff_eq!(comm[i][i].re, expected, epsilon = 1e-12);
                for j in 0..8 {
                    if j != i {
                        assert_eq!(comm[i][j], c(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn spin_operators_follow_conventions() {
        let s = space(3);
        let ops = build_operators(&s);
        let up = SpinMotionState::<f64>::basis(3, Spin::Up, 0).unwrap();
        let down = SpinMotionState::<f64>::basis(3, Spin::Down, 0).unwrap();
        assert_eq!(expectation(&up, &ops.sigma_z).unwrap(), c(1.0, 0.0));
        assert_eq!(expectation(&down, &ops.sigma_z).unwrap(), c(-1.0, 0.0));
        let raised = ops.sigma_plus.apply(down.amplitudes()).unwrap();
        assert_eq!(raised, up.amplitudes());
        // σ_y = -iσ₊ + iσ₋ and σ_x = σ₊ + σ₋
        let i = c(0.0, 1.0);
        let sy = ops.sigma_plus.scaled(-i).add(&ops.sigma_minus.scaled(i)).unwrap();
        assert_eq!(sy.to_dense(), ops.sigma_y.to_dense());
        let sx = ops.sigma_plus.add(&ops.sigma_minus).unwrap();
        assert_eq!(sx.to_dense(), ops.sigma_x.to_dense());
        // [σ₊, σ₋] = σ_z
        let comm = ops.sigma_plus.commutator(&ops.sigma_minus).unwrap();
        assert_eq!(comm.to_dense(), ops.sigma_z.to_dense());
    }

    #[test]
    fn hermitian_flag_is_checked() {
        let bad = SparseOperator::<f64>::from_triplets(2, [(0, 1, c(1.0, 1.0)), (1, 0, c(1.0, 1.0))], true);
        assert!(bad.is_err());
        let good = SparseOperator::<f64>::from_triplets(2, [(0, 1, c(1.0, 1.0)), (1, 0, c(1.0, -1.0))], true);
        assert!(good.unwrap().hermitian_flag());
    }

    #[test]
    fn expectation_examples() {
        let ops = build_operators(&space(30));
        let up0 = SpinMotionState::<f64>::basis(30, Spin::Up, 0).unwrap();
        assert_eq!(expectation(&up0, &ops.n_hat).unwrap(), c(0.0, 0.0));
        let coh = SpinMotionState::coherent(30, Spin::Up, c(1.0, 0.0)).unwrap();
        let a = expectation(&coh, &ops.a).unwrap();
        assert!((a - c(1.0, 0.0)).norm() < 1e-6, "{a}");
        let wrong = SparseOperator::<f64>::identity(4);
        assert!(matches!(expectation(&coh, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn thermal_examples() {
        let t0 = thermal_weights(0.0, 5).unwrap();
        assert_eq!(t0.weights()[0], 1.0);
        assert!(t0.weights()[1..].iter().all(|w| *w == 0.0));
        assert_eq!(t0.tail_mass(), 0.0);

        let t1 = thermal_weights(1.0, 2).unwrap();
        assert_eq!(t1.weights(), &[0.5, 0.25, 0.125]);
        assert_eq!(t1.tail_mass(), 0.125);

        let t30 = thermal_weights(1.0, 30).unwrap();
        assert!(t30.tail_mass() < 1e-9);

        assert!(matches!(thermal_weights(-0.1, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn thermal_cut_for_tolerance() {
        let d = ThermalDistribution::with_tail_below(1.0, 1e-6).unwrap();
        assert!(d.tail_mass() < 1e-6);
        let shorter = thermal_weights(1.0, d.n_cut() - 1).unwrap();
        assert!(shorter.tail_mass() >= 1e-6);
        assert!(d.check_fits(&space(d.n_cut())).is_err());
        assert!(d.check_fits(&space(d.n_cut() + 1)).is_ok());
    }

    #[test]
    fn bloch_vector_of_equator_state() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let motion = vec![c(1.0, 0.0), c(0.0, 0.0)];
        // (|↓⟩ + |↑⟩)/√2 is the +x eigenstate
        let s = SpinMotionState::product([c(h, 0.0), c(h, 0.0)], &motion).unwrap();
        let b = s.bloch_vector();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 0.0, epsilon = 1e-12);
        // (|↓⟩ - i|↑⟩)/√2 ∝ (|↑⟩ + i|↓⟩)/√2 is the +y eigenstate
        let s = SpinMotionState::product([c(h, 0.0), c(0.0, -h)], &motion).unwrap();
        assert_abs_diff_eq!(s.bloch_vector()[1], 1.0, epsilon = 1e-12);
    }
}
