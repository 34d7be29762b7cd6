//! Surface-trap electrostatics in the gapless-plane approximation.
//!
//! Electrodes are rectangles in the `z = 0` plane; everything outside a driven
//! patch is grounded. Coordinates: `x` along the trap axis, `y` across it in the
//! chip plane, `z` up towards the ion.

use num_complex::Complex;
use rayon::prelude::*;

use crate::effective;
use crate::statespace::FockSpace;
use crate::{constants, Error, Real, Result};

pub type Vec3<T> = [T; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodePatch<T> {
    pub x1: T,
    pub x2: T,
    pub y1: T,
    pub y2: T,
    pub label: String,
}

impl<T: Real> ElectrodePatch<T> {
    pub fn new(x1: T, x2: T, y1: T, y2: T, label: impl Into<String>) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Domain("patch needs x1 < x2 and y1 < y2".into()));
        }
        Ok(Self { x1, x2, y1, y2, label: label.into() })
    }

    pub fn center(&self) -> (T, T) {
        let h = T::c(0.5);
        ((self.x1 + self.x2) * h, (self.y1 + self.y2) * h)
    }

    fn corners(&self) -> [(T, T, T); 4] {
        let one = T::one();
        [(self.x2, self.y2, one), (self.x1, self.y2, -one), (self.x2, self.y1, -one), (self.x1, self.y1, one)]
    }
}

fn above_plane<T: Real>(point: &Vec3<T>) -> Result<()> {
    if !(point[2] > T::zero()) {
        return Err(Error::Domain(format!("point z = {} must lie above the electrode plane", point[2])));
    }
    Ok(())
}

/// Potential at `point` with the patch at 1 V.
pub fn patch_potential<T: Real>(point: &Vec3<T>, patch: &ElectrodePatch<T>) -> Result<T> {
    above_plane(point)?;
    let [x, y, z] = *point;
    let mut sum = T::zero();
    for (xc, yc, s) in patch.corners() {
        let (a, b) = (xc - x, yc - y);
        let r = (a * a + b * b + z * z).sqrt();
        sum += s * (a * b / (z * r)).atan();
    }
    Ok(sum / T::two_pi())
}

/// Field `−∇φ` at `point` per volt on the patch.
pub fn patch_field<T: Real>(point: &Vec3<T>, patch: &ElectrodePatch<T>) -> Result<Vec3<T>> {
    above_plane(point)?;
    let [x, y, z] = *point;
    let (mut ex, mut ey, mut ez) = (T::zero(), T::zero(), T::zero());
    let z2 = z * z;
    for (xc, yc, s) in patch.corners() {
        let (a, b) = (xc - x, yc - y);
        let (a2, b2) = (a * a, b * b);
        let r = (a2 + b2 + z2).sqrt();
        // a and b decrease as the point moves in +x, +y
        ex += s * b * z / ((a2 + z2) * r);
        ey += s * a * z / ((b2 + z2) * r);
        ez += s * a * b * (a2 + b2 + T::c(2.0) * z2) / ((a2 + z2) * (b2 + z2) * r);
    }
    let k = T::two_pi();
    Ok([ex / k, ey / k, ez / k])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapLayout<T> {
    pub patches: Vec<ElectrodePatch<T>>,
    pub ion_height: T,
    /// Unit vectors of the (axial, radial 1, radial 2) modes.
    pub mode_axes: [Vec3<T>; 3],
    /// Mode frequencies, rad/s, in the same order.
    pub mode_freqs: [T; 3],
}

impl<T: Real> TrapLayout<T> {
    pub fn new(
        patches: Vec<ElectrodePatch<T>>,
        ion_height: T,
        mode_axes: [Vec3<T>; 3],
        mode_freqs: [T; 3],
    ) -> Result<Self> {
        let layout = Self { patches, ion_height, mode_axes, mode_freqs };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ion_height > T::zero()) {
            return Err(Error::Domain("ion_height must be > 0".into()));
        }
        if self.patches.is_empty() {
            return Err(Error::Domain("layout needs at least one electrode".into()));
        }
        if self.mode_freqs.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::Domain("mode frequencies must be > 0".into()));
        }
        let tol = T::c(1e-9);
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&self.mode_axes[i], &self.mode_axes[j]);
                let expected = if i == j { T::one() } else { T::zero() };
                if (d - expected).abs() > tol {
                    return Err(Error::Domain("mode axes must be orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// A row of `n` identical dc electrodes of axial length `pitch` (gapless),
    /// centred on `x = 0`, spanning `y ∈ [y1, y2]`. The radial modes lie in the
    /// `y–z` plane at `radial_angle` to the surface.
    pub fn linear_surface_trap(
        n: usize,
        pitch: T,
        y_span: (T, T),
        ion_height: T,
        mode_freqs: [T; 3],
        radial_angle: T,
    ) -> Result<Self> {
        if n == 0 || !(pitch > T::zero()) {
            return Err(Error::Domain("need n >= 1 electrodes and a positive pitch".into()));
        }
        let offset = T::from_usize_lossy(n - 1) * T::c(0.5);
        let patches = (0..n)
            .map(|k| {
                let xc = (T::from_usize_lossy(k) - offset) * pitch;
                let half = pitch * T::c(0.5);
                ElectrodePatch::new(xc - half, xc + half, y_span.0, y_span.1, format!("dc{k}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let (c, s) = (radial_angle.cos(), radial_angle.sin());
        let axes = [[T::one(), T::zero(), T::zero()], [T::zero(), c, s], [T::zero(), -s, c]];
        Self::new(patches, ion_height, axes, mode_freqs)
    }

    pub fn patch_index(&self, label: &str) -> Option<usize> {
        self.patches.iter().position(|p| p.label == label)
    }
}

fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Voltages on each patch plus a linear pickup model: the voltage actually
/// present on patch `i` is `Σ_j pickup[i][j] · V_j e^{iφ_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeDrive<T> {
    /// `(amplitude V, phase rad)` per patch.
    pub voltages: Vec<(T, T)>,
    pub pickup: Vec<Vec<T>>,
}

impl<T: Real> ElectrodeDrive<T> {
    pub fn new(voltages: Vec<(T, T)>, pickup: Vec<Vec<T>>) -> Result<Self> {
        let d = Self { voltages, pickup };
        d.validate()?;
        Ok(d)
    }

    /// No pickup.
    pub fn direct(voltages: Vec<(T, T)>) -> Self {
        let n = voltages.len();
        let pickup = (0..n).map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect()).collect();
        Self { voltages, pickup }
    }

    /// `volts` on patch `index` only.
    pub fn single(n: usize, index: usize, volts: T) -> Result<Self> {
        if index >= n {
            return Err(Error::Domain(format!("electrode index {index} out of range for {n} patches")));
        }
        let mut v = vec![(T::zero(), T::zero()); n];
        v[index] = (volts, T::zero());
        Ok(Self::direct(v))
    }

    /// Sets every nearest-neighbour pickup coefficient to `fraction`.
    pub fn with_neighbour_pickup(mut self, fraction: T) -> Result<Self> {
        let n = self.voltages.len();
        for i in 0..n {
            for j in 0..n {
                self.pickup[i][j] = if i == j {
                    T::one()
                } else if i.abs_diff(j) == 1 {
                    fraction
                } else {
                    T::zero()
                };
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { voltages: self.voltages.iter().map(|(v, p)| (*v * c, *p)).collect(), pickup: self.pickup.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.voltages.len();
        if self.pickup.len() != n || self.pickup.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: self.pickup.len() });
        }
        for (i, row) in self.pickup.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let ok = if i == j { *v == T::one() } else { *v >= T::zero() && *v < T::one() };
                if !ok {
                    return Err(Error::Domain(format!("pickup[{i}][{j}] = {v} out of range")));
                }
            }
        }
        Ok(())
    }

    /// Complex voltage present on each patch after pickup.
    pub fn effective_voltages(&self) -> Vec<Complex<T>> {
        let phasors: Vec<Complex<T>> = self.voltages.iter().map(|(v, p)| Complex::new(p.cos(), p.sin()) * *v).collect();
        self.pickup
            .iter()
            .map(|row| row.iter().zip(&phasors).fold(Complex::new(T::zero(), T::zero()), |acc, (c, v)| acc + *v * *c))
            .collect()
    }
}

/// Complex field amplitude at `point`.
pub fn drive_field<T: Real>(
    layout: &TrapLayout<T>,
    drive: &ElectrodeDrive<T>,
    point: &Vec3<T>,
) -> Result<[Complex<T>; 3]> {
    if drive.voltages.len() != layout.patches.len() {
        return Err(Error::DimensionMismatch { expected: layout.patches.len(), found: drive.voltages.len() });
    }
    let mut e = [Complex::new(T::zero(), T::zero()); 3];
    for (patch, v) in layout.patches.iter().zip(drive.effective_voltages()) {
        if v.norm() == T::zero() {
            continue;
        }
        let f = patch_field(point, patch)?;
        for k in 0..3 {
            e[k] += v * f[k];
        }
    }
    Ok(e)
}

/// Species, target mode and gradient strength for a localization scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileTarget<T> {
    /// Index into the layout's modes.
    pub mode: usize,
    pub omega_g_rabi: T,
    pub mass: T,
    pub charge: T,
}

impl<T: Real> ProfileTarget<T> {
    pub fn for_ion(mode: usize, omega_g_rabi: T, mass_amu: T) -> Self {
        Self { mode, omega_g_rabi, mass: mass_amu * constants::amu(), charge: constants::elementary_charge() }
    }
}

/// `|Ω_eff|` for the target mode with the ion at `(x, 0, h)` for each `x`.
pub fn omega_eff_profile<T: Real>(
    layout: &TrapLayout<T>,
    drive: &ElectrodeDrive<T>,
    target: &ProfileTarget<T>,
    omega_e: T,
    axial_positions: &[T],
) -> Result<Vec<(T, T)>> {
    layout.validate()?;
    drive.validate()?;
    if target.mode > 2 {
        return Err(Error::Domain(format!("mode index {} out of range", target.mode)));
    }
    let omega_m = layout.mode_freqs[target.mode];
    let space = FockSpace::new(2, omega_m, target.mass, target.charge)?;
    let per_rabi = effective::omega_eff(target.omega_g_rabi, T::one(), omega_m, omega_e)?;
    let axis = layout.mode_axes[target.mode];
    axial_positions
        .par_iter()
        .map(|&x| {
            let e = drive_field(layout, drive, &[x, T::zero(), layout.ion_height])?;
            let projected = e[0] * axis[0] + e[1] * axis[1] + e[2] * axis[2];
            let rabi = space.omega_e_rabi(projected.norm());
            Ok((x, (per_rabi * rabi).abs()))
        })
        .collect()
}

/// `|Ω_eff(x_ref)| / |Ω_eff(x_far)|`; `+∞` when the far value is zero.
pub fn suppression_ratio<T: Real>(profile: &[(T, T)], x_ref: T, x_far: T) -> Result<T> {
    let lookup = |x: T| {
        profile
            .iter()
            .find(|(p, _)| (*p - x).abs() <= T::c(1e-12) * x.abs().max(T::c(1e-6)))
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Domain(format!("position {x} not in profile")))
    };
    let (near, far) = (lookup(x_ref)?, lookup(x_far)?);
    if x_ref == x_far {
        return Ok(T::one());
    }
    if far == T::zero() {
        return Ok(T::infinity());
    }
    Ok(near / far)
}

/// Field amplitude that makes `|α|` grow at `slope` on resonance: `2ħ·slope/(q r₀)`.
pub fn field_from_slope<T: Real>(slope: T, space: &FockSpace<T>) -> T {
    T::c(2.0) * constants::hbar::<T>() * slope / (space.charge() * space.r0())
}
