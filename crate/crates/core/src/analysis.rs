//! Deterministic curve fitting on top of a Nelder–Mead minimizer.
//!
//! Nonlinear parameters are rescaled to order one before minimizing, and linear
//! ones are eliminated by least squares where the model allows it.

use crate::effective::{rabi_lineshape, two_mode_response, ModeResponse};
use crate::{Error, Real, Result};

/// `(x, y, σ)` samples with strictly increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSeries<T> {
    points: Vec<(T, T, Option<T>)>,
}

impl<T: Real> DataSeries<T> {
    pub fn new(points: Vec<(T, T, Option<T>)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("data series is empty".into()));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Domain("x values must be strictly increasing".into()));
        }
        if points.iter().any(|p| !p.1.is_finite() || matches!(p.2, Some(s) if !(s > T::zero()))) {
            return Err(Error::Domain("y must be finite and sigma > 0".into()));
        }
        Ok(Self { points })
    }

    pub fn from_xy(x: &[T], y: &[T]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        Self::new(x.iter().zip(y).map(|(a, b)| (*a, *b, None)).collect())
    }

    pub fn points(&self) -> &[(T, T, Option<T>)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<T> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn ys(&self) -> Vec<T> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// `1/σ²`, or 1 where σ is absent.
    pub fn weights(&self) -> Vec<T> {
        self.points.iter().map(|p| p.2.map_or(T::one(), |s| T::one() / (s * s))).collect()
    }

    /// Points whose `x` satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(T) -> bool) -> Result<Self> {
        Self::new(self.points.iter().copied().filter(|p| keep(p.0)).collect())
    }

    fn require(&self, n: usize) -> Result<()> {
        if self.len() < n {
            return Err(Error::Fit(format!("need at least {n} points, got {}", self.len())));
        }
        Ok(())
    }

    fn weighted_rss(&self, model: impl Fn(T) -> T) -> T {
        self.points
            .iter()
            .map(|(x, y, s)| {
                let r = (*y - model(*x)) / s.unwrap_or(T::one());
                r * r
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub params: Vec<(String, T)>,
    /// `sqrt(Σ ((y − model)/σ)²)`.
    pub residual_norm: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> FitResult<T> {
    pub fn get(&self, name: &str) -> Option<T> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn value(&self, name: &str) -> Result<T> {
        self.get(name).ok_or_else(|| Error::Fit(format!("no parameter named {name}")))
    }

    pub fn values(&self) -> Vec<T> {
        self.params.iter().map(|(_, v)| *v).collect()
    }
}

/// Raw minimizer output.
#[derive(Debug, Clone, PartialEq)]
struct Simplex<T> {
    x: Vec<T>,
    f: T,
    converged: bool,
    iterations: usize,
}

fn nelder_mead<T: Real>(f: &dyn Fn(&[T]) -> T, x0: &[T], tol: T, max_iter: usize) -> Simplex<T> {
    let n = x0.len();
    let eval = |x: &[T]| {
        let v = f(x);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<T>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] = if p[i] != T::zero() { p[i] * T::c(1.05) } else { T::c(0.00025) };
        pts.push(p);
    }
    let mut vals: Vec<T> = pts.iter().map(|p| eval(p)).collect();
    let (rho, chi, gamma, sigma) = (T::one(), T::c(2.0), T::c(0.5), T::c(0.5));
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // stable ordering keeps ties deterministic
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diameter =
            pts[1..].iter().flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (*a - *b).abs())).fold(T::zero(), T::max);
        let scale = pts[0].iter().fold(T::one(), |m, v| m.max(v.abs()));
        if spread == T::zero() || (diameter <= tol * scale && spread <= tol * (T::one() + vals[0].abs())) {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let inv_n = T::one() / T::from_usize_lossy(n);
        let centroid: Vec<T> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<T>() * inv_n).collect();
        let along = |t: T| -> Vec<T> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

        let xr = along(-rho);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-rho * chi);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < vals[n] {
            let xc = along(-rho * gamma);
            let fc = eval(&xc);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(gamma);
            let fc = eval(&xc);
            (xc, fc, fc < vals[n])
        };
        if accept {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<T> = (0..n).map(|j| pts[0][j] + sigma * (pts[i][j] - pts[0][j])).collect();
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }
    Simplex { x: pts[0].clone(), f: vals[0], converged, iterations }
}

/// Nelder–Mead with up to three restarts from the incumbent.
fn minimize_raw<T: Real>(f: &dyn Fn(&[T]) -> T, x0: &[T], tol: T, max_iter: usize) -> Simplex<T> {
    let mut best = nelder_mead(f, x0, tol, max_iter);
    for _ in 0..3 {
        if !best.converged || best.iterations >= max_iter {
            break;
        }
        let remaining = max_iter.saturating_sub(best.iterations);
        let next = nelder_mead(f, &best.x, tol, remaining);
        let improved = next.f < best.f;
        let done = !improved || next.iterations == 0;
        let iterations = best.iterations + next.iterations;
        if improved {
            best = Simplex { iterations, ..next };
        } else {
            best.iterations = iterations;
        }
        if done {
            break;
        }
    }
    best
}

/// Minimizes `objective` from `x0`. Parameters are reported as `x0, x1, …` and
/// `residual_norm` holds the objective value at the minimum.
pub fn minimize<T: Real>(objective: impl Fn(&[T]) -> T, x0: &[T], tol: T, max_iter: usize) -> Result<FitResult<T>> {
    if x0.is_empty() {
        return Err(Error::Domain("minimize needs at least one parameter".into()));
    }
    if !objective(x0).is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let s = minimize_raw(&objective, x0, tol, max_iter);
    Ok(FitResult {
        params: s.x.iter().enumerate().map(|(i, v)| (format!("x{i}"), *v)).collect(),
        residual_norm: s.f,
        converged: s.converged,
        iterations: s.iterations,
    })
}

const FIT_TOL: f64 = 1e-12;
const FIT_MAX_ITER: usize = 20_000;

/// Weighted linear least squares `y ≈ Σ_k c_k g_k(x)` via normal equations.
/// Returns the coefficients, or `None` for a singular system.
fn linear_lstsq<T: Real>(series: &DataSeries<T>, basis: &dyn Fn(T, &mut [T]), m: usize) -> Option<Vec<T>> {
    let mut ata = vec![vec![T::zero(); m]; m];
    let mut aty = vec![T::zero(); m];
    let mut g = vec![T::zero(); m];
    for ((x, y, _), w) in series.points().iter().zip(series.weights()) {
        basis(*x, &mut g);
        for i in 0..m {
            aty[i] += w * g[i] * *y;
            for j in 0..m {
                ata[i][j] += w * g[i] * g[j];
            }
        }
    }
    solve(ata, aty)
}

/// Gaussian elimination with partial pivoting.
fn solve<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() <= scale * T::epsilon() * T::c(16.0) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Least squares straight line. With `through_origin` only `slope` is fitted.
pub fn fit_linear<T: Real>(series: &DataSeries<T>, through_origin: bool) -> Result<FitResult<T>> {
    series.require(2)?;
    let xs = series.xs();
    if !through_origin && xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::Fit("all x values coincide".into()));
    }
    let (slope, intercept) = if through_origin {
        let c = linear_lstsq(series, &|x, g: &mut [T]| g[0] = x, 1)
            .ok_or_else(|| Error::Fit("degenerate x values".into()))?;
        (c[0], T::zero())
    } else {
        let c = linear_lstsq(
            series,
            &|x, g: &mut [T]| {
                g[0] = T::one();
                g[1] = x;
            },
            2,
        )
        .ok_or_else(|| Error::Fit("degenerate x values".into()))?;
        (c[1], c[0])
    };
    let mut params = vec![("slope".to_string(), slope)];
    if !through_origin {
        params.push(("intercept".to_string(), intercept));
    }
    Ok(FitResult {
        params,
        residual_norm: series.weighted_rss(|x| intercept + slope * x).sqrt(),
        converged: true,
        iterations: 0,
    })
}

/// Largest-power frequency (in cycles per x unit) of the mean-subtracted data.
fn spectral_peak<T: Real>(series: &DataSeries<T>) -> T {
    let xs = series.xs();
    let ys = series.ys();
    let mean = ys.iter().copied().sum::<T>() / T::from_usize_lossy(ys.len());
    let span = xs[xs.len() - 1] - xs[0];
    let df = T::one() / (T::c(8.0) * span);
    let f_max = T::from_usize_lossy(xs.len()) / (T::c(2.0) * span);
    let steps = (f_max / df).to_usize().unwrap_or(0).max(1);
    let mut best = (T::zero(), -T::one());
    for k in 1..=steps {
        let f = df * T::from_usize_lossy(k);
        let w = T::two_pi() * f;
        let (mut c, mut s) = (T::zero(), T::zero());
        for (x, y) in xs.iter().zip(&ys) {
            let ph = w * (*x - xs[0]);
            c += (*y - mean) * ph.cos();
            s += (*y - mean) * ph.sin();
        }
        let p = c * c + s * s;
        if p > best.1 {
            best = (f, p);
        }
    }
    best.0
}

/// Fits `offset + amplitude·e^{−t/decay_time}·cos(2π·frequency·t + phase)`.
///
/// Frequency and decay rate are searched nonlinearly; offset and the quadrature
/// amplitudes are solved linearly at each step. A decay rate that fits as
/// non-positive is reported as `decay_time = +∞`.
pub fn fit_decaying_sinusoid<T: Real>(series: &DataSeries<T>) -> Result<FitResult<T>> {
    series.require(4)?;
    let xs = series.xs();
    let span = xs[xs.len() - 1] - xs[0];
    let f0 = spectral_peak(series);
    if !(f0 * span >= T::c(1.5)) {
        return Err(Error::Fit(format!(
            "data span {} covers only {} periods of the dominant frequency {}; need at least 1.5",
            span,
            f0 * span,
            f0
        )));
    }
    let t0 = xs[0];
    let linear = |p: &[T]| {
        let (w, g) = (T::two_pi() * f0 * p[0], p[1] / span);
        linear_lstsq(
            series,
            &|x, b: &mut [T]| {
                let d = (-(g) * (x - t0)).exp();
                b[0] = T::one();
                b[1] = d * (w * x).cos();
                b[2] = d * (w * x).sin();
            },
            3,
        )
    };
    let objective = |p: &[T]| match linear(p) {
        Some(c) => {
            let (w, g) = (T::two_pi() * f0 * p[0], p[1] / span);
            series.weighted_rss(|x| {
                let d = (-(g) * (x - t0)).exp();
                c[0] + d * (c[1] * (w * x).cos() + c[2] * (w * x).sin())
            })
        }
        None => T::infinity(),
    };
    let mut best: Option<Simplex<T>> = None;
    for g0 in [T::zero(), T::one()] {
        let s = minimize_raw(&objective, &[T::one(), g0], T::c(FIT_TOL), FIT_MAX_ITER);
        if best.as_ref().is_none_or(|b| s.f < b.f) {
            best = Some(s);
        }
    }
    let s = best.expect("two starts");
    let c = linear(&s.x).ok_or_else(|| Error::Fit("singular amplitude system".into()))?;
    let (freq, rate) = (f0 * s.x[0], s.x[1] / span);
    // amplitude referenced to t = 0
    let (mut a, mut b) = (c[1], c[2]);
    let shift = (rate * t0).exp();
    a *= shift;
    b *= shift;
    let amplitude = (a * a + b * b).sqrt();
    let phase = (-b).atan2(a);
    let decay_time = if rate > T::zero() { T::one() / rate } else { T::infinity() };
    Ok(FitResult {
        params: vec![
            ("amplitude".into(), amplitude),
            ("frequency".into(), freq),
            ("phase".into(), phase),
            ("decay_time".into(), decay_time),
            ("offset".into(), c[0]),
        ],
        residual_norm: s.f.sqrt(),
        converged: s.converged,
        iterations: s.iterations,
    })
}

/// Fits [`rabi_lineshape`] with detuning `x − center_frequency`; `x`, the centre
/// and `omega_eff` share angular units. Dips are fitted as `1 − lineshape`.
pub fn fit_rabi_lineshape<T: Real>(series: &DataSeries<T>, duration: T) -> Result<FitResult<T>> {
    series.require(4)?;
    if !(duration > T::zero()) {
        return Err(Error::Domain("duration must be > 0".into()));
    }
    let xs = series.xs();
    let ys = series.ys();
    let mut sorted = ys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let (max_i, min_i) = (argmax(&ys, false), argmax(&ys, true));
    let peak_height = ys[max_i] - median;
    let dip_depth = median - ys[min_i];
    let dip = dip_depth > peak_height;
    let (extreme, contrast) = if dip { (min_i, dip_depth) } else { (max_i, peak_height) };
    if !(contrast > T::c(0.05)) {
        return Err(Error::Fit("no central peak or dip stands out of the data".into()));
    }
    if extreme == 0 || extreme == xs.len() - 1 {
        return Err(Error::Fit("the extremum sits at the edge of the scan; central lobe not covered".into()));
    }
    let transfer = |y: T| if dip { T::one() - y } else { y };
    let p_max = transfer(ys[extreme]).max(T::c(1e-6)).min(T::one());
    let c0 = xs[extreme];
    let base = T::c(2.0) * p_max.sqrt().asin() / duration;
    let scale = base.max(T::PI() / duration);
    let model = |x: T, omega: T, center: T| {
        let p = rabi_lineshape(omega, x - center, duration);
        if dip {
            T::one() - p
        } else {
            p
        }
    };
    let objective = |p: &[T]| series.weighted_rss(|x| model(x, p[0] * scale, c0 + p[1] * scale));
    let mut best: Option<Simplex<T>> = None;
    for omega0 in [base, T::c(2.0) * T::PI() / duration - base] {
        let s = minimize_raw(&objective, &[omega0 / scale, T::zero()], T::c(FIT_TOL), FIT_MAX_ITER);
        if best.as_ref().is_none_or(|b| s.f < b.f) {
            best = Some(s);
        }
    }
    let s = best.expect("two starts");
    Ok(FitResult {
        params: vec![("omega_eff".into(), (s.x[0] * scale).abs()), ("center_frequency".into(), c0 + s.x[1] * scale)],
        residual_norm: s.f.sqrt(),
        converged: s.converged,
        iterations: s.iterations,
    })
}

fn argmax<T: Real>(v: &[T], min: bool) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if (!min && *x > v[best]) || (min && *x < v[best]) {
            best = i;
        }
    }
    best
}

/// Poisson weights `e^{−m²} m^{2n}/n!`, cut once the remaining tail is below `tail`.
pub fn poisson_weights<T: Real>(alpha_mag: T, tail: T) -> Vec<T> {
    let mean = alpha_mag * alpha_mag;
    let mut p = (-mean).exp();
    let mut out = vec![p];
    let mut acc = p;
    let mut n = 0usize;
    while T::one() - acc >= tail && n < 100_000 {
        n += 1;
        p = p * mean / T::from_usize_lossy(n);
        out.push(p);
        acc += p;
        // guards against rounding leaving 1 − acc stuck above a tiny tail
        if p < tail * T::epsilon() && T::from_usize_lossy(n) > mean {
            break;
        }
    }
    out
}

/// Blue-sideband flop of a coherent state: `Σ_n p_n sin²(Ω₀√(n+1)t/2)`.
pub fn bsb_coherent_model<T: Real>(t: T, omega_0_rabi: T, weights: &[T]) -> T {
    weights
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let s = (omega_0_rabi * T::from_usize_lossy(n + 1).sqrt() * t * T::c(0.5)).sin();
            *p * s * s
        })
        .sum()
}

/// Fits `|α|` to blue-sideband flops with Poisson weights cut at tail `1e-8`.
pub fn fit_bsb_coherent<T: Real>(series: &DataSeries<T>, omega_0_rabi: T) -> Result<FitResult<T>> {
    fit_bsb_coherent_with_tail(series, omega_0_rabi, T::c(1e-8))
}

pub fn fit_bsb_coherent_with_tail<T: Real>(series: &DataSeries<T>, omega_0_rabi: T, tail: T) -> Result<FitResult<T>> {
    series.require(4)?;
    if !(omega_0_rabi > T::zero()) || !(tail > T::zero()) {
        return Err(Error::Domain("omega_0_rabi and tail must be > 0".into()));
    }
    let objective = |p: &[T]| {
        let w = poisson_weights(p[0].abs(), tail);
        series.weighted_rss(|t| bsb_coherent_model(t, omega_0_rabi, &w))
    };
    // coarse grid, then simplex refinement
    let mut start = T::zero();
    let mut best_f = T::infinity();
    for k in 0..=200 {
        let a = T::c(0.05) * T::from_usize_lossy(k);
        let f = objective(&[a]);
        if f < best_f {
            best_f = f;
            start = a;
        }
    }
    let s = minimize_raw(&objective, &[start], T::c(FIT_TOL), FIT_MAX_ITER);
    Ok(FitResult {
        params: vec![("alpha_mag".into(), s.x[0].abs())],
        residual_norm: s.f.sqrt(),
        converged: s.converged,
        iterations: s.iterations,
    })
}

/// Fits `offset + amplitude·cos(x + phase)` by linear least squares and reports
/// the peak-to-peak `contrast = 2·amplitude`.
pub fn fit_fringe<T: Real>(series: &DataSeries<T>) -> Result<FitResult<T>> {
    series.require(4)?;
    let c = linear_lstsq(
        series,
        &|x, g: &mut [T]| {
            g[0] = T::one();
            g[1] = x.cos();
            g[2] = x.sin();
        },
        3,
    )
    .ok_or_else(|| Error::Fit("x values do not resolve a fringe".into()))?;
    let amplitude = (c[1] * c[1] + c[2] * c[2]).sqrt();
    let phase = (-c[2]).atan2(c[1]);
    Ok(FitResult {
        params: vec![("offset".into(), c[0]), ("contrast".into(), T::c(2.0) * amplitude), ("phase".into(), phase)],
        residual_norm: series.weighted_rss(|x| c[0] + c[1] * x.cos() + c[2] * x.sin()).sqrt(),
        converged: true,
        iterations: 0,
    })
}

/// Fits the coupling products of [`two_mode_response`] to magnitude data
/// `y = |response(x)|`, with `x`, `mode_freqs` and `y` in consistent units.
pub fn fit_two_mode_response<T: Real>(series: &DataSeries<T>, mode_freqs: &[T]) -> Result<FitResult<T>> {
    series.require(4.max(mode_freqs.len() + 1))?;
    let probe = ModeResponse::new(mode_freqs.iter().map(|w| (*w, T::one())).collect())?;
    let m = mode_freqs.len();
    let term = |x: T, k: usize| mode_freqs[k] / ((x - mode_freqs[k]) * (x + mode_freqs[k]));
    for x in series.xs() {
        two_mode_response(x, &probe)?;
    }
    // sign of the data taken from the nearest mode's term
    let nearest = |x: T| {
        (0..m).min_by(|&a, &b| (x - mode_freqs[a]).abs().partial_cmp(&(x - mode_freqs[b]).abs()).unwrap()).unwrap()
    };
    let signed = DataSeries::new(
        series
            .points()
            .iter()
            .map(|(x, y, s)| {
                let sign = term(*x, nearest(*x)).signum();
                (*x, *y * sign, *s)
            })
            .collect(),
    )?;
    let init = linear_lstsq(
        &signed,
        &|x, g: &mut [T]| {
            for (k, v) in g.iter_mut().enumerate() {
                *v = term(x, k);
            }
        },
        m,
    )
    .ok_or_else(|| Error::Fit("mode terms are degenerate over the data".into()))?;
    let scales: Vec<T> = init.iter().map(|v| if v.abs() > T::zero() { v.abs() } else { T::one() }).collect();
    let objective = |p: &[T]| series.weighted_rss(|x| (0..m).map(|k| p[k] * scales[k] * term(x, k)).sum::<T>().abs());
    let x0: Vec<T> = init.iter().zip(&scales).map(|(v, s)| *v / *s).collect();
    let s = minimize_raw(&objective, &x0, T::c(FIT_TOL), FIT_MAX_ITER);
    Ok(FitResult {
        params: (0..m).map(|k| (format!("product_{k}"), s.x[k] * scales[k])).collect(),
        residual_norm: s.f.sqrt(),
        converged: s.converged,
        iterations: s.iterations,
    })
}
