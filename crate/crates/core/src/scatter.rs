//! Transfer-matrix scattering off piecewise-constant profiles.
//!
//! A plane wave of wavenumber k incident from the left leaves the barrier
//! region with amplitudes parametrized by four real tunneling parameters:
//! transmission probability T(k), reflection probability R(k) = 1 - T(k),
//! transmission phase J(k) and the reflection-asymmetry phase F(k),
//!
//! ```text
//!   t(k) = sqrt(T) exp[i (J - k d)]
//!   r(k) = sqrt(R) exp[i (2 k a + J - F - pi/2)]
//! ```
//!
//! The matrix algebra propagates (psi, psi') across each slab with entries
//! that are entire in the local q^2, so above-barrier, at-top and evanescent
//! segments share one code path. Deeply evanescent slabs factor their
//! exponential growth into a separate log-scale so the composition never
//! overflows even for opacities far beyond f64 range.
//!
//! J and F are defined modulo branch constants; [`PhaseTracker`] accumulates
//! both continuously along a k-path, bisecting adaptively whenever two
//! evaluations are too far apart to identify the branch. All single-point
//! queries start from a common anchor at k = 1e-4 so their branch constants
//! agree.

use crate::error::{Result, TunnelError};
use crate::potential::PotentialProfile;
use crate::units::UnitSystem;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Common branch anchor for single-point phase queries, nm^-1.
const ANCHOR_K: f64 = 1e-4;

/// Reflection probability below which arg(r) carries no information.
const R_PHASE_FLOOR: f64 = 1e-14;

/// Tunneling parameters and their k-derivatives at one wavenumber.
#[derive(Debug, Clone, Copy)]
pub struct ScatteringData {
    /// Wavenumber, nm^-1.
    pub k: f64,
    /// Transmission probability.
    pub t: f64,
    /// Reflection probability.
    pub r: f64,
    /// Transmission phase J, rad, continuous along the producing sweep.
    pub j: f64,
    /// Reflection-asymmetry phase F, rad, continuous along the producing sweep.
    pub f: f64,
    /// dT/dk, nm.
    pub tp: f64,
    /// dJ/dk, nm.
    pub jp: f64,
    /// dF/dk, nm.
    pub fp: f64,
}

impl ScatteringData {
    /// Data at -k from data at k: T and R are even, J is odd, F maps to
    /// pi - F; derivatives inherit the opposite parities.
    pub fn parity_flipped(&self) -> Self {
        Self {
            k: -self.k,
            t: self.t,
            r: self.r,
            j: -self.j,
            f: PI - self.f,
            tp: -self.tp,
            jp: self.jp,
            fp: self.fp,
        }
    }
}

/// Flux-normalized transfer matrix mapping plane-wave amplitudes on the right
/// of the barrier (referenced at b) to those on the left (referenced at a).
///
/// True entries are `exp(ln_scale)` times the stored ones; the scale is
/// factored out so opaque barriers stay representable. For a real potential
/// the true matrix satisfies |M11|^2 - |M12|^2 = 1.
#[derive(Debug, Clone, Copy)]
pub struct FluxMatrix {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
    pub ln_scale: f64,
}

/// Real 2x2 matrix carrying (psi, psi') across the barrier, det = 1 up to
/// the factored scale.
#[derive(Debug, Clone, Copy)]
struct WaveMatrix {
    w11: f64,
    w12: f64,
    w21: f64,
    w22: f64,
    ln_scale: f64,
}

impl WaveMatrix {
    fn identity() -> Self {
        Self {
            w11: 1.0,
            w12: 0.0,
            w21: 0.0,
            w22: 1.0,
            ln_scale: 0.0,
        }
    }

    /// Slab of width `width` with local q^2 = k^2 - 2mV/hbar^2. Entries are
    /// entire functions of q^2, so the at-top limit q^2 -> 0 is regular.
    fn segment(q_sq: f64, width: f64) -> Self {
        let x_sq = q_sq * width * width;
        if x_sq.abs() < 1e-20 {
            // series around q^2 = 0
            let w12 = width * (1.0 + x_sq / 6.0);
            return Self {
                w11: 1.0 + 0.5 * x_sq,
                w12,
                w21: q_sq * w12,
                w22: 1.0 + 0.5 * x_sq,
                ln_scale: 0.0,
            };
        }
        if q_sq > 0.0 {
            let q = q_sq.sqrt();
            let (s, c) = (q * width).sin_cos();
            Self {
                w11: c,
                w12: s / q,
                w21: -q * s,
                w22: c,
                ln_scale: 0.0,
            }
        } else {
            let kappa = (-q_sq).sqrt();
            let arg = kappa * width;
            if arg > 30.0 {
                // cosh/sinh ~ exp(arg)/2: factor the growth out
                let damp = (-2.0 * arg).exp();
                Self {
                    w11: 0.5 * (1.0 + damp),
                    w12: 0.5 * (1.0 - damp) / kappa,
                    w21: 0.5 * (1.0 - damp) * kappa,
                    w22: 0.5 * (1.0 + damp),
                    ln_scale: arg,
                }
            } else {
                Self {
                    w11: arg.cosh(),
                    w12: arg.sinh() / kappa,
                    w21: kappa * arg.sinh(),
                    w22: arg.cosh(),
                    ln_scale: 0.0,
                }
            }
        }
    }

    /// self := other * self, rescaling when entries grow large.
    fn premultiply(&mut self, other: &Self) {
        let w11 = other.w11 * self.w11 + other.w12 * self.w21;
        let w12 = other.w11 * self.w12 + other.w12 * self.w22;
        let w21 = other.w21 * self.w11 + other.w22 * self.w21;
        let w22 = other.w21 * self.w12 + other.w22 * self.w22;
        let mut m = Self {
            w11,
            w12,
            w21,
            w22,
            ln_scale: self.ln_scale + other.ln_scale,
        };
        let peak = m.w11.abs().max(m.w12.abs()).max(m.w21.abs()).max(m.w22.abs());
        if peak > 1e100 {
            m.w11 /= peak;
            m.w12 /= peak;
            m.w21 /= peak;
            m.w22 /= peak;
            m.ln_scale += peak.ln();
        }
        *self = m;
    }
}

fn wave_matrix(profile: &PotentialProfile, units: &UnitSystem, k: f64) -> WaveMatrix {
    let mut w = WaveMatrix::identity();
    let k_sq = k * k;
    for seg in profile.segments() {
        let q_sq = k_sq - seg.height * units.mass_ratio / units.half_quantum;
        w.premultiply(&WaveMatrix::segment(q_sq, seg.width));
    }
    w
}

/// Transfer matrix of the whole profile at wavenumber k > 0.
pub fn transfer_matrix(
    profile: &PotentialProfile,
    units: &UnitSystem,
    k: f64,
) -> Result<FluxMatrix> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(TunnelError::Domain(format!(
            "transfer matrix needs k > 0 (k = 0 is a singular limit), got {k}"
        )));
    }
    let w = wave_matrix(profile, units, k);
    // Forward matrix N maps left amplitudes (at a) to right amplitudes (at b):
    //   N11 = [(w11 + w22) + i (k w12 - w21/k)] / 2, N21 = conj(N12).
    // The backward map is its unimodular inverse.
    let sum = 0.5 * (w.w11 + w.w22);
    let dif = 0.5 * (w.w11 - w.w22);
    let skew = 0.5 * (k * w.w12 - w.w21 / k);
    let coskew = 0.5 * (k * w.w12 + w.w21 / k);
    let n11 = Complex64::new(sum, skew);
    let n12 = Complex64::new(dif, -coskew);
    let n21 = Complex64::new(dif, coskew);
    let n22 = Complex64::new(sum, -skew);
    Ok(FluxMatrix {
        m11: n22,
        m12: -n12,
        m21: -n21,
        m22: n11,
        ln_scale: w.ln_scale,
    })
}

/// Principal-branch tunneling parameters at k > 0.
#[derive(Debug, Clone, Copy)]
struct RawParams {
    t: f64,
    r: f64,
    j: f64,
    f: f64,
}

fn raw_params(profile: &PotentialProfile, units: &UnitSystem, k: f64) -> Result<RawParams> {
    let m = transfer_matrix(profile, units, k)?;
    let m11_sq = m.m11.norm_sqr();
    let m21_sq = m.m21.norm_sqr();
    let t = (-2.0 * m.ln_scale).exp() / m11_sq;
    let r = m21_sq / m11_sq;
    let j = -m.m11.arg();
    let f = if r < R_PHASE_FLOOR {
        f64::NAN // no reflected wave to read a phase from
    } else {
        -0.5 * PI - m.m21.arg()
    };
    Ok(RawParams { t, r, j, f })
}

/// Walks J and F continuously along a path in k, choosing branch constants
/// by nearest continuation and bisecting when two evaluations are too far
/// apart to identify the branch. J is tracked modulo 2 pi. F is tracked
/// modulo pi: across transmission resonances the reflected amplitude passes
/// through zero and its phase flips by pi; folding that flip keeps F smooth,
/// which is the convention under which F' vanishes identically for the
/// rectangular barrier.
#[derive(Debug, Clone)]
pub struct PhaseTracker<'a> {
    profile: &'a PotentialProfile,
    units: UnitSystem,
    k: f64,
    t: f64,
    r: f64,
    j: f64,
    f: f64,
}

impl<'a> PhaseTracker<'a> {
    /// Tracker anchored at the common small-k reference point.
    pub fn anchored(profile: &'a PotentialProfile, units: &UnitSystem) -> Result<Self> {
        Self::starting_at(profile, units, ANCHOR_K)
    }

    /// Tracker whose branch constant is the principal value at `k_start`.
    pub fn starting_at(
        profile: &'a PotentialProfile,
        units: &UnitSystem,
        k_start: f64,
    ) -> Result<Self> {
        let raw = raw_params(profile, units, k_start)?;
        Ok(Self {
            profile,
            units: *units,
            k: k_start,
            t: raw.t,
            r: raw.r,
            j: raw.j,
            f: if raw.f.is_nan() { 0.0 } else { raw.f },
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Move the tracker to `k_to`, accumulating continuous phases.
    pub fn advance(&mut self, k_to: f64) -> Result<()> {
        if k_to == self.k {
            return Ok(());
        }
        self.step(k_to, 0)
    }

    fn step(&mut self, k_to: f64, depth: u32) -> Result<()> {
        let raw = raw_params(self.profile, &self.units, k_to)?;
        let dj = wrap_centered(raw.j - self.j, 2.0 * PI);
        let df = if raw.f.is_nan() || self.r < R_PHASE_FLOOR {
            0.0 // hold F through a dead reflection channel
        } else {
            wrap_centered(raw.f - self.f, PI)
        };
        if dj.abs() > 1.0 || df.abs() > 0.8 {
            if depth >= 48 || (k_to - self.k).abs() < 1e-13 * k_to.abs().max(1.0) {
                return Err(TunnelError::PhaseResolution {
                    k_lo: self.k.min(k_to),
                    k_hi: self.k.max(k_to),
                });
            }
            let mid = 0.5 * (self.k + k_to);
            self.step(mid, depth + 1)?;
            return self.step(k_to, depth + 1);
        }
        self.k = k_to;
        self.t = raw.t;
        self.r = raw.r;
        self.j += dj;
        if !raw.f.is_nan() {
            self.f += df;
        }
        Ok(())
    }

    /// Parameters at the current point, with derivatives from a local tracked
    /// 5-point stencil (`step` clamped so the stencil stays at positive k).
    pub fn data_with_derivatives(&self, step: f64) -> Result<ScatteringData> {
        if !(step > 0.0) {
            return Err(TunnelError::Domain(format!(
                "derivative step must be positive, got {step}"
            )));
        }
        let h = step.min(self.k / 4.0);
        let mut probe = self.clone();
        let mut t = [0.0; 5];
        let mut j = [0.0; 5];
        let mut f = [0.0; 5];
        // walk down to k-2h then up across the stencil
        for (i, offset) in (-2..=2).enumerate() {
            probe.advance(self.k + offset as f64 * h)?;
            t[i] = probe.t;
            j[i] = probe.j;
            f[i] = probe.f;
        }
        let stencil = |v: &[f64; 5]| (v[0] - 8.0 * v[1] + 8.0 * v[3] - v[4]) / (12.0 * h);
        Ok(ScatteringData {
            k: self.k,
            t: t[2],
            r: 1.0 - t[2],
            j: j[2],
            f: f[2],
            tp: stencil(&t),
            jp: stencil(&j),
            fp: stencil(&f),
        })
    }
}

fn wrap_centered(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

/// Derivative step from the module's default rule.
pub fn default_step(k: f64, k_scale: f64) -> f64 {
    1e-4 * k.abs().max(k_scale)
}

/// Full tunneling parameters at one wavenumber, phases anchored at the
/// common small-k reference. Negative k is served through the parity
/// extension; k = 0 is a singular limit and rejected.
///
/// For a single rectangular slab dJ/dk comes from the closed form and
/// dF/dk is exactly zero; otherwise all derivatives are numeric.
pub fn tunneling_params(
    profile: &PotentialProfile,
    units: &UnitSystem,
    k: f64,
) -> Result<ScatteringData> {
    if k == 0.0 {
        return Err(TunnelError::Domain(
            "tunneling parameters are singular at k = 0".into(),
        ));
    }
    if k < 0.0 {
        return Ok(tunneling_params(profile, units, -k)?.parity_flipped());
    }
    let mut tracker = PhaseTracker::anchored(profile, units)?;
    tracker.advance(k)?;
    let mut data = tracker.data_with_derivatives(default_step(k, 0.0))?;
    if let Some((v0, d)) = profile.as_rectangle() {
        data.jp = rect_phase_derivative(v0, d, k, units)?;
        data.fp = 0.0;
    }
    Ok(data)
}

/// Tunneling parameters along an ascending sweep of positive wavenumbers,
/// phases continuous along the sweep.
pub fn phase_sweep(
    profile: &PotentialProfile,
    units: &UnitSystem,
    ks: &[f64],
    derivative_scale: f64,
) -> Result<Vec<ScatteringData>> {
    let mut out = Vec::with_capacity(ks.len());
    if ks.is_empty() {
        return Ok(out);
    }
    if ks.iter().any(|&k| !(k > 0.0)) {
        return Err(TunnelError::Domain(
            "phase sweep needs strictly positive wavenumbers".into(),
        ));
    }
    let mut tracker = PhaseTracker::anchored(profile, units)?;
    for &k in ks {
        tracker.advance(k)?;
        out.push(tracker.data_with_derivatives(default_step(k, derivative_scale))?);
    }
    Ok(out)
}

/// Numeric (dT/dk, dJ/dk, dF/dk) from a tracked 5-point stencil.
pub fn derivative_set(
    profile: &PotentialProfile,
    units: &UnitSystem,
    k: f64,
    step: f64,
) -> Result<(f64, f64, f64)> {
    if !(k > 0.0) {
        return Err(TunnelError::Domain(format!(
            "derivative stencil needs k > 0, got {k}"
        )));
    }
    let mut tracker = PhaseTracker::anchored(profile, units)?;
    tracker.advance(k)?;
    let data = tracker.data_with_derivatives(step)?;
    Ok((data.tp, data.jp, data.fp))
}

/// Transmission probability alone, no phase machinery; negative k is served
/// by parity.
pub fn transmission(profile: &PotentialProfile, units: &UnitSystem, k: f64) -> Result<f64> {
    let m = transfer_matrix(profile, units, k.abs())?;
    Ok((-2.0 * m.ln_scale).exp() / m.m11.norm_sqr())
}

/// Closed-form dJ/dk for the rectangular barrier, valid across the
/// barrier-top crossover: separate expressions below and above the top join
/// the regular limit exactly at E = V0.
pub fn rect_phase_derivative(v0: f64, d: f64, k: f64, units: &UnitSystem) -> Result<f64> {
    if !(k > 0.0) || !(d > 0.0) {
        return Err(TunnelError::Domain(format!(
            "rectangular phase derivative needs k > 0 and d > 0 (k = {k}, d = {d})"
        )));
    }
    if v0 == 0.0 {
        return Ok(d);
    }
    let k_top_sq = v0 * units.mass_ratio / units.half_quantum;
    let k_sq = k * k;
    if (k_sq - k_top_sq).abs() < 1e-9 * k_top_sq.abs() {
        // regular value exactly at the top
        let x = k_top_sq * d * d;
        return Ok((2.0 / 3.0) * (9.0 + 2.0 * x) / (4.0 + x) * d);
    }
    if k_sq < k_top_sq {
        let kappa = (k_top_sq - k_sq).sqrt();
        let kd = kappa * d;
        if kd > 350.0 {
            // sinh would overflow; the ratio has converged to the opaque
            // limit 2 coth(kd)/kappa to better than e^{-700}
            return Ok(2.0 / kappa);
        }
        let sum = k_sq + kappa * kappa;
        let num = 2.0 * (kappa * kappa - k_sq) * k_sq * kd + sum * sum * (2.0 * kd).sinh();
        let den = kappa * (4.0 * k_sq * kappa * kappa + sum * sum * kd.sinh().powi(2));
        Ok(num / den)
    } else {
        let kappa = (k_sq - k_top_sq).sqrt();
        let kd = kappa * d;
        let dif = k_sq - kappa * kappa;
        let num = 2.0 * (kappa * kappa + k_sq) * k_sq * kappa * d - dif * dif * (2.0 * kd).sin();
        let den = kappa * (4.0 * k_sq * kappa * kappa + dif * dif * kd.sin().powi(2));
        Ok(num / den)
    }
}
