//! Two-channel decomposition of the incident packet and the characteristic
//! times built on it.
//!
//! The incident ensemble splits into to-be-transmitted and to-be-reflected
//! subensembles that share k-distributions with the scattered packets. Their
//! center-of-mass trajectories start at the origin, which fixes channel
//! phase functions linear in k up to gauge. Transit and delay times follow
//! from CM kinematics per channel; they carry no dependence on the initial
//! packet-barrier distance, unlike the naive packet-comparison times which
//! are implemented here too, deliberately, to exhibit that dependence.
//!
//! The scattering window [t_start, t_end] brackets the interval where the
//! packet overlaps the barrier beyond its own half-width; its length is a
//! low bound on the interaction duration and only exists when the packet
//! drifts faster than it spreads.

use crate::error::{Result, TunnelError};
use crate::packets::{PacketKind, PacketScattering};
use crate::scatter::{self, ScatteringData};
use num_complex::Complex64;

/// Scattering channel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Transmission,
    Reflection,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Channel::Transmission => write!(f, "transmission"),
            Channel::Reflection => write!(f, "reflection"),
        }
    }
}

/// Channel phase functions theta(k) in the canonical linear-in-k gauge. The
/// linear coefficient removes the mean group delay so the counterpart CM
/// sits at the origin at t = 0. Alternate gauges shift theta by any function
/// with vanishing weighted mean slope; CM observables do not see the choice.
#[derive(Debug, Clone, Copy)]
pub struct ChannelPhases {
    /// <J'>_tr, nm.
    pub mean_jp_tr: f64,
    /// <J' - F'>_ref, nm.
    pub mean_jpfp_ref: f64,
}

impl ChannelPhases {
    /// theta_tr(k) = J(k) - k <J'>_tr.
    pub fn theta_tr(&self, d: &ScatteringData) -> f64 {
        d.j - d.k * self.mean_jp_tr
    }

    /// theta_ref(k) = J(k) - F(k) - k <J' - F'>_ref.
    pub fn theta_ref(&self, d: &ScatteringData) -> f64 {
        d.j - d.f - d.k * self.mean_jpfp_ref
    }
}

/// Phase functions for both channels. A transmission channel carrying less
/// than 1e-12 of the ensemble is degenerate and refused; a dead reflection
/// channel gets a zero linear coefficient, which multiplies sqrt(R) ~ 0
/// wherever it would be used.
pub fn channel_phases(ps: &PacketScattering) -> Result<ChannelPhases> {
    let (t_bar, r_bar) = ps.norms();
    if t_bar < 1e-12 {
        return Err(TunnelError::EmptyChannel("transmission".into()));
    }
    let mean_jpfp_ref = if r_bar < 1e-12 {
        0.0
    } else {
        ps.ref_average(|d, _| d.jp - d.fp)?
    };
    Ok(ChannelPhases {
        mean_jp_tr: ps.tr_average(|d, _| d.jp)?,
        mean_jpfp_ref,
    })
}

/// k-space amplitudes of the incident packet split into channel counterparts
/// and the interference remainder, tabulated on the quadrature nodes.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub ks: Vec<f64>,
    pub quad_weights: Vec<f64>,
    pub f_tr: Vec<Complex64>,
    pub f_ref: Vec<Complex64>,
    pub f_int: Vec<Complex64>,
}

impl Decomposition {
    /// Norm of one tabulated amplitude set.
    pub fn norm_sq(&self, amps: &[Complex64]) -> f64 {
        amps.iter()
            .zip(&self.quad_weights)
            .map(|(a, w)| w * a.norm_sqr())
            .sum()
    }

    /// Synthesize the position-space amplitude at x from one amplitude set.
    pub fn position_amplitude(&self, amps: &[Complex64], x: f64) -> Complex64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        self.ks
            .iter()
            .zip(amps)
            .zip(&self.quad_weights)
            .map(|((&k, a), &w)| w * a * Complex64::new(0.0, k * x).exp())
            .sum::<Complex64>()
            * norm
    }
}

/// Split f_inc(k, 0) into sqrt(T) f_inc e^{i theta_tr}, sqrt(R) f_inc
/// e^{i theta_ref} and the remainder. The two counterparts carry norms
/// (T_bar, R_bar); no interference term enters the norm balance.
pub fn decompose_incident(ps: &PacketScattering) -> Result<Decomposition> {
    let phases = channel_phases(ps)?;
    let nodes = ps.grid().nodes();
    let weights = ps.grid().weights();
    let mut f_tr = Vec::with_capacity(nodes.len());
    let mut f_ref = Vec::with_capacity(nodes.len());
    let mut f_int = Vec::with_capacity(nodes.len());
    for (i, d) in ps.node_data().iter().enumerate() {
        let m_inc = ps.incident_density(nodes[i]).sqrt();
        let tr = Complex64::from_polar(d.t.max(0.0).sqrt(), phases.theta_tr(d));
        let re = Complex64::from_polar(d.r.max(0.0).sqrt(), phases.theta_ref(d));
        f_tr.push(m_inc * tr);
        f_ref.push(m_inc * re);
        f_int.push(m_inc * (Complex64::new(1.0, 0.0) - tr - re));
    }
    Ok(Decomposition {
        ks: nodes.to_vec(),
        quad_weights: weights.to_vec(),
        f_tr,
        f_ref,
        f_int,
    })
}

/// Norm, mean wavenumber and delays of one channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelReport {
    pub channel: Channel,
    pub norm: f64,
    /// <k>_tr for transmission, <-k>_ref for reflection; both positive for a
    /// forward-incident packet.
    pub mean_k: f64,
    /// Spatial delay x_tr = <J'>_tr - d (reflection analogue with J' - F').
    pub spatial_delay: f64,
    /// Delay time = spatial delay over the channel velocity, fs.
    pub delay_time: f64,
}

/// Per-channel norm, mean wavenumber, spatial delay and delay time.
pub fn channel_report(ps: &PacketScattering, channel: Channel) -> Result<ChannelReport> {
    let (t_bar, r_bar) = ps.norms();
    let d = ps.profile().width();
    match channel {
        Channel::Transmission => {
            let mean_k = ps.k_moment(PacketKind::Transmitted, 1)?;
            let x = ps.tr_average(|dd, _| dd.jp)? - d;
            Ok(ChannelReport {
                channel,
                norm: t_bar,
                mean_k,
                spatial_delay: x,
                delay_time: x / ps.units().velocity(mean_k),
            })
        }
        Channel::Reflection => {
            let mean_k = ps.mean_minus_k_ref()?;
            let x = ps.ref_average(|dd, _| dd.jp - dd.fp)? - d;
            Ok(ChannelReport {
                channel,
                norm: r_bar,
                mean_k,
                spatial_delay: x,
                delay_time: x / ps.units().velocity(mean_k),
            })
        }
    }
}

/// Packet-comparison "transmission/reflection times" of the naive analysis.
#[derive(Debug, Clone, Copy)]
pub struct SwpaTimes {
    pub transmission: f64,
    pub reflection: f64,
    /// False when L1, L2 or a - L1 are not large against l0; the asymptotic
    /// trajectories backing the construction are then unreliable.
    pub asymptotic_regime: bool,
}

/// Times between CM arrivals of the incident packet at a - L1 and of the
/// scattered packets at their detectors. Both retain a term proportional to
/// the packet-barrier distance a whenever the channel mean wavenumber
/// differs from k0 — the paradoxical dependence this formalism removes.
pub fn swpa_times(ps: &PacketScattering, l1: f64, l2: f64) -> Result<SwpaTimes> {
    let m_over_h = ps.units().mass_over_hbar();
    let a = ps.profile().a();
    let k0 = ps.spec().k0;
    let l0 = ps.spec().l0;
    let transmission = match join_channel(
        ps.k_moment(PacketKind::Transmitted, 1),
        ps.tr_average(|d, _| d.jp),
    )? {
        Some((k_tr, jp_tr)) => {
            m_over_h * ((jp_tr + l2) / k_tr + l1 / k0 + a * (1.0 / k_tr - 1.0 / k0))
        }
        None => f64::NAN,
    };
    let reflection = match join_channel(
        ps.mean_minus_k_ref(),
        ps.ref_average(|d, _| d.jp - d.fp),
    )? {
        Some((k_ref, g_ref)) => {
            m_over_h * ((g_ref + l1) / k_ref + l1 / k0 + a * (1.0 / k_ref - 1.0 / k0))
        }
        None => f64::NAN,
    };
    let margin = 10.0 * l0;
    Ok(SwpaTimes {
        transmission,
        reflection,
        asymptotic_regime: l1 >= margin && l2 >= margin && a - l1 >= margin,
    })
}

/// Pair two channel averages, mapping "channel empty" to None so callers can
/// mark that channel's outputs as undefined instead of failing the other one.
fn join_channel(
    first: Result<f64>,
    second: Result<f64>,
) -> Result<Option<(f64, f64)>> {
    match (first, second) {
        (Ok(a), Ok(b)) => Ok(Some((a, b))),
        (Err(TunnelError::EmptyChannel(_)), _) | (_, Err(TunnelError::EmptyChannel(_))) => {
            Ok(None)
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Channel transit times across [a - L1, b + L2].
#[derive(Debug, Clone, Copy)]
pub struct TransitTimes {
    pub transmission: f64,
    /// Reflection off the profile as given.
    pub reflection_minus: f64,
    /// Reflection off the inverted profile.
    pub reflection_plus: f64,
    /// False at L1 = L2 = 0: detectors at the barrier edges cannot identify
    /// scattered particles, so the values are not observable there.
    pub measurable: bool,
}

/// Durations between counterpart-CM arrival at a - L1 and scattered-CM
/// arrival at the far detector; free of the packet-barrier distance.
pub fn transit_times(ps: &PacketScattering, l1: f64, l2: f64) -> Result<TransitTimes> {
    if l1 < 0.0 || l2 < 0.0 {
        return Err(TunnelError::Domain(format!(
            "detector distances must be non-negative (L1 = {l1}, L2 = {l2})"
        )));
    }
    let m_over_h = ps.units().mass_over_hbar();
    let transmission = match join_channel(
        ps.k_moment(PacketKind::Transmitted, 1),
        ps.tr_average(|d, _| d.jp),
    )? {
        Some((k_tr, jp_tr)) => m_over_h / k_tr * (jp_tr + l1 + l2),
        None => f64::NAN,
    };
    let (reflection_minus, reflection_plus) = match join_channel(
        ps.mean_minus_k_ref(),
        ps.ref_average(|d, _| d.jp - d.fp),
    )? {
        Some((k_ref, g_minus)) => {
            let g_plus = ps.ref_average(|d, _| d.jp + d.fp)?;
            (
                m_over_h / k_ref * (g_minus + 2.0 * l1),
                m_over_h / k_ref * (g_plus + 2.0 * l1),
            )
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(TransitTimes {
        transmission,
        reflection_minus,
        reflection_plus,
        measurable: l1 > 0.0 && l2 > 0.0,
    })
}

/// Delay times and spatial delays for both channels and the inverted barrier.
#[derive(Debug, Clone, Copy)]
pub struct DelayTimes {
    pub transmission: f64,
    pub reflection_minus: f64,
    pub reflection_plus: f64,
    /// x_tr = <J'>_tr - d, nm.
    pub x_tr: f64,
    /// x_ref = <J' - F'>_ref - d, nm.
    pub x_ref: f64,
    /// Spatial delay for reflection off the inverted barrier, nm.
    pub x_ref_inverted: f64,
}

/// Lag of each scattered packet behind a free reference moving at the
/// channel's own mean velocity. No dependence on the packet-barrier
/// distance enters by construction.
pub fn delay_times(ps: &PacketScattering) -> Result<DelayTimes> {
    let m_over_h = ps.units().mass_over_hbar();
    let d = ps.profile().width();
    let (transmission, x_tr) = match join_channel(
        ps.k_moment(PacketKind::Transmitted, 1),
        ps.tr_average(|dd, _| dd.jp),
    )? {
        Some((k_tr, jp_tr)) => {
            let x = jp_tr - d;
            (m_over_h / k_tr * x, x)
        }
        None => (f64::NAN, f64::NAN),
    };
    let (reflection_minus, reflection_plus, x_ref, x_ref_inv) = match join_channel(
        ps.mean_minus_k_ref(),
        ps.ref_average(|dd, _| dd.jp - dd.fp),
    )? {
        Some((k_ref, g_minus)) => {
            let x_minus = g_minus - d;
            let x_plus = ps.ref_average(|dd, _| dd.jp + dd.fp)? - d;
            (
                m_over_h / k_ref * x_minus,
                m_over_h / k_ref * x_plus,
                x_minus,
                x_plus,
            )
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(DelayTimes {
        transmission,
        reflection_minus,
        reflection_plus,
        x_tr,
        x_ref,
        x_ref_inverted: x_ref_inv,
    })
}

/// Scattering window and the completeness verdict.
#[derive(Debug, Clone, Copy)]
pub struct ScatteringWindow {
    /// Instant when the incident CM closes to one half-width of the barrier.
    pub t_start: f64,
    /// Instant when the joint scattered CM distance exceeds the joint spread.
    pub t_end: f64,
    /// t_end - t_start; None when the scattering never completes.
    pub tau_scatt: Option<f64>,
    pub completed: bool,
    /// Narrow-packet (spreading-free) estimate of tau_scatt, fs.
    pub narrow_estimate: f64,
}

/// Solve the window equations. `t_start` takes the smaller root of the
/// incident-side quadratic, `t_end` the larger root of the scattered-side
/// one. A packet that spreads faster than it drifts (k0^2 below the k-space
/// variance) never satisfies the completed-scattering condition; the window
/// is then returned with `completed = false` and no duration.
pub fn scattering_window(ps: &PacketScattering, a: f64) -> Result<ScatteringWindow> {
    let l0 = ps.spec().l0;
    if a <= l0 {
        return Err(TunnelError::Domain(format!(
            "window needs a > l0 (a = {a} nm, l0 = {l0} nm)"
        )));
    }
    let m_over_h = ps.units().mass_over_hbar();
    let k0 = ps.spec().k0;
    let sigma_sq = ps.moment_report(PacketKind::Incident)?.var_k;
    let jv = ps.joint_variance(0.0)?;
    let jp_inc = ps.inc_average(|d, _| d.jp)?;
    let rfp_inc = ps.inc_average(|d, _| d.r * d.fp)?;
    let b_bar = a + jp_inc - rfp_inc;
    let narrow_estimate = m_over_h / k0 * (2.0 * l0 + jp_inc - rfp_inc);

    let drift = k0 * k0 - sigma_sq;
    let disc_start = l0 * l0 * k0 * k0 + (a * a - l0 * l0) * sigma_sq;
    let joint_drift = k0 * k0 - jv.var_k_joint;
    let disc_end = jv.l_sq * k0 * k0 + jv.chi * jv.chi - 2.0 * k0 * b_bar * jv.chi
        + (b_bar * b_bar - jv.l_sq) * jv.var_k_joint;
    let completed = drift > 0.0 && joint_drift > 0.0 && disc_start >= 0.0 && disc_end >= 0.0;
    if !completed {
        return Ok(ScatteringWindow {
            t_start: f64::NAN,
            t_end: f64::NAN,
            tau_scatt: None,
            completed: false,
            narrow_estimate,
        });
    }
    let t_start = m_over_h * (a * k0 - disc_start.sqrt()) / drift;
    let t_end = m_over_h * (b_bar * k0 - jv.chi + disc_end.sqrt()) / joint_drift;
    Ok(ScatteringWindow {
        t_start,
        t_end,
        tau_scatt: Some(t_end - t_start),
        completed: true,
        narrow_estimate,
    })
}

/// Outcome of the seeded gedanken-experiment sorter.
#[derive(Debug, Clone, Copy)]
pub struct SortReport {
    pub n_samples: u64,
    pub n_transmitted: u64,
    pub n_reflected: u64,
    /// Sample mean wavenumber of the to-be-transmitted subensemble.
    pub mean_k_tr: f64,
    pub stderr_k_tr: f64,
    /// Sample mean wavenumber of the to-be-reflected subensemble.
    pub mean_k_ref: f64,
    pub stderr_k_ref: f64,
}

/// Draw wavenumbers from the incident density and assign each to the
/// transmission channel with probability T(k).
///
/// The generator is a SplitMix64 stream: 64-bit state seeded directly with
/// `seed`, each output one splitmix step, doubles taken from the top 53
/// bits. One uniform draws the sample (inverse CDF), the next decides the
/// channel, so any (seed, n_samples) pair reproduces bit-exactly.
pub fn montecarlo_sort(ps: &PacketScattering, n_samples: u64, seed: u64) -> Result<SortReport> {
    if n_samples == 0 {
        return Err(TunnelError::Domain("sampler needs at least one sample".into()));
    }
    let sampler = CdfSampler::new(ps);
    let mut rng = SplitMix64::new(seed);
    let mut acc_tr = MeanAccumulator::default();
    let mut acc_ref = MeanAccumulator::default();
    for _ in 0..n_samples {
        let k = sampler.sample(rng.next_f64());
        let t = scatter::transmission(ps.profile(), ps.units(), k)?;
        if rng.next_f64() < t {
            acc_tr.push(k);
        } else {
            acc_ref.push(k);
        }
    }
    Ok(SortReport {
        n_samples,
        n_transmitted: acc_tr.n,
        n_reflected: acc_ref.n,
        mean_k_tr: acc_tr.mean(),
        stderr_k_tr: acc_tr.stderr(),
        mean_k_ref: acc_ref.mean(),
        stderr_k_ref: acc_ref.stderr(),
    })
}

/// Inverse-CDF sampler over a fine uniform tabulation of the incident
/// density; works for any packet shape and is deterministic.
struct CdfSampler {
    ks: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfSampler {
    const RESOLUTION: usize = 1 << 14;

    fn new(ps: &PacketScattering) -> Self {
        let (lo, hi) = ps.grid().window();
        let n = Self::RESOLUTION;
        let dk = (hi - lo) / n as f64;
        let mut ks = Vec::with_capacity(n + 1);
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        ks.push(lo);
        cdf.push(0.0);
        let mut prev = ps.incident_density(lo);
        for i in 1..=n {
            let k = lo + dk * i as f64;
            let cur = ps.incident_density(k);
            acc += 0.5 * (prev + cur) * dk;
            ks.push(k);
            cdf.push(acc);
            prev = cur;
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        Self { ks, cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        let idx = match self
            .cdf
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.clamp(1, self.cdf.len() - 1),
        };
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.ks[idx - 1] + frac * (self.ks[idx] - self.ks[idx - 1])
    }
}

#[derive(Default)]
struct MeanAccumulator {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl MeanAccumulator {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = (self.sum_sq - self.sum * self.sum / n) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

/// SplitMix64: 64-bit state advanced by a Weyl increment, output mixed by
/// two xor-shift-multiply rounds.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
