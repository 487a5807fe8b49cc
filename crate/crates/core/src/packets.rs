//! Asymptotic k-space moments of the incident, transmitted and reflected
//! packets.
//!
//! Outside the barrier region every packet is a superposition of plane waves
//! with a real weight M(k) and a phase xi(k, t), so expectation values of
//! position and wavenumber reduce to one-dimensional quadratures over k:
//!
//! ```text
//!   <x>   = -<d(xi)/dk>,      <(dx)^2> = <(ln'M)^2> + <(d xi' )^2>
//! ```
//!
//! The incident weight is a normalized packet shape; the transmitted and
//! reflected weights pick up sqrt(T) and sqrt(R). All averages use one shared
//! quadrature rule, which keeps the exchange rules between the three packets
//! (norms, momentum conservation) identities of the discretization rather
//! than approximations.

use crate::error::{Result, TunnelError};
use crate::grid::{KGrid, RefinementHint, DEFAULT_NODE_COUNT, DEFAULT_WIDTH_FACTOR};
use crate::potential::PotentialProfile;
use crate::scatter::{self, ScatteringData};
use crate::units::UnitSystem;
use std::fmt;
use std::sync::Arc;

/// Probability floor for log-derivative integrands near transmission zeros.
const PROB_FLOOR: f64 = 1e-300;

/// Transmission weights are computed in scaled arithmetic and stay accurate
/// down to the underflow edge; only an identically-zero channel is refused.
const TR_CHANNEL_FLOOR: f64 = 1e-290;

/// Reflection amplitudes are cancellation-structured, so a transparent
/// profile leaves roundoff residue ~1e-31 in R; weights below this floor are
/// treated as an empty channel rather than averaged over noise.
const REF_CHANNEL_FLOOR: f64 = 1e-24;

/// Below this, a pointwise channel probability is indistinguishable from
/// roundoff and the tp-dependent pieces of log-weight integrands are noise.
const POINT_FLOOR: f64 = 1e-20;

type ShapeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Weight family A(k; k0, l0) of the incident packet.
#[derive(Clone)]
pub enum PacketShape {
    /// A(k) = exp(-l0^2 (k - k0)^2); the packet has <x> = 0 and
    /// <(dx)^2> = l0^2 at t = 0 by construction.
    Gaussian,
    /// User-supplied smooth, rapidly decaying weight. The log-derivative
    /// d(ln A)/dk may be supplied analytically; otherwise it is obtained by
    /// numerical differentiation. The t = 0 spatial variance is validated
    /// against l0^2 at construction.
    Custom {
        weight: ShapeFn,
        log_derivative: Option<ShapeFn>,
    },
}

impl fmt::Debug for PacketShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacketShape::Gaussian => write!(f, "Gaussian"),
            PacketShape::Custom { log_derivative, .. } => f
                .debug_struct("Custom")
                .field("analytic_log_derivative", &log_derivative.is_some())
                .finish(),
        }
    }
}

/// Incident wave packet in the k-representation.
#[derive(Debug, Clone)]
pub struct PacketSpec {
    /// Mean wavenumber, nm^-1, positive (packet moves toward the barrier).
    pub k0: f64,
    /// Half-width at t = 0, nm.
    pub l0: f64,
    pub shape: PacketShape,
    /// Effective mass m / m_e.
    pub mass_ratio: f64,
}

impl PacketSpec {
    pub fn gaussian(k0: f64, l0: f64, mass_ratio: f64) -> Result<Self> {
        let spec = Self {
            k0,
            l0,
            shape: PacketShape::Gaussian,
            mass_ratio,
        };
        spec.validate_fields()?;
        Ok(spec)
    }

    fn validate_fields(&self) -> Result<()> {
        if !(self.k0 > 0.0) || !(self.l0 > 0.0) || !(self.mass_ratio > 0.0) {
            return Err(TunnelError::Domain(format!(
                "packet needs k0 > 0, l0 > 0, mass_ratio > 0 (got {}, {}, {})",
                self.k0, self.l0, self.mass_ratio
            )));
        }
        Ok(())
    }

    /// k-space deviation scale used for window sizing; exact for the
    /// Gaussian, nominal for custom shapes.
    pub fn sigma_k(&self) -> f64 {
        1.0 / (2.0 * self.l0)
    }

    /// Unnormalized weight A(k).
    pub fn weight(&self, k: f64) -> f64 {
        match &self.shape {
            PacketShape::Gaussian => {
                (-self.l0 * self.l0 * (k - self.k0) * (k - self.k0)).exp()
            }
            PacketShape::Custom { weight, .. } => weight(k, self.k0, self.l0),
        }
    }

    /// d(ln A)/dk.
    pub fn weight_log_derivative(&self, k: f64) -> f64 {
        match &self.shape {
            PacketShape::Gaussian => -2.0 * self.l0 * self.l0 * (k - self.k0),
            PacketShape::Custom {
                weight,
                log_derivative,
            } => match log_derivative {
                Some(ld) => ld(k, self.k0, self.l0),
                None => {
                    let h = 1e-5 * self.sigma_k().max(k.abs() * 1e-7);
                    let f = |x: f64| weight(x, self.k0, self.l0).max(PROB_FLOOR).ln();
                    (f(k - 2.0 * h) - 8.0 * f(k - h) + 8.0 * f(k + h) - f(k + 2.0 * h))
                        / (12.0 * h)
                }
            },
        }
    }
}

/// Which packet an average runs over.
///
/// `Transmitted` and `Reflected` describe the scattered packets at late
/// times; `Incident` and the `ToBe*` counterparts describe early times. The
/// formulas are exact within the k-representation model at any t; respecting
/// the validity windows is the caller's contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Incident,
    Transmitted,
    Reflected,
    ToBeTransmitted,
    ToBeReflected,
}

/// Norm, wavenumber moments and the time laws of <x> and <(dx)^2>.
///
/// `<x>(t) = x_slope * t + x_intercept` and
/// `var_x(t) = varx_c0 + varx_c1 * t + varx_c2 * t^2`.
#[derive(Debug, Clone, Copy)]
pub struct MomentReport {
    pub norm: f64,
    pub mean_k: f64,
    pub var_k: f64,
    pub x_slope: f64,
    pub x_intercept: f64,
    pub varx_c0: f64,
    pub varx_c1: f64,
    pub varx_c2: f64,
}

impl MomentReport {
    pub fn mean_x(&self, t: f64) -> f64 {
        self.x_slope * t + self.x_intercept
    }

    pub fn var_x(&self, t: f64) -> f64 {
        self.varx_c0 + self.varx_c1 * t + self.varx_c2 * t * t
    }
}

/// Both routes to the joint CM-to-barrier distance S_tr+ref(t).
#[derive(Debug, Clone, Copy)]
pub struct JointDistance {
    /// T_bar * S_tr + R_bar * S_ref.
    pub weighted: f64,
    /// (hbar t / m) <k>_inc - b_bar.
    pub direct: f64,
    /// Effective barrier position a + <J'>_inc - <R F'>_inc.
    pub b_bar: f64,
}

/// Joint mean-square deviation of the scattered packets and its pieces.
#[derive(Debug, Clone, Copy)]
pub struct JointVariance {
    /// l^2 - 2 (hbar t/m) chi + (hbar t/m)^2 var_k_joint.
    pub var: f64,
    /// t = 0 coefficient, nm^2; strictly above l0^2 for any real barrier.
    pub l_sq: f64,
    /// Cross covariance of group delay and wavenumber, dimensionless.
    pub chi: f64,
    /// Weighted wavenumber variance of the two channels, nm^-2.
    pub var_k_joint: f64,
}

/// Quadrature-window controls.
#[derive(Debug, Clone, Copy)]
pub struct GridSettings {
    /// Window half-width in units of sigma_k.
    pub width_factor: f64,
    /// Base node budget before feature refinement.
    pub node_budget: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            width_factor: DEFAULT_WIDTH_FACTOR,
            node_budget: DEFAULT_NODE_COUNT,
        }
    }
}

/// Per-node tables of the scattering data against the packet weight, with
/// every average the paper's rule (one shared quadrature) produces.
pub struct PacketScattering {
    spec: PacketSpec,
    profile: PotentialProfile,
    units: UnitSystem,
    grid: KGrid,
    /// Normalized incident weight squared at the nodes.
    m2: Vec<f64>,
    /// d(ln A)/dk at the nodes.
    lnap: Vec<f64>,
    /// Tunneling parameters at the nodes (parity-extended for k < 0).
    sc: Vec<ScatteringData>,
    norm_const_sq: f64,
    t_bar: f64,
    r_bar: f64,
}

impl PacketScattering {
    pub fn new(
        spec: PacketSpec,
        profile: PotentialProfile,
        units: UnitSystem,
    ) -> Result<Self> {
        Self::with_settings(spec, profile, units, GridSettings::default())
    }

    pub fn with_settings(
        spec: PacketSpec,
        profile: PotentialProfile,
        units: UnitSystem,
        settings: GridSettings,
    ) -> Result<Self> {
        spec.validate_fields()?;
        if (spec.mass_ratio - units.mass_ratio).abs() > 1e-12 {
            return Err(TunnelError::Domain(
                "packet and unit system disagree on the effective mass".into(),
            ));
        }
        let hints: Vec<RefinementHint> = profile
            .barrier_tops()
            .into_iter()
            .map(|v| {
                Ok(RefinementHint {
                    center: units.k_from_energy(v)?,
                    phase_length: profile.width(),
                })
            })
            .collect::<Result<_>>()?;
        let grid = KGrid::for_packet(
            spec.k0,
            spec.sigma_k(),
            settings.width_factor,
            settings.node_budget,
            &hints,
        )?;

        let norm_const_sq = {
            let raw = grid.integrate(|k| {
                let a = spec.weight(k);
                a * a
            })?;
            if !(raw > 0.0) {
                return Err(TunnelError::Domain(
                    "packet weight has zero norm on the window".into(),
                ));
            }
            1.0 / raw
        };

        let nodes = grid.nodes().to_vec();
        let m2: Vec<f64> = nodes
            .iter()
            .map(|&k| {
                let a = spec.weight(k);
                norm_const_sq * a * a
            })
            .collect();
        let lnap: Vec<f64> = nodes.iter().map(|&k| spec.weight_log_derivative(k)).collect();

        // One tracked sweep over ascending |k|, mapped back by parity.
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&i, &j| nodes[i].abs().partial_cmp(&nodes[j].abs()).unwrap());
        let mags: Vec<f64> = order.iter().map(|&i| nodes[i].abs()).collect();
        let sweep = scatter::phase_sweep(&profile, &units, &mags, spec.sigma_k())?;
        let mut sc: Vec<Option<ScatteringData>> = vec![None; nodes.len()];
        for (pos, &i) in order.iter().enumerate() {
            let data = if nodes[i] < 0.0 {
                sweep[pos].parity_flipped()
            } else {
                sweep[pos]
            };
            sc[i] = Some(data);
        }
        let sc: Vec<ScatteringData> = sc.into_iter().map(Option::unwrap).collect();

        let mut this = Self {
            spec,
            profile,
            units,
            grid,
            m2,
            lnap,
            sc,
            norm_const_sq,
            t_bar: 0.0,
            r_bar: 0.0,
        };
        this.t_bar = this.inc_average(|d, _| d.t)?;
        this.r_bar = 1.0 - this.t_bar;
        this.validate_shape()?;
        Ok(this)
    }

    /// Custom shapes must actually produce the declared t = 0 spatial spread.
    fn validate_shape(&self) -> Result<()> {
        if matches!(self.spec.shape, PacketShape::Gaussian) {
            return Ok(());
        }
        let var0 = self.inc_average_with(|_, i| self.lnap[i] * self.lnap[i])?;
        let l0_sq = self.spec.l0 * self.spec.l0;
        if (var0 - l0_sq).abs() > 1e-3 * l0_sq {
            return Err(TunnelError::Domain(format!(
                "custom shape has t=0 variance {var0} nm^2, declared l0^2 = {l0_sq} nm^2"
            )));
        }
        let mean_k = self.inc_average(|d, _| d.k)?;
        if (mean_k - self.spec.k0).abs() > 1e-3 * self.spec.sigma_k() {
            return Err(TunnelError::Domain(format!(
                "custom shape has mean wavenumber {mean_k}, declared k0 = {}",
                self.spec.k0
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> &PacketSpec {
        &self.spec
    }

    pub fn profile(&self) -> &PotentialProfile {
        &self.profile
    }

    pub fn units(&self) -> &UnitSystem {
        &self.units
    }

    pub fn grid(&self) -> &KGrid {
        &self.grid
    }

    /// Normalized incident weight squared at wavenumber k.
    pub fn incident_density(&self, k: f64) -> f64 {
        let a = self.spec.weight(k);
        self.norm_const_sq * a * a
    }

    /// Scattering data at the quadrature nodes.
    pub fn node_data(&self) -> &[ScatteringData] {
        &self.sc
    }

    /// (T_bar, R_bar), with R_bar = 1 - T_bar.
    pub fn norms(&self) -> (f64, f64) {
        (self.t_bar, self.r_bar)
    }

    /// R_bar by direct quadrature of R M^2, the cross-check route.
    pub fn r_bar_direct(&self) -> Result<f64> {
        self.inc_average(|d, _| d.r)
    }

    fn weighted_sum(&self, f: impl Fn(&ScatteringData, usize) -> f64) -> Result<f64> {
        let vals: Vec<f64> = self
            .sc
            .iter()
            .enumerate()
            .map(|(i, d)| self.m2[i] * f(d, i))
            .collect();
        self.grid.integrate_values(&vals)
    }

    /// <f>_inc under the incident distribution.
    pub fn inc_average(&self, f: impl Fn(&ScatteringData, f64) -> f64) -> Result<f64> {
        self.weighted_sum(|d, _| f(d, d.k))
    }

    fn inc_average_with(&self, f: impl Fn(&ScatteringData, usize) -> f64) -> Result<f64> {
        self.weighted_sum(f)
    }

    /// <f>_tr: average against T(k) M^2(k), normalized by T_bar.
    pub fn tr_average(&self, f: impl Fn(&ScatteringData, f64) -> f64) -> Result<f64> {
        if self.t_bar < TR_CHANNEL_FLOOR {
            return Err(TunnelError::EmptyChannel("transmission".into()));
        }
        Ok(self.weighted_sum(|d, _| d.t * f(d, d.k))? / self.t_bar)
    }

    /// <f>_ref in the incident variable: average against R(k) M^2(k),
    /// normalized by R_bar. Even functions of k keep their value in the
    /// reflected packet's own variable; odd ones flip sign.
    pub fn ref_average(&self, f: impl Fn(&ScatteringData, f64) -> f64) -> Result<f64> {
        if self.r_bar < REF_CHANNEL_FLOOR {
            return Err(TunnelError::EmptyChannel("reflection".into()));
        }
        Ok(self.weighted_sum(|d, _| d.r * f(d, d.k))? / self.r_bar)
    }

    /// n-th wavenumber moment of a packet over its own distribution; for the
    /// reflected packet the variable change k -> -k contributes (-1)^n.
    pub fn k_moment(&self, kind: PacketKind, n: u32) -> Result<f64> {
        let pow = |k: f64| k.powi(n as i32);
        match kind {
            PacketKind::Incident => self.inc_average(|_, k| pow(k)),
            PacketKind::Transmitted | PacketKind::ToBeTransmitted => {
                self.tr_average(|_, k| pow(k))
            }
            PacketKind::Reflected => {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                Ok(sign * self.ref_average(|_, k| pow(k))?)
            }
            PacketKind::ToBeReflected => self.ref_average(|_, k| pow(k)),
        }
    }

    /// Mean wavenumber of the reflected packet with its sign folded:
    /// `<-k>_ref`, positive for a forward-incident packet.
    pub fn mean_minus_k_ref(&self) -> Result<f64> {
        self.ref_average(|_, k| k)
    }

    /// Full moment report for one packet kind.
    pub fn moment_report(&self, kind: PacketKind) -> Result<MomentReport> {
        let hm = self.units.hbar_over_mass();
        let a = self.profile.a();
        let d = self.profile.width();
        match kind {
            PacketKind::Incident => {
                let mean_k = self.inc_average(|_, k| k)?;
                let var_k = self.inc_average(|_, k| (k - mean_k) * (k - mean_k))?;
                let c0 = self.inc_average_with(|_, i| self.lnap[i] * self.lnap[i])?;
                Ok(MomentReport {
                    norm: 1.0,
                    mean_k,
                    var_k,
                    x_slope: hm * mean_k,
                    x_intercept: 0.0,
                    varx_c0: c0,
                    varx_c1: 0.0,
                    varx_c2: hm * hm * var_k,
                })
            }
            PacketKind::Transmitted | PacketKind::ToBeTransmitted => {
                let mean_k = self.tr_average(|_, k| k)?;
                let var_k = self.tr_average(|_, k| (k - mean_k) * (k - mean_k))?;
                let mean_jp = self.tr_average(|d, _| d.jp)?;
                let var_jp = self.tr_average(|d, _| (d.jp - mean_jp) * (d.jp - mean_jp))?;
                let cov = self.tr_average(|d, k| (d.jp - mean_jp) * (k - mean_k))?;
                let ln_m2 = self.ln_weight_sq_average(false)?;
                let (slope, intercept) = match kind {
                    PacketKind::Transmitted => (hm * mean_k, d - mean_jp),
                    _ => (hm * mean_k, 0.0),
                };
                Ok(MomentReport {
                    norm: self.t_bar,
                    mean_k,
                    var_k,
                    x_slope: slope,
                    x_intercept: intercept,
                    varx_c0: ln_m2 + var_jp,
                    varx_c1: -2.0 * hm * cov,
                    varx_c2: hm * hm * var_k,
                })
            }
            PacketKind::Reflected | PacketKind::ToBeReflected => {
                let mean_k_fold = self.ref_average(|_, k| k)?; // <-k>_ref
                let var_k = self
                    .ref_average(|_, k| (k - mean_k_fold) * (k - mean_k_fold))?;
                let g_mean = self.ref_average(|d, _| d.jp - d.fp)?;
                let var_g = self
                    .ref_average(|d, _| (d.jp - d.fp - g_mean) * (d.jp - d.fp - g_mean))?;
                let cov = self.ref_average(|d, k| (d.jp - d.fp - g_mean) * (k - mean_k_fold))?;
                let ln_m2 = self.ln_weight_sq_average(true)?;
                let (mean_k, slope, intercept) = match kind {
                    PacketKind::Reflected => {
                        (-mean_k_fold, -hm * mean_k_fold, 2.0 * a + g_mean)
                    }
                    _ => (mean_k_fold, hm * mean_k_fold, 0.0),
                };
                Ok(MomentReport {
                    norm: self.r_bar,
                    mean_k,
                    var_k,
                    x_slope: slope,
                    x_intercept: intercept,
                    varx_c0: ln_m2 + var_g,
                    varx_c1: -2.0 * hm * cov,
                    varx_c2: hm * hm * var_k,
                })
            }
        }
    }

    /// <(ln' M)^2> over a scattered channel; ln' M picks up T'/(2T) on top of
    /// the incident ln' A (R'/(2R) = -T'/(2R) for the reflected packet).
    ///
    /// The channel-weighted integrand is expanded as
    /// w (ln'A +- T'/(2w))^2 = w (ln'A)^2 +- ln'A T' + T'^2/(4w) so the
    /// division never meets an underflowed weight; where w is at roundoff
    /// the T'-pieces are noise and only the first term survives.
    fn ln_weight_sq_average(&self, reflected: bool) -> Result<f64> {
        let product = |w: f64, tp: f64, lnap: f64, sign: f64| -> f64 {
            if w < POINT_FLOOR {
                return w * lnap * lnap;
            }
            w * lnap * lnap + sign * lnap * tp + tp * tp / (4.0 * w)
        };
        if reflected {
            if self.r_bar < REF_CHANNEL_FLOOR {
                return Err(TunnelError::EmptyChannel("reflection".into()));
            }
            Ok(self
                .weighted_sum(|d, i| product(d.r, d.tp, self.lnap[i], -1.0))?
                / self.r_bar)
        } else {
            if self.t_bar < TR_CHANNEL_FLOOR {
                return Err(TunnelError::EmptyChannel("transmission".into()));
            }
            Ok(self
                .weighted_sum(|d, i| product(d.t, d.tp, self.lnap[i], 1.0))?
                / self.t_bar)
        }
    }

    fn tr_average_with(&self, f: impl Fn(&ScatteringData, usize) -> f64) -> Result<f64> {
        if self.t_bar < TR_CHANNEL_FLOOR {
            return Err(TunnelError::EmptyChannel("transmission".into()));
        }
        Ok(self.weighted_sum(|d, i| d.t * f(d, i))? / self.t_bar)
    }

    fn ref_average_with(&self, f: impl Fn(&ScatteringData, usize) -> f64) -> Result<f64> {
        if self.r_bar < REF_CHANNEL_FLOOR {
            return Err(TunnelError::EmptyChannel("reflection".into()));
        }
        Ok(self.weighted_sum(|d, i| d.r * f(d, i))? / self.r_bar)
    }

    /// <x>(t) of one packet kind, nm.
    pub fn mean_x(&self, kind: PacketKind, t: f64) -> Result<f64> {
        Ok(self.moment_report(kind)?.mean_x(t))
    }

    /// <(dx)^2>(t) of one packet kind, nm^2.
    pub fn var_x(&self, kind: PacketKind, t: f64) -> Result<f64> {
        Ok(self.moment_report(kind)?.var_x(t))
    }

    /// Joint CM-to-barrier distance S_tr+ref(t) by both routes. A channel
    /// below the weight floor contributes nothing to the weighted sum.
    pub fn joint_distance(&self, t: f64) -> Result<JointDistance> {
        let mut weighted = 0.0;
        if self.t_bar >= TR_CHANNEL_FLOOR {
            let tr = self.moment_report(PacketKind::Transmitted)?;
            weighted += self.t_bar * (tr.mean_x(t) - self.profile.b());
        }
        if self.r_bar >= REF_CHANNEL_FLOOR {
            let re = self.moment_report(PacketKind::Reflected)?;
            weighted += self.r_bar * (self.profile.a() - re.mean_x(t));
        }
        let mean_jp_inc = self.inc_average(|d, _| d.jp)?;
        let mean_rfp_inc = self.inc_average(|d, _| d.r * d.fp)?;
        let b_bar = self.profile.a() + mean_jp_inc - mean_rfp_inc;
        let mean_k_inc = self.inc_average(|_, k| k)?;
        let direct = self.units.hbar_over_mass() * mean_k_inc * t - b_bar;
        Ok(JointDistance {
            weighted,
            direct,
            b_bar,
        })
    }

    /// Joint mean-square deviation of the scattered pair and its pieces.
    pub fn joint_variance(&self, t: f64) -> Result<JointVariance> {
        let mut var_k_joint = 0.0;
        let mut chi = 0.0;
        let mut spread = 0.0;
        if self.t_bar >= TR_CHANNEL_FLOOR {
            let tr = self.moment_report(PacketKind::Transmitted)?;
            var_k_joint += self.t_bar * tr.var_k;
            chi -= self.t_bar * tr.varx_c1 / (2.0 * self.units.hbar_over_mass());
            let jp_mean = self.tr_average(|d, _| d.jp)?;
            spread += self.t_bar
                * self.tr_average(|d, _| (d.jp - jp_mean) * (d.jp - jp_mean))?;
        }
        if self.r_bar >= REF_CHANNEL_FLOOR {
            let re = self.moment_report(PacketKind::Reflected)?;
            var_k_joint += self.r_bar * re.var_k;
            chi -= self.r_bar * re.varx_c1 / (2.0 * self.units.hbar_over_mass());
            let g_mean = self.ref_average(|d, _| d.jp - d.fp)?;
            spread += self.r_bar
                * self.ref_average(|d, _| {
                    (d.jp - d.fp - g_mean) * (d.jp - d.fp - g_mean)
                })?;
        }
        let lnap_sq = self.inc_average_with(|_, i| self.lnap[i] * self.lnap[i])?;
        // -1/4 <(ln'T)(ln'R)> = +1/4 <T'^2/(T R)>, positive and regular at
        // resonances and at k = 0. Where either probability sits at
        // roundoff, T' is noise and the true integrand vanishes there.
        let cross = 0.25
            * self.inc_average(|d, _| {
                if d.t < POINT_FLOOR || d.r < POINT_FLOOR {
                    0.0
                } else {
                    d.tp * d.tp / (d.t * d.r)
                }
            })?;
        let l_sq = lnap_sq + cross + spread;
        let ht = self.units.hbar_over_mass() * t;
        Ok(JointVariance {
            var: l_sq - 2.0 * ht * chi + ht * ht * var_k_joint,
            l_sq,
            chi,
            var_k_joint,
        })
    }

    /// Weighted sum T_bar var_tr(t) + R_bar var_ref(t); agrees with
    /// [`Self::joint_variance`] up to the floor regularization.
    pub fn joint_variance_weighted(&self, t: f64) -> Result<f64> {
        let mut acc = 0.0;
        if self.t_bar >= TR_CHANNEL_FLOOR {
            acc += self.t_bar * self.moment_report(PacketKind::Transmitted)?.var_x(t);
        }
        if self.r_bar >= REF_CHANNEL_FLOOR {
            acc += self.r_bar * self.moment_report(PacketKind::Reflected)?.var_x(t);
        }
        Ok(acc)
    }
}

/// (T_bar, R_bar) for a packet against a profile.
pub fn norms(
    spec: &PacketSpec,
    profile: &PotentialProfile,
    units: &UnitSystem,
) -> Result<(f64, f64)> {
    Ok(PacketScattering::new(spec.clone(), profile.clone(), *units)?.norms())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Segment;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const K0: f64 = 0.18753876478771342;

    fn units() -> UnitSystem {
        UnitSystem::new(0.067).unwrap()
    }

    fn engine(l0: f64, profile: PotentialProfile) -> PacketScattering {
        let spec = PacketSpec::gaussian(K0, l0, 0.067).unwrap();
        PacketScattering::new(spec, profile, units()).unwrap()
    }

    fn fig1_engine() -> PacketScattering {
        engine(15.0, PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap())
    }

    fn free_engine() -> PacketScattering {
        engine(15.0, PotentialProfile::rectangular(0.0, 100.0, 5.0).unwrap())
    }

    #[test]
    fn free_space_norms() {
        let ps = free_engine();
        let (t_bar, r_bar) = ps.norms();
        assert_abs_diff_eq!(t_bar, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r_bar, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn opaque_barrier_mostly_reflects() {
        let ps = fig1_engine();
        let (t_bar, r_bar) = ps.norms();
        assert!(t_bar > 1e-4 && t_bar < 1e-2, "T_bar = {t_bar}");
        assert!(r_bar > 0.99);
        assert_abs_diff_eq!(ps.r_bar_direct().unwrap(), r_bar, epsilon = 1e-12);
    }

    #[test]
    fn point_like_packet_tunnels_freely() {
        // l0 -> 0 floods the window with above-barrier harmonics
        let ps = engine(0.05, PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap());
        let (t_bar, _) = ps.norms();
        assert!(t_bar > 0.9, "T_bar = {t_bar}");
    }

    #[test]
    fn incident_first_moment_is_k0() {
        let ps = fig1_engine();
        assert_relative_eq!(
            ps.k_moment(PacketKind::Incident, 1).unwrap(),
            K0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn momentum_exchange_rule() {
        // <k^n>_inc = T <k^n>_tr + R <(-k)^n>_ref for n = 1, 2
        for profile in [
            PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap(),
            PotentialProfile::new(
                40.0,
                vec![
                    Segment { width: 1.0, height: 0.25 },
                    Segment { width: 2.0, height: 0.1 },
                ],
            )
            .unwrap(),
        ] {
            let ps = engine(12.0, profile);
            let (t_bar, r_bar) = ps.norms();
            for n in 1..=2 {
                let inc = ps.k_moment(PacketKind::Incident, n).unwrap();
                let tr = ps.k_moment(PacketKind::Transmitted, n).unwrap();
                let re = ps.k_moment(PacketKind::Reflected, n).unwrap();
                let minus = if n % 2 == 0 { re } else { -re };
                assert_abs_diff_eq!(inc, t_bar * tr + r_bar * minus, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn to_be_kinds_share_scattered_distributions() {
        let ps = fig1_engine();
        for n in 1..=3 {
            assert_eq!(
                ps.k_moment(PacketKind::ToBeTransmitted, n).unwrap(),
                ps.k_moment(PacketKind::Transmitted, n).unwrap()
            );
        }
        assert_eq!(
            ps.k_moment(PacketKind::ToBeReflected, 1).unwrap(),
            ps.mean_minus_k_ref().unwrap()
        );
    }

    #[test]
    fn gaussian_transmitted_mean_shift() {
        // <k>_tr - k0 = <T'>_inc / (4 l0^2 T_bar) for the Gaussian weight
        let ps = fig1_engine();
        let l0 = 15.0;
        let shift = ps.k_moment(PacketKind::Transmitted, 1).unwrap() - K0;
        let tp_inc = ps.inc_average(|d, _| d.tp).unwrap();
        let expect = tp_inc / (4.0 * l0 * l0 * ps.norms().0);
        assert_relative_eq!(shift, expect, max_relative = 1e-6);
    }

    #[test]
    fn gaussian_reflected_mean_shift() {
        let ps = fig1_engine();
        let l0 = 15.0;
        let shift = ps.mean_minus_k_ref().unwrap() - K0;
        let rp_inc = -ps.inc_average(|d, _| d.tp).unwrap();
        let expect = rp_inc / (4.0 * l0 * l0 * ps.norms().1);
        assert_relative_eq!(shift, expect, max_relative = 1e-6);
    }

    #[test]
    fn reflected_moves_backward() {
        let ps = fig1_engine();
        assert!(ps.mean_minus_k_ref().unwrap() > 0.0);
        assert!(ps.k_moment(PacketKind::Reflected, 1).unwrap() < 0.0);
    }

    #[test]
    fn incident_report_matches_initial_condition() {
        let ps = fig1_engine();
        let rep = ps.moment_report(PacketKind::Incident).unwrap();
        assert_abs_diff_eq!(rep.mean_x(0.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(rep.var_x(0.0), 225.0, max_relative = 1e-10);
        assert_relative_eq!(rep.var_k, 1.0 / 900.0, max_relative = 1e-10);
        assert_abs_diff_eq!(rep.varx_c1, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn free_case_reduces_to_incident_kinematics() {
        let ps = free_engine();
        let inc = ps.moment_report(PacketKind::Incident).unwrap();
        let tr = ps.moment_report(PacketKind::Transmitted).unwrap();
        // J' = d exactly: intercept d - <J'>_tr = 0, variance unchanged
        assert_abs_diff_eq!(tr.x_intercept, 0.0, epsilon = 1e-9);
        assert_relative_eq!(tr.x_slope, inc.x_slope, max_relative = 1e-12);
        assert_relative_eq!(tr.varx_c0, inc.varx_c0, max_relative = 1e-9);
        assert_abs_diff_eq!(tr.varx_c1, 0.0, epsilon = 1e-10);
        assert_relative_eq!(tr.varx_c2, inc.varx_c2, max_relative = 1e-12);
    }

    #[test]
    fn variance_is_positive_over_time() {
        let ps = fig1_engine();
        for kind in [
            PacketKind::Incident,
            PacketKind::Transmitted,
            PacketKind::Reflected,
            PacketKind::ToBeTransmitted,
            PacketKind::ToBeReflected,
        ] {
            for &t in &[0.0, 50.0, 500.0, 5000.0] {
                assert!(ps.var_x(kind, t).unwrap() > 0.0, "{kind:?} at t = {t}");
            }
        }
    }

    #[test]
    fn joint_distance_routes_agree() {
        let ps = fig1_engine();
        for &t in &[0.0, 100.0, 750.0] {
            let jd = ps.joint_distance(t).unwrap();
            assert_abs_diff_eq!(jd.weighted, jd.direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn free_case_joint_distance() {
        let ps = free_engine();
        let jd = ps.joint_distance(0.0).unwrap();
        // b_bar = a + d for free space
        assert_relative_eq!(jd.b_bar, 105.0, max_relative = 1e-10);
        let v0 = units().velocity(K0);
        let t_root = 105.0 / v0;
        let at_root = ps.joint_distance(t_root).unwrap();
        assert_abs_diff_eq!(at_root.direct, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_barrier_b_bar_drops_phase_asymmetry() {
        let ps = fig1_engine();
        let jd = ps.joint_distance(0.0).unwrap();
        let jp_inc = ps.inc_average(|d, _| d.jp).unwrap();
        assert_relative_eq!(jd.b_bar, 100.0 + jp_inc, max_relative = 1e-10);
    }

    #[test]
    fn joint_variance_closed_form_gaussian() {
        // <(dk)^2>_tr+ref = (1/4 l0^2) (1 - <T'>^2_inc/(4 l0^2 T R))
        let ps = fig1_engine();
        let l0 = 15.0;
        let (t_bar, r_bar) = ps.norms();
        let jv = ps.joint_variance(0.0).unwrap();
        let tp_inc = ps.inc_average(|d, _| d.tp).unwrap();
        let expect = (1.0 / (4.0 * l0 * l0))
            * (1.0 - tp_inc * tp_inc / (4.0 * l0 * l0 * t_bar * r_bar));
        assert_relative_eq!(jv.var_k_joint, expect, max_relative = 1e-6);
        // never broader than the incident packet in k
        let inc = ps.moment_report(PacketKind::Incident).unwrap();
        assert!(jv.var_k_joint <= inc.var_k * (1.0 + 1e-12));
    }

    #[test]
    fn joint_variance_routes_agree() {
        let ps = fig1_engine();
        for &t in &[0.0, 200.0, 1500.0] {
            let jv = ps.joint_variance(t).unwrap();
            let weighted = ps.joint_variance_weighted(t).unwrap();
            assert_relative_eq!(jv.var, weighted, max_relative = 1e-9);
        }
    }

    #[test]
    fn free_case_joint_variance() {
        let ps = free_engine();
        let jv = ps.joint_variance(0.0).unwrap();
        assert_relative_eq!(jv.l_sq, 225.0, max_relative = 1e-9);
        assert_abs_diff_eq!(jv.chi, 0.0, epsilon = 1e-10);
        let inc = ps.moment_report(PacketKind::Incident).unwrap();
        assert_relative_eq!(jv.var_k_joint, inc.var_k, max_relative = 1e-10);
    }

    #[test]
    fn scattered_pair_spreads_beyond_l0() {
        let ps = fig1_engine();
        let jv = ps.joint_variance(0.0).unwrap();
        assert!(jv.l_sq > 225.0);
    }

    #[test]
    fn custom_shape_matches_gaussian() {
        let spec = PacketSpec {
            k0: K0,
            l0: 15.0,
            shape: PacketShape::Custom {
                weight: Arc::new(|k: f64, k0: f64, l0: f64| {
                    (-l0 * l0 * (k - k0) * (k - k0)).exp()
                }),
                log_derivative: None,
            },
            mass_ratio: 0.067,
        };
        let profile = PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap();
        let custom = PacketScattering::new(spec, profile, units()).unwrap();
        let gauss = fig1_engine();
        assert_relative_eq!(custom.norms().0, gauss.norms().0, max_relative = 1e-9);
        assert_relative_eq!(
            custom.k_moment(PacketKind::Transmitted, 1).unwrap(),
            gauss.k_moment(PacketKind::Transmitted, 1).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn custom_shape_with_wrong_width_is_rejected() {
        let spec = PacketSpec {
            k0: K0,
            l0: 10.0, // actual width below is 15 nm
            shape: PacketShape::Custom {
                weight: Arc::new(|k: f64, k0: f64, _l0: f64| {
                    (-15.0 * 15.0 * (k - k0) * (k - k0)).exp()
                }),
                log_derivative: None,
            },
            mass_ratio: 0.067,
        };
        let profile = PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap();
        assert!(PacketScattering::new(spec, profile, units()).is_err());
    }

    #[test]
    fn empty_channel_is_reported() {
        let ps = free_engine();
        let err = ps.k_moment(PacketKind::Reflected, 1).unwrap_err();
        assert!(err.to_string().contains("reflection"));
    }
}
