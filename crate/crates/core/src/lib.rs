//! Characteristic times for one-dimensional quantum tunneling.
//!
//! The crate computes, for a wave packet incident on a piecewise-constant
//! barrier:
//!
//! - transfer-matrix tunneling parameters T, R, J, F and their k-derivatives
//!   ([`scatter`]);
//! - asymptotic k-space moments of the incident, transmitted and reflected
//!   packets ([`packets`]);
//! - channel-resolved transit, delay and spatial-delay times, the scattering
//!   window bound, and a seeded gedanken-experiment sorter ([`channels`]);
//! - a direct time-domain Schroedinger propagation oracle ([`propagator`]).
//!
//! Internal units are (nm, fs, eV, electron masses); see [`units`].

pub mod channels;
pub mod error;
pub mod grid;
pub mod packets;
pub mod potential;
pub mod propagator;
pub mod scatter;
pub mod units;

pub use error::{Result, TunnelError};
pub use grid::{differentiate, KGrid, RefinementHint};
pub use packets::{MomentReport, PacketKind, PacketScattering, PacketShape, PacketSpec};
pub use potential::{PotentialProfile, Segment};
pub use channels::{
    channel_phases, channel_report, decompose_incident, delay_times, montecarlo_sort,
    scattering_window, swpa_times, transit_times, Channel, ChannelReport, DelayTimes,
    ScatteringWindow, SortReport, SwpaTimes, TransitTimes,
};
pub use scatter::{
    derivative_set, phase_sweep, rect_phase_derivative, transfer_matrix, transmission,
    tunneling_params, FluxMatrix, ScatteringData,
};
pub use units::{k_from_energy, UnitSystem, HALF_QUANTUM_EV_NM2, HBAR_EV_FS};
