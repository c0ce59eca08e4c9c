//! Latency/bandwidth model of the VPN-overlay star network.
//!
//! Each client link has an RTT distribution (truncated normal, minimum
//! 1 us after halving) and a bandwidth. A node's RTT mean is the host RTT
//! mean plus the per-client VPN+VM overhead. One-way latency is RTT/2.
//! Traffic between two non-server endpoints always crosses two legs,
//! relayed by the server.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::Rng;
use crate::topology::{EntityId, Topology};

/// Default probe payload, the classic 56-byte ping.
pub const DEFAULT_PING_BYTES: u64 = 56;

#[derive(Debug, Clone)]
struct LinkParams {
    rtt_mean_us: f64,
    jitter_us: f64,
    overhead_rtt_us: f64,
    bandwidth_bytes_per_s: f64,
}

/// Sampling model for every link of a topology, index-aligned with
/// `Topology::clients`.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    links: Vec<LinkParams>,
    /// Optional extra round-trip cost applied to MPI-style probes; the
    /// measured MPI latencies were consistent with plain pings, so this
    /// defaults to zero.
    pub mpi_extra_rtt_us: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown endpoint index {0}")]
    UnknownEndpoint(usize),
    #[error("target {0} is down")]
    TargetDown(String),
}

impl LatencyModel {
    pub fn from_topology(topo: &Topology) -> Self {
        LatencyModel {
            links: topo
                .clients
                .iter()
                .map(|c| LinkParams {
                    rtt_mean_us: c.client_rtt_mean_us,
                    jitter_us: c.client_rtt_jitter_us,
                    overhead_rtt_us: c.overhead_rtt_us,
                    bandwidth_bytes_per_s: c.bandwidth_bytes_per_s,
                })
                .collect(),
            mpi_extra_rtt_us: 0.0,
        }
    }

    fn link(&self, e: EntityId) -> Result<Option<&LinkParams>, NetError> {
        match e.client_index() {
            None => Ok(None),
            Some(i) => self.links.get(i).map(Some).ok_or(NetError::UnknownEndpoint(i)),
        }
    }

    /// Configured RTT mean for an endpoint; the server itself is 0.
    pub fn rtt_mean_us(&self, e: EntityId) -> Result<f64, NetError> {
        Ok(match self.link(e)? {
            None => 0.0,
            Some(l) if e.is_node() => l.rtt_mean_us + l.overhead_rtt_us,
            Some(l) => l.rtt_mean_us,
        })
    }

    pub fn jitter_us(&self, e: EntityId) -> Result<f64, NetError> {
        Ok(self.link(e)?.map(|l| l.jitter_us).unwrap_or(0.0))
    }

    /// One-way latency sample in whole microseconds:
    /// `max(1, Normal(rtt_mean, jitter) / 2)`, rounded.
    pub fn one_way_us(&self, e: EntityId, rng: &mut Rng) -> Result<u64, NetError> {
        let mean = self.rtt_mean_us(e)?;
        if mean == 0.0 {
            return Ok(0);
        }
        let jitter = self.jitter_us(e)?;
        let sample = if jitter == 0.0 { mean / 2.0 } else { rng.normal(mean, jitter) / 2.0 };
        Ok(sample.max(1.0).round() as u64)
    }

    /// Serialization time of `bytes` on the endpoint's link, rounded to
    /// whole microseconds. Zero for the server end of a leg.
    pub fn transfer_us(&self, e: EntityId, bytes: u64) -> Result<u64, NetError> {
        Ok(match self.link(e)? {
            None => 0,
            Some(l) => (bytes as f64 * 1e6 / l.bandwidth_bytes_per_s).round() as u64,
        })
    }

    /// Delay of one server<->endpoint leg carrying `bytes`.
    pub fn leg_us(&self, e: EntityId, bytes: u64, rng: &mut Rng) -> Result<u64, NetError> {
        Ok(self.one_way_us(e, rng)? + self.transfer_us(e, bytes)?)
    }

    /// End-to-end one-way delay between two endpoints: zero for the same
    /// endpoint, one leg when the server is one end, two legs otherwise.
    pub fn path_us(&self, src: EntityId, dst: EntityId, bytes: u64, rng: &mut Rng) -> Result<u64, NetError> {
        if src == dst {
            return Ok(0);
        }
        let mut total = 0;
        if src != EntityId::Server {
            total += self.leg_us(src, bytes, rng)?;
        }
        if dst != EntityId::Server {
            total += self.leg_us(dst, bytes, rng)?;
        }
        Ok(total)
    }
}

/// Kinds of timed messages exchanged over the star network. The boot
/// protocol steps are modeled as message exchanges, not wire formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    VpnRequest,
    VpnGrant,
    VpnDeny,
    DhcpRequest,
    DhcpReply,
    KernelRequest,
    KernelPayload,
    MountRequest,
    MountReply,
    MountCommit,
    MountAck,
    RegisterRequest,
    RegisterAck,
    /// Boot step refused because a server service is disabled.
    ServiceDenied(ServiceKind),
    SweepPing,
    SweepPong,
    WatchdogQuery,
    WatchdogStatus(NodeSeen),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    AddressAssignment,
    KernelTransfer,
    RootFilesystem,
    QueueManager,
}

impl ServiceKind {
    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::AddressAssignment => "address-assignment",
            ServiceKind::KernelTransfer => "kernel-transfer",
            ServiceKind::RootFilesystem => "root-filesystem",
            ServiceKind::QueueManager => "queue-manager",
        }
    }
}

/// What the server's health ledger says about a node when a watchdog asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSeen {
    On,
    Off,
    Unknown,
}

/// A timed message between entities of the star network.
#[derive(Debug, Clone, Copy)]
pub struct NetMessage {
    pub src: EntityId,
    pub dst: EntityId,
    pub size_bytes: u64,
    pub kind: NetKind,
}

impl NetKind {
    pub fn label(self) -> &'static str {
        match self {
            NetKind::VpnRequest => "vpn-request",
            NetKind::VpnGrant => "vpn-grant",
            NetKind::VpnDeny => "vpn-deny",
            NetKind::DhcpRequest => "dhcp-request",
            NetKind::DhcpReply => "dhcp-reply",
            NetKind::KernelRequest => "kernel-request",
            NetKind::KernelPayload => "kernel-payload",
            NetKind::MountRequest => "mount-request",
            NetKind::MountReply => "mount-reply",
            NetKind::MountCommit => "mount-commit",
            NetKind::MountAck => "mount-ack",
            NetKind::RegisterRequest => "register-request",
            NetKind::RegisterAck => "register-ack",
            NetKind::ServiceDenied(_) => "service-denied",
            NetKind::SweepPing => "sweep-ping",
            NetKind::SweepPong => "sweep-pong",
            NetKind::WatchdogQuery => "watchdog-query",
            NetKind::WatchdogStatus(_) => "watchdog-status",
        }
    }
}

/// Sample statistics of a probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub trials: u32,
    pub mean_us: f64,
    pub stddev_us: f64,
}

impl ProbeStats {
    pub fn from_samples(samples: &[u64]) -> ProbeStats {
        let n = samples.len();
        let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            samples.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        ProbeStats { trials: n as u32, mean_us: mean, stddev_us: var.sqrt() }
    }

    pub fn stderr_us(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.stddev_us / (self.trials as f64).sqrt()
        }
    }
}

/// Round-trip samples of `trials` echo probes server <-> endpoint. Each
/// trial is an independent request leg plus reply leg.
pub fn probe_rtts(
    model: &LatencyModel,
    target: EntityId,
    payload_bytes: u64,
    trials: u32,
    extra_rtt_us: f64,
    rng: &mut Rng,
) -> Result<Vec<u64>, NetError> {
    let extra = extra_rtt_us.max(0.0).round() as u64;
    (0..trials)
        .map(|_| {
            let out = model.leg_us(target, payload_bytes, rng)?;
            let back = model.leg_us(target, payload_bytes, rng)?;
            Ok(out + back + extra)
        })
        .collect()
}
