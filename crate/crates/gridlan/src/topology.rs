//! Data model and config ingestion for the star network: one server, N host
//! clients, one virtual node per client. All links run client <-> server;
//! node-to-node traffic always transits the server.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: u64 = 86_400;

/// Addressable entity in the simulation. `Host`/`Node` carry the index of
/// their client in `Topology::clients` (config order).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum EntityId {
    Server,
    Host(u16),
    Node(u16),
}

impl EntityId {
    pub fn client_index(self) -> Option<usize> {
        match self {
            EntityId::Server => None,
            EntityId::Host(i) | EntityId::Node(i) => Some(i as usize),
        }
    }

    pub fn is_node(self) -> bool {
        matches!(self, EntityId::Node(_))
    }
}

/// Daily recurring availability window, `start`/`end` as times of day.
/// A window with `end` before `start` wraps past midnight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: String,
    pub end: String,
}

impl Window {
    pub fn bounds_s(&self) -> Option<(u64, u64)> {
        Some((parse_time_of_day(&self.start)?, parse_time_of_day(&self.end)?))
    }

    /// True when second-of-day `sod` falls inside the window.
    pub fn contains(&self, sod: u64) -> bool {
        match self.bounds_s() {
            Some((s, e)) if s < e => sod >= s && sod < e,
            Some((s, e)) if s > e => sod >= s || sod < e,
            _ => false,
        }
    }
}

/// Parses "HH:MM" or "HH:MM:SS" into seconds of day.
pub fn parse_time_of_day(s: &str) -> Option<u64> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 && parts.len() != 3 {
        return None;
    }
    let h: u64 = parts[0].parse().ok()?;
    let m: u64 = parts[1].parse().ok()?;
    let sec: u64 = if parts.len() == 3 { parts[2].parse().ok()? } else { 0 };
    if h > 23 || m > 59 || sec > 59 {
        return None;
    }
    Some(h * 3600 + m * 60 + sec)
}

/// A physical workstation participating in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: String,
    pub cores: u32,
    /// Round-trip time server <-> host, mean in microseconds.
    pub client_rtt_mean_us: f64,
    /// Standard deviation of the RTT distribution.
    #[serde(default)]
    pub client_rtt_jitter_us: f64,
    /// Additional round-trip cost of the VPN + VM layers; the node RTT mean
    /// is `client_rtt_mean_us + overhead_rtt_us`.
    pub overhead_rtt_us: f64,
    pub bandwidth_bytes_per_s: f64,
    /// VPN authorization: without a key the client never gets past the
    /// tunnel handshake.
    pub has_key: bool,
    /// Daily availability windows; absent means always available.
    #[serde(default)]
    pub schedule: Option<Vec<Window>>,
    #[serde(default)]
    pub os_label: String,
}

impl ClientSpec {
    /// True when the client accepts grid work at simulated second `t_s`.
    pub fn in_schedule(&self, t_s: u64) -> bool {
        match &self.schedule {
            None => true,
            Some(ws) => {
                let sod = t_s % SECONDS_PER_DAY;
                ws.iter().any(|w| w.contains(sod))
            }
        }
    }
}

/// The virtual machine hosted by a client, where computations run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub client_id: String,
    pub vcores: u32,
    pub kernel_size_bytes: u64,
    pub initramfs_size_bytes: u64,
}

/// Services the server must run for a functional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerServices {
    pub address_assignment: bool,
    pub kernel_transfer: bool,
    pub root_filesystem: bool,
    pub queue_manager: bool,
}

impl Default for ServerServices {
    fn default() -> Self {
        ServerServices {
            address_assignment: true,
            kernel_transfer: true,
            root_filesystem: true,
            queue_manager: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub id: String,
    #[serde(default)]
    pub services: ServerServices,
    /// Core count of the standalone comparison machine, when modeled.
    #[serde(default)]
    pub comparison_cores: Option<u32>,
}

/// The star network: server, host clients, and their virtual nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub server: ServerSpec,
    pub clients: Vec<ClientSpec>,
    pub nodes: Vec<NodeSpec>,
}

/// A violation names the offending field and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid topology: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl Topology {
    /// Checks every type invariant; returns the full list of violations
    /// (empty when the topology is valid).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, rule: &str| {
            out.push(Violation { field: field.to_string(), rule: rule.to_string() })
        };

        let sv = &self.server.services;
        for (name, on) in [
            ("address_assignment", sv.address_assignment),
            ("kernel_transfer", sv.kernel_transfer),
            ("root_filesystem", sv.root_filesystem),
            ("queue_manager", sv.queue_manager),
        ] {
            if !on {
                push(&format!("server.services.{name}"), "required service must be enabled");
            }
        }
        if let Some(c) = self.server.comparison_cores {
            if c == 0 {
                push("server.comparison_cores", "must be >= 1 when present");
            }
        }

        let mut seen = BTreeMap::new();
        for (i, c) in self.clients.iter().enumerate() {
            let f = |name: &str| format!("clients[{i}].{name}");
            if c.id.is_empty() {
                push(&f("id"), "must be non-empty");
            }
            if c.id == self.server.id {
                push(&f("id"), "must differ from the server id");
            }
            if let Some(prev) = seen.insert(c.id.clone(), i) {
                push(&f("id"), &format!("duplicate of clients[{prev}].id"));
            }
            if c.cores < 1 {
                push(&f("cores"), "must be >= 1");
            }
            if !(c.client_rtt_mean_us.is_finite() && c.client_rtt_mean_us > 0.0) {
                push(&f("client_rtt_mean_us"), "must be finite and positive");
            }
            if !(c.client_rtt_jitter_us.is_finite() && c.client_rtt_jitter_us >= 0.0) {
                push(&f("client_rtt_jitter_us"), "must be finite and non-negative");
            }
            if !(c.overhead_rtt_us.is_finite() && c.overhead_rtt_us >= 0.0) {
                push(&f("overhead_rtt_us"), "must be finite and non-negative");
            }
            if !(c.bandwidth_bytes_per_s.is_finite() && c.bandwidth_bytes_per_s > 0.0) {
                push(&f("bandwidth_bytes_per_s"), "must be finite and positive");
            }
            if let Some(ws) = &c.schedule {
                for (j, w) in ws.iter().enumerate() {
                    match w.bounds_s() {
                        None => push(
                            &f(&format!("schedule[{j}]")),
                            "start/end must be HH:MM or HH:MM:SS times of day",
                        ),
                        Some((s, e)) if s == e => push(
                            &f(&format!("schedule[{j}]")),
                            "start and end must differ",
                        ),
                        Some(_) => {}
                    }
                }
            }
        }

        let mut node_for: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let f = |name: &str| format!("nodes[{i}].{name}");
            match self.clients.iter().find(|c| c.id == n.client_id) {
                None => push(&f("client_id"), "references no client in the topology"),
                Some(c) => {
                    if n.vcores > c.cores {
                        push(&f("vcores"), &format!("exceeds host cores ({})", c.cores));
                    }
                }
            }
            if n.vcores < 1 {
                push(&f("vcores"), "must be >= 1");
            }
            if n.kernel_size_bytes == 0 {
                push(&f("kernel_size_bytes"), "must be positive");
            }
            if n.initramfs_size_bytes == 0 {
                push(&f("initramfs_size_bytes"), "must be positive");
            }
            if let Some(prev) = node_for.insert(n.client_id.as_str(), i) {
                push(
                    &f("client_id"),
                    &format!("client already has a node (nodes[{prev}]); exactly one node per client"),
                );
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            if !self.nodes.iter().any(|n| n.client_id == c.id) {
                push(&format!("clients[{i}]"), "client has no node; exactly one node per client");
            }
        }

        out
    }

    pub fn client_index(&self, id: &str) -> Option<usize> {
        self.clients.iter().position(|c| c.id == id)
    }

    pub fn node_for_client(&self, idx: usize) -> &NodeSpec {
        let id = &self.clients[idx].id;
        self.nodes
            .iter()
            .find(|n| &n.client_id == id)
            .expect("validated topology has one node per client")
    }

    /// Total virtual cores across the grid.
    pub fn total_vcores(&self) -> u32 {
        self.nodes.iter().map(|n| n.vcores).sum()
    }

    /// Human-readable name for a simulation entity.
    pub fn entity_name(&self, e: EntityId) -> String {
        match e {
            EntityId::Server => self.server.id.clone(),
            EntityId::Host(i) => format!("{}.host", self.clients[i as usize].id),
            EntityId::Node(i) => format!("{}.node", self.clients[i as usize].id),
        }
    }

    /// Resolves "n01" (node), "n01.host", or the server id to an entity.
    pub fn resolve_entity(&self, name: &str) -> Option<EntityId> {
        if name == self.server.id || name == "server" {
            return Some(EntityId::Server);
        }
        if let Some(base) = name.strip_suffix(".host") {
            return self.client_index(base).map(|i| EntityId::Host(i as u16));
        }
        let base = name.strip_suffix(".node").unwrap_or(name);
        self.client_index(base).map(|i| EntityId::Node(i as u16))
    }
}

/// Loads and validates a topology config (JSON, top-level keys `server`,
/// `clients[]`, `nodes[]`).
pub fn load_topology(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let topo: Topology = serde_json::from_str(&text).map_err(|source| TopologyError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let violations = topo.validate();
    if violations.is_empty() {
        Ok(topo)
    } else {
        Err(TopologyError::Invalid(violations))
    }
}
