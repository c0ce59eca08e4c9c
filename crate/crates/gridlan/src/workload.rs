//! Job execution-time model and benchmark harness.
//!
//! Workloads are core-seconds of work at a reference clock of 1.0, split
//! across processes and optional compute/communicate rounds. Per-client
//! clocks scale dynamically with the number of busy cores (the turbo
//! behavior of desktop processors), which is what pushes measured
//! speed-up curves above the ideal `t(n) = t1/n` line.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::LatencyModel;
use crate::simcore::{Engine, Payload, Rng, SimTime};
use crate::topology::{EntityId, Topology};

/// Size of a barrier release message from the master back to a process.
pub const BARRIER_REPLY_BYTES: u64 = 64;

/// Communication partner pattern of a workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommPattern {
    /// No communication at all.
    None,
    /// After each round every process reports to the master (process 0)
    /// and waits for its release.
    AllToMaster,
}

/// Execution profile of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    /// Total work in core-seconds at reference clock 1.0, split evenly
    /// over processes and rounds.
    pub total_work: f64,
    #[serde(default)]
    pub rounds: u32,
    #[serde(default)]
    pub comm_message_bytes: u64,
    #[serde(default = "CommPattern::none")]
    pub pattern: CommPattern,
}

impl CommPattern {
    fn none() -> CommPattern {
        CommPattern::None
    }
}

impl WorkloadProfile {
    /// Independent processes, no communication (the EP case).
    pub fn embarrassingly_parallel(total_work: f64) -> Self {
        WorkloadProfile { total_work, rounds: 0, comm_message_bytes: 0, pattern: CommPattern::None }
    }

    pub fn is_embarrassingly_parallel(&self) -> bool {
        self.rounds == 0 || self.comm_message_bytes == 0 || self.pattern == CommPattern::None
    }

    fn effective_rounds(&self) -> u32 {
        self.rounds.max(1)
    }
}

/// Per-client clock parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockParams {
    /// Relative clock with every core busy.
    pub base_clock: f64,
    /// Boost fraction: one busy core runs at `base_clock * (1 + boost)`.
    pub boost: f64,
}

/// Dynamic clock scaling: with `a` busy cores out of `cores`,
/// `clock(a) = base * (1 + boost * (cores - a) / (cores - 1))`
/// (for a single-core client the clock is always `base * (1 + boost)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurboModel {
    pub per_client: Vec<ClockParams>,
}

impl TurboModel {
    pub fn homogeneous(clients: usize, base_clock: f64, boost: f64) -> Self {
        TurboModel { per_client: vec![ClockParams { base_clock, boost }; clients] }
    }

    /// All clients at reference clock, no boost.
    pub fn disabled(clients: usize) -> Self {
        Self::homogeneous(clients, 1.0, 0.0)
    }

    pub fn clock(&self, client: usize, cores: u32, active: u32) -> f64 {
        let p = self.per_client[client];
        if cores <= 1 {
            return p.base_clock * (1.0 + p.boost);
        }
        let a = active.clamp(1, cores);
        p.base_clock * (1.0 + p.boost * (cores - a) as f64 / (cores - 1) as f64)
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid placement: {0}")]
    BadPlacement(String),
    #[error("requested {requested} processes but only {available} cores are available")]
    Capacity { requested: u32, available: u32 },
    #[error("calibration target infeasible: {0}")]
    Infeasible(String),
}

// ---------------------------------------------------------------------------
// Multi-job execution engine
// ---------------------------------------------------------------------------

/// Events driving job execution. `epoch` fields invalidate predictions that
/// were outdated by a speed change, a freeze, or an interruption.
#[derive(Debug, Clone, Copy)]
pub enum ExecEvent {
    ComputeDone { slot: u64, proc: u32, epoch: u64 },
    MasterArrive { slot: u64, proc: u32, round: u32, cepoch: u64 },
    ReplyArrive { slot: u64, proc: u32, round: u32, cepoch: u64 },
}

impl Payload for ExecEvent {
    fn kind(&self) -> &'static str {
        match self {
            ExecEvent::ComputeDone { .. } => "compute-done",
            ExecEvent::MasterArrive { .. } => "comm-to-master",
            ExecEvent::ReplyArrive { .. } => "comm-reply",
        }
    }
}

/// An event to schedule: (fire time, trace target, payload).
pub type ExecSchedule = (SimTime, EntityId, ExecEvent);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Computing,
    AwaitBarrier,
    Done,
}

#[derive(Debug, Clone)]
struct ProcExec {
    client: u16,
    rounds_done: u32,
    /// Core-seconds left in the current round's compute phase.
    remaining: f64,
    phase: Phase,
}

#[derive(Debug, Clone)]
struct ExecJob {
    placement: Vec<u16>,
    per_round_work: f64,
    rounds: u32,
    comm: bool,
    comm_bytes: u64,
    master_client: u16,
    procs: Vec<ProcExec>,
    comm_epoch: u64,
    /// Highest round whose barrier fully released; -1 before the first.
    barrier_done: i64,
    barrier_recv: BTreeSet<u32>,
    finished: u32,
}

#[derive(Debug, Clone)]
struct ClientExec {
    cores: u32,
    active: BTreeSet<(u64, u32)>,
    epoch: u64,
    last_update: SimTime,
}

/// Simulates any number of concurrently placed jobs over a set of clients.
/// The compute speed of every process on a client is the turbo clock for
/// the client's current number of busy cores, re-evaluated whenever that
/// number changes. It does not own an event loop: operations return events
/// for the caller to schedule and the caller feeds fired events back in.
#[derive(Debug, Clone)]
pub struct ExecSim {
    clients: Vec<ClientExec>,
    turbo: TurboModel,
    jobs: BTreeMap<u64, ExecJob>,
}

/// What happened as a consequence of one delivered event.
#[derive(Debug, Default)]
pub struct ExecOutcome {
    pub schedules: Vec<ExecSchedule>,
    /// Set when the event completed the last process of a job.
    pub finished: Option<u64>,
}

const WORK_EPS: f64 = 1e-9;

impl ExecSim {
    pub fn new(cores: &[u32], turbo: TurboModel) -> Self {
        assert_eq!(cores.len(), turbo.per_client.len());
        ExecSim {
            clients: cores
                .iter()
                .map(|&c| ClientExec {
                    cores: c,
                    active: BTreeSet::new(),
                    epoch: 0,
                    last_update: SimTime::ZERO,
                })
                .collect(),
            turbo,
            jobs: BTreeMap::new(),
        }
    }

    fn clock(&self, client: usize) -> f64 {
        let c = &self.clients[client];
        self.turbo.clock(client, c.cores, c.active.len() as u32)
    }

    /// Accrues progress on a client since its last update at the clock
    /// that was in force.
    fn settle(&mut self, client: usize, now: SimTime) {
        let dt = (now.saturating_sub(self.clients[client].last_update)).as_secs_f64();
        if dt > 0.0 {
            let speed = self.clock(client);
            let members: Vec<(u64, u32)> = self.clients[client].active.iter().copied().collect();
            for (slot, proc) in members {
                let p = &mut self.jobs.get_mut(&slot).unwrap().procs[proc as usize];
                p.remaining = (p.remaining - dt * speed).max(0.0);
            }
        }
        self.clients[client].last_update = now;
    }

    /// Re-predicts completion times for every busy process on a client
    /// after its clock changed.
    fn repredict(&mut self, client: usize, now: SimTime, out: &mut Vec<ExecSchedule>) {
        self.clients[client].epoch += 1;
        let epoch = self.clients[client].epoch;
        let speed = self.clock(client);
        let members: Vec<(u64, u32)> = self.clients[client].active.iter().copied().collect();
        for (slot, proc) in members {
            let remaining = self.jobs[&slot].procs[proc as usize].remaining;
            let delay = SimTime((remaining / speed * 1e6).ceil() as u64);
            out.push((now + delay, EntityId::Node(client as u16), ExecEvent::ComputeDone {
                slot,
                proc,
                epoch,
            }));
        }
    }

    fn activate(&mut self, slot: u64, proc: u32, now: SimTime, out: &mut Vec<ExecSchedule>) {
        let client = self.jobs[&slot].procs[proc as usize].client as usize;
        self.settle(client, now);
        self.clients[client].active.insert((slot, proc));
        self.repredict(client, now, out);
    }

    fn deactivate(&mut self, slot: u64, proc: u32, now: SimTime, out: &mut Vec<ExecSchedule>) {
        let client = self.jobs[&slot].procs[proc as usize].client as usize;
        self.settle(client, now);
        self.clients[client].active.remove(&(slot, proc));
        self.repredict(client, now, out);
    }

    /// Installs a job and starts every process computing its first round.
    pub fn start_job(
        &mut self,
        slot: u64,
        profile: &WorkloadProfile,
        placement: &[u16],
        now: SimTime,
    ) -> Vec<ExecSchedule> {
        let procs = placement.len() as u32;
        assert!(procs > 0, "placement must be non-empty");
        let rounds = profile.effective_rounds();
        let per_round_work = profile.total_work / procs as f64 / rounds as f64;
        let job = ExecJob {
            placement: placement.to_vec(),
            per_round_work,
            rounds,
            comm: !profile.is_embarrassingly_parallel(),
            comm_bytes: profile.comm_message_bytes,
            master_client: placement[0],
            procs: placement
                .iter()
                .map(|&c| ProcExec {
                    client: c,
                    rounds_done: 0,
                    remaining: per_round_work,
                    phase: Phase::Computing,
                })
                .collect(),
            comm_epoch: 0,
            barrier_done: -1,
            barrier_recv: BTreeSet::new(),
            finished: 0,
        };
        self.jobs.insert(slot, job);
        let mut out = Vec::new();
        for proc in 0..procs {
            self.activate(slot, proc, now, &mut out);
        }
        out
    }

    /// Suspends a job in place: progress is settled, busy processes leave
    /// the active sets (their cores stay allocated by the caller), and any
    /// in-flight communication is invalidated.
    pub fn freeze_job(&mut self, slot: u64, now: SimTime, out: &mut Vec<ExecSchedule>) {
        let Some(job) = self.jobs.get(&slot) else { return };
        let computing: Vec<u32> = job
            .procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.phase == Phase::Computing)
            .map(|(i, _)| i as u32)
            .collect();
        for proc in computing {
            self.deactivate(slot, proc, now, out);
        }
        let job = self.jobs.get_mut(&slot).unwrap();
        job.comm_epoch += 1;
        job.barrier_recv.clear();
    }

    /// Resumes a frozen job on its existing placement. Processes continue
    /// from their remaining work; processes that were waiting at a barrier
    /// re-send their round message.
    pub fn resume_job(
        &mut self,
        slot: u64,
        now: SimTime,
        net: Option<&LatencyModel>,
        rng: &mut Rng,
    ) -> Vec<ExecSchedule> {
        let mut out = Vec::new();
        let Some(job) = self.jobs.get(&slot) else { return out };
        let states: Vec<(u32, Phase)> =
            job.procs.iter().enumerate().map(|(i, p)| (i as u32, p.phase)).collect();
        for (proc, phase) in states {
            match phase {
                Phase::Computing => self.activate(slot, proc, now, &mut out),
                Phase::AwaitBarrier => self.send_to_master(slot, proc, now, net, rng, &mut out),
                Phase::Done => {}
            }
        }
        out
    }

    /// Removes a job entirely (completion or interruption); remaining state
    /// is discarded.
    pub fn remove_job(&mut self, slot: u64, now: SimTime, out: &mut Vec<ExecSchedule>) {
        let Some(job) = self.jobs.get(&slot) else { return };
        let computing: Vec<u32> = job
            .procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.phase == Phase::Computing)
            .map(|(i, _)| i as u32)
            .collect();
        for proc in computing {
            self.deactivate(slot, proc, now, out);
        }
        self.jobs.remove(&slot);
    }

    /// Remaining core-seconds of compute across a job's processes.
    pub fn remaining_work(&self, slot: u64) -> f64 {
        self.jobs
            .get(&slot)
            .map(|j| {
                j.procs
                    .iter()
                    .map(|p| {
                        let full_rounds = j.rounds - p.rounds_done;
                        match p.phase {
                            Phase::Done => 0.0,
                            Phase::AwaitBarrier => (full_rounds.saturating_sub(1)) as f64 * j.per_round_work,
                            Phase::Computing => {
                                (full_rounds.saturating_sub(1)) as f64 * j.per_round_work + p.remaining
                            }
                        }
                    })
                    .sum()
            })
            .unwrap_or(0.0)
    }

    pub fn busy_cores(&self, client: usize) -> u32 {
        self.clients[client].active.len() as u32
    }

    fn path_us(
        &self,
        net: Option<&LatencyModel>,
        from: u16,
        to: u16,
        bytes: u64,
        rng: &mut Rng,
    ) -> SimTime {
        if from == to {
            return SimTime::ZERO;
        }
        match net {
            None => SimTime::ZERO,
            Some(m) => SimTime(
                m.path_us(EntityId::Node(from), EntityId::Node(to), bytes, rng)
                    .expect("placement endpoints exist in the model"),
            ),
        }
    }

    fn send_to_master(
        &mut self,
        slot: u64,
        proc: u32,
        now: SimTime,
        net: Option<&LatencyModel>,
        rng: &mut Rng,
        out: &mut Vec<ExecSchedule>,
    ) {
        let job = &self.jobs[&slot];
        let round = job.procs[proc as usize].rounds_done;
        let delay = self.path_us(net, job.procs[proc as usize].client, job.master_client, job.comm_bytes, rng);
        let master = job.master_client;
        out.push((now + delay, EntityId::Node(master), ExecEvent::MasterArrive {
            slot,
            proc,
            round,
            cepoch: job.comm_epoch,
        }));
    }

    fn reply_to(
        &self,
        slot: u64,
        proc: u32,
        round: u32,
        now: SimTime,
        net: Option<&LatencyModel>,
        rng: &mut Rng,
        out: &mut Vec<ExecSchedule>,
    ) {
        let job = &self.jobs[&slot];
        let target = job.procs[proc as usize].client;
        let delay = self.path_us(net, job.master_client, target, BARRIER_REPLY_BYTES, rng);
        out.push((now + delay, EntityId::Node(target), ExecEvent::ReplyArrive {
            slot,
            proc,
            round,
            cepoch: job.comm_epoch,
        }));
    }

    /// A process finished a full round (its compute for EP jobs, the
    /// barrier release otherwise).
    fn complete_round(
        &mut self,
        slot: u64,
        proc: u32,
        now: SimTime,
        out: &mut Vec<ExecSchedule>,
    ) -> bool {
        let job = self.jobs.get_mut(&slot).unwrap();
        let per_round = job.per_round_work;
        let rounds = job.rounds;
        let p = &mut job.procs[proc as usize];
        p.rounds_done += 1;
        if p.rounds_done == rounds {
            p.phase = Phase::Done;
            job.finished += 1;
            job.finished == job.procs.len() as u32
        } else {
            p.phase = Phase::Computing;
            p.remaining = per_round;
            self.activate(slot, proc, now, out);
            false
        }
    }

    /// Feeds one fired event back in.
    pub fn on_event(
        &mut self,
        now: SimTime,
        ev: ExecEvent,
        net: Option<&LatencyModel>,
        rng: &mut Rng,
    ) -> ExecOutcome {
        let mut outcome = ExecOutcome::default();
        match ev {
            ExecEvent::ComputeDone { slot, proc, epoch } => {
                let Some(job) = self.jobs.get(&slot) else { return outcome };
                let client = job.procs[proc as usize].client as usize;
                if epoch != self.clients[client].epoch {
                    return outcome; // superseded prediction
                }
                self.settle(client, now);
                if self.jobs[&slot].procs[proc as usize].remaining > WORK_EPS {
                    // Numerical slack: re-predict instead of finishing early.
                    self.repredict(client, now, &mut outcome.schedules);
                    return outcome;
                }
                self.deactivate(slot, proc, now, &mut outcome.schedules);
                let comm = self.jobs[&slot].comm;
                if comm {
                    self.jobs.get_mut(&slot).unwrap().procs[proc as usize].phase = Phase::AwaitBarrier;
                    self.send_to_master(slot, proc, now, net, rng, &mut outcome.schedules);
                } else if self.complete_round(slot, proc, now, &mut outcome.schedules) {
                    outcome.finished = Some(slot);
                }
            }
            ExecEvent::MasterArrive { slot, proc, round, cepoch } => {
                let Some(job) = self.jobs.get_mut(&slot) else { return outcome };
                if cepoch != job.comm_epoch {
                    return outcome;
                }
                if (round as i64) <= job.barrier_done {
                    // Straggler re-send after a resume: release it alone.
                    self.reply_to(slot, proc, round, now, net, rng, &mut outcome.schedules);
                    return outcome;
                }
                job.barrier_recv.insert(proc);
                if job.barrier_recv.len() == job.procs.len() {
                    job.barrier_done = round as i64;
                    job.barrier_recv.clear();
                    let procs = job.procs.len() as u32;
                    for p in 0..procs {
                        self.reply_to(slot, p, round, now, net, rng, &mut outcome.schedules);
                    }
                }
            }
            ExecEvent::ReplyArrive { slot, proc, round, cepoch } => {
                let Some(job) = self.jobs.get(&slot) else { return outcome };
                if cepoch != job.comm_epoch {
                    return outcome;
                }
                debug_assert_eq!(job.procs[proc as usize].rounds_done, round);
                if self.complete_round(slot, proc, now, &mut outcome.schedules) {
                    outcome.finished = Some(slot);
                }
            }
        }
        outcome
    }
}

// ---------------------------------------------------------------------------
// Single-job benchmark driver
// ---------------------------------------------------------------------------

fn validate_placement(cores: &[u32], placement: &[u16]) -> Result<(), WorkloadError> {
    if placement.is_empty() {
        return Err(WorkloadError::BadPlacement("placement is empty".into()));
    }
    let mut counts = vec![0u32; cores.len()];
    for &c in placement {
        let idx = c as usize;
        if idx >= cores.len() {
            return Err(WorkloadError::BadPlacement(format!("client index {idx} out of range")));
        }
        counts[idx] += 1;
        if counts[idx] > cores[idx] {
            return Err(WorkloadError::BadPlacement(format!(
                "client {idx} assigned {} processes but has {} cores",
                counts[idx], cores[idx]
            )));
        }
    }
    Ok(())
}

/// Runs one job to completion on an otherwise idle set of clients and
/// returns the elapsed time in seconds.
pub fn run_exec(
    cores: &[u32],
    turbo: &TurboModel,
    net: Option<&LatencyModel>,
    profile: &WorkloadProfile,
    placement: &[u16],
    rng: &mut Rng,
) -> Result<f64, WorkloadError> {
    validate_placement(cores, placement)?;
    let mut exec = ExecSim::new(cores, turbo.clone());
    let mut engine: Engine<EntityId, ExecEvent> = Engine::new();
    for (at, target, ev) in exec.start_job(0, profile, placement, SimTime::ZERO) {
        engine.schedule(at, target, ev).unwrap();
    }
    let mut finish: Option<SimTime> = None;
    while finish.is_none() {
        let ev = engine
            .next_due(SimTime::MAX)
            .expect("job execution always makes progress");
        let out = exec.on_event(ev.fire_at, ev.payload, net, rng);
        for (at, target, e) in out.schedules {
            engine.schedule(at, target, e).unwrap();
        }
        if out.finished.is_some() {
            finish = Some(ev.fire_at);
        }
    }
    Ok(finish.unwrap().as_secs_f64())
}

/// Elapsed seconds for a job under a given placement on the grid topology.
pub fn elapsed_time(
    topo: &Topology,
    profile: &WorkloadProfile,
    placement: &[u16],
    turbo: &TurboModel,
    net: &LatencyModel,
    rng: &mut Rng,
) -> Result<f64, WorkloadError> {
    let cores: Vec<u32> = (0..topo.clients.len()).map(|i| topo.node_for_client(i).vcores).collect();
    run_exec(&cores, turbo, Some(net), profile, placement, rng)
}

// ---------------------------------------------------------------------------
// Speed-up curves
// ---------------------------------------------------------------------------

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupSample {
    pub n_cores: u32,
    pub trial: u32,
    /// Process counts per client, e.g. `n01:12;n02:6`.
    pub placement: String,
    pub elapsed_s: f64,
}

fn summarize_placement(names: &[&str], placement: &[u16]) -> String {
    let mut counts: BTreeMap<u16, u32> = BTreeMap::new();
    for &c in placement {
        *counts.entry(c).or_default() += 1;
    }
    counts
        .iter()
        .map(|(&c, &n)| format!("{}:{}", names[c as usize], n))
        .collect::<Vec<_>>()
        .join(";")
}

/// Scatters `n` processes uniformly over the free cores described by
/// `(client, free_core_count)` pairs, via a partial Fisher-Yates shuffle
/// of the flattened core-slot list.
pub fn random_scatter(free: &[(u16, u32)], n: u32, rng: &mut Rng) -> Option<Vec<u16>> {
    let mut slots: Vec<u16> = Vec::new();
    for &(client, count) in free {
        slots.extend(std::iter::repeat(client).take(count as usize));
    }
    if (slots.len() as u32) < n {
        return None;
    }
    let mut picked = Vec::with_capacity(n as usize);
    let mut len = slots.len();
    for _ in 0..n {
        let i = rng.below(len as u64) as usize;
        picked.push(slots[i]);
        slots.swap(i, len - 1);
        len -= 1;
    }
    Some(picked)
}

/// Packs processes onto clients in config order.
pub fn first_fit(free: &[(u16, u32)], n: u32) -> Option<Vec<u16>> {
    let mut placement = Vec::with_capacity(n as usize);
    let mut left = n;
    for &(client, count) in free {
        let take = left.min(count);
        placement.extend(std::iter::repeat(client).take(take as usize));
        left -= take;
        if left == 0 {
            return Some(placement);
        }
    }
    None
}

/// For each requested core count, runs `trials` random-scatter placements
/// of an all-nodes-up grid and records the elapsed time of each.
pub fn speedup_curve(
    topo: &Topology,
    profile: &WorkloadProfile,
    turbo: &TurboModel,
    net: &LatencyModel,
    core_counts: &[u32],
    trials: u32,
    rng: &mut Rng,
) -> Result<Vec<SpeedupSample>, WorkloadError> {
    let total = topo.total_vcores();
    if let Some(&n) = core_counts.iter().find(|&&n| n > total) {
        return Err(WorkloadError::Capacity { requested: n, available: total });
    }
    let capacities: Vec<(u16, u32)> = (0..topo.clients.len())
        .map(|i| (i as u16, topo.node_for_client(i).vcores))
        .collect();
    let names: Vec<&str> = topo.clients.iter().map(|c| c.id.as_str()).collect();
    let mut samples = Vec::with_capacity(core_counts.len() * trials as usize);
    for &n in core_counts {
        for trial in 0..trials {
            let placement = random_scatter(&capacities, n, rng).expect("capacity checked above");
            let elapsed = elapsed_time(topo, profile, &placement, turbo, net, rng)?;
            samples.push(SpeedupSample {
                n_cores: n,
                trial,
                placement: summarize_placement(&names, &placement),
                elapsed_s: elapsed,
            });
        }
    }
    Ok(samples)
}

/// Same workload model on a single homogeneous machine with no network.
pub fn comparison_run(
    server_cores: u32,
    clock: ClockParams,
    profile: &WorkloadProfile,
    core_counts: &[u32],
) -> Result<Vec<SpeedupSample>, WorkloadError> {
    if let Some(&n) = core_counts.iter().find(|&&n| n > server_cores) {
        return Err(WorkloadError::Capacity { requested: n, available: server_cores });
    }
    let turbo = TurboModel { per_client: vec![clock] };
    let mut rng = Rng::new(0); // nothing samples: no jitter, no scatter
    core_counts
        .iter()
        .map(|&n| {
            let placement = vec![0u16; n as usize];
            let elapsed = run_exec(&[server_cores], &turbo, None, profile, &placement, &mut rng)?;
            Ok(SpeedupSample {
                n_cores: n,
                trial: 0,
                placement: format!("server:{n}"),
                elapsed_s: elapsed,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Calibration against the published anchors
// ---------------------------------------------------------------------------

/// Anchors the calibration reproduces: the grid's elapsed time with every
/// core busy, and the core count at which the comparison server first
/// matches it.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationTargets {
    pub grid_full_elapsed_s: f64,
    pub comparison_match_cores: u32,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        // Published benchmark: ~212 s at the full 26 grid cores, matched by
        // the 64-core comparison server at 38 cores.
        CalibrationTargets { grid_full_elapsed_s: 212.0, comparison_match_cores: 38 }
    }
}

/// Output of `calibrate`: every value here is fitted to the anchors (orize
/// carried as a stated assumption), not measured.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub total_work: f64,
    pub grid_boost: f64,
    pub comparison_base_clock: f64,
    pub comparison_boost: f64,
    pub grid_full_elapsed_s: f64,
    pub residual_grid_elapsed: f64,
    pub comparison_crossing: u32,
}

fn grid_full_elapsed(
    topo: &Topology,
    turbo: &TurboModel,
    net: &LatencyModel,
    total_work: f64,
) -> f64 {
    let capacities: Vec<(u16, u32)> = (0..topo.clients.len())
        .map(|i| (i as u16, topo.node_for_client(i).vcores))
        .collect();
    let placement = first_fit(&capacities, topo.total_vcores()).unwrap();
    let profile = WorkloadProfile::embarrassingly_parallel(total_work);
    let mut rng = Rng::new(0);
    elapsed_time(topo, &profile, &placement, turbo, net, &mut rng).unwrap()
}

fn comparison_elapsed(cores: u32, n: u32, clock: ClockParams, total_work: f64) -> f64 {
    let profile = WorkloadProfile::embarrassingly_parallel(total_work);
    comparison_run(cores, clock, &profile, &[n]).unwrap()[0].elapsed_s
}

/// Smallest core count at which the comparison server is at least as fast
/// as `grid_elapsed`, if any.
fn comparison_crossing(cores: u32, clock: ClockParams, total_work: f64, grid_elapsed: f64) -> Option<u32> {
    (1..=cores).find(|&n| comparison_elapsed(cores, n, clock, total_work) <= grid_elapsed)
}

/// Fits (total_work, comparison base clock) so that the simulated grid
/// reproduces the target full-grid elapsed time and the comparison server
/// first matches it at exactly the target core count. Grid and comparison
/// boost fractions are under-determined by the anchors and carried through
/// as assumptions.
pub fn calibrate_paper(
    topo: &Topology,
    net: &LatencyModel,
    targets: CalibrationTargets,
    grid_boost: f64,
    comparison_boost: f64,
) -> Result<Calibration, WorkloadError> {
    if !(targets.grid_full_elapsed_s.is_finite() && targets.grid_full_elapsed_s > 0.0) {
        return Err(WorkloadError::Infeasible(format!(
            "grid elapsed target must be positive, got {}",
            targets.grid_full_elapsed_s
        )));
    }
    let cmp_cores = topo.server.comparison_cores.ok_or_else(|| {
        WorkloadError::Infeasible("topology defines no comparison server cores".into())
    })?;
    if targets.comparison_match_cores == 0 || targets.comparison_match_cores > cmp_cores {
        return Err(WorkloadError::Infeasible(format!(
            "comparison match target {} outside 1..={cmp_cores}",
            targets.comparison_match_cores
        )));
    }

    let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, grid_boost);

    // Bisection on total_work: full-grid elapsed is strictly increasing.
    let target = targets.grid_full_elapsed_s;
    let mut hi = 26.0 * target.max(1.0);
    while grid_full_elapsed(topo, &turbo, net, hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if grid_full_elapsed(topo, &turbo, net, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let total_work = 0.5 * (lo + hi);
    let grid_elapsed = grid_full_elapsed(topo, &turbo, net, total_work);

    // Bisection on the comparison base clock: find the clock at which the
    // match first lands on n, for n = target and target-1, then take the
    // midpoint of the admissible interval.
    let match_at = |n: u32, clock: f64| -> bool {
        comparison_elapsed(cmp_cores, n, ClockParams { base_clock: clock, boost: comparison_boost }, total_work)
            <= grid_elapsed
    };
    let boundary_clock = |n: u32| -> f64 {
        let mut hi = 1.0;
        while !match_at(n, hi) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if match_at(n, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let n = targets.comparison_match_cores;
    let clock_at_n = boundary_clock(n);
    let comparison_base_clock = if n == 1 {
        clock_at_n
    } else {
        // Any clock in [clock_at_n, clock_at_(n-1)) crosses at exactly n.
        0.5 * (clock_at_n + boundary_clock(n - 1))
    };

    let clock = ClockParams { base_clock: comparison_base_clock, boost: comparison_boost };
    let crossing = comparison_crossing(cmp_cores, clock, total_work, grid_elapsed).ok_or_else(|| {
        WorkloadError::Infeasible("comparison server never matches the grid time".into())
    })?;

    Ok(Calibration {
        total_work,
        grid_boost,
        comparison_base_clock,
        comparison_boost,
        grid_full_elapsed_s: grid_elapsed,
        residual_grid_elapsed: (grid_elapsed - target).abs() / target,
        comparison_crossing: crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::load_topology;
    use proptest::prelude::*;

    fn paper() -> (Topology, LatencyModel) {
        let t = load_topology(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.json"),
        )
        .unwrap();
        let m = LatencyModel::from_topology(&t);
        (t, m)
    }

    fn full_grid_placement(topo: &Topology) -> Vec<u16> {
        let caps: Vec<(u16, u32)> = (0..topo.clients.len())
            .map(|i| (i as u16, topo.node_for_client(i).vcores))
            .collect();
        first_fit(&caps, topo.total_vcores()).unwrap()
    }

    #[test]
    fn ep_on_full_grid_without_turbo_is_work_over_cores() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(2600.0);
        let turbo = TurboModel::disabled(topo.clients.len());
        let mut rng = Rng::new(1);
        let t = elapsed_time(&topo, &profile, &full_grid_placement(&topo), &turbo, &net, &mut rng)
            .unwrap();
        assert!((t - 100.0).abs() < 1e-6, "elapsed {t}");
    }

    #[test]
    fn single_process_runs_at_full_boost() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(2600.0);
        let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, 0.3);
        let mut rng = Rng::new(1);
        // One process on the 12-core client: clock(1) = 1.3.
        let t = elapsed_time(&topo, &profile, &[0], &turbo, &net, &mut rng).unwrap();
        assert!((t - 2600.0 / 1.3).abs() < 1e-3, "elapsed {t}");
    }

    #[test]
    fn seventy_thirty_profile_matches_the_closed_form() {
        let (topo, net) = paper();
        // 26 processes, 10 rounds, 7 s compute per round per process; the
        // round message is sized to take 3 s of transfer to the master.
        let n = 26u32;
        let rounds = 10u32;
        let profile = WorkloadProfile {
            total_work: n as f64 * rounds as f64 * 7.0,
            rounds,
            comm_message_bytes: 187_500_000, // 1.5 s per leg at 1 Gbit/s
            pattern: CommPattern::AllToMaster,
        };
        let turbo = TurboModel::disabled(topo.clients.len());
        let mut rng = Rng::new(1);
        let placement = full_grid_placement(&topo);
        let t_n =
            elapsed_time(&topo, &profile, &placement, &turbo, &net, &mut rng).unwrap();
        assert!(t_n >= rounds as f64 * (7.0 + 3.0), "elapsed {t_n}");
        assert!(t_n < rounds as f64 * (7.0 + 3.0) + 1.0, "elapsed {t_n}");

        // Single process: all the work, master is itself, zero comm cost.
        let t_1 = elapsed_time(&topo, &profile, &[0], &turbo, &net, &mut rng).unwrap();
        let efficiency = t_1 / (n as f64 * t_n);
        assert!((efficiency - 0.7).abs() < 0.005, "efficiency {efficiency}");
    }

    #[test]
    fn ideal_speedup_recovered_without_turbo() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(2600.0);
        let turbo = TurboModel::disabled(topo.clients.len());
        let caps: Vec<(u16, u32)> = (0..topo.clients.len())
            .map(|i| (i as u16, topo.node_for_client(i).vcores))
            .collect();
        let mut rng = Rng::new(1);
        let t1 = elapsed_time(&topo, &profile, &[0], &turbo, &net, &mut rng).unwrap();
        for n in 1..=26u32 {
            let placement = first_fit(&caps, n).unwrap();
            let t = elapsed_time(&topo, &profile, &placement, &turbo, &net, &mut rng).unwrap();
            let ideal = t1 / n as f64;
            assert!(
                (t - ideal).abs() / ideal <= 1e-6,
                "n={n} elapsed={t} ideal={ideal}"
            );
        }
    }

    #[test]
    fn turbo_normalized_elapsed_never_decreases_with_more_cores() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(2600.0);
        let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, 0.25);
        let mut rng = Rng::new(1);
        let mut prev = 0.0;
        let mut strict = false;
        let t1 = elapsed_time(&topo, &profile, &[0], &turbo, &net, &mut rng).unwrap();
        for n in 1..=12u32 {
            let placement = vec![0u16; n as usize];
            let t = elapsed_time(&topo, &profile, &placement, &turbo, &net, &mut rng).unwrap();
            let normalized = n as f64 * t / t1;
            assert!(normalized + 1e-9 >= prev, "n={n} normalized={normalized} prev={prev}");
            if normalized > prev + 1e-9 {
                strict = true;
            }
            prev = normalized;
        }
        assert!(strict, "boost must produce at least one strict increase");
    }

    #[test]
    fn comparison_is_monotone_and_exact_without_boost() {
        let profile = WorkloadProfile::embarrassingly_parallel(5512.0);
        let clock = ClockParams { base_clock: 1.0, boost: 0.0 };
        let counts: Vec<u32> = (1..=64).collect();
        let samples = comparison_run(64, clock, &profile, &counts).unwrap();
        for s in &samples {
            let ideal = 5512.0 / s.n_cores as f64;
            assert!((s.elapsed_s - ideal).abs() / ideal < 1e-6);
        }
        assert!(samples[63].elapsed_s <= samples[31].elapsed_s);
    }

    #[test]
    fn speedup_curve_full_grid_has_single_placement() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(520.0);
        let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, 0.3);
        let mut rng = Rng::new(3);
        let samples = speedup_curve(&topo, &profile, &turbo, &net, &[26], 5, &mut rng).unwrap();
        assert_eq!(samples.len(), 5);
        for s in &samples {
            assert_eq!(s.placement, "n01:12;n02:6;n03:4;n04:4");
            assert_eq!(s.elapsed_s, samples[0].elapsed_s);
        }
    }

    #[test]
    fn single_process_spread_reflects_heterogeneity() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(520.0);
        // Heterogeneous boosts: where the one process lands changes t(1).
        let turbo = TurboModel {
            per_client: vec![
                ClockParams { base_clock: 1.0, boost: 0.3 },
                ClockParams { base_clock: 0.9, boost: 0.2 },
                ClockParams { base_clock: 0.8, boost: 0.1 },
                ClockParams { base_clock: 1.1, boost: 0.25 },
            ],
        };
        let mut rng = Rng::new(7);
        let samples = speedup_curve(&topo, &profile, &turbo, &net, &[1], 64, &mut rng).unwrap();
        let mut elapsed: Vec<_> = samples.iter().map(|s| s.elapsed_s.to_bits()).collect();
        elapsed.sort_unstable();
        elapsed.dedup();
        assert!(elapsed.len() > 1, "heterogeneity must show up as spread");
    }

    #[test]
    fn requesting_more_cores_than_the_grid_has_is_an_error() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(520.0);
        let turbo = TurboModel::disabled(topo.clients.len());
        let mut rng = Rng::new(3);
        let err = speedup_curve(&topo, &profile, &turbo, &net, &[27], 1, &mut rng).unwrap_err();
        assert!(matches!(err, WorkloadError::Capacity { requested: 27, available: 26 }));
    }

    #[test]
    fn calibration_hits_both_anchors() {
        let (topo, net) = paper();
        let cal =
            calibrate_paper(&topo, &net, CalibrationTargets::default(), 0.3, 0.3).unwrap();
        assert!(
            (cal.grid_full_elapsed_s - 212.0).abs() / 212.0 <= 0.05,
            "t(26) = {}",
            cal.grid_full_elapsed_s
        );
        assert_eq!(cal.comparison_crossing, 38);
        assert!(cal.total_work > 0.0);
    }

    #[test]
    fn degenerate_calibration_target_reports_infeasible() {
        let (topo, net) = paper();
        let targets = CalibrationTargets { grid_full_elapsed_s: 0.0, comparison_match_cores: 38 };
        let err = calibrate_paper(&topo, &net, targets, 0.3, 0.3).unwrap_err();
        assert!(matches!(err, WorkloadError::Infeasible(_)));
    }

    #[test]
    fn frozen_job_preserves_remaining_work() {
        let (_, _) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(100.0);
        let turbo = TurboModel::disabled(1);
        let mut exec = ExecSim::new(&[4], turbo);
        let mut out = Vec::new();
        exec.start_job(0, &profile, &[0, 0], SimTime::ZERO);
        // 2 procs x 50 core-seconds each; freeze after 10 s of progress.
        exec.freeze_job(0, SimTime::from_secs(10), &mut out);
        let left = exec.remaining_work(0);
        assert!((left - 80.0).abs() < 1e-6, "remaining {left}");
        // Frozen processes hold no active cores.
        assert_eq!(exec.busy_cores(0), 0);
    }

    proptest! {
        // Work conservation: elapsed is never below total_work divided by
        // the best conceivable throughput of the placement.
        #[test]
        fn work_conservation(
            n in 1u32..26,
            boost in 0.0f64..0.5,
            work in 10.0f64..500.0,
            seed in any::<u64>(),
        ) {
            let (topo, net) = paper();
            let profile = WorkloadProfile::embarrassingly_parallel(work);
            let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, boost);
            let caps: Vec<(u16, u32)> = (0..topo.clients.len())
                .map(|i| (i as u16, topo.node_for_client(i).vcores))
                .collect();
            let mut rng = Rng::new(seed);
            let placement = random_scatter(&caps, n, &mut rng).unwrap();
            let max_clock = 1.0 + boost;
            let t = elapsed_time(&topo, &profile, &placement, &turbo, &net, &mut rng).unwrap();
            prop_assert!(t >= work / (n as f64 * max_clock) - 1e-6);
        }

        // Scatter respects per-client capacity and returns exactly n slots.
        #[test]
        fn scatter_respects_capacity(n in 1u32..26, seed in any::<u64>()) {
            let (topo, _) = paper();
            let caps: Vec<(u16, u32)> = (0..topo.clients.len())
                .map(|i| (i as u16, topo.node_for_client(i).vcores))
                .collect();
            let mut rng = Rng::new(seed);
            let placement = random_scatter(&caps, n, &mut rng).unwrap();
            prop_assert_eq!(placement.len() as u32, n);
            let mut counts = std::collections::BTreeMap::new();
            for c in placement {
                *counts.entry(c).or_insert(0u32) += 1;
            }
            for (c, k) in counts {
                prop_assert!(k <= caps[c as usize].1);
            }
        }

        // Communication floor: with per-round messaging the job can never
        // beat compute plus two one-way master exchanges per round.
        #[test]
        fn communication_floor(rounds in 1u32..6, bytes in 1u64..10_000) {
            let (topo, net) = paper();
            let n = 4u32;
            let profile = WorkloadProfile {
                total_work: n as f64 * rounds as f64,
                rounds,
                comm_message_bytes: bytes,
                pattern: CommPattern::AllToMaster,
            };
            let turbo = TurboModel::disabled(topo.clients.len());
            let mut rng = Rng::new(11);
            // One process per client; master on n01, others remote.
            let placement = vec![0u16, 1, 2, 3];
            let t = elapsed_time(&topo, &profile, &placement, &turbo, &net, &mut rng).unwrap();
            // Cheapest remote leg pair: n02 at (660+840)/2 = 750 us one-way.
            let floor = rounds as f64 * (1.0 + 2.0 * 750e-6);
            prop_assert!(t >= floor - 1e-9, "t={} floor={}", t, floor);
        }
    }

    #[test]
    fn mean_elapsed_is_non_increasing_in_n() {
        let (topo, net) = paper();
        let profile = WorkloadProfile::embarrassingly_parallel(2600.0);
        let turbo = TurboModel::homogeneous(topo.clients.len(), 1.0, 0.3);
        let mut rng = Rng::new(17);
        let counts: Vec<u32> = (1..=26).collect();
        let samples = speedup_curve(&topo, &profile, &turbo, &net, &counts, 200, &mut rng).unwrap();
        let mut means = vec![0.0f64; 27];
        for s in &samples {
            means[s.n_cores as usize] += s.elapsed_s / 200.0;
        }
        for n in 1..26 {
            assert!(
                means[n + 1] <= means[n] + 1e-9,
                "mean elapsed rose from n={} ({}) to n={} ({})",
                n,
                means[n],
                n + 1,
                means[n + 1]
            );
        }
    }
}
