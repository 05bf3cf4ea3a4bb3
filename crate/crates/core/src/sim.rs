//! The timestep loop, metrics, event trace and an independent trace checker.
//!
//! Each step runs, in order: task release, pickup-deadline updates, task
//! switching, token requests, one synchronized move for every agent, and
//! pickup/delivery detection at the new timestep.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{check_well_formed, GridMap, Vertex, WellFormedReport};
use crate::instance::Instance;
use crate::model::{tardiness, AgentId, AgentState, Phase, TardinessRecord, Task, TaskId, Time, Token};
use crate::planner::default_leg_horizon;
use crate::scheduler::{self, SchedulerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: Time,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Release {
        task: TaskId,
        pickup: Vertex,
        delivery: Vertex,
        deadline: Time,
    },
    DeadlineUpdate {
        task: TaskId,
        delivery_deadline: Time,
        pickup_deadline: i64,
        /// Length of the dummy path; absent when the distance fallback was used.
        dummy_len: Option<u32>,
    },
    Assign {
        agent: AgentId,
        task: TaskId,
        pickup_at: Time,
        deliver_at: Time,
    },
    Unassign {
        agent: AgentId,
        task: TaskId,
    },
    Steal {
        agent: AgentId,
        from: AgentId,
        task: TaskId,
    },
    Switch {
        agent: AgentId,
        task: TaskId,
        new_task: TaskId,
    },
    Pickup {
        agent: AgentId,
        task: TaskId,
        at: Vertex,
    },
    Deliver {
        agent: AgentId,
        task: TaskId,
        at: Vertex,
        tardiness: Time,
    },
    Relocate {
        agent: AgentId,
        to: Vertex,
        arrive: Time,
    },
    Stay {
        agent: AgentId,
        at: Vertex,
    },
    /// Position change from `t - 1` to `t`; emitted for every agent every
    /// step, including waits.
    Move {
        agent: AgentId,
        from: Vertex,
        to: Vertex,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Release { .. } => "release",
            EventKind::DeadlineUpdate { .. } => "deadline_update",
            EventKind::Assign { .. } => "assign",
            EventKind::Unassign { .. } => "unassign",
            EventKind::Steal { .. } => "steal",
            EventKind::Switch { .. } => "switch",
            EventKind::Pickup { .. } => "pickup",
            EventKind::Deliver { .. } => "deliver",
            EventKind::Relocate { .. } => "relocate",
            EventKind::Stay { .. } => "stay",
            EventKind::Move { .. } => "move",
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trace<W: Write>(mut w: W, events: &[TraceEvent]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> io::Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|err| io::Error::new(io::ErrorKind::InvalidData, format!("trace line {}: {err}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

/// Everything the scheduler reads and writes during a run.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub map: Arc<GridMap>,
    pub token: Token,
    pub agents: Vec<AgentState>,
    pub tasks: Vec<Task>,
    /// Unreleased tasks in release order.
    pub pending_releases: VecDeque<TaskId>,
    pub completed: Vec<TardinessRecord>,
    pub clock: Time,
    pub leg_horizon: Time,
    pub trace: Vec<TraceEvent>,
}

/// Rollback point for tentative steals and switches.
pub struct Snapshot {
    token: Token,
    agents: Vec<AgentState>,
    tasks: Vec<Task>,
    completed: usize,
    trace: usize,
}

impl SimulationState {
    pub fn new(instance: &Instance) -> Self {
        let map = instance.map.clone();
        let token = Token::new(&map, &instance.agent_starts, 0);
        let agents = instance
            .agent_starts
            .iter()
            .enumerate()
            .map(|(i, &v)| AgentState::idle(AgentId(i as u32), v))
            .collect();
        let mut order: Vec<TaskId> = instance.tasks.iter().map(|t| t.id).collect();
        order.sort_by_key(|j| (instance.tasks[j.index()].release_time, *j));
        SimulationState {
            leg_horizon: default_leg_horizon(&map),
            map,
            token,
            agents,
            tasks: instance.tasks.clone(),
            pending_releases: order.into(),
            completed: Vec::new(),
            clock: 0,
            trace: Vec::new(),
        }
    }

    pub fn emit(&mut self, kind: EventKind) {
        self.trace.push(TraceEvent { t: self.clock, kind });
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            token: self.token.clone(),
            agents: self.agents.clone(),
            tasks: self.tasks.clone(),
            completed: self.completed.len(),
            trace: self.trace.len(),
        }
    }

    pub fn restore(&mut self, s: Snapshot) {
        self.token = s.token;
        self.agents = s.agents;
        self.tasks = s.tasks;
        self.completed.truncate(s.completed);
        self.trace.truncate(s.trace);
    }

    /// Starts executing the agent's task at the current timestep.
    pub fn pick_up(&mut self, agent: AgentId) {
        let task = self.agents[agent.index()].assigned_task.expect("agent holds a task");
        self.token.remove_task(task);
        self.token.set_dummy_path(task, None);
        self.agents[agent.index()].phase = Phase::ToDelivery;
        let at = self.tasks[task.index()].pickup;
        self.emit(EventKind::Pickup { agent, task, at });
    }

    fn deliver(&mut self, agent: AgentId) {
        let task = self.token.task_of(agent).expect("agent holds a task");
        self.token.unassign(task);
        let t = &mut self.tasks[task.index()];
        t.completion_time = Some(self.clock);
        let record = tardiness(t).expect("just completed");
        let at = t.delivery;
        self.completed.push(record);
        let state = &mut self.agents[agent.index()];
        state.assigned_task = None;
        state.phase = Phase::Idle;
        state.pickup_time = None;
        state.delivery_time = None;
        self.emit(EventKind::Deliver {
            agent,
            task,
            at,
            tardiness: record.tardiness,
        });
    }

    pub fn is_finished(&self) -> bool {
        self.pending_releases.is_empty()
            && self.token.task_set().is_empty()
            && self.agents.iter().all(|a| a.assigned_task.is_none())
    }

    fn advance(&mut self) {
        let next = self.clock + 1;
        for i in 0..self.agents.len() {
            let agent = AgentId(i as u32);
            let from = self.agents[i].location;
            let to = self.token.occupancy_at(agent, next);
            self.agents[i].location = to;
            self.trace.push(TraceEvent {
                t: next,
                kind: EventKind::Move { agent, from, to },
            });
        }
        self.clock = next;
        self.token.advance();
        for i in 0..self.agents.len() {
            let agent = AgentId(i as u32);
            let state = &self.agents[i];
            match state.phase {
                Phase::ToPickup if state.pickup_time == Some(next) => {
                    self.pick_up(agent);
                    if self.agents[i].delivery_time == Some(next) {
                        self.deliver(agent);
                    }
                }
                Phase::ToDelivery if state.delivery_time == Some(next) => self.deliver(agent),
                Phase::Relocating if self.token.path(agent).end_time() <= next => {
                    self.agents[i].phase = Phase::Idle;
                }
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cumulative_tardiness: u64,
    pub failure_count: u32,
    /// Timestep of the last delivery.
    pub makespan: Time,
    /// Sorted by task id.
    pub per_task: Vec<TardinessRecord>,
    pub wall_time: Duration,
    pub steps: Time,
}

impl RunResult {
    fn from_records(mut per_task: Vec<TardinessRecord>, makespan: Time, steps: Time, wall_time: Duration) -> Self {
        per_task.sort_by_key(|r| r.task);
        RunResult {
            cumulative_tardiness: per_task.iter().map(|r| r.tardiness as u64).sum(),
            failure_count: per_task.iter().filter(|r| r.is_failure()).count() as u32,
            makespan,
            per_task,
            wall_time,
            steps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Skip the well-formedness precondition.
    pub skip_well_formed_check: bool,
    /// Overrides the default step cap.
    pub step_cap: Option<Time>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("instance is not well-formed: {0}")]
    NotWellFormed(WellFormedReport),
    #[error("step cap {cap} reached with {completed} of {total} tasks delivered")]
    Liveness {
        cap: Time,
        completed: usize,
        total: usize,
        trace: Vec<TraceEvent>,
    },
}

/// `10 * (latest release + tasks * diameter)`.
pub fn default_step_cap(instance: &Instance) -> Time {
    let span = instance.tasks.iter().map(|t| t.release_time).max().unwrap_or(0);
    let work = instance.tasks.len() as u64 * instance.map.diameter() as u64;
    (10 * (span as u64 + work)).min(Time::MAX as u64) as Time
}

/// Simulates until every task is delivered. The scheduler is deterministic,
/// so `seed` only labels the run.
pub fn run(instance: &Instance, cfg: &SchedulerConfig, seed: u64, opts: SimOptions) -> Result<RunOutput, SimError> {
    let _ = seed;
    if !opts.skip_well_formed_check {
        let report = check_well_formed(&instance.map, instance.agent_starts.len());
        if !report.is_well_formed() {
            return Err(SimError::NotWellFormed(report));
        }
    }
    let started = Instant::now();
    let cap = opts.step_cap.unwrap_or_else(|| default_step_cap(instance));
    let mut st = SimulationState::new(instance);
    loop {
        scheduler::step(&mut st, cfg);
        if st.is_finished() {
            break;
        }
        if st.clock >= cap {
            return Err(SimError::Liveness {
                cap,
                completed: st.completed.len(),
                total: st.tasks.len(),
                trace: st.trace,
            });
        }
        st.advance();
    }
    let makespan = st.completed.iter().filter_map(|r| st.tasks[r.task.index()].completion_time).max().unwrap_or(0);
    let result = RunResult::from_records(st.completed, makespan, st.clock, started.elapsed());
    Ok(RunOutput { result, trace: st.trace })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OutOfOrder { t: Time, previous: Time },
    UnknownAgent { t: Time, agent: AgentId },
    UnknownTask { t: Time, task: TaskId },
    MissingMove { t: Time, agent: AgentId },
    DuplicateMove { t: Time, agent: AgentId },
    Discontinuity { t: Time, agent: AgentId, expected: Vertex, found: Vertex },
    Adjacency { t: Time, agent: AgentId, from: Vertex, to: Vertex },
    Obstacle { t: Time, agent: AgentId, at: Vertex },
    VertexConflict { t: Time, a: AgentId, b: AgentId, at: Vertex },
    SwapConflict { t: Time, a: AgentId, b: AgentId },
    EarlyPickup { t: Time, task: TaskId },
    WrongPickup { t: Time, agent: AgentId, task: TaskId },
    DuplicatePickup { t: Time, task: TaskId },
    DeliverWithoutPickup { t: Time, agent: AgentId, task: TaskId },
    WrongDelivery { t: Time, agent: AgentId, task: TaskId },
    DuplicateDelivery { t: Time, task: TaskId },
    TardinessMismatch { t: Time, task: TaskId, reported: Time, expected: Time },
    Undelivered { task: TaskId },
}

impl Violation {
    /// Collision or illegal-move finding, as opposed to bookkeeping.
    pub fn is_motion(&self) -> bool {
        matches!(
            self,
            Violation::Adjacency { .. }
                | Violation::Obstacle { .. }
                | Violation::VertexConflict { .. }
                | Violation::SwapConflict { .. }
                | Violation::Discontinuity { .. }
                | Violation::MissingMove { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub deliveries: usize,
    pub cumulative_tardiness: u64,
    pub failure_count: u32,
    pub makespan: Time,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays the trace from the instance's start positions and re-checks
/// motion legality, collisions, pickup/delivery bookkeeping and metrics.
pub fn validate_trace(trace: &[TraceEvent], instance: &Instance) -> ValidationReport {
    let map = &instance.map;
    let n = instance.agent_starts.len();
    let mut report = ValidationReport::default();
    let v = &mut report.violations;

    let mut last_t = 0;
    let mut moves: BTreeMap<Time, Vec<Option<(Vertex, Vertex)>>> = BTreeMap::new();
    let mut picked: HashMap<TaskId, AgentId> = HashMap::new();
    let mut delivered: HashSet<TaskId> = HashSet::new();
    let mut deliveries: Vec<(Time, AgentId, TaskId, Time)> = Vec::new();
    let mut pickups: Vec<(Time, AgentId, TaskId)> = Vec::new();
    let known_agent = |a: AgentId| a.index() < n;
    let known_task = |j: TaskId| j.index() < instance.tasks.len();

    for e in trace {
        if e.t < last_t {
            v.push(Violation::OutOfOrder { t: e.t, previous: last_t });
        }
        last_t = last_t.max(e.t);
        match e.kind {
            EventKind::Move { agent, from, to } => {
                if !known_agent(agent) {
                    v.push(Violation::UnknownAgent { t: e.t, agent });
                    continue;
                }
                let slot = &mut moves.entry(e.t).or_insert_with(|| vec![None; n])[agent.index()];
                if slot.is_some() {
                    v.push(Violation::DuplicateMove { t: e.t, agent });
                }
                *slot = Some((from, to));
            }
            EventKind::Pickup { agent, task, .. } => {
                if !known_agent(agent) || !known_task(task) {
                    v.push(Violation::UnknownTask { t: e.t, task });
                    continue;
                }
                if picked.insert(task, agent).is_some() && !delivered.contains(&task) {
                    v.push(Violation::DuplicatePickup { t: e.t, task });
                }
                pickups.push((e.t, agent, task));
            }
            EventKind::Deliver {
                agent, task, tardiness, ..
            } => {
                if !known_agent(agent) || !known_task(task) {
                    v.push(Violation::UnknownTask { t: e.t, task });
                    continue;
                }
                if picked.get(&task) != Some(&agent) {
                    v.push(Violation::DeliverWithoutPickup { t: e.t, agent, task });
                }
                if !delivered.insert(task) {
                    v.push(Violation::DuplicateDelivery { t: e.t, task });
                }
                deliveries.push((e.t, agent, task, tardiness));
            }
            _ => {}
        }
    }

    // positions[t][agent]
    let mut positions: Vec<Vec<Vertex>> = vec![instance.agent_starts.clone()];
    let horizon = moves.keys().next_back().copied().unwrap_or(0);
    for t in 1..=horizon {
        let prev = positions.last().expect("nonempty").clone();
        let mut cur = prev.clone();
        let step = moves.get(&t);
        for a in 0..n {
            let agent = AgentId(a as u32);
            match step.and_then(|s| s[a]) {
                None => v.push(Violation::MissingMove { t, agent }),
                Some((from, to)) => {
                    if from != prev[a] {
                        v.push(Violation::Discontinuity {
                            t,
                            agent,
                            expected: prev[a],
                            found: from,
                        });
                    }
                    let dx = from.x.abs_diff(to.x);
                    let dy = from.y.abs_diff(to.y);
                    if dx + dy > 1 {
                        v.push(Violation::Adjacency { t, agent, from, to });
                    }
                    if !map.contains(to) || !map.is_passable(to) {
                        v.push(Violation::Obstacle { t, agent, at: to });
                    }
                    cur[a] = to;
                }
            }
        }
        positions.push(cur);
    }

    for (t, row) in positions.iter().enumerate() {
        let t = t as Time;
        let mut seen: HashMap<Vertex, usize> = HashMap::new();
        for (a, &p) in row.iter().enumerate() {
            if let Some(&b) = seen.get(&p) {
                v.push(Violation::VertexConflict {
                    t,
                    a: AgentId(b as u32),
                    b: AgentId(a as u32),
                    at: p,
                });
            } else {
                seen.insert(p, a);
            }
        }
        if t == 0 {
            continue;
        }
        let prev = &positions[t as usize - 1];
        let mut edges: HashMap<(Vertex, Vertex), usize> = HashMap::new();
        for a in 0..n {
            if prev[a] != row[a] {
                edges.insert((prev[a], row[a]), a);
            }
        }
        for a in 0..n {
            if prev[a] == row[a] {
                continue;
            }
            if let Some(&b) = edges.get(&(row[a], prev[a])) {
                if a < b {
                    v.push(Violation::SwapConflict {
                        t,
                        a: AgentId(a as u32),
                        b: AgentId(b as u32),
                    });
                }
            }
        }
    }

    let position = |t: Time, a: AgentId| positions.get(t as usize).map(|row| row[a.index()]);
    for &(t, agent, task) in &pickups {
        let spec = &instance.tasks[task.index()];
        if t < spec.release_time {
            v.push(Violation::EarlyPickup { t, task });
        }
        if position(t, agent) != Some(spec.pickup) {
            v.push(Violation::WrongPickup { t, agent, task });
        }
    }
    for &(t, agent, task, reported) in &deliveries {
        let spec = &instance.tasks[task.index()];
        if position(t, agent) != Some(spec.delivery) {
            v.push(Violation::WrongDelivery { t, agent, task });
        }
        let expected = t.saturating_sub(spec.delivery_deadline);
        if reported != expected {
            v.push(Violation::TardinessMismatch {
                t,
                task,
                reported,
                expected,
            });
        }
        report.cumulative_tardiness += expected as u64;
        report.failure_count += (expected > 0) as u32;
        report.makespan = report.makespan.max(t);
    }
    for spec in &instance.tasks {
        if !delivered.contains(&spec.id) {
            v.push(Violation::Undelivered { task: spec.id });
        }
    }
    report.deliveries = delivered.len();
    report
}
