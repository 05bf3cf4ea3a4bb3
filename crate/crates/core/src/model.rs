//! Agents, tasks, space-time paths and the token shared by all agents.
//!
//! A path occupies its final vertex for every timestep after it ends, until
//! the owning agent receives a new path. All conflict checks in this crate
//! use that rest-in-place reading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gridmap::{GridMap, Vertex};

/// Discrete timestep, starting at 0.
pub type Time = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl AgentId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TaskId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub pickup: Vertex,
    pub delivery: Vertex,
    pub release_time: Time,
    pub delivery_deadline: Time,
    /// Latest pickup time that still allows on-time delivery. Signed: it
    /// may lie in the past or below zero for infeasible deadlines.
    pub pickup_deadline: Option<i64>,
    pub completion_time: Option<Time>,
}

impl Task {
    pub fn new(id: TaskId, pickup: Vertex, delivery: Vertex, release: Time, deadline: Time) -> Self {
        Task {
            id,
            pickup,
            delivery,
            release_time: release,
            delivery_deadline: deadline,
            pickup_deadline: None,
            completion_time: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TardinessRecord {
    pub task: TaskId,
    pub tardiness: Time,
}

impl TardinessRecord {
    pub fn is_failure(&self) -> bool {
        self.tardiness > 0
    }
}

/// `max(0, completion - delivery deadline)`; `None` while the task is open.
pub fn tardiness(task: &Task) -> Option<TardinessRecord> {
    task.completion_time.map(|c| TardinessRecord {
        task: task.id,
        tardiness: c.saturating_sub(task.delivery_deadline),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    ToPickup,
    ToDelivery,
    Relocating,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    pub id: AgentId,
    pub location: Vertex,
    pub assigned_task: Option<TaskId>,
    pub phase: Phase,
    /// Planned arrival at the pickup vertex of the assigned task.
    pub pickup_time: Option<Time>,
    /// Planned arrival at the delivery vertex of the assigned task.
    pub delivery_time: Option<Time>,
}

impl AgentState {
    pub fn idle(id: AgentId, location: Vertex) -> Self {
        AgentState {
            id,
            location,
            assigned_task: None,
            phase: Phase::Idle,
            pickup_time: None,
            delivery_time: None,
        }
    }
}

/// A sequence of vertices, one per timestep from `start`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceTimePath {
    start: Time,
    vertices: Vec<Vertex>,
}

impl SpaceTimePath {
    /// Panics if `vertices` is empty or contains a jump between
    /// non-adjacent cells.
    pub fn new(start: Time, vertices: Vec<Vertex>) -> Self {
        assert!(!vertices.is_empty(), "a path needs at least one vertex");
        assert!(
            vertices.windows(2).all(|w| w[0].manhattan(w[1]) <= 1),
            "path contains a non-adjacent step"
        );
        SpaceTimePath { start, vertices }
    }

    pub fn trivial(at: Vertex, start: Time) -> Self {
        SpaceTimePath {
            start,
            vertices: vec![at],
        }
    }

    pub fn start_time(&self) -> Time {
        self.start
    }

    /// Timestep of the final vertex.
    pub fn end_time(&self) -> Time {
        self.start + self.len()
    }

    /// Number of moves (waits included).
    pub fn len(&self) -> u32 {
        (self.vertices.len() - 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn first(&self) -> Vertex {
        self.vertices[0]
    }

    pub fn last(&self) -> Vertex {
        *self.vertices.last().expect("non-empty")
    }

    /// Occupied vertex at `t`, resting on the final vertex after the end.
    /// `None` before the path starts.
    pub fn get(&self, t: Time) -> Option<Vertex> {
        let offset = t.checked_sub(self.start)? as usize;
        Some(*self.vertices.get(offset).unwrap_or(self.vertices.last().unwrap()))
    }

    /// Like [`get`](Self::get) but panics before the start time.
    pub fn at(&self, t: Time) -> Vertex {
        self.get(t)
            .unwrap_or_else(|| panic!("t={t} precedes path start {}", self.start))
    }

    /// Iterates `(time, vertex)` pairs of the explicit part of the path.
    pub fn steps(&self) -> impl Iterator<Item = (Time, Vertex)> + '_ {
        self.vertices
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.start + i as Time, v))
    }

    /// First timestep at or after `from` where the path stands on `v`.
    pub fn arrival_at(&self, v: Vertex, from: Time) -> Option<Time> {
        self.steps().find(|&(t, u)| t >= from && u == v).map(|(t, _)| t)
    }

    pub(crate) fn concat(mut self, tail: SpaceTimePath) -> SpaceTimePath {
        debug_assert_eq!(self.end_time(), tail.start);
        debug_assert_eq!(self.last(), tail.first());
        self.vertices.extend_from_slice(&tail.vertices[1..]);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Conflict {
    /// Both occupy `vertex` at `time`.
    Vertex { time: Time, vertex: Vertex },
    /// The first path moves `from -> to` while the second moves `to -> from`
    /// between `time` and `time + 1`.
    Swap { time: Time, from: Vertex, to: Vertex },
}

impl Conflict {
    pub fn time(&self) -> Time {
        match *self {
            Conflict::Vertex { time, .. } | Conflict::Swap { time, .. } => time,
        }
    }
}

/// Earliest vertex or swap conflict between two paths, rest extension
/// included. Timesteps before either path starts are not compared.
pub fn detect_conflict(p1: &SpaceTimePath, p2: &SpaceTimePath) -> Option<Conflict> {
    let from = p1.start_time().max(p2.start_time());
    let until = p1.end_time().max(p2.end_time());
    conflict_in_window(p1, p2, from, until)
}

/// Conflict between a real path and a dummy path over the dummy's own span
/// (from `not_before` on). Dummy paths do not rest after their end.
pub fn dummy_overlap(real: &SpaceTimePath, dummy: &SpaceTimePath, not_before: Time) -> Option<Conflict> {
    let from = real.start_time().max(dummy.start_time()).max(not_before);
    let until = dummy.end_time();
    if from > until {
        return None;
    }
    conflict_in_window(real, dummy, from, until)
}

fn conflict_in_window(
    p1: &SpaceTimePath,
    p2: &SpaceTimePath,
    from: Time,
    until: Time,
) -> Option<Conflict> {
    for t in from..=until {
        let (a, b) = (p1.at(t), p2.at(t));
        if a == b {
            return Some(Conflict::Vertex { time: t, vertex: a });
        }
        if t < until {
            let (a1, b1) = (p1.at(t + 1), p2.at(t + 1));
            if a == b1 && b == a1 && a != a1 {
                return Some(Conflict::Swap {
                    time: t,
                    from: a,
                    to: a1,
                });
            }
        }
    }
    None
}

/// Per-vertex index of reserved agent positions.
///
/// Explicit steps live in `visits`; the final vertex of each path is held
/// in `resting` from the path's end time onwards.
#[derive(Debug, Clone)]
pub struct ReservationTable {
    visits: Vec<Vec<(Time, AgentId)>>,
    resting: Vec<Option<(AgentId, Time)>>,
}

impl ReservationTable {
    pub fn new(num_cells: usize) -> Self {
        ReservationTable {
            visits: vec![Vec::new(); num_cells],
            resting: vec![None; num_cells],
        }
    }

    fn insert(&mut self, map_width: u32, agent: AgentId, path: &SpaceTimePath) {
        let idx = |v: Vertex| (v.y * map_width + v.x) as usize;
        let n = path.vertices.len();
        for (i, &v) in path.vertices[..n - 1].iter().enumerate() {
            self.visits[idx(v)].push((path.start + i as Time, agent));
        }
        let slot = &mut self.resting[idx(path.last())];
        debug_assert!(
            slot.is_none_or(|(a, _)| a == agent),
            "{agent} would rest on {} already held by {:?}",
            path.last(),
            slot
        );
        *slot = Some((agent, path.end_time()));
    }

    fn remove(&mut self, map_width: u32, agent: AgentId, path: &SpaceTimePath) {
        let idx = |v: Vertex| (v.y * map_width + v.x) as usize;
        for &v in &path.vertices {
            self.visits[idx(v)].retain(|&(_, a)| a != agent);
        }
        let slot = &mut self.resting[idx(path.last())];
        if slot.is_some_and(|(a, _)| a == agent) {
            *slot = None;
        }
    }

    /// Agent occupying cell `idx` at `t`.
    #[inline]
    pub fn occupant(&self, idx: usize, t: Time) -> Option<AgentId> {
        if let Some((a, since)) = self.resting[idx] {
            if since <= t {
                return Some(a);
            }
        }
        self.visits[idx]
            .iter()
            .find(|&&(vt, _)| vt == t)
            .map(|&(_, a)| a)
    }

    #[inline]
    pub fn is_free(&self, idx: usize, t: Time, ignore: &[AgentId]) -> bool {
        self.occupant(idx, t).is_none_or(|a| ignore.contains(&a))
    }

    /// Whether moving `from -> to` between `t` and `t + 1` swaps with
    /// another agent.
    #[inline]
    pub fn swap_blocked(&self, from: usize, to: usize, t: Time, ignore: &[AgentId]) -> bool {
        if from == to {
            return false;
        }
        match self.occupant(to, t) {
            Some(a) if !ignore.contains(&a) => self.occupant(from, t + 1) == Some(a),
            _ => false,
        }
    }

    /// Resting holder of cell `idx` and the time it starts resting there.
    pub fn resting_at(&self, idx: usize) -> Option<(AgentId, Time)> {
        self.resting[idx]
    }

    /// Last explicit visit to `idx` by an agent outside `ignore`.
    pub fn last_visit(&self, idx: usize, ignore: &[AgentId]) -> Option<Time> {
        self.visits[idx]
            .iter()
            .filter(|(_, a)| !ignore.contains(a))
            .map(|&(t, _)| t)
            .max()
    }

    /// Whether an agent may stand on `idx` from `t` forever.
    pub fn can_rest(&self, idx: usize, t: Time, ignore: &[AgentId]) -> bool {
        if self.resting[idx].is_some_and(|(a, _)| !ignore.contains(&a)) {
            return false;
        }
        self.last_visit(idx, ignore).is_none_or(|last| last < t)
    }
}

/// Shared memory read and written by agents one at a time: reserved paths,
/// dummy paths, the unexecuted task set and the task/agent assignment.
#[derive(Debug, Clone)]
pub struct Token {
    width: u32,
    time: Time,
    paths: Vec<SpaceTimePath>,
    detached: Vec<bool>,
    table: ReservationTable,
    dummy_paths: BTreeMap<TaskId, SpaceTimePath>,
    task_set: BTreeSet<TaskId>,
    task_agent: BTreeMap<TaskId, AgentId>,
    agent_task: Vec<Option<TaskId>>,
}

impl Token {
    /// Every agent starts on a trivial path at its start vertex at `time`.
    pub fn new(map: &GridMap, starts: &[Vertex], time: Time) -> Self {
        let mut token = Token {
            width: map.width(),
            time,
            paths: Vec::with_capacity(starts.len()),
            detached: vec![false; starts.len()],
            table: ReservationTable::new(map.num_cells()),
            dummy_paths: BTreeMap::new(),
            task_set: BTreeSet::new(),
            task_agent: BTreeMap::new(),
            agent_task: vec![None; starts.len()],
        };
        for (i, &v) in starts.iter().enumerate() {
            let path = SpaceTimePath::trivial(v, time);
            token.table.insert(token.width, AgentId(i as u32), &path);
            token.paths.push(path);
        }
        token
    }

    pub fn time(&self) -> Time {
        self.time
    }

    pub fn advance(&mut self) {
        self.time += 1;
    }

    pub fn num_agents(&self) -> usize {
        self.paths.len()
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> {
        (0..self.paths.len() as u32).map(AgentId)
    }

    pub fn reservations(&self) -> &ReservationTable {
        &self.table
    }

    pub fn path(&self, agent: AgentId) -> &SpaceTimePath {
        &self.paths[agent.index()]
    }

    /// Vertex held by `agent` at `t`; rests on the path's last vertex after
    /// it ends. Panics if `t` precedes the path start.
    pub fn occupancy_at(&self, agent: AgentId, t: Time) -> Vertex {
        self.paths[agent.index()].at(t)
    }

    /// Replaces the agent's path and reservations.
    pub fn set_path(&mut self, agent: AgentId, path: SpaceTimePath) {
        let i = agent.index();
        if !self.detached[i] {
            self.table.remove(self.width, agent, &self.paths[i]);
        }
        self.table.insert(self.width, agent, &path);
        self.paths[i] = path;
        self.detached[i] = false;
        #[cfg(debug_assertions)]
        if let Some((other, c)) = self.conflicts_with_others(agent) {
            panic!("writing path of {agent} conflicts with {other}: {c:?}");
        }
    }

    /// Drops the agent's reservations. Until the next [`set_path`] it stands
    /// on its position at `t` without blocking anyone.
    ///
    /// [`set_path`]: Self::set_path
    pub fn detach(&mut self, agent: AgentId, t: Time) {
        let i = agent.index();
        let here = self.paths[i].at(t);
        if !self.detached[i] {
            self.table.remove(self.width, agent, &self.paths[i]);
        }
        self.paths[i] = SpaceTimePath::trivial(here, t);
        self.detached[i] = true;
    }

    pub fn is_detached(&self, agent: AgentId) -> bool {
        self.detached[agent.index()]
    }

    /// Vertex where the agent's reserved path ends, unless detached.
    pub fn resting_vertex(&self, agent: AgentId) -> Option<Vertex> {
        (!self.detached[agent.index()]).then(|| self.paths[agent.index()].last())
    }

    #[cfg(debug_assertions)]
    fn conflicts_with_others(&self, agent: AgentId) -> Option<(AgentId, Conflict)> {
        let mine = &self.paths[agent.index()];
        self.agents()
            .filter(|&o| o != agent && !self.detached[o.index()])
            .find_map(|o| detect_conflict(mine, &self.paths[o.index()]).map(|c| (o, c)))
    }

    /// First pairwise conflict among attached agent paths, if any.
    pub fn find_conflict(&self) -> Option<(AgentId, AgentId, Conflict)> {
        let n = self.paths.len();
        for i in 0..n {
            for j in i + 1..n {
                if self.detached[i] || self.detached[j] {
                    continue;
                }
                if let Some(c) = detect_conflict(&self.paths[i], &self.paths[j]) {
                    return Some((AgentId(i as u32), AgentId(j as u32), c));
                }
            }
        }
        None
    }

    pub fn task_set(&self) -> &BTreeSet<TaskId> {
        &self.task_set
    }

    pub fn add_task(&mut self, task: TaskId) {
        self.task_set.insert(task);
    }

    pub fn remove_task(&mut self, task: TaskId) -> bool {
        self.task_set.remove(&task)
    }

    pub fn assign(&mut self, task: TaskId, agent: AgentId) {
        debug_assert!(self.agent_task[agent.index()].is_none(), "{agent} already busy");
        debug_assert!(!self.task_agent.contains_key(&task), "{task} already assigned");
        self.task_agent.insert(task, agent);
        self.agent_task[agent.index()] = Some(task);
    }

    pub fn unassign(&mut self, task: TaskId) -> Option<AgentId> {
        let agent = self.task_agent.remove(&task)?;
        self.agent_task[agent.index()] = None;
        Some(agent)
    }

    pub fn assignee(&self, task: TaskId) -> Option<AgentId> {
        self.task_agent.get(&task).copied()
    }

    pub fn task_of(&self, agent: AgentId) -> Option<TaskId> {
        self.agent_task[agent.index()]
    }

    pub fn dummy_path(&self, task: TaskId) -> Option<&SpaceTimePath> {
        self.dummy_paths.get(&task)
    }

    pub fn set_dummy_path(&mut self, task: TaskId, path: Option<SpaceTimePath>) {
        match path {
            Some(p) => {
                self.dummy_paths.insert(task, p);
            }
            None => {
                self.dummy_paths.remove(&task);
            }
        }
    }

    pub fn dummy_paths(&self) -> impl Iterator<Item = (TaskId, &SpaceTimePath)> {
        self.dummy_paths.iter().map(|(&k, v)| (k, v))
    }
}
