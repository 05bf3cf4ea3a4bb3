//! Token-passing task assignment with delivery deadlines.
//!
//! Four algorithms share one code path:
//!
//! | algorithm | deadline weight | steal from other agents | switch on release |
//! |-----------|-----------------|-------------------------|-------------------|
//! | `tp`      | 0               | no                      | no                |
//! | `dtp`     | alpha           | no                      | no                |
//! | `tpts`    | 0               | yes                     | no                |
//! | `dtpts`   | alpha           | optional                | optional          |
//!
//! Every released task gets a pickup deadline from a dummy path planned
//! backwards in time from its delivery deadline. Requesting agents pick the
//! task minimising `alpha * (pickup_deadline - now) + (1 - alpha) * h`, where
//! `h` is the true distance to the pickup vertex.
//!
//! The token-passing variants (`tp`, `dtp`) drop a task from the task set on
//! assignment; the swapping variants keep it until pickup so that another
//! agent that can reach the pickup sooner may take it over.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dummy_overlap, AgentId, Phase, SpaceTimePath, TaskId, Time};
use crate::planner::{plan_path, plan_relocation, plan_reverse, PlanRequest, PlannedPath, ReversePlanRequest};
use crate::sim::{EventKind, SimulationState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tp,
    Dtp,
    Tpts,
    Dtpts,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Tp => "tp",
            Algorithm::Dtp => "dtp",
            Algorithm::Tpts => "tpts",
            Algorithm::Dtpts => "dtpts",
        }
    }

    /// Tasks stay in the task set until pickup.
    pub fn keeps_assigned_tasks(self) -> bool {
        matches!(self, Algorithm::Tpts | Algorithm::Dtpts)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tp" => Ok(Algorithm::Tp),
            "dtp" => Ok(Algorithm::Dtp),
            "tpts" => Ok(Algorithm::Tpts),
            "dtpts" => Ok(Algorithm::Dtpts),
            other => Err(ConfigError::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown algorithm {0:?} (expected tp, dtp, tpts or dtpts)")]
    UnknownAlgorithm(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("{0} fixes alpha = 0, got {1}")]
    AlphaFixed(Algorithm, f64),
    #[error("{0} does not support task swapping")]
    SwapUnsupported(Algorithm),
    #[error("{0} does not support task switching")]
    SwitchUnsupported(Algorithm),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub enable_swap: bool,
    pub enable_switch: bool,
}

impl SchedulerConfig {
    /// Validates the combination. `tpts` always swaps.
    pub fn new(algorithm: Algorithm, alpha: f64, swap: bool, switch: bool) -> Result<Self, ConfigError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ConfigError::AlphaOutOfRange(alpha));
        }
        let fixed_alpha = matches!(algorithm, Algorithm::Tp | Algorithm::Tpts);
        if fixed_alpha && alpha != 0.0 {
            return Err(ConfigError::AlphaFixed(algorithm, alpha));
        }
        if matches!(algorithm, Algorithm::Tp | Algorithm::Dtp) && swap {
            return Err(ConfigError::SwapUnsupported(algorithm));
        }
        if algorithm != Algorithm::Dtpts && switch {
            return Err(ConfigError::SwitchUnsupported(algorithm));
        }
        Ok(SchedulerConfig {
            algorithm,
            alpha,
            enable_swap: swap || algorithm == Algorithm::Tpts,
            enable_switch: switch,
        })
    }

    pub fn tp() -> Self {
        Self::new(Algorithm::Tp, 0.0, false, false).unwrap()
    }

    pub fn dtp(alpha: f64) -> Self {
        Self::new(Algorithm::Dtp, alpha, false, false).expect("alpha in [0, 1]")
    }

    pub fn tpts() -> Self {
        Self::new(Algorithm::Tpts, 0.0, true, false).unwrap()
    }

    pub fn dtpts(alpha: f64, swap: bool, switch: bool) -> Self {
        Self::new(Algorithm::Dtpts, alpha, swap, switch).expect("alpha in [0, 1]")
    }

    /// Short label such as `dtpts+swap+switch`.
    pub fn label(&self) -> String {
        let mut s = self.algorithm.to_string();
        if self.enable_swap && self.algorithm == Algorithm::Dtpts {
            s.push_str("+swap");
        }
        if self.enable_switch {
            s.push_str("+switch");
        }
        s
    }
}

/// Terms of the assignment objective for one candidate task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentScore {
    pub task: TaskId,
    /// `pickup_deadline - now`, signed.
    pub margin: i64,
    /// True distance from the agent to the pickup vertex.
    pub cost: u32,
    pub score: f64,
}

impl AssignmentScore {
    pub fn new(task: TaskId, margin: i64, cost: u32, alpha: f64) -> Self {
        AssignmentScore {
            task,
            margin,
            cost,
            score: alpha * margin as f64 + (1.0 - alpha) * cost as f64,
        }
    }

    fn order(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.task.cmp(&other.task))
    }
}

/// Lowest score wins; ties go to the lower task id.
pub fn score_and_select(scores: &[AssignmentScore]) -> Option<TaskId> {
    scores.iter().min_by(|a, b| a.order(b)).map(|s| s.task)
}

/// The two switching inequalities: the new task is strictly more urgent and
/// strictly closer.
pub fn should_switch(new_deadline: i64, cur_deadline: i64, new_cost: u32, cur_cost: u32) -> bool {
    new_deadline < cur_deadline && new_cost < cur_cost
}

/// Tasks currently open for (re)assignment.
fn pool(st: &SimulationState, cfg: &SchedulerConfig) -> Vec<TaskId> {
    st.token
        .task_set()
        .iter()
        .copied()
        .filter(|&j| st.token.assignee(j).is_none() || cfg.enable_swap)
        .collect()
}

/// Tasks the agent may take: open tasks whose pickup and delivery vertices
/// are not where another agent's path ends. The agent holding a task does
/// not block it for others.
pub fn candidate_tasks(st: &SimulationState, cfg: &SchedulerConfig, agent: AgentId) -> Vec<TaskId> {
    let map = &st.map;
    let mut rests: Vec<Option<AgentId>> = vec![None; map.num_cells()];
    for other in st.token.agents().filter(|&o| o != agent) {
        if let Some(v) = st.token.resting_vertex(other) {
            rests[map.index(v)] = Some(other);
        }
    }
    pool(st, cfg)
        .into_iter()
        .filter(|&j| {
            let task = &st.tasks[j.index()];
            let holder = st.token.assignee(j);
            [task.pickup, task.delivery]
                .iter()
                .all(|&v| rests[map.index(v)].is_none_or(|o| Some(o) == holder))
        })
        .collect()
}

/// Scores for `agent` standing on its position at `now`.
pub fn assignment_scores(
    st: &SimulationState,
    agent: AgentId,
    candidates: &[TaskId],
    cfg: &SchedulerConfig,
) -> Vec<AssignmentScore> {
    let now = st.clock;
    let here = st.token.occupancy_at(agent, now);
    candidates
        .iter()
        .map(|&j| {
            let task = &st.tasks[j.index()];
            let margin = task.pickup_deadline.expect("released tasks carry a pickup deadline") - now as i64;
            let cost = st.map.distance(here, task.pickup).expect("connected map");
            AssignmentScore::new(j, margin, cost, cfg.alpha)
        })
        .collect()
}

/// Plans dummy paths and pickup deadlines for `tasks` against the current
/// reservations. Falls back to `deadline - distance` if no dummy path fits.
pub fn update_pickup_deadlines(st: &mut SimulationState, tasks: &[TaskId]) {
    let now = st.clock;
    for &j in tasks {
        let task = &st.tasks[j.index()];
        let req = ReversePlanRequest {
            origin: task.delivery,
            target: task.pickup,
            end_time: task.delivery_deadline,
            earliest_time: now,
        };
        let deadline = task.delivery_deadline as i64;
        let (pickup_deadline, dummy) = match plan_reverse(&st.map, &st.token, &req) {
            Ok(path) => (deadline - path.len() as i64, Some(path)),
            Err(_) => {
                let d = st.map.distance(task.delivery, task.pickup).expect("connected map");
                (deadline - d as i64, None)
            }
        };
        let dummy_len = dummy.as_ref().map(|p| p.len());
        st.tasks[j.index()].pickup_deadline = Some(pickup_deadline);
        st.token.set_dummy_path(j, dummy);
        st.emit(EventKind::DeadlineUpdate {
            task: j,
            delivery_deadline: task_deadline(st, j),
            pickup_deadline,
            dummy_len,
        });
    }
}

fn task_deadline(st: &SimulationState, j: TaskId) -> Time {
    st.tasks[j.index()].delivery_deadline
}

/// Whether `agent`, heading to the pickup of its current task, should drop
/// it for `new_task`.
pub fn task_switch_check(st: &SimulationState, agent: AgentId, new_task: TaskId) -> bool {
    let state = &st.agents[agent.index()];
    if state.phase != Phase::ToPickup {
        return false;
    }
    let Some(cur) = state.assigned_task else {
        return false;
    };
    let here = st.token.occupancy_at(agent, st.clock);
    let (cur, new) = (&st.tasks[cur.index()], &st.tasks[new_task.index()]);
    let (Some(d_cur), Some(d_new)) = (cur.pickup_deadline, new.pickup_deadline) else {
        return false;
    };
    let h_cur = st.map.distance(here, cur.pickup).expect("connected map");
    let h_new = st.map.distance(here, new.pickup).expect("connected map");
    should_switch(d_new, d_cur, h_new, h_cur)
}

/// One timestep of `tp` / `dtp`: release, deadlines, token requests.
pub fn dtp_step(st: &mut SimulationState, cfg: &SchedulerConfig) {
    debug_assert!(!cfg.algorithm.keeps_assigned_tasks());
    let released = release_tasks(st);
    update_pickup_deadlines(st, &released);
    serve_requests(st, cfg);
}

/// One timestep of `tpts` / `dtpts`: release, deadlines, task switching,
/// token requests with stealing.
pub fn dtpts_step(st: &mut SimulationState, cfg: &SchedulerConfig) {
    debug_assert!(cfg.algorithm.keeps_assigned_tasks());
    let released = release_tasks(st);
    update_pickup_deadlines(st, &released);
    if cfg.enable_switch {
        for &j in &released {
            for a in 0..st.agents.len() as u32 {
                let agent = AgentId(a);
                if st.token.assignee(j).is_some() || !task_switch_check(st, agent, j) {
                    continue;
                }
                let snapshot = st.snapshot();
                let cur = st.agents[agent.index()].assigned_task.expect("checked");
                st.emit(EventKind::Switch {
                    agent,
                    task: cur,
                    new_task: j,
                });
                displace(st, agent);
                if !get_task(st, cfg, agent, 1) {
                    st.restore(snapshot);
                }
            }
        }
    }
    serve_requests(st, cfg);
}

/// Runs whichever step function matches the algorithm.
pub fn step(st: &mut SimulationState, cfg: &SchedulerConfig) {
    if cfg.algorithm.keeps_assigned_tasks() {
        dtpts_step(st, cfg)
    } else {
        dtp_step(st, cfg)
    }
}

fn release_tasks(st: &mut SimulationState) -> Vec<TaskId> {
    let mut released = Vec::new();
    while let Some(&j) = st.pending_releases.front() {
        let task = &st.tasks[j.index()];
        if task.release_time > st.clock {
            break;
        }
        let (pickup, delivery, deadline) = (task.pickup, task.delivery, task.delivery_deadline);
        st.pending_releases.pop_front();
        st.token.add_task(j);
        st.emit(EventKind::Release {
            task: j,
            pickup,
            delivery,
            deadline,
        });
        released.push(j);
    }
    released
}

fn is_requesting(st: &SimulationState, agent: AgentId) -> bool {
    st.token.task_of(agent).is_none()
        && !st.token.is_detached(agent)
        && st.token.path(agent).end_time() <= st.clock
}

fn serve_requests(st: &mut SimulationState, cfg: &SchedulerConfig) {
    let requesters: Vec<AgentId> = st.token.agents().filter(|&a| is_requesting(st, a)).collect();
    for agent in requesters {
        if is_requesting(st, agent) {
            let ok = get_task(st, cfg, agent, 0);
            debug_assert!(ok, "an attached agent can always stay");
        }
    }
    debug_assert!(st.token.agents().all(|a| !st.token.is_detached(a)));
}

fn plan_task(st: &SimulationState, agent: AgentId, task: TaskId, ignore: Vec<AgentId>) -> Option<PlannedPath> {
    let now = st.clock;
    let t = &st.tasks[task.index()];
    let req = PlanRequest {
        origin: st.token.occupancy_at(agent, now),
        waypoints: vec![t.pickup, t.delivery],
        start_time: now,
        leg_horizon: st.leg_horizon,
        ignore,
    };
    plan_path(&st.map, &st.token, &req).ok()
}

/// Tries to give `agent` a task, stealing one if allowed, and otherwise
/// parks it. Returns `false` only when a detached agent is left without any
/// conflict-free path; callers then roll back whatever detached it.
fn get_task(st: &mut SimulationState, cfg: &SchedulerConfig, agent: AgentId, depth: usize) -> bool {
    let candidates = candidate_tasks(st, cfg, agent);
    let mut scores = assignment_scores(st, agent, &candidates, cfg);
    scores.sort_by(|a, b| a.order(b));

    for s in scores {
        let j = s.task;
        match st.token.assignee(j) {
            None => match plan_task(st, agent, j, vec![agent]) {
                Some(plan) => {
                    assign(st, cfg, agent, j, plan);
                    return true;
                }
                None => break,
            },
            Some(holder) => {
                if depth >= st.agents.len() {
                    continue;
                }
                let incumbent = st.agents[holder.index()]
                    .pickup_time
                    .expect("holder of an unpicked task has a pickup time");
                let Some(plan) = plan_task(st, agent, j, vec![agent, holder]) else {
                    continue;
                };
                if plan.arrivals[0] >= incumbent {
                    continue;
                }
                let snapshot = st.snapshot();
                st.emit(EventKind::Steal {
                    agent,
                    from: holder,
                    task: j,
                });
                displace(st, holder);
                assign(st, cfg, agent, j, plan);
                if get_task(st, cfg, holder, depth + 1) {
                    return true;
                }
                st.restore(snapshot);
            }
        }
    }
    park(st, cfg, agent)
}

/// Unassigns the agent's task and drops its reservations.
fn displace(st: &mut SimulationState, agent: AgentId) {
    let now = st.clock;
    if let Some(task) = st.token.task_of(agent) {
        st.token.unassign(task);
        st.emit(EventKind::Unassign { agent, task });
    }
    st.token.detach(agent, now);
    let state = &mut st.agents[agent.index()];
    state.assigned_task = None;
    state.phase = Phase::Idle;
    state.pickup_time = None;
    state.delivery_time = None;
}

fn assign(st: &mut SimulationState, cfg: &SchedulerConfig, agent: AgentId, task: TaskId, plan: PlannedPath) {
    let now = st.clock;
    let (pickup_at, deliver_at) = (plan.arrivals[0], plan.arrivals[1]);
    st.token.assign(task, agent);
    if !cfg.algorithm.keeps_assigned_tasks() {
        st.token.remove_task(task);
        st.token.set_dummy_path(task, None);
    }
    let state = &mut st.agents[agent.index()];
    state.assigned_task = Some(task);
    state.phase = Phase::ToPickup;
    state.pickup_time = Some(pickup_at);
    state.delivery_time = Some(deliver_at);
    let path = plan.path;
    st.token.set_path(agent, path.clone());
    st.emit(EventKind::Assign {
        agent,
        task,
        pickup_at,
        deliver_at,
    });
    if pickup_at == now {
        st.pick_up(agent);
    }
    refresh_overwritten(st, cfg, agent, &path);
}

/// Deadlock avoidance: an agent standing on the delivery vertex of an open
/// task, or off the endpoints, moves to a free endpoint; otherwise it stays.
fn park(st: &mut SimulationState, cfg: &SchedulerConfig, agent: AgentId) -> bool {
    let now = st.clock;
    let map = st.map.clone();
    let here = st.token.occupancy_at(agent, now);
    let here_idx = map.index(here);
    let detached = st.token.is_detached(agent);
    let open = pool(st, cfg);

    let mut forbidden = vec![false; map.num_cells()];
    let mut on_delivery = false;
    for &j in &open {
        let t = &st.tasks[j.index()];
        forbidden[map.index(t.pickup)] = true;
        forbidden[map.index(t.delivery)] = true;
        on_delivery |= t.delivery == here;
    }
    let blocking = on_delivery || !map.kind_at(here_idx).is_endpoint();
    let can_stay = !detached || st.token.reservations().can_rest(here_idx, now, &[agent]);

    if !blocking && can_stay {
        return stay(st, agent, here);
    }
    match plan_relocation(&map, &st.token, agent, &forbidden, now, &[agent]) {
        Ok(path) if !path.is_empty() => {
            let to = path.last();
            let arrive = path.end_time();
            st.token.set_path(agent, path.clone());
            st.agents[agent.index()].phase = Phase::Relocating;
            st.emit(EventKind::Relocate { agent, to, arrive });
            refresh_overwritten(st, cfg, agent, &path);
            true
        }
        _ if can_stay => stay(st, agent, here),
        _ => false,
    }
}

fn stay(st: &mut SimulationState, agent: AgentId, here: crate::gridmap::Vertex) -> bool {
    let now = st.clock;
    if st.token.is_detached(agent) {
        st.token.set_path(agent, SpaceTimePath::trivial(here, now));
    }
    st.agents[agent.index()].phase = Phase::Idle;
    st.emit(EventKind::Stay { agent, at: here });
    true
}

/// Replans dummy paths that the newly written `path` runs into.
fn refresh_overwritten(st: &mut SimulationState, cfg: &SchedulerConfig, agent: AgentId, path: &SpaceTimePath) {
    let now = st.clock;
    let hit: Vec<TaskId> = pool(st, cfg)
        .into_iter()
        .filter(|&j| st.token.assignee(j) != Some(agent))
        .filter(|&j| {
            st.token
                .dummy_path(j)
                .is_some_and(|d| dummy_overlap(path, d, now).is_some())
        })
        .collect();
    if !hit.is_empty() {
        update_pickup_deadlines(st, &hit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: u32) -> TaskId {
        TaskId(i)
    }

    #[test]
    fn alpha_zero_picks_cheapest() {
        let scores = [AssignmentScore::new(t(1), -50, 5, 0.0), AssignmentScore::new(t(2), 400, 3, 0.0)];
        assert_eq!(score_and_select(&scores), Some(t(2)));
    }

    #[test]
    fn alpha_one_picks_most_urgent() {
        let scores = [AssignmentScore::new(t(1), 2, 90, 1.0), AssignmentScore::new(t(2), 8, 0, 1.0)];
        assert_eq!(score_and_select(&scores), Some(t(1)));
    }

    #[test]
    fn weighted_score_arithmetic() {
        let a = AssignmentScore::new(t(1), 4, 2, 0.5);
        let b = AssignmentScore::new(t(2), 2, 5, 0.5);
        assert_eq!(a.score, 3.0);
        assert_eq!(b.score, 3.5);
        assert_eq!(score_and_select(&[b, a]), Some(t(1)));
    }

    #[test]
    fn ties_go_to_lower_id() {
        let scores = [AssignmentScore::new(t(7), 0, 3, 0.0), AssignmentScore::new(t(4), 9, 3, 0.0)];
        assert_eq!(score_and_select(&scores), Some(t(4)));
        assert_eq!(score_and_select(&[]), None);
    }

    #[test]
    fn switch_needs_both_strict_inequalities() {
        assert!(should_switch(5, 9, 2, 4));
        assert!(!should_switch(5, 9, 6, 4));
        assert!(!should_switch(9, 9, 2, 4));
        assert!(!should_switch(5, 9, 4, 4));
    }

    #[test]
    fn config_coherence() {
        assert!(SchedulerConfig::new(Algorithm::Tp, 0.3, false, false).is_err());
        assert!(SchedulerConfig::new(Algorithm::Tp, 0.0, true, false).is_err());
        assert!(SchedulerConfig::new(Algorithm::Dtp, 0.3, false, true).is_err());
        assert!(SchedulerConfig::new(Algorithm::Tpts, 0.0, false, true).is_err());
        assert!(SchedulerConfig::new(Algorithm::Dtpts, 1.5, true, true).is_err());
        assert!(SchedulerConfig::new(Algorithm::Dtpts, f64::NAN, true, true).is_err());
        assert!(SchedulerConfig::new(Algorithm::Tpts, 0.0, false, false).unwrap().enable_swap);
        assert_eq!(SchedulerConfig::dtpts(0.1, true, true).label(), "dtpts+swap+switch");
        assert_eq!("dtpts".parse::<Algorithm>().unwrap(), Algorithm::Dtpts);
        assert!("cbs".parse::<Algorithm>().is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn alpha_zero_is_pure_cost_argmin(
            entries in prop::collection::vec((-300i64..300, 0u32..80), 1..20)
        ) {
            let scores: Vec<_> = entries
                .iter()
                .enumerate()
                .map(|(i, &(m, c))| AssignmentScore::new(t(i as u32), m, c, 0.0))
                .collect();
            let by_cost = entries
                .iter()
                .enumerate()
                .min_by_key(|(i, (_, c))| (*c, *i))
                .map(|(i, _)| t(i as u32));
            prop_assert_eq!(score_and_select(&scores), by_cost);
        }
    }
}
