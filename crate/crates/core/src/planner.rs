//! Space-time search against the token's reservations.
//!
//! * [`plan_path`] visits a list of waypoints with A* over `(vertex, time)`
//!   states, using exact BFS distances as the heuristic. The final waypoint
//!   must be a vertex the agent can rest on forever.
//! * [`plan_reverse`] expands backwards in time from a delivery vertex at its
//!   deadline and returns the shortest (latest departing) path from pickup.
//! * [`plan_relocation`] moves an agent to the nearest free endpoint.
//!
//! Expansion order is fixed so identical inputs give identical paths:
//! lowest f first, then higher g, then lower cell index (`y * width + x`);
//! successors are generated as wait, up, down, left, right.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::gridmap::{GridMap, Vertex, UNREACHABLE};
use crate::model::{AgentId, SpaceTimePath, Time, Token};

/// Default per-leg budget is this many times `width + height` timesteps.
pub const DEFAULT_HORIZON_FACTOR: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no conflict-free path for leg {leg} within the horizon")]
    NoPath { leg: usize },
    #[error("waypoint {0} is not passable")]
    Impassable(Vertex),
    #[error("plan request has no waypoints")]
    NoWaypoints,
    #[error("deadline window too short: need {needed} steps, have {available}")]
    WindowTooShort { needed: u32, available: u32 },
    #[error("no free endpoint reachable")]
    NoEndpoint,
}

/// Forward multi-waypoint request for one agent.
#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub origin: Vertex,
    pub waypoints: Vec<Vertex>,
    pub start_time: Time,
    /// Timesteps each leg may take at most.
    pub leg_horizon: Time,
    /// Agents whose reservations are disregarded; always includes the
    /// planning agent itself.
    pub ignore: Vec<AgentId>,
}

impl PlanRequest {
    pub fn new(map: &GridMap, agent: AgentId, origin: Vertex, waypoints: Vec<Vertex>, start_time: Time) -> Self {
        PlanRequest {
            origin,
            waypoints,
            start_time,
            leg_horizon: default_leg_horizon(map),
            ignore: vec![agent],
        }
    }
}

pub fn default_leg_horizon(map: &GridMap) -> Time {
    DEFAULT_HORIZON_FACTOR * (map.width() + map.height())
}

/// Backward request for a dummy path ending at `origin` at `end_time`.
#[derive(Debug, Clone)]
pub struct ReversePlanRequest {
    /// Delivery vertex, where the dummy path ends.
    pub origin: Vertex,
    /// Pickup vertex, where the dummy path starts.
    pub target: Vertex,
    pub end_time: Time,
    /// The search never goes below this timestep.
    pub earliest_time: Time,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedPath {
    pub path: SpaceTimePath,
    /// Arrival timestep at each waypoint, in order.
    pub arrivals: Vec<Time>,
}

impl PlannedPath {
    pub fn arrival(&self) -> Time {
        *self.arrivals.last().expect("at least one waypoint")
    }
}

/// Plans the whole waypoint sequence, or nothing.
pub fn plan_path(map: &GridMap, token: &Token, req: &PlanRequest) -> Result<PlannedPath, PlanError> {
    if req.waypoints.is_empty() {
        return Err(PlanError::NoWaypoints);
    }
    if let Some(&bad) = req.waypoints.iter().find(|&&w| !map.is_passable(w)) {
        return Err(PlanError::Impassable(bad));
    }
    let res = token.reservations();
    let last_leg = req.waypoints.len() - 1;
    let mut path = SpaceTimePath::trivial(req.origin, req.start_time);
    let mut arrivals = Vec::with_capacity(req.waypoints.len());
    for (leg, &goal) in req.waypoints.iter().enumerate() {
        let from = map.index(path.last());
        let t0 = path.end_time();
        let goal_idx = map.index(goal);
        let field = map.distances_from(goal);
        let must_rest = leg == last_leg;
        let mut max_t = t0.saturating_add(req.leg_horizon);

        let mut rest_after = 0;
        if let Some((holder, since)) = res.resting_at(goal_idx) {
            if !req.ignore.contains(&holder) {
                if must_rest {
                    return Err(PlanError::NoPath { leg });
                }
                // must get there before the holder settles in
                max_t = max_t.min(since.saturating_sub(1));
            }
        }
        if must_rest {
            rest_after = res.last_visit(goal_idx, &req.ignore).map_or(0, |t| t + 1);
        }
        let d0 = field.at_index(from);
        if d0 == UNREACHABLE || t0 + d0 > max_t || rest_after > max_t {
            return Err(PlanError::NoPath { leg });
        }

        let cells = astar(
            map,
            token,
            from,
            t0,
            max_t,
            &req.ignore,
            |c, t| c == goal_idx && (!must_rest || res.can_rest(c, t, &req.ignore)),
            |c, t| {
                let d = field.at_index(c);
                if d == UNREACHABLE {
                    return None;
                }
                Some(d.max(rest_after.saturating_sub(t)))
            },
        )
        .ok_or(PlanError::NoPath { leg })?;
        let tail = SpaceTimePath::new(t0, cells.into_iter().map(|c| map.vertex(c)).collect());
        arrivals.push(tail.end_time());
        path = path.concat(tail);
    }
    Ok(PlannedPath { path, arrivals })
}

#[derive(Clone, Copy)]
struct Node {
    cell: u32,
    t: Time,
    parent: u32,
}

const ROOT: u32 = u32::MAX;

/// A* over `(cell, time)`; returns the cell sequence from `start` to the
/// first goal state popped.
#[allow(clippy::too_many_arguments)]
fn astar(
    map: &GridMap,
    token: &Token,
    start: usize,
    t0: Time,
    max_t: Time,
    ignore: &[AgentId],
    is_goal: impl Fn(usize, Time) -> bool,
    heuristic: impl Fn(usize, Time) -> Option<u32>,
) -> Option<Vec<usize>> {
    let res = token.reservations();
    let mut nodes: Vec<Node> = Vec::with_capacity(256);
    let mut seen: FxHashSet<(u32, Time)> = FxHashSet::default();
    // max-heap on (Reverse(f), g, Reverse(cell), node)
    let mut open: BinaryHeap<(Reverse<u32>, u32, Reverse<u32>, u32)> = BinaryHeap::new();

    let h0 = heuristic(start, t0)?;
    nodes.push(Node {
        cell: start as u32,
        t: t0,
        parent: ROOT,
    });
    seen.insert((start as u32, t0));
    open.push((Reverse(h0), 0, Reverse(start as u32), 0));

    while let Some((_, g, _, id)) = open.pop() {
        let node = nodes[id as usize];
        let cell = node.cell as usize;
        if is_goal(cell, node.t) {
            let mut cells = Vec::with_capacity(g as usize + 1);
            let mut cur = id;
            while cur != ROOT {
                cells.push(nodes[cur as usize].cell as usize);
                cur = nodes[cur as usize].parent;
            }
            cells.reverse();
            return Some(cells);
        }
        let t1 = node.t + 1;
        if t1 > max_t {
            continue;
        }
        for next in std::iter::once(cell).chain(map.neighbors(cell)) {
            if !res.is_free(next, t1, ignore) || res.swap_blocked(cell, next, node.t, ignore) {
                continue;
            }
            if !seen.insert((next as u32, t1)) {
                continue;
            }
            let Some(h) = heuristic(next, t1) else {
                continue;
            };
            let g1 = g + 1;
            if t1 + h > max_t {
                continue;
            }
            nodes.push(Node {
                cell: next as u32,
                t: t1,
                parent: id,
            });
            open.push((Reverse(g1 + h), g1, Reverse(next as u32), (nodes.len() - 1) as u32));
        }
    }
    None
}

/// Shortest path from `target` (pickup) that reaches `origin` (delivery)
/// exactly at `end_time`, found by expanding backwards in time.
pub fn plan_reverse(map: &GridMap, token: &Token, req: &ReversePlanRequest) -> Result<SpaceTimePath, PlanError> {
    let res = token.reservations();
    let goal = map.index(req.target);
    let to_goal = map.distances_from(req.target);
    let start = map.index(req.origin);
    let needed = to_goal.at_index(start);
    let available = req.end_time.saturating_sub(req.earliest_time);
    if req.end_time < req.earliest_time || needed == UNREACHABLE || needed > available {
        return Err(PlanError::WindowTooShort {
            needed,
            available: if req.end_time < req.earliest_time { 0 } else { available },
        });
    }
    if !res.is_free(start, req.end_time, &[]) {
        return Err(PlanError::NoPath { leg: 0 });
    }

    // layers[k] holds (cell, index of successor in layers[k - 1]) at end - k
    let mut layers: Vec<Vec<(u32, u32)>> = vec![vec![(start as u32, u32::MAX)]];
    let mut stamp = vec![u32::MAX; map.num_cells()];
    stamp[start] = 0;
    let mut found = start == goal;
    while !found {
        let k = layers.len() as u32;
        let t_next = req.end_time - k;
        if t_next < req.earliest_time {
            return Err(PlanError::NoPath { leg: 0 });
        }
        let budget = t_next - req.earliest_time;
        let mut layer = Vec::new();
        for (pos, &(v, _)) in layers[k as usize - 1].iter().enumerate() {
            let v = v as usize;
            for u in std::iter::once(v).chain(map.neighbors(v)) {
                if stamp[u] == k || to_goal.at_index(u) > budget {
                    continue;
                }
                if !res.is_free(u, t_next, &[]) || res.swap_blocked(u, v, t_next, &[]) {
                    continue;
                }
                stamp[u] = k;
                layer.push((u as u32, pos as u32));
                found |= u == goal;
            }
        }
        if layer.is_empty() {
            return Err(PlanError::NoPath { leg: 0 });
        }
        layers.push(layer);
    }

    let k = layers.len() - 1;
    let mut pos = layers[k]
        .iter()
        .position(|&(c, _)| c as usize == goal)
        .expect("goal in last layer");
    let mut vertices = Vec::with_capacity(k + 1);
    for layer in layers.iter().rev() {
        let (c, next) = layer[pos];
        vertices.push(map.vertex(c as usize));
        pos = next as usize;
    }
    Ok(SpaceTimePath::new(req.end_time - k as Time, vertices))
}

/// Path for `agent` from its position at `start_time` to the nearest
/// endpoint (in arrival time) that is outside `forbidden`, not the resting
/// vertex of another agent, and free from arrival on. The current vertex
/// qualifies too, which yields a trivial path.
pub fn plan_relocation(
    map: &GridMap,
    token: &Token,
    agent: AgentId,
    forbidden: &[bool],
    start_time: Time,
    ignore: &[AgentId],
) -> Result<SpaceTimePath, PlanError> {
    let res = token.reservations();
    let mut goal = vec![false; map.num_cells()];
    for idx in 0..map.num_cells() {
        goal[idx] = map.kind_at(idx).is_endpoint() && !forbidden[idx];
    }
    for other in token.agents().filter(|o| !ignore.contains(o)) {
        if let Some(v) = token.resting_vertex(other) {
            goal[map.index(v)] = false;
        }
    }

    // multi-source BFS gives an admissible heuristic to the goal set
    let mut dist = vec![UNREACHABLE; map.num_cells()];
    let mut queue = VecDeque::new();
    for (idx, &g) in goal.iter().enumerate() {
        if g {
            dist[idx] = 0;
            queue.push_back(idx);
        }
    }
    if queue.is_empty() {
        return Err(PlanError::NoEndpoint);
    }
    while let Some(u) = queue.pop_front() {
        for v in map.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }

    let origin = token.occupancy_at(agent, start_time);
    let start = map.index(origin);
    let max_t = start_time + default_leg_horizon(map);
    let cells = astar(
        map,
        token,
        start,
        start_time,
        max_t,
        ignore,
        |c, t| goal[c] && res.can_rest(c, t, ignore),
        |c, _| (dist[c] != UNREACHABLE).then_some(dist[c]),
    )
    .ok_or(PlanError::NoEndpoint)?;
    Ok(SpaceTimePath::new(
        start_time,
        cells.into_iter().map(|c| map.vertex(c)).collect(),
    ))
}
