mod common;

use std::sync::Arc;

use mapdd_core::scheduler::{candidate_tasks, update_pickup_deadlines};
use mapdd_core::{
    run, validate_trace, AgentId, EventKind, GridMap, Instance, SchedulerConfig, SimOptions, SimulationState,
    SpaceTimePath, Task, TaskId, Time, TraceEvent, Vertex,
};

fn v(x: u32, y: u32) -> Vertex {
    Vertex::new(x, y)
}

fn map(rows: &[&str]) -> Arc<GridMap> {
    let text = format!("mapd-d map v1\n{} {}\n{}\n", rows[0].len(), rows.len(), rows.join("\n"));
    Arc::new(GridMap::parse(&text).unwrap())
}

fn lenient() -> SimOptions {
    SimOptions {
        skip_well_formed_check: true,
        step_cap: None,
    }
}

/// Releases every task of the instance into the token by hand.
fn released(instance: &Instance) -> SimulationState {
    let mut st = SimulationState::new(instance);
    while let Some(j) = st.pending_releases.pop_front() {
        st.token.add_task(j);
        st.tasks[j.index()].pickup_deadline = Some(100);
    }
    st
}

fn open_room() -> Arc<GridMap> {
    map(&["E.T.T.T.", "E.......", "E.T.T.T."])
}

#[test]
fn empty_token_offers_every_task() {
    let m = open_room();
    let tasks = vec![
        Task::new(TaskId(0), v(2, 0), v(4, 0), 0, 30),
        Task::new(TaskId(1), v(4, 2), v(6, 0), 0, 30),
        Task::new(TaskId(2), v(6, 2), v(2, 2), 0, 30),
    ];
    let inst = Instance::new(m, "room", vec![v(0, 0), v(0, 2)], tasks);
    let st = released(&inst);
    let ids = candidate_tasks(&st, &SchedulerConfig::dtp(0.1), AgentId(0));
    assert_eq!(ids, vec![TaskId(0), TaskId(1), TaskId(2)]);
}

#[test]
fn resting_agent_filters_task() {
    let m = open_room();
    let tasks = vec![
        Task::new(TaskId(0), v(2, 0), v(4, 0), 0, 30),
        Task::new(TaskId(1), v(4, 2), v(6, 0), 0, 30),
        Task::new(TaskId(2), v(6, 2), v(2, 2), 0, 30),
    ];
    let inst = Instance::new(m, "room", vec![v(0, 0), v(0, 2)], tasks);
    let mut st = released(&inst);
    st.token
        .set_path(AgentId(1), SpaceTimePath::new(0, vec![v(0, 2), v(1, 2), v(2, 2)]));
    let ids = candidate_tasks(&st, &SchedulerConfig::dtp(0.1), AgentId(0));
    assert_eq!(ids, vec![TaskId(0), TaskId(1)]);
}

#[test]
fn assigned_unpicked_task_stays_open_when_swapping() {
    let m = open_room();
    let tasks = vec![
        Task::new(TaskId(0), v(2, 0), v(4, 0), 0, 30),
        Task::new(TaskId(1), v(4, 2), v(6, 0), 0, 30),
    ];
    let inst = Instance::new(m, "room", vec![v(0, 0), v(0, 2)], tasks);
    let mut st = released(&inst);
    st.token.assign(TaskId(1), AgentId(0));
    let swapping = candidate_tasks(&st, &SchedulerConfig::dtpts(0.1, true, false), AgentId(1));
    assert_eq!(swapping, vec![TaskId(0), TaskId(1)]);
    let plain = candidate_tasks(&st, &SchedulerConfig::dtpts(0.1, false, false), AgentId(1));
    assert_eq!(plain, vec![TaskId(0)]);
}

fn corridor() -> Arc<GridMap> {
    map(&["@@@E@@@@", "T......T", "@@@E@@@@"])
}

/// Crossing agent: waits above the corridor, blocks (3, 1) at t = 15 and 16,
/// then rests below.
fn crossing(t: Time) -> Vertex {
    match t {
        0..=14 => v(3, 0),
        15 | 16 => v(3, 1),
        _ => v(3, 2),
    }
}

fn crossing_path() -> SpaceTimePath {
    SpaceTimePath::new(0, (0..=17).map(crossing).collect())
}

/// Longest feasible dummy via forward search from each candidate start,
/// latest start first.
fn oracle_dummy_len(m: &GridMap, pickup: Vertex, delivery: Vertex, deadline: Time, blocker: fn(Time) -> Vertex) -> Option<u32> {
    let dist = common::oracle_distance(m, pickup, delivery);
    for s in (0..=deadline.checked_sub(dist)?).rev() {
        if blocker(s) == pickup {
            continue;
        }
        let mut frontier = vec![pickup];
        for t in s..deadline {
            let mut next = Vec::new();
            for &u in &frontier {
                let mut moves = vec![u];
                moves.extend(
                    common::oracle_bfs(m, u)
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| **d == Some(1))
                        .map(|(i, _)| v(i as u32 % m.width(), i as u32 / m.width())),
                );
                for w in moves {
                    let swap = blocker(t) == w && blocker(t + 1) == u;
                    if blocker(t + 1) != w && !swap && !next.contains(&w) {
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        if frontier.contains(&delivery) {
            return Some(deadline - s);
        }
    }
    None
}

#[test]
fn unconstrained_pickup_deadline() {
    let m = corridor();
    let inst = Instance::new(m, "corridor", vec![v(3, 2)], vec![Task::new(TaskId(0), v(0, 1), v(7, 1), 0, 20)]);
    let mut st = released(&inst);
    update_pickup_deadlines(&mut st, &[TaskId(0)]);
    assert_eq!(st.tasks[0].pickup_deadline, Some(13));
    assert_eq!(st.token.dummy_path(TaskId(0)).unwrap().len(), 7);
}

#[test]
fn congested_corridor_lengthens_dummy() {
    let m = corridor();
    let inst = Instance::new(m.clone(), "corridor", vec![v(3, 0)], vec![Task::new(TaskId(0), v(0, 1), v(7, 1), 0, 20)]);
    let mut st = released(&inst);
    st.token.set_path(AgentId(0), crossing_path());
    update_pickup_deadlines(&mut st, &[TaskId(0)]);

    let expected = oracle_dummy_len(&m, v(0, 1), v(7, 1), 20, crossing).unwrap();
    assert_eq!(expected, 9);
    let dummy = st.token.dummy_path(TaskId(0)).unwrap();
    assert_eq!(dummy.len(), expected);
    assert_eq!(st.tasks[0].pickup_deadline, Some(11));
    assert_eq!((dummy.first(), dummy.last(), dummy.end_time()), (v(0, 1), v(7, 1), 20));
    for t in dummy.start_time()..=20 {
        assert_ne!(dummy.at(t), crossing(t));
    }
}

#[test]
fn infeasible_deadline_falls_back_to_distance() {
    let m = corridor();
    let inst = Instance::new(m, "corridor", vec![v(3, 2)], vec![Task::new(TaskId(0), v(0, 1), v(7, 1), 0, 5)]);
    let mut st = released(&inst);
    update_pickup_deadlines(&mut st, &[TaskId(0)]);
    assert_eq!(st.tasks[0].pickup_deadline, Some(-2));
    assert!(st.token.dummy_path(TaskId(0)).is_none());
    assert!(matches!(
        st.trace.last().map(|e| &e.kind),
        Some(EventKind::DeadlineUpdate { pickup_deadline: -2, dummy_len: None, .. })
    ));
}

#[test]
fn overwritten_dummy_is_recomputed_same_timestep() {
    let m = map(&[".T..T.T", "E@@@@@@"]);
    let tasks = vec![
        Task::new(TaskId(0), v(1, 0), v(4, 0), 0, 40),
        Task::new(TaskId(1), v(6, 0), v(1, 0), 0, 40),
    ];
    let inst = Instance::new(m, "corridor", vec![v(0, 1)], tasks);
    let out = run(&inst, &SchedulerConfig::dtp(0.0), 0, lenient()).unwrap();
    let at_zero: Vec<&TraceEvent> = out.trace.iter().filter(|e| e.t == 0).collect();
    let assign = at_zero
        .iter()
        .position(|e| matches!(e.kind, EventKind::Assign { task: TaskId(0), .. }))
        .expect("task 0 assigned at release");
    let updates: Vec<usize> = at_zero
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, EventKind::DeadlineUpdate { task: TaskId(1), .. }))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(updates.len(), 2, "release update plus recompute");
    assert!(updates[0] < assign && assign < updates[1]);
    assert!(validate_trace(&out.trace, &inst).is_clean());
}

fn steal_instance() -> Instance {
    let m = map(&["E........E", "E.....TTTT", "E....T...E"]);
    let tasks = vec![
        Task::new(TaskId(0), v(9, 1), v(7, 1), 0, 60),
        Task::new(TaskId(1), v(6, 1), v(5, 2), 0, 60),
    ];
    Instance::new(m, "steal", vec![v(0, 1), v(9, 0)], tasks)
}

fn completion(out: &mapdd_core::RunOutput, task: TaskId) -> Time {
    out.trace
        .iter()
        .find_map(|e| match e.kind {
            EventKind::Deliver { task: j, .. } if j == task => Some(e.t),
            _ => None,
        })
        .unwrap()
}

#[test]
fn closer_agent_steals_assigned_task() {
    let inst = steal_instance();
    let with = run(&inst, &SchedulerConfig::dtpts(0.0, true, false), 0, lenient()).unwrap();
    let without = run(&inst, &SchedulerConfig::dtpts(0.0, false, false), 0, lenient()).unwrap();

    let first = with.trace.iter().find_map(|e| match e.kind {
        EventKind::Assign { agent, task: TaskId(1), .. } => Some(agent),
        _ => None,
    });
    assert_eq!(first, Some(AgentId(0)));
    assert!(with.trace.iter().any(|e| matches!(
        e.kind,
        EventKind::Steal { agent: AgentId(1), from: AgentId(0), task: TaskId(1) }
    )));
    assert!(with
        .trace
        .iter()
        .any(|e| matches!(e.kind, EventKind::Pickup { agent: AgentId(1), task: TaskId(1), .. })));
    assert!(!without.trace.iter().any(|e| matches!(e.kind, EventKind::Steal { .. })));
    assert!(completion(&with, TaskId(1)) < completion(&without, TaskId(1)));
    assert!(validate_trace(&with.trace, &inst).is_clean());
}

#[test]
fn plain_dtpts_at_zero_alpha_matches_tp() {
    for seed in 0..6 {
        let inst = common::fuzz_instance(seed);
        let tp = run(&inst, &SchedulerConfig::tp(), seed, SimOptions::default()).unwrap();
        let plain = run(&inst, &SchedulerConfig::dtpts(0.0, false, false), seed, SimOptions::default()).unwrap();
        assert_eq!(tp.trace, plain.trace, "seed {seed}");
    }
}

#[test]
fn lone_agent_finishes_at_release_plus_distances() {
    let m = open_room();
    let inst = Instance::new(m.clone(), "room", vec![v(0, 1)], vec![Task::new(TaskId(0), v(4, 2), v(6, 0), 3, 40)]);
    let out = run(&inst, &SchedulerConfig::dtp(0.5), 0, lenient()).unwrap();
    let expected = 3 + common::oracle_distance(&m, v(0, 1), v(4, 2)) + common::oracle_distance(&m, v(4, 2), v(6, 0));
    assert_eq!(out.result.makespan, expected);
    assert_eq!(out.result.cumulative_tardiness, 0);
}
