#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;

use mapdd_core::{GridMap, Instance, Task, TaskId, Vertex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small map with a parking column on the left, scattered task
/// endpoints and light obstacles. Retries until the map parses (connected)
/// and satisfies the well-formedness conditions for `agents`.
pub fn fuzz_map(rng: &mut ChaCha8Rng, agents: usize) -> GridMap {
    loop {
        let w = rng.gen_range(6..=12u32);
        let h = rng.gen_range(agents.max(4) as u32..=9);
        let mut rows = Vec::new();
        for y in 0..h {
            let mut row = String::new();
            for x in 0..w {
                let c = if x == 0 {
                    'E'
                } else if x >= 2 && y % 2 == 1 && rng.gen_bool(0.35) {
                    'T'
                } else if x >= 2 && y % 2 == 0 && y > 0 && y + 1 < h && rng.gen_bool(0.15) {
                    '@'
                } else {
                    '.'
                };
                row.push(c);
            }
            rows.push(row);
        }
        let text = format!("mapd-d map v1\n{w} {h}\n{}\n", rows.join("\n"));
        let Ok(map) = GridMap::parse(&text) else { continue };
        if map.task_endpoints().len() >= 3 && mapdd_core::check_well_formed(&map, agents).is_well_formed() {
            return map;
        }
    }
}

/// Small random instance for property checks.
pub fn fuzz_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let agents = rng.gen_range(2..=5usize);
    let map = fuzz_map(&mut rng, agents);
    let num_tasks = rng.gen_range(4..=20usize);
    let release_hi = rng.gen_range(0..=60u32);
    random_tasks(&mut rng, Arc::new(map), agents, num_tasks, (0, release_hi), (5, 40))
}

pub fn random_tasks(
    rng: &mut ChaCha8Rng,
    map: Arc<GridMap>,
    agents: usize,
    num_tasks: usize,
    release: (u32, u32),
    duration: (u32, u32),
) -> Instance {
    let parking = map.non_task_endpoints();
    let starts: Vec<Vertex> = parking.choose_multiple(rng, agents).copied().collect();
    let eps = map.task_endpoints();
    let mut drafts: Vec<(u32, Vertex, Vertex, u32)> = (0..num_tasks)
        .map(|_| {
            let r = rng.gen_range(release.0..=release.1);
            let p = *eps.choose(rng).unwrap();
            let d = loop {
                let d = *eps.choose(rng).unwrap();
                if d != p {
                    break d;
                }
            };
            (r, p, d, r + rng.gen_range(duration.0..=duration.1))
        })
        .collect();
    drafts.sort_by_key(|d| d.0);
    let tasks = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (r, p, d, dd))| Task::new(TaskId(i as u32), p, d, r, dd))
        .collect();
    Instance::new(map, "fuzz", starts, tasks)
}

/// Plain breadth-first distances over passable cells, written without the
/// library's distance fields.
pub fn oracle_bfs(map: &GridMap, from: Vertex) -> Vec<Option<u32>> {
    let (w, h) = (map.width(), map.height());
    let idx = |v: Vertex| (v.y * w + v.x) as usize;
    let mut dist = vec![None; (w * h) as usize];
    dist[idx(from)] = Some(0);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        let du = dist[idx(u)].unwrap();
        let mut next = Vec::new();
        if u.y > 0 {
            next.push(Vertex::new(u.x, u.y - 1));
        }
        if u.y + 1 < h {
            next.push(Vertex::new(u.x, u.y + 1));
        }
        if u.x > 0 {
            next.push(Vertex::new(u.x - 1, u.y));
        }
        if u.x + 1 < w {
            next.push(Vertex::new(u.x + 1, u.y));
        }
        for v in next {
            if map.is_passable(v) && dist[idx(v)].is_none() {
                dist[idx(v)] = Some(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

pub fn oracle_distance(map: &GridMap, a: Vertex, b: Vertex) -> u32 {
    oracle_bfs(map, a)[(b.y * map.width() + b.x) as usize].expect("connected map")
}
