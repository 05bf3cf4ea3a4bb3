//! Fixtures shared by the benchmarks.

use mapdd_core::{generate, AgentId, GenSpec, GridMap, Instance, PlanRequest, Regime, Token, Vertex};

/// The bundled warehouse with 15 agents parked on their generated starts.
pub fn parked_token(seed: u64) -> (GridMap, Token, Vec<Vertex>) {
    let instance = paper_instance(Regime::ALL[0], seed);
    let map = (*instance.map).clone();
    let token = Token::new(&map, &instance.agent_starts, 0);
    (map, token, instance.agent_starts)
}

pub fn paper_instance(regime: Regime, seed: u64) -> Instance {
    generate(&GenSpec::warehouse(regime, seed)).expect("bundled warehouse accepts 15 agents")
}

/// Corner-to-corner pickup and delivery request for agent 0.
pub fn long_request(map: &GridMap, origin: Vertex) -> PlanRequest {
    let tasks = map.task_endpoints();
    let pickup = *tasks.first().expect("task endpoints");
    let delivery = *tasks.last().expect("task endpoints");
    PlanRequest::new(map, AgentId(0), origin, vec![pickup, delivery], 0)
}
