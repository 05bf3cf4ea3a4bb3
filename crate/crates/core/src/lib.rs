//! Online multi-agent pickup and delivery with task deadlines.
//!
//! Agents on a 4-connected grid pick up and deliver tasks released over
//! time, each with a delivery deadline. Planning follows token passing: one
//! agent at a time reads the shared [`Token`], chooses a task and reserves a
//! conflict-free space-time path.
//!
//! ```
//! use mapdd_core::{generate, run, GenSpec, Regime, SchedulerConfig, SimOptions};
//!
//! let instance = generate(&GenSpec::warehouse(Regime::ALL[3], 1)).unwrap();
//! let out = run(&instance, &SchedulerConfig::dtpts(0.1, true, true), 1, SimOptions::default()).unwrap();
//! assert_eq!(out.result.per_task.len(), 151);
//! ```

pub mod gridmap;
pub mod instance;
pub mod model;
pub mod planner;
pub mod scheduler;
pub mod sim;
pub mod sweep;

pub use gridmap::{bfs_distance, check_well_formed, CellKind, GridMap, MapError, Vertex, WellFormedReport};
pub use instance::{
    generate, load_instance, parse_instance, save_instance, DeadlineRegime, GenError, GenSpec, Instance, InstanceError,
    InstanceWarning, Regime, ReleaseRegime, BUILTIN_WAREHOUSE,
};
pub use model::{
    detect_conflict, tardiness, AgentId, AgentState, Conflict, Phase, SpaceTimePath, TardinessRecord, Task, TaskId,
    Time, Token,
};
pub use planner::{plan_path, plan_relocation, plan_reverse, PlanError, PlanRequest, PlannedPath, ReversePlanRequest};
pub use scheduler::{Algorithm, AssignmentScore, ConfigError, SchedulerConfig};
pub use sim::{
    read_trace, run, validate_trace, write_trace, EventKind, RunOutput, RunResult, SimError, SimOptions,
    SimulationState, TraceEvent, ValidationReport, Violation,
};
