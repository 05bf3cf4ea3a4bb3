//! Random instance generation and the `mapd-d instance v1` file format.
//!
//! Generation uses `ChaCha8Rng::seed_from_u64(seed)` and draws, in order:
//! the agent starts (without replacement from the non-task endpoints), then
//! for each task its release time, pickup, delivery (redrawn until it
//! differs from the pickup) and deadline duration. All ranges are inclusive.
//! Tasks are then stably sorted by release time and numbered from 0.
//!
//! ```text
//! mapd-d instance v1
//! map builtin:warehouse-35x21 <sha256 of the map>
//! agents 2
//! agent 0 0 0
//! agent 1 34 0
//! tasks 1
//! task 0 17 5 1 8 5 61
//! ```
//!
//! A task line reads `task <id> <release> <px> <py> <dx> <dy> <deadline>`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridmap::{check_well_formed, CellKind, GridMap, MapError, Vertex, WellFormedReport};
use crate::model::{Task, TaskId, Time};

pub const INSTANCE_HEADER: &str = "mapd-d instance v1";
/// Map reference resolving to [`GridMap::warehouse`].
pub const BUILTIN_WAREHOUSE: &str = "builtin:warehouse-35x21";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReleaseRegime {
    Dense,
    Sparse,
}

impl ReleaseRegime {
    pub fn range(self) -> (Time, Time) {
        match self {
            ReleaseRegime::Dense => (0, 300),
            ReleaseRegime::Sparse => (0, 500),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReleaseRegime::Dense => "dense",
            ReleaseRegime::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeadlineRegime {
    Short,
    Long,
}

impl DeadlineRegime {
    pub fn range(self) -> (Time, Time) {
        match self {
            DeadlineRegime::Short => (20, 80),
            DeadlineRegime::Long => (60, 120),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeadlineRegime::Short => "short",
            DeadlineRegime::Long => "long",
        }
    }
}

impl FromStr for ReleaseRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(ReleaseRegime::Dense),
            "sparse" => Ok(ReleaseRegime::Sparse),
            _ => Err(format!("unknown release regime {s:?} (expected dense or sparse)")),
        }
    }
}

impl FromStr for DeadlineRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(DeadlineRegime::Short),
            "long" => Ok(DeadlineRegime::Long),
            _ => Err(format!("unknown deadline regime {s:?} (expected short or long)")),
        }
    }
}

/// A release/deadline combination, written `dense-short` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Regime {
    pub release: ReleaseRegime,
    pub deadline: DeadlineRegime,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::new(ReleaseRegime::Dense, DeadlineRegime::Short),
        Regime::new(ReleaseRegime::Dense, DeadlineRegime::Long),
        Regime::new(ReleaseRegime::Sparse, DeadlineRegime::Short),
        Regime::new(ReleaseRegime::Sparse, DeadlineRegime::Long),
    ];

    pub const fn new(release: ReleaseRegime, deadline: DeadlineRegime) -> Self {
        Regime { release, deadline }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.release.as_str(), self.deadline.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, d) = s.split_once('-').ok_or_else(|| format!("regime {s:?} is not <release>-<deadline>"))?;
        Ok(Regime::new(r.parse()?, d.parse()?))
    }
}

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub map: Arc<GridMap>,
    pub map_ref: String,
    pub num_agents: usize,
    pub num_tasks: usize,
    /// Inclusive release-time range.
    pub release_range: (Time, Time),
    /// Inclusive range of `deadline - release`.
    pub duration_range: (Time, Time),
    pub seed: u64,
}

impl GenSpec {
    pub fn new(map: Arc<GridMap>, map_ref: impl Into<String>, agents: usize, tasks: usize, regime: Regime, seed: u64) -> Self {
        GenSpec {
            map,
            map_ref: map_ref.into(),
            num_agents: agents,
            num_tasks: tasks,
            release_range: regime.release.range(),
            duration_range: regime.deadline.range(),
            seed,
        }
    }

    /// 15 agents and 151 tasks on the bundled warehouse.
    pub fn warehouse(regime: Regime, seed: u64) -> Self {
        GenSpec::new(Arc::new(GridMap::warehouse()), BUILTIN_WAREHOUSE, 15, 151, regime, seed)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("need at least one agent")]
    NoAgents,
    #[error("need at least one task")]
    NoTasks,
    #[error("{agents} agents but only {endpoints} non-task endpoints")]
    TooManyAgents { agents: usize, endpoints: usize },
    #[error("need at least two task endpoints, map has {0}")]
    TooFewTaskEndpoints(usize),
    #[error("empty range [{0}, {1}]")]
    EmptyRange(Time, Time),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub map: Arc<GridMap>,
    /// How the map was referenced: a file path or [`BUILTIN_WAREHOUSE`].
    pub map_ref: String,
    pub agent_starts: Vec<Vertex>,
    /// Indexed by task id.
    pub tasks: Vec<Task>,
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.map.digest() == other.map.digest()
            && self.map_ref == other.map_ref
            && self.agent_starts == other.agent_starts
            && self.tasks == other.tasks
    }
}

impl Instance {
    pub fn new(map: Arc<GridMap>, map_ref: impl Into<String>, agent_starts: Vec<Vertex>, tasks: Vec<Task>) -> Self {
        debug_assert!(tasks.iter().enumerate().all(|(i, t)| t.id.index() == i));
        Instance {
            map,
            map_ref: map_ref.into(),
            agent_starts,
            tasks,
        }
    }

    pub fn well_formedness(&self) -> WellFormedReport {
        check_well_formed(&self.map, self.agent_starts.len())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{INSTANCE_HEADER}");
        let _ = writeln!(s, "map {} {}", self.map_ref, self.map.digest());
        let _ = writeln!(s, "agents {}", self.agent_starts.len());
        for (i, v) in self.agent_starts.iter().enumerate() {
            let _ = writeln!(s, "agent {i} {} {}", v.x, v.y);
        }
        let _ = writeln!(s, "tasks {}", self.tasks.len());
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "task {} {} {} {} {} {} {}",
                t.id.0, t.release_time, t.pickup.x, t.pickup.y, t.delivery.x, t.delivery.y, t.delivery_deadline
            );
        }
        s
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (Time, Time)) -> Time {
    rng.gen_range(lo..=hi)
}

pub fn generate(spec: &GenSpec) -> Result<Instance, GenError> {
    if spec.num_agents == 0 {
        return Err(GenError::NoAgents);
    }
    if spec.num_tasks == 0 {
        return Err(GenError::NoTasks);
    }
    for (lo, hi) in [spec.release_range, spec.duration_range] {
        if lo > hi {
            return Err(GenError::EmptyRange(lo, hi));
        }
    }
    let parking = spec.map.non_task_endpoints();
    if spec.num_agents > parking.len() {
        return Err(GenError::TooManyAgents {
            agents: spec.num_agents,
            endpoints: parking.len(),
        });
    }
    let task_eps = spec.map.task_endpoints();
    if task_eps.len() < 2 {
        return Err(GenError::TooFewTaskEndpoints(task_eps.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let agent_starts: Vec<Vertex> = parking.choose_multiple(&mut rng, spec.num_agents).copied().collect();
    let mut drafts = Vec::with_capacity(spec.num_tasks);
    for _ in 0..spec.num_tasks {
        let release = draw(&mut rng, spec.release_range);
        let pickup = task_eps[rng.gen_range(0..task_eps.len())];
        let delivery = loop {
            let d = task_eps[rng.gen_range(0..task_eps.len())];
            if d != pickup {
                break d;
            }
        };
        let duration = draw(&mut rng, spec.duration_range);
        drafts.push((release, pickup, delivery, release + duration));
    }
    drafts.sort_by_key(|d| d.0);
    let tasks = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (r, p, d, dd))| Task::new(TaskId(i as u32), p, d, r, dd))
        .collect();
    Ok(Instance::new(spec.map.clone(), spec.map_ref.clone(), agent_starts, tasks))
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported instance header {0:?} (expected {INSTANCE_HEADER:?})")]
    Version(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("map {map_ref}: {source}")]
    Map {
        map_ref: String,
        #[source]
        source: MapError,
    },
    #[error("map {map_ref} has digest {found}, instance expects {expected}")]
    MapDigest {
        map_ref: String,
        expected: String,
        found: String,
    },
    #[error("agent {agent}: start {at} is outside the map or blocked")]
    AgentStart { agent: usize, at: Vertex },
    #[error("agents {a} and {b} share start vertex {at}")]
    SharedStart { a: usize, b: usize, at: Vertex },
    #[error("task {task}: {what} vertex {at} is out of bounds")]
    OutOfBounds { task: u32, what: &'static str, at: Vertex },
    #[error("task {task}: {what} vertex {at} is not a task endpoint")]
    NotTaskEndpoint { task: u32, what: &'static str, at: Vertex },
    #[error("task {task}: pickup and delivery coincide at {at}")]
    SameEndpoints { task: u32, at: Vertex },
    #[error("task {task}: deadline {deadline} precedes release {release}")]
    DeadlineBeforeRelease { task: u32, release: Time, deadline: Time },
    #[error("task ids must run 0..n in order; found {found} at position {expected}")]
    TaskOrder { expected: usize, found: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceWarning {
    NotWellFormed(WellFormedReport),
}

impl fmt::Display for InstanceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceWarning::NotWellFormed(r) => write!(f, "instance is not well-formed: {r}"),
        }
    }
}

/// Loads the map named by `map_ref`, relative paths resolved against `base`.
pub fn resolve_map(map_ref: &str, base: &Path) -> Result<GridMap, InstanceError> {
    if map_ref == BUILTIN_WAREHOUSE {
        return Ok(GridMap::warehouse());
    }
    let path = base.join(map_ref);
    let text = fs::read_to_string(&path).map_err(|source| InstanceError::Io { path, source })?;
    GridMap::parse(&text).map_err(|source| InstanceError::Map {
        map_ref: map_ref.to_string(),
        source,
    })
}

pub fn save_instance(instance: &Instance, path: &Path) -> Result<(), InstanceError> {
    fs::write(path, instance.to_text()).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_instance(path: &Path) -> Result<(Instance, Vec<InstanceWarning>), InstanceError> {
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_instance(&text, |map_ref| resolve_map(map_ref, base))
}

/// Parses instance text; `load_map` turns the map reference into a map.
pub fn parse_instance(
    text: &str,
    load_map: impl FnOnce(&str) -> Result<GridMap, InstanceError>,
) -> Result<(Instance, Vec<InstanceWarning>), InstanceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (_, header) = lines.next().ok_or_else(|| InstanceError::Version(String::new()))?;
    if header != INSTANCE_HEADER {
        return Err(InstanceError::Version(header.to_string()));
    }

    let syntax = |line: usize, reason: String| InstanceError::Syntax { line, reason };
    let mut expect = |keyword: &str, arity: usize| -> Result<(usize, Vec<&str>), InstanceError> {
        let (n, l) = lines
            .next()
            .ok_or_else(|| syntax(0, format!("unexpected end of file, expected {keyword}")))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields[0] != keyword || fields.len() != arity + 1 {
            return Err(syntax(n, format!("expected `{keyword}` with {arity} fields, found {l:?}")));
        }
        Ok((n, fields[1..].to_vec()))
    };
    let num = |line: usize, s: &str| -> Result<u32, InstanceError> {
        s.parse::<u32>().map_err(|_| syntax(line, format!("{s:?} is not a non-negative integer")))
    };

    let (_, m) = expect("map", 2)?;
    let (map_ref, digest) = (m[0].to_string(), m[1].to_string());
    let map = load_map(&map_ref)?;
    if map.digest() != digest {
        return Err(InstanceError::MapDigest {
            map_ref,
            expected: digest,
            found: map.digest().to_string(),
        });
    }

    let (n, count) = expect("agents", 1)?;
    let num_agents = num(n, count[0])? as usize;
    let mut agent_starts = Vec::with_capacity(num_agents);
    for i in 0..num_agents {
        let (n, f) = expect("agent", 3)?;
        if num(n, f[0])? as usize != i {
            return Err(syntax(n, format!("agent ids must run 0..{num_agents} in order")));
        }
        let at = Vertex {
            x: num(n, f[1])?,
            y: num(n, f[2])?,
        };
        if !map.contains(at) || !map.is_passable(at) {
            return Err(InstanceError::AgentStart { agent: i, at });
        }
        if let Some(j) = agent_starts.iter().position(|&v| v == at) {
            return Err(InstanceError::SharedStart { a: j, b: i, at });
        }
        agent_starts.push(at);
    }

    let (n, count) = expect("tasks", 1)?;
    let num_tasks = num(n, count[0])? as usize;
    let mut tasks = Vec::with_capacity(num_tasks);
    for i in 0..num_tasks {
        let (n, f) = expect("task", 7)?;
        let id = num(n, f[0])?;
        if id as usize != i {
            return Err(InstanceError::TaskOrder { expected: i, found: id });
        }
        let release = num(n, f[1])?;
        let pickup = Vertex {
            x: num(n, f[2])?,
            y: num(n, f[3])?,
        };
        let delivery = Vertex {
            x: num(n, f[4])?,
            y: num(n, f[5])?,
        };
        let deadline = num(n, f[6])?;
        for (what, at) in [("pickup", pickup), ("delivery", delivery)] {
            if !map.contains(at) {
                return Err(InstanceError::OutOfBounds { task: id, what, at });
            }
            if map.kind(at) != CellKind::TaskEndpoint {
                return Err(InstanceError::NotTaskEndpoint { task: id, what, at });
            }
        }
        if pickup == delivery {
            return Err(InstanceError::SameEndpoints { task: id, at: pickup });
        }
        if deadline < release {
            return Err(InstanceError::DeadlineBeforeRelease { task: id, release, deadline });
        }
        tasks.push(Task::new(TaskId(id), pickup, delivery, release, deadline));
    }
    if let Some((n, l)) = lines.next() {
        return Err(syntax(n, format!("trailing content {l:?}")));
    }

    let instance = Instance::new(Arc::new(map), map_ref, agent_starts, tasks);
    let report = instance.well_formedness();
    let warnings = if report.is_well_formed() {
        vec![]
    } else {
        vec![InstanceWarning::NotWellFormed(report)]
    };
    Ok((instance, warnings))
}
