//! Grid maps: parsing, endpoint classification, true-distance fields and the
//! well-formedness check for online pickup-and-delivery instances.
//!
//! Map file layout:
//!
//! ```text
//! mapd-d map v1
//! <width> <height>
//! <height rows of width characters>
//! ```
//!
//! `@` is an obstacle, `.` a free cell, `T` a task endpoint and `E` a
//! non-task endpoint. Trailing whitespace on a row is ignored.

use std::collections::VecDeque;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAP_HEADER: &str = "mapd-d map v1";

/// The bundled 35x21 warehouse layout used for paper-scale experiments.
pub const WAREHOUSE_MAP: &str = include_str!("../assets/warehouse-35x21.map");

/// Marker for cells a distance field cannot reach.
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Obstacle,
    Free,
    TaskEndpoint,
    NonTaskEndpoint,
}

impl CellKind {
    pub fn is_passable(self) -> bool {
        self != CellKind::Obstacle
    }

    pub fn is_endpoint(self) -> bool {
        matches!(self, CellKind::TaskEndpoint | CellKind::NonTaskEndpoint)
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            '@' => Some(CellKind::Obstacle),
            '.' => Some(CellKind::Free),
            'T' => Some(CellKind::TaskEndpoint),
            'E' => Some(CellKind::NonTaskEndpoint),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Obstacle => '@',
            CellKind::Free => '.',
            CellKind::TaskEndpoint => 'T',
            CellKind::NonTaskEndpoint => 'E',
        }
    }
}

/// A grid cell addressed by column `x` and row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Vertex {
    pub x: u32,
    pub y: u32,
}

impl Vertex {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Vertex) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn is_adjacent(self, other: Vertex) -> bool {
        self.manhattan(other) == 1
    }
}

impl From<[u32; 2]> for Vertex {
    fn from(v: [u32; 2]) -> Self {
        Vertex::new(v[0], v[1])
    }
}

impl From<Vertex> for [u32; 2] {
    fn from(v: Vertex) -> Self {
        [v.x, v.y]
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },
    #[error("line {line}, column {column}: unknown cell character {ch:?}")]
    UnknownChar { line: usize, column: usize, ch: char },
    #[error("line {line}: ragged row, expected {expected} cells, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("map has no passable cell")]
    NoPassableCell,
    #[error("line {line}, column {column}: cell is disconnected from the rest of the map")]
    Disconnected { line: usize, column: usize },
}

/// Exact shortest-path lengths from one source over 4-neighbour moves.
#[derive(Debug, Clone)]
pub struct DistanceField {
    source: Vertex,
    width: u32,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn source(&self) -> Vertex {
        self.source
    }

    pub fn get(&self, v: Vertex) -> Option<u32> {
        let d = self.dist[(v.y * self.width + v.x) as usize];
        (d != UNREACHABLE).then_some(d)
    }

    /// Raw lookup by cell index; returns [`UNREACHABLE`] for unreachable cells.
    #[inline]
    pub fn at_index(&self, idx: usize) -> u32 {
        self.dist[idx]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.dist
    }
}

/// An immutable 4-connected grid graph.
///
/// Distance fields are computed on first use per source and cached for the
/// lifetime of the map; concurrent readers always see a complete field.
#[derive(Debug)]
pub struct GridMap {
    width: u32,
    height: u32,
    cells: Vec<CellKind>,
    // up, down, left, right; u32::MAX where there is no passable neighbour
    adjacency: Vec<[u32; 4]>,
    fields: Vec<OnceLock<DistanceField>>,
    diameter: OnceLock<u32>,
    digest: String,
}

impl Clone for GridMap {
    fn clone(&self) -> Self {
        GridMap::from_cells(self.width, self.height, self.cells.clone())
    }
}

impl PartialEq for GridMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.cells == other.cells
    }
}

impl Eq for GridMap {}

const NO_NEIGHBOR: u32 = u32::MAX;

impl GridMap {
    /// Builds a map from row-major cells without checking connectivity.
    fn from_cells(width: u32, height: u32, cells: Vec<CellKind>) -> Self {
        let n = cells.len();
        let mut adjacency = vec![[NO_NEIGHBOR; 4]; n];
        for y in 0..height {
            for x in 0..width {
                let idx = (y * width + x) as usize;
                if !cells[idx].is_passable() {
                    continue;
                }
                let candidates = [
                    (y > 0).then(|| idx - width as usize),
                    (y + 1 < height).then(|| idx + width as usize),
                    (x > 0).then(|| idx - 1),
                    (x + 1 < width).then(|| idx + 1),
                ];
                for (slot, cand) in candidates.into_iter().enumerate() {
                    if let Some(c) = cand {
                        if cells[c].is_passable() {
                            adjacency[idx][slot] = c as u32;
                        }
                    }
                }
            }
        }
        let text: String = cells.iter().map(|c| c.to_char()).collect();
        let digest = hex::encode(Sha256::digest(format!("{width} {height}\n{text}").as_bytes()));
        GridMap {
            width,
            height,
            cells,
            adjacency,
            fields: (0..n).map(|_| OnceLock::new()).collect(),
            diameter: OnceLock::new(),
            digest,
        }
    }

    pub fn parse(text: &str) -> Result<Self, MapError> {
        parse_map(text)
    }

    pub fn warehouse() -> Self {
        parse_map(WAREHOUSE_MAP).expect("bundled warehouse map is valid")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Hex SHA-256 over the dimensions and cell layout.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn contains(&self, v: Vertex) -> bool {
        v.x < self.width && v.y < self.height
    }

    #[inline]
    pub fn index(&self, v: Vertex) -> usize {
        debug_assert!(self.contains(v), "{v} outside {}x{}", self.width, self.height);
        (v.y * self.width + v.x) as usize
    }

    #[inline]
    pub fn vertex(&self, idx: usize) -> Vertex {
        let idx = idx as u32;
        Vertex::new(idx % self.width, idx / self.width)
    }

    pub fn kind(&self, v: Vertex) -> CellKind {
        self.cells[self.index(v)]
    }

    #[inline]
    pub fn kind_at(&self, idx: usize) -> CellKind {
        self.cells[idx]
    }

    pub fn is_passable(&self, v: Vertex) -> bool {
        self.contains(v) && self.kind(v).is_passable()
    }

    /// Passable neighbours in the fixed order up, down, left, right.
    #[inline]
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[idx]
            .iter()
            .filter(|&&n| n != NO_NEIGHBOR)
            .map(|&n| n as usize)
    }

    pub fn task_endpoints(&self) -> Vec<Vertex> {
        self.cells_of(CellKind::TaskEndpoint)
    }

    pub fn non_task_endpoints(&self) -> Vec<Vertex> {
        self.cells_of(CellKind::NonTaskEndpoint)
    }

    pub fn endpoints(&self) -> Vec<Vertex> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].is_endpoint())
            .map(|i| self.vertex(i))
            .collect()
    }

    fn cells_of(&self, kind: CellKind) -> Vec<Vertex> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] == kind)
            .map(|i| self.vertex(i))
            .collect()
    }

    pub fn passable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_passable()).count()
    }

    /// Cached distance field rooted at `source`.
    pub fn distances_from(&self, source: Vertex) -> &DistanceField {
        let idx = self.index(source);
        self.fields[idx].get_or_init(|| bfs_distance(self, source))
    }

    /// True distance ignoring agents, `None` if unreachable.
    pub fn distance(&self, from: Vertex, to: Vertex) -> Option<u32> {
        self.distances_from(to).get(from)
    }

    /// Largest finite distance between any two passable cells.
    pub fn diameter(&self) -> u32 {
        *self.diameter.get_or_init(|| {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].is_passable())
            .map(|i| {
                bfs_distance(self, self.vertex(i))
                    .dist
                    .iter()
                    .copied()
                    .filter(|&d| d != UNREACHABLE)
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
        })
    }

    /// Renders the map back into its file format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAP_HEADER}\n{} {}\n", self.width, self.height);
        for row in self.cells.chunks(self.width as usize) {
            out.extend(row.iter().map(|c| c.to_char()));
            out.push('\n');
        }
        out
    }
}

pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

    match lines.next() {
        Some((_, MAP_HEADER)) => {}
        Some((line, other)) => {
            return Err(MapError::Header {
                line,
                reason: format!("expected {MAP_HEADER:?}, found {other:?}"),
            })
        }
        None => {
            return Err(MapError::Header {
                line: 1,
                reason: "empty input".into(),
            })
        }
    }

    let (dim_line, dims) = lines.next().ok_or(MapError::Header {
        line: 2,
        reason: "missing dimensions".into(),
    })?;
    let parsed: Vec<u32> = dims
        .split_whitespace()
        .map(|s| s.parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| MapError::Header {
            line: dim_line,
            reason: format!("bad dimension: {e}"),
        })?;
    let [width, height] = parsed[..] else {
        return Err(MapError::Header {
            line: dim_line,
            reason: format!("expected `<width> <height>`, found {dims:?}"),
        });
    };
    if width == 0 || height == 0 {
        return Err(MapError::Header {
            line: dim_line,
            reason: "width and height must be at least 1".into(),
        });
    }

    let mut cells = Vec::with_capacity((width * height) as usize);
    let mut rows = 0usize;
    let mut row_lines = Vec::with_capacity(height as usize);
    for (line, row) in lines {
        if rows == height as usize {
            if row.trim().is_empty() {
                continue;
            }
            return Err(MapError::RowCount {
                expected: height as usize,
                found: rows + 1,
            });
        }
        let found = row.chars().count();
        if found != width as usize {
            return Err(MapError::RaggedRow {
                line,
                expected: width as usize,
                found,
            });
        }
        for (col, ch) in row.chars().enumerate() {
            let kind = CellKind::from_char(ch).ok_or(MapError::UnknownChar {
                line,
                column: col + 1,
                ch,
            })?;
            cells.push(kind);
        }
        row_lines.push(line);
        rows += 1;
    }
    if rows != height as usize {
        return Err(MapError::RowCount {
            expected: height as usize,
            found: rows,
        });
    }

    let map = GridMap::from_cells(width, height, cells);
    let first = (0..map.num_cells())
        .find(|&i| map.kind_at(i).is_passable())
        .ok_or(MapError::NoPassableCell)?;
    let field = bfs_distance(&map, map.vertex(first));
    if let Some(cut) =
        (0..map.num_cells()).find(|&i| map.kind_at(i).is_passable() && field.dist[i] == UNREACHABLE)
    {
        let v = map.vertex(cut);
        return Err(MapError::Disconnected {
            line: row_lines[v.y as usize],
            column: v.x as usize + 1,
        });
    }
    Ok(map)
}

/// Breadth-first distances from `source`, ignoring agents.
pub fn bfs_distance(map: &GridMap, source: Vertex) -> DistanceField {
    let mut dist = vec![UNREACHABLE; map.num_cells()];
    let start = map.index(source);
    debug_assert!(map.kind_at(start).is_passable(), "source {source} is an obstacle");
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        for v in map.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    DistanceField {
        source,
        width: map.width,
        dist,
    }
}

/// Outcome of the three well-formedness conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WellFormedReport {
    /// Finitely many tasks; always true for finite instances.
    pub finite_tasks: bool,
    /// Agents do not outnumber non-task endpoints.
    pub enough_parking: bool,
    /// Every ordered pair of endpoints is joined by a path avoiding the
    /// remaining endpoints.
    pub endpoints_connected: bool,
    pub num_agents: usize,
    pub non_task_endpoints: usize,
    pub disconnected_pairs: Vec<(Vertex, Vertex)>,
}

impl WellFormedReport {
    pub fn is_well_formed(&self) -> bool {
        self.finite_tasks && self.enough_parking && self.endpoints_connected
    }
}

impl fmt::Display for WellFormedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "finite tasks: {}, agents {} <= non-task endpoints {}: {}, endpoints connected: {}",
            self.finite_tasks,
            self.num_agents,
            self.non_task_endpoints,
            self.enough_parking,
            self.endpoints_connected
        )?;
        if !self.disconnected_pairs.is_empty() {
            write!(f, " ({} disconnected pairs", self.disconnected_pairs.len())?;
            if let Some((a, b)) = self.disconnected_pairs.first() {
                write!(f, ", e.g. {a} -> {b}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

pub fn check_well_formed(map: &GridMap, num_agents: usize) -> WellFormedReport {
    let endpoints: Vec<usize> = (0..map.num_cells())
        .filter(|&i| map.kind_at(i).is_endpoint())
        .collect();
    let non_task = endpoints
        .iter()
        .filter(|&&i| map.kind_at(i) == CellKind::NonTaskEndpoint)
        .count();

    // One BFS per source endpoint where every other endpoint is a sink: it
    // may be reached but never expanded. This is the pairwise test with the
    // remaining endpoints deleted, done for all targets at once.
    let mut disconnected = Vec::new();
    let mut seen = vec![false; map.num_cells()];
    let mut queue = VecDeque::new();
    for &src in &endpoints {
        seen.iter_mut().for_each(|s| *s = false);
        seen[src] = true;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            if u != src && map.kind_at(u).is_endpoint() {
                continue;
            }
            for v in map.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        for &dst in &endpoints {
            if dst != src && !seen[dst] {
                disconnected.push((map.vertex(src), map.vertex(dst)));
            }
        }
    }

    WellFormedReport {
        finite_tasks: true,
        enough_parking: num_agents <= non_task,
        endpoints_connected: disconnected.is_empty(),
        num_agents,
        non_task_endpoints: non_task,
        disconnected_pairs: disconnected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[&str]) -> GridMap {
        let text = format!(
            "{MAP_HEADER}\n{} {}\n{}\n",
            rows[0].len(),
            rows.len(),
            rows.join("\n")
        );
        parse_map(&text).unwrap()
    }

    #[test]
    fn parses_minimal_map() {
        let m = map(&["...", "...", "..."]);
        assert_eq!(m.passable_count(), 9);
        assert!(m.endpoints().is_empty());
    }

    #[test]
    fn parses_single_obstacle() {
        let m = map(&["...", ".@.", "..."]);
        assert_eq!(m.passable_count(), 8);
        assert_eq!(m.kind(Vertex::new(1, 1)), CellKind::Obstacle);
    }

    #[test]
    fn bundled_warehouse_has_endpoints() {
        let m = GridMap::warehouse();
        assert_eq!((m.width(), m.height()), (35, 21));
        assert!(!m.task_endpoints().is_empty());
        assert!(m.non_task_endpoints().len() >= 15);
    }

    #[test]
    fn rejects_bad_header() {
        let err = parse_map("mapd-d map v2\n1 1\n.\n").unwrap_err();
        assert!(matches!(err, MapError::Header { line: 1, .. }));
        let err = parse_map("mapd-d map v1\n1\n.\n").unwrap_err();
        assert!(matches!(err, MapError::Header { line: 2, .. }));
        let err = parse_map("mapd-d map v1\n0 1\n\n").unwrap_err();
        assert!(matches!(err, MapError::Header { line: 2, .. }));
    }

    #[test]
    fn rejects_unknown_char_with_position() {
        let err = parse_map("mapd-d map v1\n3 2\n...\n.x.\n").unwrap_err();
        assert_eq!(
            err,
            MapError::UnknownChar {
                line: 4,
                column: 2,
                ch: 'x'
            }
        );
    }

    #[test]
    fn rejects_ragged_row() {
        let err = parse_map("mapd-d map v1\n3 2\n...\n..\n").unwrap_err();
        assert_eq!(
            err,
            MapError::RaggedRow {
                line: 4,
                expected: 3,
                found: 2
            }
        );
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let err = parse_map("mapd-d map v1\n3 2\n...\n").unwrap_err();
        assert_eq!(err, MapError::RowCount { expected: 2, found: 1 });
        let err = parse_map("mapd-d map v1\n3 1\n...\n...\n").unwrap_err();
        assert!(matches!(err, MapError::RowCount { .. }));
    }

    #[test]
    fn trailing_whitespace_is_ignored() {
        let m = parse_map("mapd-d map v1  \n2 1 \n.T   \n\n").unwrap();
        assert_eq!(m.task_endpoints(), vec![Vertex::new(1, 0)]);
    }

    #[test]
    fn rejects_disconnected_free_space() {
        let err = parse_map("mapd-d map v1\n3 1\n.@.\n").unwrap_err();
        assert_eq!(err, MapError::Disconnected { line: 3, column: 3 });
    }

    #[test]
    fn rejects_all_obstacles() {
        assert_eq!(
            parse_map("mapd-d map v1\n1 1\n@\n").unwrap_err(),
            MapError::NoPassableCell
        );
    }

    #[test]
    fn bfs_on_empty_grid_is_manhattan() {
        let m = map(&["...", "...", "..."]);
        let f = bfs_distance(&m, Vertex::new(0, 0));
        assert_eq!(f.get(Vertex::new(2, 2)), Some(4));
        assert_eq!(f.get(Vertex::new(0, 0)), Some(0));
    }

    #[test]
    fn bfs_detours_around_wall() {
        // column x=1 walled except (1,2)
        let m = map(&[".@.", ".@.", "..."]);
        let f = bfs_distance(&m, Vertex::new(0, 0));
        assert_eq!(f.get(Vertex::new(2, 0)), Some(6));
    }

    #[test]
    fn bfs_marks_obstacles_unreachable() {
        let m = map(&[".@.", "..."]);
        let f = bfs_distance(&m, Vertex::new(0, 0));
        assert_eq!(f.get(Vertex::new(1, 0)), None);
    }

    #[test]
    fn cached_distances_match_fresh_bfs() {
        let m = GridMap::warehouse();
        let a = Vertex::new(0, 0);
        let b = Vertex::new(20, 11);
        assert_eq!(m.distance(a, b), bfs_distance(&m, b).get(a));
        assert_eq!(m.distance(a, b), m.distance(b, a));
    }

    #[test]
    fn too_many_agents_violates_parking_condition() {
        let row = "E".repeat(15);
        let m = map(&[&row, &".".repeat(15)]);
        let report = check_well_formed(&m, 16);
        assert!(!report.enough_parking);
        assert!(!report.is_well_formed());
        assert!(check_well_formed(&m, 15).enough_parking);
    }

    #[test]
    fn endpoint_reachable_only_through_another_is_flagged() {
        let m = map(&["T.T.T"]);
        let report = check_well_formed(&m, 0);
        assert!(!report.endpoints_connected);
        let (a, c) = (Vertex::new(0, 0), Vertex::new(4, 0));
        assert_eq!(report.disconnected_pairs, vec![(a, c), (c, a)]);
    }

    #[test]
    fn bundled_warehouse_is_well_formed_for_fifteen_agents() {
        let report = check_well_formed(&GridMap::warehouse(), 15);
        assert!(report.is_well_formed(), "{report}");
    }

    #[test]
    fn text_round_trip() {
        let m = GridMap::warehouse();
        let again = parse_map(&m.to_text()).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.digest(), again.digest());
    }
}
