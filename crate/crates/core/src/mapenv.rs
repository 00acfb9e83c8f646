//! The symbolic grid world: cells, POIs, intersections, road segments,
//! local observations, and deterministic shortest-path routing.
//!
//! Conventions fixed here and relied on everywhere else:
//! - row 0 is the north edge; north = decreasing row, east = increasing col;
//! - movement is eight-directional (Moore neighborhood), every move costs 1;
//! - roads and intersections are navigable, POI cells only as route endpoints,
//!   background is impassable;
//! - ties between cells are broken in row-major order `(row, col)`.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

/// Grid cell address. `col` grows eastward, `row` grows southward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "(i32, i32)", from = "(i32, i32)")]
pub struct Coord {
    pub col: i32,
    pub row: i32,
}

impl Coord {
    pub fn new(col: i32, row: i32) -> Self {
        Coord { col, row }
    }

    pub fn chebyshev(self, other: Coord) -> i32 {
        (self.col - other.col).abs().max((self.row - other.row).abs())
    }

    pub fn is_moore_adjacent(self, other: Coord) -> bool {
        self != other && self.chebyshev(other) == 1
    }

    /// The 8 Moore neighbors, in row-major order.
    pub fn neighbors8(self) -> impl Iterator<Item = Coord> {
        const DELTAS: [(i32, i32); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        DELTAS
            .into_iter()
            .map(move |(dc, dr)| Coord::new(self.col + dc, self.row + dr))
    }
}

impl From<(i32, i32)> for Coord {
    fn from((col, row): (i32, i32)) -> Self {
        Coord { col, row }
    }
}

impl From<Coord> for (i32, i32) {
    fn from(c: Coord) -> Self {
        (c.col, c.row)
    }
}

// Row-major ordering: the canonical tie-break order for cells.
impl Ord for Coord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Straight-line distance between two cells, in cell units.
pub fn euclidean_distance(a: Coord, b: Coord) -> f64 {
    let dc = (a.col - b.col) as f64;
    let dr = (a.row - b.row) as f64;
    (dc * dc + dr * dr).sqrt()
}

/// One of the eight compass bearings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compass {
    North,
    NorthEast,
    East,
    SouthEast,
    South,
    SouthWest,
    West,
    NorthWest,
}

impl Compass {
    pub const ALL: [Compass; 8] = [
        Compass::North,
        Compass::NorthEast,
        Compass::East,
        Compass::SouthEast,
        Compass::South,
        Compass::SouthWest,
        Compass::West,
        Compass::NorthWest,
    ];

    pub fn opposite(self) -> Compass {
        match self {
            Compass::North => Compass::South,
            Compass::NorthEast => Compass::SouthWest,
            Compass::East => Compass::West,
            Compass::SouthEast => Compass::NorthWest,
            Compass::South => Compass::North,
            Compass::SouthWest => Compass::NorthEast,
            Compass::West => Compass::East,
            Compass::NorthWest => Compass::SouthEast,
        }
    }

    /// True for N/E/S/W.
    pub fn is_cardinal(self) -> bool {
        matches!(
            self,
            Compass::North | Compass::East | Compass::South | Compass::West
        )
    }

    /// Unit step in grid space (col delta, row delta); north is -row.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Compass::North => (0, -1),
            Compass::NorthEast => (1, -1),
            Compass::East => (1, 0),
            Compass::SouthEast => (1, 1),
            Compass::South => (0, 1),
            Compass::SouthWest => (-1, 1),
            Compass::West => (-1, 0),
            Compass::NorthWest => (-1, -1),
        }
    }

    /// The bearing of a single Moore step, if the delta is a unit step.
    pub fn from_delta(dc: i32, dr: i32) -> Option<Compass> {
        Compass::ALL.into_iter().find(|d| d.delta() == (dc, dr))
    }

    pub fn label(self) -> &'static str {
        match self {
            Compass::North => "North",
            Compass::NorthEast => "Northeast",
            Compass::East => "East",
            Compass::SouthEast => "Southeast",
            Compass::South => "South",
            Compass::SouthWest => "Southwest",
            Compass::West => "West",
            Compass::NorthWest => "Northwest",
        }
    }

    /// Two-letter code used in compact serializations.
    pub fn code(self) -> &'static str {
        match self {
            Compass::North => "N",
            Compass::NorthEast => "NE",
            Compass::East => "E",
            Compass::SouthEast => "SE",
            Compass::South => "S",
            Compass::SouthWest => "SW",
            Compass::West => "W",
            Compass::NorthWest => "NW",
        }
    }

    pub fn from_code(code: &str) -> Option<Compass> {
        Compass::ALL.into_iter().find(|d| d.code() == code)
    }
}

impl fmt::Display for Compass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Categorical type of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Background,
    Road,
    Intersection,
    Poi,
}

impl CellKind {
    pub fn code(self) -> char {
        match self {
            CellKind::Background => '.',
            CellKind::Road => 'r',
            CellKind::Intersection => 'x',
            CellKind::Poi => 'p',
        }
    }

    pub fn from_code(c: char) -> Option<CellKind> {
        match c {
            '.' => Some(CellKind::Background),
            'r' => Some(CellKind::Road),
            'x' => Some(CellKind::Intersection),
            'p' => Some(CellKind::Poi),
            _ => None,
        }
    }

    /// Roads and intersections carry traffic; POI cells only as endpoints.
    pub fn is_navigable(self) -> bool {
        matches!(self, CellKind::Road | CellKind::Intersection)
    }
}

/// Named semantic location, linked to the road network via its nearest
/// road cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poi {
    pub id: u32,
    pub name: String,
    pub at: Coord,
    pub linked_road: Coord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: u32,
    pub at: Coord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Main,
    Auxiliary,
}

/// An ordered chain of Moore-adjacent road cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub class: RoadClass,
    pub cells: Vec<Coord>,
}

/// Identity of a salient node (POI or intersection). POI and intersection
/// ids live in separate spaces, so the kind is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Poi,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub kind: NodeKind,
    pub id: u32,
}

impl NodeKey {
    pub fn poi(id: u32) -> Self {
        NodeKey {
            kind: NodeKind::Poi,
            id,
        }
    }

    pub fn intersection(id: u32) -> Self {
        NodeKey {
            kind: NodeKind::Intersection,
            id,
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Poi => write!(f, "P{}", self.id),
            NodeKind::Intersection => write!(f, "I{}", self.id),
        }
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("coordinate {0} is out of bounds")]
    OutOfBounds(Coord),
    #[error("unknown poi id {0}")]
    UnknownPoi(u32),
    #[error("no navigable path from poi {from} to poi {to}")]
    Unreachable { from: u32, to: u32 },
    #[error("cell grid has {got} cells, expected {want}")]
    BadCellCount { got: usize, want: usize },
    #[error("invalid map dimensions {width}x{height}")]
    BadDimensions { width: i32, height: i32 },
}

/// The symbolic world. Immutable once built; all queries are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: i32,
    height: i32,
    cells: Vec<CellKind>,
    pois: Vec<Poi>,
    intersections: Vec<Intersection>,
    segments: Vec<RoadSegment>,
    city_name: String,
}

impl GridMap {
    /// Structural construction only: dimensions and coordinate bounds are
    /// enforced, semantic invariants are the business of [`validate_map`].
    pub fn from_parts(
        width: i32,
        height: i32,
        cells: Vec<CellKind>,
        pois: Vec<Poi>,
        intersections: Vec<Intersection>,
        segments: Vec<RoadSegment>,
        city_name: String,
    ) -> Result<GridMap, MapError> {
        if width < 1 || height < 1 {
            return Err(MapError::BadDimensions { width, height });
        }
        let want = (width as usize) * (height as usize);
        if cells.len() != want {
            return Err(MapError::BadCellCount {
                got: cells.len(),
                want,
            });
        }
        let map = GridMap {
            width,
            height,
            cells,
            pois,
            intersections,
            segments,
            city_name,
        };
        for p in &map.pois {
            if !map.in_bounds(p.at) {
                return Err(MapError::OutOfBounds(p.at));
            }
            if !map.in_bounds(p.linked_road) {
                return Err(MapError::OutOfBounds(p.linked_road));
            }
        }
        for i in &map.intersections {
            if !map.in_bounds(i.at) {
                return Err(MapError::OutOfBounds(i.at));
            }
        }
        for s in &map.segments {
            for &c in &s.cells {
                if !map.in_bounds(c) {
                    return Err(MapError::OutOfBounds(c));
                }
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn city_name(&self) -> &str {
        &self.city_name
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.col >= 0 && c.col < self.width && c.row >= 0 && c.row < self.height
    }

    pub fn kind(&self, c: Coord) -> CellKind {
        debug_assert!(self.in_bounds(c));
        self.cells[(c.row * self.width + c.col) as usize]
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn poi(&self, id: u32) -> Option<&Poi> {
        self.pois.iter().find(|p| p.id == id)
    }

    pub fn poi_at(&self, c: Coord) -> Option<&Poi> {
        self.pois.iter().find(|p| p.at == c)
    }

    pub fn intersection_at(&self, c: Coord) -> Option<&Intersection> {
        self.intersections.iter().find(|i| i.at == c)
    }

    /// The salient node occupying a cell, if any.
    pub fn node_at(&self, c: Coord) -> Option<NodeKey> {
        if let Some(p) = self.poi_at(c) {
            return Some(NodeKey::poi(p.id));
        }
        self.intersection_at(c).map(|i| NodeKey::intersection(i.id))
    }

    pub fn node_coord(&self, key: NodeKey) -> Option<Coord> {
        match key.kind {
            NodeKind::Poi => self.poi(key.id).map(|p| p.at),
            NodeKind::Intersection => self
                .intersections
                .iter()
                .find(|i| i.id == key.id)
                .map(|i| i.at),
        }
    }

    /// Row-major iterator over all cell coordinates.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        let w = self.width;
        (0..self.height).flat_map(move |row| (0..w).map(move |col| Coord::new(col, row)))
    }

    /// Nearest road or intersection cell to `from` by Euclidean distance,
    /// ties broken row-major. `None` when the map has no road cells.
    pub fn nearest_road_cell(&self, from: Coord) -> Option<Coord> {
        self.coords()
            .filter(|&c| self.kind(c).is_navigable())
            .min_by(|&a, &b| {
                euclidean_distance(from, a)
                    .partial_cmp(&euclidean_distance(from, b))
                    .unwrap()
                    .then(a.cmp(&b))
            })
    }

    pub(crate) fn set_kind(&mut self, c: Coord, kind: CellKind) {
        debug_assert!(self.in_bounds(c));
        self.cells[(c.row * self.width + c.col) as usize] = kind;
    }

    pub(crate) fn pois_mut(&mut self) -> &mut Vec<Poi> {
        &mut self.pois
    }

    pub(crate) fn segments_mut(&mut self) -> &mut Vec<RoadSegment> {
        &mut self.segments
    }
}

/// One observed cell, relative to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEntry {
    /// (col delta, row delta) from the agent's cell.
    pub offset: (i32, i32),
    pub kind: CellKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// The agent's clipped local view: every non-background cell within
/// Chebyshev distance `radius`, in row-major order. The agent also knows
/// its own absolute coordinate (perfect odometry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_at: Coord,
    pub radius: i32,
    pub entries: Vec<ObservationEntry>,
}

impl Observation {
    /// POI ids visible in this window.
    pub fn visible_pois(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .filter(|e| e.kind == CellKind::Poi)
            .filter_map(|e| e.id)
    }

    pub fn entry_at(&self, offset: (i32, i32)) -> Option<&ObservationEntry> {
        self.entries.iter().find(|e| e.offset == offset)
    }
}

/// Local view around `at`. Entries cover exactly the in-bounds,
/// non-background cells of the (2r+1)² window.
pub fn observe(map: &GridMap, at: Coord, radius: i32) -> Result<Observation, MapError> {
    if !map.in_bounds(at) {
        return Err(MapError::OutOfBounds(at));
    }
    let radius = radius.max(1);
    let mut entries = Vec::new();
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let c = Coord::new(at.col + dc, at.row + dr);
            if !map.in_bounds(c) {
                continue;
            }
            let kind = map.kind(c);
            if kind == CellKind::Background {
                continue;
            }
            let (id, name) = match kind {
                CellKind::Poi => {
                    let p = map.poi_at(c);
                    (p.map(|p| p.id), p.map(|p| p.name.clone()))
                }
                CellKind::Intersection => (map.intersection_at(c).map(|i| i.id), None),
                _ => (None, None),
            };
            entries.push(ObservationEntry {
                offset: (dc, dr),
                kind,
                id,
                name,
            });
        }
    }
    Ok(Observation {
        agent_at: at,
        radius,
        entries,
    })
}

/// A concrete path over the road network between two POIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub cells: Vec<Coord>,
    pub via_intersections: Vec<u32>,
}

impl Route {
    /// Number of moves, i.e. cells minus one.
    pub fn length(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn start(&self) -> Coord {
        self.cells[0]
    }

    pub fn end(&self) -> Coord {
        *self.cells.last().unwrap()
    }
}

/// An undirected banned cell edge, stored with row-major-smaller cell first.
pub(crate) fn edge_key(a: Coord, b: Coord) -> (Coord, Coord) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// BFS distances to `goal` over navigable cells, with optional banned edges.
fn distances_to(
    map: &GridMap,
    goal: Coord,
    banned: &[(Coord, Coord)],
) -> Vec<Option<u32>> {
    let mut dist: Vec<Option<u32>> = vec![None; (map.width * map.height) as usize];
    let idx = |c: Coord| (c.row * map.width + c.col) as usize;
    if !map.kind(goal).is_navigable() {
        return dist;
    }
    dist[idx(goal)] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(cur) = queue.pop_front() {
        let d = dist[idx(cur)].unwrap();
        for n in cur.neighbors8() {
            if !map.in_bounds(n) || !map.kind(n).is_navigable() {
                continue;
            }
            if !banned.is_empty() && banned.contains(&edge_key(cur, n)) {
                continue;
            }
            if dist[idx(n)].is_none() {
                dist[idx(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Lexicographically smallest (row-major) shortest cell path between two
/// navigable cells, or `None` when disconnected.
fn lex_shortest_path(
    map: &GridMap,
    src: Coord,
    dst: Coord,
    banned: &[(Coord, Coord)],
) -> Option<Vec<Coord>> {
    let idx = |c: Coord| (c.row * map.width + c.col) as usize;
    if src == dst {
        return Some(vec![src]);
    }
    let dist = distances_to(map, dst, banned);
    dist[idx(src)]?;
    let mut cells = vec![src];
    let mut cur = src;
    while cur != dst {
        let d = dist[idx(cur)].unwrap();
        let next = cur
            .neighbors8()
            .filter(|&n| map.in_bounds(n) && map.kind(n).is_navigable())
            .filter(|&n| !banned.contains(&edge_key(cur, n)))
            .filter(|&n| dist[idx(n)] == Some(d - 1))
            .min()?;
        cells.push(next);
        cur = next;
    }
    Some(cells)
}

fn collect_intersections(map: &GridMap, cells: &[Coord]) -> Vec<u32> {
    cells
        .iter()
        .filter_map(|&c| map.intersection_at(c))
        .map(|i| i.id)
        .collect()
}

/// Minimum-move route between two POIs over the road network:
/// POI cell, its linked road, the network, the destination's linked road,
/// the destination POI cell.
///
/// Routing is canonical on the unordered POI pair: the path is computed from
/// the lower poi id to the higher and reversed when asked the other way
/// round, so route(a,b) is always the cell-reverse of route(b,a).
pub fn shortest_route(map: &GridMap, from_poi: u32, to_poi: u32) -> Result<Route, MapError> {
    shortest_route_avoiding(map, from_poi, to_poi, &[])
}

/// Same as [`shortest_route`] but refusing to cross the given undirected
/// cell edges. Used to synthesize strictly longer alternative routes.
pub fn shortest_route_avoiding(
    map: &GridMap,
    from_poi: u32,
    to_poi: u32,
    banned: &[(Coord, Coord)],
) -> Result<Route, MapError> {
    let from = map.poi(from_poi).ok_or(MapError::UnknownPoi(from_poi))?;
    let to = map.poi(to_poi).ok_or(MapError::UnknownPoi(to_poi))?;
    if from.id == to.id {
        return Ok(Route {
            cells: vec![from.at],
            via_intersections: collect_intersections(map, &[from.at]),
        });
    }
    let (lo, hi) = if from.id < to.id { (from, to) } else { (to, from) };
    let spine = lex_shortest_path(map, lo.linked_road, hi.linked_road, banned).ok_or(
        MapError::Unreachable {
            from: from_poi,
            to: to_poi,
        },
    )?;
    let mut cells = Vec::with_capacity(spine.len() + 2);
    cells.push(lo.at);
    cells.extend(spine);
    cells.push(hi.at);
    if from.id > to.id {
        cells.reverse();
    }
    let via = collect_intersections(map, &cells);
    Ok(Route {
        cells,
        via_intersections: via,
    })
}

/// One broken rule found by [`validate_map`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

impl Violation {
    fn new(rule: &str, detail: String) -> Self {
        Violation {
            rule: rule.to_string(),
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{}: {}", v.rule, v.detail)?;
        }
        Ok(())
    }
}

/// Checks every GridMap invariant; violations are data, not failures.
pub fn validate_map(map: &GridMap) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |rule: &str, detail: String| {
        report.violations.push(Violation::new(rule, detail));
    };

    // POI cell kinds and links.
    for p in &map.pois {
        if map.kind(p.at) != CellKind::Poi {
            push(
                "poi-cell-kind",
                format!("poi {} cell {} is {:?}", p.id, p.at, map.kind(p.at)),
            );
        }
        if !map.kind(p.linked_road).is_navigable() {
            push(
                "poi-link-not-road",
                format!("poi {} linked_road {} is {:?}", p.id, p.linked_road, map.kind(p.linked_road)),
            );
        } else if let Some(nearest) = map.nearest_road_cell(p.at) {
            if nearest != p.linked_road {
                push(
                    "poi-link-not-nearest",
                    format!(
                        "poi {} linked_road {} but nearest road cell is {}",
                        p.id, p.linked_road, nearest
                    ),
                );
            }
        }
    }

    // Intersection cell kinds.
    for i in &map.intersections {
        if map.kind(i.at) != CellKind::Intersection {
            push(
                "intersection-cell-kind",
                format!("intersection {} cell {} is {:?}", i.id, i.at, map.kind(i.at)),
            );
        }
    }

    // Exactly one record per marked cell.
    for c in map.coords() {
        match map.kind(c) {
            CellKind::Poi => {
                let n = map.pois.iter().filter(|p| p.at == c).count();
                if n != 1 {
                    push("poi-cell-records", format!("cell {} has {} poi records", c, n));
                }
            }
            CellKind::Intersection => {
                let n = map.intersections.iter().filter(|i| i.at == c).count();
                if n != 1 {
                    push(
                        "intersection-cell-records",
                        format!("cell {} has {} intersection records", c, n),
                    );
                }
            }
            _ => {}
        }
    }

    // Duplicate-free id sets.
    let mut poi_ids: Vec<u32> = map.pois.iter().map(|p| p.id).collect();
    poi_ids.sort_unstable();
    poi_ids.dedup();
    if poi_ids.len() != map.pois.len() {
        push("duplicate-poi-id", "poi ids are not unique".to_string());
    }
    let mut x_ids: Vec<u32> = map.intersections.iter().map(|i| i.id).collect();
    x_ids.sort_unstable();
    x_ids.dedup();
    if x_ids.len() != map.intersections.len() {
        push(
            "duplicate-intersection-id",
            "intersection ids are not unique".to_string(),
        );
    }

    // Road segments: Moore chains of navigable cells; auxiliary segments
    // must end at some POI's linked road.
    for (si, s) in map.segments.iter().enumerate() {
        if s.cells.is_empty() {
            push("segment-empty", format!("segment {} has no cells", si));
            continue;
        }
        for w in s.cells.windows(2) {
            if !w[0].is_moore_adjacent(w[1]) {
                push(
                    "segment-disconnected",
                    format!("segment {} jumps {} -> {}", si, w[0], w[1]),
                );
            }
        }
        for &c in &s.cells {
            if !map.kind(c).is_navigable() {
                push(
                    "segment-off-road",
                    format!("segment {} cell {} is {:?}", si, c, map.kind(c)),
                );
            }
        }
        if s.class == RoadClass::Auxiliary {
            let first = s.cells[0];
            let last = *s.cells.last().unwrap();
            let anchored = map
                .pois
                .iter()
                .any(|p| p.linked_road == first || p.linked_road == last);
            if !anchored {
                push(
                    "aux-not-at-linked-road",
                    format!("auxiliary segment {} ends at no poi's linked road", si),
                );
            }
        }
    }

    // Mutual reachability of POIs through the road network.
    if map.pois.len() > 1 {
        let start = map.pois[0].linked_road;
        if map.kind(start).is_navigable() {
            let dist = distances_to(map, start, &[]);
            let idx = |c: Coord| (c.row * map.width + c.col) as usize;
            for p in &map.pois[1..] {
                if !map.kind(p.linked_road).is_navigable() || dist[idx(p.linked_road)].is_none() {
                    push(
                        "pois-not-mutually-reachable",
                        format!("poi {} is cut off from poi {}", p.id, map.pois[0].id),
                    );
                }
            }
        }
    }

    report
}
