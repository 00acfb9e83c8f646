//! Building valid grid maps: vector-source rasterization, POI linking,
//! map-file round-tripping, and the 15-city catalog check.

use crate::mapenv::{
    CellKind, Coord, GridMap, Intersection, Poi, RoadClass, RoadSegment,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("vector source invalid: {0}")]
    BadVector(String),
    #[error("poi '{0}' collides with no free cell to displace to")]
    PoiCollision(String),
    #[error("poi {0} cannot be linked to any road cell")]
    UnlinkablePoi(u32),
    #[error("map structure: {0}")]
    Map(#[from] crate::mapenv::MapError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("map file field: {0}")]
    BadMapFile(String),
}

// ---------------------------------------------------------------------------
// Map file format (JSON, byte-exact round trip)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct MapFilePoi {
    id: u32,
    name: String,
    col: i32,
    row: i32,
    link_col: i32,
    link_row: i32,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFileIntersection {
    id: u32,
    col: i32,
    row: i32,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFileSegment {
    class: RoadClass,
    cells: Vec<(i32, i32)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    city: String,
    width: i32,
    height: i32,
    cells: Vec<String>,
    pois: Vec<MapFilePoi>,
    intersections: Vec<MapFileIntersection>,
    segments: Vec<MapFileSegment>,
}

/// Canonical JSON rendering of a map. `parse_map(render_map(m))` is identity
/// and re-rendering parsed bytes reproduces them exactly.
pub fn render_map(map: &GridMap) -> String {
    let file = MapFile {
        city: map.city_name().to_string(),
        width: map.width(),
        height: map.height(),
        cells: (0..map.height())
            .map(|row| {
                (0..map.width())
                    .map(|col| map.kind(Coord::new(col, row)).code())
                    .collect()
            })
            .collect(),
        pois: map
            .pois()
            .iter()
            .map(|p| MapFilePoi {
                id: p.id,
                name: p.name.clone(),
                col: p.at.col,
                row: p.at.row,
                link_col: p.linked_road.col,
                link_row: p.linked_road.row,
            })
            .collect(),
        intersections: map
            .intersections()
            .iter()
            .map(|i| MapFileIntersection {
                id: i.id,
                col: i.at.col,
                row: i.at.row,
            })
            .collect(),
        segments: map
            .segments()
            .iter()
            .map(|s| MapFileSegment {
                class: s.class,
                cells: s.cells.iter().map(|&c| (c.col, c.row)).collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("map serializes");
    out.push('\n');
    out
}

pub fn parse_map(text: &str) -> Result<GridMap, IngestError> {
    let file: MapFile = serde_json::from_str(text)?;
    if file.cells.len() != file.height as usize {
        return Err(IngestError::BadMapFile(format!(
            "{} cell rows for height {}",
            file.cells.len(),
            file.height
        )));
    }
    let mut cells = Vec::with_capacity((file.width * file.height) as usize);
    for (r, rowtext) in file.cells.iter().enumerate() {
        if rowtext.chars().count() != file.width as usize {
            return Err(IngestError::BadMapFile(format!(
                "row {} has {} codes for width {}",
                r,
                rowtext.chars().count(),
                file.width
            )));
        }
        for ch in rowtext.chars() {
            cells.push(CellKind::from_code(ch).ok_or_else(|| {
                IngestError::BadMapFile(format!("unknown cell code '{}'", ch))
            })?);
        }
    }
    let pois = file
        .pois
        .into_iter()
        .map(|p| Poi {
            id: p.id,
            name: p.name,
            at: Coord::new(p.col, p.row),
            linked_road: Coord::new(p.link_col, p.link_row),
        })
        .collect();
    let intersections = file
        .intersections
        .into_iter()
        .map(|i| Intersection {
            id: i.id,
            at: Coord::new(i.col, i.row),
        })
        .collect();
    let segments = file
        .segments
        .into_iter()
        .map(|s| RoadSegment {
            class: s.class,
            cells: s.cells.into_iter().map(|(c, r)| Coord::new(c, r)).collect(),
        })
        .collect();
    Ok(GridMap::from_parts(
        file.width,
        file.height,
        cells,
        pois,
        intersections,
        segments,
        file.city,
    )?)
}

pub fn load_map(path: &Path) -> Result<GridMap, IngestError> {
    parse_map(&std::fs::read_to_string(path)?)
}

pub fn save_map(map: &GridMap, path: &Path) -> Result<(), IngestError> {
    std::fs::write(path, render_map(map))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Vector sources and rasterization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorRoad {
    pub class: RoadClass,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorPoi {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// Neutral vector input: road polylines and POI points inside a bounding
/// rectangle `[minx, miny, maxx, maxy]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorMapSource {
    pub bounds: (f64, f64, f64, f64),
    pub roads: Vec<VectorRoad>,
    pub pois: Vec<VectorPoi>,
}

impl VectorMapSource {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn check(&self) -> Result<(), IngestError> {
        let (minx, miny, maxx, maxy) = self.bounds;
        if !(maxx > minx && maxy > miny) {
            return Err(IngestError::BadVector("degenerate bounds".into()));
        }
        if self.roads.is_empty() {
            return Err(IngestError::BadVector("no road polylines".into()));
        }
        if self.pois.is_empty() {
            return Err(IngestError::BadVector("no pois".into()));
        }
        let inside = |x: f64, y: f64| x >= minx && x <= maxx && y >= miny && y <= maxy;
        for r in &self.roads {
            if r.points.len() < 2 {
                return Err(IngestError::BadVector("polyline with < 2 points".into()));
            }
            if r.points.iter().any(|&(x, y)| !inside(x, y)) {
                return Err(IngestError::BadVector("road point outside bounds".into()));
            }
        }
        if self.pois.iter().any(|p| !inside(p.x, p.y)) {
            return Err(IngestError::BadVector("poi outside bounds".into()));
        }
        Ok(())
    }
}

/// All cells a straight segment between two cell centers passes through
/// (supercover), in traversal order. Exact corner crossings emit both side
/// cells, row-major first, so the chain stays Moore-connected.
pub(crate) fn supercover_cells(a: Coord, b: Coord) -> Vec<Coord> {
    let dx = b.col - a.col;
    let dy = b.row - a.row;
    let (sx, sy) = (dx.signum(), dy.signum());
    let (adx, ady) = (dx.abs(), dy.abs());
    let (mut x, mut y) = (a.col, a.row);
    let (mut ix, mut iy) = (0i32, 0i32);
    let mut out = vec![a];
    while ix < adx || iy < ady {
        if ady == 0 || (ix < adx && (2 * ix + 1) * ady < (2 * iy + 1) * adx) {
            x += sx;
            ix += 1;
            out.push(Coord::new(x, y));
        } else if adx == 0 || (2 * ix + 1) * ady > (2 * iy + 1) * adx {
            y += sy;
            iy += 1;
            out.push(Coord::new(x, y));
        } else {
            // exact corner: both side cells, then the diagonal cell
            let c1 = Coord::new(x + sx, y);
            let c2 = Coord::new(x, y + sy);
            let (first, second) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            out.push(first);
            out.push(second);
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
            out.push(Coord::new(x, y));
        }
    }
    out
}

/// Grid traversal of a float segment in grid space, where cell (c,r) spans
/// [c,c+1) x [r,r+1). Appends visited cells (deduplicated against the tail).
fn traverse_segment(
    (x0, y0): (f64, f64),
    (x1, y1): (f64, f64),
    width: i32,
    height: i32,
    out: &mut Vec<Coord>,
) {
    let clamp_cell = |v: f64, hi: i32| (v.floor() as i32).clamp(0, hi - 1);
    let mut cx = clamp_cell(x0, width);
    let mut cy = clamp_cell(y0, height);
    let ex = clamp_cell(x1, width);
    let ey = clamp_cell(y1, height);
    let push = |out: &mut Vec<Coord>, c: Coord| {
        if out.last() != Some(&c) {
            out.push(c);
        }
    };
    push(out, Coord::new(cx, cy));
    let dx = x1 - x0;
    let dy = y1 - y0;
    let step_x: i32 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i32 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let frac_x = if dx > 0.0 {
        (cx as f64 + 1.0) - x0
    } else {
        x0 - cx as f64
    };
    let frac_y = if dy > 0.0 {
        (cy as f64 + 1.0) - y0
    } else {
        y0 - cy as f64
    };
    let mut t_max_x = if dx != 0.0 { t_delta_x * frac_x } else { f64::INFINITY };
    let mut t_max_y = if dy != 0.0 { t_delta_y * frac_y } else { f64::INFINITY };
    let mut guard = 4 * (width + height);
    while (cx, cy) != (ex, ey) && guard > 0 {
        guard -= 1;
        if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            cy += step_y;
            t_max_y += t_delta_y;
        } else {
            // exact corner: cover both side cells before the diagonal
            let c1 = Coord::new(cx + step_x, cy);
            let c2 = Coord::new(cx, cy + step_y);
            let (first, second) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            if first.col >= 0 && first.col < width && first.row >= 0 && first.row < height {
                push(out, first);
            }
            if second.col >= 0 && second.col < width && second.row >= 0 && second.row < height {
                push(out, second);
            }
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
        if cx < 0 || cx >= width || cy < 0 || cy >= height {
            break;
        }
        push(out, Coord::new(cx, cy));
    }
}

/// Connected components among the road neighbors of a cell; three or more
/// means roads branch here.
fn branch_degree(road: &[bool], width: i32, height: i32, c: Coord) -> usize {
    let is_road = |c: Coord| {
        c.col >= 0
            && c.col < width
            && c.row >= 0
            && c.row < height
            && road[(c.row * width + c.col) as usize]
    };
    let neighbors: Vec<Coord> = c.neighbors8().filter(|&n| is_road(n)).collect();
    let mut component: Vec<usize> = (0..neighbors.len()).collect();
    fn find(component: &mut Vec<usize>, i: usize) -> usize {
        if component[i] != i {
            let root = find(component, component[i]);
            component[i] = root;
        }
        component[i]
    }
    for i in 0..neighbors.len() {
        for j in (i + 1)..neighbors.len() {
            if neighbors[i].is_moore_adjacent(neighbors[j]) {
                let (a, b) = (find(&mut component, i), find(&mut component, j));
                if a != b {
                    component[a] = b;
                }
            }
        }
    }
    (0..neighbors.len())
        .map(|i| find(&mut component, i))
        .collect::<std::collections::HashSet<_>>()
        .len()
}

/// Rasterizes a vector source onto a `width` x `height` grid: supercover
/// road marking, intersection derivation (branching roads or crossing main
/// polylines), POI placement with displacement off occupied cells. POI links
/// are placeholders until [`normalize_and_link`].
pub fn rasterize(
    source: &VectorMapSource,
    width: i32,
    height: i32,
    city: &str,
) -> Result<GridMap, IngestError> {
    if width < 5 || height < 5 {
        return Err(IngestError::BadVector(format!(
            "grid {}x{} too small",
            width, height
        )));
    }
    source.check()?;
    let (minx, miny, maxx, maxy) = source.bounds;
    let to_grid = |x: f64, y: f64| {
        (
            (x - minx) / (maxx - minx) * width as f64,
            (y - miny) / (maxy - miny) * height as f64,
        )
    };

    let ncells = (width * height) as usize;
    let mut road = vec![false; ncells];
    let idx = |c: Coord| (c.row * width + c.col) as usize;
    let mut polyline_cells: Vec<Vec<Coord>> = Vec::new();
    for r in &source.roads {
        let mut cells: Vec<Coord> = Vec::new();
        for pair in r.points.windows(2) {
            let a = to_grid(pair[0].0, pair[0].1);
            let b = to_grid(pair[1].0, pair[1].1);
            traverse_segment(a, b, width, height, &mut cells);
        }
        for &c in &cells {
            road[idx(c)] = true;
        }
        polyline_cells.push(cells);
    }

    // Which main polylines touch each cell.
    let mut mains_per_cell: Vec<Vec<usize>> = vec![Vec::new(); ncells];
    for (pi, r) in source.roads.iter().enumerate() {
        if r.class != RoadClass::Main {
            continue;
        }
        for &c in &polyline_cells[pi] {
            if !mains_per_cell[idx(c)].contains(&pi) {
                mains_per_cell[idx(c)].push(pi);
            }
        }
    }

    let mut cells = vec![CellKind::Background; ncells];
    for (i, &r) in road.iter().enumerate() {
        if r {
            cells[i] = CellKind::Road;
        }
    }

    let mut intersections = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let c = Coord::new(col, row);
            if !road[idx(c)] {
                continue;
            }
            let crossing = mains_per_cell[idx(c)].len() >= 2;
            if crossing || branch_degree(&road, width, height, c) >= 3 {
                cells[idx(c)] = CellKind::Intersection;
                intersections.push(Intersection {
                    id: intersections.len() as u32 + 1,
                    at: c,
                });
            }
        }
    }

    // POIs: land on the scaled cell, displace off occupied cells to the
    // nearest background cell (ties row-major).
    let mut pois: Vec<Poi> = Vec::new();
    for (pi, vp) in source.pois.iter().enumerate() {
        let (gx, gy) = to_grid(vp.x, vp.y);
        let target = Coord::new(
            (gx.floor() as i32).clamp(0, width - 1),
            (gy.floor() as i32).clamp(0, height - 1),
        );
        let cell = if cells[idx(target)] == CellKind::Background {
            target
        } else {
            let mut best: Option<Coord> = None;
            for row in 0..height {
                for col in 0..width {
                    let c = Coord::new(col, row);
                    if cells[idx(c)] != CellKind::Background {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some(b) => {
                            let (dc, db) = (
                                crate::mapenv::euclidean_distance(target, c),
                                crate::mapenv::euclidean_distance(target, b),
                            );
                            dc < db || (dc == db && c < b)
                        }
                    };
                    if better {
                        best = Some(c);
                    }
                }
            }
            best.ok_or_else(|| IngestError::PoiCollision(vp.name.clone()))?
        };
        cells[idx(cell)] = CellKind::Poi;
        pois.push(Poi {
            id: pi as u32 + 1,
            name: vp.name.clone(),
            at: cell,
            linked_road: cell, // placeholder until linking
        });
    }

    let segments = source
        .roads
        .iter()
        .zip(&polyline_cells)
        .map(|(r, cells)| RoadSegment {
            class: r.class,
            cells: cells.clone(),
        })
        .collect();

    Ok(GridMap::from_parts(
        width,
        height,
        cells,
        pois,
        intersections,
        segments,
        city.to_string(),
    )?)
}

/// Shortest background-only chain from a POI cell to the road network, for
/// carving auxiliary connector roads. Returns the full path including the
/// POI cell and the reached road cell.
fn carve_path(map: &GridMap, from: Coord) -> Option<Vec<Coord>> {
    let idx = |c: Coord| (c.row * map.width() + c.col) as usize;
    let mut dist: Vec<Option<u32>> = vec![None; (map.width() * map.height()) as usize];
    dist[idx(from)] = Some(0);
    let mut queue = VecDeque::from([from]);
    let mut targets: Vec<(u32, Coord)> = Vec::new();
    while let Some(cur) = queue.pop_front() {
        let d = dist[idx(cur)].unwrap();
        if let Some(&(best, _)) = targets.first() {
            if d >= best {
                break;
            }
        }
        for n in cur.neighbors8() {
            if !map.in_bounds(n) || dist[idx(n)].is_some() {
                continue;
            }
            let kind = map.kind(n);
            dist[idx(n)] = Some(d + 1);
            if kind.is_navigable() {
                targets.push((d + 1, n));
            } else if kind == CellKind::Background {
                queue.push_back(n);
            }
        }
    }
    let (_, road) = targets
        .into_iter()
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))?;
    // Walk back to the POI, preferring row-major-smaller predecessors.
    let mut path = vec![road];
    let mut cur = road;
    while cur != from {
        let d = dist[idx(cur)].unwrap();
        let prev = cur
            .neighbors8()
            .filter(|&n| map.in_bounds(n))
            .filter(|&n| n == from || map.kind(n) == CellKind::Background)
            .filter(|&n| dist[idx(n)] == Some(d - 1))
            .min()?;
        path.push(prev);
        cur = prev;
    }
    path.reverse();
    Some(path)
}

/// Links every POI to its nearest road cell (Euclidean, ties row-major),
/// carving auxiliary road segments where a POI is not yet adjacent to the
/// network. Idempotent: a linked map passes through unchanged.
pub fn normalize_and_link(mut map: GridMap) -> Result<GridMap, IngestError> {
    let poi_ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
    let mut carved: BTreeMap<u32, Vec<Coord>> = BTreeMap::new();
    loop {
        let mut changed = false;
        for &pid in &poi_ids {
            let at = map.poi(pid).unwrap().at;
            let adjacent = at
                .neighbors8()
                .any(|n| map.in_bounds(n) && map.kind(n).is_navigable());
            if adjacent {
                continue;
            }
            let path = carve_path(&map, at).ok_or(IngestError::UnlinkablePoi(pid))?;
            for &c in &path[1..path.len() - 1] {
                map.set_kind(c, CellKind::Road);
            }
            carved.insert(pid, path[1..].to_vec());
            changed = true;
        }
        if !changed {
            break;
        }
    }

    for &pid in &poi_ids {
        let at = map.poi(pid).unwrap().at;
        let nearest = map
            .nearest_road_cell(at)
            .ok_or(IngestError::UnlinkablePoi(pid))?;
        map.pois_mut()
            .iter_mut()
            .find(|p| p.id == pid)
            .unwrap()
            .linked_road = nearest;
    }

    for (pid, cells) in carved {
        let lr = map.poi(pid).unwrap().linked_road;
        if let Some(pos) = cells.iter().position(|&c| c == lr) {
            let seg: Vec<Coord> = cells[pos..].to_vec();
            if seg.len() >= 2 {
                map.segments_mut().push(RoadSegment {
                    class: RoadClass::Auxiliary,
                    cells: seg,
                });
            }
        }
        // If another POI's carve ended up closer, the carved cells stay as
        // plain roads without a segment record.
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// Expected per-city counts; auxiliary connector roads are excluded from the
/// main-road count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub city: String,
    pub poi_count: u32,
    pub intersection_count: u32,
    pub main_road_count: u32,
}

/// The built-in 15-city catalog.
pub fn builtin_catalog() -> Vec<CatalogEntry> {
    let rows: [(&str, u32, u32, u32); 15] = [
        ("Beijing", 21, 22, 4),
        ("Shanghai", 9, 10, 4),
        ("Guangzhou", 17, 13, 9),
        ("Changsha", 12, 19, 4),
        ("Wuhan", 20, 23, 10),
        ("New York", 15, 26, 7),
        ("Los Angeles", 15, 17, 6),
        ("San Francisco", 15, 30, 12),
        ("Chicago", 15, 26, 6),
        ("Toronto", 15, 23, 6),
        ("London", 15, 25, 8),
        ("Paris", 15, 17, 9),
        ("Rome", 15, 16, 6),
        ("Berlin", 15, 23, 9),
        ("Vienna", 15, 24, 15),
    ];
    rows.iter()
        .map(|&(city, poi_count, intersection_count, main_road_count)| CatalogEntry {
            city: city.to_string(),
            poi_count,
            intersection_count,
            main_road_count,
        })
        .collect()
}

/// Filesystem-friendly city name ("New York" -> "new-york").
pub fn city_slug(city: &str) -> String {
    city.to_lowercase().replace(' ', "-")
}

pub fn load_catalog(path: &Path) -> Result<Vec<CatalogEntry>, IngestError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        out.push(record?);
    }
    Ok(out)
}

pub fn save_catalog(entries: &[CatalogEntry], path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    for e in entries {
        writer.serialize(e)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogReport {
    pub city: String,
    pub expected: (u32, u32, u32),
    pub actual: (u32, u32, u32),
}

impl CatalogReport {
    pub fn matches(&self) -> bool {
        self.expected == self.actual
    }

    pub fn mismatches(&self) -> Vec<String> {
        let labels = ["poi_count", "intersection_count", "main_road_count"];
        let exp = [self.expected.0, self.expected.1, self.expected.2];
        let act = [self.actual.0, self.actual.1, self.actual.2];
        labels
            .iter()
            .zip(exp.iter().zip(act.iter()))
            .filter(|(_, (e, a))| e != a)
            .map(|(l, (e, a))| format!("{}: expected {}, got {}", l, e, a))
            .collect()
    }
}

/// Compares POI / intersection / main-road counts against a catalog entry.
pub fn check_catalog(map: &GridMap, entry: &CatalogEntry) -> CatalogReport {
    let mains = map
        .segments()
        .iter()
        .filter(|s| s.class == RoadClass::Main)
        .count() as u32;
    CatalogReport {
        city: entry.city.clone(),
        expected: (
            entry.poi_count,
            entry.intersection_count,
            entry.main_road_count,
        ),
        actual: (
            map.pois().len() as u32,
            map.intersections().len() as u32,
            mains,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapenv::{validate_map, CellKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn horizontal_source() -> VectorMapSource {
        VectorMapSource {
            bounds: (0.0, 0.0, 10.0, 10.0),
            roads: vec![VectorRoad {
                class: RoadClass::Main,
                points: vec![(0.0, 5.0), (10.0, 5.0)],
            }],
            pois: vec![VectorPoi {
                name: "Depot".into(),
                x: 2.0,
                y: 2.0,
            }],
        }
    }

    #[test]
    fn horizontal_polyline_fills_one_row() {
        let map = rasterize(&horizontal_source(), 10, 10, "t").unwrap();
        let row: Vec<CellKind> = (0..10)
            .map(|col| map.kind(Coord::new(col, 5)))
            .collect();
        assert!(row.iter().all(|k| k.is_navigable()));
        assert!(map.intersections().is_empty());
        let road_cells = map
            .coords()
            .filter(|&c| map.kind(c).is_navigable())
            .count();
        assert_eq!(road_cells, 10);
    }

    #[test]
    fn crossing_polylines_make_one_intersection() {
        let source = VectorMapSource {
            bounds: (0.0, 0.0, 10.0, 10.0),
            roads: vec![
                VectorRoad {
                    class: RoadClass::Main,
                    points: vec![(0.0, 5.3), (10.0, 5.3)],
                },
                VectorRoad {
                    class: RoadClass::Main,
                    points: vec![(4.6, 0.0), (4.6, 10.0)],
                },
            ],
            pois: vec![VectorPoi {
                name: "Depot".into(),
                x: 1.0,
                y: 1.0,
            }],
        };
        let map = rasterize(&source, 10, 10, "t").unwrap();
        assert_eq!(map.intersections().len(), 1);
        assert_eq!(map.intersections()[0].at, Coord::new(4, 5));
    }

    #[test]
    fn rasterized_polylines_stay_moore_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let points: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(0.2..9.8), rng.gen_range(0.2..9.8)))
                .collect();
            let source = VectorMapSource {
                bounds: (0.0, 0.0, 10.0, 10.0),
                roads: vec![VectorRoad {
                    class: RoadClass::Main,
                    points,
                }],
                pois: vec![VectorPoi {
                    name: "P".into(),
                    x: 5.0,
                    y: 5.0,
                }],
            };
            let map = rasterize(&source, 10, 10, "t").unwrap();
            for segment in map.segments() {
                for w in segment.cells.windows(2) {
                    assert!(
                        w[0].is_moore_adjacent(w[1]) || w[0] == w[1],
                        "chain break {} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }

    #[test]
    fn rasterized_cells_match_geometric_oracle() {
        // A cell must be road iff some polyline segment passes through its
        // unit square (checked by segment/box intersection, independent of
        // the traversal walk).
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let mut roads = Vec::new();
            for _ in 0..3 {
                let points: Vec<(f64, f64)> = (0..3)
                    .map(|_| (rng.gen_range(0.2..9.8), rng.gen_range(0.2..9.8)))
                    .collect();
                roads.push(VectorRoad {
                    class: RoadClass::Main,
                    points,
                });
            }
            let source = VectorMapSource {
                bounds: (0.0, 0.0, 10.0, 10.0),
                roads,
                pois: vec![VectorPoi {
                    name: "P".into(),
                    x: 5.0,
                    y: 5.0,
                }],
            };
            let map = rasterize(&source, 10, 10, "t").unwrap();
            for c in map.coords() {
                let expect = source.roads.iter().any(|r| {
                    r.points.windows(2).any(|w| {
                        segment_hits_cell(w[0], w[1], c)
                    })
                });
                let got = map.kind(c).is_navigable() || map.poi_at(c).is_some() && false;
                // POI cells never overlap roads by construction.
                if map.kind(c) == CellKind::Poi {
                    continue;
                }
                assert_eq!(got, expect, "cell {}", c);
            }
        }
    }

    /// Liang-Barsky style segment / unit-cell overlap test in grid space.
    fn segment_hits_cell((x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Coord) -> bool {
        let (minx, miny) = (c.col as f64, c.row as f64);
        let (maxx, maxy) = (minx + 1.0, miny + 1.0);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-dx, x0 - minx),
            (dx, maxx - x0),
            (-dy, y0 - miny),
            (dy, maxy - y0),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        t0 <= t1
    }

    #[test]
    fn pois_on_roads_are_displaced_to_background() {
        // Both POIs sit exactly on the road line; the second also collides
        // with the first's displaced target area.
        let source = VectorMapSource {
            bounds: (0.0, 0.0, 10.0, 10.0),
            roads: vec![VectorRoad {
                class: RoadClass::Main,
                points: vec![(0.0, 5.5), (10.0, 5.5)],
            }],
            pois: vec![
                VectorPoi {
                    name: "On the road".into(),
                    x: 3.5,
                    y: 5.5,
                },
                VectorPoi {
                    name: "Also there".into(),
                    x: 3.5,
                    y: 5.5,
                },
            ],
        };
        let map = rasterize(&source, 10, 10, "t").unwrap();
        assert_eq!(map.pois().len(), 2);
        let mut cells: Vec<Coord> = map.pois().iter().map(|p| p.at).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 2, "displacement must separate the POIs");
        for p in map.pois() {
            assert_eq!(map.kind(p.at), CellKind::Poi);
        }
    }

    #[test]
    fn roadless_maps_cannot_link_pois() {
        let map = crate::synth::map_from_rows(&["p....", ".....", "....p"], "t");
        assert!(matches!(
            normalize_and_link(map),
            Err(IngestError::UnlinkablePoi(_))
        ));
    }

    #[test]
    fn supercover_diagonal_includes_corner_pairs() {
        let cells = supercover_cells(Coord::new(0, 0), Coord::new(2, 2));
        assert!(cells.contains(&Coord::new(1, 0)));
        assert!(cells.contains(&Coord::new(0, 1)));
        for w in cells.windows(2) {
            assert!(w[0].is_moore_adjacent(w[1]), "{} -> {}", w[0], w[1]);
        }
        assert_eq!(cells.first(), Some(&Coord::new(0, 0)));
        assert_eq!(cells.last(), Some(&Coord::new(2, 2)));
    }

    #[test]
    fn adjacent_poi_links_without_aux_segment() {
        let map = crate::synth::map_from_rows(&["prr", "...", "..."], "t");
        let before = map.segments().len();
        let linked = normalize_and_link(map).unwrap();
        assert_eq!(linked.pois()[0].linked_road, Coord::new(1, 0));
        assert_eq!(linked.segments().len(), before);
    }

    #[test]
    fn equidistant_link_breaks_ties_row_major() {
        // Roads two cells north and two south of the POI: the northern one
        // wins row-major order.
        let map = crate::synth::map_from_rows(
            &[
                "rrr..",
                ".....",
                "p....",
                ".....",
                "rrr..",
            ],
            "t",
        );
        let linked = normalize_and_link(map).unwrap();
        assert_eq!(linked.pois()[0].linked_road, Coord::new(0, 1));
        // A one-cell auxiliary chain was carved toward the chosen road.
        assert!(linked.kind(Coord::new(0, 1)).is_navigable());
    }

    #[test]
    fn linked_roads_match_exhaustive_nearest_scan() {
        for seed in 0..10u64 {
            let map = crate::synth::random_map(seed, 14, 14, &crate::synth::SynthSpec::small_test());
            for p in map.pois() {
                let best = map
                    .coords()
                    .filter(|&c| map.kind(c).is_navigable())
                    .min_by(|&a, &b| {
                        crate::mapenv::euclidean_distance(p.at, a)
                            .partial_cmp(&crate::mapenv::euclidean_distance(p.at, b))
                            .unwrap()
                            .then(a.cmp(&b))
                    })
                    .unwrap();
                assert_eq!(p.linked_road, best, "seed {} poi {}", seed, p.id);
            }
        }
    }

    #[test]
    fn normalize_and_link_is_idempotent() {
        for seed in 0..10u64 {
            let map = crate::synth::random_map(seed, 12, 12, &crate::synth::SynthSpec::small_test());
            let once = normalize_and_link(map).unwrap();
            let twice = normalize_and_link(once.clone()).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn linked_maps_validate() {
        for seed in 0..10u64 {
            let map = crate::synth::random_map(seed, 12, 12, &crate::synth::SynthSpec::small_test());
            let report = validate_map(&map);
            assert!(report.is_ok(), "seed {}: {}", seed, report);
        }
    }

    #[test]
    fn catalog_has_fifteen_cities_with_expected_mean() {
        let catalog = builtin_catalog();
        assert_eq!(catalog.len(), 15);
        let mean = catalog.iter().map(|e| e.poi_count as f64).sum::<f64>() / 15.0;
        assert!((mean - 15.27).abs() <= 0.01, "mean poi count {}", mean);
        let beijing = &catalog[0];
        assert_eq!(
            (beijing.poi_count, beijing.intersection_count, beijing.main_road_count),
            (21, 22, 4)
        );
    }

    #[test]
    fn catalog_mismatch_reports_field() {
        let entry = CatalogEntry {
            city: "Shanghai".into(),
            poi_count: 9,
            intersection_count: 10,
            main_road_count: 4,
        };
        let map = crate::synth::random_map(1, 12, 12, &crate::synth::SynthSpec::small_test());
        let report = check_catalog(&map, &entry);
        if map.pois().len() != 9 {
            assert!(!report.matches());
            assert!(report.mismatches().iter().any(|m| m.contains("poi_count")));
        }
    }

    #[test]
    fn map_file_round_trip_is_byte_exact() {
        let map = crate::synth::random_map(4, 12, 12, &crate::synth::SynthSpec::small_test());
        let text = render_map(&map);
        let parsed = parse_map(&text).unwrap();
        assert_eq!(parsed, map);
        assert_eq!(render_map(&parsed), text);
    }

    #[test]
    fn auxiliary_segments_do_not_change_main_counts() {
        let map = crate::synth::map_from_rows(
            &[
                "rrrrr",
                ".....",
                ".....",
                "..p..",
            ],
            "t",
        );
        let mains_before = map
            .segments()
            .iter()
            .filter(|s| s.class == RoadClass::Main)
            .count();
        let linked = normalize_and_link(map).unwrap();
        let mains_after = linked
            .segments()
            .iter()
            .filter(|s| s.class == RoadClass::Main)
            .count();
        assert_eq!(mains_before, mains_after);
        assert!(linked
            .segments()
            .iter()
            .any(|s| s.class == RoadClass::Auxiliary));
    }
}
