//! Deterministic synthetic map generation: quick ASCII maps for tests and
//! seeded city generation matching the catalog's exact counts.

use crate::ingest::{self, CatalogEntry, IngestError};
use crate::mapenv::{
    validate_map, CellKind, Coord, GridMap, Intersection, Poi, RoadClass, RoadSegment,
};
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds a map from rows of cell codes ('.', 'r', 'x', 'p'). POIs and
/// intersections are numbered row-major from 1 and POIs are linked to their
/// nearest road cell. No segments are recorded.
pub fn map_from_rows(rows: &[&str], city: &str) -> GridMap {
    let height = rows.len() as i32;
    let width = rows[0].chars().count() as i32;
    let mut cells = Vec::with_capacity((width * height) as usize);
    let mut pois = Vec::new();
    let mut intersections = Vec::new();
    for (r, rowtext) in rows.iter().enumerate() {
        assert_eq!(rowtext.chars().count() as i32, width, "ragged row {}", r);
        for (c, ch) in rowtext.chars().enumerate() {
            let kind = CellKind::from_code(ch).expect("valid cell code");
            let at = Coord::new(c as i32, r as i32);
            match kind {
                CellKind::Poi => pois.push(Poi {
                    id: pois.len() as u32 + 1,
                    name: format!("POI {}", pois.len() + 1),
                    at,
                    linked_road: at,
                }),
                CellKind::Intersection => intersections.push(Intersection {
                    id: intersections.len() as u32 + 1,
                    at,
                }),
                _ => {}
            }
            cells.push(kind);
        }
    }
    let mut map = GridMap::from_parts(
        width,
        height,
        cells,
        pois,
        intersections,
        Vec::new(),
        city.to_string(),
    )
    .expect("consistent rows");
    for i in 0..map.pois().len() {
        let at = map.pois()[i].at;
        if let Some(nearest) = map.nearest_road_cell(at) {
            map.pois_mut()[i].linked_road = nearest;
        }
    }
    map
}

/// Knobs for random map generation.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub pois: u32,
    pub main_roads: u32,
    /// When set, exactly this many road cells are tagged as intersections;
    /// otherwise every derived junction candidate is tagged.
    pub intersections: Option<u32>,
    /// Largest Chebyshev distance between a POI and the road network.
    pub poi_spread: i32,
}

impl SynthSpec {
    /// Small maps for unit tests: a handful of POIs on 2-3 roads.
    pub fn small_test() -> Self {
        SynthSpec {
            pois: 4,
            main_roads: 3,
            intersections: None,
            poi_spread: 2,
        }
    }
}

const POI_NOUNS: [&str; 20] = [
    "Cafe", "Museum", "Market", "Hotel", "Library", "Park", "Bakery", "Station", "Theater",
    "Gallery", "School", "Clinic", "Tower", "Plaza", "Garden", "Cinema", "Temple", "Arena",
    "Harbor", "Studio",
];

const POI_SUFFIXES: [&str; 26] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "J", "K", "L", "M", "N", "P", "Q", "R", "S", "T",
    "U", "V", "W", "X", "Y", "Z", "AA", "AB",
];

// Noun and suffix cycles have coprime-ish lengths, so names stay distinct
// for far more POIs than any map holds.
fn poi_name(i: usize) -> String {
    format!(
        "{} {}",
        POI_NOUNS[i % POI_NOUNS.len()],
        POI_SUFFIXES[i % POI_SUFFIXES.len()]
    )
}

/// Random axis-aligned polylines spanning the grid, city-block style: each
/// road crosses the map horizontally or vertically, possibly with one
/// perpendicular jog. The first two roads take the two orientations so the
/// network stays connected.
fn gen_polylines(rng: &mut ChaCha8Rng, width: i32, height: i32, count: u32) -> Vec<Vec<Coord>> {
    let mut polylines = Vec::new();
    let mut used_rows: Vec<i32> = Vec::new();
    let mut used_cols: Vec<i32> = Vec::new();
    let pick_lane = |rng: &mut ChaCha8Rng, limit: i32, used: &mut Vec<i32>| -> i32 {
        for _ in 0..16 {
            let lane = rng.gen_range(1..limit - 1);
            if used.iter().all(|&u| (u - lane).abs() >= 2) {
                used.push(lane);
                return lane;
            }
        }
        let lane = rng.gen_range(0..limit);
        used.push(lane);
        lane
    };
    for k in 0..count {
        let horizontal = if k == 0 {
            true
        } else if k == 1 {
            false
        } else {
            rng.gen_bool(0.5)
        };
        let mut waypoints = Vec::new();
        if horizontal {
            let row = pick_lane(rng, height, &mut used_rows);
            if rng.gen_bool(0.4) {
                let jog_col = rng.gen_range(width / 4..3 * width / 4);
                let row2 = (row + rng.gen_range(-3..=3)).clamp(0, height - 1);
                waypoints.push(Coord::new(0, row));
                waypoints.push(Coord::new(jog_col, row));
                waypoints.push(Coord::new(jog_col, row2));
                waypoints.push(Coord::new(width - 1, row2));
            } else {
                waypoints.push(Coord::new(0, row));
                waypoints.push(Coord::new(width - 1, row));
            }
        } else {
            let col = pick_lane(rng, width, &mut used_cols);
            if rng.gen_bool(0.4) {
                let jog_row = rng.gen_range(height / 4..3 * height / 4);
                let col2 = (col + rng.gen_range(-3..=3)).clamp(0, width - 1);
                waypoints.push(Coord::new(col, 0));
                waypoints.push(Coord::new(col, jog_row));
                waypoints.push(Coord::new(col2, jog_row));
                waypoints.push(Coord::new(col2, height - 1));
            } else {
                waypoints.push(Coord::new(col, 0));
                waypoints.push(Coord::new(col, height - 1));
            }
        }
        let mut cells: Vec<Coord> = Vec::new();
        for pair in waypoints.windows(2) {
            let leg = ingest::supercover_cells(pair[0], pair[1]);
            let skip = usize::from(!cells.is_empty());
            cells.extend(leg.into_iter().skip(skip));
        }
        cells.dedup();
        polylines.push(cells);
    }
    polylines
}

/// Junction candidates: cells shared by two polylines, or cells where one
/// polyline touches another's path, sorted row-major.
fn junction_candidates(polylines: &[Vec<Coord>], width: i32, height: i32) -> Vec<Coord> {
    let mut count = vec![0u8; (width * height) as usize];
    let idx = |c: Coord| (c.row * width + c.col) as usize;
    for line in polylines {
        let mut seen = std::collections::HashSet::new();
        for &c in line {
            if seen.insert(c) {
                count[idx(c)] = count[idx(c)].saturating_add(1);
            }
        }
    }
    let mut out: Vec<Coord> = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let c = Coord::new(col, row);
            if count[idx(c)] >= 2 {
                out.push(c);
            }
        }
    }
    out
}

struct Attempt {
    width: i32,
    height: i32,
    cells: Vec<CellKind>,
    pois: Vec<Poi>,
    intersections: Vec<Intersection>,
    segments: Vec<RoadSegment>,
}

fn try_build(
    rng: &mut ChaCha8Rng,
    width: i32,
    height: i32,
    spec: &SynthSpec,
) -> Option<Attempt> {
    let polylines = gen_polylines(rng, width, height, spec.main_roads);
    let ncells = (width * height) as usize;
    let idx = |c: Coord| (c.row * width + c.col) as usize;
    let mut cells = vec![CellKind::Background; ncells];
    for line in &polylines {
        for &c in line {
            cells[idx(c)] = CellKind::Road;
        }
    }

    // Intersections: crossings first, then extra spaced tags to hit an
    // exact target when one is requested.
    let candidates = junction_candidates(&polylines, width, height);
    let chosen: Vec<Coord> = match spec.intersections {
        None => candidates,
        Some(target) => {
            let target = target as usize;
            let mut chosen: Vec<Coord> = candidates.into_iter().take(target).collect();
            if chosen.len() < target {
                for row in 0..height {
                    for col in 0..width {
                        let c = Coord::new(col, row);
                        if cells[idx(c)] != CellKind::Road || chosen.contains(&c) {
                            continue;
                        }
                        if chosen.iter().all(|&x| x.chebyshev(c) >= 2) {
                            chosen.push(c);
                            if chosen.len() == target {
                                break;
                            }
                        }
                    }
                    if chosen.len() == target {
                        break;
                    }
                }
            }
            if chosen.len() != target {
                return None;
            }
            chosen
        }
    };
    let mut intersections = Vec::new();
    for (i, &c) in chosen.iter().enumerate() {
        cells[idx(c)] = CellKind::Intersection;
        intersections.push(Intersection {
            id: i as u32 + 1,
            at: c,
        });
    }

    // POI sites: background cells within reach of the network.
    let mut sites: Vec<Coord> = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let c = Coord::new(col, row);
            if cells[idx(c)] != CellKind::Background {
                continue;
            }
            let near = (1..=spec.poi_spread).any(|d| {
                (-d..=d).any(|dc| {
                    (-d..=d).any(|dr| {
                        let n = Coord::new(c.col + dc, c.row + dr);
                        n.col >= 0
                            && n.col < width
                            && n.row >= 0
                            && n.row < height
                            && cells[idx(n)].is_navigable()
                    })
                })
            });
            if near {
                sites.push(c);
            }
        }
    }
    sites.shuffle(rng);
    if sites.len() < spec.pois as usize {
        return None;
    }
    let mut pois = Vec::new();
    for (i, &at) in sites.iter().take(spec.pois as usize).enumerate() {
        cells[idx(at)] = CellKind::Poi;
        pois.push(Poi {
            id: i as u32 + 1,
            name: poi_name(i),
            at,
            linked_road: at,
        });
    }

    let segments = polylines
        .into_iter()
        .map(|cells| RoadSegment {
            class: RoadClass::Main,
            cells,
        })
        .collect();

    Some(Attempt {
        width,
        height,
        cells,
        pois,
        intersections,
        segments,
    })
}

/// Deterministic random map: seeded polyline network, derived or exact-count
/// intersections, POIs linked through [`ingest::normalize_and_link`]. The
/// result always passes [`validate_map`].
pub fn random_map(seed: u64, width: i32, height: i32, spec: &SynthSpec) -> GridMap {
    try_random_map(seed, width, height, spec, "synth")
        .unwrap_or_else(|e| panic!("synthesis failed for seed {}: {}", seed, e))
}

fn try_random_map(
    seed: u64,
    width: i32,
    height: i32,
    spec: &SynthSpec,
    city: &str,
) -> Result<GridMap, IngestError> {
    for attempt in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("map-{}", attempt)));
        let Some(built) = try_build(&mut rng, width, height, spec) else {
            continue;
        };
        let map = GridMap::from_parts(
            built.width,
            built.height,
            built.cells,
            built.pois,
            built.intersections,
            built.segments,
            city.to_string(),
        )?;
        let linked = match ingest::normalize_and_link(map) {
            Ok(m) => m,
            Err(_) => continue,
        };
        if validate_map(&linked).is_ok() {
            return Ok(linked);
        }
    }
    Err(IngestError::BadVector(format!(
        "no valid synthetic map for seed {} within attempt budget",
        seed
    )))
}

/// Seeded city fixture matching a catalog entry's exact POI, intersection,
/// and main-road counts on a 20x20 grid.
pub fn city_fixture(entry: &CatalogEntry) -> Result<GridMap, IngestError> {
    let seed = derive_seed(0x6d61_706d_696e_6421, &entry.city);
    let spec = SynthSpec {
        pois: entry.poi_count,
        main_roads: entry.main_road_count,
        intersections: Some(entry.intersection_count),
        poi_spread: 2,
    };
    let map = try_random_map(seed, 20, 20, &spec, &entry.city)?;
    let report = ingest::check_catalog(&map, entry);
    if !report.matches() {
        return Err(IngestError::BadVector(format!(
            "{} fixture misses catalog: {:?}",
            entry.city,
            report.mismatches()
        )));
    }
    Ok(map)
}

/// All 15 catalog city fixtures.
pub fn catalog_fixtures() -> Result<Vec<GridMap>, IngestError> {
    ingest::builtin_catalog().iter().map(city_fixture).collect()
}
