//! Deterministic generation of the five spatial task families, each with a
//! ground-truth oracle: direction judgment (DJ), distance estimation (DS),
//! proximity judgment (PJ), POI density recognition (PDR), and path
//! planning (PP). Every city yields 8/4/4/4/4 items before degeneracy
//! filtering.

use crate::mapenv::{
    euclidean_distance, shortest_route, shortest_route_avoiding, Compass, Coord, GridMap, Route,
};
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// The eight compass bearings used by direction items.
pub use crate::mapenv::Compass as CompassDirection;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("direction between identical coordinates is undefined")]
    UndefinedDirection,
    #[error("map has {got} POIs, need at least {need}")]
    NotEnoughPois { need: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskCategory {
    #[serde(rename = "DJ")]
    Direction,
    #[serde(rename = "DS")]
    Distance,
    #[serde(rename = "PJ")]
    Proximity,
    #[serde(rename = "PDR")]
    Density,
    #[serde(rename = "PP")]
    Path,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 5] = [
        TaskCategory::Direction,
        TaskCategory::Distance,
        TaskCategory::Proximity,
        TaskCategory::Density,
        TaskCategory::Path,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Direction => "DJ",
            TaskCategory::Distance => "DS",
            TaskCategory::Proximity => "PJ",
            TaskCategory::Density => "PDR",
            TaskCategory::Path => "PP",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskCategory> {
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Distance notion for the DS and PJ families: straight-line cell distance
/// by default, shortest-route moves as the alternative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMetric {
    #[default]
    Euclidean,
    RoadMoves,
}

/// Generation knobs: the DS/PJ metric and the ambiguity margins that keep
/// items tie-free.
#[derive(Debug, Clone)]
pub struct GenOptions {
    pub metric: TaskMetric,
    /// Reject DS pairs closer than this to an interval boundary.
    pub ds_boundary_margin: f64,
    /// Minimum gap between the two nearest PJ alternatives.
    pub pj_margin: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            metric: TaskMetric::Euclidean,
            ds_boundary_margin: 0.25,
            pj_margin: 0.5,
        }
    }
}

/// Category-specific data needed to re-derive the answer from the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskMeta {
    Direction {
        a: u32,
        b: u32,
        pair_link: u32,
    },
    Distance {
        a: u32,
        b: u32,
        long: bool,
        #[serde(default)]
        metric: TaskMetric,
    },
    Proximity {
        reference: u32,
        alternatives: Vec<u32>,
        #[serde(default)]
        metric: TaskMetric,
    },
    Density {
        highest: bool,
    },
    Path {
        a: u32,
        b: u32,
        long: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub category: TaskCategory,
    pub prompt: String,
    pub options: Vec<String>,
    pub correct: usize,
    /// Ground truth is non-unique; flagged and excluded from scoring.
    pub degenerate: bool,
    pub meta: TaskMeta,
}

impl TaskItem {
    /// Question plus lettered options, the form shown to an agent.
    pub fn render_question(&self) -> String {
        let mut out = self.prompt.clone();
        for (i, option) in self.options.iter().enumerate() {
            out.push('\n');
            out.push(char::from(b'A' + i as u8));
            out.push_str(". ");
            out.push_str(option);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Direction judgment
// ---------------------------------------------------------------------------

/// Bearing of `b` from `a`, classified into eight 45-degree sectors. Exact
/// sector boundaries (odd multiples of 22.5 degrees) resolve toward the
/// cardinal; on integer grids they cannot actually occur.
pub fn oracle_direction(a: Coord, b: Coord) -> Result<Compass, TaskError> {
    if a == b {
        return Err(TaskError::UndefinedDirection);
    }
    let east = b.col - a.col;
    let north = a.row - b.row;
    // `small` is within 22.5 degrees of the `large` axis iff
    // small * (1 + sqrt(2)) <= large, i.e. 2*small^2 <= (large - small)^2.
    let cardinal_dominates = |large: i32, small: i32| -> bool {
        large >= small && 2 * small as i64 * small as i64 <= {
            let d = (large - small) as i64;
            d * d
        }
    };
    let (ae, an) = (east.abs(), north.abs());
    if cardinal_dominates(ae, an) {
        return Ok(if east > 0 { Compass::East } else { Compass::West });
    }
    if cardinal_dominates(an, ae) {
        return Ok(if north > 0 {
            Compass::North
        } else {
            Compass::South
        });
    }
    Ok(match (east > 0, north > 0) {
        (true, true) => Compass::NorthEast,
        (true, false) => Compass::SouthEast,
        (false, false) => Compass::SouthWest,
        (false, true) => Compass::NorthWest,
    })
}

fn compass_index(d: Compass) -> usize {
    Compass::ALL.iter().position(|&x| x == d).unwrap()
}

fn poi_phrase(map: &GridMap, id: u32) -> String {
    let p = map.poi(id).expect("known poi");
    format!("{} (P{})", p.name, id)
}

/// Eight direction items as four symmetric pairs: one item asks X relative
/// to Y and its twin asks the reverse, so the correct bearings are opposite.
pub fn gen_direction_items(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    let ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            pairs.push((a, b));
        }
    }
    if pairs.len() < 4 {
        return Err(TaskError::NotEnoughPois {
            need: 5,
            got: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dj"));
    pairs.shuffle(&mut rng);
    let mut items = Vec::new();
    for (link, &(a, b)) in pairs.iter().take(4).enumerate() {
        for (k, (from, to)) in [(a, b), (b, a)].into_iter().enumerate() {
            let correct_dir = oracle_direction(
                map.poi(from).unwrap().at,
                map.poi(to).unwrap().at,
            )
            .expect("distinct poi cells");
            // Distractors exclude the correct bearing and its two 45-degree
            // neighbors, so no option is ambiguously close.
            let ci = compass_index(correct_dir);
            let mut candidates: Vec<Compass> = Compass::ALL
                .into_iter()
                .enumerate()
                .filter(|&(i, _)| {
                    i != ci && i != (ci + 1) % 8 && i != (ci + 7) % 8
                })
                .map(|(_, d)| d)
                .collect();
            candidates.shuffle(&mut rng);
            let mut options: Vec<Compass> = candidates.into_iter().take(3).collect();
            options.push(correct_dir);
            options.shuffle(&mut rng);
            let correct = options.iter().position(|&d| d == correct_dir).unwrap();
            items.push(TaskItem {
                id: format!("dj-{}", link * 2 + k + 1),
                category: TaskCategory::Direction,
                prompt: format!(
                    "What is the direction of {} relative to {}?",
                    poi_phrase(map, to),
                    poi_phrase(map, from)
                ),
                options: options.iter().map(|d| d.label().to_string()).collect(),
                correct,
                degenerate: false,
                meta: TaskMeta::Direction {
                    a: from,
                    b: to,
                    pair_link: link as u32,
                },
            });
        }
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Distance estimation
// ---------------------------------------------------------------------------

/// Grid-diagonal length: the upper end of the distance scale.
pub fn grid_diagonal(map: &GridMap) -> f64 {
    euclidean_distance(
        Coord::new(0, 0),
        Coord::new(map.width() - 1, map.height() - 1),
    )
}

/// The four equal quarters of [0, diagonal].
pub fn distance_intervals(diagonal: f64) -> [(f64, f64); 4] {
    let q = diagonal / 4.0;
    [
        (0.0, q),
        (q, 2.0 * q),
        (2.0 * q, 3.0 * q),
        (3.0 * q, diagonal),
    ]
}

fn interval_text(index: usize, scale: f64, metric: TaskMetric) -> String {
    let (lo, hi) = distance_intervals(scale)[index];
    let unit = match metric {
        TaskMetric::Euclidean => "cells",
        TaskMetric::RoadMoves => "moves",
    };
    format!("Range {} ({:.2} to {:.2} {})", index + 1, lo, hi, unit)
}

/// Interval containing a distance; the final interval is closed above.
pub fn interval_index(distance: f64, scale: f64) -> usize {
    let q = scale / 4.0;
    ((distance / q).floor() as usize).min(3)
}

/// Pair distance under the configured metric.
fn pair_distance(map: &GridMap, a: u32, b: u32, metric: TaskMetric) -> f64 {
    match metric {
        TaskMetric::Euclidean => {
            euclidean_distance(map.poi(a).unwrap().at, map.poi(b).unwrap().at)
        }
        TaskMetric::RoadMoves => {
            shortest_route(map, a, b).expect("valid map").length() as f64
        }
    }
}

/// Top of the DS interval scale: the grid diagonal for straight-line
/// distance, the longest pairwise route for road moves.
pub fn distance_scale(map: &GridMap, metric: TaskMetric) -> f64 {
    match metric {
        TaskMetric::Euclidean => grid_diagonal(map),
        TaskMetric::RoadMoves => {
            let ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
            let mut longest = 0usize;
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    longest = longest.max(shortest_route(map, a, b).expect("valid map").length());
                }
            }
            longest.max(4) as f64
        }
    }
}

/// Four distance items: two pairs from the short half of the scale, two
/// from the long half, avoiding pairs within the boundary margin of an
/// interval edge.
pub fn gen_distance_items(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    gen_distance_items_with(map, seed, &GenOptions::default())
}

pub fn gen_distance_items_with(
    map: &GridMap,
    seed: u64,
    opts: &GenOptions,
) -> Result<Vec<TaskItem>, TaskError> {
    let ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
    if ids.len() < 2 {
        return Err(TaskError::NotEnoughPois {
            need: 4,
            got: ids.len(),
        });
    }
    let metric = opts.metric;
    let scale = distance_scale(map, metric);
    let q = scale / 4.0;
    let clear_of_boundaries =
        |d: f64| (1..4).all(|k| (d - k as f64 * q).abs() > opts.ds_boundary_margin);
    let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            pairs.push((a, b, pair_distance(map, a, b, metric)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ds"));
    pairs.shuffle(&mut rng);
    let mut items = Vec::new();
    for (k, &long) in [false, false, true, true].iter().enumerate() {
        let wanted = |d: f64| {
            let idx = interval_index(d, scale);
            if long {
                idx >= 2
            } else {
                idx < 2
            }
        };
        let pick = pairs
            .iter()
            .find(|&&(a, b, d)| {
                wanted(d)
                    && clear_of_boundaries(d)
                    && !items.iter().any(|it: &TaskItem| {
                        matches!(it.meta, TaskMeta::Distance { a: ia, b: ib, .. } if (ia, ib) == (a, b))
                    })
            })
            .copied();
        let (a, b, d, degenerate) = match pick {
            Some((a, b, d)) => (a, b, d, false),
            // No qualifying pair: emit the first pair flagged degenerate.
            None => {
                let (a, b, d) = pairs[k % pairs.len()];
                (a, b, d, true)
            }
        };
        let correct = interval_index(d, scale);
        let phrasing = match metric {
            TaskMetric::Euclidean => "straight-line distance",
            TaskMetric::RoadMoves => "road distance",
        };
        items.push(TaskItem {
            id: format!("ds-{}", k + 1),
            category: TaskCategory::Distance,
            prompt: format!(
                "The {} from {} to {} is closest to which interval?",
                phrasing,
                poi_phrase(map, a),
                poi_phrase(map, b)
            ),
            options: (0..4).map(|i| interval_text(i, scale, metric)).collect(),
            correct,
            degenerate,
            meta: TaskMeta::Distance { a, b, long, metric },
        });
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Proximity judgment
// ---------------------------------------------------------------------------

const PJ_RETRIES: usize = 64;
const PP_RETRIES: usize = 20;

/// Four proximity items: a reference POI with four sampled alternatives,
/// resampled while the two nearest alternatives are within the margin.
pub fn gen_proximity_items(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    gen_proximity_items_with(map, seed, &GenOptions::default())
}

pub fn gen_proximity_items_with(
    map: &GridMap,
    seed: u64,
    opts: &GenOptions,
) -> Result<Vec<TaskItem>, TaskError> {
    let ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
    if ids.len() < 5 {
        return Err(TaskError::NotEnoughPois {
            need: 5,
            got: ids.len(),
        });
    }
    let metric = opts.metric;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pj"));
    let mut items = Vec::new();
    for k in 0..4 {
        let mut chosen: Option<(u32, Vec<u32>, bool)> = None;
        let mut fallback: Option<(u32, Vec<u32>)> = None;
        for _ in 0..PJ_RETRIES {
            let mut pool = ids.clone();
            pool.shuffle(&mut rng);
            let reference = pool[0];
            let alternatives: Vec<u32> = pool[1..5].to_vec();
            if fallback.is_none() {
                fallback = Some((reference, alternatives.clone()));
            }
            let mut dists: Vec<f64> = alternatives
                .iter()
                .map(|&id| pair_distance(map, reference, id, metric))
                .collect();
            dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
            if dists[1] - dists[0] >= opts.pj_margin {
                chosen = Some((reference, alternatives, false));
                break;
            }
        }
        let (reference, alternatives, degenerate) = chosen.unwrap_or_else(|| {
            let (r, alts) = fallback.unwrap();
            (r, alts, true)
        });
        let correct = alternatives
            .iter()
            .enumerate()
            .min_by(|(_, &x), (_, &y)| {
                pair_distance(map, reference, x, metric)
                    .partial_cmp(&pair_distance(map, reference, y, metric))
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        items.push(TaskItem {
            id: format!("pj-{}", k + 1),
            category: TaskCategory::Proximity,
            prompt: format!("Which POI is closest to {}?", poi_phrase(map, reference)),
            options: alternatives
                .iter()
                .map(|&id| poi_phrase(map, id))
                .collect(),
            correct,
            degenerate,
            meta: TaskMeta::Proximity {
                reference,
                alternatives,
                metric,
            },
        });
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// POI density recognition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    NorthWest,
    NorthEast,
    SouthWest,
    SouthEast,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::NorthWest,
        Quadrant::NorthEast,
        Quadrant::SouthWest,
        Quadrant::SouthEast,
    ];

    fn contains(self, map: &GridMap, c: Coord) -> bool {
        let west = c.col < map.width() / 2;
        let north = c.row < map.height() / 2;
        match self {
            Quadrant::NorthWest => north && west,
            Quadrant::NorthEast => north && !west,
            Quadrant::SouthWest => !north && west,
            Quadrant::SouthEast => !north && !west,
        }
    }

    fn text(self, map: &GridMap) -> String {
        let (w, h) = (map.width(), map.height());
        let (cols, rows) = match self {
            Quadrant::NorthWest => (format!("0-{}", w / 2 - 1), format!("0-{}", h / 2 - 1)),
            Quadrant::NorthEast => (format!("{}-{}", w / 2, w - 1), format!("0-{}", h / 2 - 1)),
            Quadrant::SouthWest => (format!("0-{}", w / 2 - 1), format!("{}-{}", h / 2, h - 1)),
            Quadrant::SouthEast => (
                format!("{}-{}", w / 2, w - 1),
                format!("{}-{}", h / 2, h - 1),
            ),
        };
        let name = match self {
            Quadrant::NorthWest => "Northwest",
            Quadrant::NorthEast => "Northeast",
            Quadrant::SouthWest => "Southwest",
            Quadrant::SouthEast => "Southeast",
        };
        format!("{} quadrant (cols {}, rows {})", name, cols, rows)
    }
}

/// POIs per quadrant, in [`Quadrant::ALL`] order.
pub fn quadrant_counts(map: &GridMap) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for p in map.pois() {
        for (i, q) in Quadrant::ALL.into_iter().enumerate() {
            if q.contains(map, p.at) {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// The quadrant with the extreme count, when it is strictly unique.
pub fn extreme_quadrant(map: &GridMap, highest: bool) -> Option<Quadrant> {
    let counts = quadrant_counts(map);
    let extreme = if highest {
        *counts.iter().max().unwrap()
    } else {
        *counts.iter().min().unwrap()
    };
    let mut hits = counts.iter().enumerate().filter(|(_, &c)| c == extreme);
    let (index, _) = hits.next().unwrap();
    if hits.next().is_some() {
        return None; // tied extreme
    }
    Some(Quadrant::ALL[index])
}

/// Four density items over the fixed quadrant partition: two ask for the
/// highest-count quadrant, two for the lowest; tied extremes make the item
/// degenerate.
pub fn gen_density_items(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pdr"));
    let mut items = Vec::new();
    for (k, &highest) in [true, true, false, false].iter().enumerate() {
        let answer = extreme_quadrant(map, highest);
        let mut quadrants = Quadrant::ALL.to_vec();
        quadrants.shuffle(&mut rng);
        let correct = answer
            .map(|q| quadrants.iter().position(|&x| x == q).unwrap())
            .unwrap_or(0);
        items.push(TaskItem {
            id: format!("pdr-{}", k + 1),
            category: TaskCategory::Density,
            prompt: format!(
                "Which area has the {} POI density?",
                if highest { "highest" } else { "lowest" }
            ),
            options: quadrants.iter().map(|q| q.text(map)).collect(),
            correct,
            degenerate: answer.is_none(),
            meta: TaskMeta::Density { highest },
        });
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Path planning
// ---------------------------------------------------------------------------

fn route_option_text(route: &Route) -> String {
    if route.via_intersections.is_empty() {
        "Direct road route passing no intersections".to_string()
    } else {
        format!(
            "Route via intersections {}",
            route
                .via_intersections
                .iter()
                .map(|id| format!("I{}", id))
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

/// Strictly longer alternative routes with pairwise distinct intersection
/// sequences, found by re-searching with forbidden edge sets of growing
/// size: single shortest-route edges, then adjacent pairs, then the full
/// incident-edge fan of each interior route cell (and pairs of fans), which
/// is what actually forces detours in an eight-connected grid.
pub(crate) fn alternative_routes(
    map: &GridMap,
    a: u32,
    b: u32,
    want: usize,
) -> (Route, Vec<Route>) {
    let best = shortest_route(map, a, b).expect("valid map routes");
    let edges: Vec<(Coord, Coord)> = best
        .cells
        .windows(2)
        .map(|w| crate::mapenv::edge_key(w[0], w[1]))
        .collect();
    // All edges incident to one interior route cell: banning them removes
    // the cell from the network.
    let fan = |c: Coord| -> Vec<(Coord, Coord)> {
        c.neighbors8()
            .filter(|&n| map.in_bounds(n))
            .map(|n| crate::mapenv::edge_key(c, n))
            .collect()
    };
    let interior: Vec<Coord> = if best.cells.len() > 4 {
        best.cells[2..best.cells.len() - 2].to_vec()
    } else {
        Vec::new()
    };

    let mut seen: Vec<String> = vec![route_option_text(&best)];
    let mut found: Vec<Route> = Vec::new();
    let consider = |route: Route, seen: &mut Vec<String>, found: &mut Vec<Route>| {
        if route.length() <= best.length() {
            return;
        }
        let text = route_option_text(&route);
        if seen.contains(&text) {
            return;
        }
        seen.push(text);
        found.push(route);
    };

    let mut banned_sets: Vec<Vec<(Coord, Coord)>> = Vec::new();
    for &e in &edges {
        banned_sets.push(vec![e]);
    }
    for pair in edges.windows(2) {
        banned_sets.push(pair.to_vec());
    }
    for &c in &interior {
        banned_sets.push(fan(c));
    }
    for banned in banned_sets {
        if found.len() >= want {
            break;
        }
        if let Ok(route) = shortest_route_avoiding(map, a, b, &banned) {
            consider(route, &mut seen, &mut found);
        }
    }
    // Pairs of removed cells only pay off when single removals already
    // produced something; a locally dense network yields nothing either way.
    if !found.is_empty() && found.len() < want {
        let mut fan_pairs: Vec<Vec<(Coord, Coord)>> = Vec::new();
        'fan_pairs: for (i, &c) in interior.iter().enumerate() {
            for &d in interior.iter().skip(i + 2) {
                let mut set = fan(c);
                set.extend(fan(d));
                fan_pairs.push(set);
                if fan_pairs.len() >= 120 {
                    break 'fan_pairs;
                }
            }
        }
        for banned in fan_pairs {
            if found.len() >= want {
                break;
            }
            if let Ok(route) = shortest_route_avoiding(map, a, b, &banned) {
                consider(route, &mut seen, &mut found);
            }
        }
    }
    (best, found)
}

/// Four path items: two POI pairs from the top tercile of pairwise route
/// lengths and two from the bottom; options are the true shortest route and
/// three strictly longer alternatives, rendered as intersection sequences.
pub fn gen_path_items(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    let ids: Vec<u32> = map.pois().iter().map(|p| p.id).collect();
    if ids.len() < 2 {
        return Err(TaskError::NotEnoughPois {
            need: 2,
            got: ids.len(),
        });
    }
    let mut pairs: Vec<(u32, u32, usize)> = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let len = shortest_route(map, a, b).expect("valid map").length();
            pairs.push((a, b, len));
        }
    }
    pairs.sort_by_key(|&(a, b, len)| (len, a, b));
    let tercile = (pairs.len() / 3).max(1);
    let mut short_pool: Vec<(u32, u32)> = pairs[..tercile.min(pairs.len())]
        .iter()
        .map(|&(a, b, _)| (a, b))
        .collect();
    let mut long_pool: Vec<(u32, u32)> = pairs[pairs.len().saturating_sub(tercile)..]
        .iter()
        .map(|&(a, b, _)| (a, b))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pp"));
    short_pool.shuffle(&mut rng);
    long_pool.shuffle(&mut rng);
    let mut used: Vec<(u32, u32)> = Vec::new();
    let mut items = Vec::new();
    for (k, &long) in [true, true, false, false].iter().enumerate() {
        // Walk the tercile in seeded order until a pair admits three
        // strictly longer alternatives; only an exhausted pool leaves the
        // item degenerate.
        let pool = if long { &long_pool } else { &short_pool };
        let mut picked: Option<((u32, u32), Route, Vec<Route>)> = None;
        let mut fallback: Option<((u32, u32), Route, Vec<Route>)> = None;
        for &(a, b) in pool.iter().filter(|p| !used.contains(p)).take(PP_RETRIES) {
            let (best, alternatives) = alternative_routes(map, a, b, 3);
            if alternatives.len() >= 3 {
                picked = Some(((a, b), best, alternatives));
                break;
            }
            if fallback.is_none() {
                fallback = Some(((a, b), best, alternatives));
            }
        }
        let ((a, b), best, alternatives) = picked.or(fallback).unwrap_or_else(|| {
            let &(a, b) = pool.first().expect("non-empty tercile");
            let (best, alternatives) = alternative_routes(map, a, b, 3);
            ((a, b), best, alternatives)
        });
        used.push((a, b));
        let degenerate = alternatives.len() < 3;
        let mut options: Vec<(String, bool)> = vec![(route_option_text(&best), true)];
        options.extend(
            alternatives
                .iter()
                .map(|r| (route_option_text(r), false)),
        );
        // Degenerate items still need four distinct option strings.
        let mut filler = 1;
        while options.len() < 4 {
            options.push((format!("No such route exists (placeholder {})", filler), false));
            filler += 1;
        }
        options.shuffle(&mut rng);
        let correct = options.iter().position(|(_, is_best)| *is_best).unwrap();
        items.push(TaskItem {
            id: format!("pp-{}", k + 1),
            category: TaskCategory::Path,
            prompt: format!(
                "Which route from {} to {} is the shortest?",
                poi_phrase(map, a),
                poi_phrase(map, b)
            ),
            options: options.into_iter().map(|(text, _)| text).collect(),
            correct,
            degenerate,
            meta: TaskMeta::Path { a, b, long },
        });
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Full task sets and the oracle answerer
// ---------------------------------------------------------------------------

/// All 24 items for one map: 8 DJ, 4 DS, 4 PJ, 4 PDR, 4 PP, with ids
/// prefixed by the city slug.
pub fn generate_tasks(map: &GridMap, seed: u64) -> Result<Vec<TaskItem>, TaskError> {
    generate_tasks_with(map, seed, &GenOptions::default())
}

pub fn generate_tasks_with(
    map: &GridMap,
    seed: u64,
    opts: &GenOptions,
) -> Result<Vec<TaskItem>, TaskError> {
    let slug = crate::ingest::city_slug(map.city_name());
    let mut items = Vec::new();
    items.extend(gen_direction_items(map, seed)?);
    items.extend(gen_distance_items_with(map, seed, opts)?);
    items.extend(gen_proximity_items_with(map, seed, opts)?);
    items.extend(gen_density_items(map, seed)?);
    items.extend(gen_path_items(map, seed)?);
    for item in &mut items {
        item.id = format!("{}-{}", slug, item.id);
    }
    Ok(items)
}

/// Re-derives the correct option index from the true map: the
/// full-knowledge oracle answerer. `None` when the ground truth is not
/// unique (degenerate items) or no option matches.
pub fn recompute_answer(map: &GridMap, item: &TaskItem) -> Option<usize> {
    let expected: String = match &item.meta {
        TaskMeta::Direction { a, b, .. } => {
            let dir = oracle_direction(map.poi(*a)?.at, map.poi(*b)?.at).ok()?;
            dir.label().to_string()
        }
        TaskMeta::Distance { a, b, metric, .. } => {
            let d = pair_distance(map, *a, *b, *metric);
            let scale = distance_scale(map, *metric);
            interval_text(interval_index(d, scale), scale, *metric)
        }
        TaskMeta::Proximity {
            reference,
            alternatives,
            metric,
        } => {
            let best = alternatives.iter().copied().min_by(|&x, &y| {
                pair_distance(map, *reference, x, *metric)
                    .partial_cmp(&pair_distance(map, *reference, y, *metric))
                    .unwrap()
            })?;
            poi_phrase(map, best)
        }
        TaskMeta::Density { highest } => extreme_quadrant(map, *highest)?.text(map),
        TaskMeta::Path { a, b, .. } => {
            let best = shortest_route(map, *a, *b).ok()?;
            route_option_text(&best)
        }
    };
    item.options.iter().position(|o| *o == expected)
}

// ---------------------------------------------------------------------------
// Task files
// ---------------------------------------------------------------------------

pub fn render_tasks(items: &[TaskItem]) -> String {
    let mut out = serde_json::to_string_pretty(items).expect("tasks serialize");
    out.push('\n');
    out
}

pub fn parse_tasks(text: &str) -> Result<Vec<TaskItem>, TaskError> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_tasks(items: &[TaskItem], path: &Path) -> Result<(), TaskError> {
    std::fs::write(path, render_tasks(items))?;
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskItem>, TaskError> {
    parse_tasks(&std::fs::read_to_string(path)?)
}
