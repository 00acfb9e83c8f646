//! Spatial memory built from exploration traces: dialogue transcript (SDM),
//! deduplicated node sequence (NSM), topological graph (GM), and globally
//! positioned map memory (MM), plus hybrid bundles with bit-exact size
//! accounting.
//!
//! All four builders are pure folds over the event sequence; traces are
//! their only input. Merge rules are commutative where the final content
//! must not depend on event order (GM edge lengths min-merge, MM curves
//! keep the lexicographically smaller polyline).

use crate::explore::{EventKind, ExplorationEvent, ExplorationTrace};
use crate::mapenv::{CellKind, Compass, Coord, NodeKey, NodeKind, Observation};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("a bundle needs at least one memory part")]
    EmptyBundle,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Shared arrival view
// ---------------------------------------------------------------------------

/// Start and restart events put the agent at a POI exactly like an arrival
/// does; the builders treat all three uniformly.
fn as_arrival(kind: &EventKind) -> Option<(NodeKey, Coord, &Observation)> {
    match kind {
        EventKind::Start {
            poi,
            at,
            observation,
        }
        | EventKind::Restart {
            poi,
            at,
            observation,
        } => Some((NodeKey::poi(*poi), *at, observation)),
        EventKind::Arrive {
            node,
            at,
            observation,
        } => Some((*node, *at, observation)),
        EventKind::Traverse { .. } => None,
    }
}

/// Nodes reachable from the agent inside the observed window without
/// passing through another node: the agent's locally visible connectivity.
/// Returned in discovery order with window path lengths.
pub fn observation_adjacency(obs: &Observation) -> Vec<(NodeKey, u32)> {
    let by_offset: HashMap<(i32, i32), (&CellKind, Option<u32>)> = obs
        .entries
        .iter()
        .map(|e| (e.offset, (&e.kind, e.id)))
        .collect();
    let mut dist: HashMap<(i32, i32), u32> = HashMap::from([((0, 0), 0)]);
    let mut queue = VecDeque::from([(0i32, 0i32)]);
    let mut found = Vec::new();
    while let Some(cur) = queue.pop_front() {
        let d = dist[&cur];
        for (dc, dr) in [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ] {
            let off = (cur.0 + dc, cur.1 + dr);
            if off.0.abs() > obs.radius || off.1.abs() > obs.radius {
                continue;
            }
            if dist.contains_key(&off) {
                continue;
            }
            let Some(&(kind, id)) = by_offset.get(&off) else {
                continue;
            };
            dist.insert(off, d + 1);
            match kind {
                CellKind::Road => queue.push_back(off),
                CellKind::Poi => {
                    if let Some(id) = id {
                        found.push((NodeKey::poi(id), d + 1));
                    }
                }
                CellKind::Intersection => {
                    if let Some(id) = id {
                        found.push((NodeKey::intersection(id), d + 1));
                    }
                }
                CellKind::Background => {}
            }
        }
    }
    found
}

/// Compass directions of road cells directly adjacent to the agent.
fn road_exits(obs: &Observation) -> Vec<Compass> {
    Compass::ALL
        .into_iter()
        .filter(|d| {
            let (dc, dr) = d.delta();
            obs.entry_at((dc, dr))
                .map(|e| e.kind.is_navigable())
                .unwrap_or(false)
        })
        .collect()
}

/// Tracks the route currently being walked so builders can attribute
/// arrivals to it.
#[derive(Debug, Clone, PartialEq)]
struct PendingRoute {
    cells: Vec<Coord>,
    via: Vec<u32>,
    origin: Option<NodeKey>,
    last_node: Option<NodeKey>,
    last_index: usize,
}

impl PendingRoute {
    fn advance_to(&mut self, at: Coord) -> Option<usize> {
        let offset = self
            .cells
            .iter()
            .skip(self.last_index + 1)
            .position(|&c| c == at)?;
        let index = self.last_index + 1 + offset;
        self.last_index = index;
        Some(index)
    }

    fn end(&self) -> Coord {
        *self.cells.last().unwrap()
    }
}

// ---------------------------------------------------------------------------
// SDM: dialogue transcript
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Narrator,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueMessage {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogueMemory {
    pub messages: Vec<DialogueMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct SdmOptions {
    /// When set, the agent acknowledges each arrival with a fixed reply.
    /// Off by default so memory content stays model-independent.
    pub agent_acknowledgments: bool,
}

fn node_phrase(node: NodeKey, obs: &Observation) -> String {
    match node.kind {
        NodeKind::Poi => {
            let name = obs
                .entry_at((0, 0))
                .and_then(|e| e.name.as_deref())
                .unwrap_or("unnamed");
            format!("{} ({})", name, node)
        }
        NodeKind::Intersection => format!("intersection {}", node),
    }
}

fn offset_phrase((dc, dr): (i32, i32)) -> String {
    format!("({:+},{:+})", dc, dr)
}

fn seen_phrase(obs: &Observation) -> String {
    let seen: Vec<String> = obs
        .entries
        .iter()
        .filter(|e| e.id.is_some() && e.offset != (0, 0))
        .map(|e| match e.kind {
            CellKind::Poi => format!("P{} at {}", e.id.unwrap(), offset_phrase(e.offset)),
            _ => format!("I{} at {}", e.id.unwrap(), offset_phrase(e.offset)),
        })
        .collect();
    let roads: Vec<&str> = road_exits(obs).into_iter().map(|d| d.label()).collect();
    let mut out = String::new();
    if seen.is_empty() {
        out.push_str(" No other POI or intersection is in sight.");
    } else {
        out.push_str(&format!(" You can see {}.", seen.join(", ")));
    }
    if !roads.is_empty() {
        out.push_str(&format!(" Roads lead {}.", roads.join(", ")));
    }
    out
}

/// Template version 1: one narration per event, byte-stable.
fn narrate(kind: &EventKind) -> String {
    match kind {
        EventKind::Start {
            poi,
            at,
            observation,
        } => {
            let key = NodeKey::poi(*poi);
            format!(
                "You begin at {} at {}.{}",
                node_phrase(key, observation),
                at,
                seen_phrase(observation)
            )
        }
        EventKind::Arrive {
            node,
            at,
            observation,
        } => format!(
            "You arrive at {} at {}.{}",
            node_phrase(*node, observation),
            at,
            seen_phrase(observation)
        ),
        EventKind::Traverse { route } => {
            if route.via_intersections.is_empty() {
                format!("You travel {} moves along the road.", route.length())
            } else {
                format!(
                    "You travel {} moves along the road, passing {}.",
                    route.length(),
                    route
                        .via_intersections
                        .iter()
                        .map(|id| format!("I{}", id))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            }
        }
        EventKind::Restart {
            poi,
            at,
            observation,
        } => {
            let key = NodeKey::poi(*poi);
            format!(
                "No unexplored POI is in sight, so you start over from {} at {}.{}",
                node_phrase(key, observation),
                at,
                seen_phrase(observation)
            )
        }
    }
}

/// Builds the dialogue memory: exactly one narrator message per trace
/// event, in event order.
pub fn build_sdm(trace: &ExplorationTrace, opts: &SdmOptions) -> DialogueMemory {
    let mut messages = Vec::new();
    for ev in &trace.events {
        messages.push(DialogueMessage {
            role: Role::Narrator,
            text: narrate(&ev.kind),
        });
        if opts.agent_acknowledgments && as_arrival(&ev.kind).is_some() {
            messages.push(DialogueMessage {
                role: Role::Agent,
                text: "Noted.".to_string(),
            });
        }
    }
    DialogueMemory { messages }
}

// ---------------------------------------------------------------------------
// NSM: deduplicated chronological node and route records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: NodeKey,
    pub at: Coord,
    /// POI name, when the node is a POI.
    pub name: Option<String>,
    /// Nodes visible in the window at first arrival, with their relative
    /// offsets, in window order.
    pub sees: Vec<(NodeKey, (i32, i32))>,
    pub road_exits: Vec<Compass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub from: u32,
    pub to: u32,
    pub moves: usize,
    pub via: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeSequenceMemory {
    pub node_records: Vec<NodeRecord>,
    pub route_records: Vec<RouteRecord>,
    seen_nodes: BTreeSet<NodeKey>,
    seen_routes: BTreeSet<(u32, u32)>,
    pending: Option<PendingRoute>,
    known: BTreeMap<Coord, NodeKey>,
}

/// Applies one event: unseen arrivals append a node record frozen at first
/// sight, new POI-to-POI traversals append a route record, repeats change
/// nothing.
pub fn update_nsm(memory: &mut NodeSequenceMemory, event: &ExplorationEvent) {
    if let EventKind::Traverse { route } = &event.kind {
        let origin = memory.known.get(&route.cells[0]).copied();
        memory.pending = Some(PendingRoute {
            cells: route.cells.clone(),
            via: route.via_intersections.clone(),
            origin,
            last_node: origin,
            last_index: 0,
        });
        return;
    }
    let Some((node, at, obs)) = as_arrival(&event.kind) else {
        return;
    };
    if !matches!(event.kind, EventKind::Arrive { .. }) {
        memory.pending = None;
    }
    memory.known.insert(at, node);
    if memory.seen_nodes.insert(node) {
        let sees = obs
            .entries
            .iter()
            .filter(|e| e.offset != (0, 0))
            .filter_map(|e| match (e.kind, e.id) {
                (CellKind::Poi, Some(id)) => Some((NodeKey::poi(id), e.offset)),
                (CellKind::Intersection, Some(id)) => Some((NodeKey::intersection(id), e.offset)),
                _ => None,
            })
            .collect();
        let name = match node.kind {
            NodeKind::Poi => obs.entry_at((0, 0)).and_then(|e| e.name.clone()),
            NodeKind::Intersection => None,
        };
        memory.node_records.push(NodeRecord {
            node,
            at,
            name,
            sees,
            road_exits: road_exits(obs),
        });
    }
    if let Some(pending) = memory.pending.as_mut() {
        if pending.advance_to(at).is_some() && at == pending.end() && node.kind == NodeKind::Poi {
            if let Some(origin) = pending.origin {
                if origin.kind == NodeKind::Poi && origin.id != node.id {
                    let pair = (origin.id, node.id);
                    if memory.seen_routes.insert(pair) {
                        memory.route_records.push(RouteRecord {
                            from: origin.id,
                            to: node.id,
                            moves: pending.cells.len() - 1,
                            via: pending.via.clone(),
                        });
                    }
                }
            }
            memory.pending = None;
        }
    }
}

pub fn build_nsm(trace: &ExplorationTrace) -> NodeSequenceMemory {
    let mut memory = NodeSequenceMemory::default();
    for ev in &trace.events {
        update_nsm(&mut memory, ev);
    }
    memory
}

// ---------------------------------------------------------------------------
// GM: incremental topological graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphMemory {
    pub nodes: BTreeSet<NodeKey>,
    /// Unordered edges keyed (smaller, larger) with best-known move length.
    pub edges: BTreeMap<(NodeKey, NodeKey), u32>,
    pending: Option<PendingRoute>,
    known: BTreeMap<Coord, NodeKey>,
}

impl GraphMemory {
    fn insert_edge(&mut self, a: NodeKey, b: NodeKey, len: u32) {
        if a == b {
            return;
        }
        let key = if a <= b { (a, b) } else { (b, a) };
        self.nodes.insert(a);
        self.nodes.insert(b);
        // Min-merge keeps the content independent of discovery order.
        self.edges
            .entry(key)
            .and_modify(|v| *v = (*v).min(len))
            .or_insert(len);
    }
}

/// Applies one event: arrivals insert the node and merge its locally
/// observed connectivity, traversals insert edges between consecutive
/// route nodes annotated with move counts.
pub fn update_gm(memory: &mut GraphMemory, event: &ExplorationEvent) {
    if let EventKind::Traverse { route } = &event.kind {
        let origin = memory.known.get(&route.cells[0]).copied();
        memory.pending = Some(PendingRoute {
            cells: route.cells.clone(),
            via: Vec::new(),
            origin,
            last_node: origin,
            last_index: 0,
        });
        return;
    }
    let Some((node, at, obs)) = as_arrival(&event.kind) else {
        return;
    };
    if !matches!(event.kind, EventKind::Arrive { .. }) {
        memory.pending = None;
    }
    memory.known.insert(at, node);
    memory.nodes.insert(node);
    for (neighbor, len) in observation_adjacency(obs) {
        memory.insert_edge(node, neighbor, len);
    }
    let mut new_edge = None;
    let mut finished = false;
    if let Some(pending) = memory.pending.as_mut() {
        let last_index = pending.last_index;
        if let Some(index) = pending.advance_to(at) {
            let hop = (index - last_index) as u32;
            if let Some(prev) = pending.last_node {
                new_edge = Some((prev, node, hop));
            }
            pending.last_node = Some(node);
            finished = at == pending.end();
        }
    }
    if let Some((a, b, len)) = new_edge {
        memory.insert_edge(a, b, len);
    }
    if finished {
        memory.pending = None;
    }
}

pub fn build_gm(trace: &ExplorationTrace) -> GraphMemory {
    let mut memory = GraphMemory::default();
    for ev in &trace.events {
        update_gm(&mut memory, ev);
    }
    memory
}

// ---------------------------------------------------------------------------
// MM: globally positioned nodes and road curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedNode {
    pub at: Coord,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapMemory {
    pub placed_nodes: BTreeMap<NodeKey, PlacedNode>,
    /// Full cell polylines keyed by unordered node pair, oriented from the
    /// smaller node to the larger.
    pub curves: BTreeMap<(NodeKey, NodeKey), Vec<Coord>>,
    pending: Option<PendingRoute>,
    known: BTreeMap<Coord, NodeKey>,
}

impl MapMemory {
    fn insert_curve(&mut self, a: NodeKey, b: NodeKey, cells: &[Coord]) {
        if a == b || cells.len() < 2 {
            return;
        }
        let (key, oriented) = if a <= b {
            ((a, b), cells.to_vec())
        } else {
            ((b, a), cells.iter().rev().copied().collect())
        };
        // Keep the lexicographically smaller polyline so the final content
        // does not depend on which direction was walked first.
        match self.curves.get(&key) {
            Some(existing) if *existing <= oriented => {}
            _ => {
                self.curves.insert(key, oriented);
            }
        }
    }

    /// Every cell covered by placed nodes and stored curves.
    pub fn rendered_cells(&self) -> BTreeSet<Coord> {
        let mut cells: BTreeSet<Coord> =
            self.placed_nodes.values().map(|p| p.at).collect();
        for curve in self.curves.values() {
            cells.extend(curve.iter().copied());
        }
        cells
    }
}

/// Applies one event: first arrivals place the node at its exact coordinate
/// with a semantic label, completed POI-to-POI traversals store the route's
/// full cell polyline for that node pair.
pub fn update_mm(memory: &mut MapMemory, event: &ExplorationEvent) {
    if let EventKind::Traverse { route } = &event.kind {
        let origin = memory.known.get(&route.cells[0]).copied();
        memory.pending = Some(PendingRoute {
            cells: route.cells.clone(),
            via: Vec::new(),
            origin,
            last_node: origin,
            last_index: 0,
        });
        return;
    }
    let Some((node, at, obs)) = as_arrival(&event.kind) else {
        return;
    };
    if !matches!(event.kind, EventKind::Arrive { .. }) {
        memory.pending = None;
    }
    memory.known.insert(at, node);
    memory.placed_nodes.entry(node).or_insert_with(|| {
        let label = match node.kind {
            NodeKind::Poi => obs
                .entry_at((0, 0))
                .and_then(|e| e.name.clone())
                .unwrap_or_default(),
            NodeKind::Intersection => String::new(),
        };
        PlacedNode { at, label }
    });
    if let Some(pending) = memory.pending.as_mut() {
        if pending.advance_to(at).is_some() && at == pending.end() && node.kind == NodeKind::Poi {
            if let Some(origin) = pending.origin {
                let cells = pending.cells.clone();
                memory.insert_curve(origin, node, &cells);
            }
            memory.pending = None;
        }
    }
}

pub fn build_mm(trace: &ExplorationTrace) -> MapMemory {
    let mut memory = MapMemory::default();
    for ev in &trace.events {
        update_mm(&mut memory, ev);
    }
    memory
}

// ---------------------------------------------------------------------------
// Serialization and bundles
// ---------------------------------------------------------------------------

pub const MEMFMT_VERSION: &str = "v1";

fn header(kind: &str) -> String {
    format!("MEMFMT {} {}\n", MEMFMT_VERSION, kind)
}

pub fn serialize_sdm(memory: &DialogueMemory) -> String {
    let mut out = header("SDM");
    for m in &memory.messages {
        let role = match m.role {
            Role::Narrator => "narrator",
            Role::Agent => "agent",
        };
        out.push_str(role);
        out.push_str(": ");
        out.push_str(&m.text);
        out.push('\n');
    }
    out
}

pub fn serialize_nsm(memory: &NodeSequenceMemory) -> String {
    let mut out = header("NSM");
    for rec in &memory.node_records {
        out.push_str(&format!("N {}", rec.node));
        if let Some(name) = &rec.name {
            out.push(' ');
            out.push_str(name);
        }
        out.push_str(&format!(" {}", rec.at));
        if !rec.sees.is_empty() {
            let sees: Vec<String> = rec
                .sees
                .iter()
                .map(|(k, off)| format!("{}{}", k, offset_phrase(*off)))
                .collect();
            out.push_str(&format!(" sees:{}", sees.join(",")));
        }
        if !rec.road_exits.is_empty() {
            let roads: Vec<&str> = rec.road_exits.iter().map(|d| d.label()).collect();
            out.push_str(&format!(" roads:{}", roads.join(",")));
        }
        out.push('\n');
    }
    for rec in &memory.route_records {
        let via: Vec<String> = rec.via.iter().map(|id| format!("I{}", id)).collect();
        if via.is_empty() {
            out.push_str(&format!(
                "R P{}>P{} moves:{} direct\n",
                rec.from, rec.to, rec.moves
            ));
        } else {
            out.push_str(&format!(
                "R P{}>P{} moves:{} via:{}\n",
                rec.from,
                rec.to,
                rec.moves,
                via.join(",")
            ));
        }
    }
    out
}

pub fn serialize_gm(memory: &GraphMemory) -> String {
    let mut out = header("GM");
    for &node in &memory.nodes {
        let mut neighbors: Vec<(NodeKey, u32)> = memory
            .edges
            .iter()
            .filter_map(|(&(a, b), &len)| {
                if a == node {
                    Some((b, len))
                } else if b == node {
                    Some((a, len))
                } else {
                    None
                }
            })
            .collect();
        neighbors.sort();
        let rendered: Vec<String> = neighbors
            .iter()
            .map(|(k, len)| format!("{}({})", k, len))
            .collect();
        out.push_str(&format!("{}: {}\n", node, rendered.join(" ")));
    }
    out
}

fn curve_moves(cells: &[Coord]) -> String {
    cells
        .windows(2)
        .map(|w| {
            Compass::from_delta(w[1].col - w[0].col, w[1].row - w[0].row)
                .map(|d| d.code())
                .unwrap_or("?")
        })
        .collect()
}

pub fn serialize_mm(memory: &MapMemory) -> String {
    let mut out = header("MM");
    for (node, placed) in &memory.placed_nodes {
        let kind = match node.kind {
            NodeKind::Poi => "poi",
            NodeKind::Intersection => "x",
        };
        let label = if placed.label.is_empty() {
            "-"
        } else {
            placed.label.as_str()
        };
        out.push_str(&format!("N {} {} {} {}\n", node, kind, placed.at, label));
    }
    for ((a, b), cells) in &memory.curves {
        out.push_str(&format!(
            "C {}-{} {} {}\n",
            a,
            b,
            cells[0],
            curve_moves(cells)
        ));
    }
    out
}

/// One of the three structured memories.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredMemory {
    Nsm(NodeSequenceMemory),
    Gm(GraphMemory),
    Mm(MapMemory),
}

impl StructuredMemory {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StructuredMemory::Nsm(_) => "NSM",
            StructuredMemory::Gm(_) => "GM",
            StructuredMemory::Mm(_) => "MM",
        }
    }

    pub fn serialize(&self) -> String {
        match self {
            StructuredMemory::Nsm(m) => serialize_nsm(m),
            StructuredMemory::Gm(m) => serialize_gm(m),
            StructuredMemory::Mm(m) => serialize_mm(m),
        }
    }
}

/// Which memory representation(s) a bundle carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryKind {
    #[serde(rename = "SDM")]
    Sdm,
    #[serde(rename = "NSM")]
    Nsm,
    #[serde(rename = "GM")]
    Gm,
    #[serde(rename = "MM")]
    Mm,
    #[serde(rename = "NSM+SDM")]
    NsmSdm,
    #[serde(rename = "GM+SDM")]
    GmSdm,
    #[serde(rename = "MM+SDM")]
    MmSdm,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 7] = [
        MemoryKind::Sdm,
        MemoryKind::Nsm,
        MemoryKind::Gm,
        MemoryKind::Mm,
        MemoryKind::NsmSdm,
        MemoryKind::GmSdm,
        MemoryKind::MmSdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MemoryKind::Sdm => "SDM",
            MemoryKind::Nsm => "NSM",
            MemoryKind::Gm => "GM",
            MemoryKind::Mm => "MM",
            MemoryKind::NsmSdm => "NSM+SDM",
            MemoryKind::GmSdm => "GM+SDM",
            MemoryKind::MmSdm => "MM+SDM",
        }
    }

    pub fn from_name(name: &str) -> Option<MemoryKind> {
        MemoryKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn includes_dialogue(self) -> bool {
        matches!(
            self,
            MemoryKind::Sdm | MemoryKind::NsmSdm | MemoryKind::GmSdm | MemoryKind::MmSdm
        )
    }

    /// The structured component, if the kind has one.
    pub fn structured(self) -> Option<MemoryKind> {
        match self {
            MemoryKind::Nsm | MemoryKind::NsmSdm => Some(MemoryKind::Nsm),
            MemoryKind::Gm | MemoryKind::GmSdm => Some(MemoryKind::Gm),
            MemoryKind::Mm | MemoryKind::MmSdm => Some(MemoryKind::Mm),
            _ => None,
        }
    }
}

impl std::fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed separator between the structured and dialogue blocks of a hybrid.
pub const HYBRID_SEPARATOR: &str = "---\n";

/// A serialized memory with bit-exact size accounting: 8 bits per UTF-8
/// byte of the canonical serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBundle {
    pub kind: MemoryKind,
    pub serialized: String,
    pub size_bits: u64,
}

/// Canonical bundle text: structured block, then dialogue block, separated
/// by [`HYBRID_SEPARATOR`] when both are present.
pub fn serialize_bundle(
    structured: Option<&StructuredMemory>,
    dialogue: Option<&DialogueMemory>,
) -> Result<MemoryBundle, MemoryError> {
    let kind = match (&structured, &dialogue) {
        (None, None) => return Err(MemoryError::EmptyBundle),
        (Some(s), None) => MemoryKind::from_name(s.kind_name()).unwrap(),
        (None, Some(_)) => MemoryKind::Sdm,
        (Some(s), Some(_)) => match s {
            StructuredMemory::Nsm(_) => MemoryKind::NsmSdm,
            StructuredMemory::Gm(_) => MemoryKind::GmSdm,
            StructuredMemory::Mm(_) => MemoryKind::MmSdm,
        },
    };
    let mut serialized = String::new();
    if let Some(s) = &structured {
        serialized.push_str(&s.serialize());
    }
    if let Some(d) = &dialogue {
        if structured.is_some() {
            serialized.push_str(HYBRID_SEPARATOR);
        }
        serialized.push_str(&serialize_sdm(d));
    }
    let size_bits = serialized.len() as u64 * 8;
    Ok(MemoryBundle {
        kind,
        serialized,
        size_bits,
    })
}

/// Builds the requested memory kind from a trace.
pub fn build_bundle(
    trace: &ExplorationTrace,
    kind: MemoryKind,
    opts: &SdmOptions,
) -> MemoryBundle {
    let structured = kind.structured().map(|s| match s {
        MemoryKind::Nsm => StructuredMemory::Nsm(build_nsm(trace)),
        MemoryKind::Gm => StructuredMemory::Gm(build_gm(trace)),
        MemoryKind::Mm => StructuredMemory::Mm(build_mm(trace)),
        _ => unreachable!(),
    });
    let dialogue = kind.includes_dialogue().then(|| build_sdm(trace, opts));
    serialize_bundle(structured.as_ref(), dialogue.as_ref()).expect("kind has at least one part")
}

/// Manifest describing a bundle written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub kinds: Vec<String>,
    pub size_bits: u64,
    pub trace_ref: String,
}

impl BundleManifest {
    pub fn for_bundle(bundle: &MemoryBundle, trace_ref: &str) -> Self {
        let kinds = match bundle.kind.structured() {
            Some(s) if bundle.kind.includes_dialogue() => {
                vec![s.name().to_string(), "SDM".to_string()]
            }
            Some(s) => vec![s.name().to_string()],
            None => vec!["SDM".to_string()],
        };
        BundleManifest {
            kinds,
            size_bits: bundle.size_bits,
            trace_ref: trace_ref.to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
