//! Synthetic navigation worlds: connected geometric graphs whose nodes
//! carry panoramic views and visible objects, instruction templating
//! with phrase spans recorded at assembly time, deterministic shortest
//! paths, and episode metrics.
//!
//! Everything is driven by explicit seeds. The same seed always yields
//! the same world bytes, the same tasks, and the same instruction text.

use std::collections::{BTreeSet, BinaryHeap};
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asv::{NodeObservation, ObjectObs, ViewObs, OBJECT_SCALARS};
use crate::error::{Error, Result};
use crate::semparse::{tokenize, Lexicon, PhraseKind, PhraseMatch, Vocab};

/// Stopping within this geodesic distance of the goal counts as success.
pub const SUCCESS_RADIUS: f64 = 1.0;

/// Bearing changes within this many degrees read as going straight;
/// larger counterclockwise changes read as left turns, clockwise as
/// right turns.
pub const STRAIGHT_DEGREES: f64 = 30.0;

/// Bearing changes at least this large read as turning around.
pub const REVERSE_DEGREES: f64 = 150.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A generator whose stream depends only on the four values, so callers
/// can draw from independent streams without threading generator state.
pub fn derived_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    s = splitmix64(s ^ tag);
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    ChaCha8Rng::seed_from_u64(s)
}

const TAG_VIEW_FEATURES: u64 = 0x76;
const TAG_CATEGORY_SIGNATURE: u64 = 0x63;

/// Folds an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

/// Sizing knobs for world generation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WorldGenConfig {
    pub nodes: usize,
    pub views: usize,
    /// Edges are added until mean degree reaches this.
    pub avg_degree: f64,
    /// Raw visual feature width per view.
    pub d_v: usize,
    /// Smaller distractor objects scattered on each node.
    pub decoy_objects: usize,
}

impl Default for WorldGenConfig {
    fn default() -> WorldGenConfig {
        WorldGenConfig {
            nodes: 16,
            views: 6,
            avg_degree: 2.5,
            d_v: 24,
            decoy_objects: 2,
        }
    }
}

/// One object placed on a node, visible through one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub category: String,
    /// Id of `category` in the world's label vocabulary.
    pub label: usize,
    /// View through which the object is seen.
    pub view: usize,
    pub scalars: [f64; OBJECT_SCALARS],
}

/// One navigable position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub x: f64,
    pub y: f64,
    pub objects: Vec<SimObject>,
    /// Index into `objects` of the node's most prominent object; its
    /// category is the grounding target when this node is a goal.
    pub salient: usize,
}

/// A connected world of positioned nodes with panoramas and objects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct World {
    seed: u64,
    views: usize,
    d_v: usize,
    nodes: Vec<SimNode>,
    adjacency: Vec<Vec<usize>>,
    features: Vec<Vec<Vec<f64>>>,
    label_vocab: Vocab,
}

impl World {
    /// Builds a world from explicit parts and validates every
    /// structural invariant.
    pub fn from_parts(
        seed: u64,
        views: usize,
        d_v: usize,
        nodes: Vec<SimNode>,
        edges: &[(usize, usize)],
        features: Vec<Vec<Vec<f64>>>,
        label_vocab: Vocab,
    ) -> Result<World> {
        if views < 2 {
            return Err(Error::contract("a world needs at least 2 views per node"));
        }
        if nodes.len() < 2 {
            return Err(Error::contract("a world needs at least 2 nodes"));
        }
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::contract(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::contract(format!("edge ({a}, {b}) is a self-loop")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::contract(format!(
                    "edge ({}, {}) appears more than once",
                    key.0, key.1
                )));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let world = World {
            seed,
            views,
            d_v,
            nodes,
            adjacency,
            features,
            label_vocab,
        };
        world.validate()?;
        Ok(world)
    }

    /// Checks structural invariants; loading paths call this on data
    /// read from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.features.len() != n {
            return Err(Error::contract(format!(
                "feature table has {} nodes, world has {n}",
                self.features.len()
            )));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let per_view = &self.features[i];
            if per_view.len() != self.views {
                return Err(Error::contract(format!(
                    "node {i} has {} feature rows, expected {}",
                    per_view.len(),
                    self.views
                )));
            }
            for (v, feat) in per_view.iter().enumerate() {
                if feat.len() != self.d_v {
                    return Err(Error::contract(format!(
                        "node {i} view {v} has {} features, expected {}",
                        feat.len(),
                        self.d_v
                    )));
                }
                if feat.iter().any(|x| !x.is_finite()) {
                    return Err(Error::contract(format!(
                        "node {i} view {v} has a non-finite feature"
                    )));
                }
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(Error::contract(format!("node {i} has a non-finite position")));
            }
            if node.objects.is_empty() {
                return Err(Error::contract(format!("node {i} has no objects")));
            }
            if node.salient >= node.objects.len() {
                return Err(Error::contract(format!(
                    "node {i} salient index {} out of range",
                    node.salient
                )));
            }
            for (o, obj) in node.objects.iter().enumerate() {
                if obj.view >= self.views {
                    return Err(Error::contract(format!(
                        "node {i} object {o} sits in view {} of {}",
                        obj.view, self.views
                    )));
                }
                if self.label_vocab.item(obj.label).ok() != Some(obj.category.as_str()) {
                    return Err(Error::contract(format!(
                        "node {i} object {o} label id does not match its category"
                    )));
                }
            }
        }
        let mut reached = vec![false; n];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !reached[v] {
                    reached[v] = true;
                    stack.push(v);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(Error::contract("world graph is not connected"));
        }
        Ok(())
    }

    /// Generates a world: node positions uniform over a square whose
    /// side grows with the square root of the node count, a chain of
    /// nearest-previous-node edges for connectivity, then the shortest
    /// remaining pairs as extra edges until the mean degree target,
    /// one prominent goal-eligible object per node plus smaller decoys,
    /// and per-view features that mix node-specific noise with additive
    /// per-category signatures of the objects in view.
    pub fn generate(cfg: &WorldGenConfig, seed: u64, lexicon: &Lexicon) -> Result<World> {
        if cfg.nodes < 4 {
            return Err(Error::Config("world needs at least 4 nodes".into()));
        }
        if cfg.views < 2 || cfg.d_v == 0 {
            return Err(Error::Config("world needs views >= 2 and d_v >= 1".into()));
        }
        let goal_cats = lexicon.goal_categories();
        if goal_cats.is_empty() {
            return Err(Error::Config("lexicon has no goal-eligible categories".into()));
        }
        let all_cats: Vec<String> = lexicon.categories().to_vec();
        let label_vocab = Vocab::closed(all_cats.iter().cloned());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.nodes;
        let side = (n as f64).sqrt();
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side)))
            .collect();

        let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut connected: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 1..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..i {
                let d = dist(positions[i], positions[j]);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            edges.push((best.min(i), best.max(i)));
            connected.insert((best.min(i), best.max(i)));
        }
        let target_edges = ((n as f64 * cfg.avg_degree) / 2.0).ceil() as usize;
        let mut rest: Vec<(f64, usize, usize)> = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if !connected.contains(&(a, b)) {
                    rest.push((dist(positions[a], positions[b]), a, b));
                }
            }
        }
        rest.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (_, a, b) in rest {
            if edges.len() >= target_edges {
                break;
            }
            edges.push((a, b));
        }

        let mut nodes = Vec::with_capacity(n);
        for (x, y) in &positions {
            let mut objects = Vec::new();
            let category = goal_cats[rng.random_range(0..goal_cats.len())].clone();
            let label = label_vocab.id(&category)?;
            let view = rng.random_range(0..cfg.views);
            let area = 0.6 + rng.random_range(0.0..0.3);
            objects.push(SimObject {
                category,
                label,
                view,
                scalars: object_scalars(&mut rng, area),
            });
            for _ in 0..cfg.decoy_objects {
                let category = all_cats[rng.random_range(0..all_cats.len())].clone();
                let label = label_vocab.id(&category)?;
                let view = rng.random_range(0..cfg.views);
                let area = 0.05 + rng.random_range(0.0..0.45);
                objects.push(SimObject {
                    category,
                    label,
                    view,
                    scalars: object_scalars(&mut rng, area),
                });
            }
            nodes.push(SimNode {
                x: *x,
                y: *y,
                objects,
                salient: 0,
            });
        }

        let mut features = Vec::with_capacity(n);
        for (i, node) in nodes.iter().enumerate() {
            let mut per_view = Vec::with_capacity(cfg.views);
            for v in 0..cfg.views {
                let mut f_rng = derived_rng(seed, TAG_VIEW_FEATURES, i as u64, v as u64);
                let mut feat: Vec<f64> =
                    (0..cfg.d_v).map(|_| f_rng.random_range(-1.0..1.0)).collect();
                let cats_here: BTreeSet<usize> = node
                    .objects
                    .iter()
                    .filter(|o| o.view == v)
                    .map(|o| o.label)
                    .collect();
                for label in cats_here {
                    let mut s_rng =
                        derived_rng(seed, TAG_CATEGORY_SIGNATURE, label as u64, 0);
                    for slot in feat.iter_mut() {
                        *slot += s_rng.random_range(-1.0..1.0);
                    }
                }
                per_view.push(feat);
            }
            features.push(per_view);
        }

        World::from_parts(seed, cfg.views, cfg.d_v, nodes, &edges, features, label_vocab)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn views_per_node(&self) -> usize {
        self.views
    }

    pub fn feature_dim(&self) -> usize {
        self.d_v
    }

    pub fn node(&self, id: usize) -> Result<&SimNode> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::contract(format!("node {id} out of range")))
    }

    /// Neighbor ids, ascending.
    pub fn neighbors(&self, id: usize) -> Result<&[usize]> {
        self.adjacency
            .get(id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::contract(format!("node {id} out of range")))
    }

    pub fn label_vocab(&self) -> &Vocab {
        &self.label_vocab
    }

    /// The node's most prominent object.
    pub fn salient(&self, id: usize) -> Result<&SimObject> {
        let node = self.node(id)?;
        Ok(&node.objects[node.salient])
    }

    /// Straight-line distance between two nodes.
    pub fn euclid(&self, a: usize, b: usize) -> Result<f64> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        Ok(((na.x - nb.x).powi(2) + (na.y - nb.y).powi(2)).sqrt())
    }

    /// Direction of travel from `a` to `b`, radians counterclockwise
    /// from the positive x axis.
    pub fn bearing(&self, a: usize, b: usize) -> Result<f64> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        Ok((nb.y - na.y).atan2(nb.x - na.x))
    }

    /// Center heading of a view.
    pub fn view_heading(&self, view: usize) -> f64 {
        TAU * view as f64 / self.views as f64
    }

    /// The view of `from` that looks most directly at `to`; angular
    /// ties resolve to the lower view index.
    pub fn view_facing(&self, from: usize, to: usize) -> Result<usize> {
        let b = self.bearing(from, to)?;
        let mut best = 0;
        let mut best_gap = f64::INFINITY;
        for v in 0..self.views {
            let gap = wrap_angle(b - self.view_heading(v)).abs();
            if gap < best_gap {
                best_gap = gap;
                best = v;
            }
        }
        Ok(best)
    }

    /// `[sin, cos, sin, cos]` of heading toward `to` and elevation
    /// (always level here).
    pub fn rel_angles(&self, from: usize, to: usize) -> Result<[f64; 4]> {
        let b = self.bearing(from, to)?;
        Ok([b.sin(), b.cos(), 0.0, 1.0])
    }

    /// Panorama observation at a node.
    pub fn observation(&self, id: usize) -> Result<NodeObservation> {
        let node = self.node(id)?;
        let mut navigable = vec![false; self.views];
        for &nb in &self.adjacency[id] {
            navigable[self.view_facing(id, nb)?] = true;
        }
        let mut views = Vec::with_capacity(self.views);
        for (v, &nav) in navigable.iter().enumerate() {
            let h = self.view_heading(v);
            let objects = node
                .objects
                .iter()
                .filter(|o| o.view == v)
                .map(|o| ObjectObs {
                    label: o.label,
                    scalars: o.scalars,
                })
                .collect();
            views.push(ViewObs {
                features: self.features[id][v].clone(),
                rel: [h.sin(), h.cos(), 0.0, 1.0],
                navigable: nav,
                objects,
            });
        }
        Ok(NodeObservation { views })
    }

    /// Least-cost path by edge length. Equal-cost fronts settle in
    /// ascending node order and a settled node's predecessor is final,
    /// so ties always resolve to the same path.
    pub fn shortest_path(&self, start: usize, goal: usize) -> Result<(Vec<usize>, f64)> {
        self.dijkstra(start, goal, None)
    }

    /// Like [`World::shortest_path`] but confined to `allowed` nodes;
    /// both endpoints must be allowed.
    pub fn shortest_path_over(
        &self,
        start: usize,
        goal: usize,
        allowed: &BTreeSet<usize>,
    ) -> Result<(Vec<usize>, f64)> {
        if !allowed.contains(&start) || !allowed.contains(&goal) {
            return Err(Error::contract(format!(
                "endpoints ({start}, {goal}) must be in the allowed set"
            )));
        }
        self.dijkstra(start, goal, Some(allowed))
    }

    fn dijkstra(
        &self,
        start: usize,
        goal: usize,
        allowed: Option<&BTreeSet<usize>>,
    ) -> Result<(Vec<usize>, f64)> {
        let n = self.nodes.len();
        if start >= n || goal >= n {
            return Err(Error::contract(format!(
                "path endpoints ({start}, {goal}) outside 0..{n}"
            )));
        }
        #[derive(PartialEq)]
        struct Entry {
            cost: f64,
            node: usize,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Entry) -> std::cmp::Ordering {
                other
                    .cost
                    .total_cmp(&self.cost)
                    .then_with(|| other.node.cmp(&self.node))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Entry) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Entry {
            cost: 0.0,
            node: start,
        });
        while let Some(Entry { cost, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if node == goal {
                break;
            }
            for &nb in &self.adjacency[node] {
                if done[nb] || allowed.is_some_and(|set| !set.contains(&nb)) {
                    continue;
                }
                let cand = cost + self.euclid(node, nb)?;
                if cand < dist[nb] {
                    dist[nb] = cand;
                    pred[nb] = node;
                    heap.push(Entry {
                        cost: cand,
                        node: nb,
                    });
                }
            }
        }
        if !dist[goal].is_finite() {
            return Err(Error::contract(format!("no path from {start} to {goal}")));
        }
        let mut path = vec![goal];
        let mut cur = goal;
        while cur != start {
            cur = pred[cur];
            path.push(cur);
        }
        path.reverse();
        Ok((path, dist[goal]))
    }

    /// Shortest-path cost alone.
    pub fn geodesic(&self, a: usize, b: usize) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        Ok(self.shortest_path(a, b)?.1)
    }

    /// Total length of a node sequence; consecutive nodes must be
    /// adjacent.
    pub fn path_length(&self, path: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for w in path.windows(2) {
            if !self.adjacency[w[0]].contains(&w[1]) {
                return Err(Error::contract(format!(
                    "nodes {} and {} are not adjacent",
                    w[0], w[1]
                )));
            }
            total += self.euclid(w[0], w[1])?;
        }
        Ok(total)
    }
}

fn object_scalars(rng: &mut ChaCha8Rng, area: f64) -> [f64; OBJECT_SCALARS] {
    let phi = rng.random_range(-PI..PI);
    [
        area,
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
        rng.random_range(0.5..3.0),
        phi.sin(),
        phi.cos(),
    ]
}

/// Sizing knobs for task generation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaskGenConfig {
    pub count: usize,
    pub min_hops: usize,
    pub max_hops: usize,
}

impl Default for TaskGenConfig {
    fn default() -> TaskGenConfig {
        TaskGenConfig {
            count: 20,
            min_hops: 2,
            max_hops: 5,
        }
    }
}

/// One navigation episode: start, goal, reference path, and the
/// instruction with the phrase spans it was assembled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub start: usize,
    pub goal: usize,
    pub path: Vec<usize>,
    pub instruction: String,
    pub goal_category: String,
    pub gold_directions: Vec<PhraseMatch>,
    pub gold_landmarks: Vec<PhraseMatch>,
}

struct InstructionBuilder {
    text: String,
    directions: Vec<PhraseMatch>,
    landmarks: Vec<PhraseMatch>,
}

impl InstructionBuilder {
    fn new() -> InstructionBuilder {
        InstructionBuilder {
            text: String::new(),
            directions: Vec::new(),
            landmarks: Vec::new(),
        }
    }

    fn push(&mut self, words: &str) {
        if !self.text.is_empty() && words != "," && words != "." {
            self.text.push(' ');
        }
        self.text.push_str(words);
    }

    fn phrase(&mut self, surface: &str, kind: PhraseKind, label: &str) {
        let start = tokenize(&self.text).len();
        let toks = tokenize(surface);
        self.push(surface);
        let m = PhraseMatch {
            start,
            end: start + toks.len(),
            surface: toks.join(" "),
            label: label.to_string(),
        };
        match kind {
            PhraseKind::Direction => self.directions.push(m),
            PhraseKind::Landmark => self.landmarks.push(m),
        }
    }
}

const STRAIGHT_SURFACES: [&str; 3] = ["go straight", "go forward", "continue"];
const CONNECTORS: [&str; 3] = ["to the", "past the", "toward the"];

fn direction_surface(rng: &mut ChaCha8Rng, prev: Option<f64>, next: f64) -> &'static str {
    let straight = |rng: &mut ChaCha8Rng| STRAIGHT_SURFACES[rng.random_range(0..3)];
    match prev {
        None => straight(rng),
        Some(p) => {
            let delta = wrap_angle(next - p).to_degrees();
            if delta.abs() <= STRAIGHT_DEGREES {
                straight(rng)
            } else if delta.abs() >= REVERSE_DEGREES {
                "turn around"
            } else if delta > 0.0 {
                "turn left"
            } else {
                "turn right"
            }
        }
    }
}

/// Generates `cfg.count` tasks over start/goal pairs whose reference
/// path length in hops lies within the configured range. Instructions
/// describe the reference path hop by hop and end by naming the goal
/// node's prominent object; every direction and landmark phrase span is
/// recorded as it is written.
pub fn generate_tasks(
    world: &World,
    lexicon: &Lexicon,
    cfg: &TaskGenConfig,
    seed: u64,
) -> Result<Vec<Task>> {
    if cfg.min_hops < 1 || cfg.max_hops < cfg.min_hops {
        return Err(Error::Config(format!(
            "bad hop range {}..={}",
            cfg.min_hops, cfg.max_hops
        )));
    }
    let n = world.node_count();
    let mut pairs = Vec::new();
    for s in 0..n {
        for g in 0..n {
            if s == g {
                continue;
            }
            let (path, _) = world.shortest_path(s, g)?;
            let hops = path.len() - 1;
            if hops >= cfg.min_hops && hops <= cfg.max_hops {
                pairs.push((s, g, path));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::contract(format!(
            "no start/goal pair has a path of {}..={} hops",
            cfg.min_hops, cfg.max_hops
        )));
    }
    let mut rng = derived_rng(seed, 0x7461_736b, world.seed, 0);
    let mut tasks = Vec::with_capacity(cfg.count);
    for id in 0..cfg.count {
        let (start, goal, path) = pairs[rng.random_range(0..pairs.len())].clone();
        let goal_category = world.salient(goal)?.category.clone();
        if lexicon.is_blocked(&goal_category) {
            return Err(Error::contract(format!(
                "goal node {goal} has blocklisted salient category {goal_category}"
            )));
        }
        let mut b = InstructionBuilder::new();
        let hops = path.len() - 1;
        let mut prev_bearing = None;
        for i in 0..hops {
            let next_bearing = world.bearing(path[i], path[i + 1])?;
            if i > 0 {
                b.push(",");
                b.push("then");
            }
            let dir = direction_surface(&mut rng, prev_bearing, next_bearing);
            b.phrase(dir, PhraseKind::Direction, dir);
            if i + 1 < hops {
                let waypoint = world.salient(path[i + 1])?;
                let surfaces = lexicon.surfaces_of(&waypoint.category);
                let surface = surfaces[rng.random_range(0..surfaces.len())];
                b.push(CONNECTORS[rng.random_range(0..CONNECTORS.len())]);
                b.phrase(surface, PhraseKind::Landmark, &waypoint.category);
            }
            prev_bearing = Some(next_bearing);
        }
        b.push(",");
        b.push("then");
        b.phrase("stop", PhraseKind::Direction, "stop");
        b.push("at the");
        let surfaces = lexicon.surfaces_of(&goal_category);
        let surface = surfaces[rng.random_range(0..surfaces.len())];
        b.phrase(surface, PhraseKind::Landmark, &goal_category);
        b.push(".");
        tasks.push(Task {
            id,
            start,
            goal,
            path,
            instruction: b.text,
            goal_category,
            gold_directions: b.directions,
            gold_landmarks: b.landmarks,
        });
    }
    Ok(tasks)
}

/// Per-episode results; rate-like fields are 0 or 1 so means over
/// episodes aggregate directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Geodesic distance from stop node to goal.
    pub ne: f64,
    pub success: f64,
    /// Whether any visited node came within the success radius.
    pub oracle_success: f64,
    /// Success discounted by path efficiency.
    pub spl: f64,
    /// Success with the right object grounded.
    pub rgs: f64,
    /// Grounding success discounted by path efficiency.
    pub rgspl: f64,
}

/// Aggregate over episodes, each field the mean of the per-episode
/// value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub rgs: f64,
    pub rgspl: f64,
    pub episodes: usize,
}

impl Metrics {
    pub fn aggregate(outcomes: &[EpisodeOutcome]) -> Result<Metrics> {
        if outcomes.is_empty() {
            return Err(Error::contract("cannot aggregate zero episodes"));
        }
        let n = outcomes.len() as f64;
        let sum = |f: fn(&EpisodeOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        Ok(Metrics {
            ne: sum(|o| o.ne),
            sr: sum(|o| o.success),
            osr: sum(|o| o.oracle_success),
            spl: sum(|o| o.spl),
            rgs: sum(|o| o.rgs),
            rgspl: sum(|o| o.rgspl),
            episodes: outcomes.len(),
        })
    }
}

/// Scores one finished episode. `trajectory` is every node the agent
/// occupied in order, starting at `start`; `grounding_correct` is
/// whether the object the agent pointed at after stopping carries the
/// goal category.
pub fn episode_metrics(
    world: &World,
    start: usize,
    goal: usize,
    trajectory: &[usize],
    grounding_correct: bool,
    radius: f64,
) -> Result<EpisodeOutcome> {
    if trajectory.first() != Some(&start) {
        return Err(Error::contract(format!(
            "trajectory must start at {start}, got {:?}",
            trajectory.first()
        )));
    }
    let traveled = world.path_length(trajectory)?;
    let stop = *trajectory.last().expect("trajectory is nonempty");
    let ne = world.geodesic(stop, goal)?;
    let success = if ne <= radius { 1.0 } else { 0.0 };
    let mut oracle = 0.0;
    for &node in trajectory {
        if world.geodesic(node, goal)? <= radius {
            oracle = 1.0;
            break;
        }
    }
    let reference = world.geodesic(start, goal)?;
    let efficiency = if reference == 0.0 {
        1.0
    } else {
        reference / reference.max(traveled)
    };
    let spl = success * efficiency;
    let rgs = if success == 1.0 && grounding_correct {
        1.0
    } else {
        0.0
    };
    let rgspl = rgs * efficiency;
    Ok(EpisodeOutcome {
        ne,
        success,
        oracle_success: oracle,
        spl,
        rgs,
        rgspl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        Lexicon::default_lexicon()
    }

    fn line_world(n: usize) -> World {
        let lexicon = lex();
        let vocab = Vocab::closed(lexicon.categories().iter().cloned());
        let label = vocab.id("lamp").unwrap();
        let nodes: Vec<SimNode> = (0..n)
            .map(|i| SimNode {
                x: i as f64,
                y: 0.0,
                objects: vec![SimObject {
                    category: "lamp".into(),
                    label,
                    view: 0,
                    scalars: [0.8, 0.0, 0.0, 0.5, 0.5, 1.0, 0.0, 1.0],
                }],
                salient: 0,
            })
            .collect();
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let features = vec![vec![vec![0.0; 4]; 4]; n];
        World::from_parts(7, 4, 4, nodes, &edges, features, vocab).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_connected() {
        let cfg = WorldGenConfig::default();
        let a = World::generate(&cfg, 11, &lex()).unwrap();
        let b = World::generate(&cfg, 11, &lex()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = World::generate(&cfg, 12, &lex()).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
        a.validate().unwrap();
        let degree_sum: usize = (0..a.node_count())
            .map(|i| a.neighbors(i).unwrap().len())
            .sum();
        assert!(degree_sum as f64 / a.node_count() as f64 >= 2.0);
    }

    #[test]
    fn every_node_has_a_goal_eligible_prominent_object() {
        let world = World::generate(&WorldGenConfig::default(), 3, &lex()).unwrap();
        let lexicon = lex();
        for i in 0..world.node_count() {
            let node = world.node(i).unwrap();
            let salient = world.salient(i).unwrap();
            assert!(!lexicon.is_blocked(&salient.category));
            for obj in &node.objects {
                assert!(obj.scalars[0] <= salient.scalars[0]);
            }
            assert_eq!(
                world.label_vocab().item(salient.label).unwrap(),
                salient.category
            );
        }
    }

    #[test]
    fn views_face_their_bearings() {
        let world = line_world(3);
        assert_eq!(world.view_facing(0, 1).unwrap(), 0);
        assert_eq!(world.view_facing(1, 0).unwrap(), 2);
        let rel = world.rel_angles(0, 1).unwrap();
        assert!((rel[0] - 0.0).abs() < 1e-12);
        assert!((rel[1] - 1.0).abs() < 1e-12);
        assert_eq!(rel[2], 0.0);
        assert_eq!(rel[3], 1.0);

        let obs = world.observation(1).unwrap();
        assert_eq!(obs.views.len(), 4);
        assert!(obs.views[0].navigable);
        assert!(obs.views[2].navigable);
        assert!(!obs.views[1].navigable);
        assert!(!obs.views[3].navigable);
        assert_eq!(obs.views[0].objects.len(), 1);
        assert!(obs.views[1].objects.is_empty());
    }

    #[test]
    fn object_features_mark_their_views() {
        let cfg = WorldGenConfig::default();
        let world = World::generate(&cfg, 21, &lex()).unwrap();
        let node = world.node(0).unwrap();
        let obs = world.observation(0).unwrap();
        let with_obj = node.objects[0].view;
        let mut f_rng = derived_rng(world.seed(), TAG_VIEW_FEATURES, 0, with_obj as u64);
        let base: Vec<f64> = (0..cfg.d_v).map(|_| f_rng.random_range(-1.0..1.0)).collect();
        let seen = &obs.views[with_obj].features;
        assert!(seen.iter().zip(&base).any(|(s, b)| (s - b).abs() > 1e-9));
    }

    #[test]
    fn shortest_path_matches_exhaustive_search() {
        let cfg = WorldGenConfig {
            nodes: 7,
            ..WorldGenConfig::default()
        };
        let world = World::generate(&cfg, 5, &lex()).unwrap();
        fn all_paths(
            world: &World,
            cur: usize,
            goal: usize,
            seen: &mut Vec<bool>,
            cost: f64,
            best: &mut f64,
        ) {
            if cur == goal {
                *best = best.min(cost);
                return;
            }
            for &nb in world.neighbors(cur).unwrap() {
                if !seen[nb] {
                    seen[nb] = true;
                    all_paths(world, nb, goal, seen, cost + world.euclid(cur, nb).unwrap(), best);
                    seen[nb] = false;
                }
            }
        }
        for s in 0..7 {
            for g in 0..7 {
                if s == g {
                    continue;
                }
                let (path, cost) = world.shortest_path(s, g).unwrap();
                assert_eq!(path.first(), Some(&s));
                assert_eq!(path.last(), Some(&g));
                assert!((world.path_length(&path).unwrap() - cost).abs() < 1e-12);
                let mut seen = vec![false; 7];
                seen[s] = true;
                let mut best = f64::INFINITY;
                all_paths(&world, s, g, &mut seen, 0.0, &mut best);
                assert!((cost - best).abs() < 1e-12, "{s}->{g}: {cost} vs {best}");
            }
        }
    }

    #[test]
    fn equal_cost_paths_resolve_to_the_same_nodes() {
        let lexicon = lex();
        let vocab = Vocab::closed(lexicon.categories().iter().cloned());
        let label = vocab.id("door").unwrap();
        let obj = |view: usize| SimObject {
            category: "door".into(),
            label,
            view,
            scalars: [0.7, 0.0, 0.0, 0.5, 0.5, 1.0, 0.0, 1.0],
        };
        let nodes = vec![
            SimNode { x: 0.0, y: 0.0, objects: vec![obj(0)], salient: 0 },
            SimNode { x: 1.0, y: 0.0, objects: vec![obj(1)], salient: 0 },
            SimNode { x: 0.0, y: 1.0, objects: vec![obj(2)], salient: 0 },
            SimNode { x: 1.0, y: 1.0, objects: vec![obj(3)], salient: 0 },
        ];
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let features = vec![vec![vec![0.0; 4]; 4]; 4];
        let world =
            World::from_parts(0, 4, 4, nodes, &edges, features, vocab).unwrap();
        let (path, cost) = world.shortest_path(0, 3).unwrap();
        assert!((cost - 2.0).abs() < 1e-12);
        assert_eq!(path, vec![0, 1, 3]);
        let (again, _) = world.shortest_path(0, 3).unwrap();
        assert_eq!(path, again);

        let allowed: BTreeSet<usize> = [0, 2, 3].into_iter().collect();
        let (detour, cost) = world.shortest_path_over(0, 3, &allowed).unwrap();
        assert_eq!(detour, vec![0, 2, 3]);
        assert!((cost - 2.0).abs() < 1e-12);
        let narrow: BTreeSet<usize> = [0, 3].into_iter().collect();
        assert!(world.shortest_path_over(0, 3, &narrow).is_err());
        assert!(world.shortest_path_over(0, 1, &narrow).is_err());
    }

    #[test]
    fn tasks_parse_back_to_their_recorded_spans() {
        let lexicon = lex();
        let world = World::generate(&WorldGenConfig::default(), 42, &lexicon).unwrap();
        let cfg = TaskGenConfig {
            count: 50,
            ..TaskGenConfig::default()
        };
        let tasks = generate_tasks(&world, &lexicon, &cfg, 9).unwrap();
        assert_eq!(tasks.len(), 50);
        for task in &tasks {
            let hops = task.path.len() - 1;
            assert!(hops >= cfg.min_hops && hops <= cfg.max_hops);
            assert_eq!(task.path.first(), Some(&task.start));
            assert_eq!(task.path.last(), Some(&task.goal));
            world.path_length(&task.path).unwrap();
            assert!(!lexicon.is_blocked(&task.goal_category));
            assert_eq!(task.goal_category, world.salient(task.goal).unwrap().category);

            let parsed = lexicon.parse(&task.instruction);
            assert_eq!(parsed.directions, task.gold_directions, "{}", task.instruction);
            assert_eq!(parsed.landmarks, task.gold_landmarks, "{}", task.instruction);
            assert_eq!(task.gold_directions.last().unwrap().label, "stop");
            assert_eq!(
                task.gold_landmarks.last().unwrap().label,
                task.goal_category
            );
        }
        let again = generate_tasks(&world, &lexicon, &cfg, 9).unwrap();
        assert_eq!(tasks, again);
    }

    #[test]
    fn turn_words_track_bearing_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            direction_surface(&mut rng, Some(0.0), 90f64.to_radians()),
            "turn left"
        );
        assert_eq!(
            direction_surface(&mut rng, Some(0.0), -90f64.to_radians()),
            "turn right"
        );
        assert_eq!(
            direction_surface(&mut rng, Some(0.0), 180f64.to_radians()),
            "turn around"
        );
        let s = direction_surface(&mut rng, Some(0.0), 10f64.to_radians());
        assert!(STRAIGHT_SURFACES.contains(&s));
        let wrapped = direction_surface(&mut rng, Some(170f64.to_radians()), -170f64.to_radians());
        assert!(STRAIGHT_SURFACES.contains(&wrapped));
        assert_eq!(
            direction_surface(&mut rng, Some(170f64.to_radians()), -130f64.to_radians()),
            "turn left"
        );
    }

    #[test]
    fn metrics_match_hand_computed_fixture() {
        let world = line_world(4);
        let r = SUCCESS_RADIUS;
        let a = episode_metrics(&world, 0, 3, &[0, 1, 2, 3], true, r).unwrap();
        assert_eq!(a.ne, 0.0);
        assert_eq!(a.success, 1.0);
        assert_eq!(a.oracle_success, 1.0);
        assert_eq!(a.spl, 1.0);
        assert_eq!(a.rgs, 1.0);
        assert_eq!(a.rgspl, 1.0);

        let b = episode_metrics(&world, 0, 2, &[0, 1, 2, 1, 2], false, r).unwrap();
        assert_eq!(b.ne, 0.0);
        assert_eq!(b.success, 1.0);
        assert_eq!(b.spl, 0.5);
        assert_eq!(b.rgs, 0.0);
        assert_eq!(b.rgspl, 0.0);

        let c = episode_metrics(&world, 0, 2, &[0, 1, 0], true, r).unwrap();
        assert_eq!(c.ne, 2.0);
        assert_eq!(c.success, 0.0);
        assert_eq!(c.oracle_success, 1.0);
        assert_eq!(c.spl, 0.0);
        assert_eq!(c.rgs, 0.0);

        let m = Metrics::aggregate(&[a, b, c]).unwrap();
        assert_eq!(m.ne, 2.0 / 3.0);
        assert_eq!(m.sr, 2.0 / 3.0);
        assert_eq!(m.osr, 1.0);
        assert_eq!(m.spl, 0.5);
        assert_eq!(m.rgs, 1.0 / 3.0);
        assert_eq!(m.rgspl, 1.0 / 3.0);
        assert_eq!(m.episodes, 3);

        assert!(m.spl <= m.sr && m.sr <= m.osr);
        assert!(m.rgspl <= m.rgs && m.rgs <= m.sr);
    }

    #[test]
    fn episode_contracts_are_enforced() {
        let world = line_world(4);
        assert!(episode_metrics(&world, 0, 3, &[], true, 1.0).is_err());
        assert!(episode_metrics(&world, 0, 3, &[1, 2], true, 1.0).is_err());
        assert!(episode_metrics(&world, 0, 3, &[0, 2], true, 1.0).is_err());
        assert!(Metrics::aggregate(&[]).is_err());
    }

    #[test]
    fn malformed_worlds_are_rejected() {
        let lexicon = lex();
        let vocab = Vocab::closed(lexicon.categories().iter().cloned());
        let label = vocab.id("bed").unwrap();
        let node = |x: f64| SimNode {
            x,
            y: 0.0,
            objects: vec![SimObject {
                category: "bed".into(),
                label,
                view: 0,
                scalars: [0.7; OBJECT_SCALARS],
            }],
            salient: 0,
        };
        let feats = |n: usize| vec![vec![vec![0.0; 2]; 4]; n];
        let nodes = vec![node(0.0), node(1.0), node(2.0)];
        let err = World::from_parts(0, 4, 2, nodes.clone(), &[(0, 1)], feats(3), vocab.clone())
            .unwrap_err();
        assert!(err.to_string().contains("connected"));
        assert!(World::from_parts(0, 4, 2, nodes.clone(), &[(0, 1), (1, 1), (1, 2)], feats(3), vocab.clone()).is_err());
        assert!(World::from_parts(0, 4, 2, nodes.clone(), &[(0, 1), (1, 2), (2, 1)], feats(3), vocab.clone()).is_err());
        assert!(World::from_parts(0, 4, 2, nodes.clone(), &[(0, 1), (1, 5)], feats(3), vocab.clone()).is_err());
        let mut bad_label = nodes.clone();
        bad_label[2].objects[0].label += 1;
        assert!(World::from_parts(0, 4, 2, bad_label, &[(0, 1), (1, 2)], feats(3), vocab.clone()).is_err());
        assert!(World::from_parts(0, 4, 2, nodes, &[(0, 1), (1, 2)], feats(2), vocab).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn generated_worlds_and_tasks_hold_their_invariants(
            seed in 0u64..10_000,
            n in 6usize..14,
        ) {
            let lexicon = lex();
            let cfg = WorldGenConfig { nodes: n, ..WorldGenConfig::default() };
            let world = World::generate(&cfg, seed, &lexicon).unwrap();
            world.validate().unwrap();
            let tcfg = TaskGenConfig { count: 3, min_hops: 1, max_hops: 6 };
            let tasks = generate_tasks(&world, &lexicon, &tcfg, seed ^ 1).unwrap();
            for task in &tasks {
                let parsed = lexicon.parse(&task.instruction);
                prop_assert_eq!(&parsed.directions, &task.gold_directions);
                prop_assert_eq!(&parsed.landmarks, &task.gold_landmarks);
                let (_, best) = world.shortest_path(task.start, task.goal).unwrap();
                let gold = world.path_length(&task.path).unwrap();
                prop_assert!((gold - best).abs() < 1e-9);
            }
        }
    }
}
