//! Graph and solution data model plus the verifiers used by every stage.
//!
//! Solutions are multisets of source-rooted paths with unique parent links.
//! Internally a [`SolutionForest`] stores one end vertex per node and derives
//! the full path by walking the parent chain, so multiset copies are cheap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub type VertexId = u32;
pub type NodeId = usize;

/// A directed instance with terminal sinks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub vertex_count: u32,
    pub edges: BTreeSet<(VertexId, VertexId)>,
    pub sources: BTreeSet<VertexId>,
    pub sinks: BTreeSet<VertexId>,
}

impl Instance {
    pub fn new(
        vertex_count: u32,
        edges: impl IntoIterator<Item = (VertexId, VertexId)>,
        sources: impl IntoIterator<Item = VertexId>,
        sinks: impl IntoIterator<Item = VertexId>,
    ) -> Self {
        Instance {
            vertex_count,
            edges: edges.into_iter().collect(),
            sources: sources.into_iter().collect(),
            sinks: sinks.into_iter().collect(),
        }
    }

    pub fn has_edge(&self, u: VertexId, v: VertexId) -> bool {
        self.edges.contains(&(u, v))
    }

    pub fn out_neighbors(&self, u: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.edges
            .range((u, 0)..=(u, VertexId::MAX))
            .map(|&(_, v)| v)
    }

    pub fn out_degree(&self, u: VertexId) -> usize {
        self.out_neighbors(u).count()
    }

    pub fn is_sink(&self, v: VertexId) -> bool {
        self.sinks.contains(&v)
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.vertex_count)
            .map(|v| self.out_degree(v))
            .max()
            .unwrap_or(0)
    }
}

/// Instance with vertices partitioned into layers `L_0..L_h`; `L_0` holds the
/// sources and every edge goes from one layer to the next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredInstance {
    pub base: Instance,
    pub layers: Vec<Vec<VertexId>>,
    layer_of: Vec<u32>,
}

impl LayeredInstance {
    pub fn new(base: Instance, layers: Vec<Vec<VertexId>>) -> Result<Self, String> {
        let mut layer_of = vec![u32::MAX; base.vertex_count as usize];
        for (i, layer) in layers.iter().enumerate() {
            for &v in layer {
                if v >= base.vertex_count {
                    return Err(format!("layer {i} contains invalid vertex {v}"));
                }
                if layer_of[v as usize] != u32::MAX {
                    return Err(format!("vertex {v} appears in two layers"));
                }
                layer_of[v as usize] = i as u32;
            }
        }
        if layer_of.iter().any(|&l| l == u32::MAX) {
            return Err("layers do not cover all vertices".into());
        }
        let li = LayeredInstance {
            base,
            layers,
            layer_of,
        };
        let violations = li.validate();
        if !violations.is_empty() {
            return Err(violations.join("; "));
        }
        Ok(li)
    }

    pub fn layer_of(&self, v: VertexId) -> u32 {
        self.layer_of[v as usize]
    }

    /// Index of the last layer.
    pub fn height(&self) -> u32 {
        (self.layers.len() - 1) as u32
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = validate_instance(&self.base);
        if self.layers.is_empty() {
            out.push("no layers".into());
            return out;
        }
        let l0: BTreeSet<VertexId> = self.layers[0].iter().copied().collect();
        if l0 != self.base.sources {
            out.push("L_0 does not equal the source set".into());
        }
        for &(u, v) in &self.base.edges {
            if self.layer_of(v) != self.layer_of(u) + 1 {
                out.push(format!("edge ({u},{v}) does not go to the next layer"));
            }
        }
        out
    }
}

/// One node of a [`SolutionForest`]: a path copy ending at `end`, whose full
/// vertex sequence is the parent's path extended by `end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestNode {
    pub end: VertexId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// A multiset of source-rooted paths with unique parent links. The universal
/// solution representation: arborescences, partial roundings, and the
/// sparsified multiset all live here.
///
/// Nodes are stored parent-before-child.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SolutionForest {
    nodes: Vec<ForestNode>,
}

impl SolutionForest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &ForestNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &ForestNode)> {
        self.nodes.iter().enumerate()
    }

    pub fn roots(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(i, _)| i)
    }

    pub fn add_root(&mut self, source: VertexId) -> NodeId {
        self.nodes.push(ForestNode {
            end: source,
            parent: None,
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    pub fn add_child(&mut self, parent: NodeId, end: VertexId) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(ForestNode {
            end,
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Number of vertices on the node's path (the length `|p|`).
    pub fn path_len(&self, id: NodeId) -> usize {
        self.depth(id) + 1
    }

    /// Number of edges on the node's path; equals the layer of its endpoint
    /// in a layered instance.
    pub fn depth(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            d += 1;
            cur = p;
        }
        d
    }

    pub fn path_of(&self, id: NodeId) -> Vec<VertexId> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            path.push(self.nodes[c].end);
            cur = self.nodes[c].parent;
        }
        path.reverse();
        path
    }

    pub fn is_closed(&self, id: NodeId, inst: &Instance) -> bool {
        inst.is_sink(self.nodes[id].end)
    }

    /// Descendants at distance exactly `dist` (distance 0 yields `id` itself).
    pub fn descendants_at(&self, id: NodeId, dist: usize) -> Vec<NodeId> {
        let mut frontier = vec![id];
        for _ in 0..dist {
            let mut next = Vec::new();
            for n in frontier {
                next.extend_from_slice(&self.nodes[n].children);
            }
            frontier = next;
        }
        frontier
    }

    /// Proper descendants at distance 1..=dist.
    pub fn descendants_upto(&self, id: NodeId, dist: usize) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut frontier = vec![id];
        for _ in 0..dist {
            let mut next = Vec::new();
            for n in frontier {
                next.extend_from_slice(&self.nodes[n].children);
            }
            out.extend_from_slice(&next);
            frontier = next;
        }
        out
    }

    /// The node's whole subtree, including the node itself.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.nodes[out[i]].children);
            i += 1;
        }
        out
    }

    pub fn max_depth(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    /// New forest containing exactly the nodes whose entire ancestor chain is
    /// kept. Returns the forest and the old-id -> new-id mapping.
    pub fn retain(&self, keep: &[bool]) -> (SolutionForest, Vec<Option<NodeId>>) {
        assert_eq!(keep.len(), self.nodes.len());
        let mut map: Vec<Option<NodeId>> = vec![None; self.nodes.len()];
        let mut out = SolutionForest::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if !keep[id] {
                continue;
            }
            match node.parent {
                None => {
                    map[id] = Some(out.add_root(node.end));
                }
                Some(p) => {
                    // Dropped ancestor drops the whole subtree.
                    if let Some(np) = map[p] {
                        map[id] = Some(out.add_child(np, node.end));
                    }
                }
            }
        }
        (out, map)
    }

    pub fn to_json(&self) -> SolutionJson {
        SolutionJson {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| SolutionNodeJson {
                    path: self.path_of(i),
                    parent: n.parent,
                })
                .collect(),
        }
    }

    pub fn from_json(json: &SolutionJson) -> Result<Self, String> {
        let mut out = SolutionForest::new();
        for (i, n) in json.nodes.iter().enumerate() {
            if n.path.is_empty() {
                return Err(format!("node {i}: empty path"));
            }
            match n.parent {
                None => {
                    if n.path.len() != 1 {
                        return Err(format!("node {i}: root with non-singleton path"));
                    }
                    out.add_root(n.path[0]);
                }
                Some(p) => {
                    if p >= i {
                        return Err(format!("node {i}: parent {p} not before child"));
                    }
                    let expected = out.path_of(p);
                    if n.path.len() != expected.len() + 1 || n.path[..expected.len()] != expected {
                        return Err(format!("node {i}: path does not extend its parent"));
                    }
                    out.add_child(p, *n.path.last().unwrap());
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionJson {
    pub nodes: Vec<SolutionNodeJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionNodeJson {
    pub path: Vec<VertexId>,
    pub parent: Option<NodeId>,
}

/// JSON wire form of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceJson {
    pub n: u32,
    pub edges: Vec<(VertexId, VertexId)>,
    pub sources: Vec<VertexId>,
    pub sinks: Vec<VertexId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<Vec<VertexId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl InstanceJson {
    pub fn from_instance(inst: &Instance) -> Self {
        InstanceJson {
            n: inst.vertex_count,
            edges: inst.edges.iter().copied().collect(),
            sources: inst.sources.iter().copied().collect(),
            sinks: inst.sinks.iter().copied().collect(),
            layers: None,
            provenance: None,
        }
    }

    pub fn from_layered(li: &LayeredInstance) -> Self {
        let mut json = Self::from_instance(&li.base);
        json.layers = Some(li.layers.clone());
        json
    }

    pub fn to_instance(&self) -> Instance {
        Instance::new(
            self.n,
            self.edges.iter().copied(),
            self.sources.iter().copied(),
            self.sinks.iter().copied(),
        )
    }

    pub fn to_layered(&self) -> Result<Option<LayeredInstance>, String> {
        match &self.layers {
            None => Ok(None),
            Some(layers) => Ok(Some(LayeredInstance::new(self.to_instance(), layers.clone())?)),
        }
    }
}

/// Congestion counts of a solution. `local_max` is filled by
/// [`local_congestion`] and maps each distance `l' <= l` to the maximum of
/// `|I_{D(p,<=l')}(v)|` over all nodes `p` (and the virtual empty root).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CongestionReport {
    pub per_vertex: BTreeMap<VertexId, usize>,
    pub max_global: usize,
    pub local_max: BTreeMap<u32, usize>,
}

/// All tunable constants of the pipeline with paper-default formulas and
/// desk-scale overrides.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamProfile {
    pub name: String,
    /// Locality radius (full scale: `10 log log n`).
    pub ell: u32,
    /// Local congestion bound L (full scale: `2^10 ell^2`).
    pub l_local: usize,
    /// Global congestion bound K (full scale: `2^11 log^3 n`).
    pub k_global: usize,
    /// Granularity base g (full scale: `4 log^2 n`).
    pub granularity_base: u64,
    /// Children drawn per open path during rounding (full scale: `k/16`).
    pub sample_children: usize,
    /// Children guaranteed after marked-path deletion (full scale: `k/32`).
    pub retain_children: usize,
    /// Additive slack in the B1 event (full scale: `2^10 log n`).
    pub b1_slack: f64,
    /// B2 fires when at least `sample_children / mark_frac_denom` children of
    /// one path are marked (full-scale denominator: `ell^3`).
    pub mark_frac_denom: u32,
    /// A child is marked when its newly-congested count exceeds
    /// `retain_children^{l'} / mark_threshold_denom` (full scale: `log^10 n`).
    pub mark_threshold_denom: f64,
    /// The unnamed constant of the group-sampling concentration bound.
    pub sample_reduce_c: f64,
}

impl ParamProfile {
    /// Constants computed from the full-scale asymptotic formulas for a given `n`
    /// and guessed optimum `k`.
    pub fn paper_default(n: usize, k: usize) -> Self {
        let log_n = (n.max(2) as f64).log2();
        let ell = (10.0 * log_n.log2()).ceil().max(2.0) as u32;
        ParamProfile {
            name: "paper-default".into(),
            ell,
            l_local: (1usize << 10) * (ell as usize).pow(2),
            k_global: ((1u64 << 11) as f64 * log_n.powi(3)).ceil() as usize,
            granularity_base: (4.0 * log_n.powi(2)).ceil() as u64,
            sample_children: (k / 16).max(1),
            retain_children: (k / 32).max(1),
            b1_slack: (1u64 << 10) as f64 * log_n,
            mark_frac_denom: (ell).pow(3),
            mark_threshold_denom: log_n.powi(10),
            sample_reduce_c: 1.0,
        }
    }

    /// Small constants for instances far below the asymptotic regime.
    pub fn desk_small(k: usize) -> Self {
        let sample = (k / 2).max(2);
        ParamProfile {
            name: "desk-small".into(),
            ell: 2,
            l_local: 8,
            k_global: 16,
            granularity_base: 2,
            sample_children: sample,
            retain_children: (sample / 2).max(1),
            b1_slack: 8.0,
            mark_frac_denom: 16,
            mark_threshold_denom: 4.0,
            sample_reduce_c: 1.0,
        }
    }

    pub fn by_name(name: &str, n: usize, k: usize) -> Option<Self> {
        match name {
            "paper-default" => Some(Self::paper_default(n, k)),
            "desk-small" => Some(Self::desk_small(k)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ell < 2 {
            return Err("ell must be >= 2".into());
        }
        if self.retain_children > self.sample_children {
            return Err("retain_children must be <= sample_children".into());
        }
        if self.granularity_base == 0
            || self.sample_children == 0
            || self.retain_children == 0
            || self.l_local == 0
            || self.k_global == 0
            || self.mark_frac_denom == 0
        {
            return Err("all profile constants must be positive".into());
        }
        // Marked children accumulate over ell rounds; the retained count must
        // survive deleting all of them.
        let worst_marked =
            self.ell as f64 * self.sample_children as f64 / self.mark_frac_denom as f64;
        if (self.retain_children as f64) > self.sample_children as f64 - worst_marked {
            return Err(format!(
                "retain_children {} inconsistent with sample_children {} and mark_frac_denom {}",
                self.retain_children, self.sample_children, self.mark_frac_denom
            ));
        }
        Ok(())
    }
}

/// Checks all `Instance` invariants. Violations are data, not failures.
pub fn validate_instance(inst: &Instance) -> Vec<String> {
    let mut out = Vec::new();
    for &v in inst.sources.iter().chain(inst.sinks.iter()) {
        if v >= inst.vertex_count {
            out.push(format!("vertex {v} out of range"));
        }
    }
    for &v in &inst.sources {
        if inst.sinks.contains(&v) {
            out.push(format!("sources/sinks overlap at {v}"));
        }
    }
    for &(u, v) in &inst.edges {
        if u >= inst.vertex_count || v >= inst.vertex_count {
            out.push(format!("edge ({u},{v}) endpoint out of range"));
        }
        if inst.sinks.contains(&u) {
            out.push(format!("sink {u} has outgoing edge to {v}"));
        }
    }
    out
}

/// Per-vertex endpoint counts and their maximum.
pub fn global_congestion(sol: &SolutionForest) -> CongestionReport {
    let mut per_vertex: BTreeMap<VertexId, usize> = BTreeMap::new();
    for (_, node) in sol.nodes() {
        *per_vertex.entry(node.end).or_insert(0) += 1;
    }
    let max_global = per_vertex.values().copied().max().unwrap_or(0);
    CongestionReport {
        per_vertex,
        max_global,
        local_max: BTreeMap::new(),
    }
}

/// `l`-local congestion: for every node `p` (and the virtual empty root) and
/// every `l' <= l`, the endpoint multiplicity within `D(p, <= l')`.
pub fn local_congestion(sol: &SolutionForest, ell: u32) -> CongestionReport {
    assert!(ell >= 1);
    let global = global_congestion(sol);
    let mut local_max: BTreeMap<u32, usize> = (1..=ell).map(|l| (l, 0)).collect();
    for lp in 1..=ell {
        let mut best = 0usize;
        // Virtual root: all paths of length at most lp, i.e. depth < lp.
        let mut counts: BTreeMap<VertexId, usize> = BTreeMap::new();
        for (id, node) in sol.nodes() {
            if sol.depth(id) < lp as usize {
                *counts.entry(node.end).or_insert(0) += 1;
            }
        }
        best = best.max(counts.values().copied().max().unwrap_or(0));
        for (id, _) in sol.nodes() {
            let mut counts: BTreeMap<VertexId, usize> = BTreeMap::new();
            for d in sol.descendants_upto(id, lp as usize) {
                *counts.entry(sol.node(d).end).or_insert(0) += 1;
            }
            best = best.max(counts.values().copied().max().unwrap_or(0));
        }
        local_max.insert(lp, best);
    }
    CongestionReport {
        per_vertex: global.per_vertex,
        max_global: global.max_global,
        local_max,
    }
}

/// Outcome of [`is_valid_solution`]. `flags` carries advisory findings
/// (non-simple paths) that do not fail the check.
#[derive(Debug, Clone, Default)]
pub struct ValidationOutcome {
    pub ok: bool,
    pub reasons: Vec<String>,
    pub flags: Vec<String>,
}

/// Checks the degree-`k` solution conditions against `inst`:
/// one root per source, endpoint counts at most `allow_congestion`, every
/// open node with at least `k` children (`exact_degree` restores equality),
/// and every path edge present in the instance.
pub fn is_valid_solution(
    inst: &Instance,
    sol: &SolutionForest,
    k: usize,
    allow_congestion: usize,
    exact_degree: bool,
) -> ValidationOutcome {
    let mut reasons = Vec::new();
    let mut flags = Vec::new();

    let mut root_of: BTreeMap<VertexId, usize> = BTreeMap::new();
    for r in sol.roots() {
        *root_of.entry(sol.node(r).end).or_insert(0) += 1;
    }
    for &s in &inst.sources {
        match root_of.get(&s) {
            None => reasons.push(format!("source {s} has no root node")),
            Some(1) => {}
            Some(c) => reasons.push(format!("source {s} has {c} root nodes")),
        }
    }
    for (&v, _) in &root_of {
        if !inst.sources.contains(&v) {
            reasons.push(format!("root node at non-source vertex {v}"));
        }
    }

    let report = global_congestion(sol);
    for (&v, &c) in &report.per_vertex {
        if c > allow_congestion {
            reasons.push(format!(
                "vertex {v} has congestion {c} > allowed {allow_congestion}"
            ));
        }
    }

    for (id, node) in sol.nodes() {
        if let Some(p) = node.parent {
            let u = sol.node(p).end;
            if !inst.has_edge(u, node.end) {
                reasons.push(format!("path edge ({u},{}) missing in instance", node.end));
            }
        }
        if !sol.is_closed(id, inst) {
            let c = node.children.len();
            let bad = if exact_degree { c != k } else { c < k };
            if bad {
                reasons.push(format!(
                    "open path ending at {} has {c} children, need {}{k}",
                    node.end,
                    if exact_degree { "exactly " } else { ">= " }
                ));
            }
        } else if !node.children.is_empty() {
            reasons.push(format!("closed path at sink {} has children", node.end));
        }
        let path = sol.path_of(id);
        let distinct: BTreeSet<VertexId> = path.iter().copied().collect();
        if distinct.len() != path.len() {
            flags.push(format!("non-simple path at node {id}"));
        }
    }

    ValidationOutcome {
        ok: reasons.is_empty(),
        reasons,
        flags,
    }
}
