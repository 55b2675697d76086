//! Integral rounding of the sparsified multiset P': layer-by-layer uniform
//! child sampling, detection of the three bad-event families (per-vertex
//! congestion classes, heavily marked parents, a marked source), resampling of
//! the offending draws until no event remains, deletion of ever-marked paths,
//! extraction of the residual high-congestion set R, and a final
//! bottom-to-top prune.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    global_congestion, local_congestion, LayeredInstance, NodeId, ParamProfile, SolutionForest,
    VertexId,
};
use crate::path_lp::{max_feasible_k, PathLpError};
use crate::pruning::{bottom_to_top_prune, PruneError, PruneTraceRow};
use crate::sparsifier::{sparsify, SparsifyError, WeightedMultiset};
use crate::Scalar;

pub const PATH_BUDGET: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum LllError {
    #[error("lp stage: {0}")]
    Lp(#[from] PathLpError),
    #[error("lp stage: requested k={requested} exceeds max feasible k={max}")]
    InfeasibleK { requested: usize, max: usize },
    #[error("sparsify stage: {0}")]
    Sparsify(#[from] SparsifyError),
    #[error("rounding stage: open frontier node {0} has no children in P'")]
    NoSparseChildren(NodeId),
    #[error("rounding stage: resample cap {cap} exceeded at layer {layer}; stuck on {event}")]
    ResampleCapExceeded {
        cap: usize,
        layer: usize,
        event: String,
    },
    #[error("deletion stage: the source path itself was marked")]
    SourceMarked,
    #[error("prune stage: {0}")]
    Prune(#[from] PruneError),
    #[error("output contract violated: {0}")]
    ContractViolated(String),
}

/// The partial integral solution Q^(i): a forest of path copies, each
/// referring to the P' copy it instantiates, plus the ever-marked flags
/// accumulated over accepted layers.
#[derive(Debug, Clone)]
pub struct RoundingState {
    pub forest: SolutionForest,
    /// Q node id -> P' forest node id.
    pub pref: Vec<NodeId>,
    /// Ever-marked flags, one per Q node.
    pub marked: Vec<bool>,
    /// Frontier layer i: all layers <= i are rounded.
    pub frontier: usize,
}

impl RoundingState {
    pub fn new(pstar: &WeightedMultiset) -> Self {
        let mut forest = SolutionForest::new();
        let root = pstar
            .forest
            .roots()
            .next()
            .expect("P' must contain the source path");
        forest.add_root(pstar.forest.node(root).end);
        RoundingState {
            forest,
            pref: vec![root],
            marked: vec![false],
            frontier: 0,
        }
    }

    pub fn open_frontier(&self, li: &LayeredInstance) -> Vec<NodeId> {
        self.forest
            .nodes()
            .filter(|(id, n)| self.forest.depth(*id) == self.frontier && !li.base.is_sink(n.end))
            .map(|(id, _)| id)
            .collect()
    }
}

/// One layer's independent random variables: for each open frontier node,
/// the multiset of P' children it selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDraws {
    /// frontier Q node -> drawn P' child node ids (with multiplicity).
    pub picks: BTreeMap<NodeId, Vec<NodeId>>,
}

impl LayerDraws {
    pub fn total(&self) -> usize {
        self.picks.values().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum BadEventKind {
    /// Congestion class (vertex, dyadic class index) overloaded.
    B1 { v: VertexId, t: u32 },
    /// Too many marked children under Q node p.
    B2 { p: NodeId },
    /// The source path itself is marked.
    B3,
}

#[derive(Debug, Clone)]
pub struct BadEvent {
    pub kind: BadEventKind,
    /// The violated inequality: observed value and its threshold.
    pub lhs: f64,
    pub rhs: f64,
    /// Frontier Q nodes whose draws the event depends on.
    pub depends_on: BTreeSet<NodeId>,
}

/// Per-P'-node endpoint load tables: table[p][v] = sum of y(q) over copies q
/// in the subtree of p ending at v (the conditional congestion cong(p, v)).
pub fn cong_tables(pstar: &WeightedMultiset) -> Vec<BTreeMap<VertexId, Scalar>> {
    let n = pstar.forest.len();
    let mut tables: Vec<BTreeMap<VertexId, Scalar>> = vec![BTreeMap::new(); n];
    // Children are stored after parents, so a reverse pass is bottom-up.
    for id in (0..n).rev() {
        let mut t = BTreeMap::new();
        for &c in &pstar.forest.node(id).children.clone() {
            for (&v, &w) in &tables[c] {
                *t.entry(v).or_insert(0.0) += w;
            }
        }
        *t.entry(pstar.forest.node(id).end).or_insert(0.0) += pstar.weight(id);
        tables[id] = t;
    }
    tables
}

/// Read-only view of a (possibly candidate) partial solution, carrying
/// everything the congestion accounting needs.
pub struct QView<'a> {
    pub pstar: &'a WeightedMultiset,
    pub li: &'a LayeredInstance,
    pub tables: &'a [BTreeMap<VertexId, Scalar>],
    pub forest: &'a SolutionForest,
    pub pref: &'a [NodeId],
    pub frontier: usize,
}

impl QView<'_> {
    /// cong_p(v | Q): integral endpoint count among descendants of `p` once
    /// v's layer is rounded; otherwise the fractional continuation through
    /// the open frontier descendants, weighted by 1/y. `p = None` is the
    /// virtual root above all sources (global congestion).
    pub fn cong(&self, p: Option<NodeId>, v: VertexId) -> Scalar {
        let members: Vec<NodeId> = match p {
            Some(p) => self.forest.subtree(p),
            None => (0..self.forest.len()).collect(),
        };
        if (self.li.layer_of(v) as usize) <= self.frontier {
            members
                .into_iter()
                .filter(|&q| self.forest.node(q).end == v)
                .count() as Scalar
        } else {
            members
                .into_iter()
                .filter(|&q| {
                    self.forest.depth(q) == self.frontier
                        && !self.li.base.is_sink(self.forest.node(q).end)
                })
                .map(|q| {
                    let pq = self.pref[q];
                    let load = self.tables[pq].get(&v).copied().unwrap_or(0.0);
                    load / self.pstar.weight(pq)
                })
                .sum()
        }
    }

    /// Max over all vertices of the virtual-root congestion.
    pub fn max_global_cong(&self) -> Scalar {
        let mut loads: BTreeMap<VertexId, Scalar> = BTreeMap::new();
        for (q, n) in self.forest.nodes() {
            if (self.li.layer_of(n.end) as usize) <= self.frontier {
                *loads.entry(n.end).or_insert(0.0) += 1.0;
            }
            if self.forest.depth(q) == self.frontier && !self.li.base.is_sink(n.end) {
                let pq = self.pref[q];
                for (&v, &w) in &self.tables[pq] {
                    if (self.li.layer_of(v) as usize) > self.frontier {
                        *loads.entry(v).or_insert(0.0) += w / self.pstar.weight(pq);
                    }
                }
            }
        }
        loads.values().fold(0.0, |a, &b| a.max(b))
    }
}

/// Draws `sample_children` children i.i.d. uniformly over the P' children of
/// every open frontier node.
pub fn round_layer(
    state: &RoundingState,
    pstar: &WeightedMultiset,
    li: &LayeredInstance,
    profile: &ParamProfile,
    rng: &mut impl Rng,
) -> Result<LayerDraws, LllError> {
    let mut picks = BTreeMap::new();
    for f in state.open_frontier(li) {
        picks.insert(f, draw_for(state, pstar, profile, rng, f)?);
    }
    Ok(LayerDraws { picks })
}

fn draw_for(
    state: &RoundingState,
    pstar: &WeightedMultiset,
    profile: &ParamProfile,
    rng: &mut impl Rng,
    f: NodeId,
) -> Result<Vec<NodeId>, LllError> {
    let children = &pstar.forest.node(state.pref[f]).children;
    if children.is_empty() {
        return Err(LllError::NoSparseChildren(f));
    }
    Ok((0..profile.sample_children)
        .map(|_| children[rng.gen_range(0..children.len())])
        .collect())
}

/// Extends the state's forest by the candidate draws, returning the
/// materialized candidate Q^(i+1). Node ids of Q^(i) are preserved.
pub fn materialize(
    state: &RoundingState,
    pstar: &WeightedMultiset,
    draws: &LayerDraws,
) -> (SolutionForest, Vec<NodeId>) {
    let mut forest = state.forest.clone();
    let mut pref = state.pref.clone();
    for (&f, picks) in &draws.picks {
        for &c in picks {
            forest.add_child(f, pstar.forest.node(c).end);
            pref.push(c);
        }
    }
    (forest, pref)
}

/// Number of dyadic congestion classes tracked per vertex: t in 0..=t_max.
pub fn t_max(n: usize) -> u32 {
    let log_n = (n.max(2) as f64).log2().ceil();
    (log_n * log_n) as u32
}

struct DetectCtx<'a> {
    state: &'a RoundingState,
    pstar: &'a WeightedMultiset,
    li: &'a LayeredInstance,
    profile: &'a ParamProfile,
    tables: &'a [BTreeMap<VertexId, Scalar>],
    cand_forest: &'a SolutionForest,
    cand_pref: &'a [NodeId],
}

impl DetectCtx<'_> {
    fn old_view(&self) -> QView<'_> {
        QView {
            pstar: self.pstar,
            li: self.li,
            tables: self.tables,
            forest: &self.state.forest,
            pref: &self.state.pref,
            frontier: self.state.frontier,
        }
    }

    fn new_view(&self) -> QView<'_> {
        QView {
            pstar: self.pstar,
            li: self.li,
            tables: self.tables,
            forest: self.cand_forest,
            pref: self.cand_pref,
            frontier: self.state.frontier + 1,
        }
    }

    /// A Q node q (in both old and candidate forests) is newly marked when,
    /// for some distance l' <= ell, more than
    /// retain_children^{l'} / mark_threshold_denom of the P' descendants of
    /// q at distance l' newly cross the local congestion bound L.
    fn is_newly_marked(&self, q: NodeId) -> bool {
        let h = self.li.height() as usize;
        let layer_q = self.state.forest.depth(q);
        let max_lp = (self.profile.ell as usize).min(h.saturating_sub(layer_q));
        let old = self.old_view();
        let new = self.new_view();
        let l = self.profile.l_local as Scalar;
        for lp in 1..=max_lp {
            let threshold =
                (self.profile.retain_children as f64).powi(lp as i32) / self.profile.mark_threshold_denom;
            let mut crossings = 0usize;
            for r in self.pstar.forest.descendants_at(self.pstar_ref(q), lp) {
                let v = self.pstar.forest.node(r).end;
                let before = old.cong(Some(q), v);
                if before > l {
                    continue;
                }
                let after = new.cong(Some(q), v);
                if after > l {
                    crossings += 1;
                }
            }
            if crossings as f64 > threshold {
                return true;
            }
        }
        false
    }

    fn pstar_ref(&self, q: NodeId) -> NodeId {
        self.state.pref[q]
    }

    /// Open frontier Q nodes that are descendants of p (the draws an event
    /// at p depends on).
    fn frontier_descendants(&self, p: NodeId) -> BTreeSet<NodeId> {
        self.state
            .forest
            .subtree(p)
            .into_iter()
            .filter(|&q| {
                self.state.forest.depth(q) == self.state.frontier
                    && !self.li.base.is_sink(self.state.forest.node(q).end)
            })
            .collect()
    }
}

/// Detects all bad events of the candidate layer:
///
/// * B1(v, t): the copies of layer i+1 whose per-weight load on v falls in
///   the dyadic class (2^-t, 2^-(t-1)] together exceed twice their exact
///   expectation plus the profile slack.
/// * B2(p): at least sample_children / mark_frac_denom children of p are
///   newly marked, for p within the trailing window of ell + 1 layers.
/// * B3: the source path itself is newly marked (first ell rounds only).
pub fn detect_bad_events(
    state: &RoundingState,
    pstar: &WeightedMultiset,
    li: &LayeredInstance,
    profile: &ParamProfile,
    tables: &[BTreeMap<VertexId, Scalar>],
    draws: &LayerDraws,
) -> Vec<BadEvent> {
    let (cand_forest, cand_pref) = materialize(state, pstar, draws);
    let ctx = DetectCtx {
        state,
        pstar,
        li,
        profile,
        tables,
        cand_forest: &cand_forest,
        cand_pref: &cand_pref,
    };
    let mut events = Vec::new();
    detect_b1(&ctx, draws, &mut events);
    detect_b2_b3(&ctx, &mut events);
    events.sort_by(|a, b| a.kind.cmp(&b.kind));
    events
}

fn class_of(ratio: Scalar, tmax: u32) -> Option<u32> {
    if ratio <= 0.0 {
        return None;
    }
    // smallest t with ratio > 2^-t, i.e. ratio in (2^-t, 2^-(t-1)]
    let t = (-ratio.log2()).floor() as i64 + 1;
    let t = t.max(0) as u32;
    (t <= tmax).then_some(t)
}

fn detect_b1(ctx: &DetectCtx<'_>, draws: &LayerDraws, events: &mut Vec<BadEvent>) {
    let tmax = t_max(ctx.li.base.vertex_count as usize);
    let sample = ctx.profile.sample_children as f64;
    // (v, t) -> (observed sum, exact expectation, dependent frontier nodes)
    let mut acc: BTreeMap<(VertexId, u32), (f64, f64, BTreeSet<NodeId>)> = BTreeMap::new();
    for f in ctx.state.open_frontier(ctx.li) {
        let children = &ctx.pstar.forest.node(ctx.state.pref[f]).children;
        let deg = children.len() as f64;
        // Exact expectation: each of the `sample` draws selects a given P'
        // child copy with probability 1/deg.
        for &c in children {
            let yc = ctx.pstar.weight(c);
            for (&v, &load) in &ctx.tables[c] {
                let ratio = load / yc;
                if let Some(t) = class_of(ratio, tmax) {
                    let e = acc.entry((v, t)).or_insert((0.0, 0.0, BTreeSet::new()));
                    e.1 += sample * ratio / deg;
                    e.2.insert(f);
                }
            }
        }
        // Observed: the actual picks of this frontier node.
        if let Some(picks) = draws.picks.get(&f) {
            for &c in picks {
                let yc = ctx.pstar.weight(c);
                for (&v, &load) in &ctx.tables[c] {
                    let ratio = load / yc;
                    if let Some(t) = class_of(ratio, tmax) {
                        let e = acc.entry((v, t)).or_insert((0.0, 0.0, BTreeSet::new()));
                        e.0 += ratio;
                    }
                }
            }
        }
    }
    for ((v, t), (obs, exp, deps)) in acc {
        let rhs = 2.0 * exp + ctx.profile.b1_slack;
        if obs > rhs {
            events.push(BadEvent {
                kind: BadEventKind::B1 { v, t },
                lhs: obs,
                rhs,
                depends_on: deps,
            });
        }
    }
}

fn detect_b2_b3(ctx: &DetectCtx<'_>, events: &mut Vec<BadEvent>) {
    let i = ctx.state.frontier;
    let ell = ctx.profile.ell as usize;
    let lo = i.saturating_sub(ell + 1);
    let b2_threshold = ctx.profile.sample_children as f64 / ctx.profile.mark_frac_denom as f64;
    if i >= 1 {
        for (p, _) in ctx.state.forest.nodes() {
            let layer = ctx.state.forest.depth(p);
            if layer < lo || layer > i - 1 {
                continue;
            }
            let marked = ctx
                .state
                .forest
                .node(p)
                .children
                .iter()
                .filter(|&&q| ctx.is_newly_marked(q))
                .count();
            if marked as f64 >= b2_threshold && marked > 0 {
                events.push(BadEvent {
                    kind: BadEventKind::B2 { p },
                    lhs: marked as f64,
                    rhs: b2_threshold,
                    depends_on: ctx.frontier_descendants(p),
                });
            }
        }
    }
    // B3: the source path is a child of the virtual root; it can only be
    // marked while the frontier is within distance ell of the root.
    if i + 1 <= ell {
        let root = ctx.state.forest.roots().next().unwrap();
        if ctx.is_newly_marked(root) {
            events.push(BadEvent {
                kind: BadEventKind::B3,
                lhs: 1.0,
                rhs: 1.0,
                depends_on: ctx.frontier_descendants(root),
            });
        }
    }
}

/// Moser-Tardos loop: while a bad event exists, redraw exactly the draws in
/// the lexicographically least event's dependency set.
pub fn resample_until_clear(
    state: &RoundingState,
    pstar: &WeightedMultiset,
    li: &LayeredInstance,
    profile: &ParamProfile,
    tables: &[BTreeMap<VertexId, Scalar>],
    draws: &mut LayerDraws,
    rng: &mut impl Rng,
    cap: usize,
) -> Result<ResampleStats, LllError> {
    let mut stats = ResampleStats::default();
    loop {
        let events = detect_bad_events(state, pstar, li, profile, tables, draws);
        stats.events_detected += events.len();
        let Some(event) = events.into_iter().next() else {
            return Ok(stats);
        };
        if stats.resamples >= cap {
            return Err(LllError::ResampleCapExceeded {
                cap,
                layer: state.frontier + 1,
                event: format!("{:?} ({} > {})", event.kind, event.lhs, event.rhs),
            });
        }
        for &f in &event.depends_on {
            let redraw = draw_for(state, pstar, profile, rng, f)?;
            draws.picks.insert(f, redraw);
        }
        stats.resamples += 1;
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResampleStats {
    pub events_detected: usize,
    pub resamples: usize,
}

/// One JSONL trace record per accepted layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub draws: usize,
    pub events_detected: usize,
    pub resamples: usize,
    pub accepted_congestion_max: f64,
}

pub fn trace_jsonl(trace: &[LayerTrace]) -> String {
    trace
        .iter()
        .map(|t| serde_json::to_string(t).unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Accepts a cleared candidate: merges the drawn layer into the state and
/// records the newly marked nodes.
pub fn accept_layer(
    state: &mut RoundingState,
    pstar: &WeightedMultiset,
    li: &LayeredInstance,
    profile: &ParamProfile,
    tables: &[BTreeMap<VertexId, Scalar>],
    draws: &LayerDraws,
) {
    let (cand_forest, cand_pref) = materialize(state, pstar, draws);
    let ctx = DetectCtx {
        state,
        pstar,
        li,
        profile,
        tables,
        cand_forest: &cand_forest,
        cand_pref: &cand_pref,
    };
    // Marks are determined by the accepted draw; record them before moving
    // the frontier. Crossings only happen within distance ell of the new
    // layer, so sweeping every existing node is exhaustive.
    let mut newly_marked = Vec::new();
    for (q, _) in state.forest.nodes() {
        if ctx.is_newly_marked(q) {
            newly_marked.push(q);
        }
    }
    let new_len = cand_forest.len();
    state.forest = cand_forest;
    state.pref = cand_pref;
    state.marked.resize(new_len, false);
    for q in newly_marked {
        state.marked[q] = true;
    }
    state.frontier += 1;
}

/// Deletes every ever-marked subtree and extracts the residual set R of
/// copies whose local congestion within distance ell of some ancestor (or of
/// the virtual root) still exceeds the local bound.
pub fn delete_marked_and_extract_r(
    state: &RoundingState,
    li: &LayeredInstance,
    profile: &ParamProfile,
) -> Result<(SolutionForest, Vec<bool>), LllError> {
    let root = state.forest.roots().next().unwrap();
    if state.marked[root] {
        return Err(LllError::SourceMarked);
    }
    let mut keep = vec![true; state.forest.len()];
    for (q, _) in state.forest.nodes() {
        if state.marked[q] {
            for r in state.forest.subtree(q) {
                keep[r] = false;
            }
        }
    }
    let (pruned, _) = state.forest.retain(&keep);
    let r_flags = extract_r(&pruned, li, profile);
    Ok((pruned, r_flags))
}

/// R over a fully rounded forest: q is in R when, for some ancestor p at
/// distance l' <= ell (or the virtual root), the number of descendants of p
/// ending at q's vertex exceeds the local congestion bound.
pub fn extract_r(forest: &SolutionForest, _li: &LayeredInstance, profile: &ParamProfile) -> Vec<bool> {
    let ell = profile.ell as usize;
    let l = profile.l_local;
    let mut flags = vec![false; forest.len()];
    // Virtual root: global endpoint counts.
    let mut global: BTreeMap<VertexId, usize> = BTreeMap::new();
    for (_, n) in forest.nodes() {
        *global.entry(n.end).or_insert(0) += 1;
    }
    for (q, n) in forest.nodes() {
        if global[&n.end] > l {
            flags[q] = true;
            continue;
        }
        let mut p = forest.node(q).parent;
        let mut dist = 1usize;
        while let Some(anc) = p {
            if dist > ell {
                break;
            }
            let count = forest
                .subtree(anc)
                .into_iter()
                .filter(|&r| forest.node(r).end == n.end)
                .count();
            if count > l {
                flags[q] = true;
                break;
            }
            p = forest.node(anc).parent;
            dist += 1;
        }
    }
    flags
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub k: usize,
    pub trace: Vec<LayerTrace>,
    pub marked_nodes: usize,
    pub r_size: usize,
    pub prune_trace: Vec<PruneTraceRow>,
}

/// The full single-source pipeline: path LP, sparsification, layer-by-layer
/// rounding with resampling, marked-path deletion, R extraction, and the
/// bottom-to-top prune. The output keeps at least
/// retain_children / (2 ell) children per open node, local congestion at
/// most l_local, and global congestion at most k_global.
pub fn round_single_source(
    li: &LayeredInstance,
    k: usize,
    profile: &ParamProfile,
    rng: &mut impl Rng,
    resample_cap: usize,
) -> Result<(SolutionForest, RoundReport), LllError> {
    let (k_max, pi, x) = max_feasible_k::<Scalar>(li, PATH_BUDGET, 1e-9)?;
    if k > k_max {
        return Err(LllError::InfeasibleK {
            requested: k,
            max: k_max,
        });
    }
    let pstar = sparsify(&pi, &x, li, k, profile, rng, 20)?;
    let tables = cong_tables(&pstar);
    let mut state = RoundingState::new(&pstar);
    let mut trace = Vec::new();
    let h = li.height() as usize;
    for layer in 1..=h {
        let mut draws = round_layer(&state, &pstar, li, profile, rng)?;
        let stats = resample_until_clear(
            &state,
            &pstar,
            li,
            profile,
            &tables,
            &mut draws,
            rng,
            resample_cap,
        )?;
        let total = draws.total();
        accept_layer(&mut state, &pstar, li, profile, &tables, &draws);
        let view = QView {
            pstar: &pstar,
            li,
            tables: &tables,
            forest: &state.forest,
            pref: &state.pref,
            frontier: state.frontier,
        };
        trace.push(LayerTrace {
            layer,
            draws: total,
            events_detected: stats.events_detected,
            resamples: stats.resamples,
            accepted_congestion_max: view.max_global_cong(),
        });
    }
    let marked_nodes = state.marked.iter().filter(|&&m| m).count();
    let (cleaned, r_flags) = delete_marked_and_extract_r(&state, li, profile)?;
    let r_size = r_flags.iter().filter(|&&f| f).count();
    let (pruned, prune_trace) =
        bottom_to_top_prune(&cleaned, &r_flags, profile.ell, profile.retain_children)?;
    check_output_contract(&pruned, li, profile)?;
    Ok((
        pruned,
        RoundReport {
            k,
            trace,
            marked_nodes,
            r_size,
            prune_trace,
        },
    ))
}

fn check_output_contract(
    sol: &SolutionForest,
    li: &LayeredInstance,
    profile: &ParamProfile,
) -> Result<(), LllError> {
    if sol.roots().count() != 1 {
        return Err(LllError::ContractViolated(format!(
            "expected one surviving root, found {}",
            sol.roots().count()
        )));
    }
    let min_children = profile.retain_children as f64 / (2.0 * profile.ell as f64);
    for (id, n) in sol.nodes() {
        if !li.base.is_sink(n.end) && (n.children.len() as f64) < min_children {
            return Err(LllError::ContractViolated(format!(
                "open node {id} keeps {} children, needs at least {min_children}",
                n.children.len()
            )));
        }
    }
    let global = global_congestion(sol);
    if global.max_global > profile.k_global {
        return Err(LllError::ContractViolated(format!(
            "global congestion {} exceeds bound {}",
            global.max_global, profile.k_global
        )));
    }
    let local = local_congestion(sol, profile.ell);
    let local_max = local.local_max.values().copied().max().unwrap_or(0);
    if local_max > profile.l_local {
        return Err(LllError::ContractViolated(format!(
            "local congestion {} exceeds bound {}",
            local_max, profile.l_local
        )));
    }
    Ok(())
}

/// Hand-built inputs that force bad events deterministically; shared between
/// the unit tests and the integration suite.
#[doc(hidden)]
pub mod fixtures {
    use super::*;
    use crate::model::Instance;
    use std::collections::BTreeSet as Set;

    /// Complete b-ary layered tree of height h rooted at vertex 0.
    pub fn complete_tree(b: u32, h: u32) -> LayeredInstance {
        let mut edges = Set::new();
        let mut layers = vec![vec![0u32]];
        let mut next_id = 1u32;
        for _ in 0..h {
            let prev = layers.last().unwrap().clone();
            let mut layer = Vec::new();
            for &u in &prev {
                for _ in 0..b {
                    edges.insert((u, next_id));
                    layer.push(next_id);
                    next_id += 1;
                }
            }
            layers.push(layer);
        }
        let sinks: Set<u32> = layers.last().unwrap().iter().copied().collect();
        let inst = Instance::new(next_id, edges, [0], sinks);
        LayeredInstance::new(inst, layers).unwrap()
    }

    /// Hand-built P' over the complete binary tree of height 2 with unit
    /// weights (g = 1). The root holds three copies of the path to vertex 1,
    /// so the root's own congestion is above the threshold everywhere and it
    /// can never *newly* cross (no B3). Each copy's children collide on
    /// vertices 3 and 4: three uniform picks land entirely on one endpoint
    /// with probability 1/4, a crossing past l_local = 2 that marks the
    /// parent and fires B2 at the root.
    ///
    /// If `clearable` is false, every child copy ends at vertex 3 and all
    /// three picks always collide: the event holds under every redraw.
    pub fn forced_fixture(clearable: bool) -> (LayeredInstance, WeightedMultiset, ParamProfile) {
        let li = complete_tree(2, 2);
        let mut forest = SolutionForest::new();
        let r = forest.add_root(0);
        let (_, pi, _) = max_feasible_k::<Scalar>(&li, PATH_BUDGET, 1e-9).unwrap();
        let find = |end: VertexId, parent: usize| -> usize {
            pi.nodes[parent]
                .children
                .iter()
                .copied()
                .find(|&c| pi.nodes[c].end == end)
                .unwrap()
        };
        let p1 = find(1, 0);
        let p13 = find(3, p1);
        let p14 = find(4, p1);
        let mut path_ref = vec![0];
        for _ in 0..3 {
            let c = forest.add_child(r, 1);
            path_ref.push(p1);
            forest.add_child(c, 3);
            path_ref.push(p13);
            forest.add_child(c, 3);
            path_ref.push(p13);
            if clearable {
                forest.add_child(c, 4);
                path_ref.push(p14);
                forest.add_child(c, 4);
                path_ref.push(p14);
            }
        }
        let pstar = WeightedMultiset {
            forest,
            path_ref,
            gbase: 1,
            k: 4,
        };
        let mut profile = ParamProfile::desk_small(4);
        profile.ell = 2;
        profile.sample_children = 3;
        profile.retain_children = 1;
        profile.granularity_base = 1;
        profile.l_local = 2; // threshold override: a tripled endpoint crosses
        profile.mark_threshold_denom = 4.0; // one crossing marks
        profile.mark_frac_denom = 3; // one marked child fires B2
        profile.b1_slack = 100.0; // keep B1 out of the picture
        (li, pstar, profile)
    }
}
