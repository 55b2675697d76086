//! Ground truth and baselines: exhaustive max-min solver, naive and halved
//! randomized rounding, and sink congestion statistics.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::Serialize;

use crate::model::{Instance, SolutionForest, VertexId};
use crate::path_lp::{FractionalPathSolution, PathIndex};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("search budget exceeded ({0} states)")]
    BudgetExceeded(usize),
    #[error("instance too large for the exhaustive oracle (n = {0} > 128)")]
    TooManyVertices(u32),
}

/// Exhaustive search for the max-min degree: the largest `k` for which
/// vertex-disjoint degree-`k` arborescences exist from every source.
/// The witness passes `is_valid_solution(.., k_opt, 1)`.
pub fn brute_force_opt(
    inst: &Instance,
    depth_cap: usize,
    node_cap: usize,
) -> Result<(usize, SolutionForest), OracleError> {
    if inst.vertex_count > 128 {
        return Err(OracleError::TooManyVertices(inst.vertex_count));
    }
    let ub = inst.max_out_degree();
    for k in (1..=ub).rev() {
        if let Some(witness) = search_for_k(inst, k, depth_cap, node_cap)? {
            return Ok((k, witness));
        }
    }
    // degree-0 solution: only the source roots
    let mut sol = SolutionForest::new();
    for &s in &inst.sources {
        sol.add_root(s);
    }
    Ok((0, sol))
}

struct Search<'a> {
    inst: &'a Instance,
    k: usize,
    depth_cap: usize,
    node_cap: usize,
    states: usize,
    sources: Vec<VertexId>,
    failed: HashSet<(usize, u128, Vec<(VertexId, u32)>)>,
}

fn search_for_k(
    inst: &Instance,
    k: usize,
    depth_cap: usize,
    node_cap: usize,
) -> Result<Option<SolutionForest>, OracleError> {
    let sources: Vec<VertexId> = inst.sources.iter().copied().collect();
    let mut used = 0u128;
    let mut sol = SolutionForest::new();
    for &s in &sources {
        used |= 1 << s;
    }
    let mut search = Search {
        inst,
        k,
        depth_cap,
        node_cap,
        states: 0,
        sources,
        failed: HashSet::new(),
    };
    let ok = search.cover_source(0, used, &mut sol, Vec::new())?;
    Ok(if ok { Some(sol) } else { None })
}

impl Search<'_> {
    /// Expands the open queue of the current source's tree; once empty,
    /// starts the next source. `open` holds (forest node, vertex, depth).
    fn cover_source(
        &mut self,
        src_idx: usize,
        used: u128,
        sol: &mut SolutionForest,
        open: Vec<(usize, VertexId, u32)>,
    ) -> Result<bool, OracleError> {
        self.states += 1;
        if self.states > self.node_cap {
            return Err(OracleError::BudgetExceeded(self.node_cap));
        }
        if open.is_empty() {
            if src_idx == self.sources.len() {
                return Ok(true);
            }
            let s = self.sources[src_idx];
            let root = sol.add_root(s);
            let next_open = if self.inst.is_sink(s) {
                Vec::new()
            } else {
                vec![(root, s, 0)]
            };
            let ok = self.cover_source(src_idx + 1, used, sol, next_open)?;
            if !ok {
                truncate_to(sol, root);
            }
            return Ok(ok);
        }

        let key = {
            let mut vs: Vec<(VertexId, u32)> = open.iter().map(|&(_, v, d)| (v, d)).collect();
            vs.sort_unstable();
            (src_idx, used, vs)
        };
        if self.failed.contains(&key) {
            return Ok(false);
        }

        let (node, u, depth) = open[0];
        if depth as usize >= self.depth_cap {
            self.failed.insert(key);
            return Ok(false);
        }
        let avail: Vec<VertexId> = self
            .inst
            .out_neighbors(u)
            .filter(|&v| used & (1 << v) == 0)
            .collect();
        if avail.len() >= self.k {
            let mut choice = vec![0usize; self.k];
            if self.try_subsets(&mut choice, 0, 0, &avail, &open, node, depth, used, sol, src_idx)? {
                return Ok(true);
            }
        }
        self.failed.insert(key);
        Ok(false)
    }

    #[allow(clippy::too_many_arguments)]
    fn try_subsets(
        &mut self,
        choice: &mut Vec<usize>,
        pos: usize,
        start: usize,
        avail: &[VertexId],
        open: &[(usize, VertexId, u32)],
        node: usize,
        depth: u32,
        used: u128,
        sol: &mut SolutionForest,
        src_idx: usize,
    ) -> Result<bool, OracleError> {
        if pos == self.k {
            let mut new_used = used;
            let mut next_open: Vec<(usize, VertexId, u32)> = open[1..].to_vec();
            let checkpoint = sol.len();
            for &i in choice.iter() {
                let v = avail[i];
                new_used |= 1 << v;
                let child = sol.add_child(node, v);
                if !self.inst.is_sink(v) {
                    next_open.push((child, v, depth + 1));
                }
            }
            if self.cover_source(src_idx, new_used, sol, next_open)? {
                return Ok(true);
            }
            truncate_to(sol, checkpoint);
            return Ok(false);
        }
        for i in start..avail.len() {
            choice[pos] = i;
            if self.try_subsets(
                choice, pos + 1, i + 1, avail, open, node, depth, used, sol, src_idx,
            )? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Drop all forest nodes with id >= `len` (the backtracking checkpoint).
fn truncate_to(sol: &mut SolutionForest, len: usize) {
    let keep: Vec<bool> = (0..sol.len()).map(|i| i < len).collect();
    let (trimmed, _) = sol.retain(&keep);
    *sol = trimmed;
}

/// Single-source exhaustive solver, used as the `alpha = 1` oracle in the
/// local search. Returns the best arborescence for `s` alone.
pub fn brute_force_single_source(
    inst: &Instance,
    s: VertexId,
    depth_cap: usize,
    node_cap: usize,
) -> Result<(usize, SolutionForest), OracleError> {
    let restricted = Instance {
        vertex_count: inst.vertex_count,
        edges: inst.edges.clone(),
        sources: [s].into_iter().collect(),
        sinks: inst.sinks.clone(),
    };
    brute_force_opt(&restricted, depth_cap, node_cap)
}

fn sample_children<R: Rng>(
    pi: &PathIndex,
    x: &FractionalPathSolution<f64>,
    p: usize,
    draws: usize,
    rng: &mut R,
) -> Vec<usize> {
    let options: Vec<(usize, f64)> = pi.nodes[p]
        .children
        .iter()
        .map(|&c| (c, x.value(c)))
        .filter(|&(_, w)| w > 1e-12)
        .collect();
    let total: f64 = options.iter().map(|&(_, w)| w).sum();
    if options.is_empty() || total <= 0.0 {
        return Vec::new();
    }
    (0..draws)
        .map(|_| {
            let mut roll = rng.gen_range(0.0..total);
            for &(c, w) in &options {
                if roll < w {
                    return c;
                }
                roll -= w;
            }
            options.last().unwrap().0
        })
        .collect()
}

fn top_down_rounding<R: Rng>(
    pi: &PathIndex,
    li: &crate::model::LayeredInstance,
    x: &FractionalPathSolution<f64>,
    draws: usize,
    rng: &mut R,
) -> SolutionForest {
    let mut sol = SolutionForest::new();
    let root = sol.add_root(pi.nodes[pi.root()].end);
    let mut frontier = vec![(root, pi.root())];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (snode, pnode) in frontier {
            if pi.is_closed(pnode, li) {
                continue;
            }
            for c in sample_children(pi, x, pnode, draws, rng) {
                let child = sol.add_child(snode, pi.nodes[c].end);
                next.push((child, c));
            }
        }
        frontier = next;
    }
    sol
}

/// Top-down rounding that keeps all `k` sampled children per open path, with
/// congestion unconstrained.
pub fn naive_randomized_rounding<R: Rng>(
    pi: &PathIndex,
    li: &crate::model::LayeredInstance,
    x: &FractionalPathSolution<f64>,
    k: usize,
    rng: &mut R,
) -> SolutionForest {
    top_down_rounding(pi, li, x, k, rng)
}

/// As naive but sampling only `k/2` children per open path.
pub fn halved_randomized_rounding<R: Rng>(
    pi: &PathIndex,
    li: &crate::model::LayeredInstance,
    x: &FractionalPathSolution<f64>,
    k: usize,
    rng: &mut R,
) -> SolutionForest {
    top_down_rounding(pi, li, x, (k / 2).max(1), rng)
}

#[derive(Debug, Clone, Serialize)]
pub struct SinkStats {
    pub selected_sinks: usize,
    pub closed_paths: usize,
    pub mean: f64,
    pub max: usize,
    /// multiplicity -> number of sinks with that multiplicity
    pub histogram: BTreeMap<usize, usize>,
}

/// Endpoint multiplicity over closed paths only.
pub fn sink_congestion_stats(sol: &SolutionForest, inst: &Instance) -> SinkStats {
    let mut per_sink: BTreeMap<VertexId, usize> = BTreeMap::new();
    for (id, node) in sol.nodes() {
        if sol.is_closed(id, inst) {
            *per_sink.entry(node.end).or_insert(0) += 1;
        }
    }
    let closed_paths: usize = per_sink.values().sum();
    let selected = per_sink.len();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in per_sink.values() {
        *histogram.entry(c).or_insert(0) += 1;
    }
    SinkStats {
        selected_sinks: selected,
        closed_paths,
        mean: if selected == 0 {
            0.0
        } else {
            closed_paths as f64 / selected as f64
        },
        max: per_sink.values().copied().max().unwrap_or(0),
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::is_valid_solution;

    fn star(m: u32) -> Instance {
        Instance::new(m + 1, (1..=m).map(|v| (0, v)), [0], 1..=m)
    }

    #[test]
    fn star_opt_is_sink_count() {
        let (k, witness) = brute_force_opt(&star(4), 8, 100_000).unwrap();
        assert_eq!(k, 4);
        assert!(is_valid_solution(&star(4), &witness, 4, 1, false).ok);
    }

    #[test]
    fn shared_sinks_split_evenly() {
        // two sources, both connected to all 4 sinks
        let mut edges = Vec::new();
        for s in [0u32, 1] {
            for t in 2..=5u32 {
                edges.push((s, t));
            }
        }
        let inst = Instance::new(6, edges, [0, 1], 2..=5);
        let (k, witness) = brute_force_opt(&inst, 8, 100_000).unwrap();
        assert_eq!(k, 2);
        assert!(is_valid_solution(&inst, &witness, 2, 1, false).ok);
    }

    #[test]
    fn monotone_under_edge_addition() {
        let inst = star(2);
        let (k1, _) = brute_force_opt(&inst, 8, 100_000).unwrap();
        let mut bigger = inst.clone();
        bigger.vertex_count = 4;
        bigger.edges.insert((0, 3));
        bigger.sinks.insert(3);
        let (k2, _) = brute_force_opt(&bigger, 8, 100_000).unwrap();
        assert!(k2 >= k1);
    }

    #[test]
    fn sink_stats_counting() {
        let inst = star(3);
        let mut sol = SolutionForest::new();
        let r = sol.add_root(0);
        sol.add_child(r, 1);
        sol.add_child(r, 1);
        sol.add_child(r, 1);
        sol.add_child(r, 2);
        let stats = sink_congestion_stats(&sol, &inst);
        assert_eq!(stats.max, 3);
        assert_eq!(stats.selected_sinks, 2);
        assert_eq!(stats.histogram[&3], 1);
    }

    #[test]
    fn baselines_deterministic_per_seed() {
        use crate::model::LayeredInstance;
        use crate::path_lp;
        use rand::SeedableRng;
        let inst = star(4);
        let li = LayeredInstance::new(inst, vec![vec![0], (1..=4).collect()]).unwrap();
        let (k, pi, x) = path_lp::max_feasible_k::<f64>(&li, 1000, 1e-9).unwrap();
        let run = |seed| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            naive_randomized_rounding(&pi, &li, &x, k, &mut rng)
        };
        assert_eq!(run(5), run(5));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let halved = halved_randomized_rounding(&pi, &li, &x, k, &mut rng);
        assert_eq!(halved.len(), 1 + k / 2);
    }
}
