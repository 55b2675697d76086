//! Depth bounding, layering, and congestion removal.

use std::collections::BTreeMap;

use crate::model::{Instance, LayeredInstance, NodeId, SolutionForest, VertexId};

#[derive(Debug, thiserror::Error)]
pub enum ReductionError {
    #[error("node {0} has {1} children, expected a degree-{2} solution")]
    NotDegreeK(NodeId, usize, usize),
    #[error("layered vertex {0} has no copy-map entry")]
    UnknownCopy(VertexId),
    #[error("congestion removal is infeasible (input violates degree/congestion premise)")]
    Infeasible,
}

/// Derives a degree-`k/2` sub-solution of bounded depth: top-down, every
/// retained node with children keeps the `k/2` of them whose subtrees have
/// the fewest descendants, ties broken by child vertex id.
pub fn prune_to_bounded_depth(
    sol: &SolutionForest,
    k: usize,
) -> Result<SolutionForest, ReductionError> {
    let half = k / 2;
    let mut subtree_size = vec![0usize; sol.len()];
    for id in (0..sol.len()).rev() {
        subtree_size[id] = 1;
        for &c in &sol.node(id).children {
            subtree_size[id] += subtree_size[c];
        }
    }
    let mut keep = vec![false; sol.len()];
    for r in sol.roots() {
        keep[r] = true;
    }
    for id in 0..sol.len() {
        if !keep[id] {
            continue;
        }
        let node = sol.node(id);
        if node.children.is_empty() {
            continue;
        }
        if node.children.len() < k {
            return Err(ReductionError::NotDegreeK(id, node.children.len(), k));
        }
        let mut ranked: Vec<NodeId> = node.children.clone();
        ranked.sort_by_key(|&c| (subtree_size[c], sol.node(c).end, c));
        for &c in ranked.iter().take(half) {
            keep[c] = true;
        }
    }
    Ok(sol.retain(&keep).0)
}

/// Layer copies of the instance: layer 0 holds the sources, layers
/// `1..=ceil(log2 n)` hold a full copy of the vertex set each. Returns the
/// layered instance and, per new vertex id, its original vertex and layer.
pub fn to_layered(inst: &Instance) -> (LayeredInstance, Vec<(VertexId, u32)>) {
    let n = inst.vertex_count;
    let h = (n.max(2) as f64).log2().ceil() as u32;
    let mut copy_map: Vec<(VertexId, u32)> = Vec::new();
    let mut layers: Vec<Vec<VertexId>> = Vec::new();
    let mut id_of: Vec<BTreeMap<VertexId, VertexId>> = Vec::new();

    let mut layer0 = Vec::new();
    let mut map0 = BTreeMap::new();
    for &s in &inst.sources {
        map0.insert(s, copy_map.len() as VertexId);
        layer0.push(copy_map.len() as VertexId);
        copy_map.push((s, 0));
    }
    layers.push(layer0);
    id_of.push(map0);
    for i in 1..=h {
        let mut layer = Vec::new();
        let mut map = BTreeMap::new();
        for v in 0..n {
            map.insert(v, copy_map.len() as VertexId);
            layer.push(copy_map.len() as VertexId);
            copy_map.push((v, i));
        }
        layers.push(layer);
        id_of.push(map);
    }

    let mut edges = Vec::new();
    for i in 0..h as usize {
        for &(u, v) in &inst.edges {
            if let Some(&u_new) = id_of[i].get(&u) {
                edges.push((u_new, id_of[i + 1][&v]));
            }
        }
    }
    let sources: Vec<VertexId> = layers[0].clone();
    let sinks: Vec<VertexId> = copy_map
        .iter()
        .enumerate()
        .filter(|&(_, &(orig, _))| inst.sinks.contains(&orig))
        .map(|(id, _)| id as VertexId)
        .collect();
    let base = Instance::new(copy_map.len() as u32, edges, sources, sinks);
    let li = LayeredInstance::new(base, layers).expect("layered construction is well-formed");
    (li, copy_map)
}

/// Maps a solution on the layered instance back to the original vertices.
pub fn from_layered(
    sol: &SolutionForest,
    copy_map: &[(VertexId, u32)],
) -> Result<SolutionForest, ReductionError> {
    let mut out = SolutionForest::new();
    let mut new_id = vec![0usize; sol.len()];
    for (id, node) in sol.nodes() {
        let &(orig, _) = copy_map
            .get(node.end as usize)
            .ok_or(ReductionError::UnknownCopy(node.end))?;
        new_id[id] = match node.parent {
            None => out.add_root(orig),
            Some(p) => out.add_child(new_id[p], orig),
        };
    }
    Ok(out)
}

/// Dinic-free max-flow on tiny graphs: BFS augmenting paths, unit-ish
/// integer capacities.
struct FlowNet {
    // per node: list of (to, cap, reverse edge index)
    adj: Vec<Vec<(usize, i64, usize)>>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        FlowNet {
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64) {
        let back = self.adj[to].len();
        let fwd = self.adj[from].len();
        self.adj[from].push((to, cap, back));
        self.adj[to].push((from, 0, fwd));
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0;
        loop {
            let mut pred: Vec<Option<(usize, usize)>> = vec![None; self.adj.len()];
            let mut queue = std::collections::VecDeque::from([s]);
            pred[s] = Some((s, usize::MAX));
            while let Some(u) = queue.pop_front() {
                for (i, &(v, cap, _)) in self.adj[u].iter().enumerate() {
                    if cap > 0 && pred[v].is_none() {
                        pred[v] = Some((u, i));
                        queue.push_back(v);
                    }
                }
            }
            if pred[t].is_none() {
                return total;
            }
            let mut bottleneck = i64::MAX;
            let mut v = t;
            while v != s {
                let (u, i) = pred[v].unwrap();
                bottleneck = bottleneck.min(self.adj[u][i].1);
                v = u;
            }
            let mut v = t;
            while v != s {
                let (u, i) = pred[v].unwrap();
                self.adj[u][i].1 -= bottleneck;
                let back = self.adj[u][i].2;
                self.adj[v][back].1 += bottleneck;
                v = u;
            }
            total += bottleneck;
        }
    }
}

/// Turns a degree-`k`, congestion-`K` solution into a vertex-disjoint
/// degree-`k/K` one. Each open node must keep `k/K` children whose end
/// vertices are pairwise distinct globally; solved exactly as an integral
/// flow on the node/vertex bipartite graph.
pub fn remove_congestion(
    sol: &SolutionForest,
    k: usize,
    cong: usize,
) -> Result<SolutionForest, ReductionError> {
    let target = k / cong;
    if target == 0 {
        return Err(ReductionError::Infeasible);
    }
    let open: Vec<NodeId> = sol
        .nodes()
        .filter(|(_, n)| !n.children.is_empty())
        .map(|(id, _)| id)
        .collect();
    for &id in &open {
        let c = sol.node(id).children.len();
        if c < k {
            return Err(ReductionError::NotDegreeK(id, c, k));
        }
    }
    let mut vertex_ids: BTreeMap<VertexId, usize> = BTreeMap::new();
    for &id in &open {
        for &c in &sol.node(id).children {
            let next = vertex_ids.len();
            vertex_ids.entry(sol.node(c).end).or_insert(next);
        }
    }
    let mut root_load: BTreeMap<VertexId, i64> = BTreeMap::new();
    for r in sol.roots() {
        *root_load.entry(sol.node(r).end).or_insert(0) += 1;
    }

    // network: 0 = source, 1..=open = path nodes, then vertices, then sink
    let v_base = 1 + open.len();
    let sink = v_base + vertex_ids.len();
    let mut net = FlowNet::new(sink + 1);
    for (i, &id) in open.iter().enumerate() {
        net.add_edge(0, 1 + i, target as i64);
        let mut seen = BTreeMap::new();
        for &c in &sol.node(id).children {
            let end = sol.node(c).end;
            // parallel children to the same vertex share one unit of capacity
            if seen.insert(end, c).is_none() {
                net.add_edge(1 + i, v_base + vertex_ids[&end], 1);
            }
        }
    }
    for (&v, &vi) in &vertex_ids {
        let cap = 1 - root_load.get(&v).copied().unwrap_or(0);
        if cap > 0 {
            net.add_edge(v_base + vi, sink, cap);
        }
    }
    let need = (target * open.len()) as i64;
    if net.max_flow(0, sink) < need {
        return Err(ReductionError::Infeasible);
    }

    // selected child vertices per open node = saturated node->vertex edges
    let mut selected: BTreeMap<NodeId, Vec<VertexId>> = BTreeMap::new();
    for (i, &id) in open.iter().enumerate() {
        let mut ends = Vec::new();
        for &(to, cap, _) in &net.adj[1 + i] {
            if to >= v_base && to < sink && cap == 0 {
                let (&v, _) = vertex_ids.iter().find(|&(_, &vi)| v_base + vi == to).unwrap();
                ends.push(v);
            }
        }
        selected.insert(id, ends);
    }

    let mut keep = vec![false; sol.len()];
    for r in sol.roots() {
        keep[r] = true;
    }
    for id in 0..sol.len() {
        if !keep[id] {
            continue;
        }
        if let Some(ends) = selected.get(&id) {
            for &v in ends {
                // lowest-id child ending at the selected vertex
                let c = *sol
                    .node(id)
                    .children
                    .iter()
                    .find(|&&c| sol.node(c).end == v)
                    .unwrap();
                keep[c] = true;
            }
        }
    }
    Ok(sol.retain(&keep).0)
}
