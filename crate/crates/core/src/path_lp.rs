//! Prefix-tree path enumeration, the path LP, and binary search for the
//! largest feasible degree.

use num_traits::Float;

use crate::model::{LayeredInstance, VertexId};
use crate::simplex::{self, LpOutcome, LpProblem, SimplexError};

#[derive(Debug, thiserror::Error)]
pub enum PathLpError {
    #[error("path budget exceeded: more than {0} prefix-tree nodes")]
    PathBudgetExceeded(usize),
    #[error("layered instance must have a single source, found {0}")]
    MultiSource(usize),
    #[error("k must be >= 1")]
    DegenerateK,
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

#[derive(Debug, Clone)]
pub struct PathIndexNode {
    pub end: VertexId,
    pub layer: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Prefix tree over all layered paths from one source. Children of a node
/// correspond exactly to the out-edges of its end vertex.
#[derive(Debug, Clone)]
pub struct PathIndex {
    pub nodes: Vec<PathIndexNode>,
}

impl PathIndex {
    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_closed(&self, id: usize, li: &LayeredInstance) -> bool {
        li.base.is_sink(self.nodes[id].end)
    }

    /// Subtree node ids, including `id` itself.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.nodes[out[i]].children);
            i += 1;
        }
        out
    }

    pub fn path_of(&self, id: usize) -> Vec<VertexId> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            path.push(self.nodes[c].end);
            cur = self.nodes[c].parent;
        }
        path.reverse();
        path
    }
}

/// Nonnegative per-path values `x(p)` supported on a [`PathIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalPathSolution<F> {
    pub values: Vec<F>,
}

impl<F: Float> FractionalPathSolution<F> {
    pub fn value(&self, id: usize) -> F {
        self.values[id]
    }
}

/// Complete prefix tree of the single-source layered instance `li`, failing
/// fast once the node count would exceed `cap`.
pub fn enumerate_paths(li: &LayeredInstance, cap: usize) -> Result<PathIndex, PathLpError> {
    if li.base.sources.len() != 1 {
        return Err(PathLpError::MultiSource(li.base.sources.len()));
    }
    let source = *li.base.sources.iter().next().unwrap();
    let h = li.height();
    let mut nodes = vec![PathIndexNode {
        end: source,
        layer: 0,
        parent: None,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for layer in 0..h {
        let mut next = Vec::new();
        for &p in &frontier {
            let end = nodes[p].end;
            if li.base.is_sink(end) {
                continue;
            }
            let outs: Vec<VertexId> = li.base.out_neighbors(end).collect();
            for v in outs {
                if nodes.len() >= cap {
                    return Err(PathLpError::PathBudgetExceeded(cap));
                }
                let id = nodes.len();
                nodes.push(PathIndexNode {
                    end: v,
                    layer: layer + 1,
                    parent: Some(p),
                    children: Vec::new(),
                });
                nodes[p].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    Ok(PathIndex { nodes })
}

/// The path LP for degree `k`: child-sum demand on every open path,
/// lift-and-project capacity for every (prefix, vertex) pair with a
/// non-vacuous index set, unit root, and nonnegativity.
pub fn build_path_lp<F: Float + std::fmt::Display>(
    pi: &PathIndex,
    li: &LayeredInstance,
    k: usize,
) -> Result<LpProblem<F>, PathLpError> {
    if k == 0 {
        return Err(PathLpError::DegenerateK);
    }
    let mut lp = LpProblem::new(pi.len());
    let kf = F::from(k).unwrap();

    for (id, node) in pi.nodes.iter().enumerate() {
        if pi.is_closed(id, li) {
            continue;
        }
        let mut coeffs: Vec<(usize, F)> = node
            .children
            .iter()
            .map(|&c| (c, F::one()))
            .collect();
        coeffs.push((id, -kf));
        lp.push_eq(coeffs, F::zero());
    }

    for id in 0..pi.len() {
        // group this node's descendants (itself included) by endpoint
        let mut by_vertex: std::collections::BTreeMap<VertexId, Vec<usize>> = Default::default();
        for q in pi.subtree(id) {
            by_vertex.entry(pi.nodes[q].end).or_default().push(q);
        }
        for (_, members) in by_vertex {
            // a row whose index set is only the prefix itself is vacuous
            if members.len() == 1 && members[0] == id {
                continue;
            }
            let mut coeffs: Vec<(usize, F)> =
                members.iter().map(|&q| (q, F::one())).collect();
            coeffs.push((id, -F::one()));
            lp.push_le(coeffs, F::zero());
        }
    }

    lp.push_eq(vec![(pi.root(), F::one())], F::one());
    Ok(lp)
}

#[derive(Debug, Clone)]
pub enum Feasibility<F> {
    Feasible(FractionalPathSolution<F>),
    Infeasible(Vec<usize>),
}

/// Phase-1 simplex on the feasibility system, re-checking row residuals.
pub fn solve_lp_feasibility<F: Float + std::fmt::Display>(
    lp: &LpProblem<F>,
    tol: F,
) -> Result<Feasibility<F>, PathLpError> {
    match simplex::solve_feasibility(lp, tol)? {
        LpOutcome::Feasible(x) => {
            debug_assert!(lp.max_residual(&x) <= F::from(1e-6).unwrap());
            Ok(Feasibility::Feasible(FractionalPathSolution { values: x }))
        }
        LpOutcome::Infeasible(rows) => Ok(Feasibility::Infeasible(rows)),
    }
}

/// Binary search for the largest degree at which the path LP is feasible.
/// Returns `k = 0` with the trivial witness when no positive degree works.
pub fn max_feasible_k<F: Float + std::fmt::Display>(
    li: &LayeredInstance,
    cap: usize,
    tol: F,
) -> Result<(usize, PathIndex, FractionalPathSolution<F>), PathLpError> {
    let pi = enumerate_paths(li, cap)?;
    let mut trivial = FractionalPathSolution {
        values: vec![F::zero(); pi.len()],
    };
    trivial.values[pi.root()] = F::one();

    let probe = |k: usize| -> Result<Option<FractionalPathSolution<F>>, PathLpError> {
        let lp = build_path_lp(&pi, li, k)?;
        Ok(match solve_lp_feasibility(&lp, tol)? {
            Feasibility::Feasible(x) => Some(x),
            Feasibility::Infeasible(_) => None,
        })
    };

    let ub = li.base.max_out_degree();
    let mut lo = 0usize;
    let mut best = trivial;
    let mut hi = ub;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        match probe(mid)? {
            Some(x) => {
                lo = mid;
                best = x;
            }
            None => hi = mid - 1,
        }
    }
    Ok((lo, pi, best))
}

/// Closed-form fractional solution that splits each prefix's mass uniformly
/// among its children. Useful on structured instances whose path tree is far
/// too large for the simplex; only the relative sibling weights matter to the
/// randomized rounders, which renormalize per prefix.
pub fn uniform_path_solution<F: Float>(pi: &PathIndex) -> FractionalPathSolution<F> {
    let mut values = vec![F::zero(); pi.len()];
    values[pi.root()] = F::one();
    for id in 0..pi.len() {
        let node = &pi.nodes[id];
        if node.children.is_empty() {
            continue;
        }
        let share = values[id] / F::from(node.children.len()).unwrap();
        for &c in &node.children {
            values[c] = share;
        }
    }
    FractionalPathSolution { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Instance;

    fn star_layered(m: u32) -> LayeredInstance {
        let inst = Instance::new(m + 1, (1..=m).map(|v| (0, v)), [0], 1..=m);
        LayeredInstance::new(inst, vec![vec![0], (1..=m).collect()]).unwrap()
    }

    #[test]
    fn star_enumeration_counts() {
        let li = star_layered(3);
        let pi = enumerate_paths(&li, 1000).unwrap();
        assert_eq!(pi.len(), 4);
    }

    #[test]
    fn complete_bipartite_triple_layer_count() {
        // 1 source -> 3 middle -> 3 sinks, complete between layers: 1+3+9
        let mut edges = Vec::new();
        for m in 1..=3u32 {
            edges.push((0, m));
            for s in 4..=6u32 {
                edges.push((m, s));
            }
        }
        let inst = Instance::new(7, edges, [0], 4..=6);
        let li =
            LayeredInstance::new(inst, vec![vec![0], vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        let pi = enumerate_paths(&li, 1000).unwrap();
        assert_eq!(pi.len(), 13);
        assert!(matches!(
            enumerate_paths(&li, 10),
            Err(PathLpError::PathBudgetExceeded(10))
        ));
    }

    #[test]
    fn star_lp_row_audit() {
        let li = star_layered(3);
        let pi = enumerate_paths(&li, 1000).unwrap();
        let lp = build_path_lp::<f64>(&pi, &li, 2).unwrap();
        // 1 demand row + 3 root-level capacity rows + 1 root row
        assert_eq!(lp.rows.len(), 5);
        assert!(build_path_lp::<f64>(&pi, &li, 0).is_err());
    }

    #[test]
    fn star_feasibility_boundary() {
        let li = star_layered(3);
        let pi = enumerate_paths(&li, 1000).unwrap();
        let lp = build_path_lp::<f64>(&pi, &li, 3).unwrap();
        match solve_lp_feasibility(&lp, 1e-9).unwrap() {
            Feasibility::Feasible(x) => {
                for c in &pi.nodes[0].children {
                    assert!((x.value(*c) - 1.0).abs() < 1e-7);
                }
            }
            Feasibility::Infeasible(_) => panic!("k = sink count must be feasible"),
        }
        let lp4 = build_path_lp::<f64>(&pi, &li, 4).unwrap();
        assert!(matches!(
            solve_lp_feasibility(&lp4, 1e-9).unwrap(),
            Feasibility::Infeasible(_)
        ));
    }

    #[test]
    fn max_feasible_k_star() {
        let li = star_layered(4);
        let (k, _, _) = max_feasible_k::<f64>(&li, 1000, 1e-9).unwrap();
        assert_eq!(k, 4);
    }

    #[test]
    fn bottleneck_limits_k() {
        // source -> {1,2,3} -> single bottleneck 4 is not layer-valid; use a
        // 2-layer instance where the middle vertices share only 2 sinks.
        let mut edges = vec![(0u32, 1u32), (0, 2)];
        for m in [1u32, 2] {
            for s in [3u32, 4] {
                edges.push((m, s));
            }
        }
        let inst = Instance::new(5, edges, [0], [3, 4]);
        let li = LayeredInstance::new(inst, vec![vec![0], vec![1, 2], vec![3, 4]]).unwrap();
        let (k, _, _) = max_feasible_k::<f64>(&li, 1000, 1e-9).unwrap();
        // each middle vertex needs k sinks out of 2 shared ones, and the
        // source picks k middles; fractional splitting allows k = 1 only.
        assert_eq!(k, 1);
    }
}
