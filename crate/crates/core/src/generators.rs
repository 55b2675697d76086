//! Instance factories: random layered graphs, planted-optimum instances,
//! the gap instance built around a selection tree, and the max-k-cover
//! reduction.

use rand::Rng;
use serde_json::json;

use crate::model::{Instance, InstanceJson, LayeredInstance, VertexId};

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("widths must have h+1 entries with a positive source layer")]
    BadWidths,
    #[error("set {0} has {1} elements, expected m/k = {2}")]
    BadSetSize(usize, usize, usize),
    #[error("k^2 = {0} must divide the universe size m = {1}")]
    BadDivisibility(usize, usize),
}

fn layered_from_parts(
    layers: Vec<Vec<VertexId>>,
    edges: Vec<(VertexId, VertexId)>,
    sinks: Vec<VertexId>,
    n: u32,
) -> LayeredInstance {
    let sources = layers[0].clone();
    let base = Instance::new(n, edges, sources, sinks);
    LayeredInstance::new(base, layers).expect("generator output is well-formed")
}

/// Random layered instance: `widths[i]` vertices per layer, independent
/// edges between consecutive layers, last layer = sinks.
pub fn gen_random_layered<R: Rng>(
    h: usize,
    widths: &[usize],
    edge_prob: f64,
    rng: &mut R,
) -> Result<LayeredInstance, GenError> {
    if widths.len() != h + 1 || widths[0] == 0 || widths.iter().any(|&w| w == 0) {
        return Err(GenError::BadWidths);
    }
    let mut layers = Vec::new();
    let mut next = 0u32;
    for &w in widths {
        layers.push((next..next + w as u32).collect::<Vec<_>>());
        next += w as u32;
    }
    let mut edges = Vec::new();
    for i in 0..h {
        for &u in &layers[i] {
            for &v in &layers[i + 1] {
                if rng.gen_bool(edge_prob) {
                    edges.push((u, v));
                }
            }
        }
    }
    Ok(layered_from_parts(
        layers.clone(),
        edges,
        layers[h].clone(),
        next,
    ))
}

/// Plants one complete k-ary, depth-h arborescence per source on disjoint
/// vertices, then adds independent noise edges between consecutive layers.
/// The planted trees guarantee an optimum of at least `k`.
pub fn gen_planted<R: Rng>(
    k: usize,
    h: usize,
    sources: usize,
    noise_prob: f64,
    rng: &mut R,
) -> (LayeredInstance, usize) {
    let mut layers: Vec<Vec<VertexId>> = Vec::new();
    let mut next = 0u32;
    for i in 0..=h {
        let w = sources * k.pow(i as u32);
        layers.push((next..next + w as u32).collect());
        next += w as u32;
    }
    let mut edges = Vec::new();
    for i in 0..h {
        for (j, &u) in layers[i].iter().enumerate() {
            for c in 0..k {
                edges.push((u, layers[i + 1][j * k + c]));
            }
        }
        for &u in &layers[i] {
            for &v in &layers[i + 1] {
                if noise_prob > 0.0 && rng.gen_bool(noise_prob) {
                    edges.push((u, v));
                }
            }
        }
    }
    let li = layered_from_parts(layers.clone(), edges, layers[h].clone(), next);
    (li, k)
}

/// Gap instance: a complete B-ary tree on layers `0..h-1`, plus `m` sinks in
/// layer `h`. Every sink runs an independent top-down selection (each child
/// of a selected node survives with probability `1/q`) and connects to all
/// selected layer-(h-1) leaves.
pub fn gen_hard_instance<R: Rng>(
    h: usize,
    inner_branch: usize,
    select_inv: usize,
    sink_count: usize,
    rng: &mut R,
) -> LayeredInstance {
    let b = inner_branch as u32;
    let mut layers: Vec<Vec<VertexId>> = Vec::new();
    let mut next = 0u32;
    for i in 0..h {
        let w = (inner_branch as u64).pow(i as u32) as u32;
        layers.push((next..next + w).collect());
        next += w;
    }
    let sinks: Vec<VertexId> = (next..next + sink_count as u32).collect();
    layers.push(sinks.clone());
    next += sink_count as u32;

    let mut edges = Vec::new();
    for i in 0..h.saturating_sub(1) {
        for (j, &u) in layers[i].iter().enumerate() {
            for c in 0..b {
                edges.push((u, layers[i + 1][j * inner_branch + c as usize]));
            }
        }
    }
    let leaves = &layers[h - 1];
    for &s in &sinks {
        // top-down selection at rate 1/q starting from the root
        let mut selected = vec![layers[0][0]];
        for i in 0..h.saturating_sub(1) {
            let mut nsel = Vec::new();
            for &u in &selected {
                let j = (u - layers[i][0]) as usize;
                for c in 0..inner_branch {
                    if rng.gen_range(0..select_inv) == 0 {
                        nsel.push(layers[i + 1][j * inner_branch + c]);
                    }
                }
            }
            selected = nsel;
        }
        if h == 1 {
            selected = leaves.clone();
        }
        for leaf in selected {
            edges.push((leaf, s));
        }
    }
    layered_from_parts(layers, edges, sinks, next)
}

/// Max-k-cover reduction: one source, `m/k^2` copies `v_{i,j}` per set
/// `S_i`, and sinks `s_{a,j}` per element `a` and copy index `j`. A cover of
/// the universe by `k` sets yields an optimum of `m/k`.
pub fn gen_maxkcover_instance(
    universe: usize,
    sets: &[Vec<usize>],
    k: usize,
) -> Result<Instance, GenError> {
    if universe % (k * k) != 0 {
        return Err(GenError::BadDivisibility(k * k, universe));
    }
    let copies = universe / (k * k);
    let set_size = universe / k;
    for (i, s) in sets.iter().enumerate() {
        if s.len() != set_size {
            return Err(GenError::BadSetSize(i, s.len(), set_size));
        }
    }
    let source = 0u32;
    let v_base = 1u32;
    let sink_base = v_base + (sets.len() * copies) as u32;
    let v_id = |i: usize, j: usize| v_base + (i * copies + j) as u32;
    let sink_id = |a: usize, j: usize| sink_base + (a * copies + j) as u32;
    let n = sink_base + (universe * copies) as u32;

    let mut edges = Vec::new();
    for i in 0..sets.len() {
        for j in 0..copies {
            edges.push((source, v_id(i, j)));
            for &a in &sets[i] {
                edges.push((v_id(i, j), sink_id(a, j)));
            }
        }
    }
    let sinks: Vec<VertexId> = (sink_base..n).collect();
    Ok(Instance::new(n, edges, [source], sinks))
}

/// Monte-Carlo estimate of the root survival probability for a degree-`d`
/// subtree of the B-ary selection tree: a node at depth `j < h` survives if
/// at least one of its `d` children is selected (probability `1/q`) and
/// itself survives.
pub fn survived_sinks_estimate<R: Rng>(
    tree_degree: usize,
    h: usize,
    select_inv: usize,
    trials: usize,
    rng: &mut R,
) -> f64 {
    fn survives<R: Rng>(depth: usize, h: usize, d: usize, q: usize, rng: &mut R) -> bool {
        if depth == h {
            return true;
        }
        (0..d).any(|_| rng.gen_range(0..q) == 0 && survives(depth + 1, h, d, q, rng))
    }
    let hits = (0..trials)
        .filter(|_| survives(0, h, tree_degree, select_inv, rng))
        .count();
    hits as f64 / trials as f64
}

/// Exact value of the survival recursion `p_j = 1 - (1 - p_{j+1}/q)^d`.
pub fn survival_recursion(tree_degree: usize, h: usize, select_inv: usize) -> f64 {
    let mut p = 1.0f64;
    for _ in 0..h {
        p = 1.0 - (1.0 - p / select_inv as f64).powi(tree_degree as i32);
    }
    p
}

/// Instance JSON with a provenance block recording generator and seed.
pub fn provenance_json(
    li: &LayeredInstance,
    generator: &str,
    params: serde_json::Value,
    seed: Option<u64>,
) -> InstanceJson {
    let mut out = InstanceJson::from_layered(li);
    out.provenance = Some(json!({
        "generator": generator,
        "params": params,
        "seed": seed,
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instance;
    use crate::oracle::brute_force_opt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_layered_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = gen_random_layered(2, &[1, 3, 3], 1.0, &mut rng).unwrap();
        assert_eq!(full.base.edges.len(), 3 + 9);
        let empty = gen_random_layered(2, &[1, 3, 3], 0.0, &mut rng).unwrap();
        assert!(empty.base.edges.is_empty());
        let (opt, _) = brute_force_opt(&empty.base, 4, 10_000).unwrap();
        assert_eq!(opt, 0);
    }

    #[test]
    fn random_layered_seed_reproducible() {
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gen_random_layered(3, &[2, 4, 4, 4], 0.5, &mut rng).unwrap()
        };
        assert_eq!(gen(7), gen(7));
        assert!(validate_instance(&gen(7).base).is_empty());
    }

    #[test]
    fn planted_opt_matches_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (li, k) = gen_planted(2, 2, 1, 0.0, &mut rng);
        let (opt, _) = brute_force_opt(&li.base, 8, 1_000_000).unwrap();
        assert_eq!(opt, k);
    }

    #[test]
    fn planted_two_sources_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (li, k) = gen_planted(2, 2, 2, 0.0, &mut rng);
        let (opt, witness) = brute_force_opt(&li.base, 8, 1_000_000).unwrap();
        assert_eq!(opt, k);
        assert!(crate::model::is_valid_solution(&li.base, &witness, k, 1, false).ok);
    }

    #[test]
    fn hard_instance_q1_connects_all_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let li = gen_hard_instance(3, 3, 1, 4, &mut rng);
        let leaves = li.layers[2].len();
        for &s in &li.layers[3] {
            let deg = li
                .base
                .edges
                .iter()
                .filter(|&&(_, v)| v == s)
                .count();
            assert_eq!(deg, leaves);
        }
        assert!(validate_instance(&li.base).is_empty());
    }

    #[test]
    fn hard_instance_selection_mean() {
        // per-sink leaf degree concentrates around (B/q)^(h-1)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let li = gen_hard_instance(2, 64, 8, 50, &mut rng);
        let mut total = 0usize;
        for &s in &li.layers[2] {
            total += li.base.edges.iter().filter(|&&(_, v)| v == s).count();
        }
        let mean = total as f64 / 50.0;
        assert!((mean - 8.0).abs() < 3.0, "mean leaf degree {mean}");
    }

    #[test]
    fn maxkcover_yes_instance_opt() {
        // m = 4, k = 2, two disjoint sets of size 2 => OPT = m/k = 2
        let sets = vec![vec![0, 1], vec![2, 3]];
        let inst = gen_maxkcover_instance(4, &sets, 2).unwrap();
        assert_eq!(inst.vertex_count, 1 + 2 + 4);
        let (opt, _) = brute_force_opt(&inst, 4, 1_000_000).unwrap();
        assert_eq!(opt, 2);
    }

    #[test]
    fn maxkcover_single_set_k1() {
        let sets = vec![vec![0, 1, 2]];
        let inst = gen_maxkcover_instance(3, &sets, 1).unwrap();
        let (opt, _) = brute_force_opt(&inst, 4, 1_000_000).unwrap();
        assert_eq!(opt, 3);
    }

    #[test]
    fn maxkcover_rejects_bad_sets() {
        assert!(gen_maxkcover_instance(4, &[vec![0]], 2).is_err());
        assert!(gen_maxkcover_instance(5, &[vec![0, 1]], 2).is_err());
    }

    #[test]
    fn survival_recursion_h1_closed_form() {
        let q = 8usize;
        let d = 8usize;
        let exact = 1.0 - (1.0 - 1.0 / q as f64).powi(d as i32);
        assert!((survival_recursion(d, 1, q) - exact).abs() < 1e-12);
    }

    #[test]
    fn survival_estimate_tracks_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let est = survived_sinks_estimate(8, 2, 8, 20_000, &mut rng);
        let exact = survival_recursion(8, 2, 8);
        // 3 sigma of a Bernoulli mean over 20k trials
        let sigma = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((est - exact).abs() < 3.0 * sigma + 0.01);
    }

    #[test]
    fn survival_vanishes_with_large_q() {
        assert!(survival_recursion(8, 3, 10_000) < 1e-6);
    }

    #[test]
    fn provenance_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let li = gen_random_layered(2, &[1, 2, 2], 0.8, &mut rng).unwrap();
        let j = provenance_json(&li, "random", serde_json::json!({"h": 2}), Some(11));
        let text = serde_json::to_string(&j).unwrap();
        let back: InstanceJson = serde_json::from_str(&text).unwrap();
        let li2 = back.to_layered().unwrap().unwrap();
        assert_eq!(li2, li);
    }
}
