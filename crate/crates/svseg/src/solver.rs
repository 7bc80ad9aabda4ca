//! Exact minimization of the labeling energy by reduction to s-t
//! min-cut, plus a brute-force enumeration oracle.
//!
//! Labels map to cut sides: a node on the source side is human. Each
//! node gets a source arc carrying its background cost and a sink arc
//! carrying its human cost; each spatial edge becomes a symmetric arc
//! pair carrying the contrast weight; each clique's robust majority
//! penalty decomposes exactly into two auxiliary nodes:
//!
//! ```text
//! phi(N) = min(w*n0, lambda) + min(w*n1, lambda) - lambda,   w = lambda/q
//! ```
//!
//! where `n0`/`n1` count the clique's background/human members. The
//! first term is an auxiliary node fed by the source (cap `lambda`)
//! pointing at each member (cap `w`); the second mirrors it into the
//! sink. The decomposition equals the truncated penalty whenever
//! `q <= m/2` — always true here since `q` is a tenth of the clique
//! size — because the majority term then sits at its cap; the leftover
//! `-lambda` per clique is tracked as a constant offset, so minimum cut
//! value plus offset is exactly the minimum energy.
//!
//! The max-flow routine is shortest-augmenting-path (BFS) over an arc
//! list in construction order, which fixes the returned labeling among
//! degenerate minima: the source-reachable residual set is the
//! source-side-minimal minimum cut.

use crate::energy::{robust_pn, PotentialSet};
use crate::stgraph::{Labeling, STGraph};
use crate::{Error, Result};

/// Residual capacities below this are treated as saturated.
const RESIDUAL_EPS: f64 = 1e-12;

/// A directed flow network with residual bookkeeping.
///
/// Arcs are stored in pairs: arc `2k` is a forward arc, arc `2k+1` its
/// zero-capacity reverse. All capacities are finite and non-negative.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<u32>>,
    to: Vec<u32>,
    cap: Vec<f64>,
    orig_cap: Vec<f64>,
    source: usize,
    sink: usize,
    augmentations: usize,
}

impl FlowNetwork {
    pub fn new(node_count: usize, source: usize, sink: usize) -> Self {
        assert!(source < node_count && sink < node_count && source != sink);
        FlowNetwork {
            adj: vec![Vec::new(); node_count],
            to: Vec::new(),
            cap: Vec::new(),
            orig_cap: Vec::new(),
            source,
            sink,
            augmentations: 0,
        }
    }

    /// Add a forward arc and its residual partner.
    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) -> Result<()> {
        if !capacity.is_finite() || capacity < 0.0 {
            return Err(Error::invalid(format!(
                "arc capacity {capacity} must be finite and non-negative"
            )));
        }
        let e = self.to.len() as u32;
        self.to.push(to as u32);
        self.cap.push(capacity);
        self.orig_cap.push(capacity);
        self.adj[from].push(e);
        self.to.push(from as u32);
        self.cap.push(0.0);
        self.orig_cap.push(0.0);
        self.adj[to].push(e + 1);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn arc_count(&self) -> usize {
        self.to.len() / 2
    }

    pub fn augmentations(&self) -> usize {
        self.augmentations
    }

    /// BFS for the shortest augmenting path; returns per-node incoming
    /// arc or None when the sink is unreachable.
    fn bfs(&self) -> Option<Vec<u32>> {
        let mut parent_arc = vec![u32::MAX; self.adj.len()];
        let mut queue = std::collections::VecDeque::from([self.source]);
        parent_arc[self.source] = u32::MAX - 1; // visited marker
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e as usize] as usize;
                if parent_arc[v] == u32::MAX && self.cap[e as usize] > RESIDUAL_EPS {
                    parent_arc[v] = e;
                    if v == self.sink {
                        return Some(parent_arc);
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Run max-flow to completion and return the flow value.
    pub fn run_max_flow(&mut self) -> f64 {
        let mut flow = 0.0;
        while let Some(parent_arc) = self.bfs() {
            // find the bottleneck along sink -> source
            let mut bottleneck = f64::INFINITY;
            let mut v = self.sink;
            while v != self.source {
                let e = parent_arc[v] as usize;
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.to[e ^ 1] as usize;
            }
            let mut v = self.sink;
            while v != self.source {
                let e = parent_arc[v] as usize;
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.to[e ^ 1] as usize;
            }
            flow += bottleneck;
            self.augmentations += 1;
        }
        flow
    }

    /// Nodes reachable from the source in the residual graph. After
    /// max-flow this is the source side of the minimum cut.
    pub fn source_side(&self) -> Vec<bool> {
        let mut reach = vec![false; self.adj.len()];
        let mut queue = std::collections::VecDeque::from([self.source]);
        reach[self.source] = true;
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e as usize] as usize;
                if !reach[v] && self.cap[e as usize] > RESIDUAL_EPS {
                    reach[v] = true;
                    queue.push_back(v);
                }
            }
        }
        reach
    }

    /// Capacity of the cut induced by a source-side indicator, using the
    /// original (pre-flow) capacities.
    pub fn cut_capacity(&self, source_side: &[bool]) -> f64 {
        let mut total = 0.0;
        for u in 0..self.adj.len() {
            if !source_side[u] {
                continue;
            }
            for &e in &self.adj[u] {
                if e % 2 == 0 && !source_side[self.to[e as usize] as usize] {
                    total += self.orig_cap[e as usize];
                }
            }
        }
        total
    }
}

/// Maximum s-t flow of a network (consumes the residual capacities).
pub fn max_flow(network: &mut FlowNetwork) -> f64 {
    network.run_max_flow()
}

/// Size and effort counters of one solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub network_nodes: usize,
    pub network_arcs: usize,
    pub augmentations: usize,
}

/// A minimizing labeling with its energy and the flow certificate.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub labeling: Labeling,
    /// Minimum energy; equals `flow_value` plus the constant offset
    /// recorded while building the network (for the oracle, the offset
    /// is zero and `flow_value` mirrors `energy`).
    pub energy: f64,
    pub flow_value: f64,
    pub stats: SolveStats,
}

fn validate(graph: &STGraph, pots: &PotentialSet) -> Result<()> {
    pots.check_against(graph)?;
    for i in 0..graph.nodes.len() {
        for label in [true, false] {
            if !pots.unary.cost(i, label).is_finite() {
                return Err(Error::invalid(format!("non-finite unary cost at node {i}")));
            }
        }
    }
    for (e, &w) in pots.pairwise_weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("bad pairwise weight {w} at edge {e}")));
        }
    }
    for (c, &(lambda, q)) in pots.clique_params.iter().enumerate() {
        if !lambda.is_finite() || lambda < 0.0 || !q.is_finite() || q <= 0.0 {
            return Err(Error::invalid(format!(
                "bad clique parameters ({lambda}, {q}) at clique {c}"
            )));
        }
        let m = graph.cliques[c].nodes.len() as f64;
        if q > m / 2.0 {
            return Err(Error::invalid(format!(
                "clique {c} knee {q} exceeds half its size {m}; the cut \
                 decomposition would be inexact"
            )));
        }
    }
    Ok(())
}

/// Build the cut network for an energy; returns the network and the
/// constant offset such that `energy = cut + offset`.
pub fn build_network(graph: &STGraph, pots: &PotentialSet) -> Result<(FlowNetwork, f64)> {
    validate(graph, pots)?;
    let n = graph.nodes.len();
    let clique_count = if pots.options.use_higher_order {
        graph.cliques.len()
    } else {
        0
    };
    let source = n + 2 * clique_count;
    let sink = source + 1;
    let mut net = FlowNetwork::new(sink + 1, source, sink);
    let mut offset = 0.0;

    // unary: source arc pays the background cost when the node falls to
    // the sink side; sink arc pays the human cost on the source side
    for i in 0..n {
        net.add_arc(source, i, pots.unary.cost(i, false))?;
        net.add_arc(i, sink, pots.unary.cost(i, true))?;
    }
    if pots.options.use_pairwise {
        for (edge, &w) in graph.spatial_edges.iter().zip(&pots.pairwise_weights) {
            net.add_arc(edge.a, edge.b, w)?;
            net.add_arc(edge.b, edge.a, w)?;
        }
    }
    if pots.options.use_higher_order {
        for (c, (clique, &(lambda, q))) in
            graph.cliques.iter().zip(&pots.clique_params).enumerate()
        {
            let w = lambda / q;
            let aux_bg = n + 2 * c;
            let aux_fg = aux_bg + 1;
            net.add_arc(source, aux_bg, lambda)?;
            net.add_arc(aux_fg, sink, lambda)?;
            for &i in &clique.nodes {
                net.add_arc(aux_bg, i, w)?;
                net.add_arc(i, aux_fg, w)?;
            }
            offset -= lambda;
        }
    }
    Ok((net, offset))
}

/// Exactly minimize the energy over all binary labelings.
///
/// Among degenerate minima the source-side-minimal one is returned
/// (fewest human labels compatible with the minimum, under the fixed
/// arc order).
pub fn minimize(graph: &STGraph, pots: &PotentialSet) -> Result<SolveResult> {
    let (mut net, offset) = build_network(graph, pots)?;
    let flow = net.run_max_flow();
    let reachable = net.source_side();
    let labeling = Labeling(reachable[..graph.nodes.len()].to_vec());
    Ok(SolveResult {
        labeling,
        energy: flow + offset,
        flow_value: flow,
        stats: SolveStats {
            network_nodes: net.node_count(),
            network_arcs: net.arc_count(),
            augmentations: net.augmentations(),
        },
    })
}

/// Largest instance the oracle will enumerate.
pub const BRUTE_FORCE_NODE_LIMIT: usize = 22;

/// Exhaustive minimization over all `2^n` labelings, with its own
/// term-by-term energy summation. Ties go to the lexicographically
/// smallest labeling (background before human, in node order).
pub fn brute_force_min(graph: &STGraph, pots: &PotentialSet) -> Result<SolveResult> {
    validate(graph, pots)?;
    let n = graph.nodes.len();
    if n > BRUTE_FORCE_NODE_LIMIT {
        return Err(Error::invalid(format!(
            "{n} nodes exceed the brute-force limit of {BRUTE_FORCE_NODE_LIMIT}"
        )));
    }
    let mut best_energy = f64::INFINITY;
    let mut best_mask = 0u64;
    let mut labels = vec![false; n];
    for mask in 0u64..1u64 << n {
        // bit (n-1-i) carries node i, so ascending masks enumerate
        // labelings in lexicographic order
        for (i, l) in labels.iter_mut().enumerate() {
            *l = mask >> (n - 1 - i) & 1 == 1;
        }
        let mut e = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            e += pots.unary.cost(i, l);
        }
        if pots.options.use_pairwise {
            for (edge, &w) in graph.spatial_edges.iter().zip(&pots.pairwise_weights) {
                if labels[edge.a] != labels[edge.b] {
                    e += w;
                }
            }
        }
        if pots.options.use_higher_order {
            for (clique, &(lambda, q)) in graph.cliques.iter().zip(&pots.clique_params) {
                let pos = clique.nodes.iter().filter(|&&i| labels[i]).count();
                e += robust_pn(lambda, q, pos.min(clique.nodes.len() - pos));
            }
        }
        // strict improvement keeps the lexicographically first optimum
        if e < best_energy {
            best_energy = e;
            best_mask = mask;
        }
    }
    let labeling = Labeling(
        (0..n)
            .map(|i| best_mask >> (n - 1 - i) & 1 == 1)
            .collect(),
    );
    Ok(SolveResult {
        labeling,
        energy: best_energy,
        flow_value: best_energy,
        stats: SolveStats::default(),
    })
}

// ---------------------------------------------------------------------------
// Random instances (used by the self-check tooling and the test suites)
// ---------------------------------------------------------------------------

use crate::energy::{PotentialOptions, UnaryTable};
use crate::stgraph::{Clique, Node, SpatialEdge};
use rand::Rng;

/// Generate a random small energy instance: a synthetic graph (features
/// and pixels are placeholders) plus coherent potentials. Every node is
/// assigned to exactly one clique, `q` is a tenth of the clique size,
/// and pairwise weights follow `exp(-distance)` with unit `beta_p`.
pub fn random_instance(
    rng: &mut impl Rng,
    max_nodes: usize,
    max_cliques: usize,
) -> (STGraph, PotentialSet) {
    let n = rng.gen_range(1..=max_nodes.max(1));
    let clique_count = rng.gen_range(1..=max_cliques.min(n).max(1));

    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            frame_index: 0,
            supervoxel_id: 0, // rewritten below
            pixels: vec![i as u32],
            feature: [0.0; 75],
        })
        .collect();

    // random distinct undirected pairs
    let mut pairs = std::collections::BTreeSet::new();
    if n >= 2 {
        for _ in 0..rng.gen_range(0..=2 * n) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    let spatial_edges: Vec<SpatialEdge> = pairs
        .into_iter()
        .map(|(a, b)| SpatialEdge {
            a,
            b,
            distance: rng.gen_range(0.0..3.0),
        })
        .collect();

    // partition nodes into cliques
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clique_count];
    for i in 0..n {
        members[rng.gen_range(0..clique_count)].push(i);
    }
    members.retain(|m| !m.is_empty());
    let mut nodes = nodes;
    let cliques: Vec<Clique> = members
        .into_iter()
        .enumerate()
        .map(|(c, m)| {
            for &i in &m {
                nodes[i].supervoxel_id = c as u32;
            }
            let size = m.len() as f64;
            Clique {
                supervoxel_id: c as u32,
                nodes: m,
                sigma: 0.0,
                lambda_max: rng.gen_range(0.0..size.max(1.0)),
                q: 0.1 * size,
            }
        })
        .collect();

    let graph = STGraph {
        nodes,
        spatial_edges,
        cliques,
        beta_p: 1.0,
        beta_s: 1.0,
        keyframes: vec![0],
    };
    let unary = UnaryTable::from_probabilities((0..n).map(|_| rng.gen_range(0.02..0.98)));
    let pairwise_weights = graph
        .spatial_edges
        .iter()
        .map(|e| (-e.distance).exp())
        .collect();
    let clique_params = graph.cliques.iter().map(|c| (c.lambda_max, c.q)).collect();
    let pots = PotentialSet {
        unary,
        pairwise_weights,
        clique_params,
        options: PotentialOptions::default(),
    };
    (graph, pots)
}
