//! Potentials of the binary labeling energy and its exact evaluation.
//!
//! The energy of a labeling Y over the spatio-temporal graph is
//!
//! ```text
//! E(Y) = sum_nodes unary + sum_edges pairwise + sum_cliques higher-order
//! ```
//!
//! - The unary cost of a node is the negative log of its human
//!   probability (label human) or of the complement (label other). The
//!   probability blends two cues, equally weighted: the fraction of the
//!   node's pixels inside the frame's detection-guided proposal mask,
//!   and the mean per-pixel confidence of the appearance model. On the
//!   first training round there is no model yet and the fraction is
//!   used alone.
//! - The pairwise cost of a spatial edge is `exp(-beta_p * D)` when the
//!   endpoints disagree, with `D` the feature distance, zero otherwise.
//! - The higher-order cost of a supervoxel clique is the robust
//!   truncated-linear majority penalty: with `N` the minority-label node
//!   count, it is `N * lambda_max / Q` for `N <= Q` and `lambda_max`
//!   beyond, so a few dissenting nodes are charged linearly and heavy
//!   splits are not punished further.
//!
//! Pairwise and higher-order families can be switched off independently
//! for ablation runs; with both off, minimizing the energy is plain
//! per-node thresholding (the image-based baseline).

use std::collections::BTreeMap;

use crate::stgraph::{Clique, Labeling, Node, SpatialEdge, STGraph};
use crate::videoio::{box_iou, BinaryMask, DetectionBox, ProposalSet, RegionProposal};
use crate::{Error, Result};

/// Probability clamp keeping the log-costs finite.
pub const PROBABILITY_EPSILON: f64 = 1e-6;

/// Detections with scores strictly above this take part in proposal
/// selection.
pub const DEFAULT_DET_THRESHOLD: f64 = -1.0;

/// Weight of the proposal-mask cue in the human probability.
pub const LAMBDA_R: f64 = 0.5;

/// Weight of the confidence cue in the human probability.
pub const LAMBDA_E: f64 = 0.5;

/// Per-pixel human confidence of one frame, each value in [0, 1].
#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (width * height) as usize {
            return Err(Error::Dimension(format!(
                "{} confidence values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "confidence {bad} outside [0, 1]"
            )));
        }
        Ok(ConfidenceMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get_linear(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Mean confidence over a pixel set; 0 for an empty set.
    pub fn mean_over(&self, pixels: &[u32]) -> f64 {
        if pixels.is_empty() {
            return 0.0;
        }
        pixels.iter().map(|&p| self.values[p as usize]).sum::<f64>() / pixels.len() as f64
    }

    /// Threshold at a strict `> level` into a binary mask.
    pub fn threshold(&self, level: f64) -> BinaryMask {
        let mut mask = BinaryMask::new(self.width, self.height);
        for (i, &v) in self.values.iter().enumerate() {
            if v > level {
                mask.set_linear(i, true);
            }
        }
        mask
    }
}

/// Clamped per-node human probabilities with their log-cost pairs.
#[derive(Debug, Clone)]
pub struct UnaryTable {
    p: Vec<f64>,
    phi: Vec<(f64, f64)>,
}

impl UnaryTable {
    /// Build from per-node probabilities, clamping into
    /// `[PROBABILITY_EPSILON, 1 - PROBABILITY_EPSILON]`.
    pub fn from_probabilities(probabilities: impl IntoIterator<Item = f64>) -> Self {
        let p: Vec<f64> = probabilities
            .into_iter()
            .map(|v| v.clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON))
            .collect();
        let phi = p
            .iter()
            .map(|&v| (unary_potential(v, true), unary_potential(v, false)))
            .collect();
        UnaryTable { p, phi }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Clamped human probability of a node.
    pub fn probability(&self, node: usize) -> f64 {
        self.p[node]
    }

    /// Log-cost of assigning the node the given label.
    pub fn cost(&self, node: usize, label: bool) -> f64 {
        let (pos, neg) = self.phi[node];
        if label {
            pos
        } else {
            neg
        }
    }
}

/// Which potential families participate in the energy.
#[derive(Debug, Clone, Copy)]
pub struct PotentialOptions {
    pub use_pairwise: bool,
    pub use_higher_order: bool,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        PotentialOptions {
            use_pairwise: true,
            use_higher_order: true,
        }
    }
}

impl PotentialOptions {
    /// Plain per-node classification: no pairwise, no higher-order.
    pub fn unary_only() -> Self {
        PotentialOptions {
            use_pairwise: false,
            use_higher_order: false,
        }
    }
}

/// Everything the minimizer needs: unary costs, per-edge pairwise
/// weights, per-clique (lambda_max, Q), and the ablation flags.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    pub unary: UnaryTable,
    /// `exp(-beta_p * D)` per spatial edge, aligned with the graph's
    /// edge list; each weight is in [0, 1].
    pub pairwise_weights: Vec<f64>,
    /// `(lambda_max, q)` per clique, aligned with the graph's cliques.
    pub clique_params: Vec<(f64, f64)>,
    pub options: PotentialOptions,
}

impl PotentialSet {
    /// Assemble potentials for a graph from the per-key-frame proposal
    /// masks and, from the second training round on, confidence maps.
    ///
    /// `proposal_masks` maps key-frame index to that frame's mask; a
    /// missing entry means no detection fired there (mask fraction 0).
    /// When `confidence` is given it must cover every key frame.
    pub fn build(
        graph: &STGraph,
        proposal_masks: &BTreeMap<usize, BinaryMask>,
        confidence: Option<&BTreeMap<usize, ConfidenceMap>>,
        options: PotentialOptions,
    ) -> Result<Self> {
        if let Some(conf) = confidence {
            for &k in &graph.keyframes {
                if !conf.contains_key(&k) {
                    return Err(Error::invalid(format!(
                        "confidence map missing for key frame {k}"
                    )));
                }
            }
        }
        let probabilities: Vec<f64> = graph
            .nodes
            .iter()
            .map(|node| {
                let mask = proposal_masks.get(&node.frame_index);
                let conf = confidence.map(|c| &c[&node.frame_index]);
                human_probability_raw(node, mask, conf)
            })
            .collect();
        let unary = UnaryTable::from_probabilities(probabilities);
        let pairwise_weights = graph
            .spatial_edges
            .iter()
            .map(|e| (-graph.beta_p * e.distance).exp())
            .collect();
        let clique_params = graph.cliques.iter().map(|c| (c.lambda_max, c.q)).collect();
        Ok(PotentialSet {
            unary,
            pairwise_weights,
            clique_params,
            options,
        })
    }

    /// Check alignment with the graph the set was built from.
    pub fn check_against(&self, graph: &STGraph) -> Result<()> {
        if self.unary.len() != graph.nodes.len()
            || self.pairwise_weights.len() != graph.spatial_edges.len()
            || self.clique_params.len() != graph.cliques.len()
        {
            return Err(Error::Dimension(format!(
                "potential set sized {}/{}/{} against a graph sized {}/{}/{}",
                self.unary.len(),
                self.pairwise_weights.len(),
                self.clique_params.len(),
                graph.nodes.len(),
                graph.spatial_edges.len(),
                graph.cliques.len()
            )));
        }
        Ok(())
    }
}

/// Score and pick the best proposal for one detection box: tight-box IoU
/// plus, when a confidence map is given, the mean confidence over the
/// proposal's pixels. Ties keep the earliest proposal.
pub fn select_proposal<'a>(
    bbox: &DetectionBox,
    proposals: &'a [RegionProposal],
    conf: Option<&ConfidenceMap>,
) -> Result<&'a RegionProposal> {
    if proposals.is_empty() {
        return Err(Error::invalid(format!(
            "no proposals to select from for frame {}",
            bbox.frame_index
        )));
    }
    let hbox = bbox.pixel_box();
    let mut best: Option<(f64, &RegionProposal)> = None;
    for p in proposals {
        let mut score = box_iou(&p.tight_box, &hbox);
        if let Some(conf) = conf {
            let pixels = mask_pixels(&p.mask);
            score += conf.mean_over(&pixels);
        }
        // strict > keeps the lowest index on ties
        if best.map_or(true, |(s, _)| score > s) {
            best = Some((score, p));
        }
    }
    Ok(best.unwrap().1)
}

fn mask_pixels(mask: &BinaryMask) -> Vec<u32> {
    (0..mask.pixel_count() as u32)
        .filter(|&p| mask.get_linear(p as usize))
        .collect()
}

/// The frame's proposal mask: the pixel union of the selected proposal
/// of every detection on this frame scoring strictly above
/// `det_threshold`. Detections on frames without proposals contribute
/// nothing. Returns an all-background mask when nothing qualifies.
pub fn build_proposal_mask(
    frame_index: u32,
    width: u32,
    height: u32,
    detections: &[DetectionBox],
    proposals: &ProposalSet,
    conf: Option<&ConfidenceMap>,
    det_threshold: f64,
) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let candidates = proposals.for_frame(frame_index);
    if candidates.is_empty() {
        return mask;
    }
    for d in detections {
        if d.frame_index != frame_index || d.score <= det_threshold {
            continue;
        }
        let selected = select_proposal(d, candidates, conf)
            .expect("candidate list checked non-empty");
        mask.union_with(&selected.mask)
            .expect("proposal masks share frame dimensions");
    }
    mask
}

fn human_probability_raw(
    node: &Node,
    r_k: Option<&BinaryMask>,
    conf: Option<&ConfidenceMap>,
) -> f64 {
    let inside = match r_k {
        Some(mask) => node
            .pixels
            .iter()
            .filter(|&&p| mask.get_linear(p as usize))
            .count(),
        None => 0,
    };
    let eta = inside as f64 / node.pixels.len() as f64;
    match conf {
        Some(conf) => LAMBDA_R * eta + LAMBDA_E * conf.mean_over(&node.pixels),
        None => eta,
    }
}

/// Human probability of one node: the in-mask pixel fraction blended
/// with the mean model confidence (first round: the fraction alone),
/// clamped away from 0 and 1.
pub fn human_probability(
    node: &Node,
    r_k: &BinaryMask,
    conf: Option<&ConfidenceMap>,
) -> f64 {
    human_probability_raw(node, Some(r_k), conf)
        .clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON)
}

/// Log-cost of labeling a node with probability `p`: `-ln p` for human,
/// `-ln (1-p)` for other.
pub fn unary_potential(p: f64, label: bool) -> f64 {
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Contrast-weighted disagreement cost of one spatial edge.
pub fn pairwise_potential(edge: &SpatialEdge, label_a: bool, label_b: bool, beta_p: f64) -> f64 {
    if label_a == label_b {
        0.0
    } else {
        (-beta_p * edge.distance).exp()
    }
}

/// Robust truncated-linear majority penalty: `n_minority` is charged
/// `lambda_max / q` per node up to the knee `q`, then capped.
pub fn robust_pn(lambda_max: f64, q: f64, n_minority: usize) -> f64 {
    let n = n_minority as f64;
    if n <= q {
        n * lambda_max / q
    } else {
        lambda_max
    }
}

/// Higher-order cost of a clique under a labeling of the whole graph.
pub fn higher_order_potential(clique: &Clique, labeling: &Labeling) -> f64 {
    let positive = clique.nodes.iter().filter(|&&i| labeling.0[i]).count();
    let minority = positive.min(clique.nodes.len() - positive);
    robust_pn(clique.lambda_max, clique.q, minority)
}

/// Exact energy of a labeling: unary everywhere, pairwise and
/// higher-order terms as flagged.
pub fn total_energy(graph: &STGraph, pots: &PotentialSet, labeling: &Labeling) -> Result<f64> {
    pots.check_against(graph)?;
    if labeling.len() != graph.nodes.len() {
        return Err(Error::Dimension(format!(
            "labeling covers {} nodes, graph has {}",
            labeling.len(),
            graph.nodes.len()
        )));
    }
    let mut energy = 0.0;
    for (i, &label) in labeling.0.iter().enumerate() {
        energy += pots.unary.cost(i, label);
    }
    if pots.options.use_pairwise {
        for (edge, &w) in graph.spatial_edges.iter().zip(&pots.pairwise_weights) {
            if labeling.0[edge.a] != labeling.0[edge.b] {
                energy += w;
            }
        }
    }
    if pots.options.use_higher_order {
        for clique in &graph.cliques {
            energy += higher_order_potential(clique, labeling);
        }
    }
    Ok(energy)
}
