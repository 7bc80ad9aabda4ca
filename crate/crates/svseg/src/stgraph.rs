//! The spatio-temporal graph: superpixel nodes on key frames, spatial
//! edges between touching superpixels, and supervoxel cliques tying the
//! key frames together.
//!
//! Each node is one 4-connected projection of a supervoxel into one key
//! frame and carries a 75-dimensional appearance descriptor: three
//! L1-normalized 25-bin histograms over (a) quantized RGB, (b) quantized
//! Lab, and (c) unsigned gradient orientations, concatenated. Distances
//! between descriptors are Euclidean. The graph also precomputes the
//! statistics the energy terms need: the pairwise contrast scale `beta_p`
//! (reciprocal mean edge distance), per-clique color variance `sigma`,
//! the clique scale `beta_s` (reciprocal mean variance), and each
//! clique's ceiling `lambda_max` and truncation knee `q`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::color::{luminance, rgb_to_lab};
use crate::supervoxel::{Shot, SupervoxelMap};
use crate::videoio::{Frame, FrameSequence};
use crate::{Error, Result};

/// Dimensionality of the node descriptor: three 25-bin blocks.
pub const FEATURE_DIM: usize = 75;

const BLOCK: usize = 25;

/// One superpixel node of the graph.
#[derive(Debug, Clone)]
pub struct Node {
    /// Frame the superpixel lives in (an index into the video).
    pub frame_index: usize,
    /// Supervoxel the superpixel projects from.
    pub supervoxel_id: u32,
    /// Sorted row-major pixel indices, non-empty and 4-connected.
    pub pixels: Vec<u32>,
    /// 75-dim appearance descriptor; each 25-bin block sums to 1.
    pub feature: [f64; FEATURE_DIM],
}

/// An undirected edge between two superpixels of the same frame that
/// share a pixel boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialEdge {
    pub a: usize,
    pub b: usize,
    /// Euclidean feature distance between the endpoints.
    pub distance: f64,
}

/// All nodes of one supervoxel, with its higher-order statistics.
#[derive(Debug, Clone)]
pub struct Clique {
    pub supervoxel_id: u32,
    /// Indices into [`STGraph::nodes`].
    pub nodes: Vec<usize>,
    /// Mean per-channel RGB variance over the clique's key-frame pixels.
    pub sigma: f64,
    /// Cost ceiling: node count times `exp(-beta_s * sigma)`.
    pub lambda_max: f64,
    /// Truncation knee: a tenth of the node count.
    pub q: f64,
}

/// The graph one shot is solved on.
#[derive(Debug, Clone)]
pub struct STGraph {
    /// Nodes in (frame, supervoxel id, component) lexicographic order.
    pub nodes: Vec<Node>,
    pub spatial_edges: Vec<SpatialEdge>,
    /// One clique per supervoxel present on the key frames, ascending id.
    pub cliques: Vec<Clique>,
    /// Pairwise contrast scale: 1 / mean spatial-edge distance.
    pub beta_p: f64,
    /// Clique scale: 1 / mean clique variance.
    pub beta_s: f64,
    /// The key frames the nodes were built from, ascending.
    pub keyframes: Vec<usize>,
}

/// A binary node labeling: `true` = human, `false` = other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling(pub Vec<bool>);

impl Labeling {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Map an RGB triple to one of 25 bins: a 3x3x3 grid of color cells with
/// the two extreme corners (darkest and brightest) folded into their
/// nearest remaining cells, which renumbers cells 1..=25 to bins 0..=24.
fn rgb_bin(rgb: [u8; 3]) -> usize {
    let level = |c: u8| (c as usize * 3) / 256;
    let cell = level(rgb[0]) * 9 + level(rgb[1]) * 3 + level(rgb[2]);
    cell.saturating_sub(1).min(BLOCK - 1)
}

/// Same folding scheme over Lab, with L in [0, 100] and a, b in
/// [-128, 128].
fn lab_bin(lab: [f64; 3]) -> usize {
    let level = |v: f64, lo: f64, hi: f64| -> usize {
        (((v - lo) * 3.0 / (hi - lo)).floor() as i64).clamp(0, 2) as usize
    };
    let cell = level(lab[0], 0.0, 100.0) * 9
        + level(lab[1], -128.0, 128.0) * 3
        + level(lab[2], -128.0, 128.0);
    cell.saturating_sub(1).min(BLOCK - 1)
}

/// Per-pixel luminance gradients of a frame, central differences with
/// replicated borders.
struct Gradients {
    gx: Vec<f64>,
    gy: Vec<f64>,
}

fn frame_gradients(frame: &Frame) -> Gradients {
    let (w, h) = (frame.width(), frame.height());
    let lum: Vec<f64> = (0..(w * h) as usize)
        .map(|i| {
            let [r, g, b] = frame.get_linear(i);
            luminance(r, g, b)
        })
        .collect();
    let at = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        lum[(y * w + x) as usize]
    };
    let mut gx = vec![0.0; lum.len()];
    let mut gy = vec![0.0; lum.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = (y as u32 * w + x as u32) as usize;
            gx[i] = at(x + 1, y) - at(x - 1, y);
            gy[i] = at(x, y + 1) - at(x, y - 1);
        }
    }
    Gradients { gx, gy }
}

fn features_with_gradients(frame: &Frame, grads: &Gradients, pixels: &[u32]) -> [f64; FEATURE_DIM] {
    debug_assert!(!pixels.is_empty());
    let mut feature = [0.0; FEATURE_DIM];
    let n = pixels.len() as f64;
    let mut grad_total = 0.0;
    for &p in pixels {
        let rgb = frame.get_linear(p as usize);
        feature[rgb_bin(rgb)] += 1.0 / n;
        feature[BLOCK + lab_bin(rgb_to_lab(rgb[0], rgb[1], rgb[2]))] += 1.0 / n;

        let (gx, gy) = (grads.gx[p as usize], grads.gy[p as usize]);
        let magnitude = gx.hypot(gy);
        if magnitude > 0.0 {
            // unsigned orientation in [0, pi)
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta = 0.0;
            }
            let bin = ((theta / PI * BLOCK as f64) as usize).min(BLOCK - 1);
            feature[2 * BLOCK + bin] += magnitude;
            grad_total += magnitude;
        }
    }
    if grad_total > 0.0 {
        for bin in &mut feature[2 * BLOCK..] {
            *bin /= grad_total;
        }
    } else {
        for bin in &mut feature[2 * BLOCK..] {
            *bin = 1.0 / BLOCK as f64;
        }
    }
    feature
}

/// The 75-dim descriptor of a pixel set within a frame.
pub fn node_features(frame: &Frame, pixels: &[u32]) -> Result<[f64; FEATURE_DIM]> {
    if pixels.is_empty() {
        return Err(Error::invalid("node feature of an empty pixel set"));
    }
    let grads = frame_gradients(frame);
    Ok(features_with_gradients(frame, &grads, pixels))
}

/// Euclidean distance between two descriptors.
pub fn node_distance(a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

/// Split a pixel set into its 4-connected components, each sorted,
/// ordered by smallest member pixel.
fn split_components(width: u32, height: u32, pixels: &[u32]) -> Vec<Vec<u32>> {
    let set: BTreeSet<u32> = pixels.iter().copied().collect();
    let mut remaining = set.clone();
    let mut components = Vec::new();
    while let Some(&start) = remaining.iter().next() {
        let mut component = vec![start];
        remaining.remove(&start);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % width, p / width);
            let mut push = |np: u32| {
                if remaining.remove(&np) {
                    component.push(np);
                    queue.push_back(np);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < width {
                push(p + 1);
            }
            if y > 0 {
                push(p - width);
            }
            if y + 1 < height {
                push(p + width);
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// Build the graph for one shot over its chosen key frames.
///
/// Errors when `keyframes` is empty, not strictly increasing, or not
/// contained in the shot.
pub fn build_graph(
    shot: &Shot,
    keyframes: &[usize],
    svmap: &SupervoxelMap,
    frames: &FrameSequence,
) -> Result<STGraph> {
    if keyframes.is_empty() {
        return Err(Error::invalid("shot has no key frames"));
    }
    for pair in keyframes.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::invalid("key frames must be strictly increasing"));
        }
    }
    if keyframes[0] < shot.start || *keyframes.last().unwrap() >= shot.end {
        return Err(Error::invalid(format!(
            "key frames must lie within the shot [{}, {})",
            shot.start, shot.end
        )));
    }
    if shot.end > frames.len() || svmap.frame_count() != frames.len() {
        return Err(Error::Dimension(format!(
            "shot end {} vs {} video frames vs {} supervoxel frames",
            shot.end,
            frames.len(),
            svmap.frame_count()
        )));
    }
    let (w, h) = (frames.width(), frames.height());

    // nodes, in (frame, supervoxel id, component) order
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for &k in keyframes {
        let frame = frames.frame(k);
        let grads = frame_gradients(frame);
        let first_node = nodes.len();
        for id in svmap.ids_in_frame(k) {
            let pixels = svmap.pixels(k, id).expect("id listed for this frame");
            for component in split_components(w, h, pixels) {
                let feature = features_with_gradients(frame, &grads, &component);
                nodes.push(Node {
                    frame_index: k,
                    supervoxel_id: id,
                    pixels: component,
                    feature,
                });
            }
        }

        // spatial edges via a per-frame node-index raster
        let mut raster = vec![usize::MAX; (w * h) as usize];
        for (idx, node) in nodes.iter().enumerate().skip(first_node) {
            for &p in &node.pixels {
                raster[p as usize] = idx;
            }
        }
        let mut pairs = BTreeSet::new();
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) as usize;
                if x + 1 < w && raster[p] != raster[p + 1] {
                    pairs.insert((raster[p].min(raster[p + 1]), raster[p].max(raster[p + 1])));
                }
                if y + 1 < h && raster[p] != raster[p + w as usize] {
                    pairs.insert((
                        raster[p].min(raster[p + w as usize]),
                        raster[p].max(raster[p + w as usize]),
                    ));
                }
            }
        }
        edges.extend(pairs.into_iter().map(|(a, b)| SpatialEdge {
            a,
            b,
            distance: node_distance(&nodes[a].feature, &nodes[b].feature),
        }));
    }

    // pairwise contrast scale, guarded against the all-zero case
    let beta_p = if edges.is_empty() {
        1.0
    } else {
        let mean = edges.iter().map(|e| e.distance).sum::<f64>() / edges.len() as f64;
        if mean > 0.0 {
            1.0 / mean
        } else {
            1.0
        }
    };

    // cliques: group nodes by supervoxel id, then color variance
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, node) in nodes.iter().enumerate() {
        by_id.entry(node.supervoxel_id).or_default().push(idx);
    }
    let mut sigmas = Vec::with_capacity(by_id.len());
    for members in by_id.values() {
        let mut count = 0.0;
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        for &idx in members {
            let node = &nodes[idx];
            let frame = frames.frame(node.frame_index);
            for &p in &node.pixels {
                let rgb = frame.get_linear(p as usize);
                count += 1.0;
                for c in 0..3 {
                    sum[c] += rgb[c] as f64;
                    sum_sq[c] += rgb[c] as f64 * rgb[c] as f64;
                }
            }
        }
        let sigma = (0..3)
            .map(|c| {
                let mean = sum[c] / count;
                (sum_sq[c] / count - mean * mean).max(0.0)
            })
            .sum::<f64>()
            / 3.0;
        sigmas.push(sigma);
    }
    let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len().max(1) as f64;
    let beta_s = if mean_sigma > 0.0 { 1.0 / mean_sigma } else { 1.0 };

    let cliques = by_id
        .into_iter()
        .zip(sigmas)
        .map(|((supervoxel_id, members), sigma)| {
            let m = members.len() as f64;
            Clique {
                supervoxel_id,
                nodes: members,
                sigma,
                lambda_max: m * (-beta_s * sigma).exp(),
                q: 0.1 * m,
            }
        })
        .collect();

    Ok(STGraph {
        nodes,
        spatial_edges: edges,
        cliques,
        beta_p,
        beta_s,
        keyframes: keyframes.to_vec(),
    })
}

impl STGraph {
    /// Indices of the nodes on one key frame.
    pub fn frame_nodes(&self, frame_index: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].frame_index == frame_index)
            .collect()
    }

    /// Human-readable dump: node table, edge list, clique table.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "graph: {} nodes, {} edges, {} cliques, beta_p {:.6}, beta_s {:.6}",
            self.nodes.len(),
            self.spatial_edges.len(),
            self.cliques.len(),
            self.beta_p,
            self.beta_s
        )
        .unwrap();
        writeln!(out, "nodes:").unwrap();
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(
                out,
                "  {i}: frame {} supervoxel {} pixels {}",
                n.frame_index,
                n.supervoxel_id,
                n.pixels.len()
            )
            .unwrap();
        }
        writeln!(out, "edges:").unwrap();
        for e in &self.spatial_edges {
            writeln!(out, "  {} -- {} distance {:.6}", e.a, e.b, e.distance).unwrap();
        }
        writeln!(out, "cliques:").unwrap();
        for c in &self.cliques {
            writeln!(
                out,
                "  supervoxel {}: {} nodes, sigma {:.6}, lambda_max {:.6}, q {:.6}",
                c.supervoxel_id,
                c.nodes.len(),
                c.sigma,
                c.lambda_max,
                c.q
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervoxel::SupervoxelMap;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn solid_frame(w: u32, h: u32, rgb: [u8; 3]) -> Frame {
        let mut f = Frame::new(w, h);
        for y in 0..h {
            for x in 0..w {
                f.set(x, y, rgb);
            }
        }
        f
    }

    /// A two-region map (top/bottom halves) over `t` frames of size 16x16.
    fn halves_map(t: usize) -> SupervoxelMap {
        let mut raster = Vec::new();
        for y in 0..16u32 {
            raster.extend(std::iter::repeat(if y < 8 { 0u32 } else { 1 }).take(16));
        }
        SupervoxelMap::from_labels(16, 16, vec![raster; t]).unwrap()
    }

    #[test]
    fn uniform_region_features() {
        let frame = solid_frame(16, 16, [200, 40, 40]);
        let pixels: Vec<u32> = (0..256).collect();
        let f = node_features(&frame, &pixels).unwrap();
        // color blocks one-hot
        let rgb_hot: Vec<usize> = (0..25).filter(|&i| f[i] > 0.0).collect();
        assert_eq!(rgb_hot.len(), 1);
        assert!((f[rgb_hot[0]] - 1.0).abs() < 1e-12);
        let lab_hot: Vec<usize> = (25..50).filter(|&i| f[i] > 0.0).collect();
        assert_eq!(lab_hot.len(), 1);
        // gradient block uniform
        for i in 50..75 {
            assert!((f[i] - 1.0 / 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_blocks_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut frame = Frame::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                frame.set(x, y, [rng.gen(), rng.gen(), rng.gen()]);
            }
        }
        let pixels: Vec<u32> = (0..256).collect();
        let f = node_features(&frame, &pixels).unwrap();
        for block in 0..3 {
            let sum: f64 = f[block * 25..(block + 1) * 25].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "block {block} sums to {sum}");
        }
        assert!(node_features(&frame, &[]).is_err());
    }

    #[test]
    fn identical_regions_have_distance_zero() {
        // two spatially distinct rows with identical content
        let mut frame = solid_frame(16, 16, [10, 10, 10]);
        for x in 0..16 {
            frame.set(x, 2, [200, 100, 50]);
            frame.set(x, 10, [200, 100, 50]);
        }
        let row = |y: u32| -> Vec<u32> { (0..16).map(|x| y * 16 + x).collect() };
        let f1 = node_features(&frame, &row(2)).unwrap();
        let f2 = node_features(&frame, &row(10)).unwrap();
        assert_eq!(node_distance(&f1, &f2), 0.0);
    }

    #[test]
    fn one_hot_shift_per_block_distance() {
        // features differing in one swapped position per block:
        // squared distance 2 per block, 6 total
        let mut a = [0.0; FEATURE_DIM];
        let mut b = [0.0; FEATURE_DIM];
        for block in 0..3 {
            a[block * 25] = 1.0;
            b[block * 25 + 1] = 1.0;
        }
        assert!((node_distance(&a, &b) - 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn vertical_step_edge_concentrates_gradient() {
        // left half dark, right half bright: all gradient energy is
        // horizontal, which is orientation zero, bin 0
        let mut frame = solid_frame(16, 16, [20, 20, 20]);
        for y in 0..16 {
            for x in 8..16 {
                frame.set(x, y, [220, 220, 220]);
            }
        }
        let pixels: Vec<u32> = (0..256).collect();
        let f = node_features(&frame, &pixels).unwrap();
        assert!((f[50] - 1.0).abs() < 1e-12, "bin 0 holds {}", f[50]);
        for i in 51..75 {
            assert_eq!(f[i], 0.0);
        }
    }

    #[test]
    fn triangle_inequality_holds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let mut v = [[0.0; FEATURE_DIM]; 3];
            for f in v.iter_mut() {
                for x in f.iter_mut() {
                    *x = rng.gen::<f64>();
                }
            }
            let ab = node_distance(&v[0], &v[1]);
            let bc = node_distance(&v[1], &v[2]);
            let ac = node_distance(&v[0], &v[2]);
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn single_keyframe_two_superpixels() {
        let svmap = halves_map(2);
        let mut frame = solid_frame(16, 16, [30, 30, 30]);
        for y in 8..16 {
            for x in 0..16 {
                frame.set(x, y, [200, 200, 200]);
            }
        }
        let frames = FrameSequence::new(vec![frame.clone(), frame]).unwrap();
        let shot = Shot { start: 0, end: 2, candidate_keyframes: vec![0] };
        let g = build_graph(&shot, &[0], &svmap, &frames).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.spatial_edges.len(), 1);
        assert_eq!(g.cliques.len(), 2);
        assert!(g.cliques.iter().all(|c| c.nodes.len() == 1));
    }

    #[test]
    fn two_keyframes_double_the_nodes() {
        let svmap = halves_map(2);
        let mut frame = solid_frame(16, 16, [30, 30, 30]);
        for y in 8..16 {
            for x in 0..16 {
                frame.set(x, y, [200, 200, 200]);
            }
        }
        let frames = FrameSequence::new(vec![frame.clone(), frame]).unwrap();
        let shot = Shot { start: 0, end: 2, candidate_keyframes: vec![0, 1] };
        let g = build_graph(&shot, &[0, 1], &svmap, &frames).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.spatial_edges.len(), 2);
        assert_eq!(g.cliques.len(), 2);
        assert!(g.cliques.iter().all(|c| c.nodes.len() == 2));
        // spatial edges stay within their frame
        for e in &g.spatial_edges {
            assert_eq!(g.nodes[e.a].frame_index, g.nodes[e.b].frame_index);
        }
    }

    #[test]
    fn uniform_clique_statistics() {
        // both halves uniform: sigma = 0 for every clique, so the
        // guard sets beta_s = 1 and lambda_max hits the node count
        let svmap = halves_map(2);
        let mut frame = solid_frame(16, 16, [30, 30, 30]);
        for y in 8..16 {
            for x in 0..16 {
                frame.set(x, y, [200, 200, 200]);
            }
        }
        let frames = FrameSequence::new(vec![frame.clone(), frame]).unwrap();
        let shot = Shot { start: 0, end: 2, candidate_keyframes: vec![0, 1] };
        let g = build_graph(&shot, &[0, 1], &svmap, &frames).unwrap();
        assert_eq!(g.beta_s, 1.0);
        for c in &g.cliques {
            assert_eq!(c.sigma, 0.0);
            assert!((c.lambda_max - c.nodes.len() as f64).abs() < 1e-12);
            assert!((c.q - 0.1 * c.nodes.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn keyframe_validation() {
        let svmap = halves_map(3);
        let frame = solid_frame(16, 16, [30, 30, 30]);
        let frames = FrameSequence::new(vec![frame.clone(), frame.clone(), frame]).unwrap();
        let shot = Shot { start: 0, end: 2, candidate_keyframes: vec![0] };
        assert!(build_graph(&shot, &[], &svmap, &frames).is_err());
        assert!(build_graph(&shot, &[2], &svmap, &frames).is_err());
        assert!(build_graph(&shot, &[1, 1], &svmap, &frames).is_err());
        assert!(build_graph(&shot, &[0, 1], &svmap, &frames).is_ok());
    }

    #[test]
    fn disconnected_projection_splits_into_nodes() {
        let comps = split_components(5, 1, &[0, 1, 3, 4]);
        assert_eq!(comps, vec![vec![0, 1], vec![3, 4]]);
        let comps = split_components(3, 3, &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(comps.len(), 1);
    }

    /// Random blocky videos for the structural invariants.
    fn random_setup(seed: u64) -> (SupervoxelMap, FrameSequence) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (w, h, t) = (24u32, 16u32, 3usize);
        let frames: Vec<Frame> = (0..t)
            .map(|_| {
                let mut f = Frame::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let cell = (x / 8) + (y / 8) * 3;
                        let base = 30 + cell as i32 * 60;
                        let jitter: i32 = rng.gen_range(-5..=5);
                        let v = (base + jitter).clamp(0, 255) as u8;
                        f.set(x, y, [v, v, 255 - v]);
                    }
                }
                f
            })
            .collect();
        let frames = FrameSequence::new(frames).unwrap();
        let params = crate::supervoxel::SupervoxelParams {
            seed_grid: 8,
            color_tol: 18.0,
            min_size: 8,
        };
        let svmap = crate::supervoxel::extract_supervoxels(&frames, &params).unwrap();
        (svmap, frames)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn prop_graph_invariants(seed in 0u64..1000) {
            let (svmap, frames) = random_setup(seed);
            let t = frames.len();
            let shot = Shot { start: 0, end: t, candidate_keyframes: vec![0] };
            let keyframes: Vec<usize> = (0..t).collect();
            let g = build_graph(&shot, &keyframes, &svmap, &frames).unwrap();

            // per-frame node pixel sets are disjoint and cover the frame
            for &k in &keyframes {
                let mut seen = vec![false; (frames.width() * frames.height()) as usize];
                for i in g.frame_nodes(k) {
                    for &p in &g.nodes[i].pixels {
                        prop_assert!(!seen[p as usize], "pixel {p} covered twice");
                        seen[p as usize] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&s| s));
            }

            // beta_p is exactly the reciprocal mean edge distance
            if !g.spatial_edges.is_empty() {
                let mean = g.spatial_edges.iter().map(|e| e.distance).sum::<f64>()
                    / g.spatial_edges.len() as f64;
                if mean > 0.0 {
                    prop_assert!((g.beta_p * mean - 1.0).abs() < 1e-12);
                }
            }

            // lambda_max <= node count, equality iff sigma = 0
            for c in &g.cliques {
                let m = c.nodes.len() as f64;
                prop_assert!(c.lambda_max <= m + 1e-12);
                if c.sigma == 0.0 {
                    prop_assert!((c.lambda_max - m).abs() < 1e-12);
                } else {
                    prop_assert!(c.lambda_max < m);
                }
            }

            // every node belongs to exactly one clique
            let mut owner = vec![0usize; g.nodes.len()];
            for c in &g.cliques {
                for &i in &c.nodes {
                    owner[i] += 1;
                }
            }
            prop_assert!(owner.iter().all(|&n| n == 1));

            // determinism: rebuilding gives identical features and stats
            let g2 = build_graph(&shot, &keyframes, &svmap, &frames).unwrap();
            prop_assert_eq!(g.nodes.len(), g2.nodes.len());
            prop_assert_eq!(g.beta_p, g2.beta_p);
            prop_assert_eq!(g.beta_s, g2.beta_s);
            for (a, b) in g.nodes.iter().zip(&g2.nodes) {
                prop_assert_eq!(&a.feature[..], &b.feature[..]);
            }
        }
    }
}
