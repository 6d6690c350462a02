//! Three-hop channel-wise Saab cascade and its energy tree.
//!
//! Hop 1 fits one unit on the image. Each intermediate channel of hop h is
//! max-pooled and gets its own unit at hop h+1, so units at hops 2 and 3
//! are fitted per parent channel. Node energies are normalized so the root
//! carries 1 and a child gets `parent × eigenvalue / unit total`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::preprocess::AlignedImage;
use crate::saab::{
    for_each_patch, partition_channels, pool_plane, ChannelEnergy, NodeKind, ResponseMap,
    SaabAccumulator, SaabUnit, Selection, WINDOW,
};

pub const HOPS: usize = 3;

/// Per-hop fitting configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct HopConfig {
    pub input_size: usize,
    pub window: usize,
    pub selection: [Selection; HOPS],
    /// Patches per unit beyond which fitting samples with a fixed stride.
    pub max_patches: usize,
}

impl Default for HopConfig {
    fn default() -> Self {
        Self::lfw()
    }
}

impl HopConfig {
    pub const DEFAULT_MAX_PATCHES: usize = 1_000_000;

    fn with_selection(selection: [Selection; HOPS]) -> Self {
        Self { input_size: 32, window: WINDOW, selection, max_patches: Self::DEFAULT_MAX_PATCHES }
    }

    /// Node counts used for LFW: (18, 0, 7), (122, 0, 328), (0, 233, 2817).
    pub fn lfw() -> Self {
        Self::with_selection([
            Selection::FixedCounts { keep: 18, discard: 7 },
            Selection::FixedCounts { keep: 122, discard: 328 },
            Selection::FixedCounts { keep: 233, discard: 2817 },
        ])
    }

    /// Node counts used for CMU Multi-PIE: (18, 0, 7), (117, 0, 333), (0, 186, 2739).
    pub fn cmu() -> Self {
        Self::with_selection([
            Selection::FixedCounts { keep: 18, discard: 7 },
            Selection::FixedCounts { keep: 117, discard: 333 },
            Selection::FixedCounts { keep: 186, discard: 2739 },
        ])
    }

    pub fn thresholds(t: [f64; HOPS]) -> Self {
        Self::with_selection(t.map(Selection::Threshold))
    }

    /// Keep every channel that has a kernel.
    pub fn keep_all() -> Self {
        Self::thresholds([0.0; HOPS])
    }

    pub fn geometry(&self) -> Result<HopGeometry> {
        HopGeometry::new(self.input_size, self.window)
    }
}

/// Spatial sizes through the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopGeometry {
    /// Input side of each hop (image, pooled hop-1, pooled hop-2).
    pub inputs: [usize; HOPS],
    /// Response side of each hop.
    pub responses: [usize; HOPS],
}

impl HopGeometry {
    pub fn new(input_size: usize, window: usize) -> Result<Self> {
        ensure!(window >= 1, "window must be positive");
        let mut inputs = [0; HOPS];
        let mut responses = [0; HOPS];
        let mut side = input_size;
        for h in 0..HOPS {
            ensure!(side >= window, "hop {} input {side}×{side} is smaller than the window", h + 1);
            inputs[h] = side;
            responses[h] = side + 1 - window;
            if h + 1 < HOPS {
                ensure!(
                    responses[h] % 2 == 0,
                    "hop {} response {}×{} cannot be pooled",
                    h + 1,
                    responses[h],
                    responses[h]
                );
                side = responses[h] / 2;
            }
        }
        Ok(Self { inputs, responses })
    }
}

/// One channel of the energy tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// 1-based hop index.
    pub hop: u8,
    /// Unit index within the hop.
    pub unit: u32,
    /// Channel within the unit (0 = DC).
    pub channel: u32,
    /// Index of the parent node in [`HopModel::nodes`].
    pub parent: Option<u32>,
    pub energy: f64,
    pub kind: NodeKind,
}

/// Fitted three-hop cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct HopModel {
    config: HopConfig,
    geometry: HopGeometry,
    units: [Vec<SaabUnit>; HOPS],
    nodes: Vec<Node>,
}

/// Responses of all kept channels at each hop (channel-major maps).
#[derive(Debug, Clone, PartialEq)]
pub struct HopOutputs {
    pub hops: [ResponseMap; HOPS],
}

impl HopOutputs {
    pub fn hop(&self, h: usize) -> &ResponseMap {
        &self.hops[h - 1]
    }
}

/// Node counts per hop: `[intermediate, leaf, discard]`.
pub type HopCounts = [[usize; 3]; HOPS];

impl HopModel {
    /// Rebuild a model from stored units and nodes, checking consistency.
    pub fn from_parts(config: HopConfig, units: [Vec<SaabUnit>; HOPS], nodes: Vec<Node>) -> Result<Self> {
        let geometry = config.geometry()?;
        let dim = config.window * config.window;
        ensure!(units[0].len() == 1, "hop 1 must have exactly one unit");
        for (h, hop_units) in units.iter().enumerate() {
            for u in hop_units {
                ensure!(u.window() == config.window, "unit window does not match configuration");
            }
            if h + 1 < HOPS {
                let forwarded = intermediate_count(hop_units);
                ensure!(
                    units[h + 1].len() == forwarded,
                    "hop {} has {} units but hop {} forwards {forwarded} channels",
                    h + 2,
                    units[h + 1].len(),
                    h + 1
                );
            }
        }
        let expected: usize = units.iter().map(|u| u.len() * dim).sum();
        ensure!(nodes.len() == expected, "node tree has {} nodes, expected {expected}", nodes.len());
        let model = Self { config, geometry, units, nodes };
        let mut i = 0;
        for (h, hop_units) in model.units.iter().enumerate() {
            for (u, unit) in hop_units.iter().enumerate() {
                for (c, kind) in unit.partition().iter().enumerate() {
                    let n = &model.nodes[i];
                    ensure!(
                        n.hop as usize == h + 1 && n.unit as usize == u && n.channel as usize == c,
                        "node {i} is out of order"
                    );
                    ensure!(n.kind == *kind, "node {i} kind disagrees with its unit");
                    i += 1;
                }
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &HopConfig {
        &self.config
    }

    pub fn geometry(&self) -> &HopGeometry {
        &self.geometry
    }

    /// Units of hop `h` (1-based).
    pub fn units(&self, h: usize) -> &[SaabUnit] {
        &self.units[h - 1]
    }

    pub fn all_units(&self) -> &[Vec<SaabUnit>; HOPS] {
        &self.units
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Number of kept (intermediate + leaf) channels at hop `h`.
    pub fn output_channels(&self, h: usize) -> usize {
        self.units(h).iter().map(SaabUnit::n_channels).sum()
    }

    pub fn counts(&self) -> HopCounts {
        let mut counts = [[0; 3]; HOPS];
        for n in &self.nodes {
            let slot = match n.kind {
                NodeKind::Intermediate => 0,
                NodeKind::Leaf => 1,
                NodeKind::Discard => 2,
            };
            counts[n.hop as usize - 1][slot] += 1;
        }
        counts
    }

    /// For each depth: energy of its nodes plus energy that stopped above
    /// it (discarded or leaf). Equals 1 for a consistent tree.
    pub fn depth_energy_sums(&self) -> [f64; HOPS] {
        let mut sums = [0.0; HOPS];
        let mut stopped = 0.0;
        for (h, sum) in sums.iter_mut().enumerate() {
            let depth = self.nodes.iter().filter(|n| n.hop as usize == h + 1);
            let mut here = 0.0;
            let mut stop_here = 0.0;
            for n in depth {
                here += n.energy;
                if n.kind != NodeKind::Intermediate {
                    stop_here += n.energy;
                }
            }
            *sum = here + stopped;
            stopped += stop_here;
        }
        sums
    }

    /// Pooled intermediate channels of hop `h` (1 or 2): the input of hop `h + 1`.
    pub fn pooled(&self, outputs: &HopOutputs, h: usize) -> Result<ResponseMap> {
        ensure!(h == 1 || h == 2, "only hops 1 and 2 are pooled");
        Ok(pool_intermediate(outputs.hop(h), self.units(h)))
    }

    /// Forward pass of one image.
    pub fn transform(&self, img: &AlignedImage) -> Result<HopOutputs> {
        self.transform_map(img.data())
    }

    /// Forward pass of a raw `input_size²` map.
    pub fn transform_map(&self, map: &[f64]) -> Result<HopOutputs> {
        let side = self.config.input_size;
        ensure!(map.len() == side * side, "input has {} values, expected {side}×{side}", map.len());
        let input = ResponseMap { height: side, width: side, channels: 1, values: map.to_vec() };
        let hop1 = forward(&self.units[0], &input, self.config.window);
        let hop2 = forward(&self.units[1], &pool_intermediate(&hop1, &self.units[0]), self.config.window);
        let hop3 = forward(&self.units[2], &pool_intermediate(&hop2, &self.units[1]), self.config.window);
        Ok(HopOutputs { hops: [hop1, hop2, hop3] })
    }
}

fn intermediate_count(units: &[SaabUnit]) -> usize {
    units
        .iter()
        .flat_map(|u| u.output_kinds())
        .filter(|k| **k == NodeKind::Intermediate)
        .count()
}

/// Apply each unit to its parent channel of `input` (unit `i` reads channel `i`).
fn forward(units: &[SaabUnit], input: &ResponseMap, window: usize) -> ResponseMap {
    let side = input.height;
    let out_side = side + 1 - window;
    let plane = out_side * out_side;
    let channels: usize = units.iter().map(SaabUnit::n_channels).sum();
    let mut out = ResponseMap::zeros(out_side, out_side, channels);
    let mut buf = vec![0.0; window * window];
    let mut offset = 0;
    for (i, unit) in units.iter().enumerate() {
        let n = unit.n_channels();
        let mut resp = vec![0.0; n];
        let mut pos = 0;
        for_each_patch(input.channel(i), side, window, &mut buf, |p| {
            unit.respond_into(p, &mut resp);
            for (c, v) in resp.iter().enumerate() {
                out.values[(offset + c) * plane + pos] = *v;
            }
            pos += 1;
        });
        offset += n;
    }
    out
}

/// Pool the intermediate channels of a hop output, in channel order.
fn pool_intermediate(map: &ResponseMap, units: &[SaabUnit]) -> ResponseMap {
    let kinds: Vec<NodeKind> = units.iter().flat_map(|u| u.output_kinds().iter().copied()).collect();
    let keep: Vec<usize> = (0..map.channels).filter(|&c| kinds[c] == NodeKind::Intermediate).collect();
    let (h, w) = (map.height / 2, map.width / 2);
    let mut out = ResponseMap::zeros(h, w, keep.len());
    for (o, &c) in keep.iter().enumerate() {
        pool_plane(map.channel(c), map.width, out.channel_mut(o), w);
    }
    out
}

// Deterministic striding keeps at most `cap` of `total` patches.
struct Sampler {
    stride: usize,
    seen: usize,
}

impl Sampler {
    fn new(total: usize, cap: usize) -> Self {
        Self { stride: total.div_ceil(cap.max(1)).max(1), seen: 0 }
    }

    fn feed(&mut self, acc: &mut SaabAccumulator, patch: &[f64]) {
        if self.seen.is_multiple_of(self.stride) {
            acc.push(patch);
        } else {
            acc.observe_norm(patch);
        }
        self.seen += 1;
    }
}

/// Accumulate patches of every channel of `inputs` (one map per image)
/// into one accumulator per channel.
fn accumulate<'a>(
    maps: impl Iterator<Item = ResponseMap> + 'a,
    n_images: usize,
    channels: usize,
    side: usize,
    cfg: &HopConfig,
) -> Vec<SaabAccumulator> {
    let window = cfg.window;
    let per_image = (side + 1 - window).pow(2);
    let mut accs: Vec<SaabAccumulator> = (0..channels).map(|_| SaabAccumulator::new(window)).collect();
    let mut samplers: Vec<Sampler> =
        (0..channels).map(|_| Sampler::new(n_images * per_image, cfg.max_patches)).collect();
    let mut buf = vec![0.0; window * window];
    for map in maps {
        debug_assert_eq!(map.channels, channels);
        for c in 0..channels {
            let (acc, sampler) = (&mut accs[c], &mut samplers[c]);
            for_each_patch(map.channel(c), side, window, &mut buf, |p| sampler.feed(acc, p));
        }
    }
    accs
}

/// Fit units for one hop and partition their channels globally.
fn fit_hop(
    accs: &[SaabAccumulator],
    parent_energy: &[f64],
    parent_node: &[Option<u32>],
    hop: usize,
    cfg: &HopConfig,
    nodes: &mut Vec<Node>,
) -> Result<Vec<SaabUnit>> {
    let dim = cfg.window * cfg.window;
    let mut units = Vec::with_capacity(accs.len());
    let mut channels = Vec::with_capacity(accs.len() * dim);
    for (acc, &pe) in accs.iter().zip(parent_energy) {
        let unit = acc.finish(dim - 1)?;
        let total = unit.total_energy();
        for (c, e) in unit.energies().iter().enumerate() {
            let energy = if total > 0.0 {
                pe * e / total
            } else if c == 0 {
                pe
            } else {
                0.0
            };
            channels.push(ChannelEnergy { energy, is_dc: c == 0, available: c < unit.n_channels() });
        }
        units.push(unit);
    }
    let kinds = partition_channels(&channels, cfg.selection[hop - 1], hop == HOPS)?;
    for (u, unit) in units.iter_mut().enumerate() {
        let slice = &kinds[u * dim..(u + 1) * dim];
        unit.apply_partition(slice)?;
        for (c, kind) in slice.iter().enumerate() {
            nodes.push(Node {
                hop: hop as u8,
                unit: u as u32,
                channel: c as u32,
                parent: parent_node[u],
                energy: channels[u * dim + c].energy,
                kind: *kind,
            });
        }
    }
    Ok(units)
}

/// Energies and node indices of the intermediate channels of the last
/// fitted hop, in output order.
fn forwarded(nodes: &[Node], hop: usize) -> (Vec<f64>, Vec<Option<u32>>) {
    nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.hop as usize == hop && n.kind == NodeKind::Intermediate)
        .map(|(i, n)| (n.energy, Some(i as u32)))
        .unzip()
}

/// Fit the cascade on square maps of side `cfg.input_size`.
pub fn fit_tree_maps<M: AsRef<[f64]>>(maps: &[M], cfg: &HopConfig) -> Result<HopModel> {
    let geometry = cfg.geometry()?;
    let dim = cfg.window * cfg.window;
    ensure!(maps.len() >= dim, "need at least {dim} images to fit the tree, got {}", maps.len());
    let side = cfg.input_size;
    for m in maps {
        ensure!(m.as_ref().len() == side * side, "every input must be {side}×{side}");
    }
    let n = maps.len();
    let as_map = |m: &M| ResponseMap { height: side, width: side, channels: 1, values: m.as_ref().to_vec() };
    let mut nodes = Vec::new();

    // Hop 1.
    let accs = accumulate(maps.iter().map(as_map), n, 1, side, cfg);
    let hop1 = fit_hop(&accs, &[1.0], &[None], 1, cfg, &mut nodes)?;

    // Hop 2: one unit per intermediate hop-1 channel.
    let (energy, parents) = forwarded(&nodes, 1);
    let side2 = geometry.inputs[1];
    let pooled1 = |m: &M| pool_intermediate(&forward(&hop1, &as_map(m), cfg.window), &hop1);
    let accs = accumulate(maps.iter().map(pooled1), n, parents.len(), side2, cfg);
    let hop2 = fit_hop(&accs, &energy, &parents, 2, cfg, &mut nodes)?;

    // Hop 3: one unit per intermediate hop-2 channel.
    let (energy, parents) = forwarded(&nodes, 2);
    let side3 = geometry.inputs[2];
    let pooled2 = |m: &M| {
        let p1 = pool_intermediate(&forward(&hop1, &as_map(m), cfg.window), &hop1);
        pool_intermediate(&forward(&hop2, &p1, cfg.window), &hop2)
    };
    let accs = accumulate(maps.iter().map(pooled2), n, parents.len(), side3, cfg);
    let hop3 = fit_hop(&accs, &energy, &parents, 3, cfg, &mut nodes)?;

    Ok(HopModel { config: cfg.clone(), geometry, units: [hop1, hop2, hop3], nodes })
}

pub fn fit_tree(images: &[AlignedImage], cfg: &HopConfig) -> Result<HopModel> {
    ensure!(cfg.input_size == crate::preprocess::SIDE, "aligned images are 32×32");
    let maps: Vec<&[f64]> = images.iter().map(AlignedImage::data).collect();
    fit_tree_maps(&maps, cfg)
}
