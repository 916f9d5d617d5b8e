//! Kernel point convolution over the part graph, and the spherical variant
//! that keeps only the direction of each neighbor offset.
//!
//! Influence coefficients depend only on geometry, so they are computed once
//! per graph as a sparse list of [`AggregationTerm`]s. The convolution is
//! then a sparse aggregation into `K` feature blocks followed by one dense
//! product with the stacked kernel weights `[K * F_in, F_out]`.

mod kernels;

use std::sync::Arc;

use rand::Rng;

pub use kernels::{influence, make_kernel_layout, KernelLayout};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::nn::{
    he_init, AggregationTerm, BatchNorm, Forward, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::part_graph::PartGraph;

/// Offsets shorter than this have no direction.
pub const ZERO_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvKind {
    KpConv,
    SkpConv,
}

impl std::str::FromStr for ConvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kpconv" => Ok(Self::KpConv),
            "skpconv" => Ok(Self::SkpConv),
            _ => Err(Error::Config(format!(
                "unknown layer {s:?} (expected skpconv or kpconv)"
            ))),
        }
    }
}

impl std::fmt::Display for ConvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::KpConv => "kpconv",
            Self::SkpConv => "skpconv",
        })
    }
}

/// Node positions, neighbor lists and per-node frames of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNeighborhood {
    pub centers: Vec<Vec3>,
    pub neighbors: Vec<Vec<usize>>,
    /// Rotation applied to offsets seen from each node.
    pub frames: Vec<Mat3>,
}

impl GraphNeighborhood {
    pub fn new(centers: Vec<Vec3>, neighbors: Vec<Vec<usize>>, frames: Vec<Mat3>) -> Result<Self> {
        let n = centers.len();
        if neighbors.len() != n || frames.len() != n {
            return Err(Error::ShapeMismatch {
                op: "graph_neighborhood",
                detail: format!(
                    "{n} centers, {} neighbor lists, {} frames",
                    neighbors.len(),
                    frames.len()
                ),
            });
        }
        for (i, list) in neighbors.iter().enumerate() {
            if let Some(&j) = list.iter().find(|&&j| j >= n || j == i) {
                return Err(Error::InvalidArgument(format!(
                    "node {i} has invalid neighbor {j}"
                )));
            }
        }
        Ok(Self {
            centers,
            neighbors,
            frames,
        })
    }

    /// Neighborhoods from a part graph; frames are the part frames when
    /// `use_lrf` is set, identity otherwise.
    pub fn from_graph(graph: &PartGraph, use_lrf: bool) -> Self {
        Self {
            centers: graph.parts.iter().map(|p| p.center).collect(),
            neighbors: graph.neighbor_lists(),
            frames: graph
                .parts
                .iter()
                .map(|p| if use_lrf { p.lrf } else { Mat3::identity() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Offset of neighbor `j` seen from node `i`, in `i`'s frame.
    pub fn offset(&self, i: usize, j: usize) -> Vec3 {
        self.frames[i] * (self.centers[j] - self.centers[i])
    }
}

/// Precomputed influence coefficients for one graph and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTerms {
    pub terms: Arc<[AggregationTerm]>,
    pub kernels: usize,
    pub nodes: usize,
}

/// Influence of each kernel on one offset. For the spherical variant the
/// offset is projected onto the unit sphere; a zero offset reaches only the
/// origin kernel.
pub fn kernel_influences(offset: &Vec3, layout: &KernelLayout, kind: ConvKind) -> Vec<f64> {
    let mut h = vec![0.0; layout.len()];
    match kind {
        ConvKind::KpConv => {
            for (hk, c) in h.iter_mut().zip(&layout.centers) {
                *hk = influence(offset, c, layout.sigma);
            }
        }
        ConvKind::SkpConv => {
            let norm = offset.norm();
            if norm < ZERO_OFFSET {
                if let Some(o) = layout.origin_index() {
                    h[o] = 1.0;
                }
            } else {
                let d = offset / norm;
                for (hk, c) in h.iter_mut().zip(&layout.centers) {
                    *hk = influence(&d, c, layout.sigma);
                }
            }
        }
    }
    h
}

/// Influence terms for every neighbor pair. With `include_self` each node
/// also sees itself at zero offset.
pub fn conv_terms(
    nbhd: &GraphNeighborhood,
    layout: &KernelLayout,
    kind: ConvKind,
    include_self: bool,
) -> ConvTerms {
    let mut terms = Vec::new();
    for (i, list) in nbhd.neighbors.iter().enumerate() {
        let own = include_self.then_some(i);
        for j in own.into_iter().chain(list.iter().copied()) {
            let offset = if i == j {
                Vec3::zeros()
            } else {
                nbhd.offset(i, j)
            };
            let h = kernel_influences(&offset, layout, kind);
            for (k, &w) in h.iter().enumerate() {
                if w > 0.0 {
                    terms.push(AggregationTerm {
                        dst: i as u32,
                        src: j as u32,
                        kernel: k as u32,
                        weight: w,
                    });
                }
            }
        }
    }
    ConvTerms {
        terms: terms.into(),
        kernels: layout.len(),
        nodes: nbhd.len(),
    }
}

/// `out_i = sum_j sum_k h_k(d_ij) f_j W_k` on the tape. `w` is `[K * F_in, F_out]`.
pub fn conv_on_tape(tape: &mut Tape, feats: Var, terms: &ConvTerms, w: Var) -> Result<Var> {
    let rows = tape.value(feats).rows();
    if rows != terms.nodes {
        return Err(Error::ShapeMismatch {
            op: "conv",
            detail: format!("{rows} feature rows for {} nodes", terms.nodes),
        });
    }
    let agg = tape.aggregate(feats, terms.terms.clone(), terms.kernels)?;
    tape.matmul(agg, w)
}

fn conv_values(
    feats: &Tensor,
    nbhd: &GraphNeighborhood,
    layout: &KernelLayout,
    w: &Tensor,
    kind: ConvKind,
) -> Result<Tensor> {
    let terms = conv_terms(nbhd, layout, kind, false);
    let mut tape = Tape::new();
    let f = tape.constant(feats.clone());
    let wv = tape.constant(w.clone());
    let out = conv_on_tape(&mut tape, f, &terms, wv)?;
    Ok(tape.value(out).clone())
}

pub fn kpconv_forward(
    feats: &Tensor,
    nbhd: &GraphNeighborhood,
    layout: &KernelLayout,
    w: &Tensor,
) -> Result<Tensor> {
    conv_values(feats, nbhd, layout, w, ConvKind::KpConv)
}

pub fn skpconv_forward(
    feats: &Tensor,
    nbhd: &GraphNeighborhood,
    layout: &KernelLayout,
    w: &Tensor,
) -> Result<Tensor> {
    conv_values(feats, nbhd, layout, w, ConvKind::SkpConv)
}

/// Convolution followed by batch norm and ReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLayer {
    pub w: ParamId,
    pub bn: BatchNorm,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernels: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{name}.w"),
                he_init(rng, kernels * fan_in, fan_out),
                true,
            )?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), fan_out)?,
        })
    }

    pub fn forward(&self, fw: &mut Forward, x: Var, terms: &ConvTerms) -> Result<Var> {
        let w = fw.param(self.w);
        let y = conv_on_tape(&mut fw.tape, x, terms, w)?;
        let y = self.bn.forward(fw, y)?;
        Ok(fw.tape.relu(y))
    }
}
