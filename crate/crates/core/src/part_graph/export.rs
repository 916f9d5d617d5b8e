//! Line-oriented text interchange for part graphs.
//!
//! ```text
//! PART <id> <cx> <cy> <cz> <radius> <lrf r0c0> ... <lrf r2c2> <degenerate 0|1>
//! EDGE <i> <j>
//! ```
//!
//! All `PART` lines come first, ids ascending from 0. Floats use the shortest
//! decimal representation that round-trips, so reading back is bit-exact.

use std::fmt::Write;

use super::PartGraph;
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct PartRecord {
    pub center: Vec3,
    pub radius: f64,
    pub lrf: Mat3,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub parts: Vec<PartRecord>,
    pub edges: Vec<(usize, usize)>,
}

impl From<&PartGraph> for GraphRecord {
    fn from(g: &PartGraph) -> Self {
        Self {
            parts: g
                .parts
                .iter()
                .map(|p| PartRecord {
                    center: p.center,
                    radius: p.bounding_radius,
                    lrf: p.lrf,
                    degenerate: p.degenerate_lrf,
                })
                .collect(),
            edges: g.edges.clone(),
        }
    }
}

pub fn write_graph(graph: &GraphRecord) -> String {
    let mut out = String::new();
    for (id, p) in graph.parts.iter().enumerate() {
        let _ = write!(
            out,
            "PART {id} {} {} {} {}",
            p.center.x, p.center.y, p.center.z, p.radius
        );
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {}", p.lrf[(r, c)]);
            }
        }
        let _ = writeln!(out, " {}", u8::from(p.degenerate));
    }
    for (i, j) in &graph.edges {
        let _ = writeln!(out, "EDGE {i} {j}");
    }
    out
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "<part graph>".into(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_graph(text: &str) -> Result<GraphRecord> {
    let mut parts = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None => continue,
            Some("PART") => {
                if !edges.is_empty() {
                    return Err(bad(l, "PART after EDGE"));
                }
                if toks.len() != 16 {
                    return Err(bad(
                        l,
                        format!("PART needs 15 fields, found {}", toks.len() - 1),
                    ));
                }
                let id: usize = toks[1].parse().map_err(|_| bad(l, "bad part id"))?;
                if id != parts.len() {
                    return Err(bad(
                        l,
                        format!("expected part id {}, found {id}", parts.len()),
                    ));
                }
                let f = toks[2..15]
                    .iter()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| bad(l, format!("bad float {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let degenerate = match toks[15] {
                    "0" => false,
                    "1" => true,
                    other => return Err(bad(l, format!("bad degenerate flag {other:?}"))),
                };
                parts.push(PartRecord {
                    center: Vec3::new(f[0], f[1], f[2]),
                    radius: f[3],
                    lrf: Mat3::from_row_slice(&f[4..13]),
                    degenerate,
                });
            }
            Some("EDGE") => {
                if toks.len() != 3 {
                    return Err(bad(l, "EDGE needs 2 fields"));
                }
                let a: usize = toks[1].parse().map_err(|_| bad(l, "bad edge endpoint"))?;
                let b: usize = toks[2].parse().map_err(|_| bad(l, "bad edge endpoint"))?;
                if a >= parts.len() || b >= parts.len() || a == b {
                    return Err(bad(l, format!("invalid edge {a} {b}")));
                }
                edges.push((a, b));
            }
            Some(other) => return Err(bad(l, format!("unknown record {other:?}"))),
        }
    }
    Ok(GraphRecord { parts, edges })
}
