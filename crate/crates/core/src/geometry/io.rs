//! Readers for OFF, ASCII PLY and `xyz-normals` text files.
//!
//! Formats:
//!
//! * OFF: `OFF`, then `V F E`, then `V` lines of `x y z`, then `F` lines of
//!   `3 i j k`. Polygons with more than three vertices are fan-triangulated.
//! * PLY: ASCII only; vertex properties `x y z` and optionally `nx ny nz`,
//!   an optional face element with a `vertex_indices` list.
//! * xyz-normals: one point per line, `px py pz nx ny nz`. Lines with only
//!   three values are accepted when the whole file omits normals.
//!
//! Blank lines and `#` comments are skipped in OFF and xyz files. Missing
//! normals are derived from faces when there are faces, and estimated by PCA
//! otherwise.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use super::{estimate_normals, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Neighborhood size used when a file carries no normals.
const ESTIMATE_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Off,
    Ply,
    XyzNormals,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(Self::Off),
            "ply" => Some(Self::Ply),
            "xyz" | "xyzn" | "txt" | "pts" => Some(Self::XyzNormals),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "ply" => Ok(Self::Ply),
            "xyz-normals" | "xyz" => Ok(Self::XyzNormals),
            other => Err(Error::InvalidArgument(format!(
                "unknown cloud format {other:?}"
            ))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    parse_cloud(&text, format, path)
}

/// Parses file contents; `path` is only used in error messages.
pub fn parse_cloud(text: &str, format: CloudFormat, path: &Path) -> Result<PointCloud> {
    let raw = match format {
        CloudFormat::Off => parse_off(text, path)?,
        CloudFormat::Ply => parse_ply(text, path)?,
        CloudFormat::XyzNormals => parse_xyz(text, path)?,
    };
    raw.finish(path)
}

struct RawCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    faces: Vec<[usize; 3]>,
}

impl RawCloud {
    fn finish(self, path: &Path) -> Result<PointCloud> {
        if self.positions.is_empty() {
            return Err(Error::EmptyCloud {
                path: path.to_path_buf(),
            });
        }
        let faces = (!self.faces.is_empty()).then_some(self.faces);
        let normals = match self.normals {
            Some(n) => n,
            None => derive_normals(&self.positions, faces.as_deref())?,
        };
        PointCloud::new(self.positions, normals, faces)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(tokens: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            let v: f64 = t
                .parse()
                .map_err(|_| parse_err(path, line, format!("expected a number, found {t:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("non-finite value {t:?}")))
            }
        })
        .collect()
}

fn parse_usize(tok: &str, path: &Path, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("expected a non-negative integer, found {tok:?}"),
        )
    })
}

/// Checks one polygon and fan-triangulates it.
fn push_polygon(
    poly: &[usize],
    n_vertices: usize,
    faces: &mut Vec<[usize; 3]>,
    path: &Path,
    line: usize,
) -> Result<()> {
    if poly.len() < 3 {
        return Err(parse_err(path, line, "face needs at least 3 vertices"));
    }
    for (a, &v) in poly.iter().enumerate() {
        if v >= n_vertices {
            return Err(parse_err(
                path,
                line,
                format!("vertex index {v} out of range"),
            ));
        }
        if poly[..a].contains(&v) {
            return Err(Error::DegenerateFace {
                path: path.to_path_buf(),
                line,
                index: v,
            });
        }
    }
    for w in 1..poly.len() - 1 {
        faces.push([poly[0], poly[w], poly[w + 1]]);
    }
    Ok(())
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn parse_off(text: &str, path: &Path) -> Result<RawCloud> {
    let mut lines = content_lines(text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing OFF header"))?;
    let first = header[0];
    if !first.starts_with("OFF") {
        return Err(parse_err(path, line, "expected OFF header"));
    }
    // Some exporters glue the counts onto the header: "OFF490 518 0".
    let mut counts_tokens: Vec<&str> = Vec::new();
    if first.len() > 3 {
        counts_tokens.push(&first[3..]);
    }
    counts_tokens.extend_from_slice(&header[1..]);
    let count_line = if counts_tokens.is_empty() {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| parse_err(path, line + 1, "missing V F E counts"))?;
        counts_tokens = toks;
        l
    } else {
        line
    };
    if counts_tokens.len() < 2 {
        return Err(parse_err(path, count_line, "expected V F E counts"));
    }
    let nv = parse_usize(counts_tokens[0], path, count_line)?;
    let nf = parse_usize(counts_tokens[1], path, count_line)?;

    let mut positions = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| parse_err(path, count_line, "file ends before all vertices"))?;
        if toks.len() < 3 {
            return Err(parse_err(path, l, "vertex needs 3 coordinates"));
        }
        let v = parse_floats(&toks[..3], path, l)?;
        positions.push(Vec3::new(v[0], v[1], v[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| parse_err(path, count_line, "file ends before all faces"))?;
        let n = parse_usize(toks[0], path, l)?;
        if toks.len() < n + 1 {
            return Err(parse_err(
                path,
                l,
                format!("face declares {n} vertices but lists {}", toks.len() - 1),
            ));
        }
        let poly = toks[1..=n]
            .iter()
            .map(|t| parse_usize(t, path, l))
            .collect::<Result<Vec<_>>>()?;
        push_polygon(&poly, nv, &mut faces, path, l)?;
    }
    Ok(RawCloud {
        positions,
        normals: None,
        faces,
    })
}

fn parse_xyz(text: &str, path: &Path) -> Result<RawCloud> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (l, toks) in content_lines(text) {
        if toks.len() != 3 && toks.len() != 6 {
            return Err(parse_err(
                path,
                l,
                format!("expected 6 values, found {}", toks.len()),
            ));
        }
        if *width.get_or_insert(toks.len()) != toks.len() {
            return Err(parse_err(path, l, "inconsistent column count"));
        }
        let v = parse_floats(&toks, path, l)?;
        positions.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            let n = Vec3::new(v[3], v[4], v[5]);
            if n.norm() == 0.0 {
                return Err(parse_err(path, l, "zero-length normal"));
            }
            normals.push(n);
        }
    }
    let has_normals = width == Some(6);
    Ok(RawCloud {
        positions,
        normals: has_normals.then_some(normals),
        faces: Vec::new(),
    })
}

struct PlyElement {
    name: String,
    count: usize,
    /// (name, is_list)
    properties: Vec<(String, bool)>,
}

fn parse_ply(text: &str, path: &Path) -> Result<RawCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "expected ply magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_end = None;
    for (l, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, l, "only ascii PLY is supported"));
                }
                saw_format = true;
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(parse_err(path, l, "malformed element line"));
                }
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count: parse_usize(toks[2], path, l)?,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, l, "property before any element"))?;
                let is_list = toks.get(1) == Some(&"list");
                let name = toks
                    .last()
                    .filter(|_| toks.len() >= if is_list { 5 } else { 3 })
                    .ok_or_else(|| parse_err(path, l, "malformed property line"))?;
                el.properties.push((name.to_string(), is_list));
            }
            Some("end_header") => {
                header_end = Some(l);
                break;
            }
            Some(other) => {
                return Err(parse_err(
                    path,
                    l,
                    format!("unexpected header keyword {other:?}"),
                ))
            }
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(path, 1, "missing end_header"))?;
    if !saw_format {
        return Err(parse_err(path, header_end, "missing format line"));
    }

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = false;
    let mut faces = Vec::new();
    let mut n_vertices = 0;
    for el in &elements {
        let col = |name: &str| el.properties.iter().position(|(p, _)| p == name);
        for _ in 0..el.count {
            let (l, line) = body.next().ok_or_else(|| {
                parse_err(
                    path,
                    header_end,
                    format!("file ends inside element {}", el.name),
                )
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
                        return Err(parse_err(path, header_end, "vertex element needs x y z"));
                    };
                    if el.properties.iter().any(|(_, list)| *list) {
                        return Err(parse_err(
                            path,
                            header_end,
                            "list properties on vertices are not supported",
                        ));
                    }
                    if toks.len() != el.properties.len() {
                        return Err(parse_err(
                            path,
                            l,
                            format!("expected {} values", el.properties.len()),
                        ));
                    }
                    let v = parse_floats(&toks, path, l)?;
                    positions.push(Vec3::new(v[x], v[y], v[z]));
                    if let (Some(nx), Some(ny), Some(nz)) = (col("nx"), col("ny"), col("nz")) {
                        has_normals = true;
                        let n = Vec3::new(v[nx], v[ny], v[nz]);
                        if n.norm() == 0.0 {
                            return Err(parse_err(path, l, "zero-length normal"));
                        }
                        normals.push(n);
                    }
                    n_vertices += 1;
                }
                "face" => {
                    // Only the first property (the index list) is read.
                    let n = parse_usize(toks.first().copied().unwrap_or(""), path, l)?;
                    if toks.len() < n + 1 {
                        return Err(parse_err(path, l, "face list shorter than declared"));
                    }
                    let poly = toks[1..=n]
                        .iter()
                        .map(|t| parse_usize(t, path, l))
                        .collect::<Result<Vec<_>>>()?;
                    push_polygon(&poly, n_vertices, &mut faces, path, l)?;
                }
                _ => {}
            }
        }
    }
    Ok(RawCloud {
        positions,
        normals: has_normals.then_some(normals),
        faces,
    })
}

/// Face-derived vertex normals (area weighted) when faces exist, PCA
/// otherwise. Vertices without incident area fall back to PCA as well.
fn derive_normals(positions: &[Vec3], faces: Option<&[[usize; 3]]>) -> Result<Vec<Vec3>> {
    let mut normals = vec![Vec3::zeros(); positions.len()];
    if let Some(faces) = faces {
        for f in faces {
            let n = (positions[f[1]] - positions[f[0]]).cross(&(positions[f[2]] - positions[f[0]]));
            for &v in f {
                normals[v] += n;
            }
        }
        // Follow the outward convention when the winding is inverted overall.
        let c = positions.iter().sum::<Vec3>() / positions.len() as f64;
        let outward: f64 = normals
            .iter()
            .zip(positions)
            .map(|(n, p)| n.dot(&(p - c)))
            .sum();
        if outward < 0.0 {
            normals.iter_mut().for_each(|n| *n = -*n);
        }
    }
    if normals.iter().any(|n| n.norm() == 0.0) {
        let pca = if positions.len() >= 3 {
            let k = ESTIMATE_K.min(positions.len());
            let tmp = PointCloud::new(positions.to_vec(), vec![Vec3::z(); positions.len()], None)?;
            estimate_normals(&tmp, k)?.cloud.normals
        } else {
            vec![Vec3::z(); positions.len()]
        };
        for (n, p) in normals.iter_mut().zip(pca) {
            if n.norm() == 0.0 {
                *n = p;
            }
        }
    }
    Ok(normals)
}

/// Samples `n` points uniformly by area from a mesh's triangles. Each sample
/// takes its triangle's normal, oriented to agree with the vertex normals.
pub fn sample_mesh_surface(cloud: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let faces = cloud
        .faces
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("surface sampling needs faces".into()))?;
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in faces {
        let [a, b, c] = f.map(|v| cloud.positions[v]);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument("mesh has zero surface area".into()));
    }
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c < t).min(faces.len() - 1);
        let f = faces[fi];
        let [a, b, c] = f.map(|v| cloud.positions[v]);
        let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        positions.push(a + (b - a) * u + (c - a) * v);
        let mut normal = (b - a).cross(&(c - a)).normalize();
        let vertex_normal: Vec3 = f.iter().map(|&i| cloud.normals[i]).sum();
        if normal.dot(&vertex_normal) < 0.0 {
            normal = -normal;
        }
        normals.push(normal);
    }
    PointCloud::new(positions, normals, None)
}

/// Writes a cloud as xyz-normals text, shortest round-trip float formatting.
pub fn write_xyz_normals(cloud: &PointCloud, path: &Path) -> Result<()> {
    use std::fmt::Write;
    let mut out = String::new();
    for (p, n) in cloud.positions.iter().zip(&cloud.normals) {
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    std::fs::write(path, out)?;
    Ok(())
}
