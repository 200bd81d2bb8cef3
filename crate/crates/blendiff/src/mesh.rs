//! Triangle meshes, OBJ import/export, and the blendshape linear model.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Blendshape names used for speech-relevant facial motion. These are
/// the standard ARKit action names for the mouth, jaw, cheek, and nose
/// regions.
pub const SPEECH_BLENDSHAPE_NAMES: [&str; 32] = [
    "jawForward",
    "jawLeft",
    "jawRight",
    "jawOpen",
    "mouthClose",
    "mouthFunnel",
    "mouthPucker",
    "mouthLeft",
    "mouthRight",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
    "cheekPuff",
    "cheekSquintLeft",
    "cheekSquintRight",
    "noseSneerLeft",
    "noseSneerRight",
];

/// Symmetric left/right blendshape pairs within
/// [`SPEECH_BLENDSHAPE_NAMES`].
pub fn symmetric_blendshape_pairs() -> Vec<(String, String)> {
    [
        ("jawLeft", "jawRight"),
        ("mouthLeft", "mouthRight"),
        ("mouthSmileLeft", "mouthSmileRight"),
        ("mouthFrownLeft", "mouthFrownRight"),
        ("mouthDimpleLeft", "mouthDimpleRight"),
        ("mouthStretchLeft", "mouthStretchRight"),
        ("mouthPressLeft", "mouthPressRight"),
        ("mouthLowerDownLeft", "mouthLowerDownRight"),
        ("mouthUpperUpLeft", "mouthUpperUpRight"),
        ("cheekSquintLeft", "cheekSquintRight"),
        ("noseSneerLeft", "noseSneerRight"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

/// Triangle mesh: vertex positions plus triangular faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    /// Flat positions, length 3*M: x0 y0 z0 x1 y1 z1 ...
    pub positions: Vec<f64>,
    /// Vertex indices per face, 0-based.
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(positions: Vec<f64>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if positions.len() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "position buffer length {} is not a multiple of 3",
                positions.len()
            )));
        }
        let m = positions.len() / 3;
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= m {
                    return Err(Error::IndexOutOfRange {
                        line: fi,
                        index: v + 1,
                        vertices: m,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DimensionMismatch(format!(
                    "degenerate face {fi}: repeated vertex index"
                )));
            }
        }
        Ok(TriMesh { positions, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        ]
    }

    pub fn centroid(&self) -> [f64; 3] {
        let m = self.vertex_count() as f64;
        let mut c = [0.0; 3];
        for i in 0..self.vertex_count() {
            let v = self.vertex(i);
            for a in 0..3 {
                c[a] += v[a];
            }
        }
        for a in c.iter_mut() {
            *a /= m;
        }
        c
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let va = self.vertex(a);
                let vb = self.vertex(b);
                total += dist3(&va, &vb);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Restrict to the vertices listed in `keep`: faces with all three
    /// vertices kept survive. Returns the submesh plus, per submesh
    /// vertex, its index in the original mesh.
    pub fn submesh(&self, keep: &[usize]) -> Result<(TriMesh, Vec<usize>)> {
        let m = self.vertex_count();
        let keep_set: HashSet<usize> = keep.iter().copied().collect();
        for &v in keep {
            if v >= m {
                return Err(Error::IndexOutOfRange {
                    line: 0,
                    index: v,
                    vertices: m,
                });
            }
        }
        let mut old_to_new = vec![usize::MAX; m];
        let mut new_to_old = Vec::new();
        for v in 0..m {
            if keep_set.contains(&v) {
                old_to_new[v] = new_to_old.len();
                new_to_old.push(v);
            }
        }
        let mut positions = Vec::with_capacity(new_to_old.len() * 3);
        for &v in &new_to_old {
            positions.extend_from_slice(&self.positions[3 * v..3 * v + 3]);
        }
        let faces = self
            .faces
            .iter()
            .filter(|f| f.iter().all(|&v| keep_set.contains(&v)))
            .map(|f| [old_to_new[f[0]], old_to_new[f[1]], old_to_new[f[2]]])
            .collect();
        Ok((TriMesh { positions, faces }, new_to_old))
    }
}

pub fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Linear blendshape model: template position vector plus per-shape
/// residual vectors.
#[derive(Debug, Clone)]
pub struct BlendshapeModel {
    /// Template positions, length 3*M.
    pub template: Vec<f64>,
    /// Residual vectors b_k - b_0, each length 3*M.
    pub deltas: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl BlendshapeModel {
    pub fn new(template: Vec<f64>, deltas: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if deltas.len() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} deltas but {} names",
                deltas.len(),
                names.len()
            )));
        }
        for (k, d) in deltas.iter().enumerate() {
            if d.len() != template.len() {
                return Err(Error::DimensionMismatch(format!(
                    "delta {k} has length {} but template has {}",
                    d.len(),
                    template.len()
                )));
            }
        }
        Ok(BlendshapeModel {
            template,
            deltas,
            names,
        })
    }

    pub fn num_shapes(&self) -> usize {
        self.deltas.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len() / 3
    }

    /// Evaluate the linear model: template + sum_k u_k * delta_k.
    pub fn apply_coefficients(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.num_shapes() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coefficients, got {}",
                self.num_shapes(),
                u.len()
            )));
        }
        let mut out = self.template.clone();
        for (uk, delta) in u.iter().zip(&self.deltas) {
            if *uk == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(delta) {
                *o += uk * d;
            }
        }
        Ok(out)
    }

    /// Restrict the model to a vertex subset (3 coordinates per kept
    /// vertex, in `keep` order).
    pub fn restrict_to_vertices(&self, keep: &[usize]) -> Result<BlendshapeModel> {
        let m = self.vertex_count();
        for &v in keep {
            if v >= m {
                return Err(Error::IndexOutOfRange {
                    line: 0,
                    index: v,
                    vertices: m,
                });
            }
        }
        let pick = |src: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(keep.len() * 3);
            for &v in keep {
                out.extend_from_slice(&src[3 * v..3 * v + 3]);
            }
            out
        };
        Ok(BlendshapeModel {
            template: pick(&self.template),
            deltas: self.deltas.iter().map(|d| pick(d)).collect(),
            names: self.names.clone(),
        })
    }
}

/// Parse Wavefront OBJ geometry. Only `v` and `f` records matter;
/// normals, texture coordinates and grouping are skipped. Faces with
/// more than 3 vertices are fan-triangulated around the first vertex.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut positions: Vec<f64> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = parts.next().ok_or_else(|| Error::ParseError {
                        line: lineno,
                        reason: "vertex record needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::ParseError {
                        line: lineno,
                        reason: format!("bad coordinate '{tok}'"),
                    })?;
                }
                positions.extend_from_slice(&coords);
            }
            Some("f") => {
                let mut idx: Vec<usize> = Vec::new();
                for tok in parts {
                    // "i", "i/t", "i/t/n", "i//n"
                    let vtok = tok.split('/').next().unwrap_or("");
                    let v: i64 = vtok.parse().map_err(|_| Error::ParseError {
                        line: lineno,
                        reason: format!("bad face index '{tok}'"),
                    })?;
                    let m = positions.len() / 3;
                    if v < 1 || v as usize > m {
                        return Err(Error::IndexOutOfRange {
                            line: lineno,
                            index: v.max(0) as usize,
                            vertices: m,
                        });
                    }
                    idx.push(v as usize - 1);
                }
                if idx.len() < 3 {
                    return Err(Error::ParseError {
                        line: lineno,
                        reason: "face needs at least 3 vertices".into(),
                    });
                }
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {} // vn, vt, g, o, mtllib, usemtl, s ...
        }
    }
    TriMesh::new(positions, faces)
}

/// Serialize a mesh as OBJ text. Coordinates round-trip through
/// [`parse_obj`] to within the printed precision (1e-6).
pub fn export_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for i in 0..mesh.vertex_count() {
        let v = mesh.vertex(i);
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    std::fs::write(path, export_obj(mesh))?;
    Ok(())
}

/// Vertex correspondence between a source and a target mesh.
#[derive(Debug, Clone, Default)]
pub struct VertexCorrespondence {
    pub pairs: Vec<(usize, usize)>,
}

impl VertexCorrespondence {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(s, _) in &pairs {
            if !seen.insert(s) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate source vertex {s} in correspondence"
                )));
            }
        }
        Ok(VertexCorrespondence { pairs })
    }

    pub fn validate(&self, src: &TriMesh, tgt: &TriMesh) -> Result<()> {
        for &(s, t) in &self.pairs {
            if s >= src.vertex_count() {
                return Err(Error::IndexOutOfRange {
                    line: 0,
                    index: s,
                    vertices: src.vertex_count(),
                });
            }
            if t >= tgt.vertex_count() {
                return Err(Error::IndexOutOfRange {
                    line: 0,
                    index: t,
                    vertices: tgt.vertex_count(),
                });
            }
        }
        Ok(())
    }
}

/// Correspondence file: one `src_idx tgt_idx` pair per line.
pub fn parse_correspondence(text: &str) -> Result<VertexCorrespondence> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut parse = |parts: &mut std::str::SplitWhitespace| -> Result<usize> {
            let tok = parts.next().ok_or_else(|| Error::ParseError {
                line: lineno + 1,
                reason: "expected 'src_idx tgt_idx'".into(),
            })?;
            tok.parse().map_err(|_| Error::ParseError {
                line: lineno + 1,
                reason: format!("bad index '{tok}'"),
            })
        };
        let s = parse(&mut parts)?;
        let t = parse(&mut parts)?;
        pairs.push((s, t));
    }
    VertexCorrespondence::new(pairs)
}

/// Vertex-subset mask file: one vertex index per line.
pub fn parse_vertex_mask(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::ParseError {
            line: lineno + 1,
            reason: format!("bad vertex index '{line}'"),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_triangle() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_fan_triangulates() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_face_index() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        match err {
            Error::IndexOutOfRange { index, vertices, .. } => {
                assert_eq!(index, 9);
                assert_eq!(vertices, 3);
            }
            other => panic!("expected IndexOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn malformed_vertex_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 oops 0\n").unwrap_err();
        match err {
            Error::ParseError { line, .. } => assert_eq!(line, 2),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn slash_indices_and_comments() {
        let mesh =
            parse_obj("# header\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn export_roundtrip_triangle() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        let back = parse_obj(&export_obj(&mesh)).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn export_empty_mesh_is_header_only() {
        let mesh = TriMesh::new(vec![], vec![]).unwrap();
        assert_eq!(export_obj(&mesh), "");
        let back = parse_obj(&export_obj(&mesh)).unwrap();
        assert_eq!(back.vertex_count(), 0);
    }

    #[test]
    fn apply_zero_gives_template() {
        let model = BlendshapeModel::new(
            vec![0.0, 0.0, 0.0],
            vec![vec![1.0, 0.0, 0.0]],
            vec!["open".into()],
        )
        .unwrap();
        assert_eq!(model.apply_coefficients(&[0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_unit_vector_gives_blendshape() {
        let model = BlendshapeModel::new(
            vec![0.5, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![
                vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 0.0, 0.0, -1.0],
            ],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let p = model.apply_coefficients(&[0.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5, 2.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn apply_half_blend() {
        let model = BlendshapeModel::new(
            vec![0.0, 0.0, 0.0],
            vec![vec![1.0, 0.0, 0.0]],
            vec!["a".into()],
        )
        .unwrap();
        assert_eq!(model.apply_coefficients(&[0.5]).unwrap(), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn apply_is_affine_for_dyadic_inputs() {
        // exact float check with power-of-two values
        let model = BlendshapeModel::new(
            vec![0.25, -0.5, 1.0],
            vec![vec![0.5, 0.25, -1.0], vec![2.0, -0.125, 0.5]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let u1 = [0.25, 0.5];
        let u2 = [0.125, 0.25];
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let lhs: Vec<f64> = model
            .apply_coefficients(&u1)
            .unwrap()
            .iter()
            .zip(model.apply_coefficients(&u2).unwrap())
            .zip(model.apply_coefficients(&[0.0, 0.0]).unwrap())
            .map(|((a, b), z)| a + b - z)
            .collect();
        assert_eq!(lhs, model.apply_coefficients(&sum).unwrap());
    }

    #[test]
    fn wrong_coefficient_count() {
        let model =
            BlendshapeModel::new(vec![0.0; 3], vec![vec![1.0; 3]], vec!["a".into()]).unwrap();
        assert!(matches!(
            model.apply_coefficients(&[0.1, 0.2]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn correspondence_rejects_duplicate_source() {
        assert!(VertexCorrespondence::new(vec![(0, 1), (0, 2)]).is_err());
    }

    #[test]
    fn parses_correspondence_and_mask() {
        let vc = parse_correspondence("0 5\n1 7\n# comment\n2 9\n").unwrap();
        assert_eq!(vc.pairs, vec![(0, 5), (1, 7), (2, 9)]);
        let mask = parse_vertex_mask("3\n1\n4\n").unwrap();
        assert_eq!(mask, vec![3, 1, 4]);
    }

    #[test]
    fn submesh_keeps_interior_faces() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 2 2\nf 1 2 3\n").unwrap();
        let (sub, map) = mesh.submesh(&[0, 1, 2]).unwrap();
        assert_eq!(sub.vertex_count(), 3);
        assert_eq!(sub.faces, vec![[0, 1, 2]]);
        assert_eq!(map, vec![0, 1, 2]);
        let (sub2, _) = mesh.submesh(&[0, 1, 3]).unwrap();
        assert_eq!(sub2.face_count(), 0);
    }
}
