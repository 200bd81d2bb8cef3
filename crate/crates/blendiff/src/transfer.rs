//! Deformation transfer between triangle meshes.
//!
//! Given a source template, a deformed source, and a face
//! correspondence, reproduce the per-triangle deformation on a target
//! template by least squares over the target vertex positions.
//!
//! Each triangle carries a local frame of its two edges plus a fourth
//! direction (e1 x e2) / sqrt(|e1 x e2|); the per-face deformation
//! gradient maps the template frame onto the deformed frame. The
//! transfer objective matches target gradients to source gradients.
//! The fourth-vertex offsets are unconstrained per face, so they are
//! eliminated in closed form, leaving a positive semi-definite normal
//! system over the vertices whose only null direction is global
//! translation; a centroid penalty fixes the gauge and the system is
//! solved with a dense Cholesky factorization per coordinate axis.

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{dist3, BlendshapeModel, TriMesh, VertexCorrespondence};
use crate::tensor::Tensor;

const DEGENERATE_AREA: f64 = 1e-12;

/// Face-to-face correspondence: (source face, target face) pairs.
#[derive(Debug, Clone, Default)]
pub struct FaceCorrespondence {
    pub pairs: Vec<(usize, usize)>,
}

impl FaceCorrespondence {
    pub fn identity(n_faces: usize) -> Self {
        FaceCorrespondence {
            pairs: (0..n_faces).map(|i| (i, i)).collect(),
        }
    }

    /// Per-target-face source index.
    pub fn source_for_targets(&self, n_target_faces: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n_target_faces];
        for &(s, t) in &self.pairs {
            if t < n_target_faces {
                map[t] = Some(s);
            }
        }
        map
    }

    /// Target faces with no assigned source face.
    pub fn unmatched_targets(&self, n_target_faces: usize) -> Vec<usize> {
        self.source_for_targets(n_target_faces)
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-face 3x3 affine transforms of a deformed mesh.
#[derive(Debug, Clone)]
pub struct DeformationGradientSet {
    pub transforms: Vec<[[f64; 3]; 3]>,
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat3_inv(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_det;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_det;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_det;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_det;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_det;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_det;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_det;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_det;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_det;
    Some(out)
}

fn face_vertices(positions: &[f64], face: &[usize; 3]) -> [[f64; 3]; 3] {
    let v = |i: usize| -> [f64; 3] {
        [
            positions[3 * face[i]],
            positions[3 * face[i] + 1],
            positions[3 * face[i] + 2],
        ]
    };
    [v(0), v(1), v(2)]
}

/// Triangle frame as matrix columns: the two edges plus the area-scaled
/// normal (e1 x e2) / sqrt(|e1 x e2|).
fn triangle_frame(positions: &[f64], face: &[usize; 3]) -> Result<[[f64; 3]; 3]> {
    let [v0, v1, v2] = face_vertices(positions, face);
    let e1 = sub3(&v1, &v0);
    let e2 = sub3(&v2, &v0);
    let n = cross3(&e1, &e2);
    let len = norm3(&n);
    if len < 2.0 * DEGENERATE_AREA {
        return Err(Error::DegenerateTriangle {
            face: 0,
            area: len / 2.0,
        });
    }
    let s = 1.0 / len.sqrt();
    let mut frame = [[0.0; 3]; 3];
    for a in 0..3 {
        frame[a][0] = e1[a];
        frame[a][1] = e2[a];
        frame[a][2] = n[a] * s;
    }
    Ok(frame)
}

fn face_centroid(positions: &[f64], face: &[usize; 3]) -> [f64; 3] {
    let [v0, v1, v2] = face_vertices(positions, face);
    [
        (v0[0] + v1[0] + v2[0]) / 3.0,
        (v0[1] + v1[1] + v2[1]) / 3.0,
        (v0[2] + v1[2] + v2[2]) / 3.0,
    ]
}

fn face_unit_normal(positions: &[f64], face: &[usize; 3]) -> [f64; 3] {
    let [v0, v1, v2] = face_vertices(positions, face);
    let n = cross3(&sub3(&v1, &v0), &sub3(&v2, &v0));
    let len = norm3(&n).max(1e-300);
    [n[0] / len, n[1] / len, n[2] / len]
}

/// Per-face transforms mapping the template triangle frames onto the
/// deformed frames.
pub fn deformation_gradients(
    template: &TriMesh,
    deformed_positions: &[f64],
) -> Result<DeformationGradientSet> {
    if deformed_positions.len() != template.positions.len() {
        return Err(Error::DimensionMismatch(format!(
            "deformed positions length {} but template has {}",
            deformed_positions.len(),
            template.positions.len()
        )));
    }
    let mut transforms = Vec::with_capacity(template.face_count());
    for (fi, face) in template.faces.iter().enumerate() {
        let v = triangle_frame(&template.positions, face).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { face: fi, area },
            other => other,
        })?;
        let v_inv = mat3_inv(&v).ok_or(Error::DegenerateTriangle { face: fi, area: 0.0 })?;
        let v_def = triangle_frame(deformed_positions, face).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { face: fi, area },
            other => other,
        })?;
        let q = mat3_mul(&v_def, &v_inv);
        if q.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateTriangle { face: fi, area: 0.0 });
        }
        transforms.push(q);
    }
    Ok(DeformationGradientSet { transforms })
}

/// Rigid + uniform-scale alignment (rotation, scale, translation)
/// mapping source points onto target points by least squares.
struct Alignment {
    r: [[f64; 3]; 3],
    s: f64,
    t: [f64; 3],
}

impl Alignment {
    fn apply_point(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.s * (self.r[i][0] * p[0] + self.r[i][1] * p[1] + self.r[i][2] * p[2])
                + self.t[i];
        }
        out
    }

    fn apply_direction(&self, d: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.r[i][0] * d[0] + self.r[i][1] * d[1] + self.r[i][2] * d[2];
        }
        out
    }
}

/// Closed-form absolute orientation via the quaternion eigenvector of
/// the correlation matrix.
fn estimate_alignment(
    src: &TriMesh,
    tgt: &TriMesh,
    vc: &VertexCorrespondence,
) -> Result<Alignment> {
    if vc.pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "vertex correspondence is empty".into(),
        ));
    }
    vc.validate(src, tgt)?;
    let n = vc.pairs.len() as f64;
    let mut sc = [0.0; 3];
    let mut tc = [0.0; 3];
    for &(si, ti) in &vc.pairs {
        let s = src.vertex(si);
        let t = tgt.vertex(ti);
        for a in 0..3 {
            sc[a] += s[a] / n;
            tc[a] += t[a] / n;
        }
    }
    let mut h = [[0.0; 3]; 3];
    let mut src_sq = 0.0;
    for &(si, ti) in &vc.pairs {
        let s = sub3(&src.vertex(si), &sc);
        let t = sub3(&tgt.vertex(ti), &tc);
        src_sq += dot3(&s, &s);
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += s[i] * t[j];
            }
        }
    }

    let r = if src_sq < 1e-18 {
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    } else {
        // 4x4 quaternion matrix; its top eigenvector is the optimal
        // rotation.
        let (sxx, sxy, sxz) = (h[0][0], h[0][1], h[0][2]);
        let (syx, syy, syz) = (h[1][0], h[1][1], h[1][2]);
        let (szx, szy, szz) = (h[2][0], h[2][1], h[2][2]);
        let nmat = Tensor::from_rows(&[
            vec![sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            vec![syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            vec![szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            vec![sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]);
        let (w, v) = linalg::sym_eigen(&nmat)?;
        let best = (0..4)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap())
            .unwrap();
        let (qw, qx, qy, qz) = (v.at(0, best), v.at(1, best), v.at(2, best), v.at(3, best));
        [
            [
                qw * qw + qx * qx - qy * qy - qz * qz,
                2.0 * (qx * qy - qw * qz),
                2.0 * (qx * qz + qw * qy),
            ],
            [
                2.0 * (qx * qy + qw * qz),
                qw * qw - qx * qx + qy * qy - qz * qz,
                2.0 * (qy * qz - qw * qx),
            ],
            [
                2.0 * (qx * qz - qw * qy),
                2.0 * (qy * qz + qw * qx),
                qw * qw - qx * qx - qy * qy + qz * qz,
            ],
        ]
    };

    let mut scale = 1.0;
    if src_sq >= 1e-18 {
        let mut num = 0.0;
        for &(si, ti) in &vc.pairs {
            let s = sub3(&src.vertex(si), &sc);
            let t = sub3(&tgt.vertex(ti), &tc);
            let rs = [
                r[0][0] * s[0] + r[0][1] * s[1] + r[0][2] * s[2],
                r[1][0] * s[0] + r[1][1] * s[1] + r[1][2] * s[2],
                r[2][0] * s[0] + r[2][1] * s[1] + r[2][2] * s[2],
            ];
            num += dot3(&t, &rs);
        }
        if num > 1e-18 {
            scale = num / src_sq;
        }
    }

    let mut t = [0.0; 3];
    for i in 0..3 {
        t[i] = tc[i] - scale * (r[i][0] * sc[0] + r[i][1] * sc[1] + r[i][2] * sc[2]);
    }
    Ok(Alignment { r, s: scale, t })
}

/// Match every target face to the source face with the nearest centroid
/// whose normal points the same way (angle < 90 degrees), after a
/// rigid+scale alignment of the source onto the target estimated from
/// the vertex correspondence. Matches farther than 3x the mean target
/// edge length are rejected.
pub fn build_face_correspondence(
    src: &TriMesh,
    tgt: &TriMesh,
    vc: &VertexCorrespondence,
) -> Result<FaceCorrespondence> {
    let align = estimate_alignment(src, tgt, vc)?;
    let threshold = 3.0 * tgt.mean_edge_length();

    let src_centroids: Vec<[f64; 3]> = src
        .faces
        .iter()
        .map(|f| align.apply_point(&face_centroid(&src.positions, f)))
        .collect();
    let src_normals: Vec<[f64; 3]> = src
        .faces
        .iter()
        .map(|f| align.apply_direction(&face_unit_normal(&src.positions, f)))
        .collect();

    let mut pairs = Vec::with_capacity(tgt.face_count());
    for (tf, face) in tgt.faces.iter().enumerate() {
        let tc = face_centroid(&tgt.positions, face);
        let tn = face_unit_normal(&tgt.positions, face);
        let mut best: Option<(usize, f64)> = None;
        for sf in 0..src.face_count() {
            if dot3(&tn, &src_normals[sf]) <= 0.0 {
                continue;
            }
            let d = dist3(&tc, &src_centroids[sf]);
            if d > threshold {
                continue;
            }
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((sf, d));
            }
        }
        match best {
            Some((sf, _)) => pairs.push((sf, tf)),
            None => return Err(Error::NoCompatibleFace { face: tf, threshold }),
        }
    }
    Ok(FaceCorrespondence { pairs })
}

/// Result of a transfer solve.
#[derive(Debug, Clone)]
pub struct TransferResult {
    /// Deformed target positions, length 3*M.
    pub positions: Vec<f64>,
    /// Frobenius norm of the per-face similarity residual at the
    /// solution.
    pub residual: f64,
}

/// Reproduce the deformation `src_template -> src_deformed` on
/// `tgt_template`. Target faces without a correspondence keep the
/// identity transform. The solution is translated so its centroid
/// matches the target template's centroid.
pub fn transfer(
    src_template: &TriMesh,
    src_deformed: &[f64],
    tgt_template: &TriMesh,
    fc: &FaceCorrespondence,
) -> Result<TransferResult> {
    let grads = deformation_gradients(src_template, src_deformed)?;
    transfer_gradients(&grads, tgt_template, fc)
}

struct FaceTerm {
    verts: [usize; 3],
    coeff: [[f64; 3]; 3], // c_{j1}, c_{j2}, c_{j3}
    rhs: [[f64; 3]; 3],   // per axis: P * Q[a,:]^T
}

/// Transfer given precomputed source deformation gradients.
pub fn transfer_gradients(
    src_grads: &DeformationGradientSet,
    tgt_template: &TriMesh,
    fc: &FaceCorrespondence,
) -> Result<TransferResult> {
    let m = tgt_template.vertex_count();
    let nf = tgt_template.face_count();
    if m == 0 {
        return Ok(TransferResult {
            positions: Vec::new(),
            residual: 0.0,
        });
    }
    let source_for = fc.source_for_targets(nf);
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    let mut terms = Vec::with_capacity(nf);
    for (fi, face) in tgt_template.faces.iter().enumerate() {
        let v = triangle_frame(&tgt_template.positions, face).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { face: fi, area },
            other => other,
        })?;
        let w = mat3_inv(&v).ok_or(Error::DegenerateTriangle { face: fi, area: 0.0 })?;
        let (w1, w2, w3) = (w[0], w[1], w[2]);
        let w3_sq = dot3(&w3, &w3);
        // P = I - w3 w3^T / |w3|^2 eliminates the free fourth-vertex
        // direction per face
        let project = |x: &[f64; 3]| -> [f64; 3] {
            let c = dot3(&w3, x) / w3_sq;
            [x[0] - c * w3[0], x[1] - c * w3[1], x[2] - c * w3[2]]
        };
        let alpha = project(&w1);
        let beta = project(&w2);
        let q = match source_for[fi] {
            Some(sf) => {
                src_grads
                    .transforms
                    .get(sf)
                    .copied()
                    .ok_or(Error::InvalidArgument(format!(
                    "correspondence references source face {sf} but only {} gradients given",
                    src_grads.transforms.len()
                )))?
            }
            None => identity,
        };
        let mut rhs = [[0.0; 3]; 3];
        for (a, rhs_row) in rhs.iter_mut().enumerate() {
            *rhs_row = project(&q[a]);
        }
        let c1 = [
            -(alpha[0] + beta[0]),
            -(alpha[1] + beta[1]),
            -(alpha[2] + beta[2]),
        ];
        terms.push(FaceTerm {
            verts: *face,
            coeff: [c1, alpha, beta],
            rhs,
        });
    }

    // Normal matrix (shared by all axes) and per-axis right-hand sides.
    let mut a = Tensor::zeros(vec![m, m]);
    let mut b = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for term in &terms {
        for (ui, &u) in term.verts.iter().enumerate() {
            let cu = term.coeff[ui];
            for (vi, &v) in term.verts.iter().enumerate() {
                let duv = dot3(&cu, &term.coeff[vi]);
                let cur = a.at(u, v) + duv;
                a.set(u, v, cur);
            }
            for axis in 0..3 {
                b[axis][u] += dot3(&cu, &term.rhs[axis]);
            }
        }
    }

    // Gauge fix: penalize the centroid's deviation from the target
    // template centroid. Translation is exactly null in the face terms,
    // so any positive weight leaves the shape untouched.
    let trace: f64 = (0..m).map(|i| a.at(i, i)).sum();
    let w_pen = (trace / m as f64).max(1e-12) / m as f64;
    let centroid = tgt_template.centroid();
    for u in 0..m {
        for v in 0..m {
            let cur = a.at(u, v) + w_pen;
            a.set(u, v, cur);
        }
    }
    for (axis, rhs) in b.iter_mut().enumerate() {
        for item in rhs.iter_mut() {
            *item += w_pen * m as f64 * centroid[axis];
        }
    }

    let l = linalg::cholesky(&a).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let xs: Vec<Vec<f64>> = b.iter().map(|rhs| linalg::cholesky_solve(&l, rhs)).collect();

    let mut positions = vec![0.0; 3 * m];
    for u in 0..m {
        for axis in 0..3 {
            positions[3 * u + axis] = xs[axis][u];
        }
    }

    // Snap centroids exactly.
    let solved = TriMesh {
        positions: positions.clone(),
        faces: tgt_template.faces.clone(),
    };
    let sc = solved.centroid();
    for u in 0..m {
        for axis in 0..3 {
            positions[3 * u + axis] += centroid[axis] - sc[axis];
        }
    }

    let mut residual_sq = 0.0;
    for term in &terms {
        for axis in 0..3 {
            let mut r = [
                -term.rhs[axis][0],
                -term.rhs[axis][1],
                -term.rhs[axis][2],
            ];
            for (ui, &u) in term.verts.iter().enumerate() {
                let x = positions[3 * u + axis];
                for c in 0..3 {
                    r[c] += term.coeff[ui][c] * x;
                }
            }
            residual_sq += dot3(&r, &r);
        }
    }

    Ok(TransferResult {
        positions,
        residual: residual_sq.sqrt(),
    })
}

/// Per-blendshape transfer statistics.
#[derive(Debug, Clone)]
pub struct BlendshapeStats {
    pub name: String,
    pub residual: f64,
    pub max_delta: f64,
}

/// Build a target blendshape model by transferring every deformed
/// source mesh onto the target template.
pub fn build_blendshapes(
    src_template: &TriMesh,
    src_blendshapes: &[(String, TriMesh)],
    tgt_template: &TriMesh,
    fc: &FaceCorrespondence,
) -> Result<(BlendshapeModel, Vec<BlendshapeStats>)> {
    let mut deltas = Vec::with_capacity(src_blendshapes.len());
    let mut names = Vec::with_capacity(src_blendshapes.len());
    let mut stats = Vec::with_capacity(src_blendshapes.len());
    for (name, shape) in src_blendshapes {
        if shape.positions.len() != src_template.positions.len()
            || shape.faces != src_template.faces
        {
            return Err(Error::DimensionMismatch(format!(
                "blendshape '{name}' does not share the source template topology"
            )));
        }
        let result =
            transfer(src_template, &shape.positions, tgt_template, fc).map_err(|e| {
                Error::WithContext {
                    context: format!("blendshape '{name}'"),
                    source: Box::new(e),
                }
            })?;
        let delta: Vec<f64> = result
            .positions
            .iter()
            .zip(&tgt_template.positions)
            .map(|(a, b)| a - b)
            .collect();
        let max_delta = delta.iter().fold(0.0f64, |acc, &d| acc.max(d.abs()));
        stats.push(BlendshapeStats {
            name: name.clone(),
            residual: result.residual,
            max_delta,
        });
        deltas.push(delta);
        names.push(name.clone());
    }
    let model = BlendshapeModel::new(tgt_template.positions.clone(), deltas, names)?;
    Ok((model, stats))
}
