//! Volumetric box meshes (trilinear hexahedra or linear tetrahedra), Dirichlet
//! sets, lumped mass and the rest-configuration data needed to evaluate
//! deformation gradients.
//!
//! Hexahedron corners are numbered `a = i + 2j + 4k` where `(i, j, k)` are the
//! corner's offsets along x, y and z. Nodes of a box grid are numbered
//! `i + (nx + 1) * (j + (ny + 1) * k)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when selecting nodes that lie on a plane.
pub const PLANE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Hex8,
    Tet4,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Hex8 => 8,
            ElementKind::Tet4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Hex8 => "hex8",
            ElementKind::Tet4 => "tet4",
        }
    }
}

impl FromStr for ElementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hex8" | "hex" => Ok(ElementKind::Hex8),
            "tet4" | "tet" => Ok(ElementKind::Tet4),
            other => Err(Error::invalid(format!("unknown element kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceSide {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    kind: ElementKind,
    nodes: Vec<Vector3<f64>>,
    /// Flattened connectivity, `kind.nodes_per_element()` entries per element.
    connectivity: Vec<usize>,
    dirichlet: BTreeSet<usize>,
}

impl Mesh {
    /// Builds a mesh from raw parts, checking index bounds. Geometric validity
    /// (positive volumes) is checked by [`Mesh::rest_shapes`].
    pub fn from_parts(
        kind: ElementKind,
        nodes: Vec<Vector3<f64>>,
        elements: Vec<Vec<usize>>,
        dirichlet: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let npe = kind.nodes_per_element();
        let mut connectivity = Vec::with_capacity(elements.len() * npe);
        for (e, element) in elements.iter().enumerate() {
            if element.len() != npe {
                return Err(Error::invalid(format!(
                    "element {e} has {} nodes, expected {npe}",
                    element.len()
                )));
            }
            if let Some(&bad) = element.iter().find(|&&n| n >= nodes.len()) {
                return Err(Error::invalid(format!(
                    "element {e} references node {bad} but the mesh has {} nodes",
                    nodes.len()
                )));
            }
            connectivity.extend_from_slice(element);
        }
        let dirichlet: BTreeSet<usize> = dirichlet.into_iter().collect();
        if let Some(&bad) = dirichlet.iter().find(|&&n| n >= nodes.len()) {
            return Err(Error::invalid(format!("dirichlet node {bad} out of range")));
        }
        Ok(Mesh {
            kind,
            nodes,
            connectivity,
            dirichlet,
        })
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dof_count(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.connectivity.len() / self.kind.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.kind.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.kind.nodes_per_element())
    }

    pub fn dirichlet(&self) -> &BTreeSet<usize> {
        &self.dirichlet
    }

    pub fn is_fixed(&self, node: usize) -> bool {
        self.dirichlet.contains(&node)
    }

    /// Rest positions flattened into a DOF vector.
    pub fn rest_positions(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof_count(), self.nodes.iter().flat_map(|p| p.iter().copied()))
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Nodes lying on the plane `coord[axis] = min/max` within [`PLANE_TOLERANCE`].
    pub fn face_nodes(&self, axis: Axis, side: FaceSide) -> Vec<usize> {
        let (lo, hi) = self.bounding_box();
        let a = axis.index();
        let plane = match side {
            FaceSide::Min => lo[a],
            FaceSide::Max => hi[a],
        };
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| (p[a] - plane).abs() <= PLANE_TOLERANCE)
            .map(|(i, _)| i)
            .collect()
    }

    /// Adds every node of the selected bounding-box face to the Dirichlet set.
    pub fn clamp_face(mut self, axis: Axis, side: FaceSide) -> Result<Self> {
        let selected = self.face_nodes(axis, side);
        if selected.is_empty() {
            return Err(Error::invalid(format!("no nodes on the {side:?} face along {axis:?}")));
        }
        self.dirichlet.extend(selected);
        Ok(self)
    }

    pub fn with_dirichlet(mut self, nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        for n in nodes {
            if n >= self.nodes.len() {
                return Err(Error::invalid(format!("dirichlet node {n} out of range")));
            }
            self.dirichlet.insert(n);
        }
        Ok(self)
    }

    /// Index of the rest node closest to `point` (lowest index on ties).
    pub fn nearest_node(&self, point: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.nodes.iter().enumerate() {
            let d = (p - point).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Diagonal lumped mass, one entry per node: each element spreads `ρ·V_e`
    /// evenly over its corners.
    pub fn lumped_mass(&self, density: f64) -> Result<Vec<f64>> {
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::invalid(format!("density must be positive, got {density}")));
        }
        let rest = self.rest_shapes()?;
        let npe = self.kind.nodes_per_element() as f64;
        let mut mass = vec![0.0; self.node_count()];
        for (e, nodes) in self.elements().enumerate() {
            let share = density * rest.volumes[e] / npe;
            for &n in nodes {
                mass[n] += share;
            }
        }
        Ok(mass)
    }

    pub fn rest_shapes(&self) -> Result<RestShape> {
        RestShape::new(self)
    }

    /// Writes the plain-text mesh format: a header line, one line per node,
    /// one line per element and a final line of Dirichlet indices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.kind.name(),
            self.node_count(),
            self.element_count()
        );
        for p in &self.nodes {
            let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
        }
        for element in self.elements() {
            let line: Vec<String> = element.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let fixed: Vec<String> = self.dirichlet.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "{}", fixed.join(" "));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty mesh file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(ln, "header must be `<kind> <nodes> <elements>`"));
        }
        let kind: ElementKind = fields[0].parse().map_err(|e: Error| Error::parse(ln, e.to_string()))?;
        let n_nodes: usize = parse_field(ln, fields[1])?;
        let n_elements: usize = parse_field(ln, fields[2])?;

        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(ln, "unexpected end of file in node block"))?;
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(|s| parse_field(ln, s))
                .collect::<Result<_>>()?;
            if coords.len() != 3 {
                return Err(Error::parse(ln, "node line must have 3 coordinates"));
            }
            nodes.push(Vector3::new(coords[0], coords[1], coords[2]));
        }
        let mut elements = Vec::with_capacity(n_elements);
        for _ in 0..n_elements {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(ln, "unexpected end of file in element block"))?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| parse_field(ln, s))
                .collect::<Result<_>>()?;
            elements.push(idx);
        }
        let dirichlet: Vec<usize> = match lines.next() {
            Some((ln, line)) => line
                .split_whitespace()
                .map(|s| parse_field(ln, s))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(ln, format!("trailing content `{extra}`")));
        }
        Mesh::from_parts(kind, nodes, elements, dirichlet)
    }
}

fn parse_field<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::parse(line, format!("cannot parse `{s}`")))
}

fn check_box(dims: [f64; 3], resolution: [usize; 3]) -> Result<()> {
    if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::invalid(format!("box dimensions must be positive, got {dims:?}")));
    }
    if resolution.contains(&0) {
        return Err(Error::invalid(format!(
            "resolution must be at least 1 per axis, got {resolution:?}"
        )));
    }
    Ok(())
}

fn grid_nodes(dims: [f64; 3], res: [usize; 3]) -> Vec<Vector3<f64>> {
    let [nx, ny, nz] = res;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vector3::new(
                    dims[0] * i as f64 / nx as f64,
                    dims[1] * j as f64 / ny as f64,
                    dims[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    nodes
}

fn cell_corners(res: [usize; 3], i: usize, j: usize, k: usize) -> [usize; 8] {
    let node = |a: usize, b: usize, c: usize| a + (res[0] + 1) * (b + (res[1] + 1) * c);
    let mut corners = [0; 8];
    for (a, corner) in corners.iter_mut().enumerate() {
        *corner = node(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
    }
    corners
}

/// Regular axis-aligned hexahedral grid over `[0, dims]`.
pub fn build_hex_box(dims: [f64; 3], resolution: [usize; 3]) -> Result<Mesh> {
    check_box(dims, resolution)?;
    let nodes = grid_nodes(dims, resolution);
    let [nx, ny, nz] = resolution;
    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                elements.push(cell_corners(resolution, i, j, k).to_vec());
            }
        }
    }
    Mesh::from_parts(ElementKind::Hex8, nodes, elements, [])
}

// Five-tet split of a cube. Even cells use the central tet {1,2,4,7}; odd
// cells the mirrored {0,3,5,6}, so shared faces get matching diagonals.
const EVEN_SPLIT: [[usize; 4]; 5] = [[1, 2, 4, 7], [0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7]];
const ODD_SPLIT: [[usize; 4]; 5] = [[0, 3, 5, 6], [1, 0, 3, 5], [2, 0, 3, 6], [4, 0, 5, 6], [7, 3, 5, 6]];

/// Grid of cells each split into five positively oriented tetrahedra.
pub fn build_tet_box(dims: [f64; 3], resolution: [usize; 3]) -> Result<Mesh> {
    check_box(dims, resolution)?;
    let nodes = grid_nodes(dims, resolution);
    let [nx, ny, nz] = resolution;
    let mut elements = Vec::with_capacity(5 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let corners = cell_corners(resolution, i, j, k);
                let split = if (i + j + k) % 2 == 0 { &EVEN_SPLIT } else { &ODD_SPLIT };
                for local in split {
                    let mut tet = local.map(|a| corners[a]);
                    if signed_tet_volume(&nodes, &tet) < 0.0 {
                        tet.swap(2, 3);
                    }
                    elements.push(tet.to_vec());
                }
            }
        }
    }
    Mesh::from_parts(ElementKind::Tet4, nodes, elements, [])
}

fn signed_tet_volume(nodes: &[Vector3<f64>], tet: &[usize]) -> f64 {
    let x0 = nodes[tet[0]];
    let dm = Matrix3::from_columns(&[nodes[tet[1]] - x0, nodes[tet[2]] - x0, nodes[tet[3]] - x0]);
    dm.determinant() / 6.0
}

/// Linear map from the nodal positions of one element to a deformation
/// gradient: `F = Σ_a x_a ⊗ ∇N_a`, together with the volume it represents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOperator {
    pub element: usize,
    nodes: [usize; 8],
    grads: [Vector3<f64>; 8],
    len: usize,
    pub volume: f64,
}

impl GradientOperator {
    fn new(element: usize, node_list: &[usize], grad_list: &[Vector3<f64>], volume: f64) -> Self {
        let mut nodes = [0; 8];
        let mut grads = [Vector3::zeros(); 8];
        nodes[..node_list.len()].copy_from_slice(node_list);
        grads[..grad_list.len()].copy_from_slice(grad_list);
        GradientOperator {
            element,
            nodes,
            grads,
            len: node_list.len(),
            volume,
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.len]
    }

    pub fn grads(&self) -> &[Vector3<f64>] {
        &self.grads[..self.len]
    }

    pub fn deformation_gradient(&self, q: &[f64]) -> Matrix3<f64> {
        let mut f = Matrix3::zeros();
        for (&n, g) in self.nodes().iter().zip(self.grads()) {
            let x = Vector3::new(q[3 * n], q[3 * n + 1], q[3 * n + 2]);
            f += x * g.transpose();
        }
        f
    }

    /// Adds `scale · P ∇N_a` to the entries of `out` belonging to node `a`,
    /// i.e. the nodal force pattern of a first Piola-Kirchhoff stress `P`.
    pub fn scatter_stress(&self, p: &Matrix3<f64>, scale: f64, out: &mut [f64]) {
        for (&n, g) in self.nodes().iter().zip(self.grads()) {
            let f = p * g * scale;
            out[3 * n] += f.x;
            out[3 * n + 1] += f.y;
            out[3 * n + 2] += f.z;
        }
    }
}

/// Rest-configuration data per element.
#[derive(Debug, Clone)]
pub struct RestShape {
    pub kind: ElementKind,
    pub volumes: Vec<f64>,
    /// Inverse rest edge matrices `D_m⁻¹` (tetrahedra only).
    pub inverse_edges: Vec<Matrix3<f64>>,
    /// Edge lengths along x, y, z (hexahedra only).
    pub spacing: Vec<Vector3<f64>>,
    /// Quadrature points: 8 Gauss points per hexahedron, one per tetrahedron,
    /// stored contiguously per element.
    pub quadrature: Vec<GradientOperator>,
    /// Element-averaged operator (centre of a hexahedron; the tet itself).
    pub centroids: Vec<GradientOperator>,
}

impl RestShape {
    fn new(mesh: &Mesh) -> Result<Self> {
        let n_el = mesh.element_count();
        let mut rest = RestShape {
            kind: mesh.kind,
            volumes: Vec::with_capacity(n_el),
            inverse_edges: Vec::new(),
            spacing: Vec::new(),
            quadrature: Vec::new(),
            centroids: Vec::with_capacity(n_el),
        };
        let (lo, hi) = mesh.bounding_box();
        let scale = (hi - lo).norm().max(f64::MIN_POSITIVE);
        for (e, nodes) in mesh.elements().enumerate() {
            match mesh.kind {
                ElementKind::Tet4 => rest.push_tet(mesh, e, nodes, scale)?,
                ElementKind::Hex8 => rest.push_hex(mesh, e, nodes, scale)?,
            }
        }
        Ok(rest)
    }

    fn push_tet(&mut self, mesh: &Mesh, e: usize, nodes: &[usize], scale: f64) -> Result<()> {
        let x0 = mesh.nodes[nodes[0]];
        let dm = Matrix3::from_columns(&[
            mesh.nodes[nodes[1]] - x0,
            mesh.nodes[nodes[2]] - x0,
            mesh.nodes[nodes[3]] - x0,
        ]);
        let volume = dm.determinant() / 6.0;
        if !(volume > 1e-12 * scale.powi(3)) {
            return Err(Error::DegenerateElement {
                element: e,
                reason: format!("signed rest volume {volume:e} is not positive"),
            });
        }
        let inv = dm.try_inverse().ok_or_else(|| Error::DegenerateElement {
            element: e,
            reason: "rest edge matrix is singular".into(),
        })?;
        let mut grads = [Vector3::zeros(); 4];
        for a in 0..3 {
            grads[a + 1] = inv.row(a).transpose();
        }
        grads[0] = -(grads[1] + grads[2] + grads[3]);
        let op = GradientOperator::new(e, nodes, &grads, volume);
        self.volumes.push(volume);
        self.inverse_edges.push(inv);
        self.quadrature.push(op);
        self.centroids.push(op);
        Ok(())
    }

    fn push_hex(&mut self, mesh: &Mesh, e: usize, nodes: &[usize], scale: f64) -> Result<()> {
        let x0 = mesh.nodes[nodes[0]];
        let d = mesh.nodes[nodes[7]] - x0;
        let tol = 1e-9 * scale;
        if d.iter().any(|&c| c <= tol) {
            return Err(Error::DegenerateElement {
                element: e,
                reason: format!("hexahedron has non-positive extent {d:?}"),
            });
        }
        for (a, &n) in nodes.iter().enumerate() {
            let expected = x0
                + Vector3::new(
                    d.x * (a & 1) as f64,
                    d.y * ((a >> 1) & 1) as f64,
                    d.z * ((a >> 2) & 1) as f64,
                );
            if (mesh.nodes[n] - expected).norm() > tol {
                return Err(Error::DegenerateElement {
                    element: e,
                    reason: format!("corner {a} is not on an axis-aligned box"),
                });
            }
        }
        let volume = d.x * d.y * d.z;
        let g = 1.0 / 3f64.sqrt();
        for qp in 0..8 {
            let xi = Vector3::new(g * sign(qp & 1), g * sign((qp >> 1) & 1), g * sign((qp >> 2) & 1));
            let grads = hex_shape_gradients(&xi, &d);
            self.quadrature
                .push(GradientOperator::new(e, nodes, &grads, volume / 8.0));
        }
        let grads = hex_shape_gradients(&Vector3::zeros(), &d);
        self.centroids.push(GradientOperator::new(e, nodes, &grads, volume));
        self.volumes.push(volume);
        self.spacing.push(d);
        Ok(())
    }

    /// Gauss-point operators of element `e`.
    pub fn element_quadrature(&self, e: usize) -> &[GradientOperator] {
        match self.kind {
            ElementKind::Hex8 => &self.quadrature[8 * e..8 * e + 8],
            ElementKind::Tet4 => &self.quadrature[e..e + 1],
        }
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }
}

fn sign(bit: usize) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Physical gradients of the trilinear shape functions at reference point
/// `xi ∈ [-1, 1]³` of an axis-aligned box with edge lengths `d`.
fn hex_shape_gradients(xi: &Vector3<f64>, d: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let mut grads = [Vector3::zeros(); 8];
    for (a, grad) in grads.iter_mut().enumerate() {
        let s = Vector3::new(sign(a & 1), sign((a >> 1) & 1), sign((a >> 2) & 1));
        let f = Vector3::new(1.0 + s.x * xi.x, 1.0 + s.y * xi.y, 1.0 + s.z * xi.z);
        *grad = Vector3::new(
            s.x * f.y * f.z / 8.0 * 2.0 / d.x,
            f.x * s.y * f.z / 8.0 * 2.0 / d.y,
            f.x * f.y * s.z / 8.0 * 2.0 / d.z,
        );
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    const BEAM: [f64; 3] = [0.1, 0.035, 0.035];

    #[test]
    fn hex_counts_match_table_resolutions() {
        let m = build_hex_box(BEAM, [23, 7, 7]).unwrap();
        assert_eq!(m.node_count(), 1536);
        assert_eq!(m.dof_count(), 4608);
        assert_eq!(m.element_count(), 23 * 7 * 7);
        let m = build_hex_box(BEAM, [32, 9, 9]).unwrap();
        assert_eq!(m.node_count(), 3300);
        assert_eq!(m.dof_count(), 9900);
        let unit = build_hex_box([1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!((unit.node_count(), unit.element_count()), (8, 1));
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(matches!(
            build_hex_box([0.0, 1.0, 1.0], [1, 1, 1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_tet_box([1.0, -1.0, 1.0], [1, 1, 1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_hex_box([1.0; 3], [1, 0, 1]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tet_split_partitions_volume() {
        let unit = build_tet_box([1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!((unit.node_count(), unit.element_count()), (8, 5));
        for res in [[1, 1, 1], [3, 2, 2], [5, 3, 4]] {
            let m = build_tet_box(BEAM, res).unwrap();
            let rest = m.rest_shapes().unwrap();
            assert!(rest.volumes.iter().all(|&v| v > 0.0));
            assert!(rel_close(rest.total_volume(), 0.1 * 0.035 * 0.035, 1e-12));
            let hex = build_hex_box(BEAM, res).unwrap();
            assert!(rel_close(
                hex.rest_shapes().unwrap().total_volume(),
                0.1 * 0.035 * 0.035,
                1e-12
            ));
        }
    }

    #[test]
    fn tet_faces_are_conforming() {
        // Every interior triangle must be shared by exactly two tets.
        use std::collections::HashMap;
        let m = build_tet_box([1.0; 3], [3, 3, 2]).unwrap();
        let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
        for tet in m.elements() {
            for skip in 0..4 {
                let mut f: Vec<usize> = (0..4).filter(|&i| i != skip).map(|i| tet[i]).collect();
                f.sort_unstable();
                *faces.entry([f[0], f[1], f[2]]).or_default() += 1;
            }
        }
        let (lo, hi) = m.bounding_box();
        for (face, count) in faces {
            let on_boundary = (0..3).any(|a| {
                face.iter().all(|&n| (m.nodes()[n][a] - lo[a]).abs() < 1e-12)
                    || face.iter().all(|&n| (m.nodes()[n][a] - hi[a]).abs() < 1e-12)
            });
            assert_eq!(count, if on_boundary { 1 } else { 2 }, "face {face:?}");
        }
    }

    #[test]
    fn clamp_face_selects_plane_and_is_idempotent() {
        let m = build_hex_box(BEAM, [23, 7, 7]).unwrap();
        let clamped = m.clamp_face(Axis::X, FaceSide::Min).unwrap();
        assert_eq!(clamped.dirichlet().len(), 64);
        let twice = clamped.clone().clamp_face(Axis::X, FaceSide::Min).unwrap();
        assert_eq!(twice.dirichlet(), clamped.dirichlet());
        assert!(clamped.dirichlet().iter().all(|&n| clamped.nodes()[n].x == 0.0));
    }

    #[test]
    fn lumped_mass_examples() {
        let unit = build_hex_box([1.0; 3], [1, 1, 1]).unwrap();
        let m = unit.lumped_mass(1070.0).unwrap();
        assert!(m.iter().all(|&x| x == 133.75));
        assert_eq!(m.iter().sum::<f64>(), 1070.0);

        // Two unit cubes side by side: the four shared nodes get two shares.
        let pair = build_hex_box([2.0, 1.0, 1.0], [2, 1, 1]).unwrap();
        let m = pair.lumped_mass(8.0).unwrap();
        assert_eq!(m.len(), 12);
        for (i, p) in pair.nodes().iter().enumerate() {
            let expected = if p.x == 1.0 { 2.0 } else { 1.0 };
            assert_eq!(m[i], expected, "node {i} at {p:?}");
        }

        let hex = build_hex_box(BEAM, [4, 2, 3]).unwrap().lumped_mass(1070.0).unwrap();
        let tet = build_tet_box(BEAM, [4, 2, 3]).unwrap().lumped_mass(1070.0).unwrap();
        assert_eq!(hex.len(), tet.len());
        let (sh, st): (f64, f64) = (hex.iter().sum(), tet.iter().sum());
        assert!(rel_close(sh, st, 1e-12));
        assert!(rel_close(sh, 1070.0 * 0.1 * 0.035 * 0.035, 1e-12));
        assert!(unit.lumped_mass(0.0).is_err());
    }

    #[test]
    fn rest_gradients_are_identity() {
        for mesh in [
            build_hex_box(BEAM, [3, 2, 2]).unwrap(),
            build_tet_box(BEAM, [3, 2, 2]).unwrap(),
        ] {
            let rest = mesh.rest_shapes().unwrap();
            let q = mesh.rest_positions();
            let shift = Vector3::new(0.3, -1.0, 2.5);
            let moved = DVector::from_fn(q.len(), |i, _| q[i] + shift[i % 3]);
            let stretched = DVector::from_fn(q.len(), |i, _| if i % 3 == 0 { 2.0 * q[i] } else { q[i] });
            for op in rest.quadrature.iter().chain(&rest.centroids) {
                assert!(
                    (op.deformation_gradient(q.as_slice()) - Matrix3::identity())
                        .abs()
                        .max()
                        < 1e-12
                );
                assert!(
                    (op.deformation_gradient(moved.as_slice()) - Matrix3::identity())
                        .abs()
                        .max()
                        < 1e-12
                );
                let expected = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
                assert!((op.deformation_gradient(stretched.as_slice()) - expected).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_tet_names_element() {
        let nodes = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let m = Mesh::from_parts(ElementKind::Tet4, nodes, vec![vec![0, 1, 2, 3], vec![0, 1, 4, 2]], []).unwrap();
        match m.rest_shapes() {
            Err(Error::DegenerateElement { element, .. }) => assert_eq!(element, 1),
            other => panic!("expected degenerate element, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let nodes = vec![Vector3::zeros(); 4];
        assert!(Mesh::from_parts(ElementKind::Tet4, nodes.clone(), vec![vec![0, 1, 2, 4]], []).is_err());
        assert!(Mesh::from_parts(ElementKind::Tet4, nodes, vec![vec![0, 1, 2, 3]], [9]).is_err());
    }

    #[test]
    fn text_format_round_trips() {
        let m = build_tet_box([0.1, 0.0351, 0.035], [3, 2, 1])
            .unwrap()
            .clamp_face(Axis::X, FaceSide::Min)
            .unwrap();
        let text = m.to_text();
        assert!(text.starts_with("tet4 24 30\n"));
        let back = Mesh::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert!(matches!(Mesh::from_text("hex8 2 0\n0 0 0\n"), Err(Error::Parse { .. })));
    }
}
