//! Static reference triangulation of the unit square.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Interior => "interior",
            BoundaryTag::Dirichlet => "dirichlet",
            BoundaryTag::Neumann => "neumann",
        }
    }
}

/// Which diagonal splits each grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    /// Every cell split from its lower-left to its upper-right corner.
    Uniform,
    /// Orientation alternates in a checkerboard pattern.
    Alternating,
}

/// A side of an edge as seen from one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementSide {
    pub element: usize,
    /// Local edge index; local edge `i` joins local vertices `i` and `(i + 1) % 3`.
    pub local: usize,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub left: ElementSide,
    pub right: Option<ElementSide>,
    pub tag: BoundaryTag,
    pub length: f64,
    /// Unit normal, outward for the left element.
    pub normal: Point,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }

    /// Member of the interior or Dirichlet set (where penalties and fluxes act).
    pub fn is_penalized(&self) -> bool {
        self.tag != BoundaryTag::Neumann
    }

    pub fn midpoint(&self, mesh: &Mesh) -> Point {
        let (a, b) = (mesh.vertices[self.vertices[0]], mesh.vertices[self.vertices[1]]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub elements: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Global edge index of each local edge.
    pub element_edges: Vec<[usize; 3]>,
    pub diameters: Vec<f64>,
    pub inradii: Vec<f64>,
    pub areas: Vec<f64>,
}

/// Default classifier: the whole boundary is Dirichlet.
pub fn all_dirichlet(_: Point) -> BoundaryTag {
    BoundaryTag::Dirichlet
}

pub fn all_neumann(_: Point) -> BoundaryTag {
    BoundaryTag::Neumann
}

impl Mesh {
    /// n×n grid of the unit square, each cell split into two triangles.
    pub fn structured_unit_square(
        n: usize,
        diagonal: Diagonal,
        classify: impl Fn(Point) -> BoundaryTag,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidMesh(format!("n = {n} < 2")));
        }
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut elements = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                let flip = diagonal == Diagonal::Alternating && (i + j) % 2 == 1;
                if flip {
                    elements.push([v00, v10, v01]);
                    elements.push([v10, v11, v01]);
                } else {
                    elements.push([v00, v10, v11]);
                    elements.push([v00, v11, v01]);
                }
            }
        }
        Self::from_parts(vertices, elements, classify)
    }

    /// Structured mesh with interior vertices displaced by up to `amplitude`·h.
    pub fn perturbed_unit_square(
        n: usize,
        amplitude: f64,
        seed: u64,
        classify: impl Fn(Point) -> BoundaryTag,
    ) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let base = Self::structured_unit_square(n, Diagonal::Alternating, |_| BoundaryTag::Dirichlet)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let h = 1.0 / n as f64;
        let vertices = base
            .vertices
            .iter()
            .map(|&[x, y]| {
                let on_boundary = x == 0.0 || y == 0.0 || x == 1.0 || y == 1.0;
                if on_boundary {
                    [x, y]
                } else {
                    [x + amplitude * h * rng.gen_range(-1.0..1.0), y + amplitude * h * rng.gen_range(-1.0..1.0)]
                }
            })
            .collect();
        Self::from_parts(vertices, base.elements, classify)
    }

    /// Builds edges and element metrics from raw arrays; orientation and areas
    /// are not validated here (see [`validate_mesh`]).
    pub fn from_parts(
        vertices: Vec<Point>,
        elements: Vec<[usize; 3]>,
        classify: impl Fn(Point) -> BoundaryTag,
    ) -> Result<Self> {
        let mut map: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut element_edges = vec![[0; 3]; elements.len()];
        for (k, tri) in elements.iter().enumerate() {
            for l in 0..3 {
                if tri[l] >= vertices.len() {
                    return Err(Error::InvalidMesh(format!("element {k} references vertex {}", tri[l])));
                }
                let (a, b) = (tri[l], tri[(l + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let side = ElementSide { element: k, local: l };
                match map.get(&key) {
                    Some(&e) => {
                        if edges[e].right.is_some() {
                            return Err(Error::InvalidMesh(format!("edge {a}-{b} has more than two elements")));
                        }
                        edges[e].right = Some(side);
                        edges[e].tag = BoundaryTag::Interior;
                        element_edges[k][l] = e;
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                        let length = dx.hypot(dy);
                        map.insert(key, edges.len());
                        element_edges[k][l] = edges.len();
                        edges.push(Edge {
                            vertices: [a, b],
                            left: side,
                            right: None,
                            tag: BoundaryTag::Dirichlet,
                            length,
                            normal: [dy / length, -dx / length],
                        });
                    }
                }
            }
        }
        for e in edges.iter_mut().filter(|e| e.right.is_none()) {
            let (a, b) = (vertices[e.vertices[0]], vertices[e.vertices[1]]);
            e.tag = match classify([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]) {
                BoundaryTag::Interior => BoundaryTag::Dirichlet,
                t => t,
            };
        }
        let mut diameters = Vec::with_capacity(elements.len());
        let mut inradii = Vec::with_capacity(elements.len());
        let mut areas = Vec::with_capacity(elements.len());
        for tri in &elements {
            let p: Vec<Point> = tri.iter().map(|&v| vertices[v]).collect();
            let l: Vec<f64> = (0..3).map(|i| dist(p[i], p[(i + 1) % 3])).collect();
            let area = signed_area(p[0], p[1], p[2]);
            diameters.push(l.iter().cloned().fold(0.0, f64::max));
            inradii.push(2.0 * area / (l[0] + l[1] + l[2]));
            areas.push(area);
        }
        Ok(Self { vertices, elements, edges, element_edges, diameters, inradii, areas })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_points(&self, k: usize) -> [Point; 3] {
        let t = self.elements[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Affine map X = X0 + A ξ from the reference triangle onto element k.
    pub fn affine(&self, k: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let [p0, p1, p2] = self.element_points(k);
        (p0, [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]])
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.element_points(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Plain-text listing: one `vertex`, `element` or `edge` record per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# mmdg mesh listing\n");
        s.push_str("# vertex <id> <x> <y>\n# element <id> <v0> <v1> <v2> <area> <diameter> <inradius>\n");
        s.push_str("# edge <id> <v0> <v1> <left> <right|-> <tag> <length> <nx> <ny>\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(s, "vertex {i} {:.16e} {:.16e}", v[0], v[1]);
        }
        for (k, t) in self.elements.iter().enumerate() {
            let _ = writeln!(
                s,
                "element {k} {} {} {} {:.16e} {:.16e} {:.16e}",
                t[0], t[1], t[2], self.areas[k], self.diameters[k], self.inradii[k]
            );
        }
        for (i, e) in self.edges.iter().enumerate() {
            let right = e.right.map_or("-".to_string(), |r| r.element.to_string());
            let _ = writeln!(
                s,
                "edge {i} {} {} {} {right} {} {:.16e} {:.16e} {:.16e}",
                e.vertices[0],
                e.vertices[1],
                e.left.element,
                e.tag.name(),
                e.length,
                e.normal[0],
                e.normal[1]
            );
        }
        s
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Element patches ω_K and edge patches ω_E.
#[derive(Debug, Clone)]
pub struct PatchMap {
    pub edge_patches: Vec<Vec<usize>>,
    pub element_patches: Vec<Vec<usize>>,
    pub edge_patch_areas: Vec<f64>,
    pub element_patch_areas: Vec<f64>,
}

impl PatchMap {
    pub fn build(mesh: &Mesh) -> Self {
        let edge_patches: Vec<Vec<usize>> = mesh
            .edges
            .iter()
            .map(|e| {
                let mut v = vec![e.left.element];
                v.extend(e.right.map(|r| r.element));
                v
            })
            .collect();
        let mut by_vertex = vec![Vec::new(); mesh.vertices.len()];
        for (k, t) in mesh.elements.iter().enumerate() {
            for &v in t {
                by_vertex[v].push(k);
            }
        }
        let element_patches: Vec<Vec<usize>> = mesh
            .elements
            .iter()
            .map(|t| {
                let mut v: Vec<usize> = t.iter().flat_map(|&v| by_vertex[v].iter().copied()).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let area = |p: &Vec<usize>| p.iter().map(|&k| mesh.areas[k]).sum();
        Self {
            edge_patch_areas: edge_patches.iter().map(area).collect(),
            element_patch_areas: element_patches.iter().map(area).collect(),
            edge_patches,
            element_patches,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QualityReport {
    pub ratios: Vec<f64>,
    pub min_angles_deg: Vec<f64>,
    pub shape_violations: Vec<usize>,
    /// Edges whose two elements differ in diameter by more than the bound.
    pub quasi_uniformity_violations: Vec<usize>,
}

impl QualityReport {
    pub fn is_valid(&self) -> bool {
        self.shape_violations.is_empty() && self.quasi_uniformity_violations.is_empty()
    }
}

/// Reports h_K / r_K, minimum angles, and flags elements violating `xi0` or
/// neighbours whose diameter ratio exceeds `quasi_bound`.
pub fn validate_mesh(mesh: &Mesh, xi0: f64, quasi_bound: f64) -> QualityReport {
    let mut ratios = Vec::new();
    let mut min_angles_deg = Vec::new();
    let mut shape_violations = Vec::new();
    for k in 0..mesh.n_elements() {
        let p = mesh.element_points(k);
        let ratio = mesh.diameters[k] / mesh.inradii[k];
        let mut min_angle = f64::INFINITY;
        for i in 0..3 {
            let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let cos = (u[0] * v[0] + u[1] * v[1]) / (dist(a, b) * dist(a, c));
            min_angle = min_angle.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
        }
        if !(mesh.areas[k] > 0.0) || !ratio.is_finite() || ratio > xi0 || min_angle.is_nan() {
            shape_violations.push(k);
        }
        ratios.push(ratio);
        min_angles_deg.push(min_angle);
    }
    let quasi_uniformity_violations = mesh
        .edges
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let r = e.right?;
            let (a, b) = (mesh.diameters[e.left.element], mesh.diameters[r.element]);
            (a.max(b) > quasi_bound * a.min(b)).then_some(i)
        })
        .collect();
    QualityReport { ratios, min_angles_deg, shape_violations, quasi_uniformity_violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let m = Mesh::structured_unit_square(9, Diagonal::Uniform, all_dirichlet).unwrap();
        assert_eq!(m.n_elements(), 162);
        assert_eq!(m.vertices.len(), 100);
        let longest = m.edges.iter().map(|e| e.length).fold(0.0, f64::max);
        assert!((longest - 2f64.sqrt() / 9.0).abs() < 1e-15);
        assert!(Mesh::structured_unit_square(1, Diagonal::Uniform, all_dirichlet).is_err());
    }

    #[test]
    fn boundary_edges_and_tags() {
        for diag in [Diagonal::Uniform, Diagonal::Alternating] {
            let m = Mesh::structured_unit_square(2, diag, all_dirichlet).unwrap();
            let bnd: Vec<&Edge> = m.edges.iter().filter(|e| !e.is_interior()).collect();
            assert_eq!(bnd.len(), 8);
            assert!(bnd.iter().all(|e| e.tag == BoundaryTag::Dirichlet));
            assert!(m.edges.iter().filter(|e| e.is_interior()).all(|e| e.tag == BoundaryTag::Interior));
        }
    }

    #[test]
    fn normals_are_outward_and_opposite() {
        let m = Mesh::structured_unit_square(4, Diagonal::Alternating, all_dirichlet).unwrap();
        for e in &m.edges {
            let mid = e.midpoint(&m);
            let c = m.centroid(e.left.element);
            assert!((mid[0] - c[0]) * e.normal[0] + (mid[1] - c[1]) * e.normal[1] > 0.0);
            if let Some(r) = e.right {
                let c = m.centroid(r.element);
                assert!((mid[0] - c[0]) * e.normal[0] + (mid[1] - c[1]) * e.normal[1] < 0.0);
            }
        }
        assert!((m.areas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_vertices_covered() {
        let m = Mesh::structured_unit_square(5, Diagonal::Uniform, all_dirichlet).unwrap();
        for (i, v) in m.vertices.iter().enumerate() {
            if v[0] == 0.0 || v[1] == 0.0 || v[0] == 1.0 || v[1] == 1.0 {
                assert!(m.edges.iter().any(|e| !e.is_interior() && e.vertices.contains(&i)));
            }
        }
    }

    #[test]
    fn patches() {
        let m = Mesh::structured_unit_square(2, Diagonal::Uniform, all_dirichlet).unwrap();
        let p = PatchMap::build(&m);
        for (i, e) in m.edges.iter().enumerate() {
            if e.is_interior() {
                assert_eq!(p.edge_patches[i].len(), 2);
                assert!((p.edge_patch_areas[i] - 0.25).abs() < 1e-15);
            } else {
                assert_eq!(p.edge_patches[i].len(), 1);
            }
        }
        for k in 0..m.n_elements() {
            assert!(p.element_patches[k].contains(&k));
        }
    }

    #[test]
    fn quality() {
        let m = Mesh::structured_unit_square(9, Diagonal::Uniform, all_dirichlet).unwrap();
        let q = validate_mesh(&m, 10.0, 2.0);
        assert!(q.is_valid());
        assert!(q.min_angles_deg.iter().all(|a| (a - 45.0).abs() < 1e-9));
        assert!(q.ratios.iter().all(|r| (r - q.ratios[0]).abs() < 1e-12));

        let mut v = m.vertices.clone();
        v.push([0.5, 0.5]);
        v.push([0.6, 0.6]);
        v.push([0.7, 0.7]);
        let mut t = m.elements.clone();
        let n = v.len();
        t.push([n - 3, n - 2, n - 1]);
        let bad = Mesh::from_parts(v, t, all_dirichlet).unwrap();
        let q = validate_mesh(&bad, 10.0, 2.0);
        assert_eq!(q.shape_violations, vec![162]);
    }

    #[test]
    fn non_manifold_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 1.0]];
        let t = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        assert!(Mesh::from_parts(v, t, all_dirichlet).is_err());
    }

    #[test]
    fn text_listing_has_all_records() {
        let m = Mesh::structured_unit_square(2, Diagonal::Uniform, all_dirichlet).unwrap();
        let s = m.to_text();
        assert_eq!(s.lines().filter(|l| l.starts_with("element ")).count(), 8);
        assert_eq!(s.lines().filter(|l| l.starts_with("vertex ")).count(), 9);
        assert_eq!(s.lines().filter(|l| l.starts_with("edge ")).count(), m.edges.len());
    }
}
