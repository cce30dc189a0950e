//! Order-k enhanced virtual element space on the polygonal tessellation:
//! degree-of-freedom enumeration, scaled monomial bases, the elliptic
//! projector, L2 projectors (computable thanks to the enhancement
//! constraint), and the dofi-dofi stabilization.

use crate::agglomeration::{MeshEdge, PolyMesh};
use crate::quadrature::{gauss_lobatto, lagrange_values, segment_rule, tensor_rule};
use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VemError {
    #[error("element {0}: singular elliptic projector system")]
    SingularG(usize),
    #[error("element {0}: singular monomial mass matrix")]
    SingularMass(usize),
}

/// dim P_j in two variables.
pub fn poly_dim(j: i64) -> usize {
    if j < 0 {
        0
    } else {
        ((j + 1) * (j + 2) / 2) as usize
    }
}

/// Scaled monomials `((x - x_K)/H_K)^a ((y - y_K)/H_K)^b`, ordered by total
/// degree, then by increasing y-exponent: 1, x, y, x^2, xy, y^2, ...
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    pub k: usize,
    pub x_k: Point2<f64>,
    pub h_k: f64,
    pub exps: Vec<(u32, u32)>,
}

impl MonomialBasis {
    pub fn new(k: usize, x_k: Point2<f64>, h_k: f64) -> Self {
        let mut exps = Vec::with_capacity(poly_dim(k as i64));
        for d in 0..=k as u32 {
            for b in 0..=d {
                exps.push((d - b, b));
            }
        }
        MonomialBasis { k, x_k, h_k, exps }
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn index(&self, a: u32, b: u32) -> usize {
        let d = (a + b) as usize;
        d * (d + 1) / 2 + b as usize
    }

    pub fn eval(&self, p: Point2<f64>) -> DVector<f64> {
        let xi = (p.x - self.x_k.x) / self.h_k;
        let eta = (p.y - self.x_k.y) / self.h_k;
        let mut out = DVector::zeros(self.dim());
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            out[i] = xi.powi(a as i32) * eta.powi(b as i32);
        }
        out
    }

    /// Gradient of every monomial at `p` (physical derivatives).
    pub fn eval_grad(&self, p: Point2<f64>) -> (DVector<f64>, DVector<f64>) {
        let xi = (p.x - self.x_k.x) / self.h_k;
        let eta = (p.y - self.x_k.y) / self.h_k;
        let mut gx = DVector::zeros(self.dim());
        let mut gy = DVector::zeros(self.dim());
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            if a > 0 {
                gx[i] = a as f64 / self.h_k * xi.powi(a as i32 - 1) * eta.powi(b as i32);
            }
            if b > 0 {
                gy[i] = b as f64 / self.h_k * xi.powi(a as i32) * eta.powi(b as i32 - 1);
            }
        }
        (gx, gy)
    }

    /// Coordinate matrix of d/dx acting on coefficient vectors.
    pub fn dx_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (j, &(a, b)) in self.exps.iter().enumerate() {
            if a > 0 {
                m[(self.index(a - 1, b), j)] = a as f64 / self.h_k;
            }
        }
        m
    }

    pub fn dy_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (j, &(a, b)) in self.exps.iter().enumerate() {
            if b > 0 {
                m[(self.index(a, b - 1), j)] = b as f64 / self.h_k;
            }
        }
        m
    }
}

/// Coordinate matrix of the j-th directional derivative along `sigma` on
/// the monomial basis (nilpotent: vanishes identically for j > k).
pub fn directional_derivative_matrix(
    basis: &MonomialBasis,
    sigma: Vector2<f64>,
    j: usize,
) -> DMatrix<f64> {
    let d_sigma = basis.dx_matrix() * sigma.x + basis.dy_matrix() * sigma.y;
    let mut out = DMatrix::identity(basis.dim(), basis.dim());
    for _ in 0..j {
        out = &d_sigma * out;
    }
    out
}

// ---------------------------------------------------------------------------
// DOF map
// ---------------------------------------------------------------------------

/// Global degree-of-freedom enumeration: all vertex values, then `k-1`
/// Gauss-Lobatto values per edge, then `dim P_{k-2}` scaled moments per
/// element.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub k: usize,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_elements: usize,
    pub edge_offset: usize,
    pub elem_offset: usize,
    pub total: usize,
}

pub fn build_dof_map(mesh: &PolyMesh, k: usize) -> DofMap {
    assert!(k >= 1);
    let n_vertices = mesh.vertices.len();
    let n_edges = mesh.edges.len();
    let n_elements = mesh.elements.len();
    let edge_offset = n_vertices;
    let elem_offset = edge_offset + (k - 1) * n_edges;
    let total = elem_offset + poly_dim(k as i64 - 2) * n_elements;
    DofMap { k, n_vertices, n_edges, n_elements, edge_offset, elem_offset, total }
}

impl DofMap {
    pub fn vertex_dof(&self, v: usize) -> usize {
        v
    }

    /// j-th internal Lobatto dof of the edge, ordered from edge.v0.
    pub fn edge_dof(&self, edge: usize, j: usize) -> usize {
        debug_assert!(j < self.k - 1);
        self.edge_offset + edge * (self.k - 1) + j
    }

    pub fn moment_dof(&self, elem: usize, alpha: usize) -> usize {
        self.elem_offset + elem * poly_dim(self.k as i64 - 2) + alpha
    }

    pub fn n_moments(&self) -> usize {
        poly_dim(self.k as i64 - 2)
    }
}

// ---------------------------------------------------------------------------
// Element operators
// ---------------------------------------------------------------------------

/// All element-local matrices of the order-k enhanced space. Matrices with
/// a `_star` suffix map local DOF values to monomial coordinates;
/// `pi_nabla` expresses the elliptic projector back in DOF coordinates.
#[derive(Debug, Clone)]
pub struct ElementOperators {
    pub elem: usize,
    pub k: usize,
    pub basis: MonomialBasis,
    pub n_dofs: usize,
    /// Global dof ids in local order: vertices (loop order, deduplicated),
    /// then per loop edge its k-1 internal dofs, then moments.
    pub local_dofs: Vec<usize>,
    /// Per loop edge: local column of each of the k+1 Lobatto nodes, in
    /// canonical v0 -> v1 order.
    pub edge_node_local: Vec<Vec<usize>>,
    pub d: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub pi_nabla_star: DMatrix<f64>,
    pub pi_nabla: DMatrix<f64>,
    pub pi_zero_star: DMatrix<f64>,
    pub pi_zero_grad_x: DMatrix<f64>,
    pub pi_zero_grad_y: DMatrix<f64>,
    /// dofi-dofi stabilization (unweighted): (I-Pi)^T (I-Pi).
    pub s: DMatrix<f64>,
    pub stiff_mono: DMatrix<f64>,
    pub mass_mono: DMatrix<f64>,
    pub area: f64,
    pub perimeter: f64,
}

impl ElementOperators {
    /// Consistency part of the local bilinear form in DOF coordinates.
    pub fn consistency(&self) -> DMatrix<f64> {
        self.pi_nabla_star.transpose() * &self.stiff_mono * &self.pi_nabla_star
    }
}

/// Lobatto points on [0,1] for an order-k edge trace.
pub fn lobatto01(k: usize) -> Vec<f64> {
    let (nodes, _) = gauss_lobatto(k + 1);
    nodes.iter().map(|&x| 0.5 * (1.0 + x)).collect()
}

fn local_layout(mesh: &PolyMesh, dof_map: &DofMap, elem: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let el = &mesh.elements[elem];
    let k = dof_map.k;
    let mut local_dofs: Vec<usize> = Vec::new();
    let mut local_of: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for &v in &el.loop_vertices {
        let dof = dof_map.vertex_dof(v);
        if !local_of.contains_key(&dof) {
            local_of.insert(dof, local_dofs.len());
            local_dofs.push(dof);
        }
    }
    for &(e, _) in &el.edges {
        for j in 0..k - 1 {
            let dof = dof_map.edge_dof(e, j);
            local_of.insert(dof, local_dofs.len());
            local_dofs.push(dof);
        }
    }
    for a in 0..dof_map.n_moments() {
        let dof = dof_map.moment_dof(elem, a);
        local_of.insert(dof, local_dofs.len());
        local_dofs.push(dof);
    }
    let mut edge_node_local = Vec::with_capacity(el.edges.len());
    for &(e, _) in &el.edges {
        let edge = &mesh.edges[e];
        let mut cols = Vec::with_capacity(k + 1);
        cols.push(local_of[&dof_map.vertex_dof(edge.v0)]);
        for j in 0..k - 1 {
            cols.push(local_of[&dof_map.edge_dof(e, j)]);
        }
        cols.push(local_of[&dof_map.vertex_dof(edge.v1)]);
        edge_node_local.push(cols);
    }
    (local_dofs, edge_node_local)
}

/// Builds every projector and the stabilization for one element.
///
/// Bulk integrals use tensor Gauss rules on the element's pixels (exact for
/// the polynomial integrands); boundary integrals use k+2 Gauss points per
/// straight edge.
pub fn build_projectors(
    mesh: &PolyMesh,
    dof_map: &DofMap,
    elem: usize,
) -> Result<ElementOperators, VemError> {
    let k = dof_map.k;
    let el = &mesh.elements[elem];
    let basis = MonomialBasis::new(k, el.center, el.h_k);
    let nk = basis.dim();
    let n_mom = dof_map.n_moments();
    let (local_dofs, edge_node_local) = local_layout(mesh, dof_map, elem);
    let n_dofs = local_dofs.len();
    let mom_col0 = n_dofs - n_mom;
    let n_vert = n_dofs - n_mom - (k - 1) * el.edges.len();
    let area = el.area(mesh.h);
    let perimeter: f64 = el.edges.iter().map(|&(e, _)| mesh.edges[e].length).sum();

    // Bulk monomial integrals.
    let mut mass_mono = DMatrix::zeros(nk, nk);
    let mut stiff_mono = DMatrix::zeros(nk, nk);
    let nq = k + 1;
    for &p in &el.pixels {
        let (ix, iy) = (p % mesh.grid.nx, p / mesh.grid.nx);
        let origin = mesh.grid.point(ix, iy);
        let rule = tensor_rule(origin.x, origin.y, mesh.h, mesh.h, nq);
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let m = basis.eval(*q);
            let (gx, gy) = basis.eval_grad(*q);
            mass_mono += w * &m * m.transpose();
            stiff_mono += w * (&gx * gx.transpose() + &gy * gy.transpose());
        }
    }

    // D: local dofs applied to monomials.
    let mut d = DMatrix::zeros(n_dofs, nk);
    let t_nodes = lobatto01(k);
    for row in 0..n_vert {
        let v = local_dofs[row];
        d.row_mut(row).copy_from(&basis.eval(mesh.vertices[v]).transpose());
    }
    {
        let mut row = n_vert;
        for &(e, _) in &el.edges {
            let edge: &MeshEdge = &mesh.edges[e];
            let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
            for j in 0..k - 1 {
                let t = t_nodes[j + 1];
                let p = Point2::new(p0.x + t * (p1.x - p0.x), p0.y + t * (p1.y - p0.y));
                d.row_mut(row).copy_from(&basis.eval(p).transpose());
                row += 1;
            }
        }
        for a in 0..n_mom {
            for beta in 0..nk {
                d[(row, beta)] = mass_mono[(a, beta)] / area;
            }
            row += 1;
        }
    }

    // B: right-hand side of the elliptic projector.
    let mut b = DMatrix::zeros(nk, n_dofs);
    let dx = basis.dx_matrix();
    let dy = basis.dy_matrix();
    let lap = &dx * &dx + &dy * &dy;
    for alpha in 1..nk {
        for j in 0..n_mom {
            let c = lap[(j, alpha)];
            if c != 0.0 {
                b[(alpha, mom_col0 + j)] -= c * area;
            }
        }
    }
    let qb = k + 2;
    for (le, &(e, forward)) in el.edges.iter().enumerate() {
        let edge = &mesh.edges[e];
        let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
        let normal = mesh.outward_normal(e, forward);
        let rule = segment_rule(p0, p1, qb);
        let len = edge.length;
        let cols = &edge_node_local[le];
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let t = (q - p0).norm() / len;
            let lag = lagrange_values(&t_nodes, t);
            let (gx, gy) = basis.eval_grad(*q);
            for (node, &col) in cols.iter().enumerate() {
                let phi = lag[node];
                for alpha in 1..nk {
                    b[(alpha, col)] += w * phi * (gx[alpha] * normal.x + gy[alpha] * normal.y);
                }
                b[(0, col)] += w * phi / perimeter;
            }
        }
    }

    // G: Gram matrix of the projector system, assembled independently so the
    // identity G = B D can be checked.
    let mut g = stiff_mono.clone();
    {
        let mut mean_row = DVector::zeros(nk);
        for &(e, _) in &el.edges {
            let edge = &mesh.edges[e];
            let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
            let rule = segment_rule(p0, p1, qb);
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                mean_row += w / perimeter * basis.eval(*q);
            }
        }
        g.row_mut(0).copy_from(&mean_row.transpose());
    }

    let pi_nabla_star = g.clone().lu().solve(&b).ok_or(VemError::SingularG(elem))?;
    let pi_nabla = &d * &pi_nabla_star;

    // Enhanced-space L2 projector: moments up to k-2 are dofs; higher
    // moments transfer to the elliptic projection through the enhancement
    // constraint after splitting off the P_{k-2} part.
    let mut c_mat = DMatrix::zeros(nk, n_dofs);
    let low = n_mom;
    for alpha in 0..nk {
        if alpha < low {
            c_mat[(alpha, mom_col0 + alpha)] = area;
        } else {
            let mut weights = DVector::zeros(nk);
            weights[alpha] = 1.0;
            if low > 0 {
                let mut rhs = DVector::zeros(low);
                for i in 0..low {
                    rhs[i] = mass_mono[(i, alpha)];
                }
                let m_low = mass_mono.view((0, 0), (low, low)).into_owned();
                let p_alpha = m_low.lu().solve(&rhs).ok_or(VemError::SingularMass(elem))?;
                for i in 0..low {
                    weights[i] -= p_alpha[i];
                    c_mat[(alpha, mom_col0 + i)] += p_alpha[i] * area;
                }
            }
            let row = (&mass_mono * weights).transpose() * &pi_nabla_star;
            let existing = c_mat.row(alpha) + row;
            c_mat.row_mut(alpha).copy_from(&existing);
        }
    }
    let pi_zero_star =
        mass_mono.clone().lu().solve(&c_mat).ok_or(VemError::SingularMass(elem))?;

    // L2 projection of the gradient onto (P_{k-1})^2.
    let nk1 = poly_dim(k as i64 - 1);
    let mut cx = DMatrix::zeros(nk1, n_dofs);
    let mut cy = DMatrix::zeros(nk1, n_dofs);
    for gamma in 0..nk1 {
        for j in 0..n_mom {
            let cxv = dx[(j, gamma)];
            if cxv != 0.0 {
                cx[(gamma, mom_col0 + j)] -= cxv * area;
            }
            let cyv = dy[(j, gamma)];
            if cyv != 0.0 {
                cy[(gamma, mom_col0 + j)] -= cyv * area;
            }
        }
    }
    for (le, &(e, forward)) in el.edges.iter().enumerate() {
        let edge = &mesh.edges[e];
        let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
        let normal = mesh.outward_normal(e, forward);
        let rule = segment_rule(p0, p1, qb);
        let len = edge.length;
        let cols = &edge_node_local[le];
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let t = (q - p0).norm() / len;
            let lag = lagrange_values(&t_nodes, t);
            let m = basis.eval(*q);
            for (node, &col) in cols.iter().enumerate() {
                let phi = lag[node];
                for gamma in 0..nk1 {
                    cx[(gamma, col)] += w * phi * m[gamma] * normal.x;
                    cy[(gamma, col)] += w * phi * m[gamma] * normal.y;
                }
            }
        }
    }
    let m1 = mass_mono.view((0, 0), (nk1, nk1)).into_owned().lu();
    let pi_zero_grad_x = m1.solve(&cx).ok_or(VemError::SingularMass(elem))?;
    let pi_zero_grad_y = m1.solve(&cy).ok_or(VemError::SingularMass(elem))?;

    let mut dev = DMatrix::identity(n_dofs, n_dofs);
    dev -= &pi_nabla;
    let s = dev.transpose() * &dev;

    Ok(ElementOperators {
        elem,
        k,
        basis,
        n_dofs,
        local_dofs,
        edge_node_local,
        d,
        b,
        g,
        pi_nabla_star,
        pi_nabla,
        pi_zero_star,
        pi_zero_grad_x,
        pi_zero_grad_y,
        s,
        stiff_mono,
        mass_mono,
        area,
        perimeter,
    })
}

/// Builds the operators of every element in parallel (result order is the
/// element order, independent of scheduling).
pub fn build_all_operators(
    mesh: &PolyMesh,
    dof_map: &DofMap,
) -> Result<Vec<ElementOperators>, VemError> {
    (0..mesh.elements.len())
        .into_par_iter()
        .map(|e| build_projectors(mesh, dof_map, e))
        .collect()
}

/// Weighted stabilization matrix `beta * (I - Pi)^T (I - Pi)`.
pub fn stabilization(ops: &ElementOperators, beta: f64) -> DMatrix<f64> {
    beta * ops.s.clone()
}

/// DOF interpolant of a smooth function: vertex values, edge Lobatto
/// values, and scaled moments (by pixel quadrature).
pub fn interpolate_dofs(
    u: &(dyn Fn(Point2<f64>) -> f64 + Sync),
    mesh: &PolyMesh,
    dof_map: &DofMap,
) -> DVector<f64> {
    let k = dof_map.k;
    let mut out = DVector::zeros(dof_map.total);
    for (v, p) in mesh.vertices.iter().enumerate() {
        out[dof_map.vertex_dof(v)] = u(*p);
    }
    let t_nodes = lobatto01(k);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
        for j in 0..k - 1 {
            let t = t_nodes[j + 1];
            let p = Point2::new(p0.x + t * (p1.x - p0.x), p0.y + t * (p1.y - p0.y));
            out[dof_map.edge_dof(e, j)] = u(p);
        }
    }
    if dof_map.n_moments() > 0 {
        let nq = k + 2;
        let moments: Vec<DVector<f64>> = mesh
            .elements
            .par_iter()
            .map(|el| {
                let basis = MonomialBasis::new(k, el.center, el.h_k);
                let area = el.area(mesh.h);
                let mut moments = DVector::zeros(dof_map.n_moments());
                for &p in &el.pixels {
                    let (ix, iy) = (p % mesh.grid.nx, p / mesh.grid.nx);
                    let origin = mesh.grid.point(ix, iy);
                    let rule = tensor_rule(origin.x, origin.y, mesh.h, mesh.h, nq);
                    for (q, &w) in rule.points.iter().zip(&rule.weights) {
                        let m = basis.eval(*q);
                        let uv = u(*q);
                        for a in 0..dof_map.n_moments() {
                            moments[a] += w * uv * m[a];
                        }
                    }
                }
                moments / area
            })
            .collect();
        for (ei, m) in moments.iter().enumerate() {
            for a in 0..dof_map.n_moments() {
                out[dof_map.moment_dof(ei, a)] = m[a];
            }
        }
    }
    out
}

/// Gathers the local dof values of an element from a global vector.
pub fn gather_local(ops: &ElementOperators, global: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(ops.local_dofs.len(), ops.local_dofs.iter().map(|&g| global[g]))
}
