//! Static condensation of the "lazy" degrees of freedom: macro-edge-local
//! DOF combinations invisible to both element projectors. They enter the
//! system only through the (diagonal) stabilization scalar product and are
//! eliminated exactly by a per-edge Schur complement.

use crate::agglomeration::{MacroEdge, PolyMesh};
use crate::assembly::LinearSystem;
use crate::quadrature::{lagrange_values, segment_rule};
use crate::solver::{solve_sparse, SolveError, SolveReport};
use crate::vemspace::{lobatto01, DofMap, ElementOperators, MonomialBasis};
use nalgebra::{DMatrix, DVector, Point2};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CondenseError {
    #[error("macro edge {0}: retained interior block is singular")]
    DegenerateBasis(usize),
    #[error("singular reduced system: {0}")]
    SingularReducedSystem(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Lazy subspace of one macro edge.
#[derive(Debug, Clone)]
pub struct LazyBasis {
    pub macro_edge: usize,
    /// Global ids of the edge-interior dofs (chain-interior vertices plus
    /// all edge dofs of the chain), in deterministic order.
    pub interior_dofs: Vec<usize>,
    /// n_E x n_lazy nullspace basis of the moment-constraint matrix.
    pub basis: DMatrix<f64>,
    /// Rank of the constraint matrix.
    pub rank: usize,
    /// Positions (into `interior_dofs`) kept as retained dofs.
    pub kept: Vec<usize>,
    /// Positions dropped in favor of the lazy columns.
    pub dropped: Vec<usize>,
}

impl LazyBasis {
    pub fn n_lazy(&self) -> usize {
        self.basis.ncols()
    }
}

/// Global splitting into retained dofs and per-edge lazy columns, plus the
/// diagonal stabilization scalar product.
#[derive(Debug, Clone)]
pub struct CondensationMap {
    pub lazy_edges: Vec<LazyBasis>,
    /// Retained global dofs, ascending.
    pub retained: Vec<usize>,
    /// dof -> retained slot (or -1).
    pub retained_index: Vec<i64>,
    /// dof -> (lazy edge slot, row inside its basis), for edge-interior dofs.
    pub interior_of: Vec<i64>,
    pub interior_row: Vec<u32>,
    /// First global lazy column of each lazy edge.
    pub lazy_offset: Vec<usize>,
    pub n_lazy: usize,
    /// Diagonal scalar product: beta times the number of elements whose
    /// local dof set contains the dof.
    pub s_weights: DVector<f64>,
}

impl CondensationMap {
    pub fn active_dofs(&self) -> usize {
        self.retained.len()
    }
}

/// Interior dofs of a macro edge: chain vertices without the endpoints,
/// then the internal dofs of every chain edge.
fn macro_edge_interior_dofs(me: &MacroEdge, dof_map: &DofMap) -> Vec<usize> {
    let mut out = Vec::new();
    let n = me.chain_vertices.len();
    for &v in &me.chain_vertices[1..n - 1] {
        out.push(dof_map.vertex_dof(v));
    }
    for &e in &me.edges {
        for j in 0..dof_map.k - 1 {
            out.push(dof_map.edge_dof(e, j));
        }
    }
    out
}

/// Builds the lazy basis of one macro edge: the nullspace of the vector
/// moment constraints against the edge orientation `nu_E`, plus a mean-value
/// row that guards the projector's average constraint on wiggly chains.
///
/// Returns `None` when the edge has no interior dofs or an empty nullspace.
pub fn lazy_basis_for_macro_edge(
    mesh: &PolyMesh,
    dof_map: &DofMap,
    me_id: usize,
) -> Option<LazyBasis> {
    let me = &mesh.macro_edges[me_id];
    let k = dof_map.k;
    let interior = macro_edge_interior_dofs(me, dof_map);
    let n_e = interior.len();
    if n_e == 0 {
        return None;
    }
    let col_of: std::collections::HashMap<usize, usize> =
        interior.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    // Edge-local scaled monomials of degree <= k-1 keep the constraint
    // matrix well scaled.
    let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
    for &v in &me.chain_vertices {
        let p = mesh.vertices[v];
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let center = Point2::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
    let scale = (hi.x - lo.x).max(hi.y - lo.y).max(mesh.h);
    let qbasis = MonomialBasis::new(k.saturating_sub(1), center, scale);
    let nq_dim = qbasis.dim();

    // rows: nq_dim against nu_x, nq_dim against nu_y, plus the plain mean
    let n_rows = 2 * nq_dim + 1;
    let mut m = DMatrix::zeros(n_rows.max(n_e), n_e);
    let t_nodes = lobatto01(k);
    for &e in &me.edges {
        let edge = &mesh.edges[e];
        let (p0, p1) = (mesh.vertices[edge.v0], mesh.vertices[edge.v1]);
        let rule = segment_rule(p0, p1, k + 2);
        let nu = edge.nu;
        // trace dofs of this edge in canonical order
        let mut node_cols: Vec<Option<usize>> = Vec::with_capacity(k + 1);
        node_cols.push(col_of.get(&dof_map.vertex_dof(edge.v0)).copied());
        for j in 0..k - 1 {
            node_cols.push(col_of.get(&dof_map.edge_dof(e, j)).copied());
        }
        node_cols.push(col_of.get(&dof_map.vertex_dof(edge.v1)).copied());
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let t = (q - p0).norm() / edge.length;
            let lag = lagrange_values(&t_nodes, t);
            let qv = qbasis.eval(*q);
            for (node, col) in node_cols.iter().enumerate() {
                let Some(col) = col else { continue };
                let phi = lag[node];
                for g in 0..nq_dim {
                    m[(g, *col)] += w * phi * qv[g] * nu.x;
                    m[(nq_dim + g, *col)] += w * phi * qv[g] * nu.y;
                }
                m[(2 * nq_dim, *col)] += w * phi;
            }
        }
    }

    // Nullspace via SVD of the (zero-padded, so V is square) matrix.
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd computed with V");
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let tol = 1e-10 * smax.max(1e-300);
    let mut lazy_cols: Vec<usize> = Vec::new();
    for i in 0..n_e {
        let sv = if i < svd.singular_values.len() { svd.singular_values[i] } else { 0.0 };
        if sv <= tol {
            lazy_cols.push(i);
        }
    }
    let rank = n_e - lazy_cols.len();
    if lazy_cols.is_empty() {
        return None;
    }
    let mut basis = DMatrix::zeros(n_e, lazy_cols.len());
    for (c, &row) in lazy_cols.iter().enumerate() {
        for i in 0..n_e {
            basis[(i, c)] = v_t[(row, i)];
        }
    }

    // Retained interior dofs: pivot columns of the constraint matrix
    // (column-pivoted QR), falling back to pivot rows of the basis if the
    // dropped block is ill conditioned. The pivot order is recovered by
    // permuting an index row vector.
    let qr = m.col_piv_qr();
    let idx: Vec<usize> = {
        let mut idx_m = DMatrix::<f64>::zeros(1, n_e);
        for i in 0..n_e {
            idx_m[(0, i)] = i as f64;
        }
        qr.p().permute_columns(&mut idx_m);
        (0..n_e).map(|i| idx_m[(0, i)] as usize).collect()
    };
    let mut kept: Vec<usize> = idx[..rank].to_vec();
    let mut dropped: Vec<usize> = idx[rank..].to_vec();
    kept.sort_unstable();
    dropped.sort_unstable();

    // The dropped-rows block of the basis must be invertible for the basis
    // change; re-select by row-pivoting the basis when it is not.
    let block_ok = |dropped: &[usize]| -> bool {
        let nl = lazy_cols.len();
        let mut blk = DMatrix::zeros(nl, nl);
        for (r, &i) in dropped.iter().enumerate() {
            for c in 0..nl {
                blk[(r, c)] = basis[(i, c)];
            }
        }
        blk.lu().is_invertible()
    };
    if !block_ok(&dropped) {
        let qr_b = basis.transpose().col_piv_qr();
        let mut idx_m = DMatrix::<f64>::zeros(1, n_e);
        for i in 0..n_e {
            idx_m[(0, i)] = i as f64;
        }
        qr_b.p().permute_columns(&mut idx_m);
        let order: Vec<usize> = (0..n_e).map(|i| idx_m[(0, i)] as usize).collect();
        dropped = order[..lazy_cols.len()].to_vec();
        dropped.sort_unstable();
        kept = (0..n_e).filter(|i| !dropped.contains(i)).collect();
    }

    Some(LazyBasis { macro_edge: me_id, interior_dofs: interior, basis, rank, kept, dropped })
}

/// Assembles the global splitting and the diagonal scalar product.
pub fn build_condensation(
    mesh: &PolyMesh,
    dof_map: &DofMap,
    ops: &[ElementOperators],
    beta: f64,
) -> CondensationMap {
    let lazy_edges: Vec<LazyBasis> = (0..mesh.macro_edges.len())
        .into_par_iter()
        .filter_map(|me| lazy_basis_for_macro_edge(mesh, dof_map, me))
        .collect();
    let n = dof_map.total;
    let mut s_weights = DVector::zeros(n);
    for op in ops {
        for &d in &op.local_dofs {
            s_weights[d] += beta;
        }
    }
    let mut interior_of = vec![-1i64; n];
    let mut interior_row = vec![0u32; n];
    let mut is_dropped = vec![false; n];
    let mut lazy_offset = Vec::with_capacity(lazy_edges.len());
    let mut n_lazy = 0usize;
    for (slot, lb) in lazy_edges.iter().enumerate() {
        lazy_offset.push(n_lazy);
        n_lazy += lb.n_lazy();
        for (row, &d) in lb.interior_dofs.iter().enumerate() {
            interior_of[d] = slot as i64;
            interior_row[d] = row as u32;
        }
        for &pos in &lb.dropped {
            is_dropped[lb.interior_dofs[pos]] = true;
        }
    }
    let retained: Vec<usize> = (0..n).filter(|&d| !is_dropped[d]).collect();
    let mut retained_index = vec![-1i64; n];
    for (slot, &d) in retained.iter().enumerate() {
        retained_index[d] = slot as i64;
    }
    CondensationMap {
        lazy_edges,
        retained,
        retained_index,
        interior_of,
        interior_row,
        lazy_offset,
        n_lazy,
        s_weights,
    }
}

/// Applies the s-orthogonal projection onto the lazy subspace:
/// per macro edge, `B (B^T D B)^{-1} B^T D` with `D` the diagonal weights.
pub fn apply_pi_s(cmap: &CondensationMap, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    for lb in &cmap.lazy_edges {
        let n_e = lb.interior_dofs.len();
        let nl = lb.n_lazy();
        let mut d_loc = DVector::zeros(n_e);
        let mut x_loc = DVector::zeros(n_e);
        for (i, &dof) in lb.interior_dofs.iter().enumerate() {
            d_loc[i] = cmap.s_weights[dof];
            x_loc[i] = x[dof];
        }
        let mut btd_b = DMatrix::zeros(nl, nl);
        let mut btd_x = DVector::zeros(nl);
        for c in 0..nl {
            for r in 0..nl {
                let mut v = 0.0;
                for i in 0..n_e {
                    v += lb.basis[(i, r)] * d_loc[i] * lb.basis[(i, c)];
                }
                btd_b[(r, c)] = v;
            }
            let mut v = 0.0;
            for i in 0..n_e {
                v += lb.basis[(i, c)] * d_loc[i] * x_loc[i];
            }
            btd_x[c] = v;
        }
        if let Some(y) = btd_b.lu().solve(&btd_x) {
            for (i, &dof) in lb.interior_dofs.iter().enumerate() {
                let mut v = 0.0;
                for c in 0..nl {
                    v += lb.basis[(i, c)] * y[c];
                }
                out[dof] += v;
            }
        }
    }
    out
}

/// Expands a lazy basis column into a global DOF vector.
pub fn lazy_vector(cmap: &CondensationMap, n: usize, edge_slot: usize, col: usize) -> DVector<f64> {
    let lb = &cmap.lazy_edges[edge_slot];
    let mut v = DVector::zeros(n);
    for (i, &dof) in lb.interior_dofs.iter().enumerate() {
        v[dof] = lb.basis[(i, col)];
    }
    v
}

/// Result of the condensed solve.
pub struct CondensedSolution {
    /// Retained-system solution (one entry per retained dof).
    pub retained: DVector<f64>,
    /// Full DOF vector after reconstructing the lazy part.
    pub full: DVector<f64>,
    pub report: SolveReport,
}

/// Change of basis, per-edge Schur elimination, sparse solve of the
/// retained block, and reconstruction of the lazy components.
pub fn condense_and_solve(
    system: &LinearSystem,
    cmap: &CondensationMap,
) -> Result<CondensedSolution, CondenseError> {
    let n = system.n;
    let n_r = cmap.retained.len();
    let n_l = cmap.n_lazy;

    // Row expansion of the basis change: old dof -> [(new index, coeff)].
    // Retained dofs keep their unit vector; edge-interior dofs additionally
    // spread onto their edge's lazy columns (dropped dofs only onto those).
    let expand = |dof: usize, out: &mut Vec<(usize, f64)>| {
        out.clear();
        let r = cmap.retained_index[dof];
        if r >= 0 {
            out.push((r as usize, 1.0));
        }
        let slot = cmap.interior_of[dof];
        if slot >= 0 {
            let lb = &cmap.lazy_edges[slot as usize];
            let row = cmap.interior_row[dof] as usize;
            let base = n_r + cmap.lazy_offset[slot as usize];
            for c in 0..lb.n_lazy() {
                let v = lb.basis[(row, c)];
                if v != 0.0 {
                    out.push((base + c, v));
                }
            }
        }
    };

    // Transformed triplets, split into retained-retained, the per-edge
    // coupling blocks, and per-edge lazy-lazy blocks. (Tiny cross-edge
    // lazy-lazy leakage from the numerical nullspace is dropped.)
    let mut a_rr: Vec<(usize, usize, f64)> = Vec::with_capacity(system.triplets.len());
    let mut a_rl: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); cmap.lazy_edges.len()];
    let mut a_lr: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); cmap.lazy_edges.len()];
    let mut a_ll: Vec<DMatrix<f64>> = cmap
        .lazy_edges
        .iter()
        .map(|lb| DMatrix::zeros(lb.n_lazy(), lb.n_lazy()))
        .collect();
    let mut rows: Vec<(usize, f64)> = Vec::new();
    let mut cols: Vec<(usize, f64)> = Vec::new();
    let edge_of = |idx: usize| -> usize {
        // new index >= n_r belongs to this lazy edge slot
        let rel = idx - n_r;
        match cmap.lazy_offset.binary_search(&rel) {
            Ok(s) => s,
            Err(s) => s - 1,
        }
    };
    for &(i, j, v) in &system.triplets {
        expand(i, &mut rows);
        expand(j, &mut cols);
        for &(ri, ci) in rows.iter() {
            for &(cj, cjv) in cols.iter() {
                let val = v * ci * cjv;
                match (ri < n_r, cj < n_r) {
                    (true, true) => a_rr.push((ri, cj, val)),
                    (true, false) => {
                        let s = edge_of(cj);
                        a_rl[s].push((ri, cj - n_r - cmap.lazy_offset[s], val));
                    }
                    (false, true) => {
                        let s = edge_of(ri);
                        a_lr[s].push((ri - n_r - cmap.lazy_offset[s], cj, val));
                    }
                    (false, false) => {
                        let s = edge_of(ri);
                        let t = edge_of(cj);
                        if s == t {
                            a_ll[s][(
                                ri - n_r - cmap.lazy_offset[s],
                                cj - n_r - cmap.lazy_offset[s],
                            )] += val;
                        }
                    }
                }
            }
        }
    }
    // Transformed right-hand side.
    let mut b_r = DVector::zeros(n_r);
    let mut b_l = DVector::zeros(n_l);
    for dof in 0..n {
        let v = system.rhs[dof];
        if v == 0.0 {
            continue;
        }
        expand(dof, &mut rows);
        for &(idx, c) in rows.iter() {
            if idx < n_r {
                b_r[idx] += c * v;
            } else {
                b_l[idx - n_r] += c * v;
            }
        }
    }

    // Per-edge Schur elimination.
    let mut reduced = a_rr;
    let mut rhs_red = b_r;
    let mut ll_factors = Vec::with_capacity(cmap.lazy_edges.len());
    for s in 0..cmap.lazy_edges.len() {
        let nl = cmap.lazy_edges[s].n_lazy();
        let lu = a_ll[s].clone().lu();
        if !lu.is_invertible() {
            return Err(CondenseError::DegenerateBasis(cmap.lazy_edges[s].macro_edge));
        }
        // dense lr block (columns restricted to the ones actually present)
        let mut col_ids: Vec<usize> = a_lr[s].iter().map(|t| t.1).collect();
        col_ids.sort_unstable();
        col_ids.dedup();
        let col_slot: std::collections::HashMap<usize, usize> =
            col_ids.iter().enumerate().map(|(a, &b)| (b, a)).collect();
        let mut lr = DMatrix::zeros(nl, col_ids.len());
        for &(r, c, v) in &a_lr[s] {
            lr[(r, col_slot[&c])] += v;
        }
        let x = lu.solve(&lr).expect("factorized");
        // rhs part
        let mut bl = DVector::zeros(nl);
        for c in 0..nl {
            bl[c] = b_l[cmap.lazy_offset[s] + c];
        }
        let y = lu.solve(&bl).expect("factorized");
        // accumulate -A_rl (A_ll^-1 A_lr) and -A_rl (A_ll^-1 b_l)
        for &(r, c, v) in &a_rl[s] {
            for (cid, &gcol) in col_ids.iter().enumerate() {
                let w = v * x[(c, cid)];
                if w != 0.0 {
                    reduced.push((r, gcol, -w));
                }
            }
            rhs_red[r] -= v * y[c];
        }
        ll_factors.push(lu);
    }

    let (u_ret, report) = solve_sparse(n_r, &reduced, &rhs_red)
        .map_err(|e| CondenseError::SingularReducedSystem(e.to_string()))?;

    // Lazy components: u_l = A_ll^{-1} (b_l - A_lr u_ret).
    let mut u_lazy = DVector::zeros(n_l);
    for s in 0..cmap.lazy_edges.len() {
        let nl = cmap.lazy_edges[s].n_lazy();
        let mut rhs = DVector::zeros(nl);
        for c in 0..nl {
            rhs[c] = b_l[cmap.lazy_offset[s] + c];
        }
        for &(r, c, v) in &a_lr[s] {
            rhs[r] -= v * u_ret[c];
        }
        let y = ll_factors[s].solve(&rhs).expect("factorized");
        for c in 0..nl {
            u_lazy[cmap.lazy_offset[s] + c] = y[c];
        }
    }

    // Back to the nodal basis: full = P [u_ret; u_lazy].
    let mut full = DVector::zeros(n);
    for (slot, &dof) in cmap.retained.iter().enumerate() {
        full[dof] = u_ret[slot];
    }
    for (s, lb) in cmap.lazy_edges.iter().enumerate() {
        for (row, &dof) in lb.interior_dofs.iter().enumerate() {
            let mut v = 0.0;
            for c in 0..lb.n_lazy() {
                v += lb.basis[(row, c)] * u_lazy[cmap.lazy_offset[s] + c];
            }
            full[dof] += v;
        }
    }
    Ok(CondensedSolution { retained: u_ret, full, report })
}

/// Convenience: solve the same system without condensation.
pub fn solve_uncondensed(system: &LinearSystem) -> Result<(DVector<f64>, SolveReport), SolveError> {
    solve_sparse(system.n, &system.triplets, &system.rhs)
}
