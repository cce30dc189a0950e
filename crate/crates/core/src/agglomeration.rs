//! Agglomeration of pixels into a polygonal tessellation: block
//! partitioning (uniform or geometrically graded toward a corner), sliver
//! merging, and the macro-edge topology used for static condensation.
//!
//! Tessellation edges are straight segments between tessellation vertices.
//! Interior collinear fine-edge runs are merged into single edges by
//! default; boundary edges always stay at the fine resolution.

use crate::pixelmesh::{PixelError, PixelGrid};
use nalgebra::{Point2, Vector2};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate mesh: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

#[derive(Debug, Clone)]
pub struct AggloConfig {
    /// Merge interior collinear fine-edge runs into single straight edges.
    pub merge_interior_edges: bool,
}

impl Default for AggloConfig {
    fn default() -> Self {
        AggloConfig { merge_interior_edges: true }
    }
}

/// Lattice point (grid corner), unit = pixel side.
pub type Lattice = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Interface between two elements, `lo < hi`.
    Interior { lo: usize, hi: usize },
    Boundary { owner: usize },
}

/// Straight tessellation edge (one or more collinear fine segments).
#[derive(Debug, Clone)]
pub struct MeshEdge {
    pub v0: usize,
    pub v1: usize,
    pub kind: EdgeKind,
    pub macro_edge: usize,
    /// Outward normal of the lower-indexed adjacent element (the owner for
    /// boundary edges). This is the macro-edge orientation `nu_E`.
    pub nu: Vector2<f64>,
    pub length: f64,
}

impl MeshEdge {
    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, EdgeKind::Boundary { .. })
    }
}

/// Maximal chain of fine interface segments between the same element pair
/// (or between one element and the domain boundary).
#[derive(Debug, Clone)]
pub struct MacroEdge {
    /// (lower element, Some(higher) for interior | None for boundary)
    pub elements: (usize, Option<usize>),
    /// Ordered chain of tessellation edge ids.
    pub edges: Vec<usize>,
    /// Ordered vertex ids along the chain (edges.len() + 1 entries).
    pub chain_vertices: Vec<usize>,
}

impl MacroEdge {
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct PolyElement {
    /// Grid pixel indices (iy * nx + ix), sorted.
    pub pixels: Vec<usize>,
    /// CCW element boundary: (edge id, true if traversed v0 -> v1).
    pub edges: Vec<(usize, bool)>,
    /// CCW vertex cycle matching `edges` (same length; entry i is the start
    /// vertex of edge i).
    pub loop_vertices: Vec<usize>,
    /// Infinity-norm diameter: the larger side of the bounding box.
    pub h_k: f64,
    /// Geometric center of the bounding box.
    pub center: Point2<f64>,
    pub is_boundary: bool,
}

impl PolyElement {
    pub fn area(&self, h: f64) -> f64 {
        self.pixels.len() as f64 * h * h
    }
}

#[derive(Debug, Clone)]
pub struct PolyMesh {
    pub grid: PixelGrid,
    pub vertices: Vec<Point2<f64>>,
    pub vertex_lattice: Vec<Lattice>,
    pub elements: Vec<PolyElement>,
    pub edges: Vec<MeshEdge>,
    pub macro_edges: Vec<MacroEdge>,
    pub h: f64,
    /// max over elements of H_K
    pub h_max: f64,
    /// min over elements of H_K (differs from h_max on graded meshes)
    pub h_min: f64,
    /// h / h_max
    pub tau_hat: f64,
}

impl PolyMesh {
    /// Outward normal of element `elem` on its local edge `(edge, forward)`.
    pub fn outward_normal(&self, edge: usize, forward: bool) -> Vector2<f64> {
        let e = &self.edges[edge];
        let d = (self.vertices[e.v1] - self.vertices[e.v0]) * if forward { 1.0 } else { -1.0 };
        let n = Vector2::new(d.y, -d.x);
        n / n.norm()
    }

    pub fn total_area(&self) -> f64 {
        self.grid.inside_count() as f64 * self.h * self.h
    }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// Uniform agglomeration with ratio `m` (element side of `m` pixels).
/// Blocks are aligned to the bounding box of the inside pixels.
pub fn agglomerate_uniform(
    grid: &PixelGrid,
    m: usize,
    cfg: &AggloConfig,
) -> Result<PolyMesh, MeshError> {
    assert!(m >= 1);
    let (ax, ay) = inside_anchor(grid);
    let blocks = uniform_blocks(grid, m, ax, ay);
    let assignment = assign_and_merge(grid, &blocks)?;
    mesh_from_assignment(grid, &assignment, cfg)
}

/// Geometrically graded agglomeration: quadtree blocks of base side
/// `m0` pixels, subdivided toward `corner` for `levels` generations.
pub fn agglomerate_graded(
    grid: &PixelGrid,
    corner: Point2<f64>,
    m0: usize,
    levels: usize,
    cfg: &AggloConfig,
) -> Result<PolyMesh, MeshError> {
    assert!(levels >= 1);
    assert!(
        m0 % (1 << (levels - 1)) == 0,
        "base block of {m0} pixels cannot be halved {} times",
        levels - 1
    );
    let blocks = graded_blocks(grid, corner, m0, levels);
    let assignment = assign_and_merge(grid, &blocks)?;
    mesh_from_assignment(grid, &assignment, cfg)
}

fn inside_anchor(grid: &PixelGrid) -> (i64, i64) {
    let mut ax = i64::MAX;
    let mut ay = i64::MAX;
    for (ix, iy) in grid.inside_pixels() {
        ax = ax.min(ix as i64);
        ay = ay.min(iy as i64);
    }
    (ax, ay)
}

/// Pixel-aligned block: lower corner (may be negative after anchoring) and
/// side in pixels.
#[derive(Debug, Clone, Copy)]
struct Block {
    x0: i64,
    y0: i64,
    size: usize,
}

fn uniform_blocks(grid: &PixelGrid, m: usize, ax: i64, ay: i64) -> Vec<Block> {
    let mut blocks = Vec::new();
    let m_i = m as i64;
    let bx0 = div_floor(-ax, m_i);
    let by0 = div_floor(-ay, m_i);
    let bx1 = div_floor(grid.nx as i64 - 1 - ax, m_i);
    let by1 = div_floor(grid.ny as i64 - 1 - ay, m_i);
    for by in by0..=by1 {
        for bx in bx0..=bx1 {
            blocks.push(Block { x0: ax + bx * m_i, y0: ay + by * m_i, size: m });
        }
    }
    blocks
}

fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn graded_blocks(grid: &PixelGrid, corner: Point2<f64>, m0: usize, levels: usize) -> Vec<Block> {
    // Anchor blocks on the corner so refinement annuli are symmetric.
    let cx = ((corner.x - grid.origin.x) / grid.h).round() as i64;
    let cy = ((corner.y - grid.origin.y) / grid.h).round() as i64;
    let m_i = m0 as i64;
    let bx0 = div_floor(-cx, m_i);
    let by0 = div_floor(-cy, m_i);
    let bx1 = div_floor(grid.nx as i64 - 1 - cx, m_i);
    let by1 = div_floor(grid.ny as i64 - 1 - cy, m_i);
    let mut stack = Vec::new();
    for by in by0..=by1 {
        for bx in bx0..=bx1 {
            stack.push((Block { x0: cx + bx * m_i, y0: cy + by * m_i, size: m0 }, 0usize));
        }
    }
    let mut out = Vec::new();
    while let Some((blk, depth)) = stack.pop() {
        let side = blk.size as i64;
        // infinity-norm distance from the block to the corner, in pixels
        let dx = (blk.x0 - cx).max(cx - (blk.x0 + side)).max(0);
        let dy = (blk.y0 - cy).max(cy - (blk.y0 + side)).max(0);
        let dist = dx.max(dy);
        if depth + 1 < levels && dist < side && blk.size >= 2 {
            let half = blk.size / 2;
            let hi = half as i64;
            for (ox, oy) in [(0, 0), (hi, 0), (0, hi), (hi, hi)] {
                stack.push((Block { x0: blk.x0 + ox, y0: blk.y0 + oy, size: half }, depth + 1));
            }
        } else {
            out.push(blk);
        }
    }
    // Deterministic order regardless of stack traversal.
    out.sort_by_key(|b| (b.y0, b.x0, b.size));
    out
}

// ---------------------------------------------------------------------------
// Candidate elements + sliver merging
// ---------------------------------------------------------------------------

struct Candidate {
    pixels: Vec<usize>,
    block_px: usize,
}

fn assign_and_merge(grid: &PixelGrid, blocks: &[Block]) -> Result<Vec<i64>, MeshError> {
    let nx = grid.nx;
    let mut assignment = vec![-1i64; nx * grid.ny];
    let mut candidates: Vec<Candidate> = Vec::new();

    for blk in blocks {
        // connected components of (block ∩ inside pixels)
        let mut local: Vec<usize> = Vec::new();
        for y in blk.y0.max(0)..(blk.y0 + blk.size as i64).min(grid.ny as i64) {
            for x in blk.x0.max(0)..(blk.x0 + blk.size as i64).min(grid.nx as i64) {
                if grid.is_inside(x, y) {
                    local.push(y as usize * nx + x as usize);
                }
            }
        }
        if local.is_empty() {
            continue;
        }
        let in_block: std::collections::HashSet<usize> = local.iter().copied().collect();
        let mut seen: std::collections::HashSet<usize> = std::collections::HashSet::new();
        for &start in &local {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen.insert(start);
            while let Some(p) = stack.pop() {
                comp.push(p);
                let (ix, iy) = (p % nx, p / nx);
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= grid.ny as i64 {
                        continue;
                    }
                    let q = jy as usize * nx + jx as usize;
                    if in_block.contains(&q) && !seen.contains(&q) {
                        seen.insert(q);
                        stack.push(q);
                    }
                }
            }
            comp.sort_unstable();
            let id = candidates.len() as i64;
            for &p in &comp {
                assignment[p] = id;
            }
            candidates.push(Candidate { pixels: comp, block_px: blk.size });
        }
    }

    merge_slivers(grid, &mut assignment, &mut candidates)?;

    // Compact ids ordered by smallest pixel index.
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| !candidates[i].pixels.is_empty()).collect();
    order.sort_by_key(|&i| candidates[i].pixels[0]);
    let mut relabel = vec![-1i64; candidates.len()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new as i64;
    }
    for a in assignment.iter_mut() {
        if *a >= 0 {
            *a = relabel[*a as usize];
        }
    }
    Ok(assignment)
}

fn audit_ok(grid: &PixelGrid, pixels: &[usize], block_px: usize) -> bool {
    if pixels.len() * 4 < block_px * block_px {
        return false;
    }
    4 * largest_inscribed_square(grid, pixels) >= block_px
}

/// Side (in pixels) of the largest axis-aligned square of pixels contained
/// in the set.
fn largest_inscribed_square(grid: &PixelGrid, pixels: &[usize]) -> usize {
    let nx = grid.nx;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for &p in pixels {
        let (ix, iy) = (p % nx, p / nx);
        x0 = x0.min(ix);
        y0 = y0.min(iy);
        x1 = x1.max(ix);
        y1 = y1.max(iy);
    }
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut member = vec![false; w * h];
    for &p in pixels {
        let (ix, iy) = (p % nx, p / nx);
        member[(iy - y0) * w + (ix - x0)] = true;
    }
    let mut dp = vec![0u32; w * h];
    let mut best = 0u32;
    for j in 0..h {
        for i in 0..w {
            if !member[j * w + i] {
                continue;
            }
            let v = if i == 0 || j == 0 {
                1
            } else {
                dp[(j - 1) * w + i].min(dp[j * w + i - 1]).min(dp[(j - 1) * w + i - 1]) + 1
            };
            dp[j * w + i] = v;
            best = best.max(v);
        }
    }
    best as usize
}

fn pixel_set_is_simply_connected(grid: &PixelGrid, pixels: &[usize]) -> bool {
    // Flood the complement of the set within a 1-pixel-padded bounding box;
    // simply connected iff the complement is a single component.
    let nx = grid.nx;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for &p in pixels {
        let (ix, iy) = (p % nx, p / nx);
        x0 = x0.min(ix);
        y0 = y0.min(iy);
        x1 = x1.max(ix);
        y1 = y1.max(iy);
    }
    let w = x1 - x0 + 3;
    let h = y1 - y0 + 3;
    let mut member = vec![false; w * h];
    for &p in pixels {
        let (ix, iy) = (p % nx, p / nx);
        member[(iy - y0 + 1) * w + (ix - x0 + 1)] = true;
    }
    let mut seen = vec![false; w * h];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 1usize;
    while let Some(p) = stack.pop() {
        let (ix, iy) = (p % w, p / w);
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
            if jx < 0 || jy < 0 || jx >= w as i64 || jy >= h as i64 {
                continue;
            }
            let q = jy as usize * w + jx as usize;
            if !member[q] && !seen[q] {
                seen[q] = true;
                reached += 1;
                stack.push(q);
            }
        }
    }
    let outside_total = member.iter().filter(|&&m| !m).count();
    reached == outside_total
}

fn merge_slivers(
    grid: &PixelGrid,
    assignment: &mut [i64],
    candidates: &mut Vec<Candidate>,
) -> Result<(), MeshError> {
    let nx = grid.nx;
    for _round in 0..candidates.len() + 1 {
        let mut failing: Vec<usize> = (0..candidates.len())
            .filter(|&i| {
                !candidates[i].pixels.is_empty()
                    && !audit_ok(grid, &candidates[i].pixels, candidates[i].block_px)
            })
            .collect();
        if failing.is_empty() {
            return Ok(());
        }
        failing.sort_by_key(|&i| (candidates[i].pixels.len(), i));
        let mut merged_any = false;
        for fi in failing {
            if candidates[fi].pixels.is_empty()
                || audit_ok(grid, &candidates[fi].pixels, candidates[fi].block_px)
            {
                continue;
            }
            // neighbor elements, by shared interface length
            let mut neighbors: BTreeMap<i64, usize> = BTreeMap::new();
            for &p in &candidates[fi].pixels {
                let (ix, iy) = (p % nx, p / nx);
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= grid.ny as i64 {
                        continue;
                    }
                    let a = assignment[jy as usize * nx + jx as usize];
                    if a >= 0 && a != fi as i64 {
                        *neighbors.entry(a).or_insert(0) += 1;
                    }
                }
            }
            if neighbors.is_empty() {
                log::warn!("element {} fails the quality audit but has no neighbor", fi);
                continue;
            }
            // Rank targets by the size of the merged bounding box (keeps
            // H_K bounded), then prefer healthy targets, longer shared
            // interfaces, and lower ids.
            let bbox_side = |a: &[usize], b: &[usize]| -> usize {
                let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
                for &p in a.iter().chain(b.iter()) {
                    let (ix, iy) = (p % nx, p / nx);
                    x0 = x0.min(ix);
                    y0 = y0.min(iy);
                    x1 = x1.max(ix);
                    y1 = y1.max(iy);
                }
                (x1 - x0 + 1).max(y1 - y0 + 1)
            };
            let mut targets: Vec<(i64, usize)> = neighbors.into_iter().collect();
            targets.sort_by_key(|&(id, len)| {
                let healthy =
                    audit_ok(grid, &candidates[id as usize].pixels, candidates[id as usize].block_px);
                let side = bbox_side(&candidates[fi].pixels, &candidates[id as usize].pixels);
                (side, !healthy, usize::MAX - len, id)
            });
            let mut done = false;
            for (tid, _) in targets {
                let mut merged = candidates[tid as usize].pixels.clone();
                merged.extend_from_slice(&candidates[fi].pixels);
                merged.sort_unstable();
                if !pixel_set_is_simply_connected(grid, &merged) {
                    continue;
                }
                for &p in &candidates[fi].pixels {
                    assignment[p] = tid;
                }
                let block =
                    candidates[tid as usize].block_px.max(candidates[fi].block_px);
                candidates[tid as usize].pixels = merged;
                candidates[tid as usize].block_px = block;
                candidates[fi].pixels.clear();
                merged_any = true;
                done = true;
                break;
            }
            if !done {
                return Err(MeshError::Degenerate(format!(
                    "sliver element {} cannot be merged without creating a hole",
                    fi
                )));
            }
        }
        if !merged_any {
            break;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Topology: segments, macro edges, element loops
// ---------------------------------------------------------------------------

/// Builds the full tessellation (vertices, edges, macro edges, element
/// loops) from a per-pixel element assignment. Pixels assigned -1 are
/// outside.
pub fn mesh_from_assignment(
    grid: &PixelGrid,
    assignment: &[i64],
    cfg: &AggloConfig,
) -> Result<PolyMesh, MeshError> {
    let nx = grid.nx;
    let n_elems = assignment.iter().copied().max().unwrap_or(-1) + 1;
    if n_elems <= 0 {
        return Err(MeshError::Degenerate("no elements".into()));
    }
    let n_elems = n_elems as usize;

    // Element pixel lists.
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); n_elems];
    for (p, &a) in assignment.iter().enumerate() {
        if a >= 0 {
            pixels[a as usize].push(p);
        }
    }
    for (i, px) in pixels.iter().enumerate() {
        if px.is_empty() {
            return Err(MeshError::Degenerate(format!("element {i} has no pixels")));
        }
        if !pixel_set_is_simply_connected(grid, px) {
            return Err(MeshError::Degenerate(format!("element {i} is not simply connected")));
        }
    }

    // Fine interface/boundary segments keyed by canonical lattice pair.
    // Segment between lattice a and b (a < b lex), with the element pair and
    // the normal pointing from the lower element (or outward on boundary).
    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    struct SegKey(Lattice, Lattice);
    #[derive(Clone, Copy)]
    struct SegData {
        lo: usize,
        hi: Option<usize>,
        nu: (i8, i8),
    }
    let mut segments: BTreeMap<SegKey, SegData> = BTreeMap::new();
    for iy in 0..grid.ny {
        for ix in 0..nx {
            let a = assignment[iy * nx + ix];
            if a < 0 {
                continue;
            }
            let e = a as usize;
            let mut consider = |jx: i64, jy: i64, key: SegKey, nu_self: (i8, i8)| {
                let other = if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= grid.ny as i64 {
                    -1
                } else {
                    assignment[jy as usize * nx + jx as usize]
                };
                if other == e as i64 {
                    return;
                }
                if other < 0 {
                    segments.insert(key, SegData { lo: e, hi: None, nu: nu_self });
                } else {
                    let o = other as usize;
                    let (lo, hi) = (e.min(o), e.max(o));
                    let nu = if e == lo { nu_self } else { (-nu_self.0, -nu_self.1) };
                    segments.insert(key, SegData { lo, hi: Some(hi), nu });
                }
            };
            // left
            consider(
                ix as i64 - 1,
                iy as i64,
                SegKey((ix, iy), (ix, iy + 1)),
                (-1, 0),
            );
            // right
            consider(
                ix as i64 + 1,
                iy as i64,
                SegKey((ix + 1, iy), (ix + 1, iy + 1)),
                (1, 0),
            );
            // bottom
            consider(ix as i64, iy as i64 - 1, SegKey((ix, iy), (ix + 1, iy)), (0, -1));
            // top
            consider(
                ix as i64,
                iy as i64 + 1,
                SegKey((ix, iy + 1), (ix + 1, iy + 1)),
                (0, 1),
            );
        }
    }

    // Vertex incidence.
    let seg_list: Vec<(SegKey, SegData)> = segments.iter().map(|(k, d)| (*k, *d)).collect();
    let mut incident: BTreeMap<Lattice, Vec<usize>> = BTreeMap::new();
    for (i, (k, _)) in seg_list.iter().enumerate() {
        incident.entry(k.0).or_default().push(i);
        incident.entry(k.1).or_default().push(i);
    }
    let label = |d: &SegData| (d.lo, d.hi);
    let mut is_macro_vertex: BTreeMap<Lattice, bool> = BTreeMap::new();
    for (&v, inc) in &incident {
        let mv = if inc.len() != 2 {
            true
        } else {
            label(&seg_list[inc[0]].1) != label(&seg_list[inc[1]].1)
        };
        is_macro_vertex.insert(v, mv);
    }

    // Chains between macro vertices.
    let mut seg_used = vec![false; seg_list.len()];
    // chain = ordered lattice vertices + per-fine-segment data
    struct Chain {
        verts: Vec<Lattice>,
        segs: Vec<usize>,
        lo: usize,
        hi: Option<usize>,
    }
    let mut chains: Vec<Chain> = Vec::new();
    let walk = |start_vertex: Lattice,
                first_seg: usize,
                seg_used: &mut Vec<bool>,
                incident: &BTreeMap<Lattice, Vec<usize>>,
                is_macro: &BTreeMap<Lattice, bool>|
     -> Chain {
        let mut verts = vec![start_vertex];
        let mut segs = vec![first_seg];
        seg_used[first_seg] = true;
        let d0 = seg_list[first_seg].1;
        let mut cur = other_end(seg_list[first_seg].0 .0, seg_list[first_seg].0 .1, start_vertex);
        verts.push(cur);
        while !is_macro[&cur] {
            let inc = &incident[&cur];
            let next = inc
                .iter()
                .copied()
                .find(|&i| !seg_used[i] && label(&seg_list[i].1) == label(&d0));
            match next {
                Some(i) => {
                    seg_used[i] = true;
                    segs.push(i);
                    cur = other_end(seg_list[i].0 .0, seg_list[i].0 .1, cur);
                    verts.push(cur);
                }
                None => break,
            }
        }
        Chain { verts, segs, lo: d0.lo, hi: d0.hi }
    };
    for (&v, inc) in &incident {
        if !is_macro_vertex[&v] {
            continue;
        }
        for &s in inc {
            if !seg_used[s] {
                chains.push(walk(v, s, &mut seg_used, &incident, &is_macro_vertex));
            }
        }
    }
    // Leftover segments form closed loops with no macro vertex (single
    // element, or an isolated interface loop). Split at the two extreme
    // lattice corners to keep the chains open.
    for start in 0..seg_list.len() {
        if seg_used[start] {
            continue;
        }
        // gather the loop
        let mut loop_verts = vec![seg_list[start].0 .0];
        let mut loop_segs = vec![start];
        seg_used[start] = true;
        let mut cur = seg_list[start].0 .1;
        loop {
            loop_verts.push(cur);
            let next = incident[&cur].iter().copied().find(|&i| !seg_used[i]);
            match next {
                Some(i) => {
                    seg_used[i] = true;
                    loop_segs.push(i);
                    cur = other_end(seg_list[i].0 .0, seg_list[i].0 .1, cur);
                }
                None => break,
            }
        }
        // loop_verts has one more entry than segs; last == first
        let closed_verts = &loop_verts[..loop_verts.len() - 1];
        let vmin = closed_verts.iter().copied().min().unwrap();
        let vmax = closed_verts.iter().copied().max().unwrap();
        let imin = closed_verts.iter().position(|&v| v == vmin).unwrap();
        let imax = closed_verts.iter().position(|&v| v == vmax).unwrap();
        let n = loop_segs.len();
        let (i0, i1) = (imin.min(imax), imin.max(imax));
        let d0 = seg_list[start].1;
        let mk = |seg_ids: Vec<usize>, verts: Vec<Lattice>| Chain {
            verts,
            segs: seg_ids,
            lo: d0.lo,
            hi: d0.hi,
        };
        let part1: Vec<usize> = (i0..i1).map(|i| loop_segs[i]).collect();
        let verts1: Vec<Lattice> = (i0..=i1).map(|i| closed_verts[i % n]).collect();
        let part2: Vec<usize> = (i1..i1 + n - (i1 - i0)).map(|i| loop_segs[i % n]).collect();
        let verts2: Vec<Lattice> =
            (i1..=i1 + n - (i1 - i0)).map(|i| closed_verts[i % n]).collect();
        if !part1.is_empty() {
            chains.push(mk(part1, verts1));
        }
        if !part2.is_empty() {
            chains.push(mk(part2, verts2));
        }
    }
    chains.sort_by_key(|c| (c.lo, c.hi, c.verts[0], *c.verts.last().unwrap()));

    // Sub-edges per chain: boundary chains keep fine segments; interior
    // chains merge collinear runs when enabled.
    let mut vertex_ids: BTreeMap<Lattice, usize> = BTreeMap::new();
    let mut edge_specs: Vec<(Lattice, Lattice, EdgeKind, usize, (i8, i8))> = Vec::new();
    let mut macro_edges: Vec<MacroEdge> = Vec::new();
    for chain in &chains {
        let macro_id = macro_edges.len();
        let is_bnd = chain.hi.is_none();
        let mut breaks: Vec<usize> = vec![0];
        if is_bnd || !cfg.merge_interior_edges {
            breaks.extend(1..chain.verts.len());
        } else {
            for i in 1..chain.verts.len() - 1 {
                let a = chain.verts[i - 1];
                let b = chain.verts[i];
                let c = chain.verts[i + 1];
                let d1 = (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
                let d2 = (c.0 as i64 - b.0 as i64, c.1 as i64 - b.1 as i64);
                if d1 != d2 {
                    breaks.push(i);
                }
            }
            breaks.push(chain.verts.len() - 1);
        }
        let kind = match chain.hi {
            Some(hi) => EdgeKind::Interior { lo: chain.lo, hi },
            None => EdgeKind::Boundary { owner: chain.lo },
        };
        let mut chain_edge_ids = Vec::new();
        let mut chain_vertex_ids = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (chain.verts[w[0]], chain.verts[w[1]]);
            let nu = seg_list[chain.segs[w[0]]].1.nu;
            let id = edge_specs.len();
            edge_specs.push((a, b, kind, macro_id, nu));
            chain_edge_ids.push(id);
        }
        for &i in &breaks {
            let v = chain.verts[i];
            let next = vertex_ids.len();
            chain_vertex_ids.push(*vertex_ids.entry(v).or_insert(next));
        }
        macro_edges.push(MacroEdge {
            elements: (chain.lo, chain.hi),
            edges: chain_edge_ids,
            chain_vertices: chain_vertex_ids,
        });
    }
    // Re-number vertices in sorted lattice order for determinism.
    let mut lattice_sorted: Vec<Lattice> = vertex_ids.keys().copied().collect();
    lattice_sorted.sort_unstable();
    let renumber: BTreeMap<Lattice, usize> =
        lattice_sorted.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut inv_provisional: Vec<Lattice> = vec![(0, 0); vertex_ids.len()];
    for (&lat, &id) in &vertex_ids {
        inv_provisional[id] = lat;
    }
    for me in macro_edges.iter_mut() {
        for slot in 0..me.chain_vertices.len() {
            me.chain_vertices[slot] = renumber[&inv_provisional[me.chain_vertices[slot]]];
        }
    }
    let vertices: Vec<Point2<f64>> =
        lattice_sorted.iter().map(|&(i, j)| grid.point(i, j)).collect();
    let h = grid.h;
    let edges: Vec<MeshEdge> = edge_specs
        .iter()
        .map(|&(a, b, kind, macro_edge, nu)| MeshEdge {
            v0: renumber[&a],
            v1: renumber[&b],
            kind,
            macro_edge,
            nu: Vector2::new(nu.0 as f64, nu.1 as f64),
            length: ((b.0 as f64 - a.0 as f64).abs() + (b.1 as f64 - a.1 as f64).abs()) * h,
        })
        .collect();

    // Edge lookup by vertex pair.
    let mut edge_by_pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        edge_by_pair.insert((e.v0, e.v1), i);
        edge_by_pair.insert((e.v1, e.v0), i);
    }
    let tess_vertex: std::collections::HashSet<Lattice> =
        lattice_sorted.iter().copied().collect();

    // Element loops.
    let mut elements = Vec::with_capacity(n_elems);
    let mut h_max: f64 = 0.0;
    let mut h_min = f64::MAX;
    for (e, px) in pixels.iter().enumerate() {
        let lattice_loop = trace_element_loop(grid, assignment, e, px);
        // Reduce the lattice loop to tessellation vertices.
        let positions: Vec<usize> =
            (0..lattice_loop.len()).filter(|&i| tess_vertex.contains(&lattice_loop[i])).collect();
        if positions.is_empty() {
            return Err(MeshError::Degenerate(format!("element {e} has no tessellation vertex")));
        }
        let mut loop_vertices = Vec::with_capacity(positions.len());
        let mut loop_edges = Vec::with_capacity(positions.len());
        for (slot, &pos) in positions.iter().enumerate() {
            let va = lattice_loop[pos];
            let next_pos = positions[(slot + 1) % positions.len()];
            let vb = lattice_loop[next_pos];
            let (ia, ib) = (renumber[&va], renumber[&vb]);
            let edge = *edge_by_pair.get(&(ia, ib)).ok_or_else(|| {
                MeshError::Degenerate(format!(
                    "element {e}: no tessellation edge between {:?} and {:?}",
                    va, vb
                ))
            })?;
            loop_vertices.push(ia);
            loop_edges.push((edge, edges[edge].v0 == ia));
        }
        // Bounding box.
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for &p in px.iter() {
            let (ix, iy) = (p % nx, p / nx);
            x0 = x0.min(ix);
            y0 = y0.min(iy);
            x1 = x1.max(ix + 1);
            y1 = y1.max(iy + 1);
        }
        let w = (x1 - x0) as f64 * h;
        let hh = (y1 - y0) as f64 * h;
        let h_k = w.max(hh);
        h_max = h_max.max(h_k);
        h_min = h_min.min(h_k);
        let center = Point2::new(
            grid.origin.x + h * (x0 + x1) as f64 * 0.5,
            grid.origin.y + h * (y0 + y1) as f64 * 0.5,
        );
        let is_boundary = loop_edges.iter().any(|&(id, _)| edges[id].is_boundary());
        elements.push(PolyElement {
            pixels: px.clone(),
            edges: loop_edges,
            loop_vertices,
            h_k,
            center,
            is_boundary,
        });
    }

    Ok(PolyMesh {
        grid: grid.clone(),
        vertices,
        vertex_lattice: lattice_sorted,
        elements,
        edges,
        macro_edges,
        h,
        h_max,
        h_min,
        tau_hat: h / h_max,
    })
}

fn other_end(a: Lattice, b: Lattice, v: Lattice) -> Lattice {
    if a == v {
        b
    } else {
        a
    }
}

/// CCW lattice loop of one element (interior on the left). Pinch vertices
/// may repeat in the output.
fn trace_element_loop(
    grid: &PixelGrid,
    assignment: &[i64],
    elem: usize,
    pixels: &[usize],
) -> Vec<Lattice> {
    let nx = grid.nx;
    let belongs = |jx: i64, jy: i64| -> bool {
        if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= grid.ny as i64 {
            return false;
        }
        assignment[jy as usize * nx + jx as usize] == elem as i64
    };
    // Directed boundary segments, interior on the left.
    let mut from: BTreeMap<Lattice, Vec<(Lattice, (i64, i64))>> = BTreeMap::new();
    let mut count = 0usize;
    for &p in pixels {
        let (ix, iy) = (p % nx, p / nx);
        let (x, y) = (ix, iy);
        if !belongs(ix as i64, iy as i64 - 1) {
            from.entry((x, y)).or_default().push(((x + 1, y), (1, 0)));
            count += 1;
        }
        if !belongs(ix as i64 + 1, iy as i64) {
            from.entry((x + 1, y)).or_default().push(((x + 1, y + 1), (0, 1)));
            count += 1;
        }
        if !belongs(ix as i64, iy as i64 + 1) {
            from.entry((x + 1, y + 1)).or_default().push(((x, y + 1), (-1, 0)));
            count += 1;
        }
        if !belongs(ix as i64 - 1, iy as i64) {
            from.entry((x, y + 1)).or_default().push(((x, y), (0, -1)));
            count += 1;
        }
    }
    // Start from the lexicographically smallest segment start.
    let start = *from.keys().next().unwrap();
    let mut result = Vec::with_capacity(count);
    let mut cur = start;
    let mut prev_dir = (0i64, 0i64);
    let mut taken = 0usize;
    while taken < count {
        result.push(cur);
        let options = from.get_mut(&cur).unwrap();
        // prefer the sharpest left turn to stay on the same pocket
        let pick = (0..options.len())
            .min_by_key(|&i| {
                let d = options[i].1;
                let cross = prev_dir.0 * d.1 - prev_dir.1 * d.0;
                let dot = prev_dir.0 * d.0 + prev_dir.1 * d.1;
                match (cross, dot) {
                    (c, _) if c > 0 => 0,
                    (0, d) if d > 0 => 1,
                    (0, 0) => 1, // first step
                    _ => 2,
                }
            })
            .expect("open boundary chain while tracing element loop");
        let (next, dir) = options.swap_remove(pick);
        prev_dir = dir;
        cur = next;
        taken += 1;
    }
    debug_assert_eq!(cur, start, "element loop does not close");
    result
}

// ---------------------------------------------------------------------------
// Audit + dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ElementAudit {
    pub element: usize,
    pub h_k_over_h_max: f64,
    /// side of the largest inscribed axis square over H_K
    pub alpha: f64,
    /// max number of boundary crossings of any pixel-centered axis line
    pub n0: usize,
    pub pixel_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub per_element: Vec<ElementAudit>,
    pub alpha_min: f64,
    pub n0_max: usize,
    pub h_ratio_min: f64,
}

/// Shape-regularity audit for the tessellation assumption: inscribed
/// squares, element size ratios, and axis-line crossing counts.
pub fn audit_assumption(mesh: &PolyMesh) -> AuditReport {
    let grid = &mesh.grid;
    let nx = grid.nx;
    let mut per_element = Vec::with_capacity(mesh.elements.len());
    for (i, el) in mesh.elements.iter().enumerate() {
        let sq = largest_inscribed_square(grid, &el.pixels) as f64 * mesh.h;
        let member: std::collections::HashSet<usize> = el.pixels.iter().copied().collect();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for &p in &el.pixels {
            let (ix, iy) = (p % nx, p / nx);
            x0 = x0.min(ix);
            y0 = y0.min(iy);
            x1 = x1.max(ix);
            y1 = y1.max(iy);
        }
        let mut n0 = 0usize;
        for iy in y0..=y1 {
            let mut runs = 0;
            let mut inside = false;
            for ix in x0..=x1 {
                let m = member.contains(&(iy * nx + ix));
                if m && !inside {
                    runs += 1;
                }
                inside = m;
            }
            n0 = n0.max(2 * runs);
        }
        for ix in x0..=x1 {
            let mut runs = 0;
            let mut inside = false;
            for iy in y0..=y1 {
                let m = member.contains(&(iy * nx + ix));
                if m && !inside {
                    runs += 1;
                }
                inside = m;
            }
            n0 = n0.max(2 * runs);
        }
        per_element.push(ElementAudit {
            element: i,
            h_k_over_h_max: el.h_k / mesh.h_max,
            alpha: sq / el.h_k,
            n0,
            pixel_count: el.pixels.len(),
        });
    }
    AuditReport {
        alpha_min: per_element.iter().map(|a| a.alpha).fold(f64::MAX, f64::min),
        n0_max: per_element.iter().map(|a| a.n0).max().unwrap_or(0),
        h_ratio_min: per_element.iter().map(|a| a.h_k_over_h_max).fold(f64::MAX, f64::min),
        per_element,
    }
}

#[derive(Serialize)]
struct MeshDump<'a> {
    h: f64,
    h_max: f64,
    h_min: f64,
    tau_hat: f64,
    vertices: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    edges: Vec<EdgeDump>,
    macro_edges: Vec<MacroDump<'a>>,
}

#[derive(Serialize)]
struct EdgeDump {
    v0: usize,
    v1: usize,
    boundary: bool,
    macro_edge: usize,
}

#[derive(Serialize)]
struct MacroDump<'a> {
    elements: (usize, Option<usize>),
    edges: &'a [usize],
}

/// JSON dump of the tessellation for reproducibility.
pub fn dump_json(mesh: &PolyMesh) -> String {
    let dump = MeshDump {
        h: mesh.h,
        h_max: mesh.h_max,
        h_min: mesh.h_min,
        tau_hat: mesh.tau_hat,
        vertices: mesh.vertices.iter().map(|p| [p.x, p.y]).collect(),
        elements: mesh.elements.iter().map(|e| e.loop_vertices.clone()).collect(),
        edges: mesh
            .edges
            .iter()
            .map(|e| EdgeDump {
                v0: e.v0,
                v1: e.v1,
                boundary: e.is_boundary(),
                macro_edge: e.macro_edge,
            })
            .collect(),
        macro_edges: mesh
            .macro_edges
            .iter()
            .map(|m| MacroDump { elements: m.elements, edges: &m.edges })
            .collect(),
    };
    serde_json::to_string_pretty(&dump).expect("mesh dump serialization")
}

/// Renders the tessellation as a standalone SVG: element fills, edges, and
/// macro-edge endpoints highlighted.
pub fn render_svg(mesh: &PolyMesh, path: &std::path::Path) -> std::io::Result<()> {
    let (min, max) = {
        let mut min = Point2::new(f64::MAX, f64::MAX);
        let mut max = Point2::new(f64::MIN, f64::MIN);
        for v in &mesh.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    };
    let span = (max.x - min.x).max(max.y - min.y).max(1e-12);
    let size = 800.0;
    let map = |p: Point2<f64>| -> (f64, f64) {
        (
            (p.x - min.x) / span * size,
            size - (p.y - min.y) / span * size,
        )
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        size as u32
    ));
    for (i, el) in mesh.elements.iter().enumerate() {
        let hue = (i * 47) % 360;
        let mut d = String::new();
        for (slot, &v) in el.loop_vertices.iter().enumerate() {
            let (x, y) = map(mesh.vertices[v]);
            d.push_str(&format!("{}{:.2} {:.2} ", if slot == 0 { "M" } else { "L" }, x, y));
        }
        d.push('Z');
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"hsl({},60%,80%)\" stroke=\"none\"/>\n",
            d, hue
        ));
    }
    for e in &mesh.edges {
        let (x0, y0) = map(mesh.vertices[e.v0]);
        let (x1, y1) = map(mesh.vertices[e.v1]);
        let color = if e.is_boundary() { "#c0392b" } else { "#2c3e50" };
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"1\"/>\n",
            x0, y0, x1, y1, color
        ));
    }
    for me in &mesh.macro_edges {
        for &v in [me.chain_vertices[0], *me.chain_vertices.last().unwrap()].iter() {
            let (x, y) = map(mesh.vertices[v]);
            let color = if me.is_boundary() { "#c0392b" } else { "#2980b9" };
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                x, y, color
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}
