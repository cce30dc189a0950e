//! Lazy-dof identification, the s-orthogonal projector, and exactness of
//! the static condensation against the uncondensed solve.

use nalgebra::{DVector, Point2};
use pixelvem::agglomeration::{agglomerate_uniform, mesh_from_assignment, AggloConfig, PolyMesh};
use pixelvem::assembly::{assemble_full, BdtConfig};
use pixelvem::condensation::{
    apply_pi_s, build_condensation, condense_and_solve, lazy_basis_for_macro_edge, lazy_vector,
    solve_uncondensed,
};
use pixelvem::geometry::{ImplicitDomain, ManufacturedCase};
use pixelvem::pixelmesh::{classify_pixels, grid_from_flags, ClassifyRule};
use pixelvem::vemspace::{build_all_operators, build_dof_map, gather_local};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disk_mesh(h: f64, m: usize, merge: bool) -> PolyMesh {
    let grid =
        classify_pixels(&ImplicitDomain::unit_disk(), h, ClassifyRule::Contained).unwrap();
    agglomerate_uniform(&grid, m, &AggloConfig { merge_interior_edges: merge }).unwrap()
}

/// Straight interior macro edge of five fine edges at k = 1: four interior
/// vertices against a rank-one constraint leave three lazy dofs.
#[test]
fn straight_interface_lazy_dimension() {
    let grid = grid_from_flags(Point2::new(0.0, 0.0), 0.2, 2, 5, vec![true; 10]).unwrap();
    let assignment = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    let mesh = mesh_from_assignment(
        &grid,
        &assignment,
        &AggloConfig { merge_interior_edges: false },
    )
    .unwrap();
    let dm = build_dof_map(&mesh, 1);
    let (me_id, me) = mesh
        .macro_edges
        .iter()
        .enumerate()
        .find(|(_, me)| !me.is_boundary())
        .unwrap();
    assert_eq!(me.edges.len(), 5);
    let lb = lazy_basis_for_macro_edge(&mesh, &dm, me_id).unwrap();
    assert_eq!(lb.interior_dofs.len(), 4);
    assert_eq!(lb.rank, 1);
    assert_eq!(lb.n_lazy(), 3);
}

/// An interface of a single fine edge has no interior dofs at k = 1.
#[test]
fn single_edge_interface_has_no_lazy_dofs() {
    let grid = grid_from_flags(Point2::new(0.0, 0.0), 0.5, 2, 1, vec![true, true]).unwrap();
    let mesh =
        mesh_from_assignment(&grid, &[0, 1], &AggloConfig { merge_interior_edges: false })
            .unwrap();
    let dm = build_dof_map(&mesh, 1);
    let (me_id, _) = mesh
        .macro_edges
        .iter()
        .enumerate()
        .find(|(_, me)| !me.is_boundary())
        .unwrap();
    assert!(lazy_basis_for_macro_edge(&mesh, &dm, me_id).is_none());
}

/// Boundary chain of four fine edges spanning both normal axis classes at
/// k = 1: three interior vertices against rank two (the mean row is a
/// signed combination of the two component rows) leave one lazy dof. The
/// 2x2 square element split at its lattice extremes provides exactly two
/// such chains.
#[test]
fn boundary_staircase_lazy_dimension() {
    let grid = grid_from_flags(Point2::new(0.0, 0.0), 1.0, 2, 2, vec![true; 4]).unwrap();
    let mesh = mesh_from_assignment(
        &grid,
        &[0, 0, 0, 0],
        &AggloConfig { merge_interior_edges: false },
    )
    .unwrap();
    let dm = build_dof_map(&mesh, 1);
    assert_eq!(mesh.macro_edges.len(), 2);
    for me_id in 0..2 {
        let me = &mesh.macro_edges[me_id];
        assert_eq!(me.edges.len(), 4);
        let lb = lazy_basis_for_macro_edge(&mesh, &dm, me_id).unwrap();
        assert_eq!(lb.interior_dofs.len(), 3);
        assert_eq!(lb.rank, 2);
        assert_eq!(lb.n_lazy(), 1);
    }
}

/// An alternating one-pixel staircase is degenerate: every interior vertex
/// meets one vertical and one horizontal step with equal trace weights, so
/// the constraint rows are proportional and two lazy dofs appear.
#[test]
fn alternating_staircase_is_rank_deficient() {
    let flags = vec![true, true, false, true];
    let grid = grid_from_flags(Point2::new(0.0, 0.0), 1.0, 2, 2, flags).unwrap();
    let mesh = mesh_from_assignment(
        &grid,
        &[0, 0, -1, 0],
        &AggloConfig { merge_interior_edges: false },
    )
    .unwrap();
    let dm = build_dof_map(&mesh, 1);
    assert_eq!(mesh.macro_edges.len(), 2);
    let lb = lazy_basis_for_macro_edge(&mesh, &dm, 0).unwrap();
    assert_eq!(lb.interior_dofs.len(), 3);
    assert_eq!(lb.rank, 1);
    assert_eq!(lb.n_lazy(), 2);
}

/// Every lazy basis vector is killed by both element projectors.
#[test]
fn lazy_vectors_are_invisible_to_both_projectors() {
    for k in [1usize, 2, 3] {
        let mesh = disk_mesh(1.0 / 32.0, 8, true);
        let dm = build_dof_map(&mesh, k);
        let ops = build_all_operators(&mesh, &dm).unwrap();
        let cmap = build_condensation(&mesh, &dm, &ops, 1.0);
        assert!(cmap.n_lazy > 0, "expected lazy dofs on boundary chains");
        for (slot, lb) in cmap.lazy_edges.iter().enumerate() {
            for col in 0..lb.n_lazy() {
                let v = lazy_vector(&cmap, dm.total, slot, col);
                for op in &ops {
                    let local = gather_local(op, &v);
                    if local.amax() == 0.0 {
                        continue;
                    }
                    let pn = (&op.pi_nabla_star * &local).amax();
                    let pz = (&op.pi_zero_star * &local).amax();
                    assert!(pn <= 1e-10, "k={k}: |Pi_nabla v| = {pn:.2e}");
                    assert!(pz <= 1e-10, "k={k}: |Pi_zero v| = {pz:.2e}");
                }
            }
        }
    }
}

#[test]
fn pi_s_is_an_s_orthogonal_projection() {
    let k = 2;
    let mesh = disk_mesh(1.0 / 16.0, 4, true);
    let dm = build_dof_map(&mesh, k);
    let ops = build_all_operators(&mesh, &dm).unwrap();
    let cmap = build_condensation(&mesh, &dm, &ops, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let x = DVector::from_fn(dm.total, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(dm.total, |_, _| rng.gen_range(-1.0..1.0));
        let px = apply_pi_s(&cmap, &x);
        let ppx = apply_pi_s(&cmap, &px);
        assert!((&ppx - &px).amax() <= 1e-10 * px.amax().max(1.0), "idempotence");
        // s(Pi x, y) = s(x, Pi y)
        let py = apply_pi_s(&cmap, &y);
        let s = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
            (0..dm.total).map(|i| cmap.s_weights[i] * a[i] * b[i]).sum()
        };
        let lhs = s(&px, &y);
        let rhs = s(&x, &py);
        assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(1.0), "self-adjointness");
    }
}

/// A mesh without lazy dofs condenses to the identical system.
#[test]
fn no_lazy_dofs_means_identical_solutions() {
    let k = 1;
    let grid = classify_pixels(&ImplicitDomain::unit_square(), 0.25, ClassifyRule::Center)
        .unwrap();
    let mesh = agglomerate_uniform(&grid, 1, &AggloConfig::default()).unwrap();
    let dm = build_dof_map(&mesh, k);
    let ops = build_all_operators(&mesh, &dm).unwrap();
    let case = ManufacturedCase::patch(1);
    let cfg = BdtConfig::order(k);
    let sys = assemble_full(&mesh, &dm, &ops, &case, &cfg).unwrap();
    let cmap = build_condensation(&mesh, &dm, &ops, cfg.beta);
    assert_eq!(cmap.n_lazy, 0);
    assert_eq!(cmap.active_dofs(), dm.total);
    let (u_full, _) = solve_uncondensed(&sys).unwrap();
    let sol = condense_and_solve(&sys, &cmap).unwrap();
    assert!((&u_full - &sol.full).amax() <= 1e-13 * u_full.amax());
}

/// Condensed and uncondensed paths agree to 1e-9 relative on a curved
/// domain with many lazy dofs, and the identity behind the elimination
/// holds: the stabilization residual of the solution is s-orthogonal to
/// every lazy vector.
#[test]
fn condensation_is_exact_on_the_disk() {
    for k in [1usize, 2] {
        let case = ManufacturedCase::test1b();
        let mesh = disk_mesh(1.0 / 32.0, 4, true);
        let dm = build_dof_map(&mesh, k);
        let ops = build_all_operators(&mesh, &dm).unwrap();
        let cfg = BdtConfig::order(k);
        let sys = assemble_full(&mesh, &dm, &ops, &case, &cfg).unwrap();
        let cmap = build_condensation(&mesh, &dm, &ops, cfg.beta);
        assert!(cmap.n_lazy > 0);
        let (u_full, _) = solve_uncondensed(&sys).unwrap();
        let sol = condense_and_solve(&sys, &cmap).unwrap();
        let rel = (&u_full - &sol.full).amax() / u_full.amax();
        assert!(rel <= 1e-9, "k={k}: condensed vs full {rel:.2e}");
        assert_eq!(sol.retained.len(), cmap.active_dofs());
        assert!(cmap.active_dofs() < dm.total);

        // identity: for every lazy vector, sum_K beta (u - Pi_K u) . v = 0
        let scale = u_full.amax();
        for (slot, lb) in cmap.lazy_edges.iter().enumerate() {
            for col in 0..lb.n_lazy() {
                let v = lazy_vector(&cmap, dm.total, slot, col);
                let mut resid = 0.0;
                for op in &ops {
                    let vl = gather_local(op, &v);
                    if vl.amax() == 0.0 {
                        continue;
                    }
                    let ul = gather_local(op, &sol.full);
                    let dev = &ul - &op.pi_nabla * &ul;
                    resid += cfg.beta * dev.dot(&vl);
                }
                assert!(resid.abs() <= 1e-9 * scale, "static identity residual {resid:.2e}");
            }
        }
    }
}

/// The assembled row of a lazy test vector contains nothing but the
/// stabilization pairing.
#[test]
fn lazy_rows_reduce_to_pure_stabilization() {
    let k = 2;
    let case = ManufacturedCase::test1b();
    let mesh = disk_mesh(1.0 / 16.0, 4, true);
    let dm = build_dof_map(&mesh, k);
    let ops = build_all_operators(&mesh, &dm).unwrap();
    let cfg = BdtConfig::order(k);
    let sys = assemble_full(&mesh, &dm, &ops, &case, &cfg).unwrap();
    let cmap = build_condensation(&mesh, &dm, &ops, cfg.beta);
    assert!(cmap.n_lazy > 0);
    // stabilization-only triplets
    let mut stab: Vec<(usize, usize, f64)> = Vec::new();
    for op in &ops {
        for i in 0..op.n_dofs {
            for j in 0..op.n_dofs {
                let v = cfg.beta * op.s[(i, j)];
                if v != 0.0 {
                    stab.push((op.local_dofs[i], op.local_dofs[j], v));
                }
            }
        }
    }
    let scale: f64 = sys.triplets.iter().map(|t| t.2.abs()).fold(0.0, f64::max);
    for (slot, lb) in cmap.lazy_edges.iter().enumerate() {
        for col in 0..lb.n_lazy() {
            let v = lazy_vector(&cmap, dm.total, slot, col);
            let mut row: DVector<f64> = DVector::zeros(dm.total);
            for &(i, j, a) in &sys.triplets {
                if v[i] != 0.0 {
                    row[j] += v[i] * a;
                }
            }
            for &(i, j, a) in &stab {
                if v[i] != 0.0 {
                    row[j] -= v[i] * a;
                }
            }
            // rhs of a lazy test row also vanishes
            let rhs_part: f64 = (0..dm.total).map(|i| v[i] * sys.rhs[i]).sum();
            assert!(row.amax() <= 1e-11 * scale, "leak {:.2e}", row.amax());
            assert!(rhs_part.abs() <= 1e-11 * sys.rhs.amax());
        }
    }
}

/// Halving tau_hat at fixed H roughly doubles the lazy count on boundary
/// macro edges (their chains carry twice as many fine edges while the
/// constraint rank stays fixed).
#[test]
fn lazy_count_scales_with_fine_edges() {
    // lazy-per-chain is n_E minus a fixed constraint rank, so the ratio
    // approaches 2 from above as the chains grow
    let k = 1;
    let counts: Vec<usize> = [8usize, 16]
        .iter()
        .map(|&m| {
            let h = 0.25 / m as f64; // H fixed at 1/4
            let mesh = disk_mesh(h, m, true);
            let dm = build_dof_map(&mesh, k);
            let ops = build_all_operators(&mesh, &dm).unwrap();
            let cmap = build_condensation(&mesh, &dm, &ops, 1.0);
            cmap.lazy_edges
                .iter()
                .filter(|lb| mesh.macro_edges[lb.macro_edge].is_boundary())
                .map(|lb| lb.n_lazy())
                .sum()
        })
        .collect();
    let ratio = counts[1] as f64 / counts[0] as f64;
    assert!(
        (1.8..=2.6).contains(&ratio),
        "boundary lazy counts {:?} should roughly double (ratio {ratio:.2})",
        counts
    );
}
