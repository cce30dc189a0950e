//! Error metrics of a solved DOF vector against the exact solution, and
//! log-log slope fitting for convergence studies.

use crate::agglomeration::PolyMesh;
use crate::geometry::ManufacturedCase;
use crate::quadrature::tensor_rule;
use crate::vemspace::{gather_local, ElementOperators};
use nalgebra::{DVector, Point2, Vector2};
use rayon::prelude::*;

/// One row of a convergence study.
#[derive(Debug, Clone)]
pub struct ErrorRecord {
    /// Coarse mesh size the study refines in (smallest element on graded
    /// meshes).
    pub h_coarse: f64,
    /// Pixel size.
    pub h: f64,
    pub k: usize,
    pub tau_hat: f64,
    /// Unknowns of the solved (condensed) system.
    pub active_dofs: usize,
    /// Relative L2 error of the element-wise L2 projection.
    pub e0: f64,
    /// Relative H1 seminorm error of the projected gradient.
    pub e1: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub e0: f64,
    pub e1: f64,
    pub abs0: f64,
    pub abs1: f64,
    pub den0: f64,
    pub den1: f64,
}

/// Computes the relative (and absolute) L2 and broken-H1 errors of the
/// projected solution fields against closures for `u` and its gradient.
pub fn compute_errors_against(
    mesh: &PolyMesh,
    ops: &[ElementOperators],
    u_h: &DVector<f64>,
    u: &(dyn Fn(Point2<f64>) -> f64 + Sync),
    grad_u: &(dyn Fn(Point2<f64>) -> Vector2<f64> + Sync),
) -> ErrorNorms {
    let sums: [f64; 4] = ops
        .par_iter()
        .map(|op| {
            let local = gather_local(op, u_h);
            let c0 = &op.pi_zero_star * &local;
            let cgx = &op.pi_zero_grad_x * &local;
            let cgy = &op.pi_zero_grad_y * &local;
            let nk1 = cgx.len();
            let el = &mesh.elements[op.elem];
            let mut acc = [0.0f64; 4];
            for &p in &el.pixels {
                let (ix, iy) = (p % mesh.grid.nx, p / mesh.grid.nx);
                let o = mesh.grid.point(ix, iy);
                let rule = tensor_rule(o.x, o.y, mesh.h, mesh.h, op.k + 2);
                for (q, &w) in rule.points.iter().zip(&rule.weights) {
                    let m = op.basis.eval(*q);
                    let uv = u(*q);
                    let du = grad_u(*q);
                    let proj = c0.dot(&m);
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for i in 0..nk1 {
                        gx += cgx[i] * m[i];
                        gy += cgy[i] * m[i];
                    }
                    acc[0] += w * (uv - proj) * (uv - proj);
                    acc[1] += w * ((du.x - gx) * (du.x - gx) + (du.y - gy) * (du.y - gy));
                    acc[2] += w * uv * uv;
                    acc[3] += w * du.norm_squared();
                }
            }
            acc
        })
        .reduce(
            || [0.0; 4],
            |mut a, b| {
                for i in 0..4 {
                    a[i] += b[i];
                }
                a
            },
        );
    let (abs0, abs1) = (sums[0].sqrt(), sums[1].sqrt());
    let (den0, den1) = (sums[2].sqrt(), sums[3].sqrt());
    ErrorNorms { e0: abs0 / den0, e1: abs1 / den1, abs0, abs1, den0, den1 }
}

/// Relative errors of Eq.-style metrics for a manufactured case.
pub fn compute_errors(
    mesh: &PolyMesh,
    ops: &[ElementOperators],
    u_h: &DVector<f64>,
    case: &ManufacturedCase,
) -> (f64, f64) {
    let norms = compute_errors_against(
        mesh,
        ops,
        u_h,
        &|p| case.u_exact(p),
        &|p| case.grad_u_exact(p),
    );
    (norms.e0, norms.e1)
}

/// Least-squares slope of log(e) against log(H).
pub fn fit_slope(records: &[(f64, f64)]) -> f64 {
    assert!(records.len() >= 2, "need at least two records to fit a slope");
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|&(h, e)| {
            assert!(h > 0.0 && e > 0.0, "slope fit needs positive values");
            (h.ln(), e.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Pearson correlation of two samples (used by the graded studies to test
/// log-error against the cube root of the dof count).
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agglomeration::{agglomerate_uniform, AggloConfig};
    use crate::geometry::ImplicitDomain;
    use crate::pixelmesh::{classify_pixels, ClassifyRule};
    use crate::vemspace::{build_all_operators, build_dof_map, interpolate_dofs};
    use approx::assert_abs_diff_eq;

    fn square_setup(k: usize) -> (PolyMesh, Vec<ElementOperators>, crate::vemspace::DofMap) {
        let grid =
            classify_pixels(&ImplicitDomain::unit_square(), 0.125, ClassifyRule::Center).unwrap();
        let mesh = agglomerate_uniform(&grid, 2, &AggloConfig::default()).unwrap();
        let dm = build_dof_map(&mesh, k);
        let ops = build_all_operators(&mesh, &dm).unwrap();
        (mesh, ops, dm)
    }

    #[test]
    fn interpolated_polynomial_has_vanishing_errors() {
        for k in 1..=3usize {
            let case = ManufacturedCase::patch(k);
            let (mesh, ops, dm) = square_setup(k);
            let ui = interpolate_dofs(&|p| case.u_exact(p), &mesh, &dm);
            let (e0, e1) = compute_errors(&mesh, &ops, &ui, &case);
            assert!(e0 <= 1e-10 && e1 <= 1e-10, "k={k}: e0={e0:.2e} e1={e1:.2e}");
        }
    }

    #[test]
    fn zero_solution_has_unit_relative_errors() {
        let case = ManufacturedCase::patch(2);
        let (mesh, ops, dm) = square_setup(2);
        let zero = DVector::zeros(dm.total);
        let (e0, e1) = compute_errors(&mesh, &ops, &zero, &case);
        assert_abs_diff_eq!(e0, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e1, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn relative_errors_are_scaling_invariant() {
        let (mesh, ops, dm) = square_setup(2);
        let u = |p: Point2<f64>| (3.1 * p.x).sin() * (2.7 * p.y + 0.3).cos();
        let gu = |p: Point2<f64>| {
            Vector2::new(
                3.1 * (3.1 * p.x).cos() * (2.7 * p.y + 0.3).cos(),
                -2.7 * (3.1 * p.x).sin() * (2.7 * p.y + 0.3).sin(),
            )
        };
        let ui = interpolate_dofs(&u, &mesh, &dm);
        let base = compute_errors_against(&mesh, &ops, &ui, &u, &gu);
        let c = 137.5;
        let scaled_u = move |p: Point2<f64>| c * u(p);
        let scaled_gu = move |p: Point2<f64>| c * gu(p);
        let scaled = compute_errors_against(&mesh, &ops, &(c * ui), &scaled_u, &scaled_gu);
        assert_abs_diff_eq!(base.e0, scaled.e0, epsilon = 1e-13 * base.e0);
        assert_abs_diff_eq!(base.e1, scaled.e1, epsilon = 1e-13 * base.e1);
    }

    #[test]
    fn fit_slope_is_exact_on_power_laws() {
        let data: Vec<(f64, f64)> =
            [0.25, 0.125, 0.0625].iter().map(|&h: &f64| (h, 3.7 * h * h)).collect();
        assert_abs_diff_eq!(fit_slope(&data), 2.0, epsilon = 1e-12);
        let flat: Vec<(f64, f64)> = [0.25, 0.125, 0.0625].iter().map(|&h| (h, 0.9)).collect();
        assert_abs_diff_eq!(fit_slope(&flat), 0.0, epsilon = 1e-12);
    }

    /// Slope of the reference first-order data set published for the plain
    /// finite element baseline (energy errors over five dyadic grids).
    #[test]
    fn fit_slope_on_reference_fem_column() {
        let hs = [1.25e-1, 6.25e-2, 3.125e-2, 1.5625e-2, 7.8125e-3];
        let e1 = [1.8095e-1, 1.1855e-1, 7.5812e-2, 5.2118e-2, 3.5581e-2];
        let data: Vec<(f64, f64)> = hs.iter().copied().zip(e1.iter().copied()).collect();
        let slope = fit_slope(&data);
        // least-squares value computed independently: 0.5879
        assert_abs_diff_eq!(slope, 0.5879, epsilon = 1.5e-3);
    }

    #[test]
    fn correlation_detects_exact_linear_relations() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(correlation(&xs, &ys), 1.0, epsilon = 1e-12);
        let yneg = [5.0, 4.0, 3.0, 2.0];
        assert_abs_diff_eq!(correlation(&xs, &yneg), -1.0, epsilon = 1e-12);
    }
}
