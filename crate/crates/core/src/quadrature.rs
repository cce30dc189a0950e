//! Gauss–Legendre and Gauss–Lobatto rules on [-1, 1], plus helpers for
//! segments and pixel (tensor) quadrature.

use nalgebra::{Point2, Vector2};

/// Evaluates the Legendre polynomial `P_n` and its derivative at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for j in 2..=n {
        let pj = ((2 * j - 1) as f64 * x * p - (j - 1) as f64 * p_prev) / j as f64;
        p_prev = p;
        p = pj;
    }
    // (1 - x^2) P_n'(x) = n (P_{n-1}(x) - x P_n(x))
    let dp = n as f64 * (p_prev - x * p) / (1.0 - x * x);
    (p, dp)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Exact for polynomials of degree up to `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, refined by Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Nodes and weights of the `n`-point Gauss–Lobatto rule on [-1, 1]
/// (endpoints included, `n >= 2`). Exact up to degree `2n - 3`.
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "Lobatto rule needs at least the two endpoints");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    let m = n - 1;
    // Interior nodes are the roots of P'_{n-1}.
    for i in 1..m {
        let mut x = (std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            // Newton on f = P'_m, using f' from the Legendre ODE:
            // (1-x^2) P''_m = 2x P'_m - m(m+1) P_m.
            let (p, dp) = legendre_with_derivative(m, x);
            let ddp = (2.0 * x * dp - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[m - i] = x;
    }
    for i in 0..n {
        let (p, _) = legendre_with_derivative(m, nodes[i]);
        weights[i] = 2.0 / ((m * n) as f64 * p * p);
    }
    (nodes, weights)
}

/// A quadrature rule over a straight segment in the plane.
pub struct SegmentRule {
    pub points: Vec<Point2<f64>>,
    /// Weights already scaled by the segment length.
    pub weights: Vec<f64>,
}

/// `n`-point Gauss rule along the segment from `a` to `b`.
pub fn segment_rule(a: Point2<f64>, b: Point2<f64>, n: usize) -> SegmentRule {
    let (nodes, weights) = gauss_legendre(n);
    let mid = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
    let half: Vector2<f64> = 0.5 * (b - a);
    let len = (b - a).norm();
    SegmentRule {
        points: nodes.iter().map(|&t| mid + half * t).collect(),
        weights: weights.iter().map(|&w| 0.5 * len * w).collect(),
    }
}

/// Tensor Gauss rule over an axis-aligned rectangle `[x0, x0+dx] x [y0, y0+dy]`
/// with `n` points per axis.
pub struct TensorRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
}

pub fn tensor_rule(x0: f64, y0: f64, dx: f64, dy: f64, n: usize) -> TensorRule {
    let (nodes, weights) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut w = Vec::with_capacity(n * n);
    for (i, &xi) in nodes.iter().enumerate() {
        let x = x0 + 0.5 * dx * (1.0 + xi);
        for (j, &eta) in nodes.iter().enumerate() {
            let y = y0 + 0.5 * dy * (1.0 + eta);
            points.push(Point2::new(x, y));
            w.push(0.25 * dx * dy * weights[i] * weights[j]);
        }
    }
    TensorRule { points, weights: w }
}

/// Values of the Lagrange basis on the given 1D nodes, evaluated at `t`.
pub fn lagrange_values(nodes: &[f64], t: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut vals = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                vals[i] *= (t - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
    }
    vals
}

/// Derivative values of the Lagrange basis on `nodes` at `t`.
pub fn lagrange_derivatives(nodes: &[f64], t: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut ders = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for m in 0..n {
            if m == i {
                continue;
            }
            let mut prod = 1.0 / (nodes[i] - nodes[m]);
            for j in 0..n {
                if j != i && j != m {
                    prod *= (t - nodes[j]) / (nodes[i] - nodes[j]);
                }
            }
            sum += prod;
        }
        ders[i] = sum;
    }
    ders
}
