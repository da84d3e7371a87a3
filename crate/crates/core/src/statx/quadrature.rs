//! Fixed-order Gauss-Legendre quadrature.

use crate::real::lit;
use num_traits::Float;
use std::sync::OnceLock;

pub const GL_NODES: usize = 256;

/// Nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

fn cached_nodes() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(GL_NODES))
}

/// `∫_lo^hi f` with the 256-node rule.
pub(crate) fn integrate<T: Float, F: Fn(T) -> T>(f: F, lo: T, hi: T) -> T {
    let half = (hi - lo) * lit(0.5);
    let mid = (hi + lo) * lit(0.5);
    cached_nodes().iter().fold(T::zero(), |acc, &(x, w)| {
        acc + lit::<T>(w) * f(mid + half * lit(x))
    }) * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_symmetric() {
        let nodes = gauss_legendre(GL_NODES);
        let total: f64 = nodes.iter().map(|&(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-13);
        for i in 0..GL_NODES {
            assert!((nodes[i].0 + nodes[GL_NODES - 1 - i].0).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_for_polynomials_and_accurate_for_exp() {
        let v: f64 = integrate(|x: f64| x.powi(7) - 3.0 * x * x, 0.0, 2.0);
        assert!((v - (256.0 / 8.0 - 8.0)).abs() < 1e-11);
        let e: f64 = integrate(|x: f64| (-x).exp(), 0.0, 10.0);
        assert!((e - (1.0 - (-10f64).exp())).abs() < 1e-14);
    }
}
