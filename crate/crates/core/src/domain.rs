//! The convex set `G = {phi > 0}`, its Euclidean projection, the penalty
//! vector `beta(x) = x - Pi(x)` and the penalization drift `F_n`.

use crate::error::{Error, Result};
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VecIntoFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct ConvexDomain {
    pub dim: usize,
    pub phi: ScalarFn,
    /// Inward normal `grad phi`, unit length on the boundary.
    pub grad_phi: VecIntoFn,
    pub project: VecIntoFn,
    /// Interior anchor point of the inequality `(x - c, beta(x)) >= gamma |beta(x)|`.
    pub anchor_c: Vec<f64>,
    pub anchor_gamma: f64,
    pub kind: DomainKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Custom,
}

impl ConvexDomain {
    #[inline]
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        (self.project)(x, out);
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.phi)(x) >= -1e-12
    }

    /// `beta(x) = x - Pi(x)`; zero on the closure of `G`.
    pub fn beta(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.project_into(x, &mut p);
        x.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    /// `F_n(x) = -2n beta(x)`.
    pub fn penalization_drift(&self, n: u32, x: &[f64]) -> Vec<f64> {
        assert!(n >= 1, "penalization index must be >= 1");
        self.beta(x)
            .into_iter()
            .map(|v| -2.0 * f64::from(n) * v)
            .collect()
    }
}

/// Half space `{ <normal, x> > offset }` with `normal` normalized
/// internally.
pub fn half_space(normal: &[f64], offset: f64) -> Result<ConvexDomain> {
    let dim = normal.len();
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::Config("half_space normal must be nonzero".into()));
    }
    let n: Vec<f64> = normal.iter().map(|v| v / norm).collect();
    let off = offset / norm;
    let n1 = n.clone();
    let n2 = n.clone();
    let n3 = n.clone();
    // Anchor one unit inside the boundary along the normal.
    let anchor_c: Vec<f64> = n.iter().map(|v| v * (off + 1.0)).collect();
    Ok(ConvexDomain {
        dim,
        phi: Arc::new(move |x: &[f64]| {
            x.iter().zip(&n1).map(|(a, b)| a * b).sum::<f64>() - off
        }),
        grad_phi: Arc::new(move |_x: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&n2);
        }),
        project: Arc::new(move |x: &[f64], out: &mut [f64]| {
            let phi = x.iter().zip(&n3).map(|(a, b)| a * b).sum::<f64>() - off;
            out.copy_from_slice(x);
            if phi < 0.0 {
                for (o, nv) in out.iter_mut().zip(&n3) {
                    *o -= phi * nv;
                }
            }
        }),
        anchor_c,
        anchor_gamma: 1.0,
        kind: DomainKind::HalfSpace {
            normal: n,
            offset: off,
        },
    })
}

/// Open ball of given center and radius. `phi(x) = r - |x - c|` away from
/// the center, blended to a smooth quadratic inside `|x - c| < r/2`; the
/// integrators only evaluate `phi` near the boundary.
pub fn ball(center: &[f64], radius: f64) -> Result<ConvexDomain> {
    if radius <= 0.0 {
        return Err(Error::Config("ball radius must be positive".into()));
    }
    let dim = center.len();
    let c1 = center.to_vec();
    let c2 = center.to_vec();
    let c3 = center.to_vec();
    let r = radius;
    Ok(ConvexDomain {
        dim,
        phi: Arc::new(move |x: &[f64]| {
            let d = dist(x, &c1);
            if d > r / 2.0 {
                r - d
            } else {
                r - (d * d / r + r / 4.0)
            }
        }),
        grad_phi: Arc::new(move |x: &[f64], out: &mut [f64]| {
            let d = dist(x, &c2).max(1e-300);
            let scale = if d > r / 2.0 { 1.0 / d } else { 2.0 / r };
            for (o, (xi, ci)) in out.iter_mut().zip(x.iter().zip(&c2)) {
                *o = -(xi - ci) * scale;
            }
        }),
        project: Arc::new(move |x: &[f64], out: &mut [f64]| {
            let d = dist(x, &c3);
            if d <= r {
                out.copy_from_slice(x);
            } else {
                for (o, (xi, ci)) in out.iter_mut().zip(x.iter().zip(&c3)) {
                    *o = ci + (xi - ci) * (r / d);
                }
            }
        }),
        anchor_c: center.to_vec(),
        anchor_gamma: radius.min(1.0),
        kind: DomainKind::Ball {
            center: center.to_vec(),
            radius,
        },
    })
}

/// Axis-aligned box `(lo, hi)`; projection is the per-coordinate clamp.
pub fn box_domain(lo: &[f64], hi: &[f64]) -> Result<ConvexDomain> {
    let dim = lo.len();
    if hi.len() != dim {
        return Err(Error::Config("box lo/hi dimension mismatch".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::Config("box requires lo < hi".into()));
    }
    let lo1 = lo.to_vec();
    let hi1 = hi.to_vec();
    let lo2 = lo.to_vec();
    let hi2 = hi.to_vec();
    let lo3 = lo.to_vec();
    let hi3 = hi.to_vec();
    let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half_width = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| 0.5 * (b - a))
        .fold(f64::MAX, f64::min);
    Ok(ConvexDomain {
        dim,
        phi: Arc::new(move |x: &[f64]| {
            x.iter()
                .zip(lo1.iter().zip(&hi1))
                .map(|(xi, (a, b))| (xi - a).min(b - xi))
                .fold(f64::MAX, f64::min)
        }),
        grad_phi: Arc::new(move |x: &[f64], out: &mut [f64]| {
            // Inward normal of the nearest face.
            let mut best = f64::MAX;
            let mut idx = 0;
            let mut sign = 1.0;
            for (i, (xi, (a, b))) in x.iter().zip(lo2.iter().zip(&hi2)).enumerate() {
                if xi - a < best {
                    best = xi - a;
                    idx = i;
                    sign = 1.0;
                }
                if b - xi < best {
                    best = b - xi;
                    idx = i;
                    sign = -1.0;
                }
            }
            out.fill(0.0);
            out[idx] = sign;
        }),
        project: Arc::new(move |x: &[f64], out: &mut [f64]| {
            for (o, (xi, (a, b))) in out.iter_mut().zip(x.iter().zip(lo3.iter().zip(&hi3))) {
                *o = xi.clamp(*a, *b);
            }
        }),
        anchor_c: center,
        anchor_gamma: half_width.min(1.0),
        kind: DomainKind::Box {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        },
    })
}

/// Surrogate for the whole space: projection is the identity, so the
/// penalization drift vanishes everywhere.
pub fn whole_space(dim: usize) -> ConvexDomain {
    ConvexDomain {
        dim,
        phi: Arc::new(|_x: &[f64]| 1.0),
        grad_phi: Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0)),
        project: Arc::new(|x: &[f64], out: &mut [f64]| out.copy_from_slice(x)),
        anchor_c: vec![0.0; dim],
        anchor_gamma: 1.0,
        kind: DomainKind::Custom,
    }
}

#[inline]
fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn half_space_beta() {
        let g = half_space(&[1.0, 0.0], 0.0).unwrap();
        assert_eq!(g.beta(&[-2.0, 3.0]), vec![-2.0, 0.0]);
        assert_eq!(g.beta(&[1.0, -4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn ball_beta_and_penalization() {
        let g = ball(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(g.beta(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(g.penalization_drift(4, &[2.0, 0.0]), vec![-8.0, 0.0]);
        assert_eq!(g.penalization_drift(9, &[0.3, 0.2]), vec![0.0, 0.0]);
    }

    #[test]
    fn half_space_penalization() {
        let g = half_space(&[1.0, 0.0], 0.0).unwrap();
        assert_eq!(g.penalization_drift(1, &[-0.5, 1.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn box_project_is_clamp() {
        let g = box_domain(&[-1.0], &[1.0]).unwrap();
        let mut out = [0.0];
        g.project_into(&[3.0], &mut out);
        assert_eq!(out, [1.0]);
        g.project_into(&[-0.2], &mut out);
        assert_eq!(out, [-0.2]);
    }

    #[test]
    fn degenerate_parameters_rejected() {
        assert!(ball(&[0.0], -1.0).is_err());
        assert!(box_domain(&[1.0], &[-1.0]).is_err());
        assert!(half_space(&[0.0, 0.0], 0.0).is_err());
    }

    fn sample_outside(rng: &mut Stream, dim: usize) -> Vec<f64> {
        rng.point_in_ball(dim, 8.0)
    }

    /// Sampled invariants shared by the built-in kinds.
    fn check_invariants(g: &ConvexDomain) {
        let mut rng = Stream::new(11, 0);
        let d = g.dim;
        let mut proj = vec![0.0; d];
        let mut proj2 = vec![0.0; d];
        for _ in 0..2000 {
            let x = sample_outside(&mut rng, d);
            let y = sample_outside(&mut rng, d);
            g.project_into(&x, &mut proj);
            // idempotent
            g.project_into(&proj, &mut proj2);
            for (a, b) in proj.iter().zip(&proj2) {
                assert!((a - b).abs() < 1e-12);
            }
            // interior fixed points
            if (g.phi)(&x) >= 0.0 {
                for (a, b) in x.iter().zip(&proj) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            // 1-Lipschitz
            let mut py = vec![0.0; d];
            g.project_into(&y, &mut py);
            assert!(dist(&proj, &py) <= dist(&x, &y) + 1e-12);
            // variational characterization: (x' - Pi(x), beta(x)) <= 0 for x' in G
            let b = g.beta(&x);
            let inner: f64 = (0..d).map(|i| (py[i] - proj[i]) * b[i]).sum();
            assert!(inner <= 1e-10, "variational inequality violated: {inner}");
            // monotone form: (x' - x, beta(x)) <= (beta(x'), beta(x))
            let by = g.beta(&y);
            let lhs: f64 = (0..d).map(|i| (y[i] - x[i]) * b[i]).sum();
            let rhs: f64 = (0..d).map(|i| by[i] * b[i]).sum();
            assert!(lhs <= rhs + 1e-10);
            // anchor inequality
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let anchor: f64 = (0..d).map(|i| (x[i] - g.anchor_c[i]) * b[i]).sum();
            assert!(anchor + 1e-10 >= g.anchor_gamma * bnorm);
            // F_n is 0-dissipative
            let fnx = g.penalization_drift(3, &x);
            let fny = g.penalization_drift(3, &y);
            let diss: f64 = (0..d).map(|i| (fnx[i] - fny[i]) * (x[i] - y[i])).sum();
            assert!(diss <= 1e-10);
        }
    }

    #[test]
    fn invariants_half_space() {
        check_invariants(&half_space(&[1.0, 0.5], 0.3).unwrap());
    }

    #[test]
    fn invariants_ball() {
        check_invariants(&ball(&[0.2, -0.1], 1.5).unwrap());
    }

    #[test]
    fn invariants_box() {
        check_invariants(&box_domain(&[-1.0, -2.0], &[1.0, 0.5]).unwrap());
    }

    #[test]
    fn unit_normal_on_ball_boundary() {
        let g = ball(&[0.0, 0.0], 2.0).unwrap();
        let mut n = [0.0, 0.0];
        let x = [2.0 * 0.6_f64, 2.0 * 0.8];
        (g.grad_phi)(&x, &mut n);
        let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        // points inward
        assert!(n[0] * x[0] + n[1] * x[1] < 0.0);
    }
}
