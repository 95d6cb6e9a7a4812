//! Planar point clouds and the SO(2) rotation action on them.

use std::f64::consts::TAU;

use rand::Rng;

pub type Point = [f64; 2];
pub type Cloud = Vec<Point>;

/// A rotation of the plane about the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    angle: f64,
}

impl GroupElement {
    pub fn new(angle: f64) -> Self {
        Self {
            angle: angle.rem_euclid(TAU),
        }
    }

    pub fn identity() -> Self {
        Self { angle: 0.0 }
    }

    /// Uniform (Haar) sample.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.random::<f64>() * TAU)
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &GroupElement) -> Self {
        Self::new(self.angle + other.angle)
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.angle)
    }

    pub fn apply_point(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    pub fn apply(&self, cloud: &[Point]) -> Cloud {
        let (s, c) = self.angle.sin_cos();
        cloud
            .iter()
            .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
            .collect()
    }
}

pub fn centroid(cloud: &[Point]) -> Point {
    let n = cloud.len().max(1) as f64;
    let (sx, sy) = cloud
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

pub fn centered(cloud: &[Point]) -> Cloud {
    let c = centroid(cloud);
    cloud.iter().map(|p| [p[0] - c[0], p[1] - c[1]]).collect()
}

pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Root-mean-square distance of the points to their centroid.
pub fn radius_of_gyration(cloud: &[Point]) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let c = centroid(cloud);
    let ms = cloud
        .iter()
        .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
        .sum::<f64>()
        / cloud.len() as f64;
    ms.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_cloud(seed: u64, n: usize) -> Cloud {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| [r.random::<f64>() * 4.0 - 2.0, r.random::<f64>() * 4.0 - 2.0])
            .collect()
    }

    #[test]
    fn action_preserves_distances() {
        let mut r = rng::seeded(3);
        for trial in 0..100 {
            let cloud = random_cloud(trial, 8);
            let g = GroupElement::random(&mut r);
            let moved = g.apply(&cloud);
            for i in 0..cloud.len() {
                for j in 0..cloud.len() {
                    let d0 = distance(cloud[i], cloud[j]);
                    let d1 = distance(moved[i], moved[j]);
                    assert!((d0 - d1).abs() <= 1e-12, "{d0} vs {d1}");
                }
            }
        }
    }

    #[test]
    fn action_composes() {
        let mut r = rng::seeded(4);
        for trial in 0..100 {
            let cloud = random_cloud(100 + trial, 6);
            let g1 = GroupElement::random(&mut r);
            let g2 = GroupElement::random(&mut r);
            let lhs = g1.apply(&g2.apply(&cloud));
            let rhs = g1.compose(&g2).apply(&cloud);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a[0] - b[0]).abs() <= 1e-12 && (a[1] - b[1]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn inverse_undoes_action() {
        let g = GroupElement::new(1.234);
        let cloud = random_cloud(9, 5);
        let back = g.inverse().apply(&g.apply(&cloud));
        for (a, b) in cloud.iter().zip(&back) {
            assert!(distance(*a, *b) < 1e-12);
        }
    }

    #[test]
    fn unit_square_radius_of_gyration() {
        let square = vec![[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]];
        assert!((radius_of_gyration(&square) - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn radius_of_gyration_is_invariant() {
        let mut r = rng::seeded(5);
        for trial in 0..50 {
            let cloud = random_cloud(200 + trial, 10);
            let g = GroupElement::random(&mut r);
            let a = radius_of_gyration(&cloud);
            let b = radius_of_gyration(&g.apply(&cloud));
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn angle_is_normalized() {
        assert!((GroupElement::new(-0.5).angle() - (TAU - 0.5)).abs() < 1e-15);
        assert!(GroupElement::new(TAU).angle() < 1e-15);
    }
}
