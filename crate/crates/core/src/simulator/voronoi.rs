//! Planar Voronoi cells by half-plane clipping, used to check the mean
//! cell integrals against direct geometry.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::Point;

fn clip(poly: &[Point], center: Point, other: Point) -> Vec<Point> {
    // keep x with (x - m)·(other - center) <= 0
    let n = [other[0] - center[0], other[1] - center[1]];
    let m = [0.5 * (center[0] + other[0]), 0.5 * (center[1] + other[1])];
    let side = |p: &Point| (p[0] - m[0]) * n[0] + (p[1] - m[1]) * n[1];
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (sa, sb) = (side(&a), side(&b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn polygon_area(poly: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s.abs()
}

/// Voronoi cell of `center` among `others`, clipped to a square of half-width
/// `bound` around it.
pub fn cell_polygon(center: Point, others: &[Point], bound: f64) -> Vec<Point> {
    let mut poly = vec![
        [center[0] - bound, center[1] - bound],
        [center[0] + bound, center[1] - bound],
        [center[0] + bound, center[1] + bound],
        [center[0] - bound, center[1] + bound],
    ];
    for &o in others {
        if o == center {
            continue;
        }
        poly = clip(&poly, center, o);
        if poly.is_empty() {
            break;
        }
    }
    poly
}

pub fn cell_area(center: Point, others: &[Point], bound: f64) -> f64 {
    polygon_area(&cell_polygon(center, others, bound))
}

fn annulus<R: Rng + ?Sized>(lambda: f64, r0: f64, r1: f64, rng: &mut R, out: &mut Vec<Point>) {
    let mean = lambda * std::f64::consts::PI * (r1 * r1 - r0 * r0);
    if mean <= 0.0 {
        return;
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    for _ in 0..n {
        let r = (r0 * r0 + rng.gen::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
        let t = rng.gen::<f64>() * std::f64::consts::TAU;
        out.push([r * t.cos(), r * t.sin()]);
    }
}

/// Area of the cell at the origin when the other points form a PPP of
/// intensity `lambda` with the disk of radius `void_r` centred at
/// `(0, -void_r)` removed. `void_r = 0` gives the typical cell.
pub fn conditioned_cell_area<R: Rng + ?Sized>(lambda: f64, void_r: f64, rng: &mut R) -> f64 {
    let void_c = [0.0, -void_r];
    let keep = |p: &Point| {
        let dx = p[0] - void_c[0];
        let dy = p[1] - void_c[1];
        dx * dx + dy * dy >= void_r * void_r
    };
    let mut radius = 4.0 / lambda.sqrt() + 2.0 * void_r;
    let mut pts = Vec::new();
    annulus(lambda, 0.0, radius, rng, &mut pts);
    pts.retain(keep);
    loop {
        let poly = cell_polygon([0.0, 0.0], &pts, radius);
        let reach = poly
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(0.0, f64::max);
        // points beyond twice the farthest vertex cannot cut the cell
        if 2.0 * reach <= radius {
            return polygon_area(&poly);
        }
        let next = 2.2 * reach;
        let start = pts.len();
        annulus(lambda, radius, next, rng, &mut pts);
        let mut extra: Vec<Point> = pts.drain(start..).filter(keep).collect();
        pts.append(&mut extra);
        radius = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_lattice_cell() {
        let others = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 1.0]];
        assert!((cell_area([0.0, 0.0], &others, 10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn typical_cell_mean_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let mean = (0..n).map(|_| conditioned_cell_area(1.0, 0.0, &mut rng)).sum::<f64>() / n as f64;
        // typical cell area has mean 1/λ and sd ≈ 0.53/λ
        assert!((mean - 1.0).abs() < 4.0 * 0.53 / (n as f64).sqrt(), "{mean}");
    }
}
