//! One-dimensional maximizers used by the leader-side searches.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Best point seen by a search and its objective value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
}

impl Maximum {
    fn offer(&mut self, x: f64, value: f64) {
        if value > self.value {
            *self = Maximum { x, value };
        }
    }
}

/// Golden-section search for the maximum of a unimodal function on
/// `[lo, hi]`, stopping once the bracket is narrower than `tol`.
///
/// The best evaluated point is returned, so a jump inside the bracket can
/// never make the result worse than any probe.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Maximum {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = Maximum { x: c, value: fc };
    best.offer(d, fd);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            best.offer(c, fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            best.offer(d, fd);
        }
    }
    let mid = 0.5 * (a + b);
    best.offer(mid, f(mid));
    best
}

/// Uniform grid scan followed by golden-section refinement inside the cells
/// adjacent to the best grid point. Ties keep the lowest abscissa.
pub fn grid_golden_max(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    grid_points: usize,
    tol: f64,
) -> Maximum {
    assert!(grid_points >= 2 && hi > lo);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let at = |i: usize| {
        if i + 1 == grid_points {
            hi
        } else {
            lo + step * i as f64
        }
    };
    let mut best_i = 0;
    let mut best = Maximum {
        x: lo,
        value: f(lo),
    };
    for i in 1..grid_points {
        let x = at(i);
        let v = f(x);
        if v > best.value {
            best = Maximum { x, value: v };
            best_i = i;
        }
    }
    let a = at(best_i.saturating_sub(1));
    let b = at((best_i + 1).min(grid_points - 1));
    let refined = golden_section_max(&f, a, b, tol);
    if refined.value > best.value {
        refined
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let m = golden_section_max(|x| -(x - 1.3) * (x - 1.3), -5.0, 5.0, 1e-10);
        assert!((m.x - 1.3).abs() < 1e-8);
    }

    #[test]
    fn golden_handles_boundary_maximum() {
        let m = golden_section_max(|x| x, 0.0, 2.0, 1e-10);
        assert!((m.x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn grid_golden_escapes_flat_region_with_jump() {
        // Flat below 3, jump up, then concave with peak at 5.
        let f = |x: f64| {
            if x < 3.0 {
                0.0
            } else {
                10.0 - (x - 5.0).powi(2)
            }
        };
        let m = grid_golden_max(f, 0.0, 10.0, 40, 1e-10);
        assert!((m.x - 5.0).abs() < 1e-6);
    }

    #[test]
    fn grid_golden_prefers_lowest_point_on_plateau() {
        let m = grid_golden_max(|_| 1.0, 0.5, 9.0, 20, 1e-10);
        assert_eq!(m.x, 0.5);
    }
}
