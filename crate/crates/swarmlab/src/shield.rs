//! Evaluation-time hard-safety layer.
//!
//! Each obstacle (or drone pair) induces a barrier `h = ||p - p_o||^2 - R^2`
//! over the subject drone's position. Requiring `dh/dt >= -gamma * h` with a
//! linear class-K slope `gamma` (taken from the corresponding CBF parameter)
//! gives an affine constraint on the commanded velocity:
//!
//! `2 (p - p_o) . (v - v_o) >= -gamma h`, i.e. `a . v >= b` with
//! `a = 2 (p - p_o)` and `b = -gamma h + 2 (p - p_o) . v_o`.
//!
//! [`project_velocity`] returns the minimum-Euclidean-deviation velocity
//! satisfying all such halfspaces, via cyclic projection with Dykstra
//! correction terms (exact closed form for a single violated constraint).
//! The shield is off during training and optional at evaluation; it exists
//! to measure the gap between learned-soft and enforced-hard safety.

use crate::error::{Error, Result};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};

const MAX_SWEEPS: usize = 100;
const TOLERANCE: f64 = 1e-9;

/// One affine velocity constraint `a . v >= b` derived from a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstraint {
    /// Barrier value `||p - p_o||^2 - R^2` (m^2); negative means inside the
    /// protected sphere.
    pub barrier: f64,
    /// Constraint gradient `a = 2 (p - p_o)`.
    pub gradient: Vec3,
    /// Class-K slope `gamma >= 0`.
    pub slope: f64,
    /// Right-hand side `b = -gamma h + a . v_o`.
    pub offset: f64,
}

impl BarrierConstraint {
    pub fn satisfied_by(&self, v: Vec3, tol: f64) -> bool {
        self.gradient.dot(v) >= self.offset - tol
    }
}

/// Build the barrier constraint for one protected sphere of radius `r_safe`
/// around a (possibly moving) point `p_o`.
pub fn barrier_eval(p: Vec3, p_o: Vec3, v_o: Vec3, r_safe: f64, slope: f64) -> Result<BarrierConstraint> {
    if !(r_safe > 0.0) {
        return Err(Error::argument(format!(
            "barrier radius must be > 0, got {r_safe}"
        )));
    }
    if slope < 0.0 {
        return Err(Error::argument(format!(
            "class-K slope must be >= 0, got {slope}"
        )));
    }
    let rel = p - p_o;
    if rel.norm_sq() <= 1e-24 {
        return Err(Error::argument(
            "degenerate barrier gradient: drone is at the obstacle center".to_string(),
        ));
    }
    let barrier = rel.norm_sq() - r_safe * r_safe;
    let gradient = rel * 2.0;
    let offset = -slope * barrier + gradient.dot(v_o);
    Ok(BarrierConstraint {
        barrier,
        gradient,
        slope,
        offset,
    })
}

/// Result of projecting a commanded velocity onto the safe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub velocity: Vec3,
    /// All constraints satisfied within tolerance at exit.
    pub feasible: bool,
    /// The projection moved the command (an intervention).
    pub intervened: bool,
    /// Constraints skipped for having a (near-)zero gradient.
    pub skipped: usize,
    pub sweeps: usize,
}

/// Minimum-deviation projection of `v_cmd` onto the intersection of the
/// constraint halfspaces.
///
/// Single violated constraint: exact closed form
/// `v + a (b - a.v) / ||a||^2`. Multiple constraints: cyclic projection with
/// Dykstra correction terms, up to 100 sweeps at 1e-9 tolerance. If the set
/// is infeasible the best iterate is returned with `feasible = false`.
pub fn project_velocity(v_cmd: Vec3, constraints: &[BarrierConstraint]) -> Projection {
    let mut active: Vec<&BarrierConstraint> = Vec::with_capacity(constraints.len());
    let mut skipped = 0;
    for c in constraints {
        if c.gradient.norm_sq() <= 1e-24 {
            skipped += 1;
        } else {
            active.push(c);
        }
    }

    let all_satisfied =
        |v: Vec3| active.iter().all(|c| c.satisfied_by(v, TOLERANCE));

    if all_satisfied(v_cmd) {
        return Projection {
            velocity: v_cmd,
            feasible: true,
            intervened: false,
            skipped,
            sweeps: 0,
        };
    }

    let mut v = v_cmd;
    let mut corrections = vec![Vec3::ZERO; active.len()];
    let mut sweeps = 0;
    for sweep in 1..=MAX_SWEEPS {
        sweeps = sweep;
        let before = v;
        for (c, corr) in active.iter().zip(corrections.iter_mut()) {
            let y = v + *corr;
            let projected = project_halfspace(y, c);
            *corr = y - projected;
            v = projected;
        }
        if (v - before).norm() < TOLERANCE && all_satisfied(v) {
            break;
        }
    }

    Projection {
        velocity: v,
        feasible: all_satisfied(v),
        intervened: (v - v_cmd).norm() > TOLERANCE,
        skipped,
        sweeps,
    }
}

fn project_halfspace(y: Vec3, c: &BarrierConstraint) -> Vec3 {
    let a = c.gradient;
    let slack = a.dot(y) - c.offset;
    if slack >= 0.0 {
        y
    } else {
        y + a * (-slack / a.norm_sq())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn barrier_plug_in_example() {
        let c = barrier_eval(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::ZERO,
            Vec3::ZERO,
            0.5,
            1.0,
        )
        .unwrap();
        assert!((c.barrier - 0.75).abs() < 1e-15);
        assert_eq!(c.gradient, Vec3::new(2.0, 0.0, 0.0));
        assert!((c.offset - (-0.75)).abs() < 1e-15);
    }

    #[test]
    fn moving_away_is_always_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0), 0.0);
            let slope = rng.gen_range(0.0..5.0);
            let c = barrier_eval(p, Vec3::ZERO, Vec3::ZERO, 0.3, slope).unwrap();
            // velocity along +gradient direction
            let v = c.gradient.normalized().unwrap() * rng.gen_range(0.0..2.0);
            assert!(c.satisfied_by(v, 0.0) || c.barrier < 0.0);
        }
    }

    #[test]
    fn barrier_rate_matches_finite_difference() {
        // dh/dt along a trajectory equals a.v - 2(p - p_o).v_o.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let p_o = Vec3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
            );
            if (p - p_o).norm() < 0.3 {
                continue;
            }
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let v_o = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let c = barrier_eval(p, p_o, v_o, 0.25, 1.0).unwrap();

            let h = |pd: Vec3, po: Vec3| (pd - po).norm_sq() - 0.25 * 0.25;
            let eps = 1e-6;
            let h_plus = h(p + v * eps, p_o + v_o * eps);
            let h_minus = h(p - v * eps, p_o - v_o * eps);
            let dh_fd = (h_plus - h_minus) / (2.0 * eps);
            let dh_analytic = c.gradient.dot(v) - (p - p_o).dot(v_o) * 2.0;
            assert!(
                (dh_fd - dh_analytic).abs() < 1e-6,
                "{dh_fd} vs {dh_analytic}"
            );
        }
    }

    #[test]
    fn degenerate_gradient_is_error() {
        let err = barrier_eval(Vec3::ZERO, Vec3::ZERO, Vec3::ZERO, 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn interior_point_passes_through_exactly() {
        let c = barrier_eval(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO, 0.5, 1.0).unwrap();
        let v = Vec3::new(0.5, 0.3, -0.1);
        let proj = project_velocity(v, &[c]);
        assert_eq!(proj.velocity, v);
        assert!(!proj.intervened);
        assert!(proj.feasible);
    }

    #[test]
    fn worked_single_constraint_example() {
        // p=(1,0,0), obstacle at origin, r_safe=0.5, gamma=1, v_cmd=(-2,0,0):
        // h=0.75, a=(2,0,0), b=-0.75; a.v=-4 < b -> v_safe=(-0.375,0,0).
        let c = barrier_eval(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO, 0.5, 1.0).unwrap();
        let proj = project_velocity(Vec3::new(-2.0, 0.0, 0.0), &[c]);
        assert!((proj.velocity - Vec3::new(-0.375, 0.0, 0.0)).norm() < 1e-12);
        // re-substitution: constraint active with equality
        assert!((c.gradient.dot(proj.velocity) - c.offset).abs() < 1e-12);
        assert!(proj.intervened);
        assert!(proj.feasible);
    }

    #[test]
    fn single_constraint_minimality_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            if p.norm() < 0.1 {
                continue;
            }
            let c = barrier_eval(p, Vec3::ZERO, Vec3::ZERO, 0.4, rng.gen_range(0.0..3.0)).unwrap();
            let v = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let proj = project_velocity(v, &[c]);
            let expect = (c.offset - c.gradient.dot(v)).max(0.0) / c.gradient.norm();
            assert!(
                ((proj.velocity - v).norm() - expect).abs() < 1e-12,
                "deviation {} vs {}",
                (proj.velocity - v).norm(),
                expect
            );
        }
    }

    #[test]
    fn idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let constraints: Vec<BarrierConstraint> = (0..3)
                .filter_map(|_| {
                    let p = Vec3::new(
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                    );
                    if p.norm() < 0.2 {
                        return None;
                    }
                    barrier_eval(p, Vec3::ZERO, Vec3::ZERO, 0.3, rng.gen_range(0.0..2.0)).ok()
                })
                .collect();
            let v = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let once = project_velocity(v, &constraints);
            if !once.feasible {
                continue;
            }
            let twice = project_velocity(once.velocity, &constraints);
            assert!((twice.velocity - once.velocity).norm() < 1e-9);
            assert!(!twice.intervened);
        }
    }

    #[test]
    fn increasing_slope_never_shrinks_feasible_set() {
        // With h > 0, larger gamma lowers b, so any velocity feasible at the
        // smaller slope stays feasible at the larger one.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let p = Vec3::new(rng.gen_range(0.6..2.0), rng.gen_range(-1.0..1.0), 0.0);
            let g1 = rng.gen_range(0.0..2.0);
            let g2 = g1 + rng.gen_range(0.0..2.0);
            let c1 = barrier_eval(p, Vec3::ZERO, Vec3::ZERO, 0.5, g1).unwrap();
            let c2 = barrier_eval(p, Vec3::ZERO, Vec3::ZERO, 0.5, g2).unwrap();
            assert!(c1.barrier > 0.0);
            assert!(c2.offset <= c1.offset + 1e-15);
            let v = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            if c1.satisfied_by(v, 0.0) {
                assert!(c2.satisfied_by(v, 1e-12));
            }
        }
    }

    #[test]
    fn zero_gradient_constraints_are_skipped() {
        let degenerate = BarrierConstraint {
            barrier: 0.1,
            gradient: Vec3::ZERO,
            slope: 1.0,
            offset: 5.0,
        };
        let proj = project_velocity(Vec3::new(1.0, 0.0, 0.0), &[degenerate]);
        assert_eq!(proj.skipped, 1);
        assert_eq!(proj.velocity, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn two_constraint_projection_beats_grid_search() {
        // Feasible 2-constraint cases: the projection satisfies both within
        // 1e-9 and deviates no more than the best grid-search point + 1e-3.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tested = 0;
        while tested < 50 {
            let p1 = Vec3::new(rng.gen_range(0.4..1.5), rng.gen_range(-1.0..1.0), 0.0);
            let p2 = Vec3::new(rng.gen_range(-1.5..-0.4), rng.gen_range(-1.0..1.0), 0.2);
            let c1 = barrier_eval(p1, Vec3::ZERO, Vec3::ZERO, 0.3, rng.gen_range(0.1..1.5)).unwrap();
            let c2 = barrier_eval(p2, Vec3::ZERO, Vec3::ZERO, 0.3, rng.gen_range(0.1..1.5)).unwrap();
            let v = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.0..1.0),
            );
            let proj = project_velocity(v, &[c1, c2]);
            if !proj.feasible {
                continue;
            }
            tested += 1;
            assert!(c1.satisfied_by(proj.velocity, 1e-9));
            assert!(c2.satisfied_by(proj.velocity, 1e-9));

            // dense grid search around the neighborhood of v
            let mut best = f64::INFINITY;
            let span = (proj.velocity - v).norm() + 0.5;
            let steps = 24;
            for ix in 0..=steps {
                for iy in 0..=steps {
                    for iz in 0..=steps {
                        let cand = v + Vec3::new(
                            (ix as f64 / steps as f64 - 0.5) * 2.0 * span,
                            (iy as f64 / steps as f64 - 0.5) * 2.0 * span,
                            (iz as f64 / steps as f64 - 0.5) * 2.0 * span,
                        );
                        if c1.satisfied_by(cand, 0.0) && c2.satisfied_by(cand, 0.0) {
                            best = best.min((cand - v).norm());
                        }
                    }
                }
            }
            assert!(
                (proj.velocity - v).norm() <= best + 1e-3,
                "projection {} worse than grid {best}",
                (proj.velocity - v).norm()
            );
        }
    }
}
