//! Trajectory refiners.
//!
//! [`blend_to_ego`] moves an on-path plan sideways so it starts at the ego's
//! actual position and eases back onto the path under a heading-deviation
//! bound. [`qp_smooth`] is the least-squares smoother applied to raw policy
//! waypoints before they are tracked.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EgoFrame, Point2, ReferencePath};
use crate::simulator::{EgoState, Trajectory, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Largest allowed angle between refined and rough travel directions (rad).
    pub max_heading_dev: f64,
    /// Offsets below this snap to zero (m).
    pub snap_tolerance: f64,
    pub fidelity_weight: f64,
    pub velocity_variation_weight: f64,
    pub curvature_variation_weight: f64,
    /// Include difference terms that touch the anchored start point.
    pub anchor_in_differences: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_heading_dev: 20f64.to_radians(),
            snap_tolerance: 0.01,
            fidelity_weight: 1.0,
            velocity_variation_weight: 5.0,
            curvature_variation_weight: 5.0,
            anchor_in_differences: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.max_heading_dev > 0.0 && self.max_heading_dev < half_pi) {
            return Err(Error::Validation(format!(
                "max heading deviation {} rad must lie in (0, pi/2)",
                self.max_heading_dev
            )));
        }
        if !(self.fidelity_weight > 0.0) {
            return Err(Error::Validation("fidelity weight must be positive".into()));
        }
        if self.velocity_variation_weight < 0.0 || self.curvature_variation_weight < 0.0 {
            return Err(Error::Validation("variation weights must be non-negative".into()));
        }
        if self.snap_tolerance < 0.0 {
            return Err(Error::Validation("snap tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unsigned angle between two directions, 0 when either is degenerate.
fn direction_gap(a: Point2, b: Point2) -> f64 {
    if a.norm() < 1e-12 || b.norm() < 1e-12 {
        return 0.0;
    }
    a.cross(b).atan2(a.dot(b)).abs()
}

fn waypoint_normals(wps: &[Waypoint]) -> Vec<Point2> {
    let n = wps.len();
    (0..n)
        .map(|k| {
            let heading = wps[k].heading.unwrap_or_else(|| {
                let (a, b) = if k + 1 < n { (k, k + 1) } else { (k.saturating_sub(1), k) };
                (wps[b].pos - wps[a].pos).angle()
            });
            Point2::from_angle(heading).perp()
        })
        .collect()
}

/// Shifts the rough trajectory along its normals so it starts at the ego and
/// returns to the path.
///
/// Each step shrinks the lateral offset by the largest factor that keeps the
/// refined travel direction within `max_heading_dev` of the rough one. Steps
/// where the rough trajectory stands still keep the offset unchanged.
pub fn blend_to_ego(
    rough: &Trajectory,
    ego: &EgoState,
    path: &ReferencePath,
    cfg: &RefineConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let d0 = path.project(ego.pos).lateral_offset;
    if d0 == 0.0 {
        return Ok(rough.clone());
    }
    let wps = rough.waypoints();
    let normals = waypoint_normals(wps);
    let mut out = Vec::with_capacity(wps.len());
    out.push(Waypoint {
        pos: ego.pos,
        ..wps[0]
    });
    let mut d = d0;
    for k in 0..wps.len() - 1 {
        let prev = out[k].pos;
        let rough_step = wps[k + 1].pos - wps[k].pos;
        let place = |dn: f64| wps[k + 1].pos + normals[k + 1] * dn;
        let ok = |dn: f64| direction_gap(rough_step, place(dn) - prev) <= cfg.max_heading_dev;
        let next = if d == 0.0 {
            0.0
        } else if rough_step.norm() <= 1e-6 {
            d
        } else if ok(0.0) {
            0.0
        } else if !ok(d) {
            return Err(Error::BlendInfeasible {
                offset: d0,
                reason: format!("even holding the offset violates the heading bound at step {k}"),
            });
        } else {
            // smallest surviving fraction rho in (0, 1] that keeps the bound
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ok(d * mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let dn = d * hi;
            if dn.abs() < cfg.snap_tolerance && ok(0.0) {
                0.0
            } else {
                dn
            }
        };
        d = next;
        out.push(Waypoint {
            pos: if d == 0.0 { wps[k + 1].pos } else { place(d) },
            ..wps[k + 1]
        });
    }
    if d != 0.0 {
        return Err(Error::BlendInfeasible {
            offset: d0,
            reason: format!("{:.3} m of offset left at the end of the trajectory", d),
        });
    }
    Trajectory::new(out)
}

/// Difference stencils over the anchored sequence `[p0, p1, .., pn]`.
fn difference_rows(n: usize, cfg: &RefineConfig) -> Vec<(f64, Vec<(usize, f64)>)> {
    let first = if cfg.anchor_in_differences { 0 } else { 1 };
    let mut rows = Vec::new();
    if cfg.velocity_variation_weight > 0.0 {
        for j in first..n.saturating_sub(1) {
            rows.push((cfg.velocity_variation_weight, vec![(j, 1.0), (j + 1, -2.0), (j + 2, 1.0)]));
        }
    }
    if cfg.curvature_variation_weight > 0.0 {
        for j in first..n.saturating_sub(2) {
            rows.push((
                cfg.curvature_variation_weight,
                vec![(j, -1.0), (j + 1, 3.0), (j + 2, -3.0), (j + 3, 1.0)],
            ));
        }
    }
    rows
}

/// Smoothing objective for free points `pts` (p1..pn) with anchor `p0`.
pub fn qp_objective(anchor: Point2, pts: &[Point2], targets: &[Point2], cfg: &RefineConfig) -> f64 {
    let n = pts.len();
    let at = |i: usize| if i == 0 { anchor } else { pts[i - 1] };
    let mut total = 0.0;
    for (p, q) in pts.iter().zip(targets) {
        total += cfg.fidelity_weight * (*p - *q).norm_sq();
    }
    for (w, row) in difference_rows(n, cfg) {
        let v = row
            .iter()
            .fold(Point2::ZERO, |acc, &(i, c)| acc + at(i) * c);
        total += w * v.norm_sq();
    }
    total
}

/// World-frame targets for ego-frame offsets.
pub fn offsets_to_world(offsets: &[Point2], ego: &EgoState) -> Vec<Point2> {
    let frame = EgoFrame::new(ego.pos, ego.heading);
    offsets.iter().map(|o| frame.to_world(*o)).collect()
}

/// Exact minimizer of the smoothing objective via its normal equations.
/// Returns the anchored trajectory `p0..pn` at `period` spacing.
pub fn qp_smooth(
    offsets: &[Point2],
    period: f64,
    current: &EgoState,
    cfg: &RefineConfig,
) -> Result<Trajectory> {
    let n = offsets.len();
    if n < 3 {
        return Err(Error::ShapeMismatch(format!(
            "smoothing needs at least 3 waypoints, got {n}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::Validation("waypoint period must be positive".into()));
    }
    let targets = offsets_to_world(offsets, current);
    let smoothed = solve_smoothing(current.pos, &targets, cfg);
    let mut wps = Vec::with_capacity(n + 1);
    wps.push(Waypoint {
        t: current.t,
        pos: current.pos,
        heading: None,
    });
    for (k, p) in smoothed.into_iter().enumerate() {
        wps.push(Waypoint {
            t: current.t + (k + 1) as f64 * period,
            pos: p,
            heading: None,
        });
    }
    Trajectory::new(wps)
}

/// Solves for p1..pn given anchor p0 and targets.
pub fn solve_smoothing(anchor: Point2, targets: &[Point2], cfg: &RefineConfig) -> Vec<Point2> {
    let n = targets.len();
    let mut h = DMatrix::<f64>::identity(n, n) * cfg.fidelity_weight;
    let mut bx = DVector::<f64>::from_iterator(n, targets.iter().map(|p| cfg.fidelity_weight * p.x));
    let mut by = DVector::<f64>::from_iterator(n, targets.iter().map(|p| cfg.fidelity_weight * p.y));
    for (w, row) in difference_rows(n, cfg) {
        let anchor_coef: f64 = row.iter().filter(|(i, _)| *i == 0).map(|(_, c)| c).sum();
        for &(i, ci) in row.iter().filter(|(i, _)| *i > 0) {
            for &(j, cj) in row.iter().filter(|(j, _)| *j > 0) {
                h[(i - 1, j - 1)] += w * ci * cj;
            }
            bx[i - 1] -= w * ci * anchor_coef * anchor.x;
            by[i - 1] -= w * ci * anchor_coef * anchor.y;
        }
    }
    let chol = h
        .cholesky()
        .expect("smoothing normal matrix is positive definite when the fidelity weight is positive");
    let x = chol.solve(&bx);
    let y = chol.solve(&by);
    (0..n).map(|i| Point2::new(x[i], y[i])).collect()
}
