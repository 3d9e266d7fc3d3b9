//! Ego-centric birdeye grids.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{TrackId, TrafficLog};
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, EgoFrame, Point2, ReferencePath};
use crate::simulator::EgoState;

pub const CHANNELS: [&str; 5] = ["road_mask", "vehicle_mask", "velocity_x", "velocity_y", "reference_path_mask"];
const ROAD: usize = 0;
const VEHICLE: usize = 1;
const VEL_X: usize = 2;
const VEL_Y: usize = 3;
const REF_PATH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    /// Metres per cell.
    pub resolution: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            resolution: 0.5,
            height: 128,
            width: 128,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || self.height == 0 || self.width == 0 {
            return Err(Error::Validation(format!(
                "raster needs positive resolution and size, got {} m x {}x{}",
                self.resolution, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Ego-frame position of a cell centre.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            (col as f64 - (self.width / 2) as f64) * self.resolution,
            ((self.height / 2) as f64 - row as f64) * self.resolution,
        )
    }

    /// Fractional (row, col) of an ego-frame point.
    #[inline]
    pub fn cell_coords(&self, p: Point2) -> (f64, f64) {
        (
            (self.height / 2) as f64 - p.y / self.resolution,
            p.x / self.resolution + (self.width / 2) as f64,
        )
    }

    /// Nearest cell indices, possibly outside the grid.
    #[inline]
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        let (r, c) = self.cell_coords(p);
        (r.round() as i64, c.round() as i64)
    }

    /// Inclusive cell ranges whose centres may fall inside an ego-frame box.
    fn cell_range(&self, lo: Point2, hi: Point2) -> Option<(usize, usize, usize, usize)> {
        let (r_hi, c_lo) = self.cell_coords(lo);
        let (r_lo, c_hi) = self.cell_coords(hi);
        let r0 = r_lo.floor().max(0.0);
        let r1 = r_hi.ceil().min(self.height as f64 - 1.0);
        let c0 = c_lo.floor().max(0.0);
        let c1 = c_hi.ceil().min(self.width as f64 - 1.0);
        (r0 <= r1 && c0 <= c1).then_some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }
}

/// H x W x C grid in row-major, channel-last order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub cfg: RasterConfig,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(cfg: RasterConfig, channels: usize) -> Self {
        Self {
            cfg,
            channels,
            data: vec![0.0; cfg.height * cfg.width * channels],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.cfg.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.cfg.width + col) * self.channels + ch] = v;
    }

    /// One channel as a flat H*W vector.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.iter().skip(ch).step_by(self.channels).copied().collect()
    }

    pub fn road_mask(&self) -> Vec<f64> {
        self.channel(ROAD)
    }

    pub fn vehicle_mask(&self) -> Vec<f64> {
        self.channel(VEHICLE)
    }

    /// Non-drivable cells.
    pub fn curb_mask(&self) -> Vec<f64> {
        self.road_mask().into_iter().map(|v| 1.0 - v).collect()
    }
}

/// Writes `H, W, C` as little-endian u64 followed by the f64 data.
pub fn write_grid<W: Write>(mut w: W, grid: &Grid) -> Result<()> {
    for d in [grid.cfg.height, grid.cfg.width, grid.channels] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in &grid.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn paint_vehicles(grid: &mut Grid, log: &TrafficLog, frame: &EgoFrame, t: f64, exclude: Option<TrackId>, with_velocity: bool) {
    let cfg = grid.cfg;
    for (tr, st) in log.vehicles_at(t, exclude) {
        let fp = tr.footprint(&st);
        let corners = fp.corners().map(|c| frame.to_local(c));
        let lo = corners.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, c| Point2::new(a.x.min(c.x), a.y.min(c.y)));
        let hi = corners.iter().fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, c| Point2::new(a.x.max(c.x), a.y.max(c.y)));
        let Some((r0, r1, c0, c1)) = cfg.cell_range(lo, hi) else { continue };
        let v = frame.vec_to_local(st.vel);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if fp.contains(frame.to_world(cfg.cell_center(r, c))) {
                    grid.set(r, c, VEHICLE, 1.0);
                    if with_velocity {
                        grid.set(r, c, VEL_X, v.x);
                        grid.set(r, c, VEL_Y, v.y);
                    }
                }
            }
        }
    }
}

/// Marks cells whose centre lies within `radius` of the polyline.
fn paint_polyline(grid: &mut Grid, ch: usize, pts: &[Point2], frame: &EgoFrame, radius: f64) {
    let cfg = grid.cfg;
    for w in pts.windows(2) {
        let (a, b) = (frame.to_local(w[0]), frame.to_local(w[1]));
        let lo = Point2::new(a.x.min(b.x) - radius, a.y.min(b.y) - radius);
        let hi = Point2::new(a.x.max(b.x) + radius, a.y.max(b.y) + radius);
        let Some((r0, r1, c0, c1)) = cfg.cell_range(lo, hi) else { continue };
        for r in r0..=r1 {
            for c in c0..=c1 {
                if point_segment_distance(cfg.cell_center(r, c), a, b) <= radius {
                    grid.set(r, c, ch, 1.0);
                }
            }
        }
    }
}

/// Marks every cell a polyline passes through, sampling finer than a cell.
fn trace_walls(walls: &mut [bool], cfg: &RasterConfig, pts: &[Point2], frame: &EgoFrame) {
    for w in pts.windows(2) {
        let (a, b) = (frame.to_local(w[0]), frame.to_local(w[1]));
        let steps = ((a.distance(b) / (0.25 * cfg.resolution)).ceil() as usize).max(1);
        for k in 0..=steps {
            let (r, c) = cfg.cell_of(a.lerp(b, k as f64 / steps as f64));
            if r >= 0 && c >= 0 && (r as usize) < cfg.height && (c as usize) < cfg.width {
                walls[r as usize * cfg.width + c as usize] = true;
            }
        }
    }
}

/// Drivable cells: flood fill from reference-path cells, blocked by curbs.
fn road_mask(cfg: &RasterConfig, log: &TrafficLog, frame: &EgoFrame) -> Vec<bool> {
    let (h, w) = (cfg.height, cfg.width);
    let mut walls = vec![false; h * w];
    for curb in log.curbs() {
        trace_walls(&mut walls, cfg, curb, frame);
    }
    let mut seeds = Grid::zeros(*cfg, 1);
    for p in log.reference_paths() {
        paint_polyline(&mut seeds, 0, p.points(), frame, 0.5 * cfg.resolution);
    }
    let mut road = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, v) in seeds.data.iter().enumerate() {
        if *v > 0.0 && !walls[i] {
            road[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let mut visit = |j: usize| {
            if !road[j] && !walls[j] {
                road[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
    }
    road
}

/// Birdeye grid around the ego at `ego.t` with channels [`CHANNELS`].
pub fn rasterize(
    log: &TrafficLog,
    ego: &EgoState,
    path: &ReferencePath,
    exclude: Option<TrackId>,
    cfg: &RasterConfig,
) -> Grid {
    let frame = EgoFrame::new(ego.pos, ego.heading);
    let mut grid = Grid::zeros(*cfg, CHANNELS.len());
    for (i, on) in road_mask(cfg, log, &frame).into_iter().enumerate() {
        if on {
            grid.data[i * CHANNELS.len() + ROAD] = 1.0;
        }
    }
    paint_vehicles(&mut grid, log, &frame, ego.t, exclude, true);
    paint_polyline(&mut grid, REF_PATH, path.points(), &frame, cfg.resolution);
    grid
}

/// Vehicle occupancy at time `t` in the frame of `ego` (flat H*W).
pub fn vehicle_mask(log: &TrafficLog, ego: &EgoState, t: f64, exclude: Option<TrackId>, cfg: &RasterConfig) -> Vec<f64> {
    let frame = EgoFrame::new(ego.pos, ego.heading);
    let mut grid = Grid::zeros(*cfg, CHANNELS.len());
    paint_vehicles(&mut grid, log, &frame, t, exclude, false);
    grid.vehicle_mask()
}
