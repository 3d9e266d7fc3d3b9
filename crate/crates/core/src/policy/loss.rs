//! Imitation losses: waypoint regression plus heatmap penalties against
//! future vehicle occupancy and non-drivable area.

use serde::{Deserialize, Serialize};

use super::data::LabeledSample;
use super::raster::{rasterize, vehicle_mask, RasterConfig};
use super::WaypointPrediction;
use crate::dataset::TrafficLog;
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Heatmap standard deviation in cells.
    pub sigma_cells: f64,
    pub lambda_veh: f64,
    pub lambda_curb: f64,
    pub raster: RasterConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sigma_cells: 2.0,
            lambda_veh: 0.5,
            lambda_curb: 0.5,
            raster: RasterConfig::default(),
        }
    }
}

/// Sum of squared waypoint errors.
pub fn loss_pred(pred: &WaypointPrediction, target: &[Point2]) -> Result<f64> {
    if pred.offsets.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} waypoints, target {}",
            pred.offsets.len(),
            target.len()
        )));
    }
    Ok(pred.offsets.iter().zip(target).map(|(p, q)| (*p - *q).norm_sq()).sum())
}

/// Peak-one Gaussian centred on the cell containing `offset` (flat H*W).
pub fn heatmap(cfg: &RasterConfig, offset: Point2, sigma_cells: f64) -> Vec<f64> {
    let (r0, c0) = cfg.cell_of(offset);
    let inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    // the kernel is separable
    let rows: Vec<f64> = (0..cfg.height).map(|r| (-((r as i64 - r0) as f64).powi(2) * inv).exp()).collect();
    let cols: Vec<f64> = (0..cfg.width).map(|c| (-((c as i64 - c0) as f64).powi(2) * inv).exp()).collect();
    let mut out = Vec::with_capacity(cfg.height * cfg.width);
    for gr in &rows {
        out.extend(cols.iter().map(|gc| gr * gc));
    }
    out
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_mask(cfg: &RasterConfig, mask: &[f64]) -> Result<()> {
    if mask.len() != cfg.height * cfg.width {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} cells, grid {}x{}",
            mask.len(),
            cfg.height,
            cfg.width
        )));
    }
    Ok(())
}

/// Mean over waypoints of the heatmap overlap with the matching future
/// vehicle mask.
pub fn loss_veh(pred: &WaypointPrediction, veh_masks: &[Vec<f64>], cfg: &RasterConfig, sigma_cells: f64) -> Result<f64> {
    if veh_masks.len() != pred.offsets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vehicle masks for {} waypoints",
            veh_masks.len(),
            pred.offsets.len()
        )));
    }
    let mut total = 0.0;
    for (o, m) in pred.offsets.iter().zip(veh_masks) {
        check_mask(cfg, m)?;
        total += inner(&heatmap(cfg, *o, sigma_cells), m);
    }
    Ok(total / pred.offsets.len() as f64)
}

/// Mean over waypoints of the heatmap overlap with the curb mask.
pub fn loss_curb(pred: &WaypointPrediction, curb_mask: &[f64], cfg: &RasterConfig, sigma_cells: f64) -> Result<f64> {
    check_mask(cfg, curb_mask)?;
    let total: f64 = pred
        .offsets
        .iter()
        .map(|o| inner(&heatmap(cfg, *o, sigma_cells), curb_mask))
        .sum();
    Ok(total / pred.offsets.len() as f64)
}

pub fn loss_total(
    pred: &WaypointPrediction,
    target: &[Point2],
    veh_masks: &[Vec<f64>],
    curb_mask: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    let lp = loss_pred(pred, target)?;
    let lv = loss_veh(pred, veh_masks, &cfg.raster, cfg.sigma_cells)?;
    let lc = loss_curb(pred, curb_mask, &cfg.raster, cfg.sigma_cells)?;
    Ok(lp + cfg.lambda_veh * lv + cfg.lambda_curb * lc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub samples: usize,
    pub pred: f64,
    pub veh: f64,
    pub curb: f64,
    pub total: f64,
}

/// Mean losses of `preds` on samples that carry a scene context.
pub fn sample_losses(
    log: &TrafficLog,
    samples: &[&LabeledSample],
    preds: &[WaypointPrediction],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if samples.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!("{} samples, {} predictions", samples.len(), preds.len())));
    }
    let mut out = LossBreakdown::default();
    for (s, p) in samples.iter().zip(preds) {
        let ctx = s
            .context
            .as_ref()
            .ok_or_else(|| Error::Validation("loss evaluation needs samples with scene context".into()))?;
        let path = log
            .route_of(ctx.ego_track)
            .ok_or_else(|| Error::Validation(format!("track {} not in log", ctx.ego_track)))?;
        let grid = rasterize(log, &ctx.ego, path, Some(ctx.ego_track), &cfg.raster);
        let curb = grid.curb_mask();
        let masks: Vec<Vec<f64>> = (1..=p.offsets.len())
            .map(|i| vehicle_mask(log, &ctx.ego, ctx.ego.t + i as f64 * p.period, Some(ctx.ego_track), &cfg.raster))
            .collect();
        let lp = loss_pred(p, &s.targets)?;
        let lv = loss_veh(p, &masks, &cfg.raster, cfg.sigma_cells)?;
        let lc = loss_curb(p, &curb, &cfg.raster, cfg.sigma_cells)?;
        out.samples += 1;
        out.pred += lp;
        out.veh += lv;
        out.curb += lc;
    }
    if out.samples > 0 {
        let n = out.samples as f64;
        out.pred /= n;
        out.veh /= n;
        out.curb /= n;
    }
    out.total = out.pred + cfg.lambda_veh * out.veh + cfg.lambda_curb * out.curb;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> RasterConfig {
        RasterConfig { resolution: 0.5, height: 24, width: 20 }
    }

    fn pred(offsets: Vec<Point2>) -> WaypointPrediction {
        WaypointPrediction::new(offsets, 0.3).unwrap()
    }

    #[test]
    fn pred_loss_arithmetic() {
        let t = vec![Point2::new(0.0, 1.0), Point2::new(0.0, 2.0), Point2::new(0.5, 3.0)];
        assert_eq!(loss_pred(&pred(t.clone()), &t).unwrap(), 0.0);
        let shifted: Vec<Point2> = t.iter().map(|p| *p + Point2::new(1.0, 0.0)).collect();
        assert_eq!(loss_pred(&pred(shifted), &t).unwrap(), 3.0);
        assert!(loss_pred(&pred(t.clone()), &t[..2]).is_err());
    }

    /// Straightforward per-cell Gaussian over every (row, col).
    fn brute_overlap(cfg: &RasterConfig, o: Point2, sigma: f64, mask: &[f64]) -> f64 {
        let rc = (cfg.height / 2) as f64 - o.y / cfg.resolution;
        let cc = o.x / cfg.resolution + (cfg.width / 2) as f64;
        let (r0, c0) = (rc.round(), cc.round());
        let mut s = 0.0;
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
                s += (-d2 / (2.0 * sigma * sigma)).exp() * mask[r * cfg.width + c];
            }
        }
        s
    }

    #[test]
    fn losses_match_brute_force() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let offs: Vec<Point2> = (0..n).map(|_| Point2::new(rng.gen_range(-6.0..6.0), rng.gen_range(-7.0..7.0))).collect();
            let tgt: Vec<Point2> = (0..n).map(|_| Point2::new(rng.gen_range(-6.0..6.0), rng.gen_range(-7.0..7.0))).collect();
            let cells = cfg.height * cfg.width;
            let masks: Vec<Vec<f64>> = (0..n).map(|_| (0..cells).map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 }).collect()).collect();
            let curb: Vec<f64> = (0..cells).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let sigma = rng.gen_range(0.5..3.0);
            let p = pred(offs.clone());

            let mut lp = 0.0;
            for i in 0..n {
                lp += (offs[i].x - tgt[i].x).powi(2) + (offs[i].y - tgt[i].y).powi(2);
            }
            let lv = (0..n).map(|i| brute_overlap(&cfg, offs[i], sigma, &masks[i])).sum::<f64>() / n as f64;
            let lc = (0..n).map(|i| brute_overlap(&cfg, offs[i], sigma, &curb)).sum::<f64>() / n as f64;
            assert!((loss_pred(&p, &tgt).unwrap() - lp).abs() < 1e-9);
            assert!((loss_veh(&p, &masks, &cfg, sigma).unwrap() - lv).abs() < 1e-9);
            assert!((loss_curb(&p, &curb, &cfg, sigma).unwrap() - lc).abs() < 1e-9);
            let lcfg = LossConfig { sigma_cells: sigma, lambda_veh: 0.3, lambda_curb: 1.7, raster: cfg };
            let total = loss_total(&p, &tgt, &masks, &curb, &lcfg).unwrap();
            assert!((total - (lp + 0.3 * lv + 1.7 * lc)).abs() < 1e-9);
        }
    }

    #[test]
    fn heatmap_decay_and_peak() {
        let cfg = small();
        let cells = cfg.height * cfg.width;
        let mut mask = vec![0.0; cells];
        mask[0] = 1.0; // top-left corner
        let far = pred(vec![Point2::new(4.5, -5.5)]);
        assert!(loss_veh(&far, &[mask.clone()], &cfg, 2.0).unwrap() < 1e-4);
        let on = pred(vec![Point2::new(-5.0, 6.0)]);
        assert_eq!(cfg.cell_of(on.offsets[0]), (0, 0));
        assert!(loss_curb(&on, &mask, &cfg, 2.0).unwrap() >= 1.0);
        let zero = LossConfig { lambda_veh: 0.0, lambda_curb: 0.0, raster: cfg, ..LossConfig::default() };
        let t = vec![Point2::new(1.0, 1.0)];
        assert_eq!(loss_total(&on, &t, &[mask.clone()], &mask, &zero).unwrap(), loss_pred(&on, &t).unwrap());
    }

    #[test]
    fn monotone_toward_obstacle() {
        let cfg = small();
        let mut mask = vec![0.0; cfg.height * cfg.width];
        let (r, c) = (cfg.height / 2, cfg.width / 2 + 6);
        mask[r * cfg.width + c] = 1.0;
        let mut last = -1.0;
        for k in 0..=12 {
            let p = pred(vec![Point2::new(k as f64 * 0.25, 0.0)]);
            let v = loss_curb(&p, &mask, &cfg, 2.0).unwrap();
            assert!(v >= last);
            last = v;
        }
    }
}
