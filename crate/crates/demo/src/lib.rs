//! Browser demo. Every entry point takes the same experiment JSON the CLI
//! reads and returns a JSON string; the `*_json` functions hold the logic so
//! they can be tested natively.

use mamimo::channel::{AntennaLayout, SystemConfig, UserStats};
use mamimo::ergodic::{mrt_ergodic_approx, zf_ergodic_lower_bound};
use mamimo::experiments::{place, place_all, ExperimentConfig, Scenario, Scheme};
use mamimo::Point;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type DemoResult = Result<String, String>;

fn first_point(config: &str) -> Result<(Scenario, SystemConfig, Vec<UserStats>), String> {
    let scenario = ExperimentConfig::from_json(config)
        .and_then(|c| Scenario::from_config(&c))
        .map_err(|e| e.to_string())?;
    let point = scenario.points().map_err(|e| e.to_string())?.swap_remove(0);
    Ok((scenario, point.cfg, point.users))
}

fn movable(name: &str) -> Result<Scheme, String> {
    match name {
        "ma_zf" => Ok(Scheme::MaZf),
        "ma_mrt" => Ok(Scheme::MaMrt),
        other => Err(format!("unknown movable scheme {other:?}")),
    }
}

/// Closed-form sum rate the optimizer for `scheme` works with.
fn closed_form(scheme: Scheme, layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig) -> Result<f64, String> {
    match scheme {
        Scheme::MaZf | Scheme::FpaZf => zf_ergodic_lower_bound(layout, users, cfg).map(|r| r.sum).map_err(|e| e.to_string()),
        _ => Ok(mrt_ergodic_approx(layout, users, cfg).sum),
    }
}

fn points_json(points: &[Point]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

/// Optimizes both movable schemes from the FPA grid.
pub fn optimize_json(config: &str) -> DemoResult {
    let (scenario, cfg, users) = first_point(config)?;
    let grid = AntennaLayout::fpa_grid(&cfg).map_err(|e| e.to_string())?;
    let mut schemes = Vec::new();
    for scheme in [Scheme::MaZf, Scheme::MaMrt] {
        let placed = place(scheme, &cfg, &users, &scenario.optimizer).map_err(|e| e.to_string())?;
        let trace = placed.trace.expect("movable schemes carry a trace");
        let mut objectives = vec![trace.initial_objective];
        objectives.extend(&trace.sweep_objectives);
        schemes.push(json!({
            "scheme": scheme.name(),
            "layout": points_json(placed.layout.positions()),
            "objectives": objectives,
            "converged": trace.converged,
        }));
    }
    let directions: Vec<Value> = users.iter().map(|u| json!([u.direction().x, u.direction().y])).collect();
    Ok(json!({
        "region": [cfg.region.x_half, cfg.region.y_half],
        "wavelength": cfg.wavelength,
        "d_min": cfg.d_min,
        "grid": points_json(grid.positions()),
        "directions": directions,
        "schemes": schemes,
    })
    .to_string())
}

/// Objective of `scheme` as antenna `antenna` of `layout` sweeps a
/// `resolution × resolution` grid over the region, others held fixed.
/// Cells that break the spacing constraint are `null`.
pub fn rate_map_json(config: &str, scheme: &str, layout: &str, antenna: usize, resolution: usize) -> DemoResult {
    let (_, cfg, users) = first_point(config)?;
    let scheme = movable(scheme)?;
    let xy: Vec<[f64; 2]> = serde_json::from_str(layout).map_err(|e| e.to_string())?;
    if antenna >= xy.len() {
        return Err(format!("antenna {antenna} out of range for {} antennas", xy.len()));
    }
    if !(2..=200).contains(&resolution) {
        return Err(format!("resolution must be in 2..=200, got {resolution}"));
    }
    let mut layout = AntennaLayout::from_positions_unchecked(xy.iter().map(|p| Point::new(p[0], p[1])).collect());
    let (xh, yh) = (cfg.region.x_half, cfg.region.y_half);
    let step = |half: f64, i: usize| -half + 2.0 * half * i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution);
    for j in 0..resolution {
        let mut row = Vec::with_capacity(resolution);
        for i in 0..resolution {
            layout.set_position(antenna, Point::new(step(xh, i), step(yh, j)));
            row.push(match layout.check(&cfg) {
                Ok(()) => json!(closed_form(scheme, &layout, &users, &cfg)?),
                Err(_) => Value::Null,
            });
        }
        rows.push(Value::Array(row));
    }
    Ok(json!({ "region": [xh, yh], "values": rows }).to_string())
}

/// Closed-form sum rates of the FPA grid and the optimized layouts for each
/// total power in `powers` (watts), run as a warm-started power sweep.
pub fn power_curve_json(config: &str, powers: &[f64]) -> DemoResult {
    let mut value: Value = serde_json::from_str(config).map_err(|e| e.to_string())?;
    let obj = value.as_object_mut().ok_or("config must be a JSON object")?;
    let schemes = [Scheme::MaZf, Scheme::FpaZf, Scheme::MaMrt, Scheme::FpaMrt];
    obj.insert("sweep".into(), json!({ "variable": "p_tot", "values": powers }));
    obj.insert("schemes".into(), json!(schemes.iter().map(|s| s.name()).collect::<Vec<_>>()));
    let scenario = ExperimentConfig::from_json(&value.to_string())
        .and_then(|c| Scenario::from_config(&c))
        .map_err(|e| e.to_string())?;
    let points = scenario.points().map_err(|e| e.to_string())?;
    let placed = place_all(&scenario).map_err(|e| e.to_string())?;
    let mut series: Vec<Value> = Vec::new();
    for (k, scheme) in schemes.iter().enumerate() {
        let values = points
            .iter()
            .zip(&placed)
            .map(|(pt, pl)| closed_form(*scheme, &pl[k].layout, &pt.users, &pt.cfg))
            .collect::<Result<Vec<f64>, String>>()?;
        series.push(json!({ "scheme": scheme.name(), "values": values }));
    }
    Ok(json!({ "powers": powers, "series": series }).to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimize_layout(config: &str) -> Result<String, JsError> {
    js(optimize_json(config))
}

#[wasm_bindgen]
pub fn rate_map(config: &str, scheme: &str, layout: &str, antenna: usize, resolution: usize) -> Result<String, JsError> {
    js(rate_map_json(config, scheme, layout, antenna, resolution))
}

#[wasm_bindgen]
pub fn power_curve(config: &str, powers: &[f64]) -> Result<String, JsError> {
    js(power_curve_json(config, powers))
}
