//! Flow from an external estimator speaking the plugin protocol.

use std::path::{Path, PathBuf};
use std::time::Duration;

use image::RgbImage;
use serde_json::{json, Value};

use super::{read_flow, FlowField};
use crate::error::{Error, Result};
use crate::plugin::PluginPool;
use crate::raster::save_rgb;

/// Extracts the flow file path from a `{"flow": "<path>"}` response.
pub fn parse_flow_response(value: &Value) -> Result<PathBuf> {
    value
        .get("flow")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Plugin(format!("flow response lacks a `flow` path: {value}")))
}

/// Asks the plugin for the flow between two frames on disk and validates
/// the returned field against `(width, height)`.
pub fn request_flow(pool: &PluginPool, frame_t: &Path, frame_t1: &Path, dims: (usize, usize)) -> Result<FlowField> {
    let resp = pool.call(&json!({
        "op": "flow",
        "frame_t": frame_t.to_string_lossy(),
        "frame_t1": frame_t1.to_string_lossy(),
    }))?;
    let path = parse_flow_response(&resp)?;
    let flow = read_flow(&path).map_err(|e| Error::Plugin(format!("`{}`: {e}", pool.command())))?;
    if flow.dims() != dims {
        return Err(Error::Plugin(format!(
            "`{}` returned a {}x{} flow for {}x{} frames",
            pool.command(),
            flow.width(),
            flow.height(),
            dims.0,
            dims.1
        )));
    }
    Ok(flow)
}

/// Writes the frames to a scratch directory and runs the plugin once.
pub fn external_flow(
    frame_t: &RgbImage,
    frame_t1: &RgbImage,
    plugin_command: &str,
    timeout: Duration,
) -> Result<FlowField> {
    if frame_t.dimensions() != frame_t1.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} and {}x{}",
            frame_t.width(),
            frame_t.height(),
            frame_t1.width(),
            frame_t1.height()
        )));
    }
    let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let p0 = scratch.path().join("frame_t.png");
    let p1 = scratch.path().join("frame_t1.png");
    save_rgb(frame_t, &p0)?;
    save_rgb(frame_t1, &p1)?;
    let pool = PluginPool::new(plugin_command, timeout);
    request_flow(
        &pool,
        &p0,
        &p1,
        (frame_t.width() as usize, frame_t.height() as usize),
    )
}
