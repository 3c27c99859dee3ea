//! File formats, checkpoint persistence, tiled inference and visualization.

pub mod checkpoint;
pub mod color;
pub mod flo;
pub mod kitti;
pub mod pfm;
pub mod tile;

use std::path::Path;

use crate::error::FormatError;
use crate::train::CurvePoint;

/// Writes the training curve as newline-delimited `step lr loss` records.
pub fn write_loss_curve(
    path: impl AsRef<Path>,
    curve: &[CurvePoint],
) -> Result<(), FormatError> {
    let mut out = String::with_capacity(curve.len() * 32);
    for p in curve {
        out.push_str(&format!("{} {:.10e} {:.10e}\n", p.step, p.lr, p.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_loss_curve(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    let mut curve = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let (Some(step), Some(lr), Some(loss)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(FormatError::BadHeader(format!(
                "loss curve line {ln} is malformed"
            )));
        };
        curve.push(CurvePoint {
            step: step
                .parse()
                .map_err(|_| FormatError::BadHeader(format!("bad step on line {ln}")))?,
            lr: lr
                .parse()
                .map_err(|_| FormatError::BadHeader(format!("bad lr on line {ln}")))?,
            loss: loss
                .parse()
                .map_err(|_| FormatError::BadHeader(format!("bad loss on line {ln}")))?,
        });
    }
    Ok(curve)
}
