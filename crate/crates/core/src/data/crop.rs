use super::{GrayFrame, Roi};
use crate::error::Result;

/// Bilinear resampling of `roi` to a `size x size` patch using pixel-centre alignment.
///
/// Output pixel `d` samples source coordinate `(d + 0.5) * scale - 0.5`, clamped to the
/// ROI, so a ROI already `size` wide is copied exactly.
pub fn crop_and_resize(frame: &GrayFrame, roi: &Roi, size: usize) -> Result<Vec<f64>> {
    roi.validate(frame.width, frame.height)?;
    let (rw, rh) = (roi.width() as usize, roi.height() as usize);
    let sx = rw as f64 / size as f64;
    let sy = rh as f64 / size as f64;
    let coords = |d: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..size).map(|d| coords(d, sx, rw)).collect();
    let mut out = Vec::with_capacity(size * size);
    for dy in 0..size {
        let (y0, y1, fy) = coords(dy, sy, rh);
        let (y0, y1) = (roi.y1 as usize + y0, roi.y1 as usize + y1);
        for &(x0, x1, fx) in &xs {
            let (x0, x1) = (roi.x1 as usize + x0, roi.x1 as usize + x1);
            let top = frame.at(x0, y0) * (1.0 - fx) + frame.at(x1, y0) * fx;
            let bottom = frame.at(x0, y1) * (1.0 - fx) + frame.at(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}
