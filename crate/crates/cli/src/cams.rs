//! Plain-text camera-pair files:
//! ```text
//! k_src fx fy cx cy
//! k_tgt fx fy cx cy
//! r r00 r01 r02 r10 r11 r12 r20 r21 r22
//! t tx ty tz
//! ```

use std::path::Path;

use geovit_core::geometry::CameraPair;
use nalgebra::{Matrix3, Vector3};

pub fn write_cams(path: impl AsRef<Path>, cams: &CameraPair) -> Result<(), String> {
    let k = |m: &Matrix3<f64>| format!("{} {} {} {}", m[(0, 0)], m[(1, 1)], m[(0, 2)], m[(1, 2)]);
    let r = &cams.r;
    let text = format!(
        "k_src {}\nk_tgt {}\nr {} {} {} {} {} {} {} {} {}\nt {} {} {}\n",
        k(&cams.k_src),
        k(&cams.k_tgt),
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        cams.t[0],
        cams.t[1],
        cams.t[2],
    );
    std::fs::write(path.as_ref(), text).map_err(|e| format!("{}: {e}", path.as_ref().display()))
}

pub fn read_cams(path: impl AsRef<Path>) -> Result<CameraPair, String> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
    let mut k_src = None;
    let mut k_tgt = None;
    let mut r = None;
    let mut t = None;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let nums: Result<Vec<f64>, _> = parts.map(|v| v.parse::<f64>()).collect();
        let nums = nums.map_err(|_| format!("bad number in line `{line}`"))?;
        match tag {
            "k_src" | "k_tgt" => {
                if nums.len() != 4 {
                    return Err(format!("`{tag}` expects fx fy cx cy"));
                }
                let m = Matrix3::new(nums[0], 0.0, nums[2], 0.0, nums[1], nums[3], 0.0, 0.0, 1.0);
                if tag == "k_src" {
                    k_src = Some(m);
                } else {
                    k_tgt = Some(m);
                }
            }
            "r" => {
                if nums.len() != 9 {
                    return Err("`r` expects nine entries, row-major".into());
                }
                r = Some(Matrix3::from_row_slice(&nums));
            }
            "t" => {
                if nums.len() != 3 {
                    return Err("`t` expects three entries".into());
                }
                t = Some(Vector3::new(nums[0], nums[1], nums[2]));
            }
            other => return Err(format!("unknown camera record `{other}`")),
        }
    }
    let (Some(k_src), Some(k_tgt), Some(r), Some(t)) = (k_src, k_tgt, r, t) else {
        return Err("camera file must define k_src, k_tgt, r and t".into());
    };
    CameraPair::new(k_src, k_tgt, r, t).map_err(|e| e.to_string())
}
