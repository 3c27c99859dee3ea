//! Evaluation metrics for flow, disparity and depth.
//!
//! All metrics reduce over the ground truth's validity mask intersected
//! with an optional caller mask, and accumulate in `f64` in a fixed pixel
//! order for determinism.

use crate::error::MetricError;
use crate::geometry::{FieldKind, GeoField};
use crate::tensor::Element;

/// Outlier rule for [`f1_all`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum F1Rule {
    /// KITTI convention: error > 3 px AND error > 5% of the ground-truth
    /// magnitude.
    #[default]
    KittiAnd,
    /// Literal "exceeding 3 pixels or over 5%" reading.
    PaperOr,
}

fn combined_mask<T: Element>(
    pred: &GeoField<T>,
    gt: &GeoField<T>,
    extra: Option<&[bool]>,
    kind: FieldKind,
    op: &'static str,
) -> Result<Vec<bool>, MetricError> {
    if pred.kind != kind || gt.kind != kind {
        return Err(MetricError::Domain(format!(
            "{op} expects {} fields, got {} vs {}",
            kind.name(),
            pred.kind.name(),
            gt.kind.name()
        )));
    }
    if pred.data.shape() != gt.data.shape() {
        return Err(MetricError::Tensor(crate::error::TensorError::Shape {
            op,
            lhs: pred.data.shape().to_vec(),
            rhs: gt.data.shape().to_vec(),
        }));
    }
    let mut mask = gt.valid_or_all();
    if let Some(extra) = extra {
        if extra.len() != mask.len() {
            return Err(MetricError::Domain(format!(
                "{op}: mask has {} entries for {} pixels",
                extra.len(),
                mask.len()
            )));
        }
        for (m, &e) in mask.iter_mut().zip(extra) {
            *m = *m && e;
        }
    }
    if mask.iter().all(|&m| !m) {
        return Err(MetricError::EmptyMask);
    }
    Ok(mask)
}

/// Mean endpoint error in pixels: the l2 distance between predicted and
/// ground-truth flow vectors, averaged over valid pixels.
pub fn epe<T: Element>(
    pred: &GeoField<T>,
    gt: &GeoField<T>,
    mask: Option<&[bool]>,
) -> Result<f64, MetricError> {
    let mask = combined_mask(pred, gt, mask, FieldKind::Flow, "epe")?;
    let n = mask.len();
    let (p, g) = (pred.data.data(), gt.data.data());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let du = p[i].as_f64() - g[i].as_f64();
        let dv = p[n + i].as_f64() - g[n + i].as_f64();
        sum += (du * du + dv * dv).sqrt();
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Percentage of flow outliers under the chosen rule against the 3 px /
/// 5%-of-magnitude thresholds.
pub fn f1_all<T: Element>(
    pred: &GeoField<T>,
    gt: &GeoField<T>,
    mask: Option<&[bool]>,
    rule: F1Rule,
) -> Result<f64, MetricError> {
    let mask = combined_mask(pred, gt, mask, FieldKind::Flow, "f1_all")?;
    let n = mask.len();
    let (p, g) = (pred.data.data(), gt.data.data());
    let mut outliers = 0usize;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let du = p[i].as_f64() - g[i].as_f64();
        let dv = p[n + i].as_f64() - g[n + i].as_f64();
        let err = (du * du + dv * dv).sqrt();
        let mag = (g[i].as_f64().powi(2) + g[n + i].as_f64().powi(2)).sqrt();
        let is_outlier = match rule {
            F1Rule::KittiAnd => err > 3.0 && err > 0.05 * mag,
            F1Rule::PaperOr => err > 3.0 || err > 0.05 * mag,
        };
        if is_outlier {
            outliers += 1;
        }
        count += 1;
    }
    Ok(100.0 * outliers as f64 / count as f64)
}

/// Percentage of disparity pixels with absolute error greater than `n` px.
pub fn bad_np<T: Element>(
    pred: &GeoField<T>,
    gt: &GeoField<T>,
    n: f64,
    mask: Option<&[bool]>,
) -> Result<f64, MetricError> {
    if n <= 0.0 {
        return Err(MetricError::Domain(format!(
            "bad_np threshold must be positive, got {n}"
        )));
    }
    let mask = combined_mask(pred, gt, mask, FieldKind::Disparity, "bad_np")?;
    let (p, g) = (pred.data.data(), gt.data.data());
    let mut bad = 0usize;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        if (p[i].as_f64() - g[i].as_f64()).abs() > n {
            bad += 1;
        }
        count += 1;
    }
    Ok(100.0 * bad as f64 / count as f64)
}

/// The four standard depth scalars.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
}

/// Abs Rel, Sq Rel, RMSE and RMSE-log over valid pixels. Non-positive
/// values inside the mask are a domain error.
pub fn depth_metrics<T: Element>(
    pred: &GeoField<T>,
    gt: &GeoField<T>,
    mask: Option<&[bool]>,
) -> Result<DepthMetrics, MetricError> {
    let mask = combined_mask(pred, gt, mask, FieldKind::Depth, "depth_metrics")?;
    let (p, g) = (pred.data.data(), gt.data.data());
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let (pv, gv) = (p[i].as_f64(), g[i].as_f64());
        if pv <= 0.0 || gv <= 0.0 {
            return Err(MetricError::Domain(format!(
                "depth_metrics: non-positive value at masked pixel {i} (pred {pv}, gt {gv})"
            )));
        }
        let d = pv - gv;
        abs_rel += d.abs() / gv;
        sq_rel += d * d / gv;
        sq += d * d;
        sq_log += (pv.ln() - gv.ln()).powi(2);
        count += 1;
    }
    let n = count as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
    })
}

/// Metric values for one sample or one aggregate, with the fixed key set
/// used by the text report.
#[derive(Clone, Debug, Default)]
pub struct MetricValues {
    pub epe: Option<f64>,
    pub f1_all: Option<f64>,
    pub bad1: Option<f64>,
    pub bad2: Option<f64>,
    pub bad4: Option<f64>,
    pub abs_rel: Option<f64>,
    pub sq_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_log: Option<f64>,
}

impl MetricValues {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("epe", self.epe),
            ("f1_all", self.f1_all),
            ("bad1", self.bad1),
            ("bad2", self.bad2),
            ("bad4", self.bad4),
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    pub fn from_depth(d: DepthMetrics) -> Self {
        MetricValues {
            abs_rel: Some(d.abs_rel),
            sq_rel: Some(d.sq_rel),
            rmse: Some(d.rmse),
            rmse_log: Some(d.rmse_log),
            ..Default::default()
        }
    }
}

/// Evaluation results with a per-sample breakdown and the across-sample
/// mean of each metric.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub per_sample: Vec<(String, MetricValues)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, values: MetricValues) {
        self.per_sample.push((name.into(), values));
    }

    /// Unweighted mean over samples, per key.
    pub fn aggregate(&self) -> MetricValues {
        let mut sums: Vec<(&'static str, f64, usize)> = Vec::new();
        for (_, v) in &self.per_sample {
            for (k, x) in v.entries() {
                match sums.iter_mut().find(|(sk, _, _)| *sk == k) {
                    Some((_, s, c)) => {
                        *s += x;
                        *c += 1;
                    }
                    None => sums.push((k, x, 1)),
                }
            }
        }
        let get = |key: &str| {
            sums.iter()
                .find(|(k, _, _)| *k == key)
                .map(|(_, s, c)| s / *c as f64)
        };
        MetricValues {
            epe: get("epe"),
            f1_all: get("f1_all"),
            bad1: get("bad1"),
            bad2: get("bad2"),
            bad4: get("bad4"),
            abs_rel: get("abs_rel"),
            sq_rel: get("sq_rel"),
            rmse: get("rmse"),
            rmse_log: get("rmse_log"),
        }
    }

    /// Structured text: aggregate lines `key value`, then one
    /// `sample <name> <key> <value>` line per sample and key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.aggregate().entries() {
            out.push_str(&format!("{k} {v:.6}\n"));
        }
        for (name, vals) in &self.per_sample {
            for (k, v) in vals.entries() {
                out.push_str(&format!("sample {name} {k} {v:.6}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow(data: Vec<f64>, h: usize, w: usize) -> GeoField<f64> {
        GeoField::new(FieldKind::Flow, Tensor::from_vec(data, &[2, h, w]).unwrap()).unwrap()
    }

    #[test]
    fn epe_identity_and_three_four_five() {
        let gt = flow(vec![0.0; 8], 2, 2);
        assert_eq!(epe(&gt, &gt, None).unwrap(), 0.0);
        let mut d = vec![3.0; 4];
        d.extend(vec![4.0; 4]);
        let pred = flow(d, 2, 2);
        assert_eq!(epe(&pred, &gt, None).unwrap(), 5.0);
    }

    #[test]
    fn epe_two_pixel_mean() {
        // errors (1,0) and (0,2) -> mean 1.5
        let gt = flow(vec![0.0; 4], 1, 2);
        let pred = flow(vec![1.0, 0.0, 0.0, 2.0], 1, 2);
        assert_eq!(epe(&pred, &gt, None).unwrap(), 1.5);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = flow(vec![0.0; 8], 2, 2);
        let mask = vec![false; 4];
        assert!(matches!(
            epe(&gt, &gt, Some(&mask)),
            Err(MetricError::EmptyMask)
        ));
    }

    #[test]
    fn f1_and_rule_vs_or_rule() {
        // error 4 px on a 100 px ground-truth vector: 4 > 3 but 4 < 5
        let gt = flow(vec![100.0, 0.0], 1, 1);
        let pred = flow(vec![104.0, 0.0], 1, 1);
        assert_eq!(f1_all(&pred, &gt, None, F1Rule::KittiAnd).unwrap(), 0.0);
        assert_eq!(f1_all(&pred, &gt, None, F1Rule::PaperOr).unwrap(), 100.0);

        // error 4 px on a 10 px vector: outlier under both readings
        let gt = flow(vec![10.0, 0.0], 1, 1);
        let pred = flow(vec![14.0, 0.0], 1, 1);
        assert_eq!(f1_all(&pred, &gt, None, F1Rule::KittiAnd).unwrap(), 100.0);
        assert_eq!(f1_all(&pred, &gt, None, F1Rule::PaperOr).unwrap(), 100.0);

        assert_eq!(f1_all(&gt, &gt, None, F1Rule::KittiAnd).unwrap(), 0.0);
    }

    fn disp(data: Vec<f64>, h: usize, w: usize) -> GeoField<f64> {
        GeoField::new(
            FieldKind::Disparity,
            Tensor::from_vec(data, &[1, h, w]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bad_np_thresholds_and_monotonicity() {
        let gt = disp(vec![5.0; 6], 2, 3);
        let pred = disp(vec![6.5; 6], 2, 3);
        assert_eq!(bad_np(&pred, &gt, 1.0, None).unwrap(), 100.0);
        assert_eq!(bad_np(&pred, &gt, 2.0, None).unwrap(), 0.0);
        assert_eq!(bad_np(&pred, &gt, 4.0, None).unwrap(), 0.0);
        assert_eq!(bad_np(&gt, &gt, 1.0, None).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = disp((0..12).map(|_| rng.gen_range(0.0..10.0)).collect(), 3, 4);
        let pred = disp((0..12).map(|_| rng.gen_range(0.0..10.0)).collect(), 3, 4);
        let b1 = bad_np(&pred, &gt, 1.0, None).unwrap();
        let b2 = bad_np(&pred, &gt, 2.0, None).unwrap();
        let b4 = bad_np(&pred, &gt, 4.0, None).unwrap();
        assert!(b1 >= b2 && b2 >= b4);
    }

    fn depth(data: Vec<f64>, h: usize, w: usize) -> GeoField<f64> {
        GeoField::new(
            FieldKind::Depth,
            Tensor::from_vec(data, &[1, h, w]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn depth_metric_algebra() {
        let gt = depth(vec![3.0; 4], 2, 2);
        let m = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log),
            (0.0, 0.0, 0.0, 0.0)
        );

        // pred = 2*gt: abs_rel = 1, rmse_log = ln 2
        let pred = depth(vec![6.0; 4], 2, 2);
        let m = depth_metrics(&pred, &gt, None).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert!((m.rmse_log - 2.0_f64.ln()).abs() < 1e-12);

        // single pixel gt 4, pred 2
        let m = depth_metrics(&depth(vec![2.0], 1, 1), &depth(vec![4.0], 1, 1), None).unwrap();
        assert!((m.abs_rel - 0.5).abs() < 1e-12);
        assert!((m.sq_rel - 1.0).abs() < 1e-12);
        assert!((m.rmse - 2.0).abs() < 1e-12);
    }

    #[test]
    fn depth_rejects_non_positive_in_mask() {
        let gt = depth(vec![1.0, 2.0], 1, 2);
        let pred = depth(vec![1.0, -0.5], 1, 2);
        assert!(matches!(
            depth_metrics(&pred, &gt, None),
            Err(MetricError::Domain(_))
        ));
        // masked out, the bad pixel is ignored
        let mask = vec![true, false];
        assert!(depth_metrics(&pred, &gt, Some(&mask)).is_ok());
    }

    /// Brute-force per-pixel reference implementations.
    mod brute {
        pub fn epe(p: &[f64], g: &[f64], n: usize, mask: &[bool]) -> f64 {
            let mut s = 0.0;
            let mut c = 0;
            for i in 0..n {
                if mask[i] {
                    s += ((p[i] - g[i]).powi(2) + (p[n + i] - g[n + i]).powi(2)).sqrt();
                    c += 1;
                }
            }
            s / c as f64
        }

        pub fn f1(p: &[f64], g: &[f64], n: usize, mask: &[bool]) -> f64 {
            let mut o = 0;
            let mut c = 0;
            for i in 0..n {
                if mask[i] {
                    let e = ((p[i] - g[i]).powi(2) + (p[n + i] - g[n + i]).powi(2)).sqrt();
                    let m = (g[i].powi(2) + g[n + i].powi(2)).sqrt();
                    if e > 3.0 && e > 0.05 * m {
                        o += 1;
                    }
                    c += 1;
                }
            }
            100.0 * o as f64 / c as f64
        }

        pub fn bad(p: &[f64], g: &[f64], n: f64, mask: &[bool]) -> f64 {
            let mut o = 0;
            let mut c = 0;
            for i in 0..p.len() {
                if mask[i] {
                    if (p[i] - g[i]).abs() > n {
                        o += 1;
                    }
                    c += 1;
                }
            }
            100.0 * o as f64 / c as f64
        }
    }

    #[test]
    fn metrics_match_brute_force_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 64;
            let p: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let g: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            if mask.iter().all(|&m| !m) {
                continue;
            }
            let pf = flow(p.clone(), 8, 8);
            let gf = flow(g.clone(), 8, 8);
            let a = epe(&pf, &gf, Some(&mask)).unwrap();
            assert!((a - brute::epe(&p, &g, n, &mask)).abs() < 1e-6);
            let a = f1_all(&pf, &gf, Some(&mask), F1Rule::KittiAnd).unwrap();
            assert!((a - brute::f1(&p, &g, n, &mask)).abs() < 1e-6);

            let pd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..8.0)).collect();
            let gd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..8.0)).collect();
            let a = bad_np(&disp(pd.clone(), 8, 8), &disp(gd.clone(), 8, 8), 2.0, Some(&mask))
                .unwrap();
            assert!((a - brute::bad(&pd, &gd, 2.0, &mask)).abs() < 1e-6);
        }
    }

    #[test]
    fn report_text_uses_fixed_keys() {
        let mut report = MetricReport::default();
        report.push(
            "a",
            MetricValues {
                epe: Some(1.0),
                f1_all: Some(10.0),
                ..Default::default()
            },
        );
        report.push(
            "b",
            MetricValues {
                epe: Some(3.0),
                f1_all: Some(20.0),
                ..Default::default()
            },
        );
        let text = report.to_text();
        assert!(text.starts_with("epe 2.000000\nf1_all 15.000000\n"));
        assert!(text.contains("sample a epe 1.000000"));
    }
}
