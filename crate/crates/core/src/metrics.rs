//! Full-reference fidelity metrics: PSNR and single-scale SSIM.
//!
//! SSIM follows the usual formulation: an 11x11 Gaussian window with
//! sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, "valid" filtering
//! (no padding), mean over the map, then averaged over channels.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::tensor::ImageGrid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("peak must be positive, got {0}")]
    BadPeak(f64),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
}

fn dims(img: &ImageGrid) -> (usize, usize, usize) {
    (img.width(), img.height(), img.channels())
}

fn check_same(a: &ImageGrid, b: &ImageGrid) -> Result<(), MetricError> {
    if dims(a) != dims(b) {
        return Err(MetricError::DimensionMismatch { a: dims(a), b: dims(b) });
    }
    Ok(())
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(peak^2 / MSE)`, or `+inf` for identical images.
pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64, MetricError> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(MetricError::BadPeak(peak));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable "valid" filtering of a single plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Mean SSIM of one channel plane pair.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

fn plane(img: &ImageGrid, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let (w, h, ch) = dims(a);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let sum: f64 = (0..ch).map(|c| ssim_plane(&plane(a, c), &plane(b, c), w, h)).sum();
    Ok(sum / ch as f64)
}

/// BT.601 luma scaled to `[0, 1]` (the 16..235 studio-range Y).
pub fn to_y_channel(img: &ImageGrid) -> ImageGrid {
    if img.channels() != 3 {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| (16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0)
        .collect();
    ImageGrid::new(img.width(), img.height(), 1, data).expect("luma of a valid image is valid")
}

pub fn shave(img: &ImageGrid, border: usize) -> ImageGrid {
    if border == 0 || 2 * border >= img.width() || 2 * border >= img.height() {
        return img.clone();
    }
    img.crop(border, border, img.width() - 2 * border, img.height() - 2 * border)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalOptions {
    pub y_channel: bool,
    pub shave_border: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

fn ser_db<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

pub fn evaluate(sr: &ImageGrid, hr: &ImageGrid, opts: EvalOptions) -> Result<MetricReport, MetricError> {
    check_same(sr, hr)?;
    let (mut a, mut b) = (sr.clone(), hr.clone());
    if opts.y_channel {
        a = to_y_channel(&a);
        b = to_y_channel(&b);
    }
    a = shave(&a, opts.shave_border);
    b = shave(&b, opts.shave_border);
    Ok(MetricReport {
        psnr: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b)?,
        lpips: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub result: Result<MetricReport, String>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Mean over successful rows with finite PSNR, `None` if there are none.
pub fn mean_report(rows: &[MetricRow]) -> Option<MetricReport> {
    let ok: Vec<&MetricReport> = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .filter(|m| m.psnr.is_finite())
        .collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    let lpips = if ok.iter().all(|m| m.lpips.is_some()) {
        Some(ok.iter().map(|m| m.lpips.unwrap_or(0.0)).sum::<f64>() / n)
    } else {
        None
    };
    Some(MetricReport {
        psnr: ok.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: ok.iter().map(|m| m.ssim).sum::<f64>() / n,
        lpips,
    })
}

/// One row per pair in input order, then a `mean` row.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "method", "psnr", "ssim", "lpips", "status"])?;
    for r in rows {
        match &r.result {
            Ok(m) => w.write_record([
                r.image_id.as_str(),
                &r.method,
                &fmt_db(m.psnr),
                &format!("{:.6}", m.ssim),
                &m.lpips.map(|v| format!("{v:.6}")).unwrap_or_default(),
                "ok",
            ])?,
            Err(e) => w.write_record([r.image_id.as_str(), &r.method, "", "", "", &format!("failed: {e}")])?,
        }
    }
    let method = rows.first().map(|r| r.method.clone()).unwrap_or_default();
    match mean_report(rows) {
        Some(m) => w.write_record([
            "mean",
            &method,
            &fmt_db(m.psnr),
            &format!("{:.6}", m.ssim),
            &m.lpips.map(|v| format!("{v:.6}")).unwrap_or_default(),
            "ok",
        ])?,
        None => w.write_record(["mean", &method, "", "", "", "no finite rows"])?,
    }
    w.flush()?;
    Ok(())
}
