//! In-plane resampling with separable spline interpolation.
//!
//! Output pixel `j` of an axis with `n_in` input and `n_out` output samples
//! reads the input at `(j + 0.5) * n_in / n_out - 0.5`, i.e. pixel centres are
//! aligned. Coordinates outside `[0, n_in - 1]` are clamped, which replicates
//! the border intensities.
//!
//! Cubic interpolation uses interpolating cubic B-splines whose coefficients
//! are extended past the border by point reflection (`c[-1] = 2 c[0] - c[1]`).
//! With that extension the prefilter reproduces affine signals exactly, so
//! linear ramps survive resampling at every order >= 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Plane, PlaneSpacing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum InterpOrder {
    Nearest,
    Linear,
    Cubic,
}

impl TryFrom<u8> for InterpOrder {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(InterpOrder::Nearest),
            1 => Ok(InterpOrder::Linear),
            3 => Ok(InterpOrder::Cubic),
            other => Err(Error::Config(format!("interpolation order {other} not in {{0, 1, 3}}"))),
        }
    }
}

impl From<InterpOrder> for u8 {
    fn from(o: InterpOrder) -> u8 {
        match o {
            InterpOrder::Nearest => 0,
            InterpOrder::Linear => 1,
            InterpOrder::Cubic => 3,
        }
    }
}

/// `round(n * source / target)`, rejecting a zero result.
pub fn target_extent(n: usize, source: f64, target: f64) -> Result<usize> {
    let m = (n as f64 * source / target).round();
    if m < 1.0 {
        return Err(Error::Config(format!(
            "resampling {n} samples from {source} mm to {target} mm leaves no samples"
        )));
    }
    Ok(m as usize)
}

fn source_coordinate(j: usize, n_in: usize, n_out: usize) -> f64 {
    let x = (j as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    x.clamp(0.0, (n_in - 1) as f64)
}

/// Solves for interpolating cubic B-spline coefficients with point-reflected ends.
fn cubic_coefficients(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut c = f.to_vec();
    if n <= 2 {
        return c;
    }
    // Interior rows: c[k-1] + 4 c[k] + c[k+1] = 6 f[k], with c[0], c[n-1] known.
    let m = n - 2;
    let mut diag = vec![4.0; m];
    let mut rhs: Vec<f64> = (1..n - 1).map(|k| 6.0 * f[k]).collect();
    rhs[0] -= f[0];
    rhs[m - 1] -= f[n - 1];
    for i in 1..m {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    c[m] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        c[i + 1] = (rhs[i] - c[i + 2]) / diag[i];
    }
    c
}

fn resample_line(src: &[f64], n_out: usize, order: InterpOrder, out: &mut Vec<f64>) {
    let n = src.len();
    out.clear();
    if n == 1 {
        out.resize(n_out, src[0]);
        return;
    }
    match order {
        InterpOrder::Nearest => {
            for j in 0..n_out {
                let x = source_coordinate(j, n, n_out);
                out.push(src[((x + 0.5).floor() as usize).min(n - 1)]);
            }
        }
        InterpOrder::Linear => {
            for j in 0..n_out {
                let x = source_coordinate(j, n, n_out);
                let i = (x.floor() as usize).min(n - 2);
                let t = x - i as f64;
                out.push(src[i] * (1.0 - t) + src[i + 1] * t);
            }
        }
        InterpOrder::Cubic => {
            let c = cubic_coefficients(src);
            let coef = |k: isize| -> f64 {
                if k < 0 {
                    2.0 * c[0] - c[1]
                } else if k as usize >= n {
                    2.0 * c[n - 1] - c[n - 2]
                } else {
                    c[k as usize]
                }
            };
            for j in 0..n_out {
                let x = source_coordinate(j, n, n_out);
                let i = (x.floor() as usize).min(n - 2);
                let t = x - i as f64;
                let t2 = t * t;
                let t3 = t2 * t;
                let w = [
                    (1.0 - t).powi(3) / 6.0,
                    (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0,
                    (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0,
                    t3 / 6.0,
                ];
                let i = i as isize;
                out.push(w[0] * coef(i - 1) + w[1] * coef(i) + w[2] * coef(i + 1) + w[3] * coef(i + 2));
            }
        }
    }
}

/// Separable resampling of a row-major grid: along columns first, then along rows.
fn resample_grid(data: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize, order: InterpOrder) -> Vec<f64> {
    let mut tmp = vec![0.0; rows * out_cols];
    let mut line = Vec::with_capacity(out_cols.max(out_rows));
    for r in 0..rows {
        resample_line(&data[r * cols..(r + 1) * cols], out_cols, order, &mut line);
        tmp[r * out_cols..(r + 1) * out_cols].copy_from_slice(&line);
    }
    let mut out = vec![0.0; out_rows * out_cols];
    let mut column = vec![0.0; rows];
    for c in 0..out_cols {
        for r in 0..rows {
            column[r] = tmp[r * out_cols + c];
        }
        resample_line(&column, out_rows, order, &mut line);
        for (r, v) in line.iter().enumerate() {
            out[r * out_cols + c] = *v;
        }
    }
    out
}

fn output_spacing(n_in: usize, n_out: usize, spacing: f64) -> f64 {
    spacing * n_in as f64 / n_out as f64
}

/// Resamples an image to explicit extents; spacing scales with the extent ratio.
pub fn resample_image_to(image: &Plane<f32>, out_rows: usize, out_cols: usize, order: InterpOrder) -> Result<Plane<f32>> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::Config(format!("target extents {out_rows}x{out_cols} must be non-zero")));
    }
    if out_rows == image.rows && out_cols == image.cols {
        return Ok(image.clone());
    }
    let src: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
    let out = resample_grid(&src, image.rows, image.cols, out_rows, out_cols, order);
    let spacing = PlaneSpacing {
        dy: output_spacing(image.rows, out_rows, image.spacing.dy),
        dx: output_spacing(image.cols, out_cols, image.spacing.dx),
    };
    Plane::new(out_rows, out_cols, spacing, out.into_iter().map(|v| v as f32).collect())
}

/// Resamples an image slice to `target` spacing. Equal spacing returns the input unchanged.
pub fn resample_image_slice(image: &Plane<f32>, target: PlaneSpacing, order: InterpOrder) -> Result<Plane<f32>> {
    let target = PlaneSpacing::new(target.dy, target.dx)?;
    if image.spacing == target {
        return Ok(image.clone());
    }
    let rows = target_extent(image.rows, image.spacing.dy, target.dy)?;
    let cols = target_extent(image.cols, image.spacing.dx, target.dx)?;
    let mut out = resample_image_to(image, rows, cols, order)?;
    out.spacing = target;
    Ok(out)
}

fn check_binary(mask: &Plane<u8>) -> Result<()> {
    if let Some(v) = mask.data.iter().find(|&&v| v > 1) {
        return Err(Error::Contract(format!(
            "binary mask resampling got label {v}; use resample_label_slice for multi-label masks"
        )));
    }
    Ok(())
}

/// Interpolates a binary mask as a {0, 1} field and binarises at `threshold` (inclusive).
pub fn resample_mask_to(mask: &Plane<u8>, out_rows: usize, out_cols: usize, order: InterpOrder, threshold: f64) -> Result<Plane<u8>> {
    check_binary(mask)?;
    if out_rows == mask.rows && out_cols == mask.cols {
        return Ok(mask.clone());
    }
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::Config(format!("target extents {out_rows}x{out_cols} must be non-zero")));
    }
    let src: Vec<f64> = mask.data.iter().map(|&v| v as f64).collect();
    let field = resample_grid(&src, mask.rows, mask.cols, out_rows, out_cols, order);
    let spacing = PlaneSpacing {
        dy: output_spacing(mask.rows, out_rows, mask.spacing.dy),
        dx: output_spacing(mask.cols, out_cols, mask.spacing.dx),
    };
    Plane::new(out_rows, out_cols, spacing, field.into_iter().map(|v| u8::from(v >= threshold)).collect())
}

pub fn resample_mask_slice(mask: &Plane<u8>, target: PlaneSpacing, order: InterpOrder, threshold: f64) -> Result<Plane<u8>> {
    check_binary(mask)?;
    let target = PlaneSpacing::new(target.dy, target.dx)?;
    if mask.spacing == target {
        return Ok(mask.clone());
    }
    let rows = target_extent(mask.rows, mask.spacing.dy, target.dy)?;
    let cols = target_extent(mask.cols, mask.spacing.dx, target.dx)?;
    let mut out = resample_mask_to(mask, rows, cols, order, threshold)?;
    out.spacing = target;
    Ok(out)
}

/// Multi-label resampling: each label is interpolated as a one-hot field and the
/// arg-max wins (ties go to the lower id).
pub fn resample_label_slice(mask: &Plane<u8>, target: PlaneSpacing, order: InterpOrder) -> Result<Plane<u8>> {
    let target = PlaneSpacing::new(target.dy, target.dx)?;
    if mask.spacing == target {
        return Ok(mask.clone());
    }
    let rows = target_extent(mask.rows, mask.spacing.dy, target.dy)?;
    let cols = target_extent(mask.cols, mask.spacing.dx, target.dx)?;
    let mut labels: Vec<u8> = mask.data.clone();
    labels.sort_unstable();
    labels.dedup();
    let mut best = vec![f64::NEG_INFINITY; rows * cols];
    let mut out = vec![0u8; rows * cols];
    for &label in &labels {
        let onehot: Vec<f64> = mask.data.iter().map(|&v| f64::from(u8::from(v == label))).collect();
        let field = resample_grid(&onehot, mask.rows, mask.cols, rows, cols, order);
        for (i, v) in field.into_iter().enumerate() {
            if v > best[i] {
                best[i] = v;
                out[i] = label;
            }
        }
    }
    Plane::new(rows, cols, target, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spacing(v: f64) -> PlaneSpacing {
        PlaneSpacing { dy: v, dx: v }
    }

    fn ramp(rows: usize, cols: usize, a: f64, b: f64, c: f64, s: f64) -> Plane<f32> {
        let data = (0..rows * cols)
            .map(|i| (a * (i / cols) as f64 + b * (i % cols) as f64 + c) as f32)
            .collect();
        Plane::new(rows, cols, spacing(s), data).unwrap()
    }

    #[test]
    fn identity_spacing_short_circuits() {
        let img = ramp(7, 5, 0.3, -1.1, 4.0, 0.7);
        for order in [InterpOrder::Nearest, InterpOrder::Linear, InterpOrder::Cubic] {
            assert_eq!(resample_image_slice(&img, spacing(0.7), order).unwrap(), img);
        }
        let mask = Plane::new(2, 2, spacing(0.5), vec![0u8, 1, 1, 0]).unwrap();
        assert_eq!(resample_mask_slice(&mask, spacing(0.5), InterpOrder::Linear, 0.5).unwrap(), mask);
    }

    #[test]
    fn half_millimetre_to_one() {
        let img = Plane::filled(512, 512, spacing(0.5), 3.0f32);
        let out = resample_image_slice(&img, spacing(1.0), InterpOrder::Cubic).unwrap();
        assert_eq!((out.rows, out.cols), (256, 256));
        assert_eq!(out.spacing, spacing(1.0));
        assert!(out.data.iter().all(|&v| (v - 3.0).abs() < 1e-5));
    }

    #[test]
    fn ramps_are_reproduced_at_sample_points() {
        let (rows, cols) = (9, 11);
        let (a, b, c) = (0.75, -0.4, 12.0);
        let img = ramp(rows, cols, a, b, c, 1.0);
        for order in [InterpOrder::Linear, InterpOrder::Cubic] {
            let out = resample_image_slice(&img, spacing(0.5), order).unwrap();
            assert_eq!((out.rows, out.cols), (18, 22));
            for r in 0..out.rows {
                let y = (r as f64 + 0.5) * rows as f64 / out.rows as f64 - 0.5;
                for cc in 0..out.cols {
                    let x = (cc as f64 + 0.5) * cols as f64 / out.cols as f64 - 0.5;
                    // analytic ramp at the clamped source coordinate
                    let (yc, xc) = (y.clamp(0.0, (rows - 1) as f64), x.clamp(0.0, (cols - 1) as f64));
                    let expected = a * yc + b * xc + c;
                    let got = out.get(r, cc) as f64;
                    assert!((got - expected).abs() < 1e-5, "{order:?} ({r},{cc}): {got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn cubic_interpolates_samples_exactly() {
        let src: Vec<f64> = (0..13).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let c = cubic_coefficients(&src);
        for k in 0..src.len() {
            let cm = if k == 0 { 2.0 * c[0] - c[1] } else { c[k - 1] };
            let cp = if k == src.len() - 1 { 2.0 * c[k] - c[k - 1] } else { c[k + 1] };
            assert!(((cm + 4.0 * c[k] + cp) / 6.0 - src[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_constant_field_survives() {
        let mask = Plane::filled(17, 23, PlaneSpacing { dy: 0.8, dx: 0.45 }, 1u8);
        let out = resample_mask_slice(&mask, spacing(1.0), InterpOrder::Linear, 0.5).unwrap();
        assert!(out.data.iter().all(|&v| v == 1));
    }

    #[test]
    fn square_downsample_keeps_square() {
        let mut mask = Plane::filled(100, 100, spacing(0.5), 0u8);
        for r in 45..55 {
            for c in 45..55 {
                mask.set(r, c, 1);
            }
        }
        let out = resample_mask_slice(&mask, spacing(1.0), InterpOrder::Linear, 0.5).unwrap();
        assert_eq!((out.rows, out.cols), (50, 50));
        assert!(out.data.iter().all(|&v| v <= 1));
        let rows_hit: Vec<usize> = (0..50).filter(|&r| (0..50).any(|c| out.get(r, c) == 1)).collect();
        let cols_hit: Vec<usize> = (0..50).filter(|&c| (0..50).any(|r| out.get(r, c) == 1)).collect();
        // geometric oracle: a 10-pixel edge at 0.5 mm spans 5 pixels at 1 mm
        assert!((3..=7).contains(&rows_hit.len()), "{rows_hit:?}");
        assert!((3..=7).contains(&cols_hit.len()), "{cols_hit:?}");
        let count = out.data.iter().filter(|&&v| v == 1).count();
        assert!(count <= rows_hit.len() * cols_hit.len());
        assert!((9..=49).contains(&count), "{count}");
        // centred on the analytic square centre (pixel 24.5 at 1 mm)
        let mid = (rows_hit[0] + rows_hit[rows_hit.len() - 1]) as f64 / 2.0;
        assert!((mid - 24.5).abs() <= 0.5);
    }

    #[test]
    fn non_binary_mask_is_contract_error() {
        let mask = Plane::new(1, 2, spacing(0.5), vec![0u8, 2]).unwrap();
        assert!(matches!(
            resample_mask_slice(&mask, spacing(1.0), InterpOrder::Linear, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn multilabel_resampling_keeps_labels() {
        let mut mask = Plane::filled(40, 40, spacing(0.5), 0u8);
        for r in 0..40 {
            for c in 0..40 {
                if r < 20 && c < 20 {
                    mask.set(r, c, 2);
                } else if r >= 24 && c >= 24 {
                    mask.set(r, c, 4);
                }
            }
        }
        let out = resample_label_slice(&mask, spacing(1.0), InterpOrder::Linear).unwrap();
        assert_eq!(out.get(2, 2), 2);
        assert_eq!(out.get(17, 17), 4);
        assert_eq!(out.get(2, 17), 0);
        assert!(out.data.iter().all(|v| [0, 2, 4].contains(v)));
    }

    #[test]
    fn zero_extent_is_config_error() {
        let img = Plane::filled(1, 1, spacing(0.1), 0.0f32);
        assert!(matches!(
            resample_image_slice(&img, spacing(1.0), InterpOrder::Cubic),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn order_from_integer() {
        assert_eq!(InterpOrder::try_from(3).unwrap(), InterpOrder::Cubic);
        assert!(InterpOrder::try_from(2).is_err());
    }
}
