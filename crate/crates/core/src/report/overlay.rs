use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMask, Plane};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceSelection {
    /// Slice with the largest reference area; the lowest index wins ties.
    #[default]
    MaxGtArea,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// Channel-wise mean of the two colours.
    #[default]
    Blend,
    GtOnTop,
    PredOnTop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlaySpec {
    pub slice: SliceSelection,
    pub gt_color: Rgb,
    pub pred_color: Rgb,
    pub overlap: OverlapMode,
    pub window_center: f64,
    pub window_width: f64,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        OverlaySpec {
            slice: SliceSelection::MaxGtArea,
            gt_color: [0, 0, 255],
            pred_color: [255, 0, 0],
            overlap: OverlapMode::Blend,
            window_center: 40.0,
            window_width: 80.0,
        }
    }
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<()> {
        if self.gt_color == self.pred_color {
            return Err(Error::Config("overlay colours for reference and prediction must differ".into()));
        }
        if !(self.window_width > 0.0 && self.window_width.is_finite() && self.window_center.is_finite()) {
            return Err(Error::Config(format!("window width {} must be positive", self.window_width)));
        }
        Ok(())
    }

    pub fn overlap_color(&self) -> Rgb {
        match self.overlap {
            OverlapMode::Blend => {
                let mix = |a: u8, b: u8| ((u16::from(a) + u16::from(b)).div_ceil(2)) as u8;
                [0, 1, 2].map(|i| mix(self.gt_color[i], self.pred_color[i]))
            }
            OverlapMode::GtOnTop => self.gt_color,
            OverlapMode::PredOnTop => self.pred_color,
        }
    }

    /// Grey level of a CT value under the window.
    pub fn grey(&self, hu: f32) -> u8 {
        let lo = self.window_center - self.window_width / 2.0;
        let t = ((f64::from(hu) - lo) / self.window_width).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn count(&self, color: Rgb) -> usize {
        self.data.chunks(3).filter(|p| *p == color).count()
    }

    /// PNG encoding with fixed settings and no metadata chunks.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Balanced);
            let mut w = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
            w.write_image_data(&self.data).map_err(|e| Error::Format(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

/// Picks the slice to draw from a reference stack.
pub fn select_slice(gt: &LabelMask, selection: SliceSelection) -> Result<usize> {
    let e = gt.extents();
    match selection {
        SliceSelection::Index(i) if i < e.slices => Ok(i),
        SliceSelection::Index(i) => Err(Error::Bounds { index: i, extent: e.slices }),
        SliceSelection::MaxGtArea => {
            let p = e.plane_len();
            let areas = gt.data().chunks(p).map(|s| s.iter().filter(|&&v| v != 0).count());
            Ok(areas.enumerate().fold((0, 0), |best, (i, a)| if a > best.1 { (i, a) } else { best }).0)
        }
    }
}

/// Windowed CT backdrop with reference pixels in `gt_color`, prediction in `pred_color`.
pub fn render_overlay(ct: &Plane<f32>, gt: &Plane<u8>, pred: &Plane<u8>, spec: &OverlaySpec) -> Result<RgbImage> {
    spec.validate()?;
    for (name, r, c) in [("reference", gt.rows, gt.cols), ("prediction", pred.rows, pred.cols)] {
        if (r, c) != (ct.rows, ct.cols) {
            return Err(Error::Shape(format!("{name} is {r}x{c}, CT slice is {}x{}", ct.rows, ct.cols)));
        }
    }
    let overlap = spec.overlap_color();
    let mut data = Vec::with_capacity(3 * ct.data.len());
    for ((&v, &g), &p) in ct.data.iter().zip(&gt.data).zip(&pred.data) {
        let px = match (g != 0, p != 0) {
            (true, true) => overlap,
            (true, false) => spec.gt_color,
            (false, true) => spec.pred_color,
            (false, false) => [spec.grey(v); 3],
        };
        data.extend_from_slice(&px);
    }
    Ok(RgbImage {
        width: ct.cols,
        height: ct.rows,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Extents, LabelSchema, PlaneSpacing, Spacing};

    const SP: PlaneSpacing = PlaneSpacing { dy: 1.0, dx: 1.0 };

    fn ct() -> Plane<f32> {
        Plane::new(4, 4, SP, (0..16).map(|i| i as f32 * 10.0 - 20.0).collect()).unwrap()
    }

    fn mask(fg: &[usize]) -> Plane<u8> {
        let mut p = Plane::filled(4, 4, SP, 0u8);
        fg.iter().for_each(|&i| p.data[i] = 1);
        p
    }

    #[test]
    fn empty_masks_give_greyscale() {
        let img = render_overlay(&ct(), &mask(&[]), &mask(&[]), &OverlaySpec::default()).unwrap();
        assert!(img.data.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        assert_eq!(img.pixel(0, 0), [0; 3]); // -20 HU is below the window
        assert_eq!(img.pixel(1, 2), [128; 3]); // 40 HU is the window centre
        assert_eq!(img.pixel(3, 3), [255; 3]);
    }

    #[test]
    fn identical_masks_use_overlap_colour() {
        let spec = OverlaySpec::default();
        assert_eq!(spec.overlap_color(), [128, 0, 128]);
        let img = render_overlay(&ct(), &mask(&[5, 6]), &mask(&[5, 6]), &spec).unwrap();
        assert_eq!(img.count([128, 0, 128]), 2);
    }

    #[test]
    fn disjoint_masks_pixel_counts() {
        let img = render_overlay(&ct(), &mask(&[0, 1]), &mask(&[14, 15]), &OverlaySpec::default()).unwrap();
        assert_eq!(img.count([0, 0, 255]), 2);
        assert_eq!(img.count([255, 0, 0]), 2);
    }

    #[test]
    fn mismatched_extents_and_same_colours() {
        let small = Plane::filled(3, 4, SP, 0u8);
        assert!(matches!(render_overlay(&ct(), &small, &mask(&[]), &OverlaySpec::default()), Err(Error::Shape(_))));
        let spec = OverlaySpec {
            pred_color: [0, 0, 255],
            ..Default::default()
        };
        assert!(matches!(render_overlay(&ct(), &mask(&[]), &mask(&[]), &spec), Err(Error::Config(_))));
    }

    #[test]
    fn png_is_deterministic() {
        let img = render_overlay(&ct(), &mask(&[0]), &mask(&[0, 3]), &OverlaySpec::default()).unwrap();
        let (a, b) = (img.to_png().unwrap(), img.to_png().unwrap());
        assert_eq!(a, b);
        assert_eq!(&a[1..4], b"PNG");
    }

    #[test]
    fn auto_slice_picks_largest_reference() {
        let e = Extents::new(3, 2, 2);
        let m = LabelMask::new(e, Spacing::isotropic(1.0).unwrap(), vec![1, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 0], LabelSchema::binary("l"))
            .unwrap();
        assert_eq!(select_slice(&m, SliceSelection::MaxGtArea).unwrap(), 1);
        assert_eq!(select_slice(&m, SliceSelection::Index(2)).unwrap(), 2);
        assert!(select_slice(&m, SliceSelection::Index(3)).is_err());
    }
}
