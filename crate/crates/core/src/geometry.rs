//! Size of the proposal window in pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area of one high power field at field number 22, in mm².
pub const HPF_AREA_MM2: f64 = 0.237;
/// Fields counted for one mitotic count.
pub const HPF_FIELDS: u32 = 10;
/// Assumed width/height ratio of the counting region.
pub const HPF_ASPECT: f64 = 4.0 / 3.0;

/// Description of the counting region: `n_fields` fields of `area_mm2`
/// each, arranged as a rectangle with the given aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpfSpec {
    pub area_mm2: f64,
    pub n_fields: u32,
    pub aspect_w_over_h: f64,
}

impl Default for HpfSpec {
    fn default() -> Self {
        HpfSpec {
            area_mm2: HPF_AREA_MM2,
            n_fields: HPF_FIELDS,
            aspect_w_over_h: HPF_ASPECT,
        }
    }
}

impl HpfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_mm2 > 0.0 && self.area_mm2.is_finite()) {
            return Err(Error::domain(format!("HPF area must be positive, got {}", self.area_mm2)));
        }
        if self.n_fields == 0 {
            return Err(Error::domain("number of fields must be >= 1"));
        }
        if !(self.aspect_w_over_h > 0.0 && self.aspect_w_over_h.is_finite()) {
            return Err(Error::domain(format!(
                "aspect ratio must be positive, got {}",
                self.aspect_w_over_h
            )));
        }
        Ok(())
    }

    /// Total counting area in mm².
    pub fn total_area_mm2(&self) -> f64 {
        self.n_fields as f64 * self.area_mm2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSize {
    pub width_px: u32,
    pub height_px: u32,
}

impl WindowSize {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::domain(format!("window {width_px}x{height_px} must be positive")));
        }
        Ok(WindowSize { width_px, height_px })
    }

    pub fn area(&self) -> u64 {
        self.width_px as u64 * self.height_px as u64
    }
}

/// Window dimensions covering `spec.n_fields` fields at the given scanner
/// resolution (µm per pixel).
///
/// With the total area `n·A` in mm², the side lengths in µm are
/// `1000·sqrt(n·A·aspect)` and `1000·sqrt(n·A/aspect)`; dividing by the
/// resolution gives pixels. Results are rounded half away from zero and
/// never drop below one pixel.
pub fn hpf_window_pixels(spec: &HpfSpec, resolution_um_per_px: f64) -> Result<WindowSize> {
    spec.validate()?;
    if !(resolution_um_per_px > 0.0 && resolution_um_per_px.is_finite()) {
        return Err(Error::domain(format!(
            "resolution must be positive, got {resolution_um_per_px}"
        )));
    }
    let total = spec.total_area_mm2();
    let width_um = (total * spec.aspect_w_over_h).sqrt() * 1000.0;
    let height_um = (total / spec.aspect_w_over_h).sqrt() * 1000.0;
    Ok(WindowSize {
        width_px: to_pixels(width_um / resolution_um_per_px),
        height_px: to_pixels(height_um / resolution_um_per_px),
    })
}

fn to_pixels(v: f64) -> u32 {
    // f64::round is half away from zero
    v.round().clamp(1.0, u32::MAX as f64) as u32
}

/// Window dimensions at a reduced map scale, rounded to nearest and
/// clamped to at least one pixel.
pub fn window_at_scale(window: WindowSize, scale: u32) -> WindowSize {
    assert!(scale >= 1, "scale must be >= 1");
    let s = scale as f64;
    WindowSize {
        width_px: to_pixels(window.width_px as f64 / s),
        height_px: to_pixels(window.height_px as f64 / s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_at_quarter_micron() {
        let w = hpf_window_pixels(&HpfSpec::default(), 0.25).unwrap();
        assert_eq!(w, WindowSize { width_px: 7111, height_px: 5333 });
    }

    #[test]
    fn identity_area_gives_four_by_three() {
        for r in [0.1, 0.25, 0.5, 1.0, 3.7] {
            let spec = HpfSpec {
                area_mm2: r * r * 1e-6 * 12.0 / 10.0,
                ..HpfSpec::default()
            };
            let w = hpf_window_pixels(&spec, r).unwrap();
            assert_eq!((w.width_px, w.height_px), (4, 3), "r = {r}");
        }
    }

    #[test]
    fn aspect_ratio_holds_within_a_pixel() {
        for r in [0.2, 0.25, 0.3, 0.46, 1.0, 2.0] {
            let w = hpf_window_pixels(&HpfSpec::default(), r).unwrap();
            let expected_w = w.height_px as f64 * 4.0 / 3.0;
            assert!((w.width_px as f64 - expected_w).abs() <= 1.0 + 4.0 / 3.0 * 0.5, "r = {r}");
        }
    }

    #[test]
    fn rejects_bad_resolution_and_spec() {
        assert!(hpf_window_pixels(&HpfSpec::default(), 0.0).is_err());
        assert!(hpf_window_pixels(&HpfSpec::default(), -1.0).is_err());
        assert!(hpf_window_pixels(&HpfSpec::default(), f64::NAN).is_err());
        let bad = HpfSpec { n_fields: 0, ..HpfSpec::default() };
        assert!(hpf_window_pixels(&bad, 0.25).is_err());
    }

    #[test]
    fn scaled_windows() {
        let w = WindowSize { width_px: 7111, height_px: 5333 };
        assert_eq!(window_at_scale(w, 32), WindowSize { width_px: 222, height_px: 167 });
        assert_eq!(window_at_scale(w, 1), w);
        let small = WindowSize { width_px: 3, height_px: 3 };
        assert_eq!(window_at_scale(small, 8), WindowSize { width_px: 1, height_px: 1 });
    }

    #[test]
    fn half_pixel_rounds_away_from_zero() {
        let w = WindowSize { width_px: 3, height_px: 5 };
        assert_eq!(window_at_scale(w, 2), WindowSize { width_px: 2, height_px: 3 });
    }
}
