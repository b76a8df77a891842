use super::{edge_features, Raster, Result};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

// D65 reference white.
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            let c = i as f64 / 255.0;
            *v = if c <= 0.040_45 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        lut
    })
}

fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// CIELAB of one sRGB pixel with L* in [0,100] and unshifted a*, b*.
pub(crate) fn rgb_to_lab_f64(rgb: [u8; 3]) -> [f64; 3] {
    let lut = srgb_to_linear_lut();
    let (r, g, b) = (lut[rgb[0] as usize], lut[rgb[1] as usize], lut[rgb[2] as usize]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub(crate) fn lab_f64_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let x = XN * lab_f_inv(fx);
    let y = YN * lab_f_inv(fy);
    let z = ZN * lab_f_inv(fz);
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [r, g, b].map(|c| (linear_to_srgb(c) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// sRGB to 8-bit CIELAB: L rescaled to [0,255], a and b offset by 128.
pub fn to_lab(r: &Raster) -> Result<Raster> {
    r.require_channels(3)?;
    let mut out = Vec::with_capacity(r.data().len());
    for p in r.data().chunks_exact(3) {
        let [l, a, b] = rgb_to_lab_f64([p[0], p[1], p[2]]);
        out.push(quantize(l * 255.0 / 100.0));
        out.push(quantize(a + 128.0));
        out.push(quantize(b + 128.0));
    }
    Raster::new(r.width(), r.height(), 3, out)
}

/// Inverse of [`to_lab`].
pub fn from_lab(r: &Raster) -> Result<Raster> {
    r.require_channels(3)?;
    let mut out = Vec::with_capacity(r.data().len());
    for p in r.data().chunks_exact(3) {
        let lab = [
            p[0] as f64 * 100.0 / 255.0,
            p[1] as f64 - 128.0,
            p[2] as f64 - 128.0,
        ];
        out.extend_from_slice(&lab_f64_to_rgb(lab));
    }
    Raster::new(r.width(), r.height(), 3, out)
}

/// The five scalar features the weather estimator works from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabStats {
    /// Mean of the 8-bit L channel.
    pub mu_l: f64,
    /// Population standard deviation of the 8-bit L channel.
    pub sigma_l: f64,
    /// Mean HSV saturation on a [0,255] scale.
    pub mu_s: f64,
    /// Fraction of edge pixels.
    pub rho_e: f64,
    /// Vertical-structure to horizontal-structure edge ratio.
    pub r_v: f64,
}

/// Computes [`LabStats`] for an RGB (or gray, treated as RGB) raster.
pub fn lab_stats(r: &Raster) -> Result<LabStats> {
    let rgb = r.to_rgb();
    let lab = to_lab(&rgb)?;
    let l = lab.channel(0);
    let n = l.pixel_count().max(1) as f64;
    let mu_l = l.mean();
    let var = l
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mu_l;
            d * d
        })
        .sum::<f64>()
        / n;
    let mu_s = rgb
        .data()
        .chunks_exact(3)
        .map(|p| {
            let max = p[0].max(p[1]).max(p[2]) as f64;
            let min = p[0].min(p[1]).min(p[2]) as f64;
            if max == 0.0 {
                0.0
            } else {
                (max - min) * 255.0 / max
            }
        })
        .sum::<f64>()
        / n;
    let (rho_e, r_v) = edge_features(&l);
    Ok(LabStats {
        mu_l,
        sigma_l: var.sqrt(),
        mu_s,
        rho_e,
        r_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_endpoints() {
        let black = Raster::filled(2, 2, 3, 0);
        let white = Raster::filled(2, 2, 3, 255);
        assert_eq!(to_lab(&black).unwrap().get(0, 0, 0), 0);
        let w = to_lab(&white).unwrap();
        assert_eq!(w.get(1, 1, 0), 255);
        assert_eq!(w.get(1, 1, 1), 128);
        assert_eq!(w.get(1, 1, 2), 128);
    }

    #[test]
    fn gray_input_rejected() {
        assert!(to_lab(&Raster::filled(2, 2, 1, 9)).is_err());
    }

    #[test]
    fn saturation_of_gray_is_zero() {
        let s = lab_stats(&Raster::filled(8, 8, 3, 77)).unwrap();
        assert_eq!(s.mu_s, 0.0);
        assert_eq!(s.sigma_l, 0.0);
        assert_eq!(s.rho_e, 0.0);
    }
}
