use super::{ImagingError, Raster, Result};
use std::collections::VecDeque;

/// Edge-preserving bilateral smoothing over a `d`x`d` window.
///
/// `sigma` drives both the spatial and the range Gaussian. Range distance is
/// the squared Euclidean distance across channels.
pub fn bilateral(r: &Raster, d: usize, sigma: f64) -> Result<Raster> {
    if d == 0 || d % 2 == 0 {
        return Err(ImagingError::InvalidParameter(format!(
            "bilateral diameter must be odd and >= 1, got {d}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(ImagingError::InvalidParameter(format!(
            "bilateral sigma must be positive, got {sigma}"
        )));
    }
    if d == 1 || r.is_empty() {
        return Ok(r.clone());
    }
    let radius = (d / 2) as isize;
    let ch = r.channels();
    let inv = -1.0 / (2.0 * sigma * sigma);
    let mut spatial = Vec::with_capacity(d * d);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            spatial.push(((dx * dx + dy * dy) as f64 * inv).exp());
        }
    }
    let range: Vec<f64> = (0..=255 * 255 * ch)
        .map(|d2| (d2 as f64 * inv).exp())
        .collect();

    let mut out = r.clone();
    let mut acc = [0.0f64; 3];
    for y in 0..r.height() as isize {
        for x in 0..r.width() as isize {
            acc[..ch].fill(0.0);
            let mut wsum = 0.0;
            let mut k = 0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let mut d2 = 0usize;
                    for c in 0..ch {
                        let diff = r.get_clamped(x + dx, y + dy, c) as isize
                            - r.get(x as usize, y as usize, c) as isize;
                        d2 += (diff * diff) as usize;
                    }
                    let w = spatial[k] * range[d2];
                    k += 1;
                    wsum += w;
                    for c in 0..ch {
                        acc[c] += w * r.get_clamped(x + dx, y + dy, c) as f64;
                    }
                }
            }
            for c in 0..ch {
                out.set(
                    x as usize,
                    y as usize,
                    c,
                    (acc[c] / wsum).round().clamp(0.0, 255.0) as u8,
                );
            }
        }
    }
    Ok(out)
}

/// `out = 255 * (in / 255)^(1/g)` on every sample; brightens for `g > 1`.
pub fn gamma_correct(r: &Raster, g: f64) -> Result<Raster> {
    if !(g >= 1.0) || !g.is_finite() {
        return Err(ImagingError::InvalidParameter(format!(
            "gamma must be >= 1, got {g}"
        )));
    }
    let mut lut = [0u8; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = (255.0 * (i as f64 / 255.0).powf(1.0 / g))
            .round()
            .clamp(0.0, 255.0) as u8;
    }
    let mut out = r.clone();
    for v in out.data_mut() {
        *v = lut[*v as usize];
    }
    Ok(out)
}

/// Per-channel square median filter of side `k` (odd).
pub fn median_filter(r: &Raster, k: usize) -> Result<Raster> {
    if k == 0 || k % 2 == 0 {
        return Err(ImagingError::InvalidParameter(format!(
            "median kernel must be odd, got {k}"
        )));
    }
    let radius = (k / 2) as isize;
    let mut out = r.clone();
    let mut window = Vec::with_capacity(k * k);
    for c in 0..r.channels() {
        for y in 0..r.height() as isize {
            for x in 0..r.width() as isize {
                window.clear();
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        window.push(r.get_clamped(x + dx, y + dy, c));
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable(mid);
                out.set(x as usize, y as usize, c, *m);
            }
        }
    }
    Ok(out)
}

/// Running minimum of a 1-D slice over a centred window of `2*radius+1`,
/// with edge replication. Monotone-deque sliding window, O(1) amortized.
fn running_min(src: &[f64], radius: usize, dst: &mut [f64]) {
    let n = src.len();
    let ext: Vec<f64> = (0..n + 2 * radius)
        .map(|j| src[j.saturating_sub(radius).min(n - 1)])
        .collect();
    let win = 2 * radius + 1;
    let mut dq: VecDeque<usize> = VecDeque::with_capacity(win);
    for (j, &v) in ext.iter().enumerate() {
        while dq.back().is_some_and(|&b| ext[b] >= v) {
            dq.pop_back();
        }
        dq.push_back(j);
        if dq[0] + win <= j {
            dq.pop_front();
        }
        if j + 1 >= win {
            dst[j + 1 - win] = ext[dq[0]];
        }
    }
}

/// Separable square minimum filter of side `k` over an `f64` plane.
///
/// Produces exactly the same values as the naive `k*k` window minimum.
pub fn min_filter(plane: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    assert_eq!(plane.len(), width * height);
    if k <= 1 || plane.is_empty() {
        return plane.to_vec();
    }
    let radius = k / 2;
    let mut rows = vec![0.0; plane.len()];
    for y in 0..height {
        running_min(
            &plane[y * width..(y + 1) * width],
            radius,
            &mut rows[y * width..(y + 1) * width],
        );
    }
    let mut out = vec![0.0; plane.len()];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = rows[y * width + x];
        }
        running_min(&col, radius, &mut col_out);
        for y in 0..height {
            out[y * width + x] = col_out[y];
        }
    }
    out
}

fn vertical_extreme(mask: &Raster, len: usize, take_min: bool) -> Result<Raster> {
    mask.require_channels(1)?;
    if len == 0 {
        return Err(ImagingError::InvalidParameter(
            "structuring element length must be >= 1".into(),
        ));
    }
    let above = ((len - 1) / 2) as isize;
    let below = (len / 2) as isize;
    let mut out = mask.clone();
    for y in 0..mask.height() as isize {
        for x in 0..mask.width() {
            let mut acc = if take_min { u8::MAX } else { u8::MIN };
            for dy in -above..=below {
                let v = mask.get_clamped(x as isize, y + dy, 0);
                acc = if take_min { acc.min(v) } else { acc.max(v) };
            }
            out.set(x, y as usize, 0, acc);
        }
    }
    Ok(out)
}

/// Grey erosion with a `1 x len` vertical structuring element.
pub fn erode_vertical(mask: &Raster, len: usize) -> Result<Raster> {
    vertical_extreme(mask, len, true)
}

/// Grey dilation with a `1 x len` vertical structuring element.
pub fn dilate_vertical(mask: &Raster, len: usize) -> Result<Raster> {
    // Reflected element: swap the above/below extents for even lengths.
    mask.require_channels(1)?;
    if len % 2 == 1 || len == 0 {
        return vertical_extreme(mask, len, false);
    }
    let above = (len / 2) as isize;
    let below = ((len - 1) / 2) as isize;
    let mut out = mask.clone();
    for y in 0..mask.height() as isize {
        for x in 0..mask.width() {
            let mut acc = 0u8;
            for dy in -above..=below {
                acc = acc.max(mask.get_clamped(x as isize, y + dy, 0));
            }
            out.set(x, y as usize, 0, acc);
        }
    }
    Ok(out)
}

/// Morphological opening (erode, then dilate) with a vertical line element.
/// Keeps vertical runs at least `len` tall; removes everything shorter.
pub fn morph_open_vertical(mask: &Raster, len: usize) -> Result<Raster> {
    dilate_vertical(&erode_vertical(mask, len)?, len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilateral_rejects_even_diameter() {
        let r = Raster::filled(3, 3, 1, 5);
        assert!(bilateral(&r, 4, 10.0).is_err());
        assert!(bilateral(&r, 3, 0.0).is_err());
    }

    #[test]
    fn gamma_endpoints_and_rejection() {
        let r = Raster::from_fn_gray(2, 1, |x, _| if x == 0 { 0 } else { 255 });
        for g in [1.0, 1.05, 1.4, 3.0] {
            assert_eq!(gamma_correct(&r, g).unwrap(), r);
        }
        assert!(gamma_correct(&r, 0.9).is_err());
    }

    #[test]
    fn median_removes_single_spike() {
        let mut r = Raster::filled(7, 7, 1, 40);
        r.set(3, 3, 0, 250);
        let m = median_filter(&r, 5).unwrap();
        assert!(m.data().iter().all(|&v| v == 40));
    }

    #[test]
    fn min_filter_matches_naive() {
        let (w, h) = (13, 9);
        let plane: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 23) as f64).collect();
        for k in [1, 3, 5, 15] {
            let fast = min_filter(&plane, w, h, k);
            let r = (k / 2) as isize;
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut m = f64::INFINITY;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                            let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                            m = m.min(plane[yy * w + xx]);
                        }
                    }
                    assert_eq!(fast[y as usize * w + x as usize], m);
                }
            }
        }
    }

    #[test]
    fn vertical_line_survives_opening_and_segment_does_not() {
        let line = Raster::from_fn_gray(9, 20, |x, y| if x == 4 && (5..15).contains(&y) { 255 } else { 0 });
        assert_eq!(morph_open_vertical(&line, 7).unwrap(), line);
        let seg = Raster::from_fn_gray(9, 20, |x, y| if y == 10 && (3..6).contains(&x) { 255 } else { 0 });
        assert!(morph_open_vertical(&seg, 7).unwrap().data().iter().all(|&v| v == 0));
    }
}
