use super::{ImagingError, Raster, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheParams {
    /// Clip factor relative to a uniform histogram; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl ClaheParams {
    pub fn new(clip: f64) -> Self {
        Self {
            clip,
            tiles_x: 8,
            tiles_y: 8,
        }
    }

    pub fn with_tiles(mut self, tiles_x: usize, tiles_y: usize) -> Self {
        self.tiles_x = tiles_x;
        self.tiles_y = tiles_y;
        self
    }
}

struct TileGrid {
    bounds: Vec<(usize, usize)>,
    centers: Vec<f64>,
}

impl TileGrid {
    fn new(len: usize, tiles: usize) -> Self {
        let bounds: Vec<_> = (0..tiles)
            .map(|i| (i * len / tiles, (i + 1) * len / tiles))
            .collect();
        let centers = bounds.iter().map(|&(a, b)| (a + b) as f64 / 2.0).collect();
        Self { bounds, centers }
    }

    /// Neighbouring tile indices and the weight of the second one for a
    /// pixel centre at `p`.
    fn locate(&self, p: f64) -> (usize, usize, f64) {
        let last = self.centers.len() - 1;
        if p <= self.centers[0] {
            return (0, 0, 0.0);
        }
        if p >= self.centers[last] {
            return (last, last, 0.0);
        }
        let i = self.centers.partition_point(|&c| c <= p) - 1;
        let w = (p - self.centers[i]) / (self.centers[i + 1] - self.centers[i]);
        (i, i + 1, w)
    }
}

fn clip_histogram(hist: &mut [f64; 256], limit: f64) {
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / 256.0;
    for h in hist.iter_mut() {
        *h += share;
    }
}

fn tile_lut(l: &Raster, xr: (usize, usize), yr: (usize, usize), clip: f64) -> [u8; 256] {
    let mut hist = [0.0f64; 256];
    for y in yr.0..yr.1 {
        for x in xr.0..xr.1 {
            hist[l.get(x, y, 0) as usize] += 1.0;
        }
    }
    let area = ((xr.1 - xr.0) * (yr.1 - yr.0)) as f64;
    if clip.is_finite() {
        clip_histogram(&mut hist, clip * area / 256.0);
    }
    let mut lut = [0u8; 256];
    let mut cdf = 0.0;
    for (v, h) in hist.iter().enumerate() {
        cdf += h;
        lut[v] = (cdf / area * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Contrast-limited adaptive histogram equalization of a single-channel
/// raster, with bilinear blending between the per-tile mappings.
///
/// A raster smaller than the tile grid is equalized as a single tile.
pub fn clahe(l: &Raster, params: ClaheParams) -> Result<Raster> {
    l.require_channels(1)?;
    if !(params.clip > 0.0) {
        return Err(ImagingError::InvalidParameter(format!(
            "clahe clip must be positive, got {}",
            params.clip
        )));
    }
    if params.tiles_x == 0 || params.tiles_y == 0 {
        return Err(ImagingError::InvalidParameter(
            "clahe tile grid must be at least 1x1".into(),
        ));
    }
    if l.is_empty() {
        return Ok(l.clone());
    }
    let (mut tx, mut ty) = (params.tiles_x, params.tiles_y);
    if l.width() < tx || l.height() < ty {
        tx = 1;
        ty = 1;
    }
    let gx = TileGrid::new(l.width(), tx);
    let gy = TileGrid::new(l.height(), ty);

    let mut luts = Vec::with_capacity(tx * ty);
    for &yr in &gy.bounds {
        for &xr in &gx.bounds {
            luts.push(tile_lut(l, xr, yr, params.clip));
        }
    }

    let xs: Vec<_> = (0..l.width()).map(|x| gx.locate(x as f64 + 0.5)).collect();
    let mut out = Vec::with_capacity(l.pixel_count());
    for y in 0..l.height() {
        let (ty0, ty1, wy) = gy.locate(y as f64 + 0.5);
        for (x, &(tx0, tx1, wx)) in xs.iter().enumerate() {
            let v = l.get(x, y, 0) as usize;
            let top = (1.0 - wx) * luts[ty0 * tx + tx0][v] as f64 + wx * luts[ty0 * tx + tx1][v] as f64;
            let bot = (1.0 - wx) * luts[ty1 * tx + tx0][v] as f64 + wx * luts[ty1 * tx + tx1][v] as f64;
            out.push(((1.0 - wy) * top + wy * bot).round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::new(l.width(), l.height(), 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let r = Raster::filled(40, 30, 1, 90);
        let out = clahe(&r, ClaheParams::new(2.0)).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| v == first));
    }

    #[test]
    fn tiny_raster_falls_back_to_one_tile() {
        let r = Raster::from_fn_gray(5, 3, |x, y| (x * 40 + y * 10) as u8);
        let a = clahe(&r, ClaheParams::new(f64::INFINITY)).unwrap();
        let b = clahe(&r, ClaheParams::new(f64::INFINITY).with_tiles(1, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_params() {
        let r = Raster::filled(4, 4, 1, 0);
        assert!(clahe(&r, ClaheParams::new(0.0)).is_err());
        assert!(clahe(&r, ClaheParams::new(f64::NAN)).is_err());
        assert!(clahe(&r, ClaheParams::new(1.0).with_tiles(0, 2)).is_err());
        assert!(clahe(&Raster::filled(4, 4, 3, 0), ClaheParams::new(1.0)).is_err());
    }

    #[test]
    fn clipping_redistributes_all_counts() {
        let mut h = [0.0f64; 256];
        h[10] = 1000.0;
        h[20] = 24.0;
        clip_histogram(&mut h, 8.0);
        assert!((h.iter().sum::<f64>() - 1024.0).abs() < 1e-9);
        assert!(h.iter().all(|&v| v <= 8.0 + 1024.0 / 256.0));
    }
}
