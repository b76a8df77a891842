use super::Raster;

/// Hysteresis thresholds on the (unnormalized) Sobel L2 magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeThresholds {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
        }
    }
}

pub(crate) fn sobel(gray: &Raster) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (gray.width(), gray.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| gray.get_clamped(x + dx, y + dy, 0) as f64;
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Unnormalized Sobel L2 gradient magnitude of a single-channel raster.
pub fn sobel_magnitude(gray: &Raster) -> Vec<f64> {
    let (gx, gy) = sobel(gray);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// Canny-style edge map: Sobel gradients, non-maximum suppression along the
/// quantized gradient direction, then hysteresis. Returns the edge mask
/// together with the gradient components.
pub fn canny_edges(gray: &Raster, th: EdgeThresholds) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let gray = gray.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let (gx, gy) = sobel(&gray);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // 0 = not an edge, 1 = weak, 2 = strong.
    let mut class = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m < th.low {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            if m > at(x - dx, y - dy) && m >= at(x + dx, y + dy) {
                class[i] = if m >= th.high { 2 } else { 1 };
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| class[i] == 2).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !edges[j] {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    (edges, gx, gy)
}

/// Edge density and vertical-structure ratio.
///
/// An edge pixel whose gradient lies within 22.5 degrees of horizontal marks
/// vertical structure; within 22.5 degrees of vertical, horizontal structure.
/// `r_v` is their ratio; with no horizontal-structure pixels the vertical
/// count itself is returned (0 when both are empty).
pub fn edge_features(gray: &Raster) -> (f64, f64) {
    if gray.is_empty() {
        return (0.0, 0.0);
    }
    let (edges, gx, gy) = canny_edges(gray, EdgeThresholds::default());
    let mut total = 0usize;
    let mut vertical = 0usize;
    let mut horizontal = 0usize;
    for (i, &e) in edges.iter().enumerate() {
        if !e {
            continue;
        }
        total += 1;
        let angle = gy[i].abs().atan2(gx[i].abs()).to_degrees();
        if angle <= 22.5 {
            vertical += 1;
        } else if angle >= 67.5 {
            horizontal += 1;
        }
    }
    let rho_e = total as f64 / edges.len() as f64;
    let r_v = if horizontal == 0 {
        vertical as f64
    } else {
        vertical as f64 / horizontal as f64
    };
    (rho_e, r_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_no_edges() {
        assert_eq!(edge_features(&Raster::filled(32, 32, 1, 128)), (0.0, 0.0));
    }

    #[test]
    fn stripes_orientation() {
        let vert = Raster::from_fn_gray(64, 64, |x, _| if (x / 4) % 2 == 0 { 30 } else { 220 });
        let horiz = Raster::from_fn_gray(64, 64, |_, y| if (y / 4) % 2 == 0 { 30 } else { 220 });
        let (rho_v, rv_v) = edge_features(&vert);
        let (rho_h, rv_h) = edge_features(&horiz);
        assert!(rho_v > 0.0 && rho_h > 0.0);
        assert!(rv_v > 3.0, "vertical stripes r_v = {rv_v}");
        assert!(rv_h < 1.0, "horizontal stripes r_v = {rv_h}");
    }
}
