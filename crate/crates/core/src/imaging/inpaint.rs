//! Fast-marching inpainting after Telea: masked pixels are filled in order of
//! their distance from the mask boundary, each as a weighted first-order
//! extrapolation from already-known neighbours within `radius`.

use super::{ImagingError, Raster, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

const FAR: f64 = 1.0e6;

#[derive(PartialEq)]
struct Entry {
    t: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on arrival time, index as a deterministic tie-break.
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct March<'a> {
    w: usize,
    h: usize,
    flags: Vec<Flag>,
    t: Vec<f64>,
    img: Vec<f64>,
    ch: usize,
    radius: isize,
    src: &'a Raster,
}

impl March<'_> {
    fn flag_at(&self, x: isize, y: isize) -> Flag {
        if x < 0 || y < 0 || x >= self.w as isize || y >= self.h as isize {
            Flag::Inside
        } else {
            self.flags[y as usize * self.w + x as usize]
        }
    }

    fn t_at(&self, x: isize, y: isize) -> f64 {
        self.t[y as usize * self.w + x as usize]
    }

    /// Upwind solution of |grad T| = 1 from two orthogonal neighbours.
    fn solve(&self, a: (isize, isize), b: (isize, isize)) -> f64 {
        let ka = self.flag_at(a.0, a.1) == Flag::Known;
        let kb = self.flag_at(b.0, b.1) == Flag::Known;
        match (ka, kb) {
            (true, true) => {
                let (t1, t2) = (self.t_at(a.0, a.1), self.t_at(b.0, b.1));
                let r = (2.0 - (t1 - t2) * (t1 - t2)).max(0.0).sqrt();
                let s = (t1 + t2 - r) / 2.0;
                if s >= t1 && s >= t2 {
                    s
                } else if s + r >= t1 && s + r >= t2 {
                    s + r
                } else {
                    FAR
                }
            }
            (true, false) => 1.0 + self.t_at(a.0, a.1),
            (false, true) => 1.0 + self.t_at(b.0, b.1),
            (false, false) => FAR,
        }
    }

    fn arrival(&self, x: isize, y: isize) -> f64 {
        let s1 = self.solve((x - 1, y), (x, y - 1));
        let s2 = self.solve((x + 1, y), (x, y - 1));
        let s3 = self.solve((x - 1, y), (x, y + 1));
        let s4 = self.solve((x + 1, y), (x, y + 1));
        s1.min(s2).min(s3).min(s4)
    }

    /// One-sided or central difference of `value` along an axis, using only
    /// samples that are not still inside the hole.
    fn diff(&self, x: isize, y: isize, dx: isize, dy: isize, value: impl Fn(isize, isize) -> f64) -> f64 {
        let fwd = self.flag_at(x + dx, y + dy) != Flag::Inside;
        let bwd = self.flag_at(x - dx, y - dy) != Flag::Inside;
        match (fwd, bwd) {
            (true, true) => (value(x + dx, y + dy) - value(x - dx, y - dy)) * 0.5,
            (true, false) => value(x + dx, y + dy) - value(x, y),
            (false, true) => value(x, y) - value(x - dx, y - dy),
            (false, false) => 0.0,
        }
    }

    fn pixel(&self, x: isize, y: isize, c: usize) -> f64 {
        self.img[(y as usize * self.w + x as usize) * self.ch + c]
    }

    fn fill(&mut self, x: isize, y: isize) {
        let tp = self.t_at(x, y);
        let tval = |xx: isize, yy: isize| self.t_at(xx, yy);
        let gtx = self.diff(x, y, 1, 0, tval);
        let gty = self.diff(x, y, 0, 1, tval);

        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0;
        let r2 = self.radius * self.radius;
        for qy in y - self.radius..=y + self.radius {
            for qx in x - self.radius..=x + self.radius {
                if (qx, qy) == (x, y) || self.flag_at(qx, qy) == Flag::Inside {
                    continue;
                }
                let (rx, ry) = ((x - qx) as f64, (y - qy) as f64);
                let len2 = rx * rx + ry * ry;
                if len2 > r2 as f64 {
                    continue;
                }
                let dst = 1.0 / (len2 * len2.sqrt());
                let lev = 1.0 / (1.0 + (self.t_at(qx, qy) - tp).abs());
                let mut dir = (rx * gtx + ry * gty).abs();
                if dir <= 0.01 {
                    dir = 1.0e-6;
                }
                let wgt = dst * lev * dir;
                wsum += wgt;
                for (c, a) in acc.iter_mut().enumerate().take(self.ch) {
                    let val = |xx: isize, yy: isize| self.pixel(xx, yy, c);
                    let gx = self.diff(qx, qy, 1, 0, val);
                    let gy = self.diff(qx, qy, 0, 1, val);
                    *a += wgt * (self.pixel(qx, qy, c) + gx * rx + gy * ry);
                }
            }
        }
        let base = (y as usize * self.w + x as usize) * self.ch;
        for c in 0..self.ch {
            let v = if wsum > 0.0 {
                acc[c] / wsum
            } else {
                self.src.get(x as usize, y as usize, c) as f64
            };
            self.img[base + c] = v.clamp(0.0, 255.0);
        }
    }
}

/// Fills every pixel where `mask` is nonzero; all other pixels are returned
/// bit-identical to the input.
pub fn telea_inpaint(r: &Raster, mask: &Raster, radius: usize) -> Result<Raster> {
    mask.require_channels(1)?;
    r.require_same_size(mask)?;
    let (w, h) = (r.width(), r.height());
    let n = w * h;
    if mask.data().iter().all(|&m| m == 0) {
        return Ok(r.clone());
    }
    if mask.data().iter().all(|&m| m != 0) {
        return Err(ImagingError::FullyMasked);
    }

    let mut flags: Vec<Flag> = mask
        .data()
        .iter()
        .map(|&m| if m != 0 { Flag::Inside } else { Flag::Known })
        .collect();
    let mut t: Vec<f64> = flags
        .iter()
        .map(|f| if *f == Flag::Inside { FAR } else { 0.0 })
        .collect();
    let mut heap = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if flags[i] != Flag::Known {
                continue;
            }
            let touches_hole = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                xx >= 0
                    && yy >= 0
                    && (xx as usize) < w
                    && (yy as usize) < h
                    && flags[yy as usize * w + xx as usize] == Flag::Inside
            });
            if touches_hole {
                flags[i] = Flag::Band;
                t[i] = 0.0;
                heap.push(Entry { t: 0.0, idx: i });
            }
        }
    }

    let mut m = March {
        w,
        h,
        flags,
        t,
        img: r.data().iter().map(|&v| v as f64).collect(),
        ch: r.channels(),
        radius: radius.max(1) as isize,
        src: r,
    };

    while let Some(Entry { idx, .. }) = heap.pop() {
        if m.flags[idx] == Flag::Known {
            continue;
        }
        m.flags[idx] = Flag::Known;
        let (x, y) = ((idx % w) as isize, (idx / w) as isize);
        for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let ni = ny as usize * w + nx as usize;
            if m.flags[ni] == Flag::Known {
                continue;
            }
            let arrival = m.arrival(nx, ny);
            m.t[ni] = arrival;
            m.fill(nx, ny);
            m.flags[ni] = Flag::Band;
            heap.push(Entry { t: arrival, idx: ni });
        }
    }

    let mut out = r.clone();
    let ch = r.channels();
    for i in 0..n {
        if mask.data()[i] != 0 {
            for c in 0..ch {
                out.data_mut()[i * ch + c] = m.img[i * ch + c].round() as u8;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_is_identity() {
        let r = Raster::from_fn_rgb(6, 5, |x, y| [x as u8 * 9, y as u8 * 7, 3]);
        let mask = Raster::filled(6, 5, 1, 0);
        assert_eq!(telea_inpaint(&r, &mask, 3).unwrap(), r);
    }

    #[test]
    fn full_mask_is_an_error() {
        let r = Raster::filled(4, 4, 1, 10);
        let mask = Raster::filled(4, 4, 1, 255);
        assert!(matches!(
            telea_inpaint(&r, &mask, 3),
            Err(ImagingError::FullyMasked)
        ));
    }

    #[test]
    fn single_hole_in_constant_region() {
        let mut r = Raster::filled(9, 9, 3, 120);
        r.set(4, 4, 1, 0);
        let mut mask = Raster::filled(9, 9, 1, 0);
        mask.set(4, 4, 0, 255);
        let out = telea_inpaint(&r, &mask, 3).unwrap();
        assert_eq!(out, Raster::filled(9, 9, 3, 120));
    }
}
