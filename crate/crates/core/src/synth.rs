//! Seeded synthetic scenes and weather degradations with known ground truth.

use crate::frame::FrameTruth;
use crate::geometry::{iou, BBox};
use crate::imaging::Raster;
use crate::wem::Condition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SKY: [u8; 3] = [220, 224, 230];
const GROUND: [f64; 3] = [70.0, 95.0, 22.0];
const PALETTE: [[u8; 3]; 5] = [
    [205, 40, 30],
    [30, 60, 195],
    [225, 205, 40],
    [25, 25, 28],
    [150, 35, 160],
];
const SAND_TINT: [f64; 3] = [190.0, 160.0, 110.0];
const SNOW_TINT: [f64; 3] = [235.0, 238.0, 242.0];

#[derive(Clone, Debug)]
pub struct Scene {
    pub raster: Raster,
    pub boxes: Vec<(u32, BBox)>,
}

/// Flat-textured ground under a bright sky band, with 2-4 saturated
/// rectangular objects that never overlap.
pub fn scene(width: usize, height: usize, rng: &mut impl Rng) -> Scene {
    let sky_rows = height / 5;
    let block = 8;
    let bw = width.div_ceil(block);
    let tex: Vec<f64> = (0..bw * height.div_ceil(block))
        .map(|_| rng.random_range(-8.0..8.0))
        .collect();
    let mut raster = Raster::from_fn_rgb(width, height, |x, y| {
        if y < sky_rows {
            SKY
        } else {
            let t = tex[(y / block) * bw + x / block];
            [
                (GROUND[0] + t).round() as u8,
                (GROUND[1] + t).round() as u8,
                (GROUND[2] + t * 0.5).round() as u8,
            ]
        }
    });

    let count = rng.random_range(2..=4);
    let mut boxes: Vec<(u32, BBox)> = Vec::new();
    let min_side = (width.min(height) / 8).max(6);
    let max_side = (width.min(height) / 3).max(min_side + 1);
    for _ in 0..count * 20 {
        if boxes.len() == count {
            break;
        }
        let w = rng.random_range(min_side..max_side);
        let h = rng.random_range(min_side..max_side);
        if w + 2 >= width || h + 2 + sky_rows >= height {
            continue;
        }
        let x = rng.random_range(1..width - w - 1);
        let y = rng.random_range(sky_rows + 1..height - h - 1);
        let b = BBox {
            x1: x as f64,
            y1: y as f64,
            x2: (x + w) as f64,
            y2: (y + h) as f64,
        };
        let padded = BBox {
            x1: b.x1 - 3.0,
            y1: b.y1 - 3.0,
            x2: b.x2 + 3.0,
            y2: b.y2 + 3.0,
        };
        if boxes.iter().any(|(_, o)| iou(o, &padded) > 0.0) {
            continue;
        }
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        for yy in y..y + h {
            for xx in x..x + w {
                for c in 0..3 {
                    raster.set(xx, yy, c, color[c]);
                }
            }
        }
        boxes.push((0, b));
    }
    Scene { raster, boxes }
}

fn blend(r: &Raster, keep: f64, tint: [f64; 3]) -> Raster {
    let mut out = r.clone();
    let ch = r.channels();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let t = tint[(i % ch).min(2)];
        *v = (*v as f64 * keep + t * (1.0 - keep)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Forward scattering model `I = J t0 + A (1 - t0)` with uniform transmission.
pub fn fog(clean: &Raster, t0: f64, atmosphere: [f64; 3]) -> Raster {
    blend(clean, t0, atmosphere)
}

/// Transmission used by the generator for a fog severity in [0,1].
pub fn fog_transmission(severity: f64) -> f64 {
    1.0 - 0.7 * severity.clamp(0.0, 1.0)
}

/// A bright vertical streak `width` pixels wide.
#[derive(Clone, Copy, Debug)]
pub struct Streak {
    pub x: usize,
    pub y: usize,
    pub len: usize,
    pub width: usize,
    pub boost: u8,
}

/// Adds streaks to a raster, returning the streaked raster and the mask of
/// touched pixels.
pub fn add_streaks(clean: &Raster, streaks: &[Streak]) -> (Raster, Raster) {
    let mut out = clean.clone();
    let mut mask = Raster::filled(clean.width(), clean.height(), 1, 0);
    for s in streaks {
        for y in s.y..(s.y + s.len).min(clean.height()) {
            for x in s.x..(s.x + s.width).min(clean.width()) {
                for c in 0..clean.channels() {
                    let v = clean.get(x, y, c).saturating_add(s.boost);
                    out.set(x, y, c, v);
                }
                mask.set(x, y, 0, 255);
            }
        }
    }
    (out, mask)
}

/// Non-overlapping random streaks at a density that grows with severity.
pub fn random_streaks(width: usize, height: usize, severity: f64, rng: &mut impl Rng) -> Vec<Streak> {
    let count = ((width * height) as f64 / 600.0 * (0.3 + severity.clamp(0.0, 1.0))).round() as usize;
    let mut taken = vec![false; width];
    let mut streaks = Vec::with_capacity(count);
    for _ in 0..count * 4 {
        if streaks.len() >= count || height < 12 || width < 8 {
            break;
        }
        let w = rng.random_range(1..=2);
        let x = rng.random_range(2..width - w - 2);
        if (x.saturating_sub(3)..x + w + 3).any(|c| taken.get(c).copied().unwrap_or(false)) {
            continue;
        }
        (x..x + w).for_each(|c| taken[c] = true);
        let len = rng.random_range(10..=(height / 2).max(11));
        let y = rng.random_range(0..height - len.min(height - 1));
        streaks.push(Streak {
            x,
            y,
            len,
            width: w,
            boost: rng.random_range(50..=80),
        });
    }
    streaks
}

/// Applies a condition at a severity to a clean scene.
pub fn degrade(clean: &Raster, condition: Condition, severity: f64, rng: &mut impl Rng) -> Raster {
    let s = severity.clamp(0.0, 1.0);
    match condition {
        Condition::Clear => clean.clone(),
        Condition::Fog => fog(clean, fog_transmission(s), SKY.map(f64::from)),
        Condition::Rain => {
            let streaks = random_streaks(clean.width(), clean.height(), s, rng);
            let dim = blend(clean, 0.85, [40.0, 42.0, 48.0]);
            add_streaks(&dim, &streaks).0
        }
        Condition::Sand => blend(clean, 1.0 - 0.6 * s, SAND_TINT),
        Condition::Snow => {
            let mut out = blend(clean, 1.0 - 0.6 * s, SNOW_TINT);
            let flakes = (clean.pixel_count() as f64 * 0.004 * s) as usize;
            for _ in 0..flakes {
                let x = rng.random_range(0..clean.width());
                let y = rng.random_range(0..clean.height());
                for c in 0..clean.channels() {
                    out.set(x, y, c, 250);
                }
            }
            out
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub name: String,
    pub clean: Raster,
    pub degraded: Raster,
    pub truth: FrameTruth,
}

/// `count` degraded scenes cycling through `conditions`, with severities
/// drawn from `[0.5, 1.0]`.
pub fn corpus(
    count: usize,
    conditions: &[Condition],
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<SyntheticImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let condition = conditions[i % conditions.len().max(1)];
            let severity = (rng.random_range(0.5..=1.0f64) * 1000.0).round() / 1000.0;
            let sc = scene(width, height, &mut rng);
            let degraded = degrade(&sc.raster, condition, severity, &mut rng);
            SyntheticImage {
                name: format!("{}_{i:04}", condition.as_str()),
                clean: sc.raster,
                degraded,
                truth: FrameTruth {
                    condition: Some(condition),
                    severity: Some(severity),
                    boxes: sc.boxes,
                },
            }
        })
        .collect()
}

/// A slowly panning video of one scene, for pipeline runs.
pub fn video(
    frames: usize,
    condition: Condition,
    severity: f64,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<(Raster, FrameTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = 24;
    let base = scene(width + pad, height, &mut rng);
    (0..frames)
        .map(|i| {
            let shift = (i / 4) % pad;
            let view = Raster::from_fn_rgb(width, height, |x, y| {
                let mut p = [0u8; 3];
                for (c, v) in p.iter_mut().enumerate() {
                    *v = base.raster.get(x + shift, y, c);
                }
                p
            });
            let boxes = base
                .boxes
                .iter()
                .filter_map(|(c, b)| {
                    let x1 = (b.x1 - shift as f64).max(0.0);
                    let x2 = (b.x2 - shift as f64).min(width as f64);
                    BBox::new(x1, b.y1, x2, b.y2).ok().map(|nb| (*c, nb))
                })
                .filter(|(_, b)| b.width() >= 4.0)
                .collect();
            let degraded = degrade(&view, condition, severity, &mut rng);
            (
                degraded,
                FrameTruth {
                    condition: Some(condition),
                    severity: Some(severity),
                    boxes,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_seeded() {
        let a = scene(96, 64, &mut ChaCha8Rng::seed_from_u64(3));
        let b = scene(96, 64, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.raster, b.raster);
        assert!(a.boxes.len() >= 2);
        for (i, (_, x)) in a.boxes.iter().enumerate() {
            for (_, y) in &a.boxes[i + 1..] {
                assert_eq!(iou(x, y), 0.0);
            }
        }
    }

    #[test]
    fn fog_compresses_contrast() {
        let r = Raster::from_fn_gray(4, 1, |x, _| (x * 80) as u8);
        let f = fog(&r, 0.5, [200.0; 3]);
        assert_eq!(f.data(), &[100, 140, 180, 220]);
    }

    #[test]
    fn streak_mask_matches_streaks() {
        let r = Raster::filled(20, 20, 3, 100);
        let (out, mask) = add_streaks(
            &r,
            &[Streak {
                x: 5,
                y: 2,
                len: 10,
                width: 2,
                boost: 60,
            }],
        );
        assert_eq!(mask.data().iter().filter(|&&m| m != 0).count(), 20);
        assert_eq!(out.get(5, 2, 0), 160);
        assert_eq!(out.get(4, 2, 0), 100);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = corpus(6, &[Condition::Fog, Condition::Rain], 80, 60, 11);
        let b = corpus(6, &[Condition::Fog, Condition::Rain], 80, 60, 11);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.degraded, y.degraded);
            assert_eq!(x.truth, y.truth);
        }
        assert_eq!(a[1].truth.condition, Some(Condition::Rain));
    }
}
