//! Weak (crop + flip) and strong (RandAugment-style) image augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::ImageTensor;

/// Strong-augmentation transforms, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    AutoContrast,
    Brightness,
    ColorBalance,
    Contrast,
    Equalize,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

pub const CATALOG: [Op; 13] = [
    Op::AutoContrast,
    Op::Brightness,
    Op::ColorBalance,
    Op::Contrast,
    Op::Equalize,
    Op::Posterize,
    Op::Rotate,
    Op::Sharpness,
    Op::ShearX,
    Op::ShearY,
    Op::Solarize,
    Op::TranslateX,
    Op::TranslateY,
];

pub const MAX_MAGNITUDE: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub n_ops: usize,
    /// Upper bound of the per-op magnitude level, 0..=10.
    pub magnitude: u32,
    /// Side of a gray cutout square as a fraction of the image side.
    pub cutout: Option<f64>,
}

impl AugmentPolicy {
    pub fn weak() -> Self {
        Self {
            kind: AugmentKind::Weak,
            n_ops: 0,
            magnitude: 0,
            cutout: None,
        }
    }

    pub fn strong(n_ops: usize, magnitude: u32) -> Self {
        Self {
            kind: AugmentKind::Strong,
            n_ops,
            magnitude: magnitude.min(MAX_MAGNITUDE),
            cutout: None,
        }
    }

    pub fn apply(&self, img: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
        match self.kind {
            AugmentKind::Weak => weak_augment(img, rng),
            AugmentKind::Strong => {
                let mut out = random_ops(img, rng, self.n_ops, self.magnitude);
                if let Some(frac) = self.cutout {
                    out = cutout(&out, rng, frac);
                }
                weak_augment(&out, rng)
            }
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, reproducible stream for one (sample, step, view).
pub fn stream_rng(run_seed: u64, sample_id: u64, step: u64, stream: u64) -> ChaCha8Rng {
    let seed = [run_seed, sample_id, step, stream]
        .into_iter()
        .fold(0x5EED_u64, |acc, v| mix(acc ^ mix(v)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reflection without repeating the edge pixel (`-1 → 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn padding(side: usize) -> usize {
    (0.125 * side as f64).round() as usize
}

/// Shifts by `(dy, dx)` within a reflect-padded frame, then optionally mirrors.
pub fn crop_flip(img: &ImageTensor, dy: isize, dx: isize, flip: bool) -> ImageTensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut out = img.clone();
    for y in 0..h {
        let sy = reflect(y as isize + dy, h);
        for x in 0..w {
            let xx = if flip { w - 1 - x } else { x };
            let sx = reflect(xx as isize + dx, w);
            for ch in 0..c {
                *out.at_mut(y, x, ch) = img.at(sy, sx, ch);
            }
        }
    }
    out
}

/// Reflect-pad by 12.5% of each side, crop back at a random offset, flip with
/// probability one half.
pub fn weak_augment(img: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
    let (py, px) = (padding(img.height) as isize, padding(img.width) as isize);
    let dy = rng.gen_range(-py..=py);
    let dx = rng.gen_range(-px..=px);
    let flip = rng.gen_bool(0.5);
    crop_flip(img, dy, dx, flip)
}

/// `n_ops` random catalog transforms at levels drawn from `1..=magnitude`,
/// followed by the weak crop and flip.
pub fn strong_augment(img: &ImageTensor, rng: &mut impl Rng, n_ops: usize, magnitude: u32) -> ImageTensor {
    AugmentPolicy::strong(n_ops, magnitude).apply(img, rng)
}

fn random_ops(img: &ImageTensor, rng: &mut impl Rng, n_ops: usize, magnitude: u32) -> ImageTensor {
    let mut out = img.clone();
    for _ in 0..n_ops {
        let op = CATALOG[rng.gen_range(0..CATALOG.len())];
        let level = if magnitude == 0 {
            0.0
        } else {
            rng.gen_range(1..=magnitude) as f64 / MAX_MAGNITUDE as f64
        };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        out = apply_op(&out, op, level, sign);
    }
    out
}

fn map_pixels(img: &ImageTensor, f: impl Fn(f64) -> f64) -> ImageTensor {
    let mut out = img.clone();
    out.pixels.iter_mut().for_each(|v| *v = f(*v).clamp(0.0, 1.0));
    out
}

fn blend(img: &ImageTensor, degenerate: &ImageTensor, factor: f64) -> ImageTensor {
    let mut out = img.clone();
    for (o, d) in out.pixels.iter_mut().zip(&degenerate.pixels) {
        *o = (d + factor * (*o - d)).clamp(0.0, 1.0);
    }
    out
}

fn luma(img: &ImageTensor, y: usize, x: usize) -> f64 {
    if img.channels >= 3 {
        0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2)
    } else {
        img.at(y, x, 0)
    }
}

fn grayscale(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let l = luma(img, y, x);
            for c in 0..img.channels {
                *out.at_mut(y, x, c) = l;
            }
        }
    }
    out
}

fn quantize(v: f64) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

fn equalize(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    let c = img.channels;
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for px in img.pixels.chunks(c) {
            hist[quantize(px[ch])] += 1;
        }
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
        if nonzero.len() <= 1 {
            continue;
        }
        let total: usize = hist.iter().sum();
        let step = (total - nonzero[nonzero.len() - 1]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0usize; 256];
        let mut acc = step / 2;
        for (i, n) in hist.iter().enumerate() {
            lut[i] = (acc / step).min(255);
            acc += n;
        }
        for px in out.pixels.chunks_mut(c) {
            px[ch] = lut[quantize(px[ch])] as f64 / 255.0;
        }
    }
    out
}

fn autocontrast(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    let c = img.channels;
    for ch in 0..c {
        let (lo, hi) = img
            .pixels
            .chunks(c)
            .map(|px| px[ch])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo {
            for px in out.pixels.chunks_mut(c) {
                px[ch] = (px[ch] - lo) / (hi - lo);
            }
        }
    }
    out
}

fn smooth(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    let (h, w) = (img.height, img.width);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for ch in 0..img.channels {
                let mut acc = 4.0 * img.at(y, x, ch);
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        acc += img.at(yy, xx, ch);
                    }
                }
                *out.at_mut(y, x, ch) = acc / 13.0;
            }
        }
    }
    out
}

/// Samples `img` at `src = a·(dst − center) + center + shift` with bilinear
/// interpolation and reflected borders.
fn affine(img: &ImageTensor, a: [[f64; 2]; 2], shift: [f64; 2]) -> ImageTensor {
    let (h, w) = (img.height, img.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            let sy = a[0][0] * ry + a[0][1] * rx + cy + shift[0];
            let sx = a[1][0] * ry + a[1][1] * rx + cx + shift[1];
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let (ya, yb) = (reflect(y0, h), reflect(y0 + 1, h));
            let (xa, xb) = (reflect(x0, w), reflect(x0 + 1, w));
            for ch in 0..img.channels {
                let v = (1.0 - fy) * ((1.0 - fx) * img.at(ya, xa, ch) + fx * img.at(ya, xb, ch))
                    + fy * ((1.0 - fx) * img.at(yb, xa, ch) + fx * img.at(yb, xb, ch));
                *out.at_mut(y, x, ch) = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// One catalog transform at `level` in `[0, 1]`; `sign` picks the direction
/// of signed transforms.
pub fn apply_op(img: &ImageTensor, op: Op, level: f64, sign: f64) -> ImageTensor {
    let factor = 1.0 + sign * 0.9 * level;
    match op {
        Op::AutoContrast => autocontrast(img),
        Op::Equalize => equalize(img),
        Op::Brightness => map_pixels(img, |v| v * factor),
        Op::ColorBalance => blend(img, &grayscale(img), factor),
        Op::Contrast => {
            let n = (img.height * img.width) as f64;
            let mean = (0..img.height)
                .flat_map(|y| (0..img.width).map(move |x| (y, x)))
                .map(|(y, x)| luma(img, y, x))
                .sum::<f64>()
                / n;
            map_pixels(img, |v| mean + factor * (v - mean))
        }
        Op::Sharpness => blend(img, &smooth(img), factor),
        Op::Posterize => {
            let bits = 8 - (4.0 * level).round() as u32;
            let mask = !((1usize << (8 - bits)) - 1) & 0xFF;
            map_pixels(img, |v| (quantize(v) & mask) as f64 / 255.0)
        }
        Op::Solarize => solarize(img, 1.0 - level),
        Op::Rotate => {
            let t = (sign * 30.0 * level).to_radians();
            let (s, c) = t.sin_cos();
            affine(img, [[c, -s], [s, c]], [0.0, 0.0])
        }
        Op::ShearX => affine(img, [[1.0, 0.0], [sign * 0.3 * level, 1.0]], [0.0, 0.0]),
        Op::ShearY => affine(img, [[1.0, sign * 0.3 * level], [0.0, 1.0]], [0.0, 0.0]),
        Op::TranslateX => affine(img, [[1.0, 0.0], [0.0, 1.0]], [0.0, sign * 0.3 * level * img.width as f64]),
        Op::TranslateY => affine(img, [[1.0, 0.0], [0.0, 1.0]], [sign * 0.3 * level * img.height as f64, 0.0]),
    }
}

/// Inverts every value at or above `threshold`.
pub fn solarize(img: &ImageTensor, threshold: f64) -> ImageTensor {
    map_pixels(img, |v| if v >= threshold { 1.0 - v } else { v })
}

fn cutout(img: &ImageTensor, rng: &mut impl Rng, frac: f64) -> ImageTensor {
    let mut out = img.clone();
    let side = ((frac * img.height.min(img.width) as f64).round() as usize).max(1);
    let cy = rng.gen_range(0..img.height) as isize;
    let cx = rng.gen_range(0..img.width) as isize;
    let half = (side / 2) as isize;
    for y in (cy - half).max(0)..(cy - half + side as isize).min(img.height as isize) {
        for x in (cx - half).max(0)..(cx - half + side as isize).min(img.width as isize) {
            for ch in 0..img.channels {
                *out.at_mut(y as usize, x as usize, ch) = 0.5;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        let n = h * w * c;
        let px = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        ImageTensor::new(7, h, w, c, px).unwrap()
    }

    fn in_range(img: &ImageTensor) -> bool {
        img.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    #[test]
    fn zero_offset_without_flip_is_identity() {
        let img = ramp(8, 8, 3);
        assert_eq!(crop_flip(&img, 0, 0, false), img);
        let flipped = crop_flip(&img, 0, 0, true);
        assert_eq!(flipped.at(2, 0, 1), img.at(2, 7, 1));
    }

    #[test]
    fn reflect_padding_does_not_repeat_the_edge() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-3, 1), 0);
        assert_eq!(padding(32), 4);
        assert_eq!(padding(8), 1);
    }

    #[test]
    fn same_stream_same_output() {
        let img = ramp(8, 8, 3);
        let a = strong_augment(&img, &mut stream_rng(1, 2, 3, 4), 2, 10);
        let b = strong_augment(&img, &mut stream_rng(1, 2, 3, 4), 2, 10);
        assert_eq!(a, b);
        let c = weak_augment(&img, &mut stream_rng(1, 2, 3, 4));
        let d = weak_augment(&img, &mut stream_rng(1, 2, 3, 4));
        assert_eq!(c, d);
    }

    #[test]
    fn constant_image_survives_weak_augmentation() {
        let img = ImageTensor::filled(0, 6, 6, 3, 0.3);
        let mut rng = stream_rng(0, 0, 0, 0);
        for _ in 0..10 {
            assert_eq!(weak_augment(&img, &mut rng), img);
        }
    }

    #[test]
    fn zero_ops_is_the_weak_path() {
        let img = ramp(8, 8, 3);
        let strong = strong_augment(&img, &mut stream_rng(9, 1, 1, 1), 0, 10);
        let weak = weak_augment(&img, &mut stream_rng(9, 1, 1, 1));
        assert_eq!(strong, weak);
    }

    #[test]
    fn solarize_at_zero_inverts() {
        let img = ImageTensor::filled(0, 2, 2, 1, 0.8);
        let out = solarize(&img, 0.0);
        assert!(out.pixels.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        let out = apply_op(&img, Op::Solarize, 1.0, 1.0);
        assert!(out.pixels.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn every_op_keeps_shape_and_range() {
        let img = ramp(8, 8, 3);
        for op in CATALOG {
            for level in [0.0, 0.5, 1.0] {
                for sign in [-1.0, 1.0] {
                    let out = apply_op(&img, op, level, sign);
                    assert_eq!(out.pixels.len(), img.pixels.len(), "{op:?}");
                    assert!(in_range(&out), "{op:?} at {level}");
                }
            }
        }
    }

    #[test]
    fn zero_level_geometric_ops_are_identity() {
        let img = ramp(5, 7, 2);
        for op in [Op::Rotate, Op::ShearX, Op::ShearY, Op::TranslateX, Op::TranslateY] {
            let out = apply_op(&img, op, 0.0, 1.0);
            for (a, b) in out.pixels.iter().zip(&img.pixels) {
                assert!((a - b).abs() < 1e-12, "{op:?}");
            }
        }
    }

    #[test]
    fn cutout_fills_gray() {
        let img = ImageTensor::filled(0, 8, 8, 1, 0.0);
        let mut policy = AugmentPolicy::strong(0, 10);
        policy.cutout = Some(0.5);
        let out = policy.apply(&img, &mut stream_rng(0, 0, 0, 0));
        assert!(out.pixels.contains(&0.5));
    }
}
