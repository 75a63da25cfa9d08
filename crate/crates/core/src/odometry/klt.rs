use nalgebra::Vector2;

use crate::imaging::GreyImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KltConfig {
    pub levels: usize,
    /// Odd window side.
    pub window: usize,
    pub max_iters: usize,
    /// Stop once an update moves less than this many pixels.
    pub epsilon: f64,
    /// Forward-backward round-trip tolerance in pixels.
    pub fb_tolerance: f64,
    /// Minimum eigenvalue of the (mean-normalized) structure tensor.
    pub min_eigen: f64,
}

impl Default for KltConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 21,
            max_iters: 30,
            epsilon: 0.01,
            fb_tolerance: 1.0,
            min_eigen: 1e-4,
        }
    }
}

struct Level {
    w: usize,
    h: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

impl Level {
    fn new(w: usize, h: usize, img: Vec<f32>) -> Self {
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        let at = |x: usize, y: usize| img[y * w + x];
        // Scharr derivative, clamped at the borders.
        for y in 0..h {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                gx[y * w + x] = (3.0 * (at(xp, ym) - at(xm, ym)) + 10.0 * (at(xp, y) - at(xm, y)) + 3.0 * (at(xp, yp) - at(xm, yp))) / 32.0;
                gy[y * w + x] = (3.0 * (at(xm, yp) - at(xm, ym)) + 10.0 * (at(x, yp) - at(x, ym)) + 3.0 * (at(xp, yp) - at(xp, ym))) / 32.0;
            }
        }
        Self { w, h, img, gx, gy }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let k = [1.0f32, 4.0, 6.0, 4.0, 1.0];
        let src = |x: isize, y: isize| {
            let x = x.clamp(0, self.w as isize - 1) as usize;
            let y = y.clamp(0, self.h as isize - 1) as usize;
            self.img[y * self.w + x]
        };
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (2 * x as isize, 2 * y as isize);
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    for (i, ki) in k.iter().enumerate() {
                        acc += kj * ki * src(cx + i as isize - 2, cy + j as isize - 2);
                    }
                }
                out[y * w + x] = acc / 256.0;
            }
        }
        Level::new(w, h, out)
    }

    /// Bilinear samples of `buf` on the `(2 half + 1)²` grid centred at
    /// `(x, y)`, row-major, with coordinates clamped to the image.
    fn window(&self, buf: &[f32], x: f64, y: f64, half: isize, out: &mut Vec<f32>) {
        out.clear();
        let (w, h) = (self.w as isize, self.h as isize);
        let (x0, y0) = (x.floor(), y.floor());
        let (ax, ay) = ((x - x0) as f32, (y - y0) as f32);
        let (ix, iy) = (x0 as isize, y0 as isize);
        let (w00, w01, w10, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
        if ix - half >= 0 && iy - half >= 0 && ix + half + 1 < w && iy + half + 1 < h {
            let w = self.w;
            for dy in -half..=half {
                let row = ((iy + dy) as usize) * w;
                let next = row + w;
                for dx in -half..=half {
                    let c = (ix + dx) as usize;
                    out.push(w00 * buf[row + c] + w01 * buf[row + c + 1] + w10 * buf[next + c] + w11 * buf[next + c + 1]);
                }
            }
        } else {
            let at = |x: isize, y: isize| buf[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
            for dy in -half..=half {
                for dx in -half..=half {
                    let (cx, cy) = (ix + dx, iy + dy);
                    out.push(w00 * at(cx, cy) + w01 * at(cx + 1, cy) + w10 * at(cx, cy + 1) + w11 * at(cx + 1, cy + 1));
                }
            }
        }
    }
}

/// Gaussian image pyramid with precomputed gradients, built once per frame
/// and reused for both tracking directions.
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn new(img: &GreyImage, levels: usize) -> Self {
        let base = Level::new(img.width(), img.height(), img.to_f32());
        let mut out = vec![base];
        while out.len() < levels.max(1) {
            let next = out.last().unwrap().downsample();
            out.push(next);
        }
        Self { levels: out }
    }

    pub fn width(&self) -> usize {
        self.levels[0].w
    }

    pub fn height(&self) -> usize {
        self.levels[0].h
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Tracks one point from `self` into `next`. Returns `None` when the
    /// window is textureless, the iteration does not converge at full
    /// resolution, or the result leaves the image.
    pub fn track_point(&self, next: &Pyramid, p: Vector2<f64>, cfg: &KltConfig) -> Option<Vector2<f64>> {
        let half = (cfg.window / 2) as isize;
        let npx = (cfg.window * cfg.window) as f64;
        let top = self.depth().min(next.depth()) - 1;
        let mut g = Vector2::zeros();
        let (mut t, mut ix, mut iy, mut j) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for l in (0..=top).rev() {
            let (a, b) = (&self.levels[l], &next.levels[l]);
            let pl = p / (1u32 << l) as f64;
            a.window(&a.img, pl.x, pl.y, half, &mut t);
            a.window(&a.gx, pl.x, pl.y, half, &mut ix);
            a.window(&a.gy, pl.x, pl.y, half, &mut iy);
            let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
            for (&x, &y) in ix.iter().zip(&iy) {
                gxx += (x * x) as f64;
                gxy += (x * y) as f64;
                gyy += (y * y) as f64;
            }
            let det = gxx * gyy - gxy * gxy;
            let min_eig = (gxx + gyy - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / 2.0;
            if min_eig / npx < cfg.min_eigen || det <= 0.0 {
                return None;
            }
            let mut nu = Vector2::zeros();
            let mut converged = false;
            for _ in 0..cfg.max_iters {
                let off = pl + g + nu;
                b.window(&b.img, off.x, off.y, half, &mut j);
                let (mut bx, mut by) = (0.0f32, 0.0f32);
                for i in 0..t.len() {
                    let diff = t[i] - j[i];
                    bx += diff * ix[i];
                    by += diff * iy[i];
                }
                let (bx, by) = (bx as f64, by as f64);
                let eta = Vector2::new(gyy * bx - gxy * by, gxx * by - gxy * bx) / det;
                nu += eta;
                if eta.norm() < cfg.epsilon {
                    converged = true;
                    break;
                }
                if !nu.iter().all(|v| v.is_finite()) {
                    return None;
                }
            }
            if l == 0 && !converged {
                return None;
            }
            g = if l == 0 { g + nu } else { 2.0 * (g + nu) };
        }
        let q = p + g;
        let inside = q.x >= 0.0 && q.y >= 0.0 && q.x <= (self.width() - 1) as f64 && q.y <= (self.height() - 1) as f64;
        (inside && q.iter().all(|v| v.is_finite())).then_some(q)
    }
}

/// A tracked correspondence, or `None` where the point was dropped.
pub type Track = Option<Vector2<f64>>;

/// Pyramidal Lucas-Kanade from `prev` to `next` with a forward-backward
/// consistency check. Output is aligned with `points`.
pub fn klt_track(prev: &Pyramid, next: &Pyramid, points: &[Vector2<f64>], cfg: &KltConfig) -> Vec<Track> {
    assert_eq!(
        (prev.width(), prev.height()),
        (next.width(), next.height()),
        "tracking needs equal image sizes"
    );
    points
        .iter()
        .map(|&p| {
            let q = prev.track_point(next, p, cfg)?;
            let back = next.track_point(prev, q, cfg)?;
            ((back - p).norm() <= cfg.fb_tolerance).then_some(q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    // Smooth random texture: a sum of Gaussian bumps.
    fn texture(w: usize, h: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        let bumps: Vec<(f64, f64, f64, f64)> = (0..(w * h / 60))
            .map(|_| {
                (
                    rng.random_range(-10.0..(w as f64 + 10.0)),
                    rng.random_range(-10.0..(h as f64 + 10.0)),
                    rng.random_range(1.5..4.0),
                    rng.random_range(-60.0..60.0),
                )
            })
            .collect();
        let mut out = vec![128.0; w * h];
        for (bx, by, s, a) in bumps {
            let r = (4.0 * s) as isize;
            for y in (by as isize - r).max(0)..(by as isize + r).min(h as isize) {
                for x in (bx as isize - r).max(0)..(bx as isize + r).min(w as isize) {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    out[y as usize * w + x as usize] += a * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
        out
    }

    fn crop(tex: &[f64], tw: usize, x0: usize, y0: usize, w: usize, h: usize) -> GreyImage {
        GreyImage::from_fn(w, h, |x, y| tex[(y + y0) * tw + x + x0].round().clamp(0.0, 255.0) as u8)
    }

    fn grid(w: usize, h: usize) -> Vec<Vector2<f64>> {
        let mut v = Vec::new();
        for y in (20..h - 20).step_by(12) {
            for x in (20..w - 20).step_by(12) {
                v.push(Vector2::new(x as f64, y as f64));
            }
        }
        v
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn zero_motion() {
        let tex = texture(128, 128, 1);
        let img = crop(&tex, 128, 0, 0, 128, 128);
        let p = Pyramid::new(&img, 3);
        let pts = grid(128, 128);
        let tracks = klt_track(&p, &p, &pts, &KltConfig::default());
        let mut n = 0;
        for (a, t) in pts.iter().zip(&tracks) {
            if let Some(b) = t {
                assert!((b - a).norm() < 0.1);
                n += 1;
            }
        }
        assert!(n > pts.len() / 2);
    }

    #[test]
    fn two_pixel_shift() {
        let tex = texture(140, 128, 2);
        // next is the scene moved 2 px right: next(x) = prev(x - 2)
        let prev = crop(&tex, 140, 4, 0, 128, 128);
        let next = crop(&tex, 140, 2, 0, 128, 128);
        let (pp, pn) = (Pyramid::new(&prev, 3), Pyramid::new(&next, 3));
        let pts = grid(128, 128);
        let tracks = klt_track(&pp, &pn, &pts, &KltConfig::default());
        let (dx, dy): (Vec<f64>, Vec<f64>) = pts
            .iter()
            .zip(&tracks)
            .filter_map(|(a, t)| t.map(|b| (b.x - a.x, b.y - a.y)))
            .unzip();
        assert!(dx.len() > pts.len() / 2, "{} tracked", dx.len());
        assert!((median(dx) - 2.0).abs() < 0.25);
        assert!(median(dy).abs() < 0.25);
    }

    #[test]
    fn larger_shift_uses_pyramid() {
        let tex = texture(160, 128, 3);
        let prev = crop(&tex, 160, 20, 0, 128, 128);
        let next = crop(&tex, 160, 8, 0, 128, 128);
        let (pp, pn) = (Pyramid::new(&prev, 3), Pyramid::new(&next, 3));
        let pts = grid(128, 128);
        let dx: Vec<f64> = klt_track(&pp, &pn, &pts, &KltConfig::default())
            .iter()
            .zip(&pts)
            .filter_map(|(t, a)| t.map(|b| b.x - a.x))
            .collect();
        assert!((median(dx) - 12.0).abs() < 0.25);
    }

    #[test]
    fn out_of_bounds_dropped() {
        let tex = texture(140, 128, 4);
        let prev = crop(&tex, 140, 0, 0, 128, 128);
        let next = crop(&tex, 140, 8, 0, 128, 128);
        let (pp, pn) = (Pyramid::new(&prev, 3), Pyramid::new(&next, 3));
        // near the left edge, content moves 8 px left and out of frame
        let pts = vec![Vector2::new(2.0, 64.0), Vector2::new(0.0, 30.0)];
        let tracks = klt_track(&pp, &pn, &pts, &KltConfig::default());
        assert!(tracks.iter().all(|t| t.is_none_or(|q| q.x >= 0.0)));
        assert!(tracks.iter().all(|t| t.is_none()));
    }

    #[test]
    fn flat_image_drops_everything() {
        let img = GreyImage::filled(64, 64, 90);
        let p = Pyramid::new(&img, 3);
        let tracks = klt_track(&p, &p, &[Vector2::new(32.0, 32.0)], &KltConfig::default());
        assert_eq!(tracks, vec![None]);
    }
}
