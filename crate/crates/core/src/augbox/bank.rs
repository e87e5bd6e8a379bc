use rand::Rng;

use crate::seed::rng_from_seed;

/// Procedurally generated distractor images used by the blending
/// augmentations. Each image is channel-first RGB, `3 x H x W`, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorBank {
    seed: u64,
    height: usize,
    width: usize,
    images: Vec<Vec<f64>>,
}

impl DistractorBank {
    pub const DEFAULT_SIZE: usize = 64;

    /// Cycles through colour gradients, multi-octave value noise and
    /// checkerboards. The content is a pure function of the arguments.
    pub fn generate(seed: u64, count: usize, height: usize, width: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let images = (0..count)
            .map(|i| match i % 3 {
                0 => gradient(&mut rng, height, width),
                1 => value_noise(&mut rng, height, width),
                _ => checkerboard(&mut rng, height, width),
            })
            .collect();
        Self {
            seed,
            height,
            width,
            images,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, index: usize) -> &[f64] {
        &self.images[index]
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> &'a [f64] {
        &self.images[rng.random_range(0..self.images.len())]
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn gradient<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Vec<f64> {
    let (a, b) = (color(rng), color(rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut img = vec![0.0; 3 * h * w];
    let span = (dx.abs() * w as f64 + dy.abs() * h as f64).max(1.0);
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64 * dx + y as f64 * dy) / span + 0.5;
            let t = p.clamp(0.0, 1.0);
            for c in 0..3 {
                img[(c * h + y) * w + x] = a[c] * (1.0 - t) + b[c] * t;
            }
        }
    }
    img
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Vec<f64> {
    let (a, b) = (color(rng), color(rng));
    let mut field = vec![0.0; h * w];
    let mut amplitude = 0.5;
    let mut total = 0.0;
    let mut cells = 2usize;
    for _ in 0..3 {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1))
            .map(|_| rng.random())
            .collect();
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 / w as f64 * cells as f64;
                let fy = y as f64 / h as f64 * cells as f64;
                let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (smoothstep(fx - ix as f64), smoothstep(fy - iy as f64));
                let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                field[y * w + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        total += amplitude;
        amplitude *= 0.5;
        cells *= 2;
    }
    let mut img = vec![0.0; 3 * h * w];
    for (i, v) in field.iter().enumerate() {
        let t = (v / total).clamp(0.0, 1.0);
        for c in 0..3 {
            img[c * h * w + i] = a[c] * (1.0 - t) + b[c] * t;
        }
    }
    img
}

fn checkerboard<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Vec<f64> {
    let (a, b) = (color(rng), color(rng));
    let size = rng.random_range(2..=(h.max(w) / 4).max(2));
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let col = if (x / size + y / size) % 2 == 0 { a } else { b };
            for c in 0..3 {
                img[(c * h + y) * w + x] = col[c];
            }
        }
    }
    img
}
