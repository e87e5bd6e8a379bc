//! Image augmentations over stacked RGB observations.

mod bank;

use std::cell::Cell;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradtape::Tensor;

pub use bank::DistractorBank;

pub const RGB: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid augmentation {spec}: {reason}")]
    InvalidSpec { spec: String, reason: String },
    #[error("invalid combination: {0}")]
    Combination(String),
    #[error("observation value {value} outside [0, 1] at index {index}")]
    Range { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, AugError>;

thread_local! {
    static APPLY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of augmentation invocations on the current thread. Used to check
/// that code paths which must see raw observations never augment.
pub fn invocation_count() -> u64 {
    APPLY_CALLS.with(|c| c.get())
}

fn record_invocation() {
    APPLY_CALLS.with(|c| c.set(c.get() + 1));
}

/// A stack of `K` RGB frames, shape `[K*3, H, W]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageObservation {
    tensor: Tensor,
}

impl ImageObservation {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() != 3 || !shape[0].is_multiple_of(RGB) {
            return Err(AugError::Shape(format!(
                "expected [K*3, H, W], got {shape:?}"
            )));
        }
        if let Some((index, &value)) = tensor
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(AugError::Range { index, value });
        }
        Ok(Self { tensor })
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[0] / RGB
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentationSpec {
    Identity,
    RandomShift {
        pad: usize,
    },
    RandomConv {
        kernel_size: usize,
    },
    Cutout {
        box_fraction: f64,
    },
    Mixup {
        lambda: f64,
    },
    Overlay {
        mu: f64,
    },
    #[serde(rename = "overlay_s")]
    OverlayS {
        mu: f64,
    },
}

/// Upper bound (exclusive) on the blend weight of the small overlay.
pub const OVERLAY_S_MAX: f64 = 0.20;

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(AugError::InvalidSpec {
                spec: self.to_string(),
                reason: reason.to_string(),
            })
        };
        match *self {
            Self::Identity | Self::RandomShift { .. } => Ok(()),
            Self::RandomConv { kernel_size } => {
                if kernel_size == 0 || kernel_size % 2 == 0 {
                    bad("kernel_size must be odd and positive")
                } else {
                    Ok(())
                }
            }
            Self::Cutout { box_fraction } => {
                if box_fraction > 0.0 && box_fraction < 1.0 {
                    Ok(())
                } else {
                    bad("box_fraction must lie in (0, 1)")
                }
            }
            Self::Mixup { lambda } => {
                if (0.0..=1.0).contains(&lambda) {
                    Ok(())
                } else {
                    bad("lambda must lie in [0, 1]")
                }
            }
            Self::Overlay { mu } => {
                if (0.0..1.0).contains(&mu) {
                    Ok(())
                } else {
                    bad("mu must lie in [0, 1)")
                }
            }
            Self::OverlayS { mu } => {
                if (0.0..OVERLAY_S_MAX).contains(&mu) {
                    Ok(())
                } else {
                    bad("mu must lie in [0, 0.20)")
                }
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::RandomShift { pad } => write!(f, "random_shift({pad})"),
            Self::RandomConv { kernel_size } => write!(f, "random_conv({kernel_size})"),
            Self::Cutout { box_fraction } => write!(f, "cutout({box_fraction})"),
            Self::Mixup { lambda } => write!(f, "mixup({lambda})"),
            Self::Overlay { mu } => write!(f, "overlay({mu})"),
            Self::OverlayS { mu } => write!(f, "overlay_s({mu})"),
        }
    }
}

/// How the overlay blend treats the distractor term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayMode {
    /// `(1 - mu) * obs + mu * eps`
    #[default]
    Convex,
    /// `(1 - mu) * obs + eps`, clamped.
    Literal,
}

/// Ordered augmentation combination with Identity at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AugmentationSpec>", into = "Vec<AugmentationSpec>")]
pub struct Combination {
    members: Vec<AugmentationSpec>,
}

impl TryFrom<Vec<AugmentationSpec>> for Combination {
    type Error = AugError;

    fn try_from(specs: Vec<AugmentationSpec>) -> Result<Self> {
        make_combination(&specs)
    }
}

impl From<Combination> for Vec<AugmentationSpec> {
    fn from(c: Combination) -> Self {
        c.members
    }
}

impl Combination {
    /// Identity plus random convolution, overlay and small overlay.
    pub fn default_set() -> Self {
        Self {
            members: vec![
                AugmentationSpec::Identity,
                AugmentationSpec::RandomConv { kernel_size: 3 },
                AugmentationSpec::Overlay { mu: 0.5 },
                AugmentationSpec::OverlayS { mu: 0.15 },
            ],
        }
    }

    /// Identity plus shift, random convolution, cutout and mixup; the set used
    /// to study magnitude imbalance and directional conflict.
    pub fn analysis_set() -> Self {
        Self {
            members: vec![
                AugmentationSpec::Identity,
                AugmentationSpec::RandomShift { pad: 4 },
                AugmentationSpec::RandomConv { kernel_size: 3 },
                AugmentationSpec::Cutout { box_fraction: 0.25 },
                AugmentationSpec::Mixup { lambda: 0.5 },
            ],
        }
    }

    pub fn identity_only() -> Self {
        Self {
            members: vec![AugmentationSpec::Identity],
        }
    }

    pub fn members(&self) -> &[AugmentationSpec] {
        &self.members
    }

    /// Number of gradients produced, `N + 1`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Identity and the first non-identity member (or Identity alone).
    pub fn single_aug(&self) -> Self {
        let mut members = vec![AugmentationSpec::Identity];
        members.extend(self.members.iter().copied().find(|s| !s.is_identity()));
        Self { members }
    }

    pub fn labels(&self) -> Vec<String> {
        self.members.iter().map(|s| s.to_string()).collect()
    }
}

/// Builds a combination with Identity at index 0. Identity is inserted when
/// absent and moved to the front when listed elsewhere.
pub fn make_combination(specs: &[AugmentationSpec]) -> Result<Combination> {
    if specs.is_empty() {
        return Err(AugError::Combination("no augmentations given".into()));
    }
    let identities = specs.iter().filter(|s| s.is_identity()).count();
    if identities > 1 {
        return Err(AugError::Combination(format!(
            "Identity listed {identities} times"
        )));
    }
    for s in specs {
        s.validate()?;
    }
    let mut members = vec![AugmentationSpec::Identity];
    members.extend(specs.iter().copied().filter(|s| !s.is_identity()));
    Ok(Combination { members })
}

/// Dimensions of one observation inside a flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

pub fn apply<R: Rng + ?Sized>(
    obs: &ImageObservation,
    spec: &AugmentationSpec,
    bank: &DistractorBank,
    rng: &mut R,
) -> Result<ImageObservation> {
    apply_with_mode(obs, spec, bank, rng, OverlayMode::Convex)
}

pub fn apply_with_mode<R: Rng + ?Sized>(
    obs: &ImageObservation,
    spec: &AugmentationSpec,
    bank: &DistractorBank,
    rng: &mut R,
    mode: OverlayMode,
) -> Result<ImageObservation> {
    let dims = Dims {
        c: obs.channels(),
        h: obs.height(),
        w: obs.width(),
    };
    let mut out = vec![0.0; obs.data().len()];
    apply_into(obs.data(), &mut out, dims, spec, bank, rng, mode)?;
    let tensor = Tensor::new(obs.as_tensor().shape().to_vec(), out)
        .map_err(|e| AugError::Shape(e.to_string()))?;
    Ok(ImageObservation { tensor })
}

/// Augments every sample of a `[B, K*3, H, W]` batch with independent draws.
pub fn augment_batch<R: Rng + ?Sized>(
    batch: &Tensor,
    spec: &AugmentationSpec,
    bank: &DistractorBank,
    rng: &mut R,
    mode: OverlayMode,
) -> Result<Tensor> {
    let shape = batch.shape();
    if shape.len() != 4 || !shape[1].is_multiple_of(RGB) {
        return Err(AugError::Shape(format!(
            "expected [B, K*3, H, W], got {shape:?}"
        )));
    }
    let dims = Dims {
        c: shape[1],
        h: shape[2],
        w: shape[3],
    };
    let n = dims.c * dims.plane();
    let mut out = vec![0.0; batch.len()];
    for (src, dst) in batch.data().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        apply_into(src, dst, dims, spec, bank, rng, mode)?;
    }
    Tensor::new(shape.to_vec(), out).map_err(|e| AugError::Shape(e.to_string()))
}

fn apply_into<R: Rng + ?Sized>(
    src: &[f64],
    dst: &mut [f64],
    dims: Dims,
    spec: &AugmentationSpec,
    bank: &DistractorBank,
    rng: &mut R,
    mode: OverlayMode,
) -> Result<()> {
    spec.validate()?;
    record_invocation();
    let needs_bank = matches!(
        spec,
        AugmentationSpec::Mixup { .. }
            | AugmentationSpec::Overlay { .. }
            | AugmentationSpec::OverlayS { .. }
    );
    if needs_bank && (bank.height() != dims.h || bank.width() != dims.w || bank.is_empty()) {
        return Err(AugError::Shape(format!(
            "distractor bank is {}x{} ({} images), observation is {}x{}",
            bank.height(),
            bank.width(),
            bank.len(),
            dims.h,
            dims.w
        )));
    }
    match *spec {
        AugmentationSpec::Identity => dst.copy_from_slice(src),
        AugmentationSpec::RandomShift { pad } => random_shift(src, dst, dims, pad, rng),
        AugmentationSpec::RandomConv { kernel_size } => {
            random_conv(src, dst, dims, kernel_size, rng)
        }
        AugmentationSpec::Cutout { box_fraction } => {
            let b = sample_cutout_box(rng, dims.h, dims.w, box_fraction);
            cutout(src, dst, dims, b);
        }
        AugmentationSpec::Mixup { lambda } => {
            let eps = bank.sample(rng);
            blend(src, dst, dims, eps, lambda, 1.0 - lambda);
        }
        AugmentationSpec::Overlay { mu } | AugmentationSpec::OverlayS { mu } => {
            let eps = bank.sample(rng);
            let eps_weight = match mode {
                OverlayMode::Convex => mu,
                OverlayMode::Literal => 1.0,
            };
            blend(src, dst, dims, eps, 1.0 - mu, eps_weight);
        }
    }
    Ok(())
}

/// Blends `obs` with one distractor image repeated over the stacked frames.
pub fn overlay(
    obs: &ImageObservation,
    distractor: &[f64],
    mu: f64,
    mode: OverlayMode,
) -> Result<ImageObservation> {
    if !(0.0..1.0).contains(&mu) {
        return Err(AugError::InvalidSpec {
            spec: format!("overlay({mu})"),
            reason: "mu must lie in [0, 1)".into(),
        });
    }
    let dims = Dims {
        c: obs.channels(),
        h: obs.height(),
        w: obs.width(),
    };
    if distractor.len() != RGB * dims.plane() {
        return Err(AugError::Shape(format!(
            "distractor has {} values, expected {}",
            distractor.len(),
            RGB * dims.plane()
        )));
    }
    let eps_weight = match mode {
        OverlayMode::Convex => mu,
        OverlayMode::Literal => 1.0,
    };
    let mut out = vec![0.0; obs.data().len()];
    blend(obs.data(), &mut out, dims, distractor, 1.0 - mu, eps_weight);
    let tensor = Tensor::new(obs.as_tensor().shape().to_vec(), out)
        .map_err(|e| AugError::Shape(e.to_string()))?;
    Ok(ImageObservation { tensor })
}

/// `a * obs + b * eps`, with `eps` repeated over the stacked frames.
fn blend(src: &[f64], dst: &mut [f64], dims: Dims, eps: &[f64], a: f64, b: f64) {
    let frame = RGB * dims.plane();
    for (s, d) in src.chunks_exact(frame).zip(dst.chunks_exact_mut(frame)) {
        for ((o, x), e) in d.iter_mut().zip(s).zip(eps) {
            *o = (a * x + b * e).clamp(0.0, 1.0);
        }
    }
}

fn random_shift<R: Rng + ?Sized>(
    src: &[f64],
    dst: &mut [f64],
    dims: Dims,
    pad: usize,
    rng: &mut R,
) {
    if pad == 0 {
        dst.copy_from_slice(src);
        return;
    }
    let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let (h, w) = (dims.h as isize, dims.w as isize);
    for c in 0..dims.c {
        let base = c * dims.plane();
        for y in 0..h {
            let sy = (y + dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let sx = (x + dx).clamp(0, w - 1) as usize;
                dst[base + y as usize * dims.w + x as usize] = src[base + sy * dims.w + sx];
            }
        }
    }
}

/// One random `3 -> 3` channel-mixing kernel, shared by every frame, with
/// replicate-edge padding; the result is min-max rescaled to `[0, 1]`.
fn random_conv<R: Rng + ?Sized>(src: &[f64], dst: &mut [f64], dims: Dims, k: usize, rng: &mut R) {
    let kernel: Vec<f64> = (0..RGB * RGB * k * k)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let r = k / 2;
    let (h, w) = (dims.h, dims.w);
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let plane = dims.plane();
    let mut padded = vec![0.0; RGB * ph * pw];
    for f in 0..dims.c / RGB {
        let frame = f * RGB * plane;
        for ci in 0..RGB {
            let src_plane = &src[frame + ci * plane..frame + (ci + 1) * plane];
            let pad_plane = &mut padded[ci * ph * pw..(ci + 1) * ph * pw];
            for py in 0..ph {
                let sy = py.saturating_sub(r).min(h - 1);
                let row = &src_plane[sy * w..(sy + 1) * w];
                let prow = &mut pad_plane[py * pw..(py + 1) * pw];
                prow[..r].fill(row[0]);
                prow[r..r + w].copy_from_slice(row);
                prow[r + w..].fill(row[w - 1]);
            }
        }
        for co in 0..RGB {
            let out = &mut dst[frame + co * plane..frame + (co + 1) * plane];
            out.fill(0.0);
            for ci in 0..RGB {
                let pad_plane = &padded[ci * ph * pw..(ci + 1) * ph * pw];
                for ky in 0..k {
                    for kx in 0..k {
                        let kv = kernel[((co * RGB + ci) * k + ky) * k + kx];
                        for y in 0..h {
                            let prow = &pad_plane[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            for (o, p) in out[y * w..(y + 1) * w].iter_mut().zip(prow) {
                                *o += kv * p;
                            }
                        }
                    }
                }
            }
        }
    }
    let (lo, hi) = dst
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let range = hi - lo;
    for v in dst.iter_mut() {
        *v = if range > 1e-12 {
            ((*v - lo) / range).clamp(0.0, 1.0)
        } else {
            0.5
        };
    }
}

/// Axis-aligned box `(top, left, height, width)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutoutBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CutoutBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Box with sides `floor(f*H) x floor(f*W)` at a uniformly drawn position.
pub fn sample_cutout_box<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, f: f64) -> CutoutBox {
    let bh = (f * h as f64).floor() as usize;
    let bw = (f * w as f64).floor() as usize;
    let top = rng.random_range(0..=h - bh);
    let left = rng.random_range(0..=w - bw);
    CutoutBox {
        top,
        left,
        height: bh,
        width: bw,
    }
}

fn cutout(src: &[f64], dst: &mut [f64], dims: Dims, b: CutoutBox) {
    dst.copy_from_slice(src);
    for c in 0..dims.c {
        for y in b.top..b.top + b.height {
            let row = c * dims.plane() + y * dims.w;
            dst[row + b.left..row + b.left + b.width].fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn obs(seed: u64, k: usize, h: usize, w: usize) -> ImageObservation {
        let mut rng = rng_from_seed(seed);
        let data = (0..k * RGB * h * w).map(|_| rng.random()).collect();
        ImageObservation::new(Tensor::new(vec![k * RGB, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn observation_validates_shape_and_range() {
        assert!(ImageObservation::new(Tensor::zeros(&[4, 2, 2])).is_err());
        let t = Tensor::new(vec![3, 1, 1], vec![0.0, 1.5, 0.2]).unwrap();
        assert_eq!(
            ImageObservation::new(t),
            Err(AugError::Range {
                index: 1,
                value: 1.5
            })
        );
    }

    #[test]
    fn identity_and_zero_shift_are_noops() {
        let o = obs(1, 3, 8, 8);
        let bank = DistractorBank::generate(0, 4, 8, 8);
        let mut rng = rng_from_seed(2);
        assert_eq!(
            apply(&o, &AugmentationSpec::Identity, &bank, &mut rng).unwrap(),
            o
        );
        let shift = AugmentationSpec::RandomShift { pad: 0 };
        assert_eq!(apply(&o, &shift, &bank, &mut rng).unwrap(), o);
    }

    #[test]
    fn shift_is_a_translation_with_edge_replication() {
        let o = obs(3, 1, 10, 10);
        let bank = DistractorBank::generate(0, 1, 10, 10);
        let spec = AugmentationSpec::RandomShift { pad: 2 };
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            let out = apply(&o, &spec, &bank, &mut rng).unwrap();
            // Recover the offset from the interior and check all pixels.
            let found = (-2isize..=2)
                .flat_map(|dy| (-2isize..=2).map(move |dx| (dy, dx)))
                .find(|&(dy, dx)| {
                    (0..3).all(|c| {
                        (0..10isize).all(|y| {
                            (0..10isize).all(|x| {
                                let sy = (y + dy).clamp(0, 9) as usize;
                                let sx = (x + dx).clamp(0, 9) as usize;
                                out.data()[c * 100 + y as usize * 10 + x as usize]
                                    == o.data()[c * 100 + sy * 10 + sx]
                            })
                        })
                    })
                });
            assert!(found.is_some(), "seed {seed}");
        }
    }

    #[test]
    fn cutout_zeroes_exactly_the_sampled_box() {
        let o = obs(4, 3, 12, 16);
        let bank = DistractorBank::generate(0, 1, 12, 16);
        let f = 0.3;
        let spec = AugmentationSpec::Cutout { box_fraction: f };
        let out = apply(&o, &spec, &bank, &mut rng_from_seed(9)).unwrap();
        let b = sample_cutout_box(&mut rng_from_seed(9), 12, 16, f);
        assert_eq!((b.height, b.width), (3, 4));
        for c in 0..9 {
            for y in 0..12 {
                for x in 0..16 {
                    let i = c * 192 + y * 16 + x;
                    let expected = if b.contains(y, x) { 0.0 } else { o.data()[i] };
                    assert_eq!(out.data()[i], expected);
                }
            }
        }
    }

    #[test]
    fn overlay_examples() {
        let t = Tensor::new(vec![6, 1, 1], vec![0.2; 6]).unwrap();
        let o = ImageObservation::new(t).unwrap();
        let eps = [0.8, 0.8, 0.8];
        let out = overlay(&o, &eps, 0.5, OverlayMode::Convex).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert_eq!(overlay(&o, &eps, 0.0, OverlayMode::Convex).unwrap(), o);
        let small = overlay(&o, &eps, 0.15, OverlayMode::Convex).unwrap();
        assert!((small.data()[0] - (0.85 * 0.2 + 0.15 * 0.8)).abs() < 1e-15);
        let literal = overlay(&o, &eps, 0.5, OverlayMode::Literal).unwrap();
        assert!(literal.data().iter().all(|v| (v - 0.9).abs() < 1e-15));
        assert!(overlay(&o, &eps, 1.0, OverlayMode::Convex).is_err());
        assert!(matches!(
            overlay(&o, &[0.1], 0.5, OverlayMode::Convex),
            Err(AugError::Shape(_))
        ));
    }

    #[test]
    fn mixup_broadcasts_one_image_over_frames() {
        let o = obs(5, 3, 6, 6);
        let bank = DistractorBank::generate(7, 1, 6, 6);
        let spec = AugmentationSpec::Mixup { lambda: 0.25 };
        let out = apply(&o, &spec, &bank, &mut rng_from_seed(0)).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            let e = bank.image(0)[i % 108];
            assert!((v - (0.25 * o.data()[i] + 0.75 * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn random_conv_fills_unit_range_and_shares_kernel_across_frames() {
        let single = obs(6, 1, 8, 8);
        let mut stacked = single.data().to_vec();
        stacked.extend_from_slice(single.data());
        let stacked = ImageObservation::new(Tensor::new(vec![6, 8, 8], stacked).unwrap()).unwrap();
        let bank = DistractorBank::generate(0, 1, 8, 8);
        let spec = AugmentationSpec::RandomConv { kernel_size: 3 };
        let out = apply(&stacked, &spec, &bank, &mut rng_from_seed(1)).unwrap();
        let (a, b) = out.data().split_at(192);
        assert_eq!(a, b);
        let lo = out.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = out.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn bank_shape_mismatch_is_structural() {
        let o = obs(1, 1, 8, 8);
        let bank = DistractorBank::generate(0, 2, 9, 8);
        let r = apply(
            &o,
            &AugmentationSpec::Overlay { mu: 0.5 },
            &bank,
            &mut rng_from_seed(0),
        );
        assert!(matches!(r, Err(AugError::Shape(_))));
    }

    #[test]
    fn spec_validation() {
        use AugmentationSpec::*;
        assert!(Overlay { mu: 1.0 }.validate().is_err());
        assert!(OverlayS { mu: 0.2 }.validate().is_err());
        assert!(OverlayS { mu: 0.15 }.validate().is_ok());
        assert!(Cutout { box_fraction: 0.0 }.validate().is_err());
        assert!(Cutout { box_fraction: 1.0 }.validate().is_err());
        assert!(RandomConv { kernel_size: 2 }.validate().is_err());
        assert!(Mixup { lambda: 1.1 }.validate().is_err());
    }

    #[test]
    fn combinations() {
        use AugmentationSpec::*;
        let d = Combination::default_set();
        assert_eq!(d.len(), 4);
        assert_eq!(
            d.members(),
            &[
                Identity,
                RandomConv { kernel_size: 3 },
                Overlay { mu: 0.5 },
                OverlayS { mu: 0.15 }
            ]
        );
        let a = Combination::analysis_set();
        assert_eq!(a.labels()[1..].len(), 4);
        assert!(make_combination(&[]).is_err());
        assert!(make_combination(&[Identity, Identity]).is_err());
        let c = make_combination(&[Overlay { mu: 0.5 }, Identity]).unwrap();
        assert_eq!(c.members(), &[Identity, Overlay { mu: 0.5 }]);
        assert_eq!(
            make_combination(&[Identity]).unwrap(),
            Combination::identity_only()
        );
        assert_eq!(
            d.single_aug().members(),
            &[Identity, RandomConv { kernel_size: 3 }]
        );
        assert!(make_combination(&[Overlay { mu: 2.0 }]).is_err());
    }

    #[test]
    fn combination_serde_roundtrip() {
        let d = Combination::default_set();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"kind\":\"overlay_s\""));
        let back: Combination = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let dup = r#"[{"kind":"identity"},{"kind":"identity"}]"#;
        assert!(serde_json::from_str::<Combination>(dup).is_err());
    }

    #[test]
    fn invocations_are_counted() {
        let o = obs(1, 1, 4, 4);
        let bank = DistractorBank::generate(0, 1, 4, 4);
        let before = invocation_count();
        apply(
            &o,
            &AugmentationSpec::Identity,
            &bank,
            &mut rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(invocation_count(), before + 1);
    }
}
