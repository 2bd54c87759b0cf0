//! In-memory datasets and the transforms the experiments need: center
//! padding onto a larger grid, seeded random affine warps with bilinear
//! resampling, deterministic batching, and stratified subsetting.
//!
//! File parsing lives in the CLI crate; everything here is pure.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled image collection with pixels in [0,1], channels first.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u32>,
    num_classes: usize,
    pub name: String,
}

impl Dataset {
    /// Validates counts, label range, and pixel range.
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<u32>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "dataset",
                format!("images must be [n,c,h,w], got {shape:?}"),
            ));
        }
        if shape[0] != labels.len() {
            return Err(Error::contract(
                "dataset",
                format!("{} images but {} labels", shape[0], labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::contract(
                "dataset",
                format!("label {bad} outside [0,{num_classes})"),
            ));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("dataset", "pixel values must lie in [0,1]"));
        }
        Ok(Dataset { images, labels, num_classes, name: name.into() })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// (channels, height, width)
    pub fn geometry(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// New dataset holding the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (c, h, w) = self.geometry();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            data.extend_from_slice(&self.images.data()[ix * per..(ix + 1) * per]);
            labels.push(self.labels[ix]);
        }
        Dataset {
            images: Tensor::from_vec(&[indices.len(), c, h, w], data).expect("shape"),
            labels,
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&self, n: usize) -> Dataset {
        let keep: Vec<usize> = (0..n.min(self.n())).collect();
        self.select(&keep)
    }
}

/// First `per_class = n / num_classes` samples of every class, grouped by
/// class in ascending order. Classes short on samples contribute what they
/// have.
pub fn stratified_subset(dataset: &Dataset, n: usize) -> Dataset {
    let k = dataset.num_classes();
    let per_class = (n / k).max(1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (ix, &label) in dataset.labels().iter().enumerate() {
        let b = &mut buckets[label as usize];
        if b.len() < per_class {
            b.push(ix);
        }
    }
    let order: Vec<usize> = buckets.into_iter().flatten().collect();
    dataset.select(&order)
}

/// One-hot encodes labels into [n, num_classes].
pub fn one_hot(labels: &[u32], num_classes: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * num_classes + l as usize] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), num_classes], data).expect("shape")
}

/// Centers every image on a larger zero grid; total pixel mass is preserved
/// exactly.
pub fn pad_center(dataset: &Dataset, target: (usize, usize)) -> Result<Dataset> {
    let (c, h, w) = dataset.geometry();
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::geometry(
            "pad_center",
            format!("target {th}x{tw} smaller than source {h}x{w}"),
        ));
    }
    let oy = (th - h) / 2;
    let ox = (tw - w) / 2;
    let n = dataset.n();
    let mut out = vec![0.0f32; n * c * th * tw];
    let src = dataset.images().data();
    for img in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let s = ((img * c + ch) * h + y) * w;
                let d = ((img * c + ch) * th + (y + oy)) * tw + ox;
                out[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, c, th, tw], out)?,
        labels: dataset.labels().to_vec(),
        num_classes: dataset.num_classes(),
        name: dataset.name.clone(),
    })
}

/// Forward affine map about the image center: dst = A (src - center) +
/// center + translate.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub a: [[f32; 2]; 2],
    pub translate: (f32, f32),
}

impl AffineMap {
    pub fn identity() -> Self {
        AffineMap { a: [[1.0, 0.0], [0.0, 1.0]], translate: (0.0, 0.0) }
    }

    /// Rotation, isotropic scale, and x-shear composed as R * Sh * S.
    pub fn from_params(rotation_deg: f32, scale: f32, shear_deg: f32, tx: f32, ty: f32) -> Self {
        let theta = rotation_deg * core::f32::consts::PI / 180.0;
        let shear = Float::tan(shear_deg * core::f32::consts::PI / 180.0);
        let (sin, cos) = (Float::sin(theta), Float::cos(theta));
        let a = [
            [cos * scale, (cos * shear - sin) * scale],
            [sin * scale, (sin * shear + cos) * scale],
        ];
        AffineMap { a, translate: (tx, ty) }
    }
}

/// Resamples one channel plane through the inverse of `map`, bilinear with
/// zero fill. Integer-offset maps reproduce pixels exactly.
pub fn warp_affine(plane: &[f32], h: usize, w: usize, map: &AffineMap) -> Vec<f32> {
    debug_assert_eq!(plane.len(), h * w);
    let det = map.a[0][0] * map.a[1][1] - map.a[0][1] * map.a[1][0];
    debug_assert!(det != 0.0, "affine map must be invertible");
    let inv = [
        [map.a[1][1] / det, -map.a[0][1] / det],
        [-map.a[1][0] / det, map.a[0][0] / det],
    ];
    let cx = (w as f32 - 1.0) / 2.0;
    let cy = (h as f32 - 1.0) / 2.0;
    let mut out = vec![0.0f32; h * w];
    let tap = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let dx = x as f32 - cx - map.translate.0;
            let dy = y as f32 - cy - map.translate.1;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let x0 = Float::floor(sx);
            let y0 = Float::floor(sy);
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = (1.0 - fx) * tap(x0, y0) + fx * tap(x0 + 1, y0);
            let bottom = (1.0 - fx) * tap(x0, y0 + 1) + fx * tap(x0 + 1, y0 + 1);
            out[y * w + x] = (1.0 - fy) * top + fy * bottom;
        }
    }
    out
}

/// Random-affine sampling ranges. Rotation, shear, and translation are
/// symmetric around zero; scale is an explicit interval. All draws come
/// from the seed, so a spec is reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSpec {
    pub rotation_deg: f32,
    pub scale: (f32, f32),
    pub shear_deg: f32,
    pub translate_px: f32,
    pub seed: u64,
}

impl Default for AffineSpec {
    /// Ranges for the transformation-robustness evaluation: rotation within
    /// 20 degrees, scale 0.8-1.2, shear within 0.2 rad, translation within
    /// 8 px.
    fn default() -> Self {
        AffineSpec {
            rotation_deg: 20.0,
            scale: (0.8, 1.2),
            shear_deg: 11.459156,
            translate_px: 8.0,
            seed: 0,
        }
    }
}

impl AffineSpec {
    /// All-zero ranges and unit scale: transforms become the identity.
    pub fn identity(seed: u64) -> Self {
        AffineSpec { rotation_deg: 0.0, scale: (1.0, 1.0), shear_deg: 0.0, translate_px: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.0 > 0.0 && self.scale.1 >= self.scale.0) {
            return Err(Error::config(format!("invalid scale range {:?}", self.scale)));
        }
        if self.rotation_deg < 0.0 || self.shear_deg < 0.0 || self.translate_px < 0.0 {
            return Err(Error::config("affine ranges must be nonnegative"));
        }
        Ok(())
    }
}

fn sample_symmetric(rng: &mut ChaCha8Rng, max_abs: f32) -> f32 {
    if max_abs > 0.0 {
        rng.gen_range(-max_abs..max_abs)
    } else {
        0.0
    }
}

fn sample_interval(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Applies an independent random affine warp to every image. Deterministic
/// given the spec's seed; the identity spec returns bitwise-equal images.
pub fn affine_transform(dataset: &Dataset, spec: &AffineSpec) -> Result<Dataset> {
    spec.validate()?;
    let (c, h, w) = dataset.geometry();
    let n = dataset.n();
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src = dataset.images().data();
    let mut out = Vec::with_capacity(src.len());
    for img in 0..n {
        let rotation = sample_symmetric(&mut rng, spec.rotation_deg);
        let scale = sample_interval(&mut rng, spec.scale.0, spec.scale.1);
        let shear = sample_symmetric(&mut rng, spec.shear_deg);
        let tx = sample_symmetric(&mut rng, spec.translate_px);
        let ty = sample_symmetric(&mut rng, spec.translate_px);
        let map = AffineMap::from_params(rotation, scale, shear, tx, ty);
        for ch in 0..c {
            let base = (img * c + ch) * plane;
            out.extend_from_slice(&warp_affine(&src[base..base + plane], h, w, &map));
        }
    }
    // Bilinear interpolation of in-range pixels cannot leave [0,1].
    Dataset::new(
        Tensor::from_vec(&[n, c, h, w], out)?,
        dataset.labels().to_vec(),
        dataset.num_classes(),
        format!("{}-affine", dataset.name),
    )
}

/// One training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub one_hot: Tensor<f32>,
    pub labels: Vec<u32>,
    pub indices: Vec<usize>,
}

/// Ordered batch iterator. With a seed the order is a seeded permutation;
/// without, natural order. The final partial batch is included.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

pub fn batches(dataset: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    BatchIter { dataset, order, pos: 0, batch_size }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let sub = self.dataset.select(&indices);
        let one_hot = one_hot(sub.labels(), self.dataset.num_classes());
        Some(Batch { images: sub.images.clone(), one_hot, labels: sub.labels, indices })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, h: usize, w: usize) -> Dataset {
        let mut data = vec![0.0f32; n * h * w];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i % 17) as f32) / 17.0;
        }
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 10).collect();
        Dataset::new(Tensor::from_vec(&[n, 1, h, w], data).unwrap(), labels, 10, "toy").unwrap()
    }

    #[test]
    fn pad_center_places_margins() {
        let ones = Dataset::new(
            Tensor::filled(&[1, 1, 28, 28], 1.0f32),
            vec![0],
            10,
            "ones",
        )
        .unwrap();
        let padded = pad_center(&ones, (40, 40)).unwrap();
        let img = padded.images().data();
        let at = |y: usize, x: usize| img[y * 40 + x];
        assert_eq!(at(5, 20), 0.0);
        assert_eq!(at(6, 6), 1.0);
        assert_eq!(at(33, 33), 1.0);
        assert_eq!(at(34, 20), 0.0);
        let mass: f32 = img.iter().sum();
        assert_eq!(mass, 28.0 * 28.0);
    }

    #[test]
    fn pad_center_identity_when_already_target() {
        let ds = toy_dataset(2, 40, 40);
        let padded = pad_center(&ds, (40, 40)).unwrap();
        assert_eq!(padded.images().data(), ds.images().data());
    }

    #[test]
    fn pad_center_rejects_shrinking() {
        let ds = toy_dataset(1, 28, 28);
        let err = pad_center(&ds, (20, 20)).unwrap_err();
        assert!(matches!(err, Error::Geometry { .. }), "{err:?}");
    }

    #[test]
    fn identity_affine_is_bitwise_identity() {
        let ds = toy_dataset(3, 40, 40);
        let out = affine_transform(&ds, &AffineSpec::identity(9)).unwrap();
        assert_eq!(out.images().data(), ds.images().data());
    }

    #[test]
    fn integer_translation_moves_delta_exactly() {
        let mut plane = vec![0.0f32; 40 * 40];
        plane[12 * 40 + 10] = 1.0;
        let map = AffineMap { a: [[1.0, 0.0], [0.0, 1.0]], translate: (3.0, 2.0) };
        let out = warp_affine(&plane, 40, 40, &map);
        assert_eq!(out[14 * 40 + 13], 1.0);
        let total: f32 = out.iter().sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn seeded_affine_is_deterministic() {
        let ds = toy_dataset(4, 40, 40);
        let spec = AffineSpec { seed: 42, ..AffineSpec::default() };
        let a = affine_transform(&ds, &spec).unwrap();
        let b = affine_transform(&ds, &spec).unwrap();
        assert_eq!(a.images().data(), b.images().data());
        let other = affine_transform(&ds, &AffineSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.images().data(), other.images().data());
    }

    #[test]
    fn batch_sizes_partition_the_dataset() {
        let ds = toy_dataset(10, 20, 20);
        let sizes: Vec<usize> = batches(&ds, 4, None).map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);

        let mut seen: Vec<usize> = batches(&ds, 3, Some(7)).flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_order() {
        let ds = toy_dataset(10, 20, 20);
        let a: Vec<usize> = batches(&ds, 3, Some(5)).flat_map(|b| b.indices).collect();
        let b: Vec<usize> = batches(&ds, 3, Some(5)).flat_map(|b| b.indices).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_subset_balances_classes() {
        let ds = toy_dataset(100, 20, 20);
        let sub = stratified_subset(&ds, 20);
        assert_eq!(sub.n(), 20);
        for class in 0..10u32 {
            assert_eq!(sub.labels().iter().filter(|&&l| l == class).count(), 2);
        }
    }
}
