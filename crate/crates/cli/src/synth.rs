//! Deterministic synthetic digit corpus.
//!
//! Renders ten stroke-skeleton glyphs onto 28x28 grids with seeded per-sample
//! jitter (rotation, scale, shift, stroke width), giving an offline,
//! reproducible stand-in wherever a real MNIST-format corpus is not on disk.
//! Classes are balanced; pixels land in [0,1].

use capsbench_core::data::Dataset;
use capsbench_core::tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 28;

type Stroke = Vec<(f32, f32)>;

fn ring(cx: f32, cy: f32, rx: f32, ry: f32) -> Stroke {
    let mut pts = Vec::with_capacity(13);
    for i in 0..=12 {
        let t = i as f32 / 12.0 * core::f32::consts::TAU;
        pts.push((cx + rx * t.cos(), cy + ry * t.sin()));
    }
    pts
}

/// Glyph skeletons in unit coordinates, y pointing down.
fn glyph(digit: u32) -> Vec<Stroke> {
    match digit {
        0 => vec![ring(0.5, 0.5, 0.24, 0.36)],
        1 => vec![vec![(0.36, 0.26), (0.52, 0.12), (0.52, 0.88)]],
        2 => vec![
            vec![
                (0.26, 0.30),
                (0.32, 0.16),
                (0.50, 0.12),
                (0.68, 0.18),
                (0.72, 0.34),
                (0.58, 0.52),
                (0.26, 0.86),
            ],
            vec![(0.26, 0.86), (0.76, 0.86)],
        ],
        3 => vec![
            vec![(0.28, 0.18), (0.48, 0.12), (0.68, 0.20), (0.68, 0.36), (0.48, 0.46)],
            vec![(0.48, 0.46), (0.70, 0.54), (0.72, 0.76), (0.50, 0.88), (0.28, 0.80)],
        ],
        4 => vec![
            vec![(0.62, 0.12), (0.26, 0.60), (0.78, 0.60)],
            vec![(0.62, 0.12), (0.62, 0.88)],
        ],
        5 => vec![
            vec![(0.72, 0.12), (0.30, 0.12), (0.28, 0.46)],
            vec![(0.28, 0.46), (0.56, 0.40), (0.72, 0.54), (0.70, 0.76), (0.48, 0.88), (0.28, 0.80)],
        ],
        6 => vec![
            vec![(0.64, 0.14), (0.42, 0.30), (0.32, 0.52), (0.32, 0.72)],
            ring(0.50, 0.68, 0.19, 0.19),
        ],
        7 => vec![vec![(0.24, 0.12), (0.76, 0.12), (0.44, 0.88)]],
        8 => vec![ring(0.5, 0.30, 0.18, 0.17), ring(0.5, 0.67, 0.21, 0.20)],
        9 => vec![
            ring(0.50, 0.32, 0.19, 0.19),
            vec![(0.68, 0.34), (0.66, 0.60), (0.56, 0.88)],
        ],
        other => unreachable!("digit {other} out of range"),
    }
}

fn dist_to_segment(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

fn render(digit: u32, rng: &mut ChaCha8Rng, pixels: &mut [f32]) {
    let rotation = rng.gen_range(-0.20f32..0.20);
    let scale = rng.gen_range(0.85f32..1.12);
    let shift_x = rng.gen_range(-1.8f32..1.8);
    let shift_y = rng.gen_range(-1.8f32..1.8);
    let half_width = rng.gen_range(0.85f32..1.35);

    let (sin, cos) = rotation.sin_cos();
    let side = SIDE as f32;
    let center = side / 2.0;
    let jitter = |(x, y): (f32, f32)| -> (f32, f32) {
        let ux = (x - 0.5) * side * scale;
        let uy = (y - 0.5) * side * scale;
        (
            cos * ux - sin * uy + center + shift_x,
            sin * ux + cos * uy + center + shift_y,
        )
    };

    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|s| s.into_iter().map(jitter).collect())
        .collect();

    for y in 0..SIDE {
        for x in 0..SIDE {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            let mut dist = f32::INFINITY;
            for stroke in &strokes {
                for seg in stroke.windows(2) {
                    let d = dist_to_segment(px, py, seg[0], seg[1]);
                    if d < dist {
                        dist = d;
                    }
                }
            }
            // Soft-edged stroke: full ink inside the half-width, ~0.9px falloff.
            let coverage = (1.0 - (dist - half_width) / 0.9).clamp(0.0, 1.0);
            pixels[y * SIDE + x] = coverage;
        }
    }
}

/// `n` synthetic digit images with balanced classes (label = index mod 10).
pub fn digits(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f32; n * SIDE * SIDE];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u32;
        labels.push(digit);
        render(digit, &mut rng, &mut data[i * SIDE * SIDE..(i + 1) * SIDE * SIDE]);
    }
    let images = Tensor::from_vec(&[n, 1, SIDE, SIDE], data).expect("shape");
    Dataset::new(images, labels, 10, "synthetic-digits").expect("valid dataset")
}

/// Seeded uniform-noise images at an arbitrary geometry with balanced
/// labels; enough for timing runs where content does not matter.
pub fn noise(n: usize, shape: (usize, usize, usize), num_classes: usize, seed: u64) -> Dataset {
    let (c, h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * c * h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    let labels: Vec<u32> = (0..n as u32).map(|i| i % num_classes as u32).collect();
    let images = Tensor::from_vec(&[n, c, h, w], data).expect("shape");
    Dataset::new(images, labels, num_classes, "synthetic-noise").expect("valid dataset")
}
