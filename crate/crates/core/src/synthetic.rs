//! Small class-dependent stroke images standing in for downsampled digits.

use rand::Rng;

use crate::codec::{build_latent_dataset, Codebook, ImageGrid, LatentDataset};
use crate::error::{config_err, Result};
use crate::rng::{stream, Purpose};

pub const SIDE: usize = 16;
pub const CLASSES: usize = 10;

type Stroke = &'static [(f32, f32)];

fn ellipse(cx: f32, cy: f32, rx: f32, ry: f32) -> Vec<(f32, f32)> {
    (0..=16)
        .map(|i| {
            let a = i as f32 / 16.0 * std::f32::consts::TAU;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Polylines in pixel coordinates `(x, y)` on a 16 x 16 canvas.
fn strokes(class: usize) -> Vec<Vec<(f32, f32)>> {
    const ONE: Stroke = &[(8.0, 2.0), (8.0, 13.5)];
    const TWO: Stroke = &[(4.0, 4.0), (8.0, 2.0), (12.0, 4.0), (12.0, 7.0), (4.0, 13.5), (12.0, 13.5)];
    const THREE: Stroke = &[(4.0, 2.0), (12.0, 2.0), (8.0, 7.0), (12.0, 10.0), (8.0, 13.5), (4.0, 12.5)];
    const FOUR: Stroke = &[(10.0, 13.5), (10.0, 2.0), (3.0, 10.0), (13.0, 10.0)];
    const FIVE: Stroke = &[(12.0, 2.0), (4.0, 2.0), (4.0, 7.0), (11.0, 8.0), (11.0, 13.0), (4.0, 13.5)];
    const SIX: Stroke = &[(11.0, 2.0), (5.0, 8.0), (5.0, 13.0), (11.0, 13.0), (11.0, 9.0), (5.0, 9.0)];
    const SEVEN: Stroke = &[(3.0, 2.0), (13.0, 2.0), (7.0, 13.5)];
    const NINE_TAIL: Stroke = &[(11.5, 5.0), (10.0, 13.5)];
    match class {
        0 => vec![ellipse(8.0, 8.0, 4.0, 5.5)],
        1 => vec![ONE.to_vec()],
        2 => vec![TWO.to_vec()],
        3 => vec![THREE.to_vec()],
        4 => vec![FOUR.to_vec()],
        5 => vec![FIVE.to_vec()],
        6 => vec![SIX.to_vec()],
        7 => vec![SEVEN.to_vec()],
        8 => vec![ellipse(8.0, 5.0, 3.0, 3.0), ellipse(8.0, 11.0, 3.5, 3.0)],
        _ => vec![ellipse(8.0, 5.5, 3.5, 3.5), NINE_TAIL.to_vec()],
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Render one jittered instance of `class`.
pub fn render<R: Rng>(class: usize, rng: &mut R) -> ImageGrid {
    let shift = (rng.gen_range(-1.5f32..1.5), rng.gen_range(-1.5f32..1.5));
    let scale = rng.gen_range(0.85f32..1.1);
    let width = rng.gen_range(0.6f32..1.2);
    let ink = rng.gen_range(0.8f32..1.0);
    let lines: Vec<Vec<(f32, f32)>> = strokes(class % CLASSES)
        .into_iter()
        .map(|l| {
            l.into_iter().map(|(x, y)| (8.0 + (x - 8.0) * scale + shift.0, 8.0 + (y - 8.0) * scale + shift.1)).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(SIDE * SIDE);
    for r in 0..SIDE {
        for c in 0..SIDE {
            let p = (c as f32 + 0.5, r as f32 + 0.5);
            let d = lines
                .iter()
                .flat_map(|l| l.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f32::INFINITY, f32::min);
            values.push((ink * (1.0 - (d - width).max(0.0))).clamp(0.0, 1.0));
        }
    }
    ImageGrid::new(SIDE, SIDE, 1, values).expect("canvas is well formed")
}

/// `count` images cycling through the first `classes` labels.
pub fn digits(count: usize, classes: usize, seed: u64) -> Result<(Vec<ImageGrid>, Vec<u16>)> {
    if classes == 0 || classes > CLASSES {
        return config_err(format!("classes must be in 1..={CLASSES}, got {classes}"));
    }
    let labels: Vec<u16> = (0..count).map(|i| (i % classes) as u16).collect();
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| render(l as usize, &mut stream(seed, Purpose::Synthetic, &[i as u64])))
        .collect();
    Ok((images, labels))
}

/// Direct-pixel dataset with `levels` grey levels, optionally labeled.
pub fn digit_dataset(count: usize, classes: usize, levels: usize, labeled: bool, seed: u64) -> Result<LatentDataset> {
    let (images, labels) = digits(count, classes, seed)?;
    let codebook = Codebook::uniform_levels(levels)?;
    build_latent_dataset(&images, &codebook, false, labeled.then_some(&labels[..]))
}
