//! Context-rich tail-class augmentation: paste tail-class foregrounds onto
//! head-class or OOD backgrounds through a rectangular binary mask.
//!
//! The composed image is `M ⊙ background + (1 − M) ⊙ foreground` and carries
//! the foreground's label at a reduced sample weight.

use crate::datasets::{Batch, Sample};
use crate::{Error, Result};
use rand::Rng;

/// Binary W×H mask that is 1 outside a rectangular box and 0 inside it.
/// The box region is where the foreground shows through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutMixMask {
    pub width: usize,
    pub height: usize,
    /// Half-open box `(x0, y0, x1, y1)` in cell coordinates.
    pub box_bounds: (usize, usize, usize, usize),
    mask: Vec<u8>,
}

impl CutMixMask {
    /// Build a mask from explicit box bounds. Degenerate boxes (empty or
    /// covering the whole grid) are allowed here so tests can construct the
    /// limit cases; [`sample_mask`] never produces them.
    pub fn new(
        width: usize,
        height: usize,
        box_bounds: (usize, usize, usize, usize),
    ) -> Result<Self> {
        let (x0, y0, x1, y1) = box_bounds;
        if width == 0 || height == 0 {
            return Err(Error::Contract("mask dimensions must be positive".into()));
        }
        if x0 > x1 || y0 > y1 || x1 > width || y1 > height {
            return Err(Error::Contract(format!(
                "box {box_bounds:?} out of bounds for {width}x{height}"
            )));
        }
        let mut mask = vec![1u8; width * height];
        for y in y0..y1 {
            for x in x0..x1 {
                mask[y * width + x] = 0;
            }
        }
        Ok(CutMixMask {
            width,
            height,
            box_bounds,
            mask,
        })
    }

    /// Row-major cells, 1 = background, 0 = foreground.
    pub fn cells(&self) -> &[u8] {
        &self.mask
    }

    pub fn box_area(&self) -> usize {
        let (x0, y0, x1, y1) = self.box_bounds;
        (x1 - x0) * (y1 - y0)
    }

    /// Number of background (1) cells: `W·H − box area`.
    pub fn ones(&self) -> usize {
        self.width * self.height - self.box_area()
    }
}

/// Sample a mask whose box covers approximately `area_fraction` of the grid
/// (each side rounds `side·√λ` independently), uniformly positioned among
/// in-bounds placements. Never degenerate.
pub fn sample_mask(
    width: usize,
    height: usize,
    area_fraction: f64,
    rng: &mut impl Rng,
) -> Result<CutMixMask> {
    if width < 2 || height < 2 {
        return Err(Error::Config(format!(
            "sample_mask needs W, H >= 2, got {width}x{height}"
        )));
    }
    if !(area_fraction > 0.0 && area_fraction < 1.0) {
        return Err(Error::Config(format!(
            "area fraction must lie in (0, 1), got {area_fraction}"
        )));
    }
    let ratio = area_fraction.sqrt();
    let bw = ((width as f64 * ratio).round() as usize).clamp(1, width);
    let mut bh = ((height as f64 * ratio).round() as usize).clamp(1, height);
    if bw == width && bh == height {
        // keep the sampled mask away from the all-zeros degenerate case
        bh = height - 1;
    }
    let x0 = rng.gen_range(0..=width - bw);
    let y0 = rng.gen_range(0..=height - bh);
    CutMixMask::new(width, height, (x0, y0, x0 + bw, y0 + bh))
}

/// `M ⊙ background + (1 − M) ⊙ foreground`, element-exact selection.
pub fn cutmix(background: &[f64], foreground: &[f64], mask: &CutMixMask) -> Result<Vec<f64>> {
    let n = mask.width * mask.height;
    if background.len() != n || foreground.len() != n {
        return Err(Error::Contract(format!(
            "cutmix: image lengths {} / {} do not match mask {}x{}",
            background.len(),
            foreground.len(),
            mask.width,
            mask.height
        )));
    }
    Ok(mask
        .cells()
        .iter()
        .zip(background.iter().zip(foreground))
        .map(|(&m, (&b, &f))| if m == 1 { b } else { f })
        .collect())
}

/// Classes whose training count is strictly below the median class count.
pub fn tail_classes(counts: &[usize]) -> Vec<usize> {
    if counts.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<usize> = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| (c as f64) < median)
        .map(|(i, _)| i)
        .collect()
}

/// Generate `count` CutMix samples: a uniformly drawn tail foreground pasted
/// through a fresh mask onto a background drawn from the head and OOD pools
/// with equal probability. Labels come from the foreground; every generated
/// sample gets weight `w_gen`.
#[allow(clippy::too_many_arguments)]
pub fn make_tail_augmented_batch(
    tail: &[&Sample],
    head_pool: &[&Sample],
    ood_pool: &[&Sample],
    width: usize,
    height: usize,
    count: usize,
    w_gen: f64,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if count == 0 {
        return Ok(Batch::empty());
    }
    if tail.is_empty() {
        return Err(Error::Config("tail-class pool is empty".into()));
    }
    if head_pool.is_empty() && ood_pool.is_empty() {
        return Err(Error::Config("background pool is empty".into()));
    }
    if !(w_gen > 0.0 && w_gen <= 1.0) {
        return Err(Error::Config(format!(
            "generated-sample weight must lie in (0, 1], got {w_gen}"
        )));
    }
    let mut batch = Batch::empty();
    for _ in 0..count {
        let fg = tail[rng.gen_range(0..tail.len())];
        let bg = if head_pool.is_empty() {
            ood_pool[rng.gen_range(0..ood_pool.len())]
        } else if ood_pool.is_empty() || rng.gen::<bool>() {
            head_pool[rng.gen_range(0..head_pool.len())]
        } else {
            ood_pool[rng.gen_range(0..ood_pool.len())]
        };
        let lambda = loop {
            let l = rng.gen::<f64>();
            if l > 0.0 {
                break l;
            }
        };
        let mask = sample_mask(width, height, lambda, rng)?;
        let mixed = cutmix(&bg.values, &fg.values, &mask)?;
        if fg.label < 0 {
            return Err(Error::Contract(format!(
                "tail sample {} is unlabeled",
                fg.id
            )));
        }
        batch.inputs.push(mixed);
        batch.labels.push(fg.label as usize);
        batch.weights.push(w_gen);
    }
    Ok(batch)
}
