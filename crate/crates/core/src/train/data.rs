use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{IntTensor, Tensor};

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[C, H, W]` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[H, W]` class ids.
    pub labels: IntTensor,
    /// `[H, W]` instance ids, 0 where no instance.
    pub instances: Option<IntTensor>,
}

impl Sample {
    pub fn hw(&self) -> (usize, usize) {
        (self.labels.shape()[0], self.labels.shape()[1])
    }
}

/// Mean RGB color for a class: evenly spread hues, with class 0 a dark grey.
pub fn class_color(class: usize) -> [f32; 3] {
    if class == 0 {
        return [0.15, 0.15, 0.15];
    }
    // golden-angle hue steps keep neighbouring classes far apart
    let hue = ((class - 1) as f32 * 0.381_966) % 1.0;
    let sector = hue * 6.0;
    let f = sector.fract();
    let (r, g, b) = match sector as usize {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    let lift = |v: f32| 0.25 + 0.7 * v;
    [lift(r), lift(g), lift(b)]
}

const NOISE_STD: f64 = 0.08;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    },
    Disc {
        cy: f64,
        cx: f64,
        r: f64,
    },
    Band {
        top: usize,
        h: usize,
    },
}

impl Shape {
    fn contains(&self, i: usize, j: usize) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => i >= top && i < top + h && j >= left && j < left + w,
            Shape::Disc { cy, cx, r } => {
                let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                dy * dy + dx * dx <= r * r
            }
            Shape::Band { top, h } => i >= top && i < top + h,
        }
    }

    /// Shape kind for a foreground class: rectangles, discs, bands in turn.
    fn random(class: usize, h: usize, w: usize, rng: &mut Prng) -> Shape {
        let span = |rng: &mut Prng, size: usize, lo: usize, hi: usize| {
            let lo = (size / lo).max(1);
            let hi = (size / hi).max(lo + 1);
            rng.range(lo, hi)
        };
        match (class - 1) % 3 {
            0 => {
                let sh = span(rng, h, 6, 3);
                let sw = span(rng, w, 6, 3);
                Shape::Rect {
                    top: rng.range(0, h - sh + 1),
                    left: rng.range(0, w - sw + 1),
                    h: sh,
                    w: sw,
                }
            }
            1 => {
                let r = span(rng, h.min(w), 10, 5) as f64;
                Shape::Disc {
                    cy: r + rng.uniform() * (h as f64 - 2.0 * r).max(0.0),
                    cx: r + rng.uniform() * (w as f64 - 2.0 * r).max(0.0),
                    r,
                }
            }
            _ => {
                let bh = span(rng, h, 10, 6);
                Shape::Band {
                    top: rng.range(0, h - bh + 1),
                    h: bh,
                }
            }
        }
    }

    fn is_band(&self) -> bool {
        matches!(self, Shape::Band { .. })
    }
}

fn render(h: usize, w: usize, shapes: &[(usize, Shape)], rng: &mut Prng) -> Result<Sample> {
    let mut labels = vec![0i32; h * w];
    let mut instances = vec![0i32; h * w];
    for (id, (class, shape)) in shapes.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                if shape.contains(i, j) {
                    labels[i * w + j] = *class as i32;
                    instances[i * w + j] = id as i32 + 1;
                }
            }
        }
    }
    let mut image = vec![0f32; 3 * h * w];
    for p in 0..h * w {
        let color = class_color(labels[p] as usize);
        for (ch, &mean) in color.iter().enumerate() {
            let v = mean as f64 + rng.normal(0.0, NOISE_STD);
            image[ch * h * w + p] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Sample {
        image: Tensor::from_vec([3, h, w], image)?,
        labels: Tensor::from_vec([h, w], labels)?,
        instances: Some(Tensor::from_vec([h, w], instances)?),
    })
}

/// Synthetic segmentation data: a class-0 background with one or two
/// rectangles, discs or horizontal bands per foreground class, each colored
/// with its class color plus Gaussian noise. Bands are drawn first so the
/// smaller shapes sit on top. Instance maps number the shapes from 1.
pub fn make_toy_dataset(
    num_samples: usize,
    hw: (usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let (h, w) = hw;
    if num_classes < 1 || h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!(
            "toy data needs at least one class and 8x8 pixels, got {num_classes} classes at {h}x{w}"
        )));
    }
    let mut rng = Prng::new(seed);
    (0..num_samples)
        .map(|_| {
            let mut shapes = Vec::new();
            for class in 1..num_classes {
                for _ in 0..1 + rng.range(0, 2) {
                    shapes.push((class, Shape::random(class, h, w, &mut rng)));
                }
            }
            shapes.sort_by_key(|(_, s)| !s.is_band());
            render(h, w, &shapes, &mut rng)
        })
        .collect()
}

/// Two-class data where class 1 covers roughly `minority` of the pixels,
/// as small rectangles on the background.
pub fn make_imbalanced_dataset(
    num_samples: usize,
    hw: (usize, usize),
    minority: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let (h, w) = hw;
    if !(minority > 0.0 && minority < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "minority fraction {minority} outside (0, 0.5)"
        )));
    }
    let mut rng = Prng::new(seed);
    let side = ((minority * (h * w) as f64 / 2.0).sqrt().round() as usize).clamp(1, h.min(w));
    (0..num_samples)
        .map(|_| {
            let shapes: Vec<(usize, Shape)> = (0..2)
                .map(|_| {
                    let shape = Shape::Rect {
                        top: rng.range(0, h - side + 1),
                        left: rng.range(0, w - side + 1),
                        h: side,
                        w: side,
                    };
                    (1, shape)
                })
                .collect();
            render(h, w, &shapes, &mut rng)
        })
        .collect()
}
