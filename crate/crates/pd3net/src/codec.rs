//! Likelihood-map label codec.
//!
//! Encoding places a Gaussian bump (peak 1.0, fixed deviation derived from
//! the head diameter) at every annotated head centroid, combining overlaps by
//! maximum. When two people stand close, a zero-valued valley is carved along
//! the equal-contribution ridge so that thresholding anywhere above the
//! configured floor yields one connected component per person, and each cut
//! is mirrored about the affected centroid so the surviving blob stays
//! symmetric and its decoded centroid unbiased.
//!
//! Decoding cuts the map with a horizontal plane at the detection threshold:
//! connected regions above the plane become detections, located at the
//! centroid of their confidence mass above the plane.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Ground-truth person: sub-pixel head centroid plus occlusion fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    /// Column coordinate, `0 <= u < width`.
    pub u: f64,
    /// Row coordinate, `0 <= v < height`.
    pub v: f64,
    /// Fraction of the head hidden behind nearer geometry, in `[0, 1]`.
    pub occlusion: f64,
}

/// Decoded person hypothesis.
#[derive(Debug, Clone, Serialize)]
pub struct Detection {
    /// Column coordinate of the confidence-weighted centroid.
    pub u: f64,
    /// Row coordinate of the confidence-weighted centroid.
    pub v: f64,
    /// Maximum confidence inside the component.
    pub peak: f64,
    /// Component size in pixels.
    pub area: usize,
}

/// Resolution-dependent codec parameters.
#[derive(Debug, Clone, Copy)]
pub struct CodecConfig {
    /// Expected head diameter in pixels at this resolution.
    pub head_diameter_px: f64,
    /// Ridge carving triggers where the runner-up Gaussian reaches this
    /// fraction of the leader.
    pub ridge_ratio: f64,
    /// Carving only applies where the leading contribution is at least this.
    pub ridge_floor: f64,
    /// Components smaller than this many pixels are discarded by decoding.
    pub min_area: usize,
}

/// Head diameter at the reference resolution (240x320).
const HEAD_DIAMETER_REFERENCE: f64 = 15.0;

impl CodecConfig {
    /// Scale the reference geometry (head diameter 15 px, minimum area 4 px
    /// at 240x320) to an arbitrary frame size.
    pub fn for_resolution(height: usize, width: usize) -> CodecConfig {
        let s = (height as f64 / 240.0).min(width as f64 / 320.0);
        CodecConfig {
            head_diameter_px: HEAD_DIAMETER_REFERENCE * s,
            ridge_ratio: 0.9,
            ridge_floor: 0.2,
            min_area: ((4.0 * s * s).round() as usize).max(1),
        }
    }

    /// Gaussian deviation: head diameter divided by 2.5.
    pub fn sigma(&self) -> f64 {
        self.head_diameter_px / 2.5
    }

    /// Matching gate for evaluation, one head diameter.
    pub fn gate_px(&self) -> f64 {
        self.head_diameter_px
    }
}

/// Render annotations into a `[0, 1]` likelihood map of shape `(1,1,h,w)`.
pub fn encode_labels(
    annotations: &[Annotation],
    height: usize,
    width: usize,
    cfg: &CodecConfig,
) -> Result<Tensor> {
    if cfg.head_diameter_px <= 0.0 {
        return Err(Error::Param("head diameter must be positive".into()));
    }
    for (idx, a) in annotations.iter().enumerate() {
        if a.u < 0.0 || a.v < 0.0 || a.u >= width as f64 || a.v >= height as f64 {
            return Err(Error::Validation(format!(
                "annotation {idx} at ({}, {}) outside {width}x{height} frame",
                a.u, a.v
            )));
        }
    }
    let mut map = Tensor::zeros(Shape::new(1, 1, height, width));
    if annotations.is_empty() {
        return Ok(map);
    }
    let sigma = cfg.sigma();
    let reach = gaussian_reach(sigma);
    {
        let plane = map.plane_mut(0, 0);
        for a in annotations {
            let (r0, r1, c0, c1) = clip_box(a.u, a.v, reach, height, width);
            for r in r0..r1 {
                for c in c0..c1 {
                    let g = gaussian_at(a, c as f64, r as f64, sigma);
                    let slot = &mut plane[r * width + c];
                    if g > *slot {
                        *slot = g;
                    }
                }
            }
        }
        // The centroid pixel carries the exact peak even for sub-pixel
        // annotations.
        for a in annotations {
            let c = (a.u.round() as usize).min(width - 1);
            let r = (a.v.round() as usize).min(height - 1);
            plane[r * width + c] = 1.0;
        }
    }
    separate_overlaps(&mut map, annotations, cfg);
    Ok(map)
}

/// Carve zero-valued valleys between overlapping Gaussians.
///
/// For every close pair, pixels near the equal-contribution ridge (runner-up
/// at least `ridge_ratio` of the leader, leader at least `ridge_floor`) are
/// zeroed, widened just enough that the zeroed cells always disconnect the
/// two blobs on the pixel grid. Each cut is then mirrored about the affected
/// centroid, so the remaining blob is symmetric and decodes to an unbiased
/// centroid.
pub fn separate_overlaps(map: &mut Tensor, annotations: &[Annotation], cfg: &CodecConfig) {
    if annotations.len() < 2 {
        return;
    }
    let shape = map.shape();
    let (height, width) = (shape.height, shape.width);
    let sigma = cfg.sigma();
    let reach = gaussian_reach(sigma);

    // Leading contribution and its owner, per pixel, over the union of the
    // per-person boxes.
    let mut lead = vec![0.0f64; height * width];
    let mut owner = vec![usize::MAX; height * width];
    for (i, a) in annotations.iter().enumerate() {
        let (r0, r1, c0, c1) = clip_box(a.u, a.v, reach, height, width);
        for r in r0..r1 {
            for c in c0..c1 {
                let g = gaussian_at(a, c as f64, r as f64, sigma);
                let idx = r * width + c;
                if g > lead[idx] {
                    lead[idx] = g;
                    owner[idx] = i;
                }
            }
        }
    }

    // Pairs further apart than this cannot produce touching blobs above the
    // floor (two floor-level radii plus pixel slack).
    let floor_radius = sigma * (2.0 * (1.0 / cfg.ridge_floor).ln()).sqrt();
    let interaction = 2.0 * floor_radius + 3.0;
    let band_width = sigma * sigma * (1.0 / cfg.ridge_ratio).ln();

    let plane = map.plane_mut(0, 0);
    for i in 0..annotations.len() {
        for j in (i + 1)..annotations.len() {
            let (ai, aj) = (&annotations[i], &annotations[j]);
            let (dx, dy) = (aj.u - ai.u, aj.v - ai.v);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist == 0.0 || dist > interaction {
                continue;
            }
            let (ux, uy) = (dx / dist, dy / dist);
            // Half-width of the carved band along the pair axis: the ridge
            // band from the ratio rule, but never thinner than the projected
            // half-extent of a pixel cell, which is what guarantees the
            // zeroed cells 8-disconnect the two sides.
            let cell = 0.5 * (ux.abs() + uy.abs());
            let half = (band_width / dist).max(cell);
            let lo = ((ai.u.min(aj.u) - reach).floor().max(0.0)) as usize;
            let hi = ((ai.u.max(aj.u) + reach).ceil().min(width as f64)) as usize;
            let ro = ((ai.v.min(aj.v) - reach).floor().max(0.0)) as usize;
            let rh = ((ai.v.max(aj.v) + reach).ceil().min(height as f64)) as usize;
            for r in ro..rh {
                for c in lo..hi {
                    let idx = r * width + c;
                    if lead[idx] < cfg.ridge_floor {
                        continue;
                    }
                    let own = owner[idx];
                    if own != i && own != j {
                        continue;
                    }
                    // Position along the pair axis, measured from centroid i.
                    let t = (c as f64 - ai.u) * ux + (r as f64 - ai.v) * uy;
                    let on_ridge = (t - dist / 2.0).abs() <= half;
                    // The ridge truncates blob i at t = dist/2 - half; the
                    // mirrored cut truncates its far side at the same offset,
                    // keeping the blob symmetric about its centroid.
                    let mirror_i = own == i && t <= -(dist / 2.0 - half);
                    let mirror_j = own == j && t >= 1.5 * dist - half;
                    if on_ridge || mirror_i || mirror_j {
                        plane[idx] = 0.0;
                    }
                }
            }
        }
    }
}

/// Cut the map at `threshold` and extract one detection per surviving
/// 8-connected component. Centroids are weighted by the confidence mass
/// above the threshold plane.
pub fn decode_detections(map: &Tensor, threshold: f64, min_area: usize) -> Result<Vec<Detection>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Param(format!(
            "decode threshold must lie strictly inside (0, 1), got {threshold}"
        )));
    }
    let shape = map.shape();
    let (height, width) = (shape.height, shape.width);
    let plane = map.plane(0, 0);
    let mut visited = vec![false; height * width];
    let mut detections = Vec::new();
    let mut stack = Vec::new();

    for start in 0..plane.len() {
        if visited[start] || plane[start] < threshold {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut area = 0usize;
        let mut peak = 0.0f64;
        let mut mass = 0.0f64;
        let mut mass_u = 0.0f64;
        let mut mass_v = 0.0f64;
        let mut sum_u = 0.0f64;
        let mut sum_v = 0.0f64;
        while let Some(idx) = stack.pop() {
            let v = plane[idx];
            let (r, c) = (idx / width, idx % width);
            area += 1;
            peak = peak.max(v);
            let w = v - threshold;
            mass += w;
            mass_u += w * c as f64;
            mass_v += w * r as f64;
            sum_u += c as f64;
            sum_v += r as f64;
            let r0 = r.saturating_sub(1);
            let r1 = (r + 1).min(height - 1);
            let c0 = c.saturating_sub(1);
            let c1 = (c + 1).min(width - 1);
            for nr in r0..=r1 {
                for nc in c0..=c1 {
                    let nidx = nr * width + nc;
                    if !visited[nidx] && plane[nidx] >= threshold {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        if area < min_area {
            continue;
        }
        let (u, v) = if mass > 1e-12 {
            (mass_u / mass, mass_v / mass)
        } else {
            (sum_u / area as f64, sum_v / area as f64)
        };
        detections.push(Detection { u, v, peak, area });
    }
    Ok(detections)
}

fn gaussian_at(a: &Annotation, x: f64, y: f64, sigma: f64) -> f64 {
    let d2 = (x - a.u) * (x - a.u) + (y - a.v) * (y - a.v);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Box radius beyond which a Gaussian contribution is negligible.
fn gaussian_reach(sigma: f64) -> f64 {
    sigma * 4.5
}

fn clip_box(u: f64, v: f64, reach: f64, height: usize, width: usize) -> (usize, usize, usize, usize) {
    let r0 = ((v - reach).floor().max(0.0)) as usize;
    let r1 = (((v + reach).ceil() + 1.0).min(height as f64)) as usize;
    let c0 = ((u - reach).floor().max(0.0)) as usize;
    let c1 = (((u + reach).ceil() + 1.0).min(width as f64)) as usize;
    (r0, r1.max(r0), c0, c1.max(c0))
}
