//! Class activation maps over spatial feature blobs.
//!
//! The classifier global-average-pools the blob and applies a linear head.
//! The heatmap for a class is the dot product of that class's weight row with
//! the blob at every spatial cell, min-max normalized and bilinearly
//! upsampled (align-corners) to the image size.

use crate::error::{DeduceError, Result};
use crate::linear::LinearHead;
use crate::types::{argmax, softmax, Blob, Posterior, SceneLabel};

/// Which class the heatmap is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    Label(SceneLabel),
    Argmax,
}

/// Row-major heatmap with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    pub source_shape: (usize, usize),
    pub predicted: SceneLabel,
}

impl Heatmap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Pixel `(x, y)` of the first maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.values);
        (i % self.width, i / self.width)
    }

    /// 8-bit grayscale, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn check_head(blob: &Blob, head: &LinearHead) -> Result<()> {
    if head.input_dim() != blob.channels() {
        return Err(DeduceError::Shape(format!(
            "head expects {} channels, blob has {}",
            head.input_dim(),
            blob.channels()
        )));
    }
    Ok(())
}

/// Global average pool over the spatial extent.
pub fn pool(blob: &Blob) -> Vec<f64> {
    let n = (blob.height() * blob.width()) as f64;
    (0..blob.channels())
        .map(|c| blob.channel(c).iter().sum::<f64>() / n)
        .collect()
}

/// Pooled-feature logits of the head.
pub fn blob_to_logits(blob: &Blob, head: &LinearHead) -> Result<Vec<f64>> {
    check_head(blob, head)?;
    head.logits(&pool(blob))
}

/// `raw[h][w] = Σ_c weights[target][c] · blob[c][h][w]`, row-major `H_b x W_b`.
pub fn raw_activation(blob: &Blob, head: &LinearHead, target: SceneLabel) -> Result<Vec<f64>> {
    check_head(blob, head)?;
    if target.0 >= head.num_classes() {
        return Err(DeduceError::Shape(format!("target {target} outside class set")));
    }
    let row = head.row(target);
    let mut raw = vec![0.0; blob.height() * blob.width()];
    for (c, w) in row.iter().enumerate() {
        for (r, v) in raw.iter_mut().zip(blob.channel(c)) {
            *r += w * v;
        }
    }
    Ok(raw)
}

/// Rescales to [0, 1]; a constant map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        for v in values.iter_mut() {
            *v = ((*v - lo) / range).clamp(0.0, 1.0);
        }
    } else {
        values.fill(0.0);
    }
}

/// Bilinear resize with corner pixels mapped exactly onto corner samples.
///
/// `src` is row-major `src_h x src_w`; the result is row-major `out_h x out_w`.
pub fn upsample_bilinear(src: &[f64], src_w: usize, src_h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h);
    let scale = |n_src: usize, n_out: usize| {
        if n_out > 1 {
            (n_src - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let (sx, sy) = (scale(src_w, out_w), scale(src_h, out_h));
    let axis = |pos: f64, n: usize| {
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y as f64 * sy, src_h);
        for x in 0..out_w {
            let (x0, x1, fx) = axis(x as f64 * sx, src_w);
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bottom = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Class activation heatmap at `out_size = (width, height)`.
pub fn activation_map(blob: &Blob, head: &LinearHead, target: CamTarget, out_size: (usize, usize)) -> Result<Heatmap> {
    let (out_w, out_h) = out_size;
    if out_w == 0 || out_h == 0 {
        return Err(DeduceError::Shape("output size has zero area".into()));
    }
    if out_w < blob.width() || out_h < blob.height() {
        return Err(DeduceError::Shape(format!(
            "output {out_w}x{out_h} smaller than blob {}x{}",
            blob.width(),
            blob.height()
        )));
    }
    let predicted = match target {
        CamTarget::Label(l) => l,
        CamTarget::Argmax => SceneLabel(argmax(&blob_to_logits(blob, head)?)),
    };
    let mut raw = raw_activation(blob, head, predicted)?;
    min_max_normalize(&mut raw);
    let mut values = upsample_bilinear(&raw, blob.width(), blob.height(), out_w, out_h);
    // Interpolation of values in [0,1] stays in [0,1] up to rounding.
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Heatmap {
        width: out_w,
        height: out_h,
        values,
        source_shape: (blob.height(), blob.width()),
        predicted,
    })
}

/// Classification from the pooled blob plus the heatmap of the predicted class.
pub fn classify_attn(blob: &Blob, head: &LinearHead, out_size: (usize, usize)) -> Result<(SceneLabel, Posterior, Heatmap)> {
    let logits = blob_to_logits(blob, head)?;
    let posterior = softmax(&logits)?;
    let label = posterior.argmax();
    let heatmap = activation_map(blob, head, CamTarget::Label(label), out_size)?;
    Ok((label, posterior, heatmap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassSet;

    fn head(c: usize) -> LinearHead {
        let k = 3;
        let w = (0..k * c).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        LinearHead::from_parts(ClassSet::new(["x", "y", "z"]).unwrap(), c, w, vec![0.1, -0.2, 0.3]).unwrap()
    }

    #[test]
    fn constant_blob_pools_to_constant_vector() {
        let h = head(4);
        let blob = Blob::new([4, 3, 5], vec![2.5; 60]).unwrap();
        assert_eq!(blob_to_logits(&blob, &h).unwrap(), h.logits(&[2.5; 4]).unwrap());
    }

    #[test]
    fn single_cell_blob_is_scaled_by_area() {
        let h = head(2);
        let mut blob = Blob::zeros([2, 14, 14]);
        blob.set(0, 3, 5, 2.0);
        blob.set(1, 3, 5, -1.0);
        let logits = blob_to_logits(&blob, &h).unwrap();
        for k in 0..3 {
            let row = h.row(SceneLabel(k));
            let expect = (row[0] * 2.0 - row[1]) / 196.0 + h.bias()[k];
            assert!((logits[k] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_blob_gives_zero_heatmap() {
        let h = head(3);
        let blob = Blob::new([3, 14, 14], vec![1.0; 3 * 196]).unwrap();
        let hm = activation_map(&blob, &h, CamTarget::Argmax, (224, 224)).unwrap();
        assert!(hm.values().iter().all(|v| *v == 0.0));
        assert_eq!((hm.width(), hm.height()), (224, 224));
    }

    #[test]
    fn ramp_is_reproduced_by_upsampling() {
        let (sw, sh) = (14, 14);
        let src: Vec<f64> = (0..sh)
            .flat_map(|y| (0..sw).map(move |x| 0.3 * x as f64 - 0.7 * y as f64 + 2.0))
            .collect();
        let out = upsample_bilinear(&src, sw, sh, 224, 224);
        let s = 13.0 / 223.0;
        for y in 0..224 {
            for x in 0..224 {
                let expect = 0.3 * x as f64 * s - 0.7 * y as f64 * s + 2.0;
                assert!((out[y * 224 + x] - expect).abs() < 1e-6);
            }
        }
        // corners map exactly
        assert_eq!(out[0], src[0]);
        assert_eq!(out[224 * 224 - 1], src[sw * sh - 1]);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let h = head(3);
        let blob = Blob::zeros([4, 2, 2]);
        assert!(blob_to_logits(&blob, &h).is_err());
        let blob = Blob::zeros([3, 14, 14]);
        assert!(activation_map(&blob, &h, CamTarget::Argmax, (0, 10)).is_err());
        assert!(activation_map(&blob, &h, CamTarget::Argmax, (10, 10)).is_err());
    }

    #[test]
    fn bias_dominated_constant_blob() {
        let h = LinearHead::from_parts(ClassSet::new(["x", "y"]).unwrap(), 2, vec![0.01; 4], vec![0.0, 5.0]).unwrap();
        let blob = Blob::new([2, 4, 4], vec![1.0; 32]).unwrap();
        let (label, post, hm) = classify_attn(&blob, &h, (8, 8)).unwrap();
        assert_eq!(label, SceneLabel(1));
        assert_eq!(post.argmax(), label);
        assert!(hm.values().iter().all(|v| *v == 0.0));
    }
}
