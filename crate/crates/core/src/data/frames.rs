use crate::error::{Error, Result};

/// Nearest-neighbour resize of an `H × W × C` frame to `out_h × out_w × C`.
pub fn resize_nearest(frame: &[f32], shape: [usize; 3], out_h: usize, out_w: usize) -> Result<Vec<f32>> {
    let [h, w, c] = shape;
    if frame.len() != h * w * c || h == 0 || w == 0 || c == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Input(format!(
            "cannot resize {} values as {h}x{w}x{c} to {out_h}x{out_w}",
            frame.len()
        )));
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            let sx = x * w / out_w;
            let at = (sy * w + sx) * c;
            out.extend_from_slice(&frame[at..at + c]);
        }
    }
    Ok(out)
}

/// Keeps frames `0, stride, 2·stride, …` up to `target` of them, each resized to `out_h × out_w`.
pub fn sample_candidates(
    frames: &[Vec<f32>],
    shape: [usize; 3],
    stride: usize,
    target: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<Vec<f32>>> {
    if frames.is_empty() {
        return Err(Error::Input("no frames to sample from".into()));
    }
    if stride == 0 || target == 0 {
        return Err(Error::Input("stride and target must be positive".into()));
    }
    frames
        .iter()
        .step_by(stride)
        .take(target)
        .map(|f| resize_nearest(f, shape, out_h, out_w))
        .collect()
}

/// `a·b / (‖a‖‖b‖)`, defined as 0 (with a warning) when either vector is zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity with a zero vector; using 0");
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Candidate most similar to the ground-truth cover; ties go to the lowest index.
pub fn label_positive(candidates: &[Vec<f32>], truth: &[f32]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::data("no candidates to label"));
    }
    let mut best = (0, cosine_similarity(&candidates[0], truth));
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let s = cosine_similarity(c, truth);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}
