//! Fixed linear resampling operators applied as right-multiplication of
//! `channels × tokens` matrices.

use crate::autograd::Matrix;

/// Per output index: `(lower source index, upper source index, upper weight)`
/// for half-pixel-centered linear interpolation with clamped edges.
pub fn axis_weights(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// `(in_h·in_w) × (out_h·out_w)` bilinear interpolation matrix.
pub fn bilinear_matrix(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Matrix {
    let ys = axis_weights(in_h, out_h);
    let xs = axis_weights(in_w, out_w);
    let mut m = Matrix::zeros((in_h * in_w, out_h * out_w));
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let o = oy * out_w + ox;
            m[[y0 * in_w + x0, o]] += (1.0 - fy) * (1.0 - fx);
            m[[y0 * in_w + x1, o]] += (1.0 - fy) * fx;
            m[[y1 * in_w + x0, o]] += fy * (1.0 - fx);
            m[[y1 * in_w + x1, o]] += fy * fx;
        }
    }
    m
}

/// `tokens × ceil(tokens / window)` average-pooling matrix; the tail window
/// averages however many tokens it holds.
pub fn pooling_matrix(tokens: usize, window: usize) -> Matrix {
    let windows = tokens.div_ceil(window);
    let mut m = Matrix::zeros((tokens, windows));
    for w in 0..windows {
        let start = w * window;
        let end = (start + window).min(tokens);
        let share = 1.0 / (end - start) as f64;
        for t in start..end {
            m[[t, w]] = share;
        }
    }
    m
}
