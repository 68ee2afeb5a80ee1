//! Straightforward loop implementations over plain slices. They share no
//! code with the engine and favor obviousness over speed.

/// Cross-correlation with zero padding. `input` is `c × h × w`, `weight` is
/// `o × c × k × k`. Returns the output and its `(o, oh, ow)` shape.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    (o, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let at = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            input[(ch * h + y as usize) * w + x as usize]
        }
    };
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let x = (ox * stride + kx) as isize - pad as isize;
                            acc += weight[((oc * c + ic) * k + ky) * k + kx] * at(ic, y, x);
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, (o, oh, ow))
}

/// `C × C` Gram matrix divided by `C·H·W`.
pub fn gram(features: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let n = h * w;
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for p in 0..n {
                acc += features[i * n + p] * features[j * n + p];
            }
            g[i * c + j] = acc / (c * h * w) as f64;
        }
    }
    g
}

/// Σ (x[c,y,x+1] − x[c,y,x])² + Σ (x[c,y+1,x] − x[c,y,x])².
pub fn total_variation(input: &[f64], (c, h, w): (usize, usize, usize)) -> f64 {
    let v = |ch: usize, y: usize, x: usize| input[(ch * h + y) * w + x];
    let mut horizontal = 0.0;
    let mut vertical = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w - 1 {
                horizontal += (v(ch, y, x + 1) - v(ch, y, x)).powi(2);
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                vertical += (v(ch, y + 1, x) - v(ch, y, x)).powi(2);
            }
        }
    }
    horizontal + vertical
}

/// Non-overlapping `window × window` average pooling.
pub fn avg_pool(input: &[f64], (c, h, w): (usize, usize, usize), window: usize) -> Vec<f64> {
    let (oh, ow) = (h / window, w / window);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * window..(oy + 1) * window {
                    for x in ox * window..(ox + 1) * window {
                        acc += input[(ch * h + y) * w + x];
                    }
                }
                out.push(acc / (window * window) as f64);
            }
        }
    }
    out
}

/// Eigenvalues of a symmetric `n × n` matrix by cyclic Jacobi rotations,
/// in ascending order.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = cos * akp - sin * akq;
                    a[k * n + q] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = cos * apk - sin * aqk;
                    a[q * n + k] = sin * apk + cos * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}
