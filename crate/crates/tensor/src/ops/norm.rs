use crate::element::Element;

/// Decompose a shape around `axis` into (outer, lane, inner) extents.
pub fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, lane, inner)
}

pub fn softmax<T: Element>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, lane, inner) = lanes(shape, axis);
    let mut y = vec![T::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * lane + l) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for l in 0..lane {
                mx = mx.max(x[at(l)].to_f64());
            }
            let mut denom = 0.0;
            for l in 0..lane {
                denom += (x[at(l)].to_f64() - mx).exp();
            }
            for l in 0..lane {
                y[at(l)] = T::from_f64((x[at(l)].to_f64() - mx).exp() / denom);
            }
        }
    }
    y
}

pub fn softmax_backward<T: Element>(g: &[T], y: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, lane, inner) = lanes(shape, axis);
    let mut dx = vec![T::ZERO; g.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * lane + l) * inner + i;
            let mut dot = T::ZERO;
            for l in 0..lane {
                dot += g[at(l)] * y[at(l)];
            }
            for l in 0..lane {
                dx[at(l)] = y[at(l)] * (g[at(l)] - dot);
            }
        }
    }
    dx
}

/// Layer norm over the last axis with affine parameters.
pub fn layer_norm<T: Element>(x: &[T], dim: usize, gamma: &[T], beta: &[T], eps: f64) -> Vec<T> {
    let rows = x.len() / dim;
    let mut y = vec![T::ZERO; x.len()];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let (mean, rstd) = row_stats(row, eps);
        for d in 0..dim {
            let xhat = (row[d].to_f64() - mean) * rstd;
            y[r * dim + d] = T::from_f64(xhat) * gamma[d] + beta[d];
        }
    }
    y
}

pub fn layer_norm_backward<T: Element>(
    g: &[T],
    x: &[T],
    dim: usize,
    gamma: &[T],
    eps: f64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / dim;
    let mut dx = vec![T::ZERO; x.len()];
    let mut dgamma = vec![T::ZERO; dim];
    let mut dbeta = vec![T::ZERO; dim];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let grow = &g[r * dim..(r + 1) * dim];
        let (mean, rstd) = row_stats(row, eps);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        let mut xhat = vec![0.0; dim];
        let mut dxhat = vec![0.0; dim];
        for d in 0..dim {
            xhat[d] = (row[d].to_f64() - mean) * rstd;
            dxhat[d] = grow[d].to_f64() * gamma[d].to_f64();
            sum_dxhat += dxhat[d];
            sum_dxhat_xhat += dxhat[d] * xhat[d];
            dgamma[d] += grow[d] * T::from_f64(xhat[d]);
            dbeta[d] += grow[d];
        }
        let inv_n = 1.0 / dim as f64;
        for d in 0..dim {
            let v = rstd * (dxhat[d] - inv_n * sum_dxhat - xhat[d] * inv_n * sum_dxhat_xhat);
            dx[r * dim + d] = T::from_f64(v);
        }
    }
    (dx, dgamma, dbeta)
}

fn row_stats<T: Element>(row: &[T], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|v| {
            let d = v.to_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, 1.0 / (var + eps).sqrt())
}
