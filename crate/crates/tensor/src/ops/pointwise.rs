use crate::element::{std_normal_cdf, std_normal_pdf, Element};

pub fn leaky_relu<T: Element>(x: &[T], alpha: f64) -> Vec<T> {
    let a = T::from_f64(alpha);
    x.iter()
        .map(|&v| if v > T::ZERO { v } else { a * v })
        .collect()
}

pub fn leaky_relu_backward<T: Element>(g: &[T], x: &[T], alpha: f64) -> Vec<T> {
    let a = T::from_f64(alpha);
    g.iter()
        .zip(x.iter())
        .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { a * gv })
        .collect()
}

pub fn sigmoid<T: Element>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| {
            // split on sign so exp never overflows
            let v = v.to_f64();
            let y = if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            };
            T::from_f64(y)
        })
        .collect()
}

pub fn sigmoid_backward<T: Element>(g: &[T], y: &[T]) -> Vec<T> {
    g.iter()
        .zip(y.iter())
        .map(|(&gv, &yv)| gv * yv * (T::ONE - yv))
        .collect()
}

pub fn softplus<T: Element>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| {
            let v = v.to_f64();
            T::from_f64(v.max(0.0) + (-v.abs()).exp().ln_1p())
        })
        .collect()
}

pub fn softplus_backward<T: Element>(g: &[T], x: &[T]) -> Vec<T> {
    let sig = sigmoid(x);
    g.iter().zip(sig.iter()).map(|(&gv, &sv)| gv * sv).collect()
}

pub fn clamp01<T: Element>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| v.max_e(T::ZERO).min_e(T::ONE))
        .collect()
}

pub fn clamp01_backward<T: Element>(g: &[T], x: &[T]) -> Vec<T> {
    g.iter()
        .zip(x.iter())
        .map(|(&gv, &xv)| {
            if xv >= T::ZERO && xv <= T::ONE {
                gv
            } else {
                T::ZERO
            }
        })
        .collect()
}

/// Probability mass floor inside the rate log, matching the coding-side
/// Gaussian discretization.
pub const RATE_MASS_FLOOR: f64 = 1e-9;

/// Per-element code length in bits of `f` under N(mu, sigma) discretized to
/// unit bins: -log2(Phi((f - mu + 0.5)/sigma) - Phi((f - mu - 0.5)/sigma)).
pub fn gaussian_bits<T: Element>(f: &[T], mu: &[T], sigma: &[T]) -> Vec<T> {
    f.iter()
        .zip(mu.iter())
        .zip(sigma.iter())
        .map(|((&fv, &mv), &sv)| {
            let (m, _, _, _, _) = interval_mass(fv.to_f64(), mv.to_f64(), sv.to_f64());
            T::from_f64(-m.log2())
        })
        .collect()
}

/// Gradients of `gaussian_bits` w.r.t. f, mu, and sigma. The mass floor
/// zeroes the gradient where it binds.
pub fn gaussian_bits_backward<T: Element>(
    g: &[T],
    f: &[T],
    mu: &[T],
    sigma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = f.len();
    let mut df = vec![T::ZERO; n];
    let mut dmu = vec![T::ZERO; n];
    let mut dsigma = vec![T::ZERO; n];
    let ln2 = std::f64::consts::LN_2;
    for i in 0..n {
        let (m, floored, a, b, s) = interval_mass(f[i].to_f64(), mu[i].to_f64(), sigma[i].to_f64());
        if floored {
            continue;
        }
        let pa = std_normal_pdf(a);
        let pb = std_normal_pdf(b);
        let scale = g[i].to_f64() / (m * ln2);
        // d(-log2 m)/dm = -1/(m ln2); dm/df = (pa - pb)/s, dm/dmu = -dm/df,
        // dm/dsigma = -(pa*a - pb*b)/s
        df[i] = T::from_f64(-scale * (pa - pb) / s);
        dmu[i] = T::from_f64(scale * (pa - pb) / s);
        dsigma[i] = T::from_f64(scale * (pa * a - pb * b) / s);
    }
    (df, dmu, dsigma)
}

/// Returns (mass, floored, a, b, sigma) with mass clamped to the floor.
fn interval_mass(f: f64, mu: f64, sigma: f64) -> (f64, bool, f64, f64, f64) {
    let a = (f - mu + 0.5) / sigma;
    let b = (f - mu - 0.5) / sigma;
    let raw = std_normal_cdf(a) - std_normal_cdf(b);
    if raw < RATE_MASS_FLOOR {
        (RATE_MASS_FLOOR, true, a, b, sigma)
    } else {
        (raw.min(1.0), false, a, b, sigma)
    }
}
