use crate::element::Element;

/// C[m,n] = A[m,k] . B[k,n], row-major. The j loop is innermost and
/// contiguous in both C and B so it vectorizes.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Row-major transpose of an m x n matrix.
pub fn transpose<T: Element>(a: &[T], m: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * n);
    let mut t = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Matmul with optional transposition of either operand. `am x an` and
/// `bm x bn` are the stored (untransposed) extents.
pub fn matmul_t<T: Element>(
    a: &[T],
    am: usize,
    an: usize,
    ta: bool,
    b: &[T],
    bm: usize,
    bn: usize,
    tb: bool,
) -> Vec<T> {
    let (m, k) = if ta { (an, am) } else { (am, an) };
    let (kb, n) = if tb { (bn, bm) } else { (bm, bn) };
    debug_assert_eq!(k, kb, "inner extents must agree");
    let at;
    let a_eff = if ta {
        at = transpose(a, am, an);
        &at[..]
    } else {
        a
    };
    let bt;
    let b_eff = if tb {
        bt = transpose(b, bm, bn);
        &bt[..]
    } else {
        b
    };
    matmul(a_eff, b_eff, m, k, n)
}
