//! Safe wrapper over the `matrixmultiply` dgemm kernel.

/// C[m,n] = alpha * A[m,k] * B[k,n] + beta * C, with arbitrary strides.
/// Strides are in elements. Panics if a slice cannot hold its matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let need = |r: usize, cdim: usize, rs: usize, cs: usize| {
        if r == 0 || cdim == 0 {
            0
        } else {
            (r - 1) * rs + (cdim - 1) * cs + 1
        }
    };
    assert!(a.len() >= need(m, k, rsa, csa), "gemm: A slice too short");
    assert!(b.len() >= need(k, n, rsb, csb), "gemm: B slice too short");
    assert!(c.len() >= need(m, n, rsc, csc), "gemm: C slice too short");
    if k == 0 {
        // dgemm leaves C untouched for k == 0; apply the beta scale ourselves.
        for i in 0..m {
            for j in 0..n {
                let idx = i * rsc + j * csc;
                c[idx] *= beta;
            }
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
