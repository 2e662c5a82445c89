//! Dense matrix multiplication backend.
//!
//! At first use we try to `dlopen` a system CBLAS (OpenBLAS) and resolve
//! `cblas_sgemm`/`cblas_dgemm`. Loading at runtime — after `main` has started —
//! lets us set `OPENBLAS_CORETYPE` from inside the process on machines whose
//! CPUID model string defeats OpenBLAS's runtime kernel detection (common in
//! VMs); a library linked at load time reads the environment in an ELF
//! constructor before we get the chance. Without a system BLAS everything
//! falls back to `ndarray`'s built-in matrix product, so the crate stays
//! self-contained.

use ndarray::{Array2, ArrayView2};
use std::ffi::CString;
use std::sync::OnceLock;

use super::scalar::Scalar;

const CBLAS_ROW_MAJOR: i32 = 101;
const CBLAS_NO_TRANS: i32 = 111;
const CBLAS_TRANS: i32 = 112;

type SgemmFn = unsafe extern "C" fn(
    i32,
    i32,
    i32,
    i32,
    i32,
    i32,
    f32,
    *const f32,
    i32,
    *const f32,
    i32,
    f32,
    *mut f32,
    i32,
);
type DgemmFn = unsafe extern "C" fn(
    i32,
    i32,
    i32,
    i32,
    i32,
    i32,
    f64,
    *const f64,
    i32,
    *const f64,
    i32,
    f64,
    *mut f64,
    i32,
);

struct Cblas {
    sgemm: SgemmFn,
    dgemm: DgemmFn,
}

// Raw fn pointers are Send + Sync; the handle is never closed.
unsafe impl Send for Cblas {}
unsafe impl Sync for Cblas {}

static CBLAS: OnceLock<Option<Cblas>> = OnceLock::new();

fn load_cblas() -> Option<Cblas> {
    // OpenBLAS picks its kernels from the CPU model string, which generic
    // hypervisors often blank out. If the hardware reports AVX-512F and the
    // user has not chosen a core type, request the AVX-512 kernels explicitly
    // before the library initializes.
    #[cfg(target_arch = "x86_64")]
    if std::env::var_os("OPENBLAS_CORETYPE").is_none()
        && is_x86_feature_detected!("avx512f")
    {
        std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
    }
    unsafe {
        for name in ["libopenblas.so.0", "libopenblas.so", "libcblas.so.3"] {
            let cname = CString::new(name).unwrap();
            let handle = libc::dlopen(cname.as_ptr(), libc::RTLD_NOW | libc::RTLD_LOCAL);
            if handle.is_null() {
                continue;
            }
            let s = libc::dlsym(handle, c"cblas_sgemm".as_ptr());
            let d = libc::dlsym(handle, c"cblas_dgemm".as_ptr());
            if !s.is_null() && !d.is_null() {
                return Some(Cblas {
                    sgemm: std::mem::transmute::<*mut libc::c_void, SgemmFn>(s),
                    dgemm: std::mem::transmute::<*mut libc::c_void, DgemmFn>(d),
                });
            }
            libc::dlclose(handle);
        }
    }
    None
}

fn cblas() -> Option<&'static Cblas> {
    CBLAS.get_or_init(load_cblas).as_ref()
}

/// True when an accelerated BLAS was found (informational).
pub fn has_accelerated_backend() -> bool {
    cblas().is_some()
}

#[allow(clippy::too_many_arguments)] // BLAS calling convention
pub(crate) unsafe fn sgemm(
    m: usize,
    n: usize,
    k: usize,
    alpha: f32,
    a: *const f32,
    lda: usize,
    trans_a: bool,
    b: *const f32,
    ldb: usize,
    trans_b: bool,
    beta: f32,
    c: *mut f32,
    ldc: usize,
) -> bool {
    let Some(f) = cblas() else { return false };
    (f.sgemm)(
        CBLAS_ROW_MAJOR,
        if trans_a { CBLAS_TRANS } else { CBLAS_NO_TRANS },
        if trans_b { CBLAS_TRANS } else { CBLAS_NO_TRANS },
        m as i32,
        n as i32,
        k as i32,
        alpha,
        a,
        lda as i32,
        b,
        ldb as i32,
        beta,
        c,
        ldc as i32,
    );
    true
}

#[allow(clippy::too_many_arguments)] // BLAS calling convention
pub(crate) unsafe fn dgemm(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: *const f64,
    lda: usize,
    trans_a: bool,
    b: *const f64,
    ldb: usize,
    trans_b: bool,
    beta: f64,
    c: *mut f64,
    ldc: usize,
) -> bool {
    let Some(f) = cblas() else { return false };
    (f.dgemm)(
        CBLAS_ROW_MAJOR,
        if trans_a { CBLAS_TRANS } else { CBLAS_NO_TRANS },
        if trans_b { CBLAS_TRANS } else { CBLAS_NO_TRANS },
        m as i32,
        n as i32,
        k as i32,
        alpha,
        a,
        lda as i32,
        b,
        ldb as i32,
        beta,
        c,
        ldc as i32,
    );
    true
}

/// `op(a) · op(b)` where `op` optionally transposes. Inputs must be standard
/// row-major arrays (all arrays produced by this crate are).
pub fn mm<F: Scalar>(
    a: &ArrayView2<'_, F>,
    trans_a: bool,
    b: &ArrayView2<'_, F>,
    trans_b: bool,
) -> Array2<F> {
    let (am, ak) = a.dim();
    let (bk, bn) = b.dim();
    let (m, k) = if trans_a { (ak, am) } else { (am, ak) };
    let (k2, n) = if trans_b { (bn, bk) } else { (bk, bn) };
    assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");

    if let (Some(a_slice), Some(b_slice)) = (a.as_slice(), b.as_slice()) {
        let mut c = Array2::<F>::zeros((m, n));
        let done = unsafe {
            F::gemm_into(
                m,
                n,
                k,
                F::ONE,
                a_slice.as_ptr(),
                ak,
                trans_a,
                b_slice.as_ptr(),
                bn,
                trans_b,
                F::ZERO,
                c.as_mut_ptr(),
                n,
            )
        };
        if done {
            return c;
        }
    }

    // Portable fallback: let ndarray multiply (it handles transposed views).
    match (trans_a, trans_b) {
        (false, false) => a.dot(b),
        (true, false) => a.t().dot(b),
        (false, true) => a.dot(&b.t()),
        (true, true) => a.t().dot(&b.t()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let (m, k) = a.dim();
        let n = b.dim().1;
        let mut c = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[[i, p]] * b[[p, j]];
                }
                c[[i, j]] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_all_transpose_combinations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for &(m, k, n) in &[(3usize, 4usize, 5usize), (7, 2, 9), (1, 6, 1)] {
            let a = Array2::from_shape_fn((m, k), |_| rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_fn((k, n), |_| rng.gen_range(-1.0..1.0));
            let want = naive(&a, &b);

            let got = mm(&a.view(), false, &b.view(), false);
            assert!((&got - &want).iter().all(|x| x.abs() < 1e-12));

            // Same product expressed through transposed storage.
            let at = a.t().as_standard_layout().to_owned();
            let bt = b.t().as_standard_layout().to_owned();
            let got_t = mm(&at.view(), true, &b.view(), false);
            assert!((&got_t - &want).iter().all(|x| x.abs() < 1e-12));
            let got_bt = mm(&a.view(), false, &bt.view(), true);
            assert!((&got_bt - &want).iter().all(|x| x.abs() < 1e-12));
            let got_both = mm(&at.view(), true, &bt.view(), true);
            assert!((&got_both - &want).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn f32_path_agrees_with_f64() {
        let a64 = array![[1.0_f64, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b64 = array![[1.0_f64, 0.5], [-1.0, 2.0], [0.25, -0.5]];
        let a32 = a64.mapv(|x| x as f32);
        let b32 = b64.mapv(|x| x as f32);
        let c64 = mm(&a64.view(), false, &b64.view(), false);
        let c32 = mm(&a32.view(), false, &b32.view(), false);
        for (x, y) in c64.iter().zip(c32.iter()) {
            assert!((x - *y as f64).abs() < 1e-6);
        }
    }
}
