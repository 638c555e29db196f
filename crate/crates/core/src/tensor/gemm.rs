//! Blocked dense matrix multiply.
//!
//! Every output element is accumulated over the inner dimension in ascending
//! index order, one fused multiply-add per term, so the result is
//! bit-identical to the textbook loop
//! `acc = 0; for k in 0..K { acc = a[i][k].mul_add(b[k][j], acc) }`
//! regardless of which kernel (AVX-512, AVX2 or portable) runs. Fused
//! multiply-add is exactly rounded, so this holds on every target. Threads
//! split the output by row panels and never share an accumulator, which keeps
//! the result independent of the thread count.

use crate::parallel;
use std::sync::OnceLock;

const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 120;
const NC: usize = 2048;

/// A read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` view.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatRef { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        MatRef { data: self.data, rows: self.cols, cols: self.rows, row_stride: self.col_stride, col_stride: self.row_stride }
    }

    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row_stride + c * self.col_stride]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kernel {
    Avx512,
    Avx2,
    Portable,
}

impl Kernel {
    fn detect() -> Kernel {
        static KERNEL: OnceLock<Kernel> = OnceLock::new();
        *KERNEL.get_or_init(|| {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx512f") {
                    return Kernel::Avx512;
                }
                if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                    return Kernel::Avx2;
                }
            }
            Kernel::Portable
        })
    }

    /// Rows per micro-tile.
    fn mr(self) -> usize {
        match self {
            Kernel::Avx512 => 12,
            Kernel::Avx2 => 6,
            Kernel::Portable => 4,
        }
    }
}

/// `c = a * b` (when `accumulate` is false) or `c += a * b`, with `c` row-major
/// `a.rows x b.cols`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    gemm_with(Kernel::detect(), a, b, c, accumulate);
}

fn gemm_with(kernel: Kernel, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, n, k) = (a.rows, b.cols, a.cols);
    assert_eq!(c.len(), m * n, "gemm output size mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }

    let mr = kernel.mr();
    let threads = parallel::worker_threads().min(m.div_ceil(mr)).max(1);
    // Only worth spawning when each worker has real work.
    if threads == 1 || (m * n * k) < (1 << 22) {
        gemm_rows(kernel, a, b, c, accumulate);
        return;
    }
    let rows_per = m.div_ceil(mr).div_ceil(threads) * mr;
    std::thread::scope(|s| {
        for (t, chunk) in c.chunks_mut(rows_per * n).enumerate() {
            let r0 = t * rows_per;
            let rows = chunk.len() / n;
            let a_part = MatRef { data: &a.data[r0 * a.row_stride..], rows, ..a };
            s.spawn(move || gemm_rows(kernel, a_part, b, chunk, accumulate));
        }
    });
}

fn gemm_rows(kernel: Kernel, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mr_full = kernel.mr();
    let ldc = n;
    let kc_max = KC.min(k);
    let mut bpack = vec![0.0; kc_max * NC.min(n).div_ceil(NR) * NR];
    let mut apack = vec![0.0; kc_max * MC.min(m).div_ceil(mr_full) * mr_full];
    let mut scratch = [0.0f64; 12 * NR];

    let mut jc = 0;
    while jc < n {
        let nc = NC.min(n - jc);
        let mut pc = 0;
        while pc < k {
            let kc = KC.min(k - pc);
            pack_b(b, pc, kc, jc, nc, &mut bpack);
            let first = pc == 0 && !accumulate;
            let mut ic = 0;
            while ic < m {
                let mc = MC.min(m - ic);
                pack_a(a, ic, mc, pc, kc, mr_full, &mut apack);
                for jr in (0..nc).step_by(NR) {
                    let nr = NR.min(nc - jr);
                    let bp = &bpack[jr * kc..jr * kc + kc * NR];
                    for ir in (0..mc).step_by(mr_full) {
                        let mr = mr_full.min(mc - ir);
                        let ap = &apack[ir * kc..ir * kc + kc * mr_full];
                        let base = (ic + ir) * ldc + jc + jr;
                        if mr == mr_full && nr == NR {
                            run_kernel(kernel, kc, ap, bp, &mut c[base..], ldc, first);
                        } else {
                            // Edge tile: compute a full tile into scratch, then copy
                            // the valid part. Padding is zero so it never leaks.
                            let tile = &mut scratch[..mr_full * NR];
                            if !first {
                                for i in 0..mr {
                                    tile[i * NR..i * NR + nr].copy_from_slice(&c[base + i * ldc..base + i * ldc + nr]);
                                }
                            }
                            run_kernel(kernel, kc, ap, bp, tile, NR, first);
                            for i in 0..mr {
                                c[base + i * ldc..base + i * ldc + nr].copy_from_slice(&tile[i * NR..i * NR + nr]);
                            }
                        }
                    }
                }
                ic += mc;
            }
            pc += kc;
        }
        jc += nc;
    }
}

/// Packs `b[pc..pc+kc, jc..jc+nc]` into NR-wide column strips, k-major,
/// zero-padded on the right.
fn pack_b(b: MatRef<'_>, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut [f64]) {
    for (strip, jr) in (0..nc).step_by(NR).enumerate() {
        let nr = NR.min(nc - jr);
        let dst = &mut out[strip * kc * NR..(strip + 1) * kc * NR];
        for p in 0..kc {
            let row = &mut dst[p * NR..(p + 1) * NR];
            if b.col_stride == 1 {
                let off = (pc + p) * b.row_stride + jc + jr;
                row[..nr].copy_from_slice(&b.data[off..off + nr]);
            } else {
                for j in 0..nr {
                    row[j] = b.at(pc + p, jc + jr + j);
                }
            }
            row[nr..].fill(0.0);
        }
    }
}

/// Packs `a[ic..ic+mc, pc..pc+kc]` into `mr`-tall row strips, k-major,
/// zero-padded at the bottom.
fn pack_a(a: MatRef<'_>, ic: usize, mc: usize, pc: usize, kc: usize, mr_full: usize, out: &mut [f64]) {
    for (strip, ir) in (0..mc).step_by(mr_full).enumerate() {
        let mr = mr_full.min(mc - ir);
        let dst = &mut out[strip * kc * mr_full..(strip + 1) * kc * mr_full];
        if a.row_stride == 1 {
            // Column-major source: each k contributes a contiguous run.
            for p in 0..kc {
                let off = (pc + p) * a.col_stride + ic + ir;
                let col = &mut dst[p * mr_full..(p + 1) * mr_full];
                col[..mr].copy_from_slice(&a.data[off..off + mr]);
                col[mr..].fill(0.0);
            }
        } else {
            for p in 0..kc {
                let col = &mut dst[p * mr_full..(p + 1) * mr_full];
                for i in 0..mr {
                    col[i] = a.at(ic + ir + i, pc + p);
                }
                col[mr..].fill(0.0);
            }
        }
    }
}

/// Full `mr x NR` tile update of `c` (row stride `ldc`).
#[inline(always)]
fn run_kernel(kernel: Kernel, kc: usize, ap: &[f64], bp: &[f64], c: &mut [f64], ldc: usize, first: bool) {
    let mr = kernel.mr();
    assert!(ap.len() >= kc * mr && bp.len() >= kc * NR && c.len() >= (mr - 1) * ldc + NR);
    match kernel {
        // SAFETY: the variant is only selected after runtime feature detection,
        // and the assertion above bounds every pointer access in the kernels.
        #[cfg(target_arch = "x86_64")]
        Kernel::Avx512 => unsafe { x86::kernel_12x16(kc, ap.as_ptr(), bp.as_ptr(), c.as_mut_ptr(), ldc, first) },
        #[cfg(target_arch = "x86_64")]
        Kernel::Avx2 => unsafe {
            x86::kernel_6x8(kc, ap.as_ptr(), bp.as_ptr(), c.as_mut_ptr(), ldc, first);
            x86::kernel_6x8(kc, ap.as_ptr(), bp.as_ptr().add(8), c.as_mut_ptr().add(8), ldc, first);
        },
        _ => portable_kernel(kc, ap, bp, c, ldc, first),
    }
}

fn portable_kernel(kc: usize, ap: &[f64], bp: &[f64], c: &mut [f64], ldc: usize, first: bool) {
    const MR: usize = 4;
    let mut acc = [[0.0f64; NR]; MR];
    if !first {
        for i in 0..MR {
            acc[i].copy_from_slice(&c[i * ldc..i * ldc + NR]);
        }
    }
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
        for i in 0..MR {
            for j in 0..NR {
                acc[i][j] = a[i].mul_add(b[j], acc[i][j]);
            }
        }
    }
    for i in 0..MR {
        c[i * ldc..i * ldc + NR].copy_from_slice(&acc[i]);
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    /// 12 x 16 tile: 24 zmm accumulators, B row in two registers.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn kernel_12x16(kc: usize, ap: *const f64, bp: *const f64, c: *mut f64, ldc: usize, first: bool) {
        let mut acc = [[_mm512_setzero_pd(); 2]; 12];
        if !first {
            for (i, row) in acc.iter_mut().enumerate() {
                row[0] = _mm512_loadu_pd(c.add(i * ldc));
                row[1] = _mm512_loadu_pd(c.add(i * ldc + 8));
            }
        }
        for p in 0..kc {
            let b0 = _mm512_loadu_pd(bp.add(p * 16));
            let b1 = _mm512_loadu_pd(bp.add(p * 16 + 8));
            let a = ap.add(p * 12);
            for (i, row) in acc.iter_mut().enumerate() {
                let ai = _mm512_set1_pd(*a.add(i));
                row[0] = _mm512_fmadd_pd(ai, b0, row[0]);
                row[1] = _mm512_fmadd_pd(ai, b1, row[1]);
            }
        }
        for (i, row) in acc.iter().enumerate() {
            _mm512_storeu_pd(c.add(i * ldc), row[0]);
            _mm512_storeu_pd(c.add(i * ldc + 8), row[1]);
        }
    }

    /// 6 x 8 half tile reading a 16-wide packed B strip.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn kernel_6x8(kc: usize, ap: *const f64, bp: *const f64, c: *mut f64, ldc: usize, first: bool) {
        let mut acc = [[_mm256_setzero_pd(); 2]; 6];
        if !first {
            for (i, row) in acc.iter_mut().enumerate() {
                row[0] = _mm256_loadu_pd(c.add(i * ldc));
                row[1] = _mm256_loadu_pd(c.add(i * ldc + 4));
            }
        }
        for p in 0..kc {
            let b0 = _mm256_loadu_pd(bp.add(p * 16));
            let b1 = _mm256_loadu_pd(bp.add(p * 16 + 4));
            let a = ap.add(p * 6);
            for (i, row) in acc.iter_mut().enumerate() {
                let ai = _mm256_set1_pd(*a.add(i));
                row[0] = _mm256_fmadd_pd(ai, b0, row[0]);
                row[1] = _mm256_fmadd_pd(ai, b1, row[1]);
            }
        }
        for (i, row) in acc.iter().enumerate() {
            _mm256_storeu_pd(c.add(i * ldc), row[0]);
            _mm256_storeu_pd(c.add(i * ldc + 4), row[1]);
        }
    }
}
