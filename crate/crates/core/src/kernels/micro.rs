//! Register-tile micro-kernels shared by both families.
//!
//! Every kernel accumulates each output element as `acc = acc + a * b` in
//! ascending `k`, starting from zero. Blocking, packing and unrolling never
//! reorder that sum, so all configurations produce the same bits as the
//! reference loop.

use super::matrix::Element;

/// Strided read-only view: element `(r, c)` lives at `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

/// `(kb, a, a_off, b, b_off, acc, acc_off, acc_rs)`
pub(crate) type MicroFn<T> = fn(usize, View<'_, T>, usize, View<'_, T>, usize, &mut [T], usize, usize);

#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
fn micro<T: Element, const MR: usize, const NR: usize, const KU: usize>(
    kb: usize,
    a: View<'_, T>,
    a_off: usize,
    b: View<'_, T>,
    b_off: usize,
    acc: &mut [T],
    acc_off: usize,
    acc_rs: usize,
) {
    debug_assert_eq!(kb % KU, 0);
    let mut r = [[T::zero(); NR]; MR];
    for i in 0..MR {
        let row = &acc[acc_off + i * acc_rs..acc_off + i * acc_rs + NR];
        r[i].copy_from_slice(row);
    }
    for p0 in (0..kb).step_by(KU) {
        for u in 0..KU {
            let p = p0 + u;
            let acol = gather::<T, MR>(a.data, a_off + p * a.cs, a.rs);
            let brow = gather::<T, NR>(b.data, b_off + p * b.rs, b.cs);
            for i in 0..MR {
                for j in 0..NR {
                    r[i][j] = r[i][j] + acol[i] * brow[j];
                }
            }
        }
    }
    for i in 0..MR {
        acc[acc_off + i * acc_rs..acc_off + i * acc_rs + NR].copy_from_slice(&r[i]);
    }
}

#[inline(always)]
fn gather<T: Element, const L: usize>(data: &[T], off: usize, stride: usize) -> [T; L] {
    if stride == 1 {
        data[off..off + L].try_into().unwrap()
    } else {
        let mut out = [T::zero(); L];
        for (l, slot) in out.iter_mut().enumerate() {
            *slot = data[off + l * stride];
        }
        out
    }
}

/// Runtime-sized fallback used for ragged edges and unusual tile shapes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn micro_dyn<T: Element>(
    kb: usize,
    mr: usize,
    nr: usize,
    a: View<'_, T>,
    a_off: usize,
    b: View<'_, T>,
    b_off: usize,
    acc: &mut [T],
    acc_off: usize,
    acc_rs: usize,
) {
    for p in 0..kb {
        let pa = a_off + p * a.cs;
        let pb = b_off + p * b.rs;
        for i in 0..mr {
            let av = a.data[pa + i * a.rs];
            let row = acc_off + i * acc_rs;
            for j in 0..nr {
                acc[row + j] = acc[row + j] + av * b.data[pb + j * b.cs];
            }
        }
    }
}

/// Monomorphized micro-kernel for a register tile, if one is compiled in.
pub(crate) fn micro_for<T: Element>(mr: usize, nr: usize, ku: usize) -> Option<MicroFn<T>> {
    // Unrolling never changes the summation order, so unsupported unroll
    // factors fall back to the rolled loop.
    let ku = if ku == 2 { 2 } else { 1 };
    macro_rules! table {
        ($(($m:literal, $n:literal)),*) => {
            match (mr, nr, ku) {
                $(
                    ($m, $n, 1) => Some(micro::<T, $m, $n, 1> as MicroFn<T>),
                    ($m, $n, 2) => Some(micro::<T, $m, $n, 2> as MicroFn<T>),
                )*
                _ => None,
            }
        };
    }
    table!(
        (1, 1), (1, 2), (1, 4), (1, 8),
        (2, 1), (2, 2), (2, 4), (2, 8),
        (4, 1), (4, 2), (4, 4), (4, 8),
        (8, 1), (8, 2), (8, 4), (8, 8)
    )
}
