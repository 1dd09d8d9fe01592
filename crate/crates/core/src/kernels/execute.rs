use std::time::{Duration, Instant};

use super::config::{check_legal, DeviceCaps, KernelConfig, KernelFamily};
use super::matrix::{Element, Matrix};
use super::micro::{micro_dyn, micro_for, View};
use super::reference::check_operands;
use super::shape::ProblemShape;
use crate::error::Result;

/// Scratch buffers reused across timed runs so allocation stays out of the
/// measured region once the buffers have grown to size.
#[derive(Debug, Default)]
pub struct GemmWorkspace<T> {
    a: Vec<T>,
    b: Vec<T>,
    acc: Vec<T>,
    /// Force the Indirect pad/pack helpers even when operands are already
    /// tile-aligned and untransposed.
    pub force_pad: bool,
}

impl<T: Element> GemmWorkspace<T> {
    pub fn new() -> Self {
        Self {
            a: Vec::new(),
            b: Vec::new(),
            acc: Vec::new(),
            force_pad: false,
        }
    }

    pub fn with_forced_padding() -> Self {
        Self {
            force_pad: true,
            ..Self::new()
        }
    }
}

fn zeroed<T: Element>(buf: &mut Vec<T>, len: usize) -> &mut [T] {
    buf.clear();
    buf.resize(len, T::zero());
    &mut buf[..len]
}

fn round_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

fn view_a<'a, T>(shape: &ProblemShape, a: &'a Matrix<T>) -> View<'a, T>
where
    T: Element,
{
    if shape.trans_a {
        View {
            data: a.as_slice(),
            rs: 1,
            cs: shape.m,
        }
    } else {
        View {
            data: a.as_slice(),
            rs: shape.k,
            cs: 1,
        }
    }
}

fn view_b<'a, T>(shape: &ProblemShape, b: &'a Matrix<T>) -> View<'a, T>
where
    T: Element,
{
    if shape.trans_b {
        View {
            data: b.as_slice(),
            rs: 1,
            cs: shape.k,
        }
    } else {
        View {
            data: b.as_slice(),
            rs: shape.n,
            cs: 1,
        }
    }
}

/// Copies a logical `rows x cols` view into a zero-padded buffer laid out
/// with the given destination strides.
fn pack<T: Element>(src: View<'_, T>, rows: usize, cols: usize, dst: &mut [T], dst_rs: usize, dst_cs: usize) {
    if src.cs == 1 && dst_cs == 1 {
        for r in 0..rows {
            let s = r * src.rs;
            dst[r * dst_rs..r * dst_rs + cols].copy_from_slice(&src.data[s..s + cols]);
        }
    } else if src.rs == 1 && dst_rs == 1 {
        for c in 0..cols {
            let s = c * src.cs;
            dst[c * dst_cs..c * dst_cs + rows].copy_from_slice(&src.data[s..s + rows]);
        }
    } else {
        for r in 0..rows {
            for c in 0..cols {
                dst[r * dst_rs + c * dst_cs] = src.data[r * src.rs + c * src.cs];
            }
        }
    }
}

fn write_back<T: Element>(
    shape: &ProblemShape,
    acc: &[T],
    acc_rs: usize,
    c: &Matrix<T>,
    out: &mut Matrix<T>,
) {
    let alpha = T::from(shape.alpha).unwrap();
    let beta = T::from(shape.beta).unwrap();
    let n = shape.n;
    let c = c.as_slice();
    let out = out.as_mut_slice();
    for i in 0..shape.m {
        let acc_row = &acc[i * acc_rs..i * acc_rs + n];
        let c_row = &c[i * n..(i + 1) * n];
        for ((o, &s), &cv) in out[i * n..(i + 1) * n].iter_mut().zip(acc_row).zip(c_row) {
            *o = alpha * s + beta * cv;
        }
    }
}

fn run_direct<T: Element>(
    shape: &ProblemShape,
    cfg: &KernelConfig,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    out: &mut Matrix<T>,
    ws: &mut GemmWorkspace<T>,
) {
    let (m, n, k) = shape.dims();
    let a = view_a(shape, a);
    let b = view_b(shape, b);
    let micro = micro_for::<T>(cfg.mwi, cfg.nwi, 1);
    let alpha = T::from(shape.alpha).unwrap();
    let beta = T::from(shape.beta).unwrap();
    let tile_rs = cfg.nwg;

    for i0 in (0..m).step_by(cfg.mwg) {
        let mt = cfg.mwg.min(m - i0);
        for j0 in (0..n).step_by(cfg.nwg) {
            let nt = cfg.nwg.min(n - j0);
            let tile = zeroed(&mut ws.acc, cfg.mwg * cfg.nwg);
            for p0 in (0..k).step_by(cfg.kwg) {
                let kb = cfg.kwg.min(k - p0);
                for ii in (0..mt).step_by(cfg.mwi) {
                    let mr = cfg.mwi.min(mt - ii);
                    let a_off = (i0 + ii) * a.rs + p0 * a.cs;
                    for jj in (0..nt).step_by(cfg.nwi) {
                        let nr = cfg.nwi.min(nt - jj);
                        let b_off = p0 * b.rs + (j0 + jj) * b.cs;
                        let acc_off = ii * tile_rs + jj;
                        match micro {
                            Some(f) if mr == cfg.mwi && nr == cfg.nwi => {
                                f(kb, a, a_off, b, b_off, tile, acc_off, tile_rs)
                            }
                            _ => micro_dyn(kb, mr, nr, a, a_off, b, b_off, tile, acc_off, tile_rs),
                        }
                    }
                }
            }
            let c = c.as_slice();
            let o = out.as_mut_slice();
            for ii in 0..mt {
                let row = (i0 + ii) * n + j0;
                for jj in 0..nt {
                    o[row + jj] = alpha * tile[ii * tile_rs + jj] + beta * c[row + jj];
                }
            }
        }
    }
}

fn run_indirect<T: Element>(
    shape: &ProblemShape,
    cfg: &KernelConfig,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    out: &mut Matrix<T>,
    ws: &mut GemmWorkspace<T>,
) {
    let (m, n, k) = shape.dims();
    let mp = round_up(m, cfg.mwg);
    let np = round_up(n, cfg.nwg);
    let kp = round_up(k, cfg.kwg);
    let aligned = mp == m && np == n && kp == k;

    // Helper passes: pad and/or transpose operands into tile-multiple
    // buffers. A is stored k-major so register-tile columns are contiguous;
    // an already k-major (transposed) aligned A needs no copy.
    let pack_a = ws.force_pad || !aligned || !shape.trans_a;
    let pack_b = ws.force_pad || !aligned || shape.trans_b;
    if pack_a {
        let dst = zeroed(&mut ws.a, mp * kp);
        pack(view_a(shape, a), m, k, dst, 1, mp);
    }
    if pack_b {
        let dst = zeroed(&mut ws.b, kp * np);
        pack(view_b(shape, b), k, n, dst, np, 1);
    }
    let av = if pack_a {
        View { data: &ws.a[..mp * kp], rs: 1, cs: mp }
    } else {
        view_a(shape, a)
    };
    let bv = if pack_b {
        View { data: &ws.b[..kp * np], rs: np, cs: 1 }
    } else {
        view_b(shape, b)
    };

    let acc = zeroed(&mut ws.acc, mp * np);
    let micro = micro_for::<T>(cfg.mwi, cfg.nwi, cfg.kwi);
    for i0 in (0..mp).step_by(cfg.mwg) {
        for j0 in (0..np).step_by(cfg.nwg) {
            for p0 in (0..kp).step_by(cfg.kwg) {
                for ii in (i0..i0 + cfg.mwg).step_by(cfg.mwi) {
                    let a_off = ii * av.rs + p0 * av.cs;
                    for jj in (j0..j0 + cfg.nwg).step_by(cfg.nwi) {
                        let b_off = p0 * bv.rs + jj;
                        let acc_off = ii * np + jj;
                        match micro {
                            Some(f) => f(cfg.kwg, av, a_off, bv, b_off, acc, acc_off, np),
                            None => micro_dyn(
                                cfg.kwg, cfg.mwi, cfg.nwi, av, a_off, bv, b_off, acc, acc_off, np,
                            ),
                        }
                    }
                }
            }
        }
    }
    write_back(shape, &ws.acc, np, c, out);
}

/// Runs `config` into a caller-provided output, reusing `ws`. Returns the
/// elapsed time of the whole path, helper passes included.
#[allow(clippy::too_many_arguments)]
pub fn gemm_execute_into<T: Element>(
    shape: &ProblemShape,
    config: &KernelConfig,
    caps: &DeviceCaps,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
    out: &mut Matrix<T>,
    ws: &mut GemmWorkspace<T>,
) -> Result<Duration> {
    check_legal(config, caps)?;
    check_operands(shape, a, b, c)?;
    check_operands(shape, a, b, out)?;
    let start = Instant::now();
    match config.family {
        KernelFamily::Direct => run_direct(shape, config, a, b, c, out, ws),
        KernelFamily::Indirect => run_indirect(shape, config, a, b, c, out, ws),
    }
    Ok(start.elapsed())
}

/// Executes one GEMM with the given kernel configuration.
pub fn gemm_execute<T: Element>(
    shape: &ProblemShape,
    config: &KernelConfig,
    caps: &DeviceCaps,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<(Matrix<T>, Duration)> {
    let mut out = Matrix::zeros(shape.m, shape.n);
    let mut ws = GemmWorkspace::new();
    let elapsed = gemm_execute_into(shape, config, caps, a, b, c, &mut out, &mut ws)?;
    Ok((out, elapsed))
}
