//! Small 3D convolutional encoder–decoder with residual blocks and a
//! sinusoidal timestep embedding, with hand-written backprop.
//!
//! Activations are `(channels, voxels)` matrices, voxels x-fastest. Every
//! convolution is 3×3×3 with zero padding 1 and is lowered to a GEMM via
//! im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub trait Real: Float + ndarray::LinalgScalar + Send + Sync + std::fmt::Debug + 'static {}
impl Real for f32 {}
impl Real for f64 {}

const K3: usize = 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub base_channels: usize,
    pub time_embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            base_channels: 8,
            time_embed_dim: 16,
        }
    }
}

impl Architecture {
    pub fn time_hidden(&self) -> usize {
        2 * self.time_embed_dim
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    cout: usize,
    cin: usize,
    stride: usize,
}

impl Conv {
    fn w_len(&self) -> usize {
        self.cout * self.cin * K3
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

#[derive(Clone, Copy, Debug)]
struct Res {
    conv1: Conv,
    temb: Linear,
    conv2: Conv,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, n: usize) -> usize {
        let o = self.0;
        self.0 += n;
        o
    }

    fn conv(&mut self, cout: usize, cin: usize, stride: usize) -> Conv {
        let w = self.take(cout * cin * K3);
        let b = self.take(cout);
        Conv { w, b, cout, cin, stride }
    }

    fn linear(&mut self, out: usize, inp: usize) -> Linear {
        let w = self.take(out * inp);
        let b = self.take(out);
        Linear { w, b, out, inp }
    }

    fn res(&mut self, c: usize, hidden: usize) -> Res {
        Res {
            conv1: self.conv(c, c, 1),
            temb: self.linear(c, hidden),
            conv2: self.conv(c, c, 1),
        }
    }
}

/// Parameter offsets for one architecture.
#[derive(Clone, Debug)]
pub struct Plan {
    arch: Architecture,
    time1: Linear,
    conv_in: Conv,
    r0: Res,
    down1: Conv,
    r1: Res,
    down2: Conv,
    r2: Res,
    up1: Conv,
    r3: Res,
    up2: Conv,
    r4: Res,
    conv_out: Conv,
    n_params: usize,
}

impl Plan {
    pub fn new(arch: Architecture) -> Self {
        let c = arch.base_channels;
        let h = arch.time_hidden();
        let mut a = Alloc(0);
        let time1 = a.linear(h, arch.time_embed_dim);
        let conv_in = a.conv(c, 1, 1);
        let r0 = a.res(c, h);
        let down1 = a.conv(2 * c, c, 2);
        let r1 = a.res(2 * c, h);
        let down2 = a.conv(4 * c, 2 * c, 2);
        let r2 = a.res(4 * c, h);
        let up1 = a.conv(2 * c, 4 * c, 1);
        let r3 = a.res(2 * c, h);
        let up2 = a.conv(c, 2 * c, 1);
        let r4 = a.res(c, h);
        let conv_out = a.conv(1, c, 1);
        Self {
            arch,
            time1,
            conv_in,
            r0,
            down1,
            r1,
            down2,
            r2,
            up1,
            r3,
            up2,
            r4,
            conv_out,
            n_params: a.0,
        }
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn res_blocks(&self) -> [&Res; 5] {
        [&self.r0, &self.r1, &self.r2, &self.r3, &self.r4]
    }

    /// Scaled-normal weights, zero biases. The last conv of every residual
    /// branch and the output head start at zero, so a fresh model predicts 0.
    pub fn init<F: Real, R: Rng>(&self, rng: &mut R) -> Vec<F> {
        let mut p = vec![F::zero(); self.n_params];
        let mut fill = |off: usize, len: usize, fan_in: usize| {
            let std = (1.0 / fan_in as f64).sqrt();
            for v in &mut p[off..off + len] {
                let z: f64 = StandardNormal.sample(rng);
                *v = F::from(z * std).unwrap();
            }
        };
        let t1 = self.time1;
        fill(t1.w, t1.out * t1.inp, t1.inp);
        for c in [self.conv_in, self.down1, self.down2, self.up1, self.up2] {
            fill(c.w, c.w_len(), c.cin * K3);
        }
        for r in self.res_blocks() {
            fill(r.conv1.w, r.conv1.w_len(), r.conv1.cin * K3);
            fill(r.temb.w, r.temb.out * r.temb.inp, r.temb.inp);
        }
        p
    }
}

impl PartialEq for Plan {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
    }
}

pub fn check_dims(dims: [usize; 3]) -> crate::Result<()> {
    if dims.iter().any(|d| *d == 0 || d % 4 != 0) {
        return Err(crate::Error::ShapeMismatch(format!(
            "denoiser needs every grid dimension divisible by 4, got {dims:?}"
        )));
    }
    Ok(())
}

pub fn timestep_embedding<F: Real>(t: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = F::from(a.sin()).unwrap();
        out[half + i] = F::from(a.cos()).unwrap();
    }
    out
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

fn n_of(d: [usize; 3]) -> usize {
    d[0] * d[1] * d[2]
}

fn half(d: [usize; 3]) -> [usize; 3] {
    [d[0] / 2, d[1] / 2, d[2] / 2]
}

/// Calls `f(tap, out_row, in_row, x_lo, x_hi, kx)` for every kernel tap and
/// every output x-row whose source row lies inside the input. Output voxels
/// `x_lo..x_hi` of that row read input x `stride·ox + kx − 1`.
fn for_each_row(din: [usize; 3], dout: [usize; 3], stride: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for kz in 0..3 {
        for ky in 0..3 {
            for kx in 0..3 {
                let k = kx + 3 * ky + 9 * kz;
                // valid ox: 0 <= stride·ox + kx − 1 < din[0]
                let x_lo = if kx == 0 { 1 } else { 0 };
                let x_hi = ((din[0] + 1 - kx) + stride - 1) / stride;
                let x_hi = x_hi.min(dout[0]);
                for oz in 0..dout[2] {
                    let iz = (stride * oz + kz) as isize - 1;
                    if iz < 0 || iz >= din[2] as isize {
                        continue;
                    }
                    for oy in 0..dout[1] {
                        let iy = (stride * oy + ky) as isize - 1;
                        if iy < 0 || iy >= din[1] as isize {
                            continue;
                        }
                        let o = dout[0] * (oy + dout[1] * oz);
                        let i = din[0] * (iy as usize + din[1] * iz as usize);
                        f(k, o, i, x_lo, x_hi, kx);
                    }
                }
            }
        }
    }
}

fn im2col<F: Real>(x: &Array2<F>, din: [usize; 3], dout: [usize; 3], stride: usize) -> Array2<F> {
    let cin = x.nrows();
    let nout = n_of(dout);
    let mut cols = Array2::zeros((cin * K3, nout));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    let nin = n_of(din);
    for ci in 0..cin {
        let xr = &xs[ci * nin..(ci + 1) * nin];
        let base = ci * K3 * nout;
        for_each_row(din, dout, stride, |k, o, i, lo, hi, kx| {
            let dst = &mut cs[base + k * nout + o..base + k * nout + o + dout[0]];
            if stride == 1 {
                let s0 = i + lo + kx - 1;
                dst[lo..hi].copy_from_slice(&xr[s0..s0 + (hi - lo)]);
            } else {
                for ox in lo..hi {
                    dst[ox] = xr[i + stride * ox + kx - 1];
                }
            }
        });
    }
    cols
}

fn col2im<F: Real>(dcols: &Array2<F>, cin: usize, din: [usize; 3], dout: [usize; 3], stride: usize) -> Array2<F> {
    let nout = n_of(dout);
    let nin = n_of(din);
    let mut dx = Array2::zeros((cin, nin));
    let cs = dcols.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    for ci in 0..cin {
        let xr = &mut xs[ci * nin..(ci + 1) * nin];
        let base = ci * K3 * nout;
        for_each_row(din, dout, stride, |k, o, i, lo, hi, kx| {
            let src = &cs[base + k * nout + o..base + k * nout + o + dout[0]];
            if stride == 1 {
                let s0 = i + lo + kx - 1;
                for (d, v) in xr[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                    *d = *d + *v;
                }
            } else {
                for ox in lo..hi {
                    let d = &mut xr[i + stride * ox + kx - 1];
                    *d = *d + src[ox];
                }
            }
        });
    }
    dx
}

fn out_dims(c: &Conv, din: [usize; 3]) -> [usize; 3] {
    if c.stride == 1 {
        din
    } else {
        half(din)
    }
}

fn conv_forward<F: Real>(c: &Conv, p: &[F], x: &Array2<F>, din: [usize; 3]) -> (Array2<F>, Array2<F>) {
    let dout = out_dims(c, din);
    let cols = im2col(x, din, dout, c.stride);
    let w = ArrayView2::from_shape((c.cout, c.cin * K3), &p[c.w..c.w + c.w_len()]).expect("weight shape");
    let mut out = Array2::zeros((c.cout, cols.ncols()));
    general_mat_mul(F::one(), &w, &cols, F::zero(), &mut out);
    for (co, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let b = p[c.b + co];
        row.mapv_inplace(|v| v + b);
    }
    (out, cols)
}

/// Accumulates weight/bias gradients; returns the input gradient if asked.
fn conv_backward<F: Real>(
    c: &Conv,
    p: &[F],
    g: &mut [F],
    cols: &Array2<F>,
    dy: &Array2<F>,
    din: [usize; 3],
    need_dx: bool,
) -> Option<Array2<F>> {
    {
        let mut dw = ArrayViewMut2::from_shape((c.cout, c.cin * K3), &mut g[c.w..c.w + c.w_len()]).expect("weight shape");
        general_mat_mul(F::one(), dy, &cols.t(), F::one(), &mut dw);
    }
    for (co, row) in dy.axis_iter(Axis(0)).enumerate() {
        g[c.b + co] = g[c.b + co] + row.sum();
    }
    if !need_dx {
        return None;
    }
    let w = ArrayView2::from_shape((c.cout, c.cin * K3), &p[c.w..c.w + c.w_len()]).expect("weight shape");
    let mut dcols = Array2::zeros((c.cin * K3, dy.ncols()));
    general_mat_mul(F::one(), &w.t(), dy, F::zero(), &mut dcols);
    Some(col2im(&dcols, c.cin, din, out_dims(c, din), c.stride))
}

fn linear_forward<F: Real>(l: &Linear, p: &[F], x: &[F]) -> Vec<F> {
    (0..l.out)
        .map(|o| {
            let row = &p[l.w + o * l.inp..l.w + (o + 1) * l.inp];
            row.iter().zip(x).fold(p[l.b + o], |acc, (w, v)| acc + *w * *v)
        })
        .collect()
}

fn linear_backward<F: Real>(l: &Linear, p: &[F], g: &mut [F], x: &[F], dy: &[F], dx: Option<&mut [F]>) {
    for o in 0..l.out {
        g[l.b + o] = g[l.b + o] + dy[o];
        for i in 0..l.inp {
            g[l.w + o * l.inp + i] = g[l.w + o * l.inp + i] + dy[o] * x[i];
        }
    }
    if let Some(dx) = dx {
        for o in 0..l.out {
            for i in 0..l.inp {
                dx[i] = dx[i] + p[l.w + o * l.inp + i] * dy[o];
            }
        }
    }
}

fn parent_table(dfine: [usize; 3]) -> Vec<u32> {
    let dc = half(dfine);
    let mut t = Vec::with_capacity(n_of(dfine));
    for z in 0..dfine[2] {
        for y in 0..dfine[1] {
            for x in 0..dfine[0] {
                t.push((x / 2 + dc[0] * (y / 2 + dc[1] * (z / 2))) as u32);
            }
        }
    }
    t
}

fn upsample<F: Real>(x: &Array2<F>, dfine: [usize; 3]) -> Array2<F> {
    let parents = parent_table(dfine);
    let mut out = Array2::zeros((x.nrows(), parents.len()));
    for (mut o, i) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
        for (v, p) in o.iter_mut().zip(&parents) {
            *v = i[*p as usize];
        }
    }
    out
}

fn upsample_backward<F: Real>(dy: &Array2<F>, dfine: [usize; 3]) -> Array2<F> {
    let parents = parent_table(dfine);
    let mut dx = Array2::zeros((dy.nrows(), n_of(half(dfine))));
    for (mut o, i) in dx.axis_iter_mut(Axis(0)).zip(dy.axis_iter(Axis(0))) {
        for (v, p) in i.iter().zip(&parents) {
            o[*p as usize] = o[*p as usize] + *v;
        }
    }
    dx
}

struct ResTape<F> {
    h: Array2<F>,
    cols1: Array2<F>,
    c1: Array2<F>,
    cols2: Array2<F>,
}

fn res_forward<F: Real>(r: &Res, p: &[F], h: Array2<F>, d: [usize; 3], tvec: &[F], keep: bool) -> (Array2<F>, Option<ResTape<F>>) {
    let a1 = h.mapv(silu);
    let (mut c1, cols1) = conv_forward(&r.conv1, p, &a1, d);
    let tb = linear_forward(&r.temb, p, tvec);
    for (mut row, b) in c1.axis_iter_mut(Axis(0)).zip(&tb) {
        row.mapv_inplace(|v| v + *b);
    }
    let a2 = c1.mapv(silu);
    let (c2, cols2) = conv_forward(&r.conv2, p, &a2, d);
    let out = &h + &c2;
    let tape = keep.then(|| ResTape { h, cols1, c1, cols2 });
    (out, tape)
}

fn res_backward<F: Real>(
    r: &Res,
    p: &[F],
    g: &mut [F],
    tape: &ResTape<F>,
    dy: Array2<F>,
    d: [usize; 3],
    tvec: &[F],
    dtvec: &mut [F],
) -> Array2<F> {
    let da2 = conv_backward(&r.conv2, p, g, &tape.cols2, &dy, d, true).expect("dx");
    let mut dc1 = da2;
    dc1.zip_mut_with(&tape.c1, |g, x| *g = *g * silu_grad(*x));
    let dtb: Vec<F> = dc1.axis_iter(Axis(0)).map(|row| row.sum()).collect();
    linear_backward(&r.temb, p, g, tvec, &dtb, Some(dtvec));
    let mut da1 = conv_backward(&r.conv1, p, g, &tape.cols1, &dc1, d, true).expect("dx");
    da1.zip_mut_with(&tape.h, |g, x| *g = *g * silu_grad(*x));
    dy + da1
}

/// Intermediate values kept for the backward pass.
pub struct Tape<F> {
    dims: [usize; 3],
    emb: Vec<F>,
    pre_t: Vec<F>,
    tvec: Vec<F>,
    cols_in: Array2<F>,
    r0: ResTape<F>,
    cols_d1: Array2<F>,
    r1: ResTape<F>,
    cols_d2: Array2<F>,
    r2: ResTape<F>,
    cols_u1: Array2<F>,
    r3: ResTape<F>,
    cols_u2: Array2<F>,
    r4: ResTape<F>,
    r4_out: Array2<F>,
    cols_out: Array2<F>,
}

/// Noise prediction for one grid. `dims` must be divisible by 4.
pub fn forward<F: Real>(plan: &Plan, p: &[F], x: &[F], dims: [usize; 3], t: usize, keep: bool) -> (Vec<F>, Option<Tape<F>>) {
    let d0 = dims;
    let d1 = half(d0);
    let d2 = half(d1);
    let emb = timestep_embedding::<F>(t, plan.arch.time_embed_dim);
    let pre_t = linear_forward(&plan.time1, p, &emb);
    let tvec: Vec<F> = pre_t.iter().map(|v| silu(*v)).collect();

    let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("input length");
    let (h0, cols_in) = conv_forward(&plan.conv_in, p, &x, d0);
    let (s0, t0) = res_forward(&plan.r0, p, h0, d0, &tvec, keep);
    let (h1, cols_d1) = conv_forward(&plan.down1, p, &s0, d0);
    let (s1, t1) = res_forward(&plan.r1, p, h1, d1, &tvec, keep);
    let (h2, cols_d2) = conv_forward(&plan.down2, p, &s1, d1);
    let (s2, t2) = res_forward(&plan.r2, p, h2, d2, &tvec, keep);
    let (u1, cols_u1) = conv_forward(&plan.up1, p, &upsample(&s2, d1), d1);
    let (r3, t3) = res_forward(&plan.r3, p, u1 + &s1, d1, &tvec, keep);
    let (u0, cols_u2) = conv_forward(&plan.up2, p, &upsample(&r3, d0), d0);
    let (r4, t4) = res_forward(&plan.r4, p, u0 + &s0, d0, &tvec, keep);
    let (out, cols_out) = conv_forward(&plan.conv_out, p, &r4.mapv(silu), d0);
    let out = out.into_raw_vec_and_offset().0;
    if !keep {
        return (out, None);
    }
    let tape = Tape {
        dims,
        emb,
        pre_t,
        tvec,
        cols_in,
        r0: t0.expect("kept"),
        cols_d1,
        r1: t1.expect("kept"),
        cols_d2,
        r2: t2.expect("kept"),
        cols_u1,
        r3: t3.expect("kept"),
        cols_u2,
        r4: t4.expect("kept"),
        r4_out: r4,
        cols_out,
    };
    (out, Some(tape))
}

/// Adds dL/dθ for output gradient `dy` into `g`.
pub fn backward<F: Real>(plan: &Plan, p: &[F], tape: &Tape<F>, dy: &[F], g: &mut [F]) {
    let d0 = tape.dims;
    let d1 = half(d0);
    let d2 = half(d1);
    let mut dtvec = vec![F::zero(); tape.tvec.len()];
    let tv = &tape.tvec;

    let dy = Array2::from_shape_vec((1, dy.len()), dy.to_vec()).expect("gradient length");
    let mut dr4 = conv_backward(&plan.conv_out, p, g, &tape.cols_out, &dy, d0, true).expect("dx");
    dr4.zip_mut_with(&tape.r4_out, |g, x| *g = *g * silu_grad(*x));
    let du0 = res_backward(&plan.r4, p, g, &tape.r4, dr4, d0, tv, &mut dtvec);
    let mut ds0 = du0.clone();
    let dup = conv_backward(&plan.up2, p, g, &tape.cols_u2, &du0, d0, true).expect("dx");
    let dr3 = upsample_backward(&dup, d0);
    let du1 = res_backward(&plan.r3, p, g, &tape.r3, dr3, d1, tv, &mut dtvec);
    let mut ds1 = du1.clone();
    let dup = conv_backward(&plan.up1, p, g, &tape.cols_u1, &du1, d1, true).expect("dx");
    let ds2 = upsample_backward(&dup, d1);
    let dh2 = res_backward(&plan.r2, p, g, &tape.r2, ds2, d2, tv, &mut dtvec);
    ds1 = ds1 + conv_backward(&plan.down2, p, g, &tape.cols_d2, &dh2, d1, true).expect("dx");
    let dh1 = res_backward(&plan.r1, p, g, &tape.r1, ds1, d1, tv, &mut dtvec);
    ds0 = ds0 + conv_backward(&plan.down1, p, g, &tape.cols_d1, &dh1, d0, true).expect("dx");
    let dh0 = res_backward(&plan.r0, p, g, &tape.r0, ds0, d0, tv, &mut dtvec);
    conv_backward(&plan.conv_in, p, g, &tape.cols_in, &dh0, d0, false);

    let dpre: Vec<F> = dtvec
        .iter()
        .zip(&tape.pre_t)
        .map(|(d, x)| *d * silu_grad(*x))
        .collect();
    linear_backward(&plan.time1, p, g, &tape.emb, &dpre, None);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_center_tap_is_identity() {
        let d = [4, 4, 4];
        let x = Array2::from_shape_fn((2, 64), |(c, i)| (c * 100 + i) as f64);
        let cols = im2col(&x, d, d, 1);
        assert_eq!(cols.row(13), x.row(0));
        assert_eq!(cols.row(27 + 13), x.row(1));
        // tap (0,0,0) of voxel 0 reads padding
        assert_eq!(cols[[0, 0]], 0.0);
    }

    fn naive_im2col(x: &Array2<f64>, din: [usize; 3], stride: usize) -> Array2<f64> {
        let dout = if stride == 1 { din } else { half(din) };
        let mut cols = Array2::zeros((x.nrows() * K3, n_of(dout)));
        for ci in 0..x.nrows() {
            for k in 0..K3 {
                let (kx, ky, kz) = (k % 3, (k / 3) % 3, k / 9);
                for o in 0..n_of(dout) {
                    let (ox, oy, oz) = (o % dout[0], (o / dout[0]) % dout[1], o / (dout[0] * dout[1]));
                    let ix = (stride * ox + kx) as isize - 1;
                    let iy = (stride * oy + ky) as isize - 1;
                    let iz = (stride * oz + kz) as isize - 1;
                    if ix >= 0 && iy >= 0 && iz >= 0 && (ix as usize) < din[0] && (iy as usize) < din[1] && (iz as usize) < din[2] {
                        cols[[ci * K3 + k, o]] = x[[ci, ix as usize + din[0] * (iy as usize + din[1] * iz as usize)]];
                    }
                }
            }
        }
        cols
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        let din = [8, 4, 6];
        let x = Array2::from_shape_fn((2, n_of(din)), |(c, i)| (c * 1000 + i) as f64 + 1.0);
        for stride in [1, 2] {
            let dout = if stride == 1 { din } else { half(din) };
            assert_eq!(im2col(&x, din, dout, stride), naive_im2col(&x, din, stride));
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let din = [4, 4, 4];
        let dout = [2, 2, 2];
        let x = Array2::from_shape_fn((3, 64), |(c, i)| ((c * 7 + i * 3) % 11) as f64 - 5.0);
        let y = Array2::from_shape_fn((81, 8), |(r, o)| ((r * 5 + o) % 7) as f64 - 3.0);
        let lhs = (&im2col(&x, din, dout, 2) * &y).sum();
        let rhs = (&x * &col2im(&y, 3, din, dout, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let fine = [4, 4, 4];
        let x = Array2::from_shape_fn((2, 8), |(c, i)| (c + i) as f64);
        let y = Array2::from_shape_fn((2, 64), |(c, i)| ((c * 3 + i) % 5) as f64);
        let lhs = (&upsample(&x, fine) * &y).sum();
        let rhs = (&x * &upsample_backward(&y, fine)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn fresh_model_predicts_zero() {
        let plan = Plan::new(Architecture::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f32> = plan.init(&mut rng);
        let (out, _) = forward(&plan, &p, &vec![0.3; 8 * 8 * 4], [8, 8, 4], 10, false);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    use rand::SeedableRng;
}
