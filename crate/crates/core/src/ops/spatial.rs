use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

fn video_dims(op: &'static str, dims: &[usize]) -> Result<[usize; 4]> {
    match dims {
        &[t, h, w, c] => Ok([t, h, w, c]),
        _ => Err(Error::dim(op, "expected a T × H × W × C tensor", dims, &[])),
    }
}

pub(super) fn avg_pool_forward(x: &Tensor, rho: usize) -> Result<Tensor> {
    let [t, h, w, c] = video_dims("avg_pool_spatial", x.dims())?;
    if rho == 0 || h % rho != 0 || w % rho != 0 {
        return Err(Error::dim("avg_pool_spatial", "pool size must divide H and W", x.dims(), &[rho]));
    }
    if rho == 1 {
        return Ok(Tensor::from_raw(x.dims().to_vec(), x.data().to_vec()));
    }
    let (ho, wo) = (h / rho, w / rho);
    let norm = 1.0 / (rho * rho) as f64;
    let xd = x.data();
    let mut out = vec![0.0; t * ho * wo * c];
    for ti in 0..t {
        for y in 0..h {
            for xx in 0..w {
                let src = ((ti * h + y) * w + xx) * c;
                let dst = ((ti * ho + y / rho) * wo + xx / rho) * c;
                for k in 0..c {
                    out[dst + k] += xd[src + k];
                }
            }
        }
    }
    for v in &mut out {
        *v *= norm;
    }
    Ok(Tensor::from_raw(vec![t, ho, wo, c], out))
}

/// Source flat index for every output element of a pixel shuffle
/// (`inverse = false`) or unshuffle (`inverse = true`).
fn shuffle_index(dims: &[usize], r: usize, inverse: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    let [t, h, w, ch] = video_dims("pixel_shuffle", dims)?;
    if r == 0 {
        return Err(Error::dim("pixel_shuffle", "factor must be positive", dims, &[r]));
    }
    // coarse geometry (h, w, r²c) and fine geometry (rh, rw, c)
    let (hc, wc, c) = if inverse {
        if h % r != 0 || w % r != 0 {
            return Err(Error::dim("pixel_unshuffle", "factor must divide H and W", dims, &[r]));
        }
        (h / r, w / r, ch)
    } else {
        if ch % (r * r) != 0 {
            return Err(Error::dim("pixel_shuffle", "channels must be divisible by r²", dims, &[r]));
        }
        (h, w, ch / (r * r))
    };
    let (hf, wf) = (hc * r, wc * r);
    let mut fine_to_coarse = vec![0usize; t * hf * wf * c];
    for ti in 0..t {
        for y in 0..hf {
            for x in 0..wf {
                let (i, di, j, dj) = (y / r, y % r, x / r, x % r);
                for k in 0..c {
                    let fine = ((ti * hf + y) * wf + x) * c + k;
                    let coarse = ((ti * hc + i) * wc + j) * (r * r * c) + c * (r * di + dj) + k;
                    fine_to_coarse[fine] = coarse;
                }
            }
        }
    }
    let out_dims = if inverse { vec![t, hc, wc, r * r * c] } else { vec![t, hf, wf, c] };
    if inverse {
        let mut coarse_to_fine = vec![0usize; fine_to_coarse.len()];
        for (fine, &coarse) in fine_to_coarse.iter().enumerate() {
            coarse_to_fine[coarse] = fine;
        }
        Ok((coarse_to_fine, out_dims))
    } else {
        Ok((fine_to_coarse, out_dims))
    }
}

pub(super) fn shuffle_forward(x: &Tensor, r: usize, inverse: bool) -> Result<Tensor> {
    let (idx, dims) = shuffle_index(x.dims(), r, inverse)?;
    let xd = x.data();
    Ok(Tensor::from_raw(dims, idx.iter().map(|&i| xd[i]).collect()))
}

fn conv_out_extent(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

impl Graph {
    /// Reinterprets the shape; data order is unchanged.
    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(dims)?;
        let out = Tensor::from_raw(out.dims().to_vec(), out.into_data());
        Ok(self.push(Op::Reshape(x), out, 0))
    }

    pub fn avg_pool(&mut self, x: Var, rho: usize) -> Result<Var> {
        let out = avg_pool_forward(self.value(x), rho)?;
        Ok(self.push(Op::AvgPool { x, rho }, out, 0))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = shuffle_forward(self.value(x), r, false)?;
        Ok(self.push(Op::PixelShuffle { x, r }, out, 0))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = shuffle_forward(self.value(x), r, true)?;
        Ok(self.push(Op::PixelUnshuffle { x, r }, out, 0))
    }

    /// Treats `x` as rows of `row_len` values and picks rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, row_len: usize, idx: Vec<usize>, dims: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if row_len == 0 || !xv.len().is_multiple_of(row_len) {
            return Err(Error::dim("gather_rows", "row length must divide the tensor", xv.dims(), &[row_len]));
        }
        let rows = xv.len() / row_len;
        if idx.iter().any(|&i| i >= rows) {
            return Err(Error::dim("gather_rows", "row index out of range", xv.dims(), &[rows]));
        }
        if dims.iter().product::<usize>() != idx.len() * row_len {
            return Err(Error::dim("gather_rows", "output dims do not match gathered size", dims, &[idx.len(), row_len]));
        }
        let xd = xv.data();
        let mut data = Vec::with_capacity(idx.len() * row_len);
        for &i in &idx {
            data.extend_from_slice(&xd[i * row_len..(i + 1) * row_len]);
        }
        let out = Tensor::from_raw(dims.to_vec(), data);
        Ok(self.push(Op::GatherRows { x, row_len, idx }, out, 0))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.dims(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let d = self.dims(x);
            if &d[..d.len() - 1] != lead {
                return Err(Error::dim("concat", "leading extents differ", &first, d));
            }
            widths.push(*d.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = lead.iter().product::<usize>();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(total);
        let out = Tensor::from_raw(dims, data);
        Ok(self.push(Op::Concat(xs.to_vec()), out, 0))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_channels", "channel range out of bounds", xv.dims(), &[start, len]));
        }
        let mut data = Vec::with_capacity(xv.len() / c * len);
        for row in xv.data().chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut dims = xv.dims().to_vec();
        *dims.last_mut().unwrap() = len;
        let out = Tensor::from_raw(dims, data);
        Ok(self.push(Op::SliceChannels { x, start }, out, 0))
    }

    /// Frame-wise 2D convolution, zero padding `k/2`, kernel `w: kh × kw × C_in × C_out`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let [t, h, wd, cin] = video_dims("conv2d", self.dims(x))?;
        let wdims = self.dims(w);
        if wdims.len() != 4 || wdims[2] != cin || wdims[0].is_multiple_of(2) || wdims[1].is_multiple_of(2) || stride == 0 {
            return Err(Error::dim("conv2d", "kernel must be odd kh × kw × C_in × C_out", self.dims(x), wdims));
        }
        if stride > 1 && (h % stride != 0 || wd % stride != 0) {
            return Err(Error::dim("conv2d", "stride must divide H and W", self.dims(x), &[stride]));
        }
        let (kh, kw, cout) = (wdims[0], wdims[1], wdims[3]);
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::dim("conv2d", "bias length must equal C_out", wdims, self.dims(b)));
            }
        }
        let (ho, wo) = (conv_out_extent(h, kh, stride), conv_out_extent(wd, kw, stride));
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let (xd, kd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; t * ho * wo * cout];
        for ti in 0..t {
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = ((ti * ho + oy) * wo + ox) * cout;
                    let orow = &mut out[o..o + cout];
                    if let Some(b) = b {
                        orow.copy_from_slice(self.nodes[b.0].value.data());
                    }
                    for ky in 0..kh {
                        let iy = (oy * stride) as isize + ky as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride) as isize + kx as isize - pw;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let src = ((ti * h + iy as usize) * wd + ix as usize) * cin;
                            let kbase = (ky * kw + kx) * cin * cout;
                            for ci in 0..cin {
                                let a = xd[src + ci];
                                let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                                for (ov, &kv) in orow.iter_mut().zip(krow) {
                                    *ov += a * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let macs = (t * ho * wo * kh * kw * cin * cout) as u64;
        let out = Tensor::from_raw(vec![t, ho, wo, cout], out);
        Ok(self.push(Op::Conv2d { x, w, b, stride }, out, macs))
    }

    /// 1D convolution along T at every pixel, zero padding `k/2`, kernel `w: k × C_in × C_out`.
    pub fn conv_temporal(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [t, h, wd, cin] = video_dims("conv_temporal", self.dims(x))?;
        let wdims = self.dims(w);
        if wdims.len() != 3 || wdims[1] != cin || wdims[0].is_multiple_of(2) {
            return Err(Error::dim("conv_temporal", "kernel must be odd k × C_in × C_out", self.dims(x), wdims));
        }
        let (k, cout) = (wdims[0], wdims[2]);
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::dim("conv_temporal", "bias length must equal C_out", wdims, self.dims(b)));
            }
        }
        let pad = (k / 2) as isize;
        let frame = h * wd;
        let (xd, kd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; t * frame * cout];
        for ti in 0..t {
            for p in 0..frame {
                let o = (ti * frame + p) * cout;
                let orow = &mut out[o..o + cout];
                if let Some(b) = b {
                    orow.copy_from_slice(self.nodes[b.0].value.data());
                }
                for kt in 0..k {
                    let it = ti as isize + kt as isize - pad;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    let src = (it as usize * frame + p) * cin;
                    for ci in 0..cin {
                        let a = xd[src + ci];
                        let krow = &kd[(kt * cin + ci) * cout..(kt * cin + ci + 1) * cout];
                        for (ov, &kv) in orow.iter_mut().zip(krow) {
                            *ov += a * kv;
                        }
                    }
                }
            }
        }
        let macs = (t * frame * k * cin * cout) as u64;
        let out = Tensor::from_raw(vec![t, h, wd, cout], out);
        Ok(self.push(Op::ConvTemporal { x, w, b }, out, macs))
    }
}

fn bias_grad(graph: &Graph, b: Option<Var>, g: &Tensor, cout: usize, out: &mut Vec<(Var, Tensor)>) {
    if let Some(b) = b {
        if graph.needs(b) {
            let mut gb = vec![0.0; cout];
            for row in g.data().chunks_exact(cout) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            out.push((b, Tensor::from_raw(graph.dims(b).to_vec(), gb)));
        }
    }
}

pub(super) fn vjp(graph: &Graph, op: &Op, g: &Tensor) -> Vec<(Var, Tensor)> {
    let gd = g.data();
    match op {
        Op::AvgPool { x, rho } => {
            let xv = graph.value(*x);
            if *rho == 1 {
                return vec![(*x, g.clone())];
            }
            let [t, h, w, c] = video_dims("avg_pool", xv.dims()).unwrap();
            let (ho, wo) = (h / rho, w / rho);
            let norm = 1.0 / (rho * rho) as f64;
            let mut gx = vec![0.0; xv.len()];
            for ti in 0..t {
                for y in 0..h {
                    for xx in 0..w {
                        let dst = ((ti * h + y) * w + xx) * c;
                        let src = ((ti * ho + y / rho) * wo + xx / rho) * c;
                        for k in 0..c {
                            gx[dst + k] = gd[src + k] * norm;
                        }
                    }
                }
            }
            vec![(*x, Tensor::from_raw(xv.dims().to_vec(), gx))]
        }
        Op::PixelShuffle { x, r } | Op::PixelUnshuffle { x, r } => {
            let inverse = matches!(op, Op::PixelUnshuffle { .. });
            let xv = graph.value(*x);
            let (idx, _) = shuffle_index(xv.dims(), *r, inverse).unwrap();
            let mut gx = vec![0.0; xv.len()];
            for (o, &src) in idx.iter().enumerate() {
                gx[src] += gd[o];
            }
            vec![(*x, Tensor::from_raw(xv.dims().to_vec(), gx))]
        }
        Op::GatherRows { x, row_len, idx } => {
            let xv = graph.value(*x);
            let mut gx = vec![0.0; xv.len()];
            for (o, &src) in idx.iter().enumerate() {
                let grow = &gd[o * row_len..(o + 1) * row_len];
                for (a, v) in gx[src * row_len..(src + 1) * row_len].iter_mut().zip(grow) {
                    *a += v;
                }
            }
            vec![(*x, Tensor::from_raw(xv.dims().to_vec(), gx))]
        }
        Op::Concat(xs) => {
            let widths: Vec<usize> = xs.iter().map(|&x| graph.value(x).last_dim()).collect();
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for row in gd.chunks_exact(total) {
                let mut off = 0;
                for (part, &w) in parts.iter_mut().zip(&widths) {
                    part.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            xs.iter()
                .zip(parts)
                .map(|(&x, p)| (x, Tensor::from_raw(graph.dims(x).to_vec(), p)))
                .collect()
        }
        Op::SliceChannels { x, start } => {
            let xv = graph.value(*x);
            let c = xv.last_dim();
            let len = g.last_dim();
            let mut gx = vec![0.0; xv.len()];
            for (row, grow) in gx.chunks_exact_mut(c).zip(gd.chunks_exact(len)) {
                row[*start..start + len].copy_from_slice(grow);
            }
            vec![(*x, Tensor::from_raw(xv.dims().to_vec(), gx))]
        }
        Op::Conv2d { x, w, b, stride } => {
            let xv = graph.value(*x);
            let kv = graph.value(*w);
            let [t, h, wd, cin] = video_dims("conv2d", xv.dims()).unwrap();
            let (kh, kw, cout) = (kv.dims()[0], kv.dims()[1], kv.dims()[3]);
            let (ho, wo) = (conv_out_extent(h, kh, *stride), conv_out_extent(wd, kw, *stride));
            let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
            let (xd, kd) = (xv.data(), kv.data());
            let (need_x, need_w) = (graph.needs(*x), graph.needs(*w));
            let mut gx = vec![0.0; if need_x { xd.len() } else { 0 }];
            let mut gw = vec![0.0; if need_w { kd.len() } else { 0 }];
            for ti in 0..t {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let o = ((ti * ho + oy) * wo + ox) * cout;
                        let grow = &gd[o..o + cout];
                        for ky in 0..kh {
                            let iy = (oy * stride) as isize + ky as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride) as isize + kx as isize - pw;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let src = ((ti * h + iy as usize) * wd + ix as usize) * cin;
                                let kbase = (ky * kw + kx) * cin * cout;
                                for ci in 0..cin {
                                    let kslice = kbase + ci * cout..kbase + (ci + 1) * cout;
                                    if need_x {
                                        gx[src + ci] +=
                                            grow.iter().zip(&kd[kslice.clone()]).map(|(a, b)| a * b).sum::<f64>();
                                    }
                                    if need_w {
                                        let a = xd[src + ci];
                                        for (gwv, &gv) in gw[kslice].iter_mut().zip(grow) {
                                            *gwv += a * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut out = Vec::with_capacity(3);
            if need_x {
                out.push((*x, Tensor::from_raw(xv.dims().to_vec(), gx)));
            }
            if need_w {
                out.push((*w, Tensor::from_raw(kv.dims().to_vec(), gw)));
            }
            bias_grad(graph, *b, g, cout, &mut out);
            out
        }
        Op::ConvTemporal { x, w, b } => {
            let xv = graph.value(*x);
            let kv = graph.value(*w);
            let [t, h, wd, cin] = video_dims("conv_temporal", xv.dims()).unwrap();
            let (k, cout) = (kv.dims()[0], kv.dims()[2]);
            let pad = (k / 2) as isize;
            let frame = h * wd;
            let (xd, kd) = (xv.data(), kv.data());
            let (need_x, need_w) = (graph.needs(*x), graph.needs(*w));
            let mut gx = vec![0.0; if need_x { xd.len() } else { 0 }];
            let mut gw = vec![0.0; if need_w { kd.len() } else { 0 }];
            for ti in 0..t {
                for p in 0..frame {
                    let o = (ti * frame + p) * cout;
                    let grow = &gd[o..o + cout];
                    for kt in 0..k {
                        let it = ti as isize + kt as isize - pad;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        let src = (it as usize * frame + p) * cin;
                        for ci in 0..cin {
                            let kslice = (kt * cin + ci) * cout..(kt * cin + ci + 1) * cout;
                            if need_x {
                                gx[src + ci] += grow.iter().zip(&kd[kslice.clone()]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if need_w {
                                let a = xd[src + ci];
                                for (gwv, &gv) in gw[kslice].iter_mut().zip(grow) {
                                    *gwv += a * gv;
                                }
                            }
                        }
                    }
                }
            }
            let mut out = Vec::with_capacity(3);
            if need_x {
                out.push((*x, Tensor::from_raw(xv.dims().to_vec(), gx)));
            }
            if need_w {
                out.push((*w, Tensor::from_raw(kv.dims().to_vec(), gw)));
            }
            bias_grad(graph, *b, g, cout, &mut out);
            out
        }
        _ => unreachable!("not a spatial op"),
    }
}
