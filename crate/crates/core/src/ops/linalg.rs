use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

struct BmmShape {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn bmm_shape(a: &[usize], b: &[usize], trans_b: bool) -> Result<BmmShape> {
    if a.len() < 3 || a.len() != b.len() {
        return Err(Error::dim("matmul_batched", "operands must share a rank of at least 3", a, b));
    }
    let r = a.len();
    if a[..r - 2] != b[..r - 2] {
        return Err(Error::dim("matmul_batched", "batch extents differ", a, b));
    }
    let (m, k) = (a[r - 2], a[r - 1]);
    let (kb, n) = if trans_b { (b[r - 1], b[r - 2]) } else { (b[r - 2], b[r - 1]) };
    if k != kb {
        return Err(Error::dim("matmul_batched", "inner extents differ", a, b));
    }
    Ok(BmmShape {
        batch: a[..r - 2].iter().product(),
        m,
        k,
        n,
    })
}

/// `a × b` with every inner sum taken in sorted order, so permuting the
/// contracted axis of both operands leaves the result bit-identical.
fn bmm_order_free(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let s = bmm_shape(a.dims(), b.dims(), false)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; s.batch * s.m * s.n];
    let mut terms = Vec::with_capacity(s.k);
    for bi in 0..s.batch {
        let ab = &ad[bi * s.m * s.k..(bi + 1) * s.m * s.k];
        let bb = &bd[bi * s.k * s.n..(bi + 1) * s.k * s.n];
        for i in 0..s.m {
            for j in 0..s.n {
                terms.clear();
                terms.extend((0..s.k).map(|p| ab[i * s.k + p] * bb[p * s.n + j]));
                out[(bi * s.m + i) * s.n + j] = super::sorted_sum(&mut terms);
            }
        }
    }
    let r = a.rank();
    let mut dims = a.dims()[..r - 2].to_vec();
    dims.extend([s.m, s.n]);
    Ok(Tensor::from_raw(dims, out))
}

pub(super) fn bmm_forward(a: &Tensor, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let s = bmm_shape(a.dims(), b.dims(), trans_b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; s.batch * s.m * s.n];
    for bi in 0..s.batch {
        let ab = &ad[bi * s.m * s.k..(bi + 1) * s.m * s.k];
        let bb = &bd[bi * s.k * s.n..(bi + 1) * s.k * s.n];
        let ob = &mut out[bi * s.m * s.n..(bi + 1) * s.m * s.n];
        for i in 0..s.m {
            let arow = &ab[i * s.k..(i + 1) * s.k];
            let orow = &mut ob[i * s.n..(i + 1) * s.n];
            if trans_b {
                for (j, o) in orow.iter_mut().enumerate() {
                    let brow = &bb[j * s.k..(j + 1) * s.k];
                    *o = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            } else {
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &bb[p * s.n..(p + 1) * s.n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    let r = a.rank();
    let mut dims = a.dims()[..r - 2].to_vec();
    dims.extend([s.m, s.n]);
    Ok(Tensor::from_raw(dims, out))
}

fn linear_shape(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    if w.len() != 2 || *x.last().unwrap() != w[0] {
        return Err(Error::dim("linear", "weight must be d_in × d_out matching the channel axis", x, w));
    }
    if let Some(b) = b {
        if b.iter().product::<usize>() != w[1] {
            return Err(Error::dim("linear", "bias length must equal d_out", w, b));
        }
    }
    let rows = x.iter().product::<usize>() / w[0];
    Ok((rows, w[0], w[1]))
}

impl Graph {
    /// Batched matmul; `trans_b` contracts against the last axis of `b` instead.
    pub fn matmul_batched(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let s = bmm_shape(self.dims(a), self.dims(b), trans_b)?;
        let out = bmm_forward(self.value(a), self.value(b), trans_b)?;
        let macs = (s.batch * s.m * s.n * s.k) as u64;
        Ok(self.push(Op::Bmm { a, b, trans_b }, out, macs))
    }

    /// [`Graph::matmul_batched`] (untransposed) with order-independent inner sums.
    pub fn matmul_order_free(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = bmm_shape(self.dims(a), self.dims(b), false)?;
        let out = bmm_order_free(self.value(a), self.value(b))?;
        let macs = (s.batch * s.m * s.n * s.k) as u64;
        Ok(self.push(Op::Bmm { a, b, trans_b: false }, out, macs))
    }

    /// Per-token affine map over the channel axis.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, din, dout) = linear_shape(self.dims(x), self.dims(w), b.map(|b| self.dims(b)))?;
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; rows * dout];
        for (orow, xrow) in out.chunks_exact_mut(dout).zip(xd.chunks_exact(din)) {
            if let Some(b) = b {
                orow.copy_from_slice(self.value(b).data());
            }
            for (k, &xv) in xrow.iter().enumerate() {
                let wrow = &wd[k * dout..(k + 1) * dout];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut dims = self.dims(x).to_vec();
        *dims.last_mut().unwrap() = dout;
        let out = Tensor::from_raw(dims, out);
        Ok(self.push(Op::Linear { x, w, b }, out, (rows * din * dout) as u64))
    }
}

pub(super) fn bmm_vjp(graph: &Graph, a: Var, b: Var, trans_b: bool, g: &Tensor) -> Vec<(Var, Tensor)> {
    let (av, bv) = (graph.value(a), graph.value(b));
    let s = bmm_shape(av.dims(), bv.dims(), trans_b).unwrap();
    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
    let mut ga = vec![0.0; ad.len()];
    let mut gb = vec![0.0; bd.len()];
    for bi in 0..s.batch {
        let ab = &ad[bi * s.m * s.k..(bi + 1) * s.m * s.k];
        let bb = &bd[bi * s.k * s.n..(bi + 1) * s.k * s.n];
        let gbatch = &gd[bi * s.m * s.n..(bi + 1) * s.m * s.n];
        let gab = &mut ga[bi * s.m * s.k..(bi + 1) * s.m * s.k];
        let gbb = &mut gb[bi * s.k * s.n..(bi + 1) * s.k * s.n];
        for i in 0..s.m {
            let grow = &gbatch[i * s.n..(i + 1) * s.n];
            let arow = &ab[i * s.k..(i + 1) * s.k];
            let garow = &mut gab[i * s.k..(i + 1) * s.k];
            if trans_b {
                // out = a·bᵀ with b stored n × k
                for (j, &gv) in grow.iter().enumerate() {
                    let brow = &bb[j * s.k..(j + 1) * s.k];
                    let gbrow = &mut gbb[j * s.k..(j + 1) * s.k];
                    for p in 0..s.k {
                        garow[p] += gv * brow[p];
                        gbrow[p] += gv * arow[p];
                    }
                }
            } else {
                for p in 0..s.k {
                    let brow = &bb[p * s.n..(p + 1) * s.n];
                    garow[p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    let gbrow = &mut gbb[p * s.n..(p + 1) * s.n];
                    let apv = arow[p];
                    for (o, &gv) in gbrow.iter_mut().zip(grow) {
                        *o += apv * gv;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(2);
    if graph.needs(a) {
        out.push((a, Tensor::from_raw(av.dims().to_vec(), ga)));
    }
    if graph.needs(b) {
        out.push((b, Tensor::from_raw(bv.dims().to_vec(), gb)));
    }
    out
}

pub(super) fn linear_vjp(graph: &Graph, x: Var, w: Var, b: Option<Var>, g: &Tensor) -> Vec<(Var, Tensor)> {
    let (xv, wv) = (graph.value(x), graph.value(w));
    let (din, dout) = (wv.dims()[0], wv.dims()[1]);
    let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
    let mut out = Vec::with_capacity(3);
    if graph.needs(x) {
        let mut gx = vec![0.0; xd.len()];
        for (gxrow, grow) in gx.chunks_exact_mut(din).zip(gd.chunks_exact(dout)) {
            for (k, gxv) in gxrow.iter_mut().enumerate() {
                let wrow = &wd[k * dout..(k + 1) * dout];
                *gxv = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
            }
        }
        out.push((x, Tensor::from_raw(xv.dims().to_vec(), gx)));
    }
    if graph.needs(w) {
        let mut gw = vec![0.0; wd.len()];
        for (xrow, grow) in xd.chunks_exact(din).zip(gd.chunks_exact(dout)) {
            for (k, &xk) in xrow.iter().enumerate() {
                let gwrow = &mut gw[k * dout..(k + 1) * dout];
                for (o, &gv) in gwrow.iter_mut().zip(grow) {
                    *o += xk * gv;
                }
            }
        }
        out.push((w, Tensor::from_raw(wv.dims().to_vec(), gw)));
    }
    if let Some(b) = b {
        if graph.needs(b) {
            let mut gb = vec![0.0; dout];
            for grow in gd.chunks_exact(dout) {
                for (o, &gv) in gb.iter_mut().zip(grow) {
                    *o += gv;
                }
            }
            out.push((b, Tensor::from_raw(graph.dims(b).to_vec(), gb)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::matmul_batched;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_dot() {
        let id = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let col = t(&[1, 2, 1], &[2.0, 3.0]);
        assert_eq!(matmul_batched(&id, &col).unwrap().data(), &[2.0, 3.0]);
        let row = t(&[1, 1, 2], &[1.0, 2.0]);
        let col = t(&[1, 2, 1], &[3.0, 4.0]);
        assert_eq!(matmul_batched(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3, 4]);
        let b = Tensor::zeros(&[2, 5, 4]);
        match matmul_batched(&a, &b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3, 4]);
                assert_eq!(rhs, vec![2, 5, 4]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn records_macs() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones(&[2, 3, 4]));
        let b = g.constant(Tensor::ones(&[2, 4, 5]));
        g.matmul_batched(a, b, false).unwrap();
        assert_eq!(g.macs().total(), 2 * 3 * 4 * 5);
        let w = g.constant(Tensor::ones(&[4, 6]));
        g.linear(a, w, None).unwrap();
        assert_eq!(g.macs().get(crate::tape::OpKind::Linear), 6 * 4 * 6);
    }

    #[test]
    fn transposed_route_agrees() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin()).unwrap();
        let b = Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.11).cos()).unwrap();
        // bᵀ laid out as 2 × 5 × 4
        let mut bt = Tensor::zeros(&[2, 5, 4]);
        for z in 0..2 {
            for i in 0..4 {
                for j in 0..5 {
                    bt.set(&[z, j, i], b.at(&[z, i, j]));
                }
            }
        }
        let plain = bmm_forward(&a, &b, false).unwrap();
        let trans = bmm_forward(&a, &bt, true).unwrap();
        assert!(plain.max_abs_diff(&trans) < 1e-15);
    }
}
