use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Token-level partition of a `T × H × W` grid into windows of
/// `t_win × win_h × win_w` tokens.
///
/// Frames are reflect-padded at the bottom/right up to window multiples. With
/// `shift`, the padded frame is cyclically rolled by `(⌊win_h/2⌋, ⌊win_w/2⌋)`
/// before partitioning. Groups are ordered temporal-window-major, then
/// spatial windows row-major; inside a group, slots are `(t, y, x)` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowLayout {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub t_win: usize,
    pub win_h: usize,
    pub win_w: usize,
    pub shift: bool,
    pub padded_h: usize,
    pub padded_w: usize,
    /// Source token (`(t·H + y)·W + x`) of every slot.
    pub gather: Vec<usize>,
    /// Slot holding the unpadded copy of every source token.
    pub merge: Vec<usize>,
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

fn padded_extent(n: usize, win: usize) -> usize {
    n.div_ceil(win) * win
}

impl WindowLayout {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        t_win: usize,
        win_h: usize,
        win_w: usize,
        shift: bool,
    ) -> Result<Self> {
        let dims = [frames, height, width];
        if t_win == 0 || win_h == 0 || win_w == 0 {
            return Err(Error::dim("partition_windows", "window extents must be positive", &dims, &[t_win, win_h, win_w]));
        }
        if !frames.is_multiple_of(t_win) {
            return Err(Error::dim("partition_windows", "temporal window must divide T", &dims, &[t_win]));
        }
        let (hp, wp) = (padded_extent(height, win_h), padded_extent(width, win_w));
        // reflection without edge repeat reaches at most n - 1 samples past the border
        if hp - height > height - 1 || wp - width > width - 1 {
            return Err(Error::dim(
                "partition_windows",
                "window larger than the reflect-padded frame",
                &dims,
                &[t_win, win_h, win_w],
            ));
        }
        let (sh, sw) = if shift { (win_h / 2, win_w / 2) } else { (0, 0) };
        let (ny, nx, nt) = (hp / win_h, wp / win_w, frames / t_win);
        let len = t_win * win_h * win_w;
        let mut gather = Vec::with_capacity(nt * ny * nx * len);
        for tw in 0..nt {
            for wy in 0..ny {
                for wx in 0..nx {
                    for tl in 0..t_win {
                        let t = tw * t_win + tl;
                        for ly in 0..win_h {
                            let y = reflect((wy * win_h + ly + sh) % hp, height);
                            for lx in 0..win_w {
                                let x = reflect((wx * win_w + lx + sw) % wp, width);
                                gather.push((t * height + y) * width + x);
                            }
                        }
                    }
                }
            }
        }
        let mut merge = vec![0; frames * height * width];
        for t in 0..frames {
            let (tw, tl) = (t / t_win, t % t_win);
            for y in 0..height {
                let ry = (y + hp - sh) % hp;
                let (wy, ly) = (ry / win_h, ry % win_h);
                for x in 0..width {
                    let rx = (x + wp - sw) % wp;
                    let (wx, lx) = (rx / win_w, rx % win_w);
                    let group = (tw * ny + wy) * nx + wx;
                    merge[(t * height + y) * width + x] = group * len + (tl * win_h + ly) * win_w + lx;
                }
            }
        }
        Ok(WindowLayout {
            frames,
            height,
            width,
            t_win,
            win_h,
            win_w,
            shift,
            padded_h: hp,
            padded_w: wp,
            gather,
            merge,
        })
    }

    pub fn groups(&self) -> usize {
        self.gather.len() / self.group_len()
    }

    pub fn group_len(&self) -> usize {
        self.t_win * self.win_h * self.win_w
    }

    pub fn spatial_windows(&self) -> usize {
        (self.padded_h / self.win_h) * (self.padded_w / self.win_w)
    }

    /// `[T, H, W, d] → [G, L, d]`.
    pub fn partition(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let d = self.check(g.dims(x))?;
        g.gather_rows(x, d, self.gather.clone(), &[self.groups(), self.group_len(), d])
    }

    /// `[G, L, d] → [T, H, W, d]`, dropping padded slots.
    pub fn merge(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let d = g.value(x).last_dim();
        if g.value(x).len() != self.gather.len() * d {
            return Err(Error::dim("merge_windows", "window stack does not match layout", g.dims(x), &[self.gather.len(), d]));
        }
        g.gather_rows(x, d, self.merge.clone(), &[self.frames, self.height, self.width, d])
    }

    fn check(&self, dims: &[usize]) -> Result<usize> {
        match *dims {
            [t, h, w, d] if [t, h, w] == [self.frames, self.height, self.width] => Ok(d),
            _ => Err(Error::dim("partition_windows", "input does not match layout", dims, &[self.frames, self.height, self.width])),
        }
    }
}

/// Everything needed to undo [`partition_windows`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeDescriptor {
    layout: WindowLayout,
}

impl MergeDescriptor {
    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }
}

/// `T × H × W × d → N × T × win_h × win_w × d` spatial windows spanning all frames.
pub fn partition_windows(x: &Tensor, win_h: usize, win_w: usize, shift: bool) -> Result<(Tensor, MergeDescriptor)> {
    let &[t, h, w, d] = x.dims() else {
        return Err(Error::dim("partition_windows", "expected T × H × W × d", x.dims(), &[]));
    };
    let layout = WindowLayout::new(t, h, w, t, win_h, win_w, shift)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let stacked = layout.partition(&mut g, xv)?;
    let out = g.value(stacked).reshape(&[layout.groups(), t, win_h, win_w, d])?;
    Ok((out, MergeDescriptor { layout }))
}

pub fn merge_windows(stack: &Tensor, desc: &MergeDescriptor) -> Result<Tensor> {
    let mut g = Graph::new();
    let s = g.constant(stack.clone());
    let merged = desc.layout.merge(&mut g, s)?;
    Ok(g.value(merged).clone())
}
