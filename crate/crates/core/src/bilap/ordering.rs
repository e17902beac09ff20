//! Fill-reducing orderings for matrices on a regular pixel grid.

/// Symmetric permutation applied before factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GridOrdering {
    /// Row-major pixel order.
    Natural,
    /// Recursive bisection with single-line separators, which suits the
    /// 5-point coupling of forward-difference operators.
    #[default]
    NestedDissection,
}

/// Blocks at or below this many pixels are emitted in row-major order.
const LEAF_PIXELS: usize = 16;

impl GridOrdering {
    /// `perm[new] = old` for a `height × width` row-major grid.
    pub fn permutation(self, height: usize, width: usize) -> Vec<usize> {
        match self {
            GridOrdering::Natural => (0..height * width).collect(),
            GridOrdering::NestedDissection => {
                let mut out = Vec::with_capacity(height * width);
                dissect(0, height, 0, width, width, &mut out);
                out
            }
        }
    }
}

fn dissect(r0: usize, r1: usize, c0: usize, c1: usize, stride: usize, out: &mut Vec<usize>) {
    let (h, w) = (r1 - r0, c1 - c0);
    if h == 0 || w == 0 {
        return;
    }
    if h * w <= LEAF_PIXELS {
        for r in r0..r1 {
            out.extend((c0..c1).map(|c| r * stride + c));
        }
        return;
    }
    if w >= h {
        let mid = c0 + w / 2;
        dissect(r0, r1, c0, mid, stride, out);
        dissect(r0, r1, mid + 1, c1, stride, out);
        out.extend((r0..r1).map(|r| r * stride + mid));
    } else {
        let mid = r0 + h / 2;
        dissect(r0, mid, c0, c1, stride, out);
        dissect(mid + 1, r1, c0, c1, stride, out);
        out.extend((c0..c1).map(|c| mid * stride + c));
    }
}
