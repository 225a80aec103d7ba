//! Reverse-mode differentiation over a linear tape of 2-D arrays.

use ndarray::{s, Array2, Axis, Zip};

use super::NnError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse matrix in coordinate form, used for graph aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.rows, self.cols));
        for &(i, j, w) in &self.entries {
            d[[i, j]] += w;
        }
        d
    }

    fn mul(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((self.rows, x.ncols()));
        for &(i, j, w) in &self.entries {
            y.row_mut(i).scaled_add(w, &x.row(j));
        }
        y
    }

    fn mul_transposed(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut x = Array2::zeros((self.cols, y.ncols()));
        for &(i, j, w) in &self.entries {
            x.row_mut(j).scaled_add(w, &y.row(i));
        }
        x
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Spmm(Var, SparseMatrix),
    Gather(Var, Vec<usize>),
    MulCol(Var, Var),
    Norm(Var),
    DivScalar(Var, Var),
    SegmentMean(Var, Vec<usize>, Vec<f64>),
    SegmentMax(Var, Array2<usize>),
    ConcatCols(Var, Var),
    Pick(Var, Vec<usize>),
    HuberMean(Var, Vec<f64>, f64),
    WeightedSum(Var, Array2<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), NnError> {
    if cond {
        Ok(())
    } else {
        Err(NnError::Shape(msg()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records parameter `index`; its gradient is returned by [`Tape::backward`].
    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check(sa.1 == sb.0, || format!("matmul {sa:?} x {sb:?}"))?;
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check(sa == sb, || format!("add {sa:?} + {sb:?}"))?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        check(sr.0 == 1 && sr.1 == sa.1, || {
            format!("add_row {sa:?} + {sr:?}")
        })?;
        let v = self.value(a) + self.value(row);
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn spmm(&mut self, m: SparseMatrix, x: Var) -> Result<Var, NnError> {
        let sx = self.shape(x);
        check(m.cols == sx.0, || {
            format!("spmm {}x{} x {sx:?}", m.rows, m.cols)
        })?;
        let v = m.mul(self.value(x));
        Ok(self.push(v, Op::Spmm(x, m)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, NnError> {
        let n = self.shape(x).0;
        check(idx.iter().all(|&i| i < n), || {
            format!("gather index out of {n} rows")
        })?;
        let v = self.value(x).select(Axis(0), &idx);
        Ok(self.push(v, Op::Gather(x, idx)))
    }

    /// Multiplies row `r` of `x` by `col[r]` (`col` is `n × 1`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, NnError> {
        let (sx, sc) = (self.shape(x), self.shape(col));
        check(sc == (sx.0, 1), || format!("mul_col {sx:?} by {sc:?}"))?;
        let v = self.value(x) * self.value(col);
        Ok(self.push(v, Op::MulCol(x, col)))
    }

    /// Frobenius norm as a `1 × 1` value.
    pub fn norm(&mut self, x: Var) -> Var {
        let n = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Array2::from_elem((1, 1), n), Op::Norm(x))
    }

    /// Divides every entry of `x` by the `1 × 1` value `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var, NnError> {
        check(self.shape(s) == (1, 1), || {
            "div_scalar by non-scalar".into()
        })?;
        let d = self.value(s)[[0, 0]];
        let v = self.value(x) / d;
        Ok(self.push(v, Op::DivScalar(x, s)))
    }

    fn segment_counts(seg: &[usize], n_seg: usize) -> Result<Vec<f64>, NnError> {
        let mut count = vec![0.0; n_seg];
        for &g in seg {
            check(g < n_seg, || format!("segment {g} out of {n_seg}"))?;
            count[g] += 1.0;
        }
        check(count.iter().all(|&c| c > 0.0), || "empty segment".into())?;
        Ok(count)
    }

    /// Per-segment column means; row `r` of `x` belongs to segment `seg[r]`.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], n_seg: usize) -> Result<Var, NnError> {
        check(seg.len() == self.shape(x).0, || "segment length".into())?;
        let count = Self::segment_counts(seg, n_seg)?;
        let xv = self.value(x);
        let mut v = Array2::zeros((n_seg, xv.ncols()));
        for (r, &g) in seg.iter().enumerate() {
            v.row_mut(g).scaled_add(1.0 / count[g], &xv.row(r));
        }
        Ok(self.push(v, Op::SegmentMean(x, seg.to_vec(), count)))
    }

    /// Per-segment column maxima; ties go to the lowest row.
    pub fn segment_max(&mut self, x: Var, seg: &[usize], n_seg: usize) -> Result<Var, NnError> {
        check(seg.len() == self.shape(x).0, || "segment length".into())?;
        Self::segment_counts(seg, n_seg)?;
        let xv = self.value(x);
        let c = xv.ncols();
        let mut v = Array2::from_elem((n_seg, c), f64::NEG_INFINITY);
        let mut arg = Array2::from_elem((n_seg, c), usize::MAX);
        for (r, &g) in seg.iter().enumerate() {
            for j in 0..c {
                if arg[[g, j]] == usize::MAX || xv[[r, j]] > v[[g, j]] {
                    v[[g, j]] = xv[[r, j]];
                    arg[[g, j]] = r;
                }
            }
        }
        Ok(self.push(v, Op::SegmentMax(x, arg)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check(sa.0 == sb.0, || format!("concat {sa:?} | {sb:?}"))?;
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Entry `x[r, cols[r]]` of each row, as an `n × 1` column.
    pub fn pick(&mut self, x: Var, cols: Vec<usize>) -> Result<Var, NnError> {
        let (n, c) = self.shape(x);
        check(cols.len() == n && cols.iter().all(|&j| j < c), || {
            "pick indices".into()
        })?;
        let xv = self.value(x);
        let v = Array2::from_shape_fn((n, 1), |(r, _)| xv[[r, cols[r]]]);
        Ok(self.push(v, Op::Pick(x, cols)))
    }

    /// Mean Huber loss of an `n × 1` column against fixed targets.
    pub fn huber_mean(&mut self, x: Var, targets: Vec<f64>, delta: f64) -> Result<Var, NnError> {
        let (n, c) = self.shape(x);
        check(c == 1 && targets.len() == n && n > 0, || {
            "huber shape".into()
        })?;
        let xv = self.value(x);
        let loss = (0..n)
            .map(|r| {
                let d = (xv[[r, 0]] - targets[r]).abs();
                if d <= delta {
                    0.5 * d * d
                } else {
                    delta * (d - 0.5 * delta)
                }
            })
            .sum::<f64>()
            / n as f64;
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::HuberMean(x, targets, delta),
        ))
    }

    /// `Σ x ⊙ w` as a `1 × 1` value.
    pub fn weighted_sum(&mut self, x: Var, w: Array2<f64>) -> Result<Var, NnError> {
        check(self.shape(x) == w.dim(), || "weighted_sum shape".into())?;
        let v = (self.value(x) * &w).sum();
        Ok(self.push(Array2::from_elem((1, 1), v), Op::WeightedSum(x, w)))
    }

    /// Gradients of the `1 × 1` value `root` with respect to every parameter,
    /// indexed like `params` (unused parameters get zeros).
    pub fn backward(&self, root: Var, params: &[Array2<f64>]) -> Result<Vec<Array2<f64>>, NnError> {
        check(self.shape(root) == (1, 1), || {
            "backward root must be 1x1".into()
        })?;
        let mut grads: Vec<Option<Array2<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.dim())).collect();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(e) => *e += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(k) => {
                    let slot = out
                        .get_mut(*k)
                        .ok_or_else(|| NnError::Shape(format!("parameter {k} unknown")))?;
                    check(slot.dim() == g.dim(), || format!("parameter {k} shape"))?;
                    *slot += &g;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Spmm(x, m) => acc(&mut grads, *x, m.mul_transposed(&g)),
                Op::Gather(x, idx) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (r, &j) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(j);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MulCol(x, c) => {
                    let gc = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = &g * self.value(*c);
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *x, gx);
                }
                Op::Norm(x) => {
                    let n = node.value[[0, 0]];
                    let gx = if n > 0.0 {
                        self.value(*x) * (g[[0, 0]] / n)
                    } else {
                        Array2::zeros(self.shape(*x))
                    };
                    acc(&mut grads, *x, gx);
                }
                Op::DivScalar(x, s) => {
                    let d = self.value(*s)[[0, 0]];
                    let gs = -(&g * self.value(*x)).sum() / (d * d);
                    acc(&mut grads, *s, Array2::from_elem((1, 1), gs));
                    acc(&mut grads, *x, g / d);
                }
                Op::SegmentMean(x, seg, count) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (r, &s) in seg.iter().enumerate() {
                        gx.row_mut(r).scaled_add(1.0 / count[s], &g.row(s));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentMax(x, arg) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for ((s, j), &r) in arg.indexed_iter() {
                        gx[[r, j]] += g[[s, j]];
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::Pick(x, cols) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (r, &j) in cols.iter().enumerate() {
                        gx[[r, j]] += g[[r, 0]];
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::HuberMean(x, targets, delta) => {
                    let xv = self.value(*x);
                    let n = targets.len() as f64;
                    let gx = Array2::from_shape_fn(xv.dim(), |(r, _)| {
                        let d = xv[[r, 0]] - targets[r];
                        g[[0, 0]] * d.clamp(-delta, *delta) / n
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::WeightedSum(x, w) => acc(&mut grads, *x, w * g[[0, 0]]),
            }
        }
        for (k, g) in out.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("gradient of parameter {k}")));
            }
        }
        Ok(out)
    }
}
