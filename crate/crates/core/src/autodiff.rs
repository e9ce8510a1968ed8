//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] then sweeps the
//! records in reverse and accumulates adjoints. Column vectors are `r × 1`
//! matrices and scalars are `1 × 1`. Only the operations the encoders need are
//! provided.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `aᵀ b`
    MatMulTn(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `a` (r × c) with row `k` multiplied by `v[k]` (v is r × 1).
    ScaleRows(Var, Var),
    /// 1 × c repeated to r × c.
    BroadcastRows(Var),
    /// Column sums, r × c → 1 × c.
    SumRows(Var),
    /// Row-wise inner products, → r × 1.
    RowDot(Var, Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    NormalizeRows(Var, f64),
    Recip(Var),
    ClampMin(Var, f64),
    SliceRows(Var, usize),
    ConcatRows(Var, Var),
    Softplus(Var),
    Mean(Var),
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

/// Adjoints of every recorded value with respect to one scalar root.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Records an input. Both parameters and constants are leaves; constants
    /// simply have their gradient ignored.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn column(&mut self, values: impl IntoIterator<Item = f64>) -> Var {
        let v: Vec<f64> = values.into_iter().collect();
        let r = v.len();
        self.leaf(Array2::from_shape_vec((r, 1), v).expect("column shape"))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).t().dot(self.value(b));
        self.push(value, Op::MatMulTn(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    pub fn scale_rows(&mut self, a: Var, v: Var) -> Var {
        let (av, vv) = (self.value(a), self.value(v));
        assert_eq!(vv.dim(), (av.nrows(), 1), "scale_rows needs an r x 1 factor");
        let value = av * vv;
        self.push(value, Op::ScaleRows(a, v))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), 1, "broadcast_rows needs a single row");
        let value = av.broadcast((rows, av.ncols())).expect("broadcast").to_owned();
        self.push(value, Op::BroadcastRows(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let value = (self.value(a) * self.value(b)).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowDot(a, b))
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let av = self.value(a);
        let value = av.select(Axis(0), &idx);
        self.push(value, Op::Gather(a, idx))
    }

    /// Output has `rows` rows; row `k` of `a` is added into row `idx[k]`.
    pub fn scatter_add(&mut self, a: Var, idx: Rc<[usize]>, rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), idx.len());
        let mut value = Array2::zeros((rows, av.ncols()));
        for (k, &r) in idx.iter().enumerate() {
            let mut dst = value.row_mut(r);
            dst += &av.row(k);
        }
        self.push(value, Op::ScatterAdd(a, idx))
    }

    /// Rows scaled to unit L2 norm; rows with norm `<= eps` pass through.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > eps {
                row.mapv_inplace(|x| x / norm);
            }
        }
        self.push(value, Op::NormalizeRows(a, eps))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / x);
        self.push(value, Op::Recip(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.append(Axis(0), self.value(b).view()).expect("matching widths");
        self.push(value, Op::ConcatRows(a, b))
    }

    /// Elementwise `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(stable_softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Array2::from_elem((1, 1), av.sum() / av.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulTn(a, b) => {
                    acc(&mut grads, *a, self.value(*b).dot(&g.t()));
                    acc(&mut grads, *b, self.value(*a).dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::ScaleRows(a, v) => {
                    let dv = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *v, dv);
                    acc(&mut grads, *a, g * self.value(*v));
                }
                Op::BroadcastRows(a) => {
                    acc(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).nrows();
                    let full = g.broadcast((rows, g.ncols())).expect("broadcast").to_owned();
                    acc(&mut grads, *a, full);
                }
                Op::RowDot(a, b) => {
                    acc(&mut grads, *a, self.value(*b) * &g);
                    acc(&mut grads, *b, self.value(*a) * &g);
                }
                Op::Gather(a, ids) => {
                    let av = self.value(*a);
                    let mut da = Array2::zeros(av.raw_dim());
                    for (k, &r) in ids.iter().enumerate() {
                        let mut dst = da.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ScatterAdd(a, ids) => {
                    acc(&mut grads, *a, g.select(Axis(0), ids));
                }
                Op::NormalizeRows(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut da = g.clone();
                    Zip::from(da.rows_mut())
                        .and(x.rows())
                        .and(y.rows())
                        .and(g.rows())
                        .for_each(|mut d, xr, yr, gr| {
                            let norm = xr.dot(&xr).sqrt();
                            if norm > *eps {
                                let proj = yr.dot(&gr);
                                Zip::from(&mut d).and(&yr).and(&gr).for_each(|dv, &yv, &gv| {
                                    *dv = (gv - yv * proj) / norm;
                                });
                            }
                        });
                    acc(&mut grads, *a, da);
                }
                Op::Recip(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, -(&g * y * y));
                }
                Op::ClampMin(a, floor) => {
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, &x| {
                        if x <= *floor {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut da = Array2::zeros(av.raw_dim());
                    da.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(a, b) => {
                    let split = self.value(*a).nrows();
                    acc(&mut grads, *a, g.slice(s![..split, ..]).to_owned());
                    acc(&mut grads, *b, g.slice(s![split.., ..]).to_owned());
                }
                Op::Softplus(a) => {
                    let da = &g * &self.value(*a).mapv(logistic);
                    acc(&mut grads, *a, da);
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let share = g[[0, 0]] / av.len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(av.raw_dim(), share));
                }
            }
            // Leaves keep their adjoint; interior nodes are cleared above via take().
        }
        Gradients { grads }
    }
}
