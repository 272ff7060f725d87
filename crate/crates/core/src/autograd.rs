//! A small reverse-mode automatic differentiation tape over `f64` tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! constant inputs or references into a [`ParamStore`]; every operation
//! records a closure that maps the upstream gradient onto its parents.
//! [`Graph::backward`] walks the tape once in reverse.

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn, Zip};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub type Tensor = ArrayD<f64>;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Upstream gradient, parent values, own value -> one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    /// Row-major 2-D view of a node's value.
    pub fn matrix(&self, v: Var) -> ArrayView2<'_, f64> {
        as_matrix(self.value(v))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    fn op(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        backward: impl Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        self.push(value, parents, Some(Box::new(backward)))
    }

    /// Constant leaf. Its gradient is still reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node
    /// so gradients of a shared weight accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            parents: Vec::new(),
            backward: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Reverse sweep from a scalar (or any-shaped) output seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(ArrayD::ones(self.value(output).raw_dim()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let parent_values: Vec<&Tensor> = node.parents.iter().map(|p| self.value(*p)).collect();
            let parent_grads = backward(&upstream, &parent_values, self.value(Var(i)));
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                debug_assert_eq!(g.shape(), self.value(*p).shape(), "gradient shape for node {}", p.0);
                match &mut grads[p.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(upstream);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    // ---- linear algebra -------------------------------------------------

    /// `a (n×k) · b (k×m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let out = self.matrix(a).dot(&self.matrix(b)).into_dyn();
        Ok(self.op(out, vec![a, b], |g, p, _| {
            let g = as_matrix(g);
            let (a, b) = (as_matrix(p[0]), as_matrix(p[1]));
            vec![
                Some(g.dot(&b.t()).into_dyn()),
                Some(a.t().dot(&g).into_dyn()),
            ]
        }))
    }

    /// Adds a length-`m` bias to every row of an `n×m` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::shape(format!("bias {sb:?} for input {sx:?}")));
        }
        let bias = as_vector(self.value(b));
        let out = (&self.matrix(x) + &bias).into_dyn();
        Ok(self.op(out, vec![x, b], |g, _, _| {
            vec![Some(g.clone()), Some(as_matrix(g).sum_axis(Axis(0)).into_dyn())]
        }))
    }

    /// Dense layer `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    // ---- elementwise ----------------------------------------------------

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.op(out, vec![a, b], |g, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.op(out, vec![a, b], |g, _, _| vec![Some(g.clone()), Some(-g)]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        Ok(self.op(out, vec![a, b], |g, p, _| {
            vec![Some(g * p[1]), Some(g * p[0])]
        }))
    }

    /// Multiplies by a constant tensor of the same shape (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::shape(format!(
                "mul_const: {:?} vs {:?}",
                self.shape(a),
                c.shape()
            )));
        }
        let out = self.value(a) * &c;
        Ok(self.op(out, vec![a], move |g, _, _| vec![Some(g * &c)]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.op(out, vec![a], move |g, _, _| vec![Some(g * c)])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| 1.0 - v);
        self.op(out, vec![a], |g, _, _| vec![Some(-g)])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.op(out, vec![a], |g, _, y| {
            let mut d = g.clone();
            Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
            vec![Some(d)]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.op(out, vec![a], |g, _, y| {
            let mut d = g.clone();
            Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
            vec![Some(d)]
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.op(out, vec![a], |g, p, _| {
            let mut d = g.clone();
            Zip::from(&mut d).and(p[0]).for_each(|d, &x| {
                if x <= 0.0 {
                    *d = 0.0
                }
            });
            vec![Some(d)]
        })
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape(format!("concat part {s:?} with {rows} rows")));
            }
            widths.push(s[1]);
        }
        let views: Vec<_> = parts.iter().map(|p| self.matrix(*p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).unwrap().into_dyn();
        Ok(self.op(out, parts.to_vec(), move |g, _, _| {
            let g = as_matrix(g);
            let mut start = 0;
            widths
                .iter()
                .map(|w| {
                    let part = g.slice(s![.., start..start + w]).to_owned().into_dyn();
                    start += w;
                    Some(part)
                })
                .collect()
        }))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start >= end || end > shape[1] {
            return Err(Error::shape(format!("slice {start}..{end} of {shape:?}")));
        }
        let out = self.matrix(a).slice(s![.., start..end]).to_owned().into_dyn();
        Ok(self.op(out, vec![a], move |g, _, _| {
            let mut d = Array2::zeros((shape[0], shape[1]));
            d.slice_mut(s![.., start..end]).assign(&as_matrix(g));
            vec![Some(d.into_dyn())]
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(a).to_vec();
        let out = self
            .value(a)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|_| Error::shape(format!("reshape {from:?} -> {shape:?}")))?;
        Ok(self.op(out, vec![a], move |g, _, _| {
            let g = g.as_standard_layout().into_owned();
            vec![Some(g.into_shape_with_order(IxDyn(&from)).unwrap())]
        }))
    }

    /// Gathers rows of an embedding table: `table (V×E)`, one id per output row.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("embedding table {shape:?}")));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::shape(format!(
                "token id {bad} outside embedding table of {} rows",
                shape[0]
            )));
        }
        let t = self.matrix(table);
        let mut out = Array2::zeros((ids.len(), shape[1]));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let ids = ids.to_vec();
        Ok(self.op(out.into_dyn(), vec![table], move |g, _, _| {
            let g = as_matrix(g);
            let mut d = Array2::zeros((shape[0], shape[1]));
            for (r, &id) in ids.iter().enumerate() {
                let mut row = d.row_mut(id);
                row += &g.row(r);
            }
            vec![Some(d.into_dyn())]
        }))
    }

    // ---- convolution ----------------------------------------------------

    /// 2-D cross-correlation on NCHW input with OIHW weights, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sb != [sw[0]] || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d input {sx:?}, kernel {sw:?}, bias {sb:?}"
            )));
        }
        let geom = ConvGeom::new(&sx, &sw, stride, pad)?;
        let xs = self.value(x).as_standard_layout().into_owned();
        let wm = self.value(w).as_standard_layout().into_owned();
        let wm = wm.view().into_shape_with_order((geom.out_c, geom.patch())).unwrap().to_owned();
        let bias = as_vector(self.value(b));
        let mut out = ArrayD::zeros(IxDyn(&[geom.batch, geom.out_c, geom.oh, geom.ow]));
        let xsl = xs.as_slice().unwrap();
        for n in 0..geom.batch {
            let cols = geom.im2col(&xsl[n * geom.image_len()..(n + 1) * geom.image_len()]);
            let mut y = wm.dot(&cols);
            y += &bias.view().insert_axis(Axis(1));
            out.index_axis_mut(Axis(0), n)
                .assign(&y.into_shape_with_order((geom.out_c, geom.oh, geom.ow)).unwrap());
        }
        Ok(self.op(out, vec![x, w, b], move |g, p, _| {
            let xs = p[0].as_standard_layout().into_owned();
            let xsl = xs.as_slice().unwrap();
            let wm = p[1].as_standard_layout().into_owned();
            let wm = wm.into_shape_with_order((geom.out_c, geom.patch())).unwrap();
            let g = g.as_standard_layout().into_owned();
            let mut dx = vec![0.0; xsl.len()];
            let mut dw = Array2::<f64>::zeros((geom.out_c, geom.patch()));
            let mut db = ndarray::Array1::<f64>::zeros(geom.out_c);
            for n in 0..geom.batch {
                let gn = g
                    .index_axis(Axis(0), n)
                    .into_shape_with_order((geom.out_c, geom.oh * geom.ow))
                    .unwrap();
                let cols = geom.im2col(&xsl[n * geom.image_len()..(n + 1) * geom.image_len()]);
                dw += &gn.dot(&cols.t());
                db += &gn.sum_axis(Axis(1));
                let dcols = wm.t().dot(&gn);
                geom.col2im(&dcols, &mut dx[n * geom.image_len()..(n + 1) * geom.image_len()]);
            }
            vec![
                Some(ArrayD::from_shape_vec(IxDyn(&sx), dx).unwrap()),
                Some(dw.into_shape_with_order(IxDyn(&sw)).unwrap()),
                Some(db.into_dyn()),
            ]
        }))
    }

    /// Max pooling over `k×k` windows with the given stride (no padding).
    /// Ties resolve to the first maximum in row-major window order.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || k == 0 || stride == 0 || sx[2] < k || sx[3] < k {
            return Err(Error::shape(format!("maxpool {k}/{stride} on {sx:?}")));
        }
        let (oh, ow) = ((sx[2] - k) / stride + 1, (sx[3] - k) / stride + 1);
        let xs = self.value(x).as_standard_layout().into_owned();
        let xsl = xs.as_slice().unwrap();
        let planes = sx[0] * sx[1];
        let (h, w) = (sx[2], sx[3]);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for plane in 0..planes {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride * w + j * stride;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (i * stride + di) * w + j * stride + dj;
                            if xsl[idx] > xsl[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xsl[best]);
                    argmax.push(best);
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[sx[0], sx[1], oh, ow]), out).unwrap();
        Ok(self.op(out, vec![x], move |g, _, _| {
            let g = g.as_standard_layout().into_owned();
            let mut d = vec![0.0; sx.iter().product()];
            for (gv, &idx) in g.iter().zip(&argmax) {
                d[idx] += gv;
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(&sx), d).unwrap())]
        }))
    }

    // ---- normalisation and losses --------------------------------------

    /// Batch normalisation with statistics of the current batch. Returns the
    /// normalised output together with the batch mean and (biased) variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Tensor, Tensor)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::shape(format!("batch norm on {sx:?}")));
        }
        let xm = self.matrix(x);
        let mean = xm.mean_axis(Axis(0)).unwrap();
        let var = xm.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (&xm - &mean) * &inv_std;
        let gam = as_vector(self.value(gamma));
        let bet = as_vector(self.value(beta));
        let out = (&xhat * &gam + &bet).into_dyn();
        let n = sx[0] as f64;
        let node = self.op(out, vec![x, gamma, beta], move |g, p, _| {
            let g = as_matrix(g);
            let gam = as_vector(p[1]);
            let dxhat = &g * &gam;
            let sum_d = dxhat.sum_axis(Axis(0));
            let sum_dx = (&dxhat * &xhat).sum_axis(Axis(0));
            let dx = (&dxhat * n - &sum_d - &xhat * &sum_dx) * (&inv_std / n);
            vec![
                Some(dx.into_dyn()),
                Some((&g * &xhat).sum_axis(Axis(0)).into_dyn()),
                Some(g.sum_axis(Axis(0)).into_dyn()),
            ]
        });
        Ok((node, mean.into_dyn(), var.into_dyn()))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor,
        var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || self.shape(gamma) != [sx[1]] || mean.shape() != [sx[1]] {
            return Err(Error::shape(format!("batch norm on {sx:?}")));
        }
        let mean = as_vector(mean);
        let inv_std = as_vector(var).mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (&self.matrix(x) - &mean) * &inv_std;
        let out = (&xhat * &as_vector(self.value(gamma)) + &as_vector(self.value(beta))).into_dyn();
        Ok(self.op(out, vec![x, gamma, beta], move |g, p, _| {
            let g = as_matrix(g);
            let gam = as_vector(p[1]);
            vec![
                Some((&g * &(&gam * &inv_std)).into_dyn()),
                Some((&g * &xhat).sum_axis(Axis(0)).into_dyn()),
                Some(g.sum_axis(Axis(0)).into_dyn()),
            ]
        }))
    }

    /// Row-wise normalised exponential.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape(format!("softmax on {:?}", self.shape(a))));
        }
        let out = softmax_rows(&self.matrix(a)).into_dyn();
        Ok(self.op(out, vec![a], |g, _, y| {
            let (g, y) = (as_matrix(g), as_matrix(y));
            let dot = (&g * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![Some((&y * &(&g - &dot)).into_dyn())]
        }))
    }

    /// Mean over rows of `-w[y_i] * ln(max(p[i, y_i], PROB_FLOOR))`; a scalar.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[1] != weights.len() {
            return Err(Error::shape(format!(
                "loss over {shape:?} with {} labels and {} class weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= shape[1]) {
            return Err(Error::invalid(format!(
                "label {bad} outside {} classes",
                shape[1]
            )));
        }
        let p = self.matrix(probs);
        let n = labels.len().max(1) as f64;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -weights[y] * p[[i, y]].max(PROB_FLOOR).ln())
            .sum();
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        let out = ArrayD::from_elem(IxDyn(&[]), total / n);
        Ok(self.op(out, vec![probs], move |g, parents, _| {
            let up = *g.first().unwrap();
            let p = as_matrix(parents[0]);
            let mut d = Array2::zeros(p.raw_dim());
            for (i, &y) in labels.iter().enumerate() {
                let v = p[[i, y]];
                if v > PROB_FLOOR {
                    d[[i, y]] = -up * weights[y] / (n * v);
                }
            }
            vec![Some(d.into_dyn())]
        }))
    }

    /// `Σ c_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[Var], coefs: &[f64]) -> Result<Var> {
        if terms.len() != coefs.len() || terms.is_empty() {
            return Err(Error::shape(format!(
                "weighted sum of {} terms with {} coefficients",
                terms.len(),
                coefs.len()
            )));
        }
        let mut total = 0.0;
        for (&t, &c) in terms.iter().zip(coefs) {
            if self.value(t).len() != 1 {
                return Err(Error::shape("weighted sum expects scalar terms"));
            }
            total += c * self.value(t).iter().next().unwrap();
        }
        let coefs = coefs.to_vec();
        let n = terms.len();
        let out = ArrayD::from_elem(IxDyn(&[]), total);
        Ok(self.op(out, terms.to_vec(), move |g, p, _| {
            let up = *g.first().unwrap();
            (0..n)
                .map(|i| Some(ArrayD::from_elem(p[i].raw_dim(), up * coefs[i])))
                .collect()
        }))
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a stored parameter; `None` when the parameter was not
    /// used by the forward pass or received no gradient.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub(crate) fn as_matrix(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view()
        .into_dimensionality::<Ix2>()
        .expect("tensor is not a matrix")
}

fn as_vector(t: &Tensor) -> ndarray::Array1<f64> {
    t.iter().copied().collect()
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (h, w) = (sx[2] + 2 * pad, sx[3] + 2 * pad);
        if h < sw[2] || w < sw[3] {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than padded input {h}x{w}",
                sw[2], sw[3]
            )));
        }
        Ok(ConvGeom {
            batch: sx[0],
            in_c: sx[1],
            h: sx[2],
            w: sx[3],
            out_c: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh: (h - sw[2]) / stride + 1,
            ow: (w - sw[3]) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn image_len(&self) -> usize {
        self.in_c * self.h * self.w
    }

    /// Visits (column row, output position, input offset) for every
    /// in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.in_c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for i in 0..self.oh {
                        let y = (i * self.stride + ki) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        for j in 0..self.ow {
                            let x = (j * self.stride + kj) as isize - self.pad as isize;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            f(row, i * self.ow + j, (c * self.h + y as usize) * self.w + x as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, image: &[f64]) -> Array2<f64> {
        let cols_n = self.oh * self.ow;
        let mut cols = vec![0.0; self.patch() * cols_n];
        self.for_each_tap(|row, pos, src| cols[row * cols_n + pos] = image[src]);
        Array2::from_shape_vec((self.patch(), cols_n), cols).unwrap()
    }

    fn col2im(&self, cols: &Array2<f64>, image: &mut [f64]) {
        let cols = cols.as_standard_layout();
        let cs = cols.as_slice().unwrap();
        let cols_n = self.oh * self.ow;
        self.for_each_tap(|row, pos, dst| image[dst] += cs[row * cols_n + pos]);
    }
}
