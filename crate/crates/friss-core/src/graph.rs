//! Minimal reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! Values are `Array2<f64>`; column vectors are `(n, 1)` and scalars `(1, 1)`.
//! The forward value is computed when a node is created; `backward` runs one
//! reverse sweep and accumulates gradients into every node.

use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    AddN(Vec<usize>),
    Sub(usize, usize),
    EwMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// c - x, elementwise.
    SubFromScalar(usize),
    /// Elementwise add of a constant array (e.g. scaled Gumbel noise).
    AddConstArray(usize),
    /// Elementwise multiply by a constant array (e.g. a dropout mask).
    MulConstArray(usize, Array2<f64>),
    /// W (m,n) * x (n,1) -> (m,1)
    MatVec(usize, usize),
    /// Fᵀ g: F (k,d), g (k,1) -> (d,1)
    TMatVec(usize, usize),
    /// A Bᵀ: (m,n) x (k,n) -> (m,k)
    MatMulNT(usize, usize),
    Transpose(usize),
    Relu(usize),
    /// Softmax over a column vector.
    Softmax(usize),
    /// ln(x + eps), elementwise.
    LogEps(usize, f64),
    /// Sum of all entries -> (1,1)
    Sum(usize),
    /// a / s with s a (1,1) variable.
    DivByScalarVar(usize, usize),
    /// Select rows of a matrix.
    GatherRows(usize, Vec<usize>),
    /// Euclidean distance between two same-shaped arrays -> (1,1)
    L2Dist(usize, usize),
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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
        let grad = Array2::zeros(value.raw_dim());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].grad
    }

    // -- node constructors ---------------------------------------------------

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_vec(&mut self, v: &ndarray::Array1<f64>) -> Var {
        let col = Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("shape");
        self.leaf(col)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn add_n(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty());
        let mut v = self.nodes[terms[0].0].value.clone();
        for t in &terms[1..] {
            v += &self.nodes[t.0].value;
        }
        self.push(v, Op::AddN(terms.iter().map(|t| t.0).collect()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn ew_mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::EwMul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value + c;
        self.push(v, Op::AddScalar(a.0))
    }

    pub fn sub_from_scalar(&mut self, c: f64, a: Var) -> Var {
        let v = c - &self.nodes[a.0].value;
        self.push(v, Op::SubFromScalar(a.0))
    }

    pub fn add_const_array(&mut self, a: Var, arr: &Array2<f64>) -> Var {
        let v = &self.nodes[a.0].value + arr;
        self.push(v, Op::AddConstArray(a.0))
    }

    pub fn mul_const_array(&mut self, a: Var, arr: &Array2<f64>) -> Var {
        let v = &self.nodes[a.0].value * arr;
        self.push(v, Op::MulConstArray(a.0, arr.clone()))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let v = self.nodes[w.0].value.dot(&self.nodes[x.0].value);
        self.push(v, Op::MatVec(w.0, x.0))
    }

    pub fn tmatvec(&mut self, f: Var, g: Var) -> Var {
        let v = self.nodes[f.0].value.t().dot(&self.nodes[g.0].value);
        self.push(v, Op::TMatVec(f.0, g.0))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(v, Op::MatMulNT(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        debug_assert_eq!(x.ncols(), 1, "softmax expects a column vector");
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex = x.mapv(|v| (v - max).exp());
        let sum: f64 = ex.sum();
        self.push(ex / sum, Op::Softmax(a.0))
    }

    pub fn log_eps(&mut self, a: Var, eps: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| (x + eps).ln());
        self.push(v, Op::LogEps(a.0, eps))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a.0))
    }

    pub fn div_by_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value[[0, 0]];
        let v = &self.nodes[a.0].value / sv;
        self.push(v, Op::DivByScalarVar(a.0, s.0))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = Array2::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&src.row(r));
        }
        self.push(v, Op::GatherRows(a.0, rows))
    }

    /// Entry `i` of a column vector as a (1,1) variable.
    pub fn select_entry(&mut self, a: Var, i: usize) -> Var {
        self.gather_rows(a, vec![i])
    }

    pub fn l2_dist(&mut self, a: Var, b: Var) -> Var {
        let d = (&self.nodes[a.0].value - &self.nodes[b.0].value)
            .mapv(|x| x * x)
            .sum()
            .sqrt();
        self.push(Array2::from_elem((1, 1), d), Op::L2Dist(a.0, b.0))
    }

    /// Mean of same-shaped variables.
    pub fn average(&mut self, terms: &[Var]) -> Var {
        let s = self.add_n(terms);
        self.scale(s, 1.0 / terms.len() as f64)
    }

    // -- backward ------------------------------------------------------------

    pub fn backward(&mut self, loss: Var) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        self.nodes[loss.0].grad[[0, 0]] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = self.nodes[i].grad.clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.nodes[a].grad += &g;
                    self.nodes[b].grad += &g;
                }
                Op::AddN(terms) => {
                    for t in terms {
                        self.nodes[t].grad += &g;
                    }
                }
                Op::Sub(a, b) => {
                    self.nodes[a].grad += &g;
                    self.nodes[b].grad -= &g;
                }
                Op::EwMul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    self.nodes[a].grad += &ga;
                    self.nodes[b].grad += &gb;
                }
                Op::Scale(a, c) => {
                    self.nodes[a].grad += &(&g * c);
                }
                Op::AddScalar(a) => {
                    self.nodes[a].grad += &g;
                }
                Op::SubFromScalar(a) => {
                    self.nodes[a].grad -= &g;
                }
                Op::AddConstArray(a) => {
                    self.nodes[a].grad += &g;
                }
                Op::MulConstArray(a, arr) => {
                    self.nodes[a].grad += &(&g * &arr);
                }
                Op::MatVec(w, x) => {
                    let gw = g.dot(&self.nodes[x].value.t());
                    let gx = self.nodes[w].value.t().dot(&g);
                    self.nodes[w].grad += &gw;
                    self.nodes[x].grad += &gx;
                }
                Op::TMatVec(f, gv) => {
                    // y = Fᵀ g: dF += g · yᵍᵀ, dg += F · yᵍ
                    let gf = self.nodes[gv].value.dot(&g.t());
                    let gg = self.nodes[f].value.dot(&g);
                    self.nodes[f].grad += &gf;
                    self.nodes[gv].grad += &gg;
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(&self.nodes[b].value);
                    let gb = g.t().dot(&self.nodes[a].value);
                    self.nodes[a].grad += &ga;
                    self.nodes[b].grad += &gb;
                }
                Op::Transpose(a) => {
                    self.nodes[a].grad += &g.t();
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.nodes[a].grad += &(&g * &mask);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let dot: f64 = (&g * y).sum();
                    let ga = y * &(g.clone() - dot);
                    self.nodes[a].grad += &ga;
                }
                Op::LogEps(a, eps) => {
                    let ga = &g / &self.nodes[a].value.mapv(|x| x + eps);
                    self.nodes[a].grad += &ga;
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.nodes[a].value.raw_dim(), g[[0, 0]]);
                    self.nodes[a].grad += &ga;
                }
                Op::DivByScalarVar(a, s) => {
                    let sv = self.nodes[s].value[[0, 0]];
                    let ga = &g / sv;
                    let gs = -(&g * &self.nodes[a].value).sum() / (sv * sv);
                    self.nodes[a].grad += &ga;
                    self.nodes[s].grad[[0, 0]] += gs;
                }
                Op::GatherRows(a, rows) => {
                    for (r_out, &r_in) in rows.iter().enumerate() {
                        let row = g.row(r_out).to_owned();
                        let mut target = self.nodes[a].grad.row_mut(r_in);
                        target += &row;
                    }
                }
                Op::L2Dist(a, b) => {
                    let d = self.nodes[i].value[[0, 0]].max(1e-12);
                    let diff = &self.nodes[a].value - &self.nodes[b].value;
                    let scaled = diff * (g[[0, 0]] / d);
                    self.nodes[a].grad += &scaled;
                    self.nodes[b].grad -= &scaled;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite differences on a scalar-valued builder.
    fn finite_diff<F>(params: &mut Vec<Array2<f64>>, build: F) -> Vec<Array2<f64>>
    where
        F: Fn(&mut Graph, &[Array2<f64>]) -> Var,
    {
        let h = 1e-6;
        let mut grads = Vec::new();
        for pi in 0..params.len() {
            let mut grad = Array2::zeros(params[pi].raw_dim());
            for idx in 0..params[pi].len() {
                let (r, c) = (idx / params[pi].ncols(), idx % params[pi].ncols());
                let orig = params[pi][[r, c]];
                params[pi][[r, c]] = orig + h;
                let mut g = Graph::new();
                let v = build(&mut g, params);
                let up = g.scalar(v);
                params[pi][[r, c]] = orig - h;
                let mut g = Graph::new();
                let v = build(&mut g, params);
                let down = g.scalar(v);
                params[pi][[r, c]] = orig;
                grad[[r, c]] = (up - down) / (2.0 * h);
            }
            grads.push(grad);
        }
        grads
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() / denom < tol, "analytic {x} vs fd {y}");
        }
    }

    #[test]
    fn gradients_of_composite_expression_match_finite_differences() {
        // loss = sum(softmax(W·relu(M·x)) ∘ softmax(W·relu(M·x))) + l2dist(Fᵀs, t)
        let mut params = vec![
            array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]],          // M (2,3)
            array![[0.7, -0.3], [0.2, 0.9], [-0.5, 0.1]],        // W (3,2)
            array![[0.2, 0.8, -0.1], [0.4, -0.7, 0.3]],          // F (2,3)
        ];
        let x = array![[0.5], [-1.2], [0.8]];
        let s = array![[0.6], [0.4]];
        let t = array![[0.1], [0.2], [0.3]];

        let build = |g: &mut Graph, p: &[Array2<f64>]| {
            let m = g.leaf(p[0].clone());
            let w = g.leaf(p[1].clone());
            let f = g.leaf(p[2].clone());
            let xv = g.leaf(x.clone());
            let sv = g.leaf(s.clone());
            let tv = g.leaf(t.clone());
            let h = g.matvec(m, xv);
            let h = g.relu(h);
            let l = g.matvec(w, h);
            let sm = g.softmax(l);
            let sq = g.ew_mul(sm, sm);
            let part1 = g.sum(sq);
            let rec = g.tmatvec(f, sv);
            let part2 = g.l2_dist(rec, tv);
            g.add(part1, part2)
        };

        let fd = finite_diff(&mut params, build);

        let mut g = Graph::new();
        let m = g.leaf(params[0].clone());
        let w = g.leaf(params[1].clone());
        let f = g.leaf(params[2].clone());
        let xv = g.leaf(x.clone());
        let sv = g.leaf(s.clone());
        let tv = g.leaf(t.clone());
        let h = g.matvec(m, xv);
        let h = g.relu(h);
        let l = g.matvec(w, h);
        let sm = g.softmax(l);
        let sq = g.ew_mul(sm, sm);
        let part1 = g.sum(sq);
        let rec = g.tmatvec(f, sv);
        let part2 = g.l2_dist(rec, tv);
        let loss = g.add(part1, part2);
        g.backward(loss);

        assert_close(g.grad(m), &fd[0], 1e-5);
        assert_close(g.grad(w), &fd[1], 1e-5);
        assert_close(g.grad(f), &fd[2], 1e-5);
    }

    #[test]
    fn gather_div_log_gradients_match_finite_differences() {
        // Exercises GatherRows, DivByScalarVar, LogEps, SubFromScalar, MatMulNT.
        let mut params = vec![array![[0.9, 0.3], [0.2, 0.8], [0.4, 0.5]]]; // F (3,2)
        let build = |g: &mut Graph, p: &[Array2<f64>]| {
            let f = g.leaf(p[0].clone());
            let gram = g.matmul_nt(f, f);
            let eye = g.leaf(Array2::eye(3));
            let dev = g.sub(gram, eye);
            let sq = g.ew_mul(dev, dev);
            let reg = g.sum(sq);
            let col = g.gather_rows(f, vec![2, 0]);
            let total = g.sum(col);
            let norm = g.div_by_scalar_var(col, total);
            let inv = g.sub_from_scalar(1.0, norm);
            let lg = g.log_eps(inv, 1e-9);
            let part = g.sum(lg);
            g.add(reg, part)
        };
        let fd = finite_diff(&mut params, build);
        let mut g = Graph::new();
        let f = g.leaf(params[0].clone());
        let gram = g.matmul_nt(f, f);
        let eye = g.leaf(Array2::eye(3));
        let dev = g.sub(gram, eye);
        let sq = g.ew_mul(dev, dev);
        let reg = g.sum(sq);
        let col = g.gather_rows(f, vec![2, 0]);
        let total = g.sum(col);
        let norm = g.div_by_scalar_var(col, total);
        let inv = g.sub_from_scalar(1.0, norm);
        let lg = g.log_eps(inv, 1e-9);
        let part = g.sum(lg);
        let loss = g.add(reg, part);
        g.backward(loss);
        assert_close(g.grad(f), &fd[0], 1e-5);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let mut g = Graph::new();
        let z = g.leaf(Array2::zeros((4, 1)));
        let s = g.softmax(z);
        for v in g.value(s).iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }
}
