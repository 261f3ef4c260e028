//! Minimal reverse-mode tape for scalar expression graphs.
//!
//! The tape records a fixed primitive set (+, -, *, /, powi, sqrt, tanh, exp,
//! square, affine scaling); anything else is simply not constructible, so an
//! unsupported operation cannot enter a graph. Local partial derivatives are
//! stored at record time and a single reverse sweep accumulates adjoints for
//! every node. Graphs here are small (per-point residual expressions); the
//! network itself uses the dedicated layered propagation in [`crate::net`].

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
struct Node {
    val: f64,
    // Up to two parents; unused slots hold parent = self and weight 0.
    parent: [u32; 2],
    weight: [f64; 2],
}

/// Expression tape. Reusable via [`Tape::clear`] to avoid reallocation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drops all recorded nodes but keeps capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node.
    pub fn val(&self, x: Var) -> f64 {
        self.nodes[x.0 as usize].val
    }

    /// A differentiable input node.
    pub fn leaf(&mut self, val: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            val,
            parent: [id, id],
            weight: [0.0, 0.0],
        });
        Var(id)
    }

    fn push1(&mut self, val: f64, p: Var, w: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            val,
            parent: [p.0, id],
            weight: [w, 0.0],
        });
        Var(id)
    }

    fn push2(&mut self, val: f64, p0: Var, w0: f64, p1: Var, w1: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            val,
            parent: [p0.0, p1.0],
            weight: [w0, w1],
        });
        Var(id)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push2(self.val(a) + self.val(b), a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push2(self.val(a) - self.val(b), a, 1.0, b, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.push2(va * vb, a, vb, b, va)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.push2(va / vb, a, 1.0 / vb, b, -va / (vb * vb))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push1(-self.val(a), a, -1.0)
    }

    /// `c * a + d` with constants `c`, `d`.
    pub fn affine(&mut self, a: Var, c: f64, d: f64) -> Var {
        self.push1(c * self.val(a) + d, a, c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.val(a);
        self.push1(v * v, a, 2.0 * v)
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let v = self.val(a);
        self.push1(v.powi(n), a, n as f64 * v.powi(n - 1))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let r = self.val(a).sqrt();
        self.push1(r, a, 0.5 / r)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.val(a).tanh();
        self.push1(t, a, 1.0 - t * t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.val(a).exp();
        self.push1(e, a, e)
    }

    /// Left-to-right sum; deterministic order.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut acc = match xs.first() {
            Some(&x) => x,
            None => return self.leaf(0.0),
        };
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn mean(&mut self, xs: &[Var]) -> Var {
        let n = xs.len().max(1) as f64;
        let s = self.sum(xs);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Reverse sweep from `root`. Afterwards [`Tape::adjoint`] reads d(root)/d(node).
    pub fn backward(&mut self, root: Var) {
        let n = self.nodes.len();
        self.adjoints.clear();
        self.adjoints.resize(n, 0.0);
        self.adjoints[root.0 as usize] = 1.0;
        for i in (0..=root.0 as usize).rev() {
            let a = self.adjoints[i];
            if a == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            for k in 0..2 {
                let p = node.parent[k] as usize;
                if p != i {
                    self.adjoints[p] += a * node.weight[k];
                }
            }
        }
    }

    /// Adjoint of `x` from the most recent [`Tape::backward`] call.
    pub fn adjoint(&self, x: Var) -> f64 {
        self.adjoints[x.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Central finite difference of a scalar function of n inputs.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn expr(tape: &mut Tape, x: &[f64]) -> (Vec<Var>, Var) {
        // f = tanh(x0 * x1) + sqrt(x2) / x0 - exp(-x1) + (x2 - x0)^3
        let leaves: Vec<Var> = x.iter().map(|&v| tape.leaf(v)).collect();
        let m = tape.mul(leaves[0], leaves[1]);
        let t = tape.tanh(m);
        let s = tape.sqrt(leaves[2]);
        let d = tape.div(s, leaves[0]);
        let nx1 = tape.neg(leaves[1]);
        let e = tape.exp(nx1);
        let diff = tape.sub(leaves[2], leaves[0]);
        let c = tape.powi(diff, 3);
        let a1 = tape.add(t, d);
        let a2 = tape.sub(a1, e);
        let root = tape.add(a2, c);
        (leaves, root)
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let x = [0.7, -0.4, 1.3];
        let mut tape = Tape::new();
        let (leaves, root) = expr(&mut tape, &x);
        tape.backward(root);
        let grad: Vec<f64> = leaves.iter().map(|&v| tape.adjoint(v)).collect();

        let f = |x: &[f64]| {
            let mut t = Tape::new();
            let (_, r) = expr(&mut t, x);
            t.val(r)
        };
        let fd = fd_grad(f, &x, 1e-6);
        for (g, d) in grad.iter().zip(&fd) {
            assert_relative_eq!(g, d, max_relative = 1e-7, epsilon = 1e-9);
        }
    }

    #[test]
    fn unused_leaf_has_zero_adjoint() {
        let mut tape = Tape::new();
        let a = tape.leaf(2.0);
        let b = tape.leaf(5.0);
        let r = tape.square(a);
        tape.backward(r);
        assert_eq!(tape.adjoint(b), 0.0);
        assert_eq!(tape.adjoint(a), 4.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*x + x => df/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(3.0);
        let sq = tape.mul(x, x);
        let r = tape.add(sq, x);
        tape.backward(r);
        assert_eq!(tape.adjoint(x), 7.0);
    }

    #[test]
    fn mean_and_sum_are_exact() {
        let mut tape = Tape::new();
        let xs: Vec<Var> = [1.0, 2.0, 4.0].iter().map(|&v| tape.leaf(v)).collect();
        let m = tape.mean(&xs);
        assert_relative_eq!(tape.val(m), 7.0 / 3.0, max_relative = 1e-15);
        tape.backward(m);
        for &x in &xs {
            assert_relative_eq!(tape.adjoint(x), 1.0 / 3.0, max_relative = 1e-15);
        }
        // Empty sum is a constant zero leaf.
        let mut t2 = Tape::new();
        let z = t2.sum(&[]);
        assert_eq!(t2.val(z), 0.0);
    }

    #[test]
    fn clear_reuses_allocation() {
        let mut tape = Tape::new();
        for _ in 0..3 {
            tape.clear();
            let a = tape.leaf(1.5);
            let b = tape.tanh(a);
            tape.backward(b);
            let s = 1.5f64.tanh();
            assert_relative_eq!(tape.adjoint(a), 1.0 - s * s, max_relative = 1e-15);
        }
    }
}
