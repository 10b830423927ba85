//! Scalar reverse-mode differentiation on a thread-local tape.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::Real;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

/// A recorded scalar. Constants carry no tape entry.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    id: u32,
    v: f64,
}

fn push(a: u32, da: f64, b: u32, db: f64, v: f64) -> Var {
    if a == NONE && b == NONE {
        return Var { id: NONE, v };
    }
    let id = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(Node { a, da, b, db });
        (t.len() - 1) as u32
    });
    Var { id, v }
}

fn leaf(v: f64) -> Var {
    let id = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(Node { a: NONE, da: 0.0, b: NONE, db: 0.0 });
        (t.len() - 1) as u32
    });
    Var { id, v }
}

impl Var {
    fn unary(self, v: f64, d: f64) -> Var {
        push(self.id, d, NONE, 0.0, v)
    }
}

/// Value of `f` at `x` and its gradient. Not re-entrant: `f` must not call
/// back into this function.
pub fn value_and_gradient(x: &[f64], f: impl FnOnce(&[Var]) -> Var) -> (f64, Vec<f64>) {
    assert!(!ACTIVE.with(|a| a.replace(true)), "nested reverse-mode evaluation");
    TAPE.with(|t| t.borrow_mut().clear());
    let inputs: Vec<Var> = x.iter().map(|&v| leaf(v)).collect();
    let out = f(&inputs);
    let grad = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        if out.id != NONE {
            adj[out.id as usize] = 1.0;
            for i in (0..t.len()).rev() {
                let g = adj[i];
                if g == 0.0 {
                    continue;
                }
                let n = t[i];
                if n.a != NONE && n.da != 0.0 {
                    adj[n.a as usize] += g * n.da;
                }
                if n.b != NONE && n.db != 0.0 {
                    adj[n.b as usize] += g * n.db;
                }
            }
        }
        inputs.iter().map(|v| adj[v.id as usize]).collect()
    });
    TAPE.with(|t| t.borrow_mut().clear());
    ACTIVE.with(|a| a.set(false));
    (out.v, grad)
}

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        push(self.id, 1.0, o.id, 1.0, self.v + o.v)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        push(self.id, 1.0, o.id, -1.0, self.v - o.v)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        push(self.id, o.v, o.id, self.v, self.v * o.v)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        let q = self.v / o.v;
        push(self.id, 1.0 / o.v, o.id, -q / o.v, q)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.v, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, o: f64) -> Var {
        self.unary(self.v + o, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, o: f64) -> Var {
        self.unary(self.v * o, o)
    }
}

impl Real for Var {
    fn cst(v: f64) -> Self {
        Var { id: NONE, v }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.unary(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.v.cos(), -self.v.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_derivatives() {
        let (v, g) = value_and_gradient(&[2.0, 3.0], |x| x[0] * x[1] + x[0].sin() / x[1]);
        assert!((v - (6.0 + 2f64.sin() / 3.0)).abs() < 1e-15);
        assert!((g[0] - (3.0 + 2f64.cos() / 3.0)).abs() < 1e-15);
        assert!((g[1] - (2.0 - 2f64.sin() / 9.0)).abs() < 1e-15);
        let (_, g) = value_and_gradient(&[0.7], |x| (x[0].exp() * 2.0 + 1.0).ln() - x[0].sqrt().cos());
        let x: f64 = 0.7;
        let want = 2.0 * x.exp() / (2.0 * x.exp() + 1.0) + x.sqrt().sin() * 0.5 / x.sqrt();
        assert!((g[0] - want).abs() < 1e-14);
    }

    #[test]
    fn unused_inputs_and_constants() {
        let (v, g) = value_and_gradient(&[1.0, 5.0], |x| x[0] * 4.0 - Var::cst(2.0));
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![4.0, 0.0]);
        let (v, g) = value_and_gradient(&[1.0], |_| Var::cst(3.0));
        assert_eq!((v, g), (3.0, vec![0.0]));
    }

    #[test]
    fn repeated_use_accumulates() {
        let (_, g) = value_and_gradient(&[3.0], |x| x[0] * x[0] * x[0]);
        assert_eq!(g[0], 27.0);
    }
}
