//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Numerical code is written once against the [`Real`] trait. Running it on
//! `f64` evaluates the function; running it on [`Var`] records every
//! elementary operation on a [`Tape`] so that one reverse sweep yields the
//! full gradient. Values computed through `Var` go through exactly the same
//! floating-point operations as the `f64` instantiation, so the two agree
//! bit for bit.

use std::cell::{Cell, RefCell};
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type the model code is generic over.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// A constant that carries no derivative information.
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// Same value, derivative cut.
    fn detach(self) -> Self {
        Self::cst(self.value())
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Where the first non-finite value appeared during a recorded evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonFiniteSite {
    pub node: usize,
    pub op: &'static str,
    pub value: f64,
}

/// Operation record shared by all [`Var`]s of one evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<NonFiniteSite>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.first_non_finite.set(None);
    }

    /// Register an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [0.0; 2],
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn first_non_finite(&self) -> Option<NonFiniteSite> {
        self.first_non_finite.get()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        assert!(index < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        index as u32
    }

    fn note(&self, index: u32, op: &'static str, value: f64) {
        if !value.is_finite() && self.first_non_finite.get().is_none() {
            self.first_non_finite.set(Some(NonFiniteSite {
                node: index as usize,
                op,
                value,
            }));
        }
    }

    /// Adjoints of every node given a seed on `output`.
    fn backward(&self, output: &Var<'_>, adjoint: &mut Vec<f64>) {
        let nodes = self.nodes.borrow();
        adjoint.clear();
        adjoint.resize(nodes.len(), 0.0);
        let Some(out) = output.node() else {
            return;
        };
        adjoint[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            for k in 0..2 {
                let p = n.parents[k];
                if p != NO_PARENT {
                    adjoint[p as usize] += n.partials[k] * a;
                }
            }
        }
    }
}

/// A recorded scalar. Constants have no tape and cost nothing to combine.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.value)
    }
}

impl<'t> Var<'t> {
    fn node(&self) -> Option<usize> {
        self.tape.map(|_| self.index as usize)
    }

    fn unary(self, value: f64, partial: f64, op: &'static str) -> Self {
        match self.tape {
            None => Var::cst(value),
            Some(tape) => {
                let index = tape.push(Node {
                    parents: [self.index, NO_PARENT],
                    partials: [partial, 0.0],
                });
                tape.note(index, op, value);
                Var {
                    tape: Some(tape),
                    index,
                    value,
                }
            }
        }
    }

    fn binary(self, rhs: Self, value: f64, dl: f64, dr: f64, op: &'static str) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Var::cst(value),
            (Some(_), None) => self.unary(value, dl, op),
            (None, Some(_)) => rhs.unary(value, dr, op),
            (Some(tape), Some(_)) => {
                let index = tape.push(Node {
                    parents: [self.index, rhs.index],
                    partials: [dl, dr],
                });
                tape.note(index, op, value);
                Var {
                    tape: Some(tape),
                    index,
                    value,
                }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0, "add")
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0, "sub")
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value, "mul")
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        self.binary(rhs, value, inv, -value * inv, "div")
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0, "neg")
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0, "add")
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0, "sub")
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs, "mul")
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs, "div")
    }
}

impl AddAssign for Var<'_> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for Var<'_> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for Var<'_> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Real for Var<'_> {
    fn cst(v: f64) -> Self {
        Var {
            tape: None,
            index: NO_PARENT,
            value: v,
        }
    }

    fn value(self) -> f64 {
        self.value
    }

    fn sqrt(self) -> Self {
        let v = self.value.sqrt();
        self.unary(v, 0.5 / v, "sqrt")
    }

    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value, "ln")
    }

    fn exp(self) -> Self {
        let v = self.value.exp();
        self.unary(v, v, "exp")
    }
}

/// Value and gradient of a scalar function.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub grad: Vec<f64>,
    /// First non-finite intermediate, if any appeared.
    pub non_finite: Option<NonFiniteSite>,
}

/// Reusable differentiation context: one per chain, never shared.
#[derive(Debug, Default)]
pub struct GradientContext {
    tape: Tape,
    adjoint: Vec<f64>,
}

impl GradientContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluate `f` at `x` and write its gradient into `grad`.
    pub fn value_and_grad<F>(&mut self, x: &[f64], grad: &mut [f64], f: F) -> (f64, Option<NonFiniteSite>)
    where
        F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
    {
        assert_eq!(x.len(), grad.len());
        self.tape.clear();
        let inputs: Vec<Var<'_>> = x.iter().map(|&v| self.tape.var(v)).collect();
        let out = f(&inputs);
        let value = out.value;
        self.tape.backward(&out, &mut self.adjoint);
        if self.adjoint.is_empty() {
            grad.iter_mut().for_each(|g| *g = 0.0);
        } else {
            grad.copy_from_slice(&self.adjoint[..x.len()]);
        }
        let site = self.tape.first_non_finite();
        drop(inputs);
        (value, site)
    }

    /// Nodes recorded by the last evaluation.
    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }
}

/// One-shot gradient of `f` at `x`.
pub fn gradient<F>(f: F, x: &[f64]) -> Gradient
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    let mut ctx = GradientContext::new();
    let mut grad = vec![0.0; x.len()];
    let (value, non_finite) = ctx.value_and_grad(x, &mut grad, f);
    Gradient {
        value,
        grad,
        non_finite,
    }
}
