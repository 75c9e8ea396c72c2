//! Gradient plumbing: a small reverse-mode tape for composing layers with
//! explicit adjoints, and a central-difference checker every layer is tested
//! against.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A scalar-valued function with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn gradient(&self, x: &Tensor) -> Result<Tensor>;
}

/// Adapter turning a pair of closures into a [`Differentiable`].
pub struct FnOp<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Differentiable for FnOp<F, G>
where
    F: Fn(&Tensor) -> Result<f64>,
    G: Fn(&Tensor) -> Result<Tensor>,
{
    fn value(&self, x: &Tensor) -> Result<f64> {
        (self.value)(x)
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        (self.gradient)(x)
    }
}

fn central_difference(op: &dyn Differentiable, x: &Tensor, i: usize, eps: f64) -> Result<f64> {
    let base = x.data()[i];
    let plus = op.value(&x.with_component(i, base + eps))?;
    let minus = op.value(&x.with_component(i, base - eps))?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Largest relative disagreement between the analytic gradient and central
/// differences, `|a - c| / max(|a|, |c|, 1e-6 * max_j |a_j|, 1e-12)` over all
/// components. The floor keeps components far below the gradient's scale,
/// where central differences carry only rounding noise, from dominating.
///
/// Each component is also differenced at `eps / 8`; if the quotient grows by
/// more than 4x the point is reported as non-differentiable.
pub fn grad_check(op: &dyn Differentiable, input: &Tensor, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("eps {eps} outside (0, 1e-2]")));
    }
    let analytic = op.gradient(input)?;
    if analytic.shape() != input.shape() {
        return Err(Error::dim(format!(
            "gradient shape {:?} differs from input shape {:?}",
            analytic.shape(),
            input.shape()
        )));
    }
    let f0 = op.value(input)?;
    let floor = (1e-6 * analytic.data().iter().fold(0.0_f64, |m, a| m.max(a.abs()))).max(1e-12);
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let coarse = central_difference(op, input, i, eps)?;
        let fine = central_difference(op, input, i, eps / 8.0)?;
        if fine.abs() > 4.0 * coarse.abs() + 1e-6 * (1.0 + f0.abs()) {
            return Err(Error::NonDifferentiable {
                index: i,
                coarse,
                fine,
            });
        }
        let a = analytic.data()[i];
        let err = (a - coarse).abs() / a.abs().max(coarse.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type Adjoint = Box<dyn Fn(&Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    shape: Vec<usize>,
    parents: Vec<Var>,
    adjoint: Option<Adjoint>,
}

/// Records operations in execution order; [`GradTape::backward`] replays them
/// in reverse, pushing each node's upstream gradient through its adjoint rule.
///
/// Built per call and never shared mutably.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf whose gradient will be reported by `backward`.
    pub fn input(&mut self, value: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: value.shape().to_vec(),
            parents: Vec::new(),
            adjoint: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation producing a value of `shape` from `parents`.
    /// The adjoint maps the output gradient to one gradient per parent, in order.
    pub fn record<F>(&mut self, shape: Vec<usize>, parents: &[Var], adjoint: F) -> Var
    where
        F: Fn(&Tensor) -> Vec<Tensor> + Send + Sync + 'static,
    {
        self.nodes.push(Node {
            shape,
            parents: parents.to_vec(),
            adjoint: Some(Box::new(adjoint)),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of `output` (seeded with `seed`) with respect to every leaf,
    /// returned in leaf registration order.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Vec<(Var, Tensor)>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::State("output variable not on this tape".into()));
        }
        if seed.shape() != self.nodes[output.0].shape.as_slice() {
            return Err(Error::dim(format!(
                "seed shape {:?} differs from output shape {:?}",
                seed.shape(),
                self.nodes[output.0].shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.adjoint {
                None => grads[idx] = Some(upstream),
                Some(adjoint) => {
                    let parent_grads = adjoint(&upstream);
                    if parent_grads.len() != node.parents.len() {
                        return Err(Error::State(format!(
                            "adjoint of node {idx} returned {} gradients for {} parents",
                            parent_grads.len(),
                            node.parents.len()
                        )));
                    }
                    for (p, g) in node.parents.iter().zip(parent_grads) {
                        if g.shape() != self.nodes[p.0].shape.as_slice() {
                            return Err(Error::dim(format!(
                                "adjoint of node {idx} produced shape {:?} for parent of shape {:?}",
                                g.shape(),
                                self.nodes[p.0].shape
                            )));
                        }
                        grads[p.0] = Some(match grads[p.0].take() {
                            Some(acc) => acc.add(&g)?,
                            None => g,
                        });
                    }
                }
            }
        }
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.adjoint.is_none())
            .map(|(i, n)| {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(n.shape.clone()));
                (Var(i), g)
            })
            .collect())
    }
}
