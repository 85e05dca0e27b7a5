//! A network is an ordered list of units; forward runs them in order,
//! backward in reverse. Parameter walks are always in network order so the
//! optimizer and checkpoint format see a stable sequence.

use super::layers::{
    BatchNorm2d, Conv2d, Flatten, FullyConnected, GlobalAvgPool, MaxPool2d, Mode, Relu,
    ResidualBlock,
};
use super::tensor::{Parameter, Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone)]
pub enum Unit<T> {
    Conv(Conv2d<T>),
    Relu(Relu),
    BatchNorm(BatchNorm2d<T>),
    MaxPool(MaxPool2d),
    Flatten(Flatten),
    FullyConnected(FullyConnected<T>),
    GlobalAvgPool(GlobalAvgPool),
    Residual(ResidualBlock<T>),
}

impl<T: Scalar> Unit<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        match self {
            Unit::Conv(l) => l.forward(x, mode),
            Unit::Relu(l) => l.forward(x, mode),
            Unit::BatchNorm(l) => l.forward(x, mode),
            Unit::MaxPool(l) => l.forward(x, mode),
            Unit::Flatten(l) => l.forward(x, mode),
            Unit::FullyConnected(l) => l.forward(x, mode),
            Unit::GlobalAvgPool(l) => l.forward(x, mode),
            Unit::Residual(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Unit::Conv(l) => l.backward(grad),
            Unit::Relu(l) => l.backward(grad),
            Unit::BatchNorm(l) => l.backward(grad),
            Unit::MaxPool(l) => l.backward(grad),
            Unit::Flatten(l) => l.backward(grad),
            Unit::FullyConnected(l) => l.backward(grad),
            Unit::GlobalAvgPool(l) => l.backward(grad),
            Unit::Residual(l) => l.backward(grad),
        }
    }
}

fn conv_params<T: Scalar>(c: &mut Conv2d<T>) -> Vec<&mut Parameter<T>> {
    let mut out = vec![&mut c.weight];
    if let Some(b) = &mut c.bias {
        out.push(b);
    }
    out
}

fn conv_persistent<T: Scalar>(c: &Conv2d<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out = vec![(c.weight.name.clone(), &c.weight.value)];
    if let Some(b) = &c.bias {
        out.push((b.name.clone(), &b.value));
    }
    out
}

fn conv_persistent_mut<T: Scalar>(c: &mut Conv2d<T>) -> Vec<(String, &mut Tensor<T>)> {
    let mut out = vec![(c.weight.name.clone(), &mut c.weight.value)];
    if let Some(b) = &mut c.bias {
        out.push((b.name.clone(), &mut b.value));
    }
    out
}

fn bn_persistent<T: Scalar>(bn: &BatchNorm2d<T>) -> Vec<(String, &Tensor<T>)> {
    vec![
        (bn.gamma.name.clone(), &bn.gamma.value),
        (bn.beta.name.clone(), &bn.beta.value),
        (format!("{}.running_mean", bn.prefix()), &bn.running_mean),
        (format!("{}.running_var", bn.prefix()), &bn.running_var),
    ]
}

fn bn_persistent_mut<T: Scalar>(bn: &mut BatchNorm2d<T>) -> Vec<(String, &mut Tensor<T>)> {
    let prefix = bn.prefix().to_string();
    vec![
        (bn.gamma.name.clone(), &mut bn.gamma.value),
        (bn.beta.name.clone(), &mut bn.beta.value),
        (format!("{prefix}.running_mean"), &mut bn.running_mean),
        (format!("{prefix}.running_var"), &mut bn.running_var),
    ]
}

#[derive(Debug, Clone, Default)]
pub struct Network<T> {
    pub units: Vec<Unit<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(units: Vec<Unit<T>>) -> Self {
        Network { units }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for unit in &mut self.units {
            cur = unit.forward(&cur, mode)?;
            debug_assert!(cur.all_finite(), "non-finite activation");
        }
        Ok(cur)
    }

    /// Backpropagates the loss gradient, accumulating parameter gradients,
    /// and returns the gradient with respect to the network input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = grad.clone();
        for unit in self.units.iter_mut().rev() {
            cur = unit.backward(&cur)?;
            debug_assert!(cur.all_finite(), "non-finite gradient");
        }
        Ok(cur)
    }

    /// Learnable parameters (conv/fc weights and biases, BN gamma/beta) in
    /// network order.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for unit in &mut self.units {
            match unit {
                Unit::Conv(c) => out.extend(conv_params(c)),
                Unit::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Unit::FullyConnected(fc) => {
                    out.push(&mut fc.weight);
                    out.push(&mut fc.bias);
                }
                Unit::Residual(r) => {
                    out.extend(conv_params(&mut r.conv1));
                    out.push(&mut r.bn1.gamma);
                    out.push(&mut r.bn1.beta);
                    out.extend(conv_params(&mut r.conv2));
                    out.push(&mut r.bn2.gamma);
                    out.push(&mut r.bn2.beta);
                    if let Some((conv, bn)) = &mut r.projection {
                        out.extend(conv_params(conv));
                        out.push(&mut bn.gamma);
                        out.push(&mut bn.beta);
                    }
                }
                Unit::Relu(_) | Unit::MaxPool(_) | Unit::Flatten(_) | Unit::GlobalAvgPool(_) => {}
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total learnable value count.
    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.numel()).sum()
    }

    /// Everything a checkpoint must carry, in network order: learnable
    /// values plus batch-norm running statistics.
    pub fn persistent(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for unit in &self.units {
            match unit {
                Unit::Conv(c) => out.extend(conv_persistent(c)),
                Unit::BatchNorm(bn) => out.extend(bn_persistent(bn)),
                Unit::FullyConnected(fc) => {
                    out.push((fc.weight.name.clone(), &fc.weight.value));
                    out.push((fc.bias.name.clone(), &fc.bias.value));
                }
                Unit::Residual(r) => {
                    out.extend(conv_persistent(&r.conv1));
                    out.extend(bn_persistent(&r.bn1));
                    out.extend(conv_persistent(&r.conv2));
                    out.extend(bn_persistent(&r.bn2));
                    if let Some((conv, bn)) = &r.projection {
                        out.extend(conv_persistent(conv));
                        out.extend(bn_persistent(bn));
                    }
                }
                Unit::Relu(_) | Unit::MaxPool(_) | Unit::Flatten(_) | Unit::GlobalAvgPool(_) => {}
            }
        }
        out
    }

    pub fn persistent_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for unit in &mut self.units {
            match unit {
                Unit::Conv(c) => out.extend(conv_persistent_mut(c)),
                Unit::BatchNorm(bn) => out.extend(bn_persistent_mut(bn)),
                Unit::FullyConnected(fc) => {
                    out.push((fc.weight.name.clone(), &mut fc.weight.value));
                    out.push((fc.bias.name.clone(), &mut fc.bias.value));
                }
                Unit::Residual(r) => {
                    out.extend(conv_persistent_mut(&mut r.conv1));
                    out.extend(bn_persistent_mut(&mut r.bn1));
                    out.extend(conv_persistent_mut(&mut r.conv2));
                    out.extend(bn_persistent_mut(&mut r.bn2));
                    if let Some((conv, bn)) = &mut r.projection {
                        out.extend(conv_persistent_mut(conv));
                        out.extend(bn_persistent_mut(bn));
                    }
                }
                Unit::Relu(_) | Unit::MaxPool(_) | Unit::Flatten(_) | Unit::GlobalAvgPool(_) => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> Network<f64> {
        let w = Parameter::new(
            "conv.weight",
            Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap(),
        );
        let b = Parameter::new("conv.bias", Tensor::zeros(&[1]));
        Network::new(vec![
            Unit::Conv(Conv2d::new(w, Some(b), 1, 0).unwrap()),
            Unit::Relu(Relu::new()),
            Unit::Flatten(Flatten::new()),
        ])
    }

    #[test]
    fn forward_chains_units() {
        let mut net = tiny_net();
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.5, -0.5]).unwrap();
        let y = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn backward_runs_in_reverse_and_accumulates() {
        let mut net = tiny_net();
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.5, -0.5]).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let g = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let gx = net.backward(&g).unwrap();
        // Second element was clipped by relu, so no gradient flows there.
        assert_eq!(gx.data(), &[2.0, 0.0]);
        let params = net.params_mut();
        assert_eq!(params[0].grad.data(), &[1.5]); // dW = x at active site
        assert_eq!(params[1].grad.data(), &[1.0]); // db
    }

    #[test]
    fn walks_are_in_network_order() {
        let mut net = Network::<f64>::new(vec![
            Unit::BatchNorm(BatchNorm2d::new("bn1", 2)),
            Unit::BatchNorm(BatchNorm2d::new("bn2", 3)),
        ]);
        let names: Vec<String> = net.persistent().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(
            names,
            [
                "bn1.gamma",
                "bn1.beta",
                "bn1.running_mean",
                "bn1.running_var",
                "bn2.gamma",
                "bn2.beta",
                "bn2.running_mean",
                "bn2.running_var",
            ]
        );
        let learnable: Vec<String> = net
            .params_mut()
            .iter()
            .map(|p| p.name.clone())
            .collect();
        assert_eq!(learnable, ["bn1.gamma", "bn1.beta", "bn2.gamma", "bn2.beta"]);
        assert_eq!(net.param_count(), 2 * 2 + 2 * 3);
    }
}
