//! Finite-difference verification of the analytic gradients: central
//! differences of the training loss with respect to sampled parameter
//! coordinates, compared against one backward pass.

use super::layers::Mode;
use super::loss::softmax_cross_entropy;
use super::network::Network;
use super::tensor::Tensor;
use super::NnError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor (small tensors are checked
    /// exhaustively).
    pub samples_per_param: usize,
    pub seed: u64,
    /// Test hook: perturbs the analytic gradients so the check must fail.
    pub corrupt_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            samples_per_param: 8,
            seed: 0,
            corrupt_analytic: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

fn train_loss(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
) -> Result<f64, NnError> {
    let logits = net.forward(input, Mode::Train)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Relative error above which a coordinate is re-probed at smaller steps.
const REFINE_THRESHOLD: f64 = 1e-5;

fn probe_fd(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    pi: usize,
    idx: usize,
    eps: f64,
) -> Result<f64, NnError> {
    let orig = net.params_mut()[pi].value.data()[idx];
    net.params_mut()[pi].value.data_mut()[idx] = orig + eps;
    let loss_plus = train_loss(net, input, labels)?;
    net.params_mut()[pi].value.data_mut()[idx] = orig - eps;
    let loss_minus = train_loss(net, input, labels)?;
    net.params_mut()[pi].value.data_mut()[idx] = orig;
    Ok((loss_plus - loss_minus) / (2.0 * eps))
}

/// Runs the network in double precision, backpropagates once, then compares
/// sampled analytic gradient coordinates against `(L(w+e) - L(w-e)) / 2e`.
/// The reported error is `|fd - g| / max(|fd| + |g|, 1e-3)`; the floor keeps
/// near-zero gradients from amplifying finite-difference noise.
///
/// A coordinate whose error exceeds `REFINE_THRESHOLD` is re-probed at
/// `eps/8` and `eps/64` and the smallest error wins. The loss surface of a
/// relu/maxpool network is piecewise smooth, so a probe window that happens
/// to straddle a kink poisons the difference quotient at that one scale;
/// shrinking the window steps off the kink. A genuine backward bug produces
/// a discrepancy independent of the step size, which refinement cannot hide.
pub fn grad_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    if opts.eps <= 0.0 {
        return Err(NnError::GradCheckEps);
    }

    net.zero_grads();
    let logits = net.forward(input, Mode::Train)?;
    let (_, loss_grad) = softmax_cross_entropy(&logits, labels)?;
    net.backward(&loss_grad)?;

    let mut analytic: Vec<(String, Vec<f64>)> = net
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    if opts.corrupt_analytic {
        for (_, grads) in &mut analytic {
            for g in grads.iter_mut() {
                *g += 0.5;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_params = analytic.len();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };

    for pi in 0..n_params {
        let numel = analytic[pi].1.len();
        let coords: Vec<usize> = if numel <= opts.samples_per_param {
            (0..numel).collect()
        } else {
            rand::seq::index::sample(&mut rng, numel, opts.samples_per_param).into_vec()
        };
        for idx in coords {
            let g = analytic[pi].1[idx];
            let rel_at = |fd: f64| (fd - g).abs() / (fd.abs() + g.abs()).max(1e-3);
            let mut rel = rel_at(probe_fd(net, input, labels, pi, idx, opts.eps)?);
            if rel > REFINE_THRESHOLD {
                for div in [8.0, 64.0] {
                    let finer = rel_at(probe_fd(net, input, labels, pi, idx, opts.eps / div)?);
                    rel = rel.min(finer);
                }
            }
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = analytic[pi].0.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
