//! Central finite-difference checks of the hand-written backpropagation.

use rand::Rng;

use crate::mddr::{actor_forward, loss_and_grads, Mlp, Sample};

const STEP: f64 = 1e-6;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `loss` with respect to `params[range]`.
fn fd_gradient(
    params: &mut [f64],
    range: std::ops::Range<usize>,
    loss: &mut impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    range
        .map(|i| {
            let orig = params[i];
            let h = STEP * orig.abs().max(1.0);
            params[i] = orig + h;
            let up = loss(params);
            params[i] = orig - h;
            let down = loss(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smooth test loss on a network output: `c . y + |y|^2 / 2`.
fn probe_loss(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| b * a + 0.5 * a * a).sum()
}

/// Per-layer relative error between backprop and finite differences for the
/// probe loss at input `x`, followed by the error of the input gradient.
pub fn mlp_layer_errors(net: &Mlp, x: &[f64], c: &[f64]) -> Vec<f64> {
    let trace = net.forward_trace(x);
    let grad_out: Vec<f64> = trace.output().iter().zip(c).map(|(y, b)| b + y).collect();
    let mut grads = vec![0.0; net.params().len()];
    let grad_in = net.backward(&trace, &grad_out, &mut grads);

    let sizes = net.sizes().to_vec();
    let mut errors = Vec::with_capacity(net.num_layers() + 1);
    for l in 0..net.num_layers() {
        let range = net.layer_range(l);
        let mut params = net.params().to_vec();
        let fd = fd_gradient(&mut params, range.clone(), &mut |p| {
            let probe = Mlp::from_parts(sizes.clone(), p.to_vec()).expect("same shape");
            probe_loss(&probe.forward(x), c)
        });
        errors.push(relative_error(&grads[range], &fd));
    }
    let mut xs = x.to_vec();
    let fd_in = fd_gradient(&mut xs, 0..x.len(), &mut |xi| {
        probe_loss(&net.forward(xi), c)
    });
    errors.push(relative_error(&grad_in, &fd_in));
    errors
}

/// Relative error of the clipped-surrogate actor gradient and the critic
/// gradient against finite differences.
pub fn ppo_gradient_errors(
    actor: &Mlp,
    critic: &Mlp,
    batch: &[Sample],
    clip: f64,
    entropy_coef: f64,
) -> (f64, f64) {
    let (_, ga, gc) = loss_and_grads(actor, critic, batch, clip, entropy_coef);
    let a_sizes = actor.sizes().to_vec();
    let c_sizes = critic.sizes().to_vec();
    let mut ap = actor.params().to_vec();
    let fd_a = fd_gradient(&mut ap, 0..actor.params().len(), &mut |p| {
        let a = Mlp::from_parts(a_sizes.clone(), p.to_vec()).expect("same shape");
        loss_and_grads(&a, critic, batch, clip, entropy_coef)
            .0
            .actor
    });
    let mut cp = critic.params().to_vec();
    let fd_c = fd_gradient(&mut cp, 0..critic.params().len(), &mut |p| {
        let c = Mlp::from_parts(c_sizes.clone(), p.to_vec()).expect("same shape");
        loss_and_grads(actor, &c, batch, clip, entropy_coef)
            .0
            .critic
    });
    (relative_error(&ga, &fd_a), relative_error(&gc, &fd_c))
}

/// A random network with 1 to 3 layers and small widths, plus an input and
/// a probe vector.
pub fn random_fixture(rng: &mut impl Rng) -> (Mlp, Vec<f64>, Vec<f64>) {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=8));
    }
    let mut net = Mlp::new(&sizes, 1.0, rng);
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let x = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c = (0..*sizes.last().unwrap())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (net, x, c)
}

/// A small actor/critic pair with a batch whose probability ratios sit
/// strictly inside the clip band, so the surrogate is smooth there.
pub fn random_ppo_fixture(rng: &mut impl Rng) -> (Mlp, Mlp, Vec<Sample>) {
    let m = rng.random_range(1..=4);
    let hidden = rng.random_range(2..=8);
    let mut actor = Mlp::new(&[m, hidden, 2 * m], 1.0, rng);
    for b in &mut actor.bias_mut(1)[m..] {
        *b = rng.random_range(-1.0..0.0);
    }
    let critic = Mlp::new(&[m, hidden, 1], 1.0, rng);
    let batch = (0..6)
        .map(|_| {
            let observation: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (action, log_prob) = actor_forward(&actor, &observation, rng);
            Sample {
                observation,
                action,
                old_log_prob: log_prob + rng.random_range(-0.05..0.05),
                advantage: rng.random_range(-2.0..2.0),
                target: rng.random_range(-3.0..3.0),
            }
        })
        .collect();
    (actor, critic, batch)
}
