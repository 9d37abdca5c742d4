//! Numerical checks of the network substrate against independent references.

use messrl_core::nn::{polyak_update, Activation, Dense, Mlp};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const H: f64 = 1e-5;

/// Loss `L = sum(c * net(x))` for a fixed upstream weight matrix `c`.
fn loss(net: &Mlp, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (net.forward_batch(x.view()).unwrap() * c).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between analytic and central-difference gradients,
/// over every parameter and every input coordinate.
fn worst_gradient_error(net: &mut Mlp, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let trace = net.forward_trace(x.view()).unwrap();
    let (grads, dx) = net.backward(&trace, c.view()).unwrap();
    let mut worst = 0.0_f64;
    for li in 0..net.layers().len() {
        let (rows, cols) = net.layers()[li].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = net.layers()[li].weights[[i, j]];
                net.layers_mut()[li].weights[[i, j]] = orig + H;
                let up = loss(net, x, c);
                net.layers_mut()[li].weights[[i, j]] = orig - H;
                let down = loss(net, x, c);
                net.layers_mut()[li].weights[[i, j]] = orig;
                worst = worst.max(rel_err(grads.layers[li].weights[[i, j]], (up - down) / (2.0 * H)));
            }
        }
        for j in 0..cols {
            let orig = net.layers()[li].bias[j];
            net.layers_mut()[li].bias[j] = orig + H;
            let up = loss(net, x, c);
            net.layers_mut()[li].bias[j] = orig - H;
            let down = loss(net, x, c);
            net.layers_mut()[li].bias[j] = orig;
            worst = worst.max(rel_err(grads.layers[li].bias[j], (up - down) / (2.0 * H)));
        }
    }
    for r in 0..x.nrows() {
        for k in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, k]] += H;
            let mut xm = x.clone();
            xm[[r, k]] -= H;
            let numeric = (loss(net, &xp, c) - loss(net, &xm, c)) / (2.0 * H);
            worst = worst.max(rel_err(dx[[r, k]], numeric));
        }
    }
    worst
}

#[test]
fn finite_differences_match_backprop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let output_kinds = [Activation::Identity, Activation::Tanh];
    for trial in 0..8 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=9));
        }
        sizes.push(rng.random_range(1..=4));
        let mut net = Mlp::new(&sizes, Activation::Relu, output_kinds[trial % 2], &mut rng);
        let batch = rng.random_range(1..=5);
        let x = Array2::from_shape_simple_fn((batch, sizes[0]), || rng.random_range(-2.0..2.0));
        let c = Array2::from_shape_simple_fn((batch, *sizes.last().unwrap()), || rng.random_range(-1.0..1.0));
        let worst = worst_gradient_error(&mut net, &x, &c);
        assert!(worst < 1e-4, "sizes {sizes:?}: relative error {worst:e}");
    }
}

#[derive(Deserialize)]
struct GoldenLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Deserialize)]
struct GoldenNet {
    name: String,
    hidden: Activation,
    output: Activation,
    layers: Vec<GoldenLayer>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct Golden {
    networks: Vec<GoldenNet>,
}

#[test]
fn forward_matches_golden_file() {
    let text = include_str!("data/mlp_golden.json");
    let golden: Golden = serde_json::from_str(text).unwrap();
    assert_eq!(golden.networks.len(), 2);
    for g in golden.networks {
        let layers = g
            .layers
            .iter()
            .map(|l| Dense {
                weights: Array2::from_shape_fn((l.weights.len(), l.weights[0].len()), |(i, j)| l.weights[i][j]),
                bias: Array1::from(l.bias.clone()),
            })
            .collect();
        let net = Mlp::from_layers(layers, g.hidden, g.output).unwrap();
        for (x, want) in g.inputs.iter().zip(&g.outputs) {
            let y = net.forward(Array1::from(x.clone()).view()).unwrap();
            assert_eq!(y.len(), want.len());
            for (a, b) in y.iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", g.name);
            }
        }
    }
}

fn distance(a: &Mlp, b: &Mlp) -> f64 {
    a.layers()
        .iter()
        .zip(b.layers())
        .flat_map(|(x, y)| {
            x.weights
                .iter()
                .zip(y.weights.iter())
                .chain(x.bias.iter().zip(y.bias.iter()))
                .map(|(p, q)| (p - q).powi(2))
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn polyak_contracts_towards_online() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for tau in [0.005, 0.1, 0.5, 0.9] {
        let online = Mlp::new(&[6, 16, 16, 3], Activation::Relu, Activation::Tanh, &mut rng);
        let mut target = Mlp::new(&[6, 16, 16, 3], Activation::Relu, Activation::Tanh, &mut rng);
        for _ in 0..50 {
            let before = distance(&target, &online);
            polyak_update(&mut target, &online, tau).unwrap();
            let after = distance(&target, &online);
            assert!((after - (1.0 - tau) * before).abs() <= 1e-12 * before.max(1.0), "tau {tau}");
        }
    }
}
