mod common;

use odlab::nn::{self, init_network, LayerSpec, OptState};
use odlab::{Error, Exec, Tensor};

use LayerSpec::*;

#[test]
fn init_is_a_pure_function_of_specs_and_seed() {
    let specs = [Dense { input: 4, output: 3 }];
    let a = init_network(&[4], &specs, 7).unwrap();
    let b = init_network(&[4], &specs, 7).unwrap();
    let bits = |n: &nn::Network| -> Vec<u64> {
        n.params().flat_map(|p| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&init_network(&[4], &specs, 8).unwrap()));
}

#[test]
fn dense_parameter_shapes() {
    let net = init_network(&[4], &[Dense { input: 4, output: 3 }], 7).unwrap();
    let params: Vec<&Tensor> = net.params().collect();
    assert_eq!(params[0].shape(), &[3, 4]);
    assert_eq!(params[1].shape(), &[3]);
    assert!(params[1].data().iter().all(|&v| v == 0.0));
}

#[test]
fn init_scale_matches_inverse_sqrt_fan_in() {
    let net = init_network(&[10_000], &[Dense { input: 10_000, output: 1 }], 1).unwrap();
    let w = net.params().next().unwrap().data();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    assert!((std - 0.01).abs() < 0.001, "std {std}");
    assert!(mean.abs() < 4.0 * 0.01 / n.sqrt(), "mean {mean}");
}

#[test]
fn incompatible_layers_are_named() {
    let err = init_network(
        &[1, 4, 4],
        &[
            Conv3x3 { in_channels: 1, out_channels: 4 },
            Conv3x3 { in_channels: 3, out_channels: 2 },
        ],
        0,
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("conv3x3(1,4)") && msg.contains("conv3x3(3,2)"), "{msg}");
    assert!(init_network(&[1, 4, 4], &[Dense { input: 16, output: 2 }], 0).is_err());
    assert!(init_network(&[3], &[Relu], 0).is_ok());
    assert!(init_network(&[1, 2, 2], &[Relu], 0).is_err());
}

#[test]
fn zero_weights_give_zero_logits() {
    let mut net = init_network(&[2], &[Dense { input: 2, output: 3 }], 3).unwrap();
    net.params_mut().for_each(|p| p.data_mut().fill(0.0));
    let x = Tensor::new(vec![2, 2], vec![1.0, -4.0, 7.0, 0.5]).unwrap();
    let (logits, _) = nn::forward(&net, &x).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_center_counts_full_neighbourhood() {
    let mut net = init_network(
        &[1, 3, 3],
        &[Conv3x3 { in_channels: 1, out_channels: 1 }, Flatten],
        0,
    )
    .unwrap();
    {
        let mut p = net.params_mut();
        p.next().unwrap().data_mut().fill(1.0);
        p.next().unwrap().data_mut().fill(0.0);
    }
    let (logits, trace) = nn::forward(&net, &Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    assert_eq!(logits.data()[4], 9.0);
    let map = trace.layer_output(0, 0).unwrap();
    assert_eq!(map.shape(), &[1, 3, 3]);
}

#[test]
fn forward_rejects_wrong_input_shape() {
    let net = init_network(&[3], &[Dense { input: 3, output: 2 }], 0).unwrap();
    match nn::forward(&net, &Tensor::zeros(&[2, 4])).unwrap_err() {
        Error::Shape { expected, actual, .. } => {
            assert_eq!(expected, vec![2, 3]);
            assert_eq!(actual, vec![2, 4]);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn non_finite_activation_names_layer() {
    let mut net = init_network(
        &[2],
        &[Dense { input: 2, output: 2 }, Relu, Dense { input: 2, output: 2 }],
        0,
    )
    .unwrap();
    net.params_mut().nth(2).unwrap().data_mut()[0] = f64::INFINITY;
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    // Relu may zero the inputs, so force a positive hidden unit.
    net.params_mut().nth(1).unwrap().data_mut().fill(5.0);
    let msg = nn::forward(&net, &x).unwrap_err().to_string();
    assert!(msg.contains("layer 2 (dense(2,2))"), "{msg}");
}

#[test]
fn zero_upstream_gradient_gives_zero_grads() {
    let net = init_network(
        &[1, 4, 4],
        &[
            Conv3x3 { in_channels: 1, out_channels: 2 },
            Relu,
            Maxpool2x2,
            Flatten,
            Dense { input: 8, output: 3 },
        ],
        2,
    )
    .unwrap();
    let mut rng = common::rng(0);
    let x = common::uniform_tensor(&mut rng, &[3, 1, 4, 4], -1.0, 1.0);
    let (_, trace) = nn::forward(&net, &x).unwrap();
    let grads = nn::backward(&net, &trace, &Tensor::zeros(&[3, 3])).unwrap();
    assert!(grads.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn single_dense_gradient_is_outer_product() {
    let net = init_network(&[3], &[Dense { input: 3, output: 2 }], 4).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0]).unwrap();
    let g = Tensor::new(vec![1, 2], vec![1.5, -0.25]).unwrap();
    let (_, trace) = nn::forward(&net, &x).unwrap();
    let grads = nn::backward(&net, &trace, &g).unwrap();
    let expected: Vec<f64> = [1.5, -0.25]
        .iter()
        .flat_map(|gi| [0.5, -2.0, 3.0].map(|xi| gi * xi))
        .collect();
    assert_eq!(grads.grads[0].data(), &expected[..]);
    assert_eq!(grads.grads[1].data(), &[1.5, -0.25]);
}

#[test]
fn two_dense_relu_net_matches_finite_differences() {
    for seed in 0..5 {
        let net = init_network(
            &[4],
            &[Dense { input: 4, output: 5 }, Relu, Dense { input: 5, output: 3 }],
            seed,
        )
        .unwrap();
        let mut rng = common::rng(100 + seed);
        let x = common::uniform_tensor(&mut rng, &[2, 4], -1.0, 1.0);
        let w = common::uniform_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let err = common::network_gradcheck(&net, &x, &w, 1e-4);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn backward_rejects_foreign_trace() {
    let a = init_network(&[3], &[Dense { input: 3, output: 2 }], 0).unwrap();
    let b = init_network(&[3], &[Dense { input: 3, output: 2 }, Relu], 0).unwrap();
    let (_, trace) = nn::forward(&a, &Tensor::zeros(&[1, 3])).unwrap();
    assert!(nn::backward(&b, &trace, &Tensor::zeros(&[1, 2])).is_err());
    assert!(nn::backward(&a, &trace, &Tensor::zeros(&[2, 2])).is_err());
}

#[test]
fn forward_never_violates_declared_shapes() {
    let net = init_network(
        &[2, 5, 7],
        &[
            Conv3x3 { in_channels: 2, out_channels: 3 },
            Relu,
            Maxpool2x2,
            Flatten,
            Dense { input: 18, output: 6 },
            Bottleneck2d { input: 6 },
            Dense { input: 2, output: 4 },
        ],
        9,
    )
    .unwrap();
    let mut rng = common::rng(1);
    let x = common::uniform_tensor(&mut rng, &[3, 2, 5, 7], -1.0, 1.0);
    let (logits, trace) = nn::forward(&net, &x).unwrap();
    assert_eq!(logits.shape(), &[3, 4]);
    for (l, layer) in net.layers().iter().enumerate() {
        for s in 0..3 {
            assert_eq!(trace.layer_output(l, s).unwrap().shape(), &layer.output_shape[..]);
        }
    }
    assert_eq!(net.bottleneck_index(), Some(5));
    assert_eq!(net.last_conv_index(), Some(0));
}

#[test]
fn parallel_and_sequential_passes_are_bitwise_equal() {
    let mut net = init_network(
        &[1, 6, 6],
        &[
            Conv3x3 { in_channels: 1, out_channels: 4 },
            Relu,
            Maxpool2x2,
            Flatten,
            Dense { input: 36, output: 5 },
        ],
        3,
    )
    .unwrap();
    let mut rng = common::rng(2);
    let x = common::uniform_tensor(&mut rng, &[37, 1, 6, 6], -1.0, 1.0);
    let g = common::uniform_tensor(&mut rng, &[37, 5], -1.0, 1.0);
    let mut results = Vec::new();
    for exec in [Exec::Sequential, Exec::Parallel] {
        net.set_exec(exec);
        let (logits, trace) = nn::forward(&net, &x).unwrap();
        results.push((logits, nn::backward(&net, &trace, &g).unwrap()));
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn sgd_reduces_a_simple_loss() {
    let mut net = init_network(&[3], &[Dense { input: 3, output: 2 }], 0).unwrap();
    let mut opt = OptState::new(&net, 0.1, 0.9, 0.0).unwrap();
    let x = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
    let labels = [0, 1];
    let loss = |net: &nn::Network| {
        odlab::regularizers::softmax_ce(&net.predict(&x).unwrap(), &labels).unwrap().0
    };
    let before = loss(&net);
    for _ in 0..20 {
        let (logits, trace) = nn::forward(&net, &x).unwrap();
        let (_, g) = odlab::regularizers::softmax_ce(&logits, &labels).unwrap();
        let grads = nn::backward(&net, &trace, &g).unwrap();
        nn::sgd_step(&mut net, &grads, &mut opt).unwrap();
    }
    assert!(loss(&net) < 0.5 * before);
}

#[test]
fn model_dump_round_trips() {
    let specs = [Conv3x3 { in_channels: 1, out_channels: 2 }, Flatten, Dense { input: 8, output: 3 }];
    let a = init_network(&[1, 2, 2], &specs, 1).unwrap();
    let mut bytes = Vec::new();
    a.write_params(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"ODLB");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    let mut b = init_network(&[1, 2, 2], &specs, 2).unwrap();
    b.read_params(&bytes[..]).unwrap();
    assert!(a.params().zip(b.params()).all(|(x, y)| x == y));
    let mut other = init_network(&[1, 2, 2], &[Flatten, Dense { input: 4, output: 3 }], 0).unwrap();
    assert!(other.read_params(&bytes[..]).is_err());
}
