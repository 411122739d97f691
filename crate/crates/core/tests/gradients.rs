use gel_core::autodiff::{check_layer, GradCheckConfig, GradCheckReport, Layer, Network, ParamStore};
use gel_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_single(layer: Layer, input_shape: &[usize], batch: usize, seed: u64) -> GradCheckReport {
    check_layer(layer, input_shape, batch, seed, &GradCheckConfig::default()).unwrap()
}

fn assert_passes(name: &str, report: &GradCheckReport, tol: f64) {
    let worst = report.worst().unwrap();
    assert!(report.checked() > 0, "{name}: nothing checked");
    assert!(
        report.max_rel_err() < tol,
        "{name}: worst group {} rel err {:.3e}",
        worst.name,
        worst.max_rel_err
    );
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let r = check_single(Layer::conv2d("c", 1, 3, 3, 1, 1), &[1, 6, 6], 2, 1);
    assert_passes("conv2d", &r, 1e-5);
    let r = check_single(Layer::conv2d("c", 2, 3, 4, 2, 1), &[2, 6, 6], 2, 2);
    assert_passes("conv2d strided", &r, 1e-5);
}

#[test]
fn deconv2d_gradients_match_finite_differences() {
    let r = check_single(Layer::deconv2d("d", 2, 3, 4, 2, 1), &[2, 3, 3], 2, 3);
    assert_passes("deconv2d", &r, 1e-5);
}

#[test]
fn conv1d_maxpool_linear_gradients_match_finite_differences() {
    assert_passes("conv1d", &check_single(Layer::conv1d("c", 3, 4, 3), &[3, 9], 2, 4), 1e-5);
    assert_passes("maxpool1d", &check_single(Layer::maxpool1d("p", 3, 3), &[2, 9], 2, 5), 1e-5);
    assert_passes("linear", &check_single(Layer::linear("l", 5, 4), &[5], 3, 6), 1e-6);
}

#[test]
fn activations_match_finite_differences() {
    assert_passes("relu", &check_single(Layer::Relu, &[12], 2, 7), 1e-5);
    assert_passes("sigmoid", &check_single(Layer::Sigmoid, &[12], 2, 8), 1e-5);
}

#[test]
fn relu_values() {
    let net = Network::new("r", &[4], vec![Layer::Relu]).unwrap();
    let p = ParamStore::<f32>::new();
    let y = net
        .forward(&p, &Tensor::from_vec(&[1, 4], vec![-2.0, -0.5, 0.0, 3.0]))
        .unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0, 3.0]);
}

#[test]
fn conv2d_output_size_arithmetic() {
    let net = Network::new("c", &[1, 64, 64], vec![Layer::conv2d("c", 1, 32, 4, 2, 1)]).unwrap();
    assert_eq!(net.output_shape(), &[32, 32, 32]);
    let net = Network::new("d", &[64, 4, 4], vec![Layer::deconv2d("d", 64, 64, 4, 2, 1)]).unwrap();
    assert_eq!(net.output_shape(), &[64, 8, 8]);
    let net = Network::new("p", &[1, 40], vec![Layer::maxpool1d("p", 3, 3)]).unwrap();
    assert_eq!(net.output_shape(), &[1, 13]);
}

#[test]
fn one_by_one_identity_kernel_is_identity() {
    let net = Network::new("id", &[1, 5, 5], vec![Layer::conv2d("c", 1, 1, 1, 1, 0)]).unwrap();
    let mut p = ParamStore::<f32>::new();
    net.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    p.get_mut("c.weight").unwrap().data_mut()[0] = 1.0;
    let x = Tensor::from_vec(&[1, 1, 5, 5], (0..25).map(|i| i as f32 / 7.0).collect());
    assert_eq!(net.forward(&p, &x).unwrap(), x);
}

#[test]
fn conv2d_matches_direct_definition() {
    let (ci, co, h, k, s, pad) = (2, 3, 7, 3, 2, 1);
    let net = Network::new("c", &[ci, h, h], vec![Layer::conv2d("c", ci, co, k, s, pad)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParamStore::<f64>::new();
    net.init_params(&mut p, &mut rng).unwrap();
    p.get_mut("c.bias").unwrap().data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
    let x: Vec<f64> = (0..ci * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = net.forward(&p, &Tensor::from_vec(&[1, ci, h, h], x.clone())).unwrap();
    let w = p.expect("c.weight").data();
    let b = p.expect("c.bias").data();
    let oh = (h + 2 * pad - k) / s + 1;
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..oh {
                let mut acc = b[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - pad as isize;
                            let ix = (ox * s + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < h {
                                acc += w[((o * ci + c) * k + ky) * k + kx] * x[(c * h + iy as usize) * h + ix as usize];
                            }
                        }
                    }
                }
                let got = y.data()[(o * oh + oy) * oh + ox];
                assert!((got - acc).abs() < 1e-12, "({o},{oy},{ox}): {got} vs {acc}");
            }
        }
    }
}

/// Transposed convolution forward equals the input-gradient of the
/// correlation with the same weights.
#[test]
fn deconv_is_adjoint_of_conv() {
    let (c_small, c_big, k, s, p) = (3, 2, 4, 2, 1);
    let conv = Network::new("a", &[c_big, 8, 8], vec![Layer::conv2d("k", c_big, c_small, k, s, p)]).unwrap();
    let deconv = Network::new("b", &[c_small, 4, 4], vec![Layer::deconv2d("k", c_small, c_big, k, s, p)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamStore::<f64>::new();
    conv.init_params(&mut params, &mut rng).unwrap();
    // conv weight [c_small, c_big, k, k] is exactly the deconv layout [in, out, k, k]
    params.get_mut("k.bias").unwrap().fill(0.0);
    let mut dparams = ParamStore::<f64>::new();
    dparams.insert("k.weight", params.expect("k.weight").clone()).unwrap();
    dparams.insert("k.bias", Tensor::zeros(&[c_big])).unwrap();

    let g: Vec<f64> = (0..c_small * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gy = Tensor::from_vec(&[1, c_small, 4, 4], g.clone());
    let x = Tensor::from_vec(&[1, c_big, 8, 8], vec![0.0; c_big * 64]);
    let tape = conv.forward_train(&params, &x).unwrap();
    let mut grads = params.zero_grads();
    let via_conv = conv.backward(&params, &tape, gy.clone(), &mut grads, true).unwrap();
    let via_deconv = deconv.forward(&dparams, &gy).unwrap();
    for (a, b) in via_conv.data().iter().zip(via_deconv.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn maxpool_ties_route_to_lowest_index() {
    let net = Network::new("p", &[1, 3], vec![Layer::maxpool1d("p", 3, 3)]).unwrap();
    let p = ParamStore::<f64>::new();
    let tape = net.forward_train(&p, &Tensor::from_vec(&[1, 1, 3], vec![2.0, 2.0, 1.0])).unwrap();
    let mut grads = p.zero_grads();
    let gx = net
        .backward(&p, &tape, Tensor::from_vec(&[1, 1, 1], vec![1.0]), &mut grads, true)
        .unwrap();
    assert_eq!(gx.data(), &[1.0, 0.0, 0.0]);
}
