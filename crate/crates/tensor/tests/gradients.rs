use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robomask_tensor::gradcheck::check_gradients;
use robomask_tensor::{attention, checkpoint, concat, cosine, Graph, ParamStore, Tensor};

const H: f64 = 1e-5;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn probe(g: &Graph, v: &robomask_tensor::Var, seed: u64) -> robomask_tensor::Var {
    let w = g.constant(rand_t(v.shape(), seed ^ 0xabcd));
    v.mul(&w).unwrap().sum()
}

#[test]
fn matmul_gradient() {
    let r = check_gradients(&[rand_t(&[3, 4], 1), rand_t(&[4, 2], 2)], H, |g, x| {
        Ok(probe(g, &x[0].matmul(&x[1])?, 3))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn softmax_gradient() {
    let r = check_gradients(&[rand_t(&[5], 4)], H, |g, x| {
        Ok(probe(g, &x[0].softmax(0)?, 5))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
    let r = check_gradients(&[rand_t(&[3, 4], 6)], H, |g, x| {
        Ok(probe(g, &x[0].softmax(0)?, 7))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn sigmoid_gradient_is_y_one_minus_y() {
    let x = rand_t(&[6], 8);
    let g = Graph::new();
    let v = g.leaf(x.clone());
    let y = v.sigmoid();
    let grads = g.backward(&y.sum()).unwrap();
    for (gv, yv) in grads.get(&v).unwrap().data().iter().zip(y.value().data()) {
        assert!((gv - yv * (1.0 - yv)).abs() < 1e-15);
    }
    let r = check_gradients(&[x], H, |g, x| Ok(probe(g, &x[0].sigmoid(), 9))).unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn depthwise_conv_gradient() {
    let r = check_gradients(
        &[rand_t(&[2, 5, 5], 10), rand_t(&[2, 3, 3], 11)],
        H,
        |_, x| Ok(x[0].depthwise_conv2d(&x[1])?.sum()),
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn conv2d_and_transposed_gradients() {
    let r = check_gradients(
        &[rand_t(&[2, 4, 4], 12), rand_t(&[3, 2, 3, 3], 13)],
        H,
        |g, x| Ok(probe(g, &x[0].conv2d(&x[1])?, 14)),
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
    let r = check_gradients(
        &[rand_t(&[2, 2, 3], 15), rand_t(&[2, 3, 2, 2], 16)],
        H,
        |g, x| Ok(probe(g, &x[0].conv_transpose2d(&x[1])?, 17)),
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn attention_gradient() {
    let r = check_gradients(
        &[
            rand_t(&[3, 4], 18),
            rand_t(&[3, 4], 19),
            rand_t(&[3, 4], 20),
        ],
        H,
        |g, x| Ok(probe(g, &attention(&x[0], &x[1], &x[2])?, 21)),
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn pooling_upsampling_layernorm_gradients() {
    let r = check_gradients(&[rand_t(&[2, 4, 4], 22)], H, |g, x| {
        Ok(probe(g, &x[0].avg_pool2d(2)?, 23))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
    let r = check_gradients(&[rand_t(&[2, 3, 2], 24)], H, |g, x| {
        Ok(probe(g, &x[0].upsample_bilinear(3)?, 25))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
    let r = check_gradients(&[rand_t(&[3, 5], 26)], H, |g, x| {
        Ok(probe(g, &x[0].layer_norm(1e-5)?, 27))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn elementwise_and_shape_gradients() {
    let r = check_gradients(&[rand_t(&[2, 3], 28), rand_t(&[3], 29)], H, |g, x| {
        let a = x[0].mul(&x[1])?.add(&x[1])?.sub(&x[0].tanh())?;
        let b = a.div(&x[1].square().add_scalar(1.0))?;
        let c = concat(&[b.clone(), x[0].exp()], 0)?
            .permute(&[1, 0])?
            .narrow(1, 1, 3)?;
        Ok(probe(g, &c.sum_axis(0)?, 30))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn cosine_gradient() {
    let r = check_gradients(&[rand_t(&[6], 31), rand_t(&[6], 32)], H, |_, x| {
        cosine(&x[0], &x[1])
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn backward_trivial_identities() {
    let x = rand_t(&[7], 33);
    let g = Graph::new();
    let v = g.leaf(x.clone());
    let grads = g.backward(&v.sum()).unwrap();
    assert_eq!(grads.get(&v).unwrap().data(), &[1.0; 7]);
    let g = Graph::new();
    let v = g.leaf(x.clone());
    let grads = g.backward(&v.square().sum()).unwrap();
    for (gv, xv) in grads.get(&v).unwrap().data().iter().zip(x.data()) {
        assert_eq!(*gv, 2.0 * xv);
    }
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.rsg");
    let mut p = ParamStore::new();
    p.insert("enc.w", rand_t(&[3, 2], 34));
    p.insert("alpha", Tensor::scalar(0.25));
    checkpoint::save(&p, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), p);
    std::fs::write(&path, b"XXXX").unwrap();
    assert!(checkpoint::load(&path).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(v in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
        let g = Graph::new();
        let n = v.len();
        let s = g.constant(Tensor::new([n], v).unwrap()).softmax(0).unwrap();
        let total: f64 = s.value().data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(s.value().data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn delta_kernel_identity_bitwise(c in 1usize..3, h in 1usize..7, w in 1usize..7, k in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>()) {
        let g = Graph::new();
        let x = g.constant(rand_t(&[c, h, w], seed));
        let mut kern = Tensor::zeros([c, k, k]);
        for ch in 0..c {
            kern.data_mut()[(ch * k + k / 2) * k + k / 2] = 1.0;
        }
        let y = x.depthwise_conv2d(&g.constant(kern)).unwrap();
        prop_assert_eq!(y.value(), x.value());
    }

    #[test]
    fn random_ops_pass_gradcheck(seed in any::<u64>()) {
        let r = check_gradients(&[rand_t(&[2, 3], seed), rand_t(&[3, 2], seed.wrapping_add(1))], H, |g, x| {
            let y = x[0].matmul(&x[1])?.softmax(1)?.mul(&x[0].narrow(1, 0, 2)?)?;
            Ok(probe(g, &y.sigmoid(), seed))
        }).unwrap();
        prop_assert!(r.max_rel_err < 1e-4, "{:?}", r);
    }
}
