use candle_core::{DType, Device, Tensor};
use medfuse_core::imaging::GrayImage;
use medfuse_core::network::{gradient_xy, sobel_magnitude, AutoEncoder, GradientOperator, ModelConfig};
use proptest::prelude::*;

fn tiny_model(seed: u64) -> AutoEncoder {
    let mut cfg = ModelConfig::compact();
    cfg.encoder.latent_channels = 8;
    AutoEncoder::new(cfg, seed, DType::F32, &Device::Cpu).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encode_keeps_size_and_decode_stays_in_range(
        h in 8usize..20,
        w in 8usize..20,
        phase in 0.0f32..6.0,
    ) {
        let (h, w) = (2 * h, 2 * w);
        let model = tiny_model(3);
        let img = GrayImage::from_fn(h, w, |y, x| 0.5 + 0.5 * ((x as f32 * 0.3 + phase).sin() * (y as f32 * 0.2).cos())).unwrap();
        let z = model.encode(&img).unwrap();
        prop_assert_eq!((z.batch(), z.channels(), z.height(), z.width()), (1, 8, h, w));
        let out = model.decode(&z).unwrap();
        prop_assert_eq!(out.dims(), (h, w));
        prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = model.encode(&img).unwrap();
        prop_assert_eq!(again.data(), z.data());
    }

    #[test]
    fn gradients_vanish_on_constants(v in -3.0f64..3.0, h in 3usize..9, w in 3usize..9) {
        let x = Tensor::full(v, (1, 2, h, w), &Device::Cpu).unwrap();
        for op in [GradientOperator::Sobel, GradientOperator::ForwardDifference] {
            let (gx, gy) = gradient_xy(&x, op).unwrap();
            for g in [gx, gy] {
                prop_assert!(g.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&e| e == 0.0));
            }
        }
        let m = sobel_magnitude(&x).unwrap();
        prop_assert!(m.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&e| e == 0.0));
    }
}

#[test]
fn seeds_change_initialization() {
    let img = GrayImage::filled(16, 16, 0.4).unwrap();
    let a = tiny_model(1).encode(&img).unwrap();
    let b = tiny_model(2).encode(&img).unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn sizes_below_minimum_or_odd_are_rejected() {
    let model = tiny_model(0);
    assert!(model.encode(&GrayImage::filled(8, 8, 0.5).unwrap()).is_err());
    assert!(model.encode(&GrayImage::filled(17, 16, 0.5).unwrap()).is_err());
}
