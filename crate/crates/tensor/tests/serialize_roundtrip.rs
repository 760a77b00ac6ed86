use gtfmn_tensor::{parse_tensors, write_tensors, DType, StoredTensor, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn container_round_trip_is_bit_exact(
        shapes in prop::collection::vec(prop::collection::vec(0usize..4, 0..4), 1..5),
        seed in any::<u32>(),
    ) {
        let tensors: Vec<Tensor<f32>> = shapes.iter().enumerate().map(|(k, s)| {
            let n: usize = s.iter().product();
            Tensor::from_vec(s, (0..n).map(|i| (i as f32 + seed as f32) * 0.37 - k as f32).collect()).unwrap()
        }).collect();
        let names: Vec<String> = (0..tensors.len()).map(|i| format!("layer.{i}.weight")).collect();
        let entries: Vec<(&str, &Tensor<f32>)> =
            names.iter().map(String::as_str).zip(tensors.iter()).collect();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &entries).unwrap();
        let back = parse_tensors(&buf).unwrap();
        prop_assert_eq!(back.len(), tensors.len());
        for ((name, stored), (want_name, want)) in back.into_iter().zip(entries) {
            prop_assert_eq!(name.as_str(), want_name);
            prop_assert_eq!(stored.dtype(), DType::F32);
            let t = stored.into_tensor::<f32>();
            prop_assert_eq!(t.shape(), want.shape());
            let bits: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let want_bits: Vec<u32> = want.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want_bits);
        }
    }
}

#[test]
fn f64_entries_keep_their_dtype() {
    let t = Tensor::<f64>::from_vec(&[2], vec![0.1, 1e-300]).unwrap();
    let mut buf = Vec::new();
    write_tensors(&mut buf, &[("x", &t)]).unwrap();
    let back = parse_tensors(&buf).unwrap();
    assert!(matches!(&back[0].1, StoredTensor::F64(v) if v == &t));
}
