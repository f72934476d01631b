mod support;

use egospeed::models::*;
use egospeed::ops::token_count;
use egospeed::Tensor;

#[test]
fn reduced_shape_walk() {
    let trace = support::shape_walk(ModelSpec::threedcma(10, Preset::Reduced));
    let shapes: Vec<Vec<usize>> = trace.iter().map(|t| t.1.clone()).collect();
    assert_eq!(shapes.first().unwrap(), &vec![2, 10, 64, 64]);
    assert!(shapes.contains(&vec![1, 1280]));
    assert_eq!(shapes.last().unwrap(), &vec![1, 1]);
}

#[test]
fn odd_frame_counts_are_padded() {
    let trace = support::shape_walk(ModelSpec::threedcnn_nomask(13, Preset::Reduced));
    assert_eq!(trace[1].1, vec![1, 14, 64, 64]);
    assert_eq!(trace.last().unwrap().1, vec![1, 1]);
}

#[test]
fn vivit_token_counts() {
    let tubelet = VivitConfig::default().tubelet;
    assert_eq!(tubelet, [6, 8, 8]);
    assert_eq!(token_count(10, 64, 64, tubelet), 128);
    assert_eq!(token_count(13, 64, 64, tubelet), 192);
    let small = VivitConfig {
        layers: 1,
        heads: 2,
        dim: 16,
        ..VivitConfig::default()
    };
    for (frames, tokens) in [(10, 128), (13, 192)] {
        let trace = support::shape_walk(ModelSpec::vivit(frames, small));
            assert!(trace.iter().any(|(_, s)| s == &vec![tokens, 16]), "{trace:?}");
        assert_eq!(trace.last().unwrap().1, vec![1, 1]);
    }
}

#[test]
fn invalid_specs_rejected() {
    let mut spec = ModelSpec::vivit(10, VivitConfig::default());
    spec.vivit.heads = 3;
    assert!(Model::build(spec, 0).is_err());
    spec.vivit.heads = 16;
    spec.vivit.tubelet = [6, 7, 8];
    assert!(Model::build(spec, 0).is_err());
    let mut cnn = ModelSpec::threedcma(10, Preset::Reduced);
    cnn.input_channels = 1;
    assert!(Model::build(cnn, 0).is_err());
    let model = Model::build(ModelSpec::threedcma(10, Preset::Reduced), 0).unwrap();
    assert!(model.predict(&Tensor::zeros(&[1, 10, 64, 64]).unwrap()).is_err());
}

#[test]
fn build_is_seeded() {
    let spec = ModelSpec::threedcma(4, Preset::Reduced);
    let a = Model::build(spec, 1).unwrap();
    let b = Model::build(spec, 1).unwrap();
    let c = Model::build(spec, 2).unwrap();
    assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.tensor.data() == y.tensor.data()));
    assert!(a.params().iter().zip(c.params()).any(|(x, y)| x.tensor.data() != y.tensor.data()));
}

#[test]
fn checkpoint_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = ModelSpec::vivit(
        10,
        VivitConfig {
            layers: 2,
            heads: 2,
            dim: 8,
            ..VivitConfig::default()
        },
    );
    let model = Model::build(spec, 5).unwrap();
    let path = tmp.path().join("m.bin");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), model.spec());
    for (a, b) in model.params().iter().zip(back.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.data(), b.tensor.data());
    }
    let clip = Tensor::create(&spec.input_shape(), 0.3).unwrap();
    assert_eq!(model.predict(&clip).unwrap(), back.predict(&clip).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn faithful_shape_walk() {
    let trace = support::shape_walk(ModelSpec::threedcma(10, Preset::Faithful));
    let shapes: Vec<Vec<usize>> = trace.iter().map(|t| t.1.clone()).collect();
    assert_eq!(shapes, support::faithful_shapes());
    let names: Vec<&str> = trace.iter().map(|t| t.0.as_str()).collect();
    assert_eq!(names[9], "flatten");
}
