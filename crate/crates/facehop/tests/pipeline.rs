use facehop::config::RunConfig;
use facehop::pipeline;
use facehop::synth::{self, SynthOptions};
use facehop_core::augment::flip_h;
use facehop_core::FaceHop;

fn dataset() -> (tempfile::TempDir, pipeline::Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth::generate(&SynthOptions { side: 40, counts: [40, 40], seed: 12, ..Default::default() });
    let manifest = synth::write_dataset(dir.path(), &samples).unwrap();
    let data = pipeline::load_dataset(&facehop::manifest::read(&manifest).unwrap(), &RunConfig::lfw().crop_geometry()).unwrap();
    (dir, data)
}

/// Chunked accumulation reorders floating-point sums, so region statistics
/// agree with the serial fit to rounding only; the tree is fitted serially
/// in both and must match exactly.
#[test]
fn parallel_fit_matches_serial_core_fit() {
    let (_dir, data) = dataset();
    let config = RunConfig::lfw().face_hop_config().unwrap();
    let parallel = pipeline::fit(&data, &config).unwrap();
    let serial = FaceHop::fit(&data.images, &data.labels, &config).unwrap();
    assert!(parallel.tree == serial.tree);
    for (a, b) in parallel.regions.iter().zip(&serial.regions) {
        let scale = b.pca.mean.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mean = a.pca.mean.iter().zip(&b.pca.mean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let comp = a.pca.components.iter().zip(&b.pca.components).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(mean < 1e-12 * scale && comp < 1e-8, "{}: mean {mean:e}, components {comp:e}", a.spec.name);
    }
    for img in &data.images {
        let (p, q) = (parallel.predict(img).unwrap(), serial.predict(img).unwrap());
        assert_eq!(p.label, q.label);
        assert!((p.probability - q.probability).abs() < 1e-6);
    }
}

#[test]
fn predictions_mostly_survive_mirroring() {
    // The synthetic faces are left/right symmetric up to noise and pose.
    let (_dir, data) = dataset();
    let (train, test) = pipeline::stratified_split(&data.labels, 0.5, 1, 0).unwrap();
    let model = pipeline::fit(&data.subset(&train), &RunConfig::lfw().face_hop_config().unwrap()).unwrap();
    let test = data.subset(&test);
    let agree = test
        .images
        .iter()
        .filter(|img| model.predict(img).unwrap().label == model.predict(&flip_h(img)).unwrap().label)
        .count();
    assert!(agree * 10 >= test.len() * 9, "{agree}/{} predictions unchanged by mirroring", test.len());
}
