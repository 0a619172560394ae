use ndm::io::ActivationBuffer;
use ndm::linalg::{pca_basis, random_orthogonal, Matrix};
use ndm::mi::partition_mi;
use ndm::ndm::{train_ndm, InitialRotation, NdmConfig, SearchScope, Termination};
use ndm::rng::{stream, streams};
use ndm::toy::{sample_features_forced, toy_activations, toy_preset, train_toy, ToyTrainConfig};
use ndm::Partition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two blocks of dims 8 and 4, each a Gaussian vector scaled by its own
/// log-normal factor, so coordinates are dependent within a block only.
fn scale_mixture_blocks(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Matrix::zeros(n, 12);
    for i in 0..n {
        let s1 = (1.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let s2 = (1.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        for j in 0..12 {
            let z: f64 = rng.sample(StandardNormal);
            data[(i, j)] = z * if j < 8 { s1 } else { s2 };
        }
    }
    data
}

#[test]
fn recovers_dependent_blocks() {
    let data = scale_mixture_blocks(1 << 15, 0);
    let cfg = NdmConfig {
        unit_size: 2,
        search_number: 256,
        block_size: 256,
        search_scope: SearchScope::Stream,
        merge_start_delay: 2000,
        merge_interval: 1000,
        max_steps: 40_000,
        reinit_interval: 0,
        ..NdmConfig::toy()
    };
    let mut buf = ActivationBuffer::new(data).with_recycle(true);
    let run = train_ndm(&mut buf, &cfg, InitialRotation::Identity).unwrap();
    assert_eq!(run.trace.termination, Termination::Converged);
    let mut sorted = run.partition.dims().to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sorted, vec![8, 4]);

    let r = run.partition.r();
    for range in run.partition.ranges() {
        let (mut inside, mut total) = (0.0, 0.0);
        for row in range.clone() {
            for j in 0..12 {
                let v = r[(row, j)] * r[(row, j)];
                total += v;
                if (j < 8) == (range.len() == 8) {
                    inside += v;
                }
            }
        }
        assert!(inside / total > 0.99, "block of {} has {:.3} of its energy in its span", range.len(), inside / total);
    }
    assert!(r.orthogonality_defect() <= 1e-6);
}

#[test]
fn ground_truth_partition_has_low_mi() {
    let p = toy_preset("toy-2x20").unwrap();
    let toy = train_toy(&p.spec, p.d, &ToyTrainConfig { seed: 0, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let only_first = sample_features_forced(&p.spec, 4096, 1, false, &mut rng).unwrap();
    let h_first = toy.model.encode(&only_first).unwrap();
    let basis = pca_basis(&h_first).unwrap().eigenvectors.transpose();
    let truth = Partition::new(basis, vec![6, 6]).unwrap();

    let acts = toy_activations(&toy.model, &p.spec, 4096, &mut rng).unwrap();
    let good = partition_mi(&acts, &truth, 3).unwrap().max_normalized();
    assert!(good < 0.04, "ground truth MI {good}");

    let mixed = Partition::new(random_orthogonal(12, &mut rng), vec![6, 6]).unwrap();
    let bad = partition_mi(&acts, &mixed, 3).unwrap().max_normalized();
    assert!(bad > 0.04, "mixed MI {bad}");

    let unit = partition_mi(&acts, &Partition::identity(12, 2).unwrap(), 3).unwrap().max_normalized();
    assert!(unit > good);
}

#[test]
fn toy_ndm_is_deterministic() {
    let p = toy_preset("toy-2x20").unwrap();
    let toy = train_toy(&p.spec, p.d, &ToyTrainConfig { steps: 500, seed: 3, ..Default::default() }).unwrap();
    let run = |seed| {
        let acts = toy_activations(&toy.model, &p.spec, 8192, &mut stream(seed, streams::ACTIVATIONS)).unwrap();
        let cfg = NdmConfig { max_steps: 400, merge_start_delay: 200, merge_interval: 100, reinit_interval: 50, mi_samples: 1024, seed, ..NdmConfig::toy() };
        train_ndm(&mut ActivationBuffer::new(acts).with_recycle(true), &cfg, InitialRotation::RandomOrthogonal).unwrap()
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.trace, b.trace);
    assert_ne!(a.partition, run(2).partition);
}
