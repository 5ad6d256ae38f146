//! Shared fixtures for the benchmarks.

use landscape::certify::{region_demo, RegionConfig};
use landscape::{generate_teacher_dataset, init_random, ActivationKind, Dataset, InputSampler, Network};

/// Random network of `dims` on teacher data with `n` samples.
pub fn random_case(dims: &[usize], n: usize, seed: u64) -> (Network, Dataset) {
    let teacher = init_random(&[dims[0], 5, 5, 1], ActivationKind::Sigmoid, 8.0, seed).expect("valid teacher");
    let data = generate_teacher_dataset(&teacher, n, InputSampler::default(), seed).expect("distinct inputs");
    let net = init_random(dims, ActivationKind::Sigmoid, 1.0, seed + 1).expect("valid dims");
    (net, data)
}

/// Trained 2-1-1-1 student and its data, the region construction's start.
pub fn trained_student() -> (Network, Dataset) {
    let ev = region_demo(&RegionConfig { probe_k: 0, ..RegionConfig::default() }).expect("default region config");
    (ev.student, ev.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shapes() {
        let (net, data) = random_case(&[2, 21, 21, 1], 20, 3);
        assert_eq!(net.dims(), &[2, 21, 21, 1]);
        assert_eq!(data.len(), 20);
    }
}
