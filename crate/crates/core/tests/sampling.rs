mod common;

use relemb::model::{EmbeddingModel, Gradient};
use relemb::sampling::TermSampler;
use relemb::train::sampled_target;

#[test]
fn empirical_frequencies_within_three_sigma() {
    let weights = [(0, 0.5), (3, 0.2), (4, 0.15), (7, 0.1), (9, 0.05)];
    let sampler = TermSampler::new(&weights).unwrap();
    let mut r = common::rng(11);
    let n = 1_000_000;
    let mut draws = Vec::new();
    sampler.sample_n(&mut r, n, &mut draws);
    let mut counts = [0usize; 10];
    for t in draws {
        counts[t] += 1;
    }
    for &(t, p) in &weights {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let dev = (counts[t] as f64 - n as f64 * p).abs();
        assert!(dev <= 3.0 * sigma, "term {t}: {} draws, expected {}", counts[t], n as f64 * p);
    }
    assert_eq!(counts.iter().sum::<usize>(), n);
    assert_eq!(counts[1] + counts[2] + counts[5] + counts[6] + counts[8], 0);
}

#[test]
fn dense_noise_table_samples_its_support() {
    let sampler = TermSampler::from_dense(&[0.0, 1.0, 0.0, 3.0]).unwrap();
    let mut r = common::rng(5);
    for _ in 0..1000 {
        assert!(matches!(sampler.sample(&mut r), 1 | 3));
    }
    assert!(TermSampler::from_dense(&[0.0, 0.0]).is_err());
}

fn flatten(g: &Gradient, m: &EmbeddingModel) -> Vec<f64> {
    let d = m.dim();
    let mut v = vec![0.0; (m.vocab_size() + m.node_vectors.rows()) * d];
    for (t, row) in &g.query_rows {
        for (i, x) in row.iter().enumerate() {
            v[t * d + i] += x;
        }
    }
    let off = m.vocab_size() * d;
    for (r, row) in &g.output_rows {
        for (i, x) in row.iter().enumerate() {
            v[off + r * d + i] += x;
        }
    }
    v
}

/// The sampled RLM target is an unbiased estimate of p(w|R), and the
/// gradient is linear in the target, so averaged sampled gradients approach
/// the exact one.
#[test]
fn sampled_rlm_gradient_is_unbiased() {
    let mut r = common::rng(21);
    let m = common::random_rlm(&mut r, 12, 4, 1.0);
    let target = [(0, 0.4), (2, 0.3), (5, 0.2), (11, 0.1)];
    let sampler = TermSampler::new(&target).unwrap();
    let exact = flatten(&m.rlm_gradient(&[1, 3], &target).unwrap(), &m);
    let rounds = 20_000;
    let mut mean = vec![0.0; exact.len()];
    for _ in 0..rounds {
        let t = sampled_target(&sampler, 5, &mut r);
        let total: f64 = t.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (a, x) in mean.iter_mut().zip(flatten(&m.rlm_gradient(&[1, 3], &t).unwrap(), &m)) {
            *a += x / rounds as f64;
        }
    }
    let scale = exact.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let worst = exact.iter().zip(&mean).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(worst < 0.02 * scale, "max deviation {worst} vs gradient scale {scale}");
}
