mod common;

use common::*;
use fcm_former::model::{parameter_count, FcmFormer, ModelConfig, Readout};
use fcm_former::fcs::cohort::{EventMatrix, Lineage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

const READOUTS: [Readout; 2] = [Readout::ClassToken, Readout::CrossAttention];

fn events_of(s: &EventMatrix) -> Mat<f64> {
    (0..s.n_events()).map(|i| s.row(i).iter().map(|&v| v as f64).collect()).collect()
}

#[test]
fn forward_matches_loop_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for readout in READOUTS {
        let cfg = ModelConfig { n_layers: 2, ..tiny_config(readout, 3) };
        let mut model = FcmFormer::<f64>::new(cfg).unwrap();
        perturb(model.params_mut(), &mut r);
        for k in 0..5 {
            let s = toy_sample(&mut r, &format!("s{k}"), Lineage::Aml, 7 + k, 5);
            let got = model.forward(&s).unwrap();
            let want = model_logits(&model, &events_of(&s));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{readout}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn logits_are_permutation_invariant() {
    for readout in READOUTS {
        let cfg = ModelConfig { n_features: 22, ..ModelConfig::default() };
        let cfg = ModelConfig { readout, seed: 4, ..cfg };
        let m32 = FcmFormer::<f32>::new(cfg.clone()).unwrap();
        let w32 = permutation_worst(&m32, 4, 5, 200, 1);
        assert!(w32 <= 1e-4, "{readout} f32: {w32:e}");
        let w64 = permutation_worst(&m32.convert::<f64>(), 4, 5, 200, 1);
        assert!(w64 <= 1e-9, "{readout} f64: {w64:e}");
    }
}

#[test]
fn ledger_equals_walked_scalar_count() {
    for readout in READOUTS {
        for cfg in [ModelConfig::default(), tiny_config(readout, 0)] {
            let cfg = ModelConfig { readout, ..cfg };
            let ledger = parameter_count(&cfg).unwrap();
            let model = FcmFormer::<f32>::new(cfg).unwrap();
            assert_eq!(ledger.total, model.scalar_count(), "{readout}");
            assert_eq!(ledger.entries.iter().map(|e| e.count).sum::<usize>(), ledger.total);
        }
    }
}

#[test]
fn tiny_ledger_matches_hand_count() {
    // input 5·8+8, token 8, per msab 4·64 + 64+8 + 4·8, inducing 4·8, classifier 8·3+3
    let msab = 4 * 64 + 64 + 8 + 4 * 8;
    let stab = 2 * msab + 4 * 8;
    let total = 5 * 8 + 8 + 8 + stab + 8 * 3 + 3;
    assert_eq!(parameter_count(&tiny_config(Readout::ClassToken, 0)).unwrap().total, total);
    assert_eq!(parameter_count(&tiny_config(Readout::CrossAttention, 0)).unwrap().total, total + 4 * 64);
}

#[test]
fn model_gradients_match_finite_differences() {
    for readout in READOUTS {
        let report = model_gradcheck(readout, 5);
        assert!(report.passes(1e-4), "{readout}: {report:?}");
    }
}

#[test]
fn predicted_probabilities_sum_to_one() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for readout in READOUTS {
        let model = FcmFormer::<f32>::new(ModelConfig { readout, ..ModelConfig::default() }).unwrap();
        for k in 0..3 {
            let s = toy_sample(&mut r, &format!("q{k}"), Lineage::BAll, 50, 22);
            let p = model.predict(&s).unwrap();
            assert_eq!(p.probabilities.len(), 3);
            assert!((p.probabilities.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            let best = (0..3).fold(0, |b, i| if p.probabilities[i] > p.probabilities[b] { i } else { b });
            assert_eq!(p.label, best);
        }
    }
}

/// Attention over a doubled set is the same weighted mean, but the class
/// token's share of it halves, so logits drift. Reported only.
#[test]
fn duplicated_events_characterisation() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let model = FcmFormer::<f64>::new(ModelConfig { seed: 2, ..ModelConfig::default() }).unwrap();
    let mut worst = 0.0f64;
    for k in 0..5 {
        let s = toy_sample(&mut r, &format!("d{k}"), Lineage::TAll, 100, 22);
        let mut doubled = s.data().to_vec();
        doubled.extend_from_slice(s.data());
        let d = EventMatrix::from_rows(s.sample_id.clone(), s.label, 22, doubled).unwrap();
        let (a, b) = (model.forward(&s).unwrap(), model.forward(&d).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!(y.is_finite());
            worst = worst.max((x - y).abs());
        }
    }
    let _ = writeln!(std::io::stderr(), "duplicated events: worst logit change {worst:.3e}");
}
