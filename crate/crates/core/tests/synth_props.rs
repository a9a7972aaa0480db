mod common;

use common::*;
use fcm_former::fcs::cohort::Lineage;
use fcm_former::fcs::panel::{N_SCATTER, PANEL};
use fcm_former::fcs::{ByteOrder, DataType};
use fcm_former::synth::{self, blast_signature, generate, generate_sample, nearest_centroid_accuracy, SynthConfig};
use fcm_former::training::{make_splits, TrainConfig};
use proptest::prelude::*;

fn col(name: &str) -> usize {
    PANEL.iter().position(|&p| p == name).unwrap()
}

#[test]
fn same_seed_same_cohort_in_any_order() {
    let cfg = small_synth(DataType::Float, ByteOrder::Little);
    let a = generate(&cfg).unwrap();
    assert_eq!(a, generate(&cfg).unwrap());
    // samples come from independent streams, so one can be rebuilt alone
    let k = cfg.n_per_class;
    let alone = generate_sample(&cfg, Lineage::TAll, 0, (Lineage::TAll.index() * cfg.n_per_class) as u64).unwrap();
    assert_eq!(alone, a[k]);
    assert_ne!(a, generate(&SynthConfig { seed: 22, ..cfg }).unwrap());
}

#[test]
fn default_cohort_is_separable_by_mean_markers() {
    let cfg = SynthConfig { seed: 7, ..SynthConfig::default() };
    let cohort = generate(&cfg).unwrap();
    assert_eq!(cohort.len(), 180);
    let labels: Vec<usize> = cohort.iter().map(|s| s.label.unwrap().index()).collect();
    let split = TrainConfig { n_folds: 1, n_train: 120, n_val: 20, n_test: 40, seed: 7, ..TrainConfig::default() };
    let s = &make_splits(&labels, 3, &split).unwrap()[0];
    let acc = nearest_centroid_accuracy(&cohort, &s.train, &s.test);
    assert!(acc >= 0.9, "nearest centroid accuracy {acc}");
}

#[test]
fn signatures_raise_their_lineage_markers() {
    let lineage_markers = [
        (Lineage::BAll, &["CD19", "CD10", "(i)CD79A", "(i)CD22"][..]),
        (Lineage::TAll, &["(i)CD3", "CD5", "CD7"][..]),
        (Lineage::Aml, &["CD13", "CD33", "CD117", "(i)MPO"][..]),
    ];
    for (l, markers) in lineage_markers {
        let own = blast_signature(l);
        for other in Lineage::ALL.into_iter().filter(|&o| o != l) {
            let theirs = blast_signature(other);
            for m in markers {
                assert!(own[col(m)] > theirs[col(m)], "{l} {m}");
            }
        }
    }
}

#[test]
fn generated_values_are_non_negative_and_masked() {
    for s in generate(&small_synth(DataType::Integer, ByteOrder::Big)).unwrap() {
        assert!(s.data().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        assert!(zeros_where_absent(&s));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_tube_keeps_scatter_and_cd45(panels in prop::collection::vec(
        prop::sample::subsequence(PANEL[N_SCATTER + 1..].to_vec(), 0..8), 1..5),
        k in 0usize..8,
    ) {
        let cfg = SynthConfig {
            tube_panels: panels.iter().map(|p| p.iter().map(|s| s.to_string()).collect()).collect(),
            ..SynthConfig::default()
        };
        let mask = cfg.tube_mask(k);
        prop_assert!(mask[..N_SCATTER].iter().all(|&m| m));
        prop_assert!(mask[col("CD45")]);
        for name in &panels[k % panels.len()] {
            prop_assert!(mask[col(name)]);
        }
    }
}

#[test]
fn written_cohort_lists_every_tube() {
    let cfg = small_synth(DataType::Double, ByteOrder::Little);
    let cohort = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_cohort(&cohort, &cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(manifest).unwrap();
    assert_eq!(text.lines().count(), 1 + cohort.len() * cfg.tubes_per_sample);
    assert!(text.starts_with("sample_id,label,tube_path"));
}
