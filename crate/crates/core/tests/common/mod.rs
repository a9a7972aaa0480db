//! Loop-based reference implementations shared by the integration tests.
//!
//! Nothing here touches the autodiff graph: every oracle works on plain
//! nested `Vec`s with explicit index loops.

#![allow(dead_code)]

use fcm_former::attention::{self as blocks, bind, MsabParams, MultiheadParams, StabParams};
use fcm_former::params::ParamTree;
use fcm_former::Graph;
use fcm_former::fcs::cohort::{load_cohort, CohortManifest, EventMatrix, Lineage};
use fcm_former::fcs::panel::PanelSchema;
use fcm_former::fcs::{ByteOrder, DataType};
use fcm_former::synth::{self, SynthConfig};
use fcm_former::gradcheck::{check_gradients, GradCheckReport};
use fcm_former::model::{FcmFormer, ModelConfig, ModelError, Readout};
use fcm_former::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat<T> = Vec<Vec<T>>;

pub const LN_EPS: f64 = 1e-5;

pub fn to_mat<T: Scalar>(t: &Tensor<T>) -> Mat<T> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

/// Rank-1 tensors become a single row.
pub fn vec_of<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    t.data().to_vec()
}

pub fn from_mat<T: Scalar>(m: &Mat<T>) -> Tensor<T> {
    Tensor::from_rows(m).unwrap()
}

pub fn random_mat<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat<T> {
    (0..rows)
        .map(|_| (0..cols).map(|_| T::lit(rng.random_range(-scale..scale))).collect())
        .collect()
}

pub fn random_tensor<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor<T> {
    from_mat(&random_mat(rng, rows, cols, scale))
}

pub fn max_abs_diff<T: Scalar>(a: &Mat<T>, b: &Tensor<T>) -> f64 {
    let b = to_mat(b);
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.len(), rb.len(), "column count");
        for (&x, &y) in ra.iter().zip(rb) {
            worst = worst.max((x.to_f64_lossy() - y.to_f64_lossy()).abs());
        }
    }
    worst
}

pub fn matmul<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let (p, q, r) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![T::zero(); r]; p];
    for i in 0..p {
        for j in 0..r {
            let mut acc = T::zero();
            for k in 0..q {
                acc += a[i][k] * b[k][j];
            }
            c[i][j] = acc;
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn add<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u + v).collect())
        .collect()
}

pub fn columns<T: Scalar>(a: &Mat<T>, start: usize, len: usize) -> Mat<T> {
    a.iter().map(|row| row[start..start + len].to_vec()).collect()
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut max = row[0];
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let e: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let mut total = T::zero();
    for &v in &e {
        total += v;
    }
    e.iter().map(|&v| v / total).collect()
}

/// Two-pass mean then population variance per row.
pub fn layer_norm<T: Scalar>(x: &Mat<T>, gain: &[T], bias: &[T]) -> Mat<T> {
    let eps = T::lit(LN_EPS);
    x.iter()
        .map(|row| {
            let n = T::lit(row.len() as f64);
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var / n;
            let sd = (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, &v)| (v - mean) / sd * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

/// For each query, softmax over scaled dot products with every key, then
/// the weighted sum of value rows.
pub fn attn<T: Scalar>(q: &Mat<T>, k: &Mat<T>, v: &Mat<T>) -> Mat<T> {
    let d = k[0].len();
    let scale = T::lit((d as f64).sqrt());
    q.iter()
        .map(|qi| {
            let scores: Vec<T> = k
                .iter()
                .map(|kj| {
                    let mut s = T::zero();
                    for c in 0..d {
                        s += qi[c] * kj[c];
                    }
                    s / scale
                })
                .collect();
            let w = softmax(&scores);
            let mut out = vec![T::zero(); v[0].len()];
            for (j, vj) in v.iter().enumerate() {
                for c in 0..out.len() {
                    out[c] += w[j] * vj[c];
                }
            }
            out
        })
        .collect()
}

/// Materialises each head's projection block, runs it, concatenates.
pub fn multihead<T: Scalar>(p: &MultiheadParams<Tensor<T>>, q: &Mat<T>, k: &Mat<T>, v: &Mat<T>) -> Mat<T> {
    let (wq, wk, wv, wo) = (to_mat(&p.w_q), to_mat(&p.w_k), to_mat(&p.w_v), to_mat(&p.w_o));
    let d = wq.len();
    let width = d / p.heads;
    let mut concat: Mat<T> = vec![Vec::with_capacity(d); q.len()];
    for h in 0..p.heads {
        let qh = matmul(q, &columns(&wq, h * width, width));
        let kh = matmul(k, &columns(&wk, h * width, width));
        let vh = matmul(v, &columns(&wv, h * width, width));
        let oh = attn(&qh, &kh, &vh);
        for (row, part) in concat.iter_mut().zip(oh) {
            row.extend(part);
        }
    }
    matmul(&concat, &wo)
}

pub fn msab<T: Scalar>(p: &MsabParams<Tensor<T>>, i: &Mat<T>, s: &Mat<T>) -> Mat<T> {
    let x = layer_norm(&add(i, &multihead(&p.mh, i, s, s)), &vec_of(&p.ln1_gain), &vec_of(&p.ln1_bias));
    let w = to_mat(&p.rff_weight);
    let b = vec_of(&p.rff_bias);
    let ff: Mat<T> = matmul(&x, &w)
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&b)
                .map(|(&v, &bb)| {
                    let z = v + bb;
                    if z > T::zero() {
                        z
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();
    layer_norm(&add(&x, &ff), &vec_of(&p.ln2_gain), &vec_of(&p.ln2_bias))
}

pub fn stab<T: Scalar>(p: &StabParams<Tensor<T>>, s: &Mat<T>) -> Mat<T> {
    let h = msab(&p.inner, &to_mat(&p.inducing), s);
    msab(&p.outer, s, &h)
}

fn affine<T: Scalar>(x: &Mat<T>, w: &Tensor<T>, b: &Tensor<T>) -> Mat<T> {
    let b = vec_of(b);
    matmul(x, &to_mat(w))
        .into_iter()
        .map(|row| row.iter().zip(&b).map(|(&v, &bb)| v + bb).collect())
        .collect()
}

/// Whole-model logits from the oracle blocks.
pub fn model_logits<T: Scalar>(model: &FcmFormer<T>, events: &Mat<T>) -> Vec<T> {
    let p = model.params();
    let proj = affine(events, &p.input_weight, &p.input_bias);
    let token = to_mat(&p.class_token);
    let pooled = match model.config().readout {
        Readout::ClassToken => {
            let mut x = token.clone();
            x.extend(proj);
            for layer in &p.layers {
                x = stab(layer, &x);
            }
            vec![x[0].clone()]
        }
        Readout::CrossAttention => {
            let mut x = proj;
            for layer in &p.layers {
                x = stab(layer, &x);
            }
            multihead(p.readout.as_ref().unwrap(), &token, &x, &x)
        }
    };
    affine(&pooled, &p.classifier_weight, &p.classifier_bias).remove(0)
}

/// Pairwise AUC: wins plus half ties over all positive/negative pairs.
pub fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &ti) in truth.iter().enumerate() {
        if ti {
            pos += 1;
        } else {
            neg += 1;
        }
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

/// A single-tube sample of `n` events drawn around a label-dependent mean.
pub fn toy_sample<R: Rng>(rng: &mut R, id: &str, label: Lineage, n: usize, width: usize) -> EventMatrix {
    let shift = label.index() as f32;
    let data = (0..n * width)
        .map(|k| {
            let base = if k % width == label.index() { 1.5 } else { 0.0 };
            base + shift * 0.1 + rng.random_range(-0.5f32..0.5)
        })
        .collect();
    EventMatrix::from_rows(id, Some(label), width, data).unwrap()
}

pub fn toy_cohort<R: Rng>(rng: &mut R, per_class: usize, events: usize, width: usize) -> Vec<EventMatrix> {
    let mut out = Vec::new();
    for l in Lineage::ALL {
        for i in 0..per_class {
            out.push(toy_sample(rng, &format!("{l}-{i}"), l, events, width));
        }
    }
    out
}

/// Row `i` of `m` becomes row `perm[i]`.
pub fn permute_events(s: &EventMatrix, perm: &[usize]) -> EventMatrix {
    let w = s.n_features();
    let mut data = vec![0f32; s.data().len()];
    for (i, &to) in perm.iter().enumerate() {
        data[to * w..(to + 1) * w].copy_from_slice(s.row(i));
    }
    EventMatrix::from_rows(s.sample_id.clone(), s.label, w, data).unwrap()
}

fn widen<T: Scalar>(m: &Mat<T>) -> Mat<f64> {
    m.iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

fn widen_tree<T: Scalar, S: ParamTree<Tensor<T>>>(tree: &S) -> S::With<Tensor<f64>> {
    tree.map(&mut |t| t.convert())
}

fn deviation<T: Scalar>(reference: &Mat<f64>, got: &Tensor<T>) -> f64 {
    max_abs_diff(reference, &got.convert::<f64>())
}

/// Adds uniform noise to every leaf so unit gains and zero biases are
/// exercised too.
pub fn perturb<T: Scalar, S: ParamTree<Tensor<T>>>(tree: &mut S, r: &mut ChaCha8Rng) {
    tree.for_each_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v += T::lit(r.random_range(-0.3..0.3));
        }
    });
}

/// Worst deviation of `[attn, multihead, msab, stab]` from the loop
/// oracles over `cases` random draws with n ≤ 6 and d ≤ 8. The oracles
/// run in 64-bit on the exact values the blocks received, so for `f32`
/// this is the implementation's own rounding error.
pub fn block_deviations<T: Scalar>(seed: u64, cases: usize, perturbed: bool, scale: f64) -> [f64; 4] {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for case in 0..cases {
        let heads = [1, 2, 4][case % 3];
        let d = heads * r.random_range(1..=8 / heads);
        let nq = r.random_range(1..=6);
        let nv = r.random_range(1..=6);
        let m = r.random_range(1..=6);
        let q = random_mat::<T, _>(&mut r, nq, d, scale);
        let s = random_mat::<T, _>(&mut r, nv, d, scale);
        let v = random_mat::<T, _>(&mut r, nv, d, scale);
        let mut mh = MultiheadParams::<Tensor<T>>::init(d, heads, &mut r).unwrap();
        let mut ms = MsabParams::<Tensor<T>>::init(d, heads, &mut r).unwrap();
        let mut st = StabParams::<Tensor<T>>::init(d, m, heads, &mut r).unwrap();
        if perturbed {
            perturb(&mut mh, &mut r);
            perturb(&mut ms, &mut r);
            perturb(&mut st, &mut r);
        }
        let (q64, s64, v64) = (widen(&q), widen(&s), widen(&v));

        let mut g = Graph::<T>::new();
        let (vq, vs, vv) = (g.constant(from_mat(&q)), g.constant(from_mat(&s)), g.constant(from_mat(&v)));
        let out = blocks::attn(&mut g, vq, vs, vv).unwrap();
        worst[0] = worst[0].max(deviation(&attn(&q64, &s64, &v64), g.value(out)));
        let p = bind(&mut g, &mh);
        let out = blocks::multihead(&mut g, &p, vq, vs, vv).unwrap();
        worst[1] = worst[1].max(deviation(&multihead(&widen_tree(&mh), &q64, &s64, &v64), g.value(out)));
        let p = bind(&mut g, &ms);
        let out = blocks::msab(&mut g, &p, vq, vs).unwrap();
        worst[2] = worst[2].max(deviation(&msab(&widen_tree(&ms), &q64, &s64), g.value(out)));
        let p = bind(&mut g, &st);
        let out = blocks::stab(&mut g, &p, vs).unwrap();
        worst[3] = worst[3].max(deviation(&stab(&widen_tree(&st), &s64), g.value(out)));
    }
    worst
}

/// d=8, m=4, two heads, one layer, five features, three classes.
pub fn tiny_config(readout: Readout, seed: u64) -> ModelConfig {
    ModelConfig {
        n_features: 5,
        d: 8,
        m: 4,
        heads: 2,
        n_layers: 1,
        n_classes: 3,
        readout,
        subsample_cap: None,
        seed,
    }
}

/// Finite differences over every parameter of a tiny model and its six
/// input events, with the cross-entropy loss of a fixed label.
pub fn model_gradcheck(readout: Readout, seed: u64) -> GradCheckReport {
    let mut model = FcmFormer::<f64>::new(tiny_config(readout, seed)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    perturb(model.params_mut(), &mut r);
    let x = random_tensor::<f64, _>(&mut r, 6, 5, 1.0);
    let mut leaves = vec![x];
    model.params().for_each("", &mut |_, t| leaves.push(t.clone()));
    let report = check_gradients(&leaves, 1e-5, |g, vars| {
        let mut it = vars[1..].iter();
        let p = model.params().map(&mut |_| *it.next().unwrap());
        let logits = model.logits_graph(g, &p, vars[0])?;
        Ok::<_, ModelError>(g.cross_entropy(logits, 1)?)
    })
    .unwrap();
    assert_eq!(report.checked, leaves.iter().map(Tensor::numel).sum::<usize>());
    report
}

/// Worst logit change over `samples × perms` random event reorderings.
pub fn permutation_worst<T: Scalar>(model: &FcmFormer<T>, samples: usize, perms: usize, events: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let width = model.config().n_features;
    let mut worst = 0.0f64;
    for k in 0..samples {
        let s = toy_sample(&mut r, &format!("p{k}"), Lineage::ALL[k % 3], events, width);
        let base = model.forward(&s).unwrap();
        for _ in 0..perms {
            let mut perm: Vec<usize> = (0..events).collect();
            perm.shuffle(&mut r);
            let out = model.forward(&permute_events(&s, &perm)).unwrap();
            for (a, b) in out.iter().zip(&base) {
                worst = worst.max((a.to_f64_lossy() - b.to_f64_lossy()).abs());
            }
        }
    }
    worst
}

pub const DATATYPES: [DataType; 3] = [DataType::Float, DataType::Double, DataType::Integer];
pub const BYTE_ORDERS: [ByteOrder; 2] = [ByteOrder::Little, ByteOrder::Big];

pub fn small_synth(datatype: DataType, byte_order: ByteOrder) -> SynthConfig {
    SynthConfig {
        n_per_class: 2,
        events_per_tube: 40,
        datatype,
        byte_order,
        seed: 21,
        ..SynthConfig::default()
    }
}

/// Generates a small cohort, writes it as FCS files and loads it back.
/// Returns the number of samples that matched exactly, or what differed.
pub fn cohort_roundtrip(datatype: DataType, byte_order: ByteOrder) -> Result<usize, String> {
    let cfg = small_synth(datatype, byte_order);
    let cohort = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = synth::write_cohort(&cohort, &cfg, dir.path()).map_err(|e| e.to_string())?;
    let manifest = CohortManifest::read(&path).map_err(|e| e.to_string())?;
    let load = load_cohort(&manifest, &PanelSchema::standard());
    if let Some((id, e)) = load.failures.first() {
        return Err(format!("{id}: {e}"));
    }
    if load.samples.len() != cohort.len() {
        return Err(format!("{} of {} samples loaded", load.samples.len(), cohort.len()));
    }
    for (a, b) in cohort.iter().zip(&load.samples) {
        let bits = |m: &EventMatrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if a != b || bits(a) != bits(b) {
            return Err(format!("{} differs after the round trip", a.sample_id));
        }
    }
    Ok(cohort.len())
}

/// Every column a tube lacks holds zeros in that tube's rows.
pub fn zeros_where_absent(s: &EventMatrix) -> bool {
    (0..s.n_tubes()).all(|t| {
        let mask = &s.present_mask()[t];
        s.tube_rows(t).all(|r| s.row(r).iter().zip(mask).all(|(&v, &p)| p || v == 0.0))
    })
}

/// Brute-force macro one-vs-rest AUC over an `n × k` probability matrix,
/// averaged in class order.
pub fn brute_macro_auc(probabilities: &[f64], k: usize, truth: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let scores: Vec<f64> = probabilities.chunks_exact(k).map(|row| row[c]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        total += brute_auc(&scores, &pos);
    }
    total / k as f64
}

/// Random labels over `k` classes with every class present.
fn labels_covering<R: Rng>(r: &mut R, n: usize, k: usize) -> Vec<usize> {
    loop {
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        if (0..k).all(|c| t.contains(&c)) {
            return t;
        }
    }
}

/// Scores in [0, 1); every other case is rounded to tenths to force ties.
fn scores<R: Rng>(r: &mut R, n: usize, tied: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = r.random();
            if tied {
                (v * 10.0).floor() / 10.0
            } else {
                v
            }
        })
        .collect()
}

/// Compares binary and macro AUC against the pairwise oracles on
/// `cases` random draws of n ≤ 50 each. Returns the mismatching cases.
pub fn auc_mismatches(seed: u64, cases: usize) -> Vec<String> {
    use fcm_former::metrics::{binary_auc, macro_ovr_auc};
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for case in 0..cases {
        let tied = case % 2 == 1;
        let n = r.random_range(2..=50);
        let truth: Vec<bool> = labels_covering(&mut r, n, 2).into_iter().map(|c| c == 1).collect();
        let s = scores(&mut r, n, tied);
        let (got, want) = (binary_auc(&s, &truth).unwrap(), brute_auc(&s, &truth));
        if got != want {
            bad.push(format!("binary case {case}: {got} vs {want}"));
        }

        let k = r.random_range(3..=4);
        let n = r.random_range(k..=50);
        let truth = labels_covering(&mut r, n, k);
        let mut p = scores(&mut r, n * k, tied);
        for row in p.chunks_exact_mut(k) {
            let sum: f64 = row.iter().sum::<f64>().max(1e-12);
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let (got, want) = (macro_ovr_auc(&p, k, &truth).unwrap(), brute_macro_auc(&p, k, &truth));
        if got != want {
            bad.push(format!("macro case {case}: {got} vs {want}"));
        }
    }
    bad
}
