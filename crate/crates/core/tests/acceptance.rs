//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::RefNet;
use dendron::data_io::synth::{four_class_schema, four_class_specs, stairs_split_specs, synth_generate};
use dendron::data_io::{
    feature_extractor_digest, from_bytes, from_bytes_with, load_model, save_model, segment_windows,
    to_bytes, to_bytes_with, FloatCodec, WindowingConfig,
};
use dendron::hierarchy::{activity_schema, compute_alphas, ModelBundle, TaskGraph, TaskId};
use dendron::online_learning::{
    add_task, attach_task, collect_placement_counts, head_accuracy, head_weight_memory, select_node,
    train_new_head, train_new_head_uncached, AcquiredDataset, HeadTrainConfig, PlacementDecision,
};
use dendron::resources::{compare_deployments, count_macc};
use dendron::tensor_nn::{
    softmax, ConvBlockSpec, FeatureExtractorSpec, HeadSpec, OpCounter, Tensor,
};
use dendron::training::{
    joint_gradients, train_joint, AlphaMode, LabeledWindow, MultiLabelSample, TrainConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- random generators -------------------------------------------------------

fn random_fe_spec(rng: &mut ChaCha8Rng, max_blocks: usize) -> FeatureExtractorSpec {
    loop {
        let spec = FeatureExtractorSpec {
            input_channels: rng.gen_range(1..=3),
            window_len: rng.gen_range(6..=20),
            blocks: (0..rng.gen_range(0..=max_blocks))
                .map(|_| ConvBlockSpec {
                    kernel_size: rng.gen_range(1..=3),
                    num_filters: rng.gen_range(1..=3),
                    pool_size: rng.gen_range(1..=2),
                })
                .collect(),
        };
        if spec.feature_dim().is_ok() {
            return spec;
        }
    }
}

/// Random tree grown by attaching tasks under random terminal labels.
fn random_graph(rng: &mut ChaCha8Rng, max_tasks: usize) -> TaskGraph {
    let k = rng.gen_range(2..=3);
    let labels: Vec<String> = (0..k).map(|j| format!("t1_{j}")).collect();
    let mut g = TaskGraph::new(vec![("t1".to_string(), labels)]);
    for i in 2..=rng.gen_range(1..=max_tasks) {
        let terminals = g.composite_labels();
        let at = terminals[rng.gen_range(0..terminals.len())].clone();
        let labels: Vec<String> = (0..rng.gen_range(2..=3)).map(|j| format!("t{i}_{j}")).collect();
        g = attach_task(&g, &format!("t{i}"), &labels, &[at]).expect("valid attachment");
    }
    g
}

fn random_bundle(rng: &mut ChaCha8Rng, max_tasks: usize, max_blocks: usize) -> ModelBundle {
    let graph = random_graph(rng, max_tasks);
    let fe = random_fe_spec(rng, max_blocks);
    let specs = graph
        .task_ids()
        .map(|t| {
            let mut widths: Vec<usize> = (0..rng.gen_range(0..=1)).map(|_| rng.gen_range(1..=4)).collect();
            widths.push(graph.labels(t).unwrap().k());
            (t, HeadSpec { layer_widths: widths })
        })
        .collect();
    ModelBundle::init_with_specs(graph, fe, specs, rng.gen()).unwrap()
}

fn random_window(rng: &mut ChaCha8Rng, spec: &FeatureExtractorSpec) -> Tensor {
    let data = (0..spec.input_channels * spec.window_len)
        .map(|_| rng.gen_range(-2.0f32..2.0))
        .collect();
    Tensor::new(vec![spec.input_channels, spec.window_len], data).unwrap()
}

fn bench_fe() -> FeatureExtractorSpec {
    FeatureExtractorSpec {
        input_channels: 6,
        window_len: 52,
        blocks: vec![
            ConvBlockSpec {
                kernel_size: 5,
                num_filters: 8,
                pool_size: 2,
            },
            ConvBlockSpec {
                kernel_size: 3,
                num_filters: 8,
                pool_size: 2,
            },
        ],
    }
}

const BENCH_SECONDS: f64 = 60.0;
const BENCH_EPOCHS: usize = 50;
const BENCH_LR: f32 = 0.01;

fn windows(specs: &[dendron::data_io::synth::ClassSpec], seed: u64) -> Vec<LabeledWindow> {
    let rec = synth_generate(specs, seed, BENCH_SECONDS).unwrap();
    segment_windows(&rec, &WindowingConfig::default()).unwrap()
}

/// Four-class model trained on the benchmark, shared by several criteria.
fn trained_four_class() -> (ModelBundle, f64, Duration) {
    let start = Instant::now();
    let g = four_class_schema();
    let train = windows(&four_class_specs(), 1);
    let test = windows(&four_class_specs(), 2);
    let mut b = ModelBundle::init(g.clone(), bench_fe(), &[], 7).unwrap();
    let samples = MultiLabelSample::from_windows(&g, &train).unwrap();
    let report = train_joint(
        &mut b,
        &samples,
        Some(&test),
        &TrainConfig {
            epochs: BENCH_EPOCHS,
            learning_rate: BENCH_LR,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    (b, report.holdout.unwrap().accuracy, start.elapsed())
}

// ---- criteria ----------------------------------------------------------------

fn gradient_suite() -> Outcome {
    const EPS: f64 = 1e-5;
    const REL: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let (mut checked, mut skipped, mut worst, mut worst_abs, mut large) = (0usize, 0usize, 0.0f64, 0.0f64, 0usize);
    for net in 0..25 {
        let b = random_bundle(&mut rng, 3, 2);
        let window = random_window(&mut rng, b.feature_extractor().spec());
        let terminals = b.graph().composite_labels();
        let terminal = &terminals[rng.gen_range(0..terminals.len())];
        let sample = MultiLabelSample::new(b.graph(), window.clone(), terminal).unwrap();
        let mode = if net % 2 == 0 {
            AlphaMode::Predicted
        } else {
            AlphaMode::TeacherForced
        };
        let grads = joint_gradients(&b, &sample, mode, false).map_err(|e| e.to_string())?;
        let alphas: BTreeMap<TaskId, f64> = grads.loss.per_task.iter().map(|(t, l)| (*t, l.alpha)).collect();
        let labels: BTreeMap<TaskId, usize> = sample.labels.iter().map(|(t, l)| (*t, l.class())).collect();
        let analytic: Vec<f64> = grads
            .feature_extractor
            .unwrap()
            .iter()
            .chain(grads.heads.values().flatten())
            .flat_map(|g| g.data().iter().map(|&v| v as f64))
            .collect();

        let reference = RefNet::from_bundle(&b);
        let x: Vec<f64> = window.data().iter().map(|&v| v as f64).collect();
        ensure(analytic.len() == reference.params.len(), || {
            format!("network {net}: {} analytic vs {} parameters", analytic.len(), reference.params.len())
        })?;
        let mut base_pat = Vec::new();
        reference.loss(&reference.params, &x, &labels, &alphas, &mut base_pat);
        for i in 0..reference.params.len() {
            let mut p = reference.params.clone();
            p[i] += EPS;
            let (mut pp, mut pm) = (Vec::new(), Vec::new());
            let up = reference.loss(&p, &x, &labels, &alphas, &mut pp);
            p[i] -= 2.0 * EPS;
            let down = reference.loss(&p, &x, &labels, &alphas, &mut pm);
            if pp != base_pat || pm != base_pat {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[i];
            let diff = (a - numeric).abs();
            checked += 1;
            worst_abs = worst_abs.max(diff);
            let mag = a.abs().max(numeric.abs());
            if mag > 1e-3 {
                large += 1;
                worst = worst.max(diff / mag);
            }
            if diff <= FLOOR {
                continue;
            }
            let rel = diff / mag;
            ensure(rel < REL, || {
                format!("network {net} parameter {i}: analytic {a:e} numeric {numeric:e} rel {rel:e}")
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    ensure(skipped * 10 < checked, || format!("{skipped} kink-crossing coordinates of {checked}"))?;
    ensure(large > 0, || "every gradient is negligible".to_string())?;
    Ok(format!(
        "25 networks, {checked} coordinates ({large} with |g| > 1e-3), max rel err {worst:.2e}, \
         max abs err {worst_abs:.2e}, {skipped} kink coordinates skipped, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn alpha_normalization() -> Outcome {
    let g = activity_schema();
    let paths = g.paths().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let scale = rng.gen_range(0.1f32..10.0);
        let outputs: BTreeMap<TaskId, Tensor> = g
            .task_ids()
            .map(|t| {
                let k = g.labels(t).unwrap().k();
                let logits = Tensor::vector((0..k).map(|_| rng.gen_range(-scale..scale)).collect());
                (t, softmax(&logits).unwrap())
            })
            .collect();
        // direct path products
        let direct: f64 = paths
            .iter()
            .map(|p| p.steps.iter().map(|(t, i)| outputs[t].data()[*i] as f64).product::<f64>())
            .sum();
        // activation weights of the library
        let alphas = compute_alphas(&g, &outputs, None).map_err(|e| e.to_string())?;
        let via_alpha: f64 = g
            .terminal_labels()
            .iter()
            .map(|tl| alphas[&tl.task] * outputs[&tl.task].data()[tl.index] as f64)
            .sum();
        for s in [direct, via_alpha] {
            worst = worst.max((s - 1.0).abs());
            ensure((1.0 - 1e-6..=1.0 + 1e-6).contains(&s), || format!("trial {trial}: sum {s}"))?;
        }
    }
    Ok(format!("1000 assignments, max |sum - 1| = {worst:.2e}"))
}

fn placement_reproduction() -> Outcome {
    let counts: Vec<(String, usize)> = activity_schema()
        .composite_labels()
        .into_iter()
        .map(|l| {
            let c = match l.as_str() {
                "walking" => 959,
                "running" => 247,
                "standing" => 3,
                _ => 0,
            };
            (l, c)
        })
        .collect();
    let d = PlacementDecision::from_counts(counts).map_err(|e| e.to_string())?;
    ensure(d.total == 1209, || format!("total {}", d.total))?;
    let half = select_node(&d, 0.5).map_err(|e| e.to_string())?;
    let six = select_node(&d, 0.6).map_err(|e| e.to_string())?;
    ensure(half == ["walking"], || format!("delta 0.5 attached to {half:?}"))?;
    let mut six_set = six.clone();
    six_set.sort();
    ensure(six_set == ["running", "walking"], || format!("delta 0.6 attached to {six:?}"))?;
    Ok(format!(
        "f'-f'' = {:.4}; delta 0.5 -> {{{}}}; delta 0.6 -> {{{}}}",
        d.f_prime - d.f_second,
        half.join(", "),
        six.join(", ")
    ))
}

fn fe_immutability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut runs = 0;
    for trial in 0..20 {
        let mut b = random_bundle(&mut rng, 3, 2);
        let at = b.graph().composite_labels()[0].clone();
        let labels = vec!["new_a".to_string(), "new_b".to_string()];
        let t = add_task(&mut b, "new", &labels, &[at], HeadSpec::single_layer(2), trial).unwrap();
        let spec = b.feature_extractor().spec().clone();
        let samples = (0..rng.gen_range(1..12))
            .map(|i| {
                let mut w = random_window(&mut rng, &spec);
                let scale = [1.0f32, 1e3, 1e-3][trial as usize % 3];
                w.data_mut().iter_mut().for_each(|v| *v *= scale);
                (w, i % 2)
            })
            .collect();
        let data = AcquiredDataset::new(samples, 2).unwrap();
        let before = feature_extractor_digest(b.feature_extractor());
        let lr = [0.0f32, 0.01, 1.0, 1e30][trial as usize % 4];
        let cfg = HeadTrainConfig {
            epochs: 3,
            learning_rate: lr,
            seed: trial,
            shuffle: true,
        };
        // divergence is allowed; touching the extractor is not
        let _ = train_new_head(&mut b, t, &data, &cfg);
        let after = feature_extractor_digest(b.feature_extractor());
        ensure(before == after, || format!("trial {trial}: extractor digest changed"))?;
        runs += 1;
    }
    Ok(format!("{runs} head trainings, extractor SHA-256 unchanged"))
}

/// Element counts by walking tensors: rank ≥ 2 are weights, rank 1 biases.
fn tensor_sums(tensors: &[&Tensor]) -> (usize, usize) {
    tensors.iter().fold((0, 0), |(w, b), t| {
        if t.shape().len() >= 2 {
            (w + t.len(), b)
        } else {
            (w, b + t.len())
        }
    })
}

fn resource_decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let b = random_bundle(&mut rng, 5, 2);
        let r = compare_deployments(&b).map_err(|e| e.to_string())?;
        let (fe_w, fe_b) = tensor_sums(&b.feature_extractor().params());
        let heads: Vec<(usize, usize)> = b.heads().values().map(|h| tensor_sums(&h.params())).collect();
        let sum_w: usize = heads.iter().map(|h| h.0).sum();
        let sum_p: usize = heads.iter().map(|h| h.0 + h.1).sum();
        let n = heads.len();
        ensure(r.dendron.weights == fe_w + sum_w, || format!("trial {trial}: dendron weights"))?;
        ensure(r.dendron.params == fe_w + fe_b + sum_p, || format!("trial {trial}: dendron params"))?;
        ensure(
            r.hierarchical.weights == heads.iter().map(|h| fe_w + h.0).sum::<usize>(),
            || format!("trial {trial}: hierarchical weights"),
        )?;
        ensure(
            r.hierarchical.params == n * (fe_w + fe_b) + sum_p,
            || format!("trial {trial}: hierarchical params"),
        )?;

        // instrumented forward along every route
        let m = count_macc(&b).map_err(|e| e.to_string())?;
        let window = random_window(&mut rng, b.feature_extractor().spec());
        let mut worst_counted = 0u64;
        let mut worst_hier = 0u64;
        for path in b.graph().paths().unwrap() {
            let mut c = OpCounter::default();
            let (f, _) = b.feature_extractor().forward(&window, &mut c).unwrap();
            let fe_only = c.maccs;
            ensure(fe_only as usize == m.feature_extractor, || format!("trial {trial}: extractor MACC"))?;
            for t in path.tasks() {
                b.head(t).unwrap().forward(&f, &mut c).unwrap();
            }
            worst_counted = worst_counted.max(c.maccs);
            let steps = path.steps.len() as u64;
            worst_hier = worst_hier.max(c.maccs + (steps - 1) * fe_only);
        }
        ensure(r.dendron.macc_worst as u64 == worst_counted, || {
            format!("trial {trial}: formula {} vs counter {worst_counted}", r.dendron.macc_worst)
        })?;
        ensure(r.hierarchical.macc_worst as u64 == worst_hier, || {
            format!("trial {trial}: hierarchical {} vs counter {worst_hier}", r.hierarchical.macc_worst)
        })?;
        if n >= 2 && fe_w > 0 {
            ensure(r.dendron.weights < r.hierarchical.weights, || format!("trial {trial}: ordering"))?;
        }
    }
    Ok("100 random bundles: weight, parameter and worst-route MACC totals exact".into())
}

fn head_memory_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..50 {
        let base = random_bundle(&mut rng, 3, 2);
        let k = rng.gen_range(2..=4);
        let mut widths: Vec<usize> = (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(1..=16)).collect();
        widths.push(k);
        let spec = HeadSpec { layer_widths: widths.clone() };
        let labels: Vec<String> = (0..k).map(|j| format!("n{j}")).collect();
        let at = base.graph().composite_labels()[0].clone();
        let mut b = base.clone();
        let t = add_task(&mut b, "new", &labels, &[at], spec.clone(), trial).unwrap();
        let m_w = head_weight_memory(&spec, b.feature_extractor().feature_dim()).unwrap();

        // weight elements of the head as read back from the file
        let bytes = to_bytes(&b).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        let (w, _) = tensor_sums(&loaded.head(t).unwrap().params());
        ensure(m_w == w, || format!("trial {trial}: m_w {m_w} vs loaded {w}"))?;

        // and from the file size delta alone
        let before = to_bytes(&base).unwrap();
        let schema_delta = b.graph().to_schema_text().len() - base.graph().to_schema_text().len();
        let header_delta = 8 + 4 * widths.len();
        let float_bytes = bytes.len() - before.len() - schema_delta - header_delta;
        let from_size = float_bytes / 4 - widths.iter().sum::<usize>();
        ensure(m_w == from_size, || format!("trial {trial}: m_w {m_w} vs size delta {from_size}"))?;
    }
    Ok("50 head specs: m_w equals serialized weight elements".into())
}

fn end_to_end(acc: f64, elapsed: Duration) -> Outcome {
    ensure(acc >= 0.95, || format!("held-out accuracy {acc:.4} < 0.95"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "held-out accuracy {acc:.4} after {BENCH_EPOCHS} epochs in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn data_scarcity(base: &ModelBundle) -> Outcome {
    let classes = vec!["walk_up".to_string(), "walk_down".to_string()];
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let full = windows(&stairs_split_specs(), 100 + seed);
        let held = windows(&stairs_split_specs(), 200 + seed);
        let n = (full.len() as f64 * 0.1).round() as usize;
        let part: Vec<LabeledWindow> = full.iter().step_by(full.len() / n).take(n).cloned().collect();
        let data = AcquiredDataset::from_windows(&part, &classes).unwrap();
        let held = AcquiredDataset::from_windows(&held, &classes).unwrap();

        let mut d = base.clone();
        let decision = collect_placement_counts(&d, &data).unwrap().decide(0.5).unwrap();
        let t = add_task(&mut d, "stairs", &classes, &decision.attach_to, HeadSpec::single_layer(2), seed).unwrap();
        let cfg = HeadTrainConfig {
            epochs: BENCH_EPOCHS,
            learning_rate: BENCH_LR,
            seed,
            shuffle: true,
        };
        train_new_head(&mut d, t, &data, &cfg).unwrap();
        let head_only = head_accuracy(&d, t, &held).unwrap();

        let g = TaskGraph::new(vec![("stairs", vec!["walk_up", "walk_down"])]);
        let mut s = ModelBundle::init(g.clone(), bench_fe(), &[], seed).unwrap();
        let samples = MultiLabelSample::from_windows(&g, &part).unwrap();
        train_joint(
            &mut s,
            &samples,
            None,
            &TrainConfig {
                epochs: BENCH_EPOCHS,
                learning_rate: BENCH_LR,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let scratch = head_accuracy(&s, TaskId(1), &held).unwrap();
        rows.push((head_only, scratch));
    }
    let wins = rows.iter().filter(|(a, b)| a > b).count();
    let mean = |f: fn(&(f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let (ma, mb) = (mean(|r| r.0), mean(|r| r.1));
    let detail = format!("head-only {ma:.3} vs from-scratch {mb:.3}, head-only ahead in {wins}/5 seeds");
    ensure(ma > mb && wins >= 4, || detail.clone())?;
    Ok(detail)
}

fn cache_equivalence(base: &ModelBundle) -> Outcome {
    let classes = vec!["walk_up".to_string(), "walk_down".to_string()];
    let part: Vec<LabeledWindow> = windows(&stairs_split_specs(), 7).into_iter().step_by(5).collect();
    let data = AcquiredDataset::from_windows(&part, &classes).unwrap();
    for seed in 0..3u64 {
        let mut b = base.clone();
        let t = add_task(&mut b, "stairs", &classes, &["walk".to_string()], HeadSpec { layer_widths: vec![8, 2] }, seed)
            .unwrap();
        let cfg = HeadTrainConfig {
            epochs: 10,
            learning_rate: BENCH_LR,
            seed,
            shuffle: true,
        };
        let mut cached = b.clone();
        train_new_head(&mut cached, t, &data, &cfg).unwrap();
        train_new_head_uncached(&mut b, t, &data, &cfg).unwrap();
        let bits = |b: &ModelBundle| -> Vec<u32> {
            b.head(t)
                .unwrap()
                .params()
                .iter()
                .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        ensure(bits(&cached) == bits(&b), || format!("seed {seed}: heads differ"))?;
    }
    Ok(format!("3 seeds, {} samples: cached and recomputed heads bit-identical", data.len()))
}

fn serialization(trained: &ModelBundle) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bundles = vec![trained.clone()];
    bundles.extend((0..10).map(|_| random_bundle(&mut rng, 4, 2)));
    for (i, b) in bundles.iter().enumerate() {
        let le = to_bytes_with(b, FloatCodec::LeBytes).unwrap();
        let shift = to_bytes_with(b, FloatCodec::BitShift).unwrap();
        ensure(le == shift, || format!("bundle {i}: codecs disagree"))?;
        // written on one path, read and rewritten on the other
        let cross = to_bytes_with(&from_bytes_with(&le, FloatCodec::BitShift).unwrap(), FloatCodec::LeBytes).unwrap();
        ensure(cross == le, || format!("bundle {i}: cross-codec rewrite differs"))?;
        let p1 = dir.path().join(format!("{i}a.dndr"));
        let p2 = dir.path().join(format!("{i}b.dndr"));
        save_model(b, &p1).unwrap();
        save_model(&load_model(&p1).unwrap(), &p2).unwrap();
        ensure(std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(), || {
            format!("bundle {i}: save-load-save differs")
        })?;
    }
    Ok(format!("{} bundles byte-identical across both float codecs and save/load/save", bundles.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    };
    report(1, "gradient check", gradient_suite());
    report(2, "alpha normalization", alpha_normalization());
    report(3, "node selection example", placement_reproduction());
    report(4, "extractor immutability", fe_immutability());
    report(5, "resource decomposition", resource_decomposition());
    report(6, "new-head weight memory", head_memory_formula());
    let (trained, acc, elapsed) = trained_four_class();
    report(7, "synthetic end-to-end", end_to_end(acc, elapsed));
    report(8, "data-scarcity direction", data_scarcity(&trained));
    report(9, "feature cache equivalence", cache_equivalence(&trained));
    report(10, "serialization identity", serialization(&trained));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
