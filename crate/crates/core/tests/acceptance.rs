//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p resemote-core --test acceptance` runs everything, including
//! the full-size overfit run. Pass criterion numbers to run a subset, for
//! example `cargo test -p resemote-core --test acceptance -- 2 8 12`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resemote_core::autodiff::softmax_rows;
use resemote_core::checkpoint::{self, CheckpointInfo};
use resemote_core::config::RunConfig;
use resemote_core::data::{
    compare_counts, fer_csv_row, hflip, make_batches, parse_fer_csv, synthetic_dataset, DataRng, Dataset, DatasetKind,
    Sample, Split, FER_NATIVE_TO_INDEX,
};
use resemote_core::gradcheck::{self, GradCheck, Scale};
use resemote_core::metrics::ConfusionMatrix;
use resemote_core::nn::{Mode, ResidualBlock, SeBlock, ShortcutKind};
use resemote_core::optim::{cross_entropy, PlateauMode, PlateauScheduler, SgdState};
use resemote_core::train::{evaluate, Trainer};
use resemote_core::{Fault, Graph, ModelConfig, OpKind, ResEmoteNet, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_SHAPES: usize = 200;
const ORACLE_TOL: f64 = 1e-12;
const OVERFIT_EPOCHS: usize = 300;
const OVERFIT_LOSS: f64 = 0.05;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const CHANCE_BAND: (f64, f64) = (5.0, 25.0);
const LOSS_TOL: f64 = 1e-9;

fn randn(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(dims.to_vec(), 1.0, rng).unwrap()
}

fn dims4(t: &Tensor<f64>) -> [usize; 4] {
    t.dims().try_into().unwrap()
}

fn criterion_1() -> Outcome {
    Ok("full-corpus accuracy targets are out of scope; criteria 2-12 stand in for them".into())
}

fn primitives_for(op: OpKind) -> &'static [&'static str] {
    match op {
        OpKind::Conv2d => &["conv2d"],
        OpKind::MaxPool2d => &["max_pool2d"],
        OpKind::GlobalAvgPool => &["global_avg_pool"],
        OpKind::AdaptiveAvgPool => &["adaptive_avg_pool"],
        OpKind::Linear => &["linear"],
        OpKind::Relu => &["relu"],
        OpKind::Sigmoid => &["sigmoid"],
        OpKind::Add => &["add"],
        OpKind::Mul => &["mul"],
        OpKind::MulChannel => &["mul_broadcast_channel"],
        OpKind::BatchNorm => &["batch_norm_train", "batch_norm_eval"],
        OpKind::Reshape => &["reshape"],
        OpKind::Sum => &["sum"],
        OpKind::CrossEntropy => &["cross_entropy"],
        OpKind::Leaf => &[],
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run_suite(Scale::Small, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(report.passed(), "{report}");
    ensure!(
        report
            .components
            .iter()
            .all(|c| c.trials >= Scale::Small.trials() || c.name.starts_with("network")),
        "fewer than {} trials somewhere",
        Scale::Small.trials()
    );
    ensure!(elapsed < GRAD_BUDGET, "suite took {elapsed:?}");

    // The checker must notice a wrong backward pass in every op.
    for op in OpKind::ALL.iter().copied().filter(|&op| op != OpKind::Leaf) {
        let fault = Fault { op, scale: 2.0 };
        for name in primitives_for(op) {
            let r = gradcheck::run_component(&GradCheck::default().with_fault(Some(fault)), name, Scale::Tiny)
                .map_err(|e| e.to_string())?;
            ensure!(!r.passed, "fault in {op:?} went unnoticed by {name}");
        }
    }
    Ok(format!(
        "{} components, max rel err {:.2e}, {:.1}s; injected faults caught in every op",
        report.components.len(),
        report.max_rel_error(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc3);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_SHAPES {
        let (n, cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (stride, pad) = (rng.gen_range(1..=3), rng.gen_range(0..=2));
        let kh = rng.gen_range(1..=(h + 2 * pad).min(8));
        let kw = rng.gen_range(1..=(w + 2 * pad).min(8));
        let x = randn(&[n, cin, h, w], &mut rng).with_requires_grad(true);
        let wt = randn(&[cout, cin, kh, kw], &mut rng).with_requires_grad(true);
        let b = randn(&[cout], &mut rng).with_requires_grad(true);

        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(&x), g.leaf(&wt), g.leaf(&b));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).map_err(|e| e.to_string())?;
        let (expect, edims) = common::conv2d(
            x.values(),
            dims4(&x),
            wt.values(),
            dims4(&wt),
            Some(b.values()),
            stride,
            pad,
        );
        ensure!(g.dims(y) == edims, "conv2d shape {:?} vs {edims:?}", g.dims(y));
        worst = worst.max(common::max_abs_diff(g.value(y).values(), &expect));
        let r = randn(g.dims(y), &mut rng);
        let rv = g.leaf(&r);
        let p = g.mul(y, rv).unwrap();
        let loss = g.sum(p).unwrap();
        g.backward(loss).unwrap();
        let (dx, dw, db) =
            common::conv2d_grads(x.values(), dims4(&x), wt.values(), dims4(&wt), r.values(), stride, pad);
        worst = worst.max(common::max_abs_diff(g.grad(xv).unwrap(), &dx));
        worst = worst.max(common::max_abs_diff(g.grad(wv).unwrap(), &dw));
        worst = worst.max(common::max_abs_diff(g.grad(bv).unwrap(), &db));

        let (ph, pw) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let k = rng.gen_range(1..=ph.min(pw));
        let ps = rng.gen_range(1..=3);
        let xp = randn(&[n, cin, ph, pw], &mut rng);
        let mut g = Graph::no_grad();
        let xv = g.leaf(&xp);
        let mp = g.max_pool2d(xv, k, ps).unwrap();
        let (expect, edims) = common::max_pool2d(xp.values(), dims4(&xp), k, ps);
        ensure!(g.dims(mp) == edims, "max_pool2d shape");
        worst = worst.max(common::max_abs_diff(g.value(mp).values(), &expect));
        let gap = g.global_avg_pool(xv).unwrap();
        worst = worst.max(common::max_abs_diff(
            g.value(gap).values(),
            &common::global_avg_pool(xp.values(), dims4(&xp)),
        ));
        let (oh, ow) = (rng.gen_range(1..=ph), rng.gen_range(1..=pw));
        let ap = g.adaptive_avg_pool(xv, oh, ow).unwrap();
        worst = worst.max(common::max_abs_diff(
            g.value(ap).values(),
            &common::adaptive_avg_pool(xp.values(), dims4(&xp), oh, ow),
        ));

        let (rows, din, dout) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let xl = randn(&[rows, din], &mut rng);
        let wl = randn(&[dout, din], &mut rng);
        let bl = randn(&[dout], &mut rng);
        let (xv, wv, bv) = (g.leaf(&xl), g.leaf(&wl), g.leaf(&bl));
        let lin = g.linear(xv, wv, Some(bv)).unwrap();
        let expect = common::linear(xl.values(), rows, din, wl.values(), dout, Some(bl.values()));
        worst = worst.max(common::max_abs_diff(g.value(lin).values(), &expect));
    }
    ensure!(worst <= ORACLE_TOL, "max abs diff {worst:e}");
    Ok(format!("{ORACLE_SHAPES} shapes per op, max abs diff {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    let mut worst = 0.0f64;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for _ in 0..100 {
        let reduction = rng.gen_range(1..=4);
        let hidden = rng.gen_range(1..=4);
        let c = reduction * hidden;
        let dims = [rng.gen_range(1..=3), c, rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let x = randn(&dims, &mut rng);
        let w1 = randn(&[hidden, c], &mut rng);
        let w2 = randn(&[c, hidden], &mut rng);
        let se = SeBlock::from_weights(w1.clone(), w2.clone(), reduction).map_err(|e| e.to_string())?;
        let mut g = Graph::no_grad();
        let xv = g.leaf(&x);
        let gate = se.gate(&mut g, xv).unwrap();
        let y = se.forward(&mut g, xv).unwrap();
        let (expect, gates) = common::se_by_hand(x.values(), dims, w1.values(), w2.values(), hidden);
        worst = worst.max(common::max_abs_diff(g.value(y).values(), &expect));
        worst = worst.max(common::max_abs_diff(g.value(gate).values(), &gates));
        for &s in g.value(gate).values() {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    ensure!(worst <= ORACLE_TOL, "recomposition differs by {worst:e}");
    ensure!(lo > 0.0 && hi < 1.0, "gate range [{lo}, {hi}]");

    let x = Tensor::<f64>::randn([2, 8, 5, 5], 3.0, &mut rng).unwrap();
    let se = SeBlock::from_weights(Tensor::zeros([2, 8]).unwrap(), Tensor::zeros([8, 2]).unwrap(), 4).unwrap();
    let mut g = Graph::no_grad();
    let xv = g.leaf(&x);
    let y = se.forward(&mut g, xv).unwrap();
    let halved = g
        .value(y)
        .values()
        .iter()
        .zip(x.values())
        .all(|(o, i)| o.to_bits() == (0.5 * i).to_bits());
    ensure!(halved, "zero-weight SE is not exactly 0.5 x");
    Ok(format!(
        "max diff {worst:.1e}, gates in [{lo:.3e}, {:.3e}], zero weights give 0.5 x bitwise",
        hi
    ))
}

fn zero_branch(block: &mut ResidualBlock<f64>) {
    block.bn_b.gamma = Tensor::zeros(block.bn_b.gamma.dims().to_vec()).unwrap();
    block.bn_b.beta = Tensor::zeros(block.bn_b.beta.dims().to_vec()).unwrap();
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc5);
    for mode in [Mode::Eval, Mode::Train] {
        let mut block = ResidualBlock::<f64>::new(6, 6, 1, &mut rng).unwrap();
        zero_branch(&mut block);
        block.set_mode(mode);
        let x = randn(&[2, 6, 5, 5], &mut rng).map(f64::abs);
        let mut g = Graph::no_grad();
        let xv = g.leaf(&x);
        let y = match mode {
            Mode::Train => block.forward(&mut g, xv),
            Mode::Eval => block.forward_eval(&mut g, xv),
        }
        .unwrap();
        let same = g
            .value(y)
            .values()
            .iter()
            .zip(x.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "identity shortcut not bitwise in {mode:?} mode");
    }
    let mut block = ResidualBlock::<f64>::with_shortcut(4, 8, 2, ShortcutKind::Projection, &mut rng).unwrap();
    zero_branch(&mut block);
    block.set_mode(Mode::Eval);
    let x = randn(&[2, 4, 6, 6], &mut rng);
    let mut g = Graph::no_grad();
    let xv = g.leaf(&x);
    let y = block.forward_eval(&mut g, xv).unwrap();
    let s = block.shortcut_eval(&mut g, xv).unwrap();
    let r = g.relu(s).unwrap();
    ensure!(
        g.value(y).values() == g.value(r).values(),
        "projection output != relu(shortcut)"
    );
    Ok("identity shortcut bitwise in train and eval mode; projection equals relu(shortcut)".into())
}

fn criterion_6() -> Outcome {
    let mut cfg = RunConfig {
        epochs: OVERFIT_EPOCHS,
        ..RunConfig::default()
    };
    cfg.set("plateau_metric", "train_accuracy").map_err(|e| e.to_string())?;
    ensure!(
        cfg.batch_size == 16 && cfg.lr == 1e-3 && cfg.momentum == 0.9,
        "recipe defaults changed"
    );
    ensure!(cfg.model == ModelConfig::default(), "not the default architecture");
    let ds = synthetic_dataset(8, 3, 64, 7).map_err(|e| e.to_string())?;
    ensure!(ds.len() == 56, "fixture has {} samples", ds.len());
    let mut t = Trainer::<f32>::new(&cfg).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut last = String::new();
    for _ in 0..OVERFIT_EPOCHS {
        let s = t.run_epoch(&ds, None).map_err(|e| e.to_string())?;
        let acc = t
            .evaluate(&ds)
            .and_then(|cm| cm.accuracy())
            .map_err(|e| e.to_string())?;
        last = format!("epoch {} loss {:.4} train acc {acc:.2}", s.epoch, s.train_loss);
        if acc == 100.0 && s.train_loss < OVERFIT_LOSS {
            let elapsed = start.elapsed();
            ensure!(elapsed < OVERFIT_BUDGET, "{last} after {elapsed:?}");
            return Ok(format!(
                "{} params, {last}, {:.0}s",
                t.model.parameter_count(),
                elapsed.as_secs_f64()
            ));
        }
        ensure!(start.elapsed() < OVERFIT_BUDGET, "out of time at {last}");
    }
    Err(format!("not memorized after {OVERFIT_EPOCHS} epochs: {last}"))
}

fn criterion_7() -> Outcome {
    let ds = synthetic_dataset(8, 3, 64, 1234).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for seed in [0u64, 1, 2] {
        let cfg = ModelConfig {
            seed,
            ..ModelConfig::default()
        };
        let net = ResEmoteNet::<f32>::build(&cfg).map_err(|e| e.to_string())?;
        let cm = evaluate(&net, &ds).map_err(|e| e.to_string())?;
        let acc = cm.accuracy().map_err(|e| e.to_string())?;
        // Against balanced labels any prediction rule scores sum_k (n_k/N)(m_k/N).
        let expected: f64 = (0..7)
            .map(|k| cm.row_sums()[k] as f64 * cm.column_sums()[k] as f64)
            .sum::<f64>()
            * 100.0
            / (ds.len() * ds.len()) as f64;
        ensure!((expected - 100.0 / 7.0).abs() < 1e-9, "fixture is not balanced");
        ensure!(
            (CHANCE_BAND.0..=CHANCE_BAND.1).contains(&acc),
            "seed {seed}: accuracy {acc:.2} outside {CHANCE_BAND:?}"
        );
        rows.push(format!("{acc:.2}"));
    }
    Ok(format!("seeds 0,1,2 score {} (chance 14.29)", rows.join(", ")))
}

fn criterion_8() -> Outcome {
    let ln7 = 7f64.ln();
    for fill in [0.0, 3.7, -12.5] {
        let logits = Tensor::<f64>::full([5, 7], fill).unwrap();
        let mut g = Graph::no_grad();
        let lv = g.leaf(&logits);
        let loss = cross_entropy(&mut g, lv, &[0, 1, 2, 3, 6]).map_err(|e| e.to_string())?;
        ensure!(
            (loss.loss - ln7).abs() <= LOSS_TOL,
            "logits {fill}: CE {} vs ln 7",
            loss.loss
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let scale = rng.gen_range(0.1..100.0);
        let logits: Vec<f64> = (0..7 * 4).map(|_| rng.gen_range(-scale..scale)).collect();
        for row in softmax_rows(&logits, 7).chunks(7) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure!(worst <= LOSS_TOL, "softmax row sum off by {worst:e}");
    Ok(format!(
        "CE = ln 7 on uniform logits; softmax rows within {worst:.1e} of 1"
    ))
}

fn criterion_9() -> Outcome {
    let (lr, patience, min_lr) = (1e-3, 10, 1e-6);
    let mut s = PlateauScheduler::new(0.1, patience, min_lr, PlateauMode::Maximize).map_err(|e| e.to_string())?;
    let mut sgd = SgdState::<f32>::new(lr, 0.9, 0.0).map_err(|e| e.to_string())?;
    let mut lrs = Vec::new();
    for _ in 0..120 {
        s.step(50.0, &mut sgd).map_err(|e| e.to_string())?;
        lrs.push(sgd.lr);
    }
    // Epoch 1 sets the best; epochs 2..=11 are the patience window.
    ensure!(
        lrs[..=patience].iter().all(|&v| v == lr),
        "lr moved inside the patience window"
    );
    ensure!(
        lrs[patience + 1] == lr * 0.1,
        "first reduction gave {}",
        lrs[patience + 1]
    );
    ensure!(lrs.windows(2).all(|w| w[1] <= w[0]), "lr rose");
    ensure!(lrs.iter().all(|&v| v >= min_lr), "lr went below the floor");
    ensure!(
        *lrs.last().unwrap() == min_lr,
        "floor never reached: {}",
        lrs.last().unwrap()
    );

    let mut s = PlateauScheduler::new(0.1, 2, 0.0, PlateauMode::Minimize).unwrap();
    let mut sgd = SgdState::<f32>::new(lr, 0.9, 0.0).unwrap();
    for m in [1.0, 0.9, 0.8, 0.7] {
        ensure!(!s.step(m, &mut sgd).unwrap(), "improving loss reduced lr");
    }
    ensure!(sgd.lr == lr, "improving loss changed lr");
    Ok(format!(
        "lr {lr:e} -> {:e} after {patience} stale epochs, floor {min_lr:e} held",
        lrs[patience + 1]
    ))
}

fn criterion_10() -> Outcome {
    let truth = [1, 1, 1, 0, 0, 0, 0, 0, 0, 1];
    let pred = [1, 1, 1, 0, 0, 0, 0, 0, 1, 0];
    let mut cm = ConfusionMatrix::new(2);
    cm.update(&truth, &pred).unwrap();
    let ovr = cm.one_vs_rest(1);
    ensure!((ovr.tp, ovr.tn, ovr.fp, ovr.fn_) == (3, 5, 1, 1), "counts {ovr:?}");
    let acc = cm.accuracy().unwrap();
    ensure!(
        acc == 80.0 && ovr.accuracy() == 80.0,
        "binary accuracy {acc} / {}",
        ovr.accuracy()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0xacc10);
    for i in 0..1000 {
        let k = rng.gen_range(2..=9);
        let n = rng.gen_range(1..=300);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.update(&truth, &pred).unwrap();
        let acc = cm.accuracy().unwrap();
        let expect = common::brute_force_accuracy(&truth, &pred);
        ensure!((acc - expect).abs() <= ORACLE_TOL, "pair {i}: {acc} vs {expect}");
    }
    Ok("TP=3 TN=5 FP=1 FN=1 gives 80.0; 1000 random pairs match brute force".into())
}

fn criterion_11() -> Outcome {
    let usages = ["Training", "PublicTest", "PrivateTest"];
    let mut text = String::from("emotion,pixels,Usage\n");
    for r in 0..10 {
        let px: Vec<u8> = (0..2304).map(|j| ((37 * r + 11 * j) % 256) as u8).collect();
        text.push_str(&fer_csv_row(r % 7, &px, usages[r % 3]));
        text.push('\n');
    }
    let all = parse_fer_csv(text.as_bytes(), "fixture", None).map_err(|e| e.to_string())?;
    ensure!(all.len() == 10, "{} rows", all.len());
    for (r, s) in all.samples.iter().enumerate() {
        ensure!(s.pixels.dims() == [1, 48, 48], "row {r} dims {:?}", s.pixels.dims());
        ensure!(s.label == FER_NATIVE_TO_INDEX[r % 7], "row {r} label {}", s.label);
        for (j, &v) in s.pixels.values().iter().enumerate() {
            let expect = ((37 * r + 11 * j) % 256) as f32 / 255.0;
            ensure!(v == expect, "row {r} pixel {j}: {v} vs {expect}");
        }
    }
    let train = parse_fer_csv(text.as_bytes(), "fixture", Some(Split::Train)).unwrap();
    let test = parse_fer_csv(text.as_bytes(), "fixture", Some(Split::Test)).unwrap();
    ensure!(
        (train.len(), test.len()) == (4, 6),
        "split sizes {} / {}",
        train.len(),
        test.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0xacc11);
    for _ in 0..200 {
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=16), rng.gen_range(1..=16));
        let t = Tensor::<f32>::from_vec([c, h, w], (0..c * h * w).map(|_| rng.gen()).collect()).unwrap();
        let back = hflip(&hflip(&t).unwrap()).unwrap();
        ensure!(back.values() == t.values(), "flip twice changed a {c}x{h}x{w} image");
    }

    let ds = synthetic_dataset(3, 1, 8, 11).unwrap();
    let mut manifest: Vec<&str> = ds.samples.iter().map(|s| s.source_id.as_str()).collect();
    manifest.sort_unstable();
    let mut data_rng = DataRng::new(5);
    for epoch in 0..5 {
        let batches = make_batches(ds.len(), 4, &mut data_rng, true).unwrap();
        let mut seen: Vec<&str> = batches
            .iter()
            .flat_map(|b| b.indices.iter().map(|&i| ds.samples[i].source_id.as_str()))
            .collect();
        seen.sort_unstable();
        ensure!(seen == manifest, "epoch {epoch} batches differ from the manifest");
    }

    let reference = DatasetKind::RafDb.reference_counts(Split::Train).unwrap();
    ensure!(reference[3] == 4772, "RAF-DB train Happy reference {}", reference[3]);
    let samples = reference
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| {
            (0..n).map(move |i| Sample {
                pixels: Tensor::zeros([1, 1, 1]).unwrap(),
                label,
                source_id: format!("{label}:{i}"),
            })
        })
        .collect();
    let ds = Dataset {
        name: "rafdb".into(),
        split: Split::Train,
        samples,
    };
    let cmp = compare_counts(DatasetKind::RafDb, &ds).unwrap();
    ensure!(cmp.matches(), "count report disagrees with itself:\n{cmp}");
    ensure!(cmp.to_string().contains("4772"), "report lacks the Happy count:\n{cmp}");
    Ok("10-row CSV tensors exact, flip involutive, 5 epochs cover the manifest, RAF-DB counts reported".into())
}

fn bitwise_equal(a: &ResEmoteNet<f64>, b: &ResEmoteNet<f64>) -> bool {
    a.named_tensors()
        .iter()
        .zip(b.named_tensors())
        .all(|((na, _, ta), (nb, _, tb))| {
            na == &nb
                && ta
                    .values()
                    .iter()
                    .zip(tb.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn criterion_12() -> Outcome {
    let run_config = |seed: u64| {
        let mut cfg = RunConfig {
            model: ModelConfig {
                num_classes: 7,
                ..ModelConfig::tiny()
            },
            batch_size: 4,
            epochs: 3,
            weight_decay: 1e-4,
            ..RunConfig::default()
        };
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg
    };
    let ds = synthetic_dataset(2, 3, 16, 4).unwrap();
    let first_loss = |seed| {
        Trainer::<f32>::new(&run_config(seed))
            .unwrap()
            .run_epoch(&ds, None)
            .unwrap()
            .train_loss
    };
    let (a, b) = (first_loss(5), first_loss(5));
    ensure!(a.to_bits() == b.to_bits(), "same seed gave {a} and {b}");
    ensure!(a != first_loss(6), "different seeds gave the same loss");

    for seed in 0..8 {
        let cfg = ModelConfig {
            seed,
            ..ModelConfig::tiny()
        };
        let net = ResEmoteNet::<f32>::build(&cfg).unwrap();
        let info = CheckpointInfo {
            epoch: seed as usize,
            best_metric: Some(12.5),
            run_config: None,
        };
        let bytes = checkpoint::to_bytes(&net, &info, None).map_err(|e| e.to_string())?;
        let back = checkpoint::from_bytes::<f32>(&bytes, Some(&cfg)).map_err(|e| e.to_string())?;
        for ((na, ta), (nb, tb)) in net.parameters().iter().zip(back.model.parameters()) {
            let same = na == &nb
                && ta
                    .values()
                    .iter()
                    .zip(tb.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure!(same, "seed {seed}: {na} changed in the roundtrip");
        }
        ensure!(
            checkpoint::to_bytes(&back.model, &back.info, None).unwrap() == bytes,
            "re-encoding differs"
        );
    }

    let cfg = run_config(17);
    let mut straight = Trainer::<f64>::new(&cfg).unwrap();
    for _ in 0..3 {
        straight.run_epoch(&ds, Some(&ds)).unwrap();
    }
    let mut first = Trainer::<f64>::new(&cfg).unwrap();
    for _ in 0..2 {
        first.run_epoch(&ds, Some(&ds)).unwrap();
    }
    let bytes = checkpoint::to_bytes(&first.model, &first.checkpoint_info(), Some(&first.resume_state())).unwrap();
    drop(first);
    let loaded = checkpoint::from_bytes::<f64>(&bytes, Some(&cfg.model)).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(&cfg, loaded).map_err(|e| e.to_string())?;
    resumed.run_epoch(&ds, Some(&ds)).unwrap();
    ensure!(
        bitwise_equal(&straight.model, &resumed.model),
        "resumed parameters differ"
    );
    ensure!(straight.sgd == resumed.sgd, "momentum buffers differ");
    ensure!(straight.rng.state() == resumed.rng.state(), "data RNG differs");
    Ok("epoch-1 loss reproducible, 8 checkpoints bitwise, 2+1 resume equals 3 straight".into())
}

const CRITERIA: [(&str, fn() -> Outcome); 12] = [
    ("full-corpus reproduction", criterion_1),
    ("gradient integrity", criterion_2),
    ("oracle equivalence", criterion_3),
    ("SE semantics", criterion_4),
    ("residual identity", criterion_5),
    ("recipe overfit", criterion_6),
    ("chance-level sanity", criterion_7),
    ("loss analytics", criterion_8),
    ("scheduler contract", criterion_9),
    ("accuracy metric", criterion_10),
    ("data fidelity", criterion_11),
    ("determinism and persistence", criterion_12),
];

fn main() -> ExitCode {
    // Flags from the test runner (such as --nocapture) are ignored; bare numbers select criteria.
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match (&outcome, n) {
            (Ok(d), 1) => ("N/A ", d),
            (Ok(d), _) => ("PASS", d),
            (Err(d), _) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag} {name:<28} {detail} [{secs:.1}s]");
        if outcome.is_err() {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
