//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Run with `--nocapture` to see the report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synalign::checkpoint::{load_checkpoint, to_bytes};
use synalign::config::RunConfig;
use synalign::encoder::{init_model, EncoderConfig, EncoderModel};
use synalign::experiment::evaluate_model;
use synalign::linker::{build_index, read_embeddings, topk, LinkIndex};
use synalign::losses::{Loss, LossKind, LossParams};
use synalign::matrix::Matrix;
use synalign::metric::{mine_hard_pairs, similarity_matrix, MinedPairs, SimilarityBundle};
use synalign::ontology::{normalize_name, MentionSet, Ontology};
use synalign::pairgen::{generate_pairs, read_pairs, write_pairs, PairList};
use synalign::synth::generate;
use synalign::trainer::{mean_batch_loss, pretrain, TrainConfig, TrainOutcome};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// shared helpers

const FD_H: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const KINK: f64 = 1e-3;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `B` labels drawn from `k` classes with every class used at least twice.
fn balanced_labels(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..b).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

fn loss_value(loss: &Loss, x: &Matrix, labels: &[usize], pairs: &MinedPairs) -> f64 {
    let bundle = similarity_matrix(x, labels).unwrap();
    loss.similarity_grad(&bundle, pairs).unwrap().0
}

/// Hinge arguments of `kind` for the mined pairs; a batch is only used when
/// all of them are at least `KINK` away from zero.
fn clear_of_kinks(kind: LossKind, params: &LossParams, b: &SimilarityBundle, pairs: &MinedPairs) -> bool {
    let s = |i: usize, j: usize| b.sim[(i, j)];
    let d = |i: usize, j: usize| (2.0 - 2.0 * s(i, j)).max(0.0).sqrt();
    let mut args = Vec::new();
    for a in 0..b.len() {
        let pos = &pairs.positives[a];
        let neg = &pairs.negatives[a];
        match kind {
            LossKind::Cosine => args.extend(neg.iter().map(|&n| s(a, n) - params.margin)),
            LossKind::Triplet => {
                for &p in pos {
                    args.extend(neg.iter().map(|&n| d(a, p) - d(a, n) + params.margin));
                }
            }
            LossKind::Circle => {
                args.extend(neg.iter().map(|&n| s(a, n) + params.m));
                args.extend(pos.iter().map(|&p| 1.0 + params.m - s(a, p)));
            }
            LossKind::LiftedStructure => {
                for &p in pos.iter().filter(|&&p| p > a) {
                    let mut xs: Vec<f64> = neg.iter().map(|&n| params.alpha - d(a, n)).collect();
                    xs.extend(pairs.negatives[p].iter().map(|&n| params.alpha - d(p, n)));
                    if xs.is_empty() {
                        continue;
                    }
                    let lse = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
                    args.push(d(a, p) + lse);
                }
            }
            _ => {}
        }
        // distance slopes are singular at D = 0
        args.extend(pos.iter().chain(neg).map(|&j| d(a, j)));
    }
    args.iter().all(|x| x.abs() >= KINK)
}

// ---------------------------------------------------------------------------
// 1. loss gradients against finite differences

fn criterion_1() -> Check {
    let (b, dim, k) = (16, 8, 4);
    let mut worst = 0.0f64;
    let mut resampled = 0usize;
    for kind in LossKind::ALL {
        let params = LossParams::defaults(kind);
        let loss = Loss::new(params.clone()).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + kind as u64);
        let mut done = 0;
        while done < 50 {
            let x = random_matrix(&mut rng, b, dim);
            let labels = balanced_labels(&mut rng, b, k);
            let bundle = similarity_matrix(&x, &labels).map_err(err)?;
            let pairs = mine_hard_pairs(&bundle, 0.2).map_err(err)?;
            if pairs.positive_count() == 0 || !clear_of_kinks(kind, &params, &bundle, &pairs) {
                resampled += 1;
                continue;
            }
            let analytic = loss.compute(&bundle, &pairs).map_err(err)?.grad_embeddings;
            for idx in 0..b * dim {
                let mut plus = x.clone();
                plus.as_mut_slice()[idx] += FD_H;
                let mut minus = x.clone();
                minus.as_mut_slice()[idx] -= FD_H;
                let fd = (loss_value(&loss, &plus, &labels, &pairs)
                    - loss_value(&loss, &minus, &labels, &pairs))
                    / (2.0 * FD_H);
                let e = rel_err(analytic.as_slice()[idx], fd);
                worst = worst.max(e);
                ensure(
                    e <= FD_TOL,
                    format!("{} batch {done} coord {idx}: rel err {e:.3e}", kind.as_str()),
                )?;
            }
            done += 1;
        }
    }
    Ok(format!(
        "7 losses x 50 batches, max rel err {worst:.2e} (tol {FD_TOL:.0e}), {resampled} batches resampled near kinks"
    ))
}

// ---------------------------------------------------------------------------
// 2. end-to-end gradients into the encoder parameters

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(len);
    (0..n)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
        .collect()
}

fn encoder_loss(model: &EncoderModel, names: &[String], labels: &[usize], loss: &Loss, pairs: &MinedPairs) -> f64 {
    let out = model.encode(names).unwrap();
    loss_value(loss, &out, labels, pairs)
}

fn criterion_2() -> Check {
    let config = EncoderConfig {
        vocab_buckets: 40,
        embed_dim: 8,
        init_scale: 0.5,
        seed: 7,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for kind in LossKind::ALL {
        let params = LossParams::defaults(kind);
        let loss = Loss::new(params.clone()).map_err(err)?;
        let mut done = 0;
        while done < 10 {
            let mut model = init_model(&EncoderConfig {
                seed: rng.gen(),
                ..config.clone()
            })
            .map_err(err)?;
            model.proj_bias.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
            let names: Vec<String> = (0..16).map(|_| random_word(&mut rng, b"abcdefgh", 2..=12)).collect();
            let labels = balanced_labels(&mut rng, 16, 4);
            let (out, cache) = model.encode_batch(&names).map_err(err)?;
            let bundle = similarity_matrix(&out, &labels).map_err(err)?;
            let pairs = mine_hard_pairs(&bundle, 0.2).map_err(err)?;
            if pairs.positive_count() == 0 || !clear_of_kinks(kind, &params, &bundle, &pairs) {
                continue;
            }
            let g_out = loss.compute(&bundle, &pairs).map_err(err)?.grad_embeddings;
            let grads = model.backward_batch(&cache, &g_out).map_err(err)?;

            let mut analytic = Vec::new();
            for r in 0..config.vocab_buckets {
                match grads.embedding_rows.get(&r) {
                    Some(row) => analytic.extend_from_slice(row),
                    None => analytic.extend(std::iter::repeat(0.0).take(config.embed_dim)),
                }
            }
            analytic.extend_from_slice(grads.proj_weight.as_slice());
            analytic.extend_from_slice(&grads.proj_bias);

            let n_emb = model.embedding_table.as_slice().len();
            let n_w = model.proj_weight.as_slice().len();
            let perturbed = |idx: usize, delta: f64| {
                let mut m = model.clone();
                if idx < n_emb {
                    m.embedding_table.as_mut_slice()[idx] += delta;
                } else if idx < n_emb + n_w {
                    m.proj_weight.as_mut_slice()[idx - n_emb] += delta;
                } else {
                    m.proj_bias[idx - n_emb - n_w] += delta;
                }
                m
            };
            for (idx, &a) in analytic.iter().enumerate() {
                let fd = (encoder_loss(&perturbed(idx, FD_H), &names, &labels, &loss, &pairs)
                    - encoder_loss(&perturbed(idx, -FD_H), &names, &labels, &loss, &pairs))
                    / (2.0 * FD_H);
                let e = rel_err(a, fd);
                worst = worst.max(e);
                ensure(
                    e <= FD_TOL,
                    format!("{} batch {done} param {idx}: rel err {e:.3e}", kind.as_str()),
                )?;
                checked += 1;
            }
            done += 1;
        }
    }
    Ok(format!(
        "7 losses x 10 batches, {checked} parameter derivatives, max rel err {worst:.2e} (tol {FD_TOL:.0e})"
    ))
}

// ---------------------------------------------------------------------------
// 3. miner against the cubic triplet enumeration

fn brute_force_mine(sim: &Matrix, labels: &[usize], lambda: f64) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let b = labels.len();
    let d = |i: usize, j: usize| (2.0 - 2.0 * sim[(i, j)]).max(0.0).sqrt();
    let mut pos = vec![BTreeSet::new(); b];
    let mut neg = vec![BTreeSet::new(); b];
    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..b {
                if labels[n] == labels[a] {
                    continue;
                }
                if d(a, p) + lambda > d(a, n) {
                    pos[a].insert(p);
                    neg[a].insert(n);
                }
            }
        }
    }
    let flat = |v: Vec<BTreeSet<usize>>| v.into_iter().map(|s| s.into_iter().collect()).collect();
    (flat(pos), flat(neg))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut triplet_sets = 0usize;
    for &lambda in &[0.1, 0.2, 0.3] {
        for batch in 0..100 {
            let b = rng.gen_range(2..=32);
            let classes = rng.gen_range(1..=6);
            let dim = if batch % 3 == 0 { 2 } else { 8 };
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
            let x = random_matrix(&mut rng, b, dim);
            let bundle = similarity_matrix(&x, &labels).map_err(err)?;
            let mined = mine_hard_pairs(&bundle, lambda).map_err(err)?;
            let (pos, neg) = brute_force_mine(&bundle.sim, &labels, lambda);
            ensure(
                mined.positives == pos && mined.negatives == neg,
                format!("lambda {lambda} batch {batch} (B={b}) differs from brute force"),
            )?;
            triplet_sets += mined.positive_count() + mined.negative_count();
        }
    }
    Ok(format!(
        "300 batches (100 per lambda in {{0.1,0.2,0.3}}), {triplet_sets} mined indices, all sets equal"
    ))
}

// ---------------------------------------------------------------------------
// 4. top-k against an exhaustive scan

fn exhaustive_topk(index: &LinkIndex, q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = index
        .unit_embeddings
        .iter_rows()
        .enumerate()
        .map(|(i, row)| (i, row.iter().zip(q).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alphabet = b"abcdefghijklmnop ";
    let mut records = Vec::new();
    // a narrow alphabet and short names give repeated names across concepts
    for i in 0..5000 {
        let cui = format!("C{:05}", i % 1700);
        let name = random_word(&mut rng, alphabet, 2..=9);
        records.push((cui, name));
    }
    let ontology = Ontology::from_records(records);
    let model = init_model(&EncoderConfig {
        embed_dim: 32,
        seed: 4,
        ..EncoderConfig::default()
    })
    .map_err(err)?;
    let index = build_index(&model, &ontology, 1024).map_err(err)?;
    let n = index.len();
    ensure(n >= 4900, format!("index only has {n} names"))?;
    let mut ties = 0usize;
    for q in 0..1000 {
        let text = if q % 10 == 0 {
            ontology.records()[rng.gen_range(0..n)].name.to_uppercase()
        } else {
            random_word(&mut rng, alphabet, 1..=12)
        };
        let k = match q % 100 {
            0 => n,
            _ => rng.gen_range(1..=25),
        };
        let got = topk(&index, &text, &model, k).map_err(err)?;
        let raw = model.encode(&[normalize_name(&text)]).map_err(err)?;
        let norm = raw.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        let qv: Vec<f64> = raw.row(0).iter().map(|v| v / norm).collect();
        let want = exhaustive_topk(&index, &qv, k);
        ensure(got.ranked.len() == want.len(), format!("query {q}: wrong length"))?;
        for (r, (c, &(row, sim))) in got.ranked.iter().zip(&want).enumerate() {
            ensure(
                c.row == row && (c.similarity - sim).abs() <= 1e-12,
                format!(
                    "query {q} rank {r}: got ({}, {}), want ({row}, {sim})",
                    c.row, c.similarity
                ),
            )?;
            ensure(
                c.name == index.names[row] && c.cui == index.cuis[row],
                format!("query {q} rank {r}: name/cui mismatch"),
            )?;
        }
        ties += got
            .ranked
            .windows(2)
            .filter(|w| w[0].similarity == w[1].similarity)
            .count();
    }
    Ok(format!(
        "1000 queries over {n} names, rows and similarities match ({ties} exact ties resolved by row)"
    ))
}

// ---------------------------------------------------------------------------
// benchmark fixture shared by 5, 6 and 8

fn bench_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("benchmarks/synthetic.conf")
}

struct Bench {
    cfg: RunConfig,
    ontology: Ontology,
    test: MentionSet,
    pairs: PairList,
    init: EncoderModel,
    train: TrainConfig,
    ibs: usize,
}

fn bench() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = RunConfig::load(&bench_config_path()).unwrap();
        let data = generate(&cfg.synth().unwrap()).unwrap();
        let train = cfg.train().unwrap();
        let pairs = generate_pairs(&data.dictionary, train.pair_cap, cfg.seed()).unwrap();
        let init = init_model(&cfg.encoder().unwrap()).unwrap();
        Bench {
            ibs: cfg.index_batch_size().unwrap(),
            ontology: data.dictionary,
            test: data.test_mentions,
            pairs,
            init,
            train,
            cfg,
        }
    })
}

fn baseline_acc() -> f64 {
    static A: OnceLock<f64> = OnceLock::new();
    *A.get_or_init(|| {
        let b = bench();
        evaluate_model(&b.init, &b.ontology, &b.test, b.ibs).unwrap().acc_at_1
    })
}

fn trained(mining: bool) -> &'static (TrainOutcome, f64) {
    static ON: OnceLock<(TrainOutcome, f64)> = OnceLock::new();
    static OFF: OnceLock<(TrainOutcome, f64)> = OnceLock::new();
    let cell = if mining { &ON } else { &OFF };
    cell.get_or_init(|| {
        let b = bench();
        let cfg = TrainConfig {
            mining_enabled: mining,
            ..b.train.clone()
        };
        let out = pretrain(&b.pairs, b.init.clone(), &cfg).unwrap();
        let acc = evaluate_model(&out.model, &b.ontology, &b.test, b.ibs)
            .unwrap()
            .acc_at_1;
        (out, acc)
    })
}

// ---------------------------------------------------------------------------
// 5. synthetic benchmark gain

fn criterion_5() -> Check {
    let b = bench();
    ensure(
        b.train.loss.kind == LossKind::MultiSimilarity
            && b.train.loss.alpha == 2.0
            && b.train.loss.beta == 50.0
            && b.train.loss.epsilon == 0.5
            && b.train.mining_enabled
            && b.train.lambda == 0.2
            && b.train.max_iterations == Some(500),
        "shipped config does not match the benchmark definition",
    )?;
    let spec = b.cfg.synth().map_err(err)?;
    ensure(
        spec.n_concepts == 200 && spec.synonyms_per_concept == 6 && spec.holdout_per_concept == 1,
        "shipped synthetic data spec differs from 200 x 6, 1 held out",
    )?;
    let base = baseline_acc();
    let (outcome, acc) = trained(true);
    ensure(outcome.log.len() == 500, format!("{} iterations, want 500", outcome.log.len()))?;
    let gain = acc - base;
    ensure(
        gain >= 0.20,
        format!("acc@1 {acc:.4} vs untrained {base:.4}: gain {gain:.4} < 0.20"),
    )?;
    Ok(format!(
        "seed {}: untrained acc@1 {base:.4}, trained {acc:.4}, gain {:+.1} points (need >= 20)",
        b.cfg.seed(),
        gain * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 6. mining ablation direction

fn criterion_6() -> Check {
    let b = bench();
    let (on, acc_on) = trained(true);
    let (off, acc_off) = trained(false);
    // both final models scored with the same mined-pair objective on the same batches
    let eval_cfg = TrainConfig {
        mining_enabled: true,
        ..b.train.clone()
    };
    let epoch_seed = 0x5eed;
    let loss_on = mean_batch_loss(&on.model, &b.pairs, &eval_cfg, epoch_seed).map_err(err)?;
    let loss_off = mean_batch_loss(&off.model, &b.pairs, &eval_cfg, epoch_seed).map_err(err)?;
    let summary = format!(
        "acc@1 on {acc_on:.4} / off {acc_off:.4}; mined MS loss on {loss_on:.5} / off {loss_off:.5}"
    );
    ensure(*acc_on >= *acc_off, format!("accuracy direction reversed: {summary}"))?;
    ensure(loss_on <= loss_off, format!("loss direction reversed: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// CLI helpers

fn cli(args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_synalign"))
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "synalign {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data and pair list written by the CLI from the shipped config.
fn cli_workspace(dir: &Path) -> std::result::Result<(), String> {
    let conf = bench_config_path();
    cli(&["synth", "--config", s(&conf), "--out", s(&dir.join("data"))])?;
    cli(&[
        "prepare-pairs",
        "--config",
        s(&conf),
        "--dict",
        s(&dir.join("data/dictionary.tsv")),
        "--out",
        s(&dir.join("pairs.tsv")),
    ])?;
    Ok(())
}

// ---------------------------------------------------------------------------
// 7. loss-compare harness

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    cli_workspace(dir.path())?;
    let conf = bench_config_path();
    let table_path = dir.path().join("compare.tsv");
    let stdout = cli(&[
        "loss-compare",
        "--config",
        s(&conf),
        "--pairs",
        s(&dir.path().join("pairs.tsv")),
        "--dict",
        s(&dir.path().join("data/dictionary.tsv")),
        "--mentions",
        s(&dir.path().join("data/test_mentions.tsv")),
        "--out",
        s(&table_path),
    ])?;
    let written = std::fs::read_to_string(&table_path).map_err(err)?;
    ensure(written == stdout, "written table differs from stdout")?;
    let baseline: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("# untrained acc@1="))
        .and_then(|r| r.split_whitespace().next())
        .ok_or("no untrained baseline line")?
        .parse()
        .map_err(err)?;
    let rows: Vec<Vec<&str>> = stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').collect())
        .collect();
    ensure(rows.len() == 7, format!("{} rows, want 7", rows.len()))?;
    let kinds: BTreeSet<&str> = rows.iter().map(|r| r[0]).collect();
    let expected: BTreeSet<&str> = LossKind::ALL.iter().map(|k| k.as_str()).collect();
    ensure(kinds == expected, format!("row kinds {kinds:?}"))?;
    let mut worst = f64::INFINITY;
    for r in &rows {
        let acc: f64 = r[2].parse().map_err(err)?;
        ensure(acc >= baseline, format!("{} acc@1 {acc} < untrained {baseline}", r[0]))?;
        worst = worst.min(acc);
    }
    Ok(format!(
        "7 rows, untrained acc@1 {baseline:.4}, lowest trained acc@1 {worst:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

fn read(p: &Path) -> std::result::Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    cli_workspace(d)?;
    let conf = bench_config_path();
    let dict = d.join("data/dictionary.tsv");
    let test = d.join("data/test_mentions.tsv");
    let train = d.join("data/train_mentions.tsv");
    let pairs = d.join("pairs.tsv");

    for run in ["a", "b"] {
        let ckpt = d.join(format!("{run}.ckpt"));
        let common = ["--config", s(&conf), "--set", "max_iterations=40"];
        let mut args = vec!["pretrain", "--pairs", s(&pairs), "--out", s(&ckpt)];
        args.extend(common);
        cli(&args)?;
        let ft = d.join(format!("{run}.ft.ckpt"));
        let mut args = vec![
            "finetune",
            "--mentions",
            s(&train),
            "--dict",
            s(&dict),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&ft),
        ];
        args.extend(common);
        cli(&args)?;
        cli(&["evaluate", "--checkpoint", s(&ft), "--dict", s(&dict), "--mentions", s(&test)])?;
        let emb = d.join(format!("{run}.emb.tsv"));
        cli(&["embed", "--checkpoint", s(&ft), "--dict", s(&dict), "--out", s(&emb)])?;
    }
    let mut compared = 0;
    for suffix in [
        ".ckpt",
        ".ckpt.log.csv",
        ".ckpt.config",
        ".ft.ckpt",
        ".ft.ckpt.log.csv",
        ".ft.ckpt.eval.json",
        ".emb.tsv",
    ] {
        let a = read(&d.join(format!("a{suffix}")))?;
        let b = read(&d.join(format!("b{suffix}")))?;
        ensure(!a.is_empty() && a == b, format!("repeated runs differ in *{suffix}"))?;
        compared += 1;
    }

    // checkpoint round trip
    let bytes = read(&d.join("a.ft.ckpt"))?;
    let (model, opt) = load_checkpoint(&d.join("a.ft.ckpt")).map_err(err)?;
    ensure(to_bytes(&model, opt.as_ref()) == bytes, "checkpoint re-serialization differs")?;

    // in-process training matches the CLI checkpoint bit for bit
    let b = bench();
    let cfg = TrainConfig {
        max_iterations: Some(40),
        ..b.train.clone()
    };
    let cli_pairs = read_pairs(&d.join("pairs.tsv")).map_err(err)?;
    ensure(cli_pairs.pairs == b.pairs.pairs, "CLI pair list differs from library pair list")?;
    let out = pretrain(&b.pairs, b.init.clone(), &cfg).map_err(err)?;
    ensure(
        to_bytes(&out.model, Some(&out.optimizer)) == read(&d.join("a.ckpt"))?,
        "library and CLI checkpoints differ",
    )?;

    // pair list round trip
    let p2 = d.join("pairs2.tsv");
    write_pairs(&cli_pairs, &p2).map_err(err)?;
    ensure(read(&p2)? == read(&d.join("pairs.tsv"))?, "pair list rewrite differs")?;

    // embedding TSV round trip
    let index = build_index(&model, &b.ontology, b.ibs).map_err(err)?;
    let back = read_embeddings(&d.join("a.emb.tsv")).map_err(err)?;
    ensure(back.names == index.names && back.cuis == index.cuis, "embedding names differ")?;
    let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(
        bits(&back.unit_embeddings) == bits(&index.unit_embeddings),
        "embedding values differ after round trip",
    )?;
    Ok(format!(
        "{compared} artifacts bit-identical across runs; checkpoint, pair and embedding round trips exact"
    ))
}

// ---------------------------------------------------------------------------
// 9. pair-generation law

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0usize;
    for trial in 0..100 {
        let n_concepts = rng.gen_range(1..=30);
        let mut records = Vec::new();
        for c in 0..n_concepts {
            let n = rng.gen_range(1..=20);
            for _ in 0..n {
                records.push((format!("C{c}"), random_word(&mut rng, b"abcdef", 1..=6)));
            }
        }
        let ontology = Ontology::from_records(records);
        let names: BTreeMap<&str, BTreeSet<&str>> = ontology
            .concepts()
            .map(|(cui, idx)| {
                let set = idx.iter().map(|&i| ontology.records()[i].name.as_str()).collect();
                (cui, set)
            })
            .collect();
        let pairs = generate_pairs(&ontology, 50, rng.gen()).map_err(err)?;
        let mut seen = BTreeSet::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &pairs.pairs {
            let syn = names.get(p.cui.as_str()).ok_or(format!("trial {trial}: unknown cui {}", p.cui))?;
            ensure(
                p.name1 != p.name2 && syn.contains(p.name1.as_str()) && syn.contains(p.name2.as_str()),
                format!("trial {trial}: pair {p:?} is not label-consistent"),
            )?;
            let key = (p.cui.clone(), p.name1.clone().min(p.name2.clone()), p.name1.clone().max(p.name2.clone()));
            ensure(seen.insert(key), format!("trial {trial}: duplicate pair {p:?}"))?;
            *counts.entry(p.cui.as_str()).or_default() += 1;
        }
        for (cui, syn) in &names {
            let n = syn.len();
            let want = (n * n.saturating_sub(1) / 2).min(50);
            let got = counts.get(cui).copied().unwrap_or(0);
            ensure(got == want, format!("trial {trial}: {cui} has {got} pairs, want {want}"))?;
        }
        total += pairs.len();
    }
    Ok(format!("100 ontologies, {total} pairs, counts min(C(n,2), 50) and label-consistent"))
}

// ---------------------------------------------------------------------------
// 10. MS spot values

fn criterion_10() -> Check {
    let p = LossParams::defaults(LossKind::MultiSimilarity);
    let loss = Loss::new(p.clone()).map_err(err)?;
    let eps = p.epsilon;
    let ln2 = std::f64::consts::LN_2;
    let sim = Matrix::from_rows(&[vec![1.0, eps], vec![eps, 1.0]]).map_err(err)?;

    // anchor 0 only; the loss averages over B = 2 anchors
    let mut positive = MinedPairs::empty(2);
    positive.positives[0].push(1);
    let bundle = SimilarityBundle::from_similarity(sim.clone(), vec![0, 0]).map_err(err)?;
    let term_p = 2.0 * loss.similarity_grad(&bundle, &positive).map_err(err)?.0;

    let mut negative = MinedPairs::empty(2);
    negative.negatives[0].push(1);
    let bundle = SimilarityBundle::from_similarity(sim, vec![0, 1]).map_err(err)?;
    let term_n = 2.0 * loss.similarity_grad(&bundle, &negative).map_err(err)?.0;

    let (want_p, want_n) = (ln2 / p.beta, ln2 / p.alpha);
    ensure(
        (term_p - want_p).abs() <= 1e-12 && (term_n - want_n).abs() <= 1e-12,
        format!("positive term {term_p} (want {want_p}), negative term {term_n} (want {want_n})"),
    )?;
    Ok(format!("log2/beta = {term_p:.6}, log2/alpha = {term_n:.6}"))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("1 loss gradients vs finite differences", criterion_1, Duration::from_secs(30)),
        ("2 end-to-end encoder gradients", criterion_2, Duration::from_secs(30)),
        ("3 miner vs brute-force triplets", criterion_3, Duration::from_secs(10)),
        ("4 top-k vs exhaustive scan", criterion_4, Duration::from_secs(20)),
        ("5 synthetic benchmark gain", criterion_5, Duration::from_secs(120)),
        ("6 mining ablation direction", criterion_6, Duration::from_secs(240)),
        ("7 loss-compare harness", criterion_7, Duration::from_secs(900)),
        ("8 determinism and persistence", criterion_8, Duration::from_secs(60)),
        ("9 pair-generation law", criterion_9, Duration::from_secs(5)),
        ("10 MS spot values", criterion_10, Duration::from_secs(1)),
    ];
    let mut failed = Vec::new();
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check)
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let took = start.elapsed();
        let result = match result {
            Ok(msg) if took > limit => Err(format!("{msg}; took {took:.1?} > {limit:?}")),
            other => other,
        };
        match result {
            Ok(msg) => println!("[PASS] {name}: {msg} ({took:.1?})"),
            Err(msg) => {
                println!("[FAIL] {name}: {msg} ({took:.1?})");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
