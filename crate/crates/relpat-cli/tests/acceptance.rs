//! Release gate: one test per shipped guarantee, each printing a
//! `acceptance <name>: pass` line (run with `--nocapture` to see them).
//! The pipeline tests drive the real binary on the bundled fixtures.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use relpat::corpus::{NegativeSampler, TokenLookup};
use relpat::embeddings::{EmbeddingTable, WordVectors};
use relpat::encoders::{
    backprop, encode, init_params, load_model, Arch, ComposeOrder, EncoderModel, EncoderParams,
};
use relpat::eval::spearman;
use relpat::math::{cosine, dot, Mat};
use relpat::patterns::{context_indices, PatternLexicon, RelationalPattern};
use relpat::relclass::{macro_f1, train_classifier, ClassifierConfig, FeatureVector, NUM_LABELS};
use relpat::trainer::{pattern_step, GridParams, StepOutcome};

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{}", env!("CARGO_MANIFEST_DIR"), name)
}

fn relpat_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relpat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = relpat_bin(args);
    assert!(
        out.status.success(),
        "relpat {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Word/context vectors trained once on the bundled corpus and shared by all
/// pipeline criteria. Desk-scale training disables subsampling: with 200
/// sentences every token sits far above the 1e-5 frequency threshold.
struct Shared {
    dir: tempfile::TempDir,
}

impl Shared {
    fn words(&self) -> PathBuf {
        self.dir.path().join("w.vec")
    }
    fn ctx(&self) -> PathBuf {
        self.dir.path().join("c.vec")
    }
}

static SHARED: OnceLock<Shared> = OnceLock::new();

fn shared() -> &'static Shared {
    SHARED.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let s = Shared { dir };
        run_ok(&[
            "train-words",
            "--corpus",
            &fixture("toy_corpus.txt"),
            "--words",
            s.words().to_str().unwrap(),
            "--ctx",
            s.ctx().to_str().unwrap(),
            "--dim",
            "10",
            "--min-count",
            "1",
            "--subsample",
            "0",
            "--epochs",
            "30",
            "--lr",
            "0.05",
            "--deterministic",
        ]);
        s
    })
}

fn train_toy_encoder(arch: &str, epochs: &str, lr: &str, out: &Path) -> Output {
    let s = shared();
    run_ok(&[
        "train-encoder",
        "--corpus",
        &fixture("toy_corpus.txt"),
        "--patterns",
        &fixture("toy_patterns.txt"),
        "--words",
        s.words().to_str().unwrap(),
        "--ctx",
        s.ctx().to_str().unwrap(),
        "--encoder",
        arch,
        "--epochs",
        epochs,
        "--lr",
        lr,
        "--subsample",
        "0",
        "--deterministic",
        "--out",
        out.to_str().unwrap(),
    ])
}

fn toy_words(tokens: &[String], d: usize, rng: &mut StdRng) -> WordVectors {
    let mut mat = Mat::zeros(tokens.len(), d);
    for v in mat.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    WordVectors::new(tokens.to_vec(), mat).unwrap()
}

#[test]
fn criterion_gradient_fidelity() {
    let start = Instant::now();
    let d = 5;
    let mut rng = std_rng_seed(11);
    let archs = [Arch::Rnn, Arch::Lstm, Arch::Gru, Arch::Gac];
    let mut max_rel = 0.0_f64;
    for case in 0..20 {
        let arch = archs[case % archs.len()];
        let len = case % 6 + 1;
        let tokens: Vec<String> = (0..len).map(|i| format!("w{case}_{i}")).collect();
        let words = toy_words(&tokens, d, &mut rng);
        let mut params = init_params(arch, d, &mut rng, None, None).unwrap();
        let probe: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pat = RelationalPattern::from_surface(&tokens.join(" "), Some(&words));

        let score = |p: &EncoderParams| {
            let model = EncoderModel {
                order: ComposeOrder::Backward,
                params: p.clone(),
            };
            dot(&probe, &encode(&model, &pat, &words).unwrap().h_p)
        };
        let model = EncoderModel {
            order: ComposeOrder::Backward,
            params: params.clone(),
        };
        let trace = encode(&model, &pat, &words).unwrap();
        let grads = backprop(&model, &trace, &probe).unwrap();

        let step = 1e-5;
        for (mi, grad) in grads.mats.iter().enumerate() {
            for e in 0..d * d {
                let orig = params.mats[mi].data[e];
                params.mats[mi].data[e] = orig + step;
                let up = score(&params);
                params.mats[mi].data[e] = orig - step;
                let down = score(&params);
                params.mats[mi].data[e] = orig;
                let fd = (up - down) / (2.0 * step);
                let an = grad.data[e];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("acceptance gradient fidelity: pass (max rel err {max_rel:.2e}, {elapsed:?})");
}

fn std_rng_seed(s: u64) -> StdRng {
    StdRng::seed_from_u64(s)
}

#[test]
fn criterion_objective_closed_form() {
    // Zero parameters force h_p = 0, so every score is sigmoid(0) = 1/2 and
    // the occurrence objective is (1 + K) * |contexts| * ln(1/2).
    let d = 6;
    let mut rng = std_rng_seed(3);
    let tokens: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    let words = toy_words(&tokens, d, &mut rng);
    let mut ctx = Mat::zeros(tokens.len(), d);
    for v in ctx.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let emb = EmbeddingTable::new(words, ctx).unwrap();
    let params = init_params(Arch::Rnn, d, &mut rng, Some(0.0), None).unwrap();
    let grid = GridParams::from_params(&params);
    let pattern = RelationalPattern::from_surface("t0 t1", Some(&emb.words));
    let sampler = NegativeSampler::from_counts(&[5, 3, 2, 1], 0.75, 1000).unwrap();
    let outcome = pattern_step(
        &grid,
        &pattern,
        &[2, 3],
        &emb,
        &sampler,
        ComposeOrder::Backward,
        5,
        0.0,
        &mut rng,
    )
    .unwrap();
    let expected = 12.0 * (0.5_f64).ln();
    match outcome {
        StepOutcome::Updated(lp) => {
            assert!(
                (lp - expected).abs() <= 1e-12,
                "l_p {lp} vs {expected}"
            );
        }
        other => panic!("unexpected outcome {other:?}"),
    }

    // Every sampled occurrence objective on the bundled fixture is strictly
    // negative under a trained encoder.
    let s = shared();
    let model_path = s.dir.path().join("lp_probe.json");
    train_toy_encoder("gac", "5", "0.1", &model_path);
    let model = load_model(&model_path).unwrap();
    let emb = EmbeddingTable::load(s.words(), s.ctx()).unwrap();
    let lexicon =
        PatternLexicon::load(fixture("toy_patterns.txt"), Some(&emb.words)).unwrap();
    let corpus = std::fs::read_to_string(fixture("toy_corpus.txt")).unwrap();
    let grid = GridParams::from_params(&model.params);
    let sampler = NegativeSampler::from_counts(&[3, 1, 1, 2], 0.75, 1000).unwrap();
    let mut seen = 0;
    for line in corpus.lines().take(50) {
        let ids = emb.words.lookup_sentence(line);
        for occ in lexicon.find_occurrences(&ids) {
            let ctxs: Vec<usize> = context_indices(occ.s, occ.len, 5, ids.len(), false)
                .into_iter()
                .map(|i| ids[i])
                .filter(|&id| id != relpat::corpus::OOV)
                .collect();
            if let StepOutcome::Updated(lp) = pattern_step(
                &grid,
                &lexicon.patterns()[occ.pattern],
                &ctxs,
                &emb,
                &sampler,
                model.order,
                5,
                0.0,
                &mut rng,
            )
            .unwrap()
            {
                assert!(lp < 0.0, "l_p {lp} not strictly negative");
                seen += 1;
            }
        }
    }
    assert!(seen > 30, "only {seen} occurrences sampled");
    println!("acceptance objective closed form: pass (12 ln 1/2 exact, {seen} fixture l_p < 0)");
}

fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[test]
fn criterion_spearman_oracle() {
    let mut rng = std_rng_seed(23);
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(3..40);
        // Draws from a small integer grid so ties are frequent.
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        match oracle_spearman(&xs, &ys) {
            Some(expected) => {
                let got = spearman(&xs, &ys).unwrap();
                assert!(
                    (got - expected).abs() <= 1e-12,
                    "{got} vs {expected} on {xs:?} / {ys:?}"
                );
                checked += 1;
            }
            None => assert!(spearman(&xs, &ys).is_err()),
        }
    }
    assert!(checked > 900, "only {checked} comparable cases");
    let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((rho - 0.94868).abs() <= 1e-5, "worked tie example {rho}");
    println!("acceptance spearman oracle: pass ({checked} tie cases, worked example {rho:.5})");
}

#[test]
fn criterion_negative_sampler_law() {
    let sampler = NegativeSampler::from_counts(&[8, 1], 0.75, 1_000_000).unwrap();
    let mut rng = std_rng_seed(97);
    let draws = 100_000;
    let mut a = 0usize;
    for _ in 0..draws {
        if sampler.sample(&mut rng) == 0 {
            a += 1;
        }
    }
    let frac = a as f64 / draws as f64;
    assert!(
        (frac - 0.82635).abs() <= 0.01,
        "a-fraction {frac} vs 0.82635"
    );
    println!("acceptance negative sampler law: pass (a-fraction {frac:.5})");
}

const CLUSTER_A: [&str; 3] = ["lead to", "result in", "bring about"];
const CLUSTER_B: [&str; 3] = ["differ from", "deviate from", "contrast with"];

#[test]
fn criterion_desk_scale_learning() {
    let start = Instant::now();
    let s = shared();
    let model_path = s.dir.path().join("desk_gac.json");
    let out = train_toy_encoder("gac", "20", "0.1", &model_path);

    // Per-epoch mean objective from the training log, non-decreasing from
    // epoch 2 on.
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lps: Vec<f64> = stderr
        .lines()
        .filter_map(|l| {
            let mut it = l.split('\t');
            let epoch: usize = it.next()?.parse().ok()?;
            let lp: f64 = it.next()?.parse().ok()?;
            Some((epoch, lp))
        })
        .map(|(_, lp)| lp)
        .collect();
    assert_eq!(lps.len(), 20, "epoch log:\n{stderr}");
    for i in 2..lps.len() {
        assert!(
            lps[i] >= lps[i - 1] - 1e-9,
            "mean l_p decreased at epoch {}: {} -> {}",
            i + 1,
            lps[i - 1],
            lps[i]
        );
    }

    let model = load_model(&model_path).unwrap();
    let words = WordVectors::load(s.words()).unwrap();
    let vec_of = |surface: &str| {
        let pat = RelationalPattern::from_surface(surface, Some(&words));
        encode(&model, &pat, &words).unwrap().h_p
    };
    let a: Vec<Vec<f64>> = CLUSTER_A.iter().map(|p| vec_of(p)).collect();
    let b: Vec<Vec<f64>> = CLUSTER_B.iter().map(|p| vec_of(p)).collect();
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for group in [&a, &b] {
        for i in 0..3 {
            for j in i + 1..3 {
                within.push(cosine(&group[i], &group[j]).unwrap());
            }
        }
    }
    for va in &a {
        for vb in &b {
            cross.push(cosine(va, vb).unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&within) - mean(&cross);
    let elapsed = start.elapsed();
    assert!(gap >= 0.2, "cluster gap {gap}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "acceptance desk-scale learning: pass (cluster gap {gap:.3}, monotone l_p, {elapsed:?})"
    );
}

#[test]
fn criterion_length1_equality() {
    let s = shared();
    let mut reports: Vec<Vec<u8>> = Vec::new();
    for arch in ["nocomp", "add", "rnn", "lstm", "gru", "gac"] {
        let model_path = s.dir.path().join(format!("len1_{arch}.json"));
        train_toy_encoder(arch, "3", "0.1", &model_path);
        let out = run_ok(&[
            "eval-sim",
            "--model",
            model_path.to_str().unwrap(),
            "--words",
            s.words().to_str().unwrap(),
            "--dataset",
            &fixture("toy_pairs_len1.tsv"),
            "--by-length",
        ]);
        reports.push(out.stdout);
    }
    for r in &reports[1..] {
        assert_eq!(
            r,
            &reports[0],
            "reports differ:\n{}\nvs\n{}",
            String::from_utf8_lossy(&reports[0]),
            String::from_utf8_lossy(r)
        );
    }
    println!("acceptance length-1 equality: pass (6 identical reports)");
}

#[test]
fn criterion_nocomp_sparsity() {
    let s = shared();

    // Expected held-out pair count, derived from the fixtures: a multiword
    // pattern absent from the training lexicon has no lookup row.
    let lexicon: HashSet<String> = std::fs::read_to_string(fixture("toy_patterns.txt"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let held_out = |p: &str| p.split_whitespace().count() > 1 && !lexicon.contains(p);
    let expected = std::fs::read_to_string(fixture("toy_pairs.tsv"))
        .unwrap()
        .lines()
        .filter(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            held_out(f[0]) || held_out(f[1])
        })
        .count();
    assert!(expected > 0, "fixture lost its held-out pairs");

    let uncomputable_of = |arch: &str| -> usize {
        let model_path = s.dir.path().join(format!("sparse_{arch}.json"));
        train_toy_encoder(arch, "3", "0.1", &model_path);
        let out = run_ok(&[
            "eval-sim",
            "--model",
            model_path.to_str().unwrap(),
            "--words",
            s.words().to_str().unwrap(),
            "--dataset",
            &fixture("toy_pairs.tsv"),
        ]);
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        stdout
            .lines()
            .find_map(|l| l.strip_prefix("uncomputable\t"))
            .and_then(|rest| rest.split('\t').next())
            .and_then(|n| n.parse().ok())
            .unwrap_or_else(|| panic!("no uncomputable row in:\n{stdout}"))
    };

    assert_eq!(uncomputable_of("nocomp"), expected);
    for arch in ["add", "rnn", "lstm", "gru", "gac"] {
        assert_eq!(uncomputable_of(arch), 0, "{arch} should compose everything");
    }
    println!("acceptance nocomp sparsity: pass ({expected} held-out pairs flagged, 0 elsewhere)");
}

#[test]
fn criterion_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let corpus = fixture("toy_corpus.txt");
    let patterns = fixture("toy_patterns.txt");
    let pairs = fixture("toy_pairs.tsv");
    let relations = fixture("toy_relations.tsv");
    let tagged = fixture("toy_tagged.tsv");

    let mut checked = 0;
    let mut twice_files = |args: &[&str], outs: &[&str]| {
        let mut artifacts: Vec<Vec<Vec<u8>>> = Vec::new();
        for round in 0..2 {
            let args: Vec<String> = args
                .iter()
                .map(|a| a.replace("{r}", &round.to_string()))
                .collect();
            let argrefs: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run_ok(&argrefs);
            let mut files = vec![out.stdout.clone()];
            for o in outs {
                files.push(std::fs::read(dir.path().join(format!("{o}{round}"))).unwrap());
            }
            artifacts.push(files);
        }
        assert_eq!(artifacts[0], artifacts[1], "{args:?} not reproducible");
        checked += 1;
    };

    twice_files(
        &[
            "train-words", "--corpus", &corpus, "--words", &p("w{r}"), "--ctx", &p("c{r}"),
            "--dim", "10", "--min-count", "1", "--subsample", "0", "--epochs", "5",
            "--seed", "9", "--deterministic",
        ],
        &["w", "c"],
    );
    // Later stages reuse round 0's vectors.
    twice_files(
        &[
            "train-encoder", "--corpus", &corpus, "--patterns", &patterns,
            "--words", &p("w0"), "--ctx", &p("c0"), "--encoder", "gru",
            "--epochs", "4", "--lr", "0.1", "--subsample", "0",
            "--seed", "9", "--deterministic", "--out", &p("m{r}"),
        ],
        &["m"],
    );
    twice_files(
        &["extract-patterns", "--tagged-corpus", &tagged, "--min-freq", "3", "--max-len", "5"],
        &[],
    );
    twice_files(
        &["eval-sim", "--model", &p("m0"), "--words", &p("w0"), "--dataset", &pairs, "--by-length"],
        &[],
    );
    twice_files(
        &["inspect-gates", "--model", &p("m0"), "--words", &p("w0"), "--patterns", &patterns],
        &[],
    );
    twice_files(
        &["nn", "lead to", "--model", &p("m0"), "--words", &p("w0"), "--patterns", &patterns],
        &[],
    );
    twice_files(
        &[
            "relclass-train", "--dataset", &relations, "--model", &p("m0"),
            "--words", &p("w0"), "--epochs", "8", "--deterministic", "--out", &p("b{r}"),
        ],
        &["b"],
    );
    twice_files(
        &["relclass-eval", "--dataset", &relations, "--model", &p("b0"), "--words", &p("w0")],
        &[],
    );
    println!("acceptance determinism: pass ({checked} pipelines byte-identical)");
}

#[test]
fn criterion_relclass_harness() {
    // Separable synthetic set: three typed labels with disjoint features.
    let mut rng = std_rng_seed(41);
    let labels_pool = [0usize, 2, 12];
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..60 {
        let which = k % 3;
        let label = labels_pool[which];
        let sparse = vec![(which * 50 + rng.gen_range(0..4)) as u32];
        let mut dense = vec![0.0; 3];
        dense[which] = 1.0 + rng.gen_range(-0.05..0.05);
        features.push(FeatureVector { sparse, dense });
        labels.push(label);
    }
    let cfg = ClassifierConfig {
        lr: 0.5,
        l2: 1e-6,
        epochs: 50,
    };
    let clf = train_classifier(&features, &labels, NUM_LABELS, &cfg).unwrap();
    let preds: Vec<usize> = features.iter().map(|f| clf.predict(f)).collect();
    let f1 = macro_f1(&labels, &preds).unwrap();
    assert!(f1 >= 0.99, "separable macro-F1 {f1}");

    // Hand confusion: Cause-Effect P=3/6 R=3/4, Component-Whole P=1/2
    // R=1/3, Member-Collection P=1/2 R=1/2 -> macro 0.5.
    let (ce12, ce21, cw12, mc12, o) = (0usize, 1, 2, 12, 18);
    let gold = [ce12, ce12, ce21, cw12, cw12, cw12, mc12, mc12, o, o, o, ce12];
    let pred = [ce12, ce21, ce21, ce12, cw12, o, mc12, cw12, o, ce12, mc12, ce12];
    let hand = macro_f1(&gold, &pred).unwrap();
    assert!((hand - 0.5).abs() <= 1e-9, "hand confusion {hand}");
    println!(
        "acceptance relation classification: pass (separable {f1:.3}, hand confusion {hand:.10})"
    );
}

#[test]
fn criterion_full_scale_declared() {
    // The headline numbers need a 2B-token tagged web corpus and external
    // resources; the repository must say so and document the recipe instead
    // of pretending to reproduce them.
    let readme_path = format!("{}/../../README.md", env!("CARGO_MANIFEST_DIR"));
    let readme = std::fs::read_to_string(&readme_path).expect("README.md present");
    for needle in ["ukWaC", "Full-scale", "not reproduc"] {
        assert!(
            readme.to_lowercase().contains(&needle.to_lowercase()),
            "README lacks `{needle}`"
        );
    }
    println!(
        "acceptance full-scale declaration: pass (desk fixtures cover properties, \
         full-scale correlations/gate tables/F1 declared not reproducible here)"
    );
}
