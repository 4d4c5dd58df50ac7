//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

use safety_score::analysis::{arch_correlation, pcc, ArchSpec};
use safety_score::cli::{execute, Command, RunConfig};
use safety_score::corpus::{
    aggregate_and_label, filter_unanimous, map_binary_dataset, BinaryRecord, Label, RawAnnotation,
};
use safety_score::demo::run_default;
use safety_score::rankstat::{safety_score, u_statistic_fast, u_statistic_naive, PopulationPair};
use safety_score::report::Format;
use safety_score::scoring::{perplexity, ScoringMode, TokenScoreRecord};

type Outcome = Result<String, String>;
type Transform = (&'static str, fn(f64) -> f64);
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Values on a coarse dyadic grid, so ties are frequent and every transform
/// used below is exact or strictly increasing in floating point.
fn grid_pair(rng: &mut ChaCha8Rng, max_len: usize, levels: i32) -> PopulationPair {
    let n = rng.gen_range(1..=max_len);
    let m = rng.gen_range(1..=max_len);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k).map(|_| f64::from(rng.gen_range(-levels..=levels)) / 8.0).collect()
    };
    let (h, b) = (draw(n), draw(m));
    PopulationPair::new("g", h, b).expect("non-empty finite")
}

fn continuous_pair(rng: &mut ChaCha8Rng, max_len: usize) -> PopulationPair {
    let n = rng.gen_range(1..=max_len);
    let m = rng.gen_range(1..=max_len);
    let h = (0..n).map(|_| rng.gen_range(0.0..6.0)).collect();
    let b = (0..m).map(|_| rng.gen_range(0.0..6.0)).collect();
    PopulationPair::new("g", h, b).expect("non-empty finite")
}

fn has_cross_tie(p: &PopulationPair) -> bool {
    p.harmful().iter().any(|x| p.benign().contains(x))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    let pairs: Vec<PopulationPair> = (0..500)
        .map(|i| if i % 2 == 0 { grid_pair(&mut rng, 50, 16) } else { continuous_pair(&mut rng, 50) })
        .collect();
    let tied = pairs.iter().filter(|p| has_cross_tie(p)).count();
    check(tied * 5 >= pairs.len(), format!("only {tied}/500 pairs contain ties"))?;
    for (i, p) in pairs.iter().enumerate() {
        for tol in [0.0, 0.125, 0.3] {
            let (fast, naive) = (u_statistic_fast(p, tol), u_statistic_naive(p, tol));
            check(fast == naive, format!("pair {i}, tol {tol}: fast {fast} != naive {naive}"))?;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("500 pairs x 3 tolerances, {tied} with ties, {elapsed:.2?}"))
}

fn complement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    for i in 0..200 {
        let p = if i % 2 == 0 { grid_pair(&mut rng, 50, 12) } else { continuous_pair(&mut rng, 50) };
        let s = safety_score(&p, 0.0).safety;
        let t = safety_score(&p.swapped(), 0.0).safety;
        check(s + t == 1.0, format!("pair {i}: {s} + {t} != 1"))?;
    }
    Ok("200 pairs".into())
}

fn rank_invariance() -> Outcome {
    let transforms: [Transform; 5] = [
        ("2x+1", |x| 2.0 * x + 1.0),
        ("x/4-3", |x| 0.25 * x - 3.0),
        ("exp", f64::exp),
        ("x^3+5", |x| x * x * x + 5.0),
        ("exp(2x+1)", |x| (2.0 * x + 1.0).exp()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a);
    for i in 0..100 {
        let p = grid_pair(&mut rng, 40, 24);
        let base = safety_score(&p, 0.0).safety;
        for (name, f) in transforms {
            let q = PopulationPair::new(
                "g",
                p.harmful().iter().map(|&x| f(x)).collect(),
                p.benign().iter().map(|&x| f(x)).collect(),
            )
            .map_err(|e| e.to_string())?;
            let s = safety_score(&q, 0.0).safety;
            check(s == base, format!("pair {i}, {name}: {s} != {base}"))?;
        }
    }
    Ok("100 pairs x 5 transforms".into())
}

fn perplexity_identities() -> Outcome {
    for v in [2.0f64, 10.0, 1000.0] {
        let lp = -v.ln();
        for len in [1usize, 7, 64] {
            let rec = TokenScoreRecord::new("s", "m", ScoringMode::Causal, vec![lp; len]);
            let p = perplexity(&rec).map_err(|e| e.to_string())?;
            check((p - v).abs() <= 1e-9, format!("V={v}, T={len}: {p}"))?;
        }
    }
    for len in [1usize, 2, 50] {
        let rec = TokenScoreRecord::new("s", "m", ScoringMode::Masked, vec![0.0; len]);
        let p = perplexity(&rec).map_err(|e| e.to_string())?;
        check(p == 1.0, format!("all-zero T={len}: {p}"))?;
    }
    Ok("V in {2, 10, 1000}; zero log-probs give 1.0".into())
}

fn raw(id: &str, groups: &[&str], tox: &[f64]) -> RawAnnotation {
    RawAnnotation {
        id: id.into(),
        text: format!("text {id}"),
        annotator_target_groups: groups.iter().map(|s| s.to_string()).collect(),
        annotator_toxicity: tox.to_vec(),
        source: "fixture".into(),
        extra: Map::new(),
    }
}

fn corpus_rules() -> Outcome {
    let out = filter_unanimous(vec![
        raw("keep", &["women", "women", "women"], &[5.0, 5.0, 4.0]),
        raw("drop", &["women", "women", "asian"], &[1.0, 1.0, 1.0]),
        raw("canon", &["Asian ", "asian", " ASIAN"], &[3.0, 3.0, 3.0]),
        raw("low", &["black", "black", "black"], &[1.0, 1.0, 1.0]),
    ]);
    let kept: Vec<&str> = out.kept.iter().map(|r| r.id.as_str()).collect();
    check(kept == ["keep", "canon", "low"], format!("kept {kept:?}"))?;

    let labelled: Vec<_> = out.kept.iter().map(|r| aggregate_and_label(r, 3.5)).collect();
    check(labelled[0].toxicity == 14.0 / 3.0 && labelled[0].label == Label::Harmful, "[5,5,4]")?;
    check(labelled[1].toxicity == 3.0 && labelled[1].label == Label::Benign, "[3,3,3]")?;
    check(labelled[1].target_group == "asian", "canonical group")?;
    check(labelled[2].toxicity == 1.0 && labelled[2].label == Label::Benign, "[1,1,1]")?;

    let set = map_binary_dataset(
        vec![
            BinaryRecord::new("a", "harmful", None),
            BinaryRecord::new("b", "benign", Some("women")),
            BinaryRecord::new("c", "Harmful", Some("muslim")),
        ],
        "binary",
    )
    .map_err(|e| e.to_string())?;
    let got: Vec<(f64, &str)> =
        set.records().iter().map(|r| (r.toxicity, r.target_group.as_str())).collect();
    check(got == [(2.25, "all"), (1.0, "women"), (2.25, "muslim")], format!("{got:?}"))?;
    check(
        map_binary_dataset(vec![BinaryRecord::new("x", "neutral", None)], "b").is_err(),
        "unknown label accepted",
    )?;
    Ok("unanimity, mean labelling at 3.5, binary mapping {1.0, 2.25}".into())
}

fn end_to_end_demo() -> Outcome {
    let start = Instant::now();
    let a = run_default(0).map_err(|e| e.to_string())?;
    let b = run_default(0).map_err(|e| e.to_string())?;
    let worst = a
        .report
        .per_group
        .iter()
        .map(|r| r.safety)
        .fold(f64::INFINITY, f64::min);
    check(a.report.per_group.len() >= 2, "too few groups")?;
    check(worst >= 0.9, format!("lowest group safety {worst}"))?;
    for format in [Format::Markdown, Format::Csv, Format::Ndjson] {
        check(a.render(format) == b.render(format), format!("{format:?} output differs between runs"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} groups, min S = {worst:.4}, {} sentences, {elapsed:.2?}",
        a.report.per_group.len(),
        a.sentences
    ))
}

fn pcc_fixtures() -> Outcome {
    let r = pcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).map_err(|e| e.to_string())?;
    check((r - 0.5).abs() <= 1e-12, format!("pcc = {r}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xacc);
    for _ in 0..100 {
        let n = rng.gen_range(3..40);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-100.0..100.0));
        let base = pcc(&xs, &ys).map_err(|e| e.to_string())?;
        let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let r = pcc(&moved, &ys).map_err(|e| e.to_string())?;
        check((r - base).abs() <= 1e-12, format!("affine drift {}", (r - base).abs()))?;
    }

    let rows: Vec<(ArchSpec, f64)> = [(12, 12, 768), (16, 24, 1024), (20, 36, 1280), (25, 48, 1600)]
        .iter()
        .map(|&(h, l, d)| (ArchSpec::new(format!("m{d}"), h, l, d), -f64::from(d)))
        .collect();
    let c = arch_correlation(&rows).map_err(|e| e.to_string())?;
    check(c.hidden == -1.0, format!("pcc_hidden = {}", c.hidden))?;
    Ok("pcc([1,2,3],[1,3,2]) = 0.5; affine invariance; safety = -hidden gives -1".into())
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn report_shapes() -> Outcome {
    let dir = fixtures();
    let golden = |name: &str| std::fs::read_to_string(dir.join("golden").join(name)).unwrap();

    let mut cases = Vec::new();
    for (format, name) in [(Format::Csv, "safety.csv"), (Format::Markdown, "safety.md")] {
        let mut c = RunConfig::new(Command::Safety);
        c.input_paths = vec![dir.join("four_sentences.ndjson")];
        c.scores_path = Some(dir.join("four_sentences.scaled.ndjson"));
        c.format = format;
        cases.push((c, name));
    }
    for (format, name) in [(Format::Csv, "arch.csv"), (Format::Markdown, "arch.md")] {
        let mut c = RunConfig::new(Command::ArchCorr);
        c.input_paths = vec![dir.join("architectures.csv")];
        c.scores_path = Some(dir.join("average_safety.csv"));
        c.format = format;
        cases.push((c, name));
    }
    for (config, name) in &cases {
        let out = execute(config).map_err(|e| e.to_string())?;
        check(out == golden(name), format!("{name} differs:\n{out}"))?;
    }
    Ok("safety.csv, safety.md, arch.csv, arch.md byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence (fast U == naive U)", oracle_equivalence),
        ("complement S(X,Y) + S(Y,X) = 1", complement),
        ("rank invariance under increasing transforms", rank_invariance),
        ("perplexity identities", perplexity_identities),
        ("corpus rules", corpus_rules),
        ("end-to-end demo", end_to_end_demo),
        ("pcc fixtures", pcc_fixtures),
        ("safety and architecture table shapes", report_shapes),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
