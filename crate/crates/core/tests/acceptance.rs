//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fail.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereoprobe::metrics::{aggregate, effect_between, relative_probability, Effect, GenderMass, RatioOutcome};
use stereoprobe::pipeline::{run_pipeline, Config, DATASET_FILE, REPORT_DIR, RESULTS_FILE};
use stereoprobe::prompt::{generate_dataset, render, DatasetConfig, ModelFamily, PromptKind};
use stereoprobe::registry::{Dominance, Registry, Strictness};
use stereoprobe::scoring::TokenScore;
use stereoprobe::verbalizer::{GenderClass, Lexicon, TokenClass};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn registry_fidelity() -> Check {
    let start = Instant::now();
    let reg = Registry::canonical();
    let elapsed = start.elapsed();
    ensure!(reg.len() == 58, "{} occupations", reg.len());
    let female = reg.of_dominance(Dominance::FemaleDominated).count();
    let male = reg.of_dominance(Dominance::MaleDominated).count();
    ensure!((female, male) == (29, 29), "split {female}/{male}");
    for (name, pct, dom) in [
        ("nurse", 88.5, Dominance::FemaleDominated),
        ("driver", 25.1, Dominance::MaleDominated),
        ("attendant", 52.3, Dominance::FemaleDominated),
    ] {
        let occ = reg.get(name).ok_or(format!("{name} missing"))?;
        ensure!(occ.female_pct() == pct, "{name} pct {}", occ.female_pct());
        ensure!(occ.dominance() == dom, "{name} dominance {:?}", occ.dominance());
    }
    ensure!(elapsed < Duration::from_secs(1), "load took {elapsed:?}");
    Ok(())
}

fn template_goldens() -> Check {
    let golden = include_str!("golden/nurse_templates.tsv");
    let reg = Registry::parse("nurse\t88.5\ndoctor\t40.0\n", "golden", Strictness::Custom).map_err(|e| e.to_string())?;
    let ds = generate_dataset(&DatasetConfig::new(reg, 42, 1)).map_err(|e| e.to_string())?;
    let mut seen = 0;
    for line in golden.lines().filter(|l| !l.starts_with('#')) {
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let kind = PromptKind::parse(cols[1]).ok_or(format!("bad kind {}", cols[1]))?;
        let p = ds
            .iter()
            .find(|p| p.occupation.name() == "nurse" && p.kind == kind)
            .ok_or(format!("no nurse {kind}"))?;
        let text = match cols[0] {
            "unrendered" => p.text(),
            "MaskedWithClsSep" => render(p, ModelFamily::MaskedWithClsSep).text,
            "MaskedWithAngleS" => render(p, ModelFamily::MaskedWithAngleS).text,
            "CausalContinuation" => render(p, ModelFamily::CausalContinuation).text,
            f => return Err(format!("unknown family {f}")),
        };
        ensure!(text.as_bytes() == cols[2].as_bytes(), "{} {}: {text:?}", cols[0], cols[1]);
        seen += 1;
    }
    ensure!(seen == 40, "{seen} golden lines");
    Ok(())
}

fn count_formula() -> Check {
    let reg = Registry::canonical();
    for (m, expected) in [(1u32, 580usize), (2, 754), (13, 2668)] {
        // Enumeration oracle: single-instance kinds contribute 1 each,
        // background-counter kinds contribute m each.
        let mut oracle = 0usize;
        for _ in reg.iter() {
            for _single in [
                "base", "target_syn_sim", "target_sem_sim", "target_neutral",
                "target_counter_syn_sim", "target_counter_sem_sim", "unrelated",
            ] {
                oracle += 1;
            }
            for _ in 0..3 {
                for _ in 0..m {
                    oracle += 1;
                }
            }
        }
        ensure!(oracle == expected, "oracle {oracle} for m={m}");
        let ds = generate_dataset(&DatasetConfig::new(reg.clone(), 42, m)).map_err(|e| e.to_string())?;
        ensure!(ds.len() == expected, "m={m}: {} prompts", ds.len());
        for kind in PromptKind::ALL {
            let n = ds.iter().filter(|p| p.kind == kind).count();
            let want = if kind.uses_counter_background() { 58 * m as usize } else { 58 };
            ensure!(n == want, "m={m} {kind}: {n}");
        }
    }
    Ok(())
}

fn determinism() -> Check {
    let run = |dir: &Path| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let cfg = Config {
            samples_m: 2,
            models: vec!["bert-base".into(), "roberta-base".into(), "gpt2-medium".into()],
            top_k: vec![3, 5, 10],
            out: dir.to_path_buf(),
            ..Config::default()
        };
        run_pipeline(&cfg, false).map_err(|e| e.to_string())?;
        let mut files = BTreeMap::new();
        for f in [DATASET_FILE, RESULTS_FILE] {
            files.insert(f.to_string(), fs::read(dir.join(f)).map_err(|e| e.to_string())?);
        }
        for entry in fs::read_dir(dir.join(REPORT_DIR)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = format!("report/{}", path.file_name().unwrap().to_string_lossy());
            files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
        }
        Ok(files)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path())?;
    let second = run(b.path())?;
    ensure!(first.len() >= 2 + 4, "only {} artifacts", first.len());
    ensure!(
        first.keys().eq(second.keys()),
        "artifact sets differ: {:?} vs {:?}",
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &first {
        ensure!(second[name] == *bytes, "{name} differs");
    }
    Ok(())
}

/// Independent reading of the shipped lexicon file.
fn oracle_lexicon() -> (HashSet<String>, HashSet<String>) {
    let mut female = HashSet::new();
    let mut male = HashSet::new();
    for line in include_str!("../data/lexicon.tsv").lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (tok, class) = line.split_once('\t').unwrap();
        match class.trim() {
            "female" => female.insert(tok.trim().to_lowercase()),
            "male" => male.insert(tok.trim().to_lowercase()),
            other => panic!("class {other}"),
        };
    }
    (female, male)
}

fn oracle_normalize(token: &str) -> String {
    token
        .trim_start()
        .trim_start_matches(['\u{0120}', '\u{2581}'])
        .trim()
        .to_lowercase()
}

fn metric_oracles() -> Check {
    let lexicon = Lexicon::canonical();
    let (female, male) = oracle_lexicon();
    let mut vocab: Vec<String> = female.iter().chain(&male).cloned().collect();
    vocab.sort();
    vocab.extend(["the", "a", "doctor", "it", "##s", "person", "they"].map(String::from));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let len = rng.random_range(1..=40);
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let base = &vocab[rng.random_range(0..vocab.len())];
            let token = match rng.random_range(0..4) {
                0 => format!("\u{0120}{base}"),
                1 => format!("\u{2581}{}", base.to_uppercase()),
                2 => format!(" {base}"),
                _ => base.clone(),
            };
            list.push(TokenScore { token, probability: rng.random::<f64>() / len as f64 });
        }
        let k = rng.random_range(1..=len);
        let got = aggregate(&list, &lexicon, k).map_err(|e| e.to_string())?;
        let (mut f, mut m, mut o) = (0.0, 0.0, 0.0);
        for s in &list[..k] {
            let t = oracle_normalize(&s.token);
            if female.contains(&t) {
                f += s.probability;
            } else if male.contains(&t) {
                m += s.probability;
            } else {
                o += s.probability;
            }
        }
        for (name, x, y) in [("female", got.p_female, f), ("male", got.p_male, m), ("other", got.p_other, o)] {
            ensure!((x - y).abs() <= 1e-12, "case {case} {name}: {x} vs {y}");
        }
        for s in &list {
            match relative_probability(&s.token, &list, &list).map_err(|e| e.to_string())? {
                RatioOutcome::Ratio(r) => ensure!(r == 1.0, "case {case}: self ratio {r}"),
                other => return Err(format!("case {case}: {other:?}")),
            }
        }
    }
    let base = [TokenScore { token: "she".into(), probability: 0.1 }];
    let knowledge = [TokenScore { token: "she".into(), probability: 0.2 }];
    match relative_probability("she", &base, &knowledge).map_err(|e| e.to_string())? {
        RatioOutcome::Ratio(r) => ensure!(r == 2.0, "0.2/0.1 gave {r}"),
        other => return Err(format!("0.2/0.1 gave {other:?}")),
    }
    Ok(())
}

fn effect_truth_table() -> Check {
    let mass = |f: f64, m: f64| GenderMass { p_female: f, p_male: m, p_other: 1.0 - f - m };
    let eps = 0.125;
    let just_below = 0.125 - f64::EPSILON;
    // (base f, base m, knowledge f, knowledge m, epsilon, expected)
    let table = [
        // flips, regardless of size
        (0.6, 0.1, 0.1, 0.6, eps, Effect::Overturned),
        (0.2, 0.3, 0.5, 0.1, eps, Effect::Overturned),
        (0.5, 0.49, 0.49, 0.5, eps, Effect::Overturned),
        // same side
        (0.5, 0.25, 0.75, 0.0, eps, Effect::Enhanced),
        (0.75, 0.0, 0.5, 0.25, eps, Effect::Mitigated),
        (0.0, 0.75, 0.25, 0.5, eps, Effect::Mitigated),
        (0.25, 0.5, 0.25, 0.5, eps, Effect::Unchanged),
        // boundary: |delta| == epsilon is unchanged, just past it is not
        (0.5, 0.25, 0.5, 0.125, eps, Effect::Unchanged),
        (0.5, 0.125, 0.5, 0.25, eps, Effect::Unchanged),
        (0.5, 0.25, 0.5, 0.125, just_below, Effect::Enhanced),
        (0.5, 0.125, 0.5, 0.25, just_below, Effect::Mitigated),
        (0.5, 0.25, 0.5, 0.125, 0.0, Effect::Enhanced),
        (0.25, 0.5, 0.25, 0.5, 0.0, Effect::Unchanged),
        // ties are not flips
        (0.0, 0.0, 0.5, 0.25, eps, Effect::Enhanced),
        (0.5, 0.25, 0.25, 0.25, eps, Effect::Mitigated),
        (0.25, 0.25, 0.0, 0.0, eps, Effect::Unchanged),
        (0.3, 0.3, 0.1, 0.5, eps, Effect::Enhanced),
    ];
    let mut covered = HashSet::new();
    for (i, &(bf, bm, kf, km, e, want)) in table.iter().enumerate() {
        let got = effect_between(&mass(bf, bm), &mass(kf, km), e);
        ensure!(got == want, "row {i}: {got:?}, expected {want:?}");
        covered.insert(got);
    }
    ensure!(Effect::ALL.iter().all(|e| covered.contains(e)), "uncovered effects");
    Ok(())
}

fn lexicon() -> Check {
    let lex = Lexicon::canonical();
    let report = lex.validate(true);
    ensure!(report.is_ok(), "problems: {:?}", report.problems);
    ensure!((report.total, report.female, report.male) == (126, 63, 63), "{}/{}/{}", report.total, report.female, report.male);
    ensure!(lex.count(GenderClass::Female) == 63 && lex.count(GenderClass::Male) == 63, "class counts");
    let (female, male) = oracle_lexicon();
    ensure!(female.len() == 63 && male.len() == 63, "file has {}/{}", female.len(), male.len());
    ensure!(female.is_disjoint(&male), "overlap: {:?}", female.intersection(&male).collect::<Vec<_>>());
    ensure!(lex.classify("mom") == TokenClass::Female, "mom");
    ensure!(lex.classify("dad") == TokenClass::Male, "dad");
    Ok(())
}

fn main() {
    let start = Instant::now();
    let checks: [Criterion; 7] = [
        ("registry fidelity", registry_fidelity),
        ("template goldens", template_goldens),
        ("prompt count formula", count_formula),
        ("pipeline determinism", determinism),
        ("metric oracles", metric_oracles),
        ("effect truth table", effect_truth_table),
        ("lexicon", lexicon),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed < Duration::from_secs(60) {
        println!("PASS offline suite time ({:.2}s, mock backend only)", elapsed.as_secs_f64());
    } else {
        failed += 1;
        println!("FAIL offline suite time ({:.2}s)", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
