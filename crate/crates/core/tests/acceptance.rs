//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqset::assignment::{hungarian, CostMatrix};
use seqset::autodiff::Graph;
use seqset::data::{datagen, reorder_study, Dataset, RunConfig, SynthSpec};
use seqset::decoding::{generate_table, sequence_baseline_steps, DecodeOptions};
use seqset::eval::{chrf_f1, evaluate_corpus, exact_f1, extract_records, score_table, CellRecord, Part, ScoreReport};
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::pipeline::{build_vocab, decode_corpus, encode_dataset, train_run, TrainedRun};
use seqset::table::{serialize_table, validate, Table};
use seqset::tokenizer::Vocabulary;
use seqset::training::{assign_for_instance, body_loss, check_instance_gradients, header_loss, TrainConfig};

type Outcome = seqset::Result<(bool, String)>;

fn smoke_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf");
    RunConfig::load(&path).expect("configs/smoke.conf")
}

fn synth(n: usize, rows_min: usize, rows_max: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        n_instances: n,
        rows_min,
        rows_max,
        seed,
        ..SynthSpec::default()
    };
    datagen(&spec).expect("valid synthetic spec")
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 2..=7 {
        let perms = all_permutations(n);
        for trial in 0..200 {
            // Every other matrix has small integer costs, which produces many ties.
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| if trial % 2 == 0 { -rng.random_range(0.0..30.0) } else { -(rng.random_range(0..4) as f64) })
                        .collect()
                })
                .collect();
            let c = CostMatrix::new(rows)?;
            let best = perms.iter().map(|p| c.cost_of(p)).fold(f64::INFINITY, f64::min);
            let a = hungarian(&c);
            if a.total_cost != best || c.cost_of(&a.perm) != a.total_cost {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    Ok((mismatches == 0, format!("{checked} matrices, {mismatches} mismatches")))
}

fn gradient_integrity() -> Outcome {
    let d = synth(5, 1, 2, 7);
    let vocab = build_vocab(&d, 300)?;
    let config = ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        max_rows: 2,
        max_pos: 64,
        max_cols: 4,
        vocab_size: vocab.len(),
    };
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, inst) in encode_dataset(&vocab, &d).iter().enumerate() {
        let model = Seq2SeqSet::new(config.clone(), k as u64)?;
        let (report, _) = check_instance_gradients(&model, inst, &cfg, 1e-5, 1e-5)?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    Ok((worst < 1e-4, format!("{checked} partials over 5 instances, max relative error {worst:.2e}")))
}

fn order_invariance() -> Outcome {
    let d = synth(100, 1, 6, 8);
    let vocab = build_vocab(&d, 512)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_rows: 8,
        ..ModelConfig::default()
    };
    let model = Seq2SeqSet::new(config, 3)?;
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut max_loss_diff, mut max_cost_diff): (f64, f64) = (0.0, 0.0);
    for (src, table) in d.sources.iter().zip(&d.tables) {
        let mut shuffled = table.clone();
        shuffled.body.shuffle(&mut rng);
        let mut results = Vec::new();
        for t in [table, &shuffled] {
            let inst = seqset::training::BatchInstance::new(&vocab, src, t);
            let targets = inst.padded(model.config.max_rows)?;
            let mut g = Graph::no_grad();
            let states = model.encode(&mut g, &inst.source)?;
            let mem = model.memory(&mut g, states)?;
            let (_, kv) = header_loss(&model, &mut g, &mem, &inst.header)?;
            let a = assign_for_instance(&model, &g, &mem, &kv, &inst.header, &targets)?;
            let b = body_loss(&model, &mut g, &mem, &kv, &targets, &a.perm, cfg.null_scale)?;
            results.push((g.value(b).item(), a.total_cost));
        }
        max_loss_diff = max_loss_diff.max((results[0].0 - results[1].0).abs());
        max_cost_diff = max_cost_diff.max((results[0].1 - results[1].1).abs());
    }
    Ok((
        max_loss_diff < 1e-9 && max_cost_diff == 0.0,
        format!("100 instances, max body loss change {max_loss_diff:.2e}, max matching cost change {max_cost_diff:e}"),
    ))
}

fn random_sources(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let alphabet: Vec<char> = "abcdefgz0123 ⟨s⟩⟨n⟩⟨∅⟩é.".chars().collect();
    (0..n)
        .map(|_| {
            let len = rng.random_range(0..60);
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        })
        .collect()
}

fn zero_error_rate(trained: Option<&TrainedRun>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = synth(100, 0, 8, 11);
    let vocab = build_vocab(&d, 512)?;
    let opts = DecodeOptions::default();
    let mut lines = Vec::new();
    let mut malformed = 0;
    let mut decode = |model: &Seq2SeqSet, vocab: &Vocabulary, sources: &[String], lines: &mut Vec<String>| -> seqset::Result<()> {
        for r in decode_corpus(model, vocab, sources, &opts)? {
            if !validate(&r.table).well_formed() {
                malformed += 1;
            }
            lines.push(serialize_table(&r.table)?);
        }
        Ok(())
    };
    for seed in 0..5 {
        let config = ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        };
        let model = Seq2SeqSet::new(config, 100 + seed)?;
        let mut sources = d.sources[(seed as usize * 10)..(seed as usize * 10 + 50)].to_vec();
        sources.extend(random_sources(&mut rng, 50));
        decode(&model, &vocab, &sources, &mut lines)?;
    }
    let from_random = lines.len();
    match trained {
        Some(run) => {
            let test = synth(250, 0, 8, 12);
            let mut sources = test.sources;
            sources.extend(random_sources(&mut rng, 250));
            decode(&run.model, &run.vocab, &sources, &mut lines)?;
        }
        None => return Ok((false, "no trained checkpoint available".into())),
    }
    let golds: Vec<Table> = lines.iter().map(|_| Table::new(vec!["x".into()], Vec::new())).collect();
    let report = evaluate_corpus(&lines, &golds)?;
    Ok((
        malformed == 0 && report.error_rate == 0.0 && lines.len() == 1000,
        format!(
            "{} decodes ({from_random} random, {} trained), error rate {:.2}",
            lines.len(),
            lines.len() - from_random,
            report.error_rate
        ),
    ))
}

fn train_and_score(config: &RunConfig, train: &Dataset, test: &Dataset) -> seqset::Result<(TrainedRun, ScoreReport, Duration)> {
    let start = Instant::now();
    let (run, _) = train_run(config, train, None)?;
    let results = decode_corpus(&run.model, &run.vocab, &test.sources, &run.decode_options())?;
    let lines = results.iter().map(|r| serialize_table(&r.table)).collect::<seqset::Result<Vec<_>>>()?;
    let report = evaluate_corpus(&lines, &test.tables)?;
    Ok((run, report, start.elapsed()))
}

fn desk_scale_learning(train: &Dataset, test: &Dataset) -> seqset::Result<(bool, String, Option<TrainedRun>, f64)> {
    let config = smoke_config();
    let (run, report, elapsed) = train_and_score(&config, train, test)?;
    let (data, first) = (report.exact.data.f1, report.exact.first_column.f1);
    let ok = data >= 90.0 && first >= 95.0 && elapsed <= Duration::from_secs(30 * 60);
    let detail = format!(
        "{} steps in {:.0}s, exact F1 data {data:.2}, first column {first:.2}, header {:.2}",
        config.train.max_steps,
        elapsed.as_secs_f64(),
        report.exact.header.f1
    );
    Ok((ok, detail, Some(run), data))
}

fn parallelism(run: &TrainedRun) -> Outcome {
    let opts = run.decode_options();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut baselines = Vec::new();
    let mut ratios = Vec::new();
    for rows in 2..=10 {
        // Rows beyond the trained range still leave each table within the slot count.
        let d = synth(40, rows, rows, 200 + rows as u64);
        let (mut seq, mut bound, mut base) = (0.0, 0.0, 0.0);
        for (src, gold) in d.sources.iter().zip(&d.tables) {
            let r = generate_table(&run.model, &run.vocab, &run.vocab.encode(src), &opts)?;
            seq += r.sequential_steps as f64;
            let header_len = run.vocab.encode_cells(&gold.header).len() + 1;
            let max_row = gold.body.iter().map(|row| run.vocab.encode_cells(row).len() + 1).max().unwrap_or(0);
            bound += (header_len + max_row) as f64;
            base += sequence_baseline_steps(&run.vocab, gold) as f64;
        }
        let n = d.len() as f64;
        let (seq, bound, base) = (seq / n, bound / n, base / n);
        let within = seq <= 1.3 * bound;
        ok &= within;
        baselines.push(base);
        ratios.push(base / seq);
        lines.push(format!("rows {rows}: steps {seq:.1} vs bound {bound:.1}, baseline {base:.1}, speedup {:.2}", base / seq));
    }
    let monotone = ratios.windows(2).all(|w| w[1] > w[0]);
    let linear = linear_fit_r2(&baselines) > 0.99 && baselines.windows(2).all(|w| w[1] > w[0]);
    ok &= monotone && linear;
    lines.push(format!("speedup monotone {monotone}, baseline linear {linear}"));
    Ok((ok, lines.join("; ")))
}

fn linear_fit_r2(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn reorder_replication(train: &Dataset, test: &Dataset, unshuffled: Option<f64>) -> Outcome {
    let config = smoke_config();
    let mut scores = Vec::new();
    for copy in reorder_study(train, &[1, 2, 3]) {
        let (_, report, _) = train_and_score(&config, &copy, test)?;
        scores.push(report.exact.data.f1);
    }
    let mean = scores.iter().sum::<f64>() / 3.0;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let base = unshuffled.map_or("unavailable".to_string(), |u| format!("{u:.2}"));
    Ok((
        std <= 1.0,
        format!("data F1 {scores:.2?}, sample std {std:.3}, unshuffled {base}"),
    ))
}

/// Independent chrF: character n-grams 1..=6 over the text with whitespace
/// removed, precision and recall averaged over orders present, beta = 2.
fn reference_chrf(hyp: &str, reference: &str) -> f64 {
    use std::collections::HashMap;
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let grams = |s: &[char], n: usize| -> HashMap<Vec<char>, usize> {
        let mut m = HashMap::new();
        for w in s.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
        m
    };
    let (mut ps, mut rs, mut orders) = (0.0, 0.0, 0);
    for n in 1..=6 {
        let (hg, rg) = (grams(&h, n), grams(&r, n));
        let (ht, rt): (usize, usize) = (hg.values().sum(), rg.values().sum());
        if ht == 0 || rt == 0 {
            continue;
        }
        let hit: usize = hg.iter().map(|(g, c)| (*c).min(*rg.get(g).unwrap_or(&0))).sum();
        ps += hit as f64 / ht as f64;
        rs += hit as f64 / rt as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let (p, r) = (ps / orders as f64, rs / orders as f64);
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / (4.0 * p + r)
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn data_rec(row: &str, col: &str, content: &str) -> CellRecord {
    CellRecord {
        part: Part::Data,
        row_key: row.into(),
        col_key: col.into(),
        content: content.into(),
    }
}

fn random_table(rng: &mut ChaCha8Rng) -> Table {
    let words = ["a", "bb", "c d", "7", "12", "x y z", ""];
    let cols = rng.random_range(1..5);
    let rows = rng.random_range(0..6);
    let mut cell = || words[rng.random_range(0..words.len())].to_string();
    let header = (0..cols).map(|_| cell()).collect();
    let body = (0..rows).map(|_| (0..cols).map(|_| cell()).collect()).collect();
    Table::new(header, body)
}

fn permute(rng: &mut ChaCha8Rng, t: &Table) -> Table {
    let mut order: Vec<usize> = (1..t.columns()).collect();
    order.shuffle(rng);
    order.insert(0, 0);
    let pick = |row: &Vec<String>| order.iter().map(|&c| row[c].clone()).collect::<Vec<_>>();
    let mut body: Vec<Vec<String>> = t.body.iter().map(pick).collect();
    body.shuffle(rng);
    Table::new(pick(&t.header), body)
}

fn metric_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let figure = Table::new(
        s(&["", "AST", "PTS"]),
        vec![s(&["Kevin Durant", "5", "22"]), s(&["Stephen Curry", "", "30"])],
    );
    let r = extract_records(&figure)?;
    check("figure data records", r.data.contains(&data_rec("Kevin Durant", "AST", "5")) && r.data.contains(&data_rec("Kevin Durant", "PTS", "22")));
    check("record count", r.data.len() == 2 * 2 - 1 && r.header.len() == 2 && r.first_column.len() == 2);
    let header_only = extract_records(&Table::new(s(&["a", "b"]), Vec::new()))?;
    check("header-only", header_only.first_column.is_empty() && header_only.data.is_empty());
    let golds: Vec<CellRecord> = (0..4).map(|i| data_rec("r", "c", &i.to_string())).collect();
    let mut preds = golds.clone();
    check("identical", exact_f1(&preds, &golds).f1 == 100.0);
    preds.push(data_rec("r", "c", "spurious"));
    let prf = exact_f1(&preds, &golds);
    check("spurious record", prf.precision == 80.0 && prf.recall == 100.0 && (prf.f1 - 800.0 / 9.0).abs() < 1e-9);
    let disjoint = exact_f1(&[data_rec("a", "b", "c")], &[data_rec("x", "y", "z")]);
    check("disjoint", disjoint.precision == 0.0 && disjoint.recall == 0.0 && disjoint.f1 == 0.0);
    check("empty/empty", exact_f1(&[], &[]).f1 == 100.0 && exact_f1(&[], &golds).f1 == 0.0);
    check("chrf identity", chrf_f1(&golds, &golds).f1 == 100.0);
    let (a, b) = (data_rec("Kevin Durant", "PTS", "22"), data_rec("Kevin Durant", "PTS", "23"));
    let expected = reference_chrf(&a.similarity_text(), &b.similarity_text());
    check("chrf edit", (chrf_f1(&[a], &[b]).f1 - expected).abs() < 1e-6);
    let gold_lines = serialize_table(&figure)?;
    let half = Table::new(s(&["", "AST", "PTS"]), vec![s(&["Kevin Durant", "5", ""])]);
    let macro_report = evaluate_corpus(&[gold_lines.clone(), serialize_table(&half)?], &[figure.clone(), figure.clone()])?;
    let first = score_table(&half, &figure)?.0.data.f1;
    check("macro average", (macro_report.exact.data.f1 - (100.0 + first) / 2.0).abs() < 1e-9 && first == 50.0);
    let perfect = evaluate_corpus(std::slice::from_ref(&gold_lines), std::slice::from_ref(&figure))?;
    check("perfect corpus", Part::ALL.iter().all(|&p| perfect.exact.part(p).f1 == 100.0) && perfect.error_rate == 0.0);
    let broken = evaluate_corpus(&["a ⟨s⟩ b ⟨n⟩ c".to_string()], std::slice::from_ref(&figure))?;
    check("malformed corpus", broken.error_rate == 100.0);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut order_failures = 0;
    for _ in 0..1000 {
        let (pred, gold) = (random_table(&mut rng), random_table(&mut rng));
        let reference = score_table(&pred, &gold)?;
        let (pp, gp) = (permute(&mut rng, &pred), permute(&mut rng, &gold));
        if score_table(&pp, &gold)? != reference || score_table(&pred, &gp)? != reference || score_table(&pp, &gp)? != reference {
            order_failures += 1;
        }
        let (rp, rg) = (extract_records(&pred)?, extract_records(&gold)?);
        for part in Part::ALL {
            let (x, y) = (exact_f1(rp.part(part), rg.part(part)), exact_f1(rg.part(part), rp.part(part)));
            if x.precision != y.recall || x.recall != y.precision || chrf_f1(rp.part(part), rp.part(part)).f1 != 100.0 {
                order_failures += 1;
            }
        }
    }
    check("permutation trials", order_failures == 0);
    Ok((
        failures.is_empty(),
        format!("12 examples, 1000 permutation trials, failed: {failures:?}"),
    ))
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome, all_ok: &mut bool) {
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    *all_ok &= ok;
    println!("{} {n} {name} ({secs:.1}s): {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let t = Instant::now();
    let o = matching_oracle().map(|(ok, d)| (ok && t.elapsed() < Duration::from_secs(10), d));
    report(1, "matching oracle", t, o, &mut all_ok);
    let t = Instant::now();
    let o = gradient_integrity().map(|(ok, d)| (ok && t.elapsed() < Duration::from_secs(60), d));
    report(2, "gradient integrity", t, o, &mut all_ok);
    let t = Instant::now();
    report(3, "order invariance of supervision", t, order_invariance(), &mut all_ok);

    let train = synth(2000, 2, 6, 1);
    let test = synth(200, 2, 6, 2);
    let t = Instant::now();
    let (trained, unshuffled) = match desk_scale_learning(&train, &test) {
        Ok((ok, detail, run, f1)) => {
            report(5, "desk-scale learning", t, Ok((ok, detail)), &mut all_ok);
            (run, Some(f1))
        }
        Err(e) => {
            report(5, "desk-scale learning", t, Err(e), &mut all_ok);
            (None, None)
        }
    };
    let t = Instant::now();
    report(4, "zero error rate", t, zero_error_rate(trained.as_ref()), &mut all_ok);
    let t = Instant::now();
    let o = match &trained {
        Some(run) => parallelism(run),
        None => Ok((false, "no trained checkpoint available".into())),
    };
    report(6, "parallelism accounting", t, o, &mut all_ok);
    let t = Instant::now();
    report(7, "reorder-study replication", t, reorder_replication(&train, &test, unshuffled), &mut all_ok);
    let t = Instant::now();
    report(8, "metric suite", t, metric_suite(), &mut all_ok);
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
