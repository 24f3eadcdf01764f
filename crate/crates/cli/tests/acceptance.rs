//! Acceptance checks, all offline against the mock backends. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any fail.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use biolinker::candidates::{build_options, dedup_by_concept, DedupMode};
use biolinker::embedding::mock_embed;
use biolinker::eval::{load_dataset, measure_throughput, paired_t_test};
use biolinker::export::{export_training, ExportOptions};
use biolinker::genqr::fuse_query;
use biolinker::index::{AliasIndex, RetrievalHit};
use biolinker::kb::{AliasRecord, KbFormat};
use biolinker::mock::OracleSpec;
use biolinker::rerank::build_prompt;
use biolinker::{Backends, ConceptId, EmbeddingVector, KnowledgeBase, LinkSettings, Linker, MentionQuery, PipelineConfig, RerankMode};
use biolinker_cli::{cmd_evaluate, cmd_export_training, resolve_config, Overrides};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn base_config() -> PipelineConfig {
    resolve_config(&Overrides {
        config: Some(fixture("mock.toml")),
        kb: Some(fixture("kb.jsonl")),
        dataset: Some(fixture("mentions.jsonl")),
        ..Overrides::default()
    })
    .expect("fixture config")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn fixture_linker(config: &PipelineConfig) -> Result<(Linker, Backends), String> {
    let backends = Backends::from_config(config).map_err(e2s)?;
    let kb_path = config.kb_path.as_ref().unwrap();
    let kb = KnowledgeBase::load(kb_path, KbFormat::from_path(kb_path)).map_err(e2s)?;
    let index = AliasIndex::build(&kb, backends.embedder.as_ref()).map_err(e2s)?;
    Ok((Linker::from_backends(index, &backends, LinkSettings::from(config)), backends))
}

fn index_exactness() -> Check {
    let started = Instant::now();
    let dim = 48;
    let mut vectors: Vec<EmbeddingVector> = (0..1000).map(|i| mock_embed(&format!("alias-{i}"), dim, 11)).collect();
    // duplicated rows force exact score ties
    for i in 0..40 {
        vectors[900 + i] = vectors[i * 7].clone();
    }
    let records: Vec<AliasRecord> = (0..1000)
        .map(|i| AliasRecord {
            alias: format!("alias-{i}"),
            concept_id: ConceptId::new(format!("C{}", i / 3)).unwrap(),
        })
        .collect();
    let index = AliasIndex::<f64>::from_vectors(records, &vectors).map_err(e2s)?;

    for q in 0..200 {
        let query = if q % 10 == 0 { vectors[(q * 7) % 280].clone() } else { mock_embed(&format!("query-{q}"), dim, 12) };
        let got = index.search(&query, 20).map_err(e2s)?;
        let mut brute: Vec<(f64, usize)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_slice().iter().zip(query.as_slice()).map(|(a, b)| a * b).sum(), i))
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        brute.truncate(20);
        let got_ord: Vec<usize> = got.iter().map(|h| h.ordinal).collect();
        let want_ord: Vec<usize> = brute.iter().map(|b| b.1).collect();
        ensure(got_ord == want_ord, || format!("query {q}: {got_ord:?} != {want_ord:?}"))?;
        for (h, b) in got.iter().zip(&brute) {
            ensure((h.score - b.0).abs() < 1e-12, || format!("query {q}: score {} vs {}", h.score, b.0))?;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("200 queries over 1000 rows exact, {secs:.2}s"))
}

fn fusion_identities() -> Check {
    for i in 0..100 {
        let m = mock_embed(&format!("m{i}"), 32, 1);
        let f = mock_embed(&format!("f{i}"), 32, 2);
        ensure(fuse_query(&m, &f, 1.0).map_err(e2s)?.vector == m, || format!("pair {i}: alpha=1"))?;
        ensure(fuse_query(&m, &f, 0.0).map_err(e2s)?.vector == f, || format!("pair {i}: alpha=0"))?;
    }
    let m = EmbeddingVector::new(vec![1.0f64, 0.0]).map_err(e2s)?;
    let f = EmbeddingVector::new(vec![0.0f64, 1.0]).map_err(e2s)?;
    let q = fuse_query(&m, &f, 0.6).map_err(e2s)?.vector;
    let (x, y) = (q.as_slice()[0], q.as_slice()[1]);
    ensure((x - 0.83205).abs() <= 1e-5 && (y - 0.55470).abs() <= 1e-5, || format!("got ({x}, {y})"))?;
    Ok(format!("100 pairs exact; fused = ({x:.6}, {y:.6})"))
}

fn alpha_one_invariance() -> Check {
    let mut with = base_config();
    with.alpha = 1.0;
    with.genqr_enabled = true;
    let mut without = base_config();
    without.genqr_enabled = false;
    let (a, backends) = fixture_linker(&with)?;
    let (b, _) = fixture_linker(&without)?;
    let ds = load_dataset(fixture("mentions.jsonl")).map_err(e2s)?;
    ensure(ds.len() == 100, || format!("fixture has {} mentions", ds.len()))?;
    for (i, m) in ds.mentions.iter().enumerate() {
        let ha = a.retrieve(&m.query).map_err(e2s)?;
        let hb = b.retrieve(&m.query).map_err(e2s)?;
        ensure(ha.feedback.is_some(), || format!("mention {i}: no feedback generated"))?;
        ensure(ha.hits == hb.hits, || format!("mention {i}: hit lists differ"))?;
    }
    let feedback_calls = backends.mock_genqr.as_ref().map_or(0, |m| m.calls());
    ensure(feedback_calls == 100, || format!("{feedback_calls} feedback calls"))?;
    Ok("100 mentions, identical hit lists".into())
}

fn oracle_upper_bound(dir: &Path) -> Check {
    let mut c = base_config();
    c.mock.reranker = OracleSpec::always_gold();
    let ev = cmd_evaluate(&c, &dir.join("oracle"), false).map_err(e2s)?;
    let r = &ev.report;
    let recall = r.outcomes.iter().filter(|o| o.gold_in_top_k).count() as f64 / r.n as f64;
    ensure(r.recall_at_k == recall, || "recall bookkeeping".into())?;
    ensure(recall > 0.0 && recall < 1.0, || format!("fixture recall {recall} is degenerate"))?;
    ensure(r.acc_at_1 == r.recall_at_k, || format!("Acc@1 {} != recall@{} {}", r.acc_at_1, c.k, r.recall_at_k))?;
    Ok(format!("Acc@1 = recall@{} = {:.2}", c.k, r.acc_at_1))
}

fn always_none(dir: &Path) -> Check {
    let mut c = base_config();
    c.mock.reranker = OracleSpec::AlwaysNone;
    let r = cmd_evaluate(&c, &dir.join("none"), false).map_err(e2s)?.report;
    let nil_fraction = r.gold_nil as f64 / r.n as f64;
    ensure(r.acc_at_1 == r.baseline_acc, || format!("plain {} != baseline {}", r.acc_at_1, r.baseline_acc))?;
    ensure(r.nil_sensitive_acc_at_1 == nil_fraction, || {
        format!("NIL-sensitive {} != NIL fraction {nil_fraction}", r.nil_sensitive_acc_at_1)
    })?;
    let mut gold = base_config();
    gold.mock.reranker = OracleSpec::always_gold();
    let g = cmd_evaluate(&gold, &dir.join("none-vs-gold"), false).map_err(e2s)?.report;
    ensure(g.baseline_acc == r.baseline_acc, || "baseline depends on the re-ranker".into())?;
    Ok(format!(
        "plain = baseline = {:.2}; NIL-sensitive = NIL fraction = {:.2}",
        r.acc_at_1, nil_fraction
    ))
}

fn template_fidelity() -> Check {
    let golden = std::fs::read_to_string(fixture("setwise_two_candidates.golden")).map_err(e2s)?;
    let hit = |alias: &str, id: &str, score: f64, rank: usize| RetrievalHit {
        alias: alias.into(),
        concept_id: ConceptId::new(id).unwrap(),
        score,
        rank,
        ordinal: rank - 1,
    };
    let hits = vec![
        hit("amine oxidase 1", "HGNC:AOC1", 0.91, 1),
        hit("AOC1", "HGNC:AOC1", 0.88, 2),
        hit("aortic occlusion", "MESH:D001157", 0.52, 3),
    ];
    let cs = dedup_by_concept(&hits, DedupMode::Inference, None);
    let opts = build_options(&cs).map_err(e2s)?;
    let q = MentionQuery::new("AO1", "Mutations in AO1 were found in two families.", "doc").map_err(e2s)?;
    let prompt = build_prompt(&q, &opts);
    ensure(prompt.rendered == golden, || format!("rendered prompt differs:\n{}\n---\n{golden}", prompt.rendered))?;
    ensure(prompt.rendered.ends_with("<think></think>\nAnswer:"), || "suffix".into())?;
    Ok("byte-identical to golden file".into())
}

fn call_counts() -> Check {
    let ds = load_dataset(fixture("mentions.jsonl")).map_err(e2s)?;
    let queries = ds.queries();

    let mut c = base_config();
    c.rerank_mode = RerankMode::Setwise;
    let (linker, backends) = fixture_linker(&c)?;
    let traces = linker.link_all(&queries, true);
    let calls = backends.mock_reranker.as_ref().unwrap().calls();
    ensure(calls == ds.len(), || format!("set-wise: {calls} calls for {} mentions", ds.len()))?;
    ensure(traces.iter().all(|t| t.decision.llm_calls == 1), || "set-wise trace call count".into())?;

    c.rerank_mode = RerankMode::Pointwise;
    let (linker, backends) = fixture_linker(&c)?;
    let traces = linker.link_all(&queries, true);
    let expected: usize = traces.iter().map(|t| t.candidates.len()).sum();
    let calls = backends.mock_reranker.as_ref().unwrap().calls();
    ensure(calls == expected, || format!("point-wise: {calls} calls, expected {expected}"))?;
    for t in &traces {
        ensure(t.decision.llm_calls == t.candidates.len(), || format!("mention {}: per-mention count", t.mention_idx))?;
    }
    Ok(format!(
        "set-wise 1 call/mention; point-wise {expected} calls = sum of |candidates| ({:.1}/mention)",
        expected as f64 / ds.len() as f64
    ))
}

fn throughput(dir: &Path) -> Check {
    let ds = load_dataset(fixture("mentions.jsonl")).map_err(e2s)?;
    let fifty: Vec<_> = ds.queries().into_iter().take(50).collect();
    let mut c = base_config();
    c.mock.reranker = OracleSpec::always_gold().delayed(10);

    let (linker, backends) = fixture_linker(&c)?;
    let mock = backends.mock_reranker.as_ref().unwrap();
    let t = measure_throughput(&linker, &fifty, c.throughput_warmup).map_err(e2s)?;
    ensure(mock.max_inflight() <= 1, || format!("{} concurrent LLM calls", mock.max_inflight()))?;
    ensure(mock.calls() == 50, || format!("{} calls", mock.calls()))?;
    ensure((85.0..=115.0).contains(&t.qps), || format!("measured {:.1} Q/s", t.qps))?;

    // the same protocol through the evaluate command on a 50-mention file
    let sub = dir.join("fifty.jsonl");
    let text = std::fs::read_to_string(fixture("mentions.jsonl")).map_err(e2s)?;
    std::fs::write(&sub, text.lines().take(50).map(|l| format!("{l}\n")).collect::<String>()).map_err(e2s)?;
    c.dataset_path = Some(sub);
    let ev = cmd_evaluate(&c, &dir.join("throughput"), true).map_err(e2s)?;
    let reported = ev.report.throughput_qps.ok_or("no Q/s in report")?;
    ensure((85.0..=115.0).contains(&reported), || format!("reported {reported:.1} Q/s"))?;
    Ok(format!("{:.1} Q/s measured, {reported:.1} Q/s reported, max in-flight {}", t.qps, mock.max_inflight()))
}

/// Student t density normalizing constant from exact half-integer gammas.
fn t_norm(nu: f64) -> f64 {
    fn gamma_half(k: u32) -> f64 {
        // Gamma(k / 2)
        let (mut x, mut g) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (0.5, std::f64::consts::PI.sqrt()) };
        while x < k as f64 / 2.0 {
            g *= x;
            x += 1.0;
        }
        g
    }
    let k = nu as u32;
    gamma_half(k + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(k))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, depth)
}

/// Independent two-sided paired t-test.
fn t_test_oracle(s: &[u8], b: &[u8]) -> (f64, f64) {
    let n = s.len() as f64;
    let d: Vec<f64> = s.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
    if ss == 0.0 {
        return if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
    }
    let t = mean / (ss / (n - 1.0)).sqrt() * n.sqrt();
    let nu = n - 1.0;
    let c = t_norm(nu);
    let pdf = move |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let central = simpson(&pdf, 0.0, t.abs(), 1e-14, 50);
    (t, (1.0 - 2.0 * central).clamp(0.0, 1.0))
}

fn t_test() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=150);
        let bias = rng.random_range(0.2..0.8);
        let s: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(bias))).collect();
        let b: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let got = paired_t_test(&s, &b).map_err(e2s)?;
        let (t, p) = t_test_oracle(&s, &b);
        let t_ok = if t.is_finite() { (got.t_statistic - t).abs() <= 1e-9 } else { got.t_statistic == t };
        ensure(t_ok, || format!("case {case}: t {} vs {t}", got.t_statistic))?;
        ensure((got.p_value - p).abs() <= 1e-9, || format!("case {case} (n={n}): p {} vs {p}", got.p_value))?;
        ensure(got.significant_at_95 == (got.p_value < 0.05), || "significance flag".into())?;
        worst = worst.max((got.p_value - p).abs());
    }
    let mut s = [0u8; 10];
    s[..4].fill(1);
    let r = paired_t_test(&s, &[0u8; 10]).map_err(e2s)?;
    ensure((r.t_statistic - 2.449).abs() < 1e-3, || format!("t = {}", r.t_statistic))?;
    ensure((r.p_value - 0.037).abs() < 1e-3, || format!("p = {}", r.p_value))?;
    ensure(r.significant_at_95, || "reference case not significant".into())?;
    Ok(format!(
        "100 pairs within 1e-9 (max |dp| = {worst:.1e}); reference t = {:.4}, p = {:.4}",
        r.t_statistic, r.p_value
    ))
}

fn export_determinism(dir: &Path) -> Check {
    let c = base_config();
    let (a, b) = (dir.join("train-a.jsonl"), dir.join("train-b.jsonl"));
    let records = cmd_export_training(&c, &a).map_err(e2s)?;
    cmd_export_training(&c, &b).map_err(e2s)?;
    let (ba, bb) = (std::fs::read(&a).map_err(e2s)?, std::fs::read(&b).map_err(e2s)?);
    ensure(ba == bb, || "exports differ".into())?;

    let ds = load_dataset(fixture("mentions.jsonl")).map_err(e2s)?;
    for (r, m) in records.iter().zip(&ds.mentions) {
        if m.gold.is_none() {
            ensure(r.answer_letter == r.none_letter, || format!("NIL mention {} got {}", r.mention_idx, r.answer_letter))?;
        }
        let content = &r.sample.messages[1].content;
        ensure(content == &format!("<think></think>\nAnswer: {}", r.answer_letter), || content.clone())?;
    }

    // every option alias must be one of its own concept's retrieved aliases,
    // and sampling must sometimes pick a non-best alias
    let mut plain = c.clone();
    plain.training_shuffle = false;
    let (linker, _) = fixture_linker(&plain)?;
    let mut non_best = 0;
    for seed in [1u64, 2, 3] {
        let recs = export_training(&linker, &ds, &ExportOptions { seed, shuffle: true }).map_err(e2s)?;
        for (r, m) in recs.iter().zip(&ds.mentions) {
            let hits = linker.retrieve(&m.query).map_err(e2s)?.hits;
            let mut by_concept: HashMap<&ConceptId, Vec<&str>> = HashMap::new();
            for h in &hits {
                by_concept.entry(&h.concept_id).or_default().push(&h.alias);
            }
            let user = &r.sample.messages[0].content;
            let options: Vec<&str> = user
                .lines()
                .skip_while(|l| !l.starts_with("<Options>:"))
                .skip(1)
                .filter_map(|l| l.get(3..))
                .collect();
            let (candidates, none) = options.split_at(options.len() - 1);
            ensure(none == ["None of the above."], || format!("mention {}: last option {none:?}", r.mention_idx))?;
            let mut concepts = HashSet::new();
            for alias in candidates {
                let owner = hits
                    .iter()
                    .find(|h| h.alias == *alias)
                    .map(|h| &h.concept_id)
                    .ok_or_else(|| format!("mention {}: {alias:?} was not retrieved", r.mention_idx))?;
                ensure(concepts.insert(owner), || format!("mention {}: concept repeated", r.mention_idx))?;
                if by_concept[owner][0] != *alias {
                    non_best += 1;
                }
            }
            ensure(concepts.len() == by_concept.len(), || format!("mention {}: concept set", r.mention_idx))?;
        }
    }
    ensure(non_best > 0, || "sampling never left the best alias".into())?;
    let nil = records.iter().filter(|r| r.answer_letter == r.none_letter).count();
    Ok(format!("{} bytes identical; {nil} samples labelled None; {non_best} sampled non-best aliases", ba.len()))
}

fn pointwise_threshold() -> Check {
    let ds = load_dataset(fixture("mentions.jsonl")).map_err(e2s)?;
    let queries = ds.queries();
    let mut c = base_config();
    c.rerank_mode = RerankMode::Pointwise;
    c.mock.reranker = OracleSpec::AlwaysGold {
        gold_yes: 0.3,
        other_yes: 0.1,
    };

    c.nil_sensitive = true;
    let (linker, _) = fixture_linker(&c)?;
    for t in linker.link_all(&queries, true) {
        let scores = t.pointwise_scores.as_ref().ok_or("no scores")?;
        ensure(scores.iter().all(|s| s.yes_probability < 0.5), || "canned score >= 0.5".into())?;
        ensure(t.decision.is_nil && t.decision.predicted.is_none(), || format!("mention {} not NIL", t.mention_idx))?;
    }

    c.nil_sensitive = false;
    let (linker, _) = fixture_linker(&c)?;
    for t in linker.link_all(&queries, true) {
        let scores = t.pointwise_scores.as_ref().ok_or("no scores")?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.yes_probability > scores[best].yes_probability {
                best = i;
            }
        }
        let argmax = scores.get(best).map(|s| &s.concept_id);
        ensure(!t.decision.is_nil, || format!("mention {} NIL without nil_sensitive", t.mention_idx))?;
        ensure(t.decision.predicted.as_ref() == argmax, || format!("mention {} not argmax", t.mention_idx))?;
    }
    Ok("all NIL with nil_sensitive; argmax otherwise".into())
}

fn end_to_end_determinism(dir: &Path) -> Check {
    let c = base_config();
    let (a, b) = (dir.join("run-a"), dir.join("run-b"));
    cmd_evaluate(&c, &a, false).map_err(e2s)?;
    cmd_evaluate(&c, &b, false).map_err(e2s)?;
    for f in ["report.json", "report.txt", "traces.jsonl", "traces.jsonl.meta.json"] {
        let (x, y) = (std::fs::read(a.join(f)).map_err(e2s)?, std::fs::read(b.join(f)).map_err(e2s)?);
        ensure(x == y, || format!("{f} differs"))?;
    }
    Ok("report.json, report.txt and traces byte-identical".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("index exactness", Box::new(index_exactness)),
        ("fusion identities", Box::new(fusion_identities)),
        ("alpha=1 ranking invariance", Box::new(alpha_one_invariance)),
        ("oracle upper bound", Box::new(|| oracle_upper_bound(dir))),
        ("always-None oracle", Box::new(|| always_none(dir))),
        ("template fidelity", Box::new(template_fidelity)),
        ("call-count economics", Box::new(call_counts)),
        ("throughput protocol", Box::new(|| throughput(dir))),
        ("t-test correctness", Box::new(t_test)),
        ("training export determinism", Box::new(|| export_determinism(dir))),
        ("point-wise NIL threshold", Box::new(pointwise_threshold)),
        ("end-to-end determinism", Box::new(|| end_to_end_determinism(dir))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
