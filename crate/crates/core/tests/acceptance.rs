//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hysem_core::chunking::{chunk_text, window_ranges, ChunkSpec, WhitespaceTokenizer};
use hysem_core::fetcher::{
    max_calls_in_window, rate_limited_execute, unpaywall_url, FetchConfig, FetchTask, MemorySink, MemoryTransport,
    RateLimit, SimulatedClock, TokenBucket, Clock,
};
use hysem_core::graph::*;
use hysem_core::index::{rrf_fuse, FusionConfig, RankedList, Source};
use hysem_core::layout::*;
use hysem_core::pipeline::{run_pipeline, PipelineConfig, Stage};
use hysem_core::qaloop::*;
use hysem_core::records::{deduplicate, merge_and_deduplicate, normalize_key, FieldValue, MetadataRecord};
use hysem_core::topics::{
    build_vocabulary, npmi, topic_coherence, train_lda, CooccurrenceStats, Corpus, LdaConfig, NPMI_EPS,
};
use hysem_core::unify::{precompute, unify_term, unify_term_detailed, DictionaryConfig, HashEmbedding, UnifyConfig};
use hysem_core::verify::{classify, content_similarity, validate_schema, CanonicalTable, Observation, SourceKind, Validity};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- records

fn keep_first_oracle(input: &[MetadataRecord]) -> Vec<MetadataRecord> {
    let mut idx: Vec<usize> = (0..input.len()).collect();
    idx.sort_by_key(|&i| (normalize_key(&input[i].doi), normalize_key(&input[i].title), i));
    let mut out = Vec::new();
    for (pos, &i) in idx.iter().enumerate() {
        let (doi, title) = (normalize_key(&input[i].doi), normalize_key(&input[i].title));
        let earlier = &idx[..pos];
        let dup = if doi.is_empty() {
            earlier.iter().any(|&j| normalize_key(&input[j].doi).is_empty() && normalize_key(&input[j].title) == title)
        } else {
            earlier.iter().any(|&j| normalize_key(&input[j].doi) == doi)
        };
        if !dup {
            out.push(input[i].clone());
        }
    }
    out
}

fn random_record(rng: &mut ChaCha8Rng, serial: usize) -> MetadataRecord {
    let doi = if rng.gen_bool(0.3) {
        String::new()
    } else {
        let base = format!("10.{}/x{}", rng.gen_range(1..4), rng.gen_range(0..25));
        match rng.gen_range(0..4) {
            0 => base.to_uppercase(),
            1 => format!(" {base} "),
            _ => base,
        }
    };
    let title = ["Ozone", "ozone ", "PM and heart", "PM AND HEART", "", "Soil carbon"][rng.gen_range(0..6)];
    let mut r = MetadataRecord::with_doi_title(&doi, title);
    r.citation_count = serial as u64;
    r
}

fn criterion_dedup() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records = 0;
    for case in 0..500 {
        let n = rng.gen_range(0..=200);
        let lists: Vec<Vec<MetadataRecord>> = {
            let all: Vec<MetadataRecord> = (0..n).map(|i| random_record(&mut rng, i)).collect();
            let cut = rng.gen_range(0..=n);
            vec![all[..cut].to_vec(), all[cut..].to_vec()]
        };
        let flat: Vec<MetadataRecord> = lists.iter().flatten().cloned().collect();
        records += flat.len();
        let out = merge_and_deduplicate(lists);
        ensure!(out == keep_first_oracle(&flat), "set {case}: differs from oracle");
        ensure!(deduplicate(out.clone()) == out, "set {case}: not idempotent");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("500 sets, {records} records, {:.2}s", elapsed.as_secs_f64()))
}

// --------------------------------------------------------------- chunking

fn expected_chunks(n: usize, max: usize, overlap: usize) -> usize {
    if n <= max {
        1
    } else {
        (n - max).div_ceil(max - overlap) + 1
    }
}

fn check_windows(n: usize, max: usize, overlap: usize) -> Result<(), String> {
    let spec = ChunkSpec::new(max, overlap).map_err(|e| e.to_string())?;
    let w = window_ranges(n, spec);
    ensure!(w.len() == expected_chunks(n, max, overlap), "count for ({n},{max},{overlap}) = {}", w.len());
    ensure!(w[0].start == 0 && w.last().unwrap().end == n, "coverage for ({n},{max},{overlap})");
    for pair in w.windows(2) {
        ensure!(pair[0].len() == max, "short inner window for ({n},{max},{overlap})");
        ensure!(pair[0].end - pair[1].start == overlap, "overlap for ({n},{max},{overlap})");
    }
    Ok(())
}

fn criterion_chunker() -> Outcome {
    let text: String = (0..100).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
    let spec = ChunkSpec::new(40, 10).unwrap();
    ensure!(window_ranges(100, spec) == vec![0..40, 30..70, 60..100], "(100, 40, 10) windows");
    ensure!(chunk_text(&text, spec, &WhitespaceTokenizer).unwrap().len() == 3, "(100, 40, 10) chunk count");
    ensure!(window_ranges(0, spec).is_empty(), "empty input");

    let mut checked = 0;
    let maxes = [1, 2, 3, 7, 40, 64, 199, 500, 1999, 2000, 2001];
    for n in 1..=2000 {
        for &max in &maxes {
            for overlap in [0, 1, max / 2, max - 1] {
                if overlap < max {
                    check_windows(n, max, overlap)?;
                    checked += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20_000 {
        let n = rng.gen_range(1..=2000);
        let max = rng.gen_range(1..=2100);
        let overlap = rng.gen_range(0..max);
        check_windows(n, max, overlap)?;
        checked += 1;
    }
    Ok(format!("{checked} (n, max, overlap) triples"))
}

// ----------------------------------------------------------------- layout

fn fc(id: i64, l: f64, t: f64, r: f64, b: f64, label: Option<&str>) -> Cluster {
    let text = match label {
        Some(n) => format!("c{id} = x ({n})"),
        None => format!("c{id} = x"),
    };
    Cluster {
        id,
        label: ClusterLabel::Formula,
        confidence: 0.9,
        bbox: BoundingBox::new(l, t, r, b),
        cells: vec![TextCell { bbox: BoundingBox::new(l, t, r, b), text }],
        children: vec![],
    }
}

fn partition(out: &[Cluster]) -> Vec<Vec<i64>> {
    let mut groups: Vec<Vec<i64>> = out
        .iter()
        .filter(|c| c.label == ClusterLabel::Formula)
        .map(|c| {
            let mut ids: Vec<i64> =
                c.cells.iter().map(|cell| cell.text.split_whitespace().next().unwrap()[1..].parse().unwrap()).collect();
            ids.sort();
            ids
        })
        .collect();
    groups.sort();
    groups
}

fn golden_pages() -> Vec<(&'static str, Vec<Cluster>, Vec<Vec<i64>>)> {
    let text_cluster = Cluster {
        id: 9,
        label: ClusterLabel::Text,
        confidence: 1.0,
        bbox: BoundingBox::new(500.0, 100.0, 900.0, 160.0),
        cells: vec![TextCell { bbox: BoundingBox::new(500.0, 100.0, 900.0, 160.0), text: "body".into() }],
        children: vec![],
    };
    vec![
        (
            "distinct numbers never merge",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("1")), fc(2, 100.0, 135.0, 400.0, 165.0, Some("2"))],
            vec![vec![1], vec![2]],
        ),
        (
            "equal numbers, close and aligned",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("1")), fc(2, 100.0, 140.0, 400.0, 170.0, Some("1"))],
            vec![vec![1, 2]],
        ),
        (
            "unnumbered gap exactly 3",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), fc(2, 100.0, 133.0, 400.0, 163.0, None)],
            vec![vec![1, 2]],
        ),
        (
            "unnumbered gap 3.5",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), fc(2, 100.0, 133.5, 400.0, 163.5, None)],
            vec![vec![1], vec![2]],
        ),
        (
            "unnumbered overlap 0.875 below 0.9",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), fc(2, 150.0, 132.0, 450.0, 162.0, None)],
            vec![vec![1], vec![2]],
        ),
        (
            "unnumbered overlap exactly 0.9",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), fc(2, 140.0, 132.0, 440.0, 162.0, None)],
            vec![vec![1, 2]],
        ),
        (
            "mixed gap exactly 12.8",
            vec![fc(1, 100.0, -30.0, 400.0, 0.0, Some("4")), fc(2, 100.0, 12.8, 400.0, 42.8, None)],
            vec![vec![1, 2]],
        ),
        (
            "mixed gap 13",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("4")), fc(2, 100.0, 143.0, 400.0, 173.0, None)],
            vec![vec![1], vec![2]],
        ),
        (
            "mixed overlap exactly 0.95",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("5")), fc(2, 120.0, 135.0, 420.0, 165.0, None)],
            vec![vec![1, 2]],
        ),
        (
            "mixed overlap 0.925 below 0.95",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("5")), fc(2, 130.0, 135.0, 430.0, 165.0, None)],
            vec![vec![1], vec![2]],
        ),
        (
            "far gap, alignment factor 0.1",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("3")), fc(2, 130.0, 170.0, 430.0, 200.0, Some("3"))],
            vec![vec![1, 2]],
        ),
        (
            "far gap, alignment factor 0.23",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("3")), fc(2, 170.0, 170.0, 470.0, 200.0, Some("3"))],
            vec![vec![1], vec![2]],
        ),
        (
            "far gap, aligned enough but overlap 0.82",
            vec![fc(1, 0.0, 100.0, 1000.0, 130.0, Some("3")), fc(2, 200.0, 170.0, 1200.0, 200.0, Some("3"))],
            vec![vec![1], vec![2]],
        ),
        (
            "gap above vertical threshold",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, Some("1")), fc(2, 100.0, 190.0, 400.0, 220.0, Some("1"))],
            vec![vec![1], vec![2]],
        ),
        (
            "overlapping boxes are skipped",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), fc(2, 100.0, 125.0, 400.0, 155.0, None)],
            vec![vec![1], vec![2]],
        ),
        (
            "transitive unnumbered chain",
            vec![
                fc(1, 100.0, 100.0, 400.0, 130.0, None),
                fc(2, 100.0, 132.0, 400.0, 162.0, None),
                fc(3, 100.0, 164.0, 400.0, 194.0, None),
            ],
            vec![vec![1, 2, 3]],
        ),
        (
            "labels do not chain through an unlabeled fragment",
            vec![
                fc(1, 100.0, 100.0, 400.0, 130.0, Some("1")),
                fc(2, 100.0, 135.0, 400.0, 165.0, None),
                fc(3, 100.0, 170.0, 400.0, 200.0, Some("2")),
            ],
            vec![vec![1, 2], vec![3]],
        ),
        (
            "threshold from median height",
            vec![
                fc(1, 100.0, 100.0, 400.0, 110.0, Some("6")),
                fc(2, 100.0, 125.0, 400.0, 135.0, Some("6")),
                fc(3, 100.0, 500.0, 400.0, 600.0, None),
            ],
            vec![vec![1, 2], vec![3]],
        ),
        (
            "non-formula clusters pass through",
            vec![fc(1, 100.0, 100.0, 400.0, 130.0, None), text_cluster, fc(2, 100.0, 132.0, 400.0, 162.0, None)],
            vec![vec![1, 2]],
        ),
    ]
}

fn random_page(rng: &mut ChaCha8Rng) -> Vec<Cluster> {
    let n = rng.gen_range(0..10);
    let mut top = 100.0;
    (0..n)
        .map(|i| {
            let l = rng.gen_range(50.0..200.0);
            let w = rng.gen_range(100.0..400.0);
            let t = top + rng.gen_range(-8.0..25.0);
            let h = rng.gen_range(10.0..45.0);
            top = t + h;
            let label = match rng.gen_range(0..6) {
                0 => Some("1"),
                1 => Some("2"),
                2 => Some("B3"),
                _ => None,
            };
            let mut c = fc(i + 1, l, t, l + w, t + h, label);
            if rng.gen_bool(0.1) {
                c.label = ClusterLabel::Text;
            }
            c
        })
        .collect()
}

fn criterion_layout_branches() -> Outcome {
    let cfg = LayoutConfig::default();
    let pages = golden_pages();
    for (name, clusters, want) in &pages {
        let out = merge_adjacent_formulas(clusters, &cfg).map_err(|e| e.to_string())?;
        let got = partition(&out);
        ensure!(&got == want, "page '{name}': got {got:?}, want {want:?}");
        for c in clusters.iter().filter(|c| c.label != ClusterLabel::Formula) {
            ensure!(out.contains(c), "page '{name}': non-formula cluster changed");
        }
        for c in out.iter().filter(|c| c.label == ClusterLabel::Formula) {
            let members: Vec<&Cluster> = clusters.iter().filter(|m| partition(&[c.clone()])[0].contains(&m.id)).collect();
            let env = members.iter().skip(1).fold(members[0].bbox, |a, m| a.envelope(&m.bbox));
            ensure!(c.bbox == env, "page '{name}': merged box is not the envelope");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut merged_pages = 0;
    for i in 0..200 {
        let clusters = random_page(&mut rng);
        let once = merge_adjacent_formulas(&clusters, &cfg).map_err(|e| e.to_string())?;
        let twice = merge_adjacent_formulas(&once, &cfg).map_err(|e| e.to_string())?;
        ensure!(once == twice, "fuzzed page {i} not idempotent");
        for c in &once {
            let labels: BTreeSet<String> = clusters
                .iter()
                .filter(|m| m.label == ClusterLabel::Formula && c.label == ClusterLabel::Formula)
                .filter(|m| partition(&[c.clone()])[0].contains(&m.id))
                .filter_map(extract_formula_number)
                .collect();
            ensure!(labels.len() <= 1, "fuzzed page {i} merged labels {labels:?}");
        }
        if once.len() < clusters.len() {
            merged_pages += 1;
        }
    }
    Ok(format!("{} golden pages, 200 fuzzed pages ({merged_pages} with merges)", pages.len()))
}

// ---------------------------------------------------------- reclassify

fn table(w: f64, h: f64, cells: usize) -> Cluster {
    let cell = TextCell { bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0), text: "v".into() };
    Cluster {
        id: 1,
        label: ClusterLabel::Table,
        confidence: 0.8,
        bbox: BoundingBox::new(0.0, 0.0, w, h),
        cells: vec![cell; cells],
        children: vec![],
    }
}

fn relabeled(c: Cluster, page: PageGeometry) -> bool {
    reclassify_sparse_tables(&[c], &page, &LayoutConfig::default())[0].label == ClusterLabel::Text
}

fn criterion_thresholds() -> Outcome {
    let big = PageGeometry { width: 1000.0, height: 1000.0, image_scale: 1.0 };
    let small = PageGeometry { width: 100.0, height: 100.0, image_scale: 1.0 };
    let cases: Vec<(&str, bool, bool)> = vec![
        ("area ratio just below 0.70", relabeled(table(699.9999, 1000.0, 10), big), false),
        ("area ratio exactly 0.70", relabeled(table(700.0, 1000.0, 10), big), true),
        ("spec example 800x900 with 10 cells", relabeled(table(800.0, 900.0, 10), big), true),
        ("spec example 800x900 with 800 cells", relabeled(table(800.0, 900.0, 800), big), false),
        ("49 cells", relabeled(table(100.0, 70.0, 49), small), true),
        ("50 cells", relabeled(table(100.0, 70.0, 50), small), false),
        ("density exactly 0.001", relabeled(table(1000.0, 1000.0, 1000), big), false),
        ("density just below 0.001", relabeled(table(1000.0, 1000.001, 1000), big), true),
        ("density just above 0.001", relabeled(table(1000.0, 999.999, 1000), big), false),
        ("cells counted through children", {
            let mut c = table(100.0, 70.0, 25);
            c.children = vec![table(10.0, 10.0, 25)];
            relabeled(c, small)
        }, false),
        ("TEXT cluster never touched", {
            let mut c = table(1000.0, 1000.0, 0);
            c.label = ClusterLabel::Picture;
            relabeled(c, big)
        }, false),
    ];
    for (name, got, want) in &cases {
        ensure!(got == want, "reclassify '{name}': relabeled = {got}, expected {want}");
    }

    let cell = |l: f64, w: f64, h: f64| TextCell { bbox: BoundingBox::new(l, 100.0, l + w, 100.0 + h), text: format!("{l}/{w}/{h}") };
    let margin: Vec<(&str, TextCell, bool)> = vec![
        ("l=20 w=30 h=10", cell(20.0, 30.0, 10.0), false),
        ("l=20 w=30 h=3", cell(20.0, 30.0, 3.0), true),
        ("l=200 w=30 h=10", cell(200.0, 30.0, 10.0), true),
        ("left just inside band", cell(79.999, 30.0, 10.0), false),
        ("left exactly 0.08 width", cell(80.0, 30.0, 10.0), true),
        ("width just under 0.08 width", cell(20.0, 79.999, 10.0), false),
        ("width exactly 0.08 width", cell(20.0, 80.0, 10.0), true),
        ("height exactly 5", cell(20.0, 30.0, 5.0), false),
        ("height just under 5", cell(20.0, 30.0, 4.999), true),
    ];
    for (name, c, kept) in &margin {
        let out = filter_margin_line_numbers(std::slice::from_ref(c), &big, &LayoutConfig::default());
        ensure!(out.is_empty() != *kept, "margin '{name}': kept = {}, expected {kept}", !out.is_empty());
    }
    Ok(format!("{} reclassification and {} margin boundaries", cases.len(), margin.len()))
}

// -------------------------------------------------------------------- rrf

fn rrf_oracle(lists: &[RankedList<u64>], cfg: FusionConfig) -> Vec<(u64, f64)> {
    let mut ranks: BTreeMap<u64, (Vec<usize>, Source)> = BTreeMap::new();
    for list in lists {
        let mut seen = HashSet::new();
        let unique: Vec<u64> = list.entries.iter().copied().filter(|id| seen.insert(*id)).collect();
        for (pos, id) in unique.iter().enumerate().take(cfg.top_k) {
            let e = ranks.entry(*id).or_insert((Vec::new(), list.source));
            e.0.push(pos + 1);
            e.1 = e.1.min(list.source);
        }
    }
    let mut rows: Vec<(u64, f64, Source)> = ranks
        .into_iter()
        .map(|(id, (mut rs, src))| {
            rs.sort();
            (id, rs.iter().map(|&r| 1.0 / (cfg.k as f64 + r as f64)).sum(), src)
        })
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(id, s, _)| (id, s)).collect()
}

fn criterion_rrf() -> Outcome {
    let cfg = FusionConfig::default();
    let one = rrf_fuse(&[RankedList::new(Source::Semantic, vec![7u64])], cfg);
    ensure!(one.len() == 1 && close(one[0].score, 1.0 / 61.0, 1e-12), "sole rank-1 score {:?}", one);
    let sources = [Source::Semantic, Source::Keyword, Source::Graph];
    let three: Vec<RankedList<u64>> = sources.iter().map(|&s| RankedList::new(s, vec![7u64, 8])).collect();
    let fused = rrf_fuse(&three, cfg);
    ensure!(fused[0].id == 7 && close(fused[0].score, 3.0 / 61.0, 1e-12), "triple rank-1 score {:?}", fused[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let cfg = FusionConfig { k: rng.gen_range(1..=100), top_k: rng.gen_range(1..=60) };
        let lists: Vec<RankedList<u64>> = (0..rng.gen_range(0..=5))
            .map(|_| {
                let mut ids: Vec<u64> = (0..80).collect();
                ids.shuffle(&mut rng);
                ids.truncate(rng.gen_range(0..=50));
                if rng.gen_bool(0.1) && !ids.is_empty() {
                    let dup = ids[0];
                    ids.push(dup);
                }
                RankedList::new(*sources.choose(&mut rng).unwrap(), ids)
            })
            .collect();
        let got: Vec<(u64, f64)> = rrf_fuse(&lists, cfg).into_iter().map(|f| (f.id, f.score)).collect();
        let want = rrf_oracle(&lists, cfg);
        ensure!(got.len() == want.len(), "case {case}: {} ids vs {}", got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            ensure!(g.0 == w.0 && close(g.1, w.1, 1e-12), "case {case}: {g:?} vs {w:?}");
        }
    }
    Ok("1/61 and 3/61 exact, 1000 fuzzed fusions".into())
}

// ------------------------------------------------------------ unification

fn criterion_unification() -> Outcome {
    let dicts: DictionaryConfig = serde_json::from_value(json!({
        "TILLAGE": {"no-till": ["zero tillage", "direct drilling"], "conventional tillage": ["moldboard ploughing", "full inversion"]},
        "POLLUTANTS": {"Ozone": ["O3", "ground-level ozone", "tropospheric ozone"], "PM2.5": ["fine particulate matter"]},
        "ML_METHODS": {"Random Forest": ["RF", "random forests"], "Gradient Boosting": ["XGBoost", "GBM", "gradient boosted trees"]}
    }))
    .unwrap();
    let provider = HashEmbedding::default();
    let pre = precompute(&dicts, &provider);
    ensure!(pre.failures.is_empty() && pre.indices.len() == 3, "precompute failures {:?}", pre.failures);
    let cfg = UnifyConfig::default();
    let mut phrases = 0;
    for (key, dict) in &dicts {
        for (canonical, synonyms) in dict {
            for phrase in std::iter::once(canonical).chain(synonyms) {
                let u = unify_term_detailed(phrase, key, &pre.indices, &provider, cfg).map_err(|e| e.to_string())?;
                ensure!(close(u.score, 1.0, 1e-12), "'{phrase}' scored {}", u.score);
                ensure!(u.canonical.as_deref() == Some(canonical.as_str()), "'{phrase}' unified to {:?}", u.canonical);
                phrases += 1;
            }
        }
    }
    let off = unify_term_detailed("quantum chromodynamics lattice", "TILLAGE", &pre.indices, &provider, cfg)
        .map_err(|e| e.to_string())?;
    ensure!(off.score < cfg.threshold && off.canonical.is_none(), "off-domain term matched with {}", off.score);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let probes = ["zero till", "ozone", "forest", "boosted trees", "soil", "particulate", "rf model", "gbm"];
    let keys: Vec<&String> = dicts.keys().collect();
    for _ in 0..500 {
        let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let term = probes.choose(&mut rng).unwrap();
        let key = keys.choose(&mut rng).unwrap();
        let low = unify_term(term, key, &pre.indices, &provider, UnifyConfig { threshold: lo }).map_err(|e| e.to_string())?;
        let high = unify_term(term, key, &pre.indices, &provider, UnifyConfig { threshold: hi }).map_err(|e| e.to_string())?;
        ensure!(!(low.is_none() && high.is_some()), "'{term}' matched at {hi} but not at {lo}");
    }
    Ok(format!("{phrases} phrases at score 1.0, off-domain score {:.3}, 500 threshold pairs", off.score))
}

// -------------------------------------------------------------- coherence

fn toy_corpus() -> Vec<Vec<String>> {
    ["a b", "a e", "a f", "b e", "c d", "c d e"]
        .iter()
        .map(|d| d.split_whitespace().map(String::from).collect())
        .collect()
}

fn brute_npmi(docs: &[Vec<String>], x: &str, y: &str) -> f64 {
    let n = docs.len() as f64;
    let has = |d: &Vec<String>, w: &str| d.iter().any(|t| t == w);
    let px = docs.iter().filter(|d| has(d, x)).count() as f64 / n;
    let py = docs.iter().filter(|d| has(d, y)).count() as f64 / n;
    let pxy = (docs.iter().filter(|d| has(d, x) && has(d, y)).count() as f64 + NPMI_EPS) / n;
    (pxy / (px * py)).ln() / -pxy.ln()
}

fn criterion_coherence() -> Outcome {
    let docs = toy_corpus();
    let stats = CooccurrenceStats::from_corpus(&Corpus::new(docs.clone()));
    let words = ["a", "b", "c", "d", "e", "f"];
    for x in words {
        for y in words {
            if x == y {
                continue;
            }
            let got = npmi(x, y, &stats, NPMI_EPS).map_err(|e| e.to_string())?;
            let want = brute_npmi(&docs, x, y);
            ensure!(close(got, want, 1e-9), "npmi({x},{y}) = {got}, brute force {want}");
        }
    }
    let indep = npmi("a", "b", &stats, NPMI_EPS).unwrap();
    ensure!(close(indep, 0.0, 1e-9), "independent pair scored {indep}");
    let perfect = npmi("c", "d", &stats, NPMI_EPS).unwrap();
    ensure!(close(perfect, 1.0, 1e-9), "perfectly co-occurring pair scored {perfect}");

    for top in [vec!["a", "b", "e"], vec!["c", "d", "e", "f"], vec!["a", "b", "c", "d", "e", "f"]] {
        let top: Vec<String> = top.into_iter().map(String::from).collect();
        let mut sum = 0.0;
        let mut pairs = 0.0;
        for i in 0..top.len() {
            for j in i + 1..top.len() {
                sum += brute_npmi(&docs, &top[i], &top[j]);
                pairs += 1.0;
            }
        }
        let got = topic_coherence(&top, &stats).map_err(|e| e.to_string())?;
        ensure!(close(got, sum / pairs, 1e-9), "coherence {top:?} = {got}, brute force {}", sum / pairs);
    }
    Ok(format!("30 ordered pairs and 3 topics within 1e-9; independence {indep:.1e}, co-occurrence {perfect:.12}"))
}

// -------------------------------------------------------------------- lda

fn disjoint_corpus(seed: u64) -> Corpus {
    let a = ["ozone", "exposure", "mortality", "cardiovascular", "pollution", "urban"];
    let b = ["crop", "soil", "nitrogen", "yield", "tillage", "carbon"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Corpus::new(
        (0..40)
            .map(|d| {
                let words = if d < 20 { &a } else { &b };
                (0..30).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
            })
            .collect(),
    )
}

fn criterion_lda() -> Outcome {
    let start = Instant::now();
    let corpus = disjoint_corpus(11);
    let vocab = build_vocabulary(&corpus, 1, 1.0).map_err(|e| e.to_string())?;
    let mut runs = 0;
    for seed in 0..5u64 {
        let cfg = LdaConfig { iterations: 150, ..LdaConfig::new(2, seed) };
        let model = train_lda(&corpus, &vocab, &cfg).map_err(|e| e.to_string())?;
        runs += 1;
        for row in model.doc_topic.iter().chain(&model.topic_word) {
            ensure!(close(row.iter().sum::<f64>(), 1.0, 1e-9), "seed {seed}: row sums to {}", row.iter().sum::<f64>());
        }
        for (d, row) in model.doc_topic.iter().enumerate() {
            let max = row.iter().cloned().fold(0.0, f64::max);
            ensure!(max > 0.8, "seed {seed}: document {d} has theta max {max}");
        }
        let t0: HashSet<String> = model.top_words(0, 5).into_iter().collect();
        let t1: HashSet<String> = model.top_words(1, 5).into_iter().collect();
        ensure!(t0.is_disjoint(&t1), "seed {seed}: top words overlap {t0:?} {t1:?}");

        let again = train_lda(&corpus, &vocab, &cfg).map_err(|e| e.to_string())?;
        let bits = |m: &hysem_core::topics::LdaModel| -> Vec<u64> {
            m.doc_topic.iter().chain(&m.topic_word).flatten().map(|x| x.to_bits()).collect()
        };
        ensure!(bits(&model) == bits(&again) && model.vocab == again.vocab, "seed {seed}: rerun differs");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{runs} seeds x 2 runs, {:.2}s", elapsed.as_secs_f64()))
}

// ------------------------------------------------------------------ graph

fn article(doi: &str, title: &str, fields: &[(&str, Vec<&str>)]) -> MetadataRecord {
    let mut r = MetadataRecord::with_doi_title(doi, title);
    for (k, vs) in fields {
        r.extracted_fields.insert(k.to_string(), FieldValue::List(vs.iter().map(|s| s.to_string()).collect()));
    }
    r
}

fn ingest(g: &mut Graph, r: &MetadataRecord) -> Result<(), String> {
    upsert_article(g, r).map_err(|e| e.to_string())?;
    apply_field_mappings(g, r, &FieldMappings::cardio_ozone(), None).map_err(|e| e.to_string())?;
    Ok(())
}

fn method_oracle(g: &Graph, q: &MethodQuery) -> Vec<(String, usize)> {
    let triples: Vec<(&str, &str, &str)> = g.edges().map(|e| (e.from.key.as_str(), e.kind.as_str(), e.to.key.as_str())).collect();
    let mut counts: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (a, props) in g.nodes().filter(|(r, _)| r.label == ARTICLE) {
        let of = |kind: &str| triples.iter().filter(|t| t.0 == a.key && t.1 == kind).map(|t| t.2).collect::<Vec<_>>();
        let title = props["title"].as_str().unwrap_or_default().to_lowercase();
        let studies = of(STUDY_TYPE);
        let ok = !studies.is_empty()
            && studies.iter().all(|s| !q.excluded_study_types.contains(&s.to_lowercase()))
            && !of(USES_ML_METHOD).is_empty()
            && !of(ASSOCIATED_WITH_HEART_DISEASE).is_empty()
            && of(RELATED_TO_POLLUTANT).iter().any(|p| p.to_lowercase().contains("ozone"))
            && !q.excluded_title_terms.iter().any(|t| title.contains(t.as_str()));
        if ok {
            for m in of(USES_ML_METHOD) {
                counts.entry(m.to_string()).or_default().insert(a.key.clone());
            }
        }
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().map(|(m, s)| (m, s.len())).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    rows
}

fn criterion_graph() -> Outcome {
    let q = MethodQuery::default();
    let cohort = vec!["Cohort"];
    let hand = vec![
        article("10.1/keep", "Ozone and arrhythmia", &[("study_type", cohort.clone()), ("pollutants", vec!["Ozone"]), ("heart_diseases", vec!["arrhythmia"]), ("ml_methods_used", vec!["Random Forest", "XGBoost"])]),
        article("10.1/keep2", "Ground-level ozone and MI", &[("study_type", vec!["Case-control"]), ("pollutants", vec!["ground-level OZONE"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["Random Forest"])]),
        article("10.1/review", "A review", &[("study_type", vec!["Systematic Review"]), ("pollutants", vec!["ozone"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/mixed", "Cohort plus review", &[("study_type", vec!["Cohort", "Review"]), ("pollutants", vec!["ozone"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/pm", "Particulates only", &[("study_type", cohort.clone()), ("pollutants", vec!["PM2.5"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/comment", "Comment on an ozone study", &[("study_type", cohort.clone()), ("pollutants", vec!["ozone"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/reply", "Authors' REPLY", &[("study_type", cohort.clone()), ("pollutants", vec!["ozone"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/nostudy", "Ozone without type", &[("pollutants", vec!["ozone"]), ("heart_diseases", vec!["MI"]), ("ml_methods_used", vec!["SVM"])]),
        article("10.1/noheart", "Ozone and lungs", &[("study_type", cohort), ("pollutants", vec!["ozone"]), ("ml_methods_used", vec!["SVM"])]),
    ];
    let mut g = Graph::new();
    for r in &hand {
        ingest(&mut g, r)?;
    }
    let want = vec![("Random Forest".to_string(), 2), ("XGBoost".to_string(), 1)];
    let got = query_method_distribution(&g, &q);
    ensure!(got == want, "exclusion fixture gave {got:?}");

    let (n, e) = (g.node_count(), g.edge_count());
    for r in &hand {
        ingest(&mut g, r)?;
    }
    ensure!((g.node_count(), g.edge_count()) == (n, e), "re-ingest changed counts");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pick = |rng: &mut ChaCha8Rng, opts: &[&'static str]| -> Vec<&'static str> {
        (0..rng.gen_range(0..3)).map(|_| *opts.choose(rng).unwrap()).collect()
    };
    for case in 0..100 {
        let mut g = Graph::new();
        let records: Vec<MetadataRecord> = (0..rng.gen_range(1..12))
            .map(|i| {
                let title = *["Study", "Comment x", "reply", "Ozone trial", "Cohort"].choose(&mut rng).unwrap();
                article(
                    &format!("10.9/{case}.{i}"),
                    title,
                    &[
                        ("study_type", pick(&mut rng, &["Cohort", "Review", "Meta-analysis", "case-control", "Report"])),
                        ("pollutants", pick(&mut rng, &["Ozone", "O3 ozone", "PM2.5", "NO2"])),
                        ("heart_diseases", pick(&mut rng, &["MI", "stroke"])),
                        ("ml_methods_used", pick(&mut rng, &["Random Forest", "SVM", "LSTM", "XGBoost"])),
                    ],
                )
            })
            .collect();
        for r in &records {
            ingest(&mut g, r)?;
        }
        ensure!(query_method_distribution(&g, &q) == method_oracle(&g, &q), "fuzzed graph {case} differs from oracle");
        let (n, e) = (g.node_count(), g.edge_count());
        for r in &records {
            ingest(&mut g, r)?;
        }
        ensure!((g.node_count(), g.edge_count()) == (n, e), "fuzzed graph {case}: merge not idempotent");
    }
    Ok("exclusion fixture, idempotence, 100 fuzzed graphs".into())
}

// ----------------------------------------------------------- verification

fn dp_levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn criterion_verification() -> Outcome {
    let s = content_similarity("kitten", "sitting");
    let oracle = 1.0 - dp_levenshtein("kitten", "sitting") as f64 / 7.0;
    ensure!(close(s, 1.0 - 3.0 / 7.0, 1e-12) && close(s, oracle, 1e-12), "kitten/sitting = {s}");
    for (score, want) in [(0.8, Validity::Valid), (0.5, Validity::PossiblyValid), (0.49, Validity::Invalid)] {
        let got = classify(score).map_err(|e| e.to_string())?.label;
        ensure!(got == want, "classify({score}) = {got:?}");
    }

    let base = |kind| {
        let mut o = Observation::new(kind);
        o.doi = "10.1/a".into();
        o.zotero_key = "ZK".into();
        o.in_text_citation = "(A, 2020)".into();
        o.full_citation = "A (2020). T. J.".into();
        o.evidence_text = "e".into();
        o
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mixed = 0;
    for _ in 0..1000 {
        let kind = *[SourceKind::Pdf, SourceKind::Structured, SourceKind::Kg].choose(&mut rng).unwrap();
        let mut o = base(kind);
        let mut families = BTreeSet::new();
        if rng.gen_bool(0.6) {
            o.pdf_doc_index = rng.gen_range(0..9).to_string();
            o.pdf_chunk_index = rng.gen_range(0..9).to_string();
            families.insert(SourceKind::Pdf);
        }
        if rng.gen_bool(0.6) {
            o.struct_doc_index = rng.gen_range(0..9).to_string();
            o.struct_chunk_index = "0".into();
            families.insert(SourceKind::Structured);
        }
        if rng.gen_bool(0.6) {
            o.kg_doc_index = rng.gen_range(0..9).to_string();
            o.relation = Some("USES_ML_METHOD".into());
            families.insert(SourceKind::Kg);
        }
        if families.len() > 1 {
            mixed += 1;
            ensure!(!validate_schema(&o).is_empty(), "mixed-source observation accepted: {o:?}");
        }
    }
    ensure!(mixed > 100, "only {mixed} mixed observations generated");
    Ok(format!("similarity {s:.12}, boundaries, {mixed} mixed-source observations rejected"))
}

// ---------------------------------------------------------------- qa loop

fn qa_record() -> MetadataRecord {
    let mut r = MetadataRecord::with_doi_title("10.1/a", "Ozone and admissions");
    r.zotero_key = "ZK1".into();
    r.in_text_citation = "(Lee, 2020)".into();
    r.full_citation = "Lee, A. (2020). Ozone and admissions. J, 1, 1-2.".into();
    r
}

fn qa_log() -> SessionLog {
    let r = qa_record();
    let mut log = SessionLog::new("kb", "does ozone matter?");
    log.context = vec![ContextItem {
        source: SourceKind::Pdf,
        doc_idx: 0,
        chunk_idx: Some(0),
        relation: None,
        doi: r.doi.clone(),
        title: r.title.clone(),
        zotero_key: r.zotero_key.clone(),
        in_text_citation: r.in_text_citation.clone(),
        full_citation: r.full_citation.clone(),
        content: "ozone exposure raised cardiac admissions".into(),
    }];
    log
}

fn qa_run(verdicts: &[bool]) -> Result<LoopOutcome, String> {
    let log = qa_log();
    let obs = log.context[0].cite();
    let answers = (1..=8).map(|i| Answer { text: format!("a{i}"), observations: vec![obs.clone()] }).collect();
    let evals = verdicts
        .iter()
        .map(|&p| Evaluation { verdict: if p { EvalVerdict::Pass } else { EvalVerdict::Fail }, feedback: "more".into() })
        .collect();
    let canonical = CanonicalTable::new(&[qa_record()]);
    run_loop(log, &ScriptedGenerator::new(answers), &ScriptedEvaluator::new(evals), LoopConfig::default(), &canonical)
        .map_err(|e| e.to_string())?
        .map_err(|a| a.error.to_string())
}

fn criterion_qa_loop() -> Outcome {
    let out = qa_run(&[false, false, true])?;
    ensure!(out.log.iterations.len() == 3, "fail-fail-pass ran {} iterations", out.log.iterations.len());
    ensure!(out.log.triplets.len() == 2, "fail-fail-pass emitted {} triplets", out.log.triplets.len());
    ensure!(out.validated && out.final_answer.text == "a3", "fail-fail-pass final answer {:?}", out.final_answer.text);

    let out = qa_run(&[false, false, false])?;
    ensure!(!out.validated && out.log.iterations.len() == 3, "fail x3 validated = {}", out.validated);
    ensure!(out.log.triplets.is_empty(), "fail x3 emitted triplets");

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..300 {
        let script: Vec<bool> = (0..rng.gen_range(1..8)).map(|_| rng.gen_bool(0.3)).collect();
        let out = qa_run(&script)?;
        ensure!(out.log.iterations.len() <= 3, "script {case} ran {} iterations", out.log.iterations.len());
    }
    Ok("fail-fail-pass: 3 iterations / 2 triplets; fail x3 flagged; 300 fuzzed scripts bounded by 3".into())
}

// ----------------------------------------------------------- rate limiter

const EMAIL: &str = "acceptance@example.org";

fn fetch_transport(n: usize, rng: Option<&mut ChaCha8Rng>) -> MemoryTransport {
    let mut t = MemoryTransport::default();
    let mut kinds: Vec<u8> = vec![3; n];
    if let Some(rng) = rng {
        kinds.iter_mut().for_each(|k| *k = rng.gen_range(0..4));
    }
    for (i, kind) in kinds.into_iter().enumerate() {
        let api = unpaywall_url(&format!("10.5/{i}"), EMAIL);
        let (best, alt) = (format!("https://b/{i}"), format!("https://a/{i}"));
        match kind {
            0 => {}
            1 => {
                t.json.insert(api, json!({"best_oa_location": {"url_for_pdf": best}, "oa_locations": [{"url_for_pdf": alt}]}));
                t.errors.insert(best, "refused".into());
                t.bytes.insert(alt, b"pdf".to_vec());
            }
            2 => {
                t.json.insert(api, json!({"oa_locations": [{"url_for_pdf": alt}]}));
            }
            _ => {
                t.json.insert(api, json!({"best_oa_location": {"url_for_pdf": best}}));
                t.bytes.insert(best, b"pdf".to_vec());
            }
        }
    }
    t
}

fn fetch_tasks(n: usize) -> Vec<FetchTask> {
    (0..n).map(|i| FetchTask { row_idx: i, doi: format!("10.5/{i}"), title: format!("T{i}") }).collect()
}

fn criterion_rate_limiter() -> Outcome {
    let second = Duration::from_secs(1);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut total_calls = 0;
    for case in 0..1000 {
        let qps = rng.gen_range(1..=20u32);
        let limit = RateLimit::new(qps).unwrap();
        if case % 2 == 0 {
            let n = rng.gen_range(1..40);
            let cfg = FetchConfig { limit, max_concurrency: rng.gen_range(1..=16), email: EMAIL.into() };
            let t = fetch_transport(n, Some(&mut rng));
            let run = rate_limited_execute(&fetch_tasks(n), &cfg, &t, &MemorySink::default(), &SimulatedClock::new());
            total_calls += run.calls.len();
            let worst = max_calls_in_window(&run.calls, second);
            ensure!(worst <= qps as usize, "schedule {case}: {worst} calls in one second at {qps} qps");
        } else {
            let clock = SimulatedClock::new();
            let bucket = TokenBucket::new(limit, &clock);
            let mut starts = Vec::new();
            for _ in 0..rng.gen_range(1..80) {
                clock.advance(Duration::from_nanos(rng.gen_range(0..400_000_000)));
                starts.push(bucket.acquire());
                ensure!(clock.now() >= *starts.last().unwrap(), "schedule {case}: permit granted in the future");
            }
            total_calls += starts.len();
            for (i, &s) in starts.iter().enumerate() {
                let in_window = starts[i..].iter().take_while(|&&t| t < s + second).count();
                ensure!(in_window <= qps as usize, "schedule {case}: {in_window} permits in one second at {qps} qps");
            }
        }
    }

    let cfg = FetchConfig { limit: RateLimit::new(8).unwrap(), max_concurrency: 16, email: EMAIL.into() };
    let run = rate_limited_execute(&fetch_tasks(16), &cfg, &fetch_transport(16, None), &MemorySink::default(), &SimulatedClock::new());
    let first = run.calls.first().map(|c| c.at).unwrap_or_default();
    let last = run.calls.last().map(|c| c.at).unwrap_or_default();
    let span = last - first;
    ensure!(run.calls.len() == 32, "16 tasks made {} calls", run.calls.len());
    ensure!(span >= Duration::from_secs(2), "16 tasks at 8 qps spanned {span:?}");
    Ok(format!("1000 schedules ({total_calls} calls) within bound; 16 tasks / 32 calls at 8 qps span {:.3}s", span.as_secs_f64()))
}

// ------------------------------------------------------------ end to end

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus/pipeline.json");
    let mut snaps = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig::load(&cfg_path).map_err(|e| e.to_string())?;
        cfg.work_dir = dir.path().to_path_buf();
        run_pipeline(&cfg, &Stage::ALL).map_err(|e| e.to_string())?;
        snaps.push(snapshot(dir.path()));
        dirs.push(dir);
    }
    let elapsed = start.elapsed();
    ensure!(snaps[0].keys().eq(snaps[1].keys()), "artifact sets differ");
    let differing: Vec<&PathBuf> = snaps[0].iter().filter(|(k, v)| snaps[1][*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "artifacts differ: {differing:?}");
    ensure!(snaps[0].len() > 20, "only {} artifacts produced", snaps[0].len());
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{} artifacts byte-identical across 2 runs, {:.2}s", snaps[0].len(), elapsed.as_secs_f64()))
}

// ------------------------------------------------------------------ main

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("dedup oracle equivalence", criterion_dedup),
        ("chunker arithmetic", criterion_chunker),
        ("layout branch conformance", criterion_layout_branches),
        ("reclassification and margin thresholds", criterion_thresholds),
        ("RRF numeric", criterion_rrf),
        ("unification", criterion_unification),
        ("coherence", criterion_coherence),
        ("LDA", criterion_lda),
        ("graph", criterion_graph),
        ("verification", criterion_verification),
        ("QA loop", criterion_qa_loop),
        ("rate limiter", criterion_rate_limiter),
        ("end-to-end determinism", criterion_end_to_end),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|p| !name.to_lowercase().contains(&p.to_lowercase())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
