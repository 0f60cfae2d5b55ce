//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always appear in
//! `cargo test` output. The process exits non-zero if any criterion fails.
//! Select criteria by number: `cargo test --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use affectflow::affect::{detect, scan_corpus, DetectConfig, FilterKind, PatternConfig};
use affectflow::changepoint::{
    cusum, cusum_chart, estimate_duration, ChangeInterval, ChangeReport, CusumParams, Direction, Method,
};
use affectflow::fitting::{half_life, Family, FitResult};
use affectflow::ingest::{write_jsonl, Gender, Message, RawTimeline};
use affectflow::mixture::select_k;
use affectflow::nullmodel::{bootstrap_ci, bootstrap_distribution};
use affectflow::pipeline::{analyze, run_pipeline, AnalysisConfig, RunConfig, Stage};
use affectflow::rdd::{rdd_fit, DiffSeries};
use affectflow::sentiment::Lexicon;
use affectflow::synthgen::{generate_with_bank, EpisodeSpec, TextBank};
use affectflow::Polarity;

// Tolerances, pinned.
const SPAN_TOLERANCE_MIN: i64 = 10;
const RATE_RELATIVE_ERROR: f64 = 0.20;
const RUNTIME_LIMIT_SECS: f64 = 300.0;
const HALF_LIFE_TOLERANCE_MIN: f64 = 1.0;
const ENUMERATION_FREQ_TOLERANCE: f64 = 0.01;
const COVERAGE_TARGET: f64 = 0.90;
const COVERAGE_TOLERANCE: f64 = 0.03;
const GMM_WEIGHT_TOLERANCE: f64 = 0.03;
const GMM_MEAN_TOLERANCE: f64 = 0.05;
const LL_MONOTONE_SLACK: f64 = 1e-9;
const RDD_GAP_RANGE: (f64, f64) = (0.03, 0.05);
const RDD_MIN_HIT_RATE: f64 = 0.95;
const RDD_NOISELESS_TOLERANCE: f64 = 1e-9;

type Outcome = Result<String, String>;
type Run = (usize, usize, Direction);
type Charts = (Vec<f64>, Vec<f64>, Vec<Run>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bank() -> TextBank {
    TextBank::new(&Lexicon::reference()).expect("text bank builds")
}

// 1 ---------------------------------------------------------------------------

fn end_to_end_recovery() -> Outcome {
    let started = Instant::now();
    let spec = EpisodeSpec::reference_positive();
    assert_eq!(spec.episode.noise_sigma, 0.15);
    let timelines = generate_with_bank(&spec, 20_000, 2024, &bank()).map_err(|e| e.to_string())?;
    let cfg = AnalysisConfig {
        replicates: 200,
        ..AnalysisConfig::default()
    };
    let bundle = analyze(&timelines, &Lexicon::reference(), &DetectConfig::default(), &cfg, Stage::Fit)
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    let change = bundle.change.as_ref().and_then(|c| c.find(Polarity::Positive, None)).ok_or("no change entry")?;
    let Some((start, end)) = change.cusum_span() else {
        return Err(format!("no CUSUM span around t0 ({elapsed:.0} s)"));
    };
    let (want_start, want_end) = (spec.episode.onset as i64, spec.episode.end as i64);
    let span_ok = (start - want_start).abs() <= SPAN_TOLERANCE_MIN && (end - want_end).abs() <= SPAN_TOLERANCE_MIN;
    let fits = bundle.fits.as_ref().and_then(|f| f.cohorts.first()).ok_or("no fits")?;
    let (rise, decay) = fits.two_exponentials().ok_or("no two-exponential fit")?;
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let up = rise.param("lambda");
    let down = decay.param("lambda");
    let rates_ok = rel(up, spec.episode.rise_rate) <= RATE_RELATIVE_ERROR && rel(down, spec.episode.decay_rate) <= RATE_RELATIVE_ERROR;
    check(
        span_ok && rates_ok && elapsed < RUNTIME_LIMIT_SECS,
        format!(
            "span [{start}, {end}] vs [{want_start}, {want_end}] ±{SPAN_TOLERANCE_MIN}; \
             rise rate {up:.4} ({:.1}%), decay rate {down:.4} ({:.1}%); {elapsed:.0} s",
            100.0 * rel(up, spec.episode.rise_rate),
            100.0 * rel(down, spec.episode.decay_rate)
        ),
    )
}

// 2 ---------------------------------------------------------------------------

fn half_lives() -> Outcome {
    let decay = |a: f64, l: f64, b: f64| FitResult {
        family: Family::Exponential,
        params: [("A", a), ("lambda", l), ("b", b)].iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        segment: (0, 0),
        sse: 0.0,
        n_points: 0,
        iterations: 0,
    };
    let pos = half_life(&decay(0.042, -0.057, 0.13), 53.0).map_err(|e| e.to_string())?;
    let neg = half_life(&decay(-1.0, -0.003, 1.08), 9.0).map_err(|e| e.to_string())?;
    check(
        (pos.minutes - 11.0).abs() <= HALF_LIFE_TOLERANCE_MIN && (neg.minutes - 5.0).abs() <= HALF_LIFE_TOLERANCE_MIN,
        format!("positive {:.2} min (want 11 ± 1), negative {:.2} min (want 5 ± 1)", pos.minutes, neg.minutes),
    )
}

// 3 ---------------------------------------------------------------------------

/// Direct transliteration of the upper and lower control-limit recursions and
/// of the run rule: consecutive violations along which the sum keeps rising
/// (upper) or falling (lower), kept when longer than lambda.
fn transliterated(x: &[f64], t: f64, k: f64, h: f64, lambda: i64) -> Charts {
    let mut s_plus = Vec::with_capacity(x.len());
    let mut s_minus = Vec::with_capacity(x.len());
    let (mut sp, mut sm) = (0.0_f64, 0.0_f64);
    for &xi in x {
        sp = f64::max(0.0, sp + xi - (t + k));
        sm = f64::min(0.0, sm + xi - (t - k));
        s_plus.push(sp);
        s_minus.push(sm);
    }
    let mut runs = Vec::new();
    for (s, dir) in [(&s_plus, Direction::Upper), (&s_minus, Direction::Lower)] {
        let violated: Vec<usize> = (0..s.len())
            .filter(|&i| if dir == Direction::Upper { s[i] > h } else { s[i] < -h })
            .collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in violated {
            let extend = groups.last().is_some_and(|g| {
                let j = *g.last().unwrap();
                j + 1 == i && if dir == Direction::Upper { s[i] >= s[j] } else { s[i] <= s[j] }
            });
            if extend {
                groups.last_mut().unwrap().push(i);
            } else {
                groups.push(vec![i]);
            }
        }
        for g in groups {
            if g.len() as i64 > lambda {
                runs.push((g[0], *g.last().unwrap(), dir));
            }
        }
    }
    runs.sort_by_key(|r| (r.0, r.1));
    (s_plus, s_minus, runs)
}

fn cusum_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let offsets: Vec<i64> = (-360..=360).collect();
    let (mut runs_seen, mut mismatches) = (0usize, Vec::new());
    for trial in 0..100 {
        let noise = Normal::new(0.0, rng.random_range(0.002..0.02)).unwrap();
        let t = rng.random_range(0.05..0.2);
        let k = rng.random_range(0.001..0.01);
        let bump = rng.random_range(-0.08..0.08);
        let centre = rng.random_range(-200.0..200.0);
        let width = rng.random_range(10.0..80.0);
        let x: Vec<f64> = offsets
            .iter()
            .map(|&o| {
                let z = (o as f64 - centre) / width;
                t + bump * (-0.5 * z * z).exp() + noise.sample(&mut rng)
            })
            .collect();
        let params = CusumParams::new(t, k, 0.01, 40).unwrap();
        let xs: Vec<Option<f64>> = x.iter().map(|&v| Some(v)).collect();
        let chart = cusum_chart(&xs, &params);
        let report = cusum(&xs, &offsets, 1, &params).unwrap();
        let (sp, sm, runs) = transliterated(&x, t, k, 0.01, 40);
        let bitwise = chart.upper.iter().zip(&sp).all(|(a, b)| a.to_bits() == b.to_bits())
            && chart.lower.iter().zip(&sm).all(|(a, b)| a.to_bits() == b.to_bits());
        let expected: Vec<ChangeInterval> = runs
            .iter()
            .map(|&(a, b, d)| ChangeInterval::new(offsets[a], offsets[b], d))
            .collect();
        runs_seen += expected.len();
        if !bitwise || report.intervals != expected {
            mismatches.push(trial);
        }
    }
    check(
        mismatches.is_empty(),
        format!("100 series of 721 points, {runs_seen} reported runs, mismatching trials {mismatches:?}"),
    )
}

// 4 ---------------------------------------------------------------------------

fn duration_averaging() -> Outcome {
    let report = |method, (a, b): (i64, i64), dir| ChangeReport {
        intervals: vec![ChangeInterval::new(a, b, dir)],
        ..ChangeReport::empty(method)
    };
    let run = |pol: Polarity, spans: [(i64, i64); 3]| {
        let dir = Direction::of(pol);
        let reports = [
            report(Method::Cusum, spans[0], dir),
            report(Method::CiDivergence, spans[1], dir),
            report(Method::MedianExcursion, spans[2], dir),
        ];
        let d = estimate_duration(&reports, pol);
        (d.average_span, d.average_duration)
    };
    let pos = run(Polarity::Positive, [(-38, 53), (-10, 20), (-48, 109)]);
    let neg = run(Polarity::Negative, [(-63, 9), (-40, 0), (-124, 14)]);
    check(
        pos == (Some((-32, 61)), Some(94)) && neg == (Some((-76, 8)), Some(85)),
        format!("positive {:?} {:?}, negative {:?} {:?}", pos.1, pos.0, neg.1, neg.0),
    )
}

// 5 ---------------------------------------------------------------------------

fn bootstrap_correctness() -> Outcome {
    // Resampling {a, b} with replacement: means a, (a+b)/2, b with probabilities 1/4, 1/2, 1/4.
    let (a, b) = (0.25, 1.75);
    let reps = 40_000;
    let dist = bootstrap_distribution(&[a, b], reps, 11).map_err(|e| e.to_string())?;
    let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
    for m in &dist {
        *freq.entry(m.to_bits()).or_default() += 1;
    }
    let exact = [(a, 0.25), ((a + b) / 2.0, 0.5), (b, 0.25)];
    let support_ok = freq.len() == 3 && exact.iter().all(|(v, _)| freq.contains_key(&v.to_bits()));
    let freq_err = exact
        .iter()
        .map(|(v, p)| (freq.get(&v.to_bits()).copied().unwrap_or(0) as f64 / reps as f64 - p).abs())
        .fold(0.0, f64::max);
    let pct = bootstrap_ci(&[a, b], reps, 11).map_err(|e| e.to_string())?;
    // Nearest-rank percentiles of the exact distribution.
    let pct_ok = pct.p5 == a && pct.p50 == (a + b) / 2.0 && pct.p95 == b;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.3, 1.0).unwrap();
    let trials = 1000;
    let mut covered = 0;
    for trial in 0..trials {
        let xs: Vec<f64> = (0..60).map(|_| normal.sample(&mut rng)).collect();
        let p = bootstrap_ci(&xs, 1000, 1000 + trial as u64).map_err(|e| e.to_string())?;
        if p.p5 <= 0.3 && 0.3 <= p.p95 {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    check(
        support_ok && freq_err <= ENUMERATION_FREQ_TOLERANCE && pct_ok && (coverage - COVERAGE_TARGET).abs() <= COVERAGE_TOLERANCE,
        format!(
            "n=2 support exact: {support_ok}, max frequency error {freq_err:.4}, percentiles exact: {pct_ok}; \
             90% band coverage {:.1}% over {trials} trials",
            100.0 * coverage
        ),
    )
}

// 6 ---------------------------------------------------------------------------

fn gmm_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c1 = Normal::new(-1.417, 0.345).unwrap();
    let c2 = Normal::new(0.103, 0.702).unwrap();
    let xs: Vec<f64> = (0..50_000)
        .map(|_| if rng.random::<f64>() < 0.680 { c1.sample(&mut rng) } else { c2.sample(&mut rng) })
        .collect();
    let sel = select_k(&xs, 5, 42).map_err(|e| e.to_string())?;
    let monotone = sel
        .fits
        .iter()
        .all(|f| f.trace.windows(2).all(|w| w[1] >= w[0] - LL_MONOTONE_SLACK * w[0].abs()));
    let Some(fit) = sel.fits.iter().find(|f| f.k == 2) else {
        return Err("no k = 2 fit".into());
    };
    // Components are sorted by mean.
    let (lo, hi) = (&fit.components[0], &fit.components[1]);
    let ok = sel.k == 2
        && (lo.weight - 0.680).abs() <= GMM_WEIGHT_TOLERANCE
        && (hi.weight - 0.320).abs() <= GMM_WEIGHT_TOLERANCE
        && (lo.mu + 1.417).abs() <= GMM_MEAN_TOLERANCE
        && (hi.mu - 0.103).abs() <= GMM_MEAN_TOLERANCE
        && monotone;
    check(
        ok,
        format!(
            "k = {} (aic {}, bic {}); w = {:.3}/{:.3}, mu = {:.3}/{:.3}; log-likelihood monotone: {monotone}",
            sel.k, sel.k_aic, sel.k_bic, lo.weight, hi.weight, lo.mu, hi.mu
        ),
    )
}

// 7 ---------------------------------------------------------------------------

fn rdd_recovery() -> Outcome {
    let offsets: Vec<i64> = (-36..=36).map(|i| i * 10).collect();
    let line = |t: f64| if t < 0.0 { -0.06 + 2e-5 * t } else { -0.06 + 0.04 - 1e-5 * t };
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 200;
    let mut hits = 0;
    for _ in 0..trials {
        let values = offsets.iter().map(|&k| Some(line(k as f64) + noise.sample(&mut rng))).collect();
        let fit = rdd_fit(&DiffSeries { offsets: offsets.clone(), values }, 0).map_err(|e| e.to_string())?;
        if (RDD_GAP_RANGE.0..=RDD_GAP_RANGE.1).contains(&fit.gap.value) {
            hits += 1;
        }
    }
    let values = offsets.iter().map(|&k| Some(line(k as f64))).collect();
    let exact = rdd_fit(&DiffSeries { offsets: offsets.clone(), values }, 0).map_err(|e| e.to_string())?;
    let errs = [
        exact.pre.slope.value - 2e-5,
        exact.pre.intercept.value + 0.06,
        exact.post.slope.value + 1e-5,
        exact.post.intercept.value + 0.02,
        exact.gap.value - 0.04,
    ];
    let worst = errs.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let rate = hits as f64 / trials as f64;
    check(
        rate >= RDD_MIN_HIT_RATE && worst <= RDD_NOISELESS_TOLERANCE,
        format!("gap in [0.03, 0.05] in {hits}/{trials} trials; noiseless max error {worst:.1e}"),
    )
}

// 8 ---------------------------------------------------------------------------

fn pattern_detector() -> Outcome {
    let text = include_str!("fixtures/affect_labels.tsv");
    let mut messages = Vec::new();
    let mut expected = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).enumerate() {
        let mut cols = line.splitn(3, '\t');
        let (label, repost, body) = (cols.next().unwrap(), cols.next().unwrap(), cols.next().unwrap());
        messages.push(Message {
            subject_id: "fixture".into(),
            message_id: format!("m{i:03}"),
            utc_time: 1_400_000_000 + 60 * i as i64,
            tz_offset_minutes: Some(0),
            text: body.to_string(),
            is_repost: repost == "1",
            gender_label: Gender::Unknown,
        });
        expected.push(label.to_string());
    }
    let timeline = RawTimeline {
        subject_id: "fixture".into(),
        messages: messages.clone(),
    };
    let scan = scan_corpus(&[timeline], &PatternConfig::default());
    let by_id: BTreeMap<&str, String> = scan
        .labels
        .iter()
        .map(|l| {
            let a = &l.label;
            let mut s = format!("{}:{}", a.polarity, a.adjective);
            if let Some(b) = &a.booster {
                s.push(':');
                s.push_str(b);
            }
            (a.message_id.as_str(), s)
        })
        .collect();
    let conflicts_expected = expected.iter().filter(|e| *e == "conflict").count();
    let mut wrong = Vec::new();
    for (m, want) in messages.iter().zip(&expected) {
        let got = by_id.get(m.message_id.as_str()).cloned().unwrap_or_else(|| "none".into());
        let want_label = if want == "conflict" { "none" } else { want.as_str() };
        if got != want_label {
            wrong.push(format!("{:?}: got {got}, want {want}", m.text));
        }
    }
    let ok = wrong.is_empty() && scan.conflicts == conflicts_expected && messages.len() == 200;
    check(
        ok,
        format!(
            "{} messages, {} labels, {} conflicts (want {conflicts_expected}); disagreements: {}",
            messages.len(),
            scan.labels.len(),
            scan.conflicts,
            if wrong.is_empty() { "none".to_string() } else { wrong.join("; ") }
        ),
    )
}

// 9 ---------------------------------------------------------------------------

const DAY0: i64 = 1_393_804_800; // 2014-03-03 00:00 UTC
const HOUR: i64 = 3600;

struct Planted {
    timelines: Vec<RawTimeline>,
}

impl Planted {
    /// One subject: labels at the given (day, hour) slots plus neutral filler
    /// messages so that the subject has `total` messages in all.
    fn subject(&mut self, id: &str, labels: &[(i64, i64, &str)], total: usize, extra: Vec<(&str, bool)>, tz_missing: bool) {
        let mut messages = Vec::new();
        let push = |messages: &mut Vec<Message>, text: &str, t: i64, repost: bool, tz: Option<i32>| {
            let n = messages.len();
            messages.push(Message {
                subject_id: id.to_string(),
                message_id: format!("{id}-{n:03}"),
                utc_time: t,
                tz_offset_minutes: tz,
                text: text.to_string(),
                is_repost: repost,
                gender_label: Gender::Unknown,
            });
        };
        let first = DAY0 + labels[0].0 * 24 * HOUR + labels[0].1 * HOUR;
        for &(day, hour, text) in labels {
            push(&mut messages, text, DAY0 + day * 24 * HOUR + hour * HOUR, false, Some(0));
        }
        for (i, (text, repost)) in extra.iter().enumerate() {
            push(&mut messages, text, first + 600 * (i as i64 + 1), *repost, Some(0));
        }
        let mut j = 0;
        while messages.len() < total {
            j += 1;
            let tz = if tz_missing && j == 1 { None } else { Some(0) };
            let sign = if j % 2 == 0 { 1 } else { -1 };
            push(&mut messages, "just had lunch with the team", first + sign * 300 * j as i64, false, tz);
        }
        self.timelines.push(RawTimeline {
            subject_id: id.to_string(),
            messages,
        });
    }
}

fn filter_suite() -> Outcome {
    let mut c = Planted { timelines: Vec::new() };
    // Anchor days: day 0 holds one anchor, day 21 six, days 1..=20 two each.
    // Special subjects take six of the day 1..=20 slots; plain subjects fill the rest.
    c.subject(
        "repost",
        &[(1, 12, "I feel sad")],
        45,
        vec![
            ("RT I feel happy", true),
            ("RT lovely weather", true),
            ("RT so good", true),
            ("RT yes", true),
            ("RT no", true),
        ],
        false,
    );
    c.subject(
        "prefix",
        &[(2, 12, "I feel bad")],
        40,
        vec![("I feel like dancing", false), ("I feel happy but I feel sad", false)],
        false,
    );
    c.subject("nearby", &[(3, 8, "I feel good"), (3, 18, "I feel great")], 80, vec![], false);
    c.subject("apart", &[(4, 6, "I feel awful"), (5, 12, "I feel terrible")], 80, vec![], false);
    c.subject("notz", &[(10, 12, "I feel happy")], 40, vec![], true);
    for o in ["over1", "over2"] {
        c.subject(o, &[(7, 1, "I feel good"), (8, 2, "I feel great"), (9, 3, "I feel happy")], 40, vec![], false);
    }
    let mut slots = vec![0i64; 0];
    slots.push(0);
    slots.extend(std::iter::repeat_n(21, 6));
    for d in 1..=20 {
        let taken = match d {
            1 | 2 | 4 | 5 => 1,
            3 => 2,
            _ => 0,
        };
        slots.extend(std::iter::repeat_n(d, 2 - taken));
    }
    assert_eq!(slots.len(), 41);
    for (i, d) in slots.iter().enumerate() {
        let text = if *d == 0 || *d == 21 { "I feel unhappy" } else { "I feel happy" };
        c.subject(&format!("plain{i:02}"), &[(*d, 12, text)], 40, vec![], false);
    }

    let cohorts = detect(&c.timelines, &DetectConfig::default());
    let r = &cohorts.report;
    let step = |k: FilterKind| {
        let s = r.step(k).unwrap();
        (s.subjects_removed, s.anchors_removed, s.messages_removed)
    };
    // Hand counts (subjects, anchors, messages removed per filter).
    let want = [
        (FilterKind::Reposts, (0, 0, 5)),
        (FilterKind::Oversharers, (2, 6, 0)),
        (FilterKind::NoTimezone, (1, 1, 0)),
        (FilterKind::UnusualDays, (7, 7, 0)),
        (FilterKind::PrefixMessages, (0, 0, 2)),
        (FilterKind::NearbyExpressions, (1, 2, 0)),
    ];
    let mut diffs = Vec::new();
    for (k, w) in want {
        if step(k) != w {
            diffs.push(format!("{k:?} got {:?} want {w:?}", step(k)));
        }
    }
    let totals = (r.input_subjects, r.input_messages, r.input_labels, r.conflicts, r.positive_timelines, r.negative_timelines);
    if totals != (48, 2005, 54, 1, 34, 4) {
        diffs.push(format!("totals {totals:?} want (48, 2005, 54, 1, 34, 4)"));
    }
    let thresholds = (
        r.step(FilterKind::Oversharers).unwrap().thresholds.clone(),
        r.step(FilterKind::UnusualDays).unwrap().thresholds.clone(),
    );
    if thresholds != (vec![0.025], vec![2.0, 2.0]) {
        diffs.push(format!("thresholds {thresholds:?}"));
    }
    check(
        diffs.is_empty(),
        format!(
            "{} steps, {} positive and {} negative timelines; {}",
            r.steps.len(),
            r.positive_timelines,
            r.negative_timelines,
            if diffs.is_empty() { "all counts match".to_string() } else { diffs.join("; ") }
        ),
    )
}

// 10 --------------------------------------------------------------------------

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let bank = bank();
    let mut pos = EpisodeSpec::reference_positive();
    pos.gender.labeled = true;
    let mut neg = pos.clone();
    neg.episode.polarity = Polarity::Negative;
    neg.episode.baseline = 0.10;
    neg.episode.rise_amplitude = -0.019;
    neg.episode.rise_rate = 0.05;
    neg.episode.onset = -63.0;
    neg.episode.decay_amplitude = -0.05;
    neg.episode.decay_rate = -0.1;
    neg.episode.end = 9.0;
    let mut timelines = generate_with_bank(&pos, 1500, 1, &bank).map_err(|e| e.to_string())?;
    timelines.extend(generate_with_bank(&neg, 1500, 2, &bank).map_err(|e| e.to_string())?);
    let file = fs::File::create(dir.join("corpus.jsonl")).map_err(|e| e.to_string())?;
    write_jsonl(std::io::BufWriter::new(file), timelines.iter().flat_map(|t| &t.messages)).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let text = format!(
            "corpus = [\"corpus.jsonl\"]\noutput_dir = \"{out}\"\n[analysis]\nreplicates = 500\nseed = 42\ngender = true\n"
        );
        let cfg = RunConfig::from_toml(&text, dir).map_err(|e| e.to_string())?;
        let (_, manifest) = run_pipeline(&cfg, &[]).map_err(|e| e.to_string())?;
        if !manifest.complete {
            return Err(format!("run {out} incomplete"));
        }
        outputs.push(read_outputs(&dir.join(out))?);
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let json_files = a.keys().filter(|k| k.ends_with(".json")).count();
    check(
        differing.is_empty() && a.len() == b.len() && json_files >= 12,
        format!("{json_files} JSON files and {} plots compared; differing: {differing:?}", a.len() - json_files),
    )
}

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (1, "end-to-end parameter recovery", end_to_end_recovery),
        (2, "half-life of published decay fits", half_lives),
        (3, "CUSUM oracle equivalence", cusum_oracle),
        (4, "duration averaging", duration_averaging),
        (5, "bootstrap enumeration and coverage", bootstrap_correctness),
        (6, "mixture recovery", gmm_recovery),
        (7, "regression discontinuity recovery", rdd_recovery),
        (8, "pattern detector fixture", pattern_detector),
        (9, "filter suite fixture", filter_suite),
        (10, "determinism", determinism),
    ];
    // Plain numbers select criteria; libtest flags passed by cargo are ignored.
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {n:>2}. {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {n:>2}. {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
