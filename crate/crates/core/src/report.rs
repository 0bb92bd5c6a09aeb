//! Per-run statistics recomputed from behavior logs, the cross-run tally,
//! tab-separated tables and SVG plots. Nothing here writes into a results
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{
    read_plan, run_dir_name, ExperimentError, ExperimentPlan, RunLogs, BASELINE, CLONED_BASELINE, EXPLICIT_CEASES,
    EXPLICIT_CONTINUES, IMPLICIT_CEASES, IMPLICIT_CONTINUES, NON_CLONED_BASELINE, WATCH,
};
use crate::puppet::BehaviorLog;
use crate::stats::{
    agresti_coull, cumulative_curve, two_prop_ztest, Interval, ProportionSample, TestMode, TestVerdict,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} holds no experiment results (missing plan.json)")]
    Empty(PathBuf),
    #[error("no complete runs under {0}")]
    NoCompleteRuns(PathBuf),
    #[error("phase {phase} log {label} missing or incomplete")]
    Incomplete { phase: u8, label: String },
    #[error("statistics: {0}")]
    Stats(#[from] crate::stats::StatsError),
    #[error(transparent)]
    Results(#[from] ExperimentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub const IMPLICIT: &str = "implicit";
pub const EXPLICIT: &str = "explicit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub label: String,
    pub sample: ProportionSample,
    pub proportion: f64,
    pub interval: Interval,
}

impl GroupCount {
    fn new(label: &str, sample: ProportionSample, confidence: f64) -> Result<Self, ReportError> {
        Ok(Self {
            label: label.to_string(),
            proportion: sample.proportion(),
            interval: agresti_coull(sample.successes, sample.trials, confidence)?,
            sample,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: String,
    pub left: GroupCount,
    pub right: GroupCount,
    pub mode: TestMode,
    /// None when the pooled proportion is 0 or 1.
    pub verdict: Option<TestVerdict>,
    pub degenerate: Option<String>,
}

impl TestOutcome {
    pub fn significant(&self) -> bool {
        self.verdict.is_some_and(|v| v.significant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub topic: String,
    pub run: usize,
    pub confidence: f64,
    pub phase1: Vec<GroupCount>,
    /// Watch (the Phase 1 account), pooled treatment pairs, pooled baselines.
    pub phase2: Vec<GroupCount>,
    pub phase3: Vec<GroupCount>,
    /// Two-sided.
    pub comparisons: Vec<TestOutcome>,
    /// One-sided, ceases over continues.
    pub relapse: Vec<TestOutcome>,
}

impl RunAnalysis {
    pub fn group(&self, phase: u8, label: &str) -> Option<&GroupCount> {
        let groups = match phase {
            1 => &self.phase1,
            2 => &self.phase2,
            _ => &self.phase3,
        };
        groups.iter().find(|g| g.label == label)
    }

    pub fn comparison(&self, name: &str) -> Option<&TestOutcome> {
        self.comparisons.iter().find(|t| t.name == name)
    }

    pub fn relapse(&self, name: &str) -> Option<&TestOutcome> {
        self.relapse.iter().find(|t| t.name == name)
    }
}

fn get<'a>(logs: &'a BTreeMap<String, BehaviorLog>, phase: u8, label: &str) -> Result<&'a BehaviorLog, ReportError> {
    logs.get(label).filter(|l| !l.is_empty()).ok_or(ReportError::Incomplete { phase, label: label.to_string() })
}

fn test(name: &str, left: &GroupCount, right: &GroupCount, confidence: f64, mode: TestMode) -> TestOutcome {
    let (verdict, degenerate) = match two_prop_ztest(left.sample, right.sample, confidence, mode) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    TestOutcome { name: name.to_string(), left: left.clone(), right: right.clone(), mode, verdict, degenerate }
}

pub fn analyze_run(topic: &str, run: usize, logs: &RunLogs, confidence: f64) -> Result<RunAnalysis, ReportError> {
    let single = |phase: u8, map: &BTreeMap<String, BehaviorLog>, label: &str| -> Result<GroupCount, ReportError> {
        GroupCount::new(label, ProportionSample::from_log(get(map, phase, label)?)?, confidence)
    };
    let pooled = |label: &str, members: [&str; 2]| -> Result<GroupCount, ReportError> {
        let a = get(&logs.phase2, 2, members[0])?;
        let b = get(&logs.phase2, 2, members[1])?;
        GroupCount::new(label, ProportionSample::pooled([a, b])?, confidence)
    };

    let phase1 = vec![single(1, &logs.phase1, WATCH)?, single(1, &logs.phase1, BASELINE)?];
    let phase2 = vec![
        phase1[0].clone(),
        pooled(IMPLICIT, [IMPLICIT_CEASES, IMPLICIT_CONTINUES])?,
        pooled(EXPLICIT, [EXPLICIT_CEASES, EXPLICIT_CONTINUES])?,
        pooled(BASELINE, [CLONED_BASELINE, NON_CLONED_BASELINE])?,
    ];
    let mut phase3 = Vec::new();
    for label in
        [IMPLICIT_CEASES, IMPLICIT_CONTINUES, EXPLICIT_CEASES, EXPLICIT_CONTINUES, CLONED_BASELINE, NON_CLONED_BASELINE]
    {
        phase3.push(single(3, &logs.phase3, label)?);
    }
    let [watch, implicit, explicit, baseline] = [&phase2[0], &phase2[1], &phase2[2], &phase2[3]];
    let two = TestMode::TwoSided;
    let comparisons = vec![
        test("watch_vs_implicit", watch, implicit, confidence, two),
        test("watch_vs_explicit", watch, explicit, confidence, two),
        test("implicit_vs_explicit", implicit, explicit, confidence, two),
        test("implicit_vs_baseline", implicit, baseline, confidence, two),
        test("explicit_vs_baseline", explicit, baseline, confidence, two),
    ];
    let one = TestMode::OneSidedGreater;
    let relapse = vec![
        test(IMPLICIT, &phase3[0], &phase3[1], confidence, one),
        test(EXPLICIT, &phase3[2], &phase3[3], confidence, one),
    ];
    Ok(RunAnalysis { topic: topic.to_string(), run, confidence, phase1, phase2, phase3, comparisons, relapse })
}

/// A run directory that could not be analyzed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub dir: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsAnalysis {
    pub plan: ExperimentPlan,
    pub runs: Vec<RunAnalysis>,
    pub skipped: Vec<SkippedRun>,
}

/// Run directories of `results` in plan order.
pub fn run_dirs(results: &Path, plan: &ExperimentPlan) -> Vec<(String, usize, PathBuf)> {
    let mut out = Vec::new();
    for topic in &plan.topics {
        for i in 0..plan.runs {
            let dir = results.join(topic).join(run_dir_name(i));
            if dir.is_dir() {
                out.push((topic.clone(), i + 1, dir));
            }
        }
    }
    out
}

/// Recomputes every run's statistics from its logs. Read-only.
pub fn analyze_results(results: &Path, confidence: f64) -> Result<ResultsAnalysis, ReportError> {
    if !results.join(crate::orchestrator::PLAN_FILE).is_file() {
        return Err(ReportError::Empty(results.to_path_buf()));
    }
    let plan = read_plan(results)?;
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for (topic, run, dir) in run_dirs(results, &plan) {
        let rel = format!("{topic}/{}", run_dir_name(run - 1));
        let logs = RunLogs::load(&dir)?;
        if !logs.is_complete(plan.phase_length) {
            skipped.push(SkippedRun { dir: rel, reason: "incomplete logs".into() });
            continue;
        }
        match analyze_run(&topic, run, &logs, confidence) {
            Ok(a) => runs.push(a),
            Err(e) => skipped.push(SkippedRun { dir: rel, reason: e.to_string() }),
        }
    }
    if runs.is_empty() {
        return Err(ReportError::NoCompleteRuns(results.to_path_buf()));
    }
    Ok(ResultsAnalysis { plan, runs, skipped })
}

/// Fig. 5 style count of runs with a significant result per topic and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    pub topic: String,
    pub test: String,
    pub significant: usize,
    pub runs: usize,
    /// Runs where the test was degenerate.
    pub no_verdict: usize,
}

pub fn tally(runs: &[RunAnalysis]) -> Vec<TallyRow> {
    let mut rows: BTreeMap<(String, String), TallyRow> = BTreeMap::new();
    for r in runs {
        let tests = r
            .comparisons
            .iter()
            .map(|t| (t.name.clone(), t))
            .chain(r.relapse.iter().map(|t| (format!("relapse_{}", t.name), t)));
        for (name, t) in tests {
            let row = rows.entry((r.topic.clone(), name.clone())).or_insert_with(|| TallyRow {
                topic: r.topic.clone(),
                test: name,
                significant: 0,
                runs: 0,
                no_verdict: 0,
            });
            row.runs += 1;
            row.significant += t.significant() as usize;
            row.no_verdict += t.verdict.is_none() as usize;
        }
    }
    let mut out: Vec<TallyRow> = rows.into_values().collect();
    let order = |r: &TallyRow| runs.iter().position(|a| a.topic == r.topic).unwrap_or(usize::MAX);
    out.sort_by_key(|r| order(r));
    out
}

/// `(topic, run, test)` of every test without a verdict. Phase 2
/// comparisons are the primary hypotheses; a degenerate relapse test only
/// means neither twin saw the topic.
pub fn degenerate_tests(runs: &[RunAnalysis], include_relapse: bool) -> Vec<(String, usize, String)> {
    let mut out = Vec::new();
    for r in runs {
        let relapse = r.relapse.iter().filter(|_| include_relapse).map(|t| (format!("relapse_{}", t.name), t));
        for (name, t) in r.comparisons.iter().map(|t| (t.name.clone(), t)).chain(relapse) {
            if t.verdict.is_none() {
                out.push((r.topic.clone(), r.run, name));
            }
        }
    }
    out
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn verdict_cols(t: &TestOutcome) -> [String; 3] {
    match t.verdict {
        Some(v) => [f(v.z_statistic), format!("{:.3e}", v.p_value), v.significant.to_string()],
        None => ["NA".into(), "NA".into(), "degenerate".into()],
    }
}

/// File name to tab-separated content.
pub fn render_tables(runs: &[RunAnalysis]) -> BTreeMap<&'static str, String> {
    let mut tables = BTreeMap::new();

    let mut t = String::from("topic\trun\tphase\tlabel\ton_topic\tn\tproportion\tci_lo\tci_hi\n");
    for r in runs {
        for (phase, groups) in [(1, &r.phase1), (2, &r.phase2), (3, &r.phase3)] {
            for g in groups.iter() {
                let _ = writeln!(
                    t,
                    "{}\t{}\t{phase}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.topic,
                    r.run,
                    g.label,
                    g.sample.successes,
                    g.sample.trials,
                    f(g.proportion),
                    f(g.interval.lo),
                    f(g.interval.hi)
                );
            }
        }
    }
    tables.insert("prevalence.tsv", t);

    let header = "topic\trun\ttest\tleft\tx1\tn1\tright\tx2\tn2\tz\tp_value\tsignificant\n";
    let mut comparisons = String::from("# two-sided two-proportion z-tests\n");
    comparisons.push_str(header);
    let mut relapse = String::from("# one-sided two-proportion z-tests, ceases > continues\n");
    relapse.push_str(header);
    for r in runs {
        for (out, tests) in [(&mut comparisons, &r.comparisons), (&mut relapse, &r.relapse)] {
            for x in tests.iter() {
                let [z, p, sig] = verdict_cols(x);
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{z}\t{p}\t{sig}",
                    r.topic,
                    r.run,
                    x.name,
                    x.left.label,
                    x.left.sample.successes,
                    x.left.sample.trials,
                    x.right.label,
                    x.right.sample.successes,
                    x.right.sample.trials
                );
            }
        }
    }
    tables.insert("phase2_tests.tsv", comparisons);
    tables.insert("relapse.tsv", relapse);
    tables.insert("tally.tsv", render_tally(&tally(runs)));
    tables
}

pub fn render_tally(rows: &[TallyRow]) -> String {
    let mut t = String::from("topic\ttest\tsignificant\truns\tno_verdict\n");
    for r in rows {
        let _ = writeln!(t, "{}\t{}\t{}\t{}\t{}", r.topic, r.test, r.significant, r.runs, r.no_verdict);
    }
    t
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn svg_frame(title: &str, x_label: &str, y_label: &str, y_max: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{title}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>\n",
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = H - MARGIN - (H - 2.0 * MARGIN) * i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", MARGIN - 4.0, y + 4.0, trim(v));
    }
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Cumulative on-topic curves of several logs on one chart.
pub fn curves_svg(title: &str, series: &[(String, &BehaviorLog)]) -> String {
    let len = series.iter().map(|(_, l)| l.len()).max().unwrap_or(1).max(1) as f64;
    let mut s = svg_frame(title, "videos scrolled", "cumulative on-topic", len);
    let sx = |i: f64| MARGIN + (W - 2.0 * MARGIN) * i / len;
    let sy = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * v / len;
    for (k, (name, log)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = std::iter::once((0usize, 0u32))
            .chain(cumulative_curve(log))
            .map(|(i, c)| format!("{:.1},{:.1}", sx(i as f64), sy(c as f64)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            MARGIN + 8.0,
            MARGIN + 14.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Point estimates with confidence bars, one group per column.
pub fn intervals_svg(title: &str, groups: &[(String, &GroupCount)]) -> String {
    let y_max = groups.iter().map(|(_, g)| g.interval.hi).fold(0.0, f64::max).max(0.05);
    let y_max = (y_max * 10.0).ceil() / 10.0;
    let mut s = svg_frame(title, "group", "on-topic proportion", y_max);
    let n = groups.len().max(1) as f64;
    let sy = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * v / y_max;
    for (k, (name, g)) in groups.iter().enumerate() {
        let x = MARGIN + (W - 2.0 * MARGIN) * (k as f64 + 0.5) / n;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            sy(g.interval.lo),
            sy(g.interval.hi)
        );
        let _ = writeln!(s, "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{color}\"/>", sy(g.proportion));
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{name}</text>",
            H - MARGIN + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, content: &str) -> Result<(), ReportError> {
    fs::write(path, content).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

/// Writes tables and plots under `out`, which must lie outside `results`.
pub fn write_report(results: &Path, analysis: &ResultsAnalysis, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let mut written = Vec::new();
    for (name, content) in render_tables(&analysis.runs) {
        let path = out.join(name);
        write_file(&path, &content)?;
        written.push(path);
    }
    for topic in &analysis.plan.topics {
        let runs: Vec<&RunAnalysis> = analysis.runs.iter().filter(|r| &r.topic == topic).collect();
        if runs.is_empty() {
            continue;
        }
        let mut logs = Vec::new();
        for r in &runs {
            let dir = results.join(topic).join(run_dir_name(r.run - 1));
            logs.push((r.run, RunLogs::load(&dir)?));
        }
        let series: Vec<(String, &BehaviorLog)> = logs
            .iter()
            .flat_map(|(run, l)| {
                [WATCH, BASELINE]
                    .into_iter()
                    .filter_map(move |label| l.phase1.get(label).map(|log| (format!("run {run} {label}"), log)))
            })
            .collect();
        let path = out.join(format!("curves_{topic}.svg"));
        write_file(&path, &curves_svg(&format!("{topic}: Phase 1 cumulative on-topic videos"), &series))?;
        written.push(path);

        let groups: Vec<(String, &GroupCount)> =
            runs.iter().flat_map(|r| r.phase2.iter().map(move |g| (format!("r{} {}", r.run, g.label), g))).collect();
        let path = out.join(format!("phase2_{topic}.svg"));
        write_file(
            &path,
            &intervals_svg(
                &format!("{topic}: Phase 2 prevalence, {}% Agresti-Coull", trim(analysis.runs[0].confidence * 100.0)),
                &groups,
            ),
        )?;
        written.push(path);
    }
    Ok(written)
}
