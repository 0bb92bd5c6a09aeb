use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fypaudit::classifier::RuleBased;
use fypaudit::orchestrator::{
    read_accounts, run_experiment, ExperimentPlan, RunLogs, ACCOUNTS_FILE, PLAN_FILE, PRECHECK_FILE, RUNS_FILE,
    STATS_FILE,
};
use fypaudit::puppet::{Action, Role};
use fypaudit::report::analyze_results;

fn small_plan() -> ExperimentPlan {
    ExperimentPlan {
        topics: vec!["cooking".into()],
        runs: 2,
        phase_length: 60,
        corpus_size: 20_000,
        ..ExperimentPlan::default()
    }
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn run_layout_roles_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let plan = small_plan();
    let outcomes = run_experiment(&plan, &a, &RuleBased, 2).unwrap();
    assert_eq!(outcomes.len(), 2);
    assert!(outcomes.iter().all(|o| o.completed), "{outcomes:?}");
    run_experiment(&plan, &b, &RuleBased, 1).unwrap();
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(sb[k] == *v, "{k} differs");
    }

    for f in [PLAN_FILE, RUNS_FILE] {
        assert!(a.join(f).is_file());
    }
    let mut ids = std::collections::BTreeSet::new();
    for run in ["run-01", "run-02"] {
        let dir = a.join("cooking").join(run);
        for f in [ACCOUNTS_FILE, PRECHECK_FILE, STATS_FILE] {
            assert!(dir.join(f).is_file(), "{run}/{f}");
        }
        let logs = RunLogs::load(&dir).unwrap();
        assert!(logs.is_complete(60));
        assert_eq!(logs.seed.as_ref().unwrap().len(), 25);
        assert_eq!((logs.phase1.len(), logs.phase2.len(), logs.phase3.len()), (2, 6, 6));
        let accounts = read_accounts(&dir).unwrap();
        assert_eq!(accounts.len(), 8);
        for acc in &accounts {
            assert!(ids.insert(acc.account_id.clone()), "account ids shared across runs");
            assert!(dir.join("traces").join(format!("{}.fltrace", acc.account_id)).is_file());
        }
        let roles: Vec<Role> = accounts.iter().flat_map(|a| a.roles.iter().map(|r| r.role)).collect();
        for role in Role::ALL {
            assert!(roles.contains(&role), "{role} missing");
        }
        let explicit = &logs.phase2["explicit_ceases"];
        assert!(explicit
            .entries
            .iter()
            .all(|e| matches!(e.action, Action::NotInterestedAfterWatch) == e.classified_on_topic));
    }

    let before = snapshot(&a);
    let analysis = analyze_results(&a, 0.99).unwrap();
    assert_eq!(analysis.runs.len(), 2);
    assert_eq!(snapshot(&a), before);
}

#[test]
fn rejects_bad_plans_and_non_empty_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = ExperimentPlan { runs: 0, ..small_plan() };
    assert!(run_experiment(&bad, tmp.path(), &RuleBased, 1).unwrap_err().is_config());
    let bad = ExperimentPlan { topics: vec!["knitting".into()], ..small_plan() };
    assert!(bad.validate().is_err());
    let bad = ExperimentPlan { confidence: 1.0, ..small_plan() };
    assert!(bad.validate().is_err());
    fs::write(tmp.path().join("x"), b"1").unwrap();
    assert!(run_experiment(&small_plan(), tmp.path(), &RuleBased, 1).unwrap_err().is_config());
}
