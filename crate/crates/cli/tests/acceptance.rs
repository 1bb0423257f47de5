//! One test per acceptance criterion. Each prints a PASS/FAIL line straight to
//! stdout so the summary shows up even when output capture is on.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use policygame::agents::{build_chat_request, Agent, AgentSpec, RemoteSpec};
use policygame::cot::{per_thousand, KeywordAnalyzer};
use policygame::game::{classify_dominance, enumerate_nash, Action, DominanceClass, PayoffTable, Profile, Role};
use policygame::prompting::{Condition, PromptBuilder};
use policygame::runner::{aggregate, content_hash, read_records, run_grid, GridOptions, GroupBy, RunRecord};
use policygame::scenarios::{debt_crisis, generate_bundle, render_payoff_text, RenderMode};
use policygame::stats::{
    chi_square_independence, cramers_v, fisher_exact_2x2, holm_correct, odds_ratio_haldane, ContingencyTable, CramerConvention,
};
use policygame::ExactPayoffTable;

type Check = Result<(), String>;

fn report(n: u8, what: &str, result: Check) {
    let line = match &result {
        Ok(()) => format!("PASS criterion {n}: {what}\n"),
        Err(e) => format!("FAIL criterion {n}: {what}: {e}\n"),
    };
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    if let Err(e) = result {
        panic!("criterion {n} failed: {e}");
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Check {
    ensure((got - want).abs() <= tol, format!("{what}: got {got}, want {want} ± {tol}"))
}

fn table(s: &str) -> ContingencyTable {
    ContingencyTable::parse(s).unwrap()
}

fn chi2(s: &str) -> f64 {
    chi_square_independence::<f64>(&table(s)).statistic.unwrap()
}

fn fisher_p(s: &str) -> f64 {
    fisher_exact_2x2::<f64>(&table(s)).unwrap().p_value.value().unwrap()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let t = chi_square_independence::<f64>(&table("0,60;0,60;0,60;54,6"));
    close(t.statistic.unwrap(), 209.03, 0.05, "chi2 A")?;
    ensure(t.df == Some(3), "df A")?;
    close(chi2("4,56;0,60;4,56;39,21"), 105.91, 0.05, "chi2 B")?;
    close(chi2("379,4;393,4;353,0;142,93"), 430.38, 0.05, "chi2 C")?;

    close(cramers_v(209.03, 240, 4, 2, CramerConvention::Standard), 0.93, 0.01, "V standard")?;
    close(cramers_v(209.03, 240, 4, 2, CramerConvention::RowsMinusOne), 0.54, 0.01, "V rows-1")?;
    close(cramers_v(430.38, 1368, 4, 2, CramerConvention::RowsMinusOne), 0.32, 0.01, "V rows-1 N=1368")?;

    close(fisher_p("4,56;0,60"), 0.119, 0.001, "fisher 4,56;0,60")?;
    ensure(fisher_p("4,56;39,21") < 0.001, "fisher 4,56;39,21")?;
    ensure(fisher_p("0,60;39,21") < 0.001, "fisher 0,60;39,21")?;

    let ors = [
        ("379,4;142,93", 55.33),
        ("393,4;142,93", 57.38),
        ("353,0;142,93", 463.89),
        ("379,4;393,4", 0.96),
        ("379,4;353,0", 0.12),
        ("4,56;0,60", 9.64),
        ("4,56;39,21", 0.04),
        ("0,60;39,21", 0.004),
    ];
    for (cells, want) in ors {
        let got: f64 = odds_ratio_haldane(&table(cells)).unwrap();
        close(got, want, f64::max(0.01, 0.01 * want), &format!("OR {cells}"))?;
    }

    let rows = table("4,56;0,60;4,56;39,21");
    let mut raw = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            raw.push(fisher_exact_2x2::<f64>(&rows.pair(i, j).unwrap()).unwrap().p_value.value().unwrap());
        }
    }
    let adjusted = holm_correct(&raw);
    let i = raw.iter().position(|p| (p - 0.119).abs() < 0.001).ok_or("no raw p of 0.119")?;
    close(adjusted[i], 0.356, 0.002, "holm")?;
    ensure(start.elapsed() < Duration::from_secs(1), format!("took {:?}", start.elapsed()))
}

fn bit(role: usize) -> usize {
    1 << (3 - role)
}

fn random_raw(rng: &mut ChaCha8Rng) -> [[f64; 4]; 16] {
    let coarse = rng.random_bool(0.5);
    let mut t = [[0.0; 4]; 16];
    for v in t.iter_mut().flatten() {
        *v = if coarse { rng.random_range(-2..=2) as f64 } else { rng.random_range(-10.0..10.0) };
    }
    t
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for k in 0..1000 {
        let raw = random_raw(&mut rng);
        let oracle: Vec<usize> = (0..16).filter(|&p| (0..4).all(|r| raw[p][r] >= raw[p ^ bit(r)][r])).collect();
        let got: Vec<usize> = enumerate_nash(&PayoffTable::from_array(raw).unwrap()).iter().map(Profile::index).collect();
        ensure(got == oracle, format!("table {k}: engine {got:?}, oracle {oracle:?}"))?;
    }
    ensure(start.elapsed() < Duration::from_secs(1), format!("took {:?}", start.elapsed()))
}

fn structure<T: policygame::Payoff>(t: &PayoffTable<T>) -> (Vec<usize>, Vec<Vec<Action>>, DominanceClass) {
    let br = Profile::all().flat_map(|p| Role::ALL.map(|r| t.best_response(r, p).iter().collect())).collect();
    (enumerate_nash(t).iter().map(Profile::index).collect(), br, classify_dominance(t))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..200 {
        let mut raw = random_raw(&mut rng);
        for v in raw.iter_mut().flatten() {
            *v = v.round();
        }
        let exact: ExactPayoffTable = PayoffTable::from_array(raw).unwrap().convert(|x| Ratio::from_integer(x as i64));
        let mut moved = exact.clone();
        for role in Role::ALL {
            let a = Ratio::new(rng.random_range(1..100i64), rng.random_range(1..100i64));
            let b = Ratio::new(rng.random_range(-100..100i64), rng.random_range(1..30i64));
            moved = moved.map_role(role, |x| a * x + b);
        }
        ensure(structure(&moved) == structure(&exact), format!("table {k} changed under an affine map"))?;
    }
    Ok(())
}

/// Reference Industrialist rows for the debt crisis scenario, in display order.
const REFERENCE_ROWS: [(&str, &str, &str, &str, f64); 16] = [
    ("POLLUTE", "NO_REG", "NO_CAM", "BUY_CHEAP", 15.0),
    ("POLLUTE", "NO_REG", "NO_CAM", "SUPPORT_GREEN", 14.0),
    ("POLLUTE", "NO_REG", "CAM", "BUY_CHEAP", 13.5),
    ("POLLUTE", "NO_REG", "CAM", "SUPPORT_GREEN", 12.5),
    ("POLLUTE", "REG", "NO_CAM", "BUY_CHEAP", 12.0),
    ("POLLUTE", "REG", "NO_CAM", "SUPPORT_GREEN", 11.0),
    ("POLLUTE", "REG", "CAM", "BUY_CHEAP", 10.5),
    ("POLLUTE", "REG", "CAM", "SUPPORT_GREEN", 9.5),
    ("CLEAN", "REG", "CAM", "SUPPORT_GREEN", 3.0),
    ("CLEAN", "REG", "NO_CAM", "SUPPORT_GREEN", 2.5),
    ("CLEAN", "NO_REG", "CAM", "SUPPORT_GREEN", 1.5),
    ("CLEAN", "NO_REG", "NO_CAM", "SUPPORT_GREEN", 1.5),
    ("CLEAN", "REG", "CAM", "BUY_CHEAP", 0.5),
    ("CLEAN", "REG", "NO_CAM", "BUY_CHEAP", 0.5),
    ("CLEAN", "NO_REG", "CAM", "BUY_CHEAP", -0.5),
    ("CLEAN", "NO_REG", "NO_CAM", "BUY_CHEAP", -0.5),
];

fn criterion_4() -> Check {
    let s = debt_crisis();
    let text = render_payoff_text(s.table(), Role::Industrialist, RenderMode::OwnPayoff);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    ensure(rows.len() == 16, format!("{} rows", rows.len()))?;
    let mut seen = std::collections::HashSet::new();
    for (line, want) in rows.iter().zip(REFERENCE_ROWS) {
        let f: Vec<&str> = line.split(' ').collect();
        ensure(f.len() == 5, format!("bad row {line:?}"))?;
        ensure((f[0], f[1], f[2], f[3]) == (want.0, want.1, want.2, want.3), format!("row {line:?}, want {want:?}"))?;
        let value: f64 = f[4].parse().map_err(|_| format!("bad payoff in {line:?}"))?;
        ensure(value == want.4, format!("row {line:?}, want {}", want.4))?;
        // Parse back through the action names and compare with the table itself.
        let actions: Vec<Action> =
            Role::ALL.iter().zip(&f[..4]).map(|(&r, k)| Action::parse(r, k).ok_or(format!("unknown action {k}"))).collect::<Result<_, _>>()?;
        let p = Profile::from_actions([actions[0], actions[1], actions[2], actions[3]]);
        ensure(s.table().payoff(p, Role::Industrialist) == value, format!("parse-back mismatch at {p}"))?;
        seen.insert(p);
    }
    ensure(seen.len() == 16, "profiles repeat")?;
    ensure(rows[0].ends_with(" 15.0") && rows[15].ends_with(" -0.5"), "first/last row values")
}

fn nash_pct(records: &[RunRecord]) -> Option<f64> {
    let cells = aggregate(records, GroupBy::default(), false);
    cells.values().next().and_then(|c| c.nash_pct())
}

fn criterion_5() -> Check {
    let builder = PromptBuilder::default();
    let cond = [Condition::base_grid()[0].clone()];
    let opts = GridOptions { repetitions: 5, ..GridOptions::default() };
    let run = |uri: &str, bundle| {
        run_grid(&Agent::new(AgentSpec::parse(uri).unwrap()), &builder, bundle, &cond, &opts, None).unwrap().executed
    };
    let green = generate_bundle("green", DominanceClass::GreenDominant, 41, 41).unwrap();
    let tragedy = generate_bundle("tragedy", DominanceClass::TragedyDominant, 12, 12).unwrap();

    let g = run("fixed:a_green", &green);
    ensure(g.len() == 205, format!("{} green records", g.len()))?;
    ensure(nash_pct(&g) == Some(100.0), format!("green nash {:?}", nash_pct(&g)))?;
    let t = run("fixed:a_green", &tragedy);
    ensure(t.len() == 60, format!("{} tragedy records", t.len()))?;
    ensure(nash_pct(&t) == Some(0.0), format!("tragedy nash under a_green {:?}", nash_pct(&t)))?;
    let t = run("fixed:a_tragedy", &tragedy);
    ensure(nash_pct(&t) == Some(100.0), format!("tragedy nash under a_tragedy {:?}", nash_pct(&t)))
}

fn core_tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

fn criterion_6() -> Check {
    let builder = PromptBuilder::default();
    let s = debt_crisis();
    for (cond, file) in [("hidden+persona", "default_hidden"), ("hidden+nopersona", "off_hidden"), ("visible+persona", "default_visible")] {
        let c: Condition = cond.parse().unwrap();
        let p = builder.build_prompt(&s, Role::Industrialist, &c, &[]).map_err(|e| e.to_string())?;
        for (part, got) in [("system", &p.system_text), ("user", &p.user_text)] {
            let want = std::fs::read_to_string(core_tests_dir().join(format!("golden/{file}.{part}.txt"))).map_err(|e| e.to_string())?;
            ensure(*got == want, format!("{cond} {part} differs from golden"))?;
        }
        if cond == "hidden+nopersona" {
            ensure(p.system_text.contains("You are a player in a strategic game."), "neutral text missing")?;
        }
        let req = serde_json::to_value(build_chat_request(&RemoteSpec::new("http://localhost/v1", "m"), &p, Some(1))).unwrap();
        ensure(req["temperature"] == 0.2 && req["top_p"] == 0.9 && req["max_tokens"] == 256, format!("decoding params {req}"))?;
    }
    Ok(())
}

fn criterion_7() -> Check {
    let a = KeywordAnalyzer::builtin();
    let fixture = std::fs::read_to_string(core_tests_dir().join("fixtures/rationale_nopersona_visible.txt")).unwrap();
    let p = a.count_keywords(&[fixture]);
    for cat in ["game_theoretic", "payoff_focused", "explicit_info"] {
        ensure(p.count(cat) >= 1, format!("{cat} = 0 on the payoff-reasoning fixture"))?;
    }
    let words = ["Payoff", "nash", "EQUILIBRIUM", "role", "as an industrialist", "future", "now", "should", "strategy", "given", "x"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut corpus = || -> Vec<String> {
        (0..rng.random_range(0..8))
            .map(|_| (0..rng.random_range(0..20)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" "))
            .collect()
    };
    for k in 0..500 {
        let (x, y) = (corpus(), corpus());
        let mut merged = a.count_keywords(&x);
        merged.merge(&a.count_keywords(&y));
        let joined: Vec<String> = x.iter().chain(&y).cloned().collect();
        ensure(a.count_keywords(&joined) == merged, format!("additivity fails on corpus {k}"))?;
        let upper: Vec<String> = x.iter().map(|s| s.to_uppercase()).collect();
        ensure(a.count_keywords(&upper) == a.count_keywords(&x), format!("case invariance fails on corpus {k}"))?;
    }
    close(per_thousand(368, 1061).unwrap(), 347.0, 1.0, "per 1000")
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0)
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bin = env!("CARGO_BIN_EXE_policygame");
    let status = Command::new(bin)
        .args(["generate", "--target", "tragedy", "--count", "5", "--seed", "8", "--out", "t.json"])
        .current_dir(d)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    ensure(status.success(), "generate failed")?;
    let args = ["run", "--bundle", "t.json", "--models", "random:4", "--seed", "3", "--workers", "2"];
    let mut child = Command::new(bin)
        .args(args)
        .args(["--out", "resumed", "--pace-ms", "25"])
        .current_dir(d)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let log = d.join("resumed/records.jsonl");
    let start = Instant::now();
    while line_count(&log) < 10 && start.elapsed() < Duration::from_secs(60) {
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    ensure(line_count(&log) >= 10, "run made no progress")?;
    ensure(line_count(&log) < 100, "run completed before the kill")?;
    OpenOptions::new().append(true).open(&log).unwrap().write_all(b"{\"model_id\":\"ran").unwrap();

    for out in ["resumed", "clean"] {
        let status = Command::new(bin).args(args).args(["--out", out]).current_dir(d).stdout(Stdio::null()).status().unwrap();
        ensure(status.success(), format!("{out} run failed"))?;
    }
    let resumed = read_records(&log).map_err(|e| e.to_string())?;
    let clean = read_records(d.join("clean/records.jsonl")).map_err(|e| e.to_string())?;
    ensure(resumed.records.len() == 100, format!("{} records after resume", resumed.records.len()))?;
    ensure(content_hash(&resumed.records) == content_hash(&clean.records), "content hashes differ")
}

#[test]
fn criterion_1_statistics_golden_suite() {
    report(1, "statistics golden suite", criterion_1());
}

#[test]
fn criterion_2_nash_oracle_equivalence() {
    report(2, "Nash enumeration matches the deviation oracle on 1000 tables", criterion_2());
}

#[test]
fn criterion_3_affine_invariance() {
    report(3, "affine invariance over 200 tables", criterion_3());
}

#[test]
fn criterion_4_payoff_rendering_fidelity() {
    report(4, "debt crisis Industrialist table renders in reference order", criterion_4());
}

#[test]
fn criterion_5_protocol_endpoints() {
    report(5, "oracle agents hit 100% / 0% Nash on synthetic bundles", criterion_5());
}

#[test]
fn criterion_6_prompt_fidelity() {
    report(6, "prompt goldens and decoding parameters", criterion_6());
}

#[test]
fn criterion_7_keyword_analyzer() {
    report(7, "keyword analyzer fixture, properties and normalization", criterion_7());
}

#[test]
fn criterion_8_end_to_end_resumability() {
    report(8, "killed run resumes to the uninterrupted content hash", criterion_8());
}
