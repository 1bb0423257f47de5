//! Report tables built from record logs, rendered as CSV, aligned
//! markdown, or JSON. Output is byte-stable for identical inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cot::{identity_vs_payoff, KeywordAnalyzer};
use crate::prompting::Condition;
use crate::runner::{aggregate, format_pct, prompt_sensitivity, CellAggregate, DistinctMode, GroupBy, RunRecord};
use crate::scenarios::Family;
use crate::stats::{
    chi_square_independence, cramers_v, fisher_exact_2x2, format_opt, format_p, holm_correct, ContingencyTable,
    CramerConvention, PValue,
};

const DASH: &str = "\u{2014}";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    NashHeatmap,
    OutcomeBreakdown,
    Selection,
    Stats,
    Cot,
    Sensitivity,
}

impl ReportKind {
    pub const ALL: [ReportKind; 6] = [
        ReportKind::NashHeatmap,
        ReportKind::OutcomeBreakdown,
        ReportKind::Selection,
        ReportKind::Stats,
        ReportKind::Cot,
        ReportKind::Sensitivity,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ReportKind::NashHeatmap => "nash_heatmap",
            ReportKind::OutcomeBreakdown => "outcome_breakdown",
            ReportKind::Selection => "selection",
            ReportKind::Stats => "stats",
            ReportKind::Cot => "cot",
            ReportKind::Sensitivity => "sensitivity",
        }
    }

    pub fn parse(s: &str) -> Option<ReportKind> {
        ReportKind::ALL.into_iter().find(|k| k.key() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Format> {
        match s {
            "csv" => Some(Format::Csv),
            "md" | "markdown" => Some(Format::Markdown),
            "json" => Some(Format::Json),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Markdown => "md",
            Format::Json => "json",
        }
    }
}

/// A titled table of preformatted cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Table {
        Table { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8")
    }

    pub fn to_markdown(&self) -> String {
        let width = |s: &str| s.chars().count();
        let mut widths: Vec<usize> = self.columns.iter().map(|c| width(c).max(3)).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(width(cell));
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> =
                cells.iter().zip(&widths).map(|(c, &w)| format!("{c}{}", " ".repeat(w - width(c)))).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = format!("### {}\n\n", self.title);
        out.push_str(&line(&self.columns));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub kind: String,
    pub warnings: Vec<String>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                for (i, t) in self.tables.iter().enumerate() {
                    if i > 0 {
                        out.push('\n');
                    }
                    writeln!(out, "# {}", t.title).unwrap();
                    out.push_str(&t.to_csv());
                }
                out
            }
            Format::Markdown => {
                let mut out = format!("## {}\n\n", self.kind);
                for w in &self.warnings {
                    writeln!(out, "> warning: {w}\n").unwrap();
                }
                out.push_str(&self.tables.iter().map(Table::to_markdown).collect::<Vec<_>>().join("\n"));
                out
            }
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
        }
    }
}

fn family_label(f: Option<Family>) -> String {
    f.map_or_else(|| "all".to_string(), |f| f.key().to_string())
}

/// Builds a report of `kind` from the records.
pub fn build_report(kind: ReportKind, records: &[RunRecord], analyzer: &KeywordAnalyzer) -> Report {
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("record log is empty".to_string());
    }
    let invalid = records.iter().filter(|r| !r.valid).count();
    if invalid > 0 {
        warnings.push(format!("{invalid} invalid records excluded from denominators"));
    }
    let tables = match kind {
        ReportKind::NashHeatmap => vec![nash_heatmap(records)],
        ReportKind::OutcomeBreakdown => vec![outcome_breakdown(records)],
        ReportKind::Selection => vec![selection_table(records)],
        ReportKind::Stats => stats_tables(records),
        ReportKind::Cot => cot_tables(records, analyzer),
        ReportKind::Sensitivity => vec![sensitivity_table(records)],
    };
    Report { kind: kind.key().to_string(), warnings, tables }
}

/// Per family, model and condition, plus both families pooled.
fn family_cells(records: &[RunRecord]) -> Vec<(Option<Family>, String, Condition, CellAggregate)> {
    let by_family = aggregate(records, GroupBy::ALL, false);
    let pooled = aggregate(records, GroupBy { family: false, model: true, condition: true }, false);
    let mut out: Vec<_> = by_family
        .into_iter()
        .chain(pooled)
        .map(|(k, v)| (k.family, k.model.expect("grouped by model"), k.condition.expect("grouped by condition"), v))
        .collect();
    // Families first, pooled rows last.
    out.sort_by(|a, b| (a.0.is_none(), a.0, &a.1, &a.2).cmp(&(b.0.is_none(), b.0, &b.1, &b.2)));
    out
}

pub fn nash_heatmap(records: &[RunRecord]) -> Table {
    let mut t = Table::new("Nash equilibrium rate", &["Family", "Model", "Condition", "n_Nash", "Nash (%)", "n_total"]);
    for (family, model, condition, cell) in family_cells(records) {
        t.push(vec![
            family_label(family),
            model,
            condition.table_label(),
            cell.n_nash.to_string(),
            format_pct(cell.nash_pct()),
            cell.n_total.to_string(),
        ]);
    }
    t
}

pub fn outcome_breakdown(records: &[RunRecord]) -> Table {
    let mut t = Table::new(
        "Outcome breakdown",
        &[
            "Family", "Model", "Condition", "n_Nash", "Nash (%)", "n_Green", "Green (%)", "n_Tragedy", "Tragedy (%)",
            "n_total",
        ],
    );
    for (family, model, condition, cell) in family_cells(records) {
        t.push(vec![
            family_label(family),
            model,
            condition.table_label(),
            cell.n_nash.to_string(),
            format_pct(cell.nash_pct()),
            cell.n_green.to_string(),
            format_pct(cell.green_pct()),
            cell.n_tragedy.to_string(),
            format_pct(cell.tragedy_pct()),
            cell.n_total.to_string(),
        ]);
    }
    t
}

/// Equilibrium-selection counts: environmental Nash outcomes count as
/// Green, economic Nash outcomes as Tragedy.
pub fn selection_counts(records: &[RunRecord]) -> BTreeMap<(String, Condition), (u64, u64)> {
    let mut out: BTreeMap<(String, Condition), (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid && r.nash == Some(true)) {
        let e = out.entry((r.model_id.clone(), r.condition.clone())).or_default();
        match r.family {
            Family::Environmental => e.0 += 1,
            Family::Economic => e.1 += 1,
        }
    }
    out
}

fn pct_of(n: u64, total: u64) -> String {
    format_pct((total > 0).then(|| 100.0 * n as f64 / total as f64))
}

pub fn selection_table(records: &[RunRecord]) -> Table {
    let mut t = Table::new(
        "Equilibrium selection among Nash outcomes",
        &["Model", "Condition", "n_Green", "n_Tragedy", "Green (%)", "Tragedy (%)", "n_Nash"],
    );
    for ((model, condition), (g, tr)) in selection_counts(records) {
        t.push(vec![
            model,
            condition.table_label(),
            g.to_string(),
            tr.to_string(),
            pct_of(g, g + tr),
            pct_of(tr, g + tr),
            (g + tr).to_string(),
        ]);
    }
    t
}

/// One row of a statistics battery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub test: String,
    pub contrast: String,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub p: PValue<f64>,
    pub p_holm: Option<f64>,
    pub effect_name: String,
    pub effect: Option<f64>,
}

/// Omnibus chi-square with both Cramér's V conventions, then pairwise
/// Fisher tests (Holm-adjusted) with Haldane odds ratios. Pairwise rows
/// need a two-column table.
pub fn stats_battery(table: &ContingencyTable) -> Vec<StatRow> {
    let chi = chi_square_independence::<f64>(table);
    let (r, c, n) = (table.rows(), table.cols(), table.total());
    let v = |conv| chi.statistic.map(|s| cramers_v(s, n, r, c, conv));
    let mut rows = vec![
        StatRow {
            test: "chi_square".into(),
            contrast: "omnibus".into(),
            statistic: chi.statistic,
            df: chi.df,
            p: chi.p_value,
            p_holm: None,
            effect_name: "cramers_v_standard".into(),
            effect: v(CramerConvention::Standard),
        },
        StatRow {
            test: "chi_square".into(),
            contrast: "omnibus".into(),
            statistic: chi.statistic,
            df: chi.df,
            p: chi.p_value,
            p_holm: None,
            effect_name: "cramers_v_rows_minus_one".into(),
            effect: v(CramerConvention::RowsMinusOne),
        },
    ];
    if c != 2 {
        return rows;
    }
    let mut pairs = Vec::new();
    for i in 0..r {
        for j in i + 1..r {
            let sub = table.pair(i, j).expect("two columns");
            let res = fisher_exact_2x2::<f64>(&sub).expect("2x2");
            pairs.push((format!("{} vs {}", table.row_labels[i], table.row_labels[j]), res));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|(_, res)| res.p_value.or_one()).collect();
    let adjusted = holm_correct(&raw);
    for ((contrast, res), adj) in pairs.into_iter().zip(adjusted) {
        rows.push(StatRow {
            test: "fisher_exact".into(),
            contrast,
            statistic: None,
            df: None,
            p: res.p_value,
            p_holm: Some(adj),
            effect_name: "odds_ratio_haldane".into(),
            effect: res.effect,
        });
    }
    rows
}

pub fn stat_rows_table(title: impl Into<String>, rows: &[StatRow]) -> Table {
    let mut t = Table::new(title, &["test", "contrast", "statistic", "df", "p", "p_holm", "effect", "effect_value"]);
    for row in rows {
        t.push(vec![
            row.test.clone(),
            row.contrast.clone(),
            format_opt(row.statistic, 2),
            row.df.map_or_else(|| DASH.to_string(), |d| d.to_string()),
            format_p(row.p),
            row.p_holm.map_or_else(|| DASH.to_string(), |p| format_p(PValue::Value(p))),
            row.effect_name.clone(),
            format_opt(row.effect, 3),
        ]);
    }
    t
}

/// Rows are conditions; columns are (Nash, not Nash).
pub fn nash_contingency(cells: &[(Condition, CellAggregate)]) -> Option<ContingencyTable> {
    let counts = cells.iter().map(|(_, a)| vec![a.n_nash, a.n_total - a.n_nash]).collect();
    let t = ContingencyTable::new(counts).ok()?;
    Some(t.with_labels(cells.iter().map(|(c, _)| c.label()).collect(), vec!["Nash".into(), "not Nash".into()]))
}

fn stats_tables(records: &[RunRecord]) -> Vec<Table> {
    let mut tables = Vec::new();
    let cells = aggregate(records, GroupBy::ALL, false);
    let mut by_scope: BTreeMap<(String, Family), Vec<(Condition, CellAggregate)>> = BTreeMap::new();
    for (k, v) in cells {
        by_scope
            .entry((k.model.expect("model"), k.family.expect("family")))
            .or_default()
            .push((k.condition.expect("condition"), v));
    }
    for ((model, family), cells) in by_scope {
        if let Some(t) = nash_contingency(&cells) {
            tables.push(stat_rows_table(format!("{model} {} Nash rate by condition", family.key()), &stats_battery(&t)));
        }
    }
    // Per model: (condition, (green, tragedy)) rows.
    type SelectionRows = Vec<(Condition, (u64, u64))>;
    let mut selection: BTreeMap<String, SelectionRows> = BTreeMap::new();
    for ((model, condition), counts) in selection_counts(records) {
        selection.entry(model).or_default().push((condition, counts));
    }
    for (model, cells) in selection {
        let counts = cells.iter().map(|(_, (g, t))| vec![*g, *t]).collect();
        if let Ok(t) = ContingencyTable::new(counts) {
            let t = t.with_labels(cells.iter().map(|(c, _)| c.label()).collect(), vec!["Green".into(), "Tragedy".into()]);
            tables.push(stat_rows_table(format!("{model} equilibrium selection by condition"), &stats_battery(&t)));
        }
    }
    tables
}

fn cot_tables(records: &[RunRecord], analyzer: &KeywordAnalyzer) -> Vec<Table> {
    let mut groups: BTreeMap<(String, Condition), Vec<&str>> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.model_id.clone(), r.condition.clone())).or_default();
        g.extend(r.replies.iter().flatten().map(|reply| reply.rationale.as_str()));
    }
    let mut counts = Table::new(
        "Keyword mentions per 1000 rationales",
        &["Model", "Condition", "Category", "Count", "n_rationales", "Per 1000"],
    );
    let mut scores = Table::new("Identity vs payoff reasoning", &["Model", "Condition", "Identity score", "Payoff score"]);
    for ((model, condition), texts) in groups {
        let profile = analyzer.count_keywords(&texts);
        for cat in analyzer.category_names() {
            counts.push(vec![
                model.clone(),
                condition.table_label(),
                cat.to_string(),
                profile.count(cat).to_string(),
                profile.n_rationales.to_string(),
                format_opt(profile.normalized(cat), 1),
            ]);
        }
        let (i, p) = match identity_vs_payoff(&profile) {
            Ok(s) => (format!("{:.1}", s.identity), format!("{:.1}", s.payoff)),
            Err(_) => (DASH.to_string(), DASH.to_string()),
        };
        scores.push(vec![model, condition.table_label(), i, p]);
    }
    vec![counts, scores]
}

fn sensitivity_table(records: &[RunRecord]) -> Table {
    let mut t = Table::new(
        "Distinct outcomes per scenario across persona variants",
        &["Model", "n_scenarios", "Mean distinct profiles", "Mean distinct outcome types"],
    );
    let profiles = prompt_sensitivity(records, DistinctMode::Profiles);
    let types = prompt_sensitivity(records, DistinctMode::OutcomeTypes);
    for (p, o) in profiles.iter().zip(&types) {
        t.push(vec![
            p.model.clone(),
            p.per_scenario.len().to_string(),
            format_opt(p.mean_distinct, 2),
            format_opt(o.mean_distinct, 2),
        ]);
    }
    t
}
