use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Strategy;
use super::run::ExperimentResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// TOML document holding every field of every result; see [`parse_report`].
    StructuredText,
    /// One row per result with seed-mean metrics in percent.
    Markdown,
    /// One row per (result, seed, fold).
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toml" | "structured-text" => Ok(Self::StructuredText),
            "md" | "markdown" | "markdown-table" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::invalid(format!(
                "unknown report format `{s}`; expected toml, markdown or csv"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    results: Vec<ExperimentResult>,
}

pub fn render_report(results: &[ExperimentResult], format: ReportFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Empty("results"));
    }
    match format {
        ReportFormat::StructuredText => Ok(toml::to_string(&Document {
            results: results.to_vec(),
        })?),
        ReportFormat::Markdown => Ok(markdown(results)),
        ReportFormat::Csv => Ok(csv(results)),
    }
}

/// Inverse of [`render_report`] with [`ReportFormat::StructuredText`].
pub fn parse_report(text: &str) -> Result<Vec<ExperimentResult>> {
    Ok(toml::from_str::<Document>(text)?.results)
}

fn classes(results: &[ExperimentResult]) -> Vec<String> {
    results[0].aggregate.confusion.classes.clone()
}

fn strategy_code(r: &ExperimentResult) -> String {
    if r.strategy == Strategy::DropThenMaintain && !r.maintain_classifier {
        "4-wo-M".into()
    } else {
        r.strategy.to_string()
    }
}

fn csv(results: &[ExperimentResult]) -> String {
    let classes = classes(results);
    let mut out = String::from("strategy,mode,seed,fold,sla,macro_p,macro_r,macro_f1");
    for c in &classes {
        write!(out, ",acc_{c}").unwrap();
    }
    out.push('\n');
    for r in results {
        for s in &r.seeds {
            for (fold, rep) in s.report.folds.iter().enumerate() {
                write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    strategy_code(r),
                    r.mode,
                    s.seed,
                    fold,
                    rep.sla,
                    rep.macro_precision,
                    rep.macro_recall,
                    rep.macro_f1
                )
                .unwrap();
                for c in &classes {
                    match rep.class_accuracy(c) {
                        Some(a) => write!(out, ",{a}").unwrap(),
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn markdown(results: &[ExperimentResult]) -> String {
    let classes = classes(results);
    let mut out = String::from("| Method | SLA | Macro P | Macro R | Macro F1 |");
    for c in &classes {
        write!(out, " {c} |").unwrap();
    }
    out.push_str("\n|---|---:|---:|---:|---:|");
    out.push_str(&"---:|".repeat(classes.len()));
    out.push('\n');
    for r in results {
        let m = &r.means;
        write!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.label(),
            pct(m.sla),
            pct(m.macro_precision),
            pct(m.macro_recall),
            pct(m.macro_f1)
        )
        .unwrap();
        for c in &classes {
            match m.class_accuracy.get(c) {
                Some(&a) => write!(out, " {} |", pct(a)).unwrap(),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out
}
