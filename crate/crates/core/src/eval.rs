//! Balanced accuracy, corpus BLEU@4, per-question-type evaluation and report
//! rendering.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::data::{AnnotationRecord, BinaryLabel, QuestionType};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::geometry::OverlapConfig;
use crate::model::{self, build_input, classify_yes_no, AblationConfig, PelicanInput, PelicanParams, TrainLog};
use crate::nn::tokenizer::{self, Tokenizer};

/// Largest tolerated distance of the positive share from one half.
pub const BALANCE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedAccuracy {
    pub accuracy: f64,
    pub n: usize,
    pub positive_fraction: f64,
    /// Set when the gold labels are not close to a 50/50 split.
    pub warning: Option<String>,
}

pub fn balanced_accuracy(preds: &[BinaryLabel], golds: &[BinaryLabel]) -> Result<BalancedAccuracy> {
    if golds.is_empty() {
        return Err(Error::Empty("accuracy input"));
    }
    if preds.len() != golds.len() {
        return Err(Error::SizeMismatch(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let n = golds.len();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let positives = golds.iter().filter(|&&g| g == BinaryLabel::Positive).count();
    let positive_fraction = positives as f64 / n as f64;
    let warning = ((positive_fraction - 0.5).abs() > BALANCE_TOLERANCE).then(|| {
        format!(
            "gold labels are {:.1}% positive; accuracy is not on a balanced set",
            100.0 * positive_fraction
        )
    });
    Ok(BalancedAccuracy {
        accuracy: correct as f64 / n as f64,
        n,
        positive_fraction,
        warning,
    })
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in words.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU@4 over tokenized sentences. Each hypothesis may have several
/// references; n-gram counts are clipped by the per-n-gram maximum over the
/// references and the brevity penalty uses the reference length closest to
/// each hypothesis (shorter on ties). No smoothing: any empty precision
/// gives 0.
pub fn bleu4(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::SizeMismatch(format!(
            "{} hypotheses for {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(hyp.len()), r))
            .expect("non-empty");
        for n in 1..=4 {
            let counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in counts {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * log_precision.exp())
}

/// [`bleu4`] over raw strings, split into words and punctuation.
pub fn bleu4_text<S: AsRef<str>>(hypotheses: &[S], references: &[Vec<S>]) -> Result<f64> {
    let h: Vec<Vec<String>> = hypotheses.iter().map(|s| Tokenizer::words(s.as_ref())).collect();
    let r: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|s| Tokenizer::words(s.as_ref())).collect())
        .collect();
    bleu4(&h, &r)
}

/// One question to evaluate, with every same-type answer of its image as
/// references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub qtype: QuestionType,
    pub input: PelicanInput,
    pub references: Vec<String>,
}

pub fn eval_examples(
    records: &[AnnotationRecord],
    sources: &[FeatureTable],
    edited: &[FeatureTable],
    overlap: &OverlapConfig,
) -> Result<Vec<EvalExample>> {
    if records.len() != sources.len() || records.len() != edited.len() {
        return Err(Error::SizeMismatch(format!(
            "{} records, {} source tables, {} edited tables",
            records.len(),
            sources.len(),
            edited.len()
        )));
    }
    let mut out = Vec::new();
    for ((r, s), e) in records.iter().zip(sources).zip(edited) {
        for pair in &r.qa {
            let references =
                r.qa.iter()
                    .filter(|p| p.question.qtype == pair.question.qtype)
                    .map(|p| p.answer.full_text())
                    .collect();
            out.push(EvalExample {
                qtype: pair.question.qtype,
                input: build_input(r, pair, s, e, overlap, true)?,
                references,
            });
        }
    }
    Ok(out)
}

/// Greedy answer text with the label token and other special tokens
/// dropped. A non-empty `prefix` is forced right after the predicted label
/// and kept in the output.
pub fn generate_answer(
    input: &PelicanInput,
    params: &PelicanParams,
    ablation: &AblationConfig,
    prefix: &str,
) -> Result<String> {
    let context = input.question.len() + 2;
    let budget = (params.config.max_tokens + 1).saturating_sub(context);
    let mut forced = model::generate(input, params, ablation, &[], budget.min(1))?;
    forced.extend(Tokenizer.encode(prefix));
    let rest = budget.saturating_sub(forced.len());
    let tokens = if rest == 0 {
        forced
    } else {
        model::generate(input, params, ablation, &forced, rest)?
    };
    let text: Vec<_> = tokens
        .into_iter()
        .filter(|&t| !Tokenizer::is_special(t) || (tokenizer::SUBJ1..=tokenizer::SUBJ3).contains(&t))
        .collect();
    Ok(Tokenizer.decode(&text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub ablation_flags: String,
    /// Question-type tag, or `all`.
    pub qtype: String,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub bleu4: Option<f64>,
    pub perplexity: Option<f64>,
}

impl EvalRow {
    fn has_metric(&self) -> bool {
        self.accuracy.is_some() || self.bleu4.is_some() || self.perplexity.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOptions {
    /// Also decode answers and score BLEU@4 (slow: one pass per token).
    pub generate: bool,
    /// Text forced after the label when generating, by question-type tag.
    pub prefixes: BTreeMap<String, String>,
}

/// Accuracy, perplexity and optionally BLEU@4 per question type (in
/// canonical type order) plus an `all` row.
pub fn evaluate(
    model_name: &str,
    params: &PelicanParams,
    examples: &[EvalExample],
    ablation: &AblationConfig,
    options: &EvalOptions,
) -> Result<Vec<EvalRow>> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    struct Scored {
        qtype: QuestionType,
        pred: BinaryLabel,
        gold: Option<BinaryLabel>,
        nll: f64,
        count: usize,
        hypothesis: Option<String>,
    }
    let mut scored = Vec::with_capacity(examples.len());
    for ex in examples {
        let outcome = model::score(params, &ex.input, ablation)?;
        let pred = classify_yes_no(&ex.input, params, ablation)?.label;
        let hypothesis = if options.generate {
            let prefix = options.prefixes.get(ex.qtype.tag()).map_or("", String::as_str);
            Some(generate_answer(&ex.input, params, ablation, prefix)?)
        } else {
            None
        };
        scored.push(Scored {
            qtype: ex.qtype,
            pred,
            gold: ex.input.gold_label().and_then(model::token_label),
            nll: outcome.nll_sum,
            count: outcome.count,
            hypothesis,
        });
    }

    let groups: Vec<(String, Vec<usize>)> = QuestionType::ALL
        .iter()
        .map(|q| {
            (
                q.tag().to_string(),
                (0..scored.len()).filter(|&i| scored[i].qtype == *q).collect::<Vec<_>>(),
            )
        })
        .filter(|(_, ix)| !ix.is_empty())
        .chain([("all".to_string(), (0..scored.len()).collect())])
        .collect();

    let mut rows = Vec::with_capacity(groups.len());
    for (tag, ix) in groups {
        let (preds, golds): (Vec<_>, Vec<_>) = ix
            .iter()
            .filter_map(|&i| scored[i].gold.map(|g| (scored[i].pred, g)))
            .unzip();
        let accuracy = if golds.is_empty() {
            None
        } else {
            Some(balanced_accuracy(&preds, &golds)?.accuracy)
        };
        let (nll, count) = ix
            .iter()
            .fold((0.0, 0), |(s, c), &i| (s + scored[i].nll, c + scored[i].count));
        let perplexity = (count > 0).then(|| (nll / count as f64).exp());
        let bleu4 = if options.generate {
            let hyps: Vec<&str> = ix
                .iter()
                .map(|&i| scored[i].hypothesis.as_deref().unwrap_or(""))
                .collect();
            let refs: Vec<Vec<&str>> = ix
                .iter()
                .map(|&i| examples[i].references.iter().map(String::as_str).collect())
                .collect();
            Some(bleu4_text(&hyps, &refs)?)
        } else {
            None
        };
        rows.push(EvalRow {
            model: model_name.to_string(),
            ablation_flags: ablation.to_string(),
            qtype: tag,
            n: ix.len(),
            accuracy,
            bleu4,
            perplexity,
        });
    }
    Ok(rows)
}

/// Everything a report is rendered from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Run settings (configuration, seed, flags, tokenizer, pooling).
    pub manifest: BTreeMap<String, String>,
    pub rows: Vec<EvalRow>,
    pub curves: Vec<TrainLog>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub csv: String,
    pub table: String,
    /// Per-epoch curves, one series per training log.
    pub plot_csv: String,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "model",
    "ablation_flags",
    "qtype",
    "n",
    "accuracy",
    "bleu4",
    "perplexity",
];

fn cell(v: Option<f64>, empty: &str) -> String {
    v.map_or_else(|| empty.to_string(), |x| format!("{x:.6}"))
}

/// Renders the report. Refuses when no row carries a metric, or when a
/// metric is not finite.
pub fn emit_report(report: &EvalReport) -> Result<RenderedReport> {
    if !report.rows.iter().any(EvalRow::has_metric) {
        return Err(Error::Empty("report metrics"));
    }
    for r in &report.rows {
        if [r.accuracy, r.bleu4, r.perplexity]
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("report metric"));
        }
    }

    let mut csv = REPORT_COLUMNS.join(",");
    csv.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.model,
            r.ablation_flags,
            r.qtype,
            r.n,
            cell(r.accuracy, ""),
            cell(r.bleu4, ""),
            cell(r.perplexity, "")
        );
    }

    let mut table = String::new();
    for (k, v) in &report.manifest {
        let _ = writeln!(table, "# {k}: {v}");
    }
    let header = ["model", "flags", "qtype", "n", "accuracy", "bleu4", "perplexity"];
    let body: Vec<[String; 7]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.ablation_flags.clone(),
                r.qtype.clone(),
                r.n.to_string(),
                r.accuracy.map_or("-".into(), |a| format!("{:.2}", 100.0 * a)),
                r.bleu4.map_or("-".into(), |b| format!("{:.2}", 100.0 * b)),
                r.perplexity.map_or("-".into(), |p| format!("{p:.3}")),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|c| {
            body.iter()
                .map(|row| row[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let _ = writeln!(table, "{}", line(&header.map(String::from)));
    let _ = writeln!(
        table,
        "{}",
        line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>())
    );
    for row in &body {
        let _ = writeln!(table, "{}", line(row));
    }

    let mut plot_csv = String::from("series,epoch,loss,accuracy,perplexity\n");
    for log in &report.curves {
        for e in &log.epochs {
            let _ = writeln!(
                plot_csv,
                "{},{},{:.6},{:.6},{:.6}",
                log.tag, e.epoch, e.loss, e.accuracy, e.perplexity
            );
        }
    }
    Ok(RenderedReport { csv, table, plot_csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::{Negative as N, Positive as P};

    #[test]
    fn accuracy_arithmetic() {
        let a = balanced_accuracy(&[P, N, P, P], &[P, N, N, P]).unwrap();
        assert_eq!(a.accuracy, 0.75);
        assert!(a.warning.is_none());
        let skewed = balanced_accuracy(&[P, P, P, N], &[P, P, P, N]).unwrap();
        assert_eq!(skewed.accuracy, 1.0);
        assert!(skewed.warning.is_some());
        assert!(balanced_accuracy(&[], &[]).is_err());
        assert!(balanced_accuracy(&[P], &[P, N]).is_err());
    }

    #[test]
    fn bleu_no_overlap_is_zero() {
        assert_eq!(bleu4_text(&["x y z w"], &[vec!["a b c d"]]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_closest_reference_length() {
        let with_long = bleu4_text(&["a b c d"], &[vec!["a b c d e", "a b c d e f g h"]]).unwrap();
        assert!((with_long - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        let exact = bleu4_text(&["a b c d"], &[vec!["a b c d e", "a b c d"]]).unwrap();
        assert_eq!(exact, 1.0);
    }

    #[test]
    fn refuses_empty_report() {
        let row = EvalRow {
            model: "m".into(),
            ablation_flags: "full".into(),
            qtype: "all".into(),
            n: 0,
            accuracy: None,
            bleu4: None,
            perplexity: None,
        };
        let mut report = EvalReport {
            rows: vec![row],
            ..EvalReport::default()
        };
        assert!(emit_report(&report).is_err());
        report.rows[0].accuracy = Some(0.5);
        let out = emit_report(&report).unwrap();
        assert_eq!(
            out.csv,
            "model,ablation_flags,qtype,n,accuracy,bleu4,perplexity\nm,full,all,0,0.500000,,\n"
        );
        assert_eq!(emit_report(&report).unwrap(), out);
    }
}
