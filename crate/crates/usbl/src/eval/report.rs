//! Result-table rendering. Both formats read only the results document;
//! nothing is recomputed.

use crate::eval::experiment::{ConfigSummary, ResultsTable};

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn fmt_p(v: Option<f64>) -> String {
    match v {
        Some(p) if p < 0.0001 => "<0.0001".into(),
        Some(p) => format!("{p:.4}"),
        None => "-".into(),
    }
}

/// `mean ± SD [lo, hi]`, degrading to the pieces that exist.
fn fmt_spread(s: &ConfigSummary, metric: &str) -> String {
    let Some(m) = s.metric(metric) else {
        return "-".into();
    };
    let Some(mean) = m.mean else {
        return "-".into();
    };
    let mut out = format!("{mean:.3}");
    if let Some(sd) = m.sd {
        out.push_str(&format!(" \u{b1} {sd:.3}"));
    }
    if let Some((lo, hi)) = m.ci {
        out.push_str(&format!(" [{lo:.3}, {hi:.3}]"));
    }
    out
}

fn fold_cell(s: &ConfigSummary) -> String {
    if s.n_missing == 0 {
        format!("{}", s.n_folds)
    } else {
        format!("{}/{} ({} missing)", s.n_folds - s.n_missing, s.n_folds, s.n_missing)
    }
}

fn rows(table: &ResultsTable) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "method".into(),
        "modalities".into(),
        "auc".into(),
        "sens".into(),
        "spec".into(),
        "brier".into(),
        "cross_entropy".into(),
        "p_bh".into(),
        "folds".into(),
    ]];
    for s in &table.summaries {
        let auc = s.metric("auc");
        rows.push(vec![
            s.method.clone(),
            s.modalities.clone(),
            fmt_spread(s, "auc"),
            fmt3(s.metric("sensitivity").and_then(|m| m.mean)),
            fmt3(s.metric("specificity").and_then(|m| m.mean)),
            fmt3(s.metric("brier").and_then(|m| m.mean)),
            fmt3(s.metric("cross_entropy").and_then(|m| m.mean)),
            fmt_p(auc.and_then(|m| m.p_bh.or(m.p))),
            fold_cell(s),
        ]);
    }
    rows
}

/// Plain-text table, columns padded to content width.
pub fn render_report(table: &ResultsTable) -> String {
    let rows = rows(table);
    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    out.push_str(&format!(
        "{} repeats x {} folds, n1 = {}, n2 = {}\n\n",
        table.cv.r, table.cv.k, table.n1, table.n2
    ));
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<width$}", width = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// One CSV row per configuration, numeric columns unformatted.
pub fn report_csv(table: &ResultsTable) -> String {
    let mut out = String::from(
        "method,modalities,auc_mean,auc_sd,auc_ci_low,auc_ci_high,auc_p,auc_p_bh,\
         sensitivity_mean,specificity_mean,brier_mean,cross_entropy_mean,folds_used,folds_missing\n",
    );
    let num = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for s in &table.summaries {
        let auc = s.metric("auc");
        let line = [
            s.method.clone(),
            s.modalities.clone(),
            num(auc.and_then(|m| m.mean)),
            num(auc.and_then(|m| m.sd)),
            num(auc.and_then(|m| m.ci.map(|c| c.0))),
            num(auc.and_then(|m| m.ci.map(|c| c.1))),
            num(auc.and_then(|m| m.p)),
            num(auc.and_then(|m| m.p_bh)),
            num(s.metric("sensitivity").and_then(|m| m.mean)),
            num(s.metric("specificity").and_then(|m| m.mean)),
            num(s.metric("brier").and_then(|m| m.mean)),
            num(s.metric("cross_entropy").and_then(|m| m.mean)),
            format!("{}", s.n_folds - s.n_missing),
            format!("{}", s.n_missing),
        ];
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
