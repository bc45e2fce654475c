//! Estimates-with-standard-errors tables: one block per model, estimates
//! on the first line and parenthesized standard errors beneath.

use mrarma::estimation::{alpha_name, FitResult};

const LABEL_WIDTH: usize = 12;
const COL_WIDTH: usize = 10;

pub struct TableRow {
    pub label: String,
    pub fit: FitResult,
}

pub fn model_label(p: usize) -> String {
    if p == 0 {
        "i.i.d.".into()
    } else {
        format!("MRAR({p})")
    }
}

fn columns(rows: &[TableRow]) -> Vec<String> {
    let max_p = rows.iter().map(|r| r.fit.p).max().unwrap_or(0);
    let mut cols = vec!["lambda1".to_string(), "lambda2".to_string()];
    cols.extend((1..=max_p).map(alpha_name));
    cols
}

pub fn render(rows: &[TableRow]) -> String {
    let cols = columns(rows);
    let mut out = format!("{:<LABEL_WIDTH$}", "Skellam-");
    for c in &cols {
        out.push_str(&format!("{c:>COL_WIDTH$}"));
    }
    out.push_str(&format!("{:>COL_WIDTH$}{:>COL_WIDTH$}\n", "AIC", "BIC"));
    let rule = "-".repeat(LABEL_WIDTH + COL_WIDTH * (cols.len() + 2));
    out.push_str(&rule);
    out.push('\n');
    for row in rows {
        let mut est = format!("{:<LABEL_WIDTH$}", row.label);
        let mut se = " ".repeat(LABEL_WIDTH);
        for c in &cols {
            match row.fit.get(c) {
                Some(v) => {
                    est.push_str(&format!("{v:>COL_WIDTH$.3}"));
                    let s = match row.fit.se.as_ref().and_then(|m| m.get(c)) {
                        Some(s) => format!("({s:.3})"),
                        None => "(---)".to_string(),
                    };
                    se.push_str(&format!("{s:>COL_WIDTH$}"));
                }
                None => {
                    est.push_str(&" ".repeat(COL_WIDTH));
                    se.push_str(&" ".repeat(COL_WIDTH));
                }
            }
        }
        for ic in [row.fit.aic, row.fit.bic] {
            match ic {
                Some(v) => est.push_str(&format!("{v:>COL_WIDTH$.1}")),
                None => est.push_str(&format!("{:>COL_WIDTH$}", "---")),
            }
        }
        out.push_str(est.trim_end());
        out.push('\n');
        out.push_str(se.trim_end());
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
    }
    out
}
