use std::fmt::Write;

use super::{MetricRow, MetricsTable};

pub const CSV_HEADER: &str =
    "estimator,variable,rho,parameter,truth,mean_estimate,bias,se,rmse,n_valid,n_missing,se_defined";

/// C `%.{digits}g` formatting; non-finite values become `NA`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip(mantissa), sign, exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip(&format!("{:.*}", decimals, x))
    }
}

/// Long-format CSV, one line per row, numbers with 10 significant digits.
pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.estimator,
            r.variable,
            format_sig(r.rho, 10),
            r.parameter,
            format_sig(r.truth, 10),
            format_sig(r.mean_estimate, 10),
            format_sig(r.bias, 10),
            format_sig(r.se, 10),
            format_sig(r.rmse, 10),
            r.n_valid,
            r.n_missing,
            r.se_defined
        );
    }
    out
}

fn fixed2(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        "NA".into()
    }
}

/// One aligned table per parameter: estimator rows, and Bias, SE, RMSE
/// columns for each study variable, two decimals. `footer` is appended
/// verbatim after a blank line.
pub fn metrics_markdown(table: &MetricsTable, footer: Option<&str>) -> String {
    let mut parameters = Vec::new();
    let mut variables: Vec<(String, f64)> = Vec::new();
    let mut estimators = Vec::new();
    for r in &table.rows {
        if !parameters.contains(&r.parameter) {
            parameters.push(r.parameter);
        }
        if !variables.iter().any(|(v, _)| v == &r.variable) {
            variables.push((r.variable.clone(), r.rho));
        }
        if !estimators.contains(&r.estimator) {
            estimators.push(r.estimator);
        }
    }

    let mut out = String::new();
    for (b, &parameter) in parameters.iter().enumerate() {
        if b > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "### {parameter}\n");
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Estimator".to_string()];
        for (v, rho) in &variables {
            for m in ["Bias", "SE", "RMSE"] {
                header.push(format!("{v} (rho={}) {m}", format_sig(*rho, 10)));
            }
        }
        grid.push(header);
        for &estimator in &estimators {
            let mut line = vec![estimator.to_string()];
            for (v, _) in &variables {
                match table.get(estimator, v, parameter) {
                    Some(MetricRow { bias, se, rmse, .. }) => {
                        line.extend([fixed2(*bias), fixed2(*se), fixed2(*rmse)]);
                    }
                    None => line.extend(["NA".to_string(), "NA".to_string(), "NA".to_string()]),
                }
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0).max(3))
            .collect();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths
                    .iter()
                    .enumerate()
                    .map(|(c, &w)| if c == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) })
                    .collect();
                let _ = writeln!(out, "| {} |", rule.join(" | "));
            }
        }
    }
    if let Some(f) = footer {
        let _ = write!(out, "\n{f}\n");
    }
    out
}
