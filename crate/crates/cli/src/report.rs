//! Plain-text tables for standard output and CSV for sweeps.

use std::fmt::Write;

use gas_storage::analysis::{AnalysisReport, MONTH_NAMES};
use gas_storage::harness::{MetricSummary, MetricsReport, SweepPoint};
use gas_storage::{Error, Result};

fn row(out: &mut String, name: &str, m: &MetricSummary) {
    let _ = writeln!(
        out,
        "  {name:<22} {:>14.4} {:>12.4} {:>12.4} {:>6}",
        m.mean, m.std_err, m.ci95, m.n
    );
}

pub fn metrics_table(r: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "  {:<22} {:>14} {:>12} {:>12} {:>6}",
        "metric", "mean", "std err", "95% ci ±", "n"
    );
    row(&mut out, "episode reward", &r.reward);
    row(&mut out, "terminal bank", &r.terminal_bank);
    row(&mut out, "sq. log-price change", &r.volatility);
    row(&mut out, "market success", &r.market_success);
    if let Some(m) = &r.refill_inventory {
        row(&mut out, "refill inventory", m);
    }
    row(&mut out, "mean price", &r.price_level);
    out
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "  {:>7}  {:>17} {:>17}  {:>19} {:>19}",
        "sigma_s", "success base", "success reg", "bank base", "bank reg"
    );
    for p in points {
        let _ = writeln!(
            out,
            "  {:>7.4}  {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}  {:>9.3} ± {:<7.3} {:>9.3} ± {:<7.3}",
            p.sigma_s,
            p.baseline.market_success.mean,
            p.baseline.market_success.ci95,
            p.regulated.market_success.mean,
            p.regulated.market_success.ci95,
            p.baseline.terminal_bank.mean,
            p.baseline.terminal_bank.ci95,
            p.regulated.terminal_bank.mean,
            p.regulated.terminal_bank.ci95,
        );
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let metrics = ["reward", "terminal_bank", "volatility", "market_success", "price_level"];
    let mut header = vec!["sigma_s".to_string()];
    for policy in ["baseline", "regulated"] {
        for m in metrics {
            header.push(format!("{policy}_{m}_mean"));
            header.push(format!("{policy}_{m}_ci95"));
        }
    }
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for p in points {
        let mut rec = vec![p.sigma_s.to_string()];
        for r in [&p.baseline, &p.regulated] {
            for m in [r.reward, r.terminal_bank, r.volatility, r.market_success, r.price_level] {
                rec.push(m.mean.to_string());
                rec.push(m.ci95.to_string());
            }
        }
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn analysis_table(r: &AnalysisReport) -> String {
    let mut out = String::new();
    let mut cols = vec![&r.simulated];
    cols.extend(r.averaged.iter());
    cols.extend(r.external.iter());
    let _ = write!(out, "  {:<10}", "month");
    for c in &cols {
        let _ = write!(out, " {:>14}", truncate(&c.label, 14));
    }
    out.push('\n');
    for (m, name) in MONTH_NAMES.iter().enumerate() {
        let _ = write!(out, "  {name:<10}");
        for c in &cols {
            let _ = write!(out, " {:>14.5}", c.seasonality.coefficients[m]);
        }
        out.push('\n');
    }
    let _ = write!(out, "  {:<10}", "std dev");
    for c in &cols {
        let _ = write!(out, " {:>14.5}", c.volatility_std);
    }
    out.push('\n');
    let _ = write!(out, "  {:<10}", "peak");
    for c in &cols {
        let _ = write!(out, " {:>14}", MONTH_NAMES[c.peak_month as usize - 1]);
    }
    out.push('\n');
    let _ = writeln!(out, "  runs: {}", r.simulated_runs);
    out
}

fn truncate(s: &str, n: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() <= n {
        s.to_string()
    } else {
        chars[chars.len() - n..].iter().collect()
    }
}
