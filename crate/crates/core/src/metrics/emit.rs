use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::report::RunReport;
use super::sample::Sample;

pub const CSV_HEADER: [&str; 9] = [
    "window_start_s",
    "tps",
    "log_flushes_per_s",
    "log_bytes_per_s",
    "io_per_s",
    "cpu_frac",
    "p50_us",
    "p90_us",
    "p99_us",
];

pub fn write_csv<W: io::Write>(samples: &[Sample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if samples.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(report: &RunReport, path: &Path) -> csv::Result<()> {
    write_csv(&report.samples, std::fs::File::create(path)?)
}

pub fn parse_csv<R: io::Read>(input: R) -> csv::Result<Vec<Sample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(csv::Error::from(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    r.deserialize().collect()
}

/// `str(x, width, 0)` from T-SQL: rounded, right-justified, and all stars
/// when the digits do not fit.
pub fn sql_str(x: f64, width: usize) -> String {
    let r = x.round();
    let s = format!("{r:.0}");
    let s = if s == "-0" { "0".to_string() } else { s };
    if !r.is_finite() || s.len() > width {
        "*".repeat(width)
    } else {
        format!("{s:>width$}")
    }
}

/// The one-line timing summary, same labels and widths as the stored
/// procedure's `print`.
pub fn timing_line(txns: u64, cpu_s: f64, elapsed_s: f64, physical_io: u64) -> String {
    let tps = if elapsed_s > 0.0 {
        sql_str(txns as f64 / elapsed_s, 8)
    } else {
        format!("{:>8}", "n/a")
    };
    format!(
        " ran {txns} transactions  cpu: {} sec, elapsed: {} sec, physical_io: {} tps: {tps}",
        sql_str(cpu_s, 8),
        sql_str(elapsed_s, 8),
        sql_str(physical_io as f64, 8),
    )
}

pub fn emit_summary(report: &RunReport) -> String {
    let t = &report.totals;
    let mut out = timing_line(t.txns, t.cpu_s, t.elapsed_s, t.physical_io);
    out.push('\n');
    match &report.percentiles {
        Some(p) => {
            let _ = writeln!(out, " latency p50: {} us, p90: {} us, p99: {} us", p.p50_us, p.p90_us, p.p99_us);
        }
        None => out.push_str(" latency: no receipts\n"),
    }
    let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |v| format!("{v:.prec$}"));
    let _ = writeln!(
        out,
        " txns/flush: {}, bytes/txn: {}, cpu us/txn: {}",
        opt(report.txns_per_flush, 2),
        opt(report.bytes_per_txn, 1),
        opt(report.cpu_us_per_txn, 1),
    );
    let _ = writeln!(
        out,
        " aborted: {}, failed: {}, log ios: {}, data ios: {}",
        t.aborted, t.failed, t.log_ios, t.data_ios
    );
    let _ = writeln!(out, " rt_check (under 2 s): {}", opt(report.rt_check, 4));
    let s = &report.scaling;
    let _ = writeln!(
        out,
        " scaling: {:.0} tps needs {} accounts and {} terminals; configured {} accounts: {}",
        s.measured_tps,
        s.required_accounts,
        s.required_terminals,
        s.configured_accounts,
        if s.compliant { "compliant" } else { "NOT compliant" },
    );
    for c in &report.checkpoints {
        let _ = writeln!(
            out,
            " checkpoint {:.2}s..{:.2}s, {} pages{}",
            c.start_s,
            c.end_s,
            c.pages_written,
            if c.failed { ", failed" } else { "" }
        );
    }
    if !report.complete {
        out.push_str(" run INCOMPLETE\n");
    }
    for n in &report.notes {
        let _ = writeln!(out, " note: {n}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_million_in_889_seconds() {
        let line = timing_line(2_000_000, 623.0, 889.0, 41_234);
        assert_eq!(
            line,
            " ran 2000000 transactions  cpu:      623 sec, elapsed:      889 sec, physical_io:    41234 tps:     2250"
        );
    }

    #[test]
    fn zero_elapsed_is_not_a_division() {
        let line = timing_line(0, 0.0, 0.0, 0);
        assert!(line.ends_with(" tps:      n/a"), "{line}");
    }

    #[test]
    fn sql_str_rounds_and_overflows() {
        assert_eq!(sql_str(2.5, 8), "       3");
        assert_eq!(sql_str(-0.4, 8), "       0");
        assert_eq!(sql_str(123_456_789.0, 8), "********");
        assert_eq!(sql_str(12_345_678.0, 8), "12345678");
    }

    #[test]
    fn header_golden() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "window_start_s,tps,log_flushes_per_s,log_bytes_per_s,io_per_s,cpu_frac,p50_us,p90_us,p99_us\n"
        );
    }

    #[test]
    fn csv_round_trips() {
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                window_start_s: i as f64 * 10.0,
                tps: 1234.5 + i as f64,
                log_flushes_per_s: 0.1 * i as f64,
                log_bytes_per_s: 1e6 / 3.0,
                io_per_s: 7.0,
                cpu_frac: 0.7,
                p50_us: 10,
                p90_us: 20 + i,
                p99_us: 30 + i,
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&samples, &mut buf).unwrap();
        assert_eq!(parse_csv(&buf[..]).unwrap(), samples);
        let bad = b"a,b\n1,2\n";
        assert!(parse_csv(&bad[..]).is_err());
    }
}
