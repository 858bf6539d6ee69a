use std::fmt::Write;

pub const CSV_HEADER: &str = "epoch,split,loss,oa,acc,miou,lr";

/// One line of the metrics CSV. Metrics that do not apply stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub oa: Option<f64>,
    pub acc: Option<f64>,
    pub miou: Option<f64>,
    pub lr: f64,
}

/// Formats like C's `%.9g`: nine significant digits, trailing zeros
/// removed, exponent form outside `[1e-4, 1e9)`.
pub fn format_g9(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        trim(&format!("{v:.prec$}", prec = (8 - exp) as usize))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_g9).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            format_g9(self.loss),
            opt(self.oa),
            opt(self.acc),
            opt(self.miou),
            format_g9(self.lr)
        )
    }
}

pub(crate) fn render(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.to_csv_line()).expect("writing to a String");
    }
    s
}
