//! CSV emission: RFC-4180-style rows, header mandatory, floats printed with
//! 17 significant digits so reruns are byte-stable.

use std::fmt::Write as _;

pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v:.16e}")
    }
}

pub fn fmt_opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn fmt_opt_int(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A CSV table with a fixed header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln_row(&mut out, &self.header);
        for row in &self.rows {
            writeln_row(&mut out, row);
        }
        out
    }
}

fn writeln_row(out: &mut String, fields: &[String]) {
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if field.contains(',') || field.contains('"') || field.contains('\n') {
            let escaped = field.replace('"', "\"\"");
            let _ = write!(out, "\"{escaped}\"");
        } else {
            out.push_str(field);
        }
    }
    out.push_str("\r\n");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_fixed_width() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(-0.5), "-5.0000000000000000e-1");
        assert_eq!(fmt_float(f64::NAN), "nan");
    }

    #[test]
    fn quoting_rule() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "plain".into()]);
        assert_eq!(t.to_csv(), "a,b\r\n\"x,y\",plain\r\n");
    }
}
