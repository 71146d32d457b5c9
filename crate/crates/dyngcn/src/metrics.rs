//! Line-oriented metrics log.
//!
//! ```text
//! # dyngcn metrics v1
//! epoch	train_loss	train_acc	eval_top1	eval_top5	lr
//! 1	1.2345	0.41	0.38	1	0.1
//! ```
//!
//! Values use the shortest representation that reads back exactly; `-` marks
//! a missing evaluation. Wall-clock times go to a separate timing file so the
//! metrics of two runs with the same seed are byte-identical.

use std::fs;
use std::path::Path;

use dyngcn_core::train::EpochRecord;

use crate::error::{Error, Result};

pub const HEADER: &str = "# dyngcn metrics v1";
pub const COLUMNS: &str = "epoch\ttrain_loss\ttrain_acc\teval_top1\teval_top5\tlr";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn format_line(r: &EpochRecord) -> String {
    format!("{}\t{}\t{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.train_acc, opt(r.eval_top1), opt(r.eval_top5), r.lr)
}

pub fn format_log(records: &[EpochRecord]) -> String {
    let mut s = format!("{HEADER}\n{COLUMNS}\n");
    for r in records {
        s.push_str(&format_line(r));
        s.push('\n');
    }
    s
}

pub fn parse_log(text: &str, path: &Path) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    let err = |i: usize, m: String| Error::parse(path, format!("line {}", i + 1), m);
    match (lines.next(), lines.next()) {
        (Some((_, HEADER)), Some((_, COLUMNS))) => {}
        _ => return Err(err(0, "missing metrics header".into())),
    }
    let mut out: Vec<EpochRecord> = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(i, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i, format!("'{s}' is not a number")));
        let opt = |s: &str| if s == "-" { Ok(None) } else { num(s).map(Some) };
        let epoch = f[0].parse::<usize>().map_err(|_| err(i, format!("bad epoch '{}'", f[0])))?;
        if out.last().is_some_and(|r| r.epoch >= epoch) {
            return Err(err(i, format!("epoch {epoch} does not increase")));
        }
        out.push(EpochRecord {
            epoch,
            train_loss: num(f[1])?,
            train_acc: num(f[2])?,
            eval_top1: opt(f[3])?,
            eval_top5: opt(f[4])?,
            lr: num(f[5])?,
        });
    }
    Ok(out)
}

pub fn load_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text, path)
}
