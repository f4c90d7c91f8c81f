//! Plain-text benchmark files.
//!
//! ```text
//! bonlab-benchmark v1 <num_tasks>
//! task <id> weight <w> m <m>
//! reward 0 1 0
//! verifier <r_1> ... <r_m>
//! expert <e_1> ... <e_m>
//! end
//! ```
//!
//! Reals are written with 17 significant digits so a file round-trips
//! bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::bon::{Benchmark, TaskInstance};
use crate::error::{BonError, Result};
use crate::numeric::fmt17;
use crate::policies::parse_f64;

pub fn benchmark_to_string(bench: &Benchmark) -> String {
    let join = |v: &[f64]| v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(" ");
    let mut s = format!("bonlab-benchmark v1 {}\n", bench.len());
    for (task, w) in bench.tasks.iter().zip(&bench.weights) {
        let _ = writeln!(s, "task {} weight {} m {}", task.id, fmt17(*w), task.m());
        let bits: Vec<&str> = task.reward.iter().map(|&r| if r { "1" } else { "0" }).collect();
        let _ = writeln!(s, "reward {}", bits.join(" "));
        let _ = writeln!(s, "verifier {}", join(&task.verifier));
        let _ = writeln!(s, "expert {}", join(&task.expert));
        s.push_str("end\n");
    }
    s
}

fn format_err(line: usize, msg: impl Into<String>) -> BonError {
    BonError::Format { line, msg: msg.into() }
}

pub fn benchmark_from_str(text: &str) -> Result<Benchmark> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (ln, header) = lines.next().ok_or_else(|| format_err(1, "empty benchmark file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "bonlab-benchmark" || h[1] != "v1" {
        return Err(format_err(ln, format!("bad benchmark header `{header}`")));
    }
    let count: usize = h[2].parse().map_err(|e| format_err(ln, format!("`{}`: {e}", h[2])))?;

    let mut tasks = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut last = ln;
    for _ in 0..count {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| format_err(last + 1, format!("expected {count} tasks, found {}", tasks.len())))?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 6 || f[0] != "task" || f[2] != "weight" || f[4] != "m" {
            return Err(format_err(ln, format!("expected `task <id> weight <w> m <m>`, got `{l}`")));
        }
        let id: u64 = f[1].parse().map_err(|e| format_err(ln, format!("`{}`: {e}", f[1])))?;
        let weight = parse_f64(f[3], ln)?;
        let m: usize = f[5].parse().map_err(|e| format_err(ln, format!("`{}`: {e}", f[5])))?;

        let mut row = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| format_err(last + 1, format!("task {id}: missing `{key}` line")))?;
            last = ln;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(format_err(ln, format!("task {id}: expected `{key}` line, got `{l}`")));
            }
            let vals: Vec<&str> = it.collect();
            if key != "end" && vals.len() != m {
                return Err(format_err(ln, format!("task {id}: `{key}` has {} entries, m = {m}", vals.len())));
            }
            Ok((ln, vals))
        };
        let (rl, bits) = row("reward")?;
        let reward = bits
            .iter()
            .map(|b| match *b {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format_err(rl, format!("task {id}: reward bit `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let (vl, v) = row("verifier")?;
        let verifier = v.iter().map(|s| parse_f64(s, vl)).collect::<Result<Vec<f64>>>()?;
        let (el, e) = row("expert")?;
        let expert = e.iter().map(|s| parse_f64(s, el)).collect::<Result<Vec<f64>>>()?;
        let (endl, rest) = row("end")?;
        if !rest.is_empty() {
            return Err(format_err(endl, "trailing tokens after `end`"));
        }
        let task = TaskInstance::new(id, reward, verifier, expert).map_err(|e| format_err(ln, e.to_string()))?;
        tasks.push(task);
        weights.push(weight);
    }
    if let Some((ln, l)) = lines.next() {
        return Err(format_err(ln, format!("unexpected content after last task: `{l}`")));
    }
    Benchmark::new(tasks, weights).map_err(|e| format_err(last, e.to_string()))
}

pub fn write_benchmark(bench: &Benchmark, path: &Path) -> Result<()> {
    std::fs::write(path, benchmark_to_string(bench))?;
    Ok(())
}

pub fn read_benchmark(path: &Path) -> Result<Benchmark> {
    benchmark_from_str(&std::fs::read_to_string(path)?)
}

/// One JSON object per line.
pub fn to_json_lines<T: serde::Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| BonError::Numerical(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Benchmark {
        let a = TaskInstance::new(3, vec![false, true], vec![0.1, 1.0 / 3.0], vec![0.0, 1.0]).unwrap();
        let b = TaskInstance::new(9, vec![true, false, true], vec![-2.5e-7, 0.0, 7.0], vec![0.25, 0.0, 0.75]).unwrap();
        Benchmark::new(vec![a, b], vec![0.4, 0.6]).unwrap()
    }

    #[test]
    fn round_trips_bit_exactly() {
        let b = sample();
        let text = benchmark_to_string(&b);
        let back = benchmark_from_str(&text).unwrap();
        assert_eq!(back, b);
        assert_eq!(benchmark_to_string(&back), text);
    }

    #[test]
    fn errors_name_the_line() {
        let text = benchmark_to_string(&sample()).replace("reward 0 1", "reward 0 2");
        match benchmark_from_str(&text) {
            Err(BonError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = benchmark_to_string(&sample()).replace("verifier -2.4999999999999999e-7 ", "verifier ");
        let r = benchmark_from_str(&text);
        assert!(matches!(r, Err(BonError::Format { line: 9, .. })), "{r:?} {text}");
        assert!(benchmark_from_str("bonlab-benchmark v2 1\n").is_err());
    }
}
