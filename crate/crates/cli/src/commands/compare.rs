use std::path::PathBuf;

use clap::Args;
use lunggan_core::training::{read_run_fids, select_best_model, welch_t_test, RunFids, WelchResult};
use lunggan_core::{Error, Result};
use serde::Serialize;

use super::{prepare, write_json};
use crate::settings::Settings;
use crate::Common;

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run directories of configuration A (each holding `metrics.csv`).
    #[arg(long = "a", value_delimiter = ',')]
    pub a: Vec<String>,
    #[arg(long = "b", value_delimiter = ',')]
    pub b: Vec<String>,
}

#[derive(Serialize)]
struct Group {
    runs: Vec<String>,
    minima: Vec<f64>,
}

#[derive(Serialize)]
struct BestJson {
    group: &'static str,
    run: String,
    epoch: usize,
    fid: f64,
    checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct Comparison {
    a: Group,
    b: Group,
    welch: WelchResult,
    /// Best (run, epoch) across both groups; absent when only minima were given.
    best: Option<BestJson>,
}

/// Per-run minima: given directly as `<key>_minima`, else read from the run
/// directories listed in `<key>`.
fn group(s: &Settings, key: &str) -> Result<(Group, Vec<RunFids>)> {
    let minima_key = format!("{key}_minima");
    let direct = s.list(&minima_key);
    if !direct.is_empty() {
        let minima = direct
            .iter()
            .map(|v| v.parse().map_err(|_| Error::config(minima_key.clone(), format!("not a number: {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        return Ok((Group { runs: Vec::new(), minima }, Vec::new()));
    }
    let dirs = s.list(key);
    if dirs.is_empty() {
        return Err(Error::config(key, "list at least two run directories (or set the minima)"));
    }
    let runs = dirs
        .iter()
        .map(|d| read_run_fids(&PathBuf::from(d)))
        .collect::<Result<Vec<_>>>()?;
    let minima = select_best_model(&runs)?.per_run_minima;
    Ok((Group { runs: dirs, minima }, runs))
}

pub fn run(a: CompareArgs) -> Result<()> {
    let mut flags = Vec::new();
    if !a.a.is_empty() {
        flags.push(("compare.a".to_string(), a.a.join(",")));
    }
    if !a.b.is_empty() {
        flags.push(("compare.b".to_string(), a.b.join(",")));
    }
    let ctx = prepare(
        "compare-runs",
        &a.common,
        &[("compare.a", ""), ("compare.b", ""), ("compare.a_minima", ""), ("compare.b_minima", "")],
        flags,
    )?;
    let s = &ctx.settings;
    let (ga, ra) = group(s, "compare.a")?;
    let (gb, rb) = group(s, "compare.b")?;
    let welch = welch_t_test(&ga.minima, &gb.minima)?;
    let best = if ra.is_empty() || rb.is_empty() {
        None
    } else {
        let all: Vec<RunFids> = ra.iter().chain(&rb).cloned().collect();
        let b = select_best_model(&all)?;
        let (group, run) = if b.run < ra.len() {
            ("a", ga.runs[b.run].clone())
        } else {
            ("b", gb.runs[b.run - ra.len()].clone())
        };
        Some(BestJson {
            group,
            run,
            epoch: b.epoch,
            fid: b.fid,
            checkpoint: b.checkpoint,
        })
    };
    println!("Welch t = {:.4}, df = {:.2}, p = {:.3e}", welch.t, welch.df, welch.p);
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let json = ctx.out.join("comparison.json");
    write_json(&json, &Comparison { a: ga, b: gb, welch, best })?;
    ctx.finish(&[json])
}
