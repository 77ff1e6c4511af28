//! End-to-end screening run: subsample, screen both directions, compute
//! survival tables and write every output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::ScreenConfig;
use crate::error::{Error, Result};
use crate::io::{ensure_dir, fmt_full, load_matrix, subsample, write_table, write_text, ExpressionMatrix};
use crate::metrics::{build_survival_table, SurvivalTable};
use crate::mlfit::FitSummary;
use crate::plot::{write_plot, Series};
use crate::screen::{both_directions, worker_count, worker_pool, BothDirections, DirectionResult};

/// Suffix for the direction that screens test against control.
pub const FORWARD: &str = "CT";
/// Suffix for the direction with the roles swapped.
pub const REVERSE: &str = "TC";

pub const PGAM0_FILE: &str = "pgam0.csv";
pub const PI0_FILE: &str = "pi0_curves.csv";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const DENSITY_PLOT: &str = "pi0_density.svg";
pub const CDF_PLOT: &str = "pi0_cdf.svg";

#[derive(Debug, Clone)]
pub struct ScreenRun {
    pub row_ids: Vec<String>,
    pub both: BothDirections,
    pub forward_table: SurvivalTable,
    pub reverse_table: SurvivalTable,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Screen two matrices that share row ids, in both directions.
pub fn screen_matrices(control: &ExpressionMatrix, test: &ExpressionMatrix, cfg: &ScreenConfig) -> Result<ScreenRun> {
    if control.row_ids != test.row_ids {
        return Err(Error::domain("control and test matrices must share row ids"));
    }
    let opts = cfg.options();
    opts.validate()?;
    let rule = opts.unit_rule()?;
    let mut timings = BTreeMap::new();
    let pool = worker_pool(cfg.threads)?;
    let (both, forward_table, reverse_table) = pool.install(|| -> Result<_> {
        let t = Instant::now();
        let both = both_directions(control.values.view(), test.values.view(), &rule, &opts)?;
        timings.insert("screen".to_string(), t.elapsed().as_secs_f64());
        let t = Instant::now();
        let table = |d: &DirectionResult| build_survival_table(d, cfg.shift, &cfg.targets, cfg.metrics_mode);
        let (f, r) = rayon::join(|| table(&both.forward), || table(&both.reverse));
        timings.insert("metrics".to_string(), t.elapsed().as_secs_f64());
        Ok((both, f?, r?))
    })?;
    Ok(ScreenRun {
        row_ids: control.row_ids.clone(),
        both,
        forward_table,
        reverse_table,
        timings,
    })
}

/// Names of the six survival files, in write order.
pub fn diff_files() -> Vec<String> {
    let mut v = Vec::new();
    for pair in ["11", "12"] {
        for kind in 0..3 {
            v.push(format!("diffs_{pair}_{kind}.csv"));
        }
    }
    v
}

/// Write the result tables; returns the paths written.
pub fn write_results(run: &ScreenRun, cfg: &ScreenConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let out = ensure_dir(out_dir)?;
    let mut written = Vec::new();
    let fwd = &run.both.forward;
    let rev = &run.both.reverse;

    let path = out.join(PGAM0_FILE);
    let header: Vec<String> = ["gene", "Lik_Rat_CT", "P.gam.eq.0_CT", "Lik_Rat_TC", "P.gam.eq.0_TC"]
        .map(String::from)
        .to_vec();
    write_table(
        &path,
        &header,
        &run.row_ids,
        &[fwd.bayes_factors(), fwd.p_same.clone(), rev.bayes_factors(), rev.p_same.clone()],
        Some(cfg.digits),
    )?;
    written.push(path);

    let path = out.join(PI0_FILE);
    let grid_ids: Vec<String> = fwd.pi0.grid.iter().map(|g| fmt_full(*g)).collect();
    let header: Vec<String> = ["grid", "density_CT", "density_TC", "cdf_CT", "cdf_TC"]
        .map(String::from)
        .to_vec();
    write_table(
        &path,
        &header,
        &grid_ids,
        &[
            fwd.pi0.density.clone(),
            rev.pi0.density.clone(),
            fwd.pi0.cdf.clone(),
            rev.pi0.cdf.clone(),
        ],
        None,
    )?;
    written.push(path);

    let files = diff_files();
    let mut file = files.iter();
    for different in [false, true] {
        for kind in 0..3 {
            let path = out.join(file.next().expect("six survival files"));
            let mut header = vec!["gene".to_string()];
            let mut columns = Vec::new();
            for (suffix, table) in [(FORWARD, &run.forward_table), (REVERSE, &run.reverse_table)] {
                let rows = if different { &table.different } else { &table.same };
                for (j, d) in table.targets.iter().enumerate() {
                    header.push(format!("{suffix}_d={d}"));
                    columns.push(rows.iter().map(|r| r.kind(kind)[j]).collect());
                }
            }
            write_table(&path, &header, &run.row_ids, &columns, Some(cfg.digits))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Density and cdf overlays of the two null-proportion posteriors.
pub fn emit_plots(run: &ScreenRun, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let out = ensure_dir(out_dir)?;
    let fwd = &run.both.forward.pi0;
    let rev = &run.both.reverse.pi0;
    let density = out.join(DENSITY_PLOT);
    write_plot(
        &density,
        "Posterior density of the null proportion",
        "π₀",
        "f(π₀)",
        &[
            Series { name: FORWARD, x: &fwd.grid, y: &fwd.density, dashed: false },
            Series { name: REVERSE, x: &rev.grid, y: &rev.density, dashed: true },
        ],
    )?;
    let cdf = out.join(CDF_PLOT);
    write_plot(
        &cdf,
        "Posterior cdf of the null proportion",
        "π₀",
        "F(π₀)",
        &[
            Series { name: FORWARD, x: &fwd.grid, y: &fwd.cdf, dashed: false },
            Series { name: REVERSE, x: &rev.grid, y: &rev.cdf, dashed: true },
        ],
    )?;
    Ok(vec![density, cdf])
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub input: Option<String>,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub threads: usize,
    pub rows: usize,
    pub control_columns: Vec<String>,
    pub test_columns: Vec<String>,
    pub fit: BTreeMap<String, FitSummary>,
    pub pi0_mean: BTreeMap<String, f64>,
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

pub fn write_manifest(
    run: &ScreenRun,
    cfg: &ScreenConfig,
    input: Option<&Path>,
    control: &ExpressionMatrix,
    test: &ExpressionMatrix,
    files: &[PathBuf],
    out_dir: &Path,
) -> Result<PathBuf> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        input: input.map(|p| p.display().to_string()),
        seed: cfg.seed,
        config: cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        threads: worker_count(cfg.threads),
        rows: run.row_ids.len(),
        control_columns: control.col_ids.clone(),
        test_columns: test.col_ids.clone(),
        fit: [
            (FORWARD.to_string(), run.both.forward.fit.summary()),
            (REVERSE.to_string(), run.both.reverse.fit.summary()),
        ]
        .into(),
        pi0_mean: [
            (FORWARD.to_string(), run.both.forward.pi0.mean),
            (REVERSE.to_string(), run.both.reverse.pi0.mean),
        ]
        .into(),
        timings: run.timings.clone(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = ensure_dir(out_dir)?.join(MANIFEST_FILE);
    write_text(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(path)
}

/// Screen already-split matrices and write the full output set.
pub fn run_on_matrices(
    control: &ExpressionMatrix,
    test: &ExpressionMatrix,
    cfg: &ScreenConfig,
    input: Option<&Path>,
    out_dir: &Path,
) -> Result<ScreenRun> {
    run_and_write(control, test, cfg, input, out_dir, BTreeMap::new())
}

fn run_and_write(
    control: &ExpressionMatrix,
    test: &ExpressionMatrix,
    cfg: &ScreenConfig,
    input: Option<&Path>,
    out_dir: &Path,
    earlier: BTreeMap<String, f64>,
) -> Result<ScreenRun> {
    let mut run = screen_matrices(control, test, cfg)?;
    run.timings.extend(earlier);
    let t = Instant::now();
    let mut files = write_results(&run, cfg, out_dir)?;
    files.extend(emit_plots(&run, out_dir)?);
    run.timings.insert("write".to_string(), t.elapsed().as_secs_f64());
    write_manifest(&run, cfg, input, control, test, &files, out_dir)?;
    Ok(run)
}

/// Load, subsample, screen and write.
pub fn run_screen(input: &Path, cfg: &ScreenConfig, out_dir: &Path) -> Result<ScreenRun> {
    cfg.validate()?;
    let t = Instant::now();
    let matrix = load_matrix(input)?;
    log::info!("loaded {} with {} rows and {} columns", input.display(), matrix.dim().0, matrix.dim().1);
    let (control, test) = subsample(&matrix, cfg)?;
    let earlier = BTreeMap::from([("load".to_string(), t.elapsed().as_secs_f64())]);
    log::info!(
        "screening {} rows with {} control and {} test columns",
        control.dim().0,
        control.dim().1,
        test.dim().1
    );
    run_and_write(&control, &test, cfg, Some(input), out_dir, earlier)
}
