use std::path::Path;
use std::process::{Command, Output};

use tweedie_screen::plot::DATA_NS;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tweedie-screen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn embedded_series(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.has_tag_name((DATA_NS, "series")))
        .map(|n| {
            let pts = n
                .text()
                .unwrap_or("")
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect();
            (n.attribute("name").unwrap().to_string(), pts)
        })
        .collect()
}

#[test]
fn dist_prints_zero_mass() {
    let o = run(&["dist", "--xi", "1.5", "--mu", "1", "--phi", "1", "--x", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("0.135335"));
}

#[test]
fn bad_invocations_fail() {
    assert!(!run(&["screen"]).status.success());
    let o = run(&["dist", "--xi", "2.5", "--mu", "1", "--phi", "1", "--x", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "gene,a,b\ng1,1,-2\n").unwrap();
    let o = run(&[
        "screen",
        "--input",
        input.to_str().unwrap(),
        "--control-cols",
        "1",
        "--test-cols",
        "2",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("negative"));
}

#[test]
fn simulate_then_screen_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&[
        "simulate", "--out", sim.to_str().unwrap(), "--rows", "16", "--control", "5", "--test", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let fit = run(&["fit", "--input", sim.join("matrix.csv").to_str().unwrap(), "--cols", "1-5"]);
    assert!(fit.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!(summary["natural"].is_object() || summary["natural"].is_array());

    // the file sets digits = 2 and ngridpts = 4; the flag overrides digits
    let config = dir.path().join("screen.conf");
    std::fs::write(
        &config,
        "# small run\ncontrol_cols = 1-5\ntest_cols = 6-10\ndigits = 2\nngridpts = 4\ntargets = 20,40\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "screen",
        "--input",
        sim.join("matrix.csv").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--digits",
        "4",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = read_csv(&out.join("pgam0.csv"));
    assert_eq!(header, ["gene", "Lik_Rat_CT", "P.gam.eq.0_CT", "Lik_Rat_TC", "P.gam.eq.0_TC"]);
    assert_eq!(rows.len(), 16);
    for row in &rows {
        for cell in &row[1..] {
            let v: f64 = cell.parse().unwrap();
            assert!(v >= 0.0);
            if let Some((_, frac)) = cell.split_once('.') {
                assert!(frac.len() <= 4, "{cell}");
            }
        }
        let p: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    for pair in ["11", "12"] {
        for kind in 0..3 {
            let (header, rows) = read_csv(&out.join(format!("diffs_{pair}_{kind}.csv")));
            assert_eq!(header, ["gene", "CT_d=20", "CT_d=40", "TC_d=20", "TC_d=40"]);
            assert_eq!(rows.len(), 16);
            for row in &rows {
                for cell in &row[1..] {
                    let v: f64 = cell.parse().unwrap();
                    assert!((0.0..=1.0).contains(&v), "{cell}");
                }
            }
        }
    }

    let (header, rows) = read_csv(&out.join("pi0_curves.csv"));
    assert_eq!(header, ["grid", "density_CT", "density_TC", "cdf_CT", "cdf_TC"]);
    assert_eq!(rows.len(), 999);
    assert_eq!(rows[998][3].parse::<f64>().unwrap(), 1.0);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["digits"], "4");
    assert_eq!(manifest["config"]["ngridpts"], "4");
    assert_eq!(manifest["rows"], 16);

    let svg = std::fs::read_to_string(out.join("pi0_density.svg")).unwrap();
    let series = embedded_series(&svg);
    assert_eq!(series.len(), 2);
    for (_, pts) in &series {
        assert_eq!(pts.len(), 999);
        let riemann: f64 = pts.iter().map(|p| p.1).sum::<f64>() * 0.001;
        assert!((riemann - 1.0).abs() < 1e-6, "{riemann}");
    }
    let cdf = std::fs::read_to_string(out.join("pi0_cdf.svg")).unwrap();
    assert_eq!(embedded_series(&cdf).len(), 2);
}
