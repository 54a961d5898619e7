use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn rafsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rafsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fig31(out: &Path, extra: &[&str]) -> Output {
    let topo = scenarios().join("fig31.topo.toml");
    let scen = scenarios().join("fig31.scenario.toml");
    let mut args = vec![
        "--topology",
        topo.to_str().unwrap(),
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    rafsim(&args)
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn sweep_writes_one_csv_per_strategy_and_a_comparison() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = fig31(
        &out,
        &[
            "--strategy",
            "raf",
            "--strategy",
            "all-paths",
            "--jobs",
            "2",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        listing(&out),
        ["all-paths.csv", "comparison.csv", "raf.csv"]
    );

    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().next().unwrap().starts_with("strategy"));
    assert!(stdout.lines().any(|l| l.starts_with("raf ")));
    assert!(stdout.lines().any(|l| l.starts_with("all-paths ")));

    let raf = fs::read_to_string(out.join("raf.csv")).unwrap();
    assert!(raf.starts_with("# rafsim-metrics v1\n"));
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.contains("raf,all-paths,flow_mods_sent"), "{cmp}");
}

#[test]
fn single_strategy_writes_no_comparison() {
    let tmp = TempDir::new().unwrap();
    let o = fig31(tmp.path(), &[]);
    assert!(o.status.success());
    assert_eq!(listing(tmp.path()), ["raf.csv"]);
}

#[test]
fn missing_topology_fails_before_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let scen = scenarios().join("fig31.scenario.toml");
    let o = rafsim(&[
        "--topology",
        "/nonexistent/topo.toml",
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/topo.toml"));
    assert!(!out.exists());
}

#[test]
fn invalid_scenario_fails_before_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let scen = tmp.path().join("bad.toml");
    fs::write(
        &scen,
        "name = \"bad\"\n[[flows]]\nsrc = \"hA\"\ndst = \"nobody\"\npackets = 1\ngap_ms = 1.0\n",
    )
    .unwrap();
    let topo = scenarios().join("fig31.topo.toml");
    let o = rafsim(&[
        "--topology",
        topo.to_str().unwrap(),
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nobody"));
    assert!(!out.exists());
}

#[test]
fn bad_enum_value_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    for extra in [&["--count-mode", "bogus"][..], &["--strategy", "fastest"]] {
        let o = fig31(tmp.path(), extra);
        assert_eq!(o.status.code(), Some(1), "{extra:?}");
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn help_exits_zero() {
    let o = rafsim(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("--topology"));
}

#[test]
fn identical_invocations_give_identical_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let extra = [
        "--strategy",
        "raf-distance",
        "--strategy",
        "all-paths",
        "--reliability",
        "estimated",
        "--seed",
        "5",
    ];
    let oa = fig31(&a, &extra);
    let ob = fig31(&b, &extra);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(oa.stdout, ob.stdout);
    for name in listing(&a) {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(listing(&a), listing(&b));
}

#[test]
fn unreachable_destination_is_reported_as_drops() {
    let tmp = TempDir::new().unwrap();
    let topo = tmp.path().join("split.topo.toml");
    fs::write(
        &topo,
        r#"switches = ["s1", "s2"]

[[hosts]]
id = "h1"
address = "10.0.0.1"
attach = "s1:20"

[[hosts]]
id = "h2"
address = "10.0.0.2"
attach = "s2:20"
"#,
    )
    .unwrap();
    let scen = tmp.path().join("split.scenario.toml");
    fs::write(
        &scen,
        "name = \"split\"\n[[flows]]\nsrc = \"h1\"\ndst = \"h2\"\npackets = 5\ngap_ms = 1.0\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = rafsim(&[
        "--topology",
        topo.to_str().unwrap(),
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("raf.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("injected"), "5");
    assert_eq!(col("delivered"), "0");
    assert_eq!(col("dropped"), "5");
}

#[test]
fn nothing_is_written_outside_the_output_directory() {
    let tmp = TempDir::new().unwrap();
    let work = tmp.path().join("work");
    fs::create_dir(&work).unwrap();
    let topo = work.join("t.toml");
    let scen = work.join("s.toml");
    fs::copy(scenarios().join("protection.topo.toml"), &topo).unwrap();
    fs::copy(scenarios().join("protection.scenario.toml"), &scen).unwrap();
    let out = work.join("results");

    let o = Command::new(env!("CARGO_BIN_EXE_rafsim"))
        .current_dir(&work)
        .args([
            "--topology",
            "t.toml",
            "--scenario",
            "s.toml",
            "--out",
            "results",
        ])
        .args(["--strategy", "raf", "--strategy", "all-paths"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(&work), ["results", "s.toml", "t.toml"]);
    assert_eq!(
        listing(&out),
        ["all-paths.csv", "comparison.csv", "raf.csv"]
    );
    assert_eq!(listing(tmp.path()), ["work"]);
}
