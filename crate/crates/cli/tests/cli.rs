use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
road_length_m = 600.0
survey_duration_s = 1500.0
bands = [[0.0, 0.0], [500.0, 750.0]]
replicates_per_band = 3
methods = ["uBA", "mWC"]
"#;

fn maskeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskeval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let survey = dir.path().join("survey.csv");
    let model = dir.path().join("model.json");
    let run = dir.path().join("run");
    let rep = dir.path().join("report");

    assert_ok(&maskeval(&["gen-survey", "--config", s(&cfg), "--out", s(&survey)]));
    let header = std::fs::read_to_string(&survey).unwrap();
    assert!(header.starts_with("t_s,pos_m,c0,c1,"));
    assert_eq!(header.lines().count(), 1501);

    assert_ok(&maskeval(&["learn", "--survey", s(&survey), "--out", s(&model), "--config", s(&cfg)]));
    let out = maskeval(&["run", "--config", s(&cfg), "--model", s(&model), "--out", s(&run), "--threads", "2", "--export-maps"]);
    assert_ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.starts_with("method\t0-0\t500-750"), "{table}");

    for f in ["replicates.csv", "pd_table.csv", "locerr.csv", "roc_500-750_uBA.csv", "roc_0-0_mWC.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(run.join("maps").join("map_500-750_uBA.csv").is_file());
    let replicates = std::fs::read_to_string(run.join("replicates.csv")).unwrap();
    assert_eq!(
        replicates.lines().next().unwrap(),
        "band_lo,band_hi,rep,method,score_h1,score_h0,loc_err_m,along_m,offset_m,intensity_uci"
    );
    // 2 bands x 3 replicates x 2 methods.
    assert_eq!(replicates.lines().count(), 13);

    assert_ok(&maskeval(&["report", "--in", s(&run), "--out", s(&rep)]));
    for f in ["pd_table.csv", "locerr.csv", "roc_500-750_uBA.csv"] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(rep.join(f)).unwrap(),
            "{f} differs after re-reporting"
        );
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "efficiency = 2.0\n").unwrap();
    let out = maskeval(&["gen-survey", "--config", s(&bad_cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "no_such_key = 1\n").unwrap();
    let out = maskeval(&["gen-survey", "--config", s(&unknown), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "t_s,pos_m\n1,2\n").unwrap();
    let out = maskeval(&["learn", "--survey", s(&garbage), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = maskeval(&["run", "--model", s(&dir.path().join("missing.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));

    let out = maskeval(&["report", "--in", s(dir.path()), "--out", s(dir.path()), "--fpr", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}
