use std::path::Path;
use std::process::Command;

use groundaware_cli::commands::{cmd_eval, cmd_filter_audit, cmd_postopt, cmd_priors, cmd_stats, cmd_synth, frame_ids, STATS_FILE};
use groundaware_cli::{with_jobs, CliError, RunConfig};
use groundaware_core::FeatureMap;

fn synth_dataset(root: &Path, frames: usize) -> RunConfig {
    let mut cfg = RunConfig { out: root.to_path_buf(), synth_frames: frames, ..RunConfig::default() };
    cfg.synth.seed = 11;
    cmd_synth(&cfg).unwrap();
    RunConfig { data_root: root.to_path_buf(), split: Some(root.join("split.txt")), ..RunConfig::default() }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn stats_audit_priors_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_dataset(&dir.path().join("data"), 40);
    cfg.out = dir.path().join("out");
    cfg.min_support = 1;

    let summary = cmd_stats(&cfg).unwrap();
    assert_eq!(summary.frames, 40);
    assert!(summary.stats.shapes().iter().any(|(_, s)| s.count > 0));

    let stats = cfg.out.join(STATS_FILE);
    let filtered = cmd_filter_audit(&cfg, &stats).unwrap();
    assert!(filtered.kept < filtered.total);
    assert_eq!(filtered.per_row.iter().sum::<usize>(), filtered.kept);
    cfg.ground_tolerance = f64::INFINITY;
    let all = cmd_filter_audit(&cfg, &stats).unwrap();
    assert_eq!(all.kept, all.total);

    assert_eq!(cmd_priors(&cfg).unwrap(), 40);
    let bytes = std::fs::read(cfg.out.join("priors/000000.gafm")).unwrap();
    let map = FeatureMap::read_raster(bytes.as_slice()).unwrap();
    assert_eq!(map.shape(), (1, 18, 80));
    assert!(map.as_slice().iter().all(|d| *d >= 0.0));
}

#[test]
fn stats_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_dataset(&dir.path().join("data"), 60);
    let mut texts = Vec::new();
    for jobs in [1, 3] {
        cfg.out = dir.path().join(format!("out{jobs}"));
        cfg.jobs = Some(jobs);
        with_jobs(cfg.jobs, || cmd_stats(&cfg)).unwrap().unwrap();
        texts.push(read(&cfg.out.join(STATS_FILE)));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn self_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_dataset(&dir.path().join("data"), 20);
    cfg.out = dir.path().join("out");
    let report = cmd_eval(&cfg, &cfg.label_dir(), &cfg.label_dir()).unwrap();
    assert!(report.absent().is_empty());
    assert_eq!(report.get("Car_3D_AP40_moderate_iou0.70"), Some(1.0));
    let metrics = read(&cfg.out.join("metrics.txt"));
    assert!(metrics.contains("Car_3D_AP40_moderate_iou0.70 1.000000"));
    assert!(cfg.out.join("report.txt").is_file());
}

#[test]
fn missing_inputs_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_dataset(&dir.path().join("data"), 5);
    std::fs::remove_file(cfg.calib_dir().join("000001.txt")).unwrap();
    std::fs::remove_file(cfg.calib_dir().join("000003.txt")).unwrap();
    match cmd_stats(&cfg) {
        Err(CliError::Input(msg)) => {
            assert!(msg.contains("000001.txt") && msg.contains("000003.txt"), "{msg}");
        }
        other => panic!("expected input error, got {:?}", other.map(|s| s.frames)),
    }
}

#[test]
fn empty_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split.txt");
    std::fs::write(&split, "\n").unwrap();
    let cfg = RunConfig { split: Some(split), ..RunConfig::default() };
    assert!(matches!(frame_ids(&cfg), Err(CliError::Input(_))));
}

/// Shift alpha and rotation_y of every object line by `delta`.
fn perturb(text: &str, delta: f64) -> String {
    text.lines()
        .map(|l| {
            let mut t: Vec<String> = l.split_whitespace().map(String::from).collect();
            if t[0] != "DontCare" {
                for i in [3, 14] {
                    t[i] = (t[i].parse::<f64>().unwrap() + delta).to_string();
                }
            }
            t.join(" ") + "\n"
        })
        .collect()
}

#[test]
fn postopt_rewrites_only_angle_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_dataset(&dir.path().join("data"), 6);
    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    for id in frame_ids(&cfg).unwrap() {
        let name = format!("{id}.txt");
        let mut text = perturb(&read(&cfg.label_dir().join(&name)), 0.08);
        text.push_str("DontCare -1 -1 -10 100.00 100.00 120.00 130.00 -1 -1 -1 -1000 -1000 -1000 -10\n");
        std::fs::write(preds.join(&name), text).unwrap();
    }
    cfg.out = dir.path().join("refined");
    let summary = cmd_postopt(&cfg, &preds).unwrap();
    assert_eq!(summary.frames, 6);
    assert!(summary.mean_final_iou > summary.mean_initial_iou);

    for id in frame_ids(&cfg).unwrap() {
        let name = format!("{id}.txt");
        let before = read(&preds.join(&name));
        let after = read(&cfg.out.join(&name));
        assert_eq!(before.lines().count(), after.lines().count());
        for (b, a) in before.lines().zip(after.lines()) {
            let (bt, at): (Vec<&str>, Vec<&str>) = (b.split_whitespace().collect(), a.split_whitespace().collect());
            assert_eq!(bt.len(), at.len());
            for (i, (x, y)) in bt.iter().zip(&at).enumerate() {
                if ![3, 14].contains(&i) {
                    assert_eq!(x, y, "field {i} changed in {a}");
                }
            }
            if bt[0] == "DontCare" {
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn postopt_skips_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_dataset(&dir.path().join("data"), 3);
    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    for id in ["000000", "000001", "000002"] {
        std::fs::copy(cfg.label_dir().join(format!("{id}.txt")), preds.join(format!("{id}.txt"))).unwrap();
    }
    std::fs::write(preds.join("000001.txt"), "Car not a label\n").unwrap();
    cfg.out = dir.path().join("refined");
    let summary = cmd_postopt(&cfg, &preds).unwrap();
    assert_eq!(summary.frames, 2);
    assert_eq!(summary.skipped_frames, vec!["000001".to_string()]);
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_groundaware"));
    c.stdout(std::process::Stdio::null()).stderr(std::process::Stdio::null());
    c
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let st = bin().args(["synth", "--frames", "4", "--seed", "3", "--out"]).arg(&data).status().unwrap();
    assert!(st.success());

    let st = bin().arg("eval").arg("--data-root").arg(&data).arg("--out").arg(&out).arg("--predictions").arg(data.join("label_2")).status().unwrap();
    assert_eq!(st.code(), Some(0));

    // No pedestrians in the synthetic set: every metric is undefined.
    let st = bin()
        .args(["eval", "--classes", "Pedestrian", "--data-root"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .arg("--predictions")
        .arg(data.join("label_2"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let st = bin().arg("eval").arg("--data-root").arg(&data).arg("--predictions").arg(dir.path().join("nope")).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let st = bin().args(["stats", "--set", "stride=abc"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
}
