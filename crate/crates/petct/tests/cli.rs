//! The `petct` binary end to end on small synthetic cohorts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use petct::cohort::{read_json, read_manifest, CropSidecar};
use petct::nifti::{read_nifti, write_nifti};
use petct::pipeline::EvaluationOutput;
use petct_core::eval::FoldReport;
use petct_core::volume::VolumeKind;
use petct_core::Volume3D;
use tempfile::TempDir;

fn petct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = petct(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    petct(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

struct Cohort {
    tmp: TempDir,
}

impl Cohort {
    fn new(fdg: usize, psma: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        ok(&[
            "phantom",
            "--fdg",
            &fdg.to_string(),
            "--psma",
            &psma.to_string(),
            "--seed",
            "7",
            "-o",
            s(&raw),
        ]);
        ok(&["preprocess", "-i", s(&raw), "-o", s(&tmp.path().join("pre"))]);
        Self { tmp }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.tmp.path().join(p)
    }
}

#[test]
fn phantom_writes_cohort_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["phantom", "--fdg", "5", "--psma", "5", "--seed", "7", "-o", s(&a)]);
    ok(&[
        "--jobs",
        "3",
        "phantom",
        "--fdg",
        "5",
        "--psma",
        "5",
        "--seed",
        "7",
        "-o",
        s(&b),
    ]);
    let m = read_manifest(&a).unwrap();
    assert_eq!(m.subjects.len(), 10);
    assert_eq!(
        std::fs::read_dir(&a)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .count(),
        10
    );
    assert_eq!(read_tree(&a), read_tree(&b));
    assert_eq!(
        code(&["phantom", "--fdg", "-1", "--psma", "5", "-o", s(&tmp.path().join("c"))]),
        2
    );
    assert_eq!(
        code(&[
            "phantom",
            "--fdg",
            "1",
            "--psma",
            "1",
            "--lesion-rate",
            "2",
            "-o",
            s(&tmp.path().join("c"))
        ]),
        2
    );
}

#[test]
fn preprocess_crops_clips_and_maps_back() {
    let c = Cohort::new(2, 2);
    let (raw, pre) = (c.path("raw"), c.path("pre"));
    let rm = read_manifest(&raw).unwrap();
    let pm = read_manifest(&pre).unwrap();
    for (re, pe) in rm.subjects.iter().zip(&pm.subjects) {
        let ct0 = read_nifti(&raw.join(&re.ct), VolumeKind::CtHu).unwrap();
        let ct = read_nifti(&pre.join(&pe.ct), VolumeKind::CtHu).unwrap();
        assert!((0..3).all(|a| ct.dims()[a] <= ct0.dims()[a]));
        let (lo, hi) = ct.min_max();
        assert!(lo >= -800.0 && hi <= 800.0);
        let side: CropSidecar = read_json(&pre.join(pe.crop.as_ref().unwrap())).unwrap();
        let l0 = read_nifti(&raw.join(re.label.as_ref().unwrap()), VolumeKind::Label).unwrap();
        let l = read_nifti(&pre.join(pe.label.as_ref().unwrap()), VolumeKind::Label).unwrap();
        assert_eq!(l.count_nonzero(), l0.count_nonzero());
        for i in (0..l.len()).filter(|&i| l.data()[i] == 1.0) {
            let [x, y, z] = side.to_original(l.coords(i));
            assert_eq!(l0.get(x, y, z), 1.0);
        }
    }
    // Re-running overwrites with identical bytes.
    let before = read_tree(&pre);
    ok(&["preprocess", "-i", s(&raw), "-o", s(&pre)]);
    assert_eq!(read_tree(&pre), before);
    assert_eq!(code(&["preprocess", "-i", s(&pre), "-o", s(&c.path("again"))]), 2);
}

#[test]
fn preprocess_failure_lists_subjects() {
    let c = Cohort::new(1, 1);
    let raw = c.path("raw");
    let m = read_manifest(&raw).unwrap();
    let ct = &m.subjects[1].ct;
    let air = Volume3D::filled([48, 48, 48], VolumeKind::CtHu, -1000.0).unwrap();
    write_nifti(&air, &raw.join(ct)).unwrap();
    let out = petct(&["preprocess", "-i", s(&raw), "-o", s(&c.path("bad"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("subj_0001") && !err.contains("subj_0000:"), "{err}");
}

#[test]
fn shapes_only_prints_stage_table() {
    let out = ok(&["train", "segment", "--profile", "paper_resenc", "--shapes-only"]);
    let channels: Vec<usize> = out
        .lines()
        .skip(2)
        .take(6)
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(channels, vec![32, 64, 128, 256, 320, 320]);
    assert!(out.contains("input 224x160x192"));
    let json = ok(&[
        "train",
        "segment",
        "--profile",
        "paper_segresnet",
        "--model",
        "segresnet",
        "--shapes-only",
        "--json",
    ]);
    let r: petct_core::nn::ShapeReport = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(r.head_dims.len(), 4);
    assert_eq!(r.head_dims[0], [128, 128, 96]);
}

#[test]
fn train_infer_evaluate_render() {
    let c = Cohort::new(10, 10);
    let (raw, pre, work) = (c.path("raw"), c.path("pre"), c.path("work"));
    let summary = ok(&[
        "--jobs",
        "2",
        "train",
        "segment",
        "-i",
        s(&pre),
        "--work-dir",
        s(&work),
        "--epochs",
        "1",
        "--iters",
        "1",
        "--no-wall-time",
    ]);
    assert_eq!(summary.lines().count(), 5);
    for k in 0..5 {
        assert!(work.join(format!("segment/fold{k}/best.ckpt")).exists());
        assert_eq!(
            std::fs::read_to_string(work.join(format!("segment/fold{k}/log.jsonl")))
                .unwrap()
                .lines()
                .count(),
            1
        );
    }

    let ckpt = work.join("segment/fold0/best.ckpt");
    let pred = c.path("pred");
    ok(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "-i",
        s(&raw),
        "-o",
        s(&pred),
        "--id",
        "subj_0003",
    ]);
    let mask = read_nifti(&pred.join("subj_0003.nii.gz"), VolumeKind::Label).unwrap();
    assert_eq!(mask.dims(), [48, 48, 48]);

    // Self-evaluation and id mismatch.
    assert_eq!(code(&["evaluate", "--pred", s(&pred), "--truth", s(&raw)]), 6);
    let truth_masks = c.path("truth_masks");
    std::fs::create_dir(&truth_masks).unwrap();
    for e in read_manifest(&raw).unwrap().subjects {
        std::fs::copy(raw.join(e.label.unwrap()), truth_masks.join(format!("{}.nii.gz", e.id))).unwrap();
    }
    let rep = c.path("rep");
    let folds = work.join("folds.json");
    let text = ok(&[
        "evaluate",
        "--pred",
        s(&truth_masks),
        "--truth",
        s(&raw),
        "--folds",
        s(&folds),
        "--output",
        s(&rep),
    ]);
    let out: EvaluationOutput = read_json(&rep.join("report.json")).unwrap();
    assert!(out.scores.iter().all(|x| x.2 == 1.0));
    assert_eq!(out.report.per_fold.len(), 5);
    assert_eq!(text, out.report.to_table());
    assert_eq!(std::fs::read_to_string(rep.join("report.txt")).unwrap(), text);
    let back: FoldReport = serde_json::from_value(serde_json::to_value(&out.report).unwrap()).unwrap();
    assert_eq!(back.to_table(), text);

    let ppm = c.path("s.ppm");
    ok(&[
        "render",
        "-i",
        s(&raw),
        "--id",
        "subj_0003",
        "--mask",
        s(&pred.join("subj_0003.nii.gz")),
        "--slice",
        "20",
        "-o",
        s(&ppm),
    ]);
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6\n48 48\n255\n"));
    assert_eq!(
        code(&[
            "render",
            "-i",
            s(&raw),
            "--id",
            "subj_0003",
            "--slice",
            "48",
            "-o",
            s(&ppm)
        ]),
        7
    );

    // A classifier checkpoint cannot drive segmentation.
    ok(&[
        "train",
        "classify",
        "-i",
        s(&pre),
        "--work-dir",
        s(&work),
        "--fold",
        "1",
        "--epochs",
        "1",
        "--iters",
        "1",
    ]);
    let cls = work.join("classify/fold1/best.ckpt");
    assert_eq!(
        code(&["infer", "--checkpoint", s(&cls), "-i", s(&raw), "-o", s(&pred)]),
        5
    );

    // Runaway learning rate.
    let out = petct(&[
        "train",
        "segment",
        "-i",
        s(&pre),
        "--work-dir",
        s(&c.path("w2")),
        "--fold",
        "0",
        "--lr",
        "1e6",
        "--epochs",
        "2",
        "--iters",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let log = std::fs::read_to_string(c.path("w2/segment/fold0/log.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().starts_with("{\"divergence\""));
}

#[test]
fn hand_built_masks_give_hand_computed_table() {
    let c = Cohort::new(1, 1);
    let raw = c.path("raw");
    let m = read_manifest(&raw).unwrap();
    let pred = c.path("pred");
    std::fs::create_dir(&pred).unwrap();
    // Subject 0: prediction equals truth. Subject 1: empty prediction.
    let l0 = read_nifti(&raw.join(m.subjects[0].label.as_ref().unwrap()), VolumeKind::Label).unwrap();
    write_nifti(&l0, &pred.join("subj_0000.nii.gz")).unwrap();
    let empty = Volume3D::filled([48, 48, 48], VolumeKind::Label, 0.0).unwrap();
    write_nifti(&empty, &pred.join("subj_0001.nii")).unwrap();
    let text = ok(&["evaluate", "--pred", s(&pred), "--truth", s(&raw), "--name", "hand"]);
    assert_eq!(text, "Model | Fold0       | Mean\nhand  | 0.500±0.500 | 0.500\n");
}
