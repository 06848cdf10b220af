//! Acceptance run. Prints one PASS or FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubelet_core::geometry::{iou_3d, spatial_iou, temporal_iou, Cuboid};
use tubelet_core::ingest::{ClassId, GroundTruthAction, VideoMeta};
use tubelet_core::jitter::{jitter_proposals, JitterParams};
use tubelet_core::labeling::{designate, regression_target, Designation, LabelThresholds};
use tubelet_core::nms::{nms_3d, NmsParams, ScoredDetection};
use tubelet_core::pipeline::{self, aggregate_pmiss, RecallSummary};
use tubelet_core::proposal::{write_proposals, Proposal, Provenance};
use tubelet_core::refine::{apply_refinement, cross_entropy, full_loss, smooth_l1, temporal_frame, LossParams};
use tubelet_core::scoring::{hungarian_match, MatchParams};
use tubelet_core::synth::{Scenario, SynthParams};
use tubelet_core::PipelineConfig;

const FIXTURE_SEED: u64 = 1;

fn within(limit: Duration, start: Instant) {
    let took = start.elapsed();
    assert!(took < limit, "took {took:?}, limit {limit:?}");
}

fn random_cuboid(rng: &mut ChaCha8Rng, extent: f64, frames: i64) -> Cuboid {
    let x = rng.random_range(0.0..extent);
    let y = rng.random_range(0.0..extent);
    let w = rng.random_range(0.5..extent / 2.0);
    let h = rng.random_range(0.5..extent / 2.0);
    let f = rng.random_range(0..frames);
    let len = rng.random_range(0..frames);
    Cuboid::new(x, y, x + w, y + h, f, f + len).unwrap()
}

fn geometry() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    type Op = fn(&Cuboid, &Cuboid) -> f64;
    let ops: [(&str, Op); 3] = [("spatial", spatial_iou), ("temporal", temporal_iou), ("3d", iou_3d)];
    for _ in 0..200 {
        let a = random_cuboid(&mut rng, 50.0, 40);
        let b = random_cuboid(&mut rng, 50.0, 40);
        for (name, op) in ops {
            let ab = op(&a, &b);
            assert_eq!(ab, op(&b, &a), "{name} iou not symmetric for {a} {b}");
            assert!((0.0..=1.0).contains(&ab), "{name} iou {ab} out of range");
            assert_eq!(op(&a, &a), 1.0, "{name} iou of {a} with itself");
        }
    }
    for _ in 0..50 {
        let a = random_cuboid(&mut rng, 10.0, 12);
        let b = random_cuboid(&mut rng, 10.0, 12);
        let exact = iou_3d(&a, &b);
        let voxels = support::voxel_iou(&a, &b, 4);
        assert!((exact - voxels).abs() <= 0.02, "{a} {b}: {exact} vs voxel {voxels}");
    }
    within(Duration::from_secs(5), start);
}

fn refinement_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut exact = 0;
    for _ in 0..1000 {
        let p0 = rng.random_range(0..5000);
        let p = Cuboid::new(0.0, 0.0, 10.0, 10.0, p0, p0 + rng.random_range(0..400)).unwrap();
        let g0 = rng.random_range(0..5000);
        let g = Cuboid::new(0.0, 0.0, 10.0, 10.0, g0, g0 + rng.random_range(1..400)).unwrap();
        let r = regression_target(&p, &g);
        let (f_a, t) = temporal_frame(&p);
        assert!((f_a + r.0 * t - g.f_start() as f64).abs() <= 0.5);
        assert!((f_a + r.1 * t - g.f_end() as f64).abs() <= 0.5);
        let refined = apply_refinement(&p, r);
        if !refined.fell_back && (refined.cuboid.f_start(), refined.cuboid.f_end()) == (g.f_start(), g.f_end()) {
            exact += 1;
        }
    }
    assert!(exact >= 990, "only {exact}/1000 recovered exactly");
}

fn loss_oracle() {
    for (x, want) in [(0.0, 0.0), (0.5, 0.125), (1.0, 0.5), (2.0, 1.5)] {
        assert_eq!(smooth_l1(x), want, "smooth_l1({x})");
        assert_eq!(smooth_l1(-x), want, "smooth_l1(-{x})");
    }
    let h = 1e-6;
    for x in [1.0f64, -1.0] {
        let left = (smooth_l1(x) - smooth_l1(x - h)) / h;
        let right = (smooth_l1(x + h) - smooth_l1(x)) / h;
        assert!((left - right).abs() < 1e-4, "derivative jumps at {x}: {left} vs {right}");
        assert!((left - x.signum()).abs() < 1e-4);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let params = LossParams::default();
    for _ in 0..200 {
        let raw: Vec<f64> = (0..13).map(|_| rng.random_range(0.001..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let v = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let target = Some((rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
        let ce = cross_entropy(&probs, ClassId(0)).unwrap();
        for t in [None, target] {
            let loss = full_loss(&probs, ClassId(0), v, t, &params).unwrap();
            assert_eq!(loss.to_bits(), ce.to_bits());
        }
    }
}

fn jitter_enumeration() {
    let video = VideoMeta {
        video_id: "v".into(),
        num_frames: 10_000,
        frame_rate: 30.0,
        width: 640.0,
        height: 480.0,
    };
    let parent = Proposal {
        id: "v-c00000".into(),
        video_id: "v".into(),
        parent_id: None,
        provenance: Provenance::Clustering,
        cuboid: Cuboid::new(10.0, 20.0, 30.0, 60.0, 0, 30).unwrap(),
    };
    let params = JitterParams::default();
    assert_eq!(params.stride, 15);
    let out = jitter_proposals(std::slice::from_ref(&parent), &params, &video).unwrap();

    #[rustfmt::skip]
    let expected: [(&str, i64, i64); 13] = [
        ("v-c00000", 0, 30),
        ("v-c00000-a0-w16", 0, 16), ("v-c00000-a0-w32", 0, 32),
        ("v-c00000-a0-w64", 0, 64), ("v-c00000-a0-w128", 0, 128),
        ("v-c00000-a15-w16", 0, 31), ("v-c00000-a15-w32", 0, 47),
        ("v-c00000-a15-w64", 0, 79), ("v-c00000-a15-w128", 0, 143),
        ("v-c00000-a30-w16", 14, 46), ("v-c00000-a30-w32", 0, 62),
        ("v-c00000-a30-w64", 0, 94), ("v-c00000-a30-w128", 0, 158),
    ];
    let got: Vec<(&str, i64, i64)> = out
        .iter()
        .map(|p| (p.id.as_str(), p.cuboid.f_start(), p.cuboid.f_end()))
        .collect();
    assert_eq!(got, expected);
    for p in &out[1..] {
        assert_eq!(p.provenance, Provenance::Jittering);
        assert_eq!(p.parent_id.as_deref(), Some("v-c00000"));
        assert_eq!(
            (p.cuboid.x_min(), p.cuboid.y_min(), p.cuboid.x_max(), p.cuboid.y_max()),
            (10.0, 20.0, 30.0, 60.0)
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let again = jitter_proposals(std::slice::from_ref(&parent), &params, &video).unwrap();
        let path = dir.path().join(format!("run{run}.jsonl"));
        write_proposals(&path, &again).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

fn labeling_matrix() {
    let th = LabelThresholds::default();
    // GT covers x in [0, 100] and frames [0, 999]; the proposal is nested in
    // it, so its spatial IoU is width / 100 and its temporal IoU is
    // frames / 1000.
    let gt = GroundTruthAction {
        video_id: "v".into(),
        class: ClassId(5),
        cuboid: Cuboid::new(0.0, 0.0, 100.0, 100.0, 0, 999).unwrap(),
    };
    use Designation::*;
    let cases = [
        (0.3, 0.005, EasyNegative),
        (0.3, 0.1, EasyNegative),
        (0.3, 0.3, Discarded),
        (0.3, 0.6, Discarded),
        (0.4, 0.005, EasyNegative),
        (0.4, 0.1, HardNegative),
        (0.4, 0.3, Discarded),
        (0.4, 0.6, Positive(ClassId(5))),
    ];
    for (s, t, want) in cases {
        let frames = (t * 1000.0f64).round() as i64;
        let p = Proposal {
            id: "p".into(),
            video_id: "v".into(),
            parent_id: None,
            provenance: Provenance::Clustering,
            cuboid: Cuboid::new(0.0, 0.0, s * 100.0, 100.0, 0, frames - 1).unwrap(),
        };
        assert!((spatial_iou(&p.cuboid, &gt.cuboid) - s).abs() < 1e-12);
        assert!((temporal_iou(&p.cuboid, &gt.cuboid) - t).abs() < 1e-12);
        let got = designate(&p, std::slice::from_ref(&gt), &th);
        assert_eq!(got.designation, want, "spatial {s}, temporal {t}");
        assert_eq!(got.regression_target.is_some(), matches!(want, Positive(_)));
    }
}

fn random_detection(rng: &mut ChaCha8Rng, i: usize) -> ScoredDetection {
    ScoredDetection {
        video_id: ["v0", "v1"][rng.random_range(0..2)].to_string(),
        proposal_id: format!("p{i:02}"),
        action_class: ClassId(rng.random_range(1..=2)),
        confidence: rng.random_range(1..=5) as f64 / 5.0,
        cuboid: random_cuboid(rng, 8.0, 20),
        refinement_fell_back: false,
    }
}

fn nms() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let params = NmsParams::default();
    let mut suppressed = 0;
    for _ in 0..500 {
        let n = rng.random_range(0..=8);
        let dets: Vec<ScoredDetection> = (0..n).map(|i| random_detection(&mut rng, i)).collect();
        let kept = nms_3d(&dets, &params);
        let mut got: Vec<&str> = kept.iter().map(|d| d.proposal_id.as_str()).collect();
        got.sort_unstable();
        let want: Vec<&str> = support::brute_nms(&dets, &params)
            .into_iter()
            .map(|i| dets[i].proposal_id.as_str())
            .collect();
        assert_eq!(got, want);
        assert_eq!(nms_3d(&kept, &params), kept, "not idempotent");
        suppressed += n - kept.len();
    }
    assert!(suppressed > 0);

    let base = random_detection(&mut rng, 0);
    let twin = |id: &str, class: usize, video: &str| ScoredDetection {
        proposal_id: id.into(),
        action_class: ClassId(class),
        video_id: video.into(),
        ..base.clone()
    };
    let dets = vec![twin("a", 1, "v"), twin("b", 2, "v"), twin("c", 1, "w"), twin("d", 1, "v")];
    let kept: Vec<String> = nms_3d(&dets, &params).into_iter().map(|d| d.proposal_id).collect();
    assert_eq!(kept, vec!["a", "b", "c"]);
    within(Duration::from_secs(10), start);
}

fn hungarian() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let params = MatchParams::default();
    let mut contested = 0;
    for _ in 0..500 {
        let dets: Vec<ScoredDetection> = (0..rng.random_range(0..=6))
            .map(|i| ScoredDetection {
                video_id: "v".into(),
                ..random_detection(&mut rng, i)
            })
            .collect();
        let gts: Vec<GroundTruthAction> = (0..rng.random_range(0..=6))
            .map(|_| GroundTruthAction {
                video_id: "v".into(),
                class: ClassId(rng.random_range(1..=2)),
                cuboid: random_cuboid(&mut rng, 8.0, 20),
            })
            .collect();
        let d: Vec<&ScoredDetection> = dets.iter().collect();
        let g: Vec<&GroundTruthAction> = gts.iter().collect();
        let pairs = hungarian_match(&d, &g, &params);
        let sum: f64 = pairs.iter().map(|&(i, j)| params.congruence(d[i], g[j]).unwrap()).sum();
        let (count, best) = support::brute_match(&d, &g, &params);
        assert_eq!(pairs.len(), count, "matching is not maximum cardinality");
        assert!((sum - best).abs() < 1e-9, "IoU sum {sum} vs exhaustive {best}");
        contested += usize::from(count >= 2);
    }
    assert!(contested > 50);
    within(Duration::from_secs(10), start);
}

fn synth_fixture(scenario: Scenario, dir: &Path) -> PipelineConfig {
    let params = SynthParams::for_scenario(scenario);
    assert_eq!(params.num_videos, 10);
    pipeline::cmd_synth(&PipelineConfig::default(), &params, FIXTURE_SEED, dir).unwrap();
    PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()
}

fn recall_for(scenario: Scenario) -> RecallSummary {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_fixture(scenario, dir.path());
    pipeline::cmd_propose(&cfg, 4).unwrap();
    pipeline::cmd_recall(&cfg).unwrap()
}

fn recall_shape() {
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    for scenario in [Scenario::Clean, Scenario::Noisy] {
        let r = recall_for(scenario);
        assert_eq!(r.grid, grid);
        print!("{}", indent(&format!("{scenario}\n{}", r.table())));
        for ((t, c), a) in r.grid.iter().zip(&r.clustering).zip(&r.all) {
            assert!(a >= c, "{scenario}: jittered {a} below clustering {c} at {t}");
        }
        match scenario {
            Scenario::Clean => assert_eq!(r.all[1], 1.0, "clean recall at 0.2"),
            Scenario::Noisy => assert!(r.all[1] > r.clustering[1], "noisy: no gain at 0.2"),
        }
    }
}

fn end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_fixture(Scenario::Clean, dir.path());
    pipeline::cmd_propose(&cfg, 1).unwrap();
    pipeline::cmd_label(&cfg).unwrap();
    pipeline::cmd_finalize(&cfg).unwrap();
    let report = pipeline::cmd_score(&cfg).unwrap();
    print!("{}", indent(&report.summary_table()));
    assert_eq!(report.rates, vec![0.01, 0.03, 0.1, 0.15, 0.2, 1.0]);
    assert_eq!(report.aggregate.p_miss_at.len(), 6);
    let p = aggregate_pmiss(&report, 1.0).unwrap();
    assert!(p <= 0.1, "aggregate p_miss {p} at 1 false alarm per minute");
    within(Duration::from_secs(60), start);
}

fn tubelet(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tubelet")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism() {
    let root = tempfile::tempdir().unwrap();
    let cases = root.path().join("cases.jsonl");
    std::fs::write(
        &cases,
        "{\"class_scores\":[0.2,0.8],\"class\":1,\"v_st\":0.1,\"v_end\":-0.3,\"r_st\":1.5,\"r_end\":0.2}\n",
    )
    .unwrap();
    let run = |dir: &Path| -> Vec<Vec<String>> {
        let d = dir.to_str().unwrap().to_string();
        let cfg = dir.join("pipeline.toml").to_str().unwrap().to_string();
        let mut steps = vec![vec!["synth".into(), "--seed".into(), "9".into(), "--videos".into(), "2".into(), "--output".into(), d.clone()]];
        for cmd in ["propose", "label", "finalize", "score", "recall", "plot"] {
            steps.push(vec![cmd.into(), "--config".into(), cfg.clone()]);
        }
        steps.push(vec![
            "loss-oracle".into(),
            "--input".into(),
            cases.to_str().unwrap().into(),
            "--output".into(),
            format!("{d}/run"),
        ]);
        steps
    };

    let a = root.path().join("a");
    let steps = run(&a);
    for step in &steps {
        tubelet(&step.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let first = snapshot(&a);
    assert!(first.len() >= 12, "only {} output files", first.len());
    for step in &steps {
        tubelet(&step.iter().map(String::as_str).collect::<Vec<_>>());
        let again = snapshot(&a);
        for (name, bytes) in &first {
            assert!(again.get(name) == Some(bytes), "{} changed after rerunning {}", name.display(), step[0]);
        }
    }

    let b = root.path().join("b");
    for step in run(&b) {
        tubelet(&step.iter().map(String::as_str).collect::<Vec<_>>());
    }
    assert_eq!(snapshot(&b), first, "a fresh directory gave different outputs");
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}\n")).collect()
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 10] = [
        ("geometry invariants and voxel oracle", geometry),
        ("refinement round trip", refinement_round_trip),
        ("loss values, continuity, non-action rule", loss_oracle),
        ("jitter enumeration for parent [0, 30]", jitter_enumeration),
        ("labeling threshold matrix", labeling_matrix),
        ("3D NMS against brute force", nms),
        ("Hungarian matcher against exhaustive search", hungarian),
        ("recall of jittered vs clustering proposals", recall_shape),
        ("end-to-end p_miss on the clean fixture", end_to_end),
        ("byte-identical reruns of every subcommand", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {:>2} {name} ({secs:.2}s)", i + 1),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {:>2} {name} ({secs:.2}s): {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
