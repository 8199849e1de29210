//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs on the mock chat provider and the toy backend only.

// checks are written `!(err <= tol)` so that NaN fails
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use prefalign_core::backend::{cfg_combine, NoisePrediction, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use prefalign_core::compose::{blend, cross_attention, modulated_attention_traced, AttentionWeights, LatentFeatureMap, DEFAULT_LAMBDA};
use prefalign_core::encode::{
    build_embedding_group, orthogonal_reject, MockTextEncoder, TextEncoder, TokenEmbeddingSequence, DEFAULT_ALPHA,
    DEFAULT_EPS_NORM,
};
use prefalign_core::layout::{order_plan, rasterize_mask, validate_and_normalize, LayoutPlan, LocatedPrompt};
use prefalign_core::mllm::{load_cases, KeywordSet, MllmError, MllmSettings, ScriptedChat};
use prefalign_core::pipeline::{content_digest, deserialize_session, serialize_session, SessionState};
use prefalign_core::{AppConfig, Engine, SessionEdit, Strategies};
use prefalign_gateway::{router, AppState};
use rand::Rng;
use tower::ServiceExt;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);


macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, budget: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < budget, "{what} took {took:?}, budget {budget:?}");
    Ok(())
}

fn projection_orthogonality() -> Check {
    let start = Instant::now();
    let (rows, dim) = (1000, 32);
    let mut r = rng(2024);
    let v = uniform_vec(&mut r, rows * dim);
    let u = uniform_vec(&mut r, rows * dim);
    let pref = TokenEmbeddingSequence::new(rows, dim, v.clone(), "pref").unwrap();
    let prompt = TokenEmbeddingSequence::new(rows, dim, u.clone(), "prompt").unwrap();
    let rejected = orthogonal_reject(&pref, &prompt, DEFAULT_EPS_NORM).unwrap();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for i in 0..rows {
        let (vi, ui) = (&v[i * dim..(i + 1) * dim], &u[i * dim..(i + 1) * dim]);
        let d: f64 = rejected.row(i).iter().zip(ui).map(|(a, b)| a * b).sum();
        worst = worst.max(d.abs() / (norm(vi) * norm(ui)));
    }
    within(start, Duration::from_secs(1), "1000 rows")?;
    ensure!(worst <= 1e-6, "max relative |<r,u>| = {worst:e}");
    Ok(format!("1000 rows, max relative |<r,u>| = {worst:.1e}"))
}

fn alpha_zero_identity() -> Check {
    let enc = MockTextEncoder::default();
    let mut r = rng(6);
    for k in 0..50 {
        let (group, keywords) = random_prompt_group(&mut r);
        let g = build_embedding_group(&group, &keywords, 0.0, &enc).unwrap();
        ensure!(g.complex == enc.encode(&group.complex_prompt).unwrap(), "group {k}: complex differs");
        ensure!(g.background == enc.encode(&group.background_prompt).unwrap(), "group {k}: background differs");
        for (e, s) in group.entities.iter().zip(&g.per_entity) {
            ensure!(*s == enc.encode(&e.sub_prompt).unwrap(), "group {k}: `{}` differs", e.name);
        }
    }
    Ok("50 groups bit-equal to plain encodings".into())
}

/// Entity index owning each cell under last-writer-wins, `None` for background.
fn owners(plan: &LayoutPlan, h: usize, w: usize) -> Vec<Option<usize>> {
    let mut owner = vec![None; h * w];
    for e in &plan.entries {
        for (i, set) in rasterize_mask(&e.region, h, w).grid.cells.iter().enumerate() {
            if *set {
                owner[i] = Some(e.entity_index);
            }
        }
    }
    owner
}

fn partition_and_locality() -> Check {
    let start = Instant::now();
    let mut changed_total = 0;
    for seed in 0..200u64 {
        let mut r = rng(10_000 + seed);
        let n = r.random_range(1..=4);
        let plan = random_plan(&mut r, n);
        let group = random_group(&mut r, n, 6, 8);
        let z = LatentFeatureMap::from_vec(8, 8, 4, uniform_vec(&mut r, 256));
        let w = AttentionWeights::seeded(4, 8, 4, &mut rng(seed));
        let trace = modulated_attention_traced(&z, &group, &plan, &w, 0.0).unwrap();
        let owner = owners(&plan, 8, 8);
        for (i, own) in owner.iter().enumerate() {
            let out = trace.output.cell(i);
            let bg = usize::from(trace.background.cell(i) == out);
            let hits: Vec<usize> =
                trace.entities.iter().filter(|(_, b, _)| b.cell(i) == out).map(|(idx, _, _)| *idx).collect();
            ensure!(bg + hits.len() == 1, "scenario {seed} cell {i}: matches {} branches", bg + hits.len());
            ensure!(hits.first().copied() == *own, "scenario {seed} cell {i}: wrong owner");
        }
        let j = r.random_range(0..n);
        let mut edited = group.clone();
        edited.per_entity[j] = random_seq(&mut r, 6, 8);
        let after = modulated_attention_traced(&z, &edited, &plan, &w, 0.0).unwrap().output;
        for (i, own) in owner.iter().enumerate() {
            let changed = trace.output.cell(i) != after.cell(i);
            ensure!(changed == (*own == Some(j)), "scenario {seed} cell {i}: edit leaked (changed={changed})");
            changed_total += usize::from(changed);
        }
    }
    within(start, Duration::from_secs(5), "200 scenarios")?;
    Ok(format!("200 scenarios, {changed_total} edited cells all inside their masks"))
}

fn blend_endpoints() -> Check {
    for seed in 0..20 {
        let com = LatentFeatureMap::gaussian(8, 8, 4, 2 * seed);
        let c = LatentFeatureMap::gaussian(8, 8, 4, 2 * seed + 1);
        ensure!(blend(&com, &c, 0.0).unwrap() == c, "seed {seed}: lambda=0 is not z_C");
        ensure!(blend(&com, &c, 1.0).unwrap() == com, "seed {seed}: lambda=1 is not z_com");
        let got = blend(&com, &c, 0.2).unwrap();
        let want: Vec<f64> = com.data.iter().zip(&c.data).map(|(a, b)| 0.2 * a + 0.8 * b).collect();
        let d = max_abs_diff(&got.data, &want);
        ensure!(d <= 1e-12, "seed {seed}: lambda=0.2 off by {d:e}");
    }
    Ok("20 seeds, endpoints exact, lambda=0.2 within 1e-12".into())
}

fn layout_ordering_and_raster() -> Check {
    let mut r = rng(31);
    let mut ties = 0;
    for k in 0..500 {
        let n = r.random_range(0..8);
        let regions: Vec<_> = (0..n)
            .map(|_| {
                let (l, t) = (r.random_range(0..4) as f64 / 8.0, r.random_range(0..4) as f64 / 8.0);
                let (w, h) = (r.random_range(1..5) as f64 / 8.0, r.random_range(1..5) as f64 / 8.0);
                validate_and_normalize([l, t, l + w, t + h]).unwrap()
            })
            .collect();
        let prompts: Vec<_> =
            (0..n).map(|i| LocatedPrompt { entity: format!("e{i}"), prompt: String::new() }).collect();
        let plan = order_plan(&regions, &prompts).unwrap();
        let areas: Vec<f64> = regions.iter().map(|g| g.area()).collect();
        let got: Vec<usize> = plan.entries.iter().map(|e| e.entity_index).collect();
        ensure!(got == area_order(&areas), "plan {k}: {got:?} != {:?}", area_order(&areas));
        ties += areas.windows(2).filter(|p| p[0] == p[1]).count();
    }
    let mut snapped = 0;
    for k in 0..200 {
        let region = random_region(&mut r);
        let (h, w) = (r.random_range(1..17), r.random_range(1..17));
        let want = raster(region.to_array(), h, w);
        ensure!(rasterize_mask(&region, h, w).grid.cells == want, "raster {k}: {:?} at {h}x{w}", region.to_array());
        // no cell centre inside the box means the cell was snapped
        let [l, t, rr, b] = region.to_array();
        let any_center = (0..h * w).any(|i| {
            let (cx, cy) = (((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64);
            l <= cx && cx < rr && t <= cy && cy < b
        });
        snapped += usize::from(!any_center);
    }
    ensure!(snapped > 0, "no snapping case among the raster samples");
    ensure!(ties > 0, "no equal-area ties among the plans");
    Ok(format!("500 plans ({ties} adjacent ties), 200 rasters ({snapped} snapped)"))
}

fn cfg_and_defaults() -> Check {
    for seed in 0..10 {
        let u = NoisePrediction(LatentFeatureMap::gaussian(4, 4, 4, 100 + seed));
        let c = NoisePrediction(LatentFeatureMap::gaussian(4, 4, 4, 200 + seed));
        ensure!(cfg_combine(&u, &c, 0.0).unwrap() == u, "omega=0 is not the unconditional prediction");
        ensure!(cfg_combine(&u, &c, 1.0).unwrap() == c, "omega=1 is not the conditional prediction");
    }
    let g = AppConfig::default().generation();
    let got = (g.alpha, g.lambda, g.sampler.guidance_omega, g.sampler.steps);
    ensure!(got == (0.7, 0.2, 5.0, 30), "config defaults {got:?}");
    let consts = (DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_GUIDANCE, DEFAULT_STEPS);
    ensure!(consts == (0.7, 0.2, 5.0, 30), "library defaults {consts:?}");
    Ok("omega in {0,1} exact; (alpha, lambda, omega, steps) = (0.7, 0.2, 5, 30)".into())
}

fn cross_attention_oracle() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(3000 + seed);
        let (h, w, c) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
        let (len, d, dk) = (r.random_range(1..9), r.random_range(1..12), r.random_range(1..8));
        let z = LatentFeatureMap::from_vec(h, w, c, uniform_vec(&mut r, h * w * c));
        let p = random_seq(&mut r, len, d);
        let weights = AttentionWeights::seeded(c, d, dk, &mut rng(seed));
        let got = cross_attention(&z, &p, &weights).unwrap();
        worst = worst.max(max_abs_diff(&got.data, &attention_on(&z, &p, &weights)));
    }
    ensure!(worst <= 1e-10, "max deviation {worst:e}");
    Ok(format!("50 fixtures, max deviation {worst:.1e}"))
}

fn parser_corpus() -> Check {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus");
    let good = load_cases(&root.join("compliant")).map_err(|e| e.to_string())?;
    let bad = load_cases(&root.join("malformed")).map_err(|e| e.to_string())?;
    ensure!(good.len() + bad.len() >= 20, "only {} transcripts", good.len() + bad.len());
    for defect in ["overlong", "mislabeled", "truncated"] {
        ensure!(bad.iter().any(|c| c.defect.as_deref() == Some(defect)), "no `{defect}` transcript");
    }
    let settings = MllmSettings::default();
    for case in &good {
        let chat = ScriptedChat::always(Ok(case.response.clone()));
        let out = case.run(REFERENCE_PNG, &chat, &settings).map_err(|e| format!("{}: {e}", case.name))?;
        if let Some(expect) = &case.expect {
            out.check(expect).map_err(|e| format!("{}: {e}", case.name))?;
        }
        ensure!(chat.request_count() == 1, "{}: {} requests", case.name, chat.request_count());
    }
    let attempts = settings.retries + 1;
    for case in &bad {
        let chat = ScriptedChat::always(Ok(case.response.clone()));
        match case.run(REFERENCE_PNG, &chat, &settings) {
            Err(MllmError::MalformedResponse { attempts: a, .. }) if a == attempts => {}
            other => return Err(format!("{}: {other:?}", case.name)),
        }
        ensure!(chat.request_count() as u32 == attempts, "{}: {} requests", case.name, chat.request_count());
    }
    Ok(format!("{} compliant parsed, {} malformed failed after {attempts} attempts", good.len(), bad.len()))
}

fn end_to_end_determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reference = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/reference.png");
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = Command::new(env!("CARGO_BIN_EXE_prefalign"))
            .args(["generate", "--prompt", "a boat on a lake", "--reference"])
            .arg(&reference)
            .args(["--backend", "toy", "--mllm", "mock", "--seed", "7", "--out"])
            .arg(&out)
            .env_remove("PREFALIGN_MLLM_ENDPOINT")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "generate failed: {}", String::from_utf8_lossy(&o.stderr));
        let image = std::fs::read(out.join("image.png")).map_err(|e| e.to_string())?;
        let session = std::fs::read(out.join("session.json")).map_err(|e| e.to_string())?;
        digests.push((content_digest(&image), content_digest(&session), session));
    }
    ensure!(digests[0].0 == digests[1].0, "image checksums differ");
    ensure!(digests[0].1 == digests[1].1, "session checksums differ");
    let state = deserialize_session(&digests[0].2).map_err(|e| e.to_string())?;
    let engine = Strategies::with_builtins().build_engine(&AppConfig::default()).map_err(|e| e.to_string())?;
    for record in &state.rounds {
        let (png, matches) = engine.replay_round(record).map_err(|e| e.to_string())?;
        ensure!(matches && content_digest(&png) == record.image_ref, "round {} does not replay", record.index);
    }
    within(start, Duration::from_secs(10), "two runs and replay")?;
    Ok(format!("image {}…, session {}…, replay matches", &digests[0].0[..12], &digests[0].1[..12]))
}

fn same_content(a: &SessionState, b: &SessionState) -> bool {
    SessionState { revision: 0, ..a.clone() } == SessionState { revision: 0, ..b.clone() }
}

fn session_edits() -> Check {
    let engine = Strategies::with_builtins().build_engine(&AppConfig::default()).unwrap();
    let s0 = engine.create_session("acceptance", REFERENCE_PNG, "a boat on a lake", Default::default()).unwrap();
    let snapshot = s0.clone();
    let boat = s0.group.entities[0].clone();
    let boat_box = s0.plan.entry_for(0).unwrap().region.to_array();
    let mut kw = KeywordSet::default();
    kw.other.push("Silence".into());
    let pairs = [
        (SessionEdit::ReplaceKeywords { keywords: kw }, SessionEdit::ReplaceKeywords { keywords: s0.keywords.clone() }),
        (
            SessionEdit::AddEntity { name: "gull".into(), sub_prompt: "a gull".into(), region: Some([0.7, 0.1, 0.8, 0.2]) },
            SessionEdit::RemoveEntity { name: "gull".into() },
        ),
        (
            SessionEdit::EditSubPrompt { name: "boat".into(), text: "a canoe".into() },
            SessionEdit::EditSubPrompt { name: "boat".into(), text: boat.sub_prompt },
        ),
        (
            SessionEdit::MoveRegion { name: "boat".into(), region: [0.5, 0.5, 1.0, 1.0] },
            SessionEdit::MoveRegion { name: "boat".into(), region: boat_box },
        ),
        (SessionEdit::SetAlpha { value: 1.2 }, SessionEdit::SetAlpha { value: s0.config.alpha }),
        (SessionEdit::SetLambda { value: 0.8 }, SessionEdit::SetLambda { value: s0.config.lambda }),
        (SessionEdit::SetBasePrompt { text: "a boat".into() }, SessionEdit::SetBasePrompt { text: s0.base_prompt.clone() }),
        (SessionEdit::SetSeed { seed: 1 }, SessionEdit::SetSeed { seed: s0.config.sampler.seed }),
    ];
    for (fwd, back) in &pairs {
        let s1 = engine.apply_edit(&s0, fwd).map_err(|e| format!("{fwd:?}: {e}"))?;
        let s1_copy = s1.clone();
        let s2 = engine.apply_edit(&s1, back).map_err(|e| format!("{back:?}: {e}"))?;
        ensure!(s0 == snapshot && s1 == s1_copy, "{fwd:?} mutated a predecessor");
        ensure!(!same_content(&s1, &s0), "{fwd:?} changed nothing");
        ensure!(same_content(&s2, &s0), "{fwd:?} was not reverted by {back:?}");
    }
    patch_atomicity(engine)?;
    Ok(format!("{} edit kinds applied and reverted; PATCH with failing second edit left state intact", pairs.len()))
}

fn patch_atomicity(engine: Engine) -> Result<(), String> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let state = AppState::in_memory(engine.clone(), &AppConfig::default());
        let s = engine.create_session("atomic", REFERENCE_PNG, "a boat on a lake", Default::default()).unwrap();
        state.sessions.insert(s.clone()).unwrap();
        let app = router(state);
        let edits = [
            SessionEdit::MoveRegion { name: "boat".into(), region: [0.1, 0.1, 0.4, 0.4] },
            SessionEdit::EditSubPrompt { name: "whale".into(), text: "a whale".into() },
        ];
        let req = Request::patch("/sessions/atomic")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(serde_json::to_vec(&edits).unwrap()))
            .unwrap();
        let status = app.clone().oneshot(req).await.unwrap().status();
        ensure!(status == StatusCode::UNPROCESSABLE_ENTITY, "PATCH returned {status}");
        let resp = app.oneshot(Request::get("/sessions/atomic").body(Body::empty()).unwrap()).await.unwrap();
        let body = resp.into_body().collect().await.unwrap().to_bytes();
        ensure!(body.as_ref() == serialize_session(&s).as_slice(), "first edit of the failed PATCH persisted");
        Ok(())
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("projection orthogonality", projection_orthogonality),
        ("alpha=0 identity", alpha_zero_identity),
        ("compositor partition & locality", partition_and_locality),
        ("blend endpoints", blend_endpoints),
        ("layout ordering & rasterization", layout_ordering_and_raster),
        ("CFG endpoints & defaults", cfg_and_defaults),
        ("cross-attention oracle", cross_attention_oracle),
        ("parser corpus", parser_corpus),
        ("end-to-end determinism", end_to_end_determinism),
        ("session edits", session_edits),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS  {name:<34} {detail} [{ms} ms]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<34} {why} [{ms} ms]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
