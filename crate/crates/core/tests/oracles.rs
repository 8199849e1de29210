mod common;

use common::*;
use prefalign_core::backend::{
    cfg_combine, latent_checksum, sample, Conditioning, DiffusionBackend, NoisePrediction, SamplerConfig,
    ToyBackend, ToySettings,
};
use prefalign_core::compose::{
    attention_probabilities, blend, cross_attention, modulated_attention, AttentionWeights, LatentFeatureMap,
};
use prefalign_core::encode::{MockTextEncoder, TextEncoder, EOS_TOKEN, PAD_TOKEN};
use prefalign_core::layout::{order_plan, rasterize_mask, LocatedPrompt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn fixture_weights(c: usize, d: usize, dk: usize, seed: u64) -> AttentionWeights {
    AttentionWeights::seeded(c, d, dk, &mut rng(seed))
}

#[test]
fn cross_attention_matches_dense_oracle() {
    let mut r = rng(11);
    let z = LatentFeatureMap::from_vec(2, 2, 4, uniform_vec(&mut r, 16));
    let p = random_seq(&mut r, 3, 8);
    let w = fixture_weights(4, 8, 4, 12);
    let got = cross_attention(&z, &p, &w).unwrap();
    let want = attention_on(&z, &p, &w);
    assert!(max_abs_diff(&got.data, &want) <= 1e-10);
}

#[test]
fn cross_attention_oracle_over_seeds() {
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let (h, w, c, len, d, dk) = (
            r.random_range(1..5),
            r.random_range(1..5),
            r.random_range(1..6),
            r.random_range(1..7),
            r.random_range(1..10),
            r.random_range(1..6),
        );
        let z = LatentFeatureMap::from_vec(h, w, c, uniform_vec(&mut r, h * w * c));
        let p = random_seq(&mut r, len, d);
        let weights = fixture_weights(c, d, dk, seed);
        let got = cross_attention(&z, &p, &weights).unwrap();
        assert!(max_abs_diff(&got.data, &attention_on(&z, &p, &weights)) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(5);
    let z = LatentFeatureMap::from_vec(3, 3, 4, uniform_vec(&mut r, 36).iter().map(|v| v * 50.0).collect());
    let p = random_seq(&mut r, 6, 8);
    let probs = attention_probabilities(&z, &p, &fixture_weights(4, 8, 4, 6)).unwrap();
    for row in probs.chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn single_token_attention_returns_value_row() {
    let mut r = rng(8);
    let z = LatentFeatureMap::from_vec(2, 3, 4, uniform_vec(&mut r, 24));
    let p = random_seq(&mut r, 1, 8);
    let w = fixture_weights(4, 8, 4, 9);
    let out = cross_attention(&z, &p, &w).unwrap();
    let mut v = [0.0; 4];
    for (ch, slot) in v.iter_mut().enumerate() {
        for e in 0..8 {
            *slot += p.row(0)[e] * w.value[e * 4 + ch];
        }
    }
    for cell in out.data.chunks(4) {
        assert!(max_abs_diff(cell, &v) < 1e-12);
    }
}

#[test]
fn mock_encoder_rows_recomputed_independently() {
    let enc = MockTextEncoder::new(42, 8, 5);
    let seq = enc.encode("A boat, on the LAKE!").unwrap();
    let tokens = ["<|startoftext|>", "a", "boat", "on", "the", "lake", EOS_TOKEN, PAD_TOKEN];
    for (pos, tok) in tokens.iter().enumerate() {
        let mut h = Sha256::new();
        h.update(42u64.to_le_bytes());
        h.update((pos as u64).to_le_bytes());
        h.update(tok.as_bytes());
        let mut r = ChaCha8Rng::from_seed(h.finalize().into());
        let want: Vec<f64> = (0..5).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        assert_eq!(seq.row(pos), &want[..], "position {pos} `{tok}`");
    }
}

#[test]
fn mock_encoder_truncates_overflow() {
    let enc = MockTextEncoder::new(0, 4, 3);
    let seq = enc.encode("one two three four five").unwrap();
    assert_eq!(seq.shape(), (4, 3));
    // two words fit between the start and end tokens
    assert_eq!(seq.row(3), &enc.token_vector(EOS_TOKEN, 3)[..]);
    assert_eq!(seq.row(2), &enc.token_vector("two", 2)[..]);
}

#[test]
fn plan_order_matches_sort_oracle() {
    let mut r = rng(77);
    for _ in 0..300 {
        let n = r.random_range(0..8);
        let regions: Vec<_> = (0..n)
            .map(|_| {
                // coarse grid so equal areas happen often
                let l = r.random_range(0..4) as f64 / 8.0;
                let t = r.random_range(0..4) as f64 / 8.0;
                let w = r.random_range(1..5) as f64 / 8.0;
                let h = r.random_range(1..5) as f64 / 8.0;
                prefalign_core::layout::validate_and_normalize([l, t, l + w, t + h]).unwrap()
            })
            .collect();
        let prompts: Vec<_> = (0..n)
            .map(|i| LocatedPrompt { entity: format!("e{i}"), prompt: String::new() })
            .collect();
        let plan = order_plan(&regions, &prompts).unwrap();
        let areas: Vec<f64> = regions.iter().map(|g| g.area()).collect();
        let got: Vec<usize> = plan.entries.iter().map(|e| e.entity_index).collect();
        assert_eq!(got, area_order(&areas));
    }
}

#[test]
fn raster_matches_cell_center_oracle() {
    let mut r = rng(78);
    for _ in 0..300 {
        let region = random_region(&mut r);
        let (h, w) = (r.random_range(1..17), r.random_range(1..17));
        assert_eq!(rasterize_mask(&region, h, w).grid.cells, raster(region.to_array(), h, w));
    }
}

#[test]
fn raster_known_cases() {
    let full = prefalign_core::layout::validate_and_normalize([0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(rasterize_mask(&full, 8, 8).grid.count(), 64);
    let left = prefalign_core::layout::validate_and_normalize([0.0, 0.0, 0.5, 1.0]).unwrap();
    let m = rasterize_mask(&left, 4, 4);
    assert_eq!(m.grid.count(), 8);
    assert!(m.grid.get(3, 1) && !m.grid.get(0, 2));
    // thinner than a cell, centred on cell (2, 5) of an 8x8 grid
    let thin = prefalign_core::layout::validate_and_normalize([0.68, 0.3, 0.69, 0.31]).unwrap();
    let m = rasterize_mask(&thin, 8, 8);
    assert_eq!(m.grid.count(), 1);
    assert!(m.grid.get(2, 5));
}

#[test]
fn blend_matches_elementwise_recompute() {
    let a = LatentFeatureMap::gaussian(4, 4, 4, 1);
    let b = LatentFeatureMap::gaussian(4, 4, 4, 2);
    let got = blend(&a, &b, 0.2).unwrap();
    let mut want = Vec::new();
    for i in 0..a.data.len() {
        want.push(0.2 * a.data[i] + 0.8 * b.data[i]);
    }
    assert!(max_abs_diff(&got.data, &want) <= 1e-12);
    assert_eq!(blend(&a, &b, 0.0).unwrap(), b);
    assert_eq!(blend(&a, &b, 1.0).unwrap(), a);
}

#[test]
fn modulated_attention_matches_oracle() {
    for seed in 0..30 {
        let mut r = rng(500 + seed);
        let n = r.random_range(0..5);
        let plan = random_plan(&mut r, n);
        let group = random_group(&mut r, n, 5, 8);
        let z = LatentFeatureMap::from_vec(8, 8, 4, uniform_vec(&mut r, 256));
        let w = fixture_weights(4, 8, 4, seed);
        let lambda = r.random_range(0.0..=1.0);
        let got = modulated_attention(&z, &group, &plan, &w, lambda).unwrap();
        assert!(max_abs_diff(&got.data, &modulated(&z, &group, &plan, &w, lambda)) <= 1e-10);
    }
}

#[test]
fn cfg_matches_formula() {
    let u = NoisePrediction(LatentFeatureMap::gaussian(2, 2, 4, 3));
    let c = NoisePrediction(LatentFeatureMap::gaussian(2, 2, 4, 4));
    let got = cfg_combine(&u, &c, 5.0).unwrap();
    let want: Vec<f64> = u.0.data.iter().zip(&c.0.data).map(|(a, b)| a + 5.0 * (b - a)).collect();
    assert!(max_abs_diff(&got.0.data, &want) <= 1e-12);
    assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
    assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
}

fn golden_scenario() -> (ToyBackend, prefalign_core::encode::EmbeddingGroup, prefalign_core::layout::LayoutPlan) {
    let backend = ToyBackend::new(ToySettings::default());
    let mut r = rng(7);
    let group = random_group(&mut r, 2, 16, 32);
    let plan = order_plan(
        &[
            prefalign_core::layout::validate_and_normalize([0.0, 0.0, 0.5, 1.0]).unwrap(),
            prefalign_core::layout::validate_and_normalize([0.25, 0.25, 0.75, 0.75]).unwrap(),
        ],
        &[
            LocatedPrompt { entity: "a".into(), prompt: "a".into() },
            LocatedPrompt { entity: "b".into(), prompt: "b".into() },
        ],
    )
    .unwrap();
    (backend, group, plan)
}

#[test]
fn denoise_step_matches_oracle_and_golden() {
    let (backend, group, plan) = golden_scenario();
    let config = SamplerConfig { seed: 7, latent_h: 4, latent_w: 4, ..Default::default() };
    let x = LatentFeatureMap::gaussian(4, 4, 4, 7);
    let cond = Conditioning { group: &group, plan: &plan, lambda: 0.2, sites: None };
    let eps = backend.denoise_step(&x, 29, &cond, &config).unwrap();
    let want = toy_step(backend.denoiser(), &x, 29, &group, &plan, 0.2, 5.0);
    assert!(max_abs_diff(&eps.0.data, &want) <= 1e-10);
    assert_eq!(
        latent_checksum(&eps.0),
        "6ca9fa65bcdc37f1a215fbc47065de23f9618a87dd073342e53839ecca20b240"
    );
}

#[test]
fn sample_matches_oracle_and_golden() {
    let (backend, group, plan) = golden_scenario();
    let config = SamplerConfig { seed: 7, latent_h: 4, latent_w: 4, ..Default::default() };
    let cond = Conditioning { group: &group, plan: &plan, lambda: 0.2, sites: None };
    let out = sample(&backend, &cond, &config, true).unwrap();
    let want = toy_sample(backend.denoiser(), &group, &plan, 0.2, &config);
    assert!(max_abs_diff(&out.latent.data, &want) <= 1e-9);
    assert_eq!(out.trajectory.as_ref().unwrap().len(), 30);
    assert_eq!(out.trajectory.unwrap().last().unwrap(), &out.latent);
    assert_eq!(
        latent_checksum(&out.latent),
        "02df7b7163f75bbd3a1b15fa25676dc4672bcc2f333e533934f24710711b13dc"
    );
    let png = backend.decode_latent(&out.latent).unwrap().to_png().unwrap();
    assert_eq!(
        hex::encode(Sha256::digest(&png)),
        "b9afd045c341ce54020d25045491572c1dd3922c04cf85d1a569a891e77d78f0"
    );
}
