use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::Denoiser;
use crate::simenv::{Env, EnvConfig, Observation};
use crate::{Error, Graph, Tensor};

const TASK: &str = "pick up the apple and place it in the bowl";

fn policy(modality: ModalityConfig, embodiment: &str) -> Policy {
    let spec = PolicySpec::new(modality, embodiment, &[TASK]).unwrap();
    let e = &spec.embodiment;
    let stats = NormStats::identity(e.state_dim, e.action_dim);
    Policy::new(spec, stats).unwrap()
}

fn observation(embodiment: &str, seed: u64) -> Observation {
    Env::reset_new(embodiment, seed, EnvConfig::default()).unwrap().1
}

fn perturb_output(p: &mut Policy, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = p.params().lookup("action.out.w").unwrap();
    let n = p.params().get(id).len();
    let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    p.params_mut().set_values(id, &vals).unwrap();
}

#[test]
fn token_count_table() {
    for (m, k) in [
        (ModalityConfig::Baseline, 18),
        (ModalityConfig::ContactState, 18),
        (ModalityConfig::ContactEncoder, 19),
        (ModalityConfig::Depth, 18),
        (ModalityConfig::DepthContactState, 18),
    ] {
        assert_eq!(m.token_count(64), k);
        let p = policy(m, "simG1");
        let z = p.conditioning(&observation("simG1", 0), TASK).unwrap();
        assert_eq!(z.shape(), &[k, 64], "{m}");
    }
    assert_eq!(ModalityConfig::Baseline.token_count(32), 6);
}

#[test]
fn modality_names_round_trip() {
    for m in ModalityConfig::ALL {
        assert_eq!(m.name().parse::<ModalityConfig>().unwrap(), m);
    }
    assert!("rgbd".parse::<ModalityConfig>().is_err());
}

#[test]
fn depth_policy_needs_depth() {
    let p = policy(ModalityConfig::Depth, "simGR1");
    let mut obs = observation("simGR1", 1);
    obs.depth = None;
    assert!(matches!(p.conditioning(&obs, TASK), Err(Error::Data(_))));
    // Depth is simply ignored without the depth modality.
    assert!(policy(ModalityConfig::Baseline, "simGR1").conditioning(&obs, TASK).is_ok());
}

#[test]
fn depth_policy_starts_from_averaged_kernel() {
    let p = policy(ModalityConfig::Depth, "simGR1");
    let e = p.patch_embedder().unwrap();
    assert_eq!(e.in_channels(), 4);
    let w = e.weight();
    let a = PATCH * PATCH;
    for row in [0, 17, 63] {
        let r = w.row(row);
        for s in [0, 100, 255] {
            let mean = (r[s] + r[a + s] + r[2 * a + s]) / 3.0;
            assert_eq!(r[3 * a + s], mean);
        }
    }
    // Same RGB kernel as the 3-channel policy with the same init seed.
    let rgb = policy(ModalityConfig::Baseline, "simGR1").patch_embedder().unwrap();
    assert_eq!(&w.row(5)[..3 * a], rgb.weight().row(5));
}

#[test]
fn unknown_instruction_is_an_error() {
    let p = policy(ModalityConfig::Baseline, "simGR1");
    let obs = observation("simGR1", 0);
    assert!(matches!(p.conditioning(&obs, "stack the blocks"), Err(Error::UnknownInstruction(_))));
}

#[test]
fn contact_state_input_width() {
    for (emb, base) in [("simGR1", 7), ("simG1", 9)] {
        let spec = PolicySpec::new(ModalityConfig::ContactState, emb, &[TASK]).unwrap();
        assert_eq!(spec.state_input_dim(), base + 1);
        let spec = PolicySpec::new(ModalityConfig::Baseline, emb, &[TASK]).unwrap();
        assert_eq!(spec.state_input_dim(), base);
    }
    let p = policy(ModalityConfig::ContactState, "simGR1");
    let w = p.params().get(p.params().lookup("state.fc1.w").unwrap());
    assert_eq!(w.shape(), &[64, 8]);
}

#[test]
fn contact_in_state_is_gated_by_modality() {
    let base = policy(ModalityConfig::Baseline, "simGR1");
    let fused = policy(ModalityConfig::ContactState, "simGR1");
    let state = vec![0.1f32; 7];
    let mut g = Graph::with_params(base.params());
    assert!(matches!(base.encode_state(&mut g, &state, Some(true)), Err(Error::Config(_))));
    assert!(base.encode_state(&mut g, &state, None).is_ok());
    let mut g = Graph::with_params(fused.params());
    assert!(fused.encode_state(&mut g, &state, Some(false)).is_ok());
    assert!(fused.encode_state(&mut g, &state, None).is_err());
    assert!(matches!(fused.encode_state(&mut g, &state[..6], Some(false)), Err(Error::Shape(_))));
}

#[test]
fn zero_encoder_propagates_biases() {
    let mut p = policy(ModalityConfig::ContactState, "simGR1");
    let ids: Vec<_> = p.params().ids().filter(|&id| p.params().name(id).starts_with("state.")).collect();
    let bias_value = 0.25;
    for id in ids {
        let name = p.params().name(id).to_string();
        let n = p.params().get(id).len();
        let v = if name.ends_with(".b") { bias_value } else { 0.0 };
        p.params_mut().set_values(id, &vec![v; n]).unwrap();
    }
    let mut g = Graph::with_params(p.params());
    let tok = p.encode_state(&mut g, &[0.0; 7], Some(false)).unwrap();
    assert!(g.value(tok).data().iter().all(|&v| v == bias_value));
}

#[test]
fn contact_bit_changes_token_after_a_gradient_step() {
    let mut p = policy(ModalityConfig::ContactState, "simGR1");
    let state = vec![0.3f32; 7];
    let token = |p: &Policy, c: bool| {
        let mut g = Graph::with_params(p.params());
        let v = p.encode_state(&mut g, &state, Some(c)).unwrap();
        g.value(v).data().to_vec()
    };
    // Zero the contact column so the bit starts out invisible.
    let id = p.params().lookup("state.fc1.w").unwrap();
    let mut w = p.params().get(id).data().to_vec();
    for r in 0..64 {
        w[r * 8 + 7] = 0.0;
    }
    p.params_mut().set_values(id, &w).unwrap();
    assert_eq!(token(&p, false), token(&p, true));

    let grads = {
        let mut g = Graph::with_params(p.params());
        let on = p.encode_state(&mut g, &state, Some(true)).unwrap();
        let loss = g.sum(on);
        g.backward(loss).unwrap()
    };
    p.params_mut().accumulate(&grads).unwrap();
    let grad = p.params().get(id).grad().unwrap().to_vec();
    let stepped: Vec<f64> = w.iter().zip(&grad).map(|(w, g)| w - 0.1 * g).collect();
    p.params_mut().set_values(id, &stepped).unwrap();
    assert_ne!(token(&p, false), token(&p, true));
}

#[test]
fn untrained_denoiser_predicts_zero() {
    for (emb, a) in [("simGR1", 3), ("simG1", 4)] {
        let p = policy(ModalityConfig::ContactEncoder, emb);
        let z = p.conditioning(&observation(emb, 2), TASK).unwrap();
        let net = p.with_conditioning(z);
        let x = Tensor::filled(&[16, a], 0.7);
        let out = net.predict(&x, 500).unwrap();
        assert_eq!(out.shape(), &[16, a]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn horizon_mismatch_is_a_shape_error() {
    let p = policy(ModalityConfig::Baseline, "simGR1");
    let z = p.conditioning(&observation("simGR1", 2), TASK).unwrap();
    let net = p.with_conditioning(z);
    assert!(matches!(net.predict(&Tensor::zeros(&[8, 3]), 0), Err(Error::Shape(_))));
    assert!(matches!(net.predict(&Tensor::zeros(&[16, 4]), 0), Err(Error::Shape(_))));
}

#[test]
fn conditioning_order_does_not_matter() {
    let mut p = policy(ModalityConfig::ContactEncoder, "simG1");
    perturb_output(&mut p, 4);
    let z = p.conditioning(&observation("simG1", 3), TASK).unwrap();
    let k = z.shape()[0];
    let mut order: Vec<usize> = (0..k).collect();
    order.reverse();
    order.swap(2, 9);
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| z.row(i).to_vec()).collect();
    let permuted = Tensor::from_rows(&rows).unwrap();
    let x = crate::diffusion::initial_noise(16, 4, 1);
    let a = p.with_conditioning(z).predict(&x, 123).unwrap();
    let b = p.with_conditioning(permuted).predict(&x, 123).unwrap();
    assert!(a.data().iter().any(|&v| v != 0.0));
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn timestep_and_observation_change_predictions() {
    let mut p = policy(ModalityConfig::Baseline, "simGR1");
    perturb_output(&mut p, 5);
    let x = crate::diffusion::initial_noise(16, 3, 1);
    let z0 = p.conditioning(&observation("simGR1", 0), TASK).unwrap();
    let z1 = p.conditioning(&observation("simGR1", 1), TASK).unwrap();
    let a = p.with_conditioning(z0.clone()).predict(&x, 10).unwrap();
    assert_ne!(a, p.with_conditioning(z0).predict(&x, 900).unwrap());
    assert_ne!(a, p.with_conditioning(z1).predict(&x, 10).unwrap());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut p = policy(ModalityConfig::ContactEncoder, "simGR1");
    perturb_output(&mut p, 6);
    let obs = observation("simGR1", 4);
    let x = crate::diffusion::initial_noise::<f64>(16, 3, 2);
    let loss_of = |p: &Policy| -> f64 {
        let mut g = Graph::with_params(p.params());
        let z = p.build_conditioning(&mut g, &obs, TASK).unwrap();
        let xv = g.constant(x.clone());
        let out = p.denoise(&mut g, xv, 321, z).unwrap();
        let sq = g.mul(out, out).unwrap();
        let l = g.mean(sq);
        g.value(l).data()[0]
    };
    let grads = {
        let mut g = Graph::with_params(p.params());
        let z = p.build_conditioning(&mut g, &obs, TASK).unwrap();
        let xv = g.constant(x.clone());
        let out = p.denoise(&mut g, xv, 321, z).unwrap();
        let sq = g.mul(out, out).unwrap();
        let l = g.mean(sq);
        g.backward(l).unwrap()
    };
    p.params_mut().accumulate(&grads).unwrap();
    let names = ["vision.patch.w", "vision.pos", "text.table", "state.fc1.w", "contact.fc2.b", "time.fc1.w", "dit.1.cross_k.w", "dit.0.self_q.w", "dit.0.ln_cond.gain", "action.out.b"];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for name in names {
        let id = p.params().lookup(name).unwrap();
        let n = p.params().get(id).len();
        for _ in 0..3 {
            let i = rng.random_range(0..n);
            let analytic = p.params().get(id).grad().unwrap()[i];
            let orig = p.params().get(id).data()[i];
            let h = 1e-5;
            let mut q = p.clone();
            q.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss_of(&q);
            q.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss_of(&q);
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-4, "{name}[{i}]: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn mismatched_stats_are_rejected() {
    let spec = PolicySpec::new(ModalityConfig::Baseline, "simG1", &[TASK]).unwrap();
    assert!(matches!(Policy::new(spec, NormStats::identity(7, 3)), Err(Error::Config(_))));
}

#[test]
fn normalization_round_trip() {
    let rows: Vec<Vec<f32>> = vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
    let (mean, std) = NormStats::column_stats(rows.iter().map(|r| r.as_slice()), 2);
    assert_eq!(mean, vec![3.0, 10.0]);
    assert!((std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(std[1], 0.0);
    let s = NormStats { state_mean: mean.clone(), state_std: std.clone(), action_mean: mean, action_std: std };
    let n = s.normalize_action(&[5.0, 10.0]);
    assert_eq!(n[1], 0.0);
    let back = s.denormalize_action(&n);
    assert!((back[0] - 5.0).abs() < 1e-12 && back[1] == 10.0);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let mut p = policy(ModalityConfig::ContactEncoder, "simGR1");
    perturb_output(&mut p, 3);
    let mut ck = Checkpoint::from_policy(&p, 42);
    ck.optimizer = Some(OptimizerSnapshot {
        step: 42,
        m: ck.params.iter().map(|(_, t)| vec![0.25; t.len()]).collect(),
        v: ck.params.iter().map(|(_, t)| vec![1e-300; t.len()]).collect(),
    });
    ck.meta = serde_json::json!({"lr": 1e-4});
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let q = back.to_policy().unwrap();
    let obs = observation("simGR1", 1);
    let x = Tensor::filled(&[16, 3], 0.3);
    let a = p.with_conditioning(p.conditioning(&obs, TASK).unwrap()).predict(&x, 7).unwrap();
    let b = q.with_conditioning(q.conditioning(&obs, TASK).unwrap()).predict(&x, 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_rejects_corruption_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let ck = Checkpoint::from_policy(&policy(ModalityConfig::Depth, "simG1"), 0);
    let mut bytes = ck.to_bytes().unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bytes, &path), Err(Error::Checksum { .. })));
    bytes[n / 2] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bytes[..n - 9], &path), Err(Error::Checksum { .. } | Error::Truncated(..))));
    bytes[0] = b'Z';
    assert!(matches!(Checkpoint::from_bytes(&bytes, &path), Err(Error::BadMagic { .. })));

    assert!(ck.expect("simG1", Some(ModalityConfig::Depth)).is_ok());
    assert!(ck.expect("simG1", None).is_ok());
    assert!(matches!(ck.expect("simGR1", None), Err(Error::Config(_))));
    assert!(matches!(ck.expect("simG1", Some(ModalityConfig::Baseline)), Err(Error::Config(_))));

    // A renamed tensor no longer fits the layout.
    let mut bad = ck.clone();
    bad.params[0].0 = "vision.patch.x".into();
    assert!(matches!(bad.to_policy(), Err(Error::Config(_))));
}

#[test]
#[ignore]
fn bench_forward_backward() {
    let p = policy(ModalityConfig::ContactState, "simG1");
    let obs = observation("simG1", 4);
    let x = crate::diffusion::initial_noise::<f64>(16, 4, 2);
    let t0 = std::time::Instant::now();
    let n = 64;
    for _ in 0..n {
        let mut g = Graph::with_params(p.params());
        let z = p.build_conditioning(&mut g, &obs, TASK).unwrap();
        let xv = g.constant(x.clone());
        let out = p.denoise(&mut g, xv, 321, z).unwrap();
        let sq = g.mul(out, out).unwrap();
        let l = g.mean(sq);
        let _ = g.backward(l).unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    let t1 = std::time::Instant::now();
    let z = p.conditioning(&obs, TASK).unwrap();
    let net = p.with_conditioning(z);
    for _ in 0..n {
        net.predict(&x, 3).unwrap();
    }
    let fwd = t1.elapsed().as_secs_f64() / n as f64;
    println!("fwd+bwd per sample {:.3} ms, denoise-only fwd {:.3} ms, params {}", per * 1e3, fwd * 1e3, p.params().n_scalars());
}
