use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::DiffusionConfig;
use crate::events::{Grid, FRAME_RATE};
use crate::loss::Objective;
use crate::tensor::{Tape, Tensor};

fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        n_frames: 24,
        n_components: 3,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        d_time: 8,
        spec_dim: 8,
        sem_dim: 4,
        ..DenoiserConfig::default()
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_cond(n: usize, seed: u64) -> ConditionBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_matrix(n, 8, &mut rng);
    let sem = random_matrix(n * 3 / 4, 4, &mut rng);
    ConditionBundle::new(spec, sem, 75.0).unwrap()
}

fn random_grid(n: usize, d: usize, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Grid::silent(n, d, FRAME_RATE);
    for f in 0..n {
        for c in 0..d {
            if rng.gen_bool(0.15) {
                g.set(f, c, 1.0, rng.gen_range(-1.0..1.0));
            }
        }
    }
    g
}

fn model(seed: u64) -> Model {
    Model::new(tiny(), DiffusionConfig::default(), seed).unwrap()
}

#[test]
fn output_matches_input_shape() {
    let m = model(0);
    for n in [8, 24, 40] {
        let x = random_grid(n, 3, 1);
        let y = m.forward(&x, 0.7, &random_cond(n, 2)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn shape_mismatches_are_errors() {
    let m = model(0);
    let x = random_grid(24, 3, 1);
    assert!(m.forward(&x, 0.7, &random_cond(20, 2)).is_err());
    assert!(m.forward(&random_grid(24, 4, 1), 0.7, &random_cond(24, 2)).is_err());
    let mut c = random_cond(24, 2);
    c.spec = Tensor::zeros(&[24, 9]);
    assert!(m.forward(&x, 0.7, &c).is_err());
}

#[test]
fn fully_dropped_streams_ignore_audio() {
    let m = model(3);
    let x = random_grid(24, 3, 4);
    let mut a = random_cond(24, 5);
    let mut b = random_cond(24, 6);
    a.drop_all();
    b.drop_all();
    let ya = m.forward(&x, 1.3, &a).unwrap();
    let yb = m.forward(&x, 1.3, &b).unwrap();
    assert_eq!(ya, yb);
    let full = m.forward(&x, 1.3, &random_cond(24, 5)).unwrap();
    assert_ne!(full, ya);
}

#[test]
fn identity_film_equals_no_film() {
    let mut m = model(7);
    for l in 0..m.config.n_layers {
        for suffix in ["w", "b"] {
            let t = m.params.get_mut(&format!("dec{l}.film.{suffix}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = random_grid(24, 3, 8);
    let c = random_cond(24, 9);
    let with = m.forward(&x, 0.3, &c).unwrap();
    m.diagnostics.film_identity = true;
    let without = m.forward(&x, 0.3, &c).unwrap();
    assert_eq!(with, without);
}

#[test]
fn noise_level_changes_the_output() {
    let m = model(1);
    let x = random_grid(24, 3, 2);
    let c = random_cond(24, 3);
    let a = m.raw_forward(&x, -1.0, &c).unwrap();
    let b = m.raw_forward(&x, 1.0, &c).unwrap();
    assert_ne!(a, b);
}

#[test]
fn dropped_frames_get_no_gradient() {
    let m = model(11);
    let n = 24;
    let mut cond = random_cond(n, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for v in cond.spec_valid.iter_mut().chain(cond.sem_valid.iter_mut()) {
        *v = rng.gen_bool(0.5);
    }
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, true);
    let x = tape.constant(Tensor::new(&[n, 6], random_grid(n, 3, 14).into_values()).unwrap());
    let spec = tape.param(cond.spec.clone());
    let sem = tape.param(cond.sem.clone());
    let out = m.forward_tape(&mut tape, &bound, x, 0.2, &cond, spec, sem).unwrap();
    let sq = tape.mul(out, out).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    for (var, valid, cols) in [(spec, &cond.spec_valid, 8), (sem, &cond.sem_valid, 4)] {
        let g = grads.get(var).unwrap();
        for (j, &ok) in valid.iter().enumerate() {
            let row = &g[j * cols..(j + 1) * cols];
            if ok {
                assert!(row.iter().any(|&v| v != 0.0), "valid frame {j} has no gradient");
            } else {
                assert!(row.iter().all(|&v| v == 0.0), "dropped frame {j} leaks gradient");
            }
        }
    }
}

/// Loss on a fixed window whose features and target are placed `shift`
/// frames into the source clip.
fn loss_at_offset(m: &Model, shift: usize) -> f64 {
    let mut cond = random_cond(64, 21).crop(16, 32).unwrap();
    let grid = random_grid(64, 3, 22).crop(16, 32).unwrap();
    cond.start_time = shift as f64 / FRAME_RATE;
    let y = m.forward(&grid, 0.5, &cond).unwrap();
    crate::loss::mse_loss(grid.values(), y.values()).unwrap()
}

#[test]
fn without_positions_only_relative_time_matters() {
    let mut m = model(20);
    m.diagnostics.no_positional = true;
    let base = loss_at_offset(&m, 16);
    for k in [0, 4, 8, 28] {
        let l = loss_at_offset(&m, k);
        assert!((l - base).abs() <= 10.0 * f64::EPSILON * base.abs().max(1.0), "shift {k}: {l} vs {base}");
    }
    m.diagnostics.no_positional = false;
    assert_ne!(loss_at_offset(&m, 16), loss_at_offset(&m, 4));
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 2,
        crop_frames: 16,
        epochs: 1,
        objective: Objective::Annealed,
        seed,
        ..TrainConfig::default()
    }
}

/// Features that are a fixed random linear image of the target frames,
/// standing in for audio rendered from the grid.
fn features_of(grid: &Grid) -> ConditionBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, cols) = (grid.n_frames(), 2 * grid.n_components());
    let ws = random_matrix(cols, 8, &mut rng);
    let wm = random_matrix(cols, 4, &mut rng);
    let project = |w: &Tensor, rows: &mut dyn Iterator<Item = usize>, k: usize| -> Vec<f64> {
        rows.flat_map(|f| {
            let x = &grid.values()[f * cols..(f + 1) * cols];
            (0..k).map(move |j| (0..cols).map(|i| x[i] * w.data()[i * k + j]).sum::<f64>())
        })
        .collect()
    };
    let spec = project(&ws, &mut (0..n), 8);
    let nm = n * 3 / 4;
    let sem = project(&wm, &mut (0..nm).map(|j| ((j as f64 + 0.5) * 4.0 / 3.0) as usize), 4);
    ConditionBundle::new(Tensor::new(&[n, 8], spec).unwrap(), Tensor::new(&[nm, 4], sem).unwrap(), 75.0).unwrap()
}

fn data(n_items: usize) -> Vec<(Grid, ConditionBundle)> {
    (0..n_items)
        .map(|i| {
            let g = random_grid(24, 3, 100 + i as u64);
            let c = features_of(&g);
            (g, c)
        })
        .collect()
}

#[test]
fn initial_loss_is_finite_and_positive() {
    let d = data(2);
    let batch: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut s = TrainState::new(model(0), train_cfg(0), 10).unwrap();
    let l = train_step(&mut s, &batch).unwrap();
    assert!(l.is_finite() && l > 0.0);
    assert_eq!(s.step, 1);
}

/// Loss on a fixed draw of σ, noise and dropout.
fn fixed_eval(s: &TrainState, batch: &[Example<'_>]) -> f64 {
    let mut probe = s.clone();
    probe.rng = ChaCha8Rng::seed_from_u64(999);
    batch_gradients(&mut probe, batch).unwrap().0
}

#[test]
fn overfits_a_single_batch() {
    let d = data(2);
    let batch: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut cfg = tiny();
    cfg.dropout = DropoutRates::none();
    let m = Model::new(cfg, DiffusionConfig::default(), 5).unwrap();
    let mut tc = train_cfg(5);
    tc.objective = Objective::Mse;
    let mut s = TrainState::new(m, tc, 200).unwrap();
    let before = fixed_eval(&s, &batch);
    for _ in 0..200 {
        train_step(&mut s, &batch).unwrap();
    }
    let after = fixed_eval(&s, &batch);
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn every_weight_gets_gradient() {
    let d = data(4);
    let items: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut s = TrainState::new(model(30), train_cfg(30), 50).unwrap();
    let mut seen: Vec<Vec<bool>> = s.model.params.tensors().iter().map(|t| vec![false; t.len()]).collect();
    for step in 0..50 {
        let batch = [items[step % 4], items[(step + 1) % 4]];
        let (_, grads) = batch_gradients(&mut s, &batch).unwrap();
        for (flags, g) in seen.iter_mut().zip(&grads) {
            for (f, v) in flags.iter_mut().zip(g) {
                *f |= *v != 0.0;
            }
        }
        s.adam.update(s.model.params.tensors_mut(), &grads).unwrap();
        s.step += 1;
    }
    for (name, flags) in s.model.params.names().iter().zip(&seen) {
        assert!(flags.iter().all(|&f| f), "dead weights in {name}");
    }
}

#[test]
fn runs_are_deterministic() {
    let d = data(5);
    let items: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let run = || {
        let mut tc = train_cfg(8);
        tc.epochs = 3;
        let mut s = TrainState::new(model(8), tc.clone(), tc.total_steps(items.len())).unwrap();
        let rec = train(&mut s, &items, TrainHooks::default()).unwrap();
        (rec, s)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(a.len(), 9);
    assert!((sa.alpha() - 1.0).abs() <= 1.0 / 9.0);
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let d = data(3);
    let items: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut tc = train_cfg(1);
    tc.epochs = 0;
    let mut s = TrainState::new(model(1), tc.clone(), tc.total_steps(items.len())).unwrap();
    let before = s.clone();
    let rec = train(&mut s, &items, TrainHooks::default()).unwrap();
    assert!(rec.is_empty());
    assert_eq!(s, before);
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let d = data(5);
    let items: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut tc = train_cfg(4);
    tc.epochs = 4;
    let total = tc.total_steps(items.len());
    let mut straight = TrainState::new(model(4), tc.clone(), total).unwrap();
    train(&mut straight, &items, TrainHooks::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let mut first = TrainState::new(model(4), tc, total).unwrap();
    let hooks = TrainHooks {
        checkpoint_path: Some(path.clone()),
        stop_at: Some(5),
        ..TrainHooks::default()
    };
    train(&mut first, &items, hooks).unwrap();
    drop(first);
    let mut resumed = checkpoint::load(&path).unwrap();
    assert_eq!(resumed.step, 5);
    train(&mut resumed, &items, TrainHooks::default()).unwrap();
    assert_eq!(resumed, straight);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let d = data(2);
    let items: Vec<Example<'_>> = d.iter().map(|(g, c)| (g, c)).collect();
    let mut s = TrainState::new(model(2), train_cfg(2), 10).unwrap();
    train_step(&mut s, &items).unwrap();
    let bytes = checkpoint::to_bytes(&s).unwrap();
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, s);
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(checkpoint::from_bytes(&corrupt).is_err());
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    checkpoint::save(&s, &path).unwrap();
    assert!(checkpoint::load_expecting(&path, &tiny()).is_ok());
    let other = DenoiserConfig {
        d_model: 32,
        ..tiny()
    };
    assert!(checkpoint::load_expecting(&path, &other).is_err());
}

#[test]
fn single_stream_models_have_no_unused_weights() {
    for fs in [FeatureSet::Spec, FeatureSet::Sem] {
        let cfg = DenoiserConfig {
            features: fs,
            ..tiny()
        };
        let m = Model::new(cfg, DiffusionConfig::default(), 0).unwrap();
        let other = if fs == FeatureSet::Spec { "sem." } else { "spec." };
        assert!(m.params.names().iter().all(|n| !n.starts_with(other)));
        let y = m.forward(&random_grid(24, 3, 1), 0.5, &random_cond(24, 1)).unwrap();
        assert_eq!(y.shape(), [24, 3, 2]);
    }
}

#[test]
fn model_gradient_matches_finite_differences() {
    let m = model(40);
    let n = 12;
    let grid = random_grid(n, 3, 41);
    let mut cond = features_of(&grid);
    cond.spec_valid[3] = false;
    cond.sem_valid[2] = false;
    let loss_of = |m: &Model| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, true);
        let x = tape.constant(Tensor::new(&[n, 6], grid.values().iter().map(|v| 0.8 * v).collect()).unwrap());
        let spec = tape.constant(cond.spec.clone());
        let sem = tape.constant(cond.sem.clone());
        let out = m.forward_tape(&mut tape, &bound, x, 0.3, &cond, spec, sem).unwrap();
        let w = tape.constant(Tensor::new(&[n, 6], (0..n * 6).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect()).unwrap());
        let y = tape.mul(out, w).unwrap();
        let y = tape.tanh(y);
        let l = tape.sum(y);
        let value = tape.value(l).data()[0];
        let vars = bound.vars().to_vec();
        let g = tape.backward(l).unwrap();
        let grads = vars.iter().zip(m.params.tensors()).map(|(&v, t)| g.get_or_zero(v, t.len())).collect();
        (value, Some(grads))
    };
    let (_, grads) = loss_of(&m);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (pi, name) in m.params.names().iter().enumerate() {
        for _ in 0..3 {
            let j = rng.gen_range(0..m.params.tensors()[pi].len());
            let h = 1e-5;
            let mut plus = m.clone();
            plus.params.tensors_mut()[pi].data_mut()[j] += h;
            let mut minus = m.clone();
            minus.params.tensors_mut()[pi].data_mut()[j] -= h;
            let fd = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * h);
            let an = grads[pi][j];
            let tol = 1e-5f64.max(1e-3 * fd.abs().max(an.abs()));
            assert!((fd - an).abs() <= tol, "{name}[{j}]: fd {fd} vs analytic {an}");
        }
    }
}
