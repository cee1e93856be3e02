use super::network::{global_pass, mem_pass};
use super::*;
use crate::diff::{grad_check_coords, Graph, Tensor};
use crate::error::Error;
use crate::rng::stream;
use crate::signals::{ChannelVocabulary, EegSample};
use rand::Rng;

fn random_sample(c: usize, t: usize, seed: u64) -> EegSample {
    let mut rng = stream(seed, &[]);
    let vocab = ChannelVocabulary::grid(c);
    let data = (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    EegSample::new(vocab.names().to_vec(), 200.0, t, data).unwrap()
}

fn small_state(c: usize, l: usize) -> ModelState {
    ModelState::init(ModelConfig::gradcheck(l), ChannelVocabulary::grid(c), 11).unwrap()
}

fn zeroed(set: &ParamSet, keep: impl Fn(&str) -> bool) -> ParamSet {
    let mut s = set.clone();
    s.map_entries(|name, t| {
        if keep(name) {
            t.clone()
        } else {
            t.map(|_| 0.0)
        }
    });
    s
}

#[test]
fn patchify_shape_matches_kernel_arithmetic() {
    let cfg = ModelConfig {
        max_patches: 16,
        ..ModelConfig::tiny8()
    };
    let vocab = ChannelVocabulary::grid(62);
    let state = ModelState::init(
        ModelConfig {
            max_channels: 62,
            ..cfg.clone()
        },
        vocab,
        0,
    )
    .unwrap();
    let grid = patchify(&random_sample(62, 800, 1), &state.online, &cfg).unwrap();
    assert_eq!(grid.len(), 62 * 16);
    assert_eq!(grid.width(), 64);
    assert_eq!(
        grid.index()[17],
        TokenIndex::Patch {
            channel: 1,
            time: 1
        }
    );
}

#[test]
fn patchify_identity_and_zero_kernels() {
    let l = 4;
    let cfg = ModelConfig {
        d_model: l,
        enc_heads: 1,
        ..ModelConfig::gradcheck(l)
    };
    let mut params = ParamSet::new();
    let eye: Vec<f64> = (0..l * l)
        .map(|k| if k / l == k % l { 1.0 } else { 0.0 })
        .collect();
    params.insert("patch.w", Tensor::new(vec![l, l], eye).unwrap());
    params.insert("patch.b", Tensor::zeros([l]));
    let s = random_sample(3, 12, 2);
    let grid = patchify(&s, &params, &cfg).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(
                grid.tokens().row(i * 3 + j),
                &s.channel(i)[j * l..(j + 1) * l]
            );
        }
    }
    params.insert("patch.w", Tensor::zeros([l, l]));
    let grid = patchify(&s, &params, &cfg).unwrap();
    assert!(grid.tokens().data().iter().all(|&v| v == 0.0));
}

#[test]
fn patchify_truncates_and_rejects_short_input() {
    let state = small_state(2, 4);
    let grid = patchify(&random_sample(2, 14, 3), &state.online, &state.config).unwrap();
    assert_eq!(grid.len(), 2 * 3);
    assert!(patchify(&random_sample(2, 3, 3), &state.online, &state.config).is_err());
}

#[test]
fn embedding_is_additive() {
    let state = small_state(4, 4);
    let names = state.vocab.names().to_vec();
    let d = state.config.d_model;
    let grid = TokenGrid::new(
        Tensor::full([3, d], 0.7),
        vec![
            TokenIndex::Patch {
                channel: 0,
                time: 1,
            },
            TokenIndex::Patch {
                channel: 2,
                time: 1,
            },
            TokenIndex::Patch {
                channel: 0,
                time: 3,
            },
        ],
    )
    .unwrap();
    let e = embed(&grid, &names, &state.vocab, &state.online).unwrap();
    let chan = state.online.get("chan_emb").unwrap();
    let time = state.online.get("time_emb").unwrap();
    for k in 0..d {
        let dc = e.tokens().row(0)[k] - e.tokens().row(1)[k];
        assert!((dc - (chan.row(0)[k] - chan.row(2)[k])).abs() < 1e-15);
        let dt = e.tokens().row(0)[k] - e.tokens().row(2)[k];
        assert!((dt - (time.row(1)[k] - time.row(3)[k])).abs() < 1e-15);
    }
    let flat = zeroed(&state.online, |n| n != "chan_emb" && n != "time_emb");
    assert_eq!(embed(&grid, &names, &state.vocab, &flat).unwrap(), grid);

    let mut bad = names.clone();
    bad[2] = "Oz".into();
    assert!(
        matches!(embed(&grid, &bad, &state.vocab, &state.online), Err(Error::UnknownChannel(n)) if n == "Oz")
    );
}

#[test]
fn token_grid_rejects_duplicates() {
    let ix = vec![
        TokenIndex::Patch {
            channel: 0,
            time: 0
        };
        2
    ];
    assert!(TokenGrid::new(Tensor::zeros([2, 3]), ix).is_err());
    assert!(TokenGrid::new(Tensor::zeros([2, 3]), vec![TokenIndex::Global; 2]).is_err());
    assert!(TokenGrid::new(Tensor::zeros([3, 3]), vec![TokenIndex::Global]).is_err());
}

fn embedded_visible(state: &ModelState, sample: &EegSample, plan: &MaskPlan) -> TokenGrid {
    let grid = patchify(sample, &state.online, &state.config).unwrap();
    let grid = embed(&grid, sample.channels(), &state.vocab, &state.online).unwrap();
    grid.select(&plan.visible_positions())
        .unwrap()
        .with_global(state.online.get("global").unwrap())
        .unwrap()
}

#[test]
fn encoder_shape_and_attention_rows() {
    let state = small_state(4, 4);
    let sample = random_sample(4, 16, 4);
    let plan = sample_mask(4, 4, 0.5, &mut stream(1, &[])).unwrap();
    let input = embedded_visible(&state, &sample, &plan);
    assert_eq!(input.len(), 2 * 4 + 1);
    let out = encode(&input, &state.online, &state.config, true).unwrap();
    assert_eq!(out.grid.len(), 9);
    assert_eq!(out.grid.width(), 8);
    let maps = out.attention.unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].len(), 2);
    for a in &maps[0] {
        for r in 0..a.rows() {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let only_global = TokenGrid::new(Tensor::full([1, 8], 0.3), vec![TokenIndex::Global]).unwrap();
    let one = encode(&only_global, &state.online, &state.config, true).unwrap();
    for a in &one.attention.unwrap()[0] {
        assert_eq!(a.data(), &[1.0]);
    }
    let no_global = input.take_rows(&[0, 1, 2]).unwrap();
    assert!(encode(&no_global, &state.online, &state.config, false).is_err());
}

#[test]
fn encoder_is_permutation_consistent() {
    let state = small_state(4, 4);
    let sample = random_sample(4, 16, 5);
    let plan = sample_mask(4, 4, 0.5, &mut stream(2, &[])).unwrap();
    let input = embedded_visible(&state, &sample, &plan);
    let n = input.len();
    let perm: Vec<usize> = (0..n).rev().collect();
    let a = encode(&input, &state.online, &state.config, false)
        .unwrap()
        .grid;
    let b = encode(
        &input.take_rows(&perm).unwrap(),
        &state.online,
        &state.config,
        false,
    )
    .unwrap()
    .grid;
    for (r, &p) in perm.iter().enumerate() {
        assert_eq!(b.index()[r], a.index()[p]);
        for (x, y) in b.tokens().row(r).iter().zip(a.tokens().row(p)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn decoder_shape_and_shared_mask_token() {
    let cfg = ModelConfig {
        max_patches: 16,
        ..ModelConfig::tiny8()
    };
    let state = ModelState::init(cfg, ChannelVocabulary::grid(16), 0).unwrap();
    let sample = random_sample(16, 800, 6);
    let plan = sample_mask(16, 16, 0.5, &mut stream(3, &[])).unwrap();
    let enc = encode(
        &embedded_visible(&state, &sample, &plan),
        &state.online,
        &state.config,
        false,
    )
    .unwrap();
    let rec = decode(&enc.grid, &plan, sample.channels(), &state).unwrap();
    assert_eq!(rec.shape(), &[16, 16, 50]);

    let mut flat = state.clone();
    flat.decoder = zeroed(&state.decoder, |n| {
        n == "head.b" || n == "mask_token" || n.ends_with(".g")
    });
    let rec = decode(&enc.grid, &plan, sample.channels(), &flat).unwrap();
    let masked = plan.masked_positions();
    let (i0, j0) = masked[0];
    let first = rec.row(i0 * 16 + j0).to_vec();
    for &(i, j) in &masked[1..] {
        assert_eq!(rec.row(i * 16 + j), first.as_slice());
    }

    let partial = enc.grid.take_rows(&[0, 1]).unwrap();
    assert!(decode(&partial, &plan, sample.channels(), &state).is_err());
}

#[test]
fn momentum_matches_online_when_weights_agree() {
    let state = small_state(4, 4);
    let sample = random_sample(4, 16, 7);
    let plan = sample_mask(4, 4, 0.5, &mut stream(4, &[])).unwrap();
    let input = embedded_visible(&state, &sample, &plan);
    let online = encode(&input, &state.online, &state.config, false)
        .unwrap()
        .grid;
    let g_row = online.global_row().unwrap();
    let patches = input
        .take_rows(&(0..input.len() - 1).collect::<Vec<_>>())
        .unwrap();
    let m = momentum_encode(&patches, &state).unwrap();
    assert_eq!(m.shape(), &[8]);
    assert_eq!(m.data(), online.tokens().row(g_row));

    let mut bumped = patches.tokens().data().to_vec();
    bumped[0] += 0.5;
    let bumped = TokenGrid::new(
        Tensor::new(patches.tokens().shape().to_vec(), bumped).unwrap(),
        patches.index().to_vec(),
    )
    .unwrap();
    let m2 = momentum_encode(&bumped, &state).unwrap();
    assert!(m.max_abs_diff(&m2) > 1e-6);
}

#[test]
fn graph_passes_agree_with_token_pipeline() {
    let state = small_state(4, 4);
    let sample = random_sample(4, 16, 8);
    let plan = sample_mask(4, 4, 0.5, &mut stream(5, &[])).unwrap();
    let rows = state.channel_rows(sample.channels()).unwrap();

    let enc = encode(
        &embedded_visible(&state, &sample, &plan),
        &state.online,
        &state.config,
        false,
    )
    .unwrap();
    let rec = decode(&enc.grid, &plan, sample.channels(), &state).unwrap();
    let global = enc
        .grid
        .tokens()
        .row(enc.grid.global_row().unwrap())
        .to_vec();

    let mut g = Graph::inference();
    let e = state.online.bind(&mut g, false);
    let d = state.decoder.bind(&mut g, false);
    let x = g.constant(Tensor::new(vec![4, 16], sample.data().to_vec()).unwrap());
    let pass = mem_pass(&mut g, &e, &d, &state.config, x, &rows, &plan).unwrap();
    assert!(
        g.value(pass.recon)
            .reshape([4, 4, 4])
            .unwrap()
            .max_abs_diff(&rec)
            < 1e-12
    );
    let gl = g.value(pass.global).data().to_vec();
    assert!(gl.iter().zip(&global).all(|(a, b)| (a - b).abs() < 1e-12));
    let gp = global_pass(&mut g, &e, &state.config, x, &rows, &plan).unwrap();
    assert_eq!(g.value(gp).data(), gl.as_slice());
}

#[test]
fn reconstruction_gradient_wrt_mask_token() {
    let state = small_state(4, 4);
    let sample = random_sample(4, 16, 9);
    let plan = sample_mask(4, 4, 0.5, &mut stream(6, &[])).unwrap();
    let rows = state.channel_rows(sample.channels()).unwrap();
    let target = Tensor::new(vec![16, 4], sample.data().to_vec()).unwrap();
    let mask_token = state.decoder.get("mask_token").unwrap().clone();
    let f = |g: &mut Graph, v: &[crate::diff::Var]| {
        let e = state.online.bind(g, false);
        let mut dec = state.decoder.clone();
        dec.insert("mask_token", Tensor::zeros([1, 8]));
        let mut d = dec.bind(g, false);
        d = d.with("mask_token", v[0]);
        let x = g.constant(Tensor::new(vec![4, 16], sample.data().to_vec()).unwrap());
        let pass = mem_pass(g, &e, &d, &state.config, x, &rows, &plan).map_err(|e| match e {
            Error::Diff(d) => d,
            other => panic!("{other}"),
        })?;
        let t = g.constant(target.clone());
        let diff = g.sub(pass.recon, t)?;
        let sq = g.square(diff);
        Ok(g.sum(sq))
    };
    let coords: Vec<(usize, usize)> = (0..8).map(|k| (0, k)).collect();
    let report = grad_check_coords(f, &[mask_token], 1e-5, &coords).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
