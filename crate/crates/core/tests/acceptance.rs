//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line per criterion. Failures are reported in the summary line;
//! set `ACCEPTANCE_STRICT=1` to also exit non-zero.
//!
//! `ACCEPTANCE_ONLY=A1,A5` restricts the run. `LIPAUTH_REGEN_GOLDEN=1`
//! rewrites the stored preprocessing golden files after checking them
//! against the independent oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lipauth::authstore::EnrollmentStore;
use lipauth::config::RunConfig;
use lipauth::dataset::ClipBank;
use lipauth::eval::{self, ScoreSet, VerificationReport};
use lipauth::par::Execution;
use lipauth::preprocess::{self, BoundingBox, Image, LandmarkFrame, PreprocessConfig};
use lipauth::slowfast::{self, InputShape, SlowFastConfig, SlowFastModel, StageConfig};
use lipauth::synth::{self, CorpusConfig};
use lipauth::tensor::{compare_gradients, grad_check, GradCheckReport, ParamStore, Tape, Tensor, Var};
use lipauth::triplet::{self, Hardness, NegativeFilter, TrainConfig, Trainer, TripletUniverse};
use lipauth::ClipId;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), 1.0, r)
}

// ---------------------------------------------------------------- A1

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// `sum(y ⊙ r)` so a tensor-valued op becomes a scalar with a generic
/// upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, r: Var) -> lipauth::tensor::Result<Var> {
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn mini_config() -> SlowFastConfig {
    SlowFastConfig {
        alpha: 2,
        beta: 0.5,
        clip_length: 4,
        stages: vec![
            StageConfig {
                slow_channels: 4,
                kernel: [3, 3, 3],
                spatial_stride: 2,
            },
            StageConfig {
                slow_channels: 4,
                kernel: [1, 3, 3],
                spatial_stride: 1,
            },
        ],
        embed_dim: 4,
        input: InputShape {
            height: 6,
            width: 8,
            channels: 3,
        },
        lateral_multiplier: 2,
    }
}

/// Checks parameter gradients of `f` against central differences over
/// every parameter element.
fn param_grad_check<F>(params: &ParamStore<f64>, f: F) -> Result<GradCheckReport, String>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, String>,
{
    let value = |p: &ParamStore<f64>| -> Result<f64, String> {
        let mut tape = Tape::new();
        let out = f(&mut tape, p)?;
        Ok(tape.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let seed = Tensor::full(tape.value(out).shape().to_vec(), 1.0);
    let grads = tape.backward(out, &seed).map_err(|e| e.to_string())?;
    let pg = grads.param_grads(params.len());
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = params.clone();
    for i in 0..params.len() {
        let n = params.get(i).tensor.numel();
        analytic.push(pg.get(i).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]));
        let mut col = Vec::with_capacity(n);
        for j in 0..n {
            let orig = params.get(i).tensor.data()[j];
            work.get_mut(i).tensor.data_mut()[j] = orig + STEP;
            let up = value(&work)?;
            work.get_mut(i).tensor.data_mut()[j] = orig - STEP;
            let down = value(&work)?;
            work.get_mut(i).tensor.data_mut()[j] = orig;
            col.push((up - down) / (2.0 * STEP));
        }
        numeric.push(col);
    }
    Ok(compare_gradients(&analytic, &numeric, TOL))
}

fn a1() -> Check {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, r: GradCheckReport| -> Result<(), String> {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(r.max_rel_err);
        ensure(r.pass, || format!("{name}: max rel err {:.3e} at {:?}", r.max_rel_err, r.worst))
    };
    let gc = |f: &dyn Fn(&mut Tape<f64>, &[Var]) -> lipauth::tensor::Result<Var>, inputs: &[Tensor<f64>]| {
        grad_check(f, inputs, STEP, TOL).map_err(|e| e.to_string())
    };
    let mcfg = mini_config();
    for seed in 0..10u64 {
        let r = &mut rng(1000 + seed);
        let stride = if seed % 2 == 0 { [1, 1, 1] } else { [1, 2, 2] };
        let x = rand_tensor(&[4, 5, 6, 2], r);
        let k = rand_tensor(&[3, 3, 3, 2, 3], r);
        let out_h = lipauth::tensor::conv_output_len(5, 3, stride[1], 1).ok_or("conv geometry")?;
        let out_w = lipauth::tensor::conv_output_len(6, 3, stride[2], 1).ok_or("conv geometry")?;
        let w = rand_tensor(&[4, out_h, out_w, 3], r);
        record(
            "conv3d",
            gc(
                &|t, v| {
                    let y = t.conv3d(v[0], v[1], stride, [1, 1, 1])?;
                    weighted_sum(t, y, v[2])
                },
                &[x, k, w],
            )?,
        )?;

        let x = rand_tensor(&[3, 4, 5], r);
        let w = rand_tensor(&[3, 4, 5], r);
        record(
            "relu",
            gc(
                &|t, v| {
                    let y = t.relu(v[0]);
                    weighted_sum(t, y, v[1])
                },
                &[x, w],
            )?,
        )?;

        let x = rand_tensor(&[2, 3, 4, 5], r);
        let (s, b) = (rand_tensor(&[5], r), rand_tensor(&[5], r));
        let w = rand_tensor(&[2, 3, 4, 5], r);
        record(
            "channel_affine",
            gc(
                &|t, v| {
                    let y = t.channel_affine(v[0], v[1], v[2])?;
                    weighted_sum(t, y, v[3])
                },
                &[x, s, b, w],
            )?,
        )?;

        let x = rand_tensor(&[3, 4, 5, 6], r);
        let w = rand_tensor(&[6], r);
        record(
            "global_avg_pool",
            gc(
                &|t, v| {
                    let y = t.global_avg_pool(v[0])?;
                    weighted_sum(t, y, v[1])
                },
                &[x, w],
            )?,
        )?;

        let (x, wt, b, w) = (
            rand_tensor(&[7], r),
            rand_tensor(&[7, 5], r),
            rand_tensor(&[5], r),
            rand_tensor(&[5], r),
        );
        record(
            "linear",
            gc(
                &|t, v| {
                    let y = t.linear(v[0], v[1], v[2])?;
                    weighted_sum(t, y, v[3])
                },
                &[x, wt, b, w],
            )?,
        )?;

        // Fusion op on its own, then inside a two-stage miniature network.
        let alpha = 4;
        let (fast, slow) = (rand_tensor(&[8, 3, 4, 2], r), rand_tensor(&[2, 3, 4, 4], r));
        let (lw, lb) = (rand_tensor(&[alpha, 1, 1, 2, 3], r), rand_tensor(&[3], r));
        let w = rand_tensor(&[2, 3, 4, 7], r);
        record(
            "lateral_fuse",
            gc(
                &|t, v| {
                    let y = slowfast::lateral_fuse(t, v[0], v[1], v[2], v[3], alpha)?;
                    weighted_sum(t, y, v[4])
                },
                &[fast, slow, lw, lb, w],
            )?,
        )?;

        let model = SlowFastModel::build(mcfg.clone(), seed).map_err(|e| e.to_string())?;
        let mut params: ParamStore<f64> = model.params().cast();
        // Offsets start at zero, which parks dead-ReLU outputs exactly on
        // the kink; check at a generic point instead.
        for p in params.iter_mut().filter(|p| p.name.ends_with("shift") || p.name.ends_with("bias")) {
            for v in p.tensor.data_mut() {
                *v = r.random_range(-0.2..0.2);
            }
        }
        let clip_shape = [4, 6, 8, 3];
        let a = Tensor::<f64>::uniform(clip_shape.to_vec(), 0.5, r);
        let b = Tensor::<f64>::uniform(clip_shape.to_vec(), 0.5, r);
        let c = Tensor::<f64>::uniform(clip_shape.to_vec(), 0.5, r);
        let shift = |t: Tensor<f64>| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + 0.5).collect()).unwrap();
        let (a, b, c) = (shift(a), shift(b), shift(c));
        let embed = |t: &mut Tape<f64>, p: &ParamStore<f64>, x: Var| -> lipauth::tensor::Result<Var> {
            slowfast::forward(&mcfg, p, t, x)
                .map(|f| f.embedding)
                .map_err(|e| lipauth::tensor::TensorError::Usage(e.to_string()))
        };
        let params_ref = &params;
        record(
            "lateral_fuse (2-stage network)",
            gc(
                &|t, v| {
                    let e = embed(t, params_ref, v[0])?;
                    let w = t.leaf(Tensor::full(vec![4], 0.3));
                    weighted_sum(t, e, w)
                },
                std::slice::from_ref(&a),
            )?,
        )?;
        record(
            "cosine_distance∘embed (inputs)",
            gc(
                &|t, v| {
                    let (ea, eb) = (embed(t, params_ref, v[0])?, embed(t, params_ref, v[1])?);
                    t.cosine_distance(ea, eb)
                },
                &[a.clone(), b.clone()],
            )?,
        )?;
        let (la, lb_) = (a.clone(), b.clone());
        record(
            "cosine_distance∘embed (parameters)",
            param_grad_check(&params, |t, p| {
                let xa = t.leaf(la.clone());
                let xb = t.leaf(lb_.clone());
                let (ea, eb) = (embed(t, p, xa).map_err(|e| e.to_string())?, embed(t, p, xb).map_err(|e| e.to_string())?);
                t.cosine_distance(ea, eb).map_err(|e| e.to_string())
            })?,
        )?;

        let vs: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[8], r)).collect();
        let loss = |t: &mut Tape<f64>, a: Var, p: Var, n: Var| -> lipauth::tensor::Result<Var> {
            let dap = t.cosine_distance(a, p)?;
            let dan = t.cosine_distance(a, n)?;
            t.triplet_loss(dap, dan, 0.7)
        };
        record("triplet_loss composition (vectors)", gc(&|t, v| loss(t, v[0], v[1], v[2]), &vs)?)?;
        let (pa, pp, pn) = (a.clone(), b.clone(), c.clone());
        record(
            "triplet_loss composition (network parameters)",
            param_grad_check(&params, |t, p| {
                let xs = [&pa, &pp, &pn].map(|x| t.leaf(x.clone()));
                let mut e = Vec::new();
                for x in xs {
                    e.push(embed(t, p, x).map_err(|e| e.to_string())?);
                }
                loss(t, e[0], e[1], e[2]).map_err(|e| e.to_string())
            })?,
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("runtime {secs:.1}s exceeds 60s"))?;
    let max = worst.values().copied().fold(0.0, f64::max);
    Ok(format!(
        "{} checks x 10 seeds, worst rel err {max:.2e} (tol {TOL:.0e}), {secs:.1}s",
        worst.len()
    ))
}

// ---------------------------------------------------------------- A2

fn a2() -> Check {
    let examples = [
        (0.7, 0.7, 0.7, 0.7),
        (0.2, 1.0, 0.7, 0.0),
        (0.5, 0.4, 0.7, 0.8),
    ];
    for (dap, dan, m, want) in examples {
        let got = triplet::triplet_loss(dap, dan, m);
        ensure(
            (got - want).abs() <= 1e-15,
            || format!("triplet_loss({dap}, {dan}, {m}) = {got}, want {want}"),
        )?;
    }
    let classes = [
        (0.3, 1.2, 0.7, Hardness::Easy),
        (0.3, 0.6, 0.7, Hardness::SemiHard),
        (0.5, 0.4, 0.7, Hardness::Hard),
        (0.5, 0.5, 0.7, Hardness::Hard),
    ];
    for (dap, dan, m, want) in classes {
        let got = triplet::classify_triplet(dap, dan, m);
        ensure(got == want, || format!("classify({dap}, {dan}, {m}) = {got:?}, want {want:?}"))?;
    }
    let bc = triplet::batch_cost(&[0.0, 0.7, 0.1]).map_err(|e| e.to_string())?;
    ensure((bc.sum - 0.8).abs() < 1e-15 && (bc.mean - 0.8 / 3.0).abs() < 1e-15, || format!("{bc:?}"))?;

    let m = 0.7;
    let mut counts = [0usize; 3];
    for i in 0..200 {
        for j in 0..200 {
            let dap = 2.0 * i as f64 / 199.0;
            let dan = 2.0 * j as f64 / 199.0;
            let loss = triplet::triplet_loss(dap, dan, m);
            let want = if dan <= dap {
                Hardness::Hard
            } else if dan <= dap + m {
                Hardness::SemiHard
            } else {
                Hardness::Easy
            };
            let got = triplet::classify_triplet(dap, dan, m);
            ensure(got == want, || format!("grid ({dap}, {dan}): {got:?}, want {want:?}"))?;
            let consistent = match got {
                Hardness::Hard => loss >= m,
                Hardness::SemiHard => (0.0..m).contains(&loss),
                Hardness::Easy => loss == 0.0,
            };
            ensure(consistent, || format!("grid ({dap}, {dan}): loss {loss} inconsistent with {got:?}"))?;
            counts[got as usize] += 1;
        }
    }
    Ok(format!(
        "substitution examples exact; 40000 grid points partitioned easy/semi/hard = {}/{}/{}",
        counts[0], counts[1], counts[2]
    ))
}

// ---------------------------------------------------------------- A3

/// Counts triplets straight from the definition.
fn universe_oracle(p: usize, r: usize, e: usize) -> BTreeSet<(ClipId, ClipId, ClipId)> {
    let mut all = Vec::new();
    for c in 0..p as u32 {
        for ph in 0..r as u32 {
            for em in 0..e as u32 {
                all.push(ClipId::new(c, ph, em));
            }
        }
    }
    let mut out = BTreeSet::new();
    for a in &all {
        for pos in &all {
            if pos.client != a.client || pos.phrase != a.phrase || pos.emotion == a.emotion {
                continue;
            }
            for n in &all {
                let other_client = n.client != a.client;
                let same_client_other_phrase = n.client == a.client && n.phrase != a.phrase;
                if other_client || same_client_other_phrase {
                    out.insert((*a, *pos, *n));
                }
            }
        }
    }
    out
}

fn a3() -> Check {
    let start = Instant::now();
    for (p, r, e, want) in [(66, 12, 6, 112_764_960u64), (11, 12, 6, 3_112_560)] {
        let got = triplet::triplet_universe_size(p, r, e).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("size({p},{r},{e}) = {got}, want {want}"))?;
    }
    let mut cases = 0;
    for p in 2..=4 {
        for r in 2..=3 {
            for e in 2..=3 {
                let oracle = universe_oracle(p, r, e);
                let closed = triplet::triplet_universe_size(p, r, e).map_err(|e| e.to_string())?;
                ensure(closed == oracle.len() as u64, || {
                    format!("({p},{r},{e}): closed form {closed}, enumeration {}", oracle.len())
                })?;
                let listed: BTreeSet<_> = triplet::enumerate_triplets(p, r, e)
                    .map_err(|e| e.to_string())?
                    .map(|t| (t.anchor, t.positive, t.negative))
                    .collect();
                ensure(listed == oracle, || format!("({p},{r},{e}): enumerate_triplets differs"))?;
                let clients: Vec<u32> = (0..p as u32).collect();
                let u = TripletUniverse::new(&clients, r, e, NegativeFilter::All).map_err(|e| e.to_string())?;
                let indexed: BTreeSet<_> = (0..u.size())
                    .map(|i| u.get(i).expect("in range"))
                    .map(|t| (t.anchor, t.positive, t.negative))
                    .collect();
                ensure(indexed == oracle, || format!("({p},{r},{e}): indexed universe differs"))?;
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("runtime {secs:.1}s exceeds 10s"))?;
    Ok(format!("66- and 11-client sizes exact; {cases} (P,R,E) cases match enumeration; {secs:.2}s"))
}

// ---------------------------------------------------------------- A4

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// Analytic frames the golden landmark stream is applied to.
fn golden_frames(n: usize) -> Vec<Image> {
    let (h, w) = (64, 96);
    (0..n)
        .map(|t| {
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let phase = 0.11 * x as f64 + 0.07 * (c + 1) as f64 * y as f64 + 0.3 * t as f64 + c as f64;
                        data.push((0.5 + 0.45 * phase.sin()) as f32);
                    }
                }
            }
            Image::new(h, w, 3, data).unwrap()
        })
        .collect()
}

/// Straight-line f64 implementation of the crop pipeline.
fn oracle_preprocess(frames: &[Image], marks: &[LandmarkFrame], cfg: &PreprocessConfig) -> Vec<f64> {
    let (tw, th) = (cfg.target_width, cfg.target_height);
    let crops: Vec<Vec<f64>> = frames
        .iter()
        .zip(marks)
        .map(|(f, lm)| {
            let xs: Vec<f64> = lm.points().iter().map(|p| p.0).collect();
            let ys: Vec<f64> = lm.points().iter().map(|p| p.1).collect();
            let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (x0, x1, y0, y1) = (min(&xs), max(&xs), min(&ys), max(&ys));
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let (mut bw, mut bh) = (x1 - x0, y1 - y0);
            let ar = cfg.target_aspect_ratio;
            if bw / bh < ar {
                bw = bh * ar;
            } else {
                bh = bw / ar;
            }
            let (bx, by) = (cx - bw / 2.0, cy - bh / 2.0);
            let px = |yy: i64, xx: i64, c: usize| -> f64 {
                let yy = yy.clamp(0, f.height as i64 - 1) as usize;
                let xx = xx.clamp(0, f.width as i64 - 1) as usize;
                f.data[(yy * f.width + xx) * 3 + c] as f64
            };
            let mut out = Vec::with_capacity(th * tw * 3);
            for v in 0..th {
                for u in 0..tw {
                    let sx = bx + (u as f64 + 0.5) * bw / tw as f64 - 0.5;
                    let sy = by + (v as f64 + 0.5) * bh / th as f64 - 0.5;
                    let (ix, iy) = (sx.floor() as i64, sy.floor() as i64);
                    let (fx, fy) = (sx - sx.floor(), sy - sy.floor());
                    for c in 0..3 {
                        let val = px(iy, ix, c) * (1.0 - fx) * (1.0 - fy)
                            + px(iy, ix + 1, c) * fx * (1.0 - fy)
                            + px(iy + 1, ix, c) * (1.0 - fx) * fy
                            + px(iy + 1, ix + 1, c) * fx * fy;
                        out.push(val.clamp(0.0, 1.0));
                    }
                }
            }
            out
        })
        .collect();
    let (n, t) = (crops.len(), cfg.clip_length);
    (0..t)
        .flat_map(|i| {
            let k = if n >= t {
                (i as f64 * (n - 1) as f64 / (t - 1) as f64).round() as usize
            } else {
                i.min(n - 1)
            };
            crops[k].clone()
        })
        .collect()
}

fn a4() -> Check {
    let cases = [
        ((30.0, 12.0), (30.0, 18.0)),
        ((10.0, 6.0), (10.0, 6.0)),
        ((10.0, 10.0), (50.0 / 3.0, 10.0)),
    ];
    for ((w, h), (ew, eh)) in cases {
        let b = BoundingBox {
            x_min: 5.0,
            y_min: 7.0,
            x_max: 5.0 + w,
            y_max: 7.0 + h,
        };
        let out = preprocess::adjust_aspect(b, 5.0 / 3.0);
        let ok = (out.width() - ew).abs() <= 1e-9
            && (out.height() - eh).abs() <= 1e-9
            && (out.center().0 - b.center().0).abs() <= 1e-9
            && (out.center().1 - b.center().1).abs() <= 1e-9;
        ensure(ok, || format!("adjust_aspect {w}x{h} -> {}x{}", out.width(), out.height()))?;
    }

    // Bilinear probes on a 60x36 region of a gradient image.
    let (fh, fw) = (64, 96);
    let grad: Vec<f32> = (0..fh * fw)
        .flat_map(|i| {
            let (y, x) = ((i / fw) as f32, (i % fw) as f32);
            [x / 96.0, y / 64.0, (x + y) / 160.0]
        })
        .collect();
    let frame = Image::new(fh, fw, 3, grad).unwrap();
    let region = BoundingBox {
        x_min: 13.0,
        y_min: 9.5,
        x_max: 73.0,
        y_max: 45.5,
    };
    let cfg = PreprocessConfig::default();
    let crop = preprocess::crop_resize(&frame, &region, &cfg).map_err(|e| e.to_string())?;
    for (u, v) in [(0usize, 0usize), (29, 17), (14, 9), (7, 3), (22, 12)] {
        let sx = 13.0 + (u as f64 + 0.5) * 2.0 - 0.5;
        let sy = 9.5 + (v as f64 + 0.5) * 2.0 - 0.5;
        // Linear image: bilinear interpolation reproduces it exactly.
        let want = [sx / 96.0, sy / 64.0, (sx + sy) / 160.0];
        for c in 0..3 {
            let got = crop.pixel(v, u)[c] as f64;
            ensure((got - want[c]).abs() <= 1e-5, || format!("probe ({u},{v}) c{c}: {got} vs {}", want[c]))?;
        }
    }

    let marks_path = data_dir().join("golden_stream.landmarks.csv");
    let clip_path = data_dir().join("golden_clip.clp");
    let regen = std::env::var_os("LIPAUTH_REGEN_GOLDEN").is_some();
    let marks = if regen {
        let corpus = CorpusConfig::default();
        let utt = synth::render_clip(&corpus, ClipId::new(3, 1, 2));
        utt.landmarks
    } else {
        preprocess::read_landmarks_file(&marks_path).map_err(|e| format!("{e} (set LIPAUTH_REGEN_GOLDEN=1 to create)"))?
    };
    let frames = golden_frames(marks.len());
    let clip = preprocess::preprocess_clip(&frames, &marks, &cfg, ClipId::default()).map_err(|e| e.to_string())?;
    let oracle = oracle_preprocess(&frames, &marks, &cfg);
    let worst_oracle = clip
        .frames
        .data()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    ensure(clip.frames.numel() == oracle.len(), || "oracle length differs".into())?;
    ensure(worst_oracle <= 1e-5, || format!("pipeline differs from oracle by {worst_oracle:.2e}"))?;
    if regen {
        std::fs::create_dir_all(data_dir()).map_err(|e| e.to_string())?;
        preprocess::write_landmarks_file(&marks_path, &marks).map_err(|e| e.to_string())?;
        preprocess::write_clip_file(&clip_path, &clip.frames).map_err(|e| e.to_string())?;
    }
    let golden = preprocess::read_clip_file(&clip_path).map_err(|e| e.to_string())?;
    ensure(golden.shape() == clip.frames.shape(), || {
        format!("golden shape {:?} vs {:?}", golden.shape(), clip.frames.shape())
    })?;
    let worst_golden = golden
        .data()
        .iter()
        .zip(clip.frames.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    ensure(worst_golden <= 1e-5, || format!("golden clip differs by {worst_golden:.2e}"))?;
    Ok(format!(
        "3 hand traces to 1e-9; 5 bilinear probes; {}-frame golden stream max diff {worst_golden:.1e} (oracle {worst_oracle:.1e})",
        marks.len()
    ))
}

// ---------------------------------------------------------------- A5

/// Interpolated EER from a brute-force count at every distinct score.
fn eer_oracle(s: &ScoreSet) -> f64 {
    let rates = |t: f64| {
        let far = s.imposter.iter().filter(|&&x| x >= t).count() as f64 / s.imposter.len() as f64;
        let frr = s.genuine.iter().filter(|&&x| x < t).count() as f64 / s.genuine.len() as f64;
        (far, frr)
    };
    let mut ts: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(ts[ts.len() - 1] + 1.0);
    let mut prev = rates(ts[0]);
    for &t in &ts[1..] {
        let cur = rates(t);
        if cur.1 >= cur.0 {
            let (d0, d1) = (prev.0 - prev.1, cur.0 - cur.1);
            let w = if d0 > d1 { d0 / (d0 - d1) } else { 0.0 };
            return ((prev.0 + w * (cur.0 - prev.0)) + (prev.1 + w * (cur.1 - prev.1))) / 2.0;
        }
        prev = cur;
    }
    unreachable!()
}

fn largest_jump(s: &ScoreSet) -> f64 {
    let jump = |v: &[f64]| {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for x in v {
            *counts.entry(x.to_bits()).or_default() += 1;
        }
        *counts.values().max().unwrap() as f64 / v.len() as f64
    };
    jump(&s.genuine).max(jump(&s.imposter))
}

fn a5() -> Check {
    let step = 0.001;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..100u64 {
        let r = &mut rng(500 + k);
        let ng = r.random_range(5..300);
        let ni = r.random_range(5..300);
        let (mg, mi) = (r.random_range(0.3..0.9), r.random_range(0.1..0.7));
        let spread = r.random_range(0.05..0.4);
        // Every fourth set is quantized to force ties.
        let q = |v: f64| if k % 4 == 0 { (v * 50.0).round() / 50.0 } else { v };
        let mut draw = |m: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| q((m + spread * (r.random::<f64>() - 0.5) * 2.0).clamp(0.0, 1.0)))
                .collect()
        };
        let s = ScoreSet::new(draw(mg, ng), draw(mi, ni)).map_err(|e| e.to_string())?;
        let curve = eval::sweep(&s, step).map_err(|e| e.to_string())?;
        let (e, t) = eval::eer(&curve).map_err(|e| e.to_string())?;
        let exact = eval::exact_eer(&s).map_err(|e| e.to_string())?;
        let oracle = eer_oracle(&s);
        ensure((exact.eer - oracle).abs() <= 1e-12, || format!("set {k}: exact {} vs oracle {oracle}", exact.eer))?;
        // The swept rates move in jumps of one tie group; the grid cannot
        // resolve the crossing more finely than the largest such jump.
        let tol = step.max(largest_jump(&s));
        ensure((e - oracle).abs() <= tol, || format!("set {k}: sweep EER {e} vs exact {oracle}, tol {tol}"))?;
        worst_excess = worst_excess.max((e - oracle).abs() - tol);
        ensure(curve.len() == 1001 && curve[0].threshold == 0.0 && curve[1000].threshold == 1.0, || {
            format!("set {k}: bad grid")
        })?;
        for w in curve.windows(2) {
            ensure(w[1].far <= w[0].far && w[1].frr >= w[0].frr, || {
                format!("set {k}: monotonicity broken at t = {}", w[1].threshold)
            })?;
        }
        for p in &curve {
            ensure((0.0..=1.0).contains(&p.far) && (0.0..=1.0).contains(&p.frr), || format!("set {k}: rate out of range"))?;
        }
        ensure(curve.iter().any(|p| p.threshold == t), || format!("set {k}: EER threshold off grid"))?;
    }
    Ok(format!(
        "100 score sets: sweep EER within max(step, largest rate jump) of the exact oracle (closest margin {:.2e}); FAR/FRR monotone",
        -worst_excess
    ))
}

// ---------------------------------------------------------------- A6 / A9

struct Desk {
    cfg: RunConfig,
    train_clients: Vec<u32>,
    test_clients: Vec<u32>,
    train_bank: ClipBank,
    test_bank: ClipBank,
    runs: BTreeMap<(usize, u64), DeskResult>,
}

#[derive(Clone, Debug)]
struct DeskResult {
    model: SlowFastModel,
    eer: f64,
    eer_threshold: f64,
    exact_eer: f64,
    mean_dap: f64,
    mean_dan: f64,
    iterations: usize,
    stopped_at: Option<usize>,
    secs: f64,
}

struct AuthRates {
    genuine_accept: f64,
    n_genuine: usize,
    other_phrase_reject: f64,
    n_other_phrase: usize,
}

impl Desk {
    fn new() -> Result<Self, String> {
        let cfg = RunConfig::default();
        cfg.validate().map_err(|e| e.to_string())?;
        let splits = cfg.corpus.assign_splits();
        let exec = Execution::default();
        let train_bank =
            ClipBank::render(&cfg.corpus, &splits.train, &cfg.preprocess, exec).map_err(|e| e.to_string())?;
        let test_bank = ClipBank::render(&cfg.corpus, &splits.test, &cfg.preprocess, exec).map_err(|e| e.to_string())?;
        Ok(Self {
            cfg,
            train_clients: splits.train,
            test_clients: splits.test,
            train_bank,
            test_bank,
            runs: BTreeMap::new(),
        })
    }

    fn score(&self, model: &SlowFastModel, train_clients: &[u32]) -> Result<(VerificationReport, f64, f64), String> {
        let ev = &self.cfg.eval;
        let s = eval::score_pairs(
            model,
            &self.test_bank,
            &self.test_clients,
            train_clients,
            ev.pair_budget,
            ev.seed,
            Execution::default(),
        )
        .map_err(|e| e.to_string())?;
        let report = VerificationReport::from_scores(&s, ev.sweep_step).map_err(|e| e.to_string())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok((report, 1.0 - mean(&s.genuine), 1.0 - mean(&s.imposter)))
    }

    /// Enrolls every test (client, phrase) from each emotion in turn and
    /// probes with the client's other takes through the enrollment store.
    fn auth_rates(&self, model: &SlowFastModel, threshold: f64) -> Result<AuthRates, String> {
        let c = &self.cfg.corpus;
        let clip = |id: ClipId| self.test_bank.get(id).ok_or_else(|| format!("missing {id}"));
        let (mut genuine, mut n_genuine, mut reject, mut n_other) = (0, 0, 0, 0);
        for enrolled in 0..c.n_emotions as u32 {
            let mut store = EnrollmentStore::new();
            for &client in &self.test_clients {
                for phrase in 0..c.n_phrases as u32 {
                    store
                        .enroll(&client.to_string(), &phrase.to_string(), clip(ClipId::new(client, phrase, enrolled))?, model, 0)
                        .map_err(|e| e.to_string())?;
                }
            }
            for &client in &self.test_clients {
                for phrase in 0..c.n_phrases as u32 {
                    for probe in 0..c.n_phrases as u32 {
                        for emotion in 0..c.n_emotions as u32 {
                            if probe == phrase && emotion == enrolled {
                                continue;
                            }
                            let d = store
                                .authenticate(
                                    &client.to_string(),
                                    &phrase.to_string(),
                                    clip(ClipId::new(client, probe, emotion))?,
                                    model,
                                    threshold,
                                )
                                .map_err(|e| e.to_string())?;
                            if probe == phrase {
                                genuine += d.accepted as usize;
                                n_genuine += 1;
                            } else {
                                reject += !d.accepted as usize;
                                n_other += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(AuthRates {
            genuine_accept: genuine as f64 / n_genuine as f64,
            n_genuine,
            other_phrase_reject: reject as f64 / n_other as f64,
            n_other_phrase: n_other,
        })
    }

    /// Mean relative change of the fast and slow pooled features when each
    /// test clip is replaced by its first frame repeated.
    fn frozen_clip_change(&self, model: &SlowFastModel) -> Result<(f64, f64), String> {
        let pooled = |clip: &Tensor<f32>| -> Result<(Vec<f64>, Vec<f64>), String> {
            let (tape, fwd) = model.trace(clip).map_err(|e| e.to_string())?;
            let get = |v: Var| tape.value(v).data().iter().map(|x| *x as f64).collect::<Vec<_>>();
            Ok((get(fwd.fast_pooled), get(fwd.slow_pooled)))
        };
        let rel = |a: &[f64], b: &[f64]| {
            let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            let base: f64 = a.iter().map(|x| x * x).sum();
            (diff / base).sqrt()
        };
        let (mut fast, mut slow, mut n) = (0.0, 0.0, 0);
        for id in self.test_bank.ids() {
            let clip = self.test_bank.get(id).expect("listed id");
            let per = clip.numel() / clip.shape()[0];
            let first = &clip.data()[..per];
            let frozen = Tensor::new(clip.shape().to_vec(), first.repeat(clip.shape()[0])).map_err(|e| e.to_string())?;
            let (fa, sa) = pooled(clip)?;
            let (fb, sb) = pooled(&frozen)?;
            fast += rel(&fa, &fb);
            slow += rel(&sa, &sb);
            n += 1;
        }
        Ok((fast / n as f64, slow / n as f64))
    }

    /// Trains on the first `n_train` training clients with seed index `k`.
    fn run(&mut self, n_train: usize, k: u64) -> Result<DeskResult, String> {
        if let Some(r) = self.runs.get(&(n_train, k)) {
            return Ok(r.clone());
        }
        let start = Instant::now();
        let clients = self.train_clients[..n_train].to_vec();
        let mut model = SlowFastModel::build(self.cfg.model.clone(), self.cfg.model_seed + k).map_err(|e| e.to_string())?;
        let train_cfg = TrainConfig {
            seed: self.cfg.train.seed + k,
            ..self.cfg.train.clone()
        };
        let history = Trainer::new(&mut model, &self.train_bank, &clients, train_cfg, Execution::default())
            .map_err(|e| e.to_string())?
            .run(|_, _| Ok(()))
            .map_err(|e| e.to_string())?;
        let (report, mean_dap, mean_dan) = self.score(&model, &clients)?;
        let r = DeskResult {
            model,
            eer: report.eer,
            eer_threshold: report.eer_threshold,
            exact_eer: report.exact_eer,
            mean_dap,
            mean_dan,
            iterations: history.iterations(),
            stopped_at: history.stopped_at,
            secs: start.elapsed().as_secs_f64(),
        };
        eprintln!(
            "  desk run: {n_train} train clients, seed {k}: EER {:.4} (exact {:.4}), D(A,P) {:.3}, D(A,N) {:.3}, {} iterations, {:.0}s",
            r.eer, r.exact_eer, r.mean_dap, r.mean_dan, r.iterations, r.secs
        );
        self.runs.insert((n_train, k), r.clone());
        Ok(r)
    }
}

fn a6(desk: &mut Desk) -> Check {
    let untrained = SlowFastModel::build(desk.cfg.model.clone(), desk.cfg.model_seed).map_err(|e| e.to_string())?;
    let (base, _, _) = desk.score(&untrained, &desk.train_clients.clone())?;
    let n = desk.train_clients.len();
    let r = desk.run(n, 0)?;
    ensure(r.iterations <= 2000, || format!("{} iterations", r.iterations))?;
    ensure(r.eer <= 0.10, || format!("test EER {:.4} > 0.10", r.eer))?;
    ensure(r.mean_dap + 0.35 < r.mean_dan, || {
        format!("mean D(A,P) {:.4} + 0.35 >= mean D(A,N) {:.4}", r.mean_dap, r.mean_dan)
    })?;
    ensure(r.secs <= 1200.0, || format!("wall clock {:.0}s > 20 min", r.secs))?;
    let auth = desk.auth_rates(&r.model, r.eer_threshold)?;
    ensure(auth.genuine_accept >= 0.9, || {
        format!("genuine accept rate {:.3} < 0.9 at threshold {:.4}", auth.genuine_accept, r.eer_threshold)
    })?;
    ensure(auth.other_phrase_reject > 0.5, || {
        format!("other-phrase reject rate {:.3} is not a majority", auth.other_phrase_reject)
    })?;
    let (fast_change, slow_change) = desk.frozen_clip_change(&r.model)?;
    Ok(format!(
        "test EER {:.4} (exact {:.4}, untrained {:.4}); D(A,P) {:.3} vs D(A,N) {:.3}; {} iterations (stopped {:?}); {:.0}s on {} thread(s); \
         at threshold {:.4}: genuine accept {:.3} of {}, other-phrase reject {:.3} of {}; \
         frozen-clip pooled change fast {:.3} slow {:.3} (ratio {:.3}, recorded only)",
        r.eer,
        r.exact_eer,
        base.eer,
        r.mean_dap,
        r.mean_dan,
        r.iterations,
        r.stopped_at,
        r.secs,
        rayon_threads(),
        r.eer_threshold,
        auth.genuine_accept,
        auth.n_genuine,
        auth.other_phrase_reject,
        auth.n_other_phrase,
        fast_change,
        slow_change,
        slow_change / fast_change,
    ))
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn a9(desk: &mut Desk) -> Check {
    let sizes = [4, 8, 12];
    let mut good = 0;
    let mut rows = Vec::new();
    for k in 0..5u64 {
        let mut eers = Vec::new();
        for &n in &sizes {
            eers.push(desk.run(n, k)?.eer);
        }
        let ok = eers.windows(2).all(|w| w[1] <= w[0]);
        good += ok as usize;
        rows.push(format!(
            "seed {k}: {}{}",
            eers.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(" -> "),
            if ok { "" } else { " (x)" }
        ));
    }
    let detail = format!("{good}/5 seeds non-increasing over 4/8/12 clients [{}]", rows.join("; "));
    ensure(good >= 4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- A7

fn a7() -> Check {
    let stage = |c, k: [usize; 3], s| StageConfig {
        slow_channels: c,
        kernel: k,
        spatial_stride: s,
    };
    let configs = [
        SlowFastConfig::default(),
        SlowFastConfig {
            alpha: 4,
            beta: 0.25,
            clip_length: 16,
            stages: vec![stage(8, [3, 3, 3], 2), stage(12, [3, 3, 3], 2)],
            embed_dim: 16,
            ..SlowFastConfig::default()
        },
        SlowFastConfig {
            alpha: 2,
            beta: 0.5,
            clip_length: 6,
            stages: vec![stage(6, [1, 3, 3], 1), stage(10, [3, 3, 3], 2), stage(5, [3, 1, 1], 1)],
            embed_dim: 8,
            lateral_multiplier: 1,
            ..SlowFastConfig::default()
        },
        mini_config(),
    ];
    for (ci, cfg) in configs.iter().enumerate() {
        let model = SlowFastModel::build(cfg.clone(), 11 + ci as u64).map_err(|e| e.to_string())?;
        let shape = vec![cfg.clip_length, cfg.input.height, cfg.input.width, cfg.input.channels];
        let mut r = rng(77 + ci as u64);
        let clip = Tensor::<f32>::uniform(shape.clone(), 0.5, &mut r);
        let clip = Tensor::new(shape, clip.data().iter().map(|v| v + 0.5).collect()).unwrap();

        let trace = |params: &ParamStore<f32>| -> Result<(Tape<f32>, slowfast::Forward), String> {
            let mut tape = Tape::new();
            let x = tape.leaf(clip.clone());
            let f = slowfast::forward(cfg, params, &mut tape, x).map_err(|e| e.to_string())?;
            Ok((tape, f))
        };
        let (tape, fwd) = trace(model.params())?;
        for (i, (&fv, &sv)) in fwd.fast.iter().zip(&fwd.slow).enumerate() {
            let (fs, ss) = (tape.value(fv).shape(), tape.value(sv).shape());
            ensure(fs[0] == cfg.clip_length, || format!("config {ci} stage {i}: fast T {} != {}", fs[0], cfg.clip_length))?;
            ensure(ss[0] == cfg.clip_length / cfg.alpha, || format!("config {ci} stage {i}: slow T {}", ss[0]))?;
            let (cf, cs) = (fs[3] as f64, ss[3] as f64);
            ensure((cf - cfg.beta * cs).abs() <= 1.0, || {
                format!("config {ci} stage {i}: fast {cf} vs beta*slow {}", cfg.beta * cs)
            })?;
        }

        // Zero, then scramble, every slow-pathway and lateral parameter.
        let slow_side = |name: &str| name.starts_with("slow.") || name.starts_with("lateral.");
        for variant in 0..2 {
            let mut params = model.params().clone();
            for p in params.iter_mut().filter(|p| slow_side(&p.name)) {
                for v in p.tensor.data_mut() {
                    *v = if variant == 0 { 0.0 } else { r.random_range(-3.0..3.0) };
                }
            }
            let (tape2, fwd2) = trace(&params)?;
            for (i, (&a, &b)) in fwd.fast.iter().zip(&fwd2.fast).enumerate() {
                ensure(tape.value(a).data() == tape2.value(b).data(), || {
                    format!("config {ci} stage {i}: fast activations moved when slow params changed")
                })?;
            }
        }

        // No gradient path from the fast output back into slow parameters.
        let last = *fwd.fast.last().expect("stages");
        let mut tape = tape;
        let total = tape.sum(last);
        let grads = tape.backward(total, &Tensor::scalar(1.0)).map_err(|e| e.to_string())?;
        let pg = grads.param_grads(model.params().len());
        for (i, p) in model.params().iter().enumerate() {
            if slow_side(&p.name) {
                let zero = pg.get(i).is_none_or(|g| g.iter().all(|v| *v == 0.0));
                ensure(zero, || format!("config {ci}: {} receives gradient from the fast output", p.name))?;
            }
        }
    }
    Ok(format!(
        "{} configs: fast T = T, slow T = T/alpha, channel ratio within rounding; fast path invariant to slow parameters",
        configs.len()
    ))
}

// ---------------------------------------------------------------- A8

fn a8() -> Check {
    let err = eval::check_open_set(&[1, 2, 3], &[3, 4]).unwrap_err();
    ensure(matches!(&err, eval::EvalError::Protocol { overlap } if overlap == &vec![3]), || {
        format!("open-set guard: {err}")
    })?;
    eval::check_open_set(&[1, 2], &[3, 4]).map_err(|e| e.to_string())?;

    let corpus = CorpusConfig::default();
    let splits = corpus.assign_splits();
    let pre = PreprocessConfig::default();
    let bank = ClipBank::render(&corpus, &splits.test, &pre, Execution::default()).map_err(|e| e.to_string())?;
    let model = SlowFastModel::build(SlowFastConfig::default(), 3).map_err(|e| e.to_string())?;
    let guard = eval::score_pairs(&model, &bank, &splits.test, &splits.test, 10, 7, Execution::default());
    ensure(matches!(guard, Err(eval::EvalError::Protocol { .. })), || "score_pairs accepted overlapping splits".into())?;

    let triplets = eval::eval_triplets(&splits.test, corpus.n_phrases, corpus.n_emotions, 300, 7).map_err(|e| e.to_string())?;
    let emb = eval::embed_clips(&model, &bank, &triplets, Execution::default()).map_err(|e| e.to_string())?;
    let scores = eval::score_triplets(&emb, &triplets).map_err(|e| e.to_string())?;
    let get = |id: ClipId| &emb[emb.binary_search_by_key(&id, |(i, _)| *i).unwrap()].1;
    let fp = model.fingerprint();
    let mut store = EnrollmentStore::new();
    for (i, t) in triplets.iter().enumerate() {
        store
            .enroll_embedding(&format!("t{i}"), "p", get(t.anchor).clone(), fp, 0)
            .map_err(|e| e.to_string())?;
    }
    let mut thresholds: Vec<f64> = scores.genuine.iter().chain(&scores.imposter).copied().collect();
    thresholds.extend(eval::thresholds(0.01).map_err(|e| e.to_string())?);
    let report = VerificationReport::from_scores(&scores, 0.001).map_err(|e| e.to_string())?;
    thresholds.push(report.eer_threshold);
    let n = triplets.len() as f64;
    for &th in &thresholds {
        let (mut fa, mut fr) = (0usize, 0usize);
        for (i, t) in triplets.iter().enumerate() {
            let client = format!("t{i}");
            let g = store
                .authenticate_embedding(&client, "p", get(t.positive), &fp, th)
                .map_err(|e| e.to_string())?;
            let m = store
                .authenticate_embedding(&client, "p", get(t.negative), &fp, th)
                .map_err(|e| e.to_string())?;
            ensure(g.similarity == scores.genuine[i] && m.similarity == scores.imposter[i], || {
                format!("triplet {i}: store similarity differs from eval score")
            })?;
            fr += !g.accepted as usize;
            fa += m.accepted as usize;
        }
        let (far, frr) = eval::far_frr(&scores, th).map_err(|e| e.to_string())?;
        ensure(fa as f64 / n == far && fr as f64 / n == frr, || {
            format!("t = {th}: store FAR/FRR {}/{} vs eval {far}/{frr}", fa as f64 / n, fr as f64 / n)
        })?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.lfa");
    model.save(&path).map_err(|e| e.to_string())?;
    let back = SlowFastModel::load(&path).map_err(|e| e.to_string())?;
    ensure(back.checkpoint_bytes() == model.checkpoint_bytes(), || "checkpoint round trip changed bytes".into())?;
    ensure(back.params() == model.params(), || "checkpoint round trip changed parameters".into())?;
    let probe = bank.get(triplets[0].anchor).unwrap();
    ensure(back.embed(probe).unwrap() == model.embed(probe).unwrap(), || "reloaded model embeds differently".into())?;
    let spath = dir.path().join("store.lfs");
    store.save(&spath).map_err(|e| e.to_string())?;
    let sback = EnrollmentStore::load(&spath).map_err(|e| e.to_string())?;
    ensure(sback == store && sback.to_bytes() == store.to_bytes(), || "store round trip differs".into())?;
    Ok(format!(
        "open-set guard rejects overlap; store reproduces FAR/FRR exactly at {} thresholds over {} pairs; round trips bit-exact",
        thresholds.len(),
        triplets.len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let want = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut desk: Option<Desk> = None;
    let mut failed = Vec::new();
    let ids = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"];
    let names = [
        "gradients",
        "triplet algebra",
        "triplet universe size",
        "preprocessing golden traces",
        "EER machinery",
        "end-to-end desk run",
        "SlowFast structure",
        "protocol and store",
        "training-size trend",
    ];
    for (id, name) in ids.into_iter().zip(names) {
        if !want(id) {
            continue;
        }
        let start = Instant::now();
        let mut with_desk = |f: fn(&mut Desk) -> Check| -> Check {
            if desk.is_none() {
                desk = Some(Desk::new()?);
            }
            f(desk.as_mut().expect("initialized"))
        };
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match id {
            "A1" => a1(),
            "A2" => a2(),
            "A3" => a3(),
            "A4" => a4(),
            "A5" => a5(),
            "A6" => with_desk(a6),
            "A7" => a7(),
            "A8" => a8(),
            "A9" => with_desk(a9),
            _ => unreachable!(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{id} {name}: PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                println!("{id} {name}: FAIL [{secs:.1}s] {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
