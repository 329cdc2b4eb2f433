#![allow(dead_code)]

use memcodec::checkerboard::CheckerboardPartition;
use memcodec::codec::{Codec, Coded};
use memcodec::context::{
    channel_context, entropy_params, inter_global_context, intra_global_context, local_context, ContextBundle,
    ModelWeights, Pass, Profile, SliceState,
};
use memcodec::entropy::bin_probability;
use memcodec::numerics::{Seed, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor4 {
    Tensor4::from_fn(c, h, w, |_, _, _| rng.gen_range(-2.0..2.0))
}

pub fn max_abs_diff(a: &Tensor4, b: &Tensor4) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-query neighbourhood attention: anchor keys within the window only.
pub fn window_oracle(q: &Tensor4, k: &Tensor4, v: &Tensor4, window: usize) -> Tensor4 {
    let (h, w) = (q.height(), q.width());
    let r = (window / 2) as isize;
    let scale = 1.0 / (q.channels() as f64).sqrt();
    let mut out = Tensor4::zeros(v.channels(), h, w);
    for y in 0..h {
        for x in 0..w {
            let mut nbrs = Vec::new();
            for ky in 0..h {
                for kx in 0..w {
                    let near = (ky as isize - y as isize).abs() <= r && (kx as isize - x as isize).abs() <= r;
                    if near && (ky + kx) % 2 == 0 {
                        nbrs.push((ky, kx));
                    }
                }
            }
            if nbrs.is_empty() {
                continue;
            }
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|&(ky, kx)| (0..q.channels()).map(|c| q.get(c, y, x) * k.get(c, ky, kx)).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v.channels() {
                let val: f64 = nbrs.iter().zip(&e).map(|(&(ky, kx), p)| p / z * v.get(c, ky, kx)).sum();
                out.set(c, y, x, val);
            }
        }
    }
    out
}

/// Outcome of one perturbation.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub in_cone: bool,
    pub changed: bool,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.changed == self.in_cone
    }
}

fn bump(t: &Tensor4, positions: &[usize], delta: f64) -> Tensor4 {
    let mut out = t.clone();
    for c in 0..out.channels() {
        for &p in positions {
            out.channel_mut(c)[p] += delta;
        }
    }
    out
}

fn bump_one(t: &Tensor4, c: usize, p: usize, delta: f64) -> Tensor4 {
    let mut out = t.clone();
    out.channel_mut(c)[p] += delta;
    out
}

fn state_of(slices: &[Tensor4]) -> SliceState {
    let mut s = SliceState::new();
    for t in slices {
        s.push(t.clone()).unwrap();
    }
    s
}

struct Recorder(Vec<Check>);

impl Recorder {
    fn record(&mut self, name: String, in_cone: bool, base: &Tensor4, got: &Tensor4) {
        self.0.push(Check {
            name,
            in_cone,
            changed: base != got,
        });
    }
}

/// Every perturbation of the toy-profile context modules and codec, with
/// whether it lies inside the module's conditioning set.
pub fn causality_checks() -> Vec<Check> {
    let p = Profile::TOY;
    let w = ModelWeights::generate(p, Seed(31)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (h, wd) = (6, 6);
    let part = CheckerboardPartition::new(h, wd).unwrap();
    let slices: Vec<Tensor4> = (0..p.slices).map(|_| tensor(&mut rng, p.s, h, wd)).collect();
    let all = part.anchors().iter().chain(part.nonanchors()).copied().collect::<Vec<_>>();
    let mut rec = Recorder(Vec::new());

    for i in 1..p.slices {
        for label in ["channel", "inter"] {
            let run = |s: &SliceState| match label {
                "channel" => channel_context(s, i, &w.channel[i]).unwrap(),
                _ => inter_global_context(s, i, &w.inter[i]).unwrap(),
            };
            let base = run(&state_of(&slices));
            for j in 0..p.slices {
                let mut s = slices.clone();
                if j < i {
                    s[j] = bump_one(&s[j], 0, part.nonanchors()[0], 1.5);
                } else {
                    s[j] = bump(&s[j], &all, 1.5);
                }
                rec.record(format!("{label} slice {i}: perturb slice {j}"), j < i, &base, &run(&state_of(&s)));
            }
        }

        let gw = &w.intra[i];
        let base = intra_global_context(&slices[i - 1], &slices[i], &part, gw).unwrap();
        let cases = [
            ("current non-anchors", false, slices[i - 1].clone(), bump(&slices[i], part.nonanchors(), 1.5)),
            ("current one anchor", true, slices[i - 1].clone(), bump_one(&slices[i], 0, part.anchors()[3], 1.5)),
            ("previous one non-anchor", true, bump_one(&slices[i - 1], 1, part.nonanchors()[2], 1.5), slices[i].clone()),
            ("previous one anchor", true, bump_one(&slices[i - 1], 2, part.anchors()[4], 1.5), slices[i].clone()),
        ];
        for (what, in_cone, prev, cur) in cases {
            let got = intra_global_context(&prev, &cur, &part, gw).unwrap();
            rec.record(format!("intra slice {i}: perturb {what}"), in_cone, &base, &got);
        }
        let anchors_zero = part.anchors().iter().all(|&t| (0..base.channels()).all(|c| base.channel(c)[t] == 0.0));
        rec.0.push(Check {
            name: format!("intra slice {i}: output anchors are zero"),
            in_cone: false,
            changed: !anchors_zero,
        });
    }

    for i in 0..p.slices {
        let lw = &w.local[i];
        let base = local_context(&slices[i], &part, lw, p.window).unwrap();
        let nonanchor = bump(&slices[i], part.nonanchors(), 1.5);
        rec.record(
            format!("local slice {i}: perturb non-anchors"),
            false,
            &base,
            &local_context(&nonanchor, &part, lw, p.window).unwrap(),
        );
        let anchor = bump_one(&slices[i], 0, part.anchors()[5], 1.5);
        rec.record(
            format!("local slice {i}: perturb one anchor"),
            true,
            &base,
            &local_context(&anchor, &part, lw, p.window).unwrap(),
        );

        let ew = &w.entropy[i];
        let c2 = p.ctx_channels();
        let bundle = ContextBundle {
            phi_h: tensor(&mut rng, p.hyper_channels(), h, wd),
            phi_ch: tensor(&mut rng, c2, h, wd),
            phi_lc: tensor(&mut rng, c2, h, wd),
            phi_gc_intra: tensor(&mut rng, c2, h, wd),
            phi_gc_inter: tensor(&mut rng, c2, h, wd),
        };
        for pass in [Pass::Anchor, Pass::NonAnchor] {
            let base = entropy_params(&bundle, pass, ew).unwrap();
            for part_name in ["phi_h", "phi_ch", "phi_lc", "phi_gc_intra", "phi_gc_inter"] {
                let mut b = bundle.clone();
                let t = match part_name {
                    "phi_h" => &mut b.phi_h,
                    "phi_ch" => &mut b.phi_ch,
                    "phi_lc" => &mut b.phi_lc,
                    "phi_gc_intra" => &mut b.phi_gc_intra,
                    _ => &mut b.phi_gc_inter,
                };
                *t = bump_one(t, 1, 7, 2.0);
                let got = entropy_params(&b, pass, ew).unwrap();
                let in_cone = pass == Pass::NonAnchor || !matches!(part_name, "phi_lc" | "phi_gc_intra");
                let changed = got != base;
                rec.0.push(Check {
                    name: format!("entropy params slice {i} {pass:?}: perturb {part_name}"),
                    in_cone,
                    changed,
                });
            }
        }
    }

    rec.0.extend(codec_causality_checks());
    rec.0
}

fn slice_field(c: &Coded, i: usize, anchor: bool) -> &Tensor4 {
    if anchor {
        &c.trace[i].anchor.mu
    } else {
        &c.trace[i].nonanchor.mu
    }
}

/// End-to-end: with `ẑ` pinned to zero, perturbing slice `i` of the latent
/// must leave the entropy parameters of earlier slices and, for
/// non-anchor perturbations, of slice `i` itself bit-identical.
fn codec_causality_checks() -> Vec<Check> {
    let p = Profile::TOY;
    let mut w = ModelWeights::generate(p, Seed(33)).unwrap();
    for c in w.hyper.analysis.iter_mut() {
        c.weight.fill(0.0);
        c.bias.fill(0.0);
    }
    let codec = Codec::new(w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let (h, wd) = (5, 6);
    let part = CheckerboardPartition::new(h, wd).unwrap();
    let y = Tensor4::from_fn(p.m, h, wd, |_, _, _| rng.gen_range(-4.0..4.0));
    let base = codec.encode_latent(&y).unwrap();
    let mut out = Vec::new();
    for i in 0..p.slices {
        for (what, positions) in [("non-anchors", part.nonanchors()), ("anchors", part.anchors())] {
            let mut y2 = y.clone();
            for c in 0..p.s {
                for &t in positions {
                    y2.channel_mut(i * p.s + c)[t] += 3.0;
                }
            }
            let got = codec.encode_latent(&y2).unwrap();
            for j in 0..p.slices {
                for anchor in [true, false] {
                    let in_cone = j > i || (j == i && !anchor && what == "anchors");
                    out.push(Check {
                        name: format!(
                            "codec: perturb slice {i} {what}, slice {j} {} params",
                            if anchor { "anchor" } else { "non-anchor" }
                        ),
                        in_cone,
                        changed: slice_field(&base, j, anchor) != slice_field(&got, j, anchor),
                    });
                }
                if j < i {
                    let tilde = |c: &Coded| c.y_tilde.channel_range(j * p.s, p.s).unwrap();
                    out.push(Check {
                        name: format!("codec: perturb slice {i} {what}, reconstruction slice {j}"),
                        in_cone: false,
                        changed: tilde(&base) != tilde(&got),
                    });
                }
            }
        }
    }
    out
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Outcome of one committed golden bitstream.
pub struct Golden {
    pub name: &'static str,
    pub decodes_exactly: bool,
    pub reencodes_exactly: bool,
}

/// Decodes each committed bitstream and compares against the committed
/// latent, then re-encodes the committed input and compares bytes.
pub fn golden_checks() -> Vec<Golden> {
    use memcodec::codec::{tensor_from_bytes, tensor_to_bytes, BitstreamFile};
    [("toy", Profile::TOY), ("single", Profile::SINGLE_SLICE)]
        .into_iter()
        .map(|(name, p)| {
            let read = |f: String| std::fs::read(data_path(&f)).unwrap();
            let codec = Codec::new(ModelWeights::generate(p, Seed(2024)).unwrap()).unwrap();
            let bits = read(format!("golden_{name}.bin"));
            let latent = read(format!("golden_{name}_latent.memt"));
            let input = tensor_from_bytes(&read(format!("golden_{name}_input.memt"))).unwrap();
            let decoded = codec.decode_latent(&BitstreamFile::from_bytes(&bits).unwrap()).unwrap();
            let reencoded = codec.encode_latent(&input).unwrap();
            Golden {
                name,
                decodes_exactly: tensor_to_bytes(&decoded.y_hat) == latent,
                reencodes_exactly: reencoded.file.to_bytes() == bits,
            }
        })
        .collect()
}

/// Grid used for random round trips of a profile; kept small for the
/// wide profile.
pub fn round_trip_grid(p: &Profile, rng: &mut ChaCha8Rng) -> (usize, usize) {
    if p.m > 64 {
        (rng.gen_range(1..=3), rng.gen_range(1..=3))
    } else {
        (rng.gen_range(1..=7), rng.gen_range(1..=7))
    }
}

/// Encodes `count` random latents per profile through serialisation and
/// returns how many decoded bit-exactly.
pub fn random_round_trips(p: Profile, count: usize, seed: u64) -> usize {
    use memcodec::codec::BitstreamFile;
    let codec = Codec::new(ModelWeights::generate(p, Seed(seed)).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let (h, w) = round_trip_grid(&p, &mut rng);
            let amp = rng.gen_range(0.5..20.0);
            let y = Tensor4::from_fn(p.m, h, w, |_, _, _| rng.gen_range(-amp..amp));
            let enc = codec.encode_latent(&y).unwrap();
            let file = BitstreamFile::from_bytes(&enc.file.to_bytes()).unwrap();
            let dec = codec.decode_latent(&file).unwrap();
            dec.y_hat == enc.y_hat && dec.trace == enc.trace && dec.y_tilde == enc.y_tilde
        })
        .count()
}

/// Draws an integer offset from the discretised `N(0, σ²)`.
pub fn sample_offset(rng: &mut ChaCha8Rng, sigma: f64) -> i64 {
    let u: f64 = rng.gen();
    let mut acc = bin_probability(0.0, sigma);
    if u < acc {
        return 0;
    }
    let mut d = 1i64;
    loop {
        let p = bin_probability(d as f64, sigma);
        acc += 2.0 * p;
        if u < acc || p == 0.0 {
            return if rng.gen::<bool>() { d } else { -d };
        }
        d += 1;
    }
}
