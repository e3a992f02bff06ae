#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use multilink::clustering::{Cluster, LinkageState, MergePath};
use multilink::evaluation::{generate_scene, misclassification_error, SceneSpec, StructureSpec};
use multilink::pipeline::{run, PipelineConfig};
use multilink::selection::{evaluate_merge, GricConfig, MergeVerdict};
use multilink::{
    build_preferences, multilink, parse_class_list, sample_hypotheses, ClassRef, MultiLinkOptions, PointSet,
    SamplerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

/// Small random scene in `[-1, 1]²`: up to three structures of random
/// classes plus uniform outliers, with at most `max_points` points.
pub fn random_scene(seed: u64, max_points: usize) -> (PointSet, Vec<ClassRef>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3);
    let per = (max_points / (k + 1)).max(8);
    let mut structures = Vec::new();
    for _ in 0..k {
        let count = rng.random_range(8..=per);
        let spec = match rng.random_range(0..3) {
            0 => {
                let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (c, s) = (a.cos(), a.sin());
                let off = rng.random_range(-0.5..0.5);
                multilink::evaluation::segment(
                    [-c * 0.9 - s * off, -s * 0.9 + c * off],
                    [c * 0.9 - s * off, s * 0.9 + c * off],
                    count,
                    0.01,
                )
            }
            1 => StructureSpec {
                class: "circle".into(),
                params: vec![rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(0.2..0.5)],
                extent: [0.0, TAU],
                count,
                noise: 0.01,
            },
            _ => {
                let a: f64 = rng.random_range(1.0..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                let h: f64 = rng.random_range(-0.3..0.3);
                let v: f64 = rng.random_range(-0.5..0.5);
                StructureSpec {
                    class: "parabola".into(),
                    params: vec![a, -2.0 * a * h, a * h * h + v],
                    extent: [h - 0.45, h + 0.45],
                    count,
                    noise: 0.01,
                }
            }
        };
        structures.push(spec);
    }
    let inliers: usize = structures.iter().map(|s| s.count).sum();
    let outliers = rng.random_range(0..=max_points.saturating_sub(inliers).min(40));
    let spec = SceneSpec { structures, outlier_count: outliers, bbox: [-1.0, -1.0, 1.0, 1.0], seed };
    let lists = ["line", "line,circle", "line,circle,parabola", "circle,parabola"];
    let classes = parse_class_list(lists[rng.random_range(0..lists.len())]).unwrap();
    let eps = rng.random_range(0.02..0.06);
    (generate_scene(&spec).unwrap(), classes, eps)
}

fn random_config(classes: &[ClassRef], eps: f64, seed: u64, hyps: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(classes.to_vec(), eps, SamplerConfig::uniform(vec![hyps; classes.len()], seed));
    cfg.record_log = true;
    cfg
}

/// Runs MultiLink with the per-step invariant checks on and checks the
/// final partition.
pub fn check_partition(seed: u64) -> Check {
    let (data, classes, eps) = random_scene(seed, 200);
    let mut cfg = random_config(&classes, eps, seed, 150);
    cfg.debug_checks = true;
    cfg.refine_assignment = seed % 2 == 0;
    let out = run(&data, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
    let seg = &out.segmentation;
    let mut seen = BTreeSet::new();
    for i in seg.structures.iter().flat_map(|s| s.members.iter()).chain(&seg.outliers) {
        if !seen.insert(*i) {
            return Err(format!("seed {seed}: point {i} assigned twice"));
        }
    }
    if seen.len() != data.len() || seg.num_points() != data.len() {
        return Err(format!("seed {seed}: {} of {} points assigned", seen.len(), data.len()));
    }
    Ok(())
}

/// Drives a linkage state with random accept/reject decisions and compares
/// every proposal and distance with a direct recomputation over member sets.
pub fn check_linkage_oracle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=50);
    let fallback_below = rng.random_range(0..4);
    let mut table = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            // coarse values so that ties and distance-1 pairs are common
            let v = (rng.random_range(0..=10) as f64) / 10.0;
            table[i * n + j] = v;
            table[j * n + i] = v;
        }
    }
    let point = |i: usize, j: usize| table[i * n + j];
    let mut state = LinkageState::new(n, fallback_below, point);

    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut created = vec![0usize; n];
    let brute = |m: &[Option<Vec<usize>>], a: usize, b: usize| {
        let (ma, mb) = (m[a].as_ref().unwrap(), m[b].as_ref().unwrap());
        ma.iter().flat_map(|&i| mb.iter().map(move |&j| point(i, j))).fold(f64::INFINITY, f64::min)
    };
    let hopeless = |m: &[Option<Vec<usize>>], a: usize, b: usize| {
        let small = m[a].as_ref().unwrap().len().min(m[b].as_ref().unwrap().len());
        small < fallback_below && brute(m, a, b) >= 1.0
    };
    let mut forbidden = vec![false; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let f = hopeless(&members, a, b);
            forbidden[a * n + b] = f;
            forbidden[b * n + a] = f;
        }
    }
    let mut step = 0;
    loop {
        let live: Vec<usize> = (0..n).filter(|&s| members[s].is_some()).collect();
        let mut expected: Option<((f64, (usize, usize), (usize, usize)), usize, usize)> = None;
        for (x, &a) in live.iter().enumerate() {
            for &b in &live[x + 1..] {
                let d = brute(&members, a, b);
                if state.raw_distance(a, b) != d {
                    return Err(format!(
                        "seed {seed} step {step}: distance {a},{b} is {} not {d}",
                        state.raw_distance(a, b)
                    ));
                }
                if state.is_forbidden(a, b) != forbidden[a * n + b] {
                    return Err(format!("seed {seed} step {step}: forbidden flag of {a},{b} differs"));
                }
                if forbidden[a * n + b] {
                    continue;
                }
                let (ka, kb) = ((created[a], a), (created[b], b));
                let key = (d, ka.min(kb), ka.max(kb));
                if expected.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    expected = Some((key, key.1 .1, key.2 .1));
                }
            }
        }
        let got = state.closest();
        let want = expected.map(|(k, a, b)| (a, b, k.0));
        if got != want {
            return Err(format!("seed {seed} step {step}: proposal {got:?}, expected {want:?}"));
        }
        let Some((a, b, _)) = got else { return Ok(()) };
        step += 1;
        if rng.random_bool(0.6) {
            let mb = members[b].take().unwrap();
            members[a].as_mut().unwrap().extend(mb);
            created[a] = step;
            state.merge(a, b, step);
            for z in 0..n {
                if z == a || members[z].is_none() {
                    continue;
                }
                let f = (forbidden[a * n + z] && forbidden[b * n + z]) || hopeless(&members, a, z);
                forbidden[a * n + z] = f;
                forbidden[z * n + a] = f;
            }
        } else {
            state.forbid(a, b);
            forbidden[a * n + b] = true;
            forbidden[b * n + a] = true;
        }
    }
}

/// Every accepted GRIC merge of the log satisfies the acceptance condition
/// from its recorded scores, and every rejected one fails it for all classes.
pub fn check_merge_audit(seed: u64) -> Check {
    let (data, classes, eps) = random_scene(seed, 150);
    let sampler = SamplerConfig::uniform(vec![200; classes.len()], seed);
    let hyps = sample_hypotheses(&data, &classes, &sampler).map_err(|e| e.to_string())?;
    let prefs = build_preferences(&data, &hyps, eps).map_err(|e| e.to_string())?;
    let opts = MultiLinkOptions { record_log: true, ..MultiLinkOptions::default() };
    let seg =
        multilink(&data, &classes, &prefs, &hyps, &GricConfig::for_epsilon(eps), &opts).map_err(|e| e.to_string())?;
    for r in seg.merge_log.iter().filter(|r| r.path == MergePath::Gric) {
        match (&r.winning_class, r.accepted) {
            (Some(w), true) => {
                if !MergeVerdict::audit(&r.scores, w) {
                    return Err(format!("seed {seed} step {}: accepted merge fails the audit", r.step));
                }
                let chosen = r.scores.iter().find(|s| &s.class == w).unwrap();
                let cheaper =
                    r.scores.iter().any(|s| s.union < chosen.union && MergeVerdict::audit(&r.scores, &s.class));
                if cheaper {
                    return Err(format!("seed {seed} step {}: winner is not the cheapest passing union", r.step));
                }
            }
            (None, false) => {
                if r.scores.iter().any(|s| MergeVerdict::audit(&r.scores, &s.class)) {
                    return Err(format!("seed {seed} step {}: rejected merge passes the audit", r.step));
                }
            }
            _ => return Err(format!("seed {seed} step {}: winner and acceptance disagree", r.step)),
        }
    }
    Ok(())
}

/// Exhaustive search over injective maps from predicted to true structures.
pub fn brute_force_correct(predicted: &[u32], truth: &[u32]) -> usize {
    let np = predicted.iter().copied().max().unwrap_or(0) as usize;
    let nt = truth.iter().copied().max().unwrap_or(0) as usize;
    fn go(p: usize, np: usize, used: &mut [bool], map: &mut [usize], pr: &[u32], tr: &[u32], best: &mut usize) {
        if p > np {
            let c = pr
                .iter()
                .zip(tr)
                .filter(|(&a, &b)| if a == 0 { b == 0 } else { map[a as usize] != 0 && map[a as usize] == b as usize })
                .count();
            *best = (*best).max(c);
            return;
        }
        map[p] = 0;
        go(p + 1, np, used, map, pr, tr, best);
        for t in 1..used.len() {
            if !used[t] {
                used[t] = true;
                map[p] = t;
                go(p + 1, np, used, map, pr, tr, best);
                used[t] = false;
            }
        }
        map[p] = 0;
    }
    let mut best = 0;
    go(1, np, &mut vec![false; nt + 1], &mut vec![0; np + 1], predicted, truth, &mut best);
    best
}

pub fn check_matcher(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..60);
    let np = rng.random_range(0..=6u32);
    let nt = rng.random_range(0..=6u32);
    let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..=np)).collect();
    let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..=nt)).collect();
    let r = misclassification_error(&pred, &truth).map_err(|e| e.to_string())?;
    let exact = brute_force_correct(&pred, &truth);
    if n - r.misclassified != exact {
        return Err(format!("seed {seed}: matcher finds {} correct, exhaustive {exact}", n - r.misclassified));
    }
    // relabelling either side must not change the error
    let shift =
        |l: &[u32], k: u32| -> Vec<u32> { l.iter().map(|&v| if v == 0 { 0 } else { (v + k - 1) % 6 + 1 }).collect() };
    let again = misclassification_error(&shift(&pred, 3), &shift(&truth, 5)).map_err(|e| e.to_string())?;
    if again.misclassified != r.misclassified {
        return Err(format!("seed {seed}: relabelling changes the error"));
    }
    Ok(())
}

/// Rescaling coordinates, threshold and locality by a power of two leaves
/// every merge decision and the final segmentation unchanged.
pub fn check_scale(seed: u64) -> Check {
    let (data, classes, eps) = random_scene(seed, 150);
    let factor = [0.25, 2.0, 8.0, 0.5][seed as usize % 4];
    let base = |d: &PointSet, e: f64, loc: f64| {
        let mut cfg = random_config(&classes, e, seed, 200);
        if seed % 3 == 0 {
            cfg.sampler = cfg.sampler.clone().localized(loc);
        }
        run(d, &cfg).map_err(|e| format!("seed {seed}: {e}"))
    };
    let a = base(&data, eps, 0.5)?;
    let b = base(&data.scaled(factor), eps * factor, 0.5 * factor)?;
    let decisions = |s: &multilink::Segmentation| -> Vec<(bool, Option<String>)> {
        s.merge_log.iter().map(|r| (r.accepted, r.winning_class.clone())).collect()
    };
    if decisions(&a.segmentation) != decisions(&b.segmentation) {
        return Err(format!("seed {seed}: merge decisions change under scale {factor}"));
    }
    let parts = |s: &multilink::Segmentation| -> Vec<(Vec<usize>, String)> {
        s.structures.iter().map(|st| (st.members.clone(), st.class.clone())).collect()
    };
    if parts(&a.segmentation) != parts(&b.segmentation) {
        return Err(format!("seed {seed}: segmentation changes under scale {factor}"));
    }
    Ok(())
}

fn segment_points(rng: &mut ChaCha8Rng, p: [f64; 2], q: [f64; 2], count: usize, sigma: f64) -> Vec<[f64; 2]> {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let len = dx.hypot(dy);
    let (nx, ny) = (-dy / len, dx / len);
    (0..count)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..1.0);
            let e = gaussian(rng) * sigma;
            [p[0] + t * dx + e * nx, p[1] + t * dy + e * ny]
        })
        .collect()
}

fn arc_points(
    rng: &mut ChaCha8Rng,
    centre: [f64; 2],
    r: f64,
    from: f64,
    to: f64,
    count: usize,
    sigma: f64,
) -> Vec<[f64; 2]> {
    (0..count)
        .map(|_| {
            let t = rng.random_range(from..to);
            let rr = r + gaussian(rng) * sigma;
            [centre[0] + rr * t.cos(), centre[1] + rr * t.sin()]
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Outcome of one constructed merge test: accepted, and the winning class.
fn verdict(u: Vec<[f64; 2]>, v: Vec<[f64; 2]>, classes: &str, sigma: f64) -> Result<(bool, Option<String>), String> {
    let nu = u.len();
    let mut pts = u;
    pts.extend(v);
    let data = PointSet::from_xy(&pts);
    let classes = parse_class_list(classes).unwrap();
    let cu = Cluster::new((0..nu).collect(), 0, classes.len());
    let cv = Cluster::new((nu..pts.len()).collect(), 0, classes.len());
    let gric = GricConfig::for_epsilon(3.0 * sigma);
    let v = evaluate_merge(&data, &cu, &cv, &classes, &gric).map_err(|e| e.to_string())?;
    Ok((v.accept, v.winning_class.map(|k| classes[k].id().to_string())))
}

/// The three constructed merge geometries for one seed.
pub fn check_merge_oracle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 0.01;
    let a = segment_points(&mut rng, [-1.0, -0.3], [-0.2, -0.06], 25, sigma);
    let b = segment_points(&mut rng, [0.2, 0.06], [1.0, 0.3], 25, sigma);
    let got = verdict(a, b, "line,circle,parabola", sigma)?;
    if got != (true, Some("line".into())) {
        return Err(format!("seed {seed}: collinear segments gave {got:?}"));
    }
    let a = arc_points(&mut rng, [0.0, 0.0], 1.0, 0.0, 0.9, 25, sigma);
    let b = arc_points(&mut rng, [0.0, 0.0], 1.0, 2.0, 2.9, 25, sigma);
    let got = verdict(a, b, "line,circle", sigma)?;
    if got != (true, Some("circle".into())) {
        return Err(format!("seed {seed}: arcs of one circle gave {got:?}"));
    }
    let a = segment_points(&mut rng, [-1.0, 0.0], [1.0, 0.0], 25, sigma);
    let b = segment_points(&mut rng, [-1.0, 20.0 * sigma], [1.0, 20.0 * sigma], 25, sigma);
    let got = verdict(a, b, "line", sigma)?;
    if got.0 {
        return Err(format!("seed {seed}: parallel segments gave {got:?}"));
    }
    Ok(())
}

/// Runs `check` on `count` seeds and reports the first failure.
pub fn run_all(count: u64, check: impl Fn(u64) -> Check) -> Check {
    (0..count).try_for_each(check)
}
