#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tactile_eval::corpus::{BinaryRecord, FamilyCode, ImagePair, Registry, Split, TaskCode};
use tactile_eval::embedding::{
    assemble_features, option_prompt, FeatureMap, FeatureVector, FixtureProvider, Modality, EMBED_DIM,
};

pub fn task(s: &str) -> TaskCode {
    s.parse().unwrap()
}

pub fn record(pair: &str, t: &str, option: &str, label: bool, votes_for: u32, split: Split) -> BinaryRecord {
    BinaryRecord {
        pair_id: pair.into(),
        task: task(t),
        option_id: option.into(),
        option_desc: String::new(),
        label,
        vote_fraction: votes_for as f64 / 7.0,
        votes_for,
        votes_total: 7,
        split,
        provenance: BTreeMap::new(),
    }
}

/// Records and features for one option whose label is the sign of a hidden
/// linear direction, with every sample at least `margin` from the boundary.
pub struct Separable {
    pub records: Vec<BinaryRecord>,
    pub features: FeatureMap,
    pub direction: Vec<f64>,
    pub margins: Vec<f64>,
}

pub const SYN_TASK: &str = "F1QL";
pub const SYN_OPTION: &str = "too_thick";

/// Hash-seeded fixture embeddings; the direction weights the natural and
/// difference blocks equally, so it reads the cross-modal gap.
pub fn separable(counts: [usize; 3], margin: f64, seed: u64) -> Separable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut direction = vec![0.0; 4 * EMBED_DIM];
    for i in 0..EMBED_DIM {
        direction[i] = u[i] / norm / 2f64.sqrt();
        direction[2 * EMBED_DIM + i] = u[i] / norm / 2f64.sqrt();
    }
    let registry = Registry::builtin();
    let t = task(SYN_TASK);
    let text = FixtureProvider.embed_content(
        option_prompt(t, registry.option(t, SYN_OPTION).unwrap()).as_bytes(),
        Modality::Text,
    );

    let total: usize = counts.iter().sum();
    let mut out = Separable {
        records: Vec::with_capacity(total),
        features: FeatureMap::new(),
        direction,
        margins: Vec::with_capacity(total),
    };
    let mut candidate = 0u64;
    while out.records.len() < total {
        candidate += 1;
        let nat = FixtureProvider.embed_content(format!("{seed}/natural/{candidate}").as_bytes(), Modality::Image);
        let tac = FixtureProvider.embed_content(format!("{seed}/tactile/{candidate}").as_bytes(), Modality::Image);
        let f = assemble_features(&nat, &tac, &text).unwrap();
        let score: f64 = f.as_slice().iter().zip(&out.direction).map(|(a, b)| a * b).sum();
        if score.abs() < margin {
            continue;
        }
        let i = out.records.len();
        let split = if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
        let r = record(&format!("syn_{candidate:06}"), SYN_TASK, SYN_OPTION, score > 0.0, 7, split);
        out.features.insert(r.key(), f);
        out.records.push(r);
        out.margins.push(score.abs());
    }
    out
}

/// Perceptron over the given rows; returns the number of passes to reach zero
/// training errors, or `None` if it does not converge in `max_passes`.
pub fn perceptron_converges(rows: &[(&FeatureVector, bool)], max_passes: usize) -> Option<usize> {
    let dim = rows.first()?.0.as_slice().len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for pass in 1..=max_passes {
        let mut mistakes = 0;
        for (x, y) in rows {
            let s: f64 = x.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let target = if *y { 1.0 } else { -1.0 };
            if s * target <= 0.0 {
                mistakes += 1;
                for (wi, xi) in w.iter_mut().zip(x.as_slice()) {
                    *wi += target * xi;
                }
                b += target;
            }
        }
        if mistakes == 0 {
            return Some(pass);
        }
    }
    None
}

pub fn write_png(path: &Path, w: u32, h: u32, seed: u8) {
    let img = image::RgbaImage::from_fn(w, h, |x, y| {
        let v = ((x * 7 + y * 13) as u8).wrapping_add(seed);
        image::Rgba([v, v.wrapping_mul(3), 255 - v, 255])
    });
    img.save(path).unwrap();
}

/// A small on-disk corpus: `pairs.csv` plus PNGs under `images/`.
pub fn image_corpus(root: &Path, ids: &[(&str, FamilyCode)]) -> BTreeMap<String, ImagePair> {
    let images = root.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut pairs = BTreeMap::new();
    for (i, (id, family)) in ids.iter().enumerate() {
        let nat = format!("{id}_natural.png");
        let tac = format!("{id}_tactile.png");
        write_png(&images.join(&nat), 40, 30, i as u8 * 2);
        write_png(&images.join(&tac), 30, 40, i as u8 * 2 + 1);
        pairs.insert(
            id.to_string(),
            ImagePair {
                pair_id: id.to_string(),
                natural_ref: nat,
                tactile_ref: tac,
                object_class: id.split('_').next().unwrap().to_string(),
                family: *family,
            },
        );
    }
    let file = std::fs::File::create(root.join("pairs.csv")).unwrap();
    tactile_eval::corpus::write_pairs(pairs.values(), file).unwrap();
    pairs
}

/// A probe whose logit is `scale · tactile[k] + offset`, so scores vary
/// across images while staying predictable.
pub fn tactile_probe(t: TaskCode, option: &str, k: usize, scale: f64, offset: f64) -> tactile_eval::probe::ProbeCheckpoint {
    use tactile_eval::probe::{MlpParams, ProbeCheckpoint, TrainConfig};
    let mut params = MlpParams::zeros(4 * EMBED_DIM, 1);
    params.w1[[0, EMBED_DIM + k]] = scale;
    // The bias keeps the single hidden unit in its linear region.
    params.b1[0] = 10.0;
    params.w2[0] = 1.0;
    params.b2 = offset - 10.0;
    ProbeCheckpoint {
        task: t,
        option_id: option.to_string(),
        provider_id: tactile_eval::embedding::FIXTURE_PROVIDER_ID.to_string(),
        params,
        best_epoch: 1,
        val_accuracy_at_best: 1.0,
        history: vec![],
        config: TrainConfig {
            hidden: 1,
            ..Default::default()
        },
    }
}

/// Probes for every option of `tasks`, offsets spread so some options score
/// above 0.8 and some below.
pub fn fixture_probes(registry: &Registry, tasks: &[TaskCode]) -> tactile_eval::probe::CheckpointSet {
    let mut set = tactile_eval::probe::CheckpointSet::new();
    for (ti, t) in tasks.iter().enumerate() {
        for (oi, o) in registry.options(*t).iter().enumerate() {
            let offset = 2.5 - 1.1 * oi as f64 + 0.3 * ti as f64;
            set.insert(tactile_probe(*t, &o.option_id, 17 * oi + 5 * ti, 30.0, offset));
        }
    }
    set
}
