//! Seeded synthetic data: separable feature blobs and corpora with planted
//! links. Used by the test suites and the `synth` CLI demo.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureVector;
use crate::model::{ChangeRecord, LinkLabel};

/// Two well-separated clusters. Positives sit near
/// `(1, 1, 1, 1, 1h, 0 files)`, negatives near `(0, 0, 0, 0, 500h, 10 files)`.
pub fn blob_samples(n: usize, seed: u64) -> Vec<(FeatureVector, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut sim = |centre: f64| (centre + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
            let (s, p, q, j) = if positive {
                (sim(1.0), sim(1.0), sim(1.0), sim(1.0))
            } else {
                (sim(0.0), sim(0.0), sim(0.0), sim(0.0))
            };
            let (t, d) = if positive {
                (rng.random_range(0.0..2.0), rng.random_range(0..=1u64))
            } else {
                (rng.random_range(450.0..550.0), rng.random_range(8..=12u64))
            };
            (
                FeatureVector {
                    semantic_sim: s,
                    lcp_max: p,
                    lcs_max: q,
                    jaccard: j,
                    time_diff_hours: t,
                    delta_files: d,
                },
                positive,
            )
        })
        .collect()
}

pub fn positive_centroid() -> FeatureVector {
    FeatureVector {
        semantic_sim: 1.0,
        lcp_max: 1.0,
        lcs_max: 1.0,
        jaccard: 1.0,
        time_diff_hours: 1.0,
        delta_files: 0,
    }
}

pub fn negative_centroid() -> FeatureVector {
    FeatureVector {
        semantic_sim: 0.0,
        lcp_max: 0.0,
        lcs_max: 0.0,
        jaccard: 0.0,
        time_diff_hours: 500.0,
        delta_files: 10,
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub changes: Vec<ChangeRecord>,
    pub links: Vec<LinkLabel>,
}

const BASE_TIME: i64 = 1_704_067_200; // 2024-01-01T00:00:00Z

fn words(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> String {
    (0..n)
        .map(|_| format!("{prefix}x{:04}", rng.random_range(0..10_000)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n_changes` changes in one project spread over 90 days, of which
/// `2 * n_links` form linked pairs. Partners share subject, description and
/// file set and are created under a day apart; every other change uses its
/// own vocabulary and directory.
pub fn planted_corpus(n_changes: usize, n_links: usize, seed: u64) -> PlantedCorpus {
    assert!(2 * n_links <= n_changes, "not enough changes for the requested links");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 90 * 86_400;
    let mut changes = Vec::with_capacity(n_changes);
    let mut links = Vec::with_capacity(n_links);

    for i in 0..n_links {
        let subject = words(&mut rng, &format!("l{i}s"), 4);
        let desc = words(&mut rng, &format!("l{i}d"), 8);
        let files: Vec<String> = (0..rng.random_range(1..=3))
            .map(|f| format!("linked{i}/pkg{i}/mod{f}_{i}.py"))
            .collect();
        let t = BASE_TIME + rng.random_range(0..span);
        let gap = rng.random_range(600..86_000);
        let a = format!("L{i:03}a");
        let b = format!("L{i:03}b");
        for (key, at) in [(&a, t), (&b, t + gap)] {
            changes.push(
                ChangeRecord::new(key.clone(), "demo", &subject, &desc, Utc.timestamp_opt(at, 0).unwrap(), &files)
                    .expect("synthetic records are valid"),
            );
        }
        links.push(LinkLabel::new(a, b).expect("distinct keys"));
    }
    for n in 0..n_changes - 2 * n_links {
        let subject = words(&mut rng, &format!("d{n}s"), 4);
        let desc = words(&mut rng, &format!("d{n}d"), 8);
        let files: Vec<String> = (0..rng.random_range(1..=4))
            .map(|f| format!("noise{n}/area{n}/unit{f}_{n}.rs"))
            .collect();
        let t = BASE_TIME + rng.random_range(0..span);
        changes.push(
            ChangeRecord::new(format!("D{n:04}"), "demo", subject, desc, Utc.timestamp_opt(t, 0).unwrap(), &files)
                .expect("synthetic records are valid"),
        );
    }
    changes.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.change_key.cmp(&b.change_key)));
    PlantedCorpus { changes, links }
}
