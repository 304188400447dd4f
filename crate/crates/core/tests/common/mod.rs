#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracle;

use cooktf_core::scene::{BoundingBox, ClassVocabulary, Dataset, ObjectInstance, RelationTriplet, SceneAnnotation, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let x0 = rng.random_range(0.0..0.7);
    let y0 = rng.random_range(0.0..0.7);
    BoundingBox::new(x0, y0, x0 + rng.random_range(0.05..0.3), y0 + rng.random_range(0.05..0.3)).unwrap()
}

/// Scene with `n_objects` random objects and a random subset of ordered
/// pairs carrying one relation each.
pub fn random_scene(rng: &mut impl Rng, n_objects: usize, n_classes: usize, n_predicates: usize, density: f64) -> SceneAnnotation {
    let objects = (0..n_objects)
        .map(|_| {
            let c = rng.random_range(0..n_classes);
            ObjectInstance {
                class_id: c,
                observed_class_id: if rng.random_bool(0.3) { rng.random_range(0..n_classes) } else { c },
                observed_logits: None,
                bbox: random_box(rng),
            }
        })
        .collect();
    let mut relations = Vec::new();
    for s in 0..n_objects {
        for o in 0..n_objects {
            if s != o && rng.random_bool(density) {
                relations.push(RelationTriplet {
                    subject_idx: s,
                    object_idx: o,
                    predicate_id: rng.random_range(0..n_predicates),
                });
            }
        }
    }
    SceneAnnotation { objects, relations }
}

pub fn random_dataset(rng: &mut impl Rng, max_images: usize, max_classes: usize, max_objects: usize, n_predicates: usize) -> Dataset {
    let n_classes = rng.random_range(1..=max_classes);
    let n_images = rng.random_range(0..=max_images);
    let scenes = (0..n_images)
        .map(|_| {
            let n = rng.random_range(0..=max_objects);
            random_scene(rng, n, n_classes, n_predicates, 0.3)
        })
        .collect();
    Dataset::new(ClassVocabulary::numbered(n_classes, n_predicates), scenes, Split::Train).unwrap()
}
