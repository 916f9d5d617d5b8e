//! Constructed-scene separation: object votes inside radius r of the origin,
//! background votes at least 4r away, informative object features and
//! uninformative background features.

use partvote::geometry::Vec3;
use partvote::nn::{Forward, Mlp2, ParamStore, Tensor};
use partvote::voting::{classify_clusters, cluster_votes, select_prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitBall, UnitSphere};

const CLASSES: usize = 4;
const FEATS: usize = 8;

/// Classifier whose logits are the first `CLASSES` feature channels scaled by 4.
fn readout(store: &mut ParamStore) -> Mlp2 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = Mlp2::new(store, "cls", [FEATS, FEATS, CLASSES], &mut rng).unwrap();
    let [w1, b1, w2, b2] = head.params();
    *store.value_mut(w1) = Tensor::from_fn(&[FEATS, FEATS], |i| {
        if i / FEATS == i % FEATS {
            1.0
        } else {
            0.0
        }
    });
    *store.value_mut(b1) = Tensor::zeros(&[FEATS]);
    *store.value_mut(w2) = Tensor::from_fn(&[FEATS, CLASSES], |i| {
        if i / CLASSES == i % CLASSES {
            4.0
        } else {
            0.0
        }
    });
    *store.value_mut(b2) = Tensor::zeros(&[CLASSES]);
    head
}

#[test]
fn most_confident_cluster_holds_object_parts() {
    let mut store = ParamStore::new();
    let head = readout(&mut store);
    let r = 0.3;
    let mut purities = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_obj = rng.gen_range(8..24);
        let n_bg = rng.gen_range(8..24);
        let class = rng.gen_range(0..CLASSES);
        let mut votes = Vec::new();
        let mut feats = Vec::new();
        for _ in 0..n_obj {
            votes.push(Vec3::from(UnitBall.sample(&mut rng)) * r);
            feats.extend((0..FEATS).map(|c| {
                if c == class {
                    rng.gen_range(0.6..1.0)
                } else {
                    rng.gen_range(0.0..0.2)
                }
            }));
        }
        for _ in 0..n_bg {
            votes.push(Vec3::from(UnitSphere.sample(&mut rng)) * r * rng.gen_range(4.0..8.0));
            feats.extend((0..FEATS).map(|_| rng.gen_range(0.0..0.3)));
        }
        let mut order: Vec<usize> = (0..votes.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let votes: Vec<Vec3> = order.iter().map(|&i| votes[i]).collect();
        let feats: Vec<f64> = order
            .iter()
            .flat_map(|&i| feats[i * FEATS..(i + 1) * FEATS].to_vec())
            .collect();
        let is_object: Vec<bool> = order.iter().map(|&i| i < n_obj).collect();

        let clusters = cluster_votes(&votes, 5, r).unwrap();
        let mut fw = Forward::new(&store, false);
        let x = fw
            .tape
            .constant(Tensor::new(vec![votes.len(), FEATS], feats).unwrap());
        let (_, preds) = classify_clusters(&mut fw, x, &clusters, &head).unwrap();
        let (sel, predicted) = select_prediction(&preds).unwrap();
        let members = &preds[sel].members;
        let pure = members.iter().filter(|&&m| is_object[m]).count() as f64 / members.len() as f64;
        purities.push(pure);
        assert_eq!(predicted, class, "seed {seed}");
    }
    let mean = purities.iter().sum::<f64>() / purities.len() as f64;
    assert!(mean >= 0.9, "mean purity {mean}");
    assert!(purities.iter().all(|&p| p >= 0.9), "{purities:?}");
}
