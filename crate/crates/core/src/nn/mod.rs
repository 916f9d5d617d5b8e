//! Dense tensors, reverse-mode differentiation and the layers used by the
//! part encoder and heads.
//!
//! A [`Forward`] pass binds parameters from a [`ParamStore`] onto a fresh
//! [`Tape`]. Calling [`Forward::gradients`] on a scalar loss returns
//! [`ParamGrads`] ready for [`ParamStore::adam_step`]; batch-norm running
//! statistics are applied separately with [`ParamStore::apply_bn_updates`].

pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub(crate) use layers::he_init;
pub use layers::{BatchNorm, Linear, MaxSubLinear, Mlp2, PartEncoder};
pub use params::{AdamConfig, Param, ParamGrads, ParamId, ParamStore};
pub use tape::{softmax_rows, AggregationTerm, BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub layer: BatchNorm,
    pub stats: BatchStats,
}

/// One forward computation over parameters borrowed from a store.
pub struct Forward<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    pub training: bool,
    bound: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            training,
            bound: vec![None; store.len()],
            bn_updates: Vec::new(),
        }
    }

    /// The tape variable holding a parameter; bound once per pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.leaf(p.value.clone(), p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn record_bn(&mut self, layer: BatchNorm, stats: BatchStats) {
        self.bn_updates.push(BnUpdate { layer, stats });
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate> {
        self.bn_updates
    }

    /// Gradients of `loss` for every trainable parameter used in this pass.
    pub fn gradients(&self, loss: Var) -> ParamGrads {
        let g = self.tape.backward(loss);
        let mut out = ParamGrads::empty(self.store.len());
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if !self.store.get(ParamId(i)).trainable {
                    continue;
                }
                let grad = g.get(*v).map_or_else(
                    || vec![0.0; self.store.get(ParamId(i)).value.len()],
                    <[f64]>::to_vec,
                );
                out.set(ParamId(i), grad);
            }
        }
        out
    }
}

impl ParamStore {
    /// Folds batch statistics into the running mean and variance: a plain
    /// average over the first `1 / momentum` batches, an exponential moving
    /// average after that.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let count = &mut self.value_mut(u.layer.updates).data_mut()[0];
            *count += 1.0;
            let m = u.layer.momentum.max(1.0 / *count);
            for (r, s) in self
                .value_mut(u.layer.running_mean)
                .data_mut()
                .iter_mut()
                .zip(&u.stats.mean)
            {
                *r = (1.0 - m) * *r + m * s;
            }
            for (r, s) in self
                .value_mut(u.layer.running_var)
                .data_mut()
                .iter_mut()
                .zip(&u.stats.var)
            {
                *r = ((1.0 - m) * *r + m * s).max(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 3, 3, &mut rng).unwrap();
        *store.value_mut(lin.w) = Tensor::identity(3);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let mut fw = Forward::new(&store, false);
        let xv = fw.tape.constant(x.clone());
        let y = lin.forward(&mut fw, xv).unwrap();
        assert_eq!(fw.tape.value(y).data(), x.data());

        *store.value_mut(lin.b) = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut fw = Forward::new(&store, false);
        let z = fw.tape.constant(Tensor::zeros(&[2, 3]));
        let y = lin.forward(&mut fw, z).unwrap();
        assert_eq!(fw.tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn maxsub_special_cases() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = MaxSubLinear::new(&mut store, "m", 3, 5, &mut rng).unwrap();
        let plain = layer.linear;
        let x = rand_tensor(&mut rng, &[8, 3]);

        *store.value_mut(layer.lambda) = Tensor::scalar(0.0);
        let mut fw = Forward::new(&store, false);
        let xv = fw.tape.constant(x.clone());
        let a = layer.forward(&mut fw, xv, 4).unwrap();
        let b = plain.forward(&mut fw, xv).unwrap();
        assert_eq!(fw.tape.value(a), fw.tape.value(b));

        // A single point is its own maximum, so the affine sees zeros.
        *store.value_mut(layer.lambda) = Tensor::scalar(1.0);
        let mut fw = Forward::new(&store, false);
        let xv = fw.tape.constant(x);
        let a = layer.forward(&mut fw, xv, 1).unwrap();
        let zeros = fw.tape.constant(Tensor::zeros(&[8, 3]));
        let b = plain.forward(&mut fw, zeros).unwrap();
        assert_eq!(fw.tape.value(a), fw.tape.value(b));
    }

    #[test]
    fn maxsub_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = MaxSubLinear::new(&mut store, "m", 3, 4, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, &[6, 3]);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>())
            .unwrap();
        let mut fw = Forward::new(&store, false);
        let a = fw.tape.constant(x);
        let b = fw.tape.constant(xp);
        let ya = layer.forward(&mut fw, a, 6).unwrap();
        let yb = layer.forward(&mut fw, b, 6).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (u, v) in fw
                .tape
                .value(yb)
                .row(k)
                .iter()
                .zip(fw.tape.value(ya).row(i))
            {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_statistics_average_then_decay() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let update = |v: f64| BnUpdate {
            layer: bn,
            stats: BatchStats {
                mean: vec![v],
                var: vec![v],
            },
        };
        for v in [1.0, 2.0, 6.0] {
            store.apply_bn_updates(&[update(v)]);
        }
        assert!((store.value(bn.running_mean).data()[0] - 3.0).abs() < 1e-12);
        for _ in 0..7 {
            store.apply_bn_updates(&[update(3.0)]);
        }
        // Ten batches in, the plain average hands over to momentum 0.1.
        store.apply_bn_updates(&[update(13.0)]);
        assert!((store.value(bn.running_mean).data()[0] - 4.0).abs() < 1e-12);
        assert!((store.value(bn.running_var).data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_training_and_inference() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        *store.value_mut(bn.gamma) = Tensor::new(vec![3], vec![2.0, 0.5, 1.0]).unwrap();
        *store.value_mut(bn.beta) = Tensor::new(vec![3], vec![-1.0, 0.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[64, 3], |i| {
            5.0 + (i % 3) as f64 * rng.gen_range(-2.0..2.0)
        });
        let mut fw = Forward::new(&store, true);
        let xv = fw.tape.constant(x.clone());
        let y = bn.forward(&mut fw, xv).unwrap();
        let out = fw.tape.value(y).clone();
        let (gam, bet) = ([2.0, 0.5, 1.0], [-1.0, 0.0, 3.0]);
        for c in 0..3 {
            let col: Vec<f64> = (0..64).map(|r| out.row(r)[c]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!((mean - bet[c]).abs() < 1e-5);
            if c > 0 {
                assert!(
                    (var - gam[c] * gam[c]).abs() < 1e-4 * gam[c] * gam[c],
                    "{var}"
                );
            }
        }
        let updates = fw.into_bn_updates();
        assert_eq!(updates.len(), 1);
        store.apply_bn_updates(&updates);
        assert!(store.value(bn.running_var).data().iter().all(|v| *v >= 0.0));
        // The first batch sets the running statistics outright.
        assert!((store.value(bn.running_mean).data()[0] - 5.0).abs() < 1e-9);
        assert_eq!(store.value(bn.updates).data(), &[1.0]);

        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let mut fw = Forward::new(&store, false);
        let xv = fw.tape.constant(x.clone());
        let y = bn.forward(&mut fw, xv).unwrap();
        for (a, b) in fw.tape.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
        assert!(fw.bn_updates().is_empty());
    }

    fn encode(store: &ParamStore, enc: &PartEncoder, pts: Tensor, n: usize) -> Tensor {
        let mut fw = Forward::new(store, false);
        let x = fw.tape.constant(pts);
        let y = enc.forward(&mut fw, x, n).unwrap();
        fw.tape.value(y).clone()
    }

    #[test]
    fn encoder_invariances() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = PartEncoder::new(&mut store, "enc", &[8, 16, 12], &mut rng).unwrap();
        assert_eq!(enc.out_width(), 12);
        let part = rand_tensor(&mut rng, &[10, 3]);
        let twice = Tensor::new(vec![20, 3], [part.data(), part.data()].concat()).unwrap();
        let f = encode(&store, &enc, twice, 10);
        assert_eq!(f.shape(), &[2, 12]);
        assert_eq!(f.row(0), f.row(1));

        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut rng);
        let permuted = Tensor::from_rows(
            &perm
                .iter()
                .map(|&i| part.row(i).to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let a = encode(&store, &enc, part.clone(), 10);
        let b = encode(&store, &enc, permuted, 10);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }

        let zeros = encode(&store, &enc, Tensor::zeros(&[10, 3]), 10);
        let segment = Tensor::from_fn(&[10, 3], |i| {
            if i % 3 == 0 {
                (i / 3) as f64 / 9.0
            } else {
                0.0
            }
        });
        let seg = encode(&store, &enc, segment, 10);
        assert_ne!(zeros, seg);
    }

    #[test]
    fn gradients_cover_used_trainable_params() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = PartEncoder::new(&mut store, "enc", &[4], &mut rng).unwrap();
        let unused = Linear::new(&mut store, "unused", 2, 2, &mut rng).unwrap();
        let mut fw = Forward::new(&store, true);
        let x = fw.tape.constant(rand_tensor(&mut rng, &[12, 3]));
        let y = enc.forward(&mut fw, x, 6).unwrap();
        let loss = fw.tape.mean_row_sq_norm(y);
        let g = fw.gradients(loss);
        assert!(g.get(enc.layers[0].0.linear.w).is_some());
        assert!(g.get(enc.layers[0].1.running_mean).is_none());
        assert!(g.get(unused.w).is_none());
    }
}
