//! Named parameters, Adam state and the text checkpoint container.
//!
//! Checkpoint layout, one record per line:
//!
//! ```text
//! partvote-checkpoint 1
//! meta <key> <value...>
//! step <adam step count>
//! param <name> <trainable 0|1> <ndim> <dim>...
//! value <v>...
//! adam_m <v>...
//! adam_v <v>...
//! end
//! ```
//!
//! Values are written in shortest round-trip decimal form, so loading a saved
//! store reproduces every bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "partvote-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Running statistics and frozen heads are stored but never stepped.
    pub trainable: bool,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter gradients, indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn set(&mut self, id: ParamId, g: Vec<f64>) {
        self.grads[id.0] = Some(g);
    }

    /// Elementwise sum; a gradient missing on one side is taken from the other.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, b)| *a += b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    step: u64,
    /// Free-form provenance carried through checkpoints.
    pub meta: BTreeMap<String, String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "bad parameter name {name:?}"
            )));
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.clone(),
            value,
            trainable,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// One Adam update of every trainable parameter. Each trainable
    /// parameter must have a gradient.
    pub fn adam_step(&mut self, grads: &ParamGrads, cfg: &AdamConfig) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "{} gradients for {} parameters",
                    grads.grads.len(),
                    self.params.len()
                ),
            });
        }
        for (p, g) in self.params.iter().zip(&grads.grads) {
            if p.trainable && g.is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            let (true, Some(g)) = (p.trainable, g) else {
                continue;
            };
            let data = p.value.data_mut();
            for i in 0..data.len() {
                p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g[i];
                p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = p.adam_m[i] / c1;
                let vhat = p.adam_v[i] / c2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let _ = writeln!(out, "step {}", self.step);
        for p in &self.params {
            let _ = write!(
                out,
                "param {} {} {}",
                p.name,
                u8::from(p.trainable),
                p.value.shape().len()
            );
            for d in p.value.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            for (tag, vals) in [
                ("value", p.value.data()),
                ("adam_m", &p.adam_m[..]),
                ("adam_v", &p.adam_v[..]),
            ] {
                out.push_str(tag);
                for v in vals {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == MAGIC => {}
            _ => return Err(Error::Checkpoint(format!("missing header {MAGIC:?}"))),
        }
        let mut store = ParamStore::new();
        let floats =
            |line: usize, l: Option<(usize, &str)>, tag: &str, n: usize| -> Result<Vec<f64>> {
                let (ln, l) = l.ok_or_else(|| bad(line, format!("missing {tag} record")))?;
                let mut toks = l.split_whitespace();
                if toks.next() != Some(tag) {
                    return Err(bad(ln, format!("expected {tag}")));
                }
                let vals = toks
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| bad(ln, format!("bad float {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != n {
                    return Err(bad(
                        ln,
                        format!("{tag} has {} values, expected {n}", vals.len()),
                    ));
                }
                Ok(vals)
            };
        let mut ended = false;
        while let Some((ln, line)) = lines.next() {
            let mut toks = line.split_whitespace();
            match toks.next() {
                None => continue,
                Some("meta") => {
                    let key = toks
                        .next()
                        .ok_or_else(|| bad(ln, "meta without key".into()))?;
                    let rest =
                        line.trim_start()["meta".len()..].trim_start()[key.len()..].trim_start();
                    store.meta.insert(key.to_string(), rest.to_string());
                }
                Some("step") => {
                    store.step = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad(ln, "bad step".into()))?;
                }
                Some("param") => {
                    let t: Vec<&str> = toks.collect();
                    if t.len() < 3 {
                        return Err(bad(ln, "truncated param record".into()));
                    }
                    let trainable = match t[1] {
                        "0" => false,
                        "1" => true,
                        o => return Err(bad(ln, format!("bad trainable flag {o:?}"))),
                    };
                    let ndim: usize = t[2].parse().map_err(|_| bad(ln, "bad ndim".into()))?;
                    if t.len() != 3 + ndim {
                        return Err(bad(ln, "dimension count mismatch".into()));
                    }
                    let shape = t[3..]
                        .iter()
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| bad(ln, format!("bad dim {d:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let n = shape.iter().product();
                    let value = floats(ln, lines.next(), "value", n)?;
                    let m = floats(ln, lines.next(), "adam_m", n)?;
                    let v = floats(ln, lines.next(), "adam_v", n)?;
                    let id = store.add(t[0], Tensor::new(shape, value)?, trainable)?;
                    store.params[id.0].adam_m = m;
                    store.params[id.0].adam_v = v;
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                Some(other) => return Err(bad(ln, format!("unknown record {other:?}"))),
            }
        }
        if !ended {
            return Err(Error::Checkpoint(
                "truncated checkpoint: no end record".into(),
            ));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Copies values (not optimizer state) from `other`, matching by name.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other.value(other.id(&p.name)?);
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value), true).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store_with(0.7);
        let mut g = ParamGrads::empty(1);
        g.set(id, vec![0.0]);
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).item(), 0.7);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = store_with(1.0);
        let mut g = ParamGrads::empty(1);
        g.set(id, vec![1.0]);
        s.adam_step(
            &g,
            &AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((s.value(id).item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = ParamStore::new();
        let id = s
            .add("w", Tensor::new(vec![2], vec![0.6, 0.8]).unwrap(), true)
            .unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..200 {
            let mut g = ParamGrads::empty(1);
            g.set(id, s.value(id).data().iter().map(|w| 2.0 * w).collect());
            s.adam_step(&g, &cfg).unwrap();
        }
        let norm = s.value(id).data().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "{norm}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = store_with(1.0);
        s.add("frozen", Tensor::scalar(2.0), false).unwrap();
        let err = s
            .adam_step(&ParamGrads::empty(2), &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingGrad(n) if n == "w"));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        let a = s
            .add(
                "enc.w",
                Tensor::new(
                    vec![2, 3],
                    vec![0.1, -1e-300, 3.0, f64::MIN_POSITIVE, 1.0 / 3.0, -0.0],
                )
                .unwrap(),
                true,
            )
            .unwrap();
        s.add("bn.mean", Tensor::full(&[3], 2.5), false).unwrap();
        s.meta
            .insert("config".into(), "layer=skpconv pooling=votemaxpool".into());
        let mut g = ParamGrads::empty(2);
        g.set(a, vec![0.3, -0.2, 0.1, 1e-9, 7.0, -3.0]);
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        let back = ParamStore::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        for (x, y) in back.value(a).data().iter().zip(s.value(a).data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn rejects_corrupt_checkpoints() {
        assert!(ParamStore::from_text("nope\n").is_err());
        assert!(ParamStore::from_text("partvote-checkpoint 1\nstep 0\n").is_err());
        let text =
            "partvote-checkpoint 1\nstep 0\nparam w 1 1 2\nvalue 1\nadam_m 0 0\nadam_v 0 0\nend\n";
        assert!(ParamStore::from_text(text).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = store_with(1.0);
        assert!(s.add("w", Tensor::scalar(0.0), true).is_err());
    }
}
