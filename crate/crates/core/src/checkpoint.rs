//! Versioned checkpoint files.
//!
//! A checkpoint stores every trainable parameter as a named, shaped, flat
//! f64 vector grouped into four sections — actor, critic, heads, log_std —
//! plus the run configuration that produced it and the update counter.
//! Serialization is JSON: the shortest-round-trip float formatting used by
//! the JSON writer reproduces every finite f64 bit-exactly, which the
//! round-trip test pins down.

use crate::error::{Error, Result};
use crate::nets::{ActorNet, ContrastiveHeads, CriticNet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SCHEMA: &str = "checkpoint/v1";

/// A shaped parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorBlob {
    pub fn of(t: &Tensor) -> TensorBlob {
        TensorBlob {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&self.shape, self.data.clone())
    }
}

/// Named parameters of one network, keyed by their visitation names.
pub type Section = BTreeMap<String, TensorBlob>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    /// Optimizer update count at save time.
    pub update: u64,
    /// The full run configuration, stored opaquely so the harness layer
    /// owns its concrete type.
    pub config: serde_json::Value,
    pub actor: Section,
    pub critic: Section,
    pub heads: Section,
    pub log_std: TensorBlob,
}

fn collect(visit: impl FnOnce(&mut dyn FnMut(&str, &Tensor))) -> Section {
    let mut section = Section::new();
    let mut f = |name: &str, t: &Tensor| {
        section.insert(name.to_string(), TensorBlob::of(t));
    };
    visit(&mut f);
    section
}

/// Overwrite a network's parameters from a section, name by name, with
/// shape checks. Every visited parameter must be present, and unknown
/// extra names are rejected so a typo can't silently truncate a restore.
/// The nets' visitors are infallible, so the first error is remembered
/// and later visits skip their work.
fn restore_via(
    label: &str,
    section: &Section,
    visit_mut: impl FnOnce(&mut dyn FnMut(&str, &mut Tensor)),
) -> Result<()> {
    let mut first_err: Option<Error> = None;
    let mut seen = 0usize;
    visit_mut(&mut |name, t| {
        if first_err.is_some() {
            return;
        }
        match section.get(name) {
            None => {
                first_err = Some(Error::config(format!(
                    "checkpoint section {label} missing parameter {name}"
                )));
            }
            Some(blob) if blob.shape != t.shape() => {
                first_err = Some(Error::config(format!(
                    "checkpoint {label}.{name} has shape {:?}, expected {:?}",
                    blob.shape,
                    t.shape()
                )));
            }
            Some(blob) => match blob.to_tensor() {
                Ok(tensor) => {
                    *t = tensor;
                    seen += 1;
                }
                Err(e) => first_err = Some(e),
            },
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    if seen != section.len() {
        return Err(Error::config(format!(
            "checkpoint section {label} has {} parameters, network expects {seen}",
            section.len()
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture(
        actor: &ActorNet,
        critic: &CriticNet,
        heads: &ContrastiveHeads,
        update: u64,
        config: serde_json::Value,
    ) -> Checkpoint {
        Checkpoint {
            schema: SCHEMA.to_string(),
            update,
            config,
            actor: collect(|f| actor.visit(&mut |n, t| f(n, t))),
            critic: collect(|f| critic.visit(&mut |n, t| f(n, t))),
            heads: collect(|f| heads.visit(&mut |n, t| f(n, t))),
            log_std: TensorBlob::of(&actor.log_std),
        }
    }

    /// Load parameters back into networks of matching architecture.
    pub fn restore(
        &self,
        actor: &mut ActorNet,
        critic: &mut CriticNet,
        heads: &mut ContrastiveHeads,
    ) -> Result<()> {
        restore_via("actor", &self.actor, |f| actor.visit_mut(&mut |n, t| f(n, t)))?;
        restore_via("critic", &self.critic, |f| critic.visit_mut(&mut |n, t| f(n, t)))?;
        restore_via("heads", &self.heads, |f| heads.visit_mut(&mut |n, t| f(n, t)))?;
        if self.log_std.shape != actor.log_std.shape() {
            return Err(Error::config(format!(
                "checkpoint log_std has shape {:?}, expected {:?}",
                self.log_std.shape,
                actor.log_std.shape()
            )));
        }
        actor.log_std = self.log_std.to_tensor()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::format(path, format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("checkpoint parse failed: {e}")))?;
        if ck.schema != SCHEMA {
            return Err(Error::format(
                path,
                format!("checkpoint schema {:?}, expected {SCHEMA:?}", ck.schema),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetDims;
    use crate::rng::SeedStream;

    fn nets(seed_label: &str) -> (ActorNet, CriticNet, ContrastiveHeads) {
        let dims = NetDims::default();
        let mut rng = SeedStream::new(99).with_str(seed_label).rng();
        (
            ActorNet::init(dims, &mut rng).unwrap(),
            CriticNet::init(dims, &mut rng).unwrap(),
            ContrastiveHeads::init(dims, &mut rng).unwrap(),
        )
    }

    #[test]
    fn round_trip_through_disk_is_bit_exact() {
        let (actor, critic, heads) = nets("a");
        let cfg = serde_json::json!({"seed": 1, "mode": "full"});
        let ck = Checkpoint::capture(&actor, &critic, &heads, 42, cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.update, 42);
        let (mut a2, mut c2, mut h2) = nets("b");
        loaded.restore(&mut a2, &mut c2, &mut h2).unwrap();

        let recapture = Checkpoint::capture(&a2, &c2, &h2, 42, loaded.config.clone());
        // Bit-exact equality across every section, element by element.
        for (lhs, rhs) in [
            (&ck.actor, &recapture.actor),
            (&ck.critic, &recapture.critic),
            (&ck.heads, &recapture.heads),
        ] {
            assert_eq!(lhs.len(), rhs.len());
            for (name, blob) in lhs {
                let other = &rhs[name];
                assert_eq!(blob.shape, other.shape, "{name}");
                for (x, y) in blob.data.iter().zip(other.data.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "{name}");
                }
            }
        }
        for (x, y) in ck.log_std.data.iter().zip(recapture.log_std.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn wrong_schema_is_a_format_error() {
        let (actor, critic, heads) = nets("s");
        let mut ck = Checkpoint::capture(&actor, &critic, &heads, 0, serde_json::Value::Null);
        ck.schema = "checkpoint/v0".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        ck.save(&path).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let (actor, critic, heads) = nets("m");
        let ck = Checkpoint::capture(&actor, &critic, &heads, 0, serde_json::Value::Null);
        let small = NetDims {
            hidden: 64,
            ..NetDims::default()
        };
        let mut rng = SeedStream::new(1).with_str("small").rng();
        let mut a2 = ActorNet::init(small, &mut rng).unwrap();
        let mut c2 = CriticNet::init(small, &mut rng).unwrap();
        let mut h2 = ContrastiveHeads::init(small, &mut rng).unwrap();
        let err = ck.restore(&mut a2, &mut c2, &mut h2).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let (actor, critic, heads) = nets("x");
        let mut ck = Checkpoint::capture(&actor, &critic, &heads, 0, serde_json::Value::Null);
        ck.actor.remove("fc1.w");
        let (mut a2, mut c2, mut h2) = nets("y");
        let err = ck.restore(&mut a2, &mut c2, &mut h2).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn extra_parameter_is_rejected() {
        let (actor, critic, heads) = nets("e");
        let mut ck = Checkpoint::capture(&actor, &critic, &heads, 0, serde_json::Value::Null);
        ck.heads.insert(
            "stowaway".into(),
            TensorBlob {
                shape: vec![1],
                data: vec![0.0],
            },
        );
        let (mut a2, mut c2, mut h2) = nets("f");
        let err = ck.restore(&mut a2, &mut c2, &mut h2).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn file_carries_the_schema_marker() {
        let (actor, critic, heads) = nets("v");
        let ck = Checkpoint::capture(&actor, &critic, &heads, 7, serde_json::Value::Null);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("checkpoint/v1"));
    }
}
