use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::tnsr::{self, Dtype};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone)]
struct Entry {
    tensor: Tensor,
    /// Buffers (batch-norm running statistics) are stored and shared like
    /// parameters but never optimized.
    trainable: bool,
}

/// Registry of named tensors. Names in a sharing group resolve to the same
/// tensor, so a write or an optimizer step through one alias is seen by all
/// of them and gradients from every alias accumulate in one place.
#[derive(Clone, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
    groups: Vec<Vec<String>>,
}

/// Values of every name in a store, detached from the live tensors.
pub type StateDict = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    groups: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
    trainable: bool,
    aliases: Vec<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter; the tensor is marked as requiring
    /// gradients.
    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        tensor.set_requires_grad(true)?;
        self.insert(name, tensor, true)
    }

    pub fn register_buffer(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        self.insert(name, tensor, false)
    }

    fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<Tensor> {
        if self.entries.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        self.entries.insert(name.to_string(), Entry { tensor: tensor.clone(), trainable });
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.entries.get(name).map(|e| e.tensor.clone()).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    /// Binds every name in `group` to the tensor currently held by the first
    /// name. Networks built before the call must be rebound.
    pub fn share(&mut self, group: &[&str]) -> Result<()> {
        let Some((&first, rest)) = group.split_first() else {
            return Ok(());
        };
        let canonical = self.entries.get(first).cloned().ok_or_else(|| Error::UnknownParameter(first.to_string()))?;
        for &name in rest {
            let entry = self.entries.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if entry.tensor.shape() != canonical.tensor.shape() {
                return Err(Error::contract(format!(
                    "cannot share `{first}` {:?} with `{name}` {:?}",
                    canonical.tensor.shape(),
                    entry.tensor.shape()
                )));
            }
            if entry.trainable != canonical.trainable {
                return Err(Error::contract(format!("cannot share parameter and buffer (`{first}`, `{name}`)")));
            }
        }
        for &name in rest {
            self.entries.insert(name.to_string(), canonical.clone());
        }
        let mut merged: Vec<String> = group.iter().map(|s| s.to_string()).collect();
        self.groups.retain(|g| {
            let overlaps = g.iter().any(|n| merged.contains(n));
            if overlaps {
                merged.extend(g.iter().cloned());
            }
            !overlaps
        });
        merged.sort();
        merged.dedup();
        self.groups.push(merged);
        Ok(())
    }

    /// Distinct trainable tensors, each listed once under its first name.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        self.unique(|_, e| e.trainable)
    }

    /// Distinct trainable tensors with at least one name under `prefix`.
    pub fn parameters_under(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let ids: HashSet<u64> =
            self.entries.iter().filter(|(n, e)| e.trainable && under(n, prefix)).map(|(_, e)| e.tensor.id()).collect();
        self.unique(|_, e| e.trainable && ids.contains(&e.tensor.id()))
    }

    fn unique(&self, keep: impl Fn(&str, &Entry) -> bool) -> Vec<(String, Tensor)> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|(n, e)| keep(n, e) && seen.insert(e.tensor.id()))
            .map(|(n, e)| (n.clone(), e.tensor.clone()))
            .collect()
    }

    /// Number of trainable scalars, counting shared tensors once.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn parameter_count_under(&self, prefix: &str) -> usize {
        self.parameters_under(prefix).iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.parameters() {
            t.zero_grad();
        }
    }

    /// Turns gradient tracking on or off for every parameter under `prefix`.
    pub fn set_trainable_under(&self, prefix: &str, flag: bool) -> Result<()> {
        for (_, t) in self.parameters_under(prefix) {
            t.set_requires_grad(flag)?;
        }
        Ok(())
    }

    pub fn state_dict(&self) -> StateDict {
        self.entries.iter().map(|(n, e)| (n.clone(), (e.tensor.shape().to_vec(), e.tensor.to_vec()))).collect()
    }

    /// Writes every value of `state` into the live tensors. Unknown names
    /// and shape mismatches are errors; names missing from `state` are left
    /// untouched.
    pub fn load_state_dict(&self, state: &StateDict) -> Result<()> {
        for (name, (shape, values)) in state {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "load_state_dict",
                    format!("`{name}` is {:?}, state has {shape:?}", t.shape()),
                ));
            }
            t.set_data(values)?;
        }
        Ok(())
    }

    /// Writes one `TNSR` file per distinct tensor plus `manifest.json`.
    /// Shared tensors are stored once and listed with their aliases.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut by_id: BTreeMap<u64, Vec<&String>> = BTreeMap::new();
        for (n, e) in &self.entries {
            by_id.entry(e.tensor.id()).or_default().push(n);
        }
        let mut tensors = Vec::new();
        for names in by_id.values() {
            let entry = &self.entries[names[0]];
            let file = format!("{}.tnsr", names[0]);
            tnsr::write_tensor(dir.join(&file), &entry.tensor, Dtype::F64)?;
            tensors.push(ManifestEntry {
                name: names[0].clone(),
                file,
                shape: entry.tensor.shape().to_vec(),
                trainable: entry.trainable,
                aliases: names[1..].iter().map(|s| s.to_string()).collect(),
            });
        }
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Manifest { tensors, groups: self.groups.clone() };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads values written by [`save`](Self::save) into a store with the
    /// same layout.
    pub fn load(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        for entry in &manifest.tensors {
            let (shape, data) = tnsr::read(dir.join(&entry.file))?;
            if shape != entry.shape {
                return Err(Error::Format(format!(
                    "{} has shape {shape:?}, manifest says {:?}",
                    entry.file, entry.shape
                )));
            }
            for name in std::iter::once(&entry.name).chain(&entry.aliases) {
                let t = self.get(name)?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("load", format!("`{name}` is {:?}, checkpoint has {shape:?}", t.shape())));
                }
                t.set_data(&data)?;
            }
        }
        Ok(())
    }

    /// Number of distinct tensors a checkpoint of this store contains.
    pub fn distinct_tensor_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.id()).collect::<HashSet<_>>().len()
    }
}

fn under(name: &str, prefix: &str) -> bool {
    name == prefix || (name.starts_with(prefix) && name[prefix.len()..].starts_with('.'))
}

/// Free-function form of [`ParameterStore::share`].
pub fn share_parameters(store: &mut ParameterStore, group: &[&str]) -> Result<()> {
    store.share(group)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register("dec_G.0.weight", Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        s.register("dec_AE.0.weight", Tensor::from_slice(&[2], &[5.0, 6.0]).unwrap()).unwrap();
        s.register("enc_G.0.weight", Tensor::zeros(&[3])).unwrap();
        s
    }

    #[test]
    fn write_through_one_alias_is_visible_through_the_other() {
        let mut s = store();
        s.share(&["dec_G.0.weight", "dec_AE.0.weight"]).unwrap();
        s.get("dec_G.0.weight").unwrap().set_data(&[9.0, 8.0]).unwrap();
        assert_eq!(s.get("dec_AE.0.weight").unwrap().to_vec(), vec![9.0, 8.0]);
        assert_eq!(s.parameter_count(), 5);
        assert_eq!(s.groups().len(), 1);
    }

    #[test]
    fn aliased_gradients_accumulate() {
        let mut s = store();
        s.share(&["dec_G.0.weight", "dec_AE.0.weight"]).unwrap();
        let a = s.get("dec_G.0.weight").unwrap();
        let b = s.get("dec_AE.0.weight").unwrap();
        let f = |w: &Tensor| w.square().sum();
        f(&a).add(&f(&b)).unwrap().backward().unwrap();
        let w = a.to_vec();
        let g = a.grad().unwrap();
        for (gi, wi) in g.iter().zip(&w) {
            assert_eq!(*gi, 2.0 * (2.0 * wi));
        }
    }

    #[test]
    fn shape_mismatch_and_unknown_names() {
        let mut s = store();
        assert!(matches!(s.share(&["dec_G.0.weight", "enc_G.0.weight"]), Err(Error::Contract(_))));
        assert!(matches!(s.share(&["dec_G.0.weight", "nope"]), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn prefixes_match_whole_segments() {
        let mut s = store();
        s.register("dec_GX.0.weight", Tensor::zeros(&[4])).unwrap();
        assert_eq!(s.parameter_count_under("dec_G"), 2);
        assert_eq!(s.parameter_count_under("dec"), 0);
    }

    #[test]
    fn checkpoint_stores_shared_tensors_once() {
        let mut s = store();
        s.share(&["dec_G.0.weight", "dec_AE.0.weight"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let files = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 3);

        let mut fresh = store();
        fresh.share(&["dec_G.0.weight", "dec_AE.0.weight"]).unwrap();
        fresh.load(dir.path()).unwrap();
        assert_eq!(fresh.state_dict(), s.state_dict());
    }
}
