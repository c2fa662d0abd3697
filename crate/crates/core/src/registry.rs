//! Name-keyed registries for interchangeable strategies.
//!
//! Three families are selectable at runtime (config key / CLI flag):
//!
//! | family                  | key          | built-ins                          |
//! |-------------------------|--------------|------------------------------------|
//! | neighbor weighting      | `weighting`  | `distinct`, `shared`, `distance`   |
//! | memory token sampling   | `sampler`    | `uniform`, `stratified`            |
//! | tag scheme / evaluation | `scheme`     | `bio-span`, `per-token-role`       |

use crate::error::{Error, Result};

pub type Constructor<T> = fn() -> Box<T>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Constructor<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Later registrations under an existing name replace the earlier one.
    pub fn register(&mut self, name: &'static str, ctor: Constructor<T>) -> &mut Self {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = ctor;
        } else {
            self.entries.push((name, ctor));
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, ctor)| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
