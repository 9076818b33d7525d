//! Name-keyed strategy tables.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Strategies of one kind, looked up by name at runtime. Registration order
/// is preserved for listing.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(String, Arc<T>)>,
}

impl<T: ?Sized> Clone for Registry<T> {
    fn clone(&self) -> Self {
        Registry {
            kind: self.kind,
            entries: self.entries.clone(),
        }
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds or replaces the strategy registered under `name`.
    pub fn register(&mut self, name: &str, item: Arc<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = item,
            None => self.entries.push((name.to_string(), item)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| Arc::clone(v))
            .ok_or_else(|| Error::Unknown {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Named: Send + Sync {
        fn id(&self) -> u8;
    }
    struct A(u8);
    impl Named for A {
        fn id(&self) -> u8 {
            self.0
        }
    }

    #[test]
    fn lookup_replace_and_unknown() {
        let mut r: Registry<dyn Named> = Registry::new("thing");
        r.register("x", Arc::new(A(1))).register("y", Arc::new(A(2)));
        assert_eq!(r.get("y").unwrap().id(), 2);
        r.register("x", Arc::new(A(9)));
        assert_eq!(r.get("x").unwrap().id(), 9);
        assert_eq!(r.names(), ["x", "y"]);
        let e = r.get("z").err().unwrap();
        assert!(matches!(e, Error::Unknown { kind: "thing", .. }));
    }
}
