//! Name-keyed registries of strategy objects.
//!
//! Each family of interchangeable algorithms (VI solvers, patch shapes) lives behind a trait and
//! is looked up by name at runtime, so configs and the CLI can select variants without code
//! changes.

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: Vec::new() }
    }

    pub fn register(&mut self, name: &'static str, entry: Box<T>) -> Result<()> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::invalid(format!("duplicate {} '{name}'", self.kind)));
        }
        self.entries.push((name, entry));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| e.as_ref())
            .ok_or_else(|| {
                Error::Unsupported(format!(
                    "unknown {} '{name}' (available: {})",
                    self.kind,
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_duplicates() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("hello", Box::new(Hello)).unwrap();
        assert_eq!(r.get("hello").unwrap().greet(), "hello");
        assert!(r.register("hello", Box::new(Hello)).is_err());
        let err = r.get("nope").err().unwrap().to_string();
        assert!(err.contains("available: hello"), "{err}");
    }
}
