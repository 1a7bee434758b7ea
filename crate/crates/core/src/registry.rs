//! Name-keyed registries of interchangeable strategies.
//!
//! Residual extractors, perturbations and upsamplers are all selected at
//! runtime from short spec strings such as `gaussian:1.0` or `jpeg:85`.
//! Each family keeps a [`Registry`] mapping the leading name to a factory
//! that parses the remaining arguments into a boxed trait object.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Builds a strategy from the argument list that followed its name.
pub type Factory<T> = fn(&[&str]) -> Result<Box<T>>;

struct Entry<T: ?Sized> {
    usage: &'static str,
    factory: Factory<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, usage: &'static str, factory: Factory<T>) {
        self.entries.insert(name, Entry { usage, factory });
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    /// `(name, usage)` pairs, sorted by name.
    pub fn usage(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.entries.iter().map(|(k, e)| (*k, e.usage))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, args: &[&str]) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(entry) => (entry.factory)(args),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }

    /// Parses `name[:arg[:arg...]]` and builds the strategy.
    pub fn parse(&self, spec: &str) -> Result<Box<T>> {
        let mut parts = spec.trim().split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        self.build(name, &args)
    }
}

/// Parses the `idx`-th argument, falling back to `default` when absent.
pub(crate) fn arg<V: std::str::FromStr>(
    args: &[&str],
    idx: usize,
    what: &'static str,
    default: Option<V>,
) -> Result<V> {
    match args.get(idx) {
        Some(raw) => raw.trim().parse().map_err(|_| Error::Parse {
            what,
            reason: format!("cannot parse `{raw}`"),
        }),
        None => default.ok_or_else(|| Error::Parse {
            what,
            reason: "missing argument".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn area(&self) -> f64;
    }

    struct Square(f64);

    impl Shape for Square {
        fn area(&self) -> f64 {
            self.0 * self.0
        }
    }

    fn square(args: &[&str]) -> Result<Box<dyn Shape>> {
        Ok(Box::new(Square(arg(args, 0, "side", Some(1.0))?)))
    }

    #[test]
    fn parse_dispatches_by_name() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", "square[:side]", square);
        assert_eq!(reg.parse("square:3").unwrap().area(), 9.0);
        assert_eq!(reg.parse("square").unwrap().area(), 1.0);
        assert!(matches!(
            reg.parse("circle:1"),
            Err(Error::UnknownStrategy { .. })
        ));
        assert!(matches!(reg.parse("square:x"), Err(Error::Parse { .. })));
    }
}
